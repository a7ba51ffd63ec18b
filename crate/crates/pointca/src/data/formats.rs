//! ASCII point-cloud file formats.
//!
//! XYZ: one `x y z` triple per line, `#` starts a comment. The writer
//! records label and kind as leading comments and the reader restores
//! them. PLY: ASCII 1.0 with a vertex element carrying float x, y, z;
//! binary PLY is rejected.

use crate::error::{Error, Result};
use crate::geometry::{CloudKind, Point3, PointCloud};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

fn kind_str(kind: CloudKind) -> &'static str {
    match kind {
        CloudKind::Partial => "partial",
        CloudKind::Complete => "complete",
        CloudKind::Adversarial => "adversarial",
        CloudKind::Reconstructed => "reconstructed",
    }
}

fn kind_from_str(s: &str) -> Option<CloudKind> {
    match s {
        "partial" => Some(CloudKind::Partial),
        "complete" => Some(CloudKind::Complete),
        "adversarial" => Some(CloudKind::Adversarial),
        "reconstructed" => Some(CloudKind::Reconstructed),
        _ => None,
    }
}

/// Writes a cloud as XYZ text with nine decimal places per coordinate.
pub fn write_xyz(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "# kind: {}", kind_str(cloud.kind()))?;
    if let Some(label) = cloud.label() {
        writeln!(w, "# label: {label}")?;
    }
    for p in cloud.points() {
        writeln!(w, "{:.9} {:.9} {:.9}", p[0], p[1], p[2])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an XYZ file written by [`write_xyz`] or any plain `x y z` text.
pub fn read_xyz(path: impl AsRef<Path>) -> Result<PointCloud> {
    let reader = BufReader::new(File::open(path)?);
    let mut points: Vec<Point3> = Vec::new();
    let mut label: Option<String> = None;
    let mut kind = CloudKind::Partial;

    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = lineno + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(comment) = trimmed.strip_prefix('#') {
            let comment = comment.trim();
            if let Some(l) = comment.strip_prefix("label:") {
                label = Some(l.trim().to_string());
            } else if let Some(k) = comment.strip_prefix("kind:") {
                if let Some(parsed) = kind_from_str(k.trim()) {
                    kind = parsed;
                }
            }
            continue;
        }
        let fields: Vec<&str> = trimmed.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 3 coordinates, found {}", fields.len()),
            });
        }
        let mut p = [0.0f64; 3];
        for (i, f) in fields.iter().enumerate() {
            p[i] = f.parse().map_err(|e| Error::Parse {
                line: lineno,
                msg: format!("bad coordinate {f:?}: {e}"),
            })?;
        }
        points.push(p);
    }

    if points.is_empty() {
        return Err(Error::Parse {
            line: 1,
            msg: "file contains no points".into(),
        });
    }
    let mut cloud = PointCloud::new(points, kind)?;
    if let Some(label) = label {
        cloud = cloud.with_label(label);
    }
    Ok(cloud)
}

/// Writes a cloud as ASCII PLY 1.0 with float x, y, z vertex properties.
pub fn write_ply(path: impl AsRef<Path>, cloud: &PointCloud) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "ply")?;
    writeln!(w, "format ascii 1.0")?;
    writeln!(w, "comment kind: {}", kind_str(cloud.kind()))?;
    if let Some(label) = cloud.label() {
        writeln!(w, "comment label: {label}")?;
    }
    writeln!(w, "element vertex {}", cloud.len())?;
    writeln!(w, "property float x")?;
    writeln!(w, "property float y")?;
    writeln!(w, "property float z")?;
    writeln!(w, "end_header")?;
    for p in cloud.points() {
        writeln!(w, "{:.9} {:.9} {:.9}", p[0], p[1], p[2])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an ASCII PLY file with a float x/y/z vertex element. Binary PLY
/// variants are rejected with a parse error naming the offending line.
pub fn read_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines().enumerate();

    let mut expect = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((n, Ok(line))) => Ok((n + 1, line)),
            Some((n, Err(e))) => Err(Error::Parse {
                line: n + 1,
                msg: e.to_string(),
            }),
            None => Err(Error::Parse {
                line: 1,
                msg: format!("unexpected end of file, expected {what}"),
            }),
        }
    };

    let (line_no, magic) = expect("ply magic")?;
    if magic.trim() != "ply" {
        return Err(Error::Parse {
            line: line_no,
            msg: "not a PLY file".into(),
        });
    }
    let (line_no, format) = expect("format line")?;
    let format = format.trim().to_string();
    if format != "format ascii 1.0" {
        return Err(Error::Parse {
            line: line_no,
            msg: format!("only ASCII PLY 1.0 is supported, got {format:?}"),
        });
    }

    let mut vertex_count: Option<usize> = None;
    let mut label = None;
    let mut kind = CloudKind::Partial;
    loop {
        let (line_no, line) = expect("end_header")?;
        let line = line.trim().to_string();
        if line == "end_header" {
            break;
        }
        if let Some(rest) = line.strip_prefix("comment") {
            let rest = rest.trim();
            if let Some(l) = rest.strip_prefix("label:") {
                label = Some(l.trim().to_string());
            } else if let Some(k) = rest.strip_prefix("kind:") {
                if let Some(parsed) = kind_from_str(k.trim()) {
                    kind = parsed;
                }
            }
            continue;
        }
        if let Some(rest) = line.strip_prefix("element vertex") {
            vertex_count = Some(rest.trim().parse().map_err(|e| Error::Parse {
                line: line_no,
                msg: format!("bad vertex count: {e}"),
            })?);
            continue;
        }
        if line.starts_with("element") {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("unsupported element {line:?}"),
            });
        }
        if line.starts_with("property") {
            continue;
        }
        return Err(Error::Parse {
            line: line_no,
            msg: format!("unexpected header line {line:?}"),
        });
    }

    let count = vertex_count.ok_or(Error::Parse {
        line: 1,
        msg: "header missing element vertex".into(),
    })?;
    if count == 0 {
        return Err(Error::Parse {
            line: 1,
            msg: "vertex element is empty".into(),
        });
    }

    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let (line_no, line) = expect("vertex line")?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() < 3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 3 coordinates, found {}", fields.len()),
            });
        }
        let mut p = [0.0f64; 3];
        for (i, f) in fields[..3].iter().enumerate() {
            p[i] = f.parse().map_err(|e| Error::Parse {
                line: line_no,
                msg: format!("bad coordinate {f:?}: {e}"),
            })?;
        }
        points.push(p);
    }

    let mut cloud = PointCloud::new(points, kind)?;
    if let Some(label) = label {
        cloud = cloud.with_label(label);
    }
    Ok(cloud)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample_cloud() -> PointCloud {
        PointCloud::new(
            vec![
                [0.123456789, -0.987654321, 0.5],
                [1.0, -1.0, 0.000000001],
                [0.333333333, 0.666666666, -0.25],
            ],
            CloudKind::Adversarial,
        )
        .unwrap()
        .with_label("sphere")
    }

    #[test]
    fn xyz_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.xyz");
        let cloud = sample_cloud();
        write_xyz(&path, &cloud).unwrap();
        let restored = read_xyz(&path).unwrap();
        assert_eq!(restored.len(), cloud.len());
        assert_eq!(restored.kind(), CloudKind::Adversarial);
        assert_eq!(restored.label(), Some("sphere"));
        for (a, b) in cloud.points().iter().zip(restored.points()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn xyz_parse_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.xyz");
        std::fs::write(&path, "0 0 0\n1 2\n").unwrap();
        match read_xyz(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        std::fs::write(&path, "").unwrap();
        assert!(matches!(read_xyz(&path), Err(Error::Parse { .. })));
        std::fs::write(&path, "0 0 zebra\n").unwrap();
        assert!(matches!(read_xyz(&path), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn ply_round_trip_and_binary_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cloud.ply");
        let cloud = sample_cloud();
        write_ply(&path, &cloud).unwrap();
        let restored = read_ply(&path).unwrap();
        assert_eq!(restored.label(), Some("sphere"));
        for (a, b) in cloud.points().iter().zip(restored.points()) {
            for c in 0..3 {
                assert!((a[c] - b[c]).abs() <= 1e-9);
            }
        }

        std::fs::write(
            &path,
            "ply\nformat binary_little_endian 1.0\nelement vertex 1\nend_header\n",
        )
        .unwrap();
        match read_ply(&path) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("ASCII"), "{msg}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    proptest! {
        #[test]
        fn xyz_round_trip_accuracy(seed in 0u64..40) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let points: Vec<[f64; 3]> = (0..12)
                .map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
                .collect();
            let cloud = PointCloud::new(points, CloudKind::Partial).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("prop.xyz");
            write_xyz(&path, &cloud).unwrap();
            let restored = read_xyz(&path).unwrap();
            for (a, b) in cloud.points().iter().zip(restored.points()) {
                for c in 0..3 {
                    prop_assert!((a[c] - b[c]).abs() <= 1e-9);
                }
            }
        }
    }
}
