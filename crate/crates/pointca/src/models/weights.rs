//! Versioned binary weight files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   4 bytes  "PCAW"
//! version u32      format version, currently 1
//! kind    u8       0 = completion model, 1 = classifier
//! arch    4 x u32  completion: enc_h1, enc_h2, dec_hidden, n_out
//!                  classifier: enc_h1, enc_h2, head_hidden, class_count
//! trained u8       0 or 1
//! count   u32      number of tensors
//! tensor  repeated rank u32, dims rank x u32, values numel x f64
//! ```
//!
//! Values round-trip bit-for-bit, so a reloaded model reproduces forward
//! outputs exactly.

use super::{Classifier, CompletionModel, ModelArch};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"PCAW";
const VERSION: u32 = 1;
const KIND_COMPLETION: u8 = 0;
const KIND_CLASSIFIER: u8 = 1;

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_u8(r: &mut impl Read) -> Result<u8> {
    let mut buf = [0u8; 1];
    r.read_exact(&mut buf)?;
    Ok(buf[0])
}

fn write_tensor(w: &mut impl Write, t: &Tensor) -> Result<()> {
    write_u32(w, t.shape().len() as u32)?;
    for &d in t.shape() {
        write_u32(w, d as u32)?;
    }
    for &v in t.values() {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_tensor(r: &mut impl Read) -> Result<Tensor> {
    let rank = read_u32(r)? as usize;
    if rank > 4 {
        return Err(Error::VersionMismatch(format!(
            "implausible tensor rank {rank}"
        )));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(read_u32(r)? as usize);
    }
    let numel: usize = shape.iter().product();
    let mut values = Vec::with_capacity(numel);
    let mut buf = [0u8; 8];
    for _ in 0..numel {
        r.read_exact(&mut buf)?;
        values.push(f64::from_le_bytes(buf));
    }
    Tensor::new(shape, values)
}

fn write_header(w: &mut impl Write, kind: u8, arch: [u32; 4], trained: bool, count: u32) -> Result<()> {
    w.write_all(MAGIC)?;
    write_u32(w, VERSION)?;
    w.write_all(&[kind])?;
    for v in arch {
        write_u32(w, v)?;
    }
    w.write_all(&[u8::from(trained)])?;
    write_u32(w, count)?;
    Ok(())
}

fn read_header(r: &mut impl Read, expected_kind: u8) -> Result<([u32; 4], bool, u32)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::VersionMismatch(format!(
            "bad magic bytes {magic:?}"
        )));
    }
    let version = read_u32(r)?;
    if version != VERSION {
        return Err(Error::VersionMismatch(format!(
            "unsupported version {version}, expected {VERSION}"
        )));
    }
    let kind = read_u8(r)?;
    if kind != expected_kind {
        return Err(Error::VersionMismatch(format!(
            "wrong model kind {kind}, expected {expected_kind}"
        )));
    }
    let arch = [read_u32(r)?, read_u32(r)?, read_u32(r)?, read_u32(r)?];
    let trained = read_u8(r)? != 0;
    let count = read_u32(r)?;
    Ok((arch, trained, count))
}

impl CompletionModel {
    /// Writes the model to a versioned binary weight file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let arch = self.arch();
        let params = self.params();
        write_header(
            &mut w,
            KIND_COMPLETION,
            [
                arch.enc_hidden[0] as u32,
                arch.enc_hidden[1] as u32,
                arch.dec_hidden as u32,
                arch.n_out as u32,
            ],
            self.is_trained(),
            params.len() as u32,
        )?;
        for t in params {
            write_tensor(&mut w, t)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a model saved with [`CompletionModel::save`]; forward outputs
    /// match the saved model bit-for-bit.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let (arch, trained, count) = read_header(&mut r, KIND_COMPLETION)?;
        let arch = ModelArch {
            enc_hidden: [arch[0] as usize, arch[1] as usize],
            dec_hidden: arch[2] as usize,
            n_out: arch[3] as usize,
        };
        let mut model = CompletionModel::new(arch, 0);
        let expected = model.params().len();
        if count as usize != expected {
            return Err(Error::VersionMismatch(format!(
                "expected {expected} tensors, file has {count}"
            )));
        }
        for param in model.params_mut() {
            let tensor = read_tensor(&mut r)?;
            if tensor.shape() != param.shape() {
                return Err(Error::VersionMismatch(format!(
                    "tensor shape {:?} does not match architecture {:?}",
                    tensor.shape(),
                    param.shape()
                )));
            }
            *param = tensor;
        }
        if trained {
            model.mark_trained();
        }
        Ok(model)
    }
}

impl Classifier {
    /// Writes the classifier to a versioned binary weight file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let params = self.params();
        write_header(
            &mut w,
            KIND_CLASSIFIER,
            [
                self.enc_hidden()[0] as u32,
                self.enc_hidden()[1] as u32,
                Classifier::HEAD_HIDDEN as u32,
                self.class_count() as u32,
            ],
            self.is_trained(),
            params.len() as u32,
        )?;
        for t in params {
            write_tensor(&mut w, t)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Loads a classifier saved with [`Classifier::save`].
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let (arch, trained, count) = read_header(&mut r, KIND_CLASSIFIER)?;
        if arch[2] as usize != Classifier::HEAD_HIDDEN {
            return Err(Error::VersionMismatch(format!(
                "unsupported head width {}",
                arch[2]
            )));
        }
        let mut model = Classifier::new([arch[0] as usize, arch[1] as usize], arch[3] as usize, 0);
        let expected = model.params().len();
        if count as usize != expected {
            return Err(Error::VersionMismatch(format!(
                "expected {expected} tensors, file has {count}"
            )));
        }
        for param in model.params_mut() {
            let tensor = read_tensor(&mut r)?;
            if tensor.shape() != param.shape() {
                return Err(Error::VersionMismatch(format!(
                    "tensor shape {:?} does not match architecture {:?}",
                    tensor.shape(),
                    param.shape()
                )));
            }
            *param = tensor;
        }
        if trained {
            model.mark_trained();
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CloudKind, PointCloud};
    use crate::models::ModelArch;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    [
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ]
                })
                .collect(),
            CloudKind::Partial,
        )
        .unwrap()
    }

    #[test]
    fn completion_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pcw");
        let arch = ModelArch {
            enc_hidden: [10, 14],
            dec_hidden: 20,
            n_out: 16,
        };
        let mut model = CompletionModel::new(arch, 99);
        model.mark_trained();
        model.save(&path).unwrap();
        let loaded = CompletionModel::load(&path).unwrap();
        assert!(loaded.is_trained());
        assert_eq!(model, loaded);

        let cloud = random_cloud(20, 4);
        let a = model.complete(&cloud).unwrap();
        let b = loaded.complete(&cloud).unwrap();
        assert_eq!(a.points(), b.points());
    }

    #[test]
    fn classifier_round_trip_and_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clf.pcw");
        let clf = Classifier::new([10, 14], 4, 3);
        clf.save(&path).unwrap();
        let loaded = Classifier::load(&path).unwrap();
        assert_eq!(clf, loaded);

        std::fs::write(&path, b"NOPE keep going").unwrap();
        assert!(matches!(
            Classifier::load(&path),
            Err(Error::VersionMismatch(_))
        ));
    }

    #[test]
    fn kind_confusion_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.pcw");
        let model = CompletionModel::new(
            ModelArch {
                enc_hidden: [8, 10],
                dec_hidden: 12,
                n_out: 8,
            },
            1,
        );
        model.save(&path).unwrap();
        assert!(matches!(
            Classifier::load(&path),
            Err(Error::VersionMismatch(_))
        ));
    }
}
