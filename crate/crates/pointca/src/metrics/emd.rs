//! Earth mover's distance via optimal assignment.
//!
//! The exact route solves the dense assignment problem with the Hungarian
//! potentials method (cubic), the approximate route with a forward auction
//! under epsilon scaling. Both operate on the same Euclidean cost matrix;
//! the auction's result is always a valid bijection, so it upper-bounds the
//! exact optimum.

use crate::error::{Error, Result};
use crate::geometry::{dist, Point3};

/// Exact solver refuses clouds past this size; use [`emd_approx`] instead.
///
/// [`emd_approx`]: crate::metrics::emd_approx
pub const EXACT_EMD_LIMIT: usize = 512;

/// Dense row-major cost matrix.
struct CostMatrix {
    n: usize,
    costs: Vec<f64>,
}

impl CostMatrix {
    fn from_clouds(a: &[Point3], b: &[Point3]) -> Self {
        let n = a.len();
        let mut costs = Vec::with_capacity(n * n);
        for pa in a {
            for pb in b {
                costs.push(dist(pa, pb));
            }
        }
        CostMatrix { n, costs }
    }

    #[inline]
    fn get(&self, row: usize, col: usize) -> f64 {
        self.costs[row * self.n + col]
    }
}

fn check_sizes(a: &[Point3], b: &[Point3]) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    if a.is_empty() {
        return Err(Error::EmptyCloud);
    }
    Ok(a.len())
}

/// Minimum over bijections of the mean pairwise Euclidean distance,
/// computed exactly. Requires equal sizes and at most
/// [`EXACT_EMD_LIMIT`] points.
pub fn emd_exact_points(a: &[Point3], b: &[Point3]) -> Result<f64> {
    let n = check_sizes(a, b)?;
    if n > EXACT_EMD_LIMIT {
        return Err(Error::TooLargeForExact {
            size: n,
            limit: EXACT_EMD_LIMIT,
        });
    }
    let cost = CostMatrix::from_clouds(a, b);
    let assignment = hungarian(&cost);
    Ok(mean_assignment_cost(&cost, &assignment))
}

/// Upper bound on [`emd_exact_points`] from an auction assignment with
/// `iterations` epsilon-scaling phases. More phases tighten the bound.
pub fn emd_approx_points(a: &[Point3], b: &[Point3], iterations: usize) -> Result<f64> {
    let n = check_sizes(a, b)?;
    if n == 1 {
        return Ok(dist(&a[0], &b[0]));
    }
    let cost = CostMatrix::from_clouds(a, b);
    let assignment = auction(&cost, iterations.max(1));
    Ok(mean_assignment_cost(&cost, &assignment))
}

fn mean_assignment_cost(cost: &CostMatrix, assignment: &[usize]) -> f64 {
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost.get(i, j))
        .sum();
    total / cost.n as f64
}

/// Hungarian algorithm with row/column potentials, O(n^3).
/// Returns the assigned column for each row.
fn hungarian(cost: &CostMatrix) -> Vec<usize> {
    let n = cost.n;
    // 1-based arrays with a 0 sentinel column, per the classic formulation.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut col_to_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];

    for row in 1..=n {
        col_to_row[0] = row;
        let mut j0 = 0usize;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = col_to_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = cost.get(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < min_to[j] {
                    min_to[j] = reduced;
                    way[j] = j0;
                }
                if min_to[j] < delta {
                    delta = min_to[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[col_to_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if col_to_row[j0] == 0 {
                break;
            }
        }
        // Augment along the stored path.
        loop {
            let j1 = way[j0];
            col_to_row[j0] = col_to_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if col_to_row[j] > 0 {
            assignment[col_to_row[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Forward auction with epsilon scaling. Each phase re-runs the auction at a
/// smaller epsilon while keeping learned prices; the final assignment's total
/// cost is within `n * eps_final` of optimal.
fn auction(cost: &CostMatrix, phases: usize) -> Vec<usize> {
    let n = cost.n;
    let max_abs = cost.costs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if max_abs == 0.0 {
        return (0..n).collect();
    }

    let mut prices = vec![0.0f64; n];
    let mut eps = max_abs / 4.0;
    let mut bidder_to_object: Vec<Option<usize>> = vec![None; n];

    for _ in 0..phases {
        let mut object_to_bidder: Vec<Option<usize>> = vec![None; n];
        bidder_to_object.fill(None);
        let mut pending: Vec<usize> = (0..n).rev().collect();

        while let Some(bidder) = pending.pop() {
            // Benefit of object j to this bidder is -cost - price.
            let mut best_j = 0usize;
            let mut best = f64::NEG_INFINITY;
            let mut second = f64::NEG_INFINITY;
            for j in 0..n {
                let value = -cost.get(bidder, j) - prices[j];
                if value > best {
                    second = best;
                    best = value;
                    best_j = j;
                } else if value > second {
                    second = value;
                }
            }
            prices[best_j] += best - second + eps;
            if let Some(evicted) = object_to_bidder[best_j] {
                bidder_to_object[evicted] = None;
                pending.push(evicted);
            }
            object_to_bidder[best_j] = Some(bidder);
            bidder_to_object[bidder] = Some(best_j);
        }
        eps /= 4.0;
    }

    bidder_to_object
        .into_iter()
        .map(|o| o.expect("auction phase leaves every bidder assigned"))
        .collect()
}
