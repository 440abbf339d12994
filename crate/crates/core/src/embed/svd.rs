//! Truncated-SVD projection, the linear contrast to t-SNE.

use nalgebra::DMatrix;

use super::Embedding;
use crate::corpus::SparseVector;
use crate::error::{Error, Result};

/// Projects the (uncentered) feature matrix onto its top `dim` right
/// singular vectors, i.e. returns the first `dim` columns of `U * S`.
///
/// Column signs are fixed so that each column's largest-magnitude entry is
/// positive.
pub fn svd_compress(points: &[SparseVector], dim: usize) -> Result<Embedding> {
    let rows = points.len();
    let cols = points.first().map_or(0, |p| p.dim);
    if dim == 0 || dim > rows.min(cols) {
        return Err(Error::invalid(format!(
            "cannot keep {dim} components of a {rows}x{cols} matrix"
        )));
    }
    if points.iter().any(|p| p.dim != cols) {
        return Err(Error::Shape("feature vectors differ in dimension".into()));
    }
    let mut x = DMatrix::<f64>::zeros(rows, cols);
    for (r, p) in points.iter().enumerate() {
        for &(c, v) in &p.entries {
            x[(r, c)] = v;
        }
    }
    let svd = x.svd(true, false);
    let u = svd.u.expect("requested U");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut coords = vec![0.0; rows * dim];
    for (k, &col) in order.iter().take(dim).enumerate() {
        let s = svd.singular_values[col];
        let pivot = (0..rows)
            .max_by(|&a, &b| u[(a, col)].abs().total_cmp(&u[(b, col)].abs()))
            .unwrap_or(0);
        let sign = if u[(pivot, col)] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..rows {
            coords[r * dim + k] = sign * u[(r, col)] * s;
        }
    }
    Embedding::new(dim, coords)
}
