//! PCA baseline through the D × D Gram matrix.

use nalgebra::{DMatrix, SymmetricEigen};

use super::{DayMatrix, Embedding};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PcaResult {
    pub embedding: Embedding,
    /// Variance along each retained component (denominator D − 1).
    pub explained_variance: Vec<f64>,
}

/// Projects mean-centered rows onto the top `dims` principal components.
///
/// Component signs are fixed so that each score vector's largest-magnitude
/// entry is positive.
pub fn pca_embed(days: &DayMatrix, dims: usize) -> Result<PcaResult> {
    let (n, w) = (days.n_days(), days.width());
    if dims == 0 || dims > n.min(w) {
        return Err(Error::Config(format!(
            "cannot keep {dims} components of a {n} x {w} matrix"
        )));
    }
    let mut mean = vec![0.0; w];
    for d in 0..n {
        for (m, v) in mean.iter_mut().zip(days.row(d)) {
            *m += v / n as f64;
        }
    }
    let x = DMatrix::from_fn(n, w, |d, c| days.row(d)[c] - mean[c]);
    let gram = &x * x.transpose();
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let denom = (n.max(2) - 1) as f64;
    let mut points = vec![0.0; n * dims];
    let mut explained_variance = Vec::with_capacity(dims);
    for (k, &idx) in order.iter().take(dims).enumerate() {
        let lambda = eig.eigenvalues[idx].max(0.0);
        explained_variance.push(lambda / denom);
        let u = eig.eigenvectors.column(idx);
        let pivot = (0..n)
            .max_by(|&a, &b| u[a].abs().total_cmp(&u[b].abs()))
            .unwrap_or(0);
        let sign = if u[pivot] < 0.0 { -1.0 } else { 1.0 };
        for d in 0..n {
            points[d * dims + k] = sign * u[d] * lambda.sqrt();
        }
    }
    Ok(PcaResult {
        embedding: Embedding { dims, points },
        explained_variance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;

    fn dm(rows: usize, cols: usize, values: Vec<f64>) -> DayMatrix {
        let dates = (0..rows)
            .map(|d| NaiveDate::from_ymd_opt(2024, 1, 1).unwrap() + chrono::Days::new(d as u64))
            .collect();
        DayMatrix::new(dates, 1, cols, values).unwrap()
    }

    #[test]
    fn rank_one_second_component_zero() {
        let base = [1.0, 2.0, 3.0];
        let values: Vec<f64> = (0..5)
            .flat_map(|k| base.iter().map(move |v| v * k as f64))
            .collect();
        let r = pca_embed(&dm(5, 3, values), 2).unwrap();
        assert!(r.explained_variance[0] > 1.0);
        assert!(r.explained_variance[1].abs() < 1e-10);
    }

    #[test]
    fn lossless_in_two_dimensions() {
        let values = vec![0.0, 1.0, 2.0, -1.0, 3.0, 0.5, -2.0, 4.0];
        let days = dm(4, 2, values.clone());
        let r = pca_embed(&days, 2).unwrap();
        // Pairwise distances survive the rotation.
        for i in 0..4 {
            for j in 0..4 {
                let orig =
                    (values[2 * i] - values[2 * j]).hypot(values[2 * i + 1] - values[2 * j + 1]);
                let p = r.embedding.point(i);
                let q = r.embedding.point(j);
                let emb = (p[0] - q[0]).hypot(p[1] - q[1]);
                assert!((orig - emb).abs() < 1e-9);
            }
        }
        assert!(pca_embed(&days, 3).is_err());
    }
}
