//! Deterministic 2D projection. PCA sits behind [`Projector`] so a
//! neighbourhood-preserving method can replace it.

use serde::{Deserialize, Serialize};

use super::{EmbeddingSet, InsightError};
use crate::ids::ContributionId;

pub const PCA_METHOD_TAG: &str = "pca-jacobi@1";

const JACOBI_MAX_SWEEPS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThemeMap {
    pub ids: Vec<ContributionId>,
    pub coords: Vec<[f64; 2]>,
    pub method_tag: String,
    /// Variance along each axis (covariance eigenvalues).
    pub explained_variance: [f64; 2],
    /// All points coincide; coordinates are zero.
    pub zero_variance: bool,
}

pub trait Projector: Send + Sync {
    fn method_tag(&self) -> &str;
    fn project(&self, set: &EmbeddingSet) -> Result<ThemeMap, InsightError>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Pca;

impl Projector for Pca {
    fn method_tag(&self) -> &str {
        PCA_METHOD_TAG
    }

    fn project(&self, set: &EmbeddingSet) -> Result<ThemeMap, InsightError> {
        let p = pca_2d(&set.vectors)?;
        Ok(ThemeMap {
            ids: set.ids.clone(),
            coords: p.coords,
            method_tag: PCA_METHOD_TAG.into(),
            explained_variance: p.explained_variance,
            zero_variance: p.zero_variance,
        })
    }
}

pub fn project_2d(set: &EmbeddingSet) -> Result<ThemeMap, InsightError> {
    Pca.project(set)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Pca2d {
    pub coords: Vec<[f64; 2]>,
    /// Unit loading vectors, sign-normalised.
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
    pub zero_variance: bool,
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in descending order and the matching eigenvectors as
/// rows.
pub fn symmetric_eigen(a: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut a: Vec<Vec<f64>> = a.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |j| *j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off.sqrt() <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let akp = row[p];
                    let akq = row[q];
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                #[allow(clippy::needless_range_loop)]
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]).then(i.cmp(&j)));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| v.iter().map(|row| row[i]).collect()).collect();
    (values, vectors)
}

/// Flips `v` so its largest-magnitude entry (first on ties) is positive.
fn normalise_sign(v: &mut [f64]) {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
}

fn unit(v: Vec<f64>) -> Option<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    (n > 0.0 && n.is_finite()).then(|| v.into_iter().map(|x| x / n).collect())
}

/// Mean-centred PCA onto the top two covariance eigenvectors. With fewer
/// points than dimensions the n×n Gram matrix is decomposed instead.
pub fn pca_2d(x: &[Vec<f64>]) -> Result<Pca2d, InsightError> {
    let n = x.len();
    if n < 3 {
        return Err(InsightError::TooFewPoints { n, need: 3 });
    }
    let d = x[0].len();
    if d < 2 || x.iter().any(|r| r.len() != d) {
        return Err(InsightError::InvalidInput("projection needs rows of equal dimension ≥ 2".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(InsightError::InvalidInput("non-finite coordinate".into()));
    }
    let mean: Vec<f64> = (0..d).map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let xc: Vec<Vec<f64>> = x.iter().map(|r| r.iter().zip(&mean).map(|(a, b)| a - b).collect()).collect();
    let denom = (n - 1) as f64;

    if xc.iter().flatten().all(|v| *v == 0.0) {
        let mut e0 = vec![0.0; d];
        e0[0] = 1.0;
        let mut e1 = vec![0.0; d];
        e1[1] = 1.0;
        return Ok(Pca2d { coords: vec![[0.0, 0.0]; n], components: [e0, e1], explained_variance: [0.0, 0.0], zero_variance: true });
    }

    let (values, mut components): (Vec<f64>, Vec<Vec<f64>>) = if n > d {
        let cov: Vec<Vec<f64>> = (0..d)
            .map(|i| (0..d).map(|j| xc.iter().map(|r| r[i] * r[j]).sum::<f64>() / denom).collect())
            .collect();
        let (vals, vecs) = symmetric_eigen(&cov);
        (vals[..2].to_vec(), vecs[..2].to_vec())
    } else {
        let gram: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| xc[i].iter().zip(&xc[j]).map(|(a, b)| a * b).sum::<f64>() / denom).collect())
            .collect();
        let (vals, vecs) = symmetric_eigen(&gram);
        let mut comps = Vec::with_capacity(2);
        for w in vecs.iter().take(2) {
            // loading = Xcᵀ w, normalised; a null direction gets an arbitrary
            // unit vector orthogonal to the first
            let loading: Vec<f64> = (0..d).map(|j| xc.iter().zip(w).map(|(r, wi)| r[j] * wi).sum()).collect();
            let comp = unit(loading).unwrap_or_else(|| orthogonal_unit(comps.first(), d));
            comps.push(comp);
        }
        (vals[..2].to_vec(), comps)
    };
    for c in components.iter_mut() {
        normalise_sign(c);
    }
    let coords = xc
        .iter()
        .map(|r| {
            let a = r.iter().zip(&components[0]).map(|(p, q)| p * q).sum();
            let b = r.iter().zip(&components[1]).map(|(p, q)| p * q).sum();
            [a, b]
        })
        .collect();
    let mut it = components.into_iter();
    Ok(Pca2d {
        coords,
        components: [it.next().expect("two"), it.next().expect("two")],
        explained_variance: [values[0].max(0.0), values[1].max(0.0)],
        zero_variance: false,
    })
}

fn orthogonal_unit(first: Option<&Vec<f64>>, d: usize) -> Vec<f64> {
    for axis in 0..d {
        let mut e = vec![0.0; d];
        e[axis] = 1.0;
        if let Some(f) = first {
            let dot = f[axis];
            for (x, y) in e.iter_mut().zip(f) {
                *x -= dot * y;
            }
        }
        if let Some(u) = unit(e) {
            return u;
        }
    }
    unreachable!("d ≥ 2 always admits an orthogonal axis")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn line_y_equals_x() {
        let x: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64, i as f64]).collect();
        let p = pca_2d(&x).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert_abs_diff_eq!(p.components[0][0], h, epsilon = 1e-12);
        assert_abs_diff_eq!(p.components[0][1], h, epsilon = 1e-12);
        assert_abs_diff_eq!(p.explained_variance[1], 0.0, epsilon = 1e-9);
        for c in &p.coords {
            assert_abs_diff_eq!(c[1], 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn identical_points_flagged() {
        let x = vec![vec![1.0, 2.0, 3.0]; 4];
        let p = pca_2d(&x).unwrap();
        assert!(p.zero_variance);
        assert!(p.coords.iter().all(|c| *c == [0.0, 0.0]));
    }

    #[test]
    fn too_few_points() {
        assert_eq!(pca_2d(&[vec![0.0, 1.0], vec![1.0, 0.0]]), Err(InsightError::TooFewPoints { n: 2, need: 3 }));
    }

    #[test]
    fn jacobi_diagonalises() {
        let a = vec![vec![4.0, 1.0, 2.0], vec![1.0, 3.0, 0.5], vec![2.0, 0.5, 5.0]];
        let (vals, vecs) = symmetric_eigen(&a);
        for (l, v) in vals.iter().zip(&vecs) {
            for i in 0..3 {
                let av: f64 = (0..3).map(|j| a[i][j] * v[j]).sum();
                assert_abs_diff_eq!(av, l * v[i], epsilon = 1e-12);
            }
        }
        assert!(vals.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn gram_route_for_wide_data() {
        let x: Vec<Vec<f64>> = (0..4).map(|i| (0..10).map(|j| ((i * 10 + j) as f64 * 0.7).sin()).collect()).collect();
        let p = pca_2d(&x).unwrap();
        let n = p.components[0].iter().map(|v| v * v).sum::<f64>();
        assert_abs_diff_eq!(n, 1.0, epsilon = 1e-12);
        let dot: f64 = p.components[0].iter().zip(&p.components[1]).map(|(a, b)| a * b).sum();
        assert_abs_diff_eq!(dot, 0.0, epsilon = 1e-9);
    }
}
