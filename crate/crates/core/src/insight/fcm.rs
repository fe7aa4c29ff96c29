//! Fuzzy c-means.
//!
//! Objective `J = Σ_i Σ_j u_ij^m ‖x_i − c_j‖²`, alternating the closed-form
//! membership and centroid updates from a k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::InsightError;
use crate::text;

pub const MIN_K: usize = 2;
pub const MAX_K: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FcmParams {
    pub k: usize,
    pub m: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl FcmParams {
    pub fn new(k: usize, seed: u64) -> Self {
        Self { k, m: 2.0, tol: 1e-5, max_iter: 300, seed }
    }

    pub fn validate(&self) -> Result<(), InsightError> {
        check_k(self.k)?;
        if !(self.m.is_finite() && self.m > 1.0) {
            return Err(InsightError::InvalidParameter(format!("fuzzifier m must be > 1, got {}", self.m)));
        }
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(InsightError::InvalidParameter(format!("tol must be > 0, got {}", self.tol)));
        }
        if self.max_iter == 0 {
            return Err(InsightError::InvalidParameter("max_iter must be ≥ 1".into()));
        }
        Ok(())
    }
}

pub fn check_k(k: usize) -> Result<(), InsightError> {
    if !(MIN_K..=MAX_K).contains(&k) {
        return Err(InsightError::InvalidK(k));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub m: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub centroids: Vec<Vec<f64>>,
    /// n×k, rows sum to 1.
    pub membership: Vec<Vec<f64>>,
    /// J after initialisation, then after every iteration.
    pub objective_trace: Vec<f64>,
    pub seed: u64,
    pub iterations: usize,
    pub converged: bool,
}

impl ClusterModel {
    pub fn n(&self) -> usize {
        self.membership.len()
    }

    pub fn fingerprint(&self) -> String {
        text::short_digest(&serde_json::to_vec(self).expect("model serializes"))
    }
}

/// State handed to an observer after initialisation (`iteration == 0`) and
/// after every update.
pub struct FcmStep<'a> {
    pub iteration: usize,
    pub centroids: &'a [Vec<f64>],
    pub membership: &'a [Vec<f64>],
    pub objective: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_points(x: &[Vec<f64>], k: usize) -> Result<usize, InsightError> {
    if x.len() < k {
        return Err(InsightError::TooFewPoints { n: x.len(), need: k });
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(InsightError::InvalidInput("rows must share a nonzero dimension".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(InsightError::InvalidInput("non-finite coordinate".into()));
    }
    Ok(d)
}

/// k-means++ seeding: first centre uniform, then proportional to squared
/// distance to the nearest chosen centre. When every point already sits on a
/// centre the draw falls back to uniform.
pub fn kmeanspp_seeds(x: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<Vec<f64>>, InsightError> {
    check_k(k)?;
    check_points(x, k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = x.len();
    let mut centres = vec![x[rng.random_range(0..n)].clone()];
    let mut nearest: Vec<f64> = x.iter().map(|p| sq_dist(p, &centres[0])).collect();
    while centres.len() < k {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, w) in nearest.iter().enumerate() {
                acc += w;
                if acc > target && *w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            // rounding can leave `chosen` on a zero-weight tail point
            if nearest[chosen] == 0.0 {
                chosen = nearest.iter().rposition(|w| *w > 0.0).expect("total > 0");
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let c = x[pick].clone();
        for (p, w) in x.iter().zip(nearest.iter_mut()) {
            *w = w.min(sq_dist(p, &c));
        }
        centres.push(c);
    }
    Ok(centres)
}

/// Membership row for one point. Written as `w_l = (d²_min / d²_l)^(1/(m−1))`
/// normalised, which equals the textbook ratio form but cannot overflow.
/// Points on one or more centroids share their membership equally among
/// those centroids.
fn membership_row(point: &[f64], centroids: &[Vec<f64>], m: f64, out: &mut [f64]) {
    let d2: Vec<f64> = centroids.iter().map(|c| sq_dist(point, c)).collect();
    let zeros = d2.iter().filter(|v| **v == 0.0).count();
    if zeros > 0 {
        let share = 1.0 / zeros as f64;
        for (u, d) in out.iter_mut().zip(&d2) {
            *u = if *d == 0.0 { share } else { 0.0 };
        }
        return;
    }
    let min = d2.iter().copied().fold(f64::INFINITY, f64::min);
    let p = 1.0 / (m - 1.0);
    let mut sum = 0.0;
    for (u, d) in out.iter_mut().zip(&d2) {
        *u = (min / d).powf(p);
        sum += *u;
    }
    for u in out.iter_mut() {
        *u /= sum;
    }
}

fn update_membership(x: &[Vec<f64>], centroids: &[Vec<f64>], m: f64, u: &mut [Vec<f64>]) {
    for (p, row) in x.iter().zip(u.iter_mut()) {
        membership_row(p, centroids, m, row);
    }
}

/// Weighted means. A cluster with zero total weight keeps its old centre.
fn update_centroids(x: &[Vec<f64>], u: &[Vec<f64>], m: f64, centroids: &mut [Vec<f64>]) {
    let d = x[0].len();
    for (j, c) in centroids.iter_mut().enumerate() {
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        for (p, row) in x.iter().zip(u) {
            let w = row[j].powf(m);
            if w == 0.0 {
                continue;
            }
            den += w;
            for (a, v) in num.iter_mut().zip(p) {
                *a += w * v;
            }
        }
        if den > 0.0 {
            for (cv, a) in c.iter_mut().zip(num) {
                *cv = a / den;
            }
        }
    }
}

pub fn objective(x: &[Vec<f64>], centroids: &[Vec<f64>], u: &[Vec<f64>], m: f64) -> f64 {
    x.iter()
        .zip(u)
        .map(|(p, row)| row.iter().zip(centroids).map(|(uij, c)| uij.powf(m) * sq_dist(p, c)).sum::<f64>())
        .sum()
}

pub fn fcm_fit(x: &[Vec<f64>], params: &FcmParams) -> Result<ClusterModel, InsightError> {
    fcm_fit_observed(x, params, &mut |_| {})
}

pub fn fcm_fit_observed(
    x: &[Vec<f64>],
    params: &FcmParams,
    observer: &mut dyn FnMut(&FcmStep),
) -> Result<ClusterModel, InsightError> {
    params.validate()?;
    check_points(x, params.k)?;
    let FcmParams { k, m, tol, max_iter, seed } = *params;

    let mut centroids = kmeanspp_seeds(x, k, seed)?;
    let mut u = vec![vec![0.0; k]; x.len()];
    update_membership(x, &centroids, m, &mut u);
    let mut trace = vec![objective(x, &centroids, &u, m)];
    observer(&FcmStep { iteration: 0, centroids: &centroids, membership: &u, objective: trace[0] });

    let mut prev = u.clone();
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        update_centroids(x, &u, m, &mut centroids);
        std::mem::swap(&mut prev, &mut u);
        update_membership(x, &centroids, m, &mut u);
        let j = objective(x, &centroids, &u, m);
        trace.push(j);
        observer(&FcmStep { iteration: iterations, centroids: &centroids, membership: &u, objective: j });
        let delta = u
            .iter()
            .zip(&prev)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).abs()))
            .fold(0.0, f64::max);
        if delta < tol {
            converged = true;
            break;
        }
    }
    Ok(ClusterModel { k, m, tol, max_iter, centroids, membership: u, objective_trace: trace, seed, iterations, converged })
}

/// Argmax per row, ties to the lowest index.
pub fn hard_assign(model: &ClusterModel) -> Vec<usize> {
    model.membership.iter().map(|row| argmax(row)).collect()
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = j;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn four_points() -> Vec<Vec<f64>> {
        vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![10.0, 0.0], vec![10.0, 1.0]]
    }

    #[test]
    fn symmetric_blobs() {
        let model = fcm_fit(&four_points(), &FcmParams::new(2, 7)).unwrap();
        assert!(model.converged);
        let mut cs = model.centroids.clone();
        cs.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_relative_eq!(cs[0][0], 0.0, epsilon = 1e-3);
        assert_relative_eq!(cs[0][1], 0.5, epsilon = 1e-3);
        assert_relative_eq!(cs[1][0], 10.0, epsilon = 1e-3);
        assert_relative_eq!(cs[1][1], 0.5, epsilon = 1e-3);
        let h = hard_assign(&model);
        assert_eq!(h[0], h[1]);
        assert_eq!(h[2], h[3]);
        assert_ne!(h[0], h[2]);
        // analytic fixed point: 1 / (1 + 0.25 / 100.25)
        assert_relative_eq!(model.membership[0][h[0]], 1.0 / (1.0 + 0.25 / 100.25), epsilon = 1e-4);
    }

    #[test]
    fn identical_points_share_equally() {
        let x = vec![vec![1.0, 2.0], vec![1.0, 2.0]];
        let model = fcm_fit(&x, &FcmParams::new(2, 3)).unwrap();
        assert!(model.converged);
        for row in &model.membership {
            assert_eq!(row, &vec![0.5, 0.5]);
        }
        assert_eq!(model.objective_trace.last(), Some(&0.0));
    }

    #[test]
    fn single_coincident_centroid_takes_all() {
        let mut row = [0.0; 3];
        membership_row(&[1.0, 1.0], &[vec![0.0, 0.0], vec![1.0, 1.0], vec![5.0, 5.0]], 2.0, &mut row);
        assert_eq!(row, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn parameter_validation() {
        let x = four_points();
        assert_eq!(fcm_fit(&x, &FcmParams::new(1, 0)), Err(InsightError::InvalidK(1)));
        assert_eq!(fcm_fit(&x, &FcmParams::new(9, 0)), Err(InsightError::InvalidK(9)));
        assert_eq!(fcm_fit(&x[..2], &FcmParams::new(3, 0)), Err(InsightError::TooFewPoints { n: 2, need: 3 }));
        assert!(fcm_fit(&x, &FcmParams { m: 1.0, ..FcmParams::new(2, 0) }).is_err());
        assert!(fcm_fit(&x, &FcmParams { tol: 0.0, ..FcmParams::new(2, 0) }).is_err());
    }

    #[test]
    fn hard_assign_ties_go_low() {
        assert_eq!(argmax(&[0.2, 0.5, 0.3]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
    }

    #[test]
    fn deterministic_per_seed() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()]).collect();
        let a = fcm_fit(&x, &FcmParams::new(4, 11)).unwrap();
        let b = fcm_fit(&x, &FcmParams::new(4, 11)).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        assert_eq!(a.fingerprint(), b.fingerprint());
    }

    #[test]
    fn max_iter_limits_and_flags() {
        let x: Vec<Vec<f64>> = (0..30).map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.91).cos()]).collect();
        let model = fcm_fit(&x, &FcmParams { max_iter: 1, tol: 1e-15, ..FcmParams::new(3, 1) }).unwrap();
        assert_eq!(model.iterations, 1);
        assert!(!model.converged);
        assert_eq!(model.objective_trace.len(), 2);
    }

    #[test]
    fn seeds_are_distinct_points_when_possible() {
        let seeds = kmeanspp_seeds(&four_points(), 4, 5).unwrap();
        let mut s = seeds.clone();
        s.sort_by(|a, b| a.partial_cmp(b).unwrap());
        s.dedup();
        assert_eq!(s.len(), 4);
    }
}
