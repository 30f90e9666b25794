use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{dist2, ClusterLabels, PointCloud};
use crate::error::{Error, Result};
use crate::rng::{stream, Domain};

const MAX_ITERS: usize = 500;
const REL_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmFit {
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 2]>,
    /// Row-major `[sxx, sxy, syy]`.
    pub covariances: Vec<[f64; 3]>,
    pub labels: ClusterLabels,
    /// Per-point responsibilities, `n × k`.
    pub responsibilities: Vec<Vec<f64>>,
    /// Weighted log-likelihood after every E-step.
    pub log_likelihood: Vec<f64>,
}

fn log_density(x: [f64; 2], mean: [f64; 2], cov: [f64; 3]) -> f64 {
    let [a, b, c] = cov;
    let det = a * c - b * b;
    let (dx, dy) = (x[0] - mean[0], x[1] - mean[1]);
    let q = (c * dx * dx - 2.0 * b * dx * dy + a * dy * dy) / det;
    -0.5 * q - 0.5 * det.ln() - std::f64::consts::LN_2 - std::f64::consts::PI.ln()
}

/// Weighted mean and MLE covariance.
fn moments(p: &[[f64; 2]], w: &[f64]) -> ([f64; 2], [f64; 3], f64) {
    let total: f64 = w.iter().sum();
    let mut m = [0.0; 2];
    for (x, &wi) in p.iter().zip(w) {
        m[0] += wi * x[0];
        m[1] += wi * x[1];
    }
    m = [m[0] / total, m[1] / total];
    let mut s = [0.0; 3];
    for (x, &wi) in p.iter().zip(w) {
        let (dx, dy) = (x[0] - m[0], x[1] - m[1]);
        s[0] += wi * dx * dx;
        s[1] += wi * dx * dy;
        s[2] += wi * dy * dy;
    }
    (m, [s[0] / total, s[1] / total, s[2] / total], total)
}

/// k-means++ style seeding: the first mean uniformly, each next one with
/// probability proportional to the weighted squared distance to the nearest
/// chosen mean.
fn seed_means(p: &[[f64; 2]], w: &[f64], k: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = stream(seed, Domain::Mixture, 0);
    let mut means = vec![p[rng.random_range(0..p.len())]];
    while means.len() < k {
        let d: Vec<f64> = p
            .iter()
            .zip(w)
            .map(|(&x, &wi)| wi * means.iter().map(|&m| dist2(x, m)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            d.iter()
                .position(|&di| {
                    u -= di;
                    u < 0.0
                })
                .unwrap_or(p.len() - 1)
        } else {
            rng.random_range(0..p.len())
        };
        means.push(p[pick]);
    }
    means
}

/// Expectation-maximization fit of a `k`-component bivariate mixture.
///
/// Point intensities, when present, act as sample weights. Every covariance
/// update adds `λI` with `λ = 1e-6 · trace(Σ_data) / 2`. Iterates until the
/// relative log-likelihood change drops below 1e-8 or 500 E-steps.
pub fn gmm_fit(cloud: &PointCloud, k: usize, seed: u64) -> Result<GmmFit> {
    let p = &cloud.points;
    let n = p.len();
    if k == 0 || n < 10 * k {
        return Err(Error::BadParams(format!("a {k}-component mixture needs at least {} points, got {n}", 10 * k)));
    }
    let w: Vec<f64> = match &cloud.intensity {
        Some(v) => v.clone(),
        None => vec![1.0; n],
    };
    if w.iter().any(|&v| v < 0.0) || !(w.iter().sum::<f64>() > 0.0) {
        return Err(Error::BadParams("mixture weights must be nonnegative with a positive sum".into()));
    }
    let (_, data_cov, total) = moments(p, &w);
    let lambda = 1e-6 * (data_cov[0] + data_cov[2]) / 2.0;

    let mut means = seed_means(p, &w, k, seed);
    let mut covs = vec![[data_cov[0] + lambda, data_cov[1], data_cov[2] + lambda]; k];
    let mut mix = vec![1.0 / k as f64; k];
    let mut resp = vec![vec![0.0; k]; n];
    let mut trace = Vec::new();
    let mut logp = vec![0.0; k];

    for _ in 0..MAX_ITERS {
        // E-step.
        for (j, cov) in covs.iter().enumerate() {
            let det = cov[0] * cov[2] - cov[1] * cov[1];
            if !(det > 0.0) || !det.is_finite() {
                return Err(Error::SingularComponent(j));
            }
        }
        let mut ll = 0.0;
        for ((x, r), &wi) in p.iter().zip(resp.iter_mut()).zip(&w) {
            for j in 0..k {
                logp[j] = mix[j].ln() + log_density(*x, means[j], covs[j]);
            }
            let top = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logp.iter().map(|l| (l - top).exp()).sum();
            let lse = top + z.ln();
            for j in 0..k {
                r[j] = (logp[j] - lse).exp();
            }
            ll += wi * lse;
        }
        let done = trace
            .last()
            .is_some_and(|&prev: &f64| (ll - prev).abs() <= REL_TOL * prev.abs().max(f64::MIN_POSITIVE));
        trace.push(ll);
        if done {
            break;
        }

        // M-step.
        for j in 0..k {
            let wj: Vec<f64> = resp.iter().zip(&w).map(|(r, &wi)| r[j] * wi).collect();
            let nj: f64 = wj.iter().sum();
            if !(nj > 0.0) {
                return Err(Error::SingularComponent(j));
            }
            let (m, s, _) = moments(p, &wj);
            means[j] = m;
            covs[j] = [s[0] + lambda, s[1], s[2] + lambda];
            mix[j] = nj / total;
        }
    }

    let raw: Vec<i64> = resp
        .iter()
        .map(|r| {
            (0..k)
                .max_by(|&a, &b| r[a].total_cmp(&r[b]).then(b.cmp(&a)))
                .expect("k >= 1") as i64
        })
        .collect();
    // Component order is kept; `k` counts only nonempty labels.
    let labels = ClusterLabels {
        k: {
            let mut seen = vec![false; k];
            raw.iter().for_each(|&l| seen[l as usize] = true);
            seen.iter().filter(|&&s| s).count()
        },
        labels: raw.iter().map(|&l| l as i32).collect(),
    };
    Ok(GmmFit {
        weights: mix,
        means,
        covariances: covs,
        labels,
        responsibilities: resp,
        log_likelihood: trace,
    })
}
