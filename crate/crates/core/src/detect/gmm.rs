//! Diagonal-covariance Gaussian mixture fitted by EM on standardized data.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_width, DetectError, Scorer};
use crate::data::{Dataset, Standardizer};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmParams {
    pub k: usize,
    /// Floor applied to every variance after each M-step.
    pub reg: f64,
    pub max_iter: usize,
    /// Stop once the mean per-row log-likelihood improves by less than this.
    pub tol: f64,
}

impl Default for GmmParams {
    fn default() -> Self {
        GmmParams {
            k: 4,
            reg: 1e-6,
            max_iter: 200,
            tol: 1e-4,
        }
    }
}

/// Per-iteration diagnostics of one EM run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GmmTrace {
    /// Mean per-row log-likelihood of the parameters after each M-step.
    pub log_likelihood: Vec<f64>,
    pub weight_sums: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Diagonal of each component's covariance.
    pub variances: Vec<Vec<f64>>,
    pub reg: f64,
    pub standardizer: Standardizer,
    pub trace: GmmTrace,
}

impl Gmm {
    pub fn fit(train: &Dataset, params: &GmmParams, seed: u64) -> Result<Self, DetectError> {
        let k = params.k;
        let n = train.n_rows();
        if k == 0 {
            return Err(DetectError::Param("k must be positive".into()));
        }
        if k > n {
            return Err(DetectError::TooFewRows { k, n });
        }
        if params.reg.is_nan() || params.reg <= 0.0 {
            return Err(DetectError::Param("reg must be positive".into()));
        }
        let standardizer = Standardizer::fit(train);
        let z: Vec<Vec<f64>> = train.rows().iter().map(|r| standardizer.transform(r)).collect();

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = kmeans_plus_plus(&z, k, &mut rng);
        let mut resp = hard_assign(&z, &centers);
        let mut gmm = Gmm {
            weights: vec![0.0; k],
            means: centers,
            variances: vec![vec![1.0; z[0].len()]; k],
            reg: params.reg,
            standardizer,
            trace: GmmTrace::default(),
        };
        gmm.m_step(&z, &resp);

        let mut prev = f64::NEG_INFINITY;
        for _ in 0..params.max_iter {
            let ll = gmm.e_step(&z, &mut resp);
            gmm.trace.log_likelihood.push(ll);
            if ll - prev < params.tol {
                gmm.trace.converged = true;
                break;
            }
            prev = ll;
            gmm.m_step(&z, &resp);
        }
        Ok(gmm)
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn n_features(&self) -> usize {
        self.standardizer.n_features()
    }

    fn component_log_densities(&self, z: &[f64], out: &mut [f64]) {
        for (c, slot) in out.iter_mut().enumerate() {
            let mut acc = self.weights[c].ln();
            for ((x, m), v) in z.iter().zip(&self.means[c]).zip(&self.variances[c]) {
                acc -= 0.5 * (LN_2PI + v.ln() + (x - m).powi(2) / v);
            }
            *slot = acc;
        }
    }

    fn log_density_standardized(&self, z: &[f64]) -> f64 {
        let mut buf = vec![0.0; self.n_components()];
        self.component_log_densities(z, &mut buf);
        log_sum_exp(&buf)
    }

    /// Fills `resp` with posterior responsibilities; returns the mean per-row log-likelihood.
    fn e_step(&self, z: &[Vec<f64>], resp: &mut [Vec<f64>]) -> f64 {
        let mut total = 0.0;
        for (row, r) in z.iter().zip(resp.iter_mut()) {
            self.component_log_densities(row, r);
            let lse = log_sum_exp(r);
            for v in r.iter_mut() {
                *v = (*v - lse).exp();
            }
            total += lse;
        }
        total / z.len() as f64
    }

    /// Maximizes the expected complete log-likelihood subject to every variance >= reg.
    /// For a diagonal Gaussian the constrained optimum is the clamped unconstrained one,
    /// so EM stays monotone.
    fn m_step(&mut self, z: &[Vec<f64>], resp: &[Vec<f64>]) {
        let n = z.len() as f64;
        let d = z[0].len();
        let k = self.n_components();
        for c in 0..k {
            let nk: f64 = resp.iter().map(|r| r[c]).sum();
            if nk <= f64::MIN_POSITIVE {
                // empty component: keep its mean, give it negligible weight
                self.weights[c] = 0.0;
                self.variances[c] = vec![1.0; d];
                continue;
            }
            self.weights[c] = nk / n;
            let mut mean = vec![0.0; d];
            for (row, r) in z.iter().zip(resp) {
                for (m, x) in mean.iter_mut().zip(row) {
                    *m += r[c] * x;
                }
            }
            mean.iter_mut().for_each(|m| *m /= nk);
            let mut var = vec![0.0; d];
            for (row, r) in z.iter().zip(resp) {
                for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                    *v += r[c] * (x - m).powi(2);
                }
            }
            var.iter_mut().for_each(|v| *v = (*v / nk).max(self.reg));
            self.means[c] = mean;
            self.variances[c] = var;
        }
        let sum: f64 = self.weights.iter().sum();
        self.weights.iter_mut().for_each(|w| *w /= sum);
        self.trace.weight_sums.push(self.weights.iter().sum());
    }
}

impl Scorer for Gmm {
    /// Log-density of each standardized row under the mixture.
    fn score(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>, DetectError> {
        check_width(rows, self.n_features())?;
        Ok(rows
            .iter()
            .map(|r| self.log_density_standardized(&self.standardizer.transform(r)))
            .collect())
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// k-means++ seeding: first center uniform, the rest drawn with probability proportional
/// to squared distance from the nearest chosen center.
fn kmeans_plus_plus(z: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centers = vec![z[rng.gen_range(0..z.len())].clone()];
    let mut d2: Vec<f64> = z.iter().map(|p| sq_dist(p, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = z.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.gen_range(0..z.len())
        };
        centers.push(z[next].clone());
        for (slot, p) in d2.iter_mut().zip(z) {
            *slot = slot.min(sq_dist(p, &z[next]));
        }
    }
    centers
}

fn hard_assign(z: &[Vec<f64>], centers: &[Vec<f64>]) -> Vec<Vec<f64>> {
    z.iter()
        .map(|p| {
            let best = centers
                .iter()
                .enumerate()
                .min_by(|a, b| sq_dist(p, a.1).total_cmp(&sq_dist(p, b.1)))
                .map_or(0, |(i, _)| i);
            let mut r = vec![0.0; centers.len()];
            r[best] = 1.0;
            r
        })
        .collect()
}
