//! Gaussian-kernel maximum mean discrepancy between domain pairs, and the
//! lambda-weighted three-domain discrepancy with exact gradients for the
//! encoder.
//!
//! The estimator keeps the N^2 normalization with the diagonal excluded from
//! the within-set sums, so MMD(X, X) of a matched pair of singletons is -2
//! rather than 0; the constant offset does not move the gradients. Analytic
//! gradients treat the bandwidth as a constant, including under the median
//! heuristic.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::squared_euclidean;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthMode {
    MedianHeuristic,
    Fixed,
}

/// Kernel and weighting settings for the discrepancy terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MmdConfig {
    pub bandwidth_mode: BandwidthMode,
    /// Used when `bandwidth_mode` is `Fixed`.
    pub fixed_bandwidth: f64,
    /// Weight of the replay-pair term in the three-domain discrepancy.
    pub lambda: f64,
}

impl Default for MmdConfig {
    fn default() -> Self {
        MmdConfig {
            bandwidth_mode: BandwidthMode::MedianHeuristic,
            fixed_bandwidth: 1.0,
            lambda: 0.1,
        }
    }
}

impl MmdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.bandwidth_mode == BandwidthMode::Fixed && !(self.fixed_bandwidth > 0.0) {
            return Err(Error::invalid_config("fixed_bandwidth must be positive"));
        }
        if self.lambda < 0.0 {
            return Err(Error::invalid_config("lambda must be nonnegative"));
        }
        Ok(())
    }
}

/// Discrepancy value plus the gradient with respect to every input point.
#[derive(Debug, Clone)]
pub struct MmdResult {
    pub value: f64,
    pub grad_x: Vec<Vec<f64>>,
    pub grad_y: Vec<Vec<f64>>,
}

/// Median of the nonzero pairwise distances over the pooled points, falling
/// back to 1.0 when every distance is zero.
pub fn median_bandwidth(x: &[Vec<f64>], y: &[Vec<f64>]) -> f64 {
    let pooled: Vec<&Vec<f64>> = x.iter().chain(y.iter()).collect();
    let mut dists = Vec::new();
    for i in 0..pooled.len() {
        for j in (i + 1)..pooled.len() {
            let d = squared_euclidean(pooled[i], pooled[j]).unwrap().sqrt();
            if d > 0.0 {
                dists.push(d);
            }
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = dists.len();
    if n % 2 == 1 {
        dists[n / 2]
    } else {
        0.5 * (dists[n / 2 - 1] + dists[n / 2])
    }
}

fn resolve_bandwidth(x: &[Vec<f64>], y: &[Vec<f64>], cfg: &MmdConfig) -> f64 {
    match cfg.bandwidth_mode {
        BandwidthMode::Fixed => cfg.fixed_bandwidth,
        BandwidthMode::MedianHeuristic => median_bandwidth(x, y),
    }
}

fn check_inputs(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::Empty { what: "first sample set" });
    }
    if y.is_empty() {
        return Err(Error::Empty { what: "second sample set" });
    }
    let dim = x[0].len();
    for p in x.iter().chain(y.iter()) {
        if p.len() != dim {
            return Err(Error::DimensionMismatch {
                context: "mmd points",
                left: dim,
                right: p.len(),
            });
        }
    }
    Ok(dim)
}

fn mmd_impl(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    cfg: &MmdConfig,
    with_grads: bool,
) -> Result<MmdResult> {
    cfg.validate()?;
    let dim = check_inputs(x, y)?;
    let sigma = resolve_bandwidth(x, y, cfg);
    let s2 = sigma * sigma;
    let n = x.len();
    let m = y.len();
    let nf = n as f64;
    let mf = m as f64;

    let kernel = |a: &[f64], b: &[f64]| -> f64 {
        (-squared_euclidean(a, b).unwrap() / (2.0 * s2)).exp()
    };

    let mut value = 0.0;
    let mut grad_x = if with_grads { vec![vec![0.0; dim]; n] } else { Vec::new() };
    let mut grad_y = if with_grads { vec![vec![0.0; dim]; m] } else { Vec::new() };

    // Within-X pairs, diagonal excluded; each unordered pair appears twice in
    // the double sum.
    let wxx = 1.0 / (nf * nf);
    for i in 0..n {
        for j in (i + 1)..n {
            let k = kernel(&x[i], &x[j]);
            value += 2.0 * wxx * k;
            if with_grads {
                // d k / d x_i = k * (x_j - x_i) / sigma^2, doubled for the
                // two ordered pairs.
                let c = 2.0 * wxx * k / s2;
                for d in 0..dim {
                    let diff = x[j][d] - x[i][d];
                    grad_x[i][d] += c * diff;
                    grad_x[j][d] -= c * diff;
                }
            }
        }
    }
    let wyy = 1.0 / (mf * mf);
    for i in 0..m {
        for j in (i + 1)..m {
            let k = kernel(&y[i], &y[j]);
            value += 2.0 * wyy * k;
            if with_grads {
                let c = 2.0 * wyy * k / s2;
                for d in 0..dim {
                    let diff = y[j][d] - y[i][d];
                    grad_y[i][d] += c * diff;
                    grad_y[j][d] -= c * diff;
                }
            }
        }
    }
    let wxy = 2.0 / (nf * mf);
    for i in 0..n {
        for j in 0..m {
            let k = kernel(&x[i], &y[j]);
            value -= wxy * k;
            if with_grads {
                let c = wxy * k / s2;
                for d in 0..dim {
                    let diff = y[j][d] - x[i][d];
                    grad_x[i][d] -= c * diff;
                    grad_y[j][d] += c * diff;
                }
            }
        }
    }

    Ok(MmdResult {
        value,
        grad_x,
        grad_y,
    })
}

/// Discrepancy between two sample sets with per-point gradients.
pub fn mmd_pair(x: &[Vec<f64>], y: &[Vec<f64>], cfg: &MmdConfig) -> Result<MmdResult> {
    mmd_impl(x, y, cfg, true)
}

/// Value-only path for ranking, skipping gradient buffers.
pub fn mmd_value(x: &[Vec<f64>], y: &[Vec<f64>], cfg: &MmdConfig) -> Result<f64> {
    Ok(mmd_impl(x, y, cfg, false)?.value)
}

/// Three-domain discrepancy and its gradients.
#[derive(Debug, Clone)]
pub struct TripleResult {
    pub value: f64,
    pub grad_source: Vec<Vec<f64>>,
    pub grad_target: Vec<Vec<f64>>,
    pub grad_replay: Vec<Vec<f64>>,
}

/// `mmd(S, T) + lambda * mmd(S, R)`; an empty replay set contributes nothing.
pub fn three_domain_discrepancy(
    source: &[Vec<f64>],
    target: &[Vec<f64>],
    replay: &[Vec<f64>],
    cfg: &MmdConfig,
) -> Result<TripleResult> {
    let st = mmd_pair(source, target, cfg)?;
    let mut value = st.value;
    let mut grad_source = st.grad_x;
    let grad_target = st.grad_y;
    let mut grad_replay = vec![vec![0.0; source[0].len()]; replay.len()];
    if !replay.is_empty() && cfg.lambda > 0.0 {
        let sr = mmd_pair(source, replay, cfg)?;
        value += cfg.lambda * sr.value;
        for (acc, g) in grad_source.iter_mut().zip(&sr.grad_x) {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += cfg.lambda * b;
            }
        }
        for (acc, g) in grad_replay.iter_mut().zip(&sr.grad_y) {
            for (a, b) in acc.iter_mut().zip(g) {
                *a = cfg.lambda * b;
            }
        }
    }
    Ok(TripleResult {
        value,
        grad_source,
        grad_target,
        grad_replay,
    })
}
