//! Model checking and chain diagnostics: the per-mode dependence
//! statistic, posterior predictive checks, effective sample sizes and
//! correlation summaries.

use crate::array_normal::SeparableCovariance;
use crate::bayes::{full_distribution, Chain};
use crate::error::{Error, Result};
use crate::linalg::{sym_eigen, RngStream};
use crate::tensor::DenseArray;
use nalgebra::DMatrix;
use serde::Serialize;

/// Scale-free dependence statistic of a mode-k covariance estimate:
/// `t = log det(S / tr S) + m log m`. Zero iff `S` is proportional to the
/// identity, negative otherwise.
pub fn t_stat(s: &DMatrix<f64>) -> Result<f64> {
    let m = s.nrows();
    if m == 0 || s.ncols() != m {
        return Err(Error::ShapeMismatch(format!(
            "t statistic needs a square matrix, got {}x{}",
            s.nrows(),
            s.ncols()
        )));
    }
    let tr = s.trace();
    if !(tr > 0.0) {
        return Err(Error::Data("covariance estimate has nonpositive trace".into()));
    }
    let (vals, _) = sym_eigen(s)?;
    let mut logdet = 0.0;
    for &v in &vals {
        let scaled = v / tr;
        if !(scaled > 0.0) {
            return Err(Error::RankDeficient { mode: 0 });
        }
        logdet += scaled.ln();
    }
    Ok(logdet + m as f64 * (m as f64).ln())
}

/// Mode-k sample covariance of the residual array: `E_(k) E_(k)^T / n_k`
/// with `n_k` the number of mode-k fibers.
pub fn mode_scatter(y: &DenseArray, mean: &DenseArray, k: usize) -> Result<DMatrix<f64>> {
    let e = y.sub(mean)?;
    let u = e.unfold(k)?;
    let n_k = (y.len() / y.dims()[k]) as f64;
    Ok(&u * u.transpose() / n_k)
}

/// Posterior predictive check of the per-mode dependence statistics.
#[derive(Debug, Clone, Serialize)]
pub struct PpcResult {
    /// Observed `t_k` per covariance mode (the i.i.d. replicate mode is
    /// excluded), computed against each saved state's mean and averaged.
    pub observed: Vec<f64>,
    /// One replicated `t_k` vector per saved state.
    pub replicated: Vec<Vec<f64>>,
    /// Empirical `Pr(t_rep < t_obs)` per mode.
    pub p_values: Vec<f64>,
}

/// Draw one replicate data set per saved state and compare the per-mode
/// dependence statistics against the observed array. Masked cells take
/// each state's imputed values.
pub fn posterior_predictive(y: &DenseArray, chain: &Chain, rng: &mut RngStream) -> Result<PpcResult> {
    if chain.states.is_empty() {
        return Err(Error::InvalidConfig("chain has no saved states".into()));
    }
    let order = y.order();
    let n = *y.dims().last().unwrap();
    let dependent = chain.meta.dependent_last_mode;
    let modes = if dependent { order } else { order - 1 };
    let missing: Vec<usize> = y
        .mask()
        .map(|m| m.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect())
        .unwrap_or_default();
    let mut ywork = y.clone();
    ywork.clear_mask();
    let mut obs_acc = vec![0.0; modes];
    let mut replicated = Vec::with_capacity(chain.states.len());
    for state in &chain.states {
        if !missing.is_empty() {
            if state.imputed.len() != missing.len() {
                return Err(Error::Data(format!(
                    "state carries {} imputed cells, data has {} missing",
                    state.imputed.len(),
                    missing.len()
                )));
            }
            for (&p, &v) in missing.iter().zip(&state.imputed) {
                ywork.set_linear(p, v);
            }
        }
        let mean_full = state.m.outer_ones(n);
        let dist = full_distribution(&state.m, &state.sigma, n, dependent)?;
        let y_rep = dist.sample(rng);
        let mut t_rep = Vec::with_capacity(modes);
        for k in 0..modes {
            obs_acc[k] += t_stat(&mode_scatter(&ywork, &mean_full, k)?)?;
            t_rep.push(t_stat(&mode_scatter(&y_rep, &mean_full, k)?)?);
        }
        replicated.push(t_rep);
    }
    let s = chain.states.len() as f64;
    let observed: Vec<f64> = obs_acc.into_iter().map(|v| v / s).collect();
    let p_values = (0..modes)
        .map(|k| {
            let below = replicated.iter().filter(|r| r[k] < observed[k]).count();
            below as f64 / s
        })
        .collect();
    Ok(PpcResult { observed, replicated, p_values })
}

/// Effective sample size with the initial-positive-sequence truncation:
/// autocorrelations are summed in adjacent pairs until a pair sum goes
/// nonpositive.
pub fn ess(xs: &[f64]) -> Result<f64> {
    let n = xs.len();
    if n < 10 {
        return Err(Error::Data(format!("need at least 10 samples for ESS, got {n}")));
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let centered: Vec<f64> = xs.iter().map(|x| x - mean).collect();
    let gamma0 = centered.iter().map(|c| c * c).sum::<f64>() / n as f64;
    if gamma0 <= 0.0 || !gamma0.is_finite() {
        return Err(Error::ZeroVariance);
    }
    let autocov = |lag: usize| -> f64 {
        centered[..n - lag]
            .iter()
            .zip(&centered[lag..])
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / n as f64
    };
    let mut tau = 1.0;
    let mut lag = 1;
    while lag + 1 < n {
        let pair = (autocov(lag) + autocov(lag + 1)) / gamma0;
        if pair <= 0.0 {
            break;
        }
        tau += 2.0 * pair;
        lag += 2;
    }
    Ok((n as f64 / tau).min(n as f64))
}

/// Five-number-plus summary of a scalar trace.
#[derive(Debug, Clone, Serialize)]
pub struct TraceSummary {
    pub mean: f64,
    pub sd: f64,
    pub q025: f64,
    pub median: f64,
    pub q975: f64,
    pub ess: f64,
}

pub fn trace_summary(xs: &[f64]) -> Result<TraceSummary> {
    let n = xs.len();
    let e = ess(xs)?;
    let mean = xs.iter().sum::<f64>() / n as f64;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let mut sorted = xs.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let q = |p: f64| -> f64 {
        let t = p * (n - 1) as f64;
        let lo = t.floor() as usize;
        let hi = t.ceil() as usize;
        sorted[lo] + (t - lo as f64) * (sorted[hi] - sorted[lo])
    };
    Ok(TraceSummary {
        mean,
        sd: var.sqrt(),
        q025: q(0.025),
        median: q(0.5),
        q975: q(0.975),
        ess: e,
    })
}

/// Posterior summary of one mode's correlation structure.
#[derive(Debug, Clone, Serialize)]
pub struct CorrelationSummary {
    pub mode: usize,
    /// Posterior mean of the correlation matrix of `Sigma_k`.
    pub mean_correlation: Vec<Vec<f64>>,
    /// Eigenvalues of the mean correlation matrix, descending.
    pub eigenvalues: Vec<f64>,
    /// The first two eigenvectors, each sign-fixed so its
    /// largest-magnitude entry is positive.
    pub axes: Vec<Vec<f64>>,
}

pub fn correlation_summary(chain: &Chain, k: usize) -> Result<CorrelationSummary> {
    let first = chain
        .states
        .first()
        .ok_or_else(|| Error::InvalidConfig("chain has no saved states".into()))?;
    let m = first.sigma.comp(k).dim();
    let mut acc = DMatrix::zeros(m, m);
    for state in &chain.states {
        acc += state.sigma.comp(k).to_correlation();
    }
    acc /= chain.states.len() as f64;
    let (vals, vecs) = sym_eigen(&acc)?;
    let mut axes = Vec::new();
    for c in 0..m.min(2) {
        let mut axis: Vec<f64> = vecs.column(c).iter().copied().collect();
        let lead = axis
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, _)| i)
            .unwrap();
        if axis[lead] < 0.0 {
            for v in axis.iter_mut() {
                *v = -*v;
            }
        }
        axes.push(axis);
    }
    Ok(CorrelationSummary {
        mode: k + 1,
        mean_correlation: (0..m).map(|i| (0..m).map(|j| acc[(i, j)]).collect()).collect(),
        eigenvalues: vals,
        axes,
    })
}

/// Convenience: `t_k` for every mode of a centered array.
pub fn t_stats_all_modes(y: &DenseArray, mean: &DenseArray) -> Result<Vec<f64>> {
    (0..y.order()).map(|k| t_stat(&mode_scatter(y, mean, k)?)).collect()
}

/// True per-mode statistics of a separable covariance, for reference
/// lines in reports.
pub fn t_stats_of_covariance(sigma: &SeparableCovariance) -> Result<Vec<f64>> {
    sigma.comps().iter().map(|c| t_stat(c.values())).collect()
}
