//! Maximum-likelihood estimation for i.i.d. array-normal samples: exact
//! mean, block coordinate-descent covariance updates, convergence control.

use crate::array_normal::{ArrayNormal, SeparableCovariance};
use crate::error::{Error, Result};
use crate::linalg::SpdMatrix;
use crate::tensor::DenseArray;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitStrategy {
    #[default]
    Identity,
    SampleMoment,
}

/// Reporting convention for the gauge freedom in the component scales.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ScaleNorm {
    /// Rescale each component after the first to `tr = m_k`, absorbing
    /// the compensating factor into the first component.
    #[default]
    TracePerMode,
    /// Leave the components at whatever scales the iteration produced.
    FirstModeAbsorbs,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MleConfig {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub init: InitStrategy,
    pub scale_norm: ScaleNorm,
    /// Add `1e-8 tr(S_k)/m_k * I` to a rank-deficient scatter instead of
    /// failing.
    pub ridge: bool,
}

impl Default for MleConfig {
    fn default() -> Self {
        MleConfig {
            max_iters: 1000,
            rel_tol: 1e-8,
            init: InitStrategy::Identity,
            scale_norm: ScaleNorm::TracePerMode,
            ridge: false,
        }
    }
}

impl MleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::InvalidConfig("rel_tol must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct MleResult {
    pub mean_hat: DenseArray,
    pub cov_hat: SeparableCovariance,
    pub loglik_trace: Vec<f64>,
    pub converged: bool,
    pub iters: usize,
}

/// Elementwise sample mean over the replication (last) mode. Masked cells
/// average over the observed replicates; a cell missing in every
/// replicate is an error.
pub fn mle_mean(ys: &DenseArray) -> Result<DenseArray> {
    let order = ys.order();
    if order < 2 {
        return Err(Error::ShapeMismatch(
            "expected a stacked array with a replication mode".into(),
        ));
    }
    let n = ys.dims()[order - 1];
    let cell_count = ys.len() / n;
    let mut sums = vec![0.0; cell_count];
    let mut counts = vec![0usize; cell_count];
    for t in 0..n {
        for c in 0..cell_count {
            let p = t * cell_count + c;
            let missing = ys.mask().is_some_and(|m| m[p]);
            if !missing {
                sums[c] += ys.data()[p];
                counts[c] += 1;
            }
        }
    }
    for (c, &cnt) in counts.iter().enumerate() {
        if cnt == 0 {
            return Err(Error::MissingData(format!(
                "cell {c} is missing in every replicate"
            )));
        }
        sums[c] /= cnt as f64;
    }
    DenseArray::new(ys.dims()[..order - 1].to_vec(), sums)
}

/// Mode-k scatter of the standardized residual array:
/// `S_k = Etilde_(k) Etilde_(k)^T` where Etilde whitens every mode but k
/// (and leaves the replication mode alone).
pub fn flipflop_scatter(
    resid: &DenseArray,
    sigma: &SeparableCovariance,
    k: usize,
) -> Result<DMatrix<f64>> {
    let data_order = sigma.order();
    if resid.order() != data_order + 1 {
        return Err(Error::ShapeMismatch(format!(
            "residual array has order {}, expected {} (data modes + replicates)",
            resid.order(),
            data_order + 1
        )));
    }
    let mut std = resid.clone();
    for j in 0..data_order {
        if j == k || sigma.is_identity_mode(j) {
            continue;
        }
        let u = std.unfold(j)?;
        let w = sigma.comp(j).whiten(&u);
        std = DenseArray::fold(&w, j, std.dims())?;
    }
    let ek = std.unfold(k)?;
    Ok(&ek * ek.transpose())
}

/// One block coordinate update: the maximizing `Sigma_k = S_k / n_k`.
pub fn flipflop_step(
    resid: &DenseArray,
    sigma: &SeparableCovariance,
    k: usize,
) -> Result<SpdMatrix> {
    let s = flipflop_scatter(resid, sigma, k)?;
    let n_k = (resid.len() / resid.dims()[k]) as f64;
    SpdMatrix::new(s / n_k).map_err(|_| Error::RankDeficient { mode: k + 1 })
}

/// Joint log-likelihood of the stacked samples.
pub fn loglik(ys: &DenseArray, mean: &DenseArray, sigma: &SeparableCovariance) -> Result<f64> {
    let n = *ys.dims().last().unwrap();
    let dist = ArrayNormal::new(mean.clone(), sigma.clone())?.replicate(n)?;
    dist.log_density(ys)
}

/// Flip-flop maximum likelihood. `ys` is the stacked sample array of
/// order K+1 with the replicates last.
pub fn fit_mle(ys: &DenseArray, cfg: &MleConfig) -> Result<MleResult> {
    cfg.validate()?;
    if ys.has_missing() {
        return Err(Error::MissingData(
            "maximum likelihood requires complete data".into(),
        ));
    }
    let order = ys.order();
    if order < 2 {
        return Err(Error::ShapeMismatch(
            "expected a stacked array with a replication mode".into(),
        ));
    }
    let data_dims = &ys.dims()[..order - 1];
    let n = ys.dims()[order - 1];
    for (k, &mk) in data_dims.iter().enumerate() {
        let n_k = ys.len() / mk;
        if n_k <= mk {
            return Err(Error::InvalidConfig(format!(
                "mode {}: per-step sample size {n_k} must exceed dimension {mk}",
                k + 1
            )));
        }
    }
    let mean_hat = mle_mean(ys)?;
    let resid = ys.sub(&mean_hat.outer_ones(n))?;

    let mut sigma = match cfg.init {
        InitStrategy::Identity => SeparableCovariance::new(
            data_dims.iter().map(|&m| SpdMatrix::identity(m)).collect(),
        ),
        InitStrategy::SampleMoment => {
            let comps = data_dims
                .iter()
                .enumerate()
                .map(|(k, &mk)| {
                    let u = resid.unfold(k)?;
                    let n_k = (resid.len() / mk) as f64;
                    SpdMatrix::new(&u * u.transpose() / n_k)
                        .map_err(|_| Error::RankDeficient { mode: k + 1 })
                })
                .collect::<Result<Vec<_>>>()?;
            SeparableCovariance::new(comps)
        }
    };

    let mut trace = vec![loglik(ys, &mean_hat, &sigma)?];
    let mut converged = false;
    let mut iters = 0;
    for _ in 0..cfg.max_iters {
        iters += 1;
        for k in 0..data_dims.len() {
            let next = match flipflop_step(&resid, &sigma, k) {
                Ok(s) => s,
                Err(Error::RankDeficient { mode }) if cfg.ridge => {
                    let s = flipflop_scatter(&resid, &sigma, k)?;
                    let n_k = (resid.len() / data_dims[k]) as f64;
                    let scaled = s / n_k;
                    let eps = 1e-8 * scaled.trace() / data_dims[k] as f64;
                    let mut v = scaled;
                    for i in 0..v.nrows() {
                        v[(i, i)] += eps;
                    }
                    SpdMatrix::new(v).map_err(|_| Error::RankDeficient { mode })?
                }
                Err(e) => return Err(e),
            };
            sigma.set_comp(k, next)?;
        }
        let ll = loglik(ys, &mean_hat, &sigma)?;
        let prev = *trace.last().unwrap();
        trace.push(ll);
        if (ll - prev).abs() <= cfg.rel_tol * (ll.abs() + 1.0) {
            converged = true;
            break;
        }
    }

    if cfg.scale_norm == ScaleNorm::TracePerMode {
        let mut absorb = 1.0;
        for k in 1..data_dims.len() {
            let tr = sigma.comp(k).trace();
            let c = data_dims[k] as f64 / tr;
            sigma.set_comp(k, sigma.comp(k).scale(c)?)?;
            absorb /= c;
        }
        sigma.set_comp(0, sigma.comp(0).scale(absorb)?)?;
    }

    Ok(MleResult { mean_hat, cov_hat: sigma, loglik_trace: trace, converged, iters })
}
