//! Semiconjugate Bayesian inference for the array normal model: prior
//! specification, Gibbs full conditionals for the mean, the covariance
//! components and the total-variance parameter, missing-data imputation,
//! and the variant with a temporally dependent replication mode.

use crate::array_normal::{ArrayNormal, SeparableCovariance};
use crate::error::{Error, Result};
use crate::linalg::{rinvwish, RngStream, SpdMatrix};
use crate::mle::mle_mean;
use crate::tensor::DenseArray;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

/// Handling of the total-variance hyperparameter: either fixed, or given
/// a gamma prior (shape-rate, mean a/b) and sampled in the Gibbs scan.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GammaPrior {
    Fixed { value: f64 },
    Prior { a: f64, b: f64 },
}

/// Prior for the array normal model. The covariance modes cover every
/// mode of the observed array in the dependent case, and the data modes
/// (excluding the i.i.d. replicate) otherwise.
#[derive(Debug, Clone)]
pub struct PriorSpec {
    /// Prior mean array (dimensions of one replicate's mean).
    pub m0: DenseArray,
    /// Prior sample size for the mean.
    pub kappa0: f64,
    /// Per covariance mode: `S_0k = gamma * sigma0[k]`.
    pub sigma0: Vec<SpdMatrix>,
    pub nu0: Vec<f64>,
    /// Modes constrained to the identity are skipped by the sampler.
    pub identity_flags: Vec<bool>,
    pub gamma: GammaPrior,
}

impl PriorSpec {
    /// Default prior: `M_0 = 0`, `kappa_0 = 1`, `Sigma_0k = I/m_k`,
    /// `nu_0k = m_k + 2`, so `E[tr Sigma_k] = gamma` for estimated modes.
    pub fn defaults(
        mean_dims: &[usize],
        cov_dims: &[usize],
        identity_flags: Vec<bool>,
        gamma: GammaPrior,
    ) -> Result<Self> {
        if identity_flags.len() != cov_dims.len() {
            return Err(Error::InvalidConfig(format!(
                "{} identity flags for {} covariance modes",
                identity_flags.len(),
                cov_dims.len()
            )));
        }
        let sigma0 = cov_dims
            .iter()
            .map(|&m| SpdMatrix::identity(m).scale(1.0 / m as f64))
            .collect::<Result<Vec<_>>>()?;
        let nu0 = cov_dims.iter().map(|&m| (m + 2) as f64).collect();
        Ok(PriorSpec {
            m0: DenseArray::zeros(mean_dims.to_vec()),
            kappa0: 1.0,
            sigma0,
            nu0,
            identity_flags,
            gamma,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa0 > 0.0) {
            return Err(Error::InvalidConfig("kappa0 must be positive".into()));
        }
        if self.sigma0.len() != self.nu0.len() || self.sigma0.len() != self.identity_flags.len() {
            return Err(Error::InvalidConfig(
                "sigma0, nu0 and identity_flags must have equal length".into(),
            ));
        }
        for (k, (s, &nu)) in self.sigma0.iter().zip(&self.nu0).enumerate() {
            if self.identity_flags[k] {
                continue;
            }
            let m = s.dim() as f64;
            if nu <= m + 1.0 {
                return Err(Error::InvalidConfig(format!(
                    "nu0 for mode {} is {nu}; need > m_k + 1 = {} for a finite prior mean",
                    k + 1,
                    m + 1.0
                )));
            }
        }
        match self.gamma {
            GammaPrior::Fixed { value } if !(value > 0.0) => {
                Err(Error::InvalidConfig("fixed gamma must be positive".into()))
            }
            GammaPrior::Prior { a, b } if !(a > 0.0 && b > 0.0) => {
                Err(Error::InvalidConfig("gamma prior parameters must be positive".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn estimated_modes(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.sigma0.len()).filter(|&k| !self.identity_flags[k])
    }
}

/// Empirical fixed-gamma choice: centers the prior expected total
/// variation at the observed sum of squares. Missing cells are excluded
/// and the total rescaled by completeness.
pub fn gamma_from_data(y: &DenseArray, prior_flags: &[bool], cov_dims: &[usize]) -> Result<f64> {
    let ybar = mle_mean(y)?;
    let n = *y.dims().last().unwrap();
    let cell_count = y.len() / n;
    let mut ss = 0.0;
    let mut observed = 0usize;
    for t in 0..n {
        for c in 0..cell_count {
            let p = t * cell_count + c;
            if y.mask().is_some_and(|m| m[p]) {
                continue;
            }
            let d = y.data()[p] - ybar.data()[c];
            ss += d * d;
            observed += 1;
        }
    }
    if observed == 0 {
        return Err(Error::MissingData("no observed cells".into()));
    }
    ss *= y.len() as f64 / observed as f64;
    // identity modes contribute tr(I) = m_k to the expected total
    // variation; the i.i.d. replicate mode (not listed) contributes n
    let mut fixed_factor = 1.0;
    let mut n_est = 0usize;
    for (k, &flag) in prior_flags.iter().enumerate() {
        if flag {
            fixed_factor *= cov_dims[k] as f64;
        } else {
            n_est += 1;
        }
    }
    let listed: usize = cov_dims.len();
    if listed == y.order() - 1 {
        fixed_factor *= n as f64;
    }
    if n_est == 0 {
        return Err(Error::InvalidConfig("no estimated covariance modes".into()));
    }
    Ok((ss / fixed_factor).powf(1.0 / n_est as f64))
}

/// Conditional mean and variance divisor for `M | Y, Sigma` with i.i.d.
/// replicates. Exposed for verification.
pub fn m_iid_params(ys: &DenseArray, prior: &PriorSpec) -> Result<(DenseArray, f64)> {
    let n = *ys.dims().last().unwrap() as f64;
    let ybar = mle_mean(ys)?;
    let denom = prior.kappa0 + n;
    let mean = prior.m0.scale(prior.kappa0 / denom).add(&ybar.scale(n / denom))?;
    Ok((mean, denom))
}

/// Draw from `M | Y, Sigma` in the i.i.d.-replicate model.
pub fn sample_m_iid(
    ys: &DenseArray,
    sigma: &SeparableCovariance,
    prior: &PriorSpec,
    rng: &mut RngStream,
) -> Result<DenseArray> {
    let (mean, denom) = m_iid_params(ys, prior)?;
    let z = DenseArray::new(mean.dims().to_vec(), rng.normal_vec(mean.len()))?;
    let noise = sigma.color_array(&z)?.scale(1.0 / denom.sqrt());
    mean.add(&noise)
}

/// Scale matrix and degrees of freedom for the i.i.d. `Sigma_k` update
/// (mean marginalized out). Exposed for direct-formula verification.
pub fn sigma_k_iid_params(
    ys: &DenseArray,
    sigma: &SeparableCovariance,
    prior: &PriorSpec,
    gamma: f64,
    k: usize,
) -> Result<(DMatrix<f64>, f64)> {
    let order = ys.order();
    let n = *ys.dims().last().unwrap();
    let ybar = mle_mean(ys)?;
    let resid = ys.sub(&ybar.outer_ones(n))?;
    let s_k = crate::mle::flipflop_scatter(&resid, sigma, k)?;
    // R = sqrt(kappa0 n / (kappa0 + n)) (Ybar - M0) whitened on all modes
    // except k
    let weight = (prior.kappa0 * n as f64 / (prior.kappa0 + n as f64)).sqrt();
    let mut dev = ybar.sub(&prior.m0)?.scale(weight);
    for j in 0..order - 1 {
        if j == k || sigma.is_identity_mode(j) {
            continue;
        }
        let u = dev.unfold(j)?;
        let w = sigma.comp(j).whiten(&u);
        dev = DenseArray::fold(&w, j, dev.dims())?;
    }
    let r_k = dev.unfold(k)?;
    let scale = prior.sigma0[k].values() * gamma + s_k + &r_k * r_k.transpose();
    let dof = prior.nu0[k] + (ys.len() / ys.dims()[k]) as f64;
    Ok((scale, dof))
}

/// Draw from `Sigma_k | Y, Sigma_{-k}` in the i.i.d. model.
pub fn sample_sigma_k_iid(
    ys: &DenseArray,
    sigma: &SeparableCovariance,
    prior: &PriorSpec,
    gamma: f64,
    k: usize,
    rng: &mut RngStream,
) -> Result<SpdMatrix> {
    let (scale, dof) = sigma_k_iid_params(ys, sigma, prior, gamma, k)?;
    rinvwish(&SpdMatrix::new(scale)?, dof, rng)
}

/// Conditional mean and variance divisor for `M | Y, Sigma` when the last
/// mode carries temporal dependence. Exposed for verification.
pub fn m_dep_params(
    y: &DenseArray,
    sigma: &SeparableCovariance,
    prior: &PriorSpec,
) -> Result<(DenseArray, f64)> {
    let order = y.order();
    let last = order - 1;
    let n = y.dims()[last];
    let sigma_t = sigma.comp(last);
    // Ytilde = Y x_K L_K^{-1}, c = L_K^{-1} 1
    let u = y.unfold(last)?;
    let w = sigma_t.whiten(&u);
    let ytilde = DenseArray::fold(&w, last, y.dims())?;
    let ones = DMatrix::from_element(n, 1, 1.0);
    let c = sigma_t.whiten(&ones);
    let mut num = prior.m0.scale(prior.kappa0);
    for i in 0..n {
        num = num.add(&ytilde.last_mode_slice(i)?.scale(c[(i, 0)]))?;
    }
    let denom = prior.kappa0 + c.iter().map(|v| v * v).sum::<f64>();
    Ok((num.scale(1.0 / denom), denom))
}

/// Draw from `M | Y, Sigma` in the dependent-replicate model.
pub fn sample_m_dep(
    y: &DenseArray,
    sigma: &SeparableCovariance,
    prior: &PriorSpec,
    rng: &mut RngStream,
) -> Result<DenseArray> {
    let (mean, denom) = m_dep_params(y, sigma, prior)?;
    let mean_cov = SeparableCovariance::with_flags(
        sigma.comps()[..sigma.order() - 1].to_vec(),
        sigma.identity_flags()[..sigma.order() - 1].to_vec(),
    )?;
    let z = DenseArray::new(mean.dims().to_vec(), rng.normal_vec(mean.len()))?;
    let noise = mean_cov.color_array(&z)?.scale(1.0 / denom.sqrt());
    mean.add(&noise)
}

/// Scale matrix and degrees of freedom for the dependent-case `Sigma_k`
/// update, conditional on the current mean.
pub fn sigma_k_dep_params(
    y: &DenseArray,
    m: &DenseArray,
    sigma: &SeparableCovariance,
    prior: &PriorSpec,
    gamma: f64,
    k: usize,
) -> Result<(DMatrix<f64>, f64)> {
    let order = y.order();
    let last = order - 1;
    let n = y.dims()[last];
    // E: residual whitened on every mode but k, including the dependent one
    let mut resid = y.sub(&m.outer_ones(n))?;
    for j in 0..order {
        if j == k || sigma.is_identity_mode(j) {
            continue;
        }
        let u = resid.unfold(j)?;
        let w = sigma.comp(j).whiten(&u);
        resid = DenseArray::fold(&w, j, resid.dims())?;
    }
    let e_k = resid.unfold(k)?;
    let mut scale = prior.sigma0[k].values() * gamma + &e_k * e_k.transpose();
    let mut dof = prior.nu0[k] + (y.len() / y.dims()[k]) as f64;
    if k < last {
        // prior-mean residual, standardized over the mean's modes except k
        let mut dev = m.sub(&prior.m0)?.scale(prior.kappa0.sqrt());
        for j in 0..last {
            if j == k || sigma.is_identity_mode(j) {
                continue;
            }
            let u = dev.unfold(j)?;
            let w = sigma.comp(j).whiten(&u);
            dev = DenseArray::fold(&w, j, dev.dims())?;
        }
        let r_k = dev.unfold(k)?;
        scale += &r_k * r_k.transpose();
        dof += (m.len() / m.dims()[k]) as f64;
    }
    Ok((scale, dof))
}

pub fn sample_sigma_k_dep(
    y: &DenseArray,
    m: &DenseArray,
    sigma: &SeparableCovariance,
    prior: &PriorSpec,
    gamma: f64,
    k: usize,
    rng: &mut RngStream,
) -> Result<SpdMatrix> {
    let (scale, dof) = sigma_k_dep_params(y, m, sigma, prior, gamma, k)?;
    rinvwish(&SpdMatrix::new(scale)?, dof, rng)
}

/// Shape and rate of the gamma full conditional for the total-variance
/// parameter; identity modes are excluded from both sums.
pub fn gamma_params(sigma: &SeparableCovariance, prior: &PriorSpec, a: f64, b: f64) -> (f64, f64) {
    let mut shape = a;
    let mut rate = b;
    for k in prior.estimated_modes() {
        let m_k = prior.sigma0[k].dim() as f64;
        shape += prior.nu0[k] * m_k / 2.0;
        rate += (sigma.comp(k).solve(prior.sigma0[k].values())).trace() / 2.0;
    }
    (shape, rate)
}

pub fn sample_gamma(
    sigma: &SeparableCovariance,
    prior: &PriorSpec,
    a: f64,
    b: f64,
    rng: &mut RngStream,
) -> f64 {
    let (shape, rate) = gamma_params(sigma, prior, a, b);
    rng.gamma(shape, rate)
}

/// Univariate full-conditional moments of one masked cell: precision and
/// mean given every other cell. Exposed for verification.
pub fn imputation_moments(
    y: &DenseArray,
    mean: &DenseArray,
    precisions: &[DMatrix<f64>],
    pos: usize,
) -> (f64, f64) {
    let idx = y.multi_index(pos);
    let q_ii: f64 = precisions.iter().zip(&idx).map(|(p, &i)| p[(i, i)]).collect::<Vec<_>>().iter().product();
    // w_i = row i of the full precision applied to (y - mean); separable,
    // so it is a product-weighted sum over cells
    let mut w_i = 0.0;
    for (j, (&yv, &mv)) in y.data().iter().zip(mean.data()).enumerate() {
        let jdx = y.multi_index(j);
        let q_ij: f64 = precisions
            .iter()
            .zip(idx.iter().zip(&jdx))
            .map(|(p, (&a, &b))| p[(a, b)])
            .product();
        w_i += q_ij * (yv - mv);
    }
    let cond_mean = y.data()[pos] - w_i / q_ii;
    (cond_mean, 1.0 / q_ii)
}

/// Single-site Gibbs resampling of every masked cell, in storage order.
/// `mean` must have the same dims as `y`; `comps` lists one covariance
/// component per mode of `y` (identity for an i.i.d. replicate mode).
pub fn impute_missing(
    y: &mut DenseArray,
    mean: &DenseArray,
    comps: &[SpdMatrix],
    rng: &mut RngStream,
) -> Result<()> {
    if y.dims() != mean.dims() {
        return Err(Error::ShapeMismatch(format!(
            "imputation mean dims {:?} do not match data dims {:?}",
            mean.dims(),
            y.dims()
        )));
    }
    let missing: Vec<usize> = match y.mask() {
        Some(m) => m.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect(),
        None => return Ok(()),
    };
    if missing.is_empty() {
        return Ok(());
    }
    if y.data().iter().any(|v| v.is_nan()) {
        return Err(Error::MissingData(
            "masked cells must hold initial numeric values before imputation".into(),
        ));
    }
    let precisions: Vec<DMatrix<f64>> = comps.iter().map(|c| c.inverse()).collect();
    // w = precision-weighted residual at the masked cells, maintained
    // incrementally as cells are resampled
    let dev = y.sub(mean)?;
    let mut whitened = dev;
    for (k, p) in precisions.iter().enumerate() {
        whitened = whitened.kmode_product(p, k)?;
    }
    let indices: Vec<Vec<usize>> = missing.iter().map(|&p| y.multi_index(p)).collect();
    let mut w: Vec<f64> = missing.iter().map(|&p| whitened.data()[p]).collect();
    for (a, &pos) in missing.iter().enumerate() {
        let idx = &indices[a];
        let q_ii: f64 = precisions.iter().zip(idx).map(|(p, &i)| p[(i, i)]).product();
        let cond_mean = y.data()[pos] - w[a] / q_ii;
        let draw = cond_mean + rng.standard_normal() / q_ii.sqrt();
        let delta = draw - y.data()[pos];
        y.set_linear(pos, draw);
        for (b, jdx) in indices.iter().enumerate() {
            let q_ab: f64 = precisions
                .iter()
                .zip(jdx.iter().zip(idx))
                .map(|(p, (&r, &c))| p[(r, c)])
                .product();
            w[b] += q_ab * delta;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub n_iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// RNG substream index; parallel chains share a seed and differ here.
    #[serde(default)]
    pub stream: u64,
    pub dependent_last_mode: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        GibbsConfig {
            n_iters: 5000,
            burn_in: 1000,
            thin: 4,
            seed: 0,
            stream: 0,
            dependent_last_mode: false,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iters == 0 || self.thin == 0 {
            return Err(Error::InvalidConfig("n_iters and thin must be >= 1".into()));
        }
        if self.burn_in >= self.n_iters {
            return Err(Error::InvalidConfig(format!(
                "burn_in {} must be below n_iters {}",
                self.burn_in, self.n_iters
            )));
        }
        Ok(())
    }
}

/// One sampler state.
#[derive(Debug, Clone)]
pub struct GibbsState {
    pub m: DenseArray,
    pub sigma: SeparableCovariance,
    pub gamma: f64,
    /// Imputed values at masked cells, in storage order of the mask.
    pub imputed: Vec<f64>,
    pub iter: usize,
}

/// Run metadata stored with every chain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChainMeta {
    pub seed: u64,
    pub stream: u64,
    pub rng_algorithm: String,
    pub n_iters: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub dependent_last_mode: bool,
    pub dims: Vec<usize>,
    pub identity_flags: Vec<bool>,
}

/// Thinned saved states plus scalar traces.
#[derive(Debug, Clone)]
pub struct Chain {
    pub states: Vec<GibbsState>,
    /// `gamma_0 = prod_k tr(Sigma_k)` at each saved state.
    pub gamma0_trace: Vec<f64>,
    /// `gamma_k = tr(Sigma_k)` per covariance mode.
    pub gamma_traces: Vec<Vec<f64>>,
    pub loglik_trace: Vec<f64>,
    pub meta: ChainMeta,
}

/// The distribution of the full observed array at the given state.
pub fn full_distribution(
    m: &DenseArray,
    sigma: &SeparableCovariance,
    n: usize,
    dependent: bool,
) -> Result<ArrayNormal> {
    if dependent {
        ArrayNormal::new(m.outer_ones(n), sigma.clone())
    } else {
        ArrayNormal::new(m.clone(), sigma.clone())?.replicate(n)
    }
}

/// Systematic-scan Gibbs sampler: impute missing cells, draw the mean,
/// draw each non-identity covariance component, draw gamma.
pub fn run_gibbs(y: &DenseArray, prior: &PriorSpec, cfg: &GibbsConfig) -> Result<Chain> {
    cfg.validate()?;
    prior.validate()?;
    let order = y.order();
    if order < 2 {
        return Err(Error::ShapeMismatch("need at least one data mode plus replicates".into()));
    }
    let n = y.dims()[order - 1];
    let cov_modes = if cfg.dependent_last_mode { order } else { order - 1 };
    if prior.sigma0.len() != cov_modes {
        return Err(Error::InvalidConfig(format!(
            "prior lists {} covariance modes, model has {cov_modes}",
            prior.sigma0.len()
        )));
    }
    let mean_dims = if cfg.dependent_last_mode { &y.dims()[..order - 1] } else { &y.dims()[..order - 1] };
    if prior.m0.dims() != mean_dims {
        return Err(Error::ShapeMismatch(format!(
            "prior mean dims {:?} do not match model mean dims {mean_dims:?}",
            prior.m0.dims()
        )));
    }

    let mut rng = RngStream::new(cfg.seed).substream(cfg.stream);
    let missing_positions: Vec<usize> = y
        .mask()
        .map(|m| m.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect())
        .unwrap_or_default();

    // working copy with masked cells initialized at the per-cell observed
    // mean
    let mut ywork = y.clone();
    if !missing_positions.is_empty() {
        let ybar = mle_mean(y)?;
        let cell_count = y.len() / n;
        for &p in &missing_positions {
            ywork.set_linear(p, ybar.data()[p % cell_count]);
        }
    }

    let (a_gamma, b_gamma, mut gamma) = match prior.gamma {
        GammaPrior::Fixed { value } => (0.0, 0.0, value),
        GammaPrior::Prior { a, b } => (a, b, a / b),
    };

    // initialize covariance at the prior mean, the mean at its prior mean
    let mut sigma_comps = Vec::with_capacity(cov_modes);
    for k in 0..cov_modes {
        if prior.identity_flags[k] {
            sigma_comps.push(SpdMatrix::identity(prior.sigma0[k].dim()));
        } else {
            let m_k = prior.sigma0[k].dim() as f64;
            let c = gamma / (prior.nu0[k] - m_k - 1.0);
            sigma_comps.push(prior.sigma0[k].scale(c)?);
        }
    }
    let mut sigma = SeparableCovariance::with_flags(sigma_comps, prior.identity_flags.clone())?;
    let mut m = prior.m0.clone();

    let step = |e: Error, iter: usize| Error::SamplerStep { iter, source: Box::new(e) };

    let mut states = Vec::new();
    let mut gamma0_trace = Vec::new();
    let mut gamma_traces = vec![Vec::new(); cov_modes];
    let mut loglik_trace = Vec::new();

    for iter in 1..=cfg.n_iters {
        if !missing_positions.is_empty() {
            let (mean_full, comps_full): (DenseArray, Vec<SpdMatrix>) = if cfg.dependent_last_mode
            {
                (m.outer_ones(n), sigma.comps().to_vec())
            } else {
                let mut comps = sigma.comps().to_vec();
                comps.push(SpdMatrix::identity(n));
                (m.outer_ones(n), comps)
            };
            impute_missing(&mut ywork, &mean_full, &comps_full, &mut rng)
                .map_err(|e| step(e, iter))?;
        }
        let mut yobs = ywork.clone();
        yobs.clear_mask();

        if cfg.dependent_last_mode {
            m = sample_m_dep(&yobs, &sigma, prior, &mut rng).map_err(|e| step(e, iter))?;
            for k in 0..cov_modes {
                if prior.identity_flags[k] {
                    continue;
                }
                let draw = sample_sigma_k_dep(&yobs, &m, &sigma, prior, gamma, k, &mut rng)
                    .map_err(|e| step(e, iter))?;
                sigma.set_comp(k, draw).map_err(|e| step(e, iter))?;
            }
        } else {
            m = sample_m_iid(&yobs, &sigma, prior, &mut rng).map_err(|e| step(e, iter))?;
            for k in 0..cov_modes {
                if prior.identity_flags[k] {
                    continue;
                }
                let draw = sample_sigma_k_iid(&yobs, &sigma, prior, gamma, k, &mut rng)
                    .map_err(|e| step(e, iter))?;
                sigma.set_comp(k, draw).map_err(|e| step(e, iter))?;
            }
        }
        if let GammaPrior::Prior { .. } = prior.gamma {
            gamma = sample_gamma(&sigma, prior, a_gamma, b_gamma, &mut rng);
        }

        if iter > cfg.burn_in && (iter - cfg.burn_in - 1) % cfg.thin == 0 {
            let dist = full_distribution(&m, &sigma, n, cfg.dependent_last_mode)
                .map_err(|e| step(e, iter))?;
            let ll = dist.log_density(&yobs).map_err(|e| step(e, iter))?;
            gamma0_trace.push(sigma.trace_product());
            for (k, trace) in gamma_traces.iter_mut().enumerate() {
                trace.push(sigma.comp(k).trace());
            }
            loglik_trace.push(ll);
            states.push(GibbsState {
                m: m.clone(),
                sigma: sigma.clone(),
                gamma,
                imputed: missing_positions.iter().map(|&p| ywork.data()[p]).collect(),
                iter,
            });
        }
    }

    Ok(Chain {
        states,
        gamma0_trace,
        gamma_traces,
        loglik_trace,
        meta: ChainMeta {
            seed: cfg.seed,
            stream: cfg.stream,
            rng_algorithm: RngStream::ALGORITHM.to_string(),
            n_iters: cfg.n_iters,
            burn_in: cfg.burn_in,
            thin: cfg.thin,
            dependent_last_mode: cfg.dependent_last_mode,
            dims: y.dims().to_vec(),
            identity_flags: prior.identity_flags.clone(),
        },
    })
}
