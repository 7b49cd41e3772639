//! Array normal distributions with separable (Tucker-product) covariance:
//! densities, sampling, replication and mode-wise conditionals.

use crate::error::{Error, Result};
use crate::linalg::{conditional_blocks, kron, RngStream, SpdMatrix};
use crate::tensor::DenseArray;
use nalgebra::DMatrix;

/// Element cap for materializing the dense Kronecker covariance.
pub const COVARIANCE_VEC_CAP: usize = 4096;

/// Ordered per-mode covariance components `Sigma_1, ..., Sigma_K`.
/// A flagged component is constrained to the identity and is skipped by
/// estimation code.
#[derive(Debug, Clone)]
pub struct SeparableCovariance {
    comps: Vec<SpdMatrix>,
    identity_flags: Vec<bool>,
}

impl SeparableCovariance {
    pub fn new(comps: Vec<SpdMatrix>) -> Self {
        let flags = vec![false; comps.len()];
        SeparableCovariance { comps, identity_flags: flags }
    }

    pub fn identity(dims: &[usize]) -> Self {
        SeparableCovariance {
            comps: dims.iter().map(|&m| SpdMatrix::identity(m)).collect(),
            identity_flags: vec![true; dims.len()],
        }
    }

    pub fn with_flags(comps: Vec<SpdMatrix>, identity_flags: Vec<bool>) -> Result<Self> {
        if comps.len() != identity_flags.len() {
            return Err(Error::ShapeMismatch(format!(
                "{} components but {} identity flags",
                comps.len(),
                identity_flags.len()
            )));
        }
        for (k, (c, &flag)) in comps.iter().zip(&identity_flags).enumerate() {
            if flag && !c.is_identity() {
                return Err(Error::InvalidConfig(format!(
                    "mode {} is flagged identity but its component is not I",
                    k + 1
                )));
            }
        }
        Ok(SeparableCovariance { comps, identity_flags })
    }

    pub fn order(&self) -> usize {
        self.comps.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.comps.iter().map(|c| c.dim()).collect()
    }

    pub fn comps(&self) -> &[SpdMatrix] {
        &self.comps
    }

    pub fn comp(&self, k: usize) -> &SpdMatrix {
        &self.comps[k]
    }

    pub fn identity_flags(&self) -> &[bool] {
        &self.identity_flags
    }

    pub fn is_identity_mode(&self, k: usize) -> bool {
        self.identity_flags[k]
    }

    /// Replace component k, clearing its identity flag.
    pub fn set_comp(&mut self, k: usize, comp: SpdMatrix) -> Result<()> {
        if comp.dim() != self.comps[k].dim() {
            return Err(Error::ShapeMismatch(format!(
                "component {} has dim {}, expected {}",
                k + 1,
                comp.dim(),
                self.comps[k].dim()
            )));
        }
        self.comps[k] = comp;
        self.identity_flags[k] = false;
        Ok(())
    }

    /// Total-variation product `prod_k tr(Sigma_k)`.
    pub fn trace_product(&self) -> f64 {
        self.comps.iter().map(|c| c.trace()).product()
    }

    /// Dense `Cov(vec Y) = Sigma_K kron ... kron Sigma_1`. Oracle-scale
    /// only; fails above the element cap.
    pub fn covariance_vec(&self) -> Result<DMatrix<f64>> {
        self.covariance_vec_capped(COVARIANCE_VEC_CAP)
    }

    pub fn covariance_vec_capped(&self, cap: usize) -> Result<DMatrix<f64>> {
        let size: usize = self.dims().iter().product();
        if size > cap {
            return Err(Error::CapExceeded { size, cap });
        }
        let mut out = DMatrix::identity(1, 1);
        for c in self.comps.iter().rev() {
            out = kron(&out, c.values());
        }
        Ok(out)
    }

    /// Covariance of `Y x_k G`: component k becomes `G Sigma_k G^T`.
    pub fn push_mode(&self, g: &DMatrix<f64>, k: usize) -> Result<Self> {
        if k >= self.order() {
            return Err(Error::InvalidMode { mode: k + 1, order: self.order() });
        }
        if g.ncols() != self.comps[k].dim() {
            return Err(Error::ShapeMismatch(format!(
                "push into mode {}: matrix has {} columns, component dim {}",
                k + 1,
                g.ncols(),
                self.comps[k].dim()
            )));
        }
        let new_comp = SpdMatrix::new(g * self.comps[k].values() * g.transpose())?;
        let mut out = self.clone();
        out.comps[k] = new_comp;
        out.identity_flags[k] = false;
        Ok(out)
    }

    /// Apply `L_k^{-1}` on every mode (the whitening Tucker product).
    pub fn whiten_array(&self, x: &DenseArray) -> Result<DenseArray> {
        let mut out = x.clone();
        for (k, c) in self.comps.iter().enumerate() {
            if self.identity_flags[k] {
                continue;
            }
            let u = out.unfold(k)?;
            let w = c.whiten(&u);
            let mut dims = out.dims().to_vec();
            dims[k] = w.nrows();
            out = DenseArray::fold(&w, k, &dims)?;
        }
        Ok(out)
    }

    /// Apply `L_k` on every mode (coloring a standard-normal array).
    pub fn color_array(&self, z: &DenseArray) -> Result<DenseArray> {
        let mut out = z.clone();
        for (k, c) in self.comps.iter().enumerate() {
            if self.identity_flags[k] {
                continue;
            }
            out = out.kmode_product(c.chol_lower(), k)?;
        }
        Ok(out)
    }

    /// Sum of the per-mode log-determinant terms of the density,
    /// `sum_k (m / m_k) logdet Sigma_k`.
    fn logdet_total(&self, m: usize) -> f64 {
        self.comps
            .iter()
            .map(|c| (m as f64 / c.dim() as f64) * c.logdet())
            .sum()
    }
}

/// The `anorm(M, Sigma_1 o ... o Sigma_K)` distribution.
#[derive(Debug, Clone)]
pub struct ArrayNormal {
    mean: DenseArray,
    cov: SeparableCovariance,
}

impl ArrayNormal {
    pub fn new(mean: DenseArray, cov: SeparableCovariance) -> Result<Self> {
        if mean.dims() != cov.dims().as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "mean dims {:?} do not match covariance dims {:?}",
                mean.dims(),
                cov.dims()
            )));
        }
        Ok(ArrayNormal { mean, cov })
    }

    pub fn standard(dims: &[usize]) -> Self {
        ArrayNormal {
            mean: DenseArray::zeros(dims.to_vec()),
            cov: SeparableCovariance::identity(dims),
        }
    }

    pub fn mean(&self) -> &DenseArray {
        &self.mean
    }

    pub fn cov(&self) -> &SeparableCovariance {
        &self.cov
    }

    pub fn dims(&self) -> &[usize] {
        self.mean.dims()
    }

    pub fn log_density(&self, y: &DenseArray) -> Result<f64> {
        if y.dims() != self.dims() {
            return Err(Error::ShapeMismatch(format!(
                "density argument dims {:?} do not match distribution dims {:?}",
                y.dims(),
                self.dims()
            )));
        }
        if y.has_missing() {
            return Err(Error::MissingData(
                "log_density requires fully observed data; impute first".into(),
            ));
        }
        let m = y.len();
        let resid = self.cov.whiten_array(&y.sub(&self.mean)?)?;
        Ok(-(m as f64) / 2.0 * (2.0 * std::f64::consts::PI).ln()
            - 0.5 * self.cov.logdet_total(m)
            - 0.5 * resid.norm2())
    }

    /// One draw: `M + Z x {L_1, ..., L_K}` with Z standard normal.
    pub fn sample(&self, rng: &mut RngStream) -> DenseArray {
        let z = DenseArray::new(self.dims().to_vec(), rng.normal_vec(self.mean.len()))
            .expect("dims are valid");
        let colored = self.cov.color_array(&z).expect("shapes agree by construction");
        self.mean.add(&colored).expect("shapes agree by construction")
    }

    /// i.i.d. replication: order K+1 with trailing dimension n, identity
    /// covariance on the new mode.
    pub fn replicate(&self, n: usize) -> Result<ArrayNormal> {
        if n == 0 {
            return Err(Error::InvalidConfig("replication count must be >= 1".into()));
        }
        let mean = self.mean.outer_ones(n);
        let mut comps = self.cov.comps.clone();
        let mut flags = self.cov.identity_flags.clone();
        comps.push(SpdMatrix::identity(n));
        flags.push(true);
        Ok(ArrayNormal { mean, cov: SeparableCovariance { comps, identity_flags: flags } })
    }

    /// Conditional distribution of the mode-k slices `b` given observed
    /// slices `a` (pass `None` for an unconditional marginal of `b`).
    pub fn condition_mode(
        &self,
        k: usize,
        a: &[usize],
        ya: Option<&DenseArray>,
        b: &[usize],
    ) -> Result<ArrayNormal> {
        if k >= self.dims().len() {
            return Err(Error::InvalidMode { mode: k + 1, order: self.dims().len() });
        }
        if b.is_empty() {
            return Err(Error::InvalidIndex("target index set b is empty".into()));
        }
        let (regression, schur) = conditional_blocks(self.cov.comp(k), a, b)?;
        let mean_b = self.mean.slice_mode(k, b)?;
        let mean = if a.is_empty() {
            mean_b
        } else {
            let ya = ya.ok_or_else(|| {
                Error::InvalidConfig("observed slices Ya required when a is nonempty".into())
            })?;
            if ya.has_missing() {
                return Err(Error::MissingData(
                    "conditioning data contains missing cells".into(),
                ));
            }
            let mean_a = self.mean.slice_mode(k, a)?;
            let dev = ya.sub(&mean_a)?;
            mean_b.add(&dev.kmode_product(&regression, k)?)?
        };
        let mut comps = self.cov.comps.clone();
        let mut flags = self.cov.identity_flags.clone();
        comps[k] = schur;
        flags[k] = false;
        ArrayNormal::new(mean, SeparableCovariance { comps, identity_flags: flags })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_spd(n: usize, rng: &mut RngStream) -> SpdMatrix {
        let g = DMatrix::from_fn(n, n, |_, _| rng.standard_normal());
        SpdMatrix::new(&g * g.transpose() + DMatrix::identity(n, n) * 0.5).unwrap()
    }

    #[test]
    fn log_density_standard_at_zero() {
        // dims (2,3), all-identity covariance, Y = M = 0
        let dist = ArrayNormal::standard(&[2, 3]);
        let y = DenseArray::zeros(vec![2, 3]);
        let expected = -3.0 * (2.0 * std::f64::consts::PI).ln();
        assert_abs_diff_eq!(dist.log_density(&y).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn log_density_k1_matches_mvn() {
        let mut rng = RngStream::new(31);
        let sigma = random_spd(4, &mut rng);
        let mu = DenseArray::new(vec![4], rng.normal_vec(4)).unwrap();
        let dist = ArrayNormal::new(mu.clone(), SeparableCovariance::new(vec![sigma.clone()]))
            .unwrap();
        let y = DenseArray::new(vec![4], rng.normal_vec(4)).unwrap();
        let dev = DMatrix::from_column_slice(4, 1, y.sub(&mu).unwrap().data());
        let quad = (dev.transpose() * sigma.solve(&dev))[(0, 0)];
        let expected = -2.0 * (2.0 * std::f64::consts::PI).ln() - 0.5 * sigma.logdet() - 0.5 * quad;
        assert_abs_diff_eq!(dist.log_density(&y).unwrap(), expected, epsilon = 1e-10);
    }

    #[test]
    fn affine_invariance_exact() {
        let mut rng = RngStream::new(32);
        let comps = vec![random_spd(2, &mut rng), random_spd(3, &mut rng)];
        let m = DenseArray::new(vec![2, 3], rng.normal_vec(6)).unwrap();
        let y = DenseArray::new(vec![2, 3], rng.normal_vec(6)).unwrap();
        let centered = ArrayNormal::new(
            DenseArray::zeros(vec![2, 3]),
            SeparableCovariance::new(comps.clone()),
        )
        .unwrap();
        let shifted = ArrayNormal::new(m.clone(), SeparableCovariance::new(comps)).unwrap();
        assert_eq!(
            shifted.log_density(&y).unwrap(),
            centered.log_density(&y.sub(&m).unwrap()).unwrap()
        );
    }

    #[test]
    fn scale_gauge_freedom() {
        let mut rng = RngStream::new(33);
        let s1 = random_spd(2, &mut rng);
        let s2 = random_spd(3, &mut rng);
        let y = DenseArray::new(vec![2, 3], rng.normal_vec(6)).unwrap();
        let mean = DenseArray::zeros(vec![2, 3]);
        let c = 3.7;
        let base = ArrayNormal::new(
            mean.clone(),
            SeparableCovariance::new(vec![s1.clone(), s2.clone()]),
        )
        .unwrap();
        let rescaled = ArrayNormal::new(
            mean,
            SeparableCovariance::new(vec![s1.scale(c).unwrap(), s2.scale(1.0 / c).unwrap()]),
        )
        .unwrap();
        assert_abs_diff_eq!(
            base.log_density(&y).unwrap(),
            rescaled.log_density(&y).unwrap(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn covariance_vec_diag_case() {
        let s1 = SpdMatrix::new(DMatrix::from_diagonal(&nalgebra::dvector![1.0, 2.0])).unwrap();
        let s2 = SpdMatrix::new(DMatrix::from_diagonal(&nalgebra::dvector![3.0, 4.0])).unwrap();
        let cov = SeparableCovariance::new(vec![s1, s2]);
        let v = cov.covariance_vec().unwrap();
        let expected = DMatrix::from_diagonal(&nalgebra::dvector![3.0, 6.0, 4.0, 8.0]);
        assert_eq!(v, expected);
        assert_abs_diff_eq!(v.trace(), cov.trace_product(), epsilon = 1e-12);
    }

    #[test]
    fn covariance_vec_identity_and_cap() {
        let cov = SeparableCovariance::identity(&[2, 3]);
        assert_eq!(cov.covariance_vec().unwrap(), DMatrix::identity(6, 6));
        let big = SeparableCovariance::identity(&[100, 100]);
        assert!(matches!(big.covariance_vec(), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn push_mode_identity_and_scalar() {
        let mut rng = RngStream::new(34);
        let cov = SeparableCovariance::new(vec![random_spd(3, &mut rng), random_spd(2, &mut rng)]);
        let same = cov.push_mode(&DMatrix::identity(3, 3), 0).unwrap();
        assert_abs_diff_eq!(
            same.comp(0).values().clone(),
            cov.comp(0).values().clone(),
            epsilon = 1e-12
        );
        let scaled = cov.push_mode(&(DMatrix::identity(3, 3) * 2.0), 0).unwrap();
        assert_abs_diff_eq!(
            scaled.comp(0).values().clone(),
            cov.comp(0).values() * 4.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn replicate_density_factorizes() {
        let mut rng = RngStream::new(35);
        let cov = SeparableCovariance::new(vec![random_spd(2, &mut rng), random_spd(2, &mut rng)]);
        let mean = DenseArray::new(vec![2, 2], rng.normal_vec(4)).unwrap();
        let dist = ArrayNormal::new(mean, cov).unwrap();
        let n = 3;
        let rep = dist.replicate(n).unwrap();
        let draws: Vec<DenseArray> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        let stacked = DenseArray::stack(&draws).unwrap();
        let sum: f64 = draws.iter().map(|y| dist.log_density(y).unwrap()).sum();
        assert_abs_diff_eq!(rep.log_density(&stacked).unwrap(), sum, epsilon = 1e-9);
    }

    #[test]
    fn replicate_singleton_keeps_density() {
        let dist = ArrayNormal::standard(&[2, 2]);
        let rep = dist.replicate(1).unwrap();
        assert_eq!(rep.dims(), &[2, 2, 1]);
    }

    #[test]
    fn condition_identity_cov_is_marginal() {
        let mut rng = RngStream::new(36);
        let mean = DenseArray::new(vec![3, 2], rng.normal_vec(6)).unwrap();
        let dist = ArrayNormal::new(mean.clone(), SeparableCovariance::identity(&[3, 2])).unwrap();
        let ya = DenseArray::new(vec![1, 2], rng.normal_vec(2)).unwrap();
        let cond = dist.condition_mode(0, &[0], Some(&ya), &[1, 2]).unwrap();
        assert_eq!(cond.mean(), &mean.slice_mode(0, &[1, 2]).unwrap());
        assert_eq!(cond.cov().comp(0).values(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn condition_empty_a_is_identity_on_distribution() {
        let mut rng = RngStream::new(37);
        let comps = vec![random_spd(3, &mut rng), random_spd(2, &mut rng)];
        let mean = DenseArray::new(vec![3, 2], rng.normal_vec(6)).unwrap();
        let dist = ArrayNormal::new(mean.clone(), SeparableCovariance::new(comps)).unwrap();
        let cond = dist.condition_mode(0, &[], None, &[0, 1, 2]).unwrap();
        assert_eq!(cond.mean(), &mean);
        assert_abs_diff_eq!(
            cond.cov().comp(0).values().clone(),
            dist.cov().comp(0).values().clone(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn condition_k1_matches_vector_normal() {
        let mut rng = RngStream::new(38);
        let sigma = random_spd(4, &mut rng);
        let mu = DenseArray::new(vec![4], rng.normal_vec(4)).unwrap();
        let dist =
            ArrayNormal::new(mu.clone(), SeparableCovariance::new(vec![sigma.clone()])).unwrap();
        let a = [0, 2];
        let b = [1, 3];
        let ya = DenseArray::new(vec![2], rng.normal_vec(2)).unwrap();
        let cond = dist.condition_mode(0, &a, Some(&ya), &b).unwrap();
        // textbook formula
        let (reg, schur) = conditional_blocks(&sigma, &a, &b).unwrap();
        let dev = DMatrix::from_column_slice(2, 1, &[ya.data()[0] - mu.data()[0], ya.data()[1] - mu.data()[2]]);
        let expect_mean = &reg * dev;
        assert_abs_diff_eq!(cond.mean().data()[0], mu.data()[1] + expect_mean[(0, 0)], epsilon = 1e-10);
        assert_abs_diff_eq!(cond.mean().data()[1], mu.data()[3] + expect_mean[(1, 0)], epsilon = 1e-10);
        assert_abs_diff_eq!(
            cond.cov().comp(0).values().clone(),
            schur.values().clone(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn sample_concentrates_with_tiny_covariance() {
        let mut rng = RngStream::new(39);
        let mean = DenseArray::constant(vec![2, 2], 5.0);
        let tiny = SpdMatrix::new(DMatrix::identity(2, 2) * 1e-6).unwrap();
        let dist =
            ArrayNormal::new(mean.clone(), SeparableCovariance::new(vec![tiny.clone(), tiny]))
                .unwrap();
        let draw = dist.sample(&mut rng);
        for (d, m) in draw.data().iter().zip(mean.data()) {
            assert!((d - m).abs() < 1e-2);
        }
    }

    #[test]
    fn density_rejects_missing() {
        let dist = ArrayNormal::standard(&[2]);
        let y = DenseArray::new(vec![2], vec![0.0, 0.0])
            .unwrap()
            .with_mask(vec![false, true])
            .unwrap();
        assert!(matches!(dist.log_density(&y), Err(Error::MissingData(_))));
    }
}
