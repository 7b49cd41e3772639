//! Symmetric positive-definite kernels, the seeded RNG stream, and the
//! matrix-variate samplers used by the Gibbs machinery.

use crate::error::{Error, Result};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

/// Relative asymmetry tolerated on SPD constructor input.
const SYM_TOL: f64 = 1e-8;
/// Cholesky pivot threshold, relative to the largest diagonal entry.
const PIVOT_TOL: f64 = 1e-12;

/// Seeded, splittable random stream. Identical seed and stream id give an
/// identical draw sequence; parallel chains take distinct substreams.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha12Rng,
    seed: u64,
    stream: u64,
}

impl RngStream {
    pub const ALGORITHM: &'static str = "chacha12";

    pub fn new(seed: u64) -> Self {
        RngStream { rng: ChaCha12Rng::seed_from_u64(seed), seed, stream: 0 }
    }

    /// Independent substream derived from the same seed.
    pub fn substream(&self, idx: u64) -> Self {
        let mut rng = ChaCha12Rng::seed_from_u64(self.seed);
        rng.set_stream(idx);
        RngStream { rng, seed: self.seed, stream: idx }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    pub fn normal_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.standard_normal()).collect()
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Gamma draw in the shape-rate convention, mean `shape / rate`.
    pub fn gamma(&mut self, shape: f64, rate: f64) -> f64 {
        let dist = Gamma::new(shape, 1.0 / rate).expect("gamma parameters must be positive");
        dist.sample(&mut self.rng)
    }

    fn chi2(&mut self, dof: f64) -> f64 {
        self.gamma(dof / 2.0, 0.5)
    }
}

/// Symmetric positive-definite matrix with its lower Cholesky factor
/// cached at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix {
    values: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl SpdMatrix {
    /// Validate symmetry, symmetrize exactly, and factor. Rejects inputs
    /// whose Cholesky pivots fall below `1e-12 * max diagonal`.
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.nrows() != values.ncols() {
            return Err(Error::ShapeMismatch(format!(
                "SPD matrix must be square, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        let scale = values.amax().max(f64::MIN_POSITIVE);
        let mut sym = values.clone();
        for i in 0..sym.nrows() {
            for j in 0..i {
                let asym = (values[(i, j)] - values[(j, i)]).abs();
                if asym > SYM_TOL * scale {
                    return Err(Error::ShapeMismatch(format!(
                        "matrix is not symmetric at ({i},{j}): relative asymmetry {:.3e}",
                        asym / scale
                    )));
                }
                let avg = 0.5 * (values[(i, j)] + values[(j, i)]);
                sym[(i, j)] = avg;
                sym[(j, i)] = avg;
            }
        }
        let chol = cholesky(&sym)?;
        Ok(SpdMatrix { values: sym, chol })
    }

    pub fn identity(n: usize) -> Self {
        SpdMatrix { values: DMatrix::identity(n, n), chol: DMatrix::identity(n, n) }
    }

    pub fn is_identity(&self) -> bool {
        let id = DMatrix::identity(self.dim(), self.dim());
        (&self.values - id).amax() == 0.0
    }

    pub fn dim(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn chol_lower(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn trace(&self) -> f64 {
        self.values.trace()
    }

    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.dim()).map(|i| self.chol[(i, i)].ln()).sum::<f64>()
    }

    /// `L^{-1} x` for the cached lower factor.
    pub fn whiten(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol
            .solve_lower_triangular(x)
            .expect("cached Cholesky factor has positive diagonal")
    }

    /// `S^{-1} x` via two triangular solves.
    pub fn solve(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let y = self.whiten(x);
        self.chol
            .tr_solve_lower_triangular(&y)
            .expect("cached Cholesky factor has positive diagonal")
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.solve(&DMatrix::identity(self.dim(), self.dim()))
    }

    /// `L^{-1}`, the whitening matrix itself.
    pub fn chol_inverse(&self) -> DMatrix<f64> {
        self.whiten(&DMatrix::identity(self.dim(), self.dim()))
    }

    pub fn scale(&self, c: f64) -> Result<Self> {
        if c <= 0.0 {
            return Err(Error::InvalidConfig(format!("scale factor {c} must be positive")));
        }
        Ok(SpdMatrix { values: &self.values * c, chol: &self.chol * c.sqrt() })
    }

    /// Add `eps * I`, refactoring.
    pub fn ridge(&self, eps: f64) -> Result<Self> {
        let mut v = self.values.clone();
        for i in 0..v.nrows() {
            v[(i, i)] += eps;
        }
        SpdMatrix::new(v)
    }

    /// Correlation form: unit diagonal.
    pub fn to_correlation(&self) -> DMatrix<f64> {
        correlation_of(&self.values)
    }
}

pub fn correlation_of(s: &DMatrix<f64>) -> DMatrix<f64> {
    let n = s.nrows();
    let d: Vec<f64> = (0..n).map(|i| s[(i, i)].sqrt()).collect();
    DMatrix::from_fn(n, n, |i, j| s[(i, j)] / (d[i] * d[j]))
}

/// Lower Cholesky factor of a symmetric matrix; fails with the offending
/// pivot index (zero-based) when a pivot drops below tolerance.
pub fn cholesky(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = s.nrows();
    let max_diag = (0..n).map(|i| s[(i, i)].abs()).fold(0.0f64, f64::max).max(f64::MIN_POSITIVE);
    let tol = PIVOT_TOL * max_diag;
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = s[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= tol {
            return Err(Error::NotPositiveDefinite { pivot: j, value: d });
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in (j + 1)..n {
            let mut v = s[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / djj;
        }
    }
    Ok(l)
}

/// Kronecker product with the standard block layout.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    DMatrix::from_fn(ar * br, ac * bc, |i, j| a[(i / br, j / bc)] * b[(i % br, j % bc)])
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi sweeps.
/// Returns eigenvalues in descending order with matching orthonormal
/// eigenvector columns.
pub fn sym_eigen(s: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    const MAX_SWEEPS: usize = 100;
    const ROT_TOL: f64 = 1e-12;
    let n = s.nrows();
    let mut a = s.clone();
    let mut v = DMatrix::identity(n, n);
    let scale = a.amax().max(f64::MIN_POSITIVE);
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(a[(p, q)].abs());
            }
        }
        if off <= ROT_TOL * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= ROT_TOL * scale {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = c * vkp - sn * vkq;
                    v[(k, q)] = sn * vkp + c * vkq;
                }
            }
        }
    }
    if !converged {
        // final check after the last sweep
        let mut off = 0.0f64;
        for p in 0..n {
            for q in (p + 1)..n {
                off = off.max(a[(p, q)].abs());
            }
        }
        if off > ROT_TOL * scale {
            return Err(Error::EigenConvergence { sweeps: MAX_SWEEPS });
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].partial_cmp(&a[(i, i)]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (col, &i) in order.iter().enumerate() {
        vectors.set_column(col, &v.column(i));
    }
    Ok((eigenvalues, vectors))
}

/// Inverse-Wishart draw with `E[Sigma] = scale / (nu - m - 1)`, via the
/// Bartlett decomposition of the Wishart for `Sigma^{-1}`.
pub fn rinvwish(scale: &SpdMatrix, nu: f64, rng: &mut RngStream) -> Result<SpdMatrix> {
    let m = scale.dim();
    if nu <= (m as f64) - 1.0 {
        return Err(Error::InvalidDof { nu, dim: m });
    }
    // A A^T ~ Wishart(I, nu); Sigma = L0 (A A^T)^{-1} L0^T = F F^T with
    // F = (A^{-1} L0^T)^T
    let mut a = DMatrix::zeros(m, m);
    for i in 0..m {
        a[(i, i)] = rng.chi2(nu - i as f64).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.standard_normal();
        }
    }
    let c = a
        .solve_lower_triangular(&scale.chol_lower().transpose())
        .expect("Bartlett diagonal is positive");
    let f = c.transpose();
    let values = &f * f.transpose();
    SpdMatrix::new(values)
}

/// Regression matrix `S[b,a] S[a,a]^{-1}` and Schur complement
/// `S[b,b] - S[b,a] S[a,a]^{-1} S[a,b]` for disjoint index sets.
pub fn conditional_blocks(
    s: &SpdMatrix,
    a: &[usize],
    b: &[usize],
) -> Result<(DMatrix<f64>, SpdMatrix)> {
    let n = s.dim();
    let mut seen = vec![false; n];
    for &i in a.iter().chain(b) {
        if i >= n {
            return Err(Error::InvalidIndex(format!("index {i} out of range for dim {n}")));
        }
        if seen[i] {
            return Err(Error::InvalidIndex(format!(
                "index {i} appears in both (or twice within) the conditioning sets"
            )));
        }
        seen[i] = true;
    }
    let v = s.values();
    let s_bb = DMatrix::from_fn(b.len(), b.len(), |i, j| v[(b[i], b[j])]);
    if a.is_empty() {
        return Ok((DMatrix::zeros(b.len(), 0), SpdMatrix::new(s_bb)?));
    }
    let s_aa = SpdMatrix::new(DMatrix::from_fn(a.len(), a.len(), |i, j| v[(a[i], a[j])]))
        .map_err(|e| Error::Singular(format!("S[a,a] block: {e}")))?;
    let s_ab = DMatrix::from_fn(a.len(), b.len(), |i, j| v[(a[i], b[j])]);
    // X = L_aa^{-1} S[a,b]; Schur = S_bb - X^T X; regression = (S_aa^{-1} S_ab)^T
    let x = s_aa.whiten(&s_ab);
    let schur = &s_bb - x.transpose() * &x;
    let regression = s_aa.solve(&s_ab).transpose();
    Ok((regression, SpdMatrix::new(schur)?))
}
