//! Shared oracles for the integration suites. Everything here goes
//! through dense Kronecker algebra and nalgebra's own factorizations, so
//! it exercises none of the library's structured code paths.

#![allow(dead_code)]

use anorm::array_normal::SeparableCovariance;
use anorm::linalg::{kron, RngStream, SpdMatrix};
use anorm::tensor::DenseArray;
use nalgebra::{DMatrix, DVector};

pub fn random_spd(n: usize, rng: &mut RngStream) -> SpdMatrix {
    let g = DMatrix::from_fn(n, n, |_, _| rng.standard_normal());
    SpdMatrix::new(&g * g.transpose() + DMatrix::identity(n, n) * 0.4).unwrap()
}

pub fn random_cov(dims: &[usize], rng: &mut RngStream) -> SeparableCovariance {
    SeparableCovariance::new(dims.iter().map(|&m| random_spd(m, rng)).collect())
}

pub fn random_array(dims: &[usize], rng: &mut RngStream) -> DenseArray {
    let len = dims.iter().product();
    DenseArray::new(dims.to_vec(), rng.normal_vec(len)).unwrap()
}

/// `Sigma_K kron ... kron Sigma_1`, matching the storage order of
/// `vec(Y)`.
pub fn kron_covariance(cov: &SeparableCovariance) -> DMatrix<f64> {
    let mut out = DMatrix::identity(1, 1);
    for comp in cov.comps() {
        out = kron(comp.values(), &out);
    }
    out
}

/// Dense multivariate normal log density via nalgebra's Cholesky.
pub fn mvn_log_density(y: &[f64], mu: &[f64], cov: &DMatrix<f64>) -> f64 {
    let d = y.len();
    let chol = nalgebra::Cholesky::new(cov.clone()).expect("oracle covariance is SPD");
    let dev = DVector::from_iterator(d, y.iter().zip(mu).map(|(a, b)| a - b));
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let quad = dev.dot(&chol.solve(&dev));
    -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + logdet + quad)
}

/// Conditional mean and covariance of the `target` coordinates of a
/// dense normal given the `given` coordinates, by blockwise inversion.
pub fn mvn_conditional(
    mu: &[f64],
    cov: &DMatrix<f64>,
    given: &[usize],
    given_values: &[f64],
    target: &[usize],
) -> (DVector<f64>, DMatrix<f64>) {
    let pick = |rows: &[usize], cols: &[usize]| {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| cov[(rows[i], cols[j])])
    };
    let mu_t = DVector::from_iterator(target.len(), target.iter().map(|&i| mu[i]));
    if given.is_empty() {
        return (mu_t, pick(target, target));
    }
    let c_gg = pick(given, given);
    let c_tg = pick(target, given);
    let c_tt = pick(target, target);
    let chol = nalgebra::Cholesky::new(c_gg).expect("oracle conditioning block is SPD");
    let dev = DVector::from_iterator(
        given.len(),
        given_values.iter().zip(given.iter()).map(|(v, &i)| v - mu[i]),
    );
    let mean = &mu_t + &c_tg * chol.solve(&dev);
    let cond = &c_tt - &c_tg * chol.solve(&c_tg.transpose());
    (mean, cond)
}

/// Linear positions (into the full array) of the cells whose mode-`k`
/// index lies in `sel`, ordered as the sliced array stores them.
pub fn slice_positions(dims: &[usize], k: usize, sel: &[usize]) -> Vec<usize> {
    let probe = DenseArray::zeros(dims.to_vec());
    let mut sliced_dims = dims.to_vec();
    sliced_dims[k] = sel.len();
    let sliced = DenseArray::zeros(sliced_dims);
    (0..sliced.len())
        .map(|p| {
            let mut idx = sliced.multi_index(p);
            idx[k] = sel[idx[k]];
            probe.linear_index(&idx)
        })
        .collect()
}
