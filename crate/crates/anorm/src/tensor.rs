//! Dense K-way arrays with colexicographic storage, matricization and
//! multilinear (k-mode / Tucker) products.
//!
//! Storage order: the element at multi-index `(i_1, ..., i_K)` (zero-based)
//! lives at linear position `i_1 + m_1*i_2 + m_1*m_2*i_3 + ...`, so a
//! lower-numbered mode's index varies fastest. All unfoldings order the
//! retained modes by the same rule.

use crate::error::{Error, Result};
use nalgebra::DMatrix;

/// Dense real array of order K. Mode indices in the public API are
/// zero-based; CLI layers translate to one-based for display.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseArray {
    dims: Vec<usize>,
    data: Vec<f64>,
    /// `true` marks a missing cell. The mask is authoritative; missing
    /// cells hold a quiet NaN only as a tripwire.
    mask: Option<Vec<bool>>,
}

/// Ordered list of per-mode matrices for a Tucker product; entry k must
/// have as many columns as the array has elements in mode k.
#[derive(Debug, Clone)]
pub struct MatrixList(pub Vec<DMatrix<f64>>);

impl MatrixList {
    pub fn identity(dims: &[usize]) -> Self {
        MatrixList(dims.iter().map(|&m| DMatrix::identity(m, m)).collect())
    }
}

impl DenseArray {
    pub fn new(dims: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if dims.is_empty() || dims.iter().any(|&m| m == 0) {
            return Err(Error::ShapeMismatch(format!(
                "dimension vector {dims:?} must be nonempty and positive"
            )));
        }
        let m: usize = dims.iter().product();
        if data.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "data length {} does not match product of dims {m}",
                data.len()
            )));
        }
        Ok(DenseArray { dims, data, mask: None })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let m = dims.iter().product();
        DenseArray { dims, data: vec![0.0; m], mask: None }
    }

    pub fn constant(dims: Vec<usize>, value: f64) -> Self {
        let m = dims.iter().product();
        DenseArray { dims, data: vec![value; m], mask: None }
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.data.len() {
            return Err(Error::ShapeMismatch(format!(
                "mask length {} does not match data length {}",
                mask.len(),
                self.data.len()
            )));
        }
        if mask.iter().any(|&b| b) {
            for (v, &miss) in self.data.iter_mut().zip(&mask) {
                if miss {
                    *v = f64::NAN;
                }
            }
            self.mask = Some(mask);
        }
        Ok(self)
    }

    pub fn order(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn mask(&self) -> Option<&[bool]> {
        self.mask.as_deref()
    }

    pub fn missing_count(&self) -> usize {
        self.mask.as_ref().map_or(0, |m| m.iter().filter(|&&b| b).count())
    }

    pub fn has_missing(&self) -> bool {
        self.missing_count() > 0
    }

    /// Drop the mask, keeping whatever values the cells currently hold.
    pub fn clear_mask(&mut self) {
        self.mask = None;
    }

    /// Set the value at a masked (or any) cell by linear position.
    pub fn set_linear(&mut self, pos: usize, value: f64) {
        self.data[pos] = value;
    }

    /// Product of dims over modes before `k` (the stride of mode `k`).
    fn stride(&self, k: usize) -> usize {
        self.dims[..k].iter().product()
    }

    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.dims.len());
        let mut pos = 0;
        let mut stride = 1;
        for (i, &m) in idx.iter().zip(&self.dims) {
            debug_assert!(*i < m);
            pos += i * stride;
            stride *= m;
        }
        pos
    }

    pub fn multi_index(&self, mut pos: usize) -> Vec<usize> {
        let mut idx = Vec::with_capacity(self.dims.len());
        for &m in &self.dims {
            idx.push(pos % m);
            pos /= m;
        }
        idx
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let pos = self.linear_index(idx);
        self.data[pos] = value;
    }

    fn check_mode(&self, k: usize) -> Result<()> {
        if k >= self.order() {
            return Err(Error::InvalidMode { mode: k + 1, order: self.order() });
        }
        Ok(())
    }

    /// k-mode matricization: an `m_k x (m/m_k)` matrix whose columns are
    /// the mode-k fibers, with the remaining modes ordered lower-fastest.
    pub fn unfold(&self, k: usize) -> Result<DMatrix<f64>> {
        self.check_mode(k)?;
        let mk = self.dims[k];
        let ncols = self.len() / mk;
        let sk = self.stride(k);
        let mut out = DMatrix::zeros(mk, ncols);
        for (p, &v) in self.data.iter().enumerate() {
            let row = (p / sk) % mk;
            let col = (p % sk) + (p / (sk * mk)) * sk;
            out[(row, col)] = v;
        }
        Ok(out)
    }

    /// Inverse of `unfold`: reshape an `dims[k] x (m/dims[k])` matrix back
    /// into an array with the given dimension vector.
    pub fn fold(mat: &DMatrix<f64>, k: usize, dims: &[usize]) -> Result<Self> {
        if k >= dims.len() {
            return Err(Error::InvalidMode { mode: k + 1, order: dims.len() });
        }
        let m: usize = dims.iter().product();
        let mk = dims[k];
        if mat.nrows() != mk || mat.ncols() != m / mk {
            return Err(Error::ShapeMismatch(format!(
                "fold of a {}x{} matrix into dims {dims:?} at mode {}",
                mat.nrows(),
                mat.ncols(),
                k + 1
            )));
        }
        let sk: usize = dims[..k].iter().product();
        let mut data = vec![0.0; m];
        for col in 0..mat.ncols() {
            let low = col % sk.max(1);
            let high = col / sk.max(1);
            for row in 0..mk {
                let p = low + row * sk + high * sk * mk;
                data[p] = mat[(row, col)];
            }
        }
        DenseArray::new(dims.to_vec(), data)
    }

    /// k-mode product with an `n x m_k` matrix; mode k's dimension becomes n.
    pub fn kmode_product(&self, a: &DMatrix<f64>, k: usize) -> Result<Self> {
        self.check_mode(k)?;
        if a.ncols() != self.dims[k] {
            return Err(Error::ShapeMismatch(format!(
                "mode-{} product: matrix has {} columns, mode has dimension {}",
                k + 1,
                a.ncols(),
                self.dims[k]
            )));
        }
        let unfolded = self.unfold(k)?;
        let product = a * unfolded;
        let mut new_dims = self.dims.clone();
        new_dims[k] = a.nrows();
        Self::fold(&product, k, &new_dims)
    }

    /// Tucker product: sequential k-mode products with one matrix per mode.
    pub fn tucker_product(&self, mats: &MatrixList) -> Result<Self> {
        if mats.0.len() != self.order() {
            return Err(Error::ShapeMismatch(format!(
                "matrix list has {} entries for an order-{} array",
                mats.0.len(),
                self.order()
            )));
        }
        let mut out = self.clone();
        for (k, a) in mats.0.iter().enumerate() {
            out = out.kmode_product(a, k)?;
        }
        Ok(out)
    }

    /// Tucker product where `None` leaves a mode untouched.
    pub fn tucker_apply(&self, mats: &[Option<&DMatrix<f64>>]) -> Result<Self> {
        if mats.len() != self.order() {
            return Err(Error::ShapeMismatch(format!(
                "matrix list has {} entries for an order-{} array",
                mats.len(),
                self.order()
            )));
        }
        let mut out = self.clone();
        for (k, a) in mats.iter().enumerate() {
            if let Some(a) = a {
                out = out.kmode_product(a, k)?;
            }
        }
        Ok(out)
    }

    pub fn inner(&self, other: &Self) -> Result<f64> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(format!(
                "inner product of arrays with dims {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        Ok(self.data.iter().zip(&other.data).map(|(x, y)| x * y).sum())
    }

    pub fn norm2(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Stack n equal-shaped arrays into an order K+1 array whose last
    /// mode indexes the replicates.
    pub fn stack(arrays: &[DenseArray]) -> Result<Self> {
        let first = arrays
            .first()
            .ok_or_else(|| Error::ShapeMismatch("stack of zero arrays".into()))?;
        let mut data = Vec::with_capacity(first.len() * arrays.len());
        let mut any_mask = false;
        for a in arrays {
            if a.dims != first.dims {
                return Err(Error::ShapeMismatch(format!(
                    "ragged stack: dims {:?} vs {:?}",
                    a.dims, first.dims
                )));
            }
            any_mask |= a.mask.is_some();
            data.extend_from_slice(&a.data);
        }
        let mut dims = first.dims.clone();
        dims.push(arrays.len());
        let out = DenseArray::new(dims, data)?;
        if any_mask {
            let mask = arrays
                .iter()
                .flat_map(|a| match &a.mask {
                    Some(m) => m.clone(),
                    None => vec![false; a.len()],
                })
                .collect();
            out.with_mask(mask)
        } else {
            Ok(out)
        }
    }

    /// Slice of the last mode at position `t`, as an order K-1 array.
    pub fn last_mode_slice(&self, t: usize) -> Result<Self> {
        let k = self.order() - 1;
        if t >= self.dims[k] {
            return Err(Error::InvalidIndex(format!(
                "slice {t} of last mode with dimension {}",
                self.dims[k]
            )));
        }
        let block = self.len() / self.dims[k];
        let data = self.data[t * block..(t + 1) * block].to_vec();
        let out = DenseArray::new(self.dims[..k].to_vec(), data)?;
        if let Some(mask) = &self.mask {
            out.with_mask(mask[t * block..(t + 1) * block].to_vec())
        } else {
            Ok(out)
        }
    }

    /// Restrict mode k to the index subset `idx` (in the given order).
    pub fn slice_mode(&self, k: usize, idx: &[usize]) -> Result<Self> {
        self.check_mode(k)?;
        if idx.is_empty() {
            return Err(Error::InvalidIndex("empty index subset".into()));
        }
        let mk = self.dims[k];
        let mut seen = vec![false; mk];
        for &i in idx {
            if i >= mk {
                return Err(Error::InvalidIndex(format!(
                    "index {i} out of range for mode {} with dimension {mk}",
                    k + 1
                )));
            }
            if seen[i] {
                return Err(Error::InvalidIndex(format!("duplicate index {i}")));
            }
            seen[i] = true;
        }
        let mut new_dims = self.dims.clone();
        new_dims[k] = idx.len();
        let sk = self.stride(k);
        let high_count = self.len() / (sk * mk);
        // appending the sk-block for each kept index, high-block by
        // high-block, lands each cell at its storage position under the
        // relabeled mode k
        let mut data = Vec::with_capacity(new_dims.iter().product());
        let mut mask = self.mask.as_ref().map(|_| Vec::new());
        for high in 0..high_count {
            for &i in idx {
                let base = high * sk * mk + i * sk;
                data.extend_from_slice(&self.data[base..base + sk]);
                if let (Some(out_mask), Some(in_mask)) = (&mut mask, &self.mask) {
                    out_mask.extend_from_slice(&in_mask[base..base + sk]);
                }
            }
        }
        let out = DenseArray::new(new_dims, data)?;
        match mask {
            Some(m) if m.iter().any(|&b| b) => out.with_mask(m),
            _ => Ok(out),
        }
    }

    /// Elementwise difference.
    pub fn sub(&self, other: &Self) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(format!(
                "subtraction of arrays with dims {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(x, y)| x - y).collect();
        DenseArray::new(self.dims.clone(), data)
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.dims != other.dims {
            return Err(Error::ShapeMismatch(format!(
                "addition of arrays with dims {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        let data = self.data.iter().zip(&other.data).map(|(x, y)| x + y).collect();
        DenseArray::new(self.dims.clone(), data)
    }

    pub fn scale(&self, c: f64) -> Self {
        let data = self.data.iter().map(|x| c * x).collect();
        DenseArray { dims: self.dims.clone(), data, mask: self.mask.clone() }
    }

    /// Outer product with a ones vector of length n: the replicated mean
    /// array of order K+1.
    pub fn outer_ones(&self, n: usize) -> Self {
        let mut dims = self.dims.clone();
        dims.push(n);
        let mut data = Vec::with_capacity(self.len() * n);
        for _ in 0..n {
            data.extend_from_slice(&self.data);
        }
        DenseArray { dims, data, mask: None }
    }

    /// Flattened copy as a column vector in storage order (the paper's vec).
    pub fn to_vec_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_column_slice(self.len(), 1, &self.data)
    }
}
