//! Dense multilinear algebra on symmetric tensors.
//!
//! Conventions used throughout the crate (and asserted by the tests here):
//!
//! * Tensors are stored fully vectorized in **column-major** order with the
//!   **first index fastest**: entry `(m_1, …, m_p)` (0-based) lives at linear
//!   offset `m_1 + m_2·M + … + m_p·M^{p−1}`.
//! * `kron(a, b)` follows the standard Kronecker convention: the **right**
//!   operand's index varies fastest, `kron(a, b)[i·|b| + j] = a[i]·b[j]`.
//! * Under these two conventions `vec(A diag(b) Dᵀ) = (D ⊙ A) b`, where `⊙`
//!   is the column-wise Khatri-Rao product, and the vectorization of a
//!   symmetric rank-1 term `c ⊗ … ⊗ c` is `c^{⊠p}`.
//!
//! The selection operator that gathers the non-redundant entries of a
//! symmetric tensor (one per multiset of indices) is never materialized as a
//! matrix; [`MultisetDomain`] implements it as an index gather with a
//! combinatorial ranking function for the inverse scatter.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Dense tensors are refused beyond this many entries; the algorithms here
/// are meant for desk-scale problems and materialize full `M^p` vectors.
pub const MAX_DENSE_LEN: usize = 10_000_000;

#[derive(Debug, Error)]
pub enum MultilinearError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("dense tensor with {dim}^{order} entries exceeds the size guard of {MAX_DENSE_LEN}")]
    TooLarge { dim: usize, order: usize },
    #[error("operation requires tensor order >= {required}, got {got}")]
    OrderTooSmall { required: usize, got: usize },
}

fn checked_len(dim: usize, order: usize) -> Result<usize, MultilinearError> {
    let mut len: usize = 1;
    for _ in 0..order {
        len = len
            .checked_mul(dim)
            .filter(|&l| l <= MAX_DENSE_LEN)
            .ok_or(MultilinearError::TooLarge { dim, order })?;
    }
    Ok(len)
}

/// A fully symmetric tensor of order `p` and dimension `M`, stored as the
/// dense vector of all `M^p` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor {
    order: usize,
    dim: usize,
    data: Vec<f64>,
}

impl SymTensor {
    pub fn zeros(order: usize, dim: usize) -> Result<Self, MultilinearError> {
        let len = checked_len(dim, order)?;
        Ok(Self { order, dim, data: vec![0.0; len] })
    }

    /// Wraps an existing column-major buffer of length `dim^order`.
    /// Symmetry of the contents is the caller's responsibility; see
    /// [`SymTensor::is_symmetric`].
    pub fn from_vec(order: usize, dim: usize, data: Vec<f64>) -> Result<Self, MultilinearError> {
        let len = checked_len(dim, order)?;
        if data.len() != len {
            return Err(MultilinearError::DimensionMismatch(format!(
                "buffer has {} entries, expected {}^{} = {}",
                data.len(),
                dim,
                order,
                len
            )));
        }
        Ok(Self { order, dim, data })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
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

    /// Linear offset of a (0-based) multi-index, first index fastest.
    pub fn linear_index(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.order);
        let mut lin = 0;
        for &i in idx.iter().rev() {
            debug_assert!(i < self.dim);
            lin = lin * self.dim + i;
        }
        lin
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.linear_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: f64) {
        let lin = self.linear_index(idx);
        self.data[lin] = value;
    }

    /// Decodes a linear offset back into its multi-index.
    pub fn multi_index(&self, mut lin: usize, out: &mut [usize]) {
        for slot in out.iter_mut() {
            *slot = lin % self.dim;
            lin /= self.dim;
        }
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// Checks full permutation symmetry by comparing every entry against the
    /// entry at its sorted multi-index, within `tol` relative to the largest
    /// magnitude present.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        let scale = self.data.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
        let mut idx = vec![0usize; self.order];
        let mut sorted = vec![0usize; self.order];
        for lin in 0..self.data.len() {
            self.multi_index(lin, &mut idx);
            sorted.copy_from_slice(&idx);
            sorted.sort_unstable();
            let canon = self.linear_index(&sorted);
            if (self.data[lin] - self.data[canon]).abs() > tol * scale {
                return false;
            }
        }
        true
    }
}

/// The non-redundant index domain of a symmetric tensor: all 0-based tuples
/// `(m_1, …, m_p)` with `m_1 ≤ … ≤ m_p`, in lexicographic order. Its size is
/// `I = binomial(M + p − 1, p)`.
#[derive(Debug, Clone)]
pub struct MultisetDomain {
    order: usize,
    dim: usize,
    tuples: Vec<usize>, // flattened, I * order entries
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc as usize
}

impl MultisetDomain {
    pub fn new(order: usize, dim: usize) -> Self {
        assert!(order >= 1 && dim >= 1, "domain needs order >= 1 and dim >= 1");
        let size = binomial(dim + order - 1, order);
        let mut tuples = Vec::with_capacity(size * order);
        let mut t = vec![0usize; order];
        loop {
            tuples.extend_from_slice(&t);
            // successor in lexicographic order among nondecreasing tuples
            let mut i = order;
            loop {
                if i == 0 {
                    debug_assert_eq!(tuples.len(), size * order);
                    return Self { order, dim, tuples };
                }
                i -= 1;
                if t[i] + 1 < dim {
                    let v = t[i] + 1;
                    for slot in t.iter_mut().skip(i) {
                        *slot = v;
                    }
                    break;
                }
            }
        }
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn size(&self) -> usize {
        self.tuples.len() / self.order
    }

    pub fn tuple(&self, k: usize) -> &[usize] {
        &self.tuples[k * self.order..(k + 1) * self.order]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[usize]> {
        self.tuples.chunks_exact(self.order)
    }

    /// Lexicographic rank of a nondecreasing tuple. Counts, position by
    /// position, the nondecreasing completions that precede it.
    pub fn rank_of(&self, sorted: &[usize]) -> usize {
        debug_assert_eq!(sorted.len(), self.order);
        let mut rank = 0;
        let mut low = 0;
        for (q, &tq) in sorted.iter().enumerate() {
            let rem = self.order - q - 1;
            for v in low..tq {
                rank += binomial(self.dim - v + rem - 1, rem);
            }
            low = tq;
        }
        rank
    }

    fn check(&self, x: &SymTensor) -> Result<(), MultilinearError> {
        if x.order() != self.order || x.dim() != self.dim {
            return Err(MultilinearError::DimensionMismatch(format!(
                "domain is for order {} dim {}, tensor has order {} dim {}",
                self.order,
                self.dim,
                x.order(),
                x.dim()
            )));
        }
        Ok(())
    }
}

/// `kron(a, b)[i·|b| + j] = a[i]·b[j]`.
pub fn kron_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let (n, m) = (a.len(), b.len());
    let mut out = DVector::zeros(n * m);
    for i in 0..n {
        let ai = a[i];
        for j in 0..m {
            out[i * m + j] = ai * b[j];
        }
    }
    out
}

/// `p`-fold Kronecker power of a vector; `p = 0` yields the scalar 1 as a
/// length-1 vector.
pub fn kron_vec_power(a: &DVector<f64>, p: usize) -> DVector<f64> {
    let mut out = DVector::from_element(1, 1.0);
    for _ in 0..p {
        out = kron_vec(&out, a);
    }
    out
}

/// Column-wise Kronecker (Khatri-Rao) product: column `r` of the result is
/// `kron(a_r, b_r)`.
pub fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, MultilinearError> {
    if a.ncols() != b.ncols() {
        return Err(MultilinearError::DimensionMismatch(format!(
            "Khatri-Rao needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (n, m, cols) = (a.nrows(), b.nrows(), a.ncols());
    let mut out = DMatrix::zeros(n * m, cols);
    for r in 0..cols {
        for i in 0..n {
            let ai = a[(i, r)];
            for j in 0..m {
                out[(i * m + j, r)] = ai * b[(j, r)];
            }
        }
    }
    Ok(out)
}

/// `p`-fold Khatri-Rao power `C^{⊙p}`; `p = 0` yields a row of ones.
pub fn khatri_rao_power(c: &DMatrix<f64>, p: usize) -> DMatrix<f64> {
    let mut out = DMatrix::from_element(1, c.ncols(), 1.0);
    for _ in 0..p {
        out = khatri_rao(&out, c).expect("column counts match by construction");
    }
    out
}

/// Shorthand for the domain of a tensor's non-redundant entries.
pub fn multiset_domain(dim: usize, order: usize) -> MultisetDomain {
    MultisetDomain::new(order, dim)
}

/// Gathers the entries of `x` on the non-redundant domain: component `k` is
/// `x` at `d.tuple(k)`. This is the action of the 0/1 selection operator on
/// `vec(x)`.
pub fn select_nonredundant(
    x: &SymTensor,
    d: &MultisetDomain,
) -> Result<DVector<f64>, MultilinearError> {
    d.check(x)?;
    Ok(DVector::from_iterator(d.size(), d.iter().map(|t| x.get(t))))
}

/// Exact right-inverse of [`select_nonredundant`]: spreads a vector of
/// non-redundant values onto the full permutation orbit of each tuple.
pub fn scatter_symmetric(
    v: &DVector<f64>,
    d: &MultisetDomain,
) -> Result<SymTensor, MultilinearError> {
    if v.len() != d.size() {
        return Err(MultilinearError::DimensionMismatch(format!(
            "got {} values for a domain of size {}",
            v.len(),
            d.size()
        )));
    }
    let mut x = SymTensor::zeros(d.order(), d.dim())?;
    let mut idx = vec![0usize; d.order()];
    let mut sorted = vec![0usize; d.order()];
    for lin in 0..x.len() {
        x.multi_index(lin, &mut idx);
        sorted.copy_from_slice(&idx);
        sorted.sort_unstable();
        x.data[lin] = v[d.rank_of(&sorted)];
    }
    Ok(x)
}

/// Mode-1 (flat) unfolding, `M × M^{p−1}`: row index is the first tensor
/// index, columns enumerate the remaining indices column-major. Because the
/// storage is column-major with the first index fastest, this is a reshape.
pub fn flat_unfold(x: &SymTensor) -> Result<DMatrix<f64>, MultilinearError> {
    if x.order() < 2 {
        return Err(MultilinearError::OrderTooSmall { required: 2, got: x.order() });
    }
    let m = x.dim();
    Ok(DMatrix::from_column_slice(m, x.len() / m, x.data()))
}

/// Square unfolding, `M² × M^{p−2}`: rows enumerate the first two indices
/// column-major. For `p = 3` this stacks the frontal slices' columns.
pub fn square_unfold(x: &SymTensor) -> Result<DMatrix<f64>, MultilinearError> {
    if x.order() < 3 {
        return Err(MultilinearError::OrderTooSmall { required: 3, got: x.order() });
    }
    let m2 = x.dim() * x.dim();
    Ok(DMatrix::from_column_slice(m2, x.len() / m2, x.data()))
}

/// Evaluates the symmetric CPD `g_p · Σ_r h_r c_r^{⊗p}` as a dense tensor,
/// i.e. `vec(result) = g_p (C^{⊙p}) h`. Computed entrywise rather than
/// through a materialized Khatri-Rao power.
pub fn cpd_reconstruct(
    c: &DMatrix<f64>,
    h: &DVector<f64>,
    g_p: f64,
    p: usize,
) -> Result<SymTensor, MultilinearError> {
    if c.ncols() != h.len() {
        return Err(MultilinearError::DimensionMismatch(format!(
            "factor has {} columns but h has {} entries",
            c.ncols(),
            h.len()
        )));
    }
    if p < 1 {
        return Err(MultilinearError::OrderTooSmall { required: 1, got: p });
    }
    let m = c.nrows();
    let mut x = SymTensor::zeros(p, m)?;
    let mut idx = vec![0usize; p];
    for lin in 0..x.len() {
        x.multi_index(lin, &mut idx);
        let mut acc = 0.0;
        for r in 0..h.len() {
            let mut prod = h[r];
            for &i in &idx {
                prod *= c[(i, r)];
            }
            acc += prod;
        }
        x.data[lin] = g_p * acc;
    }
    Ok(x)
}
