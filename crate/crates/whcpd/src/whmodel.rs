//! Wiener-Hammerstein model representation and kernel synthesis.
//!
//! The model is the cascade of an FIR filter `w` (taps `w_0 … w_{L_w−1}`,
//! `w_0 ≠ 0`), a static polynomial nonlinearity `g(x) = Σ_p g_p x^p`, and an
//! FIR filter `h` (taps `h_0 … h_{R−1}`). Its order-`p` Volterra kernel has
//! memory `M = L_w + R − 1` and two equivalent expressions:
//!
//! * the convolution form `k(m_1,…,m_p) = g_p Σ_l h_l Π_q w_{m_q − l}`, and
//! * the symmetric CPD `g_p Σ_r h_{r−1} (S_r w)^{⊗p}`, where `S_r w` shifts
//!   `w` down by `r − 1` rows, i.e. the factor matrix `C` is banded Toeplitz.
//!
//! Both are implemented here ([`volterra_kernel`] and [`build_factor`] +
//! [`cpd_reconstruct`](crate::multilinear::cpd_reconstruct)) and are
//! cross-checked in the tests.
//!
//! Tensor indices are 0-based and coincide with the kernel lag arguments:
//! the tensor entry at multi-index `(m_1, …, m_p)` is `k(m_1, …, m_p)`.
//! Estimation works on the canonical form `w_0 = g_p = 1`, which removes the
//! scaling indeterminacy of the decomposition; [`WhParams::canonicalize`]
//! rescales any parameter set into it without changing the kernel.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::multilinear::{
    cpd_reconstruct, MultilinearError, MultisetDomain, SymTensor,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input filter w must be non-empty")]
    EmptyInputFilter,
    #[error("output filter h must be non-empty")]
    EmptyOutputFilter,
    #[error("leading tap w[0] must be nonzero")]
    LeadingTapZero,
    #[error("nonlinearity order p must be >= 1, got {0}")]
    InvalidOrder(usize),
    #[error("parameters are not in canonical form (w[0] = 1 and g_p = 1 required)")]
    NonCanonical,
    #[error(transparent)]
    Multilinear(#[from] MultilinearError),
}

/// Parameter set of a WH model for a single nonlinearity order `p`:
/// the filter taps `w` and `h`, and the leading polynomial coefficient `g_p`.
#[derive(Debug, Clone, PartialEq)]
pub struct WhParams {
    w: DVector<f64>,
    h: DVector<f64>,
    g_p: f64,
    p: usize,
}

impl WhParams {
    pub fn new(w: DVector<f64>, h: DVector<f64>, g_p: f64, p: usize) -> Result<Self, ModelError> {
        if w.is_empty() {
            return Err(ModelError::EmptyInputFilter);
        }
        if h.is_empty() {
            return Err(ModelError::EmptyOutputFilter);
        }
        if w[0] == 0.0 {
            return Err(ModelError::LeadingTapZero);
        }
        if p < 1 {
            return Err(ModelError::InvalidOrder(p));
        }
        Ok(Self { w, h, g_p, p })
    }

    pub fn from_slices(w: &[f64], h: &[f64], g_p: f64, p: usize) -> Result<Self, ModelError> {
        Self::new(DVector::from_column_slice(w), DVector::from_column_slice(h), g_p, p)
    }

    pub fn w(&self) -> &DVector<f64> {
        &self.w
    }

    pub fn h(&self) -> &DVector<f64> {
        &self.h
    }

    pub fn g_p(&self) -> f64 {
        self.g_p
    }

    pub fn order(&self) -> usize {
        self.p
    }

    pub fn l_w(&self) -> usize {
        self.w.len()
    }

    pub fn r(&self) -> usize {
        self.h.len()
    }

    /// Kernel memory `M = L_w + R − 1`.
    pub fn memory(&self) -> usize {
        self.w.len() + self.h.len() - 1
    }

    pub fn is_canonical(&self) -> bool {
        self.w[0] == 1.0 && self.g_p == 1.0
    }

    /// Rescales to the canonical form `w_0 = g_p = 1` by absorbing the scale
    /// into `h`: `w' = w / w_0`, `h' = h · g_p · w_0^p`. The Volterra kernel
    /// is unchanged.
    pub fn canonicalize(&self) -> WhParams {
        let w0 = self.w[0];
        let mut w = &self.w / w0;
        w[0] = 1.0;
        let h = &self.h * (self.g_p * w0.powi(self.p as i32));
        WhParams { w, h, g_p: 1.0, p: self.p }
    }

    /// The free parameter vector `η = [w̃ᵀ hᵀ]ᵀ` of a canonical model, where
    /// `w̃` is `w` without its leading 1.
    pub fn eta(&self) -> Result<EtaVector, ModelError> {
        if !self.is_canonical() {
            return Err(ModelError::NonCanonical);
        }
        let mut values = DVector::zeros(self.w.len() - 1 + self.h.len());
        values.rows_mut(0, self.w.len() - 1).copy_from(&self.w.rows(1, self.w.len() - 1));
        values.rows_mut(self.w.len() - 1, self.h.len()).copy_from(&self.h);
        Ok(EtaVector { values, w_tilde_len: self.w.len() - 1 })
    }

    /// Rebuilds canonical parameters from a free parameter vector.
    pub fn from_eta(eta: &EtaVector, p: usize) -> Result<Self, ModelError> {
        let mut w = DVector::zeros(eta.w_tilde_len + 1);
        w[0] = 1.0;
        w.rows_mut(1, eta.w_tilde_len).copy_from(&eta.values.rows(0, eta.w_tilde_len));
        let h = DVector::from_column_slice(eta.h().as_slice());
        Self::new(w, h, 1.0, p)
    }
}

/// Free parameter vector `η = [w̃ᵀ hᵀ]ᵀ ∈ ℝ^{L_w−1+R}` of a canonical model.
#[derive(Debug, Clone, PartialEq)]
pub struct EtaVector {
    values: DVector<f64>,
    w_tilde_len: usize,
}

impl EtaVector {
    pub fn new(values: DVector<f64>, w_tilde_len: usize) -> Self {
        assert!(
            w_tilde_len < values.len(),
            "eta must keep at least one h entry after {} w entries",
            w_tilde_len
        );
        Self { values, w_tilde_len }
    }

    pub fn from_parts(w_tilde: &[f64], h: &[f64]) -> Self {
        let mut values = DVector::zeros(w_tilde.len() + h.len());
        values.rows_mut(0, w_tilde.len()).copy_from_slice(w_tilde);
        values.rows_mut(w_tilde.len(), h.len()).copy_from_slice(h);
        Self { values, w_tilde_len: w_tilde.len() }
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn w_tilde(&self) -> nalgebra::DVectorView<'_, f64> {
        self.values.rows(0, self.w_tilde_len)
    }

    pub fn h(&self) -> nalgebra::DVectorView<'_, f64> {
        self.values.rows(self.w_tilde_len, self.values.len() - self.w_tilde_len)
    }

    pub fn l_w(&self) -> usize {
        self.w_tilde_len + 1
    }

    pub fn r(&self) -> usize {
        self.values.len() - self.w_tilde_len
    }

    /// Squared Euclidean distance `‖η − η'‖²`.
    pub fn sq_dist(&self, other: &EtaVector) -> f64 {
        (&self.values - &other.values).norm_squared()
    }
}

/// Time-domain simulation of the WH cascade for a full polynomial
/// nonlinearity: `g[k]` is the coefficient of `x^{k+1}` (no constant term).
/// Zero initial conditions: samples before the start of `u` are zero.
pub fn simulate_wh(u: &[f64], params: &WhParams, g: &[f64]) -> Vec<f64> {
    let w = &params.w;
    let h = &params.h;
    let n = u.len();
    // inner filter
    let mut v = vec![0.0; n];
    for (t, slot) in v.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (l, &wl) in w.iter().enumerate() {
            if t >= l {
                acc += wl * u[t - l];
            }
        }
        *slot = acc;
    }
    // static nonlinearity
    let z: Vec<f64> = v
        .iter()
        .map(|&x| {
            let mut acc = 0.0;
            let mut pow = 1.0;
            for &gq in g {
                pow *= x;
                acc += gq * pow;
            }
            acc
        })
        .collect();
    // outer filter
    let mut y = vec![0.0; n];
    for (t, slot) in y.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (r, &hr) in h.iter().enumerate() {
            if t >= r {
                acc += hr * z[t - r];
            }
        }
        *slot = acc;
    }
    y
}

/// Direct Volterra-series simulation: `y(n) = Σ_kernels Σ_{m_1…m_p}
/// k(m_1,…,m_p) Π_q u(n − m_q)`, zero initial conditions. Brute force over
/// the full kernel tensors; intended as an oracle and for small scales.
pub fn simulate_volterra(u: &[f64], kernels: &[SymTensor]) -> Vec<f64> {
    let n = u.len();
    let mut y = vec![0.0; n];
    for kernel in kernels {
        let p = kernel.order();
        let mut idx = vec![0usize; p];
        for lin in 0..kernel.len() {
            let coeff = kernel.data()[lin];
            if coeff == 0.0 {
                continue;
            }
            kernel.multi_index(lin, &mut idx);
            for (t, slot) in y.iter_mut().enumerate() {
                let mut prod = coeff;
                for &mq in &idx {
                    if t >= mq {
                        prod *= u[t - mq];
                    } else {
                        prod = 0.0;
                        break;
                    }
                }
                *slot += prod;
            }
        }
    }
    y
}

/// Order-`p` Volterra kernel of the model as a symmetric tensor, computed
/// from the convolution form: entry `(m_1,…,m_p)` is
/// `g_p Σ_{l=l_0}^{L} h_l Π_q w_{m_q − l}` with `l_0 = max(0, max_q m_q − L_w + 1)`
/// and `L = min(R − 1, min_q m_q)`.
pub fn volterra_kernel(params: &WhParams) -> Result<SymTensor, MultilinearError> {
    let m = params.memory();
    let p = params.p;
    let l_w = params.l_w();
    let r = params.r();
    let mut x = SymTensor::zeros(p, m)?;
    let mut idx = vec![0usize; p];
    for lin in 0..x.len() {
        x.multi_index(lin, &mut idx);
        let hi = *idx.iter().max().unwrap();
        let lo = *idx.iter().min().unwrap();
        let l0 = hi.saturating_sub(l_w - 1);
        let l_end = (r - 1).min(lo);
        let mut acc = 0.0;
        for l in l0..=l_end {
            let mut prod = params.h[l];
            for &mq in &idx {
                prod *= params.w[mq - l];
            }
            acc += prod;
        }
        x.data_mut()[lin] = params.g_p * acc;
    }
    Ok(x)
}

/// The banded Toeplitz factor `C ∈ ℝ^{M×R}`: column `r` is `w` shifted down
/// by `r` rows, `C[i, r] = w[i − r]` for `0 ≤ i − r ≤ L_w − 1`, else 0.
pub fn build_factor(params: &WhParams) -> DMatrix<f64> {
    banded_factor(&params.w, params.r())
}

/// [`build_factor`] for a raw tap vector; used by the estimators on
/// intermediate iterates that need not satisfy the model invariants.
pub fn banded_factor(w: &DVector<f64>, r: usize) -> DMatrix<f64> {
    let l_w = w.len();
    let mut c = DMatrix::zeros(l_w + r - 1, r);
    for col in 0..r {
        for l in 0..l_w {
            c[(col + l, col)] = w[l];
        }
    }
    c
}

/// The shift basis `E_ℓ ∈ ℝ^{M×R}` (`ℓ = 1…L_w`, returned 0-indexed) with
/// `E_ℓ[i, r] = 1` iff `i − r = ℓ − 1`, and the stacked matrix
/// `E = [vec(E_1) … vec(E_{L_w})] ∈ ℝ^{MR×L_w}`. The basis is orthogonal
/// with `EᵀE = R·I`, so `E† = (1/R)Eᵀ`, and `vec(C) = E·w`.
pub fn basis_matrices(
    m: usize,
    r: usize,
    l_w: usize,
) -> Result<(Vec<DMatrix<f64>>, DMatrix<f64>), ModelError> {
    if m != l_w + r - 1 {
        return Err(ModelError::Multilinear(MultilinearError::DimensionMismatch(format!(
            "basis needs M = L_w + R - 1, got M = {}, L_w = {}, R = {}",
            m, l_w, r
        ))));
    }
    let mut mats = Vec::with_capacity(l_w);
    let mut e = DMatrix::zeros(m * r, l_w);
    for l in 0..l_w {
        let mut el = DMatrix::zeros(m, r);
        for col in 0..r {
            el[(l + col, col)] = 1.0;
        }
        for (k, &v) in el.as_slice().iter().enumerate() {
            e[(k, l)] = v;
        }
        mats.push(el);
    }
    Ok((mats, e))
}

/// The non-redundant vectorized model `x = Ψ Φ(h) f(w)`: component `k` is
/// the kernel entry at the `k`-th tuple of `d`, evaluated through the CPD
/// form `g_p Σ_r h_r Π_q C[m_q, r]` (an index gather; no selection matrix is
/// materialized).
pub fn model_vec(params: &WhParams, d: &MultisetDomain) -> Result<DVector<f64>, MultilinearError> {
    if d.dim() != params.memory() || d.order() != params.p {
        return Err(MultilinearError::DimensionMismatch(format!(
            "domain is order {} dim {}, model has order {} memory {}",
            d.order(),
            d.dim(),
            params.p,
            params.memory()
        )));
    }
    let c = build_factor(params);
    let h = &params.h;
    let mut out = DVector::zeros(d.size());
    for (k, tuple) in d.iter().enumerate() {
        let mut acc = 0.0;
        for r in 0..h.len() {
            let mut prod = h[r];
            for &mq in tuple {
                prod *= c[(mq, r)];
            }
            acc += prod;
        }
        out[k] = params.g_p * acc;
    }
    Ok(out)
}

/// Uniqueness verdict for the structured decomposition of the model kernel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Identifiability {
    /// Essentially unique (Kruskal's condition holds for the structured CPD).
    Unique,
    /// Unique under a mild extra condition not covered by Kruskal's bound
    /// (the rank-1 case).
    UniqueGivenCondition,
    /// Uniqueness is not guaranteed.
    NotGuaranteed,
}

#[derive(Debug, Clone)]
pub struct IdentifiabilityReport {
    pub verdict: Identifiability,
    pub explanation: String,
}

/// Decides whether the model parameters are recoverable from the order-`p`
/// kernel. The banded factor `C` always has k-rank `R` (for `w ≠ 0`), so
/// uniqueness hinges on `p`, `R` and the number of nonzero `h` taps.
pub fn check_identifiability(params: &WhParams) -> IdentifiabilityReport {
    let p = params.p;
    let r = params.r();
    let nnz = params.h.iter().filter(|&&v| v != 0.0).count();
    if p <= 2 {
        let why = if p == 1 {
            "p = 1: the kernel is a vector of sums of products of the parameters".to_string()
        } else {
            "p = 2: bilinear decompositions are only unique under restrictive assumptions"
                .to_string()
        };
        return IdentifiabilityReport { verdict: Identifiability::NotGuaranteed, explanation: why };
    }
    if nnz == 0 {
        return IdentifiabilityReport {
            verdict: Identifiability::NotGuaranteed,
            explanation: "h = 0 yields the zero kernel; nothing can be recovered".to_string(),
        };
    }
    if r == 1 {
        return IdentifiabilityReport {
            verdict: Identifiability::UniqueGivenCondition,
            explanation: "R = 1: rank-1 symmetric decomposition, unique for a nonzero kernel \
                          (outside Kruskal's R >= 2 condition)"
                .to_string(),
        };
    }
    if nnz == r {
        return IdentifiabilityReport {
            verdict: Identifiability::Unique,
            explanation: format!(
                "Kruskal's condition holds: k-rank(C) = R = {} with all h taps nonzero and p = {}",
                r, p
            ),
        };
    }
    // some h taps vanish: the k-rank of C diag(h) drops to zero
    let ok = (p == 4 && r >= 3) || (p >= 5 && r >= 2);
    if ok {
        IdentifiabilityReport {
            verdict: Identifiability::Unique,
            explanation: format!(
                "h has zero taps (k-rank of C diag(h) is 0) but p = {}, R = {} still meets \
                 Kruskal's condition",
                p, r
            ),
        }
    } else {
        IdentifiabilityReport {
            verdict: Identifiability::NotGuaranteed,
            explanation: format!(
                "h has zero taps and (p = {}, R = {}) does not meet Kruskal's condition \
                 (needs p = 4 with R >= 3, or p >= 5 with R >= 2)",
                p, r
            ),
        }
    }
}

/// The reference parameter set used by the bundled configs and tests:
/// `L_w = 5`, `R = 3`, `p = 3` (so `M = 7` and `η ∈ ℝ⁷`).
pub fn reference_params() -> WhParams {
    WhParams::from_slices(
        &[1.0, 0.538, 1.834, -2.259, 0.862],
        &[1.594, -6.538, -2.168],
        1.0,
        3,
    )
    .expect("reference parameters are valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::multilinear::{multiset_domain, select_nonredundant};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn max_abs_diff(a: &SymTensor, b: &SymTensor) -> f64 {
        a.data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    fn random_params(rng: &mut ChaCha8Rng, l_w: usize, r: usize, p: usize) -> WhParams {
        let mut w: Vec<f64> = (0..l_w).map(|_| rng.sample(StandardNormal)).collect();
        if w[0].abs() < 0.2 {
            w[0] = 0.7;
        }
        let h: Vec<f64> = (0..r)
            .map(|_| {
                let v: f64 = rng.sample(StandardNormal);
                if v.abs() < 0.1 {
                    0.5
                } else {
                    v
                }
            })
            .collect();
        let g: f64 = rng.sample(StandardNormal);
        WhParams::from_slices(&w, &h, if g.abs() < 0.1 { 1.1 } else { g }, p).unwrap()
    }

    #[test]
    fn construction_validates() {
        assert!(matches!(
            WhParams::from_slices(&[], &[1.0], 1.0, 2),
            Err(ModelError::EmptyInputFilter)
        ));
        assert!(matches!(
            WhParams::from_slices(&[0.0, 1.0], &[1.0], 1.0, 2),
            Err(ModelError::LeadingTapZero)
        ));
        assert!(matches!(
            WhParams::from_slices(&[1.0], &[1.0], 1.0, 0),
            Err(ModelError::InvalidOrder(0))
        ));
    }

    #[test]
    fn canonicalize_examples() {
        let p = WhParams::from_slices(&[1.0, 2.0], &[3.0], 1.0, 2).unwrap();
        assert_eq!(p.canonicalize(), p);

        let p = WhParams::from_slices(&[2.0, 4.0], &[1.0], 3.0, 2).unwrap();
        let c = p.canonicalize();
        assert_eq!(c.w().as_slice(), &[1.0, 2.0]);
        assert_eq!(c.h().as_slice(), &[12.0]);
        assert_eq!(c.g_p(), 1.0);
        assert!(c.is_canonical());
    }

    #[test]
    fn canonicalize_preserves_kernel_and_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let params = random_params(&mut rng, 3, 2, 3);
            let canon = params.canonicalize();
            assert_eq!(canon.canonicalize(), canon);
            let k1 = volterra_kernel(&params).unwrap();
            let k2 = volterra_kernel(&canon).unwrap();
            let scale = k1.data().iter().fold(1.0f64, |m, x| m.max(x.abs()));
            assert!(max_abs_diff(&k1, &k2) < 1e-14 * scale);
        }
    }

    #[test]
    fn kernel_trivial_cases() {
        let p = WhParams::from_slices(&[1.0], &[2.5], 1.0, 3).unwrap();
        let k = volterra_kernel(&p).unwrap();
        assert_eq!(k.dim(), 1);
        assert_eq!(k.data(), &[2.5]);

        let p = WhParams::from_slices(&[1.0, 1.0], &[1.0], 1.0, 2).unwrap();
        let k = volterra_kernel(&p).unwrap();
        assert_eq!(k.data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn kernel_matches_cpd_reconstruction_at_reference() {
        let params = reference_params();
        let k3 = volterra_kernel(&params).unwrap();
        assert_eq!(k3.dim(), 7);
        let c = build_factor(&params);
        let k4 = cpd_reconstruct(&c, params.h(), params.g_p(), params.order()).unwrap();
        assert!(max_abs_diff(&k3, &k4) < 1e-12);
        assert!(k3.is_symmetric(1e-14));
    }

    #[test]
    fn kernel_matches_cpd_reconstruction_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        for _ in 0..50 {
            let l_w = rng.random_range(1..=5);
            let r = rng.random_range(1..=4);
            let p = rng.random_range(2..=4);
            let params = random_params(&mut rng, l_w, r, p);
            let k3 = volterra_kernel(&params).unwrap();
            let k4 =
                cpd_reconstruct(&build_factor(&params), params.h(), params.g_p(), p).unwrap();
            let scale = k3.data().iter().fold(1.0f64, |m, x| m.max(x.abs()));
            assert!(
                max_abs_diff(&k3, &k4) < 1e-12 * scale,
                "mismatch for L_w={} R={} p={}",
                l_w,
                r,
                p
            );
        }
    }

    #[test]
    fn build_factor_layout() {
        let p = WhParams::from_slices(&[1.0, 2.0], &[1.0, 1.0], 1.0, 2).unwrap();
        let c = build_factor(&p);
        assert_eq!(c, DMatrix::from_column_slice(3, 2, &[1.0, 2.0, 0.0, 0.0, 1.0, 2.0]));

        let p = WhParams::from_slices(&[3.0, -1.0, 4.0], &[1.0], 1.0, 2).unwrap();
        let c = build_factor(&p);
        assert_eq!(c.as_slice(), &[3.0, -1.0, 4.0]);

        let c = build_factor(&reference_params());
        assert_eq!(c.nrows(), 7);
        assert_eq!(c.ncols(), 3);
        // entry (3,2) in 1-based terms is w_1
        assert_eq!(c[(2, 1)], 0.538);
    }

    #[test]
    fn factor_has_full_column_rank_for_nonzero_w() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        for trial in 0..30 {
            let l_w = rng.random_range(1..=5);
            let r = rng.random_range(1..=4);
            let mut w: Vec<f64> = (0..l_w).map(|_| rng.sample(StandardNormal)).collect();
            if trial % 3 == 0 {
                w[0] = 0.0; // leading zero still leaves a staircase from the first nonzero tap
                if l_w == 1 {
                    w[0] = 1.0;
                }
            }
            if w.iter().all(|&v| v == 0.0) {
                w[0] = 1.0;
            }
            // bypass WhParams validation to test arbitrary nonzero w
            let m = l_w + r - 1;
            let mut c = DMatrix::zeros(m, r);
            for col in 0..r {
                for l in 0..l_w {
                    c[(col + l, col)] = w[l];
                }
            }
            let svd = nalgebra::SVD::new(c, false, false);
            let smax = svd.singular_values[0];
            let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10 * smax).count();
            assert_eq!(rank, r);
        }
    }

    #[test]
    fn basis_matrices_properties() {
        let (mats, e) = basis_matrices(7, 3, 5).unwrap();
        assert_eq!(mats.len(), 5);
        let ete = e.transpose() * &e;
        assert_relative_eq!(ete, DMatrix::identity(5, 5) * 3.0, max_relative = 1e-14);

        let params = reference_params();
        let c = build_factor(&params);
        let vec_c = DVector::from_column_slice(c.as_slice());
        assert_relative_eq!(&e * params.w(), vec_c, max_relative = 1e-14);

        // (1/R) E^T E w = w
        let w = DVector::from_column_slice(&[0.4, -1.0, 2.0, 0.7, -0.2]);
        let back = e.transpose() * (&e * &w) / 3.0;
        assert_relative_eq!(back, w, max_relative = 1e-14);

        // L_w = 1: single column of R ones
        let (_, e1) = basis_matrices(2, 2, 1).unwrap();
        assert_eq!(e1.ncols(), 1);
        assert_eq!(e1.as_slice().iter().filter(|&&v| v == 1.0).count(), 2);

        assert!(basis_matrices(6, 3, 5).is_err());
    }

    #[test]
    fn model_vec_matches_kernel_gather() {
        let params = reference_params();
        let d = multiset_domain(params.memory(), params.order());
        let x = model_vec(&params, &d).unwrap();
        let k = volterra_kernel(&params).unwrap();
        let gathered = select_nonredundant(&k, &d).unwrap();
        assert_relative_eq!(x, gathered, epsilon = 1e-12);
        assert_eq!(x.len(), 84);

        // h = 0 gives the zero vector
        let z = WhParams::from_slices(&[1.0, 0.3], &[0.0, 0.0], 1.0, 3).unwrap();
        let d = multiset_domain(z.memory(), 3);
        assert!(model_vec(&z, &d).unwrap().iter().all(|&v| v == 0.0));

        // L_w = R = 1: the single value g_p h_0 w_0^p
        let s = WhParams::from_slices(&[2.0], &[3.0], 5.0, 3).unwrap();
        let d = multiset_domain(1, 3);
        let x = model_vec(&s, &d).unwrap();
        assert_relative_eq!(x[0], 5.0 * 3.0 * 8.0);
    }

    #[test]
    fn wh_equals_volterra_simulation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let params = reference_params();
        let u: Vec<f64> = (0..100).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let g = [0.0, 0.0, 1.0]; // monomial x^3
        let y_wh = simulate_wh(&u, &params, &g);
        let kernel = volterra_kernel(&params).unwrap();
        let y_vol = simulate_volterra(&u, &[kernel]);
        let scale = y_wh.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for (a, b) in y_wh.iter().zip(&y_vol) {
            assert!((a - b).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn simulation_trivial_cases() {
        let params = WhParams::from_slices(&[1.0], &[1.0], 1.0, 1).unwrap();
        let u = [0.0; 16];
        assert!(simulate_wh(&u, &params, &[1.0]).iter().all(|&v| v == 0.0));

        let mut impulse = [0.0; 8];
        impulse[0] = 1.0;
        let y = simulate_wh(&impulse, &params, &[1.0]);
        assert_eq!(y[0], 1.0);
        assert!(y[1..].iter().all(|&v| v == 0.0));

        // order-1 kernel acts as plain convolution
        let taps = WhParams::from_slices(&[0.5, -1.0, 2.0], &[1.0], 1.0, 1).unwrap();
        let k1 = volterra_kernel(&taps).unwrap();
        let u: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = simulate_volterra(&u, &[k1]);
        for t in 0..20 {
            let mut expect = 0.0;
            for (l, &wl) in [0.5, -1.0, 2.0].iter().enumerate() {
                if t >= l {
                    expect += wl * u[t - l];
                }
            }
            assert_relative_eq!(y[t], expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn identifiability_verdicts() {
        let params = reference_params();
        assert_eq!(check_identifiability(&params).verdict, Identifiability::Unique);

        let p1 = WhParams::from_slices(&[1.0, 0.5], &[1.0, 2.0], 1.0, 1).unwrap();
        assert_eq!(check_identifiability(&p1).verdict, Identifiability::NotGuaranteed);

        let p4 = WhParams::from_slices(&[1.0, 0.5], &[1.0, 0.0, 1.0], 1.0, 4).unwrap();
        assert_eq!(check_identifiability(&p4).verdict, Identifiability::Unique);

        let p3gap = WhParams::from_slices(&[1.0, 0.5], &[1.0, 0.0, 1.0], 1.0, 3).unwrap();
        assert_eq!(check_identifiability(&p3gap).verdict, Identifiability::NotGuaranteed);

        let r1 = WhParams::from_slices(&[1.0, 0.5], &[2.0], 1.0, 3).unwrap();
        assert_eq!(check_identifiability(&r1).verdict, Identifiability::UniqueGivenCondition);
    }

    #[test]
    fn eta_roundtrip() {
        let params = reference_params();
        let eta = params.eta().unwrap();
        assert_eq!(eta.len(), 7);
        assert_eq!(eta.w_tilde().as_slice(), &[0.538, 1.834, -2.259, 0.862]);
        assert_eq!(eta.h().as_slice(), &[1.594, -6.538, -2.168]);
        let back = WhParams::from_eta(&eta, 3).unwrap();
        assert_eq!(back, params);

        let non_canon = WhParams::from_slices(&[2.0, 1.0], &[1.0], 1.0, 3).unwrap();
        assert!(matches!(non_canon.eta(), Err(ModelError::NonCanonical)));
    }

    proptest! {
        #[test]
        fn canonicalization_kernel_invariance(
            w0 in 0.3f64..3.0,
            w_rest in proptest::collection::vec(-2.0f64..2.0, 2),
            h in proptest::collection::vec(-2.0f64..2.0, 2),
            g in 0.2f64..2.0,
        ) {
            let mut w = vec![w0];
            w.extend(&w_rest);
            let params = WhParams::from_slices(&w, &h, g, 3).unwrap();
            let canon = params.canonicalize();
            let k1 = volterra_kernel(&params).unwrap();
            let k2 = volterra_kernel(&canon).unwrap();
            let scale = k1.data().iter().fold(1.0f64, |m, x| m.max(x.abs()));
            for (a, b) in k1.data().iter().zip(k2.data()) {
                prop_assert!((a - b).abs() <= 1e-13 * scale);
            }
        }
    }
}
