//! Cramér-Rao bound for the kernel-based estimation problem.
//!
//! The observation model is `y = x(η) + n` on the non-redundant domain,
//! with `n ~ N(0, σ²I)` and `η = [w̃ᵀ hᵀ]ᵀ`. The Slepian-Bangs formula then
//! reduces to `B(η) = σ² (JᵀJ)⁻¹` with `J = [∂x/∂w̃  ∂x/∂h]`.
//!
//! Per-parameter bounds are also computed in closed form through oblique
//! projections: with `P_{[A B]} = E_{A,B} + E_{B,A}` (the orthogonal
//! projector onto a joint span splits into the two oblique projectors),
//! the Schur-complement identity for the diagonal of `(JᵀJ)⁻¹` becomes
//!
//! ```text
//! CRB(w̃_k) = σ² / (‖g_k‖² − g_kᵀ E_{G_k,J(h)} g_k − g_kᵀ E_{J(h),G_k} g_k)
//! ```
//!
//! where `g_k` is column `k` of `J(w̃)` and `G_k` the remaining columns
//! (symmetrically for `h_r`). The two quadratic forms isolate the price paid
//! for jointly estimating the other `w` taps and the `h` taps. Note the
//! projected vectors `E_{A,B} g` and `E_{B,A} g` are *not* orthogonal, so
//! these are genuinely bilinear forms, not squared norms of the projections;
//! the tests pin the identity against the direct inverse.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::multilinear::{MultilinearError, MultisetDomain};
use crate::whmodel::{build_factor, ModelError, WhParams};

#[derive(Debug, Error)]
pub enum CrbError {
    #[error("CRB requires canonical parameters (w[0] = 1, g_p = 1)")]
    NonCanonical,
    #[error("noise variance must be positive, got {0}")]
    InvalidSigma(f64),
    #[error("Fisher information is numerically singular (condition number {cond:.3e}); the parameterization is not locally identifiable")]
    SingularFim { cond: f64 },
    #[error("rank-deficient projector arguments")]
    RankDeficient,
    #[error("non-positive CRB denominator {value:.3e} at parameter {index}; Jacobian is rank-deficient or inconsistent")]
    NonPositiveDenominator { index: usize, value: f64 },
    #[error(transparent)]
    Multilinear(#[from] MultilinearError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Jacobian blocks of the non-redundant vectorized model.
#[derive(Debug, Clone)]
pub struct JacobianPair {
    pub j_w: DMatrix<f64>,
    pub j_h: DMatrix<f64>,
}

impl JacobianPair {
    /// `[J(w̃)  J(h)]`, the full `I × (L_w − 1 + R)` Jacobian.
    pub fn joined(&self) -> DMatrix<f64> {
        let i = self.j_h.nrows();
        let mut j = DMatrix::zeros(i, self.j_w.ncols() + self.j_h.ncols());
        j.columns_mut(0, self.j_w.ncols()).copy_from(&self.j_w);
        j.columns_mut(self.j_w.ncols(), self.j_h.ncols()).copy_from(&self.j_h);
        j
    }
}

/// Full CRB report: the bound matrix, the per-parameter closed forms, and
/// the trace (the lower bound on `E‖η − η̂‖²`).
#[derive(Debug, Clone)]
pub struct CrbReport {
    pub b: DMatrix<f64>,
    /// `CRB(w̃_1) … CRB(w̃_{L_w−1}), CRB(h_1) … CRB(h_R)` from the
    /// oblique-projection formulas.
    pub per_param: DVector<f64>,
    pub trace: f64,
    pub trace_db: f64,
    pub sigma2: f64,
}

/// Writes the model-vector derivative at one index tuple into the two row
/// buffers. The model is `x(t) = Σ_r h_r Π_q C[t_q, r]` with
/// `C[i, r] = w[i − r]`, so the product rule gives the `w̃` block and the
/// plain factor products give the `h` block.
fn jacobian_rows(
    c: &DMatrix<f64>,
    h: &DVector<f64>,
    l_w: usize,
    tuple: &[usize],
    jw_row: &mut [f64],
    jh_row: &mut [f64],
) {
    let p = tuple.len();
    jw_row.fill(0.0);
    for r in 0..h.len() {
        let mut full = 1.0;
        for &tq in tuple {
            full *= c[(tq, r)];
        }
        jh_row[r] = full;
        for q in 0..p {
            let tq = tuple[q];
            if tq < r + 1 {
                continue;
            }
            let l = tq - r; // derivative of C[tq, r] w.r.t. w_l
            if l > l_w - 1 {
                continue;
            }
            let mut rest = h[r];
            for (qq, &t_other) in tuple.iter().enumerate() {
                if qq != q {
                    rest *= c[(t_other, r)];
                }
            }
            jw_row[l - 1] += rest;
        }
    }
}

/// `∂x/∂w̃`, an `I × (L_w − 1)` matrix (zero columns when `L_w = 1`).
pub fn jacobian_w(params: &WhParams, d: &MultisetDomain) -> Result<DMatrix<f64>, CrbError> {
    Ok(jacobian_pair_on(params, d)?.j_w)
}

/// `∂x/∂h`, an `I × R` matrix; column `r` is the selected vectorization of
/// `(S_r w)^{⊗p}`.
pub fn jacobian_h(params: &WhParams, d: &MultisetDomain) -> Result<DMatrix<f64>, CrbError> {
    Ok(jacobian_pair_on(params, d)?.j_h)
}

/// Both Jacobian blocks over the non-redundant domain.
pub fn jacobian_pair_on(
    params: &WhParams,
    d: &MultisetDomain,
) -> Result<JacobianPair, CrbError> {
    if !params.is_canonical() {
        return Err(CrbError::NonCanonical);
    }
    if d.dim() != params.memory() || d.order() != params.order() {
        return Err(CrbError::Multilinear(MultilinearError::DimensionMismatch(format!(
            "domain order {} dim {} vs model order {} memory {}",
            d.order(),
            d.dim(),
            params.order(),
            params.memory()
        ))));
    }
    let c = build_factor(params);
    let l_w = params.l_w();
    let r = params.r();
    let i = d.size();
    let mut j_w = DMatrix::zeros(i, l_w - 1);
    let mut j_h = DMatrix::zeros(i, r);
    let mut jw_row = vec![0.0; l_w - 1];
    let mut jh_row = vec![0.0; r];
    for (k, tuple) in d.iter().enumerate() {
        jacobian_rows(&c, params.h(), l_w, tuple, &mut jw_row, &mut jh_row);
        for (col, &v) in jw_row.iter().enumerate() {
            j_w[(k, col)] = v;
        }
        for (col, &v) in jh_row.iter().enumerate() {
            j_h[(k, col)] = v;
        }
    }
    Ok(JacobianPair { j_w, j_h })
}

/// Jacobian of the **full** `M^p` vectorization (no selection), used by the
/// quasi-Newton refinement gradient.
pub fn jacobian_full(params: &WhParams) -> Result<DMatrix<f64>, CrbError> {
    if !params.is_canonical() {
        return Err(CrbError::NonCanonical);
    }
    let c = build_factor(params);
    let l_w = params.l_w();
    let r = params.r();
    let p = params.order();
    let m = params.memory();
    let len = m.checked_pow(p as u32).ok_or(MultilinearError::TooLarge { dim: m, order: p })?;
    let mut jac = DMatrix::zeros(len, l_w - 1 + r);
    let mut tuple = vec![0usize; p];
    let mut jw_row = vec![0.0; l_w - 1];
    let mut jh_row = vec![0.0; r];
    for lin in 0..len {
        let mut rem = lin;
        for slot in tuple.iter_mut() {
            *slot = rem % m;
            rem /= m;
        }
        jacobian_rows(&c, params.h(), l_w, &tuple, &mut jw_row, &mut jh_row);
        for (col, &v) in jw_row.iter().enumerate() {
            jac[(lin, col)] = v;
        }
        for (col, &v) in jh_row.iter().enumerate() {
            jac[(lin, l_w - 1 + col)] = v;
        }
    }
    Ok(jac)
}

const RANK_TOL: f64 = 1e-12;

/// Orthogonal projector onto the column span of `b` (rank decided by a
/// relative singular value cutoff); the empty matrix projects onto `{0}`.
fn span_projector(b: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    if b.ncols() == 0 {
        return DMatrix::zeros(n, n);
    }
    let svd = nalgebra::SVD::new(b.clone(), true, false);
    let u = svd.u.as_ref().expect("u requested");
    let smax = svd.singular_values[0];
    let rank = svd.singular_values.iter().filter(|&&s| s > RANK_TOL * smax).count();
    let ur = u.columns(0, rank);
    &ur * ur.transpose()
}

/// The oblique projector `E_{A,B}` with range `⟨A⟩` and null space
/// containing `⟨B⟩`: `E = A (Aᵀ P_B^⊥ A)⁻¹ Aᵀ P_B^⊥`. With no `B` columns
/// this is the orthogonal projector `A A†`.
pub fn oblique_projection(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>, CrbError> {
    let n = a.nrows();
    if b.ncols() > 0 && b.nrows() != n {
        return Err(CrbError::Multilinear(MultilinearError::DimensionMismatch(format!(
            "A has {} rows, B has {}",
            n,
            b.nrows()
        ))));
    }
    if a.ncols() == 0 {
        return Ok(DMatrix::zeros(n, n));
    }
    // [A B] must have full column rank for the projector to exist
    let total = a.ncols() + b.ncols();
    let mut joint = DMatrix::zeros(n, total);
    joint.columns_mut(0, a.ncols()).copy_from(a);
    joint.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    let jsvd = nalgebra::SVD::new(joint, false, false);
    let smax = jsvd.singular_values[0];
    let rank = jsvd.singular_values.iter().filter(|&&s| s > RANK_TOL * smax).count();
    if rank < total {
        return Err(CrbError::RankDeficient);
    }

    let p_b_perp = DMatrix::identity(n, n) - span_projector(b, n);
    let pa = &p_b_perp * a;
    let gram = a.transpose() * &pa;
    let chol = nalgebra::Cholesky::new(gram).ok_or(CrbError::RankDeficient)?;
    let coeff = chol.solve(&pa.transpose()); // (Aᵀ P A)⁻¹ Aᵀ P
    Ok(a * coeff)
}

/// Per-parameter CRBs from the closed-form oblique-projection expressions.
/// Ordered as `w̃_1 … w̃_{L_w−1}, h_1 … h_R`.
pub fn crb_per_param(pair: &JacobianPair, sigma2: f64) -> Result<DVector<f64>, CrbError> {
    if sigma2 <= 0.0 {
        return Err(CrbError::InvalidSigma(sigma2));
    }
    let nw = pair.j_w.ncols();
    let nh = pair.j_h.ncols();
    let mut out = DVector::zeros(nw + nh);
    for k in 0..nw {
        let g = pair.j_w.column(k).into_owned();
        let rest = drop_column(&pair.j_w, k);
        out[k] = bound_for(&g, &rest, &pair.j_h, sigma2, k)?;
    }
    for r in 0..nh {
        let g = pair.j_h.column(r).into_owned();
        let rest = drop_column(&pair.j_h, r);
        out[nw + r] = bound_for(&g, &rest, &pair.j_w, sigma2, nw + r)?;
    }
    Ok(out)
}

fn drop_column(m: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols() - 1);
    let mut col = 0;
    for j in 0..m.ncols() {
        if j != k {
            out.column_mut(col).copy_from(&m.column(j));
            col += 1;
        }
    }
    out
}

fn bound_for(
    g: &DVector<f64>,
    own_rest: &DMatrix<f64>,
    other_block: &DMatrix<f64>,
    sigma2: f64,
    index: usize,
) -> Result<f64, CrbError> {
    let e_own = oblique_projection(own_rest, other_block)?;
    let e_other = oblique_projection(other_block, own_rest)?;
    let den = g.norm_squared() - g.dot(&(&e_own * g)) - g.dot(&(&e_other * g));
    if !(den > 0.0) {
        return Err(CrbError::NonPositiveDenominator { index, value: den });
    }
    Ok(sigma2 / den)
}

/// The CRB matrix `B(η) = σ² (JᵀJ)⁻¹` with per-parameter bounds and trace.
pub fn crb_matrix(params: &WhParams, sigma2: f64) -> Result<CrbReport, CrbError> {
    if sigma2 <= 0.0 {
        return Err(CrbError::InvalidSigma(sigma2));
    }
    let d = MultisetDomain::new(params.order(), params.memory());
    let pair = jacobian_pair_on(params, &d)?;
    let j = pair.joined();
    let n = j.ncols();
    let svd = nalgebra::SVD::new(j, false, true);
    let s = &svd.singular_values;
    let smax = s[0];
    let smin = s[n - 1];
    let cond = (smax / smin) * (smax / smin);
    if smin <= 0.0 || !cond.is_finite() || cond > 1e12 {
        return Err(CrbError::SingularFim { cond });
    }
    let v_t = svd.v_t.as_ref().expect("v requested");
    // B = σ² V Σ⁻² Vᵀ
    let mut scaled = v_t.clone();
    for (i, mut row) in scaled.row_iter_mut().enumerate() {
        row *= 1.0 / (s[i] * s[i]);
    }
    let b = sigma2 * (v_t.transpose() * scaled);
    let trace = b.diagonal().sum();
    let per_param = crb_per_param(&pair, sigma2)?;
    Ok(CrbReport { b, per_param, trace, trace_db: 10.0 * trace.log10(), sigma2 })
}
