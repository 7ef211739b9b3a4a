//! Circulant-constrained alternating least squares.
//!
//! Each outer iteration performs three steps on the current iterates
//! `(ŵ, ĥ)`:
//!
//! 1. `v ← (1/R) Eᵀ vec{ Y_flat (Ŵᵀ)† diag(ĥ)⁻¹ }` with `Ŵ = Ĉ^{⊙(p−1)}`,
//!    projecting the unconstrained factor update back onto the banded
//!    Toeplitz structure through the orthogonal shift basis `E`;
//! 2. `ŵ ← v / v_0`, restoring the `w_0 = 1` normalization;
//! 3. `ĥ ← (Ĉ^{⊙p})† vec(Y)`, the exact least-squares update of the scaling.
//!
//! The run stops when the relative change of the reconstruction error
//! `J_Y = ‖Y − X(ŵ, ĥ)‖_F²` falls below `rel_tol`, when `J_Y` hits the
//! machine floor (noiseless data converges to an exact decomposition, where
//! a relative criterion is meaningless), or at `max_iters`.

use nalgebra::{DMatrix, DVector};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::multilinear::{cpd_reconstruct, flat_unfold, khatri_rao_power, SymTensor};
use crate::whmodel::{banded_factor, EtaVector, WhParams};

use super::{
    derive_seed, svd_lstsq, CalsOptions, EstimateError, EstimateResult, EstimateStatus,
    FailureReason,
};

/// Below `J_Y ≤ REL_FLOOR · ‖Y‖_F²` the decomposition is exact to machine
/// precision and the iteration stops.
const REL_FLOOR: f64 = 1e-26;

/// Relative rank cutoff for the two pseudo-inverses.
const PINV_TOL: f64 = 1e-12;

/// Full-tensor reconstruction error `‖Y − X(params)‖_F²`.
pub fn objective_jy(y: &SymTensor, params: &WhParams) -> Result<f64, EstimateError> {
    if y.dim() != params.memory() || y.order() != params.order() {
        return Err(EstimateError::Dimension(format!(
            "tensor is order {} dim {}, model has order {} memory {}",
            y.order(),
            y.dim(),
            params.order(),
            params.memory()
        )));
    }
    let recon =
        cpd_reconstruct(&crate::whmodel::build_factor(params), params.h(), params.g_p(), params.order())?;
    Ok(y.data()
        .iter()
        .zip(recon.data())
        .map(|(a, b)| {
            let d = a - b;
            d * d
        })
        .sum())
}

fn pack_eta(w: &DVector<f64>, h: &DVector<f64>) -> EtaVector {
    EtaVector::from_parts(&w.as_slice()[1..], h.as_slice())
}

fn guard_h(h: &DVector<f64>, guard: f64) -> bool {
    let hmax = h.amax();
    hmax > 0.0 && h.iter().all(|&v| v.abs() >= guard * hmax)
}

/// One CALS run from explicit initial iterates. `w_init` is used as given
/// (the scale normalization of step 2 takes care of any scaling); `h_init`
/// must clear the zero guard since step 1 divides by its entries.
pub fn cals_iterate(
    y: &SymTensor,
    w_init: &DVector<f64>,
    h_init: &DVector<f64>,
    opts: &CalsOptions,
) -> Result<EstimateResult, EstimateError> {
    let l_w = w_init.len();
    let r = h_init.len();
    let p = y.order();
    if l_w == 0 || r == 0 || y.dim() != l_w + r - 1 {
        return Err(EstimateError::Dimension(format!(
            "tensor dim {} does not match L_w + R - 1 = {}",
            y.dim(),
            l_w + r - 1
        )));
    }
    if p < 2 {
        return Err(EstimateError::Dimension("CALS needs tensor order >= 2".to_string()));
    }
    if !guard_h(h_init, opts.h_zero_guard) {
        return Err(EstimateError::BadInit);
    }

    let m = y.dim();
    let y_flat = flat_unfold(y)?;
    let y_vec = DVector::from_column_slice(y.data());
    let floor = REL_FLOOR * y.norm_sq();
    let (_, e_mat) = crate::whmodel::basis_matrices(m, r, l_w)
        .map_err(|e| EstimateError::Dimension(e.to_string()))?;

    let mut w = w_init.clone();
    let mut h = h_init.clone();
    let mut j_prev = {
        let c = banded_factor(&w, r);
        (&y_vec - khatri_rao_power(&c, p) * &h).norm_squared()
    };

    for k in 1..=opts.max_iters {
        if !guard_h(&h, opts.h_zero_guard) {
            return Err(EstimateError::Failed {
                reason: FailureReason::SingularH,
                eta_last: Some(pack_eta(&w, &h)),
                iterations: k - 1,
            });
        }

        // step 1: unconstrained factor estimate, projected onto the band
        let c = banded_factor(&w, r);
        let w_kr = khatri_rao_power(&c, p - 1);
        let svd = nalgebra::SVD::new(w_kr, true, true);
        let smax = svd.singular_values[0];
        let rank_ok = smax.is_finite()
            && smax > 0.0
            && svd.singular_values.iter().filter(|&&s| s > PINV_TOL * smax).count() == r;
        if !rank_ok {
            return Err(EstimateError::Failed {
                reason: FailureReason::PseudoInverse,
                eta_last: Some(pack_eta(&w, &h)),
                iterations: k - 1,
            });
        }
        let qt = match svd.solve(&y_flat.transpose(), PINV_TOL * smax) {
            Ok(qt) => qt, // R × M, equals Ŵ† Y_flatᵀ
            Err(_) => {
                return Err(EstimateError::Failed {
                    reason: FailureReason::PseudoInverse,
                    eta_last: Some(pack_eta(&w, &h)),
                    iterations: k - 1,
                })
            }
        };
        let mut t = qt.transpose();
        for col in 0..r {
            let scale = 1.0 / h[col];
            t.column_mut(col).scale_mut(scale);
        }
        let v = e_mat.transpose() * DVector::from_column_slice(t.as_slice()) / r as f64;

        // step 2: scale normalization
        if !v[0].is_finite() || v[0] == 0.0 {
            return Err(EstimateError::Failed {
                reason: FailureReason::Divergence,
                eta_last: Some(pack_eta(&w, &h)),
                iterations: k - 1,
            });
        }
        w = &v / v[0];
        w[0] = 1.0;

        // step 3: least-squares update of h against the full vectorization
        let c = banded_factor(&w, r);
        let kp = khatri_rao_power(&c, p);
        h = match svd_lstsq(kp.clone(), &y_vec, PINV_TOL) {
            Ok(h) => h,
            Err(reason) => {
                return Err(EstimateError::Failed {
                    reason,
                    eta_last: Some(pack_eta(&w, &h)),
                    iterations: k,
                })
            }
        };

        let j = (&y_vec - kp * &h).norm_squared();
        if !j.is_finite() {
            return Err(EstimateError::Failed {
                reason: FailureReason::Divergence,
                eta_last: Some(pack_eta(&w, &h)),
                iterations: k,
            });
        }
        let converged =
            j <= floor || (j_prev > 0.0 && (j - j_prev).abs() / j_prev < opts.rel_tol);
        if converged {
            return Ok(EstimateResult {
                eta_hat: pack_eta(&w, &h),
                objective: j,
                iterations: k,
                status: EstimateStatus::Converged,
            });
        }
        j_prev = j;
    }

    Ok(EstimateResult {
        eta_hat: pack_eta(&w, &h),
        objective: j_prev,
        iterations: opts.max_iters,
        status: EstimateStatus::MaxIters,
    })
}

/// Random initialization used by [`n_cals`]: `w_0 = 1` with the remaining
/// taps i.i.d. standard normal; `h` i.i.d. standard normal, redrawn until
/// every entry clears 0.1 in magnitude (step 1 divides by `diag(h)`).
pub(crate) fn draw_init(rng: &mut ChaCha8Rng, l_w: usize, r: usize) -> (DVector<f64>, DVector<f64>) {
    let mut w = DVector::zeros(l_w);
    w[0] = 1.0;
    for i in 1..l_w {
        w[i] = rng.sample(StandardNormal);
    }
    let mut h = DVector::zeros(r);
    loop {
        for i in 0..r {
            h[i] = rng.sample(StandardNormal);
        }
        if h.iter().all(|&v| v.abs() >= 0.1) {
            return (w, h);
        }
    }
}

/// Best of `n_starts` CALS runs from seed-derived random initializations,
/// ranked by final reconstruction error. Failed starts are skipped; the
/// call fails only if every start does.
pub fn n_cals(
    y: &SymTensor,
    l_w: usize,
    r: usize,
    n_starts: usize,
    rng_seed: u64,
    opts: &CalsOptions,
) -> Result<EstimateResult, EstimateError> {
    if n_starts == 0 {
        return Err(EstimateError::Dimension("n_starts must be >= 1".to_string()));
    }
    let mut best: Option<EstimateResult> = None;
    for start in 0..n_starts {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(rng_seed, &[start as u64]));
        let (w0, h0) = draw_init(&mut rng, l_w, r);
        match cals_iterate(y, &w0, &h0, opts) {
            Ok(res) => {
                let better = best.as_ref().map_or(true, |b| res.objective < b.objective);
                if better {
                    best = Some(res);
                }
            }
            Err(_) => continue,
        }
    }
    best.ok_or(EstimateError::failed(FailureReason::AllStartsFailed))
}
