//! Non-iterative estimation through the square unfolding.
//!
//! In the noiseless case the square unfolding factors as
//! `Ỹ = (C ⊙ C) Aᵀ` with `A = C^{⊙(p−2)} diag(h)` (whose structure is
//! deliberately ignored). If `Ỹ = U Σ Vᵀ` is a truncated rank-`R` SVD, there
//! is a nonsingular `N` with `U N = C⁽¹⁾ ⊙ C⁽²⁾`, and expanding both factors
//! in the orthogonal shift basis `{E_ℓ}` turns this into the homogeneous
//! linear system
//!
//! ```text
//! U N − Σ_{ij} Z_{ij} (E_i ⊙ E_j) = 0,      Z_{ij} = c⁽¹⁾_i c⁽²⁾_j,
//! ```
//!
//! of `M²R` equations in `R² + L_w²` unknowns (one fixed by scale). The
//! minimal-residual unit-norm solution is the right singular vector of the
//! stacked system matrix for its smallest singular value, which handles the
//! noisy (inconsistent) case as total least squares. `Z` is then collapsed
//! to its best rank-1 approximation, both coefficient vectors are normalized
//! to leading entry 1 and averaged, and `h` is recovered by the exact
//! least-squares step shared with CALS.

use nalgebra::{DMatrix, DVector};

use crate::multilinear::{khatri_rao, khatri_rao_power, square_unfold, SymTensor};
use crate::whmodel::{banded_factor, basis_matrices, EtaVector};

use super::{svd_lstsq, EstimateError, EstimateResult, EstimateStatus, FailureReason};

const RANK_TOL: f64 = 1e-12;

/// Right singular vector for the smallest singular value, together with
/// `(σ_min, σ_second_smallest, σ_max)`. Pads with zero rows when the matrix
/// is wider than tall so the full right basis is available.
fn smallest_right_singular(a: DMatrix<f64>) -> (DVector<f64>, f64, f64, f64) {
    let (rows, cols) = a.shape();
    let padded = if rows < cols {
        let mut p = DMatrix::zeros(cols, cols);
        p.rows_mut(0, rows).copy_from(&a);
        p
    } else {
        a
    };
    let svd = nalgebra::SVD::new(padded, false, true);
    let v_t = svd.v_t.expect("v requested");
    let s = &svd.singular_values;
    let n = s.len();
    let x = DVector::from_row_slice(v_t.row(n - 1).transpose().as_slice());
    (x, s[n - 1], s[n - 2], s[0])
}

/// Non-iterative estimation of `(w, h)` from a data tensor of order `p ≥ 3`.
pub fn cptoep(y: &SymTensor, l_w: usize, r: usize) -> Result<EstimateResult, EstimateError> {
    let p = y.order();
    let m = y.dim();
    if p < 3 {
        return Err(EstimateError::Dimension(format!(
            "CPTOEP needs tensor order >= 3, got {}",
            p
        )));
    }
    if l_w == 0 || r == 0 || m != l_w + r - 1 {
        return Err(EstimateError::Dimension(format!(
            "tensor dim {} does not match L_w + R - 1 = {}",
            m,
            l_w + r - 1
        )));
    }
    if m * m * r < l_w * l_w + r * r - 1 {
        return Err(EstimateError::Underdetermined);
    }

    // truncated rank-R SVD of the square unfolding
    let yt = square_unfold(y)?;
    let svd = nalgebra::SVD::new(yt, true, false);
    let s = &svd.singular_values;
    if s.len() < r || s[0] <= 0.0 || !s[0].is_finite() || s[r - 1] / s[0] < RANK_TOL {
        return Err(EstimateError::failed(FailureReason::RankDeficient));
    }
    let u = svd.u.as_ref().expect("u requested").columns(0, r).into_owned();

    // stacked homogeneous system in (vec N, vec Z)
    let m2 = m * m;
    let (e_mats, _) = basis_matrices(m, r, l_w).map_err(|e| EstimateError::Dimension(e.to_string()))?;
    let ncols = r * r + l_w * l_w;
    let mut sys = DMatrix::zeros(m2 * r, ncols);
    for j in 0..r {
        for i in 0..r {
            let col = j * r + i;
            for row in 0..m2 {
                sys[(j * m2 + row, col)] = u[(row, i)];
            }
        }
    }
    for j in 0..l_w {
        for i in 0..l_w {
            let col = r * r + j * l_w + i;
            let kr = khatri_rao(&e_mats[i], &e_mats[j]).expect("equal column counts");
            for (row, &v) in kr.as_slice().iter().enumerate() {
                sys[(row, col)] = -v;
            }
        }
    }

    let (sol, _s_min, s_second, s_max) = smallest_right_singular(sys);
    if s_second / s_max < RANK_TOL {
        // more than one null direction: Z is not determined up to scale
        return Err(EstimateError::failed(FailureReason::RankDeficient));
    }

    // rank-1 collapse of Z and the w_0 = 1 normalization
    let z = DMatrix::from_column_slice(l_w, l_w, &sol.as_slice()[r * r..]);
    let zsvd = nalgebra::SVD::new(z, true, true);
    let c1 = zsvd.u.as_ref().expect("u").column(0).into_owned();
    let c2 = zsvd.v_t.as_ref().expect("v").row(0).transpose();
    for c in [&c1, &c2] {
        if c[0].abs() < 1e-12 * c.amax() {
            return Err(EstimateError::failed(FailureReason::FirstEntryZero));
        }
    }
    let mut w_hat = (&c1 / c1[0] + &c2 / c2[0]) / 2.0;
    w_hat[0] = 1.0;

    // h as in CALS step 3
    let kp = khatri_rao_power(&banded_factor(&w_hat, r), p);
    let y_vec = DVector::from_column_slice(y.data());
    let h = svd_lstsq(kp.clone(), &y_vec, RANK_TOL).map_err(EstimateError::failed)?;
    let objective = (&y_vec - kp * &h).norm_squared();

    Ok(EstimateResult {
        eta_hat: EtaVector::from_parts(&w_hat.as_slice()[1..], h.as_slice()),
        objective,
        iterations: 0,
        status: EstimateStatus::Converged,
    })
}
