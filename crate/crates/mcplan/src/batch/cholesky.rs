//! Batched Cholesky factorization and solve.
//!
//! Factors `N` small symmetric positive definite systems at once, one per
//! lane. There is no per-lane control flow: a pivot that falls below
//! [`PIVOT_FLOOR`] is clamped and the lane is flagged in the failure mask,
//! so every lane runs the identical instruction stream and the caller
//! decides what a flagged lane means (for the projection loop it marks the
//! lane diverged).

use super::{BatchMatrix, LaneMask};

/// Smallest pivot accepted before a lane is flagged as numerically
/// singular. Damping in the callers keeps healthy pivots well above this.
pub const PIVOT_FLOOR: f64 = 1e-12;

/// Factors the lower triangle of `a` (m×m per lane) in place and solves
/// `a · x = b` for each right-hand-side column of `b` (m×c per lane),
/// overwriting `b` with the solution.
///
/// Only the lower triangle of `a` is read. Lanes whose factorization hit
/// the pivot floor are OR-ed into `failed`; their solution values are
/// well-defined junk and must be masked by the caller.
pub fn cholesky_solve_in_place<const N: usize>(
    a: &mut BatchMatrix<N>,
    b: &mut BatchMatrix<N>,
    failed: &mut LaneMask<N>,
) {
    let m = a.rows();
    debug_assert_eq!(a.cols(), m);
    debug_assert_eq!(b.rows(), m);

    for j in 0..m {
        // Pivot: a[j][j] − Σ_{k<j} L[j][k]².
        let mut pivot = *a.at(j, j);
        for k in 0..j {
            let l = *a.at(j, k);
            for lane in 0..N {
                pivot[lane] -= l[lane] * l[lane];
            }
        }
        let mut inv_diag = [0.0; N];
        let diag = a.at_mut(j, j);
        for lane in 0..N {
            let bad = !(pivot[lane] >= PIVOT_FLOOR); // catches NaN too
            failed.0[lane] |= bad;
            let p = if bad { PIVOT_FLOOR } else { pivot[lane] };
            let d = p.sqrt();
            diag[lane] = d;
            inv_diag[lane] = 1.0 / d;
        }

        for i in (j + 1)..m {
            let mut v = *a.at(i, j);
            for k in 0..j {
                let lik = *a.at(i, k);
                let ljk = *a.at(j, k);
                for lane in 0..N {
                    v[lane] -= lik[lane] * ljk[lane];
                }
            }
            let dst = a.at_mut(i, j);
            for lane in 0..N {
                dst[lane] = v[lane] * inv_diag[lane];
            }
        }
    }

    let cols = b.cols();
    for c in 0..cols {
        // Forward substitution: L y = b.
        for i in 0..m {
            let mut v = *b.at(i, c);
            for k in 0..i {
                let l = *a.at(i, k);
                let y = *b.at(k, c);
                for lane in 0..N {
                    v[lane] -= l[lane] * y[lane];
                }
            }
            let diag = *a.at(i, i);
            let dst = b.at_mut(i, c);
            for lane in 0..N {
                dst[lane] = v[lane] / diag[lane];
            }
        }
        // Back substitution: Lᵀ x = y.
        for i in (0..m).rev() {
            let mut v = *b.at(i, c);
            for k in (i + 1)..m {
                let l = *a.at(k, i);
                let x = *b.at(k, c);
                for lane in 0..N {
                    v[lane] -= l[lane] * x[lane];
                }
            }
            let diag = *a.at(i, i);
            let dst = b.at_mut(i, c);
            for lane in 0..N {
                dst[lane] = v[lane] / diag[lane];
            }
        }
    }
}
