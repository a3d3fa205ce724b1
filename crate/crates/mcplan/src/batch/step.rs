//! Damped least-squares update for one constraint's residual.
//!
//! Given a residual `d` (k×1) and Jacobian `J` (k×d) per lane, the update
//! direction is the Levenberg-Marquardt step
//!
//! ```text
//! Δq = α · Jᵀ (J Jᵀ + λI)⁻¹ d        (inner form, k×k solve)
//! Δq = α · (Jᵀ J + λI)⁻¹ Jᵀ d        (outer form, d×d solve)
//! ```
//!
//! The two forms agree in exact arithmetic for λ → 0 and differ only in
//! which Gram matrix is factored; the inner form is cheaper when the
//! constraint has fewer rows than the robot has joints, which is the
//! common case.

use super::{cholesky_solve_in_place, BatchMatrix, LaneMask};

/// Which Gram matrix the damped step factors.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StepMode {
    /// Factor `J Jᵀ + λI` (k×k).
    Inner,
    /// Factor `Jᵀ J + λI` (d×d).
    Outer,
    /// Pick [`StepMode::Inner`] when k < d, [`StepMode::Outer`] otherwise.
    Auto,
}

impl StepMode {
    pub fn resolve(self, k: usize, d: usize) -> StepMode {
        match self {
            StepMode::Auto => {
                if k < d {
                    StepMode::Inner
                } else {
                    StepMode::Outer
                }
            }
            fixed => fixed,
        }
    }
}

/// Reusable buffers for [`damped_step`]; one per projection loop, sized on
/// first use and reused without reallocation afterwards.
#[derive(Debug)]
pub struct StepScratch<const N: usize> {
    gram: BatchMatrix<N>,
    rhs: BatchMatrix<N>,
}

impl<const N: usize> StepScratch<N> {
    pub fn new() -> Self {
        StepScratch {
            gram: BatchMatrix::zeros(0, 0),
            rhs: BatchMatrix::zeros(0, 0),
        }
    }
}

impl<const N: usize> Default for StepScratch<N> {
    fn default() -> Self {
        Self::new()
    }
}

/// Computes `delta` (d×1 per lane) from `jac` (k×d) and `residual` (k×1).
///
/// `mode` must already be resolved (not [`StepMode::Auto`]). Lanes whose
/// Gram factorization hit the pivot floor are OR-ed into `failed`.
pub fn damped_step<const N: usize>(
    jac: &BatchMatrix<N>,
    residual: &BatchMatrix<N>,
    lambda: f64,
    alpha: f64,
    mode: StepMode,
    delta: &mut BatchMatrix<N>,
    scratch: &mut StepScratch<N>,
    failed: &mut LaneMask<N>,
) {
    let k = jac.rows();
    let d = jac.cols();
    debug_assert_eq!(residual.rows(), k);
    debug_assert_eq!(residual.cols(), 1);
    delta.resize(d, 1);

    match mode {
        StepMode::Inner => {
            // gram = J Jᵀ + λI; solve gram·y = d; delta = α·Jᵀ y.
            scratch.gram.resize(k, k);
            for i in 0..k {
                for j in 0..=i {
                    let mut acc = if i == j { [lambda; N] } else { [0.0; N] };
                    for c in 0..d {
                        let a = jac.at(i, c);
                        let b = jac.at(j, c);
                        for lane in 0..N {
                            acc[lane] += a[lane] * b[lane];
                        }
                    }
                    *scratch.gram.at_mut(i, j) = acc;
                }
            }
            scratch.rhs.resize(k, 1);
            for i in 0..k {
                *scratch.rhs.at_mut(i, 0) = *residual.at(i, 0);
            }
            cholesky_solve_in_place(&mut scratch.gram, &mut scratch.rhs, failed);
            for c in 0..d {
                let mut acc = [0.0; N];
                for i in 0..k {
                    let a = jac.at(i, c);
                    let y = scratch.rhs.at(i, 0);
                    for lane in 0..N {
                        acc[lane] += a[lane] * y[lane];
                    }
                }
                for lane in 0..N {
                    acc[lane] *= alpha;
                }
                *delta.at_mut(c, 0) = acc;
            }
        }
        StepMode::Outer => {
            // gram = Jᵀ J + λI; rhs = Jᵀ d; delta = α·gram⁻¹ rhs.
            scratch.gram.resize(d, d);
            for i in 0..d {
                for j in 0..=i {
                    let mut acc = if i == j { [lambda; N] } else { [0.0; N] };
                    for r in 0..k {
                        let a = jac.at(r, i);
                        let b = jac.at(r, j);
                        for lane in 0..N {
                            acc[lane] += a[lane] * b[lane];
                        }
                    }
                    *scratch.gram.at_mut(i, j) = acc;
                }
            }
            scratch.rhs.resize(d, 1);
            for i in 0..d {
                let mut acc = [0.0; N];
                for r in 0..k {
                    let a = jac.at(r, i);
                    let v = residual.at(r, 0);
                    for lane in 0..N {
                        acc[lane] += a[lane] * v[lane];
                    }
                }
                *scratch.rhs.at_mut(i, 0) = acc;
            }
            cholesky_solve_in_place(&mut scratch.gram, &mut scratch.rhs, failed);
            for i in 0..d {
                let y = *scratch.rhs.at(i, 0);
                let dst = delta.at_mut(i, 0);
                for lane in 0..N {
                    dst[lane] = alpha * y[lane];
                }
            }
        }
        StepMode::Auto => unreachable!("resolve StepMode::Auto before calling damped_step"),
    }
}
