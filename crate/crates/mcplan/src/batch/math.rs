//! Lane-parallel elementary functions.
//!
//! `std::f64::sin`/`cos` go through scalar library calls that the
//! vectorizer cannot touch, so the forward-kinematics inner loop would run
//! one lane at a time. This module evaluates sine, cosine, and arccosine
//! on a whole `[f64; N]` block with branch-free code: classic range
//! reduction and minimax kernels, with every regime computed for every
//! lane and the right one picked by lane-wise selects. Everything is
//! straight arithmetic on fixed-size arrays, which LLVM maps onto
//! full-width vector instructions.
//!
//! Absolute error stays below ~2 ulp for `|x| ≲ 1e6`, far tighter than the
//! equivalence tolerance between batched and scalar kinematics. Inputs are
//! joint angles, so the huge-argument reduction path of a full libm is
//! deliberately out of scope.
//!
//! The rotation logarithm lives here too: it is the one piece of
//! constraint evaluation that would otherwise fall back to per-lane
//! scalar trigonometry, and it sits on the hot path of every residual
//! and every finite-difference Jacobian column.

use crate::geom::{log_so3, Rotation, NEAR_PI, SMALL_ANGLE};
use nalgebra::Matrix3;
use std::f64::consts::FRAC_2_PI;

/// Adding then subtracting `1.5 · 2^52` rounds to the nearest integer and
/// leaves that integer in the low mantissa bits, two's complement.
const ROUND_MAGIC: f64 = 6755399441055744.0;

// π/2 split into a 33-bit head and a tail, so `x - n·head` is exact for
// the `n` that matter and the tail refines the remainder.
const PIO2_HI: f64 = 1.57079632673412561417e+00;
const PIO2_LO: f64 = 6.07710050650619224932e-11;
const PIO2_LO2: f64 = 2.02226624879595063154e-21;

// Minimax coefficients for sin(r)/r − 1 and cos(r) on [−π/4, π/4].
const S1: f64 = -1.66666666666666324348e-01;
const S2: f64 = 8.33333333332248946124e-03;
const S3: f64 = -1.98412698298579493134e-04;
const S4: f64 = 2.75573137070700676789e-06;
const S5: f64 = -2.50507602534068634195e-08;
const S6: f64 = 1.58969099521155010221e-10;

const C1: f64 = 4.16666666666666019037e-02;
const C2: f64 = -1.38888888888741095749e-03;
const C3: f64 = 2.48015872894767294178e-05;
const C4: f64 = -2.75573143513906633035e-07;
const C5: f64 = 2.08757232129817482790e-09;
const C6: f64 = -1.13596475577881948265e-11;

/// Sine and cosine of every lane of `x`.
pub fn sin_cos<const N: usize>(x: &[f64; N]) -> ([f64; N], [f64; N]) {
    let mut sin_out = [0.0; N];
    let mut cos_out = [0.0; N];
    for lane in 0..N {
        let xi = x[lane];

        // n = round(x · 2/π); quadrant = n mod 4 read from the magic sum.
        let biased = xi * FRAC_2_PI + ROUND_MAGIC;
        let quadrant = (biased.to_bits() & 3) as u32;
        let n = biased - ROUND_MAGIC;

        let r = xi - n * PIO2_HI;
        let w = n * PIO2_LO;
        let rr = (r - w) - n * PIO2_LO2;

        let z = rr * rr;

        // sin kernel: r + r·z·(S1 + z(S2 + ... ))
        let ps = S1 + z * (S2 + z * (S3 + z * (S4 + z * (S5 + z * S6))));
        let ks = rr + rr * z * ps;

        // cos kernel: 1 − z/2 + z²·(C1 + z(C2 + ... ))
        let pc = C1 + z * (C2 + z * (C3 + z * (C4 + z * (C5 + z * C6))));
        let kc = 1.0 - 0.5 * z + z * z * pc;

        let swap = quadrant & 1 != 0;
        let s_base = if swap { kc } else { ks };
        let c_base = if swap { ks } else { kc };
        let s_neg = quadrant & 2 != 0;
        let c_neg = (quadrant.wrapping_add(1)) & 2 != 0;
        sin_out[lane] = if s_neg { -s_base } else { s_base };
        cos_out[lane] = if c_neg { -c_base } else { c_base };
    }
    (sin_out, cos_out)
}

// π/2 as a head and the rounding tail of the head.
const HALF_PI_HI: f64 = 1.57079632679489655800e+00;
const HALF_PI_LO: f64 = 6.12323399573676603587e-17;

// Rational minimax coefficients for `(asin(x) − x) / x³` on `[0, 0.25]`,
// numerator over denominator.
const AP0: f64 = 1.66666666666666657415e-01;
const AP1: f64 = -3.25565818622400915405e-01;
const AP2: f64 = 2.01212532134862925881e-01;
const AP3: f64 = -4.00555345006794114027e-02;
const AP4: f64 = 7.91534994289814532176e-04;
const AP5: f64 = 3.47933107596021167570e-05;
const AQ1: f64 = -2.40339491173441421878e+00;
const AQ2: f64 = 2.02094576023350569471e+00;
const AQ3: f64 = -6.88283971605453293030e-01;
const AQ4: f64 = 7.70381505559019352791e-02;

/// Arccosine of every lane. Inputs must lie in `[−1, 1]`; callers clamp.
///
/// Three regimes share one rational kernel evaluation: `|x| < 0.5` folds
/// the asin series around π/2, and the two outer regimes use
/// `acos(x) = 2·asin(√((1 − |x|)/2))` with a split-word correction on the
/// positive side that keeps the result inside 1 ulp as x → 1.
///
/// Never inlined: merged into a bigger monomorphized body, the
/// autovectorizer regroups the lane loop into gather sequences.
#[inline(never)]
pub fn acos<const N: usize>(x: &[f64; N]) -> [f64; N] {
    let mut out = [0.0; N];
    for lane in 0..N {
        let xv = x[lane];
        let ax = xv.abs();
        let inner = ax < 0.5;

        let z = if inner { xv * xv } else { 0.5 * (1.0 - ax) };
        let p = z * (AP0 + z * (AP1 + z * (AP2 + z * (AP3 + z * (AP4 + z * AP5)))));
        let q = 1.0 + z * (AQ1 + z * (AQ2 + z * (AQ3 + z * AQ4)));
        let r = p / q;
        let s = z.sqrt();

        let res_inner = HALF_PI_HI - (xv - (HALF_PI_LO - xv * r));
        let res_neg = 2.0 * (HALF_PI_HI - (s + (r * s - HALF_PI_LO)));
        // High word of s, so `df²` is exact and `c` recovers the rest.
        let df = f64::from_bits(s.to_bits() & 0xffff_ffff_0000_0000);
        let c = (z - df * df) / (s + df);
        let res_pos = 2.0 * (df + (r * s + c));

        let outer = if xv < 0.0 { res_neg } else { res_pos };
        let res = if inner { res_inner } else { outer };
        // x = 1 sends the positive regime through 0/0; the value is exact.
        out[lane] = if xv == 1.0 { 0.0 } else { res };
    }
    out
}

/// Lane-parallel SO(3) logarithm of the nine rotation rows of a pose
/// block, row-major like [`PoseBlock::rot`](super::PoseBlock).
///
/// Same regimes as the scalar [`log_so3`]: a Taylor factor below
/// [`SMALL_ANGLE`], the exact `θ/sin θ` scaling in the bulk (with
/// `sin θ = √((1−cos θ)(1+cos θ))`, safe for θ in `[0, π]`), and within
/// [`NEAR_PI`] of a half turn a per-lane hand-off to the scalar path,
/// which recovers the axis from `R + I`. The hand-off depends only on
/// that lane's values, so lane permutation still permutes results bit
/// for bit.
#[inline(never)]
pub fn log_rotation<const N: usize>(rot: &[[f64; N]; 9]) -> [[f64; N]; 3] {
    let mut cos_t = [0.0; N];
    for lane in 0..N {
        let trace = rot[0][lane] + rot[4][lane] + rot[8][lane];
        cos_t[lane] = (0.5 * (trace - 1.0)).clamp(-1.0, 1.0);
    }
    let theta = acos(&cos_t);

    let mut factor = [0.0; N];
    for lane in 0..N {
        let c = cos_t[lane];
        let t = theta[lane];
        let exact = t / ((1.0 - c) * (1.0 + c)).sqrt();
        let taylor = 1.0 + t * t / 6.0;
        factor[lane] = if t < SMALL_ANGLE { taylor } else { exact };
    }

    let mut w = [[0.0; N]; 3];
    for lane in 0..N {
        w[0][lane] = 0.5 * (rot[7][lane] - rot[5][lane]) * factor[lane];
        w[1][lane] = 0.5 * (rot[2][lane] - rot[6][lane]) * factor[lane];
        w[2][lane] = 0.5 * (rot[3][lane] - rot[1][lane]) * factor[lane];
    }

    let near_pi = std::f64::consts::PI - NEAR_PI;
    if theta.iter().any(|&t| t > near_pi) {
        for lane in 0..N {
            if theta[lane] > near_pi {
                let m = Matrix3::new(
                    rot[0][lane],
                    rot[1][lane],
                    rot[2][lane],
                    rot[3][lane],
                    rot[4][lane],
                    rot[5][lane],
                    rot[6][lane],
                    rot[7][lane],
                    rot[8][lane],
                );
                let v = log_so3(&Rotation::from_matrix(m));
                w[0][lane] = v.x;
                w[1][lane] = v.y;
                w[2][lane] = v.z;
            }
        }
    }
    w
}
