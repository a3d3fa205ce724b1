//! Never-inlined lane-row primitives.
//!
//! Every function here is one pass over `[f64; N]` rows. They are
//! `#[inline(never)]` on purpose: inlined into a monomorphized generic
//! caller, the autovectorizer regroups these loops across rows and emits
//! gather/scatter sequences an order of magnitude slower than the packed
//! arithmetic it produces for the functions standing alone. The call
//! boundary is what keeps the codegen clean, so do not "fix" the
//! attribute, and route any new hot row loop over pose or row blocks
//! through this module.

/// `dst = a0·b0 + a1·b1 + a2·b2`, lane-wise products.
#[inline(never)]
pub(crate) fn dot3<const N: usize>(
    dst: &mut [f64; N],
    a0: &[f64; N],
    b0: &[f64; N],
    a1: &[f64; N],
    b1: &[f64; N],
    a2: &[f64; N],
    b2: &[f64; N],
) {
    for lane in 0..N {
        dst[lane] =
            a0[lane] * b0[lane] + a1[lane] * b1[lane] + a2[lane] * b2[lane];
    }
}

/// `dst = off + a0·b0 + a1·b1 + a2·b2`.
#[inline(never)]
pub(crate) fn dot3_off<const N: usize>(
    dst: &mut [f64; N],
    off: &[f64; N],
    a0: &[f64; N],
    b0: &[f64; N],
    a1: &[f64; N],
    b1: &[f64; N],
    a2: &[f64; N],
    b2: &[f64; N],
) {
    for lane in 0..N {
        dst[lane] = off[lane]
            + a0[lane] * b0[lane]
            + a1[lane] * b1[lane]
            + a2[lane] * b2[lane];
    }
}

/// `dst = −a0·b0 − a1·b1 − a2·b2`.
#[inline(never)]
pub(crate) fn neg_dot3<const N: usize>(
    dst: &mut [f64; N],
    a0: &[f64; N],
    b0: &[f64; N],
    a1: &[f64; N],
    b1: &[f64; N],
    a2: &[f64; N],
    b2: &[f64; N],
) {
    for lane in 0..N {
        dst[lane] = -(a0[lane] * b0[lane])
            - a1[lane] * b1[lane]
            - a2[lane] * b2[lane];
    }
}

/// `dst = a0·c0 + a1·c1 + a2·c2` with scalar coefficients.
#[inline(never)]
pub(crate) fn scale3<const N: usize>(
    dst: &mut [f64; N],
    a0: &[f64; N],
    c0: f64,
    a1: &[f64; N],
    c1: f64,
    a2: &[f64; N],
    c2: f64,
) {
    for lane in 0..N {
        dst[lane] = a0[lane] * c0 + a1[lane] * c1 + a2[lane] * c2;
    }
}

/// `dst = off + a0·c0 + a1·c1 + a2·c2` with scalar coefficients.
#[inline(never)]
pub(crate) fn scale3_off<const N: usize>(
    dst: &mut [f64; N],
    off: &[f64; N],
    a0: &[f64; N],
    c0: f64,
    a1: &[f64; N],
    c1: f64,
    a2: &[f64; N],
    c2: f64,
) {
    for lane in 0..N {
        dst[lane] =
            off[lane] + a0[lane] * c0 + a1[lane] * c1 + a2[lane] * c2;
    }
}

/// `dst = off + a0·c0 + a1·c1 + a2·c2` with a scalar offset too.
#[inline(never)]
pub(crate) fn scale3_soff<const N: usize>(
    dst: &mut [f64; N],
    off: f64,
    a0: &[f64; N],
    c0: f64,
    a1: &[f64; N],
    c1: f64,
    a2: &[f64; N],
    c2: f64,
) {
    for lane in 0..N {
        dst[lane] = off + a0[lane] * c0 + a1[lane] * c1 + a2[lane] * c2;
    }
}

/// `dst += (r0·c0 + r1·c1 + r2·c2)·v`: a constant direction pushed
/// through a lane rotation row and scaled by a lane value.
#[inline(never)]
pub(crate) fn scaled_dir_mul_add<const N: usize>(
    dst: &mut [f64; N],
    r0: &[f64; N],
    c0: f64,
    r1: &[f64; N],
    c1: f64,
    r2: &[f64; N],
    c2: f64,
    v: &[f64; N],
) {
    for lane in 0..N {
        let dir = r0[lane] * c0 + r1[lane] * c1 + r2[lane] * c2;
        dst[lane] += dir * v[lane];
    }
}

/// One Rodrigues rotation entry: `dst = id + s·k + (1 − c)·k2`.
#[inline(never)]
pub(crate) fn rodrigues_entry<const N: usize>(
    dst: &mut [f64; N],
    s: &[f64; N],
    c: &[f64; N],
    id: f64,
    k: f64,
    k2: f64,
) {
    for lane in 0..N {
        dst[lane] = id + s[lane] * k + (1.0 - c[lane]) * k2;
    }
}

/// `dst = a·b`.
#[inline(never)]
pub(crate) fn mul2<const N: usize>(
    dst: &mut [f64; N],
    a: &[f64; N],
    b: &[f64; N],
) {
    for lane in 0..N {
        dst[lane] = a[lane] * b[lane];
    }
}

/// `dst = a·b·c + d·e`.
#[inline(never)]
pub(crate) fn mul3_add_mul2<const N: usize>(
    dst: &mut [f64; N],
    a: &[f64; N],
    b: &[f64; N],
    c: &[f64; N],
    d: &[f64; N],
    e: &[f64; N],
) {
    for lane in 0..N {
        dst[lane] = a[lane] * b[lane] * c[lane] + d[lane] * e[lane];
    }
}

/// `dst = a·b·c − d·e`.
#[inline(never)]
pub(crate) fn mul3_sub_mul2<const N: usize>(
    dst: &mut [f64; N],
    a: &[f64; N],
    b: &[f64; N],
    c: &[f64; N],
    d: &[f64; N],
    e: &[f64; N],
) {
    for lane in 0..N {
        dst[lane] = a[lane] * b[lane] * c[lane] - d[lane] * e[lane];
    }
}

/// `dst = −a`.
#[inline(never)]
pub(crate) fn neg<const N: usize>(dst: &mut [f64; N], a: &[f64; N]) {
    for lane in 0..N {
        dst[lane] = -a[lane];
    }
}

/// Signed overshoot of each lane past `[lo, hi]`, zero inside. Keeps
/// the exact max/min shape of the scalar bound residual.
#[inline(never)]
pub(crate) fn bound_excess<const N: usize>(
    dst: &mut [f64; N],
    v: &[f64; N],
    lo: f64,
    hi: f64,
) {
    for lane in 0..N {
        dst[lane] = (v[lane] - hi).max(0.0) + (v[lane] - lo).min(0.0);
    }
}

/// `dst = a0·c0 + a1·c1 + a2·c2` on masked lanes, zero elsewhere.
#[inline(never)]
pub(crate) fn masked_scale3<const N: usize>(
    dst: &mut [f64; N],
    mask: &[bool; N],
    a0: &[f64; N],
    c0: f64,
    a1: &[f64; N],
    c1: f64,
    a2: &[f64; N],
    c2: f64,
) {
    for lane in 0..N {
        dst[lane] = if mask[lane] {
            a0[lane] * c0 + a1[lane] * c1 + a2[lane] * c2
        } else {
            0.0
        };
    }
}

/// `dst = (p − m) / d` on masked lanes, zero elsewhere.
#[inline(never)]
pub(crate) fn masked_diff_quotient<const N: usize>(
    dst: &mut [f64; N],
    mask: &[bool; N],
    p: &[f64; N],
    m: &[f64; N],
    d: f64,
) {
    for lane in 0..N {
        dst[lane] = if mask[lane] { (p[lane] - m[lane]) / d } else { 0.0 };
    }
}
