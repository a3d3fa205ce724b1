//! Fixed-width lane blocks: the structure-of-arrays layer everything
//! batched is built on.
//!
//! A block holds `N` independent problem instances ("lanes") with each
//! scalar quantity stored as a `[f64; N]` array, so inner loops over lanes
//! have unit stride and a compile-time trip count. The kernels contain no
//! lane-dependent branches: disabled or failed lanes keep computing and
//! their results are masked out afterwards, which is what lets the
//! compiler turn the loops into straight-line vector code.
//!
//! `N = 1` is not a special case anywhere; the scalar execution mode is
//! the one-lane instantiation of the same generic code.

mod cholesky;
mod math;
pub(crate) mod rows;
mod step;

pub use cholesky::{cholesky_solve_in_place, PIVOT_FLOOR};
pub use math::{acos, log_rotation, sin_cos};
pub use step::{damped_step, StepMode, StepScratch};

use crate::geom::{RigidTransform, Rotation};
use nalgebra::{Matrix3, Vector3};

/// Lane widths the runtime dispatcher accepts.
pub const SUPPORTED_LANES: [usize; 4] = [1, 4, 8, 16];

/// Expands `body` with `N` bound to the const lane width matching the
/// runtime value `n`, which must be one of [`SUPPORTED_LANES`].
#[macro_export]
macro_rules! with_lanes {
    ($n:expr, $N:ident, $body:expr) => {
        match $n {
            1 => {
                const $N: usize = 1;
                $body
            }
            4 => {
                const $N: usize = 4;
                $body
            }
            8 => {
                const $N: usize = 8;
                $body
            }
            16 => {
                const $N: usize = 16;
                $body
            }
            other => panic!("unsupported lane width {other}; expected 1, 4, 8, or 16"),
        }
    };
}

/// Per-lane boolean mask.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LaneMask<const N: usize>(pub [bool; N]);

impl<const N: usize> LaneMask<N> {
    pub fn none() -> Self {
        LaneMask([false; N])
    }

    pub fn all() -> Self {
        LaneMask([true; N])
    }

    pub fn get(&self, lane: usize) -> bool {
        self.0[lane]
    }

    pub fn set(&mut self, lane: usize, value: bool) {
        self.0[lane] = value;
    }

    pub fn any(&self) -> bool {
        self.0.iter().any(|&b| b)
    }

    pub fn all_set(&self) -> bool {
        self.0.iter().all(|&b| b)
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn or(&self, other: &Self) -> Self {
        let mut out = [false; N];
        for i in 0..N {
            out[i] = self.0[i] | other.0[i];
        }
        LaneMask(out)
    }

    pub fn and(&self, other: &Self) -> Self {
        let mut out = [false; N];
        for i in 0..N {
            out[i] = self.0[i] & other.0[i];
        }
        LaneMask(out)
    }

    pub fn not(&self) -> Self {
        let mut out = [false; N];
        for i in 0..N {
            out[i] = !self.0[i];
        }
        LaneMask(out)
    }
}

/// A block of `N` configurations of a `dof`-dimensional robot, stored with
/// each joint coordinate contiguous across lanes.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigBlock<const N: usize> {
    dof: usize,
    data: Vec<[f64; N]>,
}

impl<const N: usize> ConfigBlock<N> {
    pub fn zeros(dof: usize) -> Self {
        ConfigBlock {
            dof,
            data: vec![[0.0; N]; dof],
        }
    }

    /// Broadcasts one configuration into every lane.
    pub fn splat(q: &[f64]) -> Self {
        let mut block = Self::zeros(q.len());
        for (j, &v) in q.iter().enumerate() {
            block.data[j] = [v; N];
        }
        block
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn row(&self, joint: usize) -> &[f64; N] {
        &self.data[joint]
    }

    pub fn row_mut(&mut self, joint: usize) -> &mut [f64; N] {
        &mut self.data[joint]
    }

    pub fn copy_from(&mut self, src: &ConfigBlock<N>) {
        self.dof = src.dof;
        self.data.clear();
        self.data.extend_from_slice(&src.data);
    }

    pub fn set_lane(&mut self, lane: usize, q: &[f64]) {
        assert_eq!(q.len(), self.dof);
        for j in 0..self.dof {
            self.data[j][lane] = q[j];
        }
    }

    pub fn lane(&self, lane: usize) -> Vec<f64> {
        (0..self.dof).map(|j| self.data[j][lane]).collect()
    }

    pub fn copy_lane_to(&self, lane: usize, out: &mut [f64]) {
        for j in 0..self.dof {
            out[j] = self.data[j][lane];
        }
    }

    /// Squared Euclidean distance from each lane to a single configuration.
    pub fn dist_sq_to(&self, q: &[f64]) -> [f64; N] {
        let mut acc = [0.0; N];
        for j in 0..self.dof {
            let row = &self.data[j];
            for lane in 0..N {
                let d = row[lane] - q[j];
                acc[lane] += d * d;
            }
        }
        acc
    }

    /// `self[lane] -= delta[lane]` on lanes where `active` is set.
    ///
    /// `delta` is a dof×1 column block.
    pub fn sub_assign_masked(&mut self, delta: &BatchMatrix<N>, active: &LaneMask<N>) {
        debug_assert_eq!(delta.rows(), self.dof);
        debug_assert_eq!(delta.cols(), 1);
        for j in 0..self.dof {
            let row = &mut self.data[j];
            let d = delta.at(j, 0);
            for lane in 0..N {
                let stepped = row[lane] - d[lane];
                row[lane] = if active.0[lane] { stepped } else { row[lane] };
            }
        }
    }
}

/// Per-lane dense matrices with a shared shape: entry `(r, c)` of every
/// lane lives in one `[f64; N]`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchMatrix<const N: usize> {
    rows: usize,
    cols: usize,
    data: Vec<[f64; N]>,
}

impl<const N: usize> BatchMatrix<N> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        BatchMatrix {
            rows,
            cols,
            data: vec![[0.0; N]; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Reshapes in place, reusing the allocation when it already fits.
    pub fn resize(&mut self, rows: usize, cols: usize) {
        self.rows = rows;
        self.cols = cols;
        self.data.clear();
        self.data.resize(rows * cols, [0.0; N]);
    }

    pub fn fill_zero(&mut self) {
        for entry in &mut self.data {
            *entry = [0.0; N];
        }
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> &[f64; N] {
        &self.data[r * self.cols + c]
    }

    #[inline]
    pub fn at_mut(&mut self, r: usize, c: usize) -> &mut [f64; N] {
        &mut self.data[r * self.cols + c]
    }

    /// Per-lane squared column norm of a column block (`cols == 1`).
    pub fn col_norm_sq(&self) -> [f64; N] {
        debug_assert_eq!(self.cols, 1);
        let mut acc = [0.0; N];
        for r in 0..self.rows {
            let row = self.at(r, 0);
            for lane in 0..N {
                acc[lane] += row[lane] * row[lane];
            }
        }
        acc
    }

    /// Per-lane max absolute entry of a column block (`cols == 1`).
    pub fn col_max_abs(&self) -> [f64; N] {
        debug_assert_eq!(self.cols, 1);
        let mut acc = [0.0; N];
        for r in 0..self.rows {
            let row = self.at(r, 0);
            for lane in 0..N {
                let a = row[lane].abs();
                acc[lane] = if a > acc[lane] { a } else { acc[lane] };
            }
        }
        acc
    }
}

/// A block of `N` rigid transforms, rotation stored row-major.
#[derive(Clone, Debug)]
pub struct PoseBlock<const N: usize> {
    /// Rotation entries `r[3*i + j] = R[i][j]`, one `[f64; N]` each.
    pub rot: [[f64; N]; 9],
    pub trans: [[f64; N]; 3],
}

impl<const N: usize> PoseBlock<N> {
    pub fn identity() -> Self {
        let mut rot = [[0.0; N]; 9];
        rot[0] = [1.0; N];
        rot[4] = [1.0; N];
        rot[8] = [1.0; N];
        PoseBlock {
            rot,
            trans: [[0.0; N]; 3],
        }
    }

    /// Broadcasts one transform into every lane.
    pub fn splat(t: &RigidTransform) -> Self {
        let m = t.rotation.matrix();
        let mut rot = [[0.0; N]; 9];
        for i in 0..3 {
            for j in 0..3 {
                rot[3 * i + j] = [m[(i, j)]; N];
            }
        }
        PoseBlock {
            rot,
            trans: [
                [t.translation.x; N],
                [t.translation.y; N],
                [t.translation.z; N],
            ],
        }
    }

    pub fn lane(&self, lane: usize) -> RigidTransform {
        let m = Matrix3::new(
            self.rot[0][lane],
            self.rot[1][lane],
            self.rot[2][lane],
            self.rot[3][lane],
            self.rot[4][lane],
            self.rot[5][lane],
            self.rot[6][lane],
            self.rot[7][lane],
            self.rot[8][lane],
        );
        RigidTransform::new(
            Rotation::from_matrix(m),
            Vector3::new(self.trans[0][lane], self.trans[1][lane], self.trans[2][lane]),
        )
    }

    pub fn set_lane(&mut self, lane: usize, t: &RigidTransform) {
        let m = t.rotation.matrix();
        for i in 0..3 {
            for j in 0..3 {
                self.rot[3 * i + j][lane] = m[(i, j)];
            }
        }
        self.trans[0][lane] = t.translation.x;
        self.trans[1][lane] = t.translation.y;
        self.trans[2][lane] = t.translation.z;
    }

    /// `self ∘ other` lane by lane.
    pub fn compose(&self, other: &PoseBlock<N>) -> PoseBlock<N> {
        let mut out = PoseBlock {
            rot: [[0.0; N]; 9],
            trans: [[0.0; N]; 3],
        };
        for i in 0..3 {
            let a0 = &self.rot[3 * i];
            let a1 = &self.rot[3 * i + 1];
            let a2 = &self.rot[3 * i + 2];
            for j in 0..3 {
                rows::dot3(
                    &mut out.rot[3 * i + j],
                    a0,
                    &other.rot[j],
                    a1,
                    &other.rot[3 + j],
                    a2,
                    &other.rot[6 + j],
                );
            }
            rows::dot3_off(
                &mut out.trans[i],
                &self.trans[i],
                a0,
                &other.trans[0],
                a1,
                &other.trans[1],
                a2,
                &other.trans[2],
            );
        }
        out
    }

    /// `self ∘ t` where `t` is the same transform in every lane.
    pub fn compose_const(&self, t: &RigidTransform) -> PoseBlock<N> {
        let m = t.rotation.matrix();
        let tv = [t.translation.x, t.translation.y, t.translation.z];
        let mut out = PoseBlock {
            rot: [[0.0; N]; 9],
            trans: [[0.0; N]; 3],
        };
        for i in 0..3 {
            let a0 = &self.rot[3 * i];
            let a1 = &self.rot[3 * i + 1];
            let a2 = &self.rot[3 * i + 2];
            for j in 0..3 {
                rows::scale3(
                    &mut out.rot[3 * i + j],
                    a0,
                    m[(0, j)],
                    a1,
                    m[(1, j)],
                    a2,
                    m[(2, j)],
                );
            }
            rows::scale3_off(
                &mut out.trans[i],
                &self.trans[i],
                a0,
                tv[0],
                a1,
                tv[1],
                a2,
                tv[2],
            );
        }
        out
    }

    /// `t ∘ self` where `t` is the same transform in every lane.
    pub fn premul_const(&self, t: &RigidTransform) -> PoseBlock<N> {
        let m = t.rotation.matrix();
        let tv = [t.translation.x, t.translation.y, t.translation.z];
        let mut out = PoseBlock {
            rot: [[0.0; N]; 9],
            trans: [[0.0; N]; 3],
        };
        for i in 0..3 {
            let (a0, a1, a2) = (m[(i, 0)], m[(i, 1)], m[(i, 2)]);
            for j in 0..3 {
                rows::scale3(
                    &mut out.rot[3 * i + j],
                    &self.rot[j],
                    a0,
                    &self.rot[3 + j],
                    a1,
                    &self.rot[6 + j],
                    a2,
                );
            }
            rows::scale3_soff(
                &mut out.trans[i],
                tv[i],
                &self.trans[0],
                a0,
                &self.trans[1],
                a1,
                &self.trans[2],
                a2,
            );
        }
        out
    }

    /// Per-lane inverse: `(Rᵀ, −Rᵀ·t)`.
    pub fn inverse(&self) -> PoseBlock<N> {
        let mut out = PoseBlock {
            rot: [[0.0; N]; 9],
            trans: [[0.0; N]; 3],
        };
        for i in 0..3 {
            for j in 0..3 {
                out.rot[3 * i + j] = self.rot[3 * j + i];
            }
            rows::neg_dot3(
                &mut out.trans[i],
                &self.rot[i],
                &self.trans[0],
                &self.rot[3 + i],
                &self.trans[1],
                &self.rot[6 + i],
                &self.trans[2],
            );
        }
        out
    }

    /// Rotates a per-lane vector: `R · v`.
    pub fn rotate(&self, v: &[[f64; N]; 3]) -> [[f64; N]; 3] {
        let mut out = [[0.0; N]; 3];
        for i in 0..3 {
            rows::dot3(
                &mut out[i],
                &self.rot[3 * i],
                &v[0],
                &self.rot[3 * i + 1],
                &v[1],
                &self.rot[3 * i + 2],
                &v[2],
            );
        }
        out
    }

    /// Maps a per-lane point through the transform: `R · p + t`.
    pub fn apply(&self, p: &[[f64; N]; 3]) -> [[f64; N]; 3] {
        let mut out = [[0.0; N]; 3];
        for i in 0..3 {
            rows::dot3_off(
                &mut out[i],
                &self.trans[i],
                &self.rot[3 * i],
                &p[0],
                &self.rot[3 * i + 1],
                &p[1],
                &self.rot[3 * i + 2],
                &p[2],
            );
        }
        out
    }

    /// Maps a constant local point through every lane: `R · p + t`.
    pub fn apply_const(&self, p: &Vector3<f64>) -> [[f64; N]; 3] {
        let pv = [p.x, p.y, p.z];
        let mut out = [[0.0; N]; 3];
        for i in 0..3 {
            rows::scale3_off(
                &mut out[i],
                &self.trans[i],
                &self.rot[3 * i],
                pv[0],
                &self.rot[3 * i + 1],
                pv[1],
                &self.rot[3 * i + 2],
                pv[2],
            );
        }
        out
    }
}
