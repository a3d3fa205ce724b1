//! Geometric Jacobians and center-of-mass kinematics.
//!
//! Every position-sensitivity column has the textbook closed form: a
//! translational degree of freedom (prismatic joint, base translation)
//! moves an attached point along its world axis; a rotational one
//! (revolute joint, base orientation rate) moves it along
//! `axis × (p − anchor)`. The batched [`JacobianCache`] precomputes the
//! per-lane world axes and anchors once per configuration block so each
//! constraint can assemble its rows without touching the kinematic tree
//! again.

use super::{JointKind, KinematicModel};
use crate::batch::{sin_cos, BatchMatrix, ConfigBlock, PoseBlock};
use crate::geom::RigidTransform;
use nalgebra::{DMatrix, Vector3};

impl KinematicModel {
    /// 6×d Jacobian of a named frame: rows 0–2 linear, rows 3–5 angular,
    /// both in the world frame.
    pub fn geometric_jacobian(&self, q: &[f64], frame: usize) -> DMatrix<f64> {
        let poses = self.forward_kinematics(q);
        let target = self.frame_pose(&poses, frame);
        let link = self.frames()[frame].link;
        let mut jac = DMatrix::zeros(6, self.dof());
        self.fill_point_columns(q, &poses, link, &target.translation, &mut |dof, lin| {
            jac[(0, dof)] = lin.x;
            jac[(1, dof)] = lin.y;
            jac[(2, dof)] = lin.z;
        });
        self.fill_angular_columns(q, &poses, link, &mut |dof, ang| {
            jac[(3, dof)] = ang.x;
            jac[(4, dof)] = ang.y;
            jac[(5, dof)] = ang.z;
        });
        jac
    }

    /// Mass-weighted average of link centers of mass, world frame.
    pub fn center_of_mass(&self, q: &[f64]) -> Vector3<f64> {
        self.center_of_mass_from(&self.forward_kinematics(q))
    }

    /// Center of mass from already computed link poses.
    pub fn center_of_mass_from(&self, link_poses: &[RigidTransform]) -> Vector3<f64> {
        let mut acc = Vector3::zeros();
        for (link, pose) in self.links().iter().zip(link_poses) {
            acc += pose.apply(&link.com) * link.mass;
        }
        acc / self.total_mass()
    }

    /// 3×d Jacobian of the center of mass.
    pub fn com_jacobian(&self, q: &[f64]) -> DMatrix<f64> {
        let poses = self.forward_kinematics(q);
        let mut jac = DMatrix::zeros(3, self.dof());
        let total = self.total_mass();
        for (idx, link) in self.links().iter().enumerate() {
            if link.mass == 0.0 {
                continue;
            }
            let w = link.mass / total;
            let p = poses[idx].apply(&link.com);
            self.fill_point_columns(q, &poses, idx, &p, &mut |dof, lin| {
                jac[(0, dof)] += w * lin.x;
                jac[(1, dof)] += w * lin.y;
                jac[(2, dof)] += w * lin.z;
            });
        }
        jac
    }

    /// Calls `write(dof, ∂p/∂q_dof)` for every configuration entry that
    /// moves `link`; columns for the rest are implicitly zero.
    fn fill_point_columns(
        &self,
        q: &[f64],
        poses: &[RigidTransform],
        link: usize,
        p: &Vector3<f64>,
        write: &mut dyn FnMut(usize, Vector3<f64>),
    ) {
        if self.floating_base {
            write(0, Vector3::x());
            write(1, Vector3::y());
            write(2, Vector3::z());
            let base = &poses[self.root()];
            let arm = p - base.translation;
            for (dof, axis) in base_rotation_axes(q).into_iter().enumerate() {
                write(3 + dof, axis.cross(&arm));
            }
        }
        for joint in self.joints() {
            let Some(dof) = joint.dof else { continue };
            if !self.dof_moves_link(dof, link) {
                continue;
            }
            let child = &poses[joint.child_link];
            let axis = child.rotation.apply(&joint.axis);
            match joint.kind {
                JointKind::Revolute => {
                    write(dof, axis.cross(&(p - child.translation)));
                }
                JointKind::Prismatic => write(dof, axis),
                JointKind::Fixed => unreachable!(),
            }
        }
    }

    fn fill_angular_columns(
        &self,
        q: &[f64],
        poses: &[RigidTransform],
        link: usize,
        write: &mut dyn FnMut(usize, Vector3<f64>),
    ) {
        if self.floating_base {
            for (dof, axis) in base_rotation_axes(q).into_iter().enumerate() {
                write(3 + dof, axis);
            }
        }
        for joint in self.joints() {
            let Some(dof) = joint.dof else { continue };
            if !self.dof_moves_link(dof, link) || joint.kind != JointKind::Revolute {
                continue;
            }
            let child = &poses[joint.child_link];
            write(dof, child.rotation.apply(&joint.axis));
        }
    }

    /// Batched center of mass for every lane.
    pub fn batch_center_of_mass<const N: usize>(
        &self,
        link_poses: &[PoseBlock<N>],
    ) -> [[f64; N]; 3] {
        let mut acc = [[0.0; N]; 3];
        let inv_total = 1.0 / self.total_mass();
        for (link, pose) in self.links().iter().zip(link_poses) {
            if link.mass == 0.0 {
                continue;
            }
            let w = link.mass * inv_total;
            let p = pose.apply_const(&link.com);
            for i in 0..3 {
                for lane in 0..N {
                    acc[i][lane] += w * p[i][lane];
                }
            }
        }
        acc
    }
}

/// World-frame instantaneous rotation axes for roll, pitch, and yaw rates
/// of the base orientation `Rz(yaw)·Ry(pitch)·Rx(roll)`.
fn base_rotation_axes(q: &[f64]) -> [Vector3<f64>; 3] {
    let (sp, cp) = (q[4].sin(), q[4].cos());
    let (sy, cy) = (q[5].sin(), q[5].cos());
    [
        // roll rate spins about R·ex = Rz·Ry·ex
        Vector3::new(cy * cp, sy * cp, -sp),
        // pitch rate about Rz·ey
        Vector3::new(-sy, cy, 0.0),
        Vector3::z(),
    ]
}

/// How a configuration entry moves attached points.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum DofMotion {
    /// Point velocity is the axis itself (prismatic, base translation).
    Translational,
    /// Point velocity is `axis × (p − anchor)` (revolute, base rotation).
    Rotational,
}

/// Per-lane world axes and anchors for every configuration entry, built
/// once per block and reused by every constraint's Jacobian assembly.
#[derive(Debug, Default)]
pub struct JacobianCache<const N: usize> {
    motions: Vec<DofMotion>,
    axes: Vec<[[f64; N]; 3]>,
    anchors: Vec<[[f64; N]; 3]>,
}

impl<const N: usize> JacobianCache<N> {
    pub fn new() -> Self {
        JacobianCache {
            motions: Vec::new(),
            axes: Vec::new(),
            anchors: Vec::new(),
        }
    }

    pub fn rebuild(
        &mut self,
        model: &KinematicModel,
        q: &ConfigBlock<N>,
        link_poses: &[PoseBlock<N>],
    ) {
        let d = model.dof();
        self.motions.clear();
        self.motions.resize(d, DofMotion::Translational);
        self.axes.clear();
        self.axes.resize(d, [[0.0; N]; 3]);
        self.anchors.clear();
        self.anchors.resize(d, [[0.0; N]; 3]);

        if model.floating_base {
            let base = &link_poses[model.root()];
            for i in 0..3 {
                self.motions[i] = DofMotion::Translational;
                self.axes[i][i] = [1.0; N];
            }
            let (sp, cp) = sin_cos(q.row(4));
            let (sy, cy) = sin_cos(q.row(5));
            for i in 3..6 {
                self.motions[i] = DofMotion::Rotational;
                self.anchors[i] = base.trans;
            }
            for lane in 0..N {
                self.axes[3][0][lane] = cy[lane] * cp[lane];
                self.axes[3][1][lane] = sy[lane] * cp[lane];
                self.axes[3][2][lane] = -sp[lane];
                self.axes[4][0][lane] = -sy[lane];
                self.axes[4][1][lane] = cy[lane];
                self.axes[5][2][lane] = 1.0;
            }
        }

        for joint in model.joints() {
            let Some(dof) = joint.dof else { continue };
            let child = &link_poses[joint.child_link];
            let axis = [joint.axis.x, joint.axis.y, joint.axis.z];
            let mut world_axis = [[0.0; N]; 3];
            for i in 0..3 {
                for k in 0..3 {
                    let r = &child.rot[3 * i + k];
                    for lane in 0..N {
                        world_axis[i][lane] += r[lane] * axis[k];
                    }
                }
            }
            self.axes[dof] = world_axis;
            match joint.kind {
                JointKind::Revolute => {
                    self.motions[dof] = DofMotion::Rotational;
                    self.anchors[dof] = child.trans;
                }
                JointKind::Prismatic => {
                    self.motions[dof] = DofMotion::Translational;
                }
                JointKind::Fixed => unreachable!(),
            }
        }
    }

    /// Accumulates `weight · ∂p/∂q` into three consecutive rows of `jac`
    /// starting at `row0`, for a point block `p` attached to `link`.
    /// Rows must be zeroed (or hold a partial sum) beforehand.
    pub fn accumulate_point_rows(
        &self,
        model: &KinematicModel,
        link: usize,
        p: &[[f64; N]; 3],
        weight: f64,
        jac: &mut BatchMatrix<N>,
        row0: usize,
    ) {
        for dof in 0..model.dof() {
            if !model.dof_moves_link(dof, link) {
                continue;
            }
            match self.motions[dof] {
                DofMotion::Translational => {
                    let axis = &self.axes[dof];
                    for i in 0..3 {
                        let dst = jac.at_mut(row0 + i, dof);
                        for lane in 0..N {
                            dst[lane] += weight * axis[i][lane];
                        }
                    }
                }
                DofMotion::Rotational => {
                    let axis = &self.axes[dof];
                    let anchor = &self.anchors[dof];
                    let mut arm = [[0.0; N]; 3];
                    for i in 0..3 {
                        for lane in 0..N {
                            arm[i][lane] = p[i][lane] - anchor[i][lane];
                        }
                    }
                    // axis × arm, accumulated row by row.
                    for (i, (a, b)) in [(1, 2), (2, 0), (0, 1)].into_iter().enumerate() {
                        let dst = jac.at_mut(row0 + i, dof);
                        for lane in 0..N {
                            dst[lane] +=
                                weight * (axis[a][lane] * arm[b][lane] - axis[b][lane] * arm[a][lane]);
                        }
                    }
                }
            }
        }
    }

    /// Accumulates `weight · ω` columns (the angular velocity of `link`
    /// per unit rate of each configuration entry) into three consecutive
    /// rows of `jac` starting at `row0`.
    pub fn accumulate_angular_rows(
        &self,
        model: &KinematicModel,
        link: usize,
        weight: f64,
        jac: &mut BatchMatrix<N>,
        row0: usize,
    ) {
        for dof in 0..model.dof() {
            if !model.dof_moves_link(dof, link) || self.motions[dof] != DofMotion::Rotational {
                continue;
            }
            let axis = &self.axes[dof];
            for i in 0..3 {
                let dst = jac.at_mut(row0 + i, dof);
                for lane in 0..N {
                    dst[lane] += weight * axis[i][lane];
                }
            }
        }
    }
}
