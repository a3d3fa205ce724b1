//! Forward kinematics: scalar (one configuration) and batched (a lane
//! block at a time).
//!
//! The scalar path composes [`RigidTransform`]s with the standard library
//! trigonometry and serves as the reference the batch path is tested
//! against. The batch path walks the same joint ordering but carries a
//! [`PoseBlock`] per link and evaluates joint rotations with the
//! lane-parallel [`sin_cos`] kernel, so a whole block costs barely more
//! than one scalar pass.

use super::{JointKind, KinematicModel};
use crate::batch::{rows, sin_cos, ConfigBlock, PoseBlock};
use crate::geom::{RigidTransform, Rotation};
use nalgebra::{Matrix3, Vector3};

impl KinematicModel {
    /// World pose of every link, indexed like [`KinematicModel::links`].
    pub fn forward_kinematics(&self, q: &[f64]) -> Vec<RigidTransform> {
        assert_eq!(q.len(), self.dof(), "configuration dimension mismatch");
        let mut poses = vec![RigidTransform::identity(); self.links().len()];
        poses[self.root()] = self.base_pose(q);
        for joint in self.joints() {
            let motion = match joint.kind {
                JointKind::Fixed => RigidTransform::identity(),
                JointKind::Revolute => RigidTransform::new(
                    Rotation::from_axis_angle(&joint.axis, q[joint.dof.unwrap()]),
                    Vector3::zeros(),
                ),
                JointKind::Prismatic => {
                    RigidTransform::from_translation(joint.axis * q[joint.dof.unwrap()])
                }
            };
            poses[joint.child_link] = poses[joint.parent_link]
                .compose(&joint.origin)
                .compose(&motion);
        }
        poses
    }

    /// World pose of a named frame given the link poses from
    /// [`KinematicModel::forward_kinematics`].
    pub fn frame_pose(&self, link_poses: &[RigidTransform], frame: usize) -> RigidTransform {
        let f = &self.frames()[frame];
        link_poses[f.link].compose(&f.offset)
    }

    fn base_pose(&self, q: &[f64]) -> RigidTransform {
        if self.floating_base {
            RigidTransform::from_xyz_rpy([q[0], q[1], q[2]], [q[3], q[4], q[5]])
        } else {
            RigidTransform::identity()
        }
    }

    /// Batched world pose of every link; lane i matches the scalar pass
    /// on lane i's configuration.
    pub fn batch_forward_kinematics<const N: usize>(
        &self,
        q: &ConfigBlock<N>,
        out: &mut Vec<PoseBlock<N>>,
    ) {
        assert_eq!(q.dof(), self.dof(), "configuration dimension mismatch");
        out.clear();
        out.resize(self.links().len(), PoseBlock::identity());
        out[self.root()] = self.batch_base_pose(q);
        for joint in self.joints() {
            let parent = out[joint.parent_link].compose_const(&joint.origin);
            out[joint.child_link] = match joint.kind {
                JointKind::Fixed => parent,
                JointKind::Revolute => {
                    let motion = revolute_block(&joint.axis, q.row(joint.dof.unwrap()));
                    parent.compose(&motion)
                }
                JointKind::Prismatic => {
                    let values = q.row(joint.dof.unwrap());
                    let mut out = parent.clone();
                    let axis = [joint.axis.x, joint.axis.y, joint.axis.z];
                    // t += R · (axis · q): the prismatic offset expressed
                    // in the parent frame.
                    for i in 0..3 {
                        rows::scaled_dir_mul_add(
                            &mut out.trans[i],
                            &parent.rot[3 * i],
                            axis[0],
                            &parent.rot[3 * i + 1],
                            axis[1],
                            &parent.rot[3 * i + 2],
                            axis[2],
                            values,
                        );
                    }
                    out
                }
            };
        }
    }

    /// Batched pose of one named frame.
    pub fn batch_frame_pose<const N: usize>(
        &self,
        link_poses: &[PoseBlock<N>],
        frame: usize,
    ) -> PoseBlock<N> {
        let f = &self.frames()[frame];
        link_poses[f.link].compose_const(&f.offset)
    }

    fn batch_base_pose<const N: usize>(&self, q: &ConfigBlock<N>) -> PoseBlock<N> {
        if !self.floating_base {
            return PoseBlock::identity();
        }
        // Rz(yaw) · Ry(pitch) · Rx(roll), expanded entrywise, one lane
        // pass per matrix entry.
        let (sr, cr) = sin_cos(q.row(3));
        let (sp, cp) = sin_cos(q.row(4));
        let (sy, cy) = sin_cos(q.row(5));
        let mut pose = PoseBlock::identity();
        rows::mul2(&mut pose.rot[0], &cy, &cp);
        rows::mul3_sub_mul2(&mut pose.rot[1], &cy, &sp, &sr, &sy, &cr);
        rows::mul3_add_mul2(&mut pose.rot[2], &cy, &sp, &cr, &sy, &sr);
        rows::mul2(&mut pose.rot[3], &sy, &cp);
        rows::mul3_add_mul2(&mut pose.rot[4], &sy, &sp, &sr, &cy, &cr);
        rows::mul3_sub_mul2(&mut pose.rot[5], &sy, &sp, &cr, &cy, &sr);
        rows::neg(&mut pose.rot[6], &sp);
        rows::mul2(&mut pose.rot[7], &cp, &sr);
        rows::mul2(&mut pose.rot[8], &cp, &cr);
        pose.trans[0] = *q.row(0);
        pose.trans[1] = *q.row(1);
        pose.trans[2] = *q.row(2);
        pose
    }
}

/// Rodrigues rotation about a constant unit axis with per-lane angles:
/// `R = I + sin(θ)·K + (1 − cos(θ))·K²`.
fn revolute_block<const N: usize>(axis: &Vector3<f64>, angles: &[f64; N]) -> PoseBlock<N> {
    let k = Matrix3::new(
        0.0, -axis.z, axis.y, axis.z, 0.0, -axis.x, -axis.y, axis.x, 0.0,
    );
    let k2 = k * k;
    let (s, c) = sin_cos(angles);
    let mut block = PoseBlock::identity();
    for i in 0..3 {
        for j in 0..3 {
            let id = if i == j { 1.0 } else { 0.0 };
            rows::rodrigues_entry(
                &mut block.rot[3 * i + j],
                &s,
                &c,
                id,
                k[(i, j)],
                k2[(i, j)],
            );
        }
    }
    block
}

/// Reusable link-pose buffer for repeated batched FK calls.
#[derive(Debug, Default)]
pub struct FkScratch<const N: usize> {
    pub link_poses: Vec<PoseBlock<N>>,
}

impl<const N: usize> FkScratch<N> {
    pub fn new() -> Self {
        FkScratch {
            link_poses: Vec::new(),
        }
    }
}
