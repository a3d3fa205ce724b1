//! Batched residual and Jacobian assembly for constraint sets.
//!
//! All lanes of a configuration block are evaluated together: one
//! batched kinematics pass feeds every lane's residual, and Jacobian
//! rows come from the shared axis cache plus, for rotation components,
//! lane-parallel central differences. Every lane's arithmetic is
//! independent of every other lane's values, so permuting lanes permutes
//! the outputs bit for bit.

use crate::batch::{log_rotation, rows, BatchMatrix, ConfigBlock, LaneMask, PoseBlock};
use crate::constraints::{
    bound_active, nearest_point_in_polygon, ClosedLinkSpec, Constraint, ConstraintKind,
    ConstraintSet, PolygonRegion, RelativePoseSpec, SupportPolygonSpec, TsrSpec,
    DEGENERATE_LENGTH,
};
use crate::kinematics::{JacobianCache, KinematicModel};

/// Central-difference half step for rotation residual rows.
pub const FD_STEP: f64 = 1e-6;

/// Reusable buffers for evaluating one constraint set on `N` lanes.
#[derive(Debug)]
pub struct EvalWorkspace<const N: usize> {
    poses: Vec<PoseBlock<N>>,
    fd_poses: Vec<PoseBlock<N>>,
    fd_q: ConfigBlock<N>,
    cache: JacobianCache<N>,
    point_a: BatchMatrix<N>,
    point_b: BatchMatrix<N>,
    angular: BatchMatrix<N>,
    rows_tmp: BatchMatrix<N>,
}

impl<const N: usize> EvalWorkspace<N> {
    pub fn new() -> Self {
        EvalWorkspace {
            poses: Vec::new(),
            fd_poses: Vec::new(),
            fd_q: ConfigBlock::zeros(0),
            cache: JacobianCache::new(),
            point_a: BatchMatrix::zeros(0, 0),
            point_b: BatchMatrix::zeros(0, 0),
            angular: BatchMatrix::zeros(0, 0),
            rows_tmp: BatchMatrix::zeros(0, 0),
        }
    }
}

impl<const N: usize> Default for EvalWorkspace<N> {
    fn default() -> Self {
        Self::new()
    }
}

impl<const N: usize> EvalWorkspace<N> {

    /// Lanes whose residual is strictly inside every constraint's
    /// tolerance. One kinematics pass for the whole set.
    pub fn converged_lanes(
        &mut self,
        set: &ConstraintSet,
        model: &KinematicModel,
        q: &ConfigBlock<N>,
    ) -> LaneMask<N> {
        model.batch_forward_kinematics(q, &mut self.poses);
        let mut ok = LaneMask::all();
        for (index, constraint) in set.constraints().iter().enumerate() {
            let tolerance = set.tolerance_for(index);
            self.rows_tmp.resize(constraint.rows(), 1);
            residual_rows(model, constraint, q, &self.poses, &mut self.rows_tmp, 0);
            for lane in 0..N {
                for r in 0..constraint.rows() {
                    if !(self.rows_tmp.at(r, 0)[lane].abs() < tolerance) {
                        ok.set(lane, false);
                    }
                }
            }
        }
        ok
    }

    /// Stacked residual over every constraint, rows in set order.
    pub fn residuals(
        &mut self,
        set: &ConstraintSet,
        model: &KinematicModel,
        q: &ConfigBlock<N>,
        out: &mut BatchMatrix<N>,
    ) {
        model.batch_forward_kinematics(q, &mut self.poses);
        out.resize(set.total_rows(), 1);
        let mut row = 0;
        for constraint in set.constraints() {
            residual_rows(model, constraint, q, &self.poses, out, row);
            row += constraint.rows();
        }
    }

    /// Residual and Jacobian of one constraint at `q`. Runs its own
    /// kinematics pass: the cyclic descent moves `q` between constraints.
    pub fn eval_constraint(
        &mut self,
        set: &ConstraintSet,
        index: usize,
        model: &KinematicModel,
        q: &ConfigBlock<N>,
        res: &mut BatchMatrix<N>,
        jac: &mut BatchMatrix<N>,
    ) {
        let constraint = &set.constraints()[index];
        let d = model.dof();
        res.resize(constraint.rows(), 1);
        jac.resize(constraint.rows(), d);
        if let ConstraintKind::Linear(spec) = constraint.kind() {
            residual_rows(model, constraint, q, &self.poses, res, 0);
            for j in 0..d {
                *jac.at_mut(0, j) = [spec.coeffs[j]; N];
            }
            return;
        }
        model.batch_forward_kinematics(q, &mut self.poses);
        self.cache.rebuild(model, q, &self.poses);
        residual_rows(model, constraint, q, &self.poses, res, 0);
        match constraint.kind() {
            ConstraintKind::Tsr(spec) => jac_tsr(
                model,
                spec,
                constraint.components(),
                q,
                &self.poses,
                &self.cache,
                &mut self.point_a,
                &mut self.fd_q,
                &mut self.fd_poses,
                jac,
            ),
            ConstraintKind::RelativePose(spec) => jac_relative_pose(
                model,
                spec,
                constraint.components(),
                q,
                &self.poses,
                &self.cache,
                &mut self.point_a,
                &mut self.point_b,
                &mut self.angular,
                &mut self.fd_q,
                &mut self.fd_poses,
                jac,
            ),
            ConstraintKind::ClosedLink(spec) => jac_closed_link(
                model,
                spec,
                &self.poses,
                &self.cache,
                &mut self.point_a,
                &mut self.point_b,
                jac,
            ),
            ConstraintKind::SupportPolygon(spec) => jac_support_polygon(
                model,
                spec,
                &self.poses,
                &self.cache,
                &mut self.point_a,
                jac,
            ),
            ConstraintKind::Linear(_) => unreachable!(),
        }
    }
}

/// Six raw displacement rows `[t; log R]` of a pose error block.
fn displacement_rows<const N: usize>(err: &PoseBlock<N>) -> [[f64; N]; 6] {
    let w = log_rotation(&err.rot);
    [
        err.trans[0],
        err.trans[1],
        err.trans[2],
        w[0],
        w[1],
        w[2],
    ]
}

/// Batched mirror of the scalar task-frame displacement: the pose error
/// `t₀⁻¹ ∘ pose ∘ tₑ⁻¹` expanded into six rows.
fn batch_tsr_displacement<const N: usize>(
    spec: &TsrSpec,
    fp: &PoseBlock<N>,
) -> [[f64; N]; 6] {
    let err = fp
        .premul_const(&spec.t0_w.inverse())
        .compose_const(&spec.tw_e.inverse());
    displacement_rows(&err)
}

/// Batched mirror of the scalar relative-pose displacement
/// `t_ref⁻¹ ∘ (a⁻¹ ∘ b)`.
fn batch_relative_displacement<const N: usize>(
    spec: &RelativePoseSpec,
    fa: &PoseBlock<N>,
    fb: &PoseBlock<N>,
) -> [[f64; N]; 6] {
    let rel = fa.inverse().compose(fb);
    displacement_rows(&rel.premul_const(&spec.t_ref.inverse()))
}

/// Writes one constraint's residual rows starting at `row0`. `out` must
/// already have the right shape; `poses` must match `q` except for the
/// `Linear` kind, which never reads them.
fn residual_rows<const N: usize>(
    model: &KinematicModel,
    constraint: &Constraint,
    q: &ConfigBlock<N>,
    poses: &[PoseBlock<N>],
    out: &mut BatchMatrix<N>,
    row0: usize,
) {
    match constraint.kind() {
        ConstraintKind::Tsr(spec) => {
            let fp = model.batch_frame_pose(poses, spec.frame);
            let raw = batch_tsr_displacement(spec, &fp);
            for (r, &comp) in constraint.components().iter().enumerate() {
                let b = spec.bounds[comp];
                rows::bound_excess(out.at_mut(row0 + r, 0), &raw[comp], b[0], b[1]);
            }
        }
        ConstraintKind::RelativePose(spec) => {
            let fa = model.batch_frame_pose(poses, spec.frame_a);
            let fb = model.batch_frame_pose(poses, spec.frame_b);
            let raw = batch_relative_displacement(spec, &fa, &fb);
            for (r, &comp) in constraint.components().iter().enumerate() {
                let b = spec.bounds[comp];
                rows::bound_excess(out.at_mut(row0 + r, 0), &raw[comp], b[0], b[1]);
            }
        }
        ConstraintKind::ClosedLink(spec) => {
            let fa = model.batch_frame_pose(poses, spec.frame_a);
            let fb = model.batch_frame_pose(poses, spec.frame_b);
            for lane in 0..N {
                let pa = fa.lane(lane).apply(&spec.local_a);
                let pb = fb.lane(lane).apply(&spec.local_b);
                out.at_mut(row0, 0)[lane] = (pa - pb).norm() - spec.length;
            }
        }
        ConstraintKind::SupportPolygon(spec) => {
            let com = model.batch_center_of_mass(poses);
            for lane in 0..N {
                let p = [com[0][lane], com[1][lane]];
                let (nearest, _) = nearest_point_in_polygon(p, &spec.vertices);
                out.at_mut(row0, 0)[lane] = p[0] - nearest[0];
                out.at_mut(row0 + 1, 0)[lane] = p[1] - nearest[1];
            }
        }
        ConstraintKind::Linear(spec) => {
            for lane in 0..N {
                let mut acc = -spec.offset;
                for j in 0..q.dof() {
                    acc += spec.coeffs[j] * q.row(j)[lane];
                }
                out.at_mut(row0, 0)[lane] = acc;
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn jac_tsr<const N: usize>(
    model: &KinematicModel,
    spec: &TsrSpec,
    components: &[usize],
    q: &ConfigBlock<N>,
    poses: &[PoseBlock<N>],
    cache: &JacobianCache<N>,
    point: &mut BatchMatrix<N>,
    fd_q: &mut ConfigBlock<N>,
    fd_poses: &mut Vec<PoseBlock<N>>,
    jac: &mut BatchMatrix<N>,
) {
    let d = model.dof();
    let link = model.frames()[spec.frame].link;
    let fp = model.batch_frame_pose(poses, spec.frame);
    let active = active_mask(components, &spec.bounds, &batch_tsr_displacement(spec, &fp));

    if components.iter().any(|&c| c < 3) {
        // The translation displacement is `R₀ᵀ (p_c − t₀)` where `p_c`
        // is the world position of the grasp point `−Reᵀ·te` carried by
        // the constrained frame, so its rows are `R₀ᵀ` times that
        // point's motion.
        let grasp_point = spec
            .tw_e
            .rotation
            .transpose()
            .apply(&(-spec.tw_e.translation));
        let pc = fp.apply_const(&grasp_point);
        point.resize(3, d);
        cache.accumulate_point_rows(model, link, &pc, 1.0, point, 0);
        let r0 = spec.t0_w.rotation.matrix();
        for (r, &comp) in components.iter().enumerate() {
            if comp >= 3 {
                continue;
            }
            for j in 0..d {
                rows::masked_scale3(
                    jac.at_mut(r, j),
                    &active[comp],
                    point.at(0, j),
                    r0[(0, comp)],
                    point.at(1, j),
                    r0[(1, comp)],
                    point.at(2, j),
                    r0[(2, comp)],
                );
            }
        }
    }

    if components.iter().any(|&c| c >= 3) {
        fd_rotation_rows(
            model,
            q,
            fd_q,
            fd_poses,
            &|j| model.dof_moves_link(j, link),
            &mut |model, poses, out| {
                let fp = model.batch_frame_pose(poses, spec.frame);
                let raw = batch_tsr_displacement(spec, &fp);
                out[0] = raw[3];
                out[1] = raw[4];
                out[2] = raw[5];
            },
            components,
            &active,
            jac,
        );
    }
}

#[allow(clippy::too_many_arguments)]
fn jac_relative_pose<const N: usize>(
    model: &KinematicModel,
    spec: &RelativePoseSpec,
    components: &[usize],
    q: &ConfigBlock<N>,
    poses: &[PoseBlock<N>],
    cache: &JacobianCache<N>,
    point_a: &mut BatchMatrix<N>,
    point_b: &mut BatchMatrix<N>,
    angular: &mut BatchMatrix<N>,
    fd_q: &mut ConfigBlock<N>,
    fd_poses: &mut Vec<PoseBlock<N>>,
    jac: &mut BatchMatrix<N>,
) {
    let d = model.dof();
    let link_a = model.frames()[spec.frame_a].link;
    let link_b = model.frames()[spec.frame_b].link;
    let fa = model.batch_frame_pose(poses, spec.frame_a);
    let fb = model.batch_frame_pose(poses, spec.frame_b);
    let active = active_mask(
        components,
        &spec.bounds,
        &batch_relative_displacement(spec, &fa, &fb),
    );

    if components.iter().any(|&c| c < 3) {
        point_a.resize(3, d);
        point_b.resize(3, d);
        angular.resize(3, d);
        cache.accumulate_point_rows(model, link_a, &fa.trans, 1.0, point_a, 0);
        cache.accumulate_point_rows(model, link_b, &fb.trans, 1.0, point_b, 0);
        cache.accumulate_angular_rows(model, link_a, 1.0, angular, 0);
        // Differentiating `R_refᵀ R_Aᵀ (p_B − p_A)` gives, per column,
        // `R_refᵀ R_Aᵀ (J_B − J_A − ω_A × Δp)`: the last term is the
        // apparent motion from the observer frame's own rotation.
        for lane in 0..N {
            let m = spec.t_ref.rotation.matrix().transpose()
                * fa.lane(lane).rotation.matrix().transpose();
            let dp = [
                fb.trans[0][lane] - fa.trans[0][lane],
                fb.trans[1][lane] - fa.trans[1][lane],
                fb.trans[2][lane] - fa.trans[2][lane],
            ];
            for j in 0..d {
                let w = [
                    angular.at(0, j)[lane],
                    angular.at(1, j)[lane],
                    angular.at(2, j)[lane],
                ];
                let v = [
                    point_b.at(0, j)[lane] - point_a.at(0, j)[lane]
                        - (w[1] * dp[2] - w[2] * dp[1]),
                    point_b.at(1, j)[lane] - point_a.at(1, j)[lane]
                        - (w[2] * dp[0] - w[0] * dp[2]),
                    point_b.at(2, j)[lane] - point_a.at(2, j)[lane]
                        - (w[0] * dp[1] - w[1] * dp[0]),
                ];
                for (r, &comp) in components.iter().enumerate() {
                    if comp >= 3 {
                        continue;
                    }
                    jac.at_mut(r, j)[lane] = if active[comp][lane] {
                        m[(comp, 0)] * v[0] + m[(comp, 1)] * v[1] + m[(comp, 2)] * v[2]
                    } else {
                        0.0
                    };
                }
            }
        }
    }

    if components.iter().any(|&c| c >= 3) {
        fd_rotation_rows(
            model,
            q,
            fd_q,
            fd_poses,
            &|j| model.dof_moves_link(j, link_a) || model.dof_moves_link(j, link_b),
            &mut |model, poses, out| {
                let fa = model.batch_frame_pose(poses, spec.frame_a);
                let fb = model.batch_frame_pose(poses, spec.frame_b);
                let raw = batch_relative_displacement(spec, &fa, &fb);
                out[0] = raw[3];
                out[1] = raw[4];
                out[2] = raw[5];
            },
            components,
            &active,
            jac,
        );
    }
}

fn jac_closed_link<const N: usize>(
    model: &KinematicModel,
    spec: &ClosedLinkSpec,
    poses: &[PoseBlock<N>],
    cache: &JacobianCache<N>,
    point_a: &mut BatchMatrix<N>,
    point_b: &mut BatchMatrix<N>,
    jac: &mut BatchMatrix<N>,
) {
    let d = model.dof();
    let link_a = model.frames()[spec.frame_a].link;
    let link_b = model.frames()[spec.frame_b].link;
    let fa = model.batch_frame_pose(poses, spec.frame_a);
    let fb = model.batch_frame_pose(poses, spec.frame_b);
    let pa = fa.apply_const(&spec.local_a);
    let pb = fb.apply_const(&spec.local_b);
    point_a.resize(3, d);
    point_b.resize(3, d);
    cache.accumulate_point_rows(model, link_a, &pa, 1.0, point_a, 0);
    cache.accumulate_point_rows(model, link_b, &pb, 1.0, point_b, 0);
    for lane in 0..N {
        let delta = [
            pa[0][lane] - pb[0][lane],
            pa[1][lane] - pb[1][lane],
            pa[2][lane] - pb[2][lane],
        ];
        let norm = (delta[0] * delta[0] + delta[1] * delta[1] + delta[2] * delta[2]).sqrt();
        if norm < DEGENERATE_LENGTH {
            // Coincident points leave the distance direction undefined.
            for j in 0..d {
                jac.at_mut(0, j)[lane] = 0.0;
            }
            continue;
        }
        let u = [delta[0] / norm, delta[1] / norm, delta[2] / norm];
        for j in 0..d {
            jac.at_mut(0, j)[lane] = u[0] * (point_a.at(0, j)[lane] - point_b.at(0, j)[lane])
                + u[1] * (point_a.at(1, j)[lane] - point_b.at(1, j)[lane])
                + u[2] * (point_a.at(2, j)[lane] - point_b.at(2, j)[lane]);
        }
    }
}

fn jac_support_polygon<const N: usize>(
    model: &KinematicModel,
    spec: &SupportPolygonSpec,
    poses: &[PoseBlock<N>],
    cache: &JacobianCache<N>,
    point: &mut BatchMatrix<N>,
    jac: &mut BatchMatrix<N>,
) {
    let d = model.dof();
    point.resize(3, d);
    let inv_total = 1.0 / model.total_mass();
    for (index, link) in model.links().iter().enumerate() {
        if link.mass == 0.0 {
            continue;
        }
        let p = poses[index].apply_const(&link.com);
        cache.accumulate_point_rows(model, index, &p, link.mass * inv_total, point, 0);
    }
    let com = model.batch_center_of_mass(poses);
    for lane in 0..N {
        let p = [com[0][lane], com[1][lane]];
        let (_, region) = nearest_point_in_polygon(p, &spec.vertices);
        // Derivative of `p − nearest(p)`: zero inside, the projection
        // onto the edge normal on an edge, the identity at a vertex.
        let m = match region {
            PolygonRegion::Inside => [[0.0, 0.0], [0.0, 0.0]],
            PolygonRegion::Vertex { .. } => [[1.0, 0.0], [0.0, 1.0]],
            PolygonRegion::Edge { dir, .. } => [
                [1.0 - dir[0] * dir[0], -dir[0] * dir[1]],
                [-dir[0] * dir[1], 1.0 - dir[1] * dir[1]],
            ],
        };
        for j in 0..d {
            let jx = point.at(0, j)[lane];
            let jy = point.at(1, j)[lane];
            jac.at_mut(0, j)[lane] = m[0][0] * jx + m[0][1] * jy;
            jac.at_mut(1, j)[lane] = m[1][0] * jx + m[1][1] * jy;
        }
    }
}

/// Per-lane activity of every bounded component at the current
/// displacement; inactive rows keep a zero derivative.
fn active_mask<const N: usize>(
    components: &[usize],
    bounds: &crate::constraints::DisplacementBounds,
    raw: &[[f64; N]; 6],
) -> [[bool; N]; 6] {
    let mut active = [[false; N]; 6];
    for &comp in components {
        for lane in 0..N {
            active[comp][lane] = bound_active(raw[comp][lane], bounds[comp]);
        }
    }
    active
}

/// Lane-parallel central differences for the rotation displacement
/// rows. `moves` filters columns to the degrees of freedom that can
/// change the displacement; the rest stay zero. `eval` writes the
/// three raw rotation components per lane for a perturbed pose set.
#[allow(clippy::too_many_arguments)]
fn fd_rotation_rows<const N: usize>(
    model: &KinematicModel,
    q: &ConfigBlock<N>,
    fd_q: &mut ConfigBlock<N>,
    fd_poses: &mut Vec<PoseBlock<N>>,
    moves: &dyn Fn(usize) -> bool,
    eval: &mut dyn FnMut(&KinematicModel, &[PoseBlock<N>], &mut [[f64; N]; 3]),
    components: &[usize],
    active: &[[bool; N]; 6],
    jac: &mut BatchMatrix<N>,
) {
    let d = model.dof();
    fd_q.copy_from(q);
    let mut plus = [[0.0; N]; 3];
    let mut minus = [[0.0; N]; 3];
    for j in 0..d {
        if !moves(j) {
            continue;
        }
        let orig = *fd_q.row(j);
        for lane in 0..N {
            fd_q.row_mut(j)[lane] = orig[lane] + FD_STEP;
        }
        model.batch_forward_kinematics(fd_q, fd_poses);
        eval(model, fd_poses, &mut plus);
        for lane in 0..N {
            fd_q.row_mut(j)[lane] = orig[lane] - FD_STEP;
        }
        model.batch_forward_kinematics(fd_q, fd_poses);
        eval(model, fd_poses, &mut minus);
        *fd_q.row_mut(j) = orig;
        for (r, &comp) in components.iter().enumerate() {
            if comp < 3 {
                continue;
            }
            let i = comp - 3;
            rows::masked_diff_quotient(
                jac.at_mut(r, j),
                &active[comp],
                &plus[i],
                &minus[i],
                2.0 * FD_STEP,
            );
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::{relative_displacement, tsr_displacement, LinearSpec};
    use crate::geom::RigidTransform;
    use crate::kinematics::test_models;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_config(model: &KinematicModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
        model
            .lower_limits()
            .iter()
            .zip(model.upper_limits())
            .map(|(&lo, &hi)| rng.gen_range(lo..hi))
            .collect()
    }

    fn zero_width_all() -> [[f64; 2]; 6] {
        [[0.0, 0.0]; 6]
    }

    fn mixed_set(model: &KinematicModel) -> ConstraintSet {
        let tip_left = model.frame_index("tip_left").unwrap();
        let tip_right = model.frame_index("tip_right").unwrap();
        let mut tsr_bounds = [[f64::NEG_INFINITY, f64::INFINITY]; 6];
        tsr_bounds[1] = [0.0, 0.0];
        let mut rel_bounds = [[f64::NEG_INFINITY, f64::INFINITY]; 6];
        rel_bounds[0] = [-0.1, 0.1];
        rel_bounds[4] = [0.0, 0.0];
        ConstraintSet::new(
            model,
            vec![
                ConstraintKind::Tsr(TsrSpec {
                    frame: tip_left,
                    t0_w: RigidTransform::from_xyz_rpy([0.3, -0.2, 0.5], [0.2, -0.1, 0.4]),
                    tw_e: RigidTransform::from_xyz_rpy([0.05, 0.02, -0.03], [0.1, 0.0, -0.2]),
                    bounds: tsr_bounds,
                }),
                ConstraintKind::RelativePose(RelativePoseSpec {
                    frame_a: tip_left,
                    frame_b: tip_right,
                    t_ref: RigidTransform::from_xyz_rpy([-0.6, 0.0, 0.0], [0.0, 0.3, 0.0]),
                    bounds: rel_bounds,
                }),
                ConstraintKind::ClosedLink(ClosedLinkSpec {
                    frame_a: tip_left,
                    local_a: Vector3::new(0.05, 0.0, 0.02),
                    frame_b: tip_right,
                    local_b: Vector3::new(-0.03, 0.04, 0.0),
                    length: 0.3,
                }),
                ConstraintKind::SupportPolygon(SupportPolygonSpec {
                    vertices: vec![[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]],
                }),
                ConstraintKind::Linear(LinearSpec {
                    coeffs: vec![0.3, -1.2, 0.0, 0.7, 0.0, 0.0, 2.0, -0.5],
                    offset: 0.4,
                }),
            ],
        )
        .unwrap()
    }

    #[test]
    fn batch_residuals_match_the_scalar_path() {
        let model = KinematicModel::from_json_str(test_models::floating_pair()).unwrap();
        let set = mixed_set(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        const N: usize = 4;
        let mut ws = EvalWorkspace::<N>::new();
        let mut out = BatchMatrix::<N>::zeros(0, 0);
        // The rotation log is ill conditioned near a half turn, where the
        // last-bit trig differences between the two paths get amplified
        // past the comparison tolerance; keep clear of it.
        let near_half_turn = |q: &[f64]| {
            let poses = model.forward_kinematics(q);
            let angle = |raw: [f64; 6]| {
                (raw[3] * raw[3] + raw[4] * raw[4] + raw[5] * raw[5]).sqrt()
            };
            set.constraints().iter().any(|c| match c.kind() {
                ConstraintKind::Tsr(s) => {
                    angle(tsr_displacement(s, &model.frame_pose(&poses, s.frame)))
                        > std::f64::consts::PI - 0.1
                }
                ConstraintKind::RelativePose(s) => {
                    angle(relative_displacement(
                        s,
                        &model.frame_pose(&poses, s.frame_a),
                        &model.frame_pose(&poses, s.frame_b),
                    )) > std::f64::consts::PI - 0.1
                }
                _ => false,
            })
        };
        for _ in 0..50 {
            let mut block = ConfigBlock::<N>::zeros(model.dof());
            let mut configs = Vec::new();
            for lane in 0..N {
                let q = loop {
                    let q = random_config(&model, &mut rng);
                    if !near_half_turn(&q) {
                        break q;
                    }
                };
                block.set_lane(lane, &q);
                configs.push(q);
            }
            ws.residuals(&set, &model, &block, &mut out);
            for (lane, q) in configs.iter().enumerate() {
                let want = set.residuals(&model, q);
                assert_eq!(out.rows(), want.len());
                for (r, w) in want.iter().enumerate() {
                    assert!(
                        (out.at(r, 0)[lane] - w).abs() < 1e-12,
                        "row {r} lane {lane}"
                    );
                }
            }
        }
    }

    #[test]
    fn interior_components_keep_zero_rows() {
        let model = KinematicModel::from_json_str(test_models::arm7()).unwrap();
        let flange = model.frame_index("flange").unwrap();
        let mut bounds = [[f64::NEG_INFINITY, f64::INFINITY]; 6];
        bounds[1] = [0.0, 0.0];
        bounds[2] = [-10.0, 10.0];
        let set = ConstraintSet::new(
            &model,
            vec![ConstraintKind::Tsr(TsrSpec {
                frame: flange,
                t0_w: RigidTransform::identity(),
                tw_e: RigidTransform::identity(),
                bounds,
            })],
        )
        .unwrap();
        let mut ws = EvalWorkspace::<4>::new();
        let mut res = BatchMatrix::zeros(0, 0);
        let mut jac = BatchMatrix::zeros(0, 0);
        let block = ConfigBlock::<4>::splat(&[0.4, 0.3, -0.5, 0.8, 0.2, -0.4, 0.6]);
        ws.eval_constraint(&set, 0, &model, &block, &mut res, &mut jac);
        // Row 0 pins y exactly; row 1's z interval is wide open around
        // any reachable pose, so it stays flat.
        assert!(res.at(0, 0)[0].abs() > 1e-3);
        assert!(jac.at(0, 3)[0].abs() > 1e-6);
        for j in 0..model.dof() {
            for lane in 0..4 {
                assert_eq!(res.at(1, 0)[lane], 0.0);
                assert_eq!(jac.at(1, j)[lane], 0.0);
            }
        }
    }

    #[test]
    fn closed_link_on_one_rigid_body_has_flat_rows() {
        let model = KinematicModel::from_json_str(test_models::arm7()).unwrap();
        let flange = model.frame_index("flange").unwrap();
        let set = ConstraintSet::new(
            &model,
            vec![ConstraintKind::ClosedLink(ClosedLinkSpec {
                frame_a: flange,
                local_a: Vector3::zeros(),
                frame_b: flange,
                local_b: Vector3::new(0.1, 0.0, 0.0),
                length: 0.1,
            })],
        )
        .unwrap();
        let mut ws = EvalWorkspace::<1>::new();
        let mut res = BatchMatrix::zeros(0, 0);
        let mut jac = BatchMatrix::zeros(0, 0);
        let block = ConfigBlock::<1>::splat(&[0.5, -0.8, 0.3, 1.1, -0.2, 0.7, 0.4]);
        ws.eval_constraint(&set, 0, &model, &block, &mut res, &mut jac);
        assert!(res.at(0, 0)[0].abs() < 1e-12);
        for j in 0..model.dof() {
            assert!(jac.at(0, j)[0].abs() < 1e-10, "column {j}");
        }
    }

    /// Central-difference cross-check of every constraint kind's
    /// Jacobian against the scalar residual path. Samples near known
    /// kinks are skipped: rotation displacements close to a half turn,
    /// closed links near zero extension, a center of mass within a
    /// whisker of the polygon boundary, and finite-width intervals
    /// whose displacement sits on an endpoint.
    #[test]
    fn jacobians_match_finite_differences() {
        let floating = KinematicModel::from_json_str(test_models::floating_pair()).unwrap();
        let arm = KinematicModel::from_json_str(test_models::arm7()).unwrap();
        let tip_left = floating.frame_index("tip_left").unwrap();
        let tip_right = floating.frame_index("tip_right").unwrap();
        let flange = arm.frame_index("flange").unwrap();

        let tsr_floating = TsrSpec {
            frame: tip_left,
            t0_w: RigidTransform::from_xyz_rpy([0.3, -0.2, 0.5], [0.2, -0.1, 0.4]),
            tw_e: RigidTransform::from_xyz_rpy([0.05, 0.02, -0.03], [0.1, 0.0, -0.2]),
            bounds: zero_width_all(),
        };
        let mut arm_bounds = zero_width_all();
        arm_bounds[0] = [-0.2, 0.3];
        arm_bounds[2] = [f64::NEG_INFINITY, 0.1];
        let tsr_arm = TsrSpec {
            frame: flange,
            t0_w: RigidTransform::from_xyz_rpy([0.3, 0.1, 0.6], [0.3, -0.2, 0.1]),
            tw_e: RigidTransform::from_xyz_rpy([0.0, 0.02, 0.05], [0.0, 0.1, 0.0]),
            bounds: arm_bounds,
        };
        let rel = RelativePoseSpec {
            frame_a: tip_left,
            frame_b: tip_right,
            t_ref: RigidTransform::from_xyz_rpy([-0.6, 0.0, 0.0], [0.0, 0.3, 0.0]),
            bounds: zero_width_all(),
        };
        let link = ClosedLinkSpec {
            frame_a: tip_left,
            local_a: Vector3::new(0.05, 0.0, 0.02),
            frame_b: tip_right,
            local_b: Vector3::new(-0.03, 0.04, 0.0),
            length: 0.3,
        };
        let polygon = SupportPolygonSpec {
            vertices: vec![[-0.5, -0.5], [0.5, -0.5], [0.5, 0.5], [-0.5, 0.5]],
        };
        let linear = LinearSpec {
            coeffs: vec![0.3, -1.2, 0.0, 0.7, 0.0, 0.0, 2.0, -0.5],
            offset: 0.4,
        };

        let rotation_angle = |raw: &[f64; 6]| {
            (raw[3] * raw[3] + raw[4] * raw[4] + raw[5] * raw[5]).sqrt()
        };
        let displacement_at = |model: &KinematicModel, spec: &TsrSpec, q: &[f64]| {
            let poses = model.forward_kinematics(q);
            tsr_displacement(spec, &model.frame_pose(&poses, spec.frame))
        };

        type Exclude<'a> = Box<dyn Fn(&KinematicModel, &[f64]) -> bool + 'a>;
        let cases: Vec<(&KinematicModel, ConstraintKind, Exclude)> = vec![
            (
                &floating,
                ConstraintKind::Tsr(tsr_floating.clone()),
                Box::new(|m: &KinematicModel, q: &[f64]| {
                    rotation_angle(&displacement_at(m, &tsr_floating, q))
                        > std::f64::consts::PI - 0.2
                }),
            ),
            (
                &arm,
                ConstraintKind::Tsr(tsr_arm.clone()),
                Box::new(|m: &KinematicModel, q: &[f64]| {
                    let raw = displacement_at(m, &tsr_arm, q);
                    if rotation_angle(&raw) > std::f64::consts::PI - 0.2 {
                        return true;
                    }
                    // Stay clear of finite interval endpoints.
                    tsr_arm.bounds.iter().enumerate().any(|(c, b)| {
                        b[0] != b[1]
                            && b.iter()
                                .any(|&e| e.is_finite() && (raw[c] - e).abs() < 1e-3)
                    })
                }),
            ),
            (
                &floating,
                ConstraintKind::RelativePose(rel.clone()),
                Box::new(|m: &KinematicModel, q: &[f64]| {
                    let poses = m.forward_kinematics(q);
                    let raw = crate::constraints::relative_displacement(
                        &rel,
                        &m.frame_pose(&poses, rel.frame_a),
                        &m.frame_pose(&poses, rel.frame_b),
                    );
                    rotation_angle(&raw) > std::f64::consts::PI - 0.2
                }),
            ),
            (
                &floating,
                ConstraintKind::ClosedLink(link.clone()),
                Box::new(|m: &KinematicModel, q: &[f64]| {
                    let poses = m.forward_kinematics(q);
                    let pa = m.frame_pose(&poses, link.frame_a).apply(&link.local_a);
                    let pb = m.frame_pose(&poses, link.frame_b).apply(&link.local_b);
                    (pa - pb).norm() < 1e-3
                }),
            ),
            (
                &floating,
                ConstraintKind::SupportPolygon(polygon.clone()),
                Box::new(|m: &KinematicModel, q: &[f64]| {
                    let com = m.center_of_mass(q);
                    let boundary = polygon
                        .vertices
                        .iter()
                        .enumerate()
                        .map(|(i, a)| {
                            let b = polygon.vertices[(i + 1) % polygon.vertices.len()];
                            let e = [b[0] - a[0], b[1] - a[1]];
                            let t = (((com.x - a[0]) * e[0] + (com.y - a[1]) * e[1])
                                / (e[0] * e[0] + e[1] * e[1]))
                                .clamp(0.0, 1.0);
                            ((com.x - a[0] - t * e[0]).powi(2)
                                + (com.y - a[1] - t * e[1]).powi(2))
                            .sqrt()
                        })
                        .fold(f64::INFINITY, f64::min);
                    boundary < 1e-3
                }),
            ),
            (
                &floating,
                ConstraintKind::Linear(linear.clone()),
                Box::new(|_: &KinematicModel, _: &[f64]| false),
            ),
        ];

        let mut rng = ChaCha8Rng::seed_from_u64(59);
        for (case, (model, kind, exclude)) in cases.into_iter().enumerate() {
            let set = ConstraintSet::new(model, vec![kind]).unwrap();
            let rows = set.constraints()[0].rows();
            let mut ws = EvalWorkspace::<1>::new();
            let mut res = BatchMatrix::zeros(0, 0);
            let mut jac = BatchMatrix::zeros(0, 0);
            let mut checked = 0;
            let mut worst: f64 = 0.0;
            for _ in 0..100 {
                let q = random_config(model, &mut rng);
                if exclude(model, &q) {
                    continue;
                }
                checked += 1;
                let block = ConfigBlock::<1>::splat(&q);
                ws.eval_constraint(&set, 0, model, &block, &mut res, &mut jac);
                for j in 0..model.dof() {
                    let mut qp = q.clone();
                    qp[j] += FD_STEP;
                    let rp = set.residuals(model, &qp);
                    let mut qm = q.clone();
                    qm[j] -= FD_STEP;
                    let rm = set.residuals(model, &qm);
                    for r in 0..rows {
                        let fd = (rp[r] - rm[r]) / (2.0 * FD_STEP);
                        worst = worst.max((jac.at(r, j)[0] - fd).abs());
                    }
                }
            }
            assert!(checked >= 50, "case {case}: too many excluded samples: {checked}");
            assert!(worst <= 1e-4, "case {case}: worst Jacobian error {worst:e}");
        }
    }

    #[test]
    fn lane_permutation_and_single_lane_replay_are_bitwise() {
        let model = KinematicModel::from_json_str(test_models::floating_pair()).unwrap();
        let set = mixed_set(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(97);
        const N: usize = 8;
        let configs: Vec<Vec<f64>> =
            (0..N).map(|_| random_config(&model, &mut rng)).collect();
        let perm = [5, 2, 7, 0, 3, 6, 1, 4];

        let mut straight = ConfigBlock::<N>::zeros(model.dof());
        let mut permuted = ConfigBlock::<N>::zeros(model.dof());
        for lane in 0..N {
            straight.set_lane(lane, &configs[lane]);
            permuted.set_lane(lane, &configs[perm[lane]]);
        }

        let mut ws = EvalWorkspace::<N>::new();
        let mut res_s = BatchMatrix::zeros(0, 0);
        let mut res_p = BatchMatrix::zeros(0, 0);
        ws.residuals(&set, &model, &straight, &mut res_s);
        ws.residuals(&set, &model, &permuted, &mut res_p);
        for r in 0..res_s.rows() {
            for lane in 0..N {
                assert_eq!(
                    res_p.at(r, 0)[lane].to_bits(),
                    res_s.at(r, 0)[perm[lane]].to_bits()
                );
            }
        }

        let mut jac_s = BatchMatrix::zeros(0, 0);
        let mut jac_p = BatchMatrix::zeros(0, 0);
        let mut res1 = BatchMatrix::zeros(0, 0);
        let mut jac1 = BatchMatrix::zeros(0, 0);
        let mut ws1 = EvalWorkspace::<1>::new();
        for index in 0..set.len() {
            ws.eval_constraint(&set, index, &model, &straight, &mut res_s, &mut jac_s);
            ws.eval_constraint(&set, index, &model, &permuted, &mut res_p, &mut jac_p);
            for r in 0..res_s.rows() {
                for lane in 0..N {
                    assert_eq!(
                        res_p.at(r, 0)[lane].to_bits(),
                        res_s.at(r, 0)[perm[lane]].to_bits()
                    );
                    for j in 0..model.dof() {
                        assert_eq!(
                            jac_p.at(r, j)[lane].to_bits(),
                            jac_s.at(r, j)[perm[lane]].to_bits()
                        );
                    }
                }
            }
            // A one-lane block must reproduce each wide lane exactly.
            for lane in 0..N {
                let block = ConfigBlock::<1>::splat(&configs[lane]);
                ws1.eval_constraint(&set, index, &model, &block, &mut res1, &mut jac1);
                for r in 0..res1.rows() {
                    assert_eq!(
                        res1.at(r, 0)[0].to_bits(),
                        res_s.at(r, 0)[lane].to_bits()
                    );
                    for j in 0..model.dof() {
                        assert_eq!(
                            jac1.at(r, j)[0].to_bits(),
                            jac_s.at(r, j)[lane].to_bits()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn relative_pose_ignores_rigid_base_motion() {
        let model = KinematicModel::from_json_str(test_models::floating_pair()).unwrap();
        let tip_left = model.frame_index("tip_left").unwrap();
        let tip_right = model.frame_index("tip_right").unwrap();
        let set = ConstraintSet::new(
            &model,
            vec![ConstraintKind::RelativePose(RelativePoseSpec {
                frame_a: tip_left,
                frame_b: tip_right,
                t_ref: RigidTransform::from_xyz_rpy([-0.5, 0.1, 0.0], [0.0, 0.2, 0.0]),
                bounds: zero_width_all(),
            })],
        )
        .unwrap();
        let joints = [0.7, -0.4];
        let bases = [
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [1.3, -0.8, 0.5, 0.6, -0.9, 2.1],
        ];
        let rows: Vec<Vec<f64>> = bases
            .iter()
            .map(|base| {
                let mut q = base.to_vec();
                q.extend_from_slice(&joints);
                set.residuals(&model, &q)
            })
            .collect();
        for (a, b) in rows[0].iter().zip(&rows[1]) {
            assert!((a - b).abs() < 1e-10, "{a} vs {b}");
        }
        assert!(rows[0].iter().any(|v| v.abs() > 1e-3));
    }

    #[test]
    fn converged_lanes_respects_tolerances() {
        let model = KinematicModel::from_json_str(test_models::floating_pair()).unwrap();
        let mut coeffs = vec![0.0; model.dof()];
        coeffs[6] = 1.0;
        let mut set = ConstraintSet::new(
            &model,
            vec![ConstraintKind::Linear(LinearSpec {
                coeffs,
                offset: 0.0,
            })],
        )
        .unwrap();
        let mut block = ConfigBlock::<4>::zeros(model.dof());
        block.row_mut(6)[1] = 5e-5;
        block.row_mut(6)[2] = 5e-3;
        let mut ws = EvalWorkspace::<4>::new();
        let mask = ws.converged_lanes(&set, &model, &block);
        assert_eq!(mask.0, [true, true, false, true]);
        set.set_constraint_tolerance(0, Some(1e-6)).unwrap();
        let strict = ws.converged_lanes(&set, &model, &block);
        assert_eq!(strict.0, [true, false, false, true]);
    }
}
