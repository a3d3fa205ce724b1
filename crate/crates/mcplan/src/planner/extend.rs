//! Constrained extension: steer toward a target, seed a particle batch
//! along the steering direction, project every particle at once, then
//! validate the bridge back to the start by two-stage interpolate-and-
//! project refinement down to the motion resolution.

use crate::batch::ConfigBlock;
use crate::collision::{self, Scene};
use crate::constraints::ConstraintSet;
use crate::kinematics::{FkScratch, KinematicModel};
use crate::planner::tree::Tree;
use crate::planner::{PlanStats, PlannerParams};
use crate::projection::{LaneStatus, Projector};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use std::collections::VecDeque;

/// Everything an extension needs besides the tree it grows. Bundled so
/// the call sites stay readable; each call reborrows the mutable parts.
pub(crate) struct ExtendCtx<'a, const N: usize> {
    pub model: &'a KinematicModel,
    pub scene: &'a Scene,
    pub set: &'a ConstraintSet,
    pub params: &'a PlannerParams,
    pub projector: &'a mut Projector<N>,
    pub fk: &'a mut FkScratch<N>,
    pub rng: &'a mut ChaCha8Rng,
    pub stats: &'a mut PlanStats,
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    let mut sum = 0.0;
    for i in 0..a.len() {
        let d = a[i] - b[i];
        sum += d * d;
    }
    sum.sqrt()
}

/// One constrained extension from tree node `from` toward `target`.
///
/// Steers at most `max_step` along the straight direction, perturbs the
/// steer point along that direction into one particle per lane (lane 0
/// stays unperturbed), projects the batch, and keeps the first lane
/// that lands on the manifold. The projected point must be collision
/// free and no farther than twice the steer distance; the bridge back
/// to `from` must survive [`validate_segment`]. On success the point
/// joins the tree and its index is returned; any failure leaves the
/// tree untouched. A target already within the motion resolution
/// returns `from` itself without mutating anything.
pub(crate) fn extend<const N: usize>(
    tree: &mut Tree,
    from: usize,
    target: &[f64],
    ctx: &mut ExtendCtx<'_, N>,
) -> Option<usize> {
    let dof = ctx.model.dof();
    let q_s = tree.config(from).to_vec();
    let norm = distance(&q_s, target);
    if norm <= ctx.params.resolution {
        return Some(from);
    }
    ctx.stats.extensions_attempted += 1;

    let dist = norm.min(ctx.params.max_step);
    let v: Vec<f64> = (0..dof).map(|i| (target[i] - q_s[i]) / norm).collect();
    let q_steer: Vec<f64> = (0..dof).map(|i| q_s[i] + dist * v[i]).collect();

    let mut particles = ConfigBlock::<N>::zeros(dof);
    particles.set_lane(0, &q_steer);
    if N > 1 {
        let spread =
            Normal::new(0.0, ctx.params.particle_spread).expect("spread is finite and non-negative");
        let mut lane_q = vec![0.0; dof];
        for lane in 1..N {
            let eps = spread.sample(ctx.rng);
            for i in 0..dof {
                lane_q[i] = q_steer[i] + eps * v[i];
            }
            particles.set_lane(lane, &lane_q);
        }
    }

    let first = ctx
        .projector
        .project_any(ctx.set, ctx.model, &ctx.params.projection, &mut particles);
    ctx.stats.projection_iterations += first.sweeps;
    let lane = first.lane?;
    let mut q_proj = vec![0.0; dof];
    particles.copy_lane_to(lane, &mut q_proj);

    let progress = distance(&q_proj, &q_s);
    if progress > 2.0 * dist {
        return None;
    }
    if !collision::config_valid_scalar(ctx.model, ctx.scene, &q_proj) {
        return None;
    }
    if progress < 1e-12 {
        // Projection pulled the steer back onto the start; nothing new.
        return Some(from);
    }

    let chain = validate_segment(&q_s, &q_proj, ctx)?;
    let child = tree.add_child(from, q_proj, chain);
    ctx.stats.extensions_succeeded += 1;
    Some(child)
}

/// Validates the straight bridge between two on-manifold endpoints.
///
/// Stage one drops one interior interpolant per lane and projects them
/// all in a single batch; stage two repeatedly splits every adjacent
/// gap wider than the motion resolution at its midpoint, projecting
/// the midpoints in batches of up to one per lane. Every projected
/// point must converge and be collision free, no adjacent gap may
/// exceed `max_step` divided by the lane count, and splitting deeper
/// than ⌈log₂(max_step/resolution)⌉ + 2 levels gives up. Returns the
/// interior chain ordered from `q_a` to `q_b` with endpoints excluded,
/// adjacent spacing at most the motion resolution; `None` on any
/// failure.
pub(crate) fn validate_segment<const N: usize>(
    q_a: &[f64],
    q_b: &[f64],
    ctx: &mut ExtendCtx<'_, N>,
) -> Option<Vec<Vec<f64>>> {
    let dof = q_a.len();
    let length = distance(q_a, q_b);
    if length <= ctx.params.resolution {
        return Some(Vec::new());
    }
    let gap_bound = ctx.params.max_step / N as f64;
    let depth_cap = (ctx.params.max_step / ctx.params.resolution).log2().ceil() as u32 + 2;

    let mut block = ConfigBlock::<N>::zeros(dof);
    let mut lane_q = vec![0.0; dof];
    for lane in 0..N {
        let t = (lane + 1) as f64 / (N + 1) as f64;
        for i in 0..dof {
            lane_q[i] = q_a[i] + t * (q_b[i] - q_a[i]);
        }
        block.set_lane(lane, &lane_q);
    }
    let report = ctx
        .projector
        .project_all(ctx.set, ctx.model, &ctx.params.projection, &mut block);
    ctx.stats.projection_iterations += report.iterations.iter().sum::<usize>();
    if !report.all_converged() {
        return None;
    }
    if !collision::config_valid(ctx.model, ctx.scene, &block, ctx.fk).all_set() {
        return None;
    }

    // The arena keys every point by its parameter along the bridge;
    // segments reference arena indices, so refinement never shifts
    // anything already stored.
    let mut arena: Vec<(f64, Vec<f64>)> = Vec::with_capacity(N + 2);
    arena.push((0.0, q_a.to_vec()));
    for lane in 0..N {
        let t = (lane + 1) as f64 / (N + 1) as f64;
        arena.push((t, block.lane(lane)));
    }
    arena.push((1.0, q_b.to_vec()));

    let mut queue: VecDeque<(usize, usize, u32)> = VecDeque::new();
    for i in 0..arena.len() - 1 {
        let gap = distance(&arena[i].1, &arena[i + 1].1);
        if gap > gap_bound {
            return None;
        }
        if gap > ctx.params.resolution {
            queue.push_back((i, i + 1, 0));
        }
    }

    let mut batch: Vec<(usize, usize, u32)> = Vec::with_capacity(N);
    while !queue.is_empty() {
        batch.clear();
        while batch.len() < N {
            match queue.pop_front() {
                Some(item) => batch.push(item),
                None => break,
            }
        }
        for (lane, &(a, b, _)) in batch.iter().enumerate() {
            for i in 0..dof {
                lane_q[i] = 0.5 * (arena[a].1[i] + arena[b].1[i]);
            }
            block.set_lane(lane, &lane_q);
        }
        // Spare lanes replay the first midpoint; lanes are independent,
        // so the copies cannot disturb the real ones.
        if batch.len() < N {
            let fill = block.lane(0);
            for lane in batch.len()..N {
                block.set_lane(lane, &fill);
            }
        }

        let report = ctx
            .projector
            .project_all(ctx.set, ctx.model, &ctx.params.projection, &mut block);
        ctx.stats.projection_iterations += report.iterations.iter().sum::<usize>();
        for lane in 0..batch.len() {
            if report.status[lane] != LaneStatus::Converged {
                return None;
            }
        }
        let valid = collision::config_valid(ctx.model, ctx.scene, &block, ctx.fk);
        for lane in 0..batch.len() {
            if !valid.get(lane) {
                return None;
            }
        }

        for (lane, &(a, b, depth)) in batch.iter().enumerate() {
            let mid = block.lane(lane);
            let t_mid = 0.5 * (arena[a].0 + arena[b].0);
            let gap_a = distance(&arena[a].1, &mid);
            let gap_b = distance(&mid, &arena[b].1);
            if gap_a > gap_bound || gap_b > gap_bound {
                return None;
            }
            let mid_index = arena.len();
            arena.push((t_mid, mid));
            let next = depth + 1;
            for (x, y, gap) in [(a, mid_index, gap_a), (mid_index, b, gap_b)] {
                if gap > ctx.params.resolution {
                    if next > depth_cap {
                        return None;
                    }
                    queue.push_back((x, y, next));
                }
            }
        }
    }

    arena.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    Some(
        arena
            .into_iter()
            .filter(|(t, _)| *t > 0.0 && *t < 1.0)
            .map(|(_, config)| config)
            .collect(),
    )
}
