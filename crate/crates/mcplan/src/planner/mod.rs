//! Bidirectional constrained planning: two trees grown by batched
//! constrained extensions, swapped every iteration, with a greedy
//! connect phase that keeps extending toward the opposite tree until
//! it fails or closes the gap.
//!
//! All lane parallelism stays inside one query; a query runs on one
//! thread and owns its RNG, so identical seeds give identical plans.

mod extend;
mod tree;

use crate::batch::SUPPORTED_LANES;
use crate::collision::{self, Scene};
use crate::constraints::ConstraintSet;
use crate::kinematics::{FkScratch, KinematicModel};
use crate::projection::{ProjectionParams, Projector};
use crate::with_lanes;
use extend::{distance, extend, validate_segment, ExtendCtx};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};
use thiserror::Error;
use tree::Tree;

/// Upper bound on consecutive connect-phase extensions; the phase also
/// stops on failure, stall, or timeout, so this only guards against a
/// pathological bounce that keeps adding nodes.
const MAX_CONNECT_STEPS: usize = 100_000;

#[derive(Clone, Debug)]
pub struct PlannerParams {
    /// Longest straight steer per extension, in configuration space.
    pub max_step: f64,
    /// Standard deviation of the particle offsets along the steering
    /// direction.
    pub particle_spread: f64,
    /// Lane count for batched projection and validity checking.
    pub lanes: usize,
    /// Spacing at which motions are validated.
    pub resolution: f64,
    /// Gap at which the two trees count as connected.
    pub connect_tolerance: f64,
    pub max_iterations: usize,
    pub timeout: Duration,
    pub rng_seed: u64,
    /// When set, a node that has failed an extension only accepts
    /// samples within this radius of itself.
    pub dynamic_domain: Option<f64>,
    pub projection: ProjectionParams,
}

impl Default for PlannerParams {
    fn default() -> Self {
        PlannerParams {
            max_step: 0.5,
            particle_spread: 0.125,
            lanes: 8,
            resolution: 0.02,
            connect_tolerance: 0.02,
            max_iterations: 5000,
            timeout: Duration::from_secs(1),
            rng_seed: 0,
            dynamic_domain: None,
            projection: ProjectionParams::default(),
        }
    }
}

impl PlannerParams {
    fn validate(&self) -> Result<(), PlanError> {
        let bad = |msg: &str| Err(PlanError::BadParams(msg.to_string()));
        if !(self.max_step > 0.0) {
            return bad("max_step must be positive");
        }
        if !(self.resolution > 0.0 && self.resolution < self.max_step) {
            return bad("resolution must lie strictly between zero and max_step");
        }
        if !(self.connect_tolerance > 0.0) {
            return bad("connect_tolerance must be positive");
        }
        if !(self.particle_spread >= 0.0) {
            return bad("particle_spread must be non-negative");
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least one");
        }
        if !SUPPORTED_LANES.contains(&self.lanes) {
            return bad("lanes must be 1, 4, 8, or 16");
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlanStatus {
    Solved,
    Timeout,
    IterationCapped,
}

#[derive(Clone, Debug, Default)]
pub struct PlanStats {
    pub iterations: usize,
    pub extensions_attempted: usize,
    pub extensions_succeeded: usize,
    /// Descent sweeps summed over every projection call.
    pub projection_iterations: usize,
    pub wall_time: Duration,
}

#[derive(Clone, Debug)]
pub struct PlanResult {
    pub status: PlanStatus,
    /// Ordered from start to goal, adjacent waypoints at most the
    /// motion resolution apart, every waypoint on the manifold and
    /// collision free. Empty unless solved.
    pub waypoints: Vec<Vec<f64>>,
    pub stats: PlanStats,
}

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("invalid planner parameters: {0}")]
    BadParams(String),
    #[error("configuration has {got} values, the model has {want} degrees of freedom")]
    DimensionMismatch { got: usize, want: usize },
    #[error("{which} configuration violates a constraint by {violation:.2e}")]
    OffManifold { which: Endpoint, violation: f64 },
    #[error("{which} configuration is outside the joint limits")]
    OutsideLimits { which: Endpoint },
    #[error("{which} configuration is in collision")]
    InCollision { which: Endpoint },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Endpoint {
    Start,
    Goal,
}

impl std::fmt::Display for Endpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Endpoint::Start => "start",
            Endpoint::Goal => "goal",
        })
    }
}

/// Sum of adjacent waypoint distances.
pub fn path_length(waypoints: &[Vec<f64>]) -> f64 {
    waypoints
        .windows(2)
        .map(|w| distance(&w[0], &w[1]))
        .sum()
}

fn check_endpoint(
    model: &KinematicModel,
    scene: &Scene,
    set: &ConstraintSet,
    q: &[f64],
    which: Endpoint,
) -> Result<(), PlanError> {
    if q.len() != model.dof() {
        return Err(PlanError::DimensionMismatch {
            got: q.len(),
            want: model.dof(),
        });
    }
    for j in 0..model.dof() {
        if q[j] < model.lower_limits()[j] || q[j] > model.upper_limits()[j] {
            return Err(PlanError::OutsideLimits { which });
        }
    }
    if !set.satisfied(model, q) {
        return Err(PlanError::OffManifold {
            which,
            violation: set.max_violation(model, q),
        });
    }
    if collision::min_clearance(model, scene, q) < 0.0 {
        return Err(PlanError::InCollision { which });
    }
    Ok(())
}

/// Plans a constrained, collision-free path from `q_a` to `q_b`.
///
/// Both endpoints must already satisfy every constraint, sit inside the
/// joint limits, and be collision free; anything else is rejected
/// before the search starts.
pub fn plan(
    model: &KinematicModel,
    scene: &Scene,
    set: &ConstraintSet,
    q_a: &[f64],
    q_b: &[f64],
    params: &PlannerParams,
) -> Result<PlanResult, PlanError> {
    params.validate()?;
    check_endpoint(model, scene, set, q_a, Endpoint::Start)?;
    check_endpoint(model, scene, set, q_b, Endpoint::Goal)?;
    Ok(with_lanes!(params.lanes, N, {
        plan_impl::<N>(model, scene, set, q_a, q_b, params)
    }))
}

fn plan_impl<const N: usize>(
    model: &KinematicModel,
    scene: &Scene,
    set: &ConstraintSet,
    q_a: &[f64],
    q_b: &[f64],
    params: &PlannerParams,
) -> PlanResult {
    let start = Instant::now();
    let mut stats = PlanStats::default();

    if distance(q_a, q_b) <= params.connect_tolerance {
        stats.wall_time = start.elapsed();
        return PlanResult {
            status: PlanStatus::Solved,
            waypoints: vec![q_a.to_vec()],
            stats,
        };
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed);
    let mut projector = Projector::<N>::new();
    let mut fk = FkScratch::<N>::new();
    let mut tree_a = Tree::new(q_a.to_vec());
    let mut tree_b = Tree::new(q_b.to_vec());
    // Flipped on every swap; tells path extraction which tree holds the
    // start.
    let mut a_is_start = true;
    let dof = model.dof();
    let lower = model.lower_limits().to_vec();
    let upper = model.upper_limits().to_vec();

    let finish = |status: PlanStatus, waypoints: Vec<Vec<f64>>, mut stats: PlanStats| {
        stats.wall_time = start.elapsed();
        PlanResult {
            status,
            waypoints,
            stats,
        }
    };

    for _ in 0..params.max_iterations {
        stats.iterations += 1;
        if start.elapsed() >= params.timeout {
            return finish(PlanStatus::Timeout, Vec::new(), stats);
        }

        let q_rand: Vec<f64> = (0..dof)
            .map(|j| {
                if upper[j] > lower[j] {
                    rng.gen_range(lower[j]..upper[j])
                } else {
                    lower[j]
                }
            })
            .collect();
        let near_a = tree_a.nearest(&q_rand);
        if params.dynamic_domain.is_some() {
            if let Some(radius) = tree_a.domain(near_a) {
                if distance(&q_rand, tree_a.config(near_a)) > radius {
                    tree_swap(&mut tree_a, &mut tree_b, &mut a_is_start);
                    continue;
                }
            }
        }

        let extended = extend(
            &mut tree_a,
            near_a,
            &q_rand,
            &mut ExtendCtx {
                model,
                scene,
                set,
                params,
                projector: &mut projector,
                fk: &mut fk,
                rng: &mut rng,
                stats: &mut stats,
            },
        );

        match extended {
            None => {
                if let Some(radius) = params.dynamic_domain {
                    tree_a.set_domain(near_a, radius);
                }
            }
            Some(mut current) => {
                let mut steps = 0;
                loop {
                    steps += 1;
                    if steps > MAX_CONNECT_STEPS || start.elapsed() >= params.timeout {
                        if start.elapsed() >= params.timeout {
                            return finish(PlanStatus::Timeout, Vec::new(), stats);
                        }
                        break;
                    }
                    let near_b = tree_b.nearest(tree_a.config(current));
                    let gap = distance(tree_a.config(current), tree_b.config(near_b));
                    if gap <= params.connect_tolerance {
                        let junction = if gap > params.resolution {
                            validate_segment(
                                tree_a.config(current).to_vec().as_slice(),
                                tree_b.config(near_b).to_vec().as_slice(),
                                &mut ExtendCtx {
                                    model,
                                    scene,
                                    set,
                                    params,
                                    projector: &mut projector,
                                    fk: &mut fk,
                                    rng: &mut rng,
                                    stats: &mut stats,
                                },
                            )
                        } else {
                            Some(Vec::new())
                        };
                        match junction {
                            Some(chain) => {
                                let waypoints = extract_path(
                                    &tree_a, current, chain, &tree_b, near_b, a_is_start,
                                );
                                return finish(PlanStatus::Solved, waypoints, stats);
                            }
                            // The gap closed but its bridge would not
                            // validate; keep searching.
                            None => break,
                        }
                    }
                    let target = tree_b.config(near_b).to_vec();
                    let next = extend(
                        &mut tree_a,
                        current,
                        &target,
                        &mut ExtendCtx {
                            model,
                            scene,
                            set,
                            params,
                            projector: &mut projector,
                            fk: &mut fk,
                            rng: &mut rng,
                            stats: &mut stats,
                        },
                    );
                    match next {
                        Some(index) if index != current => current = index,
                        _ => break,
                    }
                }
            }
        }

        tree_swap(&mut tree_a, &mut tree_b, &mut a_is_start);
    }

    finish(PlanStatus::IterationCapped, Vec::new(), stats)
}

fn tree_swap(tree_a: &mut Tree, tree_b: &mut Tree, a_is_start: &mut bool) {
    std::mem::swap(tree_a, tree_b);
    *a_is_start = !*a_is_start;
}

/// Concatenates the root paths of both trees through the junction into
/// one start-to-goal waypoint list, expanding every edge's validated
/// chain.
fn extract_path(
    tree_a: &Tree,
    tip_a: usize,
    junction: Vec<Vec<f64>>,
    tree_b: &Tree,
    tip_b: usize,
    a_is_start: bool,
) -> Vec<Vec<f64>> {
    let mut waypoints: Vec<Vec<f64>> = Vec::new();
    let path_a = tree_a.path_to_root(tip_a);
    waypoints.push(tree_a.config(path_a[0]).to_vec());
    for &node in &path_a[1..] {
        for c in tree_a.chain(node) {
            waypoints.push(c.clone());
        }
        waypoints.push(tree_a.config(node).to_vec());
    }
    waypoints.extend(junction);
    let path_b = tree_b.path_to_root(tip_b);
    waypoints.push(tree_b.config(tip_b).to_vec());
    for pair in path_b.windows(2).rev() {
        let (parent, child) = (pair[0], pair[1]);
        for c in tree_b.chain(child).iter().rev() {
            waypoints.push(c.clone());
        }
        waypoints.push(tree_b.config(parent).to_vec());
    }
    if !a_is_start {
        waypoints.reverse();
    }
    waypoints
}

#[derive(Clone, Debug)]
pub struct PathFault {
    pub segment: usize,
    pub sample: usize,
    pub residual: f64,
    pub clearance: f64,
}

#[derive(Clone, Debug)]
pub struct PathReport {
    pub pass: bool,
    pub max_residual: f64,
    /// Smallest clearance seen; +∞ when nothing can collide.
    pub min_clearance: f64,
    pub first_fault: Option<PathFault>,
}

/// Independently re-checks a path: every segment is re-interpolated at
/// `resolution / oversample` spacing and each sample is evaluated
/// directly, nothing is projected. A sample fails on a constraint
/// residual beyond `residual_tolerance`, a joint outside its limits,
/// or negative clearance.
pub fn validate_path(
    model: &KinematicModel,
    scene: &Scene,
    set: &ConstraintSet,
    waypoints: &[Vec<f64>],
    resolution: f64,
    oversample: usize,
    residual_tolerance: f64,
) -> PathReport {
    let mut report = PathReport {
        pass: true,
        max_residual: 0.0,
        min_clearance: f64::INFINITY,
        first_fault: None,
    };
    let spacing = resolution / oversample.max(1) as f64;
    let mut sample_q = vec![0.0; model.dof()];
    for (segment, pair) in waypoints.windows(2).enumerate() {
        let (qa, qb) = (&pair[0], &pair[1]);
        let steps = (distance(qa, qb) / spacing).ceil().max(1.0) as usize;
        for step in 0..=steps {
            let t = step as f64 / steps as f64;
            for i in 0..sample_q.len() {
                sample_q[i] = qa[i] + t * (qb[i] - qa[i]);
            }
            let residual = set.max_violation(model, &sample_q);
            let clearance = collision::min_clearance(model, scene, &sample_q);
            let in_limits = (0..model.dof()).all(|j| {
                sample_q[j] >= model.lower_limits()[j] && sample_q[j] <= model.upper_limits()[j]
            });
            report.max_residual = report.max_residual.max(residual);
            report.min_clearance = report.min_clearance.min(clearance);
            if residual > residual_tolerance || clearance < 0.0 || !in_limits {
                report.pass = false;
                if report.first_fault.is_none() {
                    report.first_fault = Some(PathFault {
                        segment,
                        sample: step,
                        residual,
                        clearance,
                    });
                }
            }
        }
    }
    if waypoints.is_empty() {
        report.pass = false;
    }
    report
}

/// Best-effort iterative shortcutting. Each attempt picks two waypoint
/// indices and tries to replace the stretch between them with a
/// validated straight bridge; a replacement is kept only when it is
/// strictly shorter, so the path length never increases. Returns the
/// input unchanged unless it was solved.
pub fn shortcut_path(
    model: &KinematicModel,
    scene: &Scene,
    set: &ConstraintSet,
    result: &PlanResult,
    params: &PlannerParams,
    attempts: usize,
) -> PlanResult {
    if result.status != PlanStatus::Solved || result.waypoints.len() < 3 {
        return result.clone();
    }
    with_lanes!(params.lanes, N, {
        shortcut_impl::<N>(model, scene, set, result, params, attempts)
    })
}

fn shortcut_impl<const N: usize>(
    model: &KinematicModel,
    scene: &Scene,
    set: &ConstraintSet,
    result: &PlanResult,
    params: &PlannerParams,
    attempts: usize,
) -> PlanResult {
    let mut waypoints = result.waypoints.clone();
    let mut stats = result.stats.clone();
    // Decorrelated from the planning stream so shortcutting cannot
    // replay it.
    let mut rng = ChaCha8Rng::seed_from_u64(params.rng_seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut projector = Projector::<N>::new();
    let mut fk = FkScratch::<N>::new();

    for _ in 0..attempts {
        if waypoints.len() < 3 {
            break;
        }
        let i = rng.gen_range(0..waypoints.len() - 2);
        let j = rng.gen_range(i + 2..waypoints.len());
        let old_length: f64 = waypoints[i..=j]
            .windows(2)
            .map(|w| distance(&w[0], &w[1]))
            .sum();
        let chain = match validate_segment(
            &waypoints[i].clone(),
            &waypoints[j].clone(),
            &mut ExtendCtx {
                model,
                scene,
                set,
                params,
                projector: &mut projector,
                fk: &mut fk,
                rng: &mut rng,
                stats: &mut stats,
            },
        ) {
            Some(chain) => chain,
            None => continue,
        };
        let mut new_length = 0.0;
        let mut prev = &waypoints[i];
        for point in &chain {
            new_length += distance(prev, point);
            prev = point;
        }
        new_length += distance(prev, &waypoints[j]);
        if new_length < old_length {
            waypoints.splice(i + 1..j, chain);
        }
    }

    PlanResult {
        status: PlanStatus::Solved,
        waypoints,
        stats,
    }
}
