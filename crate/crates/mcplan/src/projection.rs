//! Iterative projection of configuration lanes onto the constraint
//! manifold.
//!
//! Each round first checks convergence, then runs one cyclic descent
//! sweep: every constraint in turn contributes a damped least-squares
//! step evaluated at the partially updated configuration. Lanes retire
//! individually. A lane converges when every constraint's residual is
//! strictly inside tolerance, diverges when its net sweep step exceeds
//! the step budget or its Gram factorization collapses, and is capped
//! when the iteration budget runs out. Diverged lanes keep the last
//! configuration from before the offending sweep.

use crate::batch::{
    damped_step, BatchMatrix, ConfigBlock, LaneMask, StepMode, StepScratch,
};
use crate::constraints::eval::EvalWorkspace;
use crate::constraints::ConstraintSet;
use crate::kinematics::KinematicModel;

#[derive(Clone, Copy, Debug)]
pub struct ProjectionParams {
    /// Descent sweeps per lane before giving up.
    pub max_iterations: usize,
    /// A single sweep moving a lane farther than this marks it diverged.
    pub max_step_distance: f64,
    /// Levenberg-Marquardt damping added to the Gram diagonal.
    pub damping: f64,
    /// Fraction of each damped step actually taken.
    pub step_scale: f64,
    pub mode: StepMode,
}

impl Default for ProjectionParams {
    fn default() -> Self {
        ProjectionParams {
            max_iterations: 64,
            max_step_distance: 1.0,
            damping: 1e-8,
            step_scale: 1.0,
            mode: StepMode::Auto,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LaneStatus {
    Converged,
    Diverged,
    IterationCapped,
}

/// Per-lane outcome of [`Projector::project_all`].
#[derive(Clone, Copy, Debug)]
pub struct ProjectionReport<const N: usize> {
    pub status: [LaneStatus; N],
    /// Descent sweeps each lane went through before retiring.
    pub iterations: [usize; N],
}

impl<const N: usize> ProjectionReport<N> {
    pub fn all_converged(&self) -> bool {
        self.status.iter().all(|s| *s == LaneStatus::Converged)
    }

    pub fn converged_lanes(&self) -> LaneMask<N> {
        let mut mask = LaneMask::none();
        for lane in 0..N {
            mask.set(lane, self.status[lane] == LaneStatus::Converged);
        }
        mask
    }
}

/// Outcome of [`Projector::project_any`]: the first lane to converge,
/// if one did, and the sweeps spent overall.
#[derive(Clone, Copy, Debug)]
pub struct FirstConverged {
    pub lane: Option<usize>,
    pub sweeps: usize,
}

/// Owns every buffer the projection loop needs, so repeated calls do
/// not allocate.
#[derive(Debug)]
pub struct Projector<const N: usize> {
    ws: EvalWorkspace<N>,
    res: BatchMatrix<N>,
    jac: BatchMatrix<N>,
    delta: BatchMatrix<N>,
    scratch: StepScratch<N>,
    q_work: ConfigBlock<N>,
}

impl<const N: usize> Projector<N> {
    pub fn new() -> Self {
        Projector {
            ws: EvalWorkspace::new(),
            res: BatchMatrix::zeros(0, 0),
            jac: BatchMatrix::zeros(0, 0),
            delta: BatchMatrix::zeros(0, 0),
            scratch: StepScratch::new(),
            q_work: ConfigBlock::zeros(0),
        }
    }

    pub fn workspace(&mut self) -> &mut EvalWorkspace<N> {
        &mut self.ws
    }

    /// Projects every lane of `q` onto the manifold in place, running
    /// until each lane has converged, diverged, or hit the budget.
    pub fn project_all(
        &mut self,
        set: &ConstraintSet,
        model: &KinematicModel,
        params: &ProjectionParams,
        q: &mut ConfigBlock<N>,
    ) -> ProjectionReport<N> {
        self.run(set, model, params, q, false).0
    }

    /// Like [`Projector::project_all`] but stops at the first round with
    /// a converged lane, preferring the lowest lane index on ties. `q`
    /// still holds every lane's last state; the winner's column is the
    /// projected configuration.
    pub fn project_any(
        &mut self,
        set: &ConstraintSet,
        model: &KinematicModel,
        params: &ProjectionParams,
        q: &mut ConfigBlock<N>,
    ) -> FirstConverged {
        let (report, sweeps) = self.run(set, model, params, q, true);
        let lane = (0..N).find(|&l| report.status[l] == LaneStatus::Converged);
        FirstConverged { lane, sweeps }
    }

    fn run(
        &mut self,
        set: &ConstraintSet,
        model: &KinematicModel,
        params: &ProjectionParams,
        q: &mut ConfigBlock<N>,
        stop_at_first: bool,
    ) -> (ProjectionReport<N>, usize) {
        assert_eq!(q.dof(), model.dof());
        let mut active = LaneMask::all();
        let mut status = [LaneStatus::IterationCapped; N];
        let mut iterations = [0usize; N];
        let mut sweeps = 0;
        loop {
            let converged = self.ws.converged_lanes(set, model, q);
            let mut any_new = false;
            for lane in 0..N {
                if active.get(lane) && converged.get(lane) {
                    active.set(lane, false);
                    status[lane] = LaneStatus::Converged;
                    iterations[lane] = sweeps;
                    any_new = true;
                }
            }
            let stop = (stop_at_first && any_new)
                || !active.any()
                || sweeps == params.max_iterations;
            if stop {
                for lane in 0..N {
                    if active.get(lane) {
                        status[lane] = LaneStatus::IterationCapped;
                        iterations[lane] = sweeps;
                    }
                }
                return (
                    ProjectionReport { status, iterations },
                    sweeps,
                );
            }
            let diverged = self.descent_sweep(set, model, params, q, &active);
            sweeps += 1;
            for lane in 0..N {
                if active.get(lane) && diverged.get(lane) {
                    active.set(lane, false);
                    status[lane] = LaneStatus::Diverged;
                    iterations[lane] = sweeps;
                }
            }
        }
    }

    /// One cyclic pass over the constraints on a working copy; commits
    /// the net motion to lanes that stayed within the step budget and
    /// returns the lanes that did not.
    fn descent_sweep(
        &mut self,
        set: &ConstraintSet,
        model: &KinematicModel,
        params: &ProjectionParams,
        q: &mut ConfigBlock<N>,
        active: &LaneMask<N>,
    ) -> LaneMask<N> {
        let d = model.dof();
        self.q_work.copy_from(q);
        let mut failed = LaneMask::none();
        for index in 0..set.len() {
            let k = set.constraints()[index].rows();
            self.ws
                .eval_constraint(set, index, model, &self.q_work, &mut self.res, &mut self.jac);
            damped_step(
                &self.jac,
                &self.res,
                params.damping,
                params.step_scale,
                params.mode.resolve(k, d),
                &mut self.delta,
                &mut self.scratch,
                &mut failed,
            );
            let apply = active.and(&failed.not());
            self.q_work.sub_assign_masked(&self.delta, &apply);
        }
        let mut diverged = failed.and(active);
        let limit_sq = params.max_step_distance * params.max_step_distance;
        let mut step_sq = [0.0; N];
        for row in 0..d {
            let from = q.row(row);
            let to = self.q_work.row(row);
            for lane in 0..N {
                let dv = to[lane] - from[lane];
                step_sq[lane] += dv * dv;
            }
        }
        for lane in 0..N {
            if !active.get(lane) || diverged.get(lane) {
                continue;
            }
            if !(step_sq[lane] <= limit_sq) {
                diverged.set(lane, true);
                continue;
            }
            for row in 0..d {
                q.row_mut(row)[lane] = self.q_work.row(row)[lane];
            }
        }
        diverged
    }
}

impl<const N: usize> Default for Projector<N> {
    fn default() -> Self {
        Self::new()
    }
}
