//! Task constraints that carve a manifold out of configuration space.
//!
//! Each constraint maps a configuration to a short residual vector that is
//! zero exactly where the constraint holds. Pose-style constraints measure
//! a six component displacement `[tx, ty, tz, rx, ry, rz]` (translation,
//! then rotation log) and clamp every component against an interval:
//! components with at least one finite bound each contribute a residual
//! row, fully unbounded components contribute none. Equal interval
//! endpoints pin a component exactly.
//!
//! A [`ConstraintSet`] owns the constraints in evaluation order, the
//! convergence tolerance, and a scalar evaluation path used for final
//! path validation. The batched residual and Jacobian assembly used
//! inside projection lives in [`eval`].

pub mod eval;

use crate::geom::{log_so3, RigidTransform};
use crate::kinematics::{KinematicModel, TransformJson};
use nalgebra::Vector3;
use serde::Deserialize;
use thiserror::Error;

/// Default residual tolerance: a constraint counts as satisfied when
/// every row is strictly below this in absolute value.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Interval per displacement component; `±INFINITY` leaves a side open.
pub type DisplacementBounds = [[f64; 2]; 6];

/// Bounds the pose of a robot frame inside a region anchored in the
/// world. The displacement is measured in the task frame `t0_w`, after
/// removing the grasp offset `tw_e` from the constrained frame's pose.
#[derive(Clone, Debug)]
pub struct TsrSpec {
    /// Index into the model's frame list.
    pub frame: usize,
    /// Task frame pose in the world.
    pub t0_w: RigidTransform,
    /// Pose of the constrained frame relative to the moving task frame.
    pub tw_e: RigidTransform,
    pub bounds: DisplacementBounds,
}

/// Bounds frame `b`'s pose relative to frame `a` around a reference
/// pose. Rigidly moving both frames together leaves the residual
/// unchanged, which is what makes this usable for bimanual grasps.
#[derive(Clone, Debug)]
pub struct RelativePoseSpec {
    pub frame_a: usize,
    pub frame_b: usize,
    /// Reference pose of `b` expressed in `a`.
    pub t_ref: RigidTransform,
    pub bounds: DisplacementBounds,
}

/// Keeps two body points a fixed distance apart, like an inextensible
/// cable or a loop-closing rod. One residual row.
#[derive(Clone, Debug)]
pub struct ClosedLinkSpec {
    pub frame_a: usize,
    /// Attachment point in `frame_a` coordinates.
    pub local_a: Vector3<f64>,
    pub frame_b: usize,
    pub local_b: Vector3<f64>,
    pub length: f64,
}

/// Keeps the center of mass, projected onto the ground plane, inside a
/// convex polygon. Two residual rows measuring the offset from the
/// nearest polygon point, identically zero inside.
#[derive(Clone, Debug)]
pub struct SupportPolygonSpec {
    /// Convex polygon in world x-y, counter-clockwise.
    pub vertices: Vec<[f64; 2]>,
}

/// Affine equality directly on the configuration: `coeffs · q = offset`.
#[derive(Clone, Debug)]
pub struct LinearSpec {
    pub coeffs: Vec<f64>,
    pub offset: f64,
}

#[derive(Clone, Debug)]
pub enum ConstraintKind {
    Tsr(TsrSpec),
    RelativePose(RelativePoseSpec),
    ClosedLink(ClosedLinkSpec),
    SupportPolygon(SupportPolygonSpec),
    Linear(LinearSpec),
}

/// One validated constraint plus its residual-row bookkeeping.
#[derive(Clone, Debug)]
pub struct Constraint {
    kind: ConstraintKind,
    tolerance: Option<f64>,
    /// Displacement components with a finite bound, ascending; empty for
    /// kinds whose rows are fixed by construction.
    components: Vec<usize>,
    rows: usize,
}

impl Constraint {
    pub fn kind(&self) -> &ConstraintKind {
        &self.kind
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn tolerance(&self) -> Option<f64> {
        self.tolerance
    }

    pub(crate) fn components(&self) -> &[usize] {
        &self.components
    }
}

#[derive(Debug, Error)]
pub enum ConstraintError {
    #[error("constraint parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("constraint {index}: unknown frame `{name}`")]
    UnknownFrame { index: usize, name: String },
    #[error("constraint {index}: frame index {frame} out of range")]
    FrameRange { index: usize, frame: usize },
    #[error("constraint {index}: component {component} bounds are not an interval")]
    BadBounds { index: usize, component: usize },
    #[error("constraint {index}: every displacement component is unbounded")]
    Unbounded { index: usize },
    #[error("constraint {index}: support polygon must be convex, counter-clockwise, non-degenerate")]
    BadPolygon { index: usize },
    #[error("constraint {index}: coefficients must cover every degree of freedom with a nonzero entry")]
    BadLinear { index: usize },
    #[error("constraint {index}: link length must be finite and non-negative")]
    BadLength { index: usize },
    #[error("constraint {index}: tolerance must be positive and finite")]
    BadTolerance { index: usize },
    #[error("{rows} residual rows leave no motion freedom in {dof} degrees of freedom")]
    TooManyRows { rows: usize, dof: usize },
}

/// An ordered set of constraints sharing one kinematic model.
#[derive(Clone, Debug)]
pub struct ConstraintSet {
    constraints: Vec<Constraint>,
    tolerance: f64,
    total_rows: usize,
    dof: usize,
}

impl ConstraintSet {
    /// Validates every constraint against the model and fixes the
    /// evaluation order to the order given here.
    pub fn new(
        model: &KinematicModel,
        kinds: Vec<ConstraintKind>,
    ) -> Result<Self, ConstraintError> {
        let dof = model.dof();
        let mut constraints = Vec::with_capacity(kinds.len());
        let mut total_rows = 0;
        for (index, kind) in kinds.into_iter().enumerate() {
            let constraint = validate_kind(model, index, kind)?;
            total_rows += constraint.rows;
            constraints.push(constraint);
        }
        if total_rows >= dof {
            return Err(ConstraintError::TooManyRows {
                rows: total_rows,
                dof,
            });
        }
        Ok(ConstraintSet {
            constraints,
            tolerance: DEFAULT_TOLERANCE,
            total_rows,
            dof,
        })
    }

    /// Parses a JSON array of constraints, resolving frame names against
    /// the model. See the guide for the schema of each kind.
    pub fn from_json_str(
        model: &KinematicModel,
        text: &str,
    ) -> Result<Self, ConstraintError> {
        let parsed: Vec<ConstraintJson> = serde_json::from_str(text)?;
        let mut kinds = Vec::with_capacity(parsed.len());
        let mut tolerances = Vec::with_capacity(parsed.len());
        for (index, entry) in parsed.into_iter().enumerate() {
            let (kind, tolerance) = entry.resolve(model, index)?;
            kinds.push(kind);
            tolerances.push(tolerance);
        }
        let mut set = Self::new(model, kinds)?;
        for (index, tolerance) in tolerances.into_iter().enumerate() {
            if tolerance.is_some() {
                set.set_constraint_tolerance(index, tolerance)?;
            }
        }
        Ok(set)
    }

    /// Sets the tolerance used by every constraint without an override.
    pub fn set_tolerance(&mut self, tolerance: f64) {
        assert!(tolerance > 0.0 && tolerance.is_finite());
        self.tolerance = tolerance;
    }

    /// Overrides one constraint's tolerance; `None` restores the shared
    /// default.
    pub fn set_constraint_tolerance(
        &mut self,
        index: usize,
        tolerance: Option<f64>,
    ) -> Result<(), ConstraintError> {
        if let Some(t) = tolerance {
            if !(t > 0.0 && t.is_finite()) {
                return Err(ConstraintError::BadTolerance { index });
            }
        }
        self.constraints[index].tolerance = tolerance;
        Ok(())
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn tolerance_for(&self, index: usize) -> f64 {
        self.constraints[index].tolerance.unwrap_or(self.tolerance)
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.constraints
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn total_rows(&self) -> usize {
        self.total_rows
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    /// Stacked residual at `q`, rows in constraint order. One scalar
    /// kinematics pass; independent of the batched evaluation path.
    pub fn residuals(&self, model: &KinematicModel, q: &[f64]) -> Vec<f64> {
        let poses = model.forward_kinematics(q);
        let mut out = Vec::with_capacity(self.total_rows);
        for constraint in &self.constraints {
            push_rows_scalar(model, constraint, &poses, q, &mut out);
        }
        out
    }

    /// Largest residual row magnitude at `q`.
    pub fn max_violation(&self, model: &KinematicModel, q: &[f64]) -> f64 {
        self.residuals(model, q)
            .iter()
            .fold(0.0, |worst, v| worst.max(v.abs()))
    }

    /// Whether every constraint's residual is strictly inside its
    /// tolerance at `q`.
    pub fn satisfied(&self, model: &KinematicModel, q: &[f64]) -> bool {
        let poses = model.forward_kinematics(q);
        let mut rows = Vec::new();
        for (index, constraint) in self.constraints.iter().enumerate() {
            rows.clear();
            push_rows_scalar(model, constraint, &poses, q, &mut rows);
            let tolerance = self.tolerance_for(index);
            if !rows.iter().all(|v| v.abs() < tolerance) {
                return false;
            }
        }
        true
    }
}

fn validate_kind(
    model: &KinematicModel,
    index: usize,
    kind: ConstraintKind,
) -> Result<Constraint, ConstraintError> {
    let check_frame = |frame: usize| {
        if frame < model.frames().len() {
            Ok(())
        } else {
            Err(ConstraintError::FrameRange { index, frame })
        }
    };
    let bounded_components = |bounds: &DisplacementBounds| {
        for (component, b) in bounds.iter().enumerate() {
            let ok = !b[0].is_nan()
                && !b[1].is_nan()
                && b[0] <= b[1]
                && (b[0] < b[1] || b[0].is_finite());
            if !ok {
                return Err(ConstraintError::BadBounds { index, component });
            }
        }
        let components: Vec<usize> = (0..6)
            .filter(|&c| bounds[c][0].is_finite() || bounds[c][1].is_finite())
            .collect();
        if components.is_empty() {
            return Err(ConstraintError::Unbounded { index });
        }
        Ok(components)
    };

    let (components, rows) = match &kind {
        ConstraintKind::Tsr(spec) => {
            check_frame(spec.frame)?;
            let components = bounded_components(&spec.bounds)?;
            let rows = components.len();
            (components, rows)
        }
        ConstraintKind::RelativePose(spec) => {
            check_frame(spec.frame_a)?;
            check_frame(spec.frame_b)?;
            let components = bounded_components(&spec.bounds)?;
            let rows = components.len();
            (components, rows)
        }
        ConstraintKind::ClosedLink(spec) => {
            check_frame(spec.frame_a)?;
            check_frame(spec.frame_b)?;
            let finite = spec.length.is_finite()
                && spec.local_a.iter().all(|v| v.is_finite())
                && spec.local_b.iter().all(|v| v.is_finite());
            if !finite || spec.length < 0.0 {
                return Err(ConstraintError::BadLength { index });
            }
            (Vec::new(), 1)
        }
        ConstraintKind::SupportPolygon(spec) => {
            validate_polygon(&spec.vertices)
                .map_err(|_| ConstraintError::BadPolygon { index })?;
            (Vec::new(), 2)
        }
        ConstraintKind::Linear(spec) => {
            let ok = spec.coeffs.len() == model.dof()
                && spec.offset.is_finite()
                && spec.coeffs.iter().all(|v| v.is_finite())
                && spec.coeffs.iter().any(|v| *v != 0.0);
            if !ok {
                return Err(ConstraintError::BadLinear { index });
            }
            (Vec::new(), 1)
        }
    };
    Ok(Constraint {
        kind,
        tolerance: None,
        components,
        rows,
    })
}

/// Degenerate geometry floor: directions shorter than this get a zero
/// Jacobian row instead of an exploding unit vector.
pub(crate) const DEGENERATE_LENGTH: f64 = 1e-12;

const POLYGON_EPS: f64 = 1e-9;

fn validate_polygon(vertices: &[[f64; 2]]) -> Result<(), ()> {
    if vertices.len() < 3 || vertices.iter().flatten().any(|v| !v.is_finite()) {
        return Err(());
    }
    let n = vertices.len();
    let mut doubled_area = 0.0;
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let c = vertices[(i + 2) % n];
        let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
        if cross < -POLYGON_EPS {
            return Err(());
        }
        doubled_area += a[0] * b[1] - b[0] * a[1];
    }
    if doubled_area <= POLYGON_EPS {
        return Err(());
    }
    Ok(())
}

/// Nearest feature of a convex counter-clockwise polygon.
#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) enum PolygonRegion {
    Inside,
    /// Nearest point lies strictly inside edge `index`; `dir` is the unit
    /// edge direction.
    Edge { index: usize, dir: [f64; 2] },
    Vertex { index: usize },
}

/// Nearest point of the polygon to `p` and the feature realizing it.
/// Exact distance ties keep the lowest edge index.
pub(crate) fn nearest_point_in_polygon(
    p: [f64; 2],
    vertices: &[[f64; 2]],
) -> ([f64; 2], PolygonRegion) {
    let n = vertices.len();
    let inside = (0..n).all(|i| {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= 0.0
    });
    if inside {
        return (p, PolygonRegion::Inside);
    }
    let mut best = (f64::INFINITY, 0, 0.0);
    for i in 0..n {
        let a = vertices[i];
        let b = vertices[(i + 1) % n];
        let e = [b[0] - a[0], b[1] - a[1]];
        let len_sq = e[0] * e[0] + e[1] * e[1];
        let t = if len_sq > 0.0 {
            (((p[0] - a[0]) * e[0] + (p[1] - a[1]) * e[1]) / len_sq).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let c = [a[0] + t * e[0], a[1] + t * e[1]];
        let d_sq = (p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2);
        if d_sq < best.0 {
            best = (d_sq, i, t);
        }
    }
    let (_, i, t) = best;
    let a = vertices[i];
    let b = vertices[(i + 1) % n];
    let c = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
    let region = if t <= 0.0 {
        PolygonRegion::Vertex { index: i }
    } else if t >= 1.0 {
        PolygonRegion::Vertex { index: (i + 1) % n }
    } else {
        let len = ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
        PolygonRegion::Edge {
            index: i,
            dir: [(b[0] - a[0]) / len, (b[1] - a[1]) / len],
        }
    };
    (c, region)
}

/// Signed overshoot of `v` past the interval `b`; zero inside.
pub(crate) fn clamp_to_bounds(v: f64, b: [f64; 2]) -> f64 {
    (v - b[1]).max(0.0) + (v - b[0]).min(0.0)
}

/// Whether the residual row for `v` carries a derivative: on or past
/// either endpoint. Strictly interior points have a flat residual.
pub(crate) fn bound_active(v: f64, b: [f64; 2]) -> bool {
    v <= b[0] || v >= b[1]
}

fn displacement_of(t: &RigidTransform) -> [f64; 6] {
    let w = log_so3(&t.rotation);
    [
        t.translation.x,
        t.translation.y,
        t.translation.z,
        w.x,
        w.y,
        w.z,
    ]
}

/// Raw six component displacement of a frame pose measured in the task
/// frame, before any bounds are applied.
pub(crate) fn tsr_displacement(spec: &TsrSpec, pose: &RigidTransform) -> [f64; 6] {
    let err = spec
        .t0_w
        .inverse()
        .compose(pose)
        .compose(&spec.tw_e.inverse());
    displacement_of(&err)
}

/// Bounded displacement of a frame pose: the residual each component
/// would contribute, with unbounded and satisfied components at zero.
pub fn tsr_residual(spec: &TsrSpec, pose: &RigidTransform) -> [f64; 6] {
    let raw = tsr_displacement(spec, pose);
    let mut out = [0.0; 6];
    for c in 0..6 {
        out[c] = clamp_to_bounds(raw[c], spec.bounds[c]);
    }
    out
}

/// Raw displacement of frame `b`'s pose relative to `a`, measured
/// against the reference pose.
pub(crate) fn relative_displacement(
    spec: &RelativePoseSpec,
    pose_a: &RigidTransform,
    pose_b: &RigidTransform,
) -> [f64; 6] {
    let rel = pose_a.inverse().compose(pose_b);
    displacement_of(&spec.t_ref.inverse().compose(&rel))
}

/// Appends one constraint's residual rows, scalar path.
fn push_rows_scalar(
    model: &KinematicModel,
    constraint: &Constraint,
    poses: &[RigidTransform],
    q: &[f64],
    out: &mut Vec<f64>,
) {
    match constraint.kind() {
        ConstraintKind::Tsr(spec) => {
            let pose = model.frame_pose(poses, spec.frame);
            let raw = tsr_displacement(spec, &pose);
            for &comp in constraint.components() {
                out.push(clamp_to_bounds(raw[comp], spec.bounds[comp]));
            }
        }
        ConstraintKind::RelativePose(spec) => {
            let pose_a = model.frame_pose(poses, spec.frame_a);
            let pose_b = model.frame_pose(poses, spec.frame_b);
            let raw = relative_displacement(spec, &pose_a, &pose_b);
            for &comp in constraint.components() {
                out.push(clamp_to_bounds(raw[comp], spec.bounds[comp]));
            }
        }
        ConstraintKind::ClosedLink(spec) => {
            let pa = model.frame_pose(poses, spec.frame_a).apply(&spec.local_a);
            let pb = model.frame_pose(poses, spec.frame_b).apply(&spec.local_b);
            out.push((pa - pb).norm() - spec.length);
        }
        ConstraintKind::SupportPolygon(spec) => {
            let com = model.center_of_mass_from(poses);
            let p = [com.x, com.y];
            let (nearest, _) = nearest_point_in_polygon(p, &spec.vertices);
            out.push(p[0] - nearest[0]);
            out.push(p[1] - nearest[1]);
        }
        ConstraintKind::Linear(spec) => {
            let mut acc = -spec.offset;
            for (c, v) in spec.coeffs.iter().zip(q) {
                acc += c * v;
            }
            out.push(acc);
        }
    }
}

#[derive(Deserialize)]
struct BoundsJson([[Option<f64>; 2]; 6]);

impl BoundsJson {
    fn build(&self) -> DisplacementBounds {
        let mut out = [[f64::NEG_INFINITY, f64::INFINITY]; 6];
        for c in 0..6 {
            if let Some(lo) = self.0[c][0] {
                out[c][0] = lo;
            }
            if let Some(hi) = self.0[c][1] {
                out[c][1] = hi;
            }
        }
        out
    }
}

#[derive(Deserialize)]
struct AttachmentJson {
    frame: String,
    local: [f64; 3],
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ConstraintJson {
    Tsr {
        frame: String,
        t0_w: TransformJson,
        tw_e: TransformJson,
        bounds: BoundsJson,
        tolerance: Option<f64>,
    },
    RelativePose {
        frame_a: String,
        frame_b: String,
        t_ref: TransformJson,
        bounds: BoundsJson,
        tolerance: Option<f64>,
    },
    ClosedLink {
        point_a: AttachmentJson,
        point_b: AttachmentJson,
        length: f64,
        tolerance: Option<f64>,
    },
    ComPolygon {
        vertices: Vec<[f64; 2]>,
        tolerance: Option<f64>,
    },
    Linear {
        coeffs: Vec<f64>,
        offset: f64,
        tolerance: Option<f64>,
    },
}

impl ConstraintJson {
    fn resolve(
        self,
        model: &KinematicModel,
        index: usize,
    ) -> Result<(ConstraintKind, Option<f64>), ConstraintError> {
        let frame = |name: String| {
            model
                .frame_index(&name)
                .ok_or(ConstraintError::UnknownFrame { index, name })
        };
        Ok(match self {
            ConstraintJson::Tsr {
                frame: name,
                t0_w,
                tw_e,
                bounds,
                tolerance,
            } => (
                ConstraintKind::Tsr(TsrSpec {
                    frame: frame(name)?,
                    t0_w: t0_w.build(),
                    tw_e: tw_e.build(),
                    bounds: bounds.build(),
                }),
                tolerance,
            ),
            ConstraintJson::RelativePose {
                frame_a,
                frame_b,
                t_ref,
                bounds,
                tolerance,
            } => (
                ConstraintKind::RelativePose(RelativePoseSpec {
                    frame_a: frame(frame_a)?,
                    frame_b: frame(frame_b)?,
                    t_ref: t_ref.build(),
                    bounds: bounds.build(),
                }),
                tolerance,
            ),
            ConstraintJson::ClosedLink {
                point_a,
                point_b,
                length,
                tolerance,
            } => (
                ConstraintKind::ClosedLink(ClosedLinkSpec {
                    frame_a: frame(point_a.frame)?,
                    local_a: Vector3::from(point_a.local),
                    frame_b: frame(point_b.frame)?,
                    local_b: Vector3::from(point_b.local),
                    length,
                }),
                tolerance,
            ),
            ConstraintJson::ComPolygon {
                vertices,
                tolerance,
            } => (
                ConstraintKind::SupportPolygon(SupportPolygonSpec { vertices }),
                tolerance,
            ),
            ConstraintJson::Linear {
                coeffs,
                offset,
                tolerance,
            } => (
                ConstraintKind::Linear(LinearSpec { coeffs, offset }),
                tolerance,
            ),
        })
    }
}
