//! Manifold-constrained sampling-based motion planning with lane-parallel
//! constraint projection.

pub mod batch;
pub mod collision;
pub mod constraints;
pub mod geom;
pub mod kinematics;
pub mod planner;
pub mod projection;
