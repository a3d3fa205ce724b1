//! Plans a motion for a three-link planar arm whose tip must stay on
//! the vertical plane x = 1.5 while steering around a sphere.
//!
//! Run with `cargo run --release --example constrained_plan`.

use mcplan::collision::{Obstacle, Scene};
use mcplan::constraints::{ConstraintKind, ConstraintSet, TsrSpec};
use mcplan::geom::RigidTransform;
use mcplan::kinematics::KinematicModel;
use mcplan::planner::{path_length, plan, validate_path, PlannerParams};
use nalgebra::Vector3;
use std::f64::consts::FRAC_PI_3;
use std::time::Instant;

const MODEL: &str = r#"{
    "name": "planar3",
    "joints": [
        {"name": "j1", "parent": "base", "child": "l1", "kind": "revolute",
         "axis": [0, 0, 1], "origin": {"xyz": [0, 0, 0], "rpy": [0, 0, 0]},
         "limits": [-3.141592653589793, 3.141592653589793]},
        {"name": "j2", "parent": "l1", "child": "l2", "kind": "revolute",
         "axis": [0, 0, 1], "origin": {"xyz": [1, 0, 0], "rpy": [0, 0, 0]},
         "limits": [-3.141592653589793, 3.141592653589793]},
        {"name": "j3", "parent": "l2", "child": "l3", "kind": "revolute",
         "axis": [0, 0, 1], "origin": {"xyz": [1, 0, 0], "rpy": [0, 0, 0]},
         "limits": [-3.141592653589793, 3.141592653589793]}
    ],
    "links": [
        {"name": "base", "mass": 1.0, "com": [0, 0, 0]},
        {"name": "l1", "mass": 1.0, "com": [0.5, 0, 0],
         "spheres": [{"center": [0.25, 0, 0], "radius": 0.08},
                     {"center": [0.75, 0, 0], "radius": 0.08}]},
        {"name": "l2", "mass": 1.0, "com": [0.5, 0, 0],
         "spheres": [{"center": [0.25, 0, 0], "radius": 0.08},
                     {"center": [0.75, 0, 0], "radius": 0.08}]},
        {"name": "l3", "mass": 1.0, "com": [0.5, 0, 0],
         "spheres": [{"center": [0.25, 0, 0], "radius": 0.08},
                     {"center": [0.75, 0, 0], "radius": 0.08}]}
    ],
    "frames": [
        {"name": "tip", "link": "l3", "offset": {"xyz": [1, 0, 0], "rpy": [0, 0, 0]}}
    ]
}"#;

fn main() {
    let model = KinematicModel::from_json_str(MODEL).expect("model parses");
    let scene = Scene::new(vec![Obstacle::Sphere {
        center: Vector3::new(1.8, 0.5, 0.0),
        radius: 0.25,
    }])
    .expect("scene is well formed");

    let inf = f64::INFINITY;
    let set = ConstraintSet::new(
        &model,
        vec![ConstraintKind::Tsr(TsrSpec {
            frame: model.frame_index("tip").expect("tip frame exists"),
            t0_w: RigidTransform::identity(),
            tw_e: RigidTransform::identity(),
            bounds: [
                [1.5, 1.5],
                [-inf, inf],
                [-inf, inf],
                [-inf, inf],
                [-inf, inf],
                [-inf, inf],
            ],
        })],
    )
    .expect("constraint set builds");

    // With the first joint at zero and the last two opposed, the tip
    // lands at x = 2 + cos(q2); both endpoints put it exactly at 1.5.
    let q_start = [0.0, 2.0 * FRAC_PI_3, -2.0 * FRAC_PI_3];
    let q_goal = [0.0, -2.0 * FRAC_PI_3, 2.0 * FRAC_PI_3];

    let params = PlannerParams::default();
    let clock = Instant::now();
    let result = plan(&model, &scene, &set, &q_start, &q_goal, &params).expect("query is valid");
    let elapsed = clock.elapsed();

    println!("status:      {:?}", result.status);
    println!("wall time:   {elapsed:.2?}");
    println!("iterations:  {}", result.stats.iterations);
    println!(
        "extensions:  {} of {} attempts",
        result.stats.extensions_succeeded, result.stats.extensions_attempted
    );
    println!("waypoints:   {}", result.waypoints.len());
    println!("path length: {:.3}", path_length(&result.waypoints));

    let report = validate_path(
        &model,
        &scene,
        &set,
        &result.waypoints,
        params.resolution,
        10,
        2.0 * set.tolerance(),
    );
    println!(
        "validation:  {} (max residual {:.2e}, min clearance {:.3})",
        if report.pass { "pass" } else { "FAIL" },
        report.max_residual,
        report.min_clearance
    );
}
