//! Batch validity checking of configuration blocks: joint limits, robot
//! collision spheres against environment primitives, and self-collision
//! sphere pairs.
//!
//! Validity is discrete: each configuration is checked as-is, and path
//! resolution is the caller's job. Every lane of a block is checked with
//! lane-independent arithmetic, so permuting lanes permutes the verdicts
//! and a one-lane block reproduces any wide lane exactly. The scalar
//! functions are an independently written reference path, not a wrapper
//! around the batch code.

use crate::batch::{ConfigBlock, LaneMask};
use crate::geom::RigidTransform;
use crate::kinematics::{FkScratch, KinematicModel};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One environment obstacle, all dimensions in meters.
#[derive(Clone, Debug)]
pub enum Obstacle {
    Sphere {
        center: Vector3<f64>,
        radius: f64,
    },
    /// Axis-aligned box given by two opposite corners.
    Aabb {
        min: Vector3<f64>,
        max: Vector3<f64>,
    },
    /// Box with its own pose; `half_extents` measure from the box center.
    Obb {
        pose: RigidTransform,
        half_extents: Vector3<f64>,
    },
}

/// Immutable obstacle set for one planning query.
#[derive(Clone, Debug, Default)]
pub struct Scene {
    obstacles: Vec<Obstacle>,
}

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("obstacle {0}: sphere radius must be positive")]
    BadRadius(usize),
    #[error("obstacle {0}: box extents must be positive")]
    BadExtents(usize),
    #[error("invalid scene JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum ObstacleJson {
    Sphere {
        center: [f64; 3],
        radius: f64,
    },
    Aabb {
        min: [f64; 3],
        max: [f64; 3],
    },
    Obb {
        xyz: [f64; 3],
        rpy: [f64; 3],
        half_extents: [f64; 3],
    },
}

#[derive(Serialize, Deserialize)]
struct SceneJson {
    obstacles: Vec<ObstacleJson>,
}

impl Scene {
    pub fn new(obstacles: Vec<Obstacle>) -> Result<Self, SceneError> {
        for (i, o) in obstacles.iter().enumerate() {
            match o {
                Obstacle::Sphere { radius, .. } => {
                    if !(*radius > 0.0) {
                        return Err(SceneError::BadRadius(i));
                    }
                }
                Obstacle::Aabb { min, max } => {
                    if !(max.x > min.x && max.y > min.y && max.z > min.z) {
                        return Err(SceneError::BadExtents(i));
                    }
                }
                Obstacle::Obb { half_extents, .. } => {
                    if !(half_extents.x > 0.0 && half_extents.y > 0.0 && half_extents.z > 0.0) {
                        return Err(SceneError::BadExtents(i));
                    }
                }
            }
        }
        Ok(Scene { obstacles })
    }

    pub fn empty() -> Self {
        Scene::default()
    }

    pub fn obstacles(&self) -> &[Obstacle] {
        &self.obstacles
    }

    pub fn from_json_str(text: &str) -> Result<Self, SceneError> {
        let raw: SceneJson = serde_json::from_str(text)?;
        let obstacles = raw
            .obstacles
            .into_iter()
            .map(|o| match o {
                ObstacleJson::Sphere { center, radius } => Obstacle::Sphere {
                    center: Vector3::from(center),
                    radius,
                },
                ObstacleJson::Aabb { min, max } => Obstacle::Aabb {
                    min: Vector3::from(min),
                    max: Vector3::from(max),
                },
                ObstacleJson::Obb {
                    xyz,
                    rpy,
                    half_extents,
                } => Obstacle::Obb {
                    pose: RigidTransform::from_xyz_rpy(xyz, rpy),
                    half_extents: Vector3::from(half_extents),
                },
            })
            .collect();
        Scene::new(obstacles)
    }

    pub fn to_json_string(&self) -> String {
        let raw = SceneJson {
            obstacles: self
                .obstacles
                .iter()
                .map(|o| match o {
                    Obstacle::Sphere { center, radius } => ObstacleJson::Sphere {
                        center: [center.x, center.y, center.z],
                        radius: *radius,
                    },
                    Obstacle::Aabb { min, max } => ObstacleJson::Aabb {
                        min: [min.x, min.y, min.z],
                        max: [max.x, max.y, max.z],
                    },
                    Obstacle::Obb { pose, half_extents } => {
                        let t = pose.translation;
                        let rpy = pose.rotation.to_rpy();
                        ObstacleJson::Obb {
                            xyz: [t.x, t.y, t.z],
                            rpy,
                            half_extents: [half_extents.x, half_extents.y, half_extents.z],
                        }
                    }
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("scene serialization cannot fail")
    }
}

/// Distance between two sphere surfaces; negative when they overlap.
/// The radii are summed before subtracting, so swapping the arguments
/// gives the identical value bit for bit.
pub fn sphere_clearance(
    c1: &Vector3<f64>,
    r1: f64,
    c2: &Vector3<f64>,
    r2: f64,
) -> f64 {
    (c1 - c2).norm() - (r1 + r2)
}

/// Signed distance from a point to a box centered at the origin:
/// Euclidean outside, minus the face depth inside.
fn point_box_signed(p: &Vector3<f64>, half: &Vector3<f64>) -> f64 {
    let qx = p.x.abs() - half.x;
    let qy = p.y.abs() - half.y;
    let qz = p.z.abs() - half.z;
    let outside =
        (qx.max(0.0).powi(2) + qy.max(0.0).powi(2) + qz.max(0.0).powi(2)).sqrt();
    let inside = qx.max(qy).max(qz).min(0.0);
    outside + inside
}

/// Distance from a sphere surface to a box; negative when penetrating.
/// Oriented boxes are handled by moving the center into the box frame.
pub fn sphere_box_clearance(c: &Vector3<f64>, r: f64, obstacle: &Obstacle) -> f64 {
    match obstacle {
        Obstacle::Sphere { .. } => unreachable!("not a box"),
        Obstacle::Aabb { min, max } => {
            let half = (max - min) * 0.5;
            let p = c - (min + max) * 0.5;
            point_box_signed(&p, &half) - r
        }
        Obstacle::Obb { pose, half_extents } => {
            let p = pose.inverse().apply(c);
            point_box_signed(&p, half_extents) - r
        }
    }
}

/// Clearance of a sphere against any obstacle kind.
pub fn obstacle_clearance(c: &Vector3<f64>, r: f64, obstacle: &Obstacle) -> f64 {
    match obstacle {
        Obstacle::Sphere { center, radius } => sphere_clearance(c, r, center, *radius),
        _ => sphere_box_clearance(c, r, obstacle),
    }
}

/// Lanes whose configuration is inside every joint limit and whose
/// robot spheres clear every obstacle and every self-collision pair.
/// One batched kinematics pass covers all lanes.
pub fn config_valid<const N: usize>(
    model: &KinematicModel,
    scene: &Scene,
    q: &ConfigBlock<N>,
    fk: &mut FkScratch<N>,
) -> LaneMask<N> {
    let mut ok = [true; N];
    for j in 0..model.dof() {
        limit_rows(&mut ok, q.row(j), model.lower_limits()[j], model.upper_limits()[j]);
    }
    if !ok.iter().any(|&v| v) {
        return LaneMask(ok);
    }

    model.batch_forward_kinematics(q, &mut fk.link_poses);
    for (index, link) in model.links().iter().enumerate() {
        for sphere in &link.spheres {
            let p = fk.link_poses[index].apply_const(&sphere.center);
            for obstacle in scene.obstacles() {
                match obstacle {
                    Obstacle::Sphere { center, radius } => {
                        sphere_obstacle_rows(&mut ok, &p, center, sphere.radius + radius);
                    }
                    Obstacle::Aabb { min, max } => {
                        let half = (max - min) * 0.5;
                        let mid = (min + max) * 0.5;
                        box_obstacle_rows(&mut ok, &p, &mid, None, &half, sphere.radius);
                    }
                    Obstacle::Obb { pose, half_extents } => {
                        let inv = pose.inverse();
                        box_obstacle_rows(
                            &mut ok,
                            &p,
                            &inv.translation,
                            Some(inv.rotation.matrix()),
                            half_extents,
                            sphere.radius,
                        );
                    }
                }
            }
            if !ok.iter().any(|&v| v) {
                return LaneMask(ok);
            }
        }
    }

    for &(a, b) in model.self_collision_pairs() {
        for sa in &model.links()[a].spheres {
            let pa = fk.link_poses[a].apply_const(&sa.center);
            for sb in &model.links()[b].spheres {
                let pb = fk.link_poses[b].apply_const(&sb.center);
                pair_rows(&mut ok, &pa, &pb, sa.radius + sb.radius);
            }
        }
        if !ok.iter().any(|&v| v) {
            return LaneMask(ok);
        }
    }
    LaneMask(ok)
}

/// Scalar reference check, written against the scalar kinematics: same
/// verdict as one lane of [`config_valid`].
pub fn config_valid_scalar(model: &KinematicModel, scene: &Scene, q: &[f64]) -> bool {
    for j in 0..model.dof() {
        if q[j] < model.lower_limits()[j] || q[j] > model.upper_limits()[j] {
            return false;
        }
    }
    let poses = model.forward_kinematics(q);
    min_clearance_of_poses(model, scene, &poses) >= 0.0
}

/// Smallest clearance over every obstacle and self-collision pair at
/// `q`, ignoring joint limits; +∞ when there is nothing to hit.
pub fn min_clearance(model: &KinematicModel, scene: &Scene, q: &[f64]) -> f64 {
    let poses = model.forward_kinematics(q);
    min_clearance_of_poses(model, scene, &poses)
}

fn min_clearance_of_poses(
    model: &KinematicModel,
    scene: &Scene,
    poses: &[RigidTransform],
) -> f64 {
    let mut min = f64::INFINITY;
    for (index, link) in model.links().iter().enumerate() {
        for sphere in &link.spheres {
            let p = poses[index].apply(&sphere.center);
            for obstacle in scene.obstacles() {
                min = min.min(obstacle_clearance(&p, sphere.radius, obstacle));
            }
        }
    }
    for &(a, b) in model.self_collision_pairs() {
        for sa in &model.links()[a].spheres {
            let pa = poses[a].apply(&sa.center);
            for sb in &model.links()[b].spheres {
                let pb = poses[b].apply(&sb.center);
                min = min.min(sphere_clearance(&pa, sa.radius, &pb, sb.radius));
            }
        }
    }
    min
}

/// Clears lanes whose joint value leaves `[lo, hi]`.
#[inline(never)]
fn limit_rows<const N: usize>(ok: &mut [bool; N], row: &[f64; N], lo: f64, hi: f64) {
    for lane in 0..N {
        ok[lane] = ok[lane] && row[lane] >= lo && row[lane] <= hi;
    }
}

/// Clears lanes where a robot sphere at `p` comes within `total_r` of
/// `center`.
#[inline(never)]
fn sphere_obstacle_rows<const N: usize>(
    ok: &mut [bool; N],
    p: &[[f64; N]; 3],
    center: &Vector3<f64>,
    total_r: f64,
) {
    for lane in 0..N {
        let dx = p[0][lane] - center.x;
        let dy = p[1][lane] - center.y;
        let dz = p[2][lane] - center.z;
        let dist = (dx * dx + dy * dy + dz * dz).sqrt();
        ok[lane] = ok[lane] && dist - total_r >= 0.0;
    }
}

/// Clears lanes where a robot sphere at `p` penetrates a box. `rot` is
/// the world-to-box rotation for oriented boxes (`trans` then applies
/// in that order as the full inverse pose); `None` means axis aligned
/// with `trans` the box center, negated inside.
#[inline(never)]
fn box_obstacle_rows<const N: usize>(
    ok: &mut [bool; N],
    p: &[[f64; N]; 3],
    trans: &Vector3<f64>,
    rot: Option<&nalgebra::Matrix3<f64>>,
    half: &Vector3<f64>,
    r: f64,
) {
    for lane in 0..N {
        let (lx, ly, lz) = match rot {
            Some(m) => {
                let x = p[0][lane];
                let y = p[1][lane];
                let z = p[2][lane];
                (
                    m[(0, 0)] * x + m[(0, 1)] * y + m[(0, 2)] * z + trans.x,
                    m[(1, 0)] * x + m[(1, 1)] * y + m[(1, 2)] * z + trans.y,
                    m[(2, 0)] * x + m[(2, 1)] * y + m[(2, 2)] * z + trans.z,
                )
            }
            None => (
                p[0][lane] - trans.x,
                p[1][lane] - trans.y,
                p[2][lane] - trans.z,
            ),
        };
        let qx = lx.abs() - half.x;
        let qy = ly.abs() - half.y;
        let qz = lz.abs() - half.z;
        let outside =
            (qx.max(0.0).powi(2) + qy.max(0.0).powi(2) + qz.max(0.0).powi(2)).sqrt();
        let inside = qx.max(qy).max(qz).min(0.0);
        ok[lane] = ok[lane] && outside + inside - r >= 0.0;
    }
}

/// Clears lanes where two robot spheres come within `total_r`.
#[inline(never)]
fn pair_rows<const N: usize>(
    ok: &mut [bool; N],
    pa: &[[f64; N]; 3],
    pb: &[[f64; N]; 3],
    total_r: f64,
) {
    for lane in 0..N {
        let dx = pa[0][lane] - pb[0][lane];
        let dy = pa[1][lane] - pb[1][lane];
        let dz = pa[2][lane] - pb[2][lane];
        let dist = (dx * dx + dy * dy + dz * dz).sqrt();
        ok[lane] = ok[lane] && dist - total_r >= 0.0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::batch::ConfigBlock;
    use crate::geom::Rotation;
    use crate::kinematics::test_models;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn arm() -> KinematicModel {
        KinematicModel::from_json_str(test_models::arm7()).unwrap()
    }

    fn in_limit_config(model: &KinematicModel, rng: &mut ChaCha8Rng) -> Vec<f64> {
        (0..model.dof())
            .map(|j| {
                let lo = model.lower_limits()[j];
                let hi = model.upper_limits()[j];
                let mid = 0.5 * (lo + hi);
                let span = 0.45 * (hi - lo);
                rng.gen_range(mid - span..mid + span)
            })
            .collect()
    }

    fn random_scene(rng: &mut ChaCha8Rng) -> Scene {
        let mut obstacles = Vec::new();
        for _ in 0..3 {
            match rng.gen_range(0..3) {
                0 => obstacles.push(Obstacle::Sphere {
                    center: Vector3::new(
                        rng.gen_range(-1.5..1.5),
                        rng.gen_range(-1.5..1.5),
                        rng.gen_range(-1.5..1.5),
                    ),
                    radius: rng.gen_range(0.1..0.4),
                }),
                1 => {
                    let mid = Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    );
                    let half = Vector3::new(
                        rng.gen_range(0.1..0.4),
                        rng.gen_range(0.1..0.4),
                        rng.gen_range(0.1..0.4),
                    );
                    obstacles.push(Obstacle::Aabb {
                        min: mid - half,
                        max: mid + half,
                    });
                }
                _ => obstacles.push(Obstacle::Obb {
                    pose: RigidTransform::new(
                        Rotation::from_rpy(
                            rng.gen_range(-1.0..1.0),
                            rng.gen_range(-1.0..1.0),
                            rng.gen_range(-1.0..1.0),
                        ),
                        Vector3::new(
                            rng.gen_range(-1.0..1.0),
                            rng.gen_range(-1.0..1.0),
                            rng.gen_range(-1.0..1.0),
                        ),
                    ),
                    half_extents: Vector3::new(
                        rng.gen_range(0.1..0.4),
                        rng.gen_range(0.1..0.4),
                        rng.gen_range(0.1..0.4),
                    ),
                }),
            }
        }
        Scene::new(obstacles).unwrap()
    }

    #[test]
    fn empty_scene_accepts_in_limit_configurations() {
        let model = arm();
        let scene = Scene::empty();
        let q = ConfigBlock::<4>::zeros(model.dof());
        let mut fk = FkScratch::new();
        let mask = config_valid(&model, &scene, &q, &mut fk);
        assert!(mask.all_set());
        assert!(config_valid_scalar(&model, &scene, &vec![0.0; model.dof()]));
    }

    #[test]
    fn an_obstacle_on_a_link_sphere_invalidates() {
        let model = arm();
        let poses = model.forward_kinematics(&vec![0.0; model.dof()]);
        let sphere = &model.links()[3].spheres[0];
        let center = poses[3].apply(&sphere.center);
        let scene = Scene::new(vec![Obstacle::Sphere {
            center,
            radius: 0.05,
        }])
        .unwrap();
        let q = ConfigBlock::<4>::zeros(model.dof());
        let mut fk = FkScratch::new();
        let mask = config_valid(&model, &scene, &q, &mut fk);
        assert_eq!(mask.count(), 0);
        assert!(!config_valid_scalar(&model, &scene, &vec![0.0; model.dof()]));
    }

    #[test]
    fn limits_are_inclusive_at_the_boundary() {
        let model = arm();
        let scene = Scene::empty();
        let hi = model.upper_limits()[0];
        let mut fk = FkScratch::new();
        for (value, expect) in [
            (hi, true),
            (hi - 1e-6, true),
            (hi + 1e-6, false),
            (model.lower_limits()[0] - 1e-6, false),
        ] {
            let mut q = vec![0.0; model.dof()];
            q[0] = value;
            assert_eq!(config_valid_scalar(&model, &scene, &q), expect);
            let mut block = ConfigBlock::<4>::zeros(model.dof());
            for lane in 0..4 {
                block.set_lane(lane, &q);
            }
            let mask = config_valid(&model, &scene, &block, &mut fk);
            assert_eq!(mask.all_set(), expect);
            assert_eq!(mask.any(), expect);
        }
    }

    #[test]
    fn box_clearances_match_hand_values() {
        let unit_cube = Obstacle::Aabb {
            min: Vector3::new(-1.0, -1.0, -1.0),
            max: Vector3::new(1.0, 1.0, 1.0),
        };
        // Surface gap along the x axis: 3 - 1 (half extent) - 1 (radius).
        assert_eq!(
            sphere_box_clearance(&Vector3::new(3.0, 0.0, 0.0), 1.0, &unit_cube),
            1.0
        );
        // Center 0.8 inside the nearest face, plus the radius.
        assert_eq!(
            sphere_box_clearance(&Vector3::new(0.2, 0.0, 0.0), 0.1, &unit_cube),
            -0.9
        );

        let identity_obb = Obstacle::Obb {
            pose: RigidTransform::identity(),
            half_extents: Vector3::new(1.0, 1.0, 1.0),
        };
        for c in [
            Vector3::new(3.0, 0.4, -0.2),
            Vector3::new(0.2, 0.0, 0.0),
            Vector3::new(-0.9, 2.0, 1.4),
        ] {
            assert_eq!(
                sphere_box_clearance(&c, 0.3, &identity_obb).to_bits(),
                sphere_box_clearance(&c, 0.3, &unit_cube).to_bits()
            );
        }

        // Cube spun 45° about z presents an edge to the x axis at √2.
        let spun = Obstacle::Obb {
            pose: RigidTransform::new(
                Rotation::from_rpy(0.0, 0.0, std::f64::consts::FRAC_PI_4),
                Vector3::zeros(),
            ),
            half_extents: Vector3::new(1.0, 1.0, 1.0),
        };
        let got = sphere_box_clearance(&Vector3::new(3.0, 0.0, 0.0), 1.0, &spun);
        assert!((got - (2.0 - std::f64::consts::SQRT_2)).abs() < 1e-12);
    }

    /// Independent sign oracle: a sphere and a box overlap exactly when
    /// some point of the box volume lies within the radius. Sampling
    /// cannot resolve near-touching pairs, so those are skipped.
    #[test]
    fn clearance_sign_matches_a_sampling_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let mut tested = 0;
        for trial in 0..200 {
            let half = Vector3::new(
                rng.gen_range(0.15..0.4),
                rng.gen_range(0.15..0.4),
                rng.gen_range(0.15..0.4),
            );
            let obstacle = if trial % 2 == 0 {
                let mid = Vector3::new(
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                    rng.gen_range(-0.5..0.5),
                );
                Obstacle::Aabb {
                    min: mid - half,
                    max: mid + half,
                }
            } else {
                Obstacle::Obb {
                    pose: RigidTransform::new(
                        Rotation::from_rpy(
                            rng.gen_range(-2.0..2.0),
                            rng.gen_range(-1.4..1.4),
                            rng.gen_range(-2.0..2.0),
                        ),
                        Vector3::new(
                            rng.gen_range(-0.5..0.5),
                            rng.gen_range(-0.5..0.5),
                            rng.gen_range(-0.5..0.5),
                        ),
                    ),
                    half_extents: half,
                }
            };
            let center = Vector3::new(
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.2..1.2),
                rng.gen_range(-1.2..1.2),
            );
            let radius = rng.gen_range(0.2..0.5);
            let clearance = sphere_box_clearance(&center, radius, &obstacle);
            if clearance.abs() < 0.05 {
                continue;
            }
            let mut hit = false;
            for _ in 0..100_000 {
                let local = Vector3::new(
                    rng.gen_range(-half.x..half.x),
                    rng.gen_range(-half.y..half.y),
                    rng.gen_range(-half.z..half.z),
                );
                let world = match &obstacle {
                    Obstacle::Aabb { min, max } => (min + max) * 0.5 + local,
                    Obstacle::Obb { pose, .. } => pose.apply(&local),
                    Obstacle::Sphere { .. } => unreachable!(),
                };
                if (world - center).norm() <= radius {
                    hit = true;
                    break;
                }
            }
            assert_eq!(
                hit,
                clearance < 0.0,
                "sign disagreement at clearance {clearance}"
            );
            tested += 1;
        }
        assert!(tested >= 100, "only {tested} pairs were conclusive");
    }

    #[test]
    fn sphere_clearance_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let a = Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let b = Vector3::new(
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
                rng.gen_range(-2.0..2.0),
            );
            let ra = rng.gen_range(0.05..0.5);
            let rb = rng.gen_range(0.05..0.5);
            assert_eq!(
                sphere_clearance(&a, ra, &b, rb).to_bits(),
                sphere_clearance(&b, rb, &a, ra).to_bits()
            );
        }
    }

    #[test]
    fn batch_verdicts_match_the_scalar_reference() {
        for robot in [test_models::arm7().to_string(), test_models::floating_pair().to_string()] {
            let model = KinematicModel::from_json_str(&robot).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut fk = FkScratch::new();
            for _ in 0..20 {
                let scene = random_scene(&mut rng);
                let mut block = ConfigBlock::<8>::zeros(model.dof());
                let mut configs = Vec::new();
                for lane in 0..8 {
                    // Sampling past the limits keeps the limit branch honest.
                    let q: Vec<f64> = (0..model.dof())
                        .map(|j| {
                            let lo = model.lower_limits()[j];
                            let hi = model.upper_limits()[j];
                            rng.gen_range(lo - 0.1 * (hi - lo)..hi + 0.1 * (hi - lo))
                        })
                        .collect();
                    block.set_lane(lane, &q);
                    configs.push(q);
                }
                let mask = config_valid(&model, &scene, &block, &mut fk);
                for lane in 0..8 {
                    assert_eq!(
                        mask.get(lane),
                        config_valid_scalar(&model, &scene, &configs[lane]),
                        "lane {lane}"
                    );
                }
            }
        }
    }

    #[test]
    fn shrinking_obstacles_never_invalidate() {
        let model = arm();
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut fk = FkScratch::new();
        for _ in 0..20 {
            let scene = random_scene(&mut rng);
            let shrunk = Scene::new(
                scene
                    .obstacles()
                    .iter()
                    .map(|o| match o {
                        Obstacle::Sphere { center, radius } => Obstacle::Sphere {
                            center: *center,
                            radius: 0.5 * radius,
                        },
                        Obstacle::Aabb { min, max } => {
                            let mid = (min + max) * 0.5;
                            let half = (max - min) * 0.25;
                            Obstacle::Aabb {
                                min: mid - half,
                                max: mid + half,
                            }
                        }
                        Obstacle::Obb { pose, half_extents } => Obstacle::Obb {
                            pose: *pose,
                            half_extents: 0.5 * half_extents,
                        },
                    })
                    .collect(),
            )
            .unwrap();
            let mut block = ConfigBlock::<8>::zeros(model.dof());
            for lane in 0..8 {
                block.set_lane(lane, &in_limit_config(&model, &mut rng));
            }
            let before = config_valid(&model, &scene, &block, &mut fk);
            let after = config_valid(&model, &shrunk, &block, &mut fk);
            for lane in 0..8 {
                assert!(!before.get(lane) || after.get(lane), "lane {lane} flipped");
            }
        }
    }

    #[test]
    fn self_collision_pairs_are_checked() {
        // Two-segment chain that folds back onto its base: l2 is not
        // adjacent to base, so the pair stays in the checked set.
        let model = KinematicModel::from_json_str(
            r#"{
                "name": "folder",
                "joints": [
                    {"name": "j1", "parent": "base", "child": "l1",
                     "kind": "revolute", "axis": [0,0,1],
                     "origin": {"xyz": [0.3,0,0], "rpy": [0,0,0]},
                     "limits": [-3.2,3.2]},
                    {"name": "j2", "parent": "l1", "child": "l2",
                     "kind": "revolute", "axis": [0,0,1],
                     "origin": {"xyz": [0.3,0,0], "rpy": [0,0,0]},
                     "limits": [-3.2,3.2]}
                ],
                "links": [
                    {"name": "base", "mass": 1.0, "com": [0,0,0],
                     "spheres": [{"center": [0,0,0], "radius": 0.1}]},
                    {"name": "l1", "mass": 1.0, "com": [0.15,0,0]},
                    {"name": "l2", "mass": 1.0, "com": [0.15,0,0],
                     "spheres": [{"center": [0,0,0], "radius": 0.1}]}
                ]
            }"#,
        )
        .unwrap();
        let scene = Scene::empty();
        let mut fk = FkScratch::new();

        // Straight out: the l2 sphere sits 0.6 from the base sphere.
        assert!(config_valid_scalar(&model, &scene, &[0.0, 0.0]));
        // Folded back: the l2 sphere lands on the base sphere.
        assert!(!config_valid_scalar(
            &model,
            &scene,
            &[std::f64::consts::PI, 0.0]
        ));

        let mut block = ConfigBlock::<4>::zeros(model.dof());
        block.set_lane(0, &[0.0, 0.0]);
        block.set_lane(1, &[std::f64::consts::PI, 0.0]);
        block.set_lane(2, &[0.5, 0.5]);
        block.set_lane(3, &[std::f64::consts::PI, 0.1]);
        let mask = config_valid(&model, &scene, &block, &mut fk);
        assert!(mask.get(0));
        assert!(!mask.get(1));
        assert!(mask.get(2));
        assert!(!mask.get(3));
    }

    #[test]
    fn lane_permutation_and_single_lane_replay_are_bitwise() {
        let model = arm();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let scene = random_scene(&mut rng);
        let configs: Vec<Vec<f64>> = (0..8).map(|_| in_limit_config(&model, &mut rng)).collect();

        let mut block = ConfigBlock::<8>::zeros(model.dof());
        for (lane, q) in configs.iter().enumerate() {
            block.set_lane(lane, q);
        }
        let mut fk8 = FkScratch::new();
        let mask = config_valid(&model, &scene, &block, &mut fk8);

        let perm = [5usize, 2, 7, 0, 3, 6, 1, 4];
        let mut permuted = ConfigBlock::<8>::zeros(model.dof());
        for (lane, &src) in perm.iter().enumerate() {
            permuted.set_lane(lane, &configs[src]);
        }
        let shuffled = config_valid(&model, &scene, &permuted, &mut fk8);
        for (lane, &src) in perm.iter().enumerate() {
            assert_eq!(shuffled.get(lane), mask.get(src));
        }

        let mut fk1 = FkScratch::new();
        for (lane, q) in configs.iter().enumerate() {
            let mut single = ConfigBlock::<1>::zeros(model.dof());
            single.set_lane(0, q);
            let alone = config_valid(&model, &scene, &single, &mut fk1);
            assert_eq!(alone.get(0), mask.get(lane), "lane {lane}");
        }
    }

    #[test]
    fn minimum_clearance_reports_the_worst_pair() {
        let chain = KinematicModel::from_json_str(&test_models::planar_chain(3)).unwrap();
        assert_eq!(
            min_clearance(&chain, &Scene::empty(), &[0.0; 3]),
            f64::INFINITY
        );

        let model = arm();
        let q = vec![0.0; model.dof()];
        let clear_empty = min_clearance(&model, &Scene::empty(), &q);
        assert!(clear_empty > 0.0);

        let poses = model.forward_kinematics(&q);
        let sphere = &model.links()[2].spheres[0];
        let scene = Scene::new(vec![Obstacle::Sphere {
            center: poses[2].apply(&sphere.center),
            radius: 0.3,
        }])
        .unwrap();
        let clear_hit = min_clearance(&model, &scene, &q);
        assert!(clear_hit <= -0.3);
        assert!(clear_hit <= clear_empty);
    }

    #[test]
    fn scene_json_round_trips() {
        let text = r#"{"obstacles": [
            {"type": "sphere", "center": [0.1, -0.2, 0.3], "radius": 0.25},
            {"type": "aabb", "min": [-1.0, -0.5, 0.0], "max": [1.0, 0.5, 2.0]},
            {"type": "obb", "xyz": [0.4, 0.0, 1.0], "rpy": [0.3, -0.2, 1.1],
             "half_extents": [0.2, 0.3, 0.4]}
        ]}"#;
        let scene = Scene::from_json_str(text).unwrap();
        let reparsed = Scene::from_json_str(&scene.to_json_string()).unwrap();
        assert_eq!(reparsed.obstacles().len(), 3);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (a, b) in scene.obstacles().iter().zip(reparsed.obstacles()) {
            for _ in 0..20 {
                let p = Vector3::new(
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                    rng.gen_range(-2.0..2.0),
                );
                let da = obstacle_clearance(&p, 0.1, a);
                let db = obstacle_clearance(&p, 0.1, b);
                assert!((da - db).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn malformed_scenes_are_rejected() {
        for text in [
            r#"{"obstacles": [{"type": "sphere", "center": [0,0,0], "radius": 0.0}]}"#,
            r#"{"obstacles": [{"type": "sphere", "center": [0,0,0], "radius": -1.0}]}"#,
            r#"{"obstacles": [{"type": "aabb", "min": [1,0,0], "max": [0,1,1]}]}"#,
            r#"{"obstacles": [{"type": "obb", "xyz": [0,0,0], "rpy": [0,0,0],
                "half_extents": [0.1, 0.0, 0.1]}]}"#,
            r#"{"obstacles": [{"type": "cylinder", "radius": 1.0}]}"#,
        ] {
            assert!(Scene::from_json_str(text).is_err());
        }
    }
}
