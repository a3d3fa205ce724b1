//! Robot models: a rigid-body tree of links and joints with named task
//! frames, loaded from a declarative JSON description.
//!
//! The configuration vector holds the floating-base pose first (x, y, z,
//! roll, pitch, yaw) when the model declares one, followed by the movable
//! joints in declaration order. Fixed joints contribute geometry but no
//! configuration entry.
//!
//! A loaded model is immutable; forward kinematics and Jacobians are pure
//! functions of it, so any number of planning queries may share one model
//! across threads.

mod fk;
mod jacobian;

pub use fk::FkScratch;
pub use jacobian::JacobianCache;

use crate::geom::RigidTransform;
use nalgebra::Vector3;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid robot description: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("joint {joint}: unknown link {link}")]
    UnknownLink { joint: String, link: String },
    #[error("joint {0}: axis must be unit length")]
    BadAxis(String),
    #[error("joint {0}: lower limit exceeds upper limit")]
    BadLimits(String),
    #[error("link {0}: collision sphere radius must be positive")]
    BadSphere(String),
    #[error("link {0}: mass must be non-negative")]
    BadMass(String),
    #[error("total mass must be positive")]
    ZeroTotalMass,
    #[error("model must have exactly one root link, found {0}")]
    RootCount(usize),
    #[error("link {0} has multiple parent joints")]
    MultipleParents(String),
    #[error("joint graph contains a cycle")]
    Cycle,
    #[error("frame {frame}: unknown link {link}")]
    FrameLink { frame: String, link: String },
    #[error("duplicate name: {0}")]
    DuplicateName(String),
    #[error("floating base limits require exactly 6 [lo, hi] pairs")]
    BadBaseLimits,
    #[error("self-collision override names unknown link {0}")]
    UnknownSelfCollisionLink(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum JointKind {
    Revolute,
    Prismatic,
    Fixed,
}

#[derive(Clone, Debug)]
pub struct Joint {
    pub name: String,
    pub parent_link: usize,
    pub child_link: usize,
    pub kind: JointKind,
    pub axis: Vector3<f64>,
    pub origin: RigidTransform,
    pub limits: [f64; 2],
    /// Index into the configuration vector; `None` for fixed joints.
    pub dof: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct CollisionSphere {
    pub center: Vector3<f64>,
    pub radius: f64,
}

#[derive(Clone, Debug)]
pub struct Link {
    pub name: String,
    pub mass: f64,
    pub com: Vector3<f64>,
    pub spheres: Vec<CollisionSphere>,
    /// Joint whose child this link is; `None` only for the root.
    pub parent_joint: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct Frame {
    pub name: String,
    pub link: usize,
    pub offset: RigidTransform,
}

#[derive(Clone, Debug)]
pub struct KinematicModel {
    pub name: String,
    pub floating_base: bool,
    links: Vec<Link>,
    /// Topologically ordered: a joint's parent link always precedes it.
    joints: Vec<Joint>,
    frames: Vec<Frame>,
    dof: usize,
    root: usize,
    lower: Vec<f64>,
    upper: Vec<f64>,
    /// Bitmask per link of the configuration entries its world pose
    /// depends on. Supports models up to 64 degrees of freedom.
    ancestor_dofs: Vec<u64>,
    /// Link index pairs whose sphere sets are tested against each other.
    self_pairs: Vec<(usize, usize)>,
    total_mass: f64,
    /// Per-dof bound on workspace sphere-center speed, and its L2 norm:
    /// moving a distance s in configuration space moves every collision
    /// sphere center at most `displacement_bound · s` in the workspace.
    dof_displacement: Vec<f64>,
    displacement_bound: f64,
}

#[derive(Deserialize)]
pub(crate) struct TransformJson {
    xyz: [f64; 3],
    rpy: [f64; 3],
}

impl TransformJson {
    pub(crate) fn build(&self) -> RigidTransform {
        RigidTransform::from_xyz_rpy(self.xyz, self.rpy)
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum JointKindJson {
    Revolute,
    Prismatic,
    Fixed,
}

#[derive(Deserialize)]
struct JointJson {
    name: String,
    parent: String,
    child: String,
    kind: JointKindJson,
    axis: [f64; 3],
    origin: TransformJson,
    limits: [f64; 2],
}

#[derive(Deserialize)]
struct SphereJson {
    center: [f64; 3],
    radius: f64,
}

#[derive(Deserialize)]
struct LinkJson {
    name: String,
    mass: f64,
    com: [f64; 3],
    #[serde(default)]
    spheres: Vec<SphereJson>,
}

#[derive(Deserialize)]
struct FrameJson {
    name: String,
    link: String,
    offset: TransformJson,
}

#[derive(Deserialize)]
struct RobotJson {
    name: String,
    #[serde(default)]
    floating_base: bool,
    /// Required when `floating_base` is set: the ambient sampling box for
    /// the base pose, six [lo, hi] pairs in x, y, z, roll, pitch, yaw
    /// order.
    #[serde(default)]
    base_limits: Option<Vec<[f64; 2]>>,
    joints: Vec<JointJson>,
    links: Vec<LinkJson>,
    #[serde(default)]
    frames: Vec<FrameJson>,
    /// Extra link-name pairs to exempt from self-collision checking, on
    /// top of the automatic adjacent-link exemption.
    #[serde(default)]
    self_collision_exclude: Vec<[String; 2]>,
}

impl KinematicModel {
    pub fn from_json_str(text: &str) -> Result<Self, ModelError> {
        let raw: RobotJson = serde_json::from_str(text)?;
        Self::build(raw)
    }

    fn build(raw: RobotJson) -> Result<Self, ModelError> {
        let mut links = Vec::with_capacity(raw.links.len());
        let mut link_index = std::collections::HashMap::new();
        let mut total_mass = 0.0;
        for lj in &raw.links {
            if lj.mass < 0.0 {
                return Err(ModelError::BadMass(lj.name.clone()));
            }
            for s in &lj.spheres {
                if s.radius <= 0.0 {
                    return Err(ModelError::BadSphere(lj.name.clone()));
                }
            }
            if link_index
                .insert(lj.name.clone(), links.len())
                .is_some()
            {
                return Err(ModelError::DuplicateName(lj.name.clone()));
            }
            total_mass += lj.mass;
            links.push(Link {
                name: lj.name.clone(),
                mass: lj.mass,
                com: Vector3::from(lj.com),
                spheres: lj
                    .spheres
                    .iter()
                    .map(|s| CollisionSphere {
                        center: Vector3::from(s.center),
                        radius: s.radius,
                    })
                    .collect(),
                parent_joint: None,
            });
        }
        if total_mass <= 0.0 {
            return Err(ModelError::ZeroTotalMass);
        }

        let mut joints = Vec::with_capacity(raw.joints.len());
        let mut joint_names = std::collections::HashSet::new();
        for jj in &raw.joints {
            if !joint_names.insert(jj.name.clone()) {
                return Err(ModelError::DuplicateName(jj.name.clone()));
            }
            let kind = match jj.kind {
                JointKindJson::Revolute => JointKind::Revolute,
                JointKindJson::Prismatic => JointKind::Prismatic,
                JointKindJson::Fixed => JointKind::Fixed,
            };
            let axis = Vector3::from(jj.axis);
            if kind != JointKind::Fixed && (axis.norm() - 1.0).abs() > 1e-9 {
                return Err(ModelError::BadAxis(jj.name.clone()));
            }
            if jj.limits[0] > jj.limits[1] {
                return Err(ModelError::BadLimits(jj.name.clone()));
            }
            let lookup = |link: &String| {
                link_index
                    .get(link)
                    .copied()
                    .ok_or_else(|| ModelError::UnknownLink {
                        joint: jj.name.clone(),
                        link: link.clone(),
                    })
            };
            let parent_link = lookup(&jj.parent)?;
            let child_link = lookup(&jj.child)?;
            if links[child_link].parent_joint.is_some() {
                return Err(ModelError::MultipleParents(jj.child.clone()));
            }
            links[child_link].parent_joint = Some(joints.len());
            joints.push(Joint {
                name: jj.name.clone(),
                parent_link,
                child_link,
                kind,
                axis,
                origin: jj.origin.build(),
                limits: jj.limits,
                dof: None,
            });
        }

        let roots: Vec<usize> = (0..links.len())
            .filter(|&i| links[i].parent_joint.is_none())
            .collect();
        if roots.len() != 1 {
            return Err(ModelError::RootCount(roots.len()));
        }
        let root = roots[0];

        // Topological order by walking down from the root; a leftover
        // joint means its parent is unreachable, i.e. a cycle.
        let mut order = Vec::with_capacity(joints.len());
        let mut reached = vec![false; links.len()];
        reached[root] = true;
        let mut frontier = vec![root];
        while let Some(link) = frontier.pop() {
            for (ji, joint) in joints.iter().enumerate() {
                if joint.parent_link == link {
                    order.push(ji);
                    reached[joint.child_link] = true;
                    frontier.push(joint.child_link);
                }
            }
        }
        if order.len() != joints.len() {
            return Err(ModelError::Cycle);
        }
        let mut ordered: Vec<Joint> = order.iter().map(|&ji| joints[ji].clone()).collect();
        // Movable joints get configuration slots in declaration order,
        // after the six floating-base entries if present.
        let base_dofs = if raw.floating_base { 6 } else { 0 };
        let mut next_dof = base_dofs;
        let mut dof_of_declared: Vec<Option<usize>> = vec![None; joints.len()];
        for (ji, joint) in joints.iter().enumerate() {
            if joint.kind != JointKind::Fixed {
                dof_of_declared[ji] = Some(next_dof);
                next_dof += 1;
            }
        }
        for (slot, &ji) in ordered.iter_mut().zip(order.iter()) {
            slot.dof = dof_of_declared[ji];
        }
        let joints = ordered;
        let dof = next_dof;
        // Re-point each link's parent joint at the topological ordering.
        let mut links = links;
        for link in &mut links {
            link.parent_joint = None;
        }
        for (ji, joint) in joints.iter().enumerate() {
            links[joint.child_link].parent_joint = Some(ji);
        }

        let mut lower = vec![f64::NEG_INFINITY; dof];
        let mut upper = vec![f64::INFINITY; dof];
        if raw.floating_base {
            let base = raw
                .base_limits
                .as_ref()
                .ok_or(ModelError::BadBaseLimits)?;
            if base.len() != 6 {
                return Err(ModelError::BadBaseLimits);
            }
            for (i, pair) in base.iter().enumerate() {
                if pair[0] > pair[1] {
                    return Err(ModelError::BadBaseLimits);
                }
                lower[i] = pair[0];
                upper[i] = pair[1];
            }
        }
        for joint in &joints {
            if let Some(slot) = joint.dof {
                lower[slot] = joint.limits[0];
                upper[slot] = joint.limits[1];
            }
        }

        let mut frames = Vec::with_capacity(raw.frames.len());
        let mut frame_names = std::collections::HashSet::new();
        for fj in &raw.frames {
            if !frame_names.insert(fj.name.clone()) {
                return Err(ModelError::DuplicateName(fj.name.clone()));
            }
            let link =
                link_index
                    .get(&fj.link)
                    .copied()
                    .ok_or_else(|| ModelError::FrameLink {
                        frame: fj.name.clone(),
                        link: fj.link.clone(),
                    })?;
            frames.push(Frame {
                name: fj.name.clone(),
                link,
                offset: fj.offset.build(),
            });
        }

        assert!(dof <= 64, "configuration dimension above 64 is unsupported");
        let mut ancestor_dofs = vec![0u64; links.len()];
        if raw.floating_base {
            for mask in &mut ancestor_dofs {
                *mask = 0b111111;
            }
        }
        // Joints are topologically ordered, so one pass suffices.
        for joint in &joints {
            let mut mask = ancestor_dofs[joint.parent_link];
            if let Some(slot) = joint.dof {
                mask |= 1 << slot;
            }
            ancestor_dofs[joint.child_link] |= mask;
        }

        let mut excluded = std::collections::HashSet::new();
        for pair in &raw.self_collision_exclude {
            let a = *link_index
                .get(&pair[0])
                .ok_or_else(|| ModelError::UnknownSelfCollisionLink(pair[0].clone()))?;
            let b = *link_index
                .get(&pair[1])
                .ok_or_else(|| ModelError::UnknownSelfCollisionLink(pair[1].clone()))?;
            excluded.insert((a.min(b), a.max(b)));
        }
        for joint in &joints {
            let (a, b) = (joint.parent_link, joint.child_link);
            excluded.insert((a.min(b), a.max(b)));
        }
        let mut self_pairs = Vec::new();
        for a in 0..links.len() {
            if links[a].spheres.is_empty() {
                continue;
            }
            for b in (a + 1)..links.len() {
                if links[b].spheres.is_empty() || excluded.contains(&(a, b)) {
                    continue;
                }
                self_pairs.push((a, b));
            }
        }

        let mut model = KinematicModel {
            name: raw.name,
            floating_base: raw.floating_base,
            links,
            joints,
            frames,
            dof,
            root,
            lower,
            upper,
            ancestor_dofs,
            self_pairs,
            total_mass,
            dof_displacement: Vec::new(),
            displacement_bound: 0.0,
        };
        model.compute_displacement_bound();
        Ok(model)
    }

    /// Conservative subtree radius: an upper bound on the distance from
    /// `link`'s frame origin to any collision-sphere center at or below
    /// it, over all joint values within limits.
    fn subtree_radius(&self, link: usize) -> f64 {
        let mut radius: f64 = 0.0;
        for s in &self.links[link].spheres {
            radius = radius.max(s.center.norm());
        }
        for joint in &self.joints {
            if joint.parent_link != link {
                continue;
            }
            let travel = match joint.kind {
                JointKind::Prismatic => joint.limits[0].abs().max(joint.limits[1].abs()),
                _ => 0.0,
            };
            radius = radius.max(
                joint.origin.translation.norm() + travel + self.subtree_radius(joint.child_link),
            );
        }
        radius
    }

    fn compute_displacement_bound(&mut self) {
        let mut per_dof = vec![0.0_f64; self.dof];
        if self.floating_base {
            // Base translations move every sphere at unit rate; base
            // rotations sweep at most the whole-robot radius about the
            // base origin.
            let radius = self.subtree_radius(self.root);
            per_dof[0] = 1.0;
            per_dof[1] = 1.0;
            per_dof[2] = 1.0;
            per_dof[3] = radius;
            per_dof[4] = radius;
            per_dof[5] = radius;
        }
        for joint in &self.joints {
            if let Some(slot) = joint.dof {
                per_dof[slot] = match joint.kind {
                    JointKind::Revolute => self.subtree_radius(joint.child_link),
                    JointKind::Prismatic => 1.0,
                    JointKind::Fixed => unreachable!(),
                };
            }
        }
        self.displacement_bound = per_dof.iter().map(|x| x * x).sum::<f64>().sqrt();
        self.dof_displacement = per_dof;
    }

    pub fn dof(&self) -> usize {
        self.dof
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn root(&self) -> usize {
        self.root
    }

    pub fn lower_limits(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper_limits(&self) -> &[f64] {
        &self.upper
    }

    pub fn total_mass(&self) -> f64 {
        self.total_mass
    }

    pub fn self_collision_pairs(&self) -> &[(usize, usize)] {
        &self.self_pairs
    }

    /// Moving distance `s` in configuration space moves every collision
    /// sphere center at most `displacement_bound() · s` in the workspace.
    pub fn displacement_bound(&self) -> f64 {
        self.displacement_bound
    }

    pub fn link_index(&self, name: &str) -> Option<usize> {
        self.links.iter().position(|l| l.name == name)
    }

    pub fn frame_index(&self, name: &str) -> Option<usize> {
        self.frames.iter().position(|f| f.name == name)
    }

    /// Whether configuration entry `dof` influences `link`'s world pose.
    pub fn dof_moves_link(&self, dof: usize, link: usize) -> bool {
        self.ancestor_dofs[link] >> dof & 1 == 1
    }

    pub fn within_limits(&self, q: &[f64]) -> bool {
        q.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(&v, (&lo, &hi))| v >= lo && v <= hi)
    }
}

#[cfg(test)]
pub(crate) mod test_models {
    /// Planar chain of `n` unit links along x with revolute z joints.
    pub fn planar_chain(n: usize) -> String {
        let mut links = vec![serde_json::json!({
            "name": "base", "mass": 1.0, "com": [0.0, 0.0, 0.0],
            "spheres": []
        })];
        let mut joints = Vec::new();
        for i in 0..n {
            links.push(serde_json::json!({
                "name": format!("l{}", i + 1), "mass": 1.0,
                "com": [0.5, 0.0, 0.0], "spheres": []
            }));
            let parent = if i == 0 {
                "base".to_string()
            } else {
                format!("l{i}")
            };
            let origin_x = if i == 0 { 0.0 } else { 1.0 };
            joints.push(serde_json::json!({
                "name": format!("j{}", i + 1), "parent": parent,
                "child": format!("l{}", i + 1), "kind": "revolute",
                "axis": [0.0, 0.0, 1.0],
                "origin": {"xyz": [origin_x, 0.0, 0.0], "rpy": [0.0, 0.0, 0.0]},
                "limits": [-3.141592653589793, 3.141592653589793]
            }));
        }
        serde_json::json!({
            "name": format!("planar{n}"),
            "joints": joints,
            "links": links,
            "frames": [{
                "name": "tip", "link": format!("l{n}"),
                "offset": {"xyz": [1.0, 0.0, 0.0], "rpy": [0.0, 0.0, 0.0]}
            }]
        })
        .to_string()
    }

    pub fn arm7() -> &'static str {
        include_str!("../../assets/arm7.json")
    }

    /// Floating base carrying two short revolute arms, one frame on each
    /// tip. Small enough to reason about by hand, yet it exercises every
    /// base degree of freedom.
    pub fn floating_pair() -> &'static str {
        r#"{
            "name": "floating_pair",
            "floating_base": true,
            "base_limits": [[-2,2],[-2,2],[-2,2],[-1,1],[-1,1],[-3,3]],
            "joints": [
                {"name": "j_left", "parent": "base", "child": "left",
                 "kind": "revolute", "axis": [0,0,1],
                 "origin": {"xyz": [0.3,0,0], "rpy": [0,0,0]}, "limits": [-3,3]},
                {"name": "j_right", "parent": "base", "child": "right",
                 "kind": "revolute", "axis": [0,1,0],
                 "origin": {"xyz": [-0.3,0,0], "rpy": [0,0,0]}, "limits": [-3,3]}
            ],
            "links": [
                {"name": "base", "mass": 2.0, "com": [0,0,0],
                 "spheres": [{"center": [0,0,0], "radius": 0.1}]},
                {"name": "left", "mass": 1.0, "com": [0.1,0,0],
                 "spheres": [{"center": [0.1,0,0], "radius": 0.05}]},
                {"name": "right", "mass": 1.0, "com": [0.1,0,0],
                 "spheres": [{"center": [0.1,0,0], "radius": 0.05}]}
            ],
            "frames": [
                {"name": "tip_left", "link": "left",
                 "offset": {"xyz": [0.2,0,0], "rpy": [0,0,0]}},
                {"name": "tip_right", "link": "right",
                 "offset": {"xyz": [0.2,0,0], "rpy": [0,0,0]}}
            ]
        }"#
    }
}
