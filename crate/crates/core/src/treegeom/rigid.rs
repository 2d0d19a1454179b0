use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::bind::{edge_frame, RigidTransform};
use super::{TreeSkeleton, TreegeomError};
use crate::Mat3;

/// Mass properties of a solid conical frustum with constant density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrustumProperties {
    pub mass: f64,
    /// Center of mass measured along the axis from the `r1` end.
    pub com_offset: f64,
    /// Moment about the axis through the center of mass.
    pub axial: f64,
    /// Moment about any transverse axis through the center of mass.
    pub transverse: f64,
}

/// Closed-form frustum integrals with `r(z) = r1 + (r2 − r1) z / L` for `z ∈ [0, L]`.
pub fn frustum_properties(r1: f64, r2: f64, length: f64, density: f64) -> FrustumProperties {
    let l = length;
    let d = r2 - r1;
    let i_r2 = l * (r1 * r1 + r1 * r2 + r2 * r2) / 3.0;
    let i_r4 = l / 5.0 * (r1.powi(4) + r1.powi(3) * r2 + r1 * r1 * r2 * r2 + r1 * r2.powi(3) + r2.powi(4));
    let i_zr2 = l * l * (r1 * r1 / 2.0 + 2.0 * r1 * d / 3.0 + d * d / 4.0);
    let i_z2r2 = l.powi(3) * (r1 * r1 / 3.0 + r1 * d / 2.0 + d * d / 5.0);
    let mass = density * PI * i_r2;
    let zc = if i_r2 > 0.0 { i_zr2 / i_r2 } else { l / 2.0 };
    FrustumProperties {
        mass,
        com_offset: zc,
        axial: density * PI / 2.0 * i_r4,
        transverse: density * PI * (i_r4 / 4.0 + i_z2r2) - mass * zc * zc,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidBody {
    pub edge: usize,
    pub r1: f64,
    pub r2: f64,
    pub length: f64,
    pub mass: f64,
    /// Inertia about the center of mass in body coordinates (axis = local z).
    pub inertia: [[f64; 3]; 3],
    /// Body-to-world transform with origin at the center of mass.
    pub frame: RigidTransform,
}

impl RigidBody {
    pub fn inertia_world(&self) -> Mat3 {
        let r = self.frame.rotation;
        r * Mat3::from_fn(|i, j| self.inertia[i][j]) * r.transpose()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub parent: usize,
    pub child: usize,
    pub position: [f64; 3],
    pub stiffness: f64,
    pub damping: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigidBodyModel {
    pub bodies: Vec<RigidBody>,
    pub joints: Vec<Joint>,
}

/// One frustum body per skeleton edge and one joint per parent/child edge pair at their
/// shared node.
pub fn export_rigid_bodies(
    skel: &TreeSkeleton,
    density: f64,
    stiffness: f64,
    damping: f64,
) -> Result<RigidBodyModel, TreegeomError> {
    if !(density > 0.0) {
        return Err(TreegeomError::InvalidParams(format!("density {density} must be positive")));
    }
    skel.validate()?;
    let index = skel.index();
    let mut bodies = Vec::with_capacity(skel.edges.len());
    for (e, [a, b]) in skel.edges.iter().enumerate() {
        let (na, nb) = (&skel.nodes[index[a]], &skel.nodes[index[b]]);
        let (pa, pb) = (na.position(), nb.position());
        let length = (pb - pa).norm();
        if !(length > 0.0) || !(na.radius > 0.0 || nb.radius > 0.0) {
            return Err(TreegeomError::InvalidParams(format!("edge {e} has zero volume")));
        }
        let props = frustum_properties(na.radius, nb.radius, length, density);
        let (_, rot) = edge_frame(&pa, &pb);
        let com = pa + rot.column(2) * props.com_offset;
        bodies.push(RigidBody {
            edge: e,
            r1: na.radius,
            r2: nb.radius,
            length,
            mass: props.mass,
            inertia: [[props.transverse, 0.0, 0.0], [0.0, props.transverse, 0.0], [0.0, 0.0, props.axial]],
            frame: RigidTransform {
                rotation: rot,
                translation: com,
            },
        });
    }
    let parent_edge = skel.parent_edge();
    let joints = skel
        .edges
        .iter()
        .enumerate()
        .filter_map(|(e, [a, _])| {
            parent_edge.get(a).map(|&p| Joint {
                parent: p,
                child: e,
                position: skel.nodes[index[a]].pos,
                stiffness,
                damping,
            })
        })
        .collect();
    Ok(RigidBodyModel { bodies, joints })
}
