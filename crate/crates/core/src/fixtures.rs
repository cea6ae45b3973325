//! Small models shared by unit tests.

use nalgebra::{DVector, Matrix3, Vector3};

use crate::collision::GeometryPrimitive;
use crate::model::{
    integrate, Body, BodyInertia, CollisionPair, Configuration, Geometry, JointKind, JointSpec, KinematicModel,
};
use crate::spatial::Placement;

pub fn body(name: &str, kind: JointKind, parent: Option<usize>, at: Vector3<f64>, mass: f64) -> Body {
    let actuated = kind != JointKind::Free;
    Body {
        name: name.into(),
        joint: JointSpec { kind, parent, placement_in_parent: Placement::from_translation(at) },
        inertia: BodyInertia::new(
            mass,
            Matrix3::new(0.02, 0.001, 0.0, 0.001, 0.03, 0.002, 0.0, 0.002, 0.025) * mass,
            Vector3::new(0.05, 0.01, -0.02),
        ),
        actuated,
    }
}

pub fn plane() -> Geometry {
    Geometry {
        body: None,
        shape: GeometryPrimitive::HalfSpace { normal: Vector3::z(), offset: 0.0 },
        placement: Placement::identity(),
    }
}

/// Serial chain of revolute joints with alternating z/y axes.
pub fn chain(n: usize) -> KinematicModel {
    let bodies = (0..n)
        .map(|i| {
            let axis = if i % 2 == 0 { Vector3::z() } else { Vector3::y() };
            let at = if i == 0 { Vector3::new(0.0, 0.0, 0.3) } else { Vector3::new(0.1, 0.0, 0.0) };
            body(&format!("l{i}"), JointKind::Revolute { axis }, i.checked_sub(1), at, 0.2)
        })
        .collect();
    KinematicModel::new(bodies, vec![], vec![], Vector3::new(0.0, 0.0, -9.81)).unwrap()
}

/// Free base with a revolute, a prismatic and a branching revolute joint.
pub fn branched() -> KinematicModel {
    let bodies = vec![
        body("base", JointKind::Free, None, Vector3::zeros(), 2.0),
        body("l1", JointKind::Revolute { axis: Vector3::z() }, Some(0), Vector3::new(0.3, 0.0, 0.1), 0.5),
        body(
            "l2",
            JointKind::Prismatic { axis: Vector3::new(0.0, 0.6, 0.8) },
            Some(1),
            Vector3::new(0.5, 0.0, 0.0),
            0.4,
        ),
        body("l3", JointKind::Revolute { axis: Vector3::x() }, Some(2), Vector3::new(0.2, 0.1, 0.0), 0.3),
        body("side", JointKind::Revolute { axis: Vector3::y() }, Some(0), Vector3::new(-0.2, 0.3, 0.0), 0.6),
    ];
    KinematicModel::new(bodies, vec![], vec![], Vector3::new(0.0, 0.0, -9.81)).unwrap()
}

/// Unit cube (mass 1) free body above the z = 0 plane.
pub fn cube(mu: f64) -> KinematicModel {
    let h = Vector3::repeat(0.5);
    let b = Body {
        name: "cube".into(),
        joint: JointSpec { kind: JointKind::Free, parent: None, placement_in_parent: Placement::identity() },
        inertia: BodyInertia::uniform_box(1.0, h),
        actuated: false,
    };
    let geoms = vec![
        Geometry { body: Some(0), shape: GeometryPrimitive::Box { half_extents: h }, placement: Placement::identity() },
        plane(),
    ];
    let pairs = vec![CollisionPair { geom1: 0, geom2: 1, mu }];
    KinematicModel::new(vec![b], geoms, pairs, Vector3::new(0.0, 0.0, -9.81)).unwrap()
}

/// Solid sphere (mass 1) free body above the z = 0 plane.
pub fn ball(radius: f64, mu: f64) -> KinematicModel {
    let b = Body {
        name: "ball".into(),
        joint: JointSpec { kind: JointKind::Free, parent: None, placement_in_parent: Placement::identity() },
        inertia: BodyInertia::solid_sphere(1.0, radius),
        actuated: false,
    };
    let geoms = vec![
        Geometry { body: Some(0), shape: GeometryPrimitive::Sphere { radius }, placement: Placement::identity() },
        plane(),
    ];
    let pairs = vec![CollisionPair { geom1: 0, geom2: 1, mu }];
    KinematicModel::new(vec![b], geoms, pairs, Vector3::new(0.0, 0.0, -9.81)).unwrap()
}

/// Deterministic pseudo-random configuration.
pub fn sample_q(model: &KinematicModel, seed: f64) -> Configuration {
    let delta = DVector::from_fn(model.nv(), |i, _| (seed * (i as f64 + 1.3)).sin());
    integrate(model, &model.neutral(), &delta).unwrap()
}

pub fn sample_v(model: &KinematicModel, seed: f64) -> DVector<f64> {
    DVector::from_fn(model.nv(), |i, _| (seed * 1.7 + i as f64 * 0.9).cos())
}
