//! Narrow-phase contact generation for primitive pairs and analytic
//! derivatives of contact frames with respect to geometry placements.
//!
//! Placements are perturbed on the right, `M ← M·exp(δ)` with `δ = [ω; v]`
//! in the local frame, and so are contact frames. A [`CdDerivatives`] block
//! maps a geometry perturbation to the induced contact-frame perturbation.

use nalgebra::{Matrix3, Matrix6, RowVector6, SMatrix, Vector3, Vector6};

use crate::error::{Result, SimError};
use crate::model::{FrameData, KinematicModel};
use crate::spatial::{adjoint, stack, vee, Placement};

pub const DEFAULT_MARGIN: f64 = 1e-4;

/// Two sorted vertex gaps closer than this are treated as a patch-assignment tie.
const TIE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub enum GeometryPrimitive {
    /// `{x : n·x ≤ offset}` in the geometry frame.
    HalfSpace {
        normal: Vector3<f64>,
        offset: f64,
    },
    Sphere {
        radius: f64,
    },
    Box {
        half_extents: Vector3<f64>,
    },
}

impl GeometryPrimitive {
    pub fn name(&self) -> &'static str {
        match self {
            GeometryPrimitive::HalfSpace { .. } => "halfspace",
            GeometryPrimitive::Sphere { .. } => "sphere",
            GeometryPrimitive::Box { .. } => "box",
        }
    }

    pub fn validate(&self) -> std::result::Result<(), String> {
        match self {
            GeometryPrimitive::HalfSpace { normal, offset } => {
                if (normal.norm() - 1.0).abs() > 1e-9 {
                    return Err("halfspace normal must be unit norm".into());
                }
                if !offset.is_finite() {
                    return Err("halfspace offset must be finite".into());
                }
            }
            GeometryPrimitive::Sphere { radius } => {
                if !(*radius > 0.0) {
                    return Err("sphere radius must be positive".into());
                }
            }
            GeometryPrimitive::Box { half_extents } => {
                if !half_extents.iter().all(|h| *h > 0.0) {
                    return Err("box half extents must be positive".into());
                }
            }
        }
        Ok(())
    }
}

/// One contact point produced by the narrow phase.
#[derive(Clone, Debug, PartialEq)]
pub struct ContactFrame {
    /// Origin at the contact point, z-axis along the normal (from geometry 2 toward geometry 1).
    pub placement: Placement,
    pub signed_distance: f64,
    /// Index of the collision pair in the model.
    pub pair: usize,
    pub geoms: (usize, usize),
    pub friction: f64,
    /// Patch-local identifier (vertex index for boxes, 0 otherwise), stable across steps.
    pub corner: usize,
}

impl ContactFrame {
    pub fn normal(&self) -> Vector3<f64> {
        self.placement.rotation.column(2).into_owned()
    }

    pub fn point(&self) -> Vector3<f64> {
        self.placement.translation
    }
}

/// Jacobians of a contact frame and its gap with respect to both geometry placements.
#[derive(Clone, Debug, PartialEq)]
pub struct CdDerivatives {
    pub d_m1: Matrix6<f64>,
    pub d_m2: Matrix6<f64>,
    pub dphi_m1: RowVector6<f64>,
    pub dphi_m2: RowVector6<f64>,
    /// The configuration sits where the contact set or frame is not smooth.
    pub boundary: bool,
}

impl CdDerivatives {
    /// Re-expresses the derivatives with respect to the placements of the
    /// owning bodies, given the geometry placements in those bodies.
    pub fn in_body_coordinates(&self, g1_in_body: &Placement, g2_in_body: &Placement) -> Self {
        let a1 = adjoint(&g1_in_body.inverse());
        let a2 = adjoint(&g2_in_body.inverse());
        Self {
            d_m1: self.d_m1 * a1,
            d_m2: self.d_m2 * a2,
            dphi_m1: self.dphi_m1 * a1,
            dphi_m2: self.dphi_m2 * a2,
            boundary: self.boundary,
        }
    }
}

/// Contact point data before it is attached to a model pair.
#[derive(Clone, Debug)]
struct RawContact {
    point: Vector3<f64>,
    normal: Vector3<f64>,
    phi: f64,
    corner: usize,
    variation: Variation,
    boundary: bool,
}

/// Linear map from the 12 tangent coordinates `(δ1, δ2)` to `(dx, dn, dΦ)`.
#[derive(Clone, Debug)]
struct Variation {
    dx: SMatrix<f64, 3, 12>,
    dn: SMatrix<f64, 3, 12>,
    dphi: SMatrix<f64, 1, 12>,
}

/// World-frame point and its variation for a point fixed in a geometry.
fn point_variation(m: &Placement, local: &Vector3<f64>) -> SMatrix<f64, 3, 6> {
    // d(R l + p) = R (ω × l + v)
    let mut out = SMatrix::<f64, 3, 6>::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-m.rotation * crate::spatial::skew(local)));
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&m.rotation);
    out
}

/// Variation of a geometry-fixed direction `R l` (rotation part only).
fn direction_variation(m: &Placement, local: &Vector3<f64>) -> SMatrix<f64, 3, 6> {
    let mut out = SMatrix::<f64, 3, 6>::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-m.rotation * crate::spatial::skew(local)));
    out
}

fn join(a: SMatrix<f64, 3, 6>, b: SMatrix<f64, 3, 6>) -> SMatrix<f64, 3, 12> {
    let mut out = SMatrix::<f64, 3, 12>::zeros();
    out.fixed_view_mut::<3, 6>(0, 0).copy_from(&a);
    out.fixed_view_mut::<3, 6>(0, 6).copy_from(&b);
    out
}

/// Contact frame rotation `[x y n]` for a unit normal `n`.
pub fn contact_rotation(n: &Vector3<f64>) -> Matrix3<f64> {
    let (x, _) = tangent_axis(n);
    let y = n.cross(&x);
    Matrix3::from_columns(&[x, y, *n])
}

fn tangent_axis(n: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let e = if n.x.abs() > 0.99 { Vector3::y() } else { Vector3::x() };
    ((e - n.dot(&e) * n).normalize(), e)
}

/// Converts a contact variation into right-perturbation coordinates of the contact frame.
fn frame_derivative(raw: &RawContact) -> (SMatrix<f64, 6, 12>, SMatrix<f64, 1, 12>) {
    let n = raw.normal;
    let rc = contact_rotation(&n);
    let (xt_unit, e) = tangent_axis(&n);
    let xt_norm = (e - n.dot(&e) * n).norm();
    let proj = (Matrix3::identity() - xt_unit * xt_unit.transpose()) / xt_norm;
    let mut out = SMatrix::<f64, 6, 12>::zeros();
    for k in 0..12 {
        let dn = raw.variation.dn.column(k).into_owned();
        let dxt = -(dn.dot(&e)) * n - n.dot(&e) * dn;
        let dtx = proj * dxt;
        let dty = dn.cross(&xt_unit) + n.cross(&dtx);
        let drc = Matrix3::from_columns(&[dtx, dty, dn]);
        let w = vee(&(rc.transpose() * drc));
        let v = rc.transpose() * raw.variation.dx.column(k);
        out.set_column(k, &stack(&w, &v));
    }
    (out, raw.variation.dphi)
}

fn halfspace_world(m2: &Placement, normal: &Vector3<f64>, offset: f64) -> (Vector3<f64>, f64) {
    let n = m2.rotation * normal;
    (n, offset + n.dot(&m2.translation))
}

fn sphere_halfspace(r: f64, m1: &Placement, nl: &Vector3<f64>, offset: f64, m2: &Placement) -> RawContact {
    let c = m1.translation;
    let (n, d) = halfspace_world(m2, nl, offset);
    let phi = n.dot(&c) - d - r;
    // gap Φ = n·(c − p2) − offset − r
    let dc = join(point_variation(m1, &Vector3::zeros()), SMatrix::zeros());
    let dn = join(SMatrix::zeros(), direction_variation(m2, nl));
    let dp2 = join(SMatrix::zeros(), point_variation(m2, &Vector3::zeros()));
    let dphi = (c - m2.translation).transpose() * dn + n.transpose() * (dc - dp2);
    let dx = dc - n * dphi - (phi + r) * dn;
    RawContact {
        point: c - (phi + r) * n,
        normal: n,
        phi,
        corner: 0,
        variation: Variation { dx, dn, dphi },
        boundary: false,
    }
}

fn sphere_sphere(r1: f64, m1: &Placement, r2: f64, m2: &Placement) -> RawContact {
    let (c1, c2) = (m1.translation, m2.translation);
    let d = c1 - c2;
    let len = d.norm();
    let dd = join(point_variation(m1, &Vector3::zeros()), -point_variation(m2, &Vector3::zeros()));
    let dsum = join(point_variation(m1, &Vector3::zeros()), point_variation(m2, &Vector3::zeros()));
    let concentric = len < 1e-12;
    let n = if concentric { Vector3::z() } else { d / len };
    let dn = if concentric { SMatrix::zeros() } else { (Matrix3::identity() - n * n.transpose()) * dd / len };
    let phi = len - r1 - r2;
    let s1 = c1 - r1 * n;
    let s2 = c2 + r2 * n;
    RawContact {
        point: 0.5 * (s1 + s2),
        normal: n,
        phi,
        corner: 0,
        variation: Variation { dx: 0.5 * dsum + 0.5 * (r2 - r1) * dn, dn, dphi: n.transpose() * dd },
        boundary: concentric,
    }
}

fn box_vertex(h: &Vector3<f64>, k: usize) -> Vector3<f64> {
    let s = |bit: usize| if k & bit != 0 { 1.0 } else { -1.0 };
    Vector3::new(s(1) * h.x, s(2) * h.y, s(4) * h.z)
}

fn box_halfspace(
    h: &Vector3<f64>,
    m1: &Placement,
    nl: &Vector3<f64>,
    offset: f64,
    m2: &Placement,
    margin: f64,
) -> Vec<RawContact> {
    let (n, d) = halfspace_world(m2, nl, offset);
    let mut gaps: Vec<(usize, f64)> = (0..8).map(|k| (k, n.dot(&m1.act_point(&box_vertex(h, k))) - d)).collect();
    gaps.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let active: Vec<(usize, f64)> = gaps.iter().copied().filter(|g| g.1 <= margin).take(4).collect();
    // the selection is ambiguous when a fifth vertex ties with the last selected one
    let tie = active.len() == 4 && gaps[4].1 <= margin && (gaps[4].1 - gaps[3].1).abs() < TIE_TOL;
    let dn = join(SMatrix::zeros(), direction_variation(m2, nl));
    let dp2 = join(SMatrix::zeros(), point_variation(m2, &Vector3::zeros()));
    active
        .into_iter()
        .map(|(k, phi)| {
            let local = box_vertex(h, k);
            let v = m1.act_point(&local);
            let dv = join(point_variation(m1, &local), SMatrix::zeros());
            let dphi = (v - m2.translation).transpose() * dn + n.transpose() * (dv - dp2);
            let dx = dv - n * dphi - phi * dn;
            RawContact {
                point: v - phi * n,
                normal: n,
                phi,
                corner: k,
                variation: Variation { dx, dn, dphi },
                boundary: tie,
            }
        })
        .collect()
}

fn raw_contacts(
    g1: &GeometryPrimitive,
    g2: &GeometryPrimitive,
    m1: &Placement,
    m2: &Placement,
    margin: f64,
) -> Result<Vec<RawContact>> {
    use GeometryPrimitive::*;
    let all = match (g1, g2) {
        (Sphere { radius }, HalfSpace { normal, offset }) => {
            vec![sphere_halfspace(*radius, m1, normal, *offset, m2)]
        }
        (Sphere { radius: r1 }, Sphere { radius: r2 }) => vec![sphere_sphere(*r1, m1, *r2, m2)],
        (Box { half_extents }, HalfSpace { normal, offset }) => {
            return Ok(box_halfspace(half_extents, m1, normal, *offset, m2, margin));
        }
        _ => return Err(SimError::UnsupportedPair(g1.name(), g2.name())),
    };
    Ok(all.into_iter().filter(|c| c.phi <= margin).collect())
}

/// Contacts between two placed primitives whose gap is at most `margin`.
///
/// The returned frames carry `pair = 0` and `geoms = (0, 1)`; use
/// [`detect_contacts`] to obtain frames tied to a model.
pub fn narrow_phase(
    g1: &GeometryPrimitive,
    g2: &GeometryPrimitive,
    m1: &Placement,
    m2: &Placement,
    margin: f64,
) -> Result<Vec<ContactFrame>> {
    Ok(raw_contacts(g1, g2, m1, m2, margin)?
        .into_iter()
        .map(|c| ContactFrame {
            placement: Placement::new(contact_rotation(&c.normal), c.point),
            signed_distance: c.phi,
            pair: 0,
            geoms: (0, 1),
            friction: 0.0,
            corner: c.corner,
        })
        .collect())
}

/// Derivatives of the contact frame identified by `frame.corner`.
pub fn cd_derivatives(
    g1: &GeometryPrimitive,
    g2: &GeometryPrimitive,
    m1: &Placement,
    m2: &Placement,
    frame: &ContactFrame,
) -> Result<CdDerivatives> {
    let raw = raw_contacts(g1, g2, m1, m2, f64::INFINITY)?;
    let c = raw
        .iter()
        .find(|c| c.corner == frame.corner)
        .ok_or_else(|| SimError::InvalidParameter(format!("no contact with corner id {}", frame.corner)))?;
    let (d, dphi) = frame_derivative(c);
    let tangent_degenerate = {
        let n = c.normal;
        (n.x.abs() - 0.99).abs() < 1e-9
    };
    Ok(CdDerivatives {
        d_m1: d.fixed_view::<6, 6>(0, 0).into_owned(),
        d_m2: d.fixed_view::<6, 6>(0, 6).into_owned(),
        dphi_m1: dphi.fixed_view::<1, 6>(0, 0).into_owned(),
        dphi_m2: dphi.fixed_view::<1, 6>(0, 6).into_owned(),
        boundary: c.boundary || tangent_degenerate,
    })
}

/// Signed distance of the pair and its gradient with respect to `(δ1, δ2)`.
///
/// For boxes this is the deepest vertex.
pub fn signed_distance_derivative(
    g1: &GeometryPrimitive,
    g2: &GeometryPrimitive,
    m1: &Placement,
    m2: &Placement,
) -> Result<(f64, SMatrix<f64, 1, 12>)> {
    let raw = raw_contacts(g1, g2, m1, m2, f64::INFINITY)?;
    let c = raw.iter().min_by(|a, b| a.phi.total_cmp(&b.phi)).expect("every supported pair yields a closest feature");
    Ok((c.phi, c.variation.dphi))
}

/// World placement of a geometry.
pub fn geometry_placement(model: &KinematicModel, frames: &FrameData, geom: usize) -> Placement {
    let g = &model.geometries()[geom];
    frames.body_placement(g.body) * g.placement
}

/// Runs the narrow phase on every collision pair of the model.
pub fn detect_contacts(model: &KinematicModel, frames: &FrameData, margin: f64) -> Result<Vec<ContactFrame>> {
    let mut out = Vec::new();
    for (k, pair) in model.pairs().iter().enumerate() {
        let g1 = &model.geometries()[pair.geom1];
        let g2 = &model.geometries()[pair.geom2];
        let m1 = geometry_placement(model, frames, pair.geom1);
        let m2 = geometry_placement(model, frames, pair.geom2);
        for mut c in narrow_phase(&g1.shape, &g2.shape, &m1, &m2, margin)? {
            c.pair = k;
            c.geoms = (pair.geom1, pair.geom2);
            c.friction = pair.mu;
            out.push(c);
        }
    }
    Ok(out)
}

/// [`cd_derivatives`] for a model contact, in body tangent coordinates.
pub fn contact_derivatives(
    model: &KinematicModel,
    frames: &FrameData,
    contact: &ContactFrame,
) -> Result<CdDerivatives> {
    let (i1, i2) = contact.geoms;
    let g1 = &model.geometries()[i1];
    let g2 = &model.geometries()[i2];
    let m1 = geometry_placement(model, frames, i1);
    let m2 = geometry_placement(model, frames, i2);
    let d = cd_derivatives(&g1.shape, &g2.shape, &m1, &m2, contact)?;
    Ok(d.in_body_coordinates(&g1.placement, &g2.placement))
}

/// Right-perturbation difference `log(A⁻¹B)`, used to compare frames.
pub fn placement_difference(a: &Placement, b: &Placement) -> Vector6<f64> {
    crate::spatial::log6(&a.inv_times(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spatial::{exp3, exp6};

    fn plane() -> GeometryPrimitive {
        GeometryPrimitive::HalfSpace { normal: Vector3::z(), offset: 0.0 }
    }

    fn fd_check(g1: &GeometryPrimitive, g2: &GeometryPrimitive, m1: Placement, m2: Placement) {
        let frames = narrow_phase(g1, g2, &m1, &m2, f64::INFINITY).unwrap();
        let h = 1e-6;
        for f in &frames {
            let d = cd_derivatives(g1, g2, &m1, &m2, f).unwrap();
            for k in 0..12 {
                let mut e = Vector6::zeros();
                e[k % 6] = h;
                let perturb = |s: f64| {
                    let (a, b) = if k < 6 { (m1 * exp6(&(s * e)), m2) } else { (m1, m2 * exp6(&(s * e))) };
                    narrow_phase(g1, g2, &a, &b, f64::INFINITY)
                        .unwrap()
                        .into_iter()
                        .find(|c| c.corner == f.corner)
                        .unwrap()
                };
                let (p, m) = (perturb(1.0), perturb(-1.0));
                let fd = (placement_difference(&f.placement, &p.placement)
                    - placement_difference(&f.placement, &m.placement))
                    / (2.0 * h);
                let an = if k < 6 { d.d_m1.column(k).into_owned() } else { d.d_m2.column(k - 6).into_owned() };
                assert!((fd - an).norm() <= 1e-5 * fd.norm().max(1.0), "col {k}: {fd} vs {an}");
                let fdphi = (p.signed_distance - m.signed_distance) / (2.0 * h);
                let anphi = if k < 6 { d.dphi_m1[k] } else { d.dphi_m2[k - 6] };
                assert!((fdphi - anphi).abs() <= 1e-6 * fdphi.abs().max(1.0));
            }
        }
    }

    #[test]
    fn sphere_below_surface() {
        let m1 = Placement::from_translation(Vector3::new(0.3, -0.2, 0.5));
        let c = narrow_phase(
            &GeometryPrimitive::Sphere { radius: 1.0 },
            &plane(),
            &m1,
            &Placement::identity(),
            DEFAULT_MARGIN,
        )
        .unwrap();
        assert_eq!(c.len(), 1);
        assert!((c[0].signed_distance + 0.5).abs() < 1e-15);
        assert!((c[0].normal() - Vector3::z()).norm() < 1e-15);
        assert!((c[0].point() - Vector3::new(0.3, -0.2, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn sphere_far_away_has_no_contact() {
        let m1 = Placement::from_translation(Vector3::new(0.0, 0.0, 2.0));
        let c = narrow_phase(&GeometryPrimitive::Sphere { radius: 1.0 }, &plane(), &m1, &Placement::identity(), 0.0)
            .unwrap();
        assert!(c.is_empty());
    }

    #[test]
    fn resting_cube_has_four_corner_contacts() {
        let cube = GeometryPrimitive::Box { half_extents: Vector3::repeat(0.5) };
        let m1 = Placement::from_translation(Vector3::new(0.0, 0.0, 0.5));
        let c = narrow_phase(&cube, &plane(), &m1, &Placement::identity(), DEFAULT_MARGIN).unwrap();
        assert_eq!(c.len(), 4);
        let mut corners: Vec<_> = c.iter().map(|f| (f.point().x, f.point().y)).collect();
        corners.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(corners, vec![(-0.5, -0.5), (-0.5, 0.5), (0.5, -0.5), (0.5, 0.5)]);
        for f in &c {
            assert!(f.signed_distance.abs() < 1e-15);
            assert_eq!(f.normal(), Vector3::z());
            assert!(f.point().z.abs() < 1e-15);
        }
    }

    #[test]
    fn tilted_cube_touching_on_one_vertex() {
        let cube = GeometryPrimitive::Box { half_extents: Vector3::repeat(0.5) };
        let r = exp3(&Vector3::new(0.3, 0.2, 0.0));
        let m1 = Placement::new(r, Vector3::new(0.0, 0.0, 0.6));
        let c = narrow_phase(&cube, &plane(), &m1, &Placement::identity(), DEFAULT_MARGIN).unwrap();
        assert!(c.len() <= 1);
        let all = narrow_phase(&cube, &plane(), &m1, &Placement::identity(), f64::INFINITY).unwrap();
        assert_eq!(all.len(), 4);
    }

    #[test]
    fn sphere_sphere_contact() {
        let s = GeometryPrimitive::Sphere { radius: 0.5 };
        let m1 = Placement::from_translation(Vector3::new(0.9, 0.0, 0.0));
        let c = narrow_phase(&s, &s, &m1, &Placement::identity(), DEFAULT_MARGIN).unwrap();
        assert_eq!(c.len(), 1);
        assert!((c[0].signed_distance + 0.1).abs() < 1e-15);
        assert!((c[0].normal() - Vector3::x()).norm() < 1e-15);
        assert!((c[0].point() - Vector3::new(0.45, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn unsupported_pairs_are_rejected() {
        let s = GeometryPrimitive::Sphere { radius: 0.5 };
        let b = GeometryPrimitive::Box { half_extents: Vector3::repeat(0.5) };
        let id = Placement::identity();
        assert!(matches!(
            narrow_phase(&plane(), &s, &id, &id, 0.0),
            Err(SimError::UnsupportedPair("halfspace", "sphere"))
        ));
        assert!(matches!(narrow_phase(&b, &b, &id, &id, 0.0), Err(SimError::UnsupportedPair(..))));
        assert!(matches!(narrow_phase(&s, &b, &id, &id, 0.0), Err(SimError::UnsupportedPair(..))));
    }

    #[test]
    fn tangent_basis_follows_world_x_then_y() {
        let r = contact_rotation(&Vector3::z());
        assert_eq!(r, Matrix3::identity());
        let r = contact_rotation(&Vector3::x());
        assert!((r.column(0) - Vector3::y()).norm() < 1e-15);
        assert!((r.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_plane_vertical_translation_gain() {
        let s = GeometryPrimitive::Sphere { radius: 0.2 };
        let m1 = Placement::from_translation(Vector3::new(0.1, 0.1, 0.15));
        let f = &narrow_phase(&s, &plane(), &m1, &Placement::identity(), 1.0).unwrap()[0];
        let d = cd_derivatives(&s, &plane(), &m1, &Placement::identity(), f).unwrap();
        // translation in z leaves the point, rotated z moves the gap only
        assert!(d.d_m1.column(5).norm() < 1e-15);
        assert!((d.dphi_m1[5] - 1.0).abs() < 1e-15);
        // in-plane translation moves the point with gain 1
        assert!((d.d_m1[(3, 3)] - 1.0).abs() < 1e-15);
        // spinning the sphere about its center changes nothing
        for k in 0..3 {
            assert!(d.d_m1.column(k).norm() < 1e-15);
            assert!(d.dphi_m1[k].abs() < 1e-15);
        }
        assert!((d.dphi_m2[5] + 1.0).abs() < 1e-15);
        assert!(!d.boundary);
    }

    #[test]
    fn box_in_plane_translation_moves_points_identically() {
        let cube = GeometryPrimitive::Box { half_extents: Vector3::new(0.5, 0.3, 0.2) };
        let m1 = Placement::from_translation(Vector3::new(0.0, 0.0, 0.2));
        for f in narrow_phase(&cube, &plane(), &m1, &Placement::identity(), DEFAULT_MARGIN).unwrap() {
            let d = cd_derivatives(&cube, &plane(), &m1, &Placement::identity(), &f).unwrap();
            assert!((d.d_m1.fixed_view::<3, 2>(3, 3) - Matrix3::identity().fixed_view::<3, 2>(0, 0)).norm() < 1e-14);
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let s1 = GeometryPrimitive::Sphere { radius: 0.3 };
        let s2 = GeometryPrimitive::Sphere { radius: 0.7 };
        let cube = GeometryPrimitive::Box { half_extents: Vector3::new(0.4, 0.3, 0.2) };
        let tilted = GeometryPrimitive::HalfSpace { normal: Vector3::new(0.0, 0.6, 0.8), offset: 0.1 };
        for k in 0..10 {
            let t = k as f64;
            let m1 =
                Placement::new(exp3(&Vector3::new(0.3 + t, -0.2 * t, 0.5)), Vector3::new(0.1 * t, 0.2, 0.4 - 0.05 * t));
            let m2 = Placement::new(exp3(&Vector3::new(0.1, 0.2 * t.sin(), -0.3)), Vector3::new(-0.2, 0.1 * t, 0.0));
            fd_check(&s1, &tilted, m1, m2);
            fd_check(&s1, &s2, m1, m2);
            fd_check(&cube, &tilted, m1, m2);
            fd_check(&cube, &plane(), m1, m2);
        }
    }

    #[test]
    fn signed_distance_gradient_of_sphere() {
        let s = GeometryPrimitive::Sphere { radius: 0.3 };
        let m1 = Placement::from_translation(Vector3::new(0.0, 0.0, 1.0));
        let (phi, g) = signed_distance_derivative(&s, &plane(), &m1, &Placement::identity()).unwrap();
        assert!((phi - 0.7).abs() < 1e-15);
        assert!((g[5] - 1.0).abs() < 1e-15 && (g[11] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn concentric_spheres_are_flagged() {
        let s = GeometryPrimitive::Sphere { radius: 0.3 };
        let id = Placement::identity();
        let f = &narrow_phase(&s, &s, &id, &id, 0.0).unwrap()[0];
        assert!(cd_derivatives(&s, &s, &id, &id, f).unwrap().boundary);
    }

    #[test]
    fn diagonal_patch_tie_is_flagged() {
        // rotated 45° about x: two edges, four vertices tie pairwise at the bottom
        let cube = GeometryPrimitive::Box { half_extents: Vector3::repeat(0.5) };
        let r = exp3(&Vector3::new(std::f64::consts::FRAC_PI_4, 0.0, 0.0));
        let m1 = Placement::new(r, Vector3::new(0.0, 0.0, 0.5f64.sqrt()));
        let c = narrow_phase(&cube, &plane(), &m1, &Placement::identity(), 1.0).unwrap();
        assert_eq!(c.len(), 4);
        let d = cd_derivatives(&cube, &plane(), &m1, &Placement::identity(), &c[0]).unwrap();
        assert!(d.boundary);
    }
}
