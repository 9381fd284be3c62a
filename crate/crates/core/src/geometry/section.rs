use super::{Polyhedron, Vec3, TAU_GEOM};
use crate::error::{Error, Result};

/// The plane `{x : <x, normal> = offset}` with `normal` in the closed upper
/// hemisphere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Plane {
    normal: Vec3,
    offset: f64,
}

impl Plane {
    /// Normalizes `normal` and flips the pair `(normal, offset)` into the
    /// upper hemisphere if needed.
    pub fn new(normal: Vec3, offset: f64) -> Result<Self> {
        let len = normal.norm();
        if !(len > 0.0) || !len.is_finite() || !offset.is_finite() {
            return Err(Error::InvalidArgument("plane needs a finite nonzero normal".into()));
        }
        let normal = normal / len;
        Ok(if normal.z < 0.0 {
            Self {
                normal: -normal,
                offset: -offset,
            }
        } else {
            Self { normal, offset }
        })
    }

    pub fn normal(&self) -> Vec3 {
        self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }
}

/// Orthonormal `(u, w)` spanning the plane orthogonal to unit `n`, with
/// `u × w = n`.
pub(crate) fn plane_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.6 { Vec3::x() } else { Vec3::y() };
    let u = n.cross(&helper).normalize();
    let w = n.cross(&u);
    (u, w)
}

/// The convex polygon `K ∩ T`, ordered counter-clockwise about the plane
/// normal, or `None` when the plane misses `K` or only touches it in fewer
/// than three distinct points.
pub fn section_polygon(k: &Polyhedron, t: &Plane) -> Option<Vec<Vec3>> {
    let tol = TAU_GEOM * k.enclosing_radius().max(1.0);
    let verts = k.vertices();
    let dist: Vec<f64> = verts.iter().map(|v| t.signed_distance(v)).collect();
    let (lo, hi) = dist
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &d| (a.min(d), b.max(d)));
    if lo > tol || hi < -tol {
        return None;
    }

    let mut pts: Vec<Vec3> = Vec::new();
    for (i, &d) in dist.iter().enumerate() {
        if d.abs() <= tol {
            pts.push(verts[i]);
        }
    }
    for &(a, b) in k.edges() {
        let (da, db) = (dist[a], dist[b]);
        if (da > tol && db < -tol) || (da < -tol && db > tol) {
            let r = da / (da - db);
            pts.push(verts[a] + (verts[b] - verts[a]) * r);
        }
    }
    if pts.len() < 3 {
        return None;
    }

    let (u, w) = plane_basis(&t.normal);
    let center = pts.iter().sum::<Vec3>() / pts.len() as f64;
    let mut keyed: Vec<(f64, Vec3)> = pts
        .into_iter()
        .map(|p| {
            let d = p - center;
            (d.dot(&w).atan2(d.dot(&u)), p)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut poly: Vec<Vec3> = Vec::with_capacity(keyed.len());
    for (_, p) in keyed {
        if poly.last().is_none_or(|q: &Vec3| (p - q).norm() > tol) {
            poly.push(p);
        }
    }
    while poly.len() > 1 && (poly[0] - poly[poly.len() - 1]).norm() <= tol {
        poly.pop();
    }
    (poly.len() >= 3).then_some(poly)
}

/// Shoelace area of a planar polygon, computed in in-plane coordinates of
/// the plane with unit normal `normal`.
pub fn polygon_area(poly: &[Vec3], normal: &Vec3) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let (u, w) = plane_basis(normal);
    let origin = poly[0];
    let xy: Vec<(f64, f64)> = poly
        .iter()
        .map(|p| {
            let d = p - origin;
            (d.dot(&u), d.dot(&w))
        })
        .collect();
    let mut twice = 0.0;
    for k in 0..xy.len() {
        let (x0, y0) = xy[k];
        let (x1, y1) = xy[(k + 1) % xy.len()];
        twice += x0 * y1 - x1 * y0;
    }
    twice.abs() / 2.0
}

/// Area of the section `K ∩ T`; zero when the plane misses or only touches `K`.
pub fn section_area(k: &Polyhedron, t: &Plane) -> f64 {
    section_polygon(k, t).map_or(0.0, |p| polygon_area(&p, &t.normal))
}
