use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;

use nalgebra::Matrix3;
use sha2::{Digest, Sha256};

use super::{Vec3, TAU_GEOM};
use crate::error::{Error, Result};

/// Content hash of a polyhedron (vertex coordinates and face lists).
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ShapeKey(pub [u8; 32]);

impl fmt::Debug for ShapeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ShapeKey({self})")
    }
}

impl fmt::Display for ShapeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in &self.0[..8] {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

/// A closed convex polyhedron with outward-oriented planar faces.
///
/// Immutable once constructed; every constructor validates convexity,
/// closedness and positive volume.
#[derive(Clone, Debug)]
pub struct Polyhedron {
    vertices: Vec<Vec3>,
    faces: Vec<Vec<usize>>,
    edges: Vec<(usize, usize)>,
    centroid: Vec3,
    radius: f64,
}

impl Polyhedron {
    /// Builds and validates a polyhedron. Faces whose vertex cycle winds
    /// inward are reversed.
    pub fn new(vertices: Vec<Vec3>, faces: Vec<Vec<usize>>) -> Result<Self> {
        if vertices.len() < 4 {
            return Err(Error::InvalidPolyhedron(format!(
                "need at least 4 vertices, got {}",
                vertices.len()
            )));
        }
        if faces.len() < 4 {
            return Err(Error::InvalidPolyhedron(format!(
                "need at least 4 faces, got {}",
                faces.len()
            )));
        }
        if vertices.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return Err(Error::InvalidPolyhedron("non-finite vertex coordinate".into()));
        }
        let mut used = vec![false; vertices.len()];
        for (fi, face) in faces.iter().enumerate() {
            if face.len() < 3 {
                return Err(Error::InvalidPolyhedron(format!("face {fi} has fewer than 3 vertices")));
            }
            for &v in face {
                if v >= vertices.len() {
                    return Err(Error::InvalidPolyhedron(format!(
                        "face {fi} references vertex {v}, but only {} exist",
                        vertices.len()
                    )));
                }
                used[v] = true;
            }
            let mut sorted = face.clone();
            sorted.sort_unstable();
            if sorted.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::InvalidPolyhedron(format!("face {fi} repeats a vertex")));
            }
        }
        if let Some(v) = used.iter().position(|u| !u) {
            return Err(Error::InvalidPolyhedron(format!("vertex {v} is not used by any face")));
        }

        let centroid = vertices.iter().sum::<Vec3>() / vertices.len() as f64;
        let radius = vertices.iter().map(|v| (v - centroid).norm()).fold(0.0, f64::max);
        let tol = TAU_GEOM * radius.max(1.0);

        let mut faces = faces;
        for (fi, face) in faces.iter_mut().enumerate() {
            let normal = newell_normal(&vertices, face);
            let len = normal.norm();
            if len <= tol * tol {
                return Err(Error::InvalidPolyhedron(format!("face {fi} has zero area")));
            }
            let normal = normal / len;
            let anchor = face_center(&vertices, face);
            if face.iter().any(|&v| normal.dot(&(vertices[v] - anchor)).abs() > tol) {
                return Err(Error::InvalidPolyhedron(format!("face {fi} is not planar")));
            }
            let normal = if normal.dot(&(anchor - centroid)) < 0.0 {
                face.reverse();
                -normal
            } else {
                normal
            };
            let lowest = (0..face.len()).min_by_key(|&k| face[k]).expect("non-empty");
            face.rotate_left(lowest);
            if vertices.iter().any(|v| normal.dot(&(v - anchor)) > tol) {
                return Err(Error::InvalidPolyhedron(format!(
                    "not convex: a vertex lies outside the plane of face {fi}"
                )));
            }
        }

        // Closed and consistently oriented: every directed edge appears
        // exactly once and its reverse exactly once.
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for face in &faces {
            for k in 0..face.len() {
                let e = (face[k], face[(k + 1) % face.len()]);
                *directed.entry(e).or_default() += 1;
            }
        }
        let mut edges = Vec::with_capacity(directed.len() / 2);
        for (&(a, b), &count) in &directed {
            if count != 1 || directed.get(&(b, a)) != Some(&1) {
                return Err(Error::InvalidPolyhedron(format!(
                    "open or non-manifold mesh at edge ({a}, {b})"
                )));
            }
            if a < b {
                edges.push((a, b));
            }
        }
        edges.sort_unstable();

        let poly = Self {
            vertices,
            faces,
            edges,
            centroid,
            radius,
        };
        let vol = poly.volume();
        if !(vol > tol * tol * tol) {
            return Err(Error::Degenerate(vol));
        }
        Ok(poly)
    }

    /// Convex hull of a small point set, computed by exhaustive plane search.
    /// Every point must be a hull vertex. Intended for the built-in shapes
    /// (O(n⁴) in the number of points).
    pub fn from_convex_points(points: Vec<Vec3>) -> Result<Self> {
        let n = points.len();
        let centroid = points.iter().sum::<Vec3>() / n.max(1) as f64;
        let radius = points.iter().map(|v| (v - centroid).norm()).fold(0.0, f64::max);
        let tol = TAU_GEOM * radius.max(1.0) * 1e3;
        let mut planes: Vec<(Vec3, f64)> = Vec::new();
        let mut faces = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                for k in j + 1..n {
                    let normal = (points[j] - points[i]).cross(&(points[k] - points[i]));
                    let len = normal.norm();
                    if len < tol {
                        continue;
                    }
                    let mut normal = normal / len;
                    if normal.dot(&(points[i] - centroid)) < 0.0 {
                        normal = -normal;
                    }
                    let offset = normal.dot(&points[i]);
                    if points.iter().any(|p| normal.dot(p) - offset > tol) {
                        continue;
                    }
                    if planes
                        .iter()
                        .any(|(m, o)| (m - normal).norm() < 1e-6 && (o - offset).abs() < 1e-6)
                    {
                        continue;
                    }
                    planes.push((normal, offset));
                    let on_plane: Vec<usize> = (0..n)
                        .filter(|&q| (normal.dot(&points[q]) - offset).abs() <= tol)
                        .collect();
                    faces.push(order_ccw(&points, &on_plane, &normal));
                }
            }
        }
        Self::new(points, faces)
    }

    /// Axis-aligned cube with side 1 centred at the origin (unit volume).
    pub fn cube() -> Self {
        let mut pts = Vec::with_capacity(8);
        for &x in &[-0.5, 0.5] {
            for &y in &[-0.5, 0.5] {
                for &z in &[-0.5, 0.5] {
                    pts.push(Vec3::new(x, y, z));
                }
            }
        }
        Self::from_convex_points(pts).expect("cube is valid")
    }

    /// Regular tetrahedron scaled to unit volume.
    pub fn tetrahedron() -> Self {
        let pts = vec![
            Vec3::new(1.0, 1.0, 1.0),
            Vec3::new(1.0, -1.0, -1.0),
            Vec3::new(-1.0, 1.0, -1.0),
            Vec3::new(-1.0, -1.0, 1.0),
        ];
        Self::from_convex_points(pts)
            .and_then(|p| p.normalize_to_unit_volume())
            .expect("tetrahedron is valid")
    }

    /// Regular dodecahedron with edge length 1.
    pub fn dodecahedron_unit_edge() -> Self {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let inv = 1.0 / phi;
        let mut pts = Vec::with_capacity(20);
        for &x in &[-1.0, 1.0] {
            for &y in &[-1.0, 1.0] {
                for &z in &[-1.0, 1.0] {
                    pts.push(Vec3::new(x, y, z));
                }
            }
        }
        for &a in &[-1.0, 1.0] {
            for &b in &[-1.0, 1.0] {
                pts.push(Vec3::new(0.0, a * inv, b * phi));
                pts.push(Vec3::new(a * inv, b * phi, 0.0));
                pts.push(Vec3::new(a * phi, 0.0, b * inv));
            }
        }
        // Edge length of this vertex set is 2/phi.
        Self::from_convex_points(pts)
            .expect("dodecahedron is valid")
            .scaled(phi / 2.0)
    }

    /// Regular dodecahedron scaled to unit volume.
    pub fn dodecahedron() -> Self {
        Self::dodecahedron_unit_edge()
            .normalize_to_unit_volume()
            .expect("dodecahedron is valid")
    }

    /// Geodesic polyhedron inscribed in the unit sphere: an icosahedron whose
    /// triangles are split four-way `level` times and projected outward.
    pub fn geodesic_sphere(level: u32) -> Self {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let mut pts = Vec::with_capacity(12);
        for &a in &[-1.0, 1.0] {
            for &b in &[-1.0, 1.0] {
                pts.push(Vec3::new(0.0, a, b * phi).normalize());
                pts.push(Vec3::new(a, b * phi, 0.0).normalize());
                pts.push(Vec3::new(a * phi, 0.0, b).normalize());
            }
        }
        let ico = Self::from_convex_points(pts).expect("icosahedron is valid");
        let mut vertices = ico.vertices;
        let mut faces = ico.faces;
        for _ in 0..level {
            let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
            let mut next = Vec::with_capacity(faces.len() * 4);
            for f in &faces {
                let (a, b, c) = (f[0], f[1], f[2]);
                let mut mid = |u: usize, v: usize| -> usize {
                    let key = (u.min(v), u.max(v));
                    *midpoints.entry(key).or_insert_with(|| {
                        vertices.push(((vertices[u] + vertices[v]) / 2.0).normalize());
                        vertices.len() - 1
                    })
                };
                let ab = mid(a, b);
                let bc = mid(b, c);
                let ca = mid(c, a);
                next.push(vec![a, ab, ca]);
                next.push(vec![b, bc, ab]);
                next.push(vec![c, ca, bc]);
                next.push(vec![ab, bc, ca]);
            }
            faces = next;
        }
        Self::new(vertices, faces).expect("geodesic sphere is valid")
    }

    /// Reads an ASCII OFF file.
    pub fn load_off(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        Self::parse_off(&text).map_err(|e| match e {
            Error::Parse { line, msg, .. } => Error::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            },
            other => other,
        })
    }

    /// Parses ASCII OFF text. Comments (`#`) and blank lines are skipped.
    pub fn parse_off(text: &str) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: "<off>".into(),
            line,
            msg,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());

        let (ln, header) = lines.next().ok_or_else(|| perr(1, "empty file".into()))?;
        let mut header_tokens = header.split_whitespace();
        if header_tokens.next() != Some("OFF") {
            return Err(perr(ln, format!("expected 'OFF' header, found '{header}'")));
        }
        let rest: Vec<&str> = header_tokens.collect();
        let (ln, counts) = if rest.is_empty() {
            let (ln, l) = lines.next().ok_or_else(|| perr(ln, "missing counts".into()))?;
            (ln, l.split_whitespace().collect::<Vec<_>>())
        } else {
            (ln, rest)
        };
        if counts.len() < 2 {
            return Err(perr(ln, "expected 'nV nF nE'".into()));
        }
        let parse_count = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| perr(ln, format!("bad count '{s}'")))
        };
        let nv = parse_count(counts[0])?;
        let nf = parse_count(counts[1])?;

        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| perr(ln, "unexpected end of file in vertex list".into()))?;
            let xs: Vec<f64> = l
                .split_whitespace()
                .take(3)
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| perr(ln, format!("bad vertex '{l}'")))?;
            if xs.len() != 3 {
                return Err(perr(ln, format!("vertex needs 3 coordinates: '{l}'")));
            }
            vertices.push(Vec3::new(xs[0], xs[1], xs[2]));
        }
        let mut faces = Vec::with_capacity(nf);
        for _ in 0..nf {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| perr(ln, "unexpected end of file in face list".into()))?;
            let idx: Vec<usize> = l
                .split_whitespace()
                .map(|t| t.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| perr(ln, format!("bad face '{l}'")))?;
            let (&k, rest) = idx
                .split_first()
                .ok_or_else(|| perr(ln, "empty face line".into()))?;
            if rest.len() < k {
                return Err(perr(ln, format!("face declares {k} vertices, found {}", rest.len())));
            }
            faces.push(rest[..k].to_vec());
        }
        Self::new(vertices, faces)
    }

    /// Serializes as ASCII OFF.
    pub fn to_off(&self) -> String {
        let mut out = format!(
            "OFF\n{} {} {}\n",
            self.vertices.len(),
            self.faces.len(),
            self.edges.len()
        );
        for v in &self.vertices {
            out.push_str(&format!("{:?} {:?} {:?}\n", v.x, v.y, v.z));
        }
        for f in &self.faces {
            out.push_str(&f.len().to_string());
            for i in f {
                out.push_str(&format!(" {i}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[Vec<usize>] {
        &self.faces
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Mean of the vertices; an interior point.
    pub fn centroid(&self) -> Vec3 {
        self.centroid
    }

    /// Largest distance from [`Self::centroid`] to a vertex.
    pub fn enclosing_radius(&self) -> f64 {
        self.radius
    }

    /// Sum of signed tetrahedra volumes spanned by the centroid and a fan
    /// triangulation of each face.
    pub fn volume(&self) -> f64 {
        let c = self.centroid;
        let mut vol = 0.0;
        for f in &self.faces {
            let a = self.vertices[f[0]] - c;
            for k in 1..f.len() - 1 {
                let b = self.vertices[f[k]] - c;
                let d = self.vertices[f[k + 1]] - c;
                vol += a.dot(&b.cross(&d));
            }
        }
        vol / 6.0
    }

    /// Total surface area.
    pub fn surface_area(&self) -> f64 {
        self.faces
            .iter()
            .map(|f| newell_normal(&self.vertices, f).norm() / 2.0)
            .sum()
    }

    /// Width (length of the orthogonal projection) in the given unit direction.
    pub fn width(&self, direction: &Vec3) -> f64 {
        let (lo, hi) = self.support_interval(direction);
        hi - lo
    }

    /// `(min, max)` of vertex projections onto `direction`.
    pub fn support_interval(&self, direction: &Vec3) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for v in &self.vertices {
            let h = v.dot(direction);
            lo = lo.min(h);
            hi = hi.max(h);
        }
        (lo, hi)
    }

    /// Largest distance between two vertices.
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, a) in self.vertices.iter().enumerate() {
            for b in &self.vertices[i + 1..] {
                d = d.max((a - b).norm());
            }
        }
        d
    }

    /// The body scaled by `factor` about the origin.
    pub fn scaled(&self, factor: f64) -> Self {
        assert!(factor > 0.0 && factor.is_finite(), "scale factor must be positive");
        self.map_vertices(|v| v * factor)
    }

    /// Rigid rotation about the origin by a proper rotation matrix.
    pub fn rotated(&self, rotation: &Matrix3<f64>) -> Self {
        self.map_vertices(|v| rotation * v)
    }

    pub fn translated(&self, offset: &Vec3) -> Self {
        self.map_vertices(|v| v + offset)
    }

    /// Scales by `volume^(-1/3)` so the result has volume 1.
    pub fn normalize_to_unit_volume(&self) -> Result<Self> {
        let vol = self.volume();
        if !(vol > 0.0) || !vol.is_finite() {
            return Err(Error::Degenerate(vol));
        }
        Ok(self.scaled(vol.powf(-1.0 / 3.0)))
    }

    /// SHA-256 over the little-endian vertex coordinates and face indices.
    pub fn shape_key(&self) -> ShapeKey {
        let mut h = Sha256::new();
        h.update((self.vertices.len() as u64).to_le_bytes());
        for v in &self.vertices {
            for c in v.iter() {
                h.update(c.to_le_bytes());
            }
        }
        h.update((self.faces.len() as u64).to_le_bytes());
        for f in &self.faces {
            h.update((f.len() as u64).to_le_bytes());
            for &i in f {
                h.update((i as u64).to_le_bytes());
            }
        }
        let mut key = [0u8; 32];
        key.copy_from_slice(h.finalize().as_slice());
        ShapeKey(key)
    }

    fn map_vertices(&self, f: impl Fn(&Vec3) -> Vec3) -> Self {
        let vertices: Vec<Vec3> = self.vertices.iter().map(f).collect();
        let centroid = vertices.iter().sum::<Vec3>() / vertices.len() as f64;
        let radius = vertices.iter().map(|v| (v - centroid).norm()).fold(0.0, f64::max);
        Self {
            vertices,
            faces: self.faces.clone(),
            edges: self.edges.clone(),
            centroid,
            radius,
        }
    }
}

fn newell_normal(vertices: &[Vec3], face: &[usize]) -> Vec3 {
    let mut n = Vec3::zeros();
    for k in 0..face.len() {
        let a = vertices[face[k]];
        let b = vertices[face[(k + 1) % face.len()]];
        n.x += (a.y - b.y) * (a.z + b.z);
        n.y += (a.z - b.z) * (a.x + b.x);
        n.z += (a.x - b.x) * (a.y + b.y);
    }
    n
}

fn face_center(vertices: &[Vec3], face: &[usize]) -> Vec3 {
    face.iter().map(|&i| vertices[i]).sum::<Vec3>() / face.len() as f64
}

/// Orders coplanar points counter-clockwise seen from the tip of `normal`.
fn order_ccw(points: &[Vec3], idx: &[usize], normal: &Vec3) -> Vec<usize> {
    let center = idx.iter().map(|&i| points[i]).sum::<Vec3>() / idx.len() as f64;
    let (u, w) = super::section::plane_basis(normal);
    let mut keyed: Vec<(f64, usize)> = idx
        .iter()
        .map(|&i| {
            let d = points[i] - center;
            (d.dot(&w).atan2(d.dot(&u)), i)
        })
        .collect();
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    keyed.into_iter().map(|(_, i)| i).collect()
}
