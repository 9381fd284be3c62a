use rand::Rng;
use rand_distr::StandardNormal;

use super::section::{polygon_area, section_polygon};
use super::{Plane, Polyhedron, Vec3};
use crate::error::{Error, Result};
use crate::rng::SeedRng;

/// Default number of directions for Monte Carlo mean width.
pub const DEFAULT_MEAN_WIDTH_DIRECTIONS: usize = 1_000_000;

/// Uniform direction on the upper unit hemisphere: a normalized standard
/// normal vector with its sign flipped if the third component is negative.
pub fn sample_hemisphere<R: Rng + ?Sized>(rng: &mut R) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        let len = v.norm();
        if len > 1e-12 {
            let v = v / len;
            return if v.z < 0.0 { -v } else { v };
        }
    }
}

/// Rejection sampler for IUR planes hitting a fixed polyhedron.
///
/// Directions are uniform on the hemisphere and offsets uniform on
/// `[-R, R]` about the centroid, where `R` is the enclosing radius; a pair
/// is kept only if the plane cuts the body in a polygon of positive area.
/// The accepted pairs are uniform on the set of hitting planes, so the
/// direction marginal is proportional to the width.
#[derive(Clone, Debug)]
pub struct IurSampler<'a> {
    body: &'a Polyhedron,
    centered: Vec<Vec3>,
    attempts: u64,
    accepted: u64,
}

impl<'a> IurSampler<'a> {
    pub fn new(body: &'a Polyhedron) -> Self {
        let c = body.centroid();
        Self {
            body,
            centered: body.vertices().iter().map(|v| v - c).collect(),
            attempts: 0,
            accepted: 0,
        }
    }

    /// Draws a plane and the area of the section it cuts.
    pub fn sample_with_area(&mut self, rng: &mut SeedRng) -> (Plane, f64) {
        let r = self.body.enclosing_radius();
        let c = self.body.centroid();
        loop {
            self.attempts += 1;
            let theta = sample_hemisphere(rng);
            let s: f64 = rng.random_range(-r..r);
            let (lo, hi) = self
                .centered
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
                    let h = v.dot(&theta);
                    (a.min(h), b.max(h))
                });
            if !(s > lo && s < hi) {
                continue;
            }
            let plane = Plane::new(theta, s + theta.dot(&c)).expect("unit normal");
            if let Some(poly) = section_polygon(self.body, &plane) {
                let area = polygon_area(&poly, &plane.normal());
                if area > 0.0 {
                    self.accepted += 1;
                    return (plane, area);
                }
            }
        }
    }

    pub fn sample(&mut self, rng: &mut SeedRng) -> Plane {
        self.sample_with_area(rng).0
    }

    /// Fraction of proposals accepted so far; estimates `b̄(K) / (2R)`.
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            return f64::NAN;
        }
        self.accepted as f64 / self.attempts as f64
    }

    pub fn attempts(&self) -> u64 {
        self.attempts
    }
}

/// Draws one IUR plane hitting `k`.
pub fn sample_iur_plane(k: &Polyhedron, rng: &mut SeedRng) -> Plane {
    IurSampler::new(k).sample(rng)
}

/// Monte Carlo mean width: the average width over `n_dirs` uniform
/// hemisphere directions.
pub fn mean_width(k: &Polyhedron, rng: &mut SeedRng, n_dirs: usize) -> f64 {
    assert!(n_dirs >= 1, "n_dirs must be at least 1");
    let mut total = 0.0;
    for _ in 0..n_dirs {
        total += k.width(&sample_hemisphere(rng));
    }
    total / n_dirs as f64
}

/// Probability that an IUR plane hitting `container` also hits
/// `scale · particle`: the mean-width ratio. Both mean widths are estimated
/// from the same direction sample.
pub fn hitting_probability(
    particle: &Polyhedron,
    container: &Polyhedron,
    scale: f64,
    rng: &mut SeedRng,
    n_dirs: usize,
) -> Result<f64> {
    if !(scale > 0.0) {
        return Err(Error::InvalidArgument("scale must be positive".into()));
    }
    if scale * particle.diameter() > container.diameter() * (1.0 + 1e-12) {
        return Err(Error::DoesNotFit(scale * particle.diameter() / container.diameter()));
    }
    let (mut wp, mut wc) = (0.0, 0.0);
    for _ in 0..n_dirs.max(1) {
        let d = sample_hemisphere(rng);
        wp += particle.width(&d);
        wc += container.width(&d);
    }
    let p = scale * wp / wc;
    if p > 1.0 + 1e-12 {
        return Err(Error::DoesNotFit(p));
    }
    Ok(p.min(1.0))
}
