//! Monte Carlo reference distribution of square-root section areas.
//!
//! For a reference particle `K`, `Z = area(K ∩ T)` with `T` an IUR plane has
//! CDF `G_K`; `√Z` has CDF `G_K^S` and density `g_K^S`. Neither has a closed
//! form for general polyhedra, so both are represented from a large sample:
//! the CDF empirically and the density by a reflected Gaussian KDE on a
//! uniform grid over `[0, max √Z]`.

mod cache;
mod kde;

use std::f64::consts::PI;

use rand::Rng;
use rayon::prelude::*;

pub use cache::{load_reference, load_reference_for, save_reference, CACHE_MAGIC, CACHE_VERSION};
pub use kde::silverman_bandwidth;

use crate::error::{Error, Result};
use crate::geometry::{IurSampler, Polyhedron, ShapeKey};
use crate::rng::SeedRng;

/// Default number of KDE grid nodes.
pub const DEFAULT_GRID_SIZE: usize = 4096;
/// Minimum sample size accepted by [`ReferenceSample::fit`].
pub const MIN_KDE_SAMPLES: usize = 1000;

const CHUNK: usize = 1 << 15;

/// Sorted draws of `√Z`, optionally tagged with the shape they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceSample {
    sqrt_samples: Vec<f64>,
    shape_key: Option<ShapeKey>,
}

impl ReferenceSample {
    /// Wraps raw `√area` draws; sorts them.
    pub fn from_sqrt_areas(mut sqrt_samples: Vec<f64>, shape_key: Option<ShapeKey>) -> Result<Self> {
        if sqrt_samples.is_empty() {
            return Err(Error::TooFewSamples { got: 0, need: 1 });
        }
        if sqrt_samples.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidArgument(
                "square-root areas must be finite and nonnegative".into(),
            ));
        }
        sqrt_samples.sort_by(f64::total_cmp);
        Ok(Self {
            sqrt_samples,
            shape_key,
        })
    }

    pub fn sqrt_samples(&self) -> &[f64] {
        &self.sqrt_samples
    }

    pub fn len(&self) -> usize {
        self.sqrt_samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sqrt_samples.is_empty()
    }

    pub fn shape_key(&self) -> Option<ShapeKey> {
        self.shape_key
    }

    /// Largest observed `√Z`, the estimate of `√a_max`.
    pub fn s_max_hat(&self) -> f64 {
        *self.sqrt_samples.last().expect("non-empty")
    }

    /// Fits the reflected KDE. `bandwidth = None` uses Silverman's rule.
    pub fn fit(self, grid_size: usize, bandwidth: Option<f64>) -> Result<ReferenceDistribution> {
        ReferenceDistribution::fit(self, grid_size, bandwidth)
    }
}

/// Draws `n` IUR section areas of `k` and returns their square roots.
///
/// Work is split into fixed-size chunks; chunk `c` uses `rng.split(c)`, so
/// the result does not depend on the number of worker threads.
pub fn sample_reference(k: &Polyhedron, n: usize, rng: &SeedRng) -> ReferenceSample {
    assert!(n >= 1, "need at least one sample");
    let chunks = n.div_ceil(CHUNK);
    let parts: Vec<Vec<f64>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut local = rng.split(c as u64);
            let mut sampler = IurSampler::new(k);
            let len = CHUNK.min(n - c * CHUNK);
            (0..len)
                .map(|_| sampler.sample_with_area(&mut local).1.sqrt())
                .collect()
        })
        .collect();
    let samples = parts.concat();
    ReferenceSample::from_sqrt_areas(samples, Some(k.shape_key())).expect("areas are positive")
}

/// A law of `√Z` for the reference particle: draws for the forward model
/// and the CDF `G_K^S` for the induced observation law.
pub trait SectionSource: Sync {
    /// One draw of the square root of an IUR section area of the reference particle.
    fn draw_sqrt_area(&self, rng: &mut SeedRng) -> f64;

    fn sqrt_area_cdf(&self, s: f64) -> f64;
}

impl SectionSource for ReferenceSample {
    /// Bootstrap: a uniformly chosen stored draw.
    fn draw_sqrt_area(&self, rng: &mut SeedRng) -> f64 {
        self.sqrt_samples[rng.random_range(0..self.sqrt_samples.len())]
    }

    fn sqrt_area_cdf(&self, s: f64) -> f64 {
        let xs = &self.sqrt_samples;
        xs.partition_point(|&x| x <= s) as f64 / xs.len() as f64
    }
}

impl SectionSource for ReferenceDistribution {
    fn draw_sqrt_area(&self, rng: &mut SeedRng) -> f64 {
        self.sample.draw_sqrt_area(rng)
    }

    fn sqrt_area_cdf(&self, s: f64) -> f64 {
        self.eval_cdf(s)
    }
}

/// A density of `√Z` on `[0, support_max]` for the likelihood.
pub trait ReferenceDensity: Sync {
    fn density(&self, s: f64) -> f64;

    /// Right end of the support (`√a_max`).
    fn support_max(&self) -> f64;
}

impl ReferenceDensity for ReferenceDistribution {
    fn density(&self, s: f64) -> f64 {
        self.eval_density(s)
    }

    fn support_max(&self) -> f64 {
        self.s_max_hat()
    }
}

impl ReferenceDensity for AnalyticBall {
    fn density(&self, s: f64) -> f64 {
        AnalyticBall::density(self, s)
    }

    fn support_max(&self) -> f64 {
        self.s_max()
    }
}

/// The unit ball, for which `G_K` is known in closed form:
/// `g(z) = 1 / (2π √(1 − z/π))` on `(0, π)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct AnalyticBall;

impl AnalyticBall {
    pub fn s_max(&self) -> f64 {
        PI.sqrt()
    }

    /// Density of `√Z`: `s / (π √(1 − s²/π))`.
    pub fn density(&self, s: f64) -> f64 {
        if s <= 0.0 || s >= self.s_max() {
            return 0.0;
        }
        s / (PI * (1.0 - s * s / PI).sqrt())
    }

    /// CDF of `√Z`: `1 − √(1 − s²/π)`.
    pub fn cdf(&self, s: f64) -> f64 {
        if s <= 0.0 {
            0.0
        } else if s >= self.s_max() {
            1.0
        } else {
            1.0 - (1.0 - s * s / PI).sqrt()
        }
    }

    /// `n` exact draws; the plane offset is uniform on `[0, 1]` and the
    /// section is a disc of radius `√(1 − d²)`.
    pub fn sample(&self, n: usize, rng: &mut SeedRng) -> ReferenceSample {
        let v: Vec<f64> = (0..n).map(|_| self.draw_sqrt_area(rng)).collect();
        ReferenceSample::from_sqrt_areas(v, None).expect("positive draws")
    }
}

impl SectionSource for AnalyticBall {
    fn draw_sqrt_area(&self, rng: &mut SeedRng) -> f64 {
        loop {
            let d: f64 = rng.random();
            let s = (PI * (1.0 - d * d)).sqrt();
            if s > 0.0 {
                return s;
            }
        }
    }

    fn sqrt_area_cdf(&self, s: f64) -> f64 {
        self.cdf(s)
    }
}

/// Fitted reference distribution: sorted `√Z` draws, the KDE of their
/// density on a uniform grid over `[0, s_max_hat]`, and the empirical CDF
/// at the grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceDistribution {
    sample: ReferenceSample,
    bandwidth: f64,
    step: f64,
    density: Vec<f64>,
    cdf: Vec<f64>,
}

impl ReferenceDistribution {
    pub fn fit(sample: ReferenceSample, grid_size: usize, bandwidth: Option<f64>) -> Result<Self> {
        if sample.len() < MIN_KDE_SAMPLES {
            return Err(Error::TooFewSamples {
                got: sample.len(),
                need: MIN_KDE_SAMPLES,
            });
        }
        if grid_size < 16 {
            return Err(Error::InvalidArgument("grid_size must be at least 16".into()));
        }
        let xs = sample.sqrt_samples();
        let s_max = sample.s_max_hat();
        if !(s_max > 0.0) || xs[0] == s_max {
            return Err(Error::DegenerateSample(
                "all reference draws are equal; the density has no spread".into(),
            ));
        }
        let bandwidth = match bandwidth {
            Some(h) if h > 0.0 && h.is_finite() => h,
            Some(h) => return Err(Error::InvalidArgument(format!("bad bandwidth {h}"))),
            None => silverman_bandwidth(xs)?,
        };
        let step = s_max / (grid_size - 1) as f64;
        let density = kde::reflected_gaussian_kde(xs, grid_size, step, bandwidth);
        let mut cdf = Vec::with_capacity(grid_size);
        let n = xs.len() as f64;
        let mut k = 0usize;
        for i in 0..grid_size {
            let node = if i + 1 == grid_size { s_max } else { i as f64 * step };
            while k < xs.len() && xs[k] <= node {
                k += 1;
            }
            cdf.push(k as f64 / n);
        }
        Ok(Self {
            sample,
            bandwidth,
            step,
            density,
            cdf,
        })
    }

    pub fn sample(&self) -> &ReferenceSample {
        &self.sample
    }

    pub fn sqrt_samples(&self) -> &[f64] {
        self.sample.sqrt_samples()
    }

    pub fn shape_key(&self) -> Option<ShapeKey> {
        self.sample.shape_key()
    }

    pub fn s_max_hat(&self) -> f64 {
        self.sample.s_max_hat()
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn grid_size(&self) -> usize {
        self.density.len()
    }

    /// Grid spacing.
    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn grid(&self) -> impl Iterator<Item = f64> + '_ {
        let last = self.density.len() - 1;
        (0..=last).map(move |i| if i == last { self.s_max_hat() } else { i as f64 * self.step })
    }

    pub fn density_values(&self) -> &[f64] {
        &self.density
    }

    pub fn cdf_values(&self) -> &[f64] {
        &self.cdf
    }

    /// KDE density at `s` by linear interpolation between grid nodes; zero
    /// outside `[0, s_max_hat]`.
    #[inline]
    pub fn eval_density(&self, s: f64) -> f64 {
        if !(s >= 0.0) || s > self.s_max_hat() {
            return 0.0;
        }
        let pos = s / self.step;
        let i = pos as usize;
        let last = self.density.len() - 1;
        if i >= last {
            return self.density[last];
        }
        let frac = pos - i as f64;
        let (a, b) = (self.density[i], self.density[i + 1]);
        (a + frac * (b - a)).max(0.0)
    }

    /// Empirical CDF of the stored draws at `s`.
    pub fn eval_cdf(&self, s: f64) -> f64 {
        self.sample.sqrt_area_cdf(s)
    }

    /// Largest grid abscissa `τ` such that the density is nondecreasing on
    /// the nodes in `[0, τ]` up to `tol`: no node falls more than `tol`
    /// below the running maximum.
    pub fn initial_monotone_extent(&self, tol: f64) -> f64 {
        let mut running = f64::NEG_INFINITY;
        let mut k = 0;
        for (i, &v) in self.density.iter().enumerate() {
            if v < running - tol {
                break;
            }
            running = running.max(v);
            k = i;
        }
        k as f64 * self.step
    }

    /// Trapezoid integral of the grid density.
    pub fn density_integral(&self) -> f64 {
        kde::trapezoid(&self.density, self.step, self.s_max_hat())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_one_sample, ks_two_sample};

    fn ball_reference(n: usize, seed: u64, bandwidth: Option<f64>) -> ReferenceDistribution {
        let mut rng = SeedRng::new(seed);
        AnalyticBall.sample(n, &mut rng).fit(DEFAULT_GRID_SIZE, bandwidth).unwrap()
    }

    #[test]
    fn single_sample_lies_in_support() {
        let c = Polyhedron::cube();
        let s = sample_reference(&c, 1, &SeedRng::new(1));
        assert_eq!(s.len(), 1);
        let v = s.sqrt_samples()[0];
        assert!(v > 0.0 && v <= 2f64.sqrt().sqrt() + 1e-12);
    }

    #[test]
    fn sample_reference_is_deterministic() {
        let d = Polyhedron::dodecahedron();
        let a = sample_reference(&d, 70_000, &SeedRng::new(5));
        let b = sample_reference(&d, 70_000, &SeedRng::new(5));
        assert_eq!(a, b);
    }

    #[test]
    fn scaled_body_scales_samples() {
        let t = Polyhedron::tetrahedron();
        let a = sample_reference(&t, 100_000, &SeedRng::new(2));
        let b = sample_reference(&t.scaled(2.0), 100_000, &SeedRng::new(3));
        let doubled: Vec<f64> = a.sqrt_samples().iter().map(|s| 2.0 * s).collect();
        assert!(ks_two_sample(&doubled, b.sqrt_samples()) < 0.01);
    }

    #[test]
    fn eval_density_interpolates_and_vanishes_outside() {
        let r = ball_reference(20_000, 4, None);
        let nodes: Vec<f64> = r.grid().collect();
        for i in [0, 10, 1000, r.grid_size() - 1] {
            assert_eq!(r.eval_density(nodes[i]), r.density_values()[i]);
        }
        let mid = (nodes[100] + nodes[101]) / 2.0;
        let avg = (r.density_values()[100] + r.density_values()[101]) / 2.0;
        assert!((r.eval_density(mid) - avg).abs() < 1e-12);
        assert_eq!(r.eval_density(r.s_max_hat() * 1.0001), 0.0);
        assert_eq!(r.eval_density(-0.1), 0.0);
    }

    #[test]
    fn eval_cdf_order_statistics() {
        let r = ball_reference(10_001, 5, None);
        let xs = r.sqrt_samples();
        assert_eq!(r.eval_cdf(xs[0] / 2.0), 0.0);
        assert_eq!(r.eval_cdf(xs[xs.len() - 1]), 1.0);
        let med = xs[xs.len() / 2];
        assert!((r.eval_cdf(med) - 0.5).abs() <= 1.0 / xs.len() as f64);
    }

    #[test]
    fn fitted_invariants() {
        let r = ball_reference(50_000, 6, None);
        assert!(r.density_values().iter().all(|&v| v >= 0.0));
        assert!((r.density_integral() - 1.0).abs() < 1e-3);
        assert!(r.cdf_values().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*r.cdf_values().last().unwrap(), 1.0);
        assert!(r.sqrt_samples().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn too_few_or_degenerate_samples() {
        let few = ReferenceSample::from_sqrt_areas(vec![1.0; 10], None).unwrap();
        assert!(matches!(few.fit(256, None), Err(Error::TooFewSamples { .. })));
        let flat = ReferenceSample::from_sqrt_areas(vec![0.7; 5000], None).unwrap();
        assert!(matches!(flat.fit(256, None), Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn analytic_ball_draws_match_cdf() {
        let mut rng = SeedRng::new(7);
        let s = AnalyticBall.sample(100_000, &mut rng);
        assert!(ks_one_sample(s.sqrt_samples(), |x| AnalyticBall.cdf(x)) < 0.006);
    }

    #[test]
    fn kde_of_ball_tracks_analytic_density() {
        // Interior of the support, away from the integrable spike at √π.
        let r = ball_reference(1_000_000, 8, Some(0.012));
        let hi = 0.95 * PI.sqrt();
        let mut worst: f64 = 0.0;
        for s in r.grid().filter(|&s| s >= 0.05 && s <= hi) {
            worst = worst.max((r.eval_density(s) - AnalyticBall.density(s)).abs());
        }
        assert!(worst < 0.02, "max deviation {worst}");
    }

    #[test]
    fn grid_refinement_is_self_consistent() {
        let sample = sample_reference(&Polyhedron::dodecahedron(), 200_000, &SeedRng::new(9));
        let coarse = sample.clone().fit(2048, None).unwrap();
        let fine = sample.fit(4096, Some(coarse.bandwidth())).unwrap();
        let mut worst: f64 = 0.0;
        for k in 0..2000 {
            let s = coarse.s_max_hat() * k as f64 / 2000.0;
            worst = worst.max((coarse.eval_density(s) - fine.eval_density(s)).abs());
        }
        assert!(worst < 1e-3, "{worst}");
    }

    #[test]
    fn initial_monotonicity_for_builtin_shapes() {
        for shape in [Polyhedron::cube(), Polyhedron::dodecahedron(), Polyhedron::tetrahedron()] {
            let r = sample_reference(&shape, 1_000_000, &SeedRng::new(10))
                .fit(DEFAULT_GRID_SIZE, None)
                .unwrap();
            // Tolerance of a few KDE standard errors at this sample size.
            let tau = r.initial_monotone_extent(0.01);
            assert!(tau > 0.25 * r.s_max_hat(), "tau = {tau}");
        }
    }
}
