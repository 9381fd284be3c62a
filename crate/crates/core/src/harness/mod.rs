//! Experiment runner: reference tables, forward simulation, single
//! estimates and the replicated simulation study.
//!
//! Every routine is a pure function of its inputs and seed. Replication `k`
//! of an experiment seeded with `seed` draws from `SeedRng::new(seed).split(k)`;
//! within a replication, stream 0 drives the IUR section draws and stream 1
//! the size draws.

mod io;
mod tables;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bias::{ParametricSize, StepCdf};
use crate::error::{Error, Result};
use crate::geometry::Polyhedron;
use crate::refdist::{load_reference_for, sample_reference, save_reference, ReferenceDistribution, DEFAULT_GRID_SIZE};
use crate::regularize::{apply_truncation, TruncationRule};
use crate::rng::SeedRng;
use crate::stats::{mean, nearest_rank};
use crate::unfold::{fit, AlphaMatrix, Observations, SolverConfig};

pub use io::{parse_areas, read_areas, write_areas_csv, write_density_csv, EstimateReport};
pub use tables::{reproduce_table, table_csv, table_spec, timing, TableKind, TableOverrides, TableRow, TableSpec, STUDY_LOGNORMAL};

/// Points of the uniform grid used by [`sup_error`].
pub const ERROR_GRID_POINTS: usize = 10_000;

/// Default reference sample size for simulation studies and shipped references.
pub const DEFAULT_REFERENCE_SAMPLES: usize = 10_000_000;

/// Geodesic refinement level of the `ball` shape.
pub const BALL_LEVEL: u32 = 4;

/// Reference particle, always scaled to unit volume.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Shape {
    Cube,
    Dodecahedron,
    Tetrahedron,
    /// Fine geodesic polyhedron approximating a ball.
    Ball,
    Off(PathBuf),
}

impl Shape {
    pub fn polyhedron(&self) -> Result<Polyhedron> {
        match self {
            Shape::Cube => Ok(Polyhedron::cube()),
            Shape::Dodecahedron => Ok(Polyhedron::dodecahedron()),
            Shape::Tetrahedron => Ok(Polyhedron::tetrahedron()),
            Shape::Ball => Polyhedron::geodesic_sphere(BALL_LEVEL).normalize_to_unit_volume(),
            Shape::Off(path) => Polyhedron::load_off(path)?.normalize_to_unit_volume(),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Shape::Cube => f.write_str("cube"),
            Shape::Dodecahedron => f.write_str("dodecahedron"),
            Shape::Tetrahedron => f.write_str("tetrahedron"),
            Shape::Ball => f.write_str("ball"),
            Shape::Off(p) => write!(f, "{}", p.display()),
        }
    }
}

impl FromStr for Shape {
    type Err = Error;

    /// Named shapes, or a path to an OFF file.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cube" => Ok(Shape::Cube),
            "dodecahedron" => Ok(Shape::Dodecahedron),
            "tetrahedron" => Ok(Shape::Tetrahedron),
            "ball" | "sphere" => Ok(Shape::Ball),
            "" => Err(Error::InvalidArgument("empty shape".into())),
            _ if s.to_ascii_lowercase().ends_with(".off") => Ok(Shape::Off(PathBuf::from(s.trim()))),
            other => Err(Error::InvalidArgument(format!(
                "unknown shape `{other}` (expected cube, dodecahedron, tetrahedron, ball or an .off path)"
            ))),
        }
    }
}

impl TryFrom<String> for Shape {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Shape> for String {
    fn from(s: Shape) -> String {
        s.to_string()
    }
}

/// Where the reference distribution comes from: a cache file, or a number
/// of IUR draws to generate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReferenceSpec {
    Samples(usize),
    Cache(PathBuf),
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        ReferenceSpec::Samples(DEFAULT_REFERENCE_SAMPLES)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub shape: Shape,
    pub size_family: ParametricSize,
    pub n: usize,
    pub replications: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    pub reference: ReferenceSpec,
    /// Seed of generated references (independent of the data seed).
    pub reference_seed: u64,
    pub truncation: TruncationRule,
    /// Directory for generated reference caches, keyed by shape hash.
    pub cache_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            shape: Shape::Dodecahedron,
            size_family: ParametricSize::STANDARD_EXPONENTIAL,
            n: 1000,
            replications: 100,
            seed: 1,
            solver: SolverConfig::default(),
            reference: ReferenceSpec::default(),
            reference_seed: 0,
            truncation: TruncationRule::Select,
            cache_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::InvalidArgument("replications must be at least 1".into()));
        }
        if self.n < 2 {
            return Err(Error::InvalidArgument("n must be at least 2".into()));
        }
        self.solver.validate()
    }
}

/// Loads or generates the reference distribution for `shape`.
///
/// Generated references are cached under `cache_dir` as
/// `<shape hash>-<samples>-<seed>.szuf`; a cache built for another shape is
/// rejected.
pub fn prepare_reference(
    shape: &Shape,
    spec: &ReferenceSpec,
    seed: u64,
    cache_dir: Option<&Path>,
) -> Result<ReferenceDistribution> {
    let body = shape.polyhedron()?;
    let key = body.shape_key();
    match spec {
        ReferenceSpec::Cache(path) => load_reference_for(path, key),
        ReferenceSpec::Samples(count) => {
            let path = cache_dir.map(|d| d.join(format!("{}-{count}-{seed}.szuf", hex(&key.0))));
            if let Some(p) = path.as_ref().filter(|p| p.exists()) {
                return load_reference_for(p, key);
            }
            let r = generate_reference(&body, *count, seed)?;
            if let Some(p) = path {
                if let Some(dir) = p.parent() {
                    std::fs::create_dir_all(dir)?;
                }
                save_reference(&p, &r)?;
            }
            Ok(r)
        }
    }
}

pub fn generate_reference(body: &Polyhedron, count: usize, seed: u64) -> Result<ReferenceDistribution> {
    sample_reference(body, count, &SeedRng::new(seed)).fit(DEFAULT_GRID_SIZE, None)
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// `n` observed square-root section areas `√Z_i · Λ_{b,i}`: fresh IUR
/// sections of `body` (not reference draws) times independent draws from
/// the length-biased size law. Returned in draw order.
pub fn forward_sqrt_areas(body: &Polyhedron, h: &ParametricSize, n: usize, rng: &SeedRng) -> Vec<f64> {
    let z = sample_reference(body, n, &rng.split(0));
    let hb = h.length_biased();
    let mut size_rng = rng.split(1);
    // The reference sample is sorted; the sizes are iid, so pairing keeps
    // the products iid.
    let mut out: Vec<f64> = z.sqrt_samples().iter().map(|&s| s * hb.sample(&mut size_rng)).collect();
    shuffle_by(&mut out, &mut rng.split(2));
    out
}

fn shuffle_by(xs: &mut [f64], rng: &mut SeedRng) {
    use rand::seq::SliceRandom;
    xs.shuffle(rng);
}

/// Section areas (not square roots) for the forward command.
pub fn forward_areas(shape: &Shape, h: &ParametricSize, n: usize, seed: u64) -> Result<Vec<f64>> {
    let body = shape.polyhedron()?;
    Ok(forward_sqrt_areas(&body, h, n, &SeedRng::new(seed)).into_iter().map(|s| s * s).collect())
}

/// `sup_x |F̂(x) − F(x)|` over a uniform grid of [`ERROR_GRID_POINTS`]
/// points on `[0, U]` and both one-sided limits at every jump of either
/// function. `U` covers the estimate's support and the truth up to
/// `1 − 1e-12`.
pub fn sup_error(est: &StepCdf, truth: &ParametricSize) -> f64 {
    sup_error_with_grid(est, truth, ERROR_GRID_POINTS)
}

pub fn sup_error_with_grid(est: &StepCdf, truth: &ParametricSize, grid_points: usize) -> f64 {
    let mut upper = truth.mean().max(1e-300);
    while truth.cdf(upper) < 1.0 - 1e-12 {
        upper *= 2.0;
    }
    let last = *est.support().last().expect("non-empty step CDF");
    let upper = upper.max(last);
    let mut worst: f64 = 0.0;
    for k in 0..=grid_points {
        let x = upper * k as f64 / grid_points as f64;
        worst = worst.max((est.cdf(x) - truth.cdf(x)).abs());
    }
    let mut jumps: Vec<f64> = est.support().to_vec();
    if let ParametricSize::PointMass(c) = truth {
        jumps.push(*c);
    }
    for x in jumps {
        worst = worst.max((est.cdf(x) - truth.cdf(x)).abs());
        worst = worst.max((est.cdf_left(x) - truth.cdf_left(x)).abs());
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub index: usize,
    pub err_hb: f64,
    pub err_h: f64,
    pub t_hat: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Wall-clock seconds of the fit call alone.
    pub fit_seconds: f64,
    pub loglik: f64,
}

/// Mean and nearest-rank 2.5% / 97.5% quantiles.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorSummary {
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
    pub min: f64,
    pub max: f64,
}

impl ErrorSummary {
    pub fn of(values: &[f64]) -> Self {
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Self {
            mean: mean(&v),
            q025: nearest_rank(&v, 0.025),
            q975: nearest_rank(&v, 0.975),
            min: v[0],
            max: v[v.len() - 1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub outcomes: Vec<ReplicationOutcome>,
    pub hb_error: ErrorSummary,
    pub h_error: ErrorSummary,
    pub mean_iterations: f64,
    pub mean_fit_seconds: f64,
    pub converged: usize,
}

impl ExperimentReport {
    fn from_outcomes(config: ExperimentConfig, outcomes: Vec<ReplicationOutcome>) -> Self {
        let hb: Vec<f64> = outcomes.iter().map(|o| o.err_hb).collect();
        let h: Vec<f64> = outcomes.iter().map(|o| o.err_h).collect();
        let iters: Vec<f64> = outcomes.iter().map(|o| o.iterations as f64).collect();
        let secs: Vec<f64> = outcomes.iter().map(|o| o.fit_seconds).collect();
        Self {
            hb_error: ErrorSummary::of(&hb),
            h_error: ErrorSummary::of(&h),
            mean_iterations: mean(&iters),
            mean_fit_seconds: mean(&secs),
            converged: outcomes.iter().filter(|o| o.converged).count(),
            config,
            outcomes,
        }
    }
}

/// One replication: simulate, fit, truncate, score.
pub fn run_replication(
    cfg: &ExperimentConfig,
    body: &Polyhedron,
    reference: &ReferenceDistribution,
    index: usize,
) -> Result<ReplicationOutcome> {
    let rng = SeedRng::new(cfg.seed).split(index as u64);
    let obs = Observations::new(forward_sqrt_areas(body, &cfg.size_family, cfg.n, &rng))?;
    let a = AlphaMatrix::build(reference, obs.values())?;
    let start = Instant::now();
    let state = fit(&a, &cfg.solver)?;
    let fit_seconds = start.elapsed().as_secs_f64();
    let hb_hat = state.to_step_cdf(&a)?;
    let trunc = apply_truncation(&hb_hat, reference.sqrt_samples(), obs.values(), cfg.truncation)?;
    Ok(ReplicationOutcome {
        index,
        err_hb: sup_error(&hb_hat, &cfg.size_family.length_biased()),
        err_h: sup_error(&trunc.h_hat, &cfg.size_family),
        t_hat: trunc.t_hat,
        iterations: state.iteration,
        converged: state.converged,
        fit_seconds,
        loglik: state.loglik,
    })
}

/// Runs all replications (in parallel; results are ordered by index).
pub fn run_experiment(cfg: &ExperimentConfig, reference: &ReferenceDistribution) -> Result<ExperimentReport> {
    cfg.validate()?;
    let body = cfg.shape.polyhedron()?;
    if reference.shape_key() != Some(body.shape_key()) {
        return Err(Error::ShapeMismatch);
    }
    let outcomes = (0..cfg.replications)
        .into_par_iter()
        .map(|k| run_replication(cfg, &body, reference, k))
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport::from_outcomes(cfg.clone(), outcomes))
}

/// End-to-end estimate on observed areas.
pub fn estimate_areas(
    areas: &[f64],
    reference: &ReferenceDistribution,
    solver: &SolverConfig,
    rule: TruncationRule,
) -> Result<EstimateReport> {
    let sqrt: Vec<f64> = areas.iter().map(|a| a.sqrt()).collect();
    let obs = Observations::new(sqrt)?;
    let a = AlphaMatrix::build(reference, obs.values())?;
    let state = fit(&a, solver)?;
    let hb_hat = state.to_step_cdf(&a)?;
    let trunc = apply_truncation(&hb_hat, reference.sqrt_samples(), obs.values(), rule)?;
    Ok(EstimateReport::new(&obs, &state, &hb_hat, &trunc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bias::SizeModel;
    use crate::stats::ks_two_sample;
    use crate::unfold::Algorithm;

    #[test]
    fn shapes_parse_and_are_unit_volume() {
        for name in ["cube", "dodecahedron", "tetrahedron", "ball"] {
            let s: Shape = name.parse().unwrap();
            assert_eq!(s.to_string(), name);
            assert!((s.polyhedron().unwrap().volume() - 1.0).abs() < 1e-9);
        }
        assert_eq!("model.OFF".parse::<Shape>().unwrap(), Shape::Off("model.OFF".into()));
        assert!("pyramid".parse::<Shape>().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ExperimentConfig {
            shape: Shape::Cube,
            size_family: ParametricSize::Lognormal { mu: 2.0, sigma: 0.5 },
            reference: ReferenceSpec::Cache("ref.szuf".into()),
            truncation: TruncationRule::Fixed(0.3),
            ..Default::default()
        };
        let json = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<ExperimentConfig>(&json).unwrap(), cfg);
        let partial: ExperimentConfig = serde_json::from_str(r#"{"n": 250, "reference": 5000}"#).unwrap();
        assert_eq!(partial.n, 250);
        assert_eq!(partial.reference, ReferenceSpec::Samples(5000));
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn config_validation() {
        let cfg = ExperimentConfig { n: 1, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = ExperimentConfig { replications: 0, ..Default::default() };
        assert!(cfg.validate().is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn sup_error_fixtures() {
        let point = StepCdf::point_mass(1.0).unwrap();
        assert_eq!(sup_error(&point, &ParametricSize::PointMass(1.0)), 0.0);
        assert_eq!(sup_error(&point, &ParametricSize::PointMass(1.1)), 1.0);
        // One atom at 0 against a standard exponential: the error is the
        // left limit at infinity, i.e. 1 − F(0) = 1.
        let exp = ParametricSize::STANDARD_EXPONENTIAL;
        let one = StepCdf::point_mass(1.0).unwrap();
        // At x = 1: left limit 0 vs F(1), right limit 1 vs F(1).
        let f1 = exp.cdf(1.0);
        assert!((sup_error(&one, &exp) - f1.max(1.0 - f1)).abs() < 1e-15);
    }

    #[test]
    fn grid_refinement_changes_the_error_little() {
        let exp = ParametricSize::STANDARD_EXPONENTIAL;
        let support: Vec<f64> = (1..=300).map(|k| k as f64 * 0.02).collect();
        let probs: Vec<f64> = support.iter().map(|&x| (-x).exp()).collect();
        let est = StepCdf::from_weights(support, probs).unwrap();
        let coarse = sup_error_with_grid(&est, &exp, ERROR_GRID_POINTS);
        let fine = sup_error_with_grid(&est, &exp, 10 * ERROR_GRID_POINTS);
        assert!((coarse - fine).abs() < 1e-4, "{coarse} vs {fine}");
    }

    #[test]
    fn forward_areas_are_deterministic_and_supported() {
        let one = ParametricSize::PointMass(1.0);
        let a = forward_areas(&Shape::Dodecahedron, &one, 2000, 9).unwrap();
        assert_eq!(a, forward_areas(&Shape::Dodecahedron, &one, 2000, 9).unwrap());
        let r = generate_reference(&Polyhedron::dodecahedron(), 100_000, 1).unwrap();
        let a_max = r.s_max_hat().powi(2);
        assert!(a.iter().all(|&x| x > 0.0 && x < a_max * 1.01));
    }

    #[test]
    fn forward_area_mean_matches_the_moment() {
        // Unit-volume ball: E[Z] = 2πr²/3; Λ_b ~ Gamma(2, 1) gives E[Λ_b²] = 6.
        let r = (3.0 / (4.0 * std::f64::consts::PI)).cbrt();
        let ez = 2.0 * std::f64::consts::PI * r * r / 3.0;
        let a = forward_areas(&Shape::Ball, &ParametricSize::STANDARD_EXPONENTIAL, 50_000, 4).unwrap();
        let m = mean(&a);
        let var = a.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (a.len() - 1) as f64;
        let se = (var / a.len() as f64).sqrt();
        assert!((m - 6.0 * ez).abs() < 3.0 * se, "{m} vs {}", 6.0 * ez);
    }

    #[test]
    fn forward_model_matches_reference_bootstrap() {
        let body = Polyhedron::cube();
        let r = generate_reference(&body, 200_000, 5).unwrap();
        let h = ParametricSize::Lognormal { mu: 0.0, sigma: 0.3 };
        let mut fresh = forward_sqrt_areas(&body, &h, 50_000, &SeedRng::new(6));
        fresh.sort_by(f64::total_cmp);
        let boot = crate::bias::forward_sample(&r, &SizeModel::Parametric(h), 50_000, &mut SeedRng::new(7)).unwrap();
        assert!(ks_two_sample(&fresh, &boot) < 0.015);
    }

    #[test]
    fn reference_cache_is_keyed_by_shape() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ReferenceSpec::Samples(5000);
        let a = prepare_reference(&Shape::Cube, &spec, 2, Some(dir.path())).unwrap();
        let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
        assert_eq!(files.len(), 1);
        let b = prepare_reference(&Shape::Cube, &spec, 2, Some(dir.path())).unwrap();
        assert_eq!(a.sqrt_samples(), b.sqrt_samples());
        let path = files[0].as_ref().unwrap().path();
        let wrong = prepare_reference(&Shape::Tetrahedron, &ReferenceSpec::Cache(path), 2, None);
        assert!(matches!(wrong, Err(Error::ShapeMismatch)));
    }

    #[test]
    fn small_experiment_is_reproducible() {
        let cfg = ExperimentConfig {
            n: 200,
            replications: 3,
            reference: ReferenceSpec::Samples(50_000),
            ..Default::default()
        };
        let r = prepare_reference(&cfg.shape, &cfg.reference, cfg.reference_seed, None).unwrap();
        let a = run_experiment(&cfg, &r).unwrap();
        let b = run_experiment(&cfg, &r).unwrap();
        let strip = |rep: &ExperimentReport| rep.outcomes.iter().map(|o| (o.err_hb, o.err_h, o.iterations)).collect::<Vec<_>>();
        assert_eq!(strip(&a), strip(&b));
        assert!(a.hb_error.q025 >= a.hb_error.min && a.hb_error.q975 <= a.hb_error.max);
        assert!(a.hb_error.mean.is_finite() && a.hb_error.mean < 0.3);
        let icm = ExperimentConfig { solver: SolverConfig::with_algorithm(Algorithm::Icm), ..cfg };
        assert!(run_experiment(&icm, &r).is_ok());
    }

    #[test]
    fn single_area_estimate_is_a_point_mass() {
        let r = generate_reference(&Polyhedron::cube(), 20_000, 8).unwrap();
        let rep = estimate_areas(&[0.25], &r, &SolverConfig::default(), TruncationRule::Select).unwrap();
        assert_eq!(rep.support, vec![0.5]);
        assert_eq!(rep.hb_masses, vec![1.0]);
        assert_eq!(rep.t_hat, 0.5);
    }
}
