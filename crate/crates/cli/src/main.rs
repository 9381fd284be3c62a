use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use sizeunfold::harness::{
    estimate_areas, forward_areas, generate_reference, prepare_reference, read_areas, reproduce_table, table_csv,
    write_areas_csv, write_density_csv, ReferenceSpec, Shape, TableOverrides, DEFAULT_REFERENCE_SAMPLES,
};
use sizeunfold::refdist::{load_reference, save_reference, MIN_KDE_SAMPLES};
use sizeunfold::{Algorithm, Error, ParametricSize, SolverConfig, TruncationRule};

/// Size distributions of convex particles from planar section areas.
#[derive(Parser, Debug)]
#[command(name = "sizeunfold", version)]
struct Cli {
    /// JSON file with default values; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample IUR sections of a shape and write a reference cache plus a
    /// density CSV next to it.
    Refdist(RefdistArgs),
    /// Simulate section areas for a shape and size law.
    Forward(ForwardArgs),
    /// Estimate the size distribution from a CSV of section areas.
    Estimate(EstimateArgs),
    /// Rerun the simulation study behind one of the result tables.
    Reproduce(ReproduceArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SolverArg {
    Em,
    Icm,
    Hybrid,
}

impl From<SolverArg> for Algorithm {
    fn from(s: SolverArg) -> Self {
        match s {
            SolverArg::Em => Algorithm::Em,
            SolverArg::Icm => Algorithm::Icm,
            SolverArg::Hybrid => Algorithm::Hybrid,
        }
    }
}

#[derive(Args, Debug, Default)]
struct Common {
    /// cube, dodecahedron, tetrahedron, ball, or a path to an .off file.
    #[arg(long)]
    shape: Option<Shape>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolverFlags {
    #[arg(long, value_enum)]
    solver: Option<SolverArg>,
    #[arg(long)]
    eps_stop: Option<f64>,
}

#[derive(Args, Debug)]
struct RefdistArgs {
    #[command(flatten)]
    common: Common,
    /// Number of IUR sections.
    #[arg(long)]
    n: Option<usize>,
}

#[derive(Args, Debug)]
struct ForwardArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    n: Option<usize>,
    /// exponential, exponential(r), gamma(k,r), lognormal(mu,sigma), point(c).
    #[arg(long)]
    family: Option<ParametricSize>,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    solver: SolverFlags,
    /// CSV of positive section areas, one per line.
    #[arg(long)]
    areas: Option<PathBuf>,
    /// Reference cache; with --shape it must match that shape.
    #[arg(long)]
    reference: Option<PathBuf>,
    /// Reference sections to generate when no cache is given.
    #[arg(long)]
    reference_samples: Option<usize>,
    /// `select`, `none`, or a fixed cutoff.
    #[arg(long)]
    truncation: Option<String>,
}

#[derive(Args, Debug)]
struct ReproduceArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    solver: SolverFlags,
    /// Table number (1 to 4).
    #[arg(long)]
    table: Option<u8>,
    /// Sample sizes; repeat or comma-separate.
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long)]
    reps: Option<usize>,
    /// Size laws; repeat to select several.
    #[arg(long)]
    family: Vec<ParametricSize>,
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    reference_samples: Option<usize>,
    /// Directory for generated reference caches.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
}

/// Values accepted in the `--config` file.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    shape: Option<Shape>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    n: Option<NValue>,
    reps: Option<usize>,
    family: Option<Vec<ParametricSize>>,
    solver: Option<SolverArg>,
    eps_stop: Option<f64>,
    solver_config: Option<SolverConfig>,
    areas: Option<PathBuf>,
    reference: Option<PathBuf>,
    reference_samples: Option<usize>,
    reference_seed: Option<u64>,
    cache_dir: Option<PathBuf>,
    truncation: Option<TruncationRule>,
    table: Option<u8>,
}

/// `n` may be one value or a list.
#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum NValue {
    One(usize),
    Many(Vec<usize>),
}

impl NValue {
    fn list(&self) -> Vec<usize> {
        match self {
            NValue::One(n) => vec![*n],
            NValue::Many(v) => v.clone(),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else { return Ok(FileConfig::default()) };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

impl FileConfig {
    fn single_n(&self) -> Option<usize> {
        match &self.n {
            Some(NValue::One(n)) => Some(*n),
            Some(NValue::Many(v)) if v.len() == 1 => Some(v[0]),
            _ => None,
        }
    }

    fn solver(&self, flags: &SolverFlags) -> SolverConfig {
        let mut cfg = self.solver_config.unwrap_or_default();
        if let Some(s) = flags.solver.or(self.solver) {
            cfg.algorithm = s.into();
        }
        if let Some(e) = flags.eps_stop.or(self.eps_stop) {
            cfg.eps_stop = e;
        }
        cfg
    }

    fn shape(&self, common: &Common) -> Option<Shape> {
        common.shape.clone().or_else(|| self.shape.clone())
    }
}

fn parse_truncation(s: &str) -> Result<TruncationRule> {
    match s.trim().to_ascii_lowercase().as_str() {
        "select" => Ok(TruncationRule::Select),
        "none" => Ok(TruncationRule::None),
        other => match other.parse::<f64>() {
            Ok(t) if t >= 0.0 && t.is_finite() => Ok(TruncationRule::Fixed(t)),
            _ => bail!("invalid truncation `{s}` (expected select, none or a nonnegative number)"),
        },
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run_refdist(args: RefdistArgs, file: FileConfig) -> Result<()> {
    let shape = file.shape(&args.common).context("--shape is required")?;
    let n = args.n.or(file.single_n()).unwrap_or(DEFAULT_REFERENCE_SAMPLES);
    let seed = args.common.seed.or(file.seed).unwrap_or(0);
    let out = args.common.out.or(file.out).context("--out is required")?;
    if n < MIN_KDE_SAMPLES {
        eprintln!("warning: {n} sections is below the density-estimation minimum of {MIN_KDE_SAMPLES}");
    }
    let r = generate_reference(&shape.polyhedron()?, n, seed)?;
    save_reference(&out, &r).with_context(|| format!("writing {}", out.display()))?;
    let csv = out.with_extension("csv");
    write_density_csv(&csv, &r).with_context(|| format!("writing {}", csv.display()))?;
    eprintln!("wrote {} and {} (s_max = {:.6})", out.display(), csv.display(), r.s_max_hat());
    Ok(())
}

fn run_forward(args: ForwardArgs, file: FileConfig) -> Result<()> {
    let shape = file.shape(&args.common).context("--shape is required")?;
    let n = args.n.or(file.single_n()).context("--n is required")?;
    let family = args
        .family
        .or_else(|| file.family.as_ref().and_then(|f| f.first().copied()))
        .unwrap_or(ParametricSize::STANDARD_EXPONENTIAL);
    let seed = args.common.seed.or(file.seed).unwrap_or(0);
    let out = args.common.out.or(file.out).context("--out is required")?;
    let areas = forward_areas(&shape, &family, n, seed)?;
    write_areas_csv(&out, &areas).with_context(|| format!("writing {}", out.display()))?;
    Ok(())
}

fn run_estimate(args: EstimateArgs, file: FileConfig) -> Result<()> {
    let areas_path = args.areas.or(file.areas.clone()).context("--areas is required")?;
    let areas = read_areas(&areas_path)?;
    let solver = file.solver(&args.solver);
    let rule = match args.truncation {
        Some(s) => parse_truncation(&s)?,
        None => file.truncation.unwrap_or_default(),
    };
    let shape = file.shape(&args.common);
    let reference = match (args.reference.or(file.reference.clone()), shape) {
        (Some(path), Some(shape)) => prepare_reference(&shape, &ReferenceSpec::Cache(path), 0, None)?,
        (Some(path), None) => load_reference(&path).with_context(|| format!("loading {}", path.display()))?,
        (None, Some(shape)) => {
            let count = args.reference_samples.or(file.reference_samples).unwrap_or(DEFAULT_REFERENCE_SAMPLES);
            let spec = ReferenceSpec::Samples(count);
            prepare_reference(&shape, &spec, file.reference_seed.unwrap_or(0), file.cache_dir.as_deref())?
        }
        (None, None) => bail!("give --reference or --shape"),
    };
    let report = match estimate_areas(&areas, &reference, &solver, rule) {
        Err(Error::OutsideSupport { value, .. }) => {
            let row = areas.iter().position(|a| a.sqrt() >= value).unwrap_or(0);
            bail!(
                "{}: area {} on data row {} lies outside the reference support",
                areas_path.display(),
                areas[row],
                row + 1
            );
        }
        other => other?,
    };
    let json = serde_json::to_string_pretty(&report)? + "\n";
    write_or_print(args.common.out.or(file.out).as_deref(), &json)
}

fn run_reproduce(args: ReproduceArgs, file: FileConfig) -> Result<()> {
    let table = args.table.or(file.table).context("--table is required")?;
    let reference = match args.reference.or(file.reference.clone()) {
        Some(p) => Some(ReferenceSpec::Cache(p)),
        None => args.reference_samples.or(file.reference_samples).map(ReferenceSpec::Samples),
    };
    let overrides = TableOverrides {
        ns: if args.n.is_empty() { file.n.as_ref().map(NValue::list) } else { Some(args.n) },
        families: if args.family.is_empty() { file.family.clone() } else { Some(args.family) },
        shape: file.shape(&args.common),
        replications: args.reps.or(file.reps),
        seed: args.common.seed.or(file.seed),
        solver: Some(file.solver(&args.solver)),
        reference,
        reference_seed: file.reference_seed,
        cache_dir: args.cache_dir.or(file.cache_dir.clone()),
    };
    let (kind, rows) = reproduce_table(table, &overrides)?;
    write_or_print(args.common.out.or(file.out).as_deref(), &table_csv(kind, &rows))
}

fn run(cli: Cli) -> Result<()> {
    let file = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Refdist(a) => run_refdist(a, file),
        Command::Forward(a) => run_forward(a, file),
        Command::Estimate(a) => run_estimate(a, file),
        Command::Reproduce(a) => run_reproduce(a, file),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
