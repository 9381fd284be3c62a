use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{prepare_reference, run_experiment, run_replication, ErrorSummary, ExperimentConfig, ReferenceSpec, Shape};
use crate::bias::ParametricSize;
use crate::error::{Error, Result};
use crate::stats::mean;
use crate::unfold::{Algorithm, SolverConfig};

/// Lognormal size law of the simulation study.
pub const STUDY_LOGNORMAL: ParametricSize = ParametricSize::Lognormal { mu: 2.0, sigma: 0.5 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TableKind {
    /// Error table for one shape (tables 1 to 3).
    Errors,
    /// ICM vs hybrid run time and iterations (table 4).
    Timing,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TableSpec {
    pub kind: TableKind,
    pub shape: Shape,
    pub ns: Vec<usize>,
    pub families: Vec<ParametricSize>,
    pub replications: usize,
}

/// Layout of tables 1 (dodecahedron), 2 (cube), 3 (tetrahedron) and 4
/// (algorithms on the dodecahedron with lognormal sizes).
pub fn table_spec(table: u8) -> Result<TableSpec> {
    let errors = |shape| TableSpec {
        kind: TableKind::Errors,
        shape,
        ns: vec![1000, 2000, 5000, 10_000],
        families: vec![ParametricSize::STANDARD_EXPONENTIAL, STUDY_LOGNORMAL],
        replications: 100,
    };
    match table {
        1 => Ok(errors(Shape::Dodecahedron)),
        2 => Ok(errors(Shape::Cube)),
        3 => Ok(errors(Shape::Tetrahedron)),
        4 => Ok(TableSpec {
            kind: TableKind::Timing,
            shape: Shape::Dodecahedron,
            ns: vec![1000, 2000, 5000],
            families: vec![STUDY_LOGNORMAL],
            replications: 10,
        }),
        other => Err(Error::InvalidArgument(format!("no table {other} (expected 1 to 4)"))),
    }
}

/// Overrides applied on top of a [`TableSpec`].
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableOverrides {
    pub ns: Option<Vec<usize>>,
    pub families: Option<Vec<ParametricSize>>,
    pub shape: Option<Shape>,
    pub replications: Option<usize>,
    pub seed: Option<u64>,
    /// Solver for error tables; timing tables fix the algorithm per column.
    pub solver: Option<SolverConfig>,
    pub reference: Option<ReferenceSpec>,
    pub reference_seed: Option<u64>,
    pub cache_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TableRow {
    Errors {
        n: usize,
        family: ParametricSize,
        hb: ErrorSummary,
        h: ErrorSummary,
    },
    Timing {
        n: usize,
        icm_seconds: f64,
        icm_iterations: f64,
        hybrid_seconds: f64,
        hybrid_iterations: f64,
    },
}

impl TableRow {
    pub fn csv_header(kind: TableKind) -> &'static str {
        match kind {
            TableKind::Errors => "n,H,hb_mean,hb_q025,hb_q975,h_mean,h_q025,h_q975",
            TableKind::Timing => "n,icm_seconds,icm_iterations,hybrid_seconds,hybrid_iterations",
        }
    }

    pub fn csv_line(&self) -> String {
        match self {
            TableRow::Errors { n, family, hb, h } => format!(
                "{n},{family},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
                hb.mean, hb.q025, hb.q975, h.mean, h.q025, h.q975
            ),
            TableRow::Timing { n, icm_seconds, icm_iterations, hybrid_seconds, hybrid_iterations } => {
                format!("{n},{icm_seconds:.6},{icm_iterations:.1},{hybrid_seconds:.6},{hybrid_iterations:.1}")
            }
        }
    }
}

pub fn table_csv(kind: TableKind, rows: &[TableRow]) -> String {
    let mut s = String::new();
    writeln!(s, "{}", TableRow::csv_header(kind)).expect("writing to a string");
    for r in rows {
        writeln!(s, "{}", r.csv_line()).expect("writing to a string");
    }
    s
}

/// Runs the replicated study behind one table. Each row uses the same base
/// seed; rows differ in `n` and size law.
pub fn reproduce_table(table: u8, overrides: &TableOverrides) -> Result<(TableKind, Vec<TableRow>)> {
    let mut spec = table_spec(table)?;
    if let Some(ns) = &overrides.ns {
        spec.ns = ns.clone();
    }
    if let Some(f) = &overrides.families {
        spec.families = f.clone();
    }
    if let Some(s) = &overrides.shape {
        spec.shape = s.clone();
    }
    if let Some(r) = overrides.replications {
        spec.replications = r;
    }
    let base = ExperimentConfig {
        shape: spec.shape.clone(),
        replications: spec.replications,
        seed: overrides.seed.unwrap_or(1),
        solver: overrides.solver.unwrap_or_default(),
        reference: overrides.reference.clone().unwrap_or_default(),
        reference_seed: overrides.reference_seed.unwrap_or(0),
        cache_dir: overrides.cache_dir.clone(),
        ..Default::default()
    };
    let reference = prepare_reference(&base.shape, &base.reference, base.reference_seed, base.cache_dir.as_deref())?;
    let mut rows = Vec::new();
    for &n in &spec.ns {
        for &family in &spec.families {
            let cfg = ExperimentConfig { n, size_family: family, ..base.clone() };
            match spec.kind {
                TableKind::Errors => {
                    let rep = run_experiment(&cfg, &reference)?;
                    rows.push(TableRow::Errors { n, family, hb: rep.hb_error, h: rep.h_error });
                }
                TableKind::Timing => {
                    let (icm_seconds, icm_iterations) = timing(&cfg, Algorithm::Icm, &reference)?;
                    let (hybrid_seconds, hybrid_iterations) = timing(&cfg, Algorithm::Hybrid, &reference)?;
                    rows.push(TableRow::Timing { n, icm_seconds, icm_iterations, hybrid_seconds, hybrid_iterations });
                }
            }
        }
    }
    Ok((spec.kind, rows))
}

/// Mean fit seconds and iterations; replications run one after another so
/// timings do not compete for cores.
pub fn timing(
    cfg: &ExperimentConfig,
    algorithm: Algorithm,
    reference: &crate::refdist::ReferenceDistribution,
) -> Result<(f64, f64)> {
    let cfg = ExperimentConfig { solver: SolverConfig { algorithm, ..cfg.solver }, ..cfg.clone() };
    cfg.validate()?;
    let body = cfg.shape.polyhedron()?;
    let mut secs = Vec::with_capacity(cfg.replications);
    let mut iters = Vec::with_capacity(cfg.replications);
    for k in 0..cfg.replications {
        let o = run_replication(&cfg, &body, reference, k)?;
        secs.push(o.fit_seconds);
        iters.push(o.iterations as f64);
    }
    Ok((mean(&secs), mean(&iters)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specs() {
        assert_eq!(table_spec(1).unwrap().shape, Shape::Dodecahedron);
        assert_eq!(table_spec(2).unwrap().shape, Shape::Cube);
        assert_eq!(table_spec(3).unwrap().shape, Shape::Tetrahedron);
        let t4 = table_spec(4).unwrap();
        assert_eq!((t4.kind, t4.replications), (TableKind::Timing, 10));
        assert!(table_spec(5).is_err());
    }

    #[test]
    fn tiny_tables_have_the_layout() {
        let o = TableOverrides {
            ns: Some(vec![100]),
            replications: Some(2),
            reference: Some(ReferenceSpec::Samples(20_000)),
            ..Default::default()
        };
        let (kind, rows) = reproduce_table(2, &o).unwrap();
        let csv = table_csv(kind, &rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("100,exponential,"), "{}", lines[1]);
        assert!(lines[2].starts_with("100,lognormal(2,0.5),"), "{}", lines[2]);
        let (kind, rows) = reproduce_table(4, &o).unwrap();
        assert_eq!(kind, TableKind::Timing);
        assert_eq!(rows.len(), 1);
        assert_eq!(table_csv(kind, &rows).lines().next(), Some(TableRow::csv_header(TableKind::Timing)));
    }
}
