use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::bias::StepCdf;
use crate::error::{Error, Result};
use crate::refdist::ReferenceDistribution;
use crate::regularize::TruncationResult;
use crate::unfold::{FitState, Observations};

/// Areas, one per line. Blank lines and lines starting with `#` are
/// skipped; a single non-numeric first line is taken as a header. Errors
/// name the 1-based line.
pub fn parse_areas(text: &str, source: &Path) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let field = line.split(',').next().unwrap_or("").trim();
        let err = |msg: String| Error::Parse { path: source.to_path_buf(), line: k + 1, msg };
        match field.parse::<f64>() {
            Ok(a) if a.is_finite() && a > 0.0 => out.push(a),
            Ok(a) => return Err(err(format!("area must be positive and finite, got {a}"))),
            Err(_) if out.is_empty() && k == first_content_line(text) && field.chars().any(char::is_alphabetic) => {}
            Err(_) => return Err(err(format!("not a number: `{field}`"))),
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!("{}: no areas", source.display())));
    }
    Ok(out)
}

fn first_content_line(text: &str) -> usize {
    text.lines()
        .position(|l| {
            let l = l.trim();
            !(l.is_empty() || l.starts_with('#'))
        })
        .unwrap_or(0)
}

pub fn read_areas(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    parse_areas(&fs::read_to_string(path)?, path)
}

/// `area` header, then one value per line at full precision.
pub fn write_areas_csv(path: impl AsRef<Path>, areas: &[f64]) -> Result<()> {
    let mut s = String::with_capacity(areas.len() * 24 + 8);
    s.push_str("area\n");
    for a in areas {
        writeln!(s, "{a:e}").expect("writing to a string");
    }
    fs::write(path, s)?;
    Ok(())
}

/// `s,density,cdf` on the reference grid.
pub fn write_density_csv(path: impl AsRef<Path>, r: &ReferenceDistribution) -> Result<()> {
    let mut s = String::from("s,density,cdf\n");
    for ((x, d), c) in r.grid().zip(r.density_values()).zip(r.cdf_values()) {
        writeln!(s, "{x:e},{d:e},{c:e}").expect("writing to a string");
    }
    fs::write(path, s)?;
    Ok(())
}

/// JSON-facing summary of one estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub n: usize,
    /// Tied observations moved apart before fitting.
    pub perturbed_ties: usize,
    /// Sorted square-root areas (the MLE support).
    pub support: Vec<f64>,
    pub hb_masses: Vec<f64>,
    pub t_hat: f64,
    pub h_support: Vec<f64>,
    pub h_masses: Vec<f64>,
    pub loglik: f64,
    pub loglik_initial: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    pub icm_stalls: usize,
}

impl EstimateReport {
    pub fn new(obs: &Observations, state: &FitState, hb: &StepCdf, trunc: &TruncationResult) -> Self {
        Self {
            n: obs.len(),
            perturbed_ties: obs.perturbed(),
            support: hb.support().to_vec(),
            hb_masses: hb.probs().to_vec(),
            t_hat: trunc.t_hat,
            h_support: trunc.h_hat.support().to_vec(),
            h_masses: trunc.h_hat.probs().to_vec(),
            loglik: state.loglik,
            loglik_initial: state.loglik_trace.first().copied().unwrap_or(state.loglik),
            iterations: state.iteration,
            converged: state.converged,
            kkt_residual: state.kkt_residual,
            icm_stalls: state.stalls,
        }
    }

    pub fn hb_step(&self) -> Result<StepCdf> {
        StepCdf::new(self.support.clone(), self.hb_masses.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("areas.csv")
    }

    #[test]
    fn parses_with_header_comments_and_blanks() {
        let text = "# synthetic\narea\n1.5\n\n2e-1\n0.3,extra\n";
        assert_eq!(parse_areas(text, p()).unwrap(), vec![1.5, 0.2, 0.3]);
        assert_eq!(parse_areas("1\n2\n", p()).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn errors_name_the_line() {
        match parse_areas("area\n1.0\n-2.0\n", p()) {
            Err(Error::Parse { line, msg, .. }) => {
                assert_eq!(line, 3);
                assert!(msg.contains("positive"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
        match parse_areas("1.0\nabc\n", p()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_areas("0\n", p()), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_areas("area\n", p()), Err(Error::InvalidArgument(_))));
        assert!(matches!(parse_areas("", p()), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn areas_round_trip_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        let areas = vec![0.1, 1.0 / 3.0, 2.5e-7, 123.456];
        write_areas_csv(&path, &areas).unwrap();
        assert_eq!(read_areas(&path).unwrap(), areas);
    }
}
