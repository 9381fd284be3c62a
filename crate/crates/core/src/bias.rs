//! Length-biased size laws and the forward model for observed section areas.
//!
//! A particle of size `λ` is hit by an IUR plane with probability
//! proportional to `λ`, so the sizes seen in a section follow the
//! length-biased law `dH^b(λ) = λ dH(λ) / E(Λ)`. An observed square-root
//! area factors as `√A = √Z · Λ_b` with `Z ~ G_K` and `Λ_b ~ H^b`
//! independent.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, Exp1, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use libm::erfc;
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};
use crate::geometry::{mean_width, Polyhedron};
use crate::refdist::SectionSource;
use crate::rng::SeedRng;

/// Tolerance on `Σ p_j = 1` accepted by [`StepCdf::new`] before renormalizing.
const SUM_TOL: f64 = 1e-9;

/// Discrete distribution with atoms `support[j]` of mass `probs[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct StepCdf {
    support: Vec<f64>,
    probs: Vec<f64>,
    cumulative: Vec<f64>,
}

impl StepCdf {
    /// Support must be nonnegative and strictly increasing; probabilities
    /// nonnegative with sum 1 (renormalized exactly).
    pub fn new(support: Vec<f64>, probs: Vec<f64>) -> Result<Self> {
        if support.is_empty() || support.len() != probs.len() {
            return Err(Error::InvalidArgument(format!(
                "step CDF needs matching non-empty support and probabilities (got {} and {})",
                support.len(),
                probs.len()
            )));
        }
        if support.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidArgument("support must be finite and nonnegative".into()));
        }
        if support.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument("support must be strictly increasing".into()));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidArgument("probabilities must be finite and nonnegative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > SUM_TOL {
            return Err(Error::InvalidArgument(format!("probabilities sum to {total}, not 1")));
        }
        Ok(Self::normalized(support, probs))
    }

    /// Scales nonnegative weights to a probability vector.
    pub fn from_weights(support: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::InvalidArgument("weights have no positive finite mass".into()));
        }
        let probs = weights.into_iter().map(|w| w / total).collect();
        Self::new(support, probs)
    }

    /// From CDF values `β_j = H(s_j)`; masses are the increments, scaled by `β_n`.
    pub fn from_cumulative(support: Vec<f64>, beta: &[f64]) -> Result<Self> {
        let mut prev = 0.0;
        let weights: Vec<f64> = beta
            .iter()
            .map(|&b| {
                let w = (b - prev).max(0.0);
                prev = prev.max(b);
                w
            })
            .collect();
        Self::from_weights(support, weights)
    }

    pub fn point_mass(c: f64) -> Result<Self> {
        Self::new(vec![c], vec![1.0])
    }

    fn normalized(support: Vec<f64>, mut probs: Vec<f64>) -> Self {
        let total: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= total);
        let mut cumulative = Vec::with_capacity(probs.len());
        let mut acc = 0.0;
        for &p in &probs {
            acc += p;
            cumulative.push(acc.min(1.0));
        }
        // Right tail: exactly 1 from the last positive atom on.
        let last_positive = probs.iter().rposition(|&p| p > 0.0).unwrap_or(0);
        cumulative[last_positive..].iter_mut().for_each(|c| *c = 1.0);
        Self { support, probs, cumulative }
    }

    pub fn support(&self) -> &[f64] {
        &self.support
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `H(s_j)` at each atom.
    pub fn cumulative(&self) -> &[f64] {
        &self.cumulative
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    /// Right-continuous `H(x)`.
    pub fn cdf(&self, x: f64) -> f64 {
        match self.support.partition_point(|&s| s <= x) {
            0 => 0.0,
            k => self.cumulative[k - 1],
        }
    }

    /// Left limit `H(x−)`.
    pub fn cdf_left(&self, x: f64) -> f64 {
        match self.support.partition_point(|&s| s < x) {
            0 => 0.0,
            k => self.cumulative[k - 1],
        }
    }

    pub fn mean(&self) -> f64 {
        self.support.iter().zip(&self.probs).map(|(s, p)| s * p).sum()
    }

    /// Drops atoms of zero mass.
    pub fn compact(&self) -> StepCdf {
        let (s, p): (Vec<f64>, Vec<f64>) = self
            .support
            .iter()
            .zip(&self.probs)
            .filter(|(_, &p)| p > 0.0)
            .map(|(&s, &p)| (s, p))
            .unzip();
        Self::normalized(s, p)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let k = self.cumulative.partition_point(|&c| c <= u);
        self.support[k.min(self.support.len() - 1)]
    }

    /// `p^b_j ∝ s_j p_j`.
    pub fn length_biased(&self) -> Result<StepCdf> {
        let weights: Vec<f64> = self.support.iter().zip(&self.probs).map(|(s, p)| s * p).collect();
        if !(weights.iter().sum::<f64>() > 0.0) {
            return Err(Error::BadMean);
        }
        Self::from_weights(self.support.clone(), weights)
    }

    /// `p_j ∝ p^b_j / s_j`.
    pub fn debiased(&self) -> Result<StepCdf> {
        if self.support[0] <= 0.0 {
            return Err(Error::InvalidArgument("cannot de-bias a support containing 0".into()));
        }
        let weights = self.support.iter().zip(&self.probs).map(|(s, p)| p / s).collect();
        Self::from_weights(self.support.clone(), weights)
    }
}

/// Closed-form size families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ParametricSize {
    Exponential { rate: f64 },
    Gamma { shape: f64, rate: f64 },
    Lognormal { mu: f64, sigma: f64 },
    PointMass(f64),
}

impl ParametricSize {
    pub const STANDARD_EXPONENTIAL: ParametricSize = ParametricSize::Exponential { rate: 1.0 };

    pub fn lognormal(mu: f64, sigma: f64) -> Result<Self> {
        ParametricSize::Lognormal { mu, sigma }.validated()
    }

    fn validated(self) -> Result<Self> {
        let ok = match self {
            Self::Exponential { rate } => rate > 0.0 && rate.is_finite(),
            Self::Gamma { shape, rate } => shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite(),
            Self::Lognormal { mu, sigma } => mu.is_finite() && sigma > 0.0 && sigma.is_finite(),
            Self::PointMass(c) => c > 0.0 && c.is_finite(),
        };
        if ok {
            Ok(self)
        } else {
            Err(Error::InvalidArgument(format!("invalid parameters for {self}")))
        }
    }

    /// Gamma CDF: regularized lower incomplete gamma from `statrs`
    /// (series / continued fraction to relative 1e-15). Lognormal CDF: `erfc`
    /// from `libm` (musl port, within 1 ulp).
    pub fn cdf(&self, x: f64) -> f64 {
        match *self {
            Self::Exponential { rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    -(-rate * x).exp_m1()
                }
            }
            Self::Gamma { shape, rate } => {
                if x <= 0.0 {
                    0.0
                } else {
                    gamma_lr(shape, rate * x)
                }
            }
            Self::Lognormal { mu, sigma } => {
                if x <= 0.0 {
                    0.0
                } else {
                    0.5 * erfc(-(x.ln() - mu) / (sigma * std::f64::consts::SQRT_2))
                }
            }
            Self::PointMass(c) => f64::from(u8::from(x >= c)),
        }
    }

    pub fn cdf_left(&self, x: f64) -> f64 {
        match *self {
            Self::PointMass(c) => f64::from(u8::from(x > c)),
            _ => self.cdf(x),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Exponential { rate } => 1.0 / rate,
            Self::Gamma { shape, rate } => shape / rate,
            Self::Lognormal { mu, sigma } => (mu + 0.5 * sigma * sigma).exp(),
            Self::PointMass(c) => c,
        }
    }

    /// Exponential(r) → Gamma(2, r); Gamma(k, r) → Gamma(k+1, r);
    /// Lognormal(μ, σ) → Lognormal(μ+σ², σ); point masses are fixed.
    pub fn length_biased(&self) -> ParametricSize {
        match *self {
            Self::Exponential { rate } => Self::Gamma { shape: 2.0, rate },
            Self::Gamma { shape, rate } => Self::Gamma { shape: shape + 1.0, rate },
            Self::Lognormal { mu, sigma } => Self::Lognormal { mu: mu + sigma * sigma, sigma },
            Self::PointMass(c) => Self::PointMass(c),
        }
    }

    /// Exact draws. Integer gamma shapes up to 16 are sums of unit
    /// exponentials.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Exponential { rate } => {
                let e: f64 = Exp1.sample(rng);
                e / rate
            }
            Self::Gamma { shape, rate } => {
                if shape.fract() == 0.0 && shape <= 16.0 {
                    (0..shape as u32).map(|_| -> f64 { Exp1.sample(rng) }).sum::<f64>() / rate
                } else {
                    Gamma::new(shape, 1.0 / rate).expect("validated parameters").sample(rng)
                }
            }
            Self::Lognormal { mu, sigma } => {
                let z: f64 = StandardNormal.sample(rng);
                (mu + sigma * z).exp()
            }
            Self::PointMass(c) => c,
        }
    }
}

impl fmt::Display for ParametricSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Exponential { rate } if rate == 1.0 => write!(f, "exponential"),
            Self::Exponential { rate } => write!(f, "exponential({rate})"),
            Self::Gamma { shape, rate } => write!(f, "gamma({shape},{rate})"),
            Self::Lognormal { mu, sigma } => write!(f, "lognormal({mu},{sigma})"),
            Self::PointMass(c) => write!(f, "point({c})"),
        }
    }
}

impl FromStr for ParametricSize {
    type Err = Error;

    /// `exponential`, `exponential(rate)`, `gamma(shape,rate)`,
    /// `lognormal(mu,sigma)`, `point(c)`.
    fn from_str(text: &str) -> Result<Self> {
        let text = text.trim().to_ascii_lowercase();
        let bad = || Error::InvalidArgument(format!("unknown size family {text:?}"));
        let (name, args) = match text.find('(') {
            Some(open) => {
                let inner = text[open + 1..].strip_suffix(')').ok_or_else(bad)?;
                let args = inner
                    .split(',')
                    .map(|a| a.trim().parse::<f64>().map_err(|_| bad()))
                    .collect::<Result<Vec<_>>>()?;
                (text[..open].trim(), args)
            }
            None => (text.as_str(), Vec::new()),
        };
        let family = match (name, args.as_slice()) {
            ("exponential", []) => Self::STANDARD_EXPONENTIAL,
            ("exponential", &[rate]) => Self::Exponential { rate },
            ("gamma", &[shape, rate]) => Self::Gamma { shape, rate },
            ("lognormal", &[mu, sigma]) => Self::Lognormal { mu, sigma },
            ("point", &[c]) => Self::PointMass(c),
            _ => return Err(bad()),
        };
        family.validated()
    }
}

impl TryFrom<String> for ParametricSize {
    type Error = Error;

    fn try_from(text: String) -> Result<Self> {
        text.parse()
    }
}

impl From<ParametricSize> for String {
    fn from(p: ParametricSize) -> String {
        p.to_string()
    }
}

/// A size CDF without closed form, tabulated as a piecewise-linear CDF on a
/// uniform grid over `[0, upper]`.
///
/// Grid error: the length-biased table is exact at the nodes for the
/// piecewise-linear input and interpolated linearly between them, an
/// `O(step²)` error in the CDF. Mass beyond `upper` is discarded.
#[derive(Clone, Debug, PartialEq)]
pub struct TabulatedSize {
    step: f64,
    cdf: Vec<f64>,
}

impl TabulatedSize {
    pub fn from_fn(h: impl Fn(f64) -> f64, upper: f64, nodes: usize) -> Result<Self> {
        if !(upper > 0.0 && upper.is_finite()) || nodes < 2 {
            return Err(Error::InvalidArgument("tabulation needs upper > 0 and at least 2 nodes".into()));
        }
        let step = upper / (nodes - 1) as f64;
        let mut running: f64 = 0.0;
        let mut cdf: Vec<f64> = (0..nodes)
            .map(|k| {
                running = running.max(h(k as f64 * step).clamp(0.0, 1.0));
                running
            })
            .collect();
        cdf[0] = 0.0;
        let top = cdf[nodes - 1];
        if !(top > 0.0) {
            return Err(Error::InvalidArgument("tabulated CDF has no mass on [0, upper]".into()));
        }
        cdf.iter_mut().for_each(|c| *c /= top);
        Ok(Self { step, cdf })
    }

    pub fn upper(&self) -> f64 {
        self.step * (self.cdf.len() - 1) as f64
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        let pos = x / self.step;
        let i = pos.floor() as usize;
        if i >= self.cdf.len() - 1 {
            return 1.0;
        }
        let frac = pos - i as f64;
        self.cdf[i] + frac * (self.cdf[i + 1] - self.cdf[i])
    }

    fn cell_means(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.cdf
            .windows(2)
            .enumerate()
            .map(move |(k, w)| (w[1] - w[0], (k as f64 + 0.5) * self.step))
    }

    pub fn mean(&self) -> f64 {
        self.cell_means().map(|(m, x)| m * x).sum()
    }

    pub fn length_biased(&self) -> Result<TabulatedSize> {
        let mean = self.mean();
        if !(mean > 0.0) {
            return Err(Error::BadMean);
        }
        let mut cdf = Vec::with_capacity(self.cdf.len());
        cdf.push(0.0);
        let mut acc = 0.0;
        for (m, x) in self.cell_means() {
            acc += m * x / mean;
            cdf.push(acc.min(1.0));
        }
        *cdf.last_mut().expect("at least two nodes") = 1.0;
        Ok(Self { step: self.step, cdf })
    }

    /// Inverse-CDF draw, linear within a cell.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.random();
        let k = self.cdf.partition_point(|&c| c <= u).clamp(1, self.cdf.len() - 1);
        let (lo, hi) = (self.cdf[k - 1], self.cdf[k]);
        let frac = if hi > lo { (u - lo) / (hi - lo) } else { 0.5 };
        (k as f64 - 1.0 + frac) * self.step
    }
}

/// Any size distribution the forward model and the error metrics accept.
#[derive(Clone, Debug, PartialEq)]
pub enum SizeModel {
    Parametric(ParametricSize),
    Step(StepCdf),
    Tabulated(TabulatedSize),
}

impl SizeModel {
    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Self::Parametric(p) => p.cdf(x),
            Self::Step(s) => s.cdf(x),
            Self::Tabulated(t) => t.cdf(x),
        }
    }

    pub fn cdf_left(&self, x: f64) -> f64 {
        match self {
            Self::Parametric(p) => p.cdf_left(x),
            Self::Step(s) => s.cdf_left(x),
            Self::Tabulated(t) => t.cdf(x),
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Self::Parametric(p) => p.mean(),
            Self::Step(s) => s.mean(),
            Self::Tabulated(t) => t.mean(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Parametric(p) => p.sample(rng),
            Self::Step(s) => s.sample(rng),
            Self::Tabulated(t) => t.sample(rng),
        }
    }
}

impl From<ParametricSize> for SizeModel {
    fn from(p: ParametricSize) -> Self {
        Self::Parametric(p)
    }
}

impl From<StepCdf> for SizeModel {
    fn from(s: StepCdf) -> Self {
        Self::Step(s)
    }
}

impl From<TabulatedSize> for SizeModel {
    fn from(t: TabulatedSize) -> Self {
        Self::Tabulated(t)
    }
}

/// `H ↦ H^b` with `H^b(λ) = ∫₀^λ x dH(x) / ∫₀^∞ x dH(x)`.
pub fn length_bias(h: &SizeModel) -> Result<SizeModel> {
    let mean = h.mean();
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(Error::BadMean);
    }
    Ok(match h {
        SizeModel::Parametric(p) => SizeModel::Parametric(p.length_biased()),
        SizeModel::Step(s) => SizeModel::Step(s.length_biased()?),
        SizeModel::Tabulated(t) => SizeModel::Tabulated(t.length_biased()?),
    })
}

/// `H^b ↦ H` with `p_j ∝ p^b_j / s_j`.
pub fn debias(hb: &StepCdf) -> Result<StepCdf> {
    hb.debiased()
}

/// CDF of the particle volume `Λ³` for a volume-1 reference particle.
pub fn volume_cdf(h: &SizeModel, x: f64) -> f64 {
    h.cdf(x.cbrt())
}

/// `n` observed square-root section areas `√Z · Λ_b`, sorted ascending,
/// for particles with size law `h`.
pub fn forward_sample<S: SectionSource + ?Sized>(
    src: &S,
    h: &SizeModel,
    n: usize,
    rng: &mut SeedRng,
) -> Result<Vec<f64>> {
    let hb = length_bias(h)?;
    Ok(forward_sample_biased(src, &hb, n, rng))
}

/// As [`forward_sample`] with the length-biased law given directly.
pub fn forward_sample_biased<S: SectionSource + ?Sized>(
    src: &S,
    hb: &SizeModel,
    n: usize,
    rng: &mut SeedRng,
) -> Vec<f64> {
    let mut out: Vec<f64> = (0..n)
        .map(|_| {
            let z = src.draw_sqrt_area(rng);
            z * hb.sample(rng)
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// `F^S(s) = Σ_j p^b_j G_K^S(s/λ_j)`: the law of observed square-root areas
/// induced by a discrete biased size law.
pub fn forward_cdf_fs<S: SectionSource + ?Sized>(src: &S, hb: &StepCdf, s: f64) -> f64 {
    if s <= 0.0 {
        return 0.0;
    }
    hb.support()
        .iter()
        .zip(hb.probs())
        .filter(|(_, &p)| p > 0.0)
        .map(|(&lam, &p)| p * src.sqrt_area_cdf(s / lam))
        .sum::<f64>()
        .min(1.0)
}

/// Profiles per unit area from particles per unit volume:
/// `N_A = N_V · b̄(K) · E(Λ)`, with `b̄(K)` estimated from `n_dirs` directions.
pub fn number_density_relation(
    n_v: f64,
    k: &Polyhedron,
    h: &SizeModel,
    rng: &mut SeedRng,
    n_dirs: usize,
) -> Result<f64> {
    let mean = h.mean();
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(Error::BadMean);
    }
    if !(n_v > 0.0) {
        return Err(Error::InvalidArgument(format!("N_V must be positive (got {n_v})")));
    }
    Ok(n_v * mean_width(k, rng, n_dirs) * mean)
}

#[cfg(test)]
mod tests {
    use std::f64::consts::{E, PI};

    use proptest::prelude::*;

    use super::*;
    use crate::refdist::{sample_reference, AnalyticBall};
    use crate::stats::{ks_one_sample, ks_two_sample};

    fn step(s: &[f64], p: &[f64]) -> StepCdf {
        StepCdf::new(s.to_vec(), p.to_vec()).unwrap()
    }

    #[test]
    fn step_cdf_validation_and_evaluation() {
        assert!(StepCdf::new(vec![1.0, 1.0], vec![0.5, 0.5]).is_err());
        assert!(StepCdf::new(vec![1.0, 2.0], vec![0.5, 0.6]).is_err());
        assert!(StepCdf::new(vec![-1.0], vec![1.0]).is_err());
        assert!(StepCdf::new(vec![], vec![]).is_err());
        let h = step(&[1.0, 2.0, 3.0], &[0.2, 0.3, 0.5]);
        assert_eq!(h.cdf(0.5), 0.0);
        assert_eq!(h.cdf(1.0), 0.2);
        assert_eq!(h.cdf_left(1.0), 0.0);
        assert!((h.cdf(2.5) - 0.5).abs() < 1e-15);
        assert_eq!(h.cdf(3.0), 1.0);
        assert!((h.mean() - 2.3).abs() < 1e-15);
    }

    #[test]
    fn from_cumulative_takes_increments() {
        let h = StepCdf::from_cumulative(vec![1.0, 2.0, 3.0], &[0.1, 0.1, 0.5]).unwrap();
        assert!((h.probs()[0] - 0.2).abs() < 1e-15);
        assert_eq!(h.probs()[1], 0.0);
        assert!((h.probs()[2] - 0.8).abs() < 1e-15);
        assert_eq!(h.compact().support(), &[1.0, 3.0]);
    }

    #[test]
    fn exponential_bias_closed_form() {
        let hb = ParametricSize::STANDARD_EXPONENTIAL.length_biased();
        assert_eq!(hb, ParametricSize::Gamma { shape: 2.0, rate: 1.0 });
        assert!((hb.cdf(1.0) - (1.0 - 2.0 / E)).abs() < 1e-13);
        assert!((hb.cdf(1.0) - 0.26424).abs() < 1e-5);
        for x in [0.01, 0.3, 1.7, 5.0, 20.0] {
            assert!((hb.cdf(x) - (1.0 - (x + 1.0) * (-x).exp())).abs() < 1e-12);
        }
        let g3 = ParametricSize::Gamma { shape: 3.0, rate: 2.0 };
        let y: f64 = 2.0 * 0.8;
        assert!((g3.cdf(0.8) - (1.0 - (-y).exp() * (1.0 + y + y * y / 2.0))).abs() < 1e-12);
    }

    #[test]
    fn lognormal_bias_closed_form() {
        let h = ParametricSize::lognormal(2.0, 0.5).unwrap();
        assert_eq!(h.length_biased(), ParametricSize::Lognormal { mu: 2.25, sigma: 0.5 });
        assert!((h.cdf(2f64.exp()) - 0.5).abs() < 1e-15);
        // Φ(1) = 0.841344746068543
        let v = h.cdf((2.5f64).exp());
        assert!((v - 0.841_344_746_068_543).abs() < 1e-12, "{v}");
    }

    #[test]
    fn point_mass_is_fixed_by_bias() {
        let h = SizeModel::Parametric(ParametricSize::PointMass(1.5));
        assert_eq!(length_bias(&h).unwrap(), h);
        let s = StepCdf::point_mass(1.5).unwrap();
        assert_eq!(s.length_biased().unwrap(), s);
        assert_eq!(debias(&s).unwrap(), s);
    }

    #[test]
    fn bias_of_two_atoms_by_hand() {
        let h = step(&[1.0, 2.0], &[0.5, 0.5]);
        let hb = h.length_biased().unwrap();
        assert!((hb.probs()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((hb.probs()[1] - 2.0 / 3.0).abs() < 1e-15);
        let back = debias(&hb).unwrap();
        assert!((back.probs()[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn debias_rejects_zero_support() {
        let h = step(&[0.0, 1.0], &[0.5, 0.5]);
        assert!(debias(&h).is_err());
        let zero = step(&[0.0], &[1.0]);
        assert!(matches!(zero.length_biased(), Err(Error::BadMean)));
    }

    proptest! {
        #[test]
        fn bias_debias_round_trip(atoms in prop::collection::vec((0.01f64..50.0, 0.0f64..1.0), 1..40)) {
            let mut atoms = atoms;
            atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
            atoms.dedup_by(|a, b| a.0 == b.0);
            prop_assume!(atoms.iter().any(|a| a.1 > 0.0));
            let (s, w): (Vec<f64>, Vec<f64>) = atoms.into_iter().unzip();
            let h = StepCdf::from_weights(s, w).unwrap();
            let back = debias(&h.length_biased().unwrap()).unwrap();
            for (a, b) in h.probs().iter().zip(back.probs()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn step_cdf_is_monotone_and_right_continuous(
            atoms in prop::collection::vec((0.0f64..10.0, 0.0f64..1.0), 1..20),
            xs in prop::collection::vec(-1.0f64..11.0, 2..20),
        ) {
            let mut atoms = atoms;
            atoms.sort_by(|a, b| a.0.total_cmp(&b.0));
            atoms.dedup_by(|a, b| a.0 == b.0);
            prop_assume!(atoms.iter().any(|a| a.1 > 0.0));
            let (s, w): (Vec<f64>, Vec<f64>) = atoms.into_iter().unzip();
            let h = StepCdf::from_weights(s, w).unwrap();
            let mut xs = xs;
            xs.sort_by(f64::total_cmp);
            for pair in xs.windows(2) {
                prop_assert!(h.cdf(pair[0]) <= h.cdf(pair[1]));
            }
            for (&s, &c) in h.support().iter().zip(h.cumulative()) {
                prop_assert_eq!(h.cdf(s), c);
                prop_assert!(h.cdf_left(s) <= c);
            }
        }
    }

    #[test]
    fn volume_cdf_cases() {
        let point: SizeModel = ParametricSize::PointMass(2.0).into();
        assert_eq!(volume_cdf(&point, 8.0), 1.0);
        let exp: SizeModel = ParametricSize::STANDARD_EXPONENTIAL.into();
        assert!((volume_cdf(&exp, 1.0) - (1.0 - (-1.0f64).exp())).abs() < 1e-15);
        let mut prev = 0.0;
        for k in 1..100 {
            let v = volume_cdf(&exp, k as f64 * 0.1);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn parse_and_display_round_trip() {
        for text in ["exponential", "exponential(2)", "gamma(2,1)", "lognormal(2,0.5)", "point(1)"] {
            let p: ParametricSize = text.parse().unwrap();
            assert_eq!(p.to_string(), text);
        }
        assert_eq!(
            " Lognormal(2, 0.5) ".parse::<ParametricSize>().unwrap(),
            ParametricSize::Lognormal { mu: 2.0, sigma: 0.5 }
        );
        for bad in ["weibull", "lognormal(2)", "lognormal(2,-1)", "exponential(0)", "point(1"] {
            assert!(bad.parse::<ParametricSize>().is_err(), "{bad}");
        }
    }

    #[test]
    fn stochastic_dominance_of_biased_sizes() {
        let mut rng = SeedRng::new(11);
        let n = 100_000;
        for h in [ParametricSize::STANDARD_EXPONENTIAL, ParametricSize::lognormal(2.0, 0.5).unwrap()] {
            let hb = h.length_biased();
            let mut a: Vec<f64> = (0..n).map(|_| h.sample(&mut rng)).collect();
            let mut b: Vec<f64> = (0..n).map(|_| hb.sample(&mut rng)).collect();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            let hi = b[n - 1];
            for k in 0..200 {
                let lam = hi * k as f64 / 200.0;
                let surv = |v: &[f64]| (n - v.partition_point(|&x| x < lam)) as f64 / n as f64;
                assert!(surv(&b) >= surv(&a) - 0.006, "{h} at {lam}");
            }
        }
    }

    #[test]
    fn parametric_samplers_match_cdfs() {
        let mut rng = SeedRng::new(12);
        for h in [
            ParametricSize::STANDARD_EXPONENTIAL,
            ParametricSize::Gamma { shape: 2.0, rate: 1.0 },
            ParametricSize::Gamma { shape: 2.5, rate: 3.0 },
            ParametricSize::Lognormal { mu: 2.25, sigma: 0.5 },
        ] {
            let mut v: Vec<f64> = (0..50_000).map(|_| h.sample(&mut rng)).collect();
            v.sort_by(f64::total_cmp);
            assert!(ks_one_sample(&v, |x| h.cdf(x)) < 0.01, "{h}");
        }
    }

    #[test]
    fn tabulated_exponential_biases_to_gamma() {
        let t = TabulatedSize::from_fn(|x| 1.0 - (-x).exp(), 40.0, 40_001).unwrap();
        assert!((t.mean() - 1.0).abs() < 1e-6);
        let tb = length_bias(&t.into()).unwrap();
        let gamma = ParametricSize::Gamma { shape: 2.0, rate: 1.0 };
        for k in 0..400 {
            let x = k as f64 * 0.03;
            assert!((tb.cdf(x) - gamma.cdf(x)).abs() < 1e-6, "{x}");
        }
        let mut rng = SeedRng::new(13);
        let mut v: Vec<f64> = (0..50_000).map(|_| tb.sample(&mut rng)).collect();
        v.sort_by(f64::total_cmp);
        assert!(ks_one_sample(&v, |x| gamma.cdf(x)) < 0.01);
    }

    #[test]
    fn forward_point_mass_reproduces_reference() {
        let sample = sample_reference(&Polyhedron::dodecahedron(), 200_000, &SeedRng::new(14));
        let one: SizeModel = ParametricSize::PointMass(1.0).into();
        let mut rng = SeedRng::new(15);
        let obs = forward_sample(&sample, &one, 100_000, &mut rng).unwrap();
        assert!(ks_two_sample(&obs, sample.sqrt_samples()) < 0.01);

        let three: SizeModel = ParametricSize::PointMass(3.0).into();
        let scaled = forward_sample(&sample, &three, 100_000, &mut rng).unwrap();
        let tripled: Vec<f64> = obs.iter().map(|s| 3.0 * s).collect();
        assert!(ks_two_sample(&scaled, &tripled) < 0.01);
    }

    #[test]
    fn forward_exponential_area_moment_on_ball() {
        // E[Z] = 2π/3 for the unit ball and E[Λ_b²] = E[Λ³]/E[Λ] = 6.
        let exp: SizeModel = ParametricSize::STANDARD_EXPONENTIAL.into();
        let n = 200_000;
        let obs = forward_sample(&AnalyticBall, &exp, n, &mut SeedRng::new(16)).unwrap();
        let areas: Vec<f64> = obs.iter().map(|s| s * s).collect();
        let m = crate::stats::mean(&areas);
        let var = areas.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!((m - 4.0 * PI).abs() < 3.0 * se, "mean {m}, se {se}");
    }

    #[test]
    fn forward_cdf_fs_cases() {
        let r = sample_reference(&Polyhedron::cube(), 20_000, &SeedRng::new(17));
        let one = StepCdf::point_mass(1.0).unwrap();
        for s in [0.1, 0.5, 0.9, 1.1] {
            assert_eq!(forward_cdf_fs(&r, &one, s), r.sqrt_area_cdf(s));
        }
        let two = step(&[1.0, 2.0], &[0.5, 0.5]);
        assert_eq!(forward_cdf_fs(&r, &two, 0.0), 0.0);
        assert_eq!(forward_cdf_fs(&r, &two, 1e3), 1.0);
        for s in [0.3, 0.8, 1.5] {
            let want = 0.5 * r.sqrt_area_cdf(s) + 0.5 * r.sqrt_area_cdf(s / 2.0);
            assert!((forward_cdf_fs(&r, &two, s) - want).abs() < 1e-15);
        }
    }

    #[test]
    fn forward_sample_follows_induced_cdf() {
        let r = sample_reference(&Polyhedron::tetrahedron(), 200_000, &SeedRng::new(18));
        let hb = step(&[0.5, 1.0, 1.7, 3.0], &[0.1, 0.4, 0.3, 0.2]);
        let obs = forward_sample_biased(&r, &hb.clone().into(), 100_000, &mut SeedRng::new(19));
        assert!(ks_one_sample(&obs, |s| forward_cdf_fs(&r, &hb, s)) < 0.01);
    }

    #[test]
    fn number_density_cases() {
        let mut rng = SeedRng::new(20);
        let cube = Polyhedron::cube();
        let exp: SizeModel = ParametricSize::STANDARD_EXPONENTIAL.into();
        let na = number_density_relation(3.0, &cube, &exp, &mut rng, 200_000).unwrap();
        assert!((na - 4.5).abs() < 0.01, "{na}");

        let ball = Polyhedron::geodesic_sphere(4);
        let one: SizeModel = ParametricSize::PointMass(1.0).into();
        let na = number_density_relation(1.0, &ball, &one, &mut rng, 100_000).unwrap();
        assert!((na - 2.0).abs() < 0.01, "{na}");

        let a = number_density_relation(1.0, &cube, &exp, &mut SeedRng::new(21), 1000).unwrap();
        let half: SizeModel = ParametricSize::Exponential { rate: 0.5 }.into();
        let b = number_density_relation(1.0, &cube, &half, &mut SeedRng::new(21), 1000).unwrap();
        assert!((b - 2.0 * a).abs() < 1e-12);
    }
}
