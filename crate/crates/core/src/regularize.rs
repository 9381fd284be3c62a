//! Truncation de-biasing: `Ĥ` from the MLE `Ĥ^b` by dropping biased mass
//! below a cutoff `t`, then inverting the length bias.
//!
//! The cutoff `t̂` minimizes, over the observations, the L1 distance between
//! the empirical CDF of the observations and the CDF of `√Z · Λ_b` induced by
//! the truncated `Ĥ^b`. Atoms at `t` itself survive truncation.

use serde::{Deserialize, Serialize};

use crate::bias::{debias, StepCdf};
use crate::error::{Error, Result};
use crate::unfold::{fit, AlphaMatrix, FitState, SolverConfig};

/// Candidates whose surviving mass is below this are skipped.
pub const MIN_SURVIVING_MASS: f64 = 1e-9;

/// Atoms lighter than this fraction of the total are left out of the
/// selection criterion. The solver does not resolve masses this small, and
/// each one would add a candidate group and a term to every evaluation.
pub const SELECTION_MIN_MASS: f64 = 1e-6;

/// Cap on the steps locating a crossing of the two CDFs inside a gap
/// between observations.
const CROSSING_STEPS: usize = 64;

/// The crossing search stops once the integral error, at most twice the
/// bracket width times the CDF rise across it, is below this times the gap end.
const CROSSING_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "rule", content = "t")]
pub enum TruncationRule {
    /// `t = 0`: plug-in de-biasing of the raw MLE.
    None,
    Fixed(f64),
    /// Data-driven `t̂` (L1 criterion).
    #[default]
    Select,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruncationResult {
    pub t_hat: f64,
    /// De-biased, truncated estimate of `H`.
    pub h_hat: StepCdf,
    /// Truncated `Ĥ^b(·; t̂)`.
    pub hb_truncated: StepCdf,
    /// `(t, L1 distance)` for every evaluated candidate.
    pub l1_profile: Vec<(f64, f64)>,
}

/// Removes the mass strictly below `t` and renormalizes.
pub fn truncate_biased(hb: &StepCdf, t: f64) -> Result<StepCdf> {
    let first = hb.support().partition_point(|&s| s < t);
    let surviving: f64 = hb.probs()[first..].iter().sum();
    if !(surviving >= MIN_SURVIVING_MASS) {
        return Err(Error::TruncationRemovesAllMass(t));
    }
    StepCdf::from_weights(hb.support()[first..].to_vec(), hb.probs()[first..].to_vec())
}

/// Truncation followed by de-biasing.
pub fn debias_truncated(hb: &StepCdf, t: f64) -> Result<StepCdf> {
    debias(&truncate_biased(hb, t)?)
}

/// Empirical CDF `G` of sorted reference draws and its running integral
/// `Γ(u) = ∫₀^u G = (k u − Σ_{x ≤ u} x) / N` with `k = #{x ≤ u}`.
struct ReferenceCdf<'a> {
    x: &'a [f64],
    prefix: Vec<f64>,
}

impl<'a> ReferenceCdf<'a> {
    fn new(x: &'a [f64]) -> Self {
        let mut prefix = Vec::with_capacity(x.len() + 1);
        let mut acc = 0.0;
        prefix.push(0.0);
        for &v in x {
            acc += v;
            prefix.push(acc);
        }
        Self { x, prefix }
    }

    fn cdf(&self, u: f64) -> f64 {
        self.x.partition_point(|&v| v <= u) as f64 / self.x.len() as f64
    }

    fn integral(&self, u: f64) -> f64 {
        let k = self.x.partition_point(|&v| v <= u);
        (k as f64 * u - self.prefix[k]) / self.x.len() as f64
    }

    fn max(&self) -> f64 {
        self.x[self.x.len() - 1]
    }
}

/// Number of reference draws `≤ u` (or `< u` when `strict`), searching
/// forward from `from`, which must not exceed the answer.
fn count_from(x: &[f64], from: usize, u: f64, strict: bool) -> usize {
    let below = |v: f64| if strict { v < u } else { v <= u };
    // Galloping search; every draw left of `lo` is below `u`.
    let mut lo = from;
    let mut step = 1;
    while lo + step <= x.len() && below(x[lo + step - 1]) {
        lo += step;
        step *= 2;
    }
    let hi = (lo + step).min(x.len());
    lo + x[lo..hi].partition_point(|&v| below(v))
}

/// L1 distances `∫₀^∞ |F_k − F̄|` for the nested candidates `F_k`, the law
/// induced by the atoms `k..m` renormalized.
///
/// Atoms are added from the top down; per evaluation point the running sums
/// of `p_j G(u/λ_j)`, `p_j G((u/λ_j)−)` and `p_j λ_j Γ(u/λ_j)` give each
/// gap's integral in closed form. Only gaps where `F_k` crosses the
/// empirical level need a bisection.
struct Sweep<'a> {
    g: &'a ReferenceCdf<'a>,
    atoms: &'a [(f64, f64)],
    /// `0`, the distinct observations, and the end of the induced support.
    points: Vec<f64>,
    /// Empirical CDF on `[points[t], points[t+1])`.
    levels: Vec<f64>,
    acc_g: Vec<f64>,
    acc_gl: Vec<f64>,
    acc_i: Vec<f64>,
}

impl<'a> Sweep<'a> {
    fn new(g: &'a ReferenceCdf<'a>, atoms: &'a [(f64, f64)], s: &[f64]) -> Self {
        let n = s.len() as f64;
        let mut points = vec![0.0];
        let mut levels = vec![0.0];
        let mut i = 0;
        while i < s.len() {
            let mut k = i + 1;
            while k < s.len() && s[k] == s[i] {
                k += 1;
            }
            points.push(s[i]);
            levels.push(k as f64 / n);
            i = k;
        }
        let top = atoms.iter().map(|a| a.0).fold(0.0, f64::max) * g.max();
        points.push(top.max(s[s.len() - 1]));
        let len = points.len();
        Self { g, atoms, points, levels, acc_g: vec![0.0; len], acc_gl: vec![0.0; len], acc_i: vec![0.0; len] }
    }

    fn add_atom(&mut self, k: usize) {
        let (lam, p) = self.atoms[k];
        let x = self.g.x;
        let big_n = x.len() as f64;
        let (mut le, mut lt) = (0, 0);
        for (t, &pt) in self.points.iter().enumerate() {
            let u = pt / lam;
            lt = count_from(x, lt, u, true);
            le = count_from(x, le.max(lt), u, false);
            self.acc_g[t] += p * le as f64 / big_n;
            self.acc_gl[t] += p * lt as f64 / big_n;
            self.acc_i[t] += p * lam * (le as f64 * u - self.g.prefix[le]) / big_n;
        }
    }

    fn cdf(&self, k: usize, tail: f64, s: f64) -> f64 {
        self.atoms[k..].iter().map(|&(lam, p)| p * self.g.cdf(s / lam)).sum::<f64>() / tail
    }

    fn integral_to(&self, k: usize, tail: f64, s: f64) -> f64 {
        self.atoms[k..].iter().map(|&(lam, p)| p * lam * self.g.integral(s / lam)).sum::<f64>() / tail
    }

    /// A point `x` in `(a, b]` with `F_k(x−) ≤ c ≤ F_k(x)` up to the
    /// tolerance, by Illinois regula falsi on the bracket.
    fn crossing(&self, k: usize, tail: f64, c: f64, (mut lo, mut flo): (f64, f64), (mut hi, mut fhi): (f64, f64)) -> f64 {
        // Secant weights; halved on the side that keeps being retained.
        let (mut wlo, mut whi) = (c - flo, fhi - c);
        let mut last_side = 0i8;
        for _ in 0..CROSSING_STEPS {
            if (hi - lo) * (fhi - flo) <= CROSSING_TOL * hi {
                break;
            }
            let mut x = lo + (hi - lo) * wlo / (wlo + whi);
            if !(x > lo && x < hi) {
                x = 0.5 * (lo + hi);
                if !(x > lo && x < hi) {
                    break;
                }
            }
            let fx = self.cdf(k, tail, x);
            if fx >= c {
                (hi, fhi, whi) = (x, fx, fx - c);
                if last_side == 1 {
                    wlo *= 0.5;
                }
                last_side = 1;
            } else {
                (lo, flo, wlo) = (x, fx, c - fx);
                if last_side == -1 {
                    whi *= 0.5;
                }
                last_side = -1;
            }
        }
        hi
    }

    /// Distance of candidate `k` given that atoms `k..` have been added.
    fn distance(&self, k: usize, tail: f64) -> f64 {
        let mut total = 0.0;
        for t in 0..self.points.len() - 1 {
            let (a, b, c) = (self.points[t], self.points[t + 1], self.levels[t]);
            if b <= a {
                continue;
            }
            let fa = self.acc_g[t] / tail;
            let fb = self.acc_gl[t + 1] / tail;
            let area = (self.acc_i[t + 1] - self.acc_i[t]) / tail;
            total += if fa >= c {
                area - c * (b - a)
            } else if fb <= c {
                c * (b - a) - area
            } else {
                let hi = self.crossing(k, tail, c, (a, fa), (b, fb));
                let mid = self.integral_to(k, tail, hi);
                let left = mid - self.acc_i[t] / tail;
                let right = self.acc_i[t + 1] / tail - mid;
                (c * (hi - a) - left) + (right - c * (b - hi))
            };
        }
        total
    }
}

/// L1 distance between the observation ECDF and the law induced by `hb`
/// and the reference draws (both sorted ascending).
pub fn induced_l1_distance(hb: &StepCdf, reference_sqrt_samples: &[f64], s: &[f64]) -> f64 {
    let g = ReferenceCdf::new(reference_sqrt_samples);
    let atoms = positive_atoms(hb);
    let mut sweep = Sweep::new(&g, &atoms, s);
    for k in (0..atoms.len()).rev() {
        sweep.add_atom(k);
    }
    sweep.distance(0, atoms.iter().map(|a| a.1).sum())
}

fn positive_atoms(hb: &StepCdf) -> Vec<(f64, f64)> {
    hb.support().iter().zip(hb.probs()).filter(|(_, &p)| p > 0.0).map(|(&l, &p)| (l, p)).collect()
}

/// Data-driven cutoff over `t ∈ {s_1, …, s_n}`; ties go to the smaller `t`.
///
/// The criterion sees `hb` without atoms below [`SELECTION_MIN_MASS`];
/// the returned estimates truncate `hb` itself. Candidates with the same
/// surviving atoms share one exact evaluation.
pub fn select_truncation(hb: &StepCdf, reference_sqrt_samples: &[f64], s: &[f64]) -> Result<TruncationResult> {
    if s.is_empty() || reference_sqrt_samples.is_empty() {
        return Err(Error::InvalidArgument("truncation selection needs observations and reference draws".into()));
    }
    let g = ReferenceCdf::new(reference_sqrt_samples);
    let mut atoms = positive_atoms(hb);
    let total: f64 = atoms.iter().map(|a| a.1).sum();
    atoms.retain(|a| a.1 >= SELECTION_MIN_MASS * total);
    // Mass surviving a cut at atom k and beyond.
    let mut tail = vec![0.0; atoms.len() + 1];
    for k in (0..atoms.len()).rev() {
        tail[k] = tail[k + 1] + atoms[k].1;
    }
    let group_of = |t: f64| atoms.partition_point(|a| a.0 < t);
    let mut groups: Vec<usize> = s
        .iter()
        .map(|&t| group_of(t))
        .filter(|&k| k < atoms.len() && tail[k] >= MIN_SURVIVING_MASS)
        .collect();
    groups.sort_unstable();
    groups.dedup();
    let mut sweep = Sweep::new(&g, &atoms, s);
    let mut distances: Vec<(usize, f64)> = Vec::with_capacity(groups.len());
    let mut pending = groups.iter().rev().peekable();
    for k in (0..atoms.len()).rev() {
        sweep.add_atom(k);
        if pending.next_if(|&&gk| gk == k).is_some() {
            distances.push((k, sweep.distance(k, tail[k])));
        }
    }
    distances.reverse();
    let distance_of = |k: usize| distances[distances.partition_point(|d| d.0 < k)].1;

    let mut l1_profile = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for &t in s {
        let k = group_of(t);
        if k >= atoms.len() || tail[k] < MIN_SURVIVING_MASS {
            continue;
        }
        let d = distance_of(k);
        l1_profile.push((t, d));
        if best.is_none_or(|(_, bd)| d < bd) {
            best = Some((t, d));
        }
    }
    let (t_hat, _) = best.ok_or(Error::TruncationRemovesAllMass(s[0]))?;
    let hb_truncated = truncate_biased(hb, t_hat)?;
    let h_hat = debias(&hb_truncated)?;
    Ok(TruncationResult { t_hat, h_hat, hb_truncated, l1_profile })
}

/// Applies a truncation rule to a fitted `Ĥ^b`.
pub fn apply_truncation(
    hb: &StepCdf,
    reference_sqrt_samples: &[f64],
    s: &[f64],
    rule: TruncationRule,
) -> Result<TruncationResult> {
    match rule {
        TruncationRule::Select => select_truncation(hb, reference_sqrt_samples, s),
        TruncationRule::None | TruncationRule::Fixed(_) => {
            let t = if let TruncationRule::Fixed(t) = rule { t } else { 0.0 };
            let hb_truncated = truncate_biased(hb, t)?;
            let h_hat = debias(&hb_truncated)?;
            Ok(TruncationResult { t_hat: t, h_hat, hb_truncated, l1_profile: Vec::new() })
        }
    }
}

/// End-to-end estimate from an assembled α-matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub fit: FitState,
    /// Untruncated MLE `Ĥ^b`.
    pub hb_hat: StepCdf,
    pub truncation: TruncationResult,
}

/// Fit, then truncate and de-bias. `reference_sqrt_samples` are the sorted
/// draws behind the density in `a`; their empirical CDF is `G_K^S`.
pub fn estimate_h(
    a: &AlphaMatrix,
    reference_sqrt_samples: &[f64],
    cfg: &SolverConfig,
    rule: TruncationRule,
) -> Result<Estimate> {
    let state = fit(a, cfg)?;
    let hb_hat = state.to_step_cdf(a)?;
    let truncation = apply_truncation(&hb_hat, reference_sqrt_samples, a.observations(), rule)?;
    Ok(Estimate { fit: state, hb_hat, truncation })
}
