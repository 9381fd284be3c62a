//! Nonparametric maximum likelihood for the length-biased size CDF `H^b`
//! on the sieve of step functions jumping at the observations.
//!
//! The unknown is `β_j = H^b(s_j)` in the cone `0 ≤ β_1 ≤ … ≤ β_n ≤ 1`.
//! Solvers minimize the convex `φ(β) = −l(β) + β_n`:
//!
//! - [`Algorithm::Em`]: multiplicative EM updates of `p_j = β_j − β_{j−1}`;
//! - [`Algorithm::Icm`]: modified iterative convex minorant with a
//!   diagonal-Hessian quadratic model, weighted isotonic regression and a
//!   bisection line search;
//! - [`Algorithm::Hybrid`]: one ICM step then one EM step per iteration.

mod alpha;
mod likelihood;
mod pava;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use alpha::{uniqueness_diagnostic, AlphaMatrix, Observations, Uniqueness, DENSE_LIMIT, RANK_TOL};
pub use likelihood::{
    deconvolution_log_likelihood, em_step, gradient_and_diag_hessian, kkt_residual, log_likelihood, phi,
};
pub use pava::{isotonic_ls, isotonic_ls_bounded};

use crate::bias::StepCdf;
use crate::error::{Error, Result};
use likelihood::{Pass, Workspace};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Em,
    Icm,
    #[default]
    Hybrid,
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Em => "em",
            Self::Icm => "icm",
            Self::Hybrid => "hybrid",
        })
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "em" => Ok(Self::Em),
            "icm" => Ok(Self::Icm),
            "hybrid" | "icm-em" => Ok(Self::Hybrid),
            other => Err(Error::InvalidArgument(format!("unknown solver {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    /// Stop once `max_j |Δβ_j| < eps_stop` for `stable_iters` successive iterations.
    pub eps_stop: f64,
    pub stable_iters: usize,
    pub max_iters: usize,
    /// Sufficient-decrease constant of the ICM line search, in `(0, 1/2)`.
    pub line_search_eps: f64,
    /// Added to the diagonal Hessian so the quadratic model stays definite.
    pub hessian_ridge: f64,
    /// Bisection steps before an ICM step is declared stalled.
    pub max_halvings: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Hybrid,
            eps_stop: 1e-4,
            stable_iters: 10,
            max_iters: 5000,
            line_search_eps: 0.1,
            hessian_ridge: 1e-8,
            max_halvings: 60,
        }
    }
}

impl SolverConfig {
    pub fn with_algorithm(algorithm: Algorithm) -> Self {
        Self { algorithm, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(format!("solver config: {what}")));
        if !(self.line_search_eps > 0.0 && self.line_search_eps < 0.5) {
            return bad("line_search_eps must lie in (0, 1/2)");
        }
        if !(self.eps_stop > 0.0) {
            return bad("eps_stop must be positive");
        }
        if self.stable_iters == 0 || self.max_iters == 0 {
            return bad("stable_iters and max_iters must be positive");
        }
        if !(self.hessian_ridge >= 0.0) {
            return bad("hessian_ridge must be nonnegative");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitState {
    /// `β_j = Ĥ^b(s_j)`, nondecreasing with `β_n = 1` after [`fit`].
    pub beta: Vec<f64>,
    pub loglik: f64,
    pub iteration: usize,
    pub converged: bool,
    /// `l(β)` at the start and after every iteration.
    pub loglik_trace: Vec<f64>,
    /// ICM steps whose line search hit the halving cap and left `β` unchanged.
    pub stalls: usize,
    /// See [`kkt_residual`].
    pub kkt_residual: f64,
}

impl FitState {
    /// `β^(0) = (1/n, 2/n, …, 1)`.
    pub fn initial(a: &AlphaMatrix) -> Result<Self> {
        let n = a.n();
        let beta: Vec<f64> = (1..=n).map(|j| j as f64 / n as f64).collect();
        Self::from_beta(a, beta)
    }

    pub fn from_beta(a: &AlphaMatrix, beta: Vec<f64>) -> Result<Self> {
        let loglik = log_likelihood(a, &beta)?;
        if loglik == f64::NEG_INFINITY {
            return Err(Error::Infeasible("starting point has log-likelihood −∞".into()));
        }
        Ok(Self {
            beta,
            loglik,
            iteration: 0,
            converged: false,
            loglik_trace: vec![loglik],
            stalls: 0,
            kkt_residual: f64::NAN,
        })
    }

    /// `Ĥ^b` as a step CDF on the observations (zero-mass atoms kept).
    pub fn to_step_cdf(&self, a: &AlphaMatrix) -> Result<StepCdf> {
        StepCdf::from_cumulative(a.observations().to_vec(), &self.beta)
    }
}

/// Outcome of one ICM step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IcmOutcome {
    pub phi_before: f64,
    pub phi_after: f64,
    /// The full candidate passed the sufficient-decrease test.
    pub accepted_candidate: bool,
    pub stalled: bool,
}

struct Solver<'a> {
    a: &'a AlphaMatrix,
    cfg: SolverConfig,
    ws: Workspace,
    grad: Vec<f64>,
    weights: Vec<f64>,
    targets: Vec<f64>,
    z: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn new(a: &'a AlphaMatrix, cfg: SolverConfig) -> Self {
        let n = a.n();
        Self {
            a,
            cfg,
            ws: Workspace::new(n),
            grad: vec![0.0; n],
            weights: vec![0.0; n],
            targets: vec![0.0; n],
            z: vec![0.0; n],
        }
    }

    fn phi(&mut self, beta: &[f64], pass: Pass) -> f64 {
        self.ws.load_beta(beta);
        let l = self.ws.evaluate(self.a, pass);
        if l == f64::NEG_INFINITY {
            f64::INFINITY
        } else {
            -l + beta[beta.len() - 1]
        }
    }

    /// `l(β)`. The pass is chosen for the step that follows, so that step
    /// finds its column sums already computed.
    fn loglik(&mut self, beta: &[f64]) -> f64 {
        let pass = if self.cfg.algorithm == Algorithm::Em { Pass::Support } else { Pass::Full };
        self.ws.load_beta(beta);
        self.ws.evaluate(self.a, pass)
    }

    /// One modified-ICM step in place.
    fn icm(&mut self, beta: &mut [f64]) -> IcmOutcome {
        let n = beta.len();
        let phi_k = self.phi(beta, Pass::Full);
        self.ws.phi_gradient(&mut self.grad);
        for j in 0..n {
            self.weights[j] = self.ws.h[j] + self.cfg.hessian_ridge;
            self.targets[j] = beta[j] - self.grad[j] / self.weights[j];
        }
        let cand = isotonic_ls_bounded(&self.weights, &self.targets, 0.0, 1.0);
        let gd: f64 = (0..n).map(|j| self.grad[j] * (cand[j] - beta[j])).sum();
        let eps = self.cfg.line_search_eps;

        // Hybrid runs EM next and pure ICM its next step at the accepted point.
        let next = if self.cfg.algorithm == Algorithm::Hybrid { Pass::Support } else { Pass::Full };
        let phi_c = self.phi(&cand, next);
        if phi_c < phi_k + eps * gd {
            beta.copy_from_slice(&cand);
            return IcmOutcome { phi_before: phi_k, phi_after: phi_c, accepted_candidate: true, stalled: false };
        }

        // Bisection on z = β^(k) + λ(β − β^(k)).
        let (mut lambda, mut s) = (1.0, 0.5);
        self.z.copy_from_slice(&cand);
        let mut phi_z = phi_c;
        let mut halvings = 0;
        loop {
            let too_short = phi_z < phi_k + (1.0 - eps) * lambda * gd;
            let too_long = phi_z > phi_k + eps * lambda * gd;
            if !(too_short || too_long) {
                break;
            }
            if halvings == self.cfg.max_halvings {
                return IcmOutcome { phi_before: phi_k, phi_after: phi_k, accepted_candidate: false, stalled: true };
            }
            if too_short {
                lambda += s;
            }
            if too_long {
                lambda -= s;
            }
            let mut running: f64 = 0.0;
            for j in 0..n {
                let v = (beta[j] + lambda * (cand[j] - beta[j])).clamp(0.0, 1.0);
                running = running.max(v);
                self.z[j] = running;
            }
            let z = std::mem::take(&mut self.z);
            phi_z = self.phi(&z, next.min(Pass::Support));
            self.z = z;
            s /= 2.0;
            halvings += 1;
        }
        beta.copy_from_slice(&self.z);
        IcmOutcome { phi_before: phi_k, phi_after: phi_z, accepted_candidate: false, stalled: false }
    }

    /// One EM step in place; the update is restricted to the support of `p`.
    fn em(&mut self, beta: &mut [f64]) -> Result<()> {
        self.ws.load_beta(beta);
        if self.ws.evaluate(self.a, Pass::Support) == f64::NEG_INFINITY {
            return Err(Error::Infeasible("an observation has zero likelihood".into()));
        }
        let mut total = 0.0;
        for &j in &self.ws.supp {
            total += self.ws.p[j] * self.ws.c[j];
        }
        let mut acc = 0.0;
        let mut next = 0;
        for j in 0..beta.len() {
            if self.ws.supp.get(next) == Some(&j) {
                acc += self.ws.p[j] * self.ws.c[j] / total;
                next += 1;
            }
            beta[j] = acc.min(1.0);
        }
        let last = beta.len() - 1;
        beta[last] = 1.0;
        Ok(())
    }
}

/// One ICM step from `state`; `φ` never increases.
pub fn icm_step(a: &AlphaMatrix, state: &FitState, cfg: &SolverConfig) -> Result<(FitState, IcmOutcome)> {
    cfg.validate()?;
    let mut solver = Solver::new(a, *cfg);
    let mut beta = state.beta.clone();
    let outcome = solver.icm(&mut beta);
    let loglik = solver.loglik(&beta);
    let mut next = state.clone();
    next.beta = beta;
    next.loglik = loglik;
    next.iteration += 1;
    next.loglik_trace.push(loglik);
    next.stalls += usize::from(outcome.stalled);
    Ok((next, outcome))
}

/// Runs the configured algorithm from `β^(0) = (1/n, …, 1)`.
pub fn fit(a: &AlphaMatrix, cfg: &SolverConfig) -> Result<FitState> {
    fit_from(a, cfg, FitState::initial(a)?)
}

/// Runs the configured algorithm from `start`. A run that reaches
/// `max_iters` returns its last iterate with `converged = false`.
pub fn fit_from(a: &AlphaMatrix, cfg: &SolverConfig, start: FitState) -> Result<FitState> {
    cfg.validate()?;
    let mut solver = Solver::new(a, *cfg);
    let mut state = start;
    let mut beta = state.beta.clone();
    let mut prev = beta.clone();
    let mut stable = 0;
    while state.iteration < cfg.max_iters {
        match cfg.algorithm {
            Algorithm::Em => solver.em(&mut beta)?,
            Algorithm::Icm => {
                state.stalls += usize::from(solver.icm(&mut beta).stalled);
            }
            Algorithm::Hybrid => {
                state.stalls += usize::from(solver.icm(&mut beta).stalled);
                solver.em(&mut beta)?;
            }
        }
        state.iteration += 1;
        state.loglik_trace.push(solver.loglik(&beta));
        let change = beta.iter().zip(&prev).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        stable = if change < cfg.eps_stop { stable + 1 } else { 0 };
        prev.copy_from_slice(&beta);
        if stable >= cfg.stable_iters {
            state.converged = true;
            break;
        }
    }
    let top = beta[beta.len() - 1];
    if !(top > 0.0) {
        return Err(Error::Infeasible("fit placed no mass".into()));
    }
    beta.iter_mut().for_each(|b| *b /= top);
    state.loglik = solver.loglik(&beta);
    state.kkt_residual = kkt_residual(a, &beta)?;
    state.beta = beta;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bias::{forward_sample_biased, ParametricSize, SizeModel};
    use crate::refdist::{AnalyticBall, SectionSource};
    use crate::rng::SeedRng;

    fn ball_instance(n: usize, seed: u64) -> AlphaMatrix {
        let hb: SizeModel = ParametricSize::Lognormal { mu: 0.0, sigma: 0.4 }.into();
        let s = forward_sample_biased(&AnalyticBall, &hb, n, &mut SeedRng::new(seed));
        let obs = Observations::new(s).unwrap();
        AlphaMatrix::build(&AnalyticBall, obs.values()).unwrap()
    }

    fn sup_distance(a: &AlphaMatrix, x: &FitState, y: &FitState) -> f64 {
        let (fx, fy) = (x.to_step_cdf(a).unwrap(), y.to_step_cdf(a).unwrap());
        a.observations().iter().map(|&s| (fx.cdf(s) - fy.cdf(s)).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn config_validation_and_parsing() {
        assert!(SolverConfig::default().validate().is_ok());
        let bad = SolverConfig { line_search_eps: 0.5, ..SolverConfig::default() };
        assert!(bad.validate().is_err());
        assert_eq!("ICM".parse::<Algorithm>().unwrap(), Algorithm::Icm);
        assert!("newton".parse::<Algorithm>().is_err());
        assert_eq!(SolverConfig::default().algorithm.to_string(), "hybrid");
    }

    #[test]
    fn single_observation_is_a_point_mass() {
        let a = AlphaMatrix::build(&AnalyticBall, &[0.8]).unwrap();
        for algorithm in [Algorithm::Em, Algorithm::Icm, Algorithm::Hybrid] {
            let st = fit(&a, &SolverConfig::with_algorithm(algorithm)).unwrap();
            assert_eq!(st.beta, vec![1.0]);
            assert!(st.converged);
            let h = st.to_step_cdf(&a).unwrap();
            assert_eq!(h.support(), &[0.8]);
        }
        let start = FitState::initial(&a).unwrap();
        let (next, _) = icm_step(&a, &start, &SolverConfig::default()).unwrap();
        assert!((next.beta[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn em_log_likelihood_never_decreases() {
        let a = ball_instance(150, 40);
        let cfg = SolverConfig { max_iters: 300, ..SolverConfig::with_algorithm(Algorithm::Em) };
        let st = fit(&a, &cfg).unwrap();
        for w in st.loglik_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-12, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn icm_steps_never_increase_phi() {
        let a = ball_instance(200, 41);
        let cfg = SolverConfig::with_algorithm(Algorithm::Icm);
        let mut st = FitState::initial(&a).unwrap();
        for _ in 0..100 {
            let (next, out) = icm_step(&a, &st, &cfg).unwrap();
            assert!(out.phi_after <= out.phi_before, "{out:?}");
            let phi_next = phi(&a, &next.beta).unwrap();
            assert!(phi_next <= phi(&a, &st.beta).unwrap());
            assert!(next.beta.windows(2).all(|w| w[0] <= w[1]));
            assert!(next.beta.iter().all(|b| (0.0..=1.0).contains(b)));
            st = next;
        }
    }

    #[test]
    fn small_instance_icm_matches_em() {
        let a = ball_instance(5, 42);
        let icm = fit(&a, &SolverConfig { eps_stop: 1e-10, ..SolverConfig::with_algorithm(Algorithm::Icm) }).unwrap();
        let em = fit(
            &a,
            &SolverConfig { eps_stop: 1e-13, max_iters: 200_000, ..SolverConfig::with_algorithm(Algorithm::Em) },
        )
        .unwrap();
        assert!((icm.loglik - em.loglik).abs() < 1e-6, "{} vs {}", icm.loglik, em.loglik);
    }

    #[test]
    fn algorithms_agree_on_two_hundred_observations() {
        let a = ball_instance(200, 43);
        let hybrid = fit(&a, &SolverConfig::default()).unwrap();
        let icm = fit(&a, &SolverConfig::with_algorithm(Algorithm::Icm)).unwrap();
        let em = fit(
            &a,
            &SolverConfig { eps_stop: 1e-9, max_iters: 100_000, ..SolverConfig::with_algorithm(Algorithm::Em) },
        )
        .unwrap();
        assert!(hybrid.converged && icm.converged);
        for other in [&icm, &em] {
            assert!((hybrid.loglik - other.loglik).abs() < 1e-4, "{} vs {}", hybrid.loglik, other.loglik);
            assert!(sup_distance(&a, &hybrid, other) < 5e-3, "{}", sup_distance(&a, &hybrid, other));
        }
    }

    #[test]
    fn fitted_beta_lies_in_the_cone_with_unit_mass() {
        let a = ball_instance(300, 44);
        let st = fit(&a, &SolverConfig::default()).unwrap();
        assert_eq!(*st.beta.last().unwrap(), 1.0);
        assert!(st.beta.windows(2).all(|w| w[0] <= w[1] + 1e-12));
        assert!(st.beta.iter().all(|&b| (0.0..=1.0).contains(&b)));
        assert!(st.kkt_residual < 1e-2, "{}", st.kkt_residual);
    }

    #[test]
    fn em_polished_fit_satisfies_kkt() {
        let a = ball_instance(30, 45);
        let cfg = SolverConfig { eps_stop: 1e-14, max_iters: 500_000, ..SolverConfig::with_algorithm(Algorithm::Icm) };
        let st = fit(&a, &cfg).unwrap();
        let p = {
            let mut prev = 0.0;
            st.beta
                .iter()
                .map(|&b| {
                    let v = b - prev;
                    prev = b;
                    v
                })
                .collect::<Vec<_>>()
        };
        let mut q = p.clone();
        for _ in 0..2000 {
            q = em_step(&a, &q).unwrap();
        }
        let mut cum = 0.0;
        let beta: Vec<f64> = q
            .iter()
            .map(|v| {
                cum += v;
                cum
            })
            .collect();
        assert!(kkt_residual(&a, &beta).unwrap() < 1e-6, "{}", kkt_residual(&a, &beta).unwrap());
    }

    #[test]
    fn recovers_a_point_mass() {
        let mut rng = SeedRng::new(46);
        let s: Vec<f64> = (0..2000).map(|_| AnalyticBall.draw_sqrt_area(&mut rng)).collect();
        let obs = Observations::new(s).unwrap();
        let a = AlphaMatrix::build(&AnalyticBall, obs.values()).unwrap();
        let st = fit(&a, &SolverConfig::default()).unwrap();
        let h = st.to_step_cdf(&a).unwrap();
        // Nothing above the atom; at least 80% of the mass within 1% below it.
        assert_eq!(h.cdf(1.01), 1.0);
        assert!(h.cdf(0.99) < 0.2, "{}", h.cdf(0.99));
    }
}
