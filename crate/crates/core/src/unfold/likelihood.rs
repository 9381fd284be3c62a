//! Log-likelihood `l(β) = (1/n) Σ_i log D_i` with `D_i = Σ_j α_ij p_j` and
//! `p_j = β_j − β_{j−1}`, its derivatives, and the EM update.

use super::alpha::AlphaMatrix;
use crate::error::{Error, Result};
use crate::refdist::ReferenceDensity;
use crate::stats::CompensatedSum;

/// What one pass over the rows of `α` computes besides `D_i`. Ordered:
/// each pass includes the ones before it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub(crate) enum Pass {
    Sums,
    /// `c_j` on the support of `p`.
    Support,
    /// `c_j` and `h_j` for every `j`.
    Full,
}

/// Reusable buffers for one fit.
#[derive(Clone, Debug, Default)]
pub(crate) struct Workspace {
    pub p: Vec<f64>,
    pub supp: Vec<usize>,
    pub d: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
    /// `l` and the pass last run for the masses currently in `p`.
    cached: Option<(f64, Pass)>,
    scratch: Vec<f64>,
}

/// Four-lane dot product; plain sums of nonnegative terms are accurate to a
/// few ulps per lane here.
#[inline]
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len().min(y.len());
    let (x, y) = (&x[..n], &y[..n]);
    let mut acc = [0.0; 4];
    let mut xs = x.chunks_exact(4);
    let mut ys = y.chunks_exact(4);
    for (a, b) in (&mut xs).zip(&mut ys) {
        for k in 0..4 {
            acc[k] += a[k] * b[k];
        }
    }
    let tail: f64 = xs.remainder().iter().zip(ys.remainder()).map(|(a, b)| a * b).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl Workspace {
    pub fn new(n: usize) -> Self {
        Self {
            p: vec![0.0; n],
            supp: Vec::with_capacity(n),
            d: vec![0.0; n],
            c: vec![0.0; n],
            h: vec![0.0; n],
            cached: None,
            scratch: vec![0.0; n],
        }
    }

    /// Masses `p` and their support from `β`.
    pub fn load_beta(&mut self, beta: &[f64]) {
        let mut prev = 0.0;
        for (q, &b) in self.scratch.iter_mut().zip(beta) {
            *q = (b - prev).max(0.0);
            prev = b;
        }
        self.swap_in_scratch();
    }

    pub fn load_probs(&mut self, p: &[f64]) {
        self.scratch.copy_from_slice(p);
        self.swap_in_scratch();
    }

    fn swap_in_scratch(&mut self) {
        if self.cached.is_some() && self.scratch == self.p {
            return;
        }
        std::mem::swap(&mut self.p, &mut self.scratch);
        self.cached = None;
        self.supp.clear();
        for (j, &pj) in self.p.iter().enumerate() {
            if pj > 0.0 {
                self.supp.push(j);
            }
        }
    }

    /// `l` for the loaded masses, or `−∞` when some `D_i ≤ 0`, together
    /// with whatever `pass` asks for, in one sweep over the rows:
    /// `c_j = (1/n) Σ_i α_ij / D_i` and
    /// `h_j = (1/n) Σ_i (α_ij − α_{i,j+1})² / D_i²`.
    /// Column sums are meaningless when `l = −∞`. Results are reused while
    /// `p` is unchanged.
    pub fn evaluate(&mut self, a: &AlphaMatrix, pass: Pass) -> f64 {
        if let Some((l, done)) = self.cached {
            if done >= pass {
                return l;
            }
        }
        let n = a.n();
        let dense = 4 * self.supp.len() >= n;
        if pass == Pass::Full || (pass == Pass::Support && dense) {
            self.c.iter_mut().for_each(|v| *v = 0.0);
        } else if pass == Pass::Support {
            for &j in &self.supp {
                self.c[j] = 0.0;
            }
        }
        if pass == Pass::Full {
            self.h.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut total = CompensatedSum::default();
        let mut feasible = true;
        for i in 0..n {
            let lo = a.row_lo(i);
            let row = a.row(i);
            let first = if dense { 0 } else { self.supp.partition_point(|&j| j < lo) };
            let di = if dense {
                dot(row, &self.p[lo..])
            } else {
                self.supp[first..].iter().map(|&j| row[j - lo] * self.p[j]).sum()
            };
            self.d[i] = di;
            if di > 0.0 {
                total.add(di.ln());
            } else {
                feasible = false;
            }
            let inv = 1.0 / (n as f64 * di);
            match pass {
                Pass::Sums => {}
                Pass::Support if !dense => {
                    for &j in &self.supp[first..] {
                        self.c[j] += row[j - lo] * inv;
                    }
                }
                Pass::Support => {
                    for (c, &x) in self.c[lo..].iter_mut().zip(row) {
                        *c += x * inv;
                    }
                }
                Pass::Full => {
                    let inv2 = inv / di;
                    let (cs, hs) = (&mut self.c[lo..], &mut self.h[lo..]);
                    let last = row.len() - 1;
                    for k in 0..last {
                        let (x, y) = (row[k], row[k + 1]);
                        cs[k] += x * inv;
                        hs[k] += (x - y) * (x - y) * inv2;
                    }
                    cs[last] += row[last] * inv;
                    hs[last] += row[last] * row[last] * inv2;
                    if lo > 0 {
                        self.h[lo - 1] += row[0] * row[0] * inv2;
                    }
                }
            }
        }
        let l = if feasible { total.value() / n as f64 } else { f64::NEG_INFINITY };
        self.cached = Some((l, pass));
        l
    }

    /// `∇φ` from `c`, for `φ = −l + β_n`.
    pub fn phi_gradient(&self, out: &mut [f64]) {
        let n = out.len();
        for j in 0..n {
            let next = if j + 1 < n { self.c[j + 1] } else { 0.0 };
            out[j] = next - self.c[j];
        }
        out[n - 1] += 1.0;
    }
}

fn check_len(a: &AlphaMatrix, v: &[f64]) -> Result<()> {
    if v.len() == a.n() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("vector of length {} for n = {}", v.len(), a.n())))
    }
}

/// `l(β)`; `−∞` when some observation gets no mass.
pub fn log_likelihood(a: &AlphaMatrix, beta: &[f64]) -> Result<f64> {
    check_len(a, beta)?;
    let mut ws = Workspace::new(a.n());
    ws.load_beta(beta);
    Ok(ws.evaluate(a, Pass::Sums))
}

/// `φ(β) = −l(β) + β_n`.
pub fn phi(a: &AlphaMatrix, beta: &[f64]) -> Result<f64> {
    Ok(-log_likelihood(a, beta)? + beta[beta.len() - 1])
}

/// Gradient and diagonal Hessian of `φ`.
pub fn gradient_and_diag_hessian(a: &AlphaMatrix, beta: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(a, beta)?;
    let mut ws = Workspace::new(a.n());
    ws.load_beta(beta);
    if ws.evaluate(a, Pass::Full) == f64::NEG_INFINITY {
        return Err(Error::Infeasible("log-likelihood is −∞ at this point".into()));
    }
    let mut g = vec![0.0; a.n()];
    ws.phi_gradient(&mut g);
    Ok((g, ws.h))
}

/// One EM update of a probability vector.
pub fn em_step(a: &AlphaMatrix, p: &[f64]) -> Result<Vec<f64>> {
    check_len(a, p)?;
    let mut ws = Workspace::new(a.n());
    ws.load_probs(p);
    if ws.evaluate(a, Pass::Support) == f64::NEG_INFINITY {
        return Err(Error::Infeasible("an observation has zero likelihood".into()));
    }
    let mut next = vec![0.0; a.n()];
    for &j in &ws.supp {
        next[j] = p[j] * ws.c[j];
    }
    let total: f64 = next.iter().sum();
    next.iter_mut().for_each(|v| *v /= total);
    Ok(next)
}

/// First-order optimality defect of the probability vector from `β`:
/// `max_j (c_j − 1)⁺` over all `j`, and `|c_j − 1|` on the support.
pub fn kkt_residual(a: &AlphaMatrix, beta: &[f64]) -> Result<f64> {
    check_len(a, beta)?;
    let mut ws = Workspace::new(a.n());
    ws.load_beta(beta);
    if ws.evaluate(a, Pass::Full) == f64::NEG_INFINITY {
        return Ok(f64::INFINITY);
    }
    let mut r: f64 = ws.c.iter().map(|c| (c - 1.0).max(0.0)).fold(0.0, f64::max);
    for &j in &ws.supp {
        r = r.max((ws.c[j] - 1.0).abs());
    }
    Ok(r)
}

/// Log-likelihood of the additive deconvolution model `Y = X + ε` with
/// `f_ε(z) = g(e^z) e^z`, observations `y` and a discrete law of `X` with
/// atoms `x` and masses `p`.
pub fn deconvolution_log_likelihood<D: ReferenceDensity + ?Sized>(g: &D, y: &[f64], x: &[f64], p: &[f64]) -> f64 {
    let mut total = CompensatedSum::default();
    for &yi in y {
        let mut acc = CompensatedSum::default();
        for (&xj, &pj) in x.iter().zip(p) {
            let z = yi - xj;
            acc.add(g.density(z.exp()) * z.exp() * pj);
        }
        total.add(acc.value().ln());
    }
    total.value() / y.len() as f64
}
