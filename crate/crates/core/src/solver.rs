//! The trace-penalty eigensolver.
//!
//! [`solve_basic`] is the plain BB/GLL descent on `f_beta` for a fixed `beta`.
//! [`solve`] wraps it in outer stages: randomized steps, a symplectic
//! Rayleigh-Ritz extraction after each stage, a restart from the Ritz basis,
//! a refreshed `beta = eta * theta_p` and a tighter inner tolerance.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::factor::{self, restart_point, RitzPairs};
use crate::metrics;
use crate::operators::{canonical_frame, random_block, symplectic_gram, poisson, Basis, SpdOperator};
use crate::penalty::{objective_parts, PenaltyEval};
use crate::stepper::{bb_step, clamp_randomize, gll_search, rank_safeguard, StepState};

/// `(3 + sqrt 5) / 2`, the factor in the best-case penalty `beta_best = c d_p`.
pub const BETA_BEST_FACTOR: f64 = 2.618_033_988_749_895;

/// Inner tolerances never go below this.
pub const EPS_FLOOR: f64 = 1e-14;

/// Penalty parameter: explicit or derived from the trace heuristic.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum Beta {
    #[default]
    Auto,
    Fixed(f64),
}

impl fmt::Display for Beta {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Beta::Auto => f.write_str("auto"),
            Beta::Fixed(b) => write!(f, "{b}"),
        }
    }
}

impl FromStr for Beta {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("auto") {
            return Ok(Beta::Auto);
        }
        s.trim()
            .parse::<f64>()
            .map(Beta::Fixed)
            .map_err(|_| Error::arg(format!("beta must be a number or `auto`, got `{s}`")))
    }
}

impl Serialize for Beta {
    fn serialize<S: Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Beta::Auto => ser.serialize_str("auto"),
            Beta::Fixed(b) => ser.serialize_f64(*b),
        }
    }
}

impl<'de> Deserialize<'de> for Beta {
    fn deserialize<D: Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Int(i64),
            Text(String),
        }
        match Raw::deserialize(de)? {
            Raw::Num(b) => Ok(Beta::Fixed(b)),
            Raw::Int(b) => Ok(Beta::Fixed(b as f64)),
            Raw::Text(s) => s.parse().map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Basic,
    #[default]
    Enhanced,
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "basic" => Ok(Variant::Basic),
            "enhanced" => Ok(Variant::Enhanced),
            other => Err(Error::arg(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    pub beta: Beta,
    pub gamma0: f64,
    pub gamma_lo: f64,
    pub gamma_hi: f64,
    pub xi_lo: f64,
    pub xi_hi: f64,
    /// Total inner iterations over all stages.
    pub k_max: usize,
    pub eps0: f64,
    pub delta_eps: f64,
    pub delta: f64,
    pub lambda: f64,
    /// GLL memory `L`.
    pub memory: usize,
    pub eta: f64,
    pub outer_max: usize,
    /// Target residue for the enhanced solver.
    pub tol: f64,
    /// Absolute gradient tolerance of the basic solver.
    pub grad_tol: f64,
    pub rank_safeguard: bool,
    pub variant: Variant,
    pub seed: u64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self {
            beta: Beta::Auto,
            gamma0: 1e-4,
            gamma_lo: 1e-8,
            gamma_hi: 1e5,
            xi_lo: 0.99,
            xi_hi: 1.0,
            k_max: 5000,
            eps0: 0.1,
            delta_eps: 0.1,
            delta: 0.5,
            lambda: 1e-8,
            memory: 50,
            eta: 1.1,
            outer_max: 20,
            tol: 1e-8,
            grad_tol: 1e-7,
            rank_safeguard: false,
            variant: Variant::Enhanced,
            seed: 0,
        }
    }
}

impl SolverParams {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if let Beta::Fixed(b) = self.beta {
            if !positive(b) {
                return Err(Error::arg(format!("beta must be positive, got {b}")));
            }
        }
        if !(positive(self.gamma_lo) && self.gamma_lo <= self.gamma0 && self.gamma0 <= self.gamma_hi)
            || !self.gamma_hi.is_finite()
        {
            return Err(Error::arg("need 0 < gamma_lo <= gamma0 <= gamma_hi"));
        }
        if !(positive(self.xi_lo) && self.xi_lo <= self.xi_hi && self.xi_hi.is_finite()) {
            return Err(Error::arg("need 0 < xi_lo <= xi_hi"));
        }
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if !unit(self.delta) || !unit(self.lambda) || !unit(self.delta_eps) {
            return Err(Error::arg("delta, lambda and delta_eps must lie in (0, 1)"));
        }
        if !(self.eta > 1.0 && self.eta.is_finite()) {
            return Err(Error::arg("eta must exceed 1"));
        }
        if !positive(self.eps0) || !positive(self.tol) || !positive(self.grad_tol) {
            return Err(Error::arg("tolerances must be positive"));
        }
        if self.k_max == 0 || self.outer_max == 0 {
            return Err(Error::arg("k_max and outer_max must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIterations,
    NumericalFailure,
}

/// One accepted inner step. `f` and `gnorm` belong to the iterate the step
/// starts from; `window_max` is the GLL reference after acceptance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IterRecord {
    pub k: usize,
    pub i: usize,
    pub inner: usize,
    pub f: f64,
    pub gnorm: f64,
    pub gamma: f64,
    pub step: f64,
    pub t: u32,
    pub capped: bool,
    pub safeguard: bool,
    pub beta: f64,
    pub f_next: f64,
    pub window_max: f64,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StageRecord {
    pub i: usize,
    pub beta: f64,
    pub eps: f64,
    /// Absolute gradient threshold used by the inner stop rule.
    pub threshold: f64,
    pub iterations: usize,
    pub reached_tol: bool,
    pub final_gnorm: f64,
    pub min_gnorm: f64,
    pub ritz: Vec<f64>,
    /// `sigma_min(X) / ||X||_2` of the Rayleigh-Ritz input.
    pub sigma_ratio: f64,
    pub residue: f64,
    pub retried: bool,
    pub elapsed: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolveTrace {
    pub iterations: Vec<IterRecord>,
    pub stages: Vec<StageRecord>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SympEigResult {
    /// Ascending.
    pub eigenvalues: Vec<f64>,
    #[serde(skip)]
    pub basis: Basis,
    #[serde(skip)]
    pub x: Basis,
    pub status: Status,
    /// Penalty parameter of the final stage.
    pub beta: f64,
    /// `f_beta(x)` at that `beta`.
    pub objective: f64,
    /// `||x^T J x - J||_F`
    pub feasibility: f64,
    /// `||basis^T J basis - J||_F`
    pub symplecticity: f64,
    pub residue: f64,
    pub iterations: usize,
    pub flops: u64,
    pub elapsed: f64,
    pub message: Option<String>,
    #[serde(skip)]
    pub trace: SolveTrace,
}

/// `tr(A) / (n - p + 1)`.
pub fn beta_suggest(op: &SpdOperator, p: usize) -> Result<f64> {
    let n = op.half_dim();
    check_p(n, p)?;
    Ok(op.trace() / (n - p + 1) as f64)
}

/// `(3 + sqrt 5) / 2 * d_p`.
pub fn beta_best(d_p: f64) -> f64 {
    BETA_BEST_FACTOR * d_p
}

fn check_p(n: usize, p: usize) -> Result<()> {
    if p == 0 || p >= n {
        return Err(Error::arg(format!("need 1 <= p < n, got p = {p}, n = {n}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug)]
enum StopRule {
    Absolute(f64),
    /// `||G|| < eps max(1, ||AX||)`
    Relative(f64),
}

impl StopRule {
    fn threshold(self, ax_norm: f64) -> f64 {
        match self {
            StopRule::Absolute(e) => e,
            StopRule::Relative(e) => e * ax_norm.max(1.0),
        }
    }
}

struct InnerOutcome {
    x: Basis,
    eval: PenaltyEval,
    iterations: usize,
    reached: bool,
    threshold: f64,
    min_gnorm: f64,
    flops: u64,
}

struct InnerConfig<'a> {
    params: &'a SolverParams,
    beta: f64,
    stop: StopRule,
    randomize: bool,
    stage: usize,
    budget: usize,
    k_offset: usize,
}

fn evaluate(op: &SpdOperator, x: &Basis, beta: f64) -> Result<PenaltyEval> {
    let eval = objective_parts(op, x, beta)?.finish(beta);
    if !eval.value.is_finite() || eval.gradient.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("objective or gradient is not finite".into()));
    }
    Ok(eval)
}

/// Smallest and largest singular values of `X` via its `2p x 2p` Gram matrix.
fn gram_extremes(x: &Basis) -> (f64, f64) {
    let ev = x.tr_mul(x).symmetric_eigenvalues();
    (ev.min().max(0.0).sqrt(), ev.max().max(0.0).sqrt())
}

fn run_inner(
    op: &SpdOperator,
    x0: Basis,
    cfg: &InnerConfig<'_>,
    state: &mut StepState,
    trace: &mut Vec<IterRecord>,
) -> Result<InnerOutcome> {
    let prm = cfg.params;
    state.reset();
    let mut x = x0;
    let mut eval = evaluate(op, &x, cfg.beta)?;
    let mut flops = eval.flops;
    state.push_value(eval.value);
    let mut gnorm = eval.gradient.norm();
    let mut min_gnorm = gnorm;
    let mut threshold = cfg.stop.threshold(eval.ax.norm());
    let mut iterations = 0;

    while gnorm >= threshold && iterations < cfg.budget {
        let raw = match (&state.s_prev, &state.z_prev) {
            (Some(s), Some(z)) => bb_step(s, z, state.k, prm.gamma_hi),
            _ => prm.gamma0,
        };
        let (xi_lo, xi_hi) = if cfg.randomize { (prm.xi_lo, prm.xi_hi) } else { (1.0, 1.0) };
        let mut gamma = clamp_randomize(raw, prm.gamma_lo, prm.gamma_hi, xi_lo, xi_hi, &mut state.rng)?;
        let mut safeguard = false;
        if prm.rank_safeguard {
            let (smin, _) = gram_extremes(&x);
            let (_, g2) = gram_extremes(&eval.gradient);
            let capped = rank_safeguard(gamma, smin, g2);
            safeguard = capped < gamma;
            gamma = capped;
        }

        let mut search_flops = 0u64;
        let accepted = gll_search(
            |trial| {
                let parts = objective_parts(op, trial, cfg.beta)?;
                search_flops += parts.flops;
                Ok((parts.value, parts))
            },
            &x,
            &eval.gradient,
            gamma,
            prm.delta,
            prm.lambda,
            state.window_max(),
        )?;
        let objective_flops = accepted.payload.flops;
        let next = accepted.payload.finish(cfg.beta);
        if next.gradient.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("gradient is not finite".into()));
        }
        let iter_flops = search_flops + (next.flops - objective_flops);
        flops += iter_flops;

        let s = &accepted.x - &x;
        let z = &next.gradient - &eval.gradient;
        state.record(s, z);
        state.push_value(next.value);
        trace.push(IterRecord {
            k: cfg.k_offset + iterations,
            i: cfg.stage,
            inner: iterations,
            f: eval.value,
            gnorm,
            gamma,
            step: accepted.step,
            t: accepted.t,
            capped: accepted.capped,
            safeguard,
            beta: cfg.beta,
            f_next: next.value,
            window_max: state.window_max(),
            flops: iter_flops,
        });

        x = accepted.x;
        eval = next;
        gnorm = eval.gradient.norm();
        min_gnorm = min_gnorm.min(gnorm);
        threshold = cfg.stop.threshold(eval.ax.norm());
        iterations += 1;
    }

    Ok(InnerOutcome {
        reached: gnorm < threshold,
        x,
        eval,
        iterations,
        threshold,
        min_gnorm,
        flops,
    })
}

/// Outcome of [`solve_basic`].
#[derive(Clone, Debug)]
pub struct BasicOutcome {
    pub x: Basis,
    pub value: f64,
    pub gnorm: f64,
    pub converged: bool,
    pub iterations: usize,
    pub flops: u64,
    pub trace: Vec<IterRecord>,
}

/// Fixed-`beta` BB descent with the GLL line search until
/// `||G||_F < params.grad_tol` or `params.k_max` iterations.
pub fn solve_basic(op: &SpdOperator, x0: &Basis, beta: f64, params: &SolverParams) -> Result<BasicOutcome> {
    params.validate()?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::arg(format!("beta must be positive, got {beta}")));
    }
    if x0.nrows() != op.dim() || x0.ncols() == 0 || x0.ncols() % 2 != 0 {
        return Err(Error::arg(format!(
            "start point must be {}x2p, got {}x{}",
            op.dim(),
            x0.nrows(),
            x0.ncols()
        )));
    }
    let mut state = StepState::new(params.memory, ChaCha20Rng::seed_from_u64(params.seed));
    let mut trace = Vec::new();
    let cfg = InnerConfig {
        params,
        beta,
        stop: StopRule::Absolute(params.grad_tol),
        randomize: false,
        stage: 0,
        budget: params.k_max,
        k_offset: 0,
    };
    let out = run_inner(op, x0.clone(), &cfg, &mut state, &mut trace)?;
    Ok(BasicOutcome {
        gnorm: out.eval.gradient.norm(),
        value: out.eval.value,
        converged: out.reached,
        iterations: out.iterations,
        flops: out.flops,
        x: out.x,
        trace,
    })
}

fn sigma_ratio(x: &Basis) -> f64 {
    let sv = x.clone().svd(false, false).singular_values;
    let max = sv.max();
    if max > 0.0 {
        sv.min() / max
    } else {
        0.0
    }
}

fn symplecticity(x: &Basis) -> f64 {
    symplectic_gram(x)
        .map(|g| (g - poisson(x.ncols() / 2)).norm())
        .unwrap_or(f64::INFINITY)
}

struct Partial {
    eigenvalues: Vec<f64>,
    basis: Basis,
    x: Basis,
    beta: f64,
    objective: f64,
    residue: f64,
}

impl Partial {
    fn empty(x: Basis, beta: f64) -> Self {
        Self {
            eigenvalues: Vec::new(),
            basis: Basis::zeros(x.nrows(), x.ncols()),
            x,
            beta,
            objective: f64::NAN,
            residue: f64::NAN,
        }
    }
}

/// Computes the `p` smallest symplectic eigenvalues of `op` and a symplectic
/// eigenbasis. Numerical trouble is reported through [`Status`]; only invalid
/// arguments produce an `Err`.
pub fn solve(op: &SpdOperator, p: usize, params: &SolverParams) -> Result<SympEigResult> {
    check_p(op.half_dim(), p)?;
    solve_from(op, &canonical_frame(op.half_dim(), p), params)
}

/// [`solve`] from a caller-chosen start point `x0` (`2n x 2p`).
pub fn solve_from(op: &SpdOperator, x0: &Basis, params: &SolverParams) -> Result<SympEigResult> {
    params.validate()?;
    let n = op.half_dim();
    if x0.nrows() != op.dim() || x0.ncols() % 2 != 0 {
        return Err(Error::arg(format!(
            "start point must be {}x2p, got {}x{}",
            op.dim(),
            x0.nrows(),
            x0.ncols()
        )));
    }
    let p = x0.ncols() / 2;
    check_p(n, p)?;
    let beta0 = match params.beta {
        Beta::Fixed(b) => b,
        Beta::Auto => beta_suggest(op, p)?,
    };
    match params.variant {
        Variant::Basic => Ok(run_basic_variant(op, x0, beta0, params)),
        Variant::Enhanced => Ok(run_enhanced(op, x0, beta0, params)),
    }
}

fn finish(
    part: Partial,
    status: Status,
    trace: SolveTrace,
    flops: u64,
    started: Instant,
    message: Option<String>,
) -> SympEigResult {
    let feasibility = symplectic_gram(&part.x)
        .map(|g| (g - poisson(part.x.ncols() / 2)).norm())
        .unwrap_or(f64::NAN);
    SympEigResult {
        symplecticity: if part.eigenvalues.is_empty() { f64::NAN } else { symplecticity(&part.basis) },
        eigenvalues: part.eigenvalues,
        basis: part.basis,
        status,
        beta: part.beta,
        objective: part.objective,
        feasibility,
        residue: part.residue,
        iterations: trace.iterations.len(),
        flops,
        elapsed: started.elapsed().as_secs_f64(),
        message,
        x: part.x,
        trace,
    }
}

fn run_basic_variant(op: &SpdOperator, x0: &Basis, beta: f64, params: &SolverParams) -> SympEigResult {
    let started = Instant::now();
    let mut trace = SolveTrace::default();
    let mut state = StepState::new(params.memory, ChaCha20Rng::seed_from_u64(params.seed));
    let cfg = InnerConfig {
        params,
        beta,
        stop: StopRule::Absolute(params.grad_tol),
        randomize: false,
        stage: 0,
        budget: params.k_max,
        k_offset: 0,
    };
    let out = match run_inner(op, x0.clone(), &cfg, &mut state, &mut trace.iterations) {
        Ok(o) => o,
        Err(e) => {
            return finish(
                Partial::empty(x0.clone(), beta),
                Status::NumericalFailure,
                trace,
                0,
                started,
                Some(e.to_string()),
            )
        }
    };
    let mut part = Partial::empty(out.x.clone(), beta);
    part.objective = out.eval.value;
    let ratio = sigma_ratio(&out.x);
    let (status, message) = match factor::srr(op, &out.x) {
        Ok(RitzPairs { basis, values }) => {
            part.residue = metrics::residue(op, &basis, &values).unwrap_or(f64::NAN);
            part.eigenvalues = values;
            part.basis = basis;
            let status = if out.reached { Status::Converged } else { Status::MaxIterations };
            (status, None)
        }
        Err(e) => (Status::NumericalFailure, Some(e.to_string())),
    };
    trace.stages.push(StageRecord {
        i: 0,
        beta,
        eps: params.grad_tol,
        threshold: out.threshold,
        iterations: out.iterations,
        reached_tol: out.reached,
        final_gnorm: out.eval.gradient.norm(),
        min_gnorm: out.min_gnorm,
        ritz: part.eigenvalues.clone(),
        sigma_ratio: ratio,
        residue: part.residue,
        retried: false,
        elapsed: started.elapsed().as_secs_f64(),
    });
    finish(part, status, trace, out.flops, started, message)
}

/// `X + scale ||X||_F / sqrt(len) * E`, `E` uniform in `[-1, 1]`.
fn perturb(x: &Basis, scale: f64, rng: &mut ChaCha20Rng) -> Basis {
    let noise = random_block(x.nrows(), x.ncols(), rng);
    let rms = x.norm() / ((x.len().max(1)) as f64).sqrt();
    x + noise * (scale * rms.max(f64::MIN_POSITIVE))
}

fn run_enhanced(op: &SpdOperator, x0: &Basis, beta0: f64, params: &SolverParams) -> SympEigResult {
    let started = Instant::now();
    let mut trace = SolveTrace::default();
    let mut state = StepState::new(params.memory, ChaCha20Rng::seed_from_u64(params.seed));
    let mut beta = beta0;
    let mut eps = params.eps0;
    let mut x_bar = x0.clone();
    let mut used = 0usize;
    let mut flops = 0u64;
    let mut part = Partial::empty(x0.clone(), beta);

    for stage in 0..params.outer_max {
        let stage_start = Instant::now();
        let mut retried = false;
        let (out, ritz, ratio) = loop {
            let cfg = InnerConfig {
                params,
                beta,
                stop: StopRule::Relative(eps),
                randomize: true,
                stage,
                budget: params.k_max - used,
                k_offset: used,
            };
            let out = match run_inner(op, x_bar.clone(), &cfg, &mut state, &mut trace.iterations) {
                Ok(o) => o,
                Err(e) => {
                    return finish(part, Status::NumericalFailure, trace, flops, started, Some(e.to_string()))
                }
            };
            used += out.iterations;
            flops += out.flops;
            let ratio = sigma_ratio(&out.x);
            match factor::srr(op, &out.x) {
                Ok(r) => break (out, r, ratio),
                Err(Error::RankDeficient { .. }) if !retried => {
                    retried = true;
                    x_bar = perturb(&x_bar, 1e-3, &mut state.rng);
                }
                Err(e) => {
                    part.x = out.x;
                    return finish(part, Status::NumericalFailure, trace, flops, started, Some(e.to_string()));
                }
            }
        };

        let residue = metrics::residue(op, &ritz.basis, &ritz.values).unwrap_or(f64::NAN);
        trace.stages.push(StageRecord {
            i: stage,
            beta,
            eps,
            threshold: out.threshold,
            iterations: out.iterations,
            reached_tol: out.reached,
            final_gnorm: out.eval.gradient.norm(),
            min_gnorm: out.min_gnorm,
            ritz: ritz.values.clone(),
            sigma_ratio: ratio,
            residue,
            retried,
            elapsed: stage_start.elapsed().as_secs_f64(),
        });
        part = Partial {
            eigenvalues: ritz.values.clone(),
            basis: ritz.basis.clone(),
            x: out.x,
            beta,
            objective: out.eval.value,
            residue,
        };
        if residue <= params.tol {
            return finish(part, Status::Converged, trace, flops, started, None);
        }
        if used >= params.k_max {
            break;
        }

        let theta_p = *ritz.values.last().expect("p >= 1");
        let mut next = params.eta * theta_p;
        if next < beta / 10.0 {
            next = beta_best(theta_p);
        }
        beta = next;
        x_bar = match restart_point(&ritz.basis, &ritz.values, beta) {
            Ok(x) => x,
            Err(e) => return finish(part, Status::NumericalFailure, trace, flops, started, Some(e.to_string())),
        };
        eps = (eps * params.delta_eps).max(EPS_FLOOR);
    }
    finish(part, Status::MaxIterations, trace, flops, started, None)
}
