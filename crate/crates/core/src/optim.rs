//! Adam / AdamW and L-BFGS over flat parameter vectors.
//!
//! Optimizers see the model only through a loss-and-gradient callback. Adam
//! passes the iteration index so the callback can draw a fresh mini-batch;
//! L-BFGS needs a deterministic function and gets none.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::LossBreakdown;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decoupled (AdamW) decay; zero gives plain Adam.
    pub weight_decay: f64,
    pub iterations: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.002, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, weight_decay: 0.0, iterations: 10_000 }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("adam hyperparameters out of range: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LbfgsConfig {
    pub memory: usize,
    pub max_iterations: usize,
    pub wolfe_c1: f64,
    pub wolfe_c2: f64,
    pub grad_tol: f64,
    /// Function evaluations allowed per line search.
    pub max_line_evals: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        Self { memory: 10, max_iterations: 500, wolfe_c1: 1e-4, wolfe_c2: 0.9, grad_tol: 1e-8, max_line_evals: 25 }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.wolfe_c1
            && self.wolfe_c1 < self.wolfe_c2
            && self.wolfe_c2 < 1.0
            && self.memory >= 1
            && self.max_line_evals >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("l-bfgs settings out of range: {self:?}")))
        }
    }
}

/// One loss-and-gradient evaluation.
#[derive(Debug, Clone)]
pub struct Evaluation<F> {
    pub loss: f64,
    pub breakdown: Option<LossBreakdown>,
    pub grad: Vec<F>,
}

impl<F> Evaluation<F> {
    pub fn scalar(loss: f64, grad: Vec<F>) -> Self {
        Self { loss, breakdown: None, grad }
    }

    pub fn from_breakdown(breakdown: LossBreakdown, grad: Vec<F>) -> Self {
        Self { loss: breakdown.total, breakdown: Some(breakdown), grad }
    }
}

/// Strong-Wolfe data for an accepted L-BFGS step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WolfeCheck {
    pub phi0: f64,
    pub dphi0: f64,
    pub alpha: f64,
    pub phi: f64,
    pub dphi: f64,
}

impl WolfeCheck {
    pub fn sufficient_decrease(&self, c1: f64) -> bool {
        self.phi <= self.phi0 + c1 * self.alpha * self.dphi0
    }

    pub fn curvature(&self, c2: f64) -> bool {
        self.dphi.abs() <= c2 * self.dphi0.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iter: usize,
    pub loss: f64,
    pub breakdown: Option<LossBreakdown>,
    pub grad_norm: f64,
    /// Adam: largest coordinate update. L-BFGS: accepted line-search step.
    pub step_size: f64,
    pub wall_ms: f64,
    pub wolfe: Option<WolfeCheck>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Completed,
    Converged,
    Diverged { iteration: usize },
    LineSearchFailed { iteration: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimTrace {
    pub stage: String,
    pub records: Vec<TraceRecord>,
    pub status: StageStatus,
    /// Loss at the starting point (L-BFGS only).
    pub initial_loss: Option<f64>,
}

impl OptimTrace {
    fn new(stage: &str) -> Self {
        Self { stage: stage.to_string(), records: Vec::new(), status: StageStatus::Completed, initial_loss: None }
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.records.last().map(|r| r.loss)
    }

    /// Running minimum of the recorded loss.
    pub fn best_so_far(&self) -> Vec<f64> {
        let mut best = self.initial_loss.unwrap_or(f64::INFINITY);
        self.records
            .iter()
            .map(|r| {
                if r.loss < best {
                    best = r.loss;
                }
                best
            })
            .collect()
    }

    /// `iter,loss,physics,ic,data,grad_norm,step_size,wall_ms`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,loss,physics,ic,data,grad_norm,step_size,wall_ms\n");
        for r in &self.records {
            let (p, i, d) = match r.breakdown {
                Some(b) => (b.physics.to_string(), b.ic.to_string(), b.data.to_string()),
                None => Default::default(),
            };
            let _ = writeln!(out, "{},{},{p},{i},{d},{},{},{}", r.iter, r.loss, r.grad_norm, r.step_size, r.wall_ms);
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn norm<F: Real>(v: &[F]) -> f64 {
    v.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>().sqrt()
}

/// Moment estimates; enough to resume a run.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub m: Vec<F>,
    pub v: Vec<F>,
    /// Updates applied so far.
    pub step: usize,
}

impl<F: Real> AdamState<F> {
    pub fn new(len: usize) -> Self {
        Self { m: vec![F::zero(); len], v: vec![F::zero(); len], step: 0 }
    }
}

pub struct AdamOutcome<F> {
    /// Last iterate.
    pub params: Vec<F>,
    pub state: AdamState<F>,
    pub trace: OptimTrace,
    /// Parameters at the lowest finite trace loss, with that loss.
    pub best: Option<(Vec<F>, f64)>,
}

/// Adam with bias correction; decoupled weight decay `θ ← θ - lr·λ·θ` is
/// applied before each update when `weight_decay > 0`.
pub fn adam_run<F, L>(params: Vec<F>, loss_grad: L, cfg: &AdamConfig) -> AdamOutcome<F>
where
    F: Real,
    L: FnMut(&[F], usize) -> Evaluation<F>,
{
    let state = AdamState::new(params.len());
    adam_resume(params, state, loss_grad, cfg)
}

/// Runs `cfg.iterations` further updates from `state`; iteration numbers
/// continue from `state.step`.
pub fn adam_resume<F, L>(mut params: Vec<F>, mut state: AdamState<F>, mut loss_grad: L, cfg: &AdamConfig) -> AdamOutcome<F>
where
    F: Real,
    L: FnMut(&[F], usize) -> Evaluation<F>,
{
    let mut trace = OptimTrace::new("adam");
    let (b1, b2) = (F::of(cfg.beta1), F::of(cfg.beta2));
    let (one_b1, one_b2) = (F::of(1.0 - cfg.beta1), F::of(1.0 - cfg.beta2));
    let (lr, eps) = (F::of(cfg.lr), F::of(cfg.epsilon));
    let decay = F::of(cfg.lr * cfg.weight_decay);
    let clock = Instant::now();
    let mut best: Option<(Vec<F>, f64)> = None;

    for _ in 0..cfg.iterations {
        let iter = state.step;
        let eval = loss_grad(&params, iter);
        let finite = eval.loss.is_finite() && eval.grad.iter().all(|g| g.is_finite());
        let mut record = TraceRecord {
            iter,
            loss: eval.loss,
            breakdown: eval.breakdown,
            grad_norm: norm(&eval.grad),
            step_size: 0.0,
            wall_ms: 0.0,
            wolfe: None,
        };
        if !finite {
            record.wall_ms = clock.elapsed().as_secs_f64() * 1e3;
            trace.records.push(record);
            trace.status = StageStatus::Diverged { iteration: iter };
            break;
        }
        if best.as_ref().is_none_or(|(_, l)| eval.loss < *l) {
            match &mut best {
                Some((p, l)) => {
                    p.copy_from_slice(&params);
                    *l = eval.loss;
                }
                None => best = Some((params.clone(), eval.loss)),
            }
        }

        let t = (state.step + 1) as i32;
        let inv_bc1 = F::of(1.0 / (1.0 - cfg.beta1.powi(t)));
        let inv_bc2 = F::of(1.0 / (1.0 - cfg.beta2.powi(t)));
        let mut max_step = F::zero();
        for (((p, g), m), v) in params.iter_mut().zip(&eval.grad).zip(&mut state.m).zip(&mut state.v) {
            if cfg.weight_decay > 0.0 {
                *p = *p - decay * *p;
            }
            *m = b1 * *m + one_b1 * *g;
            *v = b2 * *v + one_b2 * *g * *g;
            let step = lr * (*m * inv_bc1) / ((*v * inv_bc2).sqrt() + eps);
            *p = *p - step;
            max_step = max_step.max(step.abs());
        }
        state.step += 1;
        record.step_size = max_step.as_f64();
        record.wall_ms = clock.elapsed().as_secs_f64() * 1e3;
        trace.records.push(record);
    }
    AdamOutcome { params, state, trace, best }
}

pub struct LbfgsOutcome<F> {
    pub params: Vec<F>,
    /// Loss at `params`.
    pub loss: f64,
    pub trace: OptimTrace,
}

struct Probe<F> {
    alpha: f64,
    phi: f64,
    dphi: f64,
    eval: Option<Evaluation<F>>,
}

/// Minimizer of the cubic interpolating two probes, or `None` if the
/// interpolant has no usable minimum.
fn cubic_minimizer<F>(a: &Probe<F>, b: &Probe<F>) -> Option<f64> {
    let d1 = a.dphi + b.dphi - 3.0 * (a.phi - b.phi) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.dphi * b.dphi;
    if disc.is_nan() || disc < 0.0 {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let denom = b.dphi - a.dphi + 2.0 * d2;
    let alpha = b.alpha - (b.alpha - a.alpha) * (b.dphi + d2 - d1) / denom;
    alpha.is_finite().then_some(alpha)
}

struct LineSearch<'a, F, L> {
    f: &'a mut L,
    x: &'a [f64],
    dir: &'a [f64],
    phi0: f64,
    dphi0: f64,
    c1: f64,
    c2: f64,
    evals_left: usize,
    scratch: Vec<F>,
}

impl<'a, F: Real, L: FnMut(&[F]) -> Evaluation<F>> LineSearch<'a, F, L> {
    fn probe(&mut self, alpha: f64) -> Option<Probe<F>> {
        if self.evals_left == 0 {
            return None;
        }
        self.evals_left -= 1;
        for ((s, x), d) in self.scratch.iter_mut().zip(self.x).zip(self.dir) {
            *s = F::of(x + alpha * d);
        }
        let eval = (self.f)(&self.scratch);
        let bad = !eval.loss.is_finite() || eval.grad.iter().any(|g| !g.is_finite());
        if bad {
            return Some(Probe { alpha, phi: f64::INFINITY, dphi: f64::INFINITY, eval: None });
        }
        let dphi = eval.grad.iter().zip(self.dir).map(|(g, d)| g.as_f64() * d).sum();
        Some(Probe { alpha, phi: eval.loss, dphi, eval: Some(eval) })
    }

    fn armijo(&self, p: &Probe<F>) -> bool {
        p.phi <= self.phi0 + self.c1 * p.alpha * self.dphi0
    }

    fn curvature(&self, p: &Probe<F>) -> bool {
        p.dphi.abs() <= -self.c2 * self.dphi0
    }

    /// Strong-Wolfe search; returns the accepted probe.
    fn run(&mut self, alpha_init: f64) -> Option<Probe<F>> {
        let mut prev = Probe { alpha: 0.0, phi: self.phi0, dphi: self.dphi0, eval: None };
        let mut alpha = alpha_init;
        let mut first = true;
        loop {
            let cur = self.probe(alpha)?;
            if !self.armijo(&cur) || (!first && cur.phi >= prev.phi) {
                return self.zoom(prev, cur);
            }
            if self.curvature(&cur) {
                return Some(cur);
            }
            if cur.dphi >= 0.0 {
                return self.zoom(cur, prev);
            }
            first = false;
            alpha = cur.alpha * 2.0;
            prev = cur;
        }
    }

    fn zoom(&mut self, mut lo: Probe<F>, mut hi: Probe<F>) -> Option<Probe<F>> {
        loop {
            let (a, b) = (lo.alpha.min(hi.alpha), lo.alpha.max(hi.alpha));
            let width = b - a;
            if width <= f64::EPSILON * b.max(1.0) {
                return None;
            }
            let alpha = match cubic_minimizer(&lo, &hi) {
                Some(c) if hi.phi.is_finite() && c > a + 0.1 * width && c < b - 0.1 * width => c,
                _ => 0.5 * (a + b),
            };
            let cur = self.probe(alpha)?;
            if !self.armijo(&cur) || cur.phi >= lo.phi {
                hi = cur;
            } else {
                if self.curvature(&cur) {
                    return Some(cur);
                }
                if cur.dphi * (hi.alpha - lo.alpha) >= 0.0 {
                    hi = lo;
                }
                lo = cur;
            }
        }
    }
}

/// L-BFGS with the two-loop recursion and a strong-Wolfe line search.
///
/// Curvature pairs with `s·y <= 0` are skipped. Stops when the gradient norm
/// reaches `grad_tol`, after `max_iterations`, or when a line search fails;
/// the best point seen is returned in every case.
pub fn lbfgs_run<F, L>(params: Vec<F>, mut loss_grad: L, cfg: &LbfgsConfig) -> LbfgsOutcome<F>
where
    F: Real,
    L: FnMut(&[F]) -> Evaluation<F>,
{
    let mut trace = OptimTrace::new("lbfgs");
    let clock = Instant::now();
    let start = loss_grad(&params);
    trace.initial_loss = Some(start.loss);
    if !start.loss.is_finite() {
        trace.status = StageStatus::Diverged { iteration: 0 };
        return LbfgsOutcome { params, loss: start.loss, trace };
    }

    let mut x: Vec<f64> = params.iter().map(|v| v.as_f64()).collect();
    let mut g: Vec<f64> = start.grad.iter().map(|v| v.as_f64()).collect();
    let mut loss = start.loss;
    let mut best_params = params;
    let mut best_loss = loss;
    let mut pairs: std::collections::VecDeque<(Vec<f64>, Vec<f64>, f64)> = Default::default();

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let gnorm0 = dot(&g, &g).sqrt();
    if gnorm0 <= cfg.grad_tol {
        trace.status = StageStatus::Converged;
        return LbfgsOutcome { params: best_params, loss, trace };
    }

    for iter in 0..cfg.max_iterations {
        // Two-loop recursion.
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(pairs.len());
        for (s, y, rho) in pairs.iter().rev() {
            let a = rho * dot(s, &q);
            for (qi, yi) in q.iter_mut().zip(y) {
                *qi -= a * yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|v| *v *= gamma);
        }
        for ((s, y, rho), a) in pairs.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &q);
            for (qi, si) in q.iter_mut().zip(s) {
                *qi += si * (a - b);
            }
        }
        let mut dir: Vec<f64> = q.into_iter().map(|v| -v).collect();
        let mut dphi0 = dot(&dir, &g);
        if dphi0.is_nan() || dphi0 >= 0.0 {
            pairs.clear();
            dir = g.iter().map(|v| -v).collect();
            dphi0 = -dot(&g, &g);
        }
        let alpha_init = if pairs.is_empty() { (1.0 / dot(&g, &g).sqrt()).min(1.0) } else { 1.0 };

        let mut search = LineSearch {
            f: &mut loss_grad,
            x: &x,
            dir: &dir,
            phi0: loss,
            dphi0,
            c1: cfg.wolfe_c1,
            c2: cfg.wolfe_c2,
            evals_left: cfg.max_line_evals,
            scratch: vec![F::zero(); x.len()],
        };
        let Some(mut step) = search.run(alpha_init) else {
            trace.status = StageStatus::LineSearchFailed { iteration: iter };
            break;
        };
        let eval = step.eval.take().expect("accepted probes are finite");

        let new_x: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| F::of(xi + step.alpha * di).as_f64()).collect();
        let new_g: Vec<f64> = eval.grad.iter().map(|v| v.as_f64()).collect();
        let s: Vec<f64> = new_x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = new_g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 0.0 {
            if pairs.len() == cfg.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }

        let wolfe = WolfeCheck { phi0: loss, dphi0, alpha: step.alpha, phi: step.phi, dphi: step.dphi };
        x = new_x;
        g = new_g;
        loss = eval.loss;
        if loss < best_loss {
            best_loss = loss;
            best_params = x.iter().map(|v| F::of(*v)).collect();
        }
        let grad_norm = dot(&g, &g).sqrt();
        trace.records.push(TraceRecord {
            iter,
            loss,
            breakdown: eval.breakdown,
            grad_norm,
            step_size: step.alpha,
            wall_ms: clock.elapsed().as_secs_f64() * 1e3,
            wolfe: Some(wolfe),
        });
        if grad_norm <= cfg.grad_tol {
            trace.status = StageStatus::Converged;
            break;
        }
    }
    LbfgsOutcome { params: best_params, loss: best_loss, trace }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Endpoint {
    Adam,
    /// Best-seen Adam iterate.
    AdamBest,
    Lbfgs,
}

/// The refined endpoint wins only if it is strictly better.
pub fn select_endpoint(adam_loss: f64, lbfgs_loss: Option<f64>) -> Endpoint {
    match lbfgs_loss {
        Some(l) if l < adam_loss => Endpoint::Lbfgs,
        _ => Endpoint::Adam,
    }
}

pub struct TwoStageOutcome<F> {
    pub params: Vec<F>,
    pub selected: Endpoint,
    /// Loss of the selected parameters under the deterministic evaluation.
    pub selected_loss: f64,
    pub adam_endpoint_loss: f64,
    pub adam: OptimTrace,
    pub lbfgs: Option<OptimTrace>,
    pub adam_state: AdamState<F>,
}

/// Adam followed by L-BFGS from the better of the Adam endpoint and the
/// best-seen Adam iterate.
///
/// `adam_fn` may resample per iteration; `eval_fn` must be deterministic. It
/// drives the L-BFGS stage and scores every candidate for the selection.
pub fn two_stage_run<F, A, E>(
    params: Vec<F>,
    adam_fn: A,
    eval_fn: E,
    adam_cfg: &AdamConfig,
    lbfgs_cfg: Option<&LbfgsConfig>,
) -> TwoStageOutcome<F>
where
    F: Real,
    A: FnMut(&[F], usize) -> Evaluation<F>,
    E: FnMut(&[F]) -> Evaluation<F>,
{
    let state = AdamState::new(params.len());
    two_stage_resume(params, state, adam_fn, eval_fn, adam_cfg, lbfgs_cfg)
}

/// [`two_stage_run`] with the Adam stage continuing from `state`.
pub fn two_stage_resume<F, A, E>(
    params: Vec<F>,
    state: AdamState<F>,
    adam_fn: A,
    mut eval_fn: E,
    adam_cfg: &AdamConfig,
    lbfgs_cfg: Option<&LbfgsConfig>,
) -> TwoStageOutcome<F>
where
    F: Real,
    A: FnMut(&[F], usize) -> Evaluation<F>,
    E: FnMut(&[F]) -> Evaluation<F>,
{
    let adam = adam_resume(params, state, adam_fn, adam_cfg);
    let adam_endpoint_loss = eval_fn(&adam.params).loss;
    let mut out = TwoStageOutcome {
        params: adam.params,
        selected: Endpoint::Adam,
        selected_loss: adam_endpoint_loss,
        adam_endpoint_loss,
        adam: adam.trace,
        lbfgs: None,
        adam_state: adam.state,
    };
    if let Some((p, _)) = adam.best {
        let loss = eval_fn(&p).loss;
        if loss < out.selected_loss || !out.selected_loss.is_finite() {
            out.params = p;
            out.selected = Endpoint::AdamBest;
            out.selected_loss = loss;
        }
    }
    let diverged = matches!(out.adam.status, StageStatus::Diverged { .. });
    if let Some(cfg) = lbfgs_cfg.filter(|c| c.max_iterations > 0 && !diverged) {
        let refined = lbfgs_run(out.params.clone(), &mut eval_fn, cfg);
        if select_endpoint(out.selected_loss, Some(refined.loss)) == Endpoint::Lbfgs {
            out.params = refined.params;
            out.selected = Endpoint::Lbfgs;
            out.selected_loss = refined.loss;
        }
        out.lbfgs = Some(refined.trace);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bowl(x: &[f64]) -> Evaluation<f64> {
        let loss = 0.5 * x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v * v).sum::<f64>();
        Evaluation::scalar(loss, x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v).collect())
    }

    fn rosenbrock(p: &[f64]) -> Evaluation<f64> {
        let (x, y) = (p[0], p[1]);
        let loss = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
        let gx = -2.0 * (1.0 - x) - 400.0 * x * (y - x * x);
        let gy = 200.0 * (y - x * x);
        Evaluation::scalar(loss, vec![gx, gy])
    }

    #[test]
    fn first_adam_step_closed_form() {
        let cfg = AdamConfig { lr: 0.1, iterations: 1, ..Default::default() };
        let out = adam_run(vec![1.0f64], |x, _| Evaluation::scalar(0.5 * x[0] * x[0], vec![x[0]]), &cfg);
        assert!((out.params[0] - (1.0 - 0.1 / (1.0 + 1e-8))).abs() < 1e-15);
        assert!((out.params[0] - 0.9).abs() < 1e-8);
        assert_eq!(out.trace.records.len(), 1);
    }

    #[test]
    fn best_seen_survives_late_blowup() {
        // The loss turns steep past x = 0.5, so large steps overshoot badly.
        let f = |x: &[f64], _: usize| {
            let v = x[0];
            if v < 0.5 {
                Evaluation::scalar((v - 0.5).powi(2), vec![2.0 * (v - 0.5)])
            } else {
                Evaluation::scalar(1e3 * v, vec![1e3])
            }
        };
        let cfg = AdamConfig { lr: 0.2, iterations: 40, ..Default::default() };
        let out = adam_run(vec![0.0f64], f, &cfg);
        let (p, l) = out.best.unwrap();
        let min = out.trace.records.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);
        assert_eq!(l, min);
        assert_eq!(f(&p, 0).loss, l);
        let ts = two_stage_run(vec![0.0f64], f, |x| f(x, 0), &cfg, None);
        assert!(ts.selected_loss <= ts.adam_endpoint_loss);
        assert_eq!(ts.selected_loss, l.min(ts.adam_endpoint_loss));
    }

    #[test]
    fn adam_step_bound() {
        let cfg = AdamConfig { lr: 0.01, iterations: 300, ..Default::default() };
        let out = adam_run(vec![3.0f64, -2.0, 0.5], |x, _| bowl(x), &cfg);
        assert!(out.trace.records.iter().all(|r| r.step_size <= 2.0 * cfg.lr));
    }

    fn bowl32(x: &[f32]) -> Evaluation<f32> {
        let loss = 0.5 * x.iter().map(|v| (*v as f64).powi(2)).sum::<f64>();
        Evaluation::scalar(loss, x.to_vec())
    }

    #[test]
    fn adamw_with_zero_decay_is_adam() {
        let base = AdamConfig { lr: 0.05, iterations: 200, ..Default::default() };
        let decayed = AdamConfig { weight_decay: 0.0, ..base };
        let a = adam_run(vec![1.0f32, -0.3, 2.0], |x, _| bowl32(x), &base);
        let b = adam_run(vec![1.0f32, -0.3, 2.0], |x, _| bowl32(x), &decayed);
        assert_eq!(a.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn weight_decay_shrinks_parameters() {
        let cfg = AdamConfig { lr: 0.01, weight_decay: 0.5, iterations: 100, ..Default::default() };
        let flat = |_: &[f64], _| Evaluation::scalar(0.0, vec![0.0]);
        let out = adam_run(vec![1.0f64], flat, &cfg);
        assert!((out.params[0] - (1.0f64 - 0.005).powi(100)).abs() < 1e-12);
    }

    #[test]
    fn divergence_halts_adam() {
        let cfg = AdamConfig { iterations: 50, ..Default::default() };
        let out = adam_run(vec![1.0f64], |x, i| Evaluation::scalar(if i == 7 { f64::NAN } else { x[0] }, vec![1.0]), &cfg);
        assert_eq!(out.trace.status, StageStatus::Diverged { iteration: 7 });
        assert_eq!(out.trace.records.len(), 8);
    }

    #[test]
    fn resume_continues_numbering() {
        let cfg = AdamConfig { lr: 0.01, iterations: 5, ..Default::default() };
        let first = adam_run(vec![1.0f64, 2.0], |x, _| bowl(x), &cfg);
        let second = adam_resume(first.params.clone(), first.state.clone(), |x, _| bowl(x), &cfg);
        assert_eq!(second.trace.records[0].iter, 5);
        let straight = adam_run(vec![1.0f64, 2.0], |x, _| bowl(x), &AdamConfig { iterations: 10, ..cfg });
        assert_eq!(second.params, straight.params);
    }

    #[test]
    fn lbfgs_stationary_start() {
        let out = lbfgs_run(vec![0.0f64; 3], bowl, &LbfgsConfig::default());
        assert_eq!(out.params, vec![0.0; 3]);
        assert!(out.trace.records.is_empty());
        assert_eq!(out.trace.status, StageStatus::Converged);
    }

    #[test]
    fn lbfgs_rosenbrock_and_wolfe_certificates() {
        let cfg = LbfgsConfig { max_iterations: 200, ..Default::default() };
        let out = lbfgs_run(vec![-1.2f64, 1.0], rosenbrock, &cfg);
        assert!((out.params[0] - 1.0).abs() < 1e-5 && (out.params[1] - 1.0).abs() < 1e-5, "{:?}", out.params);
        for r in &out.trace.records {
            let w = r.wolfe.unwrap();
            assert!(w.sufficient_decrease(cfg.wolfe_c1) && w.curvature(cfg.wolfe_c2), "{w:?}");
        }
        let best = out.trace.best_so_far();
        assert!(best.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn two_stage_selection() {
        assert_eq!(select_endpoint(1.0, Some(2.0)), Endpoint::Adam);
        assert_eq!(select_endpoint(1.0, Some(0.5)), Endpoint::Lbfgs);
        assert_eq!(select_endpoint(1.0, None), Endpoint::Adam);

        let adam_cfg = AdamConfig { lr: 0.01, iterations: 50, ..Default::default() };
        let none = LbfgsConfig { max_iterations: 0, ..Default::default() };
        let a = two_stage_run(vec![1.0f64, 1.0, 1.0], |x, _| bowl(x), bowl, &adam_cfg, Some(&none));
        let b = adam_run(vec![1.0f64, 1.0, 1.0], |x, _| bowl(x), &adam_cfg);
        assert_eq!(a.params, b.params);
        assert!(a.lbfgs.is_none());

        let refine = LbfgsConfig::default();
        let c = two_stage_run(vec![1.0f64, 1.0, 1.0], |x, _| bowl(x), bowl, &adam_cfg, Some(&refine));
        assert_eq!(c.selected, Endpoint::Lbfgs);
        assert!(c.selected_loss < c.adam_endpoint_loss);
    }

    #[test]
    fn trace_csv_header() {
        let out = adam_run(vec![1.0f64], |x, _| bowl(x), &AdamConfig { iterations: 2, ..Default::default() });
        let csv = out.trace.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("iter,loss,physics,ic,data,grad_norm,step_size,wall_ms"));
        assert_eq!(lines.count(), 2);
    }
}
