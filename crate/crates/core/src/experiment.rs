//! End-to-end scenario runs and benchmark tables.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{load_adam_state, save_adam_state, Checkpoint};
use crate::config::ScenarioConfig;
use crate::domain::{add_field_noise, solve_fdm, DomainSpec, GridSolution, GridSpec};
use crate::error::{Error, Result};
use crate::field_io::FieldFile;
use crate::loss::{Objective, TrainingData};
use crate::network::{forward_batch, init_params, NetworkParams};
use crate::optim::{two_stage_resume, AdamState, Endpoint, Evaluation, OptimTrace, StageStatus};
use crate::real::{Precision, Real};

pub const RESULTS_HEADER: &str = "name,arch,optimizer,iterations,lr,final_loss,rel_l2,train_s,fdm_s,infer_s,status";

/// `‖pred − reference‖₂ / ‖reference‖₂`.
pub fn relative_l2_error(pred: &[f64], reference: &[f64]) -> Result<f64> {
    if pred.len() != reference.len() {
        return Err(Error::ShapeMismatch { expected: format!("{} values", reference.len()), found: format!("{}", pred.len()) });
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (p, r) in pred.iter().zip(reference) {
        num += (p - r) * (p - r);
        den += r * r;
    }
    if den == 0.0 {
        return Err(Error::DegenerateReference);
    }
    Ok((num / den).sqrt())
}

pub fn mean_squared_error(pred: &[f64], reference: &[f64]) -> f64 {
    assert_eq!(pred.len(), reference.len());
    pred.iter().zip(reference).map(|(p, r)| (p - r) * (p - r)).sum::<f64>() / reference.len() as f64
}

/// Network prediction on the spatial grid at time `t`.
#[derive(Debug, Clone)]
pub struct Inference {
    /// Row-major over `(ix, iy)`, as in [`GridSolution`].
    pub values: Vec<f64>,
    pub seconds: f64,
    /// `t` lies outside `[0, t_final]`.
    pub extrapolated: bool,
}

/// Evaluates the network at every grid node; the timing covers the
/// evaluation only.
pub fn infer_field<F: Real>(params: &NetworkParams<F>, spec: &DomainSpec, grid: &GridSpec, t: f64) -> Inference {
    let (dx, dy) = (grid.dx(spec), grid.dy(spec));
    let points: Vec<[F; 3]> = (0..grid.nx)
        .flat_map(|ix| (0..grid.ny).map(move |iy| [F::of(t), F::of(ix as f64 * dx), F::of(iy as f64 * dy)]))
        .collect();
    let clock = Instant::now();
    let out = forward_batch(params, &points);
    let seconds = clock.elapsed().as_secs_f64();
    Inference {
        values: out.iter().map(|v| v.as_f64()).collect(),
        seconds,
        extrapolated: !(0.0..=spec.t_final).contains(&t),
    }
}

/// [`infer_field`] preceded by an untimed warm-up call.
pub fn infer_field_warm<F: Real>(params: &NetworkParams<F>, spec: &DomainSpec, grid: &GridSpec, t: f64) -> Inference {
    infer_field(params, spec, grid, t);
    infer_field(params, spec, grid, t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RunStatus {
    Ok,
    Diverged { iteration: usize },
    Failed { message: String },
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunStatus::Ok => f.write_str("ok"),
            RunStatus::Diverged { iteration } => write!(f, "diverged at iteration {iteration}"),
            RunStatus::Failed { message } => write!(f, "error: {message}"),
        }
    }
}

/// Files written by one scenario.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub traces: Vec<PathBuf>,
    pub snapshots: Vec<PathBuf>,
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioResult {
    pub name: String,
    pub arch: String,
    pub optimizer: String,
    /// Adam iterations counted from a fresh initialisation.
    pub iterations: usize,
    pub lr: f64,
    pub precision: Precision,
    /// Loss of the selected parameters on the evaluation sample.
    pub final_loss: f64,
    pub adam_endpoint_loss: f64,
    pub selected: Endpoint,
    pub rel_l2_error: f64,
    /// Against the clean initial condition on the full grid.
    pub ic_mse: f64,
    pub train_time: f64,
    pub fdm_time: f64,
    pub inference_time: f64,
    pub status: RunStatus,
    pub artifacts: Artifacts,
}

impl ScenarioResult {
    fn failed(cfg: &ScenarioConfig, err: &Error) -> Self {
        Self {
            name: cfg.name(),
            arch: cfg.network.arch_label(),
            optimizer: cfg.optimizer.kind.to_string(),
            iterations: cfg.optimizer.iterations,
            lr: cfg.optimizer.lr,
            precision: cfg.network.precision,
            final_loss: f64::NAN,
            adam_endpoint_loss: f64::NAN,
            selected: Endpoint::Adam,
            rel_l2_error: f64::NAN,
            ic_mse: f64::NAN,
            train_time: f64::NAN,
            fdm_time: f64::NAN,
            inference_time: f64::NAN,
            status: RunStatus::Failed { message: err.to_string() },
            artifacts: Artifacts::default(),
        }
    }

    /// One `results.csv` line; timing columns stay empty when `deterministic`.
    pub fn csv_row(&self, deterministic: bool) -> String {
        let time = |s: f64| if deterministic || s.is_nan() { String::new() } else { s.to_string() };
        let num = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
        [
            csv_field(&self.name),
            csv_field(&self.arch),
            csv_field(&self.optimizer),
            self.iterations.to_string(),
            self.lr.to_string(),
            num(self.final_loss),
            num(self.rel_l2_error),
            time(self.train_time),
            time(self.fdm_time),
            time(self.inference_time),
            csv_field(&self.status.to_string()),
        ]
        .join(",")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn results_csv(results: &[ScenarioResult], deterministic: bool) -> String {
    let mut out = String::from(RESULTS_HEADER);
    out.push('\n');
    for r in results {
        out.push_str(&r.csv_row(deterministic));
        out.push('\n');
    }
    out
}

/// Clean and noisy FDM fields for a scenario.
#[derive(Debug, Clone)]
pub struct GeneratedData {
    pub clean: GridSolution,
    pub noisy: GridSolution,
    /// Solver wall time, noise excluded.
    pub fdm_seconds: f64,
}

pub fn generate_data(cfg: &ScenarioConfig) -> Result<GeneratedData> {
    let clock = Instant::now();
    let clean = solve_fdm(&cfg.domain, &cfg.grid, cfg.force)?;
    let fdm_seconds = clock.elapsed().as_secs_f64();
    let noisy = add_field_noise(&clean, &cfg.noise_spec());
    Ok(GeneratedData { clean, noisy, fdm_seconds })
}

/// Where and how a scenario runs.
#[derive(Default)]
pub struct RunOptions<'a> {
    /// Artifacts are written here when set.
    pub out_dir: Option<PathBuf>,
    /// Checkpoint base to continue from, with its Adam state.
    pub resume: Option<PathBuf>,
    /// Called after every Adam iteration with `(iteration, loss)`.
    pub progress: Option<&'a mut dyn FnMut(usize, f64)>,
}

/// Seed derivation recorded in checkpoints.
pub fn seed_lineage(cfg: &ScenarioConfig) -> Vec<String> {
    vec![format!("master={}", cfg.seed), "init".into(), format!("init_seed={}", cfg.init_seed())]
}

pub fn run_scenario(cfg: &ScenarioConfig, opts: RunOptions<'_>) -> Result<ScenarioResult> {
    cfg.validate()?;
    let data = generate_data(cfg)?;
    run_with_data(cfg, &data, opts)
}

/// [`run_scenario`] on already generated data.
pub fn run_with_data(cfg: &ScenarioConfig, data: &GeneratedData, opts: RunOptions<'_>) -> Result<ScenarioResult> {
    match cfg.network.precision {
        Precision::Single => run::<f32>(cfg, data, opts),
        Precision::Double => run::<f64>(cfg, data, opts),
    }
}

fn write_trace(dir: &Path, stem: &str, trace: &OptimTrace, artifacts: &mut Artifacts) -> Result<()> {
    let path = dir.join(format!("trace_{stem}_{}.csv", trace.stage));
    trace.write_csv(&path)?;
    artifacts.traces.push(path);
    Ok(())
}

fn run<F: Real>(cfg: &ScenarioConfig, data: &GeneratedData, mut opts: RunOptions<'_>) -> Result<ScenarioResult> {
    let (spec, grid) = (cfg.domain, cfg.grid);
    let noise = cfg.noise_spec();
    let plan = cfg.sampling_plan();
    let training = TrainingData::new(&data.clean, data.noisy.clone());
    plan.validate(&training)?;
    let objective = Objective { spec: &spec, plan: &plan, noise: &noise, weights: &cfg.loss, data: &training };

    let mut net_cfg = cfg.network;
    net_cfg.precision = F::PRECISION;
    let (start, state) = match &opts.resume {
        Some(base) => {
            let ck = Checkpoint::<F>::load(base)?;
            if ck.params.config != net_cfg {
                return Err(Error::ShapeMismatch {
                    expected: net_cfg.arch_label(),
                    found: ck.params.config.arch_label(),
                });
            }
            let state = load_adam_state::<F>(base)?;
            (ck.params, state)
        }
        None => {
            let p = init_params::<F>(net_cfg, cfg.init_seed());
            let n = p.len();
            (p, AdamState::new(n))
        }
    };
    let eval_key = (state.step + cfg.optimizer.iterations) as u64;

    let mut scratch = start.clone();
    let mut progress = opts.progress.take();
    let adam_fn = |theta: &[F], iter: usize| {
        scratch.theta.copy_from_slice(theta);
        let (b, g) = objective.loss_and_grad(&scratch, iter as u64);
        if let Some(cb) = progress.as_mut() {
            cb(iter, b.total);
        }
        Evaluation::from_breakdown(b, g)
    };
    let mut eval_scratch = start.clone();
    let eval_fn = |theta: &[F]| {
        eval_scratch.theta.copy_from_slice(theta);
        let (b, g) = objective.loss_and_grad(&eval_scratch, eval_key);
        Evaluation::from_breakdown(b, g)
    };

    let adam_cfg = cfg.optimizer.adam();
    let lbfgs_cfg = cfg.lbfgs_config();
    let clock = Instant::now();
    let outcome = two_stage_resume(start.theta.clone(), state, adam_fn, eval_fn, &adam_cfg, lbfgs_cfg.as_ref());
    let train_time = clock.elapsed().as_secs_f64();

    let params = NetworkParams::from_theta(net_cfg, outcome.params.clone())?;
    let final_inf = infer_field_warm(&params, &spec, &grid, spec.t_final);
    let ic_inf = infer_field(&params, &spec, &grid, 0.0);
    let reference = data.clean.level(grid.nt);
    let rel_l2_error = relative_l2_error(&final_inf.values, reference)?;
    let ic_mse = mean_squared_error(&ic_inf.values, data.clean.level(0));

    let status = match outcome.adam.status {
        StageStatus::Diverged { iteration } => RunStatus::Diverged { iteration },
        _ => RunStatus::Ok,
    };

    let mut artifacts = Artifacts::default();
    if let Some(dir) = &opts.out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let stem = cfg.file_stem();
        write_trace(dir, &stem, &outcome.adam, &mut artifacts)?;
        if let Some(t) = &outcome.lbfgs {
            write_trace(dir, &stem, t, &mut artifacts)?;
        }
        let panels = [
            ("clean_ic", 0.0, data.clean.level(0).to_vec()),
            ("pinn_ic", 0.0, ic_inf.values.clone()),
            ("fdm_final", spec.t_final, reference.to_vec()),
            ("pinn_final", spec.t_final, final_inf.values.clone()),
        ];
        for (tag, t, values) in panels {
            let base = dir.join(format!("field_{stem}_{tag}"));
            FieldFile::snapshot(spec, grid, t, tag, values).save(&base)?;
            artifacts.snapshots.push(base);
        }
        let base = dir.join(format!("model_{stem}"));
        let mut ck = Checkpoint::new(params.clone(), seed_lineage(cfg));
        ck.header.domain = Some(spec);
        ck.header.grid = Some(grid);
        ck.header.iterations = outcome.adam_state.step;
        ck.save(&base)?;
        save_adam_state(&outcome.adam_state, &base)?;
        artifacts.checkpoint = Some(base);
    }

    Ok(ScenarioResult {
        name: cfg.name(),
        arch: cfg.network.arch_label(),
        optimizer: cfg.optimizer.kind.to_string(),
        iterations: outcome.adam_state.step,
        lr: cfg.optimizer.lr,
        precision: F::PRECISION,
        final_loss: outcome.selected_loss,
        adam_endpoint_loss: outcome.adam_endpoint_loss,
        selected: outcome.selected,
        rel_l2_error,
        ic_mse,
        train_time,
        fdm_time: data.fdm_seconds,
        inference_time: final_inf.seconds,
        status,
        artifacts,
    })
}

/// Host description recorded next to benchmark tables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub hardware: String,
    pub os: String,
    pub arch: String,
    pub threads: usize,
    pub precisions: Vec<Precision>,
    pub tool_version: String,
}

impl Environment {
    pub fn detect(configs: &[ScenarioConfig]) -> Self {
        let hardware = fs::read_to_string("/proc/cpuinfo")
            .ok()
            .and_then(|s| s.lines().find(|l| l.starts_with("model name")).and_then(|l| l.split(':').nth(1)).map(|m| m.trim().to_string()))
            .unwrap_or_else(|| "unknown cpu".into());
        let mut precisions: Vec<Precision> = configs.iter().map(|c| c.network.precision).collect();
        precisions.sort_by_key(|p| p.extension());
        precisions.dedup();
        Self {
            hardware,
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            threads: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            precisions,
            tool_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

/// Runs every scenario in order; failures become rows with an error status.
///
/// Writes `results.csv` and `environment.json` into `out_dir`.
pub fn benchmark_suite(
    configs: &[ScenarioConfig],
    out_dir: &Path,
    deterministic: bool,
    mut on_result: impl FnMut(&ScenarioResult),
) -> Result<Vec<ScenarioResult>> {
    if configs.is_empty() {
        return Err(Error::InvalidConfig("benchmark suite has no scenarios".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let env = Environment::detect(configs);
    let env_path = out_dir.join("environment.json");
    fs::write(&env_path, serde_json::to_string_pretty(&env)?).map_err(|e| Error::io(&env_path, e))?;

    let mut results = Vec::with_capacity(configs.len());
    let csv_path = out_dir.join("results.csv");
    for cfg in configs {
        let opts = RunOptions { out_dir: Some(out_dir.to_path_buf()), ..Default::default() };
        let r = run_scenario(cfg, opts).unwrap_or_else(|e| ScenarioResult::failed(cfg, &e));
        on_result(&r);
        results.push(r);
        fs::write(&csv_path, results_csv(&results, deterministic)).map_err(|e| Error::io(&csv_path, e))?;
    }
    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;

    #[test]
    fn relative_error_examples() {
        let r = [1.0, -2.0, 3.0];
        assert_eq!(relative_l2_error(&r, &r).unwrap(), 0.0);
        let twice: Vec<f64> = r.iter().map(|v| 2.0 * v).collect();
        assert!((relative_l2_error(&twice, &r).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(relative_l2_error(&[0.0; 3], &r).unwrap(), 1.0);
        assert!(matches!(relative_l2_error(&r, &[0.0; 3]), Err(Error::DegenerateReference)));
        assert!(relative_l2_error(&r, &[1.0]).is_err());
    }

    #[test]
    fn zero_network_infers_zero_field() {
        let spec = DomainSpec::default();
        let grid = GridSpec::default();
        let p = NetworkParams::<f64>::zeros(NetworkConfig::new(2, 4));
        let inf = infer_field(&p, &spec, &grid, 0.1);
        assert_eq!(inf.values.len(), 51 * 51);
        assert!(inf.values.iter().all(|v| *v == 0.0));
        assert!(!inf.extrapolated);
        assert!(infer_field(&p, &spec, &grid, 0.3).extrapolated);
    }

    fn tiny(iterations: usize) -> ScenarioConfig {
        let mut cfg = ScenarioConfig::from_toml_str("seed = 4").unwrap();
        cfg.grid = GridSpec { nx: 26, ny: 26, nt: 25 };
        cfg.network = NetworkConfig::new(2, 8);
        cfg.sampling.n_collocation = 32;
        cfg.sampling.n_bc_per_edge = 8;
        cfg.sampling.n_ic_symbolic = 32;
        cfg.sampling.ic_batch = 64;
        cfg.sampling.data_batch = 64;
        cfg.optimizer.iterations = iterations;
        cfg
    }

    #[test]
    fn zero_iterations_scores_the_initial_network() {
        let cfg = tiny(0);
        let a = run_scenario(&cfg, RunOptions::default()).unwrap();
        let b = run_scenario(&cfg, RunOptions::default()).unwrap();
        let p = init_params::<f32>(cfg.network, cfg.init_seed());
        let data = generate_data(&cfg).unwrap();
        let inf = infer_field(&p, &cfg.domain, &cfg.grid, cfg.domain.t_final);
        assert_eq!(a.rel_l2_error, relative_l2_error(&inf.values, data.clean.level(cfg.grid.nt)).unwrap());
        assert_eq!(a.rel_l2_error.to_bits(), b.rel_l2_error.to_bits());
        assert_eq!(a.final_loss.to_bits(), b.final_loss.to_bits());
        assert_eq!(a.iterations, 0);
    }

    #[test]
    fn resume_matches_an_uninterrupted_run() {
        let dir = tempfile::tempdir().unwrap();
        let full = run_scenario(&tiny(20), RunOptions::default()).unwrap();
        let first = run_scenario(&tiny(12), RunOptions { out_dir: Some(dir.path().into()), ..Default::default() }).unwrap();
        let base = first.artifacts.checkpoint.clone().unwrap();
        let second = run_scenario(&tiny(8), RunOptions { resume: Some(base), ..Default::default() }).unwrap();
        assert_eq!(second.iterations, 20);
        assert_eq!(second.rel_l2_error.to_bits(), full.rel_l2_error.to_bits());
        assert_eq!(second.final_loss.to_bits(), full.final_loss.to_bits());
    }

    #[test]
    fn artifacts_and_progress() {
        let dir = tempfile::tempdir().unwrap();
        let mut seen = Vec::new();
        let mut cb = |i: usize, _l: f64| seen.push(i);
        let mut cfg = tiny(5);
        cfg.optimizer.kind = crate::config::OptimizerKind::AdamLbfgs;
        cfg.lbfgs.max_iterations = 3;
        let r = run_scenario(&cfg, RunOptions { out_dir: Some(dir.path().into()), progress: Some(&mut cb), ..Default::default() }).unwrap();
        assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        assert_eq!(r.artifacts.traces.len(), 2);
        assert_eq!(r.artifacts.snapshots.len(), 4);
        assert!(r.final_loss <= r.adam_endpoint_loss);
        let f = FieldFile::load(&r.artifacts.snapshots[3]).unwrap();
        assert_eq!(f.meta.shape, [1, 26, 26]);
        assert!(r.rel_l2_error >= 0.0 && r.train_time > 0.0 && r.inference_time > 0.0);
    }

    #[test]
    fn suite_records_failures_and_keeps_going() {
        let dir = tempfile::tempdir().unwrap();
        let good = tiny(2);
        let mut bad = tiny(2);
        bad.name = Some("unstable".into());
        bad.grid.nt = 1;
        let rows = benchmark_suite(&[bad, good], dir.path(), true, |_| {}).unwrap();
        assert!(matches!(rows[0].status, RunStatus::Failed { .. }));
        assert_eq!(rows[1].status, RunStatus::Ok);
        let csv = fs::read_to_string(dir.path().join("results.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], RESULTS_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[2].ends_with(",,,,ok"));
        assert!(dir.path().join("environment.json").exists());
        assert!(benchmark_suite(&[], dir.path(), true, |_| {}).is_err());
    }
}
