//! `adpinn`: FDM reference generation, PINN training, evaluation and the
//! benchmark suite.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration,
//! 3 unstable explicit scheme, 4 training divergence.

mod format;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use adpinn::checkpoint::{read_header, Checkpoint};
use adpinn::config::{ScenarioConfig, SuiteConfig};
use adpinn::domain::{check_stability, DomainSpec, GridSpec};
use adpinn::experiment::{
    benchmark_suite, generate_data, infer_field_warm, relative_l2_error, results_csv, run_scenario, Inference, RunOptions,
    RunStatus, ScenarioResult,
};
use adpinn::field_io::FieldFile;
use adpinn::network::NetworkParams;
use adpinn::{Error, Precision};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use format::{kv, kv_num, sig5};

#[derive(Parser)]
#[command(name = "adpinn", version, about = "2D advection-diffusion: FDM reference and PINN surrogate")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Global {
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Keep timings out of results.csv so reruns are byte-identical.
    #[arg(long, global = true)]
    deterministic: bool,
    #[arg(long, global = true, value_parser = ["single", "double"])]
    precision: Option<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Run the explicit solver even if the stability check fails.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the clean and noisy FDM fields.
    Fdm {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one scenario.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Adam iterations to run; overrides the config.
        #[arg(long)]
        iterations: Option<usize>,
        /// Continue from a checkpoint written by an earlier `train`.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run every scenario of a suite file.
    Bench { suite: PathBuf },
    /// Relative L2 error of a checkpoint against a stored field.
    Eval {
        checkpoint: PathBuf,
        field: PathBuf,
        #[arg(long)]
        time: f64,
        /// Write the prediction to this field base path.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// Predict the full spatial grid at one time.
    Infer {
        checkpoint: PathBuf,
        #[arg(long)]
        time: f64,
        /// Field base path for the prediction; defaults to `<out>/field_pinn_t<time>`.
        #[arg(long)]
        dump: Option<PathBuf>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::StabilityViolation(_) => 3,
            Error::DivergenceDetected { .. } => 4,
            Error::InvalidConfig(_) | Error::ShapeMismatch { .. } | Error::DegenerateReference => 2,
            Error::Corrupt { .. } | Error::Io { .. } | Error::Json(_) => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure { code: 2, message: message.into() }
}

type CmdResult = Result<(), Failure>;

#[derive(Serialize)]
struct RunManifest<'a> {
    command: &'a str,
    config_path: Option<&'a Path>,
    config: Option<&'a ScenarioConfig>,
    suite: Option<&'a [ScenarioConfig]>,
    out_dir: &'a Path,
    tool_version: &'a str,
    timestamp: String,
}

fn write_manifest(
    out: &Path,
    command: &str,
    config_path: Option<&Path>,
    config: Option<&ScenarioConfig>,
    suite: Option<&[ScenarioConfig]>,
) -> CmdResult {
    fs::create_dir_all(out).map_err(|e| Failure { code: 1, message: format!("{}: {e}", out.display()) })?;
    let manifest = RunManifest {
        command,
        config_path,
        config,
        suite,
        out_dir: out,
        tool_version: env!("CARGO_PKG_VERSION"),
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
    };
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(|e| Failure { code: 1, message: format!("{}: {e}", path.display()) })
}

fn apply_overrides(cfg: &mut ScenarioConfig, g: &Global) -> CmdResult {
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(p) = &g.precision {
        cfg.network.precision = p.parse::<Precision>().map_err(usage)?;
    }
    cfg.deterministic |= g.deterministic;
    cfg.force |= g.force;
    Ok(())
}

fn load_config(path: Option<&Path>, g: &Global) -> Result<ScenarioConfig, Failure> {
    let mut cfg = match path {
        Some(p) => ScenarioConfig::from_file(p).map_err(|e| match e {
            Error::Io { .. } => usage(e.to_string()),
            other => Failure::from(other),
        })?,
        None => ScenarioConfig::default(),
    };
    apply_overrides(&mut cfg, g)?;
    cfg.validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, text: &str) -> CmdResult {
    fs::write(path, text).map_err(|e| Failure { code: 1, message: format!("{}: {e}", path.display()) })
}

fn timings_csv(results: &[ScenarioResult]) -> String {
    let mut s = String::from("name,train_s,fdm_s,infer_s\n");
    for r in results {
        s.push_str(&format!("{},{},{},{}\n", r.name, r.train_time, r.fdm_time, r.inference_time));
    }
    s
}

fn cmd_fdm(g: &Global, config: Option<&Path>) -> CmdResult {
    let cfg = load_config(config, g)?;
    write_manifest(&g.out, "fdm", config, Some(&cfg), None)?;
    let report = check_stability(&cfg.domain, &cfg.grid);
    println!("stability: {report}");
    if !report.passed && cfg.force {
        eprintln!("WARNING: explicit scheme is outside its stability limits; continuing because of --force");
    }
    let data = generate_data(&cfg)?;
    for (tag, sol, noise) in [("fdm_clean", &data.clean, None), ("fdm_noisy", &data.noisy, Some(cfg.noise_spec()))] {
        let file = FieldFile::from_solution(sol, noise, Some(tag));
        file.save(&g.out.join(tag))?;
        kv(&format!("{tag}_values"), file.values.len());
        kv(&format!("{tag}_sha256"), &file.meta.sha256);
    }
    kv("stable", report.passed);
    kv_num("fdm_s", data.fdm_seconds);
    Ok(())
}

fn print_result(r: &ScenarioResult) {
    kv("name", &r.name);
    kv("status", &r.status);
    kv("iterations", r.iterations);
    kv_num("final_loss", r.final_loss);
    kv_num("rel_l2", r.rel_l2_error);
    kv_num("ic_mse", r.ic_mse);
    kv_num("train_s", r.train_time);
    kv_num("fdm_s", r.fdm_time);
    kv_num("infer_s", r.inference_time);
}

fn cmd_train(g: &Global, config: Option<&Path>, iterations: Option<usize>, resume: Option<&Path>) -> CmdResult {
    let mut cfg = load_config(config, g)?;
    if let Some(n) = iterations {
        cfg.optimizer.iterations = n;
    }
    write_manifest(&g.out, "train", config, Some(&cfg), None)?;
    let mut progress = |i: usize, loss: f64| {
        if i.is_multiple_of(500) {
            eprintln!("iter {i} loss {}", sig5(loss));
        }
    };
    let opts = RunOptions { out_dir: Some(g.out.clone()), resume: resume.map(Path::to_path_buf), progress: Some(&mut progress) };
    let result = run_scenario(&cfg, opts)?;
    let rows = std::slice::from_ref(&result);
    write_file(&g.out.join("results.csv"), &results_csv(rows, cfg.deterministic))?;
    if cfg.deterministic {
        write_file(&g.out.join("timings.csv"), &timings_csv(rows))?;
    }
    print_result(&result);
    if let Some(ck) = &result.artifacts.checkpoint {
        kv("checkpoint", ck.display());
    }
    match result.status {
        RunStatus::Diverged { iteration } => Err(Error::DivergenceDetected { iteration }.into()),
        _ => Ok(()),
    }
}

fn cmd_bench(g: &Global, suite_path: &Path) -> CmdResult {
    let mut suite = SuiteConfig::from_file(suite_path).map_err(|e| usage(e.to_string()))?;
    for cfg in &mut suite.scenarios {
        apply_overrides(cfg, g)?;
    }
    let deterministic = suite.scenarios.iter().all(|c| c.deterministic);
    write_manifest(&g.out, "bench", Some(suite_path), None, Some(&suite.scenarios))?;
    let results = benchmark_suite(&suite.scenarios, &g.out, deterministic, |r| {
        eprintln!("finished {} ({})", r.name, r.status);
    })?;
    if deterministic {
        write_file(&g.out.join("timings.csv"), &timings_csv(&results))?;
    }

    println!("{:<32} {:>12} {:>10} {:>10} {:>10} {:>10}  status", "scenario", "final_loss", "rel_l2", "train_s", "fdm_s", "infer_s");
    for r in &results {
        println!(
            "{:<32} {:>12} {:>10} {:>10} {:>10} {:>10}  {}",
            r.name,
            sig5(r.final_loss),
            sig5(r.rel_l2_error),
            sig5(r.train_time),
            sig5(r.fdm_time),
            sig5(r.inference_time),
            r.status
        );
    }
    for (i, r) in results.iter().enumerate() {
        println!(
            "row={i} name={} final_loss={} rel_l2={} train_s={} fdm_s={} infer_s={} status={}",
            r.name.replace(' ', "_"),
            sig5(r.final_loss),
            sig5(r.rel_l2_error),
            sig5(r.train_time),
            sig5(r.fdm_time),
            sig5(r.inference_time),
            r.status.to_string().replace(' ', "_")
        );
    }
    kv("results", g.out.join("results.csv").display());
    Ok(())
}

/// Loaded checkpoint in either precision.
enum Model {
    Single(NetworkParams<f32>),
    Double(NetworkParams<f64>),
}

impl Model {
    fn infer(&self, spec: &DomainSpec, grid: &GridSpec, t: f64) -> Inference {
        match self {
            Model::Single(p) => infer_field_warm(p, spec, grid, t),
            Model::Double(p) => infer_field_warm(p, spec, grid, t),
        }
    }
}

fn load_model(base: &Path) -> Result<(Model, Option<DomainSpec>, Option<GridSpec>), Failure> {
    let header = read_header(base)?;
    let model = match header.precision {
        Precision::Single => Model::Single(Checkpoint::<f32>::load(base)?.params),
        Precision::Double => Model::Double(Checkpoint::<f64>::load(base)?.params),
    };
    Ok((model, header.domain, header.grid))
}

fn dump(path: &Path, spec: DomainSpec, grid: GridSpec, t: f64, inf: &Inference) -> CmdResult {
    FieldFile::snapshot(spec, grid, t, "pinn", inf.values.clone()).save(path)?;
    kv("dump", path.display());
    Ok(())
}

fn cmd_eval(checkpoint: &Path, field: &Path, time: f64, dump_to: Option<&Path>) -> CmdResult {
    let (model, _, ck_grid) = load_model(checkpoint)?;
    let reference = FieldFile::load(field)?;
    let (spec, grid) = (reference.meta.domain, reference.meta.grid);
    if let Some(cg) = ck_grid {
        if (cg.nx, cg.ny) != (grid.nx, grid.ny) {
            return Err(Error::ShapeMismatch {
                expected: format!("{}x{} grid", cg.nx, cg.ny),
                found: format!("{}x{} in {}", grid.nx, grid.ny, field.display()),
            }
            .into());
        }
    }
    let level = reference
        .level_at_time(time, 1e-9)
        .ok_or_else(|| usage(format!("{} has no level at t={time}", field.display())))?;
    let inf = model.infer(&spec, &grid, time);
    if inf.extrapolated {
        eprintln!("warning: t={time} lies outside [0, {}]", spec.t_final);
    }
    let err = relative_l2_error(&inf.values, reference.level(level))?;
    kv_num("rel_l2", err);
    kv_num("infer_s", inf.seconds);
    if let Some(p) = dump_to {
        dump(p, spec, grid, time, &inf)?;
    }
    Ok(())
}

fn cmd_infer(g: &Global, checkpoint: &Path, time: f64, dump_to: Option<&Path>) -> CmdResult {
    let (model, spec, grid) = load_model(checkpoint)?;
    let (spec, grid) = (spec.unwrap_or_default(), grid.unwrap_or_default());
    let clock = Instant::now();
    let inf = model.infer(&spec, &grid, time);
    let total = clock.elapsed().as_secs_f64();
    if inf.extrapolated {
        eprintln!("warning: t={time} lies outside [0, {}]", spec.t_final);
    }
    let default_path = g.out.join(format!("field_pinn_t{time}"));
    let path = dump_to.map(Path::to_path_buf).unwrap_or(default_path);
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Failure { code: 1, message: format!("{}: {e}", dir.display()) })?;
    }
    let (min, max) = inf.values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    kv("nodes", inf.values.len());
    kv_num("u_min", min);
    kv_num("u_max", max);
    kv_num("infer_s", inf.seconds);
    kv_num("infer_with_warmup_s", total);
    dump(&path, spec, grid, time, &inf)
}

fn run(cli: Cli) -> CmdResult {
    let g = &cli.global;
    match &cli.command {
        Command::Fdm { config } => cmd_fdm(g, config.as_deref()),
        Command::Train { config, iterations, resume } => cmd_train(g, config.as_deref(), *iterations, resume.as_deref()),
        Command::Bench { suite } => cmd_bench(g, suite),
        Command::Eval { checkpoint, field, time, dump } => cmd_eval(checkpoint, field, *time, dump.as_deref()),
        Command::Infer { checkpoint, time, dump } => cmd_infer(g, checkpoint, *time, dump.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
