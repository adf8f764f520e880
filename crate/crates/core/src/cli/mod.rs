//! Command-line front end: `gen`, `train`, `eval`, `bench`, `gradcheck` and
//! `export-plots`.

mod config;
mod gradcheck;

pub use config::{parse_pairs, RunConfig, ScenarioSource, CONFIG_KEYS};
pub use gradcheck::{gradcheck_suite, GradCheckCase, GRADCHECK_TOLERANCE};

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::airl::RewardMode;
use crate::encoder::{write_counters_jsonl, AgentCentricEncoder, TokenCache};
use crate::error::{Error, Result};
use crate::eval::{evaluate_cv, evaluate_policy, fixed_map_scenes, isps_benchmark, scaling_csv, scaling_report};
use crate::nn::{GradCheckOptions, ParamStore};
use crate::rl::{load_run_checkpoint, run_target_sweep, train, train_bc, ModelSize, Policy, TrainConfig};
use crate::scene::{generate_synthetic_scenario, load_scenario, save_scenario, Template, World};

pub const SEED_ENV: &str = "INSTASIM_SEED";

#[derive(Debug, Parser)]
#[command(name = "instasim", version, about = "Instance-centric multi-agent driving simulation and behavior learning")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Run seed; falls back to the config file, then $INSTASIM_SEED, then 0.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic scenarios with scripted-expert trajectories.
    Gen(GenArgs),
    /// Train a policy with AIRL (or behavior cloning).
    Train(TrainArgs),
    /// Closed-loop evaluation of a checkpoint or the constant-velocity baseline.
    Eval(EvalArgs),
    /// Throughput and encoder-scaling benchmarks.
    Bench(BenchArgs),
    /// Finite-difference gradient checks.
    Gradcheck(GradcheckArgs),
    /// Convert JSON-lines logs of a run directory into CSV tables.
    ExportPlots(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    pub template: String,
    pub n_agents: usize,
    pub n_scenarios: usize,
    #[arg(long, default_value = "scenarios")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// `adaptive:<target>` or `constant:<c>`.
    #[arg(long)]
    pub reward_mode: Option<String>,
    /// Adaptive-target sweep `start:end:step`, e.g. `1:29:2`.
    #[arg(long)]
    pub sweep_target: Option<String>,
    /// Seeds of the sweep, comma separated.
    #[arg(long, default_value = "0")]
    pub sweep_seeds: String,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Behavior cloning instead of AIRL.
    #[arg(long)]
    pub bc: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Also evaluate the constant-velocity baseline.
    #[arg(long)]
    pub cv: bool,
    /// Scenario file or directory; otherwise generated from the flags below.
    #[arg(long)]
    pub scenarios: Option<PathBuf>,
    #[arg(long, default_value = "straight")]
    pub template: String,
    #[arg(long, default_value_t = 4)]
    pub agents: usize,
    #[arg(long, default_value_t = 50)]
    pub n: usize,
    #[arg(long, default_value = "eval_out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Policy checkpoint; a freshly initialized model of `--model` otherwise.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value = "small")]
    pub model: String,
    #[arg(long, default_value = "intersection")]
    pub template: String,
    /// Agent counts of the scaling report.
    #[arg(long, default_value = "1,8,64")]
    pub agents: String,
    /// Environment counts of the throughput benchmark.
    #[arg(long, default_value = "1,2,4")]
    pub envs: String,
    /// Agents per environment in the throughput benchmark.
    #[arg(long, default_value_t = 8)]
    pub env_agents: usize,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    /// Add the agent-centric reference columns.
    #[arg(long)]
    pub compare_agent_centric: bool,
    #[arg(long, default_value = "bench_out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Corrupt one analytic gradient to demonstrate a failing check.
    #[arg(long)]
    pub inject_bug: bool,
    #[arg(long, default_value_t = 1e-3)]
    pub eps: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Exit code: 0 success, 1 usage or configuration error, 2 runtime failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::UnknownTemplate(_) | Error::InvalidArgument(_) => 1,
        _ => 2,
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn resolve_seed(flag: Option<u64>, from_config: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(from_config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v.trim().parse().map_err(|_| Error::Config(format!("{SEED_ENV}=`{v}` is not an integer"))),
        Err(_) => Ok(0),
    }
}

/// Returns whether the command succeeded (false only for failed checks).
pub fn execute(cli: Cli) -> Result<bool> {
    if let Some(n) = cli.workers {
        if n == 0 {
            return Err(Error::Config("--workers must be positive".into()));
        }
        // Ignored if a pool already exists (e.g. when called twice in-process).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match cli.command {
        Command::Gen(a) => cmd_gen(&a, resolve_seed(cli.seed, None)?).map(|_| true),
        Command::Train(a) => cmd_train(&a, cli.seed).map(|_| true),
        Command::Eval(a) => cmd_eval(&a, resolve_seed(cli.seed, None)?).map(|_| true),
        Command::Bench(a) => cmd_bench(&a, resolve_seed(cli.seed, None)?).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(&a, resolve_seed(cli.seed, None)?),
        Command::ExportPlots(a) => cmd_export_plots(&a).map(|_| true),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_json(path: &Path, v: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenManifest {
    pub template: String,
    pub n_agents: usize,
    pub seed: u64,
    pub files: Vec<String>,
    pub seeds: Vec<u64>,
}

/// Writes `scenario_XXXX.json` files plus `manifest.json`; scenario `i`
/// uses seed `seed + i`.
pub fn cmd_gen(a: &GenArgs, seed: u64) -> Result<GenManifest> {
    let template: Template = a.template.parse()?;
    if a.n_agents == 0 || a.n_scenarios == 0 {
        return Err(Error::Config("n_agents and n_scenarios must be positive".into()));
    }
    create_dir(&a.out)?;
    let mut m = GenManifest { template: template.to_string(), n_agents: a.n_agents, seed, files: Vec::new(), seeds: Vec::new() };
    for i in 0..a.n_scenarios {
        let s = seed.wrapping_add(i as u64);
        let sc = generate_synthetic_scenario(template, a.n_agents, s)?;
        let name = format!("scenario_{i:04}.json");
        save_scenario(&sc, a.out.join(&name))?;
        m.files.push(name);
        m.seeds.push(s);
    }
    write_json(&a.out.join("manifest.json"), &m)?;
    Ok(m)
}

/// Loads worlds from a scenario file or directory.
pub fn load_worlds(path: &Path) -> Result<Vec<World>> {
    if path.is_file() {
        return Ok(vec![World::from_scenario(load_scenario(path)?)]);
    }
    if !path.is_dir() {
        return Err(Error::InvalidArgument(format!("scenario path {} does not exist", path.display())));
    }
    let manifest = path.join("manifest.json");
    let files: Vec<PathBuf> = if manifest.exists() {
        let text = fs::read_to_string(&manifest).map_err(|e| Error::io(&manifest, e))?;
        let m: GenManifest = serde_json::from_str(&text).map_err(|e| Error::Schema(format!("manifest: {e}")))?;
        m.files.iter().map(|f| path.join(f)).collect()
    } else {
        let mut v: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        v.sort();
        v
    };
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no scenarios in {}", path.display())));
    }
    files.iter().map(|f| Ok(World::from_scenario(load_scenario(f)?))).collect()
}

pub fn resolve_scenarios(src: &ScenarioSource) -> Result<Vec<World>> {
    match src {
        ScenarioSource::Path(p) => load_worlds(p),
        &ScenarioSource::Generate { template, n_agents, n_scenarios, seed } => (0..n_scenarios)
            .map(|i| Ok(World::from_scenario(generate_synthetic_scenario(template, n_agents, seed.wrapping_add(i as u64))?)))
            .collect(),
    }
}

/// Parses `start:end:step` into the inclusive grid.
pub fn parse_sweep(spec: &str) -> Result<Vec<f64>> {
    let bad = || Error::Config(format!("sweep `{spec}`: expected start:end:step"));
    let parts: Vec<f64> = spec.split(':').map(|p| p.trim().parse::<f64>().map_err(|_| bad())).collect::<Result<_>>()?;
    let [start, end, step] = parts[..] else { return Err(bad()) };
    if !(step > 0.0) || end < start {
        return Err(bad());
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n).map(|k| start + step * k as f64).collect())
}

fn parse_list<T: std::str::FromStr>(what: &str, s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|x| x.trim().parse().map_err(|_| Error::Config(format!("{what}: cannot parse `{x}`"))))
        .collect()
}

pub fn cmd_train(a: &TrainArgs, seed_flag: Option<u64>) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::from_text(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => RunConfig::default(),
    };
    let seed = resolve_seed(seed_flag, cfg.seed_set.then_some(cfg.train.seed))?;
    cfg.set_seed(seed);
    if let Some(m) = &a.reward_mode {
        cfg.train.reward_mode = m.parse::<RewardMode>()?;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(o) = &a.out {
        cfg.out_dir = o.clone();
    }
    cfg.train.validate()?;
    let sweep = a.sweep_target.as_deref().map(parse_sweep).transpose()?;
    let seeds: Vec<u64> = parse_list("sweep seeds", &a.sweep_seeds)?;
    let worlds = resolve_scenarios(&cfg.scenarios)?;
    create_dir(&cfg.out_dir)?;
    if let Some(targets) = sweep {
        let eval_worlds = resolve_scenarios(&cfg.eval_scenarios)?;
        let points = run_target_sweep(&cfg.train, &worlds, &eval_worlds, &targets, &seeds, Some(&cfg.out_dir))?;
        for p in &points {
            println!(
                "target {:>5} seed {:>3}: rmse {:.3} off-track {:.3} collision {:.3}",
                p.target, p.seed, p.metrics.rmse, p.metrics.offtrack_rate, p.metrics.collision_rate
            );
        }
        return Ok(());
    }
    if a.bc {
        let (_, losses) = train_bc(&cfg.train, &worlds, Some(&cfg.out_dir))?;
        println!("behavior cloning: {} steps, final nll {:.4}", losses.len(), losses.last().copied().unwrap_or(f64::NAN));
        return Ok(());
    }
    let out = train(&cfg.train, &worlds, Some(&cfg.out_dir))?;
    if let Some(r) = out.records.last() {
        println!(
            "epoch {}: disc_acc {:.3} r_mean_raw {:.3} offset {:.3} collision {:.3} off-track {:.3}",
            r.epoch, r.disc_acc, r.r_mean_raw, r.offset, r.collision_rate, r.offtrack_rate
        );
    }
    for c in &out.checkpoints {
        println!("checkpoint {}", c.display());
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, seed: u64) -> Result<()> {
    if a.checkpoint.is_none() && !a.cv {
        return Err(Error::Config("eval needs --checkpoint and/or --cv".into()));
    }
    let policy = a.checkpoint.as_ref().map(load_run_checkpoint).transpose()?;
    let worlds = match &a.scenarios {
        Some(p) => load_worlds(p)?,
        None => resolve_scenarios(&ScenarioSource::Generate {
            template: a.template.parse()?,
            n_agents: a.agents,
            n_scenarios: a.n,
            seed,
        })?,
    };
    create_dir(&a.out)?;
    if let Some((policy, epoch)) = policy {
        let m = evaluate_policy(&policy, &worlds)?;
        println!(
            "policy (epoch {epoch}): rmse {:.3} off-track {:.3} collision {:.3} score {:.3}",
            m.rmse,
            m.offtrack_rate,
            m.collision_rate,
            m.selection_score()
        );
        write_json(&a.out.join("metrics_policy.json"), &m)?;
    }
    if a.cv {
        let m = evaluate_cv(&worlds)?;
        println!("constant velocity: rmse {:.3} off-track {:.3} collision {:.3}", m.rmse, m.offtrack_rate, m.collision_rate);
        write_json(&a.out.join("metrics_cv.json"), &m)?;
    }
    Ok(())
}

fn bench_policy(a: &BenchArgs, seed: u64) -> Result<Policy> {
    match &a.checkpoint {
        Some(p) => Ok(load_run_checkpoint(p)?.0),
        None => {
            let size: ModelSize = a.model.parse()?;
            let cfg = TrainConfig { model: size, ..TrainConfig::default() };
            Policy::new(cfg.policy_config(), seed)
        }
    }
}

pub fn cmd_bench(a: &BenchArgs, seed: u64) -> Result<()> {
    let template: Template = a.template.parse()?;
    let agent_counts: Vec<usize> = parse_list("agent counts", &a.agents)?;
    let env_counts: Vec<usize> = parse_list("env counts", &a.envs)?;
    if a.reps == 0 || agent_counts.contains(&0) || env_counts.contains(&0) {
        return Err(Error::Config("reps, agent and env counts must be positive".into()));
    }
    let policy = bench_policy(a, seed)?;
    create_dir(&a.out)?;

    let tp_path = a.out.join("throughput.jsonl");
    let mut lines = String::new();
    for &n in &env_counts {
        let worlds: Vec<World> = (0..n)
            .map(|i| Ok(World::from_scenario(generate_synthetic_scenario(template, a.env_agents, seed.wrapping_add(i as u64))?)))
            .collect::<Result<_>>()?;
        let r = isps_benchmark(&policy, &worlds, a.reps, a.warmup)?;
        println!(
            "envs {n}: isps {:.1} initial {:.3} ms subsequent {:.3} ms",
            r.isps,
            r.initial_step_latency_s * 1e3,
            r.subsequent_step_latency_s * 1e3
        );
        lines.push_str(&serde_json::to_string(&r).map_err(|e| Error::Config(e.to_string()))?);
        lines.push('\n');
    }
    fs::write(&tp_path, lines).map_err(|e| Error::io(&tp_path, e))?;

    let worlds = fixed_map_scenes(template, &agent_counts, seed)?;
    let mut ref_store = ParamStore::new();
    let reference = if a.compare_agent_centric {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xAC);
        Some(AgentCentricEncoder::new(&mut ref_store, "agent_centric", policy.cfg.encoder, &mut rng)?)
    } else {
        None
    };
    let ref_ws = ref_store.snapshot::<f32>();
    let rows = scaling_report(&policy, reference.as_ref().map(|e| (e, &ref_ws)), &worlds, a.reps, a.warmup)?;
    let csv = a.out.join("scaling.csv");
    fs::write(&csv, scaling_csv(&rows)).map_err(|e| Error::io(&csv, e))?;
    for r in &rows {
        println!(
            "agents {:>3}: polyline encodings {} (N_p = {}), step latency {:.3} ms{}",
            r.n_agents,
            r.ic_counts.polyline_encodings,
            r.n_polylines,
            r.ic_step_latency_s * 1e3,
            match (&r.ac_counts, r.ac_step_latency_s) {
                (Some(c), Some(l)) => format!(", agent-centric polyline encodings {} latency {:.3} ms", c.polyline_encodings, l * 1e3),
                _ => String::new(),
            }
        );
    }
    // Per-step counter log of the largest scene.
    if let Some(world) = worlds.last() {
        let buf = crate::airl::ExpertBuffer::new(std::slice::from_ref(world))?;
        let ws = policy.store.snapshot::<f32>();
        let mut cache = TokenCache::new();
        for states in &buf.states[0] {
            policy.encoder.encode_scene(&ws, world, states, &mut cache)?;
        }
        write_counters_jsonl(a.out.join("counters.jsonl"), cache.history())?;
    }
    Ok(())
}

pub fn cmd_gradcheck(a: &GradcheckArgs, seed: u64) -> Result<bool> {
    let opts = GradCheckOptions { eps: a.eps, seed, ..GradCheckOptions::default() };
    let cases = gradcheck_suite(&opts, a.inject_bug)?;
    let mut ok = true;
    let mut out = Vec::new();
    for c in &cases {
        let pass = c.passed();
        ok &= pass;
        println!(
            "{} {:<24} max_rel_error {:.2e} checked {} skipped {}",
            if pass { "PASS" } else { "FAIL" },
            c.name,
            c.report.max_rel_error,
            c.report.checked,
            c.report.skipped
        );
        out.push(json!({ "name": c.name, "passed": pass, "max_rel_error": c.report.max_rel_error,
            "checked": c.report.checked, "skipped": c.report.skipped }));
    }
    if let Some(dir) = &a.out {
        create_dir(dir)?;
        write_json(&dir.join("gradcheck.json"), &out)?;
    }
    Ok(ok)
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                flatten(&format!("{prefix}.{i}"), x, out);
            }
        }
        Value::Null => out.push((prefix.to_string(), String::new())),
        Value::String(s) => out.push((prefix.to_string(), s.clone())),
        x => out.push((prefix.to_string(), x.to_string())),
    }
}

/// Converts JSON lines to CSV; columns are the union of flattened keys in
/// first-seen order.
pub fn jsonl_to_csv(text: &str) -> Result<String> {
    let mut rows = Vec::new();
    let mut cols: Vec<String> = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let v: Value = serde_json::from_str(line).map_err(|e| Error::Schema(format!("line {}: {e}", n + 1)))?;
        let mut flat = Vec::new();
        flatten("", &v, &mut flat);
        for (k, _) in &flat {
            if !cols.contains(k) {
                cols.push(k.clone());
            }
        }
        rows.push(flat);
    }
    let mut s = cols.join(",");
    s.push('\n');
    for r in rows {
        let cells: Vec<String> = cols
            .iter()
            .map(|c| r.iter().find(|(k, _)| k == c).map(|(_, v)| v.clone()).unwrap_or_default())
            .map(|v| if v.contains(',') { format!("\"{v}\"") } else { v })
            .collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    Ok(s)
}

pub fn cmd_export_plots(a: &ExportArgs) -> Result<Vec<PathBuf>> {
    let out = a.out.clone().unwrap_or_else(|| a.run.join("plots"));
    create_dir(&out)?;
    let mut written = Vec::new();
    let mut inputs: Vec<PathBuf> = fs::read_dir(&a.run)
        .map_err(|e| Error::io(&a.run, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    inputs.sort();
    for p in inputs {
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let dest = out.join(p.with_extension("csv").file_name().expect("file name"));
        fs::write(&dest, jsonl_to_csv(&text)?).map_err(|e| Error::io(&dest, e))?;
        println!("{}", dest.display());
        written.push(dest);
    }
    if written.is_empty() {
        return Err(Error::InvalidArgument(format!("no .jsonl logs in {}", a.run.display())));
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_grid() {
        let g = parse_sweep("1:29:2").unwrap();
        assert_eq!(g.len(), 15);
        assert_eq!((g[0], g[14]), (1.0, 29.0));
        assert!(parse_sweep("1:29").is_err());
        assert!(parse_sweep("5:1:1").is_err());
    }

    #[test]
    fn csv_flattening() {
        let csv = jsonl_to_csv("{\"a\":1,\"b\":{\"c\":[2,3]}}\n{\"a\":4,\"d\":\"x\"}\n").unwrap();
        assert_eq!(csv, "a,b.c.0,b.c.1,d\n1,2,3,\n4,,,x\n");
    }

    #[test]
    fn usage_errors_exit_1() {
        assert_eq!(run(["instasim", "frobnicate"]), 1);
        assert_eq!(run(["instasim", "eval"]), 1);
        assert_eq!(exit_code(&Error::UnknownTemplate("x".into())), 1);
        assert_eq!(exit_code(&Error::Checkpoint("x".into())), 2);
    }
}
