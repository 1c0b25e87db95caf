use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dcct::io::{load_checkpoint, save_checkpoint, write_atomic, write_samples_csv};
use dcct::trainer::{metrics_csv, Trainer};
use dcct::{datagen, Dataset, RunConfig};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "dcct", version, about = "Dual clustering co-teaching on synthetic re-identification data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML config; omitted means the built-in defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides a config field, e.g. `--set use_csm=false` or `--set dataset.seed=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train once and write metrics, checkpoints and a summary.
    Run(Common),
    /// Run the {use_dcdp} x {use_csm} grid over the configured seeds.
    Ablate(Common),
    /// Run once per value of `base`, `delta` or `gamma`.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', num_args = 0..)]
        values: Vec<f64>,
    },
    /// Evaluate a saved encoder on the configured dataset's query/gallery split.
    EvalCheckpoint {
        #[command(flatten)]
        common: Common,
        /// Checkpoint manifest (`.json`).
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Generate the configured dataset and write it as CSV.
    GenData(Common),
}

/// Raised for anything wrong with the configuration or arguments; exits 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

fn apply_override(table: &mut toml::Table, assignment: &str) -> anyhow::Result<()> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| usage(format!("override `{assignment}` is not KEY=VALUE")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = path.split_last().expect("split yields one item");
    let mut cur = table;
    for p in parents {
        cur = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()))
            .as_table_mut()
            .ok_or_else(|| usage(format!("override `{key}`: `{p}` is not a table")))?;
    }
    cur.insert(last.to_string(), parse_value(raw.trim()));
    Ok(())
}

fn load_config(common: &Common) -> anyhow::Result<RunConfig> {
    let mut table = match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
            toml::from_str::<toml::Table>(&text)
                .map_err(|e| usage(format!("{}: {e}", path.display())))?
        }
        None => toml::from_str(&RunConfig::desk_default().to_toml_string())?,
    };
    for o in &common.overrides {
        apply_override(&mut table, o)?;
    }
    if let Some(seed) = common.seed {
        table.insert("seed".into(), toml::Value::Integer(seed as i64));
    }
    let text = toml::to_string(&table)?;
    RunConfig::from_toml_str(&text).map_err(|e| usage(e.to_string()))
}

#[derive(Serialize)]
struct Summary {
    seed: u64,
    use_dcdp: bool,
    use_csm: bool,
    clusterer: String,
    epochs: usize,
    iterations: usize,
    completed: bool,
    map: f64,
    top1: f64,
    top5: f64,
    top10: f64,
    best_net: usize,
    label_free_choice: usize,
    final_map: [f64; 2],
    wall_time_s: f64,
    metrics_csv: String,
    checkpoint: String,
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes).with_context(|| format!("writing {}", path.display()))
}

/// Trains once into `dir`. The metrics CSV is rewritten after every epoch so
/// a failed run leaves the completed epochs behind.
fn train(config: &RunConfig, dataset: Option<Dataset>, dir: &Path) -> anyhow::Result<Summary> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    write_atomic(&dir.join("config.toml"), config.to_toml_string().as_bytes())?;
    let start = Instant::now();
    let trainer = match dataset {
        Some(d) => Trainer::with_dataset(config.clone(), d)?,
        None => Trainer::new(config.clone())?,
    };
    let csv_path = dir.join("metrics.csv");
    let result = trainer
        .run_with(|rows| write_atomic(&csv_path, metrics_csv(rows).as_bytes()))
        .with_context(|| format!("run in {}", dir.display()))?;
    save_checkpoint(&result.final_params[0], dir, "mean_net1")?;
    save_checkpoint(&result.final_params[1], dir, "mean_net2")?;
    let best = save_checkpoint(&result.best_params, dir, "best")?;
    let last = result.metrics.last();
    let summary = Summary {
        seed: config.seed,
        use_dcdp: config.use_dcdp,
        use_csm: config.use_csm,
        clusterer: format!("{:?}", config.clusterer).to_lowercase(),
        epochs: config.epochs,
        iterations: config.iterations,
        completed: true,
        map: result.best_eval.map,
        top1: result.best_eval.cmc[0],
        top5: result.best_eval.cmc[1],
        top10: result.best_eval.cmc[2],
        best_net: result.best_net,
        label_free_choice: result.label_free_choice,
        final_map: [last.map_or(0.0, |m| m.map1), last.map_or(0.0, |m| m.map2)],
        wall_time_s: start.elapsed().as_secs_f64(),
        metrics_csv: csv_path.display().to_string(),
        checkpoint: best.display().to_string(),
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn cmd_run(common: &Common) -> anyhow::Result<()> {
    let config = load_config(common)?;
    let summary = train(&config, None, &common.out)?;
    println!(
        "mAP {:.4}  top-1 {:.4}  net {}  ({:.1}s)",
        summary.map, summary.top1, summary.best_net, summary.wall_time_s
    );
    Ok(())
}

fn cmd_ablate(common: &Common) -> anyhow::Result<()> {
    let config = load_config(common)?;
    let dataset = datagen::generate(&config.dataset)?;
    let seeds = config.seed_list();
    let mut csv = String::from("use_dcdp,use_csm,seeds,map_mean,map_std,top1_mean,top1_std\n");
    for (dcdp, csm) in [(true, true), (true, false), (false, true), (false, false)] {
        let (mut maps, mut top1s) = (Vec::new(), Vec::new());
        for &seed in &seeds {
            let cfg = RunConfig {
                seed,
                use_dcdp: dcdp,
                use_csm: csm,
                ..config.clone()
            };
            let dir = common.out.join(format!("dcdp{}_csm{}_seed{seed}", dcdp as u8, csm as u8));
            let s = train(&cfg, Some(dataset.clone()), &dir)?;
            println!("dcdp={dcdp} csm={csm} seed={seed}: mAP {:.4}", s.map);
            maps.push(s.map);
            top1s.push(s.top1);
        }
        let (mm, ms) = mean_std(&maps);
        let (tm, ts) = mean_std(&top1s);
        csv.push_str(&format!("{dcdp},{csm},{},{mm},{ms},{tm},{ts}\n", seeds.len()));
    }
    write_atomic(&common.out.join("ablation.csv"), csv.as_bytes())?;
    Ok(())
}

fn cmd_sweep(common: &Common, param: &str, values: &[f64]) -> anyhow::Result<()> {
    if !matches!(param, "base" | "delta" | "gamma") {
        return Err(usage(format!("unknown sweep parameter `{param}` (expected base, delta or gamma)")));
    }
    if values.is_empty() {
        return Err(usage("sweep needs at least one value"));
    }
    let config = load_config(common)?;
    let dataset = datagen::generate(&config.dataset)?;
    let mut csv = format!("{param},seed,map,top1,top5,top10\n");
    for (i, &v) in values.iter().enumerate() {
        let mut cfg = config.clone();
        match param {
            "base" => cfg.base = v,
            "delta" => cfg.delta = v,
            _ => cfg.gamma = v,
        }
        cfg.validate().map_err(|e| usage(format!("{param} = {v}: {e}")))?;
        let s = train(&cfg, Some(dataset.clone()), &common.out.join(format!("{param}_{i}")))?;
        println!("{param}={v}: mAP {:.4}", s.map);
        csv.push_str(&format!("{v},{},{},{},{},{}\n", cfg.seed, s.map, s.top1, s.top5, s.top10));
    }
    write_atomic(&common.out.join("sweep.csv"), csv.as_bytes())?;
    Ok(())
}

fn cmd_eval(common: &Common, checkpoint: &Path) -> anyhow::Result<()> {
    let config = load_config(common)?;
    let params = load_checkpoint(checkpoint)
        .with_context(|| format!("loading {}", checkpoint.display()))?;
    if params.dims().d_in != config.dataset.d_in {
        bail!(
            "checkpoint expects d_in = {}, dataset has {}",
            params.dims().d_in,
            config.dataset.d_in
        );
    }
    let mut cfg = config;
    cfg.d_hidden = params.dims().d_hidden;
    cfg.d_out = params.dims().d_out;
    let r = Trainer::new(cfg)?.evaluate_params(&params)?;
    std::fs::create_dir_all(&common.out)?;
    write_json(&common.out.join("eval.json"), &r)?;
    println!(
        "mAP {:.4}  top-1 {:.4}  top-5 {:.4}  top-10 {:.4}",
        r.map, r.cmc[0], r.cmc[1], r.cmc[2]
    );
    Ok(())
}

fn cmd_gen_data(common: &Common) -> anyhow::Result<()> {
    let config = load_config(common)?;
    let dataset = datagen::generate(&config.dataset)?;
    std::fs::create_dir_all(&common.out)?;
    let mut buf = Vec::new();
    write_samples_csv(&dataset.samples, &mut buf)?;
    write_atomic(&common.out.join("samples.csv"), &buf)?;
    println!("{} samples", dataset.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Ablate(c) => cmd_ablate(c),
        Command::Sweep {
            common,
            param,
            values,
        } => cmd_sweep(common, param, values),
        Command::EvalCheckpoint { common, checkpoint } => cmd_eval(common, checkpoint),
        Command::GenData(c) => cmd_gen_data(c),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
