//! The commands behind the `rmfa` binary.
//!
//! Every command appends one [`RunManifest`] line to `run_manifest.jsonl` in
//! its output directory (or prints it to stderr when there is none).
//!
//! Machine-readable outputs are JSON lines:
//!
//! - `history.jsonl` (train): one [`EpochRecord`] per epoch, keys `epoch`,
//!   `lr`, `loss`, `psnr`, `steps`.
//! - `eval.jsonl` (train, eval): one [`EvalRow`] per pair (`index`, `psnr`,
//!   `ssim`) then a summary line (`mean_psnr`, `mean_ssim`, `count`).
//! - `ablation.jsonl` (ablate): one [`AblationReport`] per seed.
//!
//! Non-finite PSNR is written as the string `"inf"`.
//!
//! # Config file
//!
//! Flat `key = value` lines; `#` starts a comment. Keys: `preset`
//! (`tiny`, `medium`, `large`, applied first), `blocks`, `width`,
//! `split_mode` (`three`, `four`), `tone_mapping`, `tm_levels`,
//! `attention_reduction`, `epochs`, `batch_size`, `lr_max`, `lr_min`,
//! `restart_period`, `seed`, `theta`, `eta`, `lambda`, `gamma`, `patch`,
//! `checkpoint_every`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};

use crate::autodiff::{primitive_cases, GradCase, GRAD_TOLERANCE};
use crate::cfa::{black_level_correct, pack};
use crate::io::{load_raw, save_ppm, CfaPattern, RgbImage};
use crate::model::checks::composed_cases;
use crate::model::{Model, ModelConfig};
use crate::synth::{generate_dataset, read_manifest, SceneKind, SynthParams};
use crate::train::{
    evaluate, evaluate_baseline, run_ablation, split_dataset, AblationBudget, AblationKind,
    AblationReport, EpochRecord, EvalReport, EvalRow, Sample, TrainConfig, Trainer,
};

pub const RUN_MANIFEST: &str = "run_manifest.jsonl";
pub const THREADS_ENV: &str = "RMFA_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "rmfa",
    version,
    about = "Raw-to-RGB reconstruction with RMFA-Net"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic raw/RGB dataset.
    Synth {
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value = "RGGB")]
        pattern: CfaPattern,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.2)]
        s_min: f64,
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
        #[arg(long, default_value = "mixed")]
        scene: SceneKind,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train on a dataset manifest.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Reconstruct one raw file.
    Infer {
        /// Weight file or checkpoint.
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        raw: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a model, or the bilinear baseline, on a dataset manifest.
    Eval {
        #[arg(long, required_unless_present = "baseline")]
        weights: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        baseline: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train two variants under one budget and compare them.
    Ablate {
        #[arg(long)]
        kind: AblationKind,
        /// Adam steps per variant.
        #[arg(long, default_value_t = 300)]
        budget: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Independent seeds, starting at `seed`.
        #[arg(long, default_value_t = 1)]
        repeats: usize,
        #[arg(long, default_value_t = 20)]
        pairs: usize,
        #[arg(long, default_value_t = 48)]
        size: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Finite-difference check of every primitive and the composed cases.
    Gradcheck {
        #[arg(long, hide = true)]
        inject_fault: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// One line of the run ledger.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: Option<String>,
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl RunManifest {
    fn new(command: &str, config: Option<&Path>, seed: Option<u64>) -> Self {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self {
            command: command.into(),
            config: config.map(|p| p.display().to_string()),
            seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            timestamp,
        }
    }

    fn input(mut self, p: &Path) -> Self {
        self.inputs.push(p.display().to_string());
        self
    }

    fn output(mut self, p: &Path) -> Self {
        self.outputs.push(p.display().to_string());
        self
    }

    /// Appends to `dir/run_manifest.jsonl`, or prints to stderr.
    pub fn emit(&self, dir: Option<&Path>) -> anyhow::Result<()> {
        let line = serde_json::to_string(self)?;
        match dir {
            Some(d) => {
                let mut f = std::fs::OpenOptions::new()
                    .create(true)
                    .append(true)
                    .open(d.join(RUN_MANIFEST))?;
                writeln!(f, "{line}")?;
            }
            None => eprintln!("manifest {line}"),
        }
        Ok(())
    }
}

/// Worker threads from `RMFA_THREADS`, default 1.
pub fn threads_from_env() -> anyhow::Result<usize> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => bail!("{THREADS_ENV} must be a positive integer, got {v:?}"),
        },
        Err(_) => Ok(1),
    }
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> anyhow::Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse::<T>()
        .map_err(|e| anyhow::anyhow!("bad value {value:?} for {key}: {e}"))
}

/// Parses the flat `key = value` config format into a validated config.
pub fn parse_config(text: &str) -> anyhow::Result<TrainConfig> {
    let mut entries = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            bail!("line {}: expected key = value, got {raw:?}", n + 1);
        };
        entries.push((n + 1, k.trim().to_string(), v.trim().to_string()));
    }
    let mut c = TrainConfig::default();
    if let Some((_, _, name)) = entries.iter().find(|(_, k, _)| k == "preset") {
        c = TrainConfig::for_model(
            ModelConfig::by_name(name).with_context(|| format!("unknown preset {name:?}"))?,
        );
    }
    for (n, k, v) in &entries {
        let (k, v) = (k.as_str(), v.as_str());
        let r: anyhow::Result<()> = (|| {
            match k {
                "preset" => {}
                "blocks" => c.model.blocks = parse_value(k, v)?,
                "width" => c.model.width = parse_value(k, v)?,
                "split_mode" => c.model.split_mode = parse_value(k, v)?,
                "tone_mapping" => c.model.tone_mapping = parse_value(k, v)?,
                "tm_levels" => c.model.tm_levels = parse_value(k, v)?,
                "attention_reduction" => c.model.attention_reduction = parse_value(k, v)?,
                "epochs" => c.epochs = parse_value(k, v)?,
                "batch_size" => c.batch_size = parse_value(k, v)?,
                "lr_max" => c.schedule.lr_max = parse_value(k, v)?,
                "lr_min" => c.schedule.lr_min = parse_value(k, v)?,
                "restart_period" => c.schedule.period = parse_value(k, v)?,
                "seed" => c.seed = parse_value(k, v)?,
                "theta" => c.loss.theta = parse_value(k, v)?,
                "eta" => c.loss.eta = parse_value(k, v)?,
                "lambda" => c.loss.lambda = parse_value(k, v)?,
                "gamma" => c.loss.gamma = parse_value(k, v)?,
                "patch" => c.patch = parse_value(k, v)?,
                "checkpoint_every" => c.checkpoint_every = parse_value(k, v)?,
                _ => bail!("unknown key {k:?}"),
            }
            Ok(())
        })();
        r.with_context(|| format!("config line {n}"))?;
    }
    c.validate()?;
    Ok(c)
}

pub fn load_config(path: Option<&Path>) -> anyhow::Result<TrainConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("cannot read config {}", p.display()))?;
            parse_config(&text).with_context(|| format!("in {}", p.display()))
        }
        None => Ok(TrainConfig::default()),
    }
}

/// Loads every pair listed in a dataset manifest.
pub fn load_samples(manifest: &Path) -> anyhow::Result<Vec<Sample>> {
    let pairs = read_manifest(manifest)?;
    if pairs.is_empty() {
        bail!("manifest {} lists no pairs", manifest.display());
    }
    pairs
        .iter()
        .map(|(raw, rgb)| {
            Sample::load(raw, rgb).with_context(|| format!("loading {}", raw.display()))
        })
        .collect()
}

fn write_eval(path: &Path, report: &EvalReport) -> anyhow::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for row in &report.rows {
        writeln!(out, "{}", serde_json::to_string(row)?)?;
    }
    let summary = serde_json::json!({
        "mean_psnr": if report.mean_psnr.is_finite() { serde_json::json!(report.mean_psnr) } else { serde_json::json!("inf") },
        "mean_ssim": report.mean_ssim,
        "count": report.rows.len(),
    });
    writeln!(out, "{summary}")?;
    out.flush()?;
    Ok(())
}

/// The plain-text table printed by `eval`.
pub fn eval_table(report: &EvalReport) -> String {
    let mut s = format!("{:>5}  {:>9}  {:>7}\n", "pair", "PSNR(dB)", "SSIM");
    for EvalRow { index, psnr, ssim } in &report.rows {
        s += &format!("{index:>5}  {psnr:>9.3}  {ssim:>7.4}\n");
    }
    s += &format!(
        "{:>5}  {:>9.3}  {:>7.4}\n",
        "mean", report.mean_psnr, report.mean_ssim
    );
    s
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_synth(
    count: usize,
    size: usize,
    pattern: CfaPattern,
    seed: u64,
    s_min: f64,
    noise_sigma: f64,
    scene: SceneKind,
    out: &Path,
) -> anyhow::Result<()> {
    let params = SynthParams {
        pattern,
        s_min,
        noise_sigma,
        ..SynthParams::default()
    };
    let records = generate_dataset(out, count, size, &params, seed, scene)?;
    println!("wrote {} pairs to {}", records.len(), out.display());
    RunManifest::new("synth", None, Some(seed))
        .output(&out.join(crate::synth::MANIFEST_NAME))
        .emit(Some(out))
}

pub fn cmd_train(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    resume: Option<&Path>,
) -> anyhow::Result<()> {
    let mut cfg = load_config(config)?;
    cfg.threads = threads_from_env()?;
    let samples = load_samples(data)?;
    let split = split_dataset(&samples, cfg.seed);
    if split.train.is_empty() {
        bail!("no training pairs after the 9:1 split");
    }
    std::fs::create_dir_all(out)?;
    let mut trainer = match resume {
        Some(p) => Trainer::load_checkpoint(cfg.clone(), p)
            .with_context(|| format!("resuming {}", p.display()))?,
        None => Trainer::new(cfg.clone())?,
    };
    let history_path = out.join("history.jsonl");
    let mut history = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&history_path)?;
    let every = cfg.checkpoint_every;
    trainer.fit(&split.train, |rec: &EpochRecord, t: &Trainer| {
        writeln!(
            history,
            "{}",
            serde_json::to_string(rec).expect("plain record")
        )?;
        println!(
            "epoch {:5}  lr {:.3e}  loss {:.6}  psnr {:.3}",
            rec.epoch, rec.lr, rec.loss, rec.psnr
        );
        if every > 0 && (rec.epoch + 1).is_multiple_of(every) {
            t.save_checkpoint(out.join(format!("checkpoint_{:05}.rmfc", rec.epoch + 1)))?;
        }
        Ok(())
    })?;
    let final_ckpt = out.join("final.rmfc");
    trainer.save_checkpoint(&final_ckpt)?;
    let weights = out.join("weights.rmfw");
    trainer.model().save(&weights)?;
    let mut manifest = RunManifest::new("train", config, Some(cfg.seed)).input(data);
    if let Some(p) = resume {
        manifest = manifest.input(p);
    }
    if !split.test.is_empty() {
        let report = evaluate(trainer.model(), &split.test)?;
        print!("held-out pairs\n{}", eval_table(&report));
        write_eval(&out.join("eval.jsonl"), &report)?;
        manifest = manifest.output(&out.join("eval.jsonl"));
    }
    manifest
        .output(&history_path)
        .output(&final_ckpt)
        .output(&weights)
        .emit(Some(out))
}

pub fn cmd_infer(weights: &Path, raw: &Path, out: &Path) -> anyhow::Result<()> {
    let model =
        Model::load(weights).with_context(|| format!("cannot load {}", weights.display()))?;
    let img = load_raw(raw)?;
    let plane = black_level_correct(&img)?;
    let pred = model.infer(&pack(&plane, img.pattern, model.config().split_mode))?;
    save_ppm(&RgbImage::from_tensor(&pred)?, out)?;
    println!(
        "wrote {}x{} image to {}",
        img.width,
        img.height,
        out.display()
    );
    let dir = out
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    RunManifest::new("infer", None, None)
        .input(weights)
        .input(raw)
        .output(out)
        .emit(Some(dir))
}

pub fn cmd_eval(
    weights: Option<&Path>,
    data: &Path,
    baseline: bool,
    out: Option<&Path>,
) -> anyhow::Result<()> {
    let samples = load_samples(data)?;
    let report = match (baseline, weights) {
        (true, _) => evaluate_baseline(&samples)?,
        (false, Some(w)) => {
            let model = Model::load(w).with_context(|| format!("cannot load {}", w.display()))?;
            evaluate(&model, &samples)?
        }
        (false, None) => bail!("--weights or --baseline is required"),
    };
    print!("{}", eval_table(&report));
    let mut manifest = RunManifest::new("eval", None, None).input(data);
    if let Some(w) = weights.filter(|_| !baseline) {
        manifest = manifest.input(w);
    }
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        write_eval(&dir.join("eval.jsonl"), &report)?;
        manifest = manifest.output(&dir.join("eval.jsonl"));
    }
    manifest.emit(out)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_ablate(
    kind: AblationKind,
    budget: usize,
    seed: u64,
    repeats: usize,
    pairs: usize,
    size: usize,
    config: Option<&Path>,
    out: Option<&Path>,
) -> anyhow::Result<Vec<AblationReport>> {
    let mut base = load_config(config)?;
    base.threads = threads_from_env()?;
    let budget = AblationBudget {
        steps: budget,
        pairs,
        size,
        ..AblationBudget::default()
    };
    let budget = AblationBudget {
        patch: budget.patch.min(size),
        ..budget
    };
    let mut reports = Vec::with_capacity(repeats);
    println!(
        "{:>6}  {:>16} {:>8} {:>7}  {:>16} {:>8} {:>7}  {:>8}",
        "seed", "reference", "PSNR", "SSIM", "ablated", "PSNR", "SSIM", "dPSNR"
    );
    for s in (0..repeats as u64).map(|i| seed.wrapping_add(i)) {
        let r = run_ablation(kind, &base, &budget, s)?;
        println!(
            "{:>6}  {:>16} {:>8.3} {:>7.4}  {:>16} {:>8.3} {:>7.4}  {:>+8.3}",
            s,
            r.reference.name,
            r.reference.eval.mean_psnr,
            r.reference.eval.mean_ssim,
            r.ablated.name,
            r.ablated.eval.mean_psnr,
            r.ablated.eval.mean_ssim,
            r.delta_psnr
        );
        reports.push(r);
    }
    let wins = reports.iter().filter(|r| r.delta_psnr >= 0.0).count();
    println!("reference >= ablated in {wins} of {repeats}");
    let mut manifest = RunManifest::new("ablate", config, Some(seed));
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("ablation.jsonl");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        for r in &reports {
            writeln!(f, "{}", serde_json::to_string(r)?)?;
        }
        f.flush()?;
        manifest = manifest.output(&path);
    }
    manifest.emit(out)?;
    Ok(reports)
}

/// A case whose backward rule is deliberately wrong.
pub fn faulty_case() -> GradCase {
    let x = crate::tensor::Tensor::from_fn(&[2, 3], |i| 0.3 + 0.1 * i as f64);
    GradCase::new("faulty_sin", vec![x], |g, v| {
        let y = g.map(v[0], f64::sin, |t| 1.5 * t.cos());
        Ok(g.sum(y))
    })
}

/// One row of the gradient check table.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GradRow {
    pub name: String,
    pub max_rel_error: f64,
    pub coordinates: usize,
    pub kinks: usize,
    pub passed: bool,
}

pub fn gradcheck_rows(inject_fault: bool) -> anyhow::Result<Vec<GradRow>> {
    let mut cases = primitive_cases();
    cases.extend(composed_cases());
    if inject_fault {
        cases.push(faulty_case());
    }
    cases
        .iter()
        .map(|c| {
            let r = c.check()?;
            Ok(GradRow {
                name: c.name.clone(),
                max_rel_error: r.max_rel_error,
                coordinates: r.coordinates,
                kinks: r.kinks,
                passed: r.passed(GRAD_TOLERANCE),
            })
        })
        .collect()
}

pub fn cmd_gradcheck(inject_fault: bool, out: Option<&Path>) -> anyhow::Result<()> {
    let rows = gradcheck_rows(inject_fault)?;
    println!(
        "{:<28} {:>12} {:>7} {:>6}  result",
        "case", "max rel err", "coords", "kinks"
    );
    for r in &rows {
        println!(
            "{:<28} {:>12.3e} {:>7} {:>6}  {}",
            r.name,
            r.max_rel_error,
            r.coordinates,
            r.kinks,
            if r.passed { "pass" } else { "FAIL" }
        );
    }
    let failed = rows.iter().filter(|r| !r.passed).count();
    let mut manifest = RunManifest::new("gradcheck", None, None);
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let path = dir.join("gradcheck.jsonl");
        let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
        for r in &rows {
            writeln!(f, "{}", serde_json::to_string(r)?)?;
        }
        f.flush()?;
        manifest = manifest.output(&path);
    }
    manifest.emit(out)?;
    if failed > 0 {
        bail!("{failed} of {} gradient checks failed", rows.len());
    }
    Ok(())
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth {
            count,
            size,
            pattern,
            seed,
            s_min,
            noise_sigma,
            scene,
            out,
        } => cmd_synth(count, size, pattern, seed, s_min, noise_sigma, scene, &out),
        Command::Train {
            config,
            data,
            out,
            resume,
        } => cmd_train(config.as_deref(), &data, &out, resume.as_deref()),
        Command::Infer { weights, raw, out } => cmd_infer(&weights, &raw, &out),
        Command::Eval {
            weights,
            data,
            baseline,
            out,
        } => cmd_eval(weights.as_deref(), &data, baseline, out.as_deref()),
        Command::Ablate {
            kind,
            budget,
            seed,
            repeats,
            pairs,
            size,
            config,
            out,
        } => cmd_ablate(
            kind,
            budget,
            seed,
            repeats,
            pairs,
            size,
            config.as_deref(),
            out.as_deref(),
        )
        .map(|_| ()),
        Command::Gradcheck { inject_fault, out } => cmd_gradcheck(inject_fault, out.as_deref()),
    }
}
