use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use g2gan::data::{
    encode_label, export_dataset, load_domain_folders, load_image_file, save_record, synthesize_multidomain,
    DomainDataset, ImageTensor, SynthSpec,
};
use g2gan::evaluation::{
    capacity_report, config_hash, evaluate_translator, identity_translations, paired_targets, score_translations,
    train_eval_classifier, EvalReport,
};
use g2gan::networks::{NetworkConfig, SharingMode};
use g2gan::trainer::{load_generators, seed_generators, FitCallback, FitOptions, StepMetrics, Trainer};
use g2gan::Precision;
use log::info;

use crate::config::{parse_assignment, resolve, seed_value, RunConfig, Scale, SEED_ENV};
use crate::{CliResult, Failure};

pub const RUN_CONFIG_FILE: &str = "config.toml";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_TEXT: &str = "report.txt";

#[derive(Debug, Parser)]
#[command(name = "g2gan", version, about = "Dual-generator multi-domain image translation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic hue-rotation dataset as one folder per domain.
    Synth(SynthArgs),
    /// Train a model on a folder-per-domain dataset.
    Train(TrainArgs),
    /// Translate image files with a trained checkpoint.
    Translate(TranslateArgs),
    /// Score a checkpoint (or a control) by classification accuracy and FID.
    Evaluate(EvaluateArgs),
    /// Print the model-count and parameter table.
    Capacity(CapacityArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "M")]
    pub domains: usize,
    /// Images per domain.
    #[arg(long, value_name = "N")]
    pub count: usize,
    #[arg(long, value_name = "PX", default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Options shared by commands that read a run config.
#[derive(Debug, Args)]
pub struct RunArgs {
    /// TOML run config. Flags override its values.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override any run-config key.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[arg(long, value_name = "DIR")]
    pub data: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Image side length.
    #[arg(long, value_name = "PX")]
    pub size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Print the resolved run config and exit.
    #[arg(long)]
    pub print_config: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SharingArg {
    Full,
    Partial,
    None,
}

impl From<SharingArg> for SharingMode {
    fn from(s: SharingArg) -> Self {
        match s {
            SharingArg::Full => SharingMode::Full,
            SharingArg::Partial => SharingMode::Partial,
            SharingArg::None => SharingMode::None,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_enum)]
    pub sharing: Option<SharingArg>,
    /// Start the generators from this checkpoint.
    #[arg(long, value_name = "FILE")]
    pub init_from: Option<PathBuf>,
    /// Total epochs. The learning rate stays constant for the first half,
    /// rounded up, unless `epochs_constant_lr` says otherwise.
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long, value_enum)]
    pub scale: Option<Scale>,
    #[arg(long, value_enum)]
    pub precision: Option<PrecisionArg>,
    #[arg(long)]
    pub no_msssim: bool,
    #[arg(long)]
    pub no_colorcycle: bool,
    #[arg(long)]
    pub no_identity: bool,
    #[arg(long)]
    pub double_discriminator: bool,
    /// Log training losses every this many iterations.
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub log_every: u64,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("target").required(true).args(["target_domain", "all_domains"])))]
pub struct TranslateArgs {
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Domain name or index.
    #[arg(long, value_name = "DOMAIN")]
    pub target_domain: Option<String>,
    #[arg(long)]
    pub all_domains: bool,
    #[arg(long, value_name = "DIR", default_value = "translations")]
    pub out: PathBuf,
    #[arg(required = true, value_name = "IMAGE")]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Control {
    /// Ground-truth counterparts from the dataset pairing.
    Oracle,
    /// Every image left in its source domain.
    Identity,
}

#[derive(Debug, Args)]
#[command(group(clap::ArgGroup::new("subject").required(true).args(["checkpoint", "control"])))]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, value_name = "FILE")]
    pub checkpoint: Option<PathBuf>,
    /// Score a reference translator instead of a checkpoint.
    #[arg(long, value_enum)]
    pub control: Option<Control>,
}

#[derive(Debug, Args)]
pub struct CapacityArgs {
    #[arg(long, value_name = "M", default_value_t = 7)]
    pub domains: usize,
    #[arg(long, value_name = "PX", default_value_t = 256)]
    pub resolution: usize,
    /// Measure the desk-sized networks instead of the full-size ones.
    #[arg(long, value_enum, default_value_t = Scale::Full)]
    pub scale: Scale,
    #[arg(long)]
    pub csv: bool,
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Train(a) => train(&a),
        Command::Translate(a) => translate(&a),
        Command::Evaluate(a) => evaluate(&a),
        Command::Capacity(a) => capacity(&a),
    }
}

fn synth(a: &SynthArgs) -> CliResult {
    let spec = SynthSpec {
        m: a.domains,
        images_per_domain: a.count,
        height: a.size,
        width: a.size,
        seed: a.seed,
    };
    let dataset = synthesize_multidomain(&spec)?;
    export_dataset(&dataset, &a.out)?;
    println!(
        "wrote {} domains x {} images ({}x{}) to {}",
        a.domains,
        a.count,
        a.size,
        a.size,
        a.out.display()
    );
    Ok(())
}

/// Flag layer shared by `train` and `evaluate`.
fn base_flags(run: &RunArgs) -> CliResult<toml::Table> {
    let mut t = toml::Table::new();
    for s in &run.set {
        let (k, v) = parse_assignment(s)?;
        t.insert(k, v);
    }
    if let Some(d) = &run.data {
        t.insert("data".into(), path_value(d)?);
    }
    if let Some(o) = &run.out {
        t.insert("out".into(), path_value(o)?);
    }
    if let Some(s) = run.size {
        t.insert("resolution".into(), toml::Value::Integer(s as i64));
    }
    if let Some(s) = run.seed {
        t.insert("seed".into(), seed_value(s)?);
    }
    Ok(t)
}

fn path_value(p: &Path) -> CliResult<toml::Value> {
    p.to_str()
        .map(|s| toml::Value::String(s.into()))
        .ok_or_else(|| Failure::usage(format!("path {} is not valid UTF-8", p.display())))
}

fn resolve_run(run: &RunArgs, flags: toml::Table) -> CliResult<RunConfig> {
    let env = std::env::var(SEED_ENV).ok();
    resolve(run.config.as_deref(), env.as_deref(), flags)
}

fn train_flags(a: &TrainArgs) -> CliResult<toml::Table> {
    let mut t = base_flags(&a.run)?;
    let mut put = |k: &str, v: toml::Value| {
        t.insert(k.into(), v);
    };
    if let Some(s) = a.sharing {
        put("sharing_mode", toml::Value::String(SharingMode::from(s).to_string()));
    }
    if let Some(p) = &a.init_from {
        put("init_from", path_value(p)?);
    }
    if let Some(e) = a.epochs {
        put("epochs_total", toml::Value::Integer(e as i64));
    }
    if let Some(n) = a.max_iterations {
        put("max_iterations", toml::Value::Integer(n as i64));
    }
    if let Some(s) = a.scale {
        put("scale", toml::Value::String(scale_name(s).into()));
    }
    if let Some(p) = a.precision {
        let p = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
        put("precision", toml::Value::String(p.to_string()));
    }
    for (off, key) in [
        (a.no_msssim, "use_msssim"),
        (a.no_colorcycle, "use_colorcycle"),
        (a.no_identity, "use_identity"),
    ] {
        if off {
            put(key, toml::Value::Boolean(false));
        }
    }
    if a.double_discriminator {
        put("use_double_discriminator", toml::Value::Boolean(true));
    }
    Ok(t)
}

fn scale_name(s: Scale) -> &'static str {
    match s {
        Scale::Desk => "desk",
        Scale::Full => "full",
    }
}

/// Loads the dataset named by `rc` and splits off the holdout when one is
/// configured.
fn load_split(rc: &RunConfig) -> CliResult<(DomainDataset, Option<DomainDataset>)> {
    let data = rc.data_dir()?;
    let dataset = load_domain_folders(data, &rc.load_options())?;
    info!(
        "loaded {} images in {} domains from {}",
        dataset.len(),
        dataset.m(),
        data.display()
    );
    if rc.holdout_per_domain == 0 {
        return Ok((dataset, None));
    }
    let (train, hold) = dataset.split_holdout(rc.holdout_per_domain)?;
    Ok((train, Some(hold)))
}

struct Progress {
    every: u64,
    started: Instant,
}

impl FitCallback for Progress {
    fn on_step(&mut self, trainer: &Trainer, metrics: &StepMetrics) -> g2gan::Result<()> {
        let it = trainer.iteration() as u64;
        if it % self.every == 0 {
            let terms: Vec<String> = metrics.entries().iter().map(|(k, v)| format!("{k} {v:.4}")).collect();
            info!(
                "epoch {} iter {it} ({:.0}s) {}",
                trainer.epoch(),
                self.started.elapsed().as_secs_f64(),
                terms.join("  ")
            );
        }
        Ok(())
    }

    fn on_epoch_end(&mut self, trainer: &Trainer) -> g2gan::Result<()> {
        info!("finished epoch {} at iteration {}", trainer.epoch(), trainer.iteration());
        Ok(())
    }
}

fn train(a: &TrainArgs) -> CliResult {
    let rc = resolve_run(&a.run, train_flags(a)?)?;
    if a.run.print_config {
        print!("{}", rc.to_toml());
        return Ok(());
    }
    let cfg = rc.train_config();
    cfg.validate()?;
    rc.network(2).validate()?;
    let out = rc.out_dir()?.to_path_buf();
    if let Some(p) = &rc.init_from {
        require_file(p, "checkpoint")?;
    }
    let (train_set, _) = load_split(&rc)?;
    cfg.validate_for(train_set.m(), train_set.height())?;

    fs::create_dir_all(&out).map_err(|e| Failure::io(format!("{}: {e}", out.display())))?;
    let cfg_path = out.join(RUN_CONFIG_FILE);
    fs::write(&cfg_path, rc.to_toml()).map_err(|e| Failure::io(format!("{}: {e}", cfg_path.display())))?;

    let opts = FitOptions {
        out_dir: Some(out.clone()),
    };
    let mut progress = Progress {
        every: a.log_every,
        started: Instant::now(),
    };
    let mut trainer = Trainer::new(cfg, train_set.m(), train_set.height())?;
    if let Some(p) = &rc.init_from {
        let n = seed_generators(p, trainer.generators())?;
        info!("loaded {n} generator tensors from {}", p.display());
    }
    trainer.fit(&train_set, &opts, &mut progress)?;
    println!(
        "trained {} iterations over {} epochs; outputs in {}",
        trainer.iteration(),
        trainer.epoch(),
        out.display()
    );
    Ok(())
}

fn require_file(path: &Path, what: &str) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(Failure::usage(format!("{what} {} does not exist", path.display())))
    }
}

/// Accepts a domain name first, then a 0-based index.
pub fn resolve_domain(names: &[String], spec: &str) -> CliResult<usize> {
    if let Some(i) = names.iter().position(|n| n == spec) {
        return Ok(i);
    }
    match spec.parse::<usize>() {
        Ok(i) if i < names.len() => Ok(i),
        _ => Err(Failure::usage(format!(
            "unknown domain `{spec}` (known: {})",
            names.join(", ")
        ))),
    }
}

fn checkpoint_domain_names(names: &[String], m: usize) -> Vec<String> {
    if names.len() == m {
        names.to_vec()
    } else {
        (0..m).map(|i| i.to_string()).collect()
    }
}

fn translate(a: &TranslateArgs) -> CliResult {
    require_file(&a.checkpoint, "checkpoint")?;
    for input in &a.inputs {
        require_file(input, "input image")?;
    }
    let ckpt = load_generators(&a.checkpoint)?;
    let net = ckpt.network;
    let names = checkpoint_domain_names(&ckpt.domain_names, net.m);
    let targets: Vec<usize> = match &a.target_domain {
        Some(spec) => vec![resolve_domain(&names, spec)?],
        None => (0..net.m).collect(),
    };
    fs::create_dir_all(&a.out).map_err(|e| Failure::io(format!("{}: {e}", a.out.display())))?;
    let g = &ckpt.generators.translator;
    let r = net.resolution;
    let mut total = 0.0;
    let mut count = 0usize;
    for input in &a.inputs {
        let record = load_image_file(input, r)?;
        let x = ImageTensor::from_records(&[&record], r, r, g.dtype())?;
        let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
        for &t in &targets {
            let y = g.translate(&x, &encode_label(t, net.m, r, r)?)?.record(0)?;
            let l1 = y.iter().zip(&record).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / y.len() as f64;
            let path = a.out.join(format!("{stem}_to_{}.png", names[t]));
            save_record(&y, r, r, &path)?;
            println!("{}\tmean_l1 {l1:.6}", path.display());
            total += l1;
            count += 1;
        }
    }
    println!("mean_l1 {:.6}", total / count as f64);
    Ok(())
}

fn evaluate(a: &EvaluateArgs) -> CliResult {
    let mut flags = base_flags(&a.run)?;
    if let Some(path) = &a.checkpoint {
        require_file(path, "checkpoint")?;
        let ckpt = load_generators(path)?;
        if a.run.size.is_some_and(|s| s != ckpt.network.resolution) {
            return Err(Failure::usage(format!(
                "the checkpoint was trained at {r}x{r}, not {}",
                a.run.size.unwrap_or_default(),
                r = ckpt.network.resolution,
            )));
        }
        flags.insert("resolution".into(), toml::Value::Integer(ckpt.network.resolution as i64));
        let rc = resolve_run(&a.run, flags)?;
        if a.run.print_config {
            print!("{}", rc.to_toml());
            return Ok(());
        }
        let out = report_dir(&rc, path);
        let (train_set, hold) = load_evaluation_split(&rc)?;
        check_geometry(&ckpt.network, &ckpt.domain_names, &hold)?;
        let clf = train_eval_classifier(&train_set, &rc.classifier_config())?;
        let report = evaluate_translator(
            &ckpt.generators.translator,
            &clf,
            &hold,
            config_hash(&ckpt.config)?,
        )?;
        return write_report(&report, &out);
    }
    let control = a.control.expect("clap requires a checkpoint or a control");
    let rc = resolve_run(&a.run, flags)?;
    if a.run.print_config {
        print!("{}", rc.to_toml());
        return Ok(());
    }
    let out = rc.out.clone().unwrap_or_else(|| PathBuf::from("."));
    let (train_set, hold) = load_evaluation_split(&rc)?;
    let clf = train_eval_classifier(&train_set, &rc.classifier_config())?;
    let (set, label) = match control {
        Control::Oracle => (paired_targets(&hold)?, "control-oracle"),
        Control::Identity => (identity_translations(&hold), "control-identity"),
    };
    let report = score_translations(&set, &clf, &hold, label.to_string())?;
    write_report(&report, &out)
}

fn report_dir(rc: &RunConfig, checkpoint: &Path) -> PathBuf {
    rc.out
        .clone()
        .or_else(|| checkpoint.parent().map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("."))
}

fn load_evaluation_split(rc: &RunConfig) -> CliResult<(DomainDataset, DomainDataset)> {
    if rc.holdout_per_domain == 0 {
        return Err(Failure::usage("evaluation needs holdout_per_domain >= 1"));
    }
    let (train, hold) = load_split(rc)?;
    Ok((train, hold.expect("non-zero holdout always splits")))
}

fn check_geometry(net: &NetworkConfig, names: &[String], hold: &DomainDataset) -> CliResult {
    if hold.m() != net.m {
        return Err(Failure::usage(format!(
            "the checkpoint knows {} domains, the dataset has {}",
            net.m,
            hold.m()
        )));
    }
    if !names.is_empty() && names != hold.domain_names().as_slice() {
        return Err(Failure::usage(format!(
            "dataset domains {:?} differ from the checkpoint's {names:?}",
            hold.domain_names()
        )));
    }
    Ok(())
}

fn write_report(report: &EvalReport, out: &Path) -> CliResult {
    fs::create_dir_all(out).map_err(|e| Failure::io(format!("{}: {e}", out.display())))?;
    let json = out.join(REPORT_JSON);
    fs::write(&json, report.to_json()?).map_err(|e| Failure::io(format!("{}: {e}", json.display())))?;
    let text = report.to_text();
    let txt = out.join(REPORT_TEXT);
    fs::write(&txt, &text).map_err(|e| Failure::io(format!("{}: {e}", txt.display())))?;
    print!("{text}");
    println!("report written to {}", json.display());
    Ok(())
}

fn capacity(a: &CapacityArgs) -> CliResult {
    let base = match a.scale {
        Scale::Desk => NetworkConfig::desk(a.domains),
        Scale::Full => NetworkConfig::full_scale(a.domains),
    };
    let net = NetworkConfig {
        resolution: a.resolution,
        ..base
    };
    let report = capacity_report(a.domains, &net)?;
    if a.csv {
        print!("{}", report.to_csv());
    } else {
        print!("{}", report.to_text());
    }
    Ok(())
}
