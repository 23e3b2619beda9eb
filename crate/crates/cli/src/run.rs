use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde_json::json;
use vikan::checkpoint;
use vikan::data::{Dataset, Split};
use vikan::gradcheck::{run_suite, TOLERANCE};
use vikan::kan::Variant;
use vikan::train::{evaluate, train, EpochMetrics, TrainConfig, METRICS_HEADER};
use vikan::vit::{AttentionKind, ModelConfig, Pooling};
use vikan::Model32;

use crate::config::ConfigFile;
use crate::exit::{io_failure, CliError, CliResult, FAILED};
use crate::{EvalArgs, GradcheckArgs, ModelFlags, TrainArgs};

pub const DATA_ENV: &str = "VIKAN_DATA";

/// Everything one `train` invocation needs, after merging flags, the
/// config file and defaults.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub variants: Vec<Variant>,
    /// Model template; the variant is filled in per run.
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub lr_for: Vec<(Variant, f64)>,
    pub data: PathBuf,
    pub out: PathBuf,
    pub limit_train: Option<usize>,
    pub limit_test: Option<usize>,
}

impl RunConfig {
    pub fn model_for(&self, v: Variant) -> ModelConfig {
        let mut m = self.model.clone();
        m.ffn.variant = v;
        m
    }

    pub fn train_for(&self, v: Variant) -> TrainConfig {
        let mut t = self.train.clone();
        if let Some(&(_, lr)) = self.lr_for.iter().rev().find(|(w, _)| *w == v) {
            t.adam.lr = lr;
        }
        t
    }
}

pub fn parse_variant(s: &str) -> CliResult<Variant> {
    s.parse().map_err(|e: vikan::Error| CliError::usage(e.to_string()))
}

pub fn parse_variants(s: &str) -> CliResult<Vec<Variant>> {
    if s.eq_ignore_ascii_case("all") {
        Ok(Variant::ALL.to_vec())
    } else {
        Ok(vec![parse_variant(s)?])
    }
}

fn parse_attention(s: &str) -> CliResult<AttentionKind> {
    match s.to_ascii_lowercase().as_str() {
        "naive" => Ok(AttentionKind::Naive),
        "tiled" | "flash" => Ok(AttentionKind::Tiled),
        _ => Err(CliError::usage(format!("attention must be naive or tiled, got `{s}`"))),
    }
}

fn parse_pooling(s: &str) -> CliResult<Pooling> {
    match s.to_ascii_lowercase().as_str() {
        "cls" | "cls_token" => Ok(Pooling::ClsToken),
        "mean" => Ok(Pooling::Mean),
        _ => Err(CliError::usage(format!("pooling must be cls_token or mean, got `{s}`"))),
    }
}

/// Merges model flags over `file` into `base`, returning the variant list.
fn merge_model(flags: ModelFlags, file: &mut ConfigFile, base: &mut ModelConfig) -> CliResult<Vec<Variant>> {
    let variants = match file.pick("variant", flags.variant)? {
        Some(s) => parse_variants(&s)?,
        None => vec![Variant::SineKan],
    };
    if let Some(s) = file.pick::<String>("attention", flags.attention)? {
        base.attention = parse_attention(&s)?;
    }
    if let Some(s) = file.pick::<String>("pooling", flags.pooling)? {
        base.pooling = parse_pooling(&s)?;
    }
    let ffn = &mut base.ffn;
    macro_rules! set {
        ($dst:expr, $key:literal, $flag:expr) => {
            if let Some(v) = file.pick($key, $flag)? {
                $dst = v;
            }
        };
    }
    set!(base.tile, "tile", flags.tile);
    set!(base.seed, "seed", flags.seed);
    set!(ffn.m, "m", flags.m);
    set!(ffn.centers, "centers", flags.centers);
    set!(ffn.knots, "knots", flags.knots);
    set!(ffn.order, "order", flags.order);
    set!(ffn.grid_range.0, "grid_lo", flags.grid_lo);
    set!(ffn.grid_range.1, "grid_hi", flags.grid_hi);
    set!(ffn.hidden, "hidden", flags.hidden);
    set!(ffn.hidden_multiplier, "hidden_multiplier", flags.hidden_multiplier);
    ffn.seed = base.seed;
    for &v in &variants {
        let mut m = base.clone();
        m.ffn.variant = v;
        m.validate()?;
    }
    Ok(variants)
}

fn data_dir(flag: Option<PathBuf>, file: &mut ConfigFile) -> CliResult<PathBuf> {
    file.pick::<PathBuf>("data", flag)?
        .or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from))
        .ok_or_else(|| CliError::usage(format!("no MNIST directory: pass --data or set {DATA_ENV}")))
}

fn parse_lr_for(items: &[String], file: &mut ConfigFile) -> CliResult<Vec<(Variant, f64)>> {
    let mut out = Vec::new();
    for v in Variant::ALL {
        if let Some(lr) = file.pick::<f64>(&format!("lr_{v}"), None)? {
            out.push((v, lr));
        }
    }
    for item in items {
        let (name, lr) = item
            .split_once('=')
            .ok_or_else(|| CliError::usage(format!("--lr-for expects VARIANT=LR, got `{item}`")))?;
        let lr = lr.parse().map_err(|_| CliError::usage(format!("bad learning rate in `{item}`")))?;
        out.push((parse_variant(name)?, lr));
    }
    Ok(out)
}

impl RunConfig {
    pub fn from_args(args: TrainArgs) -> CliResult<Self> {
        let mut file = ConfigFile::load(args.config.as_deref())?;
        let mut model = ModelConfig::mnist(Variant::SineKan);
        let variants = merge_model(args.model, &mut file, &mut model)?;
        let mut train = TrainConfig { seed: model.seed, ..TrainConfig::default() };
        if let Some(v) = file.pick("epochs", args.epochs)? {
            train.epochs = v;
        }
        if let Some(v) = file.pick("lr", args.lr)? {
            train.adam.lr = v;
        }
        if let Some(v) = file.pick("batch", args.batch)? {
            train.batch = v;
        }
        if let Some(v) = file.pick("eval_batch", args.eval_batch)? {
            train.eval_batch = v;
        }
        let lr_for = parse_lr_for(&args.lr_for, &mut file)?;
        let data = data_dir(args.data, &mut file)?;
        let out = file.pick("out", args.out)?.unwrap_or_else(|| PathBuf::from("runs"));
        let limit_train = file.pick("limit_train", args.limit_train)?;
        let limit_test = file.pick("limit_test", args.limit_test)?;
        file.finish()?;
        if train.epochs == 0 || train.batch == 0 || train.eval_batch == 0 {
            return Err(CliError::usage("epochs, batch and eval_batch must be positive"));
        }
        let lrs = std::iter::once(train.adam.lr).chain(lr_for.iter().map(|&(_, lr)| lr));
        if lrs.into_iter().any(|lr| !(lr.is_finite() && lr > 0.0)) {
            return Err(CliError::usage("learning rates must be positive"));
        }
        if limit_train == Some(0) || limit_test == Some(0) {
            return Err(CliError::usage("limits must be positive"));
        }
        Ok(Self { variants, model, train, lr_for, data, out, limit_train, limit_test })
    }
}

pub fn load_split(dir: &Path, split: Split, limit: Option<usize>) -> CliResult<Dataset> {
    let ds = Dataset::load(dir, split)?;
    Ok(match limit {
        Some(n) => ds.truncated(n),
        None => ds,
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("json values serialize");
    std::fs::write(path, text + "\n").map_err(|e| io_failure(path, e))
}

/// Paths written for one variant inside the output directory.
pub struct RunFiles {
    pub metrics: PathBuf,
    pub checkpoint: PathBuf,
    pub summary: PathBuf,
}

impl RunFiles {
    pub fn new(out: &Path, v: Variant) -> Self {
        Self {
            metrics: out.join(format!("{v}.csv")),
            checkpoint: out.join(format!("{v}.ckpt")),
            summary: out.join(format!("{v}.json")),
        }
    }
}

fn train_one(run: &RunConfig, v: Variant, train_ds: &Dataset, test_ds: &Dataset) -> CliResult<()> {
    let files = RunFiles::new(&run.out, v);
    let model_cfg = run.model_for(v);
    let train_cfg = run.train_for(v);
    let model = Model32::new(&model_cfg)?;
    let file = File::create(&files.metrics).map_err(|e| io_failure(&files.metrics, e))?;
    let mut csv = BufWriter::new(file);
    writeln!(csv, "{METRICS_HEADER}").map_err(|e| io_failure(&files.metrics, e))?;
    let epochs = train_cfg.epochs;
    let mut sink = |row: &EpochMetrics| -> vikan::Result<()> {
        writeln!(csv, "{}", row.csv_row())?;
        csv.flush()?;
        eprintln!(
            "{v} epoch {}/{epochs}: train_loss {:.4} train_acc {:.4} test_acc {:.4} ({:.1}s)",
            row.epoch, row.train_loss, row.train_acc, row.test_acc, row.seconds
        );
        Ok(())
    };
    let history = train(&model, train_ds, test_ds, &train_cfg, &mut sink)?;
    csv.flush().map_err(|e| io_failure(&files.metrics, e))?;
    checkpoint::save(&model, &files.checkpoint)?;
    let last = history.last().expect("epochs >= 1");
    let summary = json!({
        "variant": v.name(),
        "params": model.count_params(),
        "epochs": history.len(),
        "test_acc": last.test_acc,
        "macro_f1": last.macro_f1,
        "roc_auc_ovr": last.roc_auc_ovr,
        "train_loss": last.train_loss,
        "train_acc": last.train_acc,
        "train_samples": train_ds.len(),
        "test_samples": test_ds.len(),
        "metrics": files.metrics.file_name().and_then(|n| n.to_str()),
        "checkpoint": files.checkpoint.file_name().and_then(|n| n.to_str()),
        "model": model_cfg,
        "train": train_cfg,
    });
    write_json(&files.summary, &summary)?;
    println!("{}", serde_json::to_string(&summary).expect("json values serialize"));
    Ok(())
}

pub fn cmd_train(args: TrainArgs) -> CliResult<()> {
    let run = RunConfig::from_args(args)?;
    let train_ds = load_split(&run.data, Split::Train, run.limit_train)?;
    let test_ds = load_split(&run.data, Split::Test, run.limit_test)?;
    std::fs::create_dir_all(&run.out).map_err(|e| io_failure(&run.out, e))?;
    for &v in &run.variants {
        train_one(&run, v, &train_ds, &test_ds)?;
    }
    Ok(())
}

pub fn cmd_eval(args: EvalArgs) -> CliResult<()> {
    let csv = match args.format.as_str() {
        "json" => false,
        "csv" => true,
        f => return Err(CliError::usage(format!("--format must be json or csv, got `{f}`"))),
    };
    if args.batch == 0 || args.limit_test == Some(0) {
        return Err(CliError::usage("batch and limit must be positive"));
    }
    let expect = args.variant.as_deref().map(parse_variant).transpose()?;
    let mut file = ConfigFile::default();
    let data = data_dir(args.data, &mut file)?;
    let model: Model32 = checkpoint::load(&args.checkpoint, expect)?;
    let test_ds = load_split(&data, Split::Test, args.limit_test)?;
    let m = evaluate(&model, &test_ds, args.batch)?;
    let v = model.config.ffn.variant;
    if csv {
        println!("{v},{:.8},{:.8},{:.8}", m.accuracy, m.macro_f1, m.roc_auc_ovr);
    } else {
        let out = json!({
            "variant": v.name(),
            "acc": m.accuracy,
            "macro_f1": m.macro_f1,
            "roc_auc_ovr": m.roc_auc_ovr,
            "loss": m.loss,
            "samples": test_ds.len(),
        });
        println!("{out}");
    }
    Ok(())
}

pub fn cmd_gradcheck(args: GradcheckArgs) -> CliResult<()> {
    let results = run_suite(args.only.as_deref(), args.inject_fault)?;
    if results.is_empty() {
        return Err(CliError::usage(format!(
            "--only `{}` matches no component",
            args.only.unwrap_or_default()
        )));
    }
    println!("component,max_rel_err,status");
    for r in &results {
        println!("{},{:.3e},{}", r.name, r.max_rel_err, if r.passes() { "pass" } else { "FAIL" });
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passes()).map(|r| r.name.as_str()).collect();
    if failed.is_empty() {
        eprintln!("{} components pass (tolerance {TOLERANCE:e})", results.len());
        Ok(())
    } else {
        Err(CliError::new(
            FAILED,
            format!("{} of {} components exceed {TOLERANCE:e}: {}", failed.len(), results.len(), failed.join(", ")),
        ))
    }
}
