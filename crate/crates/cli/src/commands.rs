use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

use hateid_core::{
    class_stats, load_checkpoint, load_tsv, load_unlabeled_tsv, run_grid, save_checkpoint,
    stratified_split, train, write_tsv, Dataset, EncoderDescriptor, Family, FeatureMode, GridAxis,
    GridOptions, GridSpace, HyperParams, PreprocessConfig, Preprocessor, ResultsTable,
    SplitManifest, SplitSpec, TaskMode, TrainConfig, TrainRequest, VariantName,
};

use crate::config::{pick, FileConfig};
use crate::{
    Cli, Command, DataFlags, EncoderFlags, EvaluateArgs, GridArgs, IngestArgs, OptimFlags,
    PipelineFlags, PredictArgs, PreprocessArgs, PreprocessedChoice, ReportArgs, SplitArgs,
    SplitFlags, TrainArgs,
};

const DEFAULT_SEED: u64 = 42;
const DEFAULT_MAX_TOKENS: usize = 128;

/// A problem with the invocation rather than with running it.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

pub fn run(cli: &Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => FileConfig::load(p).map_err(|e| usage(format!("{e:#}")))?,
        None => FileConfig::default(),
    };
    let ctx = Ctx {
        file,
        config_path: cli.config.clone(),
    };
    match &cli.command {
        Command::Ingest(a) => ingest(&ctx, a),
        Command::Preprocess(a) => preprocess(&ctx, a),
        Command::Split(a) => split(&ctx, a),
        Command::Train(a) => train_cmd(&ctx, a),
        Command::Gridsearch(a) => gridsearch(&ctx, a),
        Command::Evaluate(a) => evaluate(&ctx, a),
        Command::Predict(a) => predict(&ctx, a),
        Command::Report(a) => report(&ctx, a),
    }
}

struct Ctx {
    file: FileConfig,
    config_path: Option<PathBuf>,
}

impl Ctx {
    fn task(&self, flag: &Option<String>) -> Result<TaskMode> {
        let raw = pick(flag.clone(), self.file.task.clone(), "1a".to_string());
        raw.parse().map_err(|e| usage(format!("{e}")))
    }

    fn family(&self, flag: &Option<String>) -> Result<Family> {
        let raw = flag
            .clone()
            .or_else(|| self.file.family.clone())
            .ok_or_else(|| usage("--family is required"))?;
        raw.parse().map_err(|e| usage(format!("{e}")))
    }

    fn seed(&self, flag: Option<u64>) -> u64 {
        pick(flag, self.file.seed, DEFAULT_SEED)
    }

    fn pipeline(&self, f: &PipelineFlags) -> PreprocessConfig {
        let on = |off_flag: bool, file: Option<bool>| {
            if off_flag {
                false
            } else {
                file.unwrap_or(true)
            }
        };
        PreprocessConfig {
            replace_mentions: on(f.no_mentions, self.file.mentions),
            replace_links: on(f.no_links, self.file.links),
            replace_emojis: on(f.no_emojis, self.file.emojis),
            collapse_whitespace: on(f.no_whitespace, self.file.whitespace),
            lowercase: f.lowercase || self.file.lowercase.unwrap_or(false),
            ..PreprocessConfig::default()
        }
    }

    fn split_spec(&self, f: &SplitFlags) -> Result<SplitSpec> {
        let ratios = pick(
            f.ratios.clone(),
            self.file.ratios.clone(),
            vec![0.7, 0.1, 0.2],
        );
        let ratios: [f64; 3] = ratios
            .try_into()
            .map_err(|_| usage("--ratios needs exactly three values"))?;
        let stratified = !f.no_stratify && self.file.stratified.unwrap_or(true);
        SplitSpec::new(ratios, self.seed(f.seed), stratified).map_err(|e| usage(e.to_string()))
    }

    fn train_config(&self, family: Family, f: &OptimFlags, seed: u64) -> Result<TrainConfig> {
        let base = TrainConfig::for_family(family);
        let cfg = TrainConfig {
            max_epochs: pick(f.epochs, self.file.epochs, base.max_epochs),
            patience: pick(f.patience, self.file.patience, base.patience),
            batch_size: pick(f.batch_size, self.file.batch_size, base.batch_size),
            lr: pick(f.lr, self.file.lr, base.lr),
            seed,
            ..base
        };
        cfg.validate().map_err(|e| usage(e.to_string()))?;
        Ok(cfg)
    }

    fn encoder_spec(
        &self,
        f: &EncoderFlags,
    ) -> (Option<String>, usize, Option<PathBuf>, FeatureMode) {
        let mode = if f.pooled || self.file.pooled.unwrap_or(false) {
            FeatureMode::Pooled
        } else {
            FeatureMode::Sequence
        };
        (
            f.encoder.clone().or_else(|| self.file.encoder.clone()),
            pick(f.max_tokens, self.file.max_tokens, DEFAULT_MAX_TOKENS),
            f.feature_cache
                .clone()
                .or_else(|| self.file.feature_cache.clone()),
            mode,
        )
    }

    /// Writes `run.json`: the command, resolved settings and seed.
    fn record(&self, path: &Path, command: &str, seed: Option<u64>, resolved: Value) -> Result<()> {
        let doc = json!({
            "command": command,
            "version": env!("CARGO_PKG_VERSION"),
            "argv": std::env::args().collect::<Vec<_>>(),
            "config_file": self.config_path,
            "seed": seed,
            "resolved": resolved,
        });
        log::info!("resolved {command} settings: {}", doc["resolved"]);
        write_json(path, &doc)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let body = serde_json::to_string_pretty(value)?;
    fs::write(path, body + "\n").with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn require_file(p: &Path) -> Result<()> {
    if !p.is_file() {
        bail!(usage(format!("{} does not exist", p.display())));
    }
    Ok(())
}

fn ingest(ctx: &Ctx, a: &IngestArgs) -> Result<()> {
    require_file(&a.input)?;
    let mode = ctx.task(&a.task)?;
    let ds = load_tsv(&a.input, mode.task())?;
    let stats = class_stats(&ds)?;
    create_dir(&a.out)?;
    write_tsv(&ds, &a.out.join("dataset.tsv"))?;
    write_json(&a.out.join("stats.json"), &stats)?;
    ctx.record(
        &a.out.join("run.json"),
        "ingest",
        None,
        json!({ "in": a.input, "task": mode.task().to_string() }),
    )?;
    println!("{} items", stats.total);
    for c in &stats.counts {
        println!("  {:<5} {}", c.label, c.count);
    }
    Ok(())
}

fn preprocess(ctx: &Ctx, a: &PreprocessArgs) -> Result<()> {
    require_file(&a.input)?;
    let cfg = ctx.pipeline(&a.pipeline);
    let pre = Preprocessor::new(cfg.clone())?;
    let ds = load_unlabeled_tsv(&a.input, hateid_core::Task::Task1b)?;
    let clean = pre.apply_dataset(&ds);
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_tsv(&clean, &a.out)?;
    let mut sidecar = a.out.clone().into_os_string();
    sidecar.push(".run.json");
    ctx.record(
        Path::new(&sidecar),
        "preprocess",
        None,
        json!({ "in": a.input, "out": a.out, "preprocess": cfg }),
    )?;
    println!("{} rows written to {}", clean.len(), a.out.display());
    Ok(())
}

fn split(ctx: &Ctx, a: &SplitArgs) -> Result<()> {
    require_file(&a.input)?;
    let mode = ctx.task(&a.task)?;
    let spec = ctx.split_spec(&a.split)?;
    let ds = load_tsv(&a.input, mode.task())?;
    let parts = stratified_split(&ds, &spec)?;
    create_dir(&a.out)?;
    for (name, part) in ["train", "val", "test"].iter().zip(&parts) {
        write_tsv(part, &a.out.join(format!("{name}.tsv")))?;
    }
    SplitManifest::from_splits(&spec, &parts).save(&a.out.join("split.json"))?;
    ctx.record(
        &a.out.join("run.json"),
        "split",
        Some(spec.seed),
        json!({ "in": a.input, "task": mode.task().to_string(), "split": spec }),
    )?;
    println!(
        "train {} / val {} / test {}",
        parts[0].len(),
        parts[1].len(),
        parts[2].len()
    );
    Ok(())
}

/// Train, validation and (possibly empty) test sets.
fn load_splits(
    ctx: &Ctx,
    d: &DataFlags,
    s: &SplitFlags,
    mode: TaskMode,
    out: &Path,
) -> Result<([Dataset; 3], Value)> {
    let task = mode.task();
    if let Some(data) = &d.data {
        require_file(data)?;
        let spec = ctx.split_spec(s)?;
        let parts = stratified_split(&load_tsv(data, task)?, &spec)?;
        SplitManifest::from_splits(&spec, &parts).save(&out.join("split.json"))?;
        return Ok((parts, json!({ "data": data, "split": spec })));
    }
    let (Some(tr), Some(va)) = (&d.train, &d.val) else {
        bail!(usage("give --data, or --train and --val"));
    };
    for p in [Some(tr), Some(va), d.test.as_ref()].into_iter().flatten() {
        require_file(p)?;
    }
    let test = match &d.test {
        Some(p) => load_tsv(p, task)?,
        None => Dataset::new(Vec::new(), task, hateid_core::Provenance::new("none"))?,
    };
    Ok((
        [load_tsv(tr, task)?, load_tsv(va, task)?, test],
        json!({ "train": tr, "val": va, "test": d.test }),
    ))
}

fn parse_variant(raw: &str) -> Result<VariantName> {
    raw.parse().map_err(|e| usage(format!("{e}")))
}

fn train_cmd(ctx: &Ctx, a: &TrainArgs) -> Result<()> {
    let family = ctx.family(&a.family)?;
    let mode = ctx.task(&a.task)?;
    let seed = ctx.seed(a.split.seed);
    let cfg = ctx.train_config(family, &a.optim, seed)?;
    let f = &ctx.file;
    let dropout_default = if family == Family::BertFinetune {
        0.1
    } else {
        0.25
    };
    let (enc_spec, max_tokens, feature_cache, feature_mode) = ctx.encoder_spec(&a.encoder);
    let descriptor = match (&enc_spec, family.uses_encoder()) {
        (Some(s), true) => {
            Some(EncoderDescriptor::parse(s, max_tokens).map_err(|e| usage(e.to_string()))?)
        }
        (None, true) => Some(EncoderDescriptor::parse("base", max_tokens)?),
        (_, false) => None,
    };
    let mut hp = HyperParams {
        family,
        embedding_dim: pick(
            a.embedding_dim,
            f.embedding_dim,
            if family == Family::CharLstm { 50 } else { 100 },
        ),
        hidden_dim: pick(
            a.hidden_dim,
            f.hidden_dim,
            if family == Family::CharLstm { 16 } else { 128 },
        ),
        dropout: pick(a.dropout, f.dropout, dropout_default),
        encoder_variant: descriptor.as_ref().and_then(EncoderDescriptor::variant),
        pretrained_embeddings: false,
        num_classes: mode.num_outputs(),
        layers: pick(a.layers, f.layers, 1),
    };
    if family.uses_encoder() {
        hp.embedding_dim = 0;
    }
    if family == Family::BertFinetune {
        hp.hidden_dim = 0;
    }
    let embeddings = a.embeddings.clone().or_else(|| f.embeddings.clone());
    hp.pretrained_embeddings = embeddings.is_some();
    hp.validate(!a.unconstrained)
        .map_err(|e| usage(e.to_string()))?;

    create_dir(&a.out)?;
    let (splits, data_doc) = load_splits(ctx, &a.data, &a.split, mode, &a.out)?;
    let mut req = TrainRequest::new(hp.clone(), mode);
    req.train = cfg.clone();
    req.grid_constrained = !a.unconstrained;
    req.preprocess = if a.no_preprocess {
        PreprocessConfig::disabled()
    } else {
        ctx.pipeline(&a.pipeline)
    };
    req.embeddings = embeddings;
    req.max_len = a.max_len.or(f.max_len);
    req.min_freq = a.min_freq.or(f.min_freq);
    req.feature_mode = feature_mode;
    req.feature_cache = feature_cache.clone();
    match family {
        Family::BertFeatureGru => {
            req.encoder = Some(descriptor.clone().expect("encoder family").open()?)
        }
        Family::BertFinetune => req.finetune_encoder = descriptor.clone(),
        _ => {}
    }
    ctx.record(
        &a.out.join("run.json"),
        "train",
        Some(seed),
        json!({
            "task": mode,
            "hyperparams": hp,
            "train": cfg,
            "preprocess": req.preprocess,
            "encoder": descriptor,
            "feature_mode": feature_mode,
            "feature_cache": feature_cache,
            "max_len": req.max_len,
            "min_freq": req.min_freq,
            "data": data_doc,
        }),
    )?;

    let (tm, history) = train(&req, &splits[0], &splits[1])?;
    save_checkpoint(&tm, &a.out)?;
    history.save(&a.out)?;
    println!(
        "best epoch {} of {} (val macro-F1 {:.4})",
        history.best_epoch,
        history.epochs.len(),
        history.best().map(|e| e.val_macro_f1).unwrap_or(0.0)
    );
    if !splits[2].is_empty() {
        let report = tm.evaluate_with_cache(&splits[2], feature_cache.as_deref())?;
        write_json(&a.out.join("test_report.json"), &report)?;
        println!("test macro-F1 {:.4}", report.macro_f1);
    }
    println!("checkpoint written to {}", a.out.display());
    Ok(())
}

fn grid_space(ctx: &Ctx, a: &GridArgs, family: Family) -> Result<GridSpace> {
    let path = a.grid.clone().or_else(|| ctx.file.grid.clone());
    let mut space = match path {
        Some(p) => {
            let s = GridSpace::load(&p).map_err(|e| usage(format!("{}: {e}", p.display())))?;
            if s.family != family {
                bail!(usage(format!(
                    "grid file is for {}, not {family}",
                    s.family
                )));
            }
            s
        }
        None => GridSpace::preset(family),
    };
    if !a.variants.is_empty() {
        let vs = a
            .variants
            .iter()
            .map(|v| parse_variant(v))
            .collect::<Result<Vec<_>>>()?;
        match space
            .axes
            .iter_mut()
            .find(|x| matches!(x, GridAxis::EncoderVariant(_)))
        {
            Some(axis) => *axis = GridAxis::EncoderVariant(vs),
            None => bail!(usage("--variant only applies to the encoder families")),
        }
    }
    if let Some(p) = a.preprocessed {
        space.preprocessed = match p {
            PreprocessedChoice::Both => vec![true, false],
            PreprocessedChoice::Yes => vec![true],
            PreprocessedChoice::No => vec![false],
        };
    }
    space.validate().map_err(|e| usage(e.to_string()))?;
    Ok(space)
}

fn space_variants(space: &GridSpace) -> Vec<VariantName> {
    space
        .axes
        .iter()
        .find_map(|a| match a {
            GridAxis::EncoderVariant(v) => Some(v.clone()),
            _ => None,
        })
        .unwrap_or_else(|| vec![VariantName::Base])
}

fn gridsearch(ctx: &Ctx, a: &GridArgs) -> Result<()> {
    let family = ctx.family(&a.family)?;
    let mode = ctx.task(&a.task)?;
    let seed = ctx.seed(a.split.seed);
    let cfg = ctx.train_config(family, &a.optim, seed)?;
    let space = grid_space(ctx, a, family)?;
    let (enc_spec, max_tokens, feature_cache, feature_mode) = ctx.encoder_spec(&a.encoder);

    let mut opts = GridOptions::new(mode);
    opts.preprocess = ctx.pipeline(&a.pipeline);
    opts.train = Some(cfg.clone());
    opts.feature_mode = feature_mode;
    opts.feature_cache = feature_cache.clone();
    opts.embeddings = a.embeddings.clone().or_else(|| ctx.file.embeddings.clone());
    opts.jobs = pick(a.jobs, ctx.file.jobs, 1);
    opts.keep_checkpoints = !a.no_checkpoints;
    opts.max_new_rows = a.max_runs;

    let given = match &enc_spec {
        Some(s) => Some(EncoderDescriptor::parse(s, max_tokens).map_err(|e| usage(e.to_string()))?),
        None => None,
    };
    let mut descriptors = BTreeMap::new();
    if family.uses_encoder() {
        for v in space_variants(&space) {
            let d = match &given {
                // a stub stands in for every variant
                Some(d @ EncoderDescriptor::Stub { .. }) => d.clone(),
                Some(d) if d.variant() == Some(v) => d.clone(),
                _ => EncoderDescriptor::Bert {
                    variant: v,
                    dir: None,
                    max_tokens,
                },
            };
            descriptors.insert(v, d);
        }
    }
    for (v, d) in &descriptors {
        match family {
            Family::BertFeatureGru => match d.open() {
                Ok(enc) => {
                    opts.encoders.insert(*v, enc);
                }
                // runs for this variant are recorded as failed
                Err(e) => log::warn!("{v} encoder unavailable: {e}"),
            },
            Family::BertFinetune => {
                opts.finetune_encoders.insert(*v, d.clone());
            }
            _ => {}
        }
    }

    create_dir(&a.out)?;
    let (splits, data_doc) = load_splits(ctx, &a.data, &a.split, mode, &a.out)?;
    if splits[2].is_empty() {
        bail!(usage("grid search needs a test split (--data, or --test)"));
    }
    ctx.record(
        &a.out.join("run.json"),
        "gridsearch",
        Some(seed),
        json!({
            "task": mode,
            "grid": space,
            "train": cfg,
            "preprocess": opts.preprocess,
            "encoders": descriptors,
            "feature_mode": feature_mode,
            "feature_cache": feature_cache,
            "jobs": opts.jobs,
            "data": data_doc,
        }),
    )?;
    let table = run_grid(&space, &splits, &opts, &a.out)?;
    if a.reference_rows {
        fs::write(
            a.out.join("results_reference.md"),
            table.reference_rows().to_markdown(true),
        )?;
    }
    let expected = space.size() * space.preprocessed.len();
    let failed = table
        .rows
        .iter()
        .filter(|r| r.status == hateid_core::RunStatus::Failed)
        .count();
    println!(
        "{} of {expected} rows complete ({failed} failed); results in {}",
        table.rows.len(),
        a.out.display()
    );
    if let Some(best) = table.best(family) {
        println!(
            "best: {} (test macro-F1 {:.4})",
            best.key,
            best.test_f1.unwrap_or(0.0)
        );
    }
    Ok(())
}

fn evaluate(ctx: &Ctx, a: &EvaluateArgs) -> Result<()> {
    require_file(&a.data)?;
    let tm = load_checkpoint(&a.checkpoint)?;
    let ds = load_unlabeled_tsv(&a.data, tm.task.task())?;
    let report = tm.evaluate_with_cache(&ds, a.feature_cache.as_deref())?;
    create_dir(&a.out)?;
    write_json(&a.out.join("report.json"), &report)?;
    fs::write(a.out.join("report.txt"), format!("{report}\n"))?;
    fs::write(
        a.out.join("confusion.csv"),
        report.confusion.to_csv(tm.task.class_names()),
    )?;
    ctx.record(
        &a.out.join("run.json"),
        "evaluate",
        Some(tm.seed),
        json!({ "checkpoint": a.checkpoint, "data": a.data, "task": tm.task, "family": tm.family() }),
    )?;
    println!("{report}");
    Ok(())
}

fn predict(ctx: &Ctx, a: &PredictArgs) -> Result<()> {
    require_file(&a.input)?;
    let tm = load_checkpoint(&a.checkpoint)?;
    let gate = match &a.gate {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    let ds = load_unlabeled_tsv(&a.input, tm.task.task())?;
    let texts = ds.texts();
    let labels = tm.predict_labels(&texts, gate.as_ref())?;
    create_dir(&a.out)?;
    let path = a.out.join("predictions.csv");
    let mut w =
        csv::Writer::from_path(&path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record(["id", "label"])?;
    for (item, label) in ds.items.iter().zip(&labels) {
        w.write_record([item.id.as_str(), label])?;
    }
    w.flush()?;
    ctx.record(
        &a.out.join("run.json"),
        "predict",
        Some(tm.seed),
        json!({ "checkpoint": a.checkpoint, "gate": a.gate, "in": a.input, "task": tm.task, "rows": labels.len() }),
    )?;
    println!("{} predictions written to {}", labels.len(), path.display());
    Ok(())
}

fn report(ctx: &Ctx, a: &ReportArgs) -> Result<()> {
    if !a.input.exists() {
        bail!(usage(format!("{} does not exist", a.input.display())));
    }
    let mut table = ResultsTable::load(&a.input)?;
    if a.reference_rows {
        table = table.reference_rows();
    }
    let md = table.to_markdown(a.reference_rows);
    match &a.out {
        Some(out) => {
            fs::write(out, &md).with_context(|| format!("writing {}", out.display()))?;
            let mut sidecar = out.clone().into_os_string();
            sidecar.push(".run.json");
            ctx.record(
                Path::new(&sidecar),
                "report",
                None,
                json!({ "in": a.input, "reference_rows": a.reference_rows }),
            )?;
        }
        None => print!("{md}"),
    }
    Ok(())
}
