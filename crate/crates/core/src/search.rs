//! Exhaustive hyperparameter grids, a resumable grid runner and result tables.
//!
//! Completed runs are appended, one JSON object per line, to `rows.jsonl` in
//! the output directory. A rerun reads that log, keeps every complete line
//! verbatim and trains only the missing points; a truncated last line (a run
//! killed mid-write) is dropped.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::labels::TaskMode;
use crate::models::{
    Family, HyperParams, CHAR_EMBEDDING_GRID, CHAR_HIDDEN_GRID, DROPOUT_GRID, FEATURE_HIDDEN_GRID,
    WORD_EMBEDDING_GRID, WORD_HIDDEN_GRID,
};
use crate::preprocess::PreprocessConfig;
use crate::pretrained::{Encoder, EncoderDescriptor, FeatureMode, VariantName};
use crate::train::{save_checkpoint, train, TrainConfig, TrainRequest};

pub const ROW_LOG: &str = "rows.jsonl";

/// One axis of a grid, values in the order they are enumerated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "axis", content = "values")]
pub enum GridAxis {
    EmbeddingDim(Vec<usize>),
    HiddenDim(Vec<usize>),
    Dropout(Vec<f64>),
    EncoderVariant(Vec<VariantName>),
}

impl GridAxis {
    pub fn name(&self) -> &'static str {
        match self {
            GridAxis::EmbeddingDim(_) => "embedding_dim",
            GridAxis::HiddenDim(_) => "hidden_dim",
            GridAxis::Dropout(_) => "dropout",
            GridAxis::EncoderVariant(_) => "encoder_variant",
        }
    }

    pub fn len(&self) -> usize {
        match self {
            GridAxis::EmbeddingDim(v) | GridAxis::HiddenDim(v) => v.len(),
            GridAxis::Dropout(v) => v.len(),
            GridAxis::EncoderVariant(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn apply(&self, i: usize, hp: &mut HyperParams) {
        match self {
            GridAxis::EmbeddingDim(v) => hp.embedding_dim = v[i],
            GridAxis::HiddenDim(v) => hp.hidden_dim = v[i],
            GridAxis::Dropout(v) => hp.dropout = v[i],
            GridAxis::EncoderVariant(v) => hp.encoder_variant = Some(v[i]),
        }
    }
}

fn default_preprocessed() -> Vec<bool> {
    vec![true, false]
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpace {
    pub family: Family,
    pub axes: Vec<GridAxis>,
    #[serde(default = "default_preprocessed")]
    pub preprocessed: Vec<bool>,
    /// Reject points outside the published value lists.
    #[serde(default = "default_true")]
    pub grid_constrained: bool,
}

impl GridSpace {
    pub fn char_lstm() -> Self {
        GridSpace {
            family: Family::CharLstm,
            axes: vec![
                GridAxis::EmbeddingDim(CHAR_EMBEDDING_GRID.to_vec()),
                GridAxis::HiddenDim(CHAR_HIDDEN_GRID.to_vec()),
                GridAxis::Dropout(DROPOUT_GRID.to_vec()),
            ],
            preprocessed: default_preprocessed(),
            grid_constrained: true,
        }
    }

    pub fn word_lstm() -> Self {
        GridSpace {
            family: Family::WordLstm,
            axes: vec![
                GridAxis::EmbeddingDim(WORD_EMBEDDING_GRID.to_vec()),
                GridAxis::HiddenDim(WORD_HIDDEN_GRID.to_vec()),
                GridAxis::Dropout(DROPOUT_GRID.to_vec()),
            ],
            preprocessed: default_preprocessed(),
            grid_constrained: true,
        }
    }

    /// The GRU grid for each listed encoder variant.
    pub fn feature_gru(variants: &[VariantName]) -> Self {
        GridSpace {
            family: Family::BertFeatureGru,
            axes: vec![
                GridAxis::EncoderVariant(variants.to_vec()),
                GridAxis::HiddenDim(FEATURE_HIDDEN_GRID.to_vec()),
                GridAxis::Dropout(DROPOUT_GRID.to_vec()),
            ],
            preprocessed: default_preprocessed(),
            grid_constrained: true,
        }
    }

    pub fn finetune(variants: &[VariantName]) -> Self {
        GridSpace {
            family: Family::BertFinetune,
            axes: vec![GridAxis::EncoderVariant(variants.to_vec())],
            preprocessed: default_preprocessed(),
            grid_constrained: true,
        }
    }

    pub fn preset(family: Family) -> Self {
        match family {
            Family::CharLstm => Self::char_lstm(),
            Family::WordLstm => Self::word_lstm(),
            Family::BertFeatureGru => Self::feature_gru(&[VariantName::Base, VariantName::Large]),
            Family::BertFinetune => Self::finetune(&[VariantName::Base]),
        }
    }

    pub fn with_preprocessed(mut self, flags: &[bool]) -> Self {
        self.preprocessed = flags.to_vec();
        self
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.axes.is_empty() && self.family != Family::BertFinetune {
            return Err(Error::InvalidConfig(format!(
                "grid for {} has no axes",
                self.family
            )));
        }
        if let Some(a) = self.axes.iter().find(|a| a.is_empty()) {
            return Err(Error::InvalidConfig(format!(
                "grid axis {} is empty",
                a.name()
            )));
        }
        let mut seen = HashSet::new();
        if let Some(a) = self.axes.iter().find(|a| !seen.insert(a.name())) {
            return Err(Error::InvalidConfig(format!(
                "grid axis {} is listed twice",
                a.name()
            )));
        }
        if self.preprocessed.is_empty() {
            return Err(Error::InvalidConfig(
                "the preprocessed list is empty".into(),
            ));
        }
        Ok(())
    }

    /// Number of grid points, not counting the preprocessing flag.
    pub fn size(&self) -> usize {
        self.axes.iter().map(GridAxis::len).product()
    }
}

fn base_hyperparams(family: Family) -> HyperParams {
    match family {
        Family::CharLstm => {
            HyperParams::char_lstm(CHAR_EMBEDDING_GRID[0], CHAR_HIDDEN_GRID[0], DROPOUT_GRID[0])
        }
        Family::WordLstm => {
            HyperParams::word_lstm(WORD_EMBEDDING_GRID[0], WORD_HIDDEN_GRID[0], DROPOUT_GRID[0])
        }
        Family::BertFeatureGru => HyperParams::feature_gru(
            Some(VariantName::Base),
            FEATURE_HIDDEN_GRID[0],
            DROPOUT_GRID[0],
        ),
        Family::BertFinetune => HyperParams::finetune(VariantName::Base),
    }
}

/// Cartesian product of the axes, the first axis varying slowest.
pub fn enumerate_grid(space: &GridSpace) -> Result<Vec<HyperParams>> {
    space.validate()?;
    let total = space.size();
    let mut out = Vec::with_capacity(total);
    for flat in 0..total {
        let mut hp = base_hyperparams(space.family);
        let mut rest = flat;
        for (k, axis) in space.axes.iter().enumerate().rev() {
            let i = rest % axis.len();
            rest /= axis.len();
            space.axes[k].apply(i, &mut hp);
        }
        hp.validate(space.grid_constrained)?;
        out.push(hp);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

/// Outcome of one (grid point, preprocessing flag) run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub key: String,
    /// Position of the point in the enumerated grid.
    pub index: usize,
    pub family: Family,
    pub preprocessed: bool,
    pub hyperparams: HyperParams,
    pub status: RunStatus,
    pub test_f1: Option<f64>,
    pub val_f1: Option<f64>,
    pub test_weighted_f1: Option<f64>,
    pub params: Option<usize>,
    pub best_epoch: Option<usize>,
    pub seed: u64,
    pub checkpoint: Option<String>,
    pub error: Option<String>,
    #[serde(default)]
    pub best: bool,
}

/// Stable identifier of a run, also its checkpoint directory name.
pub fn row_key(hp: &HyperParams, preprocessed: bool) -> String {
    let mut k = format!(
        "{}-{}",
        hp.family.as_str(),
        if preprocessed { "pre" } else { "raw" }
    );
    if let Some(v) = hp.encoder_variant {
        let _ = write!(k, "-{v}");
    }
    match hp.family {
        Family::CharLstm | Family::WordLstm => {
            let _ = write!(
                k,
                "-e{}-h{}-p{}",
                hp.embedding_dim, hp.hidden_dim, hp.dropout
            );
        }
        Family::BertFeatureGru => {
            let _ = write!(k, "-h{}-p{}", hp.hidden_dim, hp.dropout);
        }
        Family::BertFinetune => {}
    }
    k
}

/// Shared inputs of every run in a grid.
#[derive(Clone)]
pub struct GridOptions {
    pub task: TaskMode,
    /// Pipeline used for the preprocessed runs; raw runs disable every step.
    pub preprocess: PreprocessConfig,
    pub train: Option<TrainConfig>,
    /// Frozen encoder per variant for the feature family.
    pub encoders: BTreeMap<VariantName, Arc<dyn Encoder>>,
    pub feature_mode: FeatureMode,
    pub feature_cache: Option<PathBuf>,
    /// Encoder to tune per variant for the fine-tune family.
    pub finetune_encoders: BTreeMap<VariantName, EncoderDescriptor>,
    pub embeddings: Option<PathBuf>,
    pub jobs: usize,
    pub keep_checkpoints: bool,
    /// Stop after this many newly trained rows (the rest stay pending).
    pub max_new_rows: Option<usize>,
}

impl GridOptions {
    pub fn new(task: TaskMode) -> Self {
        GridOptions {
            task,
            preprocess: PreprocessConfig::default(),
            train: None,
            encoders: BTreeMap::new(),
            feature_mode: FeatureMode::default(),
            feature_cache: None,
            finetune_encoders: BTreeMap::new(),
            embeddings: None,
            jobs: 1,
            keep_checkpoints: true,
            max_new_rows: None,
        }
    }
}

/// Reads the complete rows of a row log, truncating a partial last line.
pub fn read_row_log(path: &Path) -> Result<Vec<(GridRow, String)>> {
    let raw = match fs::read_to_string(path) {
        Ok(r) => r,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let complete = match raw.rfind('\n') {
        Some(i) => &raw[..=i],
        None => "",
    };
    let mut rows = Vec::new();
    for (n, line) in complete
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
    {
        let row: GridRow = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            message: format!("bad row log entry: {e}"),
        })?;
        rows.push((row, line.to_string()));
    }
    if complete.len() != raw.len() {
        log::warn!("{}: dropping a partial last line", path.display());
        fs::write(path, complete).map_err(|e| Error::io(path, e))?;
    }
    Ok(rows)
}

fn run_one(
    hp: &HyperParams,
    index: usize,
    preprocessed: bool,
    splits: &[Dataset; 3],
    opts: &GridOptions,
    out: &Path,
) -> GridRow {
    let key = row_key(hp, preprocessed);
    let cfg = opts
        .train
        .clone()
        .unwrap_or_else(|| TrainConfig::for_family(hp.family));
    let mut row = GridRow {
        key: key.clone(),
        index,
        family: hp.family,
        preprocessed,
        hyperparams: hp.clone(),
        status: RunStatus::Failed,
        test_f1: None,
        val_f1: None,
        test_weighted_f1: None,
        params: None,
        best_epoch: None,
        seed: cfg.seed,
        checkpoint: None,
        error: None,
        best: false,
    };
    let result = (|| -> Result<()> {
        let mut req = TrainRequest::new(hp.clone(), opts.task);
        req.train = cfg.clone();
        req.grid_constrained = false;
        req.preprocess = if preprocessed {
            opts.preprocess.clone()
        } else {
            PreprocessConfig::disabled()
        };
        req.feature_mode = opts.feature_mode;
        req.feature_cache = opts.feature_cache.clone();
        req.embeddings = opts.embeddings.clone();
        let variant = hp.encoder_variant.unwrap_or(VariantName::Base);
        if hp.family == Family::BertFeatureGru {
            let enc = opts.encoders.get(&variant).ok_or_else(|| {
                Error::EncoderUnavailable(format!("no {variant} encoder configured"))
            })?;
            req.encoder = Some(enc.clone());
        }
        if hp.family == Family::BertFinetune {
            req.finetune_encoder = opts.finetune_encoders.get(&variant).cloned();
        }
        let (tm, history) = train(&req, &splits[0], &splits[1])?;
        let val = tm.evaluate_with_cache(&splits[1], opts.feature_cache.as_deref())?;
        let test = tm.evaluate_with_cache(&splits[2], opts.feature_cache.as_deref())?;
        row.val_f1 = Some(val.macro_f1);
        row.test_f1 = Some(test.macro_f1);
        row.test_weighted_f1 = Some(test.weighted_f1);
        row.params = Some(tm.param_count());
        row.best_epoch = Some(history.best_epoch);
        if opts.keep_checkpoints {
            let dir = out.join("runs").join(&key);
            save_checkpoint(&tm, &dir)?;
            history.save(&dir)?;
            row.checkpoint = Some(format!("runs/{key}"));
        }
        Ok(())
    })();
    match result {
        Ok(()) => row.status = RunStatus::Ok,
        Err(e) => {
            log::warn!("{key} failed: {e}");
            row.error = Some(e.to_string());
        }
    }
    row
}

/// Trains every (point, preprocessing flag) pair of `space` on one shared
/// train/validation/test split, skipping rows already in the log under
/// `out`, and writes the compacted `results.csv`, `results.md` and
/// `results.json`.
pub fn run_grid(
    space: &GridSpace,
    splits: &[Dataset; 3],
    opts: &GridOptions,
    out: &Path,
) -> Result<ResultsTable> {
    let points = enumerate_grid(space)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join(ROW_LOG);
    let done: HashSet<String> = read_row_log(&log_path)?
        .into_iter()
        .map(|(r, _)| r.key)
        .collect();

    let mut pending = Vec::new();
    for (i, hp) in points.iter().enumerate() {
        for &pre in &space.preprocessed {
            let mut hp = hp.clone();
            hp.num_classes = opts.task.num_outputs();
            hp.pretrained_embeddings = hp.family == Family::WordLstm && opts.embeddings.is_some();
            if !done.contains(&row_key(&hp, pre)) {
                pending.push((i, hp, pre));
            }
        }
    }
    let budget = opts.max_new_rows.unwrap_or(usize::MAX).min(pending.len());
    log::info!(
        "{}: {} rows logged, {} pending, training {}",
        space.family,
        done.len(),
        pending.len(),
        budget
    );

    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .map_err(|e| Error::io(&log_path, e))?;
    let sink: Mutex<File> = Mutex::new(file);
    let next = AtomicUsize::new(0);
    let first_err: Mutex<Option<Error>> = Mutex::new(None);
    let jobs = opts.jobs.max(1).min(budget.max(1));

    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let n = next.fetch_add(1, Ordering::SeqCst);
                if n >= budget {
                    break;
                }
                let (i, hp, pre) = &pending[n];
                let row = run_one(hp, *i, *pre, splits, opts, out);
                let mut line = match serde_json::to_string(&row) {
                    Ok(l) => l,
                    Err(e) => {
                        first_err.lock().unwrap().get_or_insert(e.into());
                        break;
                    }
                };
                line.push('\n');
                let mut f = sink.lock().unwrap();
                if let Err(e) = f.write_all(line.as_bytes()).and_then(|_| f.flush()) {
                    first_err
                        .lock()
                        .unwrap()
                        .get_or_insert(Error::io(&log_path, e));
                    break;
                }
            });
        }
    });
    if let Some(e) = first_err.into_inner().unwrap() {
        return Err(e);
    }

    let mut table = ResultsTable::from_log(&log_path)?;
    table.rows.retain(|r| r.family == space.family);
    table.save(out)?;
    Ok(table)
}

/// Rows of one or more grids, sorted by family, preprocessing flag (on
/// first) and grid position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub rows: Vec<GridRow>,
}

impl ResultsTable {
    pub fn new(mut rows: Vec<GridRow>) -> Self {
        rows.sort_by(|a, b| {
            (a.family, !a.preprocessed, a.index, &a.key).cmp(&(
                b.family,
                !b.preprocessed,
                b.index,
                &b.key,
            ))
        });
        let mut t = ResultsTable { rows };
        t.mark_best();
        t
    }

    pub fn from_log(path: &Path) -> Result<Self> {
        Ok(Self::new(
            read_row_log(path)?.into_iter().map(|(r, _)| r).collect(),
        ))
    }

    /// Loads `results.json`, a row log, or a directory holding either.
    pub fn load(path: &Path) -> Result<Self> {
        if path.is_dir() {
            let json = path.join("results.json");
            return if json.exists() {
                Self::load(&json)
            } else {
                Self::from_log(&path.join(ROW_LOG))
            };
        }
        if path.extension().is_some_and(|e| e == "jsonl") {
            return Self::from_log(path);
        }
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: ResultsTable = serde_json::from_str(&raw)?;
        Ok(Self::new(t.rows))
    }

    /// Flags the best successful row of each family: highest test F1, then
    /// fewer parameters, then earlier in the table.
    fn mark_best(&mut self) {
        let mut best: BTreeMap<Family, usize> = BTreeMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            let Some(f1) = r.test_f1.filter(|_| r.status == RunStatus::Ok) else {
                continue;
            };
            let better = match best.get(&r.family) {
                None => true,
                Some(&j) => {
                    let o = &self.rows[j];
                    let of1 = o.test_f1.unwrap_or(f64::NEG_INFINITY);
                    f1 > of1
                        || (f1 == of1
                            && r.params.unwrap_or(usize::MAX) < o.params.unwrap_or(usize::MAX))
                }
            };
            if better {
                best.insert(r.family, i);
            }
        }
        for (i, r) in self.rows.iter_mut().enumerate() {
            r.best = best.get(&r.family) == Some(&i);
        }
    }

    pub fn best(&self, family: Family) -> Option<&GridRow> {
        self.rows.iter().find(|r| r.family == family && r.best)
    }

    pub fn families(&self) -> Vec<Family> {
        let mut f: Vec<Family> = self.rows.iter().map(|r| r.family).collect();
        f.dedup();
        f
    }

    /// Keeps only the configurations with a published reference score.
    pub fn reference_rows(&self) -> ResultsTable {
        ResultsTable::new(
            self.rows
                .iter()
                .filter(|r| reference_f1(r).is_some())
                .cloned()
                .collect(),
        )
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, body: String| {
            let p = dir.join(name);
            fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        write("results.csv", self.to_csv()?)?;
        write("results.md", self.to_markdown(false))?;
        write("results.json", serde_json::to_string_pretty(self)?)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "family",
            "preprocessed",
            "embedding_dim",
            "hidden_dim",
            "dropout",
            "encoder_variant",
            "test_macro_f1",
            "val_macro_f1",
            "test_weighted_f1",
            "params",
            "best_epoch",
            "seed",
            "status",
            "best",
            "checkpoint",
            "error",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        for r in &self.rows {
            let hp = &r.hyperparams;
            w.write_record([
                r.family.as_str().to_string(),
                r.preprocessed.to_string(),
                hp.embedding_dim.to_string(),
                hp.hidden_dim.to_string(),
                hp.dropout.to_string(),
                hp.encoder_variant
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
                opt(r.test_f1),
                opt(r.val_f1),
                opt(r.test_weighted_f1),
                r.params.map(|p| p.to_string()).unwrap_or_default(),
                r.best_epoch.map(|p| p.to_string()).unwrap_or_default(),
                r.seed.to_string(),
                match r.status {
                    RunStatus::Ok => "ok".into(),
                    RunStatus::Failed => "failed".into(),
                },
                r.best.to_string(),
                r.checkpoint.clone().unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    /// One markdown table per family. With `with_reference` a column of
    /// published scores is added where one exists.
    pub fn to_markdown(&self, with_reference: bool) -> String {
        let mut s = String::new();
        for family in self.families() {
            let hp_cols: &[&str] = match family {
                Family::CharLstm | Family::WordLstm => &["Embedding dim", "Hidden dim", "Dropout"],
                Family::BertFeatureGru => &["Variant", "Hidden dim", "Dropout"],
                Family::BertFinetune => &["Variant"],
            };
            let mut head = vec!["Model name", "Pre-processed"];
            head.extend_from_slice(hp_cols);
            head.extend_from_slice(&["F1", "Val F1"]);
            if with_reference {
                head.push("Reported F1");
            }
            head.push("Best");
            let _ = writeln!(s, "### {}\n", family.display_name());
            let _ = writeln!(s, "| {} |", head.join(" | "));
            let _ = writeln!(s, "|{}", "---|".repeat(head.len()));
            for r in self.rows.iter().filter(|r| r.family == family) {
                let hp = &r.hyperparams;
                let variant = hp
                    .encoder_variant
                    .map(|v| v.to_string())
                    .unwrap_or_default();
                let mut cells = vec![
                    family.display_name().to_string(),
                    if r.preprocessed { "Yes" } else { "No" }.to_string(),
                ];
                match family {
                    Family::CharLstm | Family::WordLstm => cells.extend([
                        hp.embedding_dim.to_string(),
                        hp.hidden_dim.to_string(),
                        hp.dropout.to_string(),
                    ]),
                    Family::BertFeatureGru => {
                        cells.extend([variant, hp.hidden_dim.to_string(), hp.dropout.to_string()])
                    }
                    Family::BertFinetune => cells.push(variant),
                }
                match r.status {
                    RunStatus::Ok => {
                        cells.push(format!("{:.4}", r.test_f1.unwrap_or(0.0)));
                        cells.push(format!("{:.4}", r.val_f1.unwrap_or(0.0)));
                    }
                    RunStatus::Failed => cells.extend(["failed".to_string(), "failed".to_string()]),
                }
                if with_reference {
                    cells.push(
                        reference_f1(r)
                            .map(|f| format!("{f:.2}"))
                            .unwrap_or_default(),
                    );
                }
                cells.push(if r.best { "*".into() } else { String::new() });
                let _ = writeln!(s, "| {} |", cells.join(" | "));
            }
            s.push('\n');
        }
        s
    }
}

/// Published scores for selected configurations, keyed by family,
/// preprocessing flag and hyperparameters.
const REFERENCE_ROWS: &[(Family, bool, Option<VariantName>, usize, usize, f64, f64)] = &[
    (Family::CharLstm, true, None, 50, 256, 0.5, 0.75),
    (Family::CharLstm, true, None, 50, 128, 0.75, 0.78),
    (Family::CharLstm, true, None, 100, 64, 0.5, 0.76),
    (Family::CharLstm, true, None, 200, 16, 0.5, 0.79),
    (Family::CharLstm, false, None, 200, 16, 0.75, 0.75),
    (Family::CharLstm, false, None, 100, 128, 0.75, 0.77),
    (Family::WordLstm, true, None, 100, 512, 0.25, 0.81),
    (Family::WordLstm, true, None, 300, 256, 0.25, 0.83),
    (Family::WordLstm, true, None, 300, 256, 0.75, 0.80),
    (Family::WordLstm, false, None, 300, 256, 0.25, 0.79),
    (
        Family::BertFeatureGru,
        true,
        Some(VariantName::Base),
        0,
        256,
        0.25,
        0.86,
    ),
    (
        Family::BertFeatureGru,
        true,
        Some(VariantName::Base),
        0,
        128,
        0.25,
        0.83,
    ),
    (
        Family::BertFeatureGru,
        true,
        Some(VariantName::Large),
        0,
        256,
        0.5,
        0.84,
    ),
    (
        Family::BertFeatureGru,
        true,
        Some(VariantName::Large),
        0,
        128,
        0.25,
        0.80,
    ),
    (
        Family::BertFeatureGru,
        false,
        Some(VariantName::Base),
        0,
        128,
        0.25,
        0.79,
    ),
    (
        Family::BertFinetune,
        true,
        Some(VariantName::Base),
        0,
        0,
        0.0,
        0.81,
    ),
    (
        Family::BertFinetune,
        false,
        Some(VariantName::Base),
        0,
        0,
        0.0,
        0.83,
    ),
];

/// The published score for this row's configuration, if there is one.
pub fn reference_f1(row: &GridRow) -> Option<f64> {
    let hp = &row.hyperparams;
    REFERENCE_ROWS
        .iter()
        .find(|(family, pre, variant, e, h, p, _)| {
            *family == row.family
                && *pre == row.preprocessed
                && match family {
                    Family::CharLstm | Family::WordLstm => {
                        *e == hp.embedding_dim && *h == hp.hidden_dim && *p == hp.dropout
                    }
                    Family::BertFeatureGru => {
                        *variant == hp.encoder_variant && *h == hp.hidden_dim && *p == hp.dropout
                    }
                    Family::BertFinetune => *variant == hp.encoder_variant,
                }
        })
        .map(|r| r.6)
}
