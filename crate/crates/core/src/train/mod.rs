//! Seeded mini-batch training with validation macro-F1 model selection,
//! early stopping and best-epoch restoration.

mod checkpoint;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ndarray::{concatenate, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::evaluate::{confusion_matrix, decide, f1_scores};
use crate::labels::TaskMode;
use crate::models::{build_model, Family, HyperParams, ModelInput, ModelSpec, RecurrentClassifier};
use crate::nn::{loss, Adam, Params};
use crate::preprocess::{PreprocessConfig, Preprocessor};
use crate::pretrained::{Encoder, EncoderDescriptor, FeatureCache, FeatureMode};
use crate::vocab::{load_pretrained_embeddings, Vocab};

pub use checkpoint::{
    load_checkpoint, save_checkpoint, CheckpointManifest, ModelBody, TrainedModel,
    CHECKPOINT_VERSION,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub max_epochs: usize,
    /// Epochs without a validation macro-F1 improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Global gradient-norm cap (recurrent families only).
    #[serde(default)]
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::recurrent()
    }
}

impl TrainConfig {
    pub fn recurrent() -> Self {
        TrainConfig {
            batch_size: 32,
            lr: 1e-3,
            max_epochs: 50,
            patience: 5,
            seed: 42,
            clip_norm: Some(5.0),
        }
    }

    /// Fine-tuning schedule: lr 2e-5, 3 epochs, batch 32. Patience is 2 so
    /// that it stays below the epoch budget.
    pub fn finetune() -> Self {
        TrainConfig {
            batch_size: 32,
            lr: 2e-5,
            max_epochs: 3,
            patience: 2,
            seed: 42,
            clip_norm: None,
        }
    }

    pub fn for_family(family: Family) -> Self {
        match family {
            Family::BertFinetune => Self::finetune(),
            _ => Self::recurrent(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be at least 1".into()));
        }
        if self.patience >= self.max_epochs {
            return Err(Error::InvalidConfig(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} is invalid",
                self.lr
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose weights were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub wall_time: f64,
}

/// Histories compare equal when everything but the wall-clock time matches.
impl PartialEq for TrainHistory {
    fn eq(&self, other: &Self) -> bool {
        self.epochs == other.epochs
            && self.best_epoch == other.best_epoch
            && self.stopped_early == other.stopped_early
    }
}

impl TrainHistory {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,val_macro_f1\n");
        for e in &self.epochs {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                e.epoch, e.train_loss, e.val_loss, e.val_macro_f1
            );
        }
        out
    }

    /// Writes `history.csv` and `history.json` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv = dir.join("history.csv");
        fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join("history.json");
        fs::write(&json, serde_json::to_string_pretty(self)?).map_err(|e| Error::io(&json, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Tracks the best validation score; the first epoch wins ties.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: Option<(usize, f64)>,
    since_best: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        EarlyStopper {
            patience,
            best: None,
            since_best: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, score: f64) -> StopDecision {
        match self.best {
            Some((_, best)) if score <= best => {
                self.since_best += 1;
                if self.since_best >= self.patience {
                    StopDecision::Stop
                } else {
                    StopDecision::Continue
                }
            }
            _ => {
                self.best = Some((epoch, score));
                self.since_best = 0;
                StopDecision::Improved
            }
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best.map(|(e, _)| e)
    }
}

/// Something the training loop can fit and query.
pub trait Learner {
    type Input;
    type Snapshot;

    /// One optimizer step; returns the mean batch loss.
    fn fit_batch(
        &mut self,
        inputs: &[&Self::Input],
        targets: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<f64>;

    /// Eval-mode logits.
    fn logits(&self, inputs: &[&Self::Input]) -> Result<Array2<f64>>;

    fn snapshot(&self) -> Result<Self::Snapshot>;

    fn restore(&mut self, snapshot: &Self::Snapshot) -> Result<()>;
}

/// Adam on a [`RecurrentClassifier`] with optional gradient clipping.
pub struct RecurrentLearner {
    pub model: RecurrentClassifier,
    opt: Adam,
    clip_norm: Option<f64>,
}

impl RecurrentLearner {
    pub fn new(model: RecurrentClassifier, cfg: &TrainConfig) -> Self {
        RecurrentLearner {
            opt: Adam::new(model.params(), cfg.lr),
            model,
            clip_norm: cfg.clip_norm,
        }
    }
}

impl Learner for RecurrentLearner {
    type Input = ModelInput;
    type Snapshot = Params;

    fn fit_batch(
        &mut self,
        inputs: &[&ModelInput],
        targets: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let (loss, mut grads) = self.model.forward_backward(inputs, targets, rng)?;
        if !loss.is_finite() || !grads.all_finite() {
            return Ok(f64::NAN);
        }
        if let Some(max) = self.clip_norm {
            grads.clip_norm(max);
        }
        self.opt.step(self.model.params_mut(), &grads);
        Ok(loss)
    }

    fn logits(&self, inputs: &[&ModelInput]) -> Result<Array2<f64>> {
        self.model.forward(inputs)
    }

    fn snapshot(&self) -> Result<Params> {
        Ok(self.model.params().clone())
    }

    fn restore(&mut self, snapshot: &Params) -> Result<()> {
        *self.model.params_mut() = snapshot.clone();
        Ok(())
    }
}

#[cfg(feature = "bert")]
pub use finetune::FinetuneLearner;

#[cfg(feature = "bert")]
mod finetune {
    use super::*;
    use crate::pretrained::bert::FinetuneClassifier;

    /// AdamW over every weight of a [`FinetuneClassifier`].
    pub struct FinetuneLearner {
        pub model: FinetuneClassifier,
        opt: candle_nn::AdamW,
    }

    impl FinetuneLearner {
        pub fn new(model: FinetuneClassifier, cfg: &TrainConfig) -> Result<Self> {
            Ok(FinetuneLearner {
                opt: model.optimizer(cfg.lr)?,
                model,
            })
        }
    }

    impl Learner for FinetuneLearner {
        type Input = String;
        type Snapshot = Vec<(String, candle_core::Tensor)>;

        fn fit_batch(
            &mut self,
            inputs: &[&String],
            targets: &[usize],
            rng: &mut ChaCha8Rng,
        ) -> Result<f64> {
            let texts: Vec<&str> = inputs.iter().map(|s| s.as_str()).collect();
            self.model.train_step(&mut self.opt, &texts, targets, rng)
        }

        fn logits(&self, inputs: &[&String]) -> Result<Array2<f64>> {
            let texts: Vec<&str> = inputs.iter().map(|s| s.as_str()).collect();
            self.model.logits(&texts)
        }

        fn snapshot(&self) -> Result<Self::Snapshot> {
            self.model.snapshot()
        }

        fn restore(&mut self, snapshot: &Self::Snapshot) -> Result<()> {
            self.model.restore(snapshot)
        }
    }
}

/// Eval-mode logits for all `inputs`, computed `batch` at a time.
pub fn batched_logits<L: Learner>(
    learner: &L,
    inputs: &[L::Input],
    batch: usize,
    outputs: usize,
) -> Result<Array2<f64>> {
    let mut parts = Vec::new();
    for chunk in inputs.chunks(batch.max(1)) {
        let refs: Vec<&L::Input> = chunk.iter().collect();
        parts.push(learner.logits(&refs)?);
    }
    if parts.is_empty() {
        return Ok(Array2::zeros((0, outputs)));
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    concatenate(Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

/// Class decisions for each row of `logits`.
pub fn decisions(logits: &Array2<f64>) -> Vec<usize> {
    logits
        .rows()
        .into_iter()
        .map(|r| decide(&r.to_vec()))
        .collect()
}

/// Runs the epoch loop and leaves `learner` holding the best epoch's weights.
pub fn fit<L: Learner>(
    learner: &mut L,
    train_x: &[L::Input],
    train_y: &[usize],
    val_x: &[L::Input],
    val_y: &[usize],
    num_classes: usize,
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if train_x.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if val_x.is_empty() {
        return Err(Error::InvalidConfig("validation set is empty".into()));
    }
    if train_x.len() != train_y.len() || val_x.len() != val_y.len() {
        return Err(Error::Shape("inputs and labels differ in length".into()));
    }
    let start = Instant::now();
    let mut stopper = EarlyStopper::new(cfg.patience);
    let mut best = learner.snapshot()?;
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train_x.len()).collect();
    for epoch in 1..=cfg.max_epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.sort_unstable();
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let inputs: Vec<&L::Input> = chunk.iter().map(|&i| &train_x[i]).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| train_y[i]).collect();
            let l = learner.fit_batch(&inputs, &targets, &mut rng)?;
            if !l.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    lr: cfg.lr,
                });
            }
            total += l * chunk.len() as f64;
        }
        let logits = batched_logits(learner, val_x, cfg.batch_size, 0)?;
        let val_loss = loss(&logits, val_y);
        let cm = confusion_matrix(val_y, &decisions(&logits), num_classes)?;
        let val_macro_f1 = f1_scores(&cm, &[]).macro_f1;
        let record = EpochRecord {
            epoch,
            train_loss: total / train_x.len() as f64,
            val_loss,
            val_macro_f1,
        };
        log::debug!(
            "epoch {epoch}: train loss {:.4}, val loss {:.4}, val macro-F1 {:.4}",
            record.train_loss,
            record.val_loss,
            record.val_macro_f1
        );
        epochs.push(record);
        match stopper.observe(epoch, val_macro_f1) {
            StopDecision::Improved => best = learner.snapshot()?,
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }
    learner.restore(&best)?;
    Ok(TrainHistory {
        epochs,
        best_epoch: stopper.best_epoch().unwrap_or(1),
        stopped_early,
        wall_time: start.elapsed().as_secs_f64(),
    })
}

/// Everything needed to train one model from raw datasets.
#[derive(Clone)]
pub struct TrainRequest {
    pub hyperparams: HyperParams,
    pub task: TaskMode,
    pub preprocess: PreprocessConfig,
    pub train: TrainConfig,
    /// Feature family: the frozen encoder.
    pub encoder: Option<Arc<dyn Encoder>>,
    pub feature_mode: FeatureMode,
    pub feature_cache: Option<PathBuf>,
    /// Fine-tuning: where the encoder weights live (checkpoint directory or
    /// a descriptor resolved through the environment).
    pub finetune_encoder: Option<EncoderDescriptor>,
    /// Word family: pretrained vectors file.
    pub embeddings: Option<PathBuf>,
    pub grid_constrained: bool,
    pub max_len: Option<usize>,
    pub min_freq: Option<usize>,
}

impl TrainRequest {
    pub fn new(hyperparams: HyperParams, task: TaskMode) -> Self {
        TrainRequest {
            train: TrainConfig::for_family(hyperparams.family),
            hyperparams,
            task,
            preprocess: PreprocessConfig::default(),
            encoder: None,
            feature_mode: FeatureMode::Sequence,
            feature_cache: None,
            finetune_encoder: None,
            embeddings: None,
            grid_constrained: false,
            max_len: None,
            min_freq: None,
        }
    }
}

/// Texts and class indices of the items that belong to `mode`.
pub(crate) fn labeled_examples(ds: &Dataset, mode: TaskMode) -> Result<(Vec<String>, Vec<usize>)> {
    let mut texts = Vec::new();
    let mut ys = Vec::new();
    for item in &ds.items {
        match mode.class_of(item) {
            Some(y) => {
                texts.push(item.text.clone());
                ys.push(y);
            }
            // NONE posts sit outside the conditional three-way problem
            None if mode == TaskMode::Conditional && item.label_1b.is_some() => {}
            None => {
                return Err(Error::Unlabeled(format!(
                    "task {mode} (item {:?})",
                    item.id
                )))
            }
        }
    }
    Ok((texts, ys))
}

/// Encodes texts with a frozen encoder, through the cache when configured.
pub(crate) fn encode_texts(
    encoder: &dyn Encoder,
    texts: &[&str],
    cache: Option<&Path>,
    mode: FeatureMode,
) -> Result<Vec<ModelInput>> {
    let features = match cache {
        Some(dir) => FeatureCache::new(dir).encode_all(encoder, texts)?,
        None => {
            let mut out = Vec::with_capacity(texts.len());
            for chunk in texts.chunks(32) {
                out.extend(encoder.encode_batch(chunk)?);
            }
            out
        }
    };
    Ok(features
        .into_iter()
        .map(|f| {
            ModelInput::Features(match mode {
                FeatureMode::Sequence => f,
                FeatureMode::Pooled => f.pooled(),
            })
        })
        .collect())
}

/// Trains the model `req` describes on raw `train_ds`, selecting the epoch
/// by macro-F1 on `val_ds`. Both datasets are preprocessed here with
/// `req.preprocess`.
pub fn train(
    req: &TrainRequest,
    train_ds: &Dataset,
    val_ds: &Dataset,
) -> Result<(TrainedModel, TrainHistory)> {
    req.train.validate()?;
    let mut hp = req.hyperparams.clone();
    hp.num_classes = req.task.num_outputs();
    hp.validate(req.grid_constrained)?;
    let pre = Preprocessor::new(req.preprocess.clone())?;
    let (train_texts, train_y) = labeled_examples(train_ds, req.task)?;
    let (val_texts, val_y) = labeled_examples(val_ds, req.task)?;
    if train_texts.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let train_texts: Vec<String> = train_texts.iter().map(|t| pre.apply(t)).collect();
    let val_texts: Vec<String> = val_texts.iter().map(|t| pre.apply(t)).collect();
    let k = req.task.num_classes();

    match hp.family {
        Family::CharLstm | Family::WordLstm => {
            let level = hp.family.level().expect("token family");
            let min_freq = req.min_freq.unwrap_or_else(|| level.default_min_freq());
            let max_len = req.max_len.unwrap_or_else(|| level.default_max_len());
            let vocab = Vocab::build(&train_texts, level, min_freq)?;
            let spec = ModelSpec::for_tokens(hp.clone(), vocab.len())
                .grid_constrained(req.grid_constrained);
            let emb = match (&req.embeddings, hp.pretrained_embeddings) {
                (Some(path), true) => Some(load_pretrained_embeddings(
                    path,
                    &vocab,
                    hp.embedding_dim,
                    req.train.seed,
                )?),
                (None, true) => {
                    return Err(Error::InvalidConfig(
                        "pretrained_embeddings is set but no vectors file was given".into(),
                    ))
                }
                _ => None,
            };
            let model = build_model(&spec, emb.as_ref(), req.train.seed)?;
            let enc = |texts: &[String]| -> Vec<ModelInput> {
                texts
                    .iter()
                    .map(|t| ModelInput::Tokens(vocab.encode(t, max_len)))
                    .collect()
            };
            let (tx, vx) = (enc(&train_texts), enc(&val_texts));
            let mut learner = RecurrentLearner::new(model, &req.train);
            let history = fit(&mut learner, &tx, &train_y, &vx, &val_y, k, &req.train)?;
            let tm = TrainedModel {
                task: req.task,
                preprocess: req.preprocess.clone(),
                seed: req.train.seed,
                body: ModelBody::Tokens {
                    model: learner.model,
                    vocab,
                    max_len,
                },
            };
            Ok((tm, history))
        }
        Family::BertFeatureGru => {
            let encoder = req.encoder.clone().ok_or_else(|| {
                Error::InvalidConfig("the feature family needs an encoder".into())
            })?;
            let cache = req.feature_cache.as_deref();
            let train_refs: Vec<&str> = train_texts.iter().map(String::as_str).collect();
            let val_refs: Vec<&str> = val_texts.iter().map(String::as_str).collect();
            let tx = encode_texts(encoder.as_ref(), &train_refs, cache, req.feature_mode)?;
            let vx = encode_texts(encoder.as_ref(), &val_refs, cache, req.feature_mode)?;
            let spec = ModelSpec::for_features(hp.clone(), encoder.width())
                .grid_constrained(req.grid_constrained);
            let model = build_model(&spec, None, req.train.seed)?;
            let mut learner = RecurrentLearner::new(model, &req.train);
            let history = fit(&mut learner, &tx, &train_y, &vx, &val_y, k, &req.train)?;
            let tm = TrainedModel {
                task: req.task,
                preprocess: req.preprocess.clone(),
                seed: req.train.seed,
                body: ModelBody::Features {
                    model: learner.model,
                    encoder: encoder.descriptor(),
                    mode: req.feature_mode,
                    handle: Some(encoder),
                },
            };
            Ok((tm, history))
        }
        Family::BertFinetune => train_finetune(req, &hp, train_texts, train_y, val_texts, val_y),
    }
}

#[cfg(feature = "bert")]
fn train_finetune(
    req: &TrainRequest,
    hp: &HyperParams,
    train_x: Vec<String>,
    train_y: Vec<usize>,
    val_x: Vec<String>,
    val_y: Vec<usize>,
) -> Result<(TrainedModel, TrainHistory)> {
    use crate::pretrained::{bert, VariantName};
    let desc = match &req.finetune_encoder {
        Some(d) => d.clone(),
        None => EncoderDescriptor::Bert {
            variant: hp.encoder_variant.unwrap_or(VariantName::Base),
            dir: None,
            max_tokens: 128,
        },
    };
    let model = bert::build_finetune_classifier(
        &desc.bert_dir()?,
        desc.bert_variant()?,
        hp.num_classes,
        req.train.seed,
    )?;
    let mut learner = FinetuneLearner::new(model, &req.train)?;
    let history = fit(
        &mut learner,
        &train_x,
        &train_y,
        &val_x,
        &val_y,
        req.task.num_classes(),
        &req.train,
    )?;
    let tm = TrainedModel {
        task: req.task,
        preprocess: req.preprocess.clone(),
        seed: req.train.seed,
        body: ModelBody::Finetune {
            model: Box::new(learner.model),
        },
    };
    Ok((tm, history))
}

#[cfg(not(feature = "bert"))]
fn train_finetune(
    _: &TrainRequest,
    _: &HyperParams,
    _: Vec<String>,
    _: Vec<usize>,
    _: Vec<String>,
    _: Vec<usize>,
) -> Result<(TrainedModel, TrainHistory)> {
    Err(Error::EncoderUnavailable(
        "fine-tuning needs the `bert` feature".into(),
    ))
}
