//! Trained-model bundles and their on-disk checkpoint format.
//!
//! A checkpoint directory holds `manifest.json`, `preprocess.json` and, for
//! the recurrent families, `spec.json`, `weights.bin` (little-endian f64) and
//! `vocab.json`. Fine-tuned encoders live under `encoder/`.

use std::fs;
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{decisions, encode_texts, labeled_examples, TrainConfig};
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::evaluate::{confusion_matrix, f1_scores, EvalReport};
use crate::labels::TaskMode;
use crate::models::{Family, ModelInput, ModelSpec, RecurrentClassifier};
use crate::nn::{Params, TensorInfo};
use crate::preprocess::{PreprocessConfig, Preprocessor};
use crate::pretrained::{Encoder, EncoderDescriptor, FeatureMode};
use crate::vocab::Vocab;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Model weights plus whatever turns raw text into model inputs.
pub enum ModelBody {
    Tokens {
        model: RecurrentClassifier,
        vocab: Vocab,
        max_len: usize,
    },
    Features {
        model: RecurrentClassifier,
        encoder: EncoderDescriptor,
        mode: FeatureMode,
        /// The opened encoder, when already loaded.
        handle: Option<Arc<dyn Encoder>>,
    },
    #[cfg(feature = "bert")]
    Finetune {
        model: Box<crate::pretrained::bert::FinetuneClassifier>,
    },
}

/// A trained classifier with its preprocessing pipeline.
pub struct TrainedModel {
    pub task: TaskMode,
    pub preprocess: PreprocessConfig,
    pub seed: u64,
    pub body: ModelBody,
}

impl TrainedModel {
    pub fn family(&self) -> Family {
        match &self.body {
            ModelBody::Tokens { model, .. } | ModelBody::Features { model, .. } => {
                model.spec().hyperparams.family
            }
            #[cfg(feature = "bert")]
            ModelBody::Finetune { .. } => Family::BertFinetune,
        }
    }

    pub fn recurrent(&self) -> Option<&RecurrentClassifier> {
        match &self.body {
            ModelBody::Tokens { model, .. } | ModelBody::Features { model, .. } => Some(model),
            #[cfg(feature = "bert")]
            ModelBody::Finetune { .. } => None,
        }
    }

    /// Trainable scalars (the whole network, encoder included when tuned).
    pub fn param_count(&self) -> usize {
        match &self.body {
            ModelBody::Tokens { model, .. } | ModelBody::Features { model, .. } => {
                model.params().count()
            }
            #[cfg(feature = "bert")]
            ModelBody::Finetune { model } => model.param_count(),
        }
    }

    /// Eval-mode logits for raw texts, preprocessed as at training time.
    /// `feature_cache` is used by the feature family when given.
    pub fn logits_with_cache(
        &self,
        texts: &[&str],
        feature_cache: Option<&Path>,
    ) -> Result<Array2<f64>> {
        let pre = Preprocessor::new(self.preprocess.clone())?;
        let clean: Vec<String> = texts.iter().map(|t| pre.apply(t)).collect();
        let batch = TrainConfig::default().batch_size;
        match &self.body {
            ModelBody::Tokens {
                model,
                vocab,
                max_len,
            } => {
                let inputs: Vec<ModelInput> = clean
                    .iter()
                    .map(|t| ModelInput::Tokens(vocab.encode(t, *max_len)))
                    .collect();
                recurrent_logits(model, &inputs, batch)
            }
            ModelBody::Features {
                model,
                encoder,
                mode,
                handle,
            } => {
                let opened;
                let enc: &dyn Encoder = match handle {
                    Some(h) => h.as_ref(),
                    None => {
                        opened = encoder.open()?;
                        opened.as_ref()
                    }
                };
                let refs: Vec<&str> = clean.iter().map(String::as_str).collect();
                let inputs = encode_texts(enc, &refs, feature_cache, *mode)?;
                recurrent_logits(model, &inputs, batch)
            }
            #[cfg(feature = "bert")]
            ModelBody::Finetune { model } => {
                let mut parts = Vec::new();
                for chunk in clean.chunks(batch) {
                    let refs: Vec<&str> = chunk.iter().map(String::as_str).collect();
                    parts.push(model.logits(&refs)?);
                }
                let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
                if views.is_empty() {
                    return Ok(Array2::zeros((0, self.task.num_outputs())));
                }
                ndarray::concatenate(ndarray::Axis(0), &views)
                    .map_err(|e| Error::Shape(e.to_string()))
            }
        }
    }

    pub fn logits(&self, texts: &[&str]) -> Result<Array2<f64>> {
        self.logits_with_cache(texts, None)
    }

    /// Class index per text.
    pub fn predict(&self, texts: &[&str]) -> Result<Vec<usize>> {
        Ok(decisions(&self.logits(texts)?))
    }

    /// Scores the model on a labelled dataset. For the conditional task only
    /// the three offensive classes are scored.
    pub fn evaluate(&self, ds: &Dataset) -> Result<EvalReport> {
        self.evaluate_with_cache(ds, None)
    }

    pub fn evaluate_with_cache(
        &self,
        ds: &Dataset,
        feature_cache: Option<&Path>,
    ) -> Result<EvalReport> {
        let (texts, truth) = labeled_examples(ds, self.task).map_err(|e| match e {
            Error::Unlabeled(what) => {
                Error::Unlabeled(format!("{what}; use predict for unlabelled data"))
            }
            other => other,
        })?;
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let pred = decisions(&self.logits_with_cache(&refs, feature_cache)?);
        let cm = confusion_matrix(&truth, &pred, self.task.num_classes())?;
        Ok(f1_scores(&cm, self.task.class_names()))
    }

    /// Label name per text. A conditional 1B model needs the 1A `gate`:
    /// posts the gate calls `NOT` are labelled `NONE`.
    pub fn predict_labels(
        &self,
        texts: &[&str],
        gate: Option<&TrainedModel>,
    ) -> Result<Vec<&'static str>> {
        let classes = self.predict(texts)?;
        let mut labels: Vec<&'static str> =
            classes.iter().map(|&c| self.task.label_name(c)).collect();
        if self.task == TaskMode::Conditional {
            let gate = gate.ok_or_else(|| {
                Error::InvalidConfig(
                    "a 1b-conditional model needs a 1a gate model to predict NONE".into(),
                )
            })?;
            if gate.task != TaskMode::Binary {
                return Err(Error::InvalidConfig(
                    "the gate model must be a 1a model".into(),
                ));
            }
            for (label, g) in labels.iter_mut().zip(gate.predict(texts)?) {
                if g == 0 {
                    *label = "NONE";
                }
            }
        }
        Ok(labels)
    }
}

fn recurrent_logits(
    model: &RecurrentClassifier,
    inputs: &[ModelInput],
    batch: usize,
) -> Result<Array2<f64>> {
    let mut parts = Vec::new();
    for chunk in inputs.chunks(batch.max(1)) {
        let refs: Vec<&ModelInput> = chunk.iter().collect();
        parts.push(model.forward(&refs)?);
    }
    if parts.is_empty() {
        return Ok(Array2::zeros((0, model.spec().hyperparams.num_classes)));
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    ndarray::concatenate(ndarray::Axis(0), &views).map_err(|e| Error::Shape(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub created_by: String,
    pub task: TaskMode,
    pub family: Family,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layout: Option<Vec<TensorInfo>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights_sha256: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_len: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder: Option<EncoderDescriptor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_mode: Option<FeatureMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_variant: Option<crate::pretrained::EncoderVariant>,
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = read_file(path)?;
    serde_json::from_slice(&raw).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))
}

fn save_recurrent(
    dir: &Path,
    model: &RecurrentClassifier,
    m: &mut CheckpointManifest,
) -> Result<()> {
    write_file(
        &dir.join("spec.json"),
        serde_json::to_string_pretty(model.spec())?.as_bytes(),
    )?;
    let blob = model.params().to_bytes();
    m.weights_sha256 = Some(format!("{:x}", Sha256::digest(&blob)));
    m.layout = Some(model.params().layout());
    write_file(&dir.join("weights.bin"), &blob)
}

fn load_recurrent(dir: &Path, m: &CheckpointManifest) -> Result<RecurrentClassifier> {
    let spec: ModelSpec = read_json(&dir.join("spec.json"))?;
    let blob = read_file(&dir.join("weights.bin"))?;
    if let Some(expected) = &m.weights_sha256 {
        let actual = format!("{:x}", Sha256::digest(&blob));
        if &actual != expected {
            return Err(Error::Checkpoint(format!(
                "{} is corrupted (sha256 {actual}, manifest says {expected})",
                dir.join("weights.bin").display()
            )));
        }
    }
    let layout = m
        .layout
        .as_ref()
        .ok_or_else(|| Error::Checkpoint("manifest lacks the weight layout".into()))?;
    let params = Params::from_bytes(layout, &blob)?;
    RecurrentClassifier::from_params(spec, params)
}

/// Writes `tm` into `dir` (created if needed) and returns the manifest.
pub fn save_checkpoint(tm: &TrainedModel, dir: &Path) -> Result<CheckpointManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut m = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        created_by: format!("hateid {}", env!("CARGO_PKG_VERSION")),
        task: tm.task,
        family: tm.family(),
        seed: tm.seed,
        layout: None,
        weights_sha256: None,
        max_len: None,
        encoder: None,
        feature_mode: None,
        encoder_variant: None,
    };
    write_file(
        &dir.join("preprocess.json"),
        serde_json::to_string_pretty(&tm.preprocess)?.as_bytes(),
    )?;
    match &tm.body {
        ModelBody::Tokens {
            model,
            vocab,
            max_len,
        } => {
            save_recurrent(dir, model, &mut m)?;
            vocab.save(&dir.join("vocab.json"))?;
            m.max_len = Some(*max_len);
        }
        ModelBody::Features {
            model,
            encoder,
            mode,
            ..
        } => {
            save_recurrent(dir, model, &mut m)?;
            m.encoder = Some(encoder.clone());
            m.feature_mode = Some(*mode);
        }
        #[cfg(feature = "bert")]
        ModelBody::Finetune { model } => {
            model.save(&dir.join("encoder"))?;
            m.encoder_variant = Some(model.variant());
        }
    }
    write_file(
        &dir.join("manifest.json"),
        serde_json::to_string_pretty(&m)?.as_bytes(),
    )?;
    Ok(m)
}

/// Reads a checkpoint written by [`save_checkpoint`].
///
/// Feature-family encoders are opened lazily, at the first prediction.
pub fn load_checkpoint(dir: &Path) -> Result<TrainedModel> {
    let m: CheckpointManifest = read_json(&dir.join("manifest.json"))?;
    if m.version != CHECKPOINT_VERSION {
        return Err(Error::Checkpoint(format!(
            "{} has format version {}, this build reads version {CHECKPOINT_VERSION}",
            dir.display(),
            m.version
        )));
    }
    let preprocess: PreprocessConfig = read_json(&dir.join("preprocess.json"))?;
    let body = match m.family {
        Family::CharLstm | Family::WordLstm => ModelBody::Tokens {
            model: load_recurrent(dir, &m)?,
            vocab: Vocab::load(&dir.join("vocab.json"))?,
            max_len: m
                .max_len
                .ok_or_else(|| Error::Checkpoint("manifest lacks max_len".into()))?,
        },
        Family::BertFeatureGru => ModelBody::Features {
            model: load_recurrent(dir, &m)?,
            encoder: m
                .encoder
                .clone()
                .ok_or_else(|| Error::Checkpoint("manifest lacks the encoder".into()))?,
            mode: m.feature_mode.unwrap_or_default(),
            handle: None,
        },
        Family::BertFinetune => load_finetune(dir, &m)?,
    };
    Ok(TrainedModel {
        task: m.task,
        preprocess,
        seed: m.seed,
        body,
    })
}

#[cfg(feature = "bert")]
fn load_finetune(dir: &Path, m: &CheckpointManifest) -> Result<ModelBody> {
    let variant = m
        .encoder_variant
        .ok_or_else(|| Error::Checkpoint("manifest lacks the encoder variant".into()))?;
    let model = crate::pretrained::bert::FinetuneClassifier::load(
        &dir.join("encoder"),
        variant,
        m.task.num_outputs(),
    )?;
    Ok(ModelBody::Finetune {
        model: Box::new(model),
    })
}

#[cfg(not(feature = "bert"))]
fn load_finetune(_: &Path, _: &CheckpointManifest) -> Result<ModelBody> {
    Err(Error::EncoderUnavailable(
        "fine-tuned checkpoints need the `bert` feature".into(),
    ))
}
