//! BERT checkpoints through candle: a frozen feature extractor and a
//! fine-tunable sequence classifier.
//!
//! A checkpoint directory holds `config.json`, `model.safetensors` and either
//! `tokenizer.json` or a WordPiece `vocab.txt`. Tensor names may carry a
//! `bert.` prefix and old-style `gamma`/`beta` layer-norm names.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use candle_core::{DType, Device, IndexOp, Tensor, Var, D};
use candle_nn::{AdamW, Linear, Module, Optimizer, ParamsAdamW, VarBuilder, VarMap};
use candle_transformers::models::bert::{BertModel, Config};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use sha2::{Digest, Sha256};
use tokenizers::models::wordpiece::WordPiece;
use tokenizers::normalizers::BertNormalizer;
use tokenizers::pre_tokenizers::bert::BertPreTokenizer;
use tokenizers::processors::bert::BertProcessing;
use tokenizers::{Model, Tokenizer, TruncationParams};

use super::{Encoder, EncoderDescriptor, EncoderVariant, FeatureMatrix};
use crate::error::{Error, Result};

const WEIGHTS_FILE: &str = "model.safetensors";

fn read_config(dir: &Path) -> Result<(Config, String)> {
    let path = dir.join("config.json");
    let raw = fs::read_to_string(&path).map_err(|e| {
        Error::EncoderUnavailable(format!(
            "cannot read {} ({e}); download the checkpoint's config.json, vocab.txt and model.safetensors into {}",
            path.display(),
            dir.display()
        ))
    })?;
    Ok((serde_json::from_str(&raw)?, raw))
}

/// Hidden width declared by the checkpoint in `dir`.
pub fn checkpoint_width(dir: &Path) -> Result<usize> {
    Ok(read_config(dir)?.0.hidden_size)
}

fn load_tokenizer(dir: &Path, max_tokens: usize) -> Result<Tokenizer> {
    let enc_err = |e: tokenizers::Error| Error::Encoder(format!("tokenizer: {e}"));
    let json = dir.join("tokenizer.json");
    let mut tokenizer = if json.exists() {
        Tokenizer::from_file(&json).map_err(enc_err)?
    } else {
        let vocab = dir.join("vocab.txt");
        if !vocab.exists() {
            return Err(Error::EncoderUnavailable(format!(
                "{} has neither tokenizer.json nor vocab.txt",
                dir.display()
            )));
        }
        let model = WordPiece::from_file(&vocab.to_string_lossy())
            .unk_token("[UNK]".into())
            .build()
            .map_err(enc_err)?;
        let id = |t: &str| {
            model
                .get_vocab()
                .get(t)
                .copied()
                .ok_or_else(|| Error::Encoder(format!("vocab.txt lacks {t}")))
        };
        let (cls, sep) = (id("[CLS]")?, id("[SEP]")?);
        let mut t = Tokenizer::new(model);
        t.with_normalizer(Some(BertNormalizer::new(true, true, None, true)))
            .with_pre_tokenizer(Some(BertPreTokenizer))
            .with_post_processor(Some(BertProcessing::new(
                ("[SEP]".into(), sep),
                ("[CLS]".into(), cls),
            )));
        t
    };
    tokenizer.with_padding(None);
    tokenizer
        .with_truncation(Some(TruncationParams {
            max_length: max_tokens,
            ..Default::default()
        }))
        .map_err(enc_err)?;
    Ok(tokenizer)
}

fn load_weights(dir: &Path, device: &Device) -> Result<HashMap<String, Tensor>> {
    let path = dir.join(WEIGHTS_FILE);
    if !path.exists() {
        return Err(Error::EncoderUnavailable(format!(
            "{} is missing; download the checkpoint's safetensors weights into {}",
            path.display(),
            dir.display()
        )));
    }
    let raw = candle_core::safetensors::load(&path, device)?;
    let mut out = HashMap::with_capacity(raw.len());
    for (name, t) in raw {
        let name = name.strip_prefix("bert.").unwrap_or(&name);
        if name.starts_with("cls.") || !t.dtype().is_float() {
            continue;
        }
        let name = if let Some(stem) = name.strip_suffix(".gamma") {
            format!("{stem}.weight")
        } else if let Some(stem) = name.strip_suffix(".beta") {
            format!("{stem}.bias")
        } else {
            name.to_string()
        };
        out.insert(name, t.to_dtype(DType::F32)?);
    }
    Ok(out)
}

fn checksum_tensors<'a>(tensors: impl Iterator<Item = (&'a String, &'a Tensor)>) -> Result<String> {
    let mut sorted: Vec<_> = tensors.collect();
    sorted.sort_by(|a, b| a.0.cmp(b.0));
    let mut h = Sha256::new();
    for (name, t) in sorted {
        h.update(name.as_bytes());
        for x in t.flatten_all()?.to_vec1::<f32>()? {
            h.update(x.to_le_bytes());
        }
    }
    Ok(format!("{:x}", h.finalize()))
}

struct Batch {
    ids: Tensor,
    types: Tensor,
    mask: Tensor,
    lengths: Vec<usize>,
}

fn tokenize(tokenizer: &Tokenizer, texts: &[&str], device: &Device) -> Result<Batch> {
    let encodings = tokenizer
        .encode_batch(texts.to_vec(), true)
        .map_err(|e| Error::Encoder(format!("tokenizer: {e}")))?;
    let lengths: Vec<usize> = encodings.iter().map(|e| e.get_ids().len()).collect();
    let width = lengths.iter().copied().max().unwrap_or(0).max(1);
    let mut ids = vec![0u32; texts.len() * width];
    let mut mask = vec![0u32; texts.len() * width];
    for (b, e) in encodings.iter().enumerate() {
        for (t, &id) in e.get_ids().iter().enumerate() {
            ids[b * width + t] = id;
            mask[b * width + t] = 1;
        }
    }
    let shape = (texts.len(), width);
    let ids = Tensor::from_vec(ids, shape, device)?;
    Ok(Batch {
        types: ids.zeros_like()?,
        ids,
        mask: Tensor::from_vec(mask, shape, device)?,
        lengths,
    })
}

/// Frozen encoder returning last-layer token states.
pub struct BertEncoder {
    variant: EncoderVariant,
    dir: PathBuf,
    model: BertModel,
    tokenizer: Tokenizer,
    checksum: String,
    device: Device,
}

impl BertEncoder {
    /// Loads the checkpoint in `dir`; its hidden width must equal
    /// `variant.hidden_width`.
    pub fn load(dir: &Path, variant: EncoderVariant) -> Result<Self> {
        let device = Device::Cpu;
        let (config, _) = read_config(dir)?;
        if config.hidden_size != variant.hidden_width {
            return Err(Error::Encoder(format!(
                "{} reports hidden width {}, but the {} variant expects {}",
                dir.display(),
                config.hidden_size,
                variant.name,
                variant.hidden_width
            )));
        }
        if variant.max_tokens > config.max_position_embeddings {
            return Err(Error::InvalidConfig(format!(
                "max_tokens {} exceeds the encoder's {} positions",
                variant.max_tokens, config.max_position_embeddings
            )));
        }
        let tokenizer = load_tokenizer(dir, variant.max_tokens)?;
        let weights = load_weights(dir, &device)?;
        let checksum = checksum_tensors(weights.iter())?;
        let vb = VarBuilder::from_tensors(weights, DType::F32, &device);
        let model = BertModel::load(vb, &config)?;
        log::info!("loaded {} encoder from {}", variant.name, dir.display());
        Ok(BertEncoder {
            variant,
            dir: dir.to_path_buf(),
            model,
            tokenizer,
            checksum,
            device,
        })
    }
}

impl Encoder for BertEncoder {
    fn width(&self) -> usize {
        self.variant.hidden_width
    }

    fn max_tokens(&self) -> usize {
        self.variant.max_tokens
    }

    fn cache_namespace(&self) -> String {
        self.variant.name.to_string()
    }

    fn checksum(&self) -> String {
        self.checksum.clone()
    }

    fn descriptor(&self) -> EncoderDescriptor {
        EncoderDescriptor::Bert {
            variant: self.variant.name,
            dir: Some(self.dir.clone()),
            max_tokens: self.variant.max_tokens,
        }
    }

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<FeatureMatrix>> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let batch = tokenize(&self.tokenizer, texts, &self.device)?;
        let hidden = self
            .model
            .forward(&batch.ids, &batch.types, Some(&batch.mask))?;
        let width = self.width();
        batch
            .lengths
            .iter()
            .enumerate()
            .map(|(b, &len)| {
                let rows = hidden.i((b, ..len, ..))?.flatten_all()?.to_vec1::<f32>()?;
                FeatureMatrix::new(len, width, rows)
            })
            .collect()
    }
}

/// BERT with a pooler (dense + tanh over `[CLS]`), dropout and a linear
/// head; every weight is trainable.
pub struct FinetuneClassifier {
    variant: EncoderVariant,
    config_json: String,
    tokenizer: Tokenizer,
    varmap: VarMap,
    model: BertModel,
    pooler: Linear,
    head: Linear,
    num_classes: usize,
    dropout: f64,
    device: Device,
}

/// Default fine-tuning schedule: learning rate, epochs, batch size.
pub const FINETUNE_LR: f64 = 2e-5;
pub const FINETUNE_EPOCHS: usize = 3;
pub const FINETUNE_BATCH: usize = 32;

/// Loads the encoder in `dir` and attaches a freshly initialized
/// `W → num_classes` head (U(±1/√W) under `seed`).
pub fn build_finetune_classifier(
    dir: &Path,
    variant: EncoderVariant,
    num_classes: usize,
    seed: u64,
) -> Result<FinetuneClassifier> {
    FinetuneClassifier::from_dir(dir, variant, num_classes, seed, true)
}

impl FinetuneClassifier {
    fn from_dir(
        dir: &Path,
        variant: EncoderVariant,
        num_classes: usize,
        seed: u64,
        fresh_head: bool,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidConfig("num_classes must be positive".into()));
        }
        let device = Device::Cpu;
        let (config, config_json) = read_config(dir)?;
        if config.hidden_size != variant.hidden_width {
            return Err(Error::Encoder(format!(
                "{} reports hidden width {}, but the {} variant expects {}",
                dir.display(),
                config.hidden_size,
                variant.name,
                variant.hidden_width
            )));
        }
        let tokenizer = load_tokenizer(dir, variant.max_tokens)?;
        let mut weights = load_weights(dir, &device)?;
        let w = config.hidden_size;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        if !weights.contains_key("pooler.dense.weight") {
            log::warn!("{} has no pooler weights; initializing them", dir.display());
            let normal = Normal::new(0.0f32, 0.02).expect("valid normal");
            let data: Vec<f32> = (0..w * w).map(|_| normal.sample(&mut rng)).collect();
            weights.insert(
                "pooler.dense.weight".into(),
                Tensor::from_vec(data, (w, w), &device)?,
            );
            weights.insert(
                "pooler.dense.bias".into(),
                Tensor::zeros(w, DType::F32, &device)?,
            );
        }
        if fresh_head || !weights.contains_key("classifier.weight") {
            let k = 1.0 / (w as f32).sqrt();
            let uniform = Uniform::new_inclusive(-k, k).expect("valid range");
            let wdata: Vec<f32> = (0..num_classes * w)
                .map(|_| uniform.sample(&mut rng))
                .collect();
            let bdata: Vec<f32> = (0..num_classes).map(|_| uniform.sample(&mut rng)).collect();
            weights.insert(
                "classifier.weight".into(),
                Tensor::from_vec(wdata, (num_classes, w), &device)?,
            );
            weights.insert(
                "classifier.bias".into(),
                Tensor::from_vec(bdata, num_classes, &device)?,
            );
        }
        let varmap = VarMap::new();
        {
            let mut data = varmap.data().lock().expect("varmap lock");
            for (name, t) in weights {
                data.insert(name, Var::from_tensor(&t)?);
            }
        }
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, &device);
        let model = BertModel::load(vb.clone(), &config)?;
        let pooler = candle_nn::linear(w, w, vb.pp("pooler.dense"))?;
        let head = candle_nn::linear(w, num_classes, vb.pp("classifier"))?;
        Ok(FinetuneClassifier {
            variant,
            config_json,
            tokenizer,
            varmap,
            model,
            pooler,
            head,
            num_classes,
            dropout: config
                .classifier_dropout
                .unwrap_or(config.hidden_dropout_prob),
            device,
        })
    }

    /// Reloads a classifier written by [`FinetuneClassifier::save`].
    pub fn load(dir: &Path, variant: EncoderVariant, num_classes: usize) -> Result<Self> {
        Self::from_dir(dir, variant, num_classes, 0, false)
    }

    /// Writes config, tokenizer and all weights (head included) to `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let cfg = dir.join("config.json");
        fs::write(&cfg, &self.config_json).map_err(|e| Error::io(&cfg, e))?;
        self.tokenizer
            .save(dir.join("tokenizer.json"), false)
            .map_err(|e| Error::Encoder(format!("tokenizer: {e}")))?;
        self.varmap.save(dir.join(WEIGHTS_FILE))?;
        Ok(())
    }

    pub fn variant(&self) -> EncoderVariant {
        self.variant
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    /// Trainable scalars in the classification head alone.
    pub fn head_param_count(&self) -> usize {
        self.variant.hidden_width * self.num_classes + self.num_classes
    }

    /// Trainable scalars in encoder, pooler and head.
    pub fn param_count(&self) -> usize {
        self.varmap.all_vars().iter().map(|v| v.elem_count()).sum()
    }

    /// Digest of every weight.
    pub fn checksum(&self) -> Result<String> {
        let data = self.varmap.data().lock().expect("varmap lock");
        let tensors: Vec<(String, Tensor)> = data
            .iter()
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        drop(data);
        checksum_tensors(tensors.iter().map(|(k, t)| (k, t)))
    }

    /// Digest of the head weights.
    pub fn head_checksum(&self) -> Result<String> {
        let data = self.varmap.data().lock().expect("varmap lock");
        let tensors: Vec<(String, Tensor)> = data
            .iter()
            .filter(|(k, _)| k.starts_with("classifier."))
            .map(|(k, v)| (k.clone(), v.as_tensor().clone()))
            .collect();
        drop(data);
        checksum_tensors(tensors.iter().map(|(k, t)| (k, t)))
    }

    fn logits_tensor(&self, texts: &[&str], rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let batch = tokenize(&self.tokenizer, texts, &self.device)?;
        let hidden = self
            .model
            .forward(&batch.ids, &batch.types, Some(&batch.mask))?;
        let cls = hidden.i((.., 0, ..))?.contiguous()?;
        let mut pooled = self.pooler.forward(&cls)?.tanh()?;
        if let Some(rng) = rng {
            if self.dropout > 0.0 {
                let (b, w) = pooled.dims2()?;
                let m = crate::nn::dropout_mask(b, w, self.dropout, rng);
                let m: Vec<f32> = m.iter().map(|&x| x as f32).collect();
                pooled = pooled.mul(&Tensor::from_vec(m, (b, w), &self.device)?)?;
            }
        }
        Ok(self.head.forward(&pooled)?)
    }

    /// Eval-mode logits, `texts.len() × num_classes`.
    pub fn logits(&self, texts: &[&str]) -> Result<Array2<f64>> {
        let t = self.logits_tensor(texts, None)?;
        let rows = t.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        let c = self.num_classes;
        Array2::from_shape_vec((rows.len(), c), rows.concat())
            .map_err(|e| Error::Shape(e.to_string()))
    }

    pub fn optimizer(&self, lr: f64) -> Result<AdamW> {
        let params = ParamsAdamW {
            lr,
            weight_decay: 0.01,
            ..Default::default()
        };
        Ok(AdamW::new(self.varmap.all_vars(), params)?)
    }

    /// One optimizer step on a batch; returns the mean loss.
    pub fn train_step(
        &mut self,
        opt: &mut AdamW,
        texts: &[&str],
        targets: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<f64> {
        let logits = self.logits_tensor(texts, Some(rng))?;
        let loss = if self.num_classes == 1 {
            let y: Vec<f32> = targets.iter().map(|&t| t as f32).collect();
            let y = Tensor::from_vec(y, (targets.len(), 1), &self.device)?;
            // max(z, 0) − z·y + log(1 + e^−|z|)
            let softplus = logits.abs()?.neg()?.exp()?.affine(1.0, 1.0)?.log()?;
            (logits.relu()? - logits.mul(&y)? + softplus)?.mean_all()?
        } else {
            let y: Vec<u32> = targets.iter().map(|&t| t as u32).collect();
            let y = Tensor::from_vec(y, targets.len(), &self.device)?;
            let logp = candle_nn::ops::log_softmax(&logits, D::Minus1)?;
            candle_nn::loss::nll(&logp, &y)?
        };
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        opt.backward_step(&loss)?;
        Ok(value)
    }

    /// Copies of every weight, for restoring the best epoch.
    pub fn snapshot(&self) -> Result<Vec<(String, Tensor)>> {
        let data = self.varmap.data().lock().expect("varmap lock");
        data.iter()
            .map(|(k, v)| Ok((k.clone(), v.as_tensor().copy()?)))
            .collect()
    }

    pub fn restore(&mut self, snapshot: &[(String, Tensor)]) -> Result<()> {
        let data = self.varmap.data().lock().expect("varmap lock");
        for (k, t) in snapshot {
            if let Some(v) = data.get(k) {
                v.set(t)?;
            }
        }
        Ok(())
    }
}

/// Writes a small randomly initialized BERT checkpoint (old-style names
/// with a `bert.` prefix and a WordPiece `vocab.txt`) for tests and demos.
pub fn write_random_checkpoint(
    dir: &Path,
    hidden: usize,
    layers: usize,
    heads: usize,
    words: &[&str],
    seed: u64,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut vocab: Vec<String> = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for w in words {
        let w = w.to_lowercase();
        if !vocab.contains(&w) {
            vocab.push(w);
        }
    }
    for c in 'a'..='z' {
        vocab.push(format!("##{c}"));
        if !vocab.contains(&c.to_string()) {
            vocab.push(c.to_string());
        }
    }
    let vpath = dir.join("vocab.txt");
    fs::write(&vpath, vocab.join("\n") + "\n").map_err(|e| Error::io(&vpath, e))?;
    let config = serde_json::json!({
        "architectures": ["BertModel"],
        "vocab_size": vocab.len(),
        "hidden_size": hidden,
        "num_hidden_layers": layers,
        "num_attention_heads": heads,
        "intermediate_size": hidden * 2,
        "hidden_act": "gelu",
        "hidden_dropout_prob": 0.1,
        "attention_probs_dropout_prob": 0.1,
        "max_position_embeddings": 128,
        "type_vocab_size": 2,
        "initializer_range": 0.02,
        "layer_norm_eps": 1e-12,
        "pad_token_id": 0,
        "model_type": "bert"
    });
    let cpath = dir.join("config.json");
    fs::write(&cpath, serde_json::to_string_pretty(&config)?).map_err(|e| Error::io(&cpath, e))?;

    let cfg: Config = serde_json::from_value(config)?;
    let device = Device::Cpu;
    let varmap = VarMap::new();
    let vb = VarBuilder::from_varmap(&varmap, DType::F32, &device);
    BertModel::load(vb.clone(), &cfg)?;
    candle_nn::linear(hidden, hidden, vb.pp("pooler.dense"))?;
    let data = varmap.data().lock().expect("varmap lock");
    let mut names: Vec<&String> = data.keys().collect();
    names.sort();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0f32, 0.02).expect("valid normal");
    let mut out = HashMap::new();
    for name in names {
        let shape = data[name].shape().clone();
        let n = shape.elem_count();
        let values: Vec<f32> = if name.contains("LayerNorm.weight") {
            vec![1.0; n]
        } else if name.ends_with(".bias") {
            vec![0.0; n]
        } else {
            (0..n).map(|_| normal.sample(&mut rng)).collect()
        };
        let stored = name
            .replace("LayerNorm.weight", "LayerNorm.gamma")
            .replace("LayerNorm.bias", "LayerNorm.beta");
        out.insert(
            format!("bert.{stored}"),
            Tensor::from_vec(values, shape, &device)?,
        );
    }
    candle_core::safetensors::save(&out, dir.join(WEIGHTS_FILE))?;
    Ok(())
}
