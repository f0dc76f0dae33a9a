//! Pretrained transformer encoders: frozen feature extraction with an
//! on-disk cache, a deterministic stub for tests, and (with the `bert`
//! feature) real BERT checkpoints plus an end-to-end fine-tuning classifier.

#[cfg(feature = "bert")]
pub mod bert;
mod stub;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use stub::{encoder_stub, StubEncoder};

/// Environment variable naming the directory that holds encoder weights.
pub const ENCODER_DIR_ENV: &str = "HATEID_ENCODER_DIR";
/// Environment variable naming the default feature-cache directory.
pub const FEATURE_CACHE_ENV: &str = "HATEID_FEATURE_CACHE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VariantName {
    Base,
    Large,
}

impl VariantName {
    pub fn as_str(self) -> &'static str {
        match self {
            VariantName::Base => "base",
            VariantName::Large => "large",
        }
    }

    /// Hidden width of the standard uncased English checkpoints.
    pub fn hidden_width(self) -> usize {
        match self {
            VariantName::Base => 768,
            VariantName::Large => 1024,
        }
    }

    /// Directory name of the reference checkpoint under the encoder dir.
    pub fn checkpoint_name(self) -> &'static str {
        match self {
            VariantName::Base => "bert-base-uncased",
            VariantName::Large => "bert-large-uncased",
        }
    }
}

impl fmt::Display for VariantName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VariantName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "base" => Ok(VariantName::Base),
            "large" => Ok(VariantName::Large),
            _ => Err(Error::InvalidConfig(format!(
                "unknown encoder variant {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderVariant {
    pub name: VariantName,
    pub hidden_width: usize,
    pub max_tokens: usize,
}

impl EncoderVariant {
    pub fn new(name: VariantName) -> Self {
        EncoderVariant {
            name,
            hidden_width: name.hidden_width(),
            max_tokens: 128,
        }
    }
}

/// Token vectors (`rows × width`) for one text.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub rows: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl FeatureMatrix {
    pub fn new(rows: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * width {
            return Err(Error::Shape(format!(
                "{} values for a {rows}x{width} feature matrix",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::Encoder(
                "encoder produced non-finite features".into(),
            ));
        }
        Ok(FeatureMatrix { rows, width, data })
    }

    pub fn row(&self, t: usize) -> &[f32] {
        &self.data[t * self.width..(t + 1) * self.width]
    }

    /// The first (classification-token) vector as a one-row matrix.
    pub fn pooled(&self) -> FeatureMatrix {
        FeatureMatrix {
            rows: self.rows.min(1),
            width: self.width,
            data: self.data[..self.rows.min(1) * self.width].to_vec(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().flat_map(|x| x.to_le_bytes()).collect()
    }

    pub fn from_bytes(rows: usize, width: usize, bytes: &[u8]) -> Result<Self> {
        if bytes.len() != rows * width * 4 {
            return Err(Error::Checkpoint(format!(
                "feature blob has {} bytes, expected {}",
                bytes.len(),
                rows * width * 4
            )));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk")))
            .collect();
        FeatureMatrix::new(rows, width, data)
    }
}

/// Whether the downstream GRU sees every token vector or only the pooled one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    #[default]
    Sequence,
    Pooled,
}

/// A text encoder producing last-layer token vectors.
pub trait Encoder: Send + Sync {
    fn width(&self) -> usize;

    fn max_tokens(&self) -> usize;

    /// Subdirectory of the feature cache this encoder's vectors live in.
    fn cache_namespace(&self) -> String;

    /// Digest of the encoder weights.
    fn checksum(&self) -> String;

    /// How to reopen this encoder later (recorded in checkpoints).
    fn descriptor(&self) -> EncoderDescriptor;

    fn encode_batch(&self, texts: &[&str]) -> Result<Vec<FeatureMatrix>>;

    fn encode(&self, text: &str) -> Result<FeatureMatrix> {
        Ok(self.encode_batch(&[text])?.remove(0))
    }
}

/// Serializable recipe for reconstructing an encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EncoderDescriptor {
    Stub {
        width: usize,
        seed: u64,
        max_tokens: usize,
    },
    Bert {
        variant: VariantName,
        /// Explicit weights directory; otherwise resolved from the
        /// environment at load time.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dir: Option<PathBuf>,
        max_tokens: usize,
    },
}

impl EncoderDescriptor {
    pub fn open(&self) -> Result<Arc<dyn Encoder>> {
        match self {
            EncoderDescriptor::Stub {
                width,
                seed,
                max_tokens,
            } => Ok(Arc::new(
                StubEncoder::new(*width, *seed)?.with_max_tokens(*max_tokens),
            )),
            #[cfg(feature = "bert")]
            EncoderDescriptor::Bert { .. } => Ok(Arc::new(bert::BertEncoder::load(
                &self.bert_dir()?,
                self.bert_variant()?,
            )?)),
            #[cfg(not(feature = "bert"))]
            EncoderDescriptor::Bert { .. } => Err(Error::EncoderUnavailable(
                "this build lacks the `bert` feature; rebuild with --features bert".into(),
            )),
        }
    }

    /// Parses `base`, `large`, `stub:WIDTH` or `stub:WIDTH:SEED`.
    pub fn parse(spec: &str, max_tokens: usize) -> Result<Self> {
        let parts: Vec<&str> = spec.split(':').collect();
        match parts.as_slice() {
            ["stub", width] | ["stub", width, _] => {
                let width = width
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad stub width in {spec:?}")))?;
                let seed = match parts.get(2) {
                    Some(s) => s
                        .parse()
                        .map_err(|_| Error::InvalidConfig(format!("bad stub seed in {spec:?}")))?,
                    None => 0,
                };
                Ok(EncoderDescriptor::Stub {
                    width,
                    seed,
                    max_tokens,
                })
            }
            [variant] => Ok(EncoderDescriptor::Bert {
                variant: variant.parse()?,
                dir: None,
                max_tokens,
            }),
            [variant, dir] => Ok(EncoderDescriptor::Bert {
                variant: variant.parse()?,
                dir: Some(PathBuf::from(dir)),
                max_tokens,
            }),
            _ => Err(Error::InvalidConfig(format!("bad encoder spec {spec:?}"))),
        }
    }

    /// Weights directory: the explicit one, else the reference checkpoint
    /// under `$HATEID_ENCODER_DIR`.
    pub fn bert_dir(&self) -> Result<PathBuf> {
        match self {
            EncoderDescriptor::Bert { dir: Some(d), .. } => Ok(d.clone()),
            EncoderDescriptor::Bert {
                variant, dir: None, ..
            } => resolve_encoder_dir(*variant),
            EncoderDescriptor::Stub { .. } => Err(Error::InvalidConfig(
                "the stub encoder has no weights".into(),
            )),
        }
    }

    /// The variant to load. Reference checkpoints must have the standard
    /// width; an explicit directory may hold any width, read from its config.
    #[cfg(feature = "bert")]
    pub fn bert_variant(&self) -> Result<EncoderVariant> {
        let EncoderDescriptor::Bert {
            variant,
            dir,
            max_tokens,
        } = self
        else {
            return Err(Error::InvalidConfig("not a BERT encoder".into()));
        };
        let mut v = EncoderVariant::new(*variant);
        v.max_tokens = *max_tokens;
        if let Some(d) = dir {
            v.hidden_width = bert::checkpoint_width(d)?;
        }
        Ok(v)
    }

    pub fn variant(&self) -> Option<VariantName> {
        match self {
            EncoderDescriptor::Bert { variant, .. } => Some(*variant),
            EncoderDescriptor::Stub { .. } => None,
        }
    }
}

/// Locates the weights for `variant` under `$HATEID_ENCODER_DIR`.
pub fn resolve_encoder_dir(variant: VariantName) -> Result<PathBuf> {
    let root = std::env::var_os(ENCODER_DIR_ENV).ok_or_else(|| {
        Error::EncoderUnavailable(format!(
            "{ENCODER_DIR_ENV} is not set; download {name} (config.json, vocab.txt or tokenizer.json, \
             model.safetensors) from the Hugging Face hub into $({ENCODER_DIR_ENV})/{name}",
            name = variant.checkpoint_name()
        ))
    })?;
    let dir = PathBuf::from(root).join(variant.checkpoint_name());
    if !dir.join("config.json").exists() {
        return Err(Error::EncoderUnavailable(format!(
            "{} has no config.json; download {} from the Hugging Face hub into it",
            dir.display(),
            variant.checkpoint_name()
        )));
    }
    Ok(dir)
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheSidecar {
    width: usize,
    tokens: usize,
    max_tokens: usize,
    encoder_checksum: String,
}

/// Content-addressed store of encoder outputs:
/// `<dir>/<namespace>/<sha256(text)>.bin` plus a JSON sidecar.
///
/// Entries are published by writing a temporary file and renaming it, so
/// concurrent readers never see partial blobs.
#[derive(Debug)]
pub struct FeatureCache {
    dir: PathBuf,
    hits: AtomicUsize,
    misses: AtomicUsize,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        FeatureCache {
            dir: dir.into(),
            hits: AtomicUsize::new(0),
            misses: AtomicUsize::new(0),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hits(&self) -> usize {
        self.hits.load(Ordering::Relaxed)
    }

    pub fn misses(&self) -> usize {
        self.misses.load(Ordering::Relaxed)
    }

    pub fn key(text: &str) -> String {
        format!("{:x}", Sha256::digest(text.as_bytes()))
    }

    fn paths(&self, encoder: &dyn Encoder, text: &str) -> (PathBuf, PathBuf) {
        let base = self
            .dir
            .join(encoder.cache_namespace())
            .join(Self::key(text));
        (base.with_extension("bin"), base.with_extension("json"))
    }

    fn read(&self, encoder: &dyn Encoder, checksum: &str, text: &str) -> Option<FeatureMatrix> {
        let (bin, json) = self.paths(encoder, text);
        let sidecar: CacheSidecar = serde_json::from_str(&fs::read_to_string(json).ok()?).ok()?;
        if sidecar.encoder_checksum != checksum
            || sidecar.width != encoder.width()
            || sidecar.max_tokens != encoder.max_tokens()
        {
            return None;
        }
        let bytes = fs::read(bin).ok()?;
        FeatureMatrix::from_bytes(sidecar.tokens, sidecar.width, &bytes).ok()
    }

    fn write(
        &self,
        encoder: &dyn Encoder,
        checksum: &str,
        text: &str,
        fm: &FeatureMatrix,
    ) -> Result<()> {
        let (bin, json) = self.paths(encoder, text);
        let parent = bin.parent().expect("cache path has a parent");
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let sidecar = CacheSidecar {
            width: fm.width,
            tokens: fm.rows,
            max_tokens: encoder.max_tokens(),
            encoder_checksum: checksum.to_string(),
        };
        atomic_write(&bin, &fm.to_bytes())?;
        atomic_write(&json, serde_json::to_string(&sidecar)?.as_bytes())
    }

    /// Encodes `texts`, serving cached entries and storing new ones.
    pub fn encode_all(&self, encoder: &dyn Encoder, texts: &[&str]) -> Result<Vec<FeatureMatrix>> {
        let checksum = encoder.checksum();
        let mut out: Vec<Option<FeatureMatrix>> = texts
            .iter()
            .map(|t| self.read(encoder, &checksum, t))
            .collect();
        let missing: Vec<usize> = (0..texts.len()).filter(|&i| out[i].is_none()).collect();
        self.hits
            .fetch_add(texts.len() - missing.len(), Ordering::Relaxed);
        self.misses.fetch_add(missing.len(), Ordering::Relaxed);
        for chunk in missing.chunks(32) {
            let batch: Vec<&str> = chunk.iter().map(|&i| texts[i]).collect();
            let encoded = encoder.encode_batch(&batch)?;
            for (&i, fm) in chunk.iter().zip(encoded) {
                self.write(encoder, &checksum, texts[i], &fm)?;
                out[i] = Some(fm);
            }
        }
        Ok(out.into_iter().map(|o| o.expect("filled")).collect())
    }
}

pub(crate) fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "tmp-{}-{:?}",
        std::process::id(),
        std::thread::current().id()
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Frozen feature extraction for `texts`, cached under `cache_dir`.
pub fn encode_features(
    encoder: &dyn Encoder,
    texts: &[&str],
    cache_dir: &Path,
) -> Result<Vec<FeatureMatrix>> {
    FeatureCache::new(cache_dir).encode_all(encoder, texts)
}
