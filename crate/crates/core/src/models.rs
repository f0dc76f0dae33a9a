//! Recurrent classifier architectures: embedding (or encoder features) into
//! one or more LSTM/GRU layers, dropout on the final hidden state, then a
//! linear head.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::recurrent::{self, CellKind, LayerGrads, LayerTrace, LayerWeights};
use crate::nn::{dropout_mask, loss_and_grad, Params};
use crate::pretrained::{FeatureMatrix, VariantName};
use crate::vocab::{EmbeddingMatrix, IdSequence, Level, PAD_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    CharLstm,
    WordLstm,
    BertFeatureGru,
    BertFinetune,
}

impl Family {
    pub const ALL: [Family; 4] = [
        Family::CharLstm,
        Family::WordLstm,
        Family::BertFeatureGru,
        Family::BertFinetune,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::CharLstm => "char_lstm",
            Family::WordLstm => "word_lstm",
            Family::BertFeatureGru => "bert_feature_gru",
            Family::BertFinetune => "bert_finetune",
        }
    }

    /// Name used in result tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Family::CharLstm => "Char_LSTM",
            Family::WordLstm => "Word_LSTM",
            Family::BertFeatureGru => "BERT feature extraction",
            Family::BertFinetune => "BERT fine-tuning",
        }
    }

    pub fn cell(self) -> Option<CellKind> {
        match self {
            Family::CharLstm | Family::WordLstm => Some(CellKind::Lstm),
            Family::BertFeatureGru => Some(CellKind::Gru),
            Family::BertFinetune => None,
        }
    }

    pub fn level(self) -> Option<Level> {
        match self {
            Family::CharLstm => Some(Level::Char),
            Family::WordLstm => Some(Level::Word),
            _ => None,
        }
    }

    pub fn uses_encoder(self) -> bool {
        matches!(self, Family::BertFeatureGru | Family::BertFinetune)
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "char_lstm" | "char" => Ok(Family::CharLstm),
            "word_lstm" | "word" => Ok(Family::WordLstm),
            "bert_feature_gru" | "feature_gru" | "feature" => Ok(Family::BertFeatureGru),
            "bert_finetune" | "finetune" => Ok(Family::BertFinetune),
            _ => Err(Error::InvalidConfig(format!(
                "unknown model family {s:?} (expected char_lstm, word_lstm, bert_feature_gru or bert_finetune)"
            ))),
        }
    }
}

pub const CHAR_EMBEDDING_GRID: [usize; 3] = [50, 100, 200];
pub const CHAR_HIDDEN_GRID: [usize; 4] = [16, 32, 64, 128];
pub const WORD_EMBEDDING_GRID: [usize; 2] = [100, 300];
pub const WORD_HIDDEN_GRID: [usize; 5] = [32, 64, 128, 256, 512];
pub const FEATURE_HIDDEN_GRID: [usize; 5] = [32, 64, 128, 256, 512];
pub const DROPOUT_GRID: [f64; 3] = [0.25, 0.5, 0.75];

fn default_layers() -> usize {
    1
}

/// One grid point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub family: Family,
    /// Ignored by the encoder families, whose input width is the encoder's.
    pub embedding_dim: usize,
    pub hidden_dim: usize,
    pub dropout: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub encoder_variant: Option<VariantName>,
    #[serde(default)]
    pub pretrained_embeddings: bool,
    /// Head outputs: 1 for the sigmoid binary head, 3 or 4 for softmax.
    pub num_classes: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
}

impl HyperParams {
    pub fn char_lstm(embedding_dim: usize, hidden_dim: usize, dropout: f64) -> Self {
        HyperParams {
            family: Family::CharLstm,
            embedding_dim,
            hidden_dim,
            dropout,
            encoder_variant: None,
            pretrained_embeddings: false,
            num_classes: 1,
            layers: 1,
        }
    }

    pub fn word_lstm(embedding_dim: usize, hidden_dim: usize, dropout: f64) -> Self {
        HyperParams {
            family: Family::WordLstm,
            ..Self::char_lstm(embedding_dim, hidden_dim, dropout)
        }
    }

    pub fn feature_gru(variant: Option<VariantName>, hidden_dim: usize, dropout: f64) -> Self {
        HyperParams {
            family: Family::BertFeatureGru,
            embedding_dim: 0,
            encoder_variant: variant,
            ..Self::char_lstm(0, hidden_dim, dropout)
        }
    }

    pub fn finetune(variant: VariantName) -> Self {
        HyperParams {
            family: Family::BertFinetune,
            embedding_dim: 0,
            hidden_dim: 0,
            dropout: 0.1,
            encoder_variant: Some(variant),
            pretrained_embeddings: false,
            num_classes: 1,
            layers: 1,
        }
    }

    pub fn with_classes(mut self, num_classes: usize) -> Self {
        self.num_classes = num_classes;
        self
    }

    /// Structural checks, plus membership in the published grids when
    /// `grid_constrained`.
    pub fn validate(&self, grid_constrained: bool) -> Result<()> {
        if !(0.0..=1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!(
                "dropout {} outside [0, 1]",
                self.dropout
            )));
        }
        if !matches!(self.num_classes, 1 | 3 | 4) {
            return Err(Error::InvalidConfig(format!(
                "num_classes must be 1, 3 or 4, got {}",
                self.num_classes
            )));
        }
        if self.family != Family::BertFinetune {
            if self.hidden_dim == 0 {
                return Err(Error::InvalidConfig("hidden_dim must be positive".into()));
            }
            if self.layers == 0 {
                return Err(Error::InvalidConfig("layers must be at least 1".into()));
            }
        }
        if self.family.level().is_some() && self.embedding_dim == 0 {
            return Err(Error::InvalidConfig(
                "embedding_dim must be positive".into(),
            ));
        }
        if self.pretrained_embeddings && self.family != Family::WordLstm {
            return Err(Error::InvalidConfig(
                "pretrained embeddings only apply to word_lstm".into(),
            ));
        }
        if self.family == Family::BertFinetune && self.encoder_variant.is_none() {
            return Err(Error::InvalidConfig(
                "fine-tuning needs an encoder variant".into(),
            ));
        }
        if grid_constrained {
            self.check_grid()?;
        }
        Ok(())
    }

    fn check_grid(&self) -> Result<()> {
        let (emb, hid): (&[usize], &[usize]) = match self.family {
            Family::CharLstm => (&CHAR_EMBEDDING_GRID, &CHAR_HIDDEN_GRID),
            Family::WordLstm => (&WORD_EMBEDDING_GRID, &WORD_HIDDEN_GRID),
            Family::BertFeatureGru => (&[], &FEATURE_HIDDEN_GRID),
            Family::BertFinetune => return Ok(()),
        };
        let fail = |what: &str, v: String, allowed: String| {
            Err(Error::GridViolation(format!(
                "{} {what} {v} is not in the grid {allowed}",
                self.family.display_name()
            )))
        };
        if !emb.is_empty() && !emb.contains(&self.embedding_dim) {
            return fail(
                "embedding_dim",
                self.embedding_dim.to_string(),
                format!("{emb:?}"),
            );
        }
        if !hid.contains(&self.hidden_dim) {
            return fail(
                "hidden_dim",
                self.hidden_dim.to_string(),
                format!("{hid:?}"),
            );
        }
        if !DROPOUT_GRID.contains(&self.dropout) {
            return fail(
                "dropout",
                self.dropout.to_string(),
                format!("{DROPOUT_GRID:?}"),
            );
        }
        if self.layers != 1 && self.family != Family::WordLstm {
            return fail("layers", self.layers.to_string(), "[1]".into());
        }
        Ok(())
    }
}

/// Architecture description: hyperparameters plus the input dimensions they
/// do not determine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub hyperparams: HyperParams,
    /// Vocabulary size for the token families, 0 otherwise.
    pub vocab_size: usize,
    /// Width of each input step: E for the token families, the encoder
    /// hidden width for the encoder families.
    pub input_width: usize,
    #[serde(default)]
    pub grid_constrained: bool,
}

impl ModelSpec {
    pub fn for_tokens(hp: HyperParams, vocab_size: usize) -> Self {
        ModelSpec {
            input_width: hp.embedding_dim,
            hyperparams: hp,
            vocab_size,
            grid_constrained: false,
        }
    }

    pub fn for_features(hp: HyperParams, width: usize) -> Self {
        ModelSpec {
            hyperparams: hp,
            vocab_size: 0,
            input_width: width,
            grid_constrained: false,
        }
    }

    pub fn grid_constrained(mut self, on: bool) -> Self {
        self.grid_constrained = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.hyperparams.validate(self.grid_constrained)?;
        let hp = &self.hyperparams;
        if hp.family.level().is_some() {
            if self.vocab_size < 2 {
                return Err(Error::InvalidConfig(
                    "vocabulary needs at least <pad> and <unk>".into(),
                ));
            }
            if self.input_width != hp.embedding_dim {
                return Err(Error::InvalidConfig(format!(
                    "input width {} differs from embedding_dim {}",
                    self.input_width, hp.embedding_dim
                )));
            }
        } else if self.input_width == 0 {
            return Err(Error::InvalidConfig(
                "encoder width must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Trainable scalars of the model `spec` describes.
///
/// Token families: `V·E + Σ_layers 4((in+H)H + H) + HC + C`; feature GRU:
/// `3((W+H)H + H) + HC + C`; fine-tuning: the head only, `WC + C`.
pub fn param_count(spec: &ModelSpec) -> Result<usize> {
    spec.validate()?;
    let hp = &spec.hyperparams;
    let c = hp.num_classes;
    let Some(cell) = hp.family.cell() else {
        return Ok(spec.input_width * c + c);
    };
    let h = hp.hidden_dim;
    let mut total = spec.vocab_size
        * if hp.family.level().is_some() {
            spec.input_width
        } else {
            0
        };
    for layer in 0..hp.layers {
        let input = if layer == 0 { spec.input_width } else { h };
        total += cell.layer_params(input, h);
    }
    Ok(total + h * c + c)
}

/// One encoded example.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelInput {
    Tokens(IdSequence),
    Features(FeatureMatrix),
}

impl ModelInput {
    fn len(&self) -> usize {
        match self {
            ModelInput::Tokens(s) => s.true_length,
            ModelInput::Features(f) => f.rows,
        }
    }
}

/// Embedding/features → recurrent layers → dropout → linear head.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentClassifier {
    spec: ModelSpec,
    params: Params,
}

struct ForwardCache {
    traces: Vec<LayerTrace>,
    pooled: Array2<f64>,
    mask: Option<Array2<f64>>,
}

impl RecurrentClassifier {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    /// Rebuilds a model from stored weights, checking the layout.
    pub fn from_params(spec: ModelSpec, params: Params) -> Result<Self> {
        spec.validate()?;
        let expected = build_model(&spec, None, 0)?.params.layout();
        if params.layout() != expected {
            return Err(Error::Checkpoint(
                "weight layout does not match the model spec".into(),
            ));
        }
        Ok(RecurrentClassifier { spec, params })
    }

    fn has_embedding(&self) -> bool {
        self.spec.hyperparams.family.level().is_some()
    }

    fn layer_offset(&self, layer: usize) -> usize {
        usize::from(self.has_embedding()) + 3 * layer
    }

    fn layer(&self, layer: usize) -> LayerWeights<'_> {
        let o = self.layer_offset(layer);
        LayerWeights {
            w_ih: &self.params.tensors[o],
            w_hh: &self.params.tensors[o + 1],
            bias: &self.params.tensors[o + 2],
        }
    }

    fn head(&self) -> (&Array2<f64>, &Array2<f64>) {
        let n = self.params.len();
        (&self.params.tensors[n - 2], &self.params.tensors[n - 1])
    }

    fn inputs_to_steps(&self, batch: &[&ModelInput]) -> Result<(Vec<Array2<f64>>, Vec<usize>)> {
        let width = self.spec.input_width;
        let lengths: Vec<usize> = batch.iter().map(|x| x.len()).collect();
        let steps = lengths.iter().copied().max().unwrap_or(0);
        let mut xs = vec![Array2::<f64>::zeros((batch.len(), width)); steps];
        for (b, input) in batch.iter().enumerate() {
            match input {
                ModelInput::Tokens(seq) => {
                    if !self.has_embedding() {
                        return Err(Error::Shape("token input given to a feature model".into()));
                    }
                    let emb = &self.params.tensors[0];
                    for &id in &seq.ids {
                        if id as usize >= self.spec.vocab_size {
                            return Err(Error::IdOutOfRange {
                                id,
                                vocab_size: self.spec.vocab_size,
                            });
                        }
                    }
                    if seq.true_length > seq.ids.len() {
                        return Err(Error::Shape(format!(
                            "true_length {} exceeds {} ids",
                            seq.true_length,
                            seq.ids.len()
                        )));
                    }
                    for (t, &id) in seq.ids[..seq.true_length].iter().enumerate() {
                        xs[t].row_mut(b).assign(&emb.row(id as usize));
                    }
                }
                ModelInput::Features(fm) => {
                    if self.has_embedding() {
                        return Err(Error::Shape("feature input given to a token model".into()));
                    }
                    if fm.width != width {
                        return Err(Error::Shape(format!(
                            "feature width {} but the model expects {width}",
                            fm.width
                        )));
                    }
                    for (t, x) in xs.iter_mut().enumerate().take(fm.rows) {
                        for (dst, &src) in x.row_mut(b).iter_mut().zip(fm.row(t)) {
                            *dst = f64::from(src);
                        }
                    }
                }
            }
        }
        Ok((xs, lengths))
    }

    fn run(
        &self,
        batch: &[&ModelInput],
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Array2<f64>, ForwardCache)> {
        let hp = &self.spec.hyperparams;
        let cell = hp.family.cell().expect("recurrent family");
        let (mut xs, lengths) = self.inputs_to_steps(batch)?;
        let mut traces = Vec::with_capacity(hp.layers);
        for l in 0..hp.layers {
            let trace = recurrent::forward(cell, &self.layer(l), xs, &lengths);
            xs = if l + 1 < hp.layers {
                trace.outputs()
            } else {
                Vec::new()
            };
            traces.push(trace);
        }
        let last = traces
            .last()
            .expect("at least one layer")
            .final_state()
            .clone();
        let (pooled, mask) = match rng {
            Some(rng) if hp.dropout > 0.0 => {
                let m = dropout_mask(last.nrows(), last.ncols(), hp.dropout, rng);
                (&last * &m, Some(m))
            }
            _ => (last, None),
        };
        let (w, b) = self.head();
        let logits = pooled.dot(w) + b;
        Ok((
            logits,
            ForwardCache {
                traces,
                pooled,
                mask,
            },
        ))
    }

    /// Eval-mode logits, `batch × num_outputs`.
    pub fn forward(&self, batch: &[&ModelInput]) -> Result<Array2<f64>> {
        Ok(self.run(batch, None)?.0)
    }

    /// Training-mode logits (dropout drawn from `rng`).
    pub fn forward_train(
        &self,
        batch: &[&ModelInput],
        rng: &mut ChaCha8Rng,
    ) -> Result<Array2<f64>> {
        Ok(self.run(batch, Some(rng))?.0)
    }

    /// Training-mode forward and backward pass: mean loss and the gradient of
    /// every parameter.
    pub fn forward_backward(
        &self,
        batch: &[&ModelInput],
        targets: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<(f64, Params)> {
        let (logits, cache) = self.run(batch, Some(rng))?;
        let (loss, d_logits) = loss_and_grad(&logits, targets);
        let mut grads = self.params.zeros_like();
        let n = grads.len();
        let (w, _) = self.head();
        grads.tensors[n - 2] = cache.pooled.t().dot(&d_logits);
        grads.tensors[n - 1] = d_logits.sum_axis(Axis(0)).insert_axis(Axis(0));
        let mut d_h = d_logits.dot(&w.t());
        if let Some(m) = &cache.mask {
            d_h *= m;
        }
        let layers = cache.traces.len();
        let mut d_outputs: Option<Vec<Array2<f64>>> = None;
        for l in (0..layers).rev() {
            let o = self.layer_offset(l);
            let d_final = if l + 1 == layers {
                d_h.clone()
            } else {
                Array2::zeros(d_h.raw_dim())
            };
            let (_, rest) = grads.tensors.split_at_mut(o);
            let (w_ih, rest) = rest.split_first_mut().expect("w_ih");
            let (w_hh, rest) = rest.split_first_mut().expect("w_hh");
            let bias = &mut rest[0];
            let mut lg = LayerGrads { w_ih, w_hh, bias };
            let dxs = recurrent::backward(
                &cache.traces[l],
                &self.layer(l),
                d_outputs.as_deref(),
                &d_final,
                &mut lg,
            );
            d_outputs = Some(dxs);
        }
        if self.has_embedding() {
            let dxs = d_outputs.expect("layer-0 input gradients");
            let d_emb = &mut grads.tensors[0];
            for (b, input) in batch.iter().enumerate() {
                let ModelInput::Tokens(seq) = input else {
                    continue;
                };
                for (t, &id) in seq.ids[..seq.true_length].iter().enumerate() {
                    if id == PAD_ID {
                        continue;
                    }
                    let mut row = d_emb.row_mut(id as usize);
                    row += &dxs[t].row(b);
                }
            }
        }
        Ok((loss, grads))
    }
}

/// Builds and initializes a model.
///
/// The embedding is N(0, 1) with a zero `<pad>` row (or a copy of `emb`);
/// every other weight is U(−1/√H, 1/√H). All draws come from `seed`.
pub fn build_model(
    spec: &ModelSpec,
    emb: Option<&EmbeddingMatrix>,
    seed: u64,
) -> Result<RecurrentClassifier> {
    spec.validate()?;
    let hp = &spec.hyperparams;
    let Some(cell) = hp.family.cell() else {
        return Err(Error::InvalidConfig(
            "fine-tuning models are built by the pretrained module".into(),
        ));
    };
    match (hp.pretrained_embeddings, emb) {
        (true, None) => {
            return Err(Error::InvalidConfig(
                "pretrained_embeddings is set but no matrix was given".into(),
            ))
        }
        (false, Some(_)) => {
            return Err(Error::InvalidConfig(
                "an embedding matrix was given but pretrained_embeddings is off".into(),
            ))
        }
        (true, Some(m)) if m.rows.dim() != (spec.vocab_size, hp.embedding_dim) => {
            return Err(Error::Shape(format!(
                "embedding matrix is {:?}, spec needs ({}, {})",
                m.rows.dim(),
                spec.vocab_size,
                hp.embedding_dim
            )))
        }
        _ => {}
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = hp.hidden_dim;
    let k = 1.0 / (h as f64).sqrt();
    let uniform = Uniform::new_inclusive(-k, k).expect("valid range");
    let init = |rows: usize, cols: usize, rng: &mut ChaCha8Rng| {
        Array2::from_shape_fn((rows, cols), |_| uniform.sample(rng))
    };
    let mut params = Params::new();
    if hp.family.level().is_some() {
        let table = match emb {
            Some(m) => m.rows.clone(),
            None => {
                let mut t = Array2::from_shape_fn((spec.vocab_size, hp.embedding_dim), |_| {
                    StandardNormal.sample(&mut rng)
                });
                t.row_mut(PAD_ID as usize).fill(0.0);
                t
            }
        };
        params.push("embedding", table);
    }
    let prefix = match cell {
        CellKind::Lstm => "lstm",
        CellKind::Gru => "gru",
    };
    let g = cell.gates();
    for l in 0..hp.layers {
        let input = if l == 0 { spec.input_width } else { h };
        params.push(format!("{prefix}.{l}.w_ih"), init(g * h, input, &mut rng));
        params.push(format!("{prefix}.{l}.w_hh"), init(g * h, h, &mut rng));
        params.push(format!("{prefix}.{l}.bias"), init(1, g * h, &mut rng));
    }
    params.push("head.weight", init(h, hp.num_classes, &mut rng));
    params.push("head.bias", init(1, hp.num_classes, &mut rng));
    Ok(RecurrentClassifier {
        spec: spec.clone(),
        params,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(num_classes: usize, dropout: f64) -> RecurrentClassifier {
        let hp = HyperParams::char_lstm(4, 3, dropout).with_classes(num_classes);
        build_model(&ModelSpec::for_tokens(hp, 10), None, 7).unwrap()
    }

    fn seq(ids: &[u32], max_len: usize) -> ModelInput {
        let mut v = ids.to_vec();
        v.resize(max_len, PAD_ID);
        ModelInput::Tokens(IdSequence {
            ids: v,
            true_length: ids.len(),
        })
    }

    #[test]
    fn closed_form_examples() {
        let hp = HyperParams::char_lstm(200, 16, 0.5);
        let spec = ModelSpec::for_tokens(hp, 40);
        assert_eq!(param_count(&spec).unwrap(), 21_905);
        assert_eq!(
            build_model(&spec, None, 1).unwrap().params().count(),
            21_905
        );
        let gru = ModelSpec::for_features(
            HyperParams::feature_gru(Some(VariantName::Base), 256, 0.25),
            768,
        );
        assert_eq!(param_count(&gru).unwrap(), 787_457);
        let ft = ModelSpec::for_features(HyperParams::finetune(VariantName::Base), 768);
        assert_eq!(param_count(&ft).unwrap(), 769);
        let zero = ModelSpec::for_tokens(HyperParams::char_lstm(4, 0, 0.5), 10);
        assert!(param_count(&zero).is_err());
    }

    #[test]
    fn grid_constraints() {
        let spec = ModelSpec::for_tokens(HyperParams::char_lstm(50, 256, 0.5), 40);
        assert!(build_model(&spec, None, 0).is_ok());
        assert!(matches!(
            build_model(&spec.clone().grid_constrained(true), None, 0),
            Err(Error::GridViolation(_))
        ));
        let word = ModelSpec::for_tokens(HyperParams::word_lstm(300, 256, 0.25), 40)
            .grid_constrained(true);
        assert!(word.validate().is_ok());
    }

    #[test]
    fn same_seed_same_weights() {
        assert_eq!(tiny(1, 0.5), tiny(1, 0.5));
        let hp = HyperParams::char_lstm(4, 3, 0.5);
        let other = build_model(&ModelSpec::for_tokens(hp, 10), None, 8).unwrap();
        assert_ne!(tiny(1, 0.5).params().checksum(), other.params().checksum());
    }

    #[test]
    fn pretrained_rows_are_copied() {
        let mut hp = HyperParams::word_lstm(3, 2, 0.25);
        hp.pretrained_embeddings = true;
        let rows = Array2::from_shape_fn(
            (5, 3),
            |(i, j)| if i == 0 { 0.0 } else { (i * 3 + j) as f64 },
        );
        let emb = EmbeddingMatrix {
            rows: rows.clone(),
            source: crate::vocab::EmbeddingSource::Pretrained,
            coverage: 1.0,
        };
        let spec = ModelSpec::for_tokens(hp, 5);
        let m = build_model(&spec, Some(&emb), 0).unwrap();
        assert_eq!(m.params().tensors[0], rows);
        assert!(build_model(&spec, None, 0).is_err());
    }

    #[test]
    fn batch_shape_and_eval_determinism() {
        let m = tiny(1, 0.5);
        let inputs: Vec<ModelInput> = (0..32).map(|i| seq(&[2 + (i % 8) as u32, 3], 6)).collect();
        let refs: Vec<&ModelInput> = inputs.iter().collect();
        let a = m.forward(&refs).unwrap();
        assert_eq!(a.dim(), (32, 1));
        assert_eq!(a, m.forward(&refs).unwrap());
        assert!(a.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn pad_invariance() {
        let m = tiny(4, 0.5);
        let short = seq(&[2, 5, 9], 3);
        let long = seq(&[2, 5, 9], 20);
        let a = m.forward(&[&short]).unwrap();
        let b = m.forward(&[&long, &seq(&[1; 12], 20)]).unwrap();
        for j in 0..4 {
            assert!((a[[0, j]] - b[[0, j]]).abs() <= 1e-6);
        }
    }

    #[test]
    fn zero_length_uses_initial_state() {
        let m = tiny(1, 0.5);
        let empty = seq(&[], 5);
        let logits = m.forward(&[&empty]).unwrap();
        let (_, b) = m.head();
        assert_eq!(logits[[0, 0]], b[[0, 0]]);
    }

    #[test]
    fn out_of_range_ids() {
        let m = tiny(1, 0.5);
        assert!(matches!(
            m.forward(&[&seq(&[10], 3)]),
            Err(Error::IdOutOfRange {
                id: 10,
                vocab_size: 10
            })
        ));
    }

    #[test]
    fn zero_dropout_train_equals_eval() {
        let m = tiny(1, 0.0);
        let x = seq(&[3, 4, 5], 5);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            m.forward(&[&x]).unwrap(),
            m.forward_train(&[&x], &mut rng).unwrap()
        );
    }

    fn check_gradients(mut m: RecurrentClassifier, inputs: &[ModelInput], targets: &[usize]) {
        let refs: Vec<&ModelInput> = inputs.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (_, grads) = m.forward_backward(&refs, targets, &mut rng).unwrap();
        let eps = 1e-5;
        let mut worst: f64 = 0.0;
        for p in 0..m.params.len() {
            for idx in 0..m.params.tensors[p].len() {
                let (r, c) = (
                    idx / m.params.tensors[p].ncols(),
                    idx % m.params.tensors[p].ncols(),
                );
                let orig = m.params.tensors[p][[r, c]];
                m.params.tensors[p][[r, c]] = orig + eps;
                let up = loss_and_grad(&m.forward(&refs).unwrap(), targets).0;
                m.params.tensors[p][[r, c]] = orig - eps;
                let down = loss_and_grad(&m.forward(&refs).unwrap(), targets).0;
                m.params.tensors[p][[r, c]] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = grads.tensors[p][[r, c]];
                let denom = numeric.abs().max(analytic.abs());
                if denom > 1e-7 {
                    worst = worst.max((numeric - analytic).abs() / denom);
                }
            }
        }
        assert!(worst < 1e-3, "worst relative error {worst}");
    }

    #[test]
    fn gradient_check_binary() {
        let inputs = vec![seq(&[2, 3, 4, 5], 6), seq(&[9, 1], 6), seq(&[7], 6)];
        check_gradients(tiny(1, 0.0), &inputs, &[1, 0, 1]);
    }

    #[test]
    fn gradient_check_multiclass_two_layers() {
        let mut hp = HyperParams::word_lstm(4, 3, 0.0).with_classes(4);
        hp.layers = 2;
        let m = build_model(&ModelSpec::for_tokens(hp, 10), None, 5).unwrap();
        let inputs = vec![seq(&[2, 3, 4], 5), seq(&[6, 8], 5)];
        check_gradients(m, &inputs, &[3, 0]);
    }

    #[test]
    fn gradient_check_feature_gru() {
        let hp = HyperParams::feature_gru(None, 3, 0.0).with_classes(3);
        let m = build_model(&ModelSpec::for_features(hp, 4), None, 2).unwrap();
        let enc = crate::pretrained::encoder_stub(4, 1).unwrap();
        use crate::pretrained::Encoder;
        let inputs: Vec<ModelInput> = ["a b c", "d"]
            .iter()
            .map(|t| ModelInput::Features(enc.encode(t).unwrap()))
            .collect();
        check_gradients(m, &inputs, &[2, 1]);
    }

    #[test]
    fn from_params_checks_layout() {
        let m = tiny(1, 0.5);
        let back = RecurrentClassifier::from_params(m.spec().clone(), m.params().clone()).unwrap();
        assert_eq!(back, m);
        let other = tiny(4, 0.5);
        assert!(
            RecurrentClassifier::from_params(m.spec().clone(), other.params().clone()).is_err()
        );
    }
}
