//! Character and word vocabularies, fixed-length encoding and pretrained
//! word-vector loading.

use std::collections::HashMap;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Char,
    Word,
}

impl Level {
    pub fn default_max_len(self) -> usize {
        match self {
            Level::Char => 280,
            Level::Word => 64,
        }
    }

    pub fn default_min_freq(self) -> usize {
        match self {
            Level::Char => 1,
            Level::Word => 2,
        }
    }

    pub fn tokenize(self, text: &str) -> Vec<String> {
        match self {
            Level::Char => text.chars().map(String::from).collect(),
            Level::Word => text.split_whitespace().map(String::from).collect(),
        }
    }
}

/// Token-to-id mapping with `<pad>` = 0 and `<unk>` = 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    level: Level,
    min_freq: usize,
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    level: Level,
    min_freq: usize,
    tokens: Vec<String>,
}

impl Vocab {
    /// Counts tokens over `texts` and keeps those seen at least `min_freq`
    /// times, ordered by descending frequency then lexicographically.
    pub fn build<S: AsRef<str>>(texts: &[S], level: Level, min_freq: usize) -> Result<Self> {
        if texts.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if min_freq == 0 {
            return Err(Error::InvalidConfig("min_freq must be at least 1".into()));
        }
        let mut freq: HashMap<String, usize> = HashMap::new();
        for t in texts {
            for tok in level.tokenize(t.as_ref()) {
                *freq.entry(tok).or_default() += 1;
            }
        }
        let mut kept: Vec<(String, usize)> = freq
            .into_iter()
            .filter(|(tok, n)| *n >= min_freq && tok != PAD_TOKEN && tok != UNK_TOKEN)
            .collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let tokens = [PAD_TOKEN.to_string(), UNK_TOKEN.to_string()]
            .into_iter()
            .chain(kept.into_iter().map(|(t, _)| t))
            .collect();
        Ok(Self::from_tokens(level, min_freq, tokens))
    }

    fn from_tokens(level: Level, min_freq: usize, tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocab {
            level,
            min_freq,
            tokens,
            index,
        }
    }

    pub fn level(&self) -> Level {
        self.level
    }

    pub fn min_freq(&self) -> usize {
        self.min_freq
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Tokens in id order, specials first.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Maps `text` to exactly `max_len` ids, truncating the tail or
    /// right-padding with `<pad>`.
    pub fn encode(&self, text: &str, max_len: usize) -> IdSequence {
        assert!(max_len >= 1, "max_len must be at least 1");
        let mut ids: Vec<u32> = self
            .level
            .tokenize(text)
            .iter()
            .take(max_len)
            .map(|t| self.id(t))
            .collect();
        let true_length = ids.len();
        ids.resize(max_len, PAD_ID);
        IdSequence { ids, true_length }
    }

    /// Inverse of `encode` on the unpadded prefix.
    pub fn decode(&self, seq: &IdSequence) -> Vec<&str> {
        seq.ids[..seq.true_length]
            .iter()
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN))
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&VocabFile {
            level: self.level,
            min_freq: self.min_freq,
            tokens: self.tokens.clone(),
        })?)
    }

    pub fn from_json(raw: &str) -> Result<Self> {
        let file: VocabFile = serde_json::from_str(raw)?;
        if file.tokens.len() < 2 || file.tokens[0] != PAD_TOKEN || file.tokens[1] != UNK_TOKEN {
            return Err(Error::InvalidConfig(
                "vocab file must start with <pad> and <unk>".into(),
            ));
        }
        Ok(Self::from_tokens(file.level, file.min_freq, file.tokens))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw)
    }
}

/// Shorthand for [`Vocab::build`].
pub fn build_vocab<S: AsRef<str>>(texts: &[S], level: Level, min_freq: usize) -> Result<Vocab> {
    Vocab::build(texts, level, min_freq)
}

/// A padded id sequence and the number of real tokens in it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdSequence {
    pub ids: Vec<u32>,
    pub true_length: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbeddingSource {
    Random,
    Pretrained,
}

/// One row per vocabulary entry; the `<pad>` row is zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub rows: Array2<f64>,
    pub source: EmbeddingSource,
    /// Fraction of non-special vocabulary entries found in the vector file.
    pub coverage: f64,
}

impl EmbeddingMatrix {
    pub fn vocab_size(&self) -> usize {
        self.rows.nrows()
    }

    pub fn dim(&self) -> usize {
        self.rows.ncols()
    }
}

/// Reads a word-vector text file (`token v1 ... vdim` per line) and builds an
/// embedding matrix aligned with `vocab`.
///
/// Tokens missing from the file are drawn from N(0, 0.1²) under `seed`, in id
/// order. A leading `count dim` header line, as written by word2vec, is
/// skipped.
pub fn load_pretrained_embeddings(
    path: &Path,
    vocab: &Vocab,
    dim: usize,
    seed: u64,
) -> Result<EmbeddingMatrix> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut rows = Array2::<f64>::zeros((vocab.len(), dim));
    let mut found = vec![false; vocab.len()];
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let mut parts = line.split(' ').filter(|p| !p.is_empty());
        let Some(token) = parts.next() else { continue };
        let values: Vec<&str> = parts.collect();
        if idx == 0 && values.len() == 1 && token.parse::<usize>().is_ok() {
            continue;
        }
        if values.len() != dim {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!(
                    "vector for {token:?} has {} components, expected {dim}",
                    values.len()
                ),
            });
        }
        let Some(&id) = vocab.index.get(token) else {
            continue;
        };
        if id == PAD_ID || id == UNK_ID || found[id as usize] {
            continue;
        }
        for (j, v) in values.iter().enumerate() {
            rows[[id as usize, j]] = v.parse::<f64>().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                line: idx + 1,
                message: format!("bad number {v:?}"),
            })?;
        }
        found[id as usize] = true;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.1).expect("valid normal");
    let mut hits = 0usize;
    for id in 1..vocab.len() {
        if found[id] {
            hits += 1;
            continue;
        }
        for j in 0..dim {
            rows[[id, j]] = normal.sample(&mut rng);
        }
    }
    let denom = vocab.len().saturating_sub(2);
    let coverage = if denom == 0 {
        0.0
    } else {
        hits as f64 / denom as f64
    };
    log::info!(
        "{}: {hits}/{denom} vocabulary tokens covered ({:.1}%)",
        path.display(),
        coverage * 100.0
    );
    Ok(EmbeddingMatrix {
        rows,
        source: EmbeddingSource::Pretrained,
        coverage,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::io::Write;

    #[test]
    fn char_vocab_counts() {
        let v = Vocab::build(&["ab", "ab", "b"], Level::Char, 1).unwrap();
        assert_eq!(v.len(), 4);
        // b (3) before a (2)
        assert_eq!(v.tokens(), &["<pad>", "<unk>", "b", "a"]);
    }

    #[test]
    fn word_vocab_threshold() {
        let v = Vocab::build(&["x"], Level::Word, 2).unwrap();
        assert_eq!(v.len(), 2);
        assert!(Vocab::build::<&str>(&[], Level::Word, 1).is_err());
        assert!(Vocab::build(&["x"], Level::Word, 0).is_err());
    }

    #[test]
    fn deterministic_build() {
        let texts = ["the cat", "a dog", "the dog"];
        let a = Vocab::build(&texts, Level::Word, 1).unwrap();
        let b = Vocab::build(&texts, Level::Word, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn encode_pads_and_truncates() {
        let v = Vocab::from_tokens(
            Level::Char,
            1,
            vec!["<pad>".into(), "<unk>".into(), "a".into(), "b".into()],
        );
        assert_eq!(
            v.encode("ab", 4),
            IdSequence {
                ids: vec![2, 3, 0, 0],
                true_length: 2
            }
        );
        assert_eq!(v.encode("", 3).ids, vec![0, 0, 0]);
        assert_eq!(v.encode("", 3).true_length, 0);
        assert_eq!(v.encode("azb", 3).ids, vec![2, UNK_ID, 3]);
        assert_eq!(v.encode("abab", 2).true_length, 2);
    }

    #[test]
    fn json_round_trip() {
        let v = Vocab::build(&["hello world", "hello"], Level::Word, 1).unwrap();
        assert_eq!(Vocab::from_json(&v.to_json().unwrap()).unwrap(), v);
    }

    fn vector_file(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    #[test]
    fn pretrained_rows_pass_through() {
        let v = Vocab::build(&["the cat sat", "the"], Level::Word, 1).unwrap();
        let f = vector_file(&["the 0.1 0.2 0.3", "dog 1 1 1"]);
        let m = load_pretrained_embeddings(f.path(), &v, 3, 7).unwrap();
        let the = v.id("the") as usize;
        assert_eq!(m.rows.row(the).to_vec(), vec![0.1, 0.2, 0.3]);
        assert!(m.rows.row(0).iter().all(|&x| x == 0.0));
        assert!((m.coverage - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(m.source, EmbeddingSource::Pretrained);
        let again = load_pretrained_embeddings(f.path(), &v, 3, 7).unwrap();
        assert_eq!(again, m);
        let other = load_pretrained_embeddings(f.path(), &v, 3, 8).unwrap();
        assert_ne!(
            other.rows.row(v.id("cat") as usize),
            m.rows.row(v.id("cat") as usize)
        );
    }

    #[test]
    fn pretrained_dimension_mismatch() {
        let v = Vocab::build(&["the"], Level::Word, 1).unwrap();
        let f = vector_file(&["the 0.1 0.2"]);
        assert!(matches!(
            load_pretrained_embeddings(f.path(), &v, 3, 0),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(load_pretrained_embeddings(Path::new("/no/such/file"), &v, 3, 0).is_err());
    }

    #[test]
    fn word2vec_header_skipped() {
        let v = Vocab::build(&["the"], Level::Word, 1).unwrap();
        let f = vector_file(&["2 2", "the 1 2", "x 3 4"]);
        let m = load_pretrained_embeddings(f.path(), &v, 2, 0).unwrap();
        assert_eq!(m.rows.row(2).to_vec(), vec![1.0, 2.0]);
    }

    proptest! {
        #[test]
        fn encode_has_fixed_length(s in "\\PC{0,50}", max_len in 1usize..40) {
            let v = Vocab::build(&["abc def"], Level::Char, 1).unwrap();
            prop_assert_eq!(v.encode(&s, max_len).ids.len(), max_len);
            let w = Vocab::build(&["abc def"], Level::Word, 1).unwrap();
            prop_assert_eq!(w.encode(&s, max_len).ids.len(), max_len);
        }

        #[test]
        fn round_trip_in_vocab(words in prop::collection::vec("[a-e]{1,3}", 1..10)) {
            let text = words.join(" ");
            let v = Vocab::build(&[text.as_str()], Level::Word, 1).unwrap();
            let seq = v.encode(&text, words.len());
            prop_assert_eq!(v.decode(&seq), words.iter().map(String::as_str).collect::<Vec<_>>());
        }

        #[test]
        fn build_is_order_insensitive(mut texts in prop::collection::vec("[a-d ]{0,8}", 1..8), seed in any::<u64>()) {
            let a = Vocab::build(&texts, Level::Char, 1).unwrap();
            use rand::seq::SliceRandom;
            texts.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            let b = Vocab::build(&texts, Level::Char, 1).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
