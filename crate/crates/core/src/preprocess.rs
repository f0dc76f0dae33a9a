//! Tweet normalization: mentions, links, emoji and whitespace.
//!
//! Rules run in a fixed order (mentions, links, emoji, whitespace, then the
//! optional lowercasing) and the composition is idempotent.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Dataset;
use crate::error::{Error, Result};

pub const MENTION_TOKEN: &str = "username";
pub const LINK_TOKEN: &str = "link";

const BUILTIN_TABLE: &str = include_str!("../data/emoji_shortnames.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub replace_mentions: bool,
    pub replace_links: bool,
    pub replace_emojis: bool,
    pub collapse_whitespace: bool,
    #[serde(default)]
    pub lowercase: bool,
    pub emoji_table_version: String,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            replace_mentions: true,
            replace_links: true,
            replace_emojis: true,
            collapse_whitespace: true,
            lowercase: false,
            emoji_table_version: EmojiTable::builtin().version.clone(),
        }
    }
}

impl PreprocessConfig {
    /// Every rule off: texts pass through untouched.
    pub fn disabled() -> Self {
        PreprocessConfig {
            replace_mentions: false,
            replace_links: false,
            replace_emojis: false,
            collapse_whitespace: false,
            lowercase: false,
            ..Default::default()
        }
    }

    pub fn is_identity(&self) -> bool {
        !(self.replace_mentions
            || self.replace_links
            || self.replace_emojis
            || self.collapse_whitespace
            || self.lowercase)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replace_emojis && self.emoji_table_version.trim().is_empty() {
            return Err(Error::InvalidConfig(
                "emoji_table_version must be set when replace_emojis is on".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct EmojiTableFile {
    version: String,
    entries: HashMap<String, String>,
}

/// Emoji sequence to short-name lookup, matched longest-first.
#[derive(Debug, Clone)]
pub struct EmojiTable {
    pub version: String,
    names: HashMap<String, String>,
    max_chars: usize,
}

impl EmojiTable {
    /// The vendored table shipped with the crate.
    pub fn builtin() -> &'static Arc<EmojiTable> {
        static TABLE: OnceLock<Arc<EmojiTable>> = OnceLock::new();
        TABLE.get_or_init(|| {
            Arc::new(EmojiTable::from_json(BUILTIN_TABLE).expect("vendored emoji table is valid"))
        })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&raw)
    }

    /// Parses `{"version": ..., "entries": {"1F525": "fire", ...}}` where keys
    /// are space-separated hex codepoints.
    pub fn from_json(raw: &str) -> Result<Self> {
        let file: EmojiTableFile = serde_json::from_str(raw)?;
        let mut names = HashMap::with_capacity(file.entries.len());
        let mut max_chars = 0;
        for (key, name) in file.entries {
            let seq = key
                .split_whitespace()
                .map(|cp| {
                    u32::from_str_radix(cp, 16)
                        .ok()
                        .and_then(char::from_u32)
                        .ok_or_else(|| {
                            Error::InvalidConfig(format!("bad codepoint {cp:?} in emoji table"))
                        })
                })
                .collect::<Result<String>>()?;
            if seq.is_empty() || name.chars().any(char::is_whitespace) || name.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "bad emoji table entry {key:?} -> {name:?}"
                )));
            }
            max_chars = max_chars.max(seq.chars().count());
            names.insert(seq, name);
        }
        Ok(EmojiTable {
            version: file.version,
            names,
            max_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name_of(&self, emoji: &str) -> Option<&str> {
        self.names.get(emoji).map(String::as_str)
    }

    /// Replaces every known emoji sequence with its short name, padded with
    /// a space on each side.
    pub fn replace(&self, text: &str) -> String {
        let offsets: Vec<usize> = text
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(text.len()))
            .collect();
        let n = offsets.len() - 1;
        let mut out = String::with_capacity(text.len());
        let mut i = 0;
        while i < n {
            let longest = (1..=self.max_chars.min(n - i)).rev().find_map(|len| {
                self.names
                    .get(&text[offsets[i]..offsets[i + len]])
                    .map(|name| (len, name))
            });
            match longest {
                Some((len, name)) => {
                    out.push(' ');
                    out.push_str(name);
                    out.push(' ');
                    i += len;
                }
                None => {
                    out.push_str(&text[offsets[i]..offsets[i + 1]]);
                    i += 1;
                }
            }
        }
        out
    }
}

fn url_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)https?://\S+").unwrap())
}

fn handle_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^[\p{L}\p{N}_]+").unwrap())
}

fn char_class(pattern: &'static OnceLock<Regex>, class: &str, c: char) -> bool {
    let re = pattern.get_or_init(|| Regex::new(&format!("^{class}$")).unwrap());
    let mut buf = [0u8; 4];
    re.is_match(c.encode_utf8(&mut buf))
}

fn is_handle_char(c: char) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    char_class(&RE, r"[\p{L}\p{N}_]", c)
}

fn is_pictographic(c: char) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    char_class(&RE, r"\p{Extended_Pictographic}", c)
}

fn is_combining(c: char) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    char_class(&RE, r"[\p{M}\x{200D}]", c)
}

/// Whether an `@` preceded by `before` starts a mention.
///
/// Combining marks, joiners and variation selectors are looked through to the
/// base character. Emoji (pictographs and keycaps) count as boundaries, so
/// an `@` glued to an emoji is a mention before and after emoji replacement.
fn mention_boundary(before: &str) -> bool {
    let mut keycap = false;
    for c in before.chars().rev() {
        if is_combining(c) {
            keycap |= c == '\u{20E3}';
            continue;
        }
        return c != '@' && (keycap || !is_handle_char(c) || is_pictographic(c));
    }
    true
}

/// Replaces `@handle` tokens with `username`.
///
/// A handle is one or more letters, digits or underscores; the `@` must sit
/// at the start of the text or after a non-word character other than `@`,
/// so e-mail addresses and `@@name` runs are left alone.
pub fn replace_mentions(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut last = 0;
    let mut search = 0;
    while let Some(pos) = text[search..].find('@').map(|p| p + search) {
        let after = pos + 1;
        search = after;
        if !mention_boundary(&text[..pos]) {
            continue;
        }
        if let Some(m) = handle_pattern().find(&text[after..]) {
            out.push_str(&text[last..pos]);
            out.push_str(MENTION_TOKEN);
            last = after + m.end();
            search = last;
        }
    }
    out.push_str(&text[last..]);
    out
}

/// Replaces every `http://` or `https://` URL (up to the next whitespace)
/// with `link`.
pub fn replace_links(text: &str) -> String {
    url_pattern().replace_all(text, LINK_TOKEN).into_owned()
}

/// Replaces emoji using the vendored short-name table.
pub fn replace_emojis(text: &str) -> String {
    EmojiTable::builtin().replace(text)
}

/// Collapses whitespace runs to one ASCII space and trims both ends.
pub fn collapse_whitespace(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for word in text.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(word);
    }
    out
}

/// The configured normalization pipeline. Immutable and cheap to clone.
#[derive(Debug, Clone)]
pub struct Preprocessor {
    cfg: PreprocessConfig,
    table: Arc<EmojiTable>,
}

impl Preprocessor {
    /// Pipeline backed by the vendored emoji table.
    pub fn new(cfg: PreprocessConfig) -> Result<Self> {
        Self::with_table(cfg, Arc::clone(EmojiTable::builtin()))
    }

    /// Pipeline backed by an emoji table file; fails if the file is missing.
    pub fn with_table_file(cfg: PreprocessConfig, path: &Path) -> Result<Self> {
        Self::with_table(cfg, Arc::new(EmojiTable::from_file(path)?))
    }

    pub fn with_table(cfg: PreprocessConfig, table: Arc<EmojiTable>) -> Result<Self> {
        cfg.validate()?;
        if cfg.replace_emojis && cfg.emoji_table_version != table.version {
            return Err(Error::InvalidConfig(format!(
                "config pins emoji table {:?} but {:?} is loaded",
                cfg.emoji_table_version, table.version
            )));
        }
        Ok(Preprocessor { cfg, table })
    }

    pub fn config(&self) -> &PreprocessConfig {
        &self.cfg
    }

    pub fn apply(&self, text: &str) -> String {
        let mut s = text.to_string();
        if self.cfg.replace_mentions {
            s = replace_mentions(&s);
        }
        if self.cfg.replace_links {
            s = replace_links(&s);
        }
        if self.cfg.replace_emojis {
            s = self.table.replace(&s);
        }
        if self.cfg.collapse_whitespace {
            s = collapse_whitespace(&s);
        }
        if self.cfg.lowercase {
            s = s.to_lowercase();
        }
        s
    }

    pub fn apply_dataset(&self, ds: &Dataset) -> Dataset {
        if self.cfg.is_identity() {
            return ds.clone();
        }
        ds.map_texts(|t| self.apply(t))
    }
}

/// One-shot helper: builds the pipeline for `cfg` and applies it.
pub fn preprocess(text: &str, cfg: &PreprocessConfig) -> Result<String> {
    Ok(Preprocessor::new(cfg.clone())?.apply(text))
}
