//! Dataset ingestion, class statistics and seeded train/validation/test splits.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{CoarseLabel, FineLabel, Task};

/// One post with its optional subtask labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledText {
    pub id: String,
    pub text: String,
    pub label_1a: Option<CoarseLabel>,
    pub label_1b: Option<FineLabel>,
}

impl LabeledText {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        label_1a: Option<CoarseLabel>,
        label_1b: Option<FineLabel>,
    ) -> Result<Self> {
        let item = LabeledText {
            id: id.into(),
            text: text.into(),
            label_1a,
            label_1b,
        };
        if item.text.trim().is_empty() {
            return Err(Error::InvalidConfig(format!(
                "item {:?} has empty text",
                item.id
            )));
        }
        Ok(item)
    }

    /// Whether the 1A and 1B labels disagree (e.g. `HATE` with `NOT`).
    pub fn labels_inconsistent(&self) -> bool {
        match (self.label_1a, self.label_1b) {
            (Some(a), Some(b)) => b.coarse() != a,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitProvenance {
    pub name: String,
    pub seed: u64,
    pub ratios: [f64; 3],
    pub stratified: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub ingested_at_unix: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<SplitProvenance>,
}

impl Provenance {
    pub fn new(source: impl Into<String>) -> Self {
        let ingested_at_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Provenance {
            source: source.into(),
            ingested_at_unix,
            split: None,
        }
    }
}

/// An ordered collection of posts for one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub items: Vec<LabeledText>,
    pub task: Task,
    pub provenance: Provenance,
}

impl Dataset {
    /// Builds a dataset, rejecting duplicate ids.
    pub fn new(items: Vec<LabeledText>, task: Task, provenance: Provenance) -> Result<Self> {
        let mut seen = HashSet::with_capacity(items.len());
        for item in &items {
            if !seen.insert(item.id.as_str()) {
                return Err(Error::DuplicateId(item.id.clone()));
            }
        }
        Ok(Dataset {
            items,
            task,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.items.iter().map(|i| i.text.as_str()).collect()
    }

    /// True when every item carries the label required by `task`.
    pub fn is_labeled(&self) -> bool {
        self.items.iter().all(|i| self.task.class_of(i).is_some())
    }

    pub fn require_labeled(&self) -> Result<()> {
        if self.is_labeled() {
            Ok(())
        } else {
            Err(Error::Unlabeled(format!("task {}", self.task)))
        }
    }

    /// Class index of each item under the dataset's task.
    pub fn class_indices(&self) -> Result<Vec<usize>> {
        self.items
            .iter()
            .map(|i| {
                self.task.class_of(i).ok_or_else(|| {
                    Error::Unlabeled(format!("task {} (item {:?})", self.task, i.id))
                })
            })
            .collect()
    }

    /// A new dataset holding the items at `indices`, in the given order.
    pub fn subset(&self, indices: &[usize], provenance: Provenance) -> Dataset {
        Dataset {
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
            task: self.task,
            provenance,
        }
    }

    /// Applies `f` to every text, keeping ids and labels.
    pub fn map_texts(&self, mut f: impl FnMut(&str) -> String) -> Dataset {
        Dataset {
            items: self
                .items
                .iter()
                .map(|i| LabeledText {
                    text: f(&i.text),
                    ..i.clone()
                })
                .collect(),
            task: self.task,
            provenance: self.provenance.clone(),
        }
    }
}

/// Ratios, seed and stratification flag of a three-way split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: [f64; 3],
    pub seed: u64,
    pub stratified: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            ratios: [0.70, 0.10, 0.20],
            seed: 42,
            stratified: true,
        }
    }
}

impl SplitSpec {
    pub fn new(ratios: [f64; 3], seed: u64, stratified: bool) -> Result<Self> {
        let spec = SplitSpec {
            ratios,
            seed,
            stratified,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        for r in self.ratios {
            if !(r > 0.0 && r < 1.0) {
                return Err(Error::InvalidSplit(format!("ratio {r} not in (0, 1)")));
            }
        }
        let sum: f64 = self.ratios.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!("ratios sum to {sum}, not 1")));
        }
        Ok(())
    }

    /// Split sizes for `n` items: the first two are floored, test takes the rest.
    pub fn sizes(&self, n: usize) -> [usize; 3] {
        // The epsilon absorbs products like 100 * 0.29 = 28.999999999999996.
        let floor = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
        let train = floor(self.ratios[0]).min(n);
        let val = floor(self.ratios[1]).min(n - train);
        [train, val, n - train - val]
    }
}

pub const SPLIT_NAMES: [&str; 3] = ["train", "val", "test"];

/// Ids per split plus the spec that produced them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub stratified: bool,
    pub task: Task,
    pub ids_per_split: BTreeMap<String, Vec<String>>,
}

impl SplitManifest {
    pub fn from_splits(spec: &SplitSpec, splits: &[Dataset; 3]) -> Self {
        let ids_per_split = SPLIT_NAMES
            .iter()
            .zip(splits)
            .map(|(name, ds)| {
                (
                    name.to_string(),
                    ds.items.iter().map(|i| i.id.clone()).collect(),
                )
            })
            .collect();
        SplitManifest {
            seed: spec.seed,
            ratios: spec.ratios,
            stratified: spec.stratified,
            task: splits[0].task,
            ids_per_split,
        }
    }

    /// Rebuilds the recorded split from the full dataset.
    pub fn apply(&self, ds: &Dataset) -> Result<[Dataset; 3]> {
        let index: BTreeMap<&str, usize> = ds
            .items
            .iter()
            .enumerate()
            .map(|(i, it)| (it.id.as_str(), i))
            .collect();
        let mut out = Vec::with_capacity(3);
        for name in SPLIT_NAMES {
            let ids = self
                .ids_per_split
                .get(name)
                .ok_or_else(|| Error::InvalidSplit(format!("manifest lacks split {name:?}")))?;
            let indices = ids
                .iter()
                .map(|id| {
                    index
                        .get(id.as_str())
                        .copied()
                        .ok_or_else(|| Error::InvalidSplit(format!("id {id:?} not in dataset")))
                })
                .collect::<Result<Vec<_>>>()?;
            out.push(ds.subset(&indices, self.provenance_for(ds, name)));
        }
        Ok(out.try_into().expect("three splits"))
    }

    fn provenance_for(&self, ds: &Dataset, name: &str) -> Provenance {
        Provenance {
            split: Some(SplitProvenance {
                name: name.to_string(),
                seed: self.seed,
                ratios: self.ratios,
                stratified: self.stratified,
            }),
            ..ds.provenance.clone()
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&raw)?)
    }
}

fn is_header(fields: &[&str]) -> bool {
    let first = fields[0].trim().to_ascii_lowercase();
    matches!(first.as_str(), "id" | "_id" | "tweet_id" | "hasoc_id")
}

fn parse_label<T: std::str::FromStr<Err = Error>>(
    field: Option<&&str>,
    path: &Path,
    line: usize,
) -> Result<Option<T>> {
    match field.map(|f| f.trim()) {
        None | Some("") => Ok(None),
        Some(raw) => raw.parse::<T>().map(Some).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.to_string(),
        }),
    }
}

fn read_tsv(path: &Path, task: Task, require_labels: bool) -> Result<Dataset> {
    let raw = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let min_fields = match (require_labels, task) {
        (false, _) => 2,
        (true, Task::Task1a) => 3,
        (true, Task::Task1b) => 4,
    };
    let mut items = Vec::new();
    let mut warned_extra = false;
    let mut inconsistent = 0usize;
    for (idx, line) in raw.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if idx == 0 && is_header(&fields) {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: lineno,
            message,
        };
        if fields.len() < min_fields {
            return Err(parse_err(format!(
                "expected at least {min_fields} tab-separated fields, found {}",
                fields.len()
            )));
        }
        if fields.len() > 4 && !warned_extra {
            log::warn!(
                "{}: ignoring {} extra column(s) beyond (id, text, label_1a, label_1b)",
                path.display(),
                fields.len() - 4
            );
            warned_extra = true;
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(parse_err("empty id".into()));
        }
        let text = fields[1];
        if text.trim().is_empty() {
            return Err(parse_err(format!("empty text for id {id:?}")));
        }
        let label_1a: Option<CoarseLabel> = parse_label(fields.get(2), path, lineno)?;
        let label_1b: Option<FineLabel> = parse_label(fields.get(3), path, lineno)?;
        if require_labels {
            let missing = match task {
                Task::Task1a => label_1a.is_none(),
                Task::Task1b => label_1b.is_none(),
            };
            if missing {
                return Err(parse_err(format!(
                    "missing task {task} label for id {id:?}"
                )));
            }
        }
        let item = LabeledText {
            id: id.to_string(),
            text: text.to_string(),
            label_1a,
            label_1b,
        };
        if item.labels_inconsistent() {
            inconsistent += 1;
        }
        items.push(item);
    }
    if inconsistent > 0 {
        log::warn!(
            "{}: {inconsistent} item(s) with inconsistent 1A/1B labels",
            path.display()
        );
    }
    Dataset::new(items, task, Provenance::new(path.display().to_string()))
}

/// Reads a labeled TSV with columns (id, text, label_1a, label_1b).
///
/// A leading header row is skipped. Every row must carry the label column
/// required by `task`; labels are parsed case-insensitively.
pub fn load_tsv(path: &Path, task: Task) -> Result<Dataset> {
    read_tsv(path, task, true)
}

/// Reads a TSV for prediction: label columns are optional.
pub fn load_unlabeled_tsv(path: &Path, task: Task) -> Result<Dataset> {
    read_tsv(path, task, false)
}

/// Writes a dataset in the same four-column layout `load_tsv` reads.
///
/// Tabs and line breaks inside texts are written as spaces.
pub fn write_tsv(ds: &Dataset, path: &Path) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "id\ttext\tlabel_1a\tlabel_1b")?;
        for item in &ds.items {
            let text: String = item
                .text
                .chars()
                .map(|c| {
                    if matches!(c, '\t' | '\n' | '\r') {
                        ' '
                    } else {
                        c
                    }
                })
                .collect();
            writeln!(
                w,
                "{}\t{}\t{}\t{}",
                item.id,
                text,
                item.label_1a.map(|l| l.as_str()).unwrap_or(""),
                item.label_1b.map(|l| l.as_str()).unwrap_or("")
            )?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCount {
    pub label: String,
    pub count: usize,
}

/// Per-class counts in taxonomy order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelHistogram {
    pub task: Task,
    pub counts: Vec<LabelCount>,
    pub total: usize,
}

impl LabelHistogram {
    pub fn get(&self, label: &str) -> Option<usize> {
        self.counts
            .iter()
            .find(|c| c.label.eq_ignore_ascii_case(label))
            .map(|c| c.count)
    }
}

pub fn class_stats(ds: &Dataset) -> Result<LabelHistogram> {
    let names = ds.task.class_names();
    let mut counts = vec![0usize; names.len()];
    for class in ds.class_indices()? {
        counts[class] += 1;
    }
    Ok(LabelHistogram {
        task: ds.task,
        counts: names
            .iter()
            .zip(counts)
            .map(|(label, count)| LabelCount {
                label: label.to_string(),
                count,
            })
            .collect(),
        total: ds.len(),
    })
}

/// Per-class, per-split counts whose row sums are the class sizes, whose
/// column sums are the split sizes, and where every cell is the floor or
/// ceiling of its proportional share `class * split / n`.
///
/// Such a rounding always exists for two-way tables; it is found as a
/// bipartite flow from classes to splits over the fractional cells.
pub(crate) fn allocate_counts(
    class_sizes: &[usize],
    split_sizes: [usize; 3],
) -> Result<Vec<[usize; 3]>> {
    let n: usize = class_sizes.iter().sum();
    assert_eq!(n, split_sizes.iter().sum::<usize>());
    let k = class_sizes.len();
    let mut alloc = vec![[0usize; 3]; k];
    if n == 0 {
        return Ok(alloc);
    }
    let mut remainders = vec![[0usize; 3]; k];
    for (c, &size) in class_sizes.iter().enumerate() {
        for s in 0..3 {
            let num = size * split_sizes[s];
            alloc[c][s] = num / n;
            remainders[c][s] = num % n;
        }
    }
    let class_need: Vec<usize> = (0..k)
        .map(|c| class_sizes[c] - alloc[c].iter().sum::<usize>())
        .collect();
    let split_need: Vec<usize> = (0..3)
        .map(|s| split_sizes[s] - alloc.iter().map(|a| a[s]).sum::<usize>())
        .collect();

    // Nodes: 0 = source, 1..=k classes, k+1..=k+3 splits, k+4 = sink.
    let nodes = k + 5;
    let sink = k + 4;
    let mut cap = vec![vec![0usize; nodes]; nodes];
    for c in 0..k {
        cap[0][c + 1] = class_need[c];
        for s in 0..3 {
            if remainders[c][s] > 0 {
                cap[c + 1][k + 1 + s] = 1;
            }
        }
    }
    for s in 0..3 {
        cap[k + 1 + s][sink] = split_need[s];
    }
    // Splits are visited in descending remainder order so larger shares
    // round up first.
    let order: Vec<Vec<usize>> = (0..k)
        .map(|c| {
            let mut o = vec![0usize, 1, 2];
            o.sort_by(|&a, &b| remainders[c][b].cmp(&remainders[c][a]).then(a.cmp(&b)));
            o
        })
        .collect();
    let needed: usize = class_need.iter().sum();
    let mut flow = 0;
    loop {
        let mut prev = vec![usize::MAX; nodes];
        prev[0] = 0;
        let mut queue = VecDeque::from([0usize]);
        while let Some(u) = queue.pop_front() {
            let next: Vec<usize> = if (1..=k).contains(&u) {
                order[u - 1]
                    .iter()
                    .map(|s| k + 1 + s)
                    .chain((0..nodes).filter(|&v| v == 0 || (1..=k).contains(&v)))
                    .collect()
            } else {
                (0..nodes).collect()
            };
            for v in next {
                if prev[v] == usize::MAX && cap[u][v] > 0 {
                    prev[v] = u;
                    queue.push_back(v);
                }
            }
        }
        if prev[sink] == usize::MAX {
            break;
        }
        let mut v = sink;
        while v != 0 {
            let u = prev[v];
            cap[u][v] -= 1;
            cap[v][u] += 1;
            v = u;
        }
        flow += 1;
    }
    if flow != needed {
        return Err(Error::InvalidSplit(
            "could not balance class counts across splits".into(),
        ));
    }
    for c in 0..k {
        for s in 0..3 {
            // Residual capacity on the reverse edge is the flow on the cell.
            if remainders[c][s] > 0 && cap[k + 1 + s][c + 1] > 0 {
                alloc[c][s] += 1;
            }
        }
    }
    Ok(alloc)
}

/// Splits `ds` into (train, val, test) according to `spec`.
///
/// Items keep their original relative order inside each split. With
/// stratification every class is shuffled separately under the seed and
/// dealt out in proportion; otherwise the whole dataset is shuffled and cut.
pub fn stratified_split(ds: &Dataset, spec: &SplitSpec) -> Result<[Dataset; 3]> {
    spec.validate()?;
    let sizes = spec.sizes(ds.len());
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut parts: [Vec<usize>; 3] = Default::default();

    if spec.stratified {
        let classes = ds.class_indices()?;
        let names = ds.task.class_names();
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); names.len()];
        for (i, &c) in classes.iter().enumerate() {
            members[c].push(i);
        }
        for (c, m) in members.iter().enumerate() {
            if !m.is_empty() && m.len() < 3 {
                return Err(Error::InvalidSplit(format!(
                    "class {} has only {} member(s), fewer than the 3 splits; use stratified=false",
                    names[c],
                    m.len()
                )));
            }
        }
        let class_sizes: Vec<usize> = members.iter().map(Vec::len).collect();
        let alloc = allocate_counts(&class_sizes, sizes)?;
        for (c, m) in members.iter_mut().enumerate() {
            m.shuffle(&mut rng);
            let mut start = 0;
            for s in 0..3 {
                let end = start + alloc[c][s];
                parts[s].extend_from_slice(&m[start..end]);
                start = end;
            }
        }
    } else {
        let mut all: Vec<usize> = (0..ds.len()).collect();
        all.shuffle(&mut rng);
        let cut1 = sizes[0];
        let cut2 = sizes[0] + sizes[1];
        parts[0] = all[..cut1].to_vec();
        parts[1] = all[cut1..cut2].to_vec();
        parts[2] = all[cut2..].to_vec();
    }

    let make = |s: usize, idx: &mut Vec<usize>| {
        idx.sort_unstable();
        let prov = Provenance {
            split: Some(SplitProvenance {
                name: SPLIT_NAMES[s].to_string(),
                seed: spec.seed,
                ratios: spec.ratios,
                stratified: spec.stratified,
            }),
            ..ds.provenance.clone()
        };
        ds.subset(idx, prov)
    };
    let [mut a, mut b, mut c] = parts;
    Ok([make(0, &mut a), make(1, &mut b), make(2, &mut c)])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tsv(contents: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(contents.as_bytes()).unwrap();
        f
    }

    fn synthetic(counts: &[(CoarseLabel, usize)]) -> Dataset {
        let mut items = Vec::new();
        for &(label, n) in counts {
            for _ in 0..n {
                let id = format!("t{}", items.len());
                items.push(LabeledText::new(id, "some text", Some(label), None).unwrap());
            }
        }
        Dataset::new(items, Task::Task1a, Provenance::new("synthetic")).unwrap()
    }

    #[test]
    fn header_only_file_is_empty() {
        let f = tsv("id\ttext\tlabel_1a\tlabel_1b\n");
        let ds = load_tsv(f.path(), Task::Task1a).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn lowercase_labels_parse() {
        let f = tsv("id\ttext\ttask_1\ttask_2\n1\thello there\thof\tprfn\n2\tfine\tNot\tnone\n");
        let ds = load_tsv(f.path(), Task::Task1a).unwrap();
        assert_eq!(ds.items[0].label_1a, Some(CoarseLabel::Hof));
        assert_eq!(ds.items[0].label_1b, Some(FineLabel::Prfn));
        assert_eq!(ds.items[1].label_1a, Some(CoarseLabel::Not));
    }

    #[test]
    fn malformed_row_names_line() {
        let f = tsv("id\ttext\tlabel_1a\n1\tok\tHOF\nbroken-row\n");
        let err = load_tsv(f.path(), Task::Task1a).unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn unknown_label_named() {
        let f = tsv("1\ttext\tMAYBE\n");
        let err = load_tsv(f.path(), Task::Task1a).unwrap_err();
        assert!(err.to_string().contains("MAYBE"), "{err}");
    }

    #[test]
    fn duplicate_ids_rejected() {
        let f = tsv("1\ta\tHOF\n1\tb\tNOT\n");
        assert!(matches!(
            load_tsv(f.path(), Task::Task1a),
            Err(Error::DuplicateId(id)) if id == "1"
        ));
    }

    #[test]
    fn missing_label_is_error_unless_predicting() {
        let f = tsv("1\tjust text\n");
        assert!(load_tsv(f.path(), Task::Task1a).is_err());
        let ds = load_unlabeled_tsv(f.path(), Task::Task1a).unwrap();
        assert_eq!(ds.len(), 1);
        assert!(!ds.is_labeled());
        assert!(class_stats(&ds).is_err());
    }

    #[test]
    fn inconsistent_labels_are_kept() {
        let f = tsv("1\ttext\tNOT\tHATE\n");
        let ds = load_tsv(f.path(), Task::Task1b).unwrap();
        assert!(ds.items[0].labels_inconsistent());
    }

    #[test]
    fn extra_columns_ignored() {
        let f = tsv("1\ttext\tHOF\tOFFN\textra\tmore\n");
        let ds = load_tsv(f.path(), Task::Task1b).unwrap();
        assert_eq!(ds.items[0].label_1b, Some(FineLabel::Offn));
    }

    #[test]
    fn write_then_load_round_trips() {
        let ds = synthetic(&[(CoarseLabel::Hof, 2), (CoarseLabel::Not, 1)]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.tsv");
        write_tsv(&ds, &p).unwrap();
        let back = load_tsv(&p, Task::Task1a).unwrap();
        assert_eq!(back.items, ds.items);
    }

    #[test]
    fn single_item_histogram() {
        let ds = synthetic(&[(CoarseLabel::Hof, 1)]);
        let h = class_stats(&ds).unwrap();
        assert_eq!(h.get("HOF"), Some(1));
        assert_eq!(h.get("NOT"), Some(0));
        assert_eq!(h.total, 1);
    }

    #[test]
    fn split_sizes_floor_then_remainder() {
        let spec = SplitSpec::default();
        assert_eq!(spec.sizes(3843), [2690, 384, 769]);
        assert_eq!(spec.sizes(10), [7, 1, 2]);
        assert_eq!(spec.sizes(0), [0, 0, 0]);
    }

    #[test]
    fn invalid_ratios_rejected() {
        assert!(SplitSpec::new([0.5, 0.5, 0.0], 1, true).is_err());
        assert!(SplitSpec::new([0.6, 0.2, 0.3], 1, true).is_err());
        assert!(SplitSpec::new([0.6, 0.2, 0.2], 1, true).is_ok());
    }

    #[test]
    fn tiny_class_needs_unstratified() {
        let ds = synthetic(&[(CoarseLabel::Hof, 20), (CoarseLabel::Not, 2)]);
        let err = stratified_split(&ds, &SplitSpec::default()).unwrap_err();
        assert!(err.to_string().contains("stratified=false"), "{err}");
        let spec = SplitSpec {
            stratified: false,
            ..SplitSpec::default()
        };
        let parts = stratified_split(&ds, &spec).unwrap();
        assert_eq!(parts.iter().map(Dataset::len).sum::<usize>(), 22);
    }

    #[test]
    fn ten_items_same_seed_same_members() {
        let ds = synthetic(&[(CoarseLabel::Hof, 5), (CoarseLabel::Not, 5)]);
        let spec = SplitSpec::default();
        let a = stratified_split(&ds, &spec).unwrap();
        let b = stratified_split(&ds, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            a.iter().map(Dataset::len).collect::<Vec<_>>(),
            vec![7, 1, 2]
        );
    }

    #[test]
    fn manifest_reconstructs_split() {
        let ds = synthetic(&[(CoarseLabel::Hof, 30), (CoarseLabel::Not, 20)]);
        let spec = SplitSpec::default();
        let parts = stratified_split(&ds, &spec).unwrap();
        let manifest = SplitManifest::from_splits(&spec, &parts);
        let rebuilt = manifest.apply(&ds).unwrap();
        for (a, b) in parts.iter().zip(&rebuilt) {
            assert_eq!(a.items, b.items);
        }
    }

    #[test]
    fn allocation_respects_margins_and_shares() {
        let classes = [2501usize, 1342];
        let sizes = SplitSpec::default().sizes(3843);
        let alloc = allocate_counts(&classes, sizes).unwrap();
        for (c, row) in alloc.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), classes[c]);
            for s in 0..3 {
                let share = classes[c] as f64 * sizes[s] as f64 / 3843.0;
                assert!((row[s] as f64 - share).abs() < 1.0);
            }
        }
        for s in 0..3 {
            assert_eq!(alloc.iter().map(|r| r[s]).sum::<usize>(), sizes[s]);
        }
    }
}
