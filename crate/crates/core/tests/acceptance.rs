//! Acceptance suite. Prints one PASS / FAIL / SKIP line per criterion and
//! exits non-zero when a gating criterion fails.
//!
//! Criterion 8 needs the HASOC 2021 English training file
//! (`HATEID_HASOC_TSV`) and, for the encoder row, weights under
//! `HATEID_ENCODER_DIR`; without them it is reported as SKIP and never gates.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use hateid_core::search::reference_f1;
use hateid_core::{
    build_model, confusion_matrix, encoder_stub, enumerate_grid, f1_scores, load_checkpoint,
    param_count, run_grid, save_checkpoint, stratified_split, train, CoarseLabel, ConfusionMatrix,
    Dataset, EncoderDescriptor, Family, FineLabel, GridAxis, GridOptions, GridSpace, HyperParams,
    IdSequence, LabeledText, ModelInput, ModelSpec, PreprocessConfig, Preprocessor, Provenance,
    RunStatus, SplitSpec, Task, TaskMode, TrainConfig, TrainRequest, VariantName,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

enum Status {
    Pass,
    Fail,
    Skip,
}

struct Outcome {
    status: Status,
    detail: String,
}

fn pass(detail: impl Into<String>) -> Outcome {
    Outcome {
        status: Status::Pass,
        detail: detail.into(),
    }
}

fn fail(detail: impl Into<String>) -> Outcome {
    Outcome {
        status: Status::Fail,
        detail: detail.into(),
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        pass(detail)
    } else {
        fail(detail)
    }
}

// ---------------------------------------------------------------- fixtures

fn item(id: String, text: String, hof: bool, fine: usize) -> LabeledText {
    let (a, b) = if hof {
        (
            CoarseLabel::Hof,
            [FineLabel::Hate, FineLabel::Offn, FineLabel::Prfn][fine % 3],
        )
    } else {
        (CoarseLabel::Not, FineLabel::None)
    };
    LabeledText::new(id, text, Some(a), Some(b)).unwrap()
}

fn dataset(items: Vec<LabeledText>, task: Task) -> Dataset {
    Dataset::new(items, task, Provenance::new("synthetic")).unwrap()
}

const CALM: [&str; 8] = [
    "lovely", "sunny", "friend", "coffee", "garden", "music", "thanks", "holiday",
];
const HOSTILE: [&str; 8] = [
    "idiot", "stupid", "moron", "trash", "pathetic", "loser", "dumb", "clown",
];

/// Tweet-like rows: mentions, links and class-specific vocabulary.
fn tweet_rows(n: usize, seed: u64) -> Vec<LabeledText> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let hof = i % 2 == 0;
            let words = if hof { &HOSTILE } else { &CALM };
            let body: Vec<&str> = (0..rng.random_range(3..6))
                .map(|_| words[rng.random_range(0..8)])
                .collect();
            let text = format!(
                "@user_{} {} https://t.co/{i:04}",
                rng.random_range(0..50),
                body.join(" ")
            );
            item(format!("s{seed}-{i}"), text, hof, i / 2)
        })
        .collect()
}

fn split3(ds: &Dataset, seed: u64) -> [Dataset; 3] {
    stratified_split(ds, &SplitSpec::new([0.7, 0.1, 0.2], seed, true).unwrap()).unwrap()
}

// ---------------------------------------------------------------- criteria

fn c1_preprocessing_fixtures() -> Outcome {
    let cases = [
        (
            "This is enough of yours Modi This is not skill India it is kill India @narendramodi #ExitModi #Resign_PM_Modi https://t.co/m9FZyU4Lfg",
            "This is enough of yours Modi This is not skill India it is kill India username #ExitModi #Resign_PM_Modi link",
        ),
        (
            "Please, abdicate! You failed us. You failed everyone. Everyone is suffering. EVERYONE! #ModiKaVaccineJumla",
            "Please, abdicate! You failed us. You failed everyone. Everyone is suffering. EVERYONE! #ModiKaVaccineJumla",
        ),
        (
            "@Feisty_Waters Ok. What did you do to piss off the universe?",
            "username Ok. What did you do to piss off the universe?",
        ),
        (
            "@ndtv Nothing gonna help you please #Resign_PM_Modi",
            "username Nothing gonna help you please #Resign_PM_Modi",
        ),
    ];
    let pre = Preprocessor::new(PreprocessConfig::default()).unwrap();
    let mut bad = Vec::new();
    for (i, (input, golden)) in cases.iter().enumerate() {
        let out = pre.apply(input);
        let structural = !out.contains('@') && !out.contains("https://") && !out.contains("  ");
        let hashtags = input
            .split_whitespace()
            .filter(|w| w.starts_with('#'))
            .all(|h| out.split_whitespace().any(|w| w == h));
        if out != *golden || !structural || !hashtags {
            bad.push(format!("sample {}: got {out:?}", i + 1));
        }
    }
    check(
        bad.is_empty(),
        if bad.is_empty() {
            "4/4 golden strings".into()
        } else {
            bad.join("; ")
        },
    )
}

fn c2_split_arithmetic() -> Outcome {
    // 2501 HOF + 1342 NOT; HOF split as 683 HATE / 622 OFFN / 1196 PRFN
    let mut items = Vec::with_capacity(3843);
    let fine_counts = [683usize, 622, 1196];
    let mut k = 0;
    for (f, &count) in fine_counts.iter().enumerate() {
        for _ in 0..count {
            items.push(item(format!("h{k}"), format!("post {k}"), true, f));
            k += 1;
        }
    }
    for _ in 0..1342 {
        items.push(item(format!("h{k}"), format!("post {k}"), false, 0));
        k += 1;
    }
    let mut problems = Vec::new();
    for task in [Task::Task1a, Task::Task1b] {
        let ds = dataset(items.clone(), task);
        let spec = SplitSpec::new([0.7, 0.1, 0.2], 42, true).unwrap();
        let runs: Vec<[Dataset; 3]> = (0..3)
            .map(|_| stratified_split(&ds, &spec).unwrap())
            .collect();
        let sizes: Vec<usize> = runs[0].iter().map(Dataset::len).collect();
        if sizes != [2690, 384, 769] {
            problems.push(format!("task {task}: sizes {sizes:?}"));
        }
        let ids = |r: &[Dataset; 3]| -> Vec<Vec<String>> {
            r.iter()
                .map(|d| d.items.iter().map(|i| i.id.clone()).collect())
                .collect()
        };
        if ids(&runs[1]) != ids(&runs[0]) || ids(&runs[2]) != ids(&runs[0]) {
            problems.push(format!("task {task}: reruns differ"));
        }
        let totals = class_counts(&ds);
        for (s, part) in runs[0].iter().enumerate() {
            let counts = class_counts(part);
            for (c, &total) in totals.iter().enumerate() {
                let expected = total as f64 * part.len() as f64 / ds.len() as f64;
                if (counts[c] as f64 - expected).abs() > 1.0 {
                    problems.push(format!(
                        "task {task} split {s} class {c}: {} vs {expected:.2}",
                        counts[c]
                    ));
                }
            }
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            "2690/384/769 for 1A and 1B, classes within +-1, 3 identical reruns".into()
        } else {
            problems.join("; ")
        },
    )
}

fn class_counts(ds: &Dataset) -> Vec<usize> {
    let mut counts = vec![0; ds.task.class_names().len()];
    for c in ds.class_indices().unwrap() {
        counts[c] += 1;
    }
    counts
}

/// Exact rational p/q with q > 0; 0/0 is kept as such and read as 0.
#[derive(Clone, Copy)]
struct Ratio(u128, u128);

impl Ratio {
    fn to_f64(self) -> f64 {
        if self.1 == 0 {
            0.0
        } else {
            self.0 as f64 / self.1 as f64
        }
    }
}

struct OracleScores {
    precision: Vec<f64>,
    recall: Vec<f64>,
    f1: Vec<f64>,
    support: Vec<u64>,
    macro_exact: (u128, u128),
    macro_f1: f64,
    weighted_f1: f64,
    accuracy: f64,
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Scores from an explicit list of (truth, prediction) pairs, counting each
/// class's hits and misses one example at a time.
fn oracle(rows: &[Vec<u64>]) -> OracleScores {
    let k = rows.len();
    let mut pairs = Vec::new();
    for (t, row) in rows.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            for _ in 0..n {
                pairs.push((t, p));
            }
        }
    }
    let mut out = OracleScores {
        precision: vec![],
        recall: vec![],
        f1: vec![],
        support: vec![],
        macro_exact: (0, 1),
        macro_f1: 0.0,
        weighted_f1: 0.0,
        accuracy: 0.0,
    };
    let mut f1_ratios = Vec::new();
    for c in 0..k {
        let tp = pairs.iter().filter(|&&(t, p)| t == c && p == c).count() as u128;
        let fp = pairs.iter().filter(|&&(t, p)| t != c && p == c).count() as u128;
        let fn_ = pairs.iter().filter(|&&(t, p)| t == c && p != c).count() as u128;
        let precision = Ratio(tp, tp + fp);
        let recall = Ratio(tp, tp + fn_);
        // harmonic mean of the two ratios, reduced to integers
        let f1 = if tp == 0 {
            Ratio(0, if tp + fp + fn_ == 0 { 0 } else { 1 })
        } else {
            Ratio(2 * tp, 2 * tp + fp + fn_)
        };
        out.precision.push(precision.to_f64());
        out.recall.push(recall.to_f64());
        out.f1.push(f1.to_f64());
        out.support.push((tp + fn_) as u64);
        f1_ratios.push(f1);
    }
    let (mut num, mut den) = (0u128, 1u128);
    for r in &f1_ratios {
        let (rn, rd) = if r.1 == 0 { (0, 1) } else { (r.0, r.1) };
        num = num * rd + rn * den;
        den *= rd;
        let g = gcd(num, den).max(1);
        num /= g;
        den /= g;
    }
    den *= k as u128;
    let g = gcd(num, den).max(1);
    out.macro_exact = (num / g, den / g);
    out.macro_f1 = out.f1.iter().sum::<f64>() / k as f64;
    let total = pairs.len();
    out.weighted_f1 = if total == 0 {
        0.0
    } else {
        out.f1
            .iter()
            .zip(&out.support)
            .map(|(f, &s)| s as f64 * f)
            .sum::<f64>()
            / total as f64
    };
    out.accuracy = if total == 0 {
        0.0
    } else {
        pairs.iter().filter(|(t, p)| t == p).count() as f64 / total as f64
    };
    out
}

fn compare(rows: &[Vec<u64>]) -> Option<String> {
    let k = rows.len();
    let names: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let cm = ConfusionMatrix::from_rows(rows).unwrap();
    let r = f1_scores(&cm, &names);
    let o = oracle(rows);
    for c in 0..k {
        let got = &r.classes[c];
        if got.precision != o.precision[c]
            || got.recall != o.recall[c]
            || got.f1 != o.f1[c]
            || got.support != o.support[c]
        {
            return Some(format!("{rows:?} class {c}"));
        }
    }
    if r.macro_f1 != o.macro_f1 || r.weighted_f1 != o.weighted_f1 || r.accuracy != o.accuracy {
        return Some(format!("{rows:?} averages"));
    }
    let exact = o.macro_exact.0 as f64 / o.macro_exact.1 as f64;
    if (r.macro_f1 - exact).abs() > 4.0 * f64::EPSILON {
        return Some(format!("{rows:?} macro drifts from the exact rational"));
    }
    None
}

fn c3_metric_oracle() -> Outcome {
    let mut failures = Vec::new();
    let mut n2 = 0;
    for a in 0..5u64 {
        for b in 0..5 {
            for c in 0..5 {
                for d in 0..5 {
                    n2 += 1;
                    failures.extend(compare(&[vec![a, b], vec![c, d]]));
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2021);
    for _ in 0..200 {
        let rows: Vec<Vec<u64>> = (0..4)
            .map(|_| (0..4).map(|_| rng.random_range(0..20)).collect())
            .collect();
        failures.extend(compare(&rows));
    }
    // the confusion matrix builder against direct counting
    let truth: Vec<usize> = (0..500).map(|_| rng.random_range(0..4)).collect();
    let pred: Vec<usize> = (0..500).map(|_| rng.random_range(0..4)).collect();
    let cm = confusion_matrix(&truth, &pred, 4).unwrap();
    for t in 0..4 {
        for p in 0..4 {
            let direct = truth
                .iter()
                .zip(&pred)
                .filter(|&(&a, &b)| a == t && b == p)
                .count() as u64;
            if cm.get(t, p) != direct {
                failures.push(format!("confusion cell ({t},{p})"));
            }
        }
    }
    check(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{n2} two-class + 200 four-class matrices identical to the brute-force oracle")
        } else {
            format!("{} mismatches, first: {}", failures.len(), failures[0])
        },
    )
}

fn grid_opts(task: TaskMode, epochs: usize) -> GridOptions {
    let mut opts = GridOptions::new(task);
    opts.train = Some(TrainConfig {
        max_epochs: epochs,
        patience: epochs - 1,
        ..TrainConfig::recurrent()
    });
    opts.jobs = std::thread::available_parallelism()
        .map(|n| n.get().min(8))
        .unwrap_or(2);
    opts.keep_checkpoints = false;
    opts
}

fn c4_grid_completeness() -> Outcome {
    let mut problems = Vec::new();
    let sizes = [
        (
            "char",
            enumerate_grid(&GridSpace::char_lstm()).unwrap().len(),
            36,
        ),
        (
            "word",
            enumerate_grid(&GridSpace::word_lstm()).unwrap().len(),
            30,
        ),
        (
            "feature/base",
            enumerate_grid(&GridSpace::feature_gru(&[VariantName::Base]))
                .unwrap()
                .len(),
            15,
        ),
        (
            "feature/large",
            enumerate_grid(&GridSpace::feature_gru(&[VariantName::Large]))
                .unwrap()
                .len(),
            15,
        ),
    ];
    for (name, got, want) in sizes {
        if got != want {
            problems.push(format!("{name} enumerates {got}, want {want}"));
        }
    }

    let splits = split3(&dataset(tweet_rows(40, 4), Task::Task1a), 4);
    let tmp = tempfile::tempdir().unwrap();
    let mut opts = grid_opts(TaskMode::Binary, 1);
    let stub: Arc<dyn hateid_core::Encoder> = Arc::new(encoder_stub(16, 1).unwrap());
    opts.encoders.insert(VariantName::Base, stub.clone());
    opts.encoders.insert(VariantName::Large, stub);

    let full = [
        (GridSpace::char_lstm(), 36),
        (GridSpace::word_lstm(), 30),
        (
            GridSpace::feature_gru(&[VariantName::Base, VariantName::Large]),
            30,
        ),
    ];
    let mut counted = Vec::new();
    for (space, want) in full {
        let space = space.with_preprocessed(&[true]);
        let out = tmp.path().join(space.family.as_str());
        let table = run_grid(&space, &splits, &opts, &out).unwrap();
        let ok = table
            .rows
            .iter()
            .filter(|r| r.status == RunStatus::Ok)
            .count();
        counted.push(format!("{}={ok}", space.family.as_str()));
        if table.rows.len() != want || ok != want {
            problems.push(format!(
                "{}: {} rows, {ok} ok, want {want}",
                space.family,
                table.rows.len()
            ));
        }
    }

    // crash after 10 rows, then resume
    let space = GridSpace::char_lstm().with_preprocessed(&[true]);
    let out = tmp.path().join("resume");
    let mut partial = opts.clone();
    partial.max_new_rows = Some(10);
    run_grid(&space, &splits, &partial, &out).unwrap();
    let log = out.join("rows.jsonl");
    let before = fs::read_to_string(&log).unwrap();
    // a write cut short by the crash
    fs::write(&log, format!("{before}{{\"key\":\"char_lstm-pre-e2")).unwrap();
    let table = run_grid(&space, &splits, &opts, &out).unwrap();
    let after = fs::read_to_string(&log).unwrap();
    if !after.starts_with(&before) {
        problems.push("resumed log rewrote completed rows".into());
    }
    let new_lines = after.lines().count() - before.lines().count();
    if new_lines != 26 || table.rows.len() != 36 {
        problems.push(format!(
            "resume trained {new_lines} rows, table has {}",
            table.rows.len()
        ));
    }
    run_grid(&space, &splits, &opts, &out).unwrap();
    if fs::read_to_string(&log).unwrap() != after {
        problems.push("rerunning a complete grid changed the log".into());
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "36/30/15+15 points, all rows ok ({}), resume after 10 trained the other 26 only",
                counted.join(", ")
            )
        } else {
            problems.join("; ")
        },
    )
}

/// 64 examples whose classes use disjoint alphabets and vocabularies.
fn separable(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..64)
        .map(|i| {
            let hof = i % 2 == 1;
            let words: Vec<String> = (0..rng.random_range(2..5))
                .map(|_| {
                    let (lo, hi) = if hof { (b'n', b'z') } else { (b'a', b'm') };
                    (0..rng.random_range(3..7))
                        .map(|_| rng.random_range(lo..=hi) as char)
                        .collect()
                })
                .collect();
            item(format!("x{i}"), words.join(" "), hof, i)
        })
        .collect();
    dataset(items, Task::Task1a)
}

fn separable_words(seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let items = (0..64)
        .map(|i| {
            let hof = i % 2 == 1;
            let words = if hof { &HOSTILE } else { &CALM };
            let text: Vec<&str> = (0..rng.random_range(3..7))
                .map(|_| words[rng.random_range(0..8)])
                .collect();
            item(format!("w{i}"), text.join(" "), hof, i)
        })
        .collect();
    dataset(items, Task::Task1a)
}

fn overfit(
    hp: HyperParams,
    ds: &Dataset,
    encoder: Option<Arc<dyn hateid_core::Encoder>>,
) -> (f64, usize, f64) {
    let start = Instant::now();
    let mut req = TrainRequest::new(hp, TaskMode::Binary);
    req.preprocess = PreprocessConfig::disabled();
    req.train = TrainConfig {
        max_epochs: 50,
        patience: 49,
        ..TrainConfig::recurrent()
    };
    req.encoder = encoder;
    let (tm, history) = train(&req, ds, ds).unwrap();
    let f1 = tm.evaluate(ds).unwrap().macro_f1;
    let first = history
        .epochs
        .iter()
        .find(|e| e.val_macro_f1 >= 0.95)
        .map(|e| e.epoch)
        .unwrap_or(0);
    (f1, first, start.elapsed().as_secs_f64())
}

fn c5_overfit() -> Outcome {
    let runs = [
        (
            "Char_LSTM E=50 H=16",
            overfit(HyperParams::char_lstm(50, 16, 0.25), &separable(5), None),
        ),
        (
            "Word_LSTM E=100 H=32",
            overfit(
                HyperParams::word_lstm(100, 32, 0.25),
                &separable_words(5),
                None,
            ),
        ),
        (
            "feature GRU stub W=16 H=32",
            overfit(
                HyperParams::feature_gru(None, 32, 0.25),
                &separable_words(6),
                Some(Arc::new(encoder_stub(16, 7).unwrap())),
            ),
        ),
    ];
    let ok = runs
        .iter()
        .all(|(_, (f1, first, secs))| *f1 >= 0.95 && *first >= 1 && *secs < 300.0);
    let detail = runs
        .iter()
        .map(|(n, (f1, first, secs))| {
            format!("{n}: F1 {f1:.3} (>=0.95 at epoch {first}, {secs:.1}s)")
        })
        .collect::<Vec<_>>()
        .join("; ");
    check(ok, detail)
}

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs() + b.abs();
    if scale < 1e-7 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

fn c6_numerics() -> Outcome {
    let mut problems = Vec::new();

    // gradients: char LSTM and feature GRU, binary and four-class heads
    let tiny = [
        (
            ModelSpec::for_tokens(HyperParams::char_lstm(3, 4, 0.0), 7),
            1usize,
        ),
        (
            ModelSpec::for_tokens(HyperParams::word_lstm(3, 4, 0.0).with_classes(4), 9),
            4,
        ),
        (
            ModelSpec::for_features(HyperParams::feature_gru(None, 3, 0.0), 5),
            1,
        ),
    ];
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for (spec, classes) in tiny {
        let mut model = build_model(&spec.grid_constrained(false), None, 3).unwrap();
        let inputs: Vec<ModelInput> = if model.spec().hyperparams.family == Family::BertFeatureGru {
            let enc = encoder_stub(5, 2).unwrap();
            ["a b c", "d e", "f"]
                .iter()
                .map(|t| ModelInput::Features(hateid_core::Encoder::encode(&enc, t).unwrap()))
                .collect()
        } else {
            let v = model.spec().vocab_size as u32;
            vec![
                ModelInput::Tokens(IdSequence {
                    ids: vec![2, 3, 4 % v, 5 % v],
                    true_length: 4,
                }),
                ModelInput::Tokens(IdSequence {
                    ids: vec![3, 6 % v, 0, 0],
                    true_length: 2,
                }),
                ModelInput::Tokens(IdSequence {
                    ids: vec![1, 2, 3, 0],
                    true_length: 3,
                }),
            ]
        };
        let batch: Vec<&ModelInput> = inputs.iter().collect();
        let targets: Vec<usize> = (0..3).map(|i| i % classes.max(2)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, grads) = model.forward_backward(&batch, &targets, &mut rng).unwrap();
        let eps = 1e-5;
        for p in 0..grads.tensors.len() {
            let (rows, cols) = grads.tensors[p].dim();
            for r in 0..rows {
                for c in 0..cols {
                    let orig = model.params().tensors[p][[r, c]];
                    model.params_mut().tensors[p][[r, c]] = orig + eps;
                    let up = model
                        .forward_backward(&batch, &targets, &mut rng)
                        .unwrap()
                        .0;
                    model.params_mut().tensors[p][[r, c]] = orig - eps;
                    let down = model
                        .forward_backward(&batch, &targets, &mut rng)
                        .unwrap()
                        .0;
                    model.params_mut().tensors[p][[r, c]] = orig;
                    let e = rel_err((up - down) / (2.0 * eps), grads.tensors[p][[r, c]]);
                    worst = worst.max(e);
                    checked += 1;
                }
            }
        }
    }
    if worst > 1e-3 {
        problems.push(format!("gradient relative error {worst:.2e}"));
    }

    // padding must not move eval-mode logits
    let mut pad_worst: f64 = 0.0;
    for spec in [
        ModelSpec::for_tokens(HyperParams::char_lstm(50, 16, 0.5), 30),
        ModelSpec::for_tokens(HyperParams::word_lstm(100, 32, 0.25).with_classes(4), 30),
    ] {
        let model = build_model(&spec, None, 11).unwrap();
        let short = ModelInput::Tokens(IdSequence {
            ids: vec![4, 9, 2],
            true_length: 3,
        });
        let padded = ModelInput::Tokens(IdSequence {
            ids: vec![4, 9, 2, 0, 0, 0, 0, 0],
            true_length: 3,
        });
        let long = ModelInput::Tokens(IdSequence {
            ids: (1..=20).collect(),
            true_length: 20,
        });
        let alone = model.forward(&[&short]).unwrap();
        let with_pad = model.forward(&[&padded]).unwrap();
        let in_batch = model.forward(&[&long, &short]).unwrap();
        for j in 0..alone.ncols() {
            pad_worst = pad_worst
                .max((alone[[0, j]] - with_pad[[0, j]]).abs())
                .max((alone[[0, j]] - in_batch[[1, j]]).abs());
        }
    }
    if pad_worst > 1e-6 {
        problems.push(format!("padding moved logits by {pad_worst:.2e}"));
    }

    // parameter counts for all 66 token-family grid points
    let mut mismatches = 0;
    let mut points = 0;
    for space in [GridSpace::char_lstm(), GridSpace::word_lstm()] {
        for hp in enumerate_grid(&space).unwrap() {
            let v = 57;
            let (e, h, c) = (hp.embedding_dim, hp.hidden_dim, hp.num_classes);
            let closed = v * e + 4 * ((e + h) * h + h) + h * c + c;
            let spec = ModelSpec::for_tokens(hp, v);
            let built = build_model(&spec, None, 1).unwrap().params().count();
            if built != closed || param_count(&spec).unwrap() != closed {
                mismatches += 1;
            }
            points += 1;
        }
    }
    if mismatches > 0 || points != 66 {
        problems.push(format!("{mismatches} of {points} parameter counts differ"));
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "{checked} gradient entries (worst rel err {worst:.1e}), pad drift {pad_worst:.1e}, {points}/66 param counts"
            )
        } else {
            problems.join("; ")
        },
    )
}

fn bit_equal(a: &ndarray::Array2<f64>, b: &ndarray::Array2<f64>) -> bool {
    a.dim() == b.dim()
        && a.iter()
            .zip(b.iter())
            .all(|(x, y)| x.to_bits() == y.to_bits())
}

fn c7_checkpoint_round_trip() -> Outcome {
    let ds = dataset(tweet_rows(24, 7), Task::Task1b);
    let texts = [
        "@a you stupid clown https://x.y",
        "coffee in the garden",
        "idiot",
        "thanks friend 🔥",
    ];
    let tmp = tempfile::tempdir().unwrap();
    let mut checked = Vec::new();
    let mut problems = Vec::new();
    let cases: Vec<(
        &str,
        HyperParams,
        TaskMode,
        Option<Arc<dyn hateid_core::Encoder>>,
    )> = vec![
        (
            "char",
            HyperParams::char_lstm(50, 16, 0.5),
            TaskMode::Binary,
            None,
        ),
        (
            "word",
            HyperParams::word_lstm(100, 32, 0.25),
            TaskMode::Flat,
            None,
        ),
        (
            "feature",
            HyperParams::feature_gru(None, 32, 0.25),
            TaskMode::Conditional,
            Some(Arc::new(encoder_stub(16, 3).unwrap())),
        ),
    ];
    for (name, hp, task, encoder) in cases {
        let mut req = TrainRequest::new(hp, task);
        req.train = TrainConfig {
            max_epochs: 2,
            patience: 1,
            ..TrainConfig::recurrent()
        };
        req.encoder = encoder;
        let (tm, _) = train(&req, &ds, &ds).unwrap();
        let dir = tmp.path().join(name);
        save_checkpoint(&tm, &dir).unwrap();
        let back = load_checkpoint(&dir).unwrap();
        if bit_equal(&tm.logits(&texts).unwrap(), &back.logits(&texts).unwrap()) {
            checked.push(name);
        } else {
            problems.push(format!("{name} logits differ after reload"));
        }
    }
    #[cfg(feature = "bert")]
    {
        use hateid_core::pretrained::bert;
        let enc = tmp.path().join("tiny-bert");
        bert::write_random_checkpoint(&enc, 16, 1, 2, &["stupid", "idiot", "coffee", "garden"], 5)
            .unwrap();
        let mut req = TrainRequest::new(HyperParams::finetune(VariantName::Base), TaskMode::Binary);
        req.train = TrainConfig {
            max_epochs: 1,
            patience: 0,
            ..TrainConfig::finetune()
        };
        req.finetune_encoder = Some(EncoderDescriptor::Bert {
            variant: VariantName::Base,
            dir: Some(enc),
            max_tokens: 32,
        });
        let (tm, _) = train(&req, &ds, &ds).unwrap();
        let dir = tmp.path().join("finetune");
        save_checkpoint(&tm, &dir).unwrap();
        let back = load_checkpoint(&dir).unwrap();
        if bit_equal(&tm.logits(&texts).unwrap(), &back.logits(&texts).unwrap()) {
            checked.push("finetune");
        } else {
            problems.push("finetune logits differ after reload".into());
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!("bit-exact logits after reload: {}", checked.join(", "))
        } else {
            problems.join("; ")
        },
    )
}

fn c8_reported_numbers() -> Outcome {
    let Some(path) = std::env::var_os("HATEID_HASOC_TSV") else {
        return Outcome {
            status: Status::Skip,
            detail: "HATEID_HASOC_TSV not set; the HASOC 2021 English data is not bundled. \
                     The property criteria above are the acceptance bar without it"
                .into(),
        };
    };
    let ds = match hateid_core::load_tsv(Path::new(&path), Task::Task1a) {
        Ok(d) => d,
        Err(e) => return fail(format!("cannot read {}: {e}", Path::new(&path).display())),
    };
    let splits = split3(&ds, 42);
    let mut notes = Vec::new();
    let mut ok = true;
    let mut configs = vec![(HyperParams::word_lstm(300, 256, 0.25), None)];
    match (EncoderDescriptor::Bert {
        variant: VariantName::Base,
        dir: None,
        max_tokens: 128,
    })
    .open()
    {
        Ok(enc) => configs.push((
            HyperParams::feature_gru(Some(VariantName::Base), 256, 0.25),
            Some(enc),
        )),
        Err(e) => notes.push(format!("feature row skipped: {e}")),
    }
    for (hp, enc) in configs {
        let mut req = TrainRequest::new(hp.clone(), TaskMode::Binary);
        req.encoder = enc;
        req.feature_cache = std::env::var_os("HATEID_FEATURE_CACHE").map(Into::into);
        let (tm, _) = match train(&req, &splits[0], &splits[1]) {
            Ok(r) => r,
            Err(e) => return fail(format!("{} training failed: {e}", hp.family)),
        };
        let f1 = tm.evaluate(&splits[2]).unwrap().macro_f1;
        let row = hateid_core::GridRow {
            key: String::new(),
            index: 0,
            family: hp.family,
            preprocessed: true,
            hyperparams: hp.clone(),
            status: RunStatus::Ok,
            test_f1: Some(f1),
            val_f1: None,
            test_weighted_f1: None,
            params: None,
            best_epoch: None,
            seed: 42,
            checkpoint: None,
            error: None,
            best: false,
        };
        let reported = reference_f1(&row).unwrap();
        let within = (f1 - reported).abs() <= 0.05;
        ok &= within;
        notes.push(format!(
            "{}: macro-F1 {f1:.3} vs reported {reported:.2}",
            hp.family.display_name()
        ));
    }
    check(ok, notes.join("; "))
}

fn c9_ablation_pairs() -> Outcome {
    let splits = split3(&dataset(tweet_rows(60, 9), Task::Task1a), 9);
    let tmp = tempfile::tempdir().unwrap();
    let opts = grid_opts(TaskMode::Binary, 3);
    let mut problems = Vec::new();
    let mut diffs = Vec::new();
    let spaces = [
        GridSpace {
            family: Family::CharLstm,
            axes: vec![
                GridAxis::EmbeddingDim(vec![50]),
                GridAxis::HiddenDim(vec![16, 32]),
                GridAxis::Dropout(vec![0.5]),
            ],
            preprocessed: vec![true, false],
            grid_constrained: true,
        },
        GridSpace {
            family: Family::WordLstm,
            axes: vec![
                GridAxis::HiddenDim(vec![32, 64]),
                GridAxis::Dropout(vec![0.25]),
            ],
            preprocessed: vec![true, false],
            grid_constrained: true,
        },
    ];
    for space in spaces {
        let table = run_grid(
            &space,
            &splits,
            &opts,
            &tmp.path().join(space.family.as_str()),
        )
        .unwrap();
        let mut by_hp: BTreeMap<String, Vec<(bool, f64)>> = BTreeMap::new();
        for r in &table.rows {
            let hp = serde_json::to_string(&r.hyperparams).unwrap();
            by_hp
                .entry(hp)
                .or_default()
                .push((r.preprocessed, r.test_f1.unwrap_or(f64::NAN)));
        }
        for (hp, rows) in &by_hp {
            let flags: HashSet<bool> = rows.iter().map(|r| r.0).collect();
            if rows.len() != 2 || flags.len() != 2 {
                problems.push(format!("{hp}: {rows:?}"));
            } else {
                let pre = rows.iter().find(|r| r.0).unwrap().1;
                let raw = rows.iter().find(|r| !r.0).unwrap().1;
                diffs.push(pre - raw);
            }
        }
        if table.rows.len() != 2 * space.size() {
            problems.push(format!("{}: {} rows", space.family, table.rows.len()));
        }
    }
    check(
        problems.is_empty(),
        if problems.is_empty() {
            format!(
                "{} hyperparameter sets each with preprocessed and raw rows (F1 deltas {:?})",
                diffs.len(),
                diffs.iter().map(|d| format!("{d:+.3}")).collect::<Vec<_>>()
            )
        } else {
            problems.join("; ")
        },
    )
}

fn main() {
    // Tests run under `cargo test`; honour a name filter when one is given.
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: [(u32, &str, bool, fn() -> Outcome); 9] = [
        (1, "preprocessing fixtures", true, c1_preprocessing_fixtures),
        (2, "split arithmetic", true, c2_split_arithmetic),
        (3, "metric oracle equivalence", true, c3_metric_oracle),
        (
            4,
            "grid completeness and resume",
            true,
            c4_grid_completeness,
        ),
        (5, "overfit smoke tests", true, c5_overfit),
        (6, "numerical checks", true, c6_numerics),
        (7, "checkpoint round trip", true, c7_checkpoint_round_trip),
        (
            8,
            "reported-number reproduction",
            false,
            c8_reported_numbers,
        ),
        (9, "preprocessing ablation pairs", true, c9_ablation_pairs),
    ];
    let mut gating_failures = 0;
    for (n, name, gating, f) in criteria {
        if let Some(flt) = &filter {
            if !name.contains(flt.as_str()) && *flt != n.to_string() {
                continue;
            }
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            fail(format!("panicked: {msg}"))
        });
        let tag = match outcome.status {
            Status::Pass => "PASS",
            Status::Fail => {
                if gating {
                    gating_failures += 1;
                }
                "FAIL"
            }
            Status::Skip => "SKIP",
        };
        println!(
            "{tag} criterion {n} ({name}, {:.1}s): {}",
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
    }
    if gating_failures > 0 {
        println!("{gating_failures} gating criteria failed");
        std::process::exit(1);
    }
}
