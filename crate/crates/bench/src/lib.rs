//! Fixtures shared by the benchmarks.

use hateid_core::{ConfusionMatrix, Level, ModelInput, Vocab};

const SAMPLES: [&str; 6] = [
    "@ndtv Nothing gonna help you please #Resign_PM_Modi https://t.co/m9FZyU4Lfg",
    "@Feisty_Waters Ok. What did you do   with the money?? 🔥🔥",
    "what a lovely day with friends 😂 #weekend",
    "RT @someone: this is   absolute garbage https://example.com/a?b=c",
    "No more lockdowns!! 🙏🏽 @GovIndia listen to the people",
    "plain text without anything special in it at all",
];

/// `n` tweet-like strings cycling through a few realistic shapes.
pub fn tweets(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| format!("{} {i}", SAMPLES[i % SAMPLES.len()]))
        .collect()
}

/// Token-id inputs for a batch of `n` tweets at `level`, plus the vocab size.
pub fn token_batch(n: usize, level: Level, max_len: usize) -> (Vec<ModelInput>, usize) {
    let texts = tweets(n);
    let vocab = Vocab::build(&texts, level, 1).expect("fixture vocab");
    let inputs = texts
        .iter()
        .map(|t| ModelInput::Tokens(vocab.encode(t, max_len)))
        .collect();
    (inputs, vocab.len())
}

/// A deterministic K×K confusion matrix with roughly `n` entries.
pub fn confusion(k: usize, n: u64) -> ConfusionMatrix {
    let per = n / (k * k) as u64;
    let rows: Vec<Vec<u64>> = (0..k)
        .map(|i| {
            (0..k)
                .map(|j| if i == j { per * 3 } else { per / 2 + j as u64 })
                .collect()
        })
        .collect();
    ConfusionMatrix::from_rows(&rows).expect("square")
}
