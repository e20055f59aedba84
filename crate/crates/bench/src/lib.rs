//! Shared fixtures for the predpower benchmarks.

use predpower_core::ingest::columns;
use predpower_core::{simulate_table, AnalysisTable, ModelSpec, SimulationConfig, Texts};

pub fn table(n_subjects: usize, n_words: usize) -> (SimulationConfig, AnalysisTable) {
    let c = SimulationConfig {
        n_subjects,
        n_words,
        seed: 1,
        ..SimulationConfig::default()
    };
    let t = simulate_table(&c).expect("simulation succeeds");
    (c, t)
}

pub fn baseline(c: &SimulationConfig) -> ModelSpec {
    ModelSpec::new([
        columns::LENGTH.to_string(),
        columns::LOGFREQ.to_string(),
        columns::surprisal(&c.lm_tag),
        columns::entropy(&c.lm_tag),
        columns::score(&c.test),
    ])
}

pub fn full(c: &SimulationConfig) -> ModelSpec {
    baseline(c).with(c.interaction_column())
}

/// Sentences of `len` words drawn from a vocabulary of `vocab` types.
pub fn sentences(n: usize, len: usize, vocab: usize) -> Vec<Vec<String>> {
    let mut state = 0x9e37_79b9_u64;
    (0..n)
        .map(|_| {
            (0..len)
                .map(|_| {
                    state = state.wrapping_mul(6_364_136_223_846_793_005).wrapping_add(1_442_695_040_888_963_407);
                    format!("w{}", (state >> 33) as usize % vocab)
                })
                .collect()
        })
        .collect()
}

pub fn texts(sentences: &[Vec<String>], per_text: usize) -> Texts {
    sentences
        .chunks(per_text)
        .enumerate()
        .map(|(i, chunk)| {
            let body: Vec<String> = chunk.iter().map(|s| format!("{}.", s.join(" "))).collect();
            (format!("t{i:03}"), body.join(" "))
        })
        .collect()
}
