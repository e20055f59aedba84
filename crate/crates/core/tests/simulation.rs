//! Generative-simulation checks of the statistical machinery.

use predpower_core::ingest::columns;
use predpower_core::{
    cross_validated_delta_ll, fit_random_intercept_lmm, make_item_folds, run_baseline_pp, run_group_split_pp,
    simulate_table, AnalysisConfig, Coefficients, Measure, ModelSpec, SimulationConfig, TestConfig,
};
use rayon::prelude::*;

fn quick_tests() -> TestConfig {
    TestConfig {
        n_perm: 200,
        n_boot: 1000,
        ..TestConfig::default()
    }
}

fn interaction_spec(c: &SimulationConfig) -> ModelSpec {
    ModelSpec::new([
        columns::LENGTH.to_string(),
        columns::LOGFREQ.to_string(),
        columns::surprisal(&c.lm_tag),
        columns::entropy(&c.lm_tag),
        columns::score(&c.test),
        c.interaction_column(),
    ])
}

#[test]
fn absent_subject_variance_is_estimated_near_zero() {
    let hits = (0..100u64)
        .into_par_iter()
        .filter(|&seed| {
            let c = SimulationConfig {
                n_subjects: 50,
                n_words: 50,
                sigma2_subj: 0.0,
                seed: 40_000 + seed,
                ..SimulationConfig::default()
            };
            let t = simulate_table(&c).unwrap();
            let fit = fit_random_intercept_lmm(&t, &interaction_spec(&c)).unwrap();
            fit.sigma2_subj < 0.05 * fit.sigma2_resid
        })
        .count();
    assert!(hits >= 90, "{hits}/100");
}

#[test]
fn interaction_sign_is_recovered() {
    for (beta6, base) in [(0.02, 41_000u64), (-0.02, 42_000)] {
        let hits = (0..100u64)
            .into_par_iter()
            .filter(|&seed| {
                let c = SimulationConfig {
                    n_subjects: 30,
                    n_words: 300,
                    beta: Coefficients {
                        interaction: beta6,
                        ..Coefficients::default()
                    },
                    seed: base + seed,
                    ..SimulationConfig::default()
                };
                let t = simulate_table(&c).unwrap();
                let fit = fit_random_intercept_lmm(&t, &interaction_spec(&c)).unwrap();
                fit.coefficient(&c.interaction_column()).unwrap().signum() == beta6.signum()
            })
            .count();
        assert!(hits >= 95, "β6 = {beta6}: {hits}/100");
    }
}

#[test]
fn bootstrap_interval_agrees_with_rejections() {
    let outcomes: Vec<(bool, bool)> = (0..60u64)
        .map(|seed| {
            let c = SimulationConfig {
                n_subjects: 20,
                n_words: 200,
                beta: Coefficients {
                    interaction: -0.03,
                    ..Coefficients::default()
                },
                seed: 43_000 + seed,
                ..SimulationConfig::default()
            };
            let t = simulate_table(&c).unwrap();
            let folds = make_item_folds(t.items(), 5, seed).unwrap();
            let target = interaction_spec(&c);
            let base = ModelSpec::new(target.predictors[..5].to_vec());
            let tests = TestConfig {
                perm_seed: seed,
                boot_seed: seed,
                ..quick_tests()
            };
            let r = cross_validated_delta_ll(&t, &base, &target, &folds, &tests).unwrap();
            (r.significant(0.05), r.ci95.0 > 0.0 || r.ci95.1 < 0.0)
        })
        .collect();
    let rejected = outcomes.iter().filter(|o| o.0).count();
    let agreeing = outcomes.iter().filter(|o| o.0 && o.1).count();
    assert!(rejected >= 30, "only {rejected}/60 rejections");
    assert!(agreeing as f64 >= 0.9 * rejected as f64, "{agreeing}/{rejected}");
}

#[test]
fn entropy_predicts_less_when_times_follow_surprisal() {
    let tags = vec!["sim".to_string()];
    let cfg = AnalysisConfig {
        k: 5,
        tests: quick_tests(),
        ..AnalysisConfig::default()
    };
    let hits = (0..50u64)
        .filter(|&seed| {
            let c = SimulationConfig {
                n_subjects: 20,
                n_words: 200,
                beta: Coefficients {
                    entropy: 0.0,
                    interaction: 0.0,
                    ..Coefficients::default()
                },
                seed: 44_000 + seed,
                ..SimulationConfig::default()
            };
            let t = simulate_table(&c).unwrap();
            let reports = run_baseline_pp(&t, &tags, &cfg).unwrap();
            let delta = |m: Measure| {
                reports
                    .iter()
                    .find(|r| r.measure == Some(m))
                    .and_then(|r| r.delta_ll())
                    .unwrap()
                    .mean_delta_ll
            };
            delta(Measure::Entropy) < delta(Measure::Surprisal)
        })
        .count();
    assert!(hits >= 45, "{hits}/50");
}

#[test]
fn group_permutation_is_calibrated_under_the_null() {
    let tags = vec!["sim".to_string()];
    let tests = vec!["T".to_string()];
    let cfg = AnalysisConfig {
        k: 5,
        tests: quick_tests(),
        ..AnalysisConfig::default()
    };
    let rejections = (0..200u64)
        .filter(|&seed| {
            let c = SimulationConfig {
                n_subjects: 12,
                n_words: 120,
                beta: Coefficients {
                    score: 0.0,
                    interaction: 0.0,
                    ..Coefficients::default()
                },
                seed: 45_000 + seed,
                ..SimulationConfig::default()
            };
            let t = simulate_table(&c).unwrap();
            let cfg = AnalysisConfig {
                fold_seed: seed,
                tests: TestConfig {
                    perm_seed: seed,
                    ..cfg.tests
                },
                ..cfg
            };
            let reports = run_group_split_pp(&t, &tags, &tests, &cfg).unwrap();
            let cell = reports.iter().find(|r| r.measure == Some(Measure::Surprisal)).unwrap();
            cell.group_split().unwrap().p_value < 0.05
        })
        .count();
    let rate = rejections as f64 / 200.0;
    assert!((0.02..=0.09).contains(&rate), "{rejections}/200");
}
