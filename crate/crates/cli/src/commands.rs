use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use predpower_core::analysis::{write_figure_csv, ReportMetadata};
use predpower_core::ingest::{
    check_events_against_texts, load_lexicon, load_psychometric_scores, load_reading_events, load_texts,
    NEGATED_TESTS,
};
use predpower_core::ngram::{corpus_sentences, score_texts};
use predpower_core::pooling::{load_token_scores, write_word_scores};
use predpower_core::simulate::files;
use predpower_core::{
    build_analysis_table, pool_table, run_baseline_pp, run_correlations, run_effect_size_table, run_group_split_pp,
    run_interaction_pp, simulate_corpus, train_bigram, AnalysisTable, Coefficients, CorpusConfig, Error, Hypothesis,
    InteractionMeasure, RunReport, SubjectProfile, TableConfig, WordScores,
};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error as ThisError;

use crate::config::{
    AnalysisSection, ConfigErrors, DataSection, FileConfig, LmSection, Needs, OutputSection, RunConfig,
};
use crate::{AnalysisArgs, Cli, Command, ConfigArgs, H2Args, MeasureArg, ReportArgs, ScoreArgs, SimulateArgs};

#[derive(Debug, ThisError)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigErrors),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    /// The machine-readable form printed on stderr.
    pub fn to_json(&self) -> serde_json::Value {
        match self {
            CliError::Config(e) => json!({
                "error": { "kind": "config", "message": e.to_string(), "violations": e.0 }
            }),
            CliError::Core(e) => json!({
                "error": { "kind": e.kind(), "message": e.to_string() }
            }),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build_global()
            .map_err(|e| ConfigErrors(vec![format!("--jobs: {e}")]))?;
    }
    match cli.command {
        Command::Ingest(a) => ingest(&a),
        Command::Score(a) => score(&a),
        Command::Pool(a) => pool(&a),
        Command::Hb(a) => hypothesis(Hypothesis::Hb, &a, None),
        Command::H1(a) => hypothesis(Hypothesis::H1, &a, None),
        Command::H2(H2Args { analysis, h1_report }) => hypothesis(Hypothesis::H2, &analysis, h1_report.as_deref()),
        Command::H3(a) => hypothesis(Hypothesis::H3, &a, None),
        Command::Corr(a) => hypothesis(Hypothesis::Corr, &a, None),
        Command::Simulate(a) => simulate(&a),
        Command::Report(a) => report(&a),
    }
}

fn load_file_config(args: &ConfigArgs, problems: &mut Vec<String>) -> FileConfig {
    let mut file = match &args.config {
        Some(path) => match FileConfig::load(path) {
            Ok(f) => f,
            Err(e) => {
                problems.extend(e.0);
                FileConfig::default()
            }
        },
        None => FileConfig::default(),
    };
    file.apply_env(std::env::vars(), problems);
    if let Some(out) = &args.out {
        file.output.dir = Some(out.clone());
    }
    file
}

fn resolve(args: &ConfigArgs, needs: Needs, apply: impl FnOnce(&mut FileConfig)) -> CliResult<RunConfig> {
    let mut problems = Vec::new();
    let mut file = load_file_config(args, &mut problems);
    apply(&mut file);
    match RunConfig::resolve(file, needs) {
        Ok(cfg) if problems.is_empty() => Ok(cfg),
        Ok(_) => Err(ConfigErrors(problems).into()),
        Err(e) => {
            problems.extend(e.0);
            Err(ConfigErrors(problems).into())
        }
    }
}

fn resolve_analysis(args: &AnalysisArgs, needs: Needs) -> CliResult<RunConfig> {
    resolve(&args.config, needs, |f| {
        let a = &mut f.analysis;
        if args.tests.is_some() {
            a.tests = args.tests.clone();
        }
        a.k = args.k.or(a.k);
        a.fold_seed = args.fold_seed.or(a.fold_seed);
        a.perm_seed = args.perm_seed.or(a.perm_seed);
        a.boot_seed = args.boot_seed.or(a.boot_seed);
        a.n_perm = args.n_perm.or(a.n_perm);
        a.n_boot = args.n_boot.or(a.n_boot);
        a.alpha = args.alpha.or(a.alpha);
    })
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e).into())
}

fn write_output(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> std::io::Result<()>) -> CliResult<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))?;
    info!("wrote {}", path.display());
    Ok(())
}

fn required(p: &Option<PathBuf>) -> &Path {
    p.as_deref().expect("validated path")
}

/// Standardized scores and the tests selected for analysis.
pub struct Inputs {
    pub profiles: Vec<SubjectProfile>,
    pub tests: Vec<String>,
}

pub fn load_profiles(cfg: &RunConfig) -> CliResult<Inputs> {
    let profiles = load_psychometric_scores(required(&cfg.scores), &cfg.negate)?;
    let available: BTreeSet<String> = profiles.first().map(|p| p.scores.keys().cloned().collect()).unwrap_or_default();
    let tests = match &cfg.tests {
        Some(t) => {
            let unknown: Vec<String> = t.iter().filter(|x| !available.contains(*x)).cloned().collect();
            if !unknown.is_empty() {
                return Err(ConfigErrors(vec![format!("tests not in the scores file: {}", unknown.join(", "))]).into());
            }
            t.clone()
        }
        None => available.into_iter().collect(),
    };
    Ok(Inputs { profiles, tests })
}

/// Loads readings, texts, lexicon and token scores and joins them.
pub fn load_table(cfg: &RunConfig, inputs: &Inputs) -> CliResult<AnalysisTable> {
    let texts = load_texts(required(&cfg.texts))?;
    let events = load_reading_events(required(&cfg.readings))?;
    check_events_against_texts(&events, &texts)?;
    let lexicon = load_lexicon(required(&cfg.lexicon))?;
    let mut word_scores: BTreeMap<String, WordScores> = BTreeMap::new();
    for (tag, lm) in &cfg.lms {
        let tokens = load_token_scores(required(&lm.tokens), tag)?;
        word_scores.insert(tag.clone(), pool_table(&texts, &tokens)?);
    }
    let table_cfg = TableConfig {
        lm_tags: cfg.lm_tags(),
        tests: Some(inputs.tests.clone()),
        missing_lexicon: cfg.missing_lexicon,
        min_ms: None,
        max_ms: None,
    };
    let table = build_analysis_table(&events, &inputs.profiles, &lexicon, &word_scores, &table_cfg)?;
    info!(
        "analysis table: {} rows, {} subjects, {} items",
        table.n_rows(),
        table.n_subjects(),
        table.n_items()
    );
    Ok(table)
}

fn ingest(args: &AnalysisArgs) -> CliResult<()> {
    let cfg = resolve_analysis(args, Needs::table())?;
    let inputs = load_profiles(&cfg)?;
    let table = load_table(&cfg, &inputs)?;
    create_dir(&cfg.output_dir)?;
    write_output(&cfg.output_dir.join("analysis_table.tsv"), |w| table.write_tsv(w))?;
    let summary = json!({
        "n_rows": table.n_rows(),
        "n_subjects": table.n_subjects(),
        "n_items": table.n_items(),
        "exclusions": table.exclusions(),
        "lm_tags": cfg.lm_tags(),
        "tests": inputs.tests,
    });
    write_output(&cfg.output_dir.join("ingest.json"), |w| {
        serde_json::to_writer_pretty(&mut *w, &summary).map_err(std::io::Error::other)?;
        writeln!(w)
    })
}

fn score(args: &ScoreArgs) -> CliResult<()> {
    let needs = Needs {
        texts: true,
        train: true,
        ..Needs::default()
    };
    let only = args.lm.clone();
    let cfg = resolve(&args.config, needs, |f| {
        if let Some(tag) = &only {
            f.lm.retain(|t, _| t == tag);
        }
    })?;
    if let Some(tag) = &args.lm {
        if !cfg.lms.contains_key(tag) {
            return Err(ConfigErrors(vec![format!("no [lm.{tag}] section")]).into());
        }
    }
    let texts = load_texts(required(&cfg.texts))?;
    create_dir(&cfg.output_dir)?;
    for (tag, lm) in &cfg.lms {
        let path = required(&lm.train);
        let corpus = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let model = train_bigram(&corpus_sentences(&corpus), lm.alpha)?;
        let table = score_texts(&model, &texts, tag)?;
        write_output(&cfg.output_dir.join(files::tokens(tag)), |w| table.write_tsv(w))?;
        write_output(&cfg.output_dir.join(format!("bigram_{tag}.counts")), |w| model.write_counts(w))?;
    }
    Ok(())
}

fn pool(args: &ConfigArgs) -> CliResult<()> {
    let needs = Needs {
        texts: true,
        tokens: true,
        ..Needs::default()
    };
    let cfg = resolve(args, needs, |_| {})?;
    let texts = load_texts(required(&cfg.texts))?;
    create_dir(&cfg.output_dir)?;
    for (tag, lm) in &cfg.lms {
        let tokens = load_token_scores(required(&lm.tokens), tag)?;
        let words = pool_table(&texts, &tokens)?;
        write_output(&cfg.output_dir.join(format!("words_{tag}.tsv")), |w| write_word_scores(w, &texts, &words))?;
    }
    Ok(())
}

fn read_run_report(path: &Path) -> CliResult<RunReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| {
        Error::Parse {
            source_name: path.display().to_string(),
            line: e.line() as u64,
            message: e.to_string(),
        }
        .into()
    })
}

fn hypothesis(hyp: Hypothesis, args: &AnalysisArgs, h1_report: Option<&Path>) -> CliResult<()> {
    let needs = if hyp == Hypothesis::Corr {
        Needs {
            scores: true,
            ..Needs::default()
        }
    } else {
        Needs::table()
    };
    let cfg = resolve_analysis(args, needs)?;
    cfg.analysis.tests.validate()?;
    if let Some(path) = h1_report {
        if !path.is_file() {
            return Err(ConfigErrors(vec![format!("--h1-report: `{}` is not a readable file", path.display())]).into());
        }
    }
    let inputs = load_profiles(&cfg)?;
    let lm_tags = cfg.lm_tags();
    let a = &cfg.analysis;

    let (metadata, reports) = if hyp == Hypothesis::Corr {
        let reports = run_correlations(&inputs.profiles, &inputs.tests, a.tests.alpha)?;
        let metadata = ReportMetadata {
            n_subjects: inputs.profiles.len(),
            ..ReportMetadata::conventions(&lm_tags, &inputs.tests, a)
        };
        (metadata, reports)
    } else {
        let table = load_table(&cfg, &inputs)?;
        let reports = match hyp {
            Hypothesis::Hb => run_baseline_pp(&table, &lm_tags, a)?,
            Hypothesis::H1 => run_interaction_pp(&table, &lm_tags, &inputs.tests, a)?,
            Hypothesis::H2 => {
                let h1 = match h1_report {
                    Some(path) => {
                        let run = read_run_report(path)?;
                        if run.hypothesis != Hypothesis::H1 {
                            return Err(Error::Spec(format!("{} is not an H1 report", path.display())).into());
                        }
                        run.reports
                    }
                    None => run_interaction_pp(&table, &lm_tags, &inputs.tests, a)?,
                };
                run_effect_size_table(&table, &lm_tags, &inputs.tests, &h1)?
            }
            Hypothesis::H3 => run_group_split_pp(&table, &lm_tags, &inputs.tests, a)?,
            Hypothesis::Corr => unreachable!(),
        };
        (ReportMetadata::new(&table, &lm_tags, &inputs.tests, a), reports)
    };

    let run = RunReport {
        hypothesis: hyp,
        metadata,
        reports,
    };
    create_dir(&cfg.output_dir)?;
    let json_path = cfg.output_dir.join(format!("report_{}.json", hyp.tag()));
    write_output(&json_path, |w| w.write_all(run.to_json().as_bytes()))?;
    let csv_path = cfg.output_dir.join(hyp.csv_name());
    let file = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    write_figure_csv(hyp, &run.reports, BufWriter::new(file))?;
    Ok(())
}

/// Config written next to a simulated corpus.
#[derive(Serialize)]
struct SimulatedConfig<'a> {
    data: DataSection,
    lm: BTreeMap<&'a str, LmSection>,
    analysis: AnalysisSection,
    output: OutputSection,
}

fn simulate(args: &SimulateArgs) -> CliResult<()> {
    let cfg = CorpusConfig {
        n_subjects: args.n_subjects,
        n_words: args.n_words,
        words_per_text: args.words_per_text,
        vocab_size: args.vocab_size,
        train_sentences: args.train_sentences,
        alpha: args.lm_alpha,
        lm_tag: args.lm_tag.clone(),
        beta: Coefficients {
            intercept: args.beta0,
            length: args.beta1,
            logfreq: args.beta2,
            surprisal: args.beta3,
            entropy: args.beta4,
            score: args.beta5,
            interaction: args.beta6,
        },
        sigma2_resid: args.sigma2,
        sigma2_subj: args.sigma2_subj,
        test: args.test.clone(),
        interaction_measure: match args.measure {
            MeasureArg::Surprisal => InteractionMeasure::Surprisal,
            MeasureArg::Entropy => InteractionMeasure::Entropy,
        },
        low_group_only: args.low_group_only,
        skip_short: args.skip_short,
        skip_other: args.skip_other,
        seed: args.seed,
    };
    if let Err(Error::InvalidParameter(msg)) = cfg.validate() {
        return Err(ConfigErrors(msg.split("; ").map(String::from).collect()).into());
    }
    let truth = simulate_corpus(&cfg, &args.out)?;
    write_simulated_config(&args.out, &cfg)?;
    info!(
        "simulated {} subjects, {} words, {} events ({} skipped)",
        cfg.n_subjects, truth.n_stimulus_words, truth.n_events, truth.n_skipped
    );
    Ok(())
}

pub fn write_simulated_config(dir: &Path, cfg: &CorpusConfig) -> CliResult<()> {
    let defaults = predpower_core::AnalysisConfig::default();
    let config = SimulatedConfig {
        data: DataSection {
            readings: Some(files::READINGS.into()),
            scores: Some(files::SCORES.into()),
            lexicon: Some(files::LEXICON.into()),
            texts: Some(files::TEXTS.into()),
        },
        lm: BTreeMap::from([(
            cfg.lm_tag.as_str(),
            LmSection {
                tokens: Some(files::tokens(&cfg.lm_tag).into()),
                train: Some(files::TRAIN.into()),
                alpha: Some(cfg.alpha),
            },
        )]),
        analysis: AnalysisSection {
            tests: Some(vec![cfg.test.clone()]),
            negate: Some(NEGATED_TESTS.map(String::from).to_vec()),
            k: Some(defaults.k),
            fold_seed: Some(defaults.fold_seed),
            perm_seed: Some(defaults.tests.perm_seed),
            boot_seed: Some(defaults.tests.boot_seed),
            n_perm: Some(defaults.tests.n_perm),
            n_boot: Some(defaults.tests.n_boot),
            alpha: Some(defaults.tests.alpha),
            missing_lexicon: None,
        },
        output: OutputSection {
            dir: Some("out".into()),
        },
    };
    let text = toml::to_string(&config).map_err(|e| Error::Numeric(format!("config serialization: {e}")))?;
    write_output(&dir.join("config.toml"), |w| w.write_all(text.as_bytes()))
}

#[derive(Serialize, Deserialize)]
struct MergedReport {
    runs: Vec<RunReport>,
}

fn report(args: &ReportArgs) -> CliResult<()> {
    let mut runs = args.inputs.iter().map(|p| read_run_report(p)).collect::<CliResult<Vec<_>>>()?;
    runs.sort_by_key(|r| r.hypothesis);
    if let Some(w) = runs.windows(2).find(|w| w[0].hypothesis == w[1].hypothesis) {
        return Err(Error::Duplicate(format!("{} report among the inputs", w[0].hypothesis.tag())).into());
    }
    let merged = MergedReport { runs };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write_output(&args.out, |w| {
        serde_json::to_writer_pretty(&mut *w, &merged).map_err(std::io::Error::other)?;
        writeln!(w)
    })
}
