//! The `predpower` command line: config handling and subcommand dispatch.

pub mod commands;
pub mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{run, CliError};

#[derive(Debug, Parser)]
#[command(name = "predpower", version, about = "Predictive power of surprisal and entropy for reading times")]
pub struct Cli {
    /// Cap on worker threads (default: one per core)
    #[arg(long, global = true, env = "PREDPOWER_JOBS", value_parser = clap::value_parser!(u32).range(1..))]
    pub jobs: Option<u32>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate inputs and write the joined analysis table as TSV
    Ingest(AnalysisArgs),
    /// Train a bigram LM per [lm.<tag>] with a training corpus and score the texts
    Score(ScoreArgs),
    /// Pool token scores into word scores
    Pool(ConfigArgs),
    /// Baseline predictive power of surprisal and entropy
    Hb(AnalysisArgs),
    /// Predictive power of score x measure interactions
    H1(AnalysisArgs),
    /// Interaction effect sizes, daggered where H1 is not significant
    H2(H2Args),
    /// Median-split group differences in predictive power
    H3(AnalysisArgs),
    /// Correlations between psychometric test scores
    Corr(AnalysisArgs),
    /// Generate a synthetic study with a config file ready for analysis
    Simulate(SimulateArgs),
    /// Merge hypothesis reports into one JSON document
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ConfigArgs {
    /// TOML config file; relative paths in it resolve against its directory
    #[arg(short, long, env = "PREDPOWER_CONFIG")]
    pub config: Option<PathBuf>,

    /// Output directory (overrides [output] dir)
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalysisArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Comma-separated psychometric tests to analyse
    #[arg(long, value_delimiter = ',')]
    pub tests: Option<Vec<String>>,

    /// Number of item folds
    #[arg(long)]
    pub k: Option<usize>,

    /// Seed for the item-to-fold assignment
    #[arg(long)]
    pub fold_seed: Option<u64>,

    /// Seed for permutation tests
    #[arg(long)]
    pub perm_seed: Option<u64>,

    /// Seed for bootstrap intervals
    #[arg(long)]
    pub boot_seed: Option<u64>,

    /// Permutation replicates
    #[arg(long)]
    pub n_perm: Option<usize>,

    /// Bootstrap replicates
    #[arg(long)]
    pub n_boot: Option<usize>,

    /// Significance level
    #[arg(long)]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct H2Args {
    #[command(flatten)]
    pub analysis: AnalysisArgs,

    /// Existing H1 report to take significance from; H1 is rerun when absent
    #[arg(long)]
    pub h1_report: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ScoreArgs {
    #[command(flatten)]
    pub config: ConfigArgs,

    /// Only score this LM tag
    #[arg(long)]
    pub lm: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeasureArg {
    Surprisal,
    Entropy,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Directory to write the corpus and config.toml into
    #[arg(short, long, default_value = "sim")]
    pub out: PathBuf,

    /// Generator seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    #[arg(long, default_value_t = 61)]
    pub n_subjects: usize,

    /// Stimulus words (texts are filled with whole sentences)
    #[arg(long, default_value_t = 800)]
    pub n_words: usize,

    #[arg(long, default_value_t = 100)]
    pub words_per_text: usize,

    /// Pseudo-word vocabulary size
    #[arg(long, default_value_t = 250)]
    pub vocab_size: usize,

    /// Sentences in the LM training corpus
    #[arg(long, default_value_t = 3000)]
    pub train_sentences: usize,

    /// Additive smoothing of the bigram LM
    #[arg(long, default_value_t = 0.1)]
    pub lm_alpha: f64,

    #[arg(long, default_value = "bigram")]
    pub lm_tag: String,

    /// Intercept (log ms)
    #[arg(long, default_value_t = 5.3, allow_negative_numbers = true)]
    pub beta0: f64,

    /// Word length slope
    #[arg(long, default_value_t = 0.03, allow_negative_numbers = true)]
    pub beta1: f64,

    /// Log frequency slope
    #[arg(long, default_value_t = -0.03, allow_negative_numbers = true)]
    pub beta2: f64,

    /// Surprisal slope
    #[arg(long, default_value_t = 0.06, allow_negative_numbers = true)]
    pub beta3: f64,

    /// Entropy slope
    #[arg(long, default_value_t = 0.02, allow_negative_numbers = true)]
    pub beta4: f64,

    /// Psychometric score slope
    #[arg(long, default_value_t = -0.02, allow_negative_numbers = true)]
    pub beta5: f64,

    /// Score x measure interaction slope
    #[arg(long, default_value_t = -0.015, allow_negative_numbers = true)]
    pub beta6: f64,

    /// Residual variance
    #[arg(long, default_value_t = 0.09)]
    pub sigma2: f64,

    /// Subject intercept variance
    #[arg(long, default_value_t = 0.03)]
    pub sigma2_subj: f64,

    /// Psychometric test that modulates the measure
    #[arg(long, default_value = "SLRT words")]
    pub test: String,

    /// Measure in the interaction term
    #[arg(long, value_enum, default_value_t = MeasureArg::Surprisal)]
    pub measure: MeasureArg,

    /// Apply the surprisal slope only to subjects at or below the median score
    #[arg(long)]
    pub low_group_only: bool,

    /// Skip probability of words with at most three characters
    #[arg(long, default_value_t = 0.25)]
    pub skip_short: f64,

    /// Skip probability of longer words
    #[arg(long, default_value_t = 0.05)]
    pub skip_other: f64,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// Hypothesis report files (report_<hyp>.json)
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,

    /// Merged output file
    #[arg(short, long, default_value = "report.json")]
    pub out: PathBuf,
}
