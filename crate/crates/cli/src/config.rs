//! Run configuration: a TOML file, overridden by `PREDPOWER_*` environment
//! variables, overridden by command-line flags.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use predpower_core::ingest::MissingLexiconPolicy;
use predpower_core::stats::{MIN_BOOTSTRAP, MIN_PERMUTATIONS};
use predpower_core::{AnalysisConfig, TestConfig};
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "PREDPOWER_";

/// The config file as written on disk. Every field is optional so that the
/// environment and flags can fill gaps.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub lm: BTreeMap<String, LmSection>,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub readings: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scores: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lexicon: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub texts: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmSection {
    /// Token scores in the tokens.tsv format.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tokens: Option<PathBuf>,
    /// Training corpus for `score`, one sentence per line.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tests: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negate: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fold_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub perm_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boot_seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_perm: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_boot: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub missing_lexicon: Option<MissingLexiconPolicy>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

/// Every problem found while assembling a [`RunConfig`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} configuration problem(s): {}", self.0.len(), self.0.join("; "))
    }
}

impl std::error::Error for ConfigErrors {}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigErrors> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigErrors(vec![format!("{}: {e}", path.display())]))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| ConfigErrors(vec![format!("{}: {e}", path.display())]))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.rebase(base);
        Ok(cfg)
    }

    /// Makes relative paths relative to `base`.
    pub fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(v) = p {
                if v.is_relative() {
                    *v = base.join(&*v);
                }
            }
        };
        fix(&mut self.data.readings);
        fix(&mut self.data.scores);
        fix(&mut self.data.lexicon);
        fix(&mut self.data.texts);
        for lm in self.lm.values_mut() {
            fix(&mut lm.tokens);
            fix(&mut lm.train);
        }
        fix(&mut self.output.dir);
    }

    /// Applies `PREDPOWER_<SECTION>_<KEY>` variables from `vars`. LM entries
    /// use `PREDPOWER_LM_<TAG>_TOKENS` (tag upper-cased) and only override
    /// LMs already declared.
    pub fn apply_env<I>(&mut self, vars: I, problems: &mut Vec<String>)
    where
        I: IntoIterator<Item = (String, String)>,
    {
        for (key, value) in vars {
            let Some(name) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            let path = || Some(PathBuf::from(&value));
            match name {
                "CONFIG" | "JOBS" => {}
                "DATA_READINGS" => self.data.readings = path(),
                "DATA_SCORES" => self.data.scores = path(),
                "DATA_LEXICON" => self.data.lexicon = path(),
                "DATA_TEXTS" => self.data.texts = path(),
                "OUTPUT_DIR" => self.output.dir = path(),
                "ANALYSIS_TESTS" => self.analysis.tests = Some(split_list(&value)),
                "ANALYSIS_NEGATE" => self.analysis.negate = Some(split_list(&value)),
                "ANALYSIS_K" => env_parse(&key, &value, &mut self.analysis.k, problems),
                "ANALYSIS_FOLD_SEED" => env_parse(&key, &value, &mut self.analysis.fold_seed, problems),
                "ANALYSIS_PERM_SEED" => env_parse(&key, &value, &mut self.analysis.perm_seed, problems),
                "ANALYSIS_BOOT_SEED" => env_parse(&key, &value, &mut self.analysis.boot_seed, problems),
                "ANALYSIS_N_PERM" => env_parse(&key, &value, &mut self.analysis.n_perm, problems),
                "ANALYSIS_N_BOOT" => env_parse(&key, &value, &mut self.analysis.n_boot, problems),
                "ANALYSIS_ALPHA" => env_parse(&key, &value, &mut self.analysis.alpha, problems),
                "ANALYSIS_MISSING_LEXICON" => match value.as_str() {
                    "drop" => self.analysis.missing_lexicon = Some(MissingLexiconPolicy::Drop),
                    "error" => self.analysis.missing_lexicon = Some(MissingLexiconPolicy::Error),
                    _ => problems.push(format!("{key}: expected `drop` or `error`, got `{value}`")),
                },
                other => {
                    let lm = other.strip_prefix("LM_").and_then(|rest| {
                        let (tag, field) = rest.rsplit_once('_')?;
                        let entry = self.lm.iter_mut().find(|(t, _)| t.to_uppercase().replace('-', "_") == tag)?;
                        Some((entry.1, field))
                    });
                    match lm {
                        Some((lm, "TOKENS")) => lm.tokens = path(),
                        Some((lm, "TRAIN")) => lm.train = path(),
                        Some((lm, "ALPHA")) => env_parse(&key, &value, &mut lm.alpha, problems),
                        _ => problems.push(format!("{key}: unrecognized variable")),
                    }
                }
            }
        }
    }
}

fn env_parse<T: std::str::FromStr>(key: &str, value: &str, slot: &mut Option<T>, problems: &mut Vec<String>) {
    match value.trim().parse() {
        Ok(v) => *slot = Some(v),
        Err(_) => problems.push(format!("{key}: cannot parse `{value}`")),
    }
}

pub fn split_list(s: &str) -> Vec<String> {
    s.split(',').map(|t| t.trim().to_string()).filter(|t| !t.is_empty()).collect()
}

/// Which inputs a subcommand reads; used to check only the relevant paths.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Needs {
    pub readings: bool,
    pub scores: bool,
    pub lexicon: bool,
    pub texts: bool,
    pub tokens: bool,
    pub train: bool,
}

impl Needs {
    pub fn table() -> Self {
        Self {
            readings: true,
            scores: true,
            lexicon: true,
            texts: true,
            tokens: true,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub tokens: Option<PathBuf>,
    pub train: Option<PathBuf>,
    pub alpha: f64,
}

/// A validated configuration with defaults filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub readings: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub texts: Option<PathBuf>,
    pub lms: BTreeMap<String, LmConfig>,
    /// `None` analyses every test in the scores file.
    pub tests: Option<Vec<String>>,
    pub negate: BTreeSet<String>,
    pub missing_lexicon: MissingLexiconPolicy,
    pub analysis: AnalysisConfig,
    pub output_dir: PathBuf,
}

pub const DEFAULT_NEGATE: [&str; 2] = ["Stroop", "Simon"];
pub const DEFAULT_LM_ALPHA: f64 = 0.1;

impl RunConfig {
    pub fn resolve(file: FileConfig, needs: Needs) -> Result<Self, ConfigErrors> {
        let mut problems = Vec::new();
        let defaults = AnalysisConfig::default();
        let a = &file.analysis;
        let tests = TestConfig {
            n_perm: a.n_perm.unwrap_or(defaults.tests.n_perm),
            n_boot: a.n_boot.unwrap_or(defaults.tests.n_boot),
            perm_seed: a.perm_seed.unwrap_or(defaults.tests.perm_seed),
            boot_seed: a.boot_seed.unwrap_or(defaults.tests.boot_seed),
            alpha: a.alpha.unwrap_or(defaults.tests.alpha),
        };
        let analysis = AnalysisConfig {
            k: a.k.unwrap_or(defaults.k),
            fold_seed: a.fold_seed.unwrap_or(defaults.fold_seed),
            tests,
        };
        if analysis.k < 2 {
            problems.push(format!("analysis.k must be at least 2, got {}", analysis.k));
        }
        if tests.n_perm < MIN_PERMUTATIONS {
            problems.push(format!("analysis.n_perm must be at least {MIN_PERMUTATIONS}, got {}", tests.n_perm));
        }
        if tests.n_boot < MIN_BOOTSTRAP {
            problems.push(format!("analysis.n_boot must be at least {MIN_BOOTSTRAP}, got {}", tests.n_boot));
        }
        if !(tests.alpha > 0.0 && tests.alpha < 1.0) {
            problems.push(format!("analysis.alpha must lie in (0, 1), got {}", tests.alpha));
        }
        if let Some(t) = &a.tests {
            if t.is_empty() {
                problems.push("analysis.tests is empty".into());
            }
            let unique: BTreeSet<&String> = t.iter().collect();
            if unique.len() != t.len() {
                problems.push("analysis.tests lists a test twice".into());
            }
        }

        let mut require = |name: &str, p: &Option<PathBuf>, needed: bool| {
            if !needed {
                return;
            }
            match p {
                None => problems.push(format!("{name} is required")),
                Some(p) if !p.is_file() => problems.push(format!("{name}: `{}` is not a readable file", p.display())),
                Some(_) => {}
            }
        };
        require("data.readings", &file.data.readings, needs.readings);
        require("data.scores", &file.data.scores, needs.scores);
        require("data.lexicon", &file.data.lexicon, needs.lexicon);
        require("data.texts", &file.data.texts, needs.texts);
        for (tag, lm) in &file.lm {
            require(&format!("lm.{tag}.tokens"), &lm.tokens, needs.tokens);
            require(&format!("lm.{tag}.train"), &lm.train, needs.train);
        }
        if (needs.tokens || needs.train) && file.lm.is_empty() {
            problems.push("at least one [lm.<tag>] section is required".into());
        }
        for (tag, lm) in &file.lm {
            if tag.is_empty() || tag.contains(['[', ']', '*']) {
                problems.push(format!("lm tag `{tag}` may not contain brackets or `*`"));
            }
            if let Some(alpha) = lm.alpha {
                if !(alpha > 0.0 && alpha.is_finite()) {
                    problems.push(format!("lm.{tag}.alpha must be positive, got {alpha}"));
                }
            }
        }
        if !problems.is_empty() {
            return Err(ConfigErrors(problems));
        }
        Ok(Self {
            readings: file.data.readings,
            scores: file.data.scores,
            lexicon: file.data.lexicon,
            texts: file.data.texts,
            lms: file
                .lm
                .into_iter()
                .map(|(tag, lm)| {
                    let cfg = LmConfig {
                        tokens: lm.tokens,
                        train: lm.train,
                        alpha: lm.alpha.unwrap_or(DEFAULT_LM_ALPHA),
                    };
                    (tag, cfg)
                })
                .collect(),
            tests: a.tests.clone(),
            negate: a
                .negate
                .clone()
                .unwrap_or_else(|| DEFAULT_NEGATE.map(String::from).to_vec())
                .into_iter()
                .collect(),
            missing_lexicon: a.missing_lexicon.unwrap_or_default(),
            analysis,
            output_dir: file.output.dir.unwrap_or_else(|| PathBuf::from("out")),
        })
    }

    pub fn lm_tags(&self) -> Vec<String> {
        self.lms.keys().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vars(pairs: &[(&str, &str)]) -> Vec<(String, String)> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn toml_round_trip_and_rebase() {
        let text = r#"
            [data]
            readings = "r.tsv"
            [lm.bigram]
            tokens = "/abs/t.tsv"
            [analysis]
            k = 5
            missing_lexicon = "error"
            [output]
            dir = "out"
        "#;
        let mut cfg: FileConfig = toml::from_str(text).unwrap();
        cfg.rebase(Path::new("/base"));
        assert_eq!(cfg.data.readings, Some(PathBuf::from("/base/r.tsv")));
        assert_eq!(cfg.lm["bigram"].tokens, Some(PathBuf::from("/abs/t.tsv")));
        assert_eq!(cfg.output.dir, Some(PathBuf::from("/base/out")));
        assert_eq!(cfg.analysis.missing_lexicon, Some(MissingLexiconPolicy::Error));
        let back: FileConfig = toml::from_str(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(toml::from_str::<FileConfig>("[analysis]\nkk = 3\n").is_err());
        assert!(toml::from_str::<FileConfig>("[extra]\n").is_err());
    }

    #[test]
    fn env_overrides_file() {
        let mut cfg: FileConfig = toml::from_str("[analysis]\nk = 5\n[lm.gpt2]\ntokens = \"a\"\n[lm.gpt2-large]\n").unwrap();
        let mut problems = Vec::new();
        cfg.apply_env(
            vars(&[
                ("PREDPOWER_ANALYSIS_K", "7"),
                ("PREDPOWER_ANALYSIS_TESTS", "Stroop, MWT"),
                ("PREDPOWER_LM_GPT2_TOKENS", "b"),
                ("PREDPOWER_LM_GPT2_LARGE_ALPHA", "0.5"),
                ("HOME", "/root"),
            ]),
            &mut problems,
        );
        assert!(problems.is_empty(), "{problems:?}");
        assert_eq!(cfg.analysis.k, Some(7));
        assert_eq!(cfg.analysis.tests, Some(vec!["Stroop".into(), "MWT".into()]));
        assert_eq!(cfg.lm["gpt2"].tokens, Some(PathBuf::from("b")));
        assert_eq!(cfg.lm["gpt2-large"].alpha, Some(0.5));
    }

    #[test]
    fn env_problems_reported() {
        let mut cfg = FileConfig::default();
        let mut problems = Vec::new();
        cfg.apply_env(
            vars(&[
                ("PREDPOWER_ANALYSIS_K", "many"),
                ("PREDPOWER_BOGUS", "1"),
                ("PREDPOWER_ANALYSIS_MISSING_LEXICON", "maybe"),
            ]),
            &mut problems,
        );
        assert_eq!(problems.len(), 3);
    }

    #[test]
    fn validation_lists_every_violation() {
        let mut cfg = FileConfig::default();
        cfg.analysis.k = Some(1);
        cfg.analysis.n_perm = Some(10);
        cfg.analysis.alpha = Some(1.5);
        let err = RunConfig::resolve(cfg, Needs::table()).unwrap_err();
        let all = err.0.join("\n");
        for needle in ["analysis.k", "n_perm", "alpha", "data.readings", "data.scores", "data.lexicon", "data.texts", "[lm.<tag>]"] {
            assert!(all.contains(needle), "missing `{needle}` in {all}");
        }
    }

    #[test]
    fn defaults_fill_gaps() {
        let cfg = RunConfig::resolve(FileConfig::default(), Needs::default()).unwrap();
        assert_eq!(cfg.analysis, AnalysisConfig::default());
        assert_eq!(cfg.negate.len(), 2);
        assert_eq!(cfg.output_dir, PathBuf::from("out"));
    }
}
