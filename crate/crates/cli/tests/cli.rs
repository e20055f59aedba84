use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use clap::CommandFactory;
use predpower_cli::Cli;
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_predpower"));
    for (k, _) in std::env::vars() {
        if k.starts_with("PREDPOWER_") {
            c.env_remove(k);
        }
    }
    c
}

fn mini() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mini")
}

fn run(c: &mut Command) -> Output {
    c.output().expect("binary runs")
}

fn error_json(out: &Output) -> Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().unwrap_or_default();
    serde_json::from_str(line).unwrap_or_else(|e| panic!("stderr is not JSON ({e}): {stderr}"))
}

fn files_in(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

/// Copies the mini corpus so a test can modify it.
fn mini_copy() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for entry in std::fs::read_dir(mini()).unwrap() {
        let entry = entry.unwrap();
        if entry.file_type().unwrap().is_file() {
            std::fs::copy(entry.path(), dir.path().join(entry.file_name())).unwrap();
        }
    }
    dir
}

fn set_scores(dir: &Path, test: &str, values: &[f64]) {
    let path = dir.join("scores.tsv");
    let text = std::fs::read_to_string(&path).unwrap();
    let mut i = 0;
    let lines: Vec<String> = text
        .lines()
        .map(|l| {
            let f: Vec<&str> = l.split('\t').collect();
            if f[1] == test {
                i += 1;
                format!("{}\t{}\t{}", f[0], f[1], values[i - 1])
            } else {
                l.to_string()
            }
        })
        .collect();
    assert_eq!(i, values.len());
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
}

#[test]
fn simulate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = run(bin()
            .args(["simulate", "--beta6", "0", "--seed", "7", "--n-subjects", "8", "--n-words", "150"])
            .arg("--out")
            .arg(d.path()));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let fa = files_in(a.path());
    assert_eq!(fa.len(), 8);
    assert_eq!(fa, files_in(b.path()));
}

#[test]
fn simulate_rejects_bad_parameters_all_at_once() {
    let d = tempfile::tempdir().unwrap();
    let out = run(bin()
        .args(["simulate", "--n-subjects", "1", "--sigma2=-1", "--test", "Nope"])
        .arg("--out")
        .arg(d.path()));
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    assert_eq!(e["error"]["kind"], "config");
    assert_eq!(e["error"]["violations"].as_array().unwrap().len(), 3);
}

#[test]
fn h1_is_idempotent() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let out = run(bin().arg("h1").arg("-c").arg(mini().join("config.toml")).arg("-o").arg(d.path()));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let fa = files_in(a.path());
    assert_eq!(
        fa.iter().map(|f| f.0.as_str()).collect::<Vec<_>>(),
        ["fig2_interaction.csv", "report_h1.json"]
    );
    assert_eq!(fa, files_in(b.path()));
}

#[test]
fn baseline_surprisal_helps_on_mini_corpus() {
    let d = tempfile::tempdir().unwrap();
    let out = run(bin().arg("hb").arg("-c").arg(mini().join("config.toml")).arg("-o").arg(d.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&std::fs::read(d.path().join("report_hb.json")).unwrap()).unwrap();
    let cell = report["reports"]
        .as_array()
        .unwrap()
        .iter()
        .find(|r| r["measure"] == "surprisal")
        .unwrap();
    assert!(cell["payload"]["mean_delta_ll"].as_f64().unwrap() > 0.0, "{cell}");
    let csv = std::fs::read_to_string(d.path().join("fig1_baseline.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
}

#[test]
fn h3_with_constant_scores_fails() {
    let d = mini_copy();
    set_scores(d.path(), "SLRT words", &[100.0; 5]);
    let out = run(bin().arg("h3").arg("-c").arg(d.path().join("config.toml")));
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_json(&out)["error"]["kind"], "degenerate_score");
    assert!(!d.path().join("out/report_h3.json").exists());
}

#[test]
fn h3_with_lopsided_split_fails() {
    let d = mini_copy();
    set_scores(d.path(), "SLRT words", &[90.0, 90.0, 90.0, 90.0, 120.0]);
    let out = run(bin().arg("h3").arg("-c").arg(d.path().join("config.toml")));
    assert_eq!(out.status.code(), Some(1));
    let e = error_json(&out);
    assert_eq!(e["error"]["kind"], "degenerate_split");
    assert!(e["error"]["message"].as_str().unwrap().contains("SLRT words"));
}

#[test]
fn help_lists_every_flag() {
    let cmd = Cli::command();
    for sub in cmd.get_subcommands() {
        let out = run(bin().args([sub.get_name(), "--help"]));
        assert!(out.status.success());
        let help = String::from_utf8(out.stdout).unwrap();
        for arg in sub.get_arguments().chain(cmd.get_arguments()) {
            if let Some(long) = arg.get_long() {
                assert!(help.contains(&format!("--{long}")), "`{}` help lacks --{long}", sub.get_name());
            }
        }
    }
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(bin().args(["h1", "--bogus"]));
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    assert_eq!(e["error"]["kind"], "usage");
    assert!(e["error"]["message"].as_str().unwrap().contains("--bogus"));
}

#[test]
fn config_violations_are_listed_together() {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("bad.toml");
    std::fs::write(&cfg, "[data]\nreadings = \"missing.tsv\"\n[analysis]\nk = 1\nn_perm = 5\n").unwrap();
    let out = run(bin().arg("h1").arg("-c").arg(&cfg));
    assert_eq!(out.status.code(), Some(2));
    let e = error_json(&out);
    let v: Vec<String> = e["error"]["violations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_str().unwrap().to_string())
        .collect();
    for needle in ["analysis.k", "analysis.n_perm", "data.readings", "data.scores", "[lm.<tag>]"] {
        assert!(v.iter().any(|s| s.contains(needle)), "no `{needle}` in {v:?}");
    }
}

#[test]
fn flags_override_environment_override_file() {
    let d = tempfile::tempdir().unwrap();
    let cfg = mini().join("config.toml");
    let out = run(bin()
        .arg("corr")
        .arg("-c")
        .arg(&cfg)
        .arg("-o")
        .arg(d.path())
        .env("PREDPOWER_ANALYSIS_N_PERM", "5"));
    assert_eq!(out.status.code(), Some(2));
    assert!(error_json(&out)["error"]["message"].as_str().unwrap().contains("n_perm"));

    let out = run(bin()
        .args(["corr", "--n-perm", "200", "--tests", "MWT,Stroop,SLRT words"])
        .arg("-c")
        .arg(&cfg)
        .arg("-o")
        .arg(d.path())
        .env("PREDPOWER_ANALYSIS_N_PERM", "5"));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&std::fs::read(d.path().join("report_corr.json")).unwrap()).unwrap();
    assert_eq!(report["metadata"]["test_config"]["n_perm"], 200);
    assert_eq!(report["reports"][0]["payload"]["tests"].as_array().unwrap().len(), 3);
}

#[test]
fn score_reproduces_bundled_tokens_and_pool_runs() {
    let d = tempfile::tempdir().unwrap();
    let cfg = mini().join("config.toml");
    let out = run(bin().arg("score").arg("-c").arg(&cfg).arg("-o").arg(d.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(d.path().join("tokens_bigram.tsv")).unwrap(),
        std::fs::read(mini().join("tokens_bigram.tsv")).unwrap()
    );
    let out = run(bin().arg("pool").arg("-c").arg(&cfg).arg("-o").arg(d.path()));
    assert!(out.status.success());
    let words = std::fs::read_to_string(d.path().join("words_bigram.tsv")).unwrap();
    assert!(words.starts_with("text_id\tword_index\tword\tsurprisal_bits\tentropy_bits\ttoken_count\n"));
}

#[test]
fn ingest_then_report() {
    let d = tempfile::tempdir().unwrap();
    let cfg = mini().join("config.toml");
    let out = run(bin().arg("ingest").arg("-c").arg(&cfg).arg("-o").arg(d.path()));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&std::fs::read(d.path().join("ingest.json")).unwrap()).unwrap();
    let table = std::fs::read_to_string(d.path().join("analysis_table.tsv")).unwrap();
    assert_eq!(table.lines().count() as u64 - 1, summary["n_rows"].as_u64().unwrap());

    for h in ["h1", "h2"] {
        let out = run(bin().arg(h).arg("-c").arg(&cfg).arg("-o").arg(d.path()));
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let out = run(bin()
        .args(["h2", "--h1-report"])
        .arg(d.path().join("report_h1.json"))
        .arg("-c")
        .arg(&cfg)
        .arg("-o")
        .arg(d.path().join("reuse")));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        std::fs::read(d.path().join("report_h2.json")).unwrap(),
        std::fs::read(d.path().join("reuse/report_h2.json")).unwrap()
    );

    let merged = d.path().join("merged.json");
    let out = run(bin()
        .arg("report")
        .arg(d.path().join("report_h2.json"))
        .arg(d.path().join("report_h1.json"))
        .arg("-o")
        .arg(&merged));
    assert!(out.status.success());
    let m: Value = serde_json::from_slice(&std::fs::read(&merged).unwrap()).unwrap();
    assert_eq!(m["runs"][0]["hypothesis"], "H1");
    assert_eq!(m["runs"][1]["hypothesis"], "H2");

    let out = run(bin()
        .arg("report")
        .arg(d.path().join("report_h1.json"))
        .arg(d.path().join("report_h1.json"))
        .arg("-o")
        .arg(&merged));
    assert_eq!(error_json(&out)["error"]["kind"], "duplicate");
}

#[test]
fn jobs_flag_does_not_change_results() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = mini().join("config.toml");
    for (d, jobs) in [(&a, "1"), (&b, "3")] {
        let out = run(bin().args(["--jobs", jobs, "hb"]).arg("-c").arg(&cfg).arg("-o").arg(d.path()));
        assert!(out.status.success());
    }
    assert_eq!(files_in(a.path()), files_in(b.path()));
    let out = run(bin().args(["--jobs", "0", "hb"]));
    assert_eq!(out.status.code(), Some(2));
}
