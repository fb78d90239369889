use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

const BIN: &str = env!("CARGO_BIN_EXE_ideolens");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let path = dir.join("run.toml");
    fs::write(&path, body).unwrap();
    path
}

/// Small mock run: the reduced role-noun set keeps suites to a few thousand items.
fn mock_config(dir: &Path, experiment: u8, gain: f64) -> PathBuf {
    write_config(
        dir,
        &format!(
            "domain = \"role-nouns\"\nexperiment = {experiment}\nseed = 3\noutput_dir = \"out\"\nstimulus_subset = \"gpt-subset-12\"\n[backend]\nkind = \"mock\"\ncontext_gain = {gain}\n"
        ),
    )
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn generate_prints_closed_form_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "domain = \"pronouns\"\nexperiment = 2\noutput_dir = \"out\"\n[backend]\nkind = \"mock\"\n",
    );
    let o = run(&["generate", "--config", cfg.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("32000 logical cells"), "{}", stdout(&o));

    let o = run(&[
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--domain",
        "role-nouns",
        "--experiment",
        "1",
    ]);
    assert!(stdout(&o).contains("33280 items"), "{}", stdout(&o));
    assert!(dir
        .path()
        .join("out/manifests/exp1_role-nouns.jsonl")
        .exists());
}

#[test]
fn bad_stimulus_path_exits_2_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "domain = \"role-nouns\"\nexperiment = 1\n[stimuli]\nnames = \"no_such_names.csv\"\n[backend]\nkind = \"mock\"\n",
    );
    let o = run(&["generate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_names.csv"), "{}", stderr(&o));
}

#[test]
fn unreadable_config_exits_2() {
    let o = run(&["generate", "--config", "/definitely/not/here.toml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/definitely/not/here.toml"));
}

#[test]
fn missing_credential_exits_3_naming_the_variable() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "domain = \"role-nouns\"\nexperiment = 1\noutput_dir = \"out\"\nstimulus_subset = \"gpt-subset-12\"\n[backend]\nkind = \"http\"\nbase_url = \"http://127.0.0.1:9/v1\"\nmodel = \"m\"\napi_key_env = \"IDEOLENS_TEST_KEY_THAT_IS_UNSET\"\n",
    );
    let c = cfg.to_str().unwrap();
    assert!(run(&["generate", "--config", c]).status.success());
    let o = Command::new(BIN)
        .args(["score", "--config", c])
        .env_remove("IDEOLENS_TEST_KEY_THAT_IS_UNSET")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(3));
    assert!(
        stderr(&o).contains("IDEOLENS_TEST_KEY_THAT_IS_UNSET"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn missing_inputs_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mock_config(dir.path(), 1, 0.5);
    let c = cfg.to_str().unwrap();
    for cmd in ["score", "analyze", "report"] {
        let o = run(&[cmd, "--config", c]);
        assert_eq!(o.status.code(), Some(4), "{cmd}: {}", stderr(&o));
    }
}

#[test]
fn exp2_missing_condition_cell_is_listed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mock_config(dir.path(), 2, 0.5);
    let c = cfg.to_str().unwrap();
    assert!(run(&["generate", "--config", c]).status.success());
    let o = run(&["score", "--config", c]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("hit rate"));

    let results = dir.path().join("out/results/exp2_role-nouns.jsonl");
    let text = fs::read_to_string(&results).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    let kept: Vec<&str> = text.lines().skip(1).collect();
    fs::write(&results, kept.join("\n") + "\n").unwrap();

    let o = run(&["analyze", "--config", c]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    let err = stderr(&o);
    assert!(
        err.contains(first["template_id"].as_str().unwrap()),
        "{err}"
    );
    assert!(
        err.contains(first["preamble_id"].as_str().unwrap()),
        "{err}"
    );
}

#[test]
fn excluded_model_marks_bias_rows() {
    // Without context sensitivity the mock's reform rate ignores the
    // preamble, so the pre-test cannot pass.
    let dir = tempfile::tempdir().unwrap();
    let cfg = mock_config(dir.path(), 1, 0.0);
    let c = cfg.to_str().unwrap();
    for cmd in ["generate", "score", "analyze"] {
        let o = run(&[cmd, "--config", c]);
        assert!(o.status.success(), "{cmd}: {}", stderr(&o));
    }
    let tests =
        fs::read_to_string(dir.path().join("out/analysis/exp1_tests_role-nouns.csv")).unwrap();
    let bias: Vec<&str> = tests.lines().filter(|l| l.contains(",bias_")).collect();
    assert_eq!(bias.len(), 2);
    assert!(bias.iter().all(|l| l.ends_with(",excluded")), "{tests}");

    let o = run(&["report", "--config", c]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary =
        fs::read_to_string(dir.path().join("out/report/exp1_summary_role-nouns.csv")).unwrap();
    assert!(summary.contains("excluded"));
}

#[test]
fn analyze_aggregates_several_results_files() {
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for seed in ["3", "4"] {
        let cfg = mock_config(dir.path(), 1, 0.5);
        let c = cfg.to_str().unwrap();
        let out = dir.path().join(format!("out{seed}"));
        let o_flag = out.to_str().unwrap();
        for cmd in ["generate", "score"] {
            let o = run(&[cmd, "--config", c, "--seed", seed, "--out", o_flag]);
            assert!(o.status.success(), "{}", stderr(&o));
        }
        files.push(out.join("results/exp1_role-nouns.jsonl"));
    }
    let cfg = dir.path().join("run.toml");
    let mut args = vec!["analyze", "--config", cfg.to_str().unwrap()];
    for f in &files {
        args.push("--results");
        args.push(f.to_str().unwrap());
    }
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("2 model(s)"), "{}", stdout(&o));
    let json: serde_json::Value = serde_json::from_slice(
        &fs::read(dir.path().join("out/analysis/exp1_role-nouns.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(json["bonferroni_m"], 2);
}

#[test]
fn rerun_is_idempotent_and_uses_the_cache() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = mock_config(dir.path(), 1, 0.5);
    let c = cfg.to_str().unwrap();
    assert!(run(&["generate", "--config", c]).status.success());
    assert!(run(&["score", "--config", c]).status.success());
    let results = dir.path().join("out/results/exp1_role-nouns.jsonl");
    let first = fs::read(&results).unwrap();
    let o = run(&["score", "--config", c]);
    assert!(stdout(&o).contains("backend calls 0"), "{}", stdout(&o));
    assert!(stdout(&o).contains("hit rate 100.0%"), "{}", stdout(&o));
    assert_eq!(fs::read(&results).unwrap(), first);

    for cmd in ["analyze", "report"] {
        assert!(run(&[cmd, "--config", c]).status.success());
    }
    let snapshot = |p: &str| fs::read(dir.path().join("out").join(p)).unwrap();
    let before: Vec<Vec<u8>> = [
        "report/exp1_summary_role-nouns.svg",
        "report/condition_means_role-nouns.csv",
    ]
    .iter()
    .map(|p| snapshot(p))
    .collect();
    assert!(run(&["report", "--config", c]).status.success());
    let after: Vec<Vec<u8>> = [
        "report/exp1_summary_role-nouns.svg",
        "report/condition_means_role-nouns.csv",
    ]
    .iter()
    .map(|p| snapshot(p))
    .collect();
    assert_eq!(before, after);
}

#[test]
fn interrupted_scoring_resumes_to_identical_output() {
    let reference = tempfile::tempdir().unwrap();
    let cfg = mock_config(reference.path(), 2, 0.5);
    let c = cfg.to_str().unwrap();
    assert!(run(&["generate", "--config", c]).status.success());
    assert!(run(&["score", "--config", c]).status.success());
    let want = fs::read(reference.path().join("out/results/exp2_role-nouns.jsonl")).unwrap();

    // Kill a live run once its cache has started filling.
    let killed = tempfile::tempdir().unwrap();
    let cfg = mock_config(killed.path(), 2, 0.5);
    let c = cfg.to_str().unwrap();
    assert!(run(&["generate", "--config", c]).status.success());
    let cache = killed.path().join("out/cache/scores.jsonl");
    let mut child = Command::new(BIN)
        .args(["score", "--config", c, "--concurrency", "1"])
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(60);
    while Instant::now() < deadline {
        if fs::metadata(&cache)
            .map(|m| m.len() > 4096)
            .unwrap_or(false)
        {
            break;
        }
        if child.try_wait().unwrap().is_some() {
            break;
        }
        std::thread::sleep(Duration::from_millis(5));
    }
    let _ = child.kill();
    let _ = child.wait();

    // Simulate a write torn by the kill.
    let mut bytes = fs::read(&cache).unwrap();
    bytes.extend_from_slice(b"{\"backend_id\":\"mock-3-g0.5\",\"mo");
    fs::write(&cache, bytes).unwrap();

    let o = run(&["score", "--config", c]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        fs::read(killed.path().join("out/results/exp2_role-nouns.jsonl")).unwrap(),
        want
    );
}

#[test]
fn help_lists_the_commands() {
    let o = run(&["--help"]);
    let s = stdout(&o);
    for cmd in ["generate", "score", "analyze", "report"] {
        assert!(s.contains(cmd), "{s}");
    }
}
