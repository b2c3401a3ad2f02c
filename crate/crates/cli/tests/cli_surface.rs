//! Command-line surface behavior: outputs, exit codes, diagnostics.

use std::path::{Path, PathBuf};
use std::process::Command;

fn repo_file(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn archopt() -> Command {
    Command::new(env!("CARGO_BIN_EXE_archopt"))
}

fn stdout_of(output: &std::process::Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr_of(output: &std::process::Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn space_enumerate_count_prints_cardinality() {
    let output = archopt()
        .args(["space", "enumerate-count"])
        .arg(repo_file("spaces/nanosd_default"))
        .output()
        .unwrap();
    assert!(output.status.success());
    assert_eq!(stdout_of(&output).trim(), "32768");
}

#[test]
fn space_show_lists_stage_counts() {
    let output = archopt()
        .args(["space", "show"])
        .arg(repo_file("spaces/nanosd_default"))
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = stdout_of(&output);
    for line in [
        "E1 (4 variants)",
        "E2 (4 variants)",
        "E3 (4 variants)",
        "D3 (8 variants)",
        "D2 (8 variants)",
        "D1 (8 variants)",
    ] {
        assert!(text.contains(line), "missing `{line}` in:\n{text}");
    }
}

#[test]
fn space_validate_names_offending_stage() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad_space.json");
    let doc = serde_json::json!({
        "name": "bad",
        "stages": [
            {"id": "E1", "variants": [{"label": "R"}, {"label": "R"}]},
            {"id": "E2", "variants": [{"label": "R"}]},
            {"id": "E3", "variants": [{"label": "R"}]},
            {"id": "D3", "variants": [{"label": "R"}]},
            {"id": "D2", "variants": [{"label": "R"}]},
            {"id": "D1", "variants": [{"label": "R"}]}
        ]
    });
    std::fs::write(&bad, doc.to_string()).unwrap();
    let output = archopt().args(["space", "validate"]).arg(&bad).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    let err = stderr_of(&output);
    assert!(err.contains("E1"), "diagnostic names the stage: {err}");
    assert!(err.contains("duplicate"), "{err}");
}

#[test]
fn space_validate_reports_json_line_numbers() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("syntax.json");
    std::fs::write(&bad, "{\n  \"name\": \"x\",\n  broken\n}\n").unwrap();
    let output = archopt().args(["space", "validate"]).arg(&bad).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("line 3"), "{}", stderr_of(&output));
}

#[test]
fn cost_estimate_composes_block_sums() {
    let output = archopt()
        .args(["cost", "estimate", "--profile"])
        .arg(repo_file("profiles/sm8750_fp16"))
        .arg("R|RA|RA|RARA|RR|RR")
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = stdout_of(&output);
    let row = text.lines().nth(1).unwrap();
    let value: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert!((value - 19.93).abs() < 1e-9, "{row}");
}

#[test]
fn cost_estimate_empty_profile_fails_with_missing_entry() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty_profile");
    std::fs::write(&empty, "# device=none\n# precision=x\nstage,label,latency_ms\n").unwrap();
    let output = archopt()
        .args(["cost", "estimate", "--profile"])
        .arg(&empty)
        .arg("R|R|R|R|R|R")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr_of(&output).contains("no entry"), "{}", stderr_of(&output));
}

#[test]
fn cost_rank_prints_high_rho() {
    let output = archopt()
        .args(["cost", "rank", "--profile"])
        .arg(repo_file("profiles/sm8750_fp16"))
        .arg("--measured")
        .arg(repo_file("profiles/sm8750_measured_models"))
        .args([
            "--model", "NanoSD 1", "--model", "NanoSD 2", "--model", "NanoSD 3",
            "--model", "NanoSD 4", "--model", "NanoSD 5", "--model", "NanoSD 6",
            "--model", "NanoSD 7",
        ])
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = stdout_of(&output);
    let rho_line = text.lines().find(|l| l.starts_with("spearman_rho:")).unwrap();
    let rho: f64 = rho_line.split(':').nth(1).unwrap().trim().parse().unwrap();
    assert!(rho >= 0.9, "{rho_line}");
}

#[test]
fn cost_rank_cross_device_baseline() {
    let output = archopt()
        .args(["cost", "rank", "--profile"])
        .arg(repo_file("profiles/sm8750_fp16"))
        .arg("--measured")
        .arg(repo_file("profiles/sm8750_measured_models"))
        .arg("--baseline")
        .arg(repo_file("profiles/apple_a17_measured_models"))
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = stdout_of(&output);
    let rho: f64 = text
        .lines()
        .find(|l| l.starts_with("spearman_rho:"))
        .unwrap()
        .split(':')
        .nth(1)
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(rho >= 0.9, "{text}");
}

#[test]
fn pareto_extract_single_row_passes_through() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("one.csv");
    std::fs::write(&csv, "arch,f1,f2\nonly,1.5,2.5\n").unwrap();
    let output = archopt().args(["pareto", "extract"]).arg(&csv).output().unwrap();
    assert!(output.status.success());
    assert_eq!(stdout_of(&output), "arch,f1,f2\nonly,1.5,2.5\n");
}

#[test]
fn pareto_extract_rejects_empty_and_malformed() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.csv");
    std::fs::write(&empty, "arch,f1,f2\n").unwrap();
    let output = archopt().args(["pareto", "extract"]).arg(&empty).output().unwrap();
    assert_eq!(output.status.code(), Some(2));

    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "arch,f1,f2\nx,1.0\n").unwrap();
    let output = archopt().args(["pareto", "extract"]).arg(&bad).output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn pareto_merge_recomputes_joint_front() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.csv");
    let b = dir.path().join("b.csv");
    // Disjoint fronts; the union dominates parts of each.
    std::fs::write(&a, "arch,f1,f2\na1,1.0,4.0\na2,2.0,3.5\n").unwrap();
    std::fs::write(&b, "arch,f1,f2\nb1,1.5,3.0\nb2,3.0,1.0\n").unwrap();
    let output = archopt()
        .args(["pareto", "merge"])
        .arg(&a)
        .arg(&b)
        .output()
        .unwrap();
    assert!(output.status.success());
    let text = stdout_of(&output);
    let ids: Vec<&str> = text
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    // a2 (2.0, 3.5) is dominated by b1 (1.5, 3.0); the rest survive.
    assert_eq!(ids, vec!["a1", "b1", "b2"], "{text}");

    // Brute-force recheck of the joint front.
    let all = [("a1", 1.0, 4.0), ("a2", 2.0, 3.5), ("b1", 1.5, 3.0), ("b2", 3.0, 1.0)];
    for (id, f1, f2) in all {
        let dominated = all.iter().any(|(other, g1, g2)| {
            *other != id && *g1 <= f1 && *g2 <= f2 && (*g1 < f1 || *g2 < f2)
        });
        assert_eq!(!dominated, ids.contains(&id), "{id}");
    }
}

#[test]
fn fid_computes_distance_and_echoes_provenance() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    std::fs::write(
        &a,
        serde_json::json!({
            "dim": 1, "n_samples": 100, "mean": [0.0], "cov": [1.0],
            "feature_extractor": "ext-v2", "prompt_set": "prompts-2k", "seed_set": "seeds-2k"
        })
        .to_string(),
    )
    .unwrap();
    std::fs::write(
        &b,
        serde_json::json!({
            "dim": 1, "n_samples": 100, "mean": [3.0], "cov": [4.0],
            "feature_extractor": "ext-v2", "prompt_set": "prompts-2k", "seed_set": "seeds-2k"
        })
        .to_string(),
    )
    .unwrap();
    let output = archopt().arg("fid").arg(&a).arg(&b).output().unwrap();
    assert!(output.status.success());
    let text = stdout_of(&output);
    assert!(text.starts_with("tafid: 10"), "{text}");
    assert!(text.contains("ext-v2") && text.contains("prompts-2k"), "{text}");
}

#[test]
fn search_run_with_missing_evaluator_exits_3_before_evaluating() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        serde_json::json!({
            "space": "nanosd_default",
            "objectives": ["tafid", "latency_ms"],
            "n_init": 2, "n_iter": 1,
            "oracle": {"kind": "subprocess", "command": ["/no/such/evaluator"], "timeout_s": 5.0}
        })
        .to_string(),
    )
    .unwrap();
    let out = dir.path().join("run");
    let output = archopt()
        .args(["search", "run"])
        .arg(&config)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    // No evaluation happened: the log was never created.
    assert!(!out.join("run.log").exists());
}

#[test]
fn report_emits_plots_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        serde_json::json!({
            "space": "nanosd_default",
            "objectives": ["tafid", "latency_ms"],
            "n_init": 5, "n_iter": 0, "seed": 12,
            "gp_restarts": 2,
            "oracle": {"kind": "synthetic", "benchmark": "additive", "seed": 3}
        })
        .to_string(),
    )
    .unwrap();
    let run_dir = dir.path().join("run");
    let output = archopt()
        .args(["--quiet", "search", "run"])
        .arg(&config)
        .arg("--out")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr_of(&output));

    // n_iter = 0: the hypervolume curve has exactly n_init points.
    let hv = std::fs::read_to_string(run_dir.join("hv_trace.csv")).unwrap();
    assert_eq!(hv.lines().count(), 1 + 5, "{hv}");

    let output = archopt()
        .args(["report"])
        .arg(&run_dir)
        .arg("--no-timestamp")
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr_of(&output));
    let report_dir = run_dir.join("report");
    for f in ["front.svg", "hypervolume.svg", "summary.txt"] {
        assert!(report_dir.join(f).exists(), "missing {f}");
    }
    // Front members in the scatter match the front CSV rows.
    let front_rows = std::fs::read_to_string(run_dir.join("front.csv"))
        .unwrap()
        .lines()
        .count()
        - 1;
    let svg = std::fs::read_to_string(report_dir.join("front.svg")).unwrap();
    let green_dots = svg.matches("fill=\"#188038\"/>").count();
    assert_eq!(green_dots, front_rows, "front scatter marks front members");
    assert!(!svg.contains("<!-- generated"), "timestamp suppressed");

    // Two renders with --no-timestamp are byte-identical.
    let report2 = dir.path().join("report2");
    let output = archopt()
        .args(["report"])
        .arg(&run_dir)
        .arg("--no-timestamp")
        .arg("--out")
        .arg(&report2)
        .output()
        .unwrap();
    assert!(output.status.success());
    let again = std::fs::read_to_string(report2.join("front.svg")).unwrap();
    assert_eq!(svg, again);
}

#[test]
fn report_on_reference_replay_marks_four_of_nine() {
    // Lookup oracle over the nine bundled rows, exhausted by a finite
    // candidate list: the scatter holds 9 points, 4 of them front members.
    let dir = tempfile::tempdir().unwrap();
    let archs: Vec<String> = {
        let doc = std::fs::read_to_string(repo_file("profiles/table1_reference")).unwrap();
        archopt::cost::ReferenceTable::parse(&doc)
            .unwrap()
            .records
            .iter()
            .map(|r| r.arch.clone())
            .collect()
    };
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        serde_json::json!({
            "space": "nanosd_default",
            "objectives": ["tafid", "latency_ms"],
            "n_init": 3, "n_iter": 20, "seed": 5,
            "gp_restarts": 2,
            "candidates": {"kind": "archs", "list": archs},
            "oracle": {"kind": "lookup", "path": repo_file("profiles/table1_reference").to_str().unwrap()}
        })
        .to_string(),
    )
    .unwrap();
    let run_dir = dir.path().join("run");
    let output = archopt()
        .args(["--quiet", "search", "run"])
        .arg(&config)
        .arg("--out")
        .arg(&run_dir)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr_of(&output));
    let output = archopt()
        .args(["report"])
        .arg(&run_dir)
        .arg("--no-timestamp")
        .output()
        .unwrap();
    assert!(output.status.success());
    let svg = std::fs::read_to_string(run_dir.join("report/front.svg")).unwrap();
    let front_dots = svg.matches("fill=\"#188038\"/>").count();
    let other_dots = svg.matches("fill=\"#9aa0a6\"/>").count();
    assert_eq!(front_dots, 4);
    assert_eq!(front_dots + other_dots, 9);
}

#[test]
fn quiet_flag_suppresses_chatter() {
    let output = archopt()
        .args(["--quiet", "space", "validate"])
        .arg(repo_file("spaces/nanosd_default"))
        .output()
        .unwrap();
    assert!(output.status.success());
    assert_eq!(stdout_of(&output), "");
}

#[test]
fn seed_flag_overrides_config_seed() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        serde_json::json!({
            "space": "nanosd_default",
            "objectives": ["tafid", "latency_ms"],
            "n_init": 4, "n_iter": 1, "seed": 1,
            "gp_restarts": 2,
            "oracle": {"kind": "synthetic", "benchmark": "additive", "seed": 3}
        })
        .to_string(),
    )
    .unwrap();
    let run = |args: &[&str], out: &Path| {
        let output = archopt()
            .args(["--quiet", "search", "run"])
            .arg(&config)
            .arg("--out")
            .arg(out)
            .args(args)
            .output()
            .unwrap();
        assert!(output.status.success(), "{}", stderr_of(&output));
    };
    let base = dir.path().join("base");
    let reseeded = dir.path().join("reseeded");
    let reseeded_again = dir.path().join("reseeded2");
    run(&[], &base);
    run(&["--seed", "42"], &reseeded);
    run(&["--seed", "42"], &reseeded_again);
    let a = std::fs::read(base.join("front.csv")).unwrap();
    let b = std::fs::read(reseeded.join("front.csv")).unwrap();
    let c = std::fs::read(reseeded_again.join("front.csv")).unwrap();
    assert_eq!(b, c, "same override, same bytes");
    assert_ne!(a, b, "override changes the trajectory");
}
