//! End-to-end tests of the command-line surface: file formats, determinism,
//! and the exit-code contract.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mdpattr"))
}

struct Workdir(PathBuf);

impl Workdir {
    fn new(tag: &str) -> Self {
        let dir = std::env::temp_dir().join(format!("mdpattr-cli-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        Workdir(dir)
    }

    fn path(&self, name: &str) -> String {
        self.0.join(name).to_str().unwrap().to_string()
    }

    fn read(&self, name: &str) -> String {
        std::fs::read_to_string(self.0.join(name)).unwrap()
    }
}

impl Drop for Workdir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_code(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

#[test]
fn gen_is_deterministic_and_loadable() {
    let dir = Workdir::new("gen");
    let a = dir.path("a.json");
    let b = dir.path("b.json");
    assert_code(&run(&["gen", "random", "--seed", "7", "--out", &a]), 0);
    assert_code(&run(&["gen", "random", "--seed", "7", "--out", &b]), 0);
    assert_eq!(dir.read("a.json"), dir.read("b.json"));

    let loan = dir.path("loan.json");
    assert_code(&run(&["gen", "loan", "--out", &loan]), 0);
    let parsed: serde_json::Value = serde_json::from_str(&dir.read("loan.json")).unwrap();
    assert_eq!(parsed["states"].as_array().unwrap().len(), 10);
    assert_eq!(parsed["target"], "Granted");

    let nm = dir.path("nm.json");
    assert_code(&run(&["gen", "nonmono", "--out", &nm]), 0);
    let parsed: serde_json::Value = serde_json::from_str(&dir.read("nm.json")).unwrap();
    let states: Vec<&str> = parsed["states"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_str().unwrap())
        .collect();
    assert_eq!(states, vec!["s0", "s1", "s2", "sink", "st"]);

    assert_code(&run(&["gen", "cube"]), 1);
}

#[test]
fn importance_reproduces_worked_examples() {
    let dir = Workdir::new("imp");
    let loan = dir.path("loan.json");
    assert_code(&run(&["gen", "loan", "--out", &loan]), 0);

    let out = run(&[
        "importance",
        &loan,
        "--state",
        "Application+",
        "--target",
        "Granted",
    ]);
    assert_code(&out, 0);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).expect("JSON report");
    assert_eq!(report["interval"]["lower"], 1.0);
    assert_eq!(report["interval"]["upper"], 1.0);

    let out = run(&[
        "importance",
        &loan,
        "--state",
        "Angry",
        "--target",
        "Granted",
        "--absolute",
    ]);
    assert_code(&out, 0);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["interval"]["lower"], 0.0);
    assert_eq!(report["interval"]["upper"], 0.0);
    assert_eq!(report["interval"]["normalized"], false);

    // Reports round-trip losslessly through JSON.
    let reparsed: serde_json::Value =
        serde_json::from_str(&serde_json::to_string(&report).unwrap()).unwrap();
    assert_eq!(report, reparsed);
}

#[test]
fn batch_is_sorted_and_thread_count_independent() {
    let dir = Workdir::new("batch");
    let nm = dir.path("nm.json");
    assert_code(&run(&["gen", "nonmono", "--out", &nm]), 0);
    let one = run(&["batch", &nm, "--jobs", "1"]);
    let eight = run(&["batch", &nm, "--jobs", "8"]);
    assert_code(&one, 0);
    assert_eq!(one.stdout, eight.stdout, "batch output depends on --jobs");
    let text = String::from_utf8(one.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "state,lower,upper,status");
    assert_eq!(lines.len(), 6);
    let row = |state: &str| {
        lines
            .iter()
            .find(|l| l.starts_with(&format!("{state},")))
            .unwrap_or_else(|| panic!("row for {state}"))
            .split(',')
            .map(str::to_string)
            .collect::<Vec<_>>()
    };
    let s1 = row("s1");
    assert_eq!((s1[1].as_str(), s1[2].as_str()), ("0.010989010989", "1"));
    let s2 = row("s2");
    assert_eq!((s2[1].as_str(), s2[2].as_str()), ("0.9", "0.989010989011"));
    let st = row("st");
    assert_eq!((st[1].as_str(), st[2].as_str()), ("1", "1"));

    let loan = dir.path("loan.json");
    assert_code(&run(&["gen", "loan", "--out", &loan]), 0);
    let out = run(&["batch", &loan]);
    assert_code(&out, 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 11); // header + ten states
    assert!(text.contains("Granted,1,1,"));
    assert!(text.contains("Rejected,0,0,"));
}

#[test]
fn export_writes_stable_files_with_metadata() {
    let dir = Workdir::new("export");
    let loan = dir.path("loan.json");
    assert_code(&run(&["gen", "loan", "--out", &loan]), 0);
    let prefix_a = dir.path("lp_a");
    let prefix_b = dir.path("lp_b");
    for prefix in [&prefix_a, &prefix_b] {
        assert_code(
            &run(&[
                "export",
                &loan,
                "--encoding",
                "lpstar",
                "--state",
                "Consultation",
                "--sense",
                "min",
                "--out",
                prefix,
            ]),
            0,
        );
    }
    let lp = dir.read("lp_a.lp");
    assert_eq!(lp, dir.read("lp_b.lp"), "re-export differs");
    assert_eq!(dir.read("lp_a.meta.json"), dir.read("lp_b.meta.json"));
    assert!(lp.contains("Binaries\n"));
    let meta: serde_json::Value = serde_json::from_str(&dir.read("lp_a.meta.json")).unwrap();
    assert_eq!(meta["epsilon"], 1e-4);
    assert_eq!(meta["big_m"], 1e16);
    assert_eq!(meta["encoding"], "lpstar");

    // The reachability-optimal quadratic form keeps its objective linear; the
    // hierarchical variant records both objectives.
    let qpstar = dir.path("qpstar");
    assert_code(
        &run(&[
            "export",
            &loan,
            "--encoding",
            "qpstar",
            "--state",
            "Consultation",
            "--hierarchical",
            "--out",
            &qpstar,
        ]),
        0,
    );
    let text = dir.read("qpstar.lp");
    let objective_line = text.lines().nth(1).unwrap();
    assert!(
        !objective_line.contains('['),
        "quadratic objective: {objective_line}"
    );
    assert!(text.lines().any(|l| l.starts_with("\\ objective 2")));
    let meta: serde_json::Value = serde_json::from_str(&dir.read("qpstar.meta.json")).unwrap();
    assert_eq!(meta["objectives"].as_array().unwrap().len(), 2);

    // Raw qp is refused without a pinned denominator, accepted with one.
    let refused = run(&[
        "export",
        &loan,
        "--encoding",
        "qp",
        "--state",
        "Consultation",
        "--out",
        &dir.path("qp"),
    ]);
    assert_code(&refused, 1);
    assert!(String::from_utf8_lossy(&refused.stderr).contains("--pstar"));
    assert_code(
        &run(&[
            "export",
            &loan,
            "--encoding",
            "qp",
            "--state",
            "Consultation",
            "--pstar",
            "auto",
            "--out",
            &dir.path("qp"),
        ]),
        0,
    );
    assert!(dir.read("qp.lp").contains("total_reach"));
}

#[test]
fn explain_lists_follow_thresholds() {
    let dir = Workdir::new("explain");
    let loan = dir.path("loan.json");
    assert_code(&run(&["gen", "loan", "--out", &loan]), 0);
    let out = run(&["explain", &loan]);
    assert_code(&out, 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("indispensable"));
    assert!(text.lines().nth(1).unwrap().contains("Application+"));
    assert!(text.lines().nth(3).unwrap().contains("Angry"));
    assert!(text.contains("s0 and Granted are always indispensable"));

    let out = run(&["explain", &loan, "--high", "1.01"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().contains("(none)"));

    let nm = dir.path("nm.json");
    assert_code(&run(&["gen", "nonmono", "--out", &nm]), 0);
    let out = run(&["explain", &nm]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().nth(1).unwrap().contains("(none)"), "{text}");
}

#[test]
fn heatmap_emits_csv_and_ppm_for_grid_models() {
    let dir = Workdir::new("heatmap");
    let gw = dir.path("gw.json");
    assert_code(&run(&["gen", "gridworld", "--out", &gw]), 0);
    let csv = dir.path("gw.csv");
    let ppm = dir.path("gw.ppm");
    assert_code(&run(&["heatmap", &gw, "--out", &csv, "--image", &ppm]), 0);
    let csv_text = dir.read("gw.csv");
    assert!(csv_text.starts_with("state,lower,upper\n"));
    assert!(csv_text.contains("c6_4_n,1,1"));
    assert!(csv_text.contains("c3_2_k,1,1"));
    assert!(csv_text.contains("c0_2_n,0,0"));
    let ppm_text = dir.read("gw.ppm");
    assert!(ppm_text.starts_with("P3\n7 5\n255\n"));
    // Door cell (3,2) renders white, its lava neighbor red.
    let rows: Vec<&str> = ppm_text.lines().skip(3).collect();
    let cells: Vec<&str> = rows[2].split_whitespace().collect();
    assert_eq!(&cells[3 * 3..3 * 3 + 3], &["255", "255", "255"]);
    assert_eq!(&cells[0..3], &["255", "0", "0"]);

    // Models without coordinates cannot be rendered.
    let loan = dir.path("loan.json");
    assert_code(&run(&["gen", "loan", "--out", &loan]), 0);
    let out = run(&[
        "heatmap",
        &loan,
        "--out",
        &dir.path("loan.csv"),
        "--image",
        &ppm,
    ]);
    assert_code(&out, 1);
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = Workdir::new("codes");
    let loan = dir.path("loan.json");
    assert_code(&run(&["gen", "loan", "--out", &loan]), 0);

    // 1: usage and invalid-input errors.
    assert_code(&run(&["importance", &loan, "--target", "Granted"]), 1);
    let bad_model = dir.path("bad.json");
    std::fs::write(
        &bad_model,
        r#"{"version":1,"states":["a"],"actions":["go"],"initial":"a",
           "transitions":[{"from":"a","action":"go","to":"a","prob":0.9}]}"#,
    )
    .unwrap();
    let out = run(&["importance", &bad_model, "--state", "a", "--target", "a"]);
    assert_code(&out, 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("distribution sum"));

    // 2: well-formed queries whose importance is undefined.
    let island = dir.path("island.json");
    std::fs::write(
        &island,
        r#"{"version":1,"states":["a","b"],"actions":["stay"],"initial":"a",
           "transitions":[
             {"from":"a","action":"stay","to":"a","prob":1},
             {"from":"b","action":"stay","to":"b","prob":1}],
           "target":"b"}"#,
    )
    .unwrap();
    assert_code(&run(&["importance", &island, "--state", "a"]), 2);
    let out = run(&[
        "importance",
        &loan,
        "--path",
        "s0,Consult,Consultation,Angry,Angry",
        "--target",
        "Granted",
    ]);
    assert_code(&out, 2);

    // 3: exhausted search budgets.
    let out = run(&[
        "importance",
        &loan,
        "--state",
        "Consultation",
        "--target",
        "Granted",
        "--node-cap",
        "2",
    ]);
    assert_code(&out, 3);
}

#[test]
fn crosscheck_accepts_consistent_solutions() {
    let dir = Workdir::new("xcheck");
    let nm = dir.path("nm.json");
    assert_code(&run(&["gen", "nonmono", "--out", &nm]), 0);
    let prefix = dir.path("nm_min");
    assert_code(
        &run(&[
            "export",
            &nm,
            "--encoding",
            "lpstar",
            "--state",
            "s1",
            "--sense",
            "min",
            "--out",
            &prefix,
        ]),
        0,
    );
    // The all-direct strategy written as a flat solution; the checker needs
    // the strategy variables plus the reported objective variable.
    let solution = "\
p_s0_u__a 1\np_s0_v__a 1\np_s1_v__a 1\n\
p_s2_u__a 1\np_s2_u__b 0\np_s2_v__a 1\np_s2_v__b 0\n\
p_sink_u__stay 1\np_sink_v__stay 1\nrv_s0_u 0.01\n";
    let sol_path = dir.path("nm_min.sol");
    std::fs::write(&sol_path, solution).unwrap();
    let out = run(&[
        "crosscheck",
        &nm,
        "--meta",
        &dir.path("nm_min.meta.json"),
        "--solution",
        &sol_path,
    ]);
    assert_code(&out, 0);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["flagged"], false);
    assert!(report["recompute_gap"].as_f64().unwrap() < 1e-9);
    assert!(
        (report["exact_recompute"].as_f64().unwrap() - 1.0 / 91.0).abs() < 1e-9,
        "{report}"
    );

    // The same file is picked up through the solution directory variable.
    let out = bin()
        .args(["crosscheck", &nm, "--meta", &dir.path("nm_min.meta.json")])
        .env("MDPATTR_SOLVER_SOLUTION_DIR", dir.0.to_str().unwrap())
        .output()
        .unwrap();
    assert_code(&out, 0);

    // A perturbed strategy row is rejected as malformed.
    let broken = solution.replace("p_s2_u__a 1", "p_s2_u__a 0.6");
    std::fs::write(&sol_path, broken).unwrap();
    let out = run(&[
        "crosscheck",
        &nm,
        "--meta",
        &dir.path("nm_min.meta.json"),
        "--solution",
        &sol_path,
    ]);
    assert_code(&out, 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("sums to"));
}

#[test]
fn gridworld_default_layout_is_parameterized() {
    let dir = Workdir::new("gwparam");
    let out = run(&[
        "gen",
        "gridworld",
        "--width",
        "5",
        "--height",
        "4",
        "--lava-row",
        "1",
        "--door-x",
        "2",
        "--out",
        &dir.path("gw.json"),
    ]);
    assert_code(&out, 0);
    let parsed: serde_json::Value = serde_json::from_str(&dir.read("gw.json")).unwrap();
    assert_eq!(parsed["states"].as_array().unwrap().len(), 5 * 4 * 2 + 1);
    // Start/key below the lava row means height must leave room.
    assert_code(&run(&["gen", "gridworld", "--height", "2"]), 1);
    let _ = Path::new("unused");
}
