//! End-to-end runs of the `camel` binary: pipelines, report fields, exit
//! codes, and byte determinism of the artifacts.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use camel::format;
use camel::synth;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_camel"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).expect("utf8 stdout")
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).expect("utf8 stderr")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(out.status.code(), Some(code), "stdout:\n{}\nstderr:\n{}", stdout(out), stderr(out));
}

/// Parses the two-line TSV report into a field map.
fn tsv_report(text: &str) -> HashMap<String, String> {
    let mut lines = text.lines();
    let header = lines.next().expect("header line");
    let row = lines.next().expect("value line");
    header.split('\t').map(str::to_string).zip(row.split('\t').map(str::to_string)).collect()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Fixture {
        Fixture { dir: tempfile::tempdir().expect("tempdir") }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    /// Loop of 3 tied binary variables plus 40 sampled instances.
    fn loop3(&self) -> (String, String) {
        let model = self.arg("model.camel");
        let data = self.arg("data.camel");
        assert_code(
            &run(&[
                "gen-model", "--kind", "loop", "--size", "3", "--card", "2", "--tying",
                "pairwise-tied", "--out", &model,
            ]),
            0,
        );
        assert_code(
            &run(&["gen-data", "--model", &model, "--count", "40", "--seed", "3", "--out", &data]),
            0,
        );
        (model, data)
    }
}

fn write(path: &Path, text: &str) {
    fs::write(path, text).expect("fixture write");
}

#[test]
fn pipeline_generates_trains_and_evaluates() {
    let fx = Fixture::new();
    let (model, data) = fx.loop3();
    let params = fx.arg("params.camel");
    let out = run(&[
        "train", "--model", &model, "--data", &data, "--out", &params, "--method", "camel0",
        "--report", "tsv",
    ]);
    assert_code(&out, 0);
    let report = tsv_report(&stdout(&out));
    assert_eq!(report["method"], "camel0");
    assert_eq!(report["converged"], "true");
    let moment: f64 = report["max_moment_residual"].parse().unwrap();
    let consistency: f64 = report["max_consistency_residual"].parse().unwrap();
    assert!(moment <= 1e-5);
    assert!(consistency <= 1e-5);
    for key in ["wall_seconds", "objective", "macro_accuracy", "micro_accuracy"] {
        let v: f64 = report[key].parse().unwrap();
        assert!(v.is_finite(), "{key} = {v}");
    }

    let saved = format::parse_params(&fs::read_to_string(&params).unwrap()).unwrap();
    assert_eq!(saved.method, "camel0");
    assert_eq!(saved.mode, "generative");
    assert!(saved.deltas.is_some());

    let eval = run(&["eval", "--model", &model, "--params", &params, "--data", &data]);
    assert_code(&eval, 0);
    assert!(stdout(&eval).contains("per-variable accuracy"));
}

#[test]
fn identical_flags_produce_byte_identical_parameter_files() {
    let fx = Fixture::new();
    let (model, data) = fx.loop3();
    for method in ["piecewise", "camel0", "cccp", "lbp-ml", "exact-ml"] {
        let a = fx.arg(&format!("a-{method}.camel"));
        let b = fx.arg(&format!("b-{method}.camel"));
        for out in [&a, &b] {
            assert_code(
                &run(&[
                    "train", "--model", &model, "--data", &data, "--out", out, "--method", method,
                    "--seed", "9",
                ]),
                0,
            );
        }
        let bytes_a = fs::read(&a).unwrap();
        let bytes_b = fs::read(&b).unwrap();
        assert_eq!(bytes_a, bytes_b, "{method} params differ across identical runs");
    }
}

#[test]
fn piecewise_reports_a_single_outer_loop_on_the_worked_example() {
    let fx = Fixture::new();
    let model_path = fx.path("abc-model.camel");
    let data_path = fx.path("abc-data.camel");
    let model = synth::abc_model();
    write(&model_path, &format::serialize_model(&model).unwrap());
    let data = synth::abc_dataset(model.space());
    write(&data_path, &format::serialize_data(model.space(), &data).unwrap());

    let out = run(&[
        "train", "--model", &model_path.display().to_string(), "--data",
        &data_path.display().to_string(), "--out", &fx.arg("p.camel"), "--method", "piecewise",
        "--report", "tsv",
    ]);
    assert_code(&out, 0);
    let report = tsv_report(&stdout(&out));
    assert_eq!(report["outer_loops"], "1");
    assert_eq!(report["converged"], "true");
}

#[test]
fn usage_errors_exit_one() {
    let fx = Fixture::new();
    let (model, data) = fx.loop3();

    let out = run(&["train", "--model", "/no/such/file", "--data", &data, "--out", &fx.arg("p"),
        "--method", "piecewise"]);
    assert_code(&out, 1);
    assert!(stderr(&out).contains("cannot read model file"));

    let bad = fx.path("bad.camel");
    write(&bad, "format: 1\nvariables:\n  - nonsense\n");
    let out = run(&["train", "--model", &bad.display().to_string(), "--data", &data, "--out",
        &fx.arg("p"), "--method", "piecewise"]);
    assert_code(&out, 1);

    let out = run(&["train", "--model", &model, "--data", &data, "--out", &fx.arg("p"),
        "--method", "nonsense"]);
    assert_code(&out, 1);

    let out = run(&["train", "--model", &model, "--data", &data, "--out", &fx.arg("p"),
        "--method", "piecewise", "--sigma2", "-1"]);
    assert_code(&out, 1);
}

#[test]
fn starved_training_exits_two_but_saves_parameters() {
    let fx = Fixture::new();
    let (model, data) = fx.loop3();
    let params = fx.arg("params.camel");
    let out = run(&[
        "train", "--model", &model, "--data", &data, "--out", &params, "--method", "camel0",
        "--max-inner", "2", "--report", "tsv",
    ]);
    assert_code(&out, 2);
    let report = tsv_report(&stdout(&out));
    assert_eq!(report["converged"], "false");
    assert!(fs::metadata(&params).is_ok(), "parameter file still written");
}

#[test]
fn oversized_joint_space_names_the_cap_and_exits_one() {
    let fx = Fixture::new();
    let model = fx.arg("big.camel");
    assert_code(
        &run(&["gen-model", "--kind", "chain", "--size", "30", "--card", "2", "--out", &model]),
        0,
    );
    let line: Vec<String> = (0..30).map(|i| format!("v{i}=0")).collect();
    let data = fx.path("big-data.camel");
    write(&data, &format!("format: 1\n{}\n{}\n", line.join(" "), line.join(" ")));

    let out = run(&["train", "--model", &model, "--data", &data.display().to_string(), "--out",
        &fx.arg("p"), "--method", "exact-ml"]);
    assert_code(&out, 1);
    assert!(stderr(&out).contains("exceeding the cap"));

    // the dual methods never touch the joint space
    let out = run(&["train", "--model", &model, "--data", &data.display().to_string(), "--out",
        &fx.arg("p"), "--method", "piecewise"]);
    assert_code(&out, 0);
}

#[test]
fn check_flags_a_non_finite_table_as_a_named_failure() {
    let fx = Fixture::new();
    let model = fx.path("nan.camel");
    write(
        &model,
        "format: 1\nvariables:\n  - name: a\n    card: 2\nclusters:\n  - id: 0\n    scope: [a]\n\
         features:\n  - id: f\n    cluster: 0\n    pattern: [0]\n    value: nan\n",
    );
    let data = fx.path("nan-data.camel");
    write(&data, "format: 1\na=0\na=1\n");
    let out = run(&["check", "--model", &model.display().to_string(), "--data",
        &data.display().to_string()]);
    assert_code(&out, 2);
    let text = stdout(&out);
    assert!(text.contains("model-finite"), "named check missing:\n{text}");
    assert!(text.contains("FAIL"));
}

#[test]
fn check_passes_on_a_healthy_pair() {
    let fx = Fixture::new();
    let (model, data) = fx.loop3();
    let out = run(&["check", "--model", &model, "--data", &data]);
    assert_code(&out, 0);
    let text = stdout(&out);
    assert_eq!(text.lines().count(), 8);
    assert!(!text.contains("FAIL"));
}

#[test]
fn conditional_pipeline_scores_target_variables_only() {
    let fx = Fixture::new();
    let model = fx.arg("chain.camel");
    let data = fx.arg("cond.camel");
    assert_code(
        &run(&["gen-model", "--kind", "chain", "--size", "4", "--card", "2", "--out", &model]),
        0,
    );
    assert_code(
        &run(&["gen-data", "--model", &model, "--count", "25", "--seed", "5", "--observed",
            "v0,v2", "--out", &data]),
        0,
    );
    let params = fx.arg("params.camel");
    assert_code(
        &run(&["train", "--model", &model, "--data", &data, "--out", &params, "--method",
            "camel0"]),
        0,
    );
    let out = run(&["eval", "--model", &model, "--params", &params, "--data", &data, "--report",
        "tsv"]);
    assert_code(&out, 0);
    let text = stdout(&out);
    let names: Vec<&str> =
        text.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(names, vec!["v1", "v3", "macro", "micro"]);
}

#[test]
fn lbp_and_exact_inference_agree_on_trees() {
    let fx = Fixture::new();
    let model = fx.arg("chain.camel");
    let data = fx.arg("data.camel");
    assert_code(
        &run(&["gen-model", "--kind", "chain", "--size", "5", "--card", "2", "--out", &model]),
        0,
    );
    assert_code(
        &run(&["gen-data", "--model", &model, "--count", "30", "--seed", "7", "--out", &data]),
        0,
    );
    let params = fx.arg("params.camel");
    assert_code(
        &run(&["train", "--model", &model, "--data", &data, "--out", &params, "--method",
            "exact-ml"]),
        0,
    );
    let lbp = run(&["eval", "--model", &model, "--params", &params, "--data", &data,
        "--inference", "lbp", "--report", "tsv"]);
    let exact = run(&["eval", "--model", &model, "--params", &params, "--data", &data,
        "--inference", "exact", "--report", "tsv"]);
    assert_code(&lbp, 0);
    assert_code(&exact, 0);
    assert_eq!(stdout(&lbp), stdout(&exact));
}

#[test]
fn zero_weights_predict_the_base_rate_of_state_zero() {
    let fx = Fixture::new();
    let model = fx.arg("chain.camel");
    let data_path = fx.path("data.camel");
    assert_code(
        &run(&["gen-model", "--kind", "chain", "--size", "3", "--card", "2", "--out", &model]),
        0,
    );
    assert_code(
        &run(&["gen-data", "--model", &model, "--count", "40", "--seed", "11", "--out",
            &data_path.display().to_string()]),
        0,
    );
    // weights default to zero for any feature the file does not list
    let params = fx.path("uniform.camel");
    write(&params, "format: 1\nmethod: piecewise\nmode: generative\nweights:\n  - feature: c0_a0\n    value: 0\n");

    let out = run(&["eval", "--model", &model, "--params", &params.display().to_string(),
        "--data", &data_path.display().to_string(), "--inference", "exact", "--report", "tsv"]);
    assert_code(&out, 0);

    let text = fs::read_to_string(&data_path).unwrap();
    let zeros = text.matches("=0").count();
    let total = zeros + text.matches("=1").count();
    let micro_line = stdout(&out);
    let micro: f64 =
        micro_line.lines().last().unwrap().split('\t').last().unwrap().parse().unwrap();
    assert!((micro - zeros as f64 / total as f64).abs() < 1e-12);
}

#[test]
fn diagnostics_trace_lists_every_solve() {
    let fx = Fixture::new();
    let (model, data) = fx.loop3();
    let diag = fx.arg("trace.tsv");
    let out = run(&["train", "--model", &model, "--data", &data, "--out", &fx.arg("p.camel"),
        "--method", "cccp", "--diagnostics", &diag, "--report", "tsv"]);
    assert_code(&out, 0);
    let report = tsv_report(&stdout(&out));
    let text = fs::read_to_string(&diag).unwrap();
    assert_eq!(text.lines().next(), Some("loop\titer\tvalue\tgrad_norm\tstep"));
    let loops: Vec<usize> = text
        .lines()
        .skip(1)
        .map(|l| l.split('\t').next().unwrap().parse().unwrap())
        .collect();
    // bootstrap is loop 0; each relinearized solve numbers itself
    let outer: usize = report["outer_loops"].parse().unwrap();
    assert_eq!(loops.iter().copied().max(), Some(outer));
    assert!(loops.contains(&0));
}
