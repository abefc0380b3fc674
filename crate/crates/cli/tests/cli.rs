use std::fs;
use std::path::PathBuf;
use std::process::{Command, Output};

fn corpus() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn defunc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_defunc"))
        .args(args)
        .env("DEFUNC_CORPUS_DIR", corpus())
        .output()
        .unwrap()
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn parse(text: &str) -> defunc_core::Program {
    defunc_core::parser::parse(text).unwrap()
}

#[test]
fn transform_writes_the_golden_program() {
    let dir = tempfile::tempdir().unwrap();
    for entry in ["height", "distinct", "interp"] {
        let out = dir.path().join(format!("{entry}.fof"));
        let src = corpus().join(entry).join("source.hof");
        let r = defunc(&[
            "transform",
            src.to_str().unwrap(),
            "-o",
            out.to_str().unwrap(),
        ]);
        assert!(r.status.success(), "{}", text(&r.stderr));
        let got = parse(&fs::read_to_string(&out).unwrap());
        let want = parse(&fs::read_to_string(corpus().join(entry).join("golden.fof")).unwrap());
        assert_eq!(defunc_core::emit::emit_diff(&want, &got), "", "{entry}");
    }
}

#[test]
fn first_order_input_is_left_alone() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("inc.hof");
    let src = "let inc (x: int) : int\n  ensures { result = x + 1 }\n= x + 1\n";
    fs::write(&p, src).unwrap();
    let r = defunc(&["transform", p.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(0));
    assert!(text(&r.stderr).contains("nothing to defunctionalize"));
    assert_eq!(text(&r.stdout), src);
}

#[test]
fn unknown_function_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("app.hof");
    fs::write(&p, "let app (f: int -> int) (x: int) : int = f x\n").unwrap();
    let r = defunc(&["transform", p.to_str().unwrap()]);
    assert_eq!(r.status.code(), Some(1));
    let err = text(&r.stderr);
    assert!(err.contains("app.hof:1:"), "{err}");
    assert!(err.contains("every function value to be known"), "{err}");
}

#[test]
fn emit_round_trips_and_reports_bad_paths() {
    let src = corpus().join("interp").join("golden.fof");
    let r = defunc(&["emit", src.to_str().unwrap()]);
    assert!(r.status.success());
    let once = text(&r.stdout);
    assert_eq!(
        defunc_core::emit::emit_diff(&parse(&fs::read_to_string(&src).unwrap()), &parse(&once)),
        ""
    );

    let r = defunc(&["emit", "/definitely/not/here.hof"]);
    assert_eq!(r.status.code(), Some(1));
    assert!(text(&r.stderr).contains("cannot read"));
}

#[test]
fn whyml_emit_of_the_height_target() {
    let src = corpus().join("height").join("golden.fof");
    let r = defunc(&["emit", src.to_str().unwrap(), "--dialect", "whyml"]);
    assert!(r.status.success());
    let out = text(&r.stdout);
    assert!(out.starts_with("module "));
    assert!(out.contains("ensures { post k (height t) result }"));
}

#[test]
fn check_single_run_on_the_empty_tree() {
    let r = defunc(&["check", "height", "--runs", "1"]);
    assert_eq!(r.status.code(), Some(0), "{}", text(&r.stderr));
    let report = text(&r.stdout);
    assert!(
        report.contains("height\tdifferential\tpass\t1 runs"),
        "{report}"
    );
    assert!(report.lines().all(|l| l.split('\t').count() == 4));
}

#[test]
fn check_reports_a_counterexample_for_a_mutant() {
    let m = corpus().join("height/mutants/dropped_capture.fof");
    let r = defunc(&[
        "check",
        "height",
        "--runs",
        "40",
        "--target",
        m.to_str().unwrap(),
    ]);
    assert_eq!(r.status.code(), Some(1));
    let report = text(&r.stdout);
    let line = report
        .lines()
        .find(|l| l.contains("\tdifferential\t"))
        .unwrap();
    assert!(
        line.contains("\tFAIL\t") && line.contains("input = Node"),
        "{line}"
    );
}

#[test]
fn check_output_is_reproducible() {
    let a = defunc(&["check", "distinct", "--runs", "25", "--seed", "9"]);
    let b = defunc(&["check", "distinct", "--runs", "25", "--seed", "9"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(
        defunc(&["check", "height", "--runs", "0"]).status.code(),
        Some(1)
    );
    assert_eq!(defunc(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(defunc(&["check", "/tmp"]).status.code(), Some(1));
}
