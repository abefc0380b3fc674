use std::fs;
use std::path::PathBuf;

use defunc_core::defunc::defunctionalize_program;
use defunc_core::emit::{emit, emit_diff, EmitConfig};
use defunc_core::parser::parse;

fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn check_entry(name: &str) {
    let dir = corpus_dir().join(name);
    let source = parse(&fs::read_to_string(dir.join("source.hof")).unwrap()).unwrap();
    let golden = parse(&fs::read_to_string(dir.join("golden.fof")).unwrap()).unwrap();
    let (_, d) = defunctionalize_program(source).unwrap_or_else(|e| panic!("{name}: {e}"));
    let diff = emit_diff(&golden, &d.program);
    assert!(
        diff.is_empty(),
        "{name}: output differs from golden\n{diff}\n--- output ---\n{}",
        emit(&d.program, &EmitConfig::default())
    );
}

#[test]
fn height_matches_golden() {
    check_entry("height");
}

#[test]
fn distinct_matches_golden() {
    check_entry("distinct");
}

#[test]
fn interp_matches_golden() {
    check_entry("interp");
}
