use std::path::PathBuf;

use defunc_core::emit::{emit, emit_diff, EmitConfig};
use defunc_core::parser::parse;

fn corpus_files() -> Vec<PathBuf> {
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus");
    let mut out = Vec::new();
    for entry in std::fs::read_dir(&root).unwrap() {
        let dir = entry.unwrap().path();
        for f in ["source.hof", "golden.fof", "lemmas.fof"] {
            let p = dir.join(f);
            if p.exists() {
                out.push(p);
            }
        }
    }
    out.sort();
    out
}

#[test]
fn corpus_files_round_trip() {
    let files = corpus_files();
    assert!(files.len() >= 6);
    for path in files {
        let text = std::fs::read_to_string(&path).unwrap();
        let p = parse(&text).unwrap_or_else(|e| panic!("{}: {:?}", path.display(), e));
        let out = emit(&p, &EmitConfig::default());
        let q =
            parse(&out).unwrap_or_else(|e| panic!("{}: reparse {:?}\n{out}", path.display(), e));
        assert_eq!(emit_diff(&p, &q), "", "{}", path.display());
        assert_eq!(emit(&q, &EmitConfig::default()), out);
    }
}

#[test]
fn corpus_typechecks() {
    for path in corpus_files() {
        if path.ends_with("lemmas.fof") {
            continue;
        }
        let text = std::fs::read_to_string(&path).unwrap();
        let p = parse(&text).unwrap();
        if let Err(e) = defunc_core::typecheck::typecheck(p) {
            panic!("{}: {e}", path.display());
        }
    }
}

#[test]
fn fuzzed_programs_round_trip() {
    let cfg = EmitConfig::default();
    for (i, p) in defunc_core::fuzz::programs(0, 200).into_iter().enumerate() {
        let out = emit(&p, &cfg);
        let q =
            parse(&out).unwrap_or_else(|e| panic!("program {i} does not reparse: {e:?}\n{out}"));
        assert_eq!(emit_diff(&p, &q), "", "program {i}\n{out}");
        assert_eq!(emit(&q, &cfg), out, "program {i}");
    }
}
