use std::collections::BTreeSet;
use std::path::PathBuf;

use proptest::prelude::*;

use defunc_core::defunc::defunctionalize_program;
use defunc_core::emit::{emit, emit_diff, EmitConfig};
use defunc_core::eval::{eval_source, eval_target, EvalConfig, Value};
use defunc_core::parser::parse;

fn source(entry: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../corpus")
        .join(entry)
        .join("source.hof");
    std::fs::read_to_string(p).unwrap()
}

// Trees and expressions as plain Rust data, converted to runtime values.
// The oracles below work on this representation, not on `Value`.

#[derive(Clone, Debug)]
enum Tree {
    Empty,
    Node(Box<Tree>, i64, Box<Tree>),
}

#[derive(Clone, Debug)]
enum Exp {
    Const(i64),
    Sub(Box<Exp>, Box<Exp>),
}

fn tree() -> impl Strategy<Value = Tree> {
    Just(Tree::Empty).prop_recursive(6, 40, 2, |inner| {
        (inner.clone(), 0i64..10, inner)
            .prop_map(|(l, x, r)| Tree::Node(Box::new(l), x, Box::new(r)))
    })
}

fn exp() -> impl Strategy<Value = Exp> {
    (-100i64..=100)
        .prop_map(Exp::Const)
        .prop_recursive(6, 30, 2, |inner| {
            (inner.clone(), inner).prop_map(|(a, b)| Exp::Sub(Box::new(a), Box::new(b)))
        })
}

fn tree_value(t: &Tree) -> Value {
    match t {
        Tree::Empty => Value::con("Empty", vec![]),
        Tree::Node(l, x, r) => {
            Value::con("Node", vec![tree_value(l), Value::Int(*x), tree_value(r)])
        }
    }
}

fn exp_value(e: &Exp) -> Value {
    match e {
        Exp::Const(n) => Value::con("Const", vec![Value::Int(*n)]),
        Exp::Sub(a, b) => Value::con("Sub", vec![exp_value(a), exp_value(b)]),
    }
}

fn height(t: &Tree) -> i64 {
    match t {
        Tree::Empty => 0,
        Tree::Node(l, _, r) => 1 + height(l).max(height(r)),
    }
}

fn payloads(t: &Tree, out: &mut BTreeSet<i64>) {
    if let Tree::Node(l, x, r) = t {
        out.insert(*x);
        payloads(l, out);
        payloads(r, out);
    }
}

fn eval(e: &Exp) -> i64 {
    match e {
        Exp::Const(n) => *n,
        Exp::Sub(a, b) => eval(a) - eval(b),
    }
}

/// Source and target agree with `want` and neither run violates a contract.
fn agree(entry: &str, f: &str, input: Value, want: i64) -> Result<(), TestCaseError> {
    let (tp, d) = defunctionalize_program(parse(&source(entry)).unwrap()).unwrap();
    let cfg = EvalConfig::default();
    let s = eval_source(&tp, &d, f, vec![input.clone()], &cfg);
    let t = eval_target(&d.program, f, vec![input], &cfg);
    prop_assert!(s.report.is_clean(), "source: {:?}", s.report);
    prop_assert!(t.report.is_clean(), "target: {:?}", t.report);
    prop_assert_eq!(s.result.unwrap(), Value::Int(want));
    prop_assert_eq!(t.result.unwrap(), Value::Int(want));
    prop_assert_eq!(s.store.cells(), t.store.cells());
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn height_is_preserved(t in tree()) {
        agree("height", "heigth_tree", tree_value(&t), height(&t))?;
    }

    #[test]
    fn distinct_count_is_preserved(t in tree()) {
        let mut s = BTreeSet::new();
        payloads(&t, &mut s);
        agree("distinct", "n_distinct_elements", tree_value(&t), s.len() as i64)?;
    }

    #[test]
    fn interpreter_result_is_preserved(e in exp()) {
        agree("interp", "red", exp_value(&e), eval(&e))?;
    }

    #[test]
    fn printing_is_a_fixpoint(seed in any::<u64>()) {
        let cfg = EmitConfig::default();
        for p in defunc_core::fuzz::programs(seed, 4) {
            let out = emit(&p, &cfg);
            let q = parse(&out).map_err(|e| TestCaseError::fail(format!("{e:?}\n{out}")))?;
            prop_assert_eq!(emit_diff(&p, &q), "");
            prop_assert_eq!(emit(&q, &cfg), out);
        }
    }

    #[test]
    fn printing_respects_width(seed in any::<u64>(), width in 40usize..120) {
        // Narrow widths change the layout, never the program.
        let cfg = EmitConfig { width, ..EmitConfig::default() };
        for p in defunc_core::fuzz::programs(seed, 2) {
            let q = parse(&emit(&p, &cfg)).map_err(|e| TestCaseError::fail(format!("{e:?}")))?;
            prop_assert_eq!(emit_diff(&p, &q), "");
        }
    }
}

#[test]
fn transform_is_deterministic() {
    for entry in ["height", "distinct", "interp"] {
        let a = defunctionalize_program(parse(&source(entry)).unwrap())
            .unwrap()
            .1
            .program;
        let b = defunctionalize_program(parse(&source(entry)).unwrap())
            .unwrap()
            .1
            .program;
        assert_eq!(
            emit(&a, &EmitConfig::default()),
            emit(&b, &EmitConfig::default())
        );
    }
}
