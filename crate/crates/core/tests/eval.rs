use std::fs;
use std::path::PathBuf;

use defunc_core::defunc::defunctionalize_program;
use defunc_core::eval::{eval_formula, eval_source, eval_target, EvalConfig, Store, Value};
use defunc_core::parser::parse;

fn read(entry: &str, file: &str) -> String {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../corpus")
        .join(entry)
        .join(file);
    fs::read_to_string(p).unwrap()
}

fn leaf() -> Value {
    Value::con("Empty", vec![])
}

fn node(l: Value, x: i64, r: Value) -> Value {
    Value::con("Node", vec![l, Value::Int(x), r])
}

fn cst(n: i64) -> Value {
    Value::con("Const", vec![Value::Int(n)])
}

fn sub(a: Value, b: Value) -> Value {
    Value::con("Sub", vec![a, b])
}

// Independent oracle: direct recursive height.
fn height(t: &Value) -> i64 {
    match t {
        Value::Con(c, fs) if &**c == "Node" => 1 + height(&fs[0]).max(height(&fs[2])),
        _ => 0,
    }
}

fn run_both(entry: &str, f: &str, args: Vec<Value>) -> (Value, Value) {
    let (tp, d) = defunctionalize_program(parse(&read(entry, "source.hof")).unwrap()).unwrap();
    let cfg = EvalConfig::default();
    let s = eval_source(&tp, &d, f, args.clone(), &cfg);
    assert!(s.report.is_clean(), "source: {:?}", s.report);
    let t = eval_target(&d.program, f, args, &cfg);
    assert!(t.report.is_clean(), "target: {:?}", t.report);
    (s.result.unwrap(), t.result.unwrap())
}

#[test]
fn height_of_empty_is_zero() {
    let (s, t) = run_both("height", "heigth_tree", vec![leaf()]);
    assert_eq!(s, Value::Int(0));
    assert_eq!(t, Value::Int(0));
}

#[test]
fn height_of_unbalanced_tree() {
    let t = node(
        node(leaf(), 1, leaf()),
        2,
        node(leaf(), 3, node(leaf(), 4, leaf())),
    );
    let expected = height(&t);
    assert_eq!(expected, 3);
    let (s, g) = run_both("height", "heigth_tree", vec![t]);
    assert_eq!(s, Value::Int(expected));
    assert_eq!(g, Value::Int(expected));
}

#[test]
fn golden_height_traces_kid_on_empty() {
    let golden = parse(&read("height", "golden.fof")).unwrap();
    let cfg = EvalConfig {
        trace: true,
        ..EvalConfig::default()
    };
    let out = eval_target(&golden, "heigth_tree", vec![leaf()], &cfg);
    assert_eq!(out.result, Ok(Value::Int(0)));
    assert_eq!(out.trace, vec!["apply Kid 0".to_string()]);
}

#[test]
fn distinct_counts_payloads() {
    // Oracle: cardinality of the payload set {1, 2}.
    let t = node(node(leaf(), 1, leaf()), 2, node(leaf(), 1, leaf()));
    let (s, g) = run_both("distinct", "n_distinct_elements", vec![t]);
    assert_eq!(s, Value::Int(2));
    assert_eq!(g, Value::Int(2));
}

#[test]
fn red_of_subtractions() {
    let (s, t) = run_both("interp", "red", vec![sub(cst(5), cst(3))]);
    assert_eq!((s, t), (Value::Int(2), Value::Int(2)));
    let (s, t) = run_both("interp", "red", vec![sub(sub(cst(10), cst(4)), cst(1))]);
    assert_eq!((s, t), (Value::Int(5), Value::Int(5)));
}

#[test]
fn post_predicate_on_kid() {
    let golden = parse(&read("height", "golden.fof")).unwrap();
    let f = parse_formula("post Kid 7 7");
    let cfg = EvalConfig::default();
    assert_eq!(
        eval_formula(&golden, &f, &[], None, &Store::default(), &cfg),
        Ok(true)
    );
    let f = parse_formula("post Kid 7 8");
    assert_eq!(
        eval_formula(&golden, &f, &[], None, &Store::default(), &cfg),
        Ok(false)
    );
    let f = parse_formula("var_tree Empty >= 0");
    assert_eq!(
        eval_formula(&golden, &f, &[], None, &Store::default(), &cfg),
        Ok(true)
    );
}

fn parse_formula(s: &str) -> defunc_core::Expr {
    defunc_core::parser::parse_formula(s).unwrap()
}

#[test]
fn fuel_exhaustion_is_reported() {
    let p = parse("let rec f (x: int) : int = f x").unwrap();
    let cfg = EvalConfig {
        fuel: 1000,
        ..EvalConfig::default()
    };
    let out = eval_target(&p, "f", vec![Value::Int(0)], &cfg);
    assert!(matches!(
        out.result,
        Err(defunc_core::eval::EvalError::FuelExhausted(_))
    ));
}

#[test]
fn deep_recursion_does_not_overflow_the_host_stack() {
    let p = parse("let rec down (n: int) : int = if n = 0 then 0 else 1 + down (n - 1)").unwrap();
    let out = eval_target(
        &p,
        "down",
        vec![Value::Int(200_000)],
        &EvalConfig::default(),
    );
    assert_eq!(out.result, Ok(Value::Int(200_000)));
}
