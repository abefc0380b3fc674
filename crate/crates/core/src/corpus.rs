//! The bundled case studies: source programs, golden targets, input
//! generators and reference oracles.
//!
//! Each entry is a directory with `source.hof`, `golden.fof` and a
//! `meta.cfg` of `key = value` lines:
//!
//! ```text
//! entry = heigth_tree      # function under test (one argument)
//! generator = tree         # tree | exp
//! oracle = height          # height | distinct | eval
//! runs = 500
//! max_size = 50
//! seed = 0
//! lemmas = lemmas.fof      # optional lemma functions over the target
//! lemma_samples = 200
//! properties = contexts    # optional extra properties (see check)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::eval::Value;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Meta {
        path: PathBuf,
        line: usize,
        msg: String,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Generator {
    Tree,
    Exp,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Oracle {
    Height,
    Distinct,
    Eval,
}

impl Oracle {
    pub fn run(self, input: &Value) -> Value {
        match self {
            Oracle::Height => Value::Int(height(input)),
            Oracle::Distinct => Value::Int(distinct(input)),
            Oracle::Eval => Value::Int(eval_exp(input)),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Meta {
    pub entry: String,
    pub generator: Generator,
    pub oracle: Oracle,
    pub runs: usize,
    pub max_size: usize,
    pub seed: u64,
    pub lemmas: Option<String>,
    pub lemma_samples: usize,
    pub properties: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct CorpusEntry {
    pub name: String,
    pub dir: PathBuf,
    pub meta: Meta,
    pub source: String,
    pub golden: String,
    pub lemmas: Option<String>,
}

impl CorpusEntry {
    /// Generated input number `run`.
    pub fn input(&self, seed: u64, run: usize, max_size: usize) -> Value {
        let mut rng = run_rng(seed, run);
        // Sizes ramp up over the first runs so that early failures are small.
        let limit = max_size.min(run);
        match self.meta.generator {
            Generator::Tree => {
                let n = rng.gen_range(0..=limit);
                gen_tree(&mut rng, n)
            }
            Generator::Exp => {
                let n = rng.gen_range(1..=limit.max(1));
                gen_exp(&mut rng, n)
            }
        }
    }
}

/// A deliberately broken target, kept next to an entry to show that the
/// checks catch it.
#[derive(Clone, Debug)]
pub struct Mutant {
    pub name: String,
    pub text: String,
}

impl CorpusEntry {
    /// `mutants/*.fof` of the entry, sorted by name.
    pub fn mutants(&self) -> Result<Vec<Mutant>, CorpusError> {
        let dir = self.dir.join("mutants");
        if !dir.is_dir() {
            return Ok(Vec::new());
        }
        let rd = fs::read_dir(&dir).map_err(|source| CorpusError::Io {
            path: dir.clone(),
            source,
        })?;
        let mut paths: Vec<PathBuf> = rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "fof"))
            .collect();
        paths.sort();
        paths
            .iter()
            .map(|p| {
                Ok(Mutant {
                    name: p
                        .file_stem()
                        .unwrap_or_default()
                        .to_string_lossy()
                        .into_owned(),
                    text: read(p)?,
                })
            })
            .collect()
    }
}

fn run_rng(seed: u64, run: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run as u64);
    rng
}

/// Corpus location: `DEFUNC_CORPUS_DIR`, else `./corpus`, else the copy
/// next to this crate.
pub fn corpus_dir() -> PathBuf {
    if let Ok(d) = std::env::var("DEFUNC_CORPUS_DIR") {
        return PathBuf::from(d);
    }
    let local = PathBuf::from("corpus");
    if local.join("height").is_dir() {
        return local;
    }
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_meta(text: &str, path: &Path) -> Result<Meta, CorpusError> {
    let err = |line: usize, msg: String| CorpusError::Meta {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut kv = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(i + 1, format!("expected `key = value`, found `{line}`")))?;
        kv.insert(k.trim().to_string(), (i + 1, v.trim().to_string()));
    }
    let get = |k: &str| kv.get(k).map(|(l, v)| (*l, v.as_str()));
    let need = |k: &str| get(k).ok_or_else(|| err(0, format!("missing key `{k}`")));
    let num = |k: &str, default: u64| -> Result<u64, CorpusError> {
        match get(k) {
            None => Ok(default),
            Some((l, v)) => v
                .parse()
                .map_err(|_| err(l, format!("`{k}` must be a number"))),
        }
    };
    let (l, g) = need("generator")?;
    let generator = match g {
        "tree" => Generator::Tree,
        "exp" => Generator::Exp,
        other => return Err(err(l, format!("unknown generator `{other}`"))),
    };
    let (l, o) = need("oracle")?;
    let oracle = match o {
        "height" => Oracle::Height,
        "distinct" => Oracle::Distinct,
        "eval" => Oracle::Eval,
        other => return Err(err(l, format!("unknown oracle `{other}`"))),
    };
    for (k, (l, _)) in &kv {
        const KNOWN: [&str; 10] = [
            "entry",
            "generator",
            "oracle",
            "runs",
            "max_size",
            "seed",
            "lemmas",
            "lemma_samples",
            "properties",
            "description",
        ];
        if !KNOWN.contains(&k.as_str()) {
            return Err(err(*l, format!("unknown key `{k}`")));
        }
    }
    Ok(Meta {
        entry: need("entry")?.1.to_string(),
        generator,
        oracle,
        runs: num("runs", 100)? as usize,
        max_size: num("max_size", 20)? as usize,
        seed: num("seed", 0)?,
        lemmas: get("lemmas").map(|(_, v)| v.to_string()),
        lemma_samples: num("lemma_samples", 0)? as usize,
        properties: get("properties")
            .map(|(_, v)| v.split(',').map(|s| s.trim().to_string()).collect())
            .unwrap_or_default(),
    })
}

pub fn load_entry(dir: &Path) -> Result<CorpusEntry, CorpusError> {
    let meta_path = dir.join("meta.cfg");
    let meta = parse_meta(&read(&meta_path)?, &meta_path)?;
    let lemmas = match &meta.lemmas {
        Some(f) => Some(read(&dir.join(f))?),
        None => None,
    };
    Ok(CorpusEntry {
        name: dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        dir: dir.to_path_buf(),
        source: read(&dir.join("source.hof"))?,
        golden: read(&dir.join("golden.fof"))?,
        lemmas,
        meta,
    })
}

/// All entries of a corpus directory, sorted by name.
pub fn load_corpus(dir: &Path) -> Result<Vec<CorpusEntry>, CorpusError> {
    let rd = fs::read_dir(dir).map_err(|source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut dirs: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("meta.cfg").is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| load_entry(d)).collect()
}

/// Random binary tree with `n` nodes and payloads in 0..=9.
pub fn gen_tree<R: Rng>(rng: &mut R, n: usize) -> Value {
    if n == 0 {
        return Value::con("Empty", vec![]);
    }
    let left = rng.gen_range(0..n);
    let l = gen_tree(rng, left);
    let x = Value::Int(rng.gen_range(0..=9));
    let r = gen_tree(rng, n - 1 - left);
    Value::con("Node", vec![l, x, r])
}

/// Random expression with at most `size` constructors and constants in
/// -100..=100.
pub fn gen_exp<R: Rng>(rng: &mut R, size: usize) -> Value {
    if size < 3 {
        return Value::con("Const", vec![Value::Int(rng.gen_range(-100..=100))]);
    }
    let left = rng.gen_range(1..size - 1);
    let a = gen_exp(rng, left);
    let b = gen_exp(rng, size - 1 - left);
    Value::con("Sub", vec![a, b])
}

// Reference implementations, written directly over values.

fn children(v: &Value) -> (&str, &[Value]) {
    match v {
        Value::Con(c, fs) => (c, fs),
        _ => ("", &[]),
    }
}

pub fn height(t: &Value) -> i64 {
    match children(t) {
        ("Node", [l, _, r]) => 1 + height(l).max(height(r)),
        _ => 0,
    }
}

pub fn distinct(t: &Value) -> i64 {
    fn collect(t: &Value, out: &mut std::collections::BTreeSet<i64>) {
        if let ("Node", [l, Value::Int(x), r]) = children(t) {
            out.insert(*x);
            collect(l, out);
            collect(r, out);
        }
    }
    let mut s = std::collections::BTreeSet::new();
    collect(t, &mut s);
    s.len() as i64
}

pub fn eval_exp(e: &Value) -> i64 {
    match children(e) {
        ("Const", [Value::Int(n)]) => *n,
        ("Sub", [a, b]) => eval_exp(a) - eval_exp(b),
        _ => panic!("not an expression: {e}"),
    }
}

pub fn node_count(v: &Value) -> usize {
    match v {
        Value::Con(_, fs) => 1 + fs.iter().map(node_count).sum::<usize>(),
        _ => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn meta_parses_and_rejects_unknown_keys() {
        let m = parse_meta(
            "entry = red\ngenerator = exp # comment\noracle = eval\nruns = 5\n",
            Path::new("m"),
        )
        .unwrap();
        assert_eq!(m.entry, "red");
        assert_eq!(m.runs, 5);
        assert_eq!(m.generator, Generator::Exp);
        assert!(parse_meta(
            "entry = red\ngenerator = exp\noracle = eval\nbogus = 1\n",
            Path::new("m")
        )
        .is_err());
        assert!(parse_meta("entry = red\noracle = eval\n", Path::new("m")).is_err());
    }

    #[test]
    fn trees_have_the_requested_size() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(gen_tree(&mut rng, 0), Value::con("Empty", vec![]));
        for n in 0..30 {
            let t = gen_tree(&mut rng, n);
            // n nodes plus n + 1 leaves, payload ints are not counted.
            assert_eq!(node_count(&t), 2 * n + 1);
        }
    }

    #[test]
    fn fifty_node_trees_repeat_payloads() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let t = gen_tree(&mut rng, 50);
            // Payloads are digits, so at most ten are distinct.
            let mut s = std::collections::BTreeSet::new();
            for v in crate::eval::subterms(&t) {
                if let Value::Con(c, fs) = &v {
                    if &**c == "Node" {
                        s.insert(fs[1].clone());
                    }
                }
            }
            assert!(s.len() <= 10);
            assert_eq!(distinct(&t), s.len() as i64);
        }
    }

    #[test]
    fn expressions_respect_the_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        assert!(matches!(gen_exp(&mut rng, 1), Value::Con(c, _) if &*c == "Const"));
        for n in 1..30 {
            let e = gen_exp(&mut rng, n);
            // Each constructor of exp counts once.
            assert!(node_count(&e) <= n.max(1), "size {n}: {e}");
        }
    }

    #[test]
    fn oracles_on_small_inputs() {
        let empty = Value::con("Empty", vec![]);
        assert_eq!(height(&empty), 0);
        let one = Value::con("Node", vec![empty.clone(), Value::Int(4), empty]);
        assert_eq!(distinct(&one), 1);
        let c = |n| Value::con("Const", vec![Value::Int(n)]);
        assert_eq!(eval_exp(&Value::con("Sub", vec![c(1), c(1)])), 0);
    }

    #[test]
    fn inputs_are_reproducible() {
        let text = "entry = heigth_tree\ngenerator = tree\noracle = height\n";
        let e = CorpusEntry {
            name: "t".into(),
            dir: PathBuf::new(),
            meta: parse_meta(text, Path::new("m")).unwrap(),
            source: String::new(),
            golden: String::new(),
            lemmas: None,
        };
        assert_eq!(e.input(7, 40, 50), e.input(7, 40, 50));
        assert_eq!(e.input(7, 0, 50), Value::con("Empty", vec![]));
    }
}
