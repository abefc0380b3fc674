//! Random values of a type, for sampling quantifiers and lemma arguments.

use rand::Rng;

use super::Value;
use crate::ast::Type;
use crate::typecheck::TypeEnv;

/// A random value of `ty` with at most about `size` constructors. Type
/// variables are instantiated with `int`. `None` for types without runtime
/// values to invent (references, functions).
pub fn gen_value<R: Rng>(ty: &Type, tenv: &TypeEnv, rng: &mut R, size: usize) -> Option<Value> {
    let ty = tenv.expand(ty);
    Some(match &ty {
        Type::Int | Type::Var(_) => Value::Int(rng.gen_range(-10..=10)),
        Type::Bool => Value::Bool(rng.gen()),
        Type::Unit => Value::Unit,
        Type::Tuple(ts) => Value::tuple(
            ts.iter()
                .map(|t| gen_value(t, tenv, rng, size / ts.len().max(1)))
                .collect::<Option<_>>()?,
        ),
        Type::Set(t) => {
            let n = rng.gen_range(0..=size.min(5));
            Value::set(
                (0..n)
                    .map(|_| gen_value(t, tenv, rng, 0))
                    .collect::<Option<Vec<_>>>()?,
            )
        }
        Type::Adt(name, args) => {
            let (params, ctors) = tenv.constructors(name)?;
            let inst = |t: &Type| {
                t.subst(&|v| {
                    params
                        .iter()
                        .position(|p| p == v)
                        .and_then(|i| args.get(i).cloned())
                })
            };
            let recursive = |c: &crate::ast::Constructor| {
                c.fields
                    .iter()
                    .any(|f| mentions(&tenv.expand(&inst(f)), name))
            };
            let base: Vec<_> = ctors.iter().filter(|c| !recursive(c)).collect();
            let pool: Vec<_> = if size == 0 && !base.is_empty() {
                base
            } else {
                ctors.iter().collect()
            };
            let c = pool[rng.gen_range(0..pool.len())];
            let mut fields = Vec::new();
            let mut left = size.saturating_sub(1);
            for (i, f) in c.fields.iter().enumerate() {
                let f = inst(f);
                let share = if mentions(&tenv.expand(&f), name) {
                    let remaining = c.fields[i..]
                        .iter()
                        .filter(|g| mentions(&tenv.expand(&inst(g)), name))
                        .count();
                    let s = if remaining <= 1 {
                        left
                    } else {
                        rng.gen_range(0..=left)
                    };
                    left -= s;
                    s
                } else {
                    0
                };
                fields.push(gen_value(&f, tenv, rng, share)?);
            }
            Value::con(&c.name, fields)
        }
        Type::Ref(_) | Type::Arrow(..) => return None,
    })
}

fn mentions(t: &Type, name: &str) -> bool {
    match t {
        Type::Adt(n, ts) => n == name || ts.iter().any(|x| mentions(x, name)),
        Type::Tuple(ts) => ts.iter().any(|x| mentions(x, name)),
        Type::Set(x) | Type::Ref(x) => mentions(x, name),
        Type::Arrow(a, b) => mentions(a, name) || mentions(b, name),
        _ => false,
    }
}

/// Whether a runtime value fits `ty` (type variables match anything).
pub fn value_has_type(v: &Value, ty: &Type, tenv: &TypeEnv) -> bool {
    match (v, &tenv.expand(ty)) {
        (_, Type::Var(_)) => true,
        (Value::Int(_), Type::Int) | (Value::Bool(_), Type::Bool) | (Value::Unit, Type::Unit) => {
            true
        }
        (Value::Tuple(vs), Type::Tuple(ts)) => {
            vs.len() == ts.len() && vs.iter().zip(ts).all(|(v, t)| value_has_type(v, t, tenv))
        }
        (Value::Set(s), Type::Set(t)) => s.iter().all(|v| value_has_type(v, t, tenv)),
        (Value::Con(c, _), Type::Adt(name, _)) => tenv
            .constructor(c)
            .is_some_and(|(owner, _, _)| owner == name),
        (Value::Closure(_), Type::Arrow(..)) => true,
        (Value::Ref(_), Type::Ref(_)) => true,
        _ => false,
    }
}

/// The value and all values nested in it, outermost first.
pub fn subterms(v: &Value) -> Vec<Value> {
    let mut out = vec![v.clone()];
    let mut i = 0;
    while i < out.len() {
        if let Value::Con(_, fs) | Value::Tuple(fs) = &out[i] {
            let fs = fs.clone();
            out.extend(fs.iter().cloned());
        }
        i += 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn generated_trees_are_well_typed_and_bounded() {
        let p = parse("type tree 'a = Empty | Node (tree 'a) 'a (tree 'a)").unwrap();
        let tenv = TypeEnv::new(&p);
        let ty = Type::adt("tree", vec![Type::Int]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for size in 0..20 {
            let v = gen_value(&ty, &tenv, &mut rng, size).unwrap();
            assert!(value_has_type(&v, &ty, &tenv));
            let nodes = subterms(&v)
                .iter()
                .filter(|s| matches!(s, Value::Con(c, _) if &**c == "Node"))
                .count();
            assert!(nodes <= size.max(1), "{nodes} nodes for size {size}");
        }
    }

    #[test]
    fn subterms_include_children() {
        let leaf = Value::con("Empty", vec![]);
        let t = Value::con("Node", vec![leaf.clone(), Value::Int(4), leaf.clone()]);
        let s = subterms(&t);
        assert_eq!(s[0], t);
        assert!(s.contains(&Value::Int(4)));
    }
}
