//! Fuel-bounded evaluation of functional terms.
//!
//! This is the semantic anchor for the whole artifact: theory definitions,
//! bounded-forall predicates and the builtin list/map operations all get
//! their meaning here, and the fuzzing/enumeration oracles build on it.
//! Recursive definitions that fail to terminate surface as `OutOfFuel`,
//! which callers treat as inconclusive.

use std::collections::BTreeMap;

use crate::term::{ops, Name, Term};
use crate::theory_io::{DefKind, TheoryEnv};

/// Evaluation-time values. Richer than heap values: maps and partition
/// values exist only during reasoning about abstract states, never on the
/// heap.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug)]
pub enum SemVal {
    Nat(u64),
    Bool(bool),
    Unit,
    List(Vec<u64>),
    Data(Name, Vec<SemVal>),
    Map(BTreeMap<u64, u64>),
    /// Canonical partition of indices (union-find abstraction): entry i is
    /// the smallest index equivalent to i.
    Part(Vec<u64>),
}

#[derive(Debug, PartialEq, Eq)]
pub enum EvalErr {
    OutOfFuel,
    Other(String),
}

pub fn default_fuel() -> u64 {
    200_000
}

fn err<T>(m: impl Into<String>) -> Result<T, EvalErr> {
    Err(EvalErr::Other(m.into()))
}

/// Follow union-find parent pointers from `i` to a root. Errors out on a
/// cycle or an out-of-range hop chain longer than the array.
fn rep_of_native(l: &[u64], mut i: u64) -> Result<u64, EvalErr> {
    for _ in 0..=l.len() {
        let p = *l.get(i as usize).unwrap_or(&0);
        if p == i {
            return Ok(i);
        }
        i = p;
    }
    err("no root within bound (cycle)")
}

pub fn eval_term(
    env: &TheoryEnv,
    t: &Term,
    vars: &BTreeMap<Name, SemVal>,
    fuel: &mut u64,
) -> Result<SemVal, EvalErr> {
    if *fuel == 0 {
        return Err(EvalErr::OutOfFuel);
    }
    *fuel -= 1;
    match t {
        Term::Num(v, _) => {
            if *v < 0 {
                err(format!("negative numeral {v}"))
            } else {
                Ok(SemVal::Nat(*v as u64))
            }
        }
        Term::Free(n, _) | Term::SVar(n, _) => match vars.get(n) {
            Some(v) => Ok(v.clone()),
            None => err(format!("unbound variable {n}")),
        },
        Term::Const(n, _) => eval_app(env, n, &[], vars, fuel),
        Term::App(h, args) => {
            let mut vals = Vec::with_capacity(args.len());
            // ite short-circuits: evaluating the untaken branch could
            // diverge (recursive definitions guard themselves with ite)
            if ops::is_ite(&h.name) && args.len() == 3 {
                let c = eval_term(env, &args[0], vars, fuel)?;
                return match c {
                    SemVal::Bool(true) => eval_term(env, &args[1], vars, fuel),
                    SemVal::Bool(false) => eval_term(env, &args[2], vars, fuel),
                    other => err(format!("ite condition is {other:?}")),
                };
            }
            if &*h.name == ops::AND && args.len() == 2 {
                return match eval_term(env, &args[0], vars, fuel)? {
                    SemVal::Bool(false) => Ok(SemVal::Bool(false)),
                    SemVal::Bool(true) => eval_term(env, &args[1], vars, fuel),
                    other => err(format!("conjunct is {other:?}")),
                };
            }
            for a in args {
                vals.push(eval_term(env, a, vars, fuel)?);
            }
            eval_app(env, &h.name, &vals, vars, fuel)
        }
    }
}

fn two_nats(name: &str, vals: &[SemVal]) -> Result<(u64, u64), EvalErr> {
    match vals {
        [SemVal::Nat(a), SemVal::Nat(b)] => Ok((*a, *b)),
        _ => err(format!("{name}: expected two numbers, got {vals:?}")),
    }
}

fn eval_app(
    env: &TheoryEnv,
    name: &Name,
    vals: &[SemVal],
    _vars: &BTreeMap<Name, SemVal>,
    fuel: &mut u64,
) -> Result<SemVal, EvalErr> {
    match &**name {
        ops::TRUE if vals.is_empty() => return Ok(SemVal::Bool(true)),
        ops::FALSE if vals.is_empty() => return Ok(SemVal::Bool(false)),
        "unit" if vals.is_empty() => return Ok(SemVal::Unit),
        ops::NOT => {
            return match vals {
                [SemVal::Bool(b)] => Ok(SemVal::Bool(!b)),
                _ => err("~ expects a boolean"),
            }
        }
        ops::PLUS => {
            let (a, b) = two_nats("+", vals)?;
            return Ok(SemVal::Nat(a + b));
        }
        ops::MINUS => {
            let (a, b) = two_nats("-", vals)?;
            return Ok(SemVal::Nat(a.saturating_sub(b)));
        }
        ops::LT => {
            let (a, b) = two_nats("<", vals)?;
            return Ok(SemVal::Bool(a < b));
        }
        ops::LE => {
            let (a, b) = two_nats("<=", vals)?;
            return Ok(SemVal::Bool(a <= b));
        }
        "length" => {
            return match vals {
                [SemVal::List(xs)] => Ok(SemVal::Nat(xs.len() as u64)),
                _ => err("length expects a list"),
            }
        }
        "nth" => {
            return match vals {
                // out-of-range reads are underspecified; this model picks 0
                [SemVal::List(xs), SemVal::Nat(i)] => {
                    Ok(SemVal::Nat(*xs.get(*i as usize).unwrap_or(&0)))
                }
                _ => err("nth expects a list and an index"),
            }
        }
        "upd" => {
            return match vals {
                [SemVal::List(xs), SemVal::Nat(i), SemVal::Nat(x)] => {
                    let mut ys = xs.clone();
                    if (*i as usize) < ys.len() {
                        ys[*i as usize] = *x;
                    }
                    Ok(SemVal::List(ys))
                }
                _ => err("upd expects a list, an index and a value"),
            }
        }
        "replicate" => {
            return match vals {
                [SemVal::Nat(n), SemVal::Nat(x)] => Ok(SemVal::List(vec![*x; *n as usize])),
                _ => err("replicate expects two numbers"),
            }
        }
        "mempty" if vals.is_empty() => return Ok(SemVal::Map(BTreeMap::new())),
        "mupd" => {
            return match vals {
                [SemVal::Map(m), SemVal::Nat(k), SemVal::Nat(v)] => {
                    let mut m2 = m.clone();
                    m2.insert(*k, *v);
                    Ok(SemVal::Map(m2))
                }
                _ => err("mupd expects a map, a key and a value"),
            }
        }
        "mget" => {
            return match vals {
                [SemVal::Map(m), SemVal::Nat(k)] => Ok(match m.get(k) {
                    Some(v) => SemVal::Data(Name::from("osome"), vec![SemVal::Nat(*v)]),
                    None => SemVal::Data(Name::from("onone"), vec![]),
                }),
                _ => err("mget expects a map and a key"),
            }
        }
        "mjoin" => {
            return match vals {
                [SemVal::Map(a), SemVal::Map(b)] => {
                    let mut m = a.clone();
                    m.extend(b.iter().map(|(k, v)| (*k, *v)));
                    Ok(SemVal::Map(m))
                }
                _ => err("mjoin expects two maps"),
            }
        }
        "ufa_alpha" => {
            return match vals {
                [SemVal::List(l)] => {
                    let n = l.len();
                    let mut reps = Vec::with_capacity(n);
                    for i in 0..n {
                        reps.push(rep_of_native(l, i as u64)?);
                    }
                    // canonicalize: index i maps to the least j with the same root
                    let canon: Vec<u64> = (0..n)
                        .map(|i| {
                            (0..n).find(|&j| reps[j] == reps[i]).unwrap_or(i) as u64
                        })
                        .collect();
                    Ok(SemVal::Part(canon))
                }
                _ => err("ufa_alpha expects an array"),
            }
        }
        _ => {}
    }

    if name.starts_with(ops::EQ_PREFIX) {
        return match vals {
            [a, b] => Ok(SemVal::Bool(a == b)),
            _ => err("= expects two values"),
        };
    }

    // datatype constructor
    if env.ctor_sorts.contains_key(name) {
        return Ok(SemVal::Data(name.clone(), vals.to_vec()));
    }

    // generated size measure of a datatype
    for dd in env.datatypes.values() {
        if *name == dd.size_fn {
            return match vals {
                [v] => Ok(SemVal::Nat(data_size(v))),
                _ => err("size measure expects one value"),
            };
        }
    }

    // bounded-forall predicate
    if let Some(pred) = env.preds.get(name) {
        if vals.len() != pred.params.len() {
            return err(format!("{name}: arity mismatch"));
        }
        let mut inner: BTreeMap<Name, SemVal> = BTreeMap::new();
        for ((p, _), v) in pred.params.iter().zip(vals) {
            inner.insert(p.clone(), v.clone());
        }
        let bound = match eval_term(env, &pred.bound, &inner, fuel)? {
            SemVal::Nat(n) => n,
            other => return err(format!("{name}: bound is {other:?}")),
        };
        for i in 0..bound {
            inner.insert(pred.bound_var.clone(), SemVal::Nat(i));
            match eval_term(env, &pred.body, &inner, fuel)? {
                SemVal::Bool(true) => {}
                SemVal::Bool(false) => return Ok(SemVal::Bool(false)),
                other => return err(format!("{name}: body is {other:?}")),
            }
        }
        return Ok(SemVal::Bool(true));
    }

    // defined function: match equations in order
    if let Some(def) = env.defs.get(name) {
        let _ = DefKind::Plain;
        for eq in &def.equations {
            if eq.arg_patterns.len() != vals.len() {
                continue;
            }
            let mut binds: BTreeMap<Name, SemVal> = BTreeMap::new();
            if eq
                .arg_patterns
                .iter()
                .zip(vals)
                .all(|(p, v)| match_pattern(p, v, &mut binds))
            {
                return eval_term(env, &eq.rhs, &binds, fuel);
            }
        }
        return err(format!("{name}: no equation matches {vals:?}"));
    }

    err(format!("no interpretation for {name}"))
}

fn data_size(v: &SemVal) -> u64 {
    match v {
        SemVal::Data(_, fields) => 1 + fields.iter().map(data_size).sum::<u64>(),
        _ => 1,
    }
}

/// Match an argument pattern (schematic variable, numeral or constructor
/// application of patterns) against a value.
fn match_pattern(p: &Term, v: &SemVal, binds: &mut BTreeMap<Name, SemVal>) -> bool {
    match p {
        Term::SVar(n, _) | Term::Free(n, _) => match binds.get(n) {
            Some(prev) => prev == v,
            None => {
                binds.insert(n.clone(), v.clone());
                true
            }
        },
        Term::Num(k, _) => matches!(v, SemVal::Nat(n) if *n == *k as u64),
        Term::Const(n, _) => match v {
            SemVal::Data(c, fields) => c == n && fields.is_empty(),
            SemVal::Unit => &**n == "unit",
            SemVal::Bool(true) => &**n == ops::TRUE,
            SemVal::Bool(false) => &**n == ops::FALSE,
            _ => false,
        },
        Term::App(h, args) => match v {
            SemVal::Data(c, fields) => {
                c == &h.name
                    && fields.len() == args.len()
                    && args.iter().zip(fields).all(|(p, f)| match_pattern(p, f, binds))
            }
            _ => false,
        },
    }
}

/// Evaluate a closed proposition to a boolean.
pub fn eval_prop(
    env: &TheoryEnv,
    p: &Term,
    vars: &BTreeMap<Name, SemVal>,
) -> Result<bool, EvalErr> {
    match eval_term(env, p, vars, &mut default_fuel())? {
        SemVal::Bool(b) => Ok(b),
        other => err(format!("proposition evaluated to {other:?}")),
    }
}
