//! Sorted first-order terms, patterns and substitutions.
//!
//! Terms are immutable values; everything else in the prover (tables, items,
//! assertions, commands) is built on top of them. Schematic variables (`?x`)
//! only appear in rule patterns, never in derived facts.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

/// Interned-ish sort name. Sorts are simple (no parameters).
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Sort(pub Arc<str>);

impl Sort {
    pub fn new(name: &str) -> Self {
        Sort(Arc::from(name))
    }
    pub fn name(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Sort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

pub fn sort_nat() -> Sort {
    Sort::new("nat")
}
pub fn sort_bool() -> Sort {
    Sort::new("bool")
}
pub fn sort_addr() -> Sort {
    Sort::new("addr")
}
pub fn sort_unit() -> Sort {
    Sort::new("unit")
}
pub fn sort_natlist() -> Sort {
    Sort::new("natlist")
}

pub type Name = Arc<str>;

/// Head constant of an application. `sort` is the result sort; argument
/// sorts live in the theory signature.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct FuncHead {
    pub name: Name,
    pub sort: Sort,
}

impl FuncHead {
    pub fn new(name: &str, sort: Sort) -> Self {
        FuncHead { name: Arc::from(name), sort }
    }
}

/// A simply-sorted first-order term.
///
/// Invariants: `App` heads are function constants and `args` is non-empty;
/// nullary constants are `Const`. A term is ground iff it contains no `SVar`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub enum Term {
    /// Schematic (pattern) variable `?x`.
    SVar(Name, Sort),
    /// Free variable or locally fixed constant introduced during a proof.
    Free(Name, Sort),
    /// Declared constant (nullary).
    Const(Name, Sort),
    /// Numeral with integer payload. Nat-sorted numerals are >= 0.
    Num(i64, Sort),
    App(FuncHead, Vec<Term>),
}

impl Term {
    pub fn svar(name: &str, sort: Sort) -> Term {
        Term::SVar(Arc::from(name), sort)
    }
    pub fn free(name: &str, sort: Sort) -> Term {
        Term::Free(Arc::from(name), sort)
    }
    pub fn cnst(name: &str, sort: Sort) -> Term {
        Term::Const(Arc::from(name), sort)
    }
    pub fn num(value: i64, sort: Sort) -> Term {
        debug_assert!(sort.name() != "nat" || value >= 0);
        Term::Num(value, sort)
    }
    pub fn nat(value: u64) -> Term {
        Term::Num(value as i64, sort_nat())
    }
    pub fn app(head: FuncHead, args: Vec<Term>) -> Term {
        debug_assert!(!args.is_empty());
        Term::App(head, args)
    }
    pub fn app1(name: &str, sort: Sort, a: Term) -> Term {
        Term::App(FuncHead::new(name, sort), vec![a])
    }
    pub fn app2(name: &str, sort: Sort, a: Term, b: Term) -> Term {
        Term::App(FuncHead::new(name, sort), vec![a, b])
    }

    pub fn sort(&self) -> &Sort {
        match self {
            Term::SVar(_, s) | Term::Free(_, s) | Term::Const(_, s) | Term::Num(_, s) => s,
            Term::App(h, _) => &h.sort,
        }
    }

    /// Node count; >= 1. The default item score.
    pub fn size(&self) -> u64 {
        match self {
            Term::App(_, args) => 1 + args.iter().map(Term::size).sum::<u64>(),
            _ => 1,
        }
    }

    pub fn is_ground(&self) -> bool {
        match self {
            Term::SVar(..) => false,
            Term::App(_, args) => args.iter().all(Term::is_ground),
            _ => true,
        }
    }

    /// Schematic variables, in first-occurrence order (no duplicates).
    pub fn svars(&self) -> Vec<(Name, Sort)> {
        let mut out = Vec::new();
        self.collect_svars(&mut out);
        out
    }

    fn collect_svars(&self, out: &mut Vec<(Name, Sort)>) {
        match self {
            Term::SVar(n, s) => {
                if !out.iter().any(|(m, _)| m == n) {
                    out.push((n.clone(), s.clone()));
                }
            }
            Term::App(_, args) => {
                for a in args {
                    a.collect_svars(out);
                }
            }
            _ => {}
        }
    }

    /// Free variables, in first-occurrence order.
    pub fn frees(&self) -> Vec<(Name, Sort)> {
        let mut out = Vec::new();
        self.collect_frees(&mut out);
        out
    }

    fn collect_frees(&self, out: &mut Vec<(Name, Sort)>) {
        match self {
            Term::Free(n, s) => {
                if !out.iter().any(|(m, _)| m == n) {
                    out.push((n.clone(), s.clone()));
                }
            }
            Term::App(_, args) => {
                for a in args {
                    a.collect_frees(out);
                }
            }
            _ => {}
        }
    }

    pub fn contains_free(&self, name: &str) -> bool {
        match self {
            Term::Free(n, _) => &**n == name,
            Term::App(_, args) => args.iter().any(|a| a.contains_free(name)),
            _ => false,
        }
    }

    /// Replace free variables by terms (used when instantiating lemma
    /// statements and procedure bodies; not capture-aware because the term
    /// language has no binders).
    pub fn subst_frees(&self, map: &BTreeMap<Name, Term>) -> Term {
        match self {
            Term::Free(n, _) => match map.get(n) {
                Some(t) => t.clone(),
                None => self.clone(),
            },
            Term::App(h, args) => {
                Term::App(h.clone(), args.iter().map(|a| a.subst_frees(map)).collect())
            }
            _ => self.clone(),
        }
    }

    /// Turn the given free variables into schematic variables (rule
    /// registration from proved lemmas).
    pub fn generalize(&self, vars: &[Name]) -> Term {
        match self {
            Term::Free(n, s) if vars.contains(n) => Term::SVar(n.clone(), s.clone()),
            Term::App(h, args) => {
                Term::App(h.clone(), args.iter().map(|a| a.generalize(vars)).collect())
            }
            _ => self.clone(),
        }
    }

    pub fn head_name(&self) -> Option<&str> {
        match self {
            Term::App(h, _) => Some(&h.name),
            Term::Const(n, _) => Some(n),
            _ => None,
        }
    }

    /// Destructure `~p`.
    pub fn as_negation(&self) -> Option<&Term> {
        match self {
            Term::App(h, args) if &*h.name == ops::NOT && args.len() == 1 => Some(&args[0]),
            _ => None,
        }
    }

    /// Destructure an equation `a = b` (any sort).
    pub fn as_equation(&self) -> Option<(&Term, &Term)> {
        match self {
            Term::App(h, args) if h.name.starts_with(ops::EQ_PREFIX) && args.len() == 2 => {
                Some((&args[0], &args[1]))
            }
            _ => None,
        }
    }

    pub fn as_conj(&self) -> Option<(&Term, &Term)> {
        match self {
            Term::App(h, args) if &*h.name == ops::AND && args.len() == 2 => {
                Some((&args[0], &args[1]))
            }
            _ => None,
        }
    }

    /// Flatten nested conjunctions into a list.
    pub fn conjuncts(&self) -> Vec<&Term> {
        match self.as_conj() {
            Some((a, b)) => {
                let mut v = a.conjuncts();
                v.extend(b.conjuncts());
                v
            }
            None => vec![self],
        }
    }
}

/// Canonical operator names. Overloaded operators carry their argument sort
/// after a `.` (e.g. `=.nat`); printing strips the suffix.
pub mod ops {
    pub const NOT: &str = "~";
    pub const AND: &str = "&";
    pub const EQ_PREFIX: &str = "=.";
    pub const LT: &str = "<";
    pub const LE: &str = "<=";
    pub const PLUS: &str = "+";
    pub const MINUS: &str = "-";
    pub const ITE_PREFIX: &str = "ite.";
    pub const TRUE: &str = "true";
    pub const FALSE: &str = "false";

    pub fn eq_name(sort: &str) -> String {
        format!("{EQ_PREFIX}{sort}")
    }
    pub fn ite_name(sort: &str) -> String {
        format!("{ITE_PREFIX}{sort}")
    }
    pub fn is_ite(name: &str) -> bool {
        name.starts_with(ITE_PREFIX)
    }
}

use crate::term::ops as op;

/// Smart constructors for the builtin operators.
pub fn mk_not(p: Term) -> Term {
    // ~~p collapses to p; keeps facts in a normal form the engine relies on.
    if let Some(inner) = p.as_negation() {
        return inner.clone();
    }
    Term::app1(op::NOT, sort_bool(), p)
}

pub fn mk_and(a: Term, b: Term) -> Term {
    Term::app2(op::AND, sort_bool(), a, b)
}

pub fn mk_eq(a: Term, b: Term) -> Term {
    let name = op::eq_name(a.sort().name());
    Term::app2(&name, sort_bool(), a, b)
}

pub fn mk_ne(a: Term, b: Term) -> Term {
    mk_not(mk_eq(a, b))
}

pub fn mk_lt(a: Term, b: Term) -> Term {
    Term::app2(op::LT, sort_bool(), a, b)
}

pub fn mk_le(a: Term, b: Term) -> Term {
    Term::app2(op::LE, sort_bool(), a, b)
}

pub fn mk_plus(a: Term, b: Term) -> Term {
    Term::app2(op::PLUS, sort_nat(), a, b)
}

pub fn mk_minus(a: Term, b: Term) -> Term {
    Term::app2(op::MINUS, sort_nat(), a, b)
}

pub fn mk_ite(c: Term, a: Term, b: Term) -> Term {
    let sort = a.sort().clone();
    let name = op::ite_name(sort.name());
    Term::App(FuncHead::new(&name, sort), vec![c, a, b])
}

pub fn mk_true() -> Term {
    Term::cnst(op::TRUE, sort_bool())
}

pub fn mk_false() -> Term {
    Term::cnst(op::FALSE, sort_bool())
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TermError {
    #[error("unbound schematic variable ?{0}")]
    Unbound(String),
    #[error("sort mismatch for ?{name}: bound to {bound}, expected {expected}")]
    SortMismatch { name: String, bound: Sort, expected: Sort },
}

/// Finite map from schematic variables to ground terms.
#[derive(Clone, Default, PartialEq, Eq, Debug)]
pub struct Subst {
    binding: BTreeMap<Name, Term>,
}

impl Subst {
    pub fn new() -> Self {
        Subst::default()
    }

    pub fn bind(&mut self, name: Name, t: Term) {
        debug_assert!(t.is_ground());
        self.binding.insert(name, t);
    }

    pub fn get(&self, name: &str) -> Option<&Term> {
        self.binding.get(name)
    }

    pub fn is_empty(&self) -> bool {
        self.binding.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Name, &Term)> {
        self.binding.iter()
    }

    /// Homomorphic application; errors on unbound schematics, checks sorts.
    pub fn apply(&self, pattern: &Term) -> Result<Term, TermError> {
        match pattern {
            Term::SVar(n, s) => match self.binding.get(n) {
                Some(t) => {
                    if t.sort() != s {
                        Err(TermError::SortMismatch {
                            name: n.to_string(),
                            bound: t.sort().clone(),
                            expected: s.clone(),
                        })
                    } else {
                        Ok(t.clone())
                    }
                }
                None => Err(TermError::Unbound(n.to_string())),
            },
            Term::App(h, args) => {
                let args = args.iter().map(|a| self.apply(a)).collect::<Result<Vec<_>, _>>()?;
                Ok(Term::App(h.clone(), args))
            }
            _ => Ok(pattern.clone()),
        }
    }
}

pub fn apply_subst(s: &Subst, pattern: &Term) -> Result<Term, TermError> {
    s.apply(pattern)
}

/// Plain first-order matching (no equalities): find a substitution taking
/// `pattern` to exactly `target`. Extends `subst` in place on success.
pub fn syntactic_match(pattern: &Term, target: &Term, subst: &mut Subst) -> bool {
    match (pattern, target) {
        (Term::SVar(n, s), t) => {
            if t.sort() != s {
                return false;
            }
            match subst.get(n) {
                Some(prev) => prev == t,
                None => {
                    subst.bind(n.clone(), t.clone());
                    true
                }
            }
        }
        (Term::App(h1, a1), Term::App(h2, a2)) => {
            h1 == h2
                && a1.len() == a2.len()
                && a1.iter().zip(a2).all(|(p, t)| syntactic_match(p, t, subst))
        }
        (p, t) => p == t,
    }
}

fn display_name(name: &str) -> &str {
    if let Some(rest) = name.strip_prefix(op::EQ_PREFIX) {
        let _ = rest;
        return "=";
    }
    if name.starts_with(op::ITE_PREFIX) {
        return "ite";
    }
    name
}

impl fmt::Display for Term {
    /// Deterministic printing: infix operators fully parenthesized,
    /// applications in `f(a, b)` form.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::SVar(n, _) => write!(f, "?{n}"),
            Term::Free(n, _) | Term::Const(n, _) => write!(f, "{}", display_name(n)),
            Term::Num(v, _) => write!(f, "{v}"),
            Term::App(h, args) => {
                let name = &*h.name;
                if name == op::NOT {
                    return write!(f, "~{}", Paren(&args[0]));
                }
                if args.len() == 2 {
                    let infix = match name {
                        op::AND => Some("&"),
                        op::LT => Some("<"),
                        op::LE => Some("<="),
                        op::PLUS => Some("+"),
                        op::MINUS => Some("-"),
                        _ if name.starts_with(op::EQ_PREFIX) => Some("="),
                        _ => None,
                    };
                    if let Some(sym) = infix {
                        return write!(f, "({} {} {})", args[0], sym, args[1]);
                    }
                }
                write!(f, "{}(", display_name(name))?;
                for (i, a) in args.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

/// Wraps atoms bare and applications in parens where the grammar needs it.
struct Paren<'a>(&'a Term);

impl fmt::Display for Paren<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Term::App(h, _) if &*h.name != op::NOT => write!(f, "{}", self.0),
            _ => write!(f, "{}", self.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(n: &str) -> Term {
        Term::cnst(n, sort_nat())
    }
    fn f1(x: Term) -> Term {
        Term::app1("f", sort_nat(), x)
    }

    #[test]
    fn size_counts_nodes() {
        assert_eq!(c("c").size(), 1);
        let t = Term::app2("f", sort_nat(), c("a"), c("b"));
        assert_eq!(t.size(), 3);
        // the proposition x <= y
        let p = mk_le(c("x"), c("y"));
        assert_eq!(p.size(), 3);
    }

    #[test]
    fn size_is_one_plus_arg_sizes() {
        let t = Term::app2("g", sort_nat(), f1(c("a")), c("b"));
        assert_eq!(t.size(), 1 + f1(c("a")).size() + c("b").size());
    }

    #[test]
    fn apply_subst_basics() {
        let mut s = Subst::new();
        s.bind(Arc::from("x"), c("a"));
        let p = f1(Term::svar("x", sort_nat()));
        assert_eq!(s.apply(&p).unwrap(), f1(c("a")));

        // identity on ground terms
        let empty = Subst::new();
        assert_eq!(empty.apply(&f1(c("a"))).unwrap(), f1(c("a")));

        // nonlinear occurrence
        let p2 = Term::app2("g", sort_nat(), Term::svar("x", sort_nat()), Term::svar("x", sort_nat()));
        assert_eq!(s.apply(&p2).unwrap(), Term::app2("g", sort_nat(), c("a"), c("a")));
    }

    #[test]
    fn apply_subst_unbound_errors_with_name() {
        let s = Subst::new();
        let p = f1(Term::svar("z", sort_nat()));
        assert_eq!(s.apply(&p), Err(TermError::Unbound("z".into())));
    }

    #[test]
    fn apply_subst_idempotent_on_ground_results() {
        let mut s = Subst::new();
        s.bind(Arc::from("x"), f1(c("a")));
        let p = Term::app2("g", sort_nat(), Term::svar("x", sort_nat()), c("b"));
        let once = s.apply(&p).unwrap();
        let twice = s.apply(&once).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn double_negation_collapses() {
        let p = mk_eq(c("a"), c("b"));
        assert_eq!(mk_not(mk_not(p.clone())), p);
    }

    #[test]
    fn conjunct_flattening() {
        let p = mk_and(mk_true(), mk_and(mk_false(), mk_true()));
        assert_eq!(p.conjuncts().len(), 3);
    }

    #[test]
    fn printing_is_stable() {
        let t = mk_ite(
            mk_eq(c("i"), c("j")),
            c("x"),
            Term::app2("nth", sort_nat(), Term::cnst("l", sort_natlist()), c("j")),
        );
        assert_eq!(t.to_string(), "ite((i = j), x, nth(l, j))");
        assert_eq!(mk_not(mk_le(c("a"), c("b"))).to_string(), "~(a <= b)");
    }
}
