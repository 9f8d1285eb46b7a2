//! Separation-logic assertions, standard-form Hoare triples and frame
//! inference.
//!
//! Symbolic heap states are kept as flat factor lists in maximally expanded
//! form; matching a precondition against the state is up to AC of the
//! separating conjunction, table equivalence of argument terms, and
//! inductive folding of defined assertions. Pure parts never live in the
//! state: they are emitted as engine facts.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use thiserror::Error;

use crate::heap_lang::Command;
use crate::rule_steps::MeasureCheck;
use crate::tables::{Cong, TermBank};
use crate::term::{Name, Sort, Subst, Term};

/// Assertion AST. `Star` lists are flattened and free of `Emp` unless
/// singleton; `Applied` is a defined assertion constant.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Assertion {
    Emp,
    Pure(Term),
    PointsTo(Term, Term),
    PointsToArray(Term, Term),
    Star(Vec<Assertion>),
    ExistsA(Name, Sort, Box<Assertion>),
    TrueAssn,
    Applied(Name, Vec<Term>),
}

impl fmt::Display for Assertion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Assertion::Emp => write!(f, "emp"),
            Assertion::Pure(p) => write!(f, "pure({p})"),
            Assertion::PointsTo(a, v) => write!(f, "pts({a}, {v})"),
            Assertion::PointsToArray(a, l) => write!(f, "arr({a}, {l})"),
            Assertion::Star(fs) => {
                for (i, x) in fs.iter().enumerate() {
                    if i > 0 {
                        write!(f, " * ")?;
                    }
                    write!(f, "{x}")?;
                }
                Ok(())
            }
            Assertion::ExistsA(n, _, b) => write!(f, "exists {n}. {b}"),
            Assertion::TrueAssn => write!(f, "top"),
            Assertion::Applied(n, args) => {
                write!(f, "{n}(")?;
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

impl Assertion {
    /// Flatten into factors, splitting spatial factors from pure
    /// propositions and hoisting existential binders outward.
    pub fn split(&self) -> (Vec<Assertion>, Vec<Term>, Vec<(Name, Sort)>) {
        let mut spatial = Vec::new();
        let mut pure = Vec::new();
        let mut binders = Vec::new();
        self.split_into(&mut spatial, &mut pure, &mut binders);
        (spatial, pure, binders)
    }

    fn split_into(
        &self,
        spatial: &mut Vec<Assertion>,
        pure: &mut Vec<Term>,
        binders: &mut Vec<(Name, Sort)>,
    ) {
        match self {
            Assertion::Emp => {}
            Assertion::Pure(p) => pure.push(p.clone()),
            Assertion::Star(fs) => {
                for x in fs {
                    x.split_into(spatial, pure, binders);
                }
            }
            Assertion::ExistsA(n, s, b) => {
                binders.push((n.clone(), s.clone()));
                b.split_into(spatial, pure, binders);
            }
            other => spatial.push(other.clone()),
        }
    }

    pub fn subst_frees(&self, map: &BTreeMap<Name, Term>) -> Assertion {
        match self {
            Assertion::Emp => Assertion::Emp,
            Assertion::TrueAssn => Assertion::TrueAssn,
            Assertion::Pure(p) => Assertion::Pure(p.subst_frees(map)),
            Assertion::PointsTo(a, v) => {
                Assertion::PointsTo(a.subst_frees(map), v.subst_frees(map))
            }
            Assertion::PointsToArray(a, l) => {
                Assertion::PointsToArray(a.subst_frees(map), l.subst_frees(map))
            }
            Assertion::Star(fs) => {
                Assertion::Star(fs.iter().map(|x| x.subst_frees(map)).collect())
            }
            Assertion::ExistsA(n, s, b) => {
                let mut inner = map.clone();
                inner.remove(n);
                Assertion::ExistsA(n.clone(), s.clone(), Box::new(b.subst_frees(&inner)))
            }
            Assertion::Applied(n, args) => Assertion::Applied(
                n.clone(),
                args.iter().map(|a| a.subst_frees(map)).collect(),
            ),
        }
    }

    /// Turn the given free variables into schematic variables.
    pub fn generalize(&self, vars: &[Name]) -> Assertion {
        match self {
            Assertion::Emp => Assertion::Emp,
            Assertion::TrueAssn => Assertion::TrueAssn,
            Assertion::Pure(p) => Assertion::Pure(p.generalize(vars)),
            Assertion::PointsTo(a, v) => {
                Assertion::PointsTo(a.generalize(vars), v.generalize(vars))
            }
            Assertion::PointsToArray(a, l) => {
                Assertion::PointsToArray(a.generalize(vars), l.generalize(vars))
            }
            Assertion::Star(fs) => Assertion::Star(fs.iter().map(|x| x.generalize(vars)).collect()),
            Assertion::ExistsA(n, s, b) => {
                let inner: Vec<Name> = vars.iter().filter(|v| *v != n).cloned().collect();
                Assertion::ExistsA(n.clone(), s.clone(), Box::new(b.generalize(&inner)))
            }
            Assertion::Applied(n, args) => {
                Assertion::Applied(n.clone(), args.iter().map(|a| a.generalize(vars)).collect())
            }
        }
    }

    pub fn apply_subst(&self, s: &Subst) -> Result<Assertion, crate::term::TermError> {
        Ok(match self {
            Assertion::Emp => Assertion::Emp,
            Assertion::TrueAssn => Assertion::TrueAssn,
            Assertion::Pure(p) => Assertion::Pure(s.apply(p)?),
            Assertion::PointsTo(a, v) => Assertion::PointsTo(s.apply(a)?, s.apply(v)?),
            Assertion::PointsToArray(a, l) => {
                Assertion::PointsToArray(s.apply(a)?, s.apply(l)?)
            }
            Assertion::Star(fs) => Assertion::Star(
                fs.iter().map(|x| x.apply_subst(s)).collect::<Result<Vec<_>, _>>()?,
            ),
            Assertion::ExistsA(n, so, b) => {
                Assertion::ExistsA(n.clone(), so.clone(), Box::new(b.apply_subst(s)?))
            }
            Assertion::Applied(n, args) => Assertion::Applied(
                n.clone(),
                args.iter().map(|a| s.apply(a)).collect::<Result<Vec<_>, _>>()?,
            ),
        })
    }

    /// Schematic variables, in first-occurrence order.
    pub fn svars(&self) -> Vec<(Name, Sort)> {
        let mut out = Vec::new();
        match self {
            Assertion::Pure(p) => out.extend(p.svars()),
            Assertion::PointsTo(a, v) => {
                out.extend(a.svars());
                for x in v.svars() {
                    if !out.iter().any(|(n, _)| *n == x.0) {
                        out.push(x);
                    }
                }
            }
            Assertion::PointsToArray(a, l) => {
                out.extend(a.svars());
                for x in l.svars() {
                    if !out.iter().any(|(n, _)| *n == x.0) {
                        out.push(x);
                    }
                }
            }
            Assertion::Star(fs) => {
                for f in fs {
                    for x in f.svars() {
                        if !out.iter().any(|(n, _)| *n == x.0) {
                            out.push(x);
                        }
                    }
                }
            }
            Assertion::ExistsA(_, _, b) => out.extend(b.svars()),
            Assertion::Applied(_, args) => {
                for a in args {
                    for x in a.svars() {
                        if !out.iter().any(|(n, _)| *n == x.0) {
                            out.push(x);
                        }
                    }
                }
            }
            _ => {}
        }
        out
    }
}

/// Canonical factor order: by assertion head, then by printed form.
/// Deterministic frame search does left-to-right backtracking over this.
pub fn factor_key(a: &Assertion) -> (u8, String) {
    match a {
        Assertion::PointsTo(addr, _) => (0, addr.to_string()),
        Assertion::PointsToArray(addr, _) => (1, addr.to_string()),
        Assertion::Applied(n, args) => {
            (2, format!("{n}/{}", args.iter().map(|t| t.to_string()).collect::<Vec<_>>().join(",")))
        }
        Assertion::TrueAssn => (3, String::new()),
        Assertion::Emp => (4, String::new()),
        Assertion::Pure(p) => (5, p.to_string()),
        Assertion::Star(_) | Assertion::ExistsA(..) => (6, a.to_string()),
    }
}

pub fn sort_factors(factors: &mut Vec<Assertion>) {
    factors.sort_by(|a, b| factor_key(a).cmp(&factor_key(b)));
}

/// Build a flattened, canonically ordered Star.
pub fn star(factors: Vec<Assertion>) -> Assertion {
    fn flatten(fs: Vec<Assertion>, out: &mut Vec<Assertion>) {
        for f in fs {
            match f {
                Assertion::Star(inner) => flatten(inner, out),
                Assertion::Emp => {}
                other => out.push(other),
            }
        }
    }
    let mut flat = Vec::new();
    flatten(factors, &mut flat);
    sort_factors(&mut flat);
    match flat.len() {
        0 => Assertion::Emp,
        1 => flat.pop().unwrap(),
        _ => Assertion::Star(flat),
    }
}

/// How a command pattern of a standard-form triple matches program heads.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum CmdPattern {
    RefNew(Term),
    RefGet(Term),
    RefSet(Term, Term),
    ArrayNew(Term, Term),
    ArrayNth(Term, Term),
    ArrayUpd(Term, Term, Term),
    Return(Term),
    Call(Name, Vec<Term>),
}

impl CmdPattern {
    pub fn args(&self) -> Vec<&Term> {
        match self {
            CmdPattern::RefNew(a) | CmdPattern::RefGet(a) | CmdPattern::Return(a) => vec![a],
            CmdPattern::RefSet(a, b) | CmdPattern::ArrayNew(a, b) | CmdPattern::ArrayNth(a, b) => {
                vec![a, b]
            }
            CmdPattern::ArrayUpd(a, b, c) => vec![a, b, c],
            CmdPattern::Call(_, args) => args.iter().collect(),
        }
    }

    /// The argument terms of a concrete head command, when shapes agree.
    pub fn match_shape<'c>(&self, cmd: &'c Command) -> Option<Vec<&'c Term>> {
        match (self, cmd) {
            (CmdPattern::RefNew(_), Command::RefNew(a)) => Some(vec![a]),
            (CmdPattern::RefGet(_), Command::RefGet(a)) => Some(vec![a]),
            (CmdPattern::Return(_), Command::Return(a)) => Some(vec![a]),
            (CmdPattern::RefSet(..), Command::RefSet(a, b))
            | (CmdPattern::ArrayNew(..), Command::ArrayNew(a, b))
            | (CmdPattern::ArrayNth(..), Command::ArrayNth(a, b)) => Some(vec![a, b]),
            (CmdPattern::ArrayUpd(..), Command::ArrayUpd(a, b, c)) => Some(vec![a, b, c]),
            (CmdPattern::Call(n, pargs), Command::Call(m, cargs))
                if n == m && pargs.len() == cargs.len() =>
            {
                Some(cargs.iter().collect())
            }
            _ => None,
        }
    }
}

/// A Hoare triple in standard form: spatial and pure precondition parts,
/// a command pattern with schematic argument slots, and a postcondition
/// under the return binder and data variables.
#[derive(Clone, Debug)]
pub struct StdTriple {
    pub name: Name,
    pub spatial_pre: Vec<Assertion>,
    pub pure_pre: Vec<Term>,
    pub cmd: CmdPattern,
    pub ret: (Name, Sort),
    pub data_vars: Vec<(Name, Sort)>,
    pub spatial_post: Vec<Assertion>,
    pub pure_post: Vec<Term>,
    /// Present on induction-hypothesis triples.
    pub measure: Option<MeasureCheck>,
    pub ruleset: Option<Name>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StdFormError {
    #[error("pure precondition variable ?{0} does not occur in the spatial precondition or the command")]
    UncoveredPureVar(String),
    #[error("standard form: {0}")]
    Malformed(String),
}

/// Convert a declared triple (precondition assertion, command pattern,
/// return binder, postcondition assertion) into standard form.
///
/// Precondition existentials become ordinary schematic variables (a triple
/// with an existential precondition holds iff it holds for every witness);
/// postcondition existentials become data variables.
pub fn to_std_form(
    name: Name,
    premises: &[Term],
    pre: &Assertion,
    cmd: CmdPattern,
    ret: (Name, Sort),
    post: &Assertion,
    measure: Option<MeasureCheck>,
    ruleset: Option<Name>,
) -> Result<StdTriple, StdFormError> {
    let (spatial_pre, mut pure_pre, pre_binders) = pre.split();
    for (b, _) in &pre_binders {
        // hoisted to schematic scope; nothing to do beyond the name check
        if ret.0 == *b {
            return Err(StdFormError::Malformed(format!(
                "precondition binder {b} clashes with the return binder"
            )));
        }
    }
    pure_pre.splice(0..0, premises.iter().cloned());

    let (spatial_post, pure_post, data_vars) = post.split();

    // the paper's coverage assumption: pure precondition variables must be
    // bound by the spatial precondition or the command pattern
    let mut covered: Vec<Name> = Vec::new();
    for f in &spatial_pre {
        for (n, _) in f.svars() {
            covered.push(n);
        }
    }
    for a in cmd.args() {
        for (n, _) in a.svars() {
            covered.push(n);
        }
    }
    for p in &pure_pre {
        for (n, _) in p.svars() {
            if !covered.contains(&n) {
                return Err(StdFormError::UncoveredPureVar(n.to_string()));
            }
        }
    }

    Ok(StdTriple {
        name,
        spatial_pre,
        pure_pre,
        cmd,
        ret,
        data_vars,
        spatial_post,
        pure_post,
        measure,
        ruleset,
    })
}

/// One defining equation of an assertion constant:
/// `name(arg_patterns...) = body`. For inductively defined assertions the
/// equations are keyed by the constructor of one argument and must be
/// exhaustive and non-overlapping on it.
#[derive(Clone, Debug)]
pub struct AssnEquation {
    pub arg_patterns: Vec<Term>,
    pub body: Assertion,
}

#[derive(Clone, Debug)]
pub struct AssnDef {
    pub name: Name,
    pub params: Vec<Sort>,
    pub equations: Vec<AssnEquation>,
    /// Index of the argument the equations discriminate on, when inductive.
    pub case_arg: Option<usize>,
    pub ruleset: Option<Name>,
}

/// Access to the assertion definitions currently visible to matching.
pub trait AssnDefs {
    fn lookup(&self, name: &str) -> Option<&AssnDef>;
}

impl AssnDefs for BTreeMap<Name, AssnDef> {
    fn lookup(&self, name: &str) -> Option<&AssnDef> {
        self.get(name)
    }
}

/// A successful frame match: the substitution, the consumed state factor
/// indices (with multiplicity), and pure side conditions that the fold
/// introduced and the caller must verify hold (they are checked against
/// the tables before the match is reported, so they come back only as
/// evidence of what was used).
#[derive(Clone, Debug)]
pub struct FrameMatch {
    pub subst: Subst,
    pub consumed: Vec<usize>,
    pub frame: Vec<Assertion>,
}

/// Context for matching: congruence layer plus the fact lookup the fold
/// needs for pure factors.
pub struct MatchCtx<'a> {
    pub bank: &'a mut TermBank,
    pub cong: &'a mut Cong,
    pub defs: &'a dyn AssnDefs,
    /// Is this ground proposition known to hold here?
    pub holds: &'a dyn Fn(&TermBank, &Cong, &Term) -> bool,
    /// Fresh names for fold-local existentials that end up in the frame
    /// side; folds that would need them fail instead.
    pub fold_depth: usize,
}

fn ematch_term(ctx: &mut MatchCtx, pattern: &Term, target: &Term, subst: &Subst) -> Vec<Subst> {
    let inst = match subst.apply(pattern) {
        Ok(t) => Some(t),
        Err(_) => None,
    };
    let tid = ctx.bank.intern(target);
    ctx.cong.add_term(ctx.bank, tid);
    match inst {
        Some(ground) => {
            let gid = ctx.bank.intern(&ground);
            ctx.cong.add_term(ctx.bank, gid);
            if ctx.cong.equiv_ids(gid, tid) {
                vec![subst.clone()]
            } else {
                vec![]
            }
        }
        None => {
            // partially bound: E-match the pattern against the target class,
            // then keep only extensions consistent with the existing bindings
            let cands = ctx.cong.ematch_candidate(ctx.bank, pattern, tid);
            let mut out = Vec::new();
            for ext in cands {
                let mut merged = subst.clone();
                let mut ok = true;
                for (n, t) in ext.iter() {
                    match merged.get(n) {
                        Some(prev) => {
                            let a = ctx.bank.intern(prev);
                            ctx.cong.add_term(ctx.bank, a);
                            let b = ctx.bank.intern(t);
                            ctx.cong.add_term(ctx.bank, b);
                            if !ctx.cong.equiv_ids(a, b) {
                                ok = false;
                                break;
                            }
                        }
                        None => merged.bind(n.clone(), t.clone()),
                    }
                }
                if ok {
                    out.push(merged);
                }
            }
            out
        }
    }
}

/// Match one pattern factor against one ground state factor.
fn match_factor(
    ctx: &mut MatchCtx,
    pattern: &Assertion,
    state: &Assertion,
    subst: &Subst,
) -> Vec<Subst> {
    match (pattern, state) {
        (Assertion::PointsTo(pa, pv), Assertion::PointsTo(sa, sv)) => {
            let mut out = Vec::new();
            for s1 in ematch_term(ctx, pa, sa, subst) {
                out.extend(ematch_term(ctx, pv, sv, &s1));
            }
            out
        }
        (Assertion::PointsToArray(pa, pl), Assertion::PointsToArray(sa, sl)) => {
            let mut out = Vec::new();
            for s1 in ematch_term(ctx, pa, sa, subst) {
                out.extend(ematch_term(ctx, pl, sl, &s1));
            }
            out
        }
        (Assertion::Applied(pn, pargs), Assertion::Applied(sn, sargs)) if pn == sn => {
            let mut substs = vec![subst.clone()];
            for (p, s) in pargs.iter().zip(sargs) {
                let mut next = Vec::new();
                for su in &substs {
                    next.extend(ematch_term(ctx, p, s, su));
                }
                substs = next;
                if substs.is_empty() {
                    break;
                }
            }
            substs
        }
        _ => vec![],
    }
}

/// Match a multiset of pattern factors against a sub-multiset of the state
/// factors, up to AC, table equivalence and inductive folding. Returns every
/// distinct solution (first solution in canonical order is the one the
/// engine applies).
pub fn frame_match(
    ctx: &mut MatchCtx,
    patterns: &[Assertion],
    state: &[Assertion],
) -> Vec<FrameMatch> {
    let mut results = Vec::new();
    let mut used = vec![false; state.len()];
    let subst = Subst::new();
    match_rest(ctx, patterns, 0, state, &mut used, &subst, &mut results, 0);
    // frame = unmatched factors
    results
        .into_iter()
        .map(|(subst, consumed)| {
            let frame = state
                .iter()
                .enumerate()
                .filter(|(i, _)| !consumed.contains(i))
                .map(|(_, f)| f.clone())
                .collect();
            FrameMatch { subst, consumed, frame }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn match_rest(
    ctx: &mut MatchCtx,
    patterns: &[Assertion],
    at: usize,
    state: &[Assertion],
    used: &mut Vec<bool>,
    subst: &Subst,
    results: &mut Vec<(Subst, Vec<usize>)>,
    depth: usize,
) {
    if at == patterns.len() {
        let consumed: Vec<usize> = used
            .iter()
            .enumerate()
            .filter(|(_, u)| **u)
            .map(|(i, _)| i)
            .collect();
        results.push((subst.clone(), consumed));
        return;
    }
    let pattern = &patterns[at];
    if matches!(pattern, Assertion::TrueAssn) {
        // absorbs nothing during matching; leftover absorption is the
        // entailment finisher's business
        match_rest(ctx, patterns, at + 1, state, used, subst, results, depth);
        return;
    }
    if let Assertion::Pure(p) = pattern {
        // pure factor inside a fold: must already hold
        if let Ok(ground) = subst.apply(p) {
            if (ctx.holds)(ctx.bank, ctx.cong, &ground) {
                match_rest(ctx, patterns, at + 1, state, used, subst, results, depth);
            } else {
                // try to solve `x = pattern` pure factors by matching the
                // equation against the known class of the ground side
                for ext in solve_pure_equation(ctx, p, subst) {
                    match_rest(ctx, patterns, at + 1, state, used, &ext, results, depth);
                }
            }
        } else {
            for ext in solve_pure_equation(ctx, p, subst) {
                match_rest(ctx, patterns, at + 1, state, used, &ext, results, depth);
            }
        }
        return;
    }

    // direct matches against unused state factors
    for i in 0..state.len() {
        if used[i] {
            continue;
        }
        let exts = match_factor(ctx, pattern, &state[i], subst);
        if !exts.is_empty() {
            used[i] = true;
            for ext in exts {
                match_rest(ctx, patterns, at + 1, state, used, &ext, results, depth);
            }
            used[i] = false;
        }
    }

    // folding: an Applied pattern may match a set of expanded factors that
    // assemble into one definitional instance
    if let Assertion::Applied(name, pargs) = pattern {
        if depth > state.len() + 2 {
            return;
        }
        if let Some(def) = ctx.defs.lookup(name) {
            let equations = def.equations.clone();
            for (eq_idx, eq) in equations.iter().enumerate() {
                fold_match(
                    ctx, pattern, pargs, eq, eq_idx, patterns, at, state, used, subst, results,
                    depth,
                );
            }
        }
    }
}

/// A pure factor `?x = t` (or `t = ?x`) with `?x` unbound can be solved by
/// E-matching the variable side against the ground side's class.
fn solve_pure_equation(ctx: &mut MatchCtx, p: &Term, subst: &Subst) -> Vec<Subst> {
    let Some((l, r)) = p.as_equation() else { return vec![] };
    let try_side = |ctx: &mut MatchCtx, var_side: &Term, ground_side: &Term, subst: &Subst| {
        match subst.apply(ground_side) {
            Ok(g) => ematch_term(ctx, var_side, &g, subst)
                .into_iter()
                .filter(|ext| {
                    // the equation must now actually hold
                    match (ext.apply(var_side), ext.apply(ground_side)) {
                        (Ok(a), Ok(b)) => {
                            let ia = ctx.bank.intern(&a);
                            ctx.cong.add_term(ctx.bank, ia);
                            let ib = ctx.bank.intern(&b);
                            ctx.cong.add_term(ctx.bank, ib);
                            ctx.cong.equiv_ids(ia, ib)
                        }
                        _ => false,
                    }
                })
                .collect::<Vec<_>>(),
            Err(_) => vec![],
        }
    };
    let mut out = try_side(ctx, l, r, subst);
    if out.is_empty() {
        out = try_side(ctx, r, l, subst);
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn fold_match(
    ctx: &mut MatchCtx,
    _pattern: &Assertion,
    pargs: &[Term],
    eq: &AssnEquation,
    eq_idx: usize,
    patterns: &[Assertion],
    at: usize,
    state: &[Assertion],
    used: &mut Vec<bool>,
    subst: &Subst,
    results: &mut Vec<(Subst, Vec<usize>)>,
    depth: usize,
) {
    // freshen the equation's schematic variables
    let mut rename: BTreeMap<Name, Term> = BTreeMap::new();
    let tag = format!("f{depth}e{eq_idx}");
    let freshen = |t: &Term, rename: &mut BTreeMap<Name, Term>| -> Term {
        fn go(t: &Term, tag: &str, rename: &mut BTreeMap<Name, Term>) -> Term {
            match t {
                Term::SVar(n, s) => {
                    let fresh = Name::from(format!("{n}%{tag}"));
                    rename.insert(n.clone(), Term::SVar(fresh.clone(), s.clone()));
                    Term::SVar(fresh, s.clone())
                }
                Term::App(h, args) => Term::App(
                    h.clone(),
                    args.iter().map(|a| go(a, tag, rename)).collect(),
                ),
                other => other.clone(),
            }
        }
        go(t, &tag, rename)
    };

    let fresh_largs: Vec<Term> =
        eq.arg_patterns.iter().map(|p| freshen(p, &mut rename)).collect();

    // unify pattern args with the (freshened) equation left-hand args.
    // A pattern variable meeting a structured lhs argument is deferred and
    // bound after the equation's own variables are known.
    let mut deferred: Vec<(Name, Term)> = Vec::new();
    let mut substs = vec![subst.clone()];
    for (parg, larg) in pargs.iter().zip(&fresh_largs) {
        let mut next = Vec::new();
        for su in &substs {
            match su.apply(parg) {
                Ok(ground) => {
                    // match the equation pattern against the known class
                    next.extend(ematch_term(ctx, larg, &ground, su));
                }
                Err(_) => {
                    // pattern side unbound; it will be the instantiated lhs
                    if let Term::SVar(pn, _) = parg {
                        if !deferred.iter().any(|(n, _)| n == pn) {
                            deferred.push((pn.clone(), larg.clone()));
                        }
                        next.push(su.clone());
                    }
                }
            }
        }
        substs = next;
        if substs.is_empty() {
            return;
        }
    }

    // body factors of the equation, with the same renaming applied
    let body = rename_assertion(&eq.body, &|t| {
        let mut r2 = rename.clone();
        freshen_with(t, &tag, &mut r2)
    });
    let (body_spatial, body_pure, body_binders) = body.split();
    // fold-local existentials also become match variables
    let _ = body_binders;

    let mut sub_patterns: Vec<Assertion> = Vec::new();
    for p in &body_pure {
        sub_patterns.push(Assertion::Pure(p.clone()));
    }
    sub_patterns.extend(body_spatial);

    for su in substs {
        // match the equation body against the remaining state
        let mut inner_results = Vec::new();
        match_rest(
            ctx,
            &sub_patterns,
            0,
            state,
            used,
            &su,
            &mut inner_results,
            depth + 1,
        );
        for (inner_subst, consumed) in inner_results {
            // resolve deferred pattern bindings
            let mut finished = inner_subst.clone();
            let mut ok = true;
            for (pn, larg) in &deferred {
                match inner_subst.apply(larg) {
                    Ok(t) => {
                        if let Some(prev) = finished.get(pn) {
                            let a = ctx.bank.intern(prev);
                            ctx.cong.add_term(ctx.bank, a);
                            let b = ctx.bank.intern(&t);
                            ctx.cong.add_term(ctx.bank, b);
                            if !ctx.cong.equiv_ids(a, b) {
                                ok = false;
                                break;
                            }
                        } else {
                            finished.bind(pn.clone(), t);
                        }
                    }
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok {
                continue;
            }
            // continue with the remaining outer patterns; mark consumed
            let mut used2 = vec![false; state.len()];
            for &i in &consumed {
                used2[i] = true;
            }
            // also keep factors used by outer matching so far
            for (i, u) in used.iter().enumerate() {
                if *u {
                    used2[i] = true;
                }
            }
            match_rest(ctx, patterns, at + 1, state, &mut used2, &finished, results, depth);
        }
    }
}

fn freshen_with(t: &Term, tag: &str, rename: &mut BTreeMap<Name, Term>) -> Term {
    match t {
        Term::SVar(n, s) => match rename.get(n) {
            Some(r) => r.clone(),
            None => {
                let fresh = Name::from(format!("{n}%{tag}"));
                let r = Term::SVar(fresh, s.clone());
                rename.insert(n.clone(), r.clone());
                r
            }
        },
        Term::App(h, args) => {
            Term::App(h.clone(), args.iter().map(|a| freshen_with(a, tag, rename)).collect())
        }
        other => other.clone(),
    }
}

fn rename_assertion(a: &Assertion, f: &dyn Fn(&Term) -> Term) -> Assertion {
    match a {
        Assertion::Emp => Assertion::Emp,
        Assertion::TrueAssn => Assertion::TrueAssn,
        Assertion::Pure(p) => Assertion::Pure(f(p)),
        Assertion::PointsTo(x, v) => Assertion::PointsTo(f(x), f(v)),
        Assertion::PointsToArray(x, l) => Assertion::PointsToArray(f(x), f(l)),
        Assertion::Star(fs) => Assertion::Star(fs.iter().map(|x| rename_assertion(x, f)).collect()),
        Assertion::ExistsA(n, s, b) => {
            // existentials inside definition bodies are match variables; they
            // were converted to schematics by the loader, so plain renaming
            // is enough here
            Assertion::ExistsA(n.clone(), s.clone(), Box::new(rename_assertion(b, f)))
        }
        Assertion::Applied(n, args) => Assertion::Applied(n.clone(), args.iter().map(f).collect()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::{mk_eq, sort_addr, sort_nat, Term};

    fn addr(n: &str) -> Term {
        Term::free(n, sort_addr())
    }
    fn nat(n: &str) -> Term {
        Term::free(n, sort_nat())
    }
    fn sv(n: &str, s: Sort) -> Term {
        Term::svar(n, s)
    }

    struct NoDefs;
    impl AssnDefs for NoDefs {
        fn lookup(&self, _: &str) -> Option<&AssnDef> {
            None
        }
    }

    fn never_holds(_: &TermBank, _: &Cong, _: &Term) -> bool {
        false
    }

    #[test]
    fn direct_frame_match() {
        let mut bank = TermBank::new();
        let mut cong = Cong::new();
        let holds = never_holds;
        let mut ctx =
            MatchCtx { bank: &mut bank, cong: &mut cong, defs: &NoDefs, holds: &holds, fold_depth: 0 };
        let pattern = vec![Assertion::PointsTo(sv("p", sort_addr()), sv("v", sort_nat()))];
        let state = vec![
            Assertion::PointsTo(addr("q"), Term::nat(5)),
            Assertion::PointsTo(addr("p"), Term::nat(3)),
        ];
        let ms = frame_match(&mut ctx, &pattern, &state);
        assert_eq!(ms.len(), 2); // matches either cell
        // canonical order of the state was given; first solution takes q
        assert_eq!(ms[0].frame.len(), 1);
    }

    #[test]
    fn distinct_resources_do_not_merge() {
        let mut bank = TermBank::new();
        let mut cong = Cong::new();
        let holds = never_holds;
        let mut ctx =
            MatchCtx { bank: &mut bank, cong: &mut cong, defs: &NoDefs, holds: &holds, fold_depth: 0 };
        let p = vec![
            Assertion::PointsTo(sv("p", sort_addr()), sv("v", sort_nat())),
            Assertion::PointsTo(sv("p", sort_addr()), sv("w", sort_nat())),
        ];
        let state = vec![Assertion::PointsTo(addr("p"), Term::nat(3))];
        let ms = frame_match(&mut ctx, &p, &state);
        assert!(ms.is_empty());
    }

    #[test]
    fn match_is_up_to_table_equivalence() {
        let mut bank = TermBank::new();
        let mut cong = Cong::new();
        let a = bank.intern(&addr("a"));
        cong.add_term(&bank, a);
        let b = bank.intern(&addr("b"));
        cong.add_term(&bank, b);
        cong.merge(&bank, a, b);
        cong.drain_events();
        let holds = never_holds;
        let mut ctx =
            MatchCtx { bank: &mut bank, cong: &mut cong, defs: &NoDefs, holds: &holds, fold_depth: 0 };
        let pattern = vec![Assertion::PointsTo(addr("a"), sv("v", sort_nat()))];
        let state = vec![Assertion::PointsTo(addr("b"), nat("x"))];
        let ms = frame_match(&mut ctx, &pattern, &state);
        assert_eq!(ms.len(), 1);
        assert_eq!(ms[0].subst.get("v"), Some(&nat("x")));
    }

    #[test]
    fn std_form_splits_and_checks_coverage() {
        let pre = star(vec![
            Assertion::PointsTo(sv("p", sort_addr()), sv("a", sort_nat())),
            Assertion::Pure(crate::term::mk_lt(Term::nat(0), sv("a", sort_nat()))),
        ]);
        let post = Assertion::ExistsA(
            Name::from("r2"),
            sort_nat(),
            Box::new(Assertion::Pure(mk_eq(
                Term::free("r", sort_nat()),
                sv("a", sort_nat()),
            ))),
        );
        let t = to_std_form(
            Name::from("t"),
            &[],
            &pre,
            CmdPattern::RefGet(sv("p", sort_addr())),
            (Name::from("r"), sort_nat()),
            &post,
            None,
            None,
        )
        .unwrap();
        assert_eq!(t.spatial_pre.len(), 1);
        assert_eq!(t.pure_pre.len(), 1);
        assert_eq!(t.data_vars, vec![(Name::from("r2"), sort_nat())]);

        // uncovered pure variable is rejected
        let bad = to_std_form(
            Name::from("bad"),
            &[],
            &Assertion::Pure(crate::term::mk_lt(Term::nat(0), sv("z", sort_nat()))),
            CmdPattern::RefGet(sv("p", sort_addr())),
            (Name::from("r"), sort_nat()),
            &Assertion::Emp,
            None,
            None,
        );
        assert_eq!(bad.unwrap_err(), StdFormError::UncoveredPureVar("z".into()));
    }

    #[test]
    fn star_flattens_and_orders() {
        let s = star(vec![
            Assertion::Pure(mk_eq(nat("x"), nat("y"))),
            Assertion::Star(vec![Assertion::PointsTo(addr("b"), nat("v")), Assertion::Emp]),
            Assertion::PointsTo(addr("a"), nat("u")),
        ]);
        match s {
            Assertion::Star(fs) => {
                assert_eq!(fs.len(), 3);
                assert!(matches!(&fs[0], Assertion::PointsTo(a, _) if a == &addr("a")));
            }
            other => panic!("expected star, got {other}"),
        }
    }
}
