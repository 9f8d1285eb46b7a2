//! Natural-number reasoning: well-formed normalization of +/- expressions
//! and the shapes feeding difference logic over NAT_ORDER items.
//!
//! Subtraction on nat truncates at zero, so normalization is only valid
//! when every subtraction subterm `u - v` carries a discharged obligation
//! `v <= u`. The normal form is a signed multiset of atoms plus a constant;
//! rendering is deterministic (atoms sorted by printed form, subtraction
//! applied last).

use std::collections::BTreeMap;

use crate::term::{
    self, mk_le, mk_lt, mk_minus, mk_plus, ops, sort_nat, Term,
};

/// Signed multiset of atoms plus an integer constant. No atom appears on
/// both sides; atoms are not themselves +/- applications.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NatNormalForm {
    pub positive: BTreeMap<Term, u64>,
    pub negative: BTreeMap<Term, u64>,
    pub constant: i64,
}

impl NatNormalForm {
    fn constant(k: i64) -> Self {
        NatNormalForm { positive: BTreeMap::new(), negative: BTreeMap::new(), constant: k }
    }

    fn atom(t: Term) -> Self {
        let mut positive = BTreeMap::new();
        positive.insert(t, 1);
        NatNormalForm { positive, negative: BTreeMap::new(), constant: 0 }
    }

    fn add_atom(&mut self, t: Term, coeff: i64) {
        let (this, other) = if coeff >= 0 {
            (&mut self.positive, &mut self.negative)
        } else {
            (&mut self.negative, &mut self.positive)
        };
        let mut remaining = coeff.unsigned_abs();
        if let Some(c) = other.get_mut(&t) {
            let cancel = remaining.min(*c);
            *c -= cancel;
            remaining -= cancel;
            if *c == 0 {
                other.remove(&t);
            }
        }
        if remaining > 0 {
            *this.entry(t).or_insert(0) += remaining;
        }
    }

    fn combine(&mut self, other: &NatNormalForm, sign: i64) {
        self.constant += sign * other.constant;
        for (t, c) in &other.positive {
            self.add_atom(t.clone(), sign * (*c as i64));
        }
        for (t, c) in &other.negative {
            self.add_atom(t.clone(), -sign * (*c as i64));
        }
    }

    /// Same atoms on both sides? Then the two expressions differ by
    /// `self.constant - other.constant` everywhere.
    pub fn same_atoms(&self, other: &NatNormalForm) -> bool {
        self.positive == other.positive && self.negative == other.negative
    }
}

/// Result of normalizing a nat term: the normal form, the subtraction
/// obligations of the input (in occurrence order), the equation rewriting
/// the input to the rendered normal form, and the obligations of the
/// rendered term itself.
#[derive(Clone, Debug)]
pub struct Normalized {
    pub nf: NatNormalForm,
    pub obligations: Vec<Term>,
    pub equation: Term,
    pub render_obligations: Vec<Term>,
}

fn normalize_rec(t: &Term, nf: &mut NatNormalForm, sign: i64, obligations: &mut Vec<Term>) {
    match t {
        Term::Num(k, _) => nf.constant += sign * k,
        Term::App(h, args) if &*h.name == ops::PLUS && args.len() == 2 => {
            normalize_rec(&args[0], nf, sign, obligations);
            normalize_rec(&args[1], nf, sign, obligations);
        }
        Term::App(h, args) if &*h.name == ops::MINUS && args.len() == 2 => {
            let ob = mk_le(args[1].clone(), args[0].clone());
            if !obligations.contains(&ob) {
                obligations.push(ob);
            }
            normalize_rec(&args[0], nf, sign, obligations);
            normalize_rec(&args[1], nf, -sign, obligations);
        }
        other => nf.add_atom(other.clone(), sign),
    }
}

/// Render a normal form: sum of positive atoms (coefficient-expanded,
/// sorted) plus the constant, with one final nat subtraction of the
/// negative part when present.
pub fn render(nf: &NatNormalForm) -> (Term, Vec<Term>) {
    let side = |atoms: &BTreeMap<Term, u64>, konst: i64| -> Option<Term> {
        let mut parts: Vec<Term> = Vec::new();
        for (t, c) in atoms {
            for _ in 0..*c {
                parts.push(t.clone());
            }
        }
        if konst > 0 {
            parts.push(Term::nat(konst as u64));
        }
        parts.into_iter().reduce(mk_plus)
    };
    let pos = side(&nf.positive, nf.constant.max(0));
    let neg = side(&nf.negative, (-nf.constant).max(0));
    match (pos, neg) {
        (None, None) => (Term::nat(0), vec![]),
        (Some(p), None) => (p, vec![]),
        (None, Some(n)) => {
            let zero = Term::nat(0);
            (mk_minus(zero.clone(), n.clone()), vec![mk_le(n, zero)])
        }
        (Some(p), Some(n)) => {
            let ob = mk_le(n.clone(), p.clone());
            (mk_minus(p, n), vec![ob])
        }
    }
}

/// Normalize a nat expression over + and -. The equation
/// `t = render(normal form)` is valid under every assignment satisfying
/// the returned obligations.
pub fn normalize_nat(t: &Term) -> Normalized {
    debug_assert_eq!(t.sort(), &sort_nat());
    let mut nf = NatNormalForm::constant(0);
    let mut obligations = Vec::new();
    normalize_rec(t, &mut nf, 1, &mut obligations);
    let (rendered, render_obligations) = render(&nf);
    let equation = term::mk_eq(t.clone(), rendered);
    Normalized { nf, obligations, equation, render_obligations }
}

/// Whether the step that compares two nat terms should consider this pair
/// at all: at least one side must contain arithmetic structure.
pub fn has_arith(t: &Term) -> bool {
    match t {
        Term::Num(..) => true,
        Term::App(h, args) => {
            (&*h.name == ops::PLUS || &*h.name == ops::MINUS) && args.len() == 2
        }
        _ => false,
    }
}

pub fn contains_minus(t: &Term) -> bool {
    match t {
        Term::App(h, args) => {
            (&*h.name == ops::MINUS && args.len() == 2) || args.iter().any(contains_minus)
        }
        _ => false,
    }
}

/// A NAT_ORDER triple `<lhs, rhs, n>`, meaning `lhs <= rhs + n`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NatOrderTriple {
    pub lhs: Term,
    pub rhs: Term,
    pub n: i64,
}

/// The distinguished atom numeral literals are related to.
pub fn zero_atom() -> Term {
    Term::nat(0)
}

/// One side of an inequality decomposed as `atom + offset`; `None` means a
/// bare numeral (related to the ZERO atom). `gated` records a truncating
/// subtraction whose lower bound must be discharged before the
/// decomposition is exact.
#[derive(Clone, Debug, PartialEq, Eq)]
struct SideShape {
    atom: Option<Term>,
    offset: i64,
    gated: Option<Term>, // condition k <= atom for `atom - k`
}

fn decompose_side(t: &Term) -> Option<SideShape> {
    match t {
        Term::Num(k, s) if s.name() == "nat" => {
            Some(SideShape { atom: None, offset: *k, gated: None })
        }
        Term::App(h, args) if &*h.name == ops::PLUS && args.len() == 2 => {
            let a = decompose_side(&args[0])?;
            let b = decompose_side(&args[1])?;
            let atom = match (&a.atom, &b.atom) {
                (Some(x), None) => Some(x.clone()),
                (None, Some(y)) => Some(y.clone()),
                (None, None) => None,
                (Some(_), Some(_)) => return None,
            };
            if a.gated.is_some() || b.gated.is_some() {
                return None;
            }
            Some(SideShape { atom, offset: a.offset + b.offset, gated: None })
        }
        Term::App(h, args) if &*h.name == ops::MINUS && args.len() == 2 => {
            // atom - k only
            if let (Some(inner), Term::Num(k, _)) = (decompose_side(&args[0]), &args[1]) {
                if inner.gated.is_none() {
                    let gate = inner
                        .atom
                        .clone()
                        .map(|a| mk_le(Term::nat(*k as u64), a));
                    return Some(SideShape {
                        atom: inner.atom,
                        offset: inner.offset - k,
                        gated: gate,
                    });
                }
            }
            None
        }
        other if other.sort().name() == "nat" => {
            Some(SideShape { atom: Some(other.clone()), offset: 0, gated: None })
        }
        _ => None,
    }
}

fn atom_or_zero(a: Option<Term>) -> Term {
    a.unwrap_or_else(zero_atom)
}

/// A triple to ingest plus the conditions that must be discharged first
/// (truncating subtraction on the larger side).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GatedTriple {
    pub triple: NatOrderTriple,
    pub gates: Vec<Term>,
}

fn shape_le(l: &Term, r: &Term, extra: i64) -> Option<GatedTriple> {
    let ls = decompose_side(l)?;
    let rs = decompose_side(r)?;
    if ls.atom.is_none() && rs.atom.is_none() {
        return None;
    }
    // l_atom + l_off <= r_atom + r_off + extra
    // A subtraction on the left is sound unconditionally (truncation only
    // weakens the left side); on the right it needs its gate.
    let mut gates = Vec::new();
    if let Some(g) = rs.gated {
        gates.push(g);
    }
    Some(GatedTriple {
        triple: NatOrderTriple {
            lhs: atom_or_zero(ls.atom),
            rhs: atom_or_zero(rs.atom),
            n: rs.offset + extra - ls.offset,
        },
        gates,
    })
}

/// Decompose a fact into NAT_ORDER triples. `a = b` yields both
/// directions; negated comparisons flip; `~(x = 0)` gives `1 <= x`.
/// Non-conforming shapes yield nothing (the fact stays an ordinary item).
pub fn ingest_inequality(fact: &Term) -> Vec<GatedTriple> {
    let mut out = Vec::new();
    let nat_sorted = |t: &Term| t.sort().name() == "nat";
    match fact {
        Term::App(h, args) if &*h.name == ops::LE && args.len() == 2 => {
            out.extend(shape_le(&args[0], &args[1], 0));
        }
        Term::App(h, args) if &*h.name == ops::LT && args.len() == 2 => {
            out.extend(shape_le(&args[0], &args[1], -1));
        }
        Term::App(h, args) if h.name.starts_with(ops::EQ_PREFIX) && args.len() == 2
            && nat_sorted(&args[0]) =>
        {
            out.extend(shape_le(&args[0], &args[1], 0));
            out.extend(shape_le(&args[1], &args[0], 0));
        }
        _ => {
            if let Some(inner) = fact.as_negation() {
                match inner {
                    Term::App(h, args) if &*h.name == ops::LE && args.len() == 2 => {
                        // ~(a <= b)  <=>  b < a
                        out.extend(shape_le(&args[1], &args[0], -1));
                    }
                    Term::App(h, args) if &*h.name == ops::LT && args.len() == 2 => {
                        // ~(a < b)  <=>  b <= a
                        out.extend(shape_le(&args[1], &args[0], 0));
                    }
                    Term::App(h, args)
                        if h.name.starts_with(ops::EQ_PREFIX)
                            && args.len() == 2
                            && nat_sorted(&args[0]) =>
                    {
                        // over nat, ~(x = 0) gives 1 <= x
                        match (&args[0], &args[1]) {
                            (x, Term::Num(0, _)) | (Term::Num(0, _), x) => {
                                out.extend(shape_le(&Term::nat(1), x, 0));
                            }
                            _ => {}
                        }
                    }
                    _ => {}
                }
            }
        }
    }
    out
}

/// Parse a fully instantiated condition into a query against the
/// difference-logic closure: evidence `lhs <= rhs + n` suffices for the
/// condition (truncating subtractions are folded conservatively, which is
/// sound for queries in both positions).
pub fn order_query_shape(cond: &Term) -> Option<NatOrderTriple> {
    let (l, r, extra) = match cond {
        Term::App(h, args) if &*h.name == ops::LE && args.len() == 2 => {
            (&args[0], &args[1], 0)
        }
        Term::App(h, args) if &*h.name == ops::LT && args.len() == 2 => {
            (&args[0], &args[1], -1)
        }
        _ => return None,
    };
    let ls = decompose_side(l)?;
    let rs = decompose_side(r)?;
    if ls.atom.is_none() && rs.atom.is_none() {
        return None;
    }
    Some(NatOrderTriple {
        lhs: atom_or_zero(ls.atom),
        rhs: atom_or_zero(rs.atom),
        n: rs.offset + extra - ls.offset,
    })
}

use crate::engine::{ItemId, ItemKind, SearchState};
use crate::tables::TermId;

/// Compare a newly registered nat occurrence against every known nat term
/// in the box: equal normal forms (with all subtraction obligations
/// discharged) yield an equality fact; same atoms at a constant distance
/// yield NAT_ORDER triples.
pub fn pair_step_all(state: &mut SearchState, x: u32, tid: TermId, _item: ItemId) {
    let partners: Vec<TermId> = state.boxes[x as usize]
        .nat_occs()
        .iter()
        .copied()
        .filter(|&u| u != tid)
        .collect();
    for u in partners {
        pair_step(state, x, tid, u);
    }
}

/// One comparison; silently does nothing when an obligation is missing
/// (the pair is parked for retry on later arithmetic activity).
pub fn pair_step(state: &mut SearchState, x: u32, a: TermId, b: TermId) {
    let ta = state.bank.term(a).clone();
    let tb = state.bank.term(b).clone();
    if !has_arith(&ta) && !has_arith(&tb) {
        return;
    }
    {
        let bx = &state.boxes[x as usize];
        if bx.cong.contains(a) && bx.cong.contains(b) && bx.cong.equiv_ids(a, b) {
            return;
        }
    }
    let na = normalize_nat(&ta);
    let nb = normalize_nat(&tb);
    if !na.nf.same_atoms(&nb.nf) {
        return;
    }
    let mut evidence = Vec::new();
    for ob in na.obligations.iter().chain(nb.obligations.iter()) {
        match state.condition_evidence(x, ob) {
            Some(e) => {
                if e != u32::MAX {
                    evidence.push(e);
                }
            }
            None => {
                state.blocked_pair(x, a, b);
                return;
            }
        }
    }
    let d = na.nf.constant - nb.nf.constant;
    if d == 0 {
        state.add_item(
            x,
            ItemKind::Fact(crate::term::mk_eq(ta, tb)),
            None,
            "nat_norm_eq",
            evidence,
        );
    } else {
        // ta = tb + d pointwise; record both bounds
        state.add_item(
            x,
            ItemKind::NatOrder(NatOrderTriple { lhs: ta.clone(), rhs: tb.clone(), n: d }),
            Some(2),
            "nat_norm_le",
            evidence.clone(),
        );
        state.add_item(
            x,
            ItemKind::NatOrder(NatOrderTriple { lhs: tb, rhs: ta, n: -d }),
            Some(2),
            "nat_norm_le",
            evidence,
        );
    }
}

/// Canonical proposition for a derived triple (used in traces and dumps).
pub fn triple_prop(t: &NatOrderTriple) -> Term {
    match t.n {
        0 => mk_le(t.lhs.clone(), t.rhs.clone()),
        -1 => mk_lt(t.lhs.clone(), t.rhs.clone()),
        n if n > 0 => mk_le(t.lhs.clone(), mk_plus(t.rhs.clone(), Term::nat(n as u64))),
        n => mk_le(mk_plus(t.lhs.clone(), Term::nat((-n) as u64)), t.rhs.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap as Map;

    fn a() -> Term {
        Term::free("a", sort_nat())
    }
    fn b() -> Term {
        Term::free("b", sort_nat())
    }
    fn c() -> Term {
        Term::free("c", sort_nat())
    }

    /// Tiny evaluator for nat +/- terms, used only by these tests.
    fn eval(t: &Term, env: &Map<String, u64>) -> u64 {
        match t {
            Term::Num(k, _) => *k as u64,
            Term::Free(n, _) => env[&n.to_string()],
            Term::App(h, args) if &*h.name == ops::PLUS => {
                eval(&args[0], env) + eval(&args[1], env)
            }
            Term::App(h, args) if &*h.name == ops::MINUS => {
                eval(&args[0], env).saturating_sub(eval(&args[1], env))
            }
            _ => panic!("unexpected term {t}"),
        }
    }

    #[test]
    fn a_minus_b_plus_b_normalizes_to_a() {
        let t = mk_plus(mk_minus(a(), b()), b());
        let n = normalize_nat(&t);
        assert_eq!(n.obligations, vec![mk_le(b(), a())]);
        assert_eq!(n.nf, normalize_nat(&a()).nf);
    }

    #[test]
    fn a_plus_zero_normalizes_to_a() {
        let t = mk_plus(a(), Term::nat(0));
        let n = normalize_nat(&t);
        let (rendered, _) = render(&n.nf);
        assert_eq!(rendered, a());
    }

    #[test]
    fn reassociation_same_normal_form() {
        // (a + b) - c  vs  (a - c) + b, both under c <= a
        let t1 = mk_minus(mk_plus(a(), b()), c());
        let t2 = mk_plus(mk_minus(a(), c()), b());
        let n1 = normalize_nat(&t1);
        let n2 = normalize_nat(&t2);
        assert_eq!(n1.nf, n2.nf);
    }

    #[test]
    fn render_is_sound_under_obligations() {
        let t = mk_minus(mk_plus(a(), b()), c());
        let n = normalize_nat(&t);
        let (rendered, _) = render(&n.nf);
        for (av, bv, cv) in [(5, 2, 3), (3, 0, 3), (7, 1, 0), (2, 9, 2)] {
            let env = Map::from([
                ("a".to_string(), av),
                ("b".to_string(), bv),
                ("c".to_string(), cv),
            ]);
            // obligation c <= a satisfied in all cases above
            assert!(cv <= av);
            assert_eq!(eval(&t, &env), eval(&rendered, &env), "env {env:?}");
        }
    }

    #[test]
    fn ingest_shapes() {
        let lt = mk_lt(a(), b());
        let ts = ingest_inequality(&lt);
        assert_eq!(ts.len(), 1);
        assert_eq!(ts[0].triple, NatOrderTriple { lhs: a(), rhs: b(), n: -1 });
        assert!(ts[0].gates.is_empty());

        let le_off = mk_le(a(), mk_plus(b(), Term::nat(2)));
        let ts = ingest_inequality(&le_off);
        assert_eq!(ts[0].triple, NatOrderTriple { lhs: a(), rhs: b(), n: 2 });

        let eq = term::mk_eq(a(), b());
        let ts = ingest_inequality(&eq);
        assert_eq!(ts.len(), 2);
        assert_eq!(ts[0].triple, NatOrderTriple { lhs: a(), rhs: b(), n: 0 });
        assert_eq!(ts[1].triple, NatOrderTriple { lhs: b(), rhs: a(), n: 0 });

        // numeral side relates to the ZERO atom
        let numeral = mk_le(a(), Term::nat(5));
        let ts = ingest_inequality(&numeral);
        assert_eq!(ts[0].triple, NatOrderTriple { lhs: a(), rhs: zero_atom(), n: 5 });

        // negated comparison flips
        let neg = term::mk_not(mk_le(a(), b()));
        let ts = ingest_inequality(&neg);
        assert_eq!(ts[0].triple, NatOrderTriple { lhs: b(), rhs: a(), n: -1 });

        // right-side truncating subtraction is gated
        let gated = mk_le(a(), mk_minus(b(), Term::nat(1)));
        let ts = ingest_inequality(&gated);
        assert_eq!(ts[0].triple, NatOrderTriple { lhs: a(), rhs: b(), n: -1 });
        assert_eq!(ts[0].gates, vec![mk_le(Term::nat(1), b())]);

        // left-side truncating subtraction is unconditional
        let left = mk_le(mk_minus(a(), Term::nat(1)), b());
        let ts = ingest_inequality(&left);
        assert_eq!(ts[0].triple, NatOrderTriple { lhs: a(), rhs: b(), n: 1 });
        assert!(ts[0].gates.is_empty());
    }

    #[test]
    fn query_shape_folds_subtractions() {
        let cond = mk_le(mk_plus(a(), Term::nat(1)), mk_minus(b(), Term::nat(1)));
        let q = order_query_shape(&cond).unwrap();
        assert_eq!(q, NatOrderTriple { lhs: a(), rhs: b(), n: -2 });
    }
}
