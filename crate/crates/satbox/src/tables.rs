//! The rewrite table (ground congruence classes with E-matching), the
//! property table, and the well-formedness table.
//!
//! Ground terms are interned in a [`TermBank`]; a [`Cong`] layer holds one
//! box's view of the congruence partition. Class representatives are the
//! lowest interned id in the class, so representatives are deterministic.
//! Merges are never undone within a box; child boxes start from a clone of
//! the parent layer and receive later parent merges through the engine.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::term::{Name, Sort, Subst, Term};

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct TermId(pub u32);

impl TermId {
    fn idx(self) -> usize {
        self.0 as usize
    }
}

/// One item id as seen by the tables; the engine defines the real item type.
pub type ItemRef = u32;

struct TermInfo {
    term: Term,
    /// Head name for apps, const/free name for atoms, None for numerals.
    head: Option<Name>,
    args: Vec<TermId>,
}

/// Interner for ground terms, shared by all boxes of one goal search.
#[derive(Default)]
pub struct TermBank {
    infos: Vec<TermInfo>,
    ids: HashMap<Term, TermId>,
}

impl TermBank {
    pub fn new() -> Self {
        TermBank::default()
    }

    pub fn len(&self) -> usize {
        self.infos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.infos.is_empty()
    }

    /// Intern a ground term (and all its subterms). Idempotent.
    pub fn intern(&mut self, t: &Term) -> TermId {
        debug_assert!(t.is_ground(), "only ground terms are interned: {t}");
        if let Some(&id) = self.ids.get(t) {
            return id;
        }
        let (head, args) = match t {
            Term::App(h, args) => {
                let ids = args.iter().map(|a| self.intern(a)).collect();
                (Some(h.name.clone()), ids)
            }
            Term::Const(n, _) | Term::Free(n, _) => (Some(n.clone()), Vec::new()),
            Term::Num(..) => (None, Vec::new()),
            Term::SVar(..) => unreachable!(),
        };
        let id = TermId(self.infos.len() as u32);
        self.infos.push(TermInfo { term: t.clone(), head, args });
        self.ids.insert(t.clone(), id);
        id
    }

    pub fn get(&self, t: &Term) -> Option<TermId> {
        self.ids.get(t).copied()
    }

    pub fn term(&self, id: TermId) -> &Term {
        &self.infos[id.idx()].term
    }

    pub fn head(&self, id: TermId) -> Option<&Name> {
        self.infos[id.idx()].head.as_ref()
    }

    pub fn args(&self, id: TermId) -> &[TermId] {
        &self.infos[id.idx()].args
    }

    pub fn sort(&self, id: TermId) -> &Sort {
        self.infos[id.idx()].term.sort()
    }
}

/// A merge of the classes of `a` and `b` (term-level pair; congruence
/// cascades report the app pair that triggered them, e.g. `(f(a), f(b))`).
/// The representatives before and after the union let scoped indexes rekey.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MergeEvent {
    pub a: TermId,
    pub b: TermId,
    pub old_rep_a: TermId,
    pub old_rep_b: TermId,
    pub new_rep: TermId,
}

const ABSENT: u32 = u32::MAX;

/// One box's congruence partition over the registered terms.
#[derive(Clone, Default)]
pub struct Cong {
    /// Union-find parent; ABSENT marks terms not registered in this layer.
    parent: Vec<u32>,
    members: HashMap<TermId, Vec<TermId>>,
    /// rep -> app terms with an argument in that class.
    uses: HashMap<TermId, Vec<TermId>>,
    sigs: HashMap<(Name, Vec<TermId>), TermId>,
    by_head: HashMap<Name, Vec<TermId>>,
    events: Vec<MergeEvent>,
}

impl Cong {
    pub fn new() -> Self {
        Cong::default()
    }

    pub fn contains(&self, id: TermId) -> bool {
        id.idx() < self.parent.len() && self.parent[id.idx()] != ABSENT
    }

    pub fn find(&self, id: TermId) -> TermId {
        debug_assert!(self.contains(id));
        let mut cur = id;
        loop {
            let p = TermId(self.parent[cur.idx()]);
            if p == cur {
                return cur;
            }
            cur = p;
        }
    }

    pub fn equiv_ids(&self, a: TermId, b: TermId) -> bool {
        self.find(a) == self.find(b)
    }

    pub fn class_members(&self, id: TermId) -> &[TermId] {
        static EMPTY: Vec<TermId> = Vec::new();
        self.members.get(&self.find(id)).unwrap_or(&EMPTY)
    }

    /// All class representatives, ascending (deterministic iteration order).
    pub fn reps(&self) -> Vec<TermId> {
        let mut v: Vec<TermId> = self.members.keys().copied().collect();
        v.sort();
        v
    }

    pub fn terms_with_head(&self, head: &str) -> &[TermId] {
        static EMPTY: Vec<TermId> = Vec::new();
        self.by_head.get(head).unwrap_or(&EMPTY)
    }

    /// Application terms with an argument in the class of `rep`.
    pub fn uses_of(&self, rep: TermId) -> Vec<TermId> {
        self.uses.get(&self.find(rep)).cloned().unwrap_or_default()
    }

    /// Register `id` (and subterms) in this layer. Returns the ids that were
    /// new to the layer, subterms first. Congruent duplicates are merged
    /// immediately so the partition stays closed under congruence.
    pub fn add_term(&mut self, bank: &TermBank, id: TermId) -> Vec<TermId> {
        let mut added = Vec::new();
        self.add_term_rec(bank, id, &mut added);
        added
    }

    fn add_term_rec(&mut self, bank: &TermBank, id: TermId, added: &mut Vec<TermId>) {
        if self.contains(id) {
            return;
        }
        for &a in bank.args(id) {
            self.add_term_rec(bank, a, added);
        }
        if self.parent.len() <= id.idx() {
            self.parent.resize(id.idx() + 1, ABSENT);
        }
        self.parent[id.idx()] = id.0;
        self.members.insert(id, vec![id]);
        if let Some(h) = bank.head(id) {
            self.by_head.entry(h.clone()).or_default().push(id);
        }
        if !bank.args(id).is_empty() {
            let head = bank.head(id).unwrap().clone();
            let arg_reps: Vec<TermId> = bank.args(id).iter().map(|&a| self.find(a)).collect();
            for &r in BTreeSet::from_iter(arg_reps.iter().copied()).iter() {
                self.uses.entry(r).or_default().push(id);
            }
            match self.sigs.get(&(head.clone(), arg_reps.clone())) {
                Some(&other) if self.find(other) != id => {
                    added.push(id);
                    self.merge(bank, id, other);
                    return;
                }
                _ => {
                    self.sigs.insert((head, arg_reps), id);
                }
            }
        }
        added.push(id);
    }

    /// Merge the classes of `a` and `b`, restoring congruence closure.
    /// Merge events (including congruence cascades) accumulate in the event
    /// log until drained.
    pub fn merge(&mut self, bank: &TermBank, a: TermId, b: TermId) {
        debug_assert!(self.contains(a) && self.contains(b));
        let mut work = vec![(a, b)];
        while let Some((x, y)) = work.pop() {
            let rx = self.find(x);
            let ry = self.find(y);
            if rx == ry {
                continue;
            }
            // lowest interned id wins
            let (keep, gone) = if rx < ry { (rx, ry) } else { (ry, rx) };
            self.parent[gone.idx()] = keep.0;
            let gone_members = self.members.remove(&gone).unwrap_or_default();
            self.members.get_mut(&keep).unwrap().extend(gone_members);
            self.events.push(MergeEvent {
                a: x,
                b: y,
                old_rep_a: rx,
                old_rep_b: ry,
                new_rep: keep,
            });

            let gone_uses = self.uses.remove(&gone).unwrap_or_default();
            let keep_uses = self.uses.get(&keep).cloned().unwrap_or_default();
            for &p in gone_uses.iter().chain(keep_uses.iter()) {
                let head = bank.head(p).unwrap().clone();
                let arg_reps: Vec<TermId> = bank.args(p).iter().map(|&q| self.find(q)).collect();
                match self.sigs.get(&(head.clone(), arg_reps.clone())) {
                    Some(&q) => {
                        if self.find(q) != self.find(p) {
                            work.push((p, q));
                        }
                    }
                    None => {
                        self.sigs.insert((head, arg_reps), p);
                    }
                }
            }
            self.uses.entry(keep).or_default().extend(gone_uses);
        }
    }

    pub fn drain_events(&mut self) -> Vec<MergeEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn has_pending_events(&self) -> bool {
        !self.events.is_empty()
    }

    /// E-match `pattern` against the class of `cand`. Every returned
    /// substitution σ satisfies σ(pattern) ~ cand; one substitution per
    /// distinct class assignment. Nonlinear variables are checked by class.
    pub fn ematch_candidate(&self, bank: &TermBank, pattern: &Term, cand: TermId) -> Vec<Subst> {
        let mut out = Vec::new();
        let mut bind: BTreeMap<Name, TermId> = BTreeMap::new();
        self.match_class(bank, pattern, self.find(cand), &mut bind, &mut out);
        // dedupe by class assignment
        let mut seen = BTreeSet::new();
        let mut res = Vec::new();
        for b in out {
            let key: Vec<(Name, TermId)> = b.iter().map(|(n, t)| (n.clone(), *t)).collect();
            if seen.insert(key) {
                let mut s = Subst::new();
                for (n, id) in b {
                    s.bind(n, bank.term(self.find(id)).clone());
                }
                res.push(s);
            }
        }
        res
    }

    fn match_class(
        &self,
        bank: &TermBank,
        pattern: &Term,
        rep: TermId,
        bind: &mut BTreeMap<Name, TermId>,
        out: &mut Vec<BTreeMap<Name, TermId>>,
    ) {
        match pattern {
            Term::SVar(n, s) => {
                if bank.sort(rep) != s {
                    return;
                }
                match bind.get(n) {
                    Some(&prev) => {
                        if self.find(prev) == rep {
                            out.push(bind.clone());
                        }
                    }
                    None => {
                        bind.insert(n.clone(), rep);
                        out.push(bind.clone());
                        bind.remove(n);
                    }
                }
            }
            Term::App(h, pargs) => {
                let members = self.class_members(rep).to_vec();
                for m in members {
                    if bank.head(m).map(|x| &**x) == Some(&*h.name)
                        && bank.args(m).len() == pargs.len()
                    {
                        let arg_ids = bank.args(m).to_vec();
                        self.match_args(bank, pargs, &arg_ids, 0, bind, out);
                    }
                }
            }
            atom => {
                if let Some(id) = bank.get(atom) {
                    if self.contains(id) && self.find(id) == rep {
                        out.push(bind.clone());
                    }
                }
            }
        }
    }

    fn match_args(
        &self,
        bank: &TermBank,
        pats: &[Term],
        args: &[TermId],
        i: usize,
        bind: &mut BTreeMap<Name, TermId>,
        out: &mut Vec<BTreeMap<Name, TermId>>,
    ) {
        if i == pats.len() {
            out.push(bind.clone());
            return;
        }
        let mut partial = Vec::new();
        self.match_class(bank, &pats[i], self.find(args[i]), bind, &mut partial);
        for b in partial {
            let mut next = b;
            let saved = std::mem::replace(bind, std::mem::take(&mut next));
            self.match_args(bank, pats, args, i + 1, bind, out);
            *bind = saved;
        }
    }
}

/// Self-contained rewrite table: interner plus a single congruence layer.
/// This is the table type used directly by tests and oracles; the engine
/// composes one [`TermBank`] with per-box [`Cong`] layers instead.
#[derive(Default)]
pub struct RewriteTable {
    pub bank: TermBank,
    pub cong: Cong,
}

impl RewriteTable {
    pub fn new() -> Self {
        RewriteTable::default()
    }

    pub fn register(&mut self, t: &Term) -> TermId {
        let id = self.bank.intern(t);
        self.cong.add_term(&self.bank, id);
        id
    }

    /// Insert a ground equality; registration is implicit and recursive.
    /// Returns the merged class pairs (as term pairs) so incremental
    /// matching can fire. Existing items are not rewritten.
    pub fn add_equality(&mut self, lhs: &Term, rhs: &Term) -> Vec<(Term, Term)> {
        let a = self.register(lhs);
        let b = self.register(rhs);
        self.cong.merge(&self.bank, a, b);
        self.cong
            .drain_events()
            .into_iter()
            .map(|e| (self.bank.term(e.a).clone(), self.bank.term(e.b).clone()))
            .collect()
    }

    /// True iff `s` and `t` are in the same congruence class after
    /// registering both.
    pub fn equiv(&mut self, s: &Term, t: &Term) -> bool {
        let a = self.register(s);
        let b = self.register(t);
        self.cong.drain_events();
        self.cong.equiv_ids(a, b)
    }

    /// E-matching: candidates default to all registered classes.
    pub fn ematch(&self, pattern: &Term, candidates: Option<&[Term]>) -> Vec<Subst> {
        let cands: Vec<TermId> = match candidates {
            Some(ts) => {
                let mut v = Vec::new();
                for t in ts {
                    if let Some(id) = self.bank.get(t) {
                        if self.cong.contains(id) {
                            v.push(self.cong.find(id));
                        }
                    }
                }
                v
            }
            None => self.cong.reps(),
        };
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for c in cands {
            let rep = self.cong.find(c);
            if !seen.insert(rep) {
                continue;
            }
            out.extend(self.cong.ematch_candidate(&self.bank, pattern, rep));
        }
        out
    }
}

/// Facts visible in one box, indexed by the head symbol of the proposition.
/// Lookup is up to known equalities: two propositions match when their term
/// classes coincide in the box's congruence layer.
#[derive(Clone, Default)]
pub struct FactIndex {
    by_head: HashMap<Name, Vec<(TermId, ItemRef)>>,
    all: Vec<(TermId, ItemRef)>,
}

impl FactIndex {
    pub fn new() -> Self {
        FactIndex::default()
    }

    pub fn add(&mut self, bank: &TermBank, prop: TermId, item: ItemRef) {
        let key = bank.head(prop).cloned().unwrap_or_else(|| Name::from("#"));
        self.by_head.entry(key).or_default().push((prop, item));
        self.all.push((prop, item));
    }

    /// Find a visible fact whose proposition is equivalent to `prop`.
    pub fn lookup(&self, bank: &TermBank, cong: &Cong, prop: TermId) -> Option<ItemRef> {
        let key = bank.head(prop).cloned().unwrap_or_else(|| Name::from("#"));
        let bucket = self.by_head.get(&key)?;
        let rep = cong.find(prop);
        bucket
            .iter()
            .find(|(p, _)| cong.contains(*p) && cong.find(*p) == rep)
            .map(|(_, it)| *it)
    }

    pub fn iter(&self) -> impl Iterator<Item = (TermId, ItemRef)> + '_ {
        self.all.iter().copied()
    }

    pub fn with_head(&self, head: &str) -> &[(TermId, ItemRef)] {
        static EMPTY: Vec<(TermId, ItemRef)> = Vec::new();
        self.by_head.get(head).unwrap_or(&EMPTY)
    }
}

/// Properties satisfied by each term: an entry exists only while the
/// corresponding fact item is visible in the box.
#[derive(Clone, Default)]
pub struct PropertyTable {
    registered: BTreeSet<Name>,
    entries: Vec<(Name, TermId, ItemRef)>,
}

impl PropertyTable {
    pub fn new() -> Self {
        PropertyTable::default()
    }

    pub fn register(&mut self, pred: &str) {
        self.registered.insert(Name::from(pred));
    }

    pub fn is_registered(&self, pred: &str) -> bool {
        self.registered.contains(pred)
    }

    /// Record `pred(arg)` proved by `item`.
    pub fn add(&mut self, pred: Name, arg: TermId, item: ItemRef) {
        self.entries.push((pred, arg, item));
    }

    pub fn lookup(&self, cong: &Cong, pred: &str, arg: TermId) -> Option<ItemRef> {
        if !cong.contains(arg) {
            return None;
        }
        let rep = cong.find(arg);
        self.entries
            .iter()
            .find(|(p, a, _)| &**p == pred && cong.contains(*a) && cong.find(*a) == rep)
            .map(|(_, _, it)| *it)
    }
}

/// A well-formedness schema: conditions attached to a function's argument
/// slots. `params` are distinct schematic variables standing for the slots.
#[derive(Clone, Debug)]
pub struct WfSchema {
    pub func: Name,
    pub params: Vec<Term>,
    pub conditions: Vec<Term>,
    /// Proactive schemas open a case box with the negated condition as the
    /// assumption whenever the condition is not already discharged.
    pub proactive: bool,
}

impl WfSchema {
    /// Instantiate this schema's conditions for a concrete occurrence.
    pub fn instantiate(&self, bank: &TermBank, occ: TermId) -> Option<Vec<Term>> {
        if bank.head(occ).map(|h| &**h) != Some(&*self.func) {
            return None;
        }
        let args = bank.args(occ);
        if args.len() != self.params.len() {
            return None;
        }
        let mut s = Subst::new();
        for (p, &a) in self.params.iter().zip(args) {
            if let Term::SVar(n, _) = p {
                s.bind(n.clone(), bank.term(a).clone());
            }
        }
        Some(self.conditions.iter().map(|c| s.apply(c).expect("schema closed")).collect())
    }
}

/// Well-formedness table: registered schemas plus a cache of discharged
/// conditions per term occurrence. Only positive results are cached (merges
/// are monotone, so a discharged condition stays discharged).
#[derive(Clone, Default)]
pub struct WfTable {
    schemas: HashMap<Name, Vec<WfSchema>>,
    discharged: HashMap<(TermId, usize, usize), ItemRef>,
}

impl WfTable {
    pub fn new() -> Self {
        WfTable::default()
    }

    pub fn register(&mut self, schema: WfSchema) {
        self.schemas.entry(schema.func.clone()).or_default().push(schema);
    }

    pub fn schemas_for(&self, func: &str) -> &[WfSchema] {
        static EMPTY: Vec<WfSchema> = Vec::new();
        self.schemas.get(func).unwrap_or(&EMPTY)
    }

    pub fn all_schemas(&self) -> Vec<&WfSchema> {
        let mut keys: Vec<&Name> = self.schemas.keys().collect();
        keys.sort();
        keys.into_iter().flat_map(|k| self.schemas[k].iter()).collect()
    }

    pub fn note_discharged(&mut self, occ: TermId, schema: usize, cond: usize, item: ItemRef) {
        self.discharged.insert((occ, schema, cond), item);
    }

    pub fn cached(&self, occ: TermId, schema: usize, cond: usize) -> Option<ItemRef> {
        self.discharged.get(&(occ, schema, cond)).copied()
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum SideConditionKind {
    Property,
    Wf,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::{sort_nat, Term};

    fn c(n: &str) -> Term {
        Term::cnst(n, sort_nat())
    }
    fn f(x: Term) -> Term {
        Term::app1("f", sort_nat(), x)
    }
    fn g(x: Term) -> Term {
        Term::app1("g", sort_nat(), x)
    }
    fn g2(x: Term, y: Term) -> Term {
        Term::app2("g", sort_nat(), x, y)
    }

    #[test]
    fn add_equality_merges_classes() {
        let mut t = RewriteTable::new();
        t.add_equality(&c("a"), &c("b"));
        assert!(t.equiv(&c("a"), &c("b")));
        assert!(!t.equiv(&c("a"), &c("c")));
    }

    #[test]
    fn congruence_axiom_reports_merge() {
        let mut t = RewriteTable::new();
        t.register(&f(c("a")));
        t.register(&f(c("b")));
        let events = t.add_equality(&c("a"), &c("b"));
        assert!(t.equiv(&f(c("a")), &f(c("b"))));
        // merge list includes the congruence pair (f(a), f(b))
        assert!(events
            .iter()
            .any(|(x, y)| (x == &f(c("a")) && y == &f(c("b"))) || (x == &f(c("b")) && y == &f(c("a")))));
    }

    #[test]
    fn late_registration_joins_existing_classes() {
        let mut t = RewriteTable::new();
        t.add_equality(&c("a"), &c("b"));
        t.register(&f(c("a")));
        // f(b) registered after the equality must still land in f(a)'s class
        assert!(t.equiv(&f(c("b")), &f(c("a"))));
    }

    #[test]
    fn ematch_one_rewrite_step() {
        let mut t = RewriteTable::new();
        t.add_equality(&c("b"), &f(c("a")));
        t.register(&g(c("b")));
        let pat = g(f(Term::svar("x", sort_nat())));
        let subs = t.ematch(&pat, Some(&[g(c("b"))]));
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].get("x"), Some(&c("a")));
    }

    #[test]
    fn ematch_bare_variable() {
        let mut t = RewriteTable::new();
        t.register(&c("a"));
        let subs = t.ematch(&Term::svar("x", sort_nat()), Some(&[c("a")]));
        assert_eq!(subs.len(), 1);
        assert_eq!(subs[0].get("x"), Some(&c("a")));
    }

    #[test]
    fn ematch_nonlinear_up_to_equiv() {
        let mut t = RewriteTable::new();
        t.add_equality(&c("a"), &c("b"));
        t.register(&g2(c("a"), c("b")));
        let pat = g2(Term::svar("x", sort_nat()), Term::svar("x", sort_nat()));
        let subs = t.ematch(&pat, Some(&[g2(c("a"), c("b"))]));
        assert_eq!(subs.len(), 1);
        // the binding is the class representative (lowest id: a)
        assert_eq!(subs[0].get("x"), Some(&c("a")));
    }

    #[test]
    fn ematch_is_complete_up_to_representatives() {
        let mut t = RewriteTable::new();
        t.register(&g2(c("a"), c("b")));
        t.register(&g2(c("a"), c("c")));
        let pat = g2(Term::svar("x", sort_nat()), Term::svar("y", sort_nat()));
        let subs = t.ematch(&pat, None);
        assert_eq!(subs.len(), 2);
    }

    #[test]
    fn merges_are_monotone_for_prior_matches() {
        let mut t = RewriteTable::new();
        t.add_equality(&c("b"), &f(c("a")));
        t.register(&g(c("b")));
        let pat = g(f(Term::svar("x", sort_nat())));
        let before = t.ematch(&pat, Some(&[g(c("b"))]));
        t.add_equality(&c("c"), &c("a"));
        for s in &before {
            let inst = s.apply(&pat).unwrap();
            assert!(t.equiv(&inst, &g(c("b"))));
        }
    }

    #[test]
    fn stored_terms_are_never_rewritten() {
        let mut t = RewriteTable::new();
        let id = t.register(&f(c("a")));
        t.add_equality(&c("a"), &c("b"));
        assert_eq!(t.bank.term(id), &f(c("a")));
    }

    #[test]
    fn fact_index_lookup_up_to_equiv() {
        let mut t = RewriteTable::new();
        let mut facts = FactIndex::new();
        let fact = crate::term::mk_lt(c("i"), Term::app1("length", sort_nat(), c("l1")));
        let id = t.register(&fact);
        facts.add(&t.bank, id, 7);
        // after l1 = l2 the condition i < length l2 is found
        t.add_equality(&c("l1"), &c("l2"));
        let cond = crate::term::mk_lt(c("i"), Term::app1("length", sort_nat(), c("l2")));
        let cid = t.register(&cond);
        assert_eq!(facts.lookup(&t.bank, &t.cong, cid), Some(7));
    }

    #[test]
    fn property_table_lookup() {
        let mut t = RewriteTable::new();
        let mut props = PropertyTable::new();
        props.register("sorted");
        let xs = t.register(&c("xs"));
        props.add(Name::from("sorted"), xs, 3);
        t.add_equality(&c("xs"), &c("ys"));
        let ys = t.register(&c("ys"));
        assert_eq!(props.lookup(&t.cong, "sorted", ys), Some(3));
        assert_eq!(props.lookup(&t.cong, "distinct", ys), None);
    }
}
