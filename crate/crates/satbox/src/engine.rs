//! The saturation loop: item store, score-ordered queue, case boxes,
//! proof-step dispatch, contradiction propagation and proof traces.
//!
//! Items are immutable once created and are never rewritten when the
//! rewrite table learns new equalities; instead, merges trigger incremental
//! re-matching of the affected terms. Every box carries its own view of the
//! congruence partition and the scoped indexes; a child box starts from a
//! clone of its parent and receives later parent updates, never the other
//! way around.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashMap};
use std::sync::Arc;

use crate::nat_arith::{self, NatOrderTriple};
use crate::rule_steps::{CompiledRule, Emit, SideRoute, Slot};
use crate::sep_logic::{Assertion, StdTriple};
use crate::tables::{Cong, PropertyTable, TermBank, TermId};
use crate::term::{self, mk_not, Name, Sort, Subst, Term};
use crate::theory_io::TheoryEnv;

pub type ItemId = u32;
pub type BoxId = u32;

#[derive(Clone, Debug)]
pub enum ItemKind {
    Fact(Term),
    TermOcc(Term),
    NatOrder(NatOrderTriple),
    /// Request to open a box with the proposition as assumption.
    CaseSplit(Term),
    /// Symbolic-execution state (index into `SearchState::sym_states`).
    Sym(usize),
}

#[derive(Clone, Debug)]
pub struct Item {
    pub id: ItemId,
    pub kind: ItemKind,
    pub score: u64,
    pub box_id: BoxId,
    pub step: Name,
    pub premises: Vec<ItemId>,
    pub active: bool,
}

/// One node of the case-analysis tree with its scoped view of the tables.
pub struct BoxNode {
    pub id: BoxId,
    pub parent: Option<BoxId>,
    pub assumption: Option<Term>,
    pub assumption_item: Option<ItemId>,
    pub closed: bool,
    pub children: Vec<BoxId>,
    pub depth: u32,
    pub cong: Cong,
    /// class representative -> fact item proving the class true/false
    truths: HashMap<TermId, ItemId>,
    falses: HashMap<TermId, ItemId>,
    /// all facts visible here (own and inherited)
    facts: Vec<(TermId, ItemId)>,
    diseqs: Vec<(TermId, TermId, ItemId)>,
    orders: Vec<OrderEntry>,
    props: PropertyTable,
    /// term occurrences already spawned (dedup, includes ancestors')
    occs: BTreeSet<TermId>,
    /// registered nat-sorted terms (partners for the normalization step)
    nat_occs: Vec<TermId>,
    /// case splits already requested here or above
    splits: Vec<TermId>,
    /// nat-pairs whose obligations were missing; retried on arith activity
    blocked_pairs: Vec<(TermId, TermId)>,
    /// gated inequality ingestions awaiting their bound
    pending_gated: Vec<(ItemId, nat_arith::GatedTriple)>,
    pred_witnessed: BTreeSet<TermId>,
    data_witnessed: BTreeSet<TermId>,
    pub cur_sym: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
pub struct OrderEntry {
    pub lhs: TermId,
    pub rhs: TermId,
    pub n: i64,
    pub item: ItemId,
}

impl BoxNode {
    fn child_of(&self, id: BoxId, assumption: Term) -> BoxNode {
        BoxNode {
            id,
            parent: Some(self.id),
            assumption: Some(assumption),
            assumption_item: None,
            closed: false,
            children: Vec::new(),
            depth: self.depth + 1,
            cong: self.cong.clone(),
            truths: self.truths.clone(),
            falses: self.falses.clone(),
            facts: self.facts.clone(),
            diseqs: self.diseqs.clone(),
            orders: self.orders.clone(),
            props: self.props.clone(),
            occs: self.occs.clone(),
            nat_occs: self.nat_occs.clone(),
            splits: self.splits.clone(),
            blocked_pairs: self.blocked_pairs.clone(),
            pending_gated: self.pending_gated.clone(),
            pred_witnessed: self.pred_witnessed.clone(),
            data_witnessed: self.data_witnessed.clone(),
            cur_sym: self.cur_sym,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TraceLevel {
    None,
    Steps,
    Full,
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub budget: u64,
    pub max_box_depth: u32,
    pub trace: TraceLevel,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig { budget: 10_000, max_box_depth: 20, trace: TraceLevel::None }
    }
}

/// What counts as success for this search.
#[derive(Clone, Debug)]
pub enum GoalMode {
    /// Contradiction in the initial box.
    Refute,
    /// A visible fact in the initial box matching the pattern.
    FindInstance { pattern: Term, vars: Vec<(Name, Sort)> },
}

/// Instantiated postcondition of a Hoare-triple goal.
#[derive(Clone, Debug)]
pub struct GoalPost {
    pub ret: (Name, Sort),
    /// existential data variables, already as schematic variables
    pub data_vars: Vec<(Name, Sort)>,
    pub spatial: Vec<Assertion>,
    pub pure: Vec<Term>,
    pub has_top: bool,
}

/// A symbolic execution state: current spatial factors (expanded form) and
/// the program remainder. Pure facts live as ordinary engine items.
#[derive(Clone, Debug)]
pub struct SymState {
    pub factors: Vec<Assertion>,
    pub program: Vec<SpineStep>,
    pub box_id: BoxId,
    pub item: ItemId,
    /// return value of the last executed command
    pub last_ret: Option<Term>,
    pub expanded: bool,
}

#[derive(Clone, Debug)]
pub struct SpineStep {
    pub cmd: crate::heap_lang::Command,
    pub bind: Option<(Name, Sort)>,
}

/// Record of a proved entailment, for the oracle to re-check.
#[derive(Clone, Debug)]
pub struct RecordedEntailment {
    pub state_factors: Vec<Assertion>,
    pub goal_spatial: Vec<Assertion>,
    pub goal_pure: Vec<Term>,
    pub data_vars: Vec<(Name, Sort)>,
    pub has_top: bool,
    pub box_id: BoxId,
}

#[derive(Debug, Clone)]
pub struct Stats {
    pub items_added: u64,
    pub items_activated: u64,
    pub boxes_opened: u64,
    pub splits_dropped: u64,
}

pub struct SearchState {
    pub env: Arc<TheoryEnv>,
    pub rules: Vec<Arc<CompiledRule>>,
    pub triples: Vec<Arc<StdTriple>>,
    pub assn_defs: BTreeMap<Name, crate::sep_logic::AssnDef>,
    pub bank: TermBank,
    pub boxes: Vec<BoxNode>,
    pub items: Vec<Item>,
    queue: BinaryHeap<Reverse<(u64, u64, ItemId)>>,
    seq: u64,
    pub config: EngineConfig,
    pub stats: Stats,
    fresh_counter: u64,
    pub goal: GoalMode,
    pub goal_post: Option<GoalPost>,
    pub sym_states: Vec<SymState>,
    sym_dirty: BTreeSet<BoxId>,
    proved: Option<(Name, Vec<ItemId>)>,
    pub found_witness: Option<Subst>,
    over_budget: bool,
    pub log: Vec<String>,
    pub recorded_entailments: Vec<RecordedEntailment>,
    /// rule slot index: head symbol -> (rule idx, slot idx)
    occ_index: HashMap<Name, Vec<(usize, usize)>>,
    fact_index: HashMap<Name, Vec<(usize, usize)>>,
    true_id: TermId,
    false_id: TermId,
}

#[derive(Debug)]
pub enum Outcome {
    Proved(ProofTrace),
    Exhausted(ExhaustSummary),
}

#[derive(Debug, Clone)]
pub struct ProofTrace {
    pub final_step: Name,
    pub final_premises: Vec<ItemId>,
    /// item id -> (step, premises, rendering); only items in the proof DAG
    pub nodes: BTreeMap<ItemId, (Name, Vec<ItemId>, String)>,
}

#[derive(Debug)]
pub struct ExhaustSummary {
    pub items_added: u64,
    pub queue_residue: usize,
    pub open_boxes: Vec<(BoxId, Option<Term>, u32)>,
    pub over_budget: bool,
    pub detail: String,
}

impl SearchState {
    pub fn new(env: Arc<TheoryEnv>, config: EngineConfig, goal: GoalMode) -> Self {
        let rules = env.enabled_rules();
        let triples = env.enabled_triples();
        let assn_defs = env.enabled_assn_defs();
        let mut bank = TermBank::new();
        let true_id = bank.intern(&term::mk_true());
        let false_id = bank.intern(&term::mk_false());

        let mut occ_index: HashMap<Name, Vec<(usize, usize)>> = HashMap::new();
        let mut fact_index: HashMap<Name, Vec<(usize, usize)>> = HashMap::new();
        for (ri, rule) in rules.iter().enumerate() {
            for (si, slot) in rule.slots.iter().enumerate() {
                let head = match slot.pattern().head_name() {
                    Some(h) => Name::from(h),
                    None => continue,
                };
                match slot {
                    Slot::Occ(_) => occ_index.entry(head).or_default().push((ri, si)),
                    Slot::Premise { .. } => fact_index.entry(head).or_default().push((ri, si)),
                }
            }
        }

        let mut root = BoxNode {
            id: 0,
            parent: None,
            assumption: None,
            assumption_item: None,
            closed: false,
            children: Vec::new(),
            depth: 0,
            cong: Cong::new(),
            truths: HashMap::new(),
            falses: HashMap::new(),
            facts: Vec::new(),
            diseqs: Vec::new(),
            orders: Vec::new(),
            props: PropertyTable::new(),
            occs: BTreeSet::new(),
            nat_occs: Vec::new(),
            splits: Vec::new(),
            blocked_pairs: Vec::new(),
            pending_gated: Vec::new(),
            pred_witnessed: BTreeSet::new(),
            data_witnessed: BTreeSet::new(),
            cur_sym: None,
        };
        for p in env.properties.iter() {
            root.props.register(p);
        }
        root.cong.add_term(&bank, true_id);
        root.cong.add_term(&bank, false_id);
        root.truths.insert(true_id, u32::MAX);
        root.falses.insert(false_id, u32::MAX);
        root.cong.drain_events();

        SearchState {
            env,
            rules,
            triples,
            assn_defs,
            bank,
            boxes: vec![root],
            items: Vec::new(),
            queue: BinaryHeap::new(),
            seq: 0,
            config,
            stats: Stats { items_added: 0, items_activated: 0, boxes_opened: 0, splits_dropped: 0 },
            fresh_counter: 0,
            goal,
            goal_post: None,
            sym_states: Vec::new(),
            sym_dirty: BTreeSet::new(),
            proved: None,
            found_witness: None,
            over_budget: false,
            log: Vec::new(),
            recorded_entailments: Vec::new(),
            occ_index,
            fact_index,
            true_id,
            false_id,
        }
    }

    pub fn fresh_name(&mut self, base: &str) -> Name {
        self.fresh_counter += 1;
        Name::from(format!("{base}!{}", self.fresh_counter))
    }

    fn note(&mut self, line: impl FnOnce() -> String) {
        if self.config.trace == TraceLevel::Full {
            self.log.push(line());
        }
    }

    /// Open subtree of `b` in ascending id order, `b` first.
    pub fn subtree(&self, b: BoxId) -> Vec<BoxId> {
        let mut out = Vec::new();
        let mut stack = vec![b];
        while let Some(x) = stack.pop() {
            if self.boxes[x as usize].closed {
                continue;
            }
            out.push(x);
            for &c in &self.boxes[x as usize].children {
                stack.push(c);
            }
        }
        out.sort_unstable();
        out
    }

    pub fn box_chain(&self, mut b: BoxId) -> Vec<BoxId> {
        let mut out = vec![b];
        while let Some(p) = self.boxes[b as usize].parent {
            out.push(p);
            b = p;
        }
        out
    }

    /// Queue a new item. Duplicate items (same kind, equivalent terms, same
    /// box or ancestor) are dropped. Score defaults to the housed term's
    /// size unless the producing step overrides it.
    pub fn add_item(
        &mut self,
        box_id: BoxId,
        kind: ItemKind,
        score_override: Option<u64>,
        step: &str,
        premises: Vec<ItemId>,
    ) -> Option<ItemId> {
        if self.boxes[box_id as usize].closed || self.over_budget || self.proved.is_some() {
            return None;
        }
        // cheap duplicate rejection; the authoritative equivalence check
        // runs again at activation time
        match &kind {
            ItemKind::Fact(p) => {
                if self.fact_known(box_id, p) {
                    return None;
                }
            }
            ItemKind::TermOcc(t) => {
                if let Some(id) = self.bank.get(t) {
                    if self.boxes[box_id as usize].occs.contains(&id) {
                        return None;
                    }
                }
            }
            ItemKind::CaseSplit(p) => {
                if self.split_redundant(box_id, p) {
                    return None;
                }
            }
            ItemKind::NatOrder(t) => {
                if self.order_entailed(box_id, t) {
                    return None;
                }
            }
            ItemKind::Sym(_) => {}
        }
        let score = score_override.unwrap_or(match &kind {
            ItemKind::Fact(p) | ItemKind::TermOcc(p) | ItemKind::CaseSplit(p) => p.size(),
            ItemKind::NatOrder(t) => t.lhs.size() + t.rhs.size(),
            ItemKind::Sym(_) => 1,
        });
        let id = self.items.len() as ItemId;
        self.items.push(Item {
            id,
            kind,
            score,
            box_id,
            step: Name::from(step),
            premises,
            active: false,
        });
        self.stats.items_added += 1;
        if self.stats.items_added > self.config.budget {
            self.over_budget = true;
        }
        self.seq += 1;
        self.queue.push(Reverse((score, self.seq, id)));
        Some(id)
    }

    /// Is this proposition already known (up to table equivalence) in the
    /// box or an ancestor?
    pub fn fact_known(&mut self, box_id: BoxId, p: &Term) -> bool {
        let id = self.bank.intern(p);
        let b = &self.boxes[box_id as usize];
        if !b.cong.contains(id) {
            return false;
        }
        b.truths.contains_key(&b.cong.find(id))
    }

    fn fact_evidence(&self, box_id: BoxId, id: TermId) -> Option<ItemId> {
        let b = &self.boxes[box_id as usize];
        if !b.cong.contains(id) {
            return None;
        }
        b.truths.get(&b.cong.find(id)).copied()
    }

    fn split_redundant(&mut self, box_id: BoxId, p: &Term) -> bool {
        let id = self.bank.intern(p);
        let b = &self.boxes[box_id as usize];
        if b.splits.iter().any(|&s| {
            b.cong.contains(s) && b.cong.contains(id) && b.cong.equiv_ids(s, id)
        }) {
            return true;
        }
        if b.cong.contains(id) {
            let rep = b.cong.find(id);
            if b.truths.contains_key(&rep) || b.falses.contains_key(&rep) {
                return true;
            }
        }
        // assumption of an ancestor?
        for x in self.box_chain(box_id) {
            if let (Some(a), true) = (&self.boxes[x as usize].assumption, true) {
                if a == p {
                    return true;
                }
            }
        }
        false
    }

    fn order_entailed(&mut self, box_id: BoxId, t: &NatOrderTriple) -> bool {
        let l = self.bank.intern(&t.lhs);
        let r = self.bank.intern(&t.rhs);
        let b = &self.boxes[box_id as usize];
        if !b.cong.contains(l) || !b.cong.contains(r) {
            return false;
        }
        let (rl, rr) = (b.cong.find(l), b.cong.find(r));
        b.orders.iter().any(|e| {
            b.cong.contains(e.lhs)
                && b.cong.contains(e.rhs)
                && b.cong.find(e.lhs) == rl
                && b.cong.find(e.rhs) == rr
                && e.n <= t.n
        })
    }

    /// Query the difference-logic closure: is `lhs <= rhs + n` known here?
    pub fn order_evidence(&mut self, box_id: BoxId, q: &NatOrderTriple) -> Option<ItemId> {
        let l = self.bank.intern(&q.lhs);
        let r = self.bank.intern(&q.rhs);
        let b = &mut self.boxes[box_id as usize];
        b.cong.add_term(&self.bank, l);
        b.cong.add_term(&self.bank, r);
        let (rl, rr) = (b.cong.find(l), b.cong.find(r));
        if rl == rr && q.n >= 0 {
            return Some(u32::MAX); // reflexive
        }
        b.orders
            .iter()
            .find(|e| {
                b.cong.contains(e.lhs)
                    && b.cong.contains(e.rhs)
                    && b.cong.find(e.lhs) == rl
                    && b.cong.find(e.rhs) == rr
                    && e.n <= q.n
            })
            .map(|e| e.item)
    }

    /// Find evidence for a fully instantiated condition: the fact store up
    /// to known equalities, an equation holding in the rewrite table, or
    /// the difference-logic closure. `None` evidence ids (u32::MAX) stand
    /// for table-level evidence.
    pub fn condition_evidence(&mut self, box_id: BoxId, cond: &Term) -> Option<ItemId> {
        let id = self.bank.intern(cond);
        {
            let b = &mut self.boxes[box_id as usize];
            b.cong.add_term(&self.bank, id);
            if let Some(it) = b.truths.get(&b.cong.find(id)) {
                return Some(*it);
            }
        }
        if let Some((l, r)) = cond.as_equation() {
            let li = self.bank.intern(l);
            let ri = self.bank.intern(r);
            let b = &mut self.boxes[box_id as usize];
            b.cong.add_term(&self.bank, li);
            b.cong.add_term(&self.bank, ri);
            if b.cong.equiv_ids(li, ri) {
                return Some(u32::MAX);
            }
        }
        if let Some(neg) = cond.as_negation() {
            // ~(a = b) via a visible disequality on the same classes
            if let Some((l, r)) = neg.as_equation() {
                let li = self.bank.intern(l);
                let ri = self.bank.intern(r);
                let b = &mut self.boxes[box_id as usize];
                b.cong.add_term(&self.bank, li);
                b.cong.add_term(&self.bank, ri);
                let (rl, rr) = (b.cong.find(li), b.cong.find(ri));
                if let Some((_, _, item)) = b
                    .diseqs
                    .iter()
                    .find(|(a, c, _)| {
                        let (ra, rc) = (b.cong.find(*a), b.cong.find(*c));
                        (ra == rl && rc == rr) || (ra == rr && rc == rl)
                    })
                    .copied()
                {
                    return Some(item);
                }
            }
            // falsity marking: the inner class is known false
            let ni = self.bank.intern(neg);
            let b = &mut self.boxes[box_id as usize];
            b.cong.add_term(&self.bank, ni);
            if let Some(it) = b.falses.get(&b.cong.find(ni)) {
                return Some(*it);
            }
        }
        if let Some(q) = nat_arith::order_query_shape(cond) {
            return self.order_evidence(box_id, &q);
        }
        None
    }

    pub fn lookup_side_condition(
        &mut self,
        box_id: BoxId,
        kind: crate::tables::SideConditionKind,
        term_occ: &Term,
        cond: &Term,
    ) -> Option<ItemId> {
        let _ = (kind, term_occ);
        self.condition_evidence(box_id, cond)
    }

    // ------------------------------------------------------------------
    // saturation loop
    // ------------------------------------------------------------------

    pub fn run(&mut self) -> Outcome {
        while let Some(Reverse((_, _, id))) = self.queue.pop() {
            if self.proved.is_some() || self.over_budget {
                break;
            }
            let box_id = self.items[id as usize].box_id;
            if self.boxes[box_id as usize].closed {
                continue;
            }
            self.activate(id);
            // symbolic execution retries for boxes touched this round
            let dirty: Vec<BoxId> = std::mem::take(&mut self.sym_dirty).into_iter().collect();
            for x in dirty {
                if self.proved.is_some() || self.over_budget {
                    break;
                }
                if !self.boxes[x as usize].closed {
                    crate::sep_logic::try_advance(self, x);
                }
            }
            if self.proved.is_some() {
                break;
            }
        }
        match self.proved.clone() {
            Some((step, premises)) => Outcome::Proved(self.extract_trace(step, premises)),
            None => Outcome::Exhausted(self.exhaust_summary()),
        }
    }

    fn extract_trace(&self, final_step: Name, final_premises: Vec<ItemId>) -> ProofTrace {
        let mut nodes = BTreeMap::new();
        let mut stack: Vec<ItemId> =
            final_premises.iter().copied().filter(|&i| i != u32::MAX).collect();
        while let Some(i) = stack.pop() {
            if nodes.contains_key(&i) {
                continue;
            }
            let item = &self.items[i as usize];
            let rendering = match &item.kind {
                ItemKind::Fact(p) => format!("fact {p}"),
                ItemKind::TermOcc(t) => format!("term {t}"),
                ItemKind::NatOrder(t) => format!("order <{}, {}, {}>", t.lhs, t.rhs, t.n),
                ItemKind::CaseSplit(p) => format!("case {p}"),
                ItemKind::Sym(i) => format!("sym-state #{i}"),
            };
            nodes.insert(i, (item.step.clone(), item.premises.clone(), rendering));
            stack.extend(item.premises.iter().copied().filter(|&p| p != u32::MAX));
        }
        ProofTrace { final_step, final_premises, nodes }
    }

    fn exhaust_summary(&self) -> ExhaustSummary {
        let open_boxes: Vec<(BoxId, Option<Term>, u32)> = self
            .boxes
            .iter()
            .filter(|b| !b.closed)
            .map(|b| (b.id, b.assumption.clone(), b.depth))
            .collect();
        let mut detail = String::new();
        for b in &self.boxes {
            if b.closed {
                continue;
            }
            detail.push_str(&format!(
                "box {} (depth {}){}: {} facts, {} orders\n",
                b.id,
                b.depth,
                match &b.assumption {
                    Some(a) => format!(" assuming {a}"),
                    None => String::new(),
                },
                b.facts.len(),
                b.orders.len()
            ));
            if let Some(s) = b.cur_sym {
                let sym = &self.sym_states[s];
                detail.push_str(&format!(
                    "  sym: {} factors, {} commands left\n",
                    sym.factors.len(),
                    sym.program.len()
                ));
            }
        }
        ExhaustSummary {
            items_added: self.stats.items_added,
            queue_residue: self.queue.len(),
            open_boxes,
            over_budget: self.over_budget,
            detail,
        }
    }

    // ------------------------------------------------------------------
    // activation
    // ------------------------------------------------------------------

    fn activate(&mut self, id: ItemId) {
        let item = self.items[id as usize].clone();
        let b = item.box_id;
        // authoritative duplicate check
        match &item.kind {
            ItemKind::Fact(p) => {
                if self.fact_known(b, p) {
                    return;
                }
            }
            ItemKind::TermOcc(t) => {
                let tid = self.bank.intern(t);
                if self.boxes[b as usize].cong.contains(tid)
                    && self.boxes[b as usize].occs.contains(&tid)
                {
                    return;
                }
            }
            ItemKind::CaseSplit(p) => {
                if self.split_redundant(b, p) {
                    return;
                }
            }
            ItemKind::NatOrder(t) => {
                if self.order_entailed(b, t) {
                    return;
                }
            }
            ItemKind::Sym(_) => {}
        }
        self.items[id as usize].active = true;
        self.stats.items_activated += 1;
        self.note(|| format!("[{b}] activate #{id}: {:?}", item.kind));
        match item.kind {
            ItemKind::Fact(p) => self.activate_fact(id, b, p),
            ItemKind::TermOcc(t) => self.activate_occ(id, b, t),
            ItemKind::NatOrder(t) => self.activate_order(id, b, t, true),
            ItemKind::CaseSplit(p) => self.open_box_for(id, b, p),
            ItemKind::Sym(s) => {
                let sb = self.sym_states[s].box_id;
                crate::sep_logic::register_sym_terms(self, s);
                self.sym_dirty.insert(sb);
            }
        }
    }

    fn activate_fact(&mut self, id: ItemId, b: BoxId, p: Term) {
        let pid = self.bank.intern(&p);
        // goal check for find-instance searches
        if b == 0 {
            if let GoalMode::FindInstance { pattern, .. } = &self.goal.clone() {
                let cands = {
                    let bx = &mut self.boxes[0];
                    bx.cong.add_term(&self.bank, pid);
                    crate::tables::Cong::ematch_candidate(&bx.cong, &self.bank, pattern, pid)
                };
                if let Some(s) = cands.into_iter().next() {
                    self.found_witness = Some(s.clone());
                    self.proved = Some((Name::from("witness"), vec![id]));
                    return;
                }
            }
        }

        let eq = p.as_equation().map(|(l, r)| (l.clone(), r.clone()));
        let neg_eq = p
            .as_negation()
            .and_then(|n| n.as_equation())
            .map(|(l, r)| (l.clone(), r.clone()));
        let neg = p.as_negation().cloned();

        for x in self.subtree(b) {
            if self.boxes[x as usize].closed || self.proved.is_some() {
                continue;
            }
            {
                let bx = &mut self.boxes[x as usize];
                bx.cong.add_term(&self.bank, pid);
                bx.facts.push((pid, id));
            }
            // polarity bookkeeping and direct contradiction checks
            let rep = {
                let bx = &self.boxes[x as usize];
                bx.cong.find(pid)
            };
            let clash = {
                let bx = &self.boxes[x as usize];
                bx.falses.get(&rep).copied()
            };
            if let Some(other) = clash {
                self.contradiction(x, "contra", vec![id, other]);
                continue;
            }
            self.boxes[x as usize].truths.insert(rep, id);

            if let Some(inner) = &neg {
                let iid = self.bank.intern(inner);
                let bx = &mut self.boxes[x as usize];
                bx.cong.add_term(&self.bank, iid);
                let irep = bx.cong.find(iid);
                if let Some(other) = bx.truths.get(&irep).copied() {
                    self.contradiction(x, "contra", vec![id, other]);
                    continue;
                }
                self.boxes[x as usize].falses.insert(irep, id);
            }
            // property table
            if let Term::App(h, args) = &p {
                if args.len() == 1 && self.boxes[x as usize].props.is_registered(&h.name) {
                    let arg = self.bank.intern(&args[0]);
                    self.boxes[x as usize].props.add(h.name.clone(), arg, id);
                }
            }
            // equations feed the rewrite table
            if let Some((l, r)) = &eq {
                let li = self.bank.intern(l);
                let ri = self.bank.intern(r);
                let bx = &mut self.boxes[x as usize];
                bx.cong.add_term(&self.bank, li);
                bx.cong.add_term(&self.bank, ri);
                bx.cong.merge(&self.bank, li, ri);
            }
            // disequalities are watched for class collisions
            if let Some((l, r)) = &neg_eq {
                let li = self.bank.intern(l);
                let ri = self.bank.intern(r);
                let bx = &mut self.boxes[x as usize];
                bx.cong.add_term(&self.bank, li);
                bx.cong.add_term(&self.bank, ri);
                bx.diseqs.push((li, ri, id));
                if bx.cong.equiv_ids(li, ri) {
                    self.contradiction(x, "diseq", vec![id]);
                    continue;
                }
            }
            self.process_merges(x);
            if self.boxes[x as usize].closed || self.proved.is_some() {
                continue;
            }
            self.dispatch_fact(x, pid, id);
            self.sym_dirty.insert(x);
        }

        if self.proved.is_some() {
            return;
        }

        // box-local consequences: occurrences, ingestion, witness intros
        if !self.boxes[b as usize].closed {
            self.spawn_occurrences(b, &p, id);
            self.ingest_fact(b, &p, id);
            self.pred_intro(b, &p, id);
            self.data_witness(b, &p, id);
        }
    }

    fn spawn_occurrences(&mut self, b: BoxId, p: &Term, id: ItemId) {
        let mut subs = Vec::new();
        collect_apps(p, &mut subs);
        for t in subs {
            self.add_item(b, ItemKind::TermOcc(t), None, "occ", vec![id]);
        }
    }

    /// NAT_ORDER triples from an inequality-shaped fact, plus zero edges
    /// tying every mentioned atom to the ZERO atom (sound over nat).
    fn ingest_fact(&mut self, b: BoxId, p: &Term, id: ItemId) {
        for gt in nat_arith::ingest_inequality(p) {
            self.ingest_gated(b, id, gt);
        }
    }

    fn ingest_gated(&mut self, b: BoxId, id: ItemId, gt: nat_arith::GatedTriple) {
        let mut evidence = vec![id];
        for gate in &gt.gates {
            match self.condition_evidence(b, gate) {
                Some(e) => evidence.push(e),
                None => {
                    self.boxes[b as usize].pending_gated.push((id, gt.clone()));
                    return;
                }
            }
        }
        let zero = nat_arith::zero_atom();
        for side in [&gt.triple.lhs, &gt.triple.rhs] {
            if side != &zero {
                self.add_item(
                    b,
                    ItemKind::NatOrder(NatOrderTriple {
                        lhs: zero.clone(),
                        rhs: side.clone(),
                        n: 0,
                    }),
                    Some(2),
                    "nat_nonneg",
                    vec![id],
                );
            }
        }
        self.add_item(b, ItemKind::NatOrder(gt.triple), Some(2), "nat_ingest", evidence);
    }

    /// Bounded-forall predicates: a negated instance introduces a witness.
    fn pred_intro(&mut self, b: BoxId, p: &Term, id: ItemId) {
        let Some(inner) = p.as_negation() else { return };
        let Term::App(h, args) = inner else { return };
        let Some(pred) = self.env.preds.get(&h.name).cloned() else { return };
        if args.len() != pred.params.len() {
            return;
        }
        let iid = self.bank.intern(inner);
        if !self.boxes[b as usize].pred_witnessed.insert(iid) {
            return;
        }
        let w = self.fresh_name(&pred.bound_var);
        let witness = Term::Free(w.clone(), term::sort_nat());
        let mut map: BTreeMap<Name, Term> = BTreeMap::new();
        for ((pn, _), a) in pred.params.iter().zip(args) {
            map.insert(pn.clone(), a.clone());
        }
        let bound = pred.bound.subst_frees(&map);
        map.insert(pred.bound_var.clone(), witness.clone());
        let body = pred.body.subst_frees(&map);
        self.add_item(
            b,
            ItemKind::Fact(term::mk_lt(witness, bound)),
            None,
            "forall_witness",
            vec![id],
        );
        self.add_item(b, ItemKind::Fact(mk_not(body)), None, "forall_witness", vec![id]);
    }

    /// Two-constructor exhaustiveness: from `~(t = c0)` obtain
    /// `t = c1(fresh...)` when t's class holds no constructor yet.
    fn data_witness(&mut self, b: BoxId, p: &Term, id: ItemId) {
        let Some(inner) = p.as_negation() else { return };
        let Some((l, r)) = inner.as_equation() else { return };
        let (t, c0) = match (l, r) {
            (t, Term::Const(n, _)) if self.env.ctor_sorts.contains_key(n) => (t, n.clone()),
            (Term::Const(n, _), t) if self.env.ctor_sorts.contains_key(n) => (t, n.clone()),
            _ => return,
        };
        let Some(dd) = self.env.datatype_of_ctor(&c0).cloned() else { return };
        if dd.ctors.len() != 2 {
            return;
        }
        let tid = self.bank.intern(t);
        {
            let bx = &mut self.boxes[b as usize];
            bx.cong.add_term(&self.bank, tid);
            // already constructor-headed here?
            let has_ctor = bx
                .cong
                .class_members(tid)
                .iter()
                .any(|&m| match self.bank.head(m) {
                    Some(hd) => self.env.ctor_sorts.contains_key(hd),
                    None => false,
                });
            if has_ctor {
                return;
            }
            if !bx.data_witnessed.insert(tid) {
                return;
            }
        }
        let other = dd.ctors.iter().find(|c| c.name != c0).unwrap().clone();
        let fields: Vec<Term> = other
            .args
            .iter()
            .enumerate()
            .map(|(k, s)| {
                let n = self.fresh_name(&format!("{}{}", other.name, k));
                Term::Free(n, s.clone())
            })
            .collect();
        let rhs = if fields.is_empty() {
            Term::Const(other.name.clone(), dd.sort.clone())
        } else {
            Term::App(
                crate::term::FuncHead { name: other.name.clone(), sort: dd.sort.clone() },
                fields,
            )
        };
        self.add_item(
            b,
            ItemKind::Fact(term::mk_eq(t.clone(), rhs)),
            None,
            "exhaustiveness",
            vec![id],
        );
    }

    fn activate_occ(&mut self, id: ItemId, b: BoxId, t: Term) {
        let tid = self.bank.intern(&t);
        let is_nat = t.sort().name() == "nat";
        for x in self.subtree(b) {
            if self.boxes[x as usize].closed || self.proved.is_some() {
                continue;
            }
            {
                let bx = &mut self.boxes[x as usize];
                bx.cong.add_term(&self.bank, tid);
                bx.occs.insert(tid);
                if is_nat && !bx.nat_occs.contains(&tid) {
                    bx.nat_occs.push(tid);
                }
            }
            self.process_merges(x);
            if self.boxes[x as usize].closed || self.proved.is_some() {
                continue;
            }
            self.dispatch_occ(x, tid, Some(id));
            if is_nat {
                crate::nat_arith::pair_step_all(self, x, tid, id);
            }
            self.sym_dirty.insert(x);
        }
        // proactive well-formedness boxes open at the occurrence's own box
        if !self.boxes[b as usize].closed {
            self.wf_proactive(b, tid, id);
        }
    }

    pub(crate) fn wf_proactive(&mut self, b: BoxId, tid: TermId, id: ItemId) {
        let Some(head) = self.bank.head(tid).cloned() else { return };
        let schemas: Vec<_> = self
            .env
            .wf_schemas
            .iter()
            .filter(|s| s.proactive && s.func == head)
            .cloned()
            .collect();
        for schema in schemas {
            if let Some(conds) = schema.instantiate(&self.bank, tid) {
                for cond in conds {
                    if self.condition_evidence(b, &cond).is_none() {
                        self.add_item(
                            b,
                            ItemKind::CaseSplit(mk_not(cond)),
                            None,
                            "wf_proactive",
                            vec![id],
                        );
                    }
                }
            }
        }
    }

    fn activate_order(&mut self, id: ItemId, b: BoxId, t: NatOrderTriple, as_fact: bool) {
        let li = self.bank.intern(&t.lhs);
        let ri = self.bank.intern(&t.rhs);
        let prop = nat_arith::triple_prop(&t);
        let pid = self.bank.intern(&prop);
        for x in self.subtree(b) {
            if self.boxes[x as usize].closed || self.proved.is_some() {
                continue;
            }
            {
                let bx = &mut self.boxes[x as usize];
                bx.cong.add_term(&self.bank, li);
                bx.cong.add_term(&self.bank, ri);
                bx.cong.add_term(&self.bank, pid);
                bx.orders.push(OrderEntry { lhs: li, rhs: ri, n: t.n, item: id });
                // derived bounds behave like facts for lookups and dispatch
                let rep = bx.cong.find(pid);
                bx.truths.entry(rep).or_insert(id);
                bx.facts.push((pid, id));
            }
            self.process_merges(x);
            if self.boxes[x as usize].closed || self.proved.is_some() {
                continue;
            }
            self.resolve_and_join(x, li, ri, t.n, id);
            if self.boxes[x as usize].closed || self.proved.is_some() {
                continue;
            }
            if as_fact {
                self.dispatch_fact(x, pid, id);
            }
            self.retry_blocked_arith(x);
            self.sym_dirty.insert(x);
        }
    }

    /// The two difference-logic steps: resolve (`<a,a,n>` with n < 0 closes
    /// the box) and transitivity against every visible entry.
    fn resolve_and_join(&mut self, x: BoxId, li: TermId, ri: TermId, n: i64, id: ItemId) {
        let (rl, rr) = {
            let bx = &self.boxes[x as usize];
            (bx.cong.find(li), bx.cong.find(ri))
        };
        if rl == rr && n < 0 {
            self.contradiction(x, "nat_resolve", vec![id]);
            return;
        }
        let entries = self.boxes[x as usize].orders.clone();
        for e in entries {
            let bx = &self.boxes[x as usize];
            if !bx.cong.contains(e.lhs) || !bx.cong.contains(e.rhs) {
                continue;
            }
            let (el, er) = (bx.cong.find(e.lhs), bx.cong.find(e.rhs));
            // <e.lhs, e.rhs, e.n> ; <li, ri, n> with e.rhs ~ li
            if er == rl && e.item != id {
                let lhs = self.bank.term(e.lhs).clone();
                let rhs = self.bank.term(ri).clone();
                self.add_item(
                    x,
                    ItemKind::NatOrder(NatOrderTriple { lhs, rhs, n: e.n + n }),
                    Some(2),
                    "nat_trans",
                    vec![e.item, id],
                );
            }
            // <li, ri, n> ; <e.lhs, e.rhs, e.n> with ri ~ e.lhs
            if el == rr && e.item != id {
                let lhs = self.bank.term(li).clone();
                let rhs = self.bank.term(e.rhs).clone();
                self.add_item(
                    x,
                    ItemKind::NatOrder(NatOrderTriple { lhs, rhs, n: n + e.n }),
                    Some(2),
                    "nat_trans",
                    vec![id, e.item],
                );
            }
        }
    }

    fn retry_blocked_arith(&mut self, x: BoxId) {
        let blocked = std::mem::take(&mut self.boxes[x as usize].blocked_pairs);
        for (a, bq) in blocked {
            crate::nat_arith::pair_step(self, x, a, bq);
        }
        let gated = std::mem::take(&mut self.boxes[x as usize].pending_gated);
        for (item, gt) in gated {
            self.ingest_gated(x, item, gt);
        }
    }

    pub(crate) fn blocked_pair(&mut self, x: BoxId, a: TermId, b: TermId) {
        let bx = &mut self.boxes[x as usize];
        if !bx.blocked_pairs.contains(&(a, b)) {
            bx.blocked_pairs.push((a, b));
        }
    }

    // ------------------------------------------------------------------
    // boxes
    // ------------------------------------------------------------------

    fn open_box_for(&mut self, id: ItemId, parent: BoxId, assumption: Term) {
        if self.boxes[parent as usize].depth + 1 > self.config.max_box_depth {
            self.stats.splits_dropped += 1;
            self.note(|| format!("[{parent}] split dropped at depth cap: {assumption}"));
            return;
        }
        let aid = self.bank.intern(&assumption);
        self.boxes[parent as usize].splits.push(aid);
        let child_id = self.boxes.len() as BoxId;
        let child = self.boxes[parent as usize].child_of(child_id, assumption.clone());
        self.boxes.push(child);
        self.boxes[parent as usize].children.push(child_id);
        self.stats.boxes_opened += 1;
        self.note(|| format!("[{parent}] open box {child_id} assuming {assumption}"));
        let aitem = self.add_item(child_id, ItemKind::Fact(assumption), Some(0), "assume", vec![id]);
        self.boxes[child_id as usize].assumption_item = aitem;
        self.sym_dirty.insert(child_id);
    }

    pub fn open_box(&mut self, parent: BoxId, assumption: Term, from: ItemId) {
        self.open_box_for(from, parent, assumption);
    }

    /// Record a contradiction in `x`. Closing the initial box is the Proved
    /// outcome; otherwise the negated assumption lands in the parent.
    pub fn contradiction(&mut self, x: BoxId, step: &str, evidence: Vec<ItemId>) {
        if self.boxes[x as usize].closed || self.proved.is_some() {
            return;
        }
        if x == 0 {
            self.note(|| format!("[0] contradiction via {step}"));
            self.proved = Some((Name::from(step), evidence));
            return;
        }
        self.close_box(x, step, evidence);
    }

    pub fn close_box(&mut self, x: BoxId, step: &str, evidence: Vec<ItemId>) {
        let parent = self.boxes[x as usize].parent.expect("initial box handled by caller");
        let assumption =
            self.boxes[x as usize].assumption.clone().expect("non-root boxes assume");
        // close the subtree
        let mut stack = vec![x];
        while let Some(y) = stack.pop() {
            self.boxes[y as usize].closed = true;
            stack.extend(self.boxes[y as usize].children.clone());
        }
        self.note(|| format!("[{x}] closed ({step}); ~({assumption}) to {parent}"));
        let mut premises = evidence;
        if let Some(ai) = self.boxes[x as usize].assumption_item {
            premises.push(ai);
        }
        self.add_item(parent, ItemKind::Fact(mk_not(assumption)), None, "close_box", premises);
    }

    // ------------------------------------------------------------------
    // merge processing: incremental re-matching
    // ------------------------------------------------------------------

    fn process_merges(&mut self, x: BoxId) {
        loop {
            let events = self.boxes[x as usize].cong.drain_events();
            if events.is_empty() {
                return;
            }
            // rekey polarity maps
            for e in &events {
                let bx = &mut self.boxes[x as usize];
                let t1 = bx.truths.remove(&e.old_rep_a);
                let t2 = bx.truths.remove(&e.old_rep_b);
                if let Some(it) = t1.or(t2) {
                    bx.truths.insert(e.new_rep, it);
                }
                let f1 = bx.falses.remove(&e.old_rep_a);
                let f2 = bx.falses.remove(&e.old_rep_b);
                if let Some(it) = f1.or(f2) {
                    bx.falses.insert(e.new_rep, it);
                }
            }
            // polarity collision?
            for e in &events {
                let bx = &self.boxes[x as usize];
                let rep = bx.cong.find(e.new_rep);
                if let (Some(&t), Some(&f)) = (bx.truths.get(&rep), bx.falses.get(&rep)) {
                    self.contradiction(x, "contra", vec![t, f]);
                    return;
                }
            }
            // watched disequalities
            let diseqs = self.boxes[x as usize].diseqs.clone();
            for (l, r, item) in diseqs {
                let bx = &self.boxes[x as usize];
                if bx.cong.contains(l) && bx.cong.contains(r) && bx.cong.equiv_ids(l, r) {
                    self.contradiction(x, "diseq", vec![item]);
                    return;
                }
            }
            if self.boxes[x as usize].closed {
                return;
            }

            // affected classes: merged members plus transitive use-parents
            let mut affected: BTreeSet<TermId> = BTreeSet::new();
            let mut frontier: Vec<TermId> = Vec::new();
            for e in &events {
                for t in [e.a, e.b] {
                    let bx = &self.boxes[x as usize];
                    if bx.cong.contains(t) {
                        frontier.push(bx.cong.find(t));
                    }
                }
            }
            let mut terms_to_redo: BTreeSet<TermId> = BTreeSet::new();
            while let Some(rep) = frontier.pop() {
                if !affected.insert(rep) {
                    continue;
                }
                let bx = &self.boxes[x as usize];
                for &m in bx.cong.class_members(rep) {
                    terms_to_redo.insert(m);
                }
                for p in bx.cong.uses_of(rep) {
                    let prep = bx.cong.find(p);
                    if !affected.contains(&prep) {
                        frontier.push(prep);
                    }
                    terms_to_redo.insert(p);
                }
            }

            // re-dispatch occurrence-triggered rules on the affected terms
            for t in terms_to_redo.iter().copied() {
                if self.boxes[x as usize].closed || self.proved.is_some() {
                    return;
                }
                self.dispatch_occ(x, t, None);
                self.wf_proactive(x, t, u32::MAX);
            }
            // re-dispatch fact rules for facts whose class changed
            let facts = self.boxes[x as usize].facts.clone();
            for (fid, item) in facts {
                if self.boxes[x as usize].closed || self.proved.is_some() {
                    return;
                }
                let rep = {
                    let bx = &self.boxes[x as usize];
                    if !bx.cong.contains(fid) {
                        continue;
                    }
                    bx.cong.find(fid)
                };
                if affected.contains(&rep) {
                    self.dispatch_fact(x, fid, item);
                }
            }
            // re-join orders touching affected classes
            let entries = self.boxes[x as usize].orders.clone();
            for e in entries {
                if self.boxes[x as usize].closed || self.proved.is_some() {
                    return;
                }
                let bx = &self.boxes[x as usize];
                if !bx.cong.contains(e.lhs) || !bx.cong.contains(e.rhs) {
                    continue;
                }
                let (rl, rr) = (bx.cong.find(e.lhs), bx.cong.find(e.rhs));
                if affected.contains(&rl) || affected.contains(&rr) {
                    self.resolve_and_join(x, e.lhs, e.rhs, e.n, e.item);
                }
            }
            if self.boxes[x as usize].closed || self.proved.is_some() {
                return;
            }
            self.retry_blocked_arith(x);
            self.sym_dirty.insert(x);
        }
    }

    // ------------------------------------------------------------------
    // rule dispatch
    // ------------------------------------------------------------------

    fn class_heads(&self, x: BoxId, tid: TermId) -> BTreeSet<Name> {
        let bx = &self.boxes[x as usize];
        if !bx.cong.contains(tid) {
            return BTreeSet::new();
        }
        bx.cong
            .class_members(tid)
            .iter()
            .filter_map(|&m| self.bank.head(m).cloned())
            .collect()
    }

    fn dispatch_fact(&mut self, x: BoxId, pid: TermId, item: ItemId) {
        let heads = self.class_heads(x, pid);
        let mut entries: Vec<(usize, usize)> = Vec::new();
        for h in &heads {
            if let Some(v) = self.fact_index.get(h) {
                entries.extend(v.iter().copied());
            }
        }
        entries.sort_unstable();
        entries.dedup();
        for (ri, si) in entries {
            if self.boxes[x as usize].closed || self.proved.is_some() {
                return;
            }
            let rule = self.rules[ri].clone();
            let pattern = rule.slots[si].pattern().clone();
            let matches = {
                let bx = &self.boxes[x as usize];
                bx.cong.ematch_candidate(&self.bank, &pattern, pid)
            };
            for s in matches {
                self.complete_rule(x, &rule, si, s, vec![item]);
            }
        }
    }

    fn dispatch_occ(&mut self, x: BoxId, tid: TermId, occ_item: Option<ItemId>) {
        let heads = self.class_heads(x, tid);
        let mut entries: Vec<(usize, usize)> = Vec::new();
        for h in &heads {
            if let Some(v) = self.occ_index.get(h) {
                entries.extend(v.iter().copied());
            }
        }
        entries.sort_unstable();
        entries.dedup();
        let evidence: Vec<ItemId> = occ_item.into_iter().collect();
        for (ri, si) in entries {
            if self.boxes[x as usize].closed || self.proved.is_some() {
                return;
            }
            let rule = self.rules[ri].clone();
            let pattern = rule.slots[si].pattern().clone();
            let matches = {
                let bx = &self.boxes[x as usize];
                bx.cong.ematch_candidate(&self.bank, &pattern, tid)
            };
            for s in matches {
                self.complete_rule(x, &rule, si, s, evidence.clone());
            }
        }
    }

    /// Complete all remaining slots of `rule` from the stores at `x`,
    /// then emit. `done` is the slot already matched by the entry event.
    fn complete_rule(
        &mut self,
        x: BoxId,
        rule: &Arc<CompiledRule>,
        done: usize,
        subst: Subst,
        evidence: Vec<ItemId>,
    ) {
        self.fill_slots(x, rule, done, 0, subst, evidence);
    }

    fn fill_slots(
        &mut self,
        x: BoxId,
        rule: &Arc<CompiledRule>,
        done: usize,
        at: usize,
        subst: Subst,
        evidence: Vec<ItemId>,
    ) {
        if self.boxes[x as usize].closed || self.proved.is_some() || self.over_budget {
            return;
        }
        if at == rule.slots.len() {
            self.finish_rule(x, rule, subst, evidence);
            return;
        }
        if at == done {
            self.fill_slots(x, rule, done, at + 1, subst, evidence);
            return;
        }
        match &rule.slots[at] {
            Slot::Occ(pat) => {
                let head = match pat.head_name() {
                    Some(h) => h.to_string(),
                    None => return,
                };
                let cands: Vec<TermId> = {
                    let bx = &self.boxes[x as usize];
                    let mut v: Vec<TermId> = bx.cong.terms_with_head(&head).to_vec();
                    v.sort_unstable();
                    v.dedup();
                    v
                };
                let mut seen_reps = BTreeSet::new();
                for c in cands {
                    let rep = {
                        let bx = &self.boxes[x as usize];
                        bx.cong.find(c)
                    };
                    if !seen_reps.insert(rep) {
                        continue;
                    }
                    let matches = {
                        let bx = &self.boxes[x as usize];
                        bx.cong.ematch_candidate(&self.bank, pat, c)
                    };
                    for ext in matches {
                        if let Some(merged) = self.merge_substs(x, &subst, &ext) {
                            self.fill_slots(x, rule, done, at + 1, merged, evidence.clone());
                        }
                    }
                }
            }
            Slot::Premise { pattern, route } => {
                match subst.apply(pattern) {
                    Ok(instance) => {
                        match self.condition_evidence(x, &instance) {
                            Some(e) => {
                                let mut ev = evidence.clone();
                                if e != u32::MAX {
                                    ev.push(e);
                                }
                                self.fill_slots(x, rule, done, at + 1, subst, ev);
                            }
                            None => {
                                if rule.goal_slot == Some(at) {
                                    // prove the remaining premise instead
                                    self.fill_goal_rest(x, rule, done, at, subst, evidence, instance);
                                } else if *route == SideRoute::SplitToProve {
                                    self.add_item(
                                        x,
                                        ItemKind::CaseSplit(mk_not(instance)),
                                        None,
                                        &format!("{}[prove]", rule.name),
                                        evidence.clone(),
                                    );
                                }
                            }
                        }
                    }
                    Err(_) => {
                        // premise still has unbound variables: match facts
                        let facts = self.boxes[x as usize].facts.clone();
                        for (fid, item) in facts {
                            if self.boxes[x as usize].closed || self.proved.is_some() {
                                return;
                            }
                            if !self.boxes[x as usize].cong.contains(fid) {
                                continue;
                            }
                            let matches = {
                                let bx = &self.boxes[x as usize];
                                bx.cong.ematch_candidate(&self.bank, pattern, fid)
                            };
                            for ext in matches {
                                if let Some(merged) = self.merge_substs(x, &subst, &ext) {
                                    let mut ev = evidence.clone();
                                    ev.push(item);
                                    self.fill_slots(x, rule, done, at + 1, merged, ev);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// The goal premise of a backward rule was not found: the remaining
    /// slots (if any) must still be discharged, then the negated premise is
    /// emitted as a new goal fact.
    fn fill_goal_rest(
        &mut self,
        x: BoxId,
        rule: &Arc<CompiledRule>,
        done: usize,
        goal_at: usize,
        subst: Subst,
        evidence: Vec<ItemId>,
        goal_instance: Term,
    ) {
        // remaining slots after the goal premise
        let mut ok = true;
        let mut ev = evidence;
        for i in (goal_at + 1)..rule.slots.len() {
            if i == done {
                continue;
            }
            match &rule.slots[i] {
                Slot::Premise { pattern, .. } => match subst.apply(pattern) {
                    Ok(inst) => match self.condition_evidence(x, &inst) {
                        Some(e) => {
                            if e != u32::MAX {
                                ev.push(e);
                            }
                        }
                        None => {
                            ok = false;
                            break;
                        }
                    },
                    Err(_) => {
                        ok = false;
                        break;
                    }
                },
                Slot::Occ(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            return;
        }
        if rule.measure.is_some() && self.measure_evidence(x, rule, &subst).is_none() {
            return;
        }
        self.add_item(
            x,
            ItemKind::Fact(mk_not(goal_instance)),
            rule.score_override,
            &rule.name,
            ev,
        );
    }

    fn measure_evidence(
        &mut self,
        x: BoxId,
        rule: &Arc<CompiledRule>,
        subst: &Subst,
    ) -> Option<Vec<ItemId>> {
        match &rule.measure {
            None => Some(vec![]),
            Some(mc) => {
                let small = subst.apply(&mc.small).ok()?;
                let q = NatOrderTriple { lhs: small, rhs: mc.big.clone(), n: -1 };
                let e = self.order_evidence(x, &q)?;
                Some(if e == u32::MAX { vec![] } else { vec![e] })
            }
        }
    }

    fn finish_rule(&mut self, x: BoxId, rule: &Arc<CompiledRule>, subst: Subst, evidence: Vec<ItemId>) {
        let Some(measure_ev) = self.measure_evidence(x, rule, &subst) else { return };
        let mut ev = evidence;
        ev.extend(measure_ev);
        match rule.emit_under(&subst) {
            Ok(Emit::Fact(p)) => {
                self.add_item(x, ItemKind::Fact(p), rule.score_override, &rule.name, ev);
            }
            Ok(Emit::Equation(l, r)) => {
                let p = term::mk_eq(l, r);
                self.add_item(x, ItemKind::Fact(p), rule.score_override, &rule.name, ev);
            }
            Ok(Emit::Split(p)) => {
                self.add_item(x, ItemKind::CaseSplit(p), rule.score_override, &rule.name, ev);
            }
            Err(_) => {
                // a malformed step output aborts the search loudly
                panic!("rule {} emitted with unbound variables", rule.name);
            }
        }
    }

    pub(crate) fn merge_substs(&mut self, x: BoxId, base: &Subst, ext: &Subst) -> Option<Subst> {
        let mut merged = base.clone();
        for (n, t) in ext.iter() {
            match merged.get(n) {
                Some(prev) => {
                    let a = self.bank.intern(prev);
                    let b = self.bank.intern(t);
                    let bx = &mut self.boxes[x as usize];
                    bx.cong.add_term(&self.bank, a);
                    bx.cong.add_term(&self.bank, b);
                    if !bx.cong.equiv_ids(a, b) {
                        return None;
                    }
                }
                None => merged.bind(n.clone(), t.clone()),
            }
        }
        Some(merged)
    }

    // ------------------------------------------------------------------
    // goal setup helpers (used by scripts and theory_io)
    // ------------------------------------------------------------------

    pub fn seed_fact(&mut self, prop: Term, step: &str) -> Option<ItemId> {
        self.add_item(0, ItemKind::Fact(prop), None, step, vec![])
    }

    pub fn seed_order(&mut self, t: NatOrderTriple) -> Option<ItemId> {
        self.add_item(0, ItemKind::NatOrder(t), Some(2), "seed", vec![])
    }

    pub fn seed_sym(&mut self, factors: Vec<Assertion>, program: Vec<SpineStep>) {
        let idx = self.sym_states.len();
        self.sym_states.push(SymState {
            factors,
            program,
            box_id: 0,
            item: 0,
            last_ret: None,
            expanded: false,
        });
        let item = self.add_item(0, ItemKind::Sym(idx), Some(0), "goal", vec![]);
        self.sym_states[idx].item = item.unwrap_or(0);
        self.boxes[0].cur_sym = Some(idx);
    }
}

fn collect_apps(t: &Term, out: &mut Vec<Term>) {
    if let Term::App(_, args) = t {
        for a in args {
            collect_apps(a, out);
        }
        if !out.contains(t) {
            out.push(t.clone());
        }
    }
}

/// Convenience wrapper matching the specification's entry point.
pub fn run_saturation(state: &mut SearchState) -> Outcome {
    state.run()
}
