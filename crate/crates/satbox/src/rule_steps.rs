//! Compiles declaratively stated theorems into proof steps.
//!
//! A rule is a list of premise patterns and a conclusion, plus an attribute
//! saying how the engine should trigger it: forward rules fire on matching
//! facts, backward rules on the negated conclusion, term-pattern and rewrite
//! rules on term occurrences, case-split rules open a box. Side conditions
//! are discharged against the property/well-formedness tables and the fact
//! store rather than being matched.

use std::collections::BTreeMap;
use std::sync::Arc;

use thiserror::Error;

use crate::term::{mk_not, Name, Subst, Term};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RuleConclusion {
    Prop(Term),
    Eq(Term, Term),
}

/// How a case-split or term-pattern rule is triggered.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TriggerSpec {
    /// A registered term occurrence E-matching the pattern.
    Term(Term),
    /// A visible fact E-matching the pattern.
    Fact(Term),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RuleAttrSpec {
    Forward,
    Backward,
    TermPattern(Term),
    /// Rewrite rules default to triggering on the conclusion's left side.
    Rewrite { trigger: Option<Term> },
    EagerRewrite(Term),
    CaseSplit { trigger: TriggerSpec, split: Term },
}

/// Where a premise is looked up once it is fully instantiated.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SideRoute {
    /// Match against the item store (may bind further variables).
    MatchedItem,
    /// Property table: single-argument registered predicate.
    PropertyTable,
    /// Well-formedness table / fact store, no new bindings.
    WfTable,
    /// Open a box with the negated premise as assumption (proactive proof).
    SplitToProve,
}

/// Declarative rule as written in a theory file.
#[derive(Clone, Debug)]
pub struct RuleSpec {
    pub name: Name,
    pub premises: Vec<Term>,
    pub conclusion: RuleConclusion,
    pub attr: RuleAttrSpec,
    /// Premise index -> routing; unrouted premises default to MatchedItem.
    pub side_condition_map: BTreeMap<usize, SideRoute>,
    pub score_override: Option<u64>,
    pub ruleset: Option<Name>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CompileError {
    #[error("rule {rule}: conclusion variable ?{var} is not bound by premises or trigger")]
    UnboundConclusion { rule: String, var: String },
    #[error("rule {rule}: side-condition premise {idx} has unbound variable ?{var}")]
    UnboundSideCondition { rule: String, idx: usize, var: String },
    #[error("rule {rule}: backward goal premise has unbound variable ?{var}")]
    UnboundGoal { rule: String, var: String },
    #[error("rule {rule}: {msg}")]
    Malformed { rule: String, msg: String },
}

/// One matching slot of a compiled rule, in matching order.
#[derive(Clone, Debug)]
pub enum Slot {
    /// A term occurrence that must exist in the box scope.
    Occ(Term),
    /// A premise to discharge (facts, tables, or the difference-logic
    /// closure, depending on shape and route). May bind variables when the
    /// route allows matching.
    Premise { pattern: Term, route: SideRoute },
}

impl Slot {
    pub fn pattern(&self) -> &Term {
        match self {
            Slot::Occ(p) => p,
            Slot::Premise { pattern, .. } => pattern,
        }
    }
}

#[derive(Clone, Debug)]
pub enum Emit {
    Fact(Term),
    Equation(Term, Term),
    Split(Term),
}

/// Measure premise of an induction-hypothesis rule: the instantiated
/// `small` measure must be strictly below the fixed `big` measure in the
/// difference-logic closure.
#[derive(Clone, Debug)]
pub struct MeasureCheck {
    pub small: Term,
    pub big: Term,
}

/// A rule compiled for the engine's dispatcher.
#[derive(Clone, Debug)]
pub struct CompiledRule {
    pub name: Name,
    pub slots: Vec<Slot>,
    pub emit: Emit,
    /// Backward rules: index of the premise slot that is emitted negated
    /// when everything else is discharged but the premise itself is not
    /// found. When it is found, the conclusion is emitted directly.
    pub goal_slot: Option<usize>,
    pub measure: Option<MeasureCheck>,
    pub score_override: Option<u64>,
    pub ruleset: Option<Name>,
}

fn note_bound(t: &Term, bound: &mut Vec<Name>) {
    for (n, _) in t.svars() {
        if !bound.contains(&n) {
            bound.push(n);
        }
    }
}

fn unbound_var(t: &Term, bound: &[Name]) -> Option<Name> {
    t.svars().into_iter().map(|(n, _)| n).find(|n| !bound.contains(n))
}

/// Compile a rule, checking the binding invariants.
pub fn compile(spec: &RuleSpec) -> Result<Arc<CompiledRule>, CompileError> {
    let rule = spec.name.to_string();
    let mut slots: Vec<Slot> = Vec::new();
    let mut bound: Vec<Name> = Vec::new();
    let mut goal_slot = None;

    let conclusion_term = match &spec.conclusion {
        RuleConclusion::Prop(p) => p.clone(),
        RuleConclusion::Eq(l, r) => crate::term::mk_eq(l.clone(), r.clone()),
    };

    let route_of =
        |idx: usize| spec.side_condition_map.get(&idx).copied().unwrap_or(SideRoute::MatchedItem);

    let mut push_premises = |spec: &RuleSpec,
                             slots: &mut Vec<Slot>,
                             bound: &mut Vec<Name>|
     -> Result<(), CompileError> {
        for (i, p) in spec.premises.iter().enumerate() {
            let route = route_of(i);
            if route != SideRoute::MatchedItem {
                if let Some(v) = unbound_var(p, bound) {
                    return Err(CompileError::UnboundSideCondition {
                        rule: spec.name.to_string(),
                        idx: i,
                        var: v.to_string(),
                    });
                }
            }
            note_bound(p, bound);
            slots.push(Slot::Premise { pattern: p.clone(), route });
        }
        Ok(())
    };

    match &spec.attr {
        RuleAttrSpec::Forward => {
            push_premises(spec, &mut slots, &mut bound)?;
        }
        RuleAttrSpec::Backward => {
            let neg_conclusion = mk_not(conclusion_term.clone());
            note_bound(&neg_conclusion, &mut bound);
            slots.push(Slot::Premise { pattern: neg_conclusion, route: SideRoute::MatchedItem });
            if spec.premises.is_empty() {
                return Err(CompileError::Malformed {
                    rule,
                    msg: "backward rule needs at least one premise".into(),
                });
            }
            let last = spec.premises.len() - 1;
            for (i, p) in spec.premises.iter().enumerate() {
                if i == last {
                    if let Some(v) = unbound_var(p, &bound) {
                        return Err(CompileError::UnboundGoal { rule, var: v.to_string() });
                    }
                    goal_slot = Some(slots.len());
                } else if route_of(i) != SideRoute::MatchedItem {
                    if let Some(v) = unbound_var(p, &bound) {
                        return Err(CompileError::UnboundSideCondition {
                            rule,
                            idx: i,
                            var: v.to_string(),
                        });
                    }
                }
                note_bound(p, &mut bound);
                slots.push(Slot::Premise { pattern: p.clone(), route: route_of(i) });
            }
        }
        RuleAttrSpec::TermPattern(trigger) | RuleAttrSpec::EagerRewrite(trigger) => {
            note_bound(trigger, &mut bound);
            slots.push(Slot::Occ(trigger.clone()));
            push_premises(spec, &mut slots, &mut bound)?;
        }
        RuleAttrSpec::Rewrite { trigger } => {
            let trig = match trigger {
                Some(t) => t.clone(),
                None => match &spec.conclusion {
                    RuleConclusion::Eq(l, _) => l.clone(),
                    RuleConclusion::Prop(_) => {
                        return Err(CompileError::Malformed {
                            rule,
                            msg: "rewrite rule conclusion must be an equation".into(),
                        })
                    }
                },
            };
            note_bound(&trig, &mut bound);
            slots.push(Slot::Occ(trig));
            push_premises(spec, &mut slots, &mut bound)?;
        }
        RuleAttrSpec::CaseSplit { trigger, split } => {
            match trigger {
                TriggerSpec::Term(t) => {
                    note_bound(t, &mut bound);
                    slots.push(Slot::Occ(t.clone()));
                }
                TriggerSpec::Fact(p) => {
                    note_bound(p, &mut bound);
                    slots.push(Slot::Premise {
                        pattern: p.clone(),
                        route: SideRoute::MatchedItem,
                    });
                }
            }
            push_premises(spec, &mut slots, &mut bound)?;
            if let Some(v) = unbound_var(split, &bound) {
                return Err(CompileError::UnboundConclusion { rule, var: v.to_string() });
            }
            return Ok(Arc::new(CompiledRule {
                name: spec.name.clone(),
                slots,
                emit: Emit::Split(split.clone()),
                goal_slot: None,
                measure: None,
                score_override: spec.score_override,
                ruleset: spec.ruleset.clone(),
            }));
        }
    }

    if let Some(v) = unbound_var(&conclusion_term, &bound) {
        return Err(CompileError::UnboundConclusion { rule, var: v.to_string() });
    }

    let emit = match &spec.conclusion {
        RuleConclusion::Prop(p) => Emit::Fact(p.clone()),
        RuleConclusion::Eq(l, r) => Emit::Equation(l.clone(), r.clone()),
    };

    Ok(Arc::new(CompiledRule {
        name: spec.name.clone(),
        slots,
        emit,
        goal_slot,
        measure: None,
        score_override: spec.score_override,
        ruleset: spec.ruleset.clone(),
    }))
}

impl CompiledRule {
    /// Instantiate this rule's emission under a completed substitution.
    pub fn emit_under(&self, s: &Subst) -> Result<Emit, crate::term::TermError> {
        Ok(match &self.emit {
            Emit::Fact(p) => Emit::Fact(s.apply(p)?),
            Emit::Equation(l, r) => Emit::Equation(s.apply(l)?, s.apply(r)?),
            Emit::Split(p) => Emit::Split(s.apply(p)?),
        })
    }
}

/// A named collection of rules that can be enabled or disabled together.
#[derive(Clone, Debug)]
pub struct RuleSet {
    pub name: Name,
    pub members: Vec<Name>,
    pub enabled: bool,
}

/// Apply using/hiding directives to the rule sets. Unknown names are a
/// configuration error. Changes affect searches started afterwards only.
pub fn set_enabled(
    sets: &mut BTreeMap<Name, RuleSet>,
    updates: &[(Name, bool)],
) -> Result<(), String> {
    for (name, on) in updates {
        match sets.get_mut(name) {
            Some(s) => s.enabled = *on,
            None => return Err(format!("unknown ruleset {name}")),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::term::{mk_le, mk_lt, sort_nat, sort_natlist, Term};

    fn sv(n: &str) -> Term {
        Term::svar(n, sort_nat())
    }
    fn svl(n: &str) -> Term {
        Term::svar(n, sort_natlist())
    }
    fn nth(l: Term, i: Term) -> Term {
        Term::app2("nth", sort_nat(), l, i)
    }
    fn len(l: Term) -> Term {
        Term::app1("length", sort_nat(), l)
    }

    #[test]
    fn backward_sortedness_rule_compiles() {
        // sorted xs ==> j < length xs ==> i <= j ==> xs!i <= xs!j
        let spec = RuleSpec {
            name: Name::from("sorted_nth_mono"),
            premises: vec![
                Term::app1("sorted", crate::term::sort_bool(), svl("xs")),
                mk_lt(sv("j"), len(svl("xs"))),
                mk_le(sv("i"), sv("j")),
            ],
            conclusion: RuleConclusion::Prop(mk_le(
                nth(svl("xs"), sv("i")),
                nth(svl("xs"), sv("j")),
            )),
            attr: RuleAttrSpec::Backward,
            side_condition_map: BTreeMap::from([
                (0, SideRoute::PropertyTable),
                (1, SideRoute::WfTable),
            ]),
            score_override: None,
            ruleset: None,
        };
        let rule = compile(&spec).unwrap();
        assert_eq!(rule.slots.len(), 4);
        assert_eq!(rule.goal_slot, Some(3));
    }

    #[test]
    fn unbound_conclusion_rejected() {
        let spec = RuleSpec {
            name: Name::from("bad"),
            premises: vec![mk_le(sv("i"), sv("j"))],
            conclusion: RuleConclusion::Prop(mk_le(sv("i"), sv("k"))),
            attr: RuleAttrSpec::Forward,
            side_condition_map: BTreeMap::new(),
            score_override: None,
            ruleset: None,
        };
        assert!(matches!(compile(&spec), Err(CompileError::UnboundConclusion { .. })));
    }

    #[test]
    fn side_condition_must_be_instantiated() {
        let spec = RuleSpec {
            name: Name::from("bad_sc"),
            premises: vec![mk_lt(sv("j"), len(svl("xs")))],
            conclusion: RuleConclusion::Prop(mk_le(sv("j"), sv("j"))),
            attr: RuleAttrSpec::TermPattern(sv("j")),
            side_condition_map: BTreeMap::from([(0, SideRoute::WfTable)]),
            score_override: None,
            ruleset: None,
        };
        // ?xs is not bound by the trigger ?j
        assert!(matches!(compile(&spec), Err(CompileError::UnboundSideCondition { .. })));
    }

    #[test]
    fn set_enabled_unknown_name_errors() {
        let mut sets = BTreeMap::new();
        sets.insert(
            Name::from("s1"),
            RuleSet { name: Name::from("s1"), members: vec![], enabled: true },
        );
        assert!(set_enabled(&mut sets, &[(Name::from("s1"), false)]).is_ok());
        assert!(!sets["s1"].enabled);
        assert!(set_enabled(&mut sets, &[(Name::from("nope"), false)]).is_err());
    }
}
