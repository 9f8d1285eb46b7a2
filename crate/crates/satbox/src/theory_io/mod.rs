//! Theory environment, file format, CLI driver and reports.
//!
//! A theory file is an ordered list of declarations; lemma order defines
//! rule availability (a proved lemma is registered as a rule or triple for
//! the lemmas after it). The environment below is the registry every other
//! module reads.

pub mod parse;
pub mod prelude;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::heap_lang::ProcedureDef;
use crate::rule_steps::{CompiledRule, RuleSet};
use crate::sep_logic::{AssnDef, StdTriple};
use crate::tables::WfSchema;
use crate::term::{Name, Sort, Term};

// re-exports appear once report.rs lands

/// A function signature. `internal` is the unique resolved name (overloads
/// carry a sort suffix); `surface` is what theory files write.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FuncDecl {
    pub internal: Name,
    pub surface: String,
    pub args: Vec<Sort>,
    pub ret: Sort,
}

/// How a defined function unfolds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DefKind {
    /// Single equation; unfolds eagerly as a rewrite.
    Plain,
    /// Per-constructor equations; each unfolds as a rewrite.
    Cases,
    /// Recursive definition evaluated by the oracle only; reasoning rules
    /// are declared by hand. Keeps the rewrite table away from
    /// non-terminating unfolding chains.
    Opaque,
}

#[derive(Clone, Debug)]
pub struct DefEquation {
    pub params: Vec<(Name, Sort)>,
    /// Argument patterns (schematic variables or constructor applications
    /// of them).
    pub arg_patterns: Vec<Term>,
    pub rhs: Term,
}

#[derive(Clone, Debug)]
pub struct FuncDef {
    pub name: Name,
    pub kind: DefKind,
    pub equations: Vec<DefEquation>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataCtor {
    pub name: Name,
    pub args: Vec<Sort>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DataDef {
    pub sort: Sort,
    pub ctors: Vec<DataCtor>,
    /// Name of the generated size measure function.
    pub size_fn: Name,
}

/// A bounded-forall predicate:
/// `name(params) := forall bound_var < bound. body`.
#[derive(Clone, Debug)]
pub struct PredDef {
    pub name: Name,
    pub params: Vec<(Name, Sort)>,
    pub bound_var: Name,
    pub bound: Term,
    pub body: Term,
}

/// A declared induction scheme: a guard pattern over schematic variables
/// and a nat-valued measure over the same variables.
#[derive(Clone, Debug)]
pub struct InductScheme {
    pub name: Name,
    pub guard: Term,
    pub measure: Term,
}

#[derive(Default)]
pub struct TheoryEnv {
    pub name: String,
    pub sorts: BTreeSet<String>,
    pub funcs: BTreeMap<Name, FuncDecl>,
    pub by_surface: BTreeMap<String, Vec<Name>>,
    pub datatypes: BTreeMap<String, DataDef>,
    /// constructor name -> datatype sort name
    pub ctor_sorts: BTreeMap<Name, String>,
    pub defs: BTreeMap<Name, FuncDef>,
    pub preds: BTreeMap<Name, PredDef>,
    pub schemes: Vec<InductScheme>,
    pub properties: BTreeSet<Name>,
    pub wf_schemas: Vec<WfSchema>,
    pub rules: Vec<Arc<CompiledRule>>,
    pub triples: Vec<Arc<StdTriple>>,
    pub assn_defs: BTreeMap<Name, AssnDef>,
    pub procs: BTreeMap<Name, ProcedureDef>,
    pub rulesets: BTreeMap<Name, RuleSet>,
}

impl TheoryEnv {
    pub fn declare_sort(&mut self, name: &str) {
        self.sorts.insert(name.to_string());
    }

    pub fn declare_func(&mut self, surface: &str, args: Vec<Sort>, ret: Sort) -> Name {
        let internal: Name = if self.by_surface.contains_key(surface) {
            // overload: qualify by first argument sort
            let suffix = args.first().map(|s| s.name().to_string()).unwrap_or_default();
            Name::from(format!("{surface}.{suffix}"))
        } else {
            Name::from(surface)
        };
        self.funcs.insert(
            internal.clone(),
            FuncDecl { internal: internal.clone(), surface: surface.to_string(), args, ret },
        );
        self.by_surface.entry(surface.to_string()).or_default().push(internal.clone());
        internal
    }

    pub fn func(&self, internal: &str) -> Option<&FuncDecl> {
        self.funcs.get(internal)
    }

    /// Resolve a surface name applied at the given argument sorts.
    pub fn resolve(&self, surface: &str, arg_sorts: &[Sort]) -> Option<&FuncDecl> {
        let cands = self.by_surface.get(surface)?;
        let mut fallback = None;
        for c in cands {
            let d = &self.funcs[c];
            if d.args.len() == arg_sorts.len() {
                if d.args.iter().zip(arg_sorts).all(|(a, b)| a == b) {
                    return Some(d);
                }
                fallback = Some(d);
            }
        }
        // unique-arity fallback helps sort inference when an argument's
        // sort is still unknown
        let same_arity: Vec<_> = cands
            .iter()
            .map(|c| &self.funcs[c])
            .filter(|d| d.args.len() == arg_sorts.len())
            .collect();
        if same_arity.len() == 1 {
            return Some(same_arity[0]);
        }
        fallback.filter(|_| same_arity.is_empty())
    }

    pub fn is_enabled(&self, ruleset: &Option<Name>) -> bool {
        match ruleset {
            None => true,
            Some(n) => self.rulesets.get(n).map(|s| s.enabled).unwrap_or(true),
        }
    }

    pub fn enabled_rules(&self) -> Vec<Arc<CompiledRule>> {
        self.rules.iter().filter(|r| self.is_enabled(&r.ruleset)).cloned().collect()
    }

    pub fn enabled_triples(&self) -> Vec<Arc<StdTriple>> {
        self.triples.iter().filter(|t| self.is_enabled(&t.ruleset)).cloned().collect()
    }

    pub fn enabled_assn_defs(&self) -> BTreeMap<Name, AssnDef> {
        self.assn_defs
            .iter()
            .filter(|(_, d)| self.is_enabled(&d.ruleset))
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect()
    }

    /// Verify an application tree against the signature; returns the sort.
    pub fn check_sorts(&self, t: &Term) -> Result<Sort, String> {
        match t {
            Term::App(h, args) => {
                let decl = self
                    .funcs
                    .get(&h.name)
                    .ok_or_else(|| format!("unknown function {}", h.name))?;
                if decl.args.len() != args.len() {
                    return Err(format!(
                        "{} expects {} arguments, got {}",
                        h.name,
                        decl.args.len(),
                        args.len()
                    ));
                }
                if decl.ret != h.sort {
                    return Err(format!("{} returns {}, head says {}", h.name, decl.ret, h.sort));
                }
                for (want, arg) in decl.args.iter().zip(args) {
                    let got = self.check_sorts(arg)?;
                    if &got != want {
                        return Err(format!(
                            "{}: argument {arg} has sort {got}, expected {want}",
                            h.name
                        ));
                    }
                }
                Ok(decl.ret.clone())
            }
            Term::Num(v, s) => {
                if s.name() == "nat" && *v < 0 {
                    return Err(format!("negative nat numeral {v}"));
                }
                Ok(s.clone())
            }
            Term::Const(n, s) => {
                if let Some(d) = self.funcs.get(n) {
                    if !d.args.is_empty() {
                        return Err(format!("{n} used without arguments"));
                    }
                    if &d.ret != s {
                        return Err(format!("{n} has sort {}, head says {s}", d.ret));
                    }
                }
                Ok(s.clone())
            }
            Term::Free(_, s) | Term::SVar(_, s) => Ok(s.clone()),
        }
    }

    pub fn datatype_of_ctor(&self, ctor: &str) -> Option<&DataDef> {
        self.ctor_sorts.get(ctor).and_then(|s| self.datatypes.get(s))
    }

    /// Match an induction guard written in a script against the declared
    /// schemes; returns the instantiated measure.
    pub fn match_scheme(&self, guard: &Term) -> Option<(Name, Term)> {
        for scheme in &self.schemes {
            let mut s = crate::term::Subst::new();
            if crate::term::syntactic_match(&scheme.guard, guard, &mut s) {
                if let Ok(measure) = s.apply(&scheme.measure) {
                    return Some((scheme.name.clone(), measure));
                }
            }
        }
        None
    }
}
