//! The monadic imperative language and its concrete executable semantics.
//!
//! Programs are sequences of primitive heap commands glued with `Bind`;
//! there are no loops, recursion goes through `Call`. The same AST is the
//! verification target of the symbolic executor and the input of the
//! oracle's interpreter ([`exec`]).

use std::collections::BTreeMap;
use std::fmt;

use crate::oracle::eval::{self, EvalErr, SemVal};
use crate::term::{Name, Sort, Term};
use crate::theory_io::TheoryEnv;

/// A storable heap value.
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Value {
    NatV(u64),
    RecordV(Name, Vec<Value>),
    ArrayV(Vec<u64>),
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::NatV(n) => write!(f, "{n}"),
            Value::RecordV(c, fields) => {
                write!(f, "{c}(")?;
                for (i, x) in fields.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{x}")?;
                }
                write!(f, ")")
            }
            Value::ArrayV(xs) => write!(f, "{xs:?}"),
        }
    }
}

/// Concrete heap: references and arrays have disjoint address spaces drawn
/// from one fresh counter, so newly allocated addresses are always fresh.
#[derive(Clone, Default, PartialEq, Eq, Debug)]
pub struct Heap {
    pub cells: BTreeMap<u64, Value>,
    pub arrays: BTreeMap<u64, Vec<u64>>,
    pub next: u64,
}

impl Heap {
    pub fn new() -> Self {
        Heap::default()
    }

    pub fn alloc_cell(&mut self, v: Value) -> u64 {
        let a = self.next;
        self.next += 1;
        self.cells.insert(a, v);
        a
    }

    pub fn alloc_array(&mut self, xs: Vec<u64>) -> u64 {
        let a = self.next;
        self.next += 1;
        self.arrays.insert(a, xs);
        a
    }

    pub fn addresses(&self) -> Vec<u64> {
        let mut v: Vec<u64> = self.cells.keys().copied().collect();
        v.extend(self.arrays.keys().copied());
        v.sort_unstable();
        v
    }
}

/// Imperative commands. Expressions are pure [`Term`]s over program
/// variables. The bound variable of `Bind` carries its sort (a variable in
/// this artifact is always a name together with a sort).
#[derive(Clone, PartialEq, Eq, Debug)]
pub enum Command {
    Return(Term),
    Bind(Box<Command>, Name, Sort, Box<Command>),
    RefNew(Term),
    RefGet(Term),
    RefSet(Term, Term),
    ArrayNew(Term, Term),
    ArrayNth(Term, Term),
    ArrayUpd(Term, Term, Term),
    If(Term, Box<Command>, Box<Command>),
    Call(Name, Vec<Term>),
}

impl Command {
    /// Free program variables read by this command.
    pub fn free_vars(&self) -> Vec<Name> {
        let mut out = Vec::new();
        self.collect_vars(&mut Vec::new(), &mut out);
        out
    }

    fn collect_vars(&self, bound: &mut Vec<Name>, out: &mut Vec<Name>) {
        fn expr(t: &Term, bound: &[Name], out: &mut Vec<Name>) {
            for (n, _) in t.frees() {
                if !bound.contains(&n) && !out.contains(&n) {
                    out.push(n);
                }
            }
        }
        match self {
            Command::Return(e) | Command::RefNew(e) | Command::RefGet(e) => expr(e, bound, out),
            Command::RefSet(a, b) | Command::ArrayNew(a, b) | Command::ArrayNth(a, b) => {
                expr(a, bound, out);
                expr(b, bound, out);
            }
            Command::ArrayUpd(a, b, c) => {
                expr(a, bound, out);
                expr(b, bound, out);
                expr(c, bound, out);
            }
            Command::If(c, t, e) => {
                expr(c, bound, out);
                t.collect_vars(bound, out);
                e.collect_vars(bound, out);
            }
            Command::Call(_, args) => {
                for a in args {
                    expr(a, bound, out);
                }
            }
            Command::Bind(a, x, _, b) => {
                a.collect_vars(bound, out);
                bound.push(x.clone());
                b.collect_vars(bound, out);
                bound.pop();
            }
        }
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ProcedureDef {
    pub name: Name,
    pub params: Vec<(Name, Sort)>,
    pub ret: Sort,
    pub body: Command,
    pub recursive: bool,
}

#[derive(Debug, PartialEq, Eq)]
pub enum ExecOutcome {
    /// Out-of-bounds access, dangling address or sort-mismatched dereference.
    Failure(String),
    Success(Value, Heap),
    /// Distinct from failure; the oracle treats it as inconclusive.
    OutOfFuel,
}

fn sem_to_value(v: &SemVal) -> Result<Value, String> {
    match v {
        SemVal::Nat(n) => Ok(Value::NatV(*n)),
        SemVal::Unit => Ok(Value::RecordV(Name::from("unit"), Vec::new())),
        SemVal::Data(c, fields) => {
            let fs = fields.iter().map(sem_to_value).collect::<Result<Vec<_>, _>>()?;
            Ok(Value::RecordV(c.clone(), fs))
        }
        SemVal::List(xs) => Ok(Value::ArrayV(xs.clone())),
        other => Err(format!("value not heap-storable: {other:?}")),
    }
}

pub fn value_to_sem(v: &Value) -> SemVal {
    match v {
        Value::NatV(n) => SemVal::Nat(*n),
        Value::RecordV(c, fields) if &**c == "unit" && fields.is_empty() => SemVal::Unit,
        Value::RecordV(c, fields) => {
            SemVal::Data(c.clone(), fields.iter().map(value_to_sem).collect())
        }
        Value::ArrayV(xs) => SemVal::List(xs.clone()),
    }
}

fn eval_expr(env: &TheoryEnv, e: &Term, vars: &BTreeMap<Name, SemVal>) -> Result<SemVal, String> {
    eval::eval_term(env, e, vars, &mut eval::default_fuel()).map_err(|err| match err {
        EvalErr::OutOfFuel => "expression evaluation out of fuel".to_string(),
        EvalErr::Other(m) => m,
    })
}

fn eval_nat(env: &TheoryEnv, e: &Term, vars: &BTreeMap<Name, SemVal>) -> Result<u64, String> {
    match eval_expr(env, e, vars)? {
        SemVal::Nat(n) => Ok(n),
        other => Err(format!("expected a number, got {other:?}")),
    }
}

fn eval_bool(env: &TheoryEnv, e: &Term, vars: &BTreeMap<Name, SemVal>) -> Result<bool, String> {
    match eval_expr(env, e, vars)? {
        SemVal::Bool(b) => Ok(b),
        other => Err(format!("expected a boolean, got {other:?}")),
    }
}

/// Execute `c` on heap `h` under the variable valuation `vars`.
///
/// Fuel decrements on `Call`; running out yields `OutOfFuel`. New addresses
/// come from the heap's fresh counter, so the address set only grows.
/// Execution is a pure function of its inputs.
pub fn exec(
    env: &TheoryEnv,
    c: &Command,
    h: &Heap,
    vars: &BTreeMap<Name, Value>,
    fuel: u64,
) -> ExecOutcome {
    let sem_vars: BTreeMap<Name, SemVal> =
        vars.iter().map(|(k, v)| (k.clone(), value_to_sem(v))).collect();
    let mut heap = h.clone();
    let mut fuel = fuel;
    match exec_rec(env, c, &mut heap, &sem_vars, &mut fuel) {
        Ok(v) => match sem_to_value(&v) {
            Ok(val) => ExecOutcome::Success(val, heap),
            Err(m) => ExecOutcome::Failure(m),
        },
        Err(Stop::Failure(m)) => ExecOutcome::Failure(m),
        Err(Stop::OutOfFuel) => ExecOutcome::OutOfFuel,
    }
}

enum Stop {
    Failure(String),
    OutOfFuel,
}

fn fail<T>(m: impl Into<String>) -> Result<T, Stop> {
    Err(Stop::Failure(m.into()))
}

fn exec_rec(
    env: &TheoryEnv,
    c: &Command,
    heap: &mut Heap,
    vars: &BTreeMap<Name, SemVal>,
    fuel: &mut u64,
) -> Result<SemVal, Stop> {
    match c {
        Command::Return(e) => eval_expr(env, e, vars).map_err(Stop::Failure),
        Command::Bind(a, x, _, b) => {
            let v = exec_rec(env, a, heap, vars, fuel)?;
            let mut vars2 = vars.clone();
            vars2.insert(x.clone(), v);
            exec_rec(env, b, heap, &vars2, fuel)
        }
        Command::RefNew(e) => {
            let v = eval_expr(env, e, vars).map_err(Stop::Failure)?;
            let val = sem_to_value(&v).map_err(Stop::Failure)?;
            if matches!(val, Value::ArrayV(_)) {
                return fail("references cannot store arrays");
            }
            Ok(SemVal::Nat(heap.alloc_cell(val)))
        }
        Command::RefGet(e) => {
            let a = eval_nat(env, e, vars).map_err(Stop::Failure)?;
            match heap.cells.get(&a) {
                Some(v) => Ok(value_to_sem(v)),
                None => fail(format!("dangling reference {a}")),
            }
        }
        Command::RefSet(p, e) => {
            let a = eval_nat(env, p, vars).map_err(Stop::Failure)?;
            let v = eval_expr(env, e, vars).map_err(Stop::Failure)?;
            let val = sem_to_value(&v).map_err(Stop::Failure)?;
            match heap.cells.get_mut(&a) {
                Some(slot) => {
                    *slot = val;
                    Ok(SemVal::Unit)
                }
                None => fail(format!("dangling reference {a}")),
            }
        }
        Command::ArrayNew(len, init) => {
            let n = eval_nat(env, len, vars).map_err(Stop::Failure)?;
            let x = eval_nat(env, init, vars).map_err(Stop::Failure)?;
            Ok(SemVal::Nat(heap.alloc_array(vec![x; n as usize])))
        }
        Command::ArrayNth(p, i) => {
            let a = eval_nat(env, p, vars).map_err(Stop::Failure)?;
            let i = eval_nat(env, i, vars).map_err(Stop::Failure)?;
            match heap.arrays.get(&a) {
                Some(xs) => match xs.get(i as usize) {
                    Some(&x) => Ok(SemVal::Nat(x)),
                    None => fail(format!("array index {i} out of bounds (len {})", xs.len())),
                },
                None => fail(format!("dangling array {a}")),
            }
        }
        Command::ArrayUpd(p, i, v) => {
            let a = eval_nat(env, p, vars).map_err(Stop::Failure)?;
            let i = eval_nat(env, i, vars).map_err(Stop::Failure)?;
            let x = eval_nat(env, v, vars).map_err(Stop::Failure)?;
            match heap.arrays.get_mut(&a) {
                Some(xs) => {
                    if (i as usize) < xs.len() {
                        xs[i as usize] = x;
                        Ok(SemVal::Unit)
                    } else {
                        fail(format!("array index {i} out of bounds (len {})", xs.len()))
                    }
                }
                None => fail(format!("dangling array {a}")),
            }
        }
        Command::If(cond, t, e) => {
            if eval_bool(env, cond, vars).map_err(Stop::Failure)? {
                exec_rec(env, t, heap, vars, fuel)
            } else {
                exec_rec(env, e, heap, vars, fuel)
            }
        }
        Command::Call(name, args) => {
            if *fuel == 0 {
                return Err(Stop::OutOfFuel);
            }
            *fuel -= 1;
            let proc = match env.procs.get(name) {
                Some(p) => p,
                None => return fail(format!("unknown procedure {name}")),
            };
            if proc.params.len() != args.len() {
                return fail(format!("arity mismatch calling {name}"));
            }
            let mut callee_vars = BTreeMap::new();
            for ((p, _), a) in proc.params.iter().zip(args) {
                let v = eval_expr(env, a, vars).map_err(Stop::Failure)?;
                callee_vars.insert(p.clone(), v);
            }
            exec_rec(env, &proc.body, heap, &callee_vars, fuel)
        }
    }
}

/// Static well-formedness of a procedure: scoping, arity, sorts.
/// Recursion is permitted without a termination argument; termination is
/// the proof script's business (induction on a declared measure).
pub fn check_procedure(env: &TheoryEnv, d: &ProcedureDef) -> Result<(), Vec<String>> {
    let mut diags = Vec::new();
    let mut scope: Vec<(Name, Sort)> = d.params.clone();
    check_cmd(env, d, &d.body, &mut scope, "body", &mut diags);
    if diags.is_empty() {
        Ok(())
    } else {
        Err(diags)
    }
}

fn check_expr(
    env: &TheoryEnv,
    e: &Term,
    scope: &[(Name, Sort)],
    at: &str,
    diags: &mut Vec<String>,
) -> Option<Sort> {
    for (n, s) in e.frees() {
        match scope.iter().find(|(m, _)| *m == n) {
            None => {
                diags.push(format!("{at}: unbound variable {n}"));
                return None;
            }
            Some((_, ds)) if *ds != s => {
                diags.push(format!("{at}: variable {n} has sort {ds}, used at {s}"));
                return None;
            }
            _ => {}
        }
    }
    match env.check_sorts(e) {
        Ok(s) => Some(s),
        Err(m) => {
            diags.push(format!("{at}: {m}"));
            None
        }
    }
}

fn check_cmd(
    env: &TheoryEnv,
    d: &ProcedureDef,
    c: &Command,
    scope: &mut Vec<(Name, Sort)>,
    at: &str,
    diags: &mut Vec<String>,
) {
    fn expect(
        env: &TheoryEnv,
        e: &Term,
        want: &str,
        scope: &[(Name, Sort)],
        at: &str,
        diags: &mut Vec<String>,
    ) {
        if let Some(s) = check_expr(env, e, scope, at, diags) {
            if s.name() != want {
                diags.push(format!("{at}: expected sort {want}, got {s}"));
            }
        }
    }
    match c {
        Command::Return(e) | Command::RefNew(e) => {
            check_expr(env, e, scope, at, diags);
        }
        Command::RefGet(p) => expect(env, p, "addr", scope, at, diags),
        Command::RefSet(p, e) => {
            expect(env, p, "addr", scope, at, diags);
            check_expr(env, e, scope, at, diags);
        }
        Command::ArrayNew(n, x) => {
            expect(env, n, "nat", scope, at, diags);
            expect(env, x, "nat", scope, at, diags);
        }
        Command::ArrayNth(p, i) => {
            expect(env, p, "addr", scope, at, diags);
            expect(env, i, "nat", scope, at, diags);
        }
        Command::ArrayUpd(p, i, v) => {
            expect(env, p, "addr", scope, at, diags);
            expect(env, i, "nat", scope, at, diags);
            expect(env, v, "nat", scope, at, diags);
        }
        Command::If(cond, t, e) => {
            expect(env, cond, "bool", scope, at, diags);
            check_cmd(env, d, t, scope, &format!("{at}.then"), diags);
            check_cmd(env, d, e, scope, &format!("{at}.else"), diags);
        }
        Command::Call(name, args) => {
            let arity = if name == &d.name {
                Some(d.params.len())
            } else {
                env.procs.get(name).map(|p| p.params.len())
            };
            match arity {
                Some(k) if k == args.len() => {}
                Some(k) => {
                    diags.push(format!("{at}: {name} expects {k} arguments, got {}", args.len()))
                }
                None => diags.push(format!("{at}: unknown procedure {name}")),
            }
            for a in args {
                check_expr(env, a, scope, at, diags);
            }
        }
        Command::Bind(a, x, xs, b) => {
            check_cmd(env, d, a, scope, &format!("{at}.bind({x})"), diags);
            scope.push((x.clone(), xs.clone()));
            check_cmd(env, d, b, scope, at, diags);
            scope.pop();
        }
    }
}
