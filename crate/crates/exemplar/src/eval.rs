//! The constraint evaluator: computes the [`Value`] of an expression over a
//! concrete instance model.
//!
//! This is the ground truth of the whole solver — a candidate instance model
//! is a solution exactly when the combined constraint evaluates to `true`
//! here. Undefinedness follows the constraint language's rules:
//!
//! * `null` is a legal value (unset 0..1 navigation ends evaluate to it);
//!   most operations on it are invalid, but `= null`, `oclIsUndefined()` and
//!   the implicit collection view (`null->size() = 0`) work.
//! * `invalid` is the error value (division by zero, out-of-range `at()`,
//!   failed casts, navigation over a broken 0..1 end, recursion overflow).
//! * Boolean connectives are *non-strict*: `false and X` is false and
//!   `true or X` is true even when `X` is null or invalid. This matters
//!   during search, where intermediate instances are routinely broken.

use std::cell::Cell;

use crate::model::{CollKind, DataModel, InstanceModel, ObjectId, Value};
use crate::ocl::types::OpTable;
use crate::ocl::{Expr, ExprKind, Invariant};
use crate::ocl::ast::{ArithOp, BoolOp, CollOp, IterKind, MethodOp, RelOp, Type, TypeOp};

/// Maximum user-operation call depth before evaluation gives up with
/// `invalid` (guards recursive operations that fail to terminate).
pub const MAX_OP_DEPTH: usize = 200;

/// Variable bindings, innermost last. Cloneable so callers can fork scopes.
#[derive(Debug, Clone, Default)]
pub struct Env {
    vars: Vec<(String, Value)>,
}

impl Env {
    pub fn new() -> Env {
        Env::default()
    }

    pub fn with_self(v: Value) -> Env {
        let mut env = Env::new();
        env.push("self", v);
        env
    }

    pub fn push(&mut self, name: impl Into<String>, v: Value) {
        self.vars.push((name.into(), v));
    }

    pub fn pop(&mut self) {
        self.vars.pop();
    }

    pub fn lookup(&self, name: &str) -> Option<&Value> {
        self.vars.iter().rev().find(|(n, _)| n == name).map(|(_, v)| v)
    }
}

/// Evaluates expressions against one instance model.
pub struct Evaluator<'a> {
    pub m: &'a DataModel,
    pub ops: &'a OpTable,
    pub inst: &'a InstanceModel,
    depth: Cell<usize>,
}

impl<'a> Evaluator<'a> {
    pub fn new(m: &'a DataModel, ops: &'a OpTable, inst: &'a InstanceModel) -> Self {
        Evaluator { m, ops, inst, depth: Cell::new(0) }
    }

    /// Evaluate a closed formula (no free variables).
    pub fn eval_closed(&self, e: &Expr) -> Value {
        self.eval(e, &mut Env::new())
    }

    pub fn eval(&self, e: &Expr, env: &mut Env) -> Value {
        use ExprKind::*;
        match &e.kind {
            BoolLit(v) => Value::Boolean(*v),
            IntLit(v) => Value::Integer(*v),
            RealLit(v) => Value::Real(*v),
            StrLit(s) => Value::Str(s.clone()),
            NullLit => Value::Null,
            EnumLit { enumeration, literal } => {
                Value::Enum { enumeration: enumeration.clone(), literal: literal.clone() }
            }
            ObjectLit(id) => Value::Object(id.clone()),
            CollectionLit { kind, elements } => {
                let mut vals = Vec::with_capacity(elements.len());
                for el in elements {
                    let v = self.eval(el, env);
                    if v.is_invalid() {
                        return Value::Invalid;
                    }
                    vals.push(v);
                }
                Value::Collection { kind: *kind, elements: vals }
            }
            Var(name) => match env.lookup(name) {
                Some(v) => v.clone(),
                None => Value::Invalid,
            },
            StaticAttr { class, attr } => match self.m.attribute(class, attr) {
                Some(a) => a.constant.clone().unwrap_or(Value::Invalid),
                None => Value::Invalid,
            },
            Prop { .. } | Qualified { .. } => Value::Invalid, // never survives type checking
            Attr { recv, attr } => match self.eval(recv, env) {
                Value::Object(id) => match self.inst.object(&id) {
                    Some(o) => o.attrs.get(attr).cloned().unwrap_or(Value::Invalid),
                    None => Value::Invalid,
                },
                _ => Value::Invalid,
            },
            Nav { recv, role } => match self.eval(recv, env) {
                Value::Object(id) => self.navigate(&id, role),
                _ => Value::Invalid,
            },
            AllInstances { class } => {
                let elements =
                    self.inst.objects_of(self.m, class).into_iter().map(Value::Object).collect();
                Value::Collection { kind: CollKind::Set, elements }
            }
            Not(x) => match self.eval(x, env) {
                Value::Boolean(b) => Value::Boolean(!b),
                _ => Value::Invalid,
            },
            Neg(x) => match self.eval(x, env) {
                Value::Integer(i) => match i.checked_neg() {
                    Some(v) => Value::Integer(v),
                    None => Value::Invalid,
                },
                Value::Real(r) => Value::Real(-r),
                _ => Value::Invalid,
            },
            Bool { op, lhs, rhs } => self.eval_bool(*op, lhs, rhs, env),
            Rel { op, lhs, rhs } => {
                let a = self.eval(lhs, env);
                let b = self.eval(rhs, env);
                eval_rel(*op, &a, &b)
            }
            Arith { op, lhs, rhs } => {
                let a = self.eval(lhs, env);
                let b = self.eval(rhs, env);
                eval_arith(*op, &a, &b)
            }
            MethodCall { recv, op, args } => self.eval_method(*op, recv, args, env),
            TypeCheckOp { recv, op, ty_name } => match self.eval(recv, env) {
                Value::Object(id) => {
                    let Some(obj) = self.inst.object(&id) else { return Value::Invalid };
                    match op {
                        TypeOp::IsTypeOf => Value::Boolean(obj.class == *ty_name),
                        TypeOp::IsKindOf => {
                            Value::Boolean(self.m.conforms_class(&obj.class, ty_name))
                        }
                        TypeOp::AsType => {
                            if self.m.conforms_class(&obj.class, ty_name) {
                                Value::Object(id)
                            } else {
                                Value::Invalid
                            }
                        }
                    }
                }
                _ => Value::Invalid,
            },
            UserCall { recv, op, args } => self.eval_user_call(recv, op, args, env),
            Iterate { recv, kind, var, body } => self.eval_iterate(recv, *kind, var, body, env, e),
            CollectionOp { recv, op, args } => self.eval_collection_op(recv, *op, args, env, e),
            If { cond, then_branch, else_branch } => match self.eval(cond, env) {
                Value::Boolean(true) => self.eval(then_branch, env),
                Value::Boolean(false) => self.eval(else_branch, env),
                _ => Value::Invalid,
            },
            Let { var, init, body, .. } => {
                let v = self.eval(init, env);
                env.push(var.clone(), v);
                let out = self.eval(body, env);
                env.pop();
                out
            }
        }
    }

    fn navigate(&self, from: &ObjectId, role: &str) -> Value {
        let Some(obj) = self.inst.object(from) else { return Value::Invalid };
        let Some((assoc, far, _near)) = self.m.navigation(&obj.class, role) else {
            return Value::Invalid;
        };
        let far_is_b = std::ptr::eq(far, &assoc.end_b);
        let ids = self.inst.navigate(assoc, far_is_b, from);
        if far.upper == Some(1) {
            match ids.len() {
                0 => Value::Null,
                1 => Value::Object(ids.into_iter().next().unwrap()),
                _ => Value::Invalid, // broken 0..1 end on an intermediate instance
            }
        } else {
            let kind = if far.ordered { CollKind::Sequence } else { CollKind::Set };
            Value::Collection { kind, elements: ids.into_iter().map(Value::Object).collect() }
        }
    }

    fn eval_bool(&self, op: BoolOp, lhs: &Expr, rhs: &Expr, env: &mut Env) -> Value {
        let a = self.eval(lhs, env);
        // Short-circuiting implements the non-strict cases exactly; the
        // other operand is then only needed when the first one is neutral.
        match (op, a.as_bool()) {
            (BoolOp::And, Some(false)) => return Value::Boolean(false),
            (BoolOp::Or, Some(true)) => return Value::Boolean(true),
            (BoolOp::Implies, Some(false)) => return Value::Boolean(true),
            _ => {}
        }
        let b = self.eval(rhs, env);
        match op {
            BoolOp::And => match (a.as_bool(), b.as_bool()) {
                (_, Some(false)) => Value::Boolean(false),
                (Some(x), Some(y)) => Value::Boolean(x && y),
                _ => Value::Invalid,
            },
            BoolOp::Or => match (a.as_bool(), b.as_bool()) {
                (_, Some(true)) => Value::Boolean(true),
                (Some(x), Some(y)) => Value::Boolean(x || y),
                _ => Value::Invalid,
            },
            BoolOp::Implies => match (a.as_bool(), b.as_bool()) {
                (_, Some(true)) => Value::Boolean(true),
                (Some(x), Some(y)) => Value::Boolean(!x || y),
                _ => Value::Invalid,
            },
            BoolOp::Xor => match (a.as_bool(), b.as_bool()) {
                (Some(x), Some(y)) => Value::Boolean(x != y),
                _ => Value::Invalid,
            },
        }
    }

    fn eval_method(&self, op: MethodOp, recv: &Expr, args: &[Expr], env: &mut Env) -> Value {
        use MethodOp::*;
        let r = self.eval(recv, env);
        // The two introspection operations are non-strict in their receiver.
        match op {
            OclIsUndefined => return Value::Boolean(r.is_null() || r.is_invalid()),
            OclIsInvalid => return Value::Boolean(r.is_invalid()),
            _ => {}
        }
        let mut argv = Vec::with_capacity(args.len());
        for a in args {
            argv.push(self.eval(a, env));
        }
        match op {
            Div | Mod => match (&r, &argv[0]) {
                (Value::Integer(_), Value::Integer(0)) => Value::Invalid,
                (Value::Integer(a), Value::Integer(b)) => {
                    // Truncating division; remainder takes the dividend's
                    // sign, matching the language definition.
                    let q = a.checked_div(*b);
                    let m = a.checked_rem(*b);
                    match (op, q, m) {
                        (Div, Some(q), _) => Value::Integer(q),
                        (Mod, _, Some(m)) => Value::Integer(m),
                        _ => Value::Invalid,
                    }
                }
                _ => Value::Invalid,
            },
            Abs => match r {
                Value::Integer(i) => i.checked_abs().map(Value::Integer).unwrap_or(Value::Invalid),
                Value::Real(x) => Value::Real(x.abs()),
                _ => Value::Invalid,
            },
            Max | Min => match (&r, &argv[0]) {
                (Value::Integer(a), Value::Integer(b)) => {
                    Value::Integer(if op == Max { *a.max(b) } else { *a.min(b) })
                }
                _ => match (r.as_num(), argv[0].as_num()) {
                    (Some(a), Some(b)) => Value::Real(if op == Max { a.max(b) } else { a.min(b) }),
                    _ => Value::Invalid,
                },
            },
            Floor | Ceil | Round => match r {
                Value::Integer(i) => Value::Integer(i),
                Value::Real(x) => {
                    let y = match op {
                        Floor => x.floor(),
                        Ceil => x.ceil(),
                        // Round half up: the nearest integer, the larger one
                        // on ties.
                        _ => (x + 0.5).floor(),
                    };
                    real_to_int(y)
                }
                _ => Value::Invalid,
            },
            ToInteger => match &r {
                Value::Str(s) if is_integer_text(s) => match s.parse::<i64>() {
                    Ok(v) => Value::Integer(v),
                    Err(_) => Value::Invalid,
                },
                _ => Value::Invalid,
            },
            ToReal => match r.as_num() {
                Some(x) => Value::Real(x),
                None => Value::Invalid,
            },
            StrSize => match &r {
                Value::Str(s) => Value::Integer(s.chars().count() as i64),
                _ => Value::Invalid,
            },
            Concat => match (&r, &argv[0]) {
                (Value::Str(a), Value::Str(b)) => Value::Str(format!("{a}{b}")),
                _ => Value::Invalid,
            },
            Substring => match (&r, &argv[0], &argv[1]) {
                (Value::Str(s), Value::Integer(lo), Value::Integer(hi)) => {
                    let n = s.chars().count() as i64;
                    if *lo < 1 || *hi < *lo || *hi > n {
                        Value::Invalid
                    } else {
                        let out: String = s
                            .chars()
                            .skip((*lo - 1) as usize)
                            .take((*hi - *lo + 1) as usize)
                            .collect();
                        Value::Str(out)
                    }
                }
                _ => Value::Invalid,
            },
            OclIsUndefined | OclIsInvalid => unreachable!("handled above"),
        }
    }

    fn eval_user_call(&self, recv: &Expr, op: &str, args: &[Expr], env: &mut Env) -> Value {
        let r = self.eval(recv, env);
        let Value::Object(_) = &r else { return Value::Invalid };
        let Some(def) = self.ops.get(op) else { return Value::Invalid };
        let mut argv = Vec::with_capacity(args.len());
        for a in args {
            let v = self.eval(a, env);
            if v.is_invalid() {
                return Value::Invalid; // operations are strict in arguments
            }
            argv.push(v);
        }
        if self.depth.get() >= MAX_OP_DEPTH {
            return Value::Invalid;
        }
        self.depth.set(self.depth.get() + 1);
        let mut inner = Env::with_self(r);
        for ((pname, _), v) in def.params.iter().zip(argv) {
            inner.push(pname.clone(), v);
        }
        let out = self.eval(&def.body, &mut inner);
        self.depth.set(self.depth.get() - 1);
        out
    }

    fn eval_iterate(
        &self,
        recv: &Expr,
        kind: IterKind,
        var: &str,
        body: &Expr,
        env: &mut Env,
        node: &Expr,
    ) -> Value {
        let Some((src_kind, elements)) = self.coerce_collection(recv, env) else {
            return Value::Invalid;
        };
        match kind {
            IterKind::ForAll | IterKind::Exists => {
                let want = kind == IterKind::Exists; // dominating body value
                let mut saw_undef = false;
                for el in &elements {
                    env.push(var.to_string(), el.clone());
                    let b = self.eval(body, env);
                    env.pop();
                    match b.as_bool() {
                        Some(v) if v == want => return Value::Boolean(want),
                        Some(_) => {}
                        None => saw_undef = true,
                    }
                }
                if saw_undef {
                    Value::Invalid
                } else {
                    Value::Boolean(!want)
                }
            }
            IterKind::One => {
                let mut trues = 0usize;
                let mut saw_undef = false;
                for el in &elements {
                    env.push(var.to_string(), el.clone());
                    let b = self.eval(body, env);
                    env.pop();
                    match b.as_bool() {
                        Some(true) => trues += 1,
                        Some(false) => {}
                        None => saw_undef = true,
                    }
                    if trues >= 2 {
                        return Value::Boolean(false);
                    }
                }
                if saw_undef {
                    Value::Invalid
                } else {
                    Value::Boolean(trues == 1)
                }
            }
            IterKind::Select | IterKind::Reject => {
                let keep_on = kind == IterKind::Select;
                let mut out = Vec::new();
                for el in elements {
                    env.push(var.to_string(), el.clone());
                    let b = self.eval(body, env);
                    env.pop();
                    match b.as_bool() {
                        Some(v) if v == keep_on => out.push(el),
                        Some(_) => {}
                        None => return Value::Invalid,
                    }
                }
                Value::Collection { kind: src_kind, elements: out }
            }
            IterKind::Collect => {
                let out_kind = match src_kind {
                    CollKind::Sequence | CollKind::OrderedSet => CollKind::Sequence,
                    _ => CollKind::Bag,
                };
                let mut out = Vec::new();
                for el in elements {
                    env.push(var.to_string(), el);
                    let v = self.eval(body, env);
                    env.pop();
                    if v.is_invalid() {
                        return Value::Invalid;
                    }
                    out.push(v); // nulls are kept, like the language says
                }
                let _ = node;
                Value::Collection { kind: out_kind, elements: out }
            }
            IterKind::IsUnique => {
                let mut seen: Vec<Value> = Vec::new();
                for el in elements {
                    env.push(var.to_string(), el);
                    let v = self.eval(body, env);
                    env.pop();
                    if v.is_invalid() {
                        return Value::Invalid;
                    }
                    for s in &seen {
                        match s.ocl_eq(&v) {
                            Some(true) => return Value::Boolean(false),
                            Some(false) => {}
                            None => return Value::Invalid,
                        }
                    }
                    seen.push(v);
                }
                Value::Boolean(true)
            }
        }
    }

    fn eval_collection_op(
        &self,
        recv: &Expr,
        op: CollOp,
        args: &[Expr],
        env: &mut Env,
        node: &Expr,
    ) -> Value {
        use CollOp::*;
        let Some((kind, elements)) = self.coerce_collection(recv, env) else {
            return Value::Invalid;
        };
        let mut argv = Vec::with_capacity(args.len());
        for a in args {
            let v = self.eval(a, env);
            if v.is_invalid() {
                return Value::Invalid;
            }
            argv.push(v);
        }
        match op {
            Size => Value::Integer(elements.len() as i64),
            IsEmpty => Value::Boolean(elements.is_empty()),
            NotEmpty => Value::Boolean(!elements.is_empty()),
            Includes | Excludes | Count => {
                let mut n = 0usize;
                for el in &elements {
                    match el.ocl_eq(&argv[0]) {
                        Some(true) => n += 1,
                        Some(false) => {}
                        None => return Value::Invalid,
                    }
                }
                match op {
                    Includes => Value::Boolean(n > 0),
                    Excludes => Value::Boolean(n == 0),
                    _ => Value::Integer(n as i64),
                }
            }
            IncludesAll | ExcludesAll => {
                let Value::Collection { elements: others, .. } = &argv[0] else {
                    return Value::Invalid;
                };
                let mut all_in = true;
                let mut any_in = false;
                for o in others {
                    let mut found = false;
                    for el in &elements {
                        match el.ocl_eq(o) {
                            Some(true) => {
                                found = true;
                                break;
                            }
                            Some(false) => {}
                            None => return Value::Invalid,
                        }
                    }
                    all_in &= found;
                    any_in |= found;
                }
                if op == IncludesAll {
                    Value::Boolean(all_in)
                } else {
                    Value::Boolean(!any_in)
                }
            }
            Sum => {
                let mut int_sum: Option<i64> = Some(0);
                let mut real_sum = 0.0f64;
                let mut any_real = false;
                for el in &elements {
                    match el {
                        Value::Integer(i) => {
                            int_sum = int_sum.and_then(|s| s.checked_add(*i));
                            real_sum += *i as f64;
                        }
                        Value::Real(x) => {
                            any_real = true;
                            real_sum += *x;
                        }
                        _ => return Value::Invalid,
                    }
                }
                // The static result type decides what an empty (or pure
                // integer) sum is.
                let result_is_real = any_real || node.ty == Type::Real;
                if result_is_real {
                    Value::Real(real_sum)
                } else {
                    match int_sum {
                        Some(s) => Value::Integer(s),
                        None => Value::Invalid, // overflow
                    }
                }
            }
            At => match &argv[0] {
                Value::Integer(i) if *i >= 1 && (*i as usize) <= elements.len() => {
                    elements[(*i - 1) as usize].clone()
                }
                _ => Value::Invalid,
            },
            IndexOf => {
                for (i, el) in elements.iter().enumerate() {
                    match el.ocl_eq(&argv[0]) {
                        Some(true) => return Value::Integer(i as i64 + 1),
                        Some(false) => {}
                        None => return Value::Invalid,
                    }
                }
                Value::Invalid // not found
            }
            First => match elements.first() {
                Some(v) => v.clone(),
                None => Value::Invalid,
            },
            AsSet => {
                let mut out: Vec<Value> = Vec::new();
                for el in elements {
                    let mut dup = false;
                    for s in &out {
                        match s.ocl_eq(&el) {
                            Some(true) => {
                                dup = true;
                                break;
                            }
                            Some(false) => {}
                            None => return Value::Invalid,
                        }
                    }
                    if !dup {
                        out.push(el);
                    }
                }
                Value::Collection { kind: CollKind::Set, elements: out }
            }
            AsSequence => {
                let _ = kind;
                Value::Collection { kind: CollKind::Sequence, elements }
            }
        }
    }

    /// The implicit collection view of an arrow receiver: collections are
    /// themselves, `null` is the empty set, any other defined value is a
    /// singleton set. Returns `None` for invalid.
    fn coerce_collection(&self, recv: &Expr, env: &mut Env) -> Option<(CollKind, Vec<Value>)> {
        match self.eval(recv, env) {
            Value::Invalid => None,
            Value::Null => Some((CollKind::Set, vec![])),
            Value::Collection { kind, elements } => Some((kind, elements)),
            other => Some((CollKind::Set, vec![other])),
        }
    }
}

fn is_integer_text(s: &str) -> bool {
    let digits = s.strip_prefix('-').unwrap_or(s);
    !digits.is_empty() && digits.bytes().all(|b| b.is_ascii_digit())
}

fn real_to_int(x: f64) -> Value {
    if x.is_finite() && x >= i64::MIN as f64 && x <= i64::MAX as f64 {
        Value::Integer(x as i64)
    } else {
        Value::Invalid
    }
}

fn eval_rel(op: RelOp, a: &Value, b: &Value) -> Value {
    match op {
        RelOp::Eq => match a.ocl_eq(b) {
            Some(v) => Value::Boolean(v),
            None => Value::Invalid,
        },
        RelOp::Ne => match a.ocl_eq(b) {
            Some(v) => Value::Boolean(!v),
            None => Value::Invalid,
        },
        _ => {
            // Ordering is numeric-only. Integer pairs compare exactly.
            if let (Value::Integer(x), Value::Integer(y)) = (a, b) {
                return Value::Boolean(int_cmp(op, *x, *y));
            }
            match (a.as_num(), b.as_num()) {
                (Some(x), Some(y)) => Value::Boolean(real_cmp(op, x, y)),
                _ => Value::Invalid,
            }
        }
    }
}

fn int_cmp(op: RelOp, x: i64, y: i64) -> bool {
    match op {
        RelOp::Lt => x < y,
        RelOp::Le => x <= y,
        RelOp::Gt => x > y,
        RelOp::Ge => x >= y,
        _ => unreachable!(),
    }
}

fn real_cmp(op: RelOp, x: f64, y: f64) -> bool {
    match op {
        RelOp::Lt => x < y,
        RelOp::Le => x <= y,
        RelOp::Gt => x > y,
        RelOp::Ge => x >= y,
        _ => unreachable!(),
    }
}

fn eval_arith(op: ArithOp, a: &Value, b: &Value) -> Value {
    if let (Value::Integer(x), Value::Integer(y)) = (a, b) {
        let out = match op {
            ArithOp::Add => x.checked_add(*y),
            ArithOp::Sub => x.checked_sub(*y),
            ArithOp::Mul => x.checked_mul(*y),
            ArithOp::Div => {
                return if *y == 0 { Value::Invalid } else { Value::Real(*x as f64 / *y as f64) }
            }
        };
        return match out {
            Some(v) => Value::Integer(v),
            None => Value::Invalid, // overflow
        };
    }
    match (a.as_num(), b.as_num()) {
        (Some(x), Some(y)) => match op {
            ArithOp::Add => Value::Real(x + y),
            ArithOp::Sub => Value::Real(x - y),
            ArithOp::Mul => Value::Real(x * y),
            ArithOp::Div => {
                if y == 0.0 {
                    Value::Invalid
                } else {
                    Value::Real(x / y)
                }
            }
        },
        _ => Value::Invalid,
    }
}

// ---------------------------------------------------------------------------
// Invariant-level checking (the `check` command)
// ---------------------------------------------------------------------------

/// Outcome of checking one invariant against an instance model.
#[derive(Debug, Clone, PartialEq)]
pub struct InvariantReport {
    pub context: String,
    pub name: String,
    pub holds: bool,
    /// Context objects whose invariant body did not evaluate to `true`
    /// (including null/invalid evaluations).
    pub failing: Vec<ObjectId>,
}

/// Evaluate every invariant for every object of its context class.
pub fn check_invariants(
    m: &DataModel,
    ops: &OpTable,
    inst: &InstanceModel,
    invariants: &[Invariant],
) -> Vec<InvariantReport> {
    let ev = Evaluator::new(m, ops, inst);
    invariants
        .iter()
        .map(|inv| {
            let mut failing = Vec::new();
            for id in inst.objects_of(m, &inv.context) {
                let mut env = Env::with_self(Value::Object(id.clone()));
                if ev.eval(&inv.body, &mut env).as_bool() != Some(true) {
                    failing.push(id);
                }
            }
            InvariantReport {
                context: inv.context.clone(),
                name: inv.name.clone(),
                holds: failing.is_empty(),
                failing,
            }
        })
        .collect()
}
