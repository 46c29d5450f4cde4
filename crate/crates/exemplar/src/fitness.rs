//! Branch-distance fitness: how far an instance model is from satisfying
//! the normalized constraint. Zero exactly on satisfaction; search
//! minimizes it.
//!
//! Composition over the NNF structure, with `k = 1`:
//!
//! * `forAll` — arithmetic mean of the element (raw) distances; an empty
//!   range is vacuously true, distance 0.
//! * `exists` — minimum of the element distances; an empty range is
//!   false, distance k.
//! * `and` — mean of the two children's *normalized* distances (children
//!   of a conjunction can sit at very different scales; normalization
//!   d/(d+1) makes them commensurable).
//! * `or` — minimum of the children's normalized distances.
//! * relational atoms over numbers — the classic branch distances
//!   d(a=b) = |a−b|, d(a<>b) = 0 or k, d(a<b) = max(0, a−b+k),
//!   d(a<=b) = max(0, a−b), symmetric for `>` and `>=`.
//! * `=`/`<>` over non-numeric values (strings, booleans, enums, objects,
//!   collections) — 0 or k; no string gradient.
//! * `not` — in NNF only atoms are negated: a negated comparison scores
//!   the complementary comparison's distance, any other negated atom
//!   scores 0/k on its evaluated truth.
//! * every other Boolean node is an atom — 0 if it evaluates to true,
//!   else k.
//! * an undefined (null or invalid) answer anywhere in an atom scores k:
//!   undefined never satisfies.
//!
//! The result is total: any well-typed Boolean NNF node gets a finite
//! nonnegative distance, and `raw == 0` holds iff the evaluator says
//! `true` (property-tested below and in the acceptance suite).

use crate::eval::{Env, Evaluator};
use crate::model::Value;
use crate::ocl::ast::{BoolOp, Expr, ExprKind, IterKind, RelOp};

/// Branch distance constant.
pub const K: f64 = 1.0;

/// A raw branch distance; `normalized()` maps it into [0, 1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Distance {
    pub raw: f64,
}

impl Distance {
    pub fn normalized(self) -> f64 {
        self.raw / (self.raw + 1.0)
    }
    pub fn satisfied(self) -> bool {
        self.raw == 0.0
    }
}

/// Distance of the closed Boolean formula `e` on the evaluator's instance.
pub fn distance(ev: &Evaluator<'_>, e: &Expr) -> Distance {
    Distance { raw: dist(ev, e, &mut Env::new()) }
}

fn dist(ev: &Evaluator<'_>, e: &Expr, env: &mut Env) -> f64 {
    match &e.kind {
        ExprKind::Bool { op: BoolOp::And, lhs, rhs } => {
            let a = Distance { raw: dist(ev, lhs, env) }.normalized();
            let b = Distance { raw: dist(ev, rhs, env) }.normalized();
            (a + b) / 2.0
        }
        ExprKind::Bool { op: BoolOp::Or, lhs, rhs } => {
            let a = Distance { raw: dist(ev, lhs, env) }.normalized();
            let b = Distance { raw: dist(ev, rhs, env) }.normalized();
            a.min(b)
        }
        ExprKind::Iterate { recv, kind: kind @ (IterKind::ForAll | IterKind::Exists), var, body } => {
            // Element-wise over the (evaluated) range. An undefined range
            // makes the whole quantifier an undefined atom: k.
            let range = ev.eval(recv, env);
            let Some(elems) = as_elements(range) else { return K };
            let mut distances = Vec::with_capacity(elems.len());
            for v in elems {
                env.push(var.clone(), v);
                distances.push(dist(ev, body, env));
                env.pop();
            }
            match kind {
                IterKind::ForAll => {
                    if distances.is_empty() {
                        0.0
                    } else {
                        distances.iter().sum::<f64>() / distances.len() as f64
                    }
                }
                _ => {
                    if distances.is_empty() {
                        K
                    } else {
                        distances.into_iter().fold(f64::INFINITY, f64::min)
                    }
                }
            }
        }
        ExprKind::Rel { op, lhs, rhs } => {
            rel_distance(*op, ev.eval(lhs, env), ev.eval(rhs, env))
        }
        ExprKind::Not(inner) => match &inner.kind {
            ExprKind::Rel { op, lhs, rhs } => {
                rel_distance(op.complement(), ev.eval(lhs, env), ev.eval(rhs, env))
            }
            _ => truth_distance(ev.eval(e, env)),
        },
        ExprKind::BoolLit(true) => 0.0,
        ExprKind::BoolLit(false) => K,
        // Atom: quantifier-free Boolean node (collection predicate, type
        // test, definedness test, user call, attribute, variable, `one`,
        // `isUnique`, ...). Its truth decides.
        _ => truth_distance(ev.eval(e, env)),
    }
}

fn truth_distance(v: Value) -> f64 {
    if v == Value::Boolean(true) {
        0.0
    } else {
        K
    }
}

/// The elements a quantifier ranges over; `None` when the range is
/// undefined. Mirrors the evaluator's coercions: null is the empty set, a
/// non-collection value is its own singleton.
fn as_elements(v: Value) -> Option<Vec<Value>> {
    match v {
        Value::Invalid => None,
        Value::Null => Some(vec![]),
        Value::Collection { elements, .. } => Some(elements),
        other => Some(vec![other]),
    }
}

fn rel_distance(op: RelOp, l: Value, r: Value) -> f64 {
    if l.is_invalid() || r.is_invalid() {
        return K;
    }
    // Numeric pairs get a gradient; everything else scores 0/k on
    // equality only. Null among numerics is undefined: k.
    match (l.as_num(), r.as_num()) {
        (Some(a), Some(b)) => match op {
            RelOp::Eq => (a - b).abs(),
            RelOp::Ne => {
                if a == b {
                    K
                } else {
                    0.0
                }
            }
            RelOp::Lt => (a - b + K).max(0.0),
            RelOp::Le => (a - b).max(0.0),
            RelOp::Gt => (b - a + K).max(0.0),
            RelOp::Ge => (b - a).max(0.0),
        },
        _ => match op {
            RelOp::Eq | RelOp::Ne => match l.ocl_eq(&r) {
                None => K,
                Some(eq) => {
                    let want = op == RelOp::Eq;
                    if eq == want {
                        0.0
                    } else {
                        K
                    }
                }
            },
            // An order comparison over non-numeric operands is undefined.
            _ => K,
        },
    }
}
