//! Quantifier expansion: re-express `forAll`/`exists` over the *concrete*
//! objects of the current instance model, so that what remains for the SMT
//! solver is quantifier-free.
//!
//! A quantifier is expanded only when its body touches primitive attributes
//! (directly, or through a user-defined operation): only those subformulas
//! can be affected by the SMT solver. A `forAll` over a non-empty collection
//! becomes the conjunction of one body copy per element, with the iterator
//! variable replaced by a literal for that element; `exists` becomes the
//! disjunction. Over an empty collection they become `true` / `false`.
//!
//! Constructs with *implicit* quantification — `includes`, `excludes`,
//! `includesAll`, `excludesAll`, `isUnique`, `one`, and `=`/`<>` between
//! collections — are grounded through the same machinery, following their
//! explicit-quantifier equivalents (see [`ground_shortcut`]). Grounding is
//! position-aware: when the equivalent pattern compares the iterator of a
//! collection with itself (`i = j` in the `isUnique` pattern), two distinct
//! positions never satisfy the guard, even if they hold equal values. This
//! keeps the grounded formula in agreement with direct evaluation on bags
//! and sequences containing duplicates.

use crate::eval::Evaluator;
use crate::model::{CollKind, InstanceModel, Value};
use crate::nnf::{negate_nnf, substitute_var};
use crate::ocl::ast::{CollOp, Expr, ExprKind, IterKind, RelOp, Type};
use crate::ocl::types::OpTable;

use super::DeriveError;

/// Expand every eligible quantifier and implicit-quantification shortcut in
/// `e` over the instance behind `ev`, in place.
pub fn expand(e: &mut Expr, ev: &Evaluator<'_>, inst: &InstanceModel, ops: &OpTable) -> Result<(), DeriveError> {
    // Quantifier branch: forAll / exists whose body involves primitive
    // attributes and whose receiver is evaluable here and now.
    if let ExprKind::Iterate { recv, kind: kind @ (IterKind::ForAll | IterKind::Exists), var, body } = &e.kind {
        if touches_attributes(body, ops) && is_closed(recv) {
            let kind = *kind;
            let elements = receiver_elements(recv, ev)?;
            let var = var.clone();
            let mut copies = Vec::with_capacity(elements.len());
            for el in &elements {
                let lit = value_to_expr(el, inst)?;
                let mut copy = (**body).clone();
                substitute_var(&mut copy, &var, &lit);
                copies.push(copy);
            }
            let mut replacement = match kind {
                IterKind::ForAll => conjoin(copies),
                _ => disjoin(copies),
            };
            expand(&mut replacement, ev, inst, ops)?;
            *e = replacement;
            return Ok(());
        }
    }

    // Shortcut branch: implicit quantification, grounded per its
    // explicit-quantifier equivalent.
    if touches_attributes(e, ops) {
        if let Some(mut replacement) = ground_shortcut(e, ev, inst)? {
            expand(&mut replacement, ev, inst, ops)?;
            *e = replacement;
            return Ok(());
        }
    }

    for c in e.children_mut() {
        expand(c, ev, inst, ops)?;
    }
    Ok(())
}

/// Ground one implicit-quantification construct over its concrete receiver
/// collection(s). Returns `Ok(None)` if `e` is not such a construct (or its
/// receivers are not evaluable yet); `Err` if evaluating a receiver is
/// undefined, which abandons the whole SMT step for this iteration.
pub fn ground_shortcut(
    e: &Expr,
    ev: &Evaluator<'_>,
    inst: &InstanceModel,
) -> Result<Option<Expr>, DeriveError> {
    match &e.kind {
        // c->includes(x)  ~  c->exists(i | i = x)
        // c->excludes(x)  ~  c->forAll(i | i <> x)
        ExprKind::CollectionOp { recv, op: op @ (CollOp::Includes | CollOp::Excludes), args } => {
            if !is_closed(recv) {
                return Ok(None);
            }
            let elements = receiver_elements(recv, ev)?;
            let (rel, join): (RelOp, fn(Vec<Expr>) -> Expr) = match op {
                CollOp::Includes => (RelOp::Eq, disjoin),
                _ => (RelOp::Ne, conjoin),
            };
            let copies = elements
                .iter()
                .map(|el| Ok(rel_atom(rel, value_to_expr(el, inst)?, args[0].clone())))
                .collect::<Result<Vec<_>, DeriveError>>()?;
            Ok(Some(join(copies)))
        }

        // c1->includesAll(c2)  ~  c2->forAll(j | c1->exists(i | i = j))
        // c1->excludesAll(c2)  ~  c2->forAll(j | c1->forAll(i | i <> j))
        ExprKind::CollectionOp { recv, op: op @ (CollOp::IncludesAll | CollOp::ExcludesAll), args } => {
            if !is_closed(recv) || !is_closed(&args[0]) {
                return Ok(None);
            }
            let ours = receiver_elements(recv, ev)?;
            let theirs = receiver_elements(&args[0], ev)?;
            let mut outer = Vec::with_capacity(theirs.len());
            for b in &theirs {
                let inner = ours
                    .iter()
                    .map(|a| {
                        let (x, y) = (value_to_expr(a, inst)?, value_to_expr(b, inst)?);
                        Ok(match op {
                            CollOp::IncludesAll => rel_atom(RelOp::Eq, x, y),
                            _ => rel_atom(RelOp::Ne, x, y),
                        })
                    })
                    .collect::<Result<Vec<_>, DeriveError>>()?;
                outer.push(match op {
                    CollOp::IncludesAll => disjoin(inner),
                    _ => conjoin(inner),
                });
            }
            Ok(Some(conjoin(outer)))
        }

        // c->isUnique(b)  ~  c->forAll(i | c->forAll(j | i = j or b_i <> b_j))
        // with the `i = j` guard resolved positionally at grounding time.
        ExprKind::Iterate { recv, kind: IterKind::IsUnique, var, body } => {
            if !is_closed(recv) {
                return Ok(None);
            }
            let conds = per_element_bodies(recv, var, body, ev, inst)?;
            let mut pairs = Vec::new();
            for a in 0..conds.len() {
                for b in a + 1..conds.len() {
                    pairs.push(rel_atom(RelOp::Ne, conds[a].clone(), conds[b].clone()));
                }
            }
            Ok(Some(conjoin(pairs)))
        }

        // c->one(b)  ~  c->exists(i | b_i and c->forAll(j | i = j or not b_j))
        ExprKind::Iterate { recv, kind: IterKind::One, var, body } => {
            if !is_closed(recv) {
                return Ok(None);
            }
            let conds = per_element_bodies(recv, var, body, ev, inst)?;
            let mut witnesses = Vec::with_capacity(conds.len());
            for a in 0..conds.len() {
                let others = (0..conds.len())
                    .filter(|b| *b != a)
                    .map(|b| negate_nnf(conds[b].clone()))
                    .collect();
                witnesses.push(Expr::and(conds[a].clone(), conjoin(others)));
            }
            Ok(Some(disjoin(witnesses)))
        }

        // Collection equality / inequality, grounded per collection kind.
        ExprKind::Rel { op: op @ (RelOp::Eq | RelOp::Ne), lhs, rhs }
            if lhs.ty.is_collection() && rhs.ty.is_collection() =>
        {
            if !is_closed(lhs) || !is_closed(rhs) {
                return Ok(None);
            }
            let equal = *op == RelOp::Eq;
            let (lk, ls) = collection_value(lhs, ev)?;
            let (rk, rs) = collection_value(rhs, ev)?;
            Ok(Some(ground_collection_cmp(equal, lk, &ls, rk, &rs, inst)?))
        }

        _ => Ok(None),
    }
}

/// The body instantiated once per receiver element (used by `isUnique` and
/// `one`, whose patterns compare per-element condition values).
fn per_element_bodies(
    recv: &Expr,
    var: &str,
    body: &Expr,
    ev: &Evaluator<'_>,
    inst: &InstanceModel,
) -> Result<Vec<Expr>, DeriveError> {
    let elements = receiver_elements(recv, ev)?;
    let mut out = Vec::with_capacity(elements.len());
    for el in &elements {
        let lit = value_to_expr(el, inst)?;
        let mut copy = body.clone();
        substitute_var(&mut copy, var, &lit);
        out.push(copy);
    }
    Ok(out)
}

/// Grounded `=` (or its negation) between two concrete collections.
fn ground_collection_cmp(
    equal: bool,
    lk: CollKind,
    ls: &[Value],
    rk: CollKind,
    rs: &[Value],
    inst: &InstanceModel,
) -> Result<Expr, DeriveError> {
    // Kind or size mismatch decides immediately; the remaining cases quantify
    // over elements. (`isUnique`-style positional care is not needed here:
    // all element literals are concrete, so every atom is ground.)
    if lk != rk || ls.len() != rs.len() {
        return Ok(Expr::bool_lit(!equal));
    }
    let lit = |v: &Value| value_to_expr(v, inst);
    let eq_atoms = |xs: &[Value], ys: &[Value]| -> Result<Vec<Expr>, DeriveError> {
        xs.iter()
            .zip(ys)
            .map(|(x, y)| Ok(rel_atom(if equal { RelOp::Eq } else { RelOp::Ne }, lit(x)?, lit(y)?)))
            .collect()
    };
    let out = match lk {
        // Order-sensitive kinds: pointwise comparison.
        CollKind::Sequence | CollKind::OrderedSet => {
            let atoms = eq_atoms(ls, rs)?;
            if equal {
                conjoin(atoms)
            } else {
                disjoin(atoms)
            }
        }
        // Sets: mutual inclusion.
        CollKind::Set => {
            let inclusion = |xs: &[Value], ys: &[Value]| -> Result<Vec<Expr>, DeriveError> {
                xs.iter()
                    .map(|x| {
                        let alts = ys
                            .iter()
                            .map(|y| {
                                Ok(rel_atom(
                                    if equal { RelOp::Eq } else { RelOp::Ne },
                                    lit(x)?,
                                    lit(y)?,
                                ))
                            })
                            .collect::<Result<Vec<_>, DeriveError>>()?;
                        Ok(if equal { disjoin(alts) } else { conjoin(alts) })
                    })
                    .collect()
            };
            let (fwd, bwd) = (inclusion(ls, rs)?, inclusion(rs, ls)?);
            if equal {
                Expr::and(conjoin(fwd), conjoin(bwd))
            } else {
                Expr::or(disjoin(fwd), disjoin(bwd))
            }
        }
        // Bags: every element finds a partner with the same multiplicity on
        // both sides (the size check above makes this symmetric).
        CollKind::Bag => {
            let count = |needle: &Value, hay: &[Value]| -> usize {
                hay.iter().filter(|h| needle.ocl_eq(h) == Some(true)).count()
            };
            let per_elem = ls
                .iter()
                .map(|x| {
                    let alts = rs
                        .iter()
                        .map(|y| {
                            let same_count = count(x, ls) == count(y, rs);
                            let atom = rel_atom(RelOp::Eq, lit(x)?, lit(y)?);
                            Ok(if same_count { atom } else { Expr::bool_lit(false) })
                        })
                        .collect::<Result<Vec<_>, DeriveError>>()?;
                    Ok(disjoin(alts))
                })
                .collect::<Result<Vec<_>, DeriveError>>()?;
            let matched = conjoin(per_elem);
            if equal {
                matched
            } else {
                negate_nnf(matched)
            }
        }
    };
    Ok(out)
}

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

/// Does the subformula read any mutable primitive attribute — directly or
/// through the body of a called user operation? Only such subformulas can be
/// affected by the SMT solver, so only they warrant expansion.
pub fn touches_attributes(e: &Expr, ops: &OpTable) -> bool {
    fn op_touches(name: &str, ops: &OpTable, visiting: &mut Vec<String>) -> bool {
        if visiting.iter().any(|v| v == name) {
            return false; // recursion guard; cycles add nothing new
        }
        let Some(def) = ops.get(name) else { return false };
        visiting.push(name.to_string());
        let hit = walk(&def.body, ops, visiting);
        visiting.pop();
        hit
    }
    fn walk(e: &Expr, ops: &OpTable, visiting: &mut Vec<String>) -> bool {
        match &e.kind {
            ExprKind::Attr { .. } => true,
            ExprKind::UserCall { op, recv, args } => {
                op_touches(op, ops, visiting)
                    || walk(recv, ops, visiting)
                    || args.iter().any(|a| walk(a, ops, visiting))
            }
            _ => e.children().into_iter().any(|c| walk(c, ops, visiting)),
        }
    }
    walk(e, ops, &mut Vec::new())
}

/// No free variables: every `Var` is bound by an enclosing iterator or `let`
/// *within* `e` itself. Receivers that still mention an outer iterator
/// variable sit inside a search-owned region and are left for substitution.
fn is_closed(e: &Expr) -> bool {
    fn walk(e: &Expr, bound: &mut Vec<String>) -> bool {
        match &e.kind {
            ExprKind::Var(n) => bound.iter().any(|b| b == n),
            ExprKind::Iterate { recv, var, body, .. } => {
                if !walk(recv, bound) {
                    return false;
                }
                bound.push(var.clone());
                let ok = walk(body, bound);
                bound.pop();
                ok
            }
            ExprKind::Let { var, init, body, .. } => {
                if !walk(init, bound) {
                    return false;
                }
                bound.push(var.clone());
                let ok = walk(body, bound);
                bound.pop();
                ok
            }
            _ => e.children().into_iter().all(|c| walk(c, bound)),
        }
    }
    walk(e, &mut Vec::new())
}

/// Evaluate a (closed) quantifier receiver to its element list. `null` acts
/// as the empty collection; a defined non-collection is a singleton.
fn receiver_elements(recv: &Expr, ev: &Evaluator<'_>) -> Result<Vec<Value>, DeriveError> {
    match ev.eval_closed(recv) {
        Value::Invalid => Err(DeriveError::Undefined("quantifier receiver")),
        Value::Null => Ok(vec![]),
        Value::Collection { elements, .. } => Ok(elements),
        other => Ok(vec![other]),
    }
}

/// Evaluate a (closed) collection-typed operand, keeping its kind.
fn collection_value(e: &Expr, ev: &Evaluator<'_>) -> Result<(CollKind, Vec<Value>), DeriveError> {
    match ev.eval_closed(e) {
        Value::Invalid => Err(DeriveError::Undefined("collection operand")),
        Value::Null => Ok((CollKind::Set, vec![])),
        Value::Collection { kind, elements } => Ok((kind, elements)),
        other => Ok((CollKind::Set, vec![other])),
    }
}

/// An evaluated value as a literal expression, typed so that a later
/// labeling pass draws the same conclusions it would for parsed syntax
/// (object literals get their class type, collections their kind).
pub fn value_to_expr(v: &Value, inst: &InstanceModel) -> Result<Expr, DeriveError> {
    Ok(match v {
        Value::Boolean(b) => Expr::typed(ExprKind::BoolLit(*b), Type::Boolean),
        Value::Integer(i) => Expr::typed(ExprKind::IntLit(*i), Type::Integer),
        Value::Real(r) => Expr::typed(ExprKind::RealLit(*r), Type::Real),
        Value::Str(s) => Expr::typed(ExprKind::StrLit(s.clone()), Type::String),
        Value::Enum { enumeration, literal } => Expr::typed(
            ExprKind::EnumLit { enumeration: enumeration.clone(), literal: literal.clone() },
            Type::Enum(enumeration.clone()),
        ),
        Value::Object(id) => {
            let class = inst
                .object(id)
                .map(|o| o.class.clone())
                .ok_or(DeriveError::Undefined("dangling object reference"))?;
            Expr::typed(ExprKind::ObjectLit(id.clone()), Type::Class(class))
        }
        Value::Collection { kind, elements } => {
            let elems = elements
                .iter()
                .map(|el| value_to_expr(el, inst))
                .collect::<Result<Vec<_>, _>>()?;
            let elem_ty = elems.first().map(|e| e.ty.clone()).unwrap_or(Type::Void);
            Expr::typed(
                ExprKind::CollectionLit { kind: *kind, elements: elems },
                Type::Collection(*kind, Box::new(elem_ty)),
            )
        }
        Value::Null => Expr::typed(ExprKind::NullLit, Type::Void),
        Value::Invalid => return Err(DeriveError::Undefined("substituted value")),
    })
}

fn rel_atom(op: RelOp, lhs: Expr, rhs: Expr) -> Expr {
    Expr::typed(
        ExprKind::Rel { op, lhs: Box::new(lhs), rhs: Box::new(rhs) },
        Type::Boolean,
    )
}

/// Right-nested conjunction; empty input is `true` (a `forAll` over nothing).
pub(crate) fn conjoin(parts: Vec<Expr>) -> Expr {
    Expr::conjoin_all(parts).unwrap_or_else(|| Expr::bool_lit(true))
}

/// Right-nested disjunction; empty input is `false` (an `exists` over nothing).
pub(crate) fn disjoin(mut parts: Vec<Expr>) -> Expr {
    match parts.pop() {
        None => Expr::bool_lit(false),
        Some(last) => parts.into_iter().rev().fold(last, |acc, p| Expr::or(p, acc)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DataModel, InstanceModel};
    use crate::smt::fixtures::{find, instance, model, prepared};

    fn expanded(src: &str) -> (Expr, Expr, DataModel, InstanceModel, OpTable) {
        let (m, root, ops) = prepared(src);
        let inst = instance();
        let mut e = root.clone();
        {
            let ev = Evaluator::new(&m, &ops, &inst);
            expand(&mut e, &ev, &inst, &ops).unwrap();
        }
        (e, root, m, inst, ops)
    }

    fn agree(expanded: &Expr, original: &Expr, m: &DataModel, inst: &InstanceModel, ops: &OpTable) {
        let ev = Evaluator::new(m, ops, inst);
        assert_eq!(
            ev.eval_closed(expanded),
            ev.eval_closed(original),
            "expansion changed the meaning"
        );
    }

    #[test]
    fn forall_unfolds_over_concrete_objects() {
        let (e, root, m, inst, ops) = expanded("context Person inv a: self.age >= 0");
        assert!(
            find(&e, &|n| matches!(
                &n.kind,
                ExprKind::Iterate { kind: IterKind::ForAll, body, .. }
                    if touches_attributes(body, &ops)
            ))
            .is_none(),
            "an attribute-touching quantifier survived"
        );
        let mut slots = 0;
        e.walk(&mut |n| {
            if let ExprKind::Attr { recv, .. } = &n.kind {
                if matches!(recv.kind, ExprKind::ObjectLit(_)) {
                    slots += 1;
                }
            }
        });
        assert_eq!(slots, 2, "one body copy per person");
        agree(&e, &root, &m, &inst, &ops);
    }

    #[test]
    fn exists_over_an_empty_receiver_becomes_false() {
        let (e, root, m, inst, ops) =
            expanded("context Person inv a: self.clubs->exists(c | c.dues > 0.0)");
        // Person2 has no clubs; that copy collapsed to the empty disjunction.
        assert!(find(&e, &|n| matches!(n.kind, ExprKind::BoolLit(false))).is_some());
        agree(&e, &root, &m, &inst, &ops);
    }

    #[test]
    fn structural_bodies_stay_quantified() {
        let (e, _, _, _, _) =
            expanded("context Person inv a: self.clubs->forAll(c | c.members->size() >= 0)");
        assert!(
            find(&e, &|n| matches!(n.kind, ExprKind::Iterate { kind: IterKind::ForAll, .. }))
                .is_some(),
            "a quantifier with no attribute in its body must not unfold"
        );
    }

    #[test]
    fn open_receivers_are_left_for_substitution() {
        let (e, _, _, _, _) = expanded(
            "context Person inv a: \
             Club.allInstances()->select(c | c.members->forAll(p | p.age >= 0))->size() >= 0",
        );
        // The inner quantifier's receiver mentions the select iterator; it
        // sits in a search-owned region and must survive untouched.
        assert!(find(&e, &|n| matches!(n.kind, ExprKind::ObjectLit(_))).is_none());
        assert!(find(&e, &|n| matches!(n.kind, ExprKind::Iterate { kind: IterKind::Select, .. }))
            .is_some());
    }

    // --- grounding of implicit quantification over literal collections ---

    fn ints(kind: CollKind, xs: &[i64]) -> Expr {
        let elems: Vec<Expr> =
            xs.iter().map(|x| Expr::typed(ExprKind::IntLit(*x), Type::Integer)).collect();
        Expr::typed(
            ExprKind::CollectionLit { kind, elements: elems },
            Type::Collection(kind, Box::new(Type::Integer)),
        )
    }

    fn int(x: i64) -> Expr {
        Expr::typed(ExprKind::IntLit(x), Type::Integer)
    }

    /// Ground `e` and check the result evaluates exactly like the original.
    fn ground_agrees(e: &Expr) {
        let m = model();
        let ops = OpTable::default();
        let inst = InstanceModel::new();
        let ev = Evaluator::new(&m, &ops, &inst);
        let g = ground_shortcut(e, &ev, &inst).unwrap().expect("shortcut should ground");
        assert_eq!(ev.eval_closed(&g), ev.eval_closed(e), "grounding changed the meaning");
    }

    #[test]
    fn includes_and_excludes_ground_to_literal_comparisons() {
        for (needle, _expect) in [(2, true), (5, false)] {
            let e = Expr::typed(
                ExprKind::CollectionOp {
                    recv: Box::new(ints(CollKind::Set, &[1, 2, 3])),
                    op: CollOp::Includes,
                    args: vec![int(needle)],
                },
                Type::Boolean,
            );
            ground_agrees(&e);
            let e = Expr::typed(
                ExprKind::CollectionOp {
                    recv: Box::new(ints(CollKind::Set, &[1, 2, 3])),
                    op: CollOp::Excludes,
                    args: vec![int(needle)],
                },
                Type::Boolean,
            );
            ground_agrees(&e);
        }
    }

    #[test]
    fn is_unique_respects_duplicate_values_positionally() {
        // Identity body over a bag with a duplicate: unique must be false,
        // which requires the pattern's `i = j` guard to compare positions,
        // not values.
        let e = Expr::typed(
            ExprKind::Iterate {
                recv: Box::new(ints(CollKind::Bag, &[2, 2])),
                kind: IterKind::IsUnique,
                var: "i".into(),
                body: Box::new(Expr::typed(ExprKind::Var("i".into()), Type::Integer)),
            },
            Type::Boolean,
        );
        ground_agrees(&e);
    }

    #[test]
    fn one_grounds_to_an_exclusive_witness_disjunction() {
        for xs in [&[1, 2, 3][..], &[2, 2][..], &[][..]] {
            let e = Expr::typed(
                ExprKind::Iterate {
                    recv: Box::new(ints(CollKind::Bag, xs)),
                    kind: IterKind::One,
                    var: "i".into(),
                    body: Box::new(Expr::typed(
                        ExprKind::Rel {
                            op: RelOp::Eq,
                            lhs: Box::new(Expr::typed(ExprKind::Var("i".into()), Type::Integer)),
                            rhs: Box::new(int(2)),
                        },
                        Type::Boolean,
                    )),
                },
                Type::Boolean,
            );
            ground_agrees(&e);
        }
    }

    #[test]
    fn collection_equality_grounds_per_kind() {
        let cases: Vec<(Expr, Expr)> = vec![
            (ints(CollKind::Sequence, &[1, 2]), ints(CollKind::Sequence, &[2, 1])),
            (ints(CollKind::Sequence, &[1, 2]), ints(CollKind::Sequence, &[1, 2])),
            (ints(CollKind::Set, &[1, 2]), ints(CollKind::Set, &[2, 1])),
            (ints(CollKind::Bag, &[1, 2, 2]), ints(CollKind::Bag, &[2, 1, 2])),
            (ints(CollKind::Bag, &[1, 1, 2]), ints(CollKind::Bag, &[2, 1, 2])),
            (ints(CollKind::Set, &[1]), ints(CollKind::Bag, &[1])),
            (ints(CollKind::Sequence, &[]), ints(CollKind::Sequence, &[])),
        ];
        for (l, r) in cases {
            for op in [RelOp::Eq, RelOp::Ne] {
                let e = Expr::typed(
                    ExprKind::Rel { op, lhs: Box::new(l.clone()), rhs: Box::new(r.clone()) },
                    Type::Boolean,
                );
                ground_agrees(&e);
            }
        }
    }
}
