//! Normalization: all invariants, multiplicity bounds and the non-emptiness
//! requirement become *one* closed constraint in negation normal form.
//!
//! The steps, in order:
//!
//! 1. **Explicit quantification** — invariants lose their implicit `self` by
//!    wrapping each context class in a single
//!    `C.allInstances()->forAll(self | ...)`; multiplicity bounds of
//!    association ends join the body of their class's quantifier. The
//!    non-emptiness formula becomes the last conjunct.
//! 2. **Non-emptiness check** — the provided formula must *not* hold in the
//!    empty instance model, otherwise the degenerate empty instance would be
//!    a solution and search would converge to it instantly.
//! 3. **Let inlining** — all binders are first alpha-renamed to fresh names
//!    (so inlining cannot capture), then `let` initializers replace their
//!    variable occurrences, innermost first.
//! 4. **Secondary-form elimination** — `implies`, `xor` and Boolean `if` are
//!    rewritten into and/or/not. Non-Boolean `if` stays (the SMT back end
//!    has a native conditional).
//! 5. **Negation pushing** — `not` moves inward through connectives (De
//!    Morgan), flips quantifiers (`forAll`/`exists` are duals), and is
//!    absorbed into relational operators by complementing them. Residual
//!    `not` sits directly on atoms only.
//! 6. **Conjunction spine** — the top-level conjunction is flattened and
//!    rebuilt right-nested, giving every later stage a stable, predictable
//!    shape.
//!
//! Steps 3 and 4 duplicate subtrees, so both are guarded: if the formula
//! grows past [`BLOWUP_LIMIT`] times its input size, normalization reports
//! an error instead of producing something the search cannot digest.
//!
//! All rewrites preserve the evaluator's semantics *including* null and
//! invalid propagation; a property test below checks exactly that.

use std::collections::BTreeMap;

use crate::eval::Evaluator;
use crate::model::{multiplicity_to_constraint, DataModel, InstanceModel, Value};
use crate::ocl::ast::{BoolOp, Expr, ExprKind, IterKind, Type};
use crate::ocl::types::{check_closed, OpTable};
use crate::ocl::{FrontendError, Invariant};

/// Maximum growth factor tolerated by the duplicating rewrite steps.
pub const BLOWUP_LIMIT: usize = 50;

#[derive(Debug, thiserror::Error)]
pub enum NnfError {
    #[error(
        "the non-emptiness constraint already holds in the empty instance model; \
         it must force at least one object to exist"
    )]
    NonEmptinessHoldsInEmpty,
    #[error("formula grew {after} nodes from {before} during {step} (limit {limit}x)")]
    Blowup { step: &'static str, before: usize, after: usize, limit: usize },
    #[error("internal re-check failed after quantification: {0}")]
    Recheck(#[from] FrontendError),
}

/// The result of normalization: the single combined constraint plus one
/// snapshot per pipeline step (for inspection and dumps).
#[derive(Debug, Clone)]
pub struct Normalized {
    pub constraint: Expr,
    /// User-defined operations with the same rewrites (let inlining,
    /// secondary-form elimination, negation pushing) applied to each body.
    pub ops: OpTable,
    /// `(step name, formula after the step)`, six entries.
    pub trace: Vec<(&'static str, Expr)>,
}

/// Run the whole pipeline. `non_emptiness` must be a closed, type-checked
/// Boolean formula.
pub fn normalize(
    m: &DataModel,
    invariants: &[Invariant],
    ops: &OpTable,
    non_emptiness: &Expr,
) -> Result<Normalized, NnfError> {
    let mut trace = Vec::new();

    // Step 2 first, cheaply: the guard does not depend on the other steps.
    let empty = InstanceModel::new();
    let ev = Evaluator::new(m, ops, &empty);
    if ev.eval_closed(non_emptiness) == Value::Boolean(true) {
        return Err(NnfError::NonEmptinessHoldsInEmpty);
    }

    // Step 1: explicit quantification with one quantifier per context.
    let mut f = quantify(m, invariants, non_emptiness);
    check_closed(&mut f, m, ops)?;
    trace.push(("quantify", f.clone()));
    trace.push(("non-emptiness-check", f.clone()));

    // Step 3: alpha-rename all binders, then inline lets innermost-first.
    let before = f.node_count();
    let mut counter = 0usize;
    alpha_rename(&mut f, &mut Vec::new(), &mut counter);
    inline_lets(&mut f);
    guard("let inlining", before, f.node_count())?;
    trace.push(("inline-lets", f.clone()));

    // Step 4: eliminate implies / xor / Boolean if.
    let before = f.node_count();
    eliminate_secondary(&mut f);
    guard("secondary-form elimination", before, f.node_count())?;
    trace.push(("eliminate-secondary", f.clone()));

    // Step 5: push negations down to the atoms.
    f = push_negations(f);
    trace.push(("push-negations", f.clone()));

    // Step 6: right-nested conjunction spine.
    let mut parts = Vec::new();
    collect_conjuncts(f, &mut parts);
    let f = Expr::conjoin_all(parts).expect("at least the non-emptiness conjunct exists");
    trace.push(("conjunction-spine", f.clone()));

    // Steps 3 through 5 also apply to every user-defined operation body, so
    // the back ends never meet a let, an implies, or a Boolean if there
    // either. (Step 1 does not apply: an operation body is not an
    // invariant; step 6 is only about the top-level conjunction.)
    let mut ops = ops.clone();
    for def in ops.ops.values_mut() {
        let body = &mut def.body;
        let before = body.node_count();
        alpha_rename(body, &mut Vec::new(), &mut counter);
        inline_lets(body);
        guard("let inlining", before, body.node_count())?;
        let before = body.node_count();
        eliminate_secondary(body);
        guard("secondary-form elimination", before, body.node_count())?;
        let owned = std::mem::replace(body, Expr::untyped(ExprKind::NullLit));
        *body = push_negations(owned);
    }

    Ok(Normalized { constraint: f, ops, trace })
}

fn guard(step: &'static str, before: usize, after: usize) -> Result<(), NnfError> {
    if after > before.saturating_mul(BLOWUP_LIMIT) {
        Err(NnfError::Blowup { step, before, after, limit: BLOWUP_LIMIT })
    } else {
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Step 1: explicit quantification
// ---------------------------------------------------------------------------

/// One `C.allInstances()->forAll(self | body1 and body2 and ...)` per
/// context class. Contexts appear in order of their first invariant;
/// classes that only carry multiplicity bounds follow, in association
/// declaration order; the non-emptiness formula is the final conjunct.
fn quantify(m: &DataModel, invariants: &[Invariant], non_emptiness: &Expr) -> Expr {
    // Gather per-context bodies, tracking first-appearance order.
    let mut order: Vec<String> = Vec::new();
    let mut bodies: BTreeMap<String, Vec<Expr>> = BTreeMap::new();
    let mut add = |class: &str, body: Expr| {
        if !bodies.contains_key(class) {
            order.push(class.to_string());
        }
        bodies.entry(class.to_string()).or_default().push(body);
    };

    for inv in invariants {
        add(&inv.context, inv.body.clone());
    }
    for assoc in &m.associations {
        for q in multiplicity_to_constraint(assoc) {
            // Unwrap the synthesized `C.allInstances()->forAll(v | b)` and
            // re-home its body under the shared per-context quantifier.
            let ExprKind::Iterate { recv, var, body, .. } = q.kind else {
                unreachable!("multiplicity constraints are quantified");
            };
            let ExprKind::AllInstances { class } = recv.kind else {
                unreachable!("multiplicity constraints quantify allInstances");
            };
            let mut body = *body;
            rename_free_var(&mut body, &var, "self");
            add(&class, body);
        }
    }

    let mut conjuncts: Vec<Expr> = Vec::new();
    for class in &order {
        let merged = Expr::conjoin_all(bodies.remove(class).unwrap()).unwrap();
        let all = Expr::typed(
            ExprKind::AllInstances { class: class.clone() },
            Type::Collection(crate::model::CollKind::Set, Box::new(Type::Class(class.clone()))),
        );
        conjuncts.push(Expr::typed(
            ExprKind::Iterate {
                recv: Box::new(all),
                kind: IterKind::ForAll,
                var: "self".into(),
                body: Box::new(merged),
            },
            Type::Boolean,
        ));
    }
    conjuncts.push(non_emptiness.clone());
    Expr::conjoin_all(conjuncts).unwrap()
}

/// Replace free occurrences of `from` with a variable named `to`.
fn rename_free_var(e: &mut Expr, from: &str, to: &str) {
    match &mut e.kind {
        ExprKind::Var(name) if name == from => *name = to.to_string(),
        ExprKind::Iterate { recv, var, body, .. } => {
            rename_free_var(recv, from, to);
            if var != from {
                rename_free_var(body, from, to);
            }
        }
        ExprKind::Let { var, init, body, .. } => {
            rename_free_var(init, from, to);
            if var != from {
                rename_free_var(body, from, to);
            }
        }
        _ => {
            for c in e.children_mut() {
                rename_free_var(c, from, to);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Step 3: alpha renaming and let inlining
// ---------------------------------------------------------------------------

/// Give every binder (iterator variables and let variables) a globally
/// unique name `orig_N`. Bound occurrences follow their binder.
fn alpha_rename(e: &mut Expr, scope: &mut Vec<(String, String)>, counter: &mut usize) {
    match &mut e.kind {
        ExprKind::Var(name) => {
            if let Some((_, new)) = scope.iter().rev().find(|(old, _)| old == name) {
                *name = new.clone();
            }
        }
        ExprKind::Iterate { recv, var, body, .. } => {
            alpha_rename(recv, scope, counter);
            *counter += 1;
            let fresh = format!("{var}_{counter}");
            scope.push((std::mem::take(var), fresh.clone()));
            alpha_rename(body, scope, counter);
            scope.pop();
            *var = fresh;
        }
        ExprKind::Let { var, init, body, .. } => {
            alpha_rename(init, scope, counter);
            *counter += 1;
            let fresh = format!("{var}_{counter}");
            scope.push((std::mem::take(var), fresh.clone()));
            alpha_rename(body, scope, counter);
            scope.pop();
            *var = fresh;
        }
        _ => {
            for c in e.children_mut() {
                alpha_rename(c, scope, counter);
            }
        }
    }
}

/// Inline `let` bindings bottom-up. Safe after alpha renaming: no two
/// binders share a name, so substitution cannot capture.
fn inline_lets(e: &mut Expr) {
    for c in e.children_mut() {
        inline_lets(c);
    }
    if let ExprKind::Let { var, body, init, .. } = &mut e.kind {
        let var = std::mem::take(var);
        let init = std::mem::replace(init.as_mut(), Expr::untyped(ExprKind::NullLit));
        let mut body = std::mem::replace(body.as_mut(), Expr::untyped(ExprKind::NullLit));
        substitute_var(&mut body, &var, &init);
        *e = body;
    }
}

/// Negate an expression that is already in negation normal form, staying in
/// negation normal form. Used by quantifier grounding (the `one` construct
/// needs the negation of its per-element condition).
pub(crate) fn negate_nnf(e: Expr) -> Expr {
    negate(e)
}

/// Replace every occurrence of variable `var` by (a clone of) `with`.
/// Assumes binder names are unique (post alpha renaming).
pub(crate) fn substitute_var(e: &mut Expr, var: &str, with: &Expr) {
    if let ExprKind::Var(name) = &e.kind {
        if name == var {
            *e = with.clone();
        }
        return;
    }
    for c in e.children_mut() {
        substitute_var(c, var, with);
    }
}

// ---------------------------------------------------------------------------
// Step 4: eliminate implies, xor, Boolean if
// ---------------------------------------------------------------------------

fn eliminate_secondary(e: &mut Expr) {
    loop {
        let is_boolean = e.ty == Type::Boolean;
        match &mut e.kind {
            ExprKind::Bool { op: BoolOp::Implies, lhs, rhs } => {
                // a implies b  =>  not a or b
                let a = std::mem::replace(lhs.as_mut(), Expr::untyped(ExprKind::NullLit));
                let b = std::mem::replace(rhs.as_mut(), Expr::untyped(ExprKind::NullLit));
                *e = Expr::or(Expr::not(a), b);
            }
            ExprKind::Bool { op: BoolOp::Xor, lhs, rhs } => {
                // a xor b  =>  (a or b) and not (a and b)
                let a = std::mem::replace(lhs.as_mut(), Expr::untyped(ExprKind::NullLit));
                let b = std::mem::replace(rhs.as_mut(), Expr::untyped(ExprKind::NullLit));
                *e = Expr::and(
                    Expr::or(a.clone(), b.clone()),
                    Expr::not(Expr::and(a, b)),
                );
            }
            ExprKind::If { cond, then_branch, else_branch } if is_boolean => {
                // if c then t else f  =>  (c and t) or (not c and f)
                let c = std::mem::replace(cond.as_mut(), Expr::untyped(ExprKind::NullLit));
                let t = std::mem::replace(then_branch.as_mut(), Expr::untyped(ExprKind::NullLit));
                let f = std::mem::replace(else_branch.as_mut(), Expr::untyped(ExprKind::NullLit));
                *e = Expr::or(Expr::and(c.clone(), t), Expr::and(Expr::not(c), f));
            }
            _ => break,
        }
    }
    for c in e.children_mut() {
        eliminate_secondary(c);
    }
}

// ---------------------------------------------------------------------------
// Step 5: push negations down to atoms
// ---------------------------------------------------------------------------

/// Rewrite into negation normal form: `not` survives only directly above
/// atoms (anything that is not a conjunction, disjunction, quantifier,
/// relational comparison, or another negation).
fn push_negations(mut e: Expr) -> Expr {
    if let ExprKind::Not(_) = &e.kind {
        let ExprKind::Not(inner) = e.kind else { unreachable!() };
        return negate(*inner);
    }
    map_children_owned(&mut e, push_negations);
    e
}

/// The negation of `e`, already in negation normal form. All equivalences
/// used here are exact under null/invalid propagation: the non-strict
/// connectives absorb undefined operands symmetrically, quantifier duals
/// mirror that element-wise, and a complemented comparison is undefined for
/// exactly the same operand values as the original.
fn negate(e: Expr) -> Expr {
    let Expr { kind, ty, label, span } = e;
    match kind {
        ExprKind::BoolLit(v) => Expr { kind: ExprKind::BoolLit(!v), ty, label, span },
        ExprKind::Not(inner) => push_negations(*inner),
        ExprKind::Bool { op: BoolOp::And, lhs, rhs } => Expr::or(negate(*lhs), negate(*rhs)),
        ExprKind::Bool { op: BoolOp::Or, lhs, rhs } => Expr::and(negate(*lhs), negate(*rhs)),
        ExprKind::Rel { op, lhs, rhs } => {
            let lhs = Box::new(push_negations(*lhs));
            let rhs = Box::new(push_negations(*rhs));
            Expr { kind: ExprKind::Rel { op: op.complement(), lhs, rhs }, ty, label, span }
        }
        ExprKind::Iterate { recv, kind: IterKind::ForAll, var, body } => {
            let recv = Box::new(push_negations(*recv));
            let body = Box::new(negate(*body));
            Expr { kind: ExprKind::Iterate { recv, kind: IterKind::Exists, var, body }, ty, label, span }
        }
        ExprKind::Iterate { recv, kind: IterKind::Exists, var, body } => {
            let recv = Box::new(push_negations(*recv));
            let body = Box::new(negate(*body));
            Expr { kind: ExprKind::Iterate { recv, kind: IterKind::ForAll, var, body }, ty, label, span }
        }
        other => {
            // Atom: keep the negation, normalize inside.
            let mut inner = Expr { kind: other, ty, label, span };
            map_children_owned(&mut inner, push_negations);
            Expr::not(inner)
        }
    }
}

/// Apply an owning transformation to each direct child.
fn map_children_owned(e: &mut Expr, f: fn(Expr) -> Expr) {
    for c in e.children_mut() {
        let owned = std::mem::replace(c, Expr::untyped(ExprKind::NullLit));
        *c = f(owned);
    }
}

// ---------------------------------------------------------------------------
// Step 6: conjunction spine
// ---------------------------------------------------------------------------

fn collect_conjuncts(e: Expr, out: &mut Vec<Expr>) {
    if let ExprKind::Bool { op: BoolOp::And, .. } = &e.kind {
        let ExprKind::Bool { lhs, rhs, .. } = e.kind else { unreachable!() };
        collect_conjuncts(*lhs, out);
        collect_conjuncts(*rhs, out);
    } else {
        out.push(e);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{Env, Evaluator};
    use crate::model::{
        AssocDecl, AssocEnd, AttrDecl, AttrType, ClassDecl, InstanceModel, Link, ObjectId,
        ObjectInst,
    };
    use crate::ocl::parser::parse_constraint;
    use crate::ocl::pretty_print;
    use crate::ocl::types::{compile, Compiled};

    fn end(class: &str, role: &str, lower: u32, upper: Option<u32>, ordered: bool) -> AssocEnd {
        AssocEnd { class: class.into(), role_name: role.into(), lower, upper, ordered }
    }

    fn attr(name: &str, ty: AttrType) -> AttrDecl {
        AttrDecl { name: name.into(), ty, is_static: false, constant: None }
    }

    fn model() -> DataModel {
        DataModel {
            classes: vec![
                ClassDecl {
                    name: "Person".into(),
                    is_abstract: false,
                    superclass: None,
                    attributes: vec![
                        attr("age", AttrType::Integer),
                        attr("vip", AttrType::Boolean),
                    ],
                },
                ClassDecl {
                    name: "Club".into(),
                    is_abstract: false,
                    superclass: None,
                    attributes: vec![],
                },
            ],
            associations: vec![AssocDecl {
                name: "membership".into(),
                end_a: end("Club", "clubs", 0, Some(2), false),
                end_b: end("Person", "members", 1, None, false),
            }],
            enumerations: vec![],
            operations: vec![],
        }
    }

    fn person(id: &str, age: i64, vip: bool) -> ObjectInst {
        ObjectInst {
            id: ObjectId::new(id),
            class: "Person".into(),
            attrs: [
                ("age".to_string(), Value::Integer(age)),
                ("vip".to_string(), Value::Boolean(vip)),
            ]
            .into_iter()
            .collect(),
        }
    }

    fn instance() -> InstanceModel {
        let mut inst = InstanceModel::new();
        inst.objects = vec![
            person("Person1", 30, true),
            person("Person2", 10, false),
            ObjectInst { id: ObjectId::new("Club1"), class: "Club".into(), attrs: BTreeMap::new() },
        ];
        inst.links = vec![Link {
            assoc: "membership".into(),
            src: ObjectId::new("Club1"),
            dst: ObjectId::new("Person1"),
            position: None,
        }];
        inst.normalize();
        inst
    }

    fn normalize_src(inv_src: &str) -> Normalized {
        let m = model();
        let Compiled { invariants, ops } = compile(&m, inv_src).unwrap();
        let ne = parse_constraint("Person.allInstances()->size() >= 1", &m, &ops).unwrap();
        normalize(&m, &invariants, &ops, &ne).unwrap()
    }

    #[test]
    fn one_quantifier_per_context_in_declaration_order() {
        let n = normalize_src(
            "context Club inv a: self.members->notEmpty()\n\
             context Person inv b: self.age >= 0\n\
             context Club inv c: self.members->size() <= 5",
        );
        let (_, step1) = &n.trace[0];
        let text = pretty_print(step1);
        // Club first (first invariant), then Person; multiplicity bodies are
        // merged into those same quantifiers, not added as new ones.
        let club_pos = text.find("Club.allInstances()->forAll").unwrap();
        let person_pos = text.find("Person.allInstances()->forAll").unwrap();
        assert!(club_pos < person_pos, "{text}");
        assert_eq!(text.matches("Club.allInstances()->forAll").count(), 1, "{text}");
        assert_eq!(text.matches("Person.allInstances()->forAll").count(), 1, "{text}");
        // Multiplicity bounds present: members >= 1 (Person side gets
        // clubs <= 2; Club side gets members >= 1).
        assert!(text.contains("self.members->size() >= 1"), "{text}");
        assert!(text.contains("self.clubs->size() <= 2"), "{text}");
    }

    #[test]
    fn multiplicity_only_contexts_follow_invariant_contexts() {
        let n = normalize_src("context Person inv b: self.age >= 0");
        let (_, step1) = &n.trace[0];
        let text = pretty_print(step1);
        let person_pos = text.find("Person.allInstances()->forAll").unwrap();
        let club_pos = text.find("Club.allInstances()->forAll").unwrap();
        assert!(person_pos < club_pos, "{text}");
        // Non-emptiness is the last conjunct.
        let ne_pos = text.rfind("Person.allInstances()->size() >= 1").unwrap();
        assert!(ne_pos > club_pos, "{text}");
    }

    #[test]
    fn rejects_non_emptiness_that_holds_in_the_empty_instance() {
        let m = model();
        let Compiled { invariants, ops } = compile(&m, "context Person inv a: true").unwrap();
        let ne = parse_constraint("Person.allInstances()->size() >= 0", &m, &ops).unwrap();
        let err = normalize(&m, &invariants, &ops, &ne).unwrap_err();
        assert!(matches!(err, NnfError::NonEmptinessHoldsInEmpty), "{err}");
    }

    #[test]
    fn lets_are_gone_and_secondary_forms_eliminated() {
        let n = normalize_src(
            "context Person inv a: let a = self.age in (a > 0 implies self.vip) xor a > 10\n\
             context Person inv b: if self.vip then self.age > 20 else self.age <= 20 endif",
        );
        n.constraint.walk(&mut |node| match &node.kind {
            ExprKind::Let { .. } => panic!("let survived"),
            ExprKind::Bool { op: BoolOp::Implies | BoolOp::Xor, .. } => {
                panic!("secondary connective survived")
            }
            ExprKind::If { .. } if node.ty == Type::Boolean => panic!("Boolean if survived"),
            _ => {}
        });
    }

    #[test]
    fn non_boolean_if_survives_for_the_smt_backend() {
        let n = normalize_src(
            "context Person inv a: (if self.vip then 1 else 2 endif) = 1 implies self.age > 0",
        );
        let mut saw_ite = false;
        n.constraint.walk(&mut |node| {
            if let ExprKind::If { .. } = &node.kind {
                assert_eq!(node.ty, Type::Integer);
                saw_ite = true;
            }
        });
        assert!(saw_ite);
    }

    /// In negation normal form, `not` may only sit directly on atoms.
    fn assert_nnf(e: &Expr) {
        e.walk(&mut |node| {
            if let ExprKind::Not(inner) = &node.kind {
                match &inner.kind {
                    ExprKind::Not(_)
                    | ExprKind::Bool { .. }
                    | ExprKind::Rel { .. }
                    | ExprKind::BoolLit(_)
                    | ExprKind::Iterate { kind: IterKind::ForAll | IterKind::Exists, .. } => {
                        panic!("negation above a non-atom: {}", pretty_print(node))
                    }
                    _ => {}
                }
            }
        });
    }

    #[test]
    fn negations_end_up_on_atoms_with_complemented_comparisons() {
        let n = normalize_src(
            "context Person inv a: not (self.age > 0 and self.vip)\n\
             context Person inv b: not Person.allInstances()->exists(p | not (p.age <= 5))",
        );
        assert_nnf(&n.constraint);
        let text = pretty_print(&n.constraint);
        // not (age > 0) became age <= 0; the exists flipped to forAll.
        assert!(text.contains(".age <= 0 or not self_1.vip"), "{text}");
        assert!(text.contains("->forAll(p_"), "{text}");
        assert!(!text.contains("exists"), "{text}");
    }

    #[test]
    fn conjunction_spine_is_right_nested() {
        let n = normalize_src(
            "context Person inv a: self.age >= 0\n\
             context Club inv b: self.members->notEmpty()",
        );
        let mut cur = &n.constraint;
        while let ExprKind::Bool { op: BoolOp::And, lhs, rhs } = &cur.kind {
            assert!(
                !matches!(lhs.kind, ExprKind::Bool { op: BoolOp::And, .. }),
                "left child of the spine must not be a conjunction"
            );
            cur = rhs;
        }
    }

    #[test]
    fn alpha_renaming_prevents_capture_during_inlining() {
        // The let initializer mentions the outer `self`; the inner
        // quantifier reuses the name `self`. Without renaming, inlining
        // would bind `a` to the inner iterator and the formula would
        // trivially hold. Ages 30 and 10 make the correct reading false.
        let n = normalize_src(
            "context Person inv a: \
               let a = self.age in Person.allInstances()->forAll(self | self.age >= a)",
        );
        let inst = instance();
        let m = model();
        let ops = OpTable::default();
        let ev = Evaluator::new(&m, &ops, &inst);
        assert_eq!(ev.eval_closed(&n.constraint), Value::Boolean(false));
    }

    #[test]
    fn operation_bodies_are_rewritten_too() {
        let m = model();
        let src = "context Person inv a: self.taxed()\n\
                   context Person inv b: true\n\
                   context Person::taxed(): Boolean body: \
                     let t = self.age in (t > 18 implies self.vip)";
        let Compiled { invariants, ops } = compile(&m, src).unwrap();
        let ne = parse_constraint("Person.allInstances()->size() >= 1", &m, &ops).unwrap();
        let n = normalize(&m, &invariants, &ops, &ne).unwrap();
        let body = &n.ops.get("taxed").unwrap().body;
        body.walk(&mut |node| match &node.kind {
            ExprKind::Let { .. } => panic!("let survived in op body"),
            ExprKind::Bool { op: BoolOp::Implies, .. } => panic!("implies survived in op body"),
            _ => {}
        });
        // `t > 18` under the eliminated implies becomes `t <= 18`.
        assert!(pretty_print(body).contains("<= 18"), "{}", pretty_print(body));
        // The transformed body still evaluates like the original.
        let inst = instance();
        let ev_old = Evaluator::new(&m, &ops, &inst);
        let ev_new = Evaluator::new(&m, &n.ops, &inst);
        let call = parse_constraint("Person.allInstances()->forAll(p | p.taxed())", &m, &ops)
            .unwrap();
        assert_eq!(
            ev_old.eval(&call, &mut Env::new()),
            ev_new.eval(&call, &mut Env::new())
        );
    }

    #[test]
    fn normalization_preserves_evaluation() {
        // Oracle: the hand-built quantified original must evaluate exactly
        // like the normalized output, including null/invalid behavior.
        let bodies = [
            "self.age > 0 implies self.vip",
            "self.vip xor self.age < 15",
            "not (self.vip and self.age.div(0) = 1)",
            "if self.vip then self.age > 20 else self.age < 20 endif",
            "let b = self.age * 2 in b.max(self.age) = b",
            "not self.clubs->exists(c | c.members->size() > 1)",
            "self.clubs->forAll(c | c.members->includes(self))",
            "self.age / 0 > 1 or self.age >= 10",
            "not (self.age <> 30) or self.clubs->notEmpty()",
            "Person.allInstances()->one(p | p.vip)",
            "Person.allInstances()->isUnique(p | p.age)",
            "let x = self.clubs->size() in (x >= 1 implies self.vip) and x <= 2",
            "not self.vip implies self.clubs->isEmpty()",
        ];
        let m = model();
        let inst = instance();
        for body in bodies {
            let src = format!("context Person inv t: {body}");
            let Compiled { invariants, ops } = compile(&m, &src).unwrap();
            let ne = parse_constraint("Person.allInstances()->size() >= 1", &m, &ops).unwrap();

            // Hand-built original: forAll(self | body) and non-emptiness.
            let all = Expr::typed(
                ExprKind::AllInstances { class: "Person".into() },
                Type::Collection(
                    crate::model::CollKind::Set,
                    Box::new(Type::Class("Person".into())),
                ),
            );
            let original = Expr::and(
                Expr::typed(
                    ExprKind::Iterate {
                        recv: Box::new(all),
                        kind: IterKind::ForAll,
                        var: "self".into(),
                        body: Box::new(invariants[0].body.clone()),
                    },
                    Type::Boolean,
                ),
                ne.clone(),
            );

            let n = normalize(&m, &invariants, &ops, &ne).unwrap();
            assert_nnf(&n.constraint);

            let ev = Evaluator::new(&m, &ops, &inst);
            let expected = ev.eval(&original, &mut Env::new());
            let got = ev.eval(&n.constraint, &mut Env::new());
            assert_eq!(
                got, expected,
                "{body}\nnormalized: {}",
                pretty_print(&n.constraint)
            );
        }
    }
}
