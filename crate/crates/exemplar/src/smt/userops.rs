//! Preparing user-defined operations for SMT-LIB emission.
//!
//! Three treatments, applied to every operation reachable from a surviving
//! call site in the processed constraint:
//!
//! 1. **Externalization** — an operation body reading `self.attr` implicitly
//!    depends on its caller's attribute slots. Each such attribute becomes an
//!    explicit parameter `P1`, `P2`, … and every call site passes the
//!    caller's slot (`T1.getAge()` becomes `getAge(T1.birthYear)`). An
//!    operation calling another operation on `self` forwards the callee's
//!    externalized parameters out of its own.
//! 2. **Cloning** — a body containing quantification or search-owned
//!    structure (navigation, collection operations, …) evaluates differently
//!    per calling object, so it is cloned once per caller
//!    (`getAge_for_T1`), the clone's `self` is fixed to that object, and the
//!    clone is expanded and substituted like the main constraint.
//! 3. **Ordering** — emitted definitions are sorted so that no operation
//!    depends on one defined after it.
//!
//! Bare parameter references do *not* trigger cloning: a parameter is a
//! formula variable for the solver, not search-owned content.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use crate::eval::Evaluator;
use crate::label::LabeledOps;
use crate::model::{DataModel, InstanceModel, ObjectId};
use crate::nnf::substitute_var;
use crate::ocl::ast::{Expr, ExprKind, Label, MethodOp, Type};
use crate::ocl::types::OpTable;

use super::expand::expand;
use super::substitute::substitute;
use super::DeriveError;

/// One operation ready for `define-fun` emission.
#[derive(Debug, Clone)]
pub struct ProcessedOp {
    pub name: String,
    /// Declared parameters followed by externalized `P…` parameters.
    pub params: Vec<(String, Type)>,
    pub return_type: Type,
    pub body: Expr,
}

/// Rewrite the surviving call sites in `root` and produce the operation
/// definitions they need, in dependency order.
pub fn process_operations(
    root: &mut Expr,
    labeled: &LabeledOps,
    full_ops: &OpTable,
    ev: &Evaluator<'_>,
    inst: &InstanceModel,
    m: &DataModel,
) -> Result<Vec<ProcessedOp>, DeriveError> {
    let prepared = prepare_ops(labeled, m)?;

    // Rewrite the root's call sites; collect clone demands.
    let mut clones_todo: VecDeque<(String, ObjectId)> = VecDeque::new();
    rewrite_call_sites(root, &prepared, &mut clones_todo)?;

    // Process demanded clones; their bodies may demand further clones.
    let mut emitted: BTreeMap<String, ProcessedOp> = BTreeMap::new();
    while let Some((op_name, caller)) = clones_todo.pop_front() {
        let clone_name = clone_name(&op_name, &caller);
        if emitted.contains_key(&clone_name) {
            continue;
        }
        let p = prepared.get(&op_name).expect("clone demanded for a prepared op");
        let mut body = p.body.clone();
        let self_lit = super::expand::value_to_expr(&crate::model::Value::Object(caller.clone()), inst)?;
        substitute_var(&mut body, "self", &self_lit);
        expand(&mut body, ev, inst, full_ops)?;
        crate::label::label_ast(&mut body, full_ops);
        substitute_if_closed(&mut body, ev, inst)?;
        rewrite_call_sites(&mut body, &prepared, &mut clones_todo)?;
        emitted.insert(
            clone_name.clone(),
            ProcessedOp {
                name: clone_name,
                params: p.params.clone(),
                return_type: p.return_type.clone(),
                body,
            },
        );
    }

    // Generic (uncloned) definitions, for every op name referenced by the
    // root or an emitted body under its plain name.
    loop {
        let mut wanted: BTreeSet<String> = BTreeSet::new();
        let mut scan = |e: &Expr| {
            e.walk(&mut |n| {
                if let ExprKind::UserCall { op, .. } = &n.kind {
                    if !emitted.contains_key(op) && prepared.contains_key(op) {
                        wanted.insert(op.clone());
                    }
                }
            })
        };
        scan(root);
        for p in emitted.values() {
            scan(&p.body);
        }
        if wanted.is_empty() {
            break;
        }
        for name in wanted {
            let p = prepared.get(&name).expect("scanned name is prepared");
            emitted.insert(
                name.clone(),
                ProcessedOp {
                    name,
                    params: p.params.clone(),
                    return_type: p.return_type.clone(),
                    body: p.body.clone(),
                },
            );
        }
    }

    dependency_sort(emitted)
}

/// Substitution variant for operation bodies: a search-labeled node is
/// evaluated only if it is closed; free parameter references make a subtree
/// part of the emitted formula instead.
fn substitute_if_closed(
    e: &mut Expr,
    ev: &Evaluator<'_>,
    inst: &InstanceModel,
) -> Result<(), DeriveError> {
    if e.label == Some(Label::Search) && is_closed_expr(e) {
        return substitute(e, ev, inst);
    }
    for c in e.children_mut() {
        substitute_if_closed(c, ev, inst)?;
    }
    Ok(())
}

fn is_closed_expr(e: &Expr) -> bool {
    fn walk(e: &Expr, bound: &mut Vec<String>) -> bool {
        match &e.kind {
            ExprKind::Var(n) => bound.iter().any(|b| b == n),
            ExprKind::Iterate { recv, var, body, .. } | ExprKind::Let { var, init: recv, body, .. } => {
                if !walk(recv, bound) {
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

// ---------------------------------------------------------------------------
// Preparation: externalization and the clone decision, per operation
// ---------------------------------------------------------------------------

struct PreparedOp {
    params: Vec<(String, Type)>,
    return_type: Type,
    /// Externalized attribute names, in `P1…Pk` order.
    externals: Vec<String>,
    /// Externalized body (still labeled; `self` only in structural places).
    body: Expr,
    needs_clone: bool,
    user_param_count: usize,
}

fn prepare_ops(
    labeled: &LabeledOps,
    m: &DataModel,
) -> Result<BTreeMap<String, PreparedOp>, DeriveError> {
    // Externalized attribute lists, to a fixpoint: an operation needs its own
    // `self.attr` reads plus whatever operations it calls on `self` need.
    let mut externals: BTreeMap<String, Vec<String>> = BTreeMap::new();
    loop {
        let mut changed = false;
        for (name, def) in &labeled.smt.ops {
            let mut list: Vec<String> = externals.get(name).cloned().unwrap_or_default();
            collect_externals(&def.body, &externals, &mut list);
            if externals.get(name) != Some(&list) {
                externals.insert(name.clone(), list);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    // Clone demand, also to a fixpoint: search-owned structure in the body,
    // or a `self` call to an operation that itself demands cloning (the
    // callee's clone is named after the caller's object, which only a clone
    // of the caller knows).
    let mut clone_set: BTreeSet<String> = labeled
        .smt
        .ops
        .iter()
        .filter(|(_, d)| needs_clone(&d.body))
        .map(|(n, _)| n.clone())
        .collect();
    loop {
        let mut changed = false;
        for (name, def) in &labeled.smt.ops {
            if clone_set.contains(name) {
                continue;
            }
            let mut hit = false;
            def.body.walk(&mut |n| {
                if let ExprKind::UserCall { recv, op, .. } = &n.kind {
                    hit |= is_self(recv) && clone_set.contains(op);
                }
            });
            if hit {
                clone_set.insert(name.clone());
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let mut out = BTreeMap::new();
    for (name, def) in &labeled.smt.ops {
        let ext = externals.get(name).cloned().unwrap_or_default();
        let mut body = def.body.clone();
        externalize_body(&mut body, &ext, &externals);
        let mut params = def.params.clone();
        for (i, attr) in ext.iter().enumerate() {
            let ty = m
                .attribute(&def.context, attr)
                .map(|a| crate::ocl::types::attr_type(&a.ty))
                .ok_or(DeriveError::Undefined("externalized attribute lookup"))?;
            params.push((format!("P{}", i + 1), ty));
        }
        out.insert(
            name.clone(),
            PreparedOp {
                params,
                return_type: def.return_type.clone(),
                externals: ext,
                body,
                needs_clone: clone_set.contains(name),
                user_param_count: def.params.len(),
            },
        );
    }
    Ok(out)
}

/// First-encounter order of `self` attribute reads, then callee externals.
fn collect_externals(e: &Expr, all: &BTreeMap<String, Vec<String>>, list: &mut Vec<String>) {
    match &e.kind {
        ExprKind::Attr { recv, attr } if is_self(recv) => {
            if !list.contains(attr) {
                list.push(attr.clone());
            }
        }
        ExprKind::UserCall { recv, op, args } if is_self(recv) => {
            if let Some(theirs) = all.get(op) {
                for a in theirs {
                    if !list.contains(a) {
                        list.push(a.clone());
                    }
                }
            }
            for a in args {
                collect_externals(a, all, list);
            }
        }
        _ => {
            for c in e.children() {
                collect_externals(c, all, list);
            }
        }
    }
}

/// Rewrite `self.attr` to its `P…` parameter and forward callee externals at
/// `self` call sites.
fn externalize_body(e: &mut Expr, ext: &[String], all: &BTreeMap<String, Vec<String>>) {
    let replace = match &e.kind {
        ExprKind::Attr { recv, attr } if is_self(recv) => {
            ext.iter().position(|a| a == attr).map(|i| (i, e.ty.clone()))
        }
        _ => None,
    };
    if let Some((i, ty)) = replace {
        *e = Expr::typed(ExprKind::Var(format!("P{}", i + 1)), ty);
        return;
    }
    if let ExprKind::UserCall { recv, op, args } = &mut e.kind {
        if matches!(&recv.kind, ExprKind::Var(n) if n == "self") {
            if let Some(theirs) = all.get(op.as_str()) {
                for a in theirs {
                    let i = ext.iter().position(|x| x == a).expect("fixpoint covers callee externals");
                    args.push(Expr::untyped(ExprKind::Var(format!("P{}", i + 1))));
                }
            }
        }
    }
    for c in e.children_mut() {
        externalize_body(c, ext, all);
    }
}

fn is_self(e: &Expr) -> bool {
    matches!(&e.kind, ExprKind::Var(n) if n == "self")
}

/// Does this (labeled) body contain quantification or search-owned
/// structure, so that it must be cloned per calling object?
fn needs_clone(body: &Expr) -> bool {
    let mut found = false;
    body.walk(&mut |n| {
        found |= match &n.kind {
            ExprKind::Iterate { .. }
            | ExprKind::CollectionOp { .. }
            | ExprKind::Nav { .. }
            | ExprKind::AllInstances { .. }
            | ExprKind::TypeCheckOp { .. } => true,
            ExprKind::MethodCall { op: MethodOp::OclIsUndefined | MethodOp::OclIsInvalid, .. } => true,
            ExprKind::UserCall { .. } => n.label == Some(Label::Search),
            _ => false,
        };
    });
    found
}

// ---------------------------------------------------------------------------
// Call-site rewriting
// ---------------------------------------------------------------------------

/// Bring every call site in `e` to its final form: pass the receiver's
/// attribute slots for the callee's externalized parameters (when the
/// receiver is a concrete object and the site has not been extended yet) and
/// divert to a per-object clone when the callee demands one.
fn rewrite_call_sites(
    e: &mut Expr,
    prepared: &BTreeMap<String, PreparedOp>,
    clones_todo: &mut VecDeque<(String, ObjectId)>,
) -> Result<(), DeriveError> {
    for c in e.children_mut() {
        rewrite_call_sites(c, prepared, clones_todo)?;
    }
    if let ExprKind::UserCall { recv, op, args } = &mut e.kind {
        let Some(p) = prepared.get(op.as_str()) else {
            // A call that survived substitution always leads to an
            // SMT-labeled operation; anything else cannot be emitted.
            return Err(DeriveError::Untranslatable(format!(
                "call to search-owned operation {op}"
            )));
        };
        if let ExprKind::ObjectLit(id) = &recv.kind {
            if args.len() == p.user_param_count {
                for attr in &p.externals {
                    let slot_ty = p.params[p.user_param_count
                        + p.externals.iter().position(|a| a == attr).unwrap()]
                    .1
                    .clone();
                    args.push(Expr::typed(
                        ExprKind::Attr { recv: recv.clone(), attr: attr.clone() },
                        slot_ty,
                    ));
                }
            }
            if p.needs_clone {
                let id = id.clone();
                clones_todo.push_back((op.clone(), id.clone()));
                *op = clone_name(op, &id);
            }
        }
    }
    Ok(())
}

fn clone_name(op: &str, caller: &ObjectId) -> String {
    format!("{op}_for_{caller}")
}

// ---------------------------------------------------------------------------
// Dependency ordering
// ---------------------------------------------------------------------------

/// Callee-before-caller order over the emitted definitions; a cycle cannot
/// arise from labeling (recursive operations never reach the SMT side) and
/// is reported rather than looped on.
fn dependency_sort(defs: BTreeMap<String, ProcessedOp>) -> Result<Vec<ProcessedOp>, DeriveError> {
    let mut order: Vec<String> = Vec::new();
    let mut state: BTreeMap<String, u8> = BTreeMap::new(); // 1 = visiting, 2 = done

    fn visit(
        name: &str,
        defs: &BTreeMap<String, ProcessedOp>,
        state: &mut BTreeMap<String, u8>,
        order: &mut Vec<String>,
    ) -> Result<(), DeriveError> {
        match state.get(name) {
            Some(2) => return Ok(()),
            Some(1) => return Err(DeriveError::OpCycle(name.to_string())),
            _ => {}
        }
        state.insert(name.to_string(), 1);
        let mut callees: BTreeSet<String> = BTreeSet::new();
        if let Some(def) = defs.get(name) {
            def.body.walk(&mut |n| {
                if let ExprKind::UserCall { op, .. } = &n.kind {
                    callees.insert(op.clone());
                }
            });
        }
        for callee in callees {
            if defs.contains_key(&callee) {
                visit(&callee, defs, state, order)?;
            }
        }
        state.insert(name.to_string(), 2);
        order.push(name.to_string());
        Ok(())
    }

    for name in defs.keys() {
        visit(name, &defs, &mut state, &mut order)?;
    }
    let mut defs = defs;
    Ok(order
        .into_iter()
        .filter_map(|n| defs.remove(&n))
        .collect())
}
