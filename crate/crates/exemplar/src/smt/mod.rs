//! The SMT half of the hybrid derivation.
//!
//! On each search iteration the labeled constraint is specialized to the
//! *current* instance model and handed to an external SMT solver, which
//! repairs the primitive attribute values if it can:
//!
//! 1. [`expand`](expand::expand) — quantifiers (and implicit-quantification
//!    shortcuts) whose bodies involve primitive attributes unfold over the
//!    concrete objects of the instance; the result is quantifier-free.
//! 2. Relabeling + [`substitute`](substitute::substitute) — the expanded
//!    tree is labeled afresh and every search-owned subformula freezes to a
//!    literal of its current evaluation.
//! 3. [`process_operations`](userops::process_operations) — called
//!    operations get their `self.attr` reads externalized into parameters,
//!    and bodies with search-owned structure are cloned per calling object.
//! 4. [`translate`](translate::translate) — what remains becomes an SMT-LIB
//!    script, with one declared constant per surviving attribute slot.
//! 5. [`solve_and_lift`](solver::solve_and_lift) — an external process runs
//!    the script; a `sat` model is lifted back into the attribute slots.
//!
//! [`futile_check`] is the cheap gate in front of all this: if the
//! constraint stays false even when every attribute-dependent subformula is
//! assumed `true`, the solver cannot help this iteration and the pipeline
//! is skipped.

pub mod expand;
pub mod solver;
pub mod substitute;
pub mod translate;
pub mod userops;

pub use solver::{
    lift_model, resolve_solver, run_job, solve_and_lift, LiftOutcome, SolverCmd, SolverError,
};
pub use translate::translate;
pub use userops::{process_operations, ProcessedOp};

use crate::eval::Evaluator;
use crate::label::{label_ast, label_user_ops};
use crate::model::{DataModel, InstanceModel, ObjectId, Value};
use crate::ocl::ast::{BoolOp, Expr, ExprKind, IterKind, Type};
use crate::ocl::types::OpTable;

/// Why no SMT job could be derived this iteration.
#[derive(Debug, thiserror::Error)]
pub enum DeriveError {
    /// Evaluating a search-owned subformula or a quantifier receiver came
    /// out `invalid`; nothing sound can be handed to the solver, so the SMT
    /// step is skipped and the search continues.
    #[error("evaluation was undefined while deriving the formula ({0})")]
    Undefined(&'static str),
    /// Emitted operation definitions depend on each other cyclically. The
    /// labeling keeps recursive operations on the search side, so this
    /// indicates an internal inconsistency rather than a user error.
    #[error("user-defined operations form a definition cycle at {0}")]
    OpCycle(String),
    /// The processed formula still contains something with no SMT-LIB
    /// counterpart.
    #[error("cannot translate to SMT-LIB: {0}")]
    Untranslatable(String),
}

/// The SMT-LIB sorts in play. Enumerations are declared as datatypes with
/// one nullary constructor per literal.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum SmtSort {
    Bool,
    Int,
    Real,
    Str,
    Enum(String),
}

impl SmtSort {
    pub fn name(&self) -> &str {
        match self {
            SmtSort::Bool => "Bool",
            SmtSort::Int => "Int",
            SmtSort::Real => "Real",
            SmtSort::Str => "String",
            SmtSort::Enum(n) => n,
        }
    }

    pub fn of_type(ty: &Type) -> Option<SmtSort> {
        Some(match ty {
            Type::Boolean => SmtSort::Bool,
            Type::Integer => SmtSort::Int,
            Type::Real => SmtSort::Real,
            Type::String => SmtSort::Str,
            Type::Enum(n) => SmtSort::Enum(n.clone()),
            _ => return None,
        })
    }
}

/// One declared SMT constant and the attribute slot it stands for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Binding {
    pub var: String,
    pub object: ObjectId,
    pub attr: String,
    pub sort: SmtSort,
}

/// A ready-to-run solver job: the complete script plus what its declared
/// constants mean, and (for inspection) which enumerations and operation
/// definitions it required.
#[derive(Debug, Clone)]
pub struct SmtJob {
    pub script: String,
    pub bindings: Vec<Binding>,
    pub enum_decls: Vec<String>,
    pub op_decls: Vec<String>,
}

/// Outcome of deriving the per-iteration formula.
#[derive(Debug, Clone)]
pub enum Derived {
    Job(SmtJob),
    /// Substitution collapsed the whole constraint to a constant — every
    /// subformula was search-owned. `true` cannot happen for an unsatisfied
    /// constraint, and `false` means the solver has nothing to repair.
    Constant(bool),
}

/// Specialize the labeled, normalized constraint `root` to `inst` and build
/// the solver job for it. `ops` must be the normalized operation table the
/// labels were computed against.
pub fn derive_formula(
    m: &DataModel,
    ops: &OpTable,
    root: &Expr,
    inst: &InstanceModel,
) -> Result<Derived, DeriveError> {
    let ev = Evaluator::new(m, ops, inst);
    let mut f = root.clone();
    expand::expand(&mut f, &ev, inst, ops)?;
    // Expansion rewrote the tree; labels are recomputed before substitution
    // so every node's owner is current.
    label_ast(&mut f, ops);
    substitute::substitute(&mut f, &ev, inst)?;
    fold_constants(&mut f);
    if let ExprKind::BoolLit(b) = f.kind {
        return Ok(Derived::Constant(b));
    }
    let labeled = label_user_ops(&f, ops);
    let defs = userops::process_operations(&mut f, &labeled, ops, &ev, inst, m)?;
    let job = translate::translate(m, &f, &defs)?;
    Ok(Derived::Job(job))
}

/// Could the solver even help? Every Boolean subformula whose truth depends
/// on primitive attributes — anything an attribute repair could influence,
/// however indirectly — is replaced by `true`, the most optimistic outcome,
/// and the rest is evaluated as-is. A `false` result proves the structural
/// remainder blocks the constraint no matter what the solver writes into the
/// attribute slots, so the call is futile.
///
/// The replacement descends through `and` / `or` and through
/// `forAll` / `exists` bodies (all monotone in their Boolean parts), which
/// keeps the check sharp for the common mixed-conjunction shape; everywhere
/// else the topmost attribute-dependent Boolean node is replaced wholesale,
/// because contexts like `select(…)->size() = 1` are not monotone and only
/// the whole-node assumption is safe. Undefined evaluation counts as "might
/// help": the check never skips a call that could have worked.
pub fn futile_check(root: &Expr, ev: &Evaluator<'_>, ops: &OpTable) -> bool {
    let mut f = root.clone();
    assume_repairable_true(&mut f, ops);
    ev.eval_closed(&f) == Value::Boolean(false)
}

fn assume_repairable_true(e: &mut Expr, ops: &OpTable) {
    if matches!(&e.kind, ExprKind::Bool { op: BoolOp::And | BoolOp::Or, .. }) {
        for c in e.children_mut() {
            assume_repairable_true(c, ops);
        }
        return;
    }
    if let ExprKind::Iterate { kind: IterKind::ForAll | IterKind::Exists, recv, body, .. } =
        &mut e.kind
    {
        if !expand::touches_attributes(recv, ops) {
            assume_repairable_true(body, ops);
            return;
        }
    }
    if e.ty == Type::Boolean && expand::touches_attributes(e, ops) {
        *e = Expr::bool_lit(true);
    }
}

/// Bottom-up folding of the Boolean literals substitution leaves behind:
/// `false` absorbs a conjunction and vanishes from a disjunction (dually for
/// `true`), and a literal condition selects its `if` branch. All of these
/// are exact under OCL's non-strict connectives, so the folded formula
/// evaluates identically — it is just smaller, and a fully search-owned
/// constraint collapses to a single literal.
fn fold_constants(e: &mut Expr) {
    for c in e.children_mut() {
        fold_constants(c);
    }
    let replacement = match &e.kind {
        ExprKind::Bool { op: BoolOp::And, lhs, rhs } => match (&lhs.kind, &rhs.kind) {
            (ExprKind::BoolLit(false), _) | (_, ExprKind::BoolLit(false)) => {
                Some(Expr::bool_lit(false))
            }
            (ExprKind::BoolLit(true), _) => Some((**rhs).clone()),
            (_, ExprKind::BoolLit(true)) => Some((**lhs).clone()),
            _ => None,
        },
        ExprKind::Bool { op: BoolOp::Or, lhs, rhs } => match (&lhs.kind, &rhs.kind) {
            (ExprKind::BoolLit(true), _) | (_, ExprKind::BoolLit(true)) => {
                Some(Expr::bool_lit(true))
            }
            (ExprKind::BoolLit(false), _) => Some((**rhs).clone()),
            (_, ExprKind::BoolLit(false)) => Some((**lhs).clone()),
            _ => None,
        },
        ExprKind::Not(x) => match &x.kind {
            ExprKind::BoolLit(b) => Some(Expr::bool_lit(!b)),
            _ => None,
        },
        ExprKind::If { cond, then_branch, else_branch } => match &cond.kind {
            ExprKind::BoolLit(true) => Some((**then_branch).clone()),
            ExprKind::BoolLit(false) => Some((**else_branch).clone()),
            _ => None,
        },
        _ => None,
    };
    if let Some(r) = replacement {
        *e = r;
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    //! Shared scaffolding for the tests in this module's submodules.

    use std::path::PathBuf;

    use crate::label::label_ast;
    use crate::model::{
        AssocDecl, AssocEnd, AttrDecl, AttrType, ClassDecl, DataModel, EnumDecl, InstanceModel,
        Link, ObjectId, ObjectInst, ParamDecl, UserOpDecl, Value,
    };
    use crate::nnf::normalize;
    use crate::ocl::ast::Expr;
    use crate::ocl::parser::parse_constraint;
    use crate::ocl::types::{compile, Compiled, OpTable};

    fn end(class: &str, role: &str, lower: u32, upper: Option<u32>, ordered: bool) -> AssocEnd {
        AssocEnd { class: class.into(), role_name: role.into(), lower, upper, ordered }
    }

    fn attr(name: &str, ty: AttrType) -> AttrDecl {
        AttrDecl { name: name.into(), ty, is_static: false, constant: None }
    }

    pub fn model() -> DataModel {
        DataModel {
            classes: vec![
                ClassDecl {
                    name: "Person".into(),
                    is_abstract: false,
                    superclass: None,
                    attributes: vec![
                        attr("age", AttrType::Integer),
                        attr("name", AttrType::String),
                        attr("vip", AttrType::Boolean),
                        attr("mood", AttrType::Enum("Mood".into())),
                        attr("weather", AttrType::Enum("Weather".into())),
                        AttrDecl {
                            name: "MAX".into(),
                            ty: AttrType::Integer,
                            is_static: true,
                            constant: Some(Value::Integer(150)),
                        },
                    ],
                },
                ClassDecl {
                    name: "Club".into(),
                    is_abstract: false,
                    superclass: None,
                    attributes: vec![attr("dues", AttrType::Real)],
                },
            ],
            associations: vec![AssocDecl {
                name: "membership".into(),
                end_a: end("Club", "clubs", 0, None, false),
                end_b: end("Person", "members", 0, None, false),
            }],
            enumerations: vec![
                EnumDecl { name: "Mood".into(), literals: vec!["Calm".into(), "Wild".into()] },
                EnumDecl { name: "Weather".into(), literals: vec!["Calm".into(), "Storm".into()] },
            ],
            operations: vec![
                UserOpDecl {
                    name: "isAdult".into(),
                    context: "Person".into(),
                    params: vec![],
                    return_type: AttrType::Boolean,
                    body: "self.age >= 18".into(),
                },
                UserOpDecl {
                    name: "yearsTo".into(),
                    context: "Person".into(),
                    params: vec![ParamDecl { name: "n".into(), ty: AttrType::Integer }],
                    return_type: AttrType::Integer,
                    body: "n - self.age".into(),
                },
                UserOpDecl {
                    name: "seniority".into(),
                    context: "Person".into(),
                    params: vec![],
                    return_type: AttrType::Integer,
                    body: "self.yearsTo(100)".into(),
                },
                UserOpDecl {
                    name: "clubCount".into(),
                    context: "Person".into(),
                    params: vec![],
                    return_type: AttrType::Integer,
                    body: "self.clubs->size()".into(),
                },
            ],
        }
    }

    /// Normalize and label the invariants in `src`; returns the data model,
    /// the labeled constraint, and the normalized operation table.
    pub fn prepared(src: &str) -> (DataModel, Expr, OpTable) {
        let m = model();
        let Compiled { invariants, ops } = compile(&m, src).unwrap();
        let ne = parse_constraint("Person.allInstances()->size() >= 1", &m, &ops).unwrap();
        let n = normalize(&m, &invariants, &ops, &ne).unwrap();
        let mut e = n.constraint;
        label_ast(&mut e, &n.ops);
        (m, e, n.ops)
    }

    fn person(id: &str, age: i64, name: &str, vip: bool, mood: &str, weather: &str) -> ObjectInst {
        ObjectInst {
            id: ObjectId::new(id),
            class: "Person".into(),
            attrs: [
                ("age".to_string(), Value::Integer(age)),
                ("name".to_string(), Value::Str(name.into())),
                ("vip".to_string(), Value::Boolean(vip)),
                (
                    "mood".to_string(),
                    Value::Enum { enumeration: "Mood".into(), literal: mood.into() },
                ),
                (
                    "weather".to_string(),
                    Value::Enum { enumeration: "Weather".into(), literal: weather.into() },
                ),
            ]
            .into_iter()
            .collect(),
        }
    }

    /// Two persons (ages 30 and 10), one club; only Person1 is a member.
    pub fn instance() -> InstanceModel {
        let mut inst = InstanceModel::new();
        inst.objects = vec![
            person("Person1", 30, "ann", true, "Calm", "Storm"),
            person("Person2", 10, "bo", false, "Wild", "Calm"),
            ObjectInst {
                id: ObjectId::new("Club1"),
                class: "Club".into(),
                attrs: [("dues".to_string(), Value::Real(12.5))].into_iter().collect(),
            },
        ];
        inst.links = vec![Link {
            assoc: "membership".into(),
            src: ObjectId::new("Club1"),
            dst: ObjectId::new("Person1"),
            position: None,
        }];
        inst
    }

    /// The bundled stdin-driven solver launcher.
    pub fn shim() -> PathBuf {
        PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../tools/z3-wasm/z3")
    }

    /// First node satisfying `pred`, depth-first.
    pub fn find<'a>(e: &'a Expr, pred: &dyn Fn(&Expr) -> bool) -> Option<&'a Expr> {
        if pred(e) {
            return Some(e);
        }
        e.children().into_iter().find_map(|c| find(c, pred))
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;
    use std::time::Duration;

    fn derive(src: &str) -> (DataModel, InstanceModel, Derived) {
        let (m, root, ops) = prepared(src);
        let inst = instance();
        let d = derive_formula(&m, &ops, &root, &inst).unwrap();
        (m, inst, d)
    }

    fn job(d: &Derived) -> &SmtJob {
        match d {
            Derived::Job(j) => j,
            Derived::Constant(b) => panic!("expected a job, got constant {b}"),
        }
    }

    #[test]
    fn fully_search_owned_constraint_collapses_to_a_constant() {
        let (_, _, d) = derive("context Person inv a: self.clubs->size() >= 0");
        assert!(matches!(d, Derived::Constant(true)));
        let (_, _, d) = derive("context Person inv a: self.clubs->size() >= 5");
        assert!(matches!(d, Derived::Constant(false)));
    }

    #[test]
    fn attribute_constraint_builds_script_and_bindings() {
        let (_, _, d) = derive("context Person inv a: self.age >= 18");
        let j = job(&d);
        assert_eq!(j.bindings.len(), 2);
        assert_eq!(j.bindings[0].var, "X1");
        assert_eq!(j.bindings[0].object.to_string(), "Person1");
        assert_eq!(j.bindings[0].attr, "age");
        assert_eq!(j.bindings[0].sort, SmtSort::Int);
        assert_eq!(j.bindings[1].var, "X2");
        assert_eq!(j.bindings[1].object.to_string(), "Person2");

        let lines: Vec<&str> = j.script.lines().collect();
        assert_eq!(lines[0], "(set-option :produce-models true)");
        assert!(j.script.contains("(declare-const X1 Int)"));
        assert!(j.script.contains("(declare-const X2 Int)"));
        assert!(j.script.contains("(assert (and (>= X1 18) (>= X2 18)))"), "{}", j.script);
        assert!(j.script.contains("(check-sat)"));
        assert!(j.script.ends_with("(get-value (X1 X2))\n"));
    }

    #[test]
    fn derivation_is_deterministic() {
        let (_, _, a) = derive("context Person inv a: self.age >= 18 and self.vip = true");
        let (_, _, b) = derive("context Person inv a: self.age >= 18 and self.vip = true");
        assert_eq!(job(&a).script, job(&b).script);
    }

    #[test]
    fn enum_attribute_declares_a_datatype() {
        let (_, _, d) = derive("context Person inv a: self.mood = Mood::Calm");
        let j = job(&d);
        assert!(j.script.contains("(declare-datatypes ()((Mood (Calm)(Wild))))"), "{}", j.script);
        assert!(j.script.contains("(declare-const X1 Mood)"));
        assert!(j.script.contains("(= X1 Calm)"));
        assert_eq!(j.enum_decls, vec!["Mood".to_string()]);
        assert_eq!(j.bindings[0].sort, SmtSort::Enum("Mood".into()));
    }

    #[test]
    fn colliding_literals_prefix_all_referenced_enums() {
        let (_, _, d) = derive(
            "context Person inv a: self.mood = Mood::Calm and self.weather <> Weather::Storm",
        );
        let j = job(&d);
        assert!(
            j.script.contains("(declare-datatypes ()((Mood (Mood_Calm)(Mood_Wild))))"),
            "{}",
            j.script
        );
        assert!(j.script.contains("(declare-datatypes ()((Weather (Weather_Calm)(Weather_Storm))))"));
        assert!(j.script.contains("(= X1 Mood_Calm)"));
        assert!(j.script.contains("(not (= X2 Weather_Storm))"));
    }

    #[test]
    fn operation_reads_become_parameters_and_forward_through_calls() {
        let (_, _, d) = derive("context Person inv a: self.seniority() >= 0");
        let j = job(&d);
        let years = j
            .script
            .find("(define-fun yearsTo ((n Int)(P1 Int)) Int (- n P1))")
            .expect("yearsTo definition");
        let seniority = j
            .script
            .find("(define-fun seniority ((P1 Int)) Int (yearsTo 100 P1))")
            .expect("seniority definition");
        assert!(years < seniority, "callee defined before caller");
        assert!(j.script.contains("(>= (seniority X1) 0)"));
        assert!(j.script.contains("(>= (seniority X2) 0)"));
        assert_eq!(j.op_decls, vec!["yearsTo".to_string(), "seniority".to_string()]);
    }

    #[test]
    fn operation_with_structure_is_cloned_per_caller_and_frozen() {
        let (_, _, d) = derive("context Person inv a: self.clubCount() + self.age >= 1");
        let j = job(&d);
        // Person1 is in one club, Person2 in none; the clones carry those
        // frozen counts as their bodies.
        assert!(j.script.contains("(define-fun clubCount_for_Person1 () Int 1)"), "{}", j.script);
        assert!(j.script.contains("(define-fun clubCount_for_Person2 () Int 0)"));
        assert!(j.script.contains("(>= (+ clubCount_for_Person1 X1) 1)"));
        assert!(j.script.contains("(>= (+ clubCount_for_Person2 X2) 1)"));
    }

    #[test]
    fn invalid_evaluation_aborts_the_derivation() {
        let (m, root, ops) =
            prepared("context Person inv a: self.clubs->asSequence()->first().dues > 0.0");
        let inst = instance();
        // Person2 has no clubs: first() is invalid, so the object literal
        // that should replace it does not exist.
        let err = derive_formula(&m, &ops, &root, &inst).unwrap_err();
        assert!(matches!(err, DeriveError::Undefined(_)), "{err}");
    }

    #[test]
    fn futile_when_the_structural_part_blocks() {
        let (m, root, ops) =
            prepared("context Person inv a: self.clubs->size() >= 5 and self.age >= 18");
        let inst = instance();
        let ev = Evaluator::new(&m, &ops, &inst);
        assert!(futile_check(&root, &ev, &ops), "no one can reach five clubs by attribute repair");

        let (m, root, ops) = prepared("context Person inv a: self.age >= 18");
        let inst = instance();
        let ev = Evaluator::new(&m, &ops, &inst);
        assert!(!futile_check(&root, &ev, &ops), "a pure attribute constraint is always worth a try");
    }

    #[test]
    fn futile_check_assumes_nonmonotone_attribute_contexts_whole() {
        // One club with positive dues exists, so the selection currently has
        // size 1 — but the check may not rely on current attribute values:
        // the solver could change dues. The whole comparison must be assumed
        // true, hence "not futile".
        let (m, root, ops) = prepared(
            "context Person inv a: Club.allInstances()->select(c | c.dues > 0.0)->size() = 0",
        );
        let inst = instance();
        let ev = Evaluator::new(&m, &ops, &inst);
        assert!(!futile_check(&root, &ev, &ops));
    }

    #[test]
    fn solver_repairs_attribute_values() {
        let (m, mut inst, d) =
            derive("context Person inv a: self.age >= 18 and self.age <= 99");
        let j = job(&d);
        let cmd = resolve_solver(Some(&shim())).unwrap();
        let out = solve_and_lift(j, &mut inst, &cmd, Duration::from_secs(30)).unwrap();
        assert_eq!(out, LiftOutcome::Updated);
        let (_, root, ops) = prepared("context Person inv a: self.age >= 18 and self.age <= 99");
        let ev = Evaluator::new(&m, &ops, &inst);
        assert_eq!(ev.eval_closed(&root), Value::Boolean(true));
    }

    #[test]
    fn unsat_leaves_the_instance_untouched() {
        let (_, mut inst, d) =
            derive("context Person inv a: self.age >= 18 and self.age <= 10");
        let before = inst.clone();
        let cmd = resolve_solver(Some(&shim())).unwrap();
        let out = solve_and_lift(job(&d), &mut inst, &cmd, Duration::from_secs(30)).unwrap();
        assert_eq!(out, LiftOutcome::Unsat);
        assert_eq!(inst, before);
    }

    #[test]
    fn enum_and_string_and_real_models_lift_correctly() {
        let (m, mut inst, d) = derive(
            "context Person inv a: self.mood = Mood::Wild and self.name.size() = 3 \
             and self.age >= 21",
        );
        let cmd = resolve_solver(Some(&shim())).unwrap();
        let out = solve_and_lift(job(&d), &mut inst, &cmd, Duration::from_secs(30)).unwrap();
        assert_eq!(out, LiftOutcome::Updated);
        let (_, root, ops) = prepared(
            "context Person inv a: self.mood = Mood::Wild and self.name.size() = 3 \
             and self.age >= 21",
        );
        let ev = Evaluator::new(&m, &ops, &inst);
        assert_eq!(ev.eval_closed(&root), Value::Boolean(true));
    }
}
