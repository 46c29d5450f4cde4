//! Delegation labeling: a depth-first pass marks every non-constant node of
//! the normalized constraint with the engine allowed to act on it —
//! [`Label::Search`] (metaheuristic search owns it), [`Label::Smt`] (the SMT
//! back end owns it), or [`Label::Both`].
//!
//! The per-node rule matrix. Three categories decide a label: by the node
//! kind alone, by the node's ancestors, or by its children.
//!
//! | node | label |
//! |------|-------|
//! | literal, enum literal, static (constant) attribute, synthesized object/collection literal | none — constants stay unlabeled |
//! | variable | search |
//! | `allInstances` | search |
//! | association navigation | search |
//! | collection operation (`size`, `includes`, ..., `sum`, `at`, ...) | search |
//! | iterator (`forAll`, `exists`, `select`, `reject`, `collect`, `one`, `isUnique`) | search |
//! | type test or cast (`oclIsTypeOf`, `oclIsKindOf`, `oclAsType`) | search |
//! | `oclIsUndefined`, `oclIsInvalid` | search |
//! | comparison with an object-, collection-, or null-typed operand | search |
//! | user-operation call | SMT if the callee is non-recursive with a primitive return type, else search |
//! | attribute access (attributes are always primitive- or enum-typed) | SMT — or *both* when an ancestor is `exists`, `select`, `reject`, `one`, or `isUnique` |
//! | `and`, `or`, `not`, primitive comparison, arithmetic, numeric/string method, `if` | the common label of the labeled children; *both* when they disagree; SMT when every child is a constant |
//!
//! Rationale for the ancestor set: under those five iterators the attribute
//! values chosen by the SMT solver can change *which element* witnesses the
//! iterator, so the search must be able to evaluate the subformula as well.
//! Constant children are ignored when computing a common child label;
//! a node whose children are all constants is primitive data and therefore
//! defaults to the SMT side.
//!
//! User-defined operations are labeled per call site: an operation reached
//! from an SMT-labeled call gets its body labeled by the same procedure,
//! while one reached from a search-labeled call gets every non-constant
//! body node labeled search. An operation reached both ways exists in two
//! labeled copies, one per table.

use std::collections::BTreeSet;

use crate::ocl::ast::{Expr, ExprKind, IterKind, Label, MethodOp, Type};
use crate::ocl::types::OpTable;

/// Label every non-constant node of `e`. Expects the normalized constraint
/// (labels computed on pre-normalization shapes would be meaningless: the
/// search and SMT back ends only ever see the normalized form).
pub fn label_ast(e: &mut Expr, ops: &OpTable) {
    label_node(e, ops, false);
}

/// Operation bodies labeled per call-site kind. An operation appears in
/// `smt` iff some (transitive) call site is SMT-labeled, and in `search`
/// iff some call site is search-labeled; an operation called both ways
/// appears in both, with independently labeled bodies.
#[derive(Debug, Clone, Default)]
pub struct LabeledOps {
    pub smt: OpTable,
    pub search: OpTable,
}

/// Propagate call-site labels from the labeled constraint into the
/// operation table. `ast` must already be labeled.
pub fn label_user_ops(ast: &Expr, ops: &OpTable) -> LabeledOps {
    // Which ops have at least one Smt / at least one Search call site,
    // including call sites inside other ops' bodies. Fixpoint over two
    // monotone sets of op names.
    let mut smt_site: BTreeSet<String> = BTreeSet::new();
    let mut search_site: BTreeSet<String> = BTreeSet::new();

    collect_sites(ast, &mut smt_site, &mut search_site);

    // A body labeled for the SMT side may itself contain labeled call
    // sites; a body labeled all-search makes every inner call a search
    // site. Iterate until the sets stop changing.
    loop {
        let mut changed = false;
        for (name, def) in &ops.ops {
            if smt_site.contains(name) {
                let mut body = def.body.clone();
                label_node(&mut body, ops, false);
                changed |= collect_sites(&body, &mut smt_site, &mut search_site);
            }
            if search_site.contains(name) {
                // All-search body: every inner call is a search site.
                def.body.walk(&mut |n| {
                    if let ExprKind::UserCall { op, .. } = &n.kind {
                        changed |= search_site.insert(op.clone());
                    }
                });
            }
        }
        if !changed {
            break;
        }
    }

    let mut out = LabeledOps::default();
    for (name, def) in &ops.ops {
        if smt_site.contains(name) {
            let mut def = def.clone();
            label_node(&mut def.body, ops, false);
            out.smt.ops.insert(name.clone(), def);
        }
        if search_site.contains(name) {
            let mut def = def.clone();
            all_search(&mut def.body);
            out.search.ops.insert(name.clone(), def);
        }
    }
    out
}

/// Counts of labels over one AST, for reports and the committed golden.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LabelCounts {
    pub search: usize,
    pub smt: usize,
    pub both: usize,
    pub constant: usize,
}

pub fn count_labels(e: &Expr) -> LabelCounts {
    let mut c = LabelCounts::default();
    e.walk(&mut |n| match n.label {
        Some(Label::Search) => c.search += 1,
        Some(Label::Smt) => c.smt += 1,
        Some(Label::Both) => c.both += 1,
        None => c.constant += 1,
    });
    c
}

/// Render the labeled AST as indented text, one node per line:
/// `<indent><summary>  [<label>]`.
pub fn dump_labels(e: &Expr) -> String {
    let mut out = String::new();
    dump_node(e, 0, &mut out);
    out
}

fn dump_node(e: &Expr, depth: usize, out: &mut String) {
    use std::fmt::Write;
    let label = match e.label {
        Some(Label::Search) => "search",
        Some(Label::Smt) => "smt",
        Some(Label::Both) => "both",
        None => "constant",
    };
    writeln!(out, "{:indent$}{}  [{label}]", "", summarize(e), indent = depth * 2).unwrap();
    for c in e.children() {
        dump_node(c, depth + 1, out);
    }
}

/// A one-line head for a node, without recursing into children.
fn summarize(e: &Expr) -> String {
    match &e.kind {
        ExprKind::IntLit(v) => format!("{v}"),
        ExprKind::RealLit(v) => format!("{v:?}"),
        ExprKind::StrLit(s) => format!("'{s}'"),
        ExprKind::BoolLit(v) => format!("{v}"),
        ExprKind::NullLit => "null".into(),
        ExprKind::EnumLit { enumeration, literal } => format!("{enumeration}::{literal}"),
        ExprKind::ObjectLit(id) => format!("@{id}"),
        ExprKind::CollectionLit { kind, .. } => format!("{kind:?}{{...}}"),
        ExprKind::Var(v) => format!("var {v}"),
        ExprKind::StaticAttr { class, attr } => format!("{class}::{attr}"),
        ExprKind::Attr { attr, .. } => format!(".{attr}"),
        ExprKind::Nav { role, .. } => format!(".{role}"),
        ExprKind::AllInstances { class } => format!("{class}.allInstances()"),
        ExprKind::Bool { op, .. } => format!("{op:?}").to_lowercase(),
        ExprKind::Not(_) => "not".into(),
        ExprKind::Rel { op, .. } => format!("{op:?}").to_lowercase(),
        ExprKind::Arith { op, .. } => format!("{op:?}").to_lowercase(),
        ExprKind::Neg(_) => "neg".into(),
        ExprKind::MethodCall { op, .. } => format!(".{}()", op.name()),
        ExprKind::TypeCheckOp { op, ty_name, .. } => format!(".{}({ty_name})", op.name()),
        ExprKind::UserCall { op, .. } => format!(".{op}()"),
        ExprKind::Iterate { kind, var, .. } => format!("->{}({var})", kind.name()),
        ExprKind::CollectionOp { op, .. } => format!("->{}()", op.name()),
        ExprKind::If { .. } => "if".into(),
        ExprKind::Let { var, .. } => format!("let {var}"),
        ExprKind::Prop { .. } | ExprKind::Qualified { .. } => "unresolved".into(),
    }
}

// ---------------------------------------------------------------------------
// The labeling pass
// ---------------------------------------------------------------------------

/// The iterator kinds under which attribute access is labeled `both`.
fn is_flex(kind: IterKind) -> bool {
    matches!(
        kind,
        IterKind::Exists | IterKind::Select | IterKind::Reject | IterKind::One | IterKind::IsUnique
    )
}

fn is_primitive(ty: &Type) -> bool {
    matches!(ty, Type::Integer | Type::Real | Type::Boolean | Type::String | Type::Enum(_))
}

/// True when a comparison operand's static type forces the comparison onto
/// the search side: objects and collections do not exist in the SMT
/// encoding, and a null test is a structural definedness test.
fn structural_operand(ty: &Type) -> bool {
    matches!(ty, Type::Class(_) | Type::Collection(..) | Type::Void)
}

fn label_node(e: &mut Expr, ops: &OpTable, under_flex: bool) -> Option<Label> {
    let child_flag = under_flex
        || matches!(&e.kind, ExprKind::Iterate { kind, .. } if is_flex(*kind));
    let mut child_labels: Vec<Option<Label>> = Vec::new();
    for c in e.children_mut() {
        child_labels.push(label_node(c, ops, child_flag));
    }

    let label = match &e.kind {
        // Constants carry no label.
        ExprKind::IntLit(_)
        | ExprKind::RealLit(_)
        | ExprKind::StrLit(_)
        | ExprKind::BoolLit(_)
        | ExprKind::NullLit
        | ExprKind::EnumLit { .. }
        | ExprKind::ObjectLit(_)
        | ExprKind::CollectionLit { .. }
        | ExprKind::StaticAttr { .. } => None,

        // Category 1: decided by the node kind alone.
        ExprKind::Var(_)
        | ExprKind::Nav { .. }
        | ExprKind::AllInstances { .. }
        | ExprKind::Iterate { .. }
        | ExprKind::CollectionOp { .. }
        | ExprKind::TypeCheckOp { .. } => Some(Label::Search),
        ExprKind::MethodCall { op: MethodOp::OclIsUndefined | MethodOp::OclIsInvalid, .. } => {
            Some(Label::Search)
        }
        ExprKind::UserCall { op, .. } => {
            let def = ops.get(op).expect("type checking resolved the call");
            if !def.is_recursive && is_primitive(&def.return_type) {
                Some(Label::Smt)
            } else {
                Some(Label::Search)
            }
        }

        // Category 1: comparisons over structural operands.
        ExprKind::Rel { lhs, rhs, .. }
            if structural_operand(&lhs.ty) || structural_operand(&rhs.ty) =>
        {
            Some(Label::Search)
        }

        // Category 2: attribute access, sensitive to ancestors.
        ExprKind::Attr { .. } => {
            Some(if under_flex { Label::Both } else { Label::Smt })
        }

        // Category 3: connectives, comparisons, arithmetic, conditionals —
        // decided by the children.
        ExprKind::Bool { .. }
        | ExprKind::Not(_)
        | ExprKind::Rel { .. }
        | ExprKind::Arith { .. }
        | ExprKind::Neg(_)
        | ExprKind::MethodCall { .. }
        | ExprKind::If { .. }
        | ExprKind::Let { .. } => Some(combine(&child_labels)),

        ExprKind::Prop { .. } | ExprKind::Qualified { .. } => {
            unreachable!("unresolved sugar survives type checking")
        }
    };
    e.label = label;
    label
}

/// The common label of the labeled children; `Both` on disagreement; `Smt`
/// when nothing is labeled (all children constant — primitive data).
fn combine(children: &[Option<Label>]) -> Label {
    let mut acc: Option<Label> = None;
    for l in children.iter().flatten() {
        acc = Some(match acc {
            None => *l,
            Some(prev) if prev == *l => prev,
            Some(_) => Label::Both,
        });
    }
    acc.unwrap_or(Label::Smt)
}

/// Label every non-constant node `Search`.
fn all_search(e: &mut Expr) {
    e.label = if e.is_constant() { None } else { Some(Label::Search) };
    for c in e.children_mut() {
        all_search(c);
    }
}

/// Record the call-site labels found in `e`; returns true if a set grew.
fn collect_sites(
    e: &Expr,
    smt_site: &mut BTreeSet<String>,
    search_site: &mut BTreeSet<String>,
) -> bool {
    let mut changed = false;
    e.walk(&mut |n| {
        if let ExprKind::UserCall { op, .. } = &n.kind {
            let set = match n.label {
                Some(Label::Smt) | Some(Label::Both) => &mut *smt_site,
                _ => &mut *search_site,
            };
            changed |= set.insert(op.clone());
        }
    });
    changed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        AssocDecl, AssocEnd, AttrDecl, AttrType, ClassDecl, DataModel, EnumDecl,
    };
    use crate::nnf::normalize;
    use crate::ocl::parser::parse_constraint;
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
                        attr("mood", AttrType::Enum("Mood".into())),
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
            enumerations: vec![EnumDecl {
                name: "Mood".into(),
                literals: vec!["Calm".into(), "Wild".into()],
            }],
            operations: vec![],
        }
    }

    /// Normalize `src` (invariants + ops) and label; return the labeled
    /// constraint and the original op table.
    fn labeled(src: &str) -> (Expr, OpTable) {
        let m = model();
        let Compiled { invariants, ops } = compile(&m, src).unwrap();
        let ne = parse_constraint("Person.allInstances()->size() >= 1", &m, &ops).unwrap();
        let n = normalize(&m, &invariants, &ops, &ne).unwrap();
        let mut e = n.constraint;
        label_ast(&mut e, &n.ops);
        (e, n.ops)
    }

    /// The first node satisfying `pred`, in depth-first order.
    fn find<'a>(e: &'a Expr, pred: &dyn Fn(&Expr) -> bool) -> Option<&'a Expr> {
        if pred(e) {
            return Some(e);
        }
        e.children().into_iter().find_map(|c| find(c, pred))
    }

    fn is_attr(e: &Expr, name: &str) -> bool {
        matches!(&e.kind, ExprKind::Attr { attr, .. } if attr == name)
    }

    #[test]
    fn every_non_constant_node_is_labeled() {
        let (e, _) = labeled(
            "context Person inv a: self.age >= 0 and self.clubs->forAll(c | c.dues > 0.0)\n\
             context Person inv b: self.mood = Mood::Calm implies not self.vip",
        );
        e.walk(&mut |n| {
            if n.label.is_none() {
                assert!(n.is_constant(), "unlabeled non-constant node: {:?}", n.kind);
            } else {
                assert!(!n.is_constant(), "labeled constant: {:?}", n.kind);
            }
        });
    }

    #[test]
    fn structure_is_search_and_attributes_are_smt() {
        let (e, _) = labeled("context Person inv a: self.clubs->size() >= 1 and self.age >= 18");
        let size = find(&e, &|n| matches!(n.kind, ExprKind::CollectionOp { .. })).unwrap();
        assert_eq!(size.label, Some(Label::Search));
        // The comparison over size() combines to Search...
        let rel = find(&e, &|n| {
            matches!(&n.kind, ExprKind::Rel { lhs, .. }
                if matches!(lhs.kind, ExprKind::CollectionOp { .. }))
        })
        .unwrap();
        assert_eq!(rel.label, Some(Label::Search));
        // ...the comparison over the attribute combines to Smt...
        let age_rel = find(&e, &|n| {
            matches!(&n.kind, ExprKind::Rel { lhs, .. } if is_attr(lhs, "age"))
        })
        .unwrap();
        assert_eq!(age_rel.label, Some(Label::Smt));
        // ...and their conjunction mixes to Both.
        let and = find(&e, &|n| {
            matches!(&n.kind, ExprKind::Bool { lhs, .. }
                if matches!(&lhs.kind, ExprKind::Rel { lhs: l2, .. }
                    if matches!(l2.kind, ExprKind::CollectionOp { .. })))
        })
        .unwrap();
        assert_eq!(and.label, Some(Label::Both));
    }

    #[test]
    fn attribute_under_flex_iterators_is_both() {
        let (e, _) = labeled(
            "context Club inv a: self.members->exists(p | p.vip)\n\
             context Club inv b: self.members->select(p | p.age > 30)->size() <= 5\n\
             context Club inv c: self.members->forAll(p | p.age >= 0)",
        );
        // Under exists and select: Both. Under forAll: Smt.
        let vip = find(&e, &|n| is_attr(n, "vip")).unwrap();
        assert_eq!(vip.label, Some(Label::Both));
        let age_in_select = find(&e, &|n| is_attr(n, "age")).unwrap();
        assert_eq!(age_in_select.label, Some(Label::Both));
        // The forAll body's age is the *last* age attribute in the tree.
        let mut ages = Vec::new();
        e.walk(&mut |n| {
            if is_attr(n, "age") {
                ages.push(n.label);
            }
        });
        assert_eq!(*ages.last().unwrap(), Some(Label::Smt));
    }

    #[test]
    fn enum_attribute_is_smt_and_enum_literal_is_constant() {
        let (e, _) = labeled("context Person inv a: self.mood = Mood::Calm");
        let mood = find(&e, &|n| is_attr(n, "mood")).unwrap();
        assert_eq!(mood.label, Some(Label::Smt));
        let lit = find(&e, &|n| matches!(n.kind, ExprKind::EnumLit { .. })).unwrap();
        assert_eq!(lit.label, None);
        let rel = find(&e, &|n| matches!(n.kind, ExprKind::Rel { .. })).unwrap();
        assert_eq!(rel.label, Some(Label::Smt));
    }

    #[test]
    fn object_and_null_comparisons_are_search() {
        let (e, _) = labeled(
            "context Person inv a: self.clubs = self.clubs\n\
             context Person inv b: \
               Person.allInstances()->forAll(p | p.clubs->asSequence()->first() <> null)",
        );
        let mut rels = Vec::new();
        e.walk(&mut |n| {
            if let ExprKind::Rel { lhs, .. } = &n.kind {
                if structural_operand(&lhs.ty) {
                    rels.push(n.label);
                }
            }
        });
        assert!(!rels.is_empty());
        assert!(rels.iter().all(|l| *l == Some(Label::Search)), "{rels:?}");
    }

    #[test]
    fn user_calls_smt_only_for_nonrecursive_ops() {
        // The front end only admits primitive-typed operation returns, so
        // the primitive-return half of the rule is always met; recursion
        // is the discriminating condition.
        let (e, _) = labeled(
            "context Person inv a: self.years() >= 18\n\
             context Person inv b: self.fact(3) = 6\n\
             context Person::years(): Integer body: 2018 - self.age\n\
             context Person::fact(n: Integer): Integer body: \
               if n <= 1 then 1 else n * self.fact(n - 1) endif",
        );
        let call = |name: &str| {
            find(&e, &|n| matches!(&n.kind, ExprKind::UserCall { op, .. } if op == name))
                .unwrap()
                .label
        };
        assert_eq!(call("years"), Some(Label::Smt));
        assert_eq!(call("fact"), Some(Label::Search), "recursive");
    }

    #[test]
    fn constant_only_expressions_default_to_smt() {
        let (e, _) = labeled("context Person inv a: 1 + 2 > 0");
        let arith = find(&e, &|n| matches!(n.kind, ExprKind::Arith { .. })).unwrap();
        assert_eq!(arith.label, Some(Label::Smt));
    }

    #[test]
    fn op_called_from_smt_site_gets_labeled_body() {
        let (e, ops) = labeled(
            "context Person inv a: self.years() >= 18\n\
             context Person::years(): Integer body: 2018 - self.age",
        );
        let l = label_user_ops(&e, &ops);
        let def = l.smt.get("years").expect("smt copy exists");
        let age = find(&def.body, &|n| is_attr(n, "age")).unwrap();
        assert_eq!(age.label, Some(Label::Smt));
        assert!(l.search.get("years").is_none(), "no search call sites");
    }

    #[test]
    fn op_called_from_search_site_is_all_search() {
        let (e, ops) = labeled(
            "context Person inv a: self.fact(3) = 6\n\
             context Person::fact(n: Integer): Integer body: \
               if n <= 1 then 1 else n * self.fact(n - 1) endif",
        );
        let l = label_user_ops(&e, &ops);
        assert!(l.smt.get("fact").is_none());
        let def = l.search.get("fact").expect("search copy exists");
        def.body.walk(&mut |n| {
            if !n.is_constant() {
                assert_eq!(n.label, Some(Label::Search), "{:?}", n.kind);
            }
        });
    }

    #[test]
    fn op_called_both_ways_gets_two_copies() {
        // `years` is called directly (Smt site) and from inside the
        // recursive op `weird` (whose body is all-search, making its inner
        // call a search site).
        let (e, ops) = labeled(
            "context Person inv a: self.years() >= 18\n\
             context Person inv b: self.weird(2) >= 0\n\
             context Person::years(): Integer body: 2018 - self.age\n\
             context Person::weird(n: Integer): Integer body: \
               if n <= 0 then self.years() else self.weird(n - 1) endif",
        );
        let l = label_user_ops(&e, &ops);
        assert!(l.smt.get("years").is_some(), "smt copy");
        assert!(l.search.get("years").is_some(), "search copy");
        // The two copies are labeled differently.
        let smt_age = find(&l.smt.get("years").unwrap().body, &|n| is_attr(n, "age")).unwrap();
        let search_age =
            find(&l.search.get("years").unwrap().body, &|n| is_attr(n, "age")).unwrap();
        assert_eq!(smt_age.label, Some(Label::Smt));
        assert_eq!(search_age.label, Some(Label::Search));
    }

    #[test]
    fn labeling_is_deterministic() {
        let src = "context Person inv a: self.age >= 0 and self.clubs->exists(c | c.dues > 0.0)";
        let (a, _) = labeled(src);
        let (b, _) = labeled(src);
        let mut la = Vec::new();
        let mut lb = Vec::new();
        a.walk(&mut |n| la.push(n.label));
        b.walk(&mut |n| lb.push(n.label));
        assert_eq!(la, lb);
    }

    #[test]
    fn counts_and_dump_agree() {
        let (e, _) = labeled("context Person inv a: self.age >= 18");
        let c = count_labels(&e);
        let dump = dump_labels(&e);
        assert_eq!(dump.matches("[search]").count(), c.search);
        assert_eq!(dump.matches("[smt]").count(), c.smt);
        assert_eq!(dump.matches("[both]").count(), c.both);
        assert_eq!(dump.matches("[constant]").count(), c.constant);
        assert_eq!(dump.lines().count(), c.search + c.smt + c.both + c.constant);
    }
}
