//! Substitution: after expansion, every subformula owned exclusively by
//! search is replaced by the literal of its concrete evaluation on the
//! current instance model. What survives is exactly the part of the
//! constraint the SMT solver may act on — attribute atoms, arithmetic,
//! connectives — plus constants.
//!
//! Substitution happens top-down: a search-labeled node is replaced
//! wholesale (its entire subtree collapses into one literal), everything
//! else recurses. An evaluation that comes back *invalid* aborts the whole
//! SMT step for this iteration: there is no literal to put in its place,
//! and the next search iteration will reshape the instance anyway.

use crate::eval::Evaluator;
use crate::model::InstanceModel;
use crate::ocl::ast::{Expr, Label};

use super::expand::value_to_expr;
use super::DeriveError;

/// Replace every `Search`-labeled node in `e` by its evaluated literal.
/// Expects `e` to be freshly labeled (expansion invalidates earlier labels).
pub fn substitute(
    e: &mut Expr,
    ev: &Evaluator<'_>,
    inst: &InstanceModel,
) -> Result<(), DeriveError> {
    if e.label == Some(Label::Search) {
        let v = ev.eval_closed(e);
        if v.is_invalid() {
            return Err(DeriveError::Undefined("search-owned subformula"));
        }
        *e = value_to_expr(&v, inst)?;
        return Ok(());
    }
    for c in e.children_mut() {
        substitute(c, ev, inst)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::label::label_ast;
    use crate::ocl::ast::ExprKind;
    use crate::smt::expand::expand;
    use crate::smt::fixtures::{find, instance, prepared};

    #[test]
    fn search_owned_atoms_freeze_to_their_current_truth() {
        let (m, mut e, ops) =
            prepared("context Person inv a: self.clubs->size() >= 1 and self.age >= 18");
        let inst = instance();
        let ev = Evaluator::new(&m, &ops, &inst);
        expand(&mut e, &ev, &inst, &ops).unwrap();
        label_ast(&mut e, &ops);
        substitute(&mut e, &ev, &inst).unwrap();
        // Person1 is in a club (true), Person2 is not (false); the ages stay
        // symbolic for the solver.
        assert!(find(&e, &|n| matches!(n.kind, ExprKind::BoolLit(true))).is_some());
        assert!(find(&e, &|n| matches!(n.kind, ExprKind::BoolLit(false))).is_some());
        let mut ages = 0;
        e.walk(&mut |n| {
            if matches!(&n.kind, ExprKind::Attr { attr, .. } if attr == "age") {
                ages += 1;
            }
        });
        assert_eq!(ages, 2);
    }

    #[test]
    fn a_fully_search_owned_tree_becomes_one_literal() {
        let (m, mut e, ops) = prepared("context Person inv a: self.clubs->size() >= 0");
        let inst = instance();
        let ev = Evaluator::new(&m, &ops, &inst);
        expand(&mut e, &ev, &inst, &ops).unwrap();
        label_ast(&mut e, &ops);
        substitute(&mut e, &ev, &inst).unwrap();
        assert!(matches!(e.kind, ExprKind::BoolLit(true)), "{:?}", e.kind);
    }
}
