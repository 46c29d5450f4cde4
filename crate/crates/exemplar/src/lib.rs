//! Exemplar generates valid *instance models* — object graphs with attribute
//! values and links — for a user-supplied class model under first-order
//! invariant constraints.
//!
//! The solver is a hybrid: structural features (how many objects exist, which
//! objects are linked) are handled by local search over the object graph,
//! while arithmetic over primitive attributes is delegated to an external SMT
//! solver speaking SMT-LIB v2. The glue between the two worlds is a labeling
//! pass that decides, per node of the constraint AST, which engine is allowed
//! to act on it.
//!
//! The crate is organized along the processing pipeline:
//!
//! 1. [`model`] — class models, instance models, runtime values.
//! 2. [`ocl`] — lexer, parser, and type checker for the constraint language.
//! 3. [`nnf`] — rewriting all invariants into one negation-normal-form
//!    constraint with explicit quantification.
//! 4. [`label`] — delegation labeling (`search` / `smt` / `both`).
//! 5. [`eval`] + [`fitness`] — the evaluator (ground truth for validity) and
//!    the branch-distance fitness function guiding search.
//! 6. [`search`] — alternating-variable local search with iterated pattern
//!    search over the instance model.
//! 7. [`smt`] — quantifier expansion, substitution of search-owned
//!    subformulas, SMT-LIB emission, solver process driver, and lifting
//!    satisfying assignments back into the instance model.
//! 8. [`solve`] — the orchestrating loop, plus a pure-search baseline mode.
//!
//! The `exemplar` binary in this crate is a thin command-line front end; the
//! `examples/` directory shows each capability as a small runnable program.

pub mod bench;
pub mod cli;
pub mod eval;
pub mod fitness;
pub mod label;
pub mod model;
pub mod nnf;
pub mod ocl;
pub mod search;
pub mod smt;
pub mod solve;
