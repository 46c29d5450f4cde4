//! The orchestrating loop: one normalization and labeling pass, then
//! alternating rounds of structure search and SMT-driven attribute repair
//! until the constraint holds or the budget runs out.
//!
//! Each round is: (1) one search iteration over the allowed features,
//! (2) a validity check with the evaluator (the ground truth), (3) the
//! futility gate — if the structural part already dooms the formula there
//! is no point paying for a solver call — and (4) the SMT step: derive a
//! quantifier-free job for the current instance, run the external solver,
//! lift a `sat` model back into the attribute slots, and re-check. A round
//! in which neither engine improved anything triggers the search restart
//! heuristic; an `unsat` answer deliberately counts as no improvement.
//!
//! The baseline mode runs the same loop with the SMT step disabled and the
//! feature fence lifted — pure search over everything, which is both a
//! comparison subject and a fallback when no solver is installed.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::eval::Evaluator;
use crate::label::{label_ast, label_user_ops};
use crate::model::{DataModel, InstanceModel, Value};
use crate::ocl::ast::Expr;
use crate::ocl::types::OpTable;
use crate::ocl::Invariant;
use crate::search::{AllowedFeatures, SearchConfig, Searcher};
use crate::smt::{
    derive_formula, futile_check, lift_model, resolve_solver, run_job, Derived, LiftOutcome,
    SolverCmd, SolverError,
};

/// Which engines take part.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Search for structure, SMT for attributes.
    Hybrid,
    /// Pure search over every feature; no solver involved.
    Baseline,
}

/// Everything a solve run needs besides the model and the constraints.
#[derive(Debug, Clone)]
pub struct SolveConfig {
    pub mode: Mode,
    pub search: SearchConfig,
    /// Explicit solver binary; `None` resolves via `SMT_SOLVER`, `PATH`,
    /// then the bundled fallback, at the first SMT step.
    pub solver_path: Option<PathBuf>,
    /// Per-invocation solver budget.
    pub smt_timeout: Duration,
    /// Overall wall-clock budget; `None` means iterations only.
    pub wall_timeout: Option<Duration>,
    /// Starting instance; the default is the empty one.
    pub initial: Option<InstanceModel>,
    /// Directory receiving each emitted SMT-LIB script as a numbered file.
    pub dump_smt: Option<PathBuf>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            mode: Mode::Hybrid,
            search: SearchConfig::default(),
            solver_path: None,
            smt_timeout: Duration::from_secs(10),
            wall_timeout: None,
            initial: None,
            dump_smt: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Solved,
    BudgetExhausted,
    Error,
}

/// Cumulative wall time per pipeline step. Measured always, but excluded
/// from the serialized report: the report must be byte-identical across
/// runs with the same seed, and wall clocks are not. The benchmark CSV
/// carries the numbers instead.
#[derive(Debug, Clone, Copy, Default)]
pub struct Timings {
    pub search: Duration,
    pub check: Duration,
    pub smt_build: Duration,
    pub smt_solve: Duration,
    pub lift: Duration,
}

/// The outcome of one solve run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SolveReport {
    pub status: Status,
    /// Completed search iterations.
    pub iterations: usize,
    pub smt_invocations: usize,
    pub smt_sat_count: usize,
    pub restarts: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub final_instance: InstanceModel,
    #[serde(skip)]
    pub timings: Timings,
}

impl SolveReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Measure one step into a cumulative timing slot.
macro_rules! timed {
    ($slot:expr, $body:expr) => {{
        let t0 = Instant::now();
        let out = $body;
        $slot += t0.elapsed();
        out
    }};
}

/// Generate an instance satisfying `invariants` plus `ne` (the
/// non-emptiness formula) against `m`. `ops` are the user-defined
/// operations referenced by the constraints.
pub fn solve(
    m: &DataModel,
    invariants: &[Invariant],
    ops: &OpTable,
    ne: &Expr,
    cfg: &SolveConfig,
) -> SolveReport {
    let mut timings = Timings::default();
    let started = Instant::now();

    let normalized = match crate::nnf::normalize(m, invariants, ops, ne) {
        Ok(n) => n,
        Err(e) => return error_report(InstanceModel::new(), timings, e.to_string()),
    };
    let mut root = normalized.constraint;
    let ops = normalized.ops;
    label_ast(&mut root, &ops);
    let labeled = label_user_ops(&root, &ops);

    let allowed = match cfg.mode {
        Mode::Baseline => AllowedFeatures::everything(m),
        Mode::Hybrid => AllowedFeatures::from_labels(m, &root, &labeled),
    };
    let mut searcher = Searcher::new(m, &ops, &root, allowed, cfg.search.clone());
    let mut inst = cfg.initial.clone().unwrap_or_default();
    inst.normalize();

    // The solver is resolved on first need, so baseline runs (and runs that
    // never reach an SMT step) work without one installed.
    let mut solver: Option<Result<SolverCmd, SolverError>> = None;
    let mut smt_invocations = 0usize;
    let mut smt_sat_count = 0usize;

    let valid = |inst: &InstanceModel| {
        Evaluator::new(m, &ops, inst).eval_closed(&root) == Value::Boolean(true)
    };

    if timed!(timings.check, valid(&inst)) {
        return finish(Status::Solved, 0, smt_invocations, smt_sat_count, &searcher, inst, timings, None);
    }

    let expired = |started: Instant| {
        cfg.wall_timeout.map(|t| started.elapsed() >= t).unwrap_or(false)
    };

    for iteration in 1..=cfg.search.max_iterations {
        if expired(started) {
            return finish(
                Status::BudgetExhausted,
                iteration - 1,
                smt_invocations,
                smt_sat_count,
                &searcher,
                inst,
                timings,
                None,
            );
        }

        // Step 2: one search pass over the variable vector.
        let searched = timed!(timings.search, searcher.iteration(&mut inst));
        if timed!(timings.check, valid(&inst)) {
            return finish(Status::Solved, iteration, smt_invocations, smt_sat_count, &searcher, inst, timings, None);
        }

        // Steps 3 and 4: ask the SMT solver to repair the attributes, unless
        // the structural part already dooms the formula.
        let mut lifted = false;
        if cfg.mode == Mode::Hybrid {
            let futile = timed!(timings.check, {
                let ev = Evaluator::new(m, &ops, &inst);
                futile_check(&root, &ev, &ops)
            });
            if !futile {
                match timed!(timings.smt_build, derive_formula(m, &ops, &root, &inst)) {
                    Ok(Derived::Constant(_)) => {}
                    Ok(Derived::Job(job)) => {
                        let cmd = solver.get_or_insert_with(|| {
                            resolve_solver(cfg.solver_path.as_deref())
                        });
                        let cmd = match cmd {
                            Ok(c) => c,
                            Err(e) => {
                                let msg = format!("SMT solver unavailable: {e}");
                                return finish_err(iteration, smt_invocations, smt_sat_count, &searcher, inst, timings, msg);
                            }
                        };
                        smt_invocations += 1;
                        dump_script(cfg, smt_invocations, &job.script);
                        let before = timed!(timings.check, searcher.objective(&inst));
                        match timed!(timings.smt_solve, run_job(&job, cmd, cfg.smt_timeout)) {
                            Ok(out) => match timed!(timings.lift, lift_model(&out, &job, &mut inst)) {
                                Ok(LiftOutcome::Updated) => {
                                    smt_sat_count += 1;
                                    if timed!(timings.check, valid(&inst)) {
                                        return finish(Status::Solved, iteration, smt_invocations, smt_sat_count, &searcher, inst, timings, None);
                                    }
                                    lifted = timed!(timings.check, searcher.objective(&inst)) < before;
                                }
                                // Unsat and unknown answers leave the
                                // instance alone and count as no progress.
                                Ok(LiftOutcome::Unsat | LiftOutcome::Unknown) => {}
                                Err(e) => {
                                    let msg = format!("lifting the SMT model failed: {e}");
                                    return finish_err(iteration, smt_invocations, smt_sat_count, &searcher, inst, timings, msg);
                                }
                            },
                            // A solver timeout is routine: fall back to
                            // search and try again later. Anything else
                            // (process died, gibberish output) aborts.
                            Err(SolverError::Timeout(_)) => {}
                            Err(e) => {
                                let msg = format!("SMT solver failed: {e}");
                                return finish_err(iteration, smt_invocations, smt_sat_count, &searcher, inst, timings, msg);
                            }
                        }
                    }
                    // An undefined evaluation means the search part is not
                    // settled enough to freeze; keep searching.
                    Err(crate::smt::DeriveError::Undefined(_)) => {}
                    Err(e) => {
                        let msg = format!("cannot build the SMT job: {e}");
                        return finish_err(iteration, smt_invocations, smt_sat_count, &searcher, inst, timings, msg);
                    }
                }
            }
        }

        let improved = searched || lifted;
        timed!(timings.search, searcher.restart_if_stuck(&mut inst, improved));
    }

    finish(
        Status::BudgetExhausted,
        cfg.search.max_iterations,
        smt_invocations,
        smt_sat_count,
        &searcher,
        inst,
        timings,
        None,
    )
}

/// The pure-search comparison mode: same loop, no SMT, no feature fence.
pub fn solve_baseline(
    m: &DataModel,
    invariants: &[Invariant],
    ops: &OpTable,
    ne: &Expr,
    cfg: &SolveConfig,
) -> SolveReport {
    let cfg = SolveConfig { mode: Mode::Baseline, ..cfg.clone() };
    solve(m, invariants, ops, ne, &cfg)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    status: Status,
    iterations: usize,
    smt_invocations: usize,
    smt_sat_count: usize,
    searcher: &Searcher<'_>,
    mut inst: InstanceModel,
    timings: Timings,
    error: Option<String>,
) -> SolveReport {
    inst.normalize();
    SolveReport {
        status,
        iterations,
        smt_invocations,
        smt_sat_count,
        restarts: searcher.restarts,
        error,
        final_instance: inst,
        timings,
    }
}

#[allow(clippy::too_many_arguments)]
fn finish_err(
    iterations: usize,
    smt_invocations: usize,
    smt_sat_count: usize,
    searcher: &Searcher<'_>,
    inst: InstanceModel,
    timings: Timings,
    msg: String,
) -> SolveReport {
    finish(Status::Error, iterations, smt_invocations, smt_sat_count, searcher, inst, timings, Some(msg))
}

fn error_report(inst: InstanceModel, timings: Timings, msg: String) -> SolveReport {
    SolveReport {
        status: Status::Error,
        iterations: 0,
        smt_invocations: 0,
        smt_sat_count: 0,
        restarts: 0,
        error: Some(msg),
        final_instance: inst,
        timings,
    }
}

fn dump_script(cfg: &SolveConfig, n: usize, script: &str) {
    if let Some(dir) = &cfg.dump_smt {
        let _ = std::fs::create_dir_all(dir);
        let _ = std::fs::write(dir.join(format!("job-{n:04}.smt2")), script);
    }
}
