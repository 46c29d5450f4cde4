//! Running an external SMT solver and lifting its model back into the
//! instance.
//!
//! One child process per invocation: the script goes to the solver's stdin,
//! the verdict and `(get-value …)` response come back on stdout. A poll loop
//! enforces the timeout (the child is killed when it expires). The textual
//! model is parsed as S-expressions; rationals like `(/ 2.0 3.0)` and
//! negatives like `(- 6)` are folded into plain values, the sort of each
//! declared constant deciding how its token is read.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use crate::model::{InstanceModel, Value};

use super::{SmtJob, SmtSort};

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error(
        "no SMT solver found; pass --smt-solver, set SMT_SOLVER, or put z3/cvc5/cvc4 on PATH"
    )]
    NotFound,
    #[error("failed to run solver {0}: {1}")]
    Spawn(String, #[source] std::io::Error),
    #[error("solver exceeded its time limit of {0:?}")]
    Timeout(Duration),
    #[error("unexpected solver output: {0}")]
    Protocol(String),
}

/// Resolved solver invocation: program plus the arguments that make it read
/// SMT-LIB from stdin.
#[derive(Debug, Clone)]
pub struct SolverCmd {
    pub program: PathBuf,
    pub args: Vec<String>,
}

impl SolverCmd {
    fn for_program(program: PathBuf) -> SolverCmd {
        let base = program
            .file_name()
            .map(|n| n.to_string_lossy().to_string())
            .unwrap_or_default();
        let args = if base.starts_with("z3") {
            vec!["-in".to_string()]
        } else if base.starts_with("cvc") {
            vec!["--lang".to_string(), "smt2".to_string()]
        } else {
            Vec::new()
        };
        SolverCmd { program, args }
    }
}

/// Find a solver: an explicit path wins, then the `SMT_SOLVER` environment
/// variable, then `z3` / `cvc5` / `cvc4` on `PATH`, then the bundled
/// `tools/z3-wasm/z3` launcher relative to the working directory.
pub fn resolve_solver(explicit: Option<&Path>) -> Result<SolverCmd, SolverError> {
    if let Some(p) = explicit {
        return locate(p).map(SolverCmd::for_program).ok_or(SolverError::NotFound);
    }
    if let Some(p) = std::env::var_os("SMT_SOLVER") {
        if !p.is_empty() {
            return locate(Path::new(&p))
                .map(SolverCmd::for_program)
                .ok_or(SolverError::NotFound);
        }
    }
    for name in ["z3", "cvc5", "cvc4"] {
        if let Some(p) = find_on_path(name) {
            return Ok(SolverCmd::for_program(p));
        }
    }
    let bundled = PathBuf::from("tools/z3-wasm/z3");
    if is_executable(&bundled) {
        return Ok(SolverCmd::for_program(bundled));
    }
    Err(SolverError::NotFound)
}

/// An explicitly named solver: a bare name is looked up on `PATH`, anything
/// with a directory component must itself be executable.
fn locate(p: &Path) -> Option<PathBuf> {
    if p.components().count() == 1 && !p.is_absolute() {
        if is_executable(p) {
            return Some(p.to_path_buf());
        }
        return find_on_path(&p.to_string_lossy());
    }
    is_executable(p).then(|| p.to_path_buf())
}

fn find_on_path(name: &str) -> Option<PathBuf> {
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path)
        .map(|dir| dir.join(name))
        .find(|c| is_executable(c))
}

fn is_executable(p: &Path) -> bool {
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        p.metadata()
            .map(|m| m.is_file() && m.permissions().mode() & 0o111 != 0)
            .unwrap_or(false)
    }
    #[cfg(not(unix))]
    {
        p.is_file()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Sat,
    Unsat,
    Unknown,
}

/// Parsed solver response: the verdict plus the `(get-value …)` pairs.
#[derive(Debug)]
pub struct SolverOutput {
    pub verdict: Verdict,
    pub model: Vec<(String, Sexp)>,
}

/// Run one script through the solver.
pub fn run_solver(
    cmd: &SolverCmd,
    script: &str,
    timeout: Duration,
) -> Result<SolverOutput, SolverError> {
    let display = cmd.program.display().to_string();
    let mut child = Command::new(&cmd.program)
        .args(&cmd.args)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| SolverError::Spawn(display.clone(), e))?;

    {
        let mut stdin = child.stdin.take().expect("stdin was piped");
        // A failed write usually means the child died early; the protocol
        // error below carries its stderr, which is more telling.
        let _ = stdin.write_all(script.as_bytes());
    }

    let started = Instant::now();
    loop {
        match child.try_wait() {
            Ok(Some(_)) => break,
            Ok(None) => {
                if started.elapsed() >= timeout {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(SolverError::Timeout(timeout));
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(SolverError::Spawn(display.clone(), e)),
        }
    }

    let mut stdout = String::new();
    if let Some(mut out) = child.stdout.take() {
        let _ = out.read_to_string(&mut stdout);
    }
    let mut stderr = String::new();
    if let Some(mut err) = child.stderr.take() {
        let _ = err.read_to_string(&mut stderr);
    }
    parse_output(&stdout, &stderr)
}

fn parse_output(stdout: &str, stderr: &str) -> Result<SolverOutput, SolverError> {
    let mut verdict = None;
    let mut rest = String::new();
    for line in stdout.lines() {
        let t = line.trim();
        if verdict.is_none() {
            match t {
                "sat" => verdict = Some(Verdict::Sat),
                "unsat" => verdict = Some(Verdict::Unsat),
                "unknown" => verdict = Some(Verdict::Unknown),
                _ => {} // banner / warnings before the verdict
            }
        } else {
            rest.push_str(line);
            rest.push('\n');
        }
    }
    let Some(verdict) = verdict else {
        let mut msg = String::from("no sat/unsat/unknown in solver output");
        if !stdout.trim().is_empty() {
            msg.push_str(&format!("; stdout: {}", stdout.trim()));
        }
        if !stderr.trim().is_empty() {
            msg.push_str(&format!("; stderr: {}", stderr.trim()));
        }
        return Err(SolverError::Protocol(msg));
    };

    let mut model = Vec::new();
    if verdict == Verdict::Sat && !rest.trim().is_empty() {
        let sexp = parse_sexp(&rest)?;
        let Sexp::List(pairs) = sexp else {
            return Err(SolverError::Protocol(format!("model is not a list: {}", rest.trim())));
        };
        for pair in pairs {
            let Sexp::List(mut kv) = pair else {
                return Err(SolverError::Protocol("model entry is not a pair".into()));
            };
            if kv.len() != 2 {
                return Err(SolverError::Protocol("model entry is not a pair".into()));
            }
            let value = kv.pop().expect("len checked");
            let Sexp::Atom(name) = kv.pop().expect("len checked") else {
                return Err(SolverError::Protocol("model entry name is not a symbol".into()));
            };
            model.push((name, value));
        }
    }
    Ok(SolverOutput { verdict, model })
}

// ---------------------------------------------------------------------------
// S-expressions
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum Sexp {
    Atom(String),
    /// A string literal, with SMT-LIB's doubled-quote escape undone.
    Str(String),
    List(Vec<Sexp>),
}

fn parse_sexp(text: &str) -> Result<Sexp, SolverError> {
    let chars: Vec<char> = text.chars().collect();
    let mut pos = 0usize;
    let e = parse_one(&chars, &mut pos)?;
    Ok(e)
}

fn parse_one(chars: &[char], pos: &mut usize) -> Result<Sexp, SolverError> {
    skip_ws(chars, pos);
    match chars.get(*pos) {
        None => Err(SolverError::Protocol("unexpected end of model".into())),
        Some('(') => {
            *pos += 1;
            let mut items = Vec::new();
            loop {
                skip_ws(chars, pos);
                match chars.get(*pos) {
                    None => return Err(SolverError::Protocol("unclosed parenthesis in model".into())),
                    Some(')') => {
                        *pos += 1;
                        return Ok(Sexp::List(items));
                    }
                    _ => items.push(parse_one(chars, pos)?),
                }
            }
        }
        Some(')') => Err(SolverError::Protocol("stray ')' in model".into())),
        Some('"') => {
            *pos += 1;
            let mut s = String::new();
            loop {
                match chars.get(*pos) {
                    None => return Err(SolverError::Protocol("unclosed string in model".into())),
                    Some('"') if chars.get(*pos + 1) == Some(&'"') => {
                        s.push('"');
                        *pos += 2;
                    }
                    Some('"') => {
                        *pos += 1;
                        return Ok(Sexp::Str(s));
                    }
                    Some(c) => {
                        s.push(*c);
                        *pos += 1;
                    }
                }
            }
        }
        Some(_) => {
            let start = *pos;
            while let Some(c) = chars.get(*pos) {
                if c.is_whitespace() || *c == '(' || *c == ')' || *c == '"' {
                    break;
                }
                *pos += 1;
            }
            Ok(Sexp::Atom(chars[start..*pos].iter().collect()))
        }
    }
}

fn skip_ws(chars: &[char], pos: &mut usize) {
    while chars.get(*pos).is_some_and(|c| c.is_whitespace()) {
        *pos += 1;
    }
}

// ---------------------------------------------------------------------------
// Value lifting
// ---------------------------------------------------------------------------

/// Read one model value under the expectations of its declared sort.
pub fn sexp_to_value(s: &Sexp, sort: &SmtSort) -> Result<Value, SolverError> {
    let bad = || SolverError::Protocol(format!("cannot read {s:?} as {}", sort.name()));
    Ok(match sort {
        SmtSort::Bool => match s {
            Sexp::Atom(a) if a == "true" => Value::Boolean(true),
            Sexp::Atom(a) if a == "false" => Value::Boolean(false),
            _ => return Err(bad()),
        },
        SmtSort::Int => Value::Integer(integer(s).ok_or_else(bad)?),
        SmtSort::Real => Value::Real(numeric(s).ok_or_else(bad)?),
        SmtSort::Str => match s {
            Sexp::Str(v) => Value::Str(v.clone()),
            _ => return Err(bad()),
        },
        SmtSort::Enum(name) => match s {
            Sexp::Atom(a) => {
                // Undo the collision prefix if present.
                let lit = a.strip_prefix(&format!("{name}_")).unwrap_or(a);
                Value::Enum { enumeration: name.clone(), literal: lit.to_string() }
            }
            _ => return Err(bad()),
        },
    })
}

/// Integer value of an atom or `(- x)`, exactly.
fn integer(s: &Sexp) -> Option<i64> {
    match s {
        Sexp::Atom(a) => a.parse().ok(),
        Sexp::List(items) => match items.as_slice() {
            [Sexp::Atom(op), x] if op == "-" => integer(x)?.checked_neg(),
            _ => None,
        },
        Sexp::Str(_) => None,
    }
}

/// Numeric value of an atom, `(- x)`, or `(/ a b)` (possibly nested).
fn numeric(s: &Sexp) -> Option<f64> {
    match s {
        Sexp::Atom(a) => a.parse::<f64>().ok(),
        Sexp::List(items) => match items.as_slice() {
            [Sexp::Atom(op), x] if op == "-" => Some(-numeric(x)?),
            [Sexp::Atom(op), a, b] if op == "/" => {
                let d = numeric(b)?;
                if d == 0.0 {
                    None
                } else {
                    Some(numeric(a)? / d)
                }
            }
            _ => None,
        },
        Sexp::Str(_) => None,
    }
}

/// How a solver call left the instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LiftOutcome {
    /// `sat`: the model's values are now in the attribute slots.
    Updated,
    /// The specialized formula is unsatisfiable; the instance is untouched.
    Unsat,
    /// The solver gave up (or the theory combination defeated it); the
    /// instance is untouched.
    Unknown,
}

/// Run the job and, on `sat`, write the model back into the bound slots.
pub fn solve_and_lift(
    job: &SmtJob,
    inst: &mut InstanceModel,
    cmd: &SolverCmd,
    timeout: Duration,
) -> Result<LiftOutcome, SolverError> {
    let out = run_job(job, cmd, timeout)?;
    lift_model(&out, job, inst)
}

/// Run the solver on the job's script and parse its answer, without
/// touching any instance. Split from [`lift_model`] so callers can time
/// the two phases separately.
pub fn run_job(job: &SmtJob, cmd: &SolverCmd, timeout: Duration) -> Result<SolverOutput, SolverError> {
    run_solver(cmd, &job.script, timeout)
}

/// Write a `sat` model's values into the bound attribute slots of `inst`.
pub fn lift_model(
    out: &SolverOutput,
    job: &SmtJob,
    inst: &mut InstanceModel,
) -> Result<LiftOutcome, SolverError> {
    match out.verdict {
        Verdict::Unsat => return Ok(LiftOutcome::Unsat),
        Verdict::Unknown => return Ok(LiftOutcome::Unknown),
        Verdict::Sat => {}
    }
    let by_name: std::collections::BTreeMap<&str, &Sexp> =
        out.model.iter().map(|(n, v)| (n.as_str(), v)).collect();
    for b in &job.bindings {
        let s = by_name.get(b.var.as_str()).ok_or_else(|| {
            SolverError::Protocol(format!("model has no value for {}", b.var))
        })?;
        let v = sexp_to_value(s, &b.sort)?;
        let obj = inst.object_mut(&b.object).ok_or_else(|| {
            SolverError::Protocol(format!("bound object {} is gone", b.object))
        })?;
        obj.attrs.insert(b.attr.clone(), v);
    }
    Ok(LiftOutcome::Updated)
}
