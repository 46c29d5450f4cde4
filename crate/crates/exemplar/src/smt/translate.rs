//! Emission of the processed formula as an SMT-LIB script.
//!
//! The script is assembled in a fixed layout: the model-production option,
//! one datatype per referenced enumeration, one declared constant per
//! surviving attribute slot (`X1`, `X2`, … in first-encounter order — the
//! constraint first, then operation bodies), the built-in definitions the
//! formula needs, the user-defined operations, the assertion, `(check-sat)`,
//! and a `(get-value …)` over all declared slots.
//!
//! Notes on the emitted dialect:
//! - `<>` becomes `(not (= …))`; SMT-LIB has no dis-equality infix.
//! - OCL's `size` and `concat` on strings are emitted as `sizeString` and
//!   `concatString`, matching the names of their definitions (plain `size` /
//!   `concat` would collide with nothing but read ambiguously).
//! - `substring` maps to `str.substr` with its arguments passed through
//!   verbatim.
//! - Integer `div`/`mod` and `abs` use the native SMT-LIB symbols.
//! - Enumeration literals are emitted bare. If two referenced enumerations
//!   share a literal name, every literal of every referenced enumeration is
//!   prefixed with `{Enum}_` — declarations and uses together.
//! - Built-in definitions are kept byte-for-byte stable and are emitted in
//!   dependency order (`round` uses `floor`, `ceil` and `toReal`, which
//!   therefore precede it).

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use crate::model::{DataModel, ObjectId, Value};
use crate::ocl::ast::{ArithOp, BoolOp, Expr, ExprKind, MethodOp, RelOp, Type};

use super::{Binding, DeriveError, ProcessedOp, SmtJob, SmtSort};

/// The nine built-in definitions, in emission (dependency) order.
const BUILTINS: [(&str, &str); 9] = [
    ("sizeString", "(define-fun sizeString ((a String)) Int (str.len a))"),
    ("toInteger", "(define-fun toInteger ((a String)) Int (str.to.int a))"),
    ("floor", "(define-fun floor ((x Real)) Int (to_int x))"),
    ("ceil", "(define-fun ceil ((x Real)) Int (+ (to_int x) 1))"),
    ("toReal", "(define-fun toReal ((a Int)) Real (* a 1.0))"),
    (
        "round",
        "(define-fun round ((a Real)) Real (ite (> (- a (floor a)) 0.5) (toReal (ceil a)) (toReal (floor a))))",
    ),
    ("max", "(define-fun max ((a Real)(b Real)) Real (ite (>= a b) a b))"),
    ("min", "(define-fun min ((a Real)(b Real)) Real (ite (<= a b) a b))"),
    ("concatString", "(define-fun concatString ((a String)(b String)) String (str.++ a b))"),
];

/// Build the complete solver job for a processed constraint and its
/// operation definitions.
pub fn translate(
    m: &DataModel,
    root: &Expr,
    defs: &[ProcessedOp],
) -> Result<SmtJob, DeriveError> {
    // Pass 1: attribute slots (first-encounter order) and referenced enums.
    let mut slots: Vec<(ObjectId, String, SmtSort)> = Vec::new();
    let mut enums: Vec<String> = Vec::new();
    collect_refs(root, m, &mut slots, &mut enums)?;
    for def in defs {
        collect_refs(&def.body, m, &mut slots, &mut enums)?;
        for (_, ty) in &def.params {
            note_enum_type(ty, &mut enums);
        }
        note_enum_type(&def.return_type, &mut enums);
    }

    // Literal collision across referenced enums forces prefixed literals.
    let mut seen_lits: BTreeSet<&str> = BTreeSet::new();
    let mut prefix_enums = false;
    for name in &enums {
        let decl = m
            .enumeration(name)
            .ok_or_else(|| DeriveError::Untranslatable(format!("unknown enumeration {name}")))?;
        for lit in &decl.literals {
            if !seen_lits.insert(lit) {
                prefix_enums = true;
            }
        }
    }

    let slot_names: BTreeMap<(ObjectId, String), String> = slots
        .iter()
        .enumerate()
        .map(|(i, (o, a, _))| ((o.clone(), a.clone()), format!("X{}", i + 1)))
        .collect();

    let emitter = Emitter {
        m,
        slots: slot_names,
        attr_names: BTreeMap::new(),
        prefix_enums,
        needed: RefCell::new(BTreeSet::new()),
    };

    let assertion = emitter.emit(root)?;
    let mut op_lines = Vec::with_capacity(defs.len());
    for def in defs {
        let mut params = String::new();
        for (p, ty) in &def.params {
            let sort = SmtSort::of_type(ty).ok_or_else(|| {
                DeriveError::Untranslatable(format!("parameter {p} of {} has no SMT sort", def.name))
            })?;
            let _ = write!(params, "({p} {})", sort.name());
        }
        let ret = SmtSort::of_type(&def.return_type).ok_or_else(|| {
            DeriveError::Untranslatable(format!("return type of {} has no SMT sort", def.name))
        })?;
        let body = emitter.emit(&def.body)?;
        op_lines.push(format!("(define-fun {} ({params}) {} {body})", def.name, ret.name()));
    }

    // Pass 2: assemble.
    let mut lines: Vec<String> = vec!["(set-option :produce-models true)".into()];
    for name in &enums {
        let decl = m.enumeration(name).expect("checked above");
        let mut ctors = String::new();
        for lit in &decl.literals {
            if prefix_enums {
                let _ = write!(ctors, "({name}_{lit})");
            } else {
                let _ = write!(ctors, "({lit})");
            }
        }
        lines.push(format!("(declare-datatypes ()(({name} {ctors})))"));
    }
    let mut bindings = Vec::with_capacity(slots.len());
    for (i, (object, attr, sort)) in slots.into_iter().enumerate() {
        let var = format!("X{}", i + 1);
        lines.push(format!("(declare-const {var} {})", sort.name()));
        bindings.push(Binding { var, object, attr, sort });
    }
    let needed = close_builtins(emitter.needed.into_inner());
    for (name, text) in BUILTINS {
        if needed.contains(name) {
            lines.push(text.to_string());
        }
    }
    let op_decls: Vec<String> = defs.iter().map(|d| d.name.clone()).collect();
    lines.extend(op_lines);
    lines.push(format!("(assert {assertion})"));
    lines.push("(check-sat)".into());
    if !bindings.is_empty() {
        let vars: Vec<&str> = bindings.iter().map(|b| b.var.as_str()).collect();
        lines.push(format!("(get-value ({}))", vars.join(" ")));
    }
    let enum_decls = enums;
    let mut script = lines.join("\n");
    script.push('\n');
    Ok(SmtJob { script, bindings, enum_decls, op_decls })
}

/// Pre-order collection of attribute slots and referenced enumerations.
fn collect_refs(
    e: &Expr,
    m: &DataModel,
    slots: &mut Vec<(ObjectId, String, SmtSort)>,
    enums: &mut Vec<String>,
) -> Result<(), DeriveError> {
    match &e.kind {
        ExprKind::Attr { recv, attr } => {
            if let ExprKind::ObjectLit(id) = &recv.kind {
                if !slots.iter().any(|(o, a, _)| o == id && a == attr) {
                    let sort = SmtSort::of_type(&e.ty).ok_or_else(|| {
                        DeriveError::Untranslatable(format!(
                            "attribute {attr} of {id} has no SMT sort"
                        ))
                    })?;
                    if let SmtSort::Enum(n) = &sort {
                        note_enum(n, enums);
                    }
                    slots.push((id.clone(), attr.clone(), sort));
                }
            }
        }
        ExprKind::EnumLit { enumeration, .. } => note_enum(enumeration, enums),
        ExprKind::StaticAttr { class, attr } => {
            if let Some(Value::Enum { enumeration, .. }) =
                m.attribute(class, attr).and_then(|a| a.constant.as_ref())
            {
                note_enum(enumeration, enums);
            }
        }
        _ => {}
    }
    for c in e.children() {
        collect_refs(c, m, slots, enums)?;
    }
    Ok(())
}

fn note_enum(name: &str, enums: &mut Vec<String>) {
    if !enums.iter().any(|e| e == name) {
        enums.push(name.to_string());
    }
}

fn note_enum_type(ty: &Type, enums: &mut Vec<String>) {
    if let Type::Enum(n) = ty {
        note_enum(n, enums);
    }
}

/// `round` is defined in terms of `floor`, `ceil` and `toReal`.
fn close_builtins(mut needed: BTreeSet<&'static str>) -> BTreeSet<&'static str> {
    if needed.contains("round") {
        needed.extend(["floor", "ceil", "toReal"]);
    }
    needed
}

/// Expression-to-SMT-LIB emitter. [`translate`] drives it with the slot map
/// it computed; [`Emitter::with_attr_names`] exists for fragment emission
/// (dumps and tests) where attribute reads are still written against `self`.
pub struct Emitter<'a> {
    m: &'a DataModel,
    /// `(object, attribute)` → declared constant name.
    slots: BTreeMap<(ObjectId, String), String>,
    /// Attribute name → variable name, for fragments whose receivers are
    /// plain variables rather than concrete objects.
    attr_names: BTreeMap<String, String>,
    prefix_enums: bool,
    needed: RefCell<BTreeSet<&'static str>>,
}

impl<'a> Emitter<'a> {
    /// Fragment emitter: attribute reads are resolved by attribute name
    /// through `attr_names` regardless of their receiver.
    pub fn with_attr_names(m: &'a DataModel, attr_names: BTreeMap<String, String>) -> Emitter<'a> {
        Emitter {
            m,
            slots: BTreeMap::new(),
            attr_names,
            prefix_enums: false,
            needed: RefCell::new(BTreeSet::new()),
        }
    }

    pub fn emit(&self, e: &Expr) -> Result<String, DeriveError> {
        let s = match &e.kind {
            ExprKind::BoolLit(b) => b.to_string(),
            ExprKind::IntLit(n) => int_str(*n),
            ExprKind::RealLit(r) => real_str(*r)?,
            ExprKind::StrLit(s) => string_str(s),
            ExprKind::EnumLit { enumeration, literal } => self.enum_lit(enumeration, literal),
            ExprKind::StaticAttr { class, attr } => {
                let v = self
                    .m
                    .attribute(class, attr)
                    .and_then(|a| a.constant.as_ref())
                    .ok_or_else(|| {
                        DeriveError::Untranslatable(format!("{class}::{attr} has no constant value"))
                    })?;
                self.value_literal(v)?
            }
            ExprKind::Var(n) => n.clone(),
            ExprKind::Attr { recv, attr } => match &recv.kind {
                ExprKind::ObjectLit(id) => self
                    .slots
                    .get(&(id.clone(), attr.clone()))
                    .cloned()
                    .ok_or_else(|| {
                        DeriveError::Untranslatable(format!("undeclared slot {id}.{attr}"))
                    })?,
                _ => self.attr_names.get(attr).cloned().ok_or_else(|| {
                    DeriveError::Untranslatable(format!("unexternalized attribute {attr}"))
                })?,
            },
            ExprKind::Not(x) => format!("(not {})", self.emit(x)?),
            ExprKind::Neg(x) => format!("(- {})", self.emit(x)?),
            ExprKind::Bool { op, lhs, rhs } => {
                let name = match op {
                    BoolOp::And => "and",
                    BoolOp::Or => "or",
                    BoolOp::Xor => "xor",
                    BoolOp::Implies => "=>",
                };
                format!("({name} {} {})", self.emit(lhs)?, self.emit(rhs)?)
            }
            ExprKind::Rel { op, lhs, rhs } => {
                let (l, r) = (self.emit(lhs)?, self.emit(rhs)?);
                match op {
                    RelOp::Eq => format!("(= {l} {r})"),
                    RelOp::Ne => format!("(not (= {l} {r}))"),
                    RelOp::Lt => format!("(< {l} {r})"),
                    RelOp::Le => format!("(<= {l} {r})"),
                    RelOp::Gt => format!("(> {l} {r})"),
                    RelOp::Ge => format!("(>= {l} {r})"),
                }
            }
            ExprKind::Arith { op, lhs, rhs } => {
                let name = match op {
                    ArithOp::Add => "+",
                    ArithOp::Sub => "-",
                    ArithOp::Mul => "*",
                    ArithOp::Div => "/",
                };
                format!("({name} {} {})", self.emit(lhs)?, self.emit(rhs)?)
            }
            ExprKind::MethodCall { recv, op, args } => self.method_call(recv, *op, args)?,
            ExprKind::UserCall { op, args, .. } => {
                // The receiver's contribution travels through the
                // externalized parameters; the symbol alone remains.
                if args.is_empty() {
                    op.clone()
                } else {
                    let mut out = format!("({op}");
                    for a in args {
                        let _ = write!(out, " {}", self.emit(a)?);
                    }
                    out.push(')');
                    out
                }
            }
            ExprKind::If { cond, then_branch, else_branch } => format!(
                "(ite {} {} {})",
                self.emit(cond)?,
                self.emit(then_branch)?,
                self.emit(else_branch)?
            ),
            ExprKind::NullLit => {
                return Err(DeriveError::Untranslatable("null outside an equality handled by search".into()))
            }
            ExprKind::ObjectLit(id) => {
                return Err(DeriveError::Untranslatable(format!("object reference {id}")))
            }
            ExprKind::CollectionLit { .. } => {
                return Err(DeriveError::Untranslatable("collection value".into()))
            }
            ExprKind::Nav { .. }
            | ExprKind::AllInstances { .. }
            | ExprKind::Iterate { .. }
            | ExprKind::CollectionOp { .. }
            | ExprKind::TypeCheckOp { .. } => {
                return Err(DeriveError::Untranslatable(format!(
                    "search-owned construct survived substitution: {}",
                    crate::ocl::pretty::pretty_print(e)
                )))
            }
            ExprKind::Let { .. } | ExprKind::Prop { .. } | ExprKind::Qualified { .. } => {
                return Err(DeriveError::Untranslatable("unresolved syntax".into()))
            }
        };
        Ok(s)
    }

    fn method_call(
        &self,
        recv: &Expr,
        op: MethodOp,
        args: &[Expr],
    ) -> Result<String, DeriveError> {
        let r = self.emit(recv)?;
        let unary = |name: &str, builtin: Option<&'static str>| -> Result<String, DeriveError> {
            if let Some(b) = builtin {
                self.needed.borrow_mut().insert(b);
            }
            Ok(format!("({name} {r})"))
        };
        Ok(match op {
            MethodOp::Abs => unary("abs", None)?,
            MethodOp::Floor => unary("floor", Some("floor"))?,
            MethodOp::Ceil => unary("ceil", Some("ceil"))?,
            MethodOp::Round => unary("round", Some("round"))?,
            MethodOp::ToInteger => unary("toInteger", Some("toInteger"))?,
            MethodOp::ToReal => {
                if recv.ty == Type::Real {
                    // Already Real; the Int-sorted definition does not apply.
                    r
                } else {
                    unary("toReal", Some("toReal"))?
                }
            }
            MethodOp::StrSize => unary("sizeString", Some("sizeString"))?,
            MethodOp::Div => format!("(div {r} {})", self.emit(&args[0])?),
            MethodOp::Mod => format!("(mod {r} {})", self.emit(&args[0])?),
            MethodOp::Max => {
                self.needed.borrow_mut().insert("max");
                format!("(max {r} {})", self.emit(&args[0])?)
            }
            MethodOp::Min => {
                self.needed.borrow_mut().insert("min");
                format!("(min {r} {})", self.emit(&args[0])?)
            }
            MethodOp::Concat => {
                self.needed.borrow_mut().insert("concatString");
                format!("(concatString {r} {})", self.emit(&args[0])?)
            }
            MethodOp::Substring => format!(
                "(str.substr {r} {} {})",
                self.emit(&args[0])?,
                self.emit(&args[1])?
            ),
            MethodOp::OclIsUndefined | MethodOp::OclIsInvalid => {
                return Err(DeriveError::Untranslatable(format!(
                    "{}() is search-owned",
                    op.name()
                )))
            }
        })
    }

    fn enum_lit(&self, enumeration: &str, literal: &str) -> String {
        if self.prefix_enums {
            format!("{enumeration}_{literal}")
        } else {
            literal.to_string()
        }
    }

    fn value_literal(&self, v: &Value) -> Result<String, DeriveError> {
        Ok(match v {
            Value::Boolean(b) => b.to_string(),
            Value::Integer(n) => int_str(*n),
            Value::Real(r) => real_str(*r)?,
            Value::Str(s) => string_str(s),
            Value::Enum { enumeration, literal } => self.enum_lit(enumeration, literal),
            other => {
                return Err(DeriveError::Untranslatable(format!(
                    "constant {other:?} has no SMT-LIB literal"
                )))
            }
        })
    }
}

fn int_str(n: i64) -> String {
    if n < 0 {
        format!("(- {})", n.unsigned_abs())
    } else {
        n.to_string()
    }
}

fn real_str(r: f64) -> Result<String, DeriveError> {
    if !r.is_finite() {
        return Err(DeriveError::Untranslatable("non-finite real".into()));
    }
    let a = r.abs();
    let mut s = format!("{a}");
    if s.contains('e') || s.contains('E') {
        // Scientific notation is not SMT-LIB; print positionally.
        s = format!("{a:.17}");
        while s.ends_with('0') && !s.ends_with(".0") {
            s.pop();
        }
    } else if !s.contains('.') {
        s.push_str(".0");
    }
    Ok(if r < 0.0 { format!("(- {s})") } else { s })
}

fn string_str(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}
