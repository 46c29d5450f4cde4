//! Name resolution and type checking.
//!
//! The checker rewrites the two parser-only node kinds into their resolved
//! forms (`Prop` → `Attr`/`Nav`, `Qualified` → `EnumLit`/`StaticAttr`) and
//! stamps every node with its static [`Type`]. It also builds the
//! [`OpTable`]: the typed bodies of user-defined operations, with their
//! derived `is_recursive` flags.

use std::collections::{BTreeMap, HashSet};

use super::ast::*;
use super::parser::{parse_constraint_file, parse_expression, Invariant};
use super::{FrontendError, Span};
use crate::model::{AttrType, DataModel};

/// A type-checked user-defined operation.
#[derive(Debug, Clone, PartialEq)]
pub struct OpDef {
    pub name: String,
    /// Class providing the implicit `self`.
    pub context: String,
    pub params: Vec<(String, Type)>,
    pub return_type: Type,
    pub body: Expr,
    /// True iff the call graph starting at `body` can reach `name` again.
    pub is_recursive: bool,
}

/// All user-defined operations, keyed by name. Operation names are global:
/// two classes cannot declare different operations with the same name (kept
/// simple deliberately; the labeler and the SMT emitter refer to operations
/// by bare name).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct OpTable {
    pub ops: BTreeMap<String, OpDef>,
}

impl OpTable {
    pub fn get(&self, name: &str) -> Option<&OpDef> {
        self.ops.get(name)
    }
}

/// Result of compiling a model's constraint sources: typed invariants in
/// declaration order plus the operation table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Compiled {
    pub invariants: Vec<Invariant>,
    pub ops: OpTable,
}

/// Parse and type-check a constraint file against `m`, merging in any
/// operations declared inside the model file itself.
pub fn compile(m: &DataModel, file_text: &str) -> Result<Compiled, FrontendError> {
    let file = parse_constraint_file(file_text)?;

    // Collect signatures first so operation bodies may call each other.
    struct RawOp {
        context: String,
        name: String,
        params: Vec<(String, Type)>,
        ret: Type,
        body: Expr,
    }
    let mut raws: Vec<RawOp> = Vec::new();
    let mut seen = HashSet::new();
    for decl in &m.operations {
        if !seen.insert(decl.name.clone()) {
            return Err(FrontendError::DuplicateOperation { name: decl.name.clone() });
        }
        let body = parse_expression(&decl.body)?;
        raws.push(RawOp {
            context: decl.context.clone(),
            name: decl.name.clone(),
            params: decl.params.iter().map(|p| (p.name.clone(), attr_type(&p.ty))).collect(),
            ret: attr_type(&decl.return_type),
            body,
        });
    }
    for op in &file.operations {
        if !seen.insert(op.name.clone()) {
            return Err(FrontendError::DuplicateOperation { name: op.name.clone() });
        }
        let mut params = Vec::new();
        for (pname, ptyname) in &op.params {
            let ty = resolve_primitive_name(m, ptyname).ok_or_else(|| FrontendError::Type {
                offset: op.offset,
                message: format!("unknown parameter type {ptyname} on operation {}", op.name),
            })?;
            params.push((pname.clone(), ty));
        }
        let ret = resolve_primitive_name(m, &op.return_type).ok_or_else(|| {
            FrontendError::Type {
                offset: op.offset,
                message: format!("unknown return type {} on operation {}", op.return_type, op.name),
            }
        })?;
        raws.push(RawOp {
            context: op.context.clone(),
            name: op.name.clone(),
            params,
            ret,
            body: op.body.clone(),
        });
    }

    let sigs: BTreeMap<String, OpSig> = raws
        .iter()
        .map(|r| {
            (
                r.name.clone(),
                OpSig { context: r.context.clone(), params: r.params.clone(), ret: r.ret.clone() },
            )
        })
        .collect();

    // Type-check the operation bodies.
    let mut table = OpTable::default();
    for r in &raws {
        if m.class(&r.context).is_none() {
            return Err(FrontendError::Unresolved { offset: 0, name: r.context.clone() });
        }
        let mut body = r.body.clone();
        let mut ck = Checker { m, sigs: &sigs, env: Vec::new() };
        ck.env.push(("self".into(), Type::Class(r.context.clone())));
        for (p, t) in &r.params {
            ck.env.push((p.clone(), t.clone()));
        }
        let got = ck.check(&mut body)?;
        if !ck.conforms(&got, &r.ret) {
            return Err(FrontendError::Type {
                offset: body.span.start as usize,
                message: format!(
                    "operation {} declares return type {} but its body has type {got}",
                    r.name, r.ret
                ),
            });
        }
        table.ops.insert(
            r.name.clone(),
            OpDef {
                name: r.name.clone(),
                context: r.context.clone(),
                params: r.params.clone(),
                return_type: r.ret.clone(),
                body,
                is_recursive: false, // filled below
            },
        );
    }

    // Derive is_recursive from the call graph.
    let calls: BTreeMap<String, Vec<String>> = table
        .ops
        .iter()
        .map(|(name, def)| {
            let mut callees = Vec::new();
            def.body.walk(&mut |n| {
                if let ExprKind::UserCall { op, .. } = &n.kind {
                    callees.push(op.clone());
                }
            });
            (name.clone(), callees)
        })
        .collect();
    let names: Vec<String> = table.ops.keys().cloned().collect();
    for name in names {
        let mut stack = calls.get(&name).cloned().unwrap_or_default();
        let mut visited = HashSet::new();
        let mut recursive = false;
        while let Some(next) = stack.pop() {
            if next == name {
                recursive = true;
                break;
            }
            if visited.insert(next.clone()) {
                if let Some(more) = calls.get(&next) {
                    stack.extend(more.iter().cloned());
                }
            }
        }
        table.ops.get_mut(&name).unwrap().is_recursive = recursive;
    }

    // Type-check the invariants.
    let mut invariants = Vec::new();
    let mut inv_names = HashSet::new();
    for raw in &file.invariants {
        if !inv_names.insert((raw.context.clone(), raw.name.clone())) {
            return Err(FrontendError::DuplicateInvariant {
                name: format!("{}::{}", raw.context, raw.name),
            });
        }
        if m.class(&raw.context).is_none() {
            return Err(FrontendError::Unresolved { offset: raw.offset, name: raw.context.clone() });
        }
        let mut body = raw.body.clone();
        let mut ck = Checker { m, sigs: &sigs, env: Vec::new() };
        ck.env.push(("self".into(), Type::Class(raw.context.clone())));
        let got = ck.check(&mut body)?;
        if got != Type::Boolean {
            return Err(FrontendError::Type {
                offset: body.span.start as usize,
                message: format!("invariant {} must be Boolean, found {got}", raw.name),
            });
        }
        invariants.push(Invariant { context: raw.context.clone(), name: raw.name.clone(), body });
    }

    Ok(Compiled { invariants, ops: table })
}

/// Type-check a closed formula (no `self` in scope) in place.
pub fn check_closed(e: &mut Expr, m: &DataModel, ops: &OpTable) -> Result<(), FrontendError> {
    let sigs: BTreeMap<String, OpSig> = ops
        .ops
        .iter()
        .map(|(n, d)| {
            (
                n.clone(),
                OpSig {
                    context: d.context.clone(),
                    params: d.params.clone(),
                    ret: d.return_type.clone(),
                },
            )
        })
        .collect();
    let mut ck = Checker { m, sigs: &sigs, env: Vec::new() };
    let got = ck.check(e)?;
    if got != Type::Boolean {
        return Err(FrontendError::Type {
            offset: e.span.start as usize,
            message: format!("constraint must be Boolean, found {got}"),
        });
    }
    Ok(())
}

/// Map a model attribute type to an expression type.
pub fn attr_type(t: &AttrType) -> Type {
    match t {
        AttrType::Boolean => Type::Boolean,
        AttrType::Integer => Type::Integer,
        AttrType::Real => Type::Real,
        AttrType::String => Type::String,
        AttrType::Enum(n) => Type::Enum(n.clone()),
    }
}

fn resolve_primitive_name(m: &DataModel, name: &str) -> Option<Type> {
    match name {
        "Boolean" => Some(Type::Boolean),
        "Integer" => Some(Type::Integer),
        "Real" => Some(Type::Real),
        "String" => Some(Type::String),
        _ => m.enumeration(name).map(|e| Type::Enum(e.name.clone())),
    }
}

#[derive(Debug, Clone)]
struct OpSig {
    context: String,
    params: Vec<(String, Type)>,
    ret: Type,
}

struct Checker<'a> {
    m: &'a DataModel,
    sigs: &'a BTreeMap<String, OpSig>,
    env: Vec<(String, Type)>,
}

impl<'a> Checker<'a> {
    fn lookup(&self, name: &str) -> Option<&Type> {
        self.env.iter().rev().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    fn terr(&self, span: Span, message: impl Into<String>) -> FrontendError {
        FrontendError::Type { offset: span.start as usize, message: message.into() }
    }

    /// Subtype/assignability: `Void` (null) conforms to everything,
    /// `Integer` conforms to `Real`, classes conform along inheritance,
    /// collections covariantly per kind.
    fn conforms(&self, sub: &Type, sup: &Type) -> bool {
        match (sub, sup) {
            (Type::Void, _) => true,
            (a, b) if a == b => true,
            (Type::Integer, Type::Real) => true,
            (Type::Class(a), Type::Class(b)) => self.m.conforms_class(a, b),
            (Type::Collection(ka, ea), Type::Collection(kb, eb)) => {
                ka == kb && self.conforms(ea, eb)
            }
            _ => false,
        }
    }

    /// Types whose values may be compared with `=`/`<>`.
    fn comparable(&self, a: &Type, b: &Type) -> bool {
        self.conforms(a, b)
            || self.conforms(b, a)
            || (a.is_numeric() && b.is_numeric())
            || matches!((a, b), (Type::Collection(..), Type::Collection(..)))
    }

    /// Least upper bound for `if` branches and `max`/`min`.
    fn lub(&self, a: &Type, b: &Type, span: Span) -> Result<Type, FrontendError> {
        if a == b {
            return Ok(a.clone());
        }
        if self.conforms(a, b) {
            return Ok(b.clone());
        }
        if self.conforms(b, a) {
            return Ok(a.clone());
        }
        if a.is_numeric() && b.is_numeric() {
            return Ok(Type::Real);
        }
        if let (Type::Class(ca), Type::Class(cb)) = (a, b) {
            // Nearest common superclass, if any.
            let mut cur = Some(ca.as_str());
            while let Some(name) = cur {
                if self.m.conforms_class(cb, name) {
                    return Ok(Type::Class(name.to_string()));
                }
                cur = self.m.class(name).and_then(|c| c.superclass.as_deref());
            }
        }
        Err(self.terr(span, format!("incompatible branch types {a} and {b}")))
    }

    /// View a receiver type as a collection: collections stay, anything else
    /// becomes the implicit singleton `Set` of OCL's `->` coercion.
    fn as_collection(&self, t: &Type, span: Span) -> Result<(CollKind, Type), FrontendError> {
        match t {
            Type::Collection(k, e) => Ok((*k, (**e).clone())),
            Type::Void => Err(self.terr(span, "cannot apply a collection operation to null")),
            Type::Unknown => Err(self.terr(span, "internal: unresolved receiver type")),
            other => Ok((CollKind::Set, other.clone())),
        }
    }

    fn check(&mut self, e: &mut Expr) -> Result<Type, FrontendError> {
        // The two parser-only forms are rewritten into resolved nodes, which
        // needs ownership of the kind; everything else is typed in place.
        if matches!(e.kind, ExprKind::Prop { .. } | ExprKind::Qualified { .. }) {
            return self.check_sugar(e);
        }
        let span = e.span;
        let ty = match &mut e.kind {
            ExprKind::BoolLit(_) => Type::Boolean,
            ExprKind::IntLit(_) => Type::Integer,
            ExprKind::RealLit(_) => Type::Real,
            ExprKind::StrLit(_) => Type::String,
            ExprKind::NullLit => Type::Void,
            ExprKind::EnumLit { enumeration, .. } => Type::Enum(enumeration.clone()),
            ExprKind::ObjectLit(_) | ExprKind::CollectionLit { .. } => {
                return Err(self.terr(span, "internal: literal value node in source"));
            }
            ExprKind::Var(name) => match self.lookup(name) {
                Some(t) => t.clone(),
                None => {
                    let hint = if self.m.class(name).is_some() {
                        format!("{name} (a class name is only valid before .allInstances())")
                    } else {
                        name.clone()
                    };
                    return Err(FrontendError::Unresolved {
                        offset: span.start as usize,
                        name: hint,
                    });
                }
            },
            ExprKind::Prop { .. } | ExprKind::Qualified { .. } => unreachable!("handled above"),
            ExprKind::StaticAttr { class, attr } => match self.m.attribute(class, attr) {
                Some(a) if a.is_static => attr_type(&a.ty),
                _ => {
                    return Err(FrontendError::Unresolved {
                        offset: span.start as usize,
                        name: format!("{class}::{attr}"),
                    })
                }
            },
            ExprKind::Attr { recv, attr } => {
                let rt = self.check(recv)?;
                let Type::Class(cls) = &rt else {
                    return Err(self.terr(span, format!("attribute access on non-object {rt}")));
                };
                match self.m.attribute(cls, attr) {
                    Some(a) => attr_type(&a.ty),
                    None => {
                        return Err(FrontendError::Unresolved {
                            offset: span.start as usize,
                            name: format!("{cls}.{attr}"),
                        })
                    }
                }
            }
            ExprKind::Nav { recv, role } => {
                let rt = self.check(recv)?;
                let Type::Class(cls) = &rt else {
                    return Err(self.terr(span, format!("navigation on non-object {rt}")));
                };
                match self.m.navigation(cls, role) {
                    Some((_, far, _)) => {
                        let target = Type::Class(far.class.clone());
                        if far.upper == Some(1) {
                            target
                        } else if far.ordered {
                            Type::Collection(CollKind::Sequence, Box::new(target))
                        } else {
                            Type::Collection(CollKind::Set, Box::new(target))
                        }
                    }
                    None => {
                        return Err(FrontendError::Unresolved {
                            offset: span.start as usize,
                            name: format!("{cls}.{role}"),
                        })
                    }
                }
            }
            ExprKind::AllInstances { class } => {
                if self.m.class(class).is_none() {
                    return Err(FrontendError::Unresolved {
                        offset: span.start as usize,
                        name: class.clone(),
                    });
                }
                Type::Collection(CollKind::Set, Box::new(Type::Class(class.clone())))
            }
            ExprKind::Not(x) => {
                let t = self.check(x)?;
                if t != Type::Boolean {
                    return Err(self.terr(span, format!("not needs a Boolean, found {t}")));
                }
                Type::Boolean
            }
            ExprKind::Neg(x) => {
                let t = self.check(x)?;
                if !t.is_numeric() {
                    return Err(self.terr(span, format!("unary minus needs a number, found {t}")));
                }
                t
            }
            ExprKind::Bool { lhs, rhs, .. } => {
                for side in [lhs, rhs] {
                    let t = self.check(side)?;
                    if t != Type::Boolean {
                        return Err(self.terr(
                            side.span,
                            format!("Boolean connective needs Boolean operands, found {t}"),
                        ));
                    }
                }
                Type::Boolean
            }
            ExprKind::Rel { op, lhs, rhs } => {
                let lt = self.check(lhs)?;
                let rt = self.check(rhs)?;
                match op {
                    RelOp::Eq | RelOp::Ne => {
                        if !self.comparable(&lt, &rt) {
                            return Err(self.terr(
                                span,
                                format!("cannot compare {lt} with {rt}"),
                            ));
                        }
                    }
                    _ => {
                        if !(lt.is_numeric() && rt.is_numeric()) {
                            return Err(self.terr(
                                span,
                                format!("ordering comparison needs numbers, found {lt} and {rt}"),
                            ));
                        }
                    }
                }
                Type::Boolean
            }
            ExprKind::Arith { op, lhs, rhs } => {
                let lt = self.check(lhs)?;
                let rt = self.check(rhs)?;
                if !(lt.is_numeric() && rt.is_numeric()) {
                    return Err(self.terr(
                        span,
                        format!("arithmetic needs numbers, found {lt} and {rt}"),
                    ));
                }
                if *op == ArithOp::Div || lt == Type::Real || rt == Type::Real {
                    Type::Real
                } else {
                    Type::Integer
                }
            }
            ExprKind::MethodCall { recv, op, args } => {
                let rt = self.check(recv)?;
                let mut ats = Vec::new();
                for a in args.iter_mut() {
                    ats.push(self.check(a)?);
                }
                self.method_type(*op, &rt, &ats, span)?
            }
            ExprKind::TypeCheckOp { recv, op, ty_name } => {
                let rt = self.check(recv)?;
                if self.m.class(ty_name).is_none() {
                    return Err(FrontendError::Unresolved {
                        offset: span.start as usize,
                        name: ty_name.clone(),
                    });
                }
                if !matches!(rt, Type::Class(_) | Type::Void) {
                    return Err(self.terr(
                        span,
                        format!("{} applies to objects, found {rt}", op.name()),
                    ));
                }
                match op {
                    TypeOp::IsTypeOf | TypeOp::IsKindOf => Type::Boolean,
                    TypeOp::AsType => Type::Class(ty_name.clone()),
                }
            }
            ExprKind::UserCall { recv, op, args } => {
                let rt = self.check(recv)?;
                let Some(sig) = self.sigs.get(op).cloned() else {
                    return Err(FrontendError::Unresolved {
                        offset: span.start as usize,
                        name: format!("operation {op}"),
                    });
                };
                let ok = matches!(&rt, Type::Class(c) if self.m.conforms_class(c, &sig.context));
                if !ok {
                    return Err(self.terr(
                        span,
                        format!("operation {op} is defined on {}, receiver has type {rt}", sig.context),
                    ));
                }
                if args.len() != sig.params.len() {
                    return Err(self.terr(
                        span,
                        format!("operation {op} takes {} argument(s), found {}", sig.params.len(), args.len()),
                    ));
                }
                for (a, (pname, pty)) in args.iter_mut().zip(&sig.params) {
                    let at = self.check(a)?;
                    if !self.conforms(&at, pty) {
                        return Err(self.terr(
                            a.span,
                            format!("argument {pname} of {op} needs {pty}, found {at}"),
                        ));
                    }
                }
                sig.ret.clone()
            }
            ExprKind::Iterate { recv, kind, var, body } => {
                let rt = self.check(recv)?;
                let (src_kind, elem) = self.as_collection(&rt, recv.span)?;
                self.env.push((var.clone(), elem.clone()));
                let bt = self.check(body);
                self.env.pop();
                let bt = bt?;
                match kind {
                    IterKind::ForAll | IterKind::Exists | IterKind::One => {
                        if bt != Type::Boolean {
                            return Err(self.terr(
                                body.span,
                                format!("{} body must be Boolean, found {bt}", kind.name()),
                            ));
                        }
                        Type::Boolean
                    }
                    IterKind::Select | IterKind::Reject => {
                        if bt != Type::Boolean {
                            return Err(self.terr(
                                body.span,
                                format!("{} body must be Boolean, found {bt}", kind.name()),
                            ));
                        }
                        Type::Collection(src_kind, Box::new(elem))
                    }
                    IterKind::Collect => {
                        if bt.is_collection() {
                            return Err(self.terr(
                                body.span,
                                "collect over collection-valued bodies (flattening) is not supported",
                            ));
                        }
                        let out_kind = match src_kind {
                            CollKind::Sequence | CollKind::OrderedSet => CollKind::Sequence,
                            _ => CollKind::Bag,
                        };
                        Type::Collection(out_kind, Box::new(bt))
                    }
                    IterKind::IsUnique => {
                        if bt.is_collection() {
                            return Err(self.terr(
                                body.span,
                                "isUnique over collection-valued bodies is not supported",
                            ));
                        }
                        Type::Boolean
                    }
                }
            }
            ExprKind::CollectionOp { recv, op, args } => {
                let rt = self.check(recv)?;
                let (kind, elem) = self.as_collection(&rt, recv.span)?;
                let mut ats = Vec::new();
                for a in args.iter_mut() {
                    ats.push(self.check(a)?);
                }
                self.collection_op_type(*op, kind, &elem, &ats, args, span)?
            }
            ExprKind::If { cond, then_branch, else_branch } => {
                let ct = self.check(cond)?;
                if ct != Type::Boolean {
                    return Err(self.terr(cond.span, format!("if condition must be Boolean, found {ct}")));
                }
                let tt = self.check(then_branch)?;
                let et = self.check(else_branch)?;
                self.lub(&tt, &et, span)?
            }
            ExprKind::Let { var, ann, init, body } => {
                let it = self.check(init)?;
                if let Some(ann_name) = ann {
                    let want = resolve_type_name_full(self.m, ann_name).ok_or_else(|| {
                        FrontendError::Unresolved {
                            offset: span.start as usize,
                            name: ann_name.clone(),
                        }
                    })?;
                    if !self.conforms(&it, &want) {
                        return Err(self.terr(
                            init.span,
                            format!("let {var} : {want} initialized with {it}"),
                        ));
                    }
                }
                self.env.push((var.clone(), it));
                let bt = self.check(body);
                self.env.pop();
                bt?
            }
        };
        e.ty = ty.clone();
        Ok(ty)
    }

    /// Resolve `recv.name` into attribute access or navigation, and
    /// `Space::name` into an enum literal or static attribute reference.
    fn check_sugar(&mut self, e: &mut Expr) -> Result<Type, FrontendError> {
        let span = e.span;
        let kind = std::mem::replace(&mut e.kind, ExprKind::NullLit);
        let (kind, ty) = match kind {
            ExprKind::Prop { mut recv, name } => {
                let rt = self.check(&mut recv)?;
                let Type::Class(cls) = &rt else {
                    return Err(self.terr(
                        span,
                        format!("property access .{name} needs an object receiver, found {rt}"),
                    ));
                };
                if let Some(a) = self.m.attribute(cls, &name) {
                    if a.is_static {
                        return Err(self.terr(
                            span,
                            format!("{cls}::{name} is static; write {cls}::{name} instead of navigating to it"),
                        ));
                    }
                    let t = attr_type(&a.ty);
                    (ExprKind::Attr { recv, attr: name }, t)
                } else if let Some((_, far, _)) = self.m.navigation(cls, &name) {
                    let target = Type::Class(far.class.clone());
                    let t = if far.upper == Some(1) {
                        target
                    } else if far.ordered {
                        Type::Collection(CollKind::Sequence, Box::new(target))
                    } else {
                        Type::Collection(CollKind::Set, Box::new(target))
                    };
                    (ExprKind::Nav { recv, role: name }, t)
                } else {
                    return Err(FrontendError::Unresolved {
                        offset: span.start as usize,
                        name: format!("{cls}.{name}"),
                    });
                }
            }
            ExprKind::Qualified { space, name } => {
                if let Some(en) = self.m.enumeration(&space) {
                    if !en.literals.contains(&name) {
                        return Err(FrontendError::Unresolved {
                            offset: span.start as usize,
                            name: format!("{space}::{name} (no such literal)"),
                        });
                    }
                    let t = Type::Enum(space.clone());
                    (ExprKind::EnumLit { enumeration: space, literal: name }, t)
                } else if self.m.class(&space).is_some() {
                    match self.m.attribute(&space, &name) {
                        Some(a) if a.is_static => {
                            let t = attr_type(&a.ty);
                            (ExprKind::StaticAttr { class: space, attr: name }, t)
                        }
                        Some(_) => {
                            return Err(self.terr(
                                span,
                                format!("{space}::{name} is not static; access it via an object"),
                            ))
                        }
                        None => {
                            return Err(FrontendError::Unresolved {
                                offset: span.start as usize,
                                name: format!("{space}::{name}"),
                            })
                        }
                    }
                } else {
                    return Err(FrontendError::Unresolved {
                        offset: span.start as usize,
                        name: space,
                    });
                }
            }
            _ => unreachable!(),
        };
        e.kind = kind;
        e.ty = ty.clone();
        Ok(ty)
    }

    fn method_type(
        &self,
        op: MethodOp,
        recv: &Type,
        args: &[Type],
        span: Span,
    ) -> Result<Type, FrontendError> {
        use MethodOp::*;
        let num = |t: &Type| t.is_numeric();
        let want = |ok: bool, msg: &str| -> Result<(), FrontendError> {
            if ok {
                Ok(())
            } else {
                Err(self.terr(span, msg.to_string()))
            }
        };
        Ok(match op {
            Div | Mod => {
                want(
                    *recv == Type::Integer && args[0] == Type::Integer,
                    &format!("{} needs Integer operands", op.name()),
                )?;
                Type::Integer
            }
            Abs => {
                want(num(recv), "abs needs a number")?;
                recv.clone()
            }
            Max | Min => {
                want(num(recv) && num(&args[0]), &format!("{} needs numbers", op.name()))?;
                if *recv == Type::Real || args[0] == Type::Real {
                    Type::Real
                } else {
                    Type::Integer
                }
            }
            Floor | Ceil | Round => {
                want(num(recv), &format!("{} needs a number", op.name()))?;
                Type::Integer
            }
            ToInteger => {
                want(*recv == Type::String, "toInteger needs a String receiver")?;
                Type::Integer
            }
            ToReal => {
                want(num(recv), "toReal needs a number")?;
                Type::Real
            }
            StrSize => {
                want(*recv == Type::String, "size() with dot syntax needs a String; use ->size() on collections")?;
                Type::Integer
            }
            Concat => {
                want(
                    *recv == Type::String && args[0] == Type::String,
                    "concat needs String operands",
                )?;
                Type::String
            }
            Substring => {
                want(
                    *recv == Type::String && args[0] == Type::Integer && args[1] == Type::Integer,
                    "substring needs (String receiver, Integer, Integer)",
                )?;
                Type::String
            }
            OclIsUndefined | OclIsInvalid => Type::Boolean,
        })
    }

    fn collection_op_type(
        &self,
        op: CollOp,
        kind: CollKind,
        elem: &Type,
        args: &[Type],
        arg_nodes: &[Expr],
        span: Span,
    ) -> Result<Type, FrontendError> {
        use CollOp::*;
        let positional = matches!(kind, CollKind::Sequence | CollKind::OrderedSet);
        Ok(match op {
            Size => Type::Integer,
            IsEmpty | NotEmpty => Type::Boolean,
            Includes | Excludes | Count => {
                if !self.comparable(&args[0], elem) {
                    return Err(self.terr(
                        arg_nodes[0].span,
                        format!("{} argument type {} does not match element type {elem}", op.name(), args[0]),
                    ));
                }
                if op == Count {
                    Type::Integer
                } else {
                    Type::Boolean
                }
            }
            IncludesAll | ExcludesAll => {
                let Type::Collection(_, other_elem) = &args[0] else {
                    return Err(self.terr(
                        arg_nodes[0].span,
                        format!("{} needs a collection argument", op.name()),
                    ));
                };
                if !self.comparable(other_elem, elem) {
                    return Err(self.terr(
                        arg_nodes[0].span,
                        format!("{} element types {} and {elem} are incomparable", op.name(), other_elem),
                    ));
                }
                Type::Boolean
            }
            Sum => {
                if !elem.is_numeric() {
                    return Err(self.terr(span, format!("sum needs numeric elements, found {elem}")));
                }
                elem.clone()
            }
            At => {
                if !positional {
                    return Err(self.terr(span, "at() needs an ordered collection"));
                }
                if args[0] != Type::Integer {
                    return Err(self.terr(arg_nodes[0].span, "at() needs an Integer index"));
                }
                elem.clone()
            }
            IndexOf => {
                if !positional {
                    return Err(self.terr(span, "indexOf() needs an ordered collection"));
                }
                if !self.comparable(&args[0], elem) {
                    return Err(self.terr(
                        arg_nodes[0].span,
                        format!("indexOf argument type {} does not match element type {elem}", args[0]),
                    ));
                }
                Type::Integer
            }
            First => {
                if !positional {
                    return Err(self.terr(span, "first() needs an ordered collection"));
                }
                elem.clone()
            }
            AsSet => Type::Collection(CollKind::Set, Box::new(elem.clone())),
            AsSequence => Type::Collection(CollKind::Sequence, Box::new(elem.clone())),
        })
    }
}

fn resolve_type_name_full(m: &DataModel, name: &str) -> Option<Type> {
    resolve_primitive_name(m, name).or_else(|| m.class(name).map(|c| Type::Class(c.name.clone())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        AssocDecl, AssocEnd, AttrDecl, ClassDecl, DataModel, EnumDecl, ParamDecl, UserOpDecl, Value,
    };

    fn end(class: &str, role: &str, lower: u32, upper: Option<u32>, ordered: bool) -> AssocEnd {
        AssocEnd {
            class: class.into(),
            role_name: role.into(),
            lower,
            upper,
            ordered,
        }
    }

    fn fixture() -> DataModel {
        DataModel {
            classes: vec![
                ClassDecl {
                    name: "A".into(),
                    is_abstract: false,
                    superclass: None,
                    attributes: vec![
                        AttrDecl {
                            name: "x".into(),
                            ty: AttrType::Integer,
                            is_static: false,
                            constant: None,
                        },
                        AttrDecl {
                            name: "r".into(),
                            ty: AttrType::Real,
                            is_static: false,
                            constant: None,
                        },
                        AttrDecl {
                            name: "color".into(),
                            ty: AttrType::Enum("Color".into()),
                            is_static: false,
                            constant: None,
                        },
                        AttrDecl {
                            name: "K".into(),
                            ty: AttrType::Integer,
                            is_static: true,
                            constant: Some(Value::Integer(7)),
                        },
                    ],
                },
                ClassDecl {
                    name: "B".into(),
                    is_abstract: false,
                    superclass: Some("A".into()),
                    attributes: vec![],
                },
            ],
            associations: vec![
                AssocDecl {
                    name: "owns".into(),
                    end_a: end("A", "a", 0, Some(1), false),
                    end_b: end("B", "bs", 0, None, false),
                },
                AssocDecl {
                    name: "queues".into(),
                    end_a: end("A", "owner", 0, Some(1), false),
                    end_b: end("B", "seq", 0, None, true),
                },
            ],
            enumerations: vec![EnumDecl {
                name: "Color".into(),
                literals: vec!["Red".into(), "Green".into()],
            }],
            operations: vec![
                UserOpDecl {
                    name: "double".into(),
                    context: "A".into(),
                    params: vec![ParamDecl { name: "n".into(), ty: AttrType::Integer }],
                    return_type: AttrType::Integer,
                    body: "n + n".into(),
                },
                UserOpDecl {
                    name: "fact".into(),
                    context: "A".into(),
                    params: vec![ParamDecl { name: "n".into(), ty: AttrType::Integer }],
                    return_type: AttrType::Integer,
                    body: "if n <= 1 then 1 else n * self.fact(n - 1) endif".into(),
                },
            ],
        }
    }

    fn compile_inv(src: &str) -> Result<Compiled, FrontendError> {
        compile(&fixture(), src)
    }

    fn first_body(src: &str) -> Expr {
        compile_inv(src).expect("compiles").invariants.remove(0).body
    }

    #[test]
    fn resolves_attribute_and_navigation() {
        let c = compile_inv("context A inv i: self.x > 0 and self.bs->notEmpty()").unwrap();
        let body = &c.invariants[0].body;
        let mut saw_attr = false;
        let mut saw_nav = false;
        body.walk(&mut |n| match &n.kind {
            ExprKind::Attr { attr, .. } if attr == "x" => {
                assert_eq!(n.ty, Type::Integer);
                saw_attr = true;
            }
            ExprKind::Nav { role, .. } if role == "bs" => {
                assert_eq!(
                    n.ty,
                    Type::Collection(CollKind::Set, Box::new(Type::Class("B".into())))
                );
                saw_nav = true;
            }
            _ => {}
        });
        assert!(saw_attr && saw_nav);
    }

    #[test]
    fn resolves_enum_literal_and_static_attribute() {
        let c = compile_inv("context A inv i: self.color = Color::Red or A::K > 3").unwrap();
        let body = &c.invariants[0].body;
        let mut saw_enum = false;
        let mut saw_static = false;
        body.walk(&mut |n| match &n.kind {
            ExprKind::EnumLit { enumeration, literal } => {
                assert_eq!((enumeration.as_str(), literal.as_str()), ("Color", "Red"));
                saw_enum = true;
            }
            ExprKind::StaticAttr { class, attr } => {
                assert_eq!((class.as_str(), attr.as_str()), ("A", "K"));
                assert_eq!(n.ty, Type::Integer);
                saw_static = true;
            }
            _ => {}
        });
        assert!(saw_enum && saw_static);
    }

    #[test]
    fn numeric_typing_rules() {
        // `/` is Real even on Integer operands; comparing with a Real is fine.
        compile_inv("context A inv i: self.x / 2 = 3.5").unwrap();
        // Integer div stays Integer.
        let body = first_body("context A inv i: self.x.div(2) = 3");
        let mut ok = false;
        body.walk(&mut |n| {
            if let ExprKind::MethodCall { op: MethodOp::Div, .. } = n.kind {
                assert_eq!(n.ty, Type::Integer);
                ok = true;
            }
        });
        assert!(ok);
        // div on a Real receiver is rejected.
        let err = compile_inv("context A inv i: self.r.div(2) = 3").unwrap_err();
        assert!(matches!(err, FrontendError::Type { .. }), "{err}");
    }

    #[test]
    fn singleton_coercion_for_arrow_ops() {
        // `self.a` on a B has multiplicity 0..1, so its static type is the
        // object type; `->size()` still works through the implicit Set view.
        compile_inv("context B inv i: self.a->size() <= 1").unwrap();
        compile_inv("context B inv i: self.a->notEmpty() implies self.a.x > 0").unwrap();
    }

    #[test]
    fn collect_result_kinds() {
        let body = first_body("context A inv i: self.bs->collect(b | b.x)->sum() > 0");
        let mut ok = false;
        body.walk(&mut |n| {
            if let ExprKind::Iterate { kind: IterKind::Collect, .. } = n.kind {
                assert_eq!(n.ty, Type::Collection(CollKind::Bag, Box::new(Type::Integer)));
                ok = true;
            }
        });
        assert!(ok);
        let body = first_body("context A inv i: self.seq->collect(b | b.x)->size() > 0");
        let mut ok = false;
        body.walk(&mut |n| {
            if let ExprKind::Iterate { kind: IterKind::Collect, .. } = n.kind {
                assert_eq!(n.ty, Type::Collection(CollKind::Sequence, Box::new(Type::Integer)));
                ok = true;
            }
        });
        assert!(ok);
    }

    #[test]
    fn iterator_bodies_must_be_boolean() {
        let err = compile_inv("context A inv i: self.bs->forAll(b | b.x)").unwrap_err();
        assert!(err.to_string().contains("forAll body must be Boolean"), "{err}");
    }

    #[test]
    fn object_comparisons() {
        compile_inv("context B inv i: self.a = self.a").unwrap();
        compile_inv("context B inv i: self.a <> null").unwrap();
        let err = compile_inv("context B inv i: self.a < self.a").unwrap_err();
        assert!(err.to_string().contains("ordering comparison"), "{err}");
    }

    #[test]
    fn positional_ops_require_ordered_collections() {
        compile_inv("context A inv i: self.seq->at(1).x > 0").unwrap();
        compile_inv("context A inv i: self.seq->first().x > 0").unwrap();
        let err = compile_inv("context A inv i: self.bs->at(1).x > 0").unwrap_err();
        assert!(err.to_string().contains("ordered"), "{err}");
    }

    #[test]
    fn recursion_flags() {
        let c = compile_inv("context A inv i: self.double(2) = 4").unwrap();
        assert!(!c.ops.get("double").unwrap().is_recursive);
        assert!(c.ops.get("fact").unwrap().is_recursive);
    }

    #[test]
    fn mutual_recursion_is_flagged() {
        let src = "\
context A::isEven(n : Integer) : Boolean body: if n = 0 then true else self.isOdd(n - 1) endif
context A::isOdd(n : Integer) : Boolean body: if n = 0 then false else self.isEven(n - 1) endif
context A inv i: self.isEven(self.x)";
        let c = compile_inv(src).unwrap();
        assert!(c.ops.get("isEven").unwrap().is_recursive);
        assert!(c.ops.get("isOdd").unwrap().is_recursive);
        assert!(!c.ops.get("double").unwrap().is_recursive);
    }

    #[test]
    fn duplicate_operation_rejected() {
        let src = "context A::double(n : Integer) : Integer body: n * 2";
        let err = compile_inv(src).unwrap_err();
        assert!(matches!(err, FrontendError::DuplicateOperation { .. }), "{err}");
    }

    #[test]
    fn duplicate_invariant_rejected() {
        let err =
            compile_inv("context A inv i: true inv i: false").unwrap_err();
        assert!(matches!(err, FrontendError::DuplicateInvariant { .. }), "{err}");
    }

    #[test]
    fn invariant_must_be_boolean() {
        let err = compile_inv("context A inv i: self.x").unwrap_err();
        assert!(err.to_string().contains("must be Boolean"), "{err}");
    }

    #[test]
    fn unknown_names_are_unresolved() {
        assert!(matches!(
            compile_inv("context A inv i: self.nope > 0").unwrap_err(),
            FrontendError::Unresolved { .. }
        ));
        assert!(matches!(
            compile_inv("context A inv i: self.color = Color::Blue").unwrap_err(),
            FrontendError::Unresolved { .. }
        ));
        assert!(matches!(
            compile_inv("context Nope inv i: true").unwrap_err(),
            FrontendError::Unresolved { .. }
        ));
    }

    #[test]
    fn let_annotation_checked() {
        compile_inv("context A inv i: let y : Integer = self.x in y > 0").unwrap();
        let err =
            compile_inv("context A inv i: let y : Boolean = self.x in y").unwrap_err();
        assert!(matches!(err, FrontendError::Type { .. }), "{err}");
    }

    #[test]
    fn operation_return_type_enforced() {
        let mut m = fixture();
        m.operations.push(UserOpDecl {
            name: "bad".into(),
            context: "A".into(),
            params: vec![],
            return_type: AttrType::Boolean,
            body: "self.x + 1".into(),
        });
        let err = compile(&m, "context A inv i: true").unwrap_err();
        assert!(err.to_string().contains("return type"), "{err}");
    }

    #[test]
    fn user_call_argument_types_enforced() {
        compile_inv("context A inv i: self.double(self.x) > 0").unwrap();
        let err = compile_inv("context A inv i: self.double(true) > 0").unwrap_err();
        assert!(err.to_string().contains("argument"), "{err}");
        let err = compile_inv("context A inv i: self.double(1, 2) > 0").unwrap_err();
        assert!(err.to_string().contains("argument"), "{err}");
    }

    #[test]
    fn check_closed_rejects_free_self() {
        let mut e = parse_expression("self.x > 0").unwrap();
        let err = check_closed(&mut e, &fixture(), &OpTable::default()).unwrap_err();
        assert!(matches!(err, FrontendError::Unresolved { .. }), "{err}");
    }
}
