//! The typed expression tree shared by every stage of the pipeline.
//!
//! A node carries its kind, a resolved static [`Type`] (filled by the type
//! checker; `Type::Unknown` before), an optional delegation [`Label`] (filled
//! by the labeling pass, `None` on constants), and a source [`Span`].
//!
//! Two node kinds never come out of the parser: [`ExprKind::ObjectLit`] and
//! [`ExprKind::CollectionLit`] are synthesized when quantifiers are expanded
//! over a concrete instance model and when search-owned subformulas are
//! substituted by their evaluated values.

use super::Span;
use crate::model::ObjectId;

pub use crate::model::CollKind;

/// Delegation decision for a subformula: which engine may act on it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    /// Only local search over the object graph may affect this node.
    Search,
    /// Only the SMT solver may affect this node.
    Smt,
    /// Both engines may affect it (attributes under existential choice).
    Both,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Label::Search => f.write_str("search"),
            Label::Smt => f.write_str("smt"),
            Label::Both => f.write_str("both"),
        }
    }
}

/// Static type of an expression.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Type {
    Boolean,
    Integer,
    Real,
    String,
    Enum(String),
    Class(String),
    Collection(CollKind, Box<Type>),
    /// Type of the `null` literal; conforms to everything.
    Void,
    /// Not yet type-checked.
    Unknown,
}

impl Type {
    pub fn is_numeric(&self) -> bool {
        matches!(self, Type::Integer | Type::Real)
    }
    pub fn is_primitive(&self) -> bool {
        matches!(self, Type::Boolean | Type::Integer | Type::Real | Type::String | Type::Enum(_))
    }
    pub fn is_collection(&self) -> bool {
        matches!(self, Type::Collection(..))
    }
    /// Element type if this is a collection, else the type itself (the
    /// implicit singleton view used by `->` operations).
    pub fn element(&self) -> &Type {
        match self {
            Type::Collection(_, t) => t,
            t => t,
        }
    }
}

impl std::fmt::Display for Type {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Type::Boolean => f.write_str("Boolean"),
            Type::Integer => f.write_str("Integer"),
            Type::Real => f.write_str("Real"),
            Type::String => f.write_str("String"),
            Type::Enum(n) | Type::Class(n) => f.write_str(n),
            Type::Collection(k, t) => write!(f, "{k:?}({t})"),
            Type::Void => f.write_str("OclVoid"),
            Type::Unknown => f.write_str("?"),
        }
    }
}

/// Binary Boolean connectives. `Implies` and `Xor` are eliminated by the
/// normal-form pipeline; `And`/`Or` survive to the end.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoolOp {
    And,
    Or,
    Xor,
    Implies,
}

/// Relational operators (equality and ordering).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RelOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl RelOp {
    /// The operator `not (a op b)` rewrites to in two-valued logic; also
    /// exact under null/invalid propagation, since both sides go invalid
    /// together.
    pub fn complement(self) -> RelOp {
        match self {
            RelOp::Eq => RelOp::Ne,
            RelOp::Ne => RelOp::Eq,
            RelOp::Lt => RelOp::Ge,
            RelOp::Le => RelOp::Gt,
            RelOp::Gt => RelOp::Le,
            RelOp::Ge => RelOp::Lt,
        }
    }
}

/// Infix arithmetic. `/` is real division; integer `div`/`mod` are method
/// calls ([`MethodOp::Div`], [`MethodOp::Mod`]).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Built-in operations invoked with dot syntax, e.g. `a.max(b)`,
/// `s.substring(1, 3)`, `x.oclIsUndefined()`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MethodOp {
    Div,
    Mod,
    Abs,
    Max,
    Min,
    Floor,
    Ceil,
    Round,
    ToInteger,
    ToReal,
    /// `s.size()` on a String.
    StrSize,
    Concat,
    Substring,
    OclIsUndefined,
    OclIsInvalid,
}

impl MethodOp {
    pub fn name(self) -> &'static str {
        match self {
            MethodOp::Div => "div",
            MethodOp::Mod => "mod",
            MethodOp::Abs => "abs",
            MethodOp::Max => "max",
            MethodOp::Min => "min",
            MethodOp::Floor => "floor",
            MethodOp::Ceil => "ceil",
            MethodOp::Round => "round",
            MethodOp::ToInteger => "toInteger",
            MethodOp::ToReal => "toReal",
            MethodOp::StrSize => "size",
            MethodOp::Concat => "concat",
            MethodOp::Substring => "substring",
            MethodOp::OclIsUndefined => "oclIsUndefined",
            MethodOp::OclIsInvalid => "oclIsInvalid",
        }
    }
}

/// Type introspection and casting.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TypeOp {
    IsTypeOf,
    IsKindOf,
    AsType,
}

impl TypeOp {
    pub fn name(self) -> &'static str {
        match self {
            TypeOp::IsTypeOf => "oclIsTypeOf",
            TypeOp::IsKindOf => "oclIsKindOf",
            TypeOp::AsType => "oclAsType",
        }
    }
}

/// Iterator expressions with an explicit iterator variable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterKind {
    ForAll,
    Exists,
    Select,
    Reject,
    Collect,
    IsUnique,
    One,
}

impl IterKind {
    pub fn name(self) -> &'static str {
        match self {
            IterKind::ForAll => "forAll",
            IterKind::Exists => "exists",
            IterKind::Select => "select",
            IterKind::Reject => "reject",
            IterKind::Collect => "collect",
            IterKind::IsUnique => "isUnique",
            IterKind::One => "one",
        }
    }
}

/// Collection operations invoked with arrow syntax, e.g. `c->size()`,
/// `c->includes(x)`, `s->at(2)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollOp {
    Size,
    IsEmpty,
    NotEmpty,
    Includes,
    Excludes,
    IncludesAll,
    ExcludesAll,
    Count,
    Sum,
    At,
    IndexOf,
    AsSet,
    AsSequence,
    First,
}

impl CollOp {
    pub fn name(self) -> &'static str {
        match self {
            CollOp::Size => "size",
            CollOp::IsEmpty => "isEmpty",
            CollOp::NotEmpty => "notEmpty",
            CollOp::Includes => "includes",
            CollOp::Excludes => "excludes",
            CollOp::IncludesAll => "includesAll",
            CollOp::ExcludesAll => "excludesAll",
            CollOp::Count => "count",
            CollOp::Sum => "sum",
            CollOp::At => "at",
            CollOp::IndexOf => "indexOf",
            CollOp::AsSet => "asSet",
            CollOp::AsSequence => "asSequence",
            CollOp::First => "first",
        }
    }
    pub fn arity(self) -> usize {
        match self {
            CollOp::Size
            | CollOp::IsEmpty
            | CollOp::NotEmpty
            | CollOp::Sum
            | CollOp::AsSet
            | CollOp::AsSequence
            | CollOp::First => 0,
            CollOp::Includes
            | CollOp::Excludes
            | CollOp::IncludesAll
            | CollOp::ExcludesAll
            | CollOp::Count
            | CollOp::At
            | CollOp::IndexOf => 1,
        }
    }
}

/// The node kinds of the expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    BoolLit(bool),
    IntLit(i64),
    RealLit(f64),
    StrLit(String),
    EnumLit { enumeration: String, literal: String },
    NullLit,
    /// Synthesized: a concrete object of the current instance model.
    ObjectLit(ObjectId),
    /// Synthesized: an evaluated collection value as a literal.
    CollectionLit { kind: CollKind, elements: Vec<Expr> },
    Var(String),
    /// `Class::attr` where the attribute is static (a named constant).
    StaticAttr { class: String, attr: String },
    /// Parser-only: `recv.name` before the type checker resolves it into
    /// [`ExprKind::Attr`] or [`ExprKind::Nav`].
    Prop { recv: Box<Expr>, name: String },
    /// Parser-only: `Space::name` before the type checker resolves it into
    /// [`ExprKind::EnumLit`] or [`ExprKind::StaticAttr`].
    Qualified { space: String, name: String },
    /// `recv.attr` where `attr` is a declared attribute.
    Attr { recv: Box<Expr>, attr: String },
    /// `recv.role` where `role` is an association end.
    Nav { recv: Box<Expr>, role: String },
    /// `Class.allInstances()`.
    AllInstances { class: String },
    Not(Box<Expr>),
    Neg(Box<Expr>),
    Bool { op: BoolOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Rel { op: RelOp, lhs: Box<Expr>, rhs: Box<Expr> },
    Arith { op: ArithOp, lhs: Box<Expr>, rhs: Box<Expr> },
    MethodCall { recv: Box<Expr>, op: MethodOp, args: Vec<Expr> },
    TypeCheckOp { recv: Box<Expr>, op: TypeOp, ty_name: String },
    /// Call of a user-defined operation: `recv.op(args)`.
    UserCall { recv: Box<Expr>, op: String, args: Vec<Expr> },
    Iterate { recv: Box<Expr>, kind: IterKind, var: String, body: Box<Expr> },
    CollectionOp { recv: Box<Expr>, op: CollOp, args: Vec<Expr> },
    If { cond: Box<Expr>, then_branch: Box<Expr>, else_branch: Box<Expr> },
    Let { var: String, ann: Option<String>, init: Box<Expr>, body: Box<Expr> },
}

/// An expression node. Equality compares the tree structure only (kinds and
/// children), ignoring spans, inferred types and labels — this is the
/// "structural equality" used by round-trip tests.
#[derive(Debug, Clone)]
pub struct Expr {
    pub kind: ExprKind,
    pub ty: Type,
    pub label: Option<Label>,
    pub span: Span,
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
    }
}

impl Expr {
    /// A node fresh out of the parser or a transformation, not yet typed.
    pub fn untyped(kind: ExprKind) -> Expr {
        Expr { kind, ty: Type::Unknown, label: None, span: Span::SYNTH }
    }

    pub fn new(kind: ExprKind, span: Span) -> Expr {
        Expr { kind, ty: Type::Unknown, label: None, span }
    }

    pub fn typed(kind: ExprKind, ty: Type) -> Expr {
        Expr { kind, ty, label: None, span: Span::SYNTH }
    }

    pub fn with_label(mut self, label: Option<Label>) -> Expr {
        self.label = label;
        self
    }

    /// Immutable children, in syntactic order.
    pub fn children(&self) -> Vec<&Expr> {
        use ExprKind::*;
        match &self.kind {
            BoolLit(_) | IntLit(_) | RealLit(_) | StrLit(_) | EnumLit { .. } | NullLit
            | ObjectLit(_) | Var(_) | StaticAttr { .. } | Qualified { .. }
            | AllInstances { .. } => vec![],
            CollectionLit { elements, .. } => elements.iter().collect(),
            Attr { recv, .. } | Nav { recv, .. } | Prop { recv, .. } | Not(recv) | Neg(recv)
            | TypeCheckOp { recv, .. } => {
                vec![recv]
            }
            Bool { lhs, rhs, .. } | Rel { lhs, rhs, .. } | Arith { lhs, rhs, .. } => {
                vec![lhs, rhs]
            }
            MethodCall { recv, args, .. }
            | UserCall { recv, args, .. }
            | CollectionOp { recv, args, .. } => {
                let mut v = vec![recv.as_ref()];
                v.extend(args.iter());
                v
            }
            Iterate { recv, body, .. } => vec![recv, body],
            If { cond, then_branch, else_branch } => vec![cond, then_branch, else_branch],
            Let { init, body, .. } => vec![init, body],
        }
    }

    /// Mutable children, in syntactic order.
    pub fn children_mut(&mut self) -> Vec<&mut Expr> {
        use ExprKind::*;
        match &mut self.kind {
            BoolLit(_) | IntLit(_) | RealLit(_) | StrLit(_) | EnumLit { .. } | NullLit
            | ObjectLit(_) | Var(_) | StaticAttr { .. } | Qualified { .. }
            | AllInstances { .. } => vec![],
            CollectionLit { elements, .. } => elements.iter_mut().collect(),
            Attr { recv, .. } | Nav { recv, .. } | Prop { recv, .. } | Not(recv) | Neg(recv)
            | TypeCheckOp { recv, .. } => {
                vec![recv.as_mut()]
            }
            Bool { lhs, rhs, .. } | Rel { lhs, rhs, .. } | Arith { lhs, rhs, .. } => {
                vec![lhs.as_mut(), rhs.as_mut()]
            }
            MethodCall { recv, args, .. }
            | UserCall { recv, args, .. }
            | CollectionOp { recv, args, .. } => {
                let mut v = vec![recv.as_mut()];
                v.extend(args.iter_mut());
                v
            }
            Iterate { recv, body, .. } => vec![recv.as_mut(), body.as_mut()],
            If { cond, then_branch, else_branch } => {
                vec![cond.as_mut(), then_branch.as_mut(), else_branch.as_mut()]
            }
            Let { init, body, .. } => vec![init.as_mut(), body.as_mut()],
        }
    }

    /// Pre-order walk over the whole tree.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Expr)) {
        f(self);
        for c in self.children() {
            c.walk(f);
        }
    }

    /// Number of nodes in the tree (used by the blow-up guard).
    pub fn node_count(&self) -> usize {
        let mut n = 0;
        self.walk(&mut |_| n += 1);
        n
    }

    /// True for nodes that represent constants (never labeled).
    pub fn is_constant(&self) -> bool {
        matches!(
            self.kind,
            ExprKind::BoolLit(_)
                | ExprKind::IntLit(_)
                | ExprKind::RealLit(_)
                | ExprKind::StrLit(_)
                | ExprKind::EnumLit { .. }
                | ExprKind::NullLit
                | ExprKind::ObjectLit(_)
                | ExprKind::StaticAttr { .. }
        )
    }

    /// Convenience constructors used by the rewriting passes.
    pub fn bool_lit(v: bool) -> Expr {
        Expr::typed(ExprKind::BoolLit(v), Type::Boolean)
    }

    pub fn and(lhs: Expr, rhs: Expr) -> Expr {
        Expr::typed(
            ExprKind::Bool { op: BoolOp::And, lhs: Box::new(lhs), rhs: Box::new(rhs) },
            Type::Boolean,
        )
    }

    pub fn or(lhs: Expr, rhs: Expr) -> Expr {
        Expr::typed(
            ExprKind::Bool { op: BoolOp::Or, lhs: Box::new(lhs), rhs: Box::new(rhs) },
            Type::Boolean,
        )
    }

    pub fn not(e: Expr) -> Expr {
        Expr::typed(ExprKind::Not(Box::new(e)), Type::Boolean)
    }

    /// Right-nested conjunction of one or more formulas.
    pub fn conjoin_all(mut parts: Vec<Expr>) -> Option<Expr> {
        let last = parts.pop()?;
        Some(parts.into_iter().rev().fold(last, |acc, p| Expr::and(p, acc)))
    }
}
