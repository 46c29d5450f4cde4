//! Recursive-descent parser. Produces an *untyped* tree; name resolution and
//! typing happen in [`super::types`].
//!
//! Precedence, loosest to tightest: `implies` (right-associative) → `xor` →
//! `or` → `and` → `=`/`<>` → `<`/`<=`/`>`/`>=` → `+`/`-` → `*`/`/` → unary
//! `not`/`-` → postfix (`.`, `->`).

use super::ast::*;
use super::lexer::{lex, Tok, Token};
use super::{FrontendError, Span};

/// An invariant as written: context class, name, and its (untyped) body.
#[derive(Debug, Clone, PartialEq)]
pub struct RawInvariant {
    pub context: String,
    pub name: String,
    pub body: Expr,
    pub offset: usize,
}

/// An operation definition as written in a constraint file:
/// `context <Class>::<op>(<params>): <type> body: <expr>`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawOperation {
    pub context: String,
    pub name: String,
    /// Parameter names with their *type names* (resolved later).
    pub params: Vec<(String, String)>,
    pub return_type: String,
    pub body: Expr,
    pub offset: usize,
}

/// Everything in one constraint file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintFile {
    pub invariants: Vec<RawInvariant>,
    pub operations: Vec<RawOperation>,
}

/// Typed invariant (exported here for convenience; produced by the type
/// checker).
#[derive(Debug, Clone, PartialEq)]
pub struct Invariant {
    pub context: String,
    pub name: String,
    pub body: Expr,
}

/// Parse a single expression (no `context` header). Used for inline
/// constraints such as the non-emptiness formula.
pub fn parse_expression(text: &str) -> Result<Expr, FrontendError> {
    let tokens = lex(text)?;
    let mut p = Parser { toks: &tokens, pos: 0 };
    let e = p.expr()?;
    p.expect_eof()?;
    Ok(e)
}

/// Parse a whole constraint file: invariant blocks and operation bodies.
pub fn parse_constraint_file(text: &str) -> Result<ConstraintFile, FrontendError> {
    let tokens = lex(text)?;
    let mut p = Parser { toks: &tokens, pos: 0 };
    let mut out = ConstraintFile::default();
    while !p.at(&Tok::Eof) {
        p.expect(&Tok::KwContext, "a `context` block")?;
        let ctx_off = p.peek_offset();
        let context = p.ident("context class name")?;
        if p.eat(&Tok::ColonColon) {
            // Operation definition.
            let name = p.ident("operation name")?;
            p.expect(&Tok::LParen, "`(` after operation name")?;
            let mut params = Vec::new();
            if !p.at(&Tok::RParen) {
                loop {
                    let pname = p.ident("parameter name")?;
                    p.expect(&Tok::Colon, "`:` after parameter name")?;
                    let pty = p.ident("parameter type")?;
                    params.push((pname, pty));
                    if !p.eat(&Tok::Comma) {
                        break;
                    }
                }
            }
            p.expect(&Tok::RParen, "`)` closing the parameter list")?;
            p.expect(&Tok::Colon, "`:` before the return type")?;
            let return_type = p.ident("return type")?;
            p.expect(&Tok::KwBody, "`body`")?;
            p.expect(&Tok::Colon, "`:` after `body`")?;
            let body = p.expr()?;
            out.operations.push(RawOperation {
                context,
                name,
                params,
                return_type,
                body,
                offset: ctx_off,
            });
        } else {
            // One or more invariants under this context.
            let mut any = false;
            while p.at(&Tok::KwInv) {
                p.bump();
                let off = p.peek_offset();
                let name = p.ident("invariant name")?;
                p.expect(&Tok::Colon, "`:` after the invariant name")?;
                let body = p.expr()?;
                out.invariants.push(RawInvariant {
                    context: context.clone(),
                    name,
                    body,
                    offset: off,
                });
                any = true;
            }
            if !any {
                return Err(p.err("`inv` or `::` after the context class"));
            }
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: &'a [Token],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }
    fn peek_offset(&self) -> usize {
        self.toks[self.pos].offset
    }
    fn bump(&mut self) -> &Token {
        let t = &self.toks[self.pos];
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }
    fn at(&self, t: &Tok) -> bool {
        self.peek() == t
    }
    fn eat(&mut self, t: &Tok) -> bool {
        if self.at(t) {
            self.bump();
            true
        } else {
            false
        }
    }
    fn expect(&mut self, t: &Tok, what: &str) -> Result<(), FrontendError> {
        if self.eat(t) {
            Ok(())
        } else {
            Err(self.err(&format!("expected {what}, found {}", self.peek())))
        }
    }
    fn expect_eof(&mut self) -> Result<(), FrontendError> {
        if self.at(&Tok::Eof) {
            Ok(())
        } else {
            Err(self.err(&format!("expected end of input, found {}", self.peek())))
        }
    }
    fn ident(&mut self, what: &str) -> Result<String, FrontendError> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => Err(self.err(&format!("expected {what}, found {other}"))),
        }
    }
    fn err(&self, message: &str) -> FrontendError {
        FrontendError::Parse { offset: self.peek_offset(), message: message.to_string() }
    }
    fn unsupported(&self, offset: usize, feature: &str) -> FrontendError {
        FrontendError::Unsupported { offset, feature: feature.to_string() }
    }
    fn span_from(&self, start: usize) -> Span {
        let end = self.toks[self.pos.saturating_sub(1)].end;
        Span::new(start, end)
    }

    // -- Expression grammar ------------------------------------------------

    fn expr(&mut self) -> Result<Expr, FrontendError> {
        self.implies_expr()
    }

    fn implies_expr(&mut self) -> Result<Expr, FrontendError> {
        let start = self.peek_offset();
        let lhs = self.xor_expr()?;
        if self.eat(&Tok::KwImplies) {
            let rhs = self.implies_expr()?; // right-associative
            return Ok(Expr::new(
                ExprKind::Bool { op: BoolOp::Implies, lhs: Box::new(lhs), rhs: Box::new(rhs) },
                self.span_from(start),
            ));
        }
        Ok(lhs)
    }

    fn xor_expr(&mut self) -> Result<Expr, FrontendError> {
        self.left_assoc(&[(Tok::KwXor, BinCtor::Bool(BoolOp::Xor))], Self::or_expr)
    }

    fn or_expr(&mut self) -> Result<Expr, FrontendError> {
        self.left_assoc(&[(Tok::KwOr, BinCtor::Bool(BoolOp::Or))], Self::and_expr)
    }

    fn and_expr(&mut self) -> Result<Expr, FrontendError> {
        self.left_assoc(&[(Tok::KwAnd, BinCtor::Bool(BoolOp::And))], Self::eq_expr)
    }

    fn eq_expr(&mut self) -> Result<Expr, FrontendError> {
        self.left_assoc(
            &[(Tok::Eq, BinCtor::Rel(RelOp::Eq)), (Tok::Ne, BinCtor::Rel(RelOp::Ne))],
            Self::cmp_expr,
        )
    }

    fn cmp_expr(&mut self) -> Result<Expr, FrontendError> {
        self.left_assoc(
            &[
                (Tok::Lt, BinCtor::Rel(RelOp::Lt)),
                (Tok::Le, BinCtor::Rel(RelOp::Le)),
                (Tok::Gt, BinCtor::Rel(RelOp::Gt)),
                (Tok::Ge, BinCtor::Rel(RelOp::Ge)),
            ],
            Self::add_expr,
        )
    }

    fn add_expr(&mut self) -> Result<Expr, FrontendError> {
        self.left_assoc(
            &[
                (Tok::Plus, BinCtor::Arith(ArithOp::Add)),
                (Tok::Minus, BinCtor::Arith(ArithOp::Sub)),
            ],
            Self::mul_expr,
        )
    }

    fn mul_expr(&mut self) -> Result<Expr, FrontendError> {
        self.left_assoc(
            &[
                (Tok::Star, BinCtor::Arith(ArithOp::Mul)),
                (Tok::Slash, BinCtor::Arith(ArithOp::Div)),
            ],
            Self::unary_expr,
        )
    }

    fn left_assoc(
        &mut self,
        table: &[(Tok, BinCtor)],
        next: fn(&mut Self) -> Result<Expr, FrontendError>,
    ) -> Result<Expr, FrontendError> {
        let start = self.peek_offset();
        let mut lhs = next(self)?;
        'outer: loop {
            for (tok, ctor) in table {
                if self.at(tok) {
                    self.bump();
                    let rhs = next(self)?;
                    let kind = match *ctor {
                        BinCtor::Bool(op) => {
                            ExprKind::Bool { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
                        }
                        BinCtor::Rel(op) => {
                            ExprKind::Rel { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
                        }
                        BinCtor::Arith(op) => {
                            ExprKind::Arith { op, lhs: Box::new(lhs), rhs: Box::new(rhs) }
                        }
                    };
                    lhs = Expr::new(kind, self.span_from(start));
                    continue 'outer;
                }
            }
            return Ok(lhs);
        }
    }

    fn unary_expr(&mut self) -> Result<Expr, FrontendError> {
        let start = self.peek_offset();
        if self.eat(&Tok::KwNot) {
            let e = self.unary_expr()?;
            return Ok(Expr::new(ExprKind::Not(Box::new(e)), self.span_from(start)));
        }
        if self.eat(&Tok::Minus) {
            let e = self.unary_expr()?;
            return Ok(Expr::new(ExprKind::Neg(Box::new(e)), self.span_from(start)));
        }
        self.postfix_expr()
    }

    fn postfix_expr(&mut self) -> Result<Expr, FrontendError> {
        let start = self.peek_offset();
        let mut e = self.primary()?;
        loop {
            if self.eat(&Tok::Dot) {
                let name_off = self.peek_offset();
                let name = self.ident("a member name after `.`")?;
                if self.at(&Tok::LParen) {
                    e = self.dot_call(e, &name, name_off, start)?;
                } else {
                    e = Expr::new(
                        ExprKind::Prop { recv: Box::new(e), name },
                        self.span_from(start),
                    );
                }
            } else if self.eat(&Tok::Arrow) {
                let name_off = self.peek_offset();
                let name = self.ident("a collection operation after `->`")?;
                e = self.arrow_call(e, &name, name_off, start)?;
            } else {
                return Ok(e);
            }
        }
    }

    /// `recv.name(...)`: built-in method, type operation, `allInstances`, or
    /// user-defined operation call.
    fn dot_call(
        &mut self,
        recv: Expr,
        name: &str,
        name_off: usize,
        start: usize,
    ) -> Result<Expr, FrontendError> {
        let method = match name {
            "div" => Some((MethodOp::Div, 1)),
            "mod" => Some((MethodOp::Mod, 1)),
            "abs" => Some((MethodOp::Abs, 0)),
            "max" => Some((MethodOp::Max, 1)),
            "min" => Some((MethodOp::Min, 1)),
            "floor" => Some((MethodOp::Floor, 0)),
            "ceil" => Some((MethodOp::Ceil, 0)),
            "round" => Some((MethodOp::Round, 0)),
            "toInteger" => Some((MethodOp::ToInteger, 0)),
            "toReal" => Some((MethodOp::ToReal, 0)),
            "size" => Some((MethodOp::StrSize, 0)),
            "concat" => Some((MethodOp::Concat, 1)),
            "substring" => Some((MethodOp::Substring, 2)),
            "oclIsUndefined" => Some((MethodOp::OclIsUndefined, 0)),
            "oclIsInvalid" => Some((MethodOp::OclIsInvalid, 0)),
            _ => None,
        };
        if let Some((op, arity)) = method {
            let args = self.call_args()?;
            if args.len() != arity {
                return Err(FrontendError::Parse {
                    offset: name_off,
                    message: format!("{name} takes {arity} argument(s), found {}", args.len()),
                });
            }
            return Ok(Expr::new(
                ExprKind::MethodCall { recv: Box::new(recv), op, args },
                self.span_from(start),
            ));
        }
        let type_op = match name {
            "oclIsTypeOf" => Some(TypeOp::IsTypeOf),
            "oclIsKindOf" => Some(TypeOp::IsKindOf),
            "oclAsType" => Some(TypeOp::AsType),
            _ => None,
        };
        if let Some(op) = type_op {
            self.expect(&Tok::LParen, "`(`")?;
            let ty_name = self.ident("a type name")?;
            self.expect(&Tok::RParen, "`)`")?;
            return Ok(Expr::new(
                ExprKind::TypeCheckOp { recv: Box::new(recv), op, ty_name },
                self.span_from(start),
            ));
        }
        if name == "allInstances" {
            self.expect(&Tok::LParen, "`(`")?;
            self.expect(&Tok::RParen, "`)` (allInstances takes no arguments)")?;
            return match recv.kind {
                ExprKind::Var(class) => Ok(Expr::new(
                    ExprKind::AllInstances { class },
                    self.span_from(start),
                )),
                _ => Err(FrontendError::Parse {
                    offset: name_off,
                    message: "allInstances() applies to a class name".into(),
                }),
            };
        }
        if name == "oclAsSet" || name == "closure" || name == "sortedBy" || name == "iterate" {
            return Err(self.unsupported(name_off, name));
        }
        let args = self.call_args()?;
        Ok(Expr::new(
            ExprKind::UserCall { recv: Box::new(recv), op: name.to_string(), args },
            self.span_from(start),
        ))
    }

    /// `recv->name(...)`: iterator expression or collection operation.
    fn arrow_call(
        &mut self,
        recv: Expr,
        name: &str,
        name_off: usize,
        start: usize,
    ) -> Result<Expr, FrontendError> {
        let iter = match name {
            "forAll" => Some(IterKind::ForAll),
            "exists" => Some(IterKind::Exists),
            "select" => Some(IterKind::Select),
            "reject" => Some(IterKind::Reject),
            "collect" => Some(IterKind::Collect),
            "isUnique" => Some(IterKind::IsUnique),
            "one" => Some(IterKind::One),
            _ => None,
        };
        if let Some(kind) = iter {
            self.expect(&Tok::LParen, "`(`")?;
            // The subset requires an explicit iterator variable: `(v | body)`.
            let save = self.pos;
            let mut var = None;
            if let Tok::Ident(v) = self.peek().clone() {
                self.bump();
                if self.at(&Tok::Comma) {
                    return Err(self.unsupported(name_off, "multiple iterator variables"));
                }
                if self.at(&Tok::Colon) {
                    return Err(self.unsupported(name_off, "typed iterator variables"));
                }
                if self.eat(&Tok::Bar) {
                    var = Some(v);
                } else {
                    self.pos = save; // it was the start of an implicit body
                }
            }
            let Some(var) = var else {
                if self.at(&Tok::Eof) {
                    return Err(self.err("unexpected end of input in an iterator expression"));
                }
                return Err(self.unsupported(
                    name_off,
                    &format!("{name} without an explicit iterator variable"),
                ));
            };
            let body = self.expr()?;
            self.expect(&Tok::RParen, "`)` closing the iterator body")?;
            return Ok(Expr::new(
                ExprKind::Iterate { recv: Box::new(recv), kind, var, body: Box::new(body) },
                self.span_from(start),
            ));
        }
        let coll = match name {
            "size" => Some(CollOp::Size),
            "isEmpty" => Some(CollOp::IsEmpty),
            "notEmpty" => Some(CollOp::NotEmpty),
            "includes" => Some(CollOp::Includes),
            "excludes" => Some(CollOp::Excludes),
            "includesAll" => Some(CollOp::IncludesAll),
            "excludesAll" => Some(CollOp::ExcludesAll),
            "count" => Some(CollOp::Count),
            "sum" => Some(CollOp::Sum),
            "at" => Some(CollOp::At),
            "indexOf" => Some(CollOp::IndexOf),
            "asSet" => Some(CollOp::AsSet),
            "asSequence" => Some(CollOp::AsSequence),
            "first" => Some(CollOp::First),
            _ => None,
        };
        match coll {
            Some(op) => {
                let args = self.call_args()?;
                if args.len() != op.arity() {
                    return Err(FrontendError::Parse {
                        offset: name_off,
                        message: format!(
                            "{name} takes {} argument(s), found {}",
                            op.arity(),
                            args.len()
                        ),
                    });
                }
                Ok(Expr::new(
                    ExprKind::CollectionOp { recv: Box::new(recv), op, args },
                    self.span_from(start),
                ))
            }
            None => Err(self.unsupported(name_off, &format!("collection operation {name}"))),
        }
    }

    fn call_args(&mut self) -> Result<Vec<Expr>, FrontendError> {
        self.expect(&Tok::LParen, "`(`")?;
        let mut args = Vec::new();
        if !self.at(&Tok::RParen) {
            loop {
                args.push(self.expr()?);
                if !self.eat(&Tok::Comma) {
                    break;
                }
            }
        }
        self.expect(&Tok::RParen, "`)`")?;
        Ok(args)
    }

    fn primary(&mut self) -> Result<Expr, FrontendError> {
        let start = self.peek_offset();
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::new(ExprKind::IntLit(v), self.span_from(start)))
            }
            Tok::Real(v) => {
                self.bump();
                Ok(Expr::new(ExprKind::RealLit(v), self.span_from(start)))
            }
            Tok::Str(s) => {
                self.bump();
                Ok(Expr::new(ExprKind::StrLit(s), self.span_from(start)))
            }
            Tok::KwTrue => {
                self.bump();
                Ok(Expr::new(ExprKind::BoolLit(true), self.span_from(start)))
            }
            Tok::KwFalse => {
                self.bump();
                Ok(Expr::new(ExprKind::BoolLit(false), self.span_from(start)))
            }
            Tok::KwNull => {
                self.bump();
                Ok(Expr::new(ExprKind::NullLit, self.span_from(start)))
            }
            Tok::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(&Tok::RParen, "`)`")?;
                Ok(e)
            }
            Tok::KwIf => {
                self.bump();
                let cond = self.expr()?;
                self.expect(&Tok::KwThen, "`then`")?;
                let then_branch = self.expr()?;
                self.expect(&Tok::KwElse, "`else` (the subset has no elseif)")?;
                let else_branch = self.expr()?;
                self.expect(&Tok::KwEndif, "`endif`")?;
                Ok(Expr::new(
                    ExprKind::If {
                        cond: Box::new(cond),
                        then_branch: Box::new(then_branch),
                        else_branch: Box::new(else_branch),
                    },
                    self.span_from(start),
                ))
            }
            Tok::KwLet => {
                self.bump();
                let var = self.ident("a variable name after `let`")?;
                let ann = if self.eat(&Tok::Colon) {
                    Some(self.ident("a type name after `:`")?)
                } else {
                    None
                };
                self.expect(&Tok::Eq, "`=` in the let binding")?;
                let init = self.expr()?;
                self.expect(&Tok::KwIn, "`in`")?;
                let body = self.expr()?;
                Ok(Expr::new(
                    ExprKind::Let { var, ann, init: Box::new(init), body: Box::new(body) },
                    self.span_from(start),
                ))
            }
            Tok::Ident(name) => {
                self.bump();
                if self.eat(&Tok::ColonColon) {
                    let member = self.ident("a name after `::`")?;
                    return Ok(Expr::new(
                        ExprKind::Qualified { space: name, name: member },
                        self.span_from(start),
                    ));
                }
                Ok(Expr::new(ExprKind::Var(name), self.span_from(start)))
            }
            other => Err(self.err(&format!("expected an expression, found {other}"))),
        }
    }
}

#[derive(Clone, Copy)]
enum BinCtor {
    Bool(BoolOp),
    Rel(RelOp),
    Arith(ArithOp),
}

/// Parse and type-check a single constraint against a model. `self` is not
/// in scope; use [`super::types::check_invariant`] for invariant bodies.
pub fn parse_constraint(
    text: &str,
    m: &crate::model::DataModel,
    ops: &super::types::OpTable,
) -> Result<Expr, FrontendError> {
    let mut e = parse_expression(text)?;
    super::types::check_closed(&mut e, m, ops)?;
    Ok(e)
}
