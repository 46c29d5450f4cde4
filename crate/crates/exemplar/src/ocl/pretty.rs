//! Source-form printing of expression trees with minimal parentheses.
//!
//! The output of [`pretty_print`] re-parses to a structurally identical tree
//! for every tree the parser can produce (checked by a round-trip property
//! below). Synthesized nodes that have no source syntax use debug forms:
//! object literals print as `@Id` and collection literals as `Kind{...}`.

use super::ast::*;

/// Render an expression as OCL source text.
pub fn pretty_print(e: &Expr) -> String {
    let mut out = String::new();
    write_expr(&mut out, e, 0);
    out
}

// Binding powers, loosest to tightest. A child whose power is below the
// minimum required by its context gets wrapped in parentheses.
const P_LET: u8 = 1;
const P_IMPLIES: u8 = 2;
const P_XOR: u8 = 3;
const P_OR: u8 = 4;
const P_AND: u8 = 5;
const P_EQ: u8 = 6;
const P_CMP: u8 = 7;
const P_ADD: u8 = 8;
const P_MUL: u8 = 9;
const P_UNARY: u8 = 10;
const P_POSTFIX: u8 = 11;
const P_ATOM: u8 = 12;

fn prec(e: &Expr) -> u8 {
    use ExprKind::*;
    match &e.kind {
        Let { .. } => P_LET,
        Bool { op, .. } => match op {
            BoolOp::Implies => P_IMPLIES,
            BoolOp::Xor => P_XOR,
            BoolOp::Or => P_OR,
            BoolOp::And => P_AND,
        },
        Rel { op, .. } => match op {
            RelOp::Eq | RelOp::Ne => P_EQ,
            _ => P_CMP,
        },
        Arith { op, .. } => match op {
            ArithOp::Add | ArithOp::Sub => P_ADD,
            ArithOp::Mul | ArithOp::Div => P_MUL,
        },
        Not(_) | Neg(_) => P_UNARY,
        Prop { .. } | Attr { .. } | Nav { .. } | AllInstances { .. } | MethodCall { .. }
        | TypeCheckOp { .. } | UserCall { .. } | Iterate { .. } | CollectionOp { .. } => P_POSTFIX,
        _ => P_ATOM,
    }
}

fn write_expr(out: &mut String, e: &Expr, min: u8) {
    use ExprKind::*;
    let p = prec(e);
    if p < min {
        out.push('(');
    }
    match &e.kind {
        BoolLit(v) => out.push_str(if *v { "true" } else { "false" }),
        IntLit(v) => out.push_str(&v.to_string()),
        RealLit(v) => out.push_str(&real_text(*v)),
        StrLit(s) => {
            out.push('\'');
            for c in s.chars() {
                match c {
                    '\\' => out.push_str("\\\\"),
                    '\'' => out.push_str("\\'"),
                    '\n' => out.push_str("\\n"),
                    '\t' => out.push_str("\\t"),
                    other => out.push(other),
                }
            }
            out.push('\'');
        }
        NullLit => out.push_str("null"),
        EnumLit { enumeration, literal } => {
            out.push_str(enumeration);
            out.push_str("::");
            out.push_str(literal);
        }
        ObjectLit(id) => {
            out.push('@');
            out.push_str(id.as_str());
        }
        CollectionLit { kind, elements } => {
            out.push_str(&format!("{kind:?}"));
            out.push('{');
            for (i, el) in elements.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(out, el, 0);
            }
            out.push('}');
        }
        Var(name) => out.push_str(name),
        StaticAttr { class, attr } => {
            out.push_str(class);
            out.push_str("::");
            out.push_str(attr);
        }
        Qualified { space, name } => {
            out.push_str(space);
            out.push_str("::");
            out.push_str(name);
        }
        Prop { recv, name } => {
            write_expr(out, recv, P_POSTFIX);
            out.push('.');
            out.push_str(name);
        }
        Attr { recv, attr } => {
            write_expr(out, recv, P_POSTFIX);
            out.push('.');
            out.push_str(attr);
        }
        Nav { recv, role } => {
            write_expr(out, recv, P_POSTFIX);
            out.push('.');
            out.push_str(role);
        }
        AllInstances { class } => {
            out.push_str(class);
            out.push_str(".allInstances()");
        }
        Not(x) => {
            out.push_str("not ");
            write_expr(out, x, P_UNARY);
        }
        Neg(x) => {
            out.push('-');
            // Tighter than our own level so nested unary minus gets
            // parenthesized; `--` would start a comment.
            write_expr(out, x, P_UNARY + 1);
        }
        Bool { op, lhs, rhs } => {
            let (name, p_op) = match op {
                BoolOp::And => ("and", P_AND),
                BoolOp::Or => ("or", P_OR),
                BoolOp::Xor => ("xor", P_XOR),
                BoolOp::Implies => ("implies", P_IMPLIES),
            };
            // All left-associative except `implies`.
            let (lmin, rmin) = if *op == BoolOp::Implies {
                (p_op + 1, p_op)
            } else {
                (p_op, p_op + 1)
            };
            write_expr(out, lhs, lmin);
            out.push(' ');
            out.push_str(name);
            out.push(' ');
            write_expr(out, rhs, rmin);
        }
        Rel { op, lhs, rhs } => {
            let (name, p_op) = match op {
                RelOp::Eq => ("=", P_EQ),
                RelOp::Ne => ("<>", P_EQ),
                RelOp::Lt => ("<", P_CMP),
                RelOp::Le => ("<=", P_CMP),
                RelOp::Gt => (">", P_CMP),
                RelOp::Ge => (">=", P_CMP),
            };
            write_expr(out, lhs, p_op);
            out.push(' ');
            out.push_str(name);
            out.push(' ');
            write_expr(out, rhs, p_op + 1);
        }
        Arith { op, lhs, rhs } => {
            let (name, p_op) = match op {
                ArithOp::Add => ("+", P_ADD),
                ArithOp::Sub => ("-", P_ADD),
                ArithOp::Mul => ("*", P_MUL),
                ArithOp::Div => ("/", P_MUL),
            };
            write_expr(out, lhs, p_op);
            out.push(' ');
            out.push_str(name);
            out.push(' ');
            write_expr(out, rhs, p_op + 1);
        }
        MethodCall { recv, op, args } => {
            write_expr(out, recv, P_POSTFIX);
            out.push('.');
            out.push_str(op.name());
            write_args(out, args);
        }
        TypeCheckOp { recv, op, ty_name } => {
            write_expr(out, recv, P_POSTFIX);
            out.push('.');
            out.push_str(op.name());
            out.push('(');
            out.push_str(ty_name);
            out.push(')');
        }
        UserCall { recv, op, args } => {
            write_expr(out, recv, P_POSTFIX);
            out.push('.');
            out.push_str(op);
            write_args(out, args);
        }
        Iterate { recv, kind, var, body } => {
            write_expr(out, recv, P_POSTFIX);
            out.push_str("->");
            out.push_str(kind.name());
            out.push('(');
            out.push_str(var);
            out.push_str(" | ");
            write_expr(out, body, 0);
            out.push(')');
        }
        CollectionOp { recv, op, args } => {
            write_expr(out, recv, P_POSTFIX);
            out.push_str("->");
            out.push_str(op.name());
            write_args(out, args);
        }
        If { cond, then_branch, else_branch } => {
            out.push_str("if ");
            write_expr(out, cond, 0);
            out.push_str(" then ");
            write_expr(out, then_branch, 0);
            out.push_str(" else ");
            write_expr(out, else_branch, 0);
            out.push_str(" endif");
        }
        Let { var, ann, init, body } => {
            out.push_str("let ");
            out.push_str(var);
            if let Some(a) = ann {
                out.push_str(" : ");
                out.push_str(a);
            }
            out.push_str(" = ");
            write_expr(out, init, 0);
            out.push_str(" in ");
            write_expr(out, body, 0);
        }
    }
    if p < min {
        out.push(')');
    }
}

fn write_args(out: &mut String, args: &[Expr]) {
    out.push('(');
    for (i, a) in args.iter().enumerate() {
        if i > 0 {
            out.push_str(", ");
        }
        write_expr(out, a, 0);
    }
    out.push(')');
}

/// A real literal that the lexer reads back as a Real (digits, a dot, more
/// digits — no exponent form).
fn real_text(v: f64) -> String {
    let s = format!("{v:?}");
    let plain = s.chars().all(|c| c.is_ascii_digit() || c == '.') && s.contains('.');
    if plain {
        s
    } else {
        // Exponent or special value; fall back to a fixed-point rendering.
        format!("{v:.9}")
    }
}

#[cfg(test)]
mod tests {
    use super::super::parser::parse_expression;
    use super::*;
    use proptest::prelude::*;

    fn roundtrip(src: &str) {
        let e = parse_expression(src).unwrap();
        let printed = pretty_print(&e);
        let back = parse_expression(&printed)
            .unwrap_or_else(|err| panic!("reparse of {printed:?} failed: {err}"));
        assert_eq!(back, e, "round trip changed structure: {src:?} -> {printed:?}");
    }

    #[test]
    fn keeps_necessary_parens_only() {
        let e = parse_expression("(1 + 2) * 3").unwrap();
        assert_eq!(pretty_print(&e), "(1 + 2) * 3");
        let e = parse_expression("1 + (2 * 3)").unwrap();
        assert_eq!(pretty_print(&e), "1 + 2 * 3");
        let e = parse_expression("not (a and b)").unwrap();
        assert_eq!(pretty_print(&e), "not (a and b)");
        let e = parse_expression("(a implies b) implies c").unwrap();
        assert_eq!(pretty_print(&e), "(a implies b) implies c");
        let e = parse_expression("a implies (b implies c)").unwrap();
        assert_eq!(pretty_print(&e), "a implies b implies c");
    }

    #[test]
    fn fixed_samples_roundtrip() {
        for src in [
            "self.age >= 0 and self.age < 150",
            "Person.allInstances()->forAll(p | p.addresses->notEmpty())",
            "xs->select(x | x.v > 0)->size() = xs->size()",
            "let y : Integer = self.x + 1 in y * y <= 100",
            "if a then 1 else 2 endif + 1",
            "(-x).abs() = -x.abs()",
            "1 - -2 = 3",
            "s.substring(1, 2).concat('it\\'s ok'.substring(1, 1))",
            "Country::LU = c or c.oclIsUndefined()",
            "self.incomes->collect(i | i.amount)->sum() > 0.5",
            "x.oclAsType(Employee).salary.max(0) > 10",
            "a = b < c",
            "xs->isUnique(x | x.id) and xs->one(x | x.flag)",
        ] {
            roundtrip(src);
        }
    }

    #[test]
    fn escapes_strings() {
        let e = parse_expression("'a\\'b\\\\c\\nd'").unwrap();
        let printed = pretty_print(&e);
        assert_eq!(printed, "'a\\'b\\\\c\\nd'");
        roundtrip("'a\\'b\\\\c\\nd'");
    }

    #[test]
    fn debug_forms_for_synthesized_nodes() {
        use crate::model::ObjectId;
        let obj = Expr::untyped(ExprKind::ObjectLit(ObjectId::new("Person3")));
        assert_eq!(pretty_print(&obj), "@Person3");
        let coll = Expr::untyped(ExprKind::CollectionLit {
            kind: CollKind::Set,
            elements: vec![Expr::untyped(ExprKind::IntLit(1)), obj],
        });
        assert_eq!(pretty_print(&coll), "Set{1, @Person3}");
    }

    // -- Property: print∘parse is the identity on parser-producible trees --

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let leaf = prop_oneof![
            any::<bool>().prop_map(|b| Expr::untyped(ExprKind::BoolLit(b))),
            (0i64..100).prop_map(|v| Expr::untyped(ExprKind::IntLit(v))),
            (0u32..400).prop_map(|v| Expr::untyped(ExprKind::RealLit(f64::from(v) / 4.0))),
            "[a-c ']{0,4}".prop_map(|s| Expr::untyped(ExprKind::StrLit(s))),
            Just(Expr::untyped(ExprKind::NullLit)),
            prop_oneof![Just("a"), Just("b"), Just("xs")]
                .prop_map(|v| Expr::untyped(ExprKind::Var(v.into()))),
            Just(Expr::untyped(ExprKind::Qualified {
                space: "Color".into(),
                name: "Red".into()
            })),
            Just(Expr::untyped(ExprKind::AllInstances { class: "Person".into() })),
        ];
        leaf.prop_recursive(5, 48, 3, |inner| {
            let boxed = inner.clone().prop_map(Box::new);
            prop_oneof![
                (boxed.clone(), prop_oneof![Just("age"), Just("kids")])
                    .prop_map(|(recv, name)| Expr::untyped(ExprKind::Prop {
                        recv,
                        name: name.into()
                    })),
                boxed.clone().prop_map(|x| Expr::untyped(ExprKind::Not(x))),
                boxed.clone().prop_map(|x| Expr::untyped(ExprKind::Neg(x))),
                (
                    prop_oneof![
                        Just(BoolOp::And),
                        Just(BoolOp::Or),
                        Just(BoolOp::Xor),
                        Just(BoolOp::Implies)
                    ],
                    boxed.clone(),
                    boxed.clone()
                )
                    .prop_map(|(op, lhs, rhs)| Expr::untyped(ExprKind::Bool { op, lhs, rhs })),
                (
                    prop_oneof![
                        Just(RelOp::Eq),
                        Just(RelOp::Ne),
                        Just(RelOp::Lt),
                        Just(RelOp::Le),
                        Just(RelOp::Gt),
                        Just(RelOp::Ge)
                    ],
                    boxed.clone(),
                    boxed.clone()
                )
                    .prop_map(|(op, lhs, rhs)| Expr::untyped(ExprKind::Rel { op, lhs, rhs })),
                (
                    prop_oneof![
                        Just(ArithOp::Add),
                        Just(ArithOp::Sub),
                        Just(ArithOp::Mul),
                        Just(ArithOp::Div)
                    ],
                    boxed.clone(),
                    boxed.clone()
                )
                    .prop_map(|(op, lhs, rhs)| Expr::untyped(ExprKind::Arith { op, lhs, rhs })),
                (boxed.clone(), prop_oneof![Just(MethodOp::Abs), Just(MethodOp::Floor)])
                    .prop_map(|(recv, op)| Expr::untyped(ExprKind::MethodCall {
                        recv,
                        op,
                        args: vec![]
                    })),
                (boxed.clone(), inner.clone(), prop_oneof![Just(MethodOp::Max), Just(MethodOp::Min)])
                    .prop_map(|(recv, arg, op)| Expr::untyped(ExprKind::MethodCall {
                        recv,
                        op,
                        args: vec![arg]
                    })),
                (boxed.clone(), inner.clone()).prop_map(|(recv, arg)| Expr::untyped(
                    ExprKind::UserCall { recv, op: "foo".into(), args: vec![arg] }
                )),
                (
                    boxed.clone(),
                    prop_oneof![
                        Just(IterKind::ForAll),
                        Just(IterKind::Exists),
                        Just(IterKind::Select),
                        Just(IterKind::Collect),
                        Just(IterKind::One)
                    ],
                    boxed.clone()
                )
                    .prop_map(|(recv, kind, body)| Expr::untyped(ExprKind::Iterate {
                        recv,
                        kind,
                        var: "v".into(),
                        body
                    })),
                (
                    boxed.clone(),
                    prop_oneof![Just(CollOp::Size), Just(CollOp::NotEmpty), Just(CollOp::Sum)]
                )
                    .prop_map(|(recv, op)| Expr::untyped(ExprKind::CollectionOp {
                        recv,
                        op,
                        args: vec![]
                    })),
                (boxed.clone(), inner.clone(), prop_oneof![Just(CollOp::Includes), Just(CollOp::At)])
                    .prop_map(|(recv, arg, op)| Expr::untyped(ExprKind::CollectionOp {
                        recv,
                        op,
                        args: vec![arg]
                    })),
                (boxed.clone(), boxed.clone(), boxed.clone()).prop_map(
                    |(cond, then_branch, else_branch)| Expr::untyped(ExprKind::If {
                        cond,
                        then_branch,
                        else_branch
                    })
                ),
                (boxed.clone(), boxed.clone(), proptest::option::of(Just("Integer".to_string())))
                    .prop_map(|(init, body, ann)| Expr::untyped(ExprKind::Let {
                        var: "w".into(),
                        ann,
                        init,
                        body
                    })),
                (boxed, prop_oneof![Just(TypeOp::IsTypeOf), Just(TypeOp::AsType)]).prop_map(
                    |(recv, op)| Expr::untyped(ExprKind::TypeCheckOp {
                        recv,
                        op,
                        ty_name: "Person".into()
                    })
                ),
            ]
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]
        #[test]
        fn print_then_parse_is_identity(e in arb_expr()) {
            let printed = pretty_print(&e);
            let back = parse_expression(&printed)
                .unwrap_or_else(|err| panic!("reparse of {printed:?} failed: {err}"));
            prop_assert_eq!(&back, &e, "printed form: {:?}", printed);
        }
    }
}
