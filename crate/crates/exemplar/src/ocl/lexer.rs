//! Hand-rolled lexer. `--` starts a comment running to end of line; strings
//! are single-quoted with backslash escapes.

use super::FrontendError;

#[derive(Debug, Clone, PartialEq)]
pub enum Tok {
    Ident(String),
    Int(i64),
    Real(f64),
    Str(String),
    // Keywords
    KwContext,
    KwInv,
    KwBody,
    KwLet,
    KwIn,
    KwIf,
    KwThen,
    KwElse,
    KwEndif,
    KwNot,
    KwAnd,
    KwOr,
    KwXor,
    KwImplies,
    KwTrue,
    KwFalse,
    KwNull,
    // Punctuation
    LParen,
    RParen,
    Dot,
    Arrow,
    Colon,
    ColonColon,
    Comma,
    Bar,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Plus,
    Minus,
    Star,
    Slash,
    Eof,
}

impl std::fmt::Display for Tok {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Int(v) => write!(f, "integer {v}"),
            Tok::Real(v) => write!(f, "real {v}"),
            Tok::Str(s) => write!(f, "string '{s}'"),
            Tok::KwContext => f.write_str("`context`"),
            Tok::KwInv => f.write_str("`inv`"),
            Tok::KwBody => f.write_str("`body`"),
            Tok::KwLet => f.write_str("`let`"),
            Tok::KwIn => f.write_str("`in`"),
            Tok::KwIf => f.write_str("`if`"),
            Tok::KwThen => f.write_str("`then`"),
            Tok::KwElse => f.write_str("`else`"),
            Tok::KwEndif => f.write_str("`endif`"),
            Tok::KwNot => f.write_str("`not`"),
            Tok::KwAnd => f.write_str("`and`"),
            Tok::KwOr => f.write_str("`or`"),
            Tok::KwXor => f.write_str("`xor`"),
            Tok::KwImplies => f.write_str("`implies`"),
            Tok::KwTrue => f.write_str("`true`"),
            Tok::KwFalse => f.write_str("`false`"),
            Tok::KwNull => f.write_str("`null`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::Arrow => f.write_str("`->`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::ColonColon => f.write_str("`::`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Bar => f.write_str("`|`"),
            Tok::Eq => f.write_str("`=`"),
            Tok::Ne => f.write_str("`<>`"),
            Tok::Lt => f.write_str("`<`"),
            Tok::Le => f.write_str("`<=`"),
            Tok::Gt => f.write_str("`>`"),
            Tok::Ge => f.write_str("`>=`"),
            Tok::Plus => f.write_str("`+`"),
            Tok::Minus => f.write_str("`-`"),
            Tok::Star => f.write_str("`*`"),
            Tok::Slash => f.write_str("`/`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

/// A token together with its byte offset in the source.
#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub tok: Tok,
    pub offset: usize,
    pub end: usize,
}

pub fn lex(src: &str) -> Result<Vec<Token>, FrontendError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0usize;
    while i < bytes.len() {
        let c = bytes[i] as char;
        // Whitespace.
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        // `--` comment to end of line.
        if c == '-' && bytes.get(i + 1) == Some(&b'-') {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        // Identifiers and keywords.
        if c.is_ascii_alphabetic() || c == '_' {
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            let word = &src[start..i];
            let tok = match word {
                "context" => Tok::KwContext,
                "inv" => Tok::KwInv,
                "body" => Tok::KwBody,
                "let" => Tok::KwLet,
                "in" => Tok::KwIn,
                "if" => Tok::KwIf,
                "then" => Tok::KwThen,
                "else" => Tok::KwElse,
                "endif" => Tok::KwEndif,
                "not" => Tok::KwNot,
                "and" => Tok::KwAnd,
                "or" => Tok::KwOr,
                "xor" => Tok::KwXor,
                "implies" => Tok::KwImplies,
                "true" => Tok::KwTrue,
                "false" => Tok::KwFalse,
                "null" => Tok::KwNull,
                _ => Tok::Ident(word.to_string()),
            };
            out.push(Token { tok, offset: start, end: i });
            continue;
        }
        // Numbers: 12 or 12.5 (a digit must follow the dot, so `1.abs()`
        // lexes as Int, Dot, Ident).
        if c.is_ascii_digit() {
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            let is_real = bytes.get(i) == Some(&b'.')
                && bytes.get(i + 1).map(|b| b.is_ascii_digit()).unwrap_or(false);
            if is_real {
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let text = &src[start..i];
                let v: f64 = text.parse().map_err(|_| FrontendError::Lex {
                    offset: start,
                    message: format!("malformed real literal {text}"),
                })?;
                out.push(Token { tok: Tok::Real(v), offset: start, end: i });
            } else {
                let text = &src[start..i];
                let v: i64 = text.parse().map_err(|_| FrontendError::Lex {
                    offset: start,
                    message: format!("integer literal {text} out of range"),
                })?;
                out.push(Token { tok: Tok::Int(v), offset: start, end: i });
            }
            continue;
        }
        // Strings.
        if c == '\'' {
            i += 1;
            let mut s = String::new();
            loop {
                match bytes.get(i) {
                    None => {
                        return Err(FrontendError::Lex {
                            offset: start,
                            message: "unterminated string literal".into(),
                        })
                    }
                    Some(b'\'') => {
                        i += 1;
                        break;
                    }
                    Some(b'\\') => {
                        let esc = bytes.get(i + 1).copied().ok_or(FrontendError::Lex {
                            offset: i,
                            message: "dangling escape in string literal".into(),
                        })?;
                        s.push(match esc {
                            b'\'' => '\'',
                            b'\\' => '\\',
                            b'n' => '\n',
                            b't' => '\t',
                            other => {
                                return Err(FrontendError::Lex {
                                    offset: i,
                                    message: format!("unknown escape \\{}", other as char),
                                })
                            }
                        });
                        i += 2;
                    }
                    Some(&b) => {
                        // Multi-byte UTF-8 is copied through verbatim.
                        let ch_len = utf8_len(b);
                        s.push_str(&src[i..i + ch_len]);
                        i += ch_len;
                    }
                }
            }
            out.push(Token { tok: Tok::Str(s), offset: start, end: i });
            continue;
        }
        // Punctuation.
        let two = |a: u8, b: u8| bytes[i] == a && bytes.get(i + 1) == Some(&b);
        let (tok, len) = if two(b'-', b'>') {
            (Tok::Arrow, 2)
        } else if two(b':', b':') {
            (Tok::ColonColon, 2)
        } else if two(b'<', b'>') {
            (Tok::Ne, 2)
        } else if two(b'<', b'=') {
            (Tok::Le, 2)
        } else if two(b'>', b'=') {
            (Tok::Ge, 2)
        } else {
            let t = match c {
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                '.' => Tok::Dot,
                ':' => Tok::Colon,
                ',' => Tok::Comma,
                '|' => Tok::Bar,
                '=' => Tok::Eq,
                '<' => Tok::Lt,
                '>' => Tok::Gt,
                '+' => Tok::Plus,
                '-' => Tok::Minus,
                '*' => Tok::Star,
                '/' => Tok::Slash,
                other => {
                    return Err(FrontendError::Lex {
                        offset: i,
                        message: format!("unexpected character {other:?}"),
                    })
                }
            };
            (t, 1)
        };
        out.push(Token { tok, offset: i, end: i + len });
        i += len;
    }
    out.push(Token { tok: Tok::Eof, offset: src.len(), end: src.len() });
    Ok(out)
}

fn utf8_len(first: u8) -> usize {
    match first {
        b if b < 0x80 => 1,
        b if b >= 0xF0 => 4,
        b if b >= 0xE0 => 3,
        _ => 2,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(src: &str) -> Vec<Tok> {
        lex(src).unwrap().into_iter().map(|t| t.tok).collect()
    }

    #[test]
    fn lexes_operators_and_words() {
        assert_eq!(
            toks("a -> forAll <> <= >="),
            vec![
                Tok::Ident("a".into()),
                Tok::Arrow,
                Tok::Ident("forAll".into()),
                Tok::Ne,
                Tok::Le,
                Tok::Ge,
                Tok::Eof
            ]
        );
    }

    #[test]
    fn comment_runs_to_end_of_line() {
        assert_eq!(toks("1 -- ignored -> stuff\n2"), vec![Tok::Int(1), Tok::Int(2), Tok::Eof]);
    }

    #[test]
    fn reals_need_a_digit_after_the_dot() {
        assert_eq!(toks("1.5"), vec![Tok::Real(1.5), Tok::Eof]);
        assert_eq!(
            toks("1.abs"),
            vec![Tok::Int(1), Tok::Dot, Tok::Ident("abs".into()), Tok::Eof]
        );
    }

    #[test]
    fn strings_unescape() {
        assert_eq!(toks(r"'a\'b'"), vec![Tok::Str("a'b".into()), Tok::Eof]);
        assert!(lex("'unterminated").is_err());
    }

    #[test]
    fn minus_minus_is_comment_not_double_negation() {
        // `--` always starts a comment; a doubled unary minus must be
        // written with spaces or parentheses.
        assert_eq!(toks("- -1"), vec![Tok::Minus, Tok::Minus, Tok::Int(1), Tok::Eof]);
        assert_eq!(toks("--1"), vec![Tok::Eof]);
    }
}
