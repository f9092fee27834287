use thiserror::Error;

use super::{Constraint, FieldRef, Operand, RelOp};
use crate::value::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("constraint parse error at offset {offset}: expected {expected}")]
pub struct ParseError {
    pub offset: usize,
    pub expected: String,
}

/// Nesting limit; deeper input is rejected instead of exhausting the stack.
const MAX_NESTING: usize = 256;

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Field(FieldRef),
    Int(i64),
    Float(f64),
    Str(String),
    Op(RelOp),
    LParen,
    RParen,
    And,
    Or,
    Not,
    Exist,
    True,
    False,
}

#[derive(Debug)]
struct Token {
    tok: Tok,
    offset: usize,
}

fn err<T>(offset: usize, expected: impl Into<String>) -> Result<T, ParseError> {
    Err(ParseError {
        offset,
        expected: expected.into(),
    })
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

fn is_ident_cont(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

fn lex(text: &str) -> Result<Vec<Token>, ParseError> {
    let src = text.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < src.len() {
        let start = i;
        let b = src[i];
        let tok = match b {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => {
                i += 1;
                Tok::LParen
            }
            b')' => {
                i += 1;
                Tok::RParen
            }
            b'~' => {
                i += 1;
                Tok::Op(RelOp::Contains)
            }
            b'=' | b'!' | b'<' | b'>' => {
                let two = src.get(i + 1) == Some(&b'=');
                let op = match (b, two) {
                    (b'=', true) => RelOp::Eq,
                    (b'!', true) => RelOp::Ne,
                    (b'<', true) => RelOp::Le,
                    (b'>', true) => RelOp::Ge,
                    (b'<', false) => RelOp::Lt,
                    (b'>', false) => RelOp::Gt,
                    _ => return err(i, "relational operator"),
                };
                i += if two { 2 } else { 1 };
                Tok::Op(op)
            }
            b'$' => {
                let rest = &text[i..];
                let header = [
                    ("$domain_name", FieldRef::DomainName),
                    ("$type_name", FieldRef::TypeName),
                    ("$event_name", FieldRef::EventName),
                ]
                .into_iter()
                .find(|(name, _)| {
                    rest.starts_with(name)
                        && !src.get(i + name.len()).copied().is_some_and(is_ident_cont)
                });
                if let Some((name, field)) = header {
                    i += name.len();
                    Tok::Field(field)
                } else if rest.starts_with("$.") && src.get(i + 2).copied().is_some_and(is_ident_start) {
                    i += 2;
                    let id_start = i;
                    while i < src.len() && is_ident_cont(src[i]) {
                        i += 1;
                    }
                    Tok::Field(FieldRef::Body(text[id_start..i].to_owned()))
                } else {
                    return err(i, "field reference");
                }
            }
            b'\'' => {
                i += 1;
                let mut s = String::new();
                loop {
                    let Some(c) = text[i..].chars().next() else {
                        return err(i, "closing quote");
                    };
                    match c {
                        '\'' => {
                            i += 1;
                            break;
                        }
                        '\\' => match src.get(i + 1) {
                            Some(&q @ (b'\'' | b'\\')) => {
                                s.push(q as char);
                                i += 2;
                            }
                            _ => return err(i + 1, "' or \\ after backslash"),
                        },
                        c => {
                            s.push(c);
                            i += c.len_utf8();
                        }
                    }
                }
                Tok::Str(s)
            }
            b'-' | b'0'..=b'9' => {
                if b == b'-' {
                    i += 1;
                }
                let digits = |i: &mut usize| {
                    let s = *i;
                    while *i < src.len() && src[*i].is_ascii_digit() {
                        *i += 1;
                    }
                    *i - s
                };
                if digits(&mut i) == 0 {
                    return err(i, "digit");
                }
                let mut float = false;
                if src.get(i) == Some(&b'.') {
                    i += 1;
                    float = true;
                    if digits(&mut i) == 0 {
                        return err(i, "digit");
                    }
                }
                if matches!(src.get(i), Some(b'e' | b'E')) {
                    i += 1;
                    float = true;
                    if matches!(src.get(i), Some(b'+' | b'-')) {
                        i += 1;
                    }
                    if digits(&mut i) == 0 {
                        return err(i, "exponent digit");
                    }
                }
                if src.get(i).copied().is_some_and(is_ident_cont) {
                    return err(i, "end of number");
                }
                let lit = &text[start..i];
                if float {
                    match lit.parse::<f64>() {
                        Ok(x) if x.is_finite() => Tok::Float(x),
                        _ => return err(start, "finite number"),
                    }
                } else {
                    match lit.parse::<i64>() {
                        Ok(x) => Tok::Int(x),
                        Err(_) => return err(start, "64-bit integer"),
                    }
                }
            }
            b if is_ident_start(b) => {
                while i < src.len() && is_ident_cont(src[i]) {
                    i += 1;
                }
                match &text[start..i] {
                    "and" => Tok::And,
                    "or" => Tok::Or,
                    "not" => Tok::Not,
                    "exist" => Tok::Exist,
                    "true" => Tok::True,
                    "false" => Tok::False,
                    _ => return err(start, "keyword"),
                }
            }
            _ => return err(i, "token"),
        };
        out.push(Token { tok, offset: start });
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    end: usize,
    depth: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.tok)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map_or(self.end, |t| t.offset)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|t| t.tok.clone());
        self.pos += 1;
        t
    }

    fn enter(&mut self) -> Result<(), ParseError> {
        self.depth += 1;
        if self.depth > MAX_NESTING {
            return err(self.offset(), "shallower nesting");
        }
        Ok(())
    }

    fn or(&mut self) -> Result<Constraint, ParseError> {
        self.enter()?;
        let mut lhs = self.and()?;
        while self.peek() == Some(&Tok::Or) {
            self.pos += 1;
            lhs = Constraint::or(lhs, self.and()?);
        }
        self.depth -= 1;
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Constraint, ParseError> {
        let mut lhs = self.not()?;
        while self.peek() == Some(&Tok::And) {
            self.pos += 1;
            lhs = Constraint::and(lhs, self.not()?);
        }
        Ok(lhs)
    }

    fn not(&mut self) -> Result<Constraint, ParseError> {
        if self.peek() == Some(&Tok::Not) {
            self.pos += 1;
            self.enter()?;
            let inner = self.not()?;
            self.depth -= 1;
            return Ok(Constraint::not(inner));
        }
        self.prim()
    }

    fn next_is_relop(&self) -> bool {
        matches!(self.toks.get(self.pos + 1).map(|t| &t.tok), Some(Tok::Op(_)))
    }

    fn prim(&mut self) -> Result<Constraint, ParseError> {
        match self.peek() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let inner = self.or()?;
                if self.peek() != Some(&Tok::RParen) {
                    return err(self.offset(), "')'");
                }
                self.pos += 1;
                Ok(inner)
            }
            Some(Tok::Exist) => {
                self.pos += 1;
                match self.bump() {
                    Some(Tok::Field(f)) => Ok(Constraint::Exists(f)),
                    _ => err(self.prev_offset(), "field"),
                }
            }
            Some(Tok::True | Tok::False) if !self.next_is_relop() => {
                Ok(Constraint::Bool(self.bump() == Some(Tok::True)))
            }
            Some(_) => self.compare(),
            None => err(self.end, "constraint"),
        }
    }

    fn prev_offset(&self) -> usize {
        self.toks.get(self.pos - 1).map_or(self.end, |t| t.offset)
    }

    fn operand(&mut self) -> Result<Operand, ParseError> {
        let operand = match self.peek() {
            Some(Tok::Field(f)) => Operand::Field(f.clone()),
            Some(Tok::Int(i)) => Operand::Literal(Value::Int(*i)),
            Some(Tok::Float(x)) => Operand::Literal(Value::Float(*x)),
            Some(Tok::Str(s)) => Operand::Literal(Value::Str(s.clone())),
            Some(Tok::True) => Operand::Literal(Value::Bool(true)),
            Some(Tok::False) => Operand::Literal(Value::Bool(false)),
            _ => return err(self.offset(), "operand"),
        };
        self.pos += 1;
        Ok(operand)
    }

    fn compare(&mut self) -> Result<Constraint, ParseError> {
        let lhs = self.operand()?;
        let op = match self.peek() {
            Some(Tok::Op(op)) => *op,
            _ => return err(self.offset(), "relational operator"),
        };
        self.pos += 1;
        let rhs = self.operand()?;
        Ok(Constraint::Compare(lhs, op, rhs))
    }
}

/// Parses constraint text. Blank text is the constant `true`.
pub fn parse_constraint(text: &str) -> Result<Constraint, ParseError> {
    let toks = lex(text)?;
    if toks.is_empty() {
        return Ok(Constraint::Bool(true));
    }
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.len(),
        depth: 0,
    };
    let c = p.or()?;
    if p.pos != p.toks.len() {
        return err(p.offset(), "end of constraint");
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(name: &str) -> Operand {
        Operand::Field(FieldRef::Body(name.into()))
    }

    fn lit(v: impl Into<Value>) -> Operand {
        Operand::Literal(v.into())
    }

    #[test]
    fn blank_is_true() {
        assert_eq!(parse_constraint(""), Ok(Constraint::Bool(true)));
        assert_eq!(parse_constraint(" \n\t"), Ok(Constraint::Bool(true)));
    }

    #[test]
    fn conjunction_of_compares() {
        let c = parse_constraint("$type_name == 'current' and $.value > 3.5").unwrap();
        let expected = Constraint::and(
            Constraint::compare(Operand::Field(FieldRef::TypeName), RelOp::Eq, lit("current")),
            Constraint::compare(field("value"), RelOp::Gt, lit(3.5)),
        );
        assert_eq!(c, expected);
    }

    #[test]
    fn truncated_compare_reports_offset() {
        assert_eq!(
            parse_constraint("$.a >"),
            Err(ParseError {
                offset: 5,
                expected: "operand".into()
            })
        );
    }

    #[test]
    fn precedence_and_associativity() {
        let c = parse_constraint("true or false and not true or false").unwrap();
        let expected = Constraint::or(
            Constraint::or(
                Constraint::Bool(true),
                Constraint::and(Constraint::Bool(false), Constraint::not(Constraint::Bool(true))),
            ),
            Constraint::Bool(false),
        );
        assert_eq!(c, expected);
    }

    #[test]
    fn bool_literal_operands() {
        assert_eq!(
            parse_constraint("true == $.flag").unwrap(),
            Constraint::compare(lit(true), RelOp::Eq, field("flag"))
        );
        assert_eq!(
            parse_constraint("$.flag != false").unwrap(),
            Constraint::compare(field("flag"), RelOp::Ne, lit(false))
        );
    }

    #[test]
    fn literals() {
        assert_eq!(
            parse_constraint("$.a ~ 'x\\'y\\\\'").unwrap(),
            Constraint::compare(field("a"), RelOp::Contains, lit("x'y\\"))
        );
        assert_eq!(
            parse_constraint("-3 <= -1e-7").unwrap(),
            Constraint::compare(lit(-3i64), RelOp::Le, lit(-1e-7))
        );
        assert_eq!(
            parse_constraint("exist $event_name").unwrap(),
            Constraint::Exists(FieldRef::EventName)
        );
    }

    #[test]
    fn errors() {
        let cases = [
            ("$.a", 3, "relational operator"),
            ("($.a == 1", 9, "')'"),
            ("$.a == 1 $.b", 9, "end of constraint"),
            ("exist 3", 6, "field"),
            ("AND", 0, "keyword"),
            ("$foo == 1", 0, "field reference"),
            ("$type_names == 1", 0, "field reference"),
            ("'abc", 4, "closing quote"),
            ("$.a == 1e999", 7, "finite number"),
            ("$.a == 99999999999999999999", 7, "64-bit integer"),
            ("$.a = 1", 4, "relational operator"),
            ("not", 3, "constraint"),
            ("$.a == 12ab", 9, "end of number"),
        ];
        for (text, offset, expected) in cases {
            let e = parse_constraint(text).unwrap_err();
            assert_eq!((e.offset, e.expected.as_str()), (offset, expected), "{text}");
        }
    }

    #[test]
    fn nesting_limit() {
        let deep = format!("{}true{}", "(".repeat(10_000), ")".repeat(10_000));
        assert!(parse_constraint(&deep).is_err());
        let nots = format!("{}true", "not ".repeat(10_000));
        assert!(parse_constraint(&nots).is_err());
        let ok = format!("{}true{}", "(".repeat(50), ")".repeat(50));
        assert_eq!(parse_constraint(&ok), Ok(Constraint::Bool(true)));
    }
}
