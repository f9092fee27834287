//! Canonical text encoding for [`Value`].
//!
//! One syntax is shared by wire messages, log records and property files:
//!
//! ```text
//! null  true  false            null / bool
//! -42                          int, minimal decimal
//! 1.5  1e300  -0.0  nan  inf   float, shortest round-trip form, always with '.' or 'e'
//! "a\"b"                       str, escapes \" \\ \n \t \r \uXXXX
//! b"00ff"                      bytes, lowercase hex
//! [v,v]                        list
//! {"k":v,"l":v}                map, keys sorted by byte order
//! ```
//!
//! The encoder emits no whitespace. The decoder tolerates ASCII whitespace
//! between tokens and map keys in any order, but rejects duplicate keys.

use std::fmt::Write as _;

use thiserror::Error;

use crate::value::{Value, ValueMap};

/// Nesting limit applied while decoding untrusted input.
pub const MAX_DEPTH: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("decode error at byte {position}: {reason}")]
pub struct DecodeError {
    pub position: usize,
    pub reason: String,
}

impl DecodeError {
    fn new(position: usize, reason: impl Into<String>) -> Self {
        DecodeError {
            position,
            reason: reason.into(),
        }
    }
}

pub fn encode_value(v: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, v);
    out
}

pub fn encode_value_into(out: &mut String, v: &Value) {
    write_value(out, v);
}

fn write_value(out: &mut String, v: &Value) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(true) => out.push_str("true"),
        Value::Bool(false) => out.push_str("false"),
        Value::Int(i) => {
            let _ = write!(out, "{i}");
        }
        Value::Float(f) => write_float(out, *f),
        Value::Str(s) => write_str(out, s),
        Value::Bytes(b) => {
            out.push_str("b\"");
            for byte in b {
                let _ = write!(out, "{byte:02x}");
            }
            out.push('"');
        }
        Value::List(items) => {
            out.push('[');
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(out, item);
            }
            out.push(']');
        }
        Value::Map(m) => {
            out.push('{');
            for (i, (k, item)) in m.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_str(out, k);
                out.push(':');
                write_value(out, item);
            }
            out.push('}');
        }
    }
}

/// Shortest decimal that round-trips to the same binary64 value. Rust's
/// `Debug` formatting already produces that digit string and always keeps a
/// '.' or an exponent, which is what separates floats from ints.
pub fn write_float(out: &mut String, f: f64) {
    if f.is_nan() {
        out.push_str("nan");
    } else if f.is_infinite() {
        out.push_str(if f > 0.0 { "inf" } else { "-inf" });
    } else {
        let _ = write!(out, "{f:?}");
    }
}

fn write_str(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\t' => out.push_str("\\t"),
            '\r' => out.push_str("\\r"),
            c if (c as u32) < 0x20 => {
                let _ = write!(out, "\\u{:04x}", c as u32);
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

/// Decodes exactly one value spanning the whole input.
pub fn decode_value(bytes: &[u8]) -> Result<Value, DecodeError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|e| DecodeError::new(e.valid_up_to(), "invalid UTF-8"))?;
    let mut p = Parser { src: text, pos: 0 };
    p.skip_ws();
    let v = p.value(0)?;
    p.skip_ws();
    if p.pos != text.len() {
        return Err(DecodeError::new(p.pos, "trailing data"));
    }
    Ok(v)
}

struct Parser<'a> {
    src: &'a str,
    pos: usize,
}

impl<'a> Parser<'a> {
    fn bytes(&self) -> &'a [u8] {
        self.src.as_bytes()
    }

    fn peek(&self) -> Option<u8> {
        self.bytes().get(self.pos).copied()
    }

    fn skip_ws(&mut self) {
        while matches!(self.peek(), Some(b' ' | b'\t' | b'\n' | b'\r')) {
            self.pos += 1;
        }
    }

    fn err<T>(&self, reason: impl Into<String>) -> Result<T, DecodeError> {
        Err(DecodeError::new(self.pos, reason))
    }

    fn expect(&mut self, b: u8) -> Result<(), DecodeError> {
        if self.peek() == Some(b) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected '{}'", b as char))
        }
    }

    fn keyword(&mut self, kw: &str) -> bool {
        if self.src[self.pos..].starts_with(kw) {
            self.pos += kw.len();
            true
        } else {
            false
        }
    }

    fn value(&mut self, depth: usize) -> Result<Value, DecodeError> {
        if depth > MAX_DEPTH {
            return self.err("nesting too deep");
        }
        match self.peek() {
            None => self.err("unexpected end of input"),
            Some(b'n') if self.keyword("null") => Ok(Value::Null),
            Some(b'n') if self.keyword("nan") => Ok(Value::Float(f64::NAN)),
            Some(b't') if self.keyword("true") => Ok(Value::Bool(true)),
            Some(b'f') if self.keyword("false") => Ok(Value::Bool(false)),
            Some(b'i') if self.keyword("inf") => Ok(Value::Float(f64::INFINITY)),
            Some(b'-') if self.keyword("-inf") => Ok(Value::Float(f64::NEG_INFINITY)),
            Some(b'-' | b'0'..=b'9') => self.number(),
            Some(b'"') => Ok(Value::Str(self.string()?)),
            Some(b'b') if self.bytes().get(self.pos + 1) == Some(&b'"') => {
                self.pos += 1;
                self.hex_bytes()
            }
            Some(b'[') => {
                self.pos += 1;
                let mut items = Vec::new();
                self.skip_ws();
                if self.peek() == Some(b']') {
                    self.pos += 1;
                    return Ok(Value::List(items));
                }
                loop {
                    self.skip_ws();
                    items.push(self.value(depth + 1)?);
                    self.skip_ws();
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b']') => {
                            self.pos += 1;
                            return Ok(Value::List(items));
                        }
                        _ => return self.err("expected ',' or ']'"),
                    }
                }
            }
            Some(b'{') => {
                self.pos += 1;
                let mut map = ValueMap::new();
                self.skip_ws();
                if self.peek() == Some(b'}') {
                    self.pos += 1;
                    return Ok(Value::Map(map));
                }
                loop {
                    self.skip_ws();
                    let key_pos = self.pos;
                    if self.peek() != Some(b'"') {
                        return self.err("expected string key");
                    }
                    let key = self.string()?;
                    self.skip_ws();
                    self.expect(b':')?;
                    self.skip_ws();
                    let v = self.value(depth + 1)?;
                    if map.insert(key, v).is_some() {
                        return Err(DecodeError::new(key_pos, "duplicate map key"));
                    }
                    self.skip_ws();
                    match self.peek() {
                        Some(b',') => self.pos += 1,
                        Some(b'}') => {
                            self.pos += 1;
                            return Ok(Value::Map(map));
                        }
                        _ => return self.err("expected ',' or '}'"),
                    }
                }
            }
            Some(_) => self.err("unexpected character"),
        }
    }

    fn digits(&mut self) -> usize {
        let start = self.pos;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.pos += 1;
        }
        self.pos - start
    }

    fn number(&mut self) -> Result<Value, DecodeError> {
        let start = self.pos;
        if self.peek() == Some(b'-') {
            self.pos += 1;
        }
        if self.digits() == 0 {
            return self.err("expected digit");
        }
        let mut is_float = false;
        if self.peek() == Some(b'.') {
            self.pos += 1;
            is_float = true;
            if self.digits() == 0 {
                return self.err("expected digit after '.'");
            }
        }
        if matches!(self.peek(), Some(b'e' | b'E')) {
            self.pos += 1;
            is_float = true;
            if matches!(self.peek(), Some(b'+' | b'-')) {
                self.pos += 1;
            }
            if self.digits() == 0 {
                return self.err("expected exponent digit");
            }
        }
        let text = &self.src[start..self.pos];
        if is_float {
            text.parse::<f64>()
                .map(Value::Float)
                .map_err(|_| DecodeError::new(start, "bad float"))
        } else {
            text.parse::<i64>()
                .map(Value::Int)
                .map_err(|_| DecodeError::new(start, "integer out of range"))
        }
    }

    fn string(&mut self) -> Result<String, DecodeError> {
        self.expect(b'"')?;
        let mut out = String::new();
        loop {
            let rest = &self.src[self.pos..];
            let Some(c) = rest.chars().next() else {
                return self.err("unterminated string");
            };
            match c {
                '"' => {
                    self.pos += 1;
                    return Ok(out);
                }
                '\\' => {
                    self.pos += 1;
                    let esc = self.peek();
                    self.pos += 1;
                    match esc {
                        Some(b'"') => out.push('"'),
                        Some(b'\\') => out.push('\\'),
                        Some(b'n') => out.push('\n'),
                        Some(b't') => out.push('\t'),
                        Some(b'r') => out.push('\r'),
                        Some(b'u') => {
                            let hex = self
                                .src
                                .get(self.pos..self.pos + 4)
                                .filter(|h| h.bytes().all(|b| b.is_ascii_hexdigit()));
                            let Some(hex) = hex else {
                                return self.err("bad \\u escape");
                            };
                            let code = u32::from_str_radix(hex, 16).expect("checked hex");
                            let Some(ch) = char::from_u32(code) else {
                                return self.err("\\u escape is not a scalar value");
                            };
                            out.push(ch);
                            self.pos += 4;
                        }
                        _ => {
                            self.pos -= 1;
                            return self.err("unknown escape");
                        }
                    }
                }
                c if (c as u32) < 0x20 => return self.err("raw control character in string"),
                c => {
                    out.push(c);
                    self.pos += c.len_utf8();
                }
            }
        }
    }

    fn hex_bytes(&mut self) -> Result<Value, DecodeError> {
        self.expect(b'"')?;
        let mut out = Vec::new();
        loop {
            match self.peek() {
                Some(b'"') => {
                    self.pos += 1;
                    return Ok(Value::Bytes(out));
                }
                Some(_) => {
                    let pair = self.bytes().get(self.pos..self.pos + 2);
                    let byte = pair.and_then(|p| {
                        let hi = hex_nibble(p[0])?;
                        let lo = hex_nibble(p[1])?;
                        Some(hi << 4 | lo)
                    });
                    match byte {
                        Some(b) => {
                            out.push(b);
                            self.pos += 2;
                        }
                        None => return self.err("bad hex byte"),
                    }
                }
                None => return self.err("unterminated bytes"),
            }
        }
    }
}

fn hex_nibble(b: u8) -> Option<u8> {
    match b {
        b'0'..=b'9' => Some(b - b'0'),
        b'a'..=b'f' => Some(b - b'a' + 10),
        _ => None,
    }
}

/// Largest frame body accepted anywhere: 16 MiB.
pub const MAX_FRAME: usize = 16 * 1024 * 1024;

/// Outcome of looking for one length-prefixed frame at the start of a buffer.
#[derive(Debug, PartialEq, Eq)]
pub enum FrameSplit<'a> {
    /// Body and the total number of bytes the frame occupies.
    Complete(&'a [u8], usize),
    /// More bytes are needed.
    Incomplete,
    /// The prefix announces a body above [`MAX_FRAME`].
    TooLarge(usize),
}

/// Prepends the 4-byte big-endian length. Callers check the size limit.
pub fn frame(body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_be_bytes());
    out.extend_from_slice(body);
    out
}

pub fn split_frame(buf: &[u8]) -> FrameSplit<'_> {
    let Some(prefix) = buf.get(..4) else {
        return FrameSplit::Incomplete;
    };
    let len = u32::from_be_bytes(prefix.try_into().expect("4 bytes")) as usize;
    if len > MAX_FRAME {
        return FrameSplit::TooLarge(len);
    }
    match buf.get(4..4 + len) {
        Some(body) => FrameSplit::Complete(body, 4 + len),
        None => FrameSplit::Incomplete,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rt(v: Value) {
        let text = encode_value(&v);
        assert_eq!(decode_value(text.as_bytes()).unwrap(), v, "{text}");
    }

    #[test]
    fn scalar_forms() {
        assert_eq!(encode_value(&Value::Int(-42)), "-42");
        assert_eq!(encode_value(&Value::Float(1.0)), "1.0");
        assert_eq!(encode_value(&Value::Float(-0.0)), "-0.0");
        assert_eq!(encode_value(&Value::Float(0.1)), "0.1");
        assert_eq!(encode_value(&Value::Float(1e300)), "1e300");
        assert_eq!(encode_value(&Value::Float(f64::NAN)), "nan");
        assert_eq!(encode_value(&Value::Float(f64::NEG_INFINITY)), "-inf");
        assert_eq!(encode_value(&Value::Bytes(vec![0, 255, 16])), "b\"00ff10\"");
        assert_eq!(encode_value(&"a\"\\\n\u{1}é".into()), "\"a\\\"\\\\\\n\\u0001é\"");
    }

    #[test]
    fn map_keys_sorted() {
        let mut m = ValueMap::new();
        m.insert("b".into(), Value::Null);
        m.insert("a".into(), Value::Int(1));
        m.insert("B".into(), Value::Bool(true));
        assert_eq!(encode_value(&Value::Map(m)), "{\"B\":true,\"a\":1,\"b\":null}");
    }

    #[test]
    fn round_trips() {
        rt(Value::Float(f64::MIN_POSITIVE));
        rt(Value::Float(5e-324));
        rt(Value::Float(f64::MAX));
        rt(Value::Int(i64::MIN));
        rt(Value::Float(f64::INFINITY));
        rt(Value::List(vec![Value::Null, Value::Bytes(vec![]), Value::List(vec![])]));
        rt(Value::Str("\u{7f}\u{10ffff}\t".into()));
    }

    #[test]
    fn rejects_malformed() {
        for bad in [
            "", "{", "[1,", "\"abc", "01x", "{\"a\":1,\"a\":2}", "b\"0\"", "1.", "-", "tru",
            "{1:2}", "\"\\q\"", "\"\\ud800\"", "99999999999999999999", "[1] 2",
        ] {
            assert!(decode_value(bad.as_bytes()).is_err(), "{bad:?} accepted");
        }
        assert_eq!(decode_value(&[0xff]).unwrap_err().position, 0);
        assert_eq!(decode_value(b"[1,").unwrap_err().position, 3);
    }

    #[test]
    fn deep_nesting_is_an_error_not_a_crash() {
        let text = "[".repeat(100_000);
        assert!(decode_value(text.as_bytes()).is_err());
    }

    #[test]
    fn framing() {
        let f = frame(b"hello");
        assert_eq!(&f[..4], &[0, 0, 0, 5]);
        assert_eq!(split_frame(&f), FrameSplit::Complete(b"hello", 9));
        assert_eq!(split_frame(&f[..8]), FrameSplit::Incomplete);
        assert_eq!(split_frame(&f[..3]), FrameSplit::Incomplete);
        let big = ((MAX_FRAME + 1) as u32).to_be_bytes();
        assert_eq!(split_frame(&big), FrameSplit::TooLarge(MAX_FRAME + 1));
        let max = (MAX_FRAME as u32).to_be_bytes();
        assert_eq!(split_frame(&max), FrameSplit::Incomplete);
    }

    #[test]
    fn whitespace_tolerated() {
        let v = decode_value(b" { \"b\" : [ 1 , 2 ] , \"a\" : null } ").unwrap();
        assert_eq!(encode_value(&v), "{\"a\":null,\"b\":[1,2]}");
    }
}
