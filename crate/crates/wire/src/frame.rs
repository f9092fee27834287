//! Messages and their length-prefixed frames.
//!
//! A frame is a big-endian `u32` byte count followed by that many bytes of
//! canonical text. The text is a map `{"args":{..},"kind":"..","request_id":n}`.

use notibus_core::codec::{self, DecodeError, FrameSplit};
use notibus_core::value::{Value, ValueMap};
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt};

pub use notibus_core::codec::MAX_FRAME;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Message {
    pub kind: String,
    /// 0 on unsolicited deliveries.
    pub request_id: u64,
    pub args: ValueMap,
}

impl Message {
    pub fn new(kind: impl Into<String>, request_id: u64) -> Self {
        Message {
            kind: kind.into(),
            request_id,
            args: ValueMap::new(),
        }
    }

    pub fn arg(mut self, key: &str, v: impl Into<Value>) -> Self {
        self.args.insert(key.to_owned(), v.into());
        self
    }

    pub fn to_value(&self) -> Value {
        let mut m = ValueMap::new();
        m.insert("kind".into(), self.kind.clone().into());
        m.insert("request_id".into(), Value::Int(self.request_id as i64));
        m.insert("args".into(), Value::Map(self.args.clone()));
        Value::Map(m)
    }

    pub fn from_value(v: Value) -> Result<Self, FrameError> {
        let bad = |why: &str| {
            FrameError::Decode(DecodeError {
                position: 0,
                reason: format!("message: {why}"),
            })
        };
        let mut m = v.into_map().ok_or_else(|| bad("not a map"))?;
        if m.len() != 3 {
            return Err(bad("expected exactly args, kind and request_id"));
        }
        let kind = match m.remove("kind") {
            Some(Value::Str(s)) if !s.is_empty() => s,
            _ => return Err(bad("kind must be a non-empty string")),
        };
        let request_id = match m.remove("request_id") {
            Some(Value::Int(i)) if i >= 0 => i as u64,
            _ => return Err(bad("request_id must be a non-negative int")),
        };
        let args = match m.remove("args") {
            Some(Value::Map(a)) => a,
            _ => return Err(bad("args must be a map")),
        };
        Ok(Message {
            kind,
            request_id,
            args,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame of {0} bytes exceeds the 16 MiB limit")]
    FrameTooLarge(usize),
    #[error("undecodable frame: {0}")]
    Decode(DecodeError),
    #[error("connection closed mid-frame")]
    Truncated,
    #[error("i/o error: {0}")]
    Io(String),
}

impl FrameError {
    pub fn code(&self) -> &'static str {
        match self {
            FrameError::FrameTooLarge(_) => "FrameTooLarge",
            FrameError::Decode(_) => "DecodeError",
            FrameError::Truncated => "Truncated",
            FrameError::Io(_) => "IoError",
        }
    }
}

pub fn encode_frame(m: &Message) -> Result<Vec<u8>, FrameError> {
    let body = codec::encode_value(&m.to_value());
    if body.len() > MAX_FRAME {
        return Err(FrameError::FrameTooLarge(body.len()));
    }
    Ok(codec::frame(body.as_bytes()))
}

pub fn decode_body(body: &[u8]) -> Result<Message, FrameError> {
    Message::from_value(codec::decode_value(body).map_err(FrameError::Decode)?)
}

/// Decodes the frame at the start of `buf`. `Ok(None)` means more bytes are
/// needed; otherwise returns the message and the bytes it used.
pub fn decode_frame(buf: &[u8]) -> Result<Option<(Message, usize)>, FrameError> {
    match codec::split_frame(buf) {
        FrameSplit::Complete(body, used) => Ok(Some((decode_body(body)?, used))),
        FrameSplit::Incomplete => Ok(None),
        FrameSplit::TooLarge(n) => Err(FrameError::FrameTooLarge(n)),
    }
}

/// Reads one raw frame body. `Ok(None)` on a clean end of stream between
/// frames. Oversized frames are refused before their body is read.
pub async fn read_frame<R: AsyncRead + Unpin>(r: &mut R) -> Result<Option<Vec<u8>>, FrameError> {
    let mut prefix = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = r.read(&mut prefix[got..]).await.map_err(io_err)?;
        if n == 0 {
            return if got == 0 { Ok(None) } else { Err(FrameError::Truncated) };
        }
        got += n;
    }
    let len = u32::from_be_bytes(prefix) as usize;
    if len > MAX_FRAME {
        return Err(FrameError::FrameTooLarge(len));
    }
    let mut body = vec![0u8; len];
    match r.read_exact(&mut body).await {
        Ok(_) => Ok(Some(body)),
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => Err(FrameError::Truncated),
        Err(e) => Err(io_err(e)),
    }
}

pub async fn read_message<R: AsyncRead + Unpin>(r: &mut R) -> Result<Option<Message>, FrameError> {
    match read_frame(r).await? {
        Some(body) => decode_body(&body).map(Some),
        None => Ok(None),
    }
}

fn io_err(e: std::io::Error) -> FrameError {
    FrameError::Io(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_exact() {
        let m = Message::new("Hello", 1).arg("version", 1i64);
        let bytes = encode_frame(&m).unwrap();
        let body = br#"{"args":{"version":1},"kind":"Hello","request_id":1}"#;
        assert_eq!(&bytes[..4], &(body.len() as u32).to_be_bytes());
        assert_eq!(&bytes[4..], body);
        assert_eq!(decode_frame(&bytes).unwrap(), Some((m, bytes.len())));
        assert_eq!(decode_frame(&bytes[..bytes.len() - 1]).unwrap(), None);
    }

    #[test]
    fn oversized_frames() {
        let big = Message::new("X", 1).arg("b", Value::Str("a".repeat(MAX_FRAME)));
        assert!(matches!(encode_frame(&big), Err(FrameError::FrameTooLarge(_))));
        let prefix = ((MAX_FRAME + 1) as u32).to_be_bytes();
        assert_eq!(decode_frame(&prefix), Err(FrameError::FrameTooLarge(MAX_FRAME + 1)));
    }

    #[test]
    fn shape_checks() {
        for text in [
            r#"[]"#,
            r#"{"args":{},"kind":"","request_id":1}"#,
            r#"{"args":{},"kind":"A","request_id":-1}"#,
            r#"{"args":[],"kind":"A","request_id":1}"#,
            r#"{"args":{},"kind":"A","request_id":1,"x":1}"#,
            r#"{"args":{},"kind":"A"}"#,
        ] {
            assert!(decode_body(text.as_bytes()).is_err(), "{text}");
        }
    }

    #[tokio::test]
    async fn reads_from_stream() {
        let m = Message::new("Push", 9).arg("proxy_id", 3i64);
        let mut bytes = encode_frame(&m).unwrap();
        bytes.extend(encode_frame(&m).unwrap());
        let mut r = &bytes[..];
        assert_eq!(read_message(&mut r).await.unwrap(), Some(m.clone()));
        assert_eq!(read_message(&mut r).await.unwrap(), Some(m));
        assert_eq!(read_message(&mut r).await.unwrap(), None);
        let mut torn = &bytes[..6];
        assert_eq!(read_message(&mut torn).await, Err(FrameError::Truncated));
        let mut torn = &bytes[..2];
        assert_eq!(read_message(&mut torn).await, Err(FrameError::Truncated));
    }
}
