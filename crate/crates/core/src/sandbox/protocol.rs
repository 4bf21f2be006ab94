//! Line-delimited JSON messages exchanged with a kernel worker over stdio.

use serde::{Deserialize, Serialize};

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Request {
    Handshake,
    Execute { cell_id: String, code: String },
    Shutdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamName {
    Stdout,
    Stderr,
}

impl StreamName {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Stdout => "stdout",
            Self::Stderr => "stderr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResultStatus {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Response {
    Hello {
        worker: String,
        proto: u32,
    },
    Stream {
        cell_id: String,
        name: StreamName,
        text: String,
    },
    Result {
        cell_id: String,
        status: ResultStatus,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ename: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        evalue: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        traceback: Option<Vec<String>>,
    },
}

/// Serializes one message as a single line (no trailing newline). JSON
/// string escaping guarantees the payload itself contains no raw newline.
pub fn encode<T: Serialize>(msg: &T) -> String {
    serde_json::to_string(msg).expect("protocol messages serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_shapes() {
        assert_eq!(encode(&Request::Handshake), r#"{"type":"handshake"}"#);
        assert_eq!(
            encode(&Request::Execute { cell_id: "c1".into(), code: "x = 1\nprint(x)".into() }),
            r#"{"type":"execute","cell_id":"c1","code":"x = 1\nprint(x)"}"#
        );
        assert_eq!(encode(&Request::Shutdown), r#"{"type":"shutdown"}"#);
        let hello: Response = serde_json::from_str(r#"{"type":"hello","worker":"w","proto":1}"#).unwrap();
        assert_eq!(hello, Response::Hello { worker: "w".into(), proto: 1 });
        let ok: Response = serde_json::from_str(r#"{"type":"result","cell_id":"c","status":"ok"}"#).unwrap();
        assert_eq!(encode(&ok), r#"{"type":"result","cell_id":"c","status":"ok"}"#);
        let s = Response::Stream { cell_id: "c".into(), name: StreamName::Stderr, text: "w\n".into() };
        assert_eq!(encode(&s), r#"{"type":"stream","cell_id":"c","name":"stderr","text":"w\n"}"#);
    }
}
