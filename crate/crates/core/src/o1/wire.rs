//! Newline-delimited JSON frames carrying NETCONF-style CM operations and
//! O1 PM reports.
//!
//! Each frame is one line: `{"msgId": <int>, "kind": "<KIND>", "payload": {...}}`.

use serde::{Deserialize, Serialize};
use tokio_util::codec::LinesCodec;

use crate::intent::NetworkTopology;
use crate::sim::{AppliedChange, CellConfig, PmReport};

/// Frames longer than this are rejected.
pub const MAX_FRAME_BYTES: usize = 64 * 1024;

pub fn codec() -> LinesCodec {
    LinesCodec::new_with_max_length(MAX_FRAME_BYTES)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    #[serde(rename = "msgId")]
    pub msg_id: u64,
    #[serde(flatten)]
    pub body: Body,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Body {
    GetConfig(GetConfig),
    EditConfig(EditConfig),
    PmSubscribe(PmSubscribe),
    PmReport(PmReport),
    Ack(Ack),
    Error(ErrorPayload),
}

impl Body {
    pub fn kind(&self) -> MessageKind {
        match self {
            Body::GetConfig(_) => MessageKind::GetConfig,
            Body::EditConfig(_) => MessageKind::EditConfig,
            Body::PmSubscribe(_) => MessageKind::PmSubscribe,
            Body::PmReport(_) => MessageKind::PmReport,
            Body::Ack(_) => MessageKind::Ack,
            Body::Error(_) => MessageKind::Error,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    GetConfig,
    EditConfig,
    PmSubscribe,
    PmReport,
    Ack,
    Error,
}

impl MessageKind {
    pub fn is_request(self) -> bool {
        matches!(self, MessageKind::GetConfig | MessageKind::EditConfig | MessageKind::PmSubscribe)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GetConfig {
    pub object_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EditConfig {
    pub object_path: String,
    pub parameter: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PmSubscribe {
    /// `None` subscribes to every cell.
    pub cells: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Subscribed {
    pub subscribed_cells: Vec<String>,
}

/// Operation result. Variants have disjoint required fields, so the
/// untagged encoding decodes unambiguously.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Ack {
    Config(CellConfig),
    Applied(AppliedChange),
    Topology(NetworkTopology),
    Subscribed(Subscribed),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ErrorCode {
    UnknownCell,
    UnknownObject,
    UnknownParameter,
    OutOfRange,
    BadRequest,
    FrameTooLarge,
}

impl std::fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        std::fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPayload {
    pub code: ErrorCode,
    pub message: String,
}

#[derive(Debug, thiserror::Error)]
#[error("undecodable frame: {0}")]
pub struct DecodeError(pub String);

pub fn encode(msg: &WireMessage) -> String {
    serde_json::to_string(msg).expect("wire messages serialize")
}

pub fn decode(line: &str) -> Result<WireMessage, DecodeError> {
    serde_json::from_str(line).map_err(|e| DecodeError(e.to_string()))
}

/// Best-effort msgId recovery from a frame that failed to decode.
pub fn salvage_msg_id(line: &str) -> u64 {
    serde_json::from_str::<serde_json::Value>(line)
        .ok()
        .and_then(|v| v.get("msgId").and_then(|m| m.as_u64()))
        .unwrap_or(0)
}

/// Splits `SubNetwork_1/Cell_7` into `("SubNetwork_1", Some("Cell_7"))`.
pub fn split_object_path(path: &str) -> (&str, Option<&str>) {
    match path.split_once('/') {
        Some((sub, cell)) => (sub, Some(cell)),
        None => (path, None),
    }
}

pub fn object_path(subnetwork: &str, cell: &str) -> String {
    format!("{subnetwork}/{cell}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_layout_is_exact() {
        let msg = WireMessage {
            msg_id: 7,
            body: Body::GetConfig(GetConfig {
                object_path: "SubNetwork_1/Cell_1".into(),
            }),
        };
        assert_eq!(
            encode(&msg),
            r#"{"msgId":7,"kind":"GET_CONFIG","payload":{"objectPath":"SubNetwork_1/Cell_1"}}"#
        );
        let sub = WireMessage {
            msg_id: 1,
            body: Body::PmSubscribe(PmSubscribe { cells: None }),
        };
        assert_eq!(encode(&sub), r#"{"msgId":1,"kind":"PM_SUBSCRIBE","payload":{"cells":null}}"#);
        let err = WireMessage {
            msg_id: 2,
            body: Body::Error(ErrorPayload {
                code: ErrorCode::OutOfRange,
                message: "x".into(),
            }),
        };
        assert_eq!(
            encode(&err),
            r#"{"msgId":2,"kind":"ERROR","payload":{"code":"OutOfRange","message":"x"}}"#
        );
    }

    #[test]
    fn ack_variants_decode_to_themselves() {
        let acks = [
            Ack::Config(CellConfig {
                cell_id: "Cell_1".into(),
                tx_power_dbm: 30.0,
                min_dbm: 10.0,
                max_dbm: 40.0,
                step_dbm: 1.0,
            }),
            Ack::Applied(AppliedChange {
                cell_id: "Cell_1".into(),
                parameter: "txPower".into(),
                old_value: 30.0,
                new_value: 20.0,
                effective_tick: 12,
            }),
            Ack::Subscribed(Subscribed {
                subscribed_cells: vec!["Cell_1".into()],
            }),
            Ack::Topology(NetworkTopology {
                subnetwork: "SubNetwork_1".into(),
                cells: vec!["Cell_1".into()],
                aliases: Default::default(),
            }),
        ];
        for ack in acks {
            let msg = WireMessage {
                msg_id: 3,
                body: Body::Ack(ack),
            };
            assert_eq!(decode(&encode(&msg)).unwrap(), msg);
        }
    }

    #[test]
    fn garbage_is_rejected() {
        assert!(decode("not json").is_err());
        assert!(decode(r#"{"msgId":1,"kind":"REBOOT","payload":{}}"#).is_err());
        assert_eq!(salvage_msg_id(r#"{"msgId":9,"kind":"REBOOT"}"#), 9);
        assert_eq!(salvage_msg_id("nope"), 0);
    }

    #[test]
    fn object_paths() {
        assert_eq!(split_object_path("SubNetwork_1/Cell_7"), ("SubNetwork_1", Some("Cell_7")));
        assert_eq!(split_object_path("SubNetwork_1"), ("SubNetwork_1", None));
    }
}
