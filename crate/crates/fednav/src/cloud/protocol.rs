//! Newline-delimited JSON request/response messages. Every request gets
//! exactly one response.

use super::format::ModelFile;
use super::CloudError;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Message {
    #[serde(rename = "HELLO")]
    Hello { robot_id: String },
    #[serde(rename = "DOWNLOAD_SHARED")]
    DownloadShared {},
    #[serde(rename = "SHARED_MODEL")]
    SharedModel { generation: u32, params: ModelFile },
    #[serde(rename = "UPLOAD_PRIVATE")]
    UploadPrivate { params: ModelFile, env_tag: String },
    #[serde(rename = "ACK")]
    Ack { upload_id: String },
    #[serde(rename = "ERROR")]
    Error { code: String, detail: String },
}

impl Message {
    pub fn to_line(&self) -> String {
        let mut line = serde_json::to_string(self).expect("message serializes");
        line.push('\n');
        line
    }

    pub fn parse(line: &str) -> Result<Self, CloudError> {
        serde_json::from_str(line).map_err(|e| CloudError::Protocol(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::NetworkParameters;

    #[test]
    fn messages_round_trip_as_single_lines() {
        let params = NetworkParameters::init_random(&[3, 2], 1).unwrap();
        let msgs = [
            Message::Hello {
                robot_id: "robot-1".into(),
            },
            Message::DownloadShared {},
            Message::SharedModel {
                generation: 4,
                params: ModelFile::from_params(&params),
            },
            Message::UploadPrivate {
                params: ModelFile::from_params(&params),
                env_tag: "env-2".into(),
            },
            Message::Ack {
                upload_id: "u7".into(),
            },
            Message::Error {
                code: "bad_request".into(),
                detail: "oops".into(),
            },
        ];
        for m in msgs {
            let line = m.to_line();
            assert_eq!(line.matches('\n').count(), 1);
            assert!(line.ends_with('\n'));
            Message::parse(line.trim_end()).unwrap();
        }
    }

    #[test]
    fn unknown_message_field_is_a_protocol_error() {
        assert!(matches!(
            Message::parse(r#"{"type":"FROB","x":1}"#),
            Err(CloudError::Protocol(_))
        ));
        assert!(Message::parse("not json").is_err());
    }
}
