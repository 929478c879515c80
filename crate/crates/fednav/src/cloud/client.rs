//! Synchronous request/response client for the registry protocol.

use super::format::ModelFile;
use super::protocol::Message;
use super::CloudError;
use crate::nn::NetworkParameters;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::time::Duration;

pub struct CloudClient {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl CloudClient {
    /// Connects and identifies itself with a HELLO exchange.
    pub fn connect(addr: &str, robot_id: &str) -> Result<Self, CloudError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_read_timeout(Some(Duration::from_secs(600)))?;
        let writer = stream.try_clone()?;
        let mut client = Self {
            reader: BufReader::new(stream),
            writer,
        };
        match client.request(&Message::Hello {
            robot_id: robot_id.to_string(),
        })? {
            Message::Ack { .. } => Ok(client),
            other => Err(unexpected(other)),
        }
    }

    fn request(&mut self, msg: &Message) -> Result<Message, CloudError> {
        self.writer.write_all(msg.to_line().as_bytes())?;
        self.writer.flush()?;
        let mut line = String::new();
        let n = self.reader.read_line(&mut line)?;
        if n == 0 {
            return Err(CloudError::Protocol("server closed the connection".into()));
        }
        Message::parse(line.trim_end())
    }

    /// Fetches a read-only snapshot of the current shared model.
    pub fn download_shared(&mut self) -> Result<(u32, NetworkParameters), CloudError> {
        match self.request(&Message::DownloadShared {})? {
            Message::SharedModel { generation, params } => Ok((generation, params.to_params()?)),
            other => Err(unexpected(other)),
        }
    }

    /// Uploads a private model; returns the upload id.
    pub fn upload_private(
        &mut self,
        params: &NetworkParameters,
        env_tag: &str,
    ) -> Result<String, CloudError> {
        match self.request(&Message::UploadPrivate {
            params: ModelFile::from_params(params),
            env_tag: env_tag.to_string(),
        })? {
            Message::Ack { upload_id } => Ok(upload_id),
            other => Err(unexpected(other)),
        }
    }
}

/// One-shot download on a fresh connection.
pub fn download(addr: &str, robot_id: &str) -> Result<(u32, NetworkParameters), CloudError> {
    CloudClient::connect(addr, robot_id)?.download_shared()
}

/// One-shot upload on a fresh connection.
pub fn upload(
    addr: &str,
    robot_id: &str,
    params: &NetworkParameters,
    env_tag: &str,
) -> Result<String, CloudError> {
    CloudClient::connect(addr, robot_id)?.upload_private(params, env_tag)
}

fn unexpected(msg: Message) -> CloudError {
    match msg {
        Message::Error { code, detail } => CloudError::Server { code, detail },
        other => CloudError::Protocol(format!("unexpected response type {:?}", kind(&other))),
    }
}

fn kind(msg: &Message) -> &'static str {
    match msg {
        Message::Hello { .. } => "HELLO",
        Message::DownloadShared {} => "DOWNLOAD_SHARED",
        Message::SharedModel { .. } => "SHARED_MODEL",
        Message::UploadPrivate { .. } => "UPLOAD_PRIVATE",
        Message::Ack { .. } => "ACK",
        Message::Error { .. } => "ERROR",
    }
}
