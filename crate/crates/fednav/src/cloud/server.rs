//! TCP front end for the registry: newline-delimited JSON messages, one
//! thread per client session, graceful shutdown.

use super::protocol::Message;
use super::registry::{FusionPolicy, Registry};
use super::CloudError;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

pub struct ServerHandle {
    pub addr: SocketAddr,
    registry: Arc<Registry>,
    shutdown: Arc<AtomicBool>,
    accept_thread: Option<JoinHandle<()>>,
    sessions: Arc<Mutex<Vec<JoinHandle<()>>>>,
    streams: Arc<Mutex<Vec<TcpStream>>>,
}

impl ServerHandle {
    pub fn registry(&self) -> &Arc<Registry> {
        &self.registry
    }

    /// Stops accepting, closes live sessions, and joins all threads.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shutdown.store(true, Ordering::SeqCst);
        // Unblock the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.accept_thread.take() {
            let _ = t.join();
        }
        for s in self.streams.lock().unwrap().drain(..) {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
        for t in self.sessions.lock().unwrap().drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.accept_thread.is_some() {
            self.stop();
        }
    }
}

/// Binds and serves the registry. Pass port 0 to pick a free port; the
/// chosen address is in the returned handle.
pub fn serve(
    bind: &str,
    registry: Arc<Registry>,
    policy: FusionPolicy,
) -> Result<ServerHandle, CloudError> {
    let listener = TcpListener::bind(bind)?;
    let addr = listener.local_addr()?;
    let shutdown = Arc::new(AtomicBool::new(false));
    let sessions: Arc<Mutex<Vec<JoinHandle<()>>>> = Arc::new(Mutex::new(Vec::new()));
    let streams: Arc<Mutex<Vec<TcpStream>>> = Arc::new(Mutex::new(Vec::new()));

    if let FusionPolicy::EverySeconds(period) = policy {
        let reg = registry.clone();
        let stop = shutdown.clone();
        std::thread::spawn(move || {
            let mut last = Instant::now();
            while !stop.load(Ordering::SeqCst) {
                std::thread::sleep(Duration::from_millis(50));
                if last.elapsed().as_secs_f64() >= period && reg.pending_len() > 0 {
                    let _ = reg.trigger_fusion();
                    last = Instant::now();
                }
            }
        });
    }

    let accept_thread = {
        let registry = registry.clone();
        let shutdown = shutdown.clone();
        let sessions = sessions.clone();
        let streams = streams.clone();
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                if shutdown.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                if let Ok(clone) = stream.try_clone() {
                    streams.lock().unwrap().push(clone);
                }
                let registry = registry.clone();
                let handle = std::thread::spawn(move || {
                    let _ = handle_session(stream, &registry, policy);
                });
                sessions.lock().unwrap().push(handle);
            }
        })
    };

    Ok(ServerHandle {
        addr,
        registry,
        shutdown,
        accept_thread: Some(accept_thread),
        sessions,
        streams,
    })
}

fn handle_session(
    stream: TcpStream,
    registry: &Arc<Registry>,
    policy: FusionPolicy,
) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    let mut robot_id = String::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let response = match Message::parse(&line) {
            Ok(request) => {
                if let Message::Hello { robot_id: id } = &request {
                    robot_id = id.clone();
                }
                handle_request(request, &robot_id, registry, policy)
            }
            Err(e) => Message::Error {
                code: "bad_request".into(),
                detail: e.to_string(),
            },
        };
        writer.write_all(response.to_line().as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

fn handle_request(
    request: Message,
    robot_id: &str,
    registry: &Arc<Registry>,
    policy: FusionPolicy,
) -> Message {
    match request {
        Message::Hello { robot_id } => Message::Ack {
            upload_id: format!("hello:{robot_id}"),
        },
        Message::DownloadShared {} => {
            let record = registry.current();
            Message::SharedModel {
                generation: record.generation,
                params: super::format::ModelFile::from_params(&record.params),
            }
        }
        Message::UploadPrivate { params, env_tag } => match params.to_params() {
            Ok(net) => {
                let upload_id = registry.enqueue_upload(net, robot_id, &env_tag);
                if let FusionPolicy::EveryNUploads(n) = policy {
                    if registry.pending_len() >= n {
                        let reg = registry.clone();
                        std::thread::spawn(move || {
                            let _ = reg.trigger_fusion();
                        });
                    }
                }
                Message::Ack { upload_id }
            }
            Err(e) => Message::Error {
                code: "bad_model".into(),
                detail: e.to_string(),
            },
        },
        // Server-to-client messages arriving as requests are misuse.
        other => Message::Error {
            code: "unexpected_message".into(),
            detail: format!("not a request: {other:?}"),
        },
    }
}
