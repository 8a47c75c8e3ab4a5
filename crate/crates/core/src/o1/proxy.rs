//! TCP relay that counts client-to-server message kinds, for asserting
//! which operations a run actually issued.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, Mutex};

use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::task::JoinHandle;

use super::wire::{self, MessageKind};
use super::O1Error;

pub struct CountingProxy {
    addr: SocketAddr,
    counts: Arc<Mutex<HashMap<MessageKind, u64>>>,
    task: JoinHandle<()>,
}

impl CountingProxy {
    pub async fn start(upstream: SocketAddr) -> Result<Self, O1Error> {
        let listener = TcpListener::bind("127.0.0.1:0").await.map_err(O1Error::Bind)?;
        let addr = listener.local_addr().map_err(O1Error::Bind)?;
        let counts: Arc<Mutex<HashMap<MessageKind, u64>>> = Arc::default();
        let shared = counts.clone();
        let task = tokio::spawn(async move {
            while let Ok((client, _)) = listener.accept().await {
                let counts = shared.clone();
                tokio::spawn(async move {
                    if let Ok(server) = TcpStream::connect(upstream).await {
                        relay(client, server, counts).await;
                    }
                });
            }
        });
        Ok(Self { addr, counts, task })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn count(&self, kind: MessageKind) -> u64 {
        self.counts.lock().unwrap().get(&kind).copied().unwrap_or(0)
    }
}

impl Drop for CountingProxy {
    fn drop(&mut self) {
        self.task.abort();
    }
}

async fn relay(client: TcpStream, server: TcpStream, counts: Arc<Mutex<HashMap<MessageKind, u64>>>) {
    let (client_read, mut client_write) = client.into_split();
    let (mut server_read, mut server_write) = server.into_split();
    let upstream = async move {
        let mut lines = BufReader::new(client_read).lines();
        while let Ok(Some(line)) = lines.next_line().await {
            if let Ok(msg) = wire::decode(&line) {
                *counts.lock().unwrap().entry(msg.body.kind()).or_default() += 1;
            }
            if server_write.write_all(line.as_bytes()).await.is_err()
                || server_write.write_all(b"\n").await.is_err()
            {
                break;
            }
        }
        let _ = server_write.shutdown().await;
    };
    let downstream = async move {
        let _ = tokio::io::copy(&mut server_read, &mut client_write).await;
        let _ = client_write.shutdown().await;
    };
    tokio::join!(upstream, downstream);
}
