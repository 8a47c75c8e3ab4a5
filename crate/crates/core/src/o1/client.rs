use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::{TcpStream, ToSocketAddrs};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio_util::codec::{FramedRead, FramedWrite, LinesCodec};
use tracing::{debug, warn};

use super::wire::{self, Ack, Body, EditConfig, GetConfig, PmSubscribe, WireMessage};
use super::O1Error;
use crate::intent::NetworkTopology;
use crate::sim::{AppliedChange, CellConfig, PmReport};

pub const DEFAULT_REQUEST_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Default)]
struct PendingState {
    waiters: HashMap<u64, oneshot::Sender<Body>>,
    closed: bool,
}

type Pending = Arc<Mutex<PendingState>>;
type PmSink = Arc<Mutex<Option<mpsc::UnboundedSender<PmReport>>>>;

struct Writer {
    sink: FramedWrite<OwnedWriteHalf, LinesCodec>,
    next_id: u64,
}

struct Inner {
    writer: tokio::sync::Mutex<Writer>,
    pending: Pending,
    pm: PmSink,
    timeout: Duration,
    reader: JoinHandle<()>,
}

impl Drop for Inner {
    fn drop(&mut self) {
        self.reader.abort();
    }
}

/// CM/PM client. Cheap to clone; requests from any clone are correlated
/// independently by msgId.
#[derive(Clone)]
pub struct O1Client {
    inner: Arc<Inner>,
}

impl O1Client {
    pub async fn connect(addr: impl ToSocketAddrs) -> Result<Self, O1Error> {
        Self::connect_with_timeout(addr, DEFAULT_REQUEST_TIMEOUT).await
    }

    pub async fn connect_with_timeout(addr: impl ToSocketAddrs, timeout: Duration) -> Result<Self, O1Error> {
        let stream = tokio::time::timeout(timeout, TcpStream::connect(addr))
            .await
            .map_err(|_| O1Error::Timeout)?
            .map_err(O1Error::Connect)?;
        let _ = stream.set_nodelay(true);
        let (read, write) = stream.into_split();
        let pending: Pending = Arc::default();
        let pm: PmSink = Arc::default();
        let reader = tokio::spawn(read_loop(
            FramedRead::new(read, wire::codec()),
            pending.clone(),
            pm.clone(),
        ));
        Ok(Self {
            inner: Arc::new(Inner {
                writer: tokio::sync::Mutex::new(Writer {
                    sink: FramedWrite::new(write, wire::codec()),
                    next_id: 0,
                }),
                pending,
                pm,
                timeout,
                reader,
            }),
        })
    }

    pub fn timeout(&self) -> Duration {
        self.inner.timeout
    }

    /// Sends one request and waits for its ACK or ERROR.
    pub async fn request(&self, body: Body) -> Result<Ack, O1Error> {
        let (tx, rx) = oneshot::channel();
        let id = {
            let mut w = self.inner.writer.lock().await;
            w.next_id += 1;
            let id = w.next_id;
            {
                let mut p = self.inner.pending.lock().unwrap();
                if p.closed {
                    return Err(O1Error::Disconnected);
                }
                p.waiters.insert(id, tx);
            }
            let line = wire::encode(&WireMessage { msg_id: id, body });
            if let Err(e) = w.sink.send(line).await {
                self.inner.pending.lock().unwrap().waiters.remove(&id);
                return Err(O1Error::Io(e.to_string()));
            }
            id
        };
        match tokio::time::timeout(self.inner.timeout, rx).await {
            Err(_) => {
                self.inner.pending.lock().unwrap().waiters.remove(&id);
                Err(O1Error::Timeout)
            }
            Ok(Err(_)) => Err(O1Error::Disconnected),
            Ok(Ok(Body::Ack(ack))) => Ok(ack),
            Ok(Ok(Body::Error(e))) => Err(O1Error::Remote {
                code: e.code,
                message: e.message,
            }),
            Ok(Ok(other)) => Err(O1Error::Protocol(format!("unexpected {:?} reply", other.kind()))),
        }
    }

    /// `<get-config>` on `SubNetwork_x/Cell_y`.
    pub async fn get_config(&self, object_path: &str) -> Result<CellConfig, O1Error> {
        match self
            .request(Body::GetConfig(GetConfig {
                object_path: object_path.to_string(),
            }))
            .await?
        {
            Ack::Config(c) => Ok(c),
            other => Err(O1Error::Protocol(format!("expected cell config, got {other:?}"))),
        }
    }

    /// `<get-config>` on the subnetwork root lists its cells.
    pub async fn get_topology(&self, subnetwork: &str) -> Result<NetworkTopology, O1Error> {
        match self
            .request(Body::GetConfig(GetConfig {
                object_path: subnetwork.to_string(),
            }))
            .await?
        {
            Ack::Topology(t) => Ok(t),
            other => Err(O1Error::Protocol(format!("expected topology, got {other:?}"))),
        }
    }

    /// `<edit-config>` of one parameter.
    pub async fn edit_config(&self, object_path: &str, parameter: &str, value: f64) -> Result<AppliedChange, O1Error> {
        match self
            .request(Body::EditConfig(EditConfig {
                object_path: object_path.to_string(),
                parameter: parameter.to_string(),
                value,
            }))
            .await?
        {
            Ack::Applied(c) => Ok(c),
            other => Err(O1Error::Protocol(format!("expected applied change, got {other:?}"))),
        }
    }

    /// Subscribes to future PM reports. A new subscription replaces any
    /// earlier one on this connection.
    pub async fn pm_subscribe(&self, cells: Option<Vec<String>>) -> Result<PmSubscription, O1Error> {
        let (tx, rx) = mpsc::unbounded_channel();
        *self.inner.pm.lock().unwrap() = Some(tx);
        match self.request(Body::PmSubscribe(PmSubscribe { cells })).await {
            Ok(Ack::Subscribed(s)) => Ok(PmSubscription {
                cells: s.subscribed_cells,
                rx,
            }),
            Ok(other) => Err(O1Error::Protocol(format!("expected subscription ack, got {other:?}"))),
            Err(e) => {
                *self.inner.pm.lock().unwrap() = None;
                Err(e)
            }
        }
    }
}

async fn read_loop(mut frames: FramedRead<tokio::net::tcp::OwnedReadHalf, LinesCodec>, pending: Pending, pm: PmSink) {
    while let Some(frame) = frames.next().await {
        let line = match frame {
            Ok(l) => l,
            Err(e) => {
                warn!("O1 read failed: {e}");
                break;
            }
        };
        let msg = match wire::decode(&line) {
            Ok(m) => m,
            Err(e) => {
                warn!("dropping frame: {e}");
                continue;
            }
        };
        match msg.body {
            Body::PmReport(report) => {
                if let Some(tx) = pm.lock().unwrap().as_ref() {
                    let _ = tx.send(report);
                }
            }
            body @ (Body::Ack(_) | Body::Error(_)) => {
                if let Some(tx) = pending.lock().unwrap().waiters.remove(&msg.msg_id) {
                    let _ = tx.send(body);
                } else {
                    debug!(msg_id = msg.msg_id, "reply for unknown request");
                }
            }
            other => debug!("ignoring {:?} from server", other.kind()),
        }
    }
    // Dropping the senders wakes every waiter with Disconnected.
    {
        let mut p = pending.lock().unwrap();
        p.closed = true;
        p.waiters.clear();
    }
    pm.lock().unwrap().take();
}

/// Stream of PM reports delivered in window order.
pub struct PmSubscription {
    cells: Vec<String>,
    rx: mpsc::UnboundedReceiver<PmReport>,
}

impl PmSubscription {
    /// Canonical ids of the subscribed cells.
    pub fn cells(&self) -> &[String] {
        &self.cells
    }

    pub async fn next(&mut self, timeout: Duration) -> Result<PmReport, O1Error> {
        match tokio::time::timeout(timeout, self.rx.recv()).await {
            Err(_) => Err(O1Error::Timeout),
            Ok(None) => Err(O1Error::Disconnected),
            Ok(Some(r)) => Ok(r),
        }
    }

    /// Next report for `cell` whose window starts at or after `min_start_tick`.
    pub async fn next_for(&mut self, cell: &str, min_start_tick: u64, timeout: Duration) -> Result<PmReport, O1Error> {
        let deadline = tokio::time::Instant::now() + timeout;
        loop {
            let left = deadline.saturating_duration_since(tokio::time::Instant::now());
            let r = self.next(left).await?;
            if r.cell_id == cell && r.window_start_tick >= min_start_tick {
                return Ok(r);
            }
        }
    }
}
