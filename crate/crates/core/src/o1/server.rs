//! O1 server wrapping a [`Network`].
//!
//! A single state task owns the simulator. Connection reader tasks forward
//! decoded requests to it over a channel; it answers each request and pushes
//! PM reports straight into per-connection writer queues, so every
//! connection sees its responses in request order.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::time::Duration;

use futures::{SinkExt, StreamExt};
use tokio::net::{TcpListener, TcpStream, ToSocketAddrs};
use tokio::sync::{mpsc, oneshot, watch};
use tokio::task::JoinHandle;
use tokio_util::codec::{FramedRead, FramedWrite, LinesCodecError};
use tracing::{debug, info, warn};

use super::wire::{
    self, Ack, Body, ErrorCode, ErrorPayload, PmSubscribe, Subscribed, WireMessage,
};
use super::O1Error;
use crate::sim::{Network, PmReport, SimError};

/// How the simulator clock advances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pacing {
    /// One tick per wall-clock period.
    RealTime(Duration),
    /// Ticks only advance through [`ServerHandle::advance`].
    Manual,
}

impl Pacing {
    pub fn from_tick_millis(ms: u64) -> Self {
        if ms == 0 {
            Pacing::Manual
        } else {
            Pacing::RealTime(Duration::from_millis(ms))
        }
    }
}

enum Outbound {
    Reply(WireMessage),
    Push(PmReport),
    Close,
}

enum Command {
    Connect {
        conn: u64,
        tx: mpsc::UnboundedSender<Outbound>,
    },
    Request {
        conn: u64,
        msg: WireMessage,
    },
    Disconnect {
        conn: u64,
    },
    Advance {
        ticks: u64,
        done: oneshot::Sender<Vec<PmReport>>,
    },
    Now {
        reply: oneshot::Sender<u64>,
    },
}

pub struct ServerHandle {
    addr: SocketAddr,
    commands: mpsc::UnboundedSender<Command>,
    shutdown: watch::Sender<bool>,
    tasks: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Advances the clock by `ticks` and returns the reports broadcast.
    pub async fn advance(&self, ticks: u64) -> Result<Vec<PmReport>, O1Error> {
        let (done, rx) = oneshot::channel();
        self.commands
            .send(Command::Advance { ticks, done })
            .map_err(|_| O1Error::Disconnected)?;
        rx.await.map_err(|_| O1Error::Disconnected)
    }

    /// Index of the next tick to be simulated.
    pub async fn now(&self) -> Result<u64, O1Error> {
        let (reply, rx) = oneshot::channel();
        self.commands
            .send(Command::Now { reply })
            .map_err(|_| O1Error::Disconnected)?;
        rx.await.map_err(|_| O1Error::Disconnected)
    }

    pub async fn shutdown(mut self) {
        self.stop();
        for t in self.tasks.drain(..) {
            let _ = t.await;
        }
    }

    fn stop(&mut self) {
        let _ = self.shutdown.send(true);
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
        for t in &self.tasks {
            t.abort();
        }
    }
}

/// Binds `addr` and starts serving `network`.
pub async fn serve(network: Network, addr: impl ToSocketAddrs, pacing: Pacing) -> Result<ServerHandle, O1Error> {
    let listener = TcpListener::bind(addr).await.map_err(O1Error::Bind)?;
    let local = listener.local_addr().map_err(O1Error::Bind)?;
    let (cmd_tx, cmd_rx) = mpsc::unbounded_channel();
    let (stop_tx, stop_rx) = watch::channel(false);

    info!(
        addr = %local,
        cells = network.cells().len(),
        granularity_ticks = network.config().pm_granularity_ticks,
        "O1 server listening"
    );
    let state = tokio::spawn(run_state(network, cmd_rx, pacing, stop_rx.clone()));
    let accept = tokio::spawn(accept_loop(listener, cmd_tx.clone(), stop_rx));
    Ok(ServerHandle {
        addr: local,
        commands: cmd_tx,
        shutdown: stop_tx,
        tasks: vec![accept, state],
    })
}

async fn accept_loop(
    listener: TcpListener,
    commands: mpsc::UnboundedSender<Command>,
    mut stop: watch::Receiver<bool>,
) {
    let mut next_conn = 0u64;
    let mut conns: Vec<JoinHandle<()>> = Vec::new();
    loop {
        tokio::select! {
            _ = stop.changed() => break,
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    next_conn += 1;
                    debug!(%peer, conn = next_conn, "client connected");
                    conns.retain(|h| !h.is_finished());
                    conns.push(tokio::spawn(connection(stream, next_conn, commands.clone(), stop.clone())));
                }
                Err(e) => warn!("accept failed: {e}"),
            }
        }
    }
    for c in conns {
        let _ = c.await;
    }
}

async fn connection(
    stream: TcpStream,
    conn: u64,
    commands: mpsc::UnboundedSender<Command>,
    mut stop: watch::Receiver<bool>,
) {
    let (read, write) = stream.into_split();
    let (out_tx, mut out_rx) = mpsc::unbounded_channel::<Outbound>();
    if commands
        .send(Command::Connect {
            conn,
            tx: out_tx.clone(),
        })
        .is_err()
    {
        return;
    }

    let writer = tokio::spawn(async move {
        let mut sink = FramedWrite::new(write, wire::codec());
        let mut push_id = 0u64;
        while let Some(out) = out_rx.recv().await {
            let msg = match out {
                Outbound::Reply(m) => m,
                Outbound::Push(report) => {
                    push_id += 1;
                    WireMessage {
                        msg_id: push_id,
                        body: Body::PmReport(report),
                    }
                }
                Outbound::Close => break,
            };
            if sink.send(wire::encode(&msg)).await.is_err() {
                break;
            }
        }
    });

    let mut frames = FramedRead::new(read, wire::codec());
    loop {
        let frame = tokio::select! {
            _ = stop.changed() => break,
            frame = frames.next() => frame,
        };
        let Some(frame) = frame else { break };
        match frame {
            Ok(line) => match wire::decode(&line) {
                Ok(msg) => {
                    if commands.send(Command::Request { conn, msg }).is_err() {
                        break;
                    }
                }
                Err(e) => {
                    let _ = out_tx.send(Outbound::Reply(error_reply(
                        wire::salvage_msg_id(&line),
                        ErrorCode::BadRequest,
                        e.to_string(),
                    )));
                }
            },
            Err(LinesCodecError::MaxLineLengthExceeded) => {
                let _ = out_tx.send(Outbound::Reply(error_reply(
                    0,
                    ErrorCode::FrameTooLarge,
                    format!("frame exceeds {} bytes", wire::MAX_FRAME_BYTES),
                )));
                break;
            }
            Err(LinesCodecError::Io(e)) => {
                debug!(conn, "read failed: {e}");
                break;
            }
        }
    }
    let _ = commands.send(Command::Disconnect { conn });
    let _ = out_tx.send(Outbound::Close);
    let _ = writer.await;
    debug!(conn, "client disconnected");
}

struct Subscriber {
    cells: Option<Vec<String>>,
}

struct State {
    network: Network,
    conns: HashMap<u64, mpsc::UnboundedSender<Outbound>>,
    subscribers: HashMap<u64, Subscriber>,
}

async fn run_state(
    network: Network,
    mut commands: mpsc::UnboundedReceiver<Command>,
    pacing: Pacing,
    mut stop: watch::Receiver<bool>,
) {
    let mut state = State {
        network,
        conns: HashMap::new(),
        subscribers: HashMap::new(),
    };
    let mut ticker = match pacing {
        Pacing::RealTime(period) => {
            let mut t = tokio::time::interval_at(tokio::time::Instant::now() + period, period);
            t.set_missed_tick_behavior(tokio::time::MissedTickBehavior::Delay);
            Some(t)
        }
        Pacing::Manual => None,
    };
    loop {
        let cmd = match ticker.as_mut() {
            Some(t) => tokio::select! {
                biased;
                _ = stop.changed() => break,
                cmd = commands.recv() => cmd,
                _ = t.tick() => {
                    state.advance(1);
                    continue;
                }
            },
            None => tokio::select! {
                _ = stop.changed() => break,
                cmd = commands.recv() => cmd,
            },
        };
        let Some(cmd) = cmd else { break };
        match cmd {
            Command::Connect { conn, tx } => {
                state.conns.insert(conn, tx);
            }
            Command::Disconnect { conn } => {
                state.conns.remove(&conn);
                state.subscribers.remove(&conn);
            }
            Command::Request { conn, msg } => {
                let reply = state.handle(conn, msg);
                if let Some(tx) = state.conns.get(&conn) {
                    let _ = tx.send(Outbound::Reply(reply));
                }
            }
            Command::Advance { ticks, done } => {
                let reports = state.advance(ticks);
                let _ = done.send(reports);
            }
            Command::Now { reply } => {
                let _ = reply.send(state.network.now());
            }
        }
    }
}

fn error_reply(msg_id: u64, code: ErrorCode, message: String) -> WireMessage {
    WireMessage {
        msg_id,
        body: Body::Error(ErrorPayload { code, message }),
    }
}

fn sim_error(msg_id: u64, e: SimError) -> WireMessage {
    let code = match e {
        SimError::UnknownCell(_) => ErrorCode::UnknownCell,
        SimError::UnknownParameter(_) => ErrorCode::UnknownParameter,
        SimError::OutOfRange { .. } => ErrorCode::OutOfRange,
        SimError::Config(_) => ErrorCode::BadRequest,
    };
    error_reply(msg_id, code, e.to_string())
}

impl State {
    fn advance(&mut self, ticks: u64) -> Vec<PmReport> {
        let reports = self.network.step(ticks);
        for r in &reports {
            info!(
                cell = %r.cell_id,
                window = r.window_start_tick,
                tx_dbm = r.tx_power_dbm_at_window_end,
                ee = r.energy_efficiency_bits_per_joule,
                "PM window"
            );
            for (conn, sub) in &self.subscribers {
                let wanted = sub.cells.as_ref().is_none_or(|c| c.contains(&r.cell_id));
                if wanted {
                    if let Some(tx) = self.conns.get(conn) {
                        let _ = tx.send(Outbound::Push(r.clone()));
                    }
                }
            }
        }
        reports
    }

    fn check_subnetwork(&self, msg_id: u64, sub: &str) -> Result<(), WireMessage> {
        if sub == self.network.config().subnetwork {
            Ok(())
        } else {
            Err(error_reply(
                msg_id,
                ErrorCode::UnknownObject,
                format!("unknown object instance {sub:?}"),
            ))
        }
    }

    fn handle(&mut self, conn: u64, msg: WireMessage) -> WireMessage {
        let id = msg.msg_id;
        let ack = |a: Ack| WireMessage {
            msg_id: id,
            body: Body::Ack(a),
        };
        match msg.body {
            Body::GetConfig(req) => {
                let (sub, cell) = wire::split_object_path(&req.object_path);
                if let Err(e) = self.check_subnetwork(id, sub) {
                    return e;
                }
                match cell {
                    None => ack(Ack::Topology(self.network.topology())),
                    Some(cell) => match self.network.read_config(cell) {
                        Ok(cfg) => ack(Ack::Config(cfg)),
                        Err(e) => sim_error(id, e),
                    },
                }
            }
            Body::EditConfig(req) => {
                let (sub, cell) = wire::split_object_path(&req.object_path);
                if let Err(e) = self.check_subnetwork(id, sub) {
                    return e;
                }
                let Some(cell) = cell else {
                    return error_reply(id, ErrorCode::UnknownObject, "edit-config needs a cell path".into());
                };
                match self.network.apply_config(cell, &req.parameter, req.value) {
                    Ok(change) => {
                        info!(
                            cell = %change.cell_id,
                            old = change.old_value,
                            new = change.new_value,
                            effective_tick = change.effective_tick,
                            "edit-config applied"
                        );
                        ack(Ack::Applied(change))
                    }
                    Err(e) => sim_error(id, e),
                }
            }
            Body::PmSubscribe(PmSubscribe { cells }) => {
                let resolved = match cells {
                    None => None,
                    Some(list) => {
                        let mut out = Vec::with_capacity(list.len());
                        for c in &list {
                            match self.network.resolve(c) {
                                Ok(canonical) => out.push(canonical.to_string()),
                                Err(e) => return sim_error(id, e),
                            }
                        }
                        Some(out)
                    }
                };
                let subscribed_cells = resolved
                    .clone()
                    .unwrap_or_else(|| self.network.topology().cells);
                self.subscribers.insert(conn, Subscriber { cells: resolved });
                ack(Ack::Subscribed(Subscribed { subscribed_cells }))
            }
            other => error_reply(
                id,
                ErrorCode::BadRequest,
                format!("{:?} is not a request kind", other.kind()),
            ),
        }
    }
}
