//! Websocket bridge between the bus and GUI clients.
//!
//! Every client gets the current schema frames on connect, then every
//! state, plan, traces, stats, schema and error frame published after it
//! joined. Param and command frames from clients go onto the inbound log.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use tungstenite::{Message, WebSocket};

use super::bus::{Bus, Topic};
use super::messages::{ErrorMsg, Inbound, NodeMessage, SchemaScope, Sequenced};
use super::NodeHandle;
use crate::error::Result;

const POLL: Duration = Duration::from_millis(5);

pub struct BridgeHandle {
    node: NodeHandle,
    addr: SocketAddr,
}

impl BridgeHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("ws://{}", self.addr)
    }

    pub fn is_running(&self) -> bool {
        self.node.is_running()
    }

    /// Stops accepting, closes every client and waits for the threads.
    pub fn stop(&mut self) {
        self.node.stop();
    }
}

/// Binds `addr` and starts serving. Fails immediately if the address is
/// unavailable.
pub fn spawn_bridge(bus: Arc<Bus>, addr: impl ToSocketAddrs) -> Result<BridgeHandle> {
    let listener = TcpListener::bind(addr)?;
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;
    let node = NodeHandle::spawn("bridge", move |stop| accept_loop(listener, bus, stop))?;
    Ok(BridgeHandle { node, addr: local })
}

fn accept_loop(listener: TcpListener, bus: Arc<Bus>, stop: Arc<AtomicBool>) {
    let mut clients = Vec::new();
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, peer)) => {
                let (bus, stop) = (bus.clone(), stop.clone());
                let spawned = thread::Builder::new()
                    .name(format!("bridge-{peer}"))
                    .spawn(move || {
                        if let Err(e) = serve(stream, &bus, &stop) {
                            log::debug!("client {peer} disconnected: {e}");
                        }
                    });
                match spawned {
                    Ok(h) => clients.push(h),
                    Err(e) => log::error!("cannot start client thread: {e}"),
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(20)),
            Err(e) => {
                log::warn!("accept failed: {e}");
                thread::sleep(Duration::from_millis(20));
            }
        }
        clients.retain(|h: &thread::JoinHandle<()>| !h.is_finished());
    }
    for h in clients {
        let _ = h.join();
    }
}

struct Cursor(u64);

impl Cursor {
    fn at<T: Sequenced>(topic: &Topic<T>) -> Self {
        Self(topic.seq())
    }

    fn drain<T: Sequenced + Clone>(
        &mut self,
        topic: &Topic<T>,
        wrap: impl Fn(T) -> NodeMessage,
        out: &mut Vec<NodeMessage>,
    ) {
        for (seq, msg) in topic.since(self.0) {
            self.0 = seq;
            out.push(wrap((*msg).clone()));
        }
    }
}

fn is_timeout(e: &tungstenite::Error) -> bool {
    matches!(e, tungstenite::Error::Io(io) if matches!(io.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut))
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &NodeMessage) -> tungstenite::Result<()> {
    match ws.send(Message::text(msg.to_json())) {
        Err(e) if is_timeout(&e) => Ok(()),
        other => other,
    }
}

fn serve(stream: TcpStream, bus: &Bus, stop: &AtomicBool) -> tungstenite::Result<()> {
    stream.set_nonblocking(false)?;
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let mut ws = tungstenite::accept(stream).map_err(|e| match e {
        tungstenite::HandshakeError::Failure(e) => e,
        tungstenite::HandshakeError::Interrupted(_) => tungstenite::Error::ConnectionClosed,
    })?;
    ws.get_mut().set_read_timeout(Some(POLL))?;
    ws.get_mut().set_write_timeout(Some(Duration::from_secs(2)))?;

    let mut state = Cursor::at(&bus.state);
    let mut plan = Cursor::at(&bus.plan);
    let mut traces = Cursor::at(&bus.traces);
    let mut stats = Cursor::at(&bus.stats);
    let mut errors = Cursor::at(&bus.errors);
    let mut schemas: Vec<Cursor> = SchemaScope::ALL.iter().map(|_| Cursor(0)).collect();

    let mut out = Vec::new();
    loop {
        if stop.load(Ordering::SeqCst) {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }

        for (scope, cursor) in SchemaScope::ALL.iter().zip(&mut schemas) {
            cursor.drain(bus.schema(*scope), NodeMessage::Schema, &mut out);
        }
        state.drain(&bus.state, NodeMessage::State, &mut out);
        plan.drain(&bus.plan, NodeMessage::Plan, &mut out);
        traces.drain(&bus.traces, NodeMessage::Traces, &mut out);
        stats.drain(&bus.stats, NodeMessage::Stats, &mut out);
        errors.drain(&bus.errors, NodeMessage::Error, &mut out);
        for msg in out.drain(..) {
            send(&mut ws, &msg)?;
        }

        match ws.read() {
            Ok(Message::Text(text)) => {
                if let Some(reply) = route(bus, &text) {
                    send(&mut ws, &reply)?;
                }
            }
            Ok(Message::Binary(_)) => {
                send(&mut ws, &NodeMessage::Error(ErrorMsg::new("binary frames are not supported")))?;
            }
            Ok(Message::Close(_)) => {
                // tungstenite queues the close reply; flushing sends it.
                let _ = ws.flush();
                return Ok(());
            }
            Ok(_) => {}
            Err(e) if is_timeout(&e) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e),
        }
        match ws.flush() {
            Err(e) if !is_timeout(&e) => return Err(e),
            _ => {}
        }
    }
}

/// Queues a client frame on the bus, or returns the error frame to send
/// back to that client.
fn route(bus: &Bus, text: &str) -> Option<NodeMessage> {
    let reject = |m: String| Some(NodeMessage::Error(ErrorMsg::new(m)));
    match NodeMessage::parse(text) {
        Ok(NodeMessage::Param(p)) => {
            bus.inbound.publish(Inbound::Param(p));
            None
        }
        Ok(NodeMessage::Command(c)) => {
            bus.inbound.publish(Inbound::Command(c));
            None
        }
        Ok(_) => reject("clients may only send `param` and `command` frames".into()),
        Err(e) => reject(format!("malformed frame: {e}")),
    }
}
