//! TCP gateway for dashboards: NDJSON out (a snapshot on connect, then
//! every derived and command event), operator actions in.

use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::bus::Bus;
use crate::event::{attr, serialize_event, Event, EventKind, Topic};
use crate::pipeline::Inbound;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct CellSnapshot {
    pub cell: u32,
    /// veh/km
    pub density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RampSnapshot {
    pub ramp: u32,
    /// veh
    pub queue: f64,
    /// veh/h
    pub rate: f64,
    /// Control mode code: 0 inactive, 1 density, 2 density and queue.
    pub mode: f64,
}

/// Network state sent to a client when it connects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct Snapshot {
    pub timestamp: u64,
    pub cells: Vec<CellSnapshot>,
    pub ramps: Vec<RampSnapshot>,
}

/// Non-event frames written by the gateway.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Frame {
    Snapshot(Snapshot),
    Error { message: String },
}

impl Frame {
    pub fn to_line(&self) -> Vec<u8> {
        let mut v = serde_json::to_vec(self).expect("frames serialize");
        v.push(b'\n');
        v
    }
}

/// What a client sends to act on a ramp.
///
/// `action` 0 answers a suggested coordination (`decision` 0 accept,
/// 1 modify, 2 reject); 1 pins the rate to `value`; 2 sets a minimum rate of
/// `value`. Decision 2 on actions 1 and 2 clears the override.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OperatorFrame {
    pub kind: String,
    pub location: u32,
    pub decision: f64,
    pub action: f64,
    pub value: f64,
    #[serde(default)]
    pub id: Option<String>,
}

/// Parses and checks one inbound line.
pub fn parse_operator_frame(line: &str) -> Result<OperatorFrame, String> {
    let f: OperatorFrame = serde_json::from_str(line).map_err(|e| format!("malformed frame: {e}"))?;
    if f.kind != EventKind::OperatorAction.as_str() {
        return Err(format!("unsupported frame kind `{}`", f.kind));
    }
    let code = |name: &str, v: f64| {
        if [0.0, 1.0, 2.0].contains(&v) {
            Ok(())
        } else {
            Err(format!("{name} must be 0, 1 or 2, got {v}"))
        }
    };
    code("decision", f.decision)?;
    code("action", f.action)?;
    if !f.value.is_finite() {
        return Err("value must be finite".into());
    }
    if f.action != 0.0 && f.decision != 2.0 && f.value < 0.0 {
        return Err("rate must be non-negative".into());
    }
    Ok(f)
}

impl OperatorFrame {
    /// The event published on the operator topic; the timestamp is set when
    /// the pipeline takes it off the queue.
    pub fn into_event(self, fallback_id: String) -> Event {
        Event::new(
            self.id.filter(|s| !s.is_empty()).unwrap_or(fallback_id),
            EventKind::OperatorAction,
            0,
            self.location,
        )
        .with_attr(attr::DECISION, self.decision)
        .with_attr(attr::ACTION, self.action)
        .with_attr(attr::VALUE, self.value)
    }
}

type Client = Arc<Mutex<TcpStream>>;

struct Shared {
    clients: Mutex<Vec<Client>>,
    snapshot: Mutex<Snapshot>,
    inbound: Inbound,
    stop: AtomicBool,
    ids: AtomicU64,
}

impl Shared {
    fn broadcast(&self, line: &[u8]) {
        let mut clients = self.clients.lock().expect("clients poisoned");
        clients.retain(|c| c.lock().expect("client poisoned").write_all(line).is_ok());
    }
}

pub struct Gateway {
    addr: SocketAddr,
    shared: Arc<Shared>,
    accept: Option<JoinHandle<()>>,
}

impl Gateway {
    /// Listens on `addr` (port 0 picks a free one). Valid operator frames
    /// are pushed onto `inbound`.
    pub fn bind(addr: &str, inbound: Inbound, initial: Snapshot) -> std::io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let shared = Arc::new(Shared {
            clients: Mutex::new(Vec::new()),
            snapshot: Mutex::new(initial),
            inbound,
            stop: AtomicBool::new(false),
            ids: AtomicU64::new(0),
        });
        let s = shared.clone();
        let accept = std::thread::spawn(move || accept_loop(listener, s));
        Ok(Gateway {
            addr,
            shared,
            accept: Some(accept),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Forwards every derived and command event published on `bus` to all
    /// clients. The forwarding thread ends when the bus is dropped.
    pub fn attach(&self, bus: &mut Bus) {
        let rx = bus.subscribe_channel_multi(&[Topic::Derived, Topic::Commands]);
        let s = self.shared.clone();
        std::thread::spawn(move || {
            for (_, e) in rx {
                s.broadcast(&serialize_event(&e));
            }
        });
    }

    pub fn broadcast(&self, e: &Event) {
        self.shared.broadcast(&serialize_event(e));
    }

    pub fn update_snapshot(&self, s: Snapshot) {
        *self.shared.snapshot.lock().expect("snapshot poisoned") = s;
    }

    pub fn client_count(&self) -> usize {
        self.shared.clients.lock().expect("clients poisoned").len()
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        for c in self.shared.clients.lock().expect("clients poisoned").drain(..) {
            let _ = c.lock().expect("client poisoned").shutdown(std::net::Shutdown::Both);
        }
    }
}

impl Drop for Gateway {
    fn drop(&mut self) {
        self.stop();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    while !shared.stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((stream, _)) => {
                if let Err(e) = register(stream, &shared) {
                    eprintln!("gateway: dropping client: {e}");
                }
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => {
                eprintln!("gateway: accept failed: {e}");
                std::thread::sleep(Duration::from_millis(50));
            }
        }
    }
}

fn register(stream: TcpStream, shared: &Arc<Shared>) -> std::io::Result<()> {
    stream.set_nonblocking(false)?;
    let reader = stream.try_clone()?;
    let client: Client = Arc::new(Mutex::new(stream));
    {
        // Holding the client list while writing the snapshot keeps events
        // published meanwhile from overtaking it.
        let mut clients = shared.clients.lock().expect("clients poisoned");
        let snap = shared.snapshot.lock().expect("snapshot poisoned").clone();
        client
            .lock()
            .expect("client poisoned")
            .write_all(&Frame::Snapshot(snap).to_line())?;
        clients.push(client.clone());
    }
    let s = shared.clone();
    std::thread::spawn(move || read_loop(reader, client, s));
    Ok(())
}

fn read_loop(reader: TcpStream, client: Client, shared: Arc<Shared>) {
    for line in BufReader::new(reader).lines() {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        match parse_operator_frame(&line) {
            Ok(f) => {
                let n = shared.ids.fetch_add(1, Ordering::SeqCst);
                let e = f.into_event(format!("gw-{n}"));
                shared.inbound.lock().expect("inbound poisoned").push_back(e);
            }
            Err(message) => {
                let frame = Frame::Error { message }.to_line();
                if client.lock().expect("client poisoned").write_all(&frame).is_err() {
                    break;
                }
            }
        }
    }
}
