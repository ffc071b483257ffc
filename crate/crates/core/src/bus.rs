//! In-process publish/subscribe bus with per-topic ordering and a log of
//! every publication, plus NDJSON replay into a bus.

use std::collections::{BTreeMap, VecDeque};
use std::io::BufRead;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use crate::event::{deserialize_event, serialize_event, Event, EventError, Topic};

#[derive(Debug, thiserror::Error)]
pub enum BusError {
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("{kind} events belong on `{expected}`, not `{got}`")]
    WrongTopic {
        kind: crate::event::EventKind,
        expected: Topic,
        got: Topic,
    },
    #[error(transparent)]
    InvalidEvent(#[from] EventError),
    #[error("line {line}: {source}")]
    MalformedEvent { line: usize, source: EventError },
    #[error("line {line}: timestamp {timestamp} is earlier than the previous {previous}")]
    NonMonotoneTimestamps {
        line: usize,
        timestamp: u64,
        previous: u64,
    },
    #[error("read error: {0}")]
    Io(#[from] std::io::Error),
}

type Mailbox = Arc<Mutex<VecDeque<(u64, Event)>>>;

enum Subscriber {
    Mailbox(Mailbox),
    Channel(Sender<(u64, Event)>),
}

/// Handle to a mailbox subscription.
#[derive(Clone)]
pub struct Subscription {
    pub topic: Topic,
    mailbox: Mailbox,
}

impl Subscription {
    /// Takes all delivered events, oldest first, with their sequence numbers.
    pub fn drain(&self) -> Vec<(u64, Event)> {
        self.mailbox.lock().expect("mailbox poisoned").drain(..).collect()
    }

    pub fn drain_events(&self) -> Vec<Event> {
        self.drain().into_iter().map(|(_, e)| e).collect()
    }
}

/// Synchronous bus: `publish` returns after every subscriber of the topic
/// has received the event.
#[derive(Default)]
pub struct Bus {
    subscribers: BTreeMap<Topic, Vec<Subscriber>>,
    sequence: BTreeMap<Topic, u64>,
    log: Vec<Event>,
}

impl Bus {
    pub fn new() -> Self {
        Bus::default()
    }

    pub fn subscribe(&mut self, topic: Topic) -> Subscription {
        let mailbox: Mailbox = Arc::default();
        self.subscribers
            .entry(topic)
            .or_default()
            .push(Subscriber::Mailbox(mailbox.clone()));
        Subscription { topic, mailbox }
    }

    /// Subscription delivered over a channel, for consumers on other threads.
    pub fn subscribe_channel(&mut self, topic: Topic) -> Receiver<(u64, Event)> {
        let (tx, rx) = channel();
        self.subscribers
            .entry(topic)
            .or_default()
            .push(Subscriber::Channel(tx));
        rx
    }

    /// One channel fed by several topics, in publication order.
    pub fn subscribe_channel_multi(&mut self, topics: &[Topic]) -> Receiver<(u64, Event)> {
        let (tx, rx) = channel();
        for t in topics {
            self.subscribers
                .entry(*t)
                .or_default()
                .push(Subscriber::Channel(tx.clone()));
        }
        rx
    }

    /// Publishes `e` on `topic` and returns its per-topic sequence number
    /// (starting at 1).
    pub fn publish(&mut self, topic: Topic, e: Event) -> Result<u64, BusError> {
        e.validate()?;
        if e.topic() != topic {
            return Err(BusError::WrongTopic {
                kind: e.kind,
                expected: e.topic(),
                got: topic,
            });
        }
        let seq = self.sequence.entry(topic).or_insert(0);
        *seq += 1;
        let seq = *seq;
        if let Some(subs) = self.subscribers.get_mut(&topic) {
            // Channels whose receiver is gone are dropped.
            subs.retain(|s| match s {
                Subscriber::Mailbox(m) => {
                    m.lock().expect("mailbox poisoned").push_back((seq, e.clone()));
                    true
                }
                Subscriber::Channel(tx) => tx.send((seq, e.clone())).is_ok(),
            });
        }
        self.log.push(e);
        Ok(seq)
    }

    /// [`Bus::publish`] with the topic given by name.
    pub fn publish_named(&mut self, topic: &str, e: Event) -> Result<u64, BusError> {
        let t: Topic = topic
            .parse()
            .map_err(|_| BusError::UnknownTopic(topic.to_string()))?;
        self.publish(t, e)
    }

    /// Publishes on the event's own topic.
    pub fn publish_event(&mut self, e: Event) -> Result<u64, BusError> {
        self.publish(e.topic(), e)
    }

    pub fn sequence(&self, topic: Topic) -> u64 {
        self.sequence.get(&topic).copied().unwrap_or(0)
    }

    pub fn log(&self) -> &[Event] {
        &self.log
    }

    /// The log as NDJSON.
    pub fn log_bytes(&self) -> Vec<u8> {
        self.log.iter().flat_map(serialize_event).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ReplaySpeed {
    AsFastAsPossible,
    /// Sleep `scale` wall seconds per simulated second between events.
    RealTime { scale: f64 },
}

/// Parses NDJSON events, reporting the first bad line (1-based). Blank
/// lines are skipped.
pub fn parse_ndjson(reader: impl BufRead) -> Result<Vec<Event>, BusError> {
    let mut out: Vec<Event> = Vec::new();
    for (i, line) in reader.split(b'\n').enumerate() {
        let line = line?;
        let line_no = i + 1;
        if line.iter().all(u8::is_ascii_whitespace) {
            continue;
        }
        let e = deserialize_event(&line).map_err(|source| BusError::MalformedEvent {
            line: line_no,
            source,
        })?;
        if let Some(prev) = out.last() {
            if e.timestamp < prev.timestamp {
                return Err(BusError::NonMonotoneTimestamps {
                    line: line_no,
                    timestamp: e.timestamp,
                    previous: prev.timestamp,
                });
            }
        }
        out.push(e);
    }
    Ok(out)
}

/// Publishes every event of an NDJSON stream on its topic, in file order.
/// Nothing is published if any line is invalid.
pub fn replay(reader: impl BufRead, bus: &mut Bus, speed: ReplaySpeed) -> Result<usize, BusError> {
    let events = parse_ndjson(reader)?;
    let mut last = None;
    let n = events.len();
    for e in events {
        if let (ReplaySpeed::RealTime { scale }, Some(prev)) = (speed, last) {
            let dt = (e.timestamp - prev) as f64 * scale;
            if dt > 0.0 {
                std::thread::sleep(Duration::from_secs_f64(dt));
            }
        }
        last = Some(e.timestamp);
        bus.publish_event(e)?;
    }
    Ok(n)
}
