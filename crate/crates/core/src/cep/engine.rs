use std::collections::{BTreeMap, VecDeque};

use super::{all_hold, sigmoid, CepError, CertaintyRule, PatternDefinition, PatternKind, PatternScope};
use crate::event::{attr, Event, EventKind, IdGen};

pub type LocationKey = (PatternScope, u32);

#[derive(Debug, Clone, Default, PartialEq)]
struct WindowState {
    /// (opened_at, matches)
    window: Option<(u64, usize)>,
    suppressed: bool,
    rearm: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct TrendState {
    open: bool,
    prev: Option<f64>,
    run: usize,
    episode: Option<u64>,
    episodes: u64,
}

#[derive(Debug, Clone, Default, PartialEq)]
struct AggregateState {
    buffer: VecDeque<(u64, Vec<Option<f64>>)>,
}

#[derive(Debug, Clone, PartialEq)]
enum PatternState {
    Window(WindowState),
    Trend(TrendState),
    Aggregate(AggregateState),
}

/// Stateful event processing network. Each (scope, location) has its own
/// independent pattern state.
#[derive(Debug, Clone)]
pub struct Engine {
    patterns: Vec<PatternDefinition>,
    states: BTreeMap<LocationKey, Vec<PatternState>>,
    ids: IdGen,
}

fn scope_of(e: &Event) -> PatternScope {
    match e.scope() {
        crate::event::Scope::Cell => PatternScope::Cell,
        crate::event::Scope::Ramp => PatternScope::Ramp,
    }
}

/// Canonical processing order of inputs.
pub(crate) fn canonical_sort(events: &mut [Event]) {
    events.sort_by(|a, b| {
        (a.timestamp, scope_of(a) as u8, a.location, a.kind, &a.id).cmp(&(
            b.timestamp,
            scope_of(b) as u8,
            b.location,
            b.kind,
            &b.id,
        ))
    });
}

impl Engine {
    pub fn new(patterns: Vec<PatternDefinition>) -> Result<Self, CepError> {
        for p in &patterns {
            p.validate()?;
        }
        Ok(Engine {
            patterns,
            states: BTreeMap::new(),
            ids: IdGen::new("cep"),
        })
    }

    pub fn patterns(&self) -> &[PatternDefinition] {
        &self.patterns
    }

    fn fresh_states(&self) -> Vec<PatternState> {
        self.patterns
            .iter()
            .map(|p| match p.kind {
                PatternKind::ThresholdWindow => PatternState::Window(WindowState::default()),
                PatternKind::Trend => PatternState::Trend(TrendState::default()),
                PatternKind::Aggregate => PatternState::Aggregate(AggregateState::default()),
            })
            .collect()
    }

    /// Runs every pattern over `inputs` (typically one tick of events) and
    /// returns derived events ordered by (timestamp, location, kind,
    /// pattern). Input order does not matter.
    pub fn epn_step(&mut self, inputs: &[Event]) -> Vec<Event> {
        let mut sorted = inputs.to_vec();
        canonical_sort(&mut sorted);
        let mut derived: Vec<(Event, usize)> = Vec::new();
        for e in &sorted {
            let key = (scope_of(e), e.location);
            if !self.patterns.iter().any(|p| p.accepts(e)) {
                continue;
            }
            if !self.states.contains_key(&key) {
                let fresh = self.fresh_states();
                self.states.insert(key, fresh);
            }
            let states = self.states.get_mut(&key).expect("inserted above");
            let mut out = Vec::new();
            for (i, p) in self.patterns.iter().enumerate() {
                if p.scope != key.0 || !p.accepts(e) {
                    continue;
                }
                if let Some(d) = on_input(p, &mut states[i], e) {
                    out.push((d, i));
                }
            }
            for (d, _) in &out {
                for (p, st) in self.patterns.iter().zip(states.iter_mut()) {
                    if p.scope == key.0 {
                        on_derived(p, st, d.kind, d.timestamp);
                    }
                }
            }
            derived.extend(out);
        }
        derived.sort_by(|(a, pa), (b, pb)| {
            (a.timestamp, a.location, a.kind, *pa).cmp(&(b.timestamp, b.location, b.kind, *pb))
        });
        derived
            .into_iter()
            .map(|(mut d, _)| {
                d.id = self.ids.next_id();
                d
            })
            .collect()
    }

    /// Processes a whole stream tick by tick.
    pub fn run(&mut self, events: &[Event]) -> Vec<Event> {
        let mut sorted = events.to_vec();
        canonical_sort(&mut sorted);
        let mut out = Vec::new();
        for chunk in sorted.chunk_by(|a, b| a.timestamp == b.timestamp) {
            out.extend(self.epn_step(chunk));
        }
        out
    }
}

fn copy_attrs(p: &PatternDefinition, e: &Event, mut d: Event) -> Event {
    for a in &p.copy {
        if let Some(v) = e.attr(a) {
            d = d.with_attr(a, v);
        }
    }
    d
}

fn on_input(p: &PatternDefinition, st: &mut PatternState, e: &Event) -> Option<Event> {
    let t = e.timestamp;
    match st {
        PatternState::Window(w) => {
            if w.suppressed {
                return None;
            }
            if let Some((t0, _)) = w.window {
                if t > t0 + p.window_seconds {
                    w.window = None;
                }
            }
            let sat = all_hold(&p.predicates, e);
            if w.window.is_none() {
                let reopen = if p.open_on.is_empty() { sat } else { w.rearm };
                if reopen {
                    w.window = Some((t, 0));
                }
            }
            let (_, count) = w.window.as_mut()?;
            if !sat {
                return None;
            }
            *count += 1;
            if *count < p.match_count {
                return None;
            }
            w.window = None;
            w.rearm = false;
            if p.once_per_episode {
                w.suppressed = true;
            }
            Some(copy_attrs(p, e, Event::new("", p.output, t, e.location)))
        }
        PatternState::Trend(tr) => {
            let v = e.attr(p.attribute.as_deref()?)?;
            if !tr.open {
                tr.open = true;
                tr.prev = Some(v);
                tr.run = 0;
                tr.episode = None;
                return None;
            }
            match tr.prev {
                Some(prev) if v > prev => tr.run += 1,
                _ => {
                    tr.run = 0;
                    tr.episode = None;
                }
            }
            tr.prev = Some(v);
            if tr.run < p.match_count || !all_hold(&p.gate, e) {
                return None;
            }
            let episode = *tr.episode.get_or_insert_with(|| {
                tr.episodes += 1;
                tr.episodes
            });
            let mut d = copy_attrs(p, e, Event::new("", p.output, t, e.location))
                .with_attr(attr::RUN_LENGTH, tr.run as f64)
                .with_attr(attr::EPISODE, episode as f64);
            if let CertaintyRule::Sigmoid { a, n0 } = p.certainty {
                d = d.with_certainty(sigmoid(tr.run as f64, a, n0));
            }
            Some(d)
        }
        PatternState::Aggregate(ag) => {
            ag.buffer
                .push_back((t, p.copy.iter().map(|a| e.attr(a)).collect()));
            while ag
                .buffer
                .front()
                .is_some_and(|(ts, _)| ts + p.window_seconds <= t)
            {
                ag.buffer.pop_front();
            }
            let mut d = Event::new("", p.output, t, e.location)
                .with_attr(attr::COUNT, ag.buffer.len() as f64);
            for (i, a) in p.copy.iter().enumerate() {
                let vals: Vec<f64> = ag.buffer.iter().filter_map(|(_, v)| v[i]).collect();
                if !vals.is_empty() {
                    let mean = vals.iter().sum::<f64>() / vals.len() as f64;
                    d = d.with_attr(&format!("{a}_avg"), mean);
                }
            }
            Some(d)
        }
    }
}

fn on_derived(p: &PatternDefinition, st: &mut PatternState, kind: EventKind, t: u64) {
    match st {
        PatternState::Window(w) => {
            if p.reset_on.contains(&kind) {
                w.suppressed = false;
                w.window = None;
            }
            if p.close_on.contains(&kind) {
                w.window = None;
            }
            if p.rearm_after.contains(&kind) {
                w.rearm = true;
            }
            if p.open_on.contains(&kind) && w.window.is_none() {
                w.window = Some((t, 0));
            }
        }
        PatternState::Trend(tr) => {
            if p.close_on.contains(&kind) {
                let episodes = tr.episodes;
                *tr = TrendState {
                    episodes,
                    ..TrendState::default()
                };
            }
        }
        PatternState::Aggregate(_) => {}
    }
}
