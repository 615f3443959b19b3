//! Exact stochastic simulation (Gillespie direct method).
//!
//! Paths are streamed event by event to a [`PathObserver`]; nothing is
//! materialised unless the observer records it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CrnModel, ModelError, State};
use crate::rng::RngStream;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("parameter vector has {got} entries, model declares {expected}")]
    ParamCount { expected: usize, got: usize },
    #[error("initial state has {got} entries, model has {expected} species")]
    StateLength { expected: usize, got: usize },
}

/// One jump `x --R, sojourn--> x'` of a path.
#[derive(Debug, Clone, Copy)]
pub struct PathEvent<'a> {
    /// Time spent in the pre-event state.
    pub sojourn: f64,
    pub reaction: usize,
    pub new_state: &'a [u64],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Consumer of a path, fed online by a simulator or a replay.
pub trait PathObserver {
    fn begin(&mut self, init: &[u64]) -> Control;

    fn event(&mut self, event: &PathEvent<'_>) -> Control;

    /// No further event follows; the path rests `tail` more time units in
    /// its last state (`+∞` on deadlock).
    fn end(&mut self, _tail: f64) {}
}

impl<O: PathObserver + ?Sized> PathObserver for &mut O {
    fn begin(&mut self, init: &[u64]) -> Control {
        (**self).begin(init)
    }

    fn event(&mut self, event: &PathEvent<'_>) -> Control {
        (**self).event(event)
    }

    fn end(&mut self, tail: f64) {
        (**self).end(tail)
    }
}

/// Feeds both observers; stops as soon as either asks to.
impl<A: PathObserver, B: PathObserver> PathObserver for (A, B) {
    fn begin(&mut self, init: &[u64]) -> Control {
        let a = self.0.begin(init);
        let b = self.1.begin(init);
        if a == Control::Stop || b == Control::Stop {
            Control::Stop
        } else {
            Control::Continue
        }
    }

    fn event(&mut self, event: &PathEvent<'_>) -> Control {
        let a = self.0.event(event);
        let b = self.1.event(event);
        if a == Control::Stop || b == Control::Stop {
            Control::Stop
        } else {
            Control::Continue
        }
    }

    fn end(&mut self, tail: f64) {
        self.0.end(tail);
        self.1.end(tail);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyBounds {
    pub max_time: f64,
    pub max_events: u64,
}

impl SafetyBounds {
    pub const DEFAULT_MAX_EVENTS: u64 = 100_000_000;

    /// `100 × target period × periods` time units and 10⁸ events.
    pub fn for_period_target(target: f64, periods: u32) -> Self {
        SafetyBounds {
            max_time: 100.0 * target * f64::from(periods),
            max_events: Self::DEFAULT_MAX_EVENTS,
        }
    }

    pub fn unbounded() -> Self {
        SafetyBounds {
            max_time: f64::INFINITY,
            max_events: u64::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    /// The observer asked to stop.
    Stopped,
    /// Every propensity is zero.
    Deadlock,
    MaxTime,
    MaxEvents,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NextEvent {
    Fire { sojourn: f64, reaction: usize },
    Deadlock,
}

/// Direct-method step from precomputed propensities and two uniforms:
/// `u_time ∈ (0, 1]` for the sojourn, `u_select ∈ [0, 1)` for the channel.
pub fn select_event(propensities: &[f64], total: f64, u_time: f64, u_select: f64) -> NextEvent {
    if total <= 0.0 {
        return NextEvent::Deadlock;
    }
    let sojourn = -u_time.ln() / total;
    let target = u_select * total;
    let mut acc = 0.0;
    let mut last_enabled = 0;
    for (j, &a) in propensities.iter().enumerate() {
        if a > 0.0 {
            acc += a;
            last_enabled = j;
            if target < acc {
                return NextEvent::Fire {
                    sojourn,
                    reaction: j,
                };
            }
        }
    }
    // rounding left `target` at or above the accumulated sum
    NextEvent::Fire {
        sojourn,
        reaction: last_enabled,
    }
}

/// Draws the next event of `model` from state `x`.
pub fn next_event(
    model: &CrnModel,
    theta: &[f64],
    x: &[u64],
    rng: &mut RngStream,
) -> Result<NextEvent, SimError> {
    let mut props = Vec::with_capacity(model.reactions.len());
    let total = model.propensities(x, theta, &mut props)?;
    Ok(draw(&props, total, rng))
}

fn draw(props: &[f64], total: f64, rng: &mut RngStream) -> NextEvent {
    if total <= 0.0 {
        return NextEvent::Deadlock;
    }
    let u_time = rng.uniform_pos();
    let u_select = rng.uniform();
    select_event(props, total, u_time, u_select)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathSummary {
    pub termination: Termination,
    pub events: u64,
    /// Time of the last processed event.
    pub time: f64,
}

fn check_dims(model: &CrnModel, theta: &[f64], init: &[u64]) -> Result<(), SimError> {
    if theta.len() != model.params.len() {
        return Err(SimError::ParamCount {
            expected: model.params.len(),
            got: theta.len(),
        });
    }
    if init.len() != model.species.len() {
        return Err(SimError::StateLength {
            expected: model.species.len(),
            got: init.len(),
        });
    }
    Ok(())
}

/// Simulates `model` from `init`, streaming events to `observer` until it
/// stops, the chain deadlocks, or a safety bound trips.
pub fn sample_path<O: PathObserver + ?Sized>(
    model: &CrnModel,
    theta: &[f64],
    init: &State,
    observer: &mut O,
    bounds: SafetyBounds,
    rng: &mut RngStream,
) -> Result<PathSummary, SimError> {
    check_dims(model, theta, init.as_slice())?;
    let mut x = init.0.clone();
    let mut props = Vec::with_capacity(model.reactions.len());
    let mut time = 0.0;
    let mut events = 0u64;
    let summary = |termination, events, time| PathSummary {
        termination,
        events,
        time,
    };

    if observer.begin(&x) == Control::Stop {
        return Ok(summary(Termination::Stopped, 0, 0.0));
    }
    loop {
        if events >= bounds.max_events {
            observer.end(0.0);
            return Ok(summary(Termination::MaxEvents, events, time));
        }
        let total = model.propensities(&x, theta, &mut props)?;
        let (sojourn, reaction) = match draw(&props, total, rng) {
            NextEvent::Deadlock => {
                observer.end(f64::INFINITY);
                return Ok(summary(Termination::Deadlock, events, time));
            }
            NextEvent::Fire { sojourn, reaction } => (sojourn, reaction),
        };
        if time + sojourn > bounds.max_time {
            observer.end(bounds.max_time - time);
            return Ok(summary(Termination::MaxTime, events, time));
        }
        model.apply_in_place(reaction, &mut x)?;
        time += sojourn;
        events += 1;
        let control = observer.event(&PathEvent {
            sojourn,
            reaction,
            new_state: &x,
        });
        if control == Control::Stop {
            return Ok(summary(Termination::Stopped, events, time));
        }
    }
}

/// Anything that can produce numbered paths for an observer.
pub trait PathSource: Sync {
    fn run_path(
        &self,
        index: u64,
        observer: &mut dyn PathObserver,
    ) -> Result<PathSummary, SimError>;
}

/// SSA paths of one parameterisation, path `i` seeded by `(seed, i)`.
#[derive(Debug, Clone)]
pub struct SsaSource<'m> {
    pub model: &'m CrnModel,
    pub theta: Vec<f64>,
    pub init: State,
    pub bounds: SafetyBounds,
    pub seed: u64,
}

impl PathSource for SsaSource<'_> {
    fn run_path(
        &self,
        index: u64,
        observer: &mut dyn PathObserver,
    ) -> Result<PathSummary, SimError> {
        let mut rng = RngStream::derive(self.seed, &[index]);
        sample_path(
            self.model,
            &self.theta,
            &self.init,
            observer,
            self.bounds,
            &mut rng,
        )
    }
}

/// A fixed, pre-recorded path replayed identically for every index.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayPath {
    pub init: State,
    /// `(sojourn, reaction, state after the event)`.
    pub events: Vec<(f64, usize, State)>,
    /// Rest time after the last event (`+∞` for an absorbed path).
    pub tail: f64,
}

impl ReplayPath {
    /// Builds the states by applying each reaction of `steps` in turn.
    pub fn from_reactions(
        model: &CrnModel,
        init: State,
        steps: &[(f64, usize)],
    ) -> Result<Self, ModelError> {
        let mut x = init.clone();
        let mut events = Vec::with_capacity(steps.len());
        for &(sojourn, j) in steps {
            x = model.apply_reaction(j, &x)?;
            events.push((sojourn, j, x.clone()));
        }
        Ok(ReplayPath {
            init,
            events,
            tail: f64::INFINITY,
        })
    }

    pub fn replay<O: PathObserver + ?Sized>(&self, observer: &mut O) -> PathSummary {
        let mut time = 0.0;
        if observer.begin(self.init.as_slice()) == Control::Stop {
            return PathSummary {
                termination: Termination::Stopped,
                events: 0,
                time,
            };
        }
        for (k, (sojourn, reaction, state)) in self.events.iter().enumerate() {
            time += sojourn;
            let control = observer.event(&PathEvent {
                sojourn: *sojourn,
                reaction: *reaction,
                new_state: state.as_slice(),
            });
            if control == Control::Stop {
                return PathSummary {
                    termination: Termination::Stopped,
                    events: k as u64 + 1,
                    time,
                };
            }
        }
        observer.end(self.tail);
        PathSummary {
            termination: if self.tail.is_infinite() {
                Termination::Deadlock
            } else {
                Termination::MaxTime
            },
            events: self.events.len() as u64,
            time,
        }
    }
}

impl PathSource for ReplayPath {
    fn run_path(
        &self,
        _index: u64,
        observer: &mut dyn PathObserver,
    ) -> Result<PathSummary, SimError> {
        Ok(self.replay(observer))
    }
}

/// Piecewise-constant trajectory recorded from a path.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    /// Absolute time of each row; row 0 is the initial state at time 0.
    pub times: Vec<f64>,
    /// Reaction that produced each row (`None` for the initial row).
    pub reactions: Vec<Option<usize>>,
    pub states: Vec<Vec<u64>>,
}

impl Trace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `(time, value)` rows of one species.
    pub fn column(&self, species: usize) -> Vec<(f64, u64)> {
        self.times
            .iter()
            .zip(&self.states)
            .map(|(&t, s)| (t, s[species]))
            .collect()
    }

    /// Turns the recording back into a replayable path.
    pub fn to_replay(&self, tail: f64) -> ReplayPath {
        let mut events = Vec::with_capacity(self.len().saturating_sub(1));
        for k in 1..self.len() {
            events.push((
                self.times[k] - self.times[k - 1],
                self.reactions[k].unwrap_or(0),
                State(self.states[k].clone()),
            ));
        }
        ReplayPath {
            init: State(self.states.first().cloned().unwrap_or_default()),
            events,
            tail,
        }
    }
}

/// Observer that keeps every state, optionally capped at `limit` events.
#[derive(Debug, Clone, Default)]
pub struct Recorder {
    pub trace: Trace,
    time: f64,
    limit: Option<u64>,
}

impl Recorder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Stops the path after `limit` events.
    pub fn with_limit(limit: u64) -> Self {
        Recorder {
            limit: Some(limit),
            ..Self::default()
        }
    }
}

impl PathObserver for Recorder {
    fn begin(&mut self, init: &[u64]) -> Control {
        self.time = 0.0;
        self.trace = Trace::default();
        self.trace.times.push(0.0);
        self.trace.reactions.push(None);
        self.trace.states.push(init.to_vec());
        match self.limit {
            Some(0) => Control::Stop,
            _ => Control::Continue,
        }
    }

    fn event(&mut self, event: &PathEvent<'_>) -> Control {
        self.time += event.sojourn;
        self.trace.times.push(self.time);
        self.trace.reactions.push(Some(event.reaction));
        self.trace.states.push(event.new_state.to_vec());
        match self.limit {
            Some(l) if self.trace.len() as u64 > l => Control::Stop,
            _ => Control::Continue,
        }
    }
}
