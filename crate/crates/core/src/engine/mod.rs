//! Guarded-action node systems and the schedulers that execute them.
//!
//! A [`NodeProgram`] gives every node an ordered list of rules. One
//! activation of node `i` builds a [`ReadView`] (its own state plus some
//! version of each neighbour's state), fires the first rule whose guard holds
//! on that view and publishes the new local state. Guard and action always
//! see the same view.
//!
//! Staleness is measured in steps: a read of node `j` at step `t` is `s`
//! steps stale when the version read stopped being `j`'s newest at step
//! `t − s` (0 for the newest). The simulation keeps every version that is
//! still within `B` steps, at most `B + 1` per node. The stale-read scheduler
//! hands each reader a uniformly chosen admissible version per neighbour,
//! never older than the one that reader saw at its previous activation.

mod concurrent;
mod lattice;
mod trace;

use std::collections::VecDeque;
use std::fmt;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smallvec::SmallVec;

pub use concurrent::{run_concurrent, ConcurrentReport};
pub use lattice::{check_forbidden_coverage, check_impedance, check_impedance_with};
pub use trace::{parse_trace, trace_export, Trace, TraceEntry};

/// Node ids are 1-based, as in the tree arithmetic of the programs.
pub type NodeId = usize;

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("invalid scheduler configuration: {0}")]
    InvalidConfig(String),
    #[error("initial state has {found} nodes, program has {expected}")]
    StateSize { expected: usize, found: usize },
    #[error("node {0} is not forbidden in the given state")]
    NotForbidden(NodeId),
    #[error("trace parse error on line {line}: {reason}")]
    TraceParse { line: usize, reason: String },
    #[error("cannot parse local state {input:?}: {reason}")]
    StateParse { input: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A node system: per-node ordered rules plus the target predicate.
pub trait NodeProgram: Sync {
    type State: Clone + PartialEq + fmt::Debug + Send + Sync;

    fn node_count(&self) -> usize;

    /// Nodes whose state `node` reads. Must not contain `node` itself.
    fn neighbors(&self, node: NodeId) -> Vec<NodeId>;

    /// Rule names in evaluation order; a rule id is an index into this slice.
    fn rule_names(&self) -> &'static [&'static str];

    fn guard(&self, rule: usize, node: NodeId, view: &ReadView<'_, Self::State>) -> bool;

    /// New local state for `node`. Only called when `guard` holds on `view`.
    fn action(&self, rule: usize, node: NodeId, view: &ReadView<'_, Self::State>) -> Self::State;

    fn zero_state(&self, node: NodeId) -> Self::State;

    /// A state drawn uniformly from the declared domain of every variable.
    fn arbitrary_state(&self, node: NodeId, rng: &mut dyn RngCore) -> Self::State;

    /// The predicate `P` the system must reach.
    fn target(&self, state: &GlobalState<Self::State>) -> bool;

    fn render_state(&self, state: &Self::State) -> String;

    fn parse_state(&self, text: &str) -> Result<Self::State, EngineError>;

    /// First rule whose guard holds, if any.
    fn enabled_rule(&self, node: NodeId, view: &ReadView<'_, Self::State>) -> Option<usize> {
        (0..self.rule_names().len()).find(|&rule| self.guard(rule, node, view))
    }
}

/// Local states of nodes `1..=N`.
#[derive(Clone, PartialEq)]
pub struct GlobalState<S> {
    locals: Vec<S>,
}

impl<S> GlobalState<S> {
    pub fn new(locals: Vec<S>) -> Self {
        GlobalState { locals }
    }

    pub fn len(&self) -> usize {
        self.locals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.locals.is_empty()
    }

    pub fn get(&self, node: NodeId) -> &S {
        &self.locals[node - 1]
    }

    pub fn set(&mut self, node: NodeId, state: S) {
        self.locals[node - 1] = state;
    }

    pub fn iter(&self) -> impl Iterator<Item = (NodeId, &S)> {
        self.locals.iter().enumerate().map(|(k, s)| (k + 1, s))
    }

    pub fn into_locals(self) -> Vec<S> {
        self.locals
    }
}

impl<S: fmt::Debug> fmt::Debug for GlobalState<S> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_map().entries(self.iter()).finish()
    }
}

/// What one activation of `node` gets to read.
pub struct ReadView<'a, S> {
    node: NodeId,
    own: &'a S,
    peers: SmallVec<[(NodeId, &'a S); 4]>,
}

impl<'a, S> ReadView<'a, S> {
    pub fn new(node: NodeId, own: &'a S, peers: impl IntoIterator<Item = (NodeId, &'a S)>) -> Self {
        ReadView {
            node,
            own,
            peers: peers.into_iter().collect(),
        }
    }

    /// A view that reads every neighbour from `state`.
    pub fn fresh(state: &'a GlobalState<S>, node: NodeId, neighbors: &[NodeId]) -> Self {
        ReadView::new(
            node,
            state.get(node),
            neighbors.iter().map(|&j| (j, state.get(j))),
        )
    }

    pub fn node(&self) -> NodeId {
        self.node
    }

    pub fn own(&self) -> &'a S {
        self.own
    }

    /// State of a declared neighbour.
    ///
    /// Panics if `node` was not declared by [`NodeProgram::neighbors`].
    pub fn peer(&self, node: NodeId) -> &'a S {
        self.peers
            .iter()
            .find(|(id, _)| *id == node)
            .map(|(_, s)| *s)
            .unwrap_or_else(|| panic!("node {} read undeclared neighbour {node}", self.node))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchedulerKind {
    /// Every enabled node fires once per round; all reads see the pre-round state.
    Synchronous,
    /// One node per step, fresh reads.
    RandomSerial,
    /// One node per step, reads drawn from the bounded version history.
    StaleRead,
}

impl SchedulerKind {
    pub fn name(self) -> &'static str {
        match self {
            SchedulerKind::Synchronous => "sync",
            SchedulerKind::RandomSerial => "random",
            SchedulerKind::StaleRead => "stale",
        }
    }
}

/// Probability that a serial step is an extra random activation rather than
/// the next node of the round-robin skeleton.
const EXTRA_ACTIVATION_PROBABILITY: f64 = 0.125;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scheduler {
    pub kind: SchedulerKind,
    pub seed: u64,
    /// `B`: how many steps ago a read version may have been superseded.
    pub staleness_bound: u32,
    /// `F`: every schedulable node is activated at least once every `F`
    /// steps. Defaults to twice the node count.
    pub fairness_window: Option<u64>,
}

impl Scheduler {
    pub fn synchronous() -> Self {
        Scheduler {
            kind: SchedulerKind::Synchronous,
            seed: 0,
            staleness_bound: 0,
            fairness_window: None,
        }
    }

    pub fn random_serial(seed: u64) -> Self {
        Scheduler {
            kind: SchedulerKind::RandomSerial,
            seed,
            staleness_bound: 0,
            fairness_window: None,
        }
    }

    pub fn stale_read(seed: u64, staleness_bound: u32) -> Self {
        Scheduler {
            kind: SchedulerKind::StaleRead,
            seed,
            staleness_bound,
            fairness_window: None,
        }
    }

    pub fn with_fairness_window(mut self, window: u64) -> Self {
        self.fairness_window = Some(window);
        self
    }

    fn history_depth(&self) -> usize {
        match self.kind {
            SchedulerKind::StaleRead => self.staleness_bound as usize + 1,
            _ => 1,
        }
    }
}

pub struct RunReport<S> {
    pub final_state: GlobalState<S>,
    /// Present when the run recorded its trace.
    pub trace: Option<Trace<S>>,
    /// No guard holds anywhere on fresh reads of `final_state`.
    pub converged: bool,
    /// Scheduled activations, including those in which no rule fired.
    pub steps: u64,
    /// Activations in which a rule fired.
    pub firings: u64,
    /// Synchronous rounds, or round-robin cycles for the serial schedulers.
    pub rounds: u64,
    pub max_staleness: u32,
    /// Set when a target watch was requested and `P` held after some firing.
    pub target_reached: bool,
}

/// `init` with every node at its zero state.
pub fn zero_init<P: NodeProgram>(program: &P) -> GlobalState<P::State> {
    GlobalState::new((1..=program.node_count()).map(|i| program.zero_state(i)).collect())
}

/// A reproducible arbitrary state: every variable drawn from its domain.
pub fn arbitrary_init<P: NodeProgram>(program: &P, seed: u64) -> GlobalState<P::State> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GlobalState::new(
        (1..=program.node_count())
            .map(|i| program.arbitrary_state(i, &mut rng))
            .collect(),
    )
}

/// Nodes whose first enabled rule holds on fresh reads of `state`.
pub fn forbidden_nodes<P: NodeProgram>(program: &P, state: &GlobalState<P::State>) -> Vec<NodeId> {
    (1..=program.node_count())
        .filter(|&i| {
            let nbrs = program.neighbors(i);
            program
                .enabled_rule(i, &ReadView::fresh(state, i, &nbrs))
                .is_some()
        })
        .collect()
}

pub fn is_quiescent<P: NodeProgram>(program: &P, state: &GlobalState<P::State>) -> bool {
    (1..=program.node_count()).all(|i| {
        let nbrs = program.neighbors(i);
        program
            .enabled_rule(i, &ReadView::fresh(state, i, &nbrs))
            .is_none()
    })
}

/// Every node enabled on `state` fires once, all reading `state`.
pub fn synchronous_round<P: NodeProgram>(
    program: &P,
    state: &GlobalState<P::State>,
) -> GlobalState<P::State> {
    let mut next = state.clone();
    for i in 1..=program.node_count() {
        let nbrs = program.neighbors(i);
        let view = ReadView::fresh(state, i, &nbrs);
        if let Some(rule) = program.enabled_rule(i, &view) {
            next.set(i, program.action(rule, i, &view));
        }
    }
    next
}

/// Runs `program` from `init` and records the trace.
pub fn run<P: NodeProgram>(
    program: &P,
    init: GlobalState<P::State>,
    scheduler: &Scheduler,
    max_steps: u64,
) -> Result<RunReport<P::State>, EngineError> {
    Runner::new(program, *scheduler).max_steps(max_steps).run(init)
}

/// Configurable run: trace recording, a frozen node, and a target watch.
pub struct Runner<'p, P> {
    program: &'p P,
    scheduler: Scheduler,
    max_steps: u64,
    record_trace: bool,
    frozen: Option<NodeId>,
    watch_target: bool,
}

impl<'p, P: NodeProgram> Runner<'p, P> {
    pub fn new(program: &'p P, scheduler: Scheduler) -> Self {
        Runner {
            program,
            scheduler,
            max_steps: u64::MAX,
            record_trace: true,
            frozen: None,
            watch_target: false,
        }
    }

    pub fn max_steps(mut self, max_steps: u64) -> Self {
        self.max_steps = max_steps;
        self
    }

    pub fn record_trace(mut self, record: bool) -> Self {
        self.record_trace = record;
        self
    }

    /// Never schedule `node`.
    pub fn frozen(mut self, node: NodeId) -> Self {
        self.frozen = Some(node);
        self
    }

    /// Evaluate `P` after every firing and stop as soon as it holds.
    pub fn watch_target(mut self, watch: bool) -> Self {
        self.watch_target = watch;
        self
    }

    pub fn run(self, init: GlobalState<P::State>) -> Result<RunReport<P::State>, EngineError> {
        let n = self.program.node_count();
        if init.len() != n {
            return Err(EngineError::StateSize {
                expected: n,
                found: init.len(),
            });
        }
        let mut sim = Sim::new(self.program, &init, &self.scheduler, self.record_trace);
        let mut outcome = Outcome::default();
        if self.watch_target && self.program.target(&init) {
            outcome.target_reached = true;
        } else {
            match self.scheduler.kind {
                SchedulerKind::Synchronous => self.run_synchronous(&mut sim, &mut outcome),
                SchedulerKind::RandomSerial | SchedulerKind::StaleRead => {
                    self.run_serial(&mut sim, &mut outcome)?
                }
            }
        }
        let converged = sim.fresh_quiescent(None);
        let final_state = sim.snapshot();
        let trace = sim.trace.take().map(|entries| Trace {
            init,
            entries,
        });
        Ok(RunReport {
            final_state,
            trace,
            converged,
            steps: sim.steps,
            firings: sim.firings,
            rounds: outcome.rounds,
            max_staleness: sim.max_staleness,
            target_reached: outcome.target_reached,
        })
    }

    fn run_synchronous(&self, sim: &mut Sim<'_, P>, outcome: &mut Outcome) {
        let n = self.program.node_count();
        while sim.steps < self.max_steps {
            let pre = sim.snapshot();
            let mut fired: Vec<(NodeId, usize, P::State)> = Vec::new();
            for i in 1..=n {
                if Some(i) == self.frozen {
                    continue;
                }
                let view = ReadView::fresh(&pre, i, &sim.neighbors[i - 1]);
                if let Some(rule) = self.program.enabled_rule(i, &view) {
                    fired.push((i, rule, self.program.action(rule, i, &view)));
                }
            }
            if fired.is_empty() {
                break;
            }
            outcome.rounds += 1;
            let mut written: Vec<Option<u64>> = vec![None; n];
            for (i, rule, state) in fired {
                if sim.steps >= self.max_steps {
                    break;
                }
                sim.steps += 1;
                // reads came from the pre-round state, so a neighbour already
                // written this round was read from before its write
                let step = sim.steps;
                let staleness: Vec<(NodeId, u32)> = sim.neighbors[i - 1]
                    .iter()
                    .map(|&j| (j, written[j - 1].map_or(0, |at| (step - at) as u32)))
                    .collect();
                for &(_, s) in &staleness {
                    sim.max_staleness = sim.max_staleness.max(s);
                }
                sim.publish(i, rule, staleness, state);
                written[i - 1] = Some(sim.steps);
                if self.watch_target && self.program.target(&sim.snapshot()) {
                    outcome.target_reached = true;
                    return;
                }
            }
        }
    }

    fn run_serial(&self, sim: &mut Sim<'_, P>, outcome: &mut Outcome) -> Result<(), EngineError> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.scheduler.seed);
        let mut order: Vec<NodeId> = (1..=self.program.node_count())
            .filter(|&i| Some(i) != self.frozen)
            .collect();
        if order.is_empty() {
            return Ok(());
        }
        order.shuffle(&mut rng);
        let active = order.len() as u64;
        let window = self.scheduler.fairness_window.unwrap_or(2 * active);
        if window < active {
            return Err(EngineError::InvalidConfig(format!(
                "fairness window {window} is shorter than the {active} schedulable nodes"
            )));
        }
        let extra_cap = window - active;
        let stale = self.scheduler.kind == SchedulerKind::StaleRead;

        // One cycle visits the skeleton once plus at most `extra_cap` extras,
        // so consecutive skeleton visits of a node are at most `window` apart.
        while sim.steps < self.max_steps {
            let firings_before = sim.firings;
            let mut extras = 0;
            for pos in 0..order.len() {
                if extras < extra_cap && rng.random_bool(EXTRA_ACTIVATION_PROBABILITY) {
                    extras += 1;
                    let node = order[rng.random_range(0..order.len())];
                    if self.step(sim, node, stale, &mut rng, outcome) {
                        return Ok(());
                    }
                }
                if sim.steps >= self.max_steps {
                    break;
                }
                if self.step(sim, order[pos], stale, &mut rng, outcome) {
                    return Ok(());
                }
                if sim.steps >= self.max_steps {
                    break;
                }
            }
            outcome.rounds += 1;
            if sim.firings == firings_before && sim.fresh_quiescent(self.frozen) {
                break;
            }
        }
        Ok(())
    }

    /// One activation. Returns true when the run must stop.
    fn step(
        &self,
        sim: &mut Sim<'_, P>,
        node: NodeId,
        stale: bool,
        rng: &mut ChaCha8Rng,
        outcome: &mut Outcome,
    ) -> bool {
        if sim.steps >= self.max_steps {
            return true;
        }
        sim.steps += 1;
        let fired = sim.activate(node, stale, rng);
        if fired && self.watch_target && self.program.target(&sim.snapshot()) {
            outcome.target_reached = true;
            return true;
        }
        false
    }
}

#[derive(Default)]
struct Outcome {
    rounds: u64,
    target_reached: bool,
}

struct Version<S> {
    version: u64,
    /// Step at which a newer version was published.
    replaced_at: Option<u64>,
    state: Arc<S>,
}

struct Sim<'p, P: NodeProgram> {
    program: &'p P,
    neighbors: Vec<Vec<NodeId>>,
    // newest version at the back
    history: Vec<VecDeque<Version<P::State>>>,
    // per node, aligned with `neighbors`: oldest version it may still read
    floors: Vec<Vec<u64>>,
    depth: usize,
    bound: u32,
    steps: u64,
    firings: u64,
    max_staleness: u32,
    trace: Option<Vec<TraceEntry<P::State>>>,
}

impl<'p, P: NodeProgram> Sim<'p, P> {
    fn new(
        program: &'p P,
        init: &GlobalState<P::State>,
        scheduler: &Scheduler,
        record: bool,
    ) -> Self {
        let n = program.node_count();
        let neighbors: Vec<Vec<NodeId>> = (1..=n).map(|i| program.neighbors(i)).collect();
        let depth = scheduler.history_depth();
        let history = init
            .locals
            .iter()
            .map(|s| {
                let mut ring = VecDeque::with_capacity(depth);
                ring.push_back(Version {
                    version: 0,
                    replaced_at: None,
                    state: Arc::new(s.clone()),
                });
                ring
            })
            .collect();
        let floors = neighbors.iter().map(|nb| vec![0; nb.len()]).collect();
        Sim {
            program,
            neighbors,
            history,
            floors,
            depth,
            bound: depth as u32 - 1,
            steps: 0,
            firings: 0,
            max_staleness: 0,
            trace: record.then(Vec::new),
        }
    }

    fn latest(&self, node: NodeId) -> &Version<P::State> {
        self.history[node - 1].back().expect("history is never empty")
    }

    fn snapshot(&self) -> GlobalState<P::State> {
        GlobalState::new(
            (1..=self.history.len())
                .map(|i| (*self.latest(i).state).clone())
                .collect(),
        )
    }

    fn fresh_quiescent(&self, skip: Option<NodeId>) -> bool {
        (1..=self.history.len()).filter(|&i| Some(i) != skip).all(|i| {
            let view = ReadView::new(
                i,
                &*self.latest(i).state,
                self.neighbors[i - 1]
                    .iter()
                    .map(|&j| (j, &*self.latest(j).state)),
            );
            self.program.enabled_rule(i, &view).is_none()
        })
    }

    /// Builds a view for `node`, fires its first enabled rule, publishes the
    /// result. Returns whether a rule fired.
    fn activate(&mut self, node: NodeId, stale: bool, rng: &mut ChaCha8Rng) -> bool {
        let nbrs = &self.neighbors[node - 1];
        let mut chosen: SmallVec<[(NodeId, usize, u32); 4]> = SmallVec::new();
        let now = self.steps;
        for (k, &j) in nbrs.iter().enumerate() {
            let ring = &self.history[j - 1];
            let floor = self.floors[node - 1][k];
            let age = |v: &Version<P::State>| v.replaced_at.map_or(0, |at| now - at);
            let idx = if stale {
                let first = ring
                    .iter()
                    .position(|v| v.version >= floor && age(v) <= self.bound as u64)
                    .expect("the newest version is always admissible");
                rng.random_range(first..ring.len())
            } else {
                ring.len() - 1
            };
            let staleness = age(&ring[idx]) as u32;
            assert!(ring[idx].version >= floor, "freshness floor violated");
            assert!(staleness <= self.bound, "staleness bound violated");
            chosen.push((j, idx, staleness));
        }
        for (k, &(j, idx, _)) in chosen.iter().enumerate() {
            self.floors[node - 1][k] = self.history[j - 1][idx].version;
        }

        let own = self.latest(node).state.clone();
        let view = ReadView::new(
            node,
            &*own,
            chosen
                .iter()
                .map(|&(j, idx, _)| (j, &*self.history[j - 1][idx].state)),
        );
        let Some(rule) = self.program.enabled_rule(node, &view) else {
            return false;
        };
        let next = self.program.action(rule, node, &view);
        drop(view);
        let staleness: Vec<(NodeId, u32)> = chosen.iter().map(|&(j, _, s)| (j, s)).collect();
        for &(_, s) in &staleness {
            self.max_staleness = self.max_staleness.max(s);
        }
        self.publish(node, rule, staleness, next);
        true
    }

    fn publish(&mut self, node: NodeId, rule: usize, staleness: Vec<(NodeId, u32)>, state: P::State) {
        self.firings += 1;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceEntry {
                step: self.steps,
                node,
                rule,
                staleness,
                state: state.clone(),
            });
        }
        let now = self.steps;
        let ring = &mut self.history[node - 1];
        let newest = ring.back_mut().expect("history is never empty");
        newest.replaced_at = Some(now);
        let version = newest.version + 1;
        ring.push_back(Version {
            version,
            replaced_at: None,
            state: Arc::new(state),
        });
        while ring.len() > self.depth {
            ring.pop_front();
        }
    }
}
