//! Threaded executor: nodes are partitioned over workers, every node is
//! written only by the worker that owns it, and reads see whatever version
//! happens to be published.
//!
//! Each node slot is a small lock around `(version, Arc<state>)`; there is
//! no lock over the global state. Versions only grow, so a reader never
//! observes an older version than at its previous activation.

use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use super::{is_quiescent, EngineError, GlobalState, NodeId, NodeProgram, ReadView};

pub struct ConcurrentReport<S> {
    pub final_state: GlobalState<S>,
    pub converged: bool,
    pub activations: u64,
    pub firings: u64,
}

struct Slot<S> {
    version: u64,
    state: Arc<S>,
}

/// Runs `program` on `threads` workers until every worker has completed a
/// pass without any write anywhere, or `max_activations` is spent.
pub fn run_concurrent<P: NodeProgram>(
    program: &P,
    init: GlobalState<P::State>,
    threads: usize,
    max_activations: u64,
) -> Result<ConcurrentReport<P::State>, EngineError> {
    let n = program.node_count();
    if init.len() != n {
        return Err(EngineError::StateSize {
            expected: n,
            found: init.len(),
        });
    }
    let threads = threads.clamp(1, n.max(1));
    let neighbors: Vec<Vec<NodeId>> = (1..=n).map(|i| program.neighbors(i)).collect();
    let slots: Vec<RwLock<Slot<P::State>>> = init
        .into_locals()
        .into_iter()
        .map(|s| {
            RwLock::new(Slot {
                version: 0,
                state: Arc::new(s),
            })
        })
        .collect();

    // total number of writes; a pass that starts and ends at the same value
    // saw one unchanging global state
    let writes = AtomicU64::new(0);
    let activations = AtomicU64::new(0);
    let quiet_at: Vec<AtomicU64> = (0..threads).map(|_| AtomicU64::new(u64::MAX)).collect();
    let stop = AtomicBool::new(false);

    let read = |j: NodeId| -> (u64, Arc<P::State>) {
        let slot = slots[j - 1].read().expect("slot lock poisoned");
        (slot.version, slot.state.clone())
    };

    std::thread::scope(|scope| {
        for w in 0..threads {
            let (neighbors, slots, writes, activations, quiet_at, stop) =
                (&neighbors, &slots, &writes, &activations, &quiet_at, &stop);
            let read = &read;
            scope.spawn(move || {
                let mine: Vec<NodeId> = (1..=n).filter(|i| (i - 1) % threads == w).collect();
                let mut floors: Vec<Vec<u64>> =
                    mine.iter().map(|&i| vec![0; neighbors[i - 1].len()]).collect();
                while !stop.load(Ordering::Acquire) {
                    let start = writes.load(Ordering::Acquire);
                    let mut fired_any = false;
                    for (k, &i) in mine.iter().enumerate() {
                        if activations.fetch_add(1, Ordering::AcqRel) >= max_activations {
                            stop.store(true, Ordering::Release);
                            return;
                        }
                        let (_, own) = read(i);
                        let peers: Vec<(NodeId, Arc<P::State>)> = neighbors[i - 1]
                            .iter()
                            .enumerate()
                            .map(|(m, &j)| {
                                let (version, state) = read(j);
                                assert!(version >= floors[k][m], "freshness floor violated");
                                floors[k][m] = version;
                                (j, state)
                            })
                            .collect();
                        let view = ReadView::new(i, &*own, peers.iter().map(|(j, s)| (*j, &**s)));
                        if let Some(rule) = program.enabled_rule(i, &view) {
                            let next = program.action(rule, i, &view);
                            let mut slot = slots[i - 1].write().expect("slot lock poisoned");
                            slot.version += 1;
                            slot.state = Arc::new(next);
                            drop(slot);
                            writes.fetch_add(1, Ordering::AcqRel);
                            fired_any = true;
                        }
                    }
                    if !fired_any && writes.load(Ordering::Acquire) == start {
                        quiet_at[w].store(start, Ordering::Release);
                        let now = writes.load(Ordering::Acquire);
                        if quiet_at.iter().all(|q| q.load(Ordering::Acquire) == now) {
                            stop.store(true, Ordering::Release);
                        }
                    } else {
                        std::thread::yield_now();
                    }
                }
            });
        }
    });

    let final_state = GlobalState::new(
        slots
            .into_iter()
            .map(|s| {
                let slot = s.into_inner().expect("slot lock poisoned");
                Arc::try_unwrap(slot.state).unwrap_or_else(|a| (*a).clone())
            })
            .collect(),
    );
    let converged = is_quiescent(program, &final_state);
    Ok(ConcurrentReport {
        final_state,
        converged,
        activations: activations.load(Ordering::Acquire).min(max_activations),
        firings: writes.load(Ordering::Acquire),
    })
}
