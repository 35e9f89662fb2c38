//! Empirical checks of the lattice-linearity conditions.
//!
//! Coverage: whenever `P` fails, some node is forbidden. Impedance: a
//! forbidden node that never moves keeps `P` from ever holding. The second
//! property quantifies over all later states and cannot be decided
//! directly; it is checked by freezing the node and running everybody else
//! under a fair scheduler for a fixed budget.

use super::{
    forbidden_nodes, EngineError, GlobalState, NodeId, NodeProgram, ReadView, Runner, Scheduler,
};

/// `P(state)` holds, or at least one node's guard holds on fresh reads.
pub fn check_forbidden_coverage<P: NodeProgram>(program: &P, state: &GlobalState<P::State>) -> bool {
    program.target(state) || !forbidden_nodes(program, state).is_empty()
}

/// Freezes `frozen` and runs the rest for `budget` steps with a random-serial
/// scheduler. True iff `P` never held along the way.
pub fn check_impedance<P: NodeProgram>(
    program: &P,
    state: &GlobalState<P::State>,
    frozen: NodeId,
    budget: u64,
) -> Result<bool, EngineError> {
    let seed = 0x1ad5_e7a1_u64 ^ frozen as u64;
    check_impedance_with(program, state, frozen, budget, &Scheduler::random_serial(seed))
}

pub fn check_impedance_with<P: NodeProgram>(
    program: &P,
    state: &GlobalState<P::State>,
    frozen: NodeId,
    budget: u64,
    scheduler: &Scheduler,
) -> Result<bool, EngineError> {
    let nbrs = program.neighbors(frozen);
    if program
        .enabled_rule(frozen, &ReadView::fresh(state, frozen, &nbrs))
        .is_none()
    {
        return Err(EngineError::NotForbidden(frozen));
    }
    let report = Runner::new(program, *scheduler)
        .max_steps(budget)
        .record_trace(false)
        .frozen(frozen)
        .watch_target(true)
        .run(state.clone())?;
    Ok(!report.target_reached)
}

#[cfg(test)]
mod tests {
    use super::super::testing::Chain;
    use super::super::*;
    use super::*;

    #[test]
    fn coverage_holds_on_every_chain_state() {
        let chain = Chain { len: 4 };
        for a in 0..6u32 {
            for b in 0..6u32 {
                for c in 0..6u32 {
                    for d in 0..6u32 {
                        let s = GlobalState::new(vec![a, b, c, d]);
                        assert!(check_forbidden_coverage(&chain, &s));
                    }
                }
            }
        }
    }

    #[test]
    fn freezing_the_only_forbidden_node_blocks_the_target() {
        let chain = Chain { len: 2 };
        let s = GlobalState::new(vec![1, 0]);
        assert_eq!(forbidden_nodes(&chain, &s), vec![2]);
        assert!(check_impedance(&chain, &s, 2, 10_000).unwrap());
    }

    #[test]
    fn freezing_a_quiet_node_is_a_precondition_error() {
        let chain = Chain { len: 3 };
        let done = GlobalState::new(vec![1, 2, 3]);
        assert!(matches!(
            check_impedance(&chain, &done, 2, 100),
            Err(EngineError::NotForbidden(2))
        ));
    }

    #[test]
    fn impedance_fails_when_the_frozen_value_is_already_final() {
        // node 3 holds its final value 3 but is forbidden because node 2 is
        // behind; once node 2 catches up the target holds without node 3
        let chain = Chain { len: 3 };
        let s = GlobalState::new(vec![1, 5, 3]);
        assert!(forbidden_nodes(&chain, &s).contains(&3));
        assert!(!check_impedance(&chain, &s, 3, 10_000).unwrap());
    }
}
