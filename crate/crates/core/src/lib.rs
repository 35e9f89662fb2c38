//! Multiplication and modulo as lattice-linear node systems.
//!
//! Both problems are expressed as trees of nodes running guarded rules.
//! From any initial state, and even when nodes read stale copies of their
//! neighbours, the trees settle on the correct product or residue:
//!
//! - [`karatsuba`]: ternary Karatsuba tree computing `n × m`.
//! - [`modpar`]: binary tree computing `n mod m` with pluggable residue
//!   backends from [`modseq`].
//! - [`engine`]: the schedulers (synchronous, random serial, stale read,
//!   threaded), traces and the lattice-linearity checks.
//! - [`bitnum`]: the bitstring arithmetic and the reference multiplier.

pub mod bitnum;
pub mod engine;
pub mod karatsuba;
pub mod modpar;
pub mod modseq;

pub use bitnum::{school_mul, BitnumError, Bitstring, OpCounter, OpCounts};
pub use engine::{
    arbitrary_init, run, zero_init, EngineError, GlobalState, NodeId, NodeProgram, ReadView,
    RunReport, Runner, Scheduler, SchedulerKind,
};
pub use karatsuba::{seq_karatsuba, KaratsubaNodeState, KaratsubaProgram};
pub use modpar::{ModBackend, ModBackendKind, ModuloNodeState, ModuloProgram};
pub use modseq::{division_modulo, Dfa, ModError, ModTables};
