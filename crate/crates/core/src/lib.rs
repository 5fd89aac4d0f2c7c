//! Heisenberg-picture time evolution of matrix product operators with U(1)
//! particle-number symmetry.
//!
//! Operators are stored as superstates, matrix product states over doubled
//! local spaces, and evolved with Trotterized bond gates. Three gradings are
//! available: no symmetry (`Brute`), a fixed number difference between the
//! in- and out-chains (`Difference`, grand-canonical), and fixed numbers on
//! both chains (`Both`, canonical; reached by projecting with `P_N`).
//!
//! The [`oracle`] module holds dense exact references for small systems.

pub mod charge_tensor;
pub mod error;
pub mod evolution;
pub mod models;
pub mod mps;
pub mod observables;
pub mod operator_space;
pub mod oracle;
pub mod projector;

pub use charge_tensor::{
    block_svd, contract, ChargeIndex, Direction, GradedBasis, Spectrum, SymmetricTensor, TruncationPolicy, C64,
};
pub use error::{Error, Result};
pub use evolution::{
    accumulated_cutoff, evolve, make_schedule, Evolution, EvolutionLog, EvolutionSettings, Evolvable, StepSummary,
    Termination, TrotterSchedule,
};
pub use models::{bond_gate, bond_hamiltonian, super_gate, ModelKind, ModelSpec};
pub use mps::{BondGate, CanonicalMps, TruncationRecord};
pub use observables::{
    ensemble_relation_check, fit_itac, itac_canonical, itac_canonical_after_evolution, itac_grand_canonical,
    itac_series, local_density_series, FitOutcome, FitParams, Method, TimeSeries,
};
pub use operator_space::{expectation_in_state, hs_trace_pair, ChargeScheme, LocalOperator, SuperState};
pub use projector::{omega, project_superstate, projector_osee, projector_superstate};

/// Library version recorded in run metadata.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
