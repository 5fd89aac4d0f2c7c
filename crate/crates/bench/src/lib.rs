//! Shared fixtures for the benchmarks.

use hmpo::{
    bond_gate, contract, make_schedule, Evolution, EvolutionSettings, Evolvable, LocalOperator, ModelSpec, SuperState,
    SymmetricTensor, TruncationPolicy,
};

/// `σ^z` at the chain centre of an XXZ chain, evolved for `steps` order-2 steps at bond dimension `chi`.
pub fn evolved_operator(length: usize, chi: usize, steps: usize) -> (ModelSpec, SuperState) {
    let spec = ModelSpec::xxz(length, 0.8);
    let start = SuperState::lift_product_operator(&LocalOperator::sigma_z().at(length / 2, length).unwrap()).unwrap();
    let dt = 0.25;
    let settings = EvolutionSettings::new(
        make_schedule(2, dt).unwrap(),
        dt * steps as f64,
        TruncationPolicy::new(chi, 0.0).unwrap(),
        1.0,
    )
    .unwrap();
    let mut ev = Evolution::new(start, spec, settings).unwrap();
    for _ in 0..steps {
        ev.step().unwrap();
    }
    (spec, ev.into_target())
}

/// Two-site tensor `Γ_m Γ_{m+1}` of the operator's chain.
pub fn two_site_tensor(op: &SuperState, m: usize) -> SymmetricTensor {
    let chain = op.chain();
    contract(chain.gamma(m), chain.gamma(m + 1), &[(2, 0)]).unwrap()
}

/// Lifted bond gate for `op` at bond `m`.
pub fn lifted_gate(spec: &ModelSpec, op: &SuperState, m: usize, tau: f64) -> hmpo::BondGate {
    op.lift_gate(&bond_gate(spec, m, tau).unwrap()).unwrap()
}
