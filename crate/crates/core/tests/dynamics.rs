use hmpo::charge_tensor::GradedBasis;
use hmpo::observables::prepare_operator;
use hmpo::oracle;
use hmpo::{
    expectation_in_state, local_density_series, make_schedule, omega, CanonicalMps, Evolution, EvolutionSettings,
    LocalOperator, Method, ModelSpec, SuperState, TruncationPolicy, C64,
};
use num_bigint::BigUint;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn exact(order: u32, dt: f64, t_max: f64) -> EvolutionSettings {
    EvolutionSettings::new(make_schedule(order, dt).unwrap(), t_max, TruncationPolicy::exact(), 1.0).unwrap()
}

fn random_sector_state(length: usize, n: usize, seed: u64) -> CanonicalMps {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut psi = vec![C64::new(0.0, 0.0); 1 << length];
    for x in oracle::sector_states(2, length, n) {
        psi[x] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    }
    let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    psi.iter_mut().for_each(|z| *z /= norm);
    CanonicalMps::from_dense(vec![GradedBasis::new(vec![0, 1]); length], &psi, 0.0).unwrap().0
}

/// Trotterized Schrödinger and Heisenberg evolutions agree exactly, including
/// for the non-palindromic first-order schedule.
#[test]
fn schroedinger_and_heisenberg_pictures_agree() {
    let spec = ModelSpec::xxz(6, 0.8);
    let psi0 = random_sector_state(6, 3, 4);
    let sz = LocalOperator::sigma_z().at(4, 6).unwrap();
    let observable = SuperState::lift_product_operator(&sz).unwrap();
    for order in [1, 2, 4] {
        let settings = exact(order, 0.1, 1.0);
        let mut state = Evolution::new(psi0.clone(), spec, settings.clone()).unwrap();
        let mut op = Evolution::new(observable.clone(), spec, settings).unwrap();
        for _ in 0..10 {
            state.step().unwrap();
            op.step().unwrap();
            let s = expectation_in_state(&observable, state.target()).unwrap();
            let h = expectation_in_state(op.target(), &psi0).unwrap();
            assert!((s - h).norm() < 1e-12, "order {order}: {s} vs {h}");
        }
    }
}

#[test]
fn xxz_site_three_matches_dense_heisenberg() {
    let spec = ModelSpec::xxz(6, 0.8);
    let psi = CanonicalMps::from_fock(&[1, 0, 1, 0, 1, 0], 2).unwrap();
    let mut op = Evolution::new(
        SuperState::lift_product_operator(&LocalOperator::sigma_z().at(3, 6).unwrap()).unwrap(),
        spec,
        exact(4, 1.0 / 16.0, 2.0),
    )
    .unwrap();
    let dense_sz = oracle::local_operator(&oracle::sigma_z_matrix(), 3, 6).unwrap();
    let h = oracle::dense_hamiltonian(&spec, oracle::DEFAULT_DIMENSION_CAP).unwrap();
    let start = oracle::fock_index(&[1, 0, 1, 0, 1, 0], 2);
    let mut worst = 0.0f64;
    op.run(|e| {
        let exact = oracle::dense_heisenberg_evolve(&h, &dense_sz, e.time()).unwrap();
        let engine = expectation_in_state(e.target(), &psi)?;
        worst = worst.max((engine - exact.entries()[(start, start)]).norm());
        Ok(())
    })
    .unwrap();
    assert!(worst <= 1e-6, "{worst}");
}

#[test]
fn density_agrees_across_methods() {
    let spec = ModelSpec::bose_hubbard(4, 3, 1.0, 3.0);
    let occ = [1, 0, 2, 0];
    let settings = exact(4, 0.1, 1.0);
    let series: Vec<Vec<C64>> = [Method::Brute, Method::GrandCanonical, Method::Canonical { n: 3 }]
        .into_iter()
        .map(|m| local_density_series(&spec, &occ, 2, m, &settings).unwrap().values().to_vec())
        .collect();
    for other in &series[1..] {
        for (a, b) in series[0].iter().zip(other) {
            assert!((a - b).norm() < 1e-10);
        }
    }
    let dense = oracle::density_series(&spec, &occ, 2, &(0..=10).map(|k| 0.1 * k as f64).collect::<Vec<_>>()).unwrap();
    for (a, b) in series[2].iter().zip(&dense) {
        assert!((a.re - b).abs() < 1e-5);
    }
}

#[test]
fn checkpoint_resume_is_bit_exact() {
    let spec = ModelSpec::xxz(8, 0.5);
    let start = prepare_operator(&LocalOperator::sigma_z().at(4, 8).unwrap(), Method::GrandCanonical).unwrap();
    let settings =
        EvolutionSettings::new(make_schedule(4, 0.25).unwrap(), 2.0, TruncationPolicy::new(12, 0.0).unwrap(), 1.0).unwrap();

    let mut straight = Evolution::new(start.clone(), spec, settings.clone()).unwrap();
    for _ in 0..8 {
        straight.step().unwrap();
    }

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cp.json");
    let mut first = Evolution::new(start, spec, settings).unwrap();
    for _ in 0..4 {
        first.step().unwrap();
    }
    first.save_checkpoint(&path).unwrap();
    let mut resumed: Evolution<SuperState> = Evolution::restore(&path).unwrap();
    assert_eq!(resumed.steps_done(), 4);
    for _ in 0..4 {
        resumed.step().unwrap();
    }
    assert_eq!(resumed.target(), straight.target());
    assert_eq!(resumed.log(), straight.log());
}

#[test]
fn superstate_file_round_trip() {
    let spec = ModelSpec::xxz(6, 0.8);
    let mut ev = Evolution::new(
        SuperState::lift_product_operator(&LocalOperator::sigma_plus().at(2, 6).unwrap()).unwrap(),
        spec,
        exact(2, 0.2, 0.6),
    )
    .unwrap();
    ev.run(|_| Ok(())).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("op.json");
    ev.target().save(&path).unwrap();
    let back = SuperState::load(&path).unwrap();
    assert_eq!(&back, ev.target());
    assert_eq!(back.delta_n(), Some(-1));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn sector_counts_partition_the_space(d in 2usize..5, length in 1usize..9) {
        let total: BigUint = (0..=length * (d - 1)).map(|n| omega(d, n, length)).sum();
        prop_assert_eq!(total, BigUint::from(d).pow(length as u32));
        for n in 0..=length * (d - 1) {
            prop_assert_eq!(omega(d, n, length), omega(d, length * (d - 1) - n, length));
        }
    }
}
