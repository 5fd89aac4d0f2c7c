//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use hmpo::charge_tensor::GradedBasis;
use hmpo::evolution::EvolutionSettings;
use hmpo::oracle;
use hmpo::{
    ensemble_relation_check, fit_itac, itac_canonical_after_evolution,
    itac_series, local_density_series, make_schedule, omega, projector_osee, projector_superstate, CanonicalMps,
    Evolution, FitParams, LocalOperator, Method, ModelSpec, SuperState, Termination, TimeSeries, TruncationPolicy,
    C64,
};
use nalgebra::DMatrix;
use num_bigint::BigUint;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn binomial(n: usize, k: usize) -> BigUint {
    if k > n {
        return BigUint::from(0u32);
    }
    let mut acc = BigUint::from(1u32);
    for i in 0..k {
        acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
    }
    acc
}

fn exact(order: u32, dt: f64, t_max: f64) -> EvolutionSettings {
    EvolutionSettings::new(make_schedule(order, dt).unwrap(), t_max, TruncationPolicy::exact(), 1.0).unwrap()
}

fn max_dev(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn criterion_1() -> Outcome {
    for l in 0..=12 {
        for n in 0..=l {
            if omega(2, n, l) != binomial(l, n) {
                return Err(format!("omega(2, {n}, {l}) != C({l}, {n})"));
            }
        }
    }
    let mut cases = 0;
    for d in 2..=6 {
        for l in 1..=10 {
            for n in 0..d {
                if omega(d, n, l) != binomial(l + n - 1, n) {
                    return Err(format!("omega({d}, {n}, {l}) != C({}, {n})", l + n - 1));
                }
                cases += 1;
            }
        }
    }
    Ok(format!("binomial identities hold ({cases} capped cases)"))
}

fn criterion_2() -> Outcome {
    let mut worst = 0.0f64;
    let mut cases = 0;
    for d in 2..=3 {
        for l in 1..=6 {
            for n in 0..=l * (d - 1) {
                let p = projector_superstate(n as i64, l, d).map_err(|e| e.to_string())?;
                let m = p.to_matrix();
                let states = oracle::sector_states(d, l, n);
                let dim = d.pow(l as u32);
                let mut indicator = DMatrix::<C64>::zeros(dim, dim);
                for &x in &states {
                    indicator[(x, x)] = C64::new(1.0, 0.0);
                }
                worst = worst.max((m - indicator).iter().map(|z| z.norm()).fold(0.0, f64::max));
                cases += 1;
            }
        }
    }
    check(worst <= 1e-12, format!("max elementwise deviation {worst:.3e} over {cases} projectors (tol 1e-12)"))
}

fn criterion_3() -> Outcome {
    let (l, m) = (40, 20);
    let s: Vec<f64> = (0..=l).map(|n| projector_osee(n as i64, l, 2, m).unwrap()).collect();
    let monotone = (1..20).all(|n| s[n + 1] > s[n]);
    let symmetric = (0..=l).all(|n| (s[n] - s[l - n]).abs() <= 1e-12);
    let bounded = (1..=20).all(|n| s[n] <= ((n + 1) as f64).log2() + 1e-12);
    // half filling: S[L/2] against log2 L
    let pts: Vec<(f64, f64)> = [8usize, 16, 32, 64]
        .iter()
        .map(|&l| ((l as f64).log2(), projector_osee((l / 2) as i64, l, 2, l / 2).unwrap()))
        .collect();
    let k = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (sxx, sxy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 * p.0, a.1 + p.0 * p.1));
    let slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
    check(
        monotone && symmetric && bounded && slope > 0.0 && slope < 1.0,
        format!("monotone={monotone} symmetric={symmetric} bounded={bounded} half-filling slope={slope:.4}"),
    )
}

fn criterion_4() -> Outcome {
    let spec = ModelSpec::xxz(6, 0.8);
    let settings = exact(4, 1.0 / 16.0, 4.0);
    let sz = oracle::local_operator(&oracle::sigma_z_matrix(), 3, 6).unwrap();
    let (g, _) = itac_series(&spec, &LocalOperator::sigma_z(), 3, Method::GrandCanonical, &settings).map_err(|e| e.to_string())?;
    let g_oracle = oracle::itac_series(&spec, &sz, g.times()).unwrap();
    let mut worst = max_dev(g.values(), &g_oracle);
    let mut parts = vec![format!("G {worst:.3e}")];
    for n in 1..=3 {
        let (c, _) = itac_series(&spec, &LocalOperator::sigma_z(), 3, Method::Canonical { n }, &settings).map_err(|e| e.to_string())?;
        let c_oracle = oracle::sector_itac_series(&spec, &sz, c.times(), n).unwrap();
        let dev = max_dev(c.values(), &c_oracle);
        parts.push(format!("C_{n} {dev:.3e}"));
        worst = worst.max(dev);
    }
    check(worst <= 1e-6, format!("max |engine - oracle|: {} (tol 1e-6)", parts.join(", ")))
}

fn criterion_5() -> Outcome {
    let spec = ModelSpec::xxz(6, 0.8);
    let settings = exact(4, 1.0 / 16.0, 4.0);
    let (g, _) = itac_series(&spec, &LocalOperator::sigma_z(), 3, Method::GrandCanonical, &settings).map_err(|e| e.to_string())?;
    let mut sectors: BTreeMap<usize, TimeSeries> = BTreeMap::new();
    for n in 0..=6 {
        let (c, _) = itac_series(&spec, &LocalOperator::sigma_z(), 3, Method::Canonical { n }, &settings).map_err(|e| e.to_string())?;
        sectors.insert(n, c);
    }
    let dev = ensemble_relation_check(&g, &sectors, 2, 6).map_err(|e| e.to_string())?;
    check(dev <= 1e-8, format!("max_t |G - weighted sector average| = {dev:.3e} (tol 1e-8)"))
}

fn criterion_6() -> Outcome {
    let spec = ModelSpec::xxz(8, 0.8);
    let settings = exact(4, 1.0 / 16.0, 4.0);
    let sz = oracle::local_operator(&oracle::sigma_z_matrix(), 4, 8).unwrap();
    let mut parts = Vec::new();
    let mut ok = true;
    for n in 1..=2 {
        let bound = 4.0 * n as f64 / 8.0;
        let (c, _) = itac_series(&spec, &LocalOperator::sigma_z(), 4, Method::Canonical { n }, &settings).map_err(|e| e.to_string())?;
        let c_oracle = oracle::sector_itac_series(&spec, &sz, c.times(), n).unwrap();
        let engine_worst = c.values().iter().map(|z| 1.0 - z.re).fold(f64::MIN, f64::max);
        let oracle_worst = c_oracle.iter().map(|z| 1.0 - z.re).fold(f64::MIN, f64::max);
        ok &= engine_worst <= bound && oracle_worst <= bound;
        parts.push(format!("N={n}: max(1 - Re C) engine {engine_worst:.4}, oracle {oracle_worst:.4}, bound {bound}"));
    }
    check(ok, parts.join("; "))
}

fn criterion_7() -> Outcome {
    let spec = ModelSpec::xxz(6, 0.8);
    let settings = exact(4, 1.0 / 16.0, 4.0);
    let factors = LocalOperator::sigma_z().at(3, 6).unwrap();
    let reference = SuperState::lift_product_operator(&factors).unwrap();
    let mut unprojected = Vec::new();
    let mut ev = Evolution::new(reference.clone(), spec, settings.clone()).map_err(|e| e.to_string())?;
    ev.run(|e| {
        unprojected.push(e.target().clone());
        Ok(())
    })
    .map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for n in 1..=3 {
        let (before, _) = itac_series(&spec, &LocalOperator::sigma_z(), 3, Method::Canonical { n }, &settings).map_err(|e| e.to_string())?;
        for (k, op) in unprojected.iter().enumerate() {
            let after = itac_canonical_after_evolution(op, &reference, n).map_err(|e| e.to_string())?;
            worst = worst.max((after - before.values()[k]).norm());
        }
    }
    check(worst <= 1e-8, format!("max |C_N(project, evolve) - C_N(evolve, project)| = {worst:.3e} over N=1..3 (tol 1e-8)"))
}

fn criterion_8() -> Outcome {
    let spec = ModelSpec::bose_hubbard(6, 4, 1.0, 10.0);
    let occ = [0, 1, 0, 1, 0, 1];
    // the unprojected operator saturates the bond dimension, so only a tiny
    // relative floor is applied; dt keeps the Trotter error below 1e-6
    let policy = TruncationPolicy::new(usize::MAX, 1e-8).unwrap();
    let settings = EvolutionSettings::new(make_schedule(4, 1.0 / 18.0).unwrap(), 2.0, policy, 1.0).unwrap();
    let mut parts = Vec::new();
    let mut worst = 0.0f64;
    for method in [Method::Canonical { n: 3 }, Method::GrandCanonical] {
        let series = local_density_series(&spec, &occ, 1, method, &settings).map_err(|e| e.to_string())?;
        let oracle = oracle::density_series(&spec, &occ, 1, series.times()).unwrap();
        let dev = series.values().iter().zip(&oracle).map(|(z, o)| (z - C64::new(*o, 0.0)).norm()).fold(0.0, f64::max);
        worst = worst.max(dev);
        let chi = series.chi_max_used().iter().max().copied().unwrap_or(0);
        parts.push(format!("n_1 {}: {dev:.3e} (chi {chi})", method.label()));
    }
    check(worst <= 1e-6, format!("{} (tol 1e-6)", parts.join(", ")))
}

fn criterion_9() -> Outcome {
    let spec = ModelSpec::xxz(6, 0.8);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let dim = 64;
    let mut psi = vec![C64::new(0.0, 0.0); dim];
    for x in oracle::sector_states(2, 6, 3) {
        psi[x] = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    }
    let norm = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    psi.iter_mut().for_each(|z| *z /= norm);
    let (mps, _) = CanonicalMps::from_dense(vec![GradedBasis::new(vec![0, 1]); 6], &psi, 0.0).map_err(|e| e.to_string())?;
    let dts = [0.2, 0.1, 0.05];
    let mut errors = Vec::new();
    for &dt in &dts {
        let mut ev = Evolution::new(mps.clone(), spec, exact(4, dt, dt)).map_err(|e| e.to_string())?;
        ev.step().map_err(|e| e.to_string())?;
        let trotter = ev.target().to_dense();
        let reference = oracle::evolve_state(&spec, &psi, dt).unwrap();
        let err = trotter.iter().zip(&reference).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>().sqrt();
        errors.push(err);
    }
    let pts: Vec<(f64, f64)> = dts.iter().zip(&errors).map(|(d, e)| (d.ln(), e.ln())).collect();
    let k = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
    let (sxx, sxy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 * p.0, a.1 + p.0 * p.1));
    let slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
    check(
        (slope - 5.0).abs() <= 0.3,
        format!("one-step errors {:?}, log-log slope {slope:.3} (want 5 +/- 0.3)", errors.iter().map(|e| format!("{e:.2e}")).collect::<Vec<_>>()),
    )
}

fn criterion_10() -> Outcome {
    let spec = ModelSpec::xxz(10, 0.8);
    let op = SuperState::lift_product_operator(&LocalOperator::sigma_z().at(5, 10).unwrap()).unwrap();
    let budget = 1e-2;
    let settings = EvolutionSettings::new(
        make_schedule(4, 1.0 / 16.0).unwrap(),
        100.0,
        TruncationPolicy::new(8, 0.0).unwrap(),
        budget,
    )
    .unwrap();
    let mut ev = Evolution::new(op, spec, settings).map_err(|e| e.to_string())?;
    let term = ev.run(|_| Ok(())).map_err(|e| e.to_string())?;
    let log = ev.log();
    let steps = log.steps();
    let nondecreasing = steps.windows(2).all(|w| w[1].accumulated_cutoff >= w[0].accumulated_cutoff);
    let product: f64 = log.records().iter().map(|r| r.nu).product();
    let product_dev = (log.accumulated_cutoff() - (1.0 - product)).abs();
    let per_step_dev = {
        // recompute the running product at each step boundary
        let per_step = log.records().len() / steps.len().max(1);
        let mut acc = 1.0;
        let mut worst = 0.0f64;
        for (k, s) in steps.iter().enumerate() {
            for r in &log.records()[k * per_step..(k + 1) * per_step] {
                acc *= r.nu;
            }
            worst = worst.max((s.accumulated_cutoff - (1.0 - acc)).abs());
        }
        worst
    };
    let last = steps.last().map(|s| s.accumulated_cutoff).unwrap_or(0.0);
    let before = if steps.len() >= 2 { steps[steps.len() - 2].accumulated_cutoff } else { 0.0 };
    let exact_stop = term == Termination::Budget && last >= budget && before < budget;
    check(
        nondecreasing && product_dev <= 1e-12 && per_step_dev <= 1e-12 && exact_stop,
        format!(
            "nondecreasing={nondecreasing}, |cutoff - (1 - prod nu)| = {:.1e}, stopped at t={:.4} ({} steps) with cutoff {last:.4e} after {before:.4e}, termination {term:?}",
            product_dev.max(per_step_dev),
            steps.last().map(|s| s.time).unwrap_or(0.0),
            steps.len()
        ),
    )
}

fn fidelity(a: &SuperState, b: &SuperState) -> f64 {
    hmpo::hs_trace_pair(a, b).unwrap().norm() / (a.hs_norm() * b.hs_norm())
}

fn criterion_11() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for (spec, n) in [(ModelSpec::xxz(8, 0.8), 4usize), (ModelSpec::bose_hubbard(6, 3, 1.0, 4.0), 3)] {
        let settings = exact(4, 0.1, 5.0);
        let id = SuperState::identity(spec.length, spec.d);
        let mut worst_id = 0.0f64;
        let mut ev = Evolution::new(id.clone(), spec, settings.clone()).map_err(|e| e.to_string())?;
        ev.run(|e| {
            worst_id = worst_id.max(1.0 - fidelity(&id, e.target()));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
        let steps_id = ev.steps_done();

        let p = projector_superstate(n as i64, spec.length, spec.d).unwrap();
        let s0 = p.osee_profile();
        let (mut worst_p, mut worst_osee) = (0.0f64, 0.0f64);
        let mut ev = Evolution::new(p.clone(), spec, settings).map_err(|e| e.to_string())?;
        ev.run(|e| {
            worst_p = worst_p.max(1.0 - fidelity(&p, e.target()));
            let prof = e.target().osee_profile();
            worst_osee = worst_osee.max(prof.iter().zip(&s0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
            Ok(())
        })
        .map_err(|e| e.to_string())?;
        ok &= steps_id == 50 && ev.steps_done() == 50 && worst_id <= 1e-10 && worst_p <= 1e-10 && worst_osee <= 1e-10;
        parts.push(format!(
            "L={} d={}: 1-F(identity) {worst_id:.1e}, 1-F(P_{n}) {worst_p:.1e}, OSEE drift {worst_osee:.1e}",
            spec.length, spec.d
        ));
    }
    check(ok, format!("{} over 50 steps (tol 1e-10)", parts.join("; ")))
}

fn criterion_12() -> Outcome {
    let truth = FitParams { kappa: -0.83, a: 1.0, b: 0.2, gamma: 0.5, omega: 3.0, t0: 1.0 };
    let times: Vec<f64> = (0..=176).map(|k| 0.5 + k as f64 * 0.0625).collect();
    let values = times.iter().map(|&t| C64::new(truth.evaluate(t), 0.0)).collect();
    let meta = hmpo::observables::SeriesMeta { observable: "synthetic".into(), method: Method::GrandCanonical, chi: None, dt: 0.0625 };
    let series = TimeSeries::from_samples(meta, times, values).map_err(|e| e.to_string())?;
    let fit = fit_itac(&series, (0.5, 11.5)).map_err(|e| e.to_string())?;
    let p = fit.params;
    let dev = [
        p.kappa - truth.kappa,
        p.a - truth.a,
        p.b - truth.b,
        p.gamma - truth.gamma,
        p.omega - truth.omega,
        p.t0 - truth.t0,
    ]
    .iter()
    .map(|x| x.abs())
    .fold(0.0, f64::max);
    check(dev <= 1e-3, format!("max parameter deviation {dev:.2e} (tol 1e-3), residual {:.2e}", fit.residual))
}

fn main() {
    // the harness-free target still honours `cargo test -- <filter>` style args
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(u32, &str, fn() -> Outcome, Duration); 12] = [
        (1, "combinatorics", criterion_1, Duration::from_secs(1)),
        (2, "projector exactness", criterion_2, Duration::from_secs(10)),
        (3, "projector OSEE curve", criterion_3, Duration::from_secs(5)),
        (4, "engine vs oracle ITAC", criterion_4, Duration::from_secs(300)),
        (5, "ensemble identity", criterion_5, Duration::from_secs(600)),
        (6, "sector bound", criterion_6, Duration::from_secs(300)),
        (7, "projection-order equivalence", criterion_7, Duration::from_secs(300)),
        (8, "Bose-Hubbard cross-picture", criterion_8, Duration::from_secs(600)),
        (9, "Trotter order", criterion_9, Duration::from_secs(60)),
        (10, "cutoff accounting", criterion_10, Duration::from_secs(120)),
        (11, "eigenstate fixed points", criterion_11, Duration::from_secs(60)),
        (12, "fit recovery", criterion_12, Duration::from_secs(60)),
    ];
    let mut failed = 0;
    for (id, name, run, limit) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| *f == id.to_string() || name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let (status, detail) = match outcome {
            Ok(d) if elapsed <= limit => ("PASS", d),
            Ok(d) => ("FAIL", format!("{d}; runtime {elapsed:.2?} exceeds {limit:?}")),
            Err(d) => ("FAIL", d),
        };
        if status == "FAIL" {
            failed += 1;
        }
        println!("criterion {id:>2} [{status}] {name}: {detail} [{elapsed:.2?}]");
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
