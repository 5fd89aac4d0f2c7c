//! Autocorrelations, local densities and the empirical decay fit.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use num_traits::ToPrimitive;
use serde::{Deserialize, Serialize};

use crate::charge_tensor::C64;
use crate::error::{Error, Result};
use crate::evolution::{Evolution, EvolutionLog, EvolutionSettings};
use crate::models::ModelSpec;
use crate::mps::CanonicalMps;
use crate::operator_space::{expectation_in_state, hs_trace_pair, ChargeScheme, LocalOperator, SuperState};
use crate::projector::{omega, project_superstate};

/// How particle-number conservation enters the operator evolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Method {
    Brute,
    GrandCanonical,
    Canonical { n: usize },
}

impl Method {
    pub fn label(&self) -> String {
        match self {
            Method::Brute => "brute".into(),
            Method::GrandCanonical => "grand_canonical".into(),
            Method::Canonical { n } => format!("canonical({n})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesMeta {
    pub observable: String,
    pub method: Method,
    pub chi: Option<usize>,
    pub dt: f64,
}

/// Complex samples on a strictly increasing time grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub meta: SeriesMeta,
    times: Vec<f64>,
    values: Vec<C64>,
    accumulated_cutoff: Vec<f64>,
    max_osee: Vec<f64>,
    chi_max_used: Vec<usize>,
}

impl TimeSeries {
    pub fn new(meta: SeriesMeta) -> Self {
        Self {
            meta,
            times: Vec::new(),
            values: Vec::new(),
            accumulated_cutoff: Vec::new(),
            max_osee: Vec::new(),
            chi_max_used: Vec::new(),
        }
    }

    /// Builds a bare series, e.g. from oracle values.
    pub fn from_samples(meta: SeriesMeta, times: Vec<f64>, values: Vec<C64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::ShapeMismatch("times and values differ in length".into()));
        }
        let mut s = Self::new(meta);
        for (t, v) in times.into_iter().zip(values) {
            s.push(t, v, 0.0, 0.0, 0)?;
        }
        Ok(s)
    }

    pub fn push(&mut self, t: f64, value: C64, accumulated_cutoff: f64, max_osee: f64, chi_max_used: usize) -> Result<()> {
        if let Some(&last) = self.times.last() {
            if t <= last {
                return Err(Error::InvalidArgument("time series must be strictly increasing".into()));
            }
        }
        self.times.push(t);
        self.values.push(value);
        self.accumulated_cutoff.push(accumulated_cutoff);
        self.max_osee.push(max_osee);
        self.chi_max_used.push(chi_max_used);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[C64] {
        &self.values
    }

    pub fn accumulated_cutoff(&self) -> &[f64] {
        &self.accumulated_cutoff
    }

    pub fn max_osee(&self) -> &[f64] {
        &self.max_osee
    }

    pub fn chi_max_used(&self) -> &[usize] {
        &self.chi_max_used
    }

    pub fn real_parts(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.re).collect()
    }
}

fn omega_f64(d: usize, n: usize, l: usize) -> f64 {
    omega(d, n, l).to_f64().unwrap_or(f64::INFINITY)
}

/// `G(t) = Tr[Ô† Ô(t)] / d^L`.
pub fn itac_grand_canonical(evolved: &SuperState, reference: &SuperState) -> Result<C64> {
    let dim = (evolved.d() as f64).powi(evolved.length() as i32);
    Ok(hs_trace_pair(reference, evolved)? / C64::new(dim, 0.0))
}

/// `C_N(t) = Tr[Ô† (P_N Ô P_N)(t)] / Ω_d(N, L)`.
pub fn itac_canonical(evolved_projected: &SuperState, reference: &SuperState, n: usize) -> Result<C64> {
    let (d, l) = (evolved_projected.d(), evolved_projected.length());
    let w = omega_f64(d, n, l);
    if w == 0.0 {
        return Err(Error::InfeasibleParticleNumber { n: n as i64, length: l, d });
    }
    Ok(hs_trace_pair(reference, evolved_projected)? / C64::new(w, 0.0))
}

/// `C_N(t)` from an operator evolved without projection, projecting afterwards.
pub fn itac_canonical_after_evolution(evolved: &SuperState, reference: &SuperState, n: usize) -> Result<C64> {
    let projected = project_superstate(evolved, n as i64)?;
    itac_canonical(&projected, reference, n)
}

/// Lifts a product operator in the form required by `method`.
pub fn prepare_operator(factors: &[LocalOperator], method: Method) -> Result<SuperState> {
    match method {
        Method::Brute => SuperState::lift_product_operator_with(factors, ChargeScheme::Brute),
        Method::GrandCanonical => SuperState::lift_product_operator(factors),
        Method::Canonical { n } => project_superstate(&SuperState::lift_product_operator(factors)?, n as i64),
    }
}

fn record<T: crate::evolution::Evolvable + Sync>(series: &mut TimeSeries, ev: &Evolution<T>, value: C64) -> Result<()> {
    let (osee, chi) = match ev.log().steps().last() {
        Some(s) => (s.max_osee, s.chi_max_used),
        None => (
            ev.target().chain().entropy_profile().into_iter().fold(0.0, f64::max),
            ev.target().chain().max_bond_dim(),
        ),
    };
    series.push(ev.time(), value, ev.log().accumulated_cutoff(), osee, chi)
}

/// Autocorrelation of `op` at `site`, one sample per full step.
pub fn itac_series(
    spec: &ModelSpec,
    op: &LocalOperator,
    site: usize,
    method: Method,
    settings: &EvolutionSettings,
) -> Result<(TimeSeries, EvolutionLog)> {
    let factors = op.at(site, spec.length)?;
    let reference = match method {
        Method::Brute => SuperState::lift_product_operator_with(&factors, ChargeScheme::Brute)?,
        _ => SuperState::lift_product_operator(&factors)?,
    };
    let start = prepare_operator(&factors, method)?;
    let mut series = TimeSeries::new(SeriesMeta {
        observable: format!("itac site {site}"),
        method,
        chi: Some(settings.policy.chi_max),
        dt: settings.schedule.dt(),
    });
    let mut ev = Evolution::new(start, *spec, settings.clone())?;
    ev.run(|e| {
        let v = match method {
            Method::Canonical { n } => itac_canonical(e.target(), &reference, n)?,
            _ => itac_grand_canonical(e.target(), &reference)?,
        };
        record(&mut series, e, v)
    })?;
    let (_, log) = ev.into_parts();
    Ok((series, log))
}

/// `max_t |G(t) − d^{−L} Σ_n Ω_d(n, L) C_n(t)|`.
pub fn ensemble_relation_check(g: &TimeSeries, sectors: &BTreeMap<usize, TimeSeries>, d: usize, length: usize) -> Result<f64> {
    let n_max = length * (d - 1);
    for n in 0..=n_max {
        match sectors.get(&n) {
            None => return Err(Error::MissingSector(n)),
            Some(s) if s.times() != g.times() => {
                return Err(Error::ShapeMismatch(format!("sector {n} is sampled on a different time grid")))
            }
            _ => {}
        }
    }
    let total = (d as f64).powi(length as i32);
    let weights: Vec<f64> = (0..=n_max).map(|n| omega_f64(d, n, length) / total).collect();
    let mut worst = 0.0f64;
    for (k, gv) in g.values().iter().enumerate() {
        let avg: C64 = (0..=n_max).map(|n| sectors[&n].values()[k] * weights[n]).sum();
        worst = worst.max((gv - avg).norm());
    }
    Ok(worst)
}

/// `⟨Ψ₀| n̂_site(t) |Ψ₀⟩` for a Fock state `Ψ₀`, evolved in the Heisenberg picture.
pub fn local_density_series(
    spec: &ModelSpec,
    occupations: &[usize],
    site: usize,
    method: Method,
    settings: &EvolutionSettings,
) -> Result<TimeSeries> {
    if occupations.len() != spec.length {
        return Err(Error::ShapeMismatch("one occupation per site is required".into()));
    }
    let psi = CanonicalMps::from_fock(occupations, spec.d)?;
    let n: usize = occupations.iter().sum();
    let method = match method {
        Method::Canonical { .. } => Method::Canonical { n },
        m => m,
    };
    let factors = LocalOperator::number(spec.d).at(site, spec.length)?;
    let start = prepare_operator(&factors, method)?;
    let mut series = TimeSeries::new(SeriesMeta {
        observable: format!("density site {site}"),
        method,
        chi: Some(settings.policy.chi_max),
        dt: settings.schedule.dt(),
    });
    let mut ev = Evolution::new(start, *spec, settings.clone())?;
    ev.run(|e| {
        let v = expectation_in_state(e.target(), &psi)?;
        record(&mut series, e, v)
    })?;
    Ok(series)
}

/// Parameters of `t^κ [A + B e^{−γ(t−t₀)} cos(Ω(t−t₀))]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitParams {
    pub kappa: f64,
    pub a: f64,
    pub b: f64,
    pub gamma: f64,
    pub omega: f64,
    pub t0: f64,
}

impl FitParams {
    #[cfg(test)]
    fn to_vec(self) -> [f64; 6] {
        [self.kappa, self.a, self.b, self.gamma, self.omega, self.t0]
    }

    fn from_slice(p: &[f64]) -> Self {
        Self { kappa: p[0], a: p[1], b: p[2], gamma: p[3], omega: p[4], t0: p[5] }
    }

    pub fn evaluate(&self, t: f64) -> f64 {
        let s = t - self.t0;
        t.powf(self.kappa) * (self.a + self.b * (-self.gamma * s).exp() * (self.omega * s).cos())
    }

    /// Value and gradient with respect to `[κ, A, B, γ, Ω, t₀]`.
    fn value_and_gradient(&self, t: f64) -> (f64, [f64; 6]) {
        let s = t - self.t0;
        let tk = t.powf(self.kappa);
        let e = (-self.gamma * s).exp();
        let (sn, cs) = (self.omega * s).sin_cos();
        let bracket = self.a + self.b * e * cs;
        let f = tk * bracket;
        let grad = [
            t.ln() * f,
            tk,
            tk * e * cs,
            -tk * self.b * s * e * cs,
            -tk * self.b * e * sn * s,
            tk * self.b * e * (self.gamma * cs + self.omega * sn),
        ];
        (f, grad)
    }

    /// Picks the representative with `Ω ≥ 0`, `B ≥ 0` and `t₀` closest to `anchor`.
    fn canonical(mut self, anchor: f64) -> Self {
        if self.omega < 0.0 {
            self.omega = -self.omega;
        }
        if self.b == 0.0 || self.omega == 0.0 {
            return self;
        }
        let period = 2.0 * std::f64::consts::PI / self.omega;
        if self.b < 0.0 {
            self.b = -self.b;
            self.shift_t0(period / 2.0);
        }
        let k = ((self.t0 - anchor) / period).round();
        self.shift_t0(-k * period);
        self
    }

    /// Moves `t₀` while keeping the oscillating term unchanged.
    fn shift_t0(&mut self, delta: f64) {
        self.b *= (-self.gamma * delta).exp();
        self.t0 += delta;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub params: FitParams,
    /// Sum of squared residuals.
    pub residual: f64,
    pub iterations: usize,
}

const FIT_MIN_SAMPLES: usize = 12;
const FIT_MAX_ITERATIONS: usize = 2000;
const FIT_SCAN_ITERATIONS: usize = 60;
const FIT_REFINED_STARTS: usize = 4;

struct LmResult {
    params: [f64; 6],
    cost: f64,
    iterations: usize,
    converged: bool,
}

fn cost_of(p: &FitParams, t: &[f64], y: &[f64]) -> f64 {
    t.iter().zip(y).map(|(&t, &y)| (y - p.evaluate(t)).powi(2)).sum()
}

fn levenberg_marquardt(start: [f64; 6], t: &[f64], y: &[f64], max_iterations: usize) -> LmResult {
    let mut p = start;
    let mut cost = cost_of(&FitParams::from_slice(&p), t, y);
    let scale: f64 = y.iter().map(|v| v * v).sum();
    let mut lambda = 1e-3;
    for it in 0..max_iterations {
        if cost <= 1e-30 * scale {
            return LmResult { params: p, cost, iterations: it, converged: true };
        }
        let fp = FitParams::from_slice(&p);
        let mut jtj = DMatrix::<f64>::zeros(6, 6);
        let mut jtr = DVector::<f64>::zeros(6);
        for (&ti, &yi) in t.iter().zip(y) {
            let (f, g) = fp.value_and_gradient(ti);
            let r = yi - f;
            for a in 0..6 {
                jtr[a] += g[a] * r;
                for b in 0..6 {
                    jtj[(a, b)] += g[a] * g[b];
                }
            }
        }
        let diag_floor = 1e-12 * (0..6).map(|k| jtj[(k, k)]).fold(0.0, f64::max);
        loop {
            let mut m = jtj.clone();
            for k in 0..6 {
                m[(k, k)] += lambda * jtj[(k, k)].max(diag_floor);
            }
            let step = match m.clone().cholesky() {
                Some(ch) => ch.solve(&jtr),
                None => {
                    lambda *= 10.0;
                    if lambda > 1e16 {
                        return LmResult { params: p, cost, iterations: it, converged: true };
                    }
                    continue;
                }
            };
            let mut trial = p;
            for k in 0..6 {
                trial[k] += step[k];
            }
            trial[3] = trial[3].max(0.0);
            let trial_cost = cost_of(&FitParams::from_slice(&trial), t, y);
            if trial_cost.is_finite() && trial_cost < cost {
                let small_step = (0..6).all(|k| step[k].abs() <= 1e-12 * (p[k].abs() + 1e-12));
                let small_gain = cost - trial_cost <= 1e-15 * cost;
                p = trial;
                cost = trial_cost;
                lambda = (lambda / 3.0).max(1e-15);
                if small_step || small_gain {
                    return LmResult { params: p, cost, iterations: it + 1, converged: true };
                }
                break;
            }
            lambda *= 2.0;
            if lambda > 1e16 {
                // no downhill direction left: a stationary point
                return LmResult { params: p, cost, iterations: it, converged: true };
            }
        }
    }
    LmResult { params: p, cost, iterations: max_iterations, converged: false }
}

/// Least-squares fit of `Re` of `series` inside `[t_lo, t_hi]`.
///
/// The first start is `κ` from the log-log slope between the window
/// endpoints, `A` from the first endpoint, `B = 0.1 A`, `γ = Ω = 1` and
/// `t₀ = t_lo`. Further starts scan `Ω` over a fixed grid; the fit with the
/// smallest residual wins.
pub fn fit_itac(series: &TimeSeries, window: (f64, f64)) -> Result<FitOutcome> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::UnfittableWindow(format!("window [{lo}, {hi}] must be positive and non-empty")));
    }
    let samples: Vec<(f64, f64)> = series
        .times()
        .iter()
        .zip(series.values())
        .filter(|(&t, _)| t >= lo && t <= hi)
        .map(|(&t, v)| (t, v.re))
        .collect();
    if samples.len() < FIT_MIN_SAMPLES {
        return Err(Error::UnfittableWindow(format!(
            "{} samples in window, at least {FIT_MIN_SAMPLES} needed",
            samples.len()
        )));
    }
    if let Some(&(t, y)) = samples.iter().find(|s| !(s.1 > 0.0)) {
        return Err(Error::UnfittableWindow(format!("non-positive value {y} at t = {t}")));
    }
    let t: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let (t1, y1) = samples[0];
    let (t2, y2) = *samples.last().unwrap();
    let kappa0 = (y2.ln() - y1.ln()) / (t2.ln() - t1.ln());
    let a0 = y1 / t1.powf(kappa0);

    let spacing = (t2 - t1) / (samples.len() - 1) as f64;
    let nyquist = std::f64::consts::PI / spacing;
    let mut omegas = vec![1.0];
    let mut w = 0.25;
    while w <= nyquist.min(40.0) {
        omegas.push(w);
        w += 0.25;
    }
    // short runs from every start, then full refinement of the most promising
    let mut scans: Vec<LmResult> = Vec::new();
    for omega0 in omegas {
        for gamma0 in [1.0, 0.1] {
            let start = [kappa0, a0, 0.1 * a0, gamma0, omega0, lo];
            scans.push(levenberg_marquardt(start, &t, &y, FIT_SCAN_ITERATIONS));
        }
    }
    scans.sort_by(|a, b| a.cost.total_cmp(&b.cost));
    let best = scans
        .iter()
        .take(FIT_REFINED_STARTS)
        .map(|r| {
            let mut full = levenberg_marquardt(r.params, &t, &y, FIT_MAX_ITERATIONS);
            full.iterations += r.iterations;
            full
        })
        .min_by(|a, b| a.cost.total_cmp(&b.cost));
    let best = best.expect("at least one start");
    let params = FitParams::from_slice(&best.params).canonical(lo);
    if !best.converged {
        return Err(Error::FitNotConverged { iterations: best.iterations, residual: best.cost, best: params });
    }
    Ok(FitOutcome { params, residual: cost_of(&params, &t, &y), iterations: best.iterations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charge_tensor::TruncationPolicy;
    use crate::evolution::make_schedule;

    fn meta() -> SeriesMeta {
        SeriesMeta { observable: "test".into(), method: Method::GrandCanonical, chi: None, dt: 0.0625 }
    }

    fn synthetic(p: FitParams, lo: f64, hi: f64, dt: f64) -> TimeSeries {
        let n = ((hi - lo) / dt).round() as usize;
        let times: Vec<f64> = (0..=n).map(|k| lo + k as f64 * dt).collect();
        let values = times.iter().map(|&t| C64::new(p.evaluate(t), 0.0)).collect();
        TimeSeries::from_samples(meta(), times, values).unwrap()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = FitParams { kappa: -0.7, a: 1.2, b: 0.3, gamma: 0.4, omega: 2.5, t0: 0.8 };
        let base = p.to_vec();
        for t in [0.7, 2.0, 5.5] {
            let (_, g) = p.value_and_gradient(t);
            for k in 0..6 {
                let h = 1e-6;
                let mut up = base;
                let mut dn = base;
                up[k] += h;
                dn[k] -= h;
                let fd = (FitParams::from_slice(&up).evaluate(t) - FitParams::from_slice(&dn).evaluate(t)) / (2.0 * h);
                assert!((fd - g[k]).abs() < 1e-7 * (1.0 + g[k].abs()), "param {k} at t={t}");
            }
        }
    }

    #[test]
    fn recovers_synthetic_parameters() {
        let truth = FitParams { kappa: -0.83, a: 1.0, b: 0.2, gamma: 0.5, omega: 3.0, t0: 1.0 };
        let series = synthetic(truth, 0.5, 11.5, 0.0625);
        let fit = fit_itac(&series, (0.5, 11.5)).unwrap();
        let (got, want) = (fit.params.to_vec(), truth.to_vec());
        for k in 0..6 {
            assert!((got[k] - want[k]).abs() < 1e-3, "{:?}", fit.params);
        }
    }

    #[test]
    fn pure_power_law() {
        let truth = FitParams { kappa: -0.5, a: 2.0, b: 0.0, gamma: 1.0, omega: 1.0, t0: 3.0 };
        let series = synthetic(truth, 3.0, 11.5, 0.125);
        let fit = fit_itac(&series, (3.0, 11.5)).unwrap();
        // log-log regression oracle
        let pts: Vec<(f64, f64)> = series.times().iter().zip(series.values()).map(|(t, v)| (t.ln(), v.re.ln())).collect();
        let n = pts.len() as f64;
        let (sx, sy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0, a.1 + p.1));
        let (sxx, sxy) = pts.iter().fold((0.0, 0.0), |a, p| (a.0 + p.0 * p.0, a.1 + p.0 * p.1));
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        assert!((slope + 0.5).abs() < 1e-12);
        assert!((fit.params.kappa - slope).abs() < 1e-6);
    }

    #[test]
    fn unfittable_windows() {
        let truth = FitParams { kappa: -0.5, a: 1.0, b: 0.0, gamma: 1.0, omega: 1.0, t0: 0.0 };
        let series = synthetic(truth, 1.0, 2.0, 0.25);
        assert!(matches!(fit_itac(&series, (1.0, 2.0)), Err(Error::UnfittableWindow(_))));
        let neg = TimeSeries::from_samples(
            meta(),
            (1..=20).map(|k| k as f64).collect(),
            (1..=20).map(|k| C64::new(if k == 7 { -0.1 } else { 1.0 }, 0.0)).collect(),
        )
        .unwrap();
        assert!(matches!(fit_itac(&neg, (1.0, 20.0)), Err(Error::UnfittableWindow(_))));
        assert!(matches!(fit_itac(&neg, (0.0, 20.0)), Err(Error::UnfittableWindow(_))));
    }

    #[test]
    fn canonical_representative() {
        let p = FitParams { kappa: -0.8, a: 1.0, b: -0.2, gamma: 0.5, omega: -3.0, t0: 5.0 };
        let q = p.canonical(1.0);
        assert!(q.b > 0.0 && q.omega > 0.0);
        assert!((q.t0 - 1.0).abs() <= std::f64::consts::PI / 3.0 + 1e-12);
        for t in [1.0, 2.5, 7.0] {
            assert!((p.evaluate(t) - q.evaluate(t)).abs() < 1e-12);
        }
    }

    #[test]
    fn series_and_relation_errors() {
        let mut s = TimeSeries::new(meta());
        s.push(0.0, C64::new(1.0, 0.0), 0.0, 0.0, 1).unwrap();
        assert!(s.push(0.0, C64::new(1.0, 0.0), 0.0, 0.0, 1).is_err());
        let mut sectors = BTreeMap::new();
        sectors.insert(0, s.clone());
        assert!(matches!(ensemble_relation_check(&s, &sectors, 2, 2), Err(Error::MissingSector(1))));
        sectors.insert(1, s.clone());
        sectors.insert(2, s.clone());
        assert_eq!(ensemble_relation_check(&s, &sectors, 2, 2).unwrap(), 0.0);
    }

    #[test]
    fn itac_starts_at_one() {
        let spec = ModelSpec::xxz(4, 0.8);
        let settings = EvolutionSettings::new(make_schedule(4, 0.25).unwrap(), 0.5, TruncationPolicy::exact(), 1e-2).unwrap();
        for method in [Method::Brute, Method::GrandCanonical, Method::Canonical { n: 1 }, Method::Canonical { n: 2 }] {
            let (series, _) = itac_series(&spec, &LocalOperator::sigma_z(), 2, method, &settings).unwrap();
            assert_eq!(series.len(), 3);
            assert!((series.values()[0] - C64::new(1.0, 0.0)).norm() < 1e-12, "{method:?}");
        }
        let density = local_density_series(&spec, &[0, 1, 0, 1], 1, Method::Canonical { n: 0 }, &settings).unwrap();
        assert!(density.values()[0].norm() < 1e-12);
        assert_eq!(density.meta.method, Method::Canonical { n: 2 });
    }
}
