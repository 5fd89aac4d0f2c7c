//! Trotterized time evolution of states and superstates.
//!
//! One full step applies the stages of a [`TrotterSchedule`]; every stage
//! applies the gates of one sublattice of bonds in parallel. Superstates are
//! evolved in the Heisenberg picture, `Ô(t) = U† Ô U`, with the stage order
//! reversed so the product of gates matches the Schrödinger propagator.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::charge_tensor::TruncationPolicy;
use crate::error::{Error, Result};
use crate::models::{bond_gate, super_gate, BondGate, ModelSpec};
use crate::mps::{CanonicalMps, TruncationRecord};
use crate::operator_space::SuperState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sublattice {
    /// Bonds 1, 3, 5, ...
    Even,
    /// Bonds 2, 4, 6, ...
    Odd,
}

impl Sublattice {
    pub fn bonds(self, length: usize) -> Vec<usize> {
        let first = match self {
            Sublattice::Even => 1,
            Sublattice::Odd => 2,
        };
        (first..length).step_by(2).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub sublattice: Sublattice,
    /// Fraction of `dt` for this stage.
    pub coefficient: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrotterSchedule {
    order: u32,
    dt: f64,
    stages: Vec<Stage>,
}

fn strang(c: f64) -> [Stage; 3] {
    [
        Stage { sublattice: Sublattice::Even, coefficient: c / 2.0 },
        Stage { sublattice: Sublattice::Odd, coefficient: c },
        Stage { sublattice: Sublattice::Even, coefficient: c / 2.0 },
    ]
}

/// Builds the stage list for `order` ∈ {1, 2, 4}.
///
/// Order 4 is the symmetric five-fold Suzuki composition
/// `S₂(p) S₂(p) S₂(1 − 4p) S₂(p) S₂(p)` with `p = 1/(4 − 4^{1/3})`; adjacent
/// stages on the same sublattice are merged.
pub fn make_schedule(order: u32, dt: f64) -> Result<TrotterSchedule> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::InvalidArgument("time step must be positive".into()));
    }
    let raw: Vec<Stage> = match order {
        1 => vec![
            Stage { sublattice: Sublattice::Even, coefficient: 1.0 },
            Stage { sublattice: Sublattice::Odd, coefficient: 1.0 },
        ],
        2 => strang(1.0).to_vec(),
        4 => {
            let p = 1.0 / (4.0 - 4f64.powf(1.0 / 3.0));
            [p, p, 1.0 - 4.0 * p, p, p].iter().flat_map(|&c| strang(c)).collect()
        }
        other => return Err(Error::UnsupportedOrder(other)),
    };
    let mut stages: Vec<Stage> = Vec::with_capacity(raw.len());
    for s in raw {
        match stages.last_mut() {
            Some(last) if last.sublattice == s.sublattice => last.coefficient += s.coefficient,
            _ => stages.push(s),
        }
    }
    Ok(TrotterSchedule { order, dt, stages })
}

impl TrotterSchedule {
    pub fn order(&self) -> u32 {
        self.order
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    /// Total coefficient per sublattice, `(even, odd)`.
    pub fn coefficient_sums(&self) -> (f64, f64) {
        self.stages.iter().fold((0.0, 0.0), |(e, o), s| match s.sublattice {
            Sublattice::Even => (e + s.coefficient, o),
            Sublattice::Odd => (e, o + s.coefficient),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    TMax,
    Budget,
}

/// Measurements taken after one full step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSummary {
    pub time: f64,
    pub accumulated_cutoff: f64,
    pub max_osee: f64,
    pub chi_max_used: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvolutionLog {
    records: Vec<TruncationRecord>,
    steps: Vec<StepSummary>,
    product: f64,
    sum: f64,
    termination: Option<Termination>,
}

impl EvolutionLog {
    pub fn new() -> Self {
        Self { product: 1.0, ..Default::default() }
    }

    pub fn push(&mut self, record: TruncationRecord) {
        self.product *= record.nu;
        self.sum += 1.0 - record.nu;
        self.records.push(record);
    }

    pub fn records(&self) -> &[TruncationRecord] {
        &self.records
    }

    pub fn steps(&self) -> &[StepSummary] {
        &self.steps
    }

    /// `Π ν_j` over all records.
    pub fn norm_product(&self) -> f64 {
        self.product
    }

    pub fn accumulated_cutoff(&self) -> f64 {
        1.0 - self.product
    }

    /// `Σ (1 − ν_j)`, the first-order approximation of the cutoff.
    pub fn sum_approximation(&self) -> f64 {
        self.sum
    }

    pub fn termination(&self) -> Option<Termination> {
        self.termination
    }
}

/// `(1 − Π ν_j, Σ (1 − ν_j))` of a log.
pub fn accumulated_cutoff(log: &EvolutionLog) -> (f64, f64) {
    (log.accumulated_cutoff(), log.sum_approximation())
}

/// Objects that can be driven by bond gates.
pub trait Evolvable {
    fn chain(&self) -> &CanonicalMps;
    fn chain_mut(&mut self) -> &mut CanonicalMps;
    /// Turns a physical gate into the gate acting on this object's sites.
    fn lift_gate(&self, gate: &BondGate) -> Result<BondGate>;
    /// Whether stages run in reverse order (Heisenberg picture).
    fn heisenberg(&self) -> bool;
    /// Local dimension of the physical model this object belongs to.
    fn model_d(&self) -> usize;
}

impl Evolvable for CanonicalMps {
    fn chain(&self) -> &CanonicalMps {
        self
    }

    fn chain_mut(&mut self) -> &mut CanonicalMps {
        self
    }

    fn lift_gate(&self, gate: &BondGate) -> Result<BondGate> {
        Ok(gate.clone())
    }

    fn heisenberg(&self) -> bool {
        false
    }

    fn model_d(&self) -> usize {
        self.basis(1).dim()
    }
}

impl Evolvable for SuperState {
    fn chain(&self) -> &CanonicalMps {
        self.mps()
    }

    fn chain_mut(&mut self) -> &mut CanonicalMps {
        self.mps_mut()
    }

    fn lift_gate(&self, gate: &BondGate) -> Result<BondGate> {
        super_gate(gate, self.scheme())
    }

    fn heisenberg(&self) -> bool {
        true
    }

    fn model_d(&self) -> usize {
        self.d()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionSettings {
    pub schedule: TrotterSchedule,
    pub t_max: f64,
    pub policy: TruncationPolicy,
    pub cutoff_budget: f64,
}

impl EvolutionSettings {
    pub fn new(schedule: TrotterSchedule, t_max: f64, policy: TruncationPolicy, cutoff_budget: f64) -> Result<Self> {
        let s = Self { schedule, t_max, policy, cutoff_budget };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_max.is_finite() && self.t_max >= 0.0) {
            return Err(Error::InvalidArgument("t_max must be finite and non-negative".into()));
        }
        if !(self.cutoff_budget > 0.0 && self.cutoff_budget <= 1.0) {
            return Err(Error::InvalidArgument("cutoff budget must lie in (0, 1]".into()));
        }
        Ok(())
    }

    /// Number of full steps needed to reach `t_max`.
    pub fn step_count(&self) -> usize {
        let n = self.t_max / self.schedule.dt();
        (n - 1e-9).ceil().max(0.0) as usize
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint<T> {
    target: T,
    log: EvolutionLog,
    steps_done: usize,
    settings: EvolutionSettings,
    spec: ModelSpec,
}

pub struct Evolution<T: Evolvable> {
    target: T,
    spec: ModelSpec,
    settings: EvolutionSettings,
    /// Lifted gates per stage, indexed by bond − 1.
    gates: Vec<Vec<Option<BondGate>>>,
    log: EvolutionLog,
    steps_done: usize,
    checkpoint: Option<(PathBuf, usize)>,
}

impl<T: Evolvable + Sync> Evolution<T> {
    pub fn new(target: T, spec: ModelSpec, settings: EvolutionSettings) -> Result<Self> {
        Self::with_log(target, spec, settings, EvolutionLog::new(), 0)
    }

    fn with_log(target: T, spec: ModelSpec, settings: EvolutionSettings, log: EvolutionLog, steps_done: usize) -> Result<Self> {
        spec.validate()?;
        settings.validate()?;
        if target.chain().length() != spec.length {
            return Err(Error::ShapeMismatch(format!(
                "target has {} sites, model has {}",
                target.chain().length(),
                spec.length
            )));
        }
        if target.model_d() != spec.d {
            return Err(Error::ShapeMismatch("target and model have different local dimensions".into()));
        }
        let mut table: HashMap<(usize, u64), BondGate> = HashMap::new();
        let mut gates = Vec::with_capacity(settings.schedule.stages().len());
        for stage in settings.schedule.stages() {
            let tau = stage.coefficient * settings.schedule.dt();
            let mut row = vec![None; spec.length - 1];
            for m in stage.sublattice.bonds(spec.length) {
                let key = (m, tau.to_bits());
                if !table.contains_key(&key) {
                    let g = target.lift_gate(&bond_gate(&spec, m, tau)?)?;
                    table.insert(key, g);
                }
                row[m - 1] = Some(table[&key].clone());
            }
            gates.push(row);
        }
        Ok(Self { target, spec, settings, gates, log, steps_done, checkpoint: None })
    }

    pub fn target(&self) -> &T {
        &self.target
    }

    pub fn into_target(self) -> T {
        self.target
    }

    pub fn into_parts(self) -> (T, EvolutionLog) {
        (self.target, self.log)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn settings(&self) -> &EvolutionSettings {
        &self.settings
    }

    pub fn log(&self) -> &EvolutionLog {
        &self.log
    }

    pub fn steps_done(&self) -> usize {
        self.steps_done
    }

    pub fn time(&self) -> f64 {
        self.steps_done as f64 * self.settings.schedule.dt()
    }

    /// Writes a checkpoint to `path` every `every` steps during [`Evolution::run`].
    pub fn set_checkpointing(&mut self, path: impl Into<PathBuf>, every: usize) {
        self.checkpoint = Some((path.into(), every.max(1)));
    }

    fn apply_stage(&mut self, k: usize) -> Result<()> {
        let policy = self.settings.policy;
        let bonds: Vec<usize> = self.settings.schedule.stages()[k].sublattice.bonds(self.spec.length);
        let row = &self.gates[k];
        let chain = self.target.chain();
        let updates = bonds
            .par_iter()
            .map(|&m| chain.two_site_update(m, row[m - 1].as_ref().expect("gate table covers the stage"), &policy))
            .collect::<Result<Vec<_>>>()?;
        let chain = self.target.chain_mut();
        for u in updates {
            let record = chain.commit(u);
            self.log.push(record);
        }
        Ok(())
    }

    /// Advances by one full Trotter step and appends a [`StepSummary`].
    pub fn step(&mut self) -> Result<&StepSummary> {
        let n = self.gates.len();
        let first = self.log.records.len();
        for i in 0..n {
            let k = if self.target.heisenberg() { n - 1 - i } else { i };
            self.apply_stage(k)?;
        }
        self.steps_done += 1;
        let chi_max_used = self.log.records[first..].iter().map(|r| r.chi_used).max().unwrap_or(0).max(self.target.chain().max_bond_dim());
        let max_osee = self.target.chain().entropy_profile().into_iter().fold(0.0, f64::max);
        self.log.steps.push(StepSummary {
            time: self.time(),
            accumulated_cutoff: self.log.accumulated_cutoff(),
            max_osee,
            chi_max_used,
        });
        Ok(self.log.steps.last().unwrap())
    }

    /// Runs until `t_max` or until the accumulated cutoff reaches the budget.
    ///
    /// The observer sees the initial object and then the object after every
    /// full step.
    pub fn run<F>(&mut self, mut observer: F) -> Result<Termination>
    where
        F: FnMut(&Self) -> Result<()>,
        T: Serialize,
    {
        observer(self)?;
        let total = self.settings.step_count();
        let termination = loop {
            if self.log.accumulated_cutoff() >= self.settings.cutoff_budget {
                break Termination::Budget;
            }
            if self.steps_done >= total {
                break Termination::TMax;
            }
            self.step()?;
            observer(self)?;
            if let Some((path, every)) = &self.checkpoint {
                if self.steps_done % every == 0 {
                    self.save_checkpoint(path)?;
                }
            }
        };
        self.log.termination = Some(termination);
        Ok(termination)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()>
    where
        T: Serialize,
    {
        let cp = CheckpointRef {
            target: &self.target,
            log: &self.log,
            steps_done: self.steps_done,
            settings: &self.settings,
            spec: &self.spec,
        };
        std::fs::write(path, serde_json::to_string(&cp)?)?;
        Ok(())
    }

    /// Resumes an evolution written by [`Evolution::save_checkpoint`].
    pub fn restore(path: impl AsRef<Path>) -> Result<Self>
    where
        T: DeserializeOwned,
    {
        let cp: Checkpoint<T> = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        Self::with_log(cp.target, cp.spec, cp.settings, cp.log, cp.steps_done)
    }
}

#[derive(Serialize)]
struct CheckpointRef<'a, T> {
    target: &'a T,
    log: &'a EvolutionLog,
    steps_done: usize,
    settings: &'a EvolutionSettings,
    spec: &'a ModelSpec,
}

/// Evolves `target` to `settings.t_max` (or the budget) and returns it with its log.
pub fn evolve<T, F>(target: T, spec: &ModelSpec, settings: &EvolutionSettings, mut observer: F) -> Result<(T, EvolutionLog)>
where
    T: Evolvable + Sync + Serialize,
    F: FnMut(f64, &EvolutionLog, &T) -> Result<()>,
{
    let mut ev = Evolution::new(target, *spec, settings.clone())?;
    ev.run(|e| observer(e.time(), e.log(), e.target()))?;
    Ok(ev.into_parts())
}
