//! Executes a [`RunConfig`] and emits the CSV and JSON sidecar.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context};
use hmpo::observables::prepare_operator;
use hmpo::{
    expectation_in_state, itac_canonical, itac_grand_canonical, CanonicalMps, ChargeScheme, Evolution, Evolvable,
    LocalOperator, Method, ModelKind, SuperState, Termination, C64,
};
use serde::Serialize;

use crate::config::{ObservableName, RunConfig};

pub const CSV_HEADER: &str = "t,re,im,accumulated_cutoff,max_osee,chi_max_used";

/// One emitted sample.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub t: f64,
    pub value: C64,
    pub accumulated_cutoff: f64,
    pub max_osee: f64,
    pub chi_max_used: usize,
}

impl Row {
    pub fn to_csv(&self) -> String {
        format!(
            "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}",
            self.t, self.value.re, self.value.im, self.accumulated_cutoff, self.max_osee, self.chi_max_used
        )
    }
}

#[derive(Debug)]
pub struct RunOutcome {
    pub rows: Vec<Row>,
    pub termination: Termination,
    pub steps: usize,
    pub accumulated_cutoff: f64,
    pub sum_approximation: f64,
    /// Rows already on disk from before a resumed checkpoint.
    pub resumed_from: Option<usize>,
}

impl RunOutcome {
    pub fn final_time(&self) -> f64 {
        self.rows.last().map_or(0.0, |r| r.t)
    }
}

#[derive(Serialize)]
struct Sidecar<'a> {
    config: &'a RunConfig,
    library_version: &'a str,
    cli_version: &'a str,
    termination: Termination,
    steps: usize,
    final_time: f64,
    accumulated_cutoff: f64,
    sum_approximation: f64,
    resumed_from_step: Option<usize>,
    started_unix_seconds: u64,
    wall_seconds: f64,
}

/// Local operator whose evolution drives the run.
fn local_operator(cfg: &RunConfig) -> LocalOperator {
    match (cfg.observable, cfg.model_spec().model) {
        (ObservableName::Density, _) | (_, ModelKind::BoseHubbard { .. }) => LocalOperator::number(cfg.d),
        (_, ModelKind::Xxz { .. }) => LocalOperator::sigma_z(),
    }
}

/// Checkpoint file used for `cfg`.
pub fn checkpoint_path(cfg: &RunConfig) -> Option<PathBuf> {
    cfg.output.as_ref().map(|p| p.with_extension("checkpoint.json"))
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

/// Runs the evolution, optionally resuming from a checkpoint.
pub fn execute(cfg: &RunConfig, resume: Option<&Path>) -> anyhow::Result<RunOutcome> {
    let spec = cfg.model_spec();
    let settings = cfg.settings()?;
    let method = cfg.method();
    let factors = local_operator(cfg).at(cfg.site, cfg.length)?;
    let reference = match method {
        Method::Brute => SuperState::lift_product_operator_with(&factors, ChargeScheme::Brute)?,
        _ => SuperState::lift_product_operator(&factors)?,
    };
    let psi = match &cfg.occupations {
        Some(occ) if cfg.observable == ObservableName::Density => Some(CanonicalMps::from_fock(occ, cfg.d)?),
        _ => None,
    };

    let (mut ev, resumed_from) = match resume {
        Some(path) => {
            let ev: Evolution<SuperState> =
                Evolution::restore(path).with_context(|| format!("restoring {}", path.display()))?;
            if *ev.spec() != spec || *ev.settings() != settings {
                bail!("checkpoint {} was written for a different configuration", path.display());
            }
            let done = ev.steps_done();
            (ev, Some(done))
        }
        None => (Evolution::new(prepare_operator(&factors, method)?, spec, settings)?, None),
    };
    if let (Some(every), Some(path)) = (cfg.checkpoint_every, checkpoint_path(cfg)) {
        ev.set_checkpointing(path, every);
    }

    let mut rows = Vec::new();
    let termination = ev.run(|e| {
        let target = e.target();
        let value = match cfg.observable {
            ObservableName::Itac => match method {
                Method::Canonical { n } => itac_canonical(target, &reference, n)?,
                _ => itac_grand_canonical(target, &reference)?,
            },
            ObservableName::Density => expectation_in_state(target, psi.as_ref().expect("density has a state"))?,
            ObservableName::Osee => C64::new(target.chain().entanglement_entropy(cfg.bond)?, 0.0),
        };
        let (max_osee, chi_max_used) = match e.log().steps().last() {
            Some(s) => (s.max_osee, s.chi_max_used),
            None => (
                target.chain().entropy_profile().into_iter().fold(0.0, f64::max),
                target.chain().max_bond_dim(),
            ),
        };
        rows.push(Row { t: e.time(), value, accumulated_cutoff: e.log().accumulated_cutoff(), max_osee, chi_max_used });
        Ok(())
    })?;
    let log = ev.log();
    Ok(RunOutcome {
        rows,
        termination,
        steps: ev.steps_done(),
        accumulated_cutoff: log.accumulated_cutoff(),
        sum_approximation: log.sum_approximation(),
        resumed_from,
    })
}

/// Writes the CSV body. A resumed run keeps the rows that precede the checkpoint.
fn write_csv(path: &Path, outcome: &RunOutcome) -> anyhow::Result<()> {
    let mut lines: Vec<String> = vec![CSV_HEADER.to_string()];
    if let Some(done) = outcome.resumed_from {
        let old = fs::read_to_string(path).with_context(|| format!("reading {} to resume", path.display()))?;
        let kept: Vec<&str> = old.lines().skip(1).take(done).collect();
        if kept.len() != done {
            bail!("{} holds {} rows, the checkpoint expects {done}", path.display(), kept.len());
        }
        lines.extend(kept.into_iter().map(str::to_string));
    }
    lines.extend(outcome.rows.iter().map(Row::to_csv));
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    for l in &lines {
        writeln!(f, "{l}")?;
    }
    Ok(())
}

fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Runs `cfg` and writes its artifacts; without an output path the CSV goes to stdout.
pub fn simulate(cfg: &RunConfig, resume: Option<&Path>) -> anyhow::Result<RunOutcome> {
    simulate_with(cfg, resume, true)
}

/// Like [`simulate`] but never prints the CSV.
pub fn simulate_quiet(cfg: &RunConfig) -> anyhow::Result<RunOutcome> {
    simulate_with(cfg, None, false)
}

fn simulate_with(cfg: &RunConfig, resume: Option<&Path>, print: bool) -> anyhow::Result<RunOutcome> {
    let started = unix_now();
    let clock = Instant::now();
    let outcome = execute(cfg, resume)?;
    match &cfg.output {
        Some(path) => {
            write_csv(path, &outcome)?;
            let sidecar = Sidecar {
                config: cfg,
                library_version: hmpo::VERSION,
                cli_version: env!("CARGO_PKG_VERSION"),
                termination: outcome.termination,
                steps: outcome.steps,
                final_time: outcome.final_time(),
                accumulated_cutoff: outcome.accumulated_cutoff,
                sum_approximation: outcome.sum_approximation,
                resumed_from_step: outcome.resumed_from,
                started_unix_seconds: started,
                wall_seconds: clock.elapsed().as_secs_f64(),
            };
            fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)?)?;
        }
        None if print => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{CSV_HEADER}")?;
            for r in &outcome.rows {
                writeln!(out, "{}", r.to_csv())?;
            }
        }
        None => {}
    }
    Ok(outcome)
}

pub fn termination_label(t: Termination) -> &'static str {
    match t {
        Termination::TMax => "t_max",
        Termination::Budget => "budget",
    }
}
