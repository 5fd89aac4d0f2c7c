//! Run configuration: TOML file and command-line flags merged into one [`RunConfig`].

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, ValueEnum};
use hmpo::{make_schedule, omega, EvolutionSettings, Method, ModelSpec, TruncationPolicy};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelName {
    Xxz,
    #[serde(alias = "bose-hubbard")]
    BoseHubbard,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Brute,
    #[serde(alias = "grand-canonical")]
    GrandCanonical,
    Canonical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ObservableName {
    /// Infinite-temperature autocorrelation of the local operator at `site`.
    Itac,
    /// Density at `site` after a quench from a Fock state.
    Density,
    /// Operator space entanglement across `bond` of the evolving local operator.
    Osee,
}

/// Every setting of a `simulate` run, all optional so that a config file and
/// flags can be layered.
#[derive(Args, Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartialConfig {
    #[arg(long, value_enum)]
    pub model: Option<ModelName>,
    /// Anisotropy of the XXZ chain.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Bose-Hubbard hopping.
    #[arg(long)]
    pub j: Option<f64>,
    /// Bose-Hubbard on-site interaction.
    #[arg(long)]
    pub u: Option<f64>,
    /// Local dimension (fixed to 2 for XXZ).
    #[arg(long)]
    pub d: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,
    #[arg(long, value_enum)]
    pub method: Option<MethodName>,
    /// Particle number of the canonical sector.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, value_enum)]
    pub observable: Option<ObservableName>,
    #[arg(long)]
    pub site: Option<usize>,
    /// Bond for the `osee` observable; defaults to the chain centre.
    #[arg(long)]
    pub bond: Option<usize>,
    /// Initial Fock state for `density`, e.g. `0,1,0,1`; defaults to alternating 0,1.
    #[arg(long, value_delimiter = ',')]
    pub occupations: Option<Vec<usize>>,
    /// Maximum bond dimension.
    #[arg(long)]
    pub chi: Option<usize>,
    /// Singular values below this are discarded.
    #[arg(long)]
    pub floor: Option<f64>,
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub order: Option<u32>,
    #[arg(long = "tmax")]
    #[serde(alias = "tmax")]
    pub t_max: Option<f64>,
    #[arg(long = "budget")]
    #[serde(alias = "budget")]
    pub cutoff_budget: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// CSV path; the sidecar is written next to it with a `.json` extension.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Write a checkpoint every this many steps.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($f:ident),*) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f.clone(); } )*
    };
}

impl PartialConfig {
    pub fn from_toml_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(mut self, top: &PartialConfig) -> Self {
        overlay!(self, top; model, delta, j, u, d, length, method, n, observable, site, bond,
            occupations, chi, floor, dt, order, t_max, cutoff_budget, seed, output, checkpoint_every);
        self
    }

    /// Loads `config` if given, then applies the flags in `self`.
    pub fn resolve(&self, config: Option<&Path>) -> anyhow::Result<RunConfig> {
        let base = match config {
            Some(p) => Self::from_toml_file(p)?,
            None => Self::default(),
        };
        RunConfig::try_from(base.overlay(self))
    }
}

/// A validated simulation configuration, mirrored verbatim into the sidecar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model: ModelName,
    pub delta: f64,
    pub j: f64,
    pub u: f64,
    pub d: usize,
    pub length: usize,
    pub method: MethodName,
    pub n: Option<usize>,
    pub observable: ObservableName,
    pub site: usize,
    pub bond: usize,
    pub occupations: Option<Vec<usize>>,
    pub chi: usize,
    pub floor: f64,
    pub dt: f64,
    pub order: u32,
    pub t_max: f64,
    pub cutoff_budget: f64,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub checkpoint_every: Option<usize>,
}

fn required<T>(v: Option<T>, name: &str) -> anyhow::Result<T> {
    v.with_context(|| format!("missing required setting `{name}`"))
}

impl TryFrom<PartialConfig> for RunConfig {
    type Error = anyhow::Error;

    fn try_from(p: PartialConfig) -> anyhow::Result<Self> {
        let model = required(p.model, "model")?;
        let length = required(p.length, "length")?;
        let d = match model {
            ModelName::Xxz => match p.d {
                None | Some(2) => 2,
                Some(d) => bail!("the XXZ chain has d = 2, got d = {d}"),
            },
            ModelName::BoseHubbard => required(p.d, "d")?,
        };
        let observable = required(p.observable, "observable")?;
        let occupations = match observable {
            ObservableName::Density => Some(p.occupations.unwrap_or_else(|| (0..length).map(|k| k % 2).collect())),
            _ => p.occupations,
        };
        let method = required(p.method, "method")?;
        let n = match (method, observable) {
            (MethodName::Canonical, ObservableName::Density) => {
                let total: usize = occupations.as_ref().map(|o| o.iter().sum()).unwrap_or(0);
                if let Some(n) = p.n.filter(|&n| n != total) {
                    bail!("n = {n} differs from the particle number {total} of the initial state");
                }
                Some(total)
            }
            (MethodName::Canonical, _) => Some(required(p.n, "n (required for the canonical method)")?),
            _ => p.n,
        };
        let cfg = RunConfig {
            model,
            delta: p.delta.unwrap_or(1.0),
            j: p.j.unwrap_or(1.0),
            u: p.u.unwrap_or(0.0),
            d,
            length,
            method,
            n,
            observable,
            site: p.site.unwrap_or(length.div_ceil(2)),
            bond: p.bond.unwrap_or(length / 2),
            occupations,
            chi: required(p.chi, "chi")?,
            floor: p.floor.unwrap_or(0.0),
            dt: required(p.dt, "dt")?,
            order: p.order.unwrap_or(4),
            t_max: required(p.t_max, "t_max")?,
            cutoff_budget: p.cutoff_budget.unwrap_or(1.0),
            seed: p.seed.unwrap_or(0),
            output: p.output,
            checkpoint_every: p.checkpoint_every,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl RunConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        self.model_spec().validate()?;
        if self.site == 0 || self.site > self.length {
            bail!("site {} outside 1..={}", self.site, self.length);
        }
        if self.bond == 0 || self.bond >= self.length {
            bail!("bond {} outside 1..{}", self.bond, self.length);
        }
        if !(self.dt > 0.0) {
            bail!("dt must be positive");
        }
        if !(self.cutoff_budget > 0.0 && self.cutoff_budget <= 1.0) {
            bail!("budget must lie in (0, 1]");
        }
        if let Some(n) = self.n.filter(|_| self.method == MethodName::Canonical) {
            if omega(self.d, n, self.length) == 0u32.into() {
                bail!("particle number {n} is infeasible for L = {}, d = {}", self.length, self.d);
            }
        }
        if let Some(occ) = &self.occupations {
            if occ.len() != self.length {
                bail!("{} occupations given for {} sites", occ.len(), self.length);
            }
            if let Some(&o) = occ.iter().find(|&&o| o >= self.d) {
                bail!("occupation {o} exceeds d - 1 = {}", self.d - 1);
            }
        }
        self.settings()?;
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        match self.model {
            ModelName::Xxz => ModelSpec::xxz(self.length, self.delta),
            ModelName::BoseHubbard => ModelSpec::bose_hubbard(self.length, self.d, self.j, self.u),
        }
    }

    pub fn method(&self) -> Method {
        match self.method {
            MethodName::Brute => Method::Brute,
            MethodName::GrandCanonical => Method::GrandCanonical,
            MethodName::Canonical => Method::Canonical { n: self.n.unwrap_or(0) },
        }
    }

    pub fn settings(&self) -> anyhow::Result<EvolutionSettings> {
        let schedule = make_schedule(self.order, self.dt)?;
        let policy = TruncationPolicy::new(self.chi, self.floor)?;
        Ok(EvolutionSettings::new(schedule, self.t_max, policy, self.cutoff_budget)?)
    }

    /// Everything except method, bond dimension, truncation floor and file locations.
    pub fn physics_key(&self) -> RunConfig {
        RunConfig {
            method: MethodName::Brute,
            n: None,
            chi: 0,
            floor: 0.0,
            output: None,
            checkpoint_every: None,
            ..self.clone()
        }
    }
}
