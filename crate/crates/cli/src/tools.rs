//! The `projector-osee`, `oracle-check`, `fit` and `compare` subcommands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::ValueEnum;
use hmpo::observables::SeriesMeta;
use hmpo::oracle;
use hmpo::{
    fit_itac, itac_series, local_density_series, make_schedule, projector_osee, projector_superstate,
    EvolutionSettings, FitOutcome, LocalOperator, Method, ModelSpec, TimeSeries, TruncationPolicy, C64,
};
use serde::Deserialize;

use crate::config::{PartialConfig, RunConfig};
use crate::run::{self, termination_label, RunOutcome};

/// Parses `a:b` into a pair of numbers.
pub fn parse_range<T: std::str::FromStr>(s: &str) -> anyhow::Result<(T, T)> {
    let (a, b) = s.split_once(':').with_context(|| format!("expected `a:b`, got `{s}`"))?;
    let parse = |x: &str| x.trim().parse::<T>().map_err(|_| anyhow::anyhow!("cannot parse `{x}` in `{s}`"));
    Ok((parse(a)?, parse(b)?))
}

fn emit(text: &str, output: Option<&Path>) -> anyhow::Result<()> {
    match output {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// CSV of the projector OSEE across `bond` for each particle number in `n_range`.
pub fn projector_osee_csv(d: usize, length: usize, n_range: (usize, usize), bond: usize) -> anyhow::Result<String> {
    if n_range.0 > n_range.1 {
        bail!("empty particle-number range {}:{}", n_range.0, n_range.1);
    }
    let mut out = String::from("n,osee,log2_bound\n");
    for n in n_range.0..=n_range.1 {
        let s = projector_osee(n as i64, length, d, bond)?;
        writeln!(out, "{n},{:.16e},{:.16e}", s, ((n + 1) as f64).log2())?;
    }
    Ok(out)
}

pub fn projector_osee_cmd(d: usize, length: usize, n_range: &str, bond: Option<usize>, output: Option<&Path>) -> anyhow::Result<()> {
    let csv = projector_osee_csv(d, length, parse_range(n_range)?, bond.unwrap_or(length / 2))?;
    emit(&csv, output)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Itac,
    Density,
    Projector,
    All,
}

/// Largest deviation of one quantity against the dense reference.
#[derive(Clone, Debug)]
pub struct Check {
    pub suite: &'static str,
    pub quantity: String,
    pub max_deviation: f64,
}

fn max_dev(a: &[C64], b: &[C64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn oracle_settings(dt: f64, t_max: f64, chi: usize, floor: f64) -> anyhow::Result<EvolutionSettings> {
    Ok(EvolutionSettings::new(make_schedule(4, dt)?, t_max, TruncationPolicy::new(chi, floor)?, 1.0)?)
}

fn itac_checks(length: usize, delta: f64) -> anyhow::Result<Vec<Check>> {
    let spec = ModelSpec::xxz(length, delta);
    let site = length.div_ceil(2);
    let settings = oracle_settings(1.0 / 16.0, 2.0, usize::MAX, 0.0)?;
    let sz = LocalOperator::sigma_z();
    let dense = oracle::local_operator(&oracle::sigma_z_matrix(), site, length)?;
    let mut checks = Vec::new();
    for (name, method) in [("G brute", Method::Brute), ("G grand-canonical", Method::GrandCanonical)] {
        let (s, _) = itac_series(&spec, &sz, site, method, &settings)?;
        let exact = oracle::itac_series(&spec, &dense, s.times())?;
        checks.push(Check { suite: "itac", quantity: name.into(), max_deviation: max_dev(s.values(), &exact) });
    }
    for n in 0..=length {
        let (s, _) = itac_series(&spec, &sz, site, Method::Canonical { n }, &settings)?;
        let exact = oracle::sector_itac_series(&spec, &dense, s.times(), n)?;
        checks.push(Check { suite: "itac", quantity: format!("C_{n}"), max_deviation: max_dev(s.values(), &exact) });
    }
    Ok(checks)
}

fn density_checks(length: usize) -> anyhow::Result<Vec<Check>> {
    let spec = ModelSpec::bose_hubbard(length, 3, 1.0, 10.0);
    let occ: Vec<usize> = (0..length).map(|k| k % 2).collect();
    let settings = oracle_settings(1.0 / 32.0, 1.0, 1024, 1e-10)?;
    let mut checks = Vec::new();
    for site in [1, length.div_ceil(2)] {
        for (name, method) in [("canonical", Method::Canonical { n: 0 }), ("grand-canonical", Method::GrandCanonical)] {
            let s = local_density_series(&spec, &occ, site, method, &settings)?;
            let exact: Vec<C64> =
                oracle::density_series(&spec, &occ, site, s.times())?.into_iter().map(|x| C64::new(x, 0.0)).collect();
            checks.push(Check {
                suite: "density",
                quantity: format!("n_{site} {name}"),
                max_deviation: max_dev(s.values(), &exact),
            });
        }
    }
    Ok(checks)
}

fn projector_checks(length: usize) -> anyhow::Result<Vec<Check>> {
    let mut checks = Vec::new();
    for d in [2usize, 3] {
        if d.pow(length as u32) > oracle::DEFAULT_DIMENSION_CAP {
            continue;
        }
        let number = oracle::dense_number(d, length);
        let (mut matrix_dev, mut osee_dev) = (0.0f64, 0.0f64);
        for n in 0..=length * (d - 1) {
            let p = projector_superstate(n as i64, length, d)?;
            let m = p.to_matrix();
            for r in 0..m.nrows() {
                for c in 0..m.ncols() {
                    let want = if r == c && (number.entries()[(r, r)].re - n as f64).abs() < 0.5 { 1.0 } else { 0.0 };
                    matrix_dev = matrix_dev.max((m[(r, c)] - C64::new(want, 0.0)).norm());
                }
            }
            for (k, s) in p.osee_profile().into_iter().enumerate() {
                osee_dev = osee_dev.max((s - projector_osee(n as i64, length, d, k + 1)?).abs());
            }
        }
        checks.push(Check { suite: "projector", quantity: format!("P_N entries d={d}"), max_deviation: matrix_dev });
        checks.push(Check { suite: "projector", quantity: format!("P_N osee d={d}"), max_deviation: osee_dev });
    }
    Ok(checks)
}

pub fn oracle_checks(suite: Suite, length: usize, delta: f64) -> anyhow::Result<Vec<Check>> {
    let mut out = Vec::new();
    if matches!(suite, Suite::Itac | Suite::All) {
        out.extend(itac_checks(length, delta)?);
    }
    if matches!(suite, Suite::Density | Suite::All) {
        out.extend(density_checks(length)?);
    }
    if matches!(suite, Suite::Projector | Suite::All) {
        out.extend(projector_checks(length)?);
    }
    Ok(out)
}

pub fn oracle_check_cmd(suite: Suite, length: usize, delta: f64, tolerance: f64) -> anyhow::Result<()> {
    let checks = oracle_checks(suite, length, delta)?;
    let mut failed = 0;
    for c in &checks {
        let ok = c.max_deviation <= tolerance;
        failed += usize::from(!ok);
        println!("{:<10} {:<24} max_dev {:.3e} {}", c.suite, c.quantity, c.max_deviation, if ok { "ok" } else { "FAIL" });
    }
    if failed > 0 {
        bail!("{failed} of {} checks exceed {tolerance:e}", checks.len());
    }
    println!("all {} checks within {tolerance:e}", checks.len());
    Ok(())
}

#[derive(Deserialize)]
struct CsvSample {
    t: f64,
    re: f64,
    im: f64,
}

pub fn read_series(path: &Path) -> anyhow::Result<TimeSeries> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let (mut times, mut values) = (Vec::new(), Vec::new());
    for rec in reader.deserialize() {
        let s: CsvSample = rec.with_context(|| format!("reading {}", path.display()))?;
        times.push(s.t);
        values.push(C64::new(s.re, s.im));
    }
    let dt = if times.len() > 1 { times[1] - times[0] } else { 0.0 };
    let meta = SeriesMeta {
        observable: path.display().to_string(),
        method: Method::GrandCanonical,
        chi: None,
        dt,
    };
    Ok(TimeSeries::from_samples(meta, times, values)?)
}

pub fn fit_cmd(input: &Path, window: &str) -> anyhow::Result<FitOutcome> {
    let series = read_series(input)?;
    let outcome = fit_itac(&series, parse_range(window)?)?;
    println!("{}", serde_json::to_string_pretty(&outcome)?);
    Ok(outcome)
}

/// One run of a comparison, with the config it came from.
pub struct Compared {
    pub config: RunConfig,
    pub outcome: RunOutcome,
}

/// Loads and checks that `paths` differ only in method and truncation settings.
pub fn load_comparable(paths: &[PathBuf]) -> anyhow::Result<Vec<RunConfig>> {
    if paths.len() < 2 {
        bail!("compare needs at least two configs");
    }
    let configs = paths
        .iter()
        .map(|p| PartialConfig::default().resolve(Some(p)))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let key = configs[0].physics_key();
    for (p, c) in paths.iter().zip(&configs).skip(1) {
        if c.physics_key() != key {
            bail!(
                "incompatible observables: {} differs from {} in more than method and truncation",
                p.display(),
                paths[0].display()
            );
        }
    }
    Ok(configs)
}

pub fn joint_csv(runs: &[Compared]) -> String {
    let mut out = String::from("t");
    for k in 0..runs.len() {
        write!(out, ",re_{k},im_{k},accumulated_cutoff_{k}").unwrap();
    }
    out.push('\n');
    let mut grid: BTreeMap<u64, Vec<Option<&run::Row>>> = BTreeMap::new();
    for (k, r) in runs.iter().enumerate() {
        for row in &r.outcome.rows {
            grid.entry(row.t.to_bits()).or_insert_with(|| vec![None; runs.len()])[k] = Some(row);
        }
    }
    for (bits, cols) in grid {
        write!(out, "{:.16e}", f64::from_bits(bits)).unwrap();
        for c in cols {
            match c {
                Some(r) => write!(out, ",{:.16e},{:.16e},{:.16e}", r.value.re, r.value.im, r.accumulated_cutoff).unwrap(),
                None => out.push_str(",,,"),
            }
        }
        out.push('\n');
    }
    out
}

/// Human-readable summary of a comparison.
pub fn compare_report(runs: &[Compared]) -> String {
    let mut out = String::new();
    for (k, r) in runs.iter().enumerate() {
        writeln!(
            out,
            "run {k}: method {} chi {} terminated by {} at t = {} (accumulated cutoff {:.3e})",
            r.config.method().label(),
            r.config.chi,
            termination_label(r.outcome.termination),
            r.outcome.final_time(),
            r.outcome.accumulated_cutoff
        )
        .unwrap();
    }
    let common = runs.iter().map(|r| r.outcome.final_time()).fold(f64::INFINITY, f64::min);
    writeln!(out, "last common time: {common}").unwrap();
    out
}

pub fn compare_cmd(paths: &[PathBuf], output: Option<&Path>) -> anyhow::Result<Vec<Compared>> {
    let configs = load_comparable(paths)?;
    let runs = configs
        .into_iter()
        .map(|config| {
            let outcome = run::simulate_quiet(&config)?;
            Ok(Compared { config, outcome })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    let csv = joint_csv(&runs);
    match output {
        Some(p) => {
            std::fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?;
            print!("{}", compare_report(&runs));
        }
        None => {
            print!("{csv}");
            eprint!("{}", compare_report(&runs));
        }
    }
    Ok(runs)
}
