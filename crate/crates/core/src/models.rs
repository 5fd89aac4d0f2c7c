//! Lattice models and their bond gates.
//!
//! Local states are occupation numbers. For the spin-½ chain `|0⟩` is spin
//! down (`σ^z = −1`) and `|1⟩` spin up, so magnetization becomes particle
//! number. Two-site matrices follow the Kronecker convention of
//! [`BondGate`]: row `a · d + b` with `a` the left site.

use nalgebra::DMatrix;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::charge_tensor::{GradedBasis, C64};
use crate::error::{Error, Result};
pub use crate::mps::BondGate;
use crate::operator_space::ChargeScheme;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ModelKind {
    /// `H = −½ Σ (σˣσˣ + σʸσʸ + Δ σᶻσᶻ)`.
    Xxz { delta: f64 },
    /// `H = −J Σ (a†a + h.c.) + U/2 Σ n(n − 1)`.
    BoseHubbard { j: f64, u: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model: ModelKind,
    pub length: usize,
    pub d: usize,
}

impl ModelSpec {
    pub fn xxz(length: usize, delta: f64) -> Self {
        Self { model: ModelKind::Xxz { delta }, length, d: 2 }
    }

    pub fn bose_hubbard(length: usize, d: usize, j: f64, u: f64) -> Self {
        Self { model: ModelKind::BoseHubbard { j, u }, length, d }
    }

    pub fn validate(&self) -> Result<()> {
        if self.length < 2 {
            return Err(Error::InvalidArgument("a chain needs at least two sites".into()));
        }
        if self.d < 2 {
            return Err(Error::InvalidArgument("local dimension must be at least 2".into()));
        }
        match self.model {
            ModelKind::Xxz { delta } => {
                if self.d != 2 {
                    return Err(Error::InvalidArgument("the XXZ chain has d = 2".into()));
                }
                if !delta.is_finite() {
                    return Err(Error::InvalidArgument("anisotropy must be finite".into()));
                }
            }
            ModelKind::BoseHubbard { j, u } => {
                if !j.is_finite() || !u.is_finite() {
                    return Err(Error::InvalidArgument("couplings must be finite".into()));
                }
            }
        }
        Ok(())
    }

    pub fn basis(&self) -> GradedBasis {
        GradedBasis::new((0..self.d as i64).collect())
    }

    pub fn bonds(&self) -> std::ops::RangeInclusive<usize> {
        1..=self.length - 1
    }
}

/// Interaction energy of `n` bosons on one site.
pub fn onsite_energy(spec: &ModelSpec, n: usize) -> f64 {
    match spec.model {
        ModelKind::BoseHubbard { u, .. } => 0.5 * u * (n * n.saturating_sub(1)) as f64,
        ModelKind::Xxz { .. } => 0.0,
    }
}

/// Largest on-site energy allowed by the cap: `U/2 (d − 1)(d − 2)`.
pub fn max_onsite_energy(spec: &ModelSpec) -> f64 {
    onsite_energy(spec, spec.d - 1)
}

/// Two-site Hamiltonian of bond `m` as a `d² × d²` matrix.
///
/// Bose-Hubbard on-site terms are shared between the two adjoining bonds;
/// an edge site gives its whole term to its only bond.
pub fn bond_hamiltonian(spec: &ModelSpec, m: usize) -> Result<DMatrix<C64>> {
    spec.validate()?;
    if m == 0 || m >= spec.length {
        return Err(Error::BondOutOfRange { bond: m, length: spec.length });
    }
    let d = spec.d;
    let mut h = DMatrix::<C64>::zeros(d * d, d * d);
    match spec.model {
        ModelKind::Xxz { delta } => {
            for a in 0..2 {
                for b in 0..2 {
                    let za = if a == 1 { 1.0 } else { -1.0 };
                    let zb = if b == 1 { 1.0 } else { -1.0 };
                    h[(a * 2 + b, a * 2 + b)] = C64::new(-0.5 * delta * za * zb, 0.0);
                }
            }
            // −½(σˣσˣ + σʸσʸ) = −(σ⁺σ⁻ + σ⁻σ⁺)
            h[(1, 2)] = C64::new(-1.0, 0.0);
            h[(2, 1)] = C64::new(-1.0, 0.0);
        }
        ModelKind::BoseHubbard { j, .. } => {
            let wl = if m == 1 { 1.0 } else { 0.5 };
            let wr = if m + 1 == spec.length { 1.0 } else { 0.5 };
            for a in 0..d {
                for b in 0..d {
                    let e = wl * onsite_energy(spec, a) + wr * onsite_energy(spec, b);
                    h[(a * d + b, a * d + b)] = C64::new(e, 0.0);
                    // a†_left a_right moves one boson to the left
                    if b >= 1 && a + 1 < d {
                        let amp = -j * ((a + 1) as f64 * b as f64).sqrt();
                        h[((a + 1) * d + b - 1, a * d + b)] += C64::new(amp, 0.0);
                        h[(a * d + b, (a + 1) * d + b - 1)] += C64::new(amp, 0.0);
                    }
                }
            }
        }
    }
    Ok(h)
}

/// `exp(−i h τ)` for a Hermitian `h` that conserves the two-site charge,
/// computed block by block.
pub fn conserving_exponential(h: &DMatrix<C64>, d: usize, tau: f64) -> Result<DMatrix<C64>> {
    let n = d * d;
    let mut u = DMatrix::<C64>::zeros(n, n);
    for q in 0..=2 * (d - 1) {
        let states: Vec<usize> = (0..n).filter(|&s| s / d + s % d == q).collect();
        let k = states.len();
        let block = faer::Mat::<C64>::from_fn(k, k, |r, c| h[(states[r], states[c])]);
        let eig = block
            .self_adjoint_eigen(faer::Side::Lower)
            .map_err(|_| Error::InvalidArgument("Hermitian eigensolver did not converge".into()))?;
        let (v, e) = (eig.U(), eig.S());
        for r in 0..k {
            for c in 0..k {
                u[(states[r], states[c])] = (0..k).map(|x| v[(r, x)] * C64::new(0.0, -e[x].re * tau).exp() * v[(c, x)].conj()).sum();
            }
        }
    }
    Ok(u)
}

/// `exp(−i H_m τ)` on bond `m`.
pub fn bond_gate(spec: &ModelSpec, m: usize, tau: f64) -> Result<BondGate> {
    if !tau.is_finite() {
        return Err(Error::InvalidArgument("time step must be finite".into()));
    }
    let h = bond_hamiltonian(spec, m)?;
    let u = conserving_exponential(&h, spec.d, tau)?;
    let b = spec.basis();
    BondGate::from_matrix(&b, &b, &u, 0.0)
}

/// Lift of a physical gate `U` to super-sites graded by `scheme`, realizing
/// `Ô ↦ U† Ô U` on both chains at once.
pub fn super_gate(gate: &BondGate, scheme: ChargeScheme) -> Result<BondGate> {
    let (left, right) = gate.bases();
    let d = left.dim();
    if right.dim() != d {
        return Err(Error::ShapeMismatch("super gates need equal local dimensions".into()));
    }
    let u = gate.to_matrix();
    let n = d * d;
    let nonzero: Vec<(usize, usize, C64)> = (0..n)
        .flat_map(|r| (0..n).map(move |c| (r, c)))
        .map(|(r, c)| (r, c, u[(r, c)]))
        .filter(|x| !x.2.is_zero())
        .collect();
    let split = |pair: usize| (pair / d, pair % d);
    let index = |j: usize, i: usize| {
        let (j1, j2) = split(j);
        let (i1, i2) = split(i);
        (j1 * d + i1) * n + (j2 * d + i2)
    };
    let mut g = DMatrix::<C64>::zeros(n * n, n * n);
    // new amplitude (j, i) collects U[b][j] conj(U[a][i]) times old (b, a)
    for &(b, j, ub) in &nonzero {
        for &(a, i, ua) in &nonzero {
            g[(index(j, i), index(b, a))] += ub * ua.conj();
        }
    }
    let sb = scheme.basis(d);
    BondGate::from_matrix(&sb, &sb, &g, 0.0)
}
