//! Matrix product states in Vidal canonical form.
//!
//! A chain of `L` sites stores `Γ` tensors with legs `[left bond (in),
//! physical (in), right bond (out)]` and `L + 1` charge-labelled spectra. The
//! two outer spectra are one-dimensional: the left one carries charge 0 and
//! the right one the total charge of the state, so bond labels count the
//! charge to the left of each cut.
//!
//! Sites and bonds are 1-based in the public API: bond `m` separates sites
//! `m` and `m + 1`.

use std::path::Path;

use nalgebra::DMatrix;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::charge_tensor::{
    block_svd, contract, ChargeIndex, Direction, GradedBasis, Leg, LegMap, Spectrum,
    SymmetricTensor, TensorBuilder, TruncationPolicy, C64,
};
use crate::error::{mismatch, Error, Result};

/// Schmidt values below this are dropped when a bond is rebuilt.
pub const LAMBDA_FLOOR: f64 = 1e-14;

/// Outcome of one truncated two-site update.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationRecord {
    pub bond: usize,
    /// Norm of the kept part relative to the pre-truncation norm.
    pub nu: f64,
    /// Norm of the discarded part, same convention.
    pub discarded_weight: f64,
    pub chi_used: usize,
}

/// A charge-conserving two-site operator.
///
/// Matrices use the Kronecker convention: row `a' * d₂ + b'`, column
/// `a * d₂ + b`, with `a` the state of the left site.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BondGate {
    left: GradedBasis,
    right: GradedBasis,
    tensor: SymmetricTensor,
}

impl BondGate {
    /// Builds a gate from a dense matrix. Entries larger than `tol` that
    /// change the charge are rejected; smaller ones are dropped.
    pub fn from_matrix(left: &GradedBasis, right: &GradedBasis, m: &DMatrix<C64>, tol: f64) -> Result<Self> {
        let (d1, d2) = (left.dim(), right.dim());
        if m.nrows() != d1 * d2 || m.ncols() != d1 * d2 {
            return Err(Error::ShapeMismatch(format!(
                "gate matrix is {}x{}, expected {}",
                m.nrows(),
                m.ncols(),
                d1 * d2
            )));
        }
        let mut builder = TensorBuilder::new(
            vec![
                (left.clone(), Direction::In),
                (right.clone(), Direction::In),
                (left.clone(), Direction::Out),
                (right.clone(), Direction::Out),
            ],
            0,
        );
        for a_out in 0..d1 {
            for b_out in 0..d2 {
                for a_in in 0..d1 {
                    for b_in in 0..d2 {
                        let z = m[(a_out * d2 + b_out, a_in * d2 + b_in)];
                        if z.is_zero() {
                            continue;
                        }
                        let q_out = left.charge_of(a_out) + right.charge_of(b_out);
                        let q_in = left.charge_of(a_in) + right.charge_of(b_in);
                        if q_out != q_in {
                            if z.norm() > tol {
                                return Err(mismatch(format!(
                                    "gate element ({},{})->({},{}) does not conserve charge",
                                    a_in, b_in, a_out, b_out
                                )));
                            }
                            continue;
                        }
                        builder.add(&[a_out, b_out, a_in, b_in], z)?;
                    }
                }
            }
        }
        Ok(Self { left: left.clone(), right: right.clone(), tensor: builder.finish() })
    }

    pub fn identity(left: &GradedBasis, right: &GradedBasis) -> Self {
        let n = left.dim() * right.dim();
        Self::from_matrix(left, right, &DMatrix::identity(n, n), 0.0).unwrap()
    }

    pub fn bases(&self) -> (&GradedBasis, &GradedBasis) {
        (&self.left, &self.right)
    }

    /// Legs `[left out, right out, left in, right in]`; the "out" physical
    /// legs are stored incoming so the result slots straight into a state.
    pub fn tensor(&self) -> &SymmetricTensor {
        &self.tensor
    }

    pub fn to_matrix(&self) -> DMatrix<C64> {
        let (d1, d2) = (self.left.dim(), self.right.dim());
        let mut m = DMatrix::zeros(d1 * d2, d1 * d2);
        let dense = self.tensor.to_dense();
        for a_out in 0..d1 {
            for b_out in 0..d2 {
                for a_in in 0..d1 {
                    for b_in in 0..d2 {
                        let e = [
                            self.left.element(a_out),
                            self.right.element(b_out),
                            self.left.element(a_in),
                            self.right.element(b_in),
                        ];
                        let lin = ((e[0] * d2 + e[1]) * d1 + e[2]) * d2 + e[3];
                        m[(a_out * d2 + b_out, a_in * d2 + b_in)] = dense.data[lin];
                    }
                }
            }
        }
        m
    }
}

/// A computed but not yet committed two-site update.
#[derive(Clone, Debug)]
pub struct BondUpdate {
    site: usize,
    left: SymmetricTensor,
    lambda: Spectrum,
    right: SymmetricTensor,
    pub record: TruncationRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanonicalMps {
    bases: Vec<GradedBasis>,
    gammas: Vec<SymmetricTensor>,
    lambdas: Vec<Spectrum>,
}

fn occupation_basis(d: usize) -> GradedBasis {
    GradedBasis::new((0..d as i64).collect())
}

fn inverse(values: &[f64]) -> Vec<f64> {
    values.iter().map(|x| 1.0 / x).collect()
}

impl CanonicalMps {
    /// Product Fock state with occupations `occupations` and local dimension `d`.
    pub fn from_fock(occupations: &[usize], d: usize) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidArgument("local dimension must be at least 2".into()));
        }
        for (site, &n) in occupations.iter().enumerate() {
            if n >= d {
                return Err(Error::LocalDimensionExceeded { site: site + 1, occupation: n, d });
            }
        }
        let bases = vec![occupation_basis(d); occupations.len()];
        Self::from_product_states(bases, occupations)
    }

    /// Product of basis states, one per site.
    pub fn from_product_states(bases: Vec<GradedBasis>, states: &[usize]) -> Result<Self> {
        let vectors: Vec<Vec<C64>> = bases
            .iter()
            .zip(states)
            .map(|(b, &s)| {
                let mut v = vec![C64::zero(); b.dim()];
                v[s] = C64::new(1.0, 0.0);
                v
            })
            .collect();
        Ok(Self::from_product(bases, &vectors)?.0)
    }

    /// Product state `⊗ vectors[k]`. Each local vector must have a definite
    /// charge. Returns the normalized state and the product of local norms.
    pub fn from_product(bases: Vec<GradedBasis>, vectors: &[Vec<C64>]) -> Result<(Self, f64)> {
        if bases.is_empty() || bases.len() != vectors.len() {
            return Err(Error::ShapeMismatch("one local vector per site is required".into()));
        }
        let mut gammas = Vec::with_capacity(bases.len());
        let mut lambdas = vec![Spectrum::trivial(0)];
        let mut left = 0i64;
        let mut scale = 1.0;
        for (b, v) in bases.iter().zip(vectors) {
            if v.len() != b.dim() {
                return Err(Error::ShapeMismatch("local vector does not match its basis".into()));
            }
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::ZeroNorm);
            }
            let mut charge = None;
            for (s, z) in v.iter().enumerate() {
                if !z.is_zero() {
                    let q = b.charge_of(s);
                    if charge.get_or_insert(q) != &q {
                        return Err(Error::IndefiniteCharge);
                    }
                }
            }
            let right = left + charge.unwrap();
            let lb = GradedBasis::new(vec![left]);
            let rb = GradedBasis::new(vec![right]);
            let mut builder = TensorBuilder::new(
                vec![(lb, Direction::In), (b.clone(), Direction::In), (rb, Direction::Out)],
                0,
            );
            for (s, z) in v.iter().enumerate() {
                builder.add(&[0, s, 0], z / norm)?;
            }
            gammas.push(builder.finish());
            lambdas.push(Spectrum::trivial(right));
            left = right;
            scale *= norm;
        }
        Ok((Self { bases, gammas, lambdas }, scale))
    }

    /// Brings a general open-boundary MPS into canonical form.
    ///
    /// Every tensor must have legs `[left (in), physical (in), right (out)]`
    /// and total charge 0; the first left leg has charge 0 and dimension 1,
    /// the last right leg dimension 1. Returns the normalized state and its
    /// norm.
    pub fn from_tensors(bases: Vec<GradedBasis>, tensors: Vec<SymmetricTensor>) -> Result<(Self, f64)> {
        let l = bases.len();
        if l == 0 || tensors.len() != l {
            return Err(Error::ShapeMismatch("one tensor per site is required".into()));
        }
        for (k, t) in tensors.iter().enumerate() {
            let ok = t.rank() == 3
                && t.total_charge() == 0
                && t.leg(0).dir == Direction::In
                && t.leg(1).dir == Direction::In
                && t.leg(2).dir == Direction::Out
                && &t.leg(1).index == bases[k].index()
                && (k + 1 == l || t.leg(2).index == tensors[k + 1].leg(0).index);
            if !ok {
                return Err(mismatch(format!("tensor at site {} has an inconsistent grading", k + 1)));
            }
        }
        if tensors[0].leg(0).index != ChargeIndex::trivial(0) || tensors[l - 1].leg(2).index.dim() != 1 {
            return Err(mismatch("outer bonds must be one-dimensional"));
        }
        let total = tensors[l - 1].leg(2).index.charge(0);
        let mut a = tensors;
        let exact = TruncationPolicy::exact();
        for k in 0..l - 1 {
            let svd = block_svd(&a[k], &[0, 1], &exact)?;
            a[k] = svd.left;
            let mut r = svd.right;
            r.scale_leg(0, svd.values.values());
            a[k + 1] = contract(&r, &a[k + 1], &[(1, 0)])?;
        }
        let norm = a[l - 1].norm();
        if norm == 0.0 {
            return Err(Error::ZeroNorm);
        }
        a[l - 1].scale(C64::new(1.0 / norm, 0.0));

        let floor = TruncationPolicy { chi_max: usize::MAX, singular_value_floor: LAMBDA_FLOOR };
        let mut lambdas = vec![Spectrum::trivial(0); l + 1];
        lambdas[l] = Spectrum::trivial(total);
        let mut gammas = vec![SymmetricTensor::zeros(vec![], 0); l];
        for k in (1..l).rev() {
            let svd = block_svd(&a[k], &[0], &floor)?;
            let lam = svd.values.normalized();
            let mut g = svd.right;
            g.scale_leg(2, &inverse(lambdas[k + 1].values()));
            gammas[k] = g;
            let mut u = svd.left;
            u.scale_leg(1, lam.values());
            a[k - 1] = contract(&a[k - 1], &u, &[(2, 0)])?;
            lambdas[k] = lam;
        }
        let mut g0 = a[0].clone();
        let n0 = g0.norm();
        if n0 == 0.0 {
            return Err(Error::ZeroNorm);
        }
        g0.scale(C64::new(1.0 / n0, 0.0));
        g0.scale_leg(2, &inverse(lambdas[1].values()));
        gammas[0] = g0;
        Ok((Self { bases, gammas, lambdas }, norm))
    }

    /// Canonical state from a dense vector indexed little-endian (site 1
    /// fastest): `index = Σ_k s_k · Π_{k' < k} d_{k'}`.
    pub fn from_dense(bases: Vec<GradedBasis>, amplitudes: &[C64], tol: f64) -> Result<(Self, f64)> {
        let dims: Vec<usize> = bases.iter().map(|b| b.dim()).collect();
        let n: usize = dims.iter().product();
        if amplitudes.len() != n {
            return Err(Error::ShapeMismatch(format!("expected {n} amplitudes, got {}", amplitudes.len())));
        }
        let l = bases.len();
        let mut total: Option<i64> = None;
        let mut states = vec![0usize; l];
        let decode = |mut lin: usize, states: &mut [usize]| {
            for k in 0..l {
                states[k] = lin % dims[k];
                lin /= dims[k];
            }
        };
        for (lin, z) in amplitudes.iter().enumerate() {
            if z.norm() > tol {
                decode(lin, &mut states);
                let q: i64 = states.iter().zip(&bases).map(|(&s, b)| b.charge_of(s)).sum();
                if *total.get_or_insert(q) != q {
                    return Err(mismatch("dense vector mixes charge sectors"));
                }
            }
        }
        let total = total.ok_or(Error::ZeroNorm)?;
        let mut legs = vec![(GradedBasis::new(vec![0]), Direction::In)];
        legs.extend(bases.iter().map(|b| (b.clone(), Direction::In)));
        legs.push((GradedBasis::new(vec![total]), Direction::Out));
        let mut builder = TensorBuilder::new(legs, 0);
        let mut full = vec![0usize; l + 2];
        for (lin, &z) in amplitudes.iter().enumerate() {
            if z.norm() > tol {
                decode(lin, &mut states);
                full[1..=l].copy_from_slice(&states);
                builder.add(&full, z)?;
            }
        }
        let mut rest = builder.finish();
        let mut tensors = Vec::with_capacity(l);
        let exact = TruncationPolicy::exact();
        for _ in 0..l - 1 {
            let svd = block_svd(&rest, &[0, 1], &exact)?;
            tensors.push(svd.left);
            let mut r = svd.right;
            r.scale_leg(0, svd.values.values());
            rest = r;
        }
        tensors.push(rest);
        Self::from_tensors(bases, tensors)
    }

    /// Assembles a state from Vidal-form parts after checking the gradings.
    pub fn from_parts(bases: Vec<GradedBasis>, gammas: Vec<SymmetricTensor>, lambdas: Vec<Spectrum>) -> Result<Self> {
        let mps = Self { bases, gammas, lambdas };
        mps.validate()?;
        Ok(mps)
    }

    pub fn length(&self) -> usize {
        self.bases.len()
    }

    pub fn bases(&self) -> &[GradedBasis] {
        &self.bases
    }

    pub fn basis(&self, site: usize) -> &GradedBasis {
        &self.bases[site - 1]
    }

    pub fn total_charge(&self) -> i64 {
        self.lambdas[self.length()].index().charge(0)
    }

    /// `Γ` at a 1-based site.
    pub fn gamma(&self, site: usize) -> &SymmetricTensor {
        &self.gammas[site - 1]
    }

    /// All spectra including the two trivial outer ones (index = bond).
    pub fn lambdas(&self) -> &[Spectrum] {
        &self.lambdas
    }

    fn check_bond(&self, m: usize) -> Result<()> {
        if m == 0 || m >= self.length() {
            return Err(Error::BondOutOfRange { bond: m, length: self.length() });
        }
        Ok(())
    }

    pub fn schmidt_spectrum(&self, m: usize) -> Result<&Spectrum> {
        self.check_bond(m)?;
        Ok(&self.lambdas[m])
    }

    pub fn entanglement_entropy(&self, m: usize) -> Result<f64> {
        Ok(self.schmidt_spectrum(m)?.entropy())
    }

    /// Entropies at bonds `1..L`.
    pub fn entropy_profile(&self) -> Vec<f64> {
        self.lambdas[1..self.length()].iter().map(|s| s.entropy()).collect()
    }

    pub fn bond_dims(&self) -> Vec<usize> {
        self.lambdas[1..self.length()].iter().map(|s| s.len()).collect()
    }

    pub fn max_bond_dim(&self) -> usize {
        self.bond_dims().into_iter().max().unwrap_or(1)
    }

    /// Right-canonical site tensor `Γ λ` at a 0-based position.
    fn right_tensor(&self, k: usize) -> SymmetricTensor {
        let mut t = self.gammas[k].clone();
        t.scale_leg(2, self.lambdas[k + 1].values());
        t
    }

    /// Right-canonical tensors `Γ^[k] λ^[k]`, usable as a plain MPS.
    pub fn right_tensors(&self) -> Vec<SymmetricTensor> {
        (0..self.length()).map(|k| self.right_tensor(k)).collect()
    }

    /// `⟨self|other⟩`; zero when the total charges differ.
    pub fn inner_product(&self, other: &CanonicalMps) -> Result<C64> {
        if self.bases != other.bases {
            return Err(Error::ShapeMismatch("states live on different local spaces".into()));
        }
        if self.total_charge() != other.total_charge() {
            return Ok(C64::zero());
        }
        let l = self.length();
        let a0 = self.right_tensor(0).dagger();
        let b0 = other.right_tensor(0);
        let mut env = contract(&a0, &b0, &[(0, 0), (1, 1)])?;
        for k in 1..l {
            let a = self.right_tensor(k).dagger();
            let half = contract(&env, &a, &[(0, 0)])?;
            env = contract(&half, &other.right_tensor(k), &[(0, 0), (1, 1)])?;
        }
        let mut acc = C64::zero();
        env.for_each_entry(|_, z| acc += z);
        Ok(acc)
    }

    /// Dense amplitudes in little-endian order (see [`CanonicalMps::from_dense`]).
    pub fn to_dense(&self) -> Vec<C64> {
        let l = self.length();
        let mut t = self.right_tensor(0);
        for k in 1..l {
            t = contract(&t, &self.right_tensor(k), &[(t.rank() - 1, 0)]).unwrap();
        }
        let dense = t.to_dense();
        let dims: Vec<usize> = self.bases.iter().map(|b| b.dim()).collect();
        let n: usize = dims.iter().product();
        let mut out = vec![C64::zero(); n];
        let shape = &dense.shape;
        for (lin, slot) in out.iter_mut().enumerate() {
            let mut rem = lin;
            let mut pos = 0usize;
            for k in 0..l {
                let s = rem % dims[k];
                rem /= dims[k];
                pos = pos * shape[k + 1] + self.bases[k].element(s);
            }
            // outer legs are one-dimensional
            *slot = dense.data[pos];
        }
        out
    }

    /// Computes the update of bond `m` without touching the state.
    pub fn two_site_update(&self, m: usize, gate: &BondGate, policy: &TruncationPolicy) -> Result<BondUpdate> {
        self.check_bond(m)?;
        let (a, b) = (m - 1, m);
        if gate.left != self.bases[a] || gate.right != self.bases[b] {
            return Err(mismatch(format!("gate grading does not match the sites of bond {m}")));
        }
        let mut ta = self.gammas[a].clone();
        ta.scale_leg(0, self.lambdas[a].values());
        ta.scale_leg(2, self.lambdas[m].values());
        let tb = self.right_tensor(b);
        let theta = contract(&ta, &tb, &[(2, 0)])?;
        let g = contract(gate.tensor(), &theta, &[(2, 1), (3, 2)])?.permuted(&[2, 0, 1, 3]);
        let total = g.norm();
        if total == 0.0 {
            return Err(Error::StateAnnihilated);
        }
        let cut = TruncationPolicy {
            chi_max: policy.chi_max,
            singular_value_floor: policy.singular_value_floor.max(LAMBDA_FLOOR) * total,
        };
        let svd = match block_svd(&g, &[0, 1], &cut) {
            Ok(svd) => svd,
            Err(Error::ZeroNorm) => return Err(Error::StateAnnihilated),
            Err(e) => return Err(e),
        };
        let kept = svd.values.weight().sqrt();
        let lambda = svd.values.normalized();
        let mut left = svd.left;
        left.scale_leg(0, &inverse(self.lambdas[a].values()));
        let mut right = svd.right;
        right.scale_leg(2, &inverse(self.lambdas[b + 1].values()));
        // Γ_a = U / λ_left and Γ_b = V / λ_right; the kept norm is divided out
        // of V so the state stays normalized.
        right.scale(C64::new(1.0 / kept, 0.0));
        let chi_used = lambda.len();
        Ok(BondUpdate {
            site: a,
            left,
            lambda,
            right,
            record: TruncationRecord {
                bond: m,
                // equals kept / total, but exactly 1 when nothing is discarded
                nu: 1.0 / (1.0 + (svd.discarded_norm / kept).powi(2)).sqrt(),
                discarded_weight: svd.discarded_norm / total,
                chi_used,
            },
        })
    }

    pub fn commit(&mut self, update: BondUpdate) -> TruncationRecord {
        let a = update.site;
        self.gammas[a] = update.left;
        self.gammas[a + 1] = update.right;
        self.lambdas[a + 1] = update.lambda;
        update.record
    }

    /// Applies `gate` to sites `m, m + 1` and truncates bond `m`.
    pub fn apply_two_site_gate(&mut self, m: usize, gate: &BondGate, policy: &TruncationPolicy) -> Result<TruncationRecord> {
        let update = self.two_site_update(m, gate, policy)?;
        Ok(self.commit(update))
    }

    /// Relabels and re-embeds every site.
    ///
    /// `state_map(site, s)` sends old basis state `s` to a state of
    /// `new_bases[site]`; `charge_map` must send every old charge (site and
    /// cumulative bond charges alike) to the new one. With `conjugate` the
    /// amplitudes are complex conjugated.
    pub fn map_sites(
        &self,
        new_bases: Vec<GradedBasis>,
        state_map: &dyn Fn(usize, usize) -> usize,
        charge_map: &dyn Fn(i64) -> i64,
        conjugate: bool,
    ) -> Result<Self> {
        let l = self.length();
        if new_bases.len() != l {
            return Err(Error::ShapeMismatch("one basis per site is required".into()));
        }
        let mut lambdas = Vec::with_capacity(l + 1);
        let mut bond_maps = Vec::with_capacity(l + 1);
        for s in &self.lambdas {
            let (spec, map) = s.relabel(charge_map);
            lambdas.push(spec);
            bond_maps.push(map);
        }
        let mut gammas = Vec::with_capacity(l);
        for k in 0..l {
            let old = &self.bases[k];
            let new = &new_bases[k];
            let targets = (0..old.dim())
                .map(|e| {
                    let (sec, off) = old.index().locate(e);
                    let s = old.state(sec, off);
                    let t = state_map(k, s);
                    if new.charge_of(t) != charge_map(old.charge_of(s)) {
                        return Err(mismatch("state map disagrees with the charge map"));
                    }
                    Ok(new.position(t))
                })
                .collect::<Result<Vec<_>>>()?;
            let phys = LegMap { index: new.index().clone(), targets };
            let maps = [bond_maps[k].clone(), phys, bond_maps[k + 1].clone()];
            let g = self.gammas[k].regrade(&maps, 0)?;
            gammas.push(if conjugate { g.conj() } else { g });
        }
        Ok(Self { bases: new_bases, gammas, lambdas })
    }

    /// Largest deviation of `Σ λ²` from 1 over all bonds.
    pub fn normalization_error(&self) -> f64 {
        self.lambdas.iter().map(|s| (s.weight() - 1.0).abs()).fold(0.0, f64::max)
    }

    /// Largest deviation from left and right orthonormality over all sites.
    pub fn orthogonality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        let deviation = |t: &SymmetricTensor| -> f64 {
            let d = t.to_dense();
            let n = d.shape[0];
            let mut w: f64 = 0.0;
            for i in 0..n {
                for j in 0..n {
                    let target = if i == j { 1.0 } else { 0.0 };
                    w = w.max((d.data[i * n + j] - C64::new(target, 0.0)).norm());
                }
            }
            w
        };
        for k in 0..self.length() {
            let mut a = self.gammas[k].clone();
            a.scale_leg(0, self.lambdas[k].values());
            let left = contract(&a.dagger(), &a, &[(0, 0), (1, 1)]).unwrap();
            worst = worst.max(deviation(&left));
            let b = self.right_tensor(k);
            let right = contract(&b, &b.dagger(), &[(1, 1), (2, 2)]).unwrap();
            worst = worst.max(deviation(&right));
        }
        worst
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mps: Self = serde_json::from_str(s)?;
        mps.validate()?;
        Ok(mps)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Structural consistency of deserialized data.
    pub fn validate(&self) -> Result<()> {
        let l = self.length();
        if l == 0 || self.gammas.len() != l || self.lambdas.len() != l + 1 {
            return Err(Error::ShapeMismatch("inconsistent chain length".into()));
        }
        if self.lambdas[0].index() != &ChargeIndex::trivial(0) || self.lambdas[l].len() != 1 {
            return Err(mismatch("outer bonds must be trivial"));
        }
        for k in 0..l {
            let g = &self.gammas[k];
            let expected = [
                Leg::new(self.lambdas[k].index().clone(), Direction::In),
                Leg::new(self.bases[k].index().clone(), Direction::In),
                Leg::new(self.lambdas[k + 1].index().clone(), Direction::Out),
            ];
            if g.legs() != expected || g.total_charge() != 0 {
                return Err(mismatch(format!("site {} does not match its bonds", k + 1)));
            }
            if g.blocks().any(|(key, _)| !g.allowed(key)) {
                return Err(mismatch(format!("site {} holds a forbidden block", k + 1)));
            }
        }
        Ok(())
    }
}
