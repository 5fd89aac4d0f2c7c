//! Dense exact reference computations for small systems.
//!
//! Nothing here touches the tensor machinery. Basis states are enumerated
//! directly in little-endian occupation order (site 1 fastest), Hamiltonians
//! are assembled from Pauli and bosonic matrices, and time evolution goes
//! through a dense Hermitian eigendecomposition.

use nalgebra::DMatrix;
use num_traits::Zero;

use crate::charge_tensor::C64;
use crate::error::{Error, Result};
use crate::models::{ModelKind, ModelSpec};

/// Largest Hilbert-space dimension handled by default.
pub const DEFAULT_DIMENSION_CAP: usize = 4096;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseOperator {
    dim: usize,
    entries: DMatrix<C64>,
}

impl DenseOperator {
    pub fn new(entries: DMatrix<C64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::ShapeMismatch("dense operators are square".into()));
        }
        if entries.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::InvalidArgument("non-finite matrix entry".into()));
        }
        Ok(Self { dim: entries.nrows(), entries })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &DMatrix<C64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<C64> {
        self.entries
    }

    pub fn trace(&self) -> C64 {
        self.entries.trace()
    }
}

/// Occupations of basis state `index`.
pub fn fock_state(index: usize, d: usize, length: usize) -> Vec<usize> {
    let mut rem = index;
    (0..length)
        .map(|_| {
            let s = rem % d;
            rem /= d;
            s
        })
        .collect()
}

pub fn fock_index(occupations: &[usize], d: usize) -> usize {
    occupations.iter().rev().fold(0, |acc, &s| acc * d + s)
}

/// Indices of all basis states holding `n` particles, ascending.
pub fn sector_states(d: usize, length: usize, n: usize) -> Vec<usize> {
    (0..d.pow(length as u32)).filter(|&x| fock_state(x, d, length).iter().sum::<usize>() == n).collect()
}

fn c(x: f64) -> C64 {
    C64::new(x, 0.0)
}

fn pauli_x() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(1.0), c(0.0)])
}

/// In the basis `|0⟩ = ↓`, `|1⟩ = ↑`.
fn pauli_y() -> DMatrix<C64> {
    let i = C64::new(0.0, 1.0);
    DMatrix::from_row_slice(2, 2, &[c(0.0), i, -i, c(0.0)])
}

fn pauli_z() -> DMatrix<C64> {
    DMatrix::from_row_slice(2, 2, &[c(-1.0), c(0.0), c(0.0), c(1.0)])
}

fn bose_annihilation(d: usize) -> DMatrix<C64> {
    DMatrix::from_fn(d, d, |r, col| if col == r + 1 { c((col as f64).sqrt()) } else { C64::zero() })
}

/// A product of single-site matrices with a coefficient.
struct Term {
    coefficient: C64,
    factors: Vec<(usize, DMatrix<C64>)>,
}

fn model_terms(spec: &ModelSpec) -> Vec<Term> {
    let l = spec.length;
    let mut terms = Vec::new();
    match spec.model {
        ModelKind::Xxz { delta } => {
            for k in 0..l - 1 {
                for (p, w) in [(pauli_x(), 1.0), (pauli_y(), 1.0), (pauli_z(), delta)] {
                    terms.push(Term { coefficient: c(-0.5 * w), factors: vec![(k, p.clone()), (k + 1, p)] });
                }
            }
        }
        ModelKind::BoseHubbard { j, u } => {
            let a = bose_annihilation(spec.d);
            let ad = a.adjoint();
            for k in 0..l - 1 {
                terms.push(Term { coefficient: c(-j), factors: vec![(k, ad.clone()), (k + 1, a.clone())] });
                terms.push(Term { coefficient: c(-j), factors: vec![(k, a.clone()), (k + 1, ad.clone())] });
            }
            let interaction = &ad * &ad * &a * &a;
            for k in 0..l {
                terms.push(Term { coefficient: c(0.5 * u), factors: vec![(k, interaction.clone())] });
            }
        }
    }
    terms
}

/// Matrix of `terms` between the basis states listed in `states`.
fn assemble(terms: &[Term], d: usize, length: usize, states: &[usize]) -> DMatrix<C64> {
    let position: std::collections::HashMap<usize, usize> = states.iter().enumerate().map(|(k, &x)| (x, k)).collect();
    let n = states.len();
    let mut h = DMatrix::<C64>::zeros(n, n);
    for (col, &x) in states.iter().enumerate() {
        let occ = fock_state(x, d, length);
        for term in terms {
            // act with each factor on the current superposition
            let mut branch: Vec<(Vec<usize>, C64)> = vec![(occ.clone(), term.coefficient)];
            for (site, m) in &term.factors {
                let mut next = Vec::new();
                for (o, amp) in &branch {
                    for r in 0..d {
                        let e = m[(r, o[*site])];
                        if !e.is_zero() {
                            let mut o2 = o.clone();
                            o2[*site] = r;
                            next.push((o2, amp * e));
                        }
                    }
                }
                branch = next;
            }
            for (o, amp) in branch {
                let y = fock_index(&o, d);
                if let Some(&row) = position.get(&y) {
                    h[(row, col)] += amp;
                }
            }
        }
    }
    h
}

fn check_cap(d: usize, length: usize, cap: usize) -> Result<usize> {
    let dim = (d as u128).checked_pow(length as u32).unwrap_or(u128::MAX);
    if dim > cap as u128 {
        return Err(Error::DimensionCap { dim: dim.min(usize::MAX as u128) as usize, cap });
    }
    Ok(dim as usize)
}

/// Full `d^L × d^L` Hamiltonian.
pub fn dense_hamiltonian(spec: &ModelSpec, cap: usize) -> Result<DenseOperator> {
    spec.validate()?;
    let dim = check_cap(spec.d, spec.length, cap)?;
    let states: Vec<usize> = (0..dim).collect();
    DenseOperator::new(assemble(&model_terms(spec), spec.d, spec.length, &states))
}

/// Hamiltonian restricted to the `n`-particle sector, with its basis states.
pub fn sector_hamiltonian(spec: &ModelSpec, n: usize) -> Result<(Vec<usize>, DMatrix<C64>)> {
    spec.validate()?;
    check_cap(spec.d, spec.length, 1 << 24)?;
    let states = sector_states(spec.d, spec.length, n);
    if states.is_empty() {
        return Err(Error::InfeasibleParticleNumber { n: n as i64, length: spec.length, d: spec.d });
    }
    let h = assemble(&model_terms(spec), spec.d, spec.length, &states);
    Ok((states, h))
}

/// Total particle number as a diagonal matrix.
pub fn dense_number(d: usize, length: usize) -> DenseOperator {
    let dim = d.pow(length as u32);
    let diag = (0..dim).map(|x| c(fock_state(x, d, length).iter().sum::<usize>() as f64));
    DenseOperator { dim, entries: DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(dim, diag)) }
}

/// `m` acting on `site` (1-based) of an `L`-site chain.
pub fn local_operator(m: &DMatrix<C64>, site: usize, length: usize) -> Result<DenseOperator> {
    if site == 0 || site > length {
        return Err(Error::SiteOutOfRange { site, length });
    }
    let d = m.nrows();
    let dim = d.pow(length as u32);
    let states: Vec<usize> = (0..dim).collect();
    let term = Term { coefficient: c(1.0), factors: vec![(site - 1, m.clone())] };
    DenseOperator::new(assemble(&[term], d, length, &states))
}

/// `σᶻ` in the `|0⟩ = ↓` convention.
pub fn sigma_z_matrix() -> DMatrix<C64> {
    pauli_z()
}

pub fn number_matrix(d: usize) -> DMatrix<C64> {
    DMatrix::from_fn(d, d, |r, col| if r == col { c(r as f64) } else { C64::zero() })
}

/// Eigendecomposition of a Hermitian matrix, reused for many times `t`.
#[derive(Clone, Debug)]
pub struct Propagator {
    vectors: DMatrix<C64>,
    energies: Vec<f64>,
}

impl Propagator {
    pub fn new(h: &DMatrix<C64>) -> Self {
        let eig = h.clone().symmetric_eigen();
        Self { vectors: eig.eigenvectors, energies: eig.eigenvalues.iter().copied().collect() }
    }

    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    /// `exp(−i H t)`.
    pub fn at(&self, t: f64) -> DMatrix<C64> {
        let v = &self.vectors;
        let mut scaled = v.clone();
        for (k, e) in self.energies.iter().enumerate() {
            let phase = C64::new(0.0, -e * t).exp();
            for r in 0..scaled.nrows() {
                scaled[(r, k)] *= phase;
            }
        }
        scaled * v.adjoint()
    }

    /// `e^{iHt} O e^{−iHt}`.
    pub fn heisenberg(&self, o: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
        let u = self.at(t);
        u.adjoint() * o * u
    }
}

pub fn dense_heisenberg_evolve(h: &DenseOperator, o: &DenseOperator, t: f64) -> Result<DenseOperator> {
    if h.dim != o.dim {
        return Err(Error::ShapeMismatch("operator and Hamiltonian dimensions differ".into()));
    }
    DenseOperator::new(Propagator::new(&h.entries).heisenberg(&o.entries, t))
}

fn trace_product(a: &DMatrix<C64>, b: &DMatrix<C64>) -> C64 {
    // Tr[a† b]
    a.iter().zip(b.iter()).map(|(x, y)| x.conj() * y).sum()
}

/// `Tr[Ô† Ô(t)] / dim`.
pub fn dense_itac(h: &DenseOperator, o: &DenseOperator, t: f64) -> Result<C64> {
    let ot = dense_heisenberg_evolve(h, o, t)?;
    Ok(trace_product(&o.entries, &ot.entries) / c(o.dim as f64))
}

/// `Tr[P_N Ô† P_N Ô(t)] / Ω`, computed inside the `n`-particle sector.
pub fn dense_sector_itac(spec: &ModelSpec, o: &DenseOperator, t: f64, n: usize) -> Result<C64> {
    Ok(sector_itac_series(spec, o, &[t], n)?[0])
}

/// Grand-canonical ITAC at each of `times`.
pub fn itac_series(spec: &ModelSpec, o: &DenseOperator, times: &[f64]) -> Result<Vec<C64>> {
    let h = dense_hamiltonian(spec, DEFAULT_DIMENSION_CAP)?;
    if h.dim != o.dim {
        return Err(Error::ShapeMismatch("operator and Hamiltonian dimensions differ".into()));
    }
    let p = Propagator::new(&h.entries);
    Ok(times.iter().map(|&t| trace_product(&o.entries, &p.heisenberg(&o.entries, t)) / c(o.dim as f64)).collect())
}

/// Sector ITAC `C_N` at each of `times`.
pub fn sector_itac_series(spec: &ModelSpec, o: &DenseOperator, times: &[f64], n: usize) -> Result<Vec<C64>> {
    let (states, h) = sector_hamiltonian(spec, n)?;
    if o.dim != spec.d.pow(spec.length as u32) {
        return Err(Error::ShapeMismatch("operator and model dimensions differ".into()));
    }
    let k = states.len();
    let on = DMatrix::from_fn(k, k, |r, col| o.entries[(states[r], states[col])]);
    let p = Propagator::new(&h);
    Ok(times.iter().map(|&t| trace_product(&on, &p.heisenberg(&on, t)) / c(k as f64)).collect())
}

/// `⟨ψ(t)| n̂_site |ψ(t)⟩` for a Fock initial state, by Schrödinger evolution
/// inside its particle-number sector.
pub fn density_series(spec: &ModelSpec, occupations: &[usize], site: usize, times: &[f64]) -> Result<Vec<f64>> {
    if occupations.len() != spec.length {
        return Err(Error::ShapeMismatch("one occupation per site is required".into()));
    }
    if site == 0 || site > spec.length {
        return Err(Error::SiteOutOfRange { site, length: spec.length });
    }
    if let Some((k, &o)) = occupations.iter().enumerate().find(|(_, &o)| o >= spec.d) {
        return Err(Error::LocalDimensionExceeded { site: k + 1, occupation: o, d: spec.d });
    }
    let n: usize = occupations.iter().sum();
    let (states, h) = sector_hamiltonian(spec, n)?;
    let start = states.iter().position(|&x| x == fock_index(occupations, spec.d)).expect("Fock state lies in its own sector");
    let local: Vec<f64> = states.iter().map(|&x| fock_state(x, spec.d, spec.length)[site - 1] as f64).collect();
    let p = Propagator::new(&h);
    Ok(times
        .iter()
        .map(|&t| {
            let u = p.at(t);
            (0..states.len()).map(|r| u[(r, start)].norm_sqr() * local[r]).sum()
        })
        .collect())
}

/// Dense Schrödinger evolution `exp(−i H t) ψ` of a full state vector.
pub fn evolve_state(spec: &ModelSpec, psi: &[C64], t: f64) -> Result<Vec<C64>> {
    let h = dense_hamiltonian(spec, DEFAULT_DIMENSION_CAP)?;
    if psi.len() != h.dim {
        return Err(Error::ShapeMismatch("state and Hamiltonian dimensions differ".into()));
    }
    let u = Propagator::new(&h.entries).at(t);
    let v = &u * nalgebra::DVector::from_column_slice(psi);
    Ok(v.iter().copied().collect())
}

/// Number of basis states with `n` particles, by direct enumeration.
pub fn sector_dimension(d: usize, length: usize, n: usize) -> usize {
    sector_states(d, length, n).len()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn max_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    fn expm(a: &DMatrix<C64>) -> DMatrix<C64> {
        let norm: f64 = a.iter().map(|z| z.norm()).sum();
        let s = norm.max(1.0).log2().ceil() as i32 + 4;
        let b = a / c(2f64.powi(s));
        let n = a.nrows();
        let mut term = DMatrix::<C64>::identity(n, n);
        let mut acc = term.clone();
        for k in 1..30 {
            term = &term * &b / c(k as f64);
            acc += &term;
        }
        for _ in 0..s {
            acc = &acc * &acc;
        }
        acc
    }

    #[test]
    fn enumeration() {
        assert_eq!(fock_state(5, 2, 3), vec![1, 0, 1]);
        assert_eq!(fock_index(&[1, 0, 1], 2), 5);
        assert_eq!(fock_index(&[2, 1], 3), 5);
        assert_eq!(sector_dimension(2, 6, 3), 20);
        assert_eq!(sector_dimension(4, 6, 3), 56);
        assert_eq!(sector_dimension(3, 4, 2), 10);
    }

    #[test]
    fn xxz_two_sites() {
        let h = dense_hamiltonian(&ModelSpec::xxz(2, 0.6), 16).unwrap();
        let e = h.entries();
        // |↓↓⟩ and |↑↑⟩ get −Δ/2, the antiparallel pair +Δ/2 and a −1 flip
        assert!((e[(0, 0)] - c(-0.3)).norm() < 1e-15);
        assert!((e[(3, 3)] - c(-0.3)).norm() < 1e-15);
        assert!((e[(1, 1)] - c(0.3)).norm() < 1e-15);
        assert!((e[(1, 2)] - c(-1.0)).norm() < 1e-15);
        assert!((e[(2, 1)] - c(-1.0)).norm() < 1e-15);
        assert!(e[(0, 3)].norm() < 1e-15);
    }

    #[test]
    fn bose_hubbard_interaction_diagonal() {
        let spec = ModelSpec::bose_hubbard(2, 3, 0.0, 4.0);
        let h = dense_hamiltonian(&spec, 100).unwrap();
        // n = 0, 1, 2 on site 1 with site 2 empty
        let diag: Vec<f64> = (0..3).map(|s| h.entries()[(fock_index(&[s, 0], 3), fock_index(&[s, 0], 3))].re).collect();
        for (x, y) in diag.iter().zip([0.0, 0.0, 4.0]) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn hamiltonians_conserve_number() {
        for spec in [ModelSpec::xxz(5, 0.8), ModelSpec::bose_hubbard(4, 3, 1.0, 5.0)] {
            let h = dense_hamiltonian(&spec, DEFAULT_DIMENSION_CAP).unwrap();
            let n = dense_number(spec.d, spec.length);
            let comm = h.entries() * n.entries() - n.entries() * h.entries();
            assert!(comm.iter().all(|z| z.norm() < 1e-12));
            assert!(max_diff(h.entries(), &h.entries().adjoint()) < 1e-15);
        }
        assert!(matches!(dense_hamiltonian(&ModelSpec::bose_hubbard(7, 4, 1.0, 1.0), DEFAULT_DIMENSION_CAP), Err(Error::DimensionCap { .. })));
    }

    #[test]
    fn propagator_matches_expm() {
        let spec = ModelSpec::xxz(6, 0.8);
        let h = dense_hamiltonian(&spec, DEFAULT_DIMENSION_CAP).unwrap();
        let p = Propagator::new(h.entries());
        for t in [0.0, 0.3, 2.5] {
            let oracle = expm(&(h.entries() * C64::new(0.0, -t)));
            assert!(max_diff(&p.at(t), &oracle) < 1e-11);
        }
    }

    #[test]
    fn heisenberg_basics() {
        let spec = ModelSpec::xxz(4, 0.8);
        let h = dense_hamiltonian(&spec, DEFAULT_DIMENSION_CAP).unwrap();
        let sz = local_operator(&sigma_z_matrix(), 2, 4).unwrap();
        let at0 = dense_heisenberg_evolve(&h, &sz, 0.0).unwrap();
        assert!(max_diff(at0.entries(), sz.entries()) < 1e-13);
        let n = dense_number(2, 4);
        let nt = dense_heisenberg_evolve(&h, &n, 1.7).unwrap();
        assert!(max_diff(nt.entries(), n.entries()) < 1e-12);
        assert!((dense_itac(&h, &sz, 0.0).unwrap() - c(1.0)).norm() < 1e-13);
        // the spectrum of O is unitarily invariant
        let st = dense_heisenberg_evolve(&h, &sz, 1.1).unwrap();
        assert!((st.trace() - sz.trace()).norm() < 1e-12);
        assert!(((st.entries() * st.entries()).trace() - (sz.entries() * sz.entries()).trace()).norm() < 1e-11);
    }

    #[test]
    fn sectors_sum_to_full_trace() {
        let spec = ModelSpec::xxz(6, 0.8);
        let sz = local_operator(&sigma_z_matrix(), 3, 6).unwrap();
        let t = 0.9;
        let g = dense_itac(&dense_hamiltonian(&spec, 4096).unwrap(), &sz, t).unwrap();
        let mut sum = C64::zero();
        for n in 0..=6 {
            let cn = dense_sector_itac(&spec, &sz, t, n).unwrap();
            sum += cn * c(sector_dimension(2, 6, n) as f64);
            if n == 0 || n == 6 {
                assert!((cn - c(1.0)).norm() < 1e-13);
            }
        }
        assert!((g - sum / c(64.0)).norm() < 1e-12);
        assert!((dense_sector_itac(&spec, &sz, 0.0, 3).unwrap() - c(1.0)).norm() < 1e-13);
    }

    #[test]
    fn density_from_fock() {
        let spec = ModelSpec::bose_hubbard(4, 3, 1.0, 2.0);
        let occ = [0, 1, 0, 1];
        let times = [0.0, 0.5, 1.0];
        let series = density_series(&spec, &occ, 1, &times).unwrap();
        assert!(series[0].abs() < 1e-14);
        // cross-check against full-space Schrödinger evolution
        let mut psi = vec![C64::zero(); 81];
        psi[fock_index(&occ, 3)] = c(1.0);
        for (k, &t) in times.iter().enumerate() {
            let v = evolve_state(&spec, &psi, t).unwrap();
            let n1: f64 = v.iter().enumerate().map(|(x, a)| a.norm_sqr() * fock_state(x, 3, 4)[0] as f64).sum();
            assert!((n1 - series[k]).abs() < 1e-12);
        }
        assert!(density_series(&spec, &[0, 3, 0, 0], 1, &times).is_err());
    }
}
