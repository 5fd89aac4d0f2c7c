//! Fixed particle-number projectors.
//!
//! `Ω_d(n, L)` counts the ways of placing `n` bosons on `L` sites with at
//! most `d − 1` per site. The uniform superposition `|N⟩` of all `N`-particle
//! Fock states has the exact Schmidt weights
//! `λ_l² = Ω(l, m) Ω(N − l, L − m) / Ω(N, L)` at bond `m` (`l` particles on the
//! left), and its diagonal lift is `P_N / √Ω(N, L)`.

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};

use crate::charge_tensor::{Direction, GradedBasis, Spectrum, TensorBuilder, C64};
use crate::error::{Error, Result};
use crate::mps::CanonicalMps;
use crate::operator_space::{ChargeScheme, LocalOperator, SuperState};

/// Memo table of `Ω_d(n, l)` for `n ≤ max_n`, `l ≤ max_l`.
#[derive(Clone, Debug)]
pub struct OccupancyCount {
    d: usize,
    table: Vec<Vec<BigUint>>,
}

impl OccupancyCount {
    pub fn build(d: usize, max_n: usize, max_l: usize) -> Self {
        assert!(d >= 2, "local dimension must be at least 2");
        let mut table = vec![vec![BigUint::zero(); max_n + 1]; max_l + 1];
        table[0][0] = BigUint::one();
        for l in 1..=max_l {
            for n in 0..=max_n {
                let mut acc = BigUint::zero();
                for j in 0..=n.min(d - 1) {
                    acc += &table[l - 1][n - j];
                }
                table[l][n] = acc;
            }
        }
        Self { d, table }
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// `Ω_d(n, l)`, zero outside the feasible range.
    pub fn get(&self, n: i64, l: usize) -> BigUint {
        if n < 0 {
            return BigUint::zero();
        }
        let n = n as usize;
        if l < self.table.len() && n < self.table[l].len() {
            self.table[l][n].clone()
        } else if n > l * (self.d - 1) {
            BigUint::zero()
        } else {
            panic!("Ω({n}, {l}) lies outside the memo table");
        }
    }

    fn positive(&self, n: i64, l: usize) -> bool {
        n >= 0 && (n as usize) <= l * (self.d - 1)
    }
}

/// `Ω_d(n, l)` in exact arithmetic.
pub fn omega(d: usize, n: usize, l: usize) -> BigUint {
    OccupancyCount::build(d, n, l).get(n as i64, l)
}

/// `a / b` in double precision without overflowing intermediate values.
pub fn big_ratio(a: &BigUint, b: &BigUint) -> f64 {
    let shift = a.bits().max(b.bits()).saturating_sub(960);
    let (x, y) = (a >> shift, b >> shift);
    x.to_f64().unwrap() / y.to_f64().unwrap()
}

fn check_feasible(n: i64, l: usize, d: usize) -> Result<()> {
    if d < 2 || l == 0 {
        return Err(Error::InvalidArgument("need d ≥ 2 and L ≥ 1".into()));
    }
    if n < 0 || n as usize > l * (d - 1) {
        return Err(Error::InfeasibleParticleNumber { n, length: l, d });
    }
    Ok(())
}

/// Feasible left charges at bond `m` and their exact Schmidt weights.
pub fn bond_weights(n: i64, l: usize, d: usize, m: usize) -> Result<Vec<(i64, f64)>> {
    check_feasible(n, l, d)?;
    if m > l {
        return Err(Error::BondOutOfRange { bond: m, length: l });
    }
    let omega = OccupancyCount::build(d, n as usize, l);
    Ok(weights_at(&omega, n, l, m))
}

fn weights_at(omega: &OccupancyCount, n: i64, l: usize, m: usize) -> Vec<(i64, f64)> {
    let total = omega.get(n, l);
    (0..=n)
        .filter(|&q| omega.positive(q, m) && omega.positive(n - q, l - m))
        .map(|q| (q, big_ratio(&(omega.get(q, m) * omega.get(n - q, l - m)), &total)))
        .collect()
}

/// Normalized equal-weight superposition of all `N`-particle Fock states.
pub fn uniform_fock_superposition(n: i64, l: usize, d: usize) -> Result<CanonicalMps> {
    check_feasible(n, l, d)?;
    let omega = OccupancyCount::build(d, n as usize, l);
    let total = omega.get(n, l);
    let phys = GradedBasis::new((0..d as i64).collect());
    let mut lambdas = Vec::with_capacity(l + 1);
    let mut bonds = Vec::with_capacity(l + 1);
    for m in 0..=l {
        let w = weights_at(&omega, n, l, m);
        let charges: Vec<i64> = w.iter().map(|x| x.0).collect();
        let basis = GradedBasis::new(charges);
        lambdas.push(Spectrum::new(basis.index().clone(), w.iter().map(|x| x.1.sqrt()).collect())?);
        bonds.push(basis);
    }
    let mut gammas = Vec::with_capacity(l);
    for k in 1..=l {
        let (left, right) = (&bonds[k - 1], &bonds[k]);
        let mut builder = TensorBuilder::new(
            vec![(left.clone(), Direction::In), (phys.clone(), Direction::In), (right.clone(), Direction::Out)],
            0,
        );
        for (a, &ql) in left.charges().iter().enumerate() {
            for (b, &qr) in right.charges().iter().enumerate() {
                let occ = qr - ql;
                if occ < 0 || occ as usize >= d {
                    continue;
                }
                let den = omega.get(n - ql, l - k + 1) * omega.get(qr, k);
                let g = big_ratio(&total, &den).sqrt();
                builder.add(&[a, occ as usize, b], C64::new(g, 0.0))?;
            }
        }
        gammas.push(builder.finish());
    }
    CanonicalMps::from_parts(vec![phys; l], gammas, lambdas)
}

/// `|P_N⟩` with prefactor `√Ω(N, L)`, graded by both chain charges.
pub fn projector_superstate(n: i64, l: usize, d: usize) -> Result<SuperState> {
    let uniform = uniform_fock_superposition(n, l, d)?;
    let scheme = ChargeScheme::both(l, d);
    let stride = (l * (d - 1) + 1) as i64;
    let mps = uniform.map_sites(vec![scheme.basis(d); l], &|_, s| s * d + s, &|c| (stride + 1) * c, false)?;
    let count = omega(d, n as usize, l);
    let scale = C64::new(big_ratio(&count, &BigUint::one()).sqrt(), 0.0);
    Ok(SuperState::from_parts(mps, scale, scheme, Some(0), Some(n)))
}

/// `P_{N−ΔN} Ô P_N` for an operator with definite `ΔN`.
pub fn project_superstate(s: &SuperState, n: i64) -> Result<SuperState> {
    if s.scheme() == ChargeScheme::Brute || s.delta_n().is_none() {
        return Err(Error::IndefiniteCharge);
    }
    let p = projector_superstate(n, s.length(), s.d())?;
    SuperState::compose(s, &p)
}

/// Projection of a product operator.
pub fn project_factors(factors: &[LocalOperator], n: i64) -> Result<SuperState> {
    project_superstate(&SuperState::lift_product_operator(factors)?, n)
}

/// Projection of a sum of product operators sharing one `ΔN`.
pub fn project_terms(terms: &[(C64, Vec<LocalOperator>)], n: i64) -> Result<SuperState> {
    project_superstate(&crate::operator_space::lift_sum(terms)?, n)
}

/// OSEE of `P_N` at bond `m` from the exact weights.
pub fn projector_osee(n: i64, l: usize, d: usize, m: usize) -> Result<f64> {
    if m == 0 || m >= l {
        return Err(Error::BondOutOfRange { bond: m, length: l });
    }
    Ok(bond_weights(n, l, d, m)?
        .iter()
        .filter(|w| w.1 > 0.0)
        .map(|&(_, p)| -p * p.log2())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator_space::hs_trace_pair;
    use nalgebra::DMatrix;

    fn binomial(n: u64, k: u64) -> BigUint {
        let mut acc = BigUint::one();
        for i in 0..k {
            acc = acc * BigUint::from(n - i) / BigUint::from(i + 1);
        }
        acc
    }

    fn occupations(lin: usize, d: usize, l: usize) -> Vec<usize> {
        let mut rem = lin;
        (0..l)
            .map(|_| {
                let s = rem % d;
                rem /= d;
                s
            })
            .collect()
    }

    fn sector_indicator(n: usize, l: usize, d: usize) -> DMatrix<C64> {
        let dim = d.pow(l as u32);
        DMatrix::from_fn(dim, dim, |r, c| {
            if r == c && occupations(r, d, l).iter().sum::<usize>() == n {
                C64::new(1.0, 0.0)
            } else {
                C64::zero()
            }
        })
    }

    fn max_diff(a: &DMatrix<C64>, b: &DMatrix<C64>) -> f64 {
        (a - b).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    #[test]
    fn omega_examples() {
        assert_eq!(omega(2, 3, 5), BigUint::from(10u32));
        assert_eq!(omega(5, 2, 2), BigUint::from(3u32));
        assert_eq!(omega(2, 3, 2), BigUint::zero());
        assert_eq!(omega(3, 0, 0), BigUint::one());
        assert_eq!(omega(3, 1, 0), BigUint::zero());
        for l in 0..=12u64 {
            for n in 0..=l {
                assert_eq!(omega(2, n as usize, l as usize), binomial(l, n));
            }
        }
        assert_eq!(omega(2, 20, 40), binomial(40, 20));
    }

    #[test]
    fn exact_weights_normalize() {
        for (n, l, d) in [(3, 7, 2), (4, 5, 3), (10, 6, 4), (1, 9, 5)] {
            let omega = OccupancyCount::build(d, n as usize, l);
            for m in 0..=l {
                // Σ_q Ω(q,m) Ω(n−q,l−m) = Ω(n,l) exactly
                let mut acc = BigUint::zero();
                for q in 0..=n {
                    acc += omega.get(q, m) * omega.get(n - q, l - m);
                }
                assert_eq!(acc, omega.get(n, l));
                let w: f64 = weights_at(&omega, n, l, m).iter().map(|x| x.1).sum();
                assert!((w - 1.0).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn uniform_superpositions() {
        let s = uniform_fock_superposition(1, 2, 2).unwrap();
        let h = 1.0 / 2f64.sqrt();
        for &x in s.schmidt_spectrum(1).unwrap().values() {
            assert!((x - h).abs() < 1e-15);
        }
        let v = s.to_dense();
        assert!((v[1].re - h).abs() < 1e-15 && (v[2].re - h).abs() < 1e-15);

        let z = uniform_fock_superposition(0, 4, 3).unwrap();
        assert_eq!(z.max_bond_dim(), 1);

        let u = uniform_fock_superposition(2, 4, 3).unwrap();
        let v = u.to_dense();
        let amp = 1.0 / 10f64.sqrt();
        for (lin, z) in v.iter().enumerate() {
            let expected = if occupations(lin, 3, 4).iter().sum::<usize>() == 2 { amp } else { 0.0 };
            assert!((z - C64::new(expected, 0.0)).norm() < 1e-14);
        }
        let w: Vec<f64> = u.schmidt_spectrum(2).unwrap().values().iter().map(|x| x * x).collect();
        for (got, want) in w.iter().zip([0.3, 0.4, 0.3]) {
            assert!((got - want).abs() < 1e-14);
        }
        assert!(u.orthogonality_error() < 1e-12);
        assert!(u.normalization_error() < 1e-14);
        assert!(matches!(uniform_fock_superposition(5, 2, 3), Err(Error::InfeasibleParticleNumber { n: 5, length: 2, d: 3 })));
        assert!(matches!(uniform_fock_superposition(-1, 2, 3), Err(Error::InfeasibleParticleNumber { .. })));
    }

    #[test]
    fn bond_dimension_is_at_most_n_plus_one() {
        let s = uniform_fock_superposition(3, 10, 2).unwrap();
        assert!(s.bond_dims().iter().all(|&c| c <= 4));
        assert_eq!(s.bond_dims()[4], 4);
        assert_eq!(s.bond_dims()[0], 2);
        let t = uniform_fock_superposition(7, 5, 3).unwrap();
        assert!(t.bond_dims().iter().all(|&c| c <= 8));
    }

    #[test]
    fn projector_matrices() {
        let p = projector_superstate(1, 2, 2).unwrap();
        assert_eq!(p.in_charge(), Some(1));
        assert_eq!(p.delta_n(), Some(0));
        assert!((p.scale().re - 2f64.sqrt()).abs() < 1e-15);
        assert!(max_diff(&p.to_matrix(), &sector_indicator(1, 2, 2)) < 1e-14);
        assert!(max_diff(&projector_superstate(0, 2, 2).unwrap().to_matrix(), &sector_indicator(0, 2, 2)) < 1e-14);

        let (l, d) = (4, 3);
        let mut sum = DMatrix::<C64>::zeros(81, 81);
        for n in 0..=8 {
            sum += projector_superstate(n, l, d).unwrap().to_matrix();
        }
        assert!(max_diff(&sum, &DMatrix::identity(81, 81)) < 1e-12);
    }

    #[test]
    fn idempotent_and_orthogonal() {
        let (l, d) = (4, 2);
        let p2 = projector_superstate(2, l, d).unwrap();
        let p1 = projector_superstate(1, l, d).unwrap();
        let sq = SuperState::compose(&p2, &p2).unwrap();
        assert!(max_diff(&sq.to_matrix(), &p2.to_matrix()) < 1e-12);
        let cross = SuperState::compose(&p1, &p2).unwrap();
        assert!(cross.is_zero());
        let tr = hs_trace_pair(&p2, &p2).unwrap();
        assert!((tr.re - 6.0).abs() < 1e-12);
    }

    #[test]
    fn projected_operators() {
        let l = 2;
        let sz = LocalOperator::sigma_z();
        let s = project_factors(&sz.at(1, l).unwrap(), 1).unwrap();
        let m = s.to_matrix();
        // site 1 occupied (index 1) is spin up, site 2 occupied (index 2) leaves site 1 down
        let expected = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![
            C64::zero(),
            C64::new(1.0, 0.0),
            C64::new(-1.0, 0.0),
            C64::zero(),
        ]));
        assert!(max_diff(&m, &expected) < 1e-14);
        assert_eq!(s.in_charge(), Some(1));
        assert_eq!(s.out_charge(), Some(1));

        let id = SuperState::identity(3, 3);
        let p = project_superstate(&id, 2).unwrap();
        assert!(max_diff(&p.to_matrix(), &sector_indicator(2, 3, 3)) < 1e-13);

        let a = project_factors(&LocalOperator::annihilation(3).at(2, 3).unwrap(), 0).unwrap();
        assert!(a.is_zero());
        let a = project_factors(&LocalOperator::annihilation(3).at(2, 3).unwrap(), 2).unwrap();
        assert_eq!(a.in_charge(), Some(2));
        assert_eq!(a.out_charge(), Some(1));

        let brute = id.coarsen(ChargeScheme::Brute).unwrap();
        assert!(matches!(project_superstate(&brute, 1), Err(Error::IndefiniteCharge)));
    }

    #[test]
    fn osee_of_projectors() {
        assert!((projector_osee(1, 2, 2, 1).unwrap() - 1.0).abs() < 1e-15);
        for n in 0..=12 {
            for m in 1..12 {
                let s = projector_osee(n, 12, 2, m).unwrap();
                assert!(s <= ((n + 1) as f64).log2() + 1e-12);
            }
        }
        for (n, l, d) in [(2, 5, 2), (3, 4, 3), (4, 6, 2)] {
            let p = projector_superstate(n, l, d).unwrap();
            for (m, &e) in p.osee_profile().iter().enumerate() {
                assert!((e - projector_osee(n, l, d, m + 1).unwrap()).abs() < 1e-12);
            }
        }
        assert!(projector_osee(1, 4, 2, 4).is_err());
    }

    #[test]
    fn big_ratios_do_not_overflow() {
        let a = omega(4, 600, 400);
        let b = omega(4, 599, 400);
        let r = big_ratio(&a, &b);
        assert!(r.is_finite() && r > 0.0);
    }
}
