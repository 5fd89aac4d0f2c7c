//! Operators as states on doubled chains.
//!
//! An operator `Ô = Σ O_{ij} |i⟩⟨j|` on `L` sites maps to a superstate whose
//! super-site index is `p = j·d + i`: the in-chain (column) index `j` varies
//! slower than the out-chain (row) index `i`, and the amplitude at `(j, i)`
//! is `O_{ij}`. Superstates are kept normalized with a separate complex
//! prefactor, so `‖Ô‖_HS = |scale|`.
//!
//! Three gradings of the super-sites are supported, see [`ChargeScheme`].

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::DMatrix;
use num_traits::Zero;
use serde::{Deserialize, Serialize};

use crate::charge_tensor::{ChargeIndex, Direction, GradedBasis, LegMap, TensorBuilder, C64};
use crate::error::{mismatch, Error, Result};
use crate::mps::CanonicalMps;

/// Relative size below which a sum is treated as exact cancellation.
const CANCELLATION: f64 = 1e-13;

/// Grading of a super-site `(j, i)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChargeScheme {
    /// No conserved label.
    Brute,
    /// Charge `j − i`; the chain total is `ΔN`.
    Difference,
    /// Both chain occupations, packed as `stride · j + i`; `stride` exceeds
    /// any possible out-chain count.
    Both { stride: i64 },
}

enum Label {
    None,
    Diff(i64),
    Pair(i64, i64),
}

impl ChargeScheme {
    pub fn both(length: usize, d: usize) -> Self {
        ChargeScheme::Both { stride: (length * (d - 1) + 1) as i64 }
    }

    fn fineness(self) -> u8 {
        match self {
            ChargeScheme::Brute => 0,
            ChargeScheme::Difference => 1,
            ChargeScheme::Both { .. } => 2,
        }
    }

    /// The coarser of two schemes.
    pub fn common(self, other: ChargeScheme) -> ChargeScheme {
        if self.fineness() <= other.fineness() {
            self
        } else {
            other
        }
    }

    fn encode(self, n_in: i64, n_out: i64) -> i64 {
        match self {
            ChargeScheme::Brute => 0,
            ChargeScheme::Difference => n_in - n_out,
            ChargeScheme::Both { stride } => stride * n_in + n_out,
        }
    }

    fn decode(self, c: i64) -> Label {
        match self {
            ChargeScheme::Brute => Label::None,
            ChargeScheme::Difference => Label::Diff(c),
            ChargeScheme::Both { stride } => Label::Pair(c.div_euclid(stride), c.rem_euclid(stride)),
        }
    }

    fn difference(self, c: i64) -> Option<i64> {
        match self.decode(c) {
            Label::None => None,
            Label::Diff(x) => Some(x),
            Label::Pair(a, b) => Some(a - b),
        }
    }

    /// Charge of super-site state `(j, i)`.
    pub fn site_charge(self, j: usize, i: usize) -> i64 {
        self.encode(j as i64, i as i64)
    }

    /// Super-site basis for local dimension `d`, ordered `p = j·d + i`.
    pub fn basis(self, d: usize) -> GradedBasis {
        GradedBasis::new((0..d * d).map(|p| self.site_charge(p / d, p % d)).collect())
    }

    /// Regrading of labels from `self` to the coarser `target`.
    fn coarsen_map(self, target: ChargeScheme) -> impl Fn(i64) -> i64 {
        move |c| match target {
            ChargeScheme::Brute => 0,
            ChargeScheme::Difference => self.difference(c).unwrap(),
            ChargeScheme::Both { .. } => c,
        }
    }
}

/// A single-site operator with its particle-number change.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalOperator {
    entries: DMatrix<C64>,
    delta_n: Option<i64>,
}

impl LocalOperator {
    /// Wraps a `d × d` matrix. `ΔN` is `j − i` when every nonzero entry
    /// `(i, j)` shares it; otherwise the operator is mixed.
    pub fn new(entries: DMatrix<C64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() || entries.nrows() < 2 {
            return Err(Error::ShapeMismatch("local operators are square with d ≥ 2".into()));
        }
        let mut delta: Option<Option<i64>> = None;
        for i in 0..entries.nrows() {
            for j in 0..entries.ncols() {
                if !entries[(i, j)].is_zero() {
                    let k = j as i64 - i as i64;
                    match delta {
                        None => delta = Some(Some(k)),
                        Some(Some(x)) if x != k => delta = Some(None),
                        _ => {}
                    }
                }
            }
        }
        Ok(Self { entries, delta_n: delta.unwrap_or(Some(0)) })
    }

    fn from_fn(d: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        Self::new(DMatrix::from_fn(d, d, |i, j| C64::new(f(i, j), 0.0))).unwrap()
    }

    pub fn identity(d: usize) -> Self {
        Self::from_fn(d, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    pub fn number(d: usize) -> Self {
        Self::from_fn(d, |i, j| if i == j { i as f64 } else { 0.0 })
    }

    /// Bosonic annihilator truncated to `d` levels.
    pub fn annihilation(d: usize) -> Self {
        Self::from_fn(d, |i, j| if j == i + 1 { (j as f64).sqrt() } else { 0.0 })
    }

    pub fn creation(d: usize) -> Self {
        Self::from_fn(d, |i, j| if i == j + 1 { (i as f64).sqrt() } else { 0.0 })
    }

    /// `σ^z` with `|0⟩` spin down: `diag(−1, 1)`.
    pub fn sigma_z() -> Self {
        Self::from_fn(2, |i, j| if i != j { 0.0 } else if i == 0 { -1.0 } else { 1.0 })
    }

    /// `σ⁺ = |1⟩⟨0|`.
    pub fn sigma_plus() -> Self {
        Self::creation(2)
    }

    /// `σ⁻ = |0⟩⟨1|`.
    pub fn sigma_minus() -> Self {
        Self::annihilation(2)
    }

    pub fn d(&self) -> usize {
        self.entries.nrows()
    }

    pub fn entries(&self) -> &DMatrix<C64> {
        &self.entries
    }

    /// `None` for mixed operators.
    pub fn delta_n(&self) -> Option<i64> {
        self.delta_n
    }

    pub fn scaled(&self, c: C64) -> Self {
        Self { entries: self.entries.map(|z| z * c), delta_n: self.delta_n }
    }

    /// Same operator on each site, identity elsewhere: factors for a chain of `length`.
    pub fn at(&self, site: usize, length: usize) -> Result<Vec<LocalOperator>> {
        if site == 0 || site > length {
            return Err(Error::SiteOutOfRange { site, length });
        }
        Ok((1..=length)
            .map(|k| if k == site { self.clone() } else { LocalOperator::identity(self.d()) })
            .collect())
    }
}

/// An operator stored as a normalized canonical MPS over super-sites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperState {
    mps: CanonicalMps,
    scale: C64,
    scheme: ChargeScheme,
    d: usize,
    delta_n: Option<i64>,
    in_charge: Option<i64>,
}

impl SuperState {
    fn super_bases(scheme: ChargeScheme, d: usize, length: usize) -> Vec<GradedBasis> {
        vec![scheme.basis(d); length]
    }

    pub(crate) fn from_parts(
        mps: CanonicalMps,
        scale: C64,
        scheme: ChargeScheme,
        delta_n: Option<i64>,
        in_charge: Option<i64>,
    ) -> Self {
        let d = (mps.bases()[0].dim() as f64).sqrt().round() as usize;
        Self { mps, scale, scheme, d, delta_n, in_charge }
    }

    /// The zero operator, carrying the requested labels.
    pub fn zero(length: usize, d: usize, scheme: ChargeScheme, delta_n: Option<i64>, in_charge: Option<i64>) -> Self {
        let mps = CanonicalMps::from_product_states(Self::super_bases(scheme, d, length), &vec![0; length])
            .expect("basis state 0 exists");
        Self { mps, scale: C64::zero(), scheme, d, delta_n, in_charge }
    }

    /// `1 = ⊗ Σ_j |j⟩⟨j|`, product state with norm `d^{L/2}`.
    pub fn identity(length: usize, d: usize) -> Self {
        let v: Vec<C64> = (0..d * d)
            .map(|p| if p / d == p % d { C64::new(1.0, 0.0) } else { C64::zero() })
            .collect();
        let scheme = ChargeScheme::Difference;
        let (mps, norm) = CanonicalMps::from_product(Self::super_bases(scheme, d, length), &vec![v; length])
            .expect("identity is charge neutral");
        Self { mps, scale: C64::new(norm, 0.0), scheme, d, delta_n: Some(0), in_charge: None }
    }

    /// `⊗ factors` in the difference grading.
    pub fn lift_product_operator(factors: &[LocalOperator]) -> Result<Self> {
        Self::lift_product_operator_with(factors, ChargeScheme::Difference)
    }

    /// `⊗ factors` in `scheme`; the brute grading accepts mixed factors.
    pub fn lift_product_operator_with(factors: &[LocalOperator], scheme: ChargeScheme) -> Result<Self> {
        let Some(first) = factors.first() else {
            return Err(Error::ShapeMismatch("at least one factor is required".into()));
        };
        let d = first.d();
        if factors.iter().any(|f| f.d() != d) {
            return Err(Error::ShapeMismatch("factors have different local dimensions".into()));
        }
        let mut delta = Some(0);
        for f in factors {
            delta = match (delta, f.delta_n) {
                (Some(a), Some(b)) => Some(a + b),
                _ => None,
            };
        }
        match scheme {
            ChargeScheme::Difference if delta.is_none() => return Err(Error::IndefiniteCharge),
            ChargeScheme::Both { .. } => {
                return Err(Error::InvalidArgument(
                    "operators with definite chain charges are built by projection".into(),
                ))
            }
            _ => {}
        }
        let length = factors.len();
        if factors.iter().any(|f| f.entries.iter().all(|z| z.is_zero())) {
            return Ok(Self::zero(length, d, scheme, delta, None));
        }
        let vectors: Vec<Vec<C64>> = factors
            .iter()
            .map(|f| (0..d * d).map(|p| f.entries[(p % d, p / d)]).collect())
            .collect();
        let (mps, norm) = CanonicalMps::from_product(Self::super_bases(scheme, d, length), &vectors)?;
        Ok(Self { mps, scale: C64::new(norm, 0.0), scheme, d, delta_n: delta, in_charge: None })
    }

    /// Superstate of a dense `d^L × d^L` matrix (little-endian basis).
    pub fn from_matrix(m: &DMatrix<C64>, d: usize, length: usize, scheme: ChargeScheme, tol: f64) -> Result<Self> {
        let dim = d.pow(length as u32);
        if m.nrows() != dim || m.ncols() != dim {
            return Err(Error::ShapeMismatch(format!("expected a {dim}x{dim} matrix")));
        }
        let mut v = vec![C64::zero(); dim * dim];
        for r in 0..dim {
            for c in 0..dim {
                v[super_index(r, c, d, length)] = m[(r, c)];
            }
        }
        if v.iter().all(|z| z.norm() <= tol) {
            return Ok(Self::zero(length, d, scheme, None, None));
        }
        let (mps, norm) = CanonicalMps::from_dense(Self::super_bases(scheme, d, length), &v, tol)?;
        let total = mps.total_charge();
        let (delta_n, in_charge) = match scheme.decode(total) {
            Label::None => (None, None),
            Label::Diff(x) => (Some(x), None),
            Label::Pair(a, b) => (Some(a - b), Some(a)),
        };
        Ok(Self { mps, scale: C64::new(norm, 0.0), scheme, d, delta_n, in_charge })
    }

    /// Dense `d^L × d^L` matrix including the prefactor.
    pub fn to_matrix(&self) -> DMatrix<C64> {
        let (d, l) = (self.d, self.length());
        let dim = d.pow(l as u32);
        if self.is_zero() {
            return DMatrix::zeros(dim, dim);
        }
        let v = self.mps.to_dense();
        DMatrix::from_fn(dim, dim, |r, c| self.scale * v[super_index(r, c, d, l)])
    }

    pub fn mps(&self) -> &CanonicalMps {
        &self.mps
    }

    pub fn mps_mut(&mut self) -> &mut CanonicalMps {
        &mut self.mps
    }

    pub fn scale(&self) -> C64 {
        self.scale
    }

    pub fn scheme(&self) -> ChargeScheme {
        self.scheme
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn length(&self) -> usize {
        self.mps.length()
    }

    pub fn delta_n(&self) -> Option<i64> {
        self.delta_n
    }

    pub fn in_charge(&self) -> Option<i64> {
        self.in_charge
    }

    pub fn out_charge(&self) -> Option<i64> {
        Some(self.in_charge? - self.delta_n?)
    }

    pub fn is_zero(&self) -> bool {
        self.scale.is_zero()
    }

    /// Hilbert-Schmidt norm `√Tr[Ô†Ô]`.
    pub fn hs_norm(&self) -> f64 {
        self.scale.norm()
    }

    /// Operator space entanglement entropy at bonds `1..L`.
    pub fn osee_profile(&self) -> Vec<f64> {
        if self.is_zero() {
            return vec![0.0; self.length().saturating_sub(1)];
        }
        self.mps.entropy_profile()
    }

    pub fn scaled(&self, c: C64) -> Self {
        let mut s = self.clone();
        s.scale *= c;
        s
    }

    /// Same operator in the coarser grading `target`.
    pub fn coarsen(&self, target: ChargeScheme) -> Result<Self> {
        if target == self.scheme {
            return Ok(self.clone());
        }
        if target.fineness() >= self.scheme.fineness() {
            return Err(Error::InvalidArgument(format!(
                "cannot refine a {:?} superstate to {:?}",
                self.scheme, target
            )));
        }
        let map = self.scheme.coarsen_map(target);
        let mps = self.mps.map_sites(
            Self::super_bases(target, self.d, self.length()),
            &|_, s| s,
            &map,
            false,
        )?;
        let in_charge = if target.fineness() == 2 { self.in_charge } else { None };
        Ok(Self { mps, scale: self.scale, scheme: target, d: self.d, delta_n: self.delta_n, in_charge })
    }

    /// `Ô†`, with `ΔN(Ô†) = −ΔN(Ô)`.
    pub fn adjoint(&self) -> Result<Self> {
        let d = self.d;
        let delta_n = self.delta_n.map(|x| -x);
        let in_charge = self.out_charge();
        if self.is_zero() {
            return Ok(Self::zero(self.length(), d, self.scheme, delta_n, in_charge));
        }
        let scheme = self.scheme;
        let swap = move |c: i64| match scheme.decode(c) {
            Label::None => 0,
            Label::Diff(x) => -x,
            Label::Pair(a, b) => scheme.encode(b, a),
        };
        let mps = self.mps.map_sites(
            Self::super_bases(scheme, d, self.length()),
            &|_, p| (p % d) * d + p / d,
            &swap,
            true,
        )?;
        Ok(Self { mps, scale: self.scale.conj(), scheme, d, delta_n, in_charge })
    }

    fn check_shape(&self, other: &SuperState) -> Result<()> {
        if self.length() != other.length() || self.d != other.d {
            return Err(Error::ShapeMismatch("superstates on different chains".into()));
        }
        if let (ChargeScheme::Both { stride: a }, ChargeScheme::Both { stride: b }) = (self.scheme, other.scheme) {
            if a != b {
                return Err(Error::ShapeMismatch("incompatible chain gradings".into()));
            }
        }
        Ok(())
    }

    /// `self + other`.
    pub fn add(&self, other: &SuperState) -> Result<Self> {
        self.check_shape(other)?;
        let scheme = self.scheme.common(other.scheme);
        let (a, b) = (self.coarsen(scheme)?, other.coarsen(scheme)?);
        if a.delta_n != b.delta_n {
            return Err(mismatch("operators with different ΔN cannot be added"));
        }
        if scheme.fineness() == 2 && a.in_charge != b.in_charge {
            return Err(mismatch("projected operators act on different sectors"));
        }
        if b.is_zero() {
            return Ok(a);
        }
        if a.is_zero() {
            return Ok(b);
        }
        let l = a.length();
        let mut ta = a.mps.right_tensors();
        let mut tb = b.mps.right_tensors();
        ta[0].scale(a.scale);
        tb[0].scale(b.scale);
        let mut tensors = Vec::with_capacity(l);
        let mut left: Option<(LegMap, LegMap)> = None;
        for k in 0..l {
            let (x, y) = (&ta[k], &tb[k]);
            let (lx, ly) = match left.take() {
                Some(m) => m,
                None => (LegMap::identity(&x.leg(0).index), LegMap::identity(&y.leg(0).index)),
            };
            let (rx, ry) = if k + 1 == l {
                if x.leg(2).index != y.leg(2).index {
                    return Err(mismatch("operators with different total charges cannot be added"));
                }
                (LegMap::identity(&x.leg(2).index), LegMap::identity(&y.leg(2).index))
            } else {
                let (_, mx, my) = LegMap::direct_sum(&x.leg(2).index, &y.leg(2).index);
                (mx, my)
            };
            let phys = LegMap::identity(&x.leg(1).index);
            let mut t = x.regrade(&[lx, phys.clone(), rx.clone()], 0)?;
            t.add_assign(&y.regrade(&[ly, phys, ry.clone()], 0)?)?;
            tensors.push(t);
            left = Some((rx, ry));
        }
        let bases = a.mps.bases().to_vec();
        // cancellation down to rounding noise is an exact zero
        let noise = CANCELLATION * (a.hs_norm() + b.hs_norm());
        match CanonicalMps::from_tensors(bases, tensors) {
            Ok((_, norm)) if norm <= noise => Ok(Self::zero(l, a.d, scheme, a.delta_n, a.in_charge)),
            Ok((mps, norm)) => Ok(Self { mps, scale: C64::new(norm, 0.0), ..a }),
            Err(Error::ZeroNorm) => Ok(Self::zero(l, a.d, scheme, a.delta_n, a.in_charge)),
            Err(e) => Err(e),
        }
    }

    /// The operator product `a · b`.
    pub fn compose(a: &SuperState, b: &SuperState) -> Result<Self> {
        a.check_shape(b)?;
        let (l, d) = (a.length(), a.d);
        let scheme = if a.scheme == ChargeScheme::Brute || b.scheme == ChargeScheme::Brute {
            ChargeScheme::Brute
        } else if a.scheme.fineness() == 2 || b.scheme.fineness() == 2 {
            ChargeScheme::both(l, d)
        } else {
            ChargeScheme::Difference
        };
        let delta_n = match (a.delta_n, b.delta_n) {
            (Some(x), Some(y)) => Some(x + y),
            _ => None,
        };
        let in_charge = match (b.in_charge, a.in_charge, b.delta_n) {
            (Some(n), _, _) => Some(n),
            (None, Some(n), Some(db)) => Some(n + db),
            _ => None,
        };
        let in_charge = if scheme.fineness() == 2 { in_charge } else { None };
        if a.is_zero() || b.is_zero() {
            return Ok(Self::zero(l, d, scheme, delta_n, in_charge));
        }

        let (sa, sb) = (a.scheme, b.scheme);
        let label = move |ca: i64, cb: i64| -> i64 {
            match scheme {
                ChargeScheme::Brute => 0,
                ChargeScheme::Difference => sa.difference(ca).unwrap() + sb.difference(cb).unwrap(),
                ChargeScheme::Both { .. } => {
                    let (ia, oa) = match sa.decode(ca) {
                        Label::Pair(x, y) => (Some(x), Some(y)),
                        _ => (None, None),
                    };
                    let (ib, ob) = match sb.decode(cb) {
                        Label::Pair(x, y) => (Some(x), Some(y)),
                        _ => (None, None),
                    };
                    let n_in = ib.unwrap_or_else(|| ia.unwrap() + sb.difference(cb).unwrap());
                    let n_out = oa.unwrap_or_else(|| ob.unwrap() - sa.difference(ca).unwrap());
                    scheme.encode(n_in, n_out)
                }
            }
        };
        let pair_basis = |x: &ChargeIndex, y: &ChargeIndex| {
            let (qx, qy) = (x.element_charges(), y.element_charges());
            let charges = qx
                .iter()
                .flat_map(|&p| qy.iter().map(move |&q| (p, q)))
                .map(|(p, q)| label(p, q))
                .collect();
            (GradedBasis::new(charges), qy.len())
        };

        let cb = scheme.basis(d);
        let (ta, tb) = (a.mps.right_tensors(), b.mps.right_tensors());
        let mut tensors = Vec::with_capacity(l);
        let (mut left, mut lw) = pair_basis(&ta[0].leg(0).index, &tb[0].leg(0).index);
        for k in 0..l {
            let (x, y) = (&ta[k], &tb[k]);
            let (right, rw) = pair_basis(&x.leg(2).index, &y.leg(2).index);
            let bx = &a.mps.bases()[k];
            let by = &b.mps.bases()[k];
            // group entries of a by their in-chain index, of b by their out index
            let mut by_in: BTreeMap<usize, Vec<(usize, usize, usize, C64)>> = BTreeMap::new();
            x.for_each_entry(|pos, z| {
                let (s, o) = bx.index().locate(pos[1]);
                let p = bx.state(s, o);
                by_in.entry(p / d).or_default().push((pos[0], p % d, pos[2], z));
            });
            let mut builder = TensorBuilder::new(
                vec![(left.clone(), Direction::In), (cb.clone(), Direction::In), (right.clone(), Direction::Out)],
                0,
            );
            let mut err = None;
            y.for_each_entry(|pos, zb| {
                let (s, o) = by.index().locate(pos[1]);
                let p = by.state(s, o);
                let (j, m) = (p / d, p % d);
                if let Some(list) = by_in.get(&m) {
                    for &(la, i, ra, za) in list {
                        let states = [la * lw + pos[0], j * d + i, ra * rw + pos[2]];
                        if let Err(e) = builder.add(&states, za * zb) {
                            err.get_or_insert(e);
                        }
                    }
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            tensors.push(builder.finish());
            left = right;
            lw = rw;
        }
        let bases = Self::super_bases(scheme, d, l);
        match CanonicalMps::from_tensors(bases, tensors) {
            Ok((mps, norm)) => Ok(Self {
                mps,
                scale: a.scale * b.scale * norm,
                scheme,
                d,
                delta_n,
                in_charge,
            }),
            Err(Error::ZeroNorm) => Ok(Self::zero(l, d, scheme, delta_n, in_charge)),
            Err(e) => Err(e),
        }
    }

    /// `op_site · self`: applies a local operator on the out-chain.
    pub fn apply_out_chain(&self, op: &LocalOperator, site: usize) -> Result<Self> {
        if op.d() != self.d {
            return Err(Error::ShapeMismatch("operator and superstate have different d".into()));
        }
        let factors = op.at(site, self.length())?;
        let scheme = if self.scheme == ChargeScheme::Brute { ChargeScheme::Brute } else { ChargeScheme::Difference };
        let lifted = Self::lift_product_operator_with(&factors, scheme)?;
        Self::compose(&lifted, self)
    }

    /// `|ψ⟩⟨φ|`.
    pub fn outer_product(psi: &CanonicalMps, phi: &CanonicalMps) -> Result<Self> {
        let l = psi.length();
        if phi.length() != l || psi.bases() != phi.bases() {
            return Err(Error::ShapeMismatch("states on different chains".into()));
        }
        let d = psi.bases()[0].dim();
        let occupation = GradedBasis::new((0..d as i64).collect());
        if psi.bases().iter().any(|b| b != &occupation) {
            return Err(Error::ShapeMismatch("states must use the occupation basis".into()));
        }
        let scheme = ChargeScheme::both(l, d);
        let pair = |x: &ChargeIndex, y: &ChargeIndex| {
            let (qx, qy) = (x.element_charges(), y.element_charges());
            let charges = qx
                .iter()
                .flat_map(|&p| qy.iter().map(move |&q| scheme.encode(q, p)))
                .collect();
            (GradedBasis::new(charges), qy.len())
        };
        let (tp, tf) = (psi.right_tensors(), phi.right_tensors());
        let cb = scheme.basis(d);
        let mut tensors = Vec::with_capacity(l);
        for k in 0..l {
            let (x, y) = (&tp[k], &tf[k].conj());
            let (left, lw) = pair(&x.leg(0).index, &y.leg(0).index);
            let (right, rw) = pair(&x.leg(2).index, &y.leg(2).index);
            let mut builder = TensorBuilder::new(
                vec![(left, Direction::In), (cb.clone(), Direction::In), (right, Direction::Out)],
                0,
            );
            let mut ys = Vec::new();
            y.for_each_entry(|pos, z| ys.push((pos[0], occupation.state(occupation.index().locate(pos[1]).0, 0), pos[2], z)));
            let mut err = None;
            x.for_each_entry(|pos, zx| {
                let i = occupation.state(occupation.index().locate(pos[1]).0, 0);
                for &(lb, j, rb, zy) in &ys {
                    if let Err(e) = builder.add(&[pos[0] * lw + lb, j * d + i, pos[2] * rw + rb], zx * zy) {
                        err.get_or_insert(e);
                    }
                }
            });
            if let Some(e) = err {
                return Err(e);
            }
            tensors.push(builder.finish());
        }
        let (mps, norm) = CanonicalMps::from_tensors(Self::super_bases(scheme, d, l), tensors)?;
        let (n_psi, n_phi) = (psi.total_charge(), phi.total_charge());
        Ok(Self {
            mps,
            scale: C64::new(norm, 0.0),
            scheme,
            d,
            delta_n: Some(n_phi - n_psi),
            in_charge: Some(n_phi),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let st: Self = serde_json::from_str(s)?;
        st.mps.validate()?;
        Ok(st)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Little-endian position of `(row r, column c)` in the super-site vector.
fn super_index(r: usize, c: usize, d: usize, length: usize) -> usize {
    let (mut r, mut c) = (r, c);
    let mut lin = 0;
    let mut w = 1;
    for _ in 0..length {
        let (i, j) = (r % d, c % d);
        lin += (j * d + i) * w;
        w *= d * d;
        r /= d;
        c /= d;
    }
    lin
}

/// `Tr[A† B]`.
pub fn hs_trace_pair(a: &SuperState, b: &SuperState) -> Result<C64> {
    a.check_shape(b)?;
    if a.is_zero() || b.is_zero() {
        return Ok(C64::zero());
    }
    let scheme = a.scheme.common(b.scheme);
    let (x, y) = (a.coarsen(scheme)?, b.coarsen(scheme)?);
    Ok(x.scale.conj() * y.scale * x.mps.inner_product(&y.mps)?)
}

/// `⟨ψ|Ô|ψ⟩` for a normalized state.
pub fn expectation_in_state(s: &SuperState, psi: &CanonicalMps) -> Result<C64> {
    if psi.length() != s.length() || psi.bases()[0].dim() != s.d() {
        return Err(Error::ShapeMismatch("state and operator live on different chains".into()));
    }
    let rho = SuperState::outer_product(psi, psi)?;
    hs_trace_pair(&rho, s)
}

/// Per-bond operator space entanglement entropy.
pub fn osee_profile(s: &SuperState) -> Vec<f64> {
    s.osee_profile()
}

/// `Σ_k c_k ⊗ factors_k` for a list of product terms.
pub fn lift_sum(terms: &[(C64, Vec<LocalOperator>)]) -> Result<SuperState> {
    let mut acc: Option<SuperState> = None;
    for (c, factors) in terms {
        let t = SuperState::lift_product_operator(factors)?.scaled(*c);
        acc = Some(match acc {
            None => t,
            Some(x) => x.add(&t)?,
        });
    }
    acc.ok_or_else(|| Error::InvalidArgument("empty operator sum".into()))
}
