//! Charge-graded block-sparse tensors.
//!
//! Every index of a [`SymmetricTensor`] carries U(1) charges grouped into
//! sectors. A block (one sector selected per index) may be stored only when the
//! outgoing charges minus the incoming ones equal the tensor's total charge;
//! everything that is not stored is exactly zero.
//!
//! The only factorization needed by the rest of the crate is [`block_svd`],
//! which decomposes every charge block on its own and truncates globally.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_traits::Zero;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};

pub type C64 = Complex64;

/// Ordered list of `(charge, dimension)` sectors of one tensor index.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChargeIndex {
    sectors: Vec<(i64, usize)>,
}

impl ChargeIndex {
    pub fn new(sectors: Vec<(i64, usize)>) -> Result<Self> {
        for w in sectors.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(Error::InvalidArgument(
                    "sector charges must be strictly increasing".into(),
                ));
            }
        }
        if sectors.iter().any(|&(_, dim)| dim == 0) {
            return Err(Error::InvalidArgument("sector dimensions must be positive".into()));
        }
        Ok(Self { sectors })
    }

    /// A one-dimensional index carrying a single charge.
    pub fn trivial(charge: i64) -> Self {
        Self { sectors: vec![(charge, 1)] }
    }

    pub fn sectors(&self) -> &[(i64, usize)] {
        &self.sectors
    }

    pub fn num_sectors(&self) -> usize {
        self.sectors.len()
    }

    pub fn charge(&self, sector: usize) -> i64 {
        self.sectors[sector].0
    }

    pub fn sector_dim(&self, sector: usize) -> usize {
        self.sectors[sector].1
    }

    pub fn dim(&self) -> usize {
        self.sectors.iter().map(|s| s.1).sum()
    }

    /// Position of the first element of `sector` in the flattened index.
    pub fn offset(&self, sector: usize) -> usize {
        self.sectors[..sector].iter().map(|s| s.1).sum()
    }

    pub fn find(&self, charge: i64) -> Option<usize> {
        self.sectors.binary_search_by_key(&charge, |s| s.0).ok()
    }

    pub fn shifted(&self, by: i64) -> Self {
        Self { sectors: self.sectors.iter().map(|&(q, n)| (q + by, n)).collect() }
    }

    /// Charge of every element, in flattened order.
    pub fn element_charges(&self) -> Vec<i64> {
        self.sectors
            .iter()
            .flat_map(|&(q, n)| std::iter::repeat(q).take(n))
            .collect()
    }

    /// `(sector, offset)` of a flattened element position.
    pub fn locate(&self, mut pos: usize) -> (usize, usize) {
        for (s, &(_, n)) in self.sectors.iter().enumerate() {
            if pos < n {
                return (s, pos);
            }
            pos -= n;
        }
        panic!("element position out of range");
    }
}

/// A local basis whose states carry charges in arbitrary order.
///
/// States are grouped into the sorted sectors of [`GradedBasis::index`];
/// within a sector they keep their original relative order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<i64>", into = "Vec<i64>")]
pub struct GradedBasis {
    charges: Vec<i64>,
    index: ChargeIndex,
    position: Vec<(usize, usize)>,
    states: Vec<Vec<usize>>,
}

impl From<Vec<i64>> for GradedBasis {
    fn from(charges: Vec<i64>) -> Self {
        Self::new(charges)
    }
}

impl From<GradedBasis> for Vec<i64> {
    fn from(b: GradedBasis) -> Self {
        b.charges
    }
}

impl GradedBasis {
    pub fn new(charges: Vec<i64>) -> Self {
        assert!(!charges.is_empty(), "a basis needs at least one state");
        let distinct: BTreeSet<i64> = charges.iter().copied().collect();
        let sector_of: BTreeMap<i64, usize> =
            distinct.iter().enumerate().map(|(s, &q)| (q, s)).collect();
        let mut states = vec![Vec::new(); distinct.len()];
        let mut position = Vec::with_capacity(charges.len());
        for (p, q) in charges.iter().enumerate() {
            let s = sector_of[q];
            position.push((s, states[s].len()));
            states[s].push(p);
        }
        let index = ChargeIndex {
            sectors: distinct.iter().zip(&states).map(|(&q, v)| (q, v.len())).collect(),
        };
        Self { charges, index, position, states }
    }

    /// The basis whose states are the flattened elements of `index`.
    pub fn from_index(index: &ChargeIndex) -> Self {
        Self::new(index.element_charges())
    }

    pub fn dim(&self) -> usize {
        self.charges.len()
    }

    pub fn charges(&self) -> &[i64] {
        &self.charges
    }

    pub fn charge_of(&self, state: usize) -> i64 {
        self.charges[state]
    }

    pub fn index(&self) -> &ChargeIndex {
        &self.index
    }

    pub fn position(&self, state: usize) -> (usize, usize) {
        self.position[state]
    }

    /// Flattened element position of `state` in [`GradedBasis::index`].
    pub fn element(&self, state: usize) -> usize {
        let (s, o) = self.position[state];
        self.index.offset(s) + o
    }

    pub fn state(&self, sector: usize, offset: usize) -> usize {
        self.states[sector][offset]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    In,
    Out,
}

impl Direction {
    pub fn sign(self) -> i64 {
        match self {
            Direction::In => -1,
            Direction::Out => 1,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Direction::In => Direction::Out,
            Direction::Out => Direction::In,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Leg {
    pub index: ChargeIndex,
    pub dir: Direction,
}

impl Leg {
    pub fn new(index: ChargeIndex, dir: Direction) -> Self {
        Self { index, dir }
    }
}

/// Dense row-major block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseBlock {
    pub shape: Vec<usize>,
    pub data: Vec<C64>,
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut st = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        st[k] = st[k + 1] * shape[k + 1];
    }
    st
}

impl DenseBlock {
    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![C64::zero(); n] }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Reorders axes so that new axis `k` is old axis `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> DenseBlock {
        let rank = self.shape.len();
        debug_assert_eq!(perm.len(), rank);
        if perm.iter().enumerate().all(|(k, &p)| k == p) {
            return self.clone();
        }
        let old_st = strides(&self.shape);
        let shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let st: Vec<usize> = perm.iter().map(|&p| old_st[p]).collect();
        let n = self.data.len();
        let mut data = Vec::with_capacity(n);
        if n > 0 {
            let mut idx = vec![0usize; rank];
            let mut src = 0usize;
            for _ in 0..n {
                data.push(self.data[src]);
                for k in (0..rank).rev() {
                    idx[k] += 1;
                    src += st[k];
                    if idx[k] < shape[k] {
                        break;
                    }
                    src -= st[k] * shape[k];
                    idx[k] = 0;
                }
            }
        }
        DenseBlock { shape, data }
    }
}

/// Per-leg relabelling used by [`SymmetricTensor::regrade`]: element `e` of
/// the old index moves to `(sector, offset)` of the new index.
#[derive(Clone, Debug)]
pub struct LegMap {
    pub index: ChargeIndex,
    pub targets: Vec<(usize, usize)>,
}

impl LegMap {
    pub fn identity(index: &ChargeIndex) -> Self {
        let targets = (0..index.dim()).map(|e| index.locate(e)).collect();
        Self { index: index.clone(), targets }
    }

    /// Relabels every element by `charge_map(old charge)`. Elements landing in
    /// one new sector are ordered by `order` (ascending), ties by old position.
    pub fn relabel(
        index: &ChargeIndex,
        charge_map: impl Fn(i64) -> i64,
        order: Option<&[f64]>,
    ) -> Self {
        let old_charges = index.element_charges();
        let new_charges: Vec<i64> = old_charges.iter().map(|&q| charge_map(q)).collect();
        let mut elems: Vec<usize> = (0..old_charges.len()).collect();
        elems.sort_by(|&a, &b| {
            new_charges[a].cmp(&new_charges[b]).then_with(|| match order {
                Some(key) => key[a].partial_cmp(&key[b]).unwrap().then(a.cmp(&b)),
                None => a.cmp(&b),
            })
        });
        let mut sectors: Vec<(i64, usize)> = Vec::new();
        let mut targets = vec![(0, 0); elems.len()];
        for e in elems {
            let q = new_charges[e];
            if sectors.last().map(|s| s.0) != Some(q) {
                sectors.push((q, 0));
            }
            let s = sectors.len() - 1;
            targets[e] = (s, sectors[s].1);
            sectors[s].1 += 1;
        }
        Self { index: ChargeIndex { sectors }, targets }
    }

    /// Direct sum of two indices: returns the merged index and the embeddings
    /// of `a` (placed first within each charge) and `b`.
    pub fn direct_sum(a: &ChargeIndex, b: &ChargeIndex) -> (ChargeIndex, LegMap, LegMap) {
        let mut dims: BTreeMap<i64, (usize, usize)> = BTreeMap::new();
        for &(q, n) in a.sectors() {
            dims.entry(q).or_default().0 = n;
        }
        for &(q, n) in b.sectors() {
            dims.entry(q).or_default().1 = n;
        }
        let index = ChargeIndex { sectors: dims.iter().map(|(&q, &(x, y))| (q, x + y)).collect() };
        let map_a = LegMap {
            index: index.clone(),
            targets: (0..a.dim())
                .map(|e| {
                    let (s, o) = a.locate(e);
                    (index.find(a.charge(s)).unwrap(), o)
                })
                .collect(),
        };
        let map_b = LegMap {
            index: index.clone(),
            targets: (0..b.dim())
                .map(|e| {
                    let (s, o) = b.locate(e);
                    let q = b.charge(s);
                    (index.find(q).unwrap(), dims[&q].0 + o)
                })
                .collect(),
        };
        (index, map_a, map_b)
    }
}

/// Block-sparse tensor with U(1) charge conservation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymmetricTensor {
    legs: Vec<Leg>,
    total_charge: i64,
    #[serde(with = "block_list")]
    blocks: BTreeMap<Vec<usize>, DenseBlock>,
}

mod block_list {
    use super::DenseBlock;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};
    use std::collections::BTreeMap;

    pub fn serialize<S: Serializer>(
        blocks: &BTreeMap<Vec<usize>, DenseBlock>,
        s: S,
    ) -> Result<S::Ok, S::Error> {
        let list: Vec<(&Vec<usize>, &DenseBlock)> = blocks.iter().collect();
        list.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> Result<BTreeMap<Vec<usize>, DenseBlock>, D::Error> {
        let list: Vec<(Vec<usize>, DenseBlock)> = Vec::deserialize(d)?;
        Ok(list.into_iter().collect())
    }
}

impl SymmetricTensor {
    /// The zero tensor with the given legs.
    pub fn zeros(legs: Vec<Leg>, total_charge: i64) -> Self {
        Self { legs, total_charge, blocks: BTreeMap::new() }
    }

    pub fn legs(&self) -> &[Leg] {
        &self.legs
    }

    pub fn leg(&self, k: usize) -> &Leg {
        &self.legs[k]
    }

    pub fn rank(&self) -> usize {
        self.legs.len()
    }

    pub fn total_charge(&self) -> i64 {
        self.total_charge
    }

    pub fn shape(&self) -> Vec<usize> {
        self.legs.iter().map(|l| l.index.dim()).collect()
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&Vec<usize>, &DenseBlock)> {
        self.blocks.iter()
    }

    pub fn block(&self, key: &[usize]) -> Option<&DenseBlock> {
        self.blocks.get(key)
    }

    pub fn num_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Net charge flux of a block selection.
    pub fn flux(&self, key: &[usize]) -> i64 {
        key.iter()
            .zip(&self.legs)
            .map(|(&s, leg)| leg.dir.sign() * leg.index.charge(s))
            .sum()
    }

    pub fn allowed(&self, key: &[usize]) -> bool {
        key.len() == self.legs.len()
            && key.iter().zip(&self.legs).all(|(&s, l)| s < l.index.num_sectors())
            && self.flux(key) == self.total_charge
    }

    fn block_shape(&self, key: &[usize]) -> Vec<usize> {
        key.iter().zip(&self.legs).map(|(&s, l)| l.index.sector_dim(s)).collect()
    }

    pub fn insert_block(&mut self, key: Vec<usize>, block: DenseBlock) -> Result<()> {
        if !self.allowed(&key) {
            return Err(mismatch(format!("block {key:?} violates the charge rule")));
        }
        if block.shape != self.block_shape(&key) {
            return Err(Error::ShapeMismatch(format!(
                "block {key:?} has shape {:?}, expected {:?}",
                block.shape,
                self.block_shape(&key)
            )));
        }
        self.blocks.insert(key, block);
        Ok(())
    }

    pub fn is_zero(&self) -> bool {
        self.blocks.values().all(|b| b.data.iter().all(|z| z.is_zero()))
    }

    pub fn norm_sqr(&self) -> f64 {
        self.blocks.values().map(|b| b.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn scale(&mut self, c: C64) {
        for b in self.blocks.values_mut() {
            b.data.iter_mut().for_each(|z| *z *= c);
        }
    }

    pub fn scaled(mut self, c: C64) -> Self {
        self.scale(c);
        self
    }

    /// Complex conjugate with every direction flipped (the charge rule is
    /// preserved with the total charge negated).
    pub fn dagger(&self) -> Self {
        let legs = self
            .legs
            .iter()
            .map(|l| Leg::new(l.index.clone(), l.dir.flip()))
            .collect();
        let blocks = self
            .blocks
            .iter()
            .map(|(k, b)| {
                let data = b.data.iter().map(|z| z.conj()).collect();
                (k.clone(), DenseBlock { shape: b.shape.clone(), data })
            })
            .collect();
        Self { legs, total_charge: -self.total_charge, blocks }
    }

    /// Elementwise complex conjugate, legs unchanged.
    pub fn conj(&self) -> Self {
        let mut t = self.clone();
        for b in t.blocks.values_mut() {
            b.data.iter_mut().for_each(|z| *z = z.conj());
        }
        t
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let legs = perm.iter().map(|&p| self.legs[p].clone()).collect();
        let blocks = self
            .blocks
            .iter()
            .map(|(k, b)| (perm.iter().map(|&p| k[p]).collect(), b.permuted(perm)))
            .collect();
        Self { legs, total_charge: self.total_charge, blocks }
    }

    /// Multiplies along `leg` by `weights[element]`.
    pub fn scale_leg(&mut self, leg: usize, weights: &[f64]) {
        let index = &self.legs[leg].index;
        assert_eq!(weights.len(), index.dim(), "weight vector does not match leg");
        for (key, b) in self.blocks.iter_mut() {
            let off = index.offset(key[leg]);
            let dim = b.shape[leg];
            let inner: usize = b.shape[leg + 1..].iter().product();
            for (lin, z) in b.data.iter_mut().enumerate() {
                *z *= weights[off + (lin / inner) % dim];
            }
        }
    }

    /// Visits every stored element with its flattened per-leg positions.
    pub fn for_each_entry(&self, mut f: impl FnMut(&[usize], C64)) {
        let rank = self.legs.len();
        let mut pos = vec![0usize; rank];
        for (key, b) in self.blocks.iter() {
            let offs: Vec<usize> =
                key.iter().zip(&self.legs).map(|(&s, l)| l.index.offset(s)).collect();
            let mut idx = vec![0usize; rank];
            for &z in &b.data {
                if !z.is_zero() {
                    for k in 0..rank {
                        pos[k] = offs[k] + idx[k];
                    }
                    f(&pos, z);
                }
                for k in (0..rank).rev() {
                    idx[k] += 1;
                    if idx[k] < b.shape[k] {
                        break;
                    }
                    idx[k] = 0;
                }
            }
        }
    }

    /// Moves every element to a relabelled index (one map per leg). Used for
    /// coarsening gradings, direct-sum embeddings and basis permutations.
    pub fn regrade(&self, maps: &[LegMap], total_charge: i64) -> Result<Self> {
        assert_eq!(maps.len(), self.legs.len());
        let legs: Vec<Leg> = maps
            .iter()
            .zip(&self.legs)
            .map(|(m, l)| Leg::new(m.index.clone(), l.dir))
            .collect();
        let mut out = SymmetricTensor::zeros(legs, total_charge);
        let rank = self.legs.len();
        let mut key = vec![0usize; rank];
        let mut at = vec![0usize; rank];
        let mut err = None;
        self.for_each_entry(|pos, z| {
            for k in 0..rank {
                let (s, o) = maps[k].targets[pos[k]];
                key[k] = s;
                at[k] = o;
            }
            if let Err(e) = out.add_entry(&key, &at, z) {
                err.get_or_insert(e);
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    fn add_entry(&mut self, key: &[usize], at: &[usize], z: C64) -> Result<()> {
        if !self.blocks.contains_key(key) {
            if !self.allowed(key) {
                return Err(mismatch(format!("element in block {key:?} violates the charge rule")));
            }
            let shape = self.block_shape(key);
            self.blocks.insert(key.to_vec(), DenseBlock::zeros(shape));
        }
        let b = self.blocks.get_mut(key).unwrap();
        let mut lin = 0;
        for (k, &i) in at.iter().enumerate() {
            lin = lin * b.shape[k] + i;
        }
        b.data[lin] += z;
        Ok(())
    }

    /// Adds `other` (same legs and total charge) into `self`.
    pub fn add_assign(&mut self, other: &SymmetricTensor) -> Result<()> {
        if self.legs != other.legs || self.total_charge != other.total_charge {
            return Err(mismatch("tensors with different gradings cannot be added"));
        }
        for (k, b) in other.blocks.iter() {
            match self.blocks.get_mut(k) {
                Some(mine) => mine.data.iter_mut().zip(&b.data).for_each(|(x, y)| *x += y),
                None => {
                    self.blocks.insert(k.clone(), b.clone());
                }
            }
        }
        Ok(())
    }

    /// Dense row-major array over the flattened (sector-major) leg positions.
    pub fn to_dense(&self) -> DenseBlock {
        let shape = self.shape();
        let st = strides(&shape);
        let mut out = DenseBlock::zeros(shape);
        self.for_each_entry(|pos, z| {
            let lin: usize = pos.iter().zip(&st).map(|(p, s)| p * s).sum();
            out.data[lin] = z;
        });
        out
    }

    /// Builds a tensor from a dense array, rejecting any entry above `tol` in
    /// magnitude that the grading forbids.
    pub fn from_dense(legs: Vec<Leg>, total_charge: i64, dense: &DenseBlock, tol: f64) -> Result<Self> {
        let shape: Vec<usize> = legs.iter().map(|l| l.index.dim()).collect();
        if shape != dense.shape {
            return Err(Error::ShapeMismatch(format!(
                "dense shape {:?} does not match legs {:?}",
                dense.shape, shape
            )));
        }
        let mut out = SymmetricTensor::zeros(legs, total_charge);
        let rank = shape.len();
        let mut idx = vec![0usize; rank];
        let mut key = vec![0usize; rank];
        let mut at = vec![0usize; rank];
        for &z in &dense.data {
            for k in 0..rank {
                let (s, o) = out.legs[k].index.locate(idx[k]);
                key[k] = s;
                at[k] = o;
            }
            if out.flux(&key) == total_charge {
                if !z.is_zero() {
                    out.add_entry(&key, &at, z)?;
                }
            } else if z.norm() > tol {
                return Err(mismatch(format!("entry at {idx:?} breaks charge conservation")));
            }
            for k in (0..rank).rev() {
                idx[k] += 1;
                if idx[k] < shape[k] {
                    break;
                }
                idx[k] = 0;
            }
        }
        Ok(out)
    }
}

/// Incremental construction of a [`SymmetricTensor`] from elements addressed
/// by basis states.
pub struct TensorBuilder {
    bases: Vec<GradedBasis>,
    tensor: SymmetricTensor,
}

impl TensorBuilder {
    pub fn new(legs: Vec<(GradedBasis, Direction)>, total_charge: i64) -> Self {
        let tensor = SymmetricTensor::zeros(
            legs.iter().map(|(b, d)| Leg::new(b.index().clone(), *d)).collect(),
            total_charge,
        );
        Self { bases: legs.into_iter().map(|(b, _)| b).collect(), tensor }
    }

    pub fn add(&mut self, states: &[usize], z: C64) -> Result<()> {
        if z.is_zero() {
            return Ok(());
        }
        let (key, at): (Vec<usize>, Vec<usize>) =
            states.iter().zip(&self.bases).map(|(&p, b)| b.position(p)).unzip();
        self.tensor.add_entry(&key, &at, z)
    }

    pub fn finish(self) -> SymmetricTensor {
        self.tensor
    }
}

unsafe fn zgemm_rowmajor(m: usize, k: usize, n: usize, a: &[C64], b: &[C64], c: &mut [C64]) {
    // C64 is repr(C) { re, im }, the layout matrixmultiply expects.
    matrixmultiply::zgemm(
        matrixmultiply::CGemmOption::Standard,
        matrixmultiply::CGemmOption::Standard,
        m,
        k,
        n,
        [1.0, 0.0],
        a.as_ptr() as *const [f64; 2],
        k as isize,
        1,
        b.as_ptr() as *const [f64; 2],
        n as isize,
        1,
        [1.0, 0.0],
        c.as_mut_ptr() as *mut [f64; 2],
        n as isize,
        1,
    );
}

/// Contracts `a` and `b` over `pairs` of `(leg of a, leg of b)`.
///
/// The result carries the free legs of `a` followed by the free legs of `b`,
/// each in their original order.
pub fn contract(a: &SymmetricTensor, b: &SymmetricTensor, pairs: &[(usize, usize)]) -> Result<SymmetricTensor> {
    for &(i, j) in pairs {
        let (la, lb) = (&a.legs[i], &b.legs[j]);
        if la.index != lb.index || la.dir == lb.dir {
            return Err(mismatch(format!("cannot pair leg {i} with leg {j}")));
        }
    }
    let paired_a: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let paired_b: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let free_a: Vec<usize> = (0..a.rank()).filter(|k| !paired_a.contains(k)).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|k| !paired_b.contains(k)).collect();
    let legs: Vec<Leg> = free_a
        .iter()
        .map(|&k| a.legs[k].clone())
        .chain(free_b.iter().map(|&k| b.legs[k].clone()))
        .collect();
    let mut out = SymmetricTensor::zeros(legs, a.total_charge + b.total_charge);

    let perm_a: Vec<usize> = free_a.iter().chain(&paired_a).copied().collect();
    let perm_b: Vec<usize> = paired_b.iter().chain(&free_b).copied().collect();
    let mut by_pair: BTreeMap<Vec<usize>, Vec<(Vec<usize>, DenseBlock)>> = BTreeMap::new();
    for (key, blk) in b.blocks.iter() {
        let pk: Vec<usize> = paired_b.iter().map(|&k| key[k]).collect();
        let fk: Vec<usize> = free_b.iter().map(|&k| key[k]).collect();
        by_pair.entry(pk).or_default().push((fk, blk.permuted(&perm_b)));
    }
    for (key, blk) in a.blocks.iter() {
        let pk: Vec<usize> = paired_a.iter().map(|&k| key[k]).collect();
        let Some(partners) = by_pair.get(&pk) else { continue };
        let ap = blk.permuted(&perm_a);
        let m: usize = free_a.iter().map(|&k| blk.shape[k]).product();
        let inner: usize = paired_a.iter().map(|&k| blk.shape[k]).product();
        let fa: Vec<usize> = free_a.iter().map(|&k| key[k]).collect();
        for (fb, bp) in partners {
            let n: usize = bp.data.len() / inner.max(1);
            let mut rkey = fa.clone();
            rkey.extend_from_slice(fb);
            let shape = out.block_shape(&rkey);
            let target = out.blocks.entry(rkey).or_insert_with(|| DenseBlock::zeros(shape));
            if m * n * inner == 0 {
                continue;
            }
            unsafe { zgemm_rowmajor(m, inner, n, &ap.data, &bp.data, &mut target.data) };
        }
    }
    Ok(out)
}

/// Bond-dimension cap and singular-value floor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruncationPolicy {
    pub chi_max: usize,
    pub singular_value_floor: f64,
}

impl TruncationPolicy {
    pub fn new(chi_max: usize, singular_value_floor: f64) -> Result<Self> {
        if chi_max == 0 {
            return Err(Error::InvalidArgument("chi_max must be at least 1".into()));
        }
        if !(singular_value_floor >= 0.0) {
            return Err(Error::InvalidArgument("singular value floor must be nonnegative".into()));
        }
        Ok(Self { chi_max, singular_value_floor })
    }

    /// No cap and no floor: only exact zeros are dropped.
    pub fn exact() -> Self {
        Self { chi_max: usize::MAX, singular_value_floor: 0.0 }
    }
}

/// Charge-labelled singular values, stored sector by sector in the element
/// order of `index`; values are descending within each sector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    index: ChargeIndex,
    values: Vec<f64>,
}

impl Spectrum {
    pub fn new(index: ChargeIndex, values: Vec<f64>) -> Result<Self> {
        if index.dim() != values.len() {
            return Err(Error::ShapeMismatch("spectrum length does not match its index".into()));
        }
        Ok(Self { index, values })
    }

    pub fn trivial(charge: i64) -> Self {
        Self { index: ChargeIndex::trivial(charge), values: vec![1.0] }
    }

    pub fn index(&self) -> &ChargeIndex {
        &self.index
    }

    /// Values in element order of the index.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sector_values(&self, sector: usize) -> &[f64] {
        let off = self.index.offset(sector);
        &self.values[off..off + self.index.sector_dim(sector)]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `(value, charge)` pairs in global descending order, ties broken by
    /// lower charge first.
    pub fn sorted(&self) -> Vec<(f64, i64)> {
        let charges = self.index.element_charges();
        let mut v: Vec<(f64, i64, usize)> =
            self.values.iter().zip(&charges).enumerate().map(|(e, (&x, &q))| (x, q, e)).collect();
        v.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        v.into_iter().map(|(x, q, _)| (x, q)).collect()
    }

    pub fn weight(&self) -> f64 {
        self.values.iter().map(|x| x * x).sum()
    }

    pub fn normalized(&self) -> Self {
        let n = self.weight().sqrt();
        Self { index: self.index.clone(), values: self.values.iter().map(|x| x / n).collect() }
    }

    /// `-Σ λ² log₂ λ²` over the nonzero values.
    pub fn entropy(&self) -> f64 {
        self.values
            .iter()
            .map(|x| x * x)
            .filter(|&p| p > 0.0)
            .map(|p| -p * p.log2())
            .sum()
    }

    /// Regrades the labels; within a merged sector values stay descending.
    pub fn relabel(&self, charge_map: impl Fn(i64) -> i64) -> (Spectrum, LegMap) {
        let key: Vec<f64> = self.values.iter().map(|x| -x).collect();
        let map = LegMap::relabel(&self.index, charge_map, Some(&key));
        let mut values = vec![0.0; self.values.len()];
        for (e, &(s, o)) in map.targets.iter().enumerate() {
            values[map.index.offset(s) + o] = self.values[e];
        }
        (Spectrum { index: map.index.clone(), values }, map)
    }
}

/// Result of [`block_svd`]: `tensor ≈ left · diag(values) · right`.
#[derive(Clone, Debug)]
pub struct BlockSvd {
    /// Row legs followed by the new outgoing bond leg; total charge 0.
    pub left: SymmetricTensor,
    pub values: Spectrum,
    /// New incoming bond leg followed by the column legs; carries the
    /// input's total charge.
    pub right: SymmetricTensor,
    pub discarded_norm: f64,
    pub total_norm: f64,
}

struct GroupSvd {
    charge: i64,
    rows: Vec<(Vec<usize>, usize, usize)>,
    cols: Vec<(Vec<usize>, usize, usize)>,
    u: DMatrix<C64>,
    s: Vec<f64>,
    vt: DMatrix<C64>,
}

/// Thin SVD `m = u · diag(s) · vt`.
fn dense_svd(m: &DMatrix<C64>) -> (DMatrix<C64>, Vec<f64>, DMatrix<C64>) {
    let (nr, nc) = m.shape();
    let k = nr.min(nc);
    let f = faer::Mat::<C64>::from_fn(nr, nc, |i, j| m[(i, j)]);
    match f.thin_svd() {
        Ok(svd) => {
            let (fu, fs, fv) = (svd.U(), svd.S(), svd.V());
            let u = DMatrix::from_fn(nr, k, |i, j| fu[(i, j)]);
            let s = (0..k).map(|i| fs[i].re).collect();
            let vt = DMatrix::from_fn(k, nc, |i, j| fv[(j, i)].conj());
            (u, s, vt)
        }
        Err(_) => {
            let svd = m.clone().svd(true, true);
            (svd.u.unwrap(), svd.singular_values.iter().copied().collect(), svd.v_t.unwrap())
        }
    }
}

/// Blockwise SVD of `tensor` with `row_legs` as rows and the remaining legs
/// (in order) as columns.
///
/// Each charge block is decomposed independently; the kept values are the
/// globally largest `chi_max` values at or above the floor. Exact ties are
/// resolved in favour of the lower bond charge, then the block-internal order.
pub fn block_svd(tensor: &SymmetricTensor, row_legs: &[usize], policy: &TruncationPolicy) -> Result<BlockSvd> {
    let rank = tensor.rank();
    if row_legs.iter().any(|&k| k >= rank) {
        return Err(Error::InvalidArgument("row leg out of range".into()));
    }
    let col_legs: Vec<usize> = (0..rank).filter(|k| !row_legs.contains(k)).collect();
    if col_legs.len() + row_legs.len() != rank {
        return Err(Error::InvalidArgument("row legs must be distinct".into()));
    }
    for (key, _) in tensor.blocks() {
        if !tensor.allowed(key) {
            return Err(mismatch("tensor holds a block outside its grading"));
        }
    }
    let total_norm = tensor.norm();
    if total_norm == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let perm: Vec<usize> = row_legs.iter().chain(&col_legs).copied().collect();
    let row_flux = |key: &[usize]| -> i64 {
        row_legs
            .iter()
            .map(|&k| tensor.legs[k].dir.sign() * tensor.legs[k].index.charge(key[k]))
            .sum()
    };
    let mut groups: BTreeMap<i64, Vec<&Vec<usize>>> = BTreeMap::new();
    for (key, _) in tensor.blocks() {
        groups.entry(row_flux(key)).or_default().push(key);
    }

    let decomposed: Vec<GroupSvd> = groups
        .into_par_iter()
        .map(|(flux, keys)| {
            let mut row_set: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
            let mut col_set: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
            for key in &keys {
                let rk: Vec<usize> = row_legs.iter().map(|&k| key[k]).collect();
                let ck: Vec<usize> = col_legs.iter().map(|&k| key[k]).collect();
                let rd = row_legs.iter().map(|&k| tensor.legs[k].index.sector_dim(key[k])).product();
                let cd = col_legs.iter().map(|&k| tensor.legs[k].index.sector_dim(key[k])).product();
                row_set.insert(rk, rd);
                col_set.insert(ck, cd);
            }
            let lay = |set: BTreeMap<Vec<usize>, usize>| {
                let mut off = 0;
                set.into_iter()
                    .map(|(k, d)| {
                        let r = (k, off, d);
                        off += d;
                        r
                    })
                    .collect::<Vec<_>>()
            };
            let rows = lay(row_set);
            let cols = lay(col_set);
            let nr: usize = rows.iter().map(|r| r.2).sum();
            let nc: usize = cols.iter().map(|c| c.2).sum();
            let mut mat = DMatrix::<C64>::zeros(nr, nc);
            for key in &keys {
                let rk: Vec<usize> = row_legs.iter().map(|&k| key[k]).collect();
                let ck: Vec<usize> = col_legs.iter().map(|&k| key[k]).collect();
                let r = &rows[rows.binary_search_by(|x| x.0.cmp(&rk)).unwrap()];
                let c = &cols[cols.binary_search_by(|x| x.0.cmp(&ck)).unwrap()];
                let blk = tensor.blocks[*key].permuted(&perm);
                for i in 0..r.2 {
                    for j in 0..c.2 {
                        mat[(r.1 + i, c.1 + j)] = blk.data[i * c.2 + j];
                    }
                }
            }
            let (u, values, vt) = dense_svd(&mat);
            let mut order: Vec<usize> = (0..values.len()).collect();
            order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
            let s: Vec<f64> = order.iter().map(|&i| values[i]).collect();
            let u = u.select_columns(order.iter());
            let vt = vt.select_rows(order.iter());
            GroupSvd { charge: -flux, rows, cols, u, s, vt }
        })
        .collect();

    let mut candidates: Vec<(f64, i64, usize, usize)> = Vec::new();
    for (g, grp) in decomposed.iter().enumerate() {
        for (i, &x) in grp.s.iter().enumerate() {
            candidates.push((x, grp.charge, i, g));
        }
    }
    candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut kept = vec![0usize; decomposed.len()];
    let mut discarded_sqr = 0.0;
    let mut n_kept = 0usize;
    for &(x, _, _, g) in &candidates {
        if n_kept < policy.chi_max && x > 0.0 && x >= policy.singular_value_floor {
            kept[g] += 1;
            n_kept += 1;
        } else {
            discarded_sqr += x * x;
        }
    }
    if n_kept == 0 {
        return Err(Error::ZeroNorm);
    }

    let mut sectors = Vec::new();
    let mut values = Vec::new();
    for (g, grp) in decomposed.iter().enumerate() {
        if kept[g] > 0 {
            sectors.push((grp.charge, kept[g]));
            values.extend_from_slice(&grp.s[..kept[g]]);
        }
    }
    // groups are keyed by ascending flux, so bond charges come out descending
    let mut order: Vec<usize> = (0..sectors.len()).collect();
    order.sort_by_key(|&i| sectors[i].0);
    let mut sorted_values = Vec::with_capacity(values.len());
    let offs: Vec<usize> = sectors
        .iter()
        .scan(0, |acc, s| {
            let o = *acc;
            *acc += s.1;
            Some(o)
        })
        .collect();
    for &i in &order {
        sorted_values.extend_from_slice(&values[offs[i]..offs[i] + sectors[i].1]);
    }
    let bond = ChargeIndex::new(order.iter().map(|&i| sectors[i]).collect())?;

    let mut left_legs: Vec<Leg> = row_legs.iter().map(|&k| tensor.legs[k].clone()).collect();
    left_legs.push(Leg::new(bond.clone(), Direction::Out));
    let mut right_legs = vec![Leg::new(bond.clone(), Direction::In)];
    right_legs.extend(col_legs.iter().map(|&k| tensor.legs[k].clone()));
    let mut left = SymmetricTensor::zeros(left_legs, 0);
    let mut right = SymmetricTensor::zeros(right_legs, tensor.total_charge);

    for (g, grp) in decomposed.iter().enumerate() {
        let k = kept[g];
        if k == 0 {
            continue;
        }
        let bs = bond.find(grp.charge).unwrap();
        for (rk, off, dim) in &grp.rows {
            let mut key = rk.clone();
            key.push(bs);
            let mut shape: Vec<usize> =
                row_legs.iter().zip(rk).map(|(&l, &s)| tensor.legs[l].index.sector_dim(s)).collect();
            shape.push(k);
            let mut data = Vec::with_capacity(dim * k);
            for i in 0..*dim {
                for j in 0..k {
                    data.push(grp.u[(off + i, j)]);
                }
            }
            left.blocks.insert(key, DenseBlock { shape, data });
        }
        for (ck, off, dim) in &grp.cols {
            let mut key = vec![bs];
            key.extend_from_slice(ck);
            let mut shape = vec![k];
            shape.extend(col_legs.iter().zip(ck).map(|(&l, &s)| tensor.legs[l].index.sector_dim(s)));
            let mut data = Vec::with_capacity(dim * k);
            for i in 0..k {
                for j in 0..*dim {
                    data.push(grp.vt[(i, off + j)]);
                }
            }
            right.blocks.insert(key, DenseBlock { shape, data });
        }
    }

    Ok(BlockSvd {
        left,
        values: Spectrum { index: bond, values: sorted_values },
        right,
        discarded_norm: discarded_sqr.sqrt(),
        total_norm,
    })
}
