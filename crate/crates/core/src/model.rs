//! Parameter matrix, item sets, sequences and datasets.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use crate::math::exp;
use crate::{Error, Result};

/// Largest supported ground set.
pub const MAX_ITEMS: usize = 512;
const WORDS: usize = MAX_ITEMS / 64;

/// The `n x n` log-rate matrix of the model, stored row-major together with
/// its elementwise exponential.
///
/// Entry `(i, j)` with `i != j` multiplies the rate of adding `j` by
/// `exp(theta[i][j])` once `i` is present; `(j, j)` is the baseline log-rate
/// of `j`. An optional block partition declares which items interact.
#[derive(Debug, Clone)]
pub struct ParamMatrix {
    n: usize,
    theta: Vec<f64>,
    weights: Vec<f64>,
    item_names: Option<Vec<String>>,
    blocks: Option<Vec<Range<usize>>>,
}

impl PartialEq for ParamMatrix {
    fn eq(&self, other: &Self) -> bool {
        self.n == other.n
            && self.theta == other.theta
            && self.item_names == other.item_names
            && self.blocks == other.blocks
    }
}

impl ParamMatrix {
    /// Builds a matrix from row-major entries.
    pub fn new(n: usize, theta: Vec<f64>) -> Result<Self> {
        if n == 0 || n > MAX_ITEMS {
            return Err(Error::ItemCount { n, max: MAX_ITEMS });
        }
        if theta.len() != n * n {
            return Err(Error::Shape(format!(
                "expected {} entries for n = {n}, got {}",
                n * n,
                theta.len()
            )));
        }
        if let Some(pos) = theta.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: pos / n,
                col: pos % n,
            });
        }
        let weights = theta.iter().map(|&v| exp(v)).collect();
        Ok(Self {
            n,
            theta,
            weights,
            item_names: None,
            blocks: None,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let n = rows.len();
        let mut theta = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != n {
                return Err(Error::Shape(format!(
                    "row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            theta.extend_from_slice(row);
        }
        Self::new(n, theta)
    }

    pub fn zeros(n: usize) -> Result<Self> {
        Self::new(n, vec![0.0; n * n])
    }

    /// Independent items with the given baseline log-rates.
    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let n = diag.len();
        let mut theta = vec![0.0; n * n];
        for (j, &d) in diag.iter().enumerate() {
            theta[j * n + j] = d;
        }
        Self::new(n, theta)
    }

    pub fn with_item_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n {
            return Err(Error::Shape(format!(
                "{} item names for {} items",
                names.len(),
                self.n
            )));
        }
        self.item_names = Some(names);
        Ok(self)
    }

    /// Declares a block partition. Blocks must be contiguous, non-empty, in
    /// order and cover `0..n`; entries coupling different blocks must be zero.
    pub fn with_blocks(mut self, blocks: Vec<Range<usize>>) -> Result<Self> {
        let mut next = 0;
        for b in &blocks {
            if b.start != next || b.end <= b.start {
                return Err(Error::InvalidArgument(format!(
                    "blocks must tile 0..{} in order; got {:?}",
                    self.n, b
                )));
            }
            next = b.end;
        }
        if next != self.n {
            return Err(Error::InvalidArgument(format!(
                "blocks cover 0..{next}, expected 0..{}",
                self.n
            )));
        }
        let block_of = block_index(&blocks, self.n);
        for i in 0..self.n {
            for j in 0..self.n {
                if block_of[i] != block_of[j] && self.get(i, j) != 0.0 {
                    return Err(Error::InvalidArgument(format!(
                        "entry ({i}, {j}) couples two declared blocks but is nonzero"
                    )));
                }
            }
        }
        self.blocks = Some(blocks);
        Ok(self)
    }

    pub fn without_blocks(mut self) -> Self {
        self.blocks = None;
        self
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.theta[i * self.n + j]
    }

    /// `exp(theta[i][j])`.
    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[i * self.n + j]
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.theta[i * self.n..(i + 1) * self.n]
    }

    #[inline]
    pub fn weight_row(&self, i: usize) -> &[f64] {
        &self.weights[i * self.n..(i + 1) * self.n]
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn into_theta(self) -> Vec<f64> {
        self.theta
    }

    pub fn item_names(&self) -> Option<&[String]> {
        self.item_names.as_deref()
    }

    pub fn blocks(&self) -> Option<&[Range<usize>]> {
        self.blocks.as_deref()
    }

    pub fn diag(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.get(j, j)).collect()
    }

    /// All off-diagonal entries are zero.
    pub fn is_diagonal(&self) -> bool {
        (0..self.n).all(|i| (0..self.n).all(|j| i == j || self.get(i, j) == 0.0))
    }

    /// `sum_{i != j} |theta_ij|`.
    pub fn off_diagonal_l1(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.n {
            for j in 0..self.n {
                if i != j {
                    acc += self.get(i, j).abs();
                }
            }
        }
        acc
    }

    /// Restriction to the listed items, in the listed order.
    pub fn submatrix(&self, items: &[usize]) -> Result<Self> {
        let k = items.len();
        let mut theta = Vec::with_capacity(k * k);
        for &a in items {
            if a >= self.n {
                return Err(Error::ItemOutOfRange { item: a, n: self.n });
            }
            for &b in items {
                theta.push(self.get(a, b));
            }
        }
        let mut sub = Self::new(k, theta)?;
        if let Some(names) = &self.item_names {
            sub.item_names = Some(items.iter().map(|&i| names[i].clone()).collect());
        }
        Ok(sub)
    }

    /// Interaction groups used for factorized time-conditional probabilities:
    /// each declared block, split into singletons when it has no interactions.
    /// Without declared blocks the whole ground set is one group.
    pub fn interaction_groups(&self) -> Vec<Vec<usize>> {
        let Some(blocks) = &self.blocks else {
            return vec![(0..self.n).collect()];
        };
        let mut groups = Vec::new();
        for b in blocks {
            let diagonal = b
                .clone()
                .all(|i| b.clone().all(|j| i == j || self.get(i, j) == 0.0));
            if diagonal {
                groups.extend(b.clone().map(|i| vec![i]));
            } else {
                groups.push(b.clone().collect());
            }
        }
        groups
    }
}

fn block_index(blocks: &[Range<usize>], n: usize) -> Vec<usize> {
    let mut idx = vec![0; n];
    for (bi, b) in blocks.iter().enumerate() {
        for i in b.clone() {
            idx[i] = bi;
        }
    }
    idx
}

/// Places the blocks on the diagonal of a larger matrix. Block `k` occupies
/// items `offset_k..offset_k + n_k` where `offset_k` is the total size of the
/// preceding blocks. The result records this block partition.
pub fn make_block_diagonal(blocks: &[ParamMatrix]) -> Result<ParamMatrix> {
    if blocks.is_empty() {
        return Err(Error::InvalidArgument("at least one block is required".into()));
    }
    let n: usize = blocks.iter().map(|b| b.n()).sum();
    if n > MAX_ITEMS {
        return Err(Error::ItemCount { n, max: MAX_ITEMS });
    }
    let mut theta = vec![0.0; n * n];
    let mut ranges = Vec::with_capacity(blocks.len());
    let mut offset = 0;
    for b in blocks {
        for i in 0..b.n() {
            for j in 0..b.n() {
                theta[(offset + i) * n + offset + j] = b.get(i, j);
            }
        }
        ranges.push(offset..offset + b.n());
        offset += b.n();
    }
    let mut out = ParamMatrix::new(n, theta)?;
    if blocks.iter().all(|b| b.item_names().is_some()) {
        let names = blocks
            .iter()
            .flat_map(|b| b.item_names().unwrap().iter().cloned())
            .collect();
        out = out.with_item_names(names)?;
    }
    out.with_blocks(ranges)
}

/// A subset of the ground set as a fixed-capacity bitset.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ItemSet {
    bits: [u64; WORDS],
}

impl core::fmt::Debug for ItemSet {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl Default for ItemSet {
    fn default() -> Self {
        Self::empty()
    }
}

impl ItemSet {
    pub const fn empty() -> Self {
        Self { bits: [0; WORDS] }
    }

    /// `{0, .., n-1}`.
    pub fn full(n: usize) -> Self {
        let mut s = Self::empty();
        for i in 0..n.min(MAX_ITEMS) {
            s.insert(i);
        }
        s
    }

    pub fn from_items(items: &[usize]) -> Result<Self> {
        let mut s = Self::empty();
        for &i in items {
            if i >= MAX_ITEMS {
                return Err(Error::ItemOutOfRange { item: i, n: MAX_ITEMS });
            }
            s.insert(i);
        }
        Ok(s)
    }

    #[inline]
    pub fn insert(&mut self, i: usize) {
        self.bits[i >> 6] |= 1u64 << (i & 63);
    }

    #[inline]
    pub fn remove(&mut self, i: usize) {
        self.bits[i >> 6] &= !(1u64 << (i & 63));
    }

    #[inline]
    pub fn contains(&self, i: usize) -> bool {
        i < MAX_ITEMS && self.bits[i >> 6] & (1u64 << (i & 63)) != 0
    }

    pub fn len(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    /// Largest item plus one, or 0 for the empty set.
    pub fn span(&self) -> usize {
        for (wi, &w) in self.bits.iter().enumerate().rev() {
            if w != 0 {
                return wi * 64 + 64 - w.leading_zeros() as usize;
            }
        }
        0
    }

    pub fn union(&self, other: &Self) -> Self {
        let mut out = *self;
        for (a, b) in out.bits.iter_mut().zip(other.bits.iter()) {
            *a |= b;
        }
        out
    }

    pub fn intersection(&self, other: &Self) -> Self {
        let mut out = *self;
        for (a, b) in out.bits.iter_mut().zip(other.bits.iter()) {
            *a &= b;
        }
        out
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.bits
            .iter()
            .zip(other.bits.iter())
            .all(|(a, b)| a & !b == 0)
    }

    /// Items in increasing order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits.iter().enumerate().flat_map(|(wi, &w)| {
            let mut word = w;
            core::iter::from_fn(move || {
                if word == 0 {
                    None
                } else {
                    let tz = word.trailing_zeros() as usize;
                    word &= word - 1;
                    Some(wi * 64 + tz)
                }
            })
        })
    }

    pub fn to_vec(&self) -> Vec<usize> {
        self.iter().collect()
    }
}

/// An ordered list of distinct items.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Sequence {
    items: Vec<usize>,
}

impl Sequence {
    pub fn new(items: Vec<usize>) -> Result<Self> {
        let mut seen = ItemSet::empty();
        for &i in &items {
            if i >= MAX_ITEMS {
                return Err(Error::ItemOutOfRange { item: i, n: MAX_ITEMS });
            }
            if seen.contains(i) {
                return Err(Error::DuplicateItem { item: i });
            }
            seen.insert(i);
        }
        Ok(Self { items })
    }

    pub fn empty() -> Self {
        Self { items: Vec::new() }
    }

    /// Checks every item is below `n`.
    pub fn check_range(&self, n: usize) -> Result<()> {
        match self.items.iter().find(|&&i| i >= n) {
            Some(&item) => Err(Error::ItemOutOfRange { item, n }),
            None => Ok(()),
        }
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// The first `i` items.
    pub fn prefix(&self, i: usize) -> &[usize] {
        &self.items[..i]
    }

    pub fn to_set(&self) -> ItemSet {
        let mut s = ItemSet::empty();
        for &i in &self.items {
            s.insert(i);
        }
        s
    }

    pub(crate) fn from_vec_unchecked(items: Vec<usize>) -> Self {
        Self { items }
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.items
    }
}

/// Observed sets, optionally with their true observation times.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    samples: Vec<ItemSet>,
    times: Option<Vec<f64>>,
    item_names: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(n: usize, samples: Vec<ItemSet>, times: Option<Vec<f64>>) -> Result<Self> {
        if n == 0 || n > MAX_ITEMS {
            return Err(Error::ItemCount { n, max: MAX_ITEMS });
        }
        for s in &samples {
            if s.span() > n {
                return Err(Error::ItemOutOfRange {
                    item: s.span() - 1,
                    n,
                });
            }
        }
        if let Some(t) = &times {
            if t.len() != samples.len() {
                return Err(Error::Shape(format!(
                    "{} times for {} samples",
                    t.len(),
                    samples.len()
                )));
            }
            if t.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
                return Err(Error::InvalidArgument(
                    "observation times must be finite and nonnegative".into(),
                ));
            }
        }
        Ok(Self {
            n,
            samples,
            times,
            item_names: None,
        })
    }

    pub fn with_item_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.n {
            return Err(Error::Shape(format!(
                "{} item names for {} items",
                names.len(),
                self.n
            )));
        }
        self.item_names = Some(names);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[ItemSet] {
        &self.samples
    }

    pub fn times(&self) -> Option<&[f64]> {
        self.times.as_deref()
    }

    pub fn item_names(&self) -> Option<&[String]> {
        self.item_names.as_deref()
    }

    /// Fraction of samples containing each item.
    pub fn item_frequencies(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.n];
        for s in &self.samples {
            for i in s.iter() {
                counts[i] += 1;
            }
        }
        let total = self.samples.len().max(1) as f64;
        counts.into_iter().map(|c| c as f64 / total).collect()
    }

    /// Keeps only the listed items, renumbered in the listed order.
    pub fn project(&self, items: &[usize]) -> Result<Self> {
        for &i in items {
            if i >= self.n {
                return Err(Error::ItemOutOfRange { item: i, n: self.n });
            }
        }
        let samples = self
            .samples
            .iter()
            .map(|s| {
                let mut out = ItemSet::empty();
                for (new, &old) in items.iter().enumerate() {
                    if s.contains(old) {
                        out.insert(new);
                    }
                }
                out
            })
            .collect();
        let mut d = Self::new(items.len(), samples, self.times.clone())?;
        if let Some(names) = &self.item_names {
            d.item_names = Some(items.iter().map(|&i| names[i].clone()).collect());
        }
        Ok(d)
    }
}

/// Rate of adding `j` to `s`: `exp(theta_jj + sum_{i in s} theta_ij)`.
pub fn transition_rate(theta: &ParamMatrix, s: &ItemSet, j: usize) -> Result<f64> {
    let n = theta.n();
    if j >= n {
        return Err(Error::ItemOutOfRange { item: j, n });
    }
    if s.contains(j) {
        return Err(Error::ItemInSet { item: j });
    }
    if s.span() > n {
        return Err(Error::ItemOutOfRange { item: s.span() - 1, n });
    }
    let mut log_rate = theta.get(j, j);
    for i in s.iter() {
        log_rate += theta.get(i, j);
    }
    Ok(exp(log_rate))
}

/// Total rate of leaving `s`; zero when `s` is the whole ground set.
pub fn exit_rate(theta: &ParamMatrix, s: &ItemSet) -> f64 {
    let n = theta.n();
    let members = s.to_vec();
    let mut total = 0.0;
    for j in 0..n {
        if s.contains(j) {
            continue;
        }
        let mut log_rate = theta.get(j, j);
        for &i in &members {
            log_rate += theta.get(i, j);
        }
        total += exp(log_rate);
    }
    total
}

/// Log-rates `theta_jj + sum_{i in S} theta_ij` for every item, kept up to
/// date while items are added one at a time.
#[derive(Debug, Clone)]
pub struct RateState<'a> {
    theta: &'a ParamMatrix,
    set: ItemSet,
    log_rates: Vec<f64>,
}

impl<'a> RateState<'a> {
    pub fn new(theta: &'a ParamMatrix) -> Self {
        let log_rates = theta.diag();
        Self {
            theta,
            set: ItemSet::empty(),
            log_rates,
        }
    }

    pub fn reset(&mut self) {
        self.set = ItemSet::empty();
        for j in 0..self.theta.n() {
            self.log_rates[j] = self.theta.get(j, j);
        }
    }

    pub fn copy_from(&mut self, other: &RateState<'a>) {
        self.set = other.set;
        self.log_rates.copy_from_slice(&other.log_rates);
    }

    pub fn set(&self) -> &ItemSet {
        &self.set
    }

    #[inline]
    pub fn log_rate(&self, j: usize) -> f64 {
        self.log_rates[j]
    }

    pub fn log_rates(&self) -> &[f64] {
        &self.log_rates
    }

    pub fn add(&mut self, item: usize) {
        debug_assert!(!self.set.contains(item));
        self.set.insert(item);
        for (r, t) in self.log_rates.iter_mut().zip(self.theta.row(item)) {
            *r += t;
        }
    }

    /// Writes `q_{S, S+j}` into `out[j]` (zero for `j` in `S`) and returns
    /// the exit rate.
    pub fn rates_into(&self, out: &mut [f64]) -> f64 {
        let mut total = 0.0;
        for (j, o) in out.iter_mut().enumerate() {
            if self.set.contains(j) {
                *o = 0.0;
            } else {
                let q = exp(self.log_rates[j]);
                *o = q;
                total += q;
            }
        }
        total
    }

    pub fn exit_rate(&self) -> f64 {
        let mut total = 0.0;
        for (j, &r) in self.log_rates.iter().enumerate() {
            if !self.set.contains(j) {
                total += exp(r);
            }
        }
        total
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_item() -> ParamMatrix {
        ParamMatrix::from_rows(&[[0.0, 4.0], [0.0, -4.0]]).unwrap()
    }

    #[test]
    fn transition_rates_of_ordering_example() {
        let t = two_item();
        let empty = ItemSet::empty();
        assert_eq!(transition_rate(&t, &empty, 0).unwrap(), 1.0);
        let one = ItemSet::from_items(&[0]).unwrap();
        assert_eq!(transition_rate(&t, &one, 1).unwrap(), 1.0);
        let q = transition_rate(&t, &empty, 1).unwrap();
        assert!((q - 0.018_315_638_888_734_18).abs() < 1e-15);
    }

    #[test]
    fn transition_rate_rejects_member_and_range() {
        let t = two_item();
        let one = ItemSet::from_items(&[0]).unwrap();
        assert_eq!(
            transition_rate(&t, &one, 0),
            Err(Error::ItemInSet { item: 0 })
        );
        assert!(matches!(
            transition_rate(&t, &one, 2),
            Err(Error::ItemOutOfRange { .. })
        ));
    }

    #[test]
    fn exit_rates() {
        let t = two_item();
        let q = exit_rate(&t, &ItemSet::empty());
        assert!((q - 1.018_315_638_888_734_2).abs() < 1e-15);
        assert_eq!(exit_rate(&t, &ItemSet::full(2)), 0.0);
        let z = ParamMatrix::zeros(5).unwrap();
        assert_eq!(exit_rate(&z, &ItemSet::empty()), 5.0);
    }

    #[test]
    fn block_diagonal_layout() {
        let a = ParamMatrix::from_rows(&[[0.0]]).unwrap();
        let b = ParamMatrix::from_rows(&[[-2.0]]).unwrap();
        let m = make_block_diagonal(&[a, b]).unwrap();
        assert_eq!(m.theta(), &[0.0, 0.0, 0.0, -2.0]);
        assert_eq!(m.blocks().unwrap(), &[0..1, 1..2]);

        let plus = ParamMatrix::diagonal(&[-2.0; 3]).unwrap();
        let full = make_block_diagonal(&[two_item(), plus]).unwrap();
        assert_eq!(full.n(), 5);
        for i in 0..5 {
            for j in 0..5 {
                if (i < 2) != (j < 2) {
                    assert_eq!(full.get(i, j), 0.0);
                }
            }
        }
        assert_eq!(full.get(0, 1), 4.0);
        assert_eq!(full.get(3, 3), -2.0);
        assert_eq!(full.interaction_groups(), vec![vec![0, 1], vec![2], vec![3], vec![4]]);

        let c = ParamMatrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        let four = make_block_diagonal(&[c.clone(), c]).unwrap();
        for (i, j) in [(0, 2), (0, 3), (1, 2), (1, 3), (2, 0), (3, 0), (2, 1), (3, 1)] {
            assert_eq!(four.get(i, j), 0.0);
        }
    }

    #[test]
    fn blocks_must_not_couple() {
        let t = two_item();
        assert!(t.clone().with_blocks(vec![0..1, 1..2]).is_err());
        assert!(t.with_blocks(core::iter::once(0..2).collect()).is_ok());
    }

    #[test]
    fn rejects_non_finite_and_bad_shapes() {
        assert!(ParamMatrix::new(2, vec![0.0, f64::NAN, 0.0, 0.0]).is_err());
        assert!(ParamMatrix::new(2, vec![0.0; 3]).is_err());
        assert!(ParamMatrix::new(0, vec![]).is_err());
        assert!(Sequence::new(vec![1, 2, 1]).is_err());
        assert!(Dataset::new(2, vec![ItemSet::from_items(&[2]).unwrap()], None).is_err());
    }

    #[test]
    fn item_set_basics() {
        let s = ItemSet::from_items(&[3, 70, 511]).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.to_vec(), vec![3, 70, 511]);
        assert_eq!(s.span(), 512);
        assert!(ItemSet::from_items(&[512]).is_err());
        let t = ItemSet::from_items(&[3]).unwrap();
        assert!(t.is_subset(&s));
        assert_eq!(s.intersection(&t), t);
    }

    #[test]
    fn rate_state_tracks_exit_rate() {
        let t = ParamMatrix::from_rows(&[[0.1, 0.5, -0.3], [0.2, -1.0, 0.7], [-0.4, 0.3, 0.2]]).unwrap();
        let mut st = RateState::new(&t);
        st.add(1);
        st.add(2);
        let s = ItemSet::from_items(&[1, 2]).unwrap();
        assert!((st.exit_rate() - exit_rate(&t, &s)).abs() < 1e-15);
    }
}
