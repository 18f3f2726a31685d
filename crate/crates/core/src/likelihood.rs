//! Exact probabilities of sequences and sets, and their gradients.
//!
//! Notation: for an ordering `sigma = (s_1..s_k)` write `R_i` for the set of
//! its first `i` items, `q_i = q_{R_{i-1}, R_{i-1} + s_i}` for the rate of the
//! i-th jump and `qh_i` for the exit rate of `R_i`.
//!
//! * Full sequence (a permutation of all items): `prod q_i / qh_{i-1}`.
//! * Partial sequence seen at time `t`: `P(A) P(B | A)` where `P(A)` is the
//!   jump-chain probability and `P(B | A)` the probability that exactly `k`
//!   holding times (rates `qh_0, qh_1, ..`) have elapsed by `t`.
//! * Partial sequence with `t ~ Exp(1)` integrated out:
//!   `prod_i q_i / (1 + qh_{i-1}) * 1 / (1 + qh_k)`.
//!
//! Set probabilities sum the above over all orderings of the set, which is
//! only feasible for small sets; the `cap` arguments guard against blowups.

use alloc::vec;
use alloc::vec::Vec;

use crate::hypoexp::phase_occupancy;
use crate::math::{exp, expm1, log, log1p, LogSumExp};
use crate::model::{ItemSet, ParamMatrix, Sequence};
use crate::{Error, Result};

pub use crate::hypoexp::hypoexp_cdf;

/// Default largest set size for which orderings are enumerated (10! terms).
pub const DEFAULT_ENUM_CAP: usize = 10;

/// Gradient with respect to a parameter matrix, same row-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradMatrix {
    n: usize,
    data: Vec<f64>,
}

impl GradMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_vec(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Shape(alloc::format!(
                "expected {} gradient entries, got {}",
                n * n,
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    pub fn add_at(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] += v;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = 0.0);
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, other: &GradMatrix, c: f64) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += c * b;
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    /// Euclidean (Frobenius) norm.
    pub fn norm(&self) -> f64 {
        crate::math::sqrt(self.data.iter().map(|x| x * x).sum())
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    /// Position of the first non-finite entry.
    pub fn first_non_finite(&self) -> Option<(usize, usize)> {
        self.data
            .iter()
            .position(|x| !x.is_finite())
            .map(|p| (p / self.n, p % self.n))
    }
}

/// Reusable buffers for the gradient kernels.
#[derive(Debug, Clone, Default)]
pub struct GradScratch {
    log_rates: Vec<f64>,
    /// `q_{R_i, b}` for every state `i` and item `b` (zero for members).
    rates: Vec<f64>,
    exits: Vec<f64>,
    /// `ln q` of each jump taken.
    log_num: Vec<f64>,
    suffix: Vec<f64>,
    coeffs: Vec<f64>,
}

impl GradScratch {
    pub fn new() -> Self {
        Self::default()
    }

    /// Rates out of `R_0..R_{states-1}` along `items`.
    fn forward(&mut self, theta: &ParamMatrix, items: &[usize], states: usize) {
        let n = theta.n();
        self.log_rates.clear();
        self.log_rates.extend_from_slice(&theta.diag());
        self.rates.clear();
        self.rates.resize(states * n, 0.0);
        self.exits.clear();
        self.log_num.clear();
        let mut member = ItemSet::empty();
        for i in 0..states {
            let row = &mut self.rates[i * n..(i + 1) * n];
            let mut total = 0.0;
            for (b, r) in row.iter_mut().enumerate() {
                if !member.contains(b) {
                    *r = exp(self.log_rates[b]);
                    total += *r;
                }
            }
            self.exits.push(total);
            if let Some(&x) = items.get(i) {
                self.log_num.push(self.log_rates[x]);
                member.insert(x);
                for (lr, t) in self.log_rates.iter_mut().zip(theta.row(x)) {
                    *lr += t;
                }
            }
        }
    }

    /// Adds `sum_i coeffs[i] * grad(qh_{R_i})` to `out`, where
    /// `d qh_R / d theta_ab = [b not in R] q_{R,b} [a in R or a = b]`.
    /// Row `a = s_j` collects the suffix sum over states `i >= j`, so the
    /// cost is linear in the number of states.
    fn apply_exit_terms(&mut self, n: usize, items: &[usize], out: &mut GradMatrix) {
        self.suffix.clear();
        self.suffix.resize(n, 0.0);
        for i in (0..self.coeffs.len()).rev() {
            let c = self.coeffs[i];
            if c != 0.0 {
                for (s, q) in self.suffix.iter_mut().zip(&self.rates[i * n..(i + 1) * n]) {
                    *s += c * q;
                }
            }
            if i >= 1 {
                let a = items[i - 1];
                for (o, s) in out.data[a * n..(a + 1) * n].iter_mut().zip(&self.suffix) {
                    *o += s;
                }
            }
        }
        for b in 0..n {
            out.data[b * n + b] += self.suffix[b];
        }
    }
}

/// Adds `scale` times the gradient of `sum_i ln q_i` over the first `k` jumps.
fn add_numerators(items: &[usize], scale: f64, out: &mut GradMatrix) {
    for (i, &b) in items.iter().enumerate() {
        out.add_at(b, b, scale);
        for &a in &items[..i] {
            out.add_at(a, b, scale);
        }
    }
}

fn check_items(theta: &ParamMatrix, sigma: &Sequence) -> Result<()> {
    sigma.check_range(theta.n())
}

fn check_cap(size: usize, cap: usize) -> Result<()> {
    if size > cap {
        Err(Error::EnumerationTooLarge { size, cap })
    } else {
        Ok(())
    }
}

/// `ln p(sigma)` for a permutation of all items.
pub fn log_full_sequence_prob(theta: &ParamMatrix, sigma: &Sequence) -> Result<f64> {
    let n = theta.n();
    if sigma.len() != n || sigma.check_range(n).is_err() {
        return Err(Error::NotPermutation { n });
    }
    let mut scratch = GradScratch::new();
    scratch.forward(theta, sigma.items(), n);
    Ok(scratch
        .log_num
        .iter()
        .zip(&scratch.exits)
        .map(|(ln_q, qh)| ln_q - log(*qh))
        .sum())
}

pub fn full_sequence_prob(theta: &ParamMatrix, sigma: &Sequence) -> Result<f64> {
    log_full_sequence_prob(theta, sigma).map(exp)
}

/// `ln p(sigma)` for a partial sequence with the observation time integrated
/// out.
pub fn log_marginal_sequence_prob(theta: &ParamMatrix, sigma: &Sequence) -> Result<f64> {
    check_items(theta, sigma)?;
    let mut scratch = GradScratch::new();
    Ok(log_marginal_items(theta, sigma.items(), &mut scratch))
}

pub fn marginal_sequence_prob(theta: &ParamMatrix, sigma: &Sequence) -> Result<f64> {
    log_marginal_sequence_prob(theta, sigma).map(exp)
}

/// Unchecked marginal log-probability of an ordering given as raw indices.
pub(crate) fn log_marginal_items(theta: &ParamMatrix, items: &[usize], scratch: &mut GradScratch) -> f64 {
    scratch.forward(theta, items, items.len() + 1);
    marginal_from_scratch(scratch)
}

fn marginal_from_scratch(scratch: &GradScratch) -> f64 {
    let num: f64 = scratch.log_num.iter().sum();
    let den: f64 = scratch.exits.iter().map(|&qh| log1p(qh)).sum();
    num - den
}

/// Rates of the holding times relevant at observation: `qh_0..qh_{k-1}`, plus
/// `qh_k` unless the sequence already contains every item.
fn phase_count(k: usize, n: usize) -> usize {
    if k < n {
        k + 1
    } else {
        k
    }
}

/// `ln p(sigma | t)`: the jump-chain probability times the probability that
/// exactly `len(sigma)` jumps happen by time `t`.
pub fn log_partial_sequence_given_time_prob(theta: &ParamMatrix, sigma: &Sequence, t: f64) -> Result<f64> {
    check_items(theta, sigma)?;
    check_time(t)?;
    let mut scratch = GradScratch::new();
    let k = sigma.len();
    scratch.forward(theta, sigma.items(), phase_count(k, theta.n()));
    Ok(given_time_log_from_scratch(&scratch, k, t))
}

pub fn partial_sequence_given_time_prob(theta: &ParamMatrix, sigma: &Sequence, t: f64) -> Result<f64> {
    log_partial_sequence_given_time_prob(theta, sigma, t).map(exp)
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(alloc::format!(
            "observation time must be finite and nonnegative, got {t}"
        )))
    }
}

fn log_jump_chain(log_num: &[f64], exits: &[f64]) -> f64 {
    log_num
        .iter()
        .zip(exits)
        .map(|(ln_q, &qh)| ln_q - log(qh))
        .sum()
}

fn given_time_log_from_scratch(scratch: &GradScratch, k: usize, t: f64) -> f64 {
    let phases = &scratch.exits;
    let occ = phase_occupancy(t, phases);
    log_jump_chain(&scratch.log_num, phases) + log(occ[k])
}

/// Visits every ordering of `items` (lexicographic in the given item order),
/// sharing the rate computations of common prefixes. The callback receives
/// the ordering, the exit rates of `R_0..R_k` and `sum_i ln q_i`.
struct OrderingWalker<'a, F> {
    theta: &'a ParamMatrix,
    items: &'a [usize],
    used: Vec<bool>,
    perm: Vec<usize>,
    log_rates: Vec<f64>,
    exits: Vec<f64>,
    visit: F,
}

impl<'a, F: FnMut(&[usize], &[f64], f64)> OrderingWalker<'a, F> {
    fn run(theta: &'a ParamMatrix, items: &'a [usize], visit: F) {
        let n = theta.n();
        let k = items.len();
        let mut log_rates = vec![0.0; (k + 1) * n];
        log_rates[..n].copy_from_slice(&theta.diag());
        let mut w = Self {
            theta,
            items,
            used: vec![false; k],
            perm: Vec::with_capacity(k),
            log_rates,
            exits: vec![0.0; k + 1],
            visit,
        };
        w.step(0, ItemSet::empty(), 0.0);
    }

    fn step(&mut self, depth: usize, member: ItemSet, log_num: f64) {
        let n = self.theta.n();
        let base = depth * n;
        let mut total = 0.0;
        for b in 0..n {
            if !member.contains(b) {
                total += exp(self.log_rates[base + b]);
            }
        }
        self.exits[depth] = total;
        if depth == self.items.len() {
            (self.visit)(&self.perm, &self.exits, log_num);
            return;
        }
        for idx in 0..self.items.len() {
            if self.used[idx] {
                continue;
            }
            let x = self.items[idx];
            let ln_q = self.log_rates[base + x];
            let (head, tail) = self.log_rates.split_at_mut(base + n);
            for ((c, p), t) in tail[..n].iter_mut().zip(&head[base..]).zip(self.theta.row(x)) {
                *c = p + t;
            }
            let mut next = member;
            next.insert(x);
            self.used[idx] = true;
            self.perm.push(x);
            self.step(depth + 1, next, log_num + ln_q);
            self.perm.pop();
            self.used[idx] = false;
        }
    }
}

fn set_items(theta: &ParamMatrix, s: &ItemSet) -> Result<Vec<usize>> {
    let n = theta.n();
    if s.span() > n {
        return Err(Error::ItemOutOfRange { item: s.span() - 1, n });
    }
    Ok(s.to_vec())
}

/// The subsets of `S` as prefix states. Every jump factor
/// `q_{R,j} / (1 + qh_R)` depends only on the current set `R`, so sums over
/// the `|S|!` orderings become forward/backward passes over `2^|S|` states.
struct SubsetLattice {
    n: usize,
    items: Vec<usize>,
    /// Local index of each item of `S`, `usize::MAX` for the others.
    local: Vec<usize>,
    /// `ln q_{R,b}` for every state `R` (bitmask over `items`) and item `b`.
    log_rates: Vec<f64>,
    /// `ln(1 + qh_R)`.
    log1p_exit: Vec<f64>,
}

impl SubsetLattice {
    fn new(theta: &ParamMatrix, items: Vec<usize>) -> Self {
        let n = theta.n();
        let k = items.len();
        let states = 1usize << k;
        let mut local = vec![usize::MAX; n];
        for (i, &x) in items.iter().enumerate() {
            local[x] = i;
        }
        let mut log_rates = vec![0.0; states * n];
        log_rates[..n].copy_from_slice(&theta.diag());
        let mut log1p_exit = vec![0.0; states];
        for r in 0..states {
            if r > 0 {
                let low = r.trailing_zeros() as usize;
                let prev = r & (r - 1);
                let (head, tail) = log_rates.split_at_mut(r * n);
                for ((c, p), t) in tail[..n].iter_mut().zip(&head[prev * n..(prev + 1) * n]).zip(theta.row(items[low])) {
                    *c = p + t;
                }
            }
            let row = &log_rates[r * n..(r + 1) * n];
            let qh: f64 = (0..n).filter(|&b| !Self::member(&local, r, b)).map(|b| exp(row[b])).sum();
            log1p_exit[r] = log1p(qh);
        }
        SubsetLattice {
            n,
            items,
            local,
            log_rates,
            log1p_exit,
        }
    }

    fn member(local: &[usize], r: usize, b: usize) -> bool {
        let l = local[b];
        l != usize::MAX && r >> l & 1 == 1
    }

    fn states(&self) -> usize {
        1 << self.items.len()
    }

    /// Log-weight of the jump from `r` adding local item `j`.
    fn jump(&self, r: usize, j: usize) -> f64 {
        self.log_rates[r * self.n + self.items[j]] - self.log1p_exit[r]
    }

    /// `ln` of the total weight of paths from the empty set to each state.
    fn forward(&self) -> Vec<f64> {
        let mut la = vec![f64::NEG_INFINITY; self.states()];
        la[0] = 0.0;
        for r in 1..self.states() {
            let mut acc = LogSumExp::new();
            for j in 0..self.items.len() {
                if r >> j & 1 == 1 {
                    let prev = r & !(1 << j);
                    acc.add(la[prev] + self.jump(prev, j));
                }
            }
            la[r] = acc.value();
        }
        la
    }

    /// `ln` of the total weight of paths from each state to `S`, including
    /// the final factor `1 / (1 + qh_S)`.
    fn backward(&self) -> Vec<f64> {
        let full = self.states() - 1;
        let mut lb = vec![f64::NEG_INFINITY; self.states()];
        lb[full] = -self.log1p_exit[full];
        for r in (0..full).rev() {
            let mut acc = LogSumExp::new();
            for j in 0..self.items.len() {
                if r >> j & 1 == 0 {
                    acc.add(self.jump(r, j) + lb[r | 1 << j]);
                }
            }
            lb[r] = acc.value();
        }
        lb
    }
}

/// `ln p(S)`: the total marginal probability of all orderings of `S`.
pub fn log_marginal_set_prob(theta: &ParamMatrix, s: &ItemSet, cap: usize) -> Result<f64> {
    let items = set_items(theta, s)?;
    check_cap(items.len(), cap)?;
    Ok(SubsetLattice::new(theta, items).backward()[0])
}

/// `p(S)` with the default enumeration cap.
pub fn marginal_set_prob(theta: &ParamMatrix, s: &ItemSet) -> Result<f64> {
    log_marginal_set_prob(theta, s, DEFAULT_ENUM_CAP).map(exp)
}

/// Gradient of `ln p(sigma)` for the time-marginal partial sequence.
pub fn grad_log_marginal_sequence(theta: &ParamMatrix, sigma: &Sequence) -> Result<GradMatrix> {
    check_items(theta, sigma)?;
    let mut out = GradMatrix::zeros(theta.n());
    let mut scratch = GradScratch::new();
    accumulate_grad_log_marginal_sequence(theta, sigma.items(), 1.0, &mut out, &mut scratch);
    Ok(out)
}

/// Adds `scale * grad ln p(items)` to `out` and returns `ln p(items)`.
/// Items must be distinct and in range.
pub fn accumulate_grad_log_marginal_sequence(
    theta: &ParamMatrix,
    items: &[usize],
    scale: f64,
    out: &mut GradMatrix,
    scratch: &mut GradScratch,
) -> f64 {
    let lp = log_marginal_items(theta, items, scratch);
    scratch.coeffs.clear();
    for i in 0..scratch.exits.len() {
        let qh = scratch.exits[i];
        scratch.coeffs.push(-scale / (1.0 + qh));
    }
    scratch.apply_exit_terms(theta.n(), items, out);
    add_numerators(items, scale, out);
    lp
}

/// Exact gradient of `ln p(S)`: the average of the ordering gradients,
/// weighted by `p(sigma | S)`.
pub fn grad_log_marginal_set_exact(theta: &ParamMatrix, s: &ItemSet, cap: usize) -> Result<GradMatrix> {
    let mut out = GradMatrix::zeros(theta.n());
    let mut scratch = GradScratch::new();
    accumulate_grad_log_marginal_set_exact(theta, s, cap, 1.0, &mut out, &mut scratch)?;
    Ok(out)
}

/// Adds `scale * grad ln p(S)` to `out` and returns `ln p(S)`.
///
/// With `P(R)` the posterior probability that the ordering passes through
/// prefix set `R`, the gradient is `sum_R -P(R) grad(qh_R) / (1 + qh_R)`
/// plus, for the numerators, `1` on the diagonal of every item of `S` and
/// `P(a before b)` at `(a, b)`.
pub fn accumulate_grad_log_marginal_set_exact(
    theta: &ParamMatrix,
    s: &ItemSet,
    cap: usize,
    scale: f64,
    out: &mut GradMatrix,
    _scratch: &mut GradScratch,
) -> Result<f64> {
    let items = set_items(theta, s)?;
    check_cap(items.len(), cap)?;
    let lat = SubsetLattice::new(theta, items);
    let (la, lb) = (lat.forward(), lat.backward());
    let log_set = lb[0];
    let n = lat.n;
    let k = lat.items.len();
    for r in 0..lat.states() {
        let visit = exp(la[r] + lb[r] - log_set);
        if visit == 0.0 {
            continue;
        }
        let row = &lat.log_rates[r * n..(r + 1) * n];
        let c = -scale * visit * exp(-lat.log1p_exit[r]);
        for (b, &lr) in row.iter().enumerate() {
            if SubsetLattice::member(&lat.local, r, b) {
                continue;
            }
            let g = c * exp(lr);
            out.data[b * n + b] += g;
            for (a, &x) in lat.items.iter().enumerate() {
                if r >> a & 1 == 1 {
                    out.data[x * n + b] += g;
                }
            }
        }
        for j in 0..k {
            if r >> j & 1 == 1 {
                continue;
            }
            let edge = scale * exp(la[r] + lat.jump(r, j) + lb[r | 1 << j] - log_set);
            let b = lat.items[j];
            for (a, &x) in lat.items.iter().enumerate() {
                if r >> a & 1 == 1 {
                    out.data[x * n + b] += edge;
                }
            }
        }
    }
    for &b in &lat.items {
        out.data[b * n + b] += scale;
    }
    Ok(log_set)
}

/// `ln p(S | t)`. When blocks are declared the chain factorizes, and each
/// interaction group is enumerated separately; groups of one item use the
/// closed form `1 - exp(-w t)` or `exp(-w t)`.
pub fn log_set_given_time_prob(theta: &ParamMatrix, s: &ItemSet, t: f64, cap: usize) -> Result<f64> {
    check_time(t)?;
    let items = set_items(theta, s)?;
    if theta.blocks().is_none() {
        check_cap(items.len(), cap)?;
        return Ok(log_set_given_time_enumerated(theta, &items, t));
    }
    let mut total = 0.0;
    for group in theta.interaction_groups() {
        if let [j] = group[..] {
            let rate = theta.weight(j, j);
            total += if s.contains(j) {
                log(-expm1(-rate * t))
            } else {
                -rate * t
            };
            continue;
        }
        let sub = theta.submatrix(&group)?;
        let local: Vec<usize> = group
            .iter()
            .enumerate()
            .filter(|(_, &g)| s.contains(g))
            .map(|(i, _)| i)
            .collect();
        check_cap(local.len(), cap)?;
        total += log_set_given_time_enumerated(&sub, &local, t);
    }
    Ok(total)
}

pub fn set_given_time_prob(theta: &ParamMatrix, s: &ItemSet, t: f64) -> Result<f64> {
    log_set_given_time_prob(theta, s, t, DEFAULT_ENUM_CAP).map(exp)
}

fn log_set_given_time_enumerated(theta: &ParamMatrix, items: &[usize], t: f64) -> f64 {
    let n = theta.n();
    let k = items.len();
    let phases = phase_count(k, n);
    let mut acc = LogSumExp::new();
    OrderingWalker::run(theta, items, |_, exits, log_num| {
        let occ = phase_occupancy(t, &exits[..phases]);
        acc.add(log_num - exits[..k].iter().map(|&qh| log(qh)).sum::<f64>() + log(occ[k]));
    });
    acc.value()
}

/// Adds `scale * grad ln p(items | t)` to `out` and returns `ln p(items | t)`.
///
/// With phases `L = (qh_0, ..)` and `occ_L[j]` the probability that exactly
/// `j` of them complete by `t`, `P(B | A) = occ_L[k]`. Differentiating a
/// phase rate `l_i` of an exponential gives
/// `d occ_L[k] / d l_i = (occ_L[k] - occ_{L+i}[k+1]) / l_i` for `i <= k` and
/// `-occ_{L+i}[k+1] / l_i` for the final phase, where `L+i` repeats phase `i`.
pub fn accumulate_grad_log_sequence_given_time(
    theta: &ParamMatrix,
    items: &[usize],
    t: f64,
    scale: f64,
    out: &mut GradMatrix,
    scratch: &mut GradScratch,
) -> f64 {
    let n = theta.n();
    let k = items.len();
    let phases = phase_count(k, n);
    scratch.forward(theta, items, phases);
    let occ = phase_occupancy(t, &scratch.exits);
    let p_b = occ[k];
    let lp = log_jump_chain(&scratch.log_num, &scratch.exits) + log(p_b);
    if !(p_b > 0.0) {
        return lp;
    }
    scratch.coeffs.clear();
    let mut extended = Vec::with_capacity(phases + 1);
    for i in 0..phases {
        let lambda = scratch.exits[i];
        extended.clear();
        extended.extend_from_slice(&scratch.exits[..=i]);
        extended.push(lambda);
        extended.extend_from_slice(&scratch.exits[i + 1..]);
        let occ_plus = phase_occupancy(t, &extended)[k + 1];
        let d_occ = if i < k {
            (p_b - occ_plus) / lambda
        } else {
            -occ_plus / lambda
        };
        let mut c = d_occ / p_b;
        if i < k {
            c -= 1.0 / lambda;
        }
        scratch.coeffs.push(scale * c);
    }
    scratch.apply_exit_terms(n, items, out);
    add_numerators(items, scale, out);
    lp
}

/// Adds `scale * grad ln p(S | t)` to `out` (exact enumeration over the whole
/// matrix, ignoring any block declaration) and returns `ln p(S | t)`.
pub fn accumulate_grad_log_set_given_time_exact(
    theta: &ParamMatrix,
    s: &ItemSet,
    t: f64,
    cap: usize,
    scale: f64,
    out: &mut GradMatrix,
    scratch: &mut GradScratch,
) -> Result<f64> {
    check_time(t)?;
    let items = set_items(theta, s)?;
    check_cap(items.len(), cap)?;
    let log_set = log_set_given_time_enumerated(theta, &items, t);
    if !log_set.is_finite() {
        return Err(Error::Numerical(alloc::format!(
            "set has zero probability at observation time {t}"
        )));
    }
    let k = items.len();
    let phases = phase_count(k, theta.n());
    OrderingWalker::run(theta, &items, |perm, exits, log_num| {
        let occ = phase_occupancy(t, &exits[..phases]);
        let lp = log_num - exits[..k].iter().map(|&qh| log(qh)).sum::<f64>() + log(occ[k]);
        let w = exp(lp - log_set);
        if w > 0.0 {
            accumulate_grad_log_sequence_given_time(theta, perm, t, scale * w, out, scratch);
        }
    });
    Ok(log_set)
}

pub fn grad_log_set_given_time_exact(theta: &ParamMatrix, s: &ItemSet, t: f64, cap: usize) -> Result<GradMatrix> {
    let mut out = GradMatrix::zeros(theta.n());
    let mut scratch = GradScratch::new();
    accumulate_grad_log_set_given_time_exact(theta, s, t, cap, 1.0, &mut out, &mut scratch)?;
    Ok(out)
}

/// Calls `f` on every partial sequence over `0..n` (every prefix of every
/// permutation, including the empty one), in depth-first order.
pub fn for_each_partial_sequence<F: FnMut(&[usize])>(n: usize, mut f: F) {
    fn go<F: FnMut(&[usize])>(n: usize, used: &mut Vec<bool>, seq: &mut Vec<usize>, f: &mut F) {
        f(seq);
        for x in 0..n {
            if !used[x] {
                used[x] = true;
                seq.push(x);
                go(n, used, seq, f);
                seq.pop();
                used[x] = false;
            }
        }
    }
    go(n, &mut vec![false; n], &mut Vec::new(), &mut f);
}
