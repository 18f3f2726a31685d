//! Metropolis-Hastings over orderings of an observed set.
//!
//! The target is `p(sigma | S) = p(sigma) / p(S)` over the orderings of `S`.
//! Both proposals ignore the current state (independence sampler), so the
//! acceptance ratio only needs `ln p(sigma)` and `ln Q(sigma)` of the two
//! orderings; `p(S)` cancels.
//!
//! The guided proposal builds an ordering item by item. With the current
//! prefix `P` and a candidate `v` from `S \ P`, it weighs
//!
//! ```text
//! u_v = prod_{j in S \ (P + v)} w_vj / d_v,   d_v = 1 + qh_{P + v}
//! ```
//!
//! and picks `v` with probability `u_v / sum u`. For two-item sets this is
//! exactly the target distribution.

use alloc::vec;
use alloc::vec::Vec;

use crate::likelihood::{accumulate_grad_log_marginal_sequence, log_marginal_items, GradMatrix, GradScratch};
use crate::math::{exp, ln_factorial, log, log1p, LogSumExp};
use crate::model::{ItemSet, ParamMatrix, Sequence};
use crate::rng::RngState;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Proposal {
    Uniform,
    #[default]
    Guided,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainConfig {
    /// Retained states averaged by the gradient estimator.
    pub num_samples: usize,
    pub burn_in: usize,
    pub proposal: Proposal,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            num_samples: 50,
            burn_in: 10,
            proposal: Proposal::Guided,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_samples == 0 {
            return Err(Error::InvalidArgument("the chain needs at least one retained sample".into()));
        }
        Ok(())
    }
}

/// An ordering of the target set together with its proposal log-mass.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalDraw {
    pub sigma: Sequence,
    pub log_q: f64,
}

/// Guided proposal for one parameter matrix and one set.
#[derive(Debug, Clone)]
pub struct GuidedProposer<'a> {
    theta: &'a ParamMatrix,
    items: Vec<usize>,
    log_rates: Vec<f64>,
    rates: Vec<f64>,
    log_u: Vec<f64>,
    weights: Vec<f64>,
}

impl<'a> GuidedProposer<'a> {
    pub fn new(theta: &'a ParamMatrix, s: &ItemSet) -> Result<Self> {
        let items = s.to_vec();
        if let Some(&x) = items.iter().find(|&&x| x >= theta.n()) {
            return Err(Error::ItemOutOfRange { item: x, n: theta.n() });
        }
        Ok(Self {
            theta,
            log_rates: vec![0.0; theta.n()],
            rates: vec![0.0; theta.n()],
            log_u: Vec::with_capacity(items.len()),
            weights: Vec::with_capacity(items.len()),
            items,
        })
    }

    /// Candidate log-weights for the items of `S` not yet in `member`.
    fn candidate_weights(&mut self, member: &ItemSet, remaining: &[usize]) {
        let n = self.theta.n();
        for j in 0..n {
            self.rates[j] = if member.contains(j) { 0.0 } else { exp(self.log_rates[j]) };
        }
        self.log_u.clear();
        for &v in remaining {
            let w_row = self.theta.weight_row(v);
            let t_row = self.theta.row(v);
            let mut qh = 0.0;
            for (j, (&r, &w)) in self.rates.iter().zip(w_row).enumerate() {
                if j != v {
                    qh += r * w;
                }
            }
            let mut log_prod = 0.0;
            for &j in remaining {
                if j != v {
                    log_prod += t_row[j];
                }
            }
            self.log_u.push(log_prod - log1p(qh));
        }
    }

    fn advance(&mut self, member: &mut ItemSet, x: usize) {
        member.insert(x);
        for (lr, t) in self.log_rates.iter_mut().zip(self.theta.row(x)) {
            *lr += t;
        }
    }

    fn reset(&mut self) -> (ItemSet, Vec<usize>) {
        self.log_rates.copy_from_slice(&self.theta.diag());
        (ItemSet::empty(), self.items.clone())
    }

    /// Draws an ordering; returns it with `ln Q`.
    pub fn draw(&mut self, rng: &mut RngState) -> (Vec<usize>, f64) {
        let (mut member, mut remaining) = self.reset();
        let mut out = Vec::with_capacity(remaining.len());
        let mut log_q = 0.0;
        while !remaining.is_empty() {
            if remaining.len() == 1 {
                out.push(remaining[0]);
                break;
            }
            self.candidate_weights(&member, &remaining);
            let max = self.log_u.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            self.weights.clear();
            self.weights.extend(self.log_u.iter().map(|&l| exp(l - max)));
            let total: f64 = self.weights.iter().sum();
            let pick = rng.categorical(&self.weights, total);
            log_q += log(self.weights[pick] / total);
            let x = remaining.remove(pick);
            self.advance(&mut member, x);
            out.push(x);
        }
        (out, log_q)
    }

    /// `ln Q(perm)` along a forced path; `perm` must order exactly `S`.
    pub fn log_q(&mut self, perm: &[usize]) -> f64 {
        let (mut member, mut remaining) = self.reset();
        let mut log_q = 0.0;
        for &x in perm {
            if remaining.len() == 1 {
                break;
            }
            self.candidate_weights(&member, &remaining);
            let mut acc = LogSumExp::new();
            for &l in &self.log_u {
                acc.add(l);
            }
            let idx = remaining.iter().position(|&r| r == x).expect("item of the set");
            log_q += self.log_u[idx] - acc.value();
            remaining.remove(idx);
            self.advance(&mut member, x);
        }
        log_q
    }
}

fn check_perm_of(s: &ItemSet, perm: &[usize]) -> Result<()> {
    let seq = Sequence::new(perm.to_vec())?;
    if seq.len() != s.len() || seq.to_set() != *s {
        return Err(Error::InvalidArgument("ordering does not match the set".into()));
    }
    Ok(())
}

/// One draw from the guided proposal.
pub fn draw_guided_proposal(theta: &ParamMatrix, s: &ItemSet, rng: &mut RngState) -> Result<ProposalDraw> {
    if s.is_empty() {
        return Err(Error::InvalidArgument("the set must be non-empty".into()));
    }
    let (perm, log_q) = GuidedProposer::new(theta, s)?.draw(rng);
    Ok(ProposalDraw {
        sigma: Sequence::from_vec_unchecked(perm),
        log_q,
    })
}

/// `ln Q(perm)` under the given proposal.
pub fn proposal_log_q(theta: &ParamMatrix, s: &ItemSet, proposal: Proposal, perm: &[usize]) -> Result<f64> {
    check_perm_of(s, perm)?;
    match proposal {
        Proposal::Uniform => Ok(-ln_factorial(s.len())),
        Proposal::Guided => Ok(GuidedProposer::new(theta, s)?.log_q(perm)),
    }
}

/// Independence Metropolis-Hastings chain on the orderings of one set.
#[derive(Debug, Clone)]
pub struct PermChain<'a> {
    theta: &'a ParamMatrix,
    proposal: Proposal,
    guided: GuidedProposer<'a>,
    uniform_log_q: f64,
    current: Vec<usize>,
    current_log_q: f64,
    current_log_p: f64,
    scratch: GradScratch,
}

impl<'a> PermChain<'a> {
    /// Starts from one proposal draw, accepted unconditionally.
    pub fn new(theta: &'a ParamMatrix, s: &ItemSet, proposal: Proposal, rng: &mut RngState) -> Result<Self> {
        let guided = GuidedProposer::new(theta, s)?;
        let mut chain = Self {
            theta,
            proposal,
            guided,
            uniform_log_q: -ln_factorial(s.len()),
            current: Vec::new(),
            current_log_q: 0.0,
            current_log_p: 0.0,
            scratch: GradScratch::new(),
        };
        let (perm, log_q) = chain.propose(rng);
        chain.current_log_p = log_marginal_items(theta, &perm, &mut chain.scratch);
        chain.current = perm;
        chain.current_log_q = log_q;
        Ok(chain)
    }

    /// Resumes from a given state.
    pub fn from_state(theta: &'a ParamMatrix, s: &ItemSet, proposal: Proposal, state: &ProposalDraw) -> Result<Self> {
        check_perm_of(s, state.sigma.items())?;
        let guided = GuidedProposer::new(theta, s)?;
        let mut scratch = GradScratch::new();
        let current_log_p = log_marginal_items(theta, state.sigma.items(), &mut scratch);
        Ok(Self {
            theta,
            proposal,
            guided,
            uniform_log_q: -ln_factorial(s.len()),
            current: state.sigma.items().to_vec(),
            current_log_q: state.log_q,
            current_log_p,
            scratch,
        })
    }

    fn propose(&mut self, rng: &mut RngState) -> (Vec<usize>, f64) {
        match self.proposal {
            Proposal::Guided => self.guided.draw(rng),
            Proposal::Uniform => {
                let mut perm = self.guided.items.clone();
                rng.shuffle(&mut perm);
                (perm, self.uniform_log_q)
            }
        }
    }

    /// One proposal plus accept/reject. Returns whether the state moved to
    /// the proposed ordering.
    pub fn step(&mut self, rng: &mut RngState) -> bool {
        let (perm, log_q) = self.propose(rng);
        let log_p = log_marginal_items(self.theta, &perm, &mut self.scratch);
        let log_ratio = (log_p - self.current_log_p) + (self.current_log_q - log_q);
        let u = rng.uniform_open_closed();
        if log_ratio >= 0.0 || log(u) < log_ratio {
            self.current = perm;
            self.current_log_q = log_q;
            self.current_log_p = log_p;
            true
        } else {
            false
        }
    }

    pub fn current(&self) -> &[usize] {
        &self.current
    }

    pub fn current_log_p(&self) -> f64 {
        self.current_log_p
    }

    pub fn state(&self) -> ProposalDraw {
        ProposalDraw {
            sigma: Sequence::from_vec_unchecked(self.current.clone()),
            log_q: self.current_log_q,
        }
    }

    /// Adds `scale * grad ln p(current)` to `out`.
    pub fn accumulate_grad(&mut self, scale: f64, out: &mut GradMatrix) {
        accumulate_grad_log_marginal_sequence(self.theta, &self.current, scale, out, &mut self.scratch);
    }
}

/// A single independence MH step from `current`.
pub fn mh_step(
    theta: &ParamMatrix,
    s: &ItemSet,
    proposal: Proposal,
    current: &ProposalDraw,
    rng: &mut RngState,
) -> Result<ProposalDraw> {
    let mut chain = PermChain::from_state(theta, s, proposal, current)?;
    chain.step(rng);
    Ok(chain.state())
}

/// Adds `scale` times the MCMC estimate of `grad ln p(S)` to `out`: burn-in
/// steps are discarded, then the gradients of the next `num_samples` states
/// are averaged. Sets with at most one item have a single ordering and get
/// the exact gradient.
pub fn accumulate_estimate_grad_log_set(
    theta: &ParamMatrix,
    s: &ItemSet,
    config: &ChainConfig,
    rng: &mut RngState,
    scale: f64,
    out: &mut GradMatrix,
    scratch: &mut GradScratch,
) -> Result<()> {
    config.validate()?;
    if s.len() <= 1 {
        let items = s.to_vec();
        if let Some(&x) = items.iter().find(|&&x| x >= theta.n()) {
            return Err(Error::ItemOutOfRange { item: x, n: theta.n() });
        }
        accumulate_grad_log_marginal_sequence(theta, &items, scale, out, scratch);
        return Ok(());
    }
    let mut chain = PermChain::new(theta, s, config.proposal, rng)?;
    for _ in 0..config.burn_in {
        chain.step(rng);
    }
    let per_state = scale / config.num_samples as f64;
    let mut run = 0usize;
    for _ in 0..config.num_samples {
        let before = chain.current().to_vec();
        let moved = chain.step(rng) && chain.current() != &before[..];
        if moved && run > 0 {
            accumulate_grad_log_marginal_sequence(theta, &before, per_state * run as f64, out, scratch);
            run = 0;
        }
        run += 1;
    }
    chain.accumulate_grad(per_state * run as f64, out);
    Ok(())
}

pub fn estimate_grad_log_set(
    theta: &ParamMatrix,
    s: &ItemSet,
    config: &ChainConfig,
    rng: &mut RngState,
) -> Result<GradMatrix> {
    let mut out = GradMatrix::zeros(theta.n());
    accumulate_estimate_grad_log_set(theta, s, config, rng, 1.0, &mut out, &mut GradScratch::new())?;
    Ok(out)
}

/// Importance-sampling estimate of `ln p(S)` with the guided proposal:
/// `ln mean_i p(sigma_i) / Q(sigma_i)`.
pub fn estimate_log_set_prob(theta: &ParamMatrix, s: &ItemSet, draws: usize, rng: &mut RngState) -> Result<f64> {
    if draws == 0 {
        return Err(Error::InvalidArgument("draws must be at least 1".into()));
    }
    let mut scratch = GradScratch::new();
    if s.len() <= 1 {
        let items = s.to_vec();
        if let Some(&x) = items.iter().find(|&&x| x >= theta.n()) {
            return Err(Error::ItemOutOfRange { item: x, n: theta.n() });
        }
        return Ok(log_marginal_items(theta, &items, &mut scratch));
    }
    let mut proposer = GuidedProposer::new(theta, s)?;
    let mut acc = LogSumExp::new();
    for _ in 0..draws {
        let (perm, log_q) = proposer.draw(rng);
        acc.add(log_marginal_items(theta, &perm, &mut scratch) - log_q);
    }
    Ok(acc.value() - log(draws as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::{grad_log_marginal_set_exact, log_marginal_sequence_prob, log_marginal_set_prob};

    fn random_theta(n: usize, rng: &mut RngState) -> ParamMatrix {
        let v = (0..n * n).map(|_| rng.uniform_range(-1.5, 1.5)).collect();
        ParamMatrix::new(n, v).unwrap()
    }

    fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
        if items.len() <= 1 {
            return vec![items.to_vec()];
        }
        let mut out = Vec::new();
        for (i, &x) in items.iter().enumerate() {
            let mut rest = items.to_vec();
            rest.remove(i);
            for mut p in permutations(&rest) {
                p.insert(0, x);
                out.push(p);
            }
        }
        out
    }

    #[test]
    fn single_item_proposal() {
        let theta = ParamMatrix::zeros(3).unwrap();
        let s = ItemSet::from_items(&[1]).unwrap();
        let d = draw_guided_proposal(&theta, &s, &mut RngState::new(1)).unwrap();
        assert_eq!(d.sigma.items(), &[1]);
        assert_eq!(d.log_q, 0.0);
    }

    #[test]
    fn guided_is_exact_for_two_items() {
        let mut rng = RngState::new(2);
        for _ in 0..20 {
            let theta = random_theta(2, &mut rng);
            let s = ItemSet::full(2);
            let log_set = log_marginal_set_prob(&theta, &s, 10).unwrap();
            for perm in [[0, 1], [1, 0]] {
                let q = proposal_log_q(&theta, &s, Proposal::Guided, &perm).unwrap();
                let p = log_marginal_sequence_prob(&theta, &Sequence::new(perm.to_vec()).unwrap()).unwrap() - log_set;
                assert!((q - p).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn guided_mass_sums_to_one() {
        let mut rng = RngState::new(3);
        let theta = random_theta(4, &mut rng);
        let s = ItemSet::from_items(&[0, 2, 3]).unwrap();
        let total: f64 = permutations(&[0, 2, 3])
            .iter()
            .map(|p| exp(proposal_log_q(&theta, &s, Proposal::Guided, p).unwrap()))
            .sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn draws_report_their_forced_path_mass() {
        let mut rng = RngState::new(4);
        let theta = random_theta(5, &mut rng);
        let s = ItemSet::from_items(&[0, 1, 3, 4]).unwrap();
        for _ in 0..20 {
            let d = draw_guided_proposal(&theta, &s, &mut rng).unwrap();
            let forced = proposal_log_q(&theta, &s, Proposal::Guided, d.sigma.items()).unwrap();
            assert!((d.log_q - forced).abs() < 1e-12);
        }
    }

    #[test]
    fn kernel_is_stationary_for_three_items() {
        let mut rng = RngState::new(5);
        let theta = random_theta(4, &mut rng);
        let items = [0, 1, 3];
        let s = ItemSet::from_items(&items).unwrap();
        let perms = permutations(&items);
        let log_set = log_marginal_set_prob(&theta, &s, 10).unwrap();
        let target: Vec<f64> = perms
            .iter()
            .map(|p| exp(log_marginal_sequence_prob(&theta, &Sequence::new(p.clone()).unwrap()).unwrap() - log_set))
            .collect();
        for proposal in [Proposal::Uniform, Proposal::Guided] {
            let q: Vec<f64> = perms
                .iter()
                .map(|p| exp(proposal_log_q(&theta, &s, proposal, p).unwrap()))
                .collect();
            let m = perms.len();
            let mut next = vec![0.0; m];
            for a in 0..m {
                let mut stay = 1.0;
                for b in 0..m {
                    if a != b {
                        let acc = (target[b] * q[a] / (target[a] * q[b])).min(1.0);
                        let k = q[b] * acc;
                        next[b] += target[a] * k;
                        stay -= k;
                    }
                }
                next[a] += target[a] * stay;
            }
            for (x, y) in next.iter().zip(&target) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn estimator_agrees_with_exact_gradient() {
        let mut rng = RngState::new(6);
        let theta = random_theta(5, &mut rng);
        let s = ItemSet::from_items(&[0, 1, 2, 4]).unwrap();
        let exact = grad_log_marginal_set_exact(&theta, &s, 10).unwrap();
        let config = ChainConfig::default();
        let chains = 400;
        let mut mean = GradMatrix::zeros(5);
        let mut sq = GradMatrix::zeros(5);
        for c in 0..chains {
            let mut r = RngState::derive(99, &[c]);
            let g = estimate_grad_log_set(&theta, &s, &config, &mut r).unwrap();
            mean.add_scaled(&g, 1.0 / chains as f64);
            for (a, b) in sq.as_mut_slice().iter_mut().zip(g.as_slice()) {
                *a += b * b / chains as f64;
            }
        }
        for i in 0..25 {
            let m = mean.as_slice()[i];
            let var = (sq.as_slice()[i] - m * m).max(0.0);
            let se = crate::math::sqrt(var / chains as f64);
            assert!((m - exact.as_slice()[i]).abs() <= 4.0 * se + 1e-9, "entry {i}");
        }
    }

    #[test]
    fn small_sets_bypass_the_chain() {
        let mut rng = RngState::new(7);
        let theta = random_theta(3, &mut rng);
        let s = ItemSet::from_items(&[2]).unwrap();
        let est = estimate_grad_log_set(&theta, &s, &ChainConfig::default(), &mut rng).unwrap();
        let exact = grad_log_marginal_set_exact(&theta, &s, 10).unwrap();
        assert_eq!(est, exact);
    }

    #[test]
    fn importance_estimate_is_close() {
        let mut rng = RngState::new(8);
        let theta = random_theta(6, &mut rng);
        let s = ItemSet::from_items(&[0, 2, 3, 5]).unwrap();
        let exact = log_marginal_set_prob(&theta, &s, 10).unwrap();
        let est = estimate_log_set_prob(&theta, &s, 4000, &mut rng).unwrap();
        assert!((est - exact).abs() < 0.02);
    }
}
