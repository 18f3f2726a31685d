//! L1-regularized maximum likelihood by proximal AdaGrad.
//!
//! The objective is `F = mean_d ln p(S_d) - lambda * sum_{i != j} |theta_ij|`.
//! Each epoch takes a full-batch gradient of the likelihood term, scales it
//! per coordinate by AdaGrad, steps uphill, then applies the proximal map of
//! the L1 term (soft-thresholding) to the off-diagonal entries. Diagonal
//! entries are never penalized.
//!
//! Training starts from `theta_jj = logit(item frequency)` (clamped), refines
//! the diagonal alone for a number of epochs, then draws the off-diagonal
//! entries from a small uniform interval and trains everything.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::likelihood::{
    accumulate_grad_log_marginal_set_exact, accumulate_grad_log_set_given_time_exact, log_marginal_set_prob,
    log_set_given_time_prob, GradMatrix, GradScratch, DEFAULT_ENUM_CAP,
};
use crate::math::{logit, sqrt};
use crate::mcmc::{accumulate_estimate_grad_log_set, estimate_log_set_prob, ChainConfig};
use crate::model::{Dataset, ItemSet, ParamMatrix};
use crate::par::{map_chunks, tree_reduce};
use crate::rng::RngState;
use crate::{Error, Result};

const CHAIN_STREAM: u64 = 0xC4A1;
const INIT_STREAM: u64 = 0x1417;
const OBJECTIVE_STREAM: u64 = 0x0B7E;
const SAMPLE_CHUNK: usize = 16;
const DIAG_CLAMP: (f64, f64) = (-10.0, 2.0);
const DIAG_WARN: f64 = 8.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FitMode {
    /// Observation times unknown and integrated out.
    #[default]
    Marginal,
    /// Condition on the recorded observation time of every sample.
    GivenTimes,
    /// Off-diagonal entries stay at zero throughout.
    DiagonalOnly,
}

/// How the likelihood gradient of a set is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMethod {
    /// Metropolis-Hastings over orderings.
    #[default]
    Mcmc,
    /// Enumeration of all orderings (sets up to `enum_cap` items).
    Exact,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub step_size: f64,
    pub reg_weight: f64,
    pub epochs: usize,
    pub diag_pretrain_epochs: usize,
    pub init_offdiag_halfwidth: f64,
    pub mcmc: ChainConfig,
    pub seed: u64,
    pub mode: FitMode,
    pub adagrad_epsilon: f64,
    pub gradient: GradientMethod,
    /// Largest set enumerated exactly.
    pub enum_cap: usize,
    /// The objective trace is exact when every set has at most this many
    /// items, and an importance-sampling estimate otherwise.
    pub objective_exact_cap: usize,
    /// Proposal draws per distinct set for the estimated objective.
    pub objective_draws: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            step_size: 1.0,
            reg_weight: 0.01,
            epochs: 100,
            diag_pretrain_epochs: 50,
            init_offdiag_halfwidth: 0.2,
            mcmc: ChainConfig::default(),
            seed: 0,
            mode: FitMode::Marginal,
            adagrad_epsilon: 1e-8,
            gradient: GradientMethod::Mcmc,
            enum_cap: DEFAULT_ENUM_CAP,
            objective_exact_cap: DEFAULT_ENUM_CAP,
            objective_draws: 16,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidArgument(what.into()));
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return bad("step size must be positive");
        }
        if !(self.reg_weight >= 0.0 && self.reg_weight.is_finite()) {
            return bad("regularization weight must be nonnegative");
        }
        if !(self.init_offdiag_halfwidth >= 0.0 && self.init_offdiag_halfwidth.is_finite()) {
            return bad("initialization half-width must be nonnegative");
        }
        if !(self.adagrad_epsilon > 0.0) {
            return bad("AdaGrad epsilon must be positive");
        }
        if self.objective_draws == 0 {
            return bad("objective draws must be at least 1");
        }
        self.mcmc.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Pretrain,
    Main,
}

/// Progress record passed to the observer after every epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochInfo {
    pub phase: Phase,
    pub epoch: usize,
    /// Regularized objective after the update (main phase only).
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub theta_hat: ParamMatrix,
    /// Objective after each main-phase epoch.
    pub objective_trace: Vec<f64>,
    /// Whether the trace holds exact values (otherwise importance-sampling
    /// estimates).
    pub objective_exact: bool,
    /// Seconds spent, filled in by callers that have a clock.
    pub wall_time: Option<f64>,
    pub warnings: Vec<String>,
    pub config: FitConfig,
}

/// `sign(x) * max(0, |x| - threshold)`; exactly `0.0` inside the threshold.
pub fn soft_threshold(x: f64, threshold: f64) -> f64 {
    if x > threshold {
        x - threshold
    } else if x < -threshold {
        x + threshold
    } else {
        0.0
    }
}

/// Distinct sets with their multiplicities, in set order.
fn group_sets(data: &Dataset) -> Vec<(ItemSet, usize)> {
    let mut counts: BTreeMap<ItemSet, usize> = BTreeMap::new();
    for s in data.samples() {
        *counts.entry(*s).or_default() += 1;
    }
    counts.into_iter().collect()
}

fn check_shape(theta: &ParamMatrix, data: &Dataset) -> Result<()> {
    if theta.n() != data.n() {
        return Err(Error::Shape(format!(
            "model has {} items but data has {}",
            theta.n(),
            data.n()
        )));
    }
    if data.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    Ok(())
}

/// Exact regularized objective (sets must be within `cap`).
pub fn objective(theta: &ParamMatrix, data: &Dataset, reg_weight: f64, cap: usize) -> Result<f64> {
    check_shape(theta, data)?;
    let groups = group_sets(data);
    let parts = map_chunks(groups.len(), SAMPLE_CHUNK, |range| {
        let mut acc = 0.0;
        for (s, c) in &groups[range] {
            acc += *c as f64 * log_marginal_set_prob(theta, s, cap)?;
        }
        Ok(acc)
    });
    let ll = sum_results(parts)?;
    Ok(ll / data.len() as f64 - reg_weight * theta.off_diagonal_l1())
}

/// Objective with the likelihood term estimated by importance sampling from
/// the guided proposal (`draws` per distinct set). Sets with at most one item
/// are exact.
pub fn objective_estimate(theta: &ParamMatrix, data: &Dataset, reg_weight: f64, draws: usize, rng: &RngState) -> Result<f64> {
    check_shape(theta, data)?;
    let groups = group_sets(data);
    let seed = rng.seed();
    let stream = rng_stream_tag(rng);
    let parts = map_chunks(groups.len(), SAMPLE_CHUNK, |range| {
        let mut acc = 0.0;
        for g in range {
            let (s, c) = &groups[g];
            let mut r = RngState::derive(seed, &[OBJECTIVE_STREAM, stream, g as u64]);
            acc += *c as f64 * estimate_log_set_prob(theta, s, draws, &mut r)?;
        }
        Ok(acc)
    });
    let ll = sum_results(parts)?;
    Ok(ll / data.len() as f64 - reg_weight * theta.off_diagonal_l1())
}

fn rng_stream_tag(rng: &RngState) -> u64 {
    rng.clone().next_u64()
}

/// Regularized objective with every sample conditioned on its time.
pub fn objective_given_times(theta: &ParamMatrix, data: &Dataset, reg_weight: f64, cap: usize) -> Result<f64> {
    check_shape(theta, data)?;
    let times = data.times().ok_or(Error::MissingTimes)?;
    let samples = data.samples();
    let parts = map_chunks(samples.len(), SAMPLE_CHUNK, |range| {
        let mut acc = 0.0;
        for d in range {
            acc += log_set_given_time_prob(theta, &samples[d], times[d], cap)?;
        }
        Ok(acc)
    });
    let ll = sum_results(parts)?;
    Ok(ll / data.len() as f64 - reg_weight * theta.off_diagonal_l1())
}

fn sum_results(parts: Vec<Result<f64>>) -> Result<f64> {
    let vals = parts.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(tree_reduce(vals, |a, b| a + b).unwrap_or(0.0))
}

/// Starting diagonal: logit of each item's frequency, clamped.
pub fn warm_start_diagonal(data: &Dataset) -> Vec<f64> {
    data.item_frequencies()
        .into_iter()
        .map(|f| {
            let v = logit(f);
            if v.is_nan() {
                DIAG_CLAMP.0
            } else {
                v.clamp(DIAG_CLAMP.0, DIAG_CLAMP.1)
            }
        })
        .collect()
}

struct Trainer<'a> {
    data: &'a Dataset,
    config: &'a FitConfig,
    groups: Vec<(ItemSet, usize)>,
}

impl<'a> Trainer<'a> {
    /// Mean likelihood gradient over the dataset.
    fn gradient(&self, theta: &ParamMatrix, phase: Phase, epoch: usize) -> Result<GradMatrix> {
        let n = theta.n();
        let n_total = self.data.len() as f64;
        let cfg = self.config;
        let phase_tag = match phase {
            Phase::Pretrain => 0u64,
            Phase::Main => 1u64,
        };
        let fail = |sample: usize, g: &GradMatrix| -> Option<Error> {
            g.first_non_finite().map(|(row, col)| Error::NonFiniteGradient {
                sample,
                epoch,
                row,
                col,
                theta: theta.theta().to_vec(),
            })
        };
        let parts: Vec<Result<GradMatrix>> = match (cfg.mode, cfg.gradient) {
            (FitMode::GivenTimes, _) => {
                let times = self.data.times().ok_or(Error::MissingTimes)?;
                let samples = self.data.samples();
                map_chunks(samples.len(), SAMPLE_CHUNK, |range| {
                    let mut g = GradMatrix::zeros(n);
                    let mut scratch = GradScratch::new();
                    for d in range {
                        accumulate_grad_log_set_given_time_exact(
                            theta,
                            &samples[d],
                            times[d],
                            cfg.enum_cap,
                            1.0 / n_total,
                            &mut g,
                            &mut scratch,
                        )
                        .map_err(|e| annotate(e, d))?;
                        if let Some(e) = fail(d, &g) {
                            return Err(e);
                        }
                    }
                    Ok(g)
                })
            }
            (_, GradientMethod::Exact) => {
                let groups = &self.groups;
                map_chunks(groups.len(), SAMPLE_CHUNK, |range| {
                    let mut g = GradMatrix::zeros(n);
                    let mut scratch = GradScratch::new();
                    for k in range {
                        let (s, c) = &groups[k];
                        accumulate_grad_log_marginal_set_exact(
                            theta,
                            s,
                            cfg.enum_cap,
                            *c as f64 / n_total,
                            &mut g,
                            &mut scratch,
                        )?;
                        if let Some(e) = fail(k, &g) {
                            return Err(e);
                        }
                    }
                    Ok(g)
                })
            }
            (_, GradientMethod::Mcmc) => {
                let samples = self.data.samples();
                map_chunks(samples.len(), SAMPLE_CHUNK, |range| {
                    let mut g = GradMatrix::zeros(n);
                    let mut scratch = GradScratch::new();
                    for d in range {
                        let mut rng = RngState::derive(cfg.seed, &[CHAIN_STREAM, phase_tag, epoch as u64, d as u64]);
                        accumulate_estimate_grad_log_set(
                            theta,
                            &samples[d],
                            &cfg.mcmc,
                            &mut rng,
                            1.0 / n_total,
                            &mut g,
                            &mut scratch,
                        )?;
                        if let Some(e) = fail(d, &g) {
                            return Err(e);
                        }
                    }
                    Ok(g)
                })
            }
        };
        let parts = parts.into_iter().collect::<Result<Vec<_>>>()?;
        Ok(tree_reduce(parts, |mut a, b| {
            a.add_scaled(&b, 1.0);
            a
        })
        .unwrap_or_else(|| GradMatrix::zeros(n)))
    }

    fn objective(&self, theta: &ParamMatrix, epoch: usize, exact: bool) -> Result<f64> {
        let cfg = self.config;
        match cfg.mode {
            FitMode::GivenTimes => objective_given_times(theta, self.data, cfg.reg_weight, cfg.enum_cap),
            _ if exact => objective(theta, self.data, cfg.reg_weight, cfg.enum_cap),
            _ => {
                let rng = RngState::derive(cfg.seed, &[OBJECTIVE_STREAM, epoch as u64]);
                objective_estimate(theta, self.data, cfg.reg_weight, cfg.objective_draws, &rng)
            }
        }
    }
}

fn annotate(e: Error, sample: usize) -> Error {
    match e {
        Error::Numerical(msg) => Error::Numerical(format!("sample {sample}: {msg}")),
        other => other,
    }
}

/// AdaGrad state over all `n * n` coordinates.
struct AdaGrad {
    accum: Vec<f64>,
}

impl AdaGrad {
    fn new(len: usize) -> Self {
        Self { accum: vec![0.0; len] }
    }

    /// Ascent step, then soft-thresholding of off-diagonal entries. With
    /// `diagonal_only` the off-diagonal entries are left untouched.
    fn step(&mut self, theta: &mut [f64], grad: &GradMatrix, n: usize, cfg: &FitConfig, diagonal_only: bool) {
        let g = grad.as_slice();
        for p in 0..n * n {
            let diag = p / n == p % n;
            if diagonal_only && !diag {
                continue;
            }
            self.accum[p] += g[p] * g[p];
            let scale = cfg.step_size / sqrt(self.accum[p] + cfg.adagrad_epsilon);
            theta[p] += scale * g[p];
            if !diag {
                theta[p] = soft_threshold(theta[p], cfg.reg_weight * scale);
            }
        }
    }
}

/// Fits a model with the default (no-op) observer.
pub fn fit(data: &Dataset, config: &FitConfig) -> Result<FitReport> {
    fit_with_observer(data, config, &mut |_| {})
}

/// Fits conditioned on the recorded observation times.
pub fn fit_given_times(data: &Dataset, config: &FitConfig) -> Result<FitReport> {
    let mut cfg = config.clone();
    cfg.mode = FitMode::GivenTimes;
    fit(data, &cfg)
}

/// Full training run. Chains for sample `d` in epoch `e` use the random
/// stream derived from `(seed, phase, e, d)`, so results do not depend on
/// the number of threads.
pub fn fit_with_observer(data: &Dataset, config: &FitConfig, observer: &mut dyn FnMut(&EpochInfo)) -> Result<FitReport> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("dataset is empty".into()));
    }
    if config.mode == FitMode::GivenTimes && data.times().is_none() {
        return Err(Error::MissingTimes);
    }
    let needs_enumeration = config.mode == FitMode::GivenTimes || config.gradient == GradientMethod::Exact;
    let max_size = data.samples().iter().map(|s| s.len()).max().unwrap_or(0);
    if needs_enumeration && max_size > config.enum_cap {
        return Err(Error::EnumerationTooLarge {
            size: max_size,
            cap: config.enum_cap,
        });
    }
    let n = data.n();
    let trainer = Trainer {
        data,
        config,
        groups: group_sets(data),
    };
    let mut theta_vec = vec![0.0; n * n];
    for (j, d) in warm_start_diagonal(data).into_iter().enumerate() {
        theta_vec[j * n + j] = d;
    }
    let mut theta = ParamMatrix::new(n, theta_vec.clone())?;

    let mut adagrad = AdaGrad::new(n * n);
    for epoch in 0..config.diag_pretrain_epochs {
        let g = trainer.gradient(&theta, Phase::Pretrain, epoch)?;
        adagrad.step(&mut theta_vec, &g, n, config, true);
        theta = ParamMatrix::new(n, theta_vec.clone())?;
        observer(&EpochInfo {
            phase: Phase::Pretrain,
            epoch,
            objective: None,
        });
    }
    let mut warnings = Vec::new();
    let drifted: Vec<String> = (0..n)
        .filter(|&j| theta_vec[j * n + j].abs() > DIAG_WARN)
        .map(|j| format!("{}", j + 1))
        .collect();
    if !drifted.is_empty() {
        warnings.push(format!(
            "after diagonal pretraining |theta_jj| > {DIAG_WARN} for items {}; these items are (nearly) always or never observed",
            drifted.join(", ")
        ));
    }

    let diagonal_only = config.mode == FitMode::DiagonalOnly;
    if !diagonal_only && config.init_offdiag_halfwidth > 0.0 {
        let h = config.init_offdiag_halfwidth;
        let mut rng = RngState::derive(config.seed, &[INIT_STREAM]);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    theta_vec[i * n + j] = rng.uniform_range(-h, h);
                }
            }
        }
        theta = ParamMatrix::new(n, theta_vec.clone())?;
    }

    let objective_exact = config.mode == FitMode::GivenTimes || max_size <= config.objective_exact_cap;
    let mut adagrad = AdaGrad::new(n * n);
    let mut trace = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let g = trainer.gradient(&theta, Phase::Main, epoch)?;
        adagrad.step(&mut theta_vec, &g, n, config, diagonal_only);
        theta = ParamMatrix::new(n, theta_vec.clone())?;
        let f = trainer.objective(&theta, epoch, objective_exact)?;
        trace.push(f);
        observer(&EpochInfo {
            phase: Phase::Main,
            epoch,
            objective: Some(f),
        });
    }
    if let Some(names) = data.item_names() {
        theta = theta.with_item_names(names.to_vec())?;
    }
    Ok(FitReport {
        theta_hat: theta,
        objective_trace: trace,
        objective_exact,
        wall_time: None,
        warnings,
        config: config.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::generate_dataset;

    #[test]
    fn objective_of_single_empty_sample() {
        let theta = ParamMatrix::zeros(1).unwrap();
        let data = Dataset::new(1, vec![ItemSet::empty()], None).unwrap();
        let f = objective(&theta, &data, 0.0, 10).unwrap();
        assert!((f + core::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn regularizer_subtracts_off_diagonal_mass() {
        let theta = ParamMatrix::from_rows(&[[0.0, 0.5], [-0.25, 0.0]]).unwrap();
        let data = Dataset::new(2, vec![ItemSet::empty(), ItemSet::full(2)], None).unwrap();
        let a = objective(&theta, &data, 0.0, 10).unwrap();
        let b = objective(&theta, &data, 0.1, 10).unwrap();
        assert!((a - b - 0.075).abs() < 1e-15);
    }

    #[test]
    fn soft_threshold_lands_on_zero() {
        assert_eq!(soft_threshold(0.005, 0.01).to_bits(), 0.0f64.to_bits());
        assert_eq!(soft_threshold(-0.005, 0.01).to_bits(), 0.0f64.to_bits());
        assert!((soft_threshold(0.5, 0.1) - 0.4).abs() < 1e-15);
        assert!((soft_threshold(-0.5, 0.1) + 0.4).abs() < 1e-15);
    }

    #[test]
    fn diagonal_only_recovers_iid_rates() {
        let theta = ParamMatrix::diagonal(&[-2.0; 4]).unwrap();
        let data = generate_dataset(&theta, 10_000, false, &RngState::new(12)).unwrap();
        let cfg = FitConfig {
            mode: FitMode::DiagonalOnly,
            epochs: 10,
            diag_pretrain_epochs: 10,
            ..FitConfig::default()
        };
        let report = fit(&data, &cfg).unwrap();
        for j in 0..4 {
            assert!((report.theta_hat.get(j, j) + 2.0).abs() < 0.1);
        }
        assert!(report.theta_hat.is_diagonal());
        assert_eq!(report.objective_trace.len(), 10);
    }

    #[test]
    fn fits_are_reproducible() {
        let truth = ParamMatrix::from_rows(&[[0.0, 4.0, 0.0], [0.0, -4.0, 0.0], [0.0, 0.0, -1.0]]).unwrap();
        let data = generate_dataset(&truth, 100, false, &RngState::new(3)).unwrap();
        let cfg = FitConfig {
            epochs: 5,
            diag_pretrain_epochs: 3,
            seed: 77,
            ..FitConfig::default()
        };
        let a = fit(&data, &cfg).unwrap();
        let b = fit(&data, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn zero_times_stay_finite() {
        let data = Dataset::new(2, vec![ItemSet::empty(); 20], Some(vec![0.0; 20])).unwrap();
        let cfg = FitConfig {
            epochs: 20,
            diag_pretrain_epochs: 5,
            ..FitConfig::default()
        };
        let report = fit_given_times(&data, &cfg).unwrap();
        assert!(report.theta_hat.theta().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn given_times_requires_times() {
        let data = Dataset::new(2, vec![ItemSet::empty()], None).unwrap();
        assert_eq!(fit_given_times(&data, &FitConfig::default()), Err(Error::MissingTimes));
    }
}
