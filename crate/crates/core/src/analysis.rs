//! Evaluation procedures: the equivalence family of the two-item model, KL
//! recovery of sequence distributions, pairwise order proportions, parameter
//! stability across initializations, and the experiment sweeps built on them.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::likelihood::{grad_log_marginal_set_exact, log_marginal_sequence_prob, log_marginal_set_prob, GradMatrix};
use crate::math::{exp, log, mean_stderr, sqrt};
use crate::mcmc::{estimate_grad_log_set, ChainConfig, Proposal};
use crate::model::{make_block_diagonal, Dataset, ItemSet, ParamMatrix, Sequence};
use crate::par::{map_chunks, tree_reduce};
use crate::rng::{stream_id, RngState};
use crate::sampler::{generate_dataset, Sampler};
use crate::trainer::{fit, fit_given_times, FitConfig, FitReport};
use crate::{Error, Result};

const DRAW_CHUNK: usize = 1 << 15;
const KL_STREAM: u64 = 0x4B4C;
const ORDER_STREAM: u64 = 0x0DE7;
const EXPERIMENT_STREAM: u64 = 0xE7E7;

/// The two-item model in which item 1 precedes item 2: `[[0, a], [0, -a]]`.
pub fn two_item_truth(alpha: f64) -> ParamMatrix {
    ParamMatrix::from_rows(&[[0.0, alpha], [0.0, -alpha]]).expect("finite entries")
}

/// The five-item model with an attracting chain and a group of mutually
/// exclusive items.
pub fn five_item_truth() -> ParamMatrix {
    ParamMatrix::from_rows(&[
        [-1.0, 4.0, 0.0, 0.0, 0.0],
        [0.0, -1.0, -2.0, -2.0, 0.0],
        [0.0, -2.0, -1.0, -2.0, 0.0],
        [0.0, -2.0, -2.0, -0.5, 4.0],
        [0.0, 0.0, 0.0, 0.0, -4.0],
    ])
    .expect("finite entries")
}

/// Observable probabilities of the two-item model: `p(empty)`, `p({1})`,
/// `p({2})`.
pub fn two_item_probabilities(theta: &ParamMatrix) -> Result<[f64; 3]> {
    if theta.n() != 2 {
        return Err(Error::Shape("expected a two-item model".into()));
    }
    let p = |items: &[usize]| -> Result<f64> { Ok(exp(log_marginal_set_prob(theta, &ItemSet::from_items(items)?, 2)?)) };
    Ok([p(&[])?, p(&[0])?, p(&[1])?])
}

/// Parameter intervals of the equivalence family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyInterval {
    /// `(0, 1/p0 - 1)`, where the two diagonal weights stay positive.
    pub nominal: (f64, f64),
    /// Sub-interval where all four weights are positive.
    pub valid: (f64, f64),
}

pub fn equivalence_interval(alpha: f64) -> Result<FamilyInterval> {
    let [p0, p1, p2] = two_item_probabilities(&two_item_truth(alpha))?;
    let upper = 1.0 / p0 - 1.0;
    Ok(FamilyInterval {
        nominal: (0.0, upper),
        valid: ((p1 / p0).max(0.0), upper.min((1.0 - p0 - p2) / p0)),
    })
}

/// Member `s` of the one-parameter family of two-item models that share the
/// observable distribution of `two_item_truth(alpha)`; `s` is the weight of
/// item 1 (`s = 1` returns the truth).
pub fn equivalent_model(alpha: f64, s: f64) -> Result<ParamMatrix> {
    let interval = equivalence_interval(alpha)?;
    let (lo, hi) = interval.valid;
    if !(s > lo && s < hi) {
        return Err(Error::InvalidArgument(format!(
            "s = {s} is outside the family: nominal interval ({}, {}), all weights positive on ({lo}, {hi})",
            interval.nominal.0, interval.nominal.1
        )));
    }
    let [p0, p1, p2] = two_item_probabilities(&two_item_truth(alpha))?;
    let w11 = s;
    let w22 = 1.0 / p0 - 1.0 - s;
    let w21 = (1.0 - p0 - p2 - p0 * s) / (p2 * s);
    let w12 = (p0 * s - p1) / (p1 * w22);
    ParamMatrix::from_rows(&[[log(w11), log(w12)], [log(w21), log(w22)]])
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlReport {
    pub kl: f64,
    /// Delta-method standard error of the plug-in estimate.
    pub stderr: f64,
    pub num_draws: usize,
    pub restricted_items: Vec<usize>,
    pub histogram_support: usize,
    /// Set when the estimate is below `-3` standard errors.
    pub negative: bool,
}

/// Histogram of marginal sequences drawn from `theta`, keeping only the items
/// in `restrict` (renumbered by their position there) in their drawn order.
pub fn sequence_histogram(
    theta: &ParamMatrix,
    restrict: &[usize],
    draws: usize,
    seed: u64,
) -> Result<BTreeMap<Vec<usize>, usize>> {
    let n = theta.n();
    let mut position = vec![usize::MAX; n];
    for (i, &r) in restrict.iter().enumerate() {
        if r >= n {
            return Err(Error::ItemOutOfRange { item: r, n });
        }
        position[r] = i;
    }
    let parts = map_chunks(draws, DRAW_CHUNK, |range| {
        let mut sampler = Sampler::new(theta);
        let mut rng = RngState::derive(seed, &[KL_STREAM, range.start as u64]);
        let mut hist: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        let mut buf = Vec::new();
        for _ in range {
            sampler.marginal_sequence_into(&mut rng, &mut buf);
            let key: Vec<usize> = buf.iter().map(|&x| position[x]).filter(|&p| p != usize::MAX).collect();
            *hist.entry(key).or_default() += 1;
        }
        hist
    });
    Ok(tree_reduce(parts, |mut a, b| {
        for (k, v) in b {
            *a.entry(k).or_default() += v;
        }
        a
    })
    .unwrap_or_default())
}

/// Plug-in estimate of `KL(p_hat || p_true)` over restricted marginal
/// sequences, where `p_hat` is the empirical distribution of `draws`
/// sequences from `theta_hat` and `p_true` is exact under `theta_true`.
pub fn kl_recovery(
    theta_hat: &ParamMatrix,
    theta_true: &ParamMatrix,
    restrict: &[usize],
    draws: usize,
    seed: u64,
) -> Result<KlReport> {
    if restrict.len() != theta_true.n() {
        return Err(Error::Shape(format!(
            "restriction has {} items but the true model has {}",
            restrict.len(),
            theta_true.n()
        )));
    }
    if draws == 0 {
        return Err(Error::InvalidArgument("draws must be at least 1".into()));
    }
    let hist = sequence_histogram(theta_hat, restrict, draws, seed)?;
    let total = draws as f64;
    let mut kl = 0.0;
    let mut second = 0.0;
    for (seq, &count) in &hist {
        let p_hat = count as f64 / total;
        let lp_true = log_marginal_sequence_prob(theta_true, &Sequence::new(seq.clone())?)?;
        let l = log(p_hat) - lp_true;
        kl += p_hat * l;
        second += p_hat * l * l;
    }
    let stderr = sqrt(((second - kl * kl) / total).max(0.0));
    Ok(KlReport {
        kl,
        stderr,
        num_draws: draws,
        restricted_items: restrict.to_vec(),
        histogram_support: hist.len(),
        negative: kl < -3.0 * stderr,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrderReport {
    pub item_a: usize,
    pub item_b: usize,
    /// `None` when the two items never co-occurred.
    pub prop_a_first: Option<f64>,
    pub stderr: Option<f64>,
    pub num_cooccurrences: usize,
    pub num_draws: usize,
}

/// Counts, for every ordered pair, how often both items occurred with the
/// first one earlier. Returns `(earlier[a][b], cooccur[a][b])` row-major.
pub fn order_counts(theta: &ParamMatrix, draws: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let n = theta.n();
    let parts = map_chunks(draws, DRAW_CHUNK, |range| {
        let mut sampler = Sampler::new(theta);
        let mut rng = RngState::derive(seed, &[ORDER_STREAM, range.start as u64]);
        let mut earlier = vec![0usize; n * n];
        let mut buf = Vec::new();
        for _ in range {
            sampler.marginal_sequence_into(&mut rng, &mut buf);
            for (i, &a) in buf.iter().enumerate() {
                for &b in &buf[i + 1..] {
                    earlier[a * n + b] += 1;
                }
            }
        }
        earlier
    });
    let earlier = tree_reduce(parts, |mut a, b| {
        a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        a
    })
    .unwrap_or_else(|| vec![0; n * n]);
    let mut co = vec![0usize; n * n];
    for a in 0..n {
        for b in 0..n {
            co[a * n + b] = earlier[a * n + b] + earlier[b * n + a];
        }
    }
    (earlier, co)
}

/// Fraction of sampled marginal sequences containing both `a` and `b` in
/// which `a` came first.
pub fn order_proportion(theta: &ParamMatrix, a: usize, b: usize, draws: usize, seed: u64) -> Result<OrderReport> {
    let n = theta.n();
    for x in [a, b] {
        if x >= n {
            return Err(Error::ItemOutOfRange { item: x, n });
        }
    }
    if a == b {
        return Err(Error::InvalidArgument("the two items must differ".into()));
    }
    let (earlier, co) = order_counts(theta, draws, seed);
    let c = co[a * n + b];
    let (prop, se) = if c > 0 {
        let p = earlier[a * n + b] as f64 / c as f64;
        (Some(p), Some(sqrt(p * (1.0 - p) / c as f64)))
    } else {
        (None, None)
    };
    Ok(OrderReport {
        item_a: a,
        item_b: b,
        prop_a_first: prop,
        stderr: se,
        num_cooccurrences: c,
        num_draws: draws,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityReport {
    pub n: usize,
    pub seeds: Vec<u64>,
    /// Per-entry minimum, maximum and range over the fits, row-major.
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub range: Vec<f64>,
    /// Per ordered pair, the spread (max - min) of the order proportion
    /// across fits; `None` where some fit never showed both items.
    pub order_spread: Vec<Option<f64>>,
    pub fits: Vec<FitReport>,
}

/// Fits once per seed and summarizes how much the parameters move.
pub fn stability_report_with_seeds(
    data: &Dataset,
    config: &FitConfig,
    seeds: &[u64],
    order_draws: usize,
) -> Result<StabilityReport> {
    if seeds.len() < 2 {
        return Err(Error::InvalidArgument("need at least two initializations".into()));
    }
    let n = data.n();
    let mut fits = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = FitConfig { seed, ..config.clone() };
        fits.push(fit(data, &cfg)?);
    }
    let mut min = vec![f64::INFINITY; n * n];
    let mut max = vec![f64::NEG_INFINITY; n * n];
    for f in &fits {
        for (p, &v) in f.theta_hat.theta().iter().enumerate() {
            min[p] = min[p].min(v);
            max[p] = max[p].max(v);
        }
    }
    let range = min.iter().zip(&max).map(|(a, b)| b - a).collect();
    let mut order_spread: Vec<Option<(f64, f64)>> = vec![Some((f64::INFINITY, f64::NEG_INFINITY)); n * n];
    if order_draws > 0 {
        for f in &fits {
            let (earlier, co) = order_counts(&f.theta_hat, order_draws, f.config.seed);
            for p in 0..n * n {
                if p / n == p % n {
                    order_spread[p] = None;
                    continue;
                }
                order_spread[p] = match (order_spread[p], co[p]) {
                    (Some((lo, hi)), c) if c > 0 => {
                        let v = earlier[p] as f64 / c as f64;
                        Some((lo.min(v), hi.max(v)))
                    }
                    _ => None,
                };
            }
        }
    } else {
        order_spread.iter_mut().for_each(|o| *o = None);
    }
    Ok(StabilityReport {
        n,
        seeds: seeds.to_vec(),
        min,
        max,
        range,
        order_spread: order_spread.into_iter().map(|o| o.map(|(lo, hi)| hi - lo)).collect(),
        fits,
    })
}

/// Fits with seeds `seed, seed + 1, ..`.
pub fn stability_report(
    data: &Dataset,
    config: &FitConfig,
    num_inits: usize,
    seed: u64,
    order_draws: usize,
) -> Result<StabilityReport> {
    let seeds: Vec<u64> = (0..num_inits as u64).map(|i| seed.wrapping_add(i)).collect();
    stability_report_with_seeds(data, config, &seeds, order_draws)
}

/// The truth block plus `m` independent items with log-rates from
/// `U[extra_lo, extra_hi]`; the block structure is declared.
pub fn with_extra_items(truth: &ParamMatrix, m: usize, extra: (f64, f64), rng: &mut RngState) -> Result<ParamMatrix> {
    if m == 0 {
        let n = truth.n();
        return truth.clone().with_blocks(core::iter::once(0..n).collect());
    }
    let d: Vec<f64> = (0..m).map(|_| rng.uniform_range(extra.0, extra.1)).collect();
    make_block_diagonal(&[truth.clone(), ParamMatrix::diagonal(&d)?])
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlExperimentConfig {
    pub m_values: Vec<usize>,
    pub repetitions: usize,
    pub samples: usize,
    pub kl_draws: usize,
    /// Range of the extra items' baseline log-rates.
    pub extra_range: (f64, f64),
    pub fit: FitConfig,
    /// Main-phase epochs of the given-times baseline fits, which are cheap
    /// but converge slowly along weakly identified interactions.
    pub baseline_epochs: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlPoint {
    pub m: usize,
    pub kl: Vec<f64>,
    pub kl_mean: f64,
    pub kl_stderr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KlExperiment {
    pub points: Vec<KlPoint>,
    /// KL of models fitted with the true observation times.
    pub baseline: Vec<f64>,
    pub baseline_mean: f64,
    pub baseline_stderr: f64,
}

/// KL recovery as a function of the number of extra independent items. Each
/// repetition draws its own extra items, data, and fit seed; the baseline
/// fits the truth's items alone, conditioned on the true times.
pub fn kl_experiment(truth: &ParamMatrix, cfg: &KlExperimentConfig) -> Result<KlExperiment> {
    let v = truth.n();
    let restrict: Vec<usize> = (0..v).collect();
    let mut points = Vec::new();
    for &m in &cfg.m_values {
        let mut kls = Vec::with_capacity(cfg.repetitions);
        for rep in 0..cfg.repetitions {
            let tag = [EXPERIMENT_STREAM, m as u64, rep as u64];
            let mut rng = RngState::derive(cfg.seed, &tag);
            let model = with_extra_items(truth, m, cfg.extra_range, &mut rng)?;
            let data = generate_dataset(&model, cfg.samples, false, &RngState::new(stream_id(&[cfg.seed, 1, m as u64, rep as u64])))?;
            let fit_cfg = FitConfig {
                seed: stream_id(&[cfg.seed, 2, m as u64, rep as u64]),
                ..cfg.fit.clone()
            };
            let report = fit(&data, &fit_cfg)?;
            let kl = kl_recovery(&report.theta_hat, truth, &restrict, cfg.kl_draws, stream_id(&[cfg.seed, 3, m as u64, rep as u64]))?;
            kls.push(kl.kl);
        }
        let (mean, se) = mean_stderr(&kls);
        points.push(KlPoint {
            m,
            kl: kls,
            kl_mean: mean,
            kl_stderr: se,
        });
    }
    let mut baseline = Vec::with_capacity(cfg.repetitions);
    for rep in 0..cfg.repetitions {
        let data = generate_dataset(truth, cfg.samples, true, &RngState::new(stream_id(&[cfg.seed, 4, rep as u64])))?;
        let fit_cfg = FitConfig {
            seed: stream_id(&[cfg.seed, 5, rep as u64]),
            epochs: cfg.baseline_epochs,
            ..cfg.fit.clone()
        };
        let report = fit_given_times(&data, &fit_cfg)?;
        let kl = kl_recovery(&report.theta_hat, truth, &restrict, cfg.kl_draws, stream_id(&[cfg.seed, 6, rep as u64]))?;
        baseline.push(kl.kl);
    }
    let (baseline_mean, baseline_stderr) = mean_stderr(&baseline);
    Ok(KlExperiment {
        points,
        baseline,
        baseline_mean,
        baseline_stderr,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderPoint {
    pub n: usize,
    pub props: Vec<f64>,
    pub prop_mean: f64,
    pub prop_stderr: f64,
}

/// Proportion of sequences with item `a` before `b` in models fitted to the
/// truth plus `m` extra items, for each `m` (reported by total item count).
pub fn order_experiment(truth: &ParamMatrix, a: usize, b: usize, cfg: &KlExperimentConfig, draws: usize) -> Result<Vec<OrderPoint>> {
    let mut out = Vec::new();
    for &m in &cfg.m_values {
        let mut props = Vec::new();
        for rep in 0..cfg.repetitions {
            let mut rng = RngState::derive(cfg.seed, &[EXPERIMENT_STREAM, m as u64, rep as u64]);
            let model = with_extra_items(truth, m, cfg.extra_range, &mut rng)?;
            let data = generate_dataset(&model, cfg.samples, false, &RngState::new(stream_id(&[cfg.seed, 1, m as u64, rep as u64])))?;
            let fit_cfg = FitConfig {
                seed: stream_id(&[cfg.seed, 2, m as u64, rep as u64]),
                ..cfg.fit.clone()
            };
            let report = fit(&data, &fit_cfg)?;
            let r = order_proportion(&report.theta_hat, a, b, draws, stream_id(&[cfg.seed, 7, m as u64, rep as u64]))?;
            if let Some(p) = r.prop_a_first {
                props.push(p);
            }
        }
        let (mean, se) = mean_stderr(&props);
        out.push(OrderPoint {
            n: truth.n() + m,
            props,
            prop_mean: mean,
            prop_stderr: se,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradErrorPoint {
    pub num_samples: usize,
    pub guided_mean: f64,
    pub guided_stderr: f64,
    pub uniform_mean: f64,
    pub uniform_stderr: f64,
}

/// Error `||g_hat - g||` of the MCMC estimate of the average log-likelihood
/// gradient over `data` at `theta`, for each number of retained samples.
/// Both proposals run on the same random streams in every replicate.
pub fn gradient_error_experiment(
    theta: &ParamMatrix,
    data: &Dataset,
    sample_counts: &[usize],
    replicates: usize,
    burn_in: usize,
    cap: usize,
    seed: u64,
) -> Result<Vec<GradErrorPoint>> {
    if data.is_empty() || replicates < 2 {
        return Err(Error::InvalidArgument("need data and at least two replicates".into()));
    }
    let n = theta.n();
    let scale = 1.0 / data.len() as f64;
    let mut exact = GradMatrix::zeros(n);
    for s in data.samples() {
        exact.add_scaled(&grad_log_marginal_set_exact(theta, s, cap)?, scale);
    }
    let mut out = Vec::new();
    for &mm in sample_counts {
        let errs = map_chunks(replicates, 1, |range| -> Result<[f64; 2]> {
            let r = range.start as u64;
            let mut e = [0.0; 2];
            for (pi, proposal) in [Proposal::Guided, Proposal::Uniform].into_iter().enumerate() {
                let cfg = ChainConfig {
                    num_samples: mm,
                    burn_in,
                    proposal,
                };
                let mut est = GradMatrix::zeros(n);
                for (i, s) in data.samples().iter().enumerate() {
                    let mut rng = RngState::derive(seed, &[EXPERIMENT_STREAM, mm as u64, r, i as u64]);
                    est.add_scaled(&estimate_grad_log_set(theta, s, &cfg, &mut rng)?, scale);
                }
                est.add_scaled(&exact, -1.0);
                e[pi] = est.norm();
            }
            Ok(e)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let guided: Vec<f64> = errs.iter().map(|e| e[0]).collect();
        let uniform: Vec<f64> = errs.iter().map(|e| e[1]).collect();
        let (gm, gs) = mean_stderr(&guided);
        let (um, us) = mean_stderr(&uniform);
        out.push(GradErrorPoint {
            num_samples: mm,
            guided_mean: gm,
            guided_stderr: gs,
            uniform_mean: um,
            uniform_stderr: us,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::for_each_partial_sequence;

    #[test]
    fn family_at_unit_weight_is_the_truth() {
        let t = equivalent_model(4.0, 1.0).unwrap();
        let truth = two_item_truth(4.0);
        for (a, b) in t.theta().iter().zip(truth.theta()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn family_preserves_observables() {
        let truth = two_item_probabilities(&two_item_truth(4.0)).unwrap();
        let iv = equivalence_interval(4.0).unwrap();
        for i in 1..20 {
            let s = iv.valid.0 + (iv.valid.1 - iv.valid.0) * i as f64 / 20.0;
            let p = two_item_probabilities(&equivalent_model(4.0, s).unwrap()).unwrap();
            for k in 0..3 {
                assert!((p[k] - truth[k]).abs() < 1e-12);
            }
        }
        assert!(equivalent_model(4.0, 0.0).is_err());
    }

    #[test]
    fn kl_of_identical_models_is_small() {
        let t = two_item_truth(4.0);
        let r = kl_recovery(&t, &t, &[0, 1], 200_000, 5).unwrap();
        assert!(r.kl < 1e-4);
        assert!(r.histogram_support <= 5);
    }

    #[test]
    fn restricted_support_is_bounded() {
        let mut count = 0;
        for_each_partial_sequence(5, |_| count += 1);
        assert_eq!(count, 326);
        let mut rng = RngState::new(1);
        let model = with_extra_items(&five_item_truth(), 3, (-4.0, -2.0), &mut rng).unwrap();
        let hist = sequence_histogram(&model, &[0, 1, 2, 3, 4], 20_000, 2).unwrap();
        assert!(hist.len() <= 326);
        assert_eq!(hist.values().sum::<usize>(), 20_000);
    }

    #[test]
    fn order_of_the_two_item_model() {
        let r = order_proportion(&two_item_truth(4.0), 0, 1, 100_000, 3).unwrap();
        let expected = 1.0 / (1.0 + exp(-4.0));
        assert!((r.prop_a_first.unwrap() - expected).abs() < 4.0 * r.stderr.unwrap());
        let sym = ParamMatrix::zeros(2).unwrap();
        let r = order_proportion(&sym, 0, 1, 100_000, 4).unwrap();
        let p = r.prop_a_first.unwrap();
        assert!((p - 0.5).abs() < 3.0 * r.stderr.unwrap());
        let never = ParamMatrix::diagonal(&[-1000.0, -1000.0]).unwrap();
        assert_eq!(order_proportion(&never, 0, 1, 100, 1).unwrap().prop_a_first, None);
    }
}
