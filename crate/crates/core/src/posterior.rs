//! Posterior over the unknown observation time.
//!
//! With prior `p(t) = exp(-t)` the posterior of one observed set `S` is
//! `p(t | S) ~ p(S | t) exp(-t)`. For a bank of `m` independent items sharing
//! the baseline rate `w = exp(theta_plus)`, of which `k` were observed,
//!
//! ```text
//! p(t | S) ~ (1 - exp(-w t))^k exp(-t (1 + (m - k) w))
//! ```
//!
//! and `Y = exp(-w t)` is `Beta(1/w + m - k, k + 1)`, so the posterior mean and
//! variance are digamma/trigamma differences.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::likelihood::{log_marginal_set_prob, log_set_given_time_prob};
use crate::math::{adaptive_simpson, exp, expm1, log, logit, mean_stderr, sqrt, trapezoid};
use crate::model::{make_block_diagonal, Dataset, ItemSet, ParamMatrix};
use crate::par::map_chunks;
use crate::rng::RngState;
use crate::sampler::generate_dataset;
use crate::{Error, Result};

pub use crate::special::{digamma, trigamma};

/// Right end of the default time grid; the prior keeps less than `1e-9` of
/// its mass beyond it.
pub const DEFAULT_T_MAX: f64 = 21.0;
pub const DEFAULT_GRID_POINTS: usize = 4000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PosteriorSummary {
    pub mean: f64,
    pub variance: f64,
    pub alpha: f64,
    pub beta: f64,
    pub w_plus: f64,
}

/// Closed-form posterior moments for `k` of `m` independent items observed.
pub fn iid_posterior_summary(theta_plus: f64, m: usize, k: usize) -> Result<PosteriorSummary> {
    if m == 0 || k > m {
        return Err(Error::InvalidArgument(alloc::format!(
            "need 0 <= k <= m and m >= 1, got k = {k}, m = {m}"
        )));
    }
    if !theta_plus.is_finite() {
        return Err(Error::InvalidArgument("theta_plus must be finite".into()));
    }
    let w = exp(theta_plus);
    let alpha = 1.0 / w + (m - k) as f64;
    let beta = k as f64 + 1.0;
    let mean = (digamma(alpha + beta)? - digamma(alpha)?) / w;
    let variance = (trigamma(alpha)? - trigamma(alpha + beta)?) / (w * w);
    Ok(PosteriorSummary {
        mean,
        variance,
        alpha,
        beta,
        w_plus: w,
    })
}

/// Posterior mean and variance of the iid model by adaptive quadrature of the
/// unnormalized density (an independent check of the closed form).
pub fn iid_posterior_moments_quadrature(theta_plus: f64, m: usize, k: usize) -> (f64, f64) {
    let w = exp(theta_plus);
    let kf = k as f64;
    let decay = 1.0 + (m - k) as f64 * w;
    let log_density = |t: f64| {
        let obs = if k == 0 { 0.0 } else { kf * log(-expm1(-w * t)) };
        obs - t * decay
    };
    let t_end = 80.0;
    let panels = 800;
    let width = t_end / panels as f64;
    let offset = (1..=panels * 4)
        .map(|i| log_density(i as f64 * width / 4.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let density = |t: f64| if t <= 0.0 && k > 0 { 0.0 } else { exp(log_density(t) - offset) };
    let integrate = |f: &dyn Fn(f64) -> f64| {
        (0..panels)
            .map(|p| {
                let a = p as f64 * width;
                adaptive_simpson(&|t| f(t), a, a + width, 1e-15, 40)
            })
            .sum::<f64>()
    };
    let z = integrate(&density);
    let mean = integrate(&|t| t * density(t)) / z;
    let var = integrate(&|t| (t - mean) * (t - mean) * density(t)) / z;
    (mean, var)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundConstants {
    pub c1: f64,
    pub c2: f64,
    pub w_plus: f64,
    pub t_star: f64,
}

/// `C1 = exp(w t*) / w` and `C2 = (2 - exp(-w t*)) / (w^2 exp(-w t*))`.
pub fn bound_constants(theta_plus: f64, t_star: f64) -> Result<BoundConstants> {
    if !(t_star > 0.0 && t_star.is_finite()) {
        return Err(Error::InvalidArgument("t_star must be positive".into()));
    }
    let w = exp(theta_plus);
    Ok(bound_constants_w(w, t_star))
}

pub fn bound_constants_w(w: f64, t_star: f64) -> BoundConstants {
    let decay = exp(-w * t_star);
    BoundConstants {
        c1: exp(w * t_star) / w,
        c2: (2.0 - decay) / (w * w * decay),
        w_plus: w,
        t_star,
    }
}

/// Minimizers over `w` of `C1` and `C2` for a fixed `t*`, by golden-section
/// search on `ln w` in `[-12, 8]` (both are unimodal there).
pub fn bound_argmins(t_star: f64) -> Result<(f64, f64)> {
    if !(t_star > 0.0) {
        return Err(Error::InvalidArgument("t_star must be positive".into()));
    }
    let c1 = golden_min(|lw| log(bound_constants_w(exp(lw), t_star).c1), -12.0, 8.0);
    let c2 = golden_min(|lw| log(bound_constants_w(exp(lw), t_star).c2), -12.0, 8.0);
    Ok((exp(c1), exp(c2)))
}

fn golden_min<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let g = (sqrt(5.0) - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        if (b - a).abs() < 1e-12 {
            break;
        }
    }
    0.5 * (a + b)
}

/// Uniform grid on `[0, t_max]` with `points` nodes.
pub fn time_grid(t_max: f64, points: usize) -> Vec<f64> {
    let last = (points.max(2) - 1) as f64;
    (0..points.max(2)).map(|i| t_max * i as f64 / last).collect()
}

pub fn default_time_grid() -> Vec<f64> {
    time_grid(DEFAULT_T_MAX, DEFAULT_GRID_POINTS)
}

/// Normalizes `exp(log_density)` on the grid with the trapezoid rule.
fn normalize(grid: &[f64], log_density: &[f64]) -> Result<Vec<f64>> {
    let max = log_density.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::Numerical("posterior density vanishes on the whole grid".into()));
    }
    let mut dens: Vec<f64> = log_density.iter().map(|&l| exp(l - max)).collect();
    let z = trapezoid(grid, &dens);
    dens.iter_mut().for_each(|d| *d /= z);
    Ok(dens)
}

/// Posterior density of the observation time of `sample` on `grid`,
/// normalized by the trapezoid rule. Declared blocks factorize the
/// likelihood, so only interacting blocks are enumerated.
pub fn block_posterior_density(theta: &ParamMatrix, sample: &ItemSet, grid: &[f64], cap: usize) -> Result<Vec<(f64, f64)>> {
    let log_lik: Vec<f64> = grid
        .iter()
        .map(|&t| log_set_given_time_prob(theta, sample, t, cap).map(|l| l - t))
        .collect::<Result<_>>()?;
    let dens = normalize(grid, &log_lik)?;
    Ok(grid.iter().cloned().zip(dens).collect())
}

/// Gridded posterior of the observation time when `k` of `m` independent
/// items with baseline log-rate `theta_plus` were observed.
pub fn iid_posterior_density(theta_plus: f64, m: usize, k: usize, grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if k > m {
        return Err(Error::InvalidArgument("k must not exceed m".into()));
    }
    let w = exp(theta_plus);
    let log_post: Vec<f64> = grid
        .iter()
        .map(|&t| {
            let hit = if k == 0 { 0.0 } else { k as f64 * log(-expm1(-w * t)) };
            hit - w * t * (m - k) as f64 - t
        })
        .collect();
    let dens = normalize(grid, &log_post)?;
    Ok(grid.iter().cloned().zip(dens).collect())
}

/// Mean and variance of a gridded density.
pub fn grid_moments(density: &[(f64, f64)]) -> (f64, f64) {
    let ts: Vec<f64> = density.iter().map(|p| p.0).collect();
    let ds: Vec<f64> = density.iter().map(|p| p.1).collect();
    let mean = trapezoid(&ts, &ts.iter().zip(&ds).map(|(t, d)| t * d).collect::<Vec<_>>());
    let var = trapezoid(
        &ts,
        &ts.iter().zip(&ds).map(|(t, d)| (t - mean) * (t - mean) * d).collect::<Vec<_>>(),
    );
    (mean, var)
}

/// Symmetric two-item block `[[d, gamma], [gamma, d]]` whose items each
/// appear with marginal frequency `target_freq`; `d` is found by bisection.
pub fn calibrate_block_diagonals(gamma: f64, target_freq: f64) -> Result<ParamMatrix> {
    if !(target_freq > 0.0 && target_freq < 1.0) {
        return Err(Error::InvalidArgument("target frequency must lie in (0, 1)".into()));
    }
    let block = |d: f64| ParamMatrix::from_rows(&[[d, gamma], [gamma, d]]);
    let freq = |d: f64| -> Result<f64> {
        let b = block(d)?;
        let one = ItemSet::from_items(&[0])?;
        Ok(exp(log_marginal_set_prob(&b, &one, 2)?) + exp(log_marginal_set_prob(&b, &ItemSet::full(2), 2)?))
    };
    let (mut lo, mut hi) = (-20.0, 10.0);
    let (f_lo, f_hi) = (freq(lo)? - target_freq, freq(hi)? - target_freq);
    if f_lo > 0.0 || f_hi < 0.0 {
        return Err(Error::Numerical(alloc::format!(
            "no diagonal in [-20, 10] gives frequency {target_freq} for gamma = {gamma}"
        )));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f = freq(mid)? - target_freq;
        if f.abs() <= 1e-12 {
            lo = mid;
            hi = mid;
            break;
        }
        if f < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 {
            break;
        }
    }
    block(0.5 * (lo + hi))
}

/// The background model of a variance sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Background {
    /// `m` independent items with a common baseline log-rate.
    Iid { theta_plus: f64 },
    /// Independent items with baseline log-rates drawn from `U[lo, hi]`.
    UniformDiagonals { lo: f64, hi: f64 },
    /// `m / 2` symmetric pairs with off-diagonal `gamma`, diagonals calibrated
    /// so each item keeps the frequency of an independent item with
    /// `theta_plus`.
    Pairs { gamma: f64, theta_plus: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub m: usize,
    pub mean_variance: f64,
    pub stderr_variance: f64,
    /// Mean of `|posterior mean - true time|`.
    pub mean_abs_error: f64,
    pub stderr_abs_error: f64,
}

const SWEEP_STREAM: u64 = 0x5EE9;

/// Builds the background matrix for `m` items.
pub fn background_model(background: &Background, m: usize, rng: &mut RngState) -> Result<ParamMatrix> {
    match *background {
        Background::Iid { theta_plus } => {
            let b = ParamMatrix::diagonal(&vec![theta_plus; m])?;
            let blocks = (0..m).map(|i| i..i + 1).collect();
            b.with_blocks(blocks)
        }
        Background::UniformDiagonals { lo, hi } => {
            let d: Vec<f64> = (0..m).map(|_| rng.uniform_range(lo, hi)).collect();
            let blocks = (0..m).map(|i| i..i + 1).collect();
            ParamMatrix::diagonal(&d)?.with_blocks(blocks)
        }
        Background::Pairs { gamma, theta_plus } => {
            if !m.is_multiple_of(2) {
                return Err(Error::InvalidArgument("paired background needs an even m".into()));
            }
            let w = exp(theta_plus);
            let block = calibrate_block_diagonals(gamma, w / (1.0 + w))?;
            make_block_diagonal(&vec![block; m / 2])
        }
    }
}

/// Log-likelihood tables `ln p(S cap G | t)` on the grid, cached per
/// (group, observed subset of the group).
struct GroupTables<'a> {
    theta: &'a ParamMatrix,
    groups: Vec<Vec<usize>>,
    grid: &'a [f64],
    cache: BTreeMap<(usize, ItemSet), Vec<f64>>,
}

impl<'a> GroupTables<'a> {
    fn new(theta: &'a ParamMatrix, grid: &'a [f64]) -> Self {
        Self {
            theta,
            groups: theta.interaction_groups(),
            grid,
            cache: BTreeMap::new(),
        }
    }

    fn log_posterior(&mut self, sample: &ItemSet) -> Result<Vec<f64>> {
        let mut total: Vec<f64> = self.grid.iter().map(|&t| -t).collect();
        for g in 0..self.groups.len() {
            let mut local = ItemSet::empty();
            for (i, &item) in self.groups[g].iter().enumerate() {
                if sample.contains(item) {
                    local.insert(i);
                }
            }
            if !self.cache.contains_key(&(g, local)) {
                let sub = self.theta.submatrix(&self.groups[g])?;
                let table = self
                    .grid
                    .iter()
                    .map(|&t| log_set_given_time_prob(&sub, &local, t, 10))
                    .collect::<Result<Vec<_>>>()?;
                self.cache.insert((g, local), table);
            }
            for (a, b) in total.iter_mut().zip(&self.cache[&(g, local)]) {
                *a += b;
            }
        }
        Ok(total)
    }
}

/// Average posterior variance (and mean error) over `samples` draws of
/// `(t*, S)` from the background model, for every `m` in `m_values`.
///
/// The iid background uses the closed form; other backgrounds use the
/// gridded posterior on `grid`.
pub fn variance_sweep(
    background: &Background,
    m_values: &[usize],
    samples: usize,
    grid: &[f64],
    seed: u64,
) -> Result<Vec<SweepPoint>> {
    if samples < 2 {
        return Err(Error::InvalidArgument("need at least two samples per point".into()));
    }
    let points = map_chunks(m_values.len(), 1, |range| -> Result<SweepPoint> {
        let m = m_values[range.start];
        if m == 0 {
            return Err(Error::InvalidArgument("m must be positive".into()));
        }
        let mut model_rng = RngState::derive(seed, &[SWEEP_STREAM, m as u64, 0]);
        let model = background_model(background, m, &mut model_rng)?;
        let data: Dataset = generate_dataset(&model, samples, true, &RngState::new(crate::rng::stream_id(&[seed, SWEEP_STREAM, m as u64, 1])))?;
        let times = data.times().expect("generated with times");
        let mut variances = Vec::with_capacity(samples);
        let mut errors = Vec::with_capacity(samples);
        let mut tables = GroupTables::new(&model, grid);
        for (s, &t_star) in data.samples().iter().zip(times) {
            let (mean, var) = match *background {
                Background::Iid { theta_plus } => {
                    let p = iid_posterior_summary(theta_plus, m, s.len())?;
                    (p.mean, p.variance)
                }
                _ => {
                    let lp = tables.log_posterior(s)?;
                    let dens = normalize(grid, &lp)?;
                    let pairs: Vec<(f64, f64)> = grid.iter().cloned().zip(dens).collect();
                    grid_moments(&pairs)
                }
            };
            variances.push(var);
            errors.push((mean - t_star).abs());
        }
        let (mv, sv) = mean_stderr(&variances);
        let (me, se) = mean_stderr(&errors);
        Ok(SweepPoint {
            m,
            mean_variance: mv,
            stderr_variance: sv,
            mean_abs_error: me,
            stderr_abs_error: se,
        })
    });
    points.into_iter().collect()
}

/// Log-rate whose independent item has marginal frequency `f`.
pub fn iid_theta_for_frequency(f: f64) -> f64 {
    logit(f)
}
