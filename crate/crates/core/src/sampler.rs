//! Forward simulation of the chain up to an exponential observation time.

use alloc::vec;
use alloc::vec::Vec;

use crate::model::{Dataset, ItemSet, ParamMatrix, RateState, Sequence};
use crate::par::map_chunks;
use crate::rng::RngState;
use crate::{Error, Result};

/// One simulated path, stopped at the observation time.
#[derive(Debug, Clone, PartialEq)]
pub struct TimedTrajectory {
    pub sequence: Sequence,
    /// Time spent in each state before the corresponding item was added.
    pub holding_times: Vec<f64>,
    pub t_obs: f64,
}

impl TimedTrajectory {
    pub fn to_set(&self) -> ItemSet {
        self.sequence.to_set()
    }

    /// Partial sums of the holding times.
    pub fn jump_times(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.holding_times
            .iter()
            .map(|h| {
                t += h;
                t
            })
            .collect()
    }
}

/// Reusable simulator for one parameter matrix. Caches the rates out of the
/// empty state, which every path starts from.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    state: RateState<'a>,
    rates: Vec<f64>,
    initial_rates: Vec<f64>,
    initial_exit: f64,
}

impl<'a> Sampler<'a> {
    pub fn new(theta: &'a ParamMatrix) -> Self {
        let state = RateState::new(theta);
        let mut initial_rates = vec![0.0; theta.n()];
        let initial_exit = state.rates_into(&mut initial_rates);
        Self {
            state,
            rates: vec![0.0; theta.n()],
            initial_rates,
            initial_exit,
        }
    }

    /// Runs the jump chain until the next jump would pass the observation
    /// time, calling `on_jump(item, holding_time)` for each accepted jump.
    /// Returns the observation time.
    fn run<F: FnMut(usize, f64)>(&mut self, rng: &mut RngState, mut on_jump: F) -> f64 {
        let t_obs = rng.exponential(1.0);
        self.state.reset();
        let mut t = 0.0;
        let mut first = true;
        loop {
            let exit = if first {
                self.initial_exit
            } else {
                self.state.rates_into(&mut self.rates)
            };
            if exit <= 0.0 {
                break;
            }
            let h = rng.exponential(exit);
            if t + h >= t_obs {
                break;
            }
            let rates = if first { &self.initial_rates } else { &self.rates };
            let x = rng.categorical(rates, exit);
            first = false;
            t += h;
            on_jump(x, h);
            self.state.add(x);
        }
        t_obs
    }

    pub fn marginal_set(&mut self, rng: &mut RngState) -> ItemSet {
        let mut s = ItemSet::empty();
        self.run(rng, |x, _| s.insert(x));
        s
    }

    /// Ordered items observed, without holding times.
    pub fn marginal_sequence_into(&mut self, rng: &mut RngState, out: &mut Vec<usize>) {
        out.clear();
        self.run(rng, |x, _| out.push(x));
    }

    pub fn timed_trajectory(&mut self, rng: &mut RngState) -> TimedTrajectory {
        let mut items = Vec::new();
        let mut holding_times = Vec::new();
        let t_obs = self.run(rng, |x, h| {
            items.push(x);
            holding_times.push(h);
        });
        TimedTrajectory {
            sequence: Sequence::from_vec_unchecked(items),
            holding_times,
            t_obs,
        }
    }
}

/// Draws one observed set: `t_obs ~ Exp(1)`, then jumps while the running
/// time stays below `t_obs`.
pub fn sample_marginal_set(theta: &ParamMatrix, rng: &mut RngState) -> ItemSet {
    Sampler::new(theta).marginal_set(rng)
}

pub fn sample_timed_trajectory(theta: &ParamMatrix, rng: &mut RngState) -> TimedTrajectory {
    Sampler::new(theta).timed_trajectory(rng)
}

const DATASET_STREAM: u64 = 0xD474;
const DATASET_CHUNK: usize = 1024;

/// `count` independent observations. Sample `i` uses the stream derived from
/// `(rng.seed(), i)`, so the result does not depend on thread count.
pub fn generate_dataset(
    theta: &ParamMatrix,
    count: usize,
    with_times: bool,
    rng: &RngState,
) -> Result<Dataset> {
    if count == 0 {
        return Err(Error::InvalidArgument("count must be at least 1".into()));
    }
    let seed = rng.seed();
    let chunks = map_chunks(count, DATASET_CHUNK, |range| {
        let mut sampler = Sampler::new(theta);
        range
            .map(|i| {
                let mut r = RngState::derive(seed, &[DATASET_STREAM, i as u64]);
                let traj = sampler.timed_trajectory(&mut r);
                (traj.to_set(), traj.t_obs)
            })
            .collect::<Vec<_>>()
    });
    let mut samples = Vec::with_capacity(count);
    let mut times = Vec::with_capacity(count);
    for (s, t) in chunks.into_iter().flatten() {
        samples.push(s);
        times.push(t);
    }
    let mut data = Dataset::new(theta.n(), samples, with_times.then_some(times))?;
    if let Some(names) = theta.item_names() {
        data = data.with_item_names(names.to_vec())?;
    }
    Ok(data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vanishing_rates_give_empty_sets() {
        let theta = ParamMatrix::diagonal(&[-1000.0; 3]).unwrap();
        let mut rng = RngState::new(11);
        let mut sampler = Sampler::new(&theta);
        for _ in 0..10_000 {
            assert!(sampler.marginal_set(&mut rng).is_empty());
        }
        let traj = sample_timed_trajectory(&theta, &mut rng);
        assert!(traj.sequence.is_empty());
        assert!(traj.t_obs > 0.0);
    }

    #[test]
    fn jump_times_stay_below_observation_time() {
        let theta = ParamMatrix::from_rows(&[[1.0, 0.5, -1.0], [0.0, 0.3, 2.0], [-0.5, 0.2, 0.0]]).unwrap();
        let mut rng = RngState::new(5);
        for _ in 0..2000 {
            let traj = sample_timed_trajectory(&theta, &mut rng);
            let jumps = traj.jump_times();
            assert_eq!(jumps.len(), traj.sequence.len());
            assert!(jumps.windows(2).all(|w| w[0] < w[1]));
            if let Some(&last) = jumps.last() {
                assert!(last < traj.t_obs);
            }
        }
    }

    #[test]
    fn saturated_chain_returns_full_set() {
        let theta = ParamMatrix::diagonal(&[50.0, 50.0]).unwrap();
        let mut rng = RngState::new(2);
        let mut hits = 0;
        for _ in 0..1000 {
            if sample_marginal_set(&theta, &mut rng).len() == 2 {
                hits += 1;
            }
        }
        assert!(hits > 990);
    }

    #[test]
    fn dataset_is_deterministic() {
        let theta = ParamMatrix::from_rows(&[[0.0, 4.0], [0.0, -4.0]]).unwrap();
        let a = generate_dataset(&theta, 300, true, &RngState::new(9)).unwrap();
        let b = generate_dataset(&theta, 300, true, &RngState::new(9)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.times().unwrap().len(), 300);
        let one = generate_dataset(&theta, 1, false, &RngState::new(9)).unwrap();
        assert_eq!(one.len(), 1);
        assert!(one.times().is_none());
        assert!(generate_dataset(&theta, 0, false, &RngState::new(9)).is_err());
    }
}
