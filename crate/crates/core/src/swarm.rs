//! Push-sum gossip over a seeded round-robin pairing schedule.
//!
//! Every agent holds `(s, w)`: its local value and a weight that is 1 for the
//! leader and 0 elsewhere. Each round pairs agents and both members of a pair
//! adopt the average of their `(s, w)`; `s / w` converges to the district
//! total at every agent.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::fixed::{Fixed, FixedError};

/// Perfect matchings for one cycle over `n` agents via the circle method.
/// Odd `n` leaves one agent idle per round.
fn cycle_pairs(order: &[usize]) -> Vec<Vec<(usize, usize)>> {
    let mut slots: Vec<Option<usize>> = order.iter().copied().map(Some).collect();
    if slots.len() % 2 == 1 {
        slots.push(None);
    }
    let m = slots.len();
    let mut rounds = Vec::with_capacity(m.saturating_sub(1));
    for _ in 0..m.saturating_sub(1) {
        let pairs = (0..m / 2)
            .filter_map(|i| match (slots[i], slots[m - 1 - i]) {
                (Some(a), Some(b)) => Some((a, b)),
                _ => None,
            })
            .collect();
        rounds.push(pairs);
        // keep slot 0 fixed, rotate the rest by one
        let last = slots.pop().expect("m >= 2");
        slots.insert(1, last);
    }
    rounds
}

/// The pairing used in each of `rounds` rounds. The agent order is reshuffled
/// from the seed at the start of every cycle.
pub fn schedule(n: usize, rounds: usize, seed: u64) -> Vec<Vec<(usize, usize)>> {
    let mut out = Vec::with_capacity(rounds);
    if n < 2 {
        out.resize(rounds, Vec::new());
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    while out.len() < rounds {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        for pairs in cycle_pairs(&order) {
            if out.len() == rounds {
                break;
            }
            out.push(pairs);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PushSum {
    pub s: Vec<f64>,
    pub w: Vec<f64>,
    /// Exact district total the estimates converge to.
    pub target: f64,
}

impl PushSum {
    /// Agent 0 is the leader.
    pub fn new(values: &[f64]) -> PushSum {
        let mut w = vec![0.0; values.len()];
        if let Some(first) = w.first_mut() {
            *first = 1.0;
        }
        PushSum { s: values.to_vec(), w, target: values.iter().sum() }
    }

    pub fn round(&mut self, pairs: &[(usize, usize)]) {
        for &(a, b) in pairs {
            let s = (self.s[a] + self.s[b]) / 2.0;
            let w = (self.w[a] + self.w[b]) / 2.0;
            self.s[a] = s;
            self.s[b] = s;
            self.w[a] = w;
            self.w[b] = w;
        }
    }

    /// `s / w` per agent; `None` while an agent has received no weight.
    pub fn estimates(&self) -> Vec<Option<f64>> {
        self.s.iter().zip(&self.w).map(|(s, w)| (*w > 0.0).then(|| s / w)).collect()
    }

    /// Σ (s_i − T·w_i)², zero exactly when every agent's estimate is T.
    /// Pairwise averaging never increases it.
    pub fn potential(&self) -> f64 {
        self.s.iter().zip(&self.w).map(|(s, w)| (s - self.target * w).powi(2)).sum()
    }

    /// Largest relative error over all agents (infinite while any agent has
    /// no weight).
    pub fn max_relative_error(&self) -> f64 {
        let scale = self.target.abs().max(f64::MIN_POSITIVE);
        self.estimates()
            .iter()
            .map(|e| e.map_or(f64::INFINITY, |e| (e - self.target).abs() / scale))
            .fold(0.0, f64::max)
    }
}

/// Rounds that comfortably reach 1e-9 relative error for districts up to a
/// few hundred agents on this schedule.
pub fn default_rounds(n: usize) -> usize {
    if n < 2 {
        0
    } else {
        12 * n.next_power_of_two().max(8)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwarmRun {
    pub estimates: Vec<Option<f64>>,
    pub potential: Vec<f64>,
    pub rounds: usize,
}

/// Runs push-sum for `rounds` rounds; `potential[r]` is the value after `r` rounds.
pub fn run(values: &[f64], rounds: usize, seed: u64) -> SwarmRun {
    let mut ps = PushSum::new(values);
    let mut potential = vec![ps.potential()];
    for pairs in schedule(values.len(), rounds, seed) {
        ps.round(&pairs);
        potential.push(ps.potential());
    }
    SwarmRun { estimates: ps.estimates(), potential, rounds }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Split {
    pub total: Fixed,
    pub to_central: Fixed,
    pub to_trade: Fixed,
}

/// Rounds the central share half-even and derives the traded share by
/// subtraction, so the two always add up to `total`.
pub fn split(total: Fixed, central_fraction: Fixed) -> Result<Split, FixedError> {
    let to_central = total.mul(central_fraction)?;
    Ok(Split { total, to_central, to_trade: total - to_central })
}

/// Aggregates Fixed surpluses: the leader's converged estimate, rounded to
/// four digits.
pub fn aggregate(values: &[Fixed], rounds: usize, seed: u64) -> Result<Option<(Fixed, SwarmRun)>, FixedError> {
    if values.is_empty() {
        return Ok(None);
    }
    let floats: Vec<f64> = values.iter().map(|v| v.to_f64()).collect();
    let run = run(&floats, rounds, seed);
    let leader = run.estimates[0].expect("leader always holds weight");
    Ok(Some((Fixed::from_f64_round(leader)?, run)))
}
