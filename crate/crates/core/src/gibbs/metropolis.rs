//! Single-site Metropolis sampling of Gibbs states.

use rand::RngExt;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{jackknife, Estimate, GibbsState, Observable, SamplingDiagnostics};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sitespace::{SiteKind, SiteSpace};

/// Acceptance rates outside this window trigger a warning.
pub const ACCEPTANCE_WINDOW: (f64, f64) = (0.05, 0.95);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetropolisSettings {
    pub seed: u64,
    pub burn_in_sweeps: usize,
    pub measure_sweeps: usize,
    /// Independent chains, seeded from `seed` by stream index.
    #[serde(default = "default_chains")]
    pub chains: usize,
    /// Jackknife blocks over the concatenated chains.
    #[serde(default = "default_blocks")]
    pub blocks: usize,
}

fn default_chains() -> usize {
    4
}
fn default_blocks() -> usize {
    32
}

impl MetropolisSettings {
    pub fn new(seed: u64, burn_in_sweeps: usize, measure_sweeps: usize) -> Self {
        MetropolisSettings { seed, burn_in_sweeps, measure_sweeps, chains: default_chains(), blocks: default_blocks() }
    }
}

pub(crate) fn sample_base(space: &SiteSpace, rng: &mut ChaCha8Rng) -> f64 {
    match space.kind() {
        SiteKind::FiniteSpin => {
            let r: f64 = rng.random();
            let mut acc = 0.0;
            for (x, w) in space.points().iter().zip(space.weights()) {
                acc += w;
                if r < acc {
                    return *x;
                }
            }
            *space.points().last().expect("non-empty")
        }
        SiteKind::UnitInterval => rng.random(),
        SiteKind::RealLine => Normal::new(0.0, space.sigma()).expect("positive sigma").sample(rng),
    }
}

/// A Markov chain over configurations; each item is the configuration after one sweep.
pub struct MetropolisChain<'a> {
    state: &'a GibbsState,
    rng: ChaCha8Rng,
    u: Vec<f64>,
    log_base: Vec<f64>,
    accepted: u64,
    proposed: u64,
}

impl<'a> MetropolisChain<'a> {
    pub fn new(state: &'a GibbsState, seed: u64) -> Result<Self> {
        if !state.action().is_nonnegative() {
            return Err(Error::Unsupported(format!(
                "Metropolis needs a non-negative weight, {} may be signed",
                state.action().name()
            )));
        }
        let mut rng = rng_from_seed(seed);
        let space = state.space();
        let n = state.torus().cube_count();
        let u: Vec<f64> = (0..n).map(|_| sample_base(space, &mut rng)).collect();
        let log_base = space.weights().iter().map(|w| w.ln()).collect();
        Ok(MetropolisChain { state, rng, u, log_base, accepted: 0, proposed: 0 })
    }

    pub fn configuration(&self) -> &[f64] {
        &self.u
    }

    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    fn propose(&mut self, x: f64) -> (f64, f64) {
        let space = self.state.space();
        match space.kind() {
            SiteKind::FiniteSpin => {
                let i = self.rng.random_range(0..space.size());
                let j = space.label_index(x).expect("label");
                (space.points()[i], self.log_base[i] - self.log_base[j])
            }
            kind => {
                let step = space.proposal_step();
                let mut y = x + step * (2.0 * self.rng.random::<f64>() - 1.0);
                if kind == SiteKind::UnitInterval {
                    while !(0.0..=1.0).contains(&y) {
                        y = if y < 0.0 { -y } else { 2.0 - y };
                    }
                }
                (y, space.log_base_density(y) - space.log_base_density(x))
            }
        }
    }

    pub fn sweep(&mut self) {
        let torus = self.state.torus();
        let action = self.state.action();
        for site in 0..self.u.len() {
            let x = self.u[site];
            let (y, log_base_ratio) = self.propose(x);
            let before = action.local_log_weight(torus, &self.u, site);
            self.u[site] = y;
            let after = action.local_log_weight(torus, &self.u, site);
            let log_ratio = after - before + log_base_ratio;
            self.proposed += 1;
            let accept = if log_ratio.is_nan() {
                // Leaving a zero-weight configuration is always allowed.
                before == f64::NEG_INFINITY && after > f64::NEG_INFINITY
            } else {
                log_ratio >= 0.0 || self.rng.random::<f64>().ln() < log_ratio
            };
            if accept {
                self.accepted += 1;
            } else {
                self.u[site] = x;
            }
        }
    }
}

impl Iterator for MetropolisChain<'_> {
    type Item = Vec<f64>;

    fn next(&mut self) -> Option<Vec<f64>> {
        self.sweep();
        Some(self.u.clone())
    }
}

/// `n_sweeps` configurations from one chain.
pub fn metropolis_sample(state: &GibbsState, n_sweeps: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    Ok(MetropolisChain::new(state, seed)?.take(n_sweeps).collect())
}

pub(crate) struct Run {
    /// `series[i][t]`: observable `i` after measured sweep `t`, chains concatenated.
    pub series: Vec<Vec<f64>>,
    pub diagnostics: SamplingDiagnostics,
}

pub(crate) fn run(state: &GibbsState, s: &MetropolisSettings, obs: &[Observable]) -> Result<Run> {
    if s.chains == 0 || s.measure_sweeps == 0 {
        return Err(Error::Precondition("need at least one chain and one measured sweep".into()));
    }
    let per_chain: Vec<(Vec<Vec<f64>>, u64, u64)> = (0..s.chains)
        .into_par_iter()
        .map(|c| {
            let mut chain = MetropolisChain::new(state, derive_seed(s.seed, c as u64))?;
            for _ in 0..s.burn_in_sweeps {
                chain.sweep();
            }
            chain.accepted = 0;
            chain.proposed = 0;
            let mut series = vec![Vec::with_capacity(s.measure_sweeps); obs.len()];
            for _ in 0..s.measure_sweeps {
                chain.sweep();
                for (o, out) in obs.iter().zip(series.iter_mut()) {
                    out.push(o.eval(&chain.u));
                }
            }
            Ok((series, chain.accepted, chain.proposed))
        })
        .collect::<Result<_>>()?;
    let mut series = vec![Vec::with_capacity(s.chains * s.measure_sweeps); obs.len()];
    let (mut acc, mut prop) = (0u64, 0u64);
    for (chain_series, a, p) in per_chain {
        for (out, cs) in series.iter_mut().zip(chain_series) {
            out.extend(cs);
        }
        acc += a;
        prop += p;
    }
    let rate = acc as f64 / prop.max(1) as f64;
    let mut warnings = Vec::new();
    if !(ACCEPTANCE_WINDOW.0..=ACCEPTANCE_WINDOW.1).contains(&rate) {
        let msg = format!("acceptance rate {rate:.3} outside [{}, {}]", ACCEPTANCE_WINDOW.0, ACCEPTANCE_WINDOW.1);
        log::warn!("{msg}");
        warnings.push(msg);
    }
    let tau_int = series.iter().map(|x| super::integrated_autocorrelation(x)).collect();
    Ok(Run { series, diagnostics: SamplingDiagnostics { acceptance_rate: rate, tau_int, warnings } })
}

/// Mean of `v` over independent draws from the base product measure.
pub(crate) fn base_sampled_partition(state: &GibbsState, s: &MetropolisSettings) -> Result<Estimate> {
    let n = state.torus().cube_count();
    let draws = s.chains.max(1) * s.measure_sweeps.max(1);
    let mut rng = rng_from_seed(derive_seed(s.seed, u64::MAX));
    let values: Vec<f64> = (0..draws)
        .map(|_| {
            let u: Vec<f64> = (0..n).map(|_| sample_base(state.space(), &mut rng)).collect();
            state.action().weight(state.torus(), &u)
        })
        .collect();
    let (value, stderr) = jackknife(&[values], s.blocks, |m| m[0]);
    if !(value > 0.0) {
        return Err(Error::DegeneratePartition(value));
    }
    Ok(Estimate { value, stderr: Some(stderr) })
}
