use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erf;

use super::{HpoError, HyperParams, IntRange, SearchSpace, TrialRecord};

fn default_startup() -> usize {
    10
}
fn default_candidates() -> usize {
    24
}
fn default_gamma_fraction() -> f64 {
    0.1
}
fn default_gamma_max() -> usize {
    25
}

/// TPE settings. The good set holds `ceil(gamma_fraction · n)` trials, clamped to `[1, gamma_max]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TpeConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_startup")]
    pub n_startup: usize,
    #[serde(default = "default_candidates")]
    pub n_candidates: usize,
    #[serde(default = "default_gamma_fraction")]
    pub gamma_fraction: f64,
    #[serde(default = "default_gamma_max")]
    pub gamma_max: usize,
}

impl Default for TpeConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_startup: default_startup(),
            n_candidates: default_candidates(),
            gamma_fraction: default_gamma_fraction(),
            gamma_max: default_gamma_max(),
        }
    }
}

impl TpeConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), HpoError> {
        if self.n_candidates == 0 {
            return Err(HpoError::Config("n_candidates must be at least 1".into()));
        }
        if !(self.gamma_fraction > 0.0 && self.gamma_fraction <= 1.0) || self.gamma_max == 0 {
            return Err(HpoError::Config("gamma must select at least one trial".into()));
        }
        Ok(())
    }

    pub fn n_good(&self, n: usize) -> usize {
        ((self.gamma_fraction * n as f64).ceil() as usize).clamp(1, self.gamma_max)
    }
}

/// Generator for one trial: the study seed selects the key, the trial id the stream.
pub fn trial_rng(seed: u64, trial_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial_id as u64);
    rng
}

fn uniform_int(r: IntRange, rng: &mut ChaCha8Rng) -> usize {
    rng.random_range(r.lo..=r.hi)
}

/// Independent draw from each range: uniform integers, log-uniform learning rate.
pub fn random_suggest(space: &SearchSpace, rng: &mut ChaCha8Rng) -> Result<HyperParams, HpoError> {
    space.validate()?;
    let hidden_size = uniform_int(space.hidden_size, rng);
    let batch_size = uniform_int(space.batch_size, rng);
    let (lo, hi) = (space.learning_rate.lo.ln(), space.learning_rate.hi.ln());
    let learning_rate = if lo == hi { lo.exp() } else { rng.random_range(lo..=hi).exp() };
    Ok(HyperParams {
        hidden_size,
        batch_size,
        learning_rate: learning_rate.clamp(space.learning_rate.lo, space.learning_rate.hi),
    })
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

/// Mixture of Gaussian kernels truncated to `[lo, hi]`.
///
/// One kernel per observation with a shared Scott's-rule bandwidth plus a wide
/// prior kernel centered on the range. The bandwidth is floored at
/// `range / min(100, kernels + 1)`, which tightens to 1% of the range as
/// observations accumulate.
#[derive(Debug, Clone)]
pub struct ParzenEstimator {
    lo: f64,
    hi: f64,
    mus: Vec<f64>,
    sigmas: Vec<f64>,
    /// log(weight / total weight) - log(truncated mass), per kernel
    log_norm: Vec<f64>,
    weights: Vec<f64>,
}

impl ParzenEstimator {
    pub fn new(observations: &[f64], lo: f64, hi: f64) -> Self {
        let range = (hi - lo).max(f64::MIN_POSITIVE);
        let n = observations.len();
        let scott = if n >= 2 {
            let mean = observations.iter().sum::<f64>() / n as f64;
            let var = observations.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
            var.sqrt() * (n as f64).powf(-0.2)
        } else {
            0.0
        };
        let kernels = (n + 1) as f64;
        let bandwidth = scott.max(range / (kernels + 1.0).min(100.0));

        let mut mus: Vec<f64> = observations.to_vec();
        let mut sigmas = vec![bandwidth; n];
        mus.push(0.5 * (lo + hi));
        sigmas.push(range);
        let weights = vec![1.0; mus.len()];
        let total = weights.len() as f64;
        let log_norm = mus
            .iter()
            .zip(&sigmas)
            .map(|(mu, s)| {
                let mass = std_normal_cdf((hi - mu) / s) - std_normal_cdf((lo - mu) / s);
                (1.0 / total).ln() - mass.max(f64::MIN_POSITIVE).ln()
            })
            .collect();
        Self {
            lo,
            hi,
            mus,
            sigmas,
            log_norm,
            weights,
        }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        if x < self.lo || x > self.hi {
            return f64::NEG_INFINITY;
        }
        let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
        let terms: Vec<f64> = self
            .mus
            .iter()
            .zip(&self.sigmas)
            .zip(&self.log_norm)
            .map(|((mu, s), ln)| {
                let z = (x - mu) / s;
                -0.5 * z * z - s.ln() - half_ln_2pi + ln
            })
            .collect();
        let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return max;
        }
        max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let total: f64 = self.weights.iter().sum();
        let mut pick = rng.random::<f64>() * total;
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            if pick < *w {
                k = i;
                break;
            }
            pick -= w;
        }
        let (mu, s) = (self.mus[k], self.sigmas[k]);
        let a = std_normal_cdf((self.lo - mu) / s);
        let b = std_normal_cdf((self.hi - mu) / s);
        let u = a + rng.random::<f64>() * (b - a);
        let unit = Normal::standard();
        let x = mu + s * unit.inverse_cdf(u.clamp(1e-300, 1.0 - 1e-16));
        if x.is_finite() {
            x.clamp(self.lo, self.hi)
        } else {
            mu.clamp(self.lo, self.hi)
        }
    }
}

/// Draws `n_candidates` from the good-set density and keeps the one with
/// the largest `l(x) / g(x)`; returns the value in the search coordinate.
fn suggest_one(good: &[f64], bad: &[f64], lo: f64, hi: f64, n_candidates: usize, rng: &mut ChaCha8Rng) -> f64 {
    let l = ParzenEstimator::new(good, lo, hi);
    let g = ParzenEstimator::new(bad, lo, hi);
    let mut best: Option<(f64, f64)> = None;
    for _ in 0..n_candidates.max(1) {
        let x = l.sample(rng);
        let score = l.log_pdf(x) - g.log_pdf(x);
        if best.is_none_or(|(s, _)| score > s) {
            best = Some((score, x));
        }
    }
    best.map(|(_, x)| x).expect("at least one candidate")
}

fn int_coordinate(r: IntRange) -> (f64, f64) {
    (r.lo as f64 - 0.5, r.hi as f64 + 0.5)
}

fn round_into(x: f64, r: IntRange) -> usize {
    (x.round().max(0.0) as usize).clamp(r.lo, r.hi)
}

/// Suggests the next configuration from the completed trials in `history`.
///
/// Below `n_startup` completed trials this is a seeded random draw. Otherwise
/// each parameter is chosen independently: trials are ranked by value, the
/// best `n_good` form the good set and the rest the bad set, and the
/// candidate maximizing the density ratio wins. Learning rate is modelled in
/// log space and integers on a linear scale rounded to the nearest value.
pub fn tpe_suggest(
    history: &[TrialRecord],
    space: &SearchSpace,
    config: &TpeConfig,
    rng: &mut ChaCha8Rng,
) -> Result<HyperParams, HpoError> {
    space.validate()?;
    let mut done: Vec<&TrialRecord> = history.iter().filter(|t| t.is_complete()).collect();
    if done.len() < config.n_startup || done.is_empty() {
        return random_suggest(space, rng);
    }
    done.sort_by(|a, b| {
        a.final_value
            .unwrap()
            .total_cmp(&b.final_value.unwrap())
            .then(a.trial_id.cmp(&b.trial_id))
    });
    let n_good = config.n_good(done.len()).min(done.len());
    let (good, bad) = done.split_at(n_good);
    let values = |set: &[&TrialRecord], f: fn(&HyperParams) -> f64| set.iter().map(|t| f(&t.params)).collect::<Vec<_>>();

    let (lo, hi) = int_coordinate(space.hidden_size);
    let hidden = suggest_one(
        &values(good, |p| p.hidden_size as f64),
        &values(bad, |p| p.hidden_size as f64),
        lo,
        hi,
        config.n_candidates,
        rng,
    );
    let (lo, hi) = int_coordinate(space.batch_size);
    let batch = suggest_one(
        &values(good, |p| p.batch_size as f64),
        &values(bad, |p| p.batch_size as f64),
        lo,
        hi,
        config.n_candidates,
        rng,
    );
    let (lo, hi) = (space.learning_rate.lo.ln(), space.learning_rate.hi.ln());
    let lr = if lo == hi {
        lo
    } else {
        suggest_one(
            &values(good, |p| p.learning_rate.ln()),
            &values(bad, |p| p.learning_rate.ln()),
            lo,
            hi,
            config.n_candidates,
            rng,
        )
    };
    Ok(HyperParams {
        hidden_size: round_into(hidden, space.hidden_size),
        batch_size: round_into(batch, space.batch_size),
        learning_rate: lr.exp().clamp(space.learning_rate.lo, space.learning_rate.hi),
    })
}
