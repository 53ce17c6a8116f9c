//! Synthetic cohorts with planted attribute and identity signals.
//!
//! Each user draws attributes first, then a latent profile: walking cadence
//! and a per-period cap that shrink with age, a mean bout length shifted by
//! gender, and an hour-of-day fingerprint that is stable across days. The
//! expected rate of a period is the circadian base rate of its 8-hour block
//! times the fingerprint of its hour times a per-day noise factor. Walking
//! bouts follow a two-state Markov chain whose walking share matches that
//! rate; a walking period draws `min(Poisson(cadence), cap)` steps, an idle
//! period has none. With `bout_intensity = 0` every period instead draws
//! `min(Poisson(rate), cap)`.
//!
//! Users are generated from independent per-user RNG streams, so output
//! does not depend on the number of threads.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::{
    pearson, write_attributes_csv, write_steps_csv, Attribute, Attributes, Cohort, Education, Gender, StepSeries,
    UserRecord, DAYS_PER_WEEK, MAX_AGE, MIN_AGE, PERIODS_PER_DAY,
};
use crate::error::{Error, Result};
use crate::features::segment_actions;

const HOURS_PER_DAY: usize = 24;
const PERIODS_PER_HOUR: usize = PERIODS_PER_DAY / HOURS_PER_DAY;
const MAX_WALK_SHARE: f64 = 0.95;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub n_users: usize,
    pub seed: u64,
    pub age_min: u32,
    pub age_max: u32,
    pub female_share: f64,
    /// Relative shares of low, medium and high education (normalized to sum 1).
    pub education_shares: [f64; 3],
    /// Drop in the probability of high education per standard deviation of age.
    pub education_coupling: f64,
    /// Relative reduction of cadence and cap at `age_max` (linear in age).
    pub age_effect: f64,
    /// Relative increase of the mean bout length for women.
    pub gender_effect: f64,
    /// Mean steps per period in the night, work and leisure blocks.
    pub block_rates: [f64; 3],
    /// Log-scale spread of the per-user hour-of-day fingerprint.
    pub fingerprint_sd: f64,
    /// Log-scale spread of the per-day activity factor.
    pub day_noise_sd: f64,
    /// Mean steps per walking period before the age effect; 0 disables bouts.
    pub bout_intensity: f64,
    /// Log-scale spread of the per-user cadence.
    pub cadence_sd: f64,
    /// Mean bout length in periods.
    pub bout_length: f64,
    /// Steps per period ceiling for the youngest users.
    pub cap: u32,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_users: 1000,
            seed: 0,
            age_min: 30,
            age_max: 91,
            female_share: 0.56,
            education_shares: [0.018, 0.4513, 0.5235],
            education_coupling: 0.112,
            age_effect: 0.5,
            gender_effect: 0.3,
            block_rates: [0.005, 1.5, 2.5],
            fingerprint_sd: 0.6,
            day_noise_sd: 0.2,
            bout_intensity: 36.0,
            cadence_sd: 0.1,
            bout_length: 6.0,
            cap: 45,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::invalid(m));
        if self.n_users == 0 {
            return fail("n_users must be >= 1".into());
        }
        if self.age_min < MIN_AGE || self.age_max > MAX_AGE || self.age_min > self.age_max {
            return fail(format!("age range must lie within [{MIN_AGE}, {MAX_AGE}] with age_min <= age_max"));
        }
        if !(0.0..=1.0).contains(&self.female_share) {
            return fail("female_share must be in [0, 1]".into());
        }
        let shares = self.education_shares;
        if shares.iter().any(|s| !(s.is_finite() && *s >= 0.0)) || shares.iter().sum::<f64>() <= 0.0 {
            return fail("education_shares must be non-negative with a positive sum".into());
        }
        let finite = [
            ("education_coupling", self.education_coupling),
            ("gender_effect", self.gender_effect),
        ];
        for (name, v) in finite {
            if !v.is_finite() {
                return fail(format!("{name} must be finite"));
            }
        }
        if !(0.0..1.0).contains(&self.age_effect) {
            return fail("age_effect must be in [0, 1)".into());
        }
        if self.block_rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return fail("block_rates must be finite and >= 0".into());
        }
        let nonneg = [
            ("fingerprint_sd", self.fingerprint_sd),
            ("day_noise_sd", self.day_noise_sd),
            ("bout_intensity", self.bout_intensity),
            ("cadence_sd", self.cadence_sd),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return fail(format!("{name} must be finite and >= 0"));
            }
        }
        if !(self.bout_length.is_finite() && self.bout_length >= 1.0) {
            return fail("bout_length must be >= 1".into());
        }
        if self.gender_effect <= -1.0 {
            return fail("gender_effect must be > -1".into());
        }
        if self.cap < 1 {
            return fail("cap must be >= 1".into());
        }
        Ok(())
    }
}

/// Ground-truth profile of one generated user.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub user_id: String,
    pub attrs: Attributes,
    pub cadence: f64,
    pub cap: u32,
    pub bout_length: f64,
    pub fingerprint: Vec<f64>,
    pub day_factors: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthCohort {
    pub config: SynthConfig,
    pub records: Vec<UserRecord>,
    pub latents: Vec<Latent>,
}

impl SynthCohort {
    pub fn to_cohort(&self, age_threshold: u32) -> Result<Cohort> {
        let records = self
            .records
            .iter()
            .map(|r| UserRecord::new(r.series.clone(), r.attrs, age_threshold))
            .collect();
        Cohort::from_records(records, age_threshold)
    }

    pub fn write_csv<S: Write, A: Write>(&self, steps: S, attributes: A) -> Result<()> {
        write_steps_csv(steps, &self.records)?;
        write_attributes_csv(attributes, &self.records)
    }
}

fn lognormal(sd: f64) -> LogNormal<f64> {
    LogNormal::new(0.0, sd).expect("sd validated as finite and non-negative")
}

fn block_of(hour: usize) -> usize {
    hour / 8
}

/// Expected steps of every period of `day` for a latent profile.
pub fn expected_rate(config: &SynthConfig, latent: &Latent, day: usize, period: usize) -> f64 {
    let hour = period / PERIODS_PER_HOUR;
    config.block_rates[block_of(hour)] * latent.fingerprint[hour] * latent.day_factors[day]
}

fn draw_attributes<R: Rng>(config: &SynthConfig, rng: &mut R) -> Attributes {
    let age = rng.random_range(config.age_min..=config.age_max);
    let gender = if rng.random::<f64>() < config.female_share {
        Gender::Female
    } else {
        Gender::Male
    };
    // standardized position of `age` within the uniform age range
    let span = f64::from(config.age_max - config.age_min);
    let z = if span > 0.0 {
        (f64::from(age - config.age_min) / span - 0.5) * 12f64.sqrt()
    } else {
        0.0
    };
    let total: f64 = config.education_shares.iter().sum();
    let [p_low, _, p_high] = config.education_shares.map(|s| s / total);
    let p_high = (p_high - config.education_coupling * z).clamp(0.0, 1.0 - p_low);
    let u = rng.random::<f64>();
    let education = if u < p_low {
        Education::Low
    } else if u < p_low + p_high {
        Education::High
    } else {
        Education::Medium
    };
    Attributes::new(gender, age, education).expect("age range validated")
}

fn user_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn poisson_capped<R: Rng>(lambda: f64, cap: u32, rng: &mut R) -> u32 {
    if lambda <= 0.0 {
        return 0;
    }
    let draw: f64 = Poisson::new(lambda).expect("positive finite rate").sample(rng);
    (draw as u32).min(cap)
}

fn generate_user(config: &SynthConfig, index: usize, width: usize) -> (UserRecord, Latent) {
    let mut rng = user_rng(config.seed, index);
    let user_id = format!("u{index:0width$}");
    let attrs = draw_attributes(config, &mut rng);
    let span = f64::from(config.age_max - config.age_min).max(1.0);
    let age_frac = f64::from(attrs.age - config.age_min) / span;
    let slowdown = 1.0 - config.age_effect * age_frac;
    let cadence = config.bout_intensity * slowdown * lognormal(config.cadence_sd).sample(&mut rng);
    let cap = ((f64::from(config.cap) * slowdown).floor() as u32).max(1);
    let female = if attrs.gender == Gender::Female { 1.0 } else { 0.0 };
    let bout_length = (config.bout_length * (1.0 + config.gender_effect * female) * lognormal(0.2).sample(&mut rng)).max(1.0);
    let fingerprint: Vec<f64> = (0..HOURS_PER_DAY).map(|_| lognormal(config.fingerprint_sd).sample(&mut rng)).collect();
    let day_factors: Vec<f64> = (0..DAYS_PER_WEEK).map(|_| lognormal(config.day_noise_sd).sample(&mut rng)).collect();
    let latent = Latent {
        user_id: user_id.clone(),
        attrs,
        cadence,
        cap,
        bout_length,
        fingerprint,
        day_factors,
    };

    let mut counts = Vec::with_capacity(DAYS_PER_WEEK * PERIODS_PER_DAY);
    let walking = config.bout_intensity > 0.0 && cadence > 0.0;
    let walk_dist = walking.then(|| Poisson::new(cadence).expect("positive finite cadence"));
    let p_stop = 1.0 / bout_length;
    let mut in_bout = false;
    for day in 0..DAYS_PER_WEEK {
        for hour in 0..HOURS_PER_DAY {
            let rate = expected_rate(config, &latent, day, hour * PERIODS_PER_HOUR);
            if let Some(dist) = &walk_dist {
                let share = (rate / cadence).min(MAX_WALK_SHARE);
                let p_start = (share * p_stop / (1.0 - share)).min(1.0);
                for _ in 0..PERIODS_PER_HOUR {
                    in_bout = if in_bout {
                        rng.random::<f64>() >= p_stop
                    } else {
                        rng.random::<f64>() < p_start
                    };
                    let steps = if in_bout {
                        (dist.sample(&mut rng) as u32).min(cap)
                    } else {
                        0
                    };
                    counts.push(steps);
                }
            } else {
                for _ in 0..PERIODS_PER_HOUR {
                    counts.push(poisson_capped(rate, cap, &mut rng));
                }
            }
        }
    }
    let series = StepSeries::new(user_id, counts).expect("full week generated");
    (UserRecord::new(series, attrs, crate::cohort::DEFAULT_AGE_THRESHOLD), latent)
}

/// Generates `config.n_users` users with ids `u000..`.
pub fn generate(config: &SynthConfig) -> Result<SynthCohort> {
    config.validate()?;
    let width = (config.n_users.max(2) - 1).to_string().len().max(3);
    let (records, latents) = (0..config.n_users)
        .into_par_iter()
        .map(|i| generate_user(config, i, width))
        .unzip();
    Ok(SynthCohort {
        config: config.clone(),
        records,
        latents,
    })
}

/// Realized strength of a planted signal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalReport {
    pub attribute: Attribute,
    /// Per-user statistic: `max_count` for age and education,
    /// `mean_action_length` for gender.
    pub statistic: String,
    /// Statistic means of class 0 and class 1.
    pub class_means: [f64; 2],
    pub class_sizes: [usize; 2],
    /// `(mean1 - mean0) / pooled sd`; 0 when the pooled sd is 0.
    pub cohens_d: f64,
    /// Pearson correlation of age and education code over all users.
    pub age_education_correlation: Option<f64>,
}

impl SignalReport {
    pub fn separation(&self) -> f64 {
        self.cohens_d.abs()
    }
}

fn mean_action_length(counts: &[u32]) -> f64 {
    let actions = segment_actions(counts);
    if actions.is_empty() {
        return 0.0;
    }
    actions.iter().map(|a| a.len() as f64).sum::<f64>() / actions.len() as f64
}

/// Class separation of the statistic tied to `attribute`, with labels derived
/// at `age_threshold`.
pub fn planted_signal_strength(cohort: &SynthCohort, attribute: Attribute, age_threshold: u32) -> SignalReport {
    let mut groups: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    for r in &cohort.records {
        let labels = crate::cohort::Labels::derive(&r.attrs, age_threshold);
        let Some(y) = labels.binary(attribute) else {
            continue;
        };
        let stat = match attribute {
            Attribute::Gender => mean_action_length(r.series.counts()),
            _ => f64::from(r.series.max_count()),
        };
        groups[usize::from(y)].push(stat);
    }
    let moments = |g: &[f64]| {
        let n = g.len() as f64;
        let m = g.iter().sum::<f64>() / n.max(1.0);
        let ss = g.iter().map(|x| (x - m).powi(2)).sum::<f64>();
        (m, ss)
    };
    let (m0, ss0) = moments(&groups[0]);
    let (m1, ss1) = moments(&groups[1]);
    let dof = (groups[0].len() + groups[1].len()).saturating_sub(2) as f64;
    let pooled = if dof > 0.0 { ((ss0 + ss1) / dof).sqrt() } else { 0.0 };
    let cohens_d = if pooled > 0.0 && !groups[0].is_empty() && !groups[1].is_empty() {
        (m1 - m0) / pooled
    } else {
        0.0
    };
    let ages: Vec<f64> = cohort.records.iter().map(|r| f64::from(r.attrs.age)).collect();
    let edus: Vec<f64> = cohort.records.iter().map(|r| r.attrs.education.code()).collect();
    SignalReport {
        attribute,
        statistic: match attribute {
            Attribute::Gender => "mean_action_length",
            _ => "max_count",
        }
        .to_string(),
        class_means: [m0, m1],
        class_sizes: [groups[0].len(), groups[1].len()],
        cohens_d,
        age_education_correlation: pearson(&ages, &edus),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize) -> SynthConfig {
        SynthConfig {
            n_users: n,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn zero_rates_give_zero_series() {
        let cfg = SynthConfig {
            block_rates: [0.0; 3],
            ..small(3)
        };
        let c = generate(&cfg).unwrap();
        assert!(c.records.iter().all(|r| r.series.max_count() == 0));
        let cfg = SynthConfig {
            bout_intensity: 0.0,
            ..cfg
        };
        assert!(generate(&cfg).unwrap().records.iter().all(|r| r.series.max_count() == 0));
    }

    #[test]
    fn deterministic_and_capped() {
        let a = generate(&small(4)).unwrap();
        let b = generate(&small(4)).unwrap();
        assert_eq!(a, b);
        for (r, l) in a.records.iter().zip(&a.latents) {
            assert!(r.series.max_count() <= l.cap);
            assert!(l.cap <= 45);
        }
    }

    #[test]
    fn ids_sort_in_generation_order() {
        let c = generate(&small(12)).unwrap();
        let ids: Vec<&str> = c.records.iter().map(|r| r.user_id()).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
        assert_eq!(ids[0], "u000");
    }

    #[test]
    fn invalid_configs_rejected() {
        let bad = [
            SynthConfig { cap: 0, ..small(1) },
            SynthConfig { block_rates: [-1.0, 1.0, 1.0], ..small(1) },
            SynthConfig { age_min: 10, ..small(1) },
            SynthConfig { n_users: 0, ..small(1) },
            SynthConfig { gender_effect: f64::NAN, ..small(1) },
            SynthConfig { education_shares: [0.0, 0.0, 0.0], ..small(1) },
        ];
        for cfg in bad {
            assert!(generate(&cfg).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn noise_free_days_share_rate_curve() {
        let cfg = SynthConfig {
            fingerprint_sd: 0.0,
            day_noise_sd: 0.0,
            ..small(2)
        };
        let c = generate(&cfg).unwrap();
        for l in &c.latents {
            for p in (0..PERIODS_PER_DAY).step_by(97) {
                let r0 = expected_rate(&cfg, l, 0, p);
                for d in 1..DAYS_PER_WEEK {
                    assert_eq!(expected_rate(&cfg, l, d, p), r0);
                }
            }
        }
    }
}
