//! Synthetic event generation: sampling, constraint filtering, proportional
//! assembly and reconstruction of speed profiles.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{Sample, Severity, SourceGroup, SpeedProfile};
use crate::mvdist::{classify, BundleSampler, Model, SubdatasetId, SubmodelBundle};
use crate::pwl_fit::{sample_weights, EventParams, PwlFit};
use crate::stats::mix_seed;
use crate::{G, T_START};

/// Longest duration a single segment parameter may take.
pub const TAU_MAX: f64 = -T_START;

/// Retry cap per bundle, as a multiple of its target count.
pub const DEFAULT_CAP_FACTOR: usize = 100;

/// Span over which speed must stay non-negative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum SpeedCheck {
    /// All of `[−5, 0]`, with the earliest segment extended backward.
    #[default]
    FullDuration,
    /// Only `[−(τs+τ1+τ2), 0]`.
    ModeledSpan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RejectReason {
    Range,
    PhysicalAccel,
    PhysicalSpeed,
    Categorization,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pub tau_max: f64,
    pub accel_limit: f64,
    pub speed_check: SpeedCheck,
    /// Sub-dataset an accepted event must categorize into.
    pub category: Option<SubdatasetId>,
}

impl Default for ConstraintSet {
    fn default() -> Self {
        ConstraintSet {
            tau_max: TAU_MAX,
            accel_limit: G,
            speed_check: SpeedCheck::FullDuration,
            category: None,
        }
    }
}

impl ConstraintSet {
    pub fn for_label(id: SubdatasetId, speed_check: SpeedCheck) -> Self {
        ConstraintSet {
            speed_check,
            category: Some(id),
            ..Default::default()
        }
    }

    /// First violated constraint family, checked in the order range,
    /// acceleration, speed, categorization.
    pub fn check(&self, e: &EventParams) -> std::result::Result<(), RejectReason> {
        let taus = [e.tau_s, e.tau_1, e.tau_2];
        if !e.vector().iter().all(|v| v.is_finite())
            || e.v_c < 0.0
            || taus.iter().any(|&t| !(0.0..=self.tau_max).contains(&t))
        {
            return Err(RejectReason::Range);
        }
        if e.a1.abs() > self.accel_limit || e.a2.abs() > self.accel_limit {
            return Err(RejectReason::PhysicalAccel);
        }
        let span_start = match self.speed_check {
            SpeedCheck::FullDuration => T_START,
            SpeedCheck::ModeledSpan => -(taus.iter().sum::<f64>()).min(TAU_MAX),
        };
        if profile_knots(e)
            .iter()
            .any(|&(t, v)| t >= span_start - 1e-12 && v < 0.0)
        {
            return Err(RejectReason::PhysicalSpeed);
        }
        if let Some(id) = self.category {
            if classify(e).0 != id {
                return Err(RejectReason::Categorization);
            }
        }
        Ok(())
    }
}

/// Exact tallies of one filtering pass; the fields sum to the draw count.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionCounts {
    pub accepted: usize,
    pub range: usize,
    pub physical_accel: usize,
    pub physical_speed: usize,
    pub categorization: usize,
}

impl RejectionCounts {
    pub fn draws(&self) -> usize {
        self.accepted + self.rejected()
    }

    pub fn rejected(&self) -> usize {
        self.range + self.physical_accel + self.physical_speed + self.categorization
    }

    fn record(&mut self, r: std::result::Result<(), RejectReason>) {
        match r {
            Ok(()) => self.accepted += 1,
            Err(RejectReason::Range) => self.range += 1,
            Err(RejectReason::PhysicalAccel) => self.physical_accel += 1,
            Err(RejectReason::PhysicalSpeed) => self.physical_speed += 1,
            Err(RejectReason::Categorization) => self.categorization += 1,
        }
    }

    /// The most frequent rejection reason, if anything was rejected.
    pub fn dominant(&self) -> Option<RejectReason> {
        [
            (RejectReason::Range, self.range),
            (RejectReason::PhysicalAccel, self.physical_accel),
            (RejectReason::PhysicalSpeed, self.physical_speed),
            (RejectReason::Categorization, self.categorization),
        ]
        .into_iter()
        .filter(|&(_, n)| n > 0)
        .max_by_key(|&(r, n)| (n, std::cmp::Reverse(r)))
        .map(|(r, _)| r)
    }
}

/// `n` raw draws from a bundle, without filtering.
pub fn sample_submodel(b: &SubmodelBundle, n: usize, seed: u64) -> Vec<EventParams> {
    let sampler = BundleSampler::new(b);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| sampler.sample(&mut rng)).collect()
}

pub fn filter_valid(events: &[EventParams], c: &ConstraintSet) -> (Vec<EventParams>, RejectionCounts) {
    let mut counts = RejectionCounts::default();
    let mut accepted = Vec::new();
    for e in events {
        let r = c.check(e);
        if r.is_ok() {
            accepted.push(e.clone());
        }
        counts.record(r);
    }
    (accepted, counts)
}

/// Largest-remainder apportionment of `n` over `shares` (normalized first).
pub fn apportion(shares: &[f64], n: usize) -> Vec<usize> {
    let total: f64 = shares.iter().sum();
    let quotas: Vec<f64> = shares.iter().map(|s| s / total * n as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let left = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    // Stable sort: equal remainders go to the earlier bundle.
    order.sort_by(|&a, &b| (quotas[b] - quotas[b].floor()).total_cmp(&(quotas[a] - quotas[a].floor())));
    for &i in order.iter().take(left) {
        counts[i] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleReport {
    pub label: SubdatasetId,
    pub target: usize,
    pub counts: RejectionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticDataset {
    /// Unit-weight events ordered by sub-dataset.
    pub events: Vec<EventParams>,
    /// Parallel to `events`.
    pub labels: Vec<SubdatasetId>,
    pub bundles: Vec<BundleReport>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub speed_check: SpeedCheck,
    pub cap_factor: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            speed_check: SpeedCheck::FullDuration,
            cap_factor: DEFAULT_CAP_FACTOR,
        }
    }
}

fn generate_bundle(
    b: &SubmodelBundle,
    target: usize,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<(Vec<EventParams>, RejectionCounts)> {
    let constraints = ConstraintSet::for_label(b.label, cfg.speed_check);
    let sampler = BundleSampler::new(b);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = cfg.cap_factor.saturating_mul(target);
    let mut counts = RejectionCounts::default();
    let mut out = Vec::with_capacity(target);
    while out.len() < target {
        if counts.draws() >= cap {
            return Err(Error::RejectionCapExceeded {
                bundle: b.label.to_string(),
                reason: format!("{:?}", counts.dominant()),
                accepted: out.len(),
                target,
                draws: counts.draws(),
            });
        }
        let e = sampler.sample(&mut rng);
        let r = constraints.check(&e);
        if r.is_ok() {
            out.push(e);
        }
        counts.record(r);
    }
    Ok((out, counts))
}

/// `n` valid events split over the bundles in proportion to their training
/// weight shares. Each bundle draws from its own stream derived from `seed`,
/// so the result does not depend on scheduling.
pub fn assemble_synthetic(
    bundles: &[SubmodelBundle],
    n: usize,
    seed: u64,
    cfg: &SynthConfig,
) -> Result<SyntheticDataset> {
    if bundles.is_empty() {
        return Err(Error::EmptyInput);
    }
    let shares: Vec<f64> = bundles.iter().map(|b| b.train_weight_share).collect();
    let targets = apportion(&shares, n);
    let results = crate::par::map_range(bundles.len(), |i| {
        let b = &bundles[i];
        generate_bundle(b, targets[i], mix_seed(seed, b.label as u64 + 1), cfg)
    });
    let mut order: Vec<usize> = (0..bundles.len()).collect();
    order.sort_by_key(|&i| bundles[i].label);
    let mut results: Vec<Option<Result<(Vec<EventParams>, RejectionCounts)>>> =
        results.into_iter().map(Some).collect();
    let mut out = SyntheticDataset {
        events: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        bundles: Vec::new(),
        seed,
    };
    for i in order {
        let (events, counts) = results[i].take().expect("each bundle visited once")?;
        let label = bundles[i].label;
        for mut e in events {
            e.event_id = format!("syn-{:06}", out.events.len() + 1);
            e.weight = 1.0;
            out.events.push(e);
            out.labels.push(label);
        }
        out.bundles.push(BundleReport {
            label,
            target: targets[i],
            counts,
        });
    }
    Ok(out)
}

/// [`assemble_synthetic`] over every bundle of a model.
pub fn generate(model: &Model, n: usize, seed: u64, cfg: &SynthConfig) -> Result<SyntheticDataset> {
    assemble_synthetic(&model.bundles, n, seed, cfg)
}

/// Knots of the piecewise-linear profile built backward from time zero,
/// ending at `t = −5`: the earliest modeled segment is extended back if the
/// segments are shorter than 5 s, and cut at −5 if longer.
pub fn profile_knots(e: &EventParams) -> Vec<(f64, f64)> {
    let mut knots = vec![(0.0, e.v_c)];
    let (mut t, mut v) = (0.0, e.v_c);
    let mut earliest_slope = 0.0;
    for (dur, slope) in [(e.tau_s, 0.0), (e.tau_1, e.a1), (e.tau_2, e.a2)] {
        if dur <= 0.0 {
            continue;
        }
        earliest_slope = slope;
        let d = dur.min(t - T_START);
        t -= d;
        v -= slope * d;
        knots.push((t, v));
        if t <= T_START {
            break;
        }
    }
    if t > T_START {
        v -= earliest_slope * (t - T_START);
        knots.push((T_START, v));
    }
    knots.reverse();
    knots
}

/// Piecewise-linear fit whose extraction yields `e` back (within the segment
/// semantics: zero-length segments are dropped).
pub fn params_to_fit(e: &EventParams) -> PwlFit {
    let mut knots = profile_knots(e);
    knots.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-12);
    if knots.len() < 2 {
        knots = vec![(T_START, e.v_c), (0.0, e.v_c)];
    }
    PwlFit::from_knots(&knots)
}

/// Speed profile sampled every `dt` seconds on `[−5, 0]`, grid aligned to 0.
/// The profile carries the event's group, or near-crash metadata when it has
/// none, since it extends to time zero.
pub fn params_to_profile(e: &EventParams, dt: f64) -> Result<SpeedProfile> {
    if !(dt > 0.0) {
        return Err(Error::Config(format!("dt must be positive, got {dt}")));
    }
    let fit = params_to_fit(e);
    let n = (-T_START / dt + 1e-9).floor() as usize;
    let times: Vec<f64> = (0..=n).rev().map(|k| -(k as f64) * dt).collect();
    let w = sample_weights(&times);
    let samples: Vec<Sample> = times
        .iter()
        .zip(&w)
        .map(|(&t, &w)| Sample { t, v: fit.predict(t), w })
        .collect();
    Ok(SpeedProfile {
        event_id: e.event_id.clone(),
        source_group: e.source_group.unwrap_or(SourceGroup::Shrp2Nc),
        severity: e.severity.unwrap_or(Severity::None),
        weight_sum: w.iter().sum(),
        samples,
        native_weight: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pwl_fit::{extract_params, FitConfig};
    use approx::assert_relative_eq;

    fn p(v: [f64; 6]) -> EventParams {
        EventParams::new(v[0], v[1], v[2], v[3], v[4], v[5])
    }

    #[test]
    fn profile_construction_examples() {
        let f = params_to_fit(&p([5.0, -3.0, 2.0, 1.0, 2.0, 2.0]));
        assert_relative_eq!(f.predict(0.0), 5.0);
        assert_relative_eq!(f.predict(-1.0), 5.0);
        assert_relative_eq!(f.predict(-3.0), 11.0);
        assert_relative_eq!(f.predict(-5.0), 7.0);
        let prof = params_to_profile(&p([8.0, 0.0, 0.0, 5.0, 0.0, 0.0]), 0.1).unwrap();
        assert_eq!(prof.samples.len(), 51);
        assert_eq!(prof.samples[0].t, -5.0);
        assert_eq!(prof.samples[50].t, 0.0);
        assert!(prof.samples.iter().all(|s| s.v == 8.0));
    }

    #[test]
    fn short_profiles_extend_and_long_ones_truncate() {
        let k = profile_knots(&p([2.0, -1.0, -1.0, 0.0, 2.0, 0.0]));
        assert_eq!(k.first().copied(), Some((-5.0, 7.0)));
        let k = profile_knots(&p([2.0, -1.0, 1.0, 2.0, 2.0, 3.0]));
        assert_eq!(k.first().copied(), Some((-5.0, 3.0)));
        assert_eq!(k.len(), 4);
    }

    #[test]
    fn extraction_inverts_construction() {
        let cfg = FitConfig::default();
        for v in [
            [5.0, -3.0, 2.0, 1.0, 2.0, 2.0],
            [3.0, -2.0, -4.0, 0.0, 1.5, 3.5],
            [6.0, 1.2, -0.7, 2.5, 2.5, 0.0],
        ] {
            let mut e = p(v);
            if e.tau_2 == 0.0 {
                e.a2 = e.a1;
            }
            let back = extract_params(&params_to_fit(&e), &cfg);
            for (a, b) in back.vector().iter().zip(e.vector()) {
                assert_relative_eq!(*a, b, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn constraint_examples() {
        let c = ConstraintSet::default();
        assert_eq!(c.check(&p([5.0, -12.0, -12.0, 0.0, 1.0, 0.0])), Err(RejectReason::PhysicalAccel));
        let s4 = ConstraintSet::for_label(SubdatasetId::S4, SpeedCheck::FullDuration);
        assert_eq!(s4.check(&p([5.0, 0.5, -3.0, 0.0, 1.0, 1.0])), Err(RejectReason::Categorization));
        assert_eq!(s4.check(&p([5.0, -0.5, -3.0, 0.0, 1.0, 1.0])), Ok(()));
        // 2 m/s² over the last second, 8 m/s at impact: the modeled span
        // stays positive but the back-extension reaches −2 m/s at −5 s.
        let e = p([8.0, 2.0, 2.0, 0.0, 1.0, 0.0]);
        assert_relative_eq!(profile_knots(&e)[0].1, -2.0);
        assert_eq!(c.check(&e), Err(RejectReason::PhysicalSpeed));
        let modeled = ConstraintSet {
            speed_check: SpeedCheck::ModeledSpan,
            ..c
        };
        assert_eq!(modeled.check(&e), Ok(()));
        assert_eq!(c.check(&p([-0.1, 0.0, 0.0, 5.0, 0.0, 0.0])), Err(RejectReason::Range));
        assert_eq!(c.check(&p([1.0, 0.0, 0.0, 5.5, 0.0, 0.0])), Err(RejectReason::Range));
    }

    #[test]
    fn apportionment_examples() {
        assert_eq!(apportion(&[0.5, 0.5], 10), vec![5, 5]);
        assert_eq!(
            apportion(&[25.5, 10.5, 10.2, 15.7, 4.6, 13.3, 20.2], 10_000),
            vec![2550, 1050, 1020, 1570, 460, 1330, 2020]
        );
        assert_eq!(apportion(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        assert_eq!(apportion(&[0.2, 0.3, 0.5], 7).iter().sum::<usize>(), 7);
    }

    #[test]
    fn tallies_sum_to_draws() {
        let events: Vec<EventParams> = (0..50)
            .map(|i| p([i as f64 - 5.0, -(i as f64) * 0.3, -(i as f64) * 0.3, 0.0, 2.0, 0.0]))
            .collect();
        let (acc, counts) = filter_valid(&events, &ConstraintSet::default());
        assert_eq!(counts.draws(), 50);
        assert_eq!(acc.len(), counts.accepted);
        assert!(counts.range > 0 && counts.physical_accel > 0);
    }
}
