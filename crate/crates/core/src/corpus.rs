//! Seeded synthetic corpora with known ground truth, used by tests, benches
//! and the bundled demo data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Normal};

use crate::combine::{Stage, WeightedDataset};
use crate::ingest::{RawEvent, Severity, SourceGroup};
use crate::mvdist::{classify, SubdatasetId};
use crate::pwl_fit::EventParams;
use crate::synth::{profile_knots, ConstraintSet, SpeedCheck};
use crate::T_START;

fn gamma(rng: &mut ChaCha8Rng, shape: f64, scale: f64) -> f64 {
    Gamma::new(shape, scale).expect("valid gamma parameters").sample(rng)
}

fn normal(rng: &mut ChaCha8Rng, mean: f64, sd: f64) -> f64 {
    Normal::new(mean, sd).expect("valid normal parameters").sample(rng)
}

/// Linear interpolation through `knots`, extrapolating the end segments.
fn speed_at(knots: &[(f64, f64)], t: f64) -> f64 {
    let i = knots
        .windows(2)
        .position(|k| t <= k[1].0)
        .unwrap_or(knots.len() - 2);
    let ((t0, v0), (t1, v1)) = (knots[i], knots[i + 1]);
    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
}

/// A near-crash profile with a known number of breakpoints.
#[derive(Debug, Clone)]
pub struct RecoveryCase {
    pub event: RawEvent,
    pub n_b: usize,
    pub breakpoints: Vec<f64>,
}

const MAX_SLOPE: f64 = 8.0;

/// Design of a breakpoint-recovery corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoverySpec {
    /// Range of |slope change| at each breakpoint, m/s².
    pub slope_change: (f64, f64),
    /// Minimum spacing between breakpoints and from either end, s.
    pub min_gap: f64,
    pub noise_sd: f64,
}

impl Default for RecoverySpec {
    fn default() -> Self {
        RecoverySpec {
            slope_change: (3.0, 8.0),
            min_gap: 1.0,
            noise_sd: 0.05,
        }
    }
}

/// Piecewise-linear profiles on `[−5, 0]` at 10 Hz with 0–3 breakpoints,
/// slopes bounded by 8 m/s² (a change that would
/// exceed the bound is applied in the other direction), a speed range of at least 4 m/s, a minimum
/// speed of 0.5 m/s and Gaussian noise.
pub fn recovery_cases(n: usize, spec: &RecoverySpec, seed: u64) -> Vec<RecoveryCase> {
    let gap = spec.min_gap;
    let (lo_change, hi_change) = spec.slope_change;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| loop {
            let n_b = rng.random_range(0..=3);
            let mut bps: Vec<f64> = (0..n_b).map(|_| rng.random_range(T_START + gap..-gap)).collect();
            bps.sort_by(f64::total_cmp);
            if bps.windows(2).any(|w| w[1] - w[0] < gap) {
                continue;
            }
            let mut slope: f64 = rng.random_range(-5.0..3.0);
            let mut knots = vec![(T_START, rng.random_range(5.0..25.0))];
            for &b in bps.iter().chain(std::iter::once(&0.0)) {
                let (t0, v0) = *knots.last().unwrap();
                knots.push((b, v0 + slope * (b - t0)));
                let change = rng.random_range(lo_change..hi_change);
                let up = if slope + change > MAX_SLOPE {
                    false
                } else if slope - change < -MAX_SLOPE {
                    true
                } else {
                    rng.random()
                };
                slope += if up { change } else { -change };
            }
            let vs: Vec<f64> = knots.iter().map(|k| k.1).collect();
            let lo = vs.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if lo < 0.5 || hi - lo < 4.0 {
                continue;
            }
            let samples = (0..=50)
                .map(|k| {
                    let t = T_START + k as f64 * 0.1;
                    (t, (speed_at(&knots, t) + normal(&mut rng, 0.0, spec.noise_sd)).max(0.0))
                })
                .collect();
            break RecoveryCase {
                event: RawEvent {
                    event_id: format!("rec-{i:04}"),
                    source_group: SourceGroup::Shrp2Nc,
                    severity: Severity::None,
                    samples,
                    native_weight: None,
                    sample_rate: Some(10.0),
                },
                n_b,
                breakpoints: bps,
            };
        })
        .collect()
}

/// One parameter vector of the given sub-dataset from fixed generating
/// distributions. Not filtered; see [`draw_valid`].
pub fn draw_params(id: SubdatasetId, rng: &mut ChaCha8Rng) -> EventParams {
    let p = |v: [f64; 6]| EventParams::new(v[0], v[1], v[2], v[3], v[4], v[5]);
    match id {
        SubdatasetId::S1 => p([0.0, 0.0, 0.0, 5.0, 0.0, 0.0]),
        SubdatasetId::S2 => {
            let v_c = 1.0 + gamma(rng, 2.0, 3.0);
            let a1 = -1.0 - 0.25 * v_c + normal(rng, 0.0, 0.6);
            p([v_c, a1, a1, 0.0, 5.0, 0.0])
        }
        SubdatasetId::S3 => {
            let tau_s = 0.5 + gamma(rng, 2.0, 0.7);
            let a1 = normal(rng, -2.5, 1.0);
            p([2.0 + gamma(rng, 2.0, 2.0), a1, a1, tau_s, (5.0 - tau_s).max(0.2), 0.0])
        }
        SubdatasetId::S4 => {
            let a2 = normal(rng, -5.0, 1.3);
            let a1 = a2 + gamma(rng, 2.0, 1.1);
            let tau_s = if rng.random::<f64>() < 0.4 { 0.0 } else { gamma(rng, 2.0, 0.5) };
            p([
                2.0 + gamma(rng, 2.0, 2.5),
                a1,
                a2,
                tau_s,
                0.3 + gamma(rng, 3.0, 0.4),
                0.3 + gamma(rng, 2.5, 0.4),
            ])
        }
        SubdatasetId::S5 => {
            let a2 = normal(rng, -3.0, 1.0);
            p([
                3.0 + gamma(rng, 2.0, 2.0),
                0.2 + gamma(rng, 2.0, 0.5),
                a2,
                0.0,
                0.5 + gamma(rng, 2.0, 0.5),
                0.5 + gamma(rng, 2.0, 0.5),
            ])
        }
        SubdatasetId::S6 | SubdatasetId::S7 => {
            let a2 = normal(rng, 0.5, 0.8);
            let a1 = a2 - gamma(rng, 2.0, 1.5);
            let tau_s = if id == SubdatasetId::S6 { 0.0 } else { 0.1 + gamma(rng, 2.0, 0.6) };
            p([
                3.0 + gamma(rng, 2.0, 2.5),
                a1,
                a2,
                tau_s,
                0.3 + gamma(rng, 3.0, 0.5),
                0.3 + gamma(rng, 2.5, 0.5),
            ])
        }
    }
}

/// [`draw_params`] repeated until the vector passes the constraints of its
/// sub-dataset.
pub fn draw_valid(id: SubdatasetId, rng: &mut ChaCha8Rng) -> EventParams {
    let c = ConstraintSet::for_label(id, SpeedCheck::FullDuration);
    loop {
        let e = draw_params(id, rng);
        if c.check(&e).is_ok() {
            return e;
        }
    }
}

/// Weighted parameter corpus mixing constant-acceleration (S2), increasing
/// acceleration while braking (S4) and late braking after steady driving (S7)
/// events in proportions 0.3 / 0.35 / 0.35, with weights uniform on
/// `[0.5, 1.5]`.
pub fn param_corpus(n: usize, seed: u64) -> WeightedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let events = (0..n)
        .map(|i| {
            let u: f64 = rng.random();
            let id = if u < 0.3 {
                SubdatasetId::S2
            } else if u < 0.65 {
                SubdatasetId::S4
            } else {
                SubdatasetId::S7
            };
            let mut e = draw_valid(id, &mut rng);
            debug_assert_eq!(classify(&e).0, id);
            e.event_id = format!("gt-{i:04}");
            e.source_group = Some(SourceGroup::Shrp2Nsc);
            e.severity = Some(Severity::NonSevere);
            e.weight = rng.random_range(0.5..1.5);
            e
        })
        .collect();
    WeightedDataset::new(events, Stage::CombinedIncident)
}

/// Group sizes and quality mix of a raw event corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawCorpusSpec {
    pub n_ciss: usize,
    pub n_shrp2_sc: usize,
    pub n_shrp2_nsc: usize,
    pub n_shrp2_nc: usize,
    /// Share of events made invalid (too short or physically impossible).
    pub invalid_share: f64,
    pub rate_hz: f64,
    pub noise_sd: f64,
}

impl Default for RawCorpusSpec {
    fn default() -> Self {
        RawCorpusSpec {
            n_ciss: 40,
            n_shrp2_sc: 20,
            n_shrp2_nsc: 60,
            n_shrp2_nc: 80,
            invalid_share: 0.05,
            rate_hz: 10.0,
            noise_sd: 0.05,
        }
    }
}

/// Sub-dataset mix used for raw corpora.
const PATTERN_SHARES: [(SubdatasetId, f64); 7] = [
    (SubdatasetId::S1, 0.20),
    (SubdatasetId::S2, 0.12),
    (SubdatasetId::S3, 0.12),
    (SubdatasetId::S4, 0.17),
    (SubdatasetId::S5, 0.07),
    (SubdatasetId::S6, 0.14),
    (SubdatasetId::S7, 0.18),
];

fn pick_pattern(rng: &mut ChaCha8Rng) -> SubdatasetId {
    let mut u: f64 = rng.random();
    for (id, share) in PATTERN_SHARES {
        if u < share {
            return id;
        }
        u -= share;
    }
    SubdatasetId::S7
}

/// Raw speed-time events for all four source groups. Crashes are recorded
/// on `[−6, 0]`, near-crashes on `[−5, 0]`; standstill samples are exact
/// zeros. CISS events carry log-normal survey weights. Invalid events are
/// either shortened to start at −2.5 s or carry a 12 m/s² segment.
pub fn raw_corpus(spec: &RawCorpusSpec, seed: u64) -> Vec<RawEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights = LogNormal::new(3.0, 0.8).expect("valid log-normal");
    let groups = [
        (SourceGroup::CissSc, spec.n_ciss),
        (SourceGroup::Shrp2Sc, spec.n_shrp2_sc),
        (SourceGroup::Shrp2Nsc, spec.n_shrp2_nsc),
        (SourceGroup::Shrp2Nc, spec.n_shrp2_nc),
    ];
    let dt = 1.0 / spec.rate_hz;
    let mut out = Vec::new();
    for (group, count) in groups {
        for i in 0..count {
            let id = pick_pattern(&mut rng);
            let mut e = draw_valid(id, &mut rng);
            // Severe crashes happen at higher impact speeds.
            if group == SourceGroup::CissSc || group == SourceGroup::Shrp2Sc {
                if id != SubdatasetId::S1 {
                    e.v_c += if group == SourceGroup::CissSc { 6.0 } else { 3.0 };
                }
            }
            let broken = rng.random::<f64>() < spec.invalid_share;
            let short = broken && rng.random::<bool>();
            if broken && !short {
                e = EventParams::new(e.v_c.max(1.0), -12.0, -12.0, 0.0, 1.0, 0.0);
            }
            let knots = profile_knots(&e);
            let start = if short {
                -2.5
            } else if group == SourceGroup::Shrp2Nc {
                T_START
            } else {
                -6.0
            };
            let n = ((-start) / dt).round() as usize;
            let samples = (0..=n)
                .map(|k| {
                    let t = start + k as f64 * dt;
                    let v = speed_at(&knots, t);
                    let v = if v <= 0.0 {
                        0.0
                    } else {
                        (v + normal(&mut rng, 0.0, spec.noise_sd)).max(0.0)
                    };
                    (t, v)
                })
                .collect();
            out.push(RawEvent {
                event_id: format!("{}-{:03}", group.label(), i + 1),
                source_group: group,
                severity: group.default_severity(),
                samples,
                native_weight: (group == SourceGroup::CissSc).then(|| weights.sample(&mut rng)),
                sample_rate: Some(spec.rate_hz),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpora_are_deterministic() {
        let a = param_corpus(50, 3);
        let b = param_corpus(50, 3);
        assert_eq!(a.events, b.events);
        let r1 = raw_corpus(&RawCorpusSpec::default(), 1);
        let r2 = raw_corpus(&RawCorpusSpec::default(), 1);
        assert_eq!(r1, r2);
        assert_eq!(r1.len(), 200);
    }

    #[test]
    fn param_corpus_respects_its_categories() {
        let d = param_corpus(300, 7);
        for e in &d.events {
            let id = classify(e).0;
            assert!(matches!(id, SubdatasetId::S2 | SubdatasetId::S4 | SubdatasetId::S7));
            assert!(ConstraintSet::for_label(id, SpeedCheck::FullDuration).check(e).is_ok());
        }
    }

    #[test]
    fn recovery_cases_honor_their_design() {
        for c in recovery_cases(100, &RecoverySpec::default(), 5) {
            assert_eq!(c.breakpoints.len(), c.n_b);
            assert_eq!(c.event.samples.len(), 51);
            assert!(c.breakpoints.windows(2).all(|w| w[1] - w[0] >= 1.0));
        }
    }
}
