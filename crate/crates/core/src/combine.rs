//! Weight preprocessing, crash-source reweighting and near-crash merging.
//!
//! Crash weights go through three stages. `Preprocessed`: CISS survey
//! weights are trimmed and scaled to the valid count, SHRP2 crashes share a
//! per-group weight. `CombinedCrash`: the sources are reweighted so the
//! severe/non-severe split follows SHRP2 and the low/high-speed split of
//! severe crashes follows CISS. `CombinedIncident`: near-crashes close to a
//! crash in standardized parameter space share that crash's weight.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::SourceGroup;
use crate::pwl_fit::EventParams;
use crate::stats::{weighted_mean, weighted_quantile, weighted_var_freq};
use crate::Param;

/// Default similarity threshold for attaching near-crashes.
pub const DEFAULT_D_THD: f64 = 0.78;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Preprocessed,
    CombinedCrash,
    CombinedIncident,
}

impl Stage {
    pub fn label(self) -> &'static str {
        match self {
            Stage::Preprocessed => "Preprocessed",
            Stage::CombinedCrash => "CombinedCrash",
            Stage::CombinedIncident => "CombinedIncident",
        }
    }
}

/// Per-event record of how its weight was derived.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub native_weight: Option<f64>,
    pub trimmed_weight: Option<f64>,
    pub preprocessed_weight: Option<f64>,
    pub combined_crash_weight: Option<f64>,
    /// Host crash of an attached near-crash.
    pub attached_to: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDataset {
    pub events: Vec<EventParams>,
    pub stage: Stage,
    /// Parallel to `events`.
    pub provenance: Vec<Provenance>,
}

impl WeightedDataset {
    pub fn new(events: Vec<EventParams>, stage: Stage) -> Self {
        let provenance = vec![Provenance::default(); events.len()];
        WeightedDataset {
            events,
            stage,
            provenance,
        }
    }

    pub fn total_weight(&self) -> f64 {
        self.events.iter().map(|e| e.weight).sum()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.events.iter().map(|e| e.weight).collect()
    }

    pub fn column(&self, p: Param) -> Vec<f64> {
        self.events.iter().map(|e| p.get(e)).collect()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    fn group_weight(&self, g: SourceGroup) -> f64 {
        self.events
            .iter()
            .filter(|e| e.source_group == Some(g))
            .map(|e| e.weight)
            .sum()
    }
}

/// Raw and valid event counts per crash group.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupCounts {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    pub n1_vld: usize,
    pub n2_vld: usize,
    pub n3_vld: usize,
}

impl GroupCounts {
    pub fn n_cmb(&self) -> usize {
        self.n1_vld + self.n2_vld + self.n3_vld
    }
}

/// Trimming cut-point `3.5 · √(1 + CV²) · median`, CV from the sample
/// (n − 1) standard deviation.
pub fn trim_cut_point(weights: &[f64]) -> f64 {
    let n = weights.len();
    let mut sorted = weights.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 0 {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    } else {
        sorted[n / 2]
    };
    let cv2 = if n > 1 {
        let unit = vec![1.0; n];
        weighted_var_freq(weights, &unit) / weighted_mean(weights, &unit).powi(2)
    } else {
        0.0
    };
    3.5 * (1.0 + cv2).sqrt() * median
}

/// Cap every weight at [`trim_cut_point`].
pub fn trim_weights(weights: &[f64]) -> Vec<f64> {
    if weights.is_empty() {
        return Vec::new();
    }
    let cut = trim_cut_point(weights);
    weights.iter().map(|&w| w.min(cut)).collect()
}

/// Scale so the weights sum to `n_vld`.
pub fn scale_weights(trimmed: &[f64], n_vld: usize) -> Vec<f64> {
    let total: f64 = trimmed.iter().sum();
    trimmed.iter().map(|w| n_vld as f64 * w / total).collect()
}

/// Shared weight of every valid event in SHRP2 crash group `group`
/// (`Shrp2Sc` or `Shrp2Nsc`).
pub fn shrp2_group_weight(
    n2: usize,
    n3: usize,
    n2_vld: usize,
    n3_vld: usize,
    group: SourceGroup,
) -> f64 {
    let (n_i, n_i_vld) = match group {
        SourceGroup::Shrp2Sc => (n2, n2_vld),
        _ => (n3, n3_vld),
    };
    (n2_vld + n3_vld) as f64 * (n_i as f64 / (n2 + n3) as f64) / n_i_vld as f64
}

/// Assign preprocessed weights to the valid crashes of groups 1–3.
/// CISS events carry their survey weight in `weight`; near-crashes are ignored.
pub fn preprocess(valid_crashes: &[EventParams], counts: &GroupCounts) -> Result<WeightedDataset> {
    let in_group = |g| {
        valid_crashes
            .iter()
            .filter(move |e| e.source_group == Some(g))
            .cloned()
            .collect::<Vec<_>>()
    };
    let ciss = in_group(SourceGroup::CissSc);
    let sc = in_group(SourceGroup::Shrp2Sc);
    let nsc = in_group(SourceGroup::Shrp2Nsc);
    for (g, evs) in [
        (SourceGroup::CissSc, &ciss),
        (SourceGroup::Shrp2Sc, &sc),
        (SourceGroup::Shrp2Nsc, &nsc),
    ] {
        if evs.is_empty() {
            return Err(Error::EmptyGroup(g));
        }
    }

    let native: Vec<f64> = ciss.iter().map(|e| e.weight).collect();
    let trimmed = trim_weights(&native);
    let scaled = scale_weights(&trimmed, ciss.len());
    let w2 = shrp2_group_weight(counts.n2, counts.n3, sc.len(), nsc.len(), SourceGroup::Shrp2Sc);
    let w3 = shrp2_group_weight(counts.n2, counts.n3, sc.len(), nsc.len(), SourceGroup::Shrp2Nsc);

    let mut events = Vec::new();
    let mut provenance = Vec::new();
    for (i, mut e) in ciss.into_iter().enumerate() {
        e.weight = scaled[i];
        provenance.push(Provenance {
            native_weight: Some(native[i]),
            trimmed_weight: Some(trimmed[i]),
            preprocessed_weight: Some(scaled[i]),
            ..Default::default()
        });
        events.push(e);
    }
    for (mut e, w) in sc
        .into_iter()
        .map(|e| (e, w2))
        .chain(nsc.into_iter().map(|e| (e, w3)))
    {
        e.weight = w;
        provenance.push(Provenance {
            preprocessed_weight: Some(w),
            ..Default::default()
        });
        events.push(e);
    }
    Ok(WeightedDataset {
        events,
        stage: Stage::Preprocessed,
        provenance,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombinePlan {
    pub eta_ns: f64,
    pub eta_hss: f64,
    pub w_hss: f64,
    pub w_lss: f64,
    pub n_cmb: f64,
    pub n_ns: f64,
    pub n_hss: f64,
    pub n_lss: f64,
    /// Largest `v_c` among SHRP2 severe crashes.
    pub v_c_split: f64,
    /// Raw SHRP2 counts used for the severity proportions.
    pub n2: usize,
    pub n3: usize,
}

/// Proportions and equivalent sample sizes of the combined crash dataset.
/// `n2`, `n3` are the raw SHRP2 severe and non-severe counts.
pub fn build_plan(d: &WeightedDataset, n2: usize, n3: usize) -> Result<CombinePlan> {
    let of = |g| d.events.iter().filter(move |e| e.source_group == Some(g));
    let n1_vld = of(SourceGroup::CissSc).count();
    let n2_vld = of(SourceGroup::Shrp2Sc).count();
    let n3_vld = of(SourceGroup::Shrp2Nsc).count();
    for (g, n) in [
        (SourceGroup::CissSc, n1_vld),
        (SourceGroup::Shrp2Sc, n2_vld),
        (SourceGroup::Shrp2Nsc, n3_vld),
    ] {
        if n == 0 {
            return Err(Error::EmptyGroup(g));
        }
    }
    let v_c_split = of(SourceGroup::Shrp2Sc)
        .map(|e| e.v_c)
        .fold(f64::NEG_INFINITY, f64::max);
    let w_hss: f64 = of(SourceGroup::CissSc)
        .filter(|e| e.v_c > v_c_split)
        .map(|e| e.weight)
        .sum();
    let w_low_ciss: f64 = of(SourceGroup::CissSc)
        .filter(|e| e.v_c <= v_c_split)
        .map(|e| e.weight)
        .sum();
    let w2_total = d.group_weight(SourceGroup::Shrp2Sc);

    let eta_ns = n3 as f64 / (n2 + n3) as f64;
    let eta_hss = w_hss / n1_vld as f64;
    let n_cmb = (n1_vld + n2_vld + n3_vld) as f64;
    Ok(CombinePlan {
        eta_ns,
        eta_hss,
        w_hss,
        w_lss: w2_total + w_low_ciss,
        n_cmb,
        n_ns: n_cmb * eta_ns,
        n_hss: n_cmb * (1.0 - eta_ns) * eta_hss,
        n_lss: n_cmb * (1.0 - eta_ns) * (1.0 - eta_hss),
        v_c_split,
        n2,
        n3,
    })
}

/// Apply the plan: non-severe crashes share `n′_ns`, low-speed severe crashes
/// (SHRP2 and CISS) share `n′_lss` in proportion to their preprocessed
/// weights, high-speed CISS crashes share `n′_hss`.
pub fn reweight_combine(d: &WeightedDataset, plan: &CombinePlan) -> Result<WeightedDataset> {
    if plan.w_lss <= 0.0 && plan.n_lss > 0.0 {
        return Err(Error::DegenerateSplit("no low-speed severe weight".into()));
    }
    if plan.w_hss <= 0.0 && plan.n_hss > 0.0 {
        return Err(Error::DegenerateSplit("no high-speed severe weight".into()));
    }
    let n3_vld = d
        .events
        .iter()
        .filter(|e| e.source_group == Some(SourceGroup::Shrp2Nsc))
        .count() as f64;
    let mut out = d.clone();
    out.stage = Stage::CombinedCrash;
    for (e, prov) in out.events.iter_mut().zip(out.provenance.iter_mut()) {
        let w = e.weight;
        e.weight = match e.source_group {
            Some(SourceGroup::Shrp2Nsc) => plan.n_ns / n3_vld,
            Some(SourceGroup::Shrp2Sc) => plan.n_lss * w / plan.w_lss,
            Some(SourceGroup::CissSc) if e.v_c <= plan.v_c_split => plan.n_lss * w / plan.w_lss,
            Some(SourceGroup::CissSc) => plan.n_hss * w / plan.w_hss,
            other => {
                return Err(Error::InvalidEvent {
                    event_id: e.event_id.clone(),
                    reason: format!("group {other:?} does not belong in the crash dataset"),
                })
            }
        };
        prov.combined_crash_weight = Some(e.weight);
    }
    Ok(out)
}

/// Per-parameter location and scale used for z-scoring.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamStats {
    pub mean: [f64; 6],
    pub sd: [f64; 6],
}

impl ParamStats {
    /// Weighted mean and SD of each parameter over `d`.
    pub fn of(d: &WeightedDataset) -> ParamStats {
        let w = d.weights();
        let mut mean = [0.0; 6];
        let mut sd = [0.0; 6];
        for p in Param::ALL {
            let x = d.column(p);
            mean[p.index()] = weighted_mean(&x, &w);
            sd[p.index()] = weighted_var_freq(&x, &w).max(0.0).sqrt();
        }
        ParamStats { mean, sd }
    }
}

/// Euclidean distance between z-scored parameter vectors, each coordinate
/// scaled by `param_weights` (ones for the plain metric).
pub fn standardized_distance(
    a: &EventParams,
    b: &EventParams,
    stats: &ParamStats,
    param_weights: &[f64; 6],
) -> Result<f64> {
    let mut sum = 0.0;
    for p in Param::ALL {
        let i = p.index();
        if !(stats.sd[i] > 0.0) {
            return Err(Error::ZeroVariance(p.name().into()));
        }
        let dz = (p.get(a) - p.get(b)) / stats.sd[i];
        sum += param_weights[i] * dz * dz;
    }
    Ok(sum.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attachment {
    pub near_crash_id: String,
    pub crash_id: String,
    pub d_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeResult {
    pub selected: Vec<Attachment>,
    pub d_thd: f64,
    /// Crash id → number of attached near-crashes.
    pub weight_splits: BTreeMap<String, usize>,
}

fn nearest_crash(
    nc: &EventParams,
    crashes: &[EventParams],
    stats: &ParamStats,
    pw: &[f64; 6],
) -> Result<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, c) in crashes.iter().enumerate() {
        let d = standardized_distance(nc, c, stats, pw)?;
        best = match best {
            None => Some((j, d)),
            Some((bj, bd)) if d < bd || (d == bd && c.event_id < crashes[bj].event_id) => {
                Some((j, d))
            }
            keep => keep,
        };
    }
    best.ok_or(Error::EmptyInput)
}

/// Attach each near-crash whose most similar crash lies within `d_thd`, then
/// split every host crash's weight equally among itself and its attachments.
/// Z-score statistics are computed from the crash dataset only.
pub fn merge_near_crashes(
    crashes: &WeightedDataset,
    ncs: &[EventParams],
    d_thd: f64,
    param_weights: &[f64; 6],
) -> Result<(WeightedDataset, MergeResult)> {
    if crashes.is_empty() {
        return Err(Error::EmptyInput);
    }
    let stats = ParamStats::of(crashes);
    let nearest: Vec<Result<(usize, f64)>> =
        crate::par::map(ncs, |nc| nearest_crash(nc, &crashes.events, &stats, param_weights));

    let mut attached: Vec<Vec<usize>> = vec![Vec::new(); crashes.len()];
    let mut selected = Vec::new();
    for (i, r) in nearest.into_iter().enumerate() {
        let (j, d) = r?;
        if d <= d_thd {
            attached[j].push(i);
            selected.push(Attachment {
                near_crash_id: ncs[i].event_id.clone(),
                crash_id: crashes.events[j].event_id.clone(),
                d_min: d,
            });
        }
    }

    let mut out = WeightedDataset {
        events: Vec::with_capacity(crashes.len() + selected.len()),
        stage: Stage::CombinedIncident,
        provenance: Vec::new(),
    };
    let mut weight_splits = BTreeMap::new();
    let mut attached_events = Vec::new();
    for (j, host) in crashes.events.iter().enumerate() {
        let n_nc = attached[j].len();
        let w = host.weight;
        let share = w / (1 + n_nc) as f64;
        // Attachments take equal shares; the host keeps the remainder so the
        // split sums back to `w`.
        let mut given = 0.0;
        for &i in &attached[j] {
            let mut e = ncs[i].clone();
            e.weight = share;
            given += share;
            attached_events.push((
                e,
                Provenance {
                    native_weight: None,
                    attached_to: Some(host.event_id.clone()),
                    ..Default::default()
                },
            ));
        }
        let mut h = host.clone();
        h.weight = w - given;
        out.events.push(h);
        out.provenance.push(crashes.provenance[j].clone());
        if n_nc > 0 {
            weight_splits.insert(host.event_id.clone(), n_nc);
        }
    }
    for (e, p) in attached_events {
        out.events.push(e);
        out.provenance.push(p);
    }
    Ok((
        out,
        MergeResult {
            selected,
            d_thd,
            weight_splits,
        },
    ))
}

/// Threshold from the weighted distribution of crash-to-nearest-other-crash
/// distances at quantile `q`. An automated stand-in for picking the elbow of
/// that CDF by eye.
pub fn quantile_threshold(crashes: &WeightedDataset, q: f64, param_weights: &[f64; 6]) -> Result<f64> {
    if crashes.len() < 2 {
        return Err(Error::InsufficientData {
            what: "crash-to-crash distances".into(),
            needed: 2.0,
            got: crashes.len() as f64,
        });
    }
    let stats = ParamStats::of(crashes);
    let ev = &crashes.events;
    let mins: Vec<Result<f64>> = crate::par::map_range(ev.len(), |i| {
        let mut best = f64::INFINITY;
        for (j, other) in ev.iter().enumerate() {
            if i != j {
                best = best.min(standardized_distance(&ev[i], other, &stats, param_weights)?);
            }
        }
        Ok(best)
    });
    let mins: Vec<f64> = mins.into_iter().collect::<Result<_>>()?;
    weighted_quantile(&mins, &crashes.weights(), q)
}

/// How the near-crash similarity threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Threshold {
    Fixed(f64),
    /// Weighted quantile of crash-to-nearest-crash distances.
    Quantile(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombineSummary {
    pub counts: GroupCounts,
    pub plan: CombinePlan,
    pub merge: MergeResult,
    pub crash_weight_total: f64,
    pub incident_weight_total: f64,
}

/// Raw per-group counts of `events`, and valid counts of the subset with
/// `valid` set.
pub fn count_groups<'a>(events: impl IntoIterator<Item = (&'a EventParams, bool)>) -> GroupCounts {
    let mut c = GroupCounts {
        n1: 0,
        n2: 0,
        n3: 0,
        n1_vld: 0,
        n2_vld: 0,
        n3_vld: 0,
    };
    for (e, valid) in events {
        let (raw, vld) = match e.source_group {
            Some(SourceGroup::CissSc) => (&mut c.n1, &mut c.n1_vld),
            Some(SourceGroup::Shrp2Sc) => (&mut c.n2, &mut c.n2_vld),
            Some(SourceGroup::Shrp2Nsc) => (&mut c.n3, &mut c.n3_vld),
            _ => continue,
        };
        *raw += 1;
        if valid {
            *vld += 1;
        }
    }
    c
}

/// Preprocess, reweight and merge in one pass. `valid` holds every valid
/// event (crashes and near-crashes); `counts` carries the raw counts.
pub fn combine_all(
    valid: &[EventParams],
    counts: &GroupCounts,
    threshold: Threshold,
) -> Result<(WeightedDataset, CombineSummary)> {
    let (crashes, ncs): (Vec<EventParams>, Vec<EventParams>) = valid
        .iter()
        .cloned()
        .partition(|e| e.source_group != Some(SourceGroup::Shrp2Nc));
    let pre = preprocess(&crashes, counts)?;
    let plan = build_plan(&pre, counts.n2, counts.n3)?;
    let crash = reweight_combine(&pre, &plan)?;
    let pw = [1.0; 6];
    let d_thd = match threshold {
        Threshold::Fixed(d) => d,
        Threshold::Quantile(q) => quantile_threshold(&crash, q, &pw)?,
    };
    let (incident, merge) = merge_near_crashes(&crash, &ncs, d_thd, &pw)?;
    let summary = CombineSummary {
        counts: *counts,
        plan,
        merge,
        crash_weight_total: crash.total_weight(),
        incident_weight_total: incident.total_weight(),
    };
    Ok((incident, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ev(id: &str, g: SourceGroup, v_c: f64, w: f64) -> EventParams {
        let mut e = EventParams::new(v_c, -2.0, -1.0, 0.5, 2.0, 1.0);
        e.event_id = id.into();
        e.source_group = Some(g);
        e.weight = w;
        e
    }

    #[test]
    fn trimming_examples() {
        assert_eq!(trim_weights(&[2.0; 4]), vec![2.0; 4]);
        let t = trim_weights(&[1.0, 1.0, 1.0, 100.0]);
        assert_eq!(&t[..3], &[1.0, 1.0, 1.0]);
        assert_relative_eq!(t[3], 7.584067132914742, epsilon = 1e-9);
    }

    #[test]
    fn scaling_examples() {
        assert_eq!(scale_weights(&[1.0, 1.0], 2), vec![1.0, 1.0]);
        assert_eq!(scale_weights(&[1.0, 3.0], 2), vec![0.5, 1.5]);
    }

    #[test]
    fn shrp2_weights_from_counts() {
        assert_relative_eq!(
            shrp2_group_weight(24, 106, 20, 63, SourceGroup::Shrp2Sc),
            83.0 * 24.0 / (130.0 * 20.0),
            epsilon = 1e-15
        );
        assert_relative_eq!(
            shrp2_group_weight(24, 106, 20, 63, SourceGroup::Shrp2Nsc),
            1.0742368742368742,
            epsilon = 1e-12
        );
        assert_relative_eq!(shrp2_group_weight(7, 9, 7, 9, SourceGroup::Shrp2Sc), 1.0);
        assert_relative_eq!(shrp2_group_weight(7, 9, 7, 9, SourceGroup::Shrp2Nsc), 1.0);
    }

    /// 2 CISS (one high-speed), 2 SHRP2 severe, 2 SHRP2 non-severe, all with
    /// unit preprocessed weights and equal raw/valid counts.
    fn micro() -> WeightedDataset {
        let events = vec![
            ev("c1", SourceGroup::CissSc, 3.0, 1.0),
            ev("c2", SourceGroup::CissSc, 20.0, 1.0),
            ev("s1", SourceGroup::Shrp2Sc, 2.0, 1.0),
            ev("s2", SourceGroup::Shrp2Sc, 5.0, 1.0),
            ev("n1", SourceGroup::Shrp2Nsc, 1.0, 1.0),
            ev("n2", SourceGroup::Shrp2Nsc, 0.0, 1.0),
        ];
        WeightedDataset::new(events, Stage::Preprocessed)
    }

    #[test]
    fn micro_dataset_matches_hand_algebra() {
        let d = micro();
        let plan = build_plan(&d, 2, 2).unwrap();
        // eta_ns = 2/4, W_hss = 1 (c2), eta_hss = 1/2, n_cmb = 6
        assert_eq!(plan.eta_ns, 0.5);
        assert_eq!(plan.eta_hss, 0.5);
        assert_eq!(plan.v_c_split, 5.0);
        assert_eq!(plan.w_lss, 3.0);
        assert_relative_eq!(plan.n_ns, 3.0);
        assert_relative_eq!(plan.n_hss, 1.5);
        assert_relative_eq!(plan.n_lss, 1.5);
        let c = reweight_combine(&d, &plan).unwrap();
        let w: Vec<f64> = c.weights();
        // n3: 3/2 each; lss: 1.5 * 1/3 each for c1, s1, s2; c2: 1.5 * 1/1
        let expect = [0.5, 1.5, 0.5, 0.5, 1.5, 1.5];
        for (a, b) in w.iter().zip(expect) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
        assert_relative_eq!(c.total_weight(), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn no_high_speed_crashes_puts_mass_on_low_branch() {
        let mut d = micro();
        d.events[1].v_c = 4.0;
        let plan = build_plan(&d, 2, 2).unwrap();
        assert_eq!(plan.eta_hss, 0.0);
        assert_eq!(plan.n_hss, 0.0);
        let c = reweight_combine(&d, &plan).unwrap();
        assert_relative_eq!(c.total_weight(), 6.0, epsilon = 1e-12);
    }

    #[test]
    fn empty_group_is_reported() {
        let mut d = micro();
        d.events.retain(|e| e.source_group != Some(SourceGroup::Shrp2Sc));
        assert!(matches!(build_plan(&d, 2, 2), Err(Error::EmptyGroup(SourceGroup::Shrp2Sc))));
    }

    #[test]
    fn distance_basics() {
        let stats = ParamStats {
            mean: [0.0; 6],
            sd: [2.0, 1.0, 1.0, 1.0, 1.0, 1.0],
        };
        let a = EventParams::new(4.0, -1.0, -1.0, 1.0, 2.0, 0.5);
        let mut b = a.clone();
        assert_eq!(standardized_distance(&a, &b, &stats, &[1.0; 6]).unwrap(), 0.0);
        b.v_c += 2.0;
        assert_relative_eq!(standardized_distance(&a, &b, &stats, &[1.0; 6]).unwrap(), 1.0);
        let zero = ParamStats {
            mean: [0.0; 6],
            sd: [1.0, 1.0, 0.0, 1.0, 1.0, 1.0],
        };
        assert!(matches!(
            standardized_distance(&a, &b, &zero, &[1.0; 6]),
            Err(Error::ZeroVariance(_))
        ));
    }

    #[test]
    fn merge_splits_host_weight() {
        let mut crashes = WeightedDataset::new(
            vec![
                ev("a", SourceGroup::Shrp2Nsc, 1.0, 1.0),
                ev("b", SourceGroup::Shrp2Nsc, 9.0, 1.0),
                ev("c", SourceGroup::Shrp2Nsc, 5.0, 1.0),
            ],
            Stage::CombinedCrash,
        );
        crashes.events[2].a1 = -4.0;
        crashes.events[1].a2 = -2.0;
        crashes.events[1].tau_s = 1.5;
        crashes.events[1].tau_1 = 3.0;
        crashes.events[1].tau_2 = 0.5;
        let near = ev("nc1", SourceGroup::Shrp2Nc, 1.0, 1.0);
        let far = {
            let mut e = ev("nc2", SourceGroup::Shrp2Nc, 40.0, 1.0);
            e.a1 = 5.0;
            e
        };
        let (merged, res) = merge_near_crashes(&crashes, &[near, far], DEFAULT_D_THD, &[1.0; 6]).unwrap();
        assert_eq!(res.selected.len(), 1);
        assert_eq!(res.selected[0].crash_id, "a");
        assert_eq!(merged.len(), 4);
        assert_eq!(merged.events[0].weight, 0.5);
        assert_eq!(merged.events[3].weight, 0.5);
        assert_eq!(merged.events[1].weight, 1.0);
        assert_eq!(merged.provenance[3].attached_to.as_deref(), Some("a"));
        assert_eq!(merged.total_weight(), 3.0);
    }
}
