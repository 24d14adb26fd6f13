//! End-to-end acceptance checks, one line per criterion.
//!
//! Criterion 8 needs the published combined incident dataset; point
//! `LEADKIN_PUBLISHED_DATASET` at the CSV to enable it.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use leadkin::combine::{combine_all, count_groups, merge_near_crashes, Stage, Threshold, WeightedDataset};
use leadkin::corpus::{draw_valid, param_corpus, raw_corpus, recovery_cases, RawCorpusSpec, RecoverySpec};
use leadkin::io::{read_combined, write_events};
use leadkin::mvdist::{build_model, ModelConfig, SubdatasetId};
use leadkin::pipeline::{run_pipeline, PipelineConfig, PipelineStage};
use leadkin::pwl_fit::{fit_event, loss_value, EventParams, FitConfig};
use leadkin::synth::{generate, SynthConfig};
use leadkin::validate::{bootstrap_robustness, compare, describe, weighted_ks_test, BootstrapConfig};
use leadkin::{Param, SourceGroup};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn timed(limit: Duration, f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let out = f();
    let took = start.elapsed();
    let note = format!("{:.2}s of {}s", took.as_secs_f64(), limit.as_secs());
    match out {
        Outcome::Pass(d) if took <= limit => Outcome::Pass(format!("{d}; {note}")),
        Outcome::Pass(d) => Outcome::Fail(format!("{d}; too slow, {note}")),
        Outcome::Fail(d) => Outcome::Fail(format!("{d}; {note}")),
        skip => skip,
    }
}

fn tagged(rng: &mut ChaCha8Rng, id: SubdatasetId, group: SourceGroup, n: usize) -> Vec<EventParams> {
    (0..n)
        .map(|i| {
            let mut e = draw_valid(id, rng);
            e.event_id = format!("{}-{i:03}", group.label());
            e.source_group = Some(group);
            e.severity = Some(group.default_severity());
            e
        })
        .collect()
}

/// Combination algebra with the raw/valid group counts 52/24/106 and 49/20/63.
fn combination_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut valid = Vec::new();
    let mut ciss = tagged(&mut rng, SubdatasetId::S4, SourceGroup::CissSc, 49);
    for e in &mut ciss {
        e.v_c = rng.random_range(0.0..16.0);
        e.weight = rng.random_range(20.0..4000.0);
    }
    let mut sc = tagged(&mut rng, SubdatasetId::S4, SourceGroup::Shrp2Sc, 20);
    for e in &mut sc {
        e.v_c = rng.random_range(0.0..7.9);
    }
    valid.extend(ciss);
    valid.extend(sc);
    valid.extend(tagged(&mut rng, SubdatasetId::S7, SourceGroup::Shrp2Nsc, 63));
    let mut rows: Vec<(EventParams, bool)> = valid.iter().map(|e| (e.clone(), true)).collect();
    for (g, extra) in [(SourceGroup::CissSc, 3), (SourceGroup::Shrp2Sc, 4), (SourceGroup::Shrp2Nsc, 43)] {
        for _ in 0..extra {
            let mut e = EventParams::new(f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN);
            e.source_group = Some(g);
            rows.push((e, false));
        }
    }
    let counts = count_groups(rows.iter().map(|(e, v)| (e, *v)));
    let (d, summary) = match combine_all(&valid, &counts, Threshold::Fixed(0.78)) {
        Ok(x) => x,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let eta_ns = 106.0 / 130.0;
    let n_cmb = counts.n_cmb();
    let sum = d.total_weight();
    let ok = (summary.plan.eta_ns - eta_ns).abs() <= 1e-9 && n_cmb == 132 && (sum - 132.0).abs() <= 1e-9;
    verdict(
        ok,
        format!("eta_ns = {:.12}, n_cmb = {n_cmb}, sum of weights = {sum:.12}", summary.plan.eta_ns),
    )
}

/// Breakpoint recovery on 500 noisy piecewise-linear profiles.
fn fit_recovery() -> Outcome {
    let cases = recovery_cases(500, &RecoverySpec::default(), 2024);
    let cfg = FitConfig::default();
    let results = leadkin::par::map(&cases, |c| fit_event(&c.event, &cfg).map(|f| (c.clone(), f)));
    let (mut matched, mut good_r2, mut failed) = (0, 0, 0);
    for r in results {
        let Ok((c, f)) = r else {
            failed += 1;
            continue;
        };
        if f.fit.n_b == c.n_b
            && f.fit.breakpoints.len() == c.n_b
            && f.fit.breakpoints.iter().zip(&c.breakpoints).all(|(a, b)| (a - b).abs() <= 0.15)
        {
            matched += 1;
        }
        if f.adjusted_r_squared > 0.9 {
            good_r2 += 1;
        }
    }
    let n = cases.len() as f64;
    let (m, r) = (matched as f64 / n, good_r2 as f64 / n);
    verdict(
        m >= 0.95 && r >= 0.98,
        format!("n_b and breakpoints recovered {:.1}%, adj. R² > 0.9 {:.1}%, failed {failed}", 100.0 * m, 100.0 * r),
    )
}

/// Loss against its formula on random ingredient tuples, max speed 0 included.
fn loss_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cfg = FitConfig::default();
    let mut worst: f64 = 0.0;
    for k in 0..100 {
        let max_v: f64 = if k % 10 == 0 { 0.0 } else { rng.random_range(0.0..30.0) };
        let delta_v = if max_v == 0.0 { 0.0 } else { rng.random_range(0.0..max_v) };
        let n_b: usize = rng.random_range(0..=3);
        let r2: f64 = rng.random_range(-0.2..1.0);
        let penalty_per_breakpoint = 1e-6 + 0.006 * max_v / (delta_v + 1e-6);
        let direct = penalty_per_breakpoint * n_b as f64 - r2;
        worst = worst.max((loss_value(max_v, delta_v, n_b, r2, &cfg) - direct).abs());
    }
    verdict(worst <= 1e-12, format!("max |difference| = {worst:.2e}"))
}

/// Model → 10,000 synthetic events → KS and moment comparison.
fn round_trip() -> Outcome {
    let train = param_corpus(300, 42);
    let model = match build_model(&train, &ModelConfig::default()) {
        Ok(m) => m,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let syn = match generate(&model, 10_000, 7, &SynthConfig::default()) {
        Ok(s) => s,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let report = match compare(&train.events, &syn.events, 0.10, 1000, 11) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for c in &report.params {
        let dm = (c.synthetic.mean - c.raw.mean).abs() / c.raw.mean.abs();
        let ds = (c.synthetic.sd - c.raw.sd).abs() / c.raw.sd;
        ok &= !c.significant && dm < 0.15 && ds < 0.15;
        parts.push(format!(
            "{} p={:.2} dmean={:.0}% dsd={:.0}%",
            c.param.name(),
            c.ks.p_value,
            100.0 * dm,
            100.0 * ds
        ));
    }
    verdict(ok, parts.join(", "))
}

fn bootstrap() -> Outcome {
    let train = param_corpus(300, 42);
    let cfg = BootstrapConfig {
        fractions: vec![0.9, 0.8],
        reps: 20,
        n_synth: 1000,
        ..Default::default()
    };
    let report = match bootstrap_robustness(&train, &cfg, &ModelConfig::default(), &SynthConfig::default(), 5) {
        Ok(r) => r,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for f in &report.fractions {
        let props: Vec<String> = f
            .proportions
            .iter()
            .map(|(p, x)| {
                ok &= *x > 0.1;
                format!("{}={x:.2}", p.name())
            })
            .collect();
        ok &= f.successful > 0;
        parts.push(format!("{:.1}: {}", f.fraction, props.join(" ")));
    }
    verdict(ok, parts.join("; "))
}

/// Weight conservation of the near-crash merge over random corpora.
fn merge_conservation() -> Outcome {
    let ids = [SubdatasetId::S2, SubdatasetId::S4, SubdatasetId::S6, SubdatasetId::S7];
    let mut worst_total: f64 = 0.0;
    let mut split_mismatches = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_crash = rng.random_range(5..40);
        let n_nc = rng.random_range(0..80);
        let crashes: Vec<EventParams> = (0..n_crash)
            .map(|i| {
                let mut e = draw_valid(ids[rng.random_range(0..ids.len())], &mut rng);
                e.event_id = format!("c{i:03}");
                e.weight = rng.random_range(0.05..5.0);
                e
            })
            .collect();
        let ncs: Vec<EventParams> = (0..n_nc)
            .map(|i| {
                let mut e = draw_valid(ids[rng.random_range(0..ids.len())], &mut rng);
                e.event_id = format!("n{i:03}");
                e
            })
            .collect();
        let d = WeightedDataset::new(crashes.clone(), Stage::CombinedCrash);
        let d_thd = rng.random_range(0.2..2.5);
        let (out, _) = match merge_near_crashes(&d, &ncs, d_thd, &[1.0; 6]) {
            Ok(x) => x,
            Err(e) => return Outcome::Fail(format!("seed {seed}: {e}")),
        };
        worst_total = worst_total.max((out.total_weight() - d.total_weight()).abs());
        for (j, host) in crashes.iter().enumerate() {
            let mut split = out.events[j].weight;
            let mut given = 0.0;
            for (e, p) in out.events.iter().zip(&out.provenance) {
                if p.attached_to.as_deref() == Some(host.event_id.as_str()) {
                    given += e.weight;
                }
            }
            split += given;
            if split != host.weight {
                split_mismatches += 1;
            }
        }
    }
    verdict(
        worst_total <= 1e-9 && split_mismatches == 0,
        format!("max total drift {worst_total:.2e}, inexact host splits {split_mismatches}"),
    )
}

/// Null rejection rate of the weighted KS permutation test.
fn ks_calibration() -> Outcome {
    let trials = 100;
    let rejections: usize = leadkin::par::map_range(trials, |k| {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + k as u64);
        let x: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..200).map(|_| StandardNormal.sample(&mut rng)).collect();
        let w = vec![1.0; 200];
        let r = weighted_ks_test(&x, &w, &y, &w, 1000, k as u64).expect("non-empty samples");
        usize::from(r.p_value <= 0.10)
    })
    .into_iter()
    .sum();
    let rate = rejections as f64 / trials as f64;
    verdict((0.04..=0.18).contains(&rate), format!("rejection rate {rate:.2}"))
}

fn published_dataset() -> Outcome {
    let Some(path) = std::env::var_os("LEADKIN_PUBLISHED_DATASET").map(PathBuf::from) else {
        return Outcome::Skip("LEADKIN_PUBLISHED_DATASET not set".into());
    };
    let d = match read_combined(&path) {
        Ok(d) => d,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let table = [
        (Param::Vc, 2.01, 4.69),
        (Param::A1, -1.37, 1.82),
        (Param::A2, -0.95, 1.72),
        (Param::TauS, 1.73, 2.07),
        (Param::Tau1, 1.98, 1.64),
        (Param::Tau2, 1.18, 1.30),
    ];
    let stats = match describe(&d.events) {
        Ok(s) => s,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for ((p, s), (tp, mean, sd)) in stats.iter().zip(table) {
        assert_eq!(*p, tp);
        ok &= (s.mean - mean).abs() <= 0.02 && (s.sd - sd).abs() <= 0.02;
        parts.push(format!("{} {:.2}/{:.2}", p.name(), s.mean, s.sd));
    }
    let run = build_model(&d, &ModelConfig::default())
        .and_then(|m| generate(&m, 10_000, 1, &SynthConfig::default()))
        .and_then(|s| compare(&d.events, &s.events, 0.10, 1000, 2));
    match run {
        Ok(r) => {
            for c in &r.params {
                ok &= c.ks.p_value > 0.10;
                parts.push(format!("{} p={:.2}", c.param.name(), c.ks.p_value));
            }
        }
        Err(e) => {
            ok = false;
            parts.push(e.to_string());
        }
    }
    verdict(ok, parts.join(", "))
}

/// Two pipeline runs with the same config must write identical bytes.
fn determinism() -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    let input = dir.path().join("events.csv");
    if let Err(e) = write_events(&input, &raw_corpus(&RawCorpusSpec::default(), 8)) {
        return Outcome::Fail(e.to_string());
    }
    let cfg = |name: &str| PipelineConfig {
        input: Some(input.clone()),
        out_dir: dir.path().join(name),
        seed: 77,
        n_synth: 3000,
        n_perm: 300,
        ..Default::default()
    };
    let (a, b) = (cfg("a"), cfg("b"));
    for c in [&a, &b] {
        if let Err(e) = run_pipeline(c, None) {
            return Outcome::Fail(e.to_string());
        }
    }
    let differing: Vec<&str> = PipelineStage::ALL
        .iter()
        .filter(|&&s| std::fs::read(a.artifact(s)).ok() != std::fs::read(b.artifact(s)).ok())
        .map(|s| s.artifact())
        .collect();
    verdict(
        differing.is_empty(),
        if differing.is_empty() {
            "5 artifacts byte-identical".into()
        } else {
            format!("differ: {}", differing.join(", "))
        },
    )
}

fn main() {
    let secs = Duration::from_secs;
    let criteria: [(&str, Duration, fn() -> Outcome); 9] = [
        ("combination algebra oracle", secs(1), combination_oracle),
        ("fit recovery", secs(60), fit_recovery),
        ("loss formula oracle", secs(1), loss_oracle),
        ("round-trip distribution fidelity", secs(300), round_trip),
        ("bootstrap robustness", secs(900), bootstrap),
        ("near-crash merge conservation", secs(10), merge_conservation),
        ("weighted KS calibration", secs(60), ks_calibration),
        ("published dataset reproduction", secs(300), published_dataset),
        ("determinism", secs(300), determinism),
    ];
    let only: Option<usize> = std::env::var("LEADKIN_ACCEPTANCE_ONLY").ok().and_then(|s| s.parse().ok());
    let mut failed = 0;
    for (i, (name, limit, f)) in criteria.into_iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        match timed(limit, f) {
            Outcome::Pass(d) => println!("criterion {n} ({name}): PASS: {d}"),
            Outcome::Skip(d) => println!("criterion {n} ({name}): SKIP: {d}"),
            Outcome::Fail(d) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL: {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
