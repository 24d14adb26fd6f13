//! Model stability under subsampling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::combine::WeightedDataset;
use crate::error::{Error, Result};
use crate::mvdist::{build_model, ModelConfig};
use crate::stats::mix_seed;
use crate::synth::{generate, SynthConfig};
use crate::Param;

use super::weighted_ks_test;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub fractions: Vec<f64>,
    pub reps: usize,
    /// Synthetic events generated per rep.
    pub n_synth: usize,
    /// Synthetic events generated from the full-data model as reference.
    pub n_reference: usize,
    pub alpha: f64,
    pub n_perm: usize,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            fractions: vec![0.9, 0.8],
            reps: 100,
            n_synth: 1000,
            n_reference: 10_000,
            alpha: 0.10,
            n_perm: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepOutcome {
    pub rep: usize,
    /// KS p-value per parameter in canonical order; absent for failed reps.
    pub p_values: Option<Vec<f64>>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FractionResult {
    pub fraction: f64,
    pub subsample_size: usize,
    /// Share of successful reps with a non-significant KS test, per parameter.
    pub proportions: Vec<(Param, f64)>,
    pub successful: usize,
    pub failed: usize,
    pub reps: Vec<RepOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub config: BootstrapConfig,
    pub seed: u64,
    pub fractions: Vec<FractionResult>,
}

fn run_rep(
    d: &WeightedDataset,
    size: usize,
    reference: &[Vec<f64>],
    cfg: &BootstrapConfig,
    model_cfg: &ModelConfig,
    synth_cfg: &SynthConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, d.len(), size).into_vec();
    idx.sort_unstable();
    let sub = WeightedDataset {
        events: idx.iter().map(|&i| d.events[i].clone()).collect(),
        stage: d.stage,
        provenance: idx.iter().map(|&i| d.provenance[i].clone()).collect(),
    };
    let model = build_model(&sub, model_cfg)?;
    let syn = generate(&model, cfg.n_synth, mix_seed(seed, 1), synth_cfg)?;
    let ones = vec![1.0; syn.events.len()];
    let ref_w = vec![1.0; reference[0].len()];
    Param::ALL
        .iter()
        .map(|&p| {
            let x: Vec<f64> = syn.events.iter().map(|e| p.get(e)).collect();
            weighted_ks_test(
                &x,
                &ones,
                &reference[p.index()],
                &ref_w,
                cfg.n_perm,
                mix_seed(seed, 2 + p.index() as u64),
            )
            .map(|r| r.p_value)
        })
        .collect()
}

/// Subsample without replacement, rebuild the model, generate, and KS-test
/// each parameter against synthetic data from the full-data model. Reps whose
/// model cannot be built or sampled are counted as failed and left out of the
/// proportions.
pub fn bootstrap_robustness(
    d: &WeightedDataset,
    cfg: &BootstrapConfig,
    model_cfg: &ModelConfig,
    synth_cfg: &SynthConfig,
    seed: u64,
) -> Result<BootstrapReport> {
    if cfg.reps == 0 {
        return Err(Error::EmptyReps);
    }
    if d.is_empty() {
        return Err(Error::EmptyInput);
    }
    let full = build_model(d, model_cfg)?;
    let reference_set = generate(&full, cfg.n_reference, mix_seed(seed, u64::MAX), synth_cfg)?;
    let reference: Vec<Vec<f64>> = Param::ALL
        .iter()
        .map(|&p| reference_set.events.iter().map(|e| p.get(e)).collect())
        .collect();

    let mut fractions = Vec::new();
    for (fi, &fraction) in cfg.fractions.iter().enumerate() {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::Config(format!("bootstrap fraction {fraction} outside (0, 1]")));
        }
        let size = (fraction * d.len() as f64).floor() as usize;
        let outcomes = crate::par::map_range(cfg.reps, |rep| {
            let rep_seed = mix_seed(mix_seed(seed, fi as u64), rep as u64);
            match run_rep(d, size, &reference, cfg, model_cfg, synth_cfg, rep_seed) {
                Ok(p) => RepOutcome {
                    rep,
                    p_values: Some(p),
                    error: None,
                },
                Err(e) => RepOutcome {
                    rep,
                    p_values: None,
                    error: Some(e.to_string()),
                },
            }
        });
        let ok: Vec<&Vec<f64>> = outcomes.iter().filter_map(|o| o.p_values.as_ref()).collect();
        let proportions = Param::ALL
            .iter()
            .map(|&p| {
                let pass = ok.iter().filter(|v| v[p.index()] > cfg.alpha).count();
                let share = if ok.is_empty() {
                    f64::NAN
                } else {
                    pass as f64 / ok.len() as f64
                };
                (p, share)
            })
            .collect();
        fractions.push(FractionResult {
            fraction,
            subsample_size: size,
            proportions,
            successful: ok.len(),
            failed: outcomes.len() - ok.len(),
            reps: outcomes,
        });
    }
    Ok(BootstrapReport {
        config: cfg.clone(),
        seed,
        fractions,
    })
}
