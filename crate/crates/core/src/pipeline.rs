//! Stage orchestration: raw events → params.csv → combined.csv → model.json
//! → synthetic.csv → report.json, all under one output directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::combine::{combine_all, count_groups, CombineSummary, Threshold, WeightedDataset, DEFAULT_D_THD};
use crate::error::{Error, Result};
use crate::ingest::load_events;
use crate::io::{self, ParamRow};
use crate::mvdist::{build_model, CorrRule, Model, ModelConfig};
use crate::pwl_fit::{fit_events, EventParams, FitConfig};
use crate::stats::mix_seed;
use crate::synth::{generate, SpeedCheck, SynthConfig, SyntheticDataset, DEFAULT_CAP_FACTOR};
use crate::validate::{compare, ValidationReport, DEFAULT_N_PERM};

pub const PARAMS_FILE: &str = "params.csv";
pub const COMBINED_FILE: &str = "combined.csv";
pub const MODEL_FILE: &str = "model.json";
pub const SYNTHETIC_FILE: &str = "synthetic.csv";
pub const REPORT_FILE: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PipelineStage {
    Fit,
    Combine,
    Model,
    Generate,
    Validate,
}

impl PipelineStage {
    pub const ALL: [PipelineStage; 5] = [
        PipelineStage::Fit,
        PipelineStage::Combine,
        PipelineStage::Model,
        PipelineStage::Generate,
        PipelineStage::Validate,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PipelineStage::Fit => "fit",
            PipelineStage::Combine => "combine",
            PipelineStage::Model => "model",
            PipelineStage::Generate => "generate",
            PipelineStage::Validate => "validate",
        }
    }

    pub fn artifact(self) -> &'static str {
        match self {
            PipelineStage::Fit => PARAMS_FILE,
            PipelineStage::Combine => COMBINED_FILE,
            PipelineStage::Model => MODEL_FILE,
            PipelineStage::Generate => SYNTHETIC_FILE,
            PipelineStage::Validate => REPORT_FILE,
        }
    }

    /// Seed key mixed into the master seed, so stages draw independent streams.
    fn seed_key(self) -> u64 {
        self as u64 + 1
    }
}

impl std::str::FromStr for PipelineStage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PipelineStage::ALL
            .into_iter()
            .find(|st| st.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

/// Flat key-value configuration shared by all stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub input: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub seed: u64,
    pub n_b_max: usize,
    pub lambda: f64,
    pub epsilon: f64,
    pub steady_slope_tol: f64,
    pub max_restarts: usize,
    pub convergence_tol: f64,
    pub d_thd: f64,
    /// When set, overrides `d_thd` with this weighted quantile of
    /// crash-to-nearest-crash distances.
    pub d_thd_quantile: Option<f64>,
    pub mass_threshold: f64,
    pub corr_threshold: f64,
    pub alpha_corr: f64,
    pub max_split_depth: usize,
    pub n_synth: usize,
    pub speed_check: SpeedCheck,
    pub cap_factor: usize,
    pub alpha_ks: f64,
    pub n_perm: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let fit = FitConfig::default();
        let model = ModelConfig::default();
        PipelineConfig {
            input: None,
            out_dir: PathBuf::from("out"),
            seed: 0,
            n_b_max: fit.n_b_max,
            lambda: fit.lambda,
            epsilon: fit.epsilon,
            steady_slope_tol: fit.steady_slope_tol,
            max_restarts: fit.max_restarts,
            convergence_tol: fit.convergence_tol,
            d_thd: DEFAULT_D_THD,
            d_thd_quantile: None,
            mass_threshold: model.mass_threshold,
            corr_threshold: model.corr.threshold,
            alpha_corr: model.corr.alpha,
            max_split_depth: model.max_split_depth,
            n_synth: 10_000,
            speed_check: SpeedCheck::FullDuration,
            cap_factor: DEFAULT_CAP_FACTOR,
            alpha_ks: 0.10,
            n_perm: DEFAULT_N_PERM,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Read a TOML file; relative `input` and `out_dir` resolve against the
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        if let Some(base) = path.parent() {
            if let Some(input) = &cfg.input {
                if input.is_relative() {
                    cfg.input = Some(base.join(input));
                }
            }
            if cfg.out_dir.is_relative() {
                cfg.out_dir = base.join(&cfg.out_dir);
            }
        }
        Ok(cfg)
    }

    pub fn fit_config(&self) -> FitConfig {
        FitConfig {
            n_b_max: self.n_b_max,
            lambda: self.lambda,
            epsilon: self.epsilon,
            steady_slope_tol: self.steady_slope_tol,
            max_restarts: self.max_restarts,
            convergence_tol: self.convergence_tol,
            seed: mix_seed(self.seed, PipelineStage::Fit.seed_key()),
        }
    }

    pub fn threshold(&self) -> Threshold {
        match self.d_thd_quantile {
            Some(q) => Threshold::Quantile(q),
            None => Threshold::Fixed(self.d_thd),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            mass_threshold: self.mass_threshold,
            corr: CorrRule {
                threshold: self.corr_threshold,
                alpha: self.alpha_corr,
            },
            max_split_depth: self.max_split_depth,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            speed_check: self.speed_check,
            cap_factor: self.cap_factor,
        }
    }

    pub fn generate_seed(&self) -> u64 {
        mix_seed(self.seed, PipelineStage::Generate.seed_key())
    }

    pub fn validate_seed(&self) -> u64 {
        mix_seed(self.seed, PipelineStage::Validate.seed_key())
    }

    pub fn check(&self) -> Result<()> {
        self.fit_config().check()?;
        self.model_config().check()?;
        if !(self.d_thd >= 0.0) {
            return Err(Error::Config("d_thd must be non-negative".into()));
        }
        if let Some(q) = self.d_thd_quantile {
            if !(0.0..=1.0).contains(&q) {
                return Err(Error::Config("d_thd_quantile must lie in [0, 1]".into()));
            }
        }
        if !(self.alpha_ks > 0.0 && self.alpha_ks < 1.0) {
            return Err(Error::Config("alpha_ks must lie in (0, 1)".into()));
        }
        if self.n_synth == 0 || self.n_perm == 0 || self.cap_factor == 0 {
            return Err(Error::Config("n_synth, n_perm and cap_factor must be positive".into()));
        }
        Ok(())
    }

    pub fn artifact(&self, stage: PipelineStage) -> PathBuf {
        self.out_dir.join(stage.artifact())
    }
}

/// Fit every event; events that fail keep a row so group counts stay raw.
pub fn fit_stage(events: &[crate::ingest::RawEvent], cfg: &FitConfig) -> Vec<ParamRow> {
    events
        .iter()
        .zip(fit_events(events, cfg))
        .map(|(e, r)| match r {
            Ok(f) => ParamRow::from_fit(&f, e.native_weight),
            Err(err) => {
                log::warn!("event {} not fitted: {err}", e.event_id);
                ParamRow::failed(&e.event_id, e.source_group, e.severity, &err)
            }
        })
        .collect()
}

/// Group counts from all rows, then combination of the valid ones.
pub fn combine_stage(rows: &[ParamRow], threshold: Threshold) -> Result<(WeightedDataset, CombineSummary)> {
    let counts = count_groups(rows.iter().map(|r| (&r.params, r.valid)));
    let valid: Vec<EventParams> = rows.iter().filter(|r| r.valid).map(|r| r.params.clone()).collect();
    combine_all(&valid, &counts, threshold)
}

fn read_model(path: &Path) -> Result<Model> {
    if !path.exists() {
        return Err(Error::MissingArtifact("model".into()));
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Model::from_json(&text)
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact(what.into()))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Results of a run, for callers that want more than the files.
#[derive(Debug, Default)]
pub struct PipelineOutcome {
    pub written: Vec<PathBuf>,
    pub combine: Option<CombineSummary>,
    pub synthetic: Option<SyntheticDataset>,
    pub report: Option<ValidationReport>,
}

fn run_one(cfg: &PipelineConfig, stage: PipelineStage, out: &mut PipelineOutcome) -> Result<()> {
    let target = cfg.artifact(stage);
    match stage {
        PipelineStage::Fit => {
            let input = cfg
                .input
                .as_deref()
                .ok_or_else(|| Error::Config("no input file configured".into()))?;
            let events = load_events(input)?;
            if events.is_empty() {
                return Err(Error::EmptyInput);
            }
            let rows = fit_stage(&events, &cfg.fit_config());
            io::write_params(&target, &rows)?;
        }
        PipelineStage::Combine => {
            let src = cfg.artifact(PipelineStage::Fit);
            require(&src, "params")?;
            let rows = io::read_params(&src)?;
            let (d, summary) = combine_stage(&rows, cfg.threshold())?;
            log::info!(
                "combined {} crash + {} attached near-crash events, total weight {:.6}",
                summary.counts.n_cmb(),
                summary.merge.selected.len(),
                summary.incident_weight_total
            );
            io::write_combined(&target, &d)?;
            out.combine = Some(summary);
        }
        PipelineStage::Model => {
            let src = cfg.artifact(PipelineStage::Combine);
            require(&src, "combined")?;
            let d = io::read_combined(&src)?;
            let model = build_model(&d, &cfg.model_config())?;
            write_text(&target, &model.to_json()?)?;
        }
        PipelineStage::Generate => {
            let model = read_model(&cfg.artifact(PipelineStage::Model))?;
            let s = generate(&model, cfg.n_synth, cfg.generate_seed(), &cfg.synth_config())?;
            io::write_synthetic(&target, &s)?;
            out.synthetic = Some(s);
        }
        PipelineStage::Validate => {
            let raw_path = cfg.artifact(PipelineStage::Combine);
            let syn_path = cfg.artifact(PipelineStage::Generate);
            require(&raw_path, "combined")?;
            require(&syn_path, "synthetic")?;
            let raw = io::read_combined(&raw_path)?;
            let (syn, _) = io::read_synthetic(&syn_path)?;
            let report = compare(&raw.events, &syn, cfg.alpha_ks, cfg.n_perm, cfg.validate_seed())?;
            write_text(&target, &serde_json::to_string_pretty(&report)?)?;
            out.report = Some(report);
        }
    }
    out.written.push(target);
    Ok(())
}

/// Run all stages in order, or only `only`. Errors carry the stage name.
pub fn run_pipeline(cfg: &PipelineConfig, only: Option<PipelineStage>) -> Result<PipelineOutcome> {
    cfg.check()?;
    let mut out = PipelineOutcome::default();
    let stages: Vec<PipelineStage> = match only {
        Some(s) => vec![s],
        None => PipelineStage::ALL.to_vec(),
    };
    for stage in stages {
        log::info!("stage {}", stage.name());
        run_one(cfg, stage, &mut out).map_err(|e| e.in_stage(stage.name()))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_defaults_and_overrides() {
        let c = PipelineConfig::from_toml("seed = 9\nd_thd_quantile = 0.5\nspeed_check = \"ModeledSpan\"").unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.threshold(), Threshold::Quantile(0.5));
        assert_eq!(c.speed_check, SpeedCheck::ModeledSpan);
        assert_eq!(c.n_b_max, 3);
        assert!(PipelineConfig::from_toml("sede = 1").is_err());
    }

    #[test]
    fn generate_without_model_names_the_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = PipelineConfig {
            out_dir: dir.path().to_path_buf(),
            ..Default::default()
        };
        let err = run_pipeline(&cfg, Some(PipelineStage::Generate)).unwrap_err();
        assert!(err.to_string().contains("model artifact missing"), "{err}");
        assert!(err.to_string().starts_with("generate"));
        assert!(err.is_input_error());
    }

    #[test]
    fn stage_names_parse() {
        for s in PipelineStage::ALL {
            assert_eq!(s.name().parse::<PipelineStage>().unwrap(), s);
        }
        assert!("plot".parse::<PipelineStage>().is_err());
    }
}
