//! Sub-dataset categorization and per sub-dataset multivariate models.
//!
//! Each sub-dataset is modeled as one or more components (more than one when
//! two point-mass parameters are correlated and the data are split). Within a
//! component every parameter has exactly one role: constant, mirror of another
//! parameter, member of the Gaussian copula, or independent marginal (plain or
//! hurdle). Parameters correlated with a point-mass parameter are modeled on
//! regression residuals and shifted back after sampling.

pub mod corr;
pub mod dist;

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::combine::{Stage, WeightedDataset};
use crate::error::{Error, Result};
use crate::pwl_fit::EventParams;
use crate::stats::{effective_n, is_constant, weighted_mean};
use crate::Param;

pub use corr::{decorrelate, weighted_corr, CorrRule, TransformSpec};
pub use dist::{
    detect_point_mass, fit_hurdle, fit_univariate, quantile_normalize, Family, FittedDist,
    HurdleDist, HurdleRest, PointMassSpec,
};

/// Schema id written into model documents.
pub const MODEL_SCHEMA: &str = "leadkin.model/v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SubdatasetId {
    S1,
    S2,
    S3,
    S4,
    S5,
    S6,
    S7,
}

impl SubdatasetId {
    pub const ALL: [SubdatasetId; 7] = [
        SubdatasetId::S1,
        SubdatasetId::S2,
        SubdatasetId::S3,
        SubdatasetId::S4,
        SubdatasetId::S5,
        SubdatasetId::S6,
        SubdatasetId::S7,
    ];

    pub fn pattern(self) -> Pattern {
        match self {
            SubdatasetId::S1 | SubdatasetId::S2 | SubdatasetId::S3 => Pattern::ConstantAccel,
            SubdatasetId::S4 | SubdatasetId::S5 => Pattern::IncreasingAccel,
            SubdatasetId::S6 | SubdatasetId::S7 => Pattern::DecreasingAccel,
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            SubdatasetId::S1 => "standstill",
            SubdatasetId::S2 => "constant acceleration",
            SubdatasetId::S3 => "constant non-zero acceleration then steady speed",
            SubdatasetId::S4 => "increasing acceleration, a1 < 0",
            SubdatasetId::S5 => "increasing acceleration, a1 >= 0",
            SubdatasetId::S6 => "decreasing acceleration, tau_s = 0",
            SubdatasetId::S7 => "decreasing acceleration, tau_s > 0",
        }
    }
}

impl fmt::Display for SubdatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pattern {
    ConstantAccel,
    IncreasingAccel,
    DecreasingAccel,
}

/// Speed-change pattern from the two acceleration parameters. Segment 1 is
/// later in time than segment 2, so `a1 > a2` means acceleration increases.
pub fn pattern(e: &EventParams) -> Pattern {
    if e.a1 == e.a2 {
        Pattern::ConstantAccel
    } else if e.a1 > e.a2 {
        Pattern::IncreasingAccel
    } else {
        Pattern::DecreasingAccel
    }
}

/// Sub-dataset of one event plus a note when the assignment rests on a tie
/// rule rather than the predicates themselves.
pub fn classify(e: &EventParams) -> (SubdatasetId, Option<&'static str>) {
    match pattern(e) {
        Pattern::ConstantAccel => {
            if e.v_c == 0.0 && e.a1 == 0.0 {
                (SubdatasetId::S1, None)
            } else if e.tau_s > 0.0 && e.a1 != 0.0 {
                (SubdatasetId::S3, None)
            } else if e.a1 == 0.0 {
                (SubdatasetId::S2, Some("steady speed without acceleration segment"))
            } else {
                (SubdatasetId::S2, None)
            }
        }
        Pattern::IncreasingAccel => {
            if e.a1 < 0.0 {
                (SubdatasetId::S4, None)
            } else if e.a1 == 0.0 {
                (SubdatasetId::S5, Some("increasing acceleration with a1 = 0"))
            } else {
                (SubdatasetId::S5, None)
            }
        }
        Pattern::DecreasingAccel => {
            if e.tau_s == 0.0 {
                (SubdatasetId::S6, None)
            } else {
                (SubdatasetId::S7, None)
            }
        }
    }
}

/// Partition a dataset into its non-empty sub-datasets.
pub fn categorize(d: &WeightedDataset) -> BTreeMap<SubdatasetId, WeightedDataset> {
    let mut out: BTreeMap<SubdatasetId, WeightedDataset> = BTreeMap::new();
    for (e, prov) in d.events.iter().zip(&d.provenance) {
        let (id, note) = classify(e);
        if let Some(note) = note {
            log::info!("event {} assigned to {id}: {note}", e.event_id);
        }
        let sub = out.entry(id).or_insert_with(|| WeightedDataset {
            events: Vec::new(),
            stage: d.stage,
            provenance: Vec::new(),
        });
        sub.events.push(e.clone());
        sub.provenance.push(prov.clone());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub mass_threshold: f64,
    pub corr: CorrRule,
    /// Nesting limit for point-mass splits.
    pub max_split_depth: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            mass_threshold: 0.10,
            corr: CorrRule::default(),
            max_split_depth: 4,
        }
    }
}

impl ModelConfig {
    pub fn check(&self) -> Result<()> {
        let ok = self.mass_threshold > 0.0
            && self.mass_threshold < 1.0
            && (0.0..=1.0).contains(&self.corr.threshold)
            && self.corr.alpha > 0.0
            && self.corr.alpha < 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("model thresholds out of range: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Marginal {
    Fitted(FittedDist),
    Hurdle(HurdleDist),
}

impl Marginal {
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Marginal::Fitted(d) => d.sample(rng),
            Marginal::Hurdle(h) => h.sample(rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantParam {
    pub param: Param,
    pub value: f64,
}

/// `param` always equals `source` in the training data (e.g. `a2 = a1`
/// for constant acceleration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MirrorParam {
    pub param: Param,
    pub source: Param,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedParam {
    pub param: Param,
    pub marginal: FittedDist,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndependentParam {
    pub param: Param,
    pub marginal: Marginal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Component {
    /// Share of the bundle's training weight.
    pub weight_share: f64,
    pub n_train: usize,
    pub constants: Vec<ConstantParam>,
    pub mirrors: Vec<MirrorParam>,
    pub point_masses: Vec<PointMassSpec>,
    pub transforms: Vec<TransformSpec>,
    pub correlated: Vec<CorrelatedParam>,
    /// Copula correlation of `correlated`, unit diagonal, PSD.
    pub sigma: Vec<Vec<f64>>,
    pub independent: Vec<IndependentParam>,
}

impl Component {
    /// Parameters in the order they receive their role.
    pub fn roles(&self) -> Vec<Param> {
        self.constants
            .iter()
            .map(|c| c.param)
            .chain(self.mirrors.iter().map(|m| m.param))
            .chain(self.correlated.iter().map(|c| c.param))
            .chain(self.independent.iter().map(|c| c.param))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubmodelBundle {
    pub label: SubdatasetId,
    pub pattern: Pattern,
    /// Share of the full dataset's weight held by this sub-dataset.
    pub train_weight_share: f64,
    pub n_train: usize,
    pub components: Vec<Component>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub schema: String,
    pub total_weight: f64,
    pub config: ModelConfig,
    pub bundles: Vec<SubmodelBundle>,
}

impl Model {
    pub fn bundle(&self, id: SubdatasetId) -> Option<&SubmodelBundle> {
        self.bundles.iter().find(|b| b.label == id)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Model> {
        let m: Model = serde_json::from_str(s)?;
        if m.schema != MODEL_SCHEMA {
            return Err(Error::Config(format!(
                "unsupported model schema {:?}, expected {MODEL_SCHEMA:?}",
                m.schema
            )));
        }
        Ok(m)
    }
}

struct Columns<'a> {
    cols: [Vec<f64>; 6],
    w: &'a [f64],
}

impl Columns<'_> {
    fn col(&self, p: Param) -> &[f64] {
        &self.cols[p.index()]
    }

    fn subset(&self, keep: &[bool]) -> ([Vec<f64>; 6], Vec<f64>) {
        let pick = |v: &[f64]| {
            v.iter()
                .zip(keep)
                .filter(|(_, &k)| k)
                .map(|(&x, _)| x)
                .collect::<Vec<f64>>()
        };
        (
            std::array::from_fn(|i| pick(&self.cols[i])),
            pick(self.w),
        )
    }
}

fn fit_regular(values: &[f64], w: &[f64], param: Param) -> Result<FittedDist> {
    if effective_n(w) >= dist::MIN_FIT_N_EFF {
        match fit_univariate(values, w, &Family::REGULAR) {
            Ok(d) => return Ok(d),
            Err(e) => log::warn!("{param}: {e}; using normal fallback"),
        }
    }
    dist::fallback_normal(values, w)
        .ok_or_else(|| Error::ModelBuildFailed(format!("{param}: no variance to model")))
}

/// The point-mass parameter to split on: the one whose mass share is closest
/// to one half, later parameters winning ties.
fn split_choice(pairs: &[(PointMassSpec, PointMassSpec)]) -> PointMassSpec {
    let mut best: Option<PointMassSpec> = None;
    for s in pairs.iter().flat_map(|(a, b)| [*a, *b]) {
        let balance = (s.mass_probability - 0.5).abs();
        best = match best {
            Some(b) if (b.mass_probability - 0.5).abs() < balance => Some(b),
            Some(b) if (b.mass_probability - 0.5).abs() == balance && b.param > s.param => Some(b),
            _ => Some(s),
        };
    }
    best.expect("at least one correlated pair")
}

fn build_components(
    cols: [Vec<f64>; 6],
    w: &[f64],
    cfg: &ModelConfig,
    depth: usize,
) -> Result<Vec<Component>> {
    let data = Columns { cols, w };
    let n = w.len();

    // Constants and exact copies of another parameter need no model.
    let mut constants = Vec::new();
    let mut mirrors = Vec::new();
    let mut active: Vec<Param> = Vec::new();
    for p in Param::ALL {
        let x = data.col(p);
        if is_constant(x) {
            let value = if x.iter().all(|&v| v == x[0]) {
                x[0]
            } else {
                weighted_mean(x, w)
            };
            constants.push(ConstantParam { param: p, value });
        } else if let Some(&q) = active.iter().find(|&&q| data.col(q) == x) {
            mirrors.push(MirrorParam { param: p, source: q });
        } else {
            active.push(p);
        }
    }

    let point_masses: Vec<PointMassSpec> = active
        .iter()
        .filter_map(|&p| {
            detect_point_mass(data.col(p), w, cfg.mass_threshold).map(|(v, share)| PointMassSpec {
                param: p,
                mass_value: v,
                mass_probability: share,
            })
        })
        .collect();

    let mut correlated_pm = Vec::new();
    for (i, a) in point_masses.iter().enumerate() {
        for b in &point_masses[i + 1..] {
            if cfg.corr.correlated(data.col(a.param), data.col(b.param), w) {
                correlated_pm.push((*a, *b));
            }
        }
    }
    if !correlated_pm.is_empty() {
        let s = split_choice(&correlated_pm);
        if depth >= cfg.max_split_depth {
            log::warn!("split depth limit reached; {} stays unsplit", s.param);
        } else {
            let at_mass: Vec<bool> = data.col(s.param).iter().map(|&v| v == s.mass_value).collect();
            let off_mass: Vec<bool> = at_mass.iter().map(|b| !b).collect();
            if at_mass.iter().all(|&b| b) || off_mass.iter().all(|&b| b) {
                log::warn!("split on {} leaves an empty side; not splitting", s.param);
            } else {
                log::debug!("splitting on {} = {}", s.param, s.mass_value);
                let total: f64 = w.iter().sum();
                let mut out = Vec::new();
                for keep in [&at_mass, &off_mass] {
                    let (c, sw) = data.subset(keep);
                    let share = sw.iter().sum::<f64>() / total;
                    for mut comp in build_components(c, &sw, cfg, depth + 1)? {
                        comp.weight_share *= share;
                        out.push(comp);
                    }
                }
                return Ok(out);
            }
        }
    }

    let pm_params: Vec<Param> = point_masses.iter().map(|s| s.param).collect();
    let regular: Vec<Param> = active.iter().copied().filter(|p| !pm_params.contains(p)).collect();

    // Residualize regular parameters that depend on a point-mass parameter.
    let mut values: BTreeMap<Param, Vec<f64>> =
        active.iter().map(|&p| (p, data.col(p).to_vec())).collect();
    let mut transforms = Vec::new();
    if !pm_params.is_empty() {
        let pm_cols: Vec<(Param, Vec<f64>)> =
            pm_params.iter().map(|&p| (p, data.col(p).to_vec())).collect();
        for &p in &regular {
            let x = data.col(p);
            if pm_params.iter().any(|&q| cfg.corr.correlated(x, data.col(q), w)) {
                let (residual, spec) = decorrelate(p, x, &pm_cols, w)?;
                values.insert(p, residual);
                transforms.push(spec);
            }
        }
    }

    let correlated_params: Vec<Param> = regular
        .iter()
        .copied()
        .filter(|&p| {
            effective_n(w) >= 3.0
                && regular
                    .iter()
                    .any(|&q| q != p && cfg.corr.correlated(&values[&p], &values[&q], w))
        })
        .collect();

    let mut independent = Vec::new();
    for s in &point_masses {
        let h = fit_hurdle(&values[&s.param], w, s.mass_value)?;
        independent.push(IndependentParam {
            param: s.param,
            marginal: Marginal::Hurdle(h),
        });
    }
    let mut correlated = Vec::new();
    for &p in &regular {
        let marginal = fit_regular(&values[&p], w, p)?;
        if correlated_params.contains(&p) {
            correlated.push(CorrelatedParam { param: p, marginal });
        } else {
            independent.push(IndependentParam {
                param: p,
                marginal: Marginal::Fitted(marginal),
            });
        }
    }

    let z: Vec<Vec<f64>> = correlated
        .iter()
        .map(|c| quantile_normalize(&values[&c.param], &c.marginal))
        .collect();
    let (sigma, clipped) = corr::nearest_psd(&corr::correlation_matrix(&z, w));
    if clipped < 0.0 {
        log::info!("copula correlation repaired, most negative eigenvalue {clipped:.3e}");
    }

    Ok(vec![Component {
        weight_share: 1.0,
        n_train: n,
        constants,
        mirrors,
        point_masses,
        transforms,
        correlated,
        sigma,
        independent,
    }])
}

/// Model one sub-dataset. `train_weight_share` is left at 1 and set by
/// [`build_model`] relative to the full dataset.
pub fn build_submodel(sub: &WeightedDataset, label: SubdatasetId, cfg: &ModelConfig) -> Result<SubmodelBundle> {
    if sub.is_empty() {
        return Err(Error::EmptyInput);
    }
    let cols = std::array::from_fn(|i| sub.column(Param::ALL[i]));
    let components = build_components(cols, &sub.weights(), cfg, 0)?;
    Ok(SubmodelBundle {
        label,
        pattern: label.pattern(),
        train_weight_share: 1.0,
        n_train: sub.len(),
        components,
    })
}

/// Categorize and model every non-empty sub-dataset.
pub fn build_model(d: &WeightedDataset, cfg: &ModelConfig) -> Result<Model> {
    cfg.check()?;
    if d.stage != Stage::CombinedIncident {
        log::debug!("building model from a {:?} dataset", d.stage);
    }
    let total = d.total_weight();
    if !(total > 0.0) {
        return Err(Error::EmptyInput);
    }
    let subs: Vec<(SubdatasetId, WeightedDataset)> = categorize(d).into_iter().collect();
    let built = crate::par::map(&subs, |(id, sub)| {
        build_submodel(sub, *id, cfg).map(|mut b| {
            b.train_weight_share = sub.total_weight() / total;
            b
        })
    });
    let bundles = built
        .into_iter()
        .zip(&subs)
        .map(|(r, (id, _))| r.map_err(|e| Error::ModelBuildFailed(format!("{id}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(Model {
        schema: MODEL_SCHEMA.into(),
        total_weight: total,
        config: *cfg,
        bundles,
    })
}

/// Draws events from one component; holds the copula factor.
pub struct ComponentSampler<'a> {
    comp: &'a Component,
    factor: DMatrix<f64>,
}

impl<'a> ComponentSampler<'a> {
    pub fn new(comp: &'a Component) -> Self {
        ComponentSampler {
            comp,
            factor: corr::sampling_factor(&comp.sigma),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> EventParams {
        let mut e = EventParams::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for c in &self.comp.constants {
            c.param.set(&mut e, c.value);
        }
        for p in &self.comp.independent {
            p.param.set(&mut e, p.marginal.sample(rng));
        }
        let k = self.comp.correlated.len();
        if k > 0 {
            let n = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
            let z = &self.factor * n;
            for (c, zi) in self.comp.correlated.iter().zip(z.iter()) {
                c.param.set(&mut e, dist::quantile_denormalize(*zi, &c.marginal));
            }
        }
        for t in &self.comp.transforms {
            let xs: Vec<f64> = t.regressors.iter().map(|r| r.get(&e)).collect();
            let x = t.param.get(&e) + t.predict(&xs);
            t.param.set(&mut e, x);
        }
        for m in &self.comp.mirrors {
            let x = m.source.get(&e);
            m.param.set(&mut e, x);
        }
        e
    }
}

/// Draws events from a bundle, picking a component by its weight share.
pub struct BundleSampler<'a> {
    samplers: Vec<ComponentSampler<'a>>,
    cumulative: Vec<f64>,
}

impl<'a> BundleSampler<'a> {
    pub fn new(b: &'a SubmodelBundle) -> Self {
        let mut acc = 0.0;
        let cumulative = b
            .components
            .iter()
            .map(|c| {
                acc += c.weight_share;
                acc
            })
            .collect();
        BundleSampler {
            samplers: b.components.iter().map(ComponentSampler::new).collect(),
            cumulative,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> EventParams {
        let i = if self.samplers.len() == 1 {
            0
        } else {
            let u: f64 = rng.random::<f64>() * self.cumulative.last().copied().unwrap_or(1.0);
            self.cumulative
                .iter()
                .position(|&c| u < c)
                .unwrap_or(self.samplers.len() - 1)
        };
        self.samplers[i].sample(rng)
    }
}
