//! JSON experiment configs, one flat schema per pipeline.
//!
//! Every schema accepts `pipeline`, `seed`, `out` and `format_version`.
//! Unknown keys are rejected. Training hyperparameters sit in optional
//! nested objects whose missing fields take the pipeline's defaults.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ualk_core::io::FORMAT_VERSION;
use ualk_core::model::TrainConfig;
use ualk_core::synthesis::CovarianceKind;
use ualk_core::vmf::{KappaMode, PrototypeInit};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pipeline {
    Gen,
    Vos,
    Siren,
    Sal,
    Halo,
    Eval,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Gen => "gen",
            Pipeline::Vos => "vos",
            Pipeline::Siren => "siren",
            Pipeline::Sal => "sal",
            Pipeline::Halo => "halo",
            Pipeline::Eval => "eval",
        }
    }
}

/// Keys shared by every schema.
pub trait Common {
    const PIPELINE: Pipeline;
    fn pipeline_mut(&mut self) -> &mut Option<Pipeline>;
    fn seed_mut(&mut self) -> &mut Option<u64>;
    fn out_mut(&mut self) -> &mut Option<PathBuf>;
    fn format_version(&self) -> Option<u32>;
    /// Fills defaults so that the serialized form is complete.
    fn resolve(&mut self, base_dir: &Path) -> Result<()>;
    fn requires_seed(&self) -> bool {
        true
    }
}

macro_rules! common {
    ($t:ty, $p:expr) => {
        impl Common for $t {
            const PIPELINE: Pipeline = $p;
            fn pipeline_mut(&mut self) -> &mut Option<Pipeline> {
                &mut self.pipeline
            }
            fn seed_mut(&mut self) -> &mut Option<u64> {
                &mut self.seed
            }
            fn out_mut(&mut self) -> &mut Option<PathBuf> {
                &mut self.out
            }
            fn format_version(&self) -> Option<u32> {
                self.format_version
            }
            fn resolve(&mut self, base_dir: &Path) -> Result<()> {
                self.fill(base_dir)
            }
        }
    };
}

/// Optional overrides of [`TrainConfig`]; seeds are derived from the run seed.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainParams {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reg_start: Option<f64>,
}

impl TrainParams {
    pub fn apply(&self, base: &TrainConfig, seed: u64) -> TrainConfig {
        TrainConfig {
            lr: self.lr.unwrap_or(base.lr),
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            momentum: self.momentum.unwrap_or(base.momentum),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
            beta: self.beta.unwrap_or(base.beta),
            seed,
            hidden: self.hidden.clone().unwrap_or_else(|| base.hidden.clone()),
            reg_start: self.reg_start.unwrap_or(base.reg_start),
        }
    }

    fn complete(&mut self, base: &TrainConfig) {
        *self = Self::from(&self.apply(base, 0));
    }
}

impl From<&TrainConfig> for TrainParams {
    fn from(c: &TrainConfig) -> Self {
        Self {
            lr: Some(c.lr),
            epochs: Some(c.epochs),
            batch_size: Some(c.batch_size),
            momentum: Some(c.momentum),
            weight_decay: Some(c.weight_decay),
            beta: Some(c.beta),
            hidden: Some(c.hidden.clone()),
            reg_start: Some(c.reg_start),
        }
    }
}

fn fill<T: Clone>(slot: &mut Option<T>, v: T) -> T {
    slot.get_or_insert(v).clone()
}

fn require<T: Clone>(slot: &Option<T>, key: &str) -> Result<T> {
    slot.clone().ok_or_else(|| anyhow!("missing required key `{key}`"))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Dataset {
    /// Three 2-D Gaussian classes.
    GaussianToy,
    /// Outliers of one wild scenario.
    SalOod,
    /// Inliers and outliers of one wild scenario, shuffled.
    SalWild,
    SubspaceMixture,
}

// ---------------------------------------------------------------------------
// gen
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenConfig {
    pub pipeline: Option<Pipeline>,
    pub seed: Option<u64>,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub format_version: Option<u32>,
    pub dataset: Option<Dataset>,
    /// `gaussian-toy` and `sal-wild` inliers per class.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub per_class: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scenario: Option<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
}

impl GenConfig {
    fn fill(&mut self, _: &Path) -> Result<()> {
        match require(&self.dataset, "dataset")? {
            Dataset::GaussianToy => {
                fill(&mut self.per_class, 1000);
            }
            Dataset::SalOod => {
                require(&self.scenario, "scenario")?;
            }
            Dataset::SalWild => {
                require(&self.scenario, "scenario")?;
                fill(&mut self.per_class, 3000);
            }
            Dataset::SubspaceMixture => {
                fill(&mut self.n, 5000);
                fill(&mut self.dim, 32);
                fill(&mut self.pi, 0.1);
                fill(&mut self.shift, 5.0);
            }
        }
        Ok(())
    }
}
common!(GenConfig, Pipeline::Gen);

// ---------------------------------------------------------------------------
// vos
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Covariance {
    Tied,
    PerClass,
}

impl From<Covariance> for CovarianceKind {
    fn from(c: Covariance) -> Self {
        match c {
            Covariance::Tied => CovarianceKind::Tied,
            Covariance::PerClass => CovarianceKind::PerClass,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VosPipelineConfig {
    pub pipeline: Option<Pipeline>,
    pub seed: Option<u64>,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub format_version: Option<u32>,
    pub train_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    pub ring_radius: Option<f64>,
    pub ring_points: Option<usize>,
    #[serde(default)]
    pub train: TrainParams,
    pub queue_capacity: Option<usize>,
    pub pool_size: Option<usize>,
    /// `t`: rank of the density that sets ε.
    pub t: Option<usize>,
    pub pools_per_class: Option<usize>,
    pub covariance: Option<Covariance>,
    pub learn_weights: Option<bool>,
}

impl VosPipelineConfig {
    fn fill(&mut self, _: &Path) -> Result<()> {
        fill(&mut self.train_per_class, 1000);
        fill(&mut self.test_per_class, 500);
        fill(&mut self.ring_radius, 8.0);
        fill(&mut self.ring_points, 360);
        self.train.complete(&TrainConfig::default());
        fill(&mut self.queue_capacity, 1000);
        fill(&mut self.pool_size, 10_000);
        fill(&mut self.t, 1);
        fill(&mut self.pools_per_class, 1);
        fill(&mut self.covariance, Covariance::Tied);
        fill(&mut self.learn_weights, true);
        Ok(())
    }
}
common!(VosPipelineConfig, Pipeline::Vos);

// ---------------------------------------------------------------------------
// siren
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kappa {
    Learnable,
    Fixed,
}

impl From<Kappa> for KappaMode {
    fn from(k: Kappa) -> Self {
        match k {
            Kappa::Learnable => KappaMode::Learnable,
            Kappa::Fixed => KappaMode::Fixed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Prototypes {
    WarmupMeans,
    Random,
}

impl From<Prototypes> for PrototypeInit {
    fn from(p: Prototypes) -> Self {
        match p {
            Prototypes::WarmupMeans => PrototypeInit::WarmupMeans,
            Prototypes::Random => PrototypeInit::Random,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SirenPipelineConfig {
    pub pipeline: Option<Pipeline>,
    pub seed: Option<u64>,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub format_version: Option<u32>,
    pub train_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    pub ring_radius: Option<f64>,
    pub ring_points: Option<usize>,
    #[serde(default)]
    pub train: TrainParams,
    pub proj_dim: Option<usize>,
    pub alpha: Option<f64>,
    pub kappa_init: Option<f64>,
    pub kappa_mode: Option<Kappa>,
    pub prototype_init: Option<Prototypes>,
    pub knn_k: Option<usize>,
}

impl SirenPipelineConfig {
    fn fill(&mut self, _: &Path) -> Result<()> {
        let d = ualk_core::vmf::SirenConfig::default();
        fill(&mut self.train_per_class, 1000);
        fill(&mut self.test_per_class, 500);
        fill(&mut self.ring_radius, 8.0);
        fill(&mut self.ring_points, 360);
        self.train.complete(&d.train);
        fill(&mut self.proj_dim, 3);
        fill(&mut self.alpha, d.alpha);
        fill(&mut self.kappa_init, d.kappa_init);
        fill(&mut self.kappa_mode, Kappa::Learnable);
        fill(&mut self.prototype_init, Prototypes::WarmupMeans);
        fill(&mut self.knn_k, 10);
        Ok(())
    }
}
common!(SirenPipelineConfig, Pipeline::Siren);

// ---------------------------------------------------------------------------
// sal
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SalPipelineConfig {
    pub pipeline: Option<Pipeline>,
    pub seed: Option<u64>,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub format_version: Option<u32>,
    /// Wild outlier scenario, 1 or 2.
    pub scenario: Option<u8>,
    pub id_per_class: Option<usize>,
    pub wild_per_class: Option<usize>,
    pub test_per_class: Option<usize>,
    pub quantile: Option<f64>,
    pub class_conditional: Option<bool>,
    pub num_vectors: Option<usize>,
    #[serde(default)]
    pub erm: TrainParams,
    #[serde(default)]
    pub binary: TrainParams,
}

impl SalPipelineConfig {
    fn fill(&mut self, _: &Path) -> Result<()> {
        require(&self.scenario, "scenario")?;
        let d = ualk_core::wildfilter::SalConfig::toy(0);
        fill(&mut self.id_per_class, 1000);
        fill(&mut self.wild_per_class, 3000);
        fill(&mut self.test_per_class, 500);
        fill(&mut self.quantile, d.filter.quantile);
        fill(&mut self.class_conditional, d.filter.class_conditional);
        fill(&mut self.num_vectors, d.filter.num_vectors);
        self.erm.complete(&d.erm);
        self.binary.complete(&d.binary);
        Ok(())
    }
}
common!(SalPipelineConfig, Pipeline::Sal);

// ---------------------------------------------------------------------------
// halo
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HaloPipelineConfig {
    pub pipeline: Option<Pipeline>,
    pub seed: Option<u64>,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub format_version: Option<u32>,
    pub n: Option<usize>,
    pub dim: Option<usize>,
    pub pi: Option<f64>,
    pub shift: Option<f64>,
    pub k: Option<usize>,
    pub threshold_quantile: Option<f64>,
    pub normalize: Option<bool>,
    #[serde(default)]
    pub classifier: TrainParams,
}

impl HaloPipelineConfig {
    fn fill(&mut self, _: &Path) -> Result<()> {
        let d = ualk_core::subspace::HaloConfig::default();
        fill(&mut self.n, 5000);
        fill(&mut self.dim, 32);
        fill(&mut self.pi, 0.1);
        fill(&mut self.shift, 5.0);
        fill(&mut self.k, d.k);
        fill(&mut self.threshold_quantile, d.threshold_quantile);
        fill(&mut self.normalize, d.normalize);
        self.classifier.complete(&d.classifier);
        Ok(())
    }
}
common!(HaloPipelineConfig, Pipeline::Halo);

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub pipeline: Option<Pipeline>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing)]
    pub out: Option<PathBuf>,
    pub format_version: Option<u32>,
    /// Matrix file (binary or CSV) of ID scores; relative paths are taken
    /// from the config file's directory.
    pub id_scores: Option<PathBuf>,
    pub ood_scores: Option<PathBuf>,
    /// Set `false` when larger scores mean more OOD.
    pub higher_is_id: Option<bool>,
}

impl EvalConfig {
    fn fill(&mut self, base: &Path) -> Result<()> {
        for (slot, key) in [(&mut self.id_scores, "id_scores"), (&mut self.ood_scores, "ood_scores")] {
            let p = require(slot, key)?;
            if p.is_relative() {
                *slot = Some(base.join(p));
            }
        }
        fill(&mut self.higher_is_id, true);
        Ok(())
    }
}

impl Common for EvalConfig {
    const PIPELINE: Pipeline = Pipeline::Eval;
    fn pipeline_mut(&mut self) -> &mut Option<Pipeline> {
        &mut self.pipeline
    }
    fn seed_mut(&mut self) -> &mut Option<u64> {
        &mut self.seed
    }
    fn out_mut(&mut self) -> &mut Option<PathBuf> {
        &mut self.out
    }
    fn format_version(&self) -> Option<u32> {
        self.format_version
    }
    fn resolve(&mut self, base_dir: &Path) -> Result<()> {
        self.fill(base_dir)
    }
    fn requires_seed(&self) -> bool {
        false
    }
}

// ---------------------------------------------------------------------------
// loading
// ---------------------------------------------------------------------------

/// Reads only the `pipeline` key of a config file.
pub fn pipeline_of(text: &str) -> Result<Option<Pipeline>> {
    #[derive(Deserialize)]
    struct Probe {
        pipeline: Option<Pipeline>,
    }
    Ok(serde_json::from_str::<Probe>(text)?.pipeline)
}

/// Parses `text` (or `{}` when absent), applies the command-line seed and
/// output directory, checks the shared keys and fills defaults.
pub fn load<T: Common + DeserializeOwned>(
    text: Option<&str>,
    base_dir: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<T> {
    let mut cfg: T = serde_json::from_str(text.unwrap_or("{}")).context("invalid config")?;
    let p = cfg.pipeline_mut();
    if let Some(named) = *p {
        if named != T::PIPELINE {
            bail!(
                "config is for pipeline `{}`, not `{}`",
                named.name(),
                T::PIPELINE.name()
            );
        }
    }
    *p = Some(T::PIPELINE);
    if let Some(v) = cfg.format_version() {
        if v != FORMAT_VERSION {
            bail!("unsupported format_version {v}, expected {FORMAT_VERSION}");
        }
    }
    if seed.is_some() {
        *cfg.seed_mut() = seed;
    }
    if cfg.requires_seed() && cfg.seed_mut().is_none() {
        bail!("missing required key `seed`");
    }
    if out.is_some() {
        *cfg.out_mut() = out;
    }
    if cfg.out_mut().is_none() {
        bail!("missing required key `out` (or pass --out)");
    }
    cfg.resolve(base_dir)?;
    Ok(cfg)
}

/// The resolved config as written next to the outputs.
pub fn resolved_json<T: Common + Serialize>(cfg: &T) -> Result<String> {
    let mut v = serde_json::to_value(cfg)?;
    if let Some(obj) = v.as_object_mut() {
        obj.insert("format_version".into(), FORMAT_VERSION.into());
    }
    Ok(serde_json::to_string_pretty(&v)? + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sal(text: &str) -> Result<SalPipelineConfig> {
        load(Some(text), Path::new("."), None, Some("o".into()))
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let e = sal("{\"seed\": 1,\n \"scenario\": 1,\n \"bogus\": 2}").unwrap_err();
        let msg = format!("{e:#}");
        assert!(msg.contains("bogus") && msg.contains("line 3"), "{msg}");
        let e = sal("{\"seed\": 1, \"scenario\": 1, \"erm\": {\"lrr\": 1}}").unwrap_err();
        assert!(format!("{e:#}").contains("lrr"));
    }

    #[test]
    fn missing_required_keys_are_named() {
        let e = sal("{\"seed\": 1}").unwrap_err();
        assert!(format!("{e:#}").contains("`scenario`"));
        let e = sal("{\"scenario\": 2}").unwrap_err();
        assert!(format!("{e:#}").contains("`seed`"));
        let e = load::<GenConfig>(Some("{\"seed\": 1}"), Path::new("."), None, Some("o".into())).unwrap_err();
        assert!(format!("{e:#}").contains("`dataset`"));
    }

    #[test]
    fn cli_seed_overrides_config() {
        let c: SalPipelineConfig = load(Some("{\"seed\": 1, \"scenario\": 1}"), Path::new("."), Some(9), Some("o".into())).unwrap();
        assert_eq!(c.seed, Some(9));
    }

    #[test]
    fn mismatched_pipeline_is_rejected() {
        assert!(sal("{\"pipeline\": \"halo\", \"seed\": 1, \"scenario\": 1}").is_err());
    }

    #[test]
    fn resolved_config_is_complete_and_reloadable() {
        let c = sal("{\"seed\": 3, \"scenario\": 2, \"erm\": {\"epochs\": 5}}").unwrap();
        assert_eq!(c.erm.epochs, Some(5));
        assert_eq!(c.erm.weight_decay, Some(0.2));
        let text = resolved_json(&c).unwrap();
        assert!(text.contains("\"format_version\": 1"));
        assert!(!text.contains("\"out\""));
        let again = sal(&text).unwrap();
        assert_eq!(resolved_json(&again).unwrap(), text);
    }
}
