//! The toy experiments behind each subcommand.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use ualk_core::datagen::{
    make_gaussian_classes, make_sal_ood, make_subspace_mixture, make_wild_exact, toy_center, toy_cov, toy_means,
};
use ualk_core::io::{self, Persist, Sections};
use ualk_core::metrics::{auroc, contamination, export_membership, report, wild_score_sets, DetectionReport, ScoreSets};
use ualk_core::model::{train_erm, Detector};
use ualk_core::subspace::{membership_scores, membership_scores_unweighted, train_halo, HaloConfig, HaloModel};
use ualk_core::synthesis::{energy_scores, train_vos, SynthesisConfig, VosConfig, VosModel};
use ualk_core::vmf::{knn_score, train_siren, vmf_score, SirenConfig, SirenModel};
use ualk_core::wildfilter::{err_rates, train_sal, FilterConfig, SalConfig, SalModel};
use ualk_core::{LabeledSet, Matrix, RngState, WildSet};

use crate::config::{
    Dataset, EvalConfig, GenConfig, HaloPipelineConfig, SalPipelineConfig, SirenPipelineConfig, VosPipelineConfig,
};

/// Offset of the held-out test stream from the run seed.
pub const TEST_STREAM: u64 = 1000;

pub enum Artifact {
    Matrix(Matrix),
    Model(Sections),
    /// Plot-ready CSV with a header row.
    Table(Vec<String>, Matrix),
}

#[derive(Default)]
pub struct Outcome {
    pub metrics: BTreeMap<String, f64>,
    pub artifacts: Vec<(String, Artifact)>,
}

impl Outcome {
    fn metric(&mut self, key: &str, v: f64) {
        self.metrics.insert(key.to_string(), v);
    }

    fn detection(&mut self, prefix: &str, r: &DetectionReport) {
        self.metric(&format!("{prefix}auroc"), r.auroc);
        self.metric(&format!("{prefix}fpr95"), r.fpr95);
    }

    fn artifact(&mut self, name: &str, a: Artifact) {
        self.artifacts.push((name.to_string(), a));
    }

    fn model<P: Persist>(&mut self, name: &str, m: &P) -> Result<()> {
        self.artifact(name, Artifact::Model(io::to_sections(m)?));
        Ok(())
    }

    /// Writes every artifact into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (name, a) in &self.artifacts {
            let p = dir.join(name);
            match a {
                Artifact::Matrix(m) => io::save_matrix(&p, m),
                Artifact::Model(s) => io::save_sections(&p, s),
                Artifact::Table(h, m) => io::save_csv(&p, m, Some(h)),
            }
            .with_context(|| format!("writing {}", p.display()))?;
        }
        Ok(())
    }
}

fn column(v: &[f64]) -> Result<Matrix> {
    Ok(Matrix::new(v.len(), 1, v.to_vec())?)
}

fn flags(v: impl IntoIterator<Item = bool>) -> Vec<f64> {
    v.into_iter().map(|b| f64::from(u8::from(b))).collect()
}

/// `score, is_ood` rows: ID scores first, then OOD.
fn score_table(s: &ScoreSets) -> Result<Artifact> {
    let mut data = Vec::new();
    for &v in &s.id_scores {
        data.extend([v, 0.0]);
    }
    for &v in &s.ood_scores {
        data.extend([v, 1.0]);
    }
    let n = s.id_scores.len() + s.ood_scores.len();
    Ok(Artifact::Table(
        vec!["score".into(), "is_ood".into()],
        Matrix::new(n, 2, data)?,
    ))
}

/// `n` points evenly spaced on the circle of `radius` about `center`.
pub fn ring(center: [f64; 2], radius: f64, n: usize) -> Result<Matrix> {
    let data: Vec<f64> = (0..n)
        .flat_map(|i| {
            let a = std::f64::consts::TAU * i as f64 / n as f64;
            [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
        })
        .collect();
    Ok(Matrix::new(n, 2, data)?)
}

fn toy(per_class: usize, rng: &mut RngState) -> Result<LabeledSet> {
    Ok(make_gaussian_classes(&toy_means(), &toy_cov(), per_class, rng)?)
}

pub fn load_any_matrix(path: &Path) -> Result<Matrix> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let m = if io::is_container(&bytes) {
        io::decode_matrix(&bytes)
    } else {
        io::read_csv(bytes.as_slice()).map(|t| t.matrix)
    };
    m.with_context(|| format!("parsing {}", path.display()))
}

// ---------------------------------------------------------------------------

pub fn gen(cfg: &GenConfig) -> Result<Outcome> {
    let seed = cfg.seed.unwrap_or_default();
    let mut rng = RngState::new(seed);
    let mut out = Outcome::default();
    let ds = cfg.dataset.context("missing required key `dataset`")?;
    let (points, labels, label_name) = match ds {
        Dataset::GaussianToy => {
            let d = toy(cfg.per_class.unwrap_or(1000), &mut rng).context("datagen")?;
            let labels: Vec<f64> = d.labels.iter().map(|&y| y as f64).collect();
            (d.points, Some(labels), "labels")
        }
        Dataset::SalOod => (make_sal_ood(cfg.scenario.unwrap_or(1), &mut rng).context("datagen")?, None, ""),
        Dataset::SalWild => {
            let (_, wild) = sal_wild(cfg.scenario.unwrap_or(1), None, cfg.per_class.unwrap_or(3000), &mut rng)?;
            out.metric("pi", wild.pi);
            let f = flags(export_membership(&wild));
            (wild.points, Some(f), "is_ood")
        }
        Dataset::SubspaceMixture => {
            let mix = make_subspace_mixture(
                cfg.n.unwrap_or(5000),
                cfg.dim.unwrap_or(32),
                cfg.pi.unwrap_or(0.1),
                cfg.shift.unwrap_or(5.0),
                &mut rng,
            )
            .context("datagen")?;
            let f = flags(export_membership(&mix.wild));
            (mix.wild.points, Some(f), "is_ood")
        }
    };
    out.metric("rows", points.rows() as f64);
    out.metric("cols", points.cols() as f64);
    let header: Vec<String> = (0..points.cols()).map(|j| format!("x{j}")).collect();
    out.artifact("points.csv", Artifact::Table(header, points.clone()));
    out.artifact("points.ualk", Artifact::Matrix(points));
    if let Some(l) = labels {
        out.artifact(&format!("{label_name}.ualk"), Artifact::Matrix(column(&l)?));
    }
    Ok(out)
}

// ---------------------------------------------------------------------------

pub struct VosRun {
    pub model: VosModel,
    pub vos: DetectionReport,
    pub erm: DetectionReport,
    pub scores: ScoreSets,
}

/// Joint training on the toy, then ID test draws against the probe ring,
/// compared with a plain ERM model under the unit-weight energy score.
pub fn vos_run(cfg: &VosPipelineConfig) -> Result<VosRun> {
    let seed = cfg.seed.unwrap_or_default();
    let mut rng = RngState::new(seed);
    let train = toy(cfg.train_per_class.unwrap_or(1000), &mut rng).context("datagen")?;
    let test = toy(cfg.test_per_class.unwrap_or(500), &mut rng).context("datagen")?;
    let probes = ring(toy_center(), cfg.ring_radius.unwrap_or(8.0), cfg.ring_points.unwrap_or(360))?;
    let defaults = VosConfig::default();
    let tc = cfg.train.apply(&defaults.train, seed);
    let vc = VosConfig {
        train: tc.clone(),
        synthesis: SynthesisConfig {
            t: cfg.t.unwrap_or(1),
            pool_size: cfg.pool_size.unwrap_or(10_000),
            ..SynthesisConfig::default()
        },
        queue_capacity: cfg.queue_capacity.unwrap_or(1000),
        covariance: cfg.covariance.map_or(defaults.covariance, Into::into),
        pools_per_class: cfg.pools_per_class.unwrap_or(1),
        learn_weights: cfg.learn_weights.unwrap_or(true),
        ..defaults
    };
    let model = train_vos(&train, &vc).context("synthesis: training VOS")?;
    let scores = ScoreSets::new(model.id_probabilities(&test.points)?, model.id_probabilities(&probes)?);
    let vos = report(&scores)?;
    let erm = train_erm(&train, &tc).context("model: training ERM baseline")?;
    let erm = report(&ScoreSets::new(energy_scores(&erm, &test.points)?, energy_scores(&erm, &probes)?))?;
    Ok(VosRun {
        model,
        vos,
        erm,
        scores,
    })
}

pub fn vos(cfg: &VosPipelineConfig) -> Result<Outcome> {
    let r = vos_run(cfg)?;
    let mut out = Outcome::default();
    out.detection("", &r.vos);
    out.detection("erm_", &r.erm);
    out.model("model.ualk", &r.model)?;
    out.artifact("scores.csv", score_table(&r.scores)?);
    Ok(out)
}

// ---------------------------------------------------------------------------

pub fn siren(cfg: &SirenPipelineConfig) -> Result<Outcome> {
    let seed = cfg.seed.unwrap_or_default();
    let mut rng = RngState::new(seed);
    let train = toy(cfg.train_per_class.unwrap_or(1000), &mut rng).context("datagen")?;
    let test = toy(cfg.test_per_class.unwrap_or(500), &mut rng).context("datagen")?;
    let probes = ring(toy_center(), cfg.ring_radius.unwrap_or(8.0), cfg.ring_points.unwrap_or(360))?;
    let d = SirenConfig::default();
    let sc = SirenConfig {
        train: cfg.train.apply(&d.train, seed),
        alpha: cfg.alpha.unwrap_or(d.alpha),
        kappa_init: cfg.kappa_init.unwrap_or(d.kappa_init),
        kappa_mode: cfg.kappa_mode.map_or(d.kappa_mode, Into::into),
        prototype_init: cfg.prototype_init.map_or(d.prototype_init, Into::into),
    };
    let model: SirenModel = train_siren(&train, cfg.proj_dim.unwrap_or(3), &sc).context("vmf: training SIREN")?;
    let bank = model.embed_matrix(&train.points)?;
    let (e_test, e_probe) = (model.embed_matrix(&test.points)?, model.embed_matrix(&probes)?);
    let vmf = |e: &Matrix| -> Result<Vec<f64>> { e.iter_rows().map(|r| Ok(vmf_score(r, &model.mixture)?)).collect() };
    let k = cfg.knn_k.unwrap_or(10);
    let knn = |e: &Matrix| -> Result<Vec<f64>> { e.iter_rows().map(|r| Ok(knn_score(r, &bank, k)?)).collect() };
    let scores = ScoreSets::new(vmf(&e_test)?, vmf(&e_probe)?);
    let mut out = Outcome::default();
    out.detection("", &report(&scores)?);
    out.detection("knn_", &report(&ScoreSets::new(knn(&e_test)?, knn(&e_probe)?))?);
    out.metric("accuracy", model.clf.accuracy(&test)?);
    out.model("model.ualk", &model)?;
    out.model("mixture.ualk", &model.mixture)?;
    out.artifact("scores.csv", score_table(&scores)?);
    Ok(out)
}

// ---------------------------------------------------------------------------

/// Labeled ID set (when `id_per_class` is given) and the wild mixture of
/// `wild_per_class` inliers per class with all scenario outliers, drawn in
/// that order from `rng`.
pub fn sal_wild(
    scenario: u8,
    id_per_class: Option<usize>,
    wild_per_class: usize,
    rng: &mut RngState,
) -> Result<(Option<LabeledSet>, WildSet)> {
    let id = id_per_class.map(|n| toy(n, rng)).transpose().context("datagen")?;
    let inliers = toy(wild_per_class, rng).context("datagen")?;
    let ood = make_sal_ood(scenario, rng).context("datagen")?;
    let wild = make_wild_exact(&inliers.points, &ood, rng).context("datagen")?;
    Ok((id, wild))
}

pub struct SalRun {
    pub model: SalModel,
    pub wild: WildSet,
    pub contamination: f64,
    /// Separation of hidden wild inliers and outliers by the filtering score.
    pub filter_auroc: f64,
    pub err_in: f64,
    pub err_out: f64,
    pub test: DetectionReport,
    pub scores: ScoreSets,
}

pub fn sal_run(cfg: &SalPipelineConfig) -> Result<SalRun> {
    let seed = cfg.seed.unwrap_or_default();
    let scenario = cfg.scenario.context("missing required key `scenario`")?;
    let mut rng = RngState::new(seed);
    let (id, wild) = sal_wild(
        scenario,
        Some(cfg.id_per_class.unwrap_or(1000)),
        cfg.wild_per_class.unwrap_or(3000),
        &mut rng,
    )?;
    let id = id.expect("requested above");
    let d = SalConfig::toy(seed);
    let sc = SalConfig {
        erm: cfg.erm.apply(&d.erm, d.erm.seed),
        filter: FilterConfig {
            quantile: cfg.quantile.unwrap_or(d.filter.quantile),
            class_conditional: cfg.class_conditional.unwrap_or(d.filter.class_conditional),
            num_vectors: cfg.num_vectors.unwrap_or(d.filter.num_vectors),
        },
        binary: cfg.binary.apply(&d.binary, d.binary.seed),
    };
    let model = train_sal(&id, &wild, &sc).context("wildfilter: training SAL")?;
    let mut trng = RngState::new(seed.wrapping_add(TEST_STREAM));
    let test_id = toy(cfg.test_per_class.unwrap_or(500), &mut trng).context("datagen")?;
    let test_ood = make_sal_ood(scenario, &mut trng).context("datagen")?;
    let scores = ScoreSets::new(
        model.head.id_probabilities(&test_id.points)?,
        model.head.id_probabilities(&test_ood)?,
    );
    let (err_in, err_out) = err_rates(&model.filter, &wild)?;
    Ok(SalRun {
        contamination: contamination(&wild, &model.filter.candidates)?,
        filter_auroc: auroc(&wild_score_sets(&wild, &model.filter.scores, true)?)?,
        err_in,
        err_out,
        test: report(&scores)?,
        scores,
        model,
        wild,
    })
}

pub fn sal(cfg: &SalPipelineConfig) -> Result<Outcome> {
    let r = sal_run(cfg)?;
    let mut out = Outcome::default();
    out.detection("", &r.test);
    out.metric("err_in", r.err_in);
    out.metric("err_out", r.err_out);
    out.metric("contamination", r.contamination);
    out.metric("filter_auroc", r.filter_auroc);
    out.metric("num_candidates", r.model.filter.num_candidates() as f64);
    out.model("model.ualk", &r.model)?;
    out.model("filter.ualk", &r.model.filter)?;
    out.artifact("scores.csv", score_table(&r.scores)?);
    let mut data = Vec::new();
    for ((&tau, &t), &ood) in r.model.filter.scores.iter().zip(&r.model.filter.thresholds()).zip(&export_membership(&r.wild)) {
        data.extend([tau, t, f64::from(u8::from(ood))]);
    }
    out.artifact(
        "wild_scores.csv",
        Artifact::Table(
            vec!["tau".into(), "threshold".into(), "is_ood".into()],
            Matrix::new(r.wild.len(), 3, data)?,
        ),
    );
    Ok(out)
}

// ---------------------------------------------------------------------------

pub struct HaloRun {
    pub model: HaloModel,
    /// Truthfulness classifier against hidden flags, truthful as positive.
    pub classifier: DetectionReport,
    pub membership_auroc: f64,
    pub unweighted_auroc: f64,
    pub scores: ScoreSets,
}

/// Scores are transductive: the same unlabeled mixture is scored that the
/// subspace and classifier were fit on.
pub fn halo_run(cfg: &HaloPipelineConfig) -> Result<HaloRun> {
    let seed = cfg.seed.unwrap_or_default();
    let mix = make_subspace_mixture(
        cfg.n.unwrap_or(5000),
        cfg.dim.unwrap_or(32),
        cfg.pi.unwrap_or(0.1),
        cfg.shift.unwrap_or(5.0),
        &mut RngState::new(seed),
    )
    .context("datagen")?;
    let d = HaloConfig::default();
    let hc = HaloConfig {
        k: cfg.k.unwrap_or(d.k),
        threshold_quantile: cfg.threshold_quantile.unwrap_or(d.threshold_quantile),
        normalize: cfg.normalize.unwrap_or(d.normalize),
        classifier: cfg.classifier.apply(&d.classifier, seed),
    };
    let f = &mix.wild.points;
    let model = train_halo(f, &hc).context("subspace: training HaloScope")?;
    let z = membership_scores(&model.subspace, f)?;
    let zu = membership_scores_unweighted(&model.subspace, f)?;
    let scores = wild_score_sets(&mix.wild, &model.truthfulness(f)?, false)?;
    Ok(HaloRun {
        classifier: report(&scores)?,
        membership_auroc: auroc(&wild_score_sets(&mix.wild, &z, true)?)?,
        unweighted_auroc: auroc(&wild_score_sets(&mix.wild, &zu, true)?)?,
        scores,
        model,
    })
}

pub fn halo(cfg: &HaloPipelineConfig) -> Result<Outcome> {
    let r = halo_run(cfg)?;
    let mut out = Outcome::default();
    out.detection("", &r.classifier);
    out.metric("membership_auroc", r.membership_auroc);
    out.metric("membership_unweighted_auroc", r.unweighted_auroc);
    out.model("model.ualk", &r.model)?;
    out.artifact("scores.csv", score_table(&r.scores)?);
    Ok(out)
}

// ---------------------------------------------------------------------------

pub fn eval(cfg: &EvalConfig) -> Result<Outcome> {
    let (Some(ip), Some(op)) = (&cfg.id_scores, &cfg.ood_scores) else {
        bail!("missing required key `id_scores` or `ood_scores`");
    };
    let mut s = ScoreSets::new(load_any_matrix(ip)?.into_vec(), load_any_matrix(op)?.into_vec());
    if !cfg.higher_is_id.unwrap_or(true) {
        s = s.negated();
    }
    let mut out = Outcome::default();
    out.detection("", &report(&s).context("metrics")?);
    out.metric("n_id", s.id_scores.len() as f64);
    out.metric("n_ood", s.ood_scores.len() as f64);
    Ok(out)
}
