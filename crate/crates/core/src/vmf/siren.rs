//! Joint cross-entropy and vMF shaping of a projected embedding.

use super::density::{siren_loss, VmfMixture};
use crate::datagen::LabeledSet;
use crate::error::{arg, Error, Result};
use crate::model::{batches, cross_entropy, MlpClassifier, Mlp, Sgd, Trace, TrainConfig};
use crate::numerics::{dot, norm, normalize, Matrix, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KappaMode {
    #[default]
    Learnable,
    /// All concentrations stay at `kappa_init`.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrototypeInit {
    /// Normalized class means of the embeddings of the untrained network.
    #[default]
    WarmupMeans,
    Random,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SirenConfig {
    /// `beta` weights the shaping loss.
    pub train: TrainConfig,
    pub alpha: f64,
    pub kappa_init: f64,
    pub kappa_mode: KappaMode,
    pub prototype_init: PrototypeInit,
}

impl Default for SirenConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig {
                beta: 1.5,
                ..TrainConfig::default()
            },
            alpha: 0.95,
            kappa_init: 10.0,
            kappa_mode: KappaMode::Learnable,
            prototype_init: PrototypeInit::WarmupMeans,
        }
    }
}

/// Backbone classifier, projection head `h → d → d` and the class mixture.
#[derive(Debug, Clone, PartialEq)]
pub struct SirenModel {
    pub clf: MlpClassifier,
    pub projector: Mlp,
    pub mixture: VmfMixture,
}

struct Forward {
    trace: Trace,
    proj: Trace,
    r: Vec<f64>,
    scale: f64,
}

fn forward(clf: &MlpClassifier, projector: &Mlp, x: &[f64]) -> Result<Forward> {
    let trace = clf.trace(x)?;
    let proj = projector.forward_trace(trace.penultimate())?;
    let u = proj.output();
    let scale = norm(u);
    let r = normalize(u).ok_or_else(|| Error::Training {
        epoch: 0,
        reason: "projection collapsed to the zero vector".into(),
    })?;
    Ok(Forward { trace, proj, r, scale })
}

impl SirenModel {
    /// Unit-norm embedding of `x`.
    pub fn embed(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(forward(&self.clf, &self.projector, x)?.r)
    }

    pub fn embed_matrix(&self, points: &Matrix) -> Result<Matrix> {
        let rows: Vec<Vec<f64>> = points.iter_rows().map(|x| self.embed(x)).collect::<Result<_>>()?;
        Matrix::from_rows(&rows)
    }

    pub fn proj_dim(&self) -> usize {
        self.projector.output_dim()
    }
}

fn initial_prototypes(
    clf: &MlpClassifier,
    projector: &Mlp,
    data: &LabeledSet,
    init: PrototypeInit,
    rng: &mut RngState,
) -> Result<Matrix> {
    let d = projector.output_dim();
    let k = data.num_classes;
    match init {
        PrototypeInit::Random => {
            let rows: Vec<Vec<f64>> = (0..k).map(|_| rng.normal_vec(d)).collect();
            Ok(Matrix::from_rows(&rows)?.normalized_rows())
        }
        PrototypeInit::WarmupMeans => {
            let mut sums = vec![vec![0.0; d]; k];
            for (x, &y) in data.points.iter_rows().zip(&data.labels) {
                let r = forward(clf, projector, x)?.r;
                sums[y].iter_mut().zip(&r).for_each(|(s, v)| *s += v);
            }
            let rows: Vec<Vec<f64>> = sums
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    normalize(s).ok_or_else(|| Error::Estimation(format!("class {c} has a zero mean embedding")))
                })
                .collect::<Result<_>>()?;
            Matrix::from_rows(&rows)
        }
    }
}

/// `h → d → d` with small random biases, so that a dead feature vector
/// still projects away from the origin.
fn projection_head(p: usize, d: usize, rng: &mut RngState) -> Result<Mlp> {
    let dims = [p, d, d];
    let mut params = Mlp::new(&dims, rng)?.params().to_vec();
    let mut start = 0;
    for w in dims.windows(2) {
        let (i, o) = (w[0], w[1]);
        for b in &mut params[start + i * o..start + i * o + o] {
            *b = 0.01 * rng.normal();
        }
        start += i * o + o;
    }
    Mlp::from_params(&dims, params)
}

/// Trains backbone and projection on `CE + β · L_SIREN`, updating the class
/// prototypes by EMA after every batch.
pub fn train_siren(data: &LabeledSet, proj_dim: usize, cfg: &SirenConfig) -> Result<SirenModel> {
    let tc = &cfg.train;
    tc.validate()?;
    if proj_dim < 2 {
        return arg(format!("projection dimension must be at least 2, got {proj_dim}"));
    }
    crate::model::check_labeled(data, None)?;
    let k = data.num_classes;
    let mut rng = RngState::new(tc.seed);
    let mut clf = MlpClassifier::new(data.dim(), &tc.hidden, k, &mut rng.split(1))?;
    let p = clf.feature_dim();
    let mut projector = projection_head(p, proj_dim, &mut rng.split(2))?;
    let protos = initial_prototypes(&clf, &projector, data, cfg.prototype_init, &mut rng.split(3))?;
    let mut mixture = VmfMixture::new(&protos, &vec![cfg.kappa_init; k], cfg.alpha)?;
    let mut opt_net = tc.optimizer(clf.net().num_params());
    let mut opt_proj = tc.optimizer(projector.num_params());
    let mut opt_kappa = Sgd::new(tc.lr, tc.momentum, 0.0, k);
    for epoch in 0..tc.epochs {
        for batch in batches(data.len(), tc.batch_size, &mut rng) {
            let b = batch.len() as f64;
            let mut g_net = vec![0.0; clf.net().num_params()];
            let mut g_proj = vec![0.0; projector.num_params()];
            let mut g_kappa = vec![0.0; k];
            let mut loss = 0.0;
            let mut embedded = Vec::with_capacity(batch.len());
            for &i in &batch {
                let y = data.labels[i];
                let f = forward(&clf, &projector, data.points.row(i)).map_err(|e| match e {
                    Error::Training { reason, .. } => Error::Training { epoch, reason },
                    other => other,
                })?;
                let (ce, mut delta) = cross_entropy(f.trace.output(), y);
                let (ls, g) = siren_loss(&f.r, y, &mixture)?;
                loss += (ce + tc.beta * ls) / b;
                delta.iter_mut().for_each(|d| *d /= b);
                let w = tc.beta / b;
                for (gk, v) in g_kappa.iter_mut().zip(&g.log_kappas) {
                    *gk += w * v;
                }
                // through r = u / ‖u‖
                let radial = dot(&g.r, &f.r);
                let du: Vec<f64> = g.r.iter().zip(&f.r).map(|(gr, r)| (gr - radial * r) / f.scale).collect();
                let dh = projector.backward(&f.proj, &du, w, &mut g_proj);
                clf.net().backward_with_features(&f.trace, &delta, Some(&dh), 1.0, &mut g_net);
                embedded.push((f.r, y));
            }
            crate::model::check_loss(loss, epoch)?;
            opt_net.step(clf.net_mut().params_mut(), &g_net);
            opt_proj.step(projector.params_mut(), &g_proj);
            if cfg.kappa_mode == KappaMode::Learnable {
                opt_kappa.step(mixture.log_kappas_mut(), &g_kappa);
            }
            for (r, y) in &embedded {
                mixture.ema_update(r, *y)?;
            }
        }
        crate::model::check_params(clf.net().params(), epoch)?;
        crate::model::check_params(projector.params(), epoch)?;
        crate::model::check_params(mixture.log_kappas(), epoch)?;
    }
    Ok(SirenModel { clf, projector, mixture })
}
