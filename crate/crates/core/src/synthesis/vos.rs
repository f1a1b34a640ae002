//! Joint training of a classifier and its energy-based uncertainty branch
//! on virtual outliers drawn from class-conditional feature Gaussians.

use super::gaussian::{sample_virtual_outliers, ClassQueues, CovarianceKind, SynthesisConfig};
use crate::datagen::LabeledSet;
use crate::error::{Error, Result};
use crate::model::{
    batches, cross_entropy, energy_with_grad, uncertainty_loss, Detector, EnergyHead, MlpClassifier, TrainConfig,
    PHI_HIDDEN,
};
use crate::numerics::{log_sum_exp, Matrix, RngState};

#[derive(Debug, Clone, PartialEq)]
pub struct VosConfig {
    pub train: TrainConfig,
    pub synthesis: SynthesisConfig,
    /// Capacity `|Q_k|` of each class queue.
    pub queue_capacity: usize,
    pub covariance: CovarianceKind,
    pub phi_hidden: Vec<usize>,
    /// Independent pools drawn per class at every regularized step.
    pub pools_per_class: usize,
    /// Learn the class weights of the energy; constant `w = 1` otherwise.
    pub learn_weights: bool,
}

impl Default for VosConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            synthesis: SynthesisConfig::default(),
            queue_capacity: 1000,
            covariance: CovarianceKind::Tied,
            phi_hidden: PHI_HIDDEN.to_vec(),
            pools_per_class: 1,
            learn_weights: true,
        }
    }
}

/// Classifier plus uncertainty branch.
#[derive(Debug, Clone, PartialEq)]
pub struct VosModel {
    pub clf: MlpClassifier,
    pub head: EnergyHead,
}

impl VosModel {
    pub fn energy(&self, x: &[f64]) -> Result<f64> {
        Ok(energy_with_grad(&self.clf.logits(x)?, &self.head)?.0)
    }
}

impl Detector for VosModel {
    /// `σ(−φ(E(x)))`.
    fn id_probability(&self, x: &[f64]) -> Result<f64> {
        if !self.head.is_trained() {
            return Err(Error::State("uncertainty branch has not been trained".into()));
        }
        Ok(self.head.id_probability_from_energy(self.energy(x)?))
    }
}

/// Negative free energy with unit weights, `log Σ_k exp(logit_k)`; higher
/// means more ID.
pub fn energy_score(clf: &MlpClassifier, x: &[f64]) -> Result<f64> {
    log_sum_exp(&clf.logits(x)?)
}

pub fn energy_scores(clf: &MlpClassifier, points: &Matrix) -> Result<Vec<f64>> {
    points.iter_rows().map(|x| energy_score(clf, x)).collect()
}

/// Cross-entropy training with `β · L_uncertainty` added once
/// `reg_start` of the epochs have passed and every class queue is full.
/// Each step draws `pools_per_class` pools per class, each contributing
/// `synthesis.n_outliers` virtual outliers.
pub fn train_vos(data: &LabeledSet, cfg: &VosConfig) -> Result<VosModel> {
    let tc = &cfg.train;
    tc.validate()?;
    cfg.synthesis.validate()?;
    crate::model::check_labeled(data, None)?;
    let mut rng = RngState::new(tc.seed);
    let mut clf = MlpClassifier::new(data.dim(), &tc.hidden, data.num_classes, &mut rng.split(1))?;
    let mut head = EnergyHead::new(data.num_classes, &cfg.phi_hidden, &mut rng.split(2))?;
    let mut synth_rng = rng.split(3);
    let k = data.num_classes;
    let p = clf.feature_dim();
    let mut queues = ClassQueues::new(k, cfg.queue_capacity, p)?;
    let n_net = clf.net().num_params();
    let n_phi = head.phi().num_params();
    let mut opt_net = tc.optimizer(n_net);
    let mut opt_u = tc.optimizer(k);
    let mut opt_phi = tc.optimizer(n_phi);
    let last = clf.net().last_layer_range();
    let start_epoch = tc.reg_start_epoch();
    let mut reg_steps = 0usize;
    for epoch in 0..tc.epochs {
        for batch in batches(data.len(), tc.batch_size, &mut rng) {
            let b = batch.len() as f64;
            let mut g_net = vec![0.0; n_net];
            let mut g_u = vec![0.0; k];
            let mut traces = Vec::with_capacity(batch.len());
            let mut deltas = Vec::with_capacity(batch.len());
            let mut loss = 0.0;
            for &i in &batch {
                let trace = clf.trace(data.points.row(i))?;
                let (l, mut delta) = cross_entropy(trace.output(), data.labels[i]);
                loss += l / b;
                delta.iter_mut().for_each(|d| *d /= b);
                queues.push(data.labels[i], trace.penultimate().to_vec())?;
                traces.push(trace);
                deltas.push(delta);
            }
            let mut g_phi = None;
            if epoch >= start_epoch && queues.all_full() {
                let g = queues.estimate(cfg.covariance)?;
                let mut outliers = Vec::new();
                for c in 0..k {
                    for _ in 0..cfg.pools_per_class {
                        let v = sample_virtual_outliers(&g, &cfg.synthesis, c, &mut synth_rng)?;
                        outliers.extend(v.points.iter_rows().map(<[f64]>::to_vec));
                    }
                }
                let (w_last, b_last) = clf.net().layer(clf.net().num_layers() - 1);
                let id_parts: Vec<(f64, Vec<f64>)> = traces
                    .iter()
                    .map(|t| energy_with_grad(t.output(), &head))
                    .collect::<Result<_>>()?;
                let out_logits: Vec<Vec<f64>> = outliers
                    .iter()
                    .map(|v| {
                        (0..k)
                            .map(|c| b_last[c] + w_last[c * p..(c + 1) * p].iter().zip(v).map(|(a, b)| a * b).sum::<f64>())
                            .collect()
                    })
                    .collect();
                let out_parts: Vec<(f64, Vec<f64>)> = out_logits
                    .iter()
                    .map(|l| energy_with_grad(l, &head))
                    .collect::<Result<_>>()?;
                let id_e: Vec<f64> = id_parts.iter().map(|x| x.0).collect();
                let out_e: Vec<f64> = out_parts.iter().map(|x| x.0).collect();
                let (l_unc, ug) = uncertainty_loss(&id_e, &out_e, &head)?;
                loss += tc.beta * l_unc;
                for ((_, de), (delta, &dl)) in id_parts.iter().zip(deltas.iter_mut().zip(&ug.id_energies)) {
                    for (c, &dec) in de.iter().enumerate() {
                        let d = tc.beta * dl * dec;
                        delta[c] += d;
                        g_u[c] += d;
                    }
                }
                for (((_, de), v), &dl) in out_parts.iter().zip(&outliers).zip(&ug.outlier_energies) {
                    for (c, &dec) in de.iter().enumerate() {
                        let d = tc.beta * dl * dec;
                        g_u[c] += d;
                        let row = &mut g_net[last.start + c * p..last.start + (c + 1) * p];
                        for (gw, &a) in row.iter_mut().zip(v) {
                            *gw += d * a;
                        }
                        g_net[last.start + k * p + c] += d;
                    }
                }
                g_phi = Some(ug.phi.into_iter().map(|x| tc.beta * x).collect::<Vec<f64>>());
                reg_steps += 1;
            }
            for (trace, delta) in traces.iter().zip(&deltas) {
                clf.net().backward(trace, delta, 1.0, &mut g_net);
            }
            crate::model::check_loss(loss, epoch)?;
            opt_net.step(clf.net_mut().params_mut(), &g_net);
            let (u, phi) = head.parts_mut();
            if let Some(gp) = g_phi {
                opt_phi.step(phi.params_mut(), &gp);
                if cfg.learn_weights {
                    opt_u.step(u, &g_u);
                }
            }
        }
        crate::model::check_params(clf.net().params(), epoch)?;
        crate::model::check_params(head.phi().params(), epoch)?;
    }
    if reg_steps == 0 {
        return Err(Error::Training {
            epoch: tc.epochs,
            reason: format!(
                "uncertainty regularizer never ran; queues of capacity {} did not fill after epoch {start_epoch}",
                cfg.queue_capacity
            ),
        });
    }
    head.mark_trained();
    Ok(VosModel { clf, head })
}
