//! Weighted energy score and the logistic uncertainty loss built on it.

use super::mlp::Mlp;
use crate::error::{arg, Result};
use crate::numerics::{log_sum_exp, sigmoid, softmax, softplus, RngState};

/// Default hidden widths of the scalar map φ.
pub const PHI_HIDDEN: [usize; 2] = [16, 16];

/// Learnable per-class energy weights `w_k = exp(u_k)` and the scalar
/// network φ applied to the energy.
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyHead {
    log_weights: Vec<f64>,
    phi: Mlp,
    trained: bool,
}

impl EnergyHead {
    /// Unit weights and a freshly initialized φ.
    pub fn new(num_classes: usize, phi_hidden: &[usize], rng: &mut RngState) -> Result<Self> {
        if num_classes == 0 {
            return arg("energy head needs at least one class");
        }
        let mut dims = vec![1];
        dims.extend_from_slice(phi_hidden);
        dims.push(1);
        Ok(Self {
            log_weights: vec![0.0; num_classes],
            phi: Mlp::new(&dims, rng)?,
            trained: false,
        })
    }

    pub fn from_parts(log_weights: Vec<f64>, phi: Mlp) -> Result<Self> {
        if phi.input_dim() != 1 || phi.output_dim() != 1 {
            return arg("φ must map scalars to scalars");
        }
        if log_weights.is_empty() || log_weights.iter().any(|u| !u.is_finite()) {
            return arg("log weights must be finite and non-empty");
        }
        Ok(Self {
            log_weights,
            phi,
            trained: true,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.log_weights.len()
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|u| u.exp()).collect()
    }

    pub fn phi(&self) -> &Mlp {
        &self.phi
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub(crate) fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub(crate) fn parts_mut(&mut self) -> (&mut Vec<f64>, &mut Mlp) {
        (&mut self.log_weights, &mut self.phi)
    }

    pub fn phi_value(&self, e: f64) -> f64 {
        self.phi.forward(&[e]).expect("φ takes one input")[0]
    }

    /// Probability of being in-distribution, `σ(−φ(E))`.
    pub fn id_probability_from_energy(&self, e: f64) -> f64 {
        sigmoid(-self.phi_value(e))
    }
}

/// `−log Σ_k w_k exp(logit_k)`.
pub fn energy(logits: &[f64], head: &EnergyHead) -> Result<f64> {
    Ok(energy_with_grad(logits, head)?.0)
}

/// Energy and its gradient with respect to the logits, which is also the
/// gradient with respect to the log weights.
pub fn energy_with_grad(logits: &[f64], head: &EnergyHead) -> Result<(f64, Vec<f64>)> {
    if logits.len() != head.num_classes() {
        return arg(format!(
            "{} logits for an energy head over {} classes",
            logits.len(),
            head.num_classes()
        ));
    }
    let z: Vec<f64> = logits.iter().zip(&head.log_weights).map(|(l, u)| l + u).collect();
    let e = -log_sum_exp(&z)?;
    let grad = softmax(&z).into_iter().map(|p| -p).collect();
    Ok((e, grad))
}

/// Gradients of [`uncertainty_loss`].
#[derive(Debug, Clone)]
pub struct UncertaintyGrads {
    /// With respect to the parameters of φ.
    pub phi: Vec<f64>,
    pub id_energies: Vec<f64>,
    pub outlier_energies: Vec<f64>,
}

/// Binary logistic loss on `φ(E)`: the mean of `−log σ(−φ(E))` over ID
/// energies plus the mean of `−log σ(φ(E))` over outlier energies.
pub fn uncertainty_loss(id_energies: &[f64], outlier_energies: &[f64], head: &EnergyHead) -> Result<(f64, UncertaintyGrads)> {
    if id_energies.is_empty() || outlier_energies.is_empty() {
        return arg("uncertainty loss needs ID and outlier energies");
    }
    let mut grads = UncertaintyGrads {
        phi: vec![0.0; head.phi.num_params()],
        id_energies: Vec::with_capacity(id_energies.len()),
        outlier_energies: Vec::with_capacity(outlier_energies.len()),
    };
    let mut loss = 0.0;
    // sign +1: softplus(φ), pushes φ down; sign -1: softplus(−φ)
    for (energies, sign, out) in [
        (id_energies, 1.0, &mut grads.id_energies),
        (outlier_energies, -1.0, &mut grads.outlier_energies),
    ] {
        let w = 1.0 / energies.len() as f64;
        let mut part = 0.0;
        for &e in energies {
            let trace = head.phi.forward_trace(&[e])?;
            let f = trace.output()[0];
            part += softplus(sign * f);
            let dl_df = sign * sigmoid(sign * f) * w;
            let de = head.phi.backward(&trace, &[1.0], dl_df, &mut grads.phi);
            out.push(de[0]);
        }
        loss += part * w;
    }
    Ok((loss, grads))
}
