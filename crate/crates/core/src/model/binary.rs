//! Scalar-output classifier `g_θ` separating positives (ID or truthful)
//! from negatives (outliers or hallucinations).

use super::classifier::TrainConfig;
use super::mlp::{batches, check_loss, check_params, Mlp};
use crate::error::{arg, Error, Result};
use crate::numerics::{sigmoid, softplus, Matrix, RngState};

/// Anything that maps an input to a probability of being in-distribution.
pub trait Detector {
    fn id_probability(&self, x: &[f64]) -> Result<f64>;

    /// `G(x) = 1` iff the probability reaches `gamma`.
    fn detect(&self, x: &[f64], gamma: f64) -> Result<bool> {
        Ok(self.id_probability(x)? >= gamma)
    }

    fn id_probabilities(&self, points: &Matrix) -> Result<Vec<f64>> {
        points.iter_rows().map(|x| self.id_probability(x)).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryHead {
    net: Mlp,
    trained: bool,
}

impl BinaryHead {
    pub fn untrained(input_dim: usize, hidden: &[usize], rng: &mut RngState) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        Ok(Self {
            net: Mlp::new(&dims, rng)?,
            trained: false,
        })
    }

    pub fn from_net(net: Mlp) -> Result<Self> {
        if net.output_dim() != 1 {
            return arg("binary head must have a scalar output");
        }
        Ok(Self { net, trained: true })
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    /// Raw score `g_θ(x)`.
    pub fn logit(&self, x: &[f64]) -> Result<f64> {
        Ok(self.net.forward(x)?[0])
    }

    pub fn logits(&self, points: &Matrix) -> Result<Vec<f64>> {
        points.iter_rows().map(|x| self.logit(x)).collect()
    }
}

impl Detector for BinaryHead {
    /// `σ(g_θ(x))`.
    fn id_probability(&self, x: &[f64]) -> Result<f64> {
        if !self.trained {
            return Err(Error::State("binary head has not been trained".into()));
        }
        Ok(sigmoid(self.logit(x)?))
    }
}

/// Trains `g_θ` with the binary logistic loss, averaging separately over
/// positives and negatives so both sets carry equal weight.
pub fn train_binary(positives: &Matrix, negatives: &Matrix, cfg: &TrainConfig) -> Result<BinaryHead> {
    cfg.validate()?;
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::EmptyCandidates(format!(
            "binary training needs both sides, got {} positives and {} negatives",
            positives.rows(),
            negatives.rows()
        )));
    }
    if positives.cols() != negatives.cols() {
        return arg("positives and negatives differ in dimension");
    }
    let mut rng = RngState::new(cfg.seed);
    let mut head = BinaryHead::untrained(positives.cols(), &cfg.hidden, &mut rng.split(1))?;
    let points = positives.vstack(negatives)?;
    let n_pos = positives.rows();
    let n = points.rows();
    let w_pos = n as f64 / (2.0 * n_pos as f64);
    let w_neg = n as f64 / (2.0 * (n - n_pos) as f64);
    let mut opt = cfg.optimizer(head.net.num_params());
    let mut grad = vec![0.0; head.net.num_params()];
    for epoch in 0..cfg.epochs {
        for batch in batches(n, cfg.batch_size, &mut rng) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            let scale = 1.0 / batch.len() as f64;
            let mut loss = 0.0;
            for &i in &batch {
                let trace = head.net.forward_trace(points.row(i))?;
                let g = trace.output()[0];
                // positives: softplus(−g); negatives: softplus(g)
                let (sign, w) = if i < n_pos { (-1.0, w_pos) } else { (1.0, w_neg) };
                loss += w * softplus(sign * g);
                let dl = w * sign * sigmoid(sign * g);
                head.net.backward(&trace, &[dl], scale, &mut grad);
            }
            check_loss(loss * scale, epoch)?;
            opt.step(head.net.params_mut(), &grad);
        }
        check_params(head.net.params(), epoch)?;
    }
    head.trained = true;
    Ok(head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::{auroc, ScoreSets};

    fn blobs(seed: u64, sep: f64) -> (Matrix, Matrix) {
        let mut rng = RngState::new(seed);
        let pos: Vec<Vec<f64>> = (0..80).map(|_| vec![sep + 0.3 * rng.normal(), 0.3 * rng.normal()]).collect();
        let neg: Vec<Vec<f64>> = (0..40).map(|_| vec![-sep + 0.3 * rng.normal(), 0.3 * rng.normal()]).collect();
        (Matrix::from_rows(&pos).unwrap(), Matrix::from_rows(&neg).unwrap())
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            epochs: 30,
            hidden: vec![16],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn separable_blobs() {
        let (pos, neg) = blobs(1, 2.0);
        let head = train_binary(&pos, &neg, &cfg()).unwrap();
        assert!(head.logits(&pos).unwrap().iter().all(|&g| g > 0.0));
        assert!(head.logits(&neg).unwrap().iter().all(|&g| g < 0.0));
        for x in pos.iter_rows() {
            assert_eq!(head.detect(x, 0.5).unwrap(), head.logit(x).unwrap() >= 0.0);
        }
    }

    #[test]
    fn swapped_roles_flip_auroc() {
        let (pos, neg) = blobs(2, 0.3);
        let a = train_binary(&pos, &neg, &cfg()).unwrap();
        let b = train_binary(&neg, &pos, &cfg()).unwrap();
        let sa = ScoreSets::new(a.logits(&pos).unwrap(), a.logits(&neg).unwrap());
        let sb = ScoreSets::new(b.logits(&pos).unwrap(), b.logits(&neg).unwrap());
        assert!(auroc(&sa).unwrap() > 0.5);
        assert!(auroc(&sb).unwrap() < 0.5);
        assert_eq!(auroc(&sa).unwrap() + auroc(&sa.swapped()).unwrap(), 1.0);
    }

    #[test]
    fn untrained_head_is_a_state_error() {
        let head = BinaryHead::untrained(2, &[4], &mut RngState::new(0)).unwrap();
        assert!(matches!(head.id_probability(&[0.0, 0.0]), Err(Error::State(_))));
    }

    #[test]
    fn saturation() {
        // g(x) = 50 everywhere
        let net = Mlp::from_params(&[1, 1], vec![0.0, 50.0]).unwrap();
        let head = BinaryHead::from_net(net).unwrap();
        assert!((head.id_probability(&[3.0]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_side_is_rejected() {
        let (pos, _) = blobs(3, 1.0);
        let empty = Matrix::zeros(0, 2);
        assert!(matches!(train_binary(&pos, &empty, &cfg()), Err(Error::EmptyCandidates(_))));
    }
}
