//! Fully connected rectifier network over a flat parameter vector, and the
//! SGD optimizer shared by every trainer.

use crate::error::{arg, Error, Result};
use crate::numerics::RngState;

/// Layer `l` maps `dims[l]` to `dims[l + 1]`. Parameters are stored layer by
/// layer as the row-major weight matrix (out × in) followed by the bias.
/// Every layer except the last applies a rectifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by a forward pass: `acts[0]` is the input and
/// `acts[l]` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct Trace {
    pub acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("trace holds at least the input")
    }

    /// Input to the final layer.
    pub fn penultimate(&self) -> &[f64] {
        &self.acts[self.acts.len() - 2]
    }
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Xavier-uniform weights, zero biases.
    pub fn new(dims: &[usize], rng: &mut RngState) -> Result<Self> {
        validate_dims(dims)?;
        let mut params = Vec::with_capacity(param_count(dims));
        for w in dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for _ in 0..fan_in * fan_out {
                params.push(rng.uniform_range(-bound, bound));
            }
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            dims: dims.to_vec(),
            params,
        })
    }

    pub fn from_params(dims: &[usize], params: Vec<f64>) -> Result<Self> {
        validate_dims(dims)?;
        if params.len() != param_count(dims) {
            return arg(format!(
                "{} parameters given, layer dims {:?} need {}",
                params.len(),
                dims,
                param_count(dims)
            ));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return arg("parameters must be finite");
        }
        Ok(Self {
            dims: dims.to_vec(),
            params,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.dims.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offset(&self, layer: usize) -> usize {
        param_count(&self.dims[..=layer])
    }

    /// Weight matrix (row-major, out × in) and bias of `layer`.
    pub fn layer(&self, layer: usize) -> (&[f64], &[f64]) {
        let start = self.offset(layer);
        let (i, o) = (self.dims[layer], self.dims[layer + 1]);
        let w = &self.params[start..start + i * o];
        let b = &self.params[start + i * o..start + i * o + o];
        (w, b)
    }

    /// Flat range of the final layer's parameters.
    pub fn last_layer_range(&self) -> std::ops::Range<usize> {
        self.offset(self.num_layers() - 1)..self.params.len()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return arg(format!(
                "input has {} dims, network expects {}",
                x.len(),
                self.input_dim()
            ));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(x)?.acts.pop().unwrap())
    }

    pub fn forward_trace(&self, x: &[f64]) -> Result<Trace> {
        self.check_input(x)?;
        let last = self.num_layers() - 1;
        let mut acts = Vec::with_capacity(self.dims.len());
        acts.push(x.to_vec());
        for l in 0..=last {
            let (w, b) = self.layer(l);
            let input = &acts[l];
            let mut out = b.to_vec();
            for (o, row) in out.iter_mut().zip(w.chunks_exact(input.len())) {
                *o += row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                if l < last && *o < 0.0 {
                    *o = 0.0;
                }
            }
            acts.push(out);
        }
        Ok(Trace { acts })
    }

    /// Accumulates `scale · ∂(⟨grad_out, output⟩)/∂θ` into `grad` and
    /// returns the gradient with respect to the input.
    pub fn backward(&self, trace: &Trace, grad_out: &[f64], scale: f64, grad: &mut [f64]) -> Vec<f64> {
        self.backward_with_features(trace, grad_out, None, scale, grad)
    }

    /// As [`Mlp::backward`], with an extra gradient `grad_features` on the
    /// penultimate activation added before it flows into the lower layers.
    pub fn backward_with_features(
        &self,
        trace: &Trace,
        grad_out: &[f64],
        grad_features: Option<&[f64]>,
        scale: f64,
        grad: &mut [f64],
    ) -> Vec<f64> {
        debug_assert_eq!(grad.len(), self.params.len());
        debug_assert_eq!(grad_out.len(), self.output_dim());
        let mut delta: Vec<f64> = grad_out.iter().map(|g| g * scale).collect();
        for l in (0..self.num_layers()).rev() {
            let start = self.offset(l);
            let (i, o) = (self.dims[l], self.dims[l + 1]);
            let input = &trace.acts[l];
            let (gw, gb) = grad[start..start + i * o + o].split_at_mut(i * o);
            for (k, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[k] += d;
                for (g, &a) in gw[k * i..(k + 1) * i].iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            let w = &self.params[start..start + i * o];
            let mut prev = vec![0.0; i];
            for (k, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                for (p, &wk) in prev.iter_mut().zip(&w[k * i..(k + 1) * i]) {
                    *p += d * wk;
                }
            }
            if l + 1 == self.num_layers() {
                if let Some(extra) = grad_features {
                    debug_assert_eq!(extra.len(), i);
                    for (p, &e) in prev.iter_mut().zip(extra) {
                        *p += e * scale;
                    }
                }
            }
            if l > 0 {
                for (p, &a) in prev.iter_mut().zip(input) {
                    if a <= 0.0 {
                        *p = 0.0;
                    }
                }
            }
            delta = prev;
        }
        delta
    }
}

fn validate_dims(dims: &[usize]) -> Result<()> {
    if dims.len() < 2 {
        return arg("a network needs at least input and output dims");
    }
    if dims.contains(&0) {
        return arg(format!("layer dims must be positive, got {dims:?}"));
    }
    Ok(())
}

/// SGD with momentum and L2 weight decay.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<f64>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64, num_params: usize) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            velocity: vec![0.0; num_params],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        for ((p, v), &g) in params.iter_mut().zip(&mut self.velocity).zip(grad) {
            let g = g + self.weight_decay * *p;
            *v = self.momentum * *v + g;
            *p -= self.lr * *v;
        }
    }
}

/// Shuffled mini-batch index lists covering `0..n`.
pub fn batches(n: usize, batch_size: usize, rng: &mut RngState) -> Vec<Vec<usize>> {
    let order = rng.permutation(n);
    order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

pub(crate) fn check_loss(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Training {
            epoch,
            reason: format!("loss became {loss}"),
        })
    }
}

pub(crate) fn check_params(params: &[f64], epoch: usize) -> Result<()> {
    if params.iter().all(|p| p.is_finite()) {
        Ok(())
    } else {
        Err(Error::Training {
            epoch,
            reason: "parameters diverged".into(),
        })
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::numerics::dot;
    use ualk_oracles as oracle;

    #[test]
    fn xavier_bounds_and_zero_bias() {
        let net = Mlp::new(&[3, 5, 2], &mut RngState::new(1)).unwrap();
        assert_eq!(net.num_params(), 3 * 5 + 5 + 5 * 2 + 2);
        let (w, b) = net.layer(0);
        let bound = (6.0f64 / 8.0).sqrt();
        assert!(w.iter().all(|x| x.abs() <= bound));
        assert!(b.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn forward_by_hand() {
        // 2 -> 2 (relu) -> 1
        let params = vec![1.0, -1.0, 2.0, 1.0, 0.5, -10.0, 3.0, -2.0, 0.25];
        let net = Mlp::from_params(&[2, 2, 1], params).unwrap();
        // hidden: [1-2+0.5, 2+2-10] = [-0.5, -6] -> relu [0, 0]
        assert_eq!(net.forward(&[1.0, 2.0]).unwrap(), vec![0.25]);
        // hidden: [3+0.5, 6-10] = [3.5, 0]
        assert_eq!(net.forward(&[3.0, 0.0]).unwrap(), vec![3.0 * 3.5 + 0.25]);
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(Mlp::from_params(&[2, 1], vec![0.0; 2]).is_err());
        assert!(Mlp::from_params(&[2], vec![]).is_err());
        assert!(Mlp::from_params(&[2, 1], vec![f64::NAN, 0.0, 0.0]).is_err());
        let net = Mlp::new(&[2, 1], &mut RngState::new(0)).unwrap();
        assert!(net.forward(&[1.0]).is_err());
    }

    /// Random nonzero biases keep pre-activations off the rectifier kink.
    pub(crate) fn jittered(dims: &[usize], rng: &mut RngState) -> Mlp {
        let net = Mlp::new(dims, rng).unwrap();
        let p = net.params().iter().map(|w| w + 0.1 * rng.normal()).collect();
        Mlp::from_params(dims, p).unwrap()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = RngState::new(42);
        let mut worst: f64 = 0.0;
        for case in 0..100 {
            let dims = [3, 4 + case % 3, 3, 2];
            let net = jittered(&dims, &mut rng);
            let x = rng.normal_vec(3);
            let c = rng.normal_vec(2);
            let f = |p: &[f64]| {
                let n = Mlp::from_params(&dims, p.to_vec()).unwrap();
                let y = n.forward(&x).unwrap();
                y.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
            };
            let mut g = vec![0.0; net.num_params()];
            let trace = net.forward_trace(&x).unwrap();
            let gx = net.backward(&trace, &c, 1.0, &mut g);
            let fd = oracle::central_gradient(f, net.params(), 1e-5);
            worst = worst.max(oracle::relative_error(&g, &fd, 1e-6));
            let fx = |xv: &[f64]| {
                let y = net.forward(xv).unwrap();
                y.iter().zip(&c).map(|(a, b)| a * b).sum::<f64>()
            };
            let fdx = oracle::central_gradient(fx, &x, 1e-5);
            worst = worst.max(oracle::relative_error(&gx, &fdx, 1e-6));
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn feature_gradient_injection_matches_finite_differences() {
        let mut rng = RngState::new(43);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let dims = [3, 5, 4, 2];
            let net = jittered(&dims, &mut rng);
            let x = rng.normal_vec(3);
            let c = rng.normal_vec(2);
            let e = rng.normal_vec(4);
            let f = |p: &[f64]| {
                let n = Mlp::from_params(&dims, p.to_vec()).unwrap();
                let t = n.forward_trace(&x).unwrap();
                dot(t.output(), &c) + dot(t.penultimate(), &e)
            };
            let mut g = vec![0.0; net.num_params()];
            let trace = net.forward_trace(&x).unwrap();
            net.backward_with_features(&trace, &c, Some(&e), 1.0, &mut g);
            let fd = oracle::central_gradient(f, net.params(), 1e-5);
            worst = worst.max(oracle::relative_error(&g, &fd, 1e-6));
        }
        assert!(worst < 1e-5, "worst relative error {worst}");
    }

    #[test]
    fn sgd_step() {
        let mut p = vec![1.0, -2.0];
        let mut opt = Sgd::new(0.1, 0.9, 0.0, 2);
        opt.step(&mut p, &[1.0, 1.0]);
        assert_eq!(p, vec![0.9, -2.1]);
        opt.step(&mut p, &[1.0, 1.0]);
        assert!((p[0] - (0.9 - 0.1 * 1.9)).abs() < 1e-15);
    }

    #[test]
    fn batches_cover_indices() {
        let b = batches(10, 3, &mut RngState::new(3));
        assert_eq!(b.len(), 4);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }
}
