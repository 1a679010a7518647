//! Multilayer perceptron with batch normalization, trained by plain SGD.
//!
//! Each hidden block is `Dense -> BatchNorm -> ReLU`; the output layer is a
//! linear `Dense`. Backpropagation is written out by hand and checked against
//! central finite differences in the tests. All arithmetic is `f64`.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BN_MOMENTUM: f64 = 0.99;
pub const DEFAULT_BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics; running statistics are updated.
    Train,
    /// Running statistics; nothing is mutated.
    Infer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out x in`.
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

impl DenseLayer {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weights: Array2::zeros((output, input)), biases: Array1::zeros(output) }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn glorot<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (input + output) as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((output, input), || rng.random_range(-limit..=limit));
        Self { weights, biases: Array1::zeros(output) }
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weights.t());
        z += &self.biases;
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormLayer {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNormLayer {
    pub fn new(features: usize) -> Self {
        Self {
            gamma: Array1::ones(features),
            beta: Array1::zeros(features),
            running_mean: Array1::zeros(features),
            running_var: Array1::ones(features),
            momentum: DEFAULT_BN_MOMENTUM,
            epsilon: DEFAULT_BN_EPSILON,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenBlock {
    pub dense: DenseLayer,
    pub norm: BatchNormLayer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub hidden: Vec<HiddenBlock>,
    pub output: DenseLayer,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
}

impl SgdConfig {
    pub fn new(learning_rate: f64) -> Result<Self> {
        if !(learning_rate.is_finite() && learning_rate > 0.0) {
            return Err(Error::InvalidParameter(format!("learning rate {learning_rate} must be > 0")));
        }
        Ok(Self { learning_rate })
    }
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self { learning_rate: 0.001 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weights: Array2<f64>,
    pub biases: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrad {
    pub dense: DenseGrad,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

/// Gradients laid out like the [`Mlp`] they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: Vec<BlockGrad>,
    pub output: DenseGrad,
}

impl Gradients {
    /// Same order as [`Mlp::parameters`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for b in &self.hidden {
            out.extend(b.dense.weights.iter());
            out.extend(b.dense.biases.iter());
            out.extend(b.gamma.iter());
            out.extend(b.beta.iter());
        }
        out.extend(self.output.weights.iter());
        out.extend(self.output.biases.iter());
        out
    }
}

struct BlockCache {
    input: Array2<f64>,
    normalized: Array2<f64>,
    /// Post batch-norm, pre-ReLU.
    pre_activation: Array2<f64>,
    inv_std: Array1<f64>,
}

/// Intermediate values of a train-mode pass, consumed by [`Mlp::backward`].
pub struct ForwardCache {
    blocks: Vec<BlockCache>,
    last_hidden: Array2<f64>,
}

impl ForwardCache {
    /// Post-batch-norm, pre-ReLU activations of hidden block `i`.
    pub fn pre_activation(&self, i: usize) -> &Array2<f64> {
        &self.blocks[i].pre_activation
    }

    /// Normalized (pre-scale) activations of hidden block `i`.
    pub fn normalized(&self, i: usize) -> &Array2<f64> {
        &self.blocks[i].normalized
    }
}

fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|v| if v > 0.0 { v } else { 0.0 });
}

impl Mlp {
    /// `dims = [input, hidden..., output]`. Dense weights are Glorot-uniform,
    /// biases zero, batch norm starts at the identity.
    pub fn init<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::InvalidParameter(format!("invalid layer dims {dims:?}")));
        }
        let hidden = dims
            .windows(2)
            .take(dims.len() - 2)
            .map(|w| HiddenBlock { dense: DenseLayer::glorot(w[0], w[1], rng), norm: BatchNormLayer::new(w[1]) })
            .collect();
        let n = dims.len();
        let output = DenseLayer::glorot(dims[n - 2], dims[n - 1], rng);
        Ok(Self { hidden, output })
    }

    /// `[input, hidden..., output]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        match self.hidden.first() {
            Some(b) => dims.push(b.dense.input_dim()),
            None => dims.push(self.output.input_dim()),
        }
        dims.extend(self.hidden.iter().map(|b| b.dense.output_dim()));
        dims.push(self.output.output_dim());
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.output.output_dim()
    }

    fn check_width(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "batch width {} != network input {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&mut self, batch: ArrayView2<f64>, mode: Mode) -> Result<Array2<f64>> {
        match mode {
            Mode::Infer => self.infer(batch),
            Mode::Train => self.forward_train(batch).map(|(q, _)| q),
        }
    }

    /// Inference pass using running statistics.
    pub fn infer(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_width(&batch)?;
        let mut h = batch.to_owned();
        for block in &self.hidden {
            let bn = &block.norm;
            let mut z = block.dense.forward(&h.view());
            let scale = Zip::from(&bn.gamma)
                .and(&bn.running_var)
                .map_collect(|g, v| g / (v + bn.epsilon).sqrt());
            let shift = &bn.beta - &(&bn.running_mean * &scale);
            z *= &scale;
            z += &shift;
            relu_inplace(&mut z);
            h = z;
        }
        Ok(self.output.forward(&h.view()))
    }

    /// Training pass with batch statistics. Updates running statistics and
    /// returns the cache needed for [`Mlp::backward`].
    pub fn forward_train(&mut self, batch: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_width(&batch)?;
        let n = batch.nrows();
        if n < 2 {
            return Err(Error::DegenerateBatch(n));
        }
        let nf = n as f64;
        let mut blocks = Vec::with_capacity(self.hidden.len());
        let mut h = batch.to_owned();
        for block in &mut self.hidden {
            let z = block.dense.forward(&h.view());
            let mean = z.mean_axis(Axis(0)).expect("n >= 2");
            let centered = &z - &mean;
            let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / nf;
            let bn = &mut block.norm;
            let inv_std = var.mapv(|v| 1.0 / (v + bn.epsilon).sqrt());
            let normalized = &centered * &inv_std;
            let mut pre = &normalized * &bn.gamma;
            pre += &bn.beta;

            let m = bn.momentum;
            let unbiased = &var * (nf / (nf - 1.0));
            bn.running_mean = &bn.running_mean * m + &mean * (1.0 - m);
            bn.running_var = &bn.running_var * m + &unbiased * (1.0 - m);

            let mut act = pre.clone();
            relu_inplace(&mut act);
            blocks.push(BlockCache { input: h, normalized, pre_activation: pre, inv_std });
            h = act;
        }
        let out = self.output.forward(&h.view());
        Ok((out, ForwardCache { blocks, last_hidden: h }))
    }

    /// Backpropagates `d_out` (gradient of the loss w.r.t. the outputs of
    /// the pass that produced `cache`).
    pub fn backward(&self, cache: &ForwardCache, d_out: &Array2<f64>) -> Gradients {
        let output = DenseGrad {
            weights: d_out.t().dot(&cache.last_hidden),
            biases: d_out.sum_axis(Axis(0)),
        };
        let mut d_h = d_out.dot(&self.output.weights);
        let mut hidden = Vec::with_capacity(self.hidden.len());
        for (block, bc) in self.hidden.iter().zip(&cache.blocks).rev() {
            let nf = bc.input.nrows() as f64;
            // ReLU'(0) = 0
            Zip::from(&mut d_h).and(&bc.pre_activation).for_each(|d, &y| {
                if y <= 0.0 {
                    *d = 0.0;
                }
            });
            let d_pre = d_h;
            let d_gamma = (&d_pre * &bc.normalized).sum_axis(Axis(0));
            let d_beta = d_pre.sum_axis(Axis(0));
            let d_norm = &d_pre * &block.norm.gamma;
            let sum_d = d_norm.sum_axis(Axis(0));
            let sum_dx = (&d_norm * &bc.normalized).sum_axis(Axis(0));
            let mut d_z = &d_norm * nf - &sum_d;
            d_z -= &(&bc.normalized * &sum_dx);
            d_z *= &(&bc.inv_std / nf);

            hidden.push(BlockGrad {
                dense: DenseGrad { weights: d_z.t().dot(&bc.input), biases: d_z.sum_axis(Axis(0)) },
                gamma: d_gamma,
                beta: d_beta,
            });
            d_h = d_z.dot(&block.dense.weights);
        }
        hidden.reverse();
        Gradients { hidden, output }
    }

    /// Mean squared error between `targets` and the output selected by
    /// `actions` in each row; other outputs get zero gradient.
    pub fn loss_and_grad(
        &mut self,
        batch: ArrayView2<f64>,
        actions: &[usize],
        targets: &[f64],
    ) -> Result<(f64, Gradients)> {
        if actions.len() != batch.nrows() || targets.len() != batch.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} rows, {} actions, {} targets",
                batch.nrows(),
                actions.len(),
                targets.len()
            )));
        }
        if let Some(a) = actions.iter().find(|a| **a >= self.output_dim()) {
            return Err(Error::ShapeMismatch(format!("action {a} >= output width {}", self.output_dim())));
        }
        let (q, cache) = self.forward_train(batch)?;
        let (loss, d_q) = selected_mse(&q, actions, targets);
        Ok((loss, self.backward(&cache, &d_q)))
    }

    /// Softmax cross-entropy against class `labels`.
    pub fn classification_loss_and_grad(&mut self, batch: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Gradients)> {
        if labels.len() != batch.nrows() {
            return Err(Error::ShapeMismatch(format!("{} rows, {} labels", batch.nrows(), labels.len())));
        }
        if let Some(l) = labels.iter().find(|l| **l >= self.output_dim()) {
            return Err(Error::ShapeMismatch(format!("label {l} >= output width {}", self.output_dim())));
        }
        let (logits, cache) = self.forward_train(batch)?;
        let (loss, d_logits) = softmax_cross_entropy(&logits, labels);
        Ok((loss, self.backward(&cache, &d_logits)))
    }

    /// `p <- p - lr * g` for every trainable parameter. Running statistics
    /// are untouched.
    pub fn sgd_update(&mut self, grads: &Gradients, cfg: &SgdConfig) -> Result<()> {
        self.check_gradient_shapes(grads)?;
        let lr = cfg.learning_rate;
        for (block, g) in self.hidden.iter_mut().zip(&grads.hidden) {
            block.dense.weights.scaled_add(-lr, &g.dense.weights);
            block.dense.biases.scaled_add(-lr, &g.dense.biases);
            block.norm.gamma.scaled_add(-lr, &g.gamma);
            block.norm.beta.scaled_add(-lr, &g.beta);
        }
        self.output.weights.scaled_add(-lr, &grads.output.weights);
        self.output.biases.scaled_add(-lr, &grads.output.biases);
        Ok(())
    }

    fn check_gradient_shapes(&self, grads: &Gradients) -> Result<()> {
        let ok = grads.hidden.len() == self.hidden.len()
            && self.hidden.iter().zip(&grads.hidden).all(|(b, g)| {
                b.dense.weights.dim() == g.dense.weights.dim()
                    && b.dense.biases.len() == g.dense.biases.len()
                    && b.norm.gamma.len() == g.gamma.len()
                    && b.norm.beta.len() == g.beta.len()
            })
            && self.output.weights.dim() == grads.output.weights.dim()
            && self.output.biases.len() == grads.output.biases.len();
        if ok {
            Ok(())
        } else {
            Err(Error::ShapeMismatch("gradient shapes do not match network".into()))
        }
    }

    /// Deep copy, running statistics included.
    pub fn clone_parameters(&self) -> Mlp {
        self.clone()
    }

    /// Trainable parameters, flattened: per hidden block W (row-major), b,
    /// gamma, beta; then output W, b.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for b in &self.hidden {
            out.extend(b.dense.weights.iter());
            out.extend(b.dense.biases.iter());
            out.extend(b.norm.gamma.iter());
            out.extend(b.norm.beta.iter());
        }
        out.extend(self.output.weights.iter());
        out.extend(self.output.biases.iter());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.hidden
            .iter()
            .map(|b| b.dense.weights.len() + b.dense.biases.len() + 2 * b.norm.features())
            .sum::<usize>()
            + self.output.weights.len()
            + self.output.biases.len()
    }

    pub fn set_parameters(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.parameter_count() {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} parameters",
                values.len(),
                self.parameter_count()
            )));
        }
        let mut it = values.iter().copied();
        let mut fill = |dst: &mut dyn Iterator<Item = &mut f64>| {
            for d in dst {
                *d = it.next().expect("length checked");
            }
        };
        for b in &mut self.hidden {
            fill(&mut b.dense.weights.iter_mut());
            fill(&mut b.dense.biases.iter_mut());
            fill(&mut b.norm.gamma.iter_mut());
            fill(&mut b.norm.beta.iter_mut());
        }
        fill(&mut self.output.weights.iter_mut());
        fill(&mut self.output.biases.iter_mut());
        Ok(())
    }
}

/// `mean_j (y_j - q[j, a_j])^2` and its gradient w.r.t. `q`.
pub fn selected_mse(q: &Array2<f64>, actions: &[usize], targets: &[f64]) -> (f64, Array2<f64>) {
    let n = q.nrows() as f64;
    let mut grad = Array2::zeros(q.dim());
    let mut loss = 0.0;
    for (j, (&a, &y)) in actions.iter().zip(targets).enumerate() {
        let diff = q[[j, a]] - y;
        loss += diff * diff;
        grad[[j, a]] = 2.0 * diff / n;
    }
    (loss / n, grad)
}

/// Row-wise softmax, max-shifted.
pub fn softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut p = logits.clone();
    for mut row in p.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    p
}

/// Mean cross-entropy of `labels` under `softmax(logits)` and its gradient.
pub fn softmax_cross_entropy(logits: &Array2<f64>, labels: &[usize]) -> (f64, Array2<f64>) {
    let n = logits.nrows() as f64;
    let mut p = softmax(logits);
    let mut loss = 0.0;
    for (j, &l) in labels.iter().enumerate() {
        loss -= p[[j, l]].max(f64::MIN_POSITIVE).ln();
        p[[j, l]] -= 1.0;
    }
    p /= n;
    (loss / n, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn random_batch(rows: usize, cols: usize, r: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_simple_fn((rows, cols), || r.random_range(-1.0..1.0))
    }

    #[test]
    fn init_scheme() {
        let net = Mlp::init(&[4, 4, 3], &mut rng(1)).unwrap();
        let limit = (6.0f64 / 8.0).sqrt();
        assert!(net.hidden[0].dense.weights.iter().all(|w| w.abs() <= limit));
        assert!(net.hidden[0].dense.biases.iter().all(|b| *b == 0.0));
        assert!(net.output.biases.iter().all(|b| *b == 0.0));
        let bn = &net.hidden[0].norm;
        assert!(bn.gamma.iter().all(|g| *g == 1.0) && bn.beta.iter().all(|b| *b == 0.0));
        assert!(bn.running_mean.iter().all(|m| *m == 0.0) && bn.running_var.iter().all(|v| *v == 1.0));
        assert_eq!(net, Mlp::init(&[4, 4, 3], &mut rng(1)).unwrap());
        assert_ne!(net, Mlp::init(&[4, 4, 3], &mut rng(2)).unwrap());
        assert_eq!(net.dims(), vec![4, 4, 3]);
        assert!(Mlp::init(&[4], &mut rng(1)).is_err());
        assert!(Mlp::init(&[4, 0, 3], &mut rng(1)).is_err());

        let q = Mlp::init(&[22, 200, 200, 9], &mut rng(1)).unwrap();
        assert_eq!(q.dims(), vec![22, 200, 200, 9]);
        assert_eq!(q.hidden.len(), 2);
    }

    #[test]
    fn zero_network_outputs_zero() {
        let mut net = Mlp::init(&[3, 5, 9], &mut rng(1)).unwrap();
        net.output = DenseLayer::zeros(5, 9);
        let x = random_batch(4, 3, &mut rng(2));
        assert!(net.infer(x.view()).unwrap().iter().all(|v| *v == 0.0));
        assert!(net.forward(x.view(), Mode::Train).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn forward_errors() {
        let mut net = Mlp::init(&[3, 5, 9], &mut rng(1)).unwrap();
        let wrong = Array2::zeros((4, 2));
        assert!(matches!(net.infer(wrong.view()), Err(Error::ShapeMismatch(_))));
        let one = Array2::zeros((1, 3));
        assert!(matches!(net.forward(one.view(), Mode::Train), Err(Error::DegenerateBatch(1))));
        assert_eq!(net.infer(one.view()).unwrap().dim(), (1, 9));
    }

    #[test]
    fn train_mode_normalizes_batch() {
        let mut net = Mlp::init(&[5, 16, 16, 3], &mut rng(3)).unwrap();
        let x = random_batch(32, 5, &mut rng(4)) * 3.0 + 1.0;
        let (_, cache) = net.forward_train(x.view()).unwrap();
        for i in 0..2 {
            let xn = cache.normalized(i);
            let mean = xn.mean_axis(Axis(0)).unwrap();
            let var = xn.mapv(|v| v * v).mean_axis(Axis(0)).unwrap() - mean.mapv(|m| m * m);
            // Input width 5 < hidden width 16 in block 0 and ReLU in block 1
            // leave some features with small variance; correct for epsilon.
            let z = {
                let h = if i == 0 { x.clone() } else { cache.blocks[1].input.clone() };
                net.hidden[i].dense.forward(&h.view())
            };
            let zc = &z - &z.mean_axis(Axis(0)).unwrap();
            let raw_var = zc.mapv(|v| v * v).mean_axis(Axis(0)).unwrap();
            for f in 0..16 {
                assert!(mean[f].abs() < 1e-6, "mean {}", mean[f]);
                let expected = raw_var[f] / (raw_var[f] + DEFAULT_BN_EPSILON);
                assert!((var[f] - expected).abs() < 1e-6, "var {} vs {}", var[f], expected);
            }
        }
    }

    #[test]
    fn inference_is_pure_and_repeatable() {
        let mut net = Mlp::init(&[4, 8, 8, 9], &mut rng(5)).unwrap();
        let x = random_batch(6, 4, &mut rng(6));
        net.forward_train(x.view()).unwrap();
        let before = net.clone();
        let a = net.forward(x.view(), Mode::Infer).unwrap();
        let b = net.forward(x.view(), Mode::Infer).unwrap();
        assert_eq!(a, b);
        assert_eq!(net, before);
    }

    #[test]
    fn running_mean_converges_geometrically() {
        let mut net = Mlp::init(&[3, 4, 2], &mut rng(7)).unwrap();
        let x = random_batch(8, 3, &mut rng(8));
        let z = net.hidden[0].dense.forward(&x.view());
        let target = z.mean_axis(Axis(0)).unwrap();
        let m = net.hidden[0].norm.momentum;
        let mut gap = target.mapv(f64::abs);
        for _ in 0..50 {
            net.forward_train(x.view()).unwrap();
            let new_gap = (&net.hidden[0].norm.running_mean - &target).mapv(f64::abs);
            for f in 0..4 {
                assert!((new_gap[f] - m * gap[f]).abs() < 1e-12);
            }
            gap = new_gap;
        }
    }

    #[test]
    fn loss_examples() {
        let q = array![[2.0, 7.0]];
        let (loss, grad) = selected_mse(&q, &[0], &[3.0]);
        assert_eq!(loss, 1.0);
        assert_eq!(grad, array![[-2.0, 0.0]]);

        let mut net = Mlp::init(&[3, 6, 4], &mut rng(9)).unwrap();
        let x = random_batch(5, 3, &mut rng(10));
        let mut probe = net.clone();
        let (q, _) = probe.forward_train(x.view()).unwrap();
        let actions = [0, 1, 2, 3, 1];
        let targets: Vec<f64> = actions.iter().enumerate().map(|(j, a)| q[[j, *a]]).collect();
        let (loss, grads) = net.loss_and_grad(x.view(), &actions, &targets).unwrap();
        assert!(loss.abs() < 1e-24);
        assert!(grads.to_flat().iter().all(|g| g.abs() < 1e-12));

        assert!(net.loss_and_grad(x.view(), &[0, 1], &targets).is_err());
        assert!(net.loss_and_grad(x.view(), &actions, &[0.0]).is_err());
        assert!(net.loss_and_grad(x.view(), &[9, 0, 0, 0, 0], &targets).is_err());
    }

    #[test]
    fn softmax_rows_are_distributions() {
        let logits = random_batch(7, 5, &mut rng(11)) * 30.0;
        let p = softmax(&logits);
        for row in p.rows() {
            assert!(row.iter().all(|v| *v >= 0.0));
            assert!((row.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn sgd_update_examples() {
        let mut net = Mlp::init(&[2, 3, 2], &mut rng(12)).unwrap();
        let before = net.clone();
        let x = random_batch(4, 2, &mut rng(13));
        let (_, grads) = net.clone().loss_and_grad(x.view(), &[0, 1, 0, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap();

        let zero = Gradients {
            hidden: grads
                .hidden
                .iter()
                .map(|g| BlockGrad {
                    dense: DenseGrad { weights: g.dense.weights.mapv(|_| 0.0), biases: g.dense.biases.mapv(|_| 0.0) },
                    gamma: g.gamma.mapv(|_| 0.0),
                    beta: g.beta.mapv(|_| 0.0),
                })
                .collect(),
            output: DenseGrad { weights: grads.output.weights.mapv(|_| 0.0), biases: grads.output.biases.mapv(|_| 0.0) },
        };
        net.sgd_update(&zero, &SgdConfig::default()).unwrap();
        assert_eq!(net, before);

        // w = 1, g = 2, lr = 0.001
        let mut one = before.clone();
        one.output.weights[[0, 0]] = 1.0;
        let mut g = zero.clone();
        g.output.weights[[0, 0]] = 2.0;
        one.sgd_update(&g, &SgdConfig::default()).unwrap();
        assert_eq!(one.output.weights[[0, 0]], 0.998);

        // g then -g restores (lr a power of two keeps it exact)
        let cfg = SgdConfig::new(0.0009765625).unwrap();
        let neg = Gradients {
            hidden: grads
                .hidden
                .iter()
                .map(|b| BlockGrad {
                    dense: DenseGrad { weights: -&b.dense.weights, biases: -&b.dense.biases },
                    gamma: -&b.gamma,
                    beta: -&b.beta,
                })
                .collect(),
            output: DenseGrad { weights: -&grads.output.weights, biases: -&grads.output.biases },
        };
        let mut round = before.clone();
        round.sgd_update(&grads, &cfg).unwrap();
        round.sgd_update(&neg, &cfg).unwrap();
        for (a, b) in round.parameters().iter().zip(before.parameters()) {
            assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
        assert_eq!(round.hidden[0].norm.running_mean, before.hidden[0].norm.running_mean);

        let other = Mlp::init(&[2, 4, 2], &mut rng(12)).unwrap();
        let (_, wrong) = other.clone().loss_and_grad(x.view(), &[0, 1, 0, 1], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(matches!(net.sgd_update(&wrong, &SgdConfig::default()), Err(Error::ShapeMismatch(_))));
        assert!(SgdConfig::new(0.0).is_err());
    }

    #[test]
    fn clone_isolation() {
        let mut net = Mlp::init(&[3, 5, 4], &mut rng(14)).unwrap();
        let x = random_batch(6, 3, &mut rng(15));
        net.forward_train(x.view()).unwrap();
        let copy = net.clone_parameters();
        assert_eq!(net.infer(x.view()).unwrap(), copy.infer(x.view()).unwrap());
        assert_eq!(copy.clone_parameters(), copy);

        let frozen = copy.infer(x.view()).unwrap();
        let (_, g) = net.loss_and_grad(x.view(), &[0; 6], &[5.0; 6]).unwrap();
        net.sgd_update(&g, &SgdConfig::new(0.1).unwrap()).unwrap();
        assert_eq!(copy.infer(x.view()).unwrap(), frozen);
        assert_ne!(net.infer(x.view()).unwrap(), frozen);
    }

    #[test]
    fn flat_parameters_round_trip() {
        let mut net = Mlp::init(&[3, 5, 4, 2], &mut rng(16)).unwrap();
        let p = net.parameters();
        assert_eq!(p.len(), net.parameter_count());
        let shifted: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
        net.set_parameters(&shifted).unwrap();
        assert_eq!(net.parameters(), shifted);
        assert!(net.set_parameters(&p[1..]).is_err());
    }
}
