//! Backpropagation against central finite differences.

use ndarray::Array2;
use rand::Rng;
use rssloc_core::neural::Mlp;
use rssloc_core::seed;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

#[derive(Clone, Copy)]
enum Loss {
    SelectedMse,
    CrossEntropy,
}

struct Case {
    net: Mlp,
    x: Array2<f64>,
    picks: Vec<usize>,
    targets: Vec<f64>,
}

impl Case {
    fn loss_and_flat_grad(&self, net: &mut Mlp, loss: Loss) -> (f64, Vec<f64>) {
        let (l, g) = match loss {
            Loss::SelectedMse => net.loss_and_grad(self.x.view(), &self.picks, &self.targets).unwrap(),
            Loss::CrossEntropy => net.classification_loss_and_grad(self.x.view(), &self.picks).unwrap(),
        };
        (l, g.to_flat())
    }

    /// Worst relative disagreement over all trainable parameters.
    fn worst_error(&self, loss: Loss) -> f64 {
        let (_, analytic) = self.loss_and_flat_grad(&mut self.net.clone(), loss);
        let base = self.net.parameters();
        let mut worst: f64 = 0.0;
        for (i, a) in analytic.iter().enumerate() {
            let eval = |delta: f64| {
                let mut net = self.net.clone();
                let mut p = base.clone();
                p[i] += delta;
                net.set_parameters(&p).unwrap();
                self.loss_and_flat_grad(&mut net, loss).0
            };
            let numeric = (eval(H) - eval(-H)) / (2.0 * H);
            let scale = a.abs().max(numeric.abs());
            // Parameters with no influence (dense biases ahead of batch norm)
            // only see rounding noise.
            if scale < 1e-7 {
                continue;
            }
            worst = worst.max((a - numeric).abs() / scale);
        }
        worst
    }
}

fn random_case(seed: u64, dims: &[usize], batch: usize) -> Case {
    let mut rng = seed::rng(seed);
    let net = Mlp::init(dims, &mut rng).unwrap();
    let out = *dims.last().unwrap();
    let x = Array2::from_shape_simple_fn((batch, dims[0]), || rng.random_range(-1.0..1.0));
    let picks = (0..batch).map(|_| rng.random_range(0..out)).collect();
    let targets = (0..batch).map(|_| rng.random_range(-2.0..2.0)).collect();
    Case { net, x, picks, targets }
}

#[test]
fn reference_net_five_eight_three() {
    let case = random_case(2024, &[5, 8, 3], 4);
    for loss in [Loss::SelectedMse, Loss::CrossEntropy] {
        let e = case.worst_error(loss);
        assert!(e < TOL, "relative error {e}");
    }
}

#[test]
fn random_small_networks() {
    let mut rng = seed::rng(77);
    for k in 0..24 {
        let depth = rng.random_range(0..3);
        let mut dims = vec![rng.random_range(1..6)];
        for _ in 0..depth {
            dims.push(rng.random_range(2..7));
        }
        dims.push(rng.random_range(2..5));
        let batch = rng.random_range(3..7);
        let case = random_case(1000 + k, &dims, batch);
        for loss in [Loss::SelectedMse, Loss::CrossEntropy] {
            let e = case.worst_error(loss);
            assert!(e < TOL, "dims {dims:?} batch {batch}: relative error {e}");
        }
    }
}

#[test]
fn trained_parameters_also_check() {
    // Away from initialization gamma and beta differ from 1 and 0.
    let mut case = random_case(5, &[4, 6, 5, 3], 5);
    let mut rng = seed::rng(6);
    let mut p = case.net.parameters();
    for v in &mut p {
        *v += rng.random_range(-0.3..0.3);
    }
    case.net.set_parameters(&p).unwrap();
    for loss in [Loss::SelectedMse, Loss::CrossEntropy] {
        assert!(case.worst_error(loss) < TOL);
    }
}
