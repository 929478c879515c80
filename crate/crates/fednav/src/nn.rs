//! Dense feedforward networks with plain mini-batch SGD.
//!
//! This is the numerical core shared by the Q-learning agents and the
//! knowledge-fusion distillation fit: relu hidden layers, identity output,
//! mean-squared-error training, and a finite-difference gradient check.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid layer dims {0:?}: need at least two positive entries")]
    InvalidDims(Vec<usize>),
    #[error("input length {got} does not match input layer size {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("target length {got} does not match output layer size {expected}")]
    TargetDim { expected: usize, got: usize },
    #[error("empty training batch")]
    EmptyBatch,
    #[error("batch has {inputs} inputs but {targets} targets")]
    BatchMismatch { inputs: usize, targets: usize },
    #[error("weights[{layer}] has {got} entries, expected {expected}")]
    WeightShape {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("biases[{layer}] has {got} entries, expected {expected}")]
    BiasShape {
        layer: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite parameter value in layer {0}")]
    NonFinite(usize),
    #[error("training diverged (non-finite loss) at epoch {epoch}")]
    Diverged { epoch: usize },
}

/// Weights and biases of a dense relu network with an identity output layer.
///
/// `weights[l]` is row-major with shape `(layer_dims[l+1], layer_dims[l])`.
/// This is the unit of upload, download, and fusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParameters {
    layer_dims: Vec<usize>,
    weights: Vec<Vec<f64>>,
    biases: Vec<Vec<f64>>,
}

impl NetworkParameters {
    /// Builds parameters from explicit weight/bias data, validating shapes
    /// and finiteness.
    pub fn new(
        layer_dims: Vec<usize>,
        weights: Vec<Vec<f64>>,
        biases: Vec<Vec<f64>>,
    ) -> Result<Self, NnError> {
        if layer_dims.len() < 2 || layer_dims.iter().any(|&d| d == 0) {
            return Err(NnError::InvalidDims(layer_dims));
        }
        let layers = layer_dims.len() - 1;
        if weights.len() != layers {
            return Err(NnError::WeightShape {
                layer: weights.len(),
                expected: layers,
                got: weights.len(),
            });
        }
        if biases.len() != layers {
            return Err(NnError::BiasShape {
                layer: biases.len(),
                expected: layers,
                got: biases.len(),
            });
        }
        for l in 0..layers {
            let expected_w = layer_dims[l + 1] * layer_dims[l];
            if weights[l].len() != expected_w {
                return Err(NnError::WeightShape {
                    layer: l,
                    expected: expected_w,
                    got: weights[l].len(),
                });
            }
            if biases[l].len() != layer_dims[l + 1] {
                return Err(NnError::BiasShape {
                    layer: l,
                    expected: layer_dims[l + 1],
                    got: biases[l].len(),
                });
            }
            if weights[l].iter().chain(biases[l].iter()).any(|v| !v.is_finite()) {
                return Err(NnError::NonFinite(l));
            }
        }
        Ok(Self {
            layer_dims,
            weights,
            biases,
        })
    }

    /// Glorot-uniform initialization: entries drawn from
    /// `±sqrt(6 / (fan_in + fan_out))`, reproducible per seed.
    pub fn init_random(layer_dims: &[usize], seed: u64) -> Result<Self, NnError> {
        if layer_dims.len() < 2 || layer_dims.iter().any(|&d| d == 0) {
            return Err(NnError::InvalidDims(layer_dims.to_vec()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for l in 0..layer_dims.len() - 1 {
            let (fan_in, fan_out) = (layer_dims[l], layer_dims[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-limit..limit))
                .collect();
            weights.push(w);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
        })
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>()
            + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layer_dims == other.layer_dims
    }

    /// Evaluates the network: affine + relu on hidden layers, affine on the
    /// output layer. Deterministic for fixed parameters.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        if input.len() != self.input_dim() {
            return Err(NnError::InputDim {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let mut activation = input.to_vec();
        for l in 0..self.num_layers() {
            activation = self.layer_forward(l, &activation);
            if l + 1 < self.num_layers() {
                for v in activation.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        Ok(activation)
    }

    fn layer_forward(&self, l: usize, input: &[f64]) -> Vec<f64> {
        let (n_in, n_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
        let w = &self.weights[l];
        let mut out = self.biases[l].clone();
        for (o, out_v) in out.iter_mut().enumerate().take(n_out) {
            let row = &w[o * n_in..(o + 1) * n_in];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(input) {
                acc += a * b;
            }
            *out_v += acc;
        }
        out
    }

    /// Forward pass that records every layer's pre- and post-activation,
    /// for backprop.
    fn forward_trace(&self, input: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut activations = vec![input.to_vec()];
        let mut current = input.to_vec();
        for l in 0..self.num_layers() {
            current = self.layer_forward(l, &current);
            if l + 1 < self.num_layers() {
                for v in current.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            activations.push(current.clone());
        }
        let out = activations.last().unwrap().clone();
        (activations, out)
    }
}

/// Input/target pairs for supervised MSE training.
#[derive(Debug, Clone)]
pub struct TrainingBatch {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

impl TrainingBatch {
    pub fn new(inputs: Vec<Vec<f64>>, targets: Vec<Vec<f64>>) -> Result<Self, NnError> {
        if inputs.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        if inputs.len() != targets.len() {
            return Err(NnError::BatchMismatch {
                inputs: inputs.len(),
                targets: targets.len(),
            });
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn check_dims(&self, net: &NetworkParameters) -> Result<(), NnError> {
        for x in &self.inputs {
            if x.len() != net.input_dim() {
                return Err(NnError::InputDim {
                    expected: net.input_dim(),
                    got: x.len(),
                });
            }
        }
        for y in &self.targets {
            if y.len() != net.output_dim() {
                return Err(NnError::TargetDim {
                    expected: net.output_dim(),
                    got: y.len(),
                });
            }
        }
        Ok(())
    }
}

/// Mini-batch SGD settings for [`train_mse`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOptions {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Stop as soon as the epoch's mean loss drops to this value.
    pub stop_loss: Option<f64>,
    /// Seed for the per-epoch shuffle; training is deterministic per seed.
    pub shuffle_seed: u64,
}

impl TrainOptions {
    pub fn new(epochs: usize, learning_rate: f64, batch_size: usize) -> Self {
        Self {
            epochs,
            learning_rate,
            batch_size,
            stop_loss: None,
            shuffle_seed: 0,
        }
    }
}

/// Gradients of the mean-per-element squared error over a batch.
///
/// Loss convention throughout: `L = (1/(N*m)) Σ_samples Σ_outputs (h - y)^2`
/// with `N` samples and `m` output units.
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub loss: f64,
}

/// Analytic backprop gradients for the batch, plus the loss at the current
/// parameters.
pub fn gradients(net: &NetworkParameters, batch: &TrainingBatch) -> Result<Gradients, NnError> {
    batch.check_dims(net)?;
    let layers = net.num_layers();
    let mut gw: Vec<Vec<f64>> = net.weights.iter().map(|w| vec![0.0; w.len()]).collect();
    let mut gb: Vec<Vec<f64>> = net.biases.iter().map(|b| vec![0.0; b.len()]).collect();
    let n = batch.len() as f64;
    let m = net.output_dim() as f64;
    let scale = 1.0 / (n * m);
    let mut loss = 0.0;

    for (x, y) in batch.inputs.iter().zip(&batch.targets) {
        let (acts, out) = net.forward_trace(x);
        // dL/dh for this sample, under the 1/(N*m) normalization.
        let mut delta: Vec<f64> = out
            .iter()
            .zip(y)
            .map(|(h, t)| {
                let e = h - t;
                loss += e * e * scale;
                2.0 * e * scale
            })
            .collect();
        for l in (0..layers).rev() {
            let n_in = net.layer_dims[l];
            let input = &acts[l];
            for (o, d) in delta.iter().enumerate() {
                gb[l][o] += d;
                let row = &mut gw[l][o * n_in..(o + 1) * n_in];
                for (g, a) in row.iter_mut().zip(input) {
                    *g += d * a;
                }
            }
            if l > 0 {
                let mut prev = vec![0.0; n_in];
                for (o, d) in delta.iter().enumerate() {
                    let row = &net.weights[l][o * n_in..(o + 1) * n_in];
                    for (p, w) in prev.iter_mut().zip(row) {
                        *p += d * w;
                    }
                }
                // relu derivative: the traced activation is post-relu.
                for (p, a) in prev.iter_mut().zip(&acts[l]) {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                }
                delta = prev;
            }
        }
    }
    Ok(Gradients {
        weights: gw,
        biases: gb,
        loss,
    })
}

/// One SGD step on the given batch. Returns the loss evaluated before the
/// update.
pub fn sgd_step(
    net: &mut NetworkParameters,
    batch: &TrainingBatch,
    lr: f64,
) -> Result<f64, NnError> {
    let grads = gradients(net, batch)?;
    for (w, g) in net.weights.iter_mut().zip(&grads.weights) {
        for (wv, gv) in w.iter_mut().zip(g) {
            *wv -= lr * gv;
        }
    }
    for (b, g) in net.biases.iter_mut().zip(&grads.biases) {
        for (bv, gv) in b.iter_mut().zip(g) {
            *bv -= lr * gv;
        }
    }
    Ok(grads.loss)
}

/// [`sgd_step`] with the gradient rescaled to a maximum global L2 norm.
/// Returns the pre-update loss.
pub fn sgd_step_clipped(
    net: &mut NetworkParameters,
    batch: &TrainingBatch,
    lr: f64,
    max_norm: f64,
) -> Result<f64, NnError> {
    let grads = gradients(net, batch)?;
    let mut sq = 0.0;
    for g in grads.weights.iter().chain(grads.biases.iter()) {
        for v in g {
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    let scale = if norm > max_norm { max_norm / norm } else { 1.0 };
    for (w, g) in net.weights.iter_mut().zip(&grads.weights) {
        for (wv, gv) in w.iter_mut().zip(g) {
            *wv -= lr * scale * gv;
        }
    }
    for (b, g) in net.biases.iter_mut().zip(&grads.biases) {
        for (bv, gv) in b.iter_mut().zip(g) {
            *bv -= lr * scale * gv;
        }
    }
    Ok(grads.loss)
}

/// Mean-per-element squared error of the network over the batch.
pub fn mse(net: &NetworkParameters, batch: &TrainingBatch) -> Result<f64, NnError> {
    batch.check_dims(net)?;
    let mut loss = 0.0;
    for (x, y) in batch.inputs.iter().zip(&batch.targets) {
        let out = net.forward(x)?;
        for (h, t) in out.iter().zip(y) {
            loss += (h - t) * (h - t);
        }
    }
    Ok(loss / (batch.len() as f64 * net.output_dim() as f64))
}

/// Trains a copy of `net` by mini-batch SGD on the MSE loss. Returns the
/// trained parameters and the final epoch's mean loss.
pub fn train_mse(
    net: &NetworkParameters,
    batch: &TrainingBatch,
    opts: &TrainOptions,
) -> Result<(NetworkParameters, f64), NnError> {
    batch.check_dims(net)?;
    let mut trained = net.clone();
    let mut final_loss = mse(&trained, batch)?;
    if let Some(tol) = opts.stop_loss {
        if final_loss <= tol {
            return Ok((trained, final_loss));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.shuffle_seed);
    let mut order: Vec<usize> = (0..batch.len()).collect();
    for epoch in 0..opts.epochs {
        shuffle(&mut order, &mut rng);
        let mut epoch_loss = 0.0;
        let mut chunks = 0usize;
        for chunk in order.chunks(opts.batch_size.max(1)) {
            let mini = TrainingBatch {
                inputs: chunk.iter().map(|&i| batch.inputs[i].clone()).collect(),
                targets: chunk.iter().map(|&i| batch.targets[i].clone()).collect(),
            };
            let loss = sgd_step(&mut trained, &mini, opts.learning_rate)?;
            if !loss.is_finite() {
                return Err(NnError::Diverged { epoch });
            }
            epoch_loss += loss;
            chunks += 1;
        }
        final_loss = epoch_loss / chunks as f64;
        if let Some(tol) = opts.stop_loss {
            if final_loss <= tol {
                break;
            }
        }
    }
    Ok((trained, final_loss))
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
}

/// Compares analytic gradients against central finite differences and
/// returns the max relative error `|a - n| / max(1e-8, |a| + |n|)`.
/// Meant for small networks; cost is quadratic in parameter count.
pub fn gradient_check(net: &NetworkParameters, batch: &TrainingBatch) -> Result<f64, NnError> {
    let analytic = gradients(net, batch)?;
    let h = 1e-5;
    let mut max_rel = 0.0f64;
    let mut probe = net.clone();
    for l in 0..net.num_layers() {
        for i in 0..net.weights[l].len() {
            let orig = probe.weights[l][i];
            probe.weights[l][i] = orig + h;
            let up = mse(&probe, batch)?;
            probe.weights[l][i] = orig - h;
            let down = mse(&probe, batch)?;
            probe.weights[l][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            max_rel = max_rel.max(rel_err(analytic.weights[l][i], numeric));
        }
        for i in 0..net.biases[l].len() {
            let orig = probe.biases[l][i];
            probe.biases[l][i] = orig + h;
            let up = mse(&probe, batch)?;
            probe.biases[l][i] = orig - h;
            let down = mse(&probe, batch)?;
            probe.biases[l][i] = orig;
            let numeric = (up - down) / (2.0 * h);
            max_rel = max_rel.max(rel_err(analytic.biases[l][i], numeric));
        }
    }
    Ok(max_rel)
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-8)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch_from(net: &NetworkParameters, inputs: Vec<Vec<f64>>) -> TrainingBatch {
        let targets = inputs.iter().map(|x| net.forward(x).unwrap()).collect();
        TrainingBatch::new(inputs, targets).unwrap()
    }

    #[test]
    fn forward_identity_layer() {
        let net = NetworkParameters::new(
            vec![3, 3],
            vec![vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]],
            vec![vec![0.0; 3]],
        )
        .unwrap();
        assert_eq!(net.forward(&[1.0, 2.0, 3.0]).unwrap(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn forward_zero_network() {
        let net =
            NetworkParameters::new(vec![4, 2], vec![vec![0.0; 8]], vec![vec![0.0; 2]]).unwrap();
        assert_eq!(net.forward(&[0.3, -1.0, 2.0, 5.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn forward_matches_straight_line_oracle() {
        // Independent re-implementation of the affine+relu chain, written
        // without reusing NetworkParameters internals beyond the accessors.
        fn oracle(net: &NetworkParameters, input: &[f64]) -> Vec<f64> {
            let dims = net.layer_dims();
            let mut act = input.to_vec();
            for l in 0..dims.len() - 1 {
                let mut next = vec![0.0; dims[l + 1]];
                for o in 0..dims[l + 1] {
                    let mut s = net.biases()[l][o];
                    for i in 0..dims[l] {
                        s += net.weights()[l][o * dims[l] + i] * act[i];
                    }
                    next[o] = s;
                }
                if l + 1 < dims.len() - 1 {
                    for v in next.iter_mut() {
                        *v = v.max(0.0);
                    }
                }
                act = next;
            }
            act
        }

        let net = NetworkParameters::init_random(&[14, 64, 64, 5], 7).unwrap();
        let input = vec![0.5; 14];
        let got = net.forward(&input).unwrap();
        let want = oracle(&net, &input);
        assert_eq!(got.len(), 5);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-9, "got {g}, oracle {w}");
        }
    }

    #[test]
    fn forward_rejects_bad_input_dim() {
        let net = NetworkParameters::init_random(&[4, 3], 0).unwrap();
        assert!(matches!(
            net.forward(&[1.0, 2.0]),
            Err(NnError::InputDim { expected: 4, got: 2 })
        ));
    }

    #[test]
    fn init_random_is_deterministic_and_shaped() {
        let a = NetworkParameters::init_random(&[14, 64, 64, 5], 42).unwrap();
        let b = NetworkParameters::init_random(&[14, 64, 64, 5], 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.weights()[0].len(), 64 * 14);
        assert_eq!(a.weights()[1].len(), 64 * 64);
        assert_eq!(a.weights()[2].len(), 5 * 64);
        let c = NetworkParameters::init_random(&[14, 64, 64, 5], 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_random_rejects_bad_dims() {
        assert!(NetworkParameters::init_random(&[5], 0).is_err());
        assert!(NetworkParameters::init_random(&[5, 0, 3], 0).is_err());
        assert!(NetworkParameters::init_random(&[], 0).is_err());
    }

    #[test]
    fn train_on_already_optimal_batch_is_noop() {
        let net = NetworkParameters::init_random(&[3, 8, 2], 5).unwrap();
        let batch = batch_from(&net, vec![vec![0.1, 0.2, 0.3], vec![1.0, -1.0, 0.5]]);
        let opts = TrainOptions {
            stop_loss: Some(1e-12),
            ..TrainOptions::new(10, 0.01, 2)
        };
        let (trained, loss) = train_mse(&net, &batch, &opts).unwrap();
        assert!(loss < 1e-12);
        assert_eq!(trained, net);
    }

    #[test]
    fn train_learns_linear_map() {
        // y = 2x over x in {0, 0.1, ..., 1.0}; closed-form least squares
        // solution has weight 2, bias 0.
        let net = NetworkParameters::new(vec![1, 1], vec![vec![0.0]], vec![vec![0.0]]).unwrap();
        let inputs: Vec<Vec<f64>> = (0..=10).map(|i| vec![i as f64 * 0.1]).collect();
        let targets: Vec<Vec<f64>> = inputs.iter().map(|x| vec![2.0 * x[0]]).collect();
        let batch = TrainingBatch::new(inputs, targets).unwrap();
        let (trained, loss) = train_mse(&net, &batch, &TrainOptions::new(500, 0.05, 11)).unwrap();
        assert!((trained.weights()[0][0] - 2.0).abs() < 0.05, "loss {loss}");
    }

    #[test]
    fn train_reports_divergence_with_epoch() {
        let net = NetworkParameters::new(vec![1, 1], vec![vec![1.0]], vec![vec![0.0]]).unwrap();
        let batch = TrainingBatch::new(vec![vec![10.0]], vec![vec![-10.0]]).unwrap();
        // lr far past the stability bound for this quadratic.
        let err = train_mse(&net, &batch, &TrainOptions::new(100, 10.0, 1)).unwrap_err();
        assert!(matches!(err, NnError::Diverged { .. }));
    }

    #[test]
    fn small_lr_never_increases_full_batch_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for case in 0..50 {
            let dims = vec![
                1 + (case % 4),
                2 + (case % 3),
                1 + (case % 2),
            ];
            let net = NetworkParameters::init_random(&dims, case as u64).unwrap();
            let inputs: Vec<Vec<f64>> = (0..6)
                .map(|_| (0..dims[0]).map(|_| rng.gen_range(-2.0..2.0)).collect())
                .collect();
            let targets: Vec<Vec<f64>> = (0..6)
                .map(|_| {
                    (0..*dims.last().unwrap())
                        .map(|_| rng.gen_range(-2.0..2.0))
                        .collect()
                })
                .collect();
            let batch = TrainingBatch::new(inputs, targets).unwrap();
            let before = mse(&net, &batch).unwrap();
            let (trained, _) = train_mse(
                &net,
                &batch,
                &TrainOptions::new(1, 1e-4, batch.len()),
            )
            .unwrap();
            let after = mse(&trained, &batch).unwrap();
            assert!(
                after <= before + 1e-12,
                "loss increased from {before} to {after} on case {case}"
            );
        }
    }

    #[test]
    fn gradient_check_small_network() {
        let net = NetworkParameters::init_random(&[3, 4, 2], 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let inputs: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let targets: Vec<Vec<f64>> = (0..8)
            .map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let batch = TrainingBatch::new(inputs, targets).unwrap();
        let max_rel = gradient_check(&net, &batch).unwrap();
        assert!(max_rel < 1e-4, "max relative error {max_rel}");
    }

    #[test]
    fn gradient_check_zero_everything() {
        let net =
            NetworkParameters::new(vec![2, 2], vec![vec![0.0; 4]], vec![vec![0.0; 2]]).unwrap();
        let batch =
            TrainingBatch::new(vec![vec![0.0, 0.0]], vec![vec![0.0, 0.0]]).unwrap();
        let grads = gradients(&net, &batch).unwrap();
        assert!(grads.weights[0].iter().all(|&g| g == 0.0));
        assert!(grads.biases[0].iter().all(|&g| g == 0.0));
        assert_eq!(gradient_check(&net, &batch).unwrap(), 0.0);
    }

    #[test]
    fn gradient_check_detects_sign_flip() {
        // Corrupt one analytic gradient entry by negation and confirm the
        // relative-error formula would flag it.
        let net = NetworkParameters::init_random(&[2, 3, 1], 3).unwrap();
        let batch = TrainingBatch::new(
            vec![vec![0.5, -0.8], vec![1.2, 0.1]],
            vec![vec![1.0], vec![-1.0]],
        )
        .unwrap();
        let grads = gradients(&net, &batch).unwrap();
        let honest = grads.weights[0][0];
        assert!(honest.abs() > 1e-6, "fixture needs a nonzero gradient");
        let corrupted = -honest;
        // The finite-difference value tracks the honest gradient.
        assert!(rel_err(corrupted, honest) > 0.1);
    }
}
