//! Small fully-connected network mapping wind parameters to reduced flux
//! coefficients. Written from scratch on purpose: the models are tiny
//! (two hidden layers, tens of units), so a dependency-free forward /
//! backward pass with Adam keeps the online path self-contained and easy
//! to audit.

use crate::flow::WindParameter;
use crate::scalar::Real;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("need at least an input and an output layer")]
    TooFewLayers,
    #[error("expected input dimension {expected}, got {got}")]
    InputDim { got: usize, expected: usize },
    #[error("expected output dimension {expected}, got {got}")]
    OutputDim { got: usize, expected: usize },
    #[error("empty training set")]
    EmptyTrainingSet,
    #[error("sample {index} has inconsistent dimensions")]
    BadSample { index: usize },
    #[error("loss weights must be positive and match the output dimension")]
    BadLossWeights,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    ReLU,
    Tanh,
}

impl Activation {
    fn apply<R: Real>(self, x: R) -> R {
        match self {
            Activation::ReLU => {
                if x > R::zero() {
                    x
                } else {
                    R::zero()
                }
            }
            Activation::Tanh => num_traits::Float::tanh(x),
        }
    }

    fn derivative<R: Real>(self, pre: R) -> R {
        match self {
            Activation::ReLU => {
                if pre > R::zero() {
                    R::one()
                } else {
                    R::zero()
                }
            }
            Activation::Tanh => {
                let t = num_traits::Float::tanh(pre);
                R::one() - t * t
            }
        }
    }
}

/// Maps (mu1, mu2) to the network input (mu1 cos mu2, mu1 sin mu2), which
/// removes the angular wrap-around from the regression problem.
pub fn encode_wind<R: Real>(w: &WindParameter<R>) -> [R; 2] {
    let (ux, uy) = w.velocity();
    [ux, uy]
}

#[derive(Debug, Clone, PartialEq)]
struct Layer<R> {
    w: DMatrix<R>,
    b: DVector<R>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<R> {
    layers: Vec<Layer<R>>,
    activation: Activation,
    /// Per-output standardization applied to targets during training.
    out_mean: DVector<R>,
    out_std: DVector<R>,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-8,
            batch_size: 32,
            epochs: 2000,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainHistory {
    /// (epoch, training loss, held-out loss if a test set was given).
    pub rows: Vec<(usize, f64, Option<f64>)>,
}

impl TrainHistory {
    pub fn csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,test_loss\n");
        for &(e, tr, te) in &self.rows {
            match te {
                Some(te) => out.push_str(&format!("{},{:e},{:e}\n", e, tr, te)),
                None => out.push_str(&format!("{},{:e},\n", e, tr)),
            }
        }
        out
    }
}

struct ForwardCache<R> {
    /// Post-activation per layer, index 0 = input.
    acts: Vec<DVector<R>>,
    /// Pre-activation per layer (same length as layers).
    pres: Vec<DVector<R>>,
}

impl<R: Real> Mlp<R> {
    /// Glorot-uniform initialization; the final layer is affine (no
    /// activation), the hidden layers use `activation`.
    pub fn new(sizes: &[usize], activation: Activation, seed: u64) -> Result<Self, MlpError> {
        if sizes.len() < 2 {
            return Err(MlpError::TooFewLayers);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(sizes.len() - 1);
        for k in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[k], sizes[k + 1]);
            let lim = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = DMatrix::from_fn(fan_out, fan_in, |_, _| R::of(rng.gen_range(-lim..lim)));
            let b = DVector::zeros(fan_out);
            layers.push(Layer { w, b });
        }
        let out = *sizes.last().unwrap();
        Ok(Mlp {
            layers,
            activation,
            out_mean: DVector::zeros(out),
            out_std: DVector::from_element(out, R::one()),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.nrows()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn forward_cached(&self, x: &DVector<R>) -> ForwardCache<R> {
        let mut acts = vec![x.clone()];
        let mut pres = Vec::with_capacity(self.layers.len());
        for (k, layer) in self.layers.iter().enumerate() {
            let pre = &layer.w * acts.last().unwrap() + &layer.b;
            let act = if k + 1 == self.layers.len() {
                pre.clone()
            } else {
                pre.map(|v| self.activation.apply(v))
            };
            pres.push(pre);
            acts.push(act);
        }
        ForwardCache { acts, pres }
    }

    /// Network output in standardized target space.
    fn forward_raw(&self, x: &DVector<R>) -> DVector<R> {
        self.forward_cached(x).acts.last().unwrap().clone()
    }

    /// Prediction in original target units.
    pub fn predict(&self, input: &[R]) -> Result<Vec<R>, MlpError> {
        if input.len() != self.input_dim() {
            return Err(MlpError::InputDim { got: input.len(), expected: self.input_dim() });
        }
        let y = self.forward_raw(&DVector::from_column_slice(input));
        Ok((0..self.output_dim())
            .map(|j| y[j] * self.out_std[j] + self.out_mean[j])
            .collect())
    }

    /// Weighted mean-squared error in standardized space over a set.
    fn loss_standardized(
        &self,
        xs: &[DVector<R>],
        ys: &[DVector<R>],
        loss_w: &DVector<R>,
    ) -> f64 {
        let mut total = R::zero();
        for (x, y) in xs.iter().zip(ys) {
            let out = self.forward_raw(x);
            for j in 0..y.len() {
                let d = out[j] - y[j];
                total += loss_w[j] * d * d;
            }
        }
        (total / R::of(xs.len() as f64)).to_f64()
    }

    /// Sum of squared weights, the quantity the decay penalty scales.
    pub fn weight_norm_sq(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.w.iter().map(|&w| (w * w).to_f64()).sum::<f64>())
            .sum()
    }

    /// Weighted MSE on samples plus the decay penalty `decay * sum(W^2)`.
    pub fn loss(
        &self,
        inputs: &[Vec<R>],
        targets: &[Vec<R>],
        loss_weights: &[R],
        decay: f64,
    ) -> Result<f64, MlpError> {
        let (xs, ys) = self.standardize_set(inputs, targets)?;
        let lw = self.check_loss_weights(loss_weights)?;
        Ok(self.loss_standardized(&xs, &ys, &lw) + decay * self.weight_norm_sq())
    }

    fn check_loss_weights(&self, loss_weights: &[R]) -> Result<DVector<R>, MlpError> {
        if loss_weights.len() != self.output_dim()
            || loss_weights.iter().any(|&w| !(w > R::zero()))
        {
            return Err(MlpError::BadLossWeights);
        }
        Ok(DVector::from_column_slice(loss_weights))
    }

    fn standardize_set(
        &self,
        inputs: &[Vec<R>],
        targets: &[Vec<R>],
    ) -> Result<(Vec<DVector<R>>, Vec<DVector<R>>), MlpError> {
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(MlpError::EmptyTrainingSet);
        }
        let mut xs = Vec::with_capacity(inputs.len());
        let mut ys = Vec::with_capacity(targets.len());
        for (i, (x, y)) in inputs.iter().zip(targets).enumerate() {
            if x.len() != self.input_dim() || y.len() != self.output_dim() {
                return Err(MlpError::BadSample { index: i });
            }
            xs.push(DVector::from_column_slice(x));
            ys.push(DVector::from_fn(y.len(), |j, _| {
                (y[j] - self.out_mean[j]) / self.out_std[j]
            }));
        }
        Ok((xs, ys))
    }

    /// Gradient of the weighted loss for one standardized sample,
    /// accumulated into `grads`.
    fn backward(
        &self,
        x: &DVector<R>,
        y: &DVector<R>,
        loss_w: &DVector<R>,
        grads: &mut [Layer<R>],
    ) {
        let cache = self.forward_cached(x);
        let out = cache.acts.last().unwrap();
        // d(loss)/d(out_j) = 2 w_j (out_j - y_j)
        let mut delta =
            DVector::from_fn(y.len(), |j, _| R::of(2.0) * loss_w[j] * (out[j] - y[j]));
        for k in (0..self.layers.len()).rev() {
            if k + 1 != self.layers.len() {
                for j in 0..delta.len() {
                    delta[j] *= self.activation.derivative(cache.pres[k][j]);
                }
            }
            grads[k].w += &delta * cache.acts[k].transpose();
            grads[k].b += &delta;
            if k > 0 {
                delta = self.layers[k].w.transpose() * delta;
            }
        }
    }

    /// Trains with Adam on seeded mini-batches. Targets are standardized
    /// internally; `loss_weights` weight the output components. History
    /// losses are reported in standardized space.
    pub fn train(
        &mut self,
        inputs: &[Vec<R>],
        targets: &[Vec<R>],
        loss_weights: &[R],
        test_inputs: Option<&[Vec<R>]>,
        test_targets: Option<&[Vec<R>]>,
        cfg: &TrainConfig,
    ) -> Result<TrainHistory, MlpError> {
        let lw = self.check_loss_weights(loss_weights)?;
        if inputs.is_empty() || inputs.len() != targets.len() {
            return Err(MlpError::EmptyTrainingSet);
        }
        // fit the output standardization on the training targets
        let n = targets.len();
        for j in 0..self.output_dim() {
            let mut mean = R::zero();
            for t in targets {
                if t.len() != self.output_dim() {
                    return Err(MlpError::BadSample { index: 0 });
                }
                mean += t[j];
            }
            mean /= R::of(n as f64);
            let mut var = R::zero();
            for t in targets {
                let d = t[j] - mean;
                var += d * d;
            }
            var /= R::of(n as f64);
            let std = num_traits::Float::sqrt(var);
            self.out_mean[j] = mean;
            self.out_std[j] = if std > R::of(1e-12) { std } else { R::one() };
        }

        let (xs, ys) = self.standardize_set(inputs, targets)?;
        let test_set = match (test_inputs, test_targets) {
            (Some(ti), Some(tt)) => Some(self.standardize_set(ti, tt)?),
            _ => None,
        };

        let mut m: Vec<Layer<R>> = self.zero_like();
        let mut v: Vec<Layer<R>> = self.zero_like();
        let (b1, b2, eps) = (R::of(0.9), R::of(0.999), R::of(1e-8));
        let lr = R::of(cfg.learning_rate);
        let wd = R::of(cfg.weight_decay);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..n).collect();
        let mut step = 0u64;
        let mut history = Vec::new();
        let batch = cfg.batch_size.max(1);

        for epoch in 0..cfg.epochs {
            // Fisher-Yates with the seeded stream
            for i in (1..order.len()).rev() {
                let j = rng.gen_range(0..=i);
                order.swap(i, j);
            }
            for chunk in order.chunks(batch) {
                let mut grads = self.zero_like();
                for &idx in chunk {
                    self.backward(&xs[idx], &ys[idx], &lw, &mut grads);
                }
                let scale = R::of(1.0 / chunk.len() as f64);
                step += 1;
                let bc1 = R::one() - num_traits::Float::powi(b1, step as i32);
                let bc2 = R::one() - num_traits::Float::powi(b2, step as i32);
                for k in 0..self.layers.len() {
                    let update = |p: &mut R, g: R, m: &mut R, v: &mut R| {
                        let g = g * scale + wd * *p;
                        *m = b1 * *m + (R::one() - b1) * g;
                        *v = b2 * *v + (R::one() - b2) * g * g;
                        let mh = *m / bc1;
                        let vh = *v / bc2;
                        *p -= lr * mh / (num_traits::Float::sqrt(vh) + eps);
                    };
                    for (i, g) in grads[k].w.iter().enumerate() {
                        update(
                            &mut self.layers[k].w.as_mut_slice()[i],
                            *g,
                            &mut m[k].w.as_mut_slice()[i],
                            &mut v[k].w.as_mut_slice()[i],
                        );
                    }
                    for (i, g) in grads[k].b.iter().enumerate() {
                        update(
                            &mut self.layers[k].b.as_mut_slice()[i],
                            *g,
                            &mut m[k].b.as_mut_slice()[i],
                            &mut v[k].b.as_mut_slice()[i],
                        );
                    }
                }
            }
            let record = epoch % 10 == 0 || epoch + 1 == cfg.epochs;
            if record {
                let tr = self.loss_standardized(&xs, &ys, &lw);
                assert!(tr.is_finite(), "training diverged at epoch {epoch} (loss {tr})");
                let te = test_set
                    .as_ref()
                    .map(|(txs, tys)| self.loss_standardized(txs, tys, &lw));
                history.push((epoch, tr, te));
            }
        }
        Ok(TrainHistory { rows: history })
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Input size followed by each layer's output size.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.w.nrows()));
        s
    }

    /// Matrix blocks for persistence: per layer the weight matrix and the
    /// bias as a column, then the output mean and std columns.
    pub fn export_blocks(&self) -> Vec<DMatrix<R>> {
        let mut blocks = Vec::with_capacity(2 * self.layers.len() + 2);
        for l in &self.layers {
            blocks.push(l.w.clone());
            blocks.push(DMatrix::from_column_slice(l.b.len(), 1, l.b.as_slice()));
        }
        blocks.push(DMatrix::from_column_slice(self.out_mean.len(), 1, self.out_mean.as_slice()));
        blocks.push(DMatrix::from_column_slice(self.out_std.len(), 1, self.out_std.as_slice()));
        blocks
    }

    /// Inverse of `export_blocks`.
    pub fn from_blocks(activation: Activation, blocks: &[DMatrix<R>]) -> Result<Self, MlpError> {
        if blocks.len() < 4 || blocks.len() % 2 != 0 {
            return Err(MlpError::TooFewLayers);
        }
        let n_layers = (blocks.len() - 2) / 2;
        let mut layers: Vec<Layer<R>> = Vec::with_capacity(n_layers);
        for k in 0..n_layers {
            let w = blocks[2 * k].clone();
            let bcol = &blocks[2 * k + 1];
            if bcol.ncols() != 1 || bcol.nrows() != w.nrows() {
                return Err(MlpError::BadSample { index: k });
            }
            if k > 0 && w.ncols() != layers[k - 1].w.nrows() {
                return Err(MlpError::BadSample { index: k });
            }
            let b = DVector::from_column_slice(bcol.as_slice());
            layers.push(Layer { w, b });
        }
        let out = layers.last().unwrap().w.nrows();
        let mean = &blocks[blocks.len() - 2];
        let std = &blocks[blocks.len() - 1];
        if mean.nrows() != out || std.nrows() != out || mean.ncols() != 1 || std.ncols() != 1 {
            return Err(MlpError::OutputDim { got: mean.nrows(), expected: out });
        }
        Ok(Mlp {
            layers,
            activation,
            out_mean: DVector::from_column_slice(mean.as_slice()),
            out_std: DVector::from_column_slice(std.as_slice()),
        })
    }

    fn zero_like(&self) -> Vec<Layer<R>> {
        self.layers
            .iter()
            .map(|l| Layer {
                w: DMatrix::zeros(l.w.nrows(), l.w.ncols()),
                b: DVector::zeros(l.b.len()),
            })
            .collect()
    }

    /// Central-difference check of the analytic gradient on a single
    /// sample. Parameters whose perturbation crosses a ReLU kink are
    /// skipped; returns (max relative error, number of parameters
    /// actually checked).
    pub fn gradient_check(
        &self,
        input: &[R],
        target: &[R],
        loss_weights: &[R],
        step_size: f64,
        max_checks: usize,
    ) -> Result<(f64, usize), MlpError> {
        if input.len() != self.input_dim() {
            return Err(MlpError::InputDim { got: input.len(), expected: self.input_dim() });
        }
        if target.len() != self.output_dim() {
            return Err(MlpError::OutputDim { got: target.len(), expected: self.output_dim() });
        }
        let lw = self.check_loss_weights(loss_weights)?;
        let x = DVector::from_column_slice(input);
        let y = DVector::from_column_slice(target);
        let mut grads = self.zero_like();
        self.backward(&x, &y, &lw, &mut grads);

        let h = R::of(step_size);
        let kink_margin = R::of(step_size * 10.0);
        let near_kink = |net: &Mlp<R>| -> bool {
            if net.activation != Activation::ReLU {
                return false;
            }
            let cache = net.forward_cached(&x);
            cache.pres[..net.layers.len() - 1]
                .iter()
                .any(|p| p.iter().any(|&v| num_traits::Float::abs(v) < kink_margin))
        };

        let eval = |net: &Mlp<R>| -> R {
            let out = net.forward_raw(&x);
            let mut s = R::zero();
            for j in 0..y.len() {
                let d = out[j] - y[j];
                s += lw[j] * d * d;
            }
            s
        };

        let mut max_rel = 0.0f64;
        let mut checked = 0usize;
        'outer: for k in 0..self.layers.len() {
            let nw = self.layers[k].w.len();
            let nb = self.layers[k].b.len();
            for i in 0..nw + nb {
                if checked >= max_checks {
                    break 'outer;
                }
                let mut plus = self.clone();
                let mut minus = self.clone();
                let analytic;
                if i < nw {
                    plus.layers[k].w.as_mut_slice()[i] += h;
                    minus.layers[k].w.as_mut_slice()[i] -= h;
                    analytic = grads[k].w.as_slice()[i];
                } else {
                    plus.layers[k].b.as_mut_slice()[i - nw] += h;
                    minus.layers[k].b.as_mut_slice()[i - nw] -= h;
                    analytic = grads[k].b.as_slice()[i - nw];
                }
                if near_kink(&plus) || near_kink(&minus) {
                    continue;
                }
                let numeric = (eval(&plus) - eval(&minus)) / (R::of(2.0) * h);
                let denom =
                    num_traits::Float::max(num_traits::Float::abs(numeric), R::of(1e-8));
                let rel = (num_traits::Float::abs(numeric - analytic) / denom).to_f64();
                max_rel = max_rel.max(rel);
                checked += 1;
            }
        }
        Ok((max_rel, checked))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_net() -> Mlp<f64> {
        Mlp::new(&[2, 5, 3], Activation::Tanh, 11).unwrap()
    }

    #[test]
    fn wind_encoding_matches_velocity_components() {
        let w = WindParameter::new(3.0_f64, std::f64::consts::FRAC_PI_3);
        let [a, b] = encode_wind(&w);
        assert!((a - 1.5).abs() < 1e-12);
        assert!((b - 3.0 * (3.0f64.sqrt() / 2.0)).abs() < 1e-12);
    }

    #[test]
    fn forward_matches_hand_rolled_evaluation() {
        // independent second evaluator over the same parameters
        let net = tiny_net();
        let x = [0.3, -0.7];
        let got = net.predict(&x).unwrap();
        let mut a = vec![x[0], x[1]];
        for (k, l) in net.layers.iter().enumerate() {
            let mut next = vec![0.0; l.b.len()];
            for r in 0..l.w.nrows() {
                let mut s = l.b[r];
                for c in 0..l.w.ncols() {
                    s += l.w[(r, c)] * a[c];
                }
                next[r] = if k + 1 == net.layers.len() { s } else { s.tanh() };
            }
            a = next;
        }
        for (g, o) in got.iter().zip(&a) {
            assert!((g - o).abs() < 1e-14);
        }
    }

    #[test]
    fn loss_matches_hand_computation() {
        let net = tiny_net();
        let input = vec![vec![0.1, 0.2]];
        let target = vec![vec![1.0, -1.0, 0.5]];
        let lw = [1.0, 0.5, 0.25];
        let out = net.predict(&input[0]).unwrap();
        let decay = 1e-3;
        let expect: f64 = out
            .iter()
            .zip(&target[0])
            .zip(&lw)
            .map(|((o, t), w)| w * (o - t) * (o - t))
            .sum::<f64>()
            + decay * net.weight_norm_sq();
        let got = net.loss(&input, &target, &lw, decay).unwrap();
        assert!((got - expect).abs() < 1e-12 * expect.abs().max(1.0));
    }

    #[test]
    fn gradient_matches_central_differences() {
        for act in [Activation::Tanh, Activation::ReLU] {
            let net = Mlp::<f64>::new(&[2, 8, 8, 3], act, 21).unwrap();
            let (max_rel, checked) = net
                .gradient_check(&[0.37, -0.81], &[0.2, -0.4, 0.9], &[1.0, 0.7, 0.4], 1e-6, 200)
                .unwrap();
            assert!(checked >= 50, "only {checked} parameters checked");
            assert!(max_rel <= 1e-5, "max rel error {max_rel:e} ({act:?})");
        }
    }

    #[test]
    fn memorizes_a_small_dataset() {
        let inputs: Vec<Vec<f64>> = vec![
            vec![0.0, 0.0],
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![1.0, 1.0],
        ];
        let targets: Vec<Vec<f64>> = vec![vec![0.1], vec![0.9], vec![0.8], vec![0.3]];
        let mut net = Mlp::new(&[2, 16, 16, 1], Activation::Tanh, 3).unwrap();
        let cfg = TrainConfig { epochs: 3000, batch_size: 4, ..Default::default() };
        net.train(&inputs, &targets, &[1.0], None, None, &cfg).unwrap();
        for (x, t) in inputs.iter().zip(&targets) {
            let p = net.predict(x).unwrap();
            assert!((p[0] - t[0]).abs() < 1e-2, "{} vs {}", p[0], t[0]);
        }
    }

    #[test]
    fn recovers_a_linear_teacher() {
        // targets y = A x + b should be learned to high accuracy
        let a = [[1.5, -0.5], [0.3, 2.0]];
        let b = [0.2, -1.0];
        let mut inputs = Vec::new();
        let mut targets = Vec::new();
        for i in 0..12 {
            for j in 0..12 {
                let x = [i as f64 / 11.0 - 0.5, j as f64 / 11.0 - 0.5];
                let y = [
                    a[0][0] * x[0] + a[0][1] * x[1] + b[0],
                    a[1][0] * x[0] + a[1][1] * x[1] + b[1],
                ];
                inputs.push(x.to_vec());
                targets.push(y.to_vec());
            }
        }
        let mut net = Mlp::new(&[2, 12, 2], Activation::Tanh, 5).unwrap();
        let cfg = TrainConfig { epochs: 1500, batch_size: 36, ..Default::default() };
        let hist = net
            .train(&inputs, &targets, &[1.0, 0.5], Some(&inputs), Some(&targets), &cfg)
            .unwrap();
        let p = net.predict(&[0.25, -0.25]).unwrap();
        let y = [
            a[0][0] * 0.25 - a[0][1] * 0.25 + b[0],
            a[1][0] * 0.25 - a[1][1] * 0.25 + b[1],
        ];
        assert!((p[0] - y[0]).abs() < 5e-2 && (p[1] - y[1]).abs() < 5e-2);
        // recorded losses decrease overall
        let first = hist.rows.first().unwrap().1;
        let last = hist.rows.last().unwrap().1;
        assert!(last < first * 0.01, "{last} vs {first}");
        assert!(hist.csv().starts_with("epoch,"));
    }

    #[test]
    fn training_is_deterministic() {
        let inputs: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64 * 0.37).sin(), (i as f64 * 0.61).cos()])
            .collect();
        let targets: Vec<Vec<f64>> =
            inputs.iter().map(|x| vec![x[0] * x[1], x[0] - x[1]]).collect();
        let cfg = TrainConfig { epochs: 50, batch_size: 8, ..Default::default() };
        let run = || {
            let mut net = Mlp::new(&[2, 6, 2], Activation::Tanh, 9).unwrap();
            net.train(&inputs, &targets, &[1.0, 1.0], None, None, &cfg).unwrap();
            net
        };
        let (a, b) = (run(), run());
        assert_eq!(a, b);
        assert_eq!(a.predict(&[0.5, 0.5]).unwrap(), b.predict(&[0.5, 0.5]).unwrap());
    }

    #[test]
    fn rejects_bad_shapes() {
        let net = tiny_net();
        assert!(net.predict(&[1.0]).is_err());
        assert!(net.loss(&[], &[], &[1.0, 1.0, 1.0], 0.0).is_err());
        assert!(net.loss(&[vec![0.0, 0.0]], &[vec![0.0; 3]], &[1.0, -1.0, 1.0], 0.0).is_err());
        assert!(Mlp::<f64>::new(&[3], Activation::ReLU, 0).is_err());
    }
}
