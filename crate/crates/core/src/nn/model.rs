use ndarray::{Array2, Array4, ArrayView1, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::adam::AdamState;
use super::layers::{
    bn_backward, bn_forward_infer, bn_forward_train, conv_backward, conv_forward, prelu_backward,
    prelu_forward, BnCache, BN_MOMENTUM,
};
use super::{DenoiserConfig, Scalar};
use crate::error::{Error, Result};

/// A named dense tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            name,
            shape,
            data: vec![T::zero(); len],
        }
    }

    fn filled(name: String, shape: Vec<usize>, value: T) -> Self {
        let len = shape.iter().product();
        Self {
            name,
            shape,
            data: vec![value; len],
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            name: self.name.clone(),
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().unwrap()).unwrap())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch normalization.
    Train,
    /// Running statistics in batch normalization.
    Infer,
}

const PARAMS_PER_UNIT: usize = 7;
const BUFFERS_PER_UNIT: usize = 4;
const PRELU_INIT: f64 = 0.25;

// offsets inside a unit's parameter block
const CONV1: usize = 0;
const BN1_GAMMA: usize = 1;
const BN1_BETA: usize = 2;
const PRELU: usize = 3;
const CONV2: usize = 4;
const BN2_GAMMA: usize = 5;
const BN2_BETA: usize = 6;

// offsets inside a unit's buffer block
const BN1_MEAN: usize = 0;
const BN1_VAR: usize = 1;
const BN2_MEAN: usize = 2;
const BN2_VAR: usize = 3;

type Layout = Vec<(String, Vec<usize>)>;

/// Parameter and buffer names with shapes, fully determined by the config.
pub(crate) fn layout(config: &DenoiserConfig) -> (Layout, Layout) {
    let f = config.feature_dim;
    let mut params = vec![
        ("head.weight".to_string(), vec![f, 1, 3, 3]),
        ("head.bias".to_string(), vec![f]),
    ];
    let mut buffers = Vec::new();
    for u in 0..config.n_residual_units {
        let p = |s: &str| format!("units.{u}.{s}");
        params.extend([
            (p("conv1.weight"), vec![f, f, 3, 3]),
            (p("bn1.gamma"), vec![f]),
            (p("bn1.beta"), vec![f]),
            (p("prelu.slope"), vec![1]),
            (p("conv2.weight"), vec![f, f, 3, 3]),
            (p("bn2.gamma"), vec![f]),
            (p("bn2.beta"), vec![f]),
        ]);
        buffers.extend([
            (p("bn1.running_mean"), vec![f]),
            (p("bn1.running_var"), vec![f]),
            (p("bn2.running_mean"), vec![f]),
            (p("bn2.running_var"), vec![f]),
        ]);
    }
    params.extend([
        ("tail.weight".to_string(), vec![1, f, 3, 3]),
        ("tail.bias".to_string(), vec![1]),
    ]);
    (params, buffers)
}

/// Residual CNN denoiser with element type `T`, including its optimizer
/// state.
#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserNet<T> {
    pub config: DenoiserConfig,
    pub params: Vec<Tensor<T>>,
    pub buffers: Vec<Tensor<T>>,
    pub adam: AdamState<T>,
}

struct UnitCache<T> {
    input: Array4<T>,
    bn1: BnCache<T>,
    pre_act: Array4<T>,
    act: Array4<T>,
    bn2: BnCache<T>,
}

/// Activations saved by a training-mode forward pass.
pub struct ForwardCache<T> {
    input: Array4<T>,
    units: Vec<UnitCache<T>>,
    stack_out: Array4<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Whether each PReLU input was positive, unit by unit in row-major
    /// order. Useful for telling when a perturbation crosses a kink.
    pub fn activation_pattern(&self) -> Vec<bool> {
        self.units
            .iter()
            .flat_map(|u| u.pre_act.iter().map(|v| *v > T::zero()))
            .collect()
    }
}

impl<T: Scalar> DenoiserNet<T> {
    /// He-normal convolution weights, zero biases, unit BN scale, PReLU slope
    /// 0.25, and a zero tail convolution so that training starts from the
    /// identity map when the global skip is on. Deterministic in
    /// `config.seed`.
    pub fn new(config: DenoiserConfig) -> Result<Self> {
        config.validate()?;
        let (param_layout, buffer_layout) = layout(&config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let params: Vec<Tensor<T>> = param_layout
            .into_iter()
            .map(|(name, shape)| {
                if name.ends_with(".weight") && !name.starts_with("tail.") {
                    let fan_in = (shape[1] * 9) as f64;
                    let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
                    let len = shape.iter().product();
                    let data = (0..len)
                        .map(|_| T::from_f64(dist.sample(&mut rng)).unwrap())
                        .collect();
                    Tensor { name, shape, data }
                } else if name.ends_with(".gamma") {
                    Tensor::filled(name, shape, T::one())
                } else if name.ends_with(".slope") {
                    Tensor::filled(name, shape, T::from_f64(PRELU_INIT).unwrap())
                } else {
                    Tensor::zeros(name, shape)
                }
            })
            .collect();
        let buffers = buffer_layout
            .into_iter()
            .map(|(name, shape)| {
                if name.ends_with("running_var") {
                    Tensor::filled(name, shape, T::one())
                } else {
                    Tensor::zeros(name, shape)
                }
            })
            .collect();
        let adam = AdamState::new(&params);
        Ok(Self {
            config,
            params,
            buffers,
            adam,
        })
    }

    /// Network whose residual-unit convolutions are also zero.
    pub fn zero_residual(config: DenoiserConfig) -> Result<Self> {
        let mut net = Self::new(config)?;
        for t in net.params.iter_mut() {
            if t.name.starts_with("units.") && t.name.ends_with(".weight") {
                t.data.iter_mut().for_each(|v| *v = T::zero());
            }
        }
        Ok(net)
    }

    /// Replaces the tail convolution with He-normal weights drawn from
    /// `seed`.
    pub fn randomize_tail(&mut self, seed: u64) {
        let idx = self.tail_index();
        let fan_in = (self.config.feature_dim * 9) as f64;
        let dist = Normal::new(0.0, (2.0 / fan_in).sqrt()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in self.params[idx].data.iter_mut() {
            *v = T::from_f64(dist.sample(&mut rng)).unwrap();
        }
    }

    /// Converts every tensor (parameters, buffers, optimizer moments) to `U`.
    pub fn cast<U: Scalar>(&self) -> DenoiserNet<U> {
        DenoiserNet {
            config: self.config.clone(),
            params: self.params.iter().map(Tensor::cast).collect(),
            buffers: self.buffers.iter().map(Tensor::cast).collect(),
            adam: self.adam.cast(),
        }
    }

    pub fn n_parameters(&self) -> usize {
        self.params.iter().map(|t| t.data.len()).sum()
    }

    /// Checks tensor names, shapes and finiteness against the config.
    pub fn check_consistency(&self) -> Result<()> {
        let (param_layout, buffer_layout) = layout(&self.config);
        let check = |kind: &str, tensors: &[Tensor<T>], expected: &Layout| {
            if tensors.len() != expected.len() {
                return Err(Error::ModelMismatch(format!(
                    "{} {kind} tensors, config implies {}",
                    tensors.len(),
                    expected.len()
                )));
            }
            for (t, (name, shape)) in tensors.iter().zip(expected) {
                if &t.name != name || &t.shape != shape {
                    return Err(Error::ModelMismatch(format!(
                        "{kind} {} {:?} where config implies {name} {shape:?}",
                        t.name, t.shape
                    )));
                }
                if t.data.len() != shape.iter().product::<usize>() {
                    return Err(Error::ModelMismatch(format!("{} has wrong length", t.name)));
                }
                if t.data.iter().any(|v| !v.is_finite()) {
                    return Err(Error::ModelMismatch(format!("{} is not finite", t.name)));
                }
            }
            Ok(())
        };
        check("parameter", &self.params, &param_layout)?;
        check("buffer", &self.buffers, &buffer_layout)?;
        for t in self.buffers.iter().filter(|t| t.name.ends_with("running_var")) {
            if t.data.iter().any(|v| *v <= T::zero()) {
                return Err(Error::ModelMismatch(format!(
                    "{} has non-positive variance",
                    t.name
                )));
            }
        }
        self.adam.check_against(&self.params)
    }

    fn unit_param(&self, unit: usize, offset: usize) -> usize {
        2 + PARAMS_PER_UNIT * unit + offset
    }

    fn unit_buffer(&self, unit: usize, offset: usize) -> usize {
        BUFFERS_PER_UNIT * unit + offset
    }

    fn tail_index(&self) -> usize {
        2 + PARAMS_PER_UNIT * self.config.n_residual_units
    }

    fn conv_weight(&self, idx: usize) -> ArrayView2<'_, T> {
        let t = &self.params[idx];
        ArrayView2::from_shape((t.shape[0], t.shape[1] * 9), &t.data).expect("layout checked")
    }

    fn vector(&self, idx: usize) -> ArrayView1<'_, T> {
        ArrayView1::from(&self.params[idx].data)
    }

    fn buffer(&self, idx: usize) -> ArrayView1<'_, T> {
        ArrayView1::from(&self.buffers[idx].data)
    }

    fn slope(&self, unit: usize) -> T {
        self.params[self.unit_param(unit, PRELU)].data[0]
    }

    fn check_input(&self, x: &Array4<T>) -> Result<()> {
        let (_, c, h, w) = x.dim();
        if c != 1 {
            return Err(Error::ModelMismatch(format!(
                "expected a single input channel, got {c}"
            )));
        }
        if h < 1 || w < 2 {
            return Err(Error::ModelMismatch(format!("input {h}x{w} too small")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite network input".into()));
        }
        Ok(())
    }

    /// Forward pass of a `(batch, 1, H, W)` tensor. Output has the input's
    /// shape.
    pub fn forward(&self, x: &Array4<T>, mode: Mode) -> Result<Array4<T>> {
        match mode {
            Mode::Train => self.forward_train(x).map(|(y, _)| y),
            Mode::Infer => self.forward_infer(x),
        }
    }

    fn forward_infer(&self, x: &Array4<T>) -> Result<Array4<T>> {
        self.check_input(x)?;
        let mut h = conv_forward(x, self.conv_weight(0), Some(self.vector(1)));
        for u in 0..self.config.n_residual_units {
            let p = |o| self.unit_param(u, o);
            let b = |o| self.unit_buffer(u, o);
            let mut branch = conv_forward(&h, self.conv_weight(p(CONV1)), None);
            branch = bn_forward_infer(
                &branch,
                self.vector(p(BN1_GAMMA)),
                self.vector(p(BN1_BETA)),
                self.buffer(b(BN1_MEAN)),
                self.buffer(b(BN1_VAR)),
            );
            branch = prelu_forward(&branch, self.slope(u));
            branch = conv_forward(&branch, self.conv_weight(p(CONV2)), None);
            branch = bn_forward_infer(
                &branch,
                self.vector(p(BN2_GAMMA)),
                self.vector(p(BN2_BETA)),
                self.buffer(b(BN2_MEAN)),
                self.buffer(b(BN2_VAR)),
            );
            h += &branch;
        }
        let tail = self.tail_index();
        let mut y = conv_forward(&h, self.conv_weight(tail), Some(self.vector(tail + 1)));
        if self.config.global_skip {
            y += x;
        }
        Ok(y)
    }

    /// Training-mode forward pass keeping what the backward pass needs.
    pub fn forward_train(&self, x: &Array4<T>) -> Result<(Array4<T>, ForwardCache<T>)> {
        self.check_input(x)?;
        let mut h = conv_forward(x, self.conv_weight(0), Some(self.vector(1)));
        let mut units = Vec::with_capacity(self.config.n_residual_units);
        for u in 0..self.config.n_residual_units {
            let p = |o| self.unit_param(u, o);
            let c1 = conv_forward(&h, self.conv_weight(p(CONV1)), None);
            let (pre_act, bn1) =
                bn_forward_train(&c1, self.vector(p(BN1_GAMMA)), self.vector(p(BN1_BETA)));
            drop(c1);
            let act = prelu_forward(&pre_act, self.slope(u));
            let c2 = conv_forward(&act, self.conv_weight(p(CONV2)), None);
            let (branch, bn2) =
                bn_forward_train(&c2, self.vector(p(BN2_GAMMA)), self.vector(p(BN2_BETA)));
            let out = &h + &branch;
            units.push(UnitCache {
                input: h,
                bn1,
                pre_act,
                act,
                bn2,
            });
            h = out;
        }
        let tail = self.tail_index();
        let mut y = conv_forward(&h, self.conv_weight(tail), Some(self.vector(tail + 1)));
        if self.config.global_skip {
            y += x;
        }
        Ok((
            y,
            ForwardCache {
                input: x.clone(),
                units,
                stack_out: h,
            },
        ))
    }

    /// Gradients of the loss with respect to every parameter, in parameter
    /// order, given `dy = ∂loss/∂output`.
    pub fn backward(&self, cache: &ForwardCache<T>, dy: &Array4<T>) -> Vec<Vec<T>> {
        let mut grads: Vec<Vec<T>> = self.params.iter().map(|t| vec![T::zero(); t.data.len()]).collect();
        let tail = self.tail_index();
        let g = conv_backward(&cache.stack_out, self.conv_weight(tail), dy, true);
        grads[tail] = g.dweight.into_raw_vec_and_offset().0;
        grads[tail + 1] = g.dbias.to_vec();
        let mut dh = g.dx.expect("requested");

        for u in (0..self.config.n_residual_units).rev() {
            let c = &cache.units[u];
            let p = |o| self.unit_param(u, o);
            let b2 = bn_backward(&dh, self.vector(p(BN2_GAMMA)), &c.bn2);
            grads[p(BN2_GAMMA)] = b2.dgamma.to_vec();
            grads[p(BN2_BETA)] = b2.dbeta.to_vec();
            let c2 = conv_backward(&c.act, self.conv_weight(p(CONV2)), &b2.dx, true);
            grads[p(CONV2)] = c2.dweight.into_raw_vec_and_offset().0;
            let (dpre, dslope) = prelu_backward(&c.pre_act, self.slope(u), &c2.dx.expect("requested"));
            grads[p(PRELU)] = vec![dslope];
            let b1 = bn_backward(&dpre, self.vector(p(BN1_GAMMA)), &c.bn1);
            grads[p(BN1_GAMMA)] = b1.dgamma.to_vec();
            grads[p(BN1_BETA)] = b1.dbeta.to_vec();
            let c1 = conv_backward(&c.input, self.conv_weight(p(CONV1)), &b1.dx, true);
            grads[p(CONV1)] = c1.dweight.into_raw_vec_and_offset().0;
            dh += &c1.dx.expect("requested");
        }

        let head = conv_backward(&cache.input, self.conv_weight(0), &dh, false);
        grads[0] = head.dweight.into_raw_vec_and_offset().0;
        grads[1] = head.dbias.to_vec();
        grads
    }

    /// Folds the batch statistics of a training pass into the running
    /// estimates.
    pub fn update_running_stats(&mut self, cache: &ForwardCache<T>) {
        let (b, _, h, w) = cache.input.dim();
        let count = (b * h * w) as f64;
        let unbias = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        let m = T::from_f64(BN_MOMENTUM).unwrap();
        let keep = T::one() - m;
        let unbias = T::from_f64(unbias).unwrap();
        for (u, c) in cache.units.iter().enumerate() {
            for (bn, mean_off, var_off) in [(&c.bn1, BN1_MEAN, BN1_VAR), (&c.bn2, BN2_MEAN, BN2_VAR)] {
                let mi = self.unit_buffer(u, mean_off);
                let vi = self.unit_buffer(u, var_off);
                for (r, &bm) in self.buffers[mi].data.iter_mut().zip(bn.batch_mean.iter()) {
                    *r = keep * *r + m * bm;
                }
                for (r, &bv) in self.buffers[vi].data.iter_mut().zip(bn.batch_var.iter()) {
                    *r = keep * *r + m * bv * unbias;
                }
            }
        }
    }

    /// One optimization step on a batch: forward in training mode, loss,
    /// backward, Adam update, running-statistics update. Returns the loss
    /// before the update.
    pub fn backward_and_step(&mut self, input: &Array4<T>, target: &Array4<T>) -> Result<f64> {
        let (pred, cache) = self.forward_train(input)?;
        let value = loss(&pred, target)?;
        if !value.is_finite() {
            return Err(Error::Divergence(format!("loss became {value}")));
        }
        let dy = loss_gradient(&pred, target);
        let grads = self.backward(&cache, &dy);
        if let Some(t) = grads
            .iter()
            .zip(&self.params)
            .find(|(g, _)| g.iter().any(|v| !v.is_finite()))
            .map(|(_, t)| t)
        {
            return Err(Error::Divergence(format!(
                "non-finite gradient for {}",
                t.name
            )));
        }
        let lr = T::from_f64(self.config.learning_rate).unwrap();
        self.adam.step(&mut self.params, &grads, lr);
        self.update_running_stats(&cache);
        Ok(value)
    }
}

/// Sum of squared differences over pixels, averaged over the batch.
pub fn loss<T: Scalar>(pred: &Array4<T>, target: &Array4<T>) -> Result<f64> {
    if pred.dim() != target.dim() {
        return Err(Error::InvalidArgument(format!(
            "loss shapes differ: {:?} vs {:?}",
            pred.dim(),
            target.dim()
        )));
    }
    let batch = pred.len_of(Axis(0)).max(1) as f64;
    let sum: f64 = pred
        .iter()
        .zip(target.iter())
        .map(|(p, t)| {
            let d = p.to_f64().unwrap() - t.to_f64().unwrap();
            d * d
        })
        .sum();
    Ok(sum / batch)
}

/// Gradient of [`loss`] with respect to `pred`.
pub fn loss_gradient<T: Scalar>(pred: &Array4<T>, target: &Array4<T>) -> Array4<T> {
    let scale = T::from_f64(2.0 / pred.len_of(Axis(0)) as f64).unwrap();
    let mut d = pred - target;
    d.mapv_inplace(|v| v * scale);
    d
}

/// Stacks equally shaped 2D patches into a `(batch, 1, H, W)` tensor.
pub fn batch_from_patches<T: Scalar>(patches: &[Array2<f64>]) -> Result<Array4<T>> {
    let first = patches
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let (h, w) = first.dim();
    if patches.iter().any(|p| p.dim() != (h, w)) {
        return Err(Error::InvalidArgument("patches differ in shape".into()));
    }
    let data = patches
        .iter()
        .flat_map(|p| p.iter().map(|&v| T::from_f64(v).unwrap()))
        .collect();
    Ok(Array4::from_shape_vec((patches.len(), 1, h, w), data).expect("sized"))
}

/// Splits a `(batch, 1, H, W)` tensor back into 2D patches.
pub fn patches_from_batch<T: Scalar>(batch: &Array4<T>) -> Vec<Array2<f64>> {
    batch
        .axis_iter(Axis(0))
        .map(|s| s.index_axis(Axis(0), 0).mapv(|v| v.to_f64().unwrap()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn tiny(seed: u64) -> DenoiserConfig {
        DenoiserConfig {
            feature_dim: 8,
            n_residual_units: 2,
            patch_size: 8,
            batch_size: 2,
            seed,
            ..DenoiserConfig::default()
        }
    }

    fn random_batch(seed: u64, dim: (usize, usize, usize, usize)) -> Array4<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array4::from_shape_fn(dim, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn layout_names_and_counts() {
        let net = DenoiserNet::<f32>::new(tiny(0)).unwrap();
        assert_eq!(net.params.len(), 2 + 7 * 2 + 2);
        assert_eq!(net.buffers.len(), 8);
        assert_eq!(net.params[0].name, "head.weight");
        assert_eq!(net.params[2].name, "units.0.conv1.weight");
        assert_eq!(net.params[5].name, "units.0.prelu.slope");
        assert_eq!(net.params.last().unwrap().name, "tail.bias");
        assert_eq!(net.n_parameters(), 80 + 2 * (2 * 576 + 4 * 8 + 1) + 73);
        net.check_consistency().unwrap();
    }

    #[test]
    fn zero_residual_is_identity() {
        let net = DenoiserNet::<f32>::zero_residual(tiny(1)).unwrap();
        let x = random_batch(2, (2, 1, 9, 11)).mapv(|v| v as f32);
        for mode in [Mode::Train, Mode::Infer] {
            assert_eq!(net.forward(&x, mode).unwrap(), x);
        }
    }

    #[test]
    fn fresh_network_starts_at_identity() {
        let net = DenoiserNet::<f64>::new(tiny(30)).unwrap();
        let x = random_batch(31, (1, 1, 10, 10));
        assert_eq!(net.forward(&x, Mode::Infer).unwrap(), x);
        let no_skip = DenoiserNet::<f64>::new(DenoiserConfig {
            global_skip: false,
            ..tiny(30)
        })
        .unwrap();
        assert!(no_skip.forward(&x, Mode::Infer).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_shape_matches_input() {
        let net = DenoiserNet::<f64>::new(tiny(3)).unwrap();
        for dim in [(1, 1, 8, 8), (3, 1, 13, 9), (1, 1, 20, 31)] {
            let x = random_batch(4, dim);
            assert_eq!(net.forward(&x, Mode::Infer).unwrap().dim(), dim);
            assert_eq!(net.forward(&x, Mode::Train).unwrap().dim(), dim);
        }
    }

    #[test]
    fn rejects_bad_input() {
        let net = DenoiserNet::<f64>::new(tiny(3)).unwrap();
        let two_channels = Array4::<f64>::zeros((1, 2, 8, 8));
        assert!(net.forward(&two_channels, Mode::Infer).is_err());
        let mut nan = Array4::<f64>::zeros((1, 1, 8, 8));
        nan[(0, 0, 3, 3)] = f64::NAN;
        assert!(net.forward(&nan, Mode::Infer).is_err());
    }

    #[test]
    fn loss_values() {
        let a = random_batch(5, (2, 1, 4, 4));
        assert_eq!(loss(&a, &a).unwrap(), 0.0);
        let one = Array4::<f64>::zeros((1, 1, 6, 5));
        let shifted = one.mapv(|v| v + 0.1);
        assert!((loss(&one, &shifted).unwrap() - 0.01 * 30.0).abs() < 1e-12);
        assert!(loss(&a, &one).is_err());

        // naive double loop oracle
        let b = random_batch(6, (2, 1, 4, 4));
        let mut sum = 0.0;
        for n in 0..2 {
            for i in 0..4 {
                for j in 0..4 {
                    let d = a[(n, 0, i, j)] - b[(n, 0, i, j)];
                    sum += d * d;
                }
            }
        }
        assert!((loss(&a, &b).unwrap() - sum / 2.0).abs() < 1e-10);
    }

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let config = DenoiserConfig {
            learning_rate: 0.0,
            ..tiny(7)
        };
        let mut net = DenoiserNet::<f32>::new(config).unwrap();
        let before = net.params.clone();
        let x = random_batch(8, (2, 1, 8, 8)).mapv(|v| v as f32);
        let y = random_batch(9, (2, 1, 8, 8)).mapv(|v| v as f32);
        net.backward_and_step(&x, &y).unwrap();
        assert_eq!(net.params, before);
        assert_eq!(net.adam.step_count, 1);
    }

    #[test]
    fn steps_are_deterministic() {
        let x = random_batch(8, (2, 1, 8, 8)).mapv(|v| v as f32);
        let y = random_batch(9, (2, 1, 8, 8)).mapv(|v| v as f32);
        let run = || {
            let mut net = DenoiserNet::<f32>::new(tiny(10)).unwrap();
            for _ in 0..3 {
                net.backward_and_step(&x, &y).unwrap();
            }
            net
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn infer_is_repeatable() {
        let net = DenoiserNet::<f32>::new(tiny(11)).unwrap();
        let x = random_batch(12, (1, 1, 16, 16)).mapv(|v| v as f32);
        assert_eq!(
            net.forward(&x, Mode::Infer).unwrap(),
            net.forward(&x, Mode::Infer).unwrap()
        );
    }

    #[test]
    fn divergence_is_reported() {
        let mut net = DenoiserNet::<f32>::new(tiny(13)).unwrap();
        net.params[0].data[0] = f32::MAX;
        net.params[0].data[1] = f32::MAX;
        let x = Array4::<f32>::from_elem((2, 1, 8, 8), 1.0);
        let err = net.backward_and_step(&x, &Array4::zeros((2, 1, 8, 8))).unwrap_err();
        assert!(matches!(err, Error::Divergence(_)), "{err}");
    }

    #[test]
    fn crop_consistency_in_interior() {
        // every conv layer widens the boundary-affected band by one pixel
        let mut net = DenoiserNet::<f64>::new(tiny(14)).unwrap();
        net.randomize_tail(14);
        let x = random_batch(15, (1, 1, 30, 30));
        let full = net.forward(&x, Mode::Infer).unwrap();
        let (r0, c0, size) = (5, 7, 20);
        let crop = x
            .slice(ndarray::s![.., .., r0..r0 + size, c0..c0 + size])
            .to_owned();
        let cropped_out = net.forward(&crop, Mode::Infer).unwrap();
        let band = 2 + 2 * net.config.n_residual_units;
        for i in band..size - band {
            for j in band..size - band {
                let a = cropped_out[(0, 0, i, j)];
                let b = full[(0, 0, r0 + i, c0 + j)];
                assert!((a - b).abs() < 1e-12, "({i},{j}) {a} vs {b}");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        // stored 32-bit weights, promoted for the check
        let mut stored = DenoiserNet::<f32>::new(tiny(16)).unwrap();
        stored.randomize_tail(99);
        let net = stored.cast::<f64>();
        let x = random_batch(17, (2, 1, 8, 8));
        let target = random_batch(18, (2, 1, 8, 8));
        let (pred, cache) = net.forward_train(&x).unwrap();
        let grads = net.backward(&cache, &loss_gradient(&pred, &target));
        let h = 1e-3;
        let eval = |n: &DenoiserNet<f64>| loss(&n.forward_train(&x).unwrap().0, &target).unwrap();
        // a central difference straddling a PReLU kink measures the average of
        // two one-sided slopes, so such probes are skipped
        let signs = |n: &DenoiserNet<f64>| n.forward_train(&x).unwrap().1.activation_pattern();
        let base_signs = signs(&net);
        let mut checked = 0;
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut worst = 0.0f64;
        for (pi, tensor) in net.params.iter().enumerate() {
            let picks: Vec<usize> = if tensor.data.len() <= 4 {
                (0..tensor.data.len()).collect()
            } else {
                (0..4).map(|_| rng.gen_range(0..tensor.data.len())).collect()
            };
            for k in picks {
                let mut plus = net.clone();
                plus.params[pi].data[k] += h;
                let mut minus = net.clone();
                minus.params[pi].data[k] -= h;
                if signs(&plus) != base_signs || signs(&minus) != base_signs {
                    continue;
                }
                checked += 1;
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * h);
                let analytic = grads[pi][k];
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-2);
                worst = worst.max(rel);
                assert!(rel < 1e-3, "{}[{k}]: analytic {analytic} numeric {numeric}", tensor.name);
            }
        }
        assert!(worst.is_finite());
        assert!(checked >= 25, "only {checked} probes avoided kinks");
    }

    #[test]
    fn small_steps_mostly_lower_the_loss() {
        let config = DenoiserConfig {
            learning_rate: 1e-3,
            ..tiny(20)
        };
        let mut net = DenoiserNet::<f64>::new(config).unwrap();
        let x = random_batch(21, (2, 1, 8, 8));
        let y = x.mapv(|v| 0.5 * v);
        let losses: Vec<f64> = (0..50).map(|_| net.backward_and_step(&x, &y).unwrap()).collect();
        let rises = losses.windows(2).filter(|w| w[1] > w[0]).count();
        assert!(rises <= 5, "{rises} increases in {losses:?}");
        assert!(losses[49] < losses[0]);
    }

    #[test]
    fn cast_round_trip() {
        let net = DenoiserNet::<f32>::new(tiny(22)).unwrap();
        assert_eq!(net.cast::<f64>().cast::<f32>(), net);
    }
}
