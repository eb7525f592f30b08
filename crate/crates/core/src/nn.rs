//! Dense ReLU network with analytic backpropagation and momentum SGD.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `[out × in]`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub weight_velocity: Array2<f64>,
    pub bias_velocity: Array1<f64>,
}

impl DenseLayer {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    /// Zero-initialised layer (weights, bias, and velocities).
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        DenseLayer {
            weight: Array2::zeros((out_dim, in_dim)),
            bias: Array1::zeros(out_dim),
            weight_velocity: Array2::zeros((out_dim, in_dim)),
            bias_velocity: Array1::zeros(out_dim),
        }
    }
}

/// ReLU on every hidden layer, identity on the output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub layers: Vec<DenseLayer>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input seen by each layer (the batch itself for layer 0).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation output of each layer.
    pre_activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<LayerGradient>,
}

impl Gradients {
    pub fn l2_norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|g| g.weight.iter().chain(g.bias.iter()).map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// All entries in layer order, weights (row-major) before biases.
    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|g| g.weight.iter().chain(g.bias.iter()).copied())
            .collect()
    }
}

/// He-initialised network: weights ~ N(0, 2/in), zero biases and velocities.
pub fn init_params(layer_sizes: &[usize], stream: &mut RngStream) -> Result<ModelParams> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least an input and an output size, got {layer_sizes:?}"
        )));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "layer sizes must be positive, got {layer_sizes:?}"
        )));
    }
    let layers = layer_sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let scale = (2.0 / fan_in as f64).sqrt();
            let mut layer = DenseLayer::zeros(fan_in, fan_out);
            layer
                .weight
                .iter_mut()
                .for_each(|v| *v = scale * stream.next_gaussian());
            layer
        })
        .collect();
    Ok(ModelParams { layers })
}

impl ModelParams {
    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Logits only, without building a cache.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(batch)?;
        let last = self.layers.len() - 1;
        let mut a = batch.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = a.dot(&layer.weight.t());
            z += &layer.bias;
            if i != last {
                z.mapv_inplace(relu);
            }
            a = z;
        }
        Ok(a)
    }

    fn check_input(&self, batch: ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "batch has {} features, network expects {}",
                batch.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

pub fn forward(params: &ModelParams, batch: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache)> {
    params.check_input(batch)?;
    let last = params.layers.len() - 1;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut pre_activations = Vec::with_capacity(params.layers.len());
    let mut a = batch.to_owned();
    for (i, layer) in params.layers.iter().enumerate() {
        let mut z = a.dot(&layer.weight.t());
        z += &layer.bias;
        let next = if i == last { z.clone() } else { z.mapv(relu) };
        inputs.push(a);
        pre_activations.push(z);
        a = next;
    }
    Ok((
        a,
        ForwardCache {
            inputs,
            pre_activations,
        },
    ))
}

fn check_label(label: usize, classes: usize) -> Result<()> {
    if label >= classes {
        return Err(Error::LabelOutOfRange { label, classes });
    }
    Ok(())
}

/// Row-wise `-log softmax(row)[label]`, max-subtracted.
pub fn row_cross_entropy(row: ArrayView1<f64>, label: usize) -> Result<f64> {
    check_label(label, row.len())?;
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = row.iter().map(|&v| (v - max).exp()).sum();
    Ok(sum_exp.ln() + max - row[label])
}

fn row_softmax(row: ArrayView1<f64>) -> Array1<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p = row.mapv(|v| (v - max).exp());
    let s = p.sum();
    p /= s;
    p
}

/// Mean softmax cross-entropy over the batch and its logit gradient
/// `(softmax - onehot) / B`. An empty batch has zero loss.
pub fn softmax_ce(logits: ArrayView2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    if logits.nrows() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} logit rows but {} labels",
            logits.nrows(),
            labels.len()
        )));
    }
    let batch = labels.len();
    let mut grad = Array2::zeros(logits.raw_dim());
    if batch == 0 {
        return Ok((0.0, grad));
    }
    let scale = 1.0 / batch as f64;
    let mut total = 0.0;
    for ((row, mut g), &label) in logits.outer_iter().zip(grad.outer_iter_mut()).zip(labels) {
        total += row_cross_entropy(row, label)?;
        let p = row_softmax(row);
        Zip::from(&mut g).and(&p).for_each(|g, &p| *g = p * scale);
        g[label] -= scale;
    }
    Ok((total * scale, grad))
}

/// Per-sample (unscaled) cross-entropy gradients `softmax - onehot`, one row
/// per sample.
pub fn per_sample_ce_gradients(logits: ArrayView2<f64>, labels: &[usize]) -> Result<Array2<f64>> {
    let (_, mut grad) = softmax_ce(logits, labels)?;
    grad *= labels.len() as f64;
    Ok(grad)
}

fn check_cache(params: &ModelParams, cache: &ForwardCache, dlogits: ArrayView2<f64>) -> Result<()> {
    if cache.inputs.len() != params.layers.len() {
        return Err(Error::ShapeMismatch("cache does not match network depth".into()));
    }
    if dlogits.nrows() != cache.batch_size() || dlogits.ncols() != params.output_dim() {
        return Err(Error::ShapeMismatch(format!(
            "dlogits is {}x{}, expected {}x{}",
            dlogits.nrows(),
            dlogits.ncols(),
            cache.batch_size(),
            params.output_dim()
        )));
    }
    Ok(())
}

pub fn backward(params: &ModelParams, cache: &ForwardCache, dlogits: ArrayView2<f64>) -> Result<Gradients> {
    check_cache(params, cache, dlogits)?;
    let mut delta = dlogits.to_owned();
    let mut layers = Vec::with_capacity(params.layers.len());
    for l in (0..params.layers.len()).rev() {
        let weight = delta.t().dot(&cache.inputs[l]);
        let bias = delta.sum_axis(Axis(0));
        layers.push(LayerGradient { weight, bias });
        if l > 0 {
            delta = propagate(&delta, &params.layers[l], &cache.pre_activations[l - 1]);
        }
    }
    layers.reverse();
    Ok(Gradients { layers })
}

fn propagate(delta: &Array2<f64>, layer: &DenseLayer, pre_below: &Array2<f64>) -> Array2<f64> {
    let mut d = delta.dot(&layer.weight);
    Zip::from(&mut d).and(pre_below).for_each(|d, &z| {
        if z <= 0.0 {
            *d = 0.0;
        }
    });
    d
}

/// L2 norm of each row's own parameter gradient, where row `i` of
/// `per_row_dlogits` is the logit gradient of that sample's loss.
///
/// For a dense layer the per-sample weight gradient is the outer product
/// `delta_i ⊗ a_i`, so its squared norm is `|delta_i|² |a_i|²`.
pub fn per_sample_grad_norms(
    params: &ModelParams,
    cache: &ForwardCache,
    per_row_dlogits: ArrayView2<f64>,
) -> Result<Vec<f64>> {
    check_cache(params, cache, per_row_dlogits)?;
    let mut sq = vec![0.0; cache.batch_size()];
    let mut delta = per_row_dlogits.to_owned();
    for l in (0..params.layers.len()).rev() {
        for ((acc, d), a) in sq.iter_mut().zip(delta.outer_iter()).zip(cache.inputs[l].outer_iter()) {
            let dd = d.dot(&d);
            *acc += dd * (a.dot(&a) + 1.0);
        }
        if l > 0 {
            delta = propagate(&delta, &params.layers[l], &cache.pre_activations[l - 1]);
        }
    }
    Ok(sq.into_iter().map(f64::sqrt).collect())
}

/// Gradient norm of the single-sample cross-entropy loss.
pub fn per_sample_grad_norm(params: &ModelParams, x: ArrayView1<f64>, y: usize) -> Result<f64> {
    let batch = x.insert_axis(Axis(0));
    let (logits, cache) = forward(params, batch)?;
    let (_, dlogits) = softmax_ce(logits.view(), &[y])?;
    Ok(backward(params, &cache, dlogits.view())?.l2_norm())
}

/// `v ← momentum·v + g; θ ← θ − lr·v`, in place.
pub fn sgd_step(params: &mut ModelParams, grads: &Gradients, lr: f64, momentum: f64) -> Result<()> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::InvalidArgument(format!(
            "momentum must lie in [0, 1), got {momentum}"
        )));
    }
    if grads.layers.len() != params.layers.len() {
        return Err(Error::ShapeMismatch("gradient depth does not match network".into()));
    }
    for (layer, g) in params.layers.iter().zip(&grads.layers) {
        if layer.weight.raw_dim() != g.weight.raw_dim() || layer.bias.len() != g.bias.len() {
            return Err(Error::ShapeMismatch("gradient shape does not match layer".into()));
        }
        if !g.weight.iter().chain(g.bias.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "gradient",
                step: 0,
            });
        }
    }
    for (layer, g) in params.layers.iter_mut().zip(&grads.layers) {
        Zip::from(&mut layer.weight)
            .and(&mut layer.weight_velocity)
            .and(&g.weight)
            .for_each(|w, v, &g| {
                *v = momentum * *v + g;
                *w -= lr * *v;
            });
        Zip::from(&mut layer.bias)
            .and(&mut layer.bias_velocity)
            .and(&g.bias)
            .for_each(|b, v, &g| {
                *v = momentum * *v + g;
                *b -= lr * *v;
            });
    }
    Ok(())
}
