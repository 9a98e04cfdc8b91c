//! Small MLP feature extractor with a linear classifier head.
//!
//! The network is a stack of fully connected layers; every hidden layer uses
//! the configured activation and the final layer is linear, so logits come
//! out raw. One hidden layer's post-activation output is designated the
//! feature vector `z`; the backward pass accepts upstream gradients at both
//! the logits and at `z`, accumulating them through the shared layers.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::data::Minibatch;
use crate::error::{Error, Result};
use crate::rng::seeded_rng;

/// Hidden-layer activation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative given both the pre-activation and the activation value.
    fn derivative(&self, pre: f64, act: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - act * act,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Tanh => write!(f, "tanh"),
            Activation::Relu => write!(f, "relu"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!(
                "unknown activation `{other}` (expected tanh or relu)"
            ))),
        }
    }
}

/// One fully connected layer; `weight` is `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// MLP parameters plus the designated feature layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
    activation: Activation,
    feature_layer_index: usize,
    init_seed: u64,
}

impl Model {
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Index of the hidden layer whose post-activation output is `z`.
    pub fn feature_layer_index(&self) -> usize {
        self.feature_layer_index
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().unwrap().weight.nrows()
    }

    pub fn feature_dim(&self) -> usize {
        self.layers[self.feature_layer_index].weight.nrows()
    }

    /// Layer widths, input first: `[in, h1, ..., out]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.weight.nrows()));
        dims
    }

    pub fn params_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    /// Replaces one layer's parameters; the shapes must match the layer.
    pub fn set_layer_params(
        &mut self,
        layer: usize,
        weight: Array2<f64>,
        bias: Array1<f64>,
    ) -> Result<()> {
        let Some(target) = self.layers.get_mut(layer) else {
            return Err(Error::InvalidArgument(format!(
                "layer {layer} out of range for {} layers",
                self.layers.len()
            )));
        };
        if weight.dim() != target.weight.dim() || bias.len() != target.bias.len() {
            return Err(Error::InvalidArgument(format!(
                "replacement shapes {:?}/{} do not match layer {layer} shapes {:?}/{}",
                weight.dim(),
                bias.len(),
                target.weight.dim(),
                target.bias.len()
            )));
        }
        target.weight = weight;
        target.bias = bias;
        Ok(())
    }
}

/// Per-parameter gradients, shape-congruent with a model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<Layer>,
}

impl ParamGrads {
    pub fn zeros_like(model: &Model) -> Self {
        ParamGrads {
            layers: model
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| {
            l.weight.iter().all(|v| v.is_finite()) && l.bias.iter().all(|v| v.is_finite())
        })
    }

    /// Largest absolute entry, for diagnostics.
    pub fn max_abs(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
            .fold(0.0, |acc: f64, v| acc.max(v.abs()))
    }
}

/// Everything the backward pass needs from one forward evaluation.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    input: Array2<f64>,
    pre_activations: Vec<Array2<f64>>,
    /// Post-activation outputs per layer; the last layer is linear, so its
    /// entry equals the pre-activation (the raw logits).
    activations: Vec<Array2<f64>>,
    feature_layer_index: usize,
}

impl ForwardTrace {
    pub fn batch_len(&self) -> usize {
        self.input.nrows()
    }

    /// Feature matrix `Z`, one row per sample.
    pub fn features(&self) -> &Array2<f64> {
        &self.activations[self.feature_layer_index]
    }

    /// Raw (pre-softmax) logits, one row per sample.
    pub fn logits(&self) -> &Array2<f64> {
        self.activations.last().unwrap()
    }
}

/// Initializes a model from a dims chain `[in, h1, ..., out]`.
///
/// Weights are drawn from a fan-in-scaled uniform distribution
/// `U(-sqrt(3/fan_in), sqrt(3/fan_in))` (unit variance over fan-in); biases
/// start at zero. The feature layer is the penultimate activation.
pub fn init_model(layer_dims: &[usize], activation: Activation, seed: u64) -> Result<Model> {
    if layer_dims.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "model needs at least 2 layers (got dims chain {layer_dims:?})"
        )));
    }
    if layer_dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidArgument(format!(
            "layer dims must be positive, got {layer_dims:?}"
        )));
    }
    let mut rng = seeded_rng(seed);
    let mut layers = Vec::with_capacity(layer_dims.len() - 1);
    for w in layer_dims.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let limit = (3.0 / fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-limit, limit)
            .map_err(|e| Error::InvalidArgument(format!("bad init range: {e}")))?;
        let mut weight = Array2::zeros((fan_out, fan_in));
        for v in weight.iter_mut() {
            *v = dist.sample(&mut rng);
        }
        layers.push(Layer {
            weight,
            bias: Array1::zeros(fan_out),
        });
    }
    let feature_layer_index = layers.len() - 2;
    Ok(Model {
        layers,
        activation,
        feature_layer_index,
        init_seed: seed,
    })
}

/// Runs the batch through the model, keeping per-layer pre-activations and
/// activations for the backward pass.
pub fn forward(model: &Model, batch: &Minibatch) -> Result<ForwardTrace> {
    if batch.features.ncols() != model.input_dim() {
        return Err(Error::InvalidArgument(format!(
            "batch feature dim {} does not match model input dim {}",
            batch.features.ncols(),
            model.input_dim()
        )));
    }
    if !model.params_finite() {
        return Err(Error::Numeric(
            "model parameters contain non-finite values".into(),
        ));
    }
    let n_layers = model.layers.len();
    let mut pre_activations = Vec::with_capacity(n_layers);
    let mut activations = Vec::with_capacity(n_layers);
    let mut current = batch.features.clone();
    for (l, layer) in model.layers.iter().enumerate() {
        let mut pre = current.dot(&layer.weight.t());
        pre += &layer.bias;
        let act = if l + 1 == n_layers {
            pre.clone()
        } else {
            pre.mapv(|x| model.activation.apply(x))
        };
        pre_activations.push(pre);
        current = act.clone();
        activations.push(act);
    }
    Ok(ForwardTrace {
        input: batch.features.clone(),
        pre_activations,
        activations,
        feature_layer_index: model.feature_layer_index,
    })
}

/// Backpropagates upstream gradients at the logits and at the feature layer
/// through the model. Either upstream gradient may be all zeros; both paths
/// accumulate into the shared lower layers.
pub fn backward(
    model: &Model,
    trace: &ForwardTrace,
    d_logits: &Array2<f64>,
    d_features: &Array2<f64>,
) -> Result<ParamGrads> {
    let n_layers = model.layers.len();
    let m = trace.batch_len();
    let num_classes = model.num_classes();
    if d_logits.dim() != (m, num_classes) {
        return Err(Error::InvalidArgument(format!(
            "logit gradient shape {:?} does not match ({m}, {num_classes})",
            d_logits.dim()
        )));
    }
    if d_features.dim() != (m, model.feature_dim()) {
        return Err(Error::InvalidArgument(format!(
            "feature gradient shape {:?} does not match ({m}, {})",
            d_features.dim(),
            model.feature_dim()
        )));
    }

    let mut grads = ParamGrads::zeros_like(model);
    // gradient w.r.t. the current layer's pre-activation
    let mut g = d_logits.clone();
    for l in (0..n_layers).rev() {
        let input_acts = if l == 0 {
            &trace.input
        } else {
            &trace.activations[l - 1]
        };
        grads.layers[l].weight = g.t().dot(input_acts);
        grads.layers[l].bias = g.sum_axis(Axis(0));
        if l == 0 {
            break;
        }
        // gradient w.r.t. the previous layer's post-activation
        let mut g_act = g.dot(&model.layers[l].weight);
        if l - 1 == model.feature_layer_index {
            g_act += d_features;
        }
        let pre = &trace.pre_activations[l - 1];
        let act = &trace.activations[l - 1];
        ndarray::Zip::from(&mut g_act)
            .and(pre)
            .and(act)
            .for_each(|g, &p, &a| *g *= model.activation.derivative(p, a));
        g = g_act;
    }
    Ok(grads)
}

/// One plain SGD step: `theta <- theta - lr * g`, in place.
pub fn sgd_step(model: &mut Model, grads: &ParamGrads, lr: f64) -> Result<()> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be finite and non-negative, got {lr}"
        )));
    }
    if grads.layers.len() != model.layers.len() {
        return Err(Error::InvalidArgument(
            "gradient layer count does not match model".into(),
        ));
    }
    if !grads.is_finite() {
        return Err(Error::Numeric("gradients contain non-finite values".into()));
    }
    for (layer, g) in model.layers.iter_mut().zip(&grads.layers) {
        if layer.weight.dim() != g.weight.dim() || layer.bias.dim() != g.bias.dim() {
            return Err(Error::InvalidArgument(
                "gradient shapes do not match model layers".into(),
            ));
        }
        layer.weight.scaled_add(-lr, &g.weight);
        layer.bias.scaled_add(-lr, &g.bias);
    }
    Ok(())
}

/// Central-difference gradient of an arbitrary scalar loss over every model
/// parameter: `(L(theta+eps) - L(theta-eps)) / (2 eps)`.
///
/// The loss evaluator must be deterministic (fixed batch, no RNG) for the
/// differences to mean anything.
pub fn finite_diff_grad<F>(model: &Model, loss: F, epsilon: f64) -> ParamGrads
where
    F: Fn(&Model) -> f64,
{
    let mut grads = ParamGrads::zeros_like(model);
    let mut probe = model.clone();
    for l in 0..model.layers.len() {
        let (rows, cols) = model.layers[l].weight.dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = probe.layers[l].weight[[r, c]];
                probe.layers[l].weight[[r, c]] = orig + epsilon;
                let plus = loss(&probe);
                probe.layers[l].weight[[r, c]] = orig - epsilon;
                let minus = loss(&probe);
                probe.layers[l].weight[[r, c]] = orig;
                grads.layers[l].weight[[r, c]] = (plus - minus) / (2.0 * epsilon);
            }
        }
        for i in 0..model.layers[l].bias.len() {
            let orig = probe.layers[l].bias[i];
            probe.layers[l].bias[i] = orig + epsilon;
            let plus = loss(&probe);
            probe.layers[l].bias[i] = orig - epsilon;
            let minus = loss(&probe);
            probe.layers[l].bias[i] = orig;
            grads.layers[l].bias[i] = (plus - minus) / (2.0 * epsilon);
        }
    }
    grads
}

/// Largest relative error between two gradient sets, with denominator
/// `max(|a|, |b|, 1e-8)`.
pub fn max_relative_error(a: &ParamGrads, b: &ParamGrads) -> f64 {
    let mut worst = 0.0f64;
    for (la, lb) in a.layers.iter().zip(&b.layers) {
        for (x, y) in la
            .weight
            .iter()
            .chain(la.bias.iter())
            .zip(lb.weight.iter().chain(lb.bias.iter()))
        {
            let rel = (x - y).abs() / x.abs().max(y.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Writes model parameters as CSV with >= 17 significant digits so that
/// `load_params(save_params(m))` restores every value bit for bit.
///
/// Layout: `dims`, `activation` and `feature_layer_index` lines, then per
/// layer one `w<i>` line per output row (fan-in comma-separated values,
/// row-major) followed by one `b<i>` line.
pub fn save_params(model: &Model, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut write = || -> std::io::Result<()> {
        let dims: Vec<String> = model.dims().iter().map(|d| d.to_string()).collect();
        writeln!(w, "dims,{}", dims.join(","))?;
        writeln!(w, "activation,{}", model.activation)?;
        writeln!(w, "feature_layer_index,{}", model.feature_layer_index)?;
        for (l, layer) in model.layers.iter().enumerate() {
            for row in layer.weight.rows() {
                let vals: Vec<String> = row.iter().map(|v| format!("{v:.17e}")).collect();
                writeln!(w, "w{l},{}", vals.join(","))?;
            }
            let vals: Vec<String> = layer.bias.iter().map(|v| format!("{v:.17e}")).collect();
            writeln!(w, "b{l},{}", vals.join(","))?;
        }
        w.flush()
    };
    write().map_err(|e| Error::io(path, e))
}

/// Loads parameters written by [`save_params`].
pub fn load_params(path: &Path) -> Result<Model> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut lines = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        lines.push((i as u64 + 1, line));
    }
    let parse_err = |line: u64, msg: String| Error::parse(path, line, msg);

    let mut iter = lines.into_iter();
    let (ln, dims_line) = iter
        .next()
        .ok_or_else(|| parse_err(1, "empty parameter file".into()))?;
    let dims: Vec<usize> = dims_line
        .strip_prefix("dims,")
        .ok_or_else(|| parse_err(ln, "expected `dims,...` line".into()))?
        .split(',')
        .map(|t| t.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| parse_err(ln, format!("bad dims: {e}")))?;
    if dims.len() < 3 {
        return Err(parse_err(ln, format!("dims chain too short: {dims:?}")));
    }

    let (ln, act_line) = iter
        .next()
        .ok_or_else(|| parse_err(2, "missing activation line".into()))?;
    let activation: Activation = act_line
        .strip_prefix("activation,")
        .ok_or_else(|| parse_err(ln, "expected `activation,...` line".into()))?
        .trim()
        .parse()?;

    let (ln, feat_line) = iter
        .next()
        .ok_or_else(|| parse_err(3, "missing feature_layer_index line".into()))?;
    let feature_layer_index: usize = feat_line
        .strip_prefix("feature_layer_index,")
        .ok_or_else(|| parse_err(ln, "expected `feature_layer_index,...` line".into()))?
        .trim()
        .parse()
        .map_err(|e| parse_err(ln, format!("bad feature_layer_index: {e}")))?;
    if feature_layer_index + 2 > dims.len() - 1 {
        return Err(parse_err(
            ln,
            format!("feature_layer_index {feature_layer_index} must point at a hidden layer"),
        ));
    }

    let parse_row = |ln: u64, line: &str, prefix: &str, expect: usize| -> Result<Vec<f64>> {
        let body = line
            .strip_prefix(prefix)
            .ok_or_else(|| parse_err(ln, format!("expected `{prefix}...` line")))?;
        let vals: Vec<f64> = body
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| parse_err(ln, format!("bad parameter value: {e}")))?;
        if vals.len() != expect {
            return Err(parse_err(
                ln,
                format!("expected {expect} values, found {}", vals.len()),
            ));
        }
        if let Some(v) = vals.iter().find(|v| !v.is_finite()) {
            return Err(parse_err(ln, format!("non-finite parameter {v}")));
        }
        Ok(vals)
    };

    let mut layers = Vec::new();
    for (l, w) in dims.windows(2).enumerate() {
        let (fan_in, fan_out) = (w[0], w[1]);
        let mut weight = Array2::zeros((fan_out, fan_in));
        for r in 0..fan_out {
            let (ln, line) = iter
                .next()
                .ok_or_else(|| parse_err(0, format!("missing row {r} of layer {l}")))?;
            let vals = parse_row(ln, &line, &format!("w{l},"), fan_in)?;
            for (c, v) in vals.into_iter().enumerate() {
                weight[[r, c]] = v;
            }
        }
        let (ln, line) = iter
            .next()
            .ok_or_else(|| parse_err(0, format!("missing bias of layer {l}")))?;
        let bias = Array1::from_vec(parse_row(ln, &line, &format!("b{l},"), fan_out)?);
        layers.push(Layer { weight, bias });
    }
    if let Some((ln, _)) = iter.next() {
        return Err(parse_err(ln, "unexpected trailing content".into()));
    }
    Ok(Model {
        layers,
        activation,
        feature_layer_index,
        init_seed: 0,
    })
}

/// Fills a feature matrix with standard normal draws; test and oracle helper.
pub fn random_features<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    use rand_distr::StandardNormal;
    let mut out = Array2::zeros((rows, cols));
    for v in out.iter_mut() {
        *v = StandardNormal.sample(rng);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn batch(features: Array2<f64>) -> Minibatch {
        let m = features.nrows();
        Minibatch {
            features,
            labels: vec![0; m],
            domains: vec![0; m],
        }
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_model(&[4, 8, 3], Activation::Tanh, 1).unwrap();
        let b = init_model(&[4, 8, 3], Activation::Tanh, 1).unwrap();
        assert_eq!(a, b);
        for layer in a.layers() {
            assert!(layer.bias.iter().all(|&v| v == 0.0));
        }
        assert_eq!(a.feature_layer_index(), 0);
        assert_eq!(a.feature_dim(), 8);
    }

    #[test]
    fn init_rejects_short_or_zero_dims() {
        assert!(init_model(&[4, 3], Activation::Tanh, 0).is_err());
        assert!(init_model(&[4, 0, 3], Activation::Tanh, 0).is_err());
    }

    #[test]
    fn identity_layer_passes_input_through() {
        // two-layer model with identity weights everywhere and tanh disabled
        // by checking the final (linear) layer only: W1 = I on a relu net
        // with positive inputs is exactly the identity map
        let mut model = init_model(&[2, 2, 2], Activation::Relu, 0).unwrap();
        model.layers[0].weight = Array2::eye(2);
        model.layers[0].bias = Array1::zeros(2);
        model.layers[1].weight = Array2::eye(2);
        model.layers[1].bias = Array1::zeros(2);
        let b = batch(array![[0.5, 1.25], [2.0, 0.0]]);
        let trace = forward(&model, &b).unwrap();
        assert_eq!(trace.logits(), &b.features);
    }

    #[test]
    fn zero_input_through_tanh_gives_zero_features() {
        let model = init_model(&[3, 5, 2], Activation::Tanh, 4).unwrap();
        let b = batch(Array2::zeros((4, 3)));
        let trace = forward(&model, &b).unwrap();
        assert!(trace.features().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_rows_give_identical_logits() {
        let model = init_model(&[3, 6, 4], Activation::Tanh, 5).unwrap();
        let row = array![[0.3, -0.7, 1.1]];
        let two = ndarray::concatenate(Axis(0), &[row.view(), row.view()]).unwrap();
        let trace = forward(&model, &batch(two)).unwrap();
        assert_eq!(trace.logits().row(0), trace.logits().row(1));
    }

    #[test]
    fn forward_rejects_nan_parameters() {
        let mut model = init_model(&[2, 3, 2], Activation::Tanh, 0).unwrap();
        model.layers[0].weight[[0, 0]] = f64::NAN;
        let b = batch(Array2::zeros((1, 2)));
        assert!(forward(&model, &b).is_err());
    }

    #[test]
    fn zero_upstream_gradients_give_zero_param_grads() {
        let model = init_model(&[3, 4, 2], Activation::Tanh, 1).unwrap();
        let b = batch(random_features(&mut seeded_rng(2), 5, 3));
        let trace = forward(&model, &b).unwrap();
        let grads = backward(
            &model,
            &trace,
            &Array2::zeros((5, 2)),
            &Array2::zeros((5, 4)),
        )
        .unwrap();
        assert_eq!(grads, ParamGrads::zeros_like(&model));
    }

    #[test]
    fn single_linear_layer_matches_least_squares_closed_form() {
        // one trainable linear map y = Wx + b under squared error
        // L = 1/(2M) sum ||yhat - t||^2; dL/dW = (yhat-t)^T X / M.
        // Realized here as a 2-layer relu net whose first layer is frozen
        // to the identity with positive inputs.
        let mut model = init_model(&[2, 2, 2], Activation::Relu, 3).unwrap();
        model.layers[0].weight = Array2::eye(2);
        let x = array![[0.5, 1.0], [1.5, 0.25], [0.75, 2.0]];
        let t = array![[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]];
        let trace = forward(&model, &batch(x.clone())).unwrap();
        let m = 3.0;
        let resid = trace.logits() - &t;
        let d_logits = resid.mapv(|v| v / m);
        let grads = backward(&model, &trace, &d_logits, &Array2::zeros((3, 2))).unwrap();
        let expected = resid.t().dot(&x).mapv(|v| v / m);
        for (a, b) in grads.layers[1].weight.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn backward_matches_finite_differences_on_quadratic_loss() {
        let model = init_model(&[3, 5, 4, 2], Activation::Tanh, 7).unwrap();
        let b = batch(random_features(&mut seeded_rng(8), 6, 3));
        // L = 0.5 * sum(logits^2) + 0.5 * sum(z^2): exercises both upstream
        // gradient entry points at once
        let loss = |m: &Model| {
            let tr = forward(m, &b).unwrap();
            0.5 * tr.logits().iter().map(|v| v * v).sum::<f64>()
                + 0.5 * tr.features().iter().map(|v| v * v).sum::<f64>()
        };
        let trace = forward(&model, &b).unwrap();
        let analytic = backward(
            &model,
            &trace,
            &trace.logits().clone(),
            &trace.features().clone(),
        )
        .unwrap();
        let numeric = finite_diff_grad(&model, loss, 1e-5);
        assert!(
            max_relative_error(&analytic, &numeric) < 1e-7,
            "rel err {}",
            max_relative_error(&analytic, &numeric)
        );
    }

    #[test]
    fn finite_diff_recovers_known_quadratic_gradient() {
        let model = init_model(&[2, 3, 2], Activation::Tanh, 9).unwrap();
        // L = ||theta||^2 / 2 over all parameters -> grad = theta
        let loss = |m: &Model| {
            m.layers()
                .iter()
                .flat_map(|l| l.weight.iter().chain(l.bias.iter()))
                .map(|v| v * v)
                .sum::<f64>()
                / 2.0
        };
        let grads = finite_diff_grad(&model, loss, 1e-5);
        for (gl, ml) in grads.layers.iter().zip(model.layers()) {
            for (g, p) in gl.weight.iter().zip(ml.weight.iter()) {
                assert_abs_diff_eq!(g, p, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn finite_diff_on_constant_loss_is_zero() {
        let model = init_model(&[2, 3, 2], Activation::Tanh, 9).unwrap();
        let grads = finite_diff_grad(&model, |_| 4.2, 1e-5);
        assert_eq!(grads, ParamGrads::zeros_like(&model));
    }

    #[test]
    fn sgd_step_applies_update() {
        let mut model = init_model(&[2, 3, 2], Activation::Tanh, 0).unwrap();
        let before = model.clone();
        let mut grads = ParamGrads::zeros_like(&model);
        grads.layers[0].weight[[0, 0]] = 2.0;
        sgd_step(&mut model, &grads, 0.1).unwrap();
        assert_abs_diff_eq!(
            model.layers()[0].weight[[0, 0]],
            before.layers()[0].weight[[0, 0]] - 0.2,
            epsilon = 1e-15
        );
        // lr = 0 leaves the model unchanged
        let mut frozen = before.clone();
        sgd_step(&mut frozen, &grads, 0.0).unwrap();
        assert_eq!(frozen, before);
    }

    #[test]
    fn sgd_rejects_non_finite_grads() {
        let mut model = init_model(&[2, 3, 2], Activation::Tanh, 0).unwrap();
        let mut grads = ParamGrads::zeros_like(&model);
        grads.layers[0].weight[[0, 0]] = f64::INFINITY;
        assert!(sgd_step(&mut model, &grads, 0.1).is_err());
    }

    #[test]
    fn params_round_trip_bit_exact() {
        let model = init_model(&[5, 7, 4, 3], Activation::Relu, 13).unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        save_params(&model, f.path()).unwrap();
        let loaded = load_params(f.path()).unwrap();
        assert_eq!(loaded.layers(), model.layers());
        assert_eq!(loaded.activation(), model.activation());
        assert_eq!(loaded.feature_layer_index(), model.feature_layer_index());
        // forward results identical
        let b = batch(random_features(&mut seeded_rng(3), 4, 5));
        let t1 = forward(&model, &b).unwrap();
        let t2 = forward(&loaded, &b).unwrap();
        assert_eq!(t1.logits(), t2.logits());
    }

    #[test]
    fn permutation_equivariance_of_forward_and_backward() {
        let model = init_model(&[3, 5, 3], Activation::Tanh, 21).unwrap();
        let feats = random_features(&mut seeded_rng(4), 6, 3);
        let perm = [3usize, 0, 5, 1, 4, 2];
        let permuted = ndarray::stack(
            Axis(0),
            &perm.iter().map(|&i| feats.row(i)).collect::<Vec<_>>(),
        )
        .unwrap();
        let t1 = forward(&model, &batch(feats.clone())).unwrap();
        let t2 = forward(&model, &batch(permuted)).unwrap();
        for (new_row, &old_row) in perm.iter().enumerate() {
            assert_eq!(t2.logits().row(new_row), t1.logits().row(old_row));
        }
        // summed gradients are permutation-invariant
        let d_log1 = random_features(&mut seeded_rng(5), 6, 3);
        let d_feat1 = random_features(&mut seeded_rng(6), 6, 5);
        let d_log2 = ndarray::stack(
            Axis(0),
            &perm.iter().map(|&i| d_log1.row(i)).collect::<Vec<_>>(),
        )
        .unwrap();
        let d_feat2 = ndarray::stack(
            Axis(0),
            &perm.iter().map(|&i| d_feat1.row(i)).collect::<Vec<_>>(),
        )
        .unwrap();
        let g1 = backward(&model, &t1, &d_log1, &d_feat1).unwrap();
        let g2 = backward(&model, &t2, &d_log2, &d_feat2).unwrap();
        for (a, b) in g1.layers.iter().zip(&g2.layers) {
            for (x, y) in a.weight.iter().zip(b.weight.iter()) {
                assert_abs_diff_eq!(x, y, epsilon = 1e-12);
            }
        }
    }
}
