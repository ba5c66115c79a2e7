//! Dense-layer primitives for small fully connected networks.
//!
//! Everything here is `f64`. A [`ParameterSet`] holds the three layer groups of
//! a branching network: a shared trunk, the mean path and the standard-deviation
//! path. Each path ends in a width-1 head. The flat parameter order is trunk,
//! then mean path, then standard-deviation path; within a layer the row-major
//! weights come first, followed by the bias.

use crate::error::{Error, Result};

/// Above this input the softplus is evaluated as `x + log1p(exp(-x))`.
pub const SOFTPLUS_LINEAR_THRESHOLD: f64 = 30.0;

/// `0.5 * ln(2π)`
pub const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Affine map `W x + b` with `W` stored row-major as `(d_out × d_in)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    d_in: usize,
    d_out: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(d_in: usize, d_out: usize) -> Self {
        Self {
            d_in,
            d_out,
            weights: vec![0.0; d_in * d_out],
            bias: vec![0.0; d_out],
        }
    }

    /// Builds a layer from row-major weights and a bias vector.
    pub fn from_parts(d_in: usize, d_out: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if d_in == 0 || d_out == 0 {
            return Err(Error::Shape(format!("layer dims must be positive, got {d_in}x{d_out}")));
        }
        if weights.len() != d_in * d_out {
            return Err(Error::Shape(format!(
                "weights have {} entries, expected {d_out}x{d_in}",
                weights.len()
            )));
        }
        if bias.len() != d_out {
            return Err(Error::Shape(format!("bias has {} entries, expected {d_out}", bias.len())));
        }
        Ok(Self {
            d_in,
            d_out,
            weights,
            bias,
        })
    }

    pub fn d_in(&self) -> usize {
        self.d_in
    }

    pub fn d_out(&self) -> usize {
        self.d_out
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.d_in + col]
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    pub fn param_count(&self) -> usize {
        self.d_in * self.d_out + self.d_out
    }

    fn scalars(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(self.bias.iter())
    }

    fn scalars_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }

    /// `out = W x + b`. Panics on shape mismatch; see [`linear_forward`] for the
    /// checked version.
    pub fn forward_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.d_in);
        assert_eq!(out.len(), self.d_out);
        for (j, o) in out.iter_mut().enumerate() {
            let row = &self.weights[j * self.d_in..(j + 1) * self.d_in];
            *o = self.bias[j] + dot(row, x);
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn linear_forward(x: &[f64], layer: &DenseLayer) -> Result<Vec<f64>> {
    if x.len() != layer.d_in {
        return Err(Error::Shape(format!(
            "input has length {}, layer expects {}",
            x.len(),
            layer.d_in
        )));
    }
    let mut out = vec![0.0; layer.d_out];
    layer.forward_into(x, &mut out);
    Ok(out)
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v.max(0.0)).collect()
}

fn relu_in_place(x: &mut [f64]) {
    for v in x {
        *v = v.max(0.0);
    }
}

/// `log(1 + e^x) + delta`, evaluated without overflow.
pub fn softplus(x: f64, delta: f64) -> f64 {
    let base = if x > SOFTPLUS_LINEAR_THRESHOLD {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    };
    base + delta
}

/// Logistic function, the derivative of the softplus.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Negative log density of `N(mu, sigma²)` at `y`.
pub fn nll_gaussian(y: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("standard deviation must be positive, got {sigma}")));
    }
    let r = (y - mu) / sigma;
    Ok(HALF_LN_2PI + sigma.ln() + 0.5 * r * r)
}

/// Which part of a branching network a layer belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerGroup {
    Trunk,
    Mean,
    StdDev,
}

impl LayerGroup {
    pub fn name(self) -> &'static str {
        match self {
            LayerGroup::Trunk => "trunk",
            LayerGroup::Mean => "mean path",
            LayerGroup::StdDev => "stddev path",
        }
    }
}

/// All weights and biases of a branching network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet {
    trunk: Vec<DenseLayer>,
    mean: Vec<DenseLayer>,
    stddev: Vec<DenseLayer>,
}

impl ParameterSet {
    /// Validates that the groups chain together: the trunk is non-empty and
    /// consecutive, both paths start at the trunk output and end in width 1.
    pub fn new(trunk: Vec<DenseLayer>, mean: Vec<DenseLayer>, stddev: Vec<DenseLayer>) -> Result<Self> {
        if trunk.is_empty() {
            return Err(Error::Config("network needs at least one trunk layer".into()));
        }
        check_chain(&trunk, trunk[0].d_in, "trunk")?;
        let trunk_out = trunk.last().map(DenseLayer::d_out).unwrap_or_default();
        for (path, name) in [(&mean, "mean path"), (&stddev, "stddev path")] {
            if path.is_empty() {
                return Err(Error::Config(format!("{name} needs an output layer")));
            }
            check_chain(path, trunk_out, name)?;
            if path.last().map(DenseLayer::d_out) != Some(1) {
                return Err(Error::Shape(format!("{name} must end in a single output")));
            }
        }
        Ok(Self { trunk, mean, stddev })
    }

    pub fn trunk(&self) -> &[DenseLayer] {
        &self.trunk
    }

    pub fn mean_path(&self) -> &[DenseLayer] {
        &self.mean
    }

    pub fn stddev_path(&self) -> &[DenseLayer] {
        &self.stddev
    }

    pub fn mean_path_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.mean
    }

    pub fn stddev_path_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.stddev
    }

    pub fn trunk_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.trunk
    }

    pub fn input_dim(&self) -> usize {
        self.trunk[0].d_in
    }

    /// Layers in flat order, tagged with their group.
    pub fn layers(&self) -> impl Iterator<Item = (LayerGroup, &DenseLayer)> {
        let t = self.trunk.iter().map(|l| (LayerGroup::Trunk, l));
        let m = self.mean.iter().map(|l| (LayerGroup::Mean, l));
        let s = self.stddev.iter().map(|l| (LayerGroup::StdDev, l));
        t.chain(m).chain(s)
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut DenseLayer> {
        self.trunk.iter_mut().chain(self.mean.iter_mut()).chain(self.stddev.iter_mut())
    }

    /// `(d_in, d_out)` of every layer in flat order.
    pub fn shapes(&self) -> Vec<(LayerGroup, usize, usize)> {
        self.layers().map(|(g, l)| (g, l.d_in, l.d_out)).collect()
    }

    pub fn flat_len(&self) -> usize {
        self.layers().map(|(_, l)| l.param_count()).sum()
    }

    /// Flat range occupied by each group, in the order trunk, mean, stddev.
    pub fn group_ranges(&self) -> [std::ops::Range<usize>; 3] {
        let t: usize = self.trunk.iter().map(DenseLayer::param_count).sum();
        let m: usize = self.mean.iter().map(DenseLayer::param_count).sum();
        let s: usize = self.stddev.iter().map(DenseLayer::param_count).sum();
        [0..t, t..t + m, t + m..t + m + s]
    }

    pub fn scalars(&self) -> impl Iterator<Item = &f64> {
        self.layers().flat_map(|(_, l)| l.scalars())
    }

    pub fn scalars_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers_mut().flat_map(DenseLayer::scalars_mut)
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.scalars().copied().collect()
    }

    /// A copy with the same shapes and every scalar replaced from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut out = self.clone();
        out.assign_flat(flat)?;
        Ok(out)
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.flat_len() {
            return Err(Error::Shape(format!(
                "flat vector has {} entries, parameter set has {}",
                flat.len(),
                self.flat_len()
            )));
        }
        for (dst, src) in self.scalars_mut().zip(flat) {
            *dst = *src;
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        let zero = |ls: &[DenseLayer]| ls.iter().map(|l| DenseLayer::zeros(l.d_in, l.d_out)).collect();
        Self {
            trunk: zero(&self.trunk),
            mean: zero(&self.mean),
            stddev: zero(&self.stddev),
        }
    }

    pub fn same_shape(&self, other: &ParameterSet) -> bool {
        self.shapes() == other.shapes()
    }

    pub fn is_finite(&self) -> bool {
        self.scalars().all(|v| v.is_finite())
    }
}

fn check_chain(layers: &[DenseLayer], mut width: usize, name: &str) -> Result<()> {
    for (i, l) in layers.iter().enumerate() {
        if l.d_in != width {
            return Err(Error::Shape(format!(
                "{name} layer {i} expects input width {}, previous width is {width}",
                l.d_in
            )));
        }
        width = l.d_out;
    }
    Ok(())
}

/// Raw network outputs for one input: the mean-head output and the
/// pre-softplus standard-deviation head output.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeadOutputs {
    pub mean: f64,
    pub stddev_logit: f64,
}

/// Reusable per-layer buffers for forward and backward passes.
#[derive(Debug, Clone)]
pub struct Workspace {
    // Post-activation outputs of every layer, flat layer order.
    acts: Vec<Vec<f64>>,
    // Upstream gradient w.r.t. each layer's pre-activation output.
    grads: Vec<Vec<f64>>,
    trunk_grad: Vec<f64>,
}

impl Workspace {
    pub fn new(params: &ParameterSet) -> Self {
        let acts: Vec<Vec<f64>> = params.layers().map(|(_, l)| vec![0.0; l.d_out]).collect();
        let grads = acts.clone();
        let trunk_width = params.trunk.last().map(DenseLayer::d_out).unwrap_or_default();
        Self {
            acts,
            grads,
            trunk_grad: vec![0.0; trunk_width],
        }
    }
}

fn check_finite(values: &[f64], layer: usize, group: LayerGroup) -> Result<()> {
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric {
            layer,
            group: group.name(),
            detail: format!("non-finite activation {v}"),
        });
    }
    Ok(())
}

/// Runs one input through the network, leaving activations in `ws`.
pub fn forward(params: &ParameterSet, x: &[f64], ws: &mut Workspace) -> Result<HeadOutputs> {
    if x.len() != params.input_dim() {
        return Err(Error::Shape(format!(
            "input has length {}, network expects {}",
            x.len(),
            params.input_dim()
        )));
    }
    let nt = params.trunk.len();
    let nm = params.mean.len();

    let mut idx = 0;
    for layer in &params.trunk {
        let (before, rest) = ws.acts.split_at_mut(idx);
        let input: &[f64] = if idx == 0 { x } else { &before[idx - 1] };
        layer.forward_into(input, &mut rest[0]);
        check_finite(&rest[0], idx, LayerGroup::Trunk)?;
        relu_in_place(&mut rest[0]);
        idx += 1;
    }

    for (group, path, offset) in [
        (LayerGroup::Mean, &params.mean, nt),
        (LayerGroup::StdDev, &params.stddev, nt + nm),
    ] {
        for (j, layer) in path.iter().enumerate() {
            let at = offset + j;
            let (before, rest) = ws.acts.split_at_mut(at);
            let input: &[f64] = if j == 0 { &before[nt - 1] } else { &before[at - 1] };
            layer.forward_into(input, &mut rest[0]);
            check_finite(&rest[0], at, group)?;
            if j + 1 < path.len() {
                relu_in_place(&mut rest[0]);
            }
        }
    }

    Ok(HeadOutputs {
        mean: ws.acts[nt + nm - 1][0],
        stddev_logit: ws.acts[nt + nm + params.stddev.len() - 1][0],
    })
}

/// Backpropagates head gradients through the network activations stored in
/// `ws` by the preceding [`forward`] on `x`, accumulating into `grad`.
fn backward_from_heads(
    params: &ParameterSet,
    x: &[f64],
    ws: &mut Workspace,
    d_mean: f64,
    d_stddev_logit: f64,
    grad: &mut ParameterSet,
) {
    let nt = params.trunk.len();
    let nm = params.mean.len();
    ws.trunk_grad.iter_mut().for_each(|g| *g = 0.0);

    for (path, grad_path, offset, d_head) in [
        (&params.mean, &mut grad.mean, nt, d_mean),
        (&params.stddev, &mut grad.stddev, nt + nm, d_stddev_logit),
    ] {
        let last = offset + path.len() - 1;
        ws.grads[last][0] = d_head;
        for j in (0..path.len()).rev() {
            let at = offset + j;
            let layer = &path[j];
            let (lower, upper) = ws.grads.split_at_mut(at);
            let dz = &upper[0];
            let input: &[f64] = if j == 0 { &ws.acts[nt - 1] } else { &ws.acts[at - 1] };
            accumulate_layer_grad(&mut grad_path[j], dz, input);
            if j == 0 {
                propagate(layer, dz, &mut ws.trunk_grad, None, true);
            } else {
                propagate(layer, dz, &mut lower[at - 1], Some(&ws.acts[at - 1]), false);
            }
        }
    }

    // trunk_grad is w.r.t. the post-ReLU trunk output; mask it into the
    // pre-activation gradient of the last trunk layer.
    {
        let last = nt - 1;
        let act = &ws.acts[last];
        for ((g, &t), &a) in ws.grads[last].iter_mut().zip(&ws.trunk_grad).zip(act) {
            *g = if a > 0.0 { t } else { 0.0 };
        }
    }
    for i in (0..nt).rev() {
        let layer = &params.trunk[i];
        let (lower, upper) = ws.grads.split_at_mut(i);
        let dz = &upper[0];
        let input: &[f64] = if i == 0 { x } else { &ws.acts[i - 1] };
        accumulate_layer_grad(&mut grad.trunk[i], dz, input);
        if i > 0 {
            propagate(layer, dz, &mut lower[i - 1], Some(&ws.acts[i - 1]), false);
        }
    }
}

fn accumulate_layer_grad(g: &mut DenseLayer, dz: &[f64], input: &[f64]) {
    let d_in = g.d_in;
    for (j, &d) in dz.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = &mut g.weights[j * d_in..(j + 1) * d_in];
        for (w, &a) in row.iter_mut().zip(input) {
            *w += d * a;
        }
        g.bias[j] += d;
    }
}

/// Writes `Wᵀ dz` into `out`, masked by the ReLU of `act` when given.
/// With `accumulate` the result is added instead of overwriting.
fn propagate(layer: &DenseLayer, dz: &[f64], out: &mut [f64], act: Option<&[f64]>, accumulate: bool) {
    if !accumulate {
        out.iter_mut().for_each(|v| *v = 0.0);
    }
    let d_in = layer.d_in;
    for (j, &d) in dz.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = &layer.weights[j * d_in..(j + 1) * d_in];
        for (o, &w) in out.iter_mut().zip(row) {
            *o += w * d;
        }
    }
    if let Some(act) = act {
        for (o, &a) in out.iter_mut().zip(act) {
            if a <= 0.0 {
                *o = 0.0;
            }
        }
    }
}

/// Summed Gaussian negative log-likelihood of a batch and its gradient with
/// respect to every parameter.
///
/// Rows are reduced in iteration order, so results are bit-reproducible.
/// Gradients are added to `grad`; callers reset it between batches.
pub fn loss_and_gradient<'a, I>(
    params: &ParameterSet,
    delta: f64,
    batch: I,
    ws: &mut Workspace,
    grad: &mut ParameterSet,
) -> Result<f64>
where
    I: IntoIterator<Item = (&'a [f64], f64)>,
{
    let mut loss = 0.0;
    let mut rows = 0usize;
    let out_layer = params.flat_layer_count() - 1;
    for (x, y) in batch {
        let heads = forward(params, x, ws)?;
        let sigma = softplus(heads.stddev_logit, delta);
        let resid = y - heads.mean;
        let inv_var = 1.0 / (sigma * sigma);
        loss += HALF_LN_2PI + sigma.ln() + 0.5 * resid * resid * inv_var;
        let d_mean = -resid * inv_var;
        let d_sigma = 1.0 / sigma - resid * resid * inv_var / sigma;
        let d_logit = d_sigma * sigmoid(heads.stddev_logit);
        if !(d_mean.is_finite() && d_logit.is_finite()) {
            return Err(Error::Numeric {
                layer: out_layer,
                group: LayerGroup::StdDev.name(),
                detail: format!("non-finite loss gradient at sigma={sigma}"),
            });
        }
        backward_from_heads(params, x, ws, d_mean, d_logit, grad);
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Data("gradient requested for an empty batch".into()));
    }
    Ok(loss)
}

/// Gradient of the summed negative log-likelihood over `batch`, flat order.
pub fn backward<'a, I>(params: &ParameterSet, delta: f64, batch: I) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = (&'a [f64], f64)>,
{
    let mut ws = Workspace::new(params);
    let mut grad = params.zeros_like();
    loss_and_gradient(params, delta, batch, &mut ws, &mut grad)?;
    Ok(grad.flatten())
}

impl ParameterSet {
    fn flat_layer_count(&self) -> usize {
        self.trunk.len() + self.mean.len() + self.stddev.len()
    }
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPSILON: f64 = 1e-8;

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
    step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(flat_len: usize, learning_rate: f64) -> Self {
        Self {
            first_moment: vec![0.0; flat_len],
            second_moment: vec![0.0; flat_len],
            step_count: 0,
            learning_rate,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            epsilon: ADAM_EPSILON,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &[f64]) -> Result<()> {
        if grads.len() != self.first_moment.len() || grads.len() != params.flat_len() {
            return Err(Error::Shape(format!(
                "gradient has {} entries, optimizer tracks {} and parameters have {}",
                grads.len(),
                self.first_moment.len(),
                params.flat_len()
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.learning_rate, self.epsilon);
        for (((p, &g), m), v) in params
            .scalars_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        if let Some((i, (group, _))) = params
            .layers()
            .enumerate()
            .find(|(_, (_, l))| l.scalars().any(|v| !v.is_finite()))
        {
            return Err(Error::Numeric {
                layer: i,
                group: group.name(),
                detail: format!("non-finite parameter after optimizer step {}", self.step_count),
            });
        }
        Ok(())
    }
}

/// Pure form of [`AdamState::step`].
pub fn adam_step(params: &ParameterSet, grads: &[f64], state: &AdamState) -> Result<(ParameterSet, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, grads)?;
    Ok((p, s))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn layer(d_in: usize, d_out: usize, w: &[f64], b: &[f64]) -> DenseLayer {
        DenseLayer::from_parts(d_in, d_out, w.to_vec(), b.to_vec()).unwrap()
    }

    #[test]
    fn linear_forward_examples() {
        let id = layer(2, 2, &[1.0, 0.0, 0.0, 1.0], &[0.0, 0.0]);
        assert_eq!(linear_forward(&[1.0, 2.0], &id).unwrap(), vec![1.0, 2.0]);

        let l = layer(2, 2, &[2.0, 3.0, 0.0, 1.0], &[1.0, 0.0]);
        assert_eq!(linear_forward(&[1.0, -1.0], &l).unwrap(), vec![0.0, -1.0]);

        let l = layer(3, 2, &[0.3, -7.0, 2.0, 11.0, 0.5, -1.0], &[5.0, -5.0]);
        assert_eq!(linear_forward(&[0.0; 3], &l).unwrap(), vec![5.0, -5.0]);
    }

    #[test]
    fn linear_forward_rejects_wrong_width() {
        let l = DenseLayer::zeros(3, 2);
        assert!(matches!(linear_forward(&[1.0, 2.0], &l), Err(Error::Shape(_))));
    }

    #[test]
    fn layer_shape_validation() {
        assert!(DenseLayer::from_parts(2, 2, vec![0.0; 3], vec![0.0; 2]).is_err());
        assert!(DenseLayer::from_parts(2, 2, vec![0.0; 4], vec![0.0; 1]).is_err());
        assert!(DenseLayer::from_parts(0, 2, vec![], vec![0.0; 2]).is_err());
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        assert_eq!(relu(&[-3.0, -0.5, -1e-300]), vec![0.0; 3]);
    }

    #[test]
    fn softplus_examples() {
        assert!((softplus(0.0, 0.0) - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((softplus(100.0, 0.001) - 100.001).abs() < 1e-9);
        // ln(1 + e^-20) = 2.0611536181902037e-9 (high-precision evaluation)
        let expected = 0.001 + 2.061_153_618_190_204e-9;
        assert!((softplus(-20.0, 0.001) - expected).abs() < 1e-17);
        assert!(softplus(1e308, 0.0).is_finite());
    }

    #[test]
    fn softplus_branches_agree_at_threshold() {
        let x = SOFTPLUS_LINEAR_THRESHOLD;
        let direct = x.exp().ln_1p();
        let shifted = x + (-x).exp().ln_1p();
        assert!((direct - shifted).abs() <= f64::EPSILON * direct);
    }

    #[test]
    fn nll_examples() {
        assert!((nll_gaussian(3.0, 3.0, 1.0).unwrap() - 0.918_938_5).abs() < 1e-7);
        assert!((nll_gaussian(1.0, 0.0, 1.0).unwrap() - 1.418_938_5).abs() < 1e-7);
        assert!(matches!(nll_gaussian(0.0, 0.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(nll_gaussian(0.0, 0.0, -1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn nll_minimizer_is_sample_mle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let ys: Vec<f64> = (0..100).map(|_| rng.random_range(-3.0..5.0)).collect();
        let n = ys.len() as f64;
        let mean = ys.iter().sum::<f64>() / n;
        let sd = (ys.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n).sqrt();
        let total = |mu: f64, s: f64| ys.iter().map(|&y| nll_gaussian(y, mu, s).unwrap()).sum::<f64>();

        // Coarse grid search over (mu, sigma) around the closed form.
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in -200..=200 {
            for j in -200..=200 {
                let mu = mean + i as f64 * 1e-3;
                let s = sd + j as f64 * 1e-3;
                let l = total(mu, s);
                if l < best.0 {
                    best = (l, mu, s);
                }
            }
        }
        assert!((best.1 - mean).abs() < 1.5e-3, "mu {} vs {}", best.1, mean);
        assert!((best.2 - sd).abs() < 1.5e-3, "sigma {} vs {}", best.2, sd);
    }

    fn tiny_net() -> ParameterSet {
        ParameterSet::new(
            vec![layer(2, 3, &[0.5, -0.2, 0.1, 0.7, -0.4, 0.3], &[0.1, 0.0, -0.1])],
            vec![layer(3, 1, &[0.2, -0.3, 0.4], &[0.05])],
            vec![layer(3, 2, &[0.1, 0.2, 0.3, -0.1, 0.5, 0.2], &[0.0, 0.1]), layer(2, 1, &[0.3, -0.2], &[0.2])],
        )
        .unwrap()
    }

    #[test]
    fn parameter_set_validation() {
        let t = vec![DenseLayer::zeros(2, 3)];
        assert!(ParameterSet::new(vec![], vec![DenseLayer::zeros(2, 1)], vec![DenseLayer::zeros(2, 1)]).is_err());
        assert!(ParameterSet::new(t.clone(), vec![DenseLayer::zeros(2, 1)], vec![DenseLayer::zeros(3, 1)]).is_err());
        assert!(ParameterSet::new(t.clone(), vec![DenseLayer::zeros(3, 2)], vec![DenseLayer::zeros(3, 1)]).is_err());
        assert!(ParameterSet::new(t, vec![DenseLayer::zeros(3, 1)], vec![DenseLayer::zeros(3, 1)]).is_ok());
    }

    #[test]
    fn flat_layout_and_groups() {
        let p = tiny_net();
        assert_eq!(p.flat_len(), 9 + 4 + 8 + 3);
        let [t, m, s] = p.group_ranges();
        assert_eq!((t, m, s), (0..9, 9..13, 13..24));
        let flat = p.flatten();
        assert_eq!(flat[0], 0.5);
        assert_eq!(flat[6], 0.1); // first trunk bias
        assert_eq!(flat[12], 0.05); // mean head bias
        assert_eq!(p.zeros_like().with_flat(&flat).unwrap(), p);
        assert!(p.with_flat(&flat[1..]).is_err());
    }

    #[test]
    fn batch_gradient_is_sum_of_rows() {
        let p = tiny_net();
        let rows: Vec<(Vec<f64>, f64)> = vec![(vec![0.3, -1.2], 0.4), (vec![1.5, 0.2], -0.7), (vec![-0.4, 0.9], 1.1)];
        let batch = backward(&p, 0.001, rows.iter().map(|(x, y)| (x.as_slice(), *y))).unwrap();
        let mut sum = vec![0.0; p.flat_len()];
        for (x, y) in &rows {
            let g = backward(&p, 0.001, [(x.as_slice(), *y)]).unwrap();
            sum.iter_mut().zip(&g).for_each(|(s, v)| *s += v);
        }
        for (a, b) in batch.iter().zip(&sum) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn gradient_finite_at_stddev_floor() {
        // Drive the stddev logit far negative so sigma sits on the delta floor.
        let mut p = tiny_net();
        p.stddev_path_mut()[1].bias_mut()[0] = -60.0;
        let mut ws = Workspace::new(&p);
        let heads = forward(&p, &[0.3, 0.1], &mut ws).unwrap();
        assert!((softplus(heads.stddev_logit, 0.001) - 0.001).abs() < 1e-12);
        let g = backward(&p, 0.001, [(&[0.3, 0.1][..], 0.2)]).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn non_finite_input_reports_layer() {
        let p = tiny_net();
        let err = backward(&p, 0.001, [(&[f64::NAN, 0.0][..], 0.0)]).unwrap_err();
        assert!(matches!(err, Error::Numeric { layer: 0, .. }), "{err}");
    }

    #[test]
    fn empty_batch_is_an_error() {
        let p = tiny_net();
        assert!(backward(&p, 0.001, std::iter::empty()).is_err());
    }

    #[test]
    fn adam_zero_gradient_leaves_params() {
        let p = tiny_net();
        let state = AdamState::new(p.flat_len(), 1e-3);
        let (q, s) = adam_step(&p, &vec![0.0; p.flat_len()], &state).unwrap();
        assert_eq!(q, p);
        assert_eq!(s.step_count(), 1);
    }

    #[test]
    fn adam_first_step_is_learning_rate_sized() {
        // m̂ = g and v̂ = g² after one step, so the update is lr·g/(|g| + ε).
        let mut p = ParameterSet::new(
            vec![DenseLayer::zeros(1, 1)],
            vec![DenseLayer::zeros(1, 1)],
            vec![DenseLayer::zeros(1, 1)],
        )
        .unwrap();
        let n = p.flat_len();
        let mut grads = vec![0.0; n];
        grads[0] = 3.7;
        grads[1] = -0.02;
        let mut state = AdamState::new(n, 1e-3);
        state.step(&mut p, &grads).unwrap();
        let flat = p.flatten();
        assert!((flat[0] + 1e-3 * 3.7 / (3.7 + 1e-8)).abs() < 1e-15);
        assert!((flat[1] - 1e-3 * 0.02 / (0.02 + 1e-8)).abs() < 1e-15);
        assert_eq!(flat[2], 0.0);
    }

    #[test]
    fn adam_is_stateful() {
        let p = tiny_net();
        let g: Vec<f64> = (0..p.flat_len()).map(|i| (i as f64 * 0.37).sin()).collect();
        let s0 = AdamState::new(p.flat_len(), 1e-3);
        let (p1, s1) = adam_step(&p, &g, &s0).unwrap();
        let (p2, s2) = adam_step(&p1, &g, &s1).unwrap();
        assert_eq!(s2.step_count(), 2);
        let d1: Vec<f64> = p1.flatten().iter().zip(p.flatten()).map(|(a, b)| a - b).collect();
        let d2: Vec<f64> = p2.flatten().iter().zip(p1.flatten()).map(|(a, b)| a - b).collect();
        assert_ne!(d1, d2);
        assert!(s2.second_moment().iter().all(|&v| v >= 0.0));
        assert!(adam_step(&p, &g[1..], &s0).is_err());
    }

    proptest! {
        #[test]
        fn relu_is_idempotent(x in prop::collection::vec(-1e6f64..1e6, 0..32)) {
            let once = relu(&x);
            prop_assert_eq!(relu(&once), once);
        }

        #[test]
        fn softplus_floor_and_monotone(a in -700.0f64..700.0, b in -700.0f64..700.0) {
            let delta = 0.001;
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(softplus(lo, delta) >= delta);
            prop_assert!(softplus(lo, delta) <= softplus(hi, delta));
            if lo > -30.0 {
                prop_assert!(softplus(lo, delta) > delta);
            }
        }

        #[test]
        fn flatten_round_trips(seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = tiny_net();
            let flat: Vec<f64> = (0..p.flat_len()).map(|_| rng.random::<f64>() * 1e3 - 5e2).collect();
            let q = p.with_flat(&flat).unwrap();
            prop_assert_eq!(q.flatten(), flat);
            prop_assert_eq!(q.zeros_like().with_flat(&q.flatten()).unwrap(), q);
        }
    }
}
