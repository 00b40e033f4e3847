//! A two-level volumetric encoder-decoder with hand-written backpropagation.
//!
//! ```text
//! x (1ch) -> conv3 a -> elu -> e1 (w1ch, full res)
//! e1 -> avgpool(f) -> conv3 b -> elu -> conv3 c -> elu -> upsample(f) -> up (w2ch)
//! [e1, up] -> conv1 d -> elu -> conv1 e -> softmax (C classes)
//! ```
//!
//! All tensors are channel-major `f64` buffers; 3x3x3 convolutions use zero
//! padding so spatial size is preserved.

mod conv;
pub mod loss;
pub mod optim;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::volume::{Dims, LabelMap, ProbMap, Volume};

pub use loss::{ce_loss, combined_loss, dice_loss, LossMode};
pub use optim::{adam_step, ema_update, poly_lr, AdamConfig, OptimState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arch {
    pub classes: usize,
    /// Channel widths of the full-resolution and pooled levels.
    pub widths: [usize; 2],
    /// Pooling / upsampling factor between the two levels.
    pub factor: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            classes: 2,
            widths: [8, 16],
            factor: 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub name: &'static str,
    pub cin: usize,
    pub cout: usize,
    /// Taps per kernel: 27 for 3x3x3, 1 for pointwise.
    pub taps: usize,
    pub offset: usize,
}

impl LayerSpec {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.taps
    }

    pub fn len(&self) -> usize {
        self.weight_len() + self.cout
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn weights<'a>(&self, values: &'a [f64]) -> &'a [f64] {
        &values[self.offset..self.offset + self.weight_len()]
    }

    fn bias<'a>(&self, values: &'a [f64]) -> &'a [f64] {
        &values[self.offset + self.weight_len()..self.offset + self.len()]
    }

    fn grads_mut<'a>(&self, values: &'a mut [f64]) -> (&'a mut [f64], &'a mut [f64]) {
        values[self.offset..self.offset + self.len()].split_at_mut(self.weight_len())
    }
}

impl Arch {
    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 || self.classes > 256 {
            return Err(Error::InvalidConfig(format!("{} classes outside 2..=256", self.classes)));
        }
        if self.widths.contains(&0) || self.factor == 0 {
            return Err(Error::InvalidConfig("network widths and factor must be positive".into()));
        }
        Ok(())
    }

    /// Layers in parameter order: a, b, c, d, e.
    pub fn layers(&self) -> [LayerSpec; 5] {
        let [w1, w2] = self.widths;
        let shapes = [
            ("conv_a", 1, w1, 27),
            ("conv_b", w1, w2, 27),
            ("conv_c", w2, w2, 27),
            ("conv_d", w1 + w2, w1, 1),
            ("conv_e", w1, self.classes, 1),
        ];
        let mut offset = 0;
        shapes.map(|(name, cin, cout, taps)| {
            let spec = LayerSpec {
                name,
                cin,
                cout,
                taps,
                offset,
            };
            offset += spec.len();
            spec
        })
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(LayerSpec::len).sum()
    }

    pub fn check_input(&self, dims: Dims) -> Result<()> {
        if !dims.divisible_by(self.factor) {
            return Err(Error::InvalidDims(format!(
                "{dims} not divisible by network factor {}",
                self.factor
            )));
        }
        Ok(())
    }
}

/// Flat parameter vector plus the architecture that gives it a layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    arch: Arch,
    values: Vec<f64>,
}

impl ParamVector {
    pub fn zeros(arch: Arch) -> Result<Self> {
        arch.validate()?;
        Ok(Self {
            arch,
            values: vec![0.0; arch.param_count()],
        })
    }

    /// Uniform `+-sqrt(6 / (fan_in + fan_out))` weights, zero biases.
    pub fn init(arch: Arch, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(arch)?;
        for layer in arch.layers() {
            let fan_in = (layer.cin * layer.taps) as f64;
            let fan_out = (layer.cout * layer.taps) as f64;
            let bound = (6.0 / (fan_in + fan_out)).sqrt();
            let (w, _) = layer.grads_mut(&mut p.values);
            for v in w.iter_mut() {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(p)
    }

    pub fn from_values(arch: Arch, values: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.param_count() {
            return Err(Error::LengthMismatch {
                expected: arch.param_count(),
                actual: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { arch, values })
    }

    pub fn arch(&self) -> Arch {
        self.arch
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layer(&self, name: &str) -> Option<&[f64]> {
        self.arch
            .layers()
            .into_iter()
            .find(|l| l.name == name)
            .map(|l| &self.values[l.offset..l.offset + l.len()])
    }
}

/// Activations kept for the backward pass.
pub(crate) struct Cache {
    dims: Dims,
    input: Vec<f64>,
    pooled: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    /// `[e1, up]` stacked along channels.
    cat: Vec<f64>,
    d: Vec<f64>,
    probs: Vec<f64>,
}

/// ELU with unit scale; continuously differentiable at zero.
fn elu(v: &mut [f64]) {
    for x in v {
        if *x < 0.0 {
            *x = x.exp_m1();
        }
    }
}

/// Derivative recovered from the activation: 1 above zero, `a + 1` below.
fn elu_backward(act: &[f64], grad: &mut [f64]) {
    for (g, &a) in grad.iter_mut().zip(act) {
        if a < 0.0 {
            *g *= a + 1.0;
        }
    }
}

fn softmax(logits: &mut [f64], classes: usize, n: usize) {
    for v in 0..n {
        let mut max = f64::NEG_INFINITY;
        for c in 0..classes {
            max = max.max(logits[c * n + v]);
        }
        let mut sum = 0.0;
        for c in 0..classes {
            let e = (logits[c * n + v] - max).exp();
            logits[c * n + v] = e;
            sum += e;
        }
        for c in 0..classes {
            logits[c * n + v] /= sum;
        }
    }
}

/// `dz_c = p_c (g_c - sum_k p_k g_k)` per voxel, in place on `grad`.
fn softmax_backward(probs: &[f64], grad: &mut [f64], classes: usize, n: usize) {
    for v in 0..n {
        let mut dot = 0.0;
        for c in 0..classes {
            dot += probs[c * n + v] * grad[c * n + v];
        }
        for c in 0..classes {
            let i = c * n + v;
            grad[i] = probs[i] * (grad[i] - dot);
        }
    }
}

pub(crate) fn forward_cached(params: &ParamVector, v: &Volume) -> Result<Cache> {
    let arch = params.arch;
    let dims = v.dims();
    arch.check_input(dims)?;
    let [la, lb, lc, ld, le] = arch.layers();
    let [w1, w2] = arch.widths;
    let f = arch.factor;
    let n = dims.len();
    let pdims = Dims::new(dims.depth / f, dims.height / f, dims.width / f)?;
    let pv = &params.values;

    let input = v.data().to_vec();
    let mut e1 = conv::conv3_forward(&input, 1, dims, la.weights(pv), la.bias(pv), w1);
    elu(&mut e1);
    let pooled = conv::avg_pool(&e1, w1, dims, f);
    let mut b = conv::conv3_forward(&pooled, w1, pdims, lb.weights(pv), lb.bias(pv), w2);
    elu(&mut b);
    let mut c = conv::conv3_forward(&b, w2, pdims, lc.weights(pv), lc.bias(pv), w2);
    elu(&mut c);
    let mut cat = e1;
    cat.extend(conv::upsample(&c, w2, dims, f));
    let mut d = conv::conv1_forward(&cat, w1 + w2, n, ld.weights(pv), ld.bias(pv), w1);
    elu(&mut d);
    let mut probs = conv::conv1_forward(&d, w1, n, le.weights(pv), le.bias(pv), arch.classes);
    softmax(&mut probs, arch.classes, n);
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::NumericFailure("non-finite network output".into()));
    }
    Ok(Cache {
        dims,
        input,
        pooled,
        b,
        c,
        cat,
        d,
        probs,
    })
}

/// Gradient of a scalar with respect to the parameters, given its gradient
/// `grad_probs` with respect to the softmax output. Accumulates into `grad`.
pub(crate) fn backward(params: &ParamVector, cache: &Cache, mut grad_probs: Vec<f64>, grad: &mut [f64]) {
    let arch = params.arch;
    let [la, lb, lc, ld, le] = arch.layers();
    let [w1, w2] = arch.widths;
    let f = arch.factor;
    let dims = cache.dims;
    let n = dims.len();
    let pdims = Dims::new(dims.depth / f, dims.height / f, dims.width / f)
        .expect("checked in forward");
    let pv = &params.values;

    softmax_backward(&cache.probs, &mut grad_probs, arch.classes, n);
    let dz = grad_probs;

    let mut dd = vec![0.0; w1 * n];
    {
        let (gw, gb) = le.grads_mut(grad);
        conv::conv1_backward(&cache.d, w1, n, le.weights(pv), arch.classes, &dz, gw, gb, &mut dd);
    }
    elu_backward(&cache.d, &mut dd);

    let mut dcat = vec![0.0; (w1 + w2) * n];
    {
        let (gw, gb) = ld.grads_mut(grad);
        conv::conv1_backward(&cache.cat, w1 + w2, n, ld.weights(pv), w1, &dd, gw, gb, &mut dcat);
    }
    let dup = dcat.split_off(w1 * n);
    let mut de1 = dcat;

    let mut dc = conv::upsample_backward(&dup, w2, dims, f);
    elu_backward(&cache.c, &mut dc);
    let mut db = vec![0.0; w2 * pdims.len()];
    {
        let (gw, gb) = lc.grads_mut(grad);
        conv::conv3_backward(&cache.b, w2, pdims, lc.weights(pv), w2, &dc, gw, gb, Some(&mut db));
    }
    elu_backward(&cache.b, &mut db);
    let mut dpooled = vec![0.0; w1 * pdims.len()];
    {
        let (gw, gb) = lb.grads_mut(grad);
        conv::conv3_backward(&cache.pooled, w1, pdims, lb.weights(pv), w2, &db, gw, gb, Some(&mut dpooled));
    }
    conv::avg_pool_backward(&dpooled, w1, dims, f, &mut de1);
    elu_backward(&cache.cat[..w1 * n], &mut de1);
    let (gw, gb) = la.grads_mut(grad);
    conv::conv3_backward(&cache.input, 1, dims, la.weights(pv), w1, &de1, gw, gb, None);
}

/// Per-voxel class probabilities for one volume.
pub fn forward(params: &ParamVector, v: &Volume) -> Result<ProbMap> {
    let cache = forward_cached(params, v)?;
    Ok(ProbMap::from_raw(v.dims(), params.arch.classes, cache.probs))
}

/// Per-sample losses and the gradient of their mean.
pub fn loss_and_grad(
    params: &ParamVector,
    batch: &[(&Volume, &LabelMap)],
    mode: LossMode,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let classes = params.arch.classes;
    let scale = 1.0 / batch.len() as f64;
    let mut grad = vec![0.0; params.len()];
    let mut losses = Vec::with_capacity(batch.len());
    for (v, y) in batch {
        crate::error::ensure_same_dims(v.dims(), y.dims())?;
        if y.classes() != classes {
            return Err(Error::ClassMismatch {
                left: classes,
                right: y.classes(),
            });
        }
        let cache = forward_cached(params, v)?;
        let mut gp = vec![0.0; cache.probs.len()];
        let l = loss::loss_with_grad(&cache.probs, classes, y.data(), mode, Some(&mut gp));
        gp.iter_mut().for_each(|g| *g *= scale);
        backward(params, &cache, gp, &mut grad);
        losses.push(l);
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok((losses, grad))
}

/// Gradient of the mean batch loss.
pub fn grad(params: &ParamVector, batch: &[(&Volume, &LabelMap)], mode: LossMode) -> Result<Vec<f64>> {
    Ok(loss_and_grad(params, batch, mode)?.1)
}

/// Mean batch loss without gradients.
pub fn batch_loss(params: &ParamVector, batch: &[(&Volume, &LabelMap)], mode: LossMode) -> Result<f64> {
    let mut total = 0.0;
    for (v, y) in batch {
        let p = forward(params, v)?;
        total += loss::loss(&p, y, mode)?;
    }
    Ok(total / batch.len() as f64)
}
