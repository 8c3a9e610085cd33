//! Point-set classifier: a shared per-point MLP, coordinate-wise max pooling
//! over the point dimension, and a dense head producing class logits. The
//! module owns analytic input gradients (reverse mode through the pooling
//! winners), finite-difference Hessian-vector products built on those
//! gradients, Adam training, and a binary checkpoint format.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::Adam;
use crate::pointset_io::{LoadedDataset, Split};

/// Hidden-layer nonlinearity. The head's final layer always emits raw logits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Softplus,
    Relu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Softplus => "softplus",
            Activation::Relu => "relu",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "tanh" => Ok(Activation::Tanh),
            "softplus" => Ok(Activation::Softplus),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::InvalidArgument(format!("unknown activation {other:?}"))),
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            // max(x,0) + ln(1+e^-|x|) avoids overflow for large |x|
            Activation::Softplus => x.max(0.0) + (-x.abs()).exp().ln_1p(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative given both the pre-activation and the activated value.
    /// The relu derivative at exactly zero is taken as zero.
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Softplus => 1.0 / (1.0 + (-pre).exp()),
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

/// Loss the attack minimizes; lower values mean a more adversarial input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss {
    /// Negated cross entropy: log p(label). Smooth everywhere.
    NegCrossEntropy,
    /// Margin loss max(z_label - max_{j != label} z_j, -kappa); once the
    /// adversarial class leads by kappa the loss saturates and its gradient
    /// vanishes.
    CwMargin { kappa: f64 },
}

impl Default for Loss {
    fn default() -> Self {
        Loss::CwMargin { kappa: 0.0 }
    }
}

impl Loss {
    pub fn name(self) -> String {
        match self {
            Loss::NegCrossEntropy => "neg_cross_entropy".into(),
            Loss::CwMargin { .. } => "cw_margin".into(),
        }
    }

    pub fn from_name(name: &str, kappa: f64) -> Result<Self> {
        match name {
            "neg_cross_entropy" => Ok(Loss::NegCrossEntropy),
            "cw_margin" => Ok(Loss::CwMargin { kappa }),
            other => Err(Error::InvalidArgument(format!("unknown loss {other:?}"))),
        }
    }
}

/// Lowest-index argmax.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// An input counts as adversarial when some other class's logit at least
/// ties the true label's (ties resolve toward the adversary).
pub fn is_adversarial(logits: &[f64], label: usize) -> bool {
    logits
        .iter()
        .enumerate()
        .any(|(j, &z)| j != label && z >= logits[label])
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|&v| (v - m).exp()).sum::<f64>().ln()
}

/// Loss value and its gradient with respect to the logits.
pub(crate) fn loss_and_dlogits(kind: Loss, logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let mut d = vec![0.0; logits.len()];
    match kind {
        Loss::NegCrossEntropy => {
            let lse = log_sum_exp(logits);
            let value = logits[label] - lse;
            for (j, dj) in d.iter_mut().enumerate() {
                let p = (logits[j] - lse).exp();
                *dj = if j == label { 1.0 - p } else { -p };
            }
            (value, d)
        }
        Loss::CwMargin { kappa } => {
            let mut runner = usize::MAX;
            for (j, &z) in logits.iter().enumerate() {
                if j != label && (runner == usize::MAX || z > logits[runner]) {
                    runner = j;
                }
            }
            let margin = logits[label] - logits[runner];
            if margin > -kappa {
                d[label] = 1.0;
                d[runner] = -1.0;
                (margin, d)
            } else {
                (-kappa, d)
            }
        }
    }
}

/// Dense layer, weights row-major `[out][in]`.
#[derive(Debug, Clone)]
struct Dense {
    rows: usize,
    cols: usize,
    w: Vec<f64>,
    b: Vec<f64>,
}

impl Dense {
    fn xavier(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let w = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
        Dense { rows, cols, w, b: vec![0.0; rows] }
    }

    fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut out = self.b.clone();
        for r in 0..self.rows {
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            let mut acc = 0.0;
            for (wc, xc) in row.iter().zip(input) {
                acc += wc * xc;
            }
            out[r] += acc;
        }
        out
    }

    fn input_grad(&self, dout: &[f64]) -> Vec<f64> {
        let mut din = vec![0.0; self.cols];
        for r in 0..self.rows {
            let dr = dout[r];
            if dr == 0.0 {
                continue;
            }
            let row = &self.w[r * self.cols..(r + 1) * self.cols];
            for (dc, wc) in din.iter_mut().zip(row) {
                *dc += wc * dr;
            }
        }
        din
    }

    fn accumulate_weight_grad(&self, input: &[f64], dout: &[f64], gw: &mut [f64], gb: &mut [f64]) {
        for r in 0..self.rows {
            let dr = dout[r];
            gb[r] += dr;
            if dr == 0.0 {
                continue;
            }
            let grow = &mut gw[r * self.cols..(r + 1) * self.cols];
            for (gc, xc) in grow.iter_mut().zip(input) {
                *gc += dr * xc;
            }
        }
    }
}

/// Per-layer pre-activation and activated values for one forward pass.
pub(crate) struct Trace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Trace {
    pub(crate) fn output(&self) -> &[f64] {
        self.post.last().expect("trace has at least one layer")
    }
}

/// Loss, input gradient, and logits for one cloud.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<[f64; 3]>,
    pub logits: Vec<f64>,
}

/// The classifier itself. `point_dims` describes the shared per-point MLP
/// (first entry 3), `head_dims` the post-pooling head (first entry equals the
/// last point dim, last entry the class count).
#[derive(Debug, Clone)]
pub struct PointClassifier {
    point_dims: Vec<usize>,
    head_dims: Vec<usize>,
    activation: Activation,
    point_layers: Vec<Dense>,
    head_layers: Vec<Dense>,
}

impl PointClassifier {
    pub fn new(point_dims: &[usize], head_dims: &[usize], activation: Activation, seed: u64) -> Result<Self> {
        if point_dims.len() < 2 || head_dims.len() < 2 {
            return Err(Error::InvalidArgument(
                "point and head MLPs each need at least one layer".into(),
            ));
        }
        if point_dims[0] != 3 {
            return Err(Error::InvalidArgument("point MLP must take 3-dim input".into()));
        }
        if head_dims[0] != *point_dims.last().unwrap() {
            return Err(Error::ShapeMismatch(format!(
                "head input {} != pooled feature {}",
                head_dims[0],
                point_dims.last().unwrap()
            )));
        }
        if *head_dims.last().unwrap() < 2 {
            return Err(Error::InvalidArgument("need at least 2 classes".into()));
        }
        if point_dims.iter().chain(head_dims).any(|&d| d == 0) {
            return Err(Error::InvalidArgument("zero-width layer".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let point_layers = point_dims
            .windows(2)
            .map(|w| Dense::xavier(w[1], w[0], &mut rng))
            .collect();
        let head_layers = head_dims
            .windows(2)
            .map(|w| Dense::xavier(w[1], w[0], &mut rng))
            .collect();
        Ok(PointClassifier {
            point_dims: point_dims.to_vec(),
            head_dims: head_dims.to_vec(),
            activation,
            point_layers,
            head_layers,
        })
    }

    /// The desk-scale architecture: per-point 3-32-64-128, head 128-64-C.
    pub fn with_defaults(num_classes: usize, activation: Activation, seed: u64) -> Result<Self> {
        PointClassifier::new(&[3, 32, 64, 128], &[128, 64, num_classes], activation, seed)
    }

    pub fn num_classes(&self) -> usize {
        *self.head_dims.last().unwrap()
    }

    pub fn feature_dim(&self) -> usize {
        *self.point_dims.last().unwrap()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Final per-point feature. Hidden point layers are activated; the last
    /// layer is left linear so pooled features are unbounded — an activation
    /// there would cap every channel and let the unperturbed points pin the
    /// pooled vector out of reach of any sparse perturbation.
    pub(crate) fn point_feature(&self, p: &[f64; 3]) -> Vec<f64> {
        let mut x = p.to_vec();
        let last = self.point_layers.len() - 1;
        for (li, layer) in self.point_layers.iter().enumerate() {
            x = layer.forward(&x);
            if li < last {
                for v in &mut x {
                    *v = self.activation.apply(*v);
                }
            }
        }
        x
    }

    pub(crate) fn point_trace(&self, p: &[f64; 3]) -> Trace {
        let mut pre = Vec::with_capacity(self.point_layers.len());
        let mut post = Vec::with_capacity(self.point_layers.len());
        let mut x = p.to_vec();
        let last = self.point_layers.len() - 1;
        for (li, layer) in self.point_layers.iter().enumerate() {
            let z = layer.forward(&x);
            x = if li < last {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(x.clone());
        }
        Trace { pre, post }
    }

    /// Logits from an already pooled feature vector.
    pub(crate) fn head_logits(&self, pooled: &[f64]) -> Vec<f64> {
        let mut x = pooled.to_vec();
        let last = self.head_layers.len() - 1;
        for (li, layer) in self.head_layers.iter().enumerate() {
            x = layer.forward(&x);
            if li < last {
                for v in &mut x {
                    *v = self.activation.apply(*v);
                }
            }
        }
        x
    }

    pub(crate) fn head_trace(&self, pooled: &[f64]) -> Trace {
        let mut pre = Vec::with_capacity(self.head_layers.len());
        let mut post = Vec::with_capacity(self.head_layers.len());
        let mut x = pooled.to_vec();
        let last = self.head_layers.len() - 1;
        for (li, layer) in self.head_layers.iter().enumerate() {
            let z = layer.forward(&x);
            x = if li < last {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            } else {
                z.clone()
            };
            pre.push(z);
            post.push(x.clone());
        }
        Trace { pre, post }
    }

    fn backprop_input(
        &self,
        layers: &[Dense],
        activate_last: bool,
        trace: &Trace,
        dout: &[f64],
    ) -> Vec<f64> {
        let mut d = dout.to_vec();
        for li in (0..layers.len()).rev() {
            if activate_last || li + 1 < layers.len() {
                for (dj, (&pre, &post)) in d.iter_mut().zip(trace.pre[li].iter().zip(&trace.post[li])) {
                    *dj *= self.activation.derivative(pre, post);
                }
            }
            d = layers[li].input_grad(&d);
        }
        d
    }

    /// Gradient of the logits-side quantity `dlogits` back to the pooled
    /// feature vector.
    pub(crate) fn head_input_grad(&self, trace: &Trace, dlogits: &[f64]) -> Vec<f64> {
        self.backprop_input(&self.head_layers, false, trace, dlogits)
    }

    /// Gradient of a per-point feature cotangent back to the point coords.
    pub(crate) fn point_input_grad(&self, trace: &Trace, dfeature: &[f64]) -> [f64; 3] {
        let d = self.backprop_input(&self.point_layers, false, trace, dfeature);
        [d[0], d[1], d[2]]
    }

    /// Coordinate-wise max over per-point features; ties keep the lowest
    /// point index, making the winner assignment a pure function of input
    /// order.
    pub(crate) fn max_pool(features: &[Vec<f64>]) -> (Vec<f64>, Vec<usize>) {
        let dim = features[0].len();
        let mut pooled = features[0].clone();
        let mut winners = vec![0usize; dim];
        for (i, f) in features.iter().enumerate().skip(1) {
            for c in 0..dim {
                if f[c] > pooled[c] {
                    pooled[c] = f[c];
                    winners[c] = i;
                }
            }
        }
        (pooled, winners)
    }

    pub fn logits(&self, points: &[[f64; 3]]) -> Result<Vec<f64>> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let features: Vec<Vec<f64>> = points.iter().map(|p| self.point_feature(p)).collect();
        let (pooled, _) = Self::max_pool(&features);
        Ok(self.head_logits(&pooled))
    }

    pub fn predict(&self, points: &[[f64; 3]]) -> Result<usize> {
        Ok(argmax(&self.logits(points)?))
    }

    pub fn loss(&self, points: &[[f64; 3]], label: usize, kind: Loss) -> Result<f64> {
        let logits = self.logits(points)?;
        self.check_label(label)?;
        Ok(loss_and_dlogits(kind, &logits, label).0)
    }

    fn check_label(&self, label: usize) -> Result<()> {
        if label >= self.num_classes() {
            return Err(Error::InvalidArgument(format!(
                "label {label} out of range for {} classes",
                self.num_classes()
            )));
        }
        Ok(())
    }

    /// Loss plus its full analytic gradient with respect to every point.
    /// Only points that win at least one pooling channel receive gradient.
    pub fn loss_input_grad(&self, points: &[[f64; 3]], label: usize, kind: Loss) -> Result<LossGrad> {
        if points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        self.check_label(label)?;
        let traces: Vec<Trace> = points.iter().map(|p| self.point_trace(p)).collect();
        let features: Vec<Vec<f64>> = traces.iter().map(|t| t.output().to_vec()).collect();
        let (pooled, winners) = Self::max_pool(&features);
        let head = self.head_trace(&pooled);
        let logits = head.output().to_vec();
        let (loss, dlogits) = loss_and_dlogits(kind, &logits, label);
        let dpooled = self.head_input_grad(&head, &dlogits);
        let mut grad = vec![[0.0; 3]; points.len()];
        let dim = pooled.len();
        let mut dfeature = vec![0.0; dim];
        for (i, trace) in traces.iter().enumerate() {
            let mut any = false;
            for c in 0..dim {
                if winners[c] == i && dpooled[c] != 0.0 {
                    dfeature[c] = dpooled[c];
                    any = true;
                } else {
                    dfeature[c] = 0.0;
                }
            }
            if any {
                grad[i] = self.point_input_grad(trace, &dfeature);
            }
        }
        Ok(LossGrad { loss, grad, logits })
    }

    /// Hessian-vector product of the loss via central differences of the
    /// analytic gradient. The step scales with the cloud and inversely with
    /// the direction, so hvp(a*v) evaluates at the same perturbed clouds as
    /// hvp(v) and the product is exactly linear in v for power-of-two
    /// scalings.
    pub fn hvp(
        &self,
        points: &[[f64; 3]],
        label: usize,
        kind: Loss,
        v: &[[f64; 3]],
    ) -> Result<Vec<[f64; 3]>> {
        if v.len() != points.len() {
            return Err(Error::ShapeMismatch(format!(
                "direction has {} rows, cloud has {}",
                v.len(),
                points.len()
            )));
        }
        let x_inf = points
            .iter()
            .flatten()
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        let v_inf = v.iter().flatten().fold(0.0f64, |a, &b| a.max(b.abs()));
        let h = 1e-4 * x_inf.max(1.0) / v_inf.max(1e-12);
        let shifted = |sign: f64| -> Vec<[f64; 3]> {
            points
                .iter()
                .zip(v)
                .map(|(p, d)| {
                    [
                        p[0] + sign * h * d[0],
                        p[1] + sign * h * d[1],
                        p[2] + sign * h * d[2],
                    ]
                })
                .collect()
        };
        let gp = self.loss_input_grad(&shifted(1.0), label, kind)?.grad;
        let gm = self.loss_input_grad(&shifted(-1.0), label, kind)?.grad;
        Ok(gp
            .iter()
            .zip(&gm)
            .map(|(a, b)| {
                [
                    (a[0] - b[0]) / (2.0 * h),
                    (a[1] - b[1]) / (2.0 * h),
                    (a[2] - b[2]) / (2.0 * h),
                ]
            })
            .collect())
    }

    // ---- parameter flattening (training) ----

    fn all_layers(&self) -> impl Iterator<Item = &Dense> {
        self.point_layers.iter().chain(self.head_layers.iter())
    }

    fn flat_len(&self) -> usize {
        self.all_layers().map(|l| l.w.len() + l.b.len()).sum()
    }

    fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for l in self.all_layers() {
            out.extend_from_slice(&l.w);
            out.extend_from_slice(&l.b);
        }
        out
    }

    fn set_params_flat(&mut self, flat: &[f64]) {
        let mut ofs = 0;
        for l in self.point_layers.iter_mut().chain(self.head_layers.iter_mut()) {
            let (wn, bn) = (l.w.len(), l.b.len());
            l.w.copy_from_slice(&flat[ofs..ofs + wn]);
            ofs += wn;
            l.b.copy_from_slice(&flat[ofs..ofs + bn]);
            ofs += bn;
        }
        debug_assert_eq!(ofs, flat.len());
    }

    /// Cross-entropy loss and weight gradients for one sample, accumulated
    /// into `gflat` (aligned with [`Self::params_flat`]).
    fn train_backprop(&self, points: &[[f64; 3]], label: usize, gflat: &mut [f64]) -> (f64, bool) {
        let traces: Vec<Trace> = points.iter().map(|p| self.point_trace(p)).collect();
        let features: Vec<Vec<f64>> = traces.iter().map(|t| t.output().to_vec()).collect();
        let (pooled, winners) = Self::max_pool(&features);
        let head = self.head_trace(&pooled);
        let logits = head.output();
        let lse = log_sum_exp(logits);
        let ce = lse - logits[label];
        let correct = argmax(logits) == label;
        let mut dlogits: Vec<f64> = logits.iter().map(|&z| (z - lse).exp()).collect();
        dlogits[label] -= 1.0;

        // slice gflat into per-layer (w, b) regions in flatten order
        let mut regions: Vec<(usize, usize)> = Vec::new();
        let mut ofs = 0;
        for l in self.all_layers() {
            regions.push((ofs, ofs + l.w.len()));
            ofs += l.w.len() + l.b.len();
        }
        let n_point = self.point_layers.len();

        // head backward, accumulating weight grads
        let mut d = dlogits;
        for li in (0..self.head_layers.len()).rev() {
            if li + 1 < self.head_layers.len() {
                for (dj, (&pre, &post)) in
                    d.iter_mut().zip(head.pre[li].iter().zip(&head.post[li]))
                {
                    *dj *= self.activation.derivative(pre, post);
                }
            }
            let input = if li == 0 { &pooled } else { &head.post[li - 1] };
            let (wofs, bofs) = regions[n_point + li];
            let layer = &self.head_layers[li];
            let (gw, rest) = gflat[wofs..].split_at_mut(layer.w.len());
            let gb = &mut rest[..layer.b.len()];
            debug_assert_eq!(wofs + layer.w.len(), bofs);
            layer.accumulate_weight_grad(input, &d, gw, gb);
            d = layer.input_grad(&d);
        }
        let dpooled = d;

        // point backward only for pooling winners; other points have zero
        // gradient everywhere
        let dim = pooled.len();
        let mut dfeature = vec![0.0; dim];
        for (i, trace) in traces.iter().enumerate() {
            let mut any = false;
            for c in 0..dim {
                if winners[c] == i && dpooled[c] != 0.0 {
                    dfeature[c] = dpooled[c];
                    any = true;
                } else {
                    dfeature[c] = 0.0;
                }
            }
            if !any {
                continue;
            }
            let mut d = dfeature.clone();
            for li in (0..self.point_layers.len()).rev() {
                if li + 1 < self.point_layers.len() {
                    for (dj, (&pre, &post)) in
                        d.iter_mut().zip(trace.pre[li].iter().zip(&trace.post[li]))
                    {
                        *dj *= self.activation.derivative(pre, post);
                    }
                }
                let point_input = [points[i][0], points[i][1], points[i][2]];
                let input: &[f64] = if li == 0 { &point_input } else { &trace.post[li - 1] };
                let (wofs, _) = regions[li];
                let layer = &self.point_layers[li];
                let (gw, rest) = gflat[wofs..].split_at_mut(layer.w.len());
                let gb = &mut rest[..layer.b.len()];
                layer.accumulate_weight_grad(input, &d, gw, gb);
                d = layer.input_grad(&d);
            }
        }
        (ce, correct)
    }

    /// Fraction of a split the classifier labels correctly.
    pub fn accuracy(&self, data: &LoadedDataset, split: Split) -> Result<f64> {
        let idx = data.indices_of(split);
        if idx.is_empty() {
            return Err(Error::InvalidArgument(format!("dataset has no {split} samples")));
        }
        let mut hit = 0usize;
        for &i in &idx {
            let cloud = &data.clouds[i];
            if self.predict(&cloud.points)? == cloud.label as usize {
                hit += 1;
            }
        }
        Ok(hit as f64 / idx.len() as f64)
    }

    /// Round every parameter through f32. Training ends with this so a saved
    /// checkpoint reloads to bitwise-identical behavior.
    pub fn quantize_f32(&mut self) {
        for l in self.point_layers.iter_mut().chain(self.head_layers.iter_mut()) {
            for v in l.w.iter_mut().chain(l.b.iter_mut()) {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Train on the dataset's train split with cross entropy and Adam.
    ///
    /// Every presentation of a sample applies a fresh uniform rotation, so the
    /// model fits the orientation-free shape rather than the handful of poses
    /// frozen into the train split; accuracy is still reported on the stored
    /// clouds. Deterministic for a fixed config (the rotation stream is keyed
    /// to `cfg.seed` alongside the shuffle); parameters are f32-quantized at
    /// the end so checkpoints round-trip exactly.
    pub fn train(&mut self, data: &LoadedDataset, cfg: &TrainConfig) -> Result<TrainReport> {
        if cfg.epochs == 0 || cfg.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch_size must be >= 1".into()));
        }
        if !(cfg.lr.is_finite() && cfg.lr > 0.0) {
            return Err(Error::InvalidArgument("learning rate must be positive".into()));
        }
        let mut order = data.indices_of(Split::Train);
        if order.is_empty() {
            return Err(Error::InvalidArgument("dataset has no train samples".into()));
        }
        for &i in &order {
            let c = &data.clouds[i];
            if c.label < 0 || c.label as usize >= self.num_classes() {
                return Err(Error::InvalidArgument(format!(
                    "sample {} label {} out of range",
                    c.id, c.label
                )));
            }
            if c.is_empty() {
                return Err(Error::EmptyCloud);
            }
        }

        let mut params = self.params_flat();
        let mut adam = Adam::new(params.len(), cfg.lr, 0.9, 0.999);
        let mut gflat = vec![0.0; params.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut aug_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        aug_rng.set_stream(1);
        let mut rotated: Vec<[f64; 3]> = Vec::new();
        let mut last_epoch_loss = f64::NAN;

        for _epoch in 0..cfg.epochs {
            // Fisher-Yates with the persistent rng keeps the whole schedule a
            // function of cfg.seed
            for i in (1..order.len()).rev() {
                let j = rng.random_range(0..=i);
                order.swap(i, j);
            }
            let mut epoch_loss = 0.0;
            for batch in order.chunks(cfg.batch_size) {
                gflat.iter_mut().for_each(|g| *g = 0.0);
                for &si in batch {
                    let cloud = &data.clouds[si];
                    let rot = crate::pointset_io::random_rotation(&mut aug_rng);
                    rotated.clear();
                    rotated.extend(cloud.points.iter().map(|p| {
                        [
                            rot[0][0] * p[0] + rot[0][1] * p[1] + rot[0][2] * p[2],
                            rot[1][0] * p[0] + rot[1][1] * p[1] + rot[1][2] * p[2],
                            rot[2][0] * p[0] + rot[2][1] * p[1] + rot[2][2] * p[2],
                        ]
                    }));
                    let (ce, _) = self.train_backprop(&rotated, cloud.label as usize, &mut gflat);
                    epoch_loss += ce;
                }
                let inv = 1.0 / batch.len() as f64;
                gflat.iter_mut().for_each(|g| *g *= inv);
                adam.step(&mut params, &gflat);
                self.set_params_flat(&params);
            }
            last_epoch_loss = epoch_loss / order.len() as f64;
        }

        self.quantize_f32();
        let train_accuracy = self.accuracy(data, Split::Train)?;
        let test_accuracy = if data.indices_of(Split::Test).is_empty() {
            f64::NAN
        } else {
            self.accuracy(data, Split::Test)?
        };
        Ok(TrainReport {
            epochs: cfg.epochs,
            final_train_loss: last_epoch_loss,
            train_accuracy,
            test_accuracy,
        })
    }

    // ---- checkpoints ----

    /// Serialize: magic, little-endian u32 JSON header length, JSON header,
    /// then one f32 little-endian blob holding every weight matrix row-major
    /// in layer order (point layers then head) followed by every bias vector
    /// in the same order.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let header = CheckpointHeader {
            point_dims: self.point_dims.clone(),
            head_dims: self.head_dims.clone(),
            activation: self.activation.name().to_string(),
            num_classes: self.num_classes(),
        };
        let header_json = serde_json::to_string(&header)
            .map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
        let mut bytes = Vec::with_capacity(16 + header_json.len() + 4 * self.flat_len());
        bytes.extend_from_slice(CHECKPOINT_MAGIC);
        bytes.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
        bytes.extend_from_slice(header_json.as_bytes());
        for l in self.all_layers() {
            for &v in &l.w {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        for l in self.all_layers() {
            for &v in &l.b {
                bytes.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bad = |msg: String| Error::BadCheckpoint { path: path.to_path_buf(), msg };
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing checkpoint magic".into()));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if bytes.len() < 12 + hlen {
            return Err(bad("truncated header".into()));
        }
        let header: CheckpointHeader = serde_json::from_slice(&bytes[12..12 + hlen])
            .map_err(|e| bad(format!("bad header: {e}")))?;
        let activation = Activation::from_name(&header.activation)
            .map_err(|_| bad(format!("unknown activation {:?}", header.activation)))?;
        if header.head_dims.last() != Some(&header.num_classes) {
            return Err(bad("num_classes disagrees with head_dims".into()));
        }
        let mut model = PointClassifier::new(&header.point_dims, &header.head_dims, activation, 0)
            .map_err(|e| bad(format!("bad dimensions: {e}")))?;
        let blob = &bytes[12 + hlen..];
        if blob.len() != 4 * model.flat_len() {
            return Err(bad(format!(
                "weight blob holds {} bytes, expected {}",
                blob.len(),
                4 * model.flat_len()
            )));
        }
        let mut vals = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64);
        for l in model.point_layers.iter_mut().chain(model.head_layers.iter_mut()) {
            for v in l.w.iter_mut() {
                *v = vals.next().unwrap();
            }
        }
        for l in model.point_layers.iter_mut().chain(model.head_layers.iter_mut()) {
            for v in l.b.iter_mut() {
                *v = vals.next().unwrap();
            }
        }
        if model
            .all_layers()
            .any(|l| l.w.iter().chain(l.b.iter()).any(|v| !v.is_finite()))
        {
            return Err(bad("non-finite parameter in blob".into()));
        }
        Ok(model)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"SCPMDL01";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    point_dims: Vec<usize>,
    head_dims: Vec<usize>,
    activation: String,
    num_classes: usize,
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, lr: 1e-3, batch_size: 32, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: usize,
    pub final_train_loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
}
