//! Dense and strided-convolution layers on `f64` with explicit backward
//! passes, plus Adam and Polyak helpers.
//!
//! Activations are row-major batches: `x[n, :]` is sample `n`. Images use an
//! NHWC layout flattened per sample, so a stack of `c` frames of side `s` is
//! a row of length `s * s * c` with the channel index fastest.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// A set of named parameter tensors in a fixed order.
pub trait Params {
    /// `(name, shape, values)` for every tensor.
    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.2.len()).sum()
    }

    fn flat(&self) -> Vec<f64> {
        self.tensors().iter().flat_map(|t| t.2.iter().copied()).collect()
    }

    fn fill(&mut self, v: f64) {
        for t in self.tensors_mut() {
            t.fill(v);
        }
    }
}

/// Affine layer `y = x W + b` with `W` of shape `(fan_in, fan_out)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    /// Uniform `+-1/sqrt(fan_in)` initialisation.
    pub fn new<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
        let b = Array1::from_shape_fn(fan_out, |_| rng.random_range(-bound..bound));
        Self { w, b }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { w: Array2::zeros((fan_in, fan_out)), b: Array1::zeros(fan_out) }
    }

    pub fn fan_in(&self) -> usize {
        self.w.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulate parameter gradients into `grad`; return `dL/dx` if asked.
    pub fn backward(
        &self,
        x: ArrayView2<f64>,
        dy: ArrayView2<f64>,
        grad: &mut Linear,
        need_dx: bool,
    ) -> Option<Array2<f64>> {
        grad.w += &x.t().dot(&dy);
        grad.b += &dy.sum_axis(Axis(0));
        need_dx.then(|| dy.dot(&self.w.t()))
    }
}

impl Params for Linear {
    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        vec![
            ("w".into(), self.w.shape().to_vec(), self.w.as_slice().expect("standard layout")),
            ("b".into(), self.b.shape().to_vec(), self.b.as_slice().expect("standard layout")),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_slice_mut().expect("standard layout"), self.b.as_slice_mut().expect("standard layout")]
    }
}

fn prefixed<'a>(prefix: &str, ts: Vec<(String, Vec<usize>, &'a [f64])>) -> Vec<(String, Vec<usize>, &'a [f64])> {
    ts.into_iter().map(|(n, s, v)| (format!("{prefix}.{n}"), s, v)).collect()
}

/// ReLU multilayer perceptron with a linear output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Inputs to every layer, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct MlpCache {
    inputs: Vec<Array2<f64>>,
}

impl Mlp {
    /// `sizes = [in, h1, ..., out]`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        Self { layers: sizes.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect() }
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| Linear::zeros(l.fan_in(), l.fan_out())).collect() }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").fan_out()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, MlpCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(h.view());
            if i + 1 < self.layers.len() {
                y.mapv_inplace(|v| v.max(0.0));
            }
            inputs.push(h);
            h = y;
        }
        (h, MlpCache { inputs })
    }

    /// Accumulate gradients of `sum(dy * y)` into `grad` and return `dL/dx`.
    pub fn backward(&self, cache: &MlpCache, dy: Array2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let mut d = dy;
        for i in (0..self.layers.len()).rev() {
            let x = &cache.inputs[i];
            let dx = self.layers[i].backward(x.view(), d.view(), &mut grad.layers[i], true).expect("requested");
            d = if i > 0 {
                let mut dx = dx;
                dx.zip_mut_with(x, |g, &a| {
                    if a <= 0.0 {
                        *g = 0.0
                    }
                });
                dx
            } else {
                dx
            };
        }
        d
    }
}

impl Params for Mlp {
    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        self.layers.iter().enumerate().flat_map(|(i, l)| prefixed(&i.to_string(), l.tensors())).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

/// Geometry of a [`ConvEncoder`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub side: usize,
    pub channels: usize,
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
    pub layers: usize,
    pub embed: usize,
}

impl ConvSpec {
    /// Spatial side after each convolution (valid padding).
    pub fn sides(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.layers);
        let mut s = self.side;
        for _ in 0..self.layers {
            s = (s - self.kernel) / self.stride + 1;
            out.push(s);
        }
        out
    }

    pub fn valid(&self) -> bool {
        let mut s = self.side;
        for _ in 0..self.layers {
            if s < self.kernel || self.stride == 0 {
                return false;
            }
            s = (s - self.kernel) / self.stride + 1;
        }
        self.layers > 0 && self.filters > 0 && self.channels > 0 && self.embed > 0
    }

    pub fn input_len(&self) -> usize {
        self.side * self.side * self.channels
    }
}

/// ReLU conv stack followed by a linear projection and `tanh`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvEncoder {
    pub spec: ConvSpec,
    /// Kernel matrices of shape `(kernel * kernel * c_in, filters)`.
    pub convs: Vec<Linear>,
    pub proj: Linear,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    batch: usize,
    /// im2col matrices per layer.
    cols: Vec<Array2<f64>>,
    /// Post-ReLU activations per layer, `(batch * side^2, filters)`.
    acts: Vec<Array2<f64>>,
    /// `tanh` output.
    out: Array2<f64>,
}

fn im2col(x: &[f64], batch: usize, side: usize, c: usize, k: usize, stride: usize) -> Array2<f64> {
    let o = (side - k) / stride + 1;
    let kk = k * k * c;
    let mut cols = vec![0.0; batch * o * o * kk];
    for n in 0..batch {
        for oy in 0..o {
            for ox in 0..o {
                let row = ((n * o + oy) * o + ox) * kk;
                for ky in 0..k {
                    let src = ((n * side + oy * stride + ky) * side + ox * stride) * c;
                    let dst = row + ky * k * c;
                    cols[dst..dst + k * c].copy_from_slice(&x[src..src + k * c]);
                }
            }
        }
    }
    Array2::from_shape_vec((batch * o * o, kk), cols).expect("consistent shape")
}

fn col2im(cols: &Array2<f64>, batch: usize, side: usize, c: usize, k: usize, stride: usize) -> Vec<f64> {
    let o = (side - k) / stride + 1;
    let kk = k * k * c;
    let src = cols.as_slice().expect("standard layout");
    let mut x = vec![0.0; batch * side * side * c];
    for n in 0..batch {
        for oy in 0..o {
            for ox in 0..o {
                let row = ((n * o + oy) * o + ox) * kk;
                for ky in 0..k {
                    let dst = ((n * side + oy * stride + ky) * side + ox * stride) * c;
                    let from = row + ky * k * c;
                    for (d, s) in x[dst..dst + k * c].iter_mut().zip(&src[from..from + k * c]) {
                        *d += s;
                    }
                }
            }
        }
    }
    x
}

impl ConvEncoder {
    pub fn new<R: Rng + ?Sized>(spec: ConvSpec, rng: &mut R) -> Self {
        assert!(spec.valid(), "invalid conv geometry {spec:?}");
        let mut convs = Vec::with_capacity(spec.layers);
        let mut c_in = spec.channels;
        for _ in 0..spec.layers {
            convs.push(Linear::new(spec.kernel * spec.kernel * c_in, spec.filters, rng));
            c_in = spec.filters;
        }
        let last = *spec.sides().last().expect("layers > 0");
        let proj = Linear::new(last * last * spec.filters, spec.embed, rng);
        Self { spec, convs, proj }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            spec: self.spec,
            convs: self.convs.iter().map(|l| Linear::zeros(l.fan_in(), l.fan_out())).collect(),
            proj: Linear::zeros(self.proj.fan_in(), self.proj.fan_out()),
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    pub fn forward_cached(&self, x: ArrayView2<f64>) -> (Array2<f64>, ConvCache) {
        let spec = self.spec;
        let batch = x.nrows();
        assert_eq!(x.ncols(), spec.input_len(), "encoder input width");
        let x = x.as_standard_layout();
        let mut cols = Vec::with_capacity(spec.layers);
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(spec.layers);
        let mut side = spec.side;
        let mut c = spec.channels;
        for (i, conv) in self.convs.iter().enumerate() {
            let input: &[f64] = if i == 0 {
                x.as_slice().expect("standard layout")
            } else {
                acts[i - 1].as_slice().expect("standard layout")
            };
            let col = im2col(input, batch, side, c, spec.kernel, spec.stride);
            let mut y = conv.forward(col.view());
            y.mapv_inplace(|v| v.max(0.0));
            cols.push(col);
            acts.push(y);
            side = (side - spec.kernel) / spec.stride + 1;
            c = spec.filters;
        }
        let last = acts.last().expect("layers > 0");
        let flat = last.view().into_shape_with_order((batch, side * side * c)).expect("contiguous");
        let mut out = self.proj.forward(flat);
        out.mapv_inplace(f64::tanh);
        (out.clone(), ConvCache { batch, cols, acts, out })
    }

    /// Accumulate parameter gradients for upstream gradient `dy` on the
    /// embedding. The input gradient is not needed and is not computed.
    pub fn backward(&self, cache: &ConvCache, dy: ArrayView2<f64>, grad: &mut ConvEncoder) {
        let spec = self.spec;
        let batch = cache.batch;
        let sides = spec.sides();
        let mut d_pre = dy.as_standard_layout().into_owned();
        d_pre.zip_mut_with(&cache.out, |g, &y| *g *= 1.0 - y * y);
        let last = cache.acts.last().expect("layers > 0");
        let s_last = *sides.last().expect("layers > 0");
        let flat = last.view().into_shape_with_order((batch, s_last * s_last * spec.filters)).expect("contiguous");
        let d_flat = self.proj.backward(flat, d_pre.view(), &mut grad.proj, true).expect("requested");
        let mut d = d_flat
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((batch * s_last * s_last, spec.filters))
            .expect("contiguous");
        for i in (0..spec.layers).rev() {
            d.zip_mut_with(&cache.acts[i], |g, &a| {
                if a <= 0.0 {
                    *g = 0.0
                }
            });
            let need_dx = i > 0;
            let dcols = self.convs[i].backward(cache.cols[i].view(), d.view(), &mut grad.convs[i], need_dx);
            if let Some(dcols) = dcols {
                let side_in = sides[i - 1];
                let dx = col2im(&dcols, batch, side_in, spec.filters, spec.kernel, spec.stride);
                d = Array2::from_shape_vec((batch * side_in * side_in, spec.filters), dx).expect("consistent shape");
            }
        }
    }
}

impl Params for ConvEncoder {
    fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<_> =
            self.convs.iter().enumerate().flat_map(|(i, l)| prefixed(&format!("conv{i}"), l.tensors())).collect();
        out.extend(prefixed("proj", self.proj.tensors()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = self.convs.iter_mut().flat_map(|l| l.tensors_mut()).collect();
        out.extend(self.proj.tensors_mut());
        out
    }
}

/// `target <- (1 - tau) target + tau source`.
pub fn polyak<P: Params>(target: &mut P, source: &P, tau: f64) {
    let src = source.tensors();
    for (t, (_, _, s)) in target.tensors_mut().into_iter().zip(src) {
        for (a, b) in t.iter_mut().zip(s) {
            *a += tau * (b - *a);
        }
    }
}

/// Euclidean distance between two parameter sets of identical layout.
pub fn param_distance<P: Params>(a: &P, b: &P) -> f64 {
    a.flat().iter().zip(b.flat()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Adam over an ordered list of tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    #[serde(skip)]
    pub m: Vec<Vec<f64>>,
    #[serde(skip)]
    pub v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64, sizes: &[usize]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: Vec<&[f64]>) {
        assert_eq!(params.len(), self.m.len(), "Adam tensor count");
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let m = &mut self.m[k];
            let v = &mut self.v[k];
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}
