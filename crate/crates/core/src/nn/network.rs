use std::ops::Range;

use rand::Rng;
use rayon::prelude::*;

use super::layer::Layer;
use crate::batch::{ImageBatch, ItemShape};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

/// Items per parallel work unit. Fixed so results never depend on the pool size.
const PAR_CHUNK: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Feed-forward network over [`ImageBatch`]es with a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    params: Vec<f64>,
    layout: Vec<Range<usize>>,
}

fn layout_for(layers: &[Layer]) -> Vec<Range<usize>> {
    let mut offset = 0;
    layers
        .iter()
        .map(|l| {
            let r = offset..offset + l.param_count();
            offset = r.end;
            r
        })
        .collect()
}

impl Network {
    /// Builds a network with all parameters set to zero.
    pub fn zeros(layers: Vec<Layer>) -> Result<Self> {
        for (i, l) in layers.iter().enumerate() {
            l.validate(i)?;
        }
        let layout = layout_for(&layers);
        let total = layout.last().map_or(0, |r| r.end);
        Ok(Self {
            layers,
            params: vec![0.0; total],
            layout,
        })
    }

    /// He-uniform weights, zero biases.
    pub fn init(layers: Vec<Layer>, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(layers)?;
        let mut rng = rng_from_seed(seed);
        for (layer, range) in net.layers.iter().zip(&net.layout) {
            let (fan_in, weights) = match *layer {
                Layer::Dense { inputs, outputs } => (inputs, inputs * outputs),
                Layer::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => (
                    in_channels * kernel * kernel,
                    out_channels * in_channels * kernel * kernel,
                ),
                _ => continue,
            };
            let limit = (6.0 / fan_in as f64).sqrt();
            for w in &mut net.params[range.start..range.start + weights] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(net)
    }

    pub fn from_parts(layers: Vec<Layer>, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(layers)?;
        if params.len() != net.params.len() {
            return Err(Error::Length {
                expected: net.params.len(),
                got: params.len(),
            });
        }
        net.params = params;
        Ok(net)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn param_layout(&self) -> &[Range<usize>] {
        &self.layout
    }

    /// Output item shape for an input item shape, or the first offending layer.
    pub fn output_shape(&self, input: ItemShape) -> Result<ItemShape> {
        if input.is_empty() {
            return Err(Error::Shape(format!("empty input item {input}")));
        }
        self.layers
            .iter()
            .enumerate()
            .try_fold(input, |shape, (i, l)| l.output_shape(i, shape))
    }

    /// Forward pass without recording intermediates.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        input: &ImageBatch,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ImageBatch> {
        self.run(input, mode, rng, None)
    }

    /// Deterministic evaluation-mode forward pass.
    pub fn forward_eval(&self, input: &ImageBatch) -> Result<ImageBatch> {
        // Eval mode never draws from the generator.
        let mut rng = rng_from_seed(0);
        self.run(input, Mode::Eval, &mut rng, None)
    }

    /// Forward pass recording what [`Network::backward`] needs into `tape`.
    pub fn forward_with_tape<R: Rng + ?Sized>(
        &self,
        input: &ImageBatch,
        mode: Mode,
        rng: &mut R,
        tape: &mut Tape,
    ) -> Result<ImageBatch> {
        tape.clear();
        self.run(input, mode, rng, Some(tape))
    }

    fn run<R: Rng + ?Sized>(
        &self,
        input: &ImageBatch,
        mode: Mode,
        rng: &mut R,
        mut tape: Option<&mut Tape>,
    ) -> Result<ImageBatch> {
        self.output_shape(input.shape())?;
        let n = input.len();
        let mut current = input.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let params = &self.params[self.layout[i].clone()];
            let out_shape = layer.output_shape(i, current.shape())?;
            let mut mask = None;
            let next = match *layer {
                Layer::Dense { inputs, outputs } => {
                    let x = current.as_slice();
                    let (w, b) = params.split_at(inputs * outputs);
                    let mut out = vec![0.0; n * outputs];
                    out.par_chunks_mut(outputs * PAR_CHUNK)
                        .enumerate()
                        .for_each(|(c, block)| {
                            for (j, row) in block.chunks_exact_mut(outputs).enumerate() {
                                let s = c * PAR_CHUNK + j;
                                let xi = &x[s * inputs..(s + 1) * inputs];
                                for (o, y) in row.iter_mut().enumerate() {
                                    let wo = &w[o * inputs..(o + 1) * inputs];
                                    *y = b[o] + dot(wo, xi);
                                }
                            }
                        });
                    ImageBatch::from_vec(n, out_shape, out)?
                }
                Layer::Conv { kernel, stride, .. } => {
                    let out = conv_forward(&current, out_shape, params, kernel, stride);
                    ImageBatch::from_vec(n, out_shape, out)?
                }
                Layer::Activation(act) => current.map(|v| act.apply(v)),
                Layer::Dropout { rate } => match mode {
                    Mode::Eval => current.clone(),
                    Mode::Train => {
                        let keep = 1.0 / (1.0 - rate);
                        let m: Vec<f64> = (0..current.as_slice().len())
                            .map(|_| if rng.random::<f64>() >= rate { keep } else { 0.0 })
                            .collect();
                        let mut out = current.clone();
                        for (v, k) in out.as_mut_slice().iter_mut().zip(&m) {
                            *v *= k;
                        }
                        mask = Some(m);
                        out
                    }
                },
                Layer::Flatten => current.clone().reshaped(out_shape)?,
                Layer::GlobalAvgPool => {
                    let shape = current.shape();
                    let plane = shape.plane();
                    let data: Vec<f64> = current
                        .as_slice()
                        .chunks_exact(plane)
                        .map(|p| p.iter().sum::<f64>() / plane as f64)
                        .collect();
                    ImageBatch::from_vec(n, out_shape, data)?
                }
            };
            if let Some(t) = tape.as_deref_mut() {
                t.entries.push(TapeEntry {
                    input: current,
                    mask,
                });
            }
            current = next;
        }
        if let Some(t) = tape {
            t.batch = Some((n, input.shape()));
        }
        Ok(current)
    }

    /// Backpropagates `upstream` (gradient of a scalar loss w.r.t. the output
    /// of the last forward pass recorded in `tape`).
    pub fn backward(&self, tape: &Tape, upstream: &ImageBatch) -> Result<Gradients> {
        self.backward_impl(tape, upstream, true)
    }

    fn backward_impl(
        &self,
        tape: &Tape,
        upstream: &ImageBatch,
        want_params: bool,
    ) -> Result<Gradients> {
        let (n, in_shape) = tape.batch.ok_or(Error::MissingCache)?;
        if tape.entries.len() != self.layers.len() {
            return Err(Error::MissingCache);
        }
        let out_shape = self.output_shape(in_shape)?;
        if upstream.len() != n || upstream.shape().len() != out_shape.len() {
            return Err(Error::Shape(format!(
                "upstream gradient {}x{} does not match output {}x{}",
                upstream.len(),
                upstream.shape(),
                n,
                out_shape
            )));
        }
        let mut grads = vec![0.0; if want_params { self.params.len() } else { 0 }];
        let mut g = upstream.as_slice().to_vec();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let entry = &tape.entries[i];
            let x = entry.input.as_slice();
            let shape = entry.input.shape();
            let params = &self.params[self.layout[i].clone()];
            g = match *layer {
                Layer::Dense { inputs, outputs } => {
                    let (w, _) = params.split_at(inputs * outputs);
                    if want_params {
                        let (gw, gb) = grads[self.layout[i].clone()].split_at_mut(inputs * outputs);
                        for s in 0..n {
                            let gs = &g[s * outputs..(s + 1) * outputs];
                            let xs = &x[s * inputs..(s + 1) * inputs];
                            for (o, &go) in gs.iter().enumerate() {
                                gb[o] += go;
                                if go != 0.0 {
                                    for (gwv, xv) in gw[o * inputs..(o + 1) * inputs].iter_mut().zip(xs) {
                                        *gwv += go * xv;
                                    }
                                }
                            }
                        }
                    }
                    let mut dx = vec![0.0; n * inputs];
                    for s in 0..n {
                        let gs = &g[s * outputs..(s + 1) * outputs];
                        let dxs = &mut dx[s * inputs..(s + 1) * inputs];
                        for (o, &go) in gs.iter().enumerate() {
                            if go != 0.0 {
                                for (d, wv) in dxs.iter_mut().zip(&w[o * inputs..(o + 1) * inputs]) {
                                    *d += go * wv;
                                }
                            }
                        }
                    }
                    dx
                }
                Layer::Conv { kernel, stride, .. } => {
                    let out = layer.output_shape(i, shape)?;
                    let pgrads = if want_params {
                        Some(&mut grads[self.layout[i].clone()])
                    } else {
                        None
                    };
                    conv_backward(&entry.input, out, params, kernel, stride, &g, pgrads)
                }
                Layer::Activation(act) => g.iter().zip(x).map(|(gv, &xv)| gv * act.derivative(xv)).collect(),
                Layer::Dropout { .. } => match &entry.mask {
                    Some(m) => g.iter().zip(m).map(|(gv, mv)| gv * mv).collect(),
                    None => g,
                },
                Layer::Flatten => g,
                Layer::GlobalAvgPool => {
                    let plane = shape.plane();
                    let mut dx = vec![0.0; x.len()];
                    for (block, gv) in dx.chunks_exact_mut(plane).zip(&g) {
                        block.fill(gv / plane as f64);
                    }
                    dx
                }
            };
        }
        Ok(Gradients {
            params: grads,
            input: ImageBatch::from_vec(n, in_shape, g)?,
        })
    }

    /// Gradient of `sum(upstream * f(x))` with respect to the input, evaluated
    /// in eval mode. Items are processed in fixed-size parallel chunks.
    pub fn input_gradient(&self, input: &ImageBatch, upstream: &ImageBatch) -> Result<ImageBatch> {
        if input.len() != upstream.len() {
            return Err(Error::Length {
                expected: input.len(),
                got: upstream.len(),
            });
        }
        let in_shape = input.shape();
        let up_shape = upstream.shape();
        let idx: Vec<usize> = (0..input.len()).collect();
        let parts: Vec<Result<Vec<f64>>> = idx
            .par_chunks(PAR_CHUNK)
            .map(|chunk| {
                let x = input.select(chunk);
                let u = upstream.select(chunk);
                let mut tape = Tape::default();
                let mut rng = rng_from_seed(0);
                self.forward_with_tape(&x, Mode::Eval, &mut rng, &mut tape)?;
                Ok(self.backward_impl(&tape, &u, false)?.input.into_vec())
            })
            .collect();
        let mut data = Vec::with_capacity(input.as_slice().len());
        for p in parts {
            data.extend(p?);
        }
        debug_assert_eq!(up_shape.len() * input.len(), upstream.as_slice().len());
        ImageBatch::from_vec(input.len(), in_shape, data)
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn conv_forward(input: &ImageBatch, out: ItemShape, params: &[f64], kernel: usize, stride: usize) -> Vec<f64> {
    let inp = input.shape();
    let (cin, h, w) = (inp.channels, inp.height, inp.width);
    let pad = (kernel / 2) as isize;
    let wlen = out.channels * cin * kernel * kernel;
    let (weights, bias) = params.split_at(wlen);
    let x = input.as_slice();
    let mut result = vec![0.0; input.len() * out.len()];
    result
        .par_chunks_mut(out.len())
        .enumerate()
        .for_each(|(s, ys)| {
            let xs = &x[s * inp.len()..(s + 1) * inp.len()];
            for oc in 0..out.channels {
                for oy in 0..out.height {
                    for ox in 0..out.width {
                        let mut acc = bias[oc];
                        for ic in 0..cin {
                            let wbase = ((oc * cin + ic) * kernel) * kernel;
                            let xbase = ic * h * w;
                            for ky in 0..kernel {
                                let iy = (oy * stride) as isize + ky as isize - pad;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kernel {
                                    let ix = (ox * stride) as isize + kx as isize - pad;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    acc += weights[wbase + ky * kernel + kx]
                                        * xs[xbase + iy as usize * w + ix as usize];
                                }
                            }
                        }
                        ys[(oc * out.height + oy) * out.width + ox] = acc;
                    }
                }
            }
        });
    result
}

fn conv_backward(
    input: &ImageBatch,
    out: ItemShape,
    params: &[f64],
    kernel: usize,
    stride: usize,
    grad_out: &[f64],
    mut pgrads: Option<&mut [f64]>,
) -> Vec<f64> {
    let inp = input.shape();
    let (cin, h, w) = (inp.channels, inp.height, inp.width);
    let pad = (kernel / 2) as isize;
    let wlen = out.channels * cin * kernel * kernel;
    let weights = &params[..wlen];
    let x = input.as_slice();
    let mut dx = vec![0.0; x.len()];
    for s in 0..input.len() {
        let xs = &x[s * inp.len()..(s + 1) * inp.len()];
        let gs = &grad_out[s * out.len()..(s + 1) * out.len()];
        let dxs = &mut dx[s * inp.len()..(s + 1) * inp.len()];
        for oc in 0..out.channels {
            for oy in 0..out.height {
                for ox in 0..out.width {
                    let g = gs[(oc * out.height + oy) * out.width + ox];
                    if g == 0.0 {
                        continue;
                    }
                    if let Some(pg) = pgrads.as_deref_mut() {
                        pg[wlen + oc] += g;
                    }
                    for ic in 0..cin {
                        let wbase = ((oc * cin + ic) * kernel) * kernel;
                        let xbase = ic * h * w;
                        for ky in 0..kernel {
                            let iy = (oy * stride) as isize + ky as isize - pad;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kernel {
                                let ix = (ox * stride) as isize + kx as isize - pad;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let xi = xbase + iy as usize * w + ix as usize;
                                let wi = wbase + ky * kernel + kx;
                                if let Some(pg) = pgrads.as_deref_mut() {
                                    pg[wi] += g * xs[xi];
                                }
                                dxs[xi] += g * weights[wi];
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

struct TapeEntry {
    input: ImageBatch,
    mask: Option<Vec<f64>>,
}

/// Intermediates recorded by [`Network::forward_with_tape`].
#[derive(Default)]
pub struct Tape {
    entries: Vec<TapeEntry>,
    batch: Option<(usize, ItemShape)>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
        self.batch = None;
    }

    pub fn is_empty(&self) -> bool {
        self.batch.is_none()
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    /// Same length and layout as [`Network::params`].
    pub params: Vec<f64>,
    pub input: ImageBatch,
}
