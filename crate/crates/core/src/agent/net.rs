//! Two conv layers and an MLP, with hand-written reverse mode.
//!
//! Input is a channel-last `rows x cols x channels` grid. Both conv layers
//! use stride 1, valid padding and ReLU; the hidden layer is dense with ReLU
//! and the head is linear. All parameters live in one flat vector so that
//! optimizers, checkpoints and gradient checks can treat them uniformly.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NetShape {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel: usize,
    pub hidden: usize,
    pub outputs: usize,
}

impl NetShape {
    pub fn new(rows: usize, cols: usize, channels: usize, outputs: usize) -> Self {
        Self {
            rows,
            cols,
            channels,
            conv1_filters: 8,
            conv2_filters: 16,
            kernel: 2,
            hidden: 32,
            outputs,
        }
    }

    fn conv1_out(&self) -> (usize, usize) {
        (self.rows + 1 - self.kernel, self.cols + 1 - self.kernel)
    }

    fn conv2_out(&self) -> (usize, usize) {
        let (r, c) = self.conv1_out();
        (r + 1 - self.kernel, c + 1 - self.kernel)
    }

    pub fn input_len(&self) -> usize {
        self.rows * self.cols * self.channels
    }

    fn flat_len(&self) -> usize {
        let (r, c) = self.conv2_out();
        r * c * self.conv2_filters
    }

    fn validate(&self) -> Result<()> {
        if self.rows < 2 * self.kernel - 1 || self.cols < 2 * self.kernel - 1 {
            return Err(Error::Shape(format!(
                "grid {}x{} too small for two {k}x{k} convolutions",
                self.rows,
                self.cols,
                k = self.kernel
            )));
        }
        if [self.channels, self.conv1_filters, self.conv2_filters, self.kernel, self.hidden, self.outputs]
            .contains(&0)
        {
            return Err(Error::Shape("zero-sized layer".into()));
        }
        Ok(())
    }

    fn layout(&self) -> [Range<usize>; 8] {
        let k2 = self.kernel * self.kernel;
        let sizes = [
            self.conv1_filters * k2 * self.channels,
            self.conv1_filters,
            self.conv2_filters * k2 * self.conv1_filters,
            self.conv2_filters,
            self.hidden * self.flat_len(),
            self.hidden,
            self.outputs * self.hidden,
            self.outputs,
        ];
        let mut start = 0;
        sizes.map(|len| {
            let r = start..start + len;
            start += len;
            r
        })
    }

    pub fn num_params(&self) -> usize {
        self.layout()[7].end
    }
}

/// Parameter groups, for masking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Conv1,
    Conv2,
    Hidden,
    Head,
}

impl Layer {
    fn index(self) -> usize {
        match self {
            Layer::Conv1 => 0,
            Layer::Conv2 => 1,
            Layer::Hidden => 2,
            Layer::Head => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    shape: NetShape,
    params: Vec<f64>,
}

/// Activations cached by [`Network::forward`].
#[derive(Debug, Clone)]
pub struct Forward {
    input: Vec<f64>,
    conv1: Vec<f64>,
    conv2: Vec<f64>,
    hidden: Vec<f64>,
    pub output: Vec<f64>,
}

impl Network {
    pub fn zeros(shape: NetShape) -> Result<Self> {
        shape.validate()?;
        Ok(Self {
            shape,
            params: vec![0.0; shape.num_params()],
        })
    }

    /// Weights uniform in `+-1/sqrt(fan_in)`, biases zero.
    pub fn init(shape: NetShape, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(shape)?;
        let k2 = shape.kernel * shape.kernel;
        let fan_ins = [
            k2 * shape.channels,
            k2 * shape.conv1_filters,
            shape.flat_len(),
            shape.hidden,
        ];
        let layout = shape.layout();
        for (layer, fan_in) in fan_ins.iter().enumerate() {
            let bound = 1.0 / (*fan_in as f64).sqrt();
            for w in &mut net.params[layout[2 * layer].clone()] {
                *w = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn from_params(shape: NetShape, params: Vec<f64>) -> Result<Self> {
        shape.validate()?;
        if params.len() != shape.num_params() {
            return Err(Error::Shape(format!(
                "{} parameters for a network of {}",
                params.len(),
                shape.num_params()
            )));
        }
        Ok(Self { shape, params })
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Ranges of the weights and the bias of a layer in the flat vector.
    pub fn layer_ranges(&self, layer: Layer) -> (Range<usize>, Range<usize>) {
        let layout = self.shape.layout();
        let i = layer.index();
        (layout[2 * i].clone(), layout[2 * i + 1].clone())
    }

    pub fn forward(&self, input: &[f64]) -> Result<Forward> {
        let s = &self.shape;
        if input.len() != s.input_len() {
            return Err(Error::Shape(format!(
                "input of {} values, network expects {}x{}x{}",
                input.len(),
                s.rows,
                s.cols,
                s.channels
            )));
        }
        let l = s.layout();
        let (r1, c1) = s.conv1_out();
        let conv1 = conv_forward(
            input,
            (s.rows, s.cols, s.channels),
            &self.params[l[0].clone()],
            &self.params[l[1].clone()],
            s.kernel,
        );
        let conv2 = conv_forward(
            &conv1,
            (r1, c1, s.conv1_filters),
            &self.params[l[2].clone()],
            &self.params[l[3].clone()],
            s.kernel,
        );
        let mut hidden = dense_forward(&conv2, &self.params[l[4].clone()], &self.params[l[5].clone()]);
        hidden.iter_mut().for_each(|h| *h = h.max(0.0));
        let output = dense_forward(&hidden, &self.params[l[6].clone()], &self.params[l[7].clone()]);
        Ok(Forward {
            input: input.to_vec(),
            conv1,
            conv2,
            hidden,
            output,
        })
    }

    /// Gradient of `upstream . output` with respect to every parameter.
    pub fn backward(&self, fwd: &Forward, upstream: &[f64]) -> Vec<f64> {
        self.backward_masked(fwd, upstream, &[])
    }

    /// Like [`Network::backward`], but layers listed in `frozen` get exactly
    /// zero gradient. Signals still flow through them to earlier layers.
    pub fn backward_masked(&self, fwd: &Forward, upstream: &[f64], frozen: &[Layer]) -> Vec<f64> {
        let mut grad = vec![0.0; self.params.len()];
        self.accumulate_backward(fwd, upstream, frozen, &mut grad);
        grad
    }

    /// Adds the gradient of `upstream . output` into `grad`.
    pub fn accumulate_backward(&self, fwd: &Forward, upstream: &[f64], frozen: &[Layer], grad: &mut [f64]) {
        assert_eq!(upstream.len(), self.shape.outputs, "upstream gradient width");
        let s = &self.shape;
        let l = s.layout();
        let live = |layer: Layer| !frozen.contains(&layer);
        let (r1, c1) = s.conv1_out();

        // Head.
        if live(Layer::Head) {
            let (w, b) = (l[6].clone(), l[7].clone());
            dense_param_grad(&fwd.hidden, upstream, &mut grad[w]);
            for (g, u) in grad[b].iter_mut().zip(upstream) {
                *g += u;
            }
        }
        let mut g_hidden = dense_input_grad(&self.params[l[6].clone()], upstream, s.hidden);
        relu_mask(&mut g_hidden, &fwd.hidden);
        if g_hidden.iter().all(|&g| g == 0.0) {
            return;
        }

        if live(Layer::Hidden) {
            dense_param_grad(&fwd.conv2, &g_hidden, &mut grad[l[4].clone()]);
            for (g, u) in grad[l[5].clone()].iter_mut().zip(&g_hidden) {
                *g += u;
            }
        }
        let mut g_conv2 = dense_input_grad(&self.params[l[4].clone()], &g_hidden, fwd.conv2.len());
        relu_mask(&mut g_conv2, &fwd.conv2);

        let (w2, rest) = grad.split_at_mut(l[3].start);
        let mut g_conv1 = conv_backward(
            &fwd.conv1,
            (r1, c1, s.conv1_filters),
            &self.params[l[2].clone()],
            s.kernel,
            &g_conv2,
            live(Layer::Conv2).then(|| (&mut w2[l[2].clone()], &mut rest[..l[3].len()])),
            true,
        );
        relu_mask(&mut g_conv1, &fwd.conv1);

        if live(Layer::Conv1) {
            let (w1, b1) = grad[..l[1].end].split_at_mut(l[1].start);
            conv_backward(
                &fwd.input,
                (s.rows, s.cols, s.channels),
                &self.params[l[0].clone()],
                s.kernel,
                &g_conv1,
                Some((w1, b1)),
                false,
            );
        }
    }
}

fn relu_mask(grad: &mut [f64], activation: &[f64]) {
    for (g, a) in grad.iter_mut().zip(activation) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
}

fn conv_forward(
    input: &[f64],
    (rows, cols, cin): (usize, usize, usize),
    weights: &[f64],
    bias: &[f64],
    k: usize,
) -> Vec<f64> {
    let (ro, co, cout) = (rows + 1 - k, cols + 1 - k, bias.len());
    let mut out = vec![0.0; ro * co * cout];
    let patch = k * k * cin;
    for r in 0..ro {
        for c in 0..co {
            let o = &mut out[(r * co + c) * cout..(r * co + c + 1) * cout];
            for (f, slot) in o.iter_mut().enumerate() {
                let w = &weights[f * patch..(f + 1) * patch];
                let mut acc = bias[f];
                for dr in 0..k {
                    let x = &input[((r + dr) * cols + c) * cin..((r + dr) * cols + c + k) * cin];
                    let wk = &w[dr * k * cin..(dr + 1) * k * cin];
                    acc += x.iter().zip(wk).map(|(a, b)| a * b).sum::<f64>();
                }
                *slot = acc.max(0.0);
            }
        }
    }
    out
}

/// Backpropagates through a conv layer given the gradient at its
/// pre-activation. Accumulates parameter gradients when `param_grad` is
/// given and returns the input gradient when `want_input` is set.
fn conv_backward(
    input: &[f64],
    (rows, cols, cin): (usize, usize, usize),
    weights: &[f64],
    k: usize,
    g_out: &[f64],
    mut param_grad: Option<(&mut [f64], &mut [f64])>,
    want_input: bool,
) -> Vec<f64> {
    let patch = k * k * cin;
    let cout = weights.len() / patch;
    let (ro, co) = (rows + 1 - k, cols + 1 - k);
    let mut g_in = if want_input { vec![0.0; input.len()] } else { Vec::new() };
    for r in 0..ro {
        for c in 0..co {
            for f in 0..cout {
                let g = g_out[(r * co + c) * cout + f];
                if g == 0.0 {
                    continue;
                }
                for dr in 0..k {
                    let base = ((r + dr) * cols + c) * cin;
                    let wbase = f * patch + dr * k * cin;
                    if let Some((gw, gb)) = param_grad.as_mut() {
                        if dr == 0 {
                            gb[f] += g;
                        }
                        for (gw, x) in gw[wbase..wbase + k * cin].iter_mut().zip(&input[base..base + k * cin]) {
                            *gw += g * x;
                        }
                    }
                    if want_input {
                        for (gi, w) in g_in[base..base + k * cin].iter_mut().zip(&weights[wbase..wbase + k * cin]) {
                            *gi += g * w;
                        }
                    }
                }
            }
        }
    }
    g_in
}

fn dense_forward(input: &[f64], weights: &[f64], bias: &[f64]) -> Vec<f64> {
    let n_in = input.len();
    bias.iter()
        .enumerate()
        .map(|(o, b)| b + weights[o * n_in..(o + 1) * n_in].iter().zip(input).map(|(w, x)| w * x).sum::<f64>())
        .collect()
}

fn dense_param_grad(input: &[f64], g_out: &[f64], grad_w: &mut [f64]) {
    let n_in = input.len();
    for (o, g) in g_out.iter().enumerate() {
        if *g == 0.0 {
            continue;
        }
        for (gw, x) in grad_w[o * n_in..(o + 1) * n_in].iter_mut().zip(input) {
            *gw += g * x;
        }
    }
}

fn dense_input_grad(weights: &[f64], g_out: &[f64], n_in: usize) -> Vec<f64> {
    let mut g_in = vec![0.0; n_in];
    for (o, g) in g_out.iter().enumerate() {
        if *g == 0.0 {
            continue;
        }
        for (gi, w) in g_in.iter_mut().zip(&weights[o * n_in..(o + 1) * n_in]) {
            *gi += g * w;
        }
    }
    g_in
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> NetShape {
        NetShape::new(6, 5, 3, 3)
    }

    fn input(shape: &NetShape, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..shape.input_len()).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let shape = small();
        let net = Network::zeros(shape).unwrap();
        let out = net.forward(&input(&shape, 1)).unwrap().output;
        assert_eq!(out, vec![0.0; 3]);
    }

    #[test]
    fn head_is_linear() {
        let shape = small();
        let mut net = Network::init(shape, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let x = input(&shape, 4);
        let before = net.forward(&x).unwrap().output;
        let (w, b) = net.layer_ranges(Layer::Head);
        for p in &mut net.params_mut()[w.start..b.end] {
            *p *= 2.0;
        }
        let after = net.forward(&x).unwrap().output;
        for (a, b) in after.iter().zip(&before) {
            assert!((a - 2.0 * b).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let net = Network::zeros(small()).unwrap();
        assert!(net.forward(&[0.0; 5]).is_err());
        assert!(Network::zeros(NetShape::new(2, 5, 3, 1)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let shape = small();
        let net = Network::init(shape, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let fwd = net.forward(&input(&shape, 6)).unwrap();
        assert!(net.backward(&fwd, &[0.0; 3]).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn frozen_layer_gets_exact_zero() {
        let shape = small();
        let net = Network::init(shape, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let fwd = net.forward(&input(&shape, 8)).unwrap();
        let full = net.backward(&fwd, &[1.0, -0.5, 0.25]);
        let masked = net.backward_masked(&fwd, &[1.0, -0.5, 0.25], &[Layer::Conv2]);
        let (w, b) = net.layer_ranges(Layer::Conv2);
        assert!(masked[w.start..b.end].iter().all(|&g| g == 0.0));
        assert!(full[w.start..b.end].iter().any(|&g| g != 0.0));
        let (w1, b1) = net.layer_ranges(Layer::Conv1);
        assert_eq!(masked[w1.start..b1.end], full[w1.start..b1.end]);
    }

    #[test]
    fn golden_forward() {
        // Regression oracle: output of a seeded network on a seeded input,
        // recorded once from this implementation.
        let shape = small();
        let net = Network::init(shape, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let out = net.forward(&input(&shape, 12)).unwrap().output;
        let golden = GOLDEN;
        for (o, g) in out.iter().zip(golden) {
            assert!((o - g).abs() < 1e-12, "{out:?}");
        }
    }

    const GOLDEN: [f64; 3] = [0.02532129700142609, -0.027692374215163094, -0.0028672383627629024];

    #[test]
    fn backward_matches_finite_differences() {
        let shape = NetShape::new(32, 20, 3, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let net = Network::init(shape, &mut rng).unwrap();
        let x = input(&shape, 22);
        let upstream = [0.7, -1.3, 0.4];
        let fwd = net.forward(&x).unwrap();
        let grad = net.backward(&fwd, &upstream);
        let objective = |n: &Network| -> f64 {
            n.forward(&x).unwrap().output.iter().zip(&upstream).map(|(o, u)| o * u).sum()
        };
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        // Cover every layer: sample indices from each parameter block.
        let blocks = shape.layout();
        for _ in 0..200 {
            let block = &blocks[rng.random_range(0..8)];
            let i = rng.random_range(block.clone());
            let mut plus = net.clone();
            plus.params_mut()[i] += h;
            let mut minus = net.clone();
            minus.params_mut()[i] -= h;
            let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
            let denom = fd.abs().max(grad[i].abs());
            if denom < 1e-10 {
                assert!((fd - grad[i]).abs() < 1e-10);
                continue;
            }
            worst = worst.max((fd - grad[i]).abs() / denom);
            checked += 1;
        }
        assert!(checked > 100);
        assert!(worst < 1e-4, "max relative error {worst}");
    }
}
