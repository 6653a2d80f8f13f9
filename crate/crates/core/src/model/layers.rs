//! Layers with hand-written forward and backward passes.
//!
//! Activations travel as `batch × features` matrices; image activations are
//! flattened channel-major (C×H×W) per row.

use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub(crate) struct Param {
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
}

impl Param {
    fn new(value: Array2<f64>) -> Self {
        let grad = Array2::zeros(value.raw_dim());
        Self { value, grad }
    }

    fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut ChaCha8Rng) -> Self {
        Self::new(Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound)))
    }

    fn filled(rows: usize, cols: usize, v: f64) -> Self {
        Self::new(Array2::from_elem((rows, cols), v))
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Dense {
    weight: Param,
    bias: Param,
}

impl Dense {
    pub fn new(inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        Self {
            weight: Param::uniform(inputs, outputs, bound, rng),
            bias: Param::uniform(1, outputs, bound, rng),
        }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.weight.value) + &self.bias.value
    }

    fn backward(&mut self, input: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        self.weight.grad += &input.t().dot(dy);
        self.bias.grad += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.weight.value.t())
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Geometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl Geometry {
    pub fn area(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.channels * self.area()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Conv2d {
    input: Geometry,
    out_channels: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
    /// `out_channels × (in_channels·k·k)`
    weight: Param,
    bias: Option<Param>,
}

impl Conv2d {
    pub fn new(
        input: Geometry,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = input.channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let weight = Param::uniform(out_channels, fan_in, bound, rng);
        let bias = bias.then(|| Param::uniform(1, out_channels, bound, rng));
        Self {
            input,
            out_channels,
            kernel,
            stride,
            pad,
            out_h: super::spec::conv_out(input.height, kernel, stride, pad),
            out_w: super::spec::conv_out(input.width, kernel, stride, pad),
            weight,
            bias,
        }
    }

    pub fn output(&self) -> Geometry {
        Geometry {
            channels: self.out_channels,
            height: self.out_h,
            width: self.out_w,
        }
    }

    fn im2col(&self, x: &Array2<f64>) -> Array2<f64> {
        let batch = x.nrows();
        let g = self.input;
        let k = self.kernel;
        let out_area = self.out_h * self.out_w;
        let ncol = batch * out_area;
        let mut cols = vec![0.0; g.channels * k * k * ncol];
        let xs = x.as_slice().expect("standard layout");
        for ci in 0..g.channels {
            for ky in 0..k {
                for kx in 0..k {
                    let r = (ci * k + ky) * k + kx;
                    let row = &mut cols[r * ncol..(r + 1) * ncol];
                    for b in 0..batch {
                        let plane = &xs[b * g.len() + ci * g.area()..][..g.area()];
                        for oy in 0..self.out_h {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= g.height as isize {
                                continue;
                            }
                            let src = &plane[iy as usize * g.width..][..g.width];
                            let dst = &mut row[b * out_area + oy * self.out_w..][..self.out_w];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < g.width as isize {
                                    *d = src[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        Array2::from_shape_vec((g.channels * k * k, ncol), cols).expect("im2col shape")
    }

    fn col2im(&self, dcols: &Array2<f64>, batch: usize) -> Array2<f64> {
        let g = self.input;
        let k = self.kernel;
        let out_area = self.out_h * self.out_w;
        let ncol = batch * out_area;
        let mut dx = vec![0.0; batch * g.len()];
        let dc = dcols.as_slice().expect("standard layout");
        for ci in 0..g.channels {
            for ky in 0..k {
                for kx in 0..k {
                    let r = (ci * k + ky) * k + kx;
                    let row = &dc[r * ncol..(r + 1) * ncol];
                    for b in 0..batch {
                        let plane = &mut dx[b * g.len() + ci * g.area()..][..g.area()];
                        for oy in 0..self.out_h {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= g.height as isize {
                                continue;
                            }
                            let dst = &mut plane[iy as usize * g.width..][..g.width];
                            let src = &row[b * out_area + oy * self.out_w..][..self.out_w];
                            for (ox, s) in src.iter().enumerate() {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix >= 0 && ix < g.width as isize {
                                    dst[ix as usize] += s;
                                }
                            }
                        }
                    }
                }
            }
        }
        Array2::from_shape_vec((batch, g.len()), dx).expect("col2im shape")
    }

    fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>) {
        let batch = x.nrows();
        let cols = self.im2col(x);
        let mut out = self.weight.value.dot(&cols);
        if let Some(b) = &self.bias {
            out += &b.value.t();
        }
        // (cout, batch·area) -> (batch, cout·area)
        let area = self.out_h * self.out_w;
        let y = out
            .into_shape_with_order((self.out_channels, batch, area))
            .expect("conv output shape")
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((batch, self.out_channels * area))
            .expect("conv output shape");
        (y, cols)
    }

    fn backward(&mut self, cols: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
        let batch = dy.nrows();
        let area = self.out_h * self.out_w;
        let dout = dy
            .view()
            .into_shape_with_order((batch, self.out_channels, area))
            .expect("conv grad shape")
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .into_owned()
            .into_shape_with_order((self.out_channels, batch * area))
            .expect("conv grad shape");
        self.weight.grad += &dout.dot(&cols.t());
        if let Some(b) = &mut self.bias {
            b.grad += &dout.sum_axis(Axis(1)).insert_axis(Axis(0));
        }
        let dcols = self.weight.value.t().dot(&dout);
        self.col2im(&dcols, batch)
    }
}

#[derive(Debug, Clone)]
pub(crate) struct MaxPool2d {
    input: Geometry,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl MaxPool2d {
    pub fn new(input: Geometry, kernel: usize, stride: usize, pad: usize) -> Self {
        Self {
            input,
            kernel,
            stride,
            pad,
            out_h: super::spec::conv_out(input.height, kernel, stride, pad),
            out_w: super::spec::conv_out(input.width, kernel, stride, pad),
        }
    }

    pub fn output(&self) -> Geometry {
        Geometry {
            channels: self.input.channels,
            height: self.out_h,
            width: self.out_w,
        }
    }

    fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, Vec<u32>) {
        let g = self.input;
        let batch = x.nrows();
        let out_len = g.channels * self.out_h * self.out_w;
        let mut y = Array2::zeros((batch, out_len));
        let mut argmax = Vec::with_capacity(batch * out_len);
        for (xr, mut yr) in x.outer_iter().zip(y.outer_iter_mut()) {
            let mut o = 0;
            for c in 0..g.channels {
                for oy in 0..self.out_h {
                    for ox in 0..self.out_w {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_idx = 0usize;
                        for ky in 0..self.kernel {
                            let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                            if iy < 0 || iy >= g.height as isize {
                                continue;
                            }
                            for kx in 0..self.kernel {
                                let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                                if ix < 0 || ix >= g.width as isize {
                                    continue;
                                }
                                let idx = c * g.area() + iy as usize * g.width + ix as usize;
                                if xr[idx] > best {
                                    best = xr[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        yr[o] = best;
                        argmax.push(best_idx as u32);
                        o += 1;
                    }
                }
            }
        }
        (y, argmax)
    }

    fn backward(&self, argmax: &[u32], dy: &Array2<f64>) -> Array2<f64> {
        let batch = dy.nrows();
        let out_len = dy.ncols();
        let mut dx = Array2::zeros((batch, self.input.len()));
        for (b, (dyr, mut dxr)) in dy.outer_iter().zip(dx.outer_iter_mut()).enumerate() {
            for (o, g) in dyr.iter().enumerate() {
                dxr[argmax[b * out_len + o] as usize] += g;
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub(crate) struct BatchNorm2d {
    input: Geometry,
    gamma: Param,
    beta: Param,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;

impl BatchNorm2d {
    pub fn new(input: Geometry) -> Self {
        let c = input.channels;
        Self {
            input,
            gamma: Param::filled(1, c, 1.0),
            beta: Param::filled(1, c, 0.0),
            running_mean: Array1::zeros(c),
            running_var: Array1::ones(c),
        }
    }

    fn normalize(&self, x: &Array2<f64>, mean: &[f64], inv_std: &[f64]) -> (Array2<f64>, Array2<f64>) {
        let area = self.input.area();
        let mut xhat = x.clone();
        for mut row in xhat.outer_iter_mut() {
            let row = row.as_slice_mut().expect("contiguous");
            for (c, chunk) in row.chunks_mut(area).enumerate() {
                for v in chunk {
                    *v = (*v - mean[c]) * inv_std[c];
                }
            }
        }
        let mut y = xhat.clone();
        for mut row in y.outer_iter_mut() {
            let row = row.as_slice_mut().expect("contiguous");
            for (c, chunk) in row.chunks_mut(area).enumerate() {
                let (g, b) = (self.gamma.value[[0, c]], self.beta.value[[0, c]]);
                for v in chunk {
                    *v = g * *v + b;
                }
            }
        }
        (xhat, y)
    }

    fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let mean: Vec<f64> = self.running_mean.to_vec();
        let inv_std: Vec<f64> = self.running_var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        self.normalize(x, &mean, &inv_std).1
    }

    fn forward_train(&mut self, x: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
        let c_count = self.input.channels;
        let area = self.input.area();
        let n = (x.nrows() * area) as f64;
        let mut sum = vec![0.0; c_count];
        let mut sq = vec![0.0; c_count];
        for row in x.outer_iter() {
            let row = row.to_slice().expect("contiguous");
            for (c, chunk) in row.chunks(area).enumerate() {
                for v in chunk {
                    sum[c] += v;
                    sq[c] += v * v;
                }
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let var: Vec<f64> = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| (q / n - m * m).max(0.0))
            .collect();
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for c in 0..c_count {
            self.running_mean[c] = (1.0 - BN_MOMENTUM) * self.running_mean[c] + BN_MOMENTUM * mean[c];
            self.running_var[c] = (1.0 - BN_MOMENTUM) * self.running_var[c] + BN_MOMENTUM * var[c] * unbias;
        }
        let (xhat, y) = self.normalize(x, &mean, &inv_std);
        (y, xhat, inv_std)
    }

    fn backward(&mut self, xhat: &Array2<f64>, inv_std: &[f64], dy: &Array2<f64>) -> Array2<f64> {
        let c_count = self.input.channels;
        let area = self.input.area();
        let n = (dy.nrows() * area) as f64;
        let mut sum_dy = vec![0.0; c_count];
        let mut sum_dy_xhat = vec![0.0; c_count];
        for (dyr, xr) in dy.outer_iter().zip(xhat.outer_iter()) {
            let dyr = dyr.to_slice().expect("contiguous");
            let xr = xr.to_slice().expect("contiguous");
            for c in 0..c_count {
                for p in c * area..(c + 1) * area {
                    sum_dy[c] += dyr[p];
                    sum_dy_xhat[c] += dyr[p] * xr[p];
                }
            }
        }
        for c in 0..c_count {
            self.gamma.grad[[0, c]] += sum_dy_xhat[c];
            self.beta.grad[[0, c]] += sum_dy[c];
        }
        let mut dx = Array2::zeros(dy.raw_dim());
        for ((dyr, xr), mut dxr) in dy.outer_iter().zip(xhat.outer_iter()).zip(dx.outer_iter_mut()) {
            for c in 0..c_count {
                let scale = self.gamma.value[[0, c]] * inv_std[c] / n;
                for p in c * area..(c + 1) * area {
                    dxr[p] = scale * (n * dyr[p] - sum_dy[c] - xr[p] * sum_dy_xhat[c]);
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Layer {
    Dense(Dense),
    Conv(Conv2d),
    BatchNorm(BatchNorm2d),
    MaxPool(MaxPool2d),
    Relu,
    GlobalAvgPool(Geometry),
    Residual {
        main: Sequential,
        shortcut: Option<Sequential>,
    },
}

#[derive(Debug)]
pub(crate) enum Cache {
    Dense(Array2<f64>),
    Conv(Array2<f64>),
    BatchNorm { xhat: Array2<f64>, inv_std: Vec<f64> },
    MaxPool(Vec<u32>),
    Relu(Array2<f64>),
    GlobalAvgPool,
    Residual {
        main: Vec<Cache>,
        shortcut: Option<Vec<Cache>>,
        out: Array2<f64>,
    },
}

fn relu(mut x: Array2<f64>) -> Array2<f64> {
    x.mapv_inplace(|v| v.max(0.0));
    x
}

fn relu_backward(out: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut dx = dy.clone();
    dx.zip_mut_with(out, |g, &o| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
    dx
}

fn global_avg(g: Geometry, x: &Array2<f64>) -> Array2<f64> {
    let area = g.area() as f64;
    let mut y = Array2::zeros((x.nrows(), g.channels));
    for (xr, mut yr) in x.outer_iter().zip(y.outer_iter_mut()) {
        for c in 0..g.channels {
            yr[c] = xr.slice(s![c * g.area()..(c + 1) * g.area()]).sum() / area;
        }
    }
    y
}

fn global_avg_backward(g: Geometry, dy: &Array2<f64>) -> Array2<f64> {
    let area = g.area();
    let mut dx = Array2::zeros((dy.nrows(), g.len()));
    for (dyr, mut dxr) in dy.outer_iter().zip(dx.outer_iter_mut()) {
        for c in 0..g.channels {
            dxr.slice_mut(s![c * area..(c + 1) * area]).fill(dyr[c] / area as f64);
        }
    }
    dx
}

impl Layer {
    fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        match self {
            Layer::Dense(d) => d.forward(x),
            Layer::Conv(c) => c.forward(x).0,
            Layer::BatchNorm(bn) => bn.forward_eval(x),
            Layer::MaxPool(p) => p.forward(x).0,
            Layer::Relu => relu(x.clone()),
            Layer::GlobalAvgPool(g) => global_avg(*g, x),
            Layer::Residual { main, shortcut } => {
                let mut y = main.forward_eval(x);
                match shortcut {
                    Some(s) => y += &s.forward_eval(x),
                    None => y += x,
                }
                relu(y)
            }
        }
    }

    fn forward_train(&mut self, x: &Array2<f64>) -> (Array2<f64>, Cache) {
        match self {
            Layer::Dense(d) => (d.forward(x), Cache::Dense(x.clone())),
            Layer::Conv(c) => {
                let (y, cols) = c.forward(x);
                (y, Cache::Conv(cols))
            }
            Layer::BatchNorm(bn) => {
                let (y, xhat, inv_std) = bn.forward_train(x);
                (y, Cache::BatchNorm { xhat, inv_std })
            }
            Layer::MaxPool(p) => {
                let (y, idx) = p.forward(x);
                (y, Cache::MaxPool(idx))
            }
            Layer::Relu => {
                let y = relu(x.clone());
                (y.clone(), Cache::Relu(y))
            }
            Layer::GlobalAvgPool(g) => (global_avg(*g, x), Cache::GlobalAvgPool),
            Layer::Residual { main, shortcut } => {
                let (mut y, main_cache) = main.forward_train(x);
                let short_cache = match shortcut {
                    Some(s) => {
                        let (sy, sc) = s.forward_train(x);
                        y += &sy;
                        Some(sc)
                    }
                    None => {
                        y += x;
                        None
                    }
                };
                let y = relu(y);
                (
                    y.clone(),
                    Cache::Residual {
                        main: main_cache,
                        shortcut: short_cache,
                        out: y,
                    },
                )
            }
        }
    }

    fn backward(&mut self, cache: Cache, dy: &Array2<f64>) -> Array2<f64> {
        match (self, cache) {
            (Layer::Dense(d), Cache::Dense(input)) => d.backward(&input, dy),
            (Layer::Conv(c), Cache::Conv(cols)) => c.backward(&cols, dy),
            (Layer::BatchNorm(bn), Cache::BatchNorm { xhat, inv_std }) => bn.backward(&xhat, &inv_std, dy),
            (Layer::MaxPool(p), Cache::MaxPool(idx)) => p.backward(&idx, dy),
            (Layer::Relu, Cache::Relu(out)) => relu_backward(&out, dy),
            (Layer::GlobalAvgPool(g), Cache::GlobalAvgPool) => global_avg_backward(*g, dy),
            (
                Layer::Residual { main, shortcut },
                Cache::Residual {
                    main: main_cache,
                    shortcut: short_cache,
                    out,
                },
            ) => {
                let d = relu_backward(&out, dy);
                let mut dx = main.backward(main_cache, &d);
                match (shortcut, short_cache) {
                    (Some(s), Some(sc)) => dx += &s.backward(sc, &d),
                    _ => dx += &d,
                }
                dx
            }
            _ => unreachable!("cache does not match layer"),
        }
    }

    fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        match self {
            Layer::Dense(d) => out.extend([&d.weight, &d.bias]),
            Layer::Conv(c) => {
                out.push(&c.weight);
                out.extend(c.bias.as_ref());
            }
            Layer::BatchNorm(bn) => out.extend([&bn.gamma, &bn.beta]),
            Layer::Residual { main, shortcut } => {
                main.collect_params(out);
                if let Some(s) = shortcut {
                    s.collect_params(out);
                }
            }
            Layer::MaxPool(_) | Layer::Relu | Layer::GlobalAvgPool(_) => {}
        }
    }

    fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        match self {
            Layer::Dense(d) => out.extend([&mut d.weight, &mut d.bias]),
            Layer::Conv(c) => {
                out.push(&mut c.weight);
                out.extend(c.bias.as_mut());
            }
            Layer::BatchNorm(bn) => out.extend([&mut bn.gamma, &mut bn.beta]),
            Layer::Residual { main, shortcut } => {
                main.collect_params_mut(out);
                if let Some(s) = shortcut {
                    s.collect_params_mut(out);
                }
            }
            Layer::MaxPool(_) | Layer::Relu | Layer::GlobalAvgPool(_) => {}
        }
    }

    fn collect_buffers<'a>(&'a self, out: &mut Vec<&'a Array1<f64>>) {
        match self {
            Layer::BatchNorm(bn) => out.extend([&bn.running_mean, &bn.running_var]),
            Layer::Residual { main, shortcut } => {
                main.collect_buffers(out);
                if let Some(s) = shortcut {
                    s.collect_buffers(out);
                }
            }
            _ => {}
        }
    }

    fn collect_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Array1<f64>>) {
        match self {
            Layer::BatchNorm(bn) => out.extend([&mut bn.running_mean, &mut bn.running_var]),
            Layer::Residual { main, shortcut } => {
                main.collect_buffers_mut(out);
                if let Some(s) = shortcut {
                    s.collect_buffers_mut(out);
                }
            }
            _ => {}
        }
    }
}

#[derive(Debug, Clone, Default)]
pub(crate) struct Sequential {
    pub layers: Vec<Layer>,
}

impl Sequential {
    pub fn push(&mut self, layer: Layer) {
        self.layers.push(layer);
    }

    pub fn forward_eval(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut iter = self.layers.iter();
        let Some(first) = iter.next() else {
            return x.clone();
        };
        let mut y = first.forward_eval(x);
        for layer in iter {
            y = layer.forward_eval(&y);
        }
        y
    }

    pub fn forward_train(&mut self, x: &Array2<f64>) -> (Array2<f64>, Vec<Cache>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut y = x.clone();
        for layer in &mut self.layers {
            let (next, cache) = layer.forward_train(&y);
            caches.push(cache);
            y = next;
        }
        (y, caches)
    }

    pub fn backward(&mut self, caches: Vec<Cache>, dy: &Array2<f64>) -> Array2<f64> {
        let mut grad = dy.clone();
        for (layer, cache) in self.layers.iter_mut().zip(caches).rev() {
            grad = layer.backward(cache, &grad);
        }
        grad
    }

    pub fn collect_params<'a>(&'a self, out: &mut Vec<&'a Param>) {
        for l in &self.layers {
            l.collect_params(out);
        }
    }

    pub fn collect_params_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Param>) {
        for l in &mut self.layers {
            l.collect_params_mut(out);
        }
    }

    pub fn collect_buffers<'a>(&'a self, out: &mut Vec<&'a Array1<f64>>) {
        for l in &self.layers {
            l.collect_buffers(out);
        }
    }

    pub fn collect_buffers_mut<'a>(&'a mut self, out: &mut Vec<&'a mut Array1<f64>>) {
        for l in &mut self.layers {
            l.collect_buffers_mut(out);
        }
    }
}
