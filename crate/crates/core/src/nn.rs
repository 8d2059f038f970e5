//! A small dense network with explicit reverse mode.
//!
//! Parameters live in one flat vector (per layer: weights row-major
//! `out x in`, then biases), so the optimizer and the checkpoint format work
//! on plain slices. Besides the usual backward pass the network can
//! differentiate the squared input-gradient norm of a scalar output with
//! respect to its parameters, which is what a gradient penalty needs.

use std::io::{Read, Write};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"RDXN";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Hidden sizes used for the classifier, multiplier and policy networks
/// unless a config says otherwise.
pub const DEFAULT_HIDDEN: [usize; 3] = [256, 256, 256];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// First derivative given the pre- and post-activation values.
    fn d1(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
        }
    }

    fn d2(self, _pre: f64, post: f64) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Tanh => -2.0 * post * (1.0 - post * post),
        }
    }

    fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_tag(t: u8) -> Result<Self> {
        match t {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            _ => Err(Error::Format(format!("unknown activation tag {t}"))),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            _ => Err(invalid(format!("unknown activation {s:?}"))),
        }
    }
}

/// How the raw outputs are interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Head {
    Scalar,
    Logits { classes: usize },
    /// First half of the outputs is the mean, second half the log-std.
    GaussianPolicy { action_dim: usize },
}

impl Head {
    pub fn output_dim(self) -> usize {
        match self {
            Head::Scalar => 1,
            Head::Logits { classes } => classes,
            Head::GaussianPolicy { action_dim } => 2 * action_dim,
        }
    }

    fn tag(self) -> (u8, u32) {
        match self {
            Head::Scalar => (0, 1),
            Head::Logits { classes } => (1, classes as u32),
            Head::GaussianPolicy { action_dim } => (2, action_dim as u32),
        }
    }

    fn from_tag(t: u8, p: u32) -> Result<Self> {
        match t {
            0 => Ok(Head::Scalar),
            1 => Ok(Head::Logits { classes: p as usize }),
            2 => Ok(Head::GaussianPolicy { action_dim: p as usize }),
            _ => Err(Error::Format(format!("unknown head tag {t}"))),
        }
    }
}

/// `C = beta*C + op(A) * op(B)`, with `op(A)` of shape `m x k` and `op(B)` of
/// shape `k x n`. A transposed operand is stored in the transposed shape.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], a_t: bool, b: &[f64], b_t: bool, beta: f64, c: &mut [f64]) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above guarantee every strided access is in bounds.
    unsafe {
        matrixmultiply::dgemm(
            m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1,
        );
    }
}

/// Activations recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    version: u64,
    batch: usize,
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl ForwardCache {
    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Raw network outputs, `batch x output_dim`.
    pub fn outputs(&self) -> &[f64] {
        self.pre.last().expect("at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub params: Vec<f64>,
    /// `batch x input_dim`.
    pub inputs: Vec<f64>,
}

/// Penalty value and its parameter gradient.
#[derive(Debug, Clone)]
pub struct Penalty {
    pub value: f64,
    pub params: Vec<f64>,
    /// Per-sample input gradients of the scalar output, `batch x input_dim`.
    pub input_gradients: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    activation: Activation,
    head: Head,
    params: Vec<f64>,
    offsets: Vec<usize>,
    version: u64,
}

impl Mlp {
    /// `hidden` sizes between `input_dim` and the head's output width.
    pub fn new(input_dim: usize, hidden: &[usize], activation: Activation, head: Head, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(input_dim, hidden, activation, head)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = net.num_layers();
        for k in 0..layers {
            let (fan_in, fan_out) = (net.sizes[k], net.sizes[k + 1]);
            let bound = if k + 1 < layers && activation == Activation::Relu {
                (6.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            };
            let start = net.offsets[k];
            for w in &mut net.params[start..start + fan_in * fan_out] {
                *w = rng.gen_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(input_dim: usize, hidden: &[usize], activation: Activation, head: Head) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(head.output_dim());
        Self::from_sizes(sizes, activation, head)
    }

    fn from_sizes(sizes: Vec<usize>, activation: Activation, head: Head) -> Result<Self> {
        if sizes.len() < 2 || sizes.iter().any(|s| *s == 0) {
            return Err(invalid(format!("layer sizes must be positive, got {sizes:?}")));
        }
        if *sizes.last().unwrap() != head.output_dim() {
            return Err(invalid(format!(
                "output width {} does not match head {head:?}",
                sizes.last().unwrap()
            )));
        }
        let mut offsets = Vec::with_capacity(sizes.len() - 1);
        let mut total = 0;
        for w in sizes.windows(2) {
            offsets.push(total);
            total += w[0] * w[1] + w[1];
        }
        Ok(Self { sizes, activation, head, params: vec![0.0; total], offsets, version: 0 })
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable parameter access. Invalidates outstanding forward caches.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version += 1;
        &mut self.params
    }

    fn weights(&self, k: usize) -> &[f64] {
        let start = self.offsets[k];
        &self.params[start..start + self.sizes[k] * self.sizes[k + 1]]
    }

    fn bias(&self, k: usize) -> &[f64] {
        let start = self.offsets[k] + self.sizes[k] * self.sizes[k + 1];
        &self.params[start..start + self.sizes[k + 1]]
    }

    /// Human-readable name of a flat parameter index.
    pub fn param_name(&self, idx: usize) -> String {
        for k in (0..self.num_layers()).rev() {
            if idx >= self.offsets[k] {
                let local = idx - self.offsets[k];
                let (fan_in, fan_out) = (self.sizes[k], self.sizes[k + 1]);
                return if local < fan_in * fan_out {
                    format!("layer{k}.weight[{},{}]", local / fan_in, local % fan_in)
                } else {
                    format!("layer{k}.bias[{}]", local - fan_in * fan_out)
                };
            }
        }
        format!("param[{idx}]")
    }

    fn check_input(&self, inputs: &[f64], batch: usize) -> Result<()> {
        if batch == 0 || inputs.len() != batch * self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "got {} input values for batch {batch} x input dim {}",
                inputs.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass over a row-major `batch x input_dim` block.
    pub fn forward(&self, inputs: &[f64], batch: usize) -> Result<ForwardCache> {
        self.check_input(inputs, batch)?;
        let layers = self.num_layers();
        let mut pre = Vec::with_capacity(layers);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(layers - 1);
        for k in 0..layers {
            let (fan_in, fan_out) = (self.sizes[k], self.sizes[k + 1]);
            let h = if k == 0 { inputs } else { &post[k - 1] };
            let mut z = vec![0.0; batch * fan_out];
            for row in z.chunks_mut(fan_out) {
                row.copy_from_slice(self.bias(k));
            }
            gemm(batch, fan_in, fan_out, h, false, self.weights(k), true, 1.0, &mut z);
            if k + 1 < layers {
                post.push(z.iter().map(|x| self.activation.apply(*x)).collect());
            }
            pre.push(z);
        }
        Ok(ForwardCache { version: self.version, batch, input: inputs.to_vec(), pre, post })
    }

    /// Outputs only.
    pub fn predict(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        Ok(self.forward(inputs, batch)?.pre.pop().expect("at least one layer"))
    }

    /// Reverse pass for a loss whose gradient w.r.t. the outputs is `output_grads`.
    pub fn backward(&self, cache: &ForwardCache, output_grads: &[f64]) -> Result<Gradients> {
        self.check_cache(cache)?;
        if output_grads.len() != cache.batch * self.output_dim() {
            return Err(Error::ShapeMismatch(format!(
                "output gradient has {} values, expected {}",
                output_grads.len(),
                cache.batch * self.output_dim()
            )));
        }
        let mut params = vec![0.0; self.params.len()];
        let inputs = self.backward_into(cache, output_grads.to_vec(), None, &mut params);
        Ok(Gradients { params, inputs })
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        if cache.version != self.version || cache.pre.len() != self.num_layers() {
            return Err(Error::StaleCache);
        }
        Ok(())
    }

    /// Accumulates parameter gradients into `grads`; `inject[k]` is added to
    /// the gradient of hidden pre-activation `k`. Returns input gradients.
    fn backward_into(
        &self,
        cache: &ForwardCache,
        output_grads: Vec<f64>,
        inject: Option<&[Vec<f64>]>,
        grads: &mut [f64],
    ) -> Vec<f64> {
        let batch = cache.batch;
        let mut dz = output_grads;
        for k in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[k], self.sizes[k + 1]);
            let h = if k == 0 { &cache.input } else { &cache.post[k - 1] };
            let w_start = self.offsets[k];
            let b_start = w_start + fan_in * fan_out;
            gemm(fan_out, batch, fan_in, &dz, true, h, false, 1.0, &mut grads[w_start..b_start]);
            for row in dz.chunks(fan_out) {
                for (g, d) in grads[b_start..b_start + fan_out].iter_mut().zip(row) {
                    *g += d;
                }
            }
            let mut dh = vec![0.0; batch * fan_in];
            gemm(batch, fan_out, fan_in, &dz, false, self.weights(k), false, 0.0, &mut dh);
            if k == 0 {
                return dh;
            }
            let (pre, post) = (&cache.pre[k - 1], &cache.post[k - 1]);
            for i in 0..dh.len() {
                dh[i] *= self.activation.d1(pre[i], post[i]);
            }
            if let Some(inj) = inject {
                dh.iter_mut().zip(&inj[k - 1]).for_each(|(d, j)| *d += j);
            }
            dz = dh;
        }
        unreachable!("loop returns at layer 0")
    }

    /// `coefficient * mean_b ||d y_b / d x_b||^2` for a scalar-output network,
    /// with its exact gradient w.r.t. the parameters (second-order reverse mode).
    pub fn input_gradient_penalty(&self, inputs: &[f64], batch: usize, coefficient: f64) -> Result<Penalty> {
        if self.output_dim() != 1 {
            return Err(invalid("gradient penalty needs a scalar-output network"));
        }
        let cache = self.forward(inputs, batch)?;
        self.penalty_from_cache(&cache, coefficient)
    }

    pub fn penalty_from_cache(&self, cache: &ForwardCache, coefficient: f64) -> Result<Penalty> {
        self.check_cache(cache)?;
        if self.output_dim() != 1 {
            return Err(invalid("gradient penalty needs a scalar-output network"));
        }
        let batch = cache.batch;
        let layers = self.num_layers();
        let act = self.activation;

        // Input-gradient chain: delta[k] is d y / d pre[k]; g[k] is d y / d (input of layer k).
        let mut delta: Vec<Vec<f64>> = vec![Vec::new(); layers];
        let mut g: Vec<Vec<f64>> = vec![Vec::new(); layers];
        delta[layers - 1] = vec![1.0; batch];
        for k in (0..layers).rev() {
            let (fan_in, fan_out) = (self.sizes[k], self.sizes[k + 1]);
            let mut gk = vec![0.0; batch * fan_in];
            gemm(batch, fan_out, fan_in, &delta[k], false, self.weights(k), false, 0.0, &mut gk);
            if k > 0 {
                let (pre, post) = (&cache.pre[k - 1], &cache.post[k - 1]);
                delta[k - 1] = gk.iter().enumerate().map(|(i, x)| x * act.d1(pre[i], post[i])).collect();
            }
            g[k] = gk;
        }
        let input_gradients = g[0].clone();
        let scale = coefficient / batch as f64;
        let value = scale * input_gradients.iter().map(|x| x * x).sum::<f64>();

        // Reverse through the chain above, from the input end to the output end.
        let mut grads = vec![0.0; self.params.len()];
        let mut inject: Vec<Vec<f64>> = vec![Vec::new(); layers.saturating_sub(1)];
        let mut g_bar: Vec<f64> = input_gradients.iter().map(|x| 2.0 * scale * x).collect();
        for k in 0..layers {
            let (fan_in, fan_out) = (self.sizes[k], self.sizes[k + 1]);
            let w_start = self.offsets[k];
            gemm(fan_out, batch, fan_in, &delta[k], true, &g_bar, false, 1.0, &mut grads[w_start..w_start + fan_in * fan_out]);
            let mut delta_bar = vec![0.0; batch * fan_out];
            gemm(batch, fan_in, fan_out, &g_bar, false, self.weights(k), true, 0.0, &mut delta_bar);
            if k + 1 < layers {
                let (pre, post) = (&cache.pre[k], &cache.post[k]);
                let upstream = &g[k + 1];
                inject[k] = (0..delta_bar.len())
                    .map(|i| act.d2(pre[i], post[i]) * upstream[i] * delta_bar[i])
                    .collect();
                g_bar = (0..delta_bar.len()).map(|i| act.d1(pre[i], post[i]) * delta_bar[i]).collect();
            }
        }
        // Curvature terms flow back through the ordinary forward graph.
        if act != Activation::Relu && layers > 1 {
            let zero_out = vec![0.0; batch * self.output_dim()];
            self.backward_into(cache, zero_out, Some(&inject), &mut grads);
        }
        Ok(Penalty { value, params: grads, input_gradients })
    }

    pub fn write_checkpoint(&self, w: &mut impl Write) -> Result<()> {
        let mut buf = Vec::with_capacity(32 + 8 * self.params.len());
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.sizes.len() as u32).to_le_bytes());
        for s in &self.sizes {
            buf.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        buf.push(self.activation.tag());
        let (tag, p) = self.head.tag();
        buf.push(tag);
        buf.extend_from_slice(&p.to_le_bytes());
        for x in &self.params {
            buf.extend_from_slice(&x.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_checkpoint(r: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        let mut pos = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            let out = bytes
                .get(pos..pos + n)
                .ok_or_else(|| Error::Format(format!("checkpoint truncated at offset {pos}")))?;
            pos += n;
            Ok(out)
        };
        if take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version { found: version, expected: CHECKPOINT_VERSION });
        }
        let n = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        if n < 2 || n > 64 {
            return Err(Error::Format(format!("implausible layer count {n}")));
        }
        let sizes = (0..n)
            .map(|_| take(4).map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize))
            .collect::<Result<Vec<_>>>()?;
        let activation = Activation::from_tag(take(1)?[0])?;
        let tag = take(1)?[0];
        let hp = u32::from_le_bytes(take(4)?.try_into().unwrap());
        let head = Head::from_tag(tag, hp)?;
        let mut net = Self::from_sizes(sizes, activation, head).map_err(|e| Error::Format(e.to_string()))?;
        let count = net.params.len();
        let raw = take(8 * count)?;
        for (p, chunk) in net.params.iter_mut().zip(raw.chunks_exact(8)) {
            *p = f64::from_le_bytes(chunk.try_into().unwrap());
        }
        if pos != bytes.len() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        if let Some(i) = net.params.iter().position(|x| !x.is_finite()) {
            return Err(Error::Format(format!("non-finite parameter {}", net.param_name(i))));
        }
        Ok(net)
    }
}

/// Adaptive-moment optimizer state for one parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl OptimizerState {
    pub fn new(num_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. Rejects non-finite gradients before
    /// touching anything, naming the offending parameter.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], name: impl Fn(usize) -> String) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "optimizer holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(invalid(format!("non-finite gradient {} for {}", grads[i], name(i))));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }

    pub fn step_net(&mut self, net: &mut Mlp, grads: &[f64]) -> Result<()> {
        let names = net.clone();
        self.step(net.params_mut(), grads, |i| names.param_name(i))
    }
}

/// Lower and upper log-std clamp for Gaussian heads.
pub const LOG_STD_CLAMP: (f64, f64) = (-5.0, 2.0);

/// Diagonal Gaussian log-densities from raw `[mean | log_std]` outputs.
/// Returns per-sample log-probs, their gradients w.r.t. the raw outputs, and
/// how many log-std entries were clamped (clamped entries get zero gradient).
pub fn gaussian_log_prob(outputs: &[f64], actions: &[f64], action_dim: usize) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    if action_dim == 0 || actions.len() % action_dim != 0 || outputs.len() != 2 * actions.len() {
        return Err(Error::ShapeMismatch("gaussian head outputs do not match actions".into()));
    }
    let batch = actions.len() / action_dim;
    let half_log_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut logp = vec![0.0; batch];
    let mut grad = vec![0.0; outputs.len()];
    let mut clamped = 0;
    for b in 0..batch {
        let out = &outputs[b * 2 * action_dim..(b + 1) * 2 * action_dim];
        for j in 0..action_dim {
            let mean = out[j];
            let raw = out[action_dim + j];
            let ls = raw.clamp(LOG_STD_CLAMP.0, LOG_STD_CLAMP.1);
            let is_clamped = ls != raw;
            clamped += is_clamped as usize;
            let inv_var = (-2.0 * ls).exp();
            let diff = actions[b * action_dim + j] - mean;
            logp[b] += -0.5 * diff * diff * inv_var - ls - half_log_2pi;
            grad[b * 2 * action_dim + j] = diff * inv_var;
            grad[b * 2 * action_dim + action_dim + j] = if is_clamped { 0.0 } else { diff * diff * inv_var - 1.0 };
        }
    }
    Ok((logp, grad, clamped))
}

/// Log-softmax probabilities of the chosen classes and their gradients
/// w.r.t. the logits.
pub fn categorical_log_prob(logits: &[f64], classes: usize, actions: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    if logits.len() != classes * actions.len() {
        return Err(Error::ShapeMismatch("logits do not match action batch".into()));
    }
    let mut logp = Vec::with_capacity(actions.len());
    let mut grad = vec![0.0; logits.len()];
    for (b, &a) in actions.iter().enumerate() {
        if a >= classes {
            return Err(invalid(format!("action {a} out of range for {classes} classes")));
        }
        let row = &logits[b * classes..(b + 1) * classes];
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        logp.push(row[a] - lse);
        for (c, x) in row.iter().enumerate() {
            grad[b * classes + c] = -(x - lse).exp();
        }
        grad[b * classes + a] += 1.0;
    }
    Ok((logp, grad))
}

/// Row-wise softmax.
pub fn softmax_rows(logits: &[f64], classes: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(classes) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|x| (x - max).exp()).sum();
        out.extend(row.iter().map(|x| (x - max).exp() / z));
    }
    out
}

/// Log-probabilities of a Gaussian-head policy and the parameter gradient of
/// their sum.
#[derive(Debug, Clone)]
pub struct PolicyLogProb {
    pub log_probs: Vec<f64>,
    pub param_grads: Vec<f64>,
    pub clamped: usize,
}

pub fn gaussian_policy_logprob(net: &Mlp, states: &[f64], actions: &[f64]) -> Result<PolicyLogProb> {
    let Head::GaussianPolicy { action_dim } = net.head() else {
        return Err(invalid("network does not have a Gaussian policy head"));
    };
    let batch = actions.len() / action_dim.max(1);
    let cache = net.forward(states, batch)?;
    let (log_probs, out_grad, clamped) = gaussian_log_prob(cache.outputs(), actions, action_dim)?;
    let grads = net.backward(&cache, &out_grad)?;
    Ok(PolicyLogProb { log_probs, param_grads: grads.params, clamped })
}

/// Deterministic mean action of a Gaussian-head policy.
pub fn gaussian_mean(net: &Mlp, state: &[f64]) -> Result<Vec<f64>> {
    let Head::GaussianPolicy { action_dim } = net.head() else {
        return Err(invalid("network does not have a Gaussian policy head"));
    };
    let out = net.predict(state, 1)?;
    Ok(out[..action_dim].to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_params(net: &Mlp, loss: impl Fn(&Mlp) -> f64, h: f64) -> Vec<f64> {
        let mut probe = net.clone();
        (0..net.num_params())
            .map(|i| {
                let orig = probe.params()[i];
                probe.params_mut()[i] = orig + h;
                let up = loss(&probe);
                probe.params_mut()[i] = orig - h;
                let down = loss(&probe);
                probe.params_mut()[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn assert_close(a: &[f64], b: &[f64], rel: f64) {
        for (i, (x, y)) in a.iter().zip(b).enumerate() {
            let err = (x - y).abs() / (1e-6 + x.abs().max(y.abs()));
            assert!(err <= rel || (x - y).abs() < 1e-9, "index {i}: {x} vs {y} (rel {err})");
        }
    }

    #[test]
    fn zero_net_outputs_zero_and_identity_layer() {
        let net = Mlp::zeros(3, &[4], Activation::Relu, Head::Scalar).unwrap();
        assert_eq!(net.predict(&[1.0, -2.0, 3.0], 1).unwrap(), vec![0.0]);

        let mut id = Mlp::zeros(2, &[], Activation::Relu, Head::Logits { classes: 2 }).unwrap();
        id.params_mut()[..4].copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        assert_eq!(id.predict(&[0.3, -0.7], 1).unwrap(), vec![0.3, -0.7]);
    }

    #[test]
    fn batching_matches_single_calls() {
        let net = Mlp::new(3, &[5, 4], Activation::Tanh, Head::Logits { classes: 2 }, 1).unwrap();
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let batched = net.predict(&x, 4).unwrap();
        for b in 0..4 {
            let single = net.predict(&x[b * 3..(b + 1) * 3], 1).unwrap();
            assert_eq!(&batched[b * 2..(b + 1) * 2], single.as_slice());
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        for act in [Activation::Tanh, Activation::Relu] {
            let net = Mlp::new(3, &[6, 5], act, Head::Logits { classes: 2 }, 3).unwrap();
            let x = [0.3, -0.2, 0.9, -0.5, 0.1, 0.4];
            let w = [0.7, -1.3, 0.2, 0.5];
            let loss = |n: &Mlp| n.predict(&x, 2).unwrap().iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let cache = net.forward(&x, 2).unwrap();
            let g = net.backward(&cache, &w).unwrap();
            assert_close(&g.params, &fd_params(&net, loss, 1e-5), 1e-4);
        }
    }

    #[test]
    fn zero_output_gradient_gives_zero_gradients() {
        let net = Mlp::new(2, &[3], Activation::Relu, Head::Scalar, 0).unwrap();
        let cache = net.forward(&[1.0, 2.0], 1).unwrap();
        let g = net.backward(&cache, &[0.0]).unwrap();
        assert!(g.params.iter().chain(&g.inputs).all(|x| *x == 0.0));
    }

    #[test]
    fn stale_cache_is_rejected() {
        let mut net = Mlp::new(2, &[3], Activation::Relu, Head::Scalar, 0).unwrap();
        let cache = net.forward(&[1.0, 2.0], 1).unwrap();
        net.params_mut()[0] += 1.0;
        assert!(matches!(net.backward(&cache, &[1.0]), Err(Error::StaleCache)));
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        for act in [Activation::Tanh, Activation::Relu] {
            let net = Mlp::new(2, &[5, 4], act, Head::Scalar, 9).unwrap();
            let x = [0.4, -0.3, 1.1, 0.2, -0.8, 0.6];
            let p = net.input_gradient_penalty(&x, 3, 0.5).unwrap();
            let numeric = fd_params(&net, |n| n.input_gradient_penalty(&x, 3, 0.5).unwrap().value, 1e-5);
            assert_close(&p.params, &numeric, 1e-4);
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let net = Mlp::new(3, &[4], Activation::Tanh, Head::GaussianPolicy { action_dim: 2 }, 5).unwrap();
        let mut buf = Vec::new();
        net.write_checkpoint(&mut buf).unwrap();
        let back = Mlp::read_checkpoint(&mut buf.as_slice()).unwrap();
        assert_eq!(back.params(), net.params());
        assert_eq!(back.layer_sizes(), net.layer_sizes());
        assert_eq!(back.head(), net.head());
        assert!(Mlp::read_checkpoint(&mut &buf[..buf.len() - 3]).is_err());
    }

    #[test]
    fn adam_zero_gradient_and_nan() {
        let mut opt = OptimizerState::new(3, 1e-3);
        let mut p = vec![1.0, 2.0, 3.0];
        opt.step(&mut p, &[0.0; 3], |i| format!("p{i}")).unwrap();
        assert_eq!(p, vec![1.0, 2.0, 3.0]);
        let err = opt.step(&mut p, &[0.0, f64::NAN, 0.0], |i| format!("p{i}")).unwrap_err();
        assert!(err.to_string().contains("p1"));
    }

    #[test]
    fn adam_solves_quadratic_bowl() {
        // f(x) = sum_i c_i (x_i - m_i)^2, minimum 0 at x = m.
        let c = [1.0, 4.0, 0.5];
        let m = [0.5, -1.0, 2.0];
        let mut x = vec![0.0; 3];
        let mut opt = OptimizerState::new(3, 1e-2);
        let f = |x: &[f64]| x.iter().zip(&c).zip(&m).map(|((x, c), m)| c * (x - m) * (x - m)).sum::<f64>();
        for _ in 0..5000 {
            let g: Vec<f64> = x.iter().zip(&c).zip(&m).map(|((x, c), m)| 2.0 * c * (x - m)).collect();
            opt.step(&mut x, &g, |i| i.to_string()).unwrap();
        }
        assert!(f(&x) < 1e-6, "loss {}", f(&x));
    }

    #[test]
    fn gaussian_head_at_mode_and_gradients() {
        let (lp, _, _) = gaussian_log_prob(&[0.3, -0.1, 0.0, 0.0], &[0.3, -0.1], 2).unwrap();
        assert!((lp[0] + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);

        let net = Mlp::new(2, &[4], Activation::Tanh, Head::GaussianPolicy { action_dim: 1 }, 2).unwrap();
        let s = [0.2, -0.4, 0.7, 0.1];
        let a = [0.5, -0.3];
        let out = gaussian_policy_logprob(&net, &s, &a).unwrap();
        let numeric = fd_params(&net, |n| gaussian_policy_logprob(n, &s, &a).unwrap().log_probs.iter().sum(), 1e-5);
        assert_close(&out.param_grads, &numeric, 1e-4);
    }

    #[test]
    fn gaussian_density_integrates_to_one() {
        let out = [0.2, -0.5];
        let n = 20_001;
        let (lo, hi) = (-6.0, 6.0);
        let h = (hi - lo) / (n - 1) as f64;
        let grid: Vec<f64> = (0..n).map(|i| lo + i as f64 * h).collect();
        let outs: Vec<f64> = grid.iter().flat_map(|_| out).collect();
        let (lp, _, _) = gaussian_log_prob(&outs, &grid, 1).unwrap();
        let total: f64 = lp.iter().map(|x| x.exp() * h).sum();
        assert!((total - 1.0).abs() < 0.01);
    }

    #[test]
    fn log_std_clamp_is_flagged() {
        let (_, grad, clamped) = gaussian_log_prob(&[0.0, 9.0], &[1.0], 1).unwrap();
        assert_eq!(clamped, 1);
        assert_eq!(grad[1], 0.0);
    }

    #[test]
    fn categorical_gradients() {
        let logits = [0.1, 0.5, -0.3];
        let (lp, g) = categorical_log_prob(&logits, 3, &[1]).unwrap();
        let p = softmax_rows(&logits, 3);
        assert!((lp[0] - p[1].ln()).abs() < 1e-12);
        assert!((g[1] - (1.0 - p[1])).abs() < 1e-12 && (g[0] + p[0]).abs() < 1e-12);
    }
}
