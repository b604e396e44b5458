//! Shared-bottom regression network with K task heads.
//!
//! Input is a fixed-width window of `W` state rows. When the temporal branch
//! is enabled each row also carries `P` periodicity statistics, which a shared
//! dense map projects into state space and adds to the row:
//! `row + (A p + b)`. The augmented window is flattened and pushed through the
//! shared encoder; head `k` maps `[hidden, quality]` to a scalar action.
//!
//! Gradients are computed by hand-written backpropagation into a
//! [`ParamVector`] that shares the model's layout.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::matrix::{affine, Matrix};
use super::param::{Layout, ParamVector};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Softplus,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Softplus => {
                if x > 30.0 {
                    x
                } else {
                    x.exp().ln_1p()
                }
            }
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Softplus => 1.0 / (1.0 + (-x).exp()),
            Activation::Identity => 1.0,
        }
    }
}

/// Architecture of a [`SharedBottomModel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Window width `W`.
    pub window: usize,
    /// Features per state row.
    pub state_dim: usize,
    /// Periodicity statistics per row; 0 disables the temporal branch.
    pub period_dim: usize,
    /// Widths of the shared encoder layers (empty = identity encoder).
    pub encoder_widths: Vec<usize>,
    /// Hidden widths inside each task head, before the scalar output.
    pub head_widths: Vec<usize>,
    pub tasks: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window: 8,
            state_dim: crate::features::STATE_DIM,
            period_dim: crate::features::PERIOD_DIM,
            encoder_widths: vec![64, 64],
            head_widths: vec![32],
            tasks: 3,
            activation: Activation::Tanh,
        }
    }
}

impl ModelConfig {
    pub fn input_dim(&self) -> usize {
        self.window * self.state_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.encoder_widths
            .last()
            .copied()
            .unwrap_or_else(|| self.input_dim())
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.state_dim == 0 {
            return Err(Error::Config(
                "window and state_dim must be positive".into(),
            ));
        }
        if self.tasks == 0 {
            return Err(Error::Config("at least one task head required".into()));
        }
        if self.encoder_widths.contains(&0) || self.head_widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    /// Layout in fixed order: temporal map, encoder layers, then each head.
    pub fn layout(&self) -> Layout {
        let mut l = Layout::new();
        if self.period_dim > 0 {
            l.push("temporal.weight", vec![self.state_dim, self.period_dim]);
            l.push("temporal.bias", vec![self.state_dim]);
        }
        let mut fan_in = self.input_dim();
        for (i, &w) in self.encoder_widths.iter().enumerate() {
            l.push(format!("encoder.{i}.weight"), vec![w, fan_in]);
            l.push(format!("encoder.{i}.bias"), vec![w]);
            fan_in = w;
        }
        let hidden = self.hidden_dim();
        for k in 0..self.tasks {
            let mut fan_in = hidden + 1;
            for (i, &w) in self.head_widths.iter().enumerate() {
                l.push(format!("head.{k}.{i}.weight"), vec![w, fan_in]);
                l.push(format!("head.{k}.{i}.bias"), vec![w]);
                fan_in = w;
            }
            l.push(format!("head.{k}.out.weight"), vec![1, fan_in]);
            l.push(format!("head.{k}.out.bias"), vec![1]);
        }
        l
    }
}

/// One model input: a state window plus, when enabled, periodicity rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub states: Matrix,
    pub periodic: Option<Matrix>,
}

impl Window {
    pub fn states_only(states: Matrix) -> Self {
        Self {
            states,
            periodic: None,
        }
    }
}

/// A supervised example: window, quality condition and target action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub window: Window,
    pub quality: f64,
    pub target: f64,
}

#[derive(Debug, Clone, Copy)]
struct Dense {
    w_off: usize,
    b_off: usize,
    n_in: usize,
    n_out: usize,
}

/// Shared encoder plus K task heads over one flat parameter vector.
#[derive(Debug, Clone)]
pub struct SharedBottomModel {
    config: ModelConfig,
    params: ParamVector,
    temporal: Option<Dense>,
    encoder: Vec<Dense>,
    heads: Vec<Vec<Dense>>,
}

/// Activations kept for the backward pass.
struct Trace {
    augmented: Vec<f64>,
    // (pre-activation, post-activation) per encoder layer
    encoder: Vec<(Vec<f64>, Vec<f64>)>,
    head_input: Vec<f64>,
    head: Vec<(Vec<f64>, Vec<f64>)>,
    output: f64,
}

impl SharedBottomModel {
    /// Zero-initialized model.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let layout = Arc::new(config.layout());
        let params = ParamVector::zeros(layout);
        Ok(Self::assemble(config, params))
    }

    /// Uniform init in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` from a seeded ChaCha8 stream,
    /// walking the layout in order (weights row-major, then bias).
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut model = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers: Vec<Dense> = model
            .temporal
            .iter()
            .chain(model.encoder.iter())
            .chain(model.heads.iter().flatten())
            .copied()
            .collect();
        let values = model.params.values_mut();
        for d in layers {
            let bound = 1.0 / (d.n_in as f64).sqrt();
            for v in &mut values[d.w_off..d.w_off + d.n_in * d.n_out] {
                *v = rng.random_range(-bound..bound);
            }
            for v in &mut values[d.b_off..d.b_off + d.n_out] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(model)
    }

    pub fn with_params(config: ModelConfig, params: ParamVector) -> Result<Self> {
        config.validate()?;
        let expected = config.layout();
        if **params.layout() != expected {
            return Err(Error::Layout("parameters do not match model config".into()));
        }
        Ok(Self::assemble(config, params))
    }

    fn assemble(config: ModelConfig, params: ParamVector) -> Self {
        let layout = params.layout().clone();
        let dense = |prefix: &str| {
            let w = layout
                .range_of(&format!("{prefix}.weight"))
                .expect("layout");
            let b = layout.range_of(&format!("{prefix}.bias")).expect("layout");
            let n_out = b.len();
            Dense {
                w_off: w.start,
                b_off: b.start,
                n_in: w.len() / n_out,
                n_out,
            }
        };
        let temporal = (config.period_dim > 0).then(|| dense("temporal"));
        let encoder = (0..config.encoder_widths.len())
            .map(|i| dense(&format!("encoder.{i}")))
            .collect();
        let heads = (0..config.tasks)
            .map(|k| {
                let mut layers: Vec<Dense> = (0..config.head_widths.len())
                    .map(|i| dense(&format!("head.{k}.{i}")))
                    .collect();
                layers.push(dense(&format!("head.{k}.out")));
                layers
            })
            .collect();
        Self {
            config,
            params,
            temporal,
            encoder,
            heads,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn layout(&self) -> &Arc<Layout> {
        self.params.layout()
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        if !params.same_layout(&self.params) {
            return Err(Error::Layout(
                "replacement parameters use another layout".into(),
            ));
        }
        self.params = params;
        Ok(())
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    /// Layout ranges that belong to head `task`.
    pub fn head_ranges(&self, task: usize) -> Vec<std::ops::Range<usize>> {
        self.heads
            .get(task)
            .map(|layers| {
                layers
                    .iter()
                    .flat_map(|d| {
                        [
                            d.w_off..d.w_off + d.n_in * d.n_out,
                            d.b_off..d.b_off + d.n_out,
                        ]
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    fn check_input(&self, task: usize, window: &Window) -> Result<()> {
        if task >= self.config.tasks {
            return Err(Error::UnknownTask(task));
        }
        let want = (self.config.window, self.config.state_dim);
        if window.states.shape() != want {
            return Err(Error::Shape(format!(
                "state window is {:?}, model expects {want:?}",
                window.states.shape()
            )));
        }
        match (&window.periodic, self.config.period_dim) {
            (None, 0) => Ok(()),
            (Some(p), pd) if pd > 0 && p.shape() == (self.config.window, pd) => Ok(()),
            (p, pd) => Err(Error::Shape(format!(
                "periodic rows {:?}, model expects width {pd}",
                p.as_ref().map(Matrix::shape)
            ))),
        }
    }

    fn run(&self, task: usize, window: &Window, quality: f64) -> Trace {
        let p = self.params.values();
        let act = self.config.activation;

        let mut augmented = window.states.as_slice().to_vec();
        if let (Some(t), Some(per)) = (self.temporal, &window.periodic) {
            let w = &p[t.w_off..t.w_off + t.n_in * t.n_out];
            let b = &p[t.b_off..t.b_off + t.n_out];
            let mut z = vec![0.0; t.n_out];
            for r in 0..self.config.window {
                affine(w, b, per.row(r), &mut z);
                let row = &mut augmented[r * t.n_out..(r + 1) * t.n_out];
                for (a, zi) in row.iter_mut().zip(&z) {
                    *a += zi;
                }
            }
        }

        let mut encoder = Vec::with_capacity(self.encoder.len());
        let mut x = augmented.clone();
        for d in &self.encoder {
            let mut pre = vec![0.0; d.n_out];
            affine(
                &p[d.w_off..d.w_off + d.n_in * d.n_out],
                &p[d.b_off..d.b_off + d.n_out],
                &x,
                &mut pre,
            );
            let post: Vec<f64> = pre.iter().map(|&v| act.apply(v)).collect();
            x = post.clone();
            encoder.push((pre, post));
        }

        let mut head_input = x;
        head_input.push(quality);
        let layers = &self.heads[task];
        let mut head = Vec::with_capacity(layers.len());
        let mut x = head_input.clone();
        let last = layers.len() - 1;
        for (i, d) in layers.iter().enumerate() {
            let mut pre = vec![0.0; d.n_out];
            affine(
                &p[d.w_off..d.w_off + d.n_in * d.n_out],
                &p[d.b_off..d.b_off + d.n_out],
                &x,
                &mut pre,
            );
            let post: Vec<f64> = if i == last {
                pre.clone()
            } else {
                pre.iter().map(|&v| act.apply(v)).collect()
            };
            x = post.clone();
            head.push((pre, post));
        }
        Trace {
            augmented,
            encoder,
            head_input,
            head,
            output: x[0],
        }
    }

    /// Predicted action for `task`.
    pub fn forward(&self, task: usize, window: &Window, quality: f64) -> Result<f64> {
        self.check_input(task, window)?;
        Ok(self.run(task, window, quality).output)
    }

    /// Mean squared error over `batch`.
    pub fn loss(&self, task: usize, batch: &[Example]) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut total = 0.0;
        for ex in batch {
            self.check_input(task, &ex.window)?;
            let e = self.run(task, &ex.window, ex.quality).output - ex.target;
            total += e * e;
        }
        Ok(total / batch.len() as f64)
    }

    /// Mean squared error and its gradient. Slots of other heads stay exactly zero.
    pub fn loss_and_grad(&self, task: usize, batch: &[Example]) -> Result<(f64, ParamVector)> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut grad = ParamVector::zeros(self.params.layout().clone());
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for ex in batch {
            self.check_input(task, &ex.window)?;
            let trace = self.run(task, &ex.window, ex.quality);
            let err = trace.output - ex.target;
            total += err * err;
            self.backward(task, ex, &trace, 2.0 * err * scale, grad.values_mut());
        }
        Ok((total * scale, grad))
    }

    fn backward(&self, task: usize, ex: &Example, trace: &Trace, d_out: f64, g: &mut [f64]) {
        let p = self.params.values();
        let act = self.config.activation;

        // Head, from the output layer down.
        let layers = &self.heads[task];
        let last = layers.len() - 1;
        let mut delta = vec![d_out];
        for i in (0..layers.len()).rev() {
            let d = layers[i];
            if i != last {
                let (pre, post) = &trace.head[i];
                for ((dv, x), y) in delta.iter_mut().zip(pre).zip(post) {
                    *dv *= act.derivative(*x, *y);
                }
            }
            let input = if i == 0 {
                &trace.head_input
            } else {
                &trace.head[i - 1].1
            };
            delta = dense_backward(p, g, d, input, &delta);
        }
        // Drop the quality slot; the rest flows into the encoder.
        delta.pop();

        for i in (0..self.encoder.len()).rev() {
            let d = self.encoder[i];
            let (pre, post) = &trace.encoder[i];
            for ((dv, x), y) in delta.iter_mut().zip(pre).zip(post) {
                *dv *= act.derivative(*x, *y);
            }
            let input = if i == 0 {
                &trace.augmented
            } else {
                &trace.encoder[i - 1].1
            };
            delta = dense_backward(p, g, d, input, &delta);
        }

        // `delta` is now d loss / d augmented window (row-major W x state_dim).
        if let (Some(t), Some(per)) = (self.temporal, &ex.window.periodic) {
            for r in 0..self.config.window {
                let d_row = &delta[r * t.n_out..(r + 1) * t.n_out];
                let p_row = per.row(r);
                for (o, &dz) in d_row.iter().enumerate() {
                    g[t.b_off + o] += dz;
                    let wrow = &mut g[t.w_off + o * t.n_in..t.w_off + (o + 1) * t.n_in];
                    for (gw, &pv) in wrow.iter_mut().zip(p_row) {
                        *gw += dz * pv;
                    }
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients of one dense layer and returns the
/// gradient with respect to its input.
fn dense_backward(p: &[f64], g: &mut [f64], d: Dense, input: &[f64], delta: &[f64]) -> Vec<f64> {
    let mut d_in = vec![0.0; d.n_in];
    for (o, &dv) in delta.iter().enumerate() {
        g[d.b_off + o] += dv;
        let w_row = &p[d.w_off + o * d.n_in..d.w_off + (o + 1) * d.n_in];
        let g_row = &mut g[d.w_off + o * d.n_in..d.w_off + (o + 1) * d.n_in];
        for j in 0..d.n_in {
            g_row[j] += dv * input[j];
            d_in[j] += dv * w_row[j];
        }
    }
    d_in
}
