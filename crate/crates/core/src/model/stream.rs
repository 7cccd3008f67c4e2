use super::{Activation, ModelConfig, ModelWeights, IMU_CHANNELS};
use crate::error::{Error, Result};
use crate::tensor::{sigmoid, ConvKernel};

/// Ring buffer of the most recent `capacity` input frames of one layer.
#[derive(Debug, Clone)]
struct History {
    channels: usize,
    capacity: usize,
    frames: Vec<f64>,
    head: usize,
}

impl History {
    fn new(channels: usize, capacity: usize) -> Self {
        Self {
            channels,
            capacity,
            frames: vec![0.0; channels * capacity],
            head: 0,
        }
    }

    /// Value of `channel` from `lag` steps ago, `1 <= lag <= capacity`.
    #[inline]
    fn lagged(&self, channel: usize, lag: usize) -> f64 {
        let slot = (self.head + self.capacity - lag) % self.capacity;
        self.frames[slot * self.channels + channel]
    }

    fn push(&mut self, frame: &[f64]) {
        if self.capacity == 0 {
            return;
        }
        let start = self.head * self.channels;
        self.frames[start..start + self.channels].copy_from_slice(frame);
        self.head = (self.head + 1) % self.capacity;
    }

    fn reset(&mut self) {
        self.frames.fill(0.0);
        self.head = 0;
    }
}

/// Per-layer causal history for sample-at-a-time inference.
///
/// Each dilated block keeps `(k - 1) * 2^i` past frames of its input and the
/// context layer keeps `w - 1` past frames of the skip sum; pointwise layers
/// keep nothing.
#[derive(Debug, Clone)]
pub struct StreamState {
    config: ModelConfig,
    blocks: Vec<History>,
    context: History,
    steps: u64,
}

impl StreamState {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let blocks = (0..config.blocks)
            .map(|i| History::new(config.residual_channels, (config.kernel_size - 1) * config.dilation(i)))
            .collect();
        Ok(Self {
            config: *config,
            blocks,
            context: History::new(config.skip_channels, config.window - 1),
            steps: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Buffer length of each stateful layer: the dilated blocks in order,
    /// then the context layer.
    pub fn buffer_lengths(&self) -> Vec<usize> {
        self.blocks
            .iter()
            .chain(std::iter::once(&self.context))
            .map(|h| h.capacity)
            .collect()
    }

    /// Samples consumed since creation or the last reset.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn reset(&mut self) {
        self.blocks.iter_mut().for_each(History::reset);
        self.context.reset();
        self.steps = 0;
    }
}

/// One output step of a causal convolution. Accumulates in the same order
/// as the batch kernel so results agree bit for bit.
fn conv_step(kernel: &ConvKernel, history: Option<&History>, current: &[f64], out: &mut [f64]) {
    let k = kernel.k;
    for (c, o) in out.iter_mut().enumerate() {
        let w_row = kernel.weight.row(c);
        let mut acc = kernel.bias.data()[c];
        for (i, &now) in current.iter().enumerate() {
            for j in 0..k {
                let lag = (k - 1 - j) * kernel.dilation;
                let v = if lag == 0 {
                    now
                } else {
                    history.map_or(0.0, |h| h.lagged(i, lag))
                };
                acc += w_row[i * k + j] * v;
            }
        }
        *o = acc;
    }
}

/// Consumes one `[6]` IMU frame and returns the prediction for that
/// instant, equal to the batch forward pass over the full history.
pub fn forward_streaming(weights: &ModelWeights, state: &mut StreamState, sample: &[f64]) -> Result<f64> {
    if state.config != weights.config {
        return Err(Error::State(format!(
            "state built for {:?} but weights use {:?}",
            state.config, weights.config
        )));
    }
    if sample.len() != IMU_CHANNELS {
        return Err(Error::Shape(format!(
            "stream frame needs {IMU_CHANNELS} values, got {}",
            sample.len()
        )));
    }
    let cfg = &weights.config;
    let (res, skip_ch) = (cfg.residual_channels, cfg.skip_channels);

    let scaled: Vec<f64> = sample
        .iter()
        .enumerate()
        .map(|(c, &v)| v * weights.scaler.scale[c] + weights.scaler.shift[c])
        .collect();
    let mut z = vec![0.0; res];
    conv_step(&weights.input_proj, None, &scaled, &mut z);

    let mut h = vec![0.0; cfg.dilated_out_channels()];
    let mut g = vec![0.0; res];
    let mut skip = vec![0.0; skip_ch];
    let mut skip_sum = vec![0.0; skip_ch];
    let mut r = vec![0.0; res];
    for (i, (block, hist)) in weights.blocks.iter().zip(state.blocks.iter_mut()).enumerate() {
        conv_step(&block.dilated, Some(hist), &z, &mut h);
        hist.push(&z);
        match cfg.activation {
            Activation::Gated => {
                for c in 0..res {
                    g[c] = h[c].tanh() * sigmoid(h[res + c]);
                }
            }
            Activation::Relu => {
                for c in 0..res {
                    g[c] = h[c].max(0.0);
                }
            }
        }
        conv_step(&block.skip, None, &g, &mut skip);
        if i == 0 {
            skip_sum.copy_from_slice(&skip);
        } else {
            skip_sum.iter_mut().zip(&skip).for_each(|(a, b)| *a += b);
        }
        conv_step(&block.residual, None, &g, &mut r);
        z.iter_mut().zip(&r).for_each(|(a, b)| *a += b);
    }

    let mut context = vec![0.0; skip_ch];
    conv_step(&weights.context, Some(&state.context), &skip_sum, &mut context);
    state.context.push(&skip_sum);

    let mut y = [0.0];
    conv_step(&weights.output, None, &context, &mut y);
    state.steps += 1;
    Ok(y[0])
}
