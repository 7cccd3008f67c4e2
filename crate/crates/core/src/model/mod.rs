//! Sliding-window WaveNet: a 1x1 input projection, a stack of dilated
//! causal blocks with residual and skip paths, a causal window convolution
//! over the summed skips, and a linear 1x1 output head.

mod checkpoint;
mod stream;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_expecting, load_weights, load_weights_expecting, save_checkpoint, save_weights,
    Checkpoint,
};
pub use stream::{forward_streaming, StreamState};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv1d_causal, gated_activation, relu, ConvKernel, ConvVars, Tape, Tensor, Var};

/// Accelerometer x/y/z followed by gyroscope x/y/z.
pub const IMU_CHANNELS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// `tanh(filter) * sigmoid(gate)`; the dilated conv emits `2 * residual` channels.
    Gated,
    Relu,
}

impl Activation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Activation::Gated => "gated",
            Activation::Relu => "relu",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Kernel size of every dilated convolution.
    pub kernel_size: usize,
    /// Number of dilated blocks; block `i` uses dilation `2^i`.
    pub blocks: usize,
    pub residual_channels: usize,
    pub skip_channels: usize,
    /// Width of the causal context convolution over the skip sum.
    pub window: usize,
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            kernel_size: 3,
            blocks: 6,
            residual_channels: 32,
            skip_channels: 32,
            window: 16,
            activation: Activation::Gated,
        }
    }
}

/// Receptive field in samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReceptiveField {
    /// Span of the dilated stack alone, `1 + (k - 1)(2^N - 1)`.
    pub blocks: usize,
    /// Including the context window, `blocks + w - 1`.
    pub total: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.kernel_size < 2 || self.blocks < 1 || self.window < 1 {
            return Err(Error::Config(format!(
                "model needs kernel_size >= 2, blocks >= 1, window >= 1; got {}, {}, {}",
                self.kernel_size, self.blocks, self.window
            )));
        }
        if self.blocks > 20 {
            return Err(Error::Config(format!("{} blocks is unreasonably deep", self.blocks)));
        }
        if self.residual_channels < 1 || self.skip_channels < 1 {
            return Err(Error::Config("channel widths must be >= 1".into()));
        }
        Ok(())
    }

    pub fn dilation(&self, block: usize) -> usize {
        1 << block
    }

    fn dilated_out_channels(&self) -> usize {
        match self.activation {
            Activation::Gated => 2 * self.residual_channels,
            Activation::Relu => self.residual_channels,
        }
    }
}

pub fn receptive_field(cfg: &ModelConfig) -> ReceptiveField {
    let blocks = 1 + (cfg.kernel_size - 1) * ((1usize << cfg.blocks) - 1);
    ReceptiveField {
        blocks,
        total: blocks + cfg.window - 1,
    }
}

/// Fixed per-channel `x * scale + shift` applied to the raw IMU input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputScaler {
    pub scale: Vec<f64>,
    pub shift: Vec<f64>,
}

impl Default for InputScaler {
    fn default() -> Self {
        Self {
            scale: vec![1.0; IMU_CHANNELS],
            shift: vec![0.0; IMU_CHANNELS],
        }
    }
}

impl InputScaler {
    /// Standardizes each channel to zero mean and unit variance over the
    /// given inputs. Constant channels keep unit scale.
    pub fn fit<'a>(inputs: impl IntoIterator<Item = &'a Tensor>) -> Self {
        let mut n = 0usize;
        let mut sum = [0.0; IMU_CHANNELS];
        let mut sum_sq = [0.0; IMU_CHANNELS];
        for x in inputs {
            n += x.len();
            for c in 0..IMU_CHANNELS.min(x.channels()) {
                for &v in x.row(c) {
                    sum[c] += v;
                    sum_sq[c] += v * v;
                }
            }
        }
        if n == 0 {
            return Self::default();
        }
        let mut scaler = Self::default();
        for c in 0..IMU_CHANNELS {
            let mean = sum[c] / n as f64;
            let var = (sum_sq[c] / n as f64 - mean * mean).max(0.0);
            let std = var.sqrt();
            let scale = if std > 1e-12 { 1.0 / std } else { 1.0 };
            scaler.scale[c] = scale;
            scaler.shift[c] = -mean * scale;
        }
        scaler
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for c in 0..out.channels() {
            let (a, b) = (self.scale[c], self.shift[c]);
            out.row_mut(c).iter_mut().for_each(|v| *v = *v * a + b);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub dilated: ConvKernel,
    pub residual: ConvKernel,
    pub skip: ConvKernel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub scaler: InputScaler,
    pub input_proj: ConvKernel,
    pub blocks: Vec<BlockWeights>,
    pub context: ConvKernel,
    pub output: ConvKernel,
}

impl ModelWeights {
    /// All-zero weights with the shapes `cfg` implies.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let (res, skip) = (cfg.residual_channels, cfg.skip_channels);
        let blocks = (0..cfg.blocks)
            .map(|i| BlockWeights {
                dilated: ConvKernel::zeros(res, cfg.dilated_out_channels(), cfg.kernel_size, cfg.dilation(i)),
                residual: ConvKernel::zeros(res, res, 1, 1),
                skip: ConvKernel::zeros(res, skip, 1, 1),
            })
            .collect();
        Ok(Self {
            config: *cfg,
            scaler: InputScaler::default(),
            input_proj: ConvKernel::zeros(IMU_CHANNELS, res, 1, 1),
            blocks,
            context: ConvKernel::zeros(skip, skip, cfg.window, 1),
            output: ConvKernel::zeros(skip, 1, 1, 1),
        })
    }

    /// Uniform `[-a, a]` weights with `a = sqrt(6 / fan_in)`, zero biases.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut weights = Self::zeros(cfg)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, kernel) in weights.kernels_mut() {
            let fan_in = kernel.weight.len() as f64;
            let limit = (6.0 / fan_in).sqrt();
            for w in kernel.weight.data_mut() {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(weights)
    }

    /// [`init`](Self::init) with the output head's weights zeroed, so
    /// training starts from a constant prediction instead of the large
    /// outputs a deep random stack produces.
    pub fn init_for_training(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut weights = Self::init(cfg, seed)?;
        weights.output.weight.data_mut().fill(0.0);
        Ok(weights)
    }

    pub fn kernels(&self) -> Vec<(String, &ConvKernel)> {
        let mut out = vec![("input_proj".to_string(), &self.input_proj)];
        for (i, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{i}.dilated"), &b.dilated));
            out.push((format!("block{i}.residual"), &b.residual));
            out.push((format!("block{i}.skip"), &b.skip));
        }
        out.push(("context".to_string(), &self.context));
        out.push(("output".to_string(), &self.output));
        out
    }

    pub fn kernels_mut(&mut self) -> Vec<(String, &mut ConvKernel)> {
        let mut out = vec![("input_proj".to_string(), &mut self.input_proj)];
        for (i, b) in self.blocks.iter_mut().enumerate() {
            out.push((format!("block{i}.dilated"), &mut b.dilated));
            out.push((format!("block{i}.residual"), &mut b.residual));
            out.push((format!("block{i}.skip"), &mut b.skip));
        }
        out.push(("context".to_string(), &mut self.context));
        out.push(("output".to_string(), &mut self.output));
        out
    }

    /// Learnable tensors in canonical order, `<layer>.weight` then `<layer>.bias`.
    pub fn params(&self) -> Vec<(String, &Tensor)> {
        self.kernels()
            .into_iter()
            .flat_map(|(name, k)| [(format!("{name}.weight"), &k.weight), (format!("{name}.bias"), &k.bias)])
            .collect()
    }

    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.kernels_mut()
            .into_iter()
            .flat_map(|(name, k)| {
                [
                    (format!("{name}.weight"), &mut k.weight),
                    (format!("{name}.bias"), &mut k.bias),
                ]
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, t)| t.data().len()).sum()
    }
}

fn activate(act: Activation, x: &Tensor) -> Result<Tensor> {
    match act {
        Activation::Gated => gated_activation(x),
        Activation::Relu => Ok(relu(x)),
    }
}

fn add_into(acc: &mut Tensor, x: &Tensor) {
    for (a, b) in acc.data_mut().iter_mut().zip(x.data()) {
        *a += b;
    }
}

fn check_input(x: &Tensor) -> Result<()> {
    if x.channels() != IMU_CHANNELS {
        return Err(Error::Shape(format!(
            "model expects {IMU_CHANNELS} input channels, got {}",
            x.channels()
        )));
    }
    Ok(())
}

/// Batch forward pass over a `[6 x T]` input, returning `[1 x T]`.
pub fn forward(weights: &ModelWeights, x: &Tensor) -> Result<Tensor> {
    Ok(forward_with_skip_sum(weights, x)?.0)
}

/// Forward pass that also returns the summed skip features fed to the
/// context layer.
pub fn forward_with_skip_sum(weights: &ModelWeights, x: &Tensor) -> Result<(Tensor, Tensor)> {
    check_input(x)?;
    let act = weights.config.activation;
    let scaled = weights.scaler.apply(x);
    let mut z = conv1d_causal(&scaled, &weights.input_proj)?;
    let mut skip_sum: Option<Tensor> = None;
    for block in &weights.blocks {
        let g = activate(act, &conv1d_causal(&z, &block.dilated)?)?;
        let skip = conv1d_causal(&g, &block.skip)?;
        match skip_sum.as_mut() {
            Some(s) => add_into(s, &skip),
            None => skip_sum = Some(skip),
        }
        add_into(&mut z, &conv1d_causal(&g, &block.residual)?);
    }
    let skip_sum = skip_sum.expect("validated config has at least one block");
    let context = conv1d_causal(&skip_sum, &weights.context)?;
    Ok((conv1d_causal(&context, &weights.output)?, skip_sum))
}

/// Tape handles for every learnable tensor of a model.
#[derive(Debug, Clone)]
pub struct TapeParams {
    input_proj: ConvVars,
    blocks: Vec<[ConvVars; 3]>,
    context: ConvVars,
    output: ConvVars,
}

impl TapeParams {
    pub fn register(tape: &mut Tape, weights: &ModelWeights) -> Self {
        Self {
            input_proj: tape.conv_params(&weights.input_proj),
            blocks: weights
                .blocks
                .iter()
                .map(|b| {
                    [
                        tape.conv_params(&b.dilated),
                        tape.conv_params(&b.residual),
                        tape.conv_params(&b.skip),
                    ]
                })
                .collect(),
            context: tape.conv_params(&weights.context),
            output: tape.conv_params(&weights.output),
        }
    }

    /// Same order as [`ModelWeights::params`].
    pub fn vars(&self) -> Vec<Var> {
        let mut kernels = vec![self.input_proj];
        for [dilated, residual, skip] in &self.blocks {
            kernels.extend([*dilated, *residual, *skip]);
        }
        kernels.extend([self.context, self.output]);
        kernels.into_iter().flat_map(|k| [k.weight, k.bias]).collect()
    }
}

/// Forward pass recorded on a tape; computes the same values as [`forward`].
pub fn forward_on_tape(weights: &ModelWeights, params: &TapeParams, tape: &mut Tape, x: Var) -> Result<Var> {
    check_input(tape.value(x))?;
    let act = weights.config.activation;
    let scaled = tape.channel_affine(x, &weights.scaler.scale, &weights.scaler.shift)?;
    let mut z = tape.conv1d(scaled, params.input_proj)?;
    let mut skip_sum: Option<Var> = None;
    for [dilated, residual, skip] in &params.blocks {
        let h = tape.conv1d(z, *dilated)?;
        let g = match act {
            Activation::Gated => tape.gated(h)?,
            Activation::Relu => tape.relu(h),
        };
        let s = tape.conv1d(g, *skip)?;
        skip_sum = Some(match skip_sum {
            Some(acc) => tape.add(acc, s)?,
            None => s,
        });
        let r = tape.conv1d(g, *residual)?;
        z = tape.add(z, r)?;
    }
    let skip_sum = skip_sum.expect("validated config has at least one block");
    let context = tape.conv1d(skip_sum, params.context)?;
    tape.conv1d(context, params.output)
}
