//! The three-stream forecaster: a recurrent encoder over the ego history,
//! two convolutional streams over the horizon and neighborhood grids, and a
//! recurrent decoder emitting per-frame displacements.
//!
//! Shape table (H = hidden, C = conv channels, s = stride, R×K×F = grid):
//!
//! | tensor           | shape                   |
//! |------------------|-------------------------|
//! | ego.w            | 4H × (4 + H)            |
//! | horizon_conv.w   | C × (9·F)               |
//! | horizon_cell.w   | 4H × (R·K·C + H)        |
//! | neighbor_conv.w  | C × (9·F)               |
//! | neighbor_cell.w  | 4H × (R·K·C + H)        |
//! | bridge.w         | H × 3H                  |
//! | decoder.w        | 4H × (4 + H)            |
//! | output.w         | 2s × H                  |
//! | skip.w           | 2s × 4                  |
//!
//! Every `.w` has a matching bias `.b` with as many entries as rows.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::layers::{Activation, Conv3x3, Linear, Lstm, LstmStep};
use crate::agent::AgentClass;
use crate::dataset::{Grid, Sample, WindowConfig, FEATURE_LEN};
use crate::error::{Error, Result};
use crate::vec2::Vec2;

/// Meters per unit of encoder position input.
pub const POSITION_SCALE: f64 = 10.0;
/// Meters per second per unit of velocity input and displacement output.
pub const VELOCITY_SCALE: f64 = 10.0;

const EGO_INPUT: usize = 4;
const DECODER_INPUT: usize = 4;

/// Per-feature input scaling for the standard agent features.
fn default_feature_scale(features: usize) -> Vec<f64> {
    if features == FEATURE_LEN {
        let mut s = vec![1.0; FEATURE_LEN];
        for v in &mut s[AgentClass::COUNT..AgentClass::COUNT + 3] {
            *v = 0.1;
        }
        s
    } else {
        vec![1.0; features]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub conv_channels: usize,
    pub history_len: usize,
    pub future_len: usize,
    pub fps: f64,
    /// Frames per recurrent step in both encoder and decoder.
    pub stride: usize,
    /// Frames over which the decoder's smoothed velocity input is taken.
    pub velocity_window: usize,
    /// `(rows, cols, features)`.
    pub horizon_grid: (usize, usize, usize),
    pub neighbor_grid: (usize, usize, usize),
    pub conv_activation: Activation,
    /// When false, both grids are replaced by zeros (ego-only ablation).
    pub use_context: bool,
    pub feature_scale: Vec<f64>,
}

impl ModelConfig {
    pub fn for_window(w: &WindowConfig, hidden: usize, conv_channels: usize, stride: usize) -> Self {
        let hg = w.horizon_grid;
        let ng = w.neighbor_grid;
        ModelConfig {
            hidden,
            conv_channels,
            history_len: w.history_len(),
            future_len: w.future_len(),
            fps: w.fps,
            stride,
            velocity_window: ((w.heading_window_s * w.fps).round() as usize).max(1),
            horizon_grid: (hg.rows, hg.cols, hg.features),
            neighbor_grid: (ng.rows, ng.cols, ng.features),
            conv_activation: Activation::Relu,
            use_context: true,
            feature_scale: default_feature_scale(hg.features),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::ShapeMismatch(m.to_string()));
        if self.hidden < 1 || self.conv_channels < 1 {
            return bad("hidden size and conv channels must be positive");
        }
        if self.stride < 1 || self.history_len < self.stride + 1 {
            return bad("history must exceed one stride");
        }
        if self.future_len < 1 || !(self.fps > 0.0) {
            return bad("future length and fps must be positive");
        }
        if self.horizon_grid.2 != self.neighbor_grid.2 || self.feature_scale.len() != self.horizon_grid.2 {
            return bad("grid feature counts disagree");
        }
        if self.horizon_grid.0 * self.horizon_grid.1 == 0 || self.neighbor_grid.0 * self.neighbor_grid.1 == 0 {
            return bad("empty grid");
        }
        Ok(())
    }

    fn encoder_steps(&self) -> usize {
        (self.history_len - 1) / self.stride
    }

    fn decoder_steps(&self) -> usize {
        self.future_len.div_ceil(self.stride)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub ego: Lstm,
    pub horizon_conv: Conv3x3,
    pub horizon_cell: Lstm,
    pub neighbor_conv: Conv3x3,
    pub neighbor_cell: Lstm,
    pub bridge: Linear,
    pub decoder: Lstm,
    pub output: Linear,
    pub skip: Linear,
}

impl ModelParams {
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let h = config.hidden;
        let c = config.conv_channels;
        let (hr, hc, f) = config.horizon_grid;
        let (nr, nc, _) = config.neighbor_grid;
        let out = 2 * config.stride;
        Ok(ModelParams {
            ego: Lstm::zeros(EGO_INPUT, h),
            horizon_conv: Conv3x3::zeros(f, c),
            horizon_cell: Lstm::zeros(hr * hc * c, h),
            neighbor_conv: Conv3x3::zeros(f, c),
            neighbor_cell: Lstm::zeros(nr * nc * c, h),
            bridge: Linear::zeros(3 * h, h),
            decoder: Lstm::zeros(DECODER_INPUT, h),
            output: Linear::zeros(h, out),
            skip: Linear::zeros(DECODER_INPUT, out),
            config,
        })
    }

    /// Uniform `±1/√fan_in` initialization from a seed.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = config.hidden;
        let c = config.conv_channels;
        let (hr, hc, f) = config.horizon_grid;
        let (nr, nc, _) = config.neighbor_grid;
        let out = 2 * config.stride;
        Ok(ModelParams {
            ego: Lstm::init(EGO_INPUT, h, &mut rng),
            horizon_conv: Conv3x3::init(f, c, &mut rng),
            horizon_cell: Lstm::init(hr * hc * c, h, &mut rng),
            neighbor_conv: Conv3x3::init(f, c, &mut rng),
            neighbor_cell: Lstm::init(nr * nc * c, h, &mut rng),
            bridge: Linear::init(3 * h, h, &mut rng),
            decoder: Lstm::init(DECODER_INPUT, h, &mut rng),
            output: Linear::init(h, out, &mut rng),
            skip: Linear::init(DECODER_INPUT, out, &mut rng),
            config,
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(self.config.clone()).expect("config already validated")
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(&'static str, &Vec<f64>)> {
        vec![
            ("ego.w", &self.ego.w),
            ("ego.b", &self.ego.b),
            ("horizon_conv.w", &self.horizon_conv.w),
            ("horizon_conv.b", &self.horizon_conv.b),
            ("horizon_cell.w", &self.horizon_cell.w),
            ("horizon_cell.b", &self.horizon_cell.b),
            ("neighbor_conv.w", &self.neighbor_conv.w),
            ("neighbor_conv.b", &self.neighbor_conv.b),
            ("neighbor_cell.w", &self.neighbor_cell.w),
            ("neighbor_cell.b", &self.neighbor_cell.b),
            ("bridge.w", &self.bridge.w),
            ("bridge.b", &self.bridge.b),
            ("decoder.w", &self.decoder.w),
            ("decoder.b", &self.decoder.b),
            ("output.w", &self.output.w),
            ("output.b", &self.output.b),
            ("skip.w", &self.skip.w),
            ("skip.b", &self.skip.b),
        ]
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Vec<f64>)> {
        vec![
            ("ego.w", &mut self.ego.w),
            ("ego.b", &mut self.ego.b),
            ("horizon_conv.w", &mut self.horizon_conv.w),
            ("horizon_conv.b", &mut self.horizon_conv.b),
            ("horizon_cell.w", &mut self.horizon_cell.w),
            ("horizon_cell.b", &mut self.horizon_cell.b),
            ("neighbor_conv.w", &mut self.neighbor_conv.w),
            ("neighbor_conv.b", &mut self.neighbor_conv.b),
            ("neighbor_cell.w", &mut self.neighbor_cell.w),
            ("neighbor_cell.b", &mut self.neighbor_cell.b),
            ("bridge.w", &mut self.bridge.w),
            ("bridge.b", &mut self.bridge.b),
            ("decoder.w", &mut self.decoder.w),
            ("decoder.b", &mut self.decoder.b),
            ("output.w", &mut self.output.w),
            ("output.b", &mut self.output.b),
            ("skip.w", &mut self.skip.w),
            ("skip.b", &mut self.skip.b),
        ]
    }

    /// Shapes matching [`ModelParams::tensors`].
    pub fn tensor_shapes(&self) -> Vec<Vec<usize>> {
        let lstm = |l: &Lstm| [vec![4 * l.hidden, l.input + l.hidden], vec![4 * l.hidden]];
        let conv = |c: &Conv3x3| [vec![c.out_ch, 9 * c.in_ch], vec![c.out_ch]];
        let lin = |l: &Linear| [vec![l.output, l.input], vec![l.output]];
        [
            lstm(&self.ego),
            conv(&self.horizon_conv),
            lstm(&self.horizon_cell),
            conv(&self.neighbor_conv),
            lstm(&self.neighbor_cell),
            lin(&self.bridge),
            lstm(&self.decoder),
            lin(&self.output),
            lin(&self.skip),
        ]
        .into_iter()
        .flatten()
        .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    pub fn norm_sq(&self) -> f64 {
        self.tensors().iter().flat_map(|(_, t)| t.iter()).map(|v| v * v).sum()
    }

    pub fn scale(&mut self, k: f64) {
        for (_, t) in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= k);
        }
    }

    /// `self += k · other`.
    pub fn add_scaled(&mut self, other: &ModelParams, k: f64) {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += k * y;
            }
        }
    }
}

struct StreamCache {
    patches: Vec<Vec<f64>>,
    activated: Vec<f64>,
    cell: LstmStep,
}

struct ForwardCache {
    ego: Vec<LstmStep>,
    horizon: StreamCache,
    neighbor: StreamCache,
    context: Vec<f64>,
    z: Vec<f64>,
    decoder_input: Vec<f64>,
    decoder: Vec<LstmStep>,
    hidden: Vec<Vec<f64>>,
}

fn check_grid(g: &Grid, shape: (usize, usize, usize), name: &str) -> Result<()> {
    if (g.rows, g.cols, g.features) != shape || g.data.len() != shape.0 * shape.1 * shape.2 {
        return Err(Error::ShapeMismatch(format!(
            "{name} grid is {}x{}x{}, model expects {}x{}x{}",
            g.rows, g.cols, g.features, shape.0, shape.1, shape.2
        )));
    }
    Ok(())
}

impl ModelParams {
    fn check_sample(&self, s: &Sample) -> Result<()> {
        let c = &self.config;
        if s.history.len() != c.history_len {
            return Err(Error::ShapeMismatch(format!(
                "history has {} points, model expects {}",
                s.history.len(),
                c.history_len
            )));
        }
        if s.future.len() != c.future_len && !s.future.is_empty() {
            return Err(Error::ShapeMismatch(format!(
                "future has {} points, model expects {}",
                s.future.len(),
                c.future_len
            )));
        }
        check_grid(&s.horizon_grid, c.horizon_grid, "horizon")?;
        check_grid(&s.neighbor_grid, c.neighbor_grid, "neighbor")
    }

    fn encoder_inputs(&self, history: &[Vec2]) -> Vec<[f64; EGO_INPUT]> {
        let c = &self.config;
        let n = c.encoder_steps();
        let last = c.history_len - 1;
        (0..n)
            .map(|k| {
                let i = last - (n - 1 - k) * c.stride;
                let p = history[i];
                let v = (p - history[i - c.stride]) * (c.fps / c.stride as f64);
                [
                    p.x / POSITION_SCALE,
                    p.y / POSITION_SCALE,
                    v.x / VELOCITY_SCALE,
                    v.y / VELOCITY_SCALE,
                ]
            })
            .collect()
    }

    fn decoder_input(&self, history: &[Vec2]) -> Vec<f64> {
        let c = &self.config;
        let last = c.history_len - 1;
        let w = c.velocity_window.min(last);
        let smooth = (history[last] - history[last - w]) * (c.fps / w as f64);
        let step = (history[last] - history[last - 1]) * c.fps;
        vec![
            smooth.x / VELOCITY_SCALE,
            smooth.y / VELOCITY_SCALE,
            step.x / VELOCITY_SCALE,
            step.y / VELOCITY_SCALE,
        ]
    }

    fn stream_forward(&self, conv: &Conv3x3, cell: &Lstm, grid: &Grid) -> (Vec<f64>, StreamCache) {
        let scaled: Vec<f64> = if self.config.use_context {
            grid.data
                .chunks_exact(grid.features)
                .flat_map(|cellv| cellv.iter().zip(&self.config.feature_scale).map(|(v, k)| v * k))
                .collect()
        } else {
            vec![0.0; grid.data.len()]
        };
        let patches = conv.patches(&scaled, grid.rows, grid.cols);
        let act = self.config.conv_activation;
        let activated: Vec<f64> = conv.forward(&patches).into_iter().map(|v| act.apply(v)).collect();
        let zeros = vec![0.0; cell.hidden];
        let (h, _, cache) = cell.step(&activated, &zeros, &zeros);
        (
            h,
            StreamCache {
                patches,
                activated,
                cell: cache,
            },
        )
    }

    fn stream_backward(&self, conv: &Conv3x3, cell: &Lstm, cache: &StreamCache, grid: &Grid, dh: &[f64], gconv: &mut Conv3x3, gcell: &mut Lstm) {
        let zeros = vec![0.0; cell.hidden];
        let (dx, _, _) = cell.step_backward(&cache.cell, dh, &zeros, gcell);
        let act = self.config.conv_activation;
        let dpre: Vec<f64> = dx
            .iter()
            .zip(&cache.activated)
            .map(|(d, y)| d * act.derivative_from_output(*y))
            .collect();
        conv.backward(&cache.patches, &dpre, grid.rows, grid.cols, gconv);
    }

    /// Ego-frame displacements, one per future frame.
    fn forward_cached(&self, s: &Sample) -> Result<(Vec<Vec2>, ForwardCache)> {
        self.check_sample(s)?;
        let c = &self.config;
        let hd = c.hidden;

        let mut h = vec![0.0; hd];
        let mut cs = vec![0.0; hd];
        let mut ego = Vec::new();
        for x in self.encoder_inputs(&s.history) {
            let (h2, c2, cache) = self.ego.step(&x, &h, &cs);
            h = h2;
            cs = c2;
            ego.push(cache);
        }
        let (eh, horizon) = self.stream_forward(&self.horizon_conv, &self.horizon_cell, &s.horizon_grid);
        let (en, neighbor) = self.stream_forward(&self.neighbor_conv, &self.neighbor_cell, &s.neighbor_grid);
        let mut context = h;
        context.extend_from_slice(&eh);
        context.extend_from_slice(&en);
        let z: Vec<f64> = self.bridge.forward(&context).into_iter().map(f64::tanh).collect();

        let decoder_input = self.decoder_input(&s.history);
        let skip = self.skip.forward(&decoder_input);
        let unit = VELOCITY_SCALE / c.fps;
        let mut disp = Vec::with_capacity(c.future_len);
        let mut h = z.clone();
        let mut cs = vec![0.0; hd];
        let mut decoder = Vec::new();
        let mut hidden = Vec::new();
        for _ in 0..c.decoder_steps() {
            let (h2, c2, cache) = self.decoder.step(&decoder_input, &h, &cs);
            h = h2;
            cs = c2;
            let mut out = self.output.forward(&h);
            for (o, k) in out.iter_mut().zip(&skip) {
                *o += k;
            }
            for pair in out.chunks_exact(2) {
                if disp.len() < c.future_len {
                    disp.push(Vec2::new(pair[0] * unit, pair[1] * unit));
                }
            }
            decoder.push(cache);
            hidden.push(h.clone());
        }
        Ok((
            disp,
            ForwardCache {
                ego,
                horizon,
                neighbor,
                context,
                z,
                decoder_input,
                decoder,
                hidden,
            },
        ))
    }

    /// Predicted ego-frame positions of the future frames.
    pub fn forward_local(&self, s: &Sample) -> Result<Vec<Vec2>> {
        let (disp, _) = self.forward_cached(s)?;
        Ok(cumulative(&disp))
    }

    /// Adds `scale ·` the gradient of the sample loss to `grad`; returns the
    /// unscaled loss.
    pub fn accumulate_gradient(&self, s: &Sample, scale: f64, grad: &mut ModelParams) -> Result<f64> {
        let (disp, cache) = self.forward_cached(s)?;
        let c = &self.config;
        if s.future.len() != c.future_len {
            return Err(Error::LengthMismatch {
                left: c.future_len,
                right: s.future.len(),
            });
        }
        let pred = cumulative(&disp);
        let n = pred.len() as f64;
        let loss = pred.iter().zip(&s.future).map(|(p, t)| (*p - *t).norm_sq()).sum::<f64>() / n;

        // d loss / d displacement_m = sum over i >= m of d loss / d position_i.
        let mut ddisp = vec![Vec2::ZERO; pred.len()];
        let mut acc = Vec2::ZERO;
        for i in (0..pred.len()).rev() {
            acc += (pred[i] - s.future[i]) * (2.0 * scale / n);
            ddisp[i] = acc;
        }

        let hd = c.hidden;
        let unit = VELOCITY_SCALE / c.fps;
        let out_dim = 2 * c.stride;
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        let mut dskip_in = vec![0.0; DECODER_INPUT];
        for k in (0..cache.decoder.len()).rev() {
            let mut dout = vec![0.0; out_dim];
            for j in 0..c.stride {
                let i = k * c.stride + j;
                if i < ddisp.len() {
                    dout[2 * j] = ddisp[i].x * unit;
                    dout[2 * j + 1] = ddisp[i].y * unit;
                }
            }
            let mut dh = dh_next.clone();
            self.output.backward(&cache.hidden[k], &dout, &mut grad.output, &mut dh);
            self.skip.backward(&cache.decoder_input, &dout, &mut grad.skip, &mut dskip_in);
            let (_, dh_prev, dc_prev) = self.decoder.step_backward(&cache.decoder[k], &dh, &dc_next, &mut grad.decoder);
            dh_next = dh_prev;
            dc_next = dc_prev;
        }

        let dz_pre: Vec<f64> = dh_next.iter().zip(&cache.z).map(|(d, z)| d * (1.0 - z * z)).collect();
        let mut dctx = vec![0.0; 3 * hd];
        self.bridge.backward(&cache.context, &dz_pre, &mut grad.bridge, &mut dctx);

        let mut dh = dctx[..hd].to_vec();
        let mut dc = vec![0.0; hd];
        for step in cache.ego.iter().rev() {
            let (_, dh_prev, dc_prev) = self.ego.step_backward(step, &dh, &dc, &mut grad.ego);
            dh = dh_prev;
            dc = dc_prev;
        }
        self.stream_backward(
            &self.horizon_conv,
            &self.horizon_cell,
            &cache.horizon,
            &s.horizon_grid,
            &dctx[hd..2 * hd],
            &mut grad.horizon_conv,
            &mut grad.horizon_cell,
        );
        self.stream_backward(
            &self.neighbor_conv,
            &self.neighbor_cell,
            &cache.neighbor,
            &s.neighbor_grid,
            &dctx[2 * hd..],
            &mut grad.neighbor_conv,
            &mut grad.neighbor_cell,
        );
        Ok(loss)
    }
}

fn cumulative(disp: &[Vec2]) -> Vec<Vec2> {
    let mut acc = Vec2::ZERO;
    disp.iter()
        .map(|d| {
            acc += *d;
            acc
        })
        .collect()
}
