use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use trackpred::agent::AgentClass;
use trackpred::dataset::{Grid, Sample, WindowConfig};
use trackpred::predictor::{
    self, mean_loss, read_checkpoint, train, write_checkpoint, Activation, Checkpoint, ModelConfig, ModelParams,
    OptimizerKind, TrainConfig,
};
use trackpred::Vec2;

fn tiny_config(activation: Activation) -> ModelConfig {
    ModelConfig {
        hidden: 2,
        conv_channels: 1,
        history_len: 5,
        future_len: 3,
        fps: 2.0,
        stride: 2,
        velocity_window: 2,
        horizon_grid: (3, 2, 2),
        neighbor_grid: (2, 2, 2),
        conv_activation: activation,
        use_context: true,
        feature_scale: vec![0.5, 2.0],
    }
}

fn random_grid(rows: usize, cols: usize, features: usize, rng: &mut impl Rng) -> Grid {
    Grid {
        rows,
        cols,
        features,
        data: (0..rows * cols * features).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    }
}

fn random_sample(cfg: &ModelConfig, rng: &mut impl Rng) -> Sample {
    let mut history: Vec<Vec2> = (0..cfg.history_len)
        .map(|_| Vec2::new(rng.gen_range(-8.0..2.0), rng.gen_range(-2.0..2.0)))
        .collect();
    *history.last_mut().unwrap() = Vec2::ZERO;
    let future = (0..cfg.future_len)
        .map(|_| Vec2::new(rng.gen_range(0.0..6.0), rng.gen_range(-2.0..2.0)))
        .collect();
    let (hr, hc, f) = cfg.horizon_grid;
    let (nr, nc, _) = cfg.neighbor_grid;
    Sample {
        sample_id: 0,
        ego_id: 1,
        ego_class: AgentClass::Car,
        anchor_frame: 0,
        anchor: Vec2::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)),
        heading: rng.gen_range(-3.0..3.0),
        ego_velocity: Vec2::new(1.0, 0.0),
        history,
        future,
        horizon_grid: random_grid(hr, hc, f, rng),
        neighbor_grid: random_grid(nr, nc, f, rng),
        neighbors: Vec::new(),
    }
}

// Naive reference implementation with explicit indexing.

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn ref_lstm(w: &[f64], b: &[f64], x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hd = h.len();
    let cols = x.len() + hd;
    let pre = |row: usize| {
        let mut s = b[row];
        for k in 0..x.len() {
            s += w[row * cols + k] * x[k];
        }
        for k in 0..hd {
            s += w[row * cols + x.len() + k] * h[k];
        }
        s
    };
    let mut h2 = vec![0.0; hd];
    let mut c2 = vec![0.0; hd];
    for j in 0..hd {
        let i = sig(pre(j));
        let f = sig(pre(hd + j));
        let g = pre(2 * hd + j).tanh();
        let o = sig(pre(3 * hd + j));
        c2[j] = f * c[j] + i * g;
        h2[j] = o * c2[j].tanh();
    }
    (h2, c2)
}

fn ref_stream(conv_w: &[f64], conv_b: &[f64], cw: &[f64], cb: &[f64], grid: &Grid, cfg: &ModelConfig) -> Vec<f64> {
    let (rows, cols, fe) = (grid.rows, grid.cols, grid.features);
    let co = conv_b.len();
    let at = |r: i64, c: i64, k: usize| -> f64 {
        if r < 0 || c < 0 || r >= rows as i64 || c >= cols as i64 {
            0.0
        } else {
            grid.data[(r as usize * cols + c as usize) * fe + k] * cfg.feature_scale[k]
        }
    };
    let mut flat = Vec::new();
    for r in 0..rows as i64 {
        for c in 0..cols as i64 {
            for o in 0..co {
                let mut s = conv_b[o];
                for kr in 0..3 {
                    for kc in 0..3 {
                        for k in 0..fe {
                            let wi = o * 9 * fe + ((kr * 3 + kc) as usize) * fe + k;
                            s += conv_w[wi] * at(r + kr - 1, c + kc - 1, k);
                        }
                    }
                }
                flat.push(cfg.conv_activation.apply(s));
            }
        }
    }
    let z = vec![0.0; cfg.hidden];
    ref_lstm(cw, cb, &flat, &z, &z).0
}

fn ref_forward(m: &ModelParams, s: &Sample) -> Vec<Vec2> {
    let cfg = &m.config;
    let hd = cfg.hidden;
    let st = cfg.stride;
    let fps = cfg.fps;
    let last = cfg.history_len - 1;
    let steps = last / st;
    let (mut h, mut c) = (vec![0.0; hd], vec![0.0; hd]);
    for k in 0..steps {
        let i = last - (steps - 1 - k) * st;
        let p = s.history[i];
        let v = (p - s.history[i - st]) * (fps / st as f64);
        let x = [p.x / 10.0, p.y / 10.0, v.x / 10.0, v.y / 10.0];
        (h, c) = ref_lstm(&m.ego.w, &m.ego.b, &x, &h, &c);
    }
    let eh = ref_stream(&m.horizon_conv.w, &m.horizon_conv.b, &m.horizon_cell.w, &m.horizon_cell.b, &s.horizon_grid, cfg);
    let en = ref_stream(&m.neighbor_conv.w, &m.neighbor_conv.b, &m.neighbor_cell.w, &m.neighbor_cell.b, &s.neighbor_grid, cfg);
    let ctx: Vec<f64> = h.iter().chain(&eh).chain(&en).copied().collect();
    let mut z = vec![0.0; hd];
    for j in 0..hd {
        let mut v = m.bridge.b[j];
        for k in 0..3 * hd {
            v += m.bridge.w[j * 3 * hd + k] * ctx[k];
        }
        z[j] = v.tanh();
    }
    let w = cfg.velocity_window;
    let smooth = (s.history[last] - s.history[last - w]) * (fps / w as f64);
    let step = (s.history[last] - s.history[last - 1]) * fps;
    let din = [smooth.x / 10.0, smooth.y / 10.0, step.x / 10.0, step.y / 10.0];
    let (mut h, mut c) = (z, vec![0.0; hd]);
    let mut pos = Vec2::ZERO;
    let mut out = Vec::new();
    while out.len() < cfg.future_len {
        (h, c) = ref_lstm(&m.decoder.w, &m.decoder.b, &din, &h, &c);
        for j in 0..st {
            if out.len() == cfg.future_len {
                break;
            }
            let mut d = [0.0; 2];
            for (a, dv) in d.iter_mut().enumerate() {
                let row = 2 * j + a;
                let mut v = m.output.b[row] + m.skip.b[row];
                for k in 0..hd {
                    v += m.output.w[row * hd + k] * h[k];
                }
                for k in 0..4 {
                    v += m.skip.w[row * 4 + k] * din[k];
                }
                *dv = v * 10.0 / fps;
            }
            pos += Vec2::new(d[0], d[1]);
            out.push(pos);
        }
    }
    out
}

#[test]
fn forward_matches_reference_implementation() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for act in [Activation::Tanh, Activation::Relu] {
        let cfg = tiny_config(act);
        let m = ModelParams::init(cfg.clone(), 5).unwrap();
        for _ in 0..5 {
            let s = random_sample(&cfg, &mut rng);
            let got = m.forward_local(&s).unwrap();
            let want = ref_forward(&m, &s);
            assert_eq!(got.len(), 3);
            for (a, b) in got.iter().zip(&want) {
                assert!(a.distance(*b) < 1e-12, "{a:?} vs {b:?}");
            }
        }
    }
}

#[test]
fn zero_parameters_predict_the_anchor() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let cfg = tiny_config(Activation::Tanh);
    let m = ModelParams::zeros(cfg.clone()).unwrap();
    let s = random_sample(&cfg, &mut rng);
    let p = predictor::forward(&m, &s).unwrap();
    assert!(p.points.iter().all(|q| q.distance(s.anchor) < 1e-12));
}

#[test]
fn forward_is_deterministic_and_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = tiny_config(Activation::Relu);
    let m = ModelParams::init(cfg.clone(), 9).unwrap();
    let s = random_sample(&cfg, &mut rng);
    let a = predictor::forward(&m, &s).unwrap();
    assert_eq!(a, predictor::forward(&m, &s).unwrap());
    assert_eq!(m, ModelParams::init(cfg, 9).unwrap());

    let mut moved = s.clone();
    moved.anchor += Vec2::new(123.0, -45.0);
    moved.heading += 0.7;
    let b = predictor::forward(&m, &moved).unwrap();
    for (p, q) in a.points.iter().zip(&b.points) {
        let back = moved.to_world(s.to_local(*p));
        assert!(back.distance(*q) < 1e-9);
    }
}

#[test]
fn context_streams_are_isolated_in_ego_only_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut cfg = tiny_config(Activation::Tanh);
    let m = ModelParams::init(cfg.clone(), 4).unwrap();
    let s = random_sample(&cfg, &mut rng);
    let mut other = s.clone();
    other.neighbor_grid.data.iter_mut().for_each(|v| *v += 0.5);
    assert_ne!(m.forward_local(&s).unwrap(), m.forward_local(&other).unwrap());

    let mut other_h = s.clone();
    other_h.horizon_grid.data.iter_mut().for_each(|v| *v -= 0.5);
    assert_ne!(m.forward_local(&s).unwrap(), m.forward_local(&other_h).unwrap());

    cfg.use_context = false;
    let mut ego = m.clone();
    ego.config = cfg;
    assert_eq!(ego.forward_local(&s).unwrap(), ego.forward_local(&other).unwrap());
    assert_eq!(ego.forward_local(&s).unwrap(), ego.forward_local(&other_h).unwrap());
}

fn gradient_check(cfg: ModelConfig, seed: u64, per_tensor: usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = ModelParams::init(cfg.clone(), seed).unwrap();
    let s = random_sample(&cfg, &mut rng);
    let (_, g) = predictor::gradient(&m, &s).unwrap();
    let eval = |p: &ModelParams| mean_loss(p, std::slice::from_ref(&s)).unwrap();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let names: Vec<&str> = m.tensors().iter().map(|(n, _)| *n).collect();
    let grads: Vec<Vec<f64>> = g.tensors().iter().map(|(_, t)| (*t).clone()).collect();
    for (ti, name) in names.iter().enumerate() {
        let len = grads[ti].len();
        for _ in 0..per_tensor.min(len) {
            let k = rng.gen_range(0..len);
            let mut up = m.clone();
            up.tensors_mut()[ti].1[k] += h;
            let mut down = m.clone();
            down.tensors_mut()[ti].1[k] -= h;
            let num = (eval(&up) - eval(&down)) / (2.0 * h);
            let ana = grads[ti][k];
            let err = (num - ana).abs() / (num.abs() + ana.abs()).max(1e-3);
            assert!(err < 1e-4, "{name}[{k}]: numeric {num} analytic {ana}");
            worst = worst.max(err);
        }
    }
    assert!(worst < 1e-4);
}

#[test]
fn gradient_matches_finite_differences_tiny() {
    gradient_check(tiny_config(Activation::Tanh), 21, usize::MAX);
}

#[test]
fn gradient_matches_finite_differences_full_size() {
    let window = WindowConfig::default();
    let cfg = TrainConfig {
        hidden_size: 16,
        conv_channels: 4,
        conv_activation: Activation::Tanh,
        ..TrainConfig::default()
    }
    .model_config(&window);
    gradient_check(cfg, 22, 12);
}

#[test]
fn gradient_vanishes_at_zero_loss_and_is_linear_in_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let cfg = tiny_config(Activation::Tanh);
    let m = ModelParams::init(cfg.clone(), 6).unwrap();
    let mut s = random_sample(&cfg, &mut rng);
    s.future = m.forward_local(&s).unwrap();
    let (l, g) = predictor::gradient(&m, &s).unwrap();
    assert!(l < 1e-24);
    assert!(g.norm_sq() < 1e-20);

    let s = random_sample(&cfg, &mut rng);
    let mut g1 = m.zeros_like();
    let mut g2 = m.zeros_like();
    m.accumulate_gradient(&s, 1.0, &mut g1).unwrap();
    m.accumulate_gradient(&s, 2.0, &mut g2).unwrap();
    g1.scale(2.0);
    g1.add_scaled(&g2, -1.0);
    assert!(g1.norm_sq() < 1e-20 * g2.norm_sq().max(1.0));
}

#[test]
fn checkpoint_restores_bit_identical_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = tiny_config(Activation::Relu);
    let m = ModelParams::init(cfg.clone(), 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let ck = Checkpoint {
        params: m.clone(),
        train: Some(TrainConfig::default()),
        seed: 8,
    };
    write_checkpoint(&path, &ck).unwrap();
    let back = read_checkpoint(&path).unwrap();
    assert_eq!(back, ck);
    for _ in 0..3 {
        let s = random_sample(&cfg, &mut rng);
        let a = m.forward_local(&s).unwrap();
        let b = back.params.forward_local(&s).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert_eq!(p.x.to_bits(), q.x.to_bits());
            assert_eq!(p.y.to_bits(), q.y.to_bits());
        }
    }

    let mut bytes = std::fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    std::fs::write(&path, &bytes).unwrap();
    assert!(read_checkpoint(&path).is_err());
    std::fs::write(&path, b"garbage").unwrap();
    assert!(read_checkpoint(&path).is_err());
}

fn small_window() -> WindowConfig {
    WindowConfig {
        history_s: 1.0,
        future_s: 1.0,
        fps: 10.0,
        heading_window_s: 0.3,
        ..WindowConfig::default()
    }
}

/// Straight constant-speed paths along the ego axis.
fn straight_samples(n: usize, w: &WindowConfig, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 1.0 / w.fps;
    (0..n)
        .map(|i| {
            let v = rng.gen_range(1.0..12.0);
            let hist = w.history_len();
            Sample {
                sample_id: i as u64,
                ego_id: i as u64,
                ego_class: AgentClass::Car,
                anchor_frame: 0,
                anchor: Vec2::ZERO,
                heading: 0.0,
                ego_velocity: Vec2::new(v, 0.0),
                history: (0..hist).map(|k| Vec2::new(-((hist - 1 - k) as f64) * v * dt, 0.0)).collect(),
                future: (1..=w.future_len()).map(|k| Vec2::new(k as f64 * v * dt, 0.0)).collect(),
                horizon_grid: Grid::zeros(&w.horizon_grid),
                neighbor_grid: Grid::zeros(&w.neighbor_grid),
                neighbors: Vec::new(),
            }
        })
        .collect()
}

#[test]
fn training_reduces_loss_on_straight_lines() {
    let w = small_window();
    let data = straight_samples(50, &w, 1);
    let cfg = TrainConfig {
        hidden_size: 8,
        conv_channels: 2,
        epochs: 30,
        batch_size: 5,
        learning_rate: 1e-2,
        optimizer: OptimizerKind::Adam,
        ..TrainConfig::default()
    };
    let init = ModelParams::init(cfg.model_config(&w), cfg.seed).unwrap();
    let before = mean_loss(&init, &data).unwrap();
    let out = train(&data, &[], &w, &cfg).unwrap();
    let after = mean_loss(&out.params, &data).unwrap();
    assert!(after < 0.1 * before, "{before} -> {after}");

    let again = train(&data, &[], &w, &cfg).unwrap();
    assert_eq!(out.log, again.log);
}

#[test]
fn training_memorizes_a_single_sample() {
    let w = small_window();
    let data = straight_samples(1, &w, 2);
    let cfg = TrainConfig {
        hidden_size: 8,
        conv_channels: 2,
        epochs: 400,
        batch_size: 1,
        learning_rate: 1e-2,
        optimizer: OptimizerKind::Adam,
        ..TrainConfig::default()
    };
    let out = train(&data, &[], &w, &cfg).unwrap();
    let l = mean_loss(&out.params, &data).unwrap();
    assert!(l < 1e-3, "{l}");
}

#[test]
fn sgd_training_is_finite_and_tracks_best_epoch() {
    let w = small_window();
    let data = straight_samples(20, &w, 3);
    let val = straight_samples(5, &w, 4);
    let cfg = TrainConfig {
        hidden_size: 6,
        conv_channels: 2,
        epochs: 5,
        batch_size: 4,
        ..TrainConfig::default()
    };
    let out = train(&data, &val, &w, &cfg).unwrap();
    assert_eq!(out.log.len(), 5);
    let best = out.log.iter().map(|e| e.val_loss).fold(f64::INFINITY, f64::min);
    assert_eq!(out.log[out.best_epoch - 1].val_loss, best);
    assert!((mean_loss(&out.params, &val).unwrap() - best).abs() < 1e-12);
}
