//! Dense, recurrent and convolutional layers with explicit reverse-mode
//! gradients. Matrices are row-major `Vec<f64>`.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// `y += W x` for a `rows × x.len()` matrix.
pub(crate) fn gemv_acc(w: &[f64], x: &[f64], y: &mut [f64]) {
    let cols = x.len();
    debug_assert_eq!(w.len(), y.len() * cols);
    for (row, yi) in w.chunks_exact(cols).zip(y.iter_mut()) {
        let mut s = 0.0;
        for (a, b) in row.iter().zip(x) {
            s += a * b;
        }
        *yi += s;
    }
}

/// `dx += Wᵀ dy`.
pub(crate) fn gemv_t_acc(w: &[f64], dy: &[f64], dx: &mut [f64]) {
    let cols = dx.len();
    for (row, &g) in w.chunks_exact(cols).zip(dy) {
        if g == 0.0 {
            continue;
        }
        for (d, a) in dx.iter_mut().zip(row) {
            *d += a * g;
        }
    }
}

/// `dW += dy xᵀ`.
pub(crate) fn outer_acc(dw: &mut [f64], dy: &[f64], x: &[f64]) {
    let cols = x.len();
    for (row, &g) in dw.chunks_exact_mut(cols).zip(dy) {
        if g == 0.0 {
            continue;
        }
        for (d, b) in row.iter_mut().zip(x) {
            *d += g * b;
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn uniform_init(n: usize, fan_in: usize, rng: &mut impl Rng) -> Vec<f64> {
    let k = 1.0 / (fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-k..=k)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation's output.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            _ => Err(format!("unknown activation `{s}` (expected tanh or relu)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub input: usize,
    pub output: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Linear {
            input,
            output,
            w: vec![0.0; input * output],
            b: vec![0.0; output],
        }
    }

    pub fn init(input: usize, output: usize, rng: &mut impl Rng) -> Self {
        Linear {
            input,
            output,
            w: uniform_init(input * output, input, rng),
            b: uniform_init(output, input, rng),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.b.clone();
        gemv_acc(&self.w, x, &mut y);
        y
    }

    /// Accumulates parameter gradients into `grad` and adds the input
    /// gradient to `dx`.
    pub fn backward(&self, x: &[f64], dy: &[f64], grad: &mut Linear, dx: &mut [f64]) {
        outer_acc(&mut grad.w, dy, x);
        for (g, d) in grad.b.iter_mut().zip(dy) {
            *g += d;
        }
        gemv_t_acc(&self.w, dy, dx);
    }
}

/// LSTM cell with gates stacked as input, forget, candidate, output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lstm {
    pub input: usize,
    pub hidden: usize,
    /// `4·hidden × (input + hidden)`, acting on `[x; h_prev]`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

/// Values kept from one forward step for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmStep {
    xh: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    tanh_c: Vec<f64>,
}

impl Lstm {
    pub fn zeros(input: usize, hidden: usize) -> Self {
        Lstm {
            input,
            hidden,
            w: vec![0.0; 4 * hidden * (input + hidden)],
            b: vec![0.0; 4 * hidden],
        }
    }

    pub fn init(input: usize, hidden: usize, rng: &mut impl Rng) -> Self {
        Lstm {
            input,
            hidden,
            w: uniform_init(4 * hidden * (input + hidden), input + hidden, rng),
            b: uniform_init(4 * hidden, input + hidden, rng),
        }
    }

    /// One step; returns `(h, c)` and the cache.
    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>, LstmStep) {
        let hd = self.hidden;
        let mut xh = Vec::with_capacity(self.input + hd);
        xh.extend_from_slice(x);
        xh.extend_from_slice(h_prev);
        let mut gates = self.b.clone();
        gemv_acc(&self.w, &xh, &mut gates);
        for (k, g) in gates.iter_mut().enumerate() {
            *g = if (2 * hd..3 * hd).contains(&k) { g.tanh() } else { sigmoid(*g) };
        }
        let mut c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        for j in 0..hd {
            let (i, f, g, o) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
            c[j] = f * c_prev[j] + i * g;
            tanh_c[j] = c[j].tanh();
            h[j] = o * tanh_c[j];
        }
        let cache = LstmStep {
            xh,
            c_prev: c_prev.to_vec(),
            gates,
            tanh_c,
        };
        (h, c, cache)
    }

    /// Backward through one step given the gradients flowing into `h` and
    /// `c`. Returns `(dx, dh_prev, dc_prev)`.
    pub fn step_backward(&self, cache: &LstmStep, dh: &[f64], dc: &[f64], grad: &mut Lstm) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden;
        let g = &cache.gates;
        let mut dgates = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for j in 0..hd {
            let (i, f, gg, o) = (g[j], g[hd + j], g[2 * hd + j], g[3 * hd + j]);
            let tc = cache.tanh_c[j];
            let dct = dc[j] + dh[j] * o * (1.0 - tc * tc);
            dgates[j] = dct * gg * i * (1.0 - i);
            dgates[hd + j] = dct * cache.c_prev[j] * f * (1.0 - f);
            dgates[2 * hd + j] = dct * i * (1.0 - gg * gg);
            dgates[3 * hd + j] = dh[j] * tc * o * (1.0 - o);
            dc_prev[j] = dct * f;
        }
        outer_acc(&mut grad.w, &dgates, &cache.xh);
        for (gb, d) in grad.b.iter_mut().zip(&dgates) {
            *gb += d;
        }
        let mut dxh = vec![0.0; self.input + hd];
        gemv_t_acc(&self.w, &dgates, &mut dxh);
        let dh_prev = dxh.split_off(self.input);
        (dxh, dh_prev, dc_prev)
    }
}

/// 3×3 convolution with zero "same" padding over a `rows × cols` grid whose
/// cells hold `in_ch` features (features innermost).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv3x3 {
    pub in_ch: usize,
    pub out_ch: usize,
    /// `out_ch × (3 · 3 · in_ch)`, patch order `(kr, kc, ci)`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Conv3x3 {
    pub fn zeros(in_ch: usize, out_ch: usize) -> Self {
        Conv3x3 {
            in_ch,
            out_ch,
            w: vec![0.0; out_ch * 9 * in_ch],
            b: vec![0.0; out_ch],
        }
    }

    pub fn init(in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        Conv3x3 {
            in_ch,
            out_ch,
            w: uniform_init(out_ch * 9 * in_ch, 9 * in_ch, rng),
            b: uniform_init(out_ch, 9 * in_ch, rng),
        }
    }

    /// Zero-padded 3×3 neighborhoods, one per cell.
    pub fn patches(&self, x: &[f64], rows: usize, cols: usize) -> Vec<Vec<f64>> {
        let ci = self.in_ch;
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows as isize {
            for c in 0..cols as isize {
                let mut p = vec![0.0; 9 * ci];
                for kr in 0..3isize {
                    for kc in 0..3isize {
                        let (rr, cc) = (r + kr - 1, c + kc - 1);
                        if rr < 0 || cc < 0 || rr >= rows as isize || cc >= cols as isize {
                            continue;
                        }
                        let src = (rr as usize * cols + cc as usize) * ci;
                        let dst = ((kr * 3 + kc) as usize) * ci;
                        p[dst..dst + ci].copy_from_slice(&x[src..src + ci]);
                    }
                }
                out.push(p);
            }
        }
        out
    }

    /// Pre-activation output, `rows × cols × out_ch`.
    pub fn forward(&self, patches: &[Vec<f64>]) -> Vec<f64> {
        let mut y = Vec::with_capacity(patches.len() * self.out_ch);
        for p in patches {
            let mut o = self.b.clone();
            gemv_acc(&self.w, p, &mut o);
            y.extend_from_slice(&o);
        }
        y
    }

    /// Accumulates parameter gradients; returns the input gradient.
    pub fn backward(&self, patches: &[Vec<f64>], dy: &[f64], rows: usize, cols: usize, grad: &mut Conv3x3) -> Vec<f64> {
        let ci = self.in_ch;
        let mut dx = vec![0.0; rows * cols * ci];
        let mut dp = vec![0.0; 9 * ci];
        for (cell, p) in patches.iter().enumerate() {
            let d = &dy[cell * self.out_ch..(cell + 1) * self.out_ch];
            outer_acc(&mut grad.w, d, p);
            for (gb, v) in grad.b.iter_mut().zip(d) {
                *gb += v;
            }
            dp.iter_mut().for_each(|v| *v = 0.0);
            gemv_t_acc(&self.w, d, &mut dp);
            let (r, c) = ((cell / cols) as isize, (cell % cols) as isize);
            for kr in 0..3isize {
                for kc in 0..3isize {
                    let (rr, cc) = (r + kr - 1, c + kc - 1);
                    if rr < 0 || cc < 0 || rr >= rows as isize || cc >= cols as isize {
                        continue;
                    }
                    let dst = (rr as usize * cols + cc as usize) * ci;
                    let src = ((kr * 3 + kc) as usize) * ci;
                    for k in 0..ci {
                        dx[dst + k] += dp[src + k];
                    }
                }
            }
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const STEP: f64 = 1e-5;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs() + b.abs()).max(1e-8)
    }

    fn random_vec(n: usize, rng: &mut impl Rng) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Central difference of `f` with respect to `v[k]`.
    fn fd(v: &mut [f64], k: usize, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        let orig = v[k];
        v[k] = orig + STEP;
        let up = f(v);
        v[k] = orig - STEP;
        let down = f(v);
        v[k] = orig;
        (up - down) / (2.0 * STEP)
    }

    #[test]
    fn linear_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let layer = Linear::init(5, 3, &mut rng);
        let x = random_vec(5, &mut rng);
        let probe = random_vec(3, &mut rng);
        let mut grad = Linear::zeros(5, 3);
        let mut dx = vec![0.0; 5];
        layer.backward(&x, &probe, &mut grad, &mut dx);
        let mut worst: f64 = 0.0;
        let mut w = layer.w.clone();
        for k in 0..w.len() {
            let num = fd(&mut w, k, |w| {
                let l = Linear { w: w.to_vec(), ..layer.clone() };
                dot(&l.forward(&x), &probe)
            });
            worst = worst.max(rel_err(num, grad.w[k]));
        }
        let mut xm = x.clone();
        for k in 0..5 {
            let num = fd(&mut xm, k, |xv| dot(&layer.forward(xv), &probe));
            worst = worst.max(rel_err(num, dx[k]));
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn lstm_gradients_through_time() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (input, hidden, steps) = (3, 4, 5);
        let cell = Lstm::init(input, hidden, &mut rng);
        let xs: Vec<Vec<f64>> = (0..steps).map(|_| random_vec(input, &mut rng)).collect();
        let h0 = random_vec(hidden, &mut rng);
        let c0 = random_vec(hidden, &mut rng);
        let probe = random_vec(hidden, &mut rng);
        let run = |cell: &Lstm, xs: &[Vec<f64>], h0: &[f64]| {
            let (mut h, mut c) = (h0.to_vec(), c0.clone());
            for x in xs {
                let (h2, c2, _) = cell.step(x, &h, &c);
                h = h2;
                c = c2;
            }
            dot(&h, &probe) + 0.5 * dot(&c, &probe)
        };

        let (mut h, mut c) = (h0.clone(), c0.clone());
        let mut caches = Vec::new();
        for x in &xs {
            let (h2, c2, cache) = cell.step(x, &h, &c);
            h = h2;
            c = c2;
            caches.push(cache);
        }
        let mut grad = Lstm::zeros(input, hidden);
        let mut dh = probe.clone();
        let mut dc: Vec<f64> = probe.iter().map(|p| 0.5 * p).collect();
        let mut dxs = vec![Vec::new(); steps];
        for (t, cache) in caches.iter().enumerate().rev() {
            let (dx, dhp, dcp) = cell.step_backward(cache, &dh, &dc, &mut grad);
            dxs[t] = dx;
            dh = dhp;
            dc = dcp;
        }

        let mut worst: f64 = 0.0;
        let mut w = cell.w.clone();
        for k in 0..w.len() {
            let num = fd(&mut w, k, |wv| run(&Lstm { w: wv.to_vec(), ..cell.clone() }, &xs, &h0));
            worst = worst.max(rel_err(num, grad.w[k]));
        }
        let mut b = cell.b.clone();
        for k in 0..b.len() {
            let num = fd(&mut b, k, |bv| run(&Lstm { b: bv.to_vec(), ..cell.clone() }, &xs, &h0));
            worst = worst.max(rel_err(num, grad.b[k]));
        }
        let mut hm = h0.clone();
        for k in 0..hidden {
            let num = fd(&mut hm, k, |hv| run(&cell, &xs, hv));
            worst = worst.max(rel_err(num, dh[k]));
        }
        for t in 0..steps {
            let mut x = xs[t].clone();
            for k in 0..input {
                let num = fd(&mut x, k, |xv| {
                    let mut xs2 = xs.clone();
                    xs2[t] = xv.to_vec();
                    run(&cell, &xs2, &h0)
                });
                worst = worst.max(rel_err(num, dxs[t][k]));
            }
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn conv_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (rows, cols, ci, co) = (4, 3, 2, 3);
        let conv = Conv3x3::init(ci, co, &mut rng);
        let x = random_vec(rows * cols * ci, &mut rng);
        let probe = random_vec(rows * cols * co, &mut rng);
        let eval = |conv: &Conv3x3, x: &[f64]| {
            let y = conv.forward(&conv.patches(x, rows, cols));
            y.iter().zip(&probe).map(|(a, p)| Activation::Tanh.apply(*a) * p).sum::<f64>()
        };
        let patches = conv.patches(&x, rows, cols);
        let y = conv.forward(&patches);
        let dy: Vec<f64> = y
            .iter()
            .zip(&probe)
            .map(|(a, p)| p * Activation::Tanh.derivative_from_output(a.tanh()))
            .collect();
        let mut grad = Conv3x3::zeros(ci, co);
        let dx = conv.backward(&patches, &dy, rows, cols, &mut grad);

        let mut worst: f64 = 0.0;
        let mut w = conv.w.clone();
        for k in 0..w.len() {
            let num = fd(&mut w, k, |wv| eval(&Conv3x3 { w: wv.to_vec(), ..conv.clone() }, &x));
            worst = worst.max(rel_err(num, grad.w[k]));
        }
        let mut b = conv.b.clone();
        for k in 0..b.len() {
            let num = fd(&mut b, k, |bv| eval(&Conv3x3 { b: bv.to_vec(), ..conv.clone() }, &x));
            worst = worst.max(rel_err(num, grad.b[k]));
        }
        let mut xm = x.clone();
        for k in 0..xm.len() {
            let num = fd(&mut xm, k, |xv| eval(&conv, xv));
            worst = worst.max(rel_err(num, dx[k]));
        }
        assert!(worst < 1e-4, "{worst}");
    }

    #[test]
    fn conv_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (rows, cols, ci, co) = (3, 3, 2, 2);
        let conv = Conv3x3::init(ci, co, &mut rng);
        let x = random_vec(rows * cols * ci, &mut rng);
        let y = conv.forward(&conv.patches(&x, rows, cols));
        for r in 0..rows as isize {
            for c in 0..cols as isize {
                for o in 0..co {
                    let mut s = conv.b[o];
                    for kr in -1..=1isize {
                        for kc in -1..=1isize {
                            let (rr, cc) = (r + kr, c + kc);
                            if rr < 0 || cc < 0 || rr >= rows as isize || cc >= cols as isize {
                                continue;
                            }
                            for i in 0..ci {
                                let wi = o * 9 * ci + (((kr + 1) * 3 + kc + 1) as usize) * ci + i;
                                s += conv.w[wi] * x[(rr as usize * cols + cc as usize) * ci + i];
                            }
                        }
                    }
                    let got = y[(r as usize * cols + c as usize) * co + o];
                    assert!((got - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn relu_derivative() {
        assert_eq!(Activation::Relu.apply(-2.0), 0.0);
        assert_eq!(Activation::Relu.derivative_from_output(0.0), 0.0);
        assert_eq!(Activation::Relu.derivative_from_output(0.5), 1.0);
        assert_eq!("relu".parse::<Activation>().unwrap(), Activation::Relu);
        assert!("sigmoid".parse::<Activation>().is_err());
    }
}
