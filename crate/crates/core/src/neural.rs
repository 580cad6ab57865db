//! Dense feed-forward network `𝒩_θ: ℝ → ℝ` with `tanh` hidden layers and an
//! affine output layer, its input derivative, parameter gradients by the
//! backward recursion, pointwise (Nemytskii) application to grid fields and
//! the Lipschitz / tangential-cone certification constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::adjoint::embedding_constant;
use crate::error::{Error, Result};
use crate::grid::{norm_v_state, norm_w, Field, Grid};
use crate::surrogate::Nonlinearity;

/// Widths `[1, 2, 4, 2, 1]`: three hidden layers, 29 parameters.
pub const STANDARD_ARCH: [usize; 5] = [1, 2, 4, 2, 1];

/// `sup |tanh''| = 4 / (3√3)`
pub fn tanh_second_derivative_bound() -> f64 {
    4.0 / (3.0 * 3.0f64.sqrt())
}

type Buf = SmallVec<[f64; 8]>;

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// Row-major `rows × cols` weight matrix `ω^l`.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl Layer {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            weight: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
            rows,
            cols,
        }
    }

    fn affine(&self, input: &[f64], out: &mut Buf) {
        out.clear();
        for r in 0..self.rows {
            let w = &self.weight[r * self.cols..(r + 1) * self.cols];
            let s: f64 = w.iter().zip(input).map(|(a, b)| a * b).sum();
            out.push(s + self.bias[r]);
        }
    }

    /// Spectral norm `|ω|` (largest singular value).
    pub fn spectral_norm(&self) -> f64 {
        // Gram matrix of the smaller side, then symmetric Jacobi.
        let (n, gram) = if self.cols <= self.rows {
            let mut g = vec![0.0; self.cols * self.cols];
            for a in 0..self.cols {
                for b in 0..self.cols {
                    g[a * self.cols + b] = (0..self.rows)
                        .map(|r| self.weight[r * self.cols + a] * self.weight[r * self.cols + b])
                        .sum();
                }
            }
            (self.cols, g)
        } else {
            let mut g = vec![0.0; self.rows * self.rows];
            for a in 0..self.rows {
                for b in 0..self.rows {
                    g[a * self.rows + b] = (0..self.cols)
                        .map(|c| self.weight[a * self.cols + c] * self.weight[b * self.cols + c])
                        .sum();
                }
            }
            (self.rows, g)
        };
        symmetric_max_eigenvalue(n, gram).max(0.0).sqrt()
    }
}

/// Largest eigenvalue of a small symmetric matrix by cyclic Jacobi rotations.
fn symmetric_max_eigenvalue(n: usize, mut a: Vec<f64>) -> f64 {
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|p| (0..n).filter(move |&q| q != p).map(move |q| (p, q)))
            .map(|(p, q)| a[p * n + q] * a[p * n + q])
            .sum();
        let scale: f64 = a.iter().map(|v| v * v).sum::<f64>().max(f64::MIN_POSITIVE);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n)
        .map(|i| a[i * n + i])
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Weights and biases of an `L`-layer network; layers `1..L-1` use `tanh`,
/// layer `L` is affine.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "NetFile", into = "NetFile")]
pub struct NetParams {
    layers: Vec<Layer>,
}

/// On-disk form: `{ "arch": [...], "weights": [[...]], "biases": [[...]] }`
/// with each weight matrix flattened row-major.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetFile {
    pub arch: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl TryFrom<NetFile> for NetParams {
    type Error = Error;

    fn try_from(f: NetFile) -> Result<Self> {
        let mut net = NetParams::zeros(&f.arch)?;
        if f.weights.len() != net.depth() || f.biases.len() != net.depth() {
            return Err(Error::Shape(format!(
                "architecture has {} layers but file lists {} weight and {} bias blocks",
                net.depth(),
                f.weights.len(),
                f.biases.len()
            )));
        }
        for (l, layer) in net.layers.iter_mut().enumerate() {
            if f.weights[l].len() != layer.weight.len() || f.biases[l].len() != layer.bias.len() {
                return Err(Error::Shape(format!(
                    "layer {} has wrong block sizes",
                    l + 1
                )));
            }
            layer.weight.copy_from_slice(&f.weights[l]);
            layer.bias.copy_from_slice(&f.biases[l]);
        }
        if !net.to_flat().iter().all(|v| v.is_finite()) {
            return Err(Error::Contract("network parameters must be finite".into()));
        }
        Ok(net)
    }
}

impl From<NetParams> for NetFile {
    fn from(n: NetParams) -> Self {
        NetFile {
            arch: n.arch(),
            weights: n.layers.iter().map(|l| l.weight.clone()).collect(),
            biases: n.layers.iter().map(|l| l.bias.clone()).collect(),
        }
    }
}

impl NetParams {
    pub fn zeros(arch: &[usize]) -> Result<Self> {
        if arch.len() < 2 {
            return Err(Error::Config(
                "architecture needs at least input and output width".into(),
            ));
        }
        if arch[0] != 1 || arch[arch.len() - 1] != 1 {
            return Err(Error::Config(format!(
                "scalar network must have input and output width 1, got {arch:?}"
            )));
        }
        if arch.contains(&0) {
            return Err(Error::Config(format!("zero-width layer in {arch:?}")));
        }
        Ok(Self {
            layers: arch.windows(2).map(|w| Layer::zeros(w[1], w[0])).collect(),
        })
    }

    /// Every entry drawn uniformly from `[-half_width, half_width]`.
    pub fn random_uniform(arch: &[usize], half_width: f64, seed: u64) -> Result<Self> {
        let mut net = Self::zeros(arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut net.layers {
            for w in layer.weight.iter_mut().chain(layer.bias.iter_mut()) {
                *w = rng.gen_range(-half_width..=half_width);
            }
        }
        Ok(net)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serialises")
    }

    pub fn arch(&self) -> Vec<usize> {
        let mut a = vec![self.layers[0].cols];
        a.extend(self.layers.iter().map(|l| l.rows));
        a
    }

    /// Number of layers `L`.
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    /// Flat order: for each layer, the row-major weights followed by the bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            v.extend_from_slice(&l.weight);
            v.extend_from_slice(&l.bias);
        }
        v
    }

    pub fn set_flat(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.n_params(), "parameter vector length mismatch");
        let mut k = 0;
        for l in &mut self.layers {
            let nw = l.weight.len();
            l.weight.copy_from_slice(&p[k..k + nw]);
            k += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&p[k..k + nb]);
            k += nb;
        }
    }

    fn is_output(&self, l: usize) -> bool {
        l + 1 == self.layers.len()
    }

    pub fn forward(&self, z: f64) -> f64 {
        let mut a: Buf = SmallVec::from_slice(&[z]);
        let mut pre = Buf::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.affine(&a, &mut pre);
            if !self.is_output(l) {
                pre.iter_mut().for_each(|v| *v = v.tanh());
            }
            std::mem::swap(&mut a, &mut pre);
        }
        a[0]
    }

    /// Value and `d𝒩/dz` by forward-mode propagation.
    pub fn forward_with_derivative(&self, z: f64) -> (f64, f64) {
        let mut a: Buf = SmallVec::from_slice(&[z]);
        let mut da: Buf = SmallVec::from_slice(&[1.0]);
        let mut pre = Buf::new();
        for (l, layer) in self.layers.iter().enumerate() {
            layer.affine(&a, &mut pre);
            let mut dpre = Buf::new();
            for r in 0..layer.rows {
                let w = &layer.weight[r * layer.cols..(r + 1) * layer.cols];
                dpre.push(w.iter().zip(da.iter()).map(|(x, y)| x * y).sum());
            }
            if !self.is_output(l) {
                for (p, d) in pre.iter_mut().zip(dpre.iter_mut()) {
                    *p = p.tanh();
                    *d *= 1.0 - *p * *p;
                }
            }
            std::mem::swap(&mut a, &mut pre);
            da = dpre;
        }
        (a[0], da[0])
    }

    pub fn input_derivative(&self, z: f64) -> f64 {
        self.forward_with_derivative(z).1
    }

    /// Backward recursion `δ_L = 1`, `δ_{l-1} = a'_{l-1} ⊙ (ω_lᵀ δ_l)`;
    /// adds `weight · δ_l a_{l-1}ᵀ` and `weight · δ_l` to the flat gradient.
    /// Returns `(𝒩(z), 𝒩'(z))` as a by-product.
    pub fn backprop(&self, z: f64, weight: f64, out: &mut [f64]) -> (f64, f64) {
        debug_assert_eq!(out.len(), self.n_params());
        // layer outputs a_0..a_L stacked, with offsets
        let mut acts: SmallVec<[f64; 64]> = SmallVec::new();
        let mut offs: SmallVec<[usize; 16]> = SmallVec::new();
        acts.push(z);
        offs.push(0);
        let mut pre = Buf::new();
        for (l, layer) in self.layers.iter().enumerate() {
            let start = offs[l];
            let input: Buf = SmallVec::from_slice(&acts[start..start + layer.cols]);
            layer.affine(&input, &mut pre);
            offs.push(acts.len());
            if self.is_output(l) {
                acts.extend_from_slice(&pre);
            } else {
                acts.extend(pre.iter().map(|v| v.tanh()));
            }
        }
        let value = acts[offs[self.depth()]];
        // parameter offsets of each layer in the flat vector
        let mut poff: SmallVec<[usize; 16]> = SmallVec::new();
        let mut k = 0;
        for layer in &self.layers {
            poff.push(k);
            k += layer.weight.len() + layer.bias.len();
        }
        let mut delta: Buf = SmallVec::from_slice(&[1.0]);
        for l in (0..self.depth()).rev() {
            let layer = &self.layers[l];
            let input = &acts[offs[l]..offs[l] + layer.cols];
            let base = poff[l];
            for r in 0..layer.rows {
                let g = weight * delta[r];
                for c in 0..layer.cols {
                    out[base + r * layer.cols + c] += g * input[c];
                }
                out[base + layer.weight.len() + r] += g;
            }
            let mut next = Buf::new();
            for c in 0..layer.cols {
                let s: f64 = (0..layer.rows)
                    .map(|r| layer.weight[r * layer.cols + c] * delta[r])
                    .sum();
                // activation derivative of layer l-1 (the input layer has none)
                let d = if l > 0 {
                    1.0 - input[c] * input[c]
                } else {
                    1.0
                };
                next.push(s * d);
            }
            delta = next;
        }
        (value, delta[0])
    }

    /// Gradient of `weight · 𝒩(z)` with respect to every weight and bias,
    /// shaped like the network.
    pub fn param_gradient_net(&self, z: f64, weight: f64) -> NetParams {
        let mut flat = vec![0.0; self.n_params()];
        self.backprop(z, weight, &mut flat);
        let mut g = self.clone();
        g.set_flat(&flat);
        g
    }

    /// Pointwise application at every grid node.
    pub fn nemytskii(&self, u: &Field) -> Field {
        u.map(|v| self.forward(v))
    }

    pub fn squared_norm(&self) -> f64 {
        self.to_flat().iter().map(|v| v * v).sum()
    }

    pub fn lipschitz_constants(&self, lo: f64, hi: f64) -> Result<LipschitzReport> {
        LipschitzReport::compute(self, lo, hi, LIPSCHITZ_SAMPLES)
    }
}

impl Nonlinearity for NetParams {
    fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }
    fn params(&self) -> Vec<f64> {
        self.to_flat()
    }
    fn set_params(&mut self, p: &[f64]) {
        self.set_flat(p)
    }
    fn eval(&self, z: f64) -> f64 {
        self.forward(z)
    }
    fn eval_with_derivative(&self, z: f64) -> (f64, f64) {
        self.forward_with_derivative(z)
    }
    fn accumulate_param_gradient(&self, z: f64, weight: f64, out: &mut [f64]) {
        self.backprop(z, weight, out);
    }
    fn accumulate_with_derivative(&self, z: f64, weight: f64, out: &mut [f64]) -> (f64, f64) {
        self.backprop(z, weight, out)
    }
    fn shift_output(&mut self, c: f64) {
        let last = self.layers.len() - 1;
        self.layers[last].bias[0] += c;
    }
}

/// Sample count used for the activation suprema `s_i`.
pub const LIPSCHITZ_SAMPLES: usize = 20_001;

/// Lipschitz constants of a network on an input interval.
///
/// `cz[i-1]` holds `C^z_i` for `i = 1..=L+1`; `cw[l-1][k]` and `cb[l-1][k]`
/// hold `C^{ω^l}_{l+k}` and `C^{β^l}_{l+k}`. The output layer is the
/// identity, so its `C'_σ` contribution is zero and `s_L = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LipschitzReport {
    pub box_lo: f64,
    pub box_hi: f64,
    pub s: Vec<f64>,
    pub c_sigma: f64,
    pub c_sigma_prime: f64,
    pub weight_norms: Vec<f64>,
    pub cz: Vec<f64>,
    pub cw: Vec<Vec<f64>>,
    pub cb: Vec<Vec<f64>>,
    /// `(C_σ)^L ∏ |ω^k|`, Lipschitz constant of `z ↦ 𝒩(z)`.
    pub value_lip: f64,
    /// `C^z_1 |ω^1|`, Lipschitz constant of `z ↦ 𝒩'(z)`.
    pub derivative_lip: f64,
}

impl LipschitzReport {
    pub fn compute(net: &NetParams, lo: f64, hi: f64, samples: usize) -> Result<Self> {
        if !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::Contract(format!("empty input box [{lo}, {hi}]")));
        }
        let depth = net.depth();
        let c_sigma: f64 = 1.0;
        let c_sigma_prime = tanh_second_derivative_bound();
        let norms: Vec<f64> = net.layers.iter().map(Layer::spectral_norm).collect();

        // s_i and sup |𝒩^{l-1}(z)| by dense sampling; a sign change of a
        // pre-activation between neighbouring samples means sup tanh' = 1.
        let mut s = vec![0.0f64; depth];
        s[depth - 1] = 1.0;
        let mut input_sup = vec![0.0f64; depth];
        let n = samples.max(2);
        let mut prev_pre: Vec<Buf> = vec![Buf::new(); depth];
        for k in 0..n {
            let z = lo + (hi - lo) * k as f64 / (n - 1) as f64;
            let mut a: Buf = SmallVec::from_slice(&[z]);
            let mut pre = Buf::new();
            for (l, layer) in net.layers.iter().enumerate() {
                let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                input_sup[l] = input_sup[l].max(norm);
                layer.affine(&a, &mut pre);
                if l + 1 < depth {
                    for (r, &p) in pre.iter().enumerate() {
                        let mut d = 1.0 - p.tanh().powi(2);
                        if k > 0 && prev_pre[l][r].signum() != p.signum() {
                            d = 1.0;
                        }
                        s[l] = s[l].max(d);
                    }
                    prev_pre[l] = pre.clone();
                    pre.iter_mut().for_each(|v| *v = v.tanh());
                }
                std::mem::swap(&mut a, &mut pre);
            }
        }
        for v in s.iter_mut() {
            *v = v.min(1.0);
        }

        // derivative-of-activation constant per layer (identity output layer)
        let cprime = |i: usize| if i < depth { c_sigma_prime } else { 0.0 };
        let prod_s = |from: usize| -> f64 { (from..=depth).map(|k| s[k - 1]).product() };
        let prod_w = |from: usize| -> f64 { (from..=depth).map(|k| norms[k - 1]).product() };

        let mut cz = vec![0.0; depth + 1];
        for i in (1..=depth).rev() {
            let next = if i < depth {
                cz[i] * s[i - 1] * norms[i]
            } else {
                0.0
            };
            cz[i - 1] = cprime(i) * c_sigma.powi(i as i32 - 1) * prod_s(i + 1) * prod_w(1) + next;
        }

        let mut cw = Vec::with_capacity(depth);
        let mut cb = Vec::with_capacity(depth);
        for l in 1..=depth {
            let len = depth + 2 - l;
            let mut w = vec![0.0; len];
            let mut b = vec![0.0; len];
            for i in (l..=depth).rev() {
                let k = i - l;
                let (nw, nb) = if i < depth {
                    (
                        w[k + 1] * s[i - 1] * norms[i],
                        b[k + 1] * s[i - 1] * norms[i],
                    )
                } else {
                    (0.0, 0.0)
                };
                let head = cprime(i) * c_sigma.powi((i - l) as i32) * prod_s(i + 1) * prod_w(l + 1);
                w[k] = head * input_sup[l - 1] + nw;
                b[k] = head + nb;
            }
            cw.push(w);
            cb.push(b);
        }

        let value_lip = c_sigma.powi(depth as i32) * prod_w(1);
        let derivative_lip = cz[0] * norms[0];
        Ok(Self {
            box_lo: lo,
            box_hi: hi,
            s,
            c_sigma,
            c_sigma_prime,
            weight_norms: norms,
            cz,
            cw,
            cb,
            value_lip,
            derivative_lip,
        })
    }

    /// Largest radius with tangential-cone constant below one,
    /// `1 / (C_emb · C^z_1 |ω^1|)`; `+∞` when the network has no curvature.
    pub fn tcc_radius(&self, embedding_constant: f64) -> Result<f64> {
        if !(embedding_constant > 0.0) {
            return Err(Error::Contract(format!(
                "embedding constant must be positive, got {embedding_constant}"
            )));
        }
        let denom = embedding_constant * self.derivative_lip;
        Ok(if denom > 0.0 {
            1.0 / denom
        } else {
            f64::INFINITY
        })
    }

    /// Samples `pairs` random `(z, z̃)` in the box and returns the largest
    /// observed ratios of the difference quotients of `𝒩` and `𝒩'` to the
    /// reported constants (a ratio ≤ 1 means the bound holds).
    pub fn sample_check(&self, net: &NetParams, pairs: usize, seed: u64) -> SampleVerdict {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst_value: f64 = 0.0;
        let mut worst_deriv: f64 = 0.0;
        let mut violations = 0usize;
        for _ in 0..pairs {
            let z = rng.gen_range(self.box_lo..=self.box_hi);
            let zt = rng.gen_range(self.box_lo..=self.box_hi);
            let dz = (z - zt).abs();
            if dz == 0.0 {
                continue;
            }
            let (v, d) = net.forward_with_derivative(z);
            let (vt, dt) = net.forward_with_derivative(zt);
            // slack for floating-point rounding in the two evaluations
            let slack = 1e-13 * (1.0 + v.abs() + vt.abs() + d.abs() + dt.abs());
            let rv = bound_ratio((v - vt).abs(), self.value_lip * dz, slack);
            let rd = bound_ratio((d - dt).abs(), self.derivative_lip * dz, slack);
            if rv > 1.0 || rd > 1.0 {
                violations += 1;
            }
            worst_value = worst_value.max(rv);
            worst_deriv = worst_deriv.max(rd);
        }
        SampleVerdict {
            pairs,
            worst_value_ratio: worst_value,
            worst_derivative_ratio: worst_deriv,
            violations,
        }
    }
}

fn bound_ratio(observed: f64, bound: f64, slack: f64) -> f64 {
    if observed <= slack {
        0.0
    } else if bound <= 0.0 {
        f64::INFINITY
    } else {
        (observed - slack).max(0.0) / bound
    }
}

/// Outcome of [`verify_tcc`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TccVerdict {
    pub rho: f64,
    pub rho_max: f64,
    /// `ρ / ρ_max`, the cone constant the bound guarantees.
    pub c_tc: f64,
    pub pairs: usize,
    /// Pairs discarded because a value left the certified box.
    pub skipped: usize,
    /// Largest observed `‖𝒩(u) − 𝒩(ũ) − 𝒩'(u)(u − ũ)‖_𝒲 / ‖u − ũ‖_𝒲`.
    pub worst_ratio: f64,
}

impl TccVerdict {
    pub fn passed(&self) -> bool {
        self.worst_ratio <= self.c_tc * (1.0 + 1e-12) && self.skipped < self.pairs
    }
}

/// Samples pairs `u = u† + d₁`, `ũ = u† + d₂` with `‖dₖ‖_𝒱 ≤ ρ` and checks the
/// Taylor defect of the Nemytskii operator against `c_tc = ρ / ρ_max`.
pub fn verify_tcc(
    net: &NetParams,
    report: &LipschitzReport,
    grid: &Grid,
    center: &Field,
    rho: f64,
    pairs: usize,
    seed: u64,
) -> Result<TccVerdict> {
    if !center.matches(grid) {
        return Err(Error::Shape("centre field does not match grid".into()));
    }
    if !(rho > 0.0) {
        return Err(Error::Contract(format!(
            "radius must be positive, got {rho}"
        )));
    }
    let rho_max = report.tcc_radius(embedding_constant(grid))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut skipped = 0;
    let in_box = |f: &Field| {
        f.as_slice()
            .iter()
            .all(|&v| v >= report.box_lo && v <= report.box_hi)
    };
    for _ in 0..pairs {
        let mut u = center.clone();
        u.axpy(1.0, &random_perturbation(grid, rho, &mut rng));
        let mut ut = center.clone();
        ut.axpy(1.0, &random_perturbation(grid, rho, &mut rng));
        if !in_box(&u) || !in_box(&ut) {
            skipped += 1;
            continue;
        }
        let mut defect = Field::zeros(grid);
        let mut diff = Field::zeros(grid);
        for k in 0..u.as_slice().len() {
            let (a, b) = (u.as_slice()[k], ut.as_slice()[k]);
            let (na, da) = net.forward_with_derivative(a);
            defect.as_mut_slice()[k] = na - net.forward(b) - da * (a - b);
            diff.as_mut_slice()[k] = a - b;
        }
        let den = norm_w(&diff, grid);
        if den > 0.0 {
            worst = worst.max(norm_w(&defect, grid) / den);
        }
    }
    Ok(TccVerdict {
        rho,
        rho_max,
        c_tc: if rho_max.is_finite() {
            rho / rho_max
        } else {
            0.0
        },
        pairs,
        skipped,
        worst_ratio: worst,
    })
}

/// Smooth Dirichlet field with `𝒱`-norm uniform in `[0, ρ]`.
fn random_perturbation(grid: &Grid, rho: f64, rng: &mut ChaCha8Rng) -> Field {
    let coeffs: Vec<[f64; 3]> = (0..4)
        .map(|_| {
            [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            ]
        })
        .collect();
    let tt = grid.t_end();
    let mut f = Field::from_fn_dirichlet(grid, |t, x| {
        let s = t / tt;
        coeffs
            .iter()
            .enumerate()
            .map(|(n, c)| {
                (c[0] + c[1] * s + c[2] * s * s) * ((n + 1) as f64 * std::f64::consts::PI * x).sin()
            })
            .sum()
    });
    let norm = norm_v_state(&f, grid);
    if norm > 0.0 {
        f.scale(rho * rng.gen_range(0.0..=1.0) / norm);
    }
    f
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleVerdict {
    pub pairs: usize,
    pub worst_value_ratio: f64,
    pub worst_derivative_ratio: f64,
    pub violations: usize,
}

impl SampleVerdict {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn affine(w: f64, b: f64) -> NetParams {
        let mut n = NetParams::zeros(&[1, 1]).unwrap();
        n.layers[0].weight[0] = w;
        n.layers[0].bias[0] = b;
        n
    }

    /// Plain re-implementation used as an independent oracle.
    fn naive_forward(net: &NetParams, z: f64) -> f64 {
        let mut a = vec![z];
        let depth = net.depth();
        for (l, layer) in net.layers().iter().enumerate() {
            let mut next = Vec::new();
            for r in 0..layer.rows {
                let mut s = layer.bias[r];
                for c in 0..layer.cols {
                    s += layer.weight[r * layer.cols + c] * a[c];
                }
                next.push(if l + 1 < depth { s.tanh() } else { s });
            }
            a = next;
        }
        a[0]
    }

    #[test]
    fn zero_and_affine_networks() {
        let z = NetParams::zeros(&STANDARD_ARCH).unwrap();
        assert_eq!(z.forward(0.7), 0.0);
        assert_eq!(z.input_derivative(0.7), 0.0);
        let a = affine(2.0, 3.0);
        assert_eq!(a.forward(1.0), 5.0);
        assert_eq!(a.input_derivative(-4.0), 2.0);
        let g = a.param_gradient_net(0.25, 2.0);
        assert_eq!(g.layers()[0].weight[0], 0.5);
        assert_eq!(g.layers()[0].bias[0], 2.0);
        assert!(a.param_gradient(0.3, 0.0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn standard_arch_has_29_parameters() {
        let n = NetParams::random_uniform(&STANDARD_ARCH, 0.5, 1).unwrap();
        assert_eq!(n.n_params(), 29);
        assert!(n.to_flat().iter().all(|v| v.abs() <= 0.5));
        assert_eq!(n.arch(), STANDARD_ARCH.to_vec());
    }

    #[test]
    fn forward_matches_naive_oracle() {
        let n = NetParams::random_uniform(&STANDARD_ARCH, 1.0, 42).unwrap();
        assert!((n.forward(0.3) - naive_forward(&n, 0.3)).abs() <= 1e-14);
        let (v, _) = n.backprop(0.3, 1.0, &mut vec![0.0; 29]);
        assert!((v - naive_forward(&n, 0.3)).abs() <= 1e-14);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for seed in 0..20 {
            let n = NetParams::random_uniform(&STANDARD_ARCH, 1.0, seed).unwrap();
            let z = -1.0 + 0.1 * seed as f64;
            let h = 1e-6;
            let fd = (naive_forward(&n, z + h) - naive_forward(&n, z - h)) / (2.0 * h);
            let d = n.input_derivative(z);
            assert!((d - fd).abs() / d.abs().max(1.0) <= 1e-6);
            let (_, d_back) = n.backprop(z, 1.0, &mut vec![0.0; 29]);
            assert_relative_eq!(d, d_back, epsilon = 1e-14);

            let g = n.param_gradient(z, 1.0);
            let p0 = n.to_flat();
            for k in 0..p0.len() {
                let mut p = p0.clone();
                p[k] += h;
                let mut np = n.clone();
                np.set_flat(&p);
                p[k] -= 2.0 * h;
                let mut nm = n.clone();
                nm.set_flat(&p);
                let fd = (naive_forward(&np, z) - naive_forward(&nm, z)) / (2.0 * h);
                assert!(
                    (g[k] - fd).abs() <= 1e-6 * g[k].abs().max(1.0),
                    "seed {seed} param {k}"
                );
            }
        }
    }

    #[test]
    fn zeroing_output_weights_leaves_bias() {
        let mut n = NetParams::random_uniform(&STANDARD_ARCH, 1.0, 3).unwrap();
        let last = n.depth() - 1;
        n.layers_mut()[last]
            .weight
            .iter_mut()
            .for_each(|w| *w = 0.0);
        let b = n.layers()[last].bias[0];
        for z in [-3.0, 0.0, 0.5, 10.0] {
            assert_eq!(n.forward(z), b);
        }
    }

    #[test]
    fn json_round_trip_and_validation() {
        let n = NetParams::random_uniform(&STANDARD_ARCH, 0.5, 9).unwrap();
        let back = NetParams::from_json(&n.to_json()).unwrap();
        assert_eq!(n, back);
        assert!(
            NetParams::from_json(r#"{"arch":[1,2,1],"weights":[[1,2]],"biases":[[0,0]]}"#).is_err()
        );
        assert!(
            NetParams::from_json(r#"{"arch":[2,1],"weights":[[1,2]],"biases":[[0]]}"#).is_err()
        );
    }

    #[test]
    fn spectral_norm_of_known_matrices() {
        let mut l = Layer::zeros(2, 2);
        l.weight = vec![3.0, 0.0, 4.0, 5.0];
        // singular values of [[3,0],[4,5]] are sqrt(45) and sqrt(5)
        assert_relative_eq!(l.spectral_norm(), 45f64.sqrt(), epsilon = 1e-12);
        let mut col = Layer::zeros(3, 1);
        col.weight = vec![1.0, 2.0, 2.0];
        assert_relative_eq!(col.spectral_norm(), 3.0, epsilon = 1e-14);
    }

    #[test]
    fn lipschitz_trivial_cases() {
        let z = NetParams::zeros(&STANDARD_ARCH).unwrap();
        let r = z.lipschitz_constants(-2.0, 2.0).unwrap();
        assert_eq!(r.value_lip, 0.0);
        assert!(r.cz.iter().all(|&c| c == 0.0));
        assert_eq!(r.tcc_radius(1.0).unwrap(), f64::INFINITY);

        let a = affine(-1.5, 0.2);
        let r = a.lipschitz_constants(-2.0, 2.0).unwrap();
        assert_eq!(r.value_lip, 1.5);
        assert_eq!(r.cz[0], 0.0);
        assert_eq!(r.tcc_radius(1.0).unwrap(), f64::INFINITY);
        assert_eq!(*r.cz.last().unwrap(), 0.0);
        assert!(a.lipschitz_constants(1.0, 1.0).is_err());
        assert!(r.tcc_radius(0.0).is_err());
    }

    #[test]
    fn tangential_cone_holds_inside_half_radius() {
        let grid = Grid::unit(21, 20).unwrap();
        let n = NetParams::random_uniform(&STANDARD_ARCH, 1.0, 12).unwrap();
        let r = n.lipschitz_constants(-2.0, 2.0).unwrap();
        let rho_max = r.tcc_radius(embedding_constant(&grid)).unwrap();
        let centre =
            Field::from_fn_dirichlet(&grid, |t, x| (1.0 + t) * (std::f64::consts::PI * x).sin());
        let v = verify_tcc(&n, &r, &grid, &centre, 0.5 * rho_max.min(1e3), 200, 1).unwrap();
        assert!(v.c_tc <= 0.5 + 1e-15);
        assert!(v.passed(), "{v:?}");
    }

    #[test]
    fn lipschitz_bounds_hold_on_samples() {
        let n = NetParams::random_uniform(&STANDARD_ARCH, 1.0, 11).unwrap();
        let r = n.lipschitz_constants(-2.0, 2.0).unwrap();
        assert!(r.s.iter().all(|&s| (0.0..=1.0).contains(&s)));
        let v = r.sample_check(&n, 20_000, 5);
        assert!(v.passed(), "{v:?}");
        assert!(r
            .cw
            .iter()
            .chain(&r.cb)
            .all(|c| c.iter().all(|&x| x >= 0.0)));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn input_derivative_matches_central_difference(seed in 0u64..10_000, hw in 0.1f64..2.0, z in -3.0f64..3.0) {
                let net = NetParams::random_uniform(&STANDARD_ARCH, hw, seed).unwrap();
                let h = 1e-6;
                let fd = (net.forward(z + h) - net.forward(z - h)) / (2.0 * h);
                let d = net.input_derivative(z);
                prop_assert!((d - fd).abs() / d.abs().max(1.0) <= 1e-6);
            }

            #[test]
            fn flat_parameters_round_trip(seed in 0u64..10_000, hw in 0.0f64..3.0) {
                let net = NetParams::random_uniform(&STANDARD_ARCH, hw, seed).unwrap();
                let mut other = NetParams::zeros(&STANDARD_ARCH).unwrap();
                other.set_flat(&net.to_flat());
                prop_assert_eq!(&other, &net);
                let back = NetParams::from_json(&net.to_json()).unwrap();
                prop_assert_eq!(back, net);
            }
        }
    }
}
