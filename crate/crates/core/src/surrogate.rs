//! Parametrised scalar nonlinearities that can stand in for the unknown
//! reaction term: the dense network and the two classical baselines
//! (monomial polynomial, truncated Fourier series).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::NetParams;

/// A scalar function `z ↦ f_θ(z)` with a flat parameter vector `θ`.
pub trait Nonlinearity: Clone + Send + Sync {
    fn n_params(&self) -> usize;
    fn params(&self) -> Vec<f64>;
    fn set_params(&mut self, p: &[f64]);
    fn eval(&self, z: f64) -> f64;
    /// `(f(z), f'(z))`
    fn eval_with_derivative(&self, z: f64) -> (f64, f64);
    /// `out += weight * ∂f(z)/∂θ`
    fn accumulate_param_gradient(&self, z: f64, weight: f64, out: &mut [f64]);
    /// Replaces `f` by `f + c`.
    fn shift_output(&mut self, c: f64);

    /// `accumulate_param_gradient` that also returns `(f(z), f'(z))`.
    fn accumulate_with_derivative(&self, z: f64, weight: f64, out: &mut [f64]) -> (f64, f64) {
        self.accumulate_param_gradient(z, weight, out);
        self.eval_with_derivative(z)
    }

    fn derivative(&self, z: f64) -> f64 {
        self.eval_with_derivative(z).1
    }

    fn param_gradient(&self, z: f64, weight: f64) -> Vec<f64> {
        let mut g = vec![0.0; self.n_params()];
        self.accumulate_param_gradient(z, weight, &mut g);
        g
    }
}

/// `Σ_k c_k z^k`, evaluated by Horner's rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub coeffs: Vec<f64>,
}

impl Polynomial {
    pub fn zeros(dof: usize) -> Result<Self> {
        if dof == 0 {
            return Err(Error::Config(
                "polynomial needs at least one coefficient".into(),
            ));
        }
        Ok(Self {
            coeffs: vec![0.0; dof],
        })
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }
}

impl Nonlinearity for Polynomial {
    fn n_params(&self) -> usize {
        self.coeffs.len()
    }
    fn params(&self) -> Vec<f64> {
        self.coeffs.clone()
    }
    fn set_params(&mut self, p: &[f64]) {
        self.coeffs.copy_from_slice(p);
    }
    fn eval(&self, z: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &c| acc * z + c)
    }
    fn eval_with_derivative(&self, z: f64) -> (f64, f64) {
        let mut p = 0.0;
        let mut dp = 0.0;
        for &c in self.coeffs.iter().rev() {
            dp = dp * z + p;
            p = p * z + c;
        }
        (p, dp)
    }
    fn accumulate_param_gradient(&self, z: f64, weight: f64, out: &mut [f64]) {
        let mut pow = weight;
        for o in out.iter_mut() {
            *o += pow;
            pow *= z;
        }
    }
    fn shift_output(&mut self, c: f64) {
        self.coeffs[0] += c;
    }
}

/// `a₀ + Σ_{k=1}^{n} a_k cos(kωz) + b_k sin(kωz)`; parameters are stored as
/// `[a₀, a₁, b₁, a₂, b₂, ...]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrigSeries {
    pub omega: f64,
    pub coeffs: Vec<f64>,
}

impl TrigSeries {
    /// Zero series with `dof` parameters (odd) whose fundamental period is
    /// the value range widened by 10 %.
    pub fn zeros(dof: usize, range: (f64, f64)) -> Result<Self> {
        if dof == 0 || dof.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "trigonometric series needs an odd number of parameters, got {dof}"
            )));
        }
        let width = (range.1 - range.0).abs().max(1e-12) * 1.1;
        Ok(Self {
            omega: 2.0 * std::f64::consts::PI / width,
            coeffs: vec![0.0; dof],
        })
    }

    pub fn harmonics(&self) -> usize {
        (self.coeffs.len() - 1) / 2
    }

    /// `(k, (sin kωz, cos kωz))` for `k = 1..=n` by angle addition.
    fn harmonic_values(&self, z: f64) -> impl Iterator<Item = (usize, (f64, f64))> {
        let (s1, c1) = (self.omega * z).sin_cos();
        (1..=self.harmonics()).scan((0.0, 1.0), move |(s, c), k| {
            let next = (*s * c1 + *c * s1, *c * c1 - *s * s1);
            (*s, *c) = next;
            Some((k, next))
        })
    }
}

impl Nonlinearity for TrigSeries {
    fn n_params(&self) -> usize {
        self.coeffs.len()
    }
    fn params(&self) -> Vec<f64> {
        self.coeffs.clone()
    }
    fn set_params(&mut self, p: &[f64]) {
        self.coeffs.copy_from_slice(p);
    }
    fn eval(&self, z: f64) -> f64 {
        self.eval_with_derivative(z).0
    }
    fn eval_with_derivative(&self, z: f64) -> (f64, f64) {
        let mut v = self.coeffs[0];
        let mut d = 0.0;
        for (k, (s, c)) in self.harmonic_values(z) {
            let w = k as f64 * self.omega;
            let (a, b) = (self.coeffs[2 * k - 1], self.coeffs[2 * k]);
            v += a * c + b * s;
            d += w * (b * c - a * s);
        }
        (v, d)
    }
    fn accumulate_param_gradient(&self, z: f64, weight: f64, out: &mut [f64]) {
        out[0] += weight;
        for (k, (s, c)) in self.harmonic_values(z) {
            out[2 * k - 1] += weight * c;
            out[2 * k] += weight * s;
        }
    }
    fn shift_output(&mut self, c: f64) {
        self.coeffs[0] += c;
    }
}

/// Any of the supported approximators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Surrogate {
    Network(NetParams),
    Polynomial(Polynomial),
    Trig(TrigSeries),
}

macro_rules! delegate {
    ($self:ident, $s:ident => $e:expr) => {
        match $self {
            Surrogate::Network($s) => $e,
            Surrogate::Polynomial($s) => $e,
            Surrogate::Trig($s) => $e,
        }
    };
}

impl Nonlinearity for Surrogate {
    fn n_params(&self) -> usize {
        delegate!(self, s => s.n_params())
    }
    fn params(&self) -> Vec<f64> {
        delegate!(self, s => s.params())
    }
    fn set_params(&mut self, p: &[f64]) {
        delegate!(self, s => s.set_params(p))
    }
    fn eval(&self, z: f64) -> f64 {
        delegate!(self, s => s.eval(z))
    }
    fn eval_with_derivative(&self, z: f64) -> (f64, f64) {
        delegate!(self, s => s.eval_with_derivative(z))
    }
    fn accumulate_param_gradient(&self, z: f64, weight: f64, out: &mut [f64]) {
        delegate!(self, s => s.accumulate_param_gradient(z, weight, out))
    }
    fn accumulate_with_derivative(&self, z: f64, weight: f64, out: &mut [f64]) -> (f64, f64) {
        delegate!(self, s => s.accumulate_with_derivative(z, weight, out))
    }
    fn shift_output(&mut self, c: f64) {
        delegate!(self, s => s.shift_output(c))
    }
}
