//! Regularised all-at-once objective
//!
//! ```text
//! J = Σ_k [β_e ‖e(u^k, ψ^k, θ)‖²_𝒲 + β_M ‖M u^k − y^k‖²_𝒴 + r_u ‖u^k‖²_𝒱 + r_ψ ‖ψ^k‖²_L²] + r_θ ‖θ‖²
//! ```
//!
//! with two gradient assemblies: the function-space gradient built from the
//! analytic adjoints (Riesz representers in `𝒱 × L² × ℝ^p`), and the plain
//! Euclidean gradient of the discretised objective. Landweber iteration uses
//! the first, ADAM the second.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::adjoint::{source_adjoint, AdjointContext, AuxOperator};
use crate::error::{Error, Result};
use crate::grid::{
    cell_gradient, div_a_grad_into, inner_l2, inner_vspace, inner_w, laplacian, laplacian_into,
    DirichletSolver, Field, Grid,
};
use crate::model::{pde_residual_with_source, ObservationSet, PdeParams};
use crate::par;
use crate::surrogate::Nonlinearity;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveWeights {
    pub beta_e: f64,
    pub beta_m: f64,
    pub r_u: f64,
    pub r_psi: f64,
    pub r_theta: f64,
}

impl Default for ObjectiveWeights {
    fn default() -> Self {
        Self {
            beta_e: 1.0,
            beta_m: 1.0,
            r_u: 1e-4,
            r_psi: 1e-4,
            r_theta: 1e-6,
        }
    }
}

impl ObjectiveWeights {
    /// Pure least squares, no regularisation.
    pub fn unregularised() -> Self {
        Self {
            r_u: 0.0,
            r_psi: 0.0,
            r_theta: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.beta_e, self.beta_m, self.r_u, self.r_psi, self.r_theta];
        if all.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Config(format!(
                "objective weights must be finite and ≥ 0: {self:?}"
            )));
        }
        if self.beta_e == 0.0 || self.beta_m == 0.0 {
            return Err(Error::Config("beta_e and beta_m must be positive".into()));
        }
        Ok(())
    }
}

/// Which gradient assembly to use.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    /// Analytic adjoints; gradient lives in `𝒱 × L²(Ω) × ℝ^p`.
    FunctionSpace,
    /// Euclidean gradient of the discrete objective.
    Flat,
}

/// Unknowns: one state per sample, optionally one source correction per
/// sample, and the shared nonlinearity.
#[derive(Clone, Debug, PartialEq)]
pub struct SolveState<N> {
    pub u: Vec<Field>,
    /// Empty when the source is known.
    pub psi: Vec<Vec<f64>>,
    pub net: N,
}

impl<N: Nonlinearity> SolveState<N> {
    /// `self += a · g`.
    pub fn axpy(&mut self, a: f64, g: &Gradient) {
        for (u, gu) in self.u.iter_mut().zip(&g.u) {
            u.axpy(a, gu);
        }
        for (p, gp) in self.psi.iter_mut().zip(&g.psi) {
            p.iter_mut().zip(gp).for_each(|(x, y)| *x += a * y);
        }
        let theta: Vec<f64> = self
            .net
            .params()
            .iter()
            .zip(&g.theta)
            .map(|(x, y)| x + a * y)
            .collect();
        self.net.set_params(&theta);
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().all(Field::is_finite)
            && self.psi.iter().flatten().all(|v| v.is_finite())
            && self.net.params().iter().all(|v| v.is_finite())
    }
}

/// Gradient (or direction) shaped like a [`SolveState`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    pub u: Vec<Field>,
    pub psi: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
}

impl Gradient {
    /// Inner product matching the backend the gradient was assembled for.
    pub fn dot(&self, other: &Gradient, backend: Backend, grid: &Grid) -> f64 {
        let theta: f64 = self
            .theta
            .iter()
            .zip(&other.theta)
            .map(|(a, b)| a * b)
            .sum();
        match backend {
            Backend::FunctionSpace => {
                let u: f64 = self
                    .u
                    .iter()
                    .zip(&other.u)
                    .map(|(a, b)| inner_vspace(a, b, grid))
                    .sum();
                let p: f64 = self
                    .psi
                    .iter()
                    .zip(&other.psi)
                    .map(|(a, b)| inner_l2(a, b, grid))
                    .sum();
                u + p + theta
            }
            Backend::Flat => {
                let u: f64 = self
                    .u
                    .iter()
                    .zip(&other.u)
                    .map(|(a, b)| {
                        a.as_slice()
                            .iter()
                            .zip(b.as_slice())
                            .map(|(x, y)| x * y)
                            .sum::<f64>()
                    })
                    .sum();
                let p: f64 = self
                    .psi
                    .iter()
                    .zip(&other.psi)
                    .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>())
                    .sum();
                u + p + theta
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.u.iter().all(|f| f.max_abs() == 0.0)
            && self.psi.iter().flatten().all(|&v| v == 0.0)
            && self.theta.iter().all(|&v| v == 0.0)
    }

    fn flatten(&self) -> Vec<f64> {
        let mut v = Vec::new();
        for u in &self.u {
            v.extend_from_slice(u.as_slice());
        }
        for p in &self.psi {
            v.extend_from_slice(p);
        }
        v.extend_from_slice(&self.theta);
        v
    }
}

/// Objective value and its parts at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub objective: f64,
    /// `Σ_k ‖e^k‖²_𝒲`
    pub residual_sq: f64,
    /// `Σ_k ‖M u^k − y^k‖²_𝒴`
    pub misfit_sq: f64,
    pub residuals: Vec<Field>,
    pub misfits: Vec<Field>,
}

impl Evaluation {
    pub fn residual_norm(&self) -> f64 {
        self.residual_sq.sqrt()
    }
    pub fn misfit_norm(&self) -> f64 {
        self.misfit_sq.sqrt()
    }
}

/// Data and fixed quantities of one identification problem.
#[derive(Clone, Debug)]
pub struct Problem {
    pub grid: Grid,
    pub aux: AuxOperator,
    /// Known coefficients and the fixed source part, one per sample.
    pub params: Vec<PdeParams>,
    pub data: ObservationSet,
    pub weights: ObjectiveWeights,
    /// Whether a source correction `ψ^k` is estimated.
    pub estimate_source: bool,
}

impl Problem {
    pub fn new(
        grid: Grid,
        params: Vec<PdeParams>,
        data: ObservationSet,
        weights: ObjectiveWeights,
        estimate_source: bool,
    ) -> Result<Self> {
        weights.validate()?;
        if params.len() != data.len() {
            return Err(Error::Shape(format!(
                "{} parameter sets for {} samples",
                params.len(),
                data.len()
            )));
        }
        for p in &params {
            p.validate(&grid)?;
        }
        Ok(Self {
            aux: AuxOperator::new(&grid),
            grid,
            params,
            data,
            weights,
            estimate_source,
        })
    }

    pub fn samples(&self) -> usize {
        self.params.len()
    }

    fn check_state<N: Nonlinearity>(&self, s: &SolveState<N>) -> Result<()> {
        if s.u.len() != self.samples() {
            return Err(Error::Shape(format!(
                "{} states for {} samples",
                s.u.len(),
                self.samples()
            )));
        }
        if s.u.iter().any(|u| !u.matches(&self.grid)) {
            return Err(Error::Shape("state does not match grid".into()));
        }
        let want = if self.estimate_source {
            self.samples()
        } else {
            0
        };
        if s.psi.len() != want || s.psi.iter().any(|p| p.len() != self.grid.nx()) {
            return Err(Error::Shape(format!(
                "expected {want} source slices of length {}",
                self.grid.nx()
            )));
        }
        Ok(())
    }

    /// Zero state and source with the given network.
    pub fn zero_state<N: Nonlinearity>(&self, net: N) -> SolveState<N> {
        SolveState {
            u: vec![Field::zeros(&self.grid); self.samples()],
            psi: if self.estimate_source {
                vec![vec![0.0; self.grid.nx()]; self.samples()]
            } else {
                Vec::new()
            },
            net,
        }
    }

    fn sample_terms<N: Nonlinearity>(
        &self,
        s: &SolveState<N>,
        k: usize,
    ) -> Result<(Field, Field, f64)> {
        let grid = &self.grid;
        let psi = s.psi.get(k).map(Vec::as_slice);
        let r = pde_residual_with_source(&self.params[k], psi, &s.u[k], &s.net, grid)?;
        let mut m = self.data.spec.measure(&s.u[k], grid);
        m.axpy(-1.0, &self.data.samples[k].field());
        let w = &self.weights;
        let mut reg = 0.0;
        if w.r_u > 0.0 {
            reg += w.r_u * inner_vspace(&s.u[k], &s.u[k], grid);
        }
        if let Some(p) = psi {
            reg += w.r_psi * inner_l2(p, p, grid);
        }
        Ok((r, m, reg))
    }

    pub fn evaluate<N: Nonlinearity>(&self, s: &SolveState<N>) -> Result<Evaluation> {
        self.check_state(s)?;
        let parts = par::map_indexed(self.samples(), |k| self.sample_terms(s, k));
        let mut residuals = Vec::with_capacity(parts.len());
        let mut misfits = Vec::with_capacity(parts.len());
        let (mut rsq, mut msq, mut reg) = (0.0, 0.0, 0.0);
        for p in parts {
            let (r, m, g) = p?;
            rsq += inner_w(&r, &r, &self.grid);
            msq += self.data.spec.norm_sq(&m, &self.grid);
            reg += g;
            residuals.push(r);
            misfits.push(m);
        }
        let theta_sq: f64 = s.net.params().iter().map(|v| v * v).sum();
        let w = &self.weights;
        let objective = w.beta_e * rsq + w.beta_m * msq + reg + w.r_theta * theta_sq;
        Ok(Evaluation {
            objective,
            residual_sq: rsq,
            misfit_sq: msq,
            residuals,
            misfits,
        })
    }

    pub fn objective<N: Nonlinearity>(&self, s: &SolveState<N>) -> Result<f64> {
        Ok(self.evaluate(s)?.objective)
    }

    /// Gradient at `s`, reusing an evaluation at the same point.
    pub fn gradient_at<N: Nonlinearity>(
        &self,
        s: &SolveState<N>,
        ev: &Evaluation,
        backend: Backend,
    ) -> Result<Gradient> {
        self.check_state(s)?;
        let w = self.weights;
        let per_sample = par::map_indexed(
            self.samples(),
            |k| -> Result<(Field, Option<Vec<f64>>, Vec<f64>)> {
                let r = &ev.residuals[k];
                let m = &ev.misfits[k];
                let u = &s.u[k];
                match backend {
                    Backend::FunctionSpace => {
                        self.sample_gradient_function_space(s, k, r, m, u, &w)
                    }
                    Backend::Flat => Ok(self.sample_gradient_flat(s, k, r, m, u, &w)),
                }
            },
        );
        let mut g = Gradient {
            u: Vec::with_capacity(self.samples()),
            psi: Vec::new(),
            theta: s.net.params().iter().map(|t| 2.0 * w.r_theta * t).collect(),
        };
        for part in per_sample {
            let (gu, gp, gt) = part?;
            g.u.push(gu);
            if let Some(p) = gp {
                g.psi.push(p);
            }
            g.theta.iter_mut().zip(gt).for_each(|(a, b)| *a += b);
        }
        Ok(g)
    }

    pub fn gradient<N: Nonlinearity>(
        &self,
        s: &SolveState<N>,
        backend: Backend,
    ) -> Result<Gradient> {
        let ev = self.evaluate(s)?;
        self.gradient_at(s, &ev, backend)
    }

    fn sample_gradient_function_space<N: Nonlinearity>(
        &self,
        s: &SolveState<N>,
        k: usize,
        r: &Field,
        m: &Field,
        u: &Field,
        w: &ObjectiveWeights,
    ) -> Result<(Field, Option<Vec<f64>>, Vec<f64>)> {
        let grid = &self.grid;
        let ctx = AdjointContext::new(&self.aux, &self.params[k], u, &s.net)?;
        let mut gu = ctx.adjoint_transport(r)?;
        gu.scale(2.0 * w.beta_e);
        gu.axpy(
            2.0 * w.beta_m,
            &ctx.adjoint_measurement(&self.data.spec, m)?,
        );
        if w.r_u > 0.0 {
            gu.axpy(2.0 * w.r_u, u);
        }
        let gp = s.psi.get(k).map(|psi| {
            let mut rr = r.clone();
            rr.zero_boundary();
            let mut g = source_adjoint(&rr, grid);
            for (gi, p) in g.iter_mut().zip(psi) {
                *gi = 2.0 * w.beta_e * *gi + 2.0 * w.r_psi * p;
            }
            g
        });
        let gt: Vec<f64> = ctx
            .adjoint_nn(r)?
            .iter()
            .map(|v| -2.0 * w.beta_e * v)
            .collect();
        Ok((gu, gp, gt))
    }

    fn sample_gradient_flat<N: Nonlinearity>(
        &self,
        s: &SolveState<N>,
        k: usize,
        r: &Field,
        m: &Field,
        u: &Field,
        w: &ObjectiveWeights,
    ) -> (Field, Option<Vec<f64>>, Vec<f64>) {
        let grid = &self.grid;
        let p = &self.params[k];
        let nx = grid.nx();
        let dx = grid.dx();
        let wt = grid.time_weights();
        // ρ = ∂(β_e ‖r‖²_𝒲)/∂r on interior nodes
        let mut rho = r.clone();
        for j in 0..grid.rows() {
            let c = 2.0 * w.beta_e * wt[j] * dx;
            rho.row_mut(j).iter_mut().for_each(|v| *v *= c);
        }
        rho.zero_boundary();

        let mut gu = time_derivative_transpose(&rho, grid);
        let np = s.net.n_params();
        let row_parts = par::map_indexed(grid.rows(), |j| {
            let rj = rho.row(j);
            let uj = u.row(j);
            let mut kr = vec![0.0; nx];
            div_a_grad_into(&p.a, rj, grid, &mut kr);
            let mut gt = vec![0.0; np];
            for i in 1..nx - 1 {
                let (_, fp) = s.net.accumulate_with_derivative(uj[i], -rj[i], &mut gt);
                kr[i] = -kr[i] + p.c[i] * rj[i] - fp * rj[i];
            }
            (kr, gt)
        });
        let mut gt = vec![0.0; np];
        for (j, (kr, g)) in row_parts.into_iter().enumerate() {
            let row = gu.row_mut(j);
            for i in 1..nx - 1 {
                row[i] += kr[i];
            }
            gt.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }

        let spec = &self.data.spec;
        let rw = spec.row_weights(grid);
        let sw = grid.space_weights();
        for (mi, &j) in spec.rows(grid).iter().enumerate() {
            let c = 2.0 * w.beta_m * rw[mi] * spec.scale;
            let mrow = m.row(mi);
            for (i, g) in gu.row_mut(j).iter_mut().enumerate() {
                *g += c * sw[i] * mrow[i];
            }
        }
        if w.r_u > 0.0 {
            gu.axpy(2.0 * w.r_u, &state_gram(u, grid));
        }
        gu.zero_boundary();

        let gp = s.psi.get(k).map(|psi| {
            let mut g = vec![0.0; nx];
            for j in 0..grid.rows() {
                for i in 1..nx - 1 {
                    g[i] -= rho.get(j, i);
                }
            }
            for i in 0..nx {
                g[i] += 2.0 * w.r_psi * sw[i] * psi[i];
            }
            g
        });
        (gu, gp, gt)
    }

    /// Flattened unknowns in the order states, sources, network parameters.
    pub fn flatten<N: Nonlinearity>(&self, s: &SolveState<N>) -> Vec<f64> {
        let mut v = Vec::new();
        for u in &s.u {
            v.extend_from_slice(u.as_slice());
        }
        for p in &s.psi {
            v.extend_from_slice(p);
        }
        v.extend(s.net.params());
        v
    }

    pub fn unflatten<N: Nonlinearity>(&self, v: &[f64], s: &mut SolveState<N>) {
        let mut k = 0;
        for u in &mut s.u {
            let n = u.as_slice().len();
            u.as_mut_slice().copy_from_slice(&v[k..k + n]);
            k += n;
        }
        self.unflatten_tail(&v[k..], s);
    }

    /// Sources and network parameters from the part after the states.
    fn unflatten_tail<N: Nonlinearity>(&self, v: &[f64], s: &mut SolveState<N>) {
        let mut k = 0;
        for p in &mut s.psi {
            let n = p.len();
            p.copy_from_slice(&v[k..k + n]);
            k += n;
        }
        s.net.set_params(&v[k..]);
    }

    /// Discrepancy quantity `sqrt(β_e ‖e‖² + β_M ‖Mu − y‖²)`.
    pub fn discrepancy(&self, ev: &Evaluation) -> f64 {
        (self.weights.beta_e * ev.residual_sq + self.weights.beta_m * ev.misfit_sq).sqrt()
    }
}

/// `D_tᵀ ρ` for the central / two-point time difference.
fn time_derivative_transpose(rho: &Field, grid: &Grid) -> Field {
    let nt = grid.nt();
    let dt = grid.dt();
    let mut out = Field::zeros(grid);
    let mut scatter = |from: usize, to: usize, c: f64| {
        let src: Vec<f64> = rho.row(from).to_vec();
        for (o, v) in out.row_mut(to).iter_mut().zip(&src) {
            *o += c * v;
        }
    };
    scatter(0, 0, -1.0 / dt);
    scatter(0, 1, 1.0 / dt);
    for j in 1..nt {
        scatter(j, j + 1, 0.5 / dt);
        scatter(j, j - 1, -0.5 / dt);
    }
    scatter(nt, nt, 1.0 / dt);
    scatter(nt, nt - 1, -1.0 / dt);
    out
}

/// `G p` with `‖p‖²_V = pᵀ G p` on Dirichlet slices.
fn slice_gram(p: &[f64], grid: &Grid) -> Vec<f64> {
    let dx = grid.dx();
    let mut lp = laplacian(p, grid);
    lp.iter_mut().for_each(|v| *v *= dx);
    let mut out = vec![0.0; p.len()];
    laplacian_into(&lp, grid, &mut out);
    let g = cell_gradient(p, grid);
    for (c, gc) in g.iter().enumerate() {
        // D⁺ᵀ(dx · D⁺p) with D⁺ = (p_{c+1} − p_c)/dx
        out[c] -= gc;
        out[c + 1] += gc;
    }
    out
}

/// Half the Euclidean gradient of `‖u‖²_𝒱`.
fn state_gram(u: &Field, grid: &Grid) -> Field {
    let dt = grid.dt();
    let nx = grid.nx();
    let mut out = Field::zeros(grid);
    let g0 = slice_gram(u.row(0), grid);
    out.row_mut(0)
        .iter_mut()
        .zip(&g0)
        .for_each(|(o, v)| *o += v);
    let cells = par::map_indexed(grid.nt(), |j| {
        let d: Vec<f64> = (0..nx).map(|i| u.get(j + 1, i) - u.get(j, i)).collect();
        slice_gram(&d, grid)
    });
    for (j, g) in cells.iter().enumerate() {
        for i in 0..nx {
            let v = g[i] / dt;
            out.set(j + 1, i, out.get(j + 1, i) + v);
            out.set(j, i, out.get(j, i) - v);
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// Data discrepancy fell below `τ δ`.
    Discrepancy,
    MaxIters,
    /// Step size fell below the floor without an acceptable trial point.
    Stalled,
    /// Gradient is exactly zero.
    Stationary,
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::Discrepancy => "discrepancy",
            Self::MaxIters => "max_iters",
            Self::Stalled => "stalled",
            Self::Stationary => "stationary",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StoppingRule {
    pub max_iters: usize,
    pub tau: f64,
    /// Noise level; `0` disables the discrepancy test.
    pub delta: f64,
    pub min_step: f64,
    pub initial_step: f64,
}

impl Default for StoppingRule {
    fn default() -> Self {
        Self {
            max_iters: 50_000,
            tau: 1.5,
            delta: 0.0,
            min_step: 1e-12,
            initial_step: 1.0,
        }
    }
}

impl StoppingRule {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.tau >= 1.0) {
            return Err(Error::Config(format!("tau must be ≥ 1, got {}", self.tau)));
        }
        if !(self.delta >= 0.0) {
            return Err(Error::Config(format!(
                "delta must be ≥ 0, got {}",
                self.delta
            )));
        }
        if !(self.min_step > 0.0 && self.initial_step >= self.min_step) {
            return Err(Error::Config("need 0 < min_step ≤ initial_step".into()));
        }
        Ok(())
    }
}

/// One line of the iteration trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub pde_residual_w: f64,
    pub data_misfit_y: f64,
    pub step_size: f64,
}

impl TraceRow {
    fn new(iter: usize, ev: &Evaluation, step: f64) -> Self {
        Self {
            iter,
            objective: ev.objective,
            pde_residual_w: ev.residual_norm(),
            data_misfit_y: ev.misfit_norm(),
            step_size: step,
        }
    }
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], mut out: W) -> std::io::Result<()> {
    writeln!(out, "iter,objective,pde_residual_W,data_misfit_Y,step_size")?;
    for r in rows {
        writeln!(
            out,
            "{},{:.17e},{:.17e},{:.17e},{:.17e}",
            r.iter, r.objective, r.pde_residual_w, r.data_misfit_y, r.step_size
        )?;
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct SolveOutcome<N> {
    pub state: SolveState<N>,
    pub trace: Vec<TraceRow>,
    pub stop: StopReason,
    pub iterations: usize,
    pub final_eval: Evaluation,
}

/// Landweber iteration `x ← x − μ ∇J(x)` with the function-space gradient.
///
/// A trial point is accepted when its PDE residual does not exceed the
/// current one; otherwise `μ` is halved. The trace holds one row per accepted
/// iterate (row 0 is the initial point).
pub fn landweber_run<N: Nonlinearity>(
    problem: &Problem,
    init: SolveState<N>,
    rule: &StoppingRule,
) -> Result<SolveOutcome<N>> {
    rule.validate()?;
    let mut state = init;
    let mut ev = problem.evaluate(&state)?;
    let mut mu = rule.initial_step;
    let mut trace = vec![TraceRow::new(0, &ev, mu)];
    let mut iter = 0;
    let stop = loop {
        if rule.delta > 0.0 && problem.discrepancy(&ev) <= rule.tau * rule.delta {
            break StopReason::Discrepancy;
        }
        if iter >= rule.max_iters {
            break StopReason::MaxIters;
        }
        let g = problem.gradient_at(&state, &ev, Backend::FunctionSpace)?;
        if g.is_zero() {
            break StopReason::Stationary;
        }
        let accepted = loop {
            let mut trial = state.clone();
            trial.axpy(-mu, &g);
            if trial.is_finite() {
                let tev = problem.evaluate(&trial)?;
                if tev.residual_sq.is_finite() && tev.residual_sq <= ev.residual_sq {
                    break Some((trial, tev));
                }
            }
            mu *= 0.5;
            if mu < rule.min_step {
                break None;
            }
        };
        let Some((trial, tev)) = accepted else {
            break StopReason::Stalled;
        };
        state = trial;
        ev = tev;
        iter += 1;
        trace.push(TraceRow::new(iter, &ev, mu));
        if iter % 1000 == 0 {
            log::debug!(
                "landweber {iter}: J = {:.3e}, |e| = {:.3e}, |Mu-y| = {:.3e}, mu = {mu:.2e}",
                ev.objective,
                ev.residual_norm(),
                ev.misfit_norm()
            );
        }
    };
    log::info!("landweber stopped after {iter} iterations ({stop})");
    Ok(SolveOutcome {
        state,
        trace,
        stop,
        iterations: iter,
        final_eval: ev,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamOptions {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub iters: usize,
    /// Record a trace row every this many iterations.
    pub trace_every: usize,
    pub state_variables: StateVariables,
    /// Return the iterate with the smallest objective instead of the last one.
    pub keep_best: bool,
}

impl Default for AdamOptions {
    fn default() -> Self {
        Self {
            lr: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            iters: 10_000,
            trace_every: 10,
            state_variables: StateVariables::Smoothed { alpha: 0.003 },
            keep_best: true,
        }
    }
}

/// Coordinates in which ADAM moves the states.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StateVariables {
    /// Nodal values `u_ji`.
    Nodal,
    /// `w_j = (I − α Δ_h) u_j`, so that `u_j = (I − α Δ_h)⁻¹ w_j`.
    Smoothed { alpha: f64 },
}

impl AdamOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0)
            || !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
        {
            return Err(Error::Config(format!("invalid ADAM options {self:?}")));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("ADAM eps must be positive".into()));
        }
        if let StateVariables::Smoothed { alpha } = self.state_variables {
            if !(alpha >= 0.0 && alpha.is_finite()) {
                return Err(Error::Config(format!(
                    "smoothing alpha must be finite and >= 0, got {alpha}"
                )));
            }
        }
        Ok(())
    }
}

/// First and second moment estimates of the ADAM update.
#[derive(Clone, Debug)]
pub struct Adam {
    opts: AdamOptions,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize, opts: AdamOptions) -> Self {
        Self {
            opts,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, x: &mut [f64], g: &[f64]) {
        let o = &self.opts;
        self.t += 1;
        let c1 = 1.0 - o.beta1.powi(self.t);
        let c2 = 1.0 - o.beta2.powi(self.t);
        for ((xi, gi), (mi, vi)) in x
            .iter_mut()
            .zip(g)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *mi = o.beta1 * *mi + (1.0 - o.beta1) * gi;
            *vi = o.beta2 * *vi + (1.0 - o.beta2) * gi * gi;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *xi -= o.lr * mhat / (vhat.sqrt() + o.eps);
        }
    }
}

/// ADAM on the flattened unknowns with the Euclidean gradient.
pub fn adam_run<N: Nonlinearity>(
    problem: &Problem,
    init: SolveState<N>,
    opts: &AdamOptions,
) -> Result<SolveOutcome<N>> {
    opts.validate()?;
    let grid = &problem.grid;
    let nx = grid.nx();
    let alpha = match opts.state_variables {
        StateVariables::Nodal => 0.0,
        StateVariables::Smoothed { alpha } => alpha,
    };
    let laplacian_vars = alpha > 0.0;
    let poisson = DirichletSolver::new(grid, alpha, 1.0)?;
    let n_state: usize = init.u.iter().map(|u| u.as_slice().len()).sum();
    let mut state = init;
    let mut x = problem.flatten(&state);
    if laplacian_vars {
        for row in x[..n_state].chunks_exact_mut(nx) {
            let lap = laplacian(row, grid);
            row.iter_mut().zip(&lap).for_each(|(v, l)| *v -= alpha * l);
        }
    }
    let mut adam = Adam::new(x.len(), *opts);
    let every = opts.trace_every.max(1);
    let mut trace = Vec::new();
    let mut ev = problem.evaluate(&state)?;
    let mut x_old = x.clone();
    let mut best: Option<(SolveState<N>, Evaluation)> = None;
    for it in 0..opts.iters {
        if !ev.objective.is_finite() {
            return Err(Error::Solver(format!(
                "objective became {} at ADAM iteration {it}",
                ev.objective
            )));
        }
        if opts.keep_best
            && best
                .as_ref()
                .is_none_or(|(_, b)| ev.objective < b.objective)
        {
            best = Some((state.clone(), ev.clone()));
        }
        if it % every == 0 {
            trace.push(TraceRow::new(it, &ev, opts.lr));
        }
        let mut g = problem.gradient_at(&state, &ev, Backend::Flat)?.flatten();
        if laplacian_vars {
            par::for_each_chunk_mut(&mut g[..n_state], nx, |_, row| {
                let z = poisson.solve(row);
                row.copy_from_slice(&z);
            });
        }
        x_old.copy_from_slice(&x);
        adam.step(&mut x, &g);
        if laplacian_vars {
            let mut k = 0;
            for u in &mut state.u {
                let n = u.as_slice().len();
                let (xs, olds) = (&x[k..k + n], &x_old[k..k + n]);
                par::for_each_chunk_mut(u.as_mut_slice(), nx, |j, row| {
                    let dw: Vec<f64> = (0..nx).map(|i| xs[j * nx + i] - olds[j * nx + i]).collect();
                    let du = poisson.solve(&dw);
                    row.iter_mut().zip(&du).for_each(|(a, b)| *a += b);
                });
                k += n;
            }
            problem.unflatten_tail(&x[n_state..], &mut state);
        } else {
            problem.unflatten(&x, &mut state);
        }
        ev = problem.evaluate(&state)?;
    }
    if !ev.objective.is_finite() {
        return Err(Error::Solver(
            "objective became non-finite in the last ADAM step".into(),
        ));
    }
    trace.push(TraceRow::new(opts.iters, &ev, opts.lr));
    if let Some((s, e)) = best.filter(|(_, b)| b.objective < ev.objective) {
        state = s;
        ev = e;
    }
    Ok(SolveOutcome {
        state,
        trace,
        stop: StopReason::MaxIters,
        iterations: opts.iters,
        final_eval: ev,
    })
}

/// `n` logarithmically spaced values from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.ln(), hi.ln());
            (0..n)
                .map(|k| (a + (b - a) * k as f64 / (n - 1) as f64).exp())
                .collect()
        }
    }
}

/// Evaluates `score` on every candidate (in parallel) and returns the index
/// of the smallest finite score together with all scores in input order.
pub fn grid_search<C, F>(candidates: &[C], score: F) -> (Option<usize>, Vec<Result<f64>>)
where
    C: Sync,
    F: Fn(&C) -> Result<f64> + Sync + Send,
{
    let scores = par::map_indexed(candidates.len(), |k| score(&candidates[k]));
    let best = scores
        .iter()
        .enumerate()
        .filter_map(|(k, s)| s.as_ref().ok().filter(|v| v.is_finite()).map(|v| (k, *v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k);
    (best, scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MeasurementSpec, Observation};
    use crate::neural::{NetParams, STANDARD_ARCH};
    use crate::surrogate::Polynomial;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_dirichlet(grid: &Grid, rng: &mut ChaCha8Rng, amp: f64) -> Field {
        let mut f = Field::from_fn(grid, |_, _| rng.gen_range(-amp..amp));
        f.zero_boundary();
        f
    }

    fn problem_with(
        grid: Grid,
        spec: MeasurementSpec,
        data: Vec<Field>,
        weights: ObjectiveWeights,
        est: bool,
    ) -> Problem {
        let params =
            vec![PdeParams::heat(&grid, grid.sample(|x| (PI * x).sin())).unwrap(); data.len()];
        let obs = ObservationSet::new(
            spec,
            data.into_iter().map(Observation::exact).collect(),
            &grid,
        )
        .unwrap();
        Problem::new(grid, params, obs, weights, est).unwrap()
    }

    #[test]
    fn zero_problem_has_zero_objective_and_gradient() {
        let grid = Grid::unit(11, 6).unwrap();
        let spec = MeasurementSpec::full();
        let mut pr = problem_with(
            grid,
            spec,
            vec![Field::zeros(&grid)],
            ObjectiveWeights::default(),
            true,
        );
        pr.params[0].phi = vec![0.0; grid.nx()];
        let s = pr.zero_state(NetParams::zeros(&STANDARD_ARCH).unwrap());
        assert_eq!(pr.objective(&s).unwrap(), 0.0);
        assert!(pr.gradient(&s, Backend::FunctionSpace).unwrap().is_zero());
        assert!(pr.gradient(&s, Backend::Flat).unwrap().is_zero());
    }

    #[test]
    fn single_snapshot_misfit_value() {
        let grid = Grid::unit(21, 10).unwrap();
        let spec = MeasurementSpec::snapshots(vec![10], 1.0, &grid).unwrap();
        let g = Field::from_vec(1, 21, grid.sample(|x| x * x)).unwrap();
        let mut pr = problem_with(
            grid,
            spec,
            vec![g.clone()],
            ObjectiveWeights::unregularised(),
            false,
        );
        pr.params[0].phi = vec![0.0; 21];
        let s = pr.zero_state(NetParams::zeros(&STANDARD_ARCH).unwrap());
        let expect = inner_l2(g.row(0), g.row(0), &grid);
        assert!((pr.objective(&s).unwrap() - expect).abs() <= 1e-15);
    }

    fn fd_check(backend: Backend, est: bool, spec: MeasurementSpec, seed: u64) {
        let grid = Grid::unit(21, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = spec.n_obs(&grid);
        let data: Vec<Field> = (0..2)
            .map(|_| {
                Field::from_vec(
                    n,
                    21,
                    (0..n * 21).map(|_| rng.gen_range(-1.0..1.0)).collect(),
                )
                .unwrap()
            })
            .collect();
        let w = ObjectiveWeights {
            beta_e: 0.7,
            beta_m: 1.3,
            r_u: 1e-2,
            r_psi: 0.1,
            r_theta: 0.05,
        };
        let pr = problem_with(grid, spec, data, w, est);
        let mut s = pr.zero_state(NetParams::random_uniform(&STANDARD_ARCH, 0.8, seed).unwrap());
        for u in &mut s.u {
            *u = random_dirichlet(&grid, &mut rng, 1.0);
        }
        for p in &mut s.psi {
            p.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        let g = pr.gradient(&s, backend).unwrap();
        let mut d = g.clone();
        for u in &mut d.u {
            *u = random_dirichlet(&grid, &mut rng, 1.0);
        }
        for p in &mut d.psi {
            p.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        d.theta
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let h = 1e-5;
        let mut sp = s.clone();
        sp.axpy(h, &d);
        let mut sm = s.clone();
        sm.axpy(-h, &d);
        let fd = (pr.objective(&sp).unwrap() - pr.objective(&sm).unwrap()) / (2.0 * h);
        let an = g.dot(&d, backend, &grid);
        assert!(
            (fd - an).abs() <= 1e-5 * an.abs(),
            "{backend:?}: fd {fd} vs {an}"
        );
    }

    #[test]
    fn gradients_match_finite_differences() {
        let grid = Grid::unit(21, 20).unwrap();
        for (seed, backend) in [(1, Backend::Flat), (2, Backend::FunctionSpace)] {
            fd_check(
                backend,
                true,
                MeasurementSpec::snapshots(vec![1, 10, 20], 10.0, &grid).unwrap(),
                seed,
            );
            fd_check(backend, false, MeasurementSpec::full(), seed + 10);
        }
    }

    #[test]
    fn gram_matches_v_norm() {
        let grid = Grid::unit(15, 8).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = random_dirichlet(&grid, &mut rng, 1.0);
        let g = state_gram(&u, &grid);
        let q: f64 = g
            .as_slice()
            .iter()
            .zip(u.as_slice())
            .map(|(a, b)| a * b)
            .sum();
        assert!((q - inner_vspace(&u, &u, &grid)).abs() <= 1e-10 * q);
    }

    #[test]
    fn scalar_adam_converges() {
        let mut adam = Adam::new(1, AdamOptions::default());
        let mut x = [0.0];
        for _ in 0..2000 {
            let g = [2.0 * (x[0] - 3.0)];
            adam.step(&mut x, &g);
        }
        assert!((x[0] - 3.0).abs() <= 1e-3, "{}", x[0]);
    }

    #[test]
    fn adam_with_zero_rate_is_identity() {
        let grid = Grid::unit(11, 6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data = vec![random_dirichlet(&grid, &mut rng, 1.0)];
        let pr = problem_with(
            grid,
            MeasurementSpec::full(),
            data,
            ObjectiveWeights::default(),
            true,
        );
        let mut s = pr.zero_state(Polynomial::zeros(4).unwrap());
        s.u[0] = random_dirichlet(&grid, &mut rng, 1.0);
        let opts = AdamOptions {
            lr: 0.0,
            iters: 20,
            ..AdamOptions::default()
        };
        let out = adam_run(&pr, s.clone(), &opts).unwrap();
        assert_eq!(out.state, s);
    }

    #[test]
    fn stationary_start_is_kept() {
        // exact linear model: u = t sin(πx), f(u) = −λ_h u, φ = sin(πx)
        let grid = Grid::unit(21, 20).unwrap();
        let lh = crate::grid::discrete_eigenvalue(1, &grid);
        let u = Field::from_fn_dirichlet(&grid, |t, x| t * (PI * x).sin());
        let pr = problem_with(
            grid,
            MeasurementSpec::full(),
            vec![u.clone()],
            ObjectiveWeights::unregularised(),
            false,
        );
        let mut poly = Polynomial::zeros(2).unwrap();
        poly.coeffs[1] = lh;
        let mut s = pr.zero_state(poly);
        s.u[0] = u;
        let ev = pr.evaluate(&s).unwrap();
        assert!(ev.objective <= 1e-18, "{}", ev.objective);
        let out = landweber_run(
            &pr,
            s.clone(),
            &StoppingRule {
                max_iters: 5,
                ..Default::default()
            },
        )
        .unwrap();
        let mut d = out.state.u[0].clone();
        d.axpy(-1.0, &s.u[0]);
        assert!(d.max_abs() <= 1e-12);
    }

    #[test]
    fn zero_data_zero_init_stays_zero() {
        let grid = Grid::unit(11, 6).unwrap();
        let mut pr = problem_with(
            grid,
            MeasurementSpec::full(),
            vec![Field::zeros(&grid)],
            ObjectiveWeights::default(),
            false,
        );
        pr.params[0].phi = vec![0.0; 11];
        let s = pr.zero_state(NetParams::zeros(&STANDARD_ARCH).unwrap());
        let out = landweber_run(
            &pr,
            s.clone(),
            &StoppingRule {
                max_iters: 10,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(out.state, s);
        assert_eq!(out.stop, StopReason::Stationary);
    }

    #[test]
    fn landweber_residual_is_nonincreasing() {
        let grid = Grid::unit(11, 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = vec![random_dirichlet(&grid, &mut rng, 0.5)];
        let pr = problem_with(
            grid,
            MeasurementSpec::full(),
            data.clone(),
            ObjectiveWeights::default(),
            true,
        );
        let mut s = pr.zero_state(NetParams::random_uniform(&STANDARD_ARCH, 0.5, 1).unwrap());
        s.u[0] = data[0].clone();
        let out = landweber_run(
            &pr,
            s,
            &StoppingRule {
                max_iters: 200,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(out
            .trace
            .windows(2)
            .all(|w| w[1].pde_residual_w <= w[0].pde_residual_w));
        assert!(out.trace.last().unwrap().pde_residual_w < out.trace[0].pde_residual_w);
    }

    #[test]
    fn trace_csv_header() {
        let mut buf = Vec::new();
        write_trace_csv(
            &[TraceRow {
                iter: 0,
                objective: 1.0,
                pde_residual_w: 2.0,
                data_misfit_y: 3.0,
                step_size: 0.5,
            }],
            &mut buf,
        )
        .unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with("iter,objective,pde_residual_W,data_misfit_Y,step_size\n0,"));
    }

    #[test]
    fn grid_search_picks_minimum() {
        let c = log_space(1e-4, 1.0, 5);
        assert!((c[2] - 1e-2).abs() < 1e-15);
        let (best, scores) = grid_search(&c, |&x| Ok((x.log10() + 1.0).powi(2)));
        assert_eq!(best, Some(3));
        assert_eq!(scores.len(), 5);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn objective_ignores_offsets_without_regularisation(seed in 0u64..10_000, c in -2.0f64..2.0) {
                let grid = Grid::unit(11, 8).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let data = random_dirichlet(&grid, &mut rng, 1.0);
                let weights = ObjectiveWeights { r_psi: 0.0, r_theta: 0.0, ..Default::default() };
                let pr = problem_with(grid, MeasurementSpec::full(), vec![data], weights, false);
                let net = NetParams::random_uniform(&STANDARD_ARCH, 0.6, seed).unwrap();
                let mut s = pr.zero_state(net.clone());
                s.u[0] = random_dirichlet(&grid, &mut rng, 1.0);
                let j0 = pr.objective(&s).unwrap();
                let mut shifted = pr.clone();
                shifted.params[0].phi.iter_mut().for_each(|v| *v -= c);
                s.net.shift_output(c);
                let j1 = shifted.objective(&s).unwrap();
                prop_assert!((j1 - j0).abs() <= 1e-12 * (1.0 + j0.abs()));
            }
        }
    }
}
