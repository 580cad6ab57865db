//! Adjoints of the linearised forward map with respect to the state space
//! `𝒱 = H¹(0,T; H²∩H¹₀)`, the source space `L²(Ω)` and the Euclidean
//! parameter space of the network.
//!
//! Everything is built on `A = (−Δ_h)⁻¹(−Δ_h + I)⁻¹`, which maps an `L²`
//! functional to its representer in `V = H²∩H¹₀`, and on the time kernel
//! `1 + min(t, s)`, which does the same for the time direction of `𝒱`.

use crate::error::{Error, Result};
use crate::grid::{div_a_grad_into, DirichletSolver, Field, Grid};
use crate::model::{MeasurementSpec, PdeParams};
use crate::par;
use crate::surrogate::Nonlinearity;

/// Cached factorisations of the two Dirichlet problems behind `A`.
#[derive(Clone, Debug)]
pub struct AuxOperator {
    grid: Grid,
    helmholtz: DirichletSolver,
    poisson: DirichletSolver,
}

impl AuxOperator {
    pub fn new(grid: &Grid) -> Self {
        Self {
            grid: *grid,
            helmholtz: DirichletSolver::helmholtz(grid),
            poisson: DirichletSolver::poisson(grid),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `A k`: boundary entries of `k` are ignored, the result is Dirichlet.
    pub fn apply(&self, k: &[f64]) -> Vec<f64> {
        let z1 = self.helmholtz.solve(k);
        self.poisson.solve(&z1)
    }

    /// `A` on every time row.
    pub fn apply_rows(&self, f: &Field) -> Field {
        let nx = f.cols();
        let mut out = Field::from_vec(f.rows(), nx, vec![0.0; f.rows() * nx]).expect("shape");
        par::for_each_chunk_mut(out.as_mut_slice(), nx, |j, row| {
            let z1 = self.helmholtz.solve(f.row(j));
            self.poisson.solve_into(&z1, row);
        });
        out
    }
}

/// `A k` with freshly built factorisations.
pub fn apply_a(k: &[f64], grid: &Grid) -> Vec<f64> {
    AuxOperator::new(grid).apply(k)
}

/// Discrete embedding constant `C_{𝒱→L∞} = max_{j,i} sqrt((1 + t_j)(A e_i)_i / dx)`:
/// the `𝒱`-norm of the point evaluation at `(t_j, x_i)`.
pub fn embedding_constant(grid: &Grid) -> f64 {
    let aux = AuxOperator::new(grid);
    let mut best: f64 = 0.0;
    let mut e = vec![0.0; grid.nx()];
    for i in 1..grid.nx() - 1 {
        e[i] = 1.0;
        best = best.max(aux.apply(&e)[i]);
        e[i] = 0.0;
    }
    ((1.0 + grid.t_end()) * best / grid.dx()).sqrt()
}

/// `u(t_j) = Σ_s c_s (1 + min(t_j, t_s)) g_s` for slices `g_s` attached to
/// the times `times[s]` (sorted ascending), evaluated with running sums.
fn kernel_sum(grid: &Grid, times: &[usize], coeffs: &[f64], slices: &Field) -> Field {
    let nx = grid.nx();
    let mut out = Field::zeros(grid);
    // tail[j] = Σ_{t_s ≥ t_j} c_s g_s ; head[j] = Σ_{t_s < t_j} c_s (1 + t_s) g_s
    let mut tail = vec![0.0; nx];
    for (s, &c) in coeffs.iter().enumerate() {
        for (a, b) in tail.iter_mut().zip(slices.row(s)) {
            *a += c * b;
        }
    }
    let mut head = vec![0.0; nx];
    let mut next = 0;
    for j in 0..grid.rows() {
        while next < times.len() && times[next] < j {
            let c = coeffs[next];
            let w = c * (1.0 + grid.t(times[next]));
            for i in 0..nx {
                let g = slices.get(next, i);
                tail[i] -= c * g;
                head[i] += w * g;
            }
            next += 1;
        }
        let tj = 1.0 + grid.t(j);
        for (i, o) in out.row_mut(j).iter_mut().enumerate() {
            *o = tj * tail[i] + head[i];
        }
    }
    out
}

/// Interior copy of `z` (boundary columns zeroed); residual-type fields are
/// only tested against interior nodes.
fn interior(z: &Field) -> Field {
    let mut z = z.clone();
    z.zero_boundary();
    z
}

fn check(z: &Field, grid: &Grid, what: &str) -> Result<()> {
    if !z.matches(grid) {
        return Err(Error::Shape(format!(
            "{what} is {}x{}, grid is {}x{}",
            z.rows(),
            z.cols(),
            grid.rows(),
            grid.nx()
        )));
    }
    Ok(())
}

/// `(·)(0)* h`: the constant-in-time extension of `h`.
pub fn adjoint_trace(h: &[f64], grid: &Grid) -> Field {
    Field::constant_in_time(grid, h)
}

/// Adjoint blocks evaluated at a fixed linearisation point `(p, u, θ)`.
pub struct AdjointContext<'a, N: Nonlinearity> {
    pub aux: &'a AuxOperator,
    pub params: &'a PdeParams,
    pub u: &'a Field,
    pub net: &'a N,
}

impl<'a, N: Nonlinearity> AdjointContext<'a, N> {
    pub fn new(
        aux: &'a AuxOperator,
        params: &'a PdeParams,
        u: &'a Field,
        net: &'a N,
    ) -> Result<Self> {
        params.validate(aux.grid())?;
        check(u, aux.grid(), "state")?;
        Ok(Self {
            aux,
            params,
            u,
            net,
        })
    }

    fn grid(&self) -> &Grid {
        &self.aux.grid
    }

    /// `M* z` for full observation, `M u = scale · u`, `𝒴` trapezoidal in
    /// time: `u^z(t) = scale · Σ_s w_s (1 + min(t, s)) A z(s)`.
    pub fn adjoint_m_full(&self, z: &Field, scale: f64) -> Result<Field> {
        let grid = self.grid();
        check(z, grid, "measurement residual")?;
        let az = self.aux.apply_rows(z);
        let coeffs: Vec<f64> = grid.time_weights().iter().map(|w| scale * w).collect();
        let times: Vec<usize> = (0..grid.rows()).collect();
        Ok(kernel_sum(grid, &times, &coeffs, &az))
    }

    /// `M_i* h` for `M_i u = scale · u(t_i)`.
    pub fn adjoint_m_snapshot(&self, h: &[f64], ti: usize, scale: f64) -> Result<Field> {
        let grid = self.grid();
        if ti > grid.nt() {
            return Err(Error::Contract(format!(
                "snapshot index {ti} beyond nt = {}",
                grid.nt()
            )));
        }
        if h.len() != grid.nx() {
            return Err(Error::Shape(format!("slice has {} entries", h.len())));
        }
        let ah = self.aux.apply(h);
        let tcap = grid.t(ti);
        let mut out = Field::zeros(grid);
        for j in 0..grid.rows() {
            let k = scale * (1.0 + grid.t(j).min(tcap));
            for (o, a) in out.row_mut(j).iter_mut().zip(&ah) {
                *o = k * a;
            }
        }
        Ok(out)
    }

    /// `M*` of a whole observation-shaped misfit.
    pub fn adjoint_measurement(&self, spec: &MeasurementSpec, misfit: &Field) -> Result<Field> {
        let grid = self.grid();
        let rows = spec.rows(grid);
        if misfit.rows() != rows.len() || misfit.cols() != grid.nx() {
            return Err(Error::Shape("misfit does not match measurement".into()));
        }
        let a = self.aux.apply_rows(misfit);
        let coeffs: Vec<f64> = spec
            .row_weights(grid)
            .iter()
            .map(|w| spec.scale * w)
            .collect();
        Ok(kernel_sum(grid, &rows, &coeffs, &a))
    }

    /// `K̃ z = −∇·(a∇z) + c z − 𝒩'(u) z` row by row.
    fn k_tilde(&self, z: &Field) -> Field {
        let grid = self.grid();
        let nx = grid.nx();
        let p = self.params;
        let mut out = Field::zeros(grid);
        par::for_each_chunk_mut(out.as_mut_slice(), nx, |j, row| {
            let zj = z.row(j);
            let uj = self.u.row(j);
            div_a_grad_into(&p.a, zj, grid, row);
            row[0] = 0.0;
            row[nx - 1] = 0.0;
            for i in 1..nx - 1 {
                let fp = self.net.derivative(uj[i]);
                row[i] = -row[i] + p.c[i] * zj[i] - fp * zj[i];
            }
        });
        out
    }

    /// `(d/dt − F'_u − 𝒩'_u)* z`: the kernel applied to `A K̃ z`, plus the
    /// running trapezoid integral of `A z`.
    pub fn adjoint_transport(&self, z: &Field) -> Result<Field> {
        let grid = self.grid();
        check(z, grid, "residual")?;
        let z = interior(z);
        let kz = self.k_tilde(&z);
        let akz = self.aux.apply_rows(&kz);
        let times: Vec<usize> = (0..grid.rows()).collect();
        let mut out = kernel_sum(grid, &times, &grid.time_weights(), &akz);
        let az = self.aux.apply_rows(&z);
        let half_dt = 0.5 * grid.dt();
        let mut acc = vec![0.0; grid.nx()];
        for j in 1..grid.rows() {
            for i in 0..grid.nx() {
                acc[i] += half_dt * (az.get(j - 1, i) + az.get(j, i));
            }
            for (o, a) in out.row_mut(j).iter_mut().zip(&acc) {
                *o += a;
            }
        }
        Ok(out)
    }

    /// `(−F'_c)* z = ∫₀ᵀ u z dt` in `L²(Ω)`.
    pub fn adjoint_param_c(&self, z: &Field) -> Result<Vec<f64>> {
        let grid = self.grid();
        check(z, grid, "residual")?;
        let z = interior(z);
        let w = grid.time_weights();
        let mut g = vec![0.0; grid.nx()];
        for j in 0..grid.rows() {
            for i in 0..grid.nx() {
                g[i] += w[j] * self.u.get(j, i) * z.get(j, i);
            }
        }
        Ok(g)
    }

    /// `(−F'_φ)* z = −∫₀ᵀ z dt` in `L²(Ω)`.
    pub fn adjoint_param_phi(&self, z: &Field) -> Result<Vec<f64>> {
        let grid = self.grid();
        check(z, grid, "residual")?;
        Ok(source_adjoint(&interior(z), grid))
    }

    /// `(−F'_a)* z`: the `V`-representer `A k` of the functional
    /// `da ↦ ∫₀ᵀ ∫_Ω da ∇u·∇z`, with face averages as in the conservative
    /// flux.
    pub fn adjoint_param_a(&self, z: &Field) -> Result<Vec<f64>> {
        let grid = self.grid();
        check(z, grid, "residual")?;
        let z = interior(z);
        let nx = grid.nx();
        let dx = grid.dx();
        let w = grid.time_weights();
        let mut g = vec![0.0; nx];
        for j in 0..grid.rows() {
            let (u, zz) = (self.u.row(j), z.row(j));
            for c in 0..nx - 1 {
                let e = (u[c + 1] - u[c]) * (zz[c + 1] - zz[c]) / dx;
                g[c] += 0.5 * w[j] * e;
                g[c + 1] += 0.5 * w[j] * e;
            }
        }
        let k: Vec<f64> = g.iter().map(|v| v / dx).collect();
        Ok(self.aux.apply(&k))
    }

    pub fn adjoint_param(&self, z: &Field, which: ParamKind) -> Result<Vec<f64>> {
        match which {
            ParamKind::C => self.adjoint_param_c(z),
            ParamKind::Phi => self.adjoint_param_phi(z),
            ParamKind::A => self.adjoint_param_a(z),
        }
    }

    /// `𝒩'_θ(u)* z = ∫₀ᵀ ∫_Ω z ∂𝒩(u)/∂θ` (the caller applies the minus
    /// sign of the residual block).
    pub fn adjoint_nn(&self, z: &Field) -> Result<Vec<f64>> {
        let grid = self.grid();
        check(z, grid, "residual")?;
        Ok(network_adjoint(self.net, self.u, z, grid))
    }
}

/// `−Σ_j w_j z_j` on interior nodes.
pub(crate) fn source_adjoint(z: &Field, grid: &Grid) -> Vec<f64> {
    let w = grid.time_weights();
    let nx = grid.nx();
    let mut g = vec![0.0; nx];
    for j in 0..grid.rows() {
        for i in 1..nx - 1 {
            g[i] -= w[j] * z.get(j, i);
        }
    }
    g
}

/// `Σ_j w_j Σ_{interior i} dx z_ji ∂𝒩(u_ji)/∂θ`; rows are reduced in index
/// order so the result does not depend on the thread count.
pub(crate) fn network_adjoint<N: Nonlinearity>(
    net: &N,
    u: &Field,
    z: &Field,
    grid: &Grid,
) -> Vec<f64> {
    let w = grid.time_weights();
    let dx = grid.dx();
    let nx = grid.nx();
    let np = net.n_params();
    let rows = par::map_indexed(grid.rows(), |j| {
        let mut g = vec![0.0; np];
        let (uj, zj) = (u.row(j), z.row(j));
        for i in 1..nx - 1 {
            if zj[i] != 0.0 {
                net.accumulate_param_gradient(uj[i], w[j] * dx * zj[i], &mut g);
            }
        }
        g
    });
    let mut out = vec![0.0; np];
    for g in rows {
        for (o, v) in out.iter_mut().zip(g) {
            *o += v;
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    C,
    Phi,
    A,
}

impl std::str::FromStr for ParamKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "c" => Ok(Self::C),
            "phi" => Ok(Self::Phi),
            "a" => Ok(Self::A),
            other => Err(Error::Contract(format!(
                "unknown parameter block `{other}`"
            ))),
        }
    }
}
