//! Uniform space–time grid on `(0, T) × (x_lo, x_hi)` with homogeneous
//! Dirichlet boundary, finite-difference operators, trapezoidal quadrature,
//! the discrete norms used by the solvers and tridiagonal Dirichlet solves.
//!
//! Space–time fields are stored row-major: row `j` is the time slice `t_j`,
//! column `i` the node `x_i`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    nx: usize,
    nt: usize,
    x_lo: f64,
    x_hi: f64,
    t_hi: f64,
    dx: f64,
    dt: f64,
}

impl Grid {
    pub fn new(nx: usize, nt: usize, x_lo: f64, x_hi: f64, t_hi: f64) -> Result<Self> {
        if nx < 3 {
            return Err(Error::Grid(format!("nx must be at least 3, got {nx}")));
        }
        if nt < 2 {
            return Err(Error::Grid(format!("nt must be at least 2, got {nt}")));
        }
        if !(x_hi > x_lo) || !x_lo.is_finite() || !x_hi.is_finite() {
            return Err(Error::Grid(format!(
                "empty spatial interval ({x_lo}, {x_hi})"
            )));
        }
        if !(t_hi > 0.0) || !t_hi.is_finite() {
            return Err(Error::Grid(format!(
                "final time must be positive, got {t_hi}"
            )));
        }
        Ok(Self {
            nx,
            nt,
            x_lo,
            x_hi,
            t_hi,
            dx: (x_hi - x_lo) / (nx - 1) as f64,
            dt: t_hi / nt as f64,
        })
    }

    /// Unit interval in space, `T = 0.1`.
    pub fn unit(nx: usize, nt: usize) -> Result<Self> {
        Self::new(nx, nt, 0.0, 1.0, 0.1)
    }

    /// 51 nodes in space, 50 time steps on `(0, 0.1) × (0, 1)`.
    pub fn standard() -> Self {
        Self::unit(51, 50).expect("standard grid is valid")
    }

    pub fn nx(&self) -> usize {
        self.nx
    }
    pub fn nt(&self) -> usize {
        self.nt
    }
    /// Number of time rows, `nt + 1`.
    pub fn rows(&self) -> usize {
        self.nt + 1
    }
    pub fn dx(&self) -> f64 {
        self.dx
    }
    pub fn dt(&self) -> f64 {
        self.dt
    }
    pub fn x_lo(&self) -> f64 {
        self.x_lo
    }
    pub fn x_hi(&self) -> f64 {
        self.x_hi
    }
    pub fn t_end(&self) -> f64 {
        self.t_hi
    }
    pub fn length(&self) -> f64 {
        self.x_hi - self.x_lo
    }
    pub fn x(&self, i: usize) -> f64 {
        self.x_lo + i as f64 * self.dx
    }
    pub fn t(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }
    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|i| self.x(i)).collect()
    }
    pub fn ts(&self) -> Vec<f64> {
        (0..self.rows()).map(|j| self.t(j)).collect()
    }

    /// Trapezoidal weights in space (`dx/2` at the ends).
    pub fn space_weights(&self) -> Vec<f64> {
        trapz_weights(self.nx, self.dx)
    }

    /// Trapezoidal weights in time (`dt/2` at the ends).
    pub fn time_weights(&self) -> Vec<f64> {
        trapz_weights(self.rows(), self.dt)
    }

    /// Samples `f(x)` at the nodes, forcing the Dirichlet boundary to zero.
    pub fn sample_dirichlet(&self, mut f: impl FnMut(f64) -> f64) -> Vec<f64> {
        let mut v: Vec<f64> = (0..self.nx).map(|i| f(self.x(i))).collect();
        v[0] = 0.0;
        v[self.nx - 1] = 0.0;
        v
    }

    pub fn sample(&self, mut f: impl FnMut(f64) -> f64) -> Vec<f64> {
        (0..self.nx).map(|i| f(self.x(i))).collect()
    }

    /// Refines the time axis by an integer factor, keeping the spatial grid.
    pub fn refine_time(&self, factor: usize) -> Self {
        Self {
            nt: self.nt * factor,
            dt: self.dt / factor as f64,
            ..*self
        }
    }
}

fn trapz_weights(n: usize, h: f64) -> Vec<f64> {
    let mut w = vec![h; n];
    w[0] = 0.5 * h;
    w[n - 1] = 0.5 * h;
    w
}

/// Real-valued space–time grid function, `(nt + 1) × nx`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            rows: grid.rows(),
            cols: grid.nx(),
            data: vec![0.0; grid.rows() * grid.nx()],
        }
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut out = Self::zeros(grid);
        for j in 0..grid.rows() {
            let t = grid.t(j);
            for (i, v) in out.row_mut(j).iter_mut().enumerate() {
                *v = f(t, grid.x(i));
            }
        }
        out
    }

    /// Same as [`Field::from_fn`] but with zero boundary columns.
    pub fn from_fn_dirichlet(grid: &Grid, f: impl FnMut(f64, f64) -> f64) -> Self {
        let mut out = Self::from_fn(grid, f);
        out.zero_boundary();
        out
    }

    /// Every row equal to `slice`.
    pub fn constant_in_time(grid: &Grid, slice: &[f64]) -> Self {
        assert_eq!(slice.len(), grid.nx(), "slice length must equal nx");
        let mut data = Vec::with_capacity(grid.rows() * grid.nx());
        for _ in 0..grid.rows() {
            data.extend_from_slice(slice);
        }
        Self {
            rows: grid.rows(),
            cols: grid.nx(),
            data,
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.is_empty() || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Shape("ragged or empty rows".into()));
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "expected {rows}x{cols} = {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn matches(&self, grid: &Grid) -> bool {
        self.rows == grid.rows() && self.cols == grid.nx()
    }
    pub fn row(&self, j: usize) -> &[f64] {
        &self.data[j * self.cols..(j + 1) * self.cols]
    }
    pub fn row_mut(&mut self, j: usize) -> &mut [f64] {
        &mut self.data[j * self.cols..(j + 1) * self.cols]
    }
    pub fn get(&self, j: usize, i: usize) -> f64 {
        self.data[j * self.cols + i]
    }
    pub fn set(&mut self, j: usize, i: usize, v: f64) {
        self.data[j * self.cols + i] = v;
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.cols)
    }

    pub fn zero_boundary(&mut self) {
        let c = self.cols;
        for row in self.data.chunks_mut(c) {
            row[0] = 0.0;
            row[c - 1] = 0.0;
        }
    }

    pub fn is_dirichlet(&self) -> bool {
        self.row_iter()
            .all(|r| r[0] == 0.0 && r[self.cols - 1] == 0.0)
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Field) {
        assert_eq!(self.data.len(), other.data.len(), "field shape mismatch");
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn scale(&mut self, a: f64) {
        self.data.iter_mut().for_each(|x| *x *= a);
    }

    pub fn scaled(&self, a: f64) -> Field {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

fn check_slice(v: &[f64], grid: &Grid) {
    assert_eq!(
        v.len(),
        grid.nx(),
        "slice length {} != nx {}",
        v.len(),
        grid.nx()
    );
}

fn check_field(u: &Field, grid: &Grid) {
    assert!(
        u.matches(grid),
        "field shape {}x{} does not match grid {}x{}",
        u.rows(),
        u.cols(),
        grid.rows(),
        grid.nx()
    );
}

/// Three-point Laplacian; boundary entries are zero.
pub fn laplacian(v: &[f64], grid: &Grid) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    laplacian_into(v, grid, &mut out);
    out
}

pub fn laplacian_into(v: &[f64], grid: &Grid, out: &mut [f64]) {
    check_slice(v, grid);
    let n = v.len();
    let inv = 1.0 / (grid.dx() * grid.dx());
    out[0] = 0.0;
    out[n - 1] = 0.0;
    for i in 1..n - 1 {
        out[i] = (v[i - 1] - 2.0 * v[i] + v[i + 1]) * inv;
    }
}

/// Forward differences on the `nx - 1` cells.
pub fn cell_gradient(v: &[f64], grid: &Grid) -> Vec<f64> {
    check_slice(v, grid);
    let inv = 1.0 / grid.dx();
    v.windows(2).map(|w| (w[1] - w[0]) * inv).collect()
}

/// Conservative `∇·(a∇v)` with face coefficients `(a_i + a_{i+1}) / 2`;
/// boundary entries are zero. Reduces to [`laplacian`] for `a ≡ 1`.
pub fn div_a_grad(a: &[f64], v: &[f64], grid: &Grid) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    div_a_grad_into(a, v, grid, &mut out);
    out
}

pub fn div_a_grad_into(a: &[f64], v: &[f64], grid: &Grid, out: &mut [f64]) {
    check_slice(v, grid);
    check_slice(a, grid);
    let n = v.len();
    let inv = 1.0 / (grid.dx() * grid.dx());
    out[0] = 0.0;
    out[n - 1] = 0.0;
    for i in 1..n - 1 {
        let right = 0.5 * (a[i] + a[i + 1]) * (v[i + 1] - v[i]);
        let left = 0.5 * (a[i - 1] + a[i]) * (v[i] - v[i - 1]);
        out[i] = (right - left) * inv;
    }
}

/// Central differences in time at interior rows, two-point one-sided
/// differences at `t = 0` and `t = T`.
///
/// With trapezoidal time weights this is the summation-by-parts partner of
/// the forward-difference time derivative in the 𝒱 inner product:
/// `Σ_j w_j ⟨z_j, (D v)_j⟩ = Σ_j ⟨(z_j + z_{j+1})/2, v_{j+1} - v_j⟩`.
pub fn time_derivative(u: &Field, grid: &Grid) -> Field {
    check_field(u, grid);
    let nt = grid.nt();
    let dt = grid.dt();
    let mut out = Field::zeros(grid);
    for j in 0..=nt {
        let (lo, hi, h) = if j == 0 {
            (0, 1, dt)
        } else if j == nt {
            (nt - 1, nt, dt)
        } else {
            (j - 1, j + 1, 2.0 * dt)
        };
        let (a, b) = (u.row(lo), u.row(hi));
        for (o, (x, y)) in out.row_mut(j).iter_mut().zip(a.iter().zip(b)) {
            *o = (y - x) / h;
        }
    }
    out
}

pub fn trapz_time(values: &[f64], grid: &Grid) -> f64 {
    assert_eq!(values.len(), grid.rows(), "expected nt + 1 values");
    trapz(values, grid.dt())
}

pub fn trapz_space(values: &[f64], grid: &Grid) -> f64 {
    check_slice(values, grid);
    trapz(values, grid.dx())
}

/// Composite trapezoid rule on a uniform grid with spacing `h`.
pub fn trapz(values: &[f64], h: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let inner: f64 = values[1..n - 1].iter().sum();
    h * (inner + 0.5 * (values[0] + values[n - 1]))
}

/// Trapezoidal `L²(Ω)` inner product.
pub fn inner_l2(a: &[f64], b: &[f64], grid: &Grid) -> f64 {
    check_slice(a, grid);
    check_slice(b, grid);
    let n = a.len();
    let inner: f64 = (1..n - 1).map(|i| a[i] * b[i]).sum();
    grid.dx() * (inner + 0.5 * (a[0] * b[0] + a[n - 1] * b[n - 1]))
}

pub fn norm_l2(a: &[f64], grid: &Grid) -> f64 {
    inner_l2(a, a, grid).sqrt()
}

/// `H²∩H¹₀` inner product `(Δ_h p, Δ_h q) + (∇_h p, ∇_h q)`; the gradient
/// term uses cell-wise forward differences so that
/// `(p, q)_V = (p, -Δ_h q + ...)` holds exactly by summation by parts.
pub fn inner_v(p: &[f64], q: &[f64], grid: &Grid) -> f64 {
    let lp = laplacian(p, grid);
    let lq = laplacian(q, grid);
    let gp = cell_gradient(p, grid);
    let gq = cell_gradient(q, grid);
    let grad: f64 = gp.iter().zip(&gq).map(|(a, b)| a * b).sum::<f64>() * grid.dx();
    inner_l2(&lp, &lq, grid) + grad
}

pub fn norm_v(p: &[f64], grid: &Grid) -> f64 {
    inner_v(p, p, grid).max(0.0).sqrt()
}

/// `𝒲 = L²(0,T; L²(Ω))` inner product, trapezoid in both variables.
pub fn inner_w(r: &Field, s: &Field, grid: &Grid) -> f64 {
    check_field(r, grid);
    check_field(s, grid);
    let wt = grid.time_weights();
    (0..grid.rows())
        .map(|j| wt[j] * inner_l2(r.row(j), s.row(j), grid))
        .sum()
}

pub fn norm_w(r: &Field, grid: &Grid) -> f64 {
    inner_w(r, r, grid).max(0.0).sqrt()
}

/// State-space inner product `∫₀ᵀ (u̇, v̇)_V dt + (u(0), v(0))_V` with
/// `u̇` taken as the forward difference on each time cell.
pub fn inner_vspace(u: &Field, v: &Field, grid: &Grid) -> f64 {
    check_field(u, grid);
    check_field(v, grid);
    let dt = grid.dt();
    let nx = grid.nx();
    let mut du = vec![0.0; nx];
    let mut dv = vec![0.0; nx];
    let mut acc = inner_v(u.row(0), v.row(0), grid);
    for j in 0..grid.nt() {
        for i in 0..nx {
            du[i] = u.get(j + 1, i) - u.get(j, i);
            dv[i] = v.get(j + 1, i) - v.get(j, i);
        }
        acc += inner_v(&du, &dv, grid) / dt;
    }
    acc
}

pub fn norm_v_state(u: &Field, grid: &Grid) -> f64 {
    inner_vspace(u, u, grid).max(0.0).sqrt()
}

/// Factorised tridiagonal system `(-α Δ_h + s I) z = rhs` on the interior
/// nodes with `z = 0` on the boundary (Thomas algorithm).
#[derive(Clone, Debug)]
pub struct DirichletSolver {
    nx: usize,
    off: f64,
    /// Modified super-diagonal from the forward sweep.
    c_prime: Vec<f64>,
    /// Reciprocal pivots from the forward sweep.
    inv_pivot: Vec<f64>,
}

impl DirichletSolver {
    pub fn new(grid: &Grid, alpha: f64, shift: f64) -> Result<Self> {
        let n = grid.nx() - 2;
        let h2 = grid.dx() * grid.dx();
        let diag = 2.0 * alpha / h2 + shift;
        let off = -alpha / h2;
        let mut c_prime = vec![0.0; n];
        let mut inv_pivot = vec![0.0; n];
        let mut prev_c = 0.0;
        for k in 0..n {
            let pivot = diag - off * prev_c;
            if !pivot.is_finite() || pivot.abs() < f64::MIN_POSITIVE {
                return Err(Error::Contract(format!(
                    "tridiagonal breakdown at row {k} (pivot {pivot:e})"
                )));
            }
            inv_pivot[k] = 1.0 / pivot;
            c_prime[k] = off / pivot;
            prev_c = c_prime[k];
        }
        Ok(Self {
            nx: grid.nx(),
            off,
            c_prime,
            inv_pivot,
        })
    }

    /// `-Δ_h + I`
    pub fn helmholtz(grid: &Grid) -> Self {
        Self::new(grid, 1.0, 1.0).expect("Helmholtz operator is SPD")
    }

    /// `-Δ_h`
    pub fn poisson(grid: &Grid) -> Self {
        Self::new(grid, 1.0, 0.0).expect("Dirichlet Laplacian is SPD")
    }

    /// Solves for the interior; `rhs` boundary entries are ignored.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.nx];
        self.solve_into(rhs, &mut z);
        z
    }

    pub fn solve_into(&self, rhs: &[f64], z: &mut [f64]) {
        assert_eq!(rhs.len(), self.nx, "rhs length must equal nx");
        assert_eq!(z.len(), self.nx, "output length must equal nx");
        let n = self.nx - 2;
        z[0] = 0.0;
        z[self.nx - 1] = 0.0;
        let mut prev = 0.0;
        for k in 0..n {
            let d = (rhs[k + 1] - self.off * prev) * self.inv_pivot[k];
            z[k + 1] = d;
            prev = d;
        }
        for k in (0..n.saturating_sub(1)).rev() {
            z[k + 1] -= self.c_prime[k] * z[k + 2];
        }
    }
}

/// `z` with `-Δ_h z + z = rhs`, `z = 0` on the boundary.
pub fn solve_helmholtz_dirichlet(rhs: &[f64], grid: &Grid) -> Vec<f64> {
    check_slice(rhs, grid);
    DirichletSolver::helmholtz(grid).solve(rhs)
}

/// `z` with `-Δ_h z = rhs`, `z = 0` on the boundary.
pub fn solve_poisson_dirichlet(rhs: &[f64], grid: &Grid) -> Vec<f64> {
    check_slice(rhs, grid);
    DirichletSolver::poisson(grid).solve(rhs)
}

/// Eigenvalue of `-Δ_h` for `sin(kπx)` on the unit interval.
pub fn discrete_eigenvalue(k: usize, grid: &Grid) -> f64 {
    let dx = grid.dx();
    let theta = k as f64 * std::f64::consts::PI * dx / grid.length();
    (2.0 - 2.0 * theta.cos()) / (dx * dx)
}
