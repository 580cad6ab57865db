//! PDE residual `e = u̇ − ∇·(a∇u) + c u − φ − 𝒩(u)`, measurement operators
//! and the directional derivative of the all-at-once forward map.
//!
//! The residual is evaluated on interior nodes only; boundary columns are
//! identically zero because the state is Dirichlet.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{div_a_grad_into, time_derivative, Field, Grid};
use crate::par;
use crate::surrogate::Nonlinearity;

/// Source `φ`, reaction coefficient `c` and diffusion coefficient `a`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdeParams {
    pub phi: Vec<f64>,
    pub c: Vec<f64>,
    pub a: Vec<f64>,
}

impl PdeParams {
    /// `a ≡ 1`, `c ≡ 0` and the given source.
    pub fn heat(grid: &Grid, phi: Vec<f64>) -> Result<Self> {
        let p = Self {
            phi,
            c: vec![0.0; grid.nx()],
            a: vec![1.0; grid.nx()],
        };
        p.validate(grid)?;
        Ok(p)
    }

    pub fn zero_source(grid: &Grid) -> Self {
        Self::heat(grid, vec![0.0; grid.nx()]).expect("zero source is valid")
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        for (name, v) in [("phi", &self.phi), ("c", &self.c), ("a", &self.a)] {
            if v.len() != grid.nx() {
                return Err(Error::Shape(format!(
                    "{name} has {} entries, grid has {}",
                    v.len(),
                    grid.nx()
                )));
            }
            if !v.iter().all(|x| x.is_finite()) {
                return Err(Error::Contract(format!("{name} has non-finite entries")));
            }
        }
        if let Some(&amin) = self.a.iter().min_by(|x, y| x.total_cmp(y)) {
            if amin <= 0.0 {
                return Err(Error::Contract(format!(
                    "diffusion coefficient must be positive, min is {amin}"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum MeasurementMode {
    /// Every time row is observed; `𝒴` is trapezoidal in time.
    Full,
    /// Rows at the listed time indices; `𝒴` is the sum of `L²` norms.
    Snapshots { indices: Vec<usize> },
}

/// `M u = scale · (u(t_m))_m`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSpec {
    #[serde(flatten)]
    pub mode: MeasurementMode,
    pub scale: f64,
}

impl MeasurementSpec {
    pub fn full() -> Self {
        Self {
            mode: MeasurementMode::Full,
            scale: 1.0,
        }
    }

    pub fn snapshots(indices: Vec<usize>, scale: f64, grid: &Grid) -> Result<Self> {
        let s = Self {
            mode: MeasurementMode::Snapshots { indices },
            scale,
        };
        s.validate(grid)?;
        Ok(s)
    }

    /// `count` indices spread evenly over `(0, nt]`, always including `nt`
    /// and `1`: 3 of 50 gives `[1, 25, 50]`, 6 gives `[1, 10, 20, ..., 50]`.
    pub fn evenly_spaced(count: usize, grid: &Grid) -> Result<Vec<usize>> {
        let nt = grid.nt();
        if count == 0 || count > nt {
            return Err(Error::Config(format!(
                "cannot place {count} snapshots on {nt} time steps"
            )));
        }
        if count == 1 {
            return Ok(vec![nt]);
        }
        let step = nt as f64 / (count - 1) as f64;
        let mut idx: Vec<usize> = (0..count)
            .map(|m| ((m as f64 * step).round() as usize).clamp(1, nt))
            .collect();
        idx.dedup();
        if idx.len() != count {
            // dense requests collapse near t = 0; fall back to consecutive indices
            idx = (nt + 1 - count..=nt).collect();
        }
        Ok(idx)
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(Error::Config(format!(
                "measurement scale must be positive, got {}",
                self.scale
            )));
        }
        if let MeasurementMode::Snapshots { indices } = &self.mode {
            if indices.is_empty() {
                return Err(Error::Config("no snapshot indices".into()));
            }
            if indices.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config(format!(
                    "snapshot indices must increase: {indices:?}"
                )));
            }
            if indices[0] == 0 || *indices.last().unwrap() > grid.nt() {
                return Err(Error::Config(format!(
                    "snapshot indices must lie in 1..={}: {indices:?}",
                    grid.nt()
                )));
            }
        }
        Ok(())
    }

    /// Observed time rows.
    pub fn rows(&self, grid: &Grid) -> Vec<usize> {
        match &self.mode {
            MeasurementMode::Full => (0..grid.rows()).collect(),
            MeasurementMode::Snapshots { indices } => indices.clone(),
        }
    }

    /// Quadrature weight of each observed row in the `𝒴` inner product.
    pub fn row_weights(&self, grid: &Grid) -> Vec<f64> {
        match &self.mode {
            MeasurementMode::Full => grid.time_weights(),
            MeasurementMode::Snapshots { indices } => vec![1.0; indices.len()],
        }
    }

    pub fn n_obs(&self, grid: &Grid) -> usize {
        self.rows(grid).len()
    }

    /// `M u`, one row per observation.
    pub fn measure(&self, u: &Field, grid: &Grid) -> Field {
        let rows = self.rows(grid);
        let mut data = Vec::with_capacity(rows.len() * grid.nx());
        for &j in &rows {
            data.extend(u.row(j).iter().map(|v| self.scale * v));
        }
        Field::from_vec(rows.len(), grid.nx(), data).expect("measurement shape")
    }

    /// `‖d‖²_𝒴` for an observation-shaped field.
    pub fn norm_sq(&self, d: &Field, grid: &Grid) -> f64 {
        let w = self.row_weights(grid);
        (0..d.rows())
            .map(|m| w[m] * crate::grid::inner_l2(d.row(m), d.row(m), grid))
            .sum()
    }
}

/// Data for one sample: observations and the noise that was added to them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    /// `‖noise‖_𝒴` of the perturbation that produced `values`.
    pub noise_norm: f64,
    pub seed: u64,
}

impl Observation {
    pub fn exact(data: Field) -> Self {
        Self {
            rows: data.rows(),
            cols: data.cols(),
            values: data.into_vec(),
            noise_norm: 0.0,
            seed: 0,
        }
    }

    pub fn field(&self) -> Field {
        Field::from_vec(self.rows, self.cols, self.values.clone()).expect("observation shape")
    }
}

/// `y^k = M u^k`, `k = 1..K`, all with the same measurement operator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationSet {
    pub spec: MeasurementSpec,
    pub samples: Vec<Observation>,
}

impl ObservationSet {
    pub fn new(spec: MeasurementSpec, samples: Vec<Observation>, grid: &Grid) -> Result<Self> {
        spec.validate(grid)?;
        let n = spec.n_obs(grid);
        for (k, s) in samples.iter().enumerate() {
            if s.rows != n || s.cols != grid.nx() || s.values.len() != n * grid.nx() {
                return Err(Error::Shape(format!(
                    "sample {k} has shape {}x{}, expected {n}x{}",
                    s.rows,
                    s.cols,
                    grid.nx()
                )));
            }
        }
        if samples.is_empty() {
            return Err(Error::Config("observation set is empty".into()));
        }
        Ok(Self { spec, samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Combined noise level `sqrt(Σ_k ‖noise_k‖²_𝒴)`.
    pub fn delta(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.noise_norm * s.noise_norm)
            .sum::<f64>()
            .sqrt()
    }
}

fn check_state(u: &Field, grid: &Grid) -> Result<()> {
    if !u.matches(grid) {
        return Err(Error::Shape(format!(
            "state is {}x{}, grid is {}x{}",
            u.rows(),
            u.cols(),
            grid.rows(),
            grid.nx()
        )));
    }
    Ok(())
}

/// Residual of the PDE with source `φ + extra` where `extra` is an optional
/// additional source slice (used for the estimated part `ψ`).
pub fn pde_residual_with_source<N: Nonlinearity>(
    p: &PdeParams,
    extra: Option<&[f64]>,
    u: &Field,
    net: &N,
    grid: &Grid,
) -> Result<Field> {
    p.validate(grid)?;
    check_state(u, grid)?;
    let nx = grid.nx();
    let mut r = time_derivative(u, grid);
    let uniform_a = p.a.iter().all(|&a| a == 1.0);
    par::for_each_chunk_mut(r.as_mut_slice(), nx, |j, row| {
        let uj = u.row(j);
        let mut diff = vec![0.0; nx];
        if uniform_a {
            crate::grid::laplacian_into(uj, grid, &mut diff);
        } else {
            div_a_grad_into(&p.a, uj, grid, &mut diff);
        }
        row[0] = 0.0;
        row[nx - 1] = 0.0;
        for i in 1..nx - 1 {
            let src = p.phi[i] + extra.map_or(0.0, |e| e[i]);
            row[i] += -diff[i] + p.c[i] * uj[i] - src - net.eval(uj[i]);
        }
    });
    Ok(r)
}

pub fn pde_residual<N: Nonlinearity>(
    p: &PdeParams,
    u: &Field,
    net: &N,
    grid: &Grid,
) -> Result<Field> {
    pde_residual_with_source(p, None, u, net, grid)
}

/// `𝒢(u, θ) = (e(u, θ), M u)`.
pub fn forward_g<N: Nonlinearity>(
    p: &PdeParams,
    u: &Field,
    net: &N,
    spec: &MeasurementSpec,
    grid: &Grid,
) -> Result<(Field, Field)> {
    let r = pde_residual(p, u, net, grid)?;
    Ok((r, spec.measure(u, grid)))
}

/// Perturbation of every argument of the forward map.
#[derive(Clone, Debug, PartialEq)]
pub struct Direction {
    pub du: Field,
    pub dphi: Vec<f64>,
    pub dc: Vec<f64>,
    pub da: Vec<f64>,
    pub dtheta: Vec<f64>,
}

impl Direction {
    pub fn zeros(grid: &Grid, n_params: usize) -> Self {
        Self {
            du: Field::zeros(grid),
            dphi: vec![0.0; grid.nx()],
            dc: vec![0.0; grid.nx()],
            da: vec![0.0; grid.nx()],
            dtheta: vec![0.0; n_params],
        }
    }
}

/// Gateaux derivative of `𝒢` at `(p, u, θ)` in the direction `d`.
pub fn jvp<N: Nonlinearity>(
    p: &PdeParams,
    u: &Field,
    net: &N,
    d: &Direction,
    spec: &MeasurementSpec,
    grid: &Grid,
) -> Result<(Field, Field)> {
    p.validate(grid)?;
    check_state(u, grid)?;
    check_state(&d.du, grid)?;
    if d.dtheta.len() != net.n_params() {
        return Err(Error::Shape(format!(
            "dtheta has {} entries, network has {}",
            d.dtheta.len(),
            net.n_params()
        )));
    }
    let nx = grid.nx();
    let mut r = time_derivative(&d.du, grid);
    let has_dtheta = d.dtheta.iter().any(|&v| v != 0.0);
    par::for_each_chunk_mut(r.as_mut_slice(), nx, |j, row| {
        let uj = u.row(j);
        let duj = d.du.row(j);
        let mut diff = vec![0.0; nx];
        let mut diff_a = vec![0.0; nx];
        div_a_grad_into(&p.a, duj, grid, &mut diff);
        div_a_grad_into(&d.da, uj, grid, &mut diff_a);
        let mut g = vec![0.0; net.n_params()];
        row[0] = 0.0;
        row[nx - 1] = 0.0;
        for i in 1..nx - 1 {
            let (_, fprime) = net.eval_with_derivative(uj[i]);
            let mut v = -diff[i] - diff_a[i] + p.c[i] * duj[i] + d.dc[i] * uj[i]
                - d.dphi[i]
                - fprime * duj[i];
            if has_dtheta {
                g.iter_mut().for_each(|x| *x = 0.0);
                net.accumulate_param_gradient(uj[i], 1.0, &mut g);
                v -= g.iter().zip(&d.dtheta).map(|(a, b)| a * b).sum::<f64>();
            }
            row[i] += v;
        }
    });
    Ok((r, spec.measure(&d.du, grid)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{discrete_eigenvalue, norm_w};
    use crate::neural::{NetParams, STANDARD_ARCH};
    use crate::surrogate::Polynomial;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_dirichlet(grid: &Grid, rng: &mut ChaCha8Rng) -> Field {
        let mut f = Field::from_fn(grid, |_, _| rng.gen_range(-1.0..1.0));
        f.zero_boundary();
        f
    }

    #[test]
    fn zero_everything_gives_zero_residual() {
        let grid = Grid::unit(21, 20).unwrap();
        let p = PdeParams::zero_source(&grid);
        let net = NetParams::zeros(&STANDARD_ARCH).unwrap();
        let (r, m) = forward_g(
            &p,
            &Field::zeros(&grid),
            &net,
            &MeasurementSpec::full(),
            &grid,
        )
        .unwrap();
        assert_eq!(r.max_abs(), 0.0);
        assert_eq!(m.max_abs(), 0.0);
    }

    #[test]
    fn stationary_sine_manufactured_solution() {
        let grid = Grid::standard();
        let lh = discrete_eigenvalue(1, &grid);
        let phi = grid.sample_dirichlet(|x| lh * (PI * x).sin());
        let p = PdeParams::heat(&grid, phi).unwrap();
        let u = Field::from_fn_dirichlet(&grid, |_, x| (PI * x).sin());
        let net = NetParams::zeros(&STANDARD_ARCH).unwrap();
        let r = pde_residual(&p, &u, &net, &grid).unwrap();
        assert!(norm_w(&r, &grid) <= 1e-12);
    }

    #[test]
    fn linear_in_time_manufactured_solution_with_network() {
        let grid = Grid::unit(31, 20).unwrap();
        let lh = discrete_eigenvalue(1, &grid);
        let net = NetParams::random_uniform(&STANDARD_ARCH, 0.5, 4).unwrap();
        // source absorbs the time dependence, so use c to carry it: u = t s
        // solves u̇ − Δu = s + λ t s; pick φ = s and c = −λ, f ≡ N − N
        let s = grid.sample_dirichlet(|x| (PI * x).sin());
        let u = Field::from_fn_dirichlet(&grid, |t, x| t * (PI * x).sin());
        let mut p = PdeParams::heat(&grid, s).unwrap();
        p.c = vec![-lh; grid.nx()];
        let r = pde_residual(&p, &u, &NetParams::zeros(&STANDARD_ARCH).unwrap(), &grid).unwrap();
        assert!(norm_w(&r, &grid) <= 1e-10);
        // the network term enters additively
        let rn = pde_residual(&p, &u, &net, &grid).unwrap();
        for j in 0..grid.rows() {
            for i in 1..grid.nx() - 1 {
                let expect = r.get(j, i) - net.forward(u.get(j, i));
                assert!((rn.get(j, i) - expect).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn positivity_of_diffusion_is_enforced() {
        let grid = Grid::unit(11, 4).unwrap();
        let mut p = PdeParams::zero_source(&grid);
        p.a[3] = 0.0;
        let net = Polynomial::zeros(1).unwrap();
        assert!(pde_residual(&p, &Field::zeros(&grid), &net, &grid).is_err());
    }

    #[test]
    fn snapshot_measurement_scales_rows() {
        let grid = Grid::standard();
        let spec = MeasurementSpec::snapshots(vec![1, 25, 50], 10.0, &grid).unwrap();
        let u = Field::from_fn_dirichlet(&grid, |t, x| t + x);
        let m = spec.measure(&u, &grid);
        assert_eq!(m.rows(), 3);
        for (k, &j) in [1usize, 25, 50].iter().enumerate() {
            for i in 0..grid.nx() {
                assert_eq!(m.get(k, i), 10.0 * u.get(j, i));
            }
        }
        assert_eq!(MeasurementSpec::full().measure(&u, &grid), u);
    }

    #[test]
    fn evenly_spaced_snapshots() {
        let grid = Grid::standard();
        assert_eq!(
            MeasurementSpec::evenly_spaced(3, &grid).unwrap(),
            vec![1, 25, 50]
        );
        assert_eq!(
            MeasurementSpec::evenly_spaced(6, &grid).unwrap(),
            vec![1, 10, 20, 30, 40, 50]
        );
        assert_eq!(
            MeasurementSpec::evenly_spaced(50, &grid).unwrap(),
            (1..=50).collect::<Vec<_>>()
        );
        assert!(MeasurementSpec::evenly_spaced(51, &grid).is_err());
        assert!(MeasurementSpec::snapshots(vec![0, 3], 1.0, &grid).is_err());
        assert!(MeasurementSpec::snapshots(vec![3, 3], 1.0, &grid).is_err());
    }

    #[test]
    fn residual_is_affine_for_linear_model() {
        let grid = Grid::unit(21, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = NetParams::zeros(&STANDARD_ARCH).unwrap();
        let u1 = random_dirichlet(&grid, &mut rng);
        let u2 = random_dirichlet(&grid, &mut rng);
        let p1 = PdeParams::heat(&grid, grid.sample(|x| x.cos())).unwrap();
        let p2 = PdeParams::heat(&grid, grid.sample(|x| x * x)).unwrap();
        let mut u12 = u1.clone();
        u12.axpy(1.0, &u2);
        let p12 = PdeParams::heat(
            &grid,
            p1.phi.iter().zip(&p2.phi).map(|(a, b)| a + b).collect(),
        )
        .unwrap();
        let r1 = pde_residual(&p1, &u1, &net, &grid).unwrap();
        let r2 = pde_residual(&p2, &u2, &net, &grid).unwrap();
        let r12 = pde_residual(&p12, &u12, &net, &grid).unwrap();
        let r0 = pde_residual(
            &PdeParams::zero_source(&grid),
            &Field::zeros(&grid),
            &net,
            &grid,
        )
        .unwrap();
        for k in 0..r1.as_slice().len() {
            let lhs = r12.as_slice()[k];
            let rhs = r1.as_slice()[k] + r2.as_slice()[k] - r0.as_slice()[k];
            assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }
    }

    #[test]
    fn jvp_on_affine_network_direction() {
        let grid = Grid::unit(11, 5).unwrap();
        let net = NetParams::random_uniform(&[1, 1], 1.0, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let u = random_dirichlet(&grid, &mut rng);
        let mut d = Direction::zeros(&grid, 2);
        d.dtheta = vec![0.3, -0.7];
        let p = PdeParams::zero_source(&grid);
        let (dr, dm) = jvp(&p, &u, &net, &d, &MeasurementSpec::full(), &grid).unwrap();
        assert_eq!(dm.max_abs(), 0.0);
        for j in 0..grid.rows() {
            for i in 1..grid.nx() - 1 {
                let expect = -(0.3 * u.get(j, i) - 0.7);
                assert!((dr.get(j, i) - expect).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn jvp_matches_central_differences() {
        let grid = Grid::unit(21, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = NetParams::random_uniform(&STANDARD_ARCH, 0.8, 3).unwrap();
        let u = random_dirichlet(&grid, &mut rng);
        let mut p = PdeParams::heat(&grid, grid.sample(|x| x.sin())).unwrap();
        p.c = grid.sample(|x| 1.0 + x);
        p.a = grid.sample(|x| 1.5 + 0.5 * (3.0 * x).sin());
        let d = Direction {
            du: random_dirichlet(&grid, &mut rng),
            dphi: grid.sample(|_| rng.gen_range(-1.0..1.0)),
            dc: grid.sample(|_| rng.gen_range(-1.0..1.0)),
            da: grid.sample_dirichlet(|_| rng.gen_range(-0.1..0.1)),
            dtheta: (0..net.n_params())
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect(),
        };
        let spec = MeasurementSpec::snapshots(vec![5, 20], 10.0, &grid).unwrap();
        let (jr, jm) = jvp(&p, &u, &net, &d, &spec, &grid).unwrap();
        let h = 1e-5;
        let eval = |s: f64| {
            let mut pp = p.clone();
            for i in 0..grid.nx() {
                pp.phi[i] += s * d.dphi[i];
                pp.c[i] += s * d.dc[i];
                pp.a[i] += s * d.da[i];
            }
            let mut uu = u.clone();
            uu.axpy(s, &d.du);
            let mut nn = net.clone();
            let th: Vec<f64> = net
                .params()
                .iter()
                .zip(&d.dtheta)
                .map(|(a, b)| a + s * b)
                .collect();
            nn.set_params(&th);
            forward_g(&pp, &uu, &nn, &spec, &grid).unwrap()
        };
        let (rp, mp) = eval(h);
        let (rm, mm) = eval(-h);
        let mut fd = rp.clone();
        fd.axpy(-1.0, &rm);
        fd.scale(0.5 / h);
        let mut diff = fd.clone();
        diff.axpy(-1.0, &jr);
        assert!(norm_w(&diff, &grid) <= 1e-6 * norm_w(&jr, &grid));
        let mut fdm = mp.clone();
        fdm.axpy(-1.0, &mm);
        fdm.scale(0.5 / h);
        fdm.axpy(-1.0, &jm);
        assert!(fdm.max_abs() <= 1e-8 * jm.max_abs());
    }

    #[test]
    fn offset_moves_between_bias_and_source() {
        let grid = Grid::unit(21, 20).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random_dirichlet(&grid, &mut rng);
        let net = NetParams::random_uniform(&STANDARD_ARCH, 0.5, 8).unwrap();
        let p = PdeParams::heat(&grid, grid.sample(|x| x.exp())).unwrap();
        let r = pde_residual(&p, &u, &net, &grid).unwrap();
        let c = 0.37;
        let mut shifted = net.clone();
        shifted.shift_output(c);
        let mut q = p.clone();
        q.phi.iter_mut().for_each(|v| *v -= c);
        let r2 = pde_residual(&q, &u, &shifted, &grid).unwrap();
        let mut d = r2.clone();
        d.axpy(-1.0, &r);
        assert!(d.max_abs() <= 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn direction(grid: &Grid, rng: &mut ChaCha8Rng, n_theta: usize) -> Direction {
            let mut v =
                |n: usize| -> Vec<f64> { (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect() };
            let (dphi, dc, da, dtheta) = (v(grid.nx()), v(grid.nx()), v(grid.nx()), v(n_theta));
            Direction {
                du: random_dirichlet(grid, rng),
                dphi,
                dc,
                da,
                dtheta,
            }
        }

        fn combine(a: f64, x: &Direction, b: f64, y: &Direction) -> Direction {
            let mix = |p: &[f64], q: &[f64]| {
                p.iter()
                    .zip(q)
                    .map(|(s, t)| a * s + b * t)
                    .collect::<Vec<f64>>()
            };
            let mut du = x.du.scaled(a);
            du.axpy(b, &y.du);
            Direction {
                du,
                dphi: mix(&x.dphi, &y.dphi),
                dc: mix(&x.dc, &y.dc),
                da: mix(&x.da, &y.da),
                dtheta: mix(&x.dtheta, &y.dtheta),
            }
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]

            #[test]
            fn jvp_is_linear_in_the_direction(seed in 0u64..10_000, a in -2.0f64..2.0, b in -2.0f64..2.0) {
                let grid = Grid::unit(11, 8).unwrap();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let net = NetParams::random_uniform(&STANDARD_ARCH, 0.7, seed).unwrap();
                let u = random_dirichlet(&grid, &mut rng);
                let mut p = PdeParams::heat(&grid, grid.sample(|x| x)).unwrap();
                p.a = grid.sample(|x| 1.0 + 0.5 * x);
                let spec = MeasurementSpec::snapshots(vec![2, 8], 3.0, &grid).unwrap();
                let n = net.n_params();
                let (x, y) = (direction(&grid, &mut rng, n), direction(&grid, &mut rng, n));
                let (rx, mx) = jvp(&p, &u, &net, &x, &spec, &grid).unwrap();
                let (ry, my) = jvp(&p, &u, &net, &y, &spec, &grid).unwrap();
                let (rz, mz) = jvp(&p, &u, &net, &combine(a, &x, b, &y), &spec, &grid).unwrap();
                let mut er = rx.scaled(a);
                er.axpy(b, &ry);
                let mut em = mx.scaled(a);
                em.axpy(b, &my);
                let mut dr = rz;
                dr.axpy(-1.0, &er);
                let mut dm = mz;
                dm.axpy(-1.0, &em);
                prop_assert!(dr.max_abs() <= 1e-11 * (1.0 + er.max_abs()));
                prop_assert!(dm.max_abs() <= 1e-12 * (1.0 + em.max_abs()));
            }
        }
    }
}
