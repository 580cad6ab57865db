//! Ground-truth states, noisy observations and initial guesses.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::grid::{laplacian_into, norm_w, DirichletSolver, Field, Grid};
use crate::model::{MeasurementSpec, Observation, ObservationSet};

use super::config::NoiseSpec;

/// States with `|u|` above this are treated as blown up.
pub const BLOW_UP: f64 = 1e6;

/// Largest time refinement tried before giving up on self-convergence.
pub const MAX_REFINE: usize = 256;

/// Self-convergence target in the `𝒲` norm.
pub const SELF_CONVERGENCE_TOL: f64 = 1e-6;

/// A synthesized state with its convergence record.
#[derive(Clone, Debug, PartialEq)]
pub struct Synthesis {
    pub state: Field,
    /// Time refinement factor that produced `state`.
    pub refine: usize,
    /// `‖u_r − u_{2r}‖_𝒲` between the two finest runs.
    pub self_convergence: f64,
}

/// IMEX Crank–Nicolson / Adams–Bashforth 2 on a time grid refined by
/// `refine`, sampled back onto `grid`.
fn integrate<F>(f: &F, phi: &[f64], u0: &[f64], grid: &Grid, refine: usize) -> Result<Field>
where
    F: Fn(f64) -> f64,
{
    let fine = grid.refine_time(refine);
    let h = fine.dt();
    let nx = grid.nx();
    let solver = DirichletSolver::new(&fine, 0.5 * h, 1.0)?;
    let mut out = Field::zeros(grid);
    let mut u = u0.to_vec();
    u[0] = 0.0;
    u[nx - 1] = 0.0;
    out.row_mut(0).copy_from_slice(&u);
    let mut lap = vec![0.0; nx];
    let mut rhs = vec![0.0; nx];
    let mut f_prev: Vec<f64> = u.iter().map(|&v| f(v)).collect();
    for n in 0..fine.nt() {
        laplacian_into(&u, &fine, &mut lap);
        for i in 1..nx - 1 {
            let fi = f(u[i]);
            let ab = if n == 0 {
                fi
            } else {
                1.5 * fi - 0.5 * f_prev[i]
            };
            rhs[i] = u[i] + 0.5 * h * lap[i] + h * (phi[i] + ab);
            f_prev[i] = fi;
        }
        solver.solve_into(&rhs, &mut u);
        let max_abs = u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !(max_abs <= BLOW_UP) {
            return Err(Error::BlowUp {
                t: (n + 1) as f64 * h,
                max_abs,
            });
        }
        if (n + 1) % refine == 0 {
            out.row_mut((n + 1) / refine).copy_from_slice(&u);
        }
    }
    Ok(out)
}

/// Solves `u̇ = Δu + φ + f(u)`, `u(0) = u0`, homogeneous Dirichlet data.
///
/// Starts at time refinement `refine` and doubles it until two consecutive
/// runs agree to [`SELF_CONVERGENCE_TOL`] in the `𝒲` norm.
pub fn synthesize_state<F>(
    f: F,
    phi: &[f64],
    u0: &[f64],
    grid: &Grid,
    refine: usize,
) -> Result<Synthesis>
where
    F: Fn(f64) -> f64,
{
    if phi.len() != grid.nx() || u0.len() != grid.nx() {
        return Err(Error::Shape(
            "source and initial state must have nx entries".into(),
        ));
    }
    if refine == 0 {
        return Err(Error::Config("refinement factor must be at least 1".into()));
    }
    let mut r = refine;
    let mut coarse = integrate(&f, phi, u0, grid, r)?;
    loop {
        let fine = integrate(&f, phi, u0, grid, 2 * r)?;
        let mut d = fine.clone();
        d.axpy(-1.0, &coarse);
        let gap = norm_w(&d, grid);
        if gap <= SELF_CONVERGENCE_TOL {
            return Ok(Synthesis {
                state: fine,
                refine: 2 * r,
                self_convergence: gap,
            });
        }
        if 2 * r >= MAX_REFINE {
            return Err(Error::Solver(format!(
                "state synthesis did not self-converge: gap {gap:e} at refinement {}",
                2 * r
            )));
        }
        r *= 2;
        coarse = fine;
    }
}

/// Adds seeded Gaussian noise to every observed value.
///
/// Sample `k` draws from stream `k` of a generator seeded with `seed`, so the
/// noise of one sample does not depend on how many samples there are.
pub fn add_noise(
    clean: &ObservationSet,
    noise: NoiseSpec,
    seed: u64,
    grid: &Grid,
) -> Result<ObservationSet> {
    noise.validate()?;
    let mut samples = Vec::with_capacity(clean.len());
    for (k, obs) in clean.samples.iter().enumerate() {
        let y = obs.field();
        let sigma = match noise {
            NoiseSpec::Sigma { value } => value,
            NoiseSpec::Percent { value } => {
                let n = y.as_slice().len() as f64;
                let rms = (y.as_slice().iter().map(|v| v * v).sum::<f64>() / n).sqrt();
                value / 100.0 * rms
            }
        };
        let mut e = Field::from_vec(y.rows(), y.cols(), vec![0.0; y.as_slice().len()])?;
        if sigma > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let normal = Normal::new(0.0, sigma).map_err(|e| Error::Contract(e.to_string()))?;
            e.as_mut_slice()
                .iter_mut()
                .for_each(|v| *v = normal.sample(&mut rng));
        }
        let noise_norm = clean.spec.norm_sq(&e, grid).sqrt();
        let mut noisy = y;
        noisy.axpy(1.0, &e);
        samples.push(Observation {
            rows: obs.rows,
            cols: obs.cols,
            values: noisy.into_vec(),
            noise_norm,
            seed,
        });
    }
    ObservationSet::new(clean.spec.clone(), samples, grid)
}

/// Linear-in-time interpolation of the (unscaled) observations, held
/// constant before the first and after the last observed time.
pub fn interpolate_observations(spec: &MeasurementSpec, y: &Field, grid: &Grid) -> Field {
    let rows = spec.rows(grid);
    let nx = grid.nx();
    let inv = 1.0 / spec.scale;
    let mut u = Field::zeros(grid);
    for j in 0..grid.rows() {
        let hi = rows.partition_point(|&r| r < j);
        let row: Vec<f64> = if hi == 0 {
            y.row(0).to_vec()
        } else if hi == rows.len() {
            y.row(rows.len() - 1).to_vec()
        } else if rows[hi] == j {
            y.row(hi).to_vec()
        } else {
            let (j0, j1) = (rows[hi - 1], rows[hi]);
            let s = (j - j0) as f64 / (j1 - j0) as f64;
            (0..nx)
                .map(|i| (1.0 - s) * y.get(hi - 1, i) + s * y.get(hi, i))
                .collect()
        };
        for (o, v) in u.row_mut(j).iter_mut().zip(row) {
            *o = inv * v;
        }
    }
    u.zero_boundary();
    u
}
