//! Numerical self-checks: adjoint pairings and gradient finite differences
//! on randomly drawn inputs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adjoint::{adjoint_trace, AdjointContext, AuxOperator};
use crate::error::Result;
use crate::grid::{
    inner_l2, inner_v, inner_vspace, inner_w, norm_l2, norm_v, norm_v_state, Field, Grid,
};
use crate::model::{jvp, Direction, MeasurementSpec, Observation, ObservationSet, PdeParams};
use crate::neural::{NetParams, STANDARD_ARCH};
use crate::solvers::{Backend, ObjectiveWeights, Problem};
use crate::surrogate::Nonlinearity;

/// Adjoint blocks covered by [`pairing_suite`].
pub const PAIRING_BLOCKS: [&str; 8] = [
    "adjoint_m_full",
    "adjoint_m_snapshot",
    "adjoint_transport",
    "adjoint_param_c",
    "adjoint_param_phi",
    "adjoint_param_a",
    "adjoint_nn",
    "adjoint_trace",
];

/// One evaluation of `⟨T x, z⟩` against `⟨x, T* z⟩`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairingRecord {
    pub block: &'static str,
    pub nx: usize,
    pub nt: usize,
    pub draw: usize,
    pub lhs: f64,
    pub rhs: f64,
    /// `|lhs − rhs| / (‖x‖ ‖T* z‖)`.
    pub defect: f64,
}

fn random_field(grid: &Grid, rng: &mut ChaCha8Rng, dirichlet: bool) -> Field {
    let mut f = Field::from_fn(grid, |_, _| rng.gen_range(-1.0..1.0));
    if dirichlet {
        f.zero_boundary();
    }
    f
}

fn random_vec(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn defect(lhs: f64, rhs: f64, scale: f64) -> f64 {
    (lhs - rhs).abs() / scale.max(f64::MIN_POSITIVE)
}

/// Runs every block of [`PAIRING_BLOCKS`] `draws` times with fresh random
/// coefficients, state, network and test functions.
pub fn pairing_suite(grid: &Grid, draws: usize, seed: u64) -> Result<Vec<PairingRecord>> {
    let aux = AuxOperator::new(grid);
    let full = MeasurementSpec::full();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(draws * PAIRING_BLOCKS.len());
    for draw in 0..draws {
        let net = NetParams::random_uniform(&STANDARD_ARCH, 0.8, rng.gen())?;
        let u = random_field(grid, &mut rng, true);
        let mut p = PdeParams::heat(grid, random_vec(grid.nx(), &mut rng))?;
        p.c = grid.sample(|_| rng.gen_range(0.0..2.0));
        p.a = grid.sample(|_| rng.gen_range(0.5..1.5));
        let ctx = AdjointContext::new(&aux, &p, &u, &net)?;
        let z = random_field(grid, &mut rng, false);
        let mut push = |block: &'static str, lhs: f64, rhs: f64, scale: f64| {
            out.push(PairingRecord {
                block,
                nx: grid.nx(),
                nt: grid.nt(),
                draw,
                lhs,
                rhs,
                defect: defect(lhs, rhs, scale),
            })
        };

        let v = random_field(grid, &mut rng, true);
        let scale = rng.gen_range(0.5..20.0);
        let g = ctx.adjoint_m_full(&z, scale)?;
        push(
            "adjoint_m_full",
            scale * inner_w(&v, &z, grid),
            inner_vspace(&v, &g, grid),
            norm_v_state(&v, grid) * norm_v_state(&g, grid),
        );

        let h = random_vec(grid.nx(), &mut rng);
        let ti = rng.gen_range(0..=grid.nt());
        let g = ctx.adjoint_m_snapshot(&h, ti, scale)?;
        push(
            "adjoint_m_snapshot",
            scale * inner_l2(&h, v.row(ti), grid),
            inner_vspace(&v, &g, grid),
            norm_v_state(&v, grid) * norm_v_state(&g, grid),
        );

        let mut d = Direction::zeros(grid, net.n_params());
        d.du = random_field(grid, &mut rng, true);
        let (jr, _) = jvp(&p, &u, &net, &d, &full, grid)?;
        let g = ctx.adjoint_transport(&z)?;
        push(
            "adjoint_transport",
            inner_w(&jr, &z, grid),
            inner_vspace(&d.du, &g, grid),
            norm_v_state(&d.du, grid) * norm_v_state(&g, grid),
        );

        let mut d = Direction::zeros(grid, net.n_params());
        d.dc = random_vec(grid.nx(), &mut rng);
        let (jr, _) = jvp(&p, &u, &net, &d, &full, grid)?;
        let g = ctx.adjoint_param_c(&z)?;
        push(
            "adjoint_param_c",
            inner_w(&jr, &z, grid),
            inner_l2(&d.dc, &g, grid),
            norm_l2(&d.dc, grid) * norm_l2(&g, grid),
        );

        let mut d = Direction::zeros(grid, net.n_params());
        d.dphi = random_vec(grid.nx(), &mut rng);
        let (jr, _) = jvp(&p, &u, &net, &d, &full, grid)?;
        let g = ctx.adjoint_param_phi(&z)?;
        push(
            "adjoint_param_phi",
            inner_w(&jr, &z, grid),
            inner_l2(&d.dphi, &g, grid),
            norm_l2(&d.dphi, grid) * norm_l2(&g, grid),
        );

        let mut d = Direction::zeros(grid, net.n_params());
        d.da = grid.sample_dirichlet(|_| rng.gen_range(-1.0..1.0));
        let (jr, _) = jvp(&p, &u, &net, &d, &full, grid)?;
        let g = ctx.adjoint_param_a(&z)?;
        push(
            "adjoint_param_a",
            inner_w(&jr, &z, grid),
            inner_v(&d.da, &g, grid),
            norm_v(&d.da, grid) * norm_v(&g, grid),
        );

        let mut d = Direction::zeros(grid, net.n_params());
        d.dtheta = random_vec(net.n_params(), &mut rng);
        let (jr, _) = jvp(&p, &u, &net, &d, &full, grid)?;
        let g = ctx.adjoint_nn(&z)?;
        let rhs: f64 = g.iter().zip(&d.dtheta).map(|(a, b)| a * b).sum();
        let norm = |x: &[f64]| x.iter().map(|v| v * v).sum::<f64>().sqrt();
        // the network block enters the residual with a minus sign
        push(
            "adjoint_nn",
            -inner_w(&jr, &z, grid),
            rhs,
            norm(&d.dtheta) * norm(&g),
        );

        let h = grid.sample_dirichlet(|_| rng.gen_range(-1.0..1.0));
        let g = adjoint_trace(&h, grid);
        push(
            "adjoint_trace",
            inner_v(&h, v.row(0), grid),
            inner_vspace(&g, &v, grid),
            norm_v_state(&v, grid) * norm_v_state(&g, grid),
        );
    }
    Ok(out)
}

/// Directional derivative of the objective by central differences against
/// the assembled gradient.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradientRecord {
    pub backend: &'static str,
    pub draw: usize,
    pub finite_difference: f64,
    pub analytic: f64,
    pub rel_error: f64,
}

/// Builds a random two-sample problem on `grid` (snapshot data with an
/// estimated source on even draws, full data with a known source on odd
/// draws) and compares gradients of both backends with central differences
/// of step `h`.
pub fn gradient_suite(grid: &Grid, draws: usize, seed: u64, h: f64) -> Result<Vec<GradientRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(2 * draws);
    for draw in 0..draws {
        let estimate_source = draw % 2 == 0;
        let spec = if estimate_source {
            let rows = [1, grid.nt() / 2, grid.nt()];
            MeasurementSpec::snapshots(rows.to_vec(), rng.gen_range(1.0..10.0), grid)?
        } else {
            MeasurementSpec::full()
        };
        let n = spec.n_obs(grid);
        let data: Vec<Observation> = (0..2)
            .map(|_| {
                Field::from_vec(n, grid.nx(), random_vec(n * grid.nx(), &mut rng))
                    .map(Observation::exact)
            })
            .collect::<Result<_>>()?;
        let params = (0..2)
            .map(|_| PdeParams::heat(grid, random_vec(grid.nx(), &mut rng)))
            .collect::<Result<Vec<_>>>()?;
        let weights = ObjectiveWeights {
            beta_e: rng.gen_range(0.5..2.0),
            beta_m: rng.gen_range(0.5..2.0),
            r_u: 1e-2,
            r_psi: 0.1,
            r_theta: 0.05,
        };
        let obs = ObservationSet::new(spec, data, grid)?;
        let problem = Problem::new(*grid, params, obs, weights, estimate_source)?;
        let net = NetParams::random_uniform(&STANDARD_ARCH, 0.8, rng.gen())?;
        let mut s = problem.zero_state(net);
        for u in &mut s.u {
            *u = random_field(grid, &mut rng, true);
        }
        for p in &mut s.psi {
            *p = random_vec(grid.nx(), &mut rng);
        }
        for (name, backend) in [
            ("function_space", Backend::FunctionSpace),
            ("flat", Backend::Flat),
        ] {
            let g = problem.gradient(&s, backend)?;
            let mut d = g.clone();
            for u in &mut d.u {
                *u = random_field(grid, &mut rng, true);
            }
            for p in &mut d.psi {
                *p = random_vec(grid.nx(), &mut rng);
            }
            d.theta = random_vec(d.theta.len(), &mut rng);
            let mut sp = s.clone();
            sp.axpy(h, &d);
            let mut sm = s.clone();
            sm.axpy(-h, &d);
            let fd = (problem.objective(&sp)? - problem.objective(&sm)?) / (2.0 * h);
            let an = g.dot(&d, backend, grid);
            out.push(GradientRecord {
                backend: name,
                draw,
                finite_difference: fd,
                analytic: an,
                rel_error: (fd - an).abs() / an.abs().max(f64::MIN_POSITIVE),
            });
        }
    }
    Ok(out)
}
