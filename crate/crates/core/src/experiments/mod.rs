//! Synthetic identification experiments: ground truth, noisy data, solve,
//! offset-corrected scoring and artifacts.
//!
//! ```no_run
//! use aao_core::experiments::{run_experiment, ExperimentConfig};
//!
//! let cfg = ExperimentConfig::from_json(r#"{
//!     "truth": {"nonlinearity": "square"},
//!     "measurement": {"mode": "snapshots", "count": 6},
//!     "noise": {"kind": "sigma", "value": 0.01},
//!     "solver": {"method": "adam", "iters": 2000}
//! }"#)?;
//! let outcome = run_experiment(&cfg)?;
//! println!("{:.3e}", outcome.report.errors.nonlinearity_error);
//! # Ok::<(), aao_core::Error>(())
//! ```

pub mod artifacts;
pub mod config;
pub mod scoring;
pub mod synth;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid::{Field, Grid};
use crate::model::{Observation, ObservationSet, PdeParams};
use crate::neural::NetParams;
use crate::solvers::{
    adam_run, landweber_run, write_trace_csv, Problem, SolveState, StopReason, TraceRow,
};
use crate::surrogate::{Nonlinearity, Polynomial, Surrogate, TrigSeries};

pub use config::{
    BaselineConfig, BaselineKind, ExperimentConfig, FieldFormat, GridConfig, MeasurementConfig,
    NoiseSpec, OutputConfig, Profile, SampleConfig, SolverConfig, Truth, TruthConfig,
};
pub use scoring::{offset_correction, ErrorReport, OffsetCorrection};
pub use synth::{add_noise, interpolate_observations, synthesize_state, Synthesis};

/// Everything a solve needs, built from a config.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub grid: Grid,
    pub truth_states: Vec<Field>,
    pub true_phi: Vec<Vec<f64>>,
    pub problem: Problem,
    pub init: SolveState<Surrogate>,
    pub synthesis: SynthesisSummary,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SynthesisSummary {
    /// Finest time refinement used over all samples.
    pub refine: usize,
    /// Largest self-convergence gap over all samples.
    pub self_convergence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolverSummary {
    pub method: &'static str,
    pub stop: StopReason,
    pub iterations: usize,
    pub objective: f64,
    pub pde_residual: f64,
    pub data_misfit: f64,
    /// Realised noise norm `δ`.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub errors: ErrorReport,
    pub solver: SolverSummary,
    pub synthesis: SynthesisSummary,
    pub config: ExperimentConfig,
}

/// Sampled nonlinearities on the comparison range.
#[derive(Clone, Debug, PartialEq)]
pub struct NonlinearityCurve {
    pub u: Vec<f64>,
    pub truth: Vec<f64>,
    /// Offset-corrected recovery.
    pub recovered: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub report: ExperimentReport,
    pub prepared: Prepared,
    pub solution: SolveState<Surrogate>,
    pub trace: Vec<TraceRow>,
    pub curve: NonlinearityCurve,
    /// Offset-corrected recovered sources (the true ones when not estimated).
    pub phi: Vec<Vec<f64>>,
}

fn init_seed(seed: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(1)
}

/// Builds the approximator with seeded uniform initial parameters.
pub fn initial_surrogate(b: &BaselineConfig, range: (f64, f64), seed: u64) -> Result<Surrogate> {
    let hw = b.init_half_width;
    let draw = |n: usize| -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                if hw > 0.0 {
                    rng.gen_range(-hw..=hw)
                } else {
                    0.0
                }
            })
            .collect()
    };
    Ok(match b.kind {
        BaselineKind::Network => Surrogate::Network(NetParams::random_uniform(&b.arch, hw, seed)?),
        BaselineKind::Polynomial => {
            let mut p = Polynomial::zeros(b.dof)?;
            p.set_params(&draw(b.dof));
            Surrogate::Polynomial(p)
        }
        BaselineKind::Trig => {
            let mut t = TrigSeries::zeros(b.dof, range)?;
            t.set_params(&draw(b.dof));
            Surrogate::Trig(t)
        }
    })
}

/// Synthesizes the truth, adds noise and builds the problem and initial guess.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    cfg.validate()?;
    let grid = cfg.grid.build()?;
    let f = cfg.truth.nonlinearity;
    let mut truth_states = Vec::new();
    let mut true_phi = Vec::new();
    let mut synthesis = SynthesisSummary {
        refine: 0,
        self_convergence: 0.0,
    };
    for s in &cfg.truth.samples {
        let phi = s.phi.sample(&grid)?;
        let u0 = s.u0.sample(&grid)?;
        let syn = synthesize_state(|u| f.eval(u), &phi, &u0, &grid, cfg.truth.refine)?;
        synthesis.refine = synthesis.refine.max(syn.refine);
        synthesis.self_convergence = synthesis.self_convergence.max(syn.self_convergence);
        truth_states.push(syn.state);
        true_phi.push(phi);
    }
    let spec = cfg.measurement.build(&grid)?;
    let clean = ObservationSet::new(
        spec.clone(),
        truth_states
            .iter()
            .map(|u| Observation::exact(spec.measure(u, &grid)))
            .collect(),
        &grid,
    )?;
    let data = add_noise(&clean, cfg.noise, cfg.seed, &grid)?;

    let params: Vec<PdeParams> = if cfg.truth.estimate_source {
        vec![PdeParams::zero_source(&grid); true_phi.len()]
    } else {
        true_phi
            .iter()
            .map(|p| PdeParams::heat(&grid, p.clone()))
            .collect::<Result<_>>()?
    };
    let u_init: Vec<Field> = data
        .samples
        .iter()
        .map(|o| interpolate_observations(&spec, &o.field(), &grid))
        .collect();
    let range = scoring::value_range(&u_init);
    let net = initial_surrogate(&cfg.baseline, range, init_seed(cfg.seed))?;
    let problem = Problem::new(grid, params, data, cfg.weights, cfg.truth.estimate_source)?;
    let mut init = problem.zero_state(net);
    init.u = u_init;
    Ok(Prepared {
        grid,
        truth_states,
        true_phi,
        problem,
        init,
        synthesis,
    })
}

/// Scores a solution against the truth after offset correction.
pub fn score(
    prep: &Prepared,
    truth: Truth,
    sol: &SolveState<Surrogate>,
    pde_residual: f64,
) -> (ErrorReport, NonlinearityCurve, Vec<Vec<f64>>) {
    let grid = &prep.grid;
    let (lo, hi) = scoring::value_range(&sol.u);
    let us = scoring::range_samples(lo, hi, scoring::RANGE_POINTS);
    let f_true: Vec<f64> = us.iter().map(|&u| truth.eval(u)).collect();
    let f_rec: Vec<f64> = us.iter().map(|&u| sol.net.eval(u)).collect();
    let estimated = prep.problem.estimate_source;
    let phi_rec: Vec<Vec<f64>> = if estimated {
        prep.problem
            .params
            .iter()
            .zip(&sol.psi)
            .map(|(p, psi)| p.phi.iter().zip(psi).map(|(a, b)| a + b).collect())
            .collect()
    } else {
        Vec::new()
    };
    let phi_true: &[Vec<f64>] = if estimated { &prep.true_phi } else { &[] };
    let corr = offset_correction(&f_rec, &f_true, (lo, hi), &phi_rec, phi_true, grid);
    let u_rec = scoring::flatten(&sol.u);
    let u_true = scoring::flatten(&prep.truth_states);
    let (parameter_error, parameter_rel_l2, phi) = if estimated {
        let a: Vec<f64> = corr.phi.iter().flatten().copied().collect();
        let b: Vec<f64> = prep.true_phi.iter().flatten().copied().collect();
        (
            scoring::mse(&a, &b),
            scoring::rel_l2(&a, &b),
            corr.phi.clone(),
        )
    } else {
        (0.0, 0.0, prep.true_phi.clone())
    };
    let report = ErrorReport {
        nonlinearity_error: scoring::mse(&corr.f, &f_true),
        state_error: scoring::mse(&u_rec, &u_true),
        parameter_error,
        pde_residual,
        nonlinearity_rel_l2: scoring::rel_l2(&corr.f, &f_true),
        state_rel_l2: scoring::rel_l2(&u_rec, &u_true),
        parameter_rel_l2,
        offset: corr.c,
        range_lo: lo,
        range_hi: hi,
    };
    let curve = NonlinearityCurve {
        u: us,
        truth: f_true,
        recovered: corr.f,
    };
    (report, curve, phi)
}

/// Runs the configured solver from a prepared problem and scores the result.
pub fn solve_prepared(cfg: &ExperimentConfig, prep: Prepared) -> Result<ExperimentOutcome> {
    let problem = &prep.problem;
    let delta = problem.data.delta();
    let (out, method) = match &cfg.solver {
        SolverConfig::Adam(o) => (adam_run(problem, prep.init.clone(), o)?, "adam"),
        SolverConfig::Landweber(rule) => {
            let mut rule = *rule;
            rule.delta = delta;
            (
                landweber_run(problem, prep.init.clone(), &rule)?,
                "landweber",
            )
        }
    };
    let ev = &out.final_eval;
    let (errors, curve, phi) = score(
        &prep,
        cfg.truth.nonlinearity,
        &out.state,
        ev.residual_norm(),
    );
    let report = ExperimentReport {
        errors,
        solver: SolverSummary {
            method,
            stop: out.stop,
            iterations: out.iterations,
            objective: ev.objective,
            pde_residual: ev.residual_norm(),
            data_misfit: ev.misfit_norm(),
            delta,
        },
        synthesis: prep.synthesis,
        config: cfg.clone(),
    };
    Ok(ExperimentOutcome {
        report,
        solution: out.state,
        trace: out.trace,
        curve,
        phi,
        prepared: prep,
    })
}

/// Full pipeline without writing anything.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let prep = prepare(cfg)?;
    solve_prepared(cfg, prep)
}

#[derive(Serialize)]
struct AbortReport<'a> {
    status: &'static str,
    error: String,
    config: &'a ExperimentConfig,
}

fn write_inputs(prep: &Prepared, dir: &Path, format: FieldFormat) -> Result<()> {
    for (k, u) in prep.truth_states.iter().enumerate() {
        artifacts::write_field(u, dir, &format!("truth_{k}"), format)?;
    }
    for (k, y) in prep.problem.data.samples.iter().enumerate() {
        artifacts::write_field(&y.field(), dir, &format!("data_{k}"), format)?;
    }
    Ok(())
}

/// Writes `report.json`, `trace.csv`, field dumps and `plotdata/*.csv`.
pub fn write_artifacts(outcome: &ExperimentOutcome, dir: &Path) -> Result<()> {
    artifacts::ensure_dir(dir)?;
    let out = &outcome.report.config.output;
    let prep = &outcome.prepared;
    let grid = &prep.grid;
    std::fs::write(dir.join("report.json"), report_json(&outcome.report))?;
    if out.trace {
        let f = std::io::BufWriter::new(std::fs::File::create(dir.join("trace.csv"))?);
        write_trace_csv(&outcome.trace, f)?;
    }
    write_inputs(prep, dir, out.fields)?;
    for (k, u) in outcome.solution.u.iter().enumerate() {
        artifacts::write_field(u, dir, &format!("state_{k}"), out.fields)?;
    }
    if out.plotdata {
        let pd = dir.join("plotdata");
        artifacts::ensure_dir(&pd)?;
        let c = &outcome.curve;
        artifacts::write_columns(
            &pd.join("nonlinearity.csv"),
            &["u", "f_true", "f_recovered"],
            &[&c.u, &c.truth, &c.recovered],
        )?;
        let rows = prep.problem.data.spec.rows(grid);
        let mut slices = vec![0];
        slices.extend(rows.iter().copied().filter(|&j| j != 0));
        if !matches!(
            prep.problem.data.spec.mode,
            crate::model::MeasurementMode::Snapshots { .. }
        ) {
            slices = vec![0, grid.nt() / 2, grid.nt()];
        }
        let xs = grid.xs();
        for (k, (truth, rec)) in prep
            .truth_states
            .iter()
            .zip(&outcome.solution.u)
            .enumerate()
        {
            artifacts::write_state_slices(
                &pd.join(format!("state_{k}.csv")),
                grid,
                truth,
                rec,
                &slices,
            )?;
            let init: Vec<f64> = match prep.init.psi.get(k) {
                Some(psi) => prep.problem.params[k]
                    .phi
                    .iter()
                    .zip(psi)
                    .map(|(a, b)| a + b)
                    .collect(),
                None => prep.problem.params[k].phi.clone(),
            };
            artifacts::write_columns(
                &pd.join(format!("parameter_{k}.csv")),
                &["x", "phi_true", "phi_recovered", "phi_init"],
                &[&xs, &prep.true_phi[k], &outcome.phi[k], &init],
            )?;
        }
    }
    Ok(())
}

pub fn report_json(report: &ExperimentReport) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("report serialises");
    s.push('\n');
    s
}

/// Runs an experiment and writes its artifacts to `dir`.
///
/// When the solver aborts, the inputs (truth and data fields) and a
/// `report.json` describing the failure are still written.
pub fn run_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<ExperimentReport> {
    let prep = prepare(cfg)?;
    artifacts::ensure_dir(dir)?;
    match solve_prepared(cfg, prep.clone()) {
        Ok(outcome) => {
            write_artifacts(&outcome, dir)?;
            Ok(outcome.report)
        }
        Err(e) => {
            write_inputs(&prep, dir, cfg.output.fields)?;
            let abort = AbortReport {
                status: "aborted",
                error: e.to_string(),
                config: cfg,
            };
            std::fs::write(
                dir.join("report.json"),
                serde_json::to_string_pretty(&abort).map_err(Error::from)? + "\n",
            )?;
            Err(e)
        }
    }
}
