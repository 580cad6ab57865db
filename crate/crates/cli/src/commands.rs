use std::path::Path;

use log::info;
use serde::Serialize;

use aao_core::adjoint::embedding_constant;
use aao_core::diagnostics::{gradient_suite, pairing_suite, GradientRecord, PairingRecord};
use aao_core::experiments::{
    run_experiment, run_to_dir, write_artifacts, ErrorReport, ExperimentConfig, FieldFormat,
};
use aao_core::grid::{Field, Grid};
use aao_core::neural::{verify_tcc, LipschitzReport, NetParams, SampleVerdict, TccVerdict};
use aao_core::solvers::{grid_search, ObjectiveWeights};
use aao_core::surrogate::Surrogate;

use crate::error::{CliError, CliResult};
use crate::schema::{
    read_json, AdjointCheckConfig, CertifyConfig, ExperimentInput, GridSearchConfig,
};
use crate::{CertifyArgs, CheckArgs, Common};

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    std::fs::write(path, s)
        .map_err(|e| CliError::Config(format!("cannot write {}: {e}", path.display())))
}

fn apply_overrides(cfg: &mut ExperimentConfig, args: &Common) {
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if args.binary {
        cfg.output.fields = FieldFormat::Binary;
    }
}

fn load_configs(args: &Common) -> CliResult<Vec<ExperimentConfig>> {
    let input: ExperimentInput = read_json(&args.config)?;
    let mut cfgs = input.into_vec();
    if cfgs.is_empty() {
        return Err(CliError::Config("configuration array is empty".into()));
    }
    for (k, c) in cfgs.iter_mut().enumerate() {
        apply_overrides(c, args);
        c.validate()
            .map_err(|e| CliError::Config(format!("configuration {k}: {e}")))?;
    }
    Ok(cfgs)
}

fn print_errors(label: &str, e: &ErrorReport) {
    println!(
        "{label}: nonlinearity {:.3e}  state {:.3e}  parameter {:.3e}  residual {:.3e}",
        e.nonlinearity_error, e.state_error, e.parameter_error, e.pde_residual
    );
}

pub fn solve(args: &Common) -> CliResult<()> {
    let cfgs = load_configs(args)?;
    if cfgs.len() != 1 {
        return Err(CliError::Config(
            "solve takes a single configuration; use `experiment` for arrays".into(),
        ));
    }
    let cfg = &cfgs[0];
    create_dir(&args.out)?;
    let outcome = run_experiment(cfg)?;
    write_artifacts(&outcome, &args.out)?;
    write_json(&args.out.join("surrogate.json"), &outcome.solution.net)?;
    print_errors("solve", &outcome.report.errors);
    Ok(())
}

#[derive(Serialize)]
struct RunSummary {
    run: usize,
    dir: String,
    status: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    errors: Option<ErrorReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

pub fn experiment(args: &Common) -> CliResult<()> {
    let cfgs = load_configs(args)?;
    create_dir(&args.out)?;
    if cfgs.len() == 1 {
        let report = run_to_dir(&cfgs[0], &args.out)?;
        print_errors("experiment", &report.errors);
        return Ok(());
    }
    let results = aao_core::par::map_indexed(cfgs.len(), |k| {
        let dir = args.out.join(format!("run_{k:03}"));
        info!("run {k} -> {}", dir.display());
        (dir.clone(), run_to_dir(&cfgs[k], &dir))
    });
    let mut summary = Vec::with_capacity(results.len());
    let mut first_failure: Option<CliError> = None;
    for (k, (dir, r)) in results.into_iter().enumerate() {
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        match r {
            Ok(report) => {
                print_errors(&name, &report.errors);
                summary.push(RunSummary {
                    run: k,
                    dir: name,
                    status: "ok",
                    errors: Some(report.errors),
                    error: None,
                });
            }
            Err(e) => {
                eprintln!("{name}: {e}");
                summary.push(RunSummary {
                    run: k,
                    dir: name,
                    status: "aborted",
                    errors: None,
                    error: Some(e.to_string()),
                });
                first_failure.get_or_insert(CliError::from(e));
            }
        }
    }
    write_json(&args.out.join("summary.json"), &summary)?;
    match first_failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

#[derive(Serialize)]
struct Candidate {
    weights: ObjectiveWeights,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize)]
struct GridSearchReport {
    metric: crate::schema::Metric,
    best: Option<usize>,
    best_weights: Option<ObjectiveWeights>,
    candidates: Vec<Candidate>,
}

pub fn gridsearch(args: &Common) -> CliResult<()> {
    let mut gs: GridSearchConfig = read_json(&args.config)?;
    apply_overrides(&mut gs.base, args);
    gs.base.validate()?;
    let cands = gs.candidates();
    for c in &cands {
        c.weights.validate()?;
    }
    create_dir(&args.out)?;
    info!("grid search over {} weight sets", cands.len());
    let metric = gs.metric;
    let (best, scores) = grid_search(&cands, |c| {
        run_experiment(c).map(|o| metric.pick(&o.report.errors))
    });
    let candidates: Vec<Candidate> = cands
        .iter()
        .zip(scores)
        .map(|(c, s)| match s {
            Ok(v) => Candidate {
                weights: c.weights,
                score: Some(v),
                error: None,
            },
            Err(e) => Candidate {
                weights: c.weights,
                score: None,
                error: Some(e.to_string()),
            },
        })
        .collect();
    let report = GridSearchReport {
        metric,
        best,
        best_weights: best.map(|k| cands[k].weights),
        candidates,
    };
    write_json(&args.out.join("gridsearch.json"), &report)?;
    match best {
        Some(k) => {
            let w = cands[k].weights;
            println!(
                "best of {}: beta_m {:e}  r_u {:e}  r_psi {:e}  r_theta {:e}  score {:.3e}",
                cands.len(),
                w.beta_m,
                w.r_u,
                w.r_psi,
                w.r_theta,
                report.candidates[k].score.unwrap_or(f64::NAN)
            );
            Ok(())
        }
        None => Err(CliError::Abort("every grid-search candidate failed".into())),
    }
}

#[derive(Serialize)]
struct Certificate {
    network: NetParams,
    lipschitz: LipschitzReport,
    sample_check: SampleVerdict,
    embedding_constant: f64,
    tcc_radius: f64,
    tcc: TccVerdict,
    passed: bool,
}

fn load_network(path: &Path) -> CliResult<NetParams> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    if let Ok(s) = serde_json::from_str::<Surrogate>(&text) {
        return match s {
            Surrogate::Network(n) => Ok(n),
            _ => Err(CliError::Config(
                "only network surrogates can be certified".into(),
            )),
        };
    }
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

pub fn certify(args: &CertifyArgs) -> CliResult<()> {
    let mut cfg = match &args.config {
        Some(p) => read_json::<CertifyConfig>(p)?,
        None => CertifyConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(p) = &args.network {
        cfg.network = Some(load_network(p)?);
    }
    if !(cfg.rho_fraction > 0.0 && cfg.rho_fraction.is_finite()) {
        return Err(CliError::Config("rho_fraction must be positive".into()));
    }
    let net = match cfg.network.take() {
        Some(n) => n,
        None => NetParams::random_uniform(&cfg.arch, cfg.half_width, cfg.seed)?,
    };
    let grid = cfg.grid.build()?;
    let [lo, hi] = cfg.bounds;
    let lip = LipschitzReport::compute(&net, lo, hi, aao_core::neural::LIPSCHITZ_SAMPLES)?;
    let sample = lip.sample_check(&net, cfg.pairs, cfg.seed);
    let c_emb = embedding_constant(&grid);
    let rho_max = lip.tcc_radius(c_emb)?;
    let rho = if rho_max.is_finite() {
        cfg.rho_fraction * rho_max
    } else {
        1.0
    };
    let center = tcc_center(&grid, lo, hi);
    let tcc = verify_tcc(
        &net,
        &lip,
        &grid,
        &center,
        rho,
        cfg.tcc_pairs,
        cfg.seed.wrapping_add(1),
    )?;
    let passed = sample.passed() && tcc.passed();
    create_dir(&args.out)?;
    println!(
        "value Lipschitz {:.4e}  derivative Lipschitz {:.4e}  worst sampled ratios {:.3} / {:.3}",
        lip.value_lip, lip.derivative_lip, sample.worst_value_ratio, sample.worst_derivative_ratio
    );
    println!(
        "cone radius {:.4e}  tested radius {:.4e}  worst Taylor ratio {:.3e} (bound {:.3e})",
        rho_max, rho, tcc.worst_ratio, tcc.c_tc
    );
    let cert = Certificate {
        network: net,
        lipschitz: lip,
        sample_check: sample,
        embedding_constant: c_emb,
        tcc_radius: rho_max,
        tcc,
        passed,
    };
    write_json(&args.out.join("certificate.json"), &cert)?;
    if passed {
        Ok(())
    } else {
        Err(CliError::Abort(
            "sampled values violate the certified bounds".into(),
        ))
    }
}

/// Steady profile at the middle of the box with a Dirichlet boundary.
fn tcc_center(grid: &Grid, lo: f64, hi: f64) -> Field {
    let mid = 0.5 * (lo + hi);
    let amp = 0.25 * (hi - lo);
    Field::from_fn_dirichlet(grid, |_, x| {
        let s = (x - grid.x_lo()) / (grid.x_hi() - grid.x_lo());
        mid + amp * (std::f64::consts::PI * s).sin()
    })
}

#[derive(Serialize)]
struct CheckReport {
    pairing_tol: f64,
    gradient_tol: f64,
    worst_pairing_defect: f64,
    worst_gradient_error: f64,
    passed: bool,
    pairings: Vec<PairingRecord>,
    gradients: Vec<GradientRecord>,
}

pub fn adjoint_check(args: &CheckArgs) -> CliResult<()> {
    let mut cfg = match &args.config {
        Some(p) => read_json::<AdjointCheckConfig>(p)?,
        None => AdjointCheckConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.grids.is_empty() {
        return Err(CliError::Config("at least one grid is required".into()));
    }
    let grids = cfg
        .grids
        .iter()
        .map(|&[nx, nt]| Grid::unit(nx, nt))
        .collect::<Result<Vec<_>, _>>()?;
    let mut pairings = Vec::new();
    for (k, g) in grids.iter().enumerate() {
        let recs = pairing_suite(g, cfg.draws, cfg.seed.wrapping_add(k as u64))?;
        let worst = recs.iter().map(|r| r.defect).fold(0.0, f64::max);
        println!("pairings {}x{}: worst defect {:.3e}", g.nx(), g.nt(), worst);
        pairings.extend(recs);
    }
    let gradients = gradient_suite(&grids[0], cfg.gradient_draws, cfg.seed, cfg.fd_step)?;
    let worst_pairing = pairings.iter().map(|r| r.defect).fold(0.0, f64::max);
    let worst_gradient = gradients.iter().map(|r| r.rel_error).fold(0.0, f64::max);
    println!("gradients: worst relative error {worst_gradient:.3e}");
    let passed = pairings.iter().all(|r| r.defect <= cfg.pairing_tol)
        && gradients.iter().all(|r| r.rel_error <= cfg.gradient_tol);
    create_dir(&args.out)?;
    write_json(
        &args.out.join("adjoint_check.json"),
        &CheckReport {
            pairing_tol: cfg.pairing_tol,
            gradient_tol: cfg.gradient_tol,
            worst_pairing_defect: worst_pairing,
            worst_gradient_error: worst_gradient,
            passed,
            pairings,
            gradients,
        },
    )?;
    if passed {
        Ok(())
    } else {
        Err(CliError::Abort(format!(
            "adjoint check failed: worst pairing defect {worst_pairing:.3e}, worst gradient error {worst_gradient:.3e}"
        )))
    }
}
