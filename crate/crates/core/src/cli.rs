//! Command-line front end: argument parsing, experiment dispatch and the
//! run directory.

use std::path::{Path, PathBuf};

use clap::Parser;
use serde_json::{json, Value};

use crate::adjoint::{default_trial_fields, duality_certificate, mass_bounds, AdjointOperator};
use crate::config::{parse_config, Experiment, OutputFormat, RunConfig, ERGODIC_LAMBDAS};
use crate::error::{Error, Result};
use crate::fit::rate_fit;
use crate::grid::GridField;
use crate::io::{measure_csv, table_csv, timestamp, ExperimentManifest, Failure, RunWriter};
use crate::mather::{measure_family, DiscreteMeasure};
use crate::regularize::smooth_subsolution_certificate;
use crate::selection::{
    lambda_sweep, oracle_solution_family, slack, theorem_a_certificate, theorem_b_experiment, theorem_c_harness,
    u_star_brute_force, SolutionFamily1D, SweepOptions, SweepResult, Verdict,
};
use crate::solver::{estimate_ergodic_constant, solve, vanishing_viscosity_gap, ProblemSpec, SolveReport};

/// Overrides the worker count when neither `--workers` nor the config sets it.
pub const WORKERS_ENV: &str = "ERGOSELECT_WORKERS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;
pub const EXIT_CERTIFICATE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "ergoselect", version, about = "Vanishing-discount selection experiments on the torus")]
pub struct Cli {
    /// One of: solve, ergodic, vv-gap, adjoint, mather, regularize, select,
    /// theorem-a, theorem-b, theorem-c.
    pub command: String,
    #[arg(long)]
    pub config: PathBuf,
    /// Run directory; overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; overrides `output.workers` and the environment.
    #[arg(long)]
    pub workers: Option<usize>,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonConvergence { .. } | Error::SingularSystem(_) | Error::SweepFailed { .. } => EXIT_NONCONVERGENCE,
        Error::Certificate(_)
        | Error::MonotonicityViolation { .. }
        | Error::NegativityViolation(_)
        | Error::Unnormalizable(_)
        | Error::EmptyClass(_) => EXIT_CERTIFICATE,
        _ => EXIT_CONFIG,
    }
}

/// Worker count: flag, then config, then environment, then rayon's default.
pub fn resolve_workers(flag: Option<usize>, config: Option<usize>) -> Option<usize> {
    flag.or(config).or_else(|| {
        std::env::var(WORKERS_ENV)
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&k| k > 0)
    })
}

#[derive(Debug)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub manifest: Option<ExperimentManifest>,
    pub message: Option<String>,
}

/// Parse arguments and run; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = run_cli(&cli);
    if let Some(msg) = &outcome.message {
        eprintln!("ergoselect: {msg}");
    }
    outcome.exit_code
}

pub fn run_cli(cli: &Cli) -> RunOutcome {
    let fail = |code: i32, msg: String| RunOutcome {
        exit_code: code,
        manifest: None,
        message: Some(msg),
    };
    let Some(command) = Experiment::parse(&cli.command) else {
        return fail(EXIT_CONFIG, format!("unknown command {:?}", cli.command));
    };
    let cfg = match parse_config(&cli.config) {
        Ok(c) => c,
        Err(e) => return fail(exit_code(&e), e.to_string()),
    };
    if cfg.experiment.name != command {
        return fail(
            EXIT_CONFIG,
            format!(
                "config error at experiment.name: config is for {}, command is {command}",
                cfg.experiment.name
            ),
        );
    }
    if cli.workers == Some(0) {
        return fail(EXIT_CONFIG, "--workers must be at least 1".into());
    }
    let dir = cli
        .out
        .clone()
        .or_else(|| cfg.output.dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(command.name()));
    let workers = resolve_workers(cli.workers, cfg.output.workers);
    run(&cfg, &dir, workers)
}

/// Run a parsed config into `dir`.
pub fn run(cfg: &RunConfig, dir: &Path, workers: Option<usize>) -> RunOutcome {
    let started = timestamp();
    let mut writer = match RunWriter::create(dir) {
        Ok(w) => w,
        Err(e) => {
            return RunOutcome {
                exit_code: EXIT_CONFIG,
                manifest: None,
                message: Some(format!("cannot create run directory {}: {e}", dir.display())),
            }
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(k) = workers {
        builder = builder.num_threads(k);
    }
    let result = match builder.build() {
        Ok(pool) => pool.install(|| {
            let n = rayon::current_num_threads();
            (n, dispatch(cfg, &mut writer))
        }),
        Err(e) => (0, Err(Error::Config {
            field: "workers".into(),
            detail: e.to_string(),
        })),
    };
    let (n_workers, result) = result;
    let (exit, failure) = match &result {
        Ok(()) => (EXIT_OK, None),
        Err(e) => {
            let code = exit_code(e);
            (
                code,
                Some(Failure {
                    stage: cfg.experiment.name.to_string(),
                    message: e.to_string(),
                    exit_code: code,
                }),
            )
        }
    };
    let manifest = ExperimentManifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: cfg.experiment.name.to_string(),
        config: serde_json::to_value(cfg).unwrap_or(Value::Null),
        started,
        finished: timestamp(),
        workers: n_workers,
        status: if exit == EXIT_OK { "ok".into() } else { "failed".into() },
        failure: failure.clone(),
        certificates: Vec::new(),
        files: Vec::new(),
    };
    match writer.finish(manifest) {
        Ok(m) => RunOutcome {
            exit_code: exit,
            manifest: Some(m),
            message: failure.map(|f| f.message),
        },
        Err(e) => RunOutcome {
            exit_code: exit.max(EXIT_CONFIG),
            manifest: None,
            message: Some(format!("cannot write manifest: {e}")),
        },
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    out: &'a mut RunWriter,
}

impl Ctx<'_> {
    fn csv(&self) -> bool {
        self.cfg.output.formats.contains(&OutputFormat::Csv)
    }

    fn json(&self) -> bool {
        self.cfg.output.formats.contains(&OutputFormat::Json)
    }

    fn grid(&mut self, name: &str, field: &GridField, label: &str) -> Result<()> {
        if self.csv() {
            self.out.write_grid(name, field, label)?;
        }
        Ok(())
    }

    fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<Option<f64>>]) -> Result<()> {
        if self.csv() {
            self.out.write(name, table_csv(header, rows).as_bytes())?;
        }
        Ok(())
    }

    fn report(&mut self, value: &Value) -> Result<()> {
        if self.json() {
            self.out.write_json("report.json", value)?;
        }
        Ok(())
    }

    /// Record a certificate; a failing one aborts the run with exit code 4.
    fn certify(&mut self, name: &str, pass: bool, detail: Value) -> Result<()> {
        self.out.certify(name, pass, detail.clone());
        if pass {
            Ok(())
        } else {
            Err(Error::Certificate(format!("{name}: {detail}")))
        }
    }

    /// Record a measurement that has no pass/fail consequence for the exit code.
    fn measure(&mut self, name: &str, pass: bool, detail: Value) {
        self.out.certify(name, pass, detail);
    }
}

fn problem(cfg: &RunConfig) -> Result<(ProblemSpec, Value)> {
    let (c_h, source) = cfg.resolve_c_h()?;
    Ok((cfg.problem(c_h)?, json!({"value": c_h, "source": source})))
}

fn solve_summary(r: &SolveReport) -> Value {
    json!({
        "lambda": r.lambda,
        "eta": r.eta,
        "residual_sup": r.residual_sup,
        "iterations": r.iterations,
        "pseudo_time_steps": r.pseudo_time_steps,
        "lipschitz": r.lipschitz,
        "lambda_u_sup": r.lambda_u_sup,
        "validation": r.validation,
    })
}

fn sweep_summary(s: &SweepResult) -> Value {
    json!({
        "lambdas": s.lambdas,
        "pairwise": s.pairwise,
        "distances_decrease": s.distances_decrease,
        "limit_reported": s.limit.is_some(),
        "richardson_used": s.richardson_used,
        "max_lipschitz": s.max_lipschitz,
        "equi_lipschitz": s.equi_lipschitz,
        "max_lambda_u": s.max_lambda_u,
        "rows": s.rows.iter().map(|r| json!({
            "lambda": r.lambda,
            "eta": r.eta,
            "solve": r.report.as_ref().map(solve_summary),
            "failure": r.failure,
        })).collect::<Vec<_>>(),
    })
}

fn dispatch(cfg: &RunConfig, out: &mut RunWriter) -> Result<()> {
    let mut ctx = Ctx { cfg, out };
    match cfg.experiment.name {
        Experiment::Solve => run_solve(&mut ctx),
        Experiment::Ergodic => run_ergodic(&mut ctx),
        Experiment::VvGap => run_vv_gap(&mut ctx),
        Experiment::Adjoint => run_adjoint(&mut ctx),
        Experiment::Mather => run_mather(&mut ctx),
        Experiment::Regularize => run_regularize(&mut ctx),
        Experiment::Select => run_select(&mut ctx, true),
        Experiment::TheoremA => run_select(&mut ctx, false),
        Experiment::TheoremB => run_theorem_b(&mut ctx),
        Experiment::TheoremC => run_theorem_c(&mut ctx),
    }
}

fn run_solve(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let lambda = cfg.require_lambda()?;
    let (p, c_h) = problem(cfg)?;
    let r = solve(&p, lambda, cfg.experiment.params.eta, &cfg.solve_options())?;
    ctx.grid("u.csv", &r.u, "u")?;
    ctx.report(&json!({"c_h": c_h, "solve": solve_summary(&r)}))
}

fn run_ergodic(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let lambdas = cfg.experiment.params.lambdas.clone().unwrap_or_else(|| ERGODIC_LAMBDAS.to_vec());
    let p = cfg.problem(0.0)?;
    let est = estimate_ergodic_constant(&p, cfg.experiment.params.eta, &lambdas, &cfg.solve_options())?;
    let rows: Vec<Vec<Option<f64>>> = est.table.iter().map(|&(l, c)| vec![Some(l), Some(c)]).collect();
    ctx.table("ergodic.csv", &["lambda", "c"], &rows)?;
    ctx.report(&json!({"c_h": est.c_h, "eta": est.eta, "table": est.table}))
}

fn run_vv_gap(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let lambda = cfg.require_lambda()?;
    let etas = cfg.require_etas(2)?;
    let (p, c_h) = problem(cfg)?;
    let rep = vanishing_viscosity_gap(&p, lambda, etas, &cfg.solve_options())?;
    let rows: Vec<Vec<Option<f64>>> = rep
        .rows
        .iter()
        .map(|r| vec![Some(r.eta), r.gap, r.gap.map(|g| g / r.eta)])
        .collect();
    ctx.table("gap.csv", &["eta", "gap", "gap_over_eta"], &rows)?;
    let slope = rep.fit.as_ref().map(|f| f.slope);
    ctx.measure(
        "vv-gap slope >= 0.8",
        slope.is_some_and(|s| s >= 0.8),
        json!({"slope": slope, "ratio_spread": rep.ratio_spread}),
    );
    ctx.report(&json!({"c_h": c_h, "gap": rep}))
}

fn run_adjoint(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let prm = &cfg.experiment.params;
    let lambda = cfg.require_lambda()?;
    let (p, c_h) = problem(cfg)?;
    let r = solve(&p, lambda, prm.eta, &cfg.solve_options())?;
    let op = AdjointOperator::at_solution(&p, &r.u, lambda, prm.eta)?;
    let trials = default_trial_fields(&p.grid, prm.max_mode, prm.seed)?;
    let (m0, m1) = mass_bounds(&p, r.lambda_u_sup);
    let mut entries = Vec::new();
    for (k, x0) in cfg.x0_points().iter().enumerate() {
        let idx = p.grid.nearest_node(&x0[..p.grid.dim()]);
        let adj = op.solve(idx)?;
        let dual = duality_certificate(&adj, &op.jacobian, &trials);
        ctx.grid(&format!("sigma_{k}.csv"), &adj.sigma, "sigma")?;
        let detail = json!({
            "x0": x0, "x0_index": idx, "mass": adj.mass, "weighted_mass": adj.weighted_mass,
            "min_sigma": adj.sigma.min(), "mass_bounds": [m0, m1],
            "linear_residual": adj.linear_residual, "duality": dual,
        });
        entries.push(detail.clone());
        let mass_ok = (adj.weighted_mass - 1.0).abs() <= 1e-9
            && adj.sigma.min() >= -1e-9
            && adj.mass >= m0 * (1.0 - 1e-9)
            && adj.mass <= m1 * (1.0 + 1e-9);
        ctx.certify(&format!("adjoint mass x0[{k}]"), mass_ok, detail.clone())?;
        ctx.certify(&format!("duality x0[{k}]"), dual.pass, json!(dual))?;
    }
    ctx.grid("u.csv", &r.u, "u")?;
    ctx.report(&json!({"c_h": c_h, "solve": solve_summary(&r), "adjoints": entries}))
}

fn run_mather(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let prm = &cfg.experiment.params;
    let lambdas = cfg.require_lambdas(1)?;
    let (p, c_h) = problem(cfg)?;
    let fam = measure_family(&p, lambdas, prm.eta_rule, &cfg.x0_points(), prm.max_mode, &cfg.solve_options())?;
    let h = p.grid.spacing();
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for e in &fam.entries {
        let scale = h + e.lambda + e.eta;
        worst = worst.max(e.action.defect / scale).max(e.holonomy / scale);
        rows.push(vec![
            Some(e.x0_index as f64),
            Some(e.lambda),
            Some(e.eta),
            Some(e.action.defect),
            Some(e.holonomy),
            Some(e.mass),
            Some(e.weighted_mass),
        ]);
    }
    ctx.table(
        "mather.csv",
        &["x0_index", "lambda", "eta", "action_defect", "holonomy_defect", "mass", "weighted_mass"],
        &rows,
    )?;
    for e in fam.final_measures() {
        if ctx.csv() {
            ctx.out.write(&format!("measure_{}.csv", e.x0_index), measure_csv(&e.measure).as_bytes())?;
        }
    }
    let detail = json!({"max_defect_over_scale": worst, "c": prm.slack_c});
    ctx.report(&json!({
        "c_h": c_h,
        "lambdas": fam.lambdas,
        "tv_distances": fam.tv_distances,
        "max_defect_over_scale": worst,
    }))?;
    ctx.certify("mather identities", worst <= prm.slack_c, detail)
}

fn oracle_family(cfg: &RunConfig, p: &ProblemSpec) -> Result<SolutionFamily1D> {
    if p.grid.dim() != 1 || !cfg.first_order() {
        return Err(Error::Config {
            field: "model".into(),
            detail: format!("{} needs a 1D first-order model for the oracle family", cfg.experiment.name),
        });
    }
    oracle_solution_family(&p.hamiltonian, &p.grid, cfg.experiment.params.family_size)
}

fn run_regularize(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let prm = &cfg.experiment.params;
    let etas = cfg.require_etas(1)?;
    let (p, c_h) = problem(cfg)?;
    let (w, source) = if p.grid.dim() == 1 && cfg.first_order() {
        let fam = oracle_family(cfg, &p)?;
        let k = prm.representative.unwrap_or(0);
        (fam.representatives[k].clone(), json!({"oracle_representative": k}))
    } else {
        let lambda = cfg.require_lambda()?;
        (solve(&p, lambda, 0.0, &cfg.solve_options())?.u, json!({"solve_lambda": lambda}))
    };
    let mut rows = Vec::new();
    let mut certs = Vec::new();
    for (k, &eta) in etas.iter().enumerate() {
        let c = smooth_subsolution_certificate(&w, eta, &p, p.c_h)?;
        ctx.grid(&format!("w_reg_{k}.csv"), &c.w_reg, "w_reg")?;
        rows.push(vec![
            Some(eta),
            Some(c.params.eps),
            Some(c.params.delta),
            Some(c.params.k),
            Some(c.max_excess),
            Some(c.sup_distance),
        ]);
        certs.push(c);
    }
    ctx.table("regularize.csv", &["eta", "eps", "delta", "k", "excess", "sup_distance"], &rows)?;
    let slope = |f: fn(&crate::regularize::SubsolutionCertificate) -> f64| {
        let pairs: Vec<(f64, f64)> = certs.iter().map(|c| (c.params.eta, f(c))).collect();
        rate_fit(&pairs, prm.tol).ok().map(|r| r.slope)
    };
    let excess_slope = slope(|c| c.max_excess.max(0.0));
    let dist_slope = slope(|c| c.sup_distance);
    ctx.measure(
        "regularization rates >= 0.8",
        excess_slope.is_some_and(|s| s >= 0.8) && dist_slope.is_some_and(|s| s >= 0.8),
        json!({"excess_slope": excess_slope, "sup_distance_slope": dist_slope}),
    );
    ctx.grid("w.csv", &w, "w")?;
    ctx.report(&json!({
        "c_h": c_h,
        "source": source,
        "certificates": certs,
        "excess_slope": excess_slope,
        "sup_distance_slope": dist_slope,
    }))
}

fn sweep_and_measures(cfg: &RunConfig, p: &ProblemSpec) -> Result<(SweepResult, Vec<DiscreteMeasure>)> {
    let prm = &cfg.experiment.params;
    let lambdas = cfg.require_lambdas(4)?;
    let opts = SweepOptions {
        solve: cfg.solve_options(),
        eta_rule: prm.eta_rule,
        cauchy_tol: prm.cauchy_tol,
        richardson: false,
    };
    let sweep = lambda_sweep(p, lambdas, &opts)?;
    // Measures at the smaller half of the sequence.
    let tail = &lambdas[lambdas.len() / 2..];
    let fam = measure_family(p, tail, prm.eta_rule, &cfg.x0_points(), prm.max_mode, &cfg.solve_options())?;
    let measures = fam.entries.into_iter().map(|e| e.measure).collect();
    Ok((sweep, measures))
}

fn run_select(ctx: &mut Ctx, with_u_star: bool) -> Result<()> {
    let cfg = ctx.cfg;
    let prm = &cfg.experiment.params;
    let (p, c_h) = problem(cfg)?;
    let (sweep, measures) = sweep_and_measures(cfg, &p)?;
    let refs: Vec<&DiscreteMeasure> = measures.iter().collect();
    let rows: Vec<Vec<Option<f64>>> = sweep
        .rows
        .iter()
        .map(|r| {
            vec![
                Some(r.lambda),
                Some(r.eta),
                r.report.as_ref().map(|s| s.residual_sup),
                r.report.as_ref().map(|s| s.lipschitz),
                r.report.as_ref().map(|s| s.lambda_u_sup),
            ]
        })
        .collect();
    ctx.table("sweep.csv", &["lambda", "eta", "residual", "lipschitz", "lambda_u_sup"], &rows)?;
    let last = sweep.last().ok_or(Error::SweepFailed {
        failed: sweep.rows.len(),
        total: sweep.rows.len(),
    })?;
    let limit = sweep.limit.clone().unwrap_or_else(|| last.u.clone());
    ctx.grid("u_limit.csv", &limit, "u_limit")?;
    let ta = theorem_a_certificate(&sweep, &refs, &p, prm.slack_c)?;
    let mut report = json!({"c_h": c_h, "sweep": sweep_summary(&sweep), "theorem_a": ta});
    ctx.measure(
        "sweep distances decrease",
        sweep.distances_decrease,
        json!({"pairwise": sweep.pairwise}),
    );
    if with_u_star && p.grid.dim() == 1 && cfg.first_order() {
        let fam = oracle_family(cfg, &p)?;
        let us = u_star_brute_force(&fam, &refs, &p.potential, &p.discount)?;
        ctx.grid("u_star.csv", &us.u_star, "u_star")?;
        let dist = limit.sup_distance(&us.u_star)?;
        let bound = prm.slack_c * (p.grid.spacing() + last.lambda);
        report["selection"] = json!({"distance": dist, "bound": bound, "shifts": us.shifts});
        ctx.report(&report)?;
        ctx.certify("discounted constraint", ta.pass, json!({"min_margin": ta.min_margin, "slack": ta.slack}))?;
        return ctx.certify("selection consistency", dist <= bound, json!({"distance": dist, "bound": bound}));
    }
    ctx.report(&report)?;
    ctx.certify("discounted constraint", ta.pass, json!({"min_margin": ta.min_margin, "slack": ta.slack}))
}

fn run_theorem_b(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let prm = &cfg.experiment.params;
    let lambdas = cfg.require_lambdas(1)?;
    let (p, c_h) = problem(cfg)?;
    let fam = oracle_family(cfg, &p)?;
    let mf = measure_family(&p, lambdas, prm.eta_rule, &cfg.x0_points(), prm.max_mode, &cfg.solve_options())?;
    let finals = mf.final_measures();
    let refs: Vec<&DiscreteMeasure> = finals.iter().map(|e| &e.measure).collect();
    let lambda_min = *lambdas.last().expect("nonempty");
    let s = slack(prm.slack_c, p.grid.spacing(), lambda_min, prm.eta_rule.eta(lambda_min));
    let sigma = p.discount.sigma_field(&p.grid);
    let reps = &fam.representatives;
    let mut rows = Vec::new();
    let mut out = Vec::new();
    let mut push = |i: usize, j: usize, shift: f64, u1: &GridField, u2: &GridField| -> Result<()> {
        let r = theorem_b_experiment(u1, u2, &refs, &sigma, s)?;
        let code = match r.verdict {
            Verdict::Verified => 1.0,
            Verdict::Violated => -1.0,
            Verdict::NoClaim => 0.0,
        };
        let min_h = r.hypothesis_margins.iter().copied().fold(f64::INFINITY, f64::min);
        rows.push(vec![Some(i as f64), Some(j as f64), Some(shift), Some(min_h), Some(r.conclusion_margin), Some(code)]);
        out.push(json!({"u1": i, "u2": j, "shift": shift, "report": r}));
        Ok(())
    };
    for i in 0..reps.len() {
        for j in 0..reps.len() {
            if i != j {
                push(i, j, 0.0, &reps[i], &reps[j])?;
            }
        }
        push(i, i, 0.1, &reps[i], &reps[i].offset(0.1))?;
        // Deliberately hypothesis-violating.
        push(i, i, -0.1, &reps[i], &reps[i].offset(-0.1))?;
    }
    ctx.table(
        "theorem_b.csv",
        &["u1", "u2", "shift", "min_hypothesis_margin", "conclusion_margin", "verdict"],
        &rows,
    )?;
    let violated = rows.iter().filter(|r| r[5] == Some(-1.0)).count();
    let no_claim = rows.iter().filter(|r| r[5] == Some(0.0)).count();
    ctx.report(&json!({"c_h": c_h, "slack": s, "pairs": out}))?;
    ctx.certify(
        "comparison inequality",
        violated == 0,
        json!({"pairs": rows.len(), "violated": violated, "no_claim": no_claim}),
    )
}

fn run_theorem_c(ctx: &mut Ctx) -> Result<()> {
    let cfg = ctx.cfg;
    let prm = &cfg.experiment.params;
    let lambdas = cfg.require_lambdas(3)?;
    let (p, c_h) = problem(cfg)?;
    let fam = oracle_family(cfg, &p)?;
    let k = prm.representative.unwrap_or(fam.representatives.len() - 1);
    let u0 = &fam.representatives[k];
    let rep = theorem_c_harness(&p.clone().with_c_h(fam.c_h), u0, lambdas, &cfg.solve_options())?;
    let slope = rep.fit.as_ref().map(|f| f.slope);
    let rows: Vec<Vec<Option<f64>>> = rep
        .rows
        .iter()
        .map(|r| {
            vec![
                Some(r.lambda),
                Some(r.error),
                Some(r.bound),
                Some(if r.within_bound { 1.0 } else { 0.0 }),
                slope,
            ]
        })
        .collect();
    ctx.table("rate.csv", &["lambda", "error", "bound", "within_bound", "slope"], &rows)?;
    ctx.grid("u0.csv", u0, "u0")?;
    ctx.measure(
        "rate slope >= 0.9",
        slope.is_some_and(|s| s >= 0.9),
        json!({"slope": slope, "note": rep.fit_note, "floor": rep.floor}),
    );
    ctx.report(&json!({"c_h": c_h, "representative": k, "rate": rep}))?;
    ctx.certify(
        "rate bound",
        rep.all_within_bound,
        json!({"m": rep.constants.m, "m_scheme": rep.m_scheme}),
    )
}
