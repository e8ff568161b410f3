//! Command-line front end. Exit codes: 0 pass, 1 failure, 2 usage error.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use ovalflow::bryant::{default_table, series_at_origin};
use ovalflow::diagnostics::{asymptotics_snapshot, run_diagnostics};
use ovalflow::flow::rescaled::sigma_derivatives;
use ovalflow::flow::run::{ansatz_tip, default_ansatz, run, RunOutcome};
use ovalflow::geometry::{inverse_gauge, to_rescaled, GaugeParams};
use ovalflow::harness::{covering_grid, fit_gauge, perturbed_pair_ledger, AnsatzSource, GaugedSource};
use ovalflow::io::{parse_config, workspace_root, write_csv, write_json, write_run, write_tip_profile, ExperimentConfig};
use ovalflow::spectral::{energy_estimate_battery, neutral_mode_constant, operator_bounds, psi_norm_sq};
use ovalflow::suite::{run_suite, SuiteName};
use ovalflow::tip_chart::default_l;
use ovalflow::weights::{build_weight, poincare_battery, weight_properties, WeightSign};
use ovalflow::Error;

#[derive(Parser)]
#[command(name = "ovalflow", version, about = "Rotationally symmetric Ricci flow laboratory")]
struct Cli {
    /// JSON experiment config; its directory is the workspace root.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding the config's output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for the random batteries, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Acceptance,
    Quick,
}

#[derive(Subcommand)]
enum Command {
    /// Evolve the configured initial data and store snapshots plus a manifest.
    Simulate,
    /// Bryant profile table and its checks.
    Bryant,
    /// Gaussian spectral constants and the operator/energy batteries.
    SpectralCheck,
    /// Tip weight of the oval ansatz at tau0, its measured constants and the Poincare battery.
    WeightsReport,
    /// Gauge-fit round trip (when `gauge` is set) and the perturbed-pair norm ledger.
    Uniqueness,
    /// A-priori estimates and asymptotics on the oval ansatz at tau0.
    Diagnostics,
    /// Run an acceptance battery; exit 0 iff every criterion passes.
    Suite {
        #[arg(value_enum, default_value = "acceptance")]
        name: SuiteArg,
    },
}

struct Ctx {
    cfg: ExperimentConfig,
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Some(t) = cli.threads {
        if t == 0 || rayon::ThreadPoolBuilder::new().num_threads(t).build_global().is_err() {
            eprintln!("error: --threads must be a positive integer");
            return ExitCode::from(2);
        }
    }
    let (mut cfg, root) = match &cli.config {
        Some(p) => match parse_config(p) {
            Ok(c) => (c, workspace_root(p)),
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(2);
            }
        },
        None => (ExperimentConfig::default(), PathBuf::from(".")),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_path(&root));
    let ctx = Ctx { cfg, out };
    let result = match cli.command {
        Command::Simulate => simulate(&ctx),
        Command::Bryant => bryant(&ctx),
        Command::SpectralCheck => spectral(&ctx),
        Command::WeightsReport => weights(&ctx),
        Command::Uniqueness => uniqueness(&ctx),
        Command::Diagnostics => diagnostics(&ctx),
        Command::Suite { name } => suite(&ctx, name),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

type CmdResult = Result<bool, Error>;

/// Write the report to `<out>/<name>.json` and echo it.
fn report(ctx: &Ctx, name: &str, value: &serde_json::Value) -> Result<(), Error> {
    write_json(&ctx.out.join(format!("{name}.json")), value)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Io(e.to_string()))?;
    emit(&text);
    Ok(())
}

/// Print to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    let _ = writeln!(std::io::stdout(), "{}", text.trim_end());
}

fn simulate(ctx: &Ctx) -> CmdResult {
    let out = run(&ctx.cfg.solver())?;
    let states = if out.physical.is_empty() {
        out.rescaled
    } else {
        out.physical.iter().map(to_rescaled).collect::<Result<Vec<_>, _>>()?
    };
    let outcome = match out.outcome {
        RunOutcome::Completed => "completed".to_string(),
        RunOutcome::BlowUp { time, rate } => format!("blow-up at {time} (rate {rate})"),
    };
    let m = write_run(&ctx.out, &ctx.cfg, &states, &outcome)?;
    emit(&json!({ "outcome": outcome, "snapshots": m.snapshots.len(), "manifest": ctx.out.join("manifest.json") }).to_string());
    Ok(matches!(out.outcome, RunOutcome::Completed))
}

fn bryant(ctx: &Ctx) -> CmdResult {
    let t = default_table();
    let c = series_at_origin(8);
    let hash = ctx.cfg.hash();
    let rows: Vec<Vec<f64>> = (0..t.rho.len()).map(|i| vec![t.rho[i], t.z[i], t.dz[i]]).collect();
    write_csv(&ctx.out.join("bryant.csv"), &hash, &["rho", "Z", "Z_rho"], &rows)?;
    let (z20, dz20) = t.eval(20.0);
    report(
        ctx,
        "bryant",
        &json!({
            "series_coefficients": c,
            "rho2_z_at_10": 100.0 * t.z(10.0),
            "rho4_far_field_defect_at_20": (20.0 * dz20 + 2.0 * z20) * 20f64.powi(4),
            "tip_scalar_curvature": t.tip_scalar_curvature(1e-3),
            "far_field_onset": t.far_field_onset(),
            "max_residual": t.max_residual,
            "table_csv": "bryant.csv",
        }),
    )?;
    Ok(true)
}

fn spectral(ctx: &Ctx) -> CmdResult {
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let ob = operator_bounds(ctx.cfg.seed, ctx.cfg.battery_size);
    let en = energy_estimate_battery(ctx.cfg.seed, ctx.cfg.battery_size);
    let nc = neutral_mode_constant();
    report(
        ctx,
        "spectral",
        &json!({
            "psi2_norm_sq": psi_norm_sq(2),
            "psi2_norm_sq_expected": 16.0 * sqrt_pi,
            "neutral_mode_constant": nc,
            "operator_bounds": ob,
            "energy_battery": en,
            "seed": ctx.cfg.seed,
        }),
    )?;
    Ok((nc - 8.0).abs() <= 1e-10)
}

fn weights(ctx: &Ctx) -> CmdResult {
    let (tau, theta) = (ctx.cfg.tau0, ctx.cfg.theta);
    let l = ctx.cfg.l.unwrap_or_else(default_l);
    let series = [tau - 0.1, tau, tau + 0.1].iter().map(|t| ansatz_tip(*t, theta, 2001)).collect::<Result<Vec<_>, _>>()?;
    let rep = weight_properties(&series, theta, l, 0.25)?;
    let tw = build_weight(&series[1], theta)?;
    let hash = ctx.cfg.hash();
    write_tip_profile(&ctx.out.join("tip_profile.csv"), &series[1], &hash)?;
    let rows: Vec<Vec<f64>> = (0..tw.u.len()).map(|i| vec![tw.u[i], tw.sigma[i], tw.mu[i], tw.mu_u[i], tw.mu_uu[i], tw.zeta[i]]).collect();
    write_csv(&ctx.out.join("weight.csv"), &hash, &["u", "sigma", "mu", "mu_u", "mu_uu", "zeta"], &rows)?;
    let tip = ansatz_tip(tau, theta, 4001)?;
    let tw4 = build_weight(&tip, theta)?;
    let minus = poincare_battery(&tw4, ctx.cfg.seed, ctx.cfg.battery_size, WeightSign::Minus, Some(4.0));
    let plus = poincare_battery(&tw4, ctx.cfg.seed, ctx.cfg.battery_size, WeightSign::Plus, Some(4.0));
    let pass = rep.measures.iter().all(|m| m.pass) && minus.max_ratio <= 10.0;
    report(
        ctx,
        "weights",
        &json!({
            "properties": rep,
            "poincare_minus": { "max_ratio": minus.max_ratio, "min_defect": minus.min_defect, "count": minus.count, "rho_span": minus.rho_span },
            "poincare_plus": { "max_ratio": plus.max_ratio, "min_defect": plus.min_defect, "count": plus.count, "rho_span": plus.rho_span },
            "seed": ctx.cfg.seed,
        }),
    )?;
    Ok(pass)
}

fn uniqueness(ctx: &Ctx) -> CmdResult {
    let mut pass = true;
    let round_trip = match ctx.cfg.gauge {
        Some(g) => {
            let tau0 = ctx.cfg.tau0;
            let src = AnsatzSource::default();
            let star = GaugeParams { beta_hat: g.beta_hat, gamma: g.gamma, tau0 };
            let second = GaugedSource { base: &src, gauge: star };
            let grid = covering_grid(&src, &[tau0], src.at(tau0)?.default_nodes())?;
            let fit = fit_gauge(&src, &second, tau0, ctx.cfg.theta, &grid)?;
            let truth = inverse_gauge(&star, tau0);
            let rel = |a: f64, b: f64| if b == 0.0 { a.abs() } else { (a / b - 1.0).abs() };
            let (eb, eg) = (rel(fit.gauge.beta_hat, truth.beta_hat), rel(fit.gauge.gamma, truth.gamma));
            pass &= eb <= 1e-6 && eg <= 1e-6;
            json!({ "constructed": star, "expected": truth, "fit": fit, "beta_rel_error": eb, "gamma_rel_error": eg })
        }
        None => serde_json::Value::Null,
    };
    let (fit, led) = perturbed_pair_ledger(&ctx.cfg.perturbed)?;
    let hash = ctx.cfg.hash();
    let rows: Vec<Vec<f64>> = led
        .per_time
        .iter()
        .map(|b| vec![b.tau, b.a, b.w_hat_d, b.w_c_d, b.w_c_h, b.w_t_tip])
        .collect();
    write_csv(&ctx.out.join("ledger_series.csv"), &hash, &["tau", "a", "w_hat_d", "w_c_d", "w_c_h", "w_t_tip"], &rows)?;
    pass &= led.entries.iter().all(|e| e.pass != Some(false));
    report(ctx, "uniqueness", &json!({ "round_trip": round_trip, "perturbed": { "config": ctx.cfg.perturbed, "fit": fit, "ledger": led } }))?;
    Ok(pass)
}

fn diagnostics(ctx: &Ctx) -> CmdResult {
    let a = default_ansatz(ctx.cfg.tau0)?;
    let state = a.state(a.default_nodes());
    let rep = run_diagnostics(&state, &ctx.cfg.diagnostics)?;
    let snap = asymptotics_snapshot(&state)?;
    let (us, uss) = sigma_derivatives(&state.sigma, &state.u);
    let rows: Vec<Vec<f64>> = (0..state.u.len())
        .map(|i| {
            let (s, u) = (state.sigma[i], state.u[i]);
            vec![s, u, us[i], uss[i], 2.0 * (us[i] * us[i] + u * uss[i]), 1.0 + 0.5 * s * u * us[i], -u * uss[i] / (1.0 - us[i] * us[i])]
        })
        .collect();
    write_csv(
        &ctx.out.join("diagnostics_nodes.csv"),
        &ctx.cfg.hash(),
        &["sigma", "u", "u_sigma", "u_sigmasigma", "u2_sigmasigma", "crucial", "cylindricality"],
        &rows,
    )?;
    let pass = rep.checks.iter().all(|c| c.passed());
    report(ctx, "diagnostics", &json!({ "report": rep, "asymptotics": snap }))?;
    Ok(pass)
}

fn suite(ctx: &Ctx, name: SuiteArg) -> CmdResult {
    let name = match name {
        SuiteArg::Acceptance => SuiteName::Acceptance,
        SuiteArg::Quick => SuiteName::Quick,
    };
    let r = run_suite(name);
    let path: &Path = &ctx.out.join(format!("suite_{}.json", name.label()));
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d)?;
    }
    std::fs::write(path, r.summary.to_json())?;
    emit(&r.summary.to_json());
    for (k, c) in r.summary.criteria.iter().enumerate() {
        if !r.within_budget(k) {
            eprintln!("criterion {} exceeded its {} s budget ({:.1} s)", c.id, c.budget_s.unwrap_or(0.0), r.elapsed[k]);
        }
    }
    let in_budget = (0..r.elapsed.len()).all(|k| r.within_budget(k));
    Ok(r.summary.pass && in_budget)
}
