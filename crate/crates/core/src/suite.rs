//! The acceptance battery: eleven criteria, each a list of measured checks
//! against fixed thresholds. The JSON summary holds no timings, so repeated
//! runs are byte-identical; wall-clock times are returned separately.

use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::bryant::{default_table, series_at_origin};
use crate::diagnostics::{asymptotics_report, asymptotics_snapshot, run_diagnostics, DiagnosticsConfig};
use crate::error::Result;
use crate::flow::physical::rhs_physical;
use crate::flow::run::{ansatz_tip, default_ansatz, run, sphere_radius_law, InitialKind, SolverConfig};
use crate::flow::{compute_j, restrict, rhs_rescaled};
use crate::geometry::{
    inverse_gauge, reference_cylinder_profile, reference_rescaled, reference_sphere_profile, uniform, GaugeParams,
    ReferenceKind,
};
use crate::harness::{
    covering_grid, fit_gauge, homogeneous_neutral_check, perturbed_pair_ledger, AnsatzSource, GaugedSource, PerturbedRun,
};
use crate::numerics::{max_abs, observed_orders};
use crate::spectral::{apply_l, default_spectral, neutral_mode_constant, project, psi_n};
use crate::tip_chart::default_l;
use crate::weights::{build_weight, poincare_battery, weight_properties, WeightSign};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SuiteName {
    /// All eleven criteria.
    Acceptance,
    /// The criteria that finish in seconds: 1, 3, 4, 5, 6 and 11.
    Quick,
}

impl SuiteName {
    pub fn label(&self) -> &'static str {
        match self {
            SuiteName::Acceptance => "acceptance",
            SuiteName::Quick => "quick",
        }
    }

    pub fn criteria(&self) -> Vec<u32> {
        match self {
            SuiteName::Acceptance => (1..=11).collect(),
            SuiteName::Quick => vec![1, 3, 4, 5, 6, 11],
        }
    }
}

/// One measured quantity with its acceptance relation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubCheck {
    pub name: String,
    /// None when the quantity could not be formed (empty region, error).
    pub measured: Option<f64>,
    /// Human-readable relation, e.g. "<= 1e-8" or "in [0.9, 1.1]".
    pub threshold: String,
    pub pass: bool,
    pub note: Option<String>,
}

impl SubCheck {
    fn le(name: &str, v: f64, t: f64) -> Self {
        Self { name: name.into(), measured: Some(v), threshold: format!("<= {t:e}"), pass: v <= t, note: None }
    }

    fn within(name: &str, v: f64, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), measured: Some(v), threshold: format!("in [{lo}, {hi}]"), pass: (lo..=hi).contains(&v), note: None }
    }

    fn ge(name: &str, v: f64, t: f64) -> Self {
        Self { name: name.into(), measured: Some(v), threshold: format!(">= {t}"), pass: v >= t, note: None }
    }

    fn missing(name: &str, threshold: String, note: String) -> Self {
        Self { name: name.into(), measured: None, threshold, pass: false, note: Some(note) }
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriterionResult {
    pub id: u32,
    pub name: String,
    /// Wall-clock budget in seconds, checked by the runner, not stored.
    pub budget_s: Option<f64>,
    pub checks: Vec<SubCheck>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteSummary {
    pub suite: String,
    pub pass: bool,
    pub passed: usize,
    pub total: usize,
    pub criteria: Vec<CriterionResult>,
}

impl SuiteSummary {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serializes");
        s.push('\n');
        s
    }

    pub fn exit_code(&self) -> i32 {
        if self.pass {
            0
        } else {
            1
        }
    }
}

pub struct SuiteRun {
    pub summary: SuiteSummary,
    /// Wall-clock seconds per criterion, in summary order.
    pub elapsed: Vec<f64>,
}

impl SuiteRun {
    /// Criterion passes and, when it has a budget, finished within it.
    pub fn within_budget(&self, k: usize) -> bool {
        self.summary.criteria[k].budget_s.map_or(true, |b| self.elapsed[k] <= b)
    }
}

pub fn criterion_name(id: u32) -> &'static str {
    match id {
        1 => "exact cylinder regression",
        2 => "shrinking-sphere law",
        3 => "rescaled sphere stationarity",
        4 => "spectral constants",
        5 => "linearized growth of the constant mode",
        6 => "Bryant soliton",
        7 => "oval asymptotics scorecard",
        8 => "a-priori estimates on the oval ansatz",
        9 => "weight and Poincare suite",
        10 => "gauge-fit round trip and neutral dominance",
        11 => "discretization order",
        _ => "unknown",
    }
}

fn budget(id: u32) -> Option<f64> {
    match id {
        1 => Some(10.0),
        2 => Some(30.0),
        6 => Some(5.0),
        _ => None,
    }
}

fn evaluate(id: u32) -> Result<Vec<SubCheck>> {
    match id {
        1 => exact_cylinder(),
        2 => sphere_law(),
        3 => sphere_stationarity(),
        4 => spectral_constants(),
        5 => linear_growth(),
        6 => bryant(),
        7 => scorecard(),
        8 => apriori(),
        9 => weights_suite(),
        10 => uniqueness(),
        11 => orders(),
        _ => Ok(vec![]),
    }
}

fn run_one(id: u32) -> (CriterionResult, f64) {
    let start = Instant::now();
    let checks = match evaluate(id) {
        Ok(c) => c,
        Err(e) => vec![SubCheck::missing("evaluation", "completes".into(), e.to_string())],
    };
    let elapsed = start.elapsed().as_secs_f64();
    let pass = !checks.is_empty() && checks.iter().all(|c| c.pass);
    (CriterionResult { id, name: criterion_name(id).into(), budget_s: budget(id), checks, pass }, elapsed)
}

/// Run the named battery on the current rayon pool.
pub fn run_suite(name: SuiteName) -> SuiteRun {
    run_criteria(name.label(), &name.criteria())
}

pub fn run_criteria(label: &str, ids: &[u32]) -> SuiteRun {
    let (criteria, elapsed): (Vec<CriterionResult>, Vec<f64>) = ids.par_iter().map(|&id| run_one(id)).unzip();
    let passed = criteria.iter().filter(|c| c.pass).count();
    let summary = SuiteSummary { suite: label.into(), pass: passed == criteria.len(), passed, total: criteria.len(), criteria };
    SuiteRun { summary, elapsed }
}

const SQRT2: f64 = std::f64::consts::SQRT_2;

fn exact_cylinder() -> Result<Vec<SubCheck>> {
    let cfg = SolverConfig { kind: InitialKind::Cylinder, n: 256, tau_init: -20.0, tau_end: -10.0, ..Default::default() };
    let out = run(&cfg)?;
    let last = out.rescaled.last().expect("run returns its initial state");
    let dev: Vec<f64> = last.u.iter().map(|u| u - SQRT2).collect();
    Ok(vec![
        SubCheck::le("elapsed rescaled time short of 10", (10.0 - (last.tau - cfg.tau_init)).abs(), 1e-12),
        SubCheck::le("max |u - sqrt2| after 10 units", max_abs(&dev), 1e-8),
    ])
}

fn sphere_law() -> Result<Vec<SubCheck>> {
    let law = sphere_radius_law(128, 2.0, 0.5, 0.2)?;
    Ok(vec![
        SubCheck::le("relative error of the r^2-vs-t slope against -4", (law.slope / -4.0 - 1.0).abs(), 1e-3)
            .with_note(format!("slope {} from {} samples", law.slope, law.samples)),
        SubCheck::le("final radius minus 0.5", law.final_radius - 0.5, 1e-2),
    ])
}

fn sphere_stationarity() -> Result<Vec<SubCheck>> {
    let s = reference_rescaled(ReferenceKind::Sphere, 512, 0.0, 0.0);
    let r = rhs_rescaled(&s, 0.0125)?;
    let block = restrict(&s, 0.0125)?;
    let j = compute_j(&block)?;
    let jdev: Vec<f64> = block.sigma.iter().zip(&j).map(|(sg, jv)| jv + 0.5 * sg).collect();
    Ok(vec![
        SubCheck::le("sup |u_tau| of 2cos(sigma/2), N = 512", max_abs(&r.rates), 1e-10)
            .with_note(format!("{} nodes with u >= 0.0125", r.rates.len())),
        SubCheck::le("sup |J + sigma/2|", max_abs(&jdev), 1e-10),
    ])
}

fn spectral_constants() -> Result<Vec<SubCheck>> {
    let q = &default_spectral().quad;
    let sqrt_pi = std::f64::consts::PI.sqrt();
    let x = uniform(-4.0, 4.0, 81);
    let p2: Vec<f64> = x.iter().map(|s| psi_n(2, *s)).collect();
    Ok(vec![
        SubCheck::le("|int dmu - 2 sqrt(pi)|", (q.integrate(|_| 1.0) - 2.0 * sqrt_pi).abs(), 1e-10),
        SubCheck::le("|‖psi_2‖^2 - 16 sqrt(pi)|", (q.integrate(|s| psi_n(2, s).powi(2)) - 16.0 * sqrt_pi).abs(), 1e-10),
        SubCheck::le("|<psi_2^2, psi_2>/‖psi_2‖^2 - 8|", (neutral_mode_constant() - 8.0).abs(), 1e-10),
        SubCheck::le("max |L psi_2| on |sigma| <= 4, h = 0.1", max_abs(&apply_l(&x, &p2)), 1e-8),
    ])
}

fn linear_growth() -> Result<Vec<SubCheck>> {
    let cfg = SolverConfig {
        kind: InitialKind::PerturbedCylinder,
        n: 256,
        epsilon: 1e-5,
        tau_init: -20.0,
        tau_end: -19.0,
        ..Default::default()
    };
    let out = run(&cfg)?;
    let (first, last) = (&out.rescaled[0], out.rescaled.last().unwrap());
    let a0 = |s: &crate::geometry::RescaledState| -> Result<f64> {
        let w: Vec<f64> = s.u.iter().map(|u| u - SQRT2).collect();
        Ok(project(&s.sigma, &w)?.a0)
    };
    let factor = a0(last)? / a0(first)?;
    Ok(vec![SubCheck::within("P+ growth factor over one unit / e", factor / std::f64::consts::E, 0.98, 1.02)])
}

fn bryant() -> Result<Vec<SubCheck>> {
    let c = series_at_origin(8);
    let t = default_table();
    let (z20, dz20) = t.eval(20.0);
    let defect = (20.0 * dz20 + 2.0 * z20) * 20f64.powi(4);
    Ok(vec![
        SubCheck::le("|c2 + 1/6|", (c[1] + 1.0 / 6.0).abs(), 1e-14),
        SubCheck::le("|c4 - 1/90|", (c[2] - 1.0 / 90.0).abs(), 1e-14),
        SubCheck::within("rho^2 Z0 at rho = 10", 100.0 * t.z(10.0), 1.01, 1.03),
        SubCheck::le("relative error of rho^4 (rho Z0' + 2 Z0) at rho = 20 against -4", (defect / -4.0 - 1.0).abs(), 0.1),
        SubCheck::le("|tip scalar curvature - 1| at rho = 1e-3", (t.tip_scalar_curvature(1e-3) - 1.0).abs(), 1e-6),
    ])
}

fn scorecard() -> Result<Vec<SubCheck>> {
    let tau = -400.0;
    let a = default_ansatz(tau)?;
    let snap = asymptotics_snapshot(&a.state(a.default_nodes()))?;
    let mut checks = Vec::new();
    match snap.inner.as_ref() {
        Some(f) => checks.push(SubCheck::within("inner-fit slope against sigma^2 - 2", f.slope, 0.9, 1.1)),
        None => checks.push(SubCheck::missing("inner-fit slope", "in [0.9, 1.1]".into(), "no node on |sigma| <= 2".into())),
    }
    match snap.intermediate_dev {
        Some(v) => checks.push(SubCheck::le("sup |u - sqrt(2 - z^2/2)| on |z| <= 1.8", v, 0.03)),
        None => checks.push(SubCheck::missing("intermediate deviation", "<= 0.03".into(), "empty region".into())),
    }
    match snap.tip_location {
        Some(v) => checks.push(SubCheck::within("sigma+ / (2 sqrt|tau|)", v, 0.95, 1.05)),
        None => checks.push(SubCheck::missing("tip location", "in [0.95, 1.05]".into(), "open profile".into())),
    }
    let cfg = SolverConfig {
        kind: InitialKind::Oval,
        n: crate::flow::run::min_oval_nodes(tau, 1.85).max(701),
        tau_init: tau,
        tau_end: tau + 5.0,
        ..Default::default()
    };
    let out = run(&cfg)?;
    let rep = asymptotics_report(&out.rescaled)?;
    let note = "evolved block |z| <= 1.85; the tips are outside the block, so the tip location is not tracked";
    for (name, v) in [("inner-slope drift after 5 units", rep.slope_drift), ("intermediate-deviation drift after 5 units", rep.intermediate_drift)] {
        match v {
            Some(v) => checks.push(SubCheck::le(name, v, 0.5).with_note(note)),
            None => checks.push(SubCheck::missing(name, "<= 0.5".into(), "metric undefined at an endpoint".into())),
        }
    }
    Ok(checks)
}

fn apriori() -> Result<Vec<SubCheck>> {
    let a = default_ansatz(-400.0)?;
    let cfg = DiagnosticsConfig { theta: 0.1, l: 20.0, ..Default::default() };
    let rep = run_diagnostics(&a.state(a.default_nodes()), &cfg)?;
    let names = [
        ("concavity", "max (u^2)_ss on u >= L/sqrt|tau|"),
        ("crucial_estimate", "max |1 + sigma u u_s/2| on the collar"),
        ("cylindricality", "max -u u_ss/(1 - u_s^2) on u >= L/sqrt|tau|"),
        ("derivative_bounds", "max sqrt|tau|(|u_s| + |u_ss| + |u_sss|) on u >= theta/4"),
    ];
    Ok(names
        .iter()
        .map(|(key, label)| match rep.get(key) {
            Some(c) => SubCheck {
                name: (*label).into(),
                measured: c.value,
                threshold: format!("<= {:e}", c.threshold),
                pass: c.passed(),
                note: c.note.clone(),
            },
            None => SubCheck::missing(label, "present".into(), "check not produced".into()),
        })
        .collect())
}

fn weights_suite() -> Result<Vec<SubCheck>> {
    let theta = 0.1;
    let series = [-400.1, -400.0, -399.9].iter().map(|t| ansatz_tip(*t, theta, 2001)).collect::<Result<Vec<_>>>()?;
    let rep = weight_properties(&series, theta, default_l(), 0.25)?;
    let mut checks = vec![SubCheck::le("max mu + |tau|/4 on the tip region", rep.mu_max_tip + 100.0, 0.0)];
    match rep.measures.iter().find(|m| m.name.starts_with("muu")) {
        Some(m) => match m.value {
            Some(v) => checks.push(
                SubCheck::le("max mu_uu / mu_u^2 on the collar", v, 0.25)
                    .with_note(format!("collar rho in [{:.3}, {}]", default_l(), 2.0 * theta * 20.0)),
            ),
            None => checks.push(SubCheck::missing("max mu_uu / mu_u^2 on the collar", "<= 0.25".into(), "empty collar".into())),
        },
        None => checks.push(SubCheck::missing("mu_uu measure", "present".into(), "not produced".into())),
    }
    let mut maxima = Vec::new();
    for tau in [-400.0, -800.0] {
        let tw = build_weight(&ansatz_tip(tau, theta, 4001)?, theta)?;
        maxima.push(poincare_battery(&tw, 7, 100, WeightSign::Minus, Some(4.0)).max_ratio);
    }
    checks.push(SubCheck::le("Poincare max ratio, 100 bumps, tau = -400", maxima[0], 10.0));
    checks.push(SubCheck::le("relative change of the max ratio at tau = -800", (maxima[1] / maxima[0] - 1.0).abs(), 0.2));
    Ok(checks)
}

fn uniqueness() -> Result<Vec<SubCheck>> {
    let src = AnsatzSource::default();
    let tau0: f64 = -400.0;
    let star = GaugeParams::from_beta(0.05 * (-tau0).exp() / tau0.abs(), 0.5, tau0);
    let second = GaugedSource { base: &src, gauge: star };
    let grid = covering_grid(&src, &[tau0], src.at(tau0)?.default_nodes())?;
    let fit = fit_gauge(&src, &second, tau0, 0.1, &grid)?;
    let truth = inverse_gauge(&star, tau0);
    let mut checks = vec![
        SubCheck::ge("constructed gauge admissible (1 = yes)", star.admissible(0.1) as u8 as f64, 1.0),
        SubCheck::le("relative error of the recovered beta", (fit.gauge.beta_hat / truth.beta_hat - 1.0).abs(), 1e-6),
        SubCheck::le("relative error of the recovered gamma", (fit.gauge.gamma / truth.gamma - 1.0).abs(), 1e-6),
        SubCheck::le("max |post-fit projection|", fit.projections[0].abs().max(fit.projections[1].abs()), 1e-10),
    ];
    let (pfit, led) = perturbed_pair_ledger(&PerturbedRun::default())?;
    match led.entries.iter().find(|e| e.name == "neutral_dominance").and_then(|e| e.measured) {
        Some(v) => checks.push(
            SubCheck::le("sup-windowed ‖w_hat_C‖_D / ‖P0 w_C‖_D, perturbed pair at tau0 = -400", v, 0.5).with_note(format!(
                "fitted gauge admissible: {}; 40-unit history window",
                pfit.gauge.admissible(0.1)
            )),
        ),
        None => checks.push(SubCheck::missing("neutral dominance", "<= 0.5".into(), "both norms vanish".into())),
    }
    checks.push(SubCheck::le(
        "relative deviation of a(tau) from a tau0^2/tau^2 with F = 0",
        homogeneous_neutral_check(tau0, 1e-3, &[-401.0, -410.0, -800.0, -300.0])?,
        1e-8,
    ));
    Ok(checks)
}

fn orders() -> Result<Vec<SubCheck>> {
    let ns = [128, 256, 512];
    let sphere: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let s = reference_sphere_profile(n, 2.0, -1.0);
            let (_, psi_t) = rhs_physical(&s)?;
            Ok((0..n).map(|i| (psi_t[i] + 0.5 * s.psi[i]).abs()).fold(0.0, f64::max))
        })
        .collect::<Result<_>>()?;
    let cylinder: Vec<f64> = ns
        .iter()
        .map(|&n| {
            let t = -2.0;
            let s = reference_cylinder_profile(n, 3.0, t);
            let (_, psi_t) = rhs_physical(&s)?;
            let want = -1.0 / (-2.0 * t).sqrt();
            Ok((2..n - 2).map(|i| (psi_t[i] - want).abs()).fold(0.0, f64::max))
        })
        .collect::<Result<_>>()?;
    let mut checks: Vec<SubCheck> = observed_orders(&sphere)
        .iter()
        .zip(["128 -> 256", "256 -> 512"])
        .map(|(p, lbl)| SubCheck::ge(&format!("sphere residual order, N = {lbl}"), *p, 1.9))
        .collect();
    let cyl_max = cylinder.iter().cloned().fold(0.0, f64::max);
    if cyl_max <= 1e-12 {
        checks.push(
            SubCheck::le("cylinder residual at N = 128, 256, 512", cyl_max, 1e-12)
                .with_note("the scheme is exact on the cylinder; the residual is roundoff at every N"),
        );
    } else {
        checks.extend(
            observed_orders(&cylinder)
                .iter()
                .zip(["128 -> 256", "256 -> 512"])
                .map(|(p, lbl)| SubCheck::ge(&format!("cylinder residual order, N = {lbl}"), *p, 1.9)),
        );
    }
    Ok(checks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quick_criteria_pass_and_serialize_deterministically() {
        let a = run_suite(SuiteName::Quick);
        for c in &a.summary.criteria {
            assert!(c.pass, "{c:?}");
        }
        let b = run_suite(SuiteName::Quick);
        assert_eq!(a.summary.to_json(), b.summary.to_json());
        assert_eq!(a.summary.exit_code(), 0);
    }

    #[test]
    fn errors_become_failing_checks() {
        let (r, _) = run_one(99);
        assert!(!r.pass);
        assert!(r.checks.is_empty());
    }
}
