//! A-priori checks on single snapshots: derivative bounds in the cylindrical
//! region, u^2-concavity, the collar matching estimate, the curvature-ratio
//! estimate, and the asymptotic-profile scorecard.

use serde::{Deserialize, Serialize};

use crate::bryant::BryantTable;
use crate::error::{Error, Result};
use crate::flow::ansatz::intermediate_profile;
use crate::flow::rescaled::sigma_derivatives;
use crate::geometry::{curvatures_rescaled, RescaledState};
use crate::numerics::linear_fit;
use crate::tip_chart::{invert_on_grid, y_derivatives};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shape {
    /// No tips in the data: the cylinder or a cylindrical block.
    Open,
    /// Closed with tips near 2 sqrt|tau|.
    Oval,
    /// Closed but not oval-like (the shrinking sphere).
    Compact,
}

/// Oval when the tip sits within a factor 2 of 2 sqrt|tau|.
pub fn classify(state: &RescaledState) -> Shape {
    if !(state.sigma_plus.is_finite() && state.sigma_minus.is_finite()) {
        return Shape::Open;
    }
    let r = state.sigma_plus / (2.0 * state.tau.abs().sqrt());
    if (0.5..=2.0).contains(&r) {
        Shape::Oval
    } else {
        Shape::Compact
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnosticsConfig {
    pub theta: f64,
    pub l: f64,
    pub derivative_bound: f64,
    pub concavity_tol: f64,
    pub crucial_eta: f64,
    pub cylindricality_eta: f64,
    pub tip_ratio_band: (f64, f64),
    pub inner_slope_band: (f64, f64),
    pub intermediate_tol: f64,
    pub tip_location_band: (f64, f64),
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            theta: 0.1,
            l: 20.0,
            derivative_bound: 5.0,
            concavity_tol: 1e-8,
            crucial_eta: 0.25,
            cylindricality_eta: 0.2,
            tip_ratio_band: (0.9, 1.1),
            inner_slope_band: (0.9, 1.1),
            intermediate_tol: 0.03,
            tip_location_band: (0.95, 1.05),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    /// The estimate's hypotheses exclude this input.
    NotApplicable,
    /// The region the estimate lives on holds no grid node.
    EmptyRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub region: String,
    pub value: Option<f64>,
    pub threshold: f64,
    pub verdict: Verdict,
    pub tau_range: (f64, f64),
    /// The estimate the check measures, as a formula.
    pub anchor: String,
    pub note: Option<String>,
}

impl Check {
    fn measured(name: &str, region: &str, value: f64, threshold: f64, ok: bool, tau: f64, anchor: &str) -> Self {
        Self {
            name: name.into(),
            region: region.into(),
            value: Some(value),
            threshold,
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            tau_range: (tau, tau),
            anchor: anchor.into(),
            note: None,
        }
    }

    fn without_value(name: &str, region: &str, threshold: f64, verdict: Verdict, tau: f64, anchor: &str, note: String) -> Self {
        Self {
            name: name.into(),
            region: region.into(),
            value: None,
            threshold,
            verdict,
            tau_range: (tau, tau),
            anchor: anchor.into(),
            note: Some(note),
        }
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub shape: Shape,
    pub checks: Vec<Check>,
}

impl DiagnosticsReport {
    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

/// Nodes inside the manifold (between the tips, u > 0).
fn interior(state: &RescaledState) -> impl Fn(usize) -> bool + '_ {
    move |i| state.u[i] > 0.0 && state.sigma[i] > state.sigma_minus && state.sigma[i] < state.sigma_plus
}

fn sup_over(idx: impl Iterator<Item = usize>, f: impl Fn(usize) -> f64) -> Option<f64> {
    idx.map(f).fold(None, |m, v| Some(m.map_or(v, |m: f64| m.max(v))))
}

/// (u_s, u_ss, u_sss); the center value is removed first so constants
/// difference to exactly zero.
fn sigma_derivs(state: &RescaledState) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let c = state.u[state.u.len() / 2];
    let shifted: Vec<f64> = state.u.iter().map(|v| v - c).collect();
    let (us, uss) = sigma_derivatives(&state.sigma, &shifted);
    let (usss, _) = sigma_derivatives(&state.sigma, &uss);
    (us, uss, usss)
}

fn check_time(state: &RescaledState) -> Result<()> {
    if state.tau > -1.0 {
        return Err(Error::InvalidTime(state.tau));
    }
    Ok(())
}

const DER_ANCHOR: &str = "|u_s| + |u_ss| + |u_sss| <= C(theta)/sqrt|tau| on u >= theta/4";

/// sup over u >= theta/4 of sqrt|tau| (|u_s| + |u_ss| + |u_sss|).
pub fn derivative_bounds(state: &RescaledState, theta: f64) -> Result<Option<f64>> {
    check_time(state)?;
    let (us, uss, usss) = sigma_derivs(state);
    let inside = interior(state);
    let sq = state.tau.abs().sqrt();
    Ok(sup_over(
        (0..state.u.len()).filter(|&i| inside(i) && state.u[i] >= theta / 4.0),
        |i| sq * (us[i].abs() + uss[i].abs() + usss[i].abs()),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcavityReport {
    /// max of (u^2)_ss over u >= L/sqrt|tau|
    pub sigma_max: Option<f64>,
    /// max of u Y_u + 2Y over the collar L/sqrt|tau| <= u <= 2 theta, from the tip chart
    pub tip_form_max: Option<f64>,
    /// (u^2)_ss = u Y_u + 2Y where u = L/sqrt|tau| on the right branch
    pub boundary: Option<f64>,
}

/// u^2-concavity on u >= L/sqrt|tau|, in both the sigma form (u^2)_ss and the
/// tip form u Y_u + 2Y (they agree since Y_u = 2 u_ss).
pub fn concavity_check(state: &RescaledState, theta: f64, l: f64) -> Result<ConcavityReport> {
    check_time(state)?;
    let us_level = l / state.tau.abs().sqrt();
    let (us, uss, _) = sigma_derivs(state);
    let q: Vec<f64> = (0..state.u.len()).map(|i| 2.0 * state.u[i] * uss[i] + 2.0 * us[i] * us[i]).collect();
    let inside = interior(state);
    let n = state.u.len();
    let sigma_max = sup_over((0..n).filter(|&i| inside(i) && state.u[i] >= us_level), |i| q[i]);
    let mut tip_form_max = None;
    let mut boundary = None;
    if state.sigma_plus.is_finite() {
        // right branch: last crossing of the level
        if let Some(k) = (1..n).rev().find(|&k| state.u[k - 1] >= us_level && state.u[k] < us_level && inside(k - 1)) {
            let t = (state.u[k - 1] - us_level) / (state.u[k - 1] - state.u[k]);
            boundary = Some(q[k - 1] + t * (q[k] - q[k - 1]));
        }
        let top = 2.0 * theta;
        if us_level < top {
            let umax = state.u.iter().cloned().fold(0.0, f64::max);
            let hi = top.min(umax - 1e-6);
            let m = 201;
            let grid: Vec<f64> = (0..m).map(|i| us_level + (hi - us_level) * i as f64 / (m - 1) as f64).collect();
            let tp = invert_on_grid(state, &grid)?;
            let (yu, _) = y_derivatives(&tp.u, &tp.y);
            tip_form_max = sup_over(0..m, |i| tp.u[i] * yu[i] + 2.0 * tp.y[i]);
        }
    }
    Ok(ConcavityReport { sigma_max, tip_form_max, boundary })
}

/// rho Z_rho + 2Z of a soliton profile at rho = L; equals the tip form
/// u Y_u + 2Y under rho = u sqrt|tau|.
pub fn soliton_boundary_form(table: &BryantTable, l: f64) -> f64 {
    let (z, dz) = table.eval(l);
    l * dz + 2.0 * z
}

const CRUCIAL_ANCHOR: &str = "|1 + sigma u u_s / 2| < eta on the collar L/sqrt|tau| <= u <= 2 theta";

/// sup over the collar of |1 + sigma u u_s / 2|; None when the collar is empty.
pub fn crucial_estimate(state: &RescaledState, theta: f64, l: f64) -> Result<Option<f64>> {
    check_time(state)?;
    let lo = l / state.tau.abs().sqrt();
    let (us, _, _) = sigma_derivs(state);
    let inside = interior(state);
    Ok(sup_over(
        (0..state.u.len()).filter(|&i| inside(i) && state.u[i] >= lo && state.u[i] <= 2.0 * theta),
        |i| (1.0 + 0.5 * state.sigma[i] * state.u[i] * us[i]).abs(),
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CylindricalityReport {
    /// sup of -u u_ss / (1 - u_s^2) over u >= L/sqrt|tau|
    pub sup: Option<f64>,
    /// limit of the same ratio at the tip, from the tip chart
    pub tip_value: Option<f64>,
    /// Under K0 = -u_ss/u and K1 = (1 - u_s^2)/u^2 the ratio is K0/K1.
    pub ratio_is: &'static str,
}

/// Curvature ratio -u u_ss/(1 - u_s^2) on u >= L/sqrt|tau| and its tip limit.
pub fn cylindricality(state: &RescaledState, l: f64) -> Result<CylindricalityReport> {
    check_time(state)?;
    let lo = l / state.tau.abs().sqrt();
    let (us, uss, _) = sigma_derivs(state);
    let inside = interior(state);
    let sup = sup_over((0..state.u.len()).filter(|&i| inside(i) && state.u[i] >= lo), |i| {
        -state.u[i] * uss[i] / (1.0 - us[i] * us[i])
    });
    let tip_value = if state.sigma_plus.is_finite() { Some(tip_ratio(state)?) } else { None };
    Ok(CylindricalityReport { sup, tip_value, ratio_is: "K0/K1" })
}

/// In the tip chart the ratio is -u Y_u / (2(1 - Y)); it is extrapolated to
/// u = 0 by a fit in u^2 over the first soliton scale.
fn tip_ratio(state: &RescaledState) -> Result<f64> {
    let scale = 1.0 / state.tau.abs().sqrt();
    let m = 41;
    let grid: Vec<f64> = (0..m).map(|i| scale * i as f64 / (m - 1) as f64).collect();
    let tp = invert_on_grid(state, &grid)?;
    let (yu, _) = y_derivatives(&tp.u, &tp.y);
    let pts: Vec<(f64, f64)> = (m / 4..m / 2)
        .filter(|&i| tp.y[i] < 1.0)
        .map(|i| (tp.u[i] * tp.u[i], -tp.u[i] * yu[i] / (2.0 * (1.0 - tp.y[i]))))
        .collect();
    if pts.len() < 3 {
        return Err(Error::UnderResolved("tip chart too coarse for the curvature ratio".into()));
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let (_, intercept, _) = linear_fit(&x, &y);
    Ok(intercept)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InnerFit {
    pub slope: f64,
    pub intercept: f64,
    pub rms: f64,
    /// u - sqrt2 vanishes on the fit window
    pub exact_cylinder: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsSnapshot {
    pub tau: f64,
    pub inner: Option<InnerFit>,
    /// sup over |z| <= 1.8 of |u(z sqrt|tau|) - sqrt(2 - z^2/2)|
    pub intermediate_dev: Option<f64>,
    /// sigma_+ / (2 sqrt|tau|)
    pub tip_location: Option<f64>,
    /// max rescaled scalar curvature over |tau|; equals R_max(t)|t|/log|t|
    pub curvature_ratio: Option<f64>,
    /// (sigma_+ - sigma_-)/(4 sqrt|tau|); equals d(t)/(4 sqrt(|t| log|t|))
    pub diameter_ratio: Option<f64>,
}

/// Fit 8|tau|(sqrt2 - u)/sqrt2 against sigma^2 - 2 on |sigma| <= 2.
pub fn inner_fit(state: &RescaledState) -> Option<InnerFit> {
    let s2 = 2f64.sqrt();
    let at = state.tau.abs();
    let idx: Vec<usize> = (0..state.u.len()).filter(|&i| state.sigma[i].abs() <= 2.0).collect();
    if idx.len() < 3 {
        return None;
    }
    if idx.iter().all(|&i| (state.u[i] - s2).abs() <= 1e-14) {
        return Some(InnerFit { slope: f64::NAN, intercept: f64::NAN, rms: 0.0, exact_cylinder: true });
    }
    let x: Vec<f64> = idx.iter().map(|&i| state.sigma[i] * state.sigma[i] - 2.0).collect();
    let y: Vec<f64> = idx.iter().map(|&i| 8.0 * at * (s2 - state.u[i]) / s2).collect();
    let (slope, intercept, rms) = linear_fit(&x, &y);
    Some(InnerFit { slope, intercept, rms, exact_cylinder: false })
}

pub fn asymptotics_snapshot(state: &RescaledState) -> Result<AsymptoticsSnapshot> {
    check_time(state)?;
    let sq = state.tau.abs().sqrt();
    let inside = interior(state);
    let dev = sup_over(
        (0..state.u.len()).filter(|&i| inside(i) && state.sigma[i].abs() <= 1.8 * sq),
        |i| (state.u[i] - intermediate_profile(state.sigma[i], state.tau)).abs(),
    );
    let closed = state.sigma_plus.is_finite() && state.sigma_minus.is_finite();
    let (tip_location, diameter_ratio, curvature_ratio) = if closed {
        let k = curvatures_rescaled(state)?;
        let rmax = k.r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (
            Some(state.sigma_plus / (2.0 * sq)),
            Some((state.sigma_plus - state.sigma_minus) / (4.0 * sq)),
            Some(rmax / state.tau.abs()),
        )
    } else {
        (None, None, None)
    };
    Ok(AsymptoticsSnapshot {
        tau: state.tau,
        inner: inner_fit(state),
        intermediate_dev: dev,
        tip_location,
        curvature_ratio,
        diameter_ratio,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsReport {
    pub snapshots: Vec<AsymptoticsSnapshot>,
    /// |m(end) - m(start)| / |m(start)| for the inner slope and the intermediate deviation
    pub slope_drift: Option<f64>,
    pub intermediate_drift: Option<f64>,
}

/// Scorecard of every snapshot plus the drift from the first to the last.
pub fn asymptotics_report(states: &[RescaledState]) -> Result<AsymptoticsReport> {
    if states.is_empty() {
        return Err(Error::InvalidParameter("no snapshots".into()));
    }
    let snapshots = states.iter().map(asymptotics_snapshot).collect::<Result<Vec<_>>>()?;
    let rel = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(a), Some(b)) if a != 0.0 && a.is_finite() && b.is_finite() => Some(((b - a) / a).abs()),
        _ => None,
    };
    let (first, last) = (&snapshots[0], snapshots.last().unwrap());
    let slope = |s: &AsymptoticsSnapshot| s.inner.as_ref().filter(|f| !f.exact_cylinder).map(|f| f.slope);
    let (slope_drift, intermediate_drift) = if snapshots.len() > 1 {
        (rel(slope(first), slope(last)), rel(first.intermediate_dev, last.intermediate_dev))
    } else {
        (None, None)
    };
    Ok(AsymptoticsReport { snapshots, slope_drift, intermediate_drift })
}

/// Every check on one snapshot. Oval-only estimates report NotApplicable on
/// compact non-oval inputs, and EmptyRegion when their region has no node.
pub fn run_diagnostics(state: &RescaledState, cfg: &DiagnosticsConfig) -> Result<DiagnosticsReport> {
    check_time(state)?;
    let shape = classify(state);
    let tau = state.tau;
    let mut checks = Vec::new();
    let na = |name: &str, region: &str, threshold: f64, anchor: &str| {
        Check::without_value(
            name,
            region,
            threshold,
            Verdict::NotApplicable,
            tau,
            anchor,
            "input is compact but not oval-like; the estimate assumes an oval".into(),
        )
    };
    let empty = |name: &str, region: &str, threshold: f64, anchor: &str| {
        Check::without_value(name, region, threshold, Verdict::EmptyRegion, tau, anchor, "no grid node in the region".into())
    };
    let region_c = "u >= theta/4";
    let region_l = "u >= L/sqrt|tau|";
    let region_k = "L/sqrt|tau| <= u <= 2 theta";
    let conc_anchor = "(u^2)_ss <= 0 on u >= L/sqrt|tau|";
    let conc_tip_anchor = "u Y_u + 2Y <= 0 on the collar";
    let conc_bdry_anchor = "u Y_u + 2Y < 0 where u = L/sqrt|tau|";
    let cyl_anchor = "-u u_ss/(1 - u_s^2) <= eta on u >= L/sqrt|tau|";
    let tip_anchor = "curvature ratio -> 1 at the tip";

    if shape == Shape::Compact {
        checks.push(na("derivative_bounds", region_c, cfg.derivative_bound, DER_ANCHOR));
        checks.push(na("concavity", region_l, cfg.concavity_tol, conc_anchor));
        checks.push(na("crucial_estimate", region_k, cfg.crucial_eta, CRUCIAL_ANCHOR));
        checks.push(na("cylindricality", region_l, cfg.cylindricality_eta, cyl_anchor));
        return Ok(DiagnosticsReport { shape, checks });
    }

    match derivative_bounds(state, cfg.theta)? {
        Some(v) => checks.push(Check::measured("derivative_bounds", region_c, v, cfg.derivative_bound, v <= cfg.derivative_bound, tau, DER_ANCHOR)),
        None => checks.push(empty("derivative_bounds", region_c, cfg.derivative_bound, DER_ANCHOR)),
    }

    let conc = concavity_check(state, cfg.theta, cfg.l)?;
    match conc.sigma_max {
        Some(v) => checks.push(Check::measured("concavity", region_l, v, cfg.concavity_tol, v <= cfg.concavity_tol, tau, conc_anchor)),
        None => checks.push(empty("concavity", region_l, cfg.concavity_tol, conc_anchor)),
    }
    if shape == Shape::Oval {
        match conc.tip_form_max {
            Some(v) => checks.push(Check::measured("concavity_tip_form", region_k, v, cfg.concavity_tol, v <= cfg.concavity_tol, tau, conc_tip_anchor)),
            None => checks.push(empty("concavity_tip_form", region_k, cfg.concavity_tol, conc_tip_anchor)),
        }
        match conc.boundary {
            Some(v) => checks.push(Check::measured("concavity_boundary", "u = L/sqrt|tau|", v, 0.0, v < 0.0, tau, conc_bdry_anchor)),
            None => checks.push(empty("concavity_boundary", "u = L/sqrt|tau|", 0.0, conc_bdry_anchor)),
        }
    }

    match crucial_estimate(state, cfg.theta, cfg.l)? {
        Some(v) => checks.push(Check::measured("crucial_estimate", region_k, v, cfg.crucial_eta, v <= cfg.crucial_eta, tau, CRUCIAL_ANCHOR)),
        None => checks.push(empty("crucial_estimate", region_k, cfg.crucial_eta, CRUCIAL_ANCHOR)),
    }

    let cyl = cylindricality(state, cfg.l)?;
    match cyl.sup {
        Some(v) => {
            let mut c = Check::measured("cylindricality", region_l, v, cfg.cylindricality_eta, v <= cfg.cylindricality_eta, tau, cyl_anchor);
            c.note = Some(format!("the measured ratio is {} for K0 = -u_ss/u, K1 = (1 - u_s^2)/u^2", cyl.ratio_is));
            checks.push(c);
        }
        None => checks.push(empty("cylindricality", region_l, cfg.cylindricality_eta, cyl_anchor)),
    }
    if let Some(v) = cyl.tip_value {
        let (lo, hi) = cfg.tip_ratio_band;
        checks.push(Check::measured("tip_curvature_ratio", "tip", v, hi, (lo..=hi).contains(&v), tau, tip_anchor));
    }

    let snap = asymptotics_snapshot(state)?;
    if let Some(fit) = &snap.inner {
        let (lo, hi) = cfg.inner_slope_band;
        if fit.exact_cylinder {
            let mut c = Check::measured("inner_fit_slope", "|sigma| <= 2", 0.0, hi, true, tau, "8|tau|(sqrt2 - u)/sqrt2 ~ sigma^2 - 2");
            c.note = Some("u = sqrt2 exactly; the fit is degenerate".into());
            checks.push(c);
        } else {
            checks.push(Check::measured("inner_fit_slope", "|sigma| <= 2", fit.slope, hi, (lo..=hi).contains(&fit.slope), tau, "8|tau|(sqrt2 - u)/sqrt2 ~ sigma^2 - 2"));
        }
    }
    if shape == Shape::Oval {
        if let Some(d) = snap.intermediate_dev {
            checks.push(Check::measured("intermediate_deviation", "|z| <= 1.8", d, cfg.intermediate_tol, d <= cfg.intermediate_tol, tau, "u(z sqrt|tau|) ~ sqrt(2 - z^2/2)"));
        }
        if let Some(r) = snap.tip_location {
            let (lo, hi) = cfg.tip_location_band;
            checks.push(Check::measured("tip_location", "tip", r, hi, (lo..=hi).contains(&r), tau, "sigma_+ ~ 2 sqrt|tau|"));
        }
    }
    Ok(DiagnosticsReport { shape, checks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bryant::default_table;
    use crate::flow::ansatz::oval_ansatz;
    use crate::geometry::{reference_rescaled, uniform, ReferenceKind};

    fn cylinder(tau: f64) -> RescaledState {
        reference_rescaled(ReferenceKind::Cylinder, 401, tau, 10.0)
    }

    fn sphere(tau: f64) -> RescaledState {
        reference_rescaled(ReferenceKind::Sphere, 401, tau, 0.0)
    }

    fn intermediate_state(tau: f64, n: usize) -> RescaledState {
        let sp = 2.0 * tau.abs().sqrt();
        let sigma = uniform(-sp, sp, n);
        let u = sigma.iter().map(|s| intermediate_profile(*s, tau)).collect();
        RescaledState { sigma, u, tau, sigma_plus: sp, sigma_minus: -sp }
    }

    #[test]
    fn shapes_are_classified() {
        assert_eq!(classify(&cylinder(-10.0)), Shape::Open);
        assert_eq!(classify(&sphere(-400.0)), Shape::Compact);
        assert_eq!(classify(&oval_ansatz(-400.0).unwrap()), Shape::Oval);
    }

    #[test]
    fn cylinder_values() {
        let c = cylinder(-400.0);
        assert_eq!(derivative_bounds(&c, 0.1).unwrap(), Some(0.0));
        let conc = concavity_check(&c, 0.1, 20.0).unwrap();
        assert_eq!(conc.sigma_max, Some(0.0));
        assert!(conc.boundary.is_none());
        assert_eq!(cylindricality(&c, 20.0).unwrap().sup, Some(0.0));
        // the collar is empty, so the estimate is not evaluated
        assert_eq!(crucial_estimate(&c, 0.1, 20.0).unwrap(), None);
        let fit = inner_fit(&c).unwrap();
        assert!(fit.exact_cylinder);
        let rep = run_diagnostics(&c, &DiagnosticsConfig::default()).unwrap();
        assert_eq!(rep.get("crucial_estimate").unwrap().verdict, Verdict::EmptyRegion);
    }

    #[test]
    fn sphere_is_not_applicable() {
        let s = sphere(-400.0);
        // u_s = O(1) there, so sqrt|tau| times it is O(sqrt|tau|)
        let v = derivative_bounds(&s, 0.1).unwrap().unwrap();
        assert!(v > 0.5 * 400f64.sqrt(), "{v}");
        let rep = run_diagnostics(&s, &DiagnosticsConfig::default()).unwrap();
        assert_eq!(rep.shape, Shape::Compact);
        assert!(rep.checks.iter().all(|c| c.verdict == Verdict::NotApplicable));
    }

    #[test]
    fn soliton_far_field_boundary_is_negative() {
        let t = default_table();
        for l in [20.0, 40.0] {
            let v = soliton_boundary_form(t, l);
            let lead = -4.0 / l.powi(4);
            assert!(v < 0.0);
            assert!((v / lead - 1.0).abs() < 0.1, "L = {l}: {v} vs {lead}");
        }
    }

    #[test]
    fn crucial_estimate_on_the_intermediate_profile() {
        // u = sqrt(2 - z^2/2) gives -sigma u u_s/2 = z^2/4, so the quantity is
        // |1 - z^2/4| = u^2/2; the band stays clear of the square-root tip
        let tau = -400.0;
        let st = intermediate_state(tau, 8001);
        let (lo, theta) = (0.5, 0.5);
        let (us, _, _) = sigma_derivs(&st);
        let mut worst: f64 = 0.0;
        for i in 0..st.u.len() {
            if st.u[i] >= lo && st.u[i] <= 2.0 * theta {
                let z2 = st.sigma[i] * st.sigma[i] / tau.abs();
                let got = (1.0 + 0.5 * st.sigma[i] * st.u[i] * us[i]).abs();
                worst = worst.max((got - (1.0 - z2 / 4.0).abs()).abs());
            }
        }
        assert!(worst < 1e-8, "{worst}");
        let v = crucial_estimate(&st, theta, lo * tau.abs().sqrt()).unwrap().unwrap();
        assert!((v - 0.5).abs() < 1e-3, "{v}");
    }

    #[test]
    fn intermediate_profile_is_u2_concave_with_exact_value() {
        // u^2 = 2 - sigma^2/(2|tau|) gives (u^2)_ss = u Y_u + 2Y = -1/|tau|
        let tau = -400.0;
        let st = intermediate_state(tau, 8001);
        let conc = concavity_check(&st, 0.5, 0.5 * 20.0).unwrap();
        assert!((conc.sigma_max.unwrap() + 1.0 / 400.0).abs() < 1e-7, "{:?}", conc);
        assert!((conc.boundary.unwrap() + 1.0 / 400.0).abs() < 1e-7, "{:?}", conc);
        assert!((conc.tip_form_max.unwrap() + 1.0 / 400.0).abs() < 1e-6, "{:?}", conc);
    }

    #[test]
    fn ansatz_tip_ratio_is_one() {
        let a = oval_ansatz(-400.0).unwrap();
        let c = cylindricality(&a, 20.0).unwrap();
        assert!((c.tip_value.unwrap() - 1.0).abs() < 0.05, "{:?}", c);
        assert_eq!(c.ratio_is, "K0/K1");
    }

    #[test]
    fn ansatz_scorecard_at_minus_400() {
        let a = oval_ansatz(-400.0).unwrap();
        let snap = asymptotics_snapshot(&a).unwrap();
        let fit = snap.inner.unwrap();
        assert!((0.9..=1.1).contains(&fit.slope), "{:?}", fit);
        assert!(snap.intermediate_dev.unwrap() <= 0.03);
        assert!((0.95..=1.05).contains(&snap.tip_location.unwrap()));
    }

    #[test]
    fn report_lists_every_check_with_an_anchor() {
        let a = oval_ansatz(-400.0).unwrap();
        let rep = run_diagnostics(&a, &DiagnosticsConfig::default()).unwrap();
        for name in ["derivative_bounds", "concavity", "concavity_tip_form", "concavity_boundary", "crucial_estimate", "cylindricality", "tip_curvature_ratio", "inner_fit_slope", "intermediate_deviation", "tip_location"] {
            let c = rep.get(name).unwrap_or_else(|| panic!("{name} missing"));
            assert!(!c.anchor.is_empty());
            assert_eq!(c.tau_range, (-400.0, -400.0));
        }
    }

    #[test]
    fn ansatz_checks_improve_toward_the_past() {
        let cfg = DiagnosticsConfig { l: 5.0, ..Default::default() };
        let a = run_diagnostics(&oval_ansatz(-400.0).unwrap(), &cfg).unwrap();
        let b = run_diagnostics(&oval_ansatz(-800.0).unwrap(), &cfg).unwrap();
        let v = |r: &DiagnosticsReport, n: &str| r.get(n).unwrap().value.unwrap();
        // (u^2)_ss ~ -1/|tau| on the intermediate region, so only the sign is compared
        assert!(v(&a, "concavity") < 0.0 && v(&b, "concavity") < 0.0);
        assert!(v(&b, "intermediate_deviation") <= v(&a, "intermediate_deviation"));
        assert!((v(&b, "tip_location") - 1.0).abs() <= (v(&a, "tip_location") - 1.0).abs());
        // the collar L/sqrt|tau| <= u <= 2 theta opens up once 2 theta sqrt|tau| > L
        assert_eq!(a.get("crucial_estimate").unwrap().verdict, Verdict::EmptyRegion);
        assert!(b.get("crucial_estimate").unwrap().passed());
    }

    #[test]
    fn evolved_block_keeps_the_inner_fit() {
        use crate::flow::run::{run, InitialKind, SolverConfig};
        let cfg = SolverConfig { kind: InitialKind::Oval, n: 701, tau_init: -400.0, tau_end: -398.0, ..Default::default() };
        let out = run(&cfg).unwrap();
        let rep = asymptotics_report(&out.rescaled).unwrap();
        assert_eq!(rep.snapshots.len(), 3);
        assert!(rep.slope_drift.unwrap() < 0.01, "{:?}", rep.slope_drift);
        assert!(rep.snapshots.iter().all(|s| s.tip_location.is_none()));
    }

    #[test]
    fn recent_times_are_rejected() {
        let mut c = cylinder(-10.0);
        c.tau = 0.5;
        assert!(matches!(derivative_bounds(&c, 0.1), Err(Error::InvalidTime(_))));
    }
}

