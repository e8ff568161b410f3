//! The tip cutoff zeta, the weight mu(u, tau), weighted tip norms, and
//! numerical checks of the weight estimates and the Poincare inequality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{deriv1, mollified_ramp, mollified_ramp_deriv, mollified_ramp_deriv2, trapz, UniformOps};
use crate::spectral::windowed_norm_weighted;
use crate::tip_chart::{y_derivatives, TipProfile};

/// Cutoff rising from 0 on u <= theta/4 to 1 on u >= theta/2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Zeta {
    pub theta: f64,
}

impl Zeta {
    pub fn value(&self, u: f64) -> f64 {
        let q = self.theta / 4.0;
        mollified_ramp((u - q) / q)
    }

    pub fn deriv(&self, u: f64) -> f64 {
        let q = self.theta / 4.0;
        mollified_ramp_deriv((u - q) / q) / q
    }

    pub fn deriv2(&self, u: f64) -> f64 {
        let q = self.theta / 4.0;
        mollified_ramp_deriv2((u - q) / q) / (q * q)
    }
}

pub fn build_zeta(theta: f64) -> Result<Zeta> {
    check_theta(theta)?;
    Ok(Zeta { theta })
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta < 2f64.sqrt() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("theta = {theta} outside (0, sqrt 2)")))
    }
}

/// The weight mu and its u-derivatives on a tip profile's grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TipWeight {
    pub u: Vec<f64>,
    pub mu: Vec<f64>,
    pub mu_u: Vec<f64>,
    pub mu_uu: Vec<f64>,
    pub zeta: Vec<f64>,
    pub theta: f64,
    pub tau: f64,
    pub sigma: Vec<f64>,
}

/// (1 - Y)/(u Y) and its u-derivative; at u = 0 the limits 0 and -Y_uu/2.
fn far_field_rate(u: f64, y: f64, yu: f64, yuu: f64) -> (f64, f64) {
    if u <= 0.0 {
        return (0.0, -0.5 * yuu);
    }
    let g = (1.0 - y) / (u * y);
    let dg = 1.0 / (u * u) - (y + u * yu) / (u * u * y * y);
    (g, dg)
}

/// mu_u = zeta (-sigma^2/4)_u + (1 - zeta)(1 - Y)/(u Y), anchored so that
/// mu = -sigma^2/4 at u = theta. Where zeta = 1 the two agree, so mu is
/// written as -sigma^2/4 minus the integral of the (1 - zeta) correction
/// from u up to theta/2; the identity on u >= theta/2 is exact.
pub fn build_weight(tp: &TipProfile, theta: f64) -> Result<TipWeight> {
    let zeta = build_zeta(theta)?;
    let n = tp.u.len();
    if n < 3 {
        return Err(Error::EmptyRegion("tip profile needs at least 3 nodes".into()));
    }
    if let Some(i) = tp.y.iter().position(|v| *v <= 0.0) {
        return Err(Error::DegenerateY(tp.u[i]));
    }
    let top = tp.u[n - 1];
    if top < theta * (1.0 - 1e-12) {
        return Err(Error::EmptyRegion(format!("tip grid ends at u = {top} below the anchor theta = {theta}")));
    }
    let (yu, yuu) = y_derivatives(&tp.u, &tp.y);
    let mut mu_u = vec![0.0; n];
    let mut mu_uu = vec![0.0; n];
    let mut corr = vec![0.0; n];
    let mut zs = vec![0.0; n];
    for i in 0..n {
        let (u, y, s) = (tp.u[i], tp.y[i], tp.sigma[i]);
        let psi = y.sqrt();
        let z = zeta.value(u);
        let dz = zeta.deriv(u);
        // (-sigma^2/4)_u with sigma_u = -1/Psi on the right-hand branch
        let c = s / (2.0 * psi);
        let dc = -1.0 / (2.0 * y) - s * yu[i] / (4.0 * y * psi);
        let (g, dg) = far_field_rate(u, y, yu[i], yuu[i]);
        zs[i] = z;
        mu_u[i] = z * c + (1.0 - z) * g;
        mu_uu[i] = dz * (c - g) + z * dc + (1.0 - z) * dg;
        corr[i] = (1.0 - z) * (g - c);
    }
    // corr vanishes identically from the first node with zeta = 1 upward
    let k = zs.iter().position(|z| *z >= 1.0).unwrap_or(n - 1);
    let integral = cumulative_to_top(&tp.u, &corr);
    let mu = (0..n)
        .map(|i| -tp.sigma[i] * tp.sigma[i] / 4.0 + if i < k { integral[i] - integral[k] } else { 0.0 })
        .collect();
    Ok(TipWeight { u: tp.u.clone(), mu, mu_u, mu_uu, zeta: zs, theta, tau: tp.tau, sigma: tp.sigma.clone() })
}

/// Cumulative integral of f (any anchor), sixth order on uniform grids.
fn cumulative_to_top(u: &[f64], f: &[f64]) -> Vec<f64> {
    let n = u.len();
    let h = u[1] - u[0];
    let uniform = n >= 9 && u.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h);
    if uniform {
        UniformOps::new(u[0], h, n).cumulative(f, u[n - 1])
    } else {
        crate::numerics::cumtrapz_from(u, f, n - 1)
    }
}

/// Nodes with u <= 2 theta (with a relative slack for the last grid node).
fn tip_range(tw: &TipWeight) -> usize {
    let cap = 2.0 * tw.theta * (1.0 + 1e-12);
    tw.u.iter().take_while(|u| **u <= cap).count()
}

/// ||W||^2 = int_0^{2 theta} W^2 Psi^{-2} e^mu du by the trapezoid rule.
pub fn tip_norm_sq(w: &[f64], tp: &TipProfile, tw: &TipWeight) -> Result<f64> {
    if w.len() != tw.u.len() || tp.u.len() != tw.u.len() {
        return Err(Error::InvalidParameter("W, profile and weight must share the u-grid".into()));
    }
    let m = tip_range(tw);
    let q: Vec<f64> = (0..m).map(|i| tw.mu[i].exp() / tp.y[i]).collect();
    if let Some(i) = (1..m).find(|&i| (q[i] / q[i - 1] - 1.0).abs() > 0.1) {
        return Err(Error::UnderResolved(format!(
            "tip weight changes by more than 10% between u = {} and u = {}",
            tw.u[i - 1],
            tw.u[i]
        )));
    }
    let vals: Vec<f64> = (0..m).map(|i| w[i] * w[i] * q[i]).collect();
    Ok(trapz(&tw.u[..m], &vals))
}

pub fn tip_norm(w: &[f64], tp: &TipProfile, tw: &TipWeight) -> Result<f64> {
    Ok(tip_norm_sq(w, tp, tw)?.sqrt())
}

/// sup over t' <= tau of |t'|^{-1/4} (int_{t'-1}^{t'} ||W||^2)^{1/2}.
pub fn windowed_tip_norm(times: &[f64], norms: &[f64], tau: f64) -> Result<f64> {
    windowed_norm_weighted(times, norms, tau, |t| t.abs().powf(-0.25))
}

/// Sign convention of the exponential weight in the Poincare inequality.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WeightSign {
    /// e^{-mu} du
    Minus,
    /// e^{+mu} du
    Plus,
}

/// Both sides of the Poincare inequality for one test function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoincareSample {
    /// int mu_u^2 f^2 e^{-+mu}
    pub lhs: f64,
    /// int f_u^2 e^{-+mu}
    pub grad: f64,
    /// int f^2/u^2 e^{-+mu}
    pub hardy: f64,
    /// lhs / (grad + hardy), 0 for f = 0
    pub ratio: f64,
    /// Completing-the-square defect, relative to 2 int f_u^2:
    /// Minus: 2 int f_u^2 - (1/2) int mu_u^2 f^2 + int mu_uu f^2,
    /// Plus:  2 int f_u^2 - (1/2) int mu_u^2 f^2 - int mu_uu f^2.
    /// Nonnegative up to quadrature error.
    pub defect: f64,
}

/// Quadrature of both sides for f, f_u sampled on tw.u. The weight is
/// rescaled by a constant to stay in floating-point range; ratios and the
/// relative defect are unaffected.
pub fn poincare_check(f: &[f64], f_u: &[f64], tw: &TipWeight, sign: WeightSign) -> PoincareSample {
    let m = tip_range(tw);
    let s = match sign {
        WeightSign::Minus => -1.0,
        WeightSign::Plus => 1.0,
    };
    let shift = tw.mu[..m].iter().map(|v| s * v).fold(f64::NEG_INFINITY, f64::max);
    let wt: Vec<f64> = tw.mu[..m].iter().map(|v| (s * v - shift).exp()).collect();
    let u = &tw.u[..m];
    let integ = |g: &dyn Fn(usize) -> f64| -> f64 { trapz(u, &(0..m).map(|i| g(i) * wt[i]).collect::<Vec<_>>()) };
    let lhs = integ(&|i| (tw.mu_u[i] * f[i]).powi(2));
    let grad = integ(&|i| f_u[i] * f_u[i]);
    let hardy = integ(&|i| if u[i] > 0.0 { (f[i] / u[i]).powi(2) } else { 0.0 });
    let curv = integ(&|i| tw.mu_uu[i] * f[i] * f[i]);
    let denom = grad + hardy;
    let ratio = if denom > 0.0 { lhs / denom } else { 0.0 };
    let defect = if grad > 0.0 { (2.0 * grad - 0.5 * lhs - s * curv) / (2.0 * grad) } else { 0.0 };
    PoincareSample { lhs, grad, hardy, ratio, defect }
}

/// Smooth compactly supported bump in rho = u sqrt|tau| on (lo, hi) with a
/// quadratic modulation; returns (f, f_u) on the grid.
fn rho_bump(u: &[f64], tau: f64, lo: f64, hi: f64, a1: f64, a2: f64) -> (Vec<f64>, Vec<f64>) {
    let sq = tau.abs().sqrt();
    let mid = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    u.iter()
        .map(|v| {
            let x = (v * sq - mid) / half;
            if x.abs() >= 1.0 {
                return (0.0, 0.0);
            }
            let d = 1.0 - x * x;
            let b = (1.0 - 1.0 / d).exp();
            let db = b * (-2.0 * x / (d * d));
            let p = 1.0 + a1 * x + a2 * x * x;
            let dp = a1 + 2.0 * a2 * x;
            (b * p, (db * p + b * dp) * sq / half)
        })
        .unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoincareBattery {
    pub sign: WeightSign,
    pub rho_span: f64,
    pub count: usize,
    pub max_ratio: f64,
    pub min_defect: f64,
    pub samples: Vec<PoincareSample>,
}

/// `count` seeded bumps supported in rho = u sqrt|tau| in (0, rho_span],
/// capped at the tip edge 2 theta sqrt|tau|, each checked under the given
/// sign convention. Supports cover at least 5% of the span. A fixed span
/// gives the same test family at every tau.
pub fn poincare_battery(tw: &TipWeight, seed: u64, count: usize, sign: WeightSign, rho_span: Option<f64>) -> PoincareBattery {
    let edge = 2.0 * tw.theta * tw.tau.abs().sqrt();
    let rho_max = rho_span.map_or(edge, |r| r.min(edge));
    let samples: Vec<PoincareSample> = (0..count as u64)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(k));
            let lo = rng.gen_range(0.02..0.9) * rho_max;
            let hi = rng.gen_range(lo + 0.05 * rho_max..=rho_max);
            let a1 = rng.gen_range(-0.5..0.5);
            let a2 = rng.gen_range(-0.4..0.4);
            let (f, fu) = rho_bump(&tw.u, tw.tau, lo, hi, a1, a2);
            poincare_check(&f, &fu, tw, sign)
        })
        .collect();
    let max_ratio = samples.iter().map(|s| s.ratio).fold(0.0, f64::max);
    let min_defect = samples.iter().map(|s| s.defect).fold(f64::INFINITY, f64::min);
    PoincareBattery { sign, rho_span: rho_max, count, max_ratio, min_defect, samples }
}

/// One measured constant from the weight estimates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightMeasure {
    pub name: String,
    pub region: String,
    /// None when the region holds no node.
    pub value: Option<f64>,
    pub eta: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightReport {
    pub tau: f64,
    pub theta: f64,
    pub l: f64,
    pub collar_nodes: usize,
    pub measures: Vec<WeightMeasure>,
    /// max mu over the tip region
    pub mu_max_tip: f64,
    /// min mu_u over the tip region
    pub mu_u_min_tip: f64,
}

/// Measured constants of the weight estimates at the middle snapshot of a
/// time series of tip profiles on one u-grid. Time derivatives are centered
/// differences between the neighbours of the middle snapshot.
pub fn weight_properties(series: &[TipProfile], theta: f64, l: f64, eta: f64) -> Result<WeightReport> {
    if series.len() < 3 || series.len() % 2 == 0 {
        return Err(Error::InvalidParameter("need an odd number (>= 3) of snapshots".into()));
    }
    let c = series.len() / 2;
    if series.iter().any(|t| t.u != series[c].u) {
        return Err(Error::InvalidParameter("snapshots must share the u-grid".into()));
    }
    let tp = &series[c];
    let (prev, next) = (&series[c - 1], &series[c + 1]);
    let dt = next.tau - prev.tau;
    let tw = build_weight(tp, theta)?;
    let (twp, twn) = (build_weight(prev, theta)?, build_weight(next, theta)?);
    let (yu, yuu) = y_derivatives(&tp.u, &tp.y);
    let tau = tp.tau;
    let at = tau.abs();
    let us = l / at.sqrt();
    let m = tip_range(&tw);
    let collar: Vec<usize> = (0..m).filter(|&i| tp.u[i] >= us).collect();
    let tip: Vec<usize> = (0..m).collect();

    let sup = |idx: &[usize], f: &dyn Fn(usize) -> f64| -> Option<f64> {
        idx.iter().map(|&i| f(i)).fold(None, |a: Option<f64>, v| Some(a.map_or(v, |b| b.max(v))))
    };
    let sigma_tau = |i: usize| (next.sigma[i] - prev.sigma[i]) / dt;
    let y_tau = |i: usize| (next.y[i] - prev.y[i]) / dt;
    let mu_tau = |i: usize| (twn.mu[i] - twp.mu[i]) / dt;
    let u = &tp.u;
    let y = &tp.y;

    let mut measures = Vec::new();
    let mut push = |name: &str, region: &str, value: Option<f64>| {
        let pass = value.map_or(false, |v| v <= eta);
        measures.push(WeightMeasure { name: name.into(), region: region.into(), value, eta, pass });
    };
    push(
        "good1 |mu_u uY/(1-Y) - 1|",
        "collar",
        sup(&collar, &|i| (tw.mu_u[i] * u[i] * y[i] / (1.0 - y[i]) - 1.0).abs()),
    );
    push("good5 |1/(u^2 Y |tau|) - 1|", "collar", sup(&collar, &|i| (1.0 / (u[i] * u[i] * y[i] * at) - 1.0).abs()));
    // u_tau at fixed sigma is Psi sigma_tau at fixed u
    push("utau u|u_tau|", "collar", sup(&collar, &|i| u[i] * (tp.psi[i] * sigma_tau(i)).abs()));
    push("Yb u|Y_u|", "collar", sup(&collar, &|i| u[i] * yu[i].abs()));
    push("Yb u^2 sqrt(Y)|Y_uu|", "collar", sup(&collar, &|i| u[i] * u[i] * tp.psi[i] * yuu[i].abs()));
    push("Yb u^2|Y_tau|", "collar", sup(&collar, &|i| u[i] * u[i] * y_tau(i).abs()));
    push("muu mu_uu/mu_u^2", "collar", sup(&collar, &|i| tw.mu_uu[i] / (tw.mu_u[i] * tw.mu_u[i])));
    push(
        "mutau mu_tau/(|tau|(1 + chi/rho))",
        "tip",
        sup(&tip, &|i| {
            let rho = u[i] * at.sqrt();
            if rho <= 0.0 {
                return 0.0;
            }
            let bump = if rho <= 1.0 { 1.0 / rho } else { 0.0 };
            mu_tau(i) / (at * (1.0 + bump))
        }),
    );
    let mu_max_tip = tw.mu[..m].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mu_u_min_tip = tw.mu_u[..m].iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(WeightReport { tau, theta, l, collar_nodes: collar.len(), measures, mu_max_tip, mu_u_min_tip })
}

/// One snapshot of a two-solution run in the tip: the chart of the first
/// solution, its weight, and W = Psi_1 - Psi_2 on the same u-grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TipDifference {
    pub tp: TipProfile,
    pub tw: TipWeight,
    pub w: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiffInequalityReport {
    pub taus: Vec<f64>,
    /// int W_T^2 Psi^{-2} e^mu
    pub inner: Vec<f64>,
    /// int_theta^{2 theta} W^2 Psi^{-2} e^mu
    pub outer: Vec<f64>,
    /// d/dtau of `inner` (centered; one-sided at the ends)
    pub inner_rate: Vec<f64>,
    pub c_theta: f64,
    /// largest lambda with inner' <= -2 lambda |tau| inner + C outer at every sample
    pub lambda: f64,
    /// ||W_T||_{2,inf} sqrt|tau_0| / ||W chi||_{2,inf} at the last sample
    pub gronwall_factor: Option<f64>,
}

/// Cutoff phi_T: 1 on u <= theta, 0 from u = 2 theta.
pub fn tip_cutoff(u: f64, theta: f64) -> f64 {
    1.0 - mollified_ramp((u - theta) / theta)
}

/// Monitor of the integral differential inequality on a time series. The
/// constant C(theta) is an input; lambda is fitted.
pub fn diff_inequality_monitor(series: &[TipDifference], theta: f64, c_theta: f64) -> Result<DiffInequalityReport> {
    if series.len() < 2 {
        return Err(Error::InvalidParameter("need at least two snapshots".into()));
    }
    let mut taus = Vec::new();
    let mut inner = Vec::new();
    let mut outer = Vec::new();
    for s in series {
        let wt: Vec<f64> = s.w.iter().zip(&s.tw.u).map(|(w, u)| w * tip_cutoff(*u, theta)).collect();
        inner.push(tip_norm_sq(&wt, &s.tp, &s.tw)?);
        let wc: Vec<f64> = s.w.iter().zip(&s.tw.u).map(|(w, u)| if *u >= theta { *w } else { 0.0 }).collect();
        outer.push(tip_norm_sq(&wc, &s.tp, &s.tw)?);
        taus.push(s.tp.tau);
    }
    let inner_rate = deriv1(&taus, &inner);
    let lambda = (0..taus.len())
        .filter(|&k| inner[k] > 0.0)
        .map(|k| (c_theta * outer[k] - inner_rate[k]) / (2.0 * taus[k].abs() * inner[k]))
        .fold(f64::INFINITY, f64::min);
    let lambda = if lambda.is_finite() { lambda } else { 0.0 };
    let t0 = *taus.last().unwrap();
    let gronwall_factor = {
        let ni: Vec<f64> = inner.iter().map(|v| v.sqrt()).collect();
        let no: Vec<f64> = outer.iter().map(|v| v.sqrt()).collect();
        match (windowed_tip_norm(&taus, &ni, t0), windowed_tip_norm(&taus, &no, t0)) {
            (Ok(a), Ok(b)) if b > 0.0 => Some(a * t0.abs().sqrt() / b),
            _ => None,
        }
    };
    Ok(DiffInequalityReport { taus, inner, outer, inner_rate, c_theta, lambda, gronwall_factor })
}
