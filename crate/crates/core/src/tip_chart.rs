//! The tip chart Y(u, tau) = u_sigma^2, its soliton-frame view
//! Z(rho, tau) = Y(u, tau) with rho = u sqrt|tau|, and region bookkeeping.

use serde::Serialize;

use crate::bryant::default_table;
use crate::error::{Error, Result};
use crate::flow::rescaled::sigma_derivatives;
use crate::geometry::{uniform, GaugeParams, ProfileSource, RescaledState};
use crate::numerics::{deriv1, deriv2, quintic_hermite, Pchip, UniformOps};

/// Y = u_sigma^2 on a u-grid over the right-hand branch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TipProfile {
    pub u: Vec<f64>,
    pub y: Vec<f64>,
    pub psi: Vec<f64>,
    /// sigma(u, tau) on the branch sigma >= sigma_eq.
    pub sigma: Vec<f64>,
    pub tau: f64,
}

impl TipProfile {
    /// Build from Y values; sigma(u) = sigma_plus - int_0^u du/sqrt(Y).
    pub fn from_y(u: Vec<f64>, y: Vec<f64>, tau: f64, sigma_plus: f64) -> Result<Self> {
        if let Some(i) = y.iter().position(|v| *v <= 0.0) {
            return Err(Error::DegenerateY(u[i]));
        }
        let psi: Vec<f64> = y.iter().map(|v| v.sqrt()).collect();
        let mut sigma = vec![sigma_plus; u.len()];
        let mut acc = u[0] / psi[0];
        sigma[0] = sigma_plus - acc;
        for i in 1..u.len() {
            acc += 0.5 * (u[i] - u[i - 1]) * (1.0 / psi[i] + 1.0 / psi[i - 1]);
            sigma[i] = sigma_plus - acc;
        }
        Ok(Self { u, y, psi, sigma, tau })
    }

    /// Y at an arbitrary u inside the grid, by monotone cubic interpolation.
    pub fn y_at(&self, u: f64) -> Result<f64> {
        Ok(Pchip::new(self.u.clone(), self.y.clone())?.eval(u))
    }
}

/// Invert u(sigma) on the branch from the equator to sigma_+ for
/// u <= min(2 theta, max u - 1e-6). The forward profile is a quintic Hermite
/// interpolant through (u, u_sigma, u_sigma_sigma); sigma(u) solves it by
/// safeguarded Newton, so the round trip is exact to 1e-14.
pub fn invert_profile(state: &RescaledState, theta: f64) -> Result<TipProfile> {
    let (first, cap) = branch_start(state, theta)?;
    let n = state.u.len();
    let u_lo = state.u[n - 1].max(0.0);
    invert_on_grid(state, &uniform(u_lo, cap, (n - first).max(9)))
}

/// Index of the first branch node with u <= min(2 theta, max u - 1e-6), and
/// that cap.
fn branch_start(state: &RescaledState, theta: f64) -> Result<(usize, f64)> {
    let (ieq, umax) = state
        .u
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, (i, v)| if *v > a.1 { (i, *v) } else { a });
    let cap = (2.0 * theta).min(umax - 1e-6);
    let first = (ieq..state.u.len())
        .find(|&i| state.u[i] <= cap)
        .ok_or(Error::EmptyRegion(format!("no node with u <= {cap} on the branch")))?;
    Ok((first.max(ieq + 1), cap))
}

/// Invert the right-hand branch at the given u values, which must lie
/// between the last node value and the equator value.
pub fn invert_on_grid(state: &RescaledState, u_grid: &[f64]) -> Result<TipProfile> {
    let n = state.u.len();
    let top = u_grid.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (ieq, _) = state
        .u
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |a, (i, v)| if *v > a.1 { (i, *v) } else { a });
    let first = (ieq..n)
        .find(|&i| state.u[i] <= top)
        .ok_or(Error::EmptyRegion(format!("no node with u <= {top} on the branch")))?;
    let start = first.max(ieq + 1) - 1;
    for i in start + 1..n {
        if state.u[i] >= state.u[i - 1] {
            return Err(Error::NonMonotone(i));
        }
    }
    let (us, uss) = sigma_derivatives(&state.sigma, &state.u);
    let mut sigma = Vec::with_capacity(u_grid.len());
    let mut y = Vec::with_capacity(u_grid.len());
    for &target in u_grid {
        // u decreases from `start`; find k with u[k] >= target >= u[k+1]
        let k = (start..n - 1)
            .find(|&k| state.u[k] >= target && target >= state.u[k + 1])
            .ok_or(Error::EmptyRegion(format!("u = {target} not bracketed")))?;
        let h = state.sigma[k + 1] - state.sigma[k];
        let l = [state.u[k], us[k], uss[k]];
        let r = [state.u[k + 1], us[k + 1], uss[k + 1]];
        let (mut a, mut b) = (0.0, 1.0);
        let mut t = ((state.u[k] - target) / (state.u[k] - state.u[k + 1])).clamp(0.0, 1.0);
        let mut slope = 0.0;
        for _ in 0..100 {
            let (p, dp) = quintic_hermite(h, l, r, t);
            slope = dp;
            let f = p - target;
            if f.abs() < 1e-15 {
                break;
            }
            if f > 0.0 {
                a = t;
            } else {
                b = t;
            }
            let mut tn = t - f / (dp * h);
            if !(tn > a && tn < b) || dp >= 0.0 {
                tn = 0.5 * (a + b);
            }
            if (tn - t).abs() < 1e-16 {
                t = tn;
                break;
            }
            t = tn;
        }
        sigma.push(state.sigma[k] + t * h);
        y.push(slope * slope);
    }
    let psi = y.iter().map(|v: &f64| v.sqrt()).collect();
    Ok(TipProfile { u: u_grid.to_vec(), y, psi, sigma, tau: state.tau })
}

fn is_uniform(x: &[f64]) -> bool {
    let h = x[1] - x[0];
    x.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs())
}

/// (Y_u, Y_uu) on the tip grid. A grid starting at u = 0 is extended by even
/// parity, matching the smooth closure Y = 1 + c u^2.
pub fn y_derivatives(u: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = u.len();
    if n >= 9 && is_uniform(u) {
        if u[0] == 0.0 {
            let mut ext: Vec<f64> = y[1..].iter().rev().cloned().collect();
            ext.extend_from_slice(y);
            let ops = UniformOps::new(-u[n - 1], u[1] - u[0], ext.len());
            let (d1, d2) = (ops.d1(&ext), ops.d2(&ext));
            return (d1[n - 1..].to_vec(), d2[n - 1..].to_vec());
        }
        let ops = UniformOps::new(u[0], u[1] - u[0], n);
        return (ops.d1(y), ops.d2(y));
    }
    (deriv1(u, y), deriv2(u, y))
}

/// Predicted Y_tau = Y Y_uu - Y_u^2/2 + (1-Y) Y_u/u + 2(1-Y)Y/u^2 - (u/2) Y_u.
/// At u = 0 the closure forces Y = 1 for all time, so the rate there is 0.
pub fn rhs_y(tp: &TipProfile) -> Vec<f64> {
    let (yu, yuu) = y_derivatives(&tp.u, &tp.y);
    tp.u
        .iter()
        .enumerate()
        .map(|(i, &u)| {
            if u <= 0.0 {
                return 0.0;
            }
            let y = tp.y[i];
            y * yuu[i] - 0.5 * yu[i] * yu[i] + (1.0 - y) * yu[i] / u + 2.0 * (1.0 - y) * y / (u * u)
                - 0.5 * u * yu[i]
        })
        .collect()
}

/// Finite-difference Y_tau between two tip profiles on the same u-grid minus
/// the operator at the midpoint, evaluated on the common positive nodes.
pub fn y_chart_residual(before: &TipProfile, after: &TipProfile) -> Result<Vec<f64>> {
    if before.u.len() != after.u.len() {
        return Err(Error::InvalidParameter("tip profiles on different grids".into()));
    }
    let dt = after.tau - before.tau;
    let a = rhs_y(before);
    let b = rhs_y(after);
    Ok((0..a.len())
        .filter(|&i| before.u[i] > 0.0)
        .map(|i| (after.y[i] - before.y[i]) / dt - 0.5 * (a[i] + b[i]))
        .collect())
}

/// Z(rho) = Y(u) with rho = u sqrt|tau|.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolitonFrame {
    pub rho: Vec<f64>,
    pub z: Vec<f64>,
    pub tau: f64,
}

impl SolitonFrame {
    pub fn z_at(&self, rho: f64) -> Result<f64> {
        Ok(Pchip::new(self.rho.clone(), self.z.clone())?.eval(rho))
    }
}

pub fn to_soliton_frame(tp: &TipProfile) -> SolitonFrame {
    let sq = tp.tau.abs().sqrt();
    let mut rho: Vec<f64> = tp.u.iter().map(|u| u * sq).collect();
    let mut z = tp.y.clone();
    if rho[0] > 0.0 {
        rho.insert(0, 0.0);
        z.insert(0, 1.0);
    }
    SolitonFrame { rho, z, tau: tp.tau }
}

/// Y^{beta gamma}(u, tau) = Y(u / lambda, tau'), built by sampling `src` at
/// the shifted time on `n` nodes between its tips, inverting, and dilating.
pub fn gauge_tip(src: &dyn ProfileSource, tau: f64, g: &GaugeParams, theta: f64, n: usize) -> Result<TipProfile> {
    let d2 = g.dilation_sq(tau);
    if d2 <= 0.0 {
        return Err(Error::OutOfWindow { tau, lo: f64::NAN, hi: f64::NAN });
    }
    let lam = d2.sqrt();
    let ts = g.shifted_time(tau);
    let (sm, sp) = src.tips_at(ts)?;
    if !(sm.is_finite() && sp.is_finite()) {
        return Err(Error::EmptyRegion("source has no tips".into()));
    }
    let sigma = uniform(sm, sp, n);
    let u = sigma.iter().map(|s| src.u_at(*s, ts)).collect::<Result<Vec<_>>>()?;
    let base = RescaledState { sigma, u, tau: ts, sigma_plus: sp, sigma_minus: sm };
    let tp = invert_profile(&base, theta / lam)?;
    Ok(TipProfile {
        u: tp.u.iter().map(|v| lam * v).collect(),
        y: tp.y,
        psi: tp.psi,
        sigma: tp.sigma.iter().map(|v| lam * v).collect(),
        tau,
    })
}

/// Node index sets of the regions used by the tip analysis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionPartition {
    /// u >= theta/4
    pub cylindrical: Vec<usize>,
    /// theta/4 <= u <= theta/2
    pub d_theta: Vec<usize>,
    /// theta <= u <= 2 theta
    pub d_4theta: Vec<usize>,
    /// u <= 2 theta
    pub tip: Vec<usize>,
    /// L/sqrt|tau| <= u <= 2 theta
    pub collar: Vec<usize>,
    /// u <= L/sqrt|tau|
    pub soliton: Vec<usize>,
    pub theta: f64,
    pub l: f64,
    pub tau: f64,
}

/// Partition of nodes with values `u` at time tau. The collar bound
/// L/sqrt|tau| must not exceed 2 theta, and a nonempty tip region must
/// contain soliton nodes.
pub fn partition(u: &[f64], tau: f64, theta: f64, l: f64) -> Result<RegionPartition> {
    if !(theta > 0.0 && theta < 2f64.sqrt()) {
        return Err(Error::InvalidParameter(format!("theta = {theta} outside (0, sqrt 2)")));
    }
    if l < 1.0 {
        return Err(Error::InvalidParameter(format!("L = {l} below 1")));
    }
    let us = l / tau.abs().sqrt();
    if us > 2.0 * theta {
        return Err(Error::EmptyRegion(format!(
            "collar empty: L/sqrt|tau| = {us} exceeds 2 theta = {}; increase |tau| or decrease L",
            2.0 * theta
        )));
    }
    let pick = |f: &dyn Fn(f64) -> bool| -> Vec<usize> { (0..u.len()).filter(|&i| f(u[i])).collect() };
    let p = RegionPartition {
        cylindrical: pick(&|v| v >= theta / 4.0),
        d_theta: pick(&|v| v >= theta / 4.0 && v <= theta / 2.0),
        d_4theta: pick(&|v| v >= theta && v <= 2.0 * theta),
        tip: pick(&|v| v <= 2.0 * theta),
        collar: pick(&|v| v >= us && v <= 2.0 * theta),
        soliton: pick(&|v| v <= us),
        theta,
        l,
        tau,
    };
    if !p.tip.is_empty() && p.soliton.is_empty() {
        return Err(Error::EmptyRegion(format!(
            "no grid node with u <= L/sqrt|tau| = {us}; increase |tau| or the grid"
        )));
    }
    Ok(p)
}

/// Default L: the far-field onset of the Bryant profile.
pub fn default_l() -> f64 {
    default_table().far_field_onset()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::ansatz::{AnsatzParams, OvalAnsatz};
    use crate::geometry::{apply_gauge, reference_rescaled, ExactSource, ReferenceKind};
    use crate::numerics::max_abs;

    fn sphere(n: usize) -> RescaledState {
        reference_rescaled(ReferenceKind::Sphere, n, 0.0, 0.0)
    }

    #[test]
    fn sphere_inverts_to_quadratic_y() {
        let tp = invert_profile(&sphere(513), 0.5).unwrap();
        assert_eq!(tp.u[0], 0.0);
        assert!((tp.y[0] - 1.0).abs() < 1e-10);
        for i in 0..tp.u.len() {
            assert!((tp.y[i] - (1.0 - tp.u[i] * tp.u[i] / 4.0)).abs() < 1e-10, "{i}");
            // round trip against the exact profile
            assert!((2.0 * (tp.sigma[i] / 2.0).cos() - tp.u[i]).abs() < 1e-10);
        }
        assert!(tp.sigma.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn non_monotone_branch_rejected() {
        let mut s = sphere(129);
        s.u[120] = s.u[119] + 1e-3;
        assert!(matches!(invert_profile(&s, 0.5), Err(Error::NonMonotone(_))));
    }

    #[test]
    fn sphere_y_is_stationary() {
        let u = uniform(0.0, 1.0, 101);
        let y: Vec<f64> = u.iter().map(|v| 1.0 - v * v / 4.0).collect();
        let tp = TipProfile::from_y(u, y, -1.0, std::f64::consts::PI).unwrap();
        assert!(max_abs(&rhs_y(&tp)) < 1e-10, "{}", max_abs(&rhs_y(&tp)));
        assert!((2.0 * (tp.sigma[100] / 2.0).cos() - 1.0).abs() < 1e-4);
    }

    #[test]
    fn flat_cap_is_exact() {
        let u = uniform(0.0, 1.0, 50);
        let y = vec![1.0; 50];
        let tp = TipProfile::from_y(u.clone(), y, -3.0, 5.0).unwrap();
        let r = rhs_y(&tp);
        // only the transport term -u Y_u / 2 survives, and Y_u = 0
        assert!(max_abs(&r) < 1e-9, "{}", max_abs(&r));
    }

    #[test]
    fn inverted_sphere_satisfies_y_equation() {
        let tp = invert_profile(&sphere(1025), 0.5).unwrap();
        assert!(max_abs(&rhs_y(&tp)) < 1e-6, "{}", max_abs(&rhs_y(&tp)));
    }

    #[test]
    fn soliton_frame_matches_bryant() {
        let a = OvalAnsatz::new(-400.0, AnsatzParams::default(), default_table()).unwrap();
        let st = a.state(a.default_nodes());
        let tp = invert_profile(&st, 0.25).unwrap();
        let zf = to_soliton_frame(&tp);
        assert_eq!(zf.z_at(0.0).unwrap(), zf.z[0]);
        assert!((zf.z[0] - 1.0).abs() < 1e-6);
        let b = default_table();
        let mut worst: f64 = 0.0;
        for (r, z) in zf.rho.iter().zip(&zf.z) {
            if *r <= 10.0 {
                worst = worst.max((z - b.z(*r)).abs());
            }
        }
        assert!(worst <= 0.05, "{worst}");
        let z10 = zf.z_at(10.0).unwrap();
        assert!((z10 * 100.0 - 1.0).abs() < 0.2, "{z10}");
        // Y against Z0 in relative terms on the soliton region
        for (u, y) in tp.u.iter().zip(&tp.y) {
            let rho = u * 20.0;
            if rho <= 2.6 {
                assert!((y / b.z(rho) - 1.0).abs() < 0.02);
            }
        }
    }

    #[test]
    fn identity_gauge_tip() {
        let src = ExactSource(ReferenceKind::Sphere);
        let g = GaugeParams::identity(-5.0);
        let a = gauge_tip(&src, -5.0, &g, 0.5, 257).unwrap();
        let st = RescaledState {
            sigma: uniform(-std::f64::consts::PI, std::f64::consts::PI, 257),
            ..sphere(257)
        };
        let b = invert_profile(&RescaledState { tau: -5.0, ..st }, 0.5).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gauge_commutes_with_inversion() {
        let src = ExactSource(ReferenceKind::Sphere);
        let tau = -2.0;
        let g = GaugeParams::from_beta(0.3, 0.4, tau);
        let lam = g.dilation_sq(tau).sqrt();
        let grid = uniform(-lam * std::f64::consts::PI, lam * std::f64::consts::PI, 401);
        let via_u = invert_profile(&apply_gauge(&src, &grid, tau, &g).unwrap(), 0.4).unwrap();
        let via_y = gauge_tip(&src, tau, &g, 0.4, 401).unwrap();
        for (u, y) in via_u.u.iter().zip(&via_u.y) {
            assert!((via_y.y_at(*u).unwrap() - y).abs() < 1e-8);
        }
        // the sphere family is self-similar: Y(u) = 1 - u^2/(4 lam^2)
        for (u, y) in via_y.u.iter().zip(&via_y.y) {
            assert!((y - (1.0 - u * u / (4.0 * lam * lam))).abs() < 1e-9);
        }
        let pure_shift = GaugeParams::from_beta(0.0, 0.7, tau);
        let t = gauge_tip(&src, tau, &pure_shift, 0.4, 401).unwrap();
        for (u, y) in t.u.iter().zip(&t.y) {
            assert!((y - (1.0 - u * u / 4.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn charts_agree_on_an_evolved_oval() {
        use crate::flow::rescaled::{Boundary, RescaledIntegrator};
        use crate::flow::run::oval_block;
        use crate::flow::ansatz::cylindrical_profile;
        let bc = |s: f64, t: f64| cylindrical_profile(s, t);
        let integ = RescaledIntegrator { cfl: 0.2, boundary: Boundary::Prescribed(&bc), u_min: 0.0 };
        // the block edge needs cell Peclet number (sigma/2) h/2 below 1
        assert!(crate::flow::run::min_oval_nodes(-400.0, 1.85) <= 801);
        let (warm, _) = integ.evolve(&oval_block(-400.0, 801, 1.85), -399.0, 1.0);
        let s0 = warm.last().unwrap().clone();
        let grid = uniform(0.6, 1.0, 41);
        let res = |dt: f64| {
            let (snaps, err) = integ.evolve(&s0, -399.0 + dt, dt);
            assert!(err.is_none());
            let a = invert_on_grid(&snaps[0], &grid).unwrap();
            let b = invert_on_grid(snaps.last().unwrap(), &grid).unwrap();
            max_abs(&y_chart_residual(&a, &b).unwrap())
        };
        let (r1, r2) = (res(0.2), res(0.1));
        assert!(r2 < r1 && r2 < 1e-6, "{r1} {r2}");
    }

    #[test]
    fn partition_cases() {
        let cyl = reference_rescaled(ReferenceKind::Cylinder, 65, -400.0, 5.0);
        let p = partition(&cyl.u, -400.0, 0.1, 2.0).unwrap();
        assert!(p.tip.is_empty() && p.cylindrical.len() == 65);

        let s = sphere(1001);
        let p = partition(&s.u, -400.0, 1.0, 10.0).unwrap();
        assert!(!p.d_theta.is_empty());
        for &i in &p.d_theta {
            assert!(s.u[i] >= 0.25 && s.u[i] <= 0.5);
            assert!(p.cylindrical.contains(&i) && p.tip.contains(&i));
        }
        let mut both: Vec<usize> = p.collar.iter().chain(&p.soliton).cloned().collect();
        both.sort();
        both.dedup();
        assert_eq!(both, p.tip);

        let r = partition(&s.u, -400.0, 0.1, 10.0);
        assert!(matches!(r, Err(Error::EmptyRegion(_))));
        assert!(matches!(partition(&s.u, -400.0, 2.0, 10.0), Err(Error::InvalidParameter(_))));
    }
}
