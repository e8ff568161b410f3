//! The commuting-variable equation
//! u_tau = u_ss - (s/2) u_s - J u_s + u_s^2/u - 1/u + u/2,  J = 2 int_0^s u_ss/u.

use crate::error::{Error, Result};
use crate::geometry::RescaledState;
use crate::numerics::{cumtrapz_from, deriv1, deriv2, nearest_index, UniformOps};

/// Rate above which a run is declared to be blowing up.
pub const BLOW_UP_RATE: f64 = 1e6;

fn is_uniform(x: &[f64]) -> bool {
    if x.len() < 9 {
        return false;
    }
    let h = (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64;
    x.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs())
}

/// First and second sigma-derivatives: sixth-order operators on uniform
/// grids, three-point formulas otherwise.
pub fn sigma_derivatives(sigma: &[f64], u: &[f64]) -> (Vec<f64>, Vec<f64>) {
    if is_uniform(sigma) {
        let h = (sigma[sigma.len() - 1] - sigma[0]) / (sigma.len() - 1) as f64;
        let ops = UniformOps::new(sigma[0], h, sigma.len());
        (ops.d1(u), ops.d2(u))
    } else {
        (deriv1(sigma, u), deriv2(sigma, u))
    }
}

fn check_positive(u: &[f64], u_min: f64) -> Result<()> {
    match u.iter().find(|v| **v < u_min || **v <= 0.0) {
        Some(v) => Err(Error::TipInRange(*v)),
        None => Ok(()),
    }
}

/// Cumulative integral from sigma = 0, sixth order on uniform grids.
pub(crate) fn integrate_from_zero(sigma: &[f64], f: &[f64]) -> Vec<f64> {
    if is_uniform(sigma) {
        let h = (sigma[sigma.len() - 1] - sigma[0]) / (sigma.len() - 1) as f64;
        UniformOps::new(sigma[0], h, sigma.len()).cumulative(f, 0.0)
    } else {
        let j = nearest_index(sigma, 0.0);
        let mut out = cumtrapz_from(sigma, f, j);
        // shift so the integral vanishes at sigma = 0 rather than at node j
        let shift = sigma[j] * f[j];
        out.iter_mut().for_each(|v| *v += shift);
        out
    }
}

/// J(sigma) = 2 int_0^sigma u_ss / u.
pub fn compute_j(state: &RescaledState) -> Result<Vec<f64>> {
    check_positive(&state.u, 0.0)?;
    let (_, uss) = sigma_derivatives(&state.sigma, &state.u);
    let f: Vec<f64> = uss.iter().zip(&state.u).map(|(a, b)| 2.0 * a / b).collect();
    Ok(integrate_from_zero(&state.sigma, &f))
}

/// Rates on the contiguous block of nodes around sigma = 0 with u >= u_min.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockRates {
    /// Index of the first node of the block in the input state.
    pub start: usize,
    pub rates: Vec<f64>,
}

/// Full commuting-variable right-hand side on the cylindrical block
/// u >= u_min. Derivatives use the whole grid, so tips may be present in the
/// state; J is integrated from sigma = 0 across the block only.
pub fn rhs_rescaled(state: &RescaledState, u_min: f64) -> Result<BlockRates> {
    let u_min = u_min.max(f64::MIN_POSITIVE);
    let c = nearest_index(&state.sigma, 0.0);
    if state.u[c] < u_min {
        return Err(Error::TipInRange(state.u[c]));
    }
    let (mut lo, mut hi) = (c, c);
    while lo > 0 && state.u[lo - 1] >= u_min {
        lo -= 1;
    }
    while hi + 1 < state.u.len() && state.u[hi + 1] >= u_min {
        hi += 1;
    }
    let (us, uss) = sigma_derivatives(&state.sigma, &state.u);
    let sig = &state.sigma[lo..=hi];
    let u = &state.u[lo..=hi];
    let f: Vec<f64> = (lo..=hi).map(|i| 2.0 * uss[i] / state.u[i]).collect();
    let j = integrate_from_zero(sig, &f);
    let rates = (0..u.len())
        .map(|k| {
            let i = lo + k;
            uss[i] - 0.5 * sig[k] * us[i] - j[k] * us[i] + us[i] * us[i] / u[k] - 1.0 / u[k] + 0.5 * u[k]
        })
        .collect();
    Ok(BlockRates { start: lo, rates })
}

fn rhs_unchecked(sigma: &[f64], u: &[f64]) -> Vec<f64> {
    let (us, uss) = sigma_derivatives(sigma, u);
    let f: Vec<f64> = uss.iter().zip(u).map(|(a, b)| 2.0 * a / b).collect();
    let j = integrate_from_zero(sigma, &f);
    (0..u.len())
        .map(|i| {
            uss[i] - 0.5 * sigma[i] * us[i] - j[i] * us[i] + us[i] * us[i] / u[i] - 1.0 / u[i]
                + 0.5 * u[i]
        })
        .collect()
}

/// The plain (non-commuting) form u_ss + u_s^2/u - 1/u + u/2.
pub fn rhs_plain(state: &RescaledState) -> Result<Vec<f64>> {
    check_positive(&state.u, 0.0)?;
    let (us, uss) = sigma_derivatives(&state.sigma, &state.u);
    Ok((0..state.u.len())
        .map(|i| {
            let u = state.u[i];
            uss[i] + us[i] * us[i] / u - 1.0 / u + 0.5 * u
        })
        .collect())
}

/// The contiguous block of nodes around sigma = 0 where u >= u_min.
pub fn restrict(state: &RescaledState, u_min: f64) -> Result<RescaledState> {
    let c = nearest_index(&state.sigma, 0.0);
    if state.u[c] < u_min {
        return Err(Error::EmptyRegion(format!("u(0) = {} below {}", state.u[c], u_min)));
    }
    let mut lo = c;
    while lo > 0 && state.u[lo - 1] >= u_min {
        lo -= 1;
    }
    let mut hi = c;
    while hi + 1 < state.u.len() && state.u[hi + 1] >= u_min {
        hi += 1;
    }
    Ok(RescaledState {
        sigma: state.sigma[lo..=hi].to_vec(),
        u: state.u[lo..=hi].to_vec(),
        tau: state.tau,
        sigma_plus: state.sigma_plus,
        sigma_minus: state.sigma_minus,
    })
}

/// How ghost values beyond the evolved block are supplied.
pub enum Boundary<'a> {
    /// Even reflection about the end nodes (zero slope).
    Reflect,
    /// Values of a known profile u(sigma, tau).
    Prescribed(&'a (dyn Fn(f64, f64) -> f64 + Sync)),
}

const GHOSTS: usize = 3;

/// Explicit classical RK4 for the commuting-variable equation.
pub struct RescaledIntegrator<'a> {
    pub cfl: f64,
    pub boundary: Boundary<'a>,
    pub u_min: f64,
}

impl<'a> RescaledIntegrator<'a> {
    fn extended_rhs(&self, sigma: &[f64], u: &[f64], tau: f64) -> Result<Vec<f64>> {
        let n = u.len();
        let h = sigma[1] - sigma[0];
        let mut se = Vec::with_capacity(n + 2 * GHOSTS);
        let mut ue = Vec::with_capacity(n + 2 * GHOSTS);
        for k in (1..=GHOSTS).rev() {
            let s = sigma[0] - k as f64 * h;
            se.push(s);
            ue.push(match &self.boundary {
                Boundary::Reflect => u[k],
                Boundary::Prescribed(f) => f(s, tau),
            });
        }
        se.extend_from_slice(sigma);
        ue.extend_from_slice(u);
        for k in 1..=GHOSTS {
            let s = sigma[n - 1] + k as f64 * h;
            se.push(s);
            ue.push(match &self.boundary {
                Boundary::Reflect => u[n - 1 - k],
                Boundary::Prescribed(f) => f(s, tau),
            });
        }
        check_positive(&ue, self.u_min)?;
        let r = rhs_unchecked(&se, &ue);
        let out = r[GHOSTS..GHOSTS + n].to_vec();
        let rate = out.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        if !rate.is_finite() || rate > BLOW_UP_RATE {
            return Err(Error::BlowUpDetected { time: tau, rate });
        }
        Ok(out)
    }

    /// Largest admissible step for the grid of `state`.
    pub fn max_dt(&self, state: &RescaledState) -> f64 {
        let h = state.sigma[1] - state.sigma[0];
        self.cfl * h * h
    }

    pub fn step(&self, state: &RescaledState, dt: f64) -> Result<RescaledState> {
        let limit = self.max_dt(state);
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::CflViolation { dt, limit });
        }
        let s = &state.sigma;
        let u0 = &state.u;
        let t0 = state.tau;
        let add = |a: &[f64], k: &[f64], c: f64| -> Vec<f64> {
            a.iter().zip(k).map(|(x, y)| x + c * y).collect()
        };
        let k1 = self.extended_rhs(s, u0, t0)?;
        let k2 = self.extended_rhs(s, &add(u0, &k1, 0.5 * dt), t0 + 0.5 * dt)?;
        let k3 = self.extended_rhs(s, &add(u0, &k2, 0.5 * dt), t0 + 0.5 * dt)?;
        let k4 = self.extended_rhs(s, &add(u0, &k3, dt), t0 + dt)?;
        let u = (0..u0.len())
            .map(|i| u0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        Ok(RescaledState { u, tau: t0 + dt, ..state.clone() })
    }

    /// Advance to `tau_end`, recording a snapshot every `cadence` units of tau
    /// (and at the end). On blow-up the error carries the time and the
    /// snapshots gathered so far are returned alongside it.
    pub fn evolve(
        &self,
        state: &RescaledState,
        tau_end: f64,
        cadence: f64,
    ) -> (Vec<RescaledState>, Option<Error>) {
        let mut snaps = vec![state.clone()];
        let mut cur = state.clone();
        let dt_max = self.max_dt(state);
        let mut next_snap = state.tau + cadence;
        while cur.tau < tau_end - 1e-12 {
            let target = next_snap.min(tau_end);
            let steps = ((target - cur.tau) / dt_max).ceil().max(1.0) as usize;
            let dt = (target - cur.tau) / steps as f64;
            for _ in 0..steps {
                match self.step(&cur, dt) {
                    Ok(s) => cur = s,
                    Err(e) => return (snaps, Some(e)),
                }
            }
            cur.tau = target;
            snaps.push(cur.clone());
            next_snap += cadence;
        }
        (snaps, None)
    }
}
