//! Unrescaled flow on the staggered x-grid:
//! psi_t = psi_ss - (1 - psi_s^2)/psi,  phi_t = 2 phi psi_ss / psi.

use crate::error::{Error, Result};
use crate::geometry::{curvatures_profile, ProfileState};
use crate::numerics::cubic_lagrange;

use super::rescaled::BLOW_UP_RATE;

/// Time derivatives (phi_t, psi_t). Written through the curvatures,
/// psi_t = -psi (K0 + K1) and phi_t = -2 phi K0, which keeps the pole values
/// regular.
pub fn rhs_physical(state: &ProfileState) -> Result<(Vec<f64>, Vec<f64>)> {
    let k = curvatures_profile(state)?;
    let phi_t = state.phi.iter().zip(&k.k0).map(|(p, k0)| -2.0 * p * k0).collect();
    let psi_t = state
        .psi
        .iter()
        .zip(k.k0.iter().zip(&k.k1))
        .map(|(p, (k0, k1))| -p * (k0 + k1))
        .collect();
    Ok((phi_t, psi_t))
}

/// Equatorial radius psi(x = 0) by cubic interpolation.
pub fn equator_radius(state: &ProfileState) -> f64 {
    cubic_lagrange(&state.x, &state.psi, 0.0)
}

pub struct PhysicalIntegrator {
    pub cfl: f64,
}

impl PhysicalIntegrator {
    /// dt <= cfl * (min arclength spacing)^2.
    pub fn max_dt(&self, state: &ProfileState) -> f64 {
        let h = state.x[1] - state.x[0];
        let ds = state.phi.iter().fold(f64::INFINITY, |a, p| a.min(p * h));
        self.cfl * ds * ds
    }

    pub fn step(&self, state: &ProfileState, dt: f64) -> Result<ProfileState> {
        let limit = self.max_dt(state);
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::CflViolation { dt, limit });
        }
        let eval = |s: &ProfileState| -> Result<(Vec<f64>, Vec<f64>)> {
            let (a, b) = rhs_physical(s)?;
            let rate = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if !rate.is_finite() || rate > BLOW_UP_RATE {
                return Err(Error::BlowUpDetected { time: s.t, rate });
            }
            Ok((a, b))
        };
        let shifted = |k: &(Vec<f64>, Vec<f64>), c: f64, t: f64| ProfileState {
            x: state.x.clone(),
            phi: state.phi.iter().zip(&k.0).map(|(p, d)| p + c * d).collect(),
            psi: state.psi.iter().zip(&k.1).map(|(p, d)| p + c * d).collect(),
            t,
        };
        let k1 = eval(state)?;
        let k2 = eval(&shifted(&k1, 0.5 * dt, state.t + 0.5 * dt))?;
        let k3 = eval(&shifted(&k2, 0.5 * dt, state.t + 0.5 * dt))?;
        let k4 = eval(&shifted(&k3, dt, state.t + dt))?;
        let comb = |base: &[f64], a: &[f64], b: &[f64], c: &[f64], d: &[f64]| -> Vec<f64> {
            (0..base.len())
                .map(|i| base[i] + dt / 6.0 * (a[i] + 2.0 * b[i] + 2.0 * c[i] + d[i]))
                .collect()
        };
        let out = ProfileState {
            x: state.x.clone(),
            phi: comb(&state.phi, &k1.0, &k2.0, &k3.0, &k4.0),
            psi: comb(&state.psi, &k1.1, &k2.1, &k3.1, &k4.1),
            t: state.t + dt,
        };
        if let Some((i, v)) = out.psi.iter().enumerate().find(|(_, v)| **v <= 0.0) {
            return Err(Error::DegenerateProfile { index: i, value: *v });
        }
        Ok(out)
    }

    /// Step until `stop` returns true or `t_end` is reached, recording a
    /// snapshot every `cadence` units of t. Blow-up ends the run with the
    /// snapshots gathered so far.
    pub fn evolve<F>(
        &self,
        state: &ProfileState,
        t_end: f64,
        cadence: f64,
        stop: F,
    ) -> (Vec<ProfileState>, Option<Error>)
    where
        F: Fn(&ProfileState) -> bool,
    {
        let mut snaps = vec![state.clone()];
        let mut cur = state.clone();
        let mut next_snap = state.t + cadence;
        while cur.t < t_end && !stop(&cur) {
            let dt = self.max_dt(&cur).min(t_end - cur.t).min(next_snap - cur.t).max(1e-300);
            match self.step(&cur, dt) {
                Ok(s) => cur = s,
                Err(e) => {
                    snaps.push(cur);
                    return (snaps, Some(e));
                }
            }
            if cur.t >= next_snap - 1e-15 {
                snaps.push(cur.clone());
                next_snap += cadence;
            }
        }
        if snaps.last().map(|s| s.t) != Some(cur.t) {
            snaps.push(cur);
        }
        (snaps, None)
    }
}
