//! Config-driven runs.

use serde::{Deserialize, Serialize};

use crate::bryant::default_table;
use crate::error::{Error, Result};
use crate::geometry::{reference_sphere_profile, uniform, ProfileState, RescaledState};
use crate::numerics::linear_fit;
use crate::tip_chart::{invert_on_grid, TipProfile};

use super::ansatz::{cylindrical_profile, AnsatzParams, OvalAnsatz};
use super::physical::{equator_radius, PhysicalIntegrator};
use super::rescaled::{Boundary, RescaledIntegrator};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialKind {
    /// u = sqrt2 on [-half_width, half_width], reflecting ends.
    Cylinder,
    /// u = sqrt2 + epsilon, reflecting ends.
    PerturbedCylinder,
    /// Unrescaled round sphere of radius 2 sqrt(-t0), t0 = -e^{-tau_init}.
    Sphere,
    /// Cylindrical block |z| <= z_max of the oval ansatz; ends follow the ansatz.
    Oval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub kind: InitialKind,
    pub n: usize,
    pub cfl: f64,
    pub tau_init: f64,
    pub tau_end: f64,
    pub theta: f64,
    pub cadence: f64,
    pub epsilon: f64,
    pub half_width: f64,
    pub z_max: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            kind: InitialKind::Cylinder,
            n: 256,
            cfl: 0.2,
            tau_init: -20.0,
            tau_end: -10.0,
            theta: 0.1,
            cadence: 1.0,
            epsilon: 1e-5,
            half_width: 12.0,
            z_max: 1.85,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 64 {
            return Err(Error::SchemaError(format!("N = {} must be at least 64", self.n)));
        }
        if !(self.cfl > 0.0 && self.cfl <= 0.5) {
            return Err(Error::SchemaError(format!("cfl = {} must lie in (0, 0.5]", self.cfl)));
        }
        if self.tau_init >= self.tau_end {
            return Err(Error::SchemaError("tau_init must be below tau_end".into()));
        }
        if self.kind != InitialKind::Sphere && self.tau_end > -10.0 {
            return Err(Error::SchemaError("rescaled runs need tau_end <= -10".into()));
        }
        if self.cadence <= 0.0 {
            return Err(Error::SchemaError("cadence must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RunOutcome {
    Completed,
    BlowUp { time: f64, rate: f64 },
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub rescaled: Vec<RescaledState>,
    pub physical: Vec<ProfileState>,
    pub outcome: RunOutcome,
}

fn finish<T>(snaps: Vec<T>, err: Option<Error>) -> Result<(Vec<T>, RunOutcome)> {
    match err {
        None => Ok((snaps, RunOutcome::Completed)),
        Some(Error::BlowUpDetected { time, rate }) => Ok((snaps, RunOutcome::BlowUp { time, rate })),
        Some(e) => Err(e),
    }
}

/// Fewest nodes keeping the cell Peclet number (sigma/2) h / 2 of the drift
/// term at most 1 at the block edge; coarser grids ring there.
pub fn min_oval_nodes(tau: f64, z_max: f64) -> usize {
    let sb = z_max * tau.abs().sqrt();
    (sb * sb / 2.0).ceil() as usize
}

/// The cylindrical block |z| <= z_max of the oval ansatz on `n` nodes.
pub fn oval_block(tau: f64, n: usize, z_max: f64) -> RescaledState {
    let sb = z_max * tau.abs().sqrt();
    let sigma = uniform(-sb, sb, n | 1);
    let u = sigma.iter().map(|s| cylindrical_profile(*s, tau)).collect();
    RescaledState { sigma, u, tau, sigma_plus: f64::INFINITY, sigma_minus: f64::NEG_INFINITY }
}

pub fn run(config: &SolverConfig) -> Result<RunOutput> {
    config.validate()?;
    match config.kind {
        InitialKind::Cylinder | InitialKind::PerturbedCylinder => {
            let sigma = uniform(-config.half_width, config.half_width, config.n | 1);
            let shift = if config.kind == InitialKind::PerturbedCylinder { config.epsilon } else { 0.0 };
            let state = RescaledState {
                u: vec![2f64.sqrt() + shift; sigma.len()],
                sigma,
                tau: config.tau_init,
                sigma_plus: f64::INFINITY,
                sigma_minus: f64::NEG_INFINITY,
            };
            let integ = RescaledIntegrator { cfl: config.cfl, boundary: Boundary::Reflect, u_min: 0.0 };
            let (snaps, err) = integ.evolve(&state, config.tau_end, config.cadence);
            let (rescaled, outcome) = finish(snaps, err)?;
            Ok(RunOutput { rescaled, physical: vec![], outcome })
        }
        InitialKind::Oval => {
            let need = min_oval_nodes(config.tau_init, config.z_max);
            if config.n < need {
                return Err(Error::UnderResolved(format!(
                    "oval block at tau = {} needs N >= {need}, got {}",
                    config.tau_init, config.n
                )));
            }
            let state = oval_block(config.tau_init, config.n, config.z_max);
            let bc = |s: f64, tau: f64| cylindrical_profile(s, tau);
            let integ = RescaledIntegrator {
                cfl: config.cfl,
                boundary: Boundary::Prescribed(&bc),
                u_min: config.theta / 8.0,
            };
            let (snaps, err) = integ.evolve(&state, config.tau_end, config.cadence);
            let (rescaled, outcome) = finish(snaps, err)?;
            Ok(RunOutput { rescaled, physical: vec![], outcome })
        }
        InitialKind::Sphere => {
            let t0 = -(-config.tau_init).exp();
            let t_end = -(-config.tau_end).exp();
            let state = reference_sphere_profile(config.n, 2.0 * (-t0).sqrt(), t0);
            let integ = PhysicalIntegrator { cfl: config.cfl };
            let cadence = config.cadence * (-t0);
            let (snaps, err) = integ.evolve(&state, t_end, cadence, |_| false);
            let (physical, outcome) = finish(snaps, err)?;
            Ok(RunOutput { rescaled: vec![], physical, outcome })
        }
    }
}

/// Result of the shrinking-sphere experiment.
#[derive(Debug, Clone, Serialize)]
pub struct SphereLaw {
    pub slope: f64,
    pub intercept: f64,
    pub rms: f64,
    pub samples: usize,
    pub final_radius: f64,
}

/// Evolve the round sphere of radius r0 at t = -r0^2/4 until its equatorial
/// radius drops to r_stop, and fit r^2 against t.
pub fn sphere_radius_law(n: usize, r0: f64, r_stop: f64, cfl: f64) -> Result<SphereLaw> {
    let t0 = -r0 * r0 / 4.0;
    let state = reference_sphere_profile(n, r0, t0);
    let integ = PhysicalIntegrator { cfl };
    let cadence = (r0 * r0 - r_stop * r_stop) / 4.0 / 200.0;
    let (snaps, err) = integ.evolve(&state, 0.0, cadence, |s| equator_radius(s) <= r_stop);
    if let Some(e) = err {
        return Err(e);
    }
    let (t, r2): (Vec<f64>, Vec<f64>) = snaps
        .iter()
        .map(|s| {
            let r = equator_radius(s);
            (s.t, r * r)
        })
        .unzip();
    let (slope, intercept, rms) = linear_fit(&t, &r2);
    Ok(SphereLaw {
        slope,
        intercept,
        rms,
        samples: t.len(),
        final_radius: r2.last().unwrap().sqrt(),
    })
}

/// Default ansatz object at tau.
pub fn default_ansatz(tau: f64) -> Result<OvalAnsatz> {
    OvalAnsatz::new(tau, AnsatzParams::default(), default_table())
}

/// Tip chart of the default ansatz on n uniform u-nodes of [0, 2 theta].
pub fn ansatz_tip(tau: f64, theta: f64, n: usize) -> Result<TipProfile> {
    let a = default_ansatz(tau)?;
    invert_on_grid(&a.state(a.default_nodes()), &uniform(0.0, 2.0 * theta, n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::max_abs;

    #[test]
    fn cylinder_is_preserved() {
        let cfg = SolverConfig { tau_init: -20.0, tau_end: -10.0, ..Default::default() };
        let out = run(&cfg).unwrap();
        assert_eq!(out.outcome, RunOutcome::Completed);
        let last = out.rescaled.last().unwrap();
        assert!((last.tau + 10.0).abs() < 1e-12);
        let dev: Vec<f64> = last.u.iter().map(|u| u - 2f64.sqrt()).collect();
        assert!(max_abs(&dev) <= 1e-8);
    }

    #[test]
    fn constant_perturbation_grows_like_e_tau() {
        let cfg = SolverConfig {
            kind: InitialKind::PerturbedCylinder,
            n: 64,
            tau_init: -12.0,
            tau_end: -11.0,
            ..Default::default()
        };
        let out = run(&cfg).unwrap();
        let last = out.rescaled.last().unwrap();
        let factor = (last.u[32] - 2f64.sqrt()) / cfg.epsilon;
        assert!((factor / std::f64::consts::E - 1.0).abs() < 0.02, "{factor}");
    }

    #[test]
    fn sphere_obeys_radius_law() {
        let law = sphere_radius_law(128, 2.0, 0.5, 0.2).unwrap();
        assert!((law.slope / -4.0 - 1.0).abs() < 1e-3, "{:?}", law);
        assert!(law.final_radius <= 0.5 + 1e-2);
    }

    #[test]
    fn oval_block_evolves_without_blow_up() {
        let cfg = SolverConfig {
            kind: InitialKind::Oval,
            n: 701,
            tau_init: -400.0,
            tau_end: -399.0,
            ..Default::default()
        };
        let out = run(&cfg).unwrap();
        assert_eq!(out.outcome, RunOutcome::Completed);
        let last = out.rescaled.last().unwrap();
        let c = last.u.len() / 2;
        assert!((last.u[c] - cylindrical_profile(0.0, -399.0)).abs() < 1e-3);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let cfg = SolverConfig { n: 8, ..Default::default() };
        assert!(matches!(run(&cfg), Err(Error::SchemaError(_))));
        let cfg = SolverConfig { tau_end: -30.0, ..Default::default() };
        assert!(matches!(run(&cfg), Err(Error::SchemaError(_))));
        let cfg = SolverConfig { kind: InitialKind::Oval, tau_init: -400.0, tau_end: -399.0, ..Default::default() };
        assert!(matches!(run(&cfg), Err(Error::UnderResolved(_))));
    }
}
