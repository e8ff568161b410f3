//! Approximate ancient oval data glued from the inner, intermediate and
//! Bryant-tip expansions.

use serde::{Deserialize, Serialize};

use crate::bryant::{default_table, BryantTable};
use crate::error::{Error, Result};
use crate::geometry::{uniform, RescaledState};
use crate::numerics::{blend, dopri5};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnsatzParams {
    /// The intermediate profile hands over to the Bryant tip on u in [theta/2, theta].
    pub blend_theta: f64,
    /// Grid nodes per tip length scale 1/sqrt|tau|.
    pub nodes_per_tip_scale: f64,
}

impl Default for AnsatzParams {
    fn default() -> Self {
        Self { blend_theta: 0.6, nodes_per_tip_scale: 10.0 }
    }
}

/// Inner expansion sqrt2 (1 - (sigma^2 - 2)/(8|tau|)).
pub fn inner_profile(sigma: f64, tau: f64) -> f64 {
    2f64.sqrt() * (1.0 - (sigma * sigma - 2.0) / (8.0 * tau.abs()))
}

/// Intermediate profile sqrt(2 - z^2/2), z = sigma/sqrt|tau|.
pub fn intermediate_profile(sigma: f64, tau: f64) -> f64 {
    let z2 = sigma * sigma / tau.abs();
    (2.0 - 0.5 * z2).max(0.0).sqrt()
}

/// The ansatz away from the tips: inner expansion blended into the
/// intermediate profile over |sigma| in [|tau|^{1/4}, 2|tau|^{1/4}].
pub fn cylindrical_profile(sigma: f64, tau: f64) -> f64 {
    let a = tau.abs().powf(0.25);
    let w = blend(sigma.abs(), a, 2.0 * a);
    (1.0 - w) * inner_profile(sigma, tau) + w * intermediate_profile(sigma, tau)
}

/// Y = u_sigma^2 of the intermediate profile as a function of u.
pub fn intermediate_y(u: f64, tau: f64) -> f64 {
    (2.0 - u * u) / (2.0 * tau.abs() * u * u)
}

#[derive(Debug, Clone)]
pub struct OvalAnsatz {
    pub tau: f64,
    pub params: AnsatzParams,
    /// |sigma| where the intermediate profile reaches u = blend_theta.
    pub sigma_join: f64,
    pub sigma_plus: f64,
    /// Tip table: distance s from the tip, u(s), u'(s).
    s_nodes: Vec<f64>,
    u_nodes: Vec<f64>,
    du_nodes: Vec<f64>,
}

impl OvalAnsatz {
    pub fn new(tau: f64, params: AnsatzParams, bryant: &BryantTable) -> Result<Self> {
        if tau > -100.0 {
            return Err(Error::InvalidTime(tau));
        }
        let th = params.blend_theta;
        let at = tau.abs();
        let sq = at.sqrt();
        let y_tip = |u: f64| -> f64 {
            let w = blend(u, 0.5 * th, th);
            let yb = bryant.z(u * sq);
            if w == 0.0 {
                yb
            } else {
                (1.0 - w) * yb + w * intermediate_y(u, tau)
            }
        };
        // du/ds = sqrt(Y(u)) from the tip (u = 0, Y = 1).
        let rhs = |_s: f64, y: [f64; 2]| [y_tip(y[0].max(0.0)).max(0.0).sqrt(), 0.0];
        let ds = 0.05 / sq;
        let mut s_nodes = vec![0.0];
        let mut u_nodes = vec![0.0];
        let mut du_nodes = vec![1.0];
        let mut y = [0.0, 0.0];
        let mut s = 0.0;
        while *u_nodes.last().unwrap() < th {
            y = dopri5(rhs, s, y, s + ds, 1e-13, 1e-15, ds).ok_or(Error::StepFailure(s))?;
            s += ds;
            s_nodes.push(s);
            u_nodes.push(y[0]);
            du_nodes.push(rhs(s, y)[0]);
            if s_nodes.len() > 10_000_000 {
                return Err(Error::StepFailure(s));
            }
        }
        // Locate s where u = theta on the last interval by Newton on the Hermite cubic.
        let k = s_nodes.len() - 2;
        let mut sj = s_nodes[k] + (th - u_nodes[k]) / du_nodes[k].max(1e-12);
        for _ in 0..50 {
            let (v, dv) = hermite(&s_nodes, &u_nodes, &du_nodes, k, sj);
            let step = (v - th) / dv;
            sj -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let sigma_join = (at * (4.0 - 2.0 * th * th)).sqrt();
        Ok(Self {
            tau,
            params,
            sigma_join,
            sigma_plus: sigma_join + sj,
            s_nodes,
            u_nodes,
            du_nodes,
        })
    }

    /// u(sigma) on the whole oval, zero beyond the tips.
    pub fn u_at(&self, sigma: f64) -> f64 {
        let a = sigma.abs();
        if a >= self.sigma_plus {
            0.0
        } else if a <= self.sigma_join {
            cylindrical_profile(sigma, self.tau)
        } else {
            let s = self.sigma_plus - a;
            let k = match self.s_nodes.binary_search_by(|v| v.partial_cmp(&s).unwrap()) {
                Ok(i) => i.min(self.s_nodes.len() - 2),
                Err(i) => i.saturating_sub(1).min(self.s_nodes.len() - 2),
            };
            hermite(&self.s_nodes, &self.u_nodes, &self.du_nodes, k, s).0
        }
    }

    /// Sample on a uniform grid of `n` nodes spanning [sigma_-, sigma_+].
    pub fn state(&self, n: usize) -> RescaledState {
        let sigma = uniform(-self.sigma_plus, self.sigma_plus, n);
        let mut u: Vec<f64> = sigma.iter().map(|s| self.u_at(*s)).collect();
        u[0] = 0.0;
        u[n - 1] = 0.0;
        // enforce exact reflection symmetry
        for i in 0..n / 2 {
            let v = 0.5 * (u[i] + u[n - 1 - i]);
            u[i] = v;
            u[n - 1 - i] = v;
        }
        RescaledState {
            sigma,
            u,
            tau: self.tau,
            sigma_plus: self.sigma_plus,
            sigma_minus: -self.sigma_plus,
        }
    }

    /// Default odd node count resolving the tip scale 1/sqrt|tau|.
    pub fn default_nodes(&self) -> usize {
        let n = (2.0 * self.sigma_plus * self.tau.abs().sqrt() * self.params.nodes_per_tip_scale).ceil() as usize;
        n | 1
    }
}

fn hermite(s: &[f64], u: &[f64], du: &[f64], k: usize, t: f64) -> (f64, f64) {
    let h = s[k + 1] - s[k];
    let x = (t - s[k]) / h;
    let h00 = (1.0 + 2.0 * x) * (1.0 - x) * (1.0 - x);
    let h10 = x * (1.0 - x) * (1.0 - x);
    let h01 = x * x * (3.0 - 2.0 * x);
    let h11 = x * x * (x - 1.0);
    let v = h00 * u[k] + h10 * h * du[k] + h01 * u[k + 1] + h11 * h * du[k + 1];
    let d00 = 6.0 * x * x - 6.0 * x;
    let d10 = 3.0 * x * x - 4.0 * x + 1.0;
    let d11 = 3.0 * x * x - 2.0 * x;
    let dv = (d00 * u[k] - d00 * u[k + 1]) / h + d10 * du[k] + d11 * du[k + 1];
    (v, dv)
}

/// The oval ansatz at rescaled time tau with default parameters and grid.
pub fn oval_ansatz(tau: f64) -> Result<RescaledState> {
    let a = OvalAnsatz::new(tau, AnsatzParams::default(), default_table())?;
    Ok(a.state(a.default_nodes()))
}
