//! Domain types, chart transforms, curvatures, the gauge action and exact
//! reference solutions for the warped metric phi^2 dx^2 + psi^2 g_{S^2}.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cubic_lagrange, deriv1, deriv2, Pchip};

/// Unrescaled profile on the staggered x-grid of (-1, 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileState {
    pub x: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub t: f64,
}

/// Type-I rescaled profile u(sigma) at rescaled time tau.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RescaledState {
    pub sigma: Vec<f64>,
    pub u: Vec<f64>,
    pub tau: f64,
    pub sigma_plus: f64,
    pub sigma_minus: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureField {
    pub k0: Vec<f64>,
    pub k1: Vec<f64>,
    pub r: Vec<f64>,
}

/// Parameters of the time-shift / dilation family u^{beta gamma}.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaugeParams {
    /// beta e^{tau0}; beta itself overflows f64 for tau0 below about -709
    pub beta_hat: f64,
    pub gamma: f64,
    pub tau0: f64,
}

impl GaugeParams {
    pub fn identity(tau0: f64) -> Self {
        Self { beta_hat: 0.0, gamma: 0.0, tau0 }
    }

    pub fn from_beta(beta: f64, gamma: f64, tau0: f64) -> Self {
        Self { beta_hat: beta * tau0.exp(), gamma, tau0 }
    }

    /// beta = beta_hat e^{-tau0} (infinite when it does not fit in f64).
    pub fn beta(&self) -> f64 {
        self.beta_hat * (-self.tau0).exp()
    }

    /// 1 + beta e^tau, the dilation factor squared.
    pub fn dilation_sq(&self, tau: f64) -> f64 {
        1.0 + self.beta_hat * (tau - self.tau0).exp()
    }

    /// b = sqrt(1 + beta e^tau) - 1.
    pub fn b(&self, tau: f64) -> f64 {
        self.dilation_sq(tau).sqrt() - 1.0
    }

    /// Gamma = (gamma - log(1 + beta e^tau)) / tau.
    pub fn big_gamma(&self, tau: f64) -> f64 {
        (self.gamma - self.dilation_sq(tau).ln()) / tau
    }

    /// Time argument tau + gamma - log(1 + beta e^tau) at which the original
    /// solution is sampled.
    pub fn shifted_time(&self, tau: f64) -> f64 {
        tau + self.gamma - self.dilation_sq(tau).ln()
    }

    /// Admissibility box: beta <= eps e^{-tau0}/|tau0| and gamma <= eps |tau0|.
    pub fn admissible(&self, eps: f64) -> bool {
        let t0 = self.tau0.abs();
        self.beta_hat.abs() <= eps / t0 && self.gamma.abs() <= eps * t0
    }
}

/// Uniform staggered grid of `n` nodes on (-1, 1) with no node at the poles.
pub fn staggered_grid(n: usize) -> Vec<f64> {
    let h = 2.0 / n as f64;
    (0..n).map(|i| -1.0 + (i as f64 + 0.5) * h).collect()
}

fn check_interior_positive(f: &[f64]) -> Result<()> {
    let n = f.len();
    for (i, &v) in f.iter().enumerate() {
        let interior = i > 0 && i + 1 < n;
        if interior && v <= 0.0 {
            return Err(Error::DegenerateProfile { index: i, value: v });
        }
    }
    Ok(())
}

/// Extend a field by one ghost node at each end: odd reflection for psi,
/// even reflection for phi.
fn with_ghosts(x: &[f64], f: &[f64], odd: bool) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let sign = if odd { -1.0 } else { 1.0 };
    let mut xe = Vec::with_capacity(n + 2);
    let mut fe = Vec::with_capacity(n + 2);
    xe.push(-2.0 - x[0]);
    fe.push(sign * f[0]);
    xe.extend_from_slice(x);
    fe.extend_from_slice(f);
    xe.push(2.0 - x[n - 1]);
    fe.push(sign * f[n - 1]);
    (xe, fe)
}

/// Arclength derivatives (psi_s, psi_ss) on the staggered grid, using the
/// pole ghosts so every node gets a central stencil. psi_ss is taken in flux
/// form (1/phi) d/dx (psi_x / phi) with phi at the half nodes.
pub fn profile_s_derivatives(state: &ProfileState) -> (Vec<f64>, Vec<f64>) {
    let (xe, psie) = with_ghosts(&state.x, &state.psi, true);
    let (_, phie) = with_ghosts(&state.x, &state.phi, false);
    let n = state.x.len();
    let mut ps = vec![0.0; n];
    let mut pss = vec![0.0; n];
    for k in 1..=n {
        let (hl, hr) = (xe[k] - xe[k - 1], xe[k + 1] - xe[k]);
        let fl = (psie[k] - psie[k - 1]) / (hl * 0.5 * (phie[k] + phie[k - 1]));
        let fr = (psie[k + 1] - psie[k]) / (hr * 0.5 * (phie[k] + phie[k + 1]));
        // weighted central slope, exact for quadratics on nonuniform spacing
        let dx = (hr * hr * (psie[k] - psie[k - 1]) + hl * hl * (psie[k + 1] - psie[k]))
            / (hl * hr * (hl + hr));
        ps[k - 1] = dx / phie[k];
        pss[k - 1] = (fr - fl) / (0.5 * (hl + hr) * phie[k]);
    }
    (ps, pss)
}

fn assemble(k0: Vec<f64>, k1: Vec<f64>) -> CurvatureField {
    let r = k0.iter().zip(&k1).map(|(a, b)| 4.0 * a + 2.0 * b).collect();
    CurvatureField { k0, k1, r }
}

/// Sectional and scalar curvatures of an unrescaled profile.
pub fn curvatures_profile(state: &ProfileState) -> Result<CurvatureField> {
    check_interior_positive(&state.psi)?;
    let (ps, pss) = profile_s_derivatives(state);
    let psi = &state.psi;
    let x = &state.x;
    let n = psi.len();
    let mut k1: Vec<f64> = ps.iter().zip(psi).map(|(d, p)| (1.0 - d * d) / (p * p)).collect();
    let k0 = pss.iter().zip(psi).map(|(d, p)| -d / p).collect();
    // Near the poles 1 - psi_s^2 is accumulated from the pole, where it
    // vanishes and psi_ss = 0, as the integral of -d/dx psi_s^2.
    let dy: Vec<f64> = (0..n).map(|i| 2.0 * ps[i] * pss[i] * state.phi[i]).collect();
    let mut acc = 0.5 * (x[0] + 1.0) * dy[0];
    let mut i = 0;
    while i < n / 2 && ps[i] * ps[i] > 0.5 {
        k1[i] = -acc / (psi[i] * psi[i]);
        acc += 0.5 * (x[i + 1] - x[i]) * (dy[i] + dy[i + 1]);
        i += 1;
    }
    let mut acc = 0.5 * (1.0 - x[n - 1]) * dy[n - 1];
    let mut i = n - 1;
    while i > n / 2 && ps[i] * ps[i] > 0.5 {
        k1[i] = acc / (psi[i] * psi[i]);
        acc += 0.5 * (x[i] - x[i - 1]) * (dy[i] + dy[i - 1]);
        i -= 1;
    }
    Ok(assemble(k0, k1))
}

/// Curvatures of a rescaled state. When the state closes off (u = 0 at an
/// end node) the tip chart is used near that end: 1 - Y is accumulated from
/// the tip as the integral of 2 u_sigma u_sigmasigma, which avoids the
/// cancellation in 1 - u_sigma^2, and the tip node takes the regular limit
/// K0 = K1.
pub fn curvatures_rescaled(state: &RescaledState) -> Result<CurvatureField> {
    check_interior_positive(&state.u)?;
    let sig = &state.sigma;
    let us = deriv1(sig, &state.u);
    let uss = deriv2(sig, &state.u);
    let n = state.u.len();
    let mut k0 = vec![0.0; n];
    let mut k1 = vec![0.0; n];
    for i in 0..n {
        let u = state.u[i];
        if u > 0.0 {
            k1[i] = (1.0 - us[i] * us[i]) / (u * u);
            k0[i] = -uss[i] / u;
        }
    }
    let yprime: Vec<f64> = us.iter().zip(&uss).map(|(a, b)| 2.0 * a * b).collect();
    if state.u[n - 1] <= 0.0 {
        let mut one_minus_y = 0.0;
        let mut i = n - 1;
        while i > 0 && us[i - 1] * us[i - 1] > 0.5 {
            one_minus_y += 0.5 * (sig[i] - sig[i - 1]) * (yprime[i] + yprime[i - 1]);
            i -= 1;
            k1[i] = one_minus_y / (state.u[i] * state.u[i]);
        }
        let lim = 3.0 * k0[n - 2] - 3.0 * k0[n - 3] + k0[n - 4];
        k0[n - 1] = lim;
        k1[n - 1] = lim;
    }
    if state.u[0] <= 0.0 {
        let mut one_minus_y = 0.0;
        let mut i = 0;
        while i + 1 < n && us[i + 1] * us[i + 1] > 0.5 {
            one_minus_y -= 0.5 * (sig[i + 1] - sig[i]) * (yprime[i] + yprime[i + 1]);
            i += 1;
            k1[i] = one_minus_y / (state.u[i] * state.u[i]);
        }
        let lim = 3.0 * k0[1] - 3.0 * k0[2] + k0[3];
        k0[0] = lim;
        k1[0] = lim;
    }
    Ok(assemble(k0, k1))
}

/// Arclength s(x) = int_0^x phi by composite trapezoid, plus the pole
/// values (s_-, s_+).
pub fn arclength(state: &ProfileState) -> (Vec<f64>, f64, f64) {
    let x = &state.x;
    let phi = &state.phi;
    let n = x.len();
    let mut s = vec![0.0; n];
    // Locate the cell that contains x = 0.
    let j = x.iter().position(|&v| v >= 0.0).unwrap_or(n);
    if j < n && x[j] == 0.0 {
        for i in j + 1..n {
            s[i] = s[i - 1] + 0.5 * (x[i] - x[i - 1]) * (phi[i] + phi[i - 1]);
        }
        for i in (0..j).rev() {
            s[i] = s[i + 1] - 0.5 * (x[i + 1] - x[i]) * (phi[i] + phi[i + 1]);
        }
    } else {
        let (l, r) = (j - 1, j);
        let w = -x[l] / (x[r] - x[l]);
        let phi0 = phi[l] * (1.0 - w) + phi[r] * w;
        s[r] = 0.5 * x[r] * (phi0 + phi[r]);
        s[l] = 0.5 * x[l] * (phi0 + phi[l]);
        for i in r + 1..n {
            s[i] = s[i - 1] + 0.5 * (x[i] - x[i - 1]) * (phi[i] + phi[i - 1]);
        }
        for i in (0..l).rev() {
            s[i] = s[i + 1] - 0.5 * (x[i + 1] - x[i]) * (phi[i] + phi[i + 1]);
        }
    }
    let h_hi = 1.0 - x[n - 1];
    let phi_hi = phi[n - 1] + (phi[n - 1] - phi[n - 2]) * h_hi / (x[n - 1] - x[n - 2]);
    let s_plus = s[n - 1] + 0.5 * h_hi * (phi[n - 1] + phi_hi);
    let h_lo = x[0] + 1.0;
    let phi_lo = phi[0] - (phi[1] - phi[0]) * h_lo / (x[1] - x[0]);
    let s_minus = s[0] - 0.5 * h_lo * (phi[0] + phi_lo);
    (s, s_minus, s_plus)
}

/// Type-I rescaling u = psi/sqrt(-t), sigma = s/sqrt(-t), tau = -log(-t).
pub fn to_rescaled(state: &ProfileState) -> Result<RescaledState> {
    if state.t >= 0.0 {
        return Err(Error::InvalidTime(state.t));
    }
    let (s, s_minus, s_plus) = arclength(state);
    Ok(rescale_arclength(&s, &state.psi, state.t, s_minus, s_plus))
}

/// Rescale a profile already given in arclength.
pub fn rescale_arclength(s: &[f64], psi: &[f64], t: f64, s_minus: f64, s_plus: f64) -> RescaledState {
    let r = (-t).sqrt();
    RescaledState {
        sigma: s.iter().map(|v| v / r).collect(),
        u: psi.iter().map(|v| v / r).collect(),
        tau: -(-t).ln(),
        sigma_plus: s_plus / r,
        sigma_minus: s_minus / r,
    }
}

/// Inverse of the rescaling: returns (s, psi, t).
pub fn from_rescaled(state: &RescaledState) -> (Vec<f64>, Vec<f64>, f64) {
    let t = -(-state.tau).exp();
    let r = (-t).sqrt();
    (
        state.sigma.iter().map(|v| v * r).collect(),
        state.u.iter().map(|v| v * r).collect(),
        t,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    Cylinder,
    Sphere,
}

/// Exact rescaled solutions: u = sqrt(2) on [-half_width, half_width] for the
/// cylinder, u = 2 cos(sigma/2) on [-pi, pi] for the sphere.
pub fn reference_rescaled(kind: ReferenceKind, n: usize, tau: f64, half_width: f64) -> RescaledState {
    match kind {
        ReferenceKind::Cylinder => {
            let sigma = uniform(-half_width, half_width, n);
            RescaledState {
                u: vec![2f64.sqrt(); n],
                sigma,
                tau,
                sigma_plus: f64::INFINITY,
                sigma_minus: f64::NEG_INFINITY,
            }
        }
        ReferenceKind::Sphere => {
            let pi = std::f64::consts::PI;
            let sigma = uniform(-pi, pi, n);
            let u = sigma.iter().map(|s| sphere_u(*s)).collect();
            RescaledState { sigma, u, tau, sigma_plus: pi, sigma_minus: -pi }
        }
    }
}

/// Round sphere u = 2 cos(sigma/2), clamped to zero past the poles.
pub fn sphere_u(sigma: f64) -> f64 {
    if sigma.abs() >= std::f64::consts::PI {
        0.0
    } else {
        2.0 * (0.5 * sigma).cos()
    }
}

/// Exact shrinking sphere of radius r = sqrt(r0^2 - 4 (t - t0)) written on the
/// staggered x-grid with phi = pi r / 2 and psi = r sin(pi (x + 1) / 2).
pub fn reference_sphere_profile(n: usize, radius: f64, t: f64) -> ProfileState {
    let x = staggered_grid(n);
    let pi = std::f64::consts::PI;
    let phi = vec![0.5 * pi * radius; n];
    let psi = x.iter().map(|v| radius * (0.5 * pi * (v + 1.0)).sin()).collect();
    ProfileState { x, phi, psi, t }
}

/// Exact cylinder psi = sqrt(-2t) on the staggered grid with phi = length.
pub fn reference_cylinder_profile(n: usize, half_length: f64, t: f64) -> ProfileState {
    let x = staggered_grid(n);
    ProfileState {
        x,
        phi: vec![half_length; n],
        psi: vec![(-2.0 * t).sqrt(); n],
        t,
    }
}

pub fn uniform(a: f64, b: f64, n: usize) -> Vec<f64> {
    let h = (b - a) / (n - 1) as f64;
    (0..n).map(|i| a + i as f64 * h).collect()
}

/// Anything that can report u(sigma, tau) on a time window.
pub trait ProfileSource {
    fn window(&self) -> (f64, f64);
    /// Rescaled radius; zero outside the tips.
    fn u_at(&self, sigma: f64, tau: f64) -> Result<f64>;
    /// Tip locations (sigma_-, sigma_+) at time tau.
    fn tips_at(&self, tau: f64) -> Result<(f64, f64)>;
}

/// Stored snapshots, interpolated by monotone cubics in sigma and cubic
/// Lagrange in tau.
#[derive(Debug, Clone)]
pub struct RescaledTrajectory {
    pub taus: Vec<f64>,
    pub states: Vec<RescaledState>,
    interps: Vec<Pchip>,
}

impl RescaledTrajectory {
    pub fn new(states: Vec<RescaledState>) -> Result<Self> {
        let taus: Vec<f64> = states.iter().map(|s| s.tau).collect();
        for i in 1..taus.len() {
            if taus[i] <= taus[i - 1] {
                return Err(Error::NonMonotone(i));
            }
        }
        let interps = states
            .iter()
            .map(|s| Pchip::new(s.sigma.clone(), s.u.clone()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { taus, states, interps })
    }

    fn check(&self, tau: f64) -> Result<()> {
        let (lo, hi) = self.window();
        let slack = 1e-12 * (1.0 + tau.abs());
        if tau < lo - slack || tau > hi + slack {
            return Err(Error::OutOfWindow { tau, lo, hi });
        }
        Ok(())
    }
}

impl ProfileSource for RescaledTrajectory {
    fn window(&self) -> (f64, f64) {
        (self.taus[0], *self.taus.last().unwrap())
    }

    fn u_at(&self, sigma: f64, tau: f64) -> Result<f64> {
        self.check(tau)?;
        let vals: Vec<f64> = self
            .interps
            .iter()
            .zip(&self.states)
            .map(|(p, s)| {
                if sigma < p.lo() || sigma > p.hi() || sigma <= s.sigma_minus || sigma >= s.sigma_plus {
                    if sigma > s.sigma_minus && sigma < s.sigma_plus {
                        // Beyond the stored grid but inside the manifold: hold the edge value.
                        p.eval(sigma.clamp(p.lo(), p.hi()))
                    } else {
                        0.0
                    }
                } else {
                    p.eval(sigma)
                }
            })
            .collect();
        Ok(cubic_lagrange(&self.taus, &vals, tau).max(0.0))
    }

    fn tips_at(&self, tau: f64) -> Result<(f64, f64)> {
        self.check(tau)?;
        let lo: Vec<f64> = self.states.iter().map(|s| s.sigma_minus).collect();
        let hi: Vec<f64> = self.states.iter().map(|s| s.sigma_plus).collect();
        Ok((cubic_lagrange(&self.taus, &lo, tau), cubic_lagrange(&self.taus, &hi, tau)))
    }
}

/// Exact self-similar solutions, valid for every tau.
#[derive(Debug, Clone, Copy)]
pub struct ExactSource(pub ReferenceKind);

impl ProfileSource for ExactSource {
    fn window(&self) -> (f64, f64) {
        (f64::NEG_INFINITY, f64::INFINITY)
    }

    fn u_at(&self, sigma: f64, _tau: f64) -> Result<f64> {
        Ok(match self.0 {
            ReferenceKind::Cylinder => 2f64.sqrt(),
            ReferenceKind::Sphere => sphere_u(sigma),
        })
    }

    fn tips_at(&self, _tau: f64) -> Result<(f64, f64)> {
        Ok(match self.0 {
            ReferenceKind::Cylinder => (f64::NEG_INFINITY, f64::INFINITY),
            ReferenceKind::Sphere => (-std::f64::consts::PI, std::f64::consts::PI),
        })
    }
}

/// u^{beta gamma}(sigma, tau) = sqrt(1+beta e^tau) u(sigma / sqrt(1+beta e^tau), tau')
/// sampled on `sigma_grid`.
pub fn apply_gauge(
    src: &dyn ProfileSource,
    sigma_grid: &[f64],
    tau: f64,
    g: &GaugeParams,
) -> Result<RescaledState> {
    let d2 = g.dilation_sq(tau);
    if d2 <= 0.0 {
        return Err(Error::OutOfWindow { tau, lo: f64::NAN, hi: f64::NAN });
    }
    let lam = d2.sqrt();
    let tau_s = g.shifted_time(tau);
    let (lo, hi) = src.window();
    if tau_s < lo - 1e-12 * (1.0 + tau_s.abs()) || tau_s > hi + 1e-12 * (1.0 + tau_s.abs()) {
        return Err(Error::OutOfWindow { tau: tau_s, lo, hi });
    }
    let u = sigma_grid
        .iter()
        .map(|&s| Ok(lam * src.u_at(s / lam, tau_s)?))
        .collect::<Result<Vec<_>>>()?;
    let (sm, sp) = src.tips_at(tau_s)?;
    Ok(RescaledState {
        sigma: sigma_grid.to_vec(),
        u,
        tau,
        sigma_plus: lam * sp,
        sigma_minus: lam * sm,
    })
}

/// Parameters undoing `g` at time tau: applying `g` and then the returned
/// parameters reproduces the original field at tau.
pub fn inverse_gauge(g: &GaugeParams, tau: f64) -> GaugeParams {
    // Need S_g(p) = tau with p = S_h(tau), and lam_h(tau) lam_g(p) = 1.
    let p = tau_preimage(g, tau);
    let beta_hat = (1.0 / g.dilation_sq(p) - 1.0) * (g.tau0 - tau).exp();
    let h = GaugeParams { beta_hat, gamma: 0.0, tau0: g.tau0 };
    let gamma = p - tau + h.dilation_sq(tau).ln();
    GaugeParams { beta_hat, gamma, tau0: g.tau0 }
}

/// Solve g.shifted_time(p) = tau for p by Newton iteration.
fn tau_preimage(g: &GaugeParams, tau: f64) -> f64 {
    let mut p = tau - g.gamma;
    for _ in 0..60 {
        let f = g.shifted_time(p) - tau;
        let e = g.beta_hat * (p - g.tau0).exp();
        let step = f / (1.0 - e / (1.0 + e));
        p -= step;
        if step.abs() < 1e-15 * (1.0 + p.abs()) {
            break;
        }
    }
    p
}
