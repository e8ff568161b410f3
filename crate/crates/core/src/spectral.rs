//! Gaussian-weight spaces on the line: quadrature, the Hermite eigenbasis of
//! L f = f'' - (s/2) f' + f, projections, norms and empirical operator bounds.

use std::sync::OnceLock;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::flow::rescaled::sigma_derivatives;
use crate::numerics::{trapz, Pchip};

pub const DEFAULT_NODES: usize = 64;
pub const DEFAULT_NMAX: usize = 40;
/// Relative interpolation error (in the H-norm) tolerated when sampling grid data.
pub const SAMPLE_TOL: f64 = 1e-6;

const SQRT_PI: f64 = 1.772_453_850_905_516;

/// Nodes and weights for int f(s) e^{-s^2/4} ds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GaussianQuadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Orthonormal Hermite polynomials for e^{-x^2} at x, degrees 0..=n.
fn hermite_orthonormal(x: f64, n: usize) -> Vec<f64> {
    let mut p = Vec::with_capacity(n + 1);
    p.push(SQRT_PI.sqrt().recip());
    if n >= 1 {
        p.push(2f64.sqrt() * x * p[0]);
    }
    for k in 1..n {
        let kf = k as f64;
        let next = (2.0 / (kf + 1.0)).sqrt() * x * p[k] - (kf / (kf + 1.0)).sqrt() * p[k - 1];
        p.push(next);
    }
    p
}

impl GaussianQuadrature {
    /// n-point rule via the substitution s = 2x and the e^{-x^2} Gauss rule.
    /// Nodes come from the Jacobi matrix eigenvalues, polished by Newton on
    /// the orthonormal recurrence; weights from the Christoffel function.
    pub fn new(n: usize) -> Self {
        let jac = DMatrix::from_fn(n, n, |i, j| {
            if i + 1 == j || j + 1 == i {
                (i.max(j) as f64 / 2.0).sqrt()
            } else {
                0.0
            }
        });
        let mut x: Vec<f64> = SymmetricEigen::new(jac).eigenvalues.iter().cloned().collect();
        x.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut nodes = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for xi in x.iter_mut() {
            for _ in 0..10 {
                let p = hermite_orthonormal(*xi, n);
                let dp = (2.0 * n as f64).sqrt() * p[n - 1];
                let step = p[n] / dp;
                *xi -= step;
                if step.abs() < 1e-16 * (1.0 + xi.abs()) {
                    break;
                }
            }
            let p = hermite_orthonormal(*xi, n - 1);
            let christoffel: f64 = p.iter().map(|v| v * v).sum();
            nodes.push(2.0 * *xi);
            weights.push(2.0 / christoffel);
        }
        Self { nodes, weights }
    }

    pub fn sum(&self, vals: &[f64]) -> f64 {
        self.weights.iter().zip(vals).map(|(w, v)| w * v).sum()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(s, w)| w * f(*s)).sum()
    }
}

/// Unnormalized eigenfunction psi_n(s) = H_n(s/2) (physicists' Hermite).
pub fn psi_n(n: usize, sigma: f64) -> f64 {
    let x = sigma / 2.0;
    let (mut a, mut b) = (1.0, 2.0 * x);
    if n == 0 {
        return a;
    }
    for k in 1..n {
        let c = 2.0 * x * b - 2.0 * k as f64 * a;
        a = b;
        b = c;
    }
    b
}

/// ||psi_n||_H^2 = 2^{n+1} n! sqrt(pi).
pub fn psi_norm_sq(n: usize) -> f64 {
    (1..=n).fold(2.0 * SQRT_PI, |acc, k| acc * 2.0 * k as f64)
}

/// Eigenvalue of L on psi_n.
pub fn eigenvalue(n: usize) -> f64 {
    1.0 - n as f64 / 2.0
}

/// Normalized eigenfunctions at s and their s-derivatives, degrees 0..=n.
/// d/ds psi~_n = sqrt(n/2) psi~_{n-1}.
pub fn normalized_basis(sigma: f64, n: usize) -> (Vec<f64>, Vec<f64>) {
    let p: Vec<f64> = hermite_orthonormal(sigma / 2.0, n)
        .into_iter()
        .map(|v| v / 2f64.sqrt())
        .collect();
    let d = (0..=n)
        .map(|k| if k == 0 { 0.0 } else { (k as f64 / 2.0).sqrt() * p[k - 1] })
        .collect();
    (p, d)
}

/// A function and its derivative at the quadrature nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    pub f: Vec<f64>,
    pub df: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Norms {
    pub h: f64,
    pub d: f64,
    pub d_star: f64,
    /// Upper bound for the D* mass beyond n_max.
    pub d_star_tail: f64,
}

/// Quadrature plus the eigenbasis tabulated at its nodes.
#[derive(Debug, Clone)]
pub struct Spectral {
    pub quad: GaussianQuadrature,
    pub n_max: usize,
    basis: Vec<Vec<f64>>,
}

impl Spectral {
    pub fn new(nodes: usize, n_max: usize) -> Self {
        let quad = GaussianQuadrature::new(nodes);
        let basis = quad.nodes.iter().map(|s| normalized_basis(*s, n_max).0).collect();
        Self { quad, n_max, basis }
    }

    pub fn nodal(&self, g: impl Fn(f64) -> (f64, f64)) -> NodalField {
        let (f, df) = self.quad.nodes.iter().map(|s| g(*s)).unzip();
        NodalField { f, df }
    }

    /// Interpolate grid data (zero outside the grid) to the nodes. Uniform
    /// grids use local degree-7 Lagrange interpolation, with the degree-5
    /// interpolant as error estimate; other grids use monotone cubics.
    pub fn sample(&self, x: &[f64], f: &[f64]) -> Result<NodalField> {
        let (fs, _) = sigma_derivatives(x, f);
        let uniform = is_uniform(x);
        let mut out = NodalField { f: vec![0.0; self.quad.nodes.len()], df: vec![0.0; self.quad.nodes.len()] };
        let mut err2 = 0.0;
        let (pf, pd) = if uniform {
            (None, None)
        } else {
            (Some(Pchip::new(x.to_vec(), f.to_vec())?), Some(Pchip::new(x.to_vec(), fs.clone())?))
        };
        for (k, &s) in self.quad.nodes.iter().enumerate() {
            if s < x[0] || s > x[x.len() - 1] {
                continue;
            }
            if uniform {
                let (a, e) = local_lagrange(x, f, s);
                let (b, _) = local_lagrange(x, &fs, s);
                out.f[k] = a;
                out.df[k] = b;
                err2 += self.quad.weights[k] * e * e;
            } else {
                out.f[k] = pf.as_ref().unwrap().eval(s);
                out.df[k] = pd.as_ref().unwrap().eval(s);
            }
        }
        let scale = self.norm_h(&out.f).max(1.0);
        if err2.sqrt() > SAMPLE_TOL * scale {
            return Err(Error::UnderResolved(format!(
                "interpolation error {:.3e} in the H-norm",
                err2.sqrt()
            )));
        }
        Ok(out)
    }

    /// Coefficients against the normalized eigenfunctions, n = 0..=n_max.
    pub fn coefficients(&self, vals: &[f64]) -> Vec<f64> {
        (0..=self.n_max)
            .map(|n| {
                self.quad
                    .weights
                    .iter()
                    .zip(vals)
                    .zip(&self.basis)
                    .map(|((w, v), b)| w * v * b[n])
                    .sum()
            })
            .collect()
    }

    pub fn norm_h(&self, vals: &[f64]) -> f64 {
        self.quad.sum(&vals.iter().map(|v| v * v).collect::<Vec<_>>()).sqrt()
    }

    pub fn norm_d(&self, field: &NodalField) -> f64 {
        let v: Vec<f64> = field.f.iter().zip(&field.df).map(|(a, b)| a * a + b * b).collect();
        self.quad.sum(&v).sqrt()
    }

    /// Riesz-dual norm sum c_n^2 / (1 + n/2) and a bound for the truncated tail.
    pub fn norm_dstar(&self, vals: &[f64]) -> (f64, f64) {
        let c = self.coefficients(vals);
        let head: f64 = c.iter().enumerate().map(|(n, a)| a * a / (1.0 + n as f64 / 2.0)).sum();
        let total = self.norm_h(vals).powi(2);
        let captured: f64 = c.iter().map(|a| a * a).sum();
        let tail = (total - captured).max(0.0) / (1.0 + (self.n_max + 1) as f64 / 2.0);
        (head.sqrt(), tail.sqrt())
    }

    pub fn norms_of(&self, field: &NodalField) -> Norms {
        let (d_star, d_star_tail) = self.norm_dstar(&field.f);
        Norms { h: self.norm_h(&field.f), d: self.norm_d(field), d_star, d_star_tail }
    }
}

fn is_uniform(x: &[f64]) -> bool {
    if x.len() < 9 {
        return false;
    }
    let h = (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64;
    x.windows(2).all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs())
}

/// Degree-7 Lagrange value at t from the 8 nearest uniform nodes, and its
/// difference from the degree-5 value on the central 6.
fn local_lagrange(x: &[f64], f: &[f64], t: f64) -> (f64, f64) {
    let n = x.len();
    let h = (x[n - 1] - x[0]) / (n - 1) as f64;
    let pos = (t - x[0]) / h;
    let eval = |m: usize| -> f64 {
        let start = ((pos.floor() as isize) - (m as isize / 2 - 1)).clamp(0, (n - m) as isize) as usize;
        let mut acc = 0.0;
        for j in 0..m {
            let mut l = 1.0;
            let pj = (start + j) as f64;
            for k in 0..m {
                if k != j {
                    l *= (pos - (start + k) as f64) / (pj - (start + k) as f64);
                }
            }
            acc += l * f[start + j];
        }
        acc
    };
    let a = eval(8.min(n));
    let b = eval(6.min(n));
    (a, a - b)
}

pub fn default_spectral() -> &'static Spectral {
    static S: OnceLock<Spectral> = OnceLock::new();
    S.get_or_init(|| Spectral::new(DEFAULT_NODES, DEFAULT_NMAX))
}

/// H, D and D* norms of grid data.
pub fn norms(x: &[f64], f: &[f64]) -> Result<Norms> {
    let sp = default_spectral();
    Ok(sp.norms_of(&sp.sample(x, f)?))
}

/// L f = f'' - (s/2) f' + f on the grid (sixth order on uniform grids).
pub fn apply_l(x: &[f64], f: &[f64]) -> Vec<f64> {
    let (d1, d2) = sigma_derivatives(x, f);
    (0..x.len()).map(|i| d2[i] - 0.5 * x[i] * d1[i] + f[i]).collect()
}

/// f = a0 psi_0 + a2 psi_2 + remainder, with P+ f = a0, P0 f = a2 psi_2.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpectralDecomposition {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    /// P- f on the input grid.
    pub remainder: Vec<f64>,
    pub norm_total: f64,
    pub norm_plus: f64,
    pub norm_zero: f64,
    pub norm_minus: f64,
}

pub const SYMMETRY_TOL: f64 = 1e-10;

pub fn project(x: &[f64], f: &[f64]) -> Result<SpectralDecomposition> {
    let sp = default_spectral();
    let field = sp.sample(x, f)?;
    decompose(sp, x, f, &field.f)
}

fn decompose(sp: &Spectral, x: &[f64], f: &[f64], nodal: &[f64]) -> Result<SpectralDecomposition> {
    let ip = |k: usize| sp.quad.sum(&nodal.iter().zip(&sp.quad.nodes).map(|(v, s)| v * psi_n(k, *s)).collect::<Vec<_>>());
    let a0 = ip(0) / psi_norm_sq(0);
    let a1 = ip(1) / psi_norm_sq(1);
    let a2 = ip(2) / psi_norm_sq(2);
    if a1.abs() > SYMMETRY_TOL {
        return Err(Error::SymmetryViolation(a1));
    }
    let remainder: Vec<f64> = x.iter().zip(f).map(|(s, v)| v - a0 - a2 * psi_n(2, *s)).collect();
    let rem_nodal: Vec<f64> = nodal
        .iter()
        .zip(&sp.quad.nodes)
        .map(|(v, s)| v - a0 - a2 * psi_n(2, *s))
        .collect();
    Ok(SpectralDecomposition {
        a0,
        a1,
        a2,
        remainder,
        norm_total: sp.norm_h(nodal),
        norm_plus: a0.abs() * psi_norm_sq(0).sqrt(),
        norm_zero: a2.abs() * psi_norm_sq(2).sqrt(),
        norm_minus: sp.norm_h(&rem_nodal),
    })
}

/// <psi_2^2, psi_2> / ||psi_2||^2.
pub fn neutral_mode_constant() -> f64 {
    let q = &default_spectral().quad;
    q.integrate(|s| psi_n(2, s).powi(3)) / q.integrate(|s| psi_n(2, s).powi(2))
}

/// sup over stored times t' <= tau of (int_{t'-1}^{t'} n(s)^2 ds)^{1/2}, by
/// the trapezoid rule with n^2 linearly interpolated at the window start.
pub fn windowed_norm(times: &[f64], norms: &[f64], tau: f64) -> Result<f64> {
    windowed_norm_weighted(times, norms, tau, |_| 1.0)
}

/// As [`windowed_norm`] with each window value multiplied by `prefactor(t')`.
pub fn windowed_norm_weighted(times: &[f64], norms: &[f64], tau: f64, prefactor: impl Fn(f64) -> f64) -> Result<f64> {
    let sq: Vec<f64> = norms.iter().map(|v| v * v).collect();
    let mut best: Option<f64> = None;
    let mut fewest = usize::MAX;
    for &t in times {
        if t > tau + 1e-12 || t - 1.0 < times[0] - 1e-9 {
            continue;
        }
        let (v, count) = window_integral(times, &sq, t - 1.0, t);
        let v = prefactor(t) * v.max(0.0).sqrt();
        fewest = fewest.min(count);
        best = Some(best.map_or(v, |b: f64| b.max(v)));
    }
    match best {
        Some(_) if fewest < 2 => Err(Error::WindowTooShort(fewest)),
        Some(b) => Ok(b),
        None => Err(Error::WindowTooShort(0)),
    }
}

/// Trapezoid integral of samples over [a, b] and the number of samples in (a, b].
fn window_integral(times: &[f64], vals: &[f64], a: f64, b: f64) -> (f64, usize) {
    let at = |t: f64| -> f64 {
        let k = times.partition_point(|v| *v < t).clamp(1, times.len() - 1);
        let (t0, t1) = (times[k - 1], times[k]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        (1.0 - w) * vals[k - 1] + w * vals[k]
    };
    let mut xs = vec![a];
    let mut ys = vec![at(a)];
    for (t, v) in times.iter().zip(vals) {
        if *t > a + 1e-12 && *t < b - 1e-12 {
            xs.push(*t);
            ys.push(*v);
        }
    }
    xs.push(b);
    ys.push(at(b));
    // samples in the half-open window (a, b]
    let count = times.iter().filter(|t| **t > a + 1e-12 && **t <= b + 1e-12).count();
    (trapz(&xs, &ys), count)
}

/// Grid snapshots f(s, tau_k) on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTrajectory {
    pub sigma: Vec<f64>,
    pub taus: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl GridTrajectory {
    pub fn from_fn(sigma: Vec<f64>, taus: Vec<f64>, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = taus.iter().map(|t| sigma.iter().map(|s| f(*s, *t)).collect()).collect();
        Self { sigma, taus, values }
    }
}

/// Both sides of the linear cylindrical estimate on blocks of length T.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearTheoryReport {
    pub block: f64,
    pub blocks: usize,
    /// sup ||f^||_H^2
    pub sup_hat_h: f64,
    /// sup_n int_{I_n} ||f^||_D^2
    pub sup_block_hat_d: f64,
    /// ||P+ f(tau_0)||_H^2
    pub plus_final: f64,
    /// sup_n int_{I_n} ||g^||_{D*}^2
    pub sup_block_hat_g: f64,
    /// Smallest C with A + B/C <= P + C G; infinite when no C works.
    pub c_star: f64,
    /// Relative H-norm residual of f_tau - L f - g.
    pub residual: f64,
}

/// Check a trajectory against f_tau = L f + g and report the smallest
/// admissible constant in the linear estimate.
pub fn linear_theory_check(f: &GridTrajectory, g: &GridTrajectory, block: f64, tol: f64) -> Result<LinearTheoryReport> {
    let sp = default_spectral();
    let m = f.taus.len();
    if m < 3 || g.taus.len() != m {
        return Err(Error::WindowTooShort(m));
    }
    let x = &f.sigma;
    let mut hat_h2 = Vec::with_capacity(m);
    let mut hat_d2 = Vec::with_capacity(m);
    let mut hat_g2 = Vec::with_capacity(m);
    let mut plus = 0.0;
    let mut residual: f64 = 0.0;
    for k in 0..m {
        let fv = &f.values[k];
        let nod = sp.sample(x, fv)?;
        let dec = decompose(sp, x, fv, &nod.f)?;
        let hat: Vec<f64> = x.iter().zip(fv).map(|(s, v)| v - dec.a2 * psi_n(2, *s)).collect();
        let hn = sp.sample(x, &hat)?;
        hat_h2.push(sp.norm_h(&hn.f).powi(2));
        hat_d2.push(sp.norm_d(&hn).powi(2));
        let gv = &g.values[k];
        let gn = sp.sample(x, gv)?;
        let gdec = decompose(sp, x, gv, &gn.f)?;
        let ghat: Vec<f64> = x.iter().zip(gv).map(|(s, v)| v - gdec.a2 * psi_n(2, *s)).collect();
        hat_g2.push(sp.norm_dstar(&sp.sample(x, &ghat)?.f).0.powi(2));
        if k == m - 1 {
            plus = dec.norm_plus.powi(2);
        }
        // time derivative: central differences, one-sided second order at the ends
        let (a, b, c, wa, wb, wc) = if k == 0 {
            let (h1, h2) = (f.taus[1] - f.taus[0], f.taus[2] - f.taus[0]);
            (0, 1, 2, -(h1 + h2) / (h1 * h2), h2 / (h1 * (h2 - h1)), -h1 / (h2 * (h2 - h1)))
        } else if k == m - 1 {
            let (h1, h2) = (f.taus[m - 1] - f.taus[m - 2], f.taus[m - 1] - f.taus[m - 3]);
            (m - 1, m - 2, m - 3, (h1 + h2) / (h1 * h2), -h2 / (h1 * (h2 - h1)), h1 / (h2 * (h2 - h1)))
        } else {
            let (hl, hr) = (f.taus[k] - f.taus[k - 1], f.taus[k + 1] - f.taus[k]);
            (k - 1, k, k + 1, -hr / (hl * (hl + hr)), (hr - hl) / (hl * hr), hl / (hr * (hl + hr)))
        };
        let lf = apply_l(x, fv);
        let r: Vec<f64> = (0..x.len())
            .map(|i| wa * f.values[a][i] + wb * f.values[b][i] + wc * f.values[c][i] - lf[i] - gv[i])
            .collect();
        let rn = sp.norm_h(&sp.sample(x, &r).map(|n| n.f).unwrap_or_else(|_| vec![f64::INFINITY]));
        residual = residual.max(rn / sp.norm_h(&nod.f).max(1.0));
    }
    if residual > tol {
        return Err(Error::NotASolution { residual, tol });
    }
    let tau0 = f.taus[m - 1];
    let mut blocks = 0;
    let (mut bd, mut bg) = (0.0_f64, 0.0_f64);
    while tau0 - (blocks + 1) as f64 * block >= f.taus[0] - 1e-9 {
        let (hi, lo) = (tau0 - blocks as f64 * block, tau0 - (blocks + 1) as f64 * block);
        bd = bd.max(window_integral(&f.taus, &hat_d2, lo, hi).0);
        bg = bg.max(window_integral(&f.taus, &hat_g2, lo, hi).0);
        blocks += 1;
    }
    if blocks == 0 {
        return Err(Error::WindowTooShort(0));
    }
    let a = hat_h2.iter().cloned().fold(0.0, f64::max);
    let scale = f.values.iter().map(|v| sp.norm_h(&sp.sample(x, v).map(|n| n.f).unwrap_or_default()).powi(2)).fold(0.0, f64::max);
    let c_star = smallest_constant(a, bd, plus, bg, scale);
    Ok(LinearTheoryReport {
        block,
        blocks,
        sup_hat_h: a,
        sup_block_hat_d: bd,
        plus_final: plus,
        sup_block_hat_g: bg,
        c_star,
        residual,
    })
}

/// Smallest C > 0 with a + b/C <= p + C g; quantities below 1e-12 scale
/// count as zero.
fn smallest_constant(a: f64, b: f64, p: f64, g: f64, scale: f64) -> f64 {
    let eps = 1e-12 * scale.max(a).max(b).max(p).max(g);
    if eps == 0.0 {
        return 0.0;
    }
    if g <= eps {
        if b <= eps {
            return if a <= p + eps { 0.0 } else { f64::INFINITY };
        }
        return if p > a { b / (p - a) } else { f64::INFINITY };
    }
    let q = p - a;
    (-q + (q * q + 4.0 * g * b).sqrt()) / (2.0 * g)
}

/// Largest empirical ratio for each operator of the bounded-operator list.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorBounds {
    pub samples: usize,
    /// s f : D -> H
    pub sigma_d_to_h: f64,
    /// s f, f', d*f : H -> D*
    pub sigma_h_to_dstar: f64,
    pub deriv_h_to_dstar: f64,
    pub adjoint_h_to_dstar: f64,
    /// s^2 f, s f', f'' : D -> D*
    pub sigma2_d_to_dstar: f64,
    pub sigma_deriv_d_to_dstar: f64,
    pub deriv2_d_to_dstar: f64,
    /// f : D -> H and H -> D*
    pub id_d_to_h: f64,
    pub id_h_to_dstar: f64,
}

/// Random smooth battery: f = sum_{n <= 12} c_n psi~_n with c_n uniform in
/// [-1, 1] / (1 + n), evaluated exactly at the nodes.
pub fn operator_bounds(seed: u64, count: usize) -> OperatorBounds {
    let sp = default_spectral();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let deg = 12;
    let tab: Vec<(Vec<f64>, Vec<f64>)> = sp.quad.nodes.iter().map(|s| normalized_basis(*s, deg)).collect();
    let mut out = OperatorBounds {
        samples: count,
        sigma_d_to_h: 0.0,
        sigma_h_to_dstar: 0.0,
        deriv_h_to_dstar: 0.0,
        adjoint_h_to_dstar: 0.0,
        sigma2_d_to_dstar: 0.0,
        sigma_deriv_d_to_dstar: 0.0,
        deriv2_d_to_dstar: 0.0,
        id_d_to_h: 0.0,
        id_h_to_dstar: 0.0,
    };
    for _ in 0..count {
        let c: Vec<f64> = (0..=deg).map(|n| rng.gen_range(-1.0..1.0) / (1.0 + n as f64)).collect();
        // f' has coefficients sqrt((n+1)/2) c_{n+1} on psi~_n
        let shift = |c: &[f64]| -> Vec<f64> {
            (0..c.len()).map(|n| if n + 1 < c.len() { ((n + 1) as f64 / 2.0).sqrt() * c[n + 1] } else { 0.0 }).collect()
        };
        let c1 = shift(&c);
        let c2 = shift(&c1);
        let at = |cs: &[f64]| -> Vec<f64> {
            tab.iter().map(|(p, _)| p.iter().zip(cs).map(|(a, b)| a * b).sum()).collect()
        };
        let (f, f1, f2) = (at(&c), at(&c1), at(&c2));
        let s = &sp.quad.nodes;
        let field = NodalField { f: f.clone(), df: f1.clone() };
        let nh = sp.norm_h(&f);
        let nd = sp.norm_d(&field);
        let ds = |v: Vec<f64>| sp.norm_dstar(&v).0;
        let sf: Vec<f64> = (0..s.len()).map(|i| s[i] * f[i]).collect();
        let up = |m: &mut f64, v: f64| *m = m.max(v);
        up(&mut out.sigma_d_to_h, sp.norm_h(&sf) / nd);
        up(&mut out.sigma_h_to_dstar, ds(sf.clone()) / nh);
        up(&mut out.deriv_h_to_dstar, ds(f1.clone()) / nh);
        up(&mut out.adjoint_h_to_dstar, ds((0..s.len()).map(|i| -f1[i] + 0.5 * s[i] * f[i]).collect()) / nh);
        up(&mut out.sigma2_d_to_dstar, ds((0..s.len()).map(|i| s[i] * s[i] * f[i]).collect()) / nd);
        up(&mut out.sigma_deriv_d_to_dstar, ds((0..s.len()).map(|i| s[i] * f1[i]).collect()) / nd);
        up(&mut out.deriv2_d_to_dstar, ds(f2) / nd);
        up(&mut out.id_d_to_h, nh / nd);
        up(&mut out.id_h_to_dstar, ds(f) / nh);
    }
    out
}

/// Energy estimate battery for manufactured pairs w = a(tau) b(s), g = w_tau - L w.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    pub samples: usize,
    /// Largest LHS / RHS over the battery.
    pub max_constant: f64,
}

/// Compact bump e^{1 - 1/(1 - r^2)}, r = (s - c)/w, with two derivatives.
fn bump(s: f64, c: f64, w: f64) -> (f64, f64, f64) {
    let r = (s - c) / w;
    if r.abs() >= 1.0 {
        return (0.0, 0.0, 0.0);
    }
    let q = 1.0 - r * r;
    let b = (1.0 - 1.0 / q).exp();
    let g1 = -2.0 * r / (q * q);
    let g2 = -2.0 / (q * q) - 8.0 * r * r / (q * q * q);
    (b, b * g1 / w, b * (g1 * g1 + g2) / (w * w))
}

pub fn energy_estimate_battery(seed: u64, count: usize) -> EnergyReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sig: Vec<f64> = (0..=1200).map(|i| -12.0 + 0.02 * i as f64).collect();
    let gauss: Vec<f64> = sig.iter().map(|s| (-s * s / 4.0).exp()).collect();
    let integ = |v: &[f64]| -> f64 {
        let y: Vec<f64> = v.iter().zip(&gauss).map(|(a, g)| a * a * g).collect();
        trapz(&sig, &y)
    };
    let taus: Vec<f64> = (0..=600).map(|i| -12.0 + 0.02 * i as f64).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..count {
        let c = rng.gen_range(-3.0..3.0);
        let w = rng.gen_range(1.0..4.0);
        let kappa = rng.gen_range(0.2..1.0);
        let eps = rng.gen_range(0.0..0.5);
        let om = rng.gen_range(0.0..3.0);
        let a = |t: f64| (kappa * t).exp() * (1.0 + eps * (om * t).sin());
        let da = |t: f64| (kappa * t).exp() * (kappa * (1.0 + eps * (om * t).sin()) + eps * om * (om * t).cos());
        let b: Vec<(f64, f64, f64)> = sig.iter().map(|s| bump(*s, c, w)).collect();
        let lb: Vec<f64> = sig.iter().zip(&b).map(|(s, (v, d1, d2))| d2 - 0.5 * s * d1 + v).collect();
        let i0 = integ(&b.iter().map(|v| v.0).collect::<Vec<_>>());
        let i1 = integ(&b.iter().map(|v| v.1).collect::<Vec<_>>());
        let i2 = integ(&b.iter().map(|v| v.2).collect::<Vec<_>>());
        // per-time spatial integrals
        let ws: Vec<f64> = taus.iter().map(|t| a(*t).powi(2) * i1).collect();
        let wss: Vec<f64> = taus.iter().map(|t| a(*t).powi(2) * i2).collect();
        let w2: Vec<f64> = taus.iter().map(|t| a(*t).powi(2) * i0).collect();
        let g2: Vec<f64> = taus
            .iter()
            .map(|t| {
                let (at, dat) = (a(*t), da(*t));
                let v: Vec<f64> = b.iter().zip(&lb).map(|(bb, l)| dat * bb.0 - at * l).collect();
                integ(&v)
            })
            .collect();
        let sup_window = |v: &[f64]| -> f64 {
            taus.iter()
                .filter(|t| **t - 1.0 >= taus[0] - 1e-9)
                .map(|t| window_integral(&taus, v, t - 1.0, *t).0)
                .fold(0.0, f64::max)
        };
        let lhs = ws.iter().cloned().fold(0.0, f64::max) + sup_window(&wss);
        let rhs = sup_window(&w2) + sup_window(&g2);
        worst = worst.max(lhs / rhs);
    }
    EnergyReport { samples: count, max_constant: worst }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::uniform;
    use crate::numerics::max_abs;

    #[test]
    fn quadrature_moments() {
        let q = &default_spectral().quad;
        assert!((q.integrate(|_| 1.0) - 2.0 * SQRT_PI).abs() < 1e-12);
        assert!(q.integrate(|s| s).abs() < 1e-12);
        assert!(q.integrate(|s| s.powi(3)).abs() < 1e-11);
        // int s^{2k} dmu = 2 sqrt(pi) (2k-1)!! 2^k
        assert!((q.integrate(|s| s.powi(4)) / (24.0 * SQRT_PI) - 1.0).abs() < 1e-13);
        assert!((q.integrate(|s| s.powi(6)) / (240.0 * SQRT_PI) - 1.0).abs() < 1e-13);
    }

    #[test]
    fn eigenfunction_norms_and_constant() {
        let q = &default_spectral().quad;
        let n2 = q.integrate(|s| psi_n(2, s).powi(2));
        assert!((n2 - 16.0 * SQRT_PI).abs() < 1e-10);
        assert!((psi_norm_sq(2) - 16.0 * SQRT_PI).abs() < 1e-12);
        assert!((neutral_mode_constant() - 8.0).abs() < 1e-10);
        for n in 0..8 {
            assert!((q.integrate(|s| psi_n(n, s).powi(2)) / psi_norm_sq(n) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn l_acts_diagonally() {
        let x = uniform(-4.0, 4.0, 81);
        for n in [0, 2, 4, 6] {
            let f: Vec<f64> = x.iter().map(|s| psi_n(n, *s)).collect();
            let lf = apply_l(&x, &f);
            let r: Vec<f64> = (0..x.len()).map(|i| lf[i] - eigenvalue(n) * f[i]).collect();
            assert!(max_abs(&r) < 1e-8, "{n} {}", max_abs(&r));
        }
        let f4: Vec<f64> = x.iter().map(|s| s.powi(4) - 12.0 * s * s + 12.0).collect();
        let l4 = apply_l(&x, &f4);
        assert!((0..x.len()).all(|i| (l4[i] + f4[i]).abs() < 1e-8));
    }

    #[test]
    fn l_is_self_adjoint_on_bumps() {
        let x = uniform(-10.0, 10.0, 2001);
        let g: Vec<f64> = x.iter().map(|s| (-s * s / 4.0).exp()).collect();
        let f: Vec<f64> = x.iter().map(|s| bump(*s, 0.5, 3.0).0).collect();
        let h: Vec<f64> = x.iter().map(|s| bump(*s, -1.0, 4.0).0).collect();
        let ip = |a: &[f64], b: &[f64]| trapz(&x, &(0..x.len()).map(|i| a[i] * b[i] * g[i]).collect::<Vec<_>>());
        let lhs = ip(&apply_l(&x, &f), &h);
        let rhs = ip(&f, &apply_l(&x, &h));
        assert!((lhs - rhs).abs() < 1e-8, "{lhs} {rhs}");
    }

    #[test]
    fn norms_of_simple_functions() {
        let x = uniform(-25.0, 25.0, 1001);
        let one = vec![1.0; x.len()];
        let n = norms(&x, &one).unwrap();
        assert!((n.h * n.h - 2.0 * SQRT_PI).abs() < 1e-9);
        assert!((n.d - n.h).abs() < 1e-9);
        assert!((n.d_star - n.h).abs() < 1e-9);
        let p2: Vec<f64> = x.iter().map(|s| psi_n(2, *s)).collect();
        let n = norms(&x, &p2).unwrap();
        assert!((n.h * n.h / (16.0 * SQRT_PI) - 1.0).abs() < 1e-9);
        // D* weights psi_2 by 1/(1 + 1)
        assert!((n.d_star * n.d_star / (8.0 * SQRT_PI) - 1.0).abs() < 1e-9);
        assert!(n.d_star_tail < 1e-6);
    }

    #[test]
    fn coarse_grid_is_under_resolved() {
        let x = uniform(-25.0, 25.0, 41);
        let f: Vec<f64> = x.iter().map(|s| (3.0 * s).cos()).collect();
        assert!(matches!(norms(&x, &f), Err(Error::UnderResolved(_))));
    }

    #[test]
    fn projections() {
        let x = uniform(-25.0, 25.0, 1001);
        let p2: Vec<f64> = x.iter().map(|s| psi_n(2, *s)).collect();
        let d = project(&x, &p2).unwrap();
        assert!(d.a0.abs() < 1e-10 && (d.a2 - 1.0).abs() < 1e-10);
        assert!(max_abs(&d.remainder) < 1e-8);
        let s2: Vec<f64> = x.iter().map(|s| s * s).collect();
        let d = project(&x, &s2).unwrap();
        assert!((d.a0 - 2.0).abs() < 1e-10 && (d.a2 - 1.0).abs() < 1e-10);
        let odd: Vec<f64> = x.iter().map(|s| s * (-s * s / 20.0).exp()).collect();
        assert!(matches!(project(&x, &odd), Err(Error::SymmetryViolation(_))));
        // Parseval
        let f: Vec<f64> = x.iter().map(|s| (-s * s / 10.0).exp()).collect();
        let d = project(&x, &f).unwrap();
        let sum = d.norm_plus.powi(2) + d.norm_zero.powi(2) + d.norm_minus.powi(2);
        assert!((sum / d.norm_total.powi(2) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn windowed_norms() {
        let t: Vec<f64> = (0..=500).map(|i| -5.0 + 0.01 * i as f64).collect();
        let c = vec![2.0; t.len()];
        assert!((windowed_norm(&t, &c, 0.0).unwrap() - 2.0).abs() < 1e-12);
        let e: Vec<f64> = t.iter().map(|s| (0.5 * s).exp()).collect();
        let want = (1.0 - (-1f64).exp()).sqrt();
        assert!((windowed_norm(&t, &e, 0.0).unwrap() / want - 1.0).abs() < 1e-5);
        let at = windowed_norm(&t, &e, -2.0).unwrap();
        assert!((at / (want * (-1f64).exp()) - 1.0).abs() < 1e-5);
        let coarse: Vec<f64> = (0..=10).map(|i| -5.0 + i as f64).collect();
        assert!(matches!(windowed_norm(&coarse, &[1.0; 11], 0.0), Err(Error::WindowTooShort(_))));
    }

    #[test]
    fn decaying_series_peaks_at_latest_window() {
        let t: Vec<f64> = (0..=900).map(|i| -100.0 + 0.1 * i as f64).collect();
        let n: Vec<f64> = t.iter().map(|s| 1.0 / s.abs()).collect();
        let all = windowed_norm(&t, &n, -10.0).unwrap();
        let (last, _) = window_integral(&t, &n.iter().map(|v| v * v).collect::<Vec<_>>(), -11.0, -10.0);
        assert!((all - last.sqrt()).abs() < 1e-15);
    }

    fn traj(f: impl Fn(f64, f64) -> f64) -> GridTrajectory {
        let x = uniform(-20.0, 20.0, 801);
        let taus: Vec<f64> = (0..=400).map(|i| -8.0 + 0.02 * i as f64).collect();
        GridTrajectory::from_fn(x, taus, f)
    }

    #[test]
    fn manufactured_linear_estimate() {
        let f = traj(|s, t| (0.5 * t).exp() * psi_n(4, s));
        let g = traj(|s, t| 1.5 * (0.5 * t).exp() * psi_n(4, s));
        let r = linear_theory_check(&f, &g, 1.0, 1e-3).unwrap();
        assert!(r.c_star.is_finite() && r.c_star <= 10.0, "{:?}", r);
        // closed form: A = 1, B = 3(1 - 1/e), G = 0.75(1 - 1/e) in units of ||psi4||^2
        let q = 1.0 - (-1f64).exp();
        let (a, b, g) = (1.0, 3.0 * q, 0.75 * q);
        let want = (a + ((a * a) + 4.0 * g * b).sqrt()) / (2.0 * g);
        assert!((r.c_star / want - 1.0).abs() < 1e-3, "{} {want}", r.c_star);
    }

    #[test]
    fn neutral_mode_is_invisible() {
        let f = traj(|s, _| psi_n(2, s));
        let g = traj(|_, _| 0.0);
        let r = linear_theory_check(&f, &g, 1.0, 1e-8).unwrap();
        assert!(r.sup_hat_h < 1e-16 && r.sup_block_hat_d < 1e-16 && r.plus_final < 1e-16);
        assert_eq!(r.c_star, 0.0);
    }

    #[test]
    fn unbounded_past_has_no_constant() {
        // e^{-tau} psi_4 solves the homogeneous equation but is unbounded as tau -> -inf
        let f = traj(|s, t| (-t).exp() * psi_n(4, s));
        let g = traj(|_, _| 0.0);
        let r = linear_theory_check(&f, &g, 1.0, 1e-3).unwrap();
        assert!(r.c_star.is_infinite());
    }

    #[test]
    fn non_solution_rejected() {
        let f = traj(|s, t| t * psi_n(4, s));
        let g = traj(|_, _| 0.0);
        assert!(matches!(linear_theory_check(&f, &g, 1.0, 1e-3), Err(Error::NotASolution { .. })));
    }

    #[test]
    fn operator_bound_battery() {
        let b = operator_bounds(7, 100);
        assert!(b.sigma_d_to_h <= 4.0, "{:?}", b);
        assert!(b.id_d_to_h <= 1.0 + 1e-12 && b.id_h_to_dstar <= 1.0 + 1e-12);
        for v in [
            b.sigma_h_to_dstar,
            b.deriv_h_to_dstar,
            b.adjoint_h_to_dstar,
            b.sigma2_d_to_dstar,
            b.sigma_deriv_d_to_dstar,
            b.deriv2_d_to_dstar,
        ] {
            assert!(v.is_finite() && v < 20.0, "{:?}", b);
        }
    }

    #[test]
    fn energy_battery() {
        let r = energy_estimate_battery(11, 20);
        assert!(r.max_constant <= 50.0, "{:?}", r);
    }
}
