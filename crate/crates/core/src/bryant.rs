//! Bryant steady soliton profile Z0(rho) in the soliton frame, normalized to
//! tip scalar curvature one: 0 = Z Z'' - Z'^2/2 + (1-Z) Z'/rho + 2 (1-Z) Z / rho^2.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::dopri5;

/// Node where the origin series hands over to the ODE integrator.
pub const RHO_MIN: f64 = 1e-3;
/// Order of the origin series used at the handoff.
pub const SERIES_ORDER: usize = 8;
/// Table spacing.
pub const TABLE_STEP: f64 = 1e-3;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BryantTable {
    pub rho: Vec<f64>,
    pub z: Vec<f64>,
    pub dz: Vec<f64>,
    /// Even coefficients [c0, c2, c4, ...] of the origin series.
    pub coeffs: Vec<f64>,
    pub max_residual: f64,
}

fn poly_mul(a: &[f64], b: &[f64], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (i, x) in a.iter().enumerate() {
        if *x == 0.0 {
            continue;
        }
        for (j, y) in b.iter().enumerate() {
            if i + j < len {
                out[i + j] += x * y;
            }
        }
    }
    out
}

/// Power-series coefficients (in rho) of the steady operator applied to the
/// even polynomial with coefficients `c` (c[k] multiplies rho^{2k}).
pub fn steady_operator_series(c: &[f64]) -> Vec<f64> {
    let deg = 2 * (c.len() - 1);
    let len = 2 * deg + 4;
    let mut z = vec![0.0; len];
    for (k, v) in c.iter().enumerate() {
        z[2 * k] = *v;
    }
    let d = |p: &[f64]| -> Vec<f64> {
        let mut q = vec![0.0; p.len()];
        for i in 1..p.len() {
            q[i - 1] = i as f64 * p[i];
        }
        q
    };
    let z1 = d(&z);
    let z2 = d(&z1);
    let mut one_minus = z.iter().map(|v| -v).collect::<Vec<_>>();
    one_minus[0] += 1.0;
    let zz2 = poly_mul(&z, &z2, len);
    let z1z1 = poly_mul(&z1, &z1, len);
    let omz1 = poly_mul(&one_minus, &z1, len);
    let omz = poly_mul(&one_minus, &z, len);
    let mut out = vec![0.0; len];
    for i in 0..len {
        out[i] += zz2[i] - 0.5 * z1z1[i];
        // (1-Z) Z' / rho and 2 (1-Z) Z / rho^2: both numerators start at rho^2 / rho^3.
        if i + 1 < len {
            out[i] += omz1[i + 1];
        }
        if i + 2 < len {
            out[i] += 2.0 * omz[i + 2];
        }
    }
    out
}

/// Coefficients [1, c2, c4, ..., c_order] of Z0 = 1 + c2 rho^2 + ...
/// with c2 = -1/6, each higher coefficient fixed by zeroing the next order.
pub fn series_at_origin(order: usize) -> Vec<f64> {
    series_with_c2(-1.0 / 6.0, order)
}

/// Origin series for an arbitrary seed c2 (the scale parameter).
pub fn series_with_c2(c2: f64, order: usize) -> Vec<f64> {
    assert!(order % 2 == 0 && (2..=12).contains(&order));
    let mut c = vec![1.0, c2];
    for k in 2..=order / 2 {
        c.push(0.0);
        let r = steady_operator_series(&c)[2 * k - 2];
        // c_{2k} enters order 2k-2 with weight 2k(2k-1) - 2.
        let w = (2 * k * (2 * k - 1)) as f64 - 2.0;
        c[k] = -r / w;
    }
    c
}

fn eval_series(c: &[f64], rho: f64) -> (f64, f64) {
    let r2 = rho * rho;
    let mut z = 0.0;
    let mut dz = 0.0;
    let mut p = 1.0;
    for (k, v) in c.iter().enumerate() {
        z += v * p;
        if k > 0 {
            dz += 2.0 * k as f64 * v * p / rho;
        }
        p *= r2;
    }
    (z, dz)
}

/// Z'' from the steady equation.
pub fn steady_second_derivative(rho: f64, z: f64, dz: f64) -> f64 {
    (0.5 * dz * dz - (1.0 - z) * dz / rho - 2.0 * (1.0 - z) * z / (rho * rho)) / z
}

/// Residual of the steady equation given Z, Z', Z''.
pub fn steady_residual(rho: f64, z: f64, dz: f64, d2z: f64) -> f64 {
    z * d2z - 0.5 * dz * dz + (1.0 - z) * dz / rho + 2.0 * (1.0 - z) * z / (rho * rho)
}

/// Solve outward from RHO_MIN to `rho_max`; the table residual must not exceed `tol`.
pub fn solve(rho_max: f64, tol: f64) -> Result<BryantTable> {
    solve_with_c2(-1.0 / 6.0, rho_max, tol)
}

pub fn solve_with_c2(c2: f64, rho_max: f64, tol: f64) -> Result<BryantTable> {
    assert!(rho_max >= 10.0, "rho_max must be at least 10");
    let coeffs = series_with_c2(c2, SERIES_ORDER);
    let n = ((rho_max - RHO_MIN) / TABLE_STEP).round() as usize + 1;
    let mut rho = Vec::with_capacity(n);
    let mut z = Vec::with_capacity(n);
    let mut dz = Vec::with_capacity(n);
    let (z0, dz0) = eval_series(&coeffs, RHO_MIN);
    let mut y = [z0, dz0];
    rho.push(RHO_MIN);
    z.push(z0);
    dz.push(dz0);
    let rhs = |r: f64, y: [f64; 2]| [y[1], steady_second_derivative(r, y[0], y[1])];
    let ode_tol = (tol * 1e-4).max(1e-14);
    for k in 1..n {
        let a = RHO_MIN + (k - 1) as f64 * TABLE_STEP;
        let b = RHO_MIN + k as f64 * TABLE_STEP;
        y = dopri5(rhs, a, y, b, ode_tol, ode_tol * 1e-3, TABLE_STEP).ok_or(Error::StepFailure(a))?;
        rho.push(b);
        z.push(y[0]);
        dz.push(y[1]);
    }
    let max_residual = table_residual(&rho, &z, &dz).into_iter().fold(0.0, f64::max);
    if max_residual > tol {
        return Err(Error::StepFailure(max_residual));
    }
    Ok(BryantTable { rho, z, dz, coeffs, max_residual })
}

/// Residual of the steady equation at the interior table nodes, with Z''
/// from a fourth-order difference of the tabulated Z'.
pub fn table_residual(rho: &[f64], z: &[f64], dz: &[f64]) -> Vec<f64> {
    let n = rho.len();
    let h = rho[1] - rho[0];
    (2..n - 2)
        .map(|i| {
            let d2 = (-dz[i + 2] + 8.0 * dz[i + 1] - 8.0 * dz[i - 1] + dz[i - 2]) / (12.0 * h);
            steady_residual(rho[i], z[i], dz[i], d2).abs()
        })
        .collect()
}

impl BryantTable {
    /// Z0 and Z0' at any rho >= 0: origin series below the table, cubic
    /// Hermite inside, far-field expansion rho^-2 + 2 rho^-4 beyond.
    pub fn eval(&self, rho: f64) -> (f64, f64) {
        let r0 = self.rho[0];
        if rho <= r0 {
            if rho == 0.0 {
                return (1.0, 0.0);
            }
            return eval_series(&self.coeffs, rho);
        }
        let n = self.rho.len();
        let rmax = self.rho[n - 1];
        if rho >= rmax {
            // Match the far-field shape to the last node.
            let (zl, _) = (self.z[n - 1], self.dz[n - 1]);
            let shape = |r: f64| r.powi(-2) + 2.0 * r.powi(-4);
            let k = zl / shape(rmax);
            let dshape = -2.0 * rho.powi(-3) - 8.0 * rho.powi(-5);
            return (k * shape(rho), k * dshape);
        }
        let h = self.rho[1] - r0;
        let i = (((rho - r0) / h).floor() as usize).min(n - 2);
        let s = (rho - self.rho[i]) / h;
        let (y0, y1, m0, m1) = (self.z[i], self.z[i + 1], self.dz[i], self.dz[i + 1]);
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let zval = h00 * y0 + h10 * h * m0 + h01 * y1 + h11 * h * m1;
        let d00 = 6.0 * s * s - 6.0 * s;
        let d10 = 3.0 * s * s - 4.0 * s + 1.0;
        let d11 = 3.0 * s * s - 2.0 * s;
        let dval = (d00 * y0 - d00 * y1) / h + d10 * m0 + d11 * m1;
        (zval, dval)
    }

    pub fn z(&self, rho: f64) -> f64 {
        self.eval(rho).0
    }

    /// Scalar curvature 4 K0 + 2 K1 of the tilde metric near the tip, with
    /// K1 = (1-Z)/rho^2 and K0 = -Z'/(2 rho).
    pub fn tip_scalar_curvature(&self, rho: f64) -> f64 {
        let (z, dz) = self.eval(rho);
        4.0 * (-dz / (2.0 * rho)) + 2.0 * (1.0 - z) / (rho * rho)
    }

    /// Far-field onset: the smallest L such that Z0(rho) <= 2/rho^2 for
    /// every tabulated rho >= L.
    pub fn far_field_onset(&self) -> f64 {
        let mut onset = *self.rho.last().unwrap();
        for (r, z) in self.rho.iter().zip(&self.z).rev() {
            if r * r * z > 2.0 {
                break;
            }
            onset = *r;
        }
        onset
    }
}

/// Shared table on [1e-3, 30] with residual at most 1e-9.
pub fn default_table() -> &'static BryantTable {
    static TABLE: std::sync::OnceLock<BryantTable> = std::sync::OnceLock::new();
    TABLE.get_or_init(|| solve(30.0, 1e-9).expect("default Bryant table"))
}

/// rho Z0' + 2 Z0 on the table nodes.
pub fn farfield_defect(table: &BryantTable) -> Vec<f64> {
    table.rho.iter().zip(&table.z).zip(&table.dz).map(|((r, z), d)| r * d + 2.0 * z).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::sync::OnceLock;

    fn table() -> &'static BryantTable {
        static T: OnceLock<BryantTable> = OnceLock::new();
        T.get_or_init(|| solve(25.0, 1e-9).unwrap())
    }

    #[test]
    fn leading_coefficients() {
        let c = series_at_origin(8);
        assert_eq!(c[0], 1.0);
        assert_abs_diff_eq!(c[1], -1.0 / 6.0, epsilon = 1e-16);
        assert_abs_diff_eq!(c[2], 1.0 / 90.0, epsilon = 1e-16);
    }

    #[test]
    fn order_two_residual_before_c4() {
        for &c in &[0.1, 1.0 / 6.0, 0.7] {
            let r = steady_operator_series(&[1.0, -c]);
            assert_abs_diff_eq!(r[0], 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!(r[2], -4.0 * c * c, epsilon = 1e-14);
        }
    }

    #[test]
    fn series_zeroes_all_resolved_orders() {
        let c = series_at_origin(12);
        let r = steady_operator_series(&c);
        for k in 0..6 {
            assert!(r[2 * k].abs() < 1e-14, "order {} residual {}", 2 * k, r[2 * k]);
        }
    }

    #[test]
    fn origin_limit_and_monotone() {
        let t = table();
        assert_abs_diff_eq!(t.z(0.0), 1.0);
        assert!((t.z(1e-4) - 1.0).abs() < 1e-8);
        assert!(t.dz.iter().all(|d| *d < 0.0));
        assert!(t.z.iter().all(|z| *z > 0.0 && *z <= 1.0));
        assert!(t.max_residual <= 1e-9);
    }

    #[test]
    fn far_field_and_defect() {
        let t = table();
        let v = 100.0 * t.z(10.0);
        assert!((1.01..=1.03).contains(&v), "rho^2 Z(10) = {}", v);
        let (z, dz) = t.eval(20.0);
        let d = (20.0 * dz + 2.0 * z) * 20f64.powi(4);
        assert!((d + 4.0).abs() <= 0.4, "rho^4 defect = {}", d);
        let defect = farfield_defect(t);
        for (r, dd) in t.rho.iter().zip(&defect) {
            if *r >= 5.0 {
                assert!(*dd < 0.0);
            }
        }
        // the pure power rho^-2 has zero defect
        let r: f64 = 3.0;
        assert_abs_diff_eq!(r * (-2.0 * r.powi(-3)) + 2.0 * r.powi(-2), 0.0, epsilon = 1e-16);
    }

    #[test]
    fn far_field_onset_bounds_rho2_z() {
        let t = table();
        let l = t.far_field_onset();
        assert!((2.0..4.0).contains(&l), "onset {}", l);
        assert!((l * l * t.z(l) - 2.0).abs() < 1e-2);
        // just inside the onset the bound fails
        let r = l - 0.01;
        assert!(r * r * t.z(r) > 2.0);
        for k in 0..300 {
            let r = l + 0.1 * k as f64;
            assert!(r * r * t.z(r) <= 2.0 + 1e-12);
        }
    }

    #[test]
    fn tip_curvature_is_one() {
        let t = table();
        assert!((t.tip_scalar_curvature(1e-3) - 1.0).abs() < 1e-6);
        // series oracle: Z = 1 - rho^2/6 gives K0 = K1 = 1/6
        let rho: f64 = 1e-2;
        let z = 1.0 - rho * rho / 6.0;
        let k1 = (1.0 - z) / (rho * rho);
        let k0 = (rho / 3.0) / (2.0 * rho);
        assert_abs_diff_eq!(k1, 1.0 / 6.0, epsilon = 1e-9);
        assert_abs_diff_eq!(k0, 1.0 / 6.0, epsilon = 1e-12);
    }

    #[test]
    fn scale_family() {
        let lam: f64 = 1.3;
        let other = solve_with_c2(-lam * lam / 6.0, 12.0, 1e-9).unwrap();
        let t = table();
        for &r in &[0.1, 0.5, 1.0, 3.0, 7.0] {
            assert!((other.z(r) - t.z(lam * r)).abs() < 1e-7, "rho {}", r);
        }
    }
}
