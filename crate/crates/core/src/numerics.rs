//! Grid calculus, interpolation and quadrature shared by the modules.

use crate::error::{Error, Result};

/// First derivative on a (possibly nonuniform) grid: three-point central
/// formula inside, three-point one-sided at the ends.
pub fn deriv1(x: &[f64], f: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert!(n >= 3 && f.len() == n);
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = lagrange_d1(x[i - 1], x[i], x[i + 1], f[i - 1], f[i], f[i + 1], x[i]);
    }
    d[0] = lagrange_d1(x[0], x[1], x[2], f[0], f[1], f[2], x[0]);
    d[n - 1] = lagrange_d1(
        x[n - 3],
        x[n - 2],
        x[n - 1],
        f[n - 3],
        f[n - 2],
        f[n - 1],
        x[n - 1],
    );
    d
}

/// Second derivative; at the ends a four-point one-sided formula keeps
/// second order on uniform grids.
pub fn deriv2(x: &[f64], f: &[f64]) -> Vec<f64> {
    let n = x.len();
    assert!(n >= 4 && f.len() == n);
    let mut d = vec![0.0; n];
    for i in 1..n - 1 {
        d[i] = lagrange_d2(x[i - 1], x[i], x[i + 1], f[i - 1], f[i], f[i + 1]);
    }
    let h0 = x[1] - x[0];
    d[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / (h0 * h0);
    let h1 = x[n - 1] - x[n - 2];
    d[n - 1] = (2.0 * f[n - 1] - 5.0 * f[n - 2] + 4.0 * f[n - 3] - f[n - 4]) / (h1 * h1);
    d
}

fn lagrange_d1(x0: f64, x1: f64, x2: f64, f0: f64, f1: f64, f2: f64, x: f64) -> f64 {
    f0 * ((x - x1) + (x - x2)) / ((x0 - x1) * (x0 - x2))
        + f1 * ((x - x0) + (x - x2)) / ((x1 - x0) * (x1 - x2))
        + f2 * ((x - x0) + (x - x1)) / ((x2 - x0) * (x2 - x1))
}

fn lagrange_d2(x0: f64, x1: f64, x2: f64, f0: f64, f1: f64, f2: f64) -> f64 {
    2.0 * (f0 / ((x0 - x1) * (x0 - x2)) + f1 / ((x1 - x0) * (x1 - x2)) + f2 / ((x2 - x0) * (x2 - x1)))
}

/// Composite trapezoid integral.
pub fn trapz(x: &[f64], f: &[f64]) -> f64 {
    x.windows(2)
        .zip(f.windows(2))
        .map(|(xs, fs)| 0.5 * (xs[1] - xs[0]) * (fs[0] + fs[1]))
        .sum()
}

/// Cumulative trapezoid anchored so that the result vanishes at index `anchor`.
pub fn cumtrapz_from(x: &[f64], f: &[f64], anchor: usize) -> Vec<f64> {
    let n = x.len();
    let mut out = vec![0.0; n];
    for i in anchor + 1..n {
        out[i] = out[i - 1] + 0.5 * (x[i] - x[i - 1]) * (f[i] + f[i - 1]);
    }
    for i in (0..anchor).rev() {
        out[i] = out[i + 1] - 0.5 * (x[i + 1] - x[i]) * (f[i] + f[i + 1]);
    }
    out
}

/// Index of the node closest to `x0`.
pub fn nearest_index(x: &[f64], x0: f64) -> usize {
    let mut best = 0;
    for (i, &v) in x.iter().enumerate() {
        if (v - x0).abs() < (x[best] - x0).abs() {
            best = i;
        }
    }
    best
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson slopes).
#[derive(Debug, Clone)]
pub struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl Pchip {
    /// `x` must be strictly increasing.
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 2 || y.len() != n {
            return Err(Error::UnderResolved("pchip needs at least two nodes".into()));
        }
        for i in 1..n {
            if x[i] <= x[i - 1] {
                return Err(Error::NonMonotone(i));
            }
        }
        let h: Vec<f64> = (0..n - 1).map(|i| x[i + 1] - x[i]).collect();
        let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
        let mut m = vec![0.0; n];
        if n == 2 {
            m[0] = delta[0];
            m[1] = delta[0];
            return Ok(Self { x, y, m });
        }
        for i in 1..n - 1 {
            if delta[i - 1] * delta[i] <= 0.0 {
                m[i] = 0.0;
            } else {
                let w1 = 2.0 * h[i] + h[i - 1];
                let w2 = h[i] + 2.0 * h[i - 1];
                m[i] = (w1 + w2) / (w1 / delta[i - 1] + w2 / delta[i]);
            }
        }
        m[0] = end_slope(h[0], h[1], delta[0], delta[1]);
        m[n - 1] = end_slope(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
        Ok(Self { x, y, m })
    }

    /// Hermite interpolant with caller-supplied slopes.
    pub fn with_slopes(x: Vec<f64>, y: Vec<f64>, m: Vec<f64>) -> Result<Self> {
        for i in 1..x.len() {
            if x[i] <= x[i - 1] {
                return Err(Error::NonMonotone(i));
            }
        }
        Ok(Self { x, y, m })
    }

    pub fn lo(&self) -> f64 {
        self.x[0]
    }

    pub fn hi(&self) -> f64 {
        *self.x.last().unwrap()
    }

    fn segment(&self, t: f64) -> usize {
        let n = self.x.len();
        match self.x.binary_search_by(|v| v.partial_cmp(&t).unwrap()) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * self.y[i] + h10 * h * self.m[i] + h01 * self.y[i + 1] + h11 * h * self.m[i + 1]
    }

    pub fn eval_deriv(&self, t: f64) -> f64 {
        let i = self.segment(t);
        let h = self.x[i + 1] - self.x[i];
        let s = (t - self.x[i]) / h;
        let d00 = 6.0 * s * s - 6.0 * s;
        let d10 = 3.0 * s * s - 4.0 * s + 1.0;
        let d01 = -d00;
        let d11 = 3.0 * s * s - 2.0 * s;
        (d00 * self.y[i] + d01 * self.y[i + 1]) / h + d10 * self.m[i] + d11 * self.m[i + 1]
    }
}

fn end_slope(h0: f64, h1: f64, d0: f64, d1: f64) -> f64 {
    let m = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1);
    if m.signum() != d0.signum() {
        0.0
    } else if d0.signum() != d1.signum() && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}

/// Four-point Lagrange (cubic) interpolation of samples `(t_k, y_k)` at `t`.
/// Falls back to the nearest available stencil at the ends.
pub fn cubic_lagrange(t_nodes: &[f64], values: &[f64], t: f64) -> f64 {
    let n = t_nodes.len();
    if n == 1 {
        return values[0];
    }
    if n < 4 {
        let i = match t_nodes.iter().position(|&v| v >= t) {
            Some(0) => 0,
            Some(i) => i - 1,
            None => n - 2,
        };
        let s = (t - t_nodes[i]) / (t_nodes[i + 1] - t_nodes[i]);
        return values[i] * (1.0 - s) + values[i + 1] * s;
    }
    let j = t_nodes.iter().position(|&v| v > t).unwrap_or(n);
    let start = j.saturating_sub(2).min(n - 4);
    let xs = &t_nodes[start..start + 4];
    let ys = &values[start..start + 4];
    let mut acc = 0.0;
    for a in 0..4 {
        let mut w = 1.0;
        for b in 0..4 {
            if a != b {
                w *= (t - xs[b]) / (xs[a] - xs[b]);
            }
        }
        acc += w * ys[a];
    }
    acc
}

/// Quintic smoothstep 6s^5 - 15s^4 + 10s^3 clamped to [0, 1].
pub fn smoothstep5(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * s * (10.0 + s * (-15.0 + 6.0 * s))
}

/// Blend weight rising from 0 at `a` to 1 at `b` (quintic partition of unity).
pub fn blend(x: f64, a: f64, b: f64) -> f64 {
    smoothstep5((x - a) / (b - a))
}

const RAMP_ROUNDING: f64 = 0.05;

/// Mollified linear ramp on [0, 1]: slope is a trapezoid with quintic
/// shoulders of width 5%, so the ramp is C^3 and its slope never exceeds 1/0.95.
pub fn mollified_ramp(t: f64) -> f64 {
    let d = RAMP_ROUNDING;
    let m = 1.0 / (1.0 - d);
    let shoulder = |x: f64| x.powi(6) - 3.0 * x.powi(5) + 2.5 * x.powi(4);
    if t <= 0.0 {
        0.0
    } else if t >= 1.0 {
        1.0
    } else if t < d {
        m * d * shoulder(t / d)
    } else if t <= 1.0 - d {
        m * d * 0.5 + m * (t - d)
    } else {
        1.0 - m * d * shoulder((1.0 - t) / d)
    }
}

/// Derivative of [`mollified_ramp`].
pub fn mollified_ramp_deriv(t: f64) -> f64 {
    let d = RAMP_ROUNDING;
    let m = 1.0 / (1.0 - d);
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else if t < d {
        m * smoothstep5(t / d)
    } else if t <= 1.0 - d {
        m
    } else {
        m * smoothstep5((1.0 - t) / d)
    }
}

/// Second derivative of [`mollified_ramp`].
pub fn mollified_ramp_deriv2(t: f64) -> f64 {
    let d = RAMP_ROUNDING;
    let m = 1.0 / (1.0 - d);
    let s5 = |s: f64| 30.0 * s * s * (1.0 - s) * (1.0 - s);
    if t <= 0.0 || t >= 1.0 {
        0.0
    } else if t < d {
        m / d * s5(t / d)
    } else if t <= 1.0 - d {
        0.0
    } else {
        -m / d * s5((1.0 - t) / d)
    }
}

/// Least-squares line `y = slope x + intercept`; returns (slope, intercept, rms residual).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rms = (x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, intercept, rms)
}

/// Observed convergence orders log2(e_k / e_{k+1}) for a sequence of errors
/// under grid doubling.
pub fn observed_orders(errors: &[f64]) -> Vec<f64> {
    errors.windows(2).map(|e| (e[0] / e[1]).log2()).collect()
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |a, b| a.max(b.abs()))
}

/// Quintic Hermite interpolant on [x0, x0 + h] from values, first and second
/// derivatives at both ends. Returns (p, p') at x0 + t h.
pub fn quintic_hermite(h: f64, left: [f64; 3], right: [f64; 3], t: f64) -> (f64, f64) {
    let (t2, t3, t4, t5) = (t * t, t * t * t, t * t * t * t, t * t * t * t * t);
    let b = [
        1.0 - 10.0 * t3 + 15.0 * t4 - 6.0 * t5,
        t - 6.0 * t3 + 8.0 * t4 - 3.0 * t5,
        0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5,
        0.5 * t3 - t4 + 0.5 * t5,
        -4.0 * t3 + 7.0 * t4 - 3.0 * t5,
        10.0 * t3 - 15.0 * t4 + 6.0 * t5,
    ];
    let db = [
        -30.0 * t2 + 60.0 * t3 - 30.0 * t4,
        1.0 - 18.0 * t2 + 32.0 * t3 - 15.0 * t4,
        t - 4.5 * t2 + 6.0 * t3 - 2.5 * t4,
        1.5 * t2 - 4.0 * t3 + 2.5 * t4,
        -12.0 * t2 + 28.0 * t3 - 15.0 * t4,
        30.0 * t2 - 60.0 * t3 + 30.0 * t4,
    ];
    let c = [left[0], h * left[1], h * h * left[2], h * h * right[2], h * right[1], right[0]];
    let p = b.iter().zip(&c).map(|(a, b)| a * b).sum();
    let dp: f64 = db.iter().zip(&c).map(|(a, b)| a * b).sum();
    (p, dp / h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn derivatives_exact_on_quadratics() {
        let x: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let f: Vec<f64> = x.iter().map(|v| 3.0 * v * v - v + 2.0).collect();
        let d1 = deriv1(&x, &f);
        let d2 = deriv2(&x, &f);
        for (i, v) in x.iter().enumerate() {
            assert_abs_diff_eq!(d1[i], 6.0 * v - 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(d2[i], 6.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn cumulative_trapezoid_anchor() {
        let x: Vec<f64> = (0..5).map(|i| i as f64).collect();
        let f = vec![1.0; 5];
        let c = cumtrapz_from(&x, &f, 2);
        assert_eq!(c, vec![-2.0, -1.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn pchip_reproduces_nodes_and_stays_monotone() {
        let x: Vec<f64> = (0..20).map(|i| i as f64 * 0.2).collect();
        let y: Vec<f64> = x.iter().map(|v: &f64| v.tanh()).collect();
        let p = Pchip::new(x.clone(), y.clone()).unwrap();
        for (a, b) in x.iter().zip(&y) {
            assert_abs_diff_eq!(p.eval(*a), *b, epsilon = 1e-14);
        }
        let mut prev = p.eval(0.0);
        for k in 1..400 {
            let v = p.eval(k as f64 * 0.0095);
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn ramp_has_plateaus_and_bounded_slope() {
        assert_eq!(mollified_ramp(-0.1), 0.0);
        assert_eq!(mollified_ramp(1.2), 1.0);
        let mut max_slope: f64 = 0.0;
        for k in 0..=10000 {
            let t = k as f64 / 10000.0;
            max_slope = max_slope.max(mollified_ramp_deriv(t));
        }
        assert!(max_slope <= 1.0 / 0.95 + 1e-12);
        assert_abs_diff_eq!(mollified_ramp(0.5), 0.5, epsilon = 1e-14);
        // derivative consistent with the ramp
        let h = 1e-6;
        for &t in &[0.01, 0.03, 0.5, 0.97, 0.99] {
            let fd = (mollified_ramp(t + h) - mollified_ramp(t - h)) / (2.0 * h);
            assert_abs_diff_eq!(fd, mollified_ramp_deriv(t), epsilon = 1e-6);
            let fd2 = (mollified_ramp_deriv(t + h) - mollified_ramp_deriv(t - h)) / (2.0 * h);
            assert_abs_diff_eq!(fd2, mollified_ramp_deriv2(t), epsilon = 1e-5);
        }
    }

    #[test]
    fn cubic_lagrange_exact_on_cubics() {
        let t: Vec<f64> = (0..8).map(|i| i as f64 * 0.5).collect();
        let v: Vec<f64> = t.iter().map(|s| s * s * s - 2.0 * s).collect();
        for &s in &[0.1, 1.3, 2.9, 3.4] {
            assert_abs_diff_eq!(cubic_lagrange(&t, &v, s), s * s * s - 2.0 * s, epsilon = 1e-12);
        }
    }

    #[test]
    fn quintic_hermite_exact_on_quintics() {
        let f = |x: f64| [x.powi(5) - x * x, 5.0 * x.powi(4) - 2.0 * x, 20.0 * x.powi(3) - 2.0];
        let (x0, h) = (0.3, 0.7);
        for t in [0.0, 0.25, 0.6, 1.0] {
            let (p, dp) = quintic_hermite(h, f(x0), f(x0 + h), t);
            let e = f(x0 + t * h);
            assert!((p - e[0]).abs() < 1e-13 && (dp - e[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_fit_recovers_line() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let (m, c, r) = linear_fit(&x, &y);
        assert_abs_diff_eq!(m, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(c, 1.0, epsilon = 1e-14);
        assert!(r < 1e-14);
    }
}

/// Adaptive Dormand-Prince 5(4) integration of a two-component system from
/// `t0` to `t1`. Returns `None` if the step size collapses.
pub fn dopri5<F>(f: F, t0: f64, y0: [f64; 2], t1: f64, rtol: f64, atol: f64, h0: f64) -> Option<[f64; 2]>
where
    F: Fn(f64, [f64; 2]) -> [f64; 2],
{
    const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const E: [f64; 7] = [
        71.0 / 57600.0,
        0.0,
        -71.0 / 16695.0,
        71.0 / 1920.0,
        -17253.0 / 339200.0,
        22.0 / 525.0,
        -1.0 / 40.0,
    ];
    let mut t = t0;
    let mut y = y0;
    let mut h = h0.min(t1 - t0);
    let h_min = 1e-14 * (t1 - t0).abs().max(1.0);
    while t < t1 {
        if t + h > t1 {
            h = t1 - t;
        }
        let mut k = [[0.0; 2]; 7];
        for s in 0..7 {
            let mut ys = y;
            for (j, kj) in k.iter().enumerate().take(s) {
                for c in 0..2 {
                    ys[c] += h * A[s][j] * kj[c];
                }
            }
            k[s] = f(t + C[s] * h, ys);
        }
        let mut yn = y;
        let mut err: f64 = 0.0;
        for c in 0..2 {
            let mut inc = 0.0;
            let mut e = 0.0;
            for s in 0..7 {
                inc += B[s] * k[s][c];
                e += E[s] * k[s][c];
            }
            yn[c] = y[c] + h * inc;
            let sc = atol + rtol * y[c].abs().max(yn[c].abs());
            err = err.max((h * e / sc).abs());
        }
        if err <= 1.0 {
            t += h;
            y = yn;
        }
        let fac = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= fac;
        if h < h_min && t < t1 {
            return None;
        }
    }
    Some(y)
}

/// Finite-difference weights (Fornberg) for derivatives 0..=m at `z` using
/// the nodes `x`. Returns `w[k][j]`, the weight of node j for derivative k.
pub fn fornberg_weights(z: f64, x: &[f64], m: usize) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut c = vec![vec![0.0; n]; m + 1];
    let mut c1 = 1.0;
    let mut c4 = x[0] - z;
    c[0][0] = 1.0;
    for i in 1..n {
        let mn = i.min(m);
        let mut c2 = 1.0;
        let c5 = c4;
        c4 = x[i] - z;
        for j in 0..i {
            let c3 = x[i] - x[j];
            c2 *= c3;
            if j == i - 1 {
                for k in (1..=mn).rev() {
                    c[k][i] = c1 * (k as f64 * c[k - 1][i - 1] - c5 * c[k][i - 1]) / c2;
                }
                c[0][i] = -c1 * c5 * c[0][i - 1] / c2;
            }
            for k in (1..=mn).rev() {
                c[k][j] = (c4 * c[k][j] - k as f64 * c[k - 1][j]) / c3;
            }
            c[0][j] = c4 * c[0][j] / c3;
        }
        c1 = c2;
    }
    c
}

/// Weights w_j with sum w_j f(x_j) = int_a^b p(x) dx for the interpolant p
/// through the nodes `x`.
pub fn interval_weights(x: &[f64], a: f64, b: f64) -> Vec<f64> {
    let n = x.len();
    // Work in local coordinates around the stencil center for conditioning.
    let c = 0.5 * (x[0] + x[n - 1]);
    let s = 0.5 * (x[n - 1] - x[0]).abs().max(1e-300);
    let t: Vec<f64> = x.iter().map(|v| (v - c) / s).collect();
    let (ta, tb) = ((a - c) / s, (b - c) / s);
    let vand = nalgebra::DMatrix::from_fn(n, n, |k, j| t[j].powi(k as i32));
    let moments = nalgebra::DVector::from_fn(n, |k, _| {
        let p = k as i32 + 1;
        (tb.powi(p) - ta.powi(p)) / p as f64
    });
    let w = vand.lu().solve(&moments).expect("distinct stencil nodes");
    w.iter().map(|v| v * s).collect()
}

/// High-order derivative and quadrature operators on a fixed uniform grid.
/// Interior rows use centered 7-point stencils (sixth order); the three rows
/// at each end use one-sided 8-point stencils. Only the distinct weight
/// patterns are stored, so construction is O(1).
#[derive(Debug, Clone)]
pub struct UniformOps {
    pub n: usize,
    pub h: f64,
    x0: f64,
    /// (rows near the left end, central row, rows near the right end), each
    /// row as (offset of the first stencil node relative to the row, weights)
    d1: StencilSet,
    d2: StencilSet,
    cell: StencilSet,
}

#[derive(Debug, Clone)]
struct StencilSet {
    left: Vec<(isize, Vec<f64>)>,
    center: (isize, Vec<f64>),
    right: Vec<(isize, Vec<f64>)>,
}

impl StencilSet {
    fn row(&self, i: usize, rows: usize) -> (usize, &[f64]) {
        let nl = self.left.len();
        let nr = self.right.len();
        let (off, w) = if i < nl {
            let r = &self.left[i];
            (r.0, &r.1)
        } else if i + nr >= rows {
            let r = &self.right[i + nr - rows];
            (r.0, &r.1)
        } else {
            (self.center.0, &self.center.1)
        };
        ((i as isize + off) as usize, w.as_slice())
    }

    fn apply(&self, f: &[f64], rows: usize) -> Vec<f64> {
        (0..rows)
            .map(|i| {
                let (s, w) = self.row(i, rows);
                w.iter().zip(&f[s..s + w.len()]).map(|(a, b)| a * b).sum()
            })
            .collect()
    }
}

impl UniformOps {
    pub fn new(x0: f64, h: f64, n: usize) -> Self {
        assert!(n >= 9, "high-order operators need at least 9 nodes");
        let deriv_row = |start: isize, len: usize, k: usize| -> (isize, Vec<f64>) {
            let nodes: Vec<f64> = (0..len).map(|j| (start + j as isize) as f64 * h).collect();
            (start, fornberg_weights(0.0, &nodes, 2)[k].clone())
        };
        // Row n-3+m near the right end uses nodes n-8..n-1, i.e. offset -(5+m).
        let deriv_set = |k: usize| StencilSet {
            left: (0..3).map(|i| deriv_row(-(i as isize), 8, k)).collect(),
            center: deriv_row(-3, 7, k),
            right: (0..3).map(|m| deriv_row(-(5 + m as isize), 8, k)).collect(),
        };
        let d1 = deriv_set(1);
        let d2 = deriv_set(2);
        let cell_row = |start: isize| -> (isize, Vec<f64>) {
            let nodes: Vec<f64> = (0..6).map(|j| (start + j as isize) as f64 * h).collect();
            (start, interval_weights(&nodes, 0.0, h))
        };
        // cells 0..n-2: cell i uses nodes max(0, i-2).. with 6 nodes, clipped at n-1
        let cell = StencilSet {
            left: vec![cell_row(0), cell_row(-1)],
            center: cell_row(-2),
            right: vec![cell_row(-3), cell_row(-4)],
        };
        Self { n, h, x0, d1, d2, cell }
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x0 + i as f64 * self.h).collect()
    }

    pub fn d1(&self, f: &[f64]) -> Vec<f64> {
        self.d1.apply(f, self.n)
    }

    pub fn d2(&self, f: &[f64]) -> Vec<f64> {
        self.d2.apply(f, self.n)
    }

    /// Cumulative integral F with F(x_anchor) = 0 where `x_anchor` may lie
    /// between nodes; sixth-order per cell.
    pub fn cumulative(&self, f: &[f64], x_anchor: f64) -> Vec<f64> {
        let n = self.n;
        let cells = self.cell.apply(f, n - 1);
        let mut out = vec![0.0; n];
        for i in 1..n {
            out[i] = out[i - 1] + cells[i - 1];
        }
        let pos = ((x_anchor - self.x0) / self.h).clamp(0.0, (n - 1) as f64);
        let i = (pos.floor() as usize).min(n - 2);
        let start = (i as isize - 2).clamp(0, n as isize - 6) as usize;
        let nodes: Vec<f64> = (start..start + 6).map(|k| self.x0 + k as f64 * self.h).collect();
        let xi = self.x0 + i as f64 * self.h;
        let w = interval_weights(&nodes, xi, x_anchor);
        let partial: f64 = w.iter().zip(&f[start..start + 6]).map(|(a, b)| a * b).sum();
        let offset = out[i] + partial;
        out.iter_mut().for_each(|v| *v -= offset);
        out
    }
}

#[cfg(test)]
mod high_order_tests {
    use super::*;

    #[test]
    fn fornberg_matches_classical_stencils() {
        let w = fornberg_weights(0.0, &[-1.0, 0.0, 1.0], 2);
        assert!((w[1][0] + 0.5).abs() < 1e-15 && (w[1][2] - 0.5).abs() < 1e-15);
        assert!((w[2][0] - 1.0).abs() < 1e-15 && (w[2][1] + 2.0).abs() < 1e-15);
    }

    #[test]
    fn interval_weights_simpson() {
        let w = interval_weights(&[0.0, 0.5, 1.0], 0.0, 1.0);
        assert!((w[0] - 1.0 / 6.0).abs() < 1e-14 && (w[1] - 4.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn uniform_ops_sixth_order() {
        let err = |n: usize| {
            let h = 2.0 / (n - 1) as f64;
            let ops = UniformOps::new(-1.0, h, n);
            let x = ops.grid();
            let f: Vec<f64> = x.iter().map(|v| (2.0 * v).sin()).collect();
            let d1 = ops.d1(&f);
            let d2 = ops.d2(&f);
            let c = ops.cumulative(&f, 0.1);
            let mut e: f64 = 0.0;
            for i in 0..n {
                e = e.max((d1[i] - 2.0 * (2.0 * x[i]).cos()).abs());
                e = e.max((d2[i] + 4.0 * (2.0 * x[i]).sin()).abs() / 10.0);
                let exact = (-(2.0 * x[i]).cos() + (0.2f64).cos()) / 2.0;
                e = e.max((c[i] - exact).abs());
            }
            e
        };
        let (a, b) = (err(41), err(81));
        assert!(a / b > 30.0, "ratio {}", a / b);
    }
}
