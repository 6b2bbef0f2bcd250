//! Right-hand sides, exact Jacobians and per-capita growth rates.
//!
//! Every function takes parameters in schema order (see `registry`). The
//! growth functions return `f_i / x_i` for coordinates whose equation has
//! the factored form `x_i' = x_i * g_i(x)`; the integrator uses them to
//! step `ln |x_i|` instead of `x_i`.

use crate::linalg::Matrix;

pub(crate) fn ushape_rhs(p: &[f64], s: &[f64], out: &mut [f64]) {
    let eps = p[0];
    let (x, y) = (s[0], s[1]);
    out[0] = y - 0.5 * x * x;
    out[1] = -eps * x * (1.0 + x * x);
}

pub(crate) fn ushape_jac(p: &[f64], s: &[f64], j: &mut Matrix) {
    let eps = p[0];
    let x = s[0];
    j[(0, 0)] = -x;
    j[(0, 1)] = 1.0;
    j[(1, 0)] = -eps * (1.0 + 3.0 * x * x);
    j[(1, 1)] = 0.0;
}

pub(crate) fn vanderpol_rhs(p: &[f64], s: &[f64], out: &mut [f64]) {
    let eps = p[0];
    let (x, y) = (s[0], s[1]);
    out[0] = (x - x * x * x / 3.0 + y) / eps;
    out[1] = -x;
}

pub(crate) fn vanderpol_jac(p: &[f64], s: &[f64], j: &mut Matrix) {
    let eps = p[0];
    let x = s[0];
    j[(0, 0)] = (1.0 - x * x) / eps;
    j[(0, 1)] = 1.0 / eps;
    j[(1, 0)] = -1.0;
    j[(1, 1)] = 0.0;
}

// A, B, C, D
pub(crate) fn hiv_rhs(p: &[f64], s: &[f64], out: &mut [f64]) {
    let (a, b, c, d) = (p[0], p[1], p[2], p[3]);
    let (x, y) = (s[0], s[1]);
    let infect = (b + a * y / (y + c)) * x * y;
    out[0] = 1.0 - d * x - infect;
    out[1] = infect - y;
}

pub(crate) fn hiv_jac(p: &[f64], s: &[f64], j: &mut Matrix) {
    let (a, b, c, d) = (p[0], p[1], p[2], p[3]);
    let (x, y) = (s[0], s[1]);
    let phi = b + a * y / (y + c);
    let phi_y = a * c / ((y + c) * (y + c));
    let dy = x * (phi + y * phi_y);
    j[(0, 0)] = -d - phi * y;
    j[(0, 1)] = -dy;
    j[(1, 0)] = phi * y;
    j[(1, 1)] = dy - 1.0;
}

pub(crate) fn hiv_growth(p: &[f64], s: &[f64], i: usize) -> f64 {
    debug_assert_eq!(i, 1);
    let (a, b, c) = (p[0], p[1], p[2]);
    let (x, y) = (s[0], s[1]);
    (b + a * y / (y + c)) * x - 1.0
}

// r, K, m, a, c, eps
pub(crate) fn gause_rhs(p: &[f64], s: &[f64], out: &mut [f64]) {
    let (r, k, m, a, c, eps) = (p[0], p[1], p[2], p[3], p[4], p[5]);
    let (x, y) = (s[0], s[1]);
    let resp = m * x / (a + x);
    out[0] = r * x * (1.0 - x / k) - y * resp;
    out[1] = y * (-eps + c * resp);
}

pub(crate) fn gause_jac(p: &[f64], s: &[f64], j: &mut Matrix) {
    let (r, k, m, a, c, eps) = (p[0], p[1], p[2], p[3], p[4], p[5]);
    let (x, y) = (s[0], s[1]);
    let resp = m * x / (a + x);
    let resp_x = m * a / ((a + x) * (a + x));
    j[(0, 0)] = r * (1.0 - 2.0 * x / k) - y * resp_x;
    j[(0, 1)] = -resp;
    j[(1, 0)] = y * c * resp_x;
    j[(1, 1)] = -eps + c * resp;
}

pub(crate) fn gause_growth(p: &[f64], s: &[f64], i: usize) -> f64 {
    let (r, k, m, a, c, eps) = (p[0], p[1], p[2], p[3], p[4], p[5]);
    let (x, y) = (s[0], s[1]);
    let resp = m / (a + x);
    match i {
        0 => r * (1.0 - x / k) - y * resp,
        _ => -eps + c * resp * x,
    }
}

// alpha, beta, gamma, d, p, K, Nstar, eps
pub(crate) fn sir_epidemic_rhs(p: &[f64], s: &[f64], out: &mut [f64]) {
    let (alpha, beta, gamma, d, pp, k, nstar, eps) =
        (p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]);
    let (su, inf, n) = (s[0], s[1], s[2]);
    let h = beta * su / (k + su);
    let g = n * (1.0 - n / nstar);
    let a = d + alpha + gamma;
    out[0] = d * n + eps * g - h * inf - (d + pp) * su;
    out[1] = h * inf - a * inf;
    out[2] = eps * g - alpha * inf;
}

pub(crate) fn sir_epidemic_jac(p: &[f64], s: &[f64], j: &mut Matrix) {
    let (alpha, beta, gamma, d, pp, k, nstar, eps) =
        (p[0], p[1], p[2], p[3], p[4], p[5], p[6], p[7]);
    let (su, inf, n) = (s[0], s[1], s[2]);
    let h = beta * su / (k + su);
    let h_s = beta * k / ((k + su) * (k + su));
    let g_n = 1.0 - 2.0 * n / nstar;
    let a = d + alpha + gamma;
    j[(0, 0)] = -h_s * inf - (d + pp);
    j[(0, 1)] = -h;
    j[(0, 2)] = d + eps * g_n;
    j[(1, 0)] = h_s * inf;
    j[(1, 1)] = h - a;
    j[(1, 2)] = 0.0;
    j[(2, 0)] = 0.0;
    j[(2, 1)] = -alpha;
    j[(2, 2)] = eps * g_n;
}

pub(crate) fn sir_epidemic_growth(p: &[f64], s: &[f64], i: usize) -> f64 {
    debug_assert_eq!(i, 1);
    let (alpha, beta, gamma, d, k) = (p[0], p[1], p[2], p[3], p[5]);
    beta * s[0] / (k + s[0]) - (d + alpha + gamma)
}

// delta1, delta2, kappa, gamma, theta, eps
pub(crate) fn fear_rhs(p: &[f64], s: &[f64], out: &mut [f64]) {
    out[0] = s[0] * fear_growth(p, s, 0);
    out[1] = s[1] * fear_growth(p, s, 1);
}

pub(crate) fn fear_jac(p: &[f64], s: &[f64], j: &mut Matrix) {
    let (d1, d2, kappa, gamma, theta, eps) = (p[0], p[1], p[2], p[3], p[4], p[5]);
    let (x, y) = (s[0], s[1]);
    let den = 1.0 + x + kappa * y;
    let q = (1.0 + x) / den;
    let q_x = kappa * y / (den * den);
    let q_y = -kappa * (1.0 + x) / (den * den);
    let w = theta + y + x;
    let sat = x / w;
    let sat_x = (theta + y) / (w * w);
    let sat_y = -x / (w * w);
    j[(0, 0)] = q - d1 - 2.0 * gamma * x + x * q_x;
    j[(0, 1)] = x * q_y;
    j[(1, 0)] = eps * y * sat_x;
    j[(1, 1)] = eps * (sat - d2) + eps * y * sat_y;
}

pub(crate) fn fear_growth(p: &[f64], s: &[f64], i: usize) -> f64 {
    let (d1, d2, kappa, gamma, theta, eps) = (p[0], p[1], p[2], p[3], p[4], p[5]);
    let (x, y) = (s[0], s[1]);
    match i {
        0 => (1.0 + x) / (1.0 + x + kappa * y) - d1 - gamma * x,
        _ => eps * (x / (theta + y + x) - d2),
    }
}

// alpha, gammabar, beta, gamma, delta, d1, d2
pub(crate) fn foodweb_rhs(p: &[f64], s: &[f64], out: &mut [f64]) {
    for i in 0..3 {
        out[i] = s[i] * foodweb_growth(p, s, i);
    }
}

pub(crate) fn foodweb_jac(p: &[f64], s: &[f64], j: &mut Matrix) {
    let (alpha, gbar, beta, gamma, delta, d1, d2) = (p[0], p[1], p[2], p[3], p[4], p[5], p[6]);
    let (x, y, z) = (s[0], s[1], s[2]);
    j[(0, 0)] = 1.0 - 2.0 * x - y - gbar * z;
    j[(0, 1)] = -x;
    j[(0, 2)] = -gbar * x;
    j[(1, 0)] = alpha * y;
    j[(1, 1)] = -d1 + alpha * x - beta * z;
    j[(1, 2)] = -beta * y;
    j[(2, 0)] = gamma * z;
    j[(2, 1)] = delta * z;
    j[(2, 2)] = -d2 + gamma * x + delta * y;
}

pub(crate) fn foodweb_growth(p: &[f64], s: &[f64], i: usize) -> f64 {
    let (alpha, gbar, beta, gamma, delta, d1, d2) = (p[0], p[1], p[2], p[3], p[4], p[5], p[6]);
    let (x, y, z) = (s[0], s[1], s[2]);
    match i {
        0 => 1.0 - x - y - gbar * z,
        1 => -d1 + alpha * x - beta * z,
        _ => -d2 + gamma * x + delta * y,
    }
}

// a, c, k, rho, delta
pub(crate) fn enso_rhs(p: &[f64], s: &[f64], out: &mut [f64]) {
    let (a, _c, k, rho, delta) = (p[0], p[1], p[2], p[3], p[4]);
    let (x, y, z) = (s[0], s[1], s[2]);
    out[0] = x * enso_growth(p, s, 0);
    out[1] = -rho * delta * (a * y + x * x);
    out[2] = delta * (k - z - 0.5 * x);
}

pub(crate) fn enso_jac(p: &[f64], s: &[f64], j: &mut Matrix) {
    let (a, c, _k, rho, delta) = (p[0], p[1], p[2], p[3], p[4]);
    let (x, y, z) = (s[0], s[1], s[2]);
    let t = (x + z).tanh();
    let sech2 = 1.0 - t * t;
    j[(0, 0)] = x + y + c * (1.0 - t) + x * (1.0 - c * sech2) + rho * delta * (2.0 * x - a);
    j[(0, 1)] = x;
    j[(0, 2)] = -x * c * sech2;
    j[(1, 0)] = -2.0 * rho * delta * x;
    j[(1, 1)] = -rho * delta * a;
    j[(1, 2)] = 0.0;
    j[(2, 0)] = -0.5 * delta;
    j[(2, 1)] = 0.0;
    j[(2, 2)] = -delta;
}

pub(crate) fn enso_growth(p: &[f64], s: &[f64], i: usize) -> f64 {
    debug_assert_eq!(i, 0);
    let (a, c, _k, rho, delta) = (p[0], p[1], p[2], p[3], p[4]);
    let (x, y, z) = (s[0], s[1], s[2]);
    x + y + c * (1.0 - (x + z).tanh()) + rho * delta * (x - a)
}

/// `v^e`, exact for integer exponents so negative Newton iterates stay finite.
fn hill_power(v: f64, e: f64) -> f64 {
    if e.fract() == 0.0 && e.abs() < i32::MAX as f64 {
        v.powi(e as i32)
    } else {
        v.powf(e)
    }
}

// alpha, K, rho, b1..b6
pub(crate) fn goodwin_rhs(p: &[f64], s: &[f64], out: &mut [f64]) {
    let (alpha, k, rho) = (p[0], p[1], p[2]);
    let b = &p[3..9];
    out[0] = k / (1.0 + alpha * hill_power(s[5], rho)) - b[0] * s[0];
    for i in 1..6 {
        out[i] = b[i - 1] * s[i - 1] - b[i] * s[i];
    }
}

pub(crate) fn goodwin_jac(p: &[f64], s: &[f64], j: &mut Matrix) {
    let (alpha, k, rho) = (p[0], p[1], p[2]);
    let b = &p[3..9];
    for v in j.as_mut_slice().iter_mut() {
        *v = 0.0;
    }
    let den = 1.0 + alpha * hill_power(s[5], rho);
    j[(0, 0)] = -b[0];
    j[(0, 5)] = -k * alpha * rho * hill_power(s[5], rho - 1.0) / (den * den);
    for i in 1..6 {
        j[(i, i - 1)] = b[i - 1];
        j[(i, i)] = -b[i];
    }
}

// c1, c2, c3, c4
pub(crate) fn sir_secondary_rhs(p: &[f64], s: &[f64], out: &mut [f64]) {
    let (c1, c2, c3, c4) = (p[0], p[1], p[2], p[3]);
    let (x, y, z) = (s[0], s[1], s[2]);
    let u = x + y;
    out[0] = u * (1.0 - u) - c1 * x * y - x * z;
    out[1] = c1 * x * y + x * z - c2 * y;
    out[2] = c3 * (c4 * y - z);
}

pub(crate) fn sir_secondary_jac(p: &[f64], s: &[f64], j: &mut Matrix) {
    let (c1, c2, c3, c4) = (p[0], p[1], p[2], p[3]);
    let (x, y, z) = (s[0], s[1], s[2]);
    let u = x + y;
    j[(0, 0)] = 1.0 - 2.0 * u - c1 * y - z;
    j[(0, 1)] = 1.0 - 2.0 * u - c1 * x;
    j[(0, 2)] = -x;
    j[(1, 0)] = c1 * y + z;
    j[(1, 1)] = c1 * x - c2;
    j[(1, 2)] = x;
    j[(2, 0)] = 0.0;
    j[(2, 1)] = c3 * c4;
    j[(2, 2)] = -c3;
}
