//! Scalar kernel evaluations: post-collision map, the closed-form kernel `k₁`,
//! the symmetric reduced kernel `k₂`, the collision frequency `ν`, and the
//! reduced first moments of the gain kernel used by the moment-matched tables.
//!
//! All quadrature here is radial: the angular integrals of the Grad-cutoff
//! kernel `B = |v−u|^γ |cos θ|` against the Maxwellian are done analytically,
//! leaving one-dimensional integrals in the relative speed. Internals run in
//! `f64` regardless of the solver scalar; results are cast on return.

use std::sync::OnceLock;

use crate::phase_grid::gauss_legendre;
use crate::scalar::{dot3, norm_sq3, Scalar};

/// Post-collision velocities of the σ-representation:
/// `v′ = v − [(v−u)·ω]ω`, `u′ = u + [(v−u)·ω]ω`.
///
/// Conserves momentum and kinetic energy exactly in exact arithmetic.
#[inline]
pub fn post_collision<T: Scalar>(v: [T; 3], u: [T; 3], omega: [T; 3]) -> ([T; 3], [T; 3]) {
    let s = dot3([v[0] - u[0], v[1] - u[1], v[2] - u[2]], omega);
    (
        [v[0] - s * omega[0], v[1] - s * omega[1], v[2] - s * omega[2]],
        [u[0] + s * omega[0], u[1] + s * omega[1], u[2] + s * omega[2]],
    )
}

/// Exponentially scaled modified Bessel function `I₀(x)·e^{−x}` for `x ≥ 0`.
///
/// Polynomial fits (Abramowitz & Stegun 9.8.1 / 9.8.2), relative error below
/// `2e-7` — ample for kernel quadrature at the tolerances used here.
pub(crate) fn bessel_i0e(x: f64) -> f64 {
    debug_assert!(x >= 0.0);
    if x < 3.75 {
        let t = (x / 3.75).powi(2);
        let i0 = 1.0
            + t * (3.5156229
                + t * (3.0899424
                    + t * (1.2067492 + t * (0.2659732 + t * (0.0360768 + t * 0.0045813)))));
        i0 * (-x).exp()
    } else {
        let t = 3.75 / x;
        let p = 0.39894228
            + t * (0.01328592
                + t * (0.00225319
                    + t * (-0.00157565
                        + t * (0.00916281
                            + t * (-0.02057706
                                + t * (0.02635537 + t * (-0.01647633 + t * 0.00392377)))))));
        p / x.sqrt()
    }
}

#[inline]
fn mu3(v: [f64; 3]) -> f64 {
    (2.0 * std::f64::consts::PI).powf(-1.5) * (-0.5 * norm_sq3(v)).exp()
}

/// Closed-form kernel `k₁(v, η) = 2π |v−η|^γ √(μ(v) μ(η))`
/// (angular integral `∫|cos θ| dω = 2π` done analytically).
pub fn k1_kernel(v: [f64; 3], eta: [f64; 3], gamma: f64) -> f64 {
    let rho = ((v[0] - eta[0]).powi(2) + (v[1] - eta[1]).powi(2) + (v[2] - eta[2]).powi(2)).sqrt();
    2.0 * std::f64::consts::PI * rho.powf(gamma) * (mu3(v) * mu3(eta)).sqrt()
}

const K2_QUAD_N: usize = 96;

fn k2_quad() -> &'static (Vec<f64>, Vec<f64>) {
    static Q: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    Q.get_or_init(|| gauss_legendre(K2_QUAD_N))
}

/// Symmetric gain kernel `k₂(v, η)` of the linearized operator, reduced to a
/// one-dimensional radial integral:
///
/// `k₂ = (2π)^{-1/2} (4/ρ) e^{-(|v|²+|η|²)/4} ∫₀^∞ r (ρ²+r²)^{(γ−1)/2}
///  e^{-r²/2} I₀(rα/2) dr`
///
/// with `ρ = |v−η|` and `α² = |v+η|² − (|v|²−|η|²)²/ρ²`. Returns 0 at the
/// (excluded) diagonal `ρ = 0`.
pub fn k2_kernel_reduced(v: [f64; 3], eta: [f64; 3], gamma: f64) -> f64 {
    let y = [eta[0] - v[0], eta[1] - v[1], eta[2] - v[2]];
    let rho2 = norm_sq3(y);
    if rho2 < 1e-24 {
        return 0.0;
    }
    let rho = rho2.sqrt();
    let s2 = norm_sq3(v) + norm_sq3(eta);
    let vpe = [v[0] + eta[0], v[1] + eta[1], v[2] + eta[2]];
    let d = dot3(y, vpe);
    let alpha = (norm_sq3(vpe) - d * d / rho2).max(0.0).sqrt();
    let rmax = alpha / 2.0 + 10.0;
    let (xs, ws) = k2_quad();
    let mut j = 0.0;
    for (&x, &w0) in xs.iter().zip(ws) {
        let r = 0.5 * rmax * (x + 1.0);
        let w = 0.5 * rmax * w0;
        let arg = r * alpha / 2.0;
        // I₀(arg) e^{-r²/2} = i0e(arg) e^{-r²/2 + arg}: the stabilized product
        // stays bounded where the raw factors overflow/underflow.
        j += w * r * (rho2 + r * r).powf((gamma - 1.0) / 2.0)
            * bessel_i0e(arg)
            * (-0.5 * r * r + arg).exp();
    }
    (2.0 * std::f64::consts::PI).powf(-0.5) * (4.0 / rho) * (-0.25 * s2).exp() * j
}

/// `k₂` at `γ = 1` in closed form:
/// `(4/ρ) (2π)^{-1/2} exp(−ρ²/8 − Δ²/(8ρ²))` with `Δ = |v|² − |η|²`.
pub fn k2_kernel_hard_sphere(v: [f64; 3], eta: [f64; 3]) -> f64 {
    let y = [eta[0] - v[0], eta[1] - v[1], eta[2] - v[2]];
    let rho2 = norm_sq3(y);
    if rho2 < 1e-24 {
        return 0.0;
    }
    let delta = norm_sq3(v) - norm_sq3(eta);
    (4.0 / rho2.sqrt())
        * (2.0 * std::f64::consts::PI).powf(-0.5)
        * (-rho2 / 8.0 - delta * delta / (8.0 * rho2)).exp()
}

/// `k₂` dispatch: closed form at `γ = 1`, radial quadrature otherwise.
pub fn k2_kernel(v: [f64; 3], eta: [f64; 3], gamma: f64) -> f64 {
    if gamma == 1.0 {
        k2_kernel_hard_sphere(v, eta)
    } else {
        k2_kernel_reduced(v, eta, gamma)
    }
}

const MOMENT_QUAD_N: usize = 240;

fn moment_quad() -> &'static (Vec<f64>, Vec<f64>) {
    static Q: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    Q.get_or_init(|| gauss_legendre(MOMENT_QUAD_N))
}

/// Reduced moments of the loss kernel `2π |v−u|^γ μ(u)` at speed `V = |v|`:
///
/// returns `(ν/2, m, e)` where `ν/2 = 2π∫|v−u|^γ μ du`,
/// `m = 2π∫|v−u|^γ μ(u) (u·v̂) du`, `e = 2π∫|v−u|^γ μ(u) |u|² du`.
///
/// The shift `z = u − v` makes the angular integrals analytic
/// (`A₀ = 2 sinh(a)/a`, `A₁ = −2(a cosh a − sinh a)/a²`, `a = V r`); the radial
/// integrand peaks near `r = V`, so the window is `[max(0, V−10), V+10]`.
pub fn reduced_moments(speed: f64, gamma: f64) -> (f64, f64, f64) {
    let (xs, ws) = moment_quad();
    let v = speed;
    let (lo, hi) = ((v - 10.0).max(0.0), v + 10.0);
    let pref = 2.0 * std::f64::consts::PI * (2.0 * std::f64::consts::PI).powf(-1.5)
        * (-0.5 * v * v).exp();
    let (mut nu2, mut m, mut e) = (0.0, 0.0, 0.0);
    for (&x, &w0) in xs.iter().zip(ws) {
        let r = 0.5 * (hi - lo) * (x + 1.0) + lo;
        let w = 0.5 * (hi - lo) * w0;
        let a = v * r;
        let (a0, a1) = if a < 1e-8 {
            (2.0 + a * a / 3.0, -2.0 * a / 3.0)
        } else {
            (
                2.0 * a.sinh() / a,
                -2.0 * (a * a.cosh() - a.sinh()) / (a * a),
            )
        };
        let base = w * r.powf(2.0 + gamma) * (-0.5 * r * r).exp() * 2.0 * std::f64::consts::PI;
        nu2 += base * a0;
        m += base * (v * a0 + r * a1);
        e += base * ((v * v + r * r) * a0 + 2.0 * v * r * a1);
    }
    (pref * nu2, pref * m, pref * e)
}

/// Collision frequency `ν(v) = 2 ∫∫ B(v−u, θ) μ(u) dω du = 4π ∫ |v−u|^γ μ(u) du`
/// via the reduced radial quadrature; depends on `|v|` only.
pub fn collision_frequency(speed: f64, gamma: f64) -> f64 {
    2.0 * reduced_moments(speed, gamma).0
}
