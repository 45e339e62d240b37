//! Backward characteristics of both species under the electric field, their
//! first-order variational Jacobians, and the free-streaming monitor.
//!
//! The characteristic system backward from `(t, x, v)` is
//! `dX/dτ = V`, `dV±/dτ = ∓∇φ(τ, X)`; the variational (Jacobian) system
//! co-integrates `dJ/dτ = A(τ)J` with `A = [[0, I], [∓∇²φ(τ, X), 0]]`.
//! Integration is classical fixed-step RK4. Positions are wrapped to the torus
//! only for field lookups; the returned `X` is unwrapped so Jacobians stay
//! continuous.

use crate::field::FieldState;
use crate::phase_grid::SpatialGrid;
use crate::scalar::Scalar;
use crate::{Error, Result};

/// Anything that can be sampled for `∇φ` and `∇²φ` at arbitrary `(t, x)`.
///
/// The production implementation is [`FieldHistory`]; tests use analytic
/// fields to isolate integrator error from interpolation error.
pub trait FieldSampler<T: Scalar> {
    fn grad(&self, t: T, x: [T; 3]) -> Result<[T; 3]>;
    fn hess(&self, t: T, x: [T; 3]) -> Result<[T; 9]>;
}

/// A field that is identically zero (free transport).
pub struct ZeroField;

impl<T: Scalar> FieldSampler<T> for ZeroField {
    fn grad(&self, _t: T, _x: [T; 3]) -> Result<[T; 3]> {
        Ok([T::zero(); 3])
    }
    fn hess(&self, _t: T, _x: [T; 3]) -> Result<[T; 9]> {
        Ok([T::zero(); 9])
    }
}

/// Periodic multilinear interpolation over the active spatial axes.
fn interp_periodic<T: Scalar, const K: usize>(
    grid: &SpatialGrid<T>,
    get: impl Fn(usize) -> [T; K],
    x: [T; 3],
) -> [T; K] {
    let n = grid.n_x;
    let d = grid.dim_x;
    let mut i0 = [0usize; 3];
    let mut fr = [T::zero(); 3];
    for a in 0..d {
        let t = (x[a] + T::of(0.5)) / grid.dx;
        let fl = t.floor();
        let i = fl.widen() as i64;
        i0[a] = (i.rem_euclid(n as i64)) as usize;
        fr[a] = t - fl;
    }
    let mut out = [T::zero(); K];
    for corner in 0..(1usize << d) {
        let mut w = T::one();
        let mut m = [0usize; 3];
        for a in 0..d {
            if corner >> a & 1 == 1 {
                w *= fr[a];
                m[a] = (i0[a] + 1) % n;
            } else {
                w *= T::one() - fr[a];
                m[a] = i0[a];
            }
        }
        let mut flat = 0usize;
        for a in 0..d {
            flat = flat * n + m[a];
        }
        let vals = get(flat);
        for k in 0..K {
            out[k] += w * vals[k];
        }
    }
    out
}

/// Time-ordered window of solved field states with linear-in-time, periodic
/// multilinear-in-space interpolation.
#[derive(Debug, Clone)]
pub struct FieldHistory<T> {
    grid: SpatialGrid<T>,
    entries: Vec<(T, FieldState<T>)>,
}

impl<T: Scalar> FieldHistory<T> {
    pub fn new(grid: SpatialGrid<T>) -> Self {
        Self {
            grid,
            entries: Vec::new(),
        }
    }

    /// Appends a field state; times must be strictly increasing.
    pub fn push(&mut self, t: T, state: FieldState<T>) -> Result<()> {
        if let Some(&(last, _)) = self.entries.last() {
            if !(t > last) {
                return Err(Error::InvalidConfig(format!(
                    "field history times must increase: {} after {}",
                    t, last
                )));
            }
        }
        if state.grad_phi.len() != self.grid.len() {
            return Err(Error::SizeMismatch {
                context: "FieldHistory::push",
                expected: self.grid.len(),
                got: state.grad_phi.len(),
            });
        }
        self.entries.push((t, state));
        Ok(())
    }

    /// Drops entries strictly older than `t0` except the last one before it
    /// (kept so the window still covers `t0`).
    pub fn retain_from(&mut self, t0: T) {
        while self.entries.len() >= 2 && self.entries[1].0 <= t0 {
            self.entries.remove(0);
        }
    }

    /// Whether `[s, t]` lies inside the covered window.
    pub fn covers(&self, s: T, t: T) -> bool {
        match (self.entries.first(), self.entries.last()) {
            (Some(&(a, _)), Some(&(b, _))) => {
                let eps = T::of(1e-9);
                s >= a - eps && t <= b + eps
            }
            _ => false,
        }
    }

    /// Bracketing entries and the linear interpolation weight for time `t`.
    fn bracket(&self, t: T) -> Result<(usize, usize, T)> {
        if self.entries.is_empty() || !self.covers(t, t) {
            return Err(Error::Numerics(format!(
                "field history does not cover t = {}",
                t
            )));
        }
        if self.entries.len() == 1 {
            return Ok((0, 0, T::zero()));
        }
        let mut hi = self
            .entries
            .iter()
            .position(|&(tt, _)| tt >= t)
            .unwrap_or(self.entries.len() - 1);
        if hi == 0 {
            hi = 1;
        }
        let lo = hi - 1;
        let (ta, _) = self.entries[lo];
        let (tb, _) = self.entries[hi];
        Ok((lo, hi, (t - ta) / (tb - ta)))
    }
}

impl<T: Scalar> FieldSampler<T> for FieldHistory<T> {
    fn grad(&self, t: T, x: [T; 3]) -> Result<[T; 3]> {
        let (lo, hi, w) = self.bracket(t)?;
        let a = interp_periodic(&self.grid, |i| self.entries[lo].1.grad_phi[i], x);
        if lo == hi {
            return Ok(a);
        }
        let b = interp_periodic(&self.grid, |i| self.entries[hi].1.grad_phi[i], x);
        let mut out = [T::zero(); 3];
        for k in 0..3 {
            out[k] = (T::one() - w) * a[k] + w * b[k];
        }
        Ok(out)
    }

    fn hess(&self, t: T, x: [T; 3]) -> Result<[T; 9]> {
        let (lo, hi, w) = self.bracket(t)?;
        let a = interp_periodic(&self.grid, |i| self.entries[lo].1.hess_phi[i], x);
        if lo == hi {
            return Ok(a);
        }
        let b = interp_periodic(&self.grid, |i| self.entries[hi].1.hess_phi[i], x);
        let mut out = [T::zero(); 9];
        for k in 0..9 {
            out[k] = (T::one() - w) * a[k] + w * b[k];
        }
        Ok(out)
    }
}

/// 6×6 variational Jacobian `∂(X, V)/∂(x, v)` in 3×3 blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jacobian<T> {
    /// Row-major 6×6, rows = (X, V), columns = (x, v).
    pub j: [[T; 6]; 6],
}

impl<T: Scalar> Jacobian<T> {
    fn identity() -> Self {
        let mut j = [[T::zero(); 6]; 6];
        for (r, row) in j.iter_mut().enumerate() {
            row[r] = T::one();
        }
        Self { j }
    }

    /// `det(∂X/∂v)` — the upper-right 3×3 block.
    pub fn det_dx_dv(&self) -> T {
        let b = |r: usize, c: usize| self.j[r][3 + c];
        b(0, 0) * (b(1, 1) * b(2, 2) - b(1, 2) * b(2, 1))
            - b(0, 1) * (b(1, 0) * b(2, 2) - b(1, 2) * b(2, 0))
            + b(0, 2) * (b(1, 0) * b(2, 1) - b(1, 1) * b(2, 0))
    }

    /// Determinant of the full 6×6 matrix (phase-volume factor).
    pub fn det_full(&self) -> T {
        // Gaussian elimination with partial pivoting in the widened type.
        let mut m = [[0.0f64; 6]; 6];
        for r in 0..6 {
            for c in 0..6 {
                m[r][c] = self.j[r][c].widen();
            }
        }
        let mut det = 1.0f64;
        for col in 0..6 {
            let piv = (col..6)
                .max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))
                .unwrap();
            if m[piv][col] == 0.0 {
                return T::zero();
            }
            if piv != col {
                m.swap(piv, col);
                det = -det;
            }
            det *= m[col][col];
            for row in (col + 1)..6 {
                let f = m[row][col] / m[col][col];
                for c in col..6 {
                    m[row][c] -= f * m[col][c];
                }
            }
        }
        T::of(det)
    }
}

/// Endpoint of a characteristic integration.
#[derive(Debug, Clone)]
pub struct CharacteristicResult<T> {
    /// Position at the target time (unwrapped).
    pub x: [T; 3],
    /// Velocity at the target time.
    pub v: [T; 3],
    /// Variational Jacobian, when requested.
    pub jacobian: Option<Jacobian<T>>,
}

fn rk4_step<T: Scalar>(
    sign: T,
    field: &impl FieldSampler<T>,
    t: T,
    h: T,
    x: &mut [T; 3],
    v: &mut [T; 3],
    jac: &mut Option<Jacobian<T>>,
) -> Result<()> {
    // State y = (X, V [, J]); dX = V, dV = −sign·∇φ, dJ = A·J.
    let deriv = |tau: T,
                 xs: &[T; 3],
                 vs: &[T; 3],
                 js: &Option<Jacobian<T>>|
     -> Result<([T; 3], [T; 3], Option<Jacobian<T>>)> {
        let g = field.grad(tau, *xs)?;
        let dv = [-sign * g[0], -sign * g[1], -sign * g[2]];
        let dj = if let Some(j) = js {
            let hmat = field.hess(tau, *xs)?;
            let mut out = [[T::zero(); 6]; 6];
            for c in 0..6 {
                for r in 0..3 {
                    out[r][c] = j.j[r + 3][c];
                }
                for r in 0..3 {
                    let mut acc = T::zero();
                    for m in 0..3 {
                        acc += hmat[3 * r + m] * j.j[m][c];
                    }
                    out[r + 3][c] = -sign * acc;
                }
            }
            Some(Jacobian { j: out })
        } else {
            None
        };
        Ok((*vs, dv, dj))
    };
    let add = |a: &[T; 3], b: &[T; 3], f: T| -> [T; 3] {
        [a[0] + f * b[0], a[1] + f * b[1], a[2] + f * b[2]]
    };
    let addj = |a: &Option<Jacobian<T>>, b: &Option<Jacobian<T>>, f: T| -> Option<Jacobian<T>> {
        match (a, b) {
            (Some(a), Some(b)) => {
                let mut out = a.j;
                for r in 0..6 {
                    for c in 0..6 {
                        out[r][c] += f * b.j[r][c];
                    }
                }
                Some(Jacobian { j: out })
            }
            _ => None,
        }
    };
    let half = T::of(0.5);
    let (k1x, k1v, k1j) = deriv(t, x, v, jac)?;
    let (k2x, k2v, k2j) = deriv(
        t + half * h,
        &add(x, &k1x, half * h),
        &add(v, &k1v, half * h),
        &addj(jac, &k1j, half * h),
    )?;
    let (k3x, k3v, k3j) = deriv(
        t + half * h,
        &add(x, &k2x, half * h),
        &add(v, &k2v, half * h),
        &addj(jac, &k2j, half * h),
    )?;
    let (k4x, k4v, k4j) = deriv(
        t + h,
        &add(x, &k3x, h),
        &add(v, &k3v, h),
        &addj(jac, &k3j, h),
    )?;
    let sixth = h / T::of(6.0);
    for a in 0..3 {
        x[a] += sixth * (k1x[a] + T::of(2.0) * (k2x[a] + k3x[a]) + k4x[a]);
        v[a] += sixth * (k1v[a] + T::of(2.0) * (k2v[a] + k3v[a]) + k4v[a]);
    }
    if let Some(j) = jac {
        let (k1, k2, k3, k4) = (k1j.unwrap(), k2j.unwrap(), k3j.unwrap(), k4j.unwrap());
        for r in 0..6 {
            for c in 0..6 {
                j.j[r][c] +=
                    sixth * (k1.j[r][c] + T::of(2.0) * (k2.j[r][c] + k3.j[r][c]) + k4.j[r][c]);
            }
        }
    }
    Ok(())
}

/// Integrates the characteristic ODE between two times (either direction) with
/// fixed RK4 substeps of nominal size `dtau_sub`.
pub fn integrate<T: Scalar>(
    species_sign: T,
    t_from: T,
    x: [T; 3],
    v: [T; 3],
    t_to: T,
    field: &impl FieldSampler<T>,
    dtau_sub: T,
    with_jacobian: bool,
) -> Result<CharacteristicResult<T>> {
    if !(species_sign == T::one() || species_sign == -T::one()) {
        return Err(Error::InvalidConfig(format!(
            "species sign must be ±1, got {species_sign}"
        )));
    }
    if !(dtau_sub > T::zero()) {
        return Err(Error::InvalidConfig("Δτ_sub must be positive".into()));
    }
    let span = t_to - t_from;
    let mut xs = x;
    let mut vs = v;
    let mut jac = if with_jacobian {
        Some(Jacobian::identity())
    } else {
        None
    };
    if span != T::zero() {
        let n = (span.abs() / dtau_sub).ceil().widen().max(1.0) as usize;
        let h = span / T::of_usize(n);
        let mut tau = t_from;
        for k in 0..n {
            rk4_step(species_sign, field, tau, h, &mut xs, &mut vs, &mut jac)?;
            tau = t_from + T::of_usize(k + 1) * h;
        }
    }
    for a in 0..3 {
        if !xs[a].is_finite() || !vs[a].is_finite() {
            return Err(Error::NonFinite("characteristic state"));
        }
    }
    Ok(CharacteristicResult {
        x: xs,
        v: vs,
        jacobian: jac,
    })
}

/// Backward characteristics from `(t, x, v)` down to time `s ≤ t`.
pub fn integrate_backward<T: Scalar>(
    species_sign: T,
    t: T,
    x: [T; 3],
    v: [T; 3],
    s: T,
    field: &impl FieldSampler<T>,
    dtau_sub: T,
    with_jacobian: bool,
) -> Result<CharacteristicResult<T>> {
    if !(s <= t) {
        return Err(Error::InvalidConfig(format!(
            "backward characteristics need s ≤ t, got s = {s}, t = {t}"
        )));
    }
    integrate(species_sign, t, x, v, s, field, dtau_sub, with_jacobian)
}

/// Free-streaming condition margins at one time:
/// `‖∇φ‖∞ ≤ δ(1+t)^{−2}` and `‖∇²φ‖∞ ≤ δ(1+t)^{−5/2}`.
#[derive(Debug, Clone, Copy)]
pub struct FreeStreamingReport<T> {
    /// `‖∇φ‖∞ / (δ(1+t)^{−2})`.
    pub grad_margin: T,
    /// `‖∇²φ‖∞ / (δ(1+t)^{−5/2})`.
    pub hess_margin: T,
    /// Both margins ≤ 1.
    pub pass: bool,
}

pub fn free_streaming_monitor<T: Scalar>(
    state: &FieldState<T>,
    t: T,
    delta: T,
) -> FreeStreamingReport<T> {
    let opt = T::one() + t;
    let grad_margin = state.grad_inf / (delta * opt.powf(T::of(-2.0)));
    let hess_margin = state.hess_inf / (delta * opt.powf(T::of(-2.5)));
    FreeStreamingReport {
        grad_margin,
        hess_margin,
        pass: grad_margin <= T::one() && hess_margin <= T::one(),
    }
}
