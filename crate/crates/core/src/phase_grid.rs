//! Discrete geometry and quadrature: spatial torus grid, truncated velocity cube,
//! and the sphere quadrature for the collision angle.
//!
//! All integration in the solver funnels through the primitives defined here:
//! midpoint rule on the velocity cube, uniform nodes on the torus, and a product
//! rule on the unit sphere (Gauss-Legendre in `cos θ`, split at the equator so the
//! `|cos θ|` collision factor is integrated exactly, times a uniform trapezoid in
//! azimuth).

use crate::scalar::{norm_sq3, Scalar};
use crate::{Error, Result};

/// Default tolerance on `|∫μ dv − 1|` used to reject over-aggressive velocity
/// truncation. Loose enough to admit the coarse `n_v = 8` oracle grids.
pub const DEFAULT_MU_MASS_TOL: f64 = 1e-3;

/// Uniform periodic grid on the torus `[-1/2, 1/2]^dim_x`.
///
/// Suppressed axes (`dim_x < 3`) carry a single node at coordinate zero; solutions
/// constant in those directions solve the same system.
#[derive(Debug, Clone)]
pub struct SpatialGrid<T> {
    pub dim_x: usize,
    pub n_x: usize,
    pub dx: T,
}

impl<T: Scalar> SpatialGrid<T> {
    /// Total number of spatial nodes, `n_x^dim_x`.
    pub fn len(&self) -> usize {
        self.n_x.pow(self.dim_x as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate of node `i` along an active axis: `-1/2 + i·Δx`.
    pub fn axis_coord(&self, i: usize) -> T {
        T::of(-0.5) + T::of_usize(i) * self.dx
    }

    /// Decodes a flat node index (axis 0 outermost) into per-axis indices.
    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        let mut m = [0usize; 3];
        let mut rest = idx;
        for ax in (0..self.dim_x).rev() {
            m[ax] = rest % self.n_x;
            rest /= self.n_x;
        }
        debug_assert_eq!(rest, 0);
        m
    }

    /// Position of a flat node index as a 3-vector (suppressed axes at 0).
    pub fn node(&self, idx: usize) -> [T; 3] {
        let m = self.multi_index(idx);
        let mut x = [T::zero(); 3];
        for ax in 0..self.dim_x {
            x[ax] = self.axis_coord(m[ax]);
        }
        x
    }

    /// Integration weight per node, `Δx^dim_x`.
    pub fn cell_volume(&self) -> T {
        self.dx.powi(self.dim_x as i32)
    }

    /// Midpoint sum over the torus.
    pub fn integrate(&self, samples: &[T]) -> Result<T> {
        if samples.len() != self.len() {
            return Err(Error::SizeMismatch {
                context: "SpatialGrid::integrate",
                expected: self.len(),
                got: samples.len(),
            });
        }
        Ok(samples.iter().copied().sum::<T>() * self.cell_volume())
    }
}

/// Midpoint-rule grid on the velocity cube `[-v_max, v_max]^3`.
///
/// Nodes sit at cell centers, so the node set is exactly symmetric under
/// `v ↦ -v` and never contains the origin-coincidence pair `v = u` off the
/// diagonal of the product grid.
#[derive(Debug, Clone)]
pub struct VelocityGrid<T> {
    pub n_v: usize,
    pub v_max: T,
    pub dv: T,
    nodes: Vec<[T; 3]>,
}

impl<T: Scalar> VelocityGrid<T> {
    pub fn new(n_v: usize, v_max: T) -> Result<Self> {
        if n_v < 2 {
            return Err(Error::InvalidConfig(format!(
                "velocity grid needs n_v >= 2, got {n_v}"
            )));
        }
        if !(v_max > T::zero()) {
            return Err(Error::InvalidConfig("v_max must be positive".into()));
        }
        let dv = T::of(2.0) * v_max / T::of_usize(n_v);
        let axis: Vec<T> = (0..n_v)
            .map(|i| -v_max + (T::of_usize(i) + T::of(0.5)) * dv)
            .collect();
        let mut nodes = Vec::with_capacity(n_v * n_v * n_v);
        for &a in &axis {
            for &b in &axis {
                for &c in &axis {
                    nodes.push([a, b, c]);
                }
            }
        }
        Ok(Self {
            n_v,
            v_max,
            dv,
            nodes,
        })
    }

    /// Total number of velocity nodes, `n_v³`.
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[[T; 3]] {
        &self.nodes
    }

    pub fn node(&self, j: usize) -> [T; 3] {
        self.nodes[j]
    }

    /// Coordinate of index `i` along one axis: `-v_max + (i + 1/2)·Δv`.
    pub fn axis_coord(&self, i: usize) -> T {
        -self.v_max + (T::of_usize(i) + T::of(0.5)) * self.dv
    }

    /// Flat index of the per-axis index triple.
    pub fn index(&self, iv: [usize; 3]) -> usize {
        (iv[0] * self.n_v + iv[1]) * self.n_v + iv[2]
    }

    /// Decodes a flat index into per-axis indices.
    pub fn multi_index(&self, j: usize) -> [usize; 3] {
        let n = self.n_v;
        [j / (n * n), (j / n) % n, j % n]
    }

    /// Integration weight per node, `Δv³`.
    pub fn cell_volume(&self) -> T {
        self.dv * self.dv * self.dv
    }

    /// Midpoint sum `Σ samples · Δv³`.
    pub fn integrate(&self, samples: &[T]) -> Result<T> {
        if samples.len() != self.len() {
            return Err(Error::SizeMismatch {
                context: "VelocityGrid::integrate",
                expected: self.len(),
                got: samples.len(),
            });
        }
        Ok(samples.iter().copied().sum::<T>() * self.cell_volume())
    }
}

/// Product quadrature on the unit sphere.
///
/// `cos θ ∈ [-1, 1]` is split at the equator with Gauss-Legendre nodes on each
/// half (the collision kernel's `|cos θ|` factor is polynomial per hemisphere, so
/// the polar rule integrates it exactly); azimuth uses the uniform trapezoid rule,
/// which is spectrally accurate for periodic integrands.
#[derive(Debug, Clone)]
pub struct SphereQuadrature<T> {
    pub n_theta: usize,
    pub n_phi: usize,
    nodes: Vec<([T; 3], T)>,
}

impl<T: Scalar> SphereQuadrature<T> {
    pub fn new(n_theta: usize, n_phi: usize) -> Result<Self> {
        if n_theta < 2 || n_phi < 2 {
            return Err(Error::InvalidConfig(format!(
                "sphere quadrature needs n_theta, n_phi >= 2, got ({n_theta}, {n_phi})"
            )));
        }
        if n_theta % 2 != 0 {
            return Err(Error::InvalidConfig(format!(
                "n_theta must be even (Gauss-Legendre panels split at the equator), got {n_theta}"
            )));
        }
        let (gl_x, gl_w) = gauss_legendre(n_theta / 2);
        let dphi = 2.0 * std::f64::consts::PI / n_phi as f64;
        let mut nodes = Vec::with_capacity(n_theta * n_phi);
        // Map [-1, 1] GL nodes onto the panels [-1, 0] and [0, 1].
        for (lo, hi) in [(-1.0, 0.0), (0.0, 1.0)] {
            let half = 0.5 * (hi - lo);
            let mid = 0.5 * (hi + lo);
            for (&x, &w) in gl_x.iter().zip(&gl_w) {
                let c = mid + half * x;
                let s = (1.0 - c * c).max(0.0).sqrt();
                let wc = half * w * dphi;
                for j in 0..n_phi {
                    let phi = (j as f64 + 0.5) * dphi;
                    let omega = [
                        T::of(s * phi.cos()),
                        T::of(s * phi.sin()),
                        T::of(c),
                    ];
                    nodes.push((omega, T::of(wc)));
                }
            }
        }
        Ok(Self {
            n_theta,
            n_phi,
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Direction/weight pairs; weights sum to `4π`.
    pub fn nodes(&self) -> &[([T; 3], T)] {
        &self.nodes
    }

    /// Weighted sum of `f(ω)` over the sphere.
    pub fn integrate(&self, mut f: impl FnMut([T; 3]) -> T) -> Result<T> {
        let mut acc = T::zero();
        for &(omega, w) in &self.nodes {
            let val = f(omega);
            if !val.is_finite() {
                return Err(Error::NonFinite("sphere quadrature sample"));
            }
            acc += w * val;
        }
        Ok(acc)
    }
}

/// Composite grid owning all discrete geometry.
#[derive(Debug, Clone)]
pub struct PhaseGrid<T> {
    pub x: SpatialGrid<T>,
    pub v: VelocityGrid<T>,
    pub sphere: SphereQuadrature<T>,
}

impl<T: Scalar> PhaseGrid<T> {
    /// Midpoint sum over the velocity cube.
    pub fn integrate_v(&self, samples: &[T]) -> Result<T> {
        self.v.integrate(samples)
    }

    /// Weighted sum over the collision sphere.
    pub fn integrate_sphere(&self, f: impl FnMut([T; 3]) -> T) -> Result<T> {
        self.sphere.integrate(f)
    }

    /// Total number of `(x, v)` nodes.
    pub fn phase_len(&self) -> usize {
        self.x.len() * self.v.len()
    }
}

/// Builds the composite grid and validates its invariants.
///
/// Rejects non-positive sizes, a non-power-of-two `n_x`, and a velocity cube so
/// small that the Maxwellian mass on the grid deviates from 1 by more than
/// [`DEFAULT_MU_MASS_TOL`].
pub fn build_phase_grid<T: Scalar>(
    dim_x: usize,
    n_x: usize,
    n_v: usize,
    v_max: T,
    n_theta: usize,
    n_phi: usize,
) -> Result<PhaseGrid<T>> {
    build_phase_grid_with_tol(dim_x, n_x, n_v, v_max, n_theta, n_phi, DEFAULT_MU_MASS_TOL)
}

/// [`build_phase_grid`] with an explicit tolerance on `|∫μ dv − 1|`.
pub fn build_phase_grid_with_tol<T: Scalar>(
    dim_x: usize,
    n_x: usize,
    n_v: usize,
    v_max: T,
    n_theta: usize,
    n_phi: usize,
    mu_mass_tol: f64,
) -> Result<PhaseGrid<T>> {
    if !(1..=3).contains(&dim_x) {
        return Err(Error::InvalidConfig(format!(
            "dim_x must be 1, 2, or 3, got {dim_x}"
        )));
    }
    if n_x < 2 || !n_x.is_power_of_two() {
        return Err(Error::InvalidConfig(format!(
            "n_x must be a power of two >= 2, got {n_x}"
        )));
    }
    let x = SpatialGrid {
        dim_x,
        n_x,
        dx: T::one() / T::of_usize(n_x),
    };
    let v = VelocityGrid::new(n_v, v_max)?;
    let sphere = SphereQuadrature::new(n_theta, n_phi)?;

    // Maxwellian mass check guards against over-aggressive truncation.
    let norm = T::of((2.0 * std::f64::consts::PI).powf(-1.5));
    let mass = v
        .nodes()
        .iter()
        .map(|&vi| norm * (-norm_sq3(vi) * T::of(0.5)).exp())
        .sum::<T>()
        * v.cell_volume();
    if (mass - T::one()).abs().widen() > mu_mass_tol {
        return Err(Error::InvalidConfig(format!(
            "velocity truncation too aggressive: grid Maxwellian mass {} deviates from 1 by more than {mu_mass_tol}",
            mass
        )));
    }
    Ok(PhaseGrid { x, v, sphere })
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`, by Newton iteration on the
/// Legendre recurrence.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1);
    let mut xs = vec![0.0; n];
    let mut ws = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess for the i-th root (descending order).
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n and P_n' via the three-term recurrence.
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = (n as f64) * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        xs[i] = -x;
        ws[i] = w;
        xs[n - 1 - i] = x;
        ws[n - 1 - i] = w;
    }
    if n == 1 {
        xs[0] = 0.0;
        ws[0] = 2.0;
    }
    (xs, ws)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
    const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;

    fn mu(v: [f64; 3]) -> f64 {
        (TWO_PI).powf(-1.5) * (-0.5 * norm_sq3(v)).exp()
    }

    fn default_grid() -> PhaseGrid<f64> {
        build_phase_grid(1, 32, 16, 6.0, 8, 16).unwrap()
    }

    #[test]
    fn constructor_counts() {
        let g = default_grid();
        assert_eq!(g.x.len(), 32);
        assert_eq!(g.v.len(), 16 * 16 * 16);
        assert_eq!(g.sphere.len(), 128);
        assert_eq!(g.x.dx * 32.0, 1.0);
    }

    #[test]
    fn gauss_legendre_matches_known_values() {
        let (x, w) = gauss_legendre(2);
        assert_relative_eq!(x[1], 1.0 / 3.0_f64.sqrt(), max_relative = 1e-14);
        assert_relative_eq!(w[0], 1.0, max_relative = 1e-14);
        // Degree-9 polynomial integrated exactly by 5 nodes.
        let (x, w) = gauss_legendre(5);
        let integral: f64 = x.iter().zip(&w).map(|(&x, &w)| w * x.powi(8)).sum();
        assert_relative_eq!(integral, 2.0 / 9.0, max_relative = 1e-13);
    }

    #[test]
    fn sphere_weights_sum_to_surface_area() {
        let g = default_grid();
        let total: f64 = g.sphere.nodes().iter().map(|&(_, w)| w).sum();
        assert_relative_eq!(total, FOUR_PI, max_relative = 1e-12);
        for &(omega, _) in g.sphere.nodes() {
            assert!((norm_sq3(omega).sqrt() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn sphere_integrates_abs_cos_theta() {
        let g = default_grid();
        // ∫_{S²} |cos θ| dω = 2π, with θ measured from a fixed axis.
        let val = g.integrate_sphere(|w| w[2].abs()).unwrap();
        assert!((val - TWO_PI).abs() < 1e-6 * TWO_PI);
        let odd = g.integrate_sphere(|w| w[2]).unwrap();
        assert!(odd.abs() < 1e-12);
    }

    #[test]
    fn sphere_exact_for_low_degree_harmonics() {
        let g = default_grid();
        // Degree <= 3 monomial moments of the sphere.
        let z2 = g.integrate_sphere(|w| w[2] * w[2]).unwrap();
        assert_relative_eq!(z2, FOUR_PI / 3.0, max_relative = 1e-12);
        let x2 = g.integrate_sphere(|w| w[0] * w[0]).unwrap();
        assert_relative_eq!(x2, FOUR_PI / 3.0, max_relative = 1e-12);
        for f in [
            (|w: [f64; 3]| w[0] * w[1]) as fn([f64; 3]) -> f64,
            |w| w[0] * w[1] * w[2],
            |w| w[2] * w[2] * w[2],
            |w| w[0] * w[2] * w[2],
        ] {
            assert!(g.integrate_sphere(f).unwrap().abs() < 1e-13);
        }
    }

    #[test]
    fn velocity_grid_symmetric_under_negation() {
        let g = default_grid();
        for j in 0..g.v.len() {
            let v = g.v.node(j);
            let neg = [-v[0], -v[1], -v[2]];
            let m = g.v.multi_index(j);
            let jm = g
                .v
                .index([g.v.n_v - 1 - m[0], g.v.n_v - 1 - m[1], g.v.n_v - 1 - m[2]]);
            let back = g.v.node(jm);
            assert_eq!(neg, back);
        }
    }

    #[test]
    fn velocity_moments_of_maxwellian() {
        let g = default_grid();
        let mu_s: Vec<f64> = g.v.nodes().iter().map(|&v| mu(v)).collect();
        assert!((g.integrate_v(&mu_s).unwrap() - 1.0).abs() < 1e-8);
        let v1mu: Vec<f64> = g.v.nodes().iter().map(|&v| v[0] * mu(v)).collect();
        assert!(g.integrate_v(&v1mu).unwrap().abs() < 1e-12);
        let v2mu: Vec<f64> = g.v.nodes().iter().map(|&v| norm_sq3(v) * mu(v)).collect();
        assert!((g.integrate_v(&v2mu).unwrap() - 3.0).abs() < 1e-6);
    }

    #[test]
    fn integrate_v_is_linear() {
        // Coarse velocity grid: loosen the Maxwellian-mass guard, linearity is
        // a property of the rule itself.
        let g = build_phase_grid_with_tol(1, 4, 4, 6.0, 2, 2, 1.0).unwrap();
        let f: Vec<f64> = (0..g.v.len()).map(|i| (i as f64).sin()).collect();
        let h: Vec<f64> = (0..g.v.len()).map(|i| (i as f64 * 0.3).cos()).collect();
        let combo: Vec<f64> = f.iter().zip(&h).map(|(&a, &b)| 2.5 * a - 0.75 * b).collect();
        let lhs = g.integrate_v(&combo).unwrap();
        let rhs = 2.5 * g.integrate_v(&f).unwrap() - 0.75 * g.integrate_v(&h).unwrap();
        assert_relative_eq!(lhs, rhs, max_relative = 1e-14);
    }

    #[test]
    fn truncation_too_aggressive_rejected() {
        let err = build_phase_grid::<f64>(1, 32, 16, 0.5, 8, 16).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("velocity truncation too aggressive"), "{msg}");
    }

    #[test]
    fn invalid_sizes_rejected() {
        assert!(build_phase_grid::<f64>(0, 32, 16, 6.0, 8, 16).is_err());
        assert!(build_phase_grid::<f64>(1, 33, 16, 6.0, 8, 16).is_err());
        assert!(build_phase_grid::<f64>(1, 32, 1, 6.0, 8, 16).is_err());
        assert!(build_phase_grid::<f64>(1, 32, 16, -1.0, 8, 16).is_err());
        assert!(build_phase_grid::<f64>(1, 32, 16, 6.0, 1, 16).is_err());
        assert!(build_phase_grid::<f64>(1, 32, 16, 6.0, 8, 1).is_err());
    }

    #[test]
    fn mu_mass_defect_shrinks_under_refinement() {
        let defect = |n_v: usize| {
            let g = build_phase_grid::<f64>(1, 4, n_v, 6.0, 2, 2).unwrap();
            let mu_s: Vec<f64> = g.v.nodes().iter().map(|&v| mu(v)).collect();
            (g.integrate_v(&mu_s).unwrap() - 1.0).abs()
        };
        // The defect drops fast with resolution, then plateaus at the |v| > 6
        // truncation tail (≈ 3·erfc(6/√2) ≈ 3e-9), so only coarse-to-fine
        // improvement and the plateau level are asserted.
        let (d8, d16, d24) = (defect(8), defect(16), defect(24));
        assert!(d16 < d8, "d8={d8:e} d16={d16:e}");
        assert!(d24 < d8, "d8={d8:e} d24={d24:e}");
        assert!(d24 < 1e-8, "d24={d24:e}");
    }

    #[test]
    fn works_in_f32() {
        let g = build_phase_grid::<f32>(2, 8, 8, 6.0, 4, 4).unwrap();
        assert_eq!(g.x.len(), 64);
        let total: f32 = g.sphere.nodes().iter().map(|&(_, w)| w).sum();
        assert!((total - FOUR_PI as f32).abs() < 1e-5);
    }
}
