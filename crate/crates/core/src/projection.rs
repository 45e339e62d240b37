//! Hydrodynamic projection onto the six-dimensional null space of the
//! linearized collision operator, macroscopic moments `(a±, b, c)`, and the
//! neutral-energy identity check.
//!
//! The null space of `L` acting on species pairs `g = [g₊, g₋]` is spanned by
//! `[√μ, 0]`, `[0, √μ]`, `(v_i/√2)[√μ, √μ]` and `((|v|²−3)/(2√2))[√μ, √μ]`.
//! On the velocity grid this basis is only approximately orthonormal, so the
//! projector is built with the discrete Gram matrix: coefficients solve
//! `G c = Bᵀ W g`, which makes `P` exactly idempotent regardless of quadrature
//! error.

use ndarray::Array2;

use crate::collision::tables::invert_small;
use crate::field::FieldState;
use crate::phase_grid::PhaseGrid;
use crate::scalar::{norm_sq3, Scalar};
use crate::states::sqrt_maxwellian;
use crate::{Error, Result};

/// Macroscopic moments per spatial node.
#[derive(Debug, Clone)]
pub struct MacroMoments<T> {
    pub a_plus: Vec<T>,
    pub a_minus: Vec<T>,
    pub b: Vec<[T; 3]>,
    pub c: Vec<T>,
    /// `c̃ = c + (√2/6)|∇φ|²` — the field-shifted energy moment whose spatial
    /// integral vanishes for neutral-energy initial data.
    pub c_tilde: Vec<T>,
}

/// Precomputed discrete basis and Gram inverse for the hydrodynamic projector.
#[derive(Debug, Clone)]
pub struct Projector<T> {
    n_v_total: usize,
    /// Plus-species component of each of the six basis vectors, sampled on the
    /// velocity grid (the minus component is `0`, `√μ`, or equal to it).
    basis_plus: Vec<Vec<T>>,
    basis_minus: Vec<Vec<T>>,
    /// Inverse of the 6×6 Gram matrix in the discrete pair inner product.
    gram_inv: [[T; 6]; 6],
    dv3: T,
}

impl<T: Scalar> Projector<T> {
    pub fn new(grid: &PhaseGrid<T>) -> Result<Self> {
        let n = grid.v.len();
        let dv3 = grid.v.cell_volume();
        let sq: Vec<T> = grid.v.nodes().iter().map(|&v| sqrt_maxwellian(v)).collect();
        let zero = vec![T::zero(); n];
        let mut basis_plus: Vec<Vec<T>> = Vec::with_capacity(6);
        let mut basis_minus: Vec<Vec<T>> = Vec::with_capacity(6);
        // [√μ, 0] and [0, √μ].
        basis_plus.push(sq.clone());
        basis_minus.push(zero.clone());
        basis_plus.push(zero);
        basis_minus.push(sq.clone());
        // (v_i/√2)[√μ, √μ].
        let inv_sqrt2 = T::one() / T::of(2.0).sqrt();
        for axis in 0..3 {
            let col: Vec<T> = grid
                .v
                .nodes()
                .iter()
                .zip(&sq)
                .map(|(&v, &s)| v[axis] * inv_sqrt2 * s)
                .collect();
            basis_plus.push(col.clone());
            basis_minus.push(col);
        }
        // ((|v|²−3)/(2√2))[√μ, √μ].
        let c6: Vec<T> = grid
            .v
            .nodes()
            .iter()
            .zip(&sq)
            .map(|(&v, &s)| (norm_sq3(v) - T::of(3.0)) / (T::of(2.0) * T::of(2.0).sqrt()) * s)
            .collect();
        basis_plus.push(c6.clone());
        basis_minus.push(c6);

        // Gram matrix in ⟨g, h⟩ = Σ_j (g₊h₊ + g₋h₋) Δv³.
        let mut gram = Array2::<f64>::zeros((6, 6));
        for k in 0..6 {
            for l in 0..6 {
                let mut s = 0.0f64;
                for j in 0..n {
                    s += basis_plus[k][j].widen() * basis_plus[l][j].widen()
                        + basis_minus[k][j].widen() * basis_minus[l][j].widen();
                }
                gram[[k, l]] = s * dv3.widen();
            }
        }
        let inv = invert_small(&gram)?;
        let mut gram_inv = [[T::zero(); 6]; 6];
        for k in 0..6 {
            for l in 0..6 {
                gram_inv[k][l] = T::of(inv[[k, l]]);
            }
        }
        Ok(Self {
            n_v_total: n,
            basis_plus,
            basis_minus,
            gram_inv,
            dv3,
        })
    }

    fn check(&self, f_plus: &[T], f_minus: &[T], context: &'static str) -> Result<usize> {
        if f_plus.len() != f_minus.len() || f_plus.len() % self.n_v_total != 0 {
            return Err(Error::SizeMismatch {
                context,
                expected: self.n_v_total,
                got: f_plus.len(),
            });
        }
        Ok(f_plus.len() / self.n_v_total)
    }

    /// Gram-corrected coefficients of one velocity slice in the basis order
    /// `(a₊, a₋, b₁, b₂, b₃, c)`.
    pub fn coefficients(&self, f_plus: &[T], f_minus: &[T]) -> [T; 6] {
        let mut raw = [T::zero(); 6];
        for k in 0..6 {
            let mut s = T::zero();
            for j in 0..self.n_v_total {
                s += self.basis_plus[k][j] * f_plus[j] + self.basis_minus[k][j] * f_minus[j];
            }
            raw[k] = s * self.dv3;
        }
        let mut out = [T::zero(); 6];
        for k in 0..6 {
            for l in 0..6 {
                out[k] += self.gram_inv[k][l] * raw[l];
            }
        }
        out
    }

    /// Macroscopic moments of a perturbation pair (layout `[x][v]`), with the
    /// field-shifted `c̃` from the node-wise `|∇φ|²`.
    pub fn moments(
        &self,
        f_plus: &[T],
        f_minus: &[T],
        field: &FieldState<T>,
    ) -> Result<MacroMoments<T>> {
        let rows = self.check(f_plus, f_minus, "Projector::moments")?;
        if field.grad_phi.len() != rows {
            return Err(Error::SizeMismatch {
                context: "Projector::moments field",
                expected: rows,
                got: field.grad_phi.len(),
            });
        }
        let n = self.n_v_total;
        let mut m = MacroMoments {
            a_plus: Vec::with_capacity(rows),
            a_minus: Vec::with_capacity(rows),
            b: Vec::with_capacity(rows),
            c: Vec::with_capacity(rows),
            c_tilde: Vec::with_capacity(rows),
        };
        let shift = T::of(2.0).sqrt() / T::of(6.0);
        for r in 0..rows {
            let co = self.coefficients(&f_plus[r * n..(r + 1) * n], &f_minus[r * n..(r + 1) * n]);
            m.a_plus.push(co[0]);
            m.a_minus.push(co[1]);
            m.b.push([co[2], co[3], co[4]]);
            m.c.push(co[5]);
            m.c_tilde.push(co[5] + shift * norm_sq3(field.grad_phi[r]));
        }
        Ok(m)
    }

    /// Splits a perturbation pair into its hydrodynamic part `Pf` and
    /// microscopic part `(I−P)f`; returns `((Pf₊, Pf₋), (qf₊, qf₋))`.
    #[allow(clippy::type_complexity)]
    pub fn project(
        &self,
        f_plus: &[T],
        f_minus: &[T],
    ) -> Result<((Vec<T>, Vec<T>), (Vec<T>, Vec<T>))> {
        let rows = self.check(f_plus, f_minus, "Projector::project")?;
        let n = self.n_v_total;
        let mut pp = vec![T::zero(); f_plus.len()];
        let mut pm = vec![T::zero(); f_plus.len()];
        for r in 0..rows {
            let co = self.coefficients(&f_plus[r * n..(r + 1) * n], &f_minus[r * n..(r + 1) * n]);
            for k in 0..6 {
                if co[k] == T::zero() {
                    continue;
                }
                for j in 0..n {
                    pp[r * n + j] += co[k] * self.basis_plus[k][j];
                    pm[r * n + j] += co[k] * self.basis_minus[k][j];
                }
            }
        }
        let qp: Vec<T> = f_plus.iter().zip(&pp).map(|(&a, &b)| a - b).collect();
        let qm: Vec<T> = f_minus.iter().zip(&pm).map(|(&a, &b)| a - b).collect();
        Ok(((pp, pm), (qp, qm)))
    }
}

/// `|∫(3√2·c(x) + |∇φ(x)|²) dx|` — zero for neutral-energy data.
pub fn neutral_energy_check<T: Scalar>(
    grid: &PhaseGrid<T>,
    moments: &MacroMoments<T>,
    field: &FieldState<T>,
) -> Result<T> {
    if moments.c.len() != grid.x.len() || field.grad_phi.len() != grid.x.len() {
        return Err(Error::SizeMismatch {
            context: "neutral_energy_check",
            expected: grid.x.len(),
            got: moments.c.len(),
        });
    }
    let three_sqrt2 = T::of(3.0) * T::of(2.0).sqrt();
    let mut s = T::zero();
    for (c, g) in moments.c.iter().zip(&field.grad_phi) {
        s += three_sqrt2 * *c + norm_sq3(*g);
    }
    Ok((s * grid.x.cell_volume()).abs())
}
