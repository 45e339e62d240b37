//! Measured quantities the theory constrains: conservation defects, entropy
//! functionals, weighted norms, finite-difference derivative norms, the
//! neutrality gap, free-streaming margins, decay-rate fits, and the CSV time
//! series they are reported in.

use std::io::Write as _;
use std::path::Path;

use crate::characteristics::free_streaming_monitor;
use crate::field::FieldState;
use crate::phase_grid::PhaseGrid;
use crate::scalar::Scalar;
use crate::states::{
    conserved_totals, maxwellian, weight, DistributionPair, WeightKind, WeightSpec,
};
use crate::{Error, Result};

/// One row of the diagnostics time series.
#[derive(Debug, Clone)]
pub struct DiagnosticsRecord<T> {
    pub t: T,
    /// Defect masses `M± = ∫∫(F± − μ)`.
    pub m_plus: T,
    pub m_minus: T,
    /// Total momentum defect.
    pub j: [T; 3],
    /// Total energy defect, kinetic plus `∫|∇φ|²`.
    pub e_tot: T,
    /// Defect entropy `∫∫(F₊lnF₊ + F₋lnF₋ − 2μlnμ)`.
    pub s_defect: T,
    /// Relative entropy (nonnegative).
    pub relative_entropy: T,
    /// `‖h±‖∞` with the primary weight `w_β`.
    pub h_inf_plus: T,
    pub h_inf_minus: T,
    /// `‖h̃‖_{L¹ₓL∞ᵥ}` with the secondary weight `w_{β₁}` (species max inside).
    pub h_tilde_l1_linf: T,
    /// `‖f₊ − f₋‖∞`.
    pub neutral_gap: T,
    /// `‖∂ₓh̃±‖∞` by periodic second-order central differences.
    pub dxh_inf: T,
    /// `‖∂ᵥh̃±‖∞` by interior second-order central differences.
    pub dvh_inf: T,
    /// Free-streaming margins `‖∇φ‖∞/(δ(1+t)⁻²)` and `‖∇²φ‖∞/(δ(1+t)⁻⁵ᐟ²)`.
    pub fs_grad_margin: T,
    pub fs_hess_margin: T,
    /// Picard passes the producing step used (0 for a bare measurement).
    pub picard_iters: usize,
}

impl<T: Scalar> DiagnosticsRecord<T> {
    /// Largest magnitude across all scalar entries (norms and defects alike);
    /// zero exactly at the equilibrium fixed point.
    pub fn max_abs(&self) -> T {
        let mut m = self
            .m_plus
            .abs()
            .max(self.m_minus.abs())
            .max(self.e_tot.abs())
            .max(self.s_defect.abs())
            .max(self.relative_entropy.abs());
        for c in self.j {
            m = m.max(c.abs());
        }
        m.max(self.h_inf_plus)
            .max(self.h_inf_minus)
            .max(self.h_tilde_l1_linf)
            .max(self.neutral_gap)
            .max(self.dxh_inf)
            .max(self.dvh_inf)
            .max(self.fs_grad_margin)
            .max(self.fs_hess_margin)
    }
}

/// Measures every diagnostic of a state given its solved field.
///
/// `delta` is the free-streaming threshold of the monitor margins;
/// `picard_iters` is carried through from the producing step.
pub fn measure<T: Scalar>(
    grid: &PhaseGrid<T>,
    state: &DistributionPair<T>,
    field: &FieldState<T>,
    spec: &WeightSpec<T>,
    delta: T,
    picard_iters: usize,
) -> Result<DiagnosticsRecord<T>> {
    let totals = conserved_totals(grid, state, field)?;
    let n_v = grid.v.len();
    let n_x = grid.x.len();
    let f_p = state.perturbation(grid, true);
    let f_m = state.perturbation(grid, false);
    let t = state.t;
    let wb: Vec<T> = grid
        .v
        .nodes()
        .iter()
        .map(|&v| weight(spec, WeightKind::Beta, t, v))
        .collect();
    let w1: Vec<T> = grid
        .v
        .nodes()
        .iter()
        .map(|&v| weight(spec, WeightKind::Beta1, t, v))
        .collect();

    let mut h_inf_plus = T::zero();
    let mut h_inf_minus = T::zero();
    let mut neutral_gap = T::zero();
    let mut l1linf = T::zero();
    for ix in 0..n_x {
        let mut sup = T::zero();
        for jv in 0..n_v {
            let k = ix * n_v + jv;
            h_inf_plus = h_inf_plus.max((wb[jv] * f_p[k]).abs());
            h_inf_minus = h_inf_minus.max((wb[jv] * f_m[k]).abs());
            neutral_gap = neutral_gap.max((f_p[k] - f_m[k]).abs());
            sup = sup.max((w1[jv] * f_p[k]).abs()).max((w1[jv] * f_m[k]).abs());
        }
        l1linf += sup;
    }
    l1linf *= grid.x.cell_volume();

    // h̃ node fields for the derivative norms.
    let mut ht_p = vec![T::zero(); n_x * n_v];
    let mut ht_m = vec![T::zero(); n_x * n_v];
    for ix in 0..n_x {
        for jv in 0..n_v {
            let k = ix * n_v + jv;
            ht_p[k] = w1[jv] * f_p[k];
            ht_m[k] = w1[jv] * f_m[k];
        }
    }
    let mut dxh_inf = T::zero();
    let d = grid.x.dim_x;
    let nx = grid.x.n_x;
    let two_dx = T::of(2.0) * grid.x.dx;
    for ix in 0..n_x {
        let mi = grid.x.multi_index(ix);
        for axis in 0..d {
            let mut up = mi;
            let mut dn = mi;
            up[axis] = (mi[axis] + 1) % nx;
            dn[axis] = (mi[axis] + nx - 1) % nx;
            let iu = up[..d].iter().fold(0usize, |f, &m| f * nx + m);
            let id = dn[..d].iter().fold(0usize, |f, &m| f * nx + m);
            for jv in 0..n_v {
                dxh_inf = dxh_inf
                    .max(((ht_p[iu * n_v + jv] - ht_p[id * n_v + jv]) / two_dx).abs())
                    .max(((ht_m[iu * n_v + jv] - ht_m[id * n_v + jv]) / two_dx).abs());
            }
        }
    }
    let mut dvh_inf = T::zero();
    let nvax = grid.v.n_v;
    let two_dv = T::of(2.0) * grid.v.dv;
    for ix in 0..n_x {
        for jv in 0..n_v {
            let mi = grid.v.multi_index(jv);
            for axis in 0..3 {
                if mi[axis] == 0 || mi[axis] == nvax - 1 {
                    continue;
                }
                let mut up = mi;
                let mut dn = mi;
                up[axis] += 1;
                dn[axis] -= 1;
                let ju = grid.v.index(up);
                let jd = grid.v.index(dn);
                dvh_inf = dvh_inf
                    .max(((ht_p[ix * n_v + ju] - ht_p[ix * n_v + jd]) / two_dv).abs())
                    .max(((ht_m[ix * n_v + ju] - ht_m[ix * n_v + jd]) / two_dv).abs());
            }
        }
    }

    let fs = free_streaming_monitor(field, t, delta);
    let rec = DiagnosticsRecord {
        t,
        m_plus: totals.m_plus,
        m_minus: totals.m_minus,
        j: totals.j,
        e_tot: totals.e_tot,
        s_defect: totals.s_defect,
        relative_entropy: totals.relative_entropy,
        h_inf_plus,
        h_inf_minus,
        h_tilde_l1_linf: l1linf,
        neutral_gap,
        dxh_inf,
        dvh_inf,
        fs_grad_margin: fs.grad_margin,
        fs_hess_margin: fs.hess_margin,
        picard_iters,
    };
    if !rec.max_abs().is_finite() || !rec.t.is_finite() {
        return Err(Error::NonFinite("diagnostics record"));
    }
    if rec.relative_entropy < -T::of(1e-12) {
        return Err(Error::Numerics(format!(
            "relative entropy lost positivity: {:e}",
            rec.relative_entropy.widen()
        )));
    }
    Ok(rec)
}

/// Left side of the quadratic/linear entropy split: the `|F−μ|²/(4μ)` part
/// where the deviation is below `μ`, the `|F−μ|/4` part where it is above,
/// plus half the field energy. Bounded by the relative entropy of the initial
/// state along entropy-dissipating evolutions.
pub fn entropy_split<T: Scalar>(
    grid: &PhaseGrid<T>,
    state: &DistributionPair<T>,
    field: &FieldState<T>,
) -> T {
    let n_v = grid.v.len();
    let n_x = grid.x.len();
    let quarter = T::of(0.25);
    let mut acc = T::zero();
    for jv in 0..n_v {
        let mu = maxwellian(grid.v.node(jv));
        for ix in 0..n_x {
            let k = ix * n_v + jv;
            for dev in [state.f_plus[k] - mu, state.f_minus[k] - mu] {
                let a = dev.abs();
                acc += if a <= mu {
                    quarter * a * a / mu
                } else {
                    quarter * a
                };
            }
        }
    }
    acc * grid.v.cell_volume() * grid.x.cell_volume() + T::of(0.5) * field.energy()
}

/// Least-squares exponential decay fit of a positive series.
#[derive(Debug, Clone, Copy)]
pub struct DecayFit<T> {
    /// Decay rate `λ̂`: positive when the series decreases.
    pub rate: T,
    /// Coefficient of determination of the `ln(value)` regression.
    pub r_squared: T,
    /// Fitted amplitude `C` in `value ≈ C·e^{−λ̂t}`.
    pub amplitude: T,
    /// Points used after the burn-in cut.
    pub n_used: usize,
}

/// Fits `value ≈ C·e^{−λ̂t}` over the samples with `t ≥ t_burn` by linear
/// regression of `ln(value)` on `t`.
pub fn decay_fit<T: Scalar>(series: &[(T, T)], t_burn: T) -> Result<DecayFit<T>> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(t, _)| *t >= t_burn)
        .map(|&(t, v)| (t.widen(), v.widen()))
        .collect();
    if pts.len() < 5 {
        return Err(Error::InvalidConfig(format!(
            "decay fit needs at least 5 points past the burn-in, got {}",
            pts.len()
        )));
    }
    if let Some(&(t, v)) = pts.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::Numerics(format!(
            "decay fit requires positive values: {v:e} at t = {t}"
        )));
    }
    let n = pts.len() as f64;
    let (mut st, mut sy, mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(t, v) in &pts {
        let y = v.ln();
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
        syy += y * y;
    }
    let det = n * stt - st * st;
    if det <= 0.0 {
        return Err(Error::Numerics("degenerate time axis in decay fit".into()));
    }
    let slope = (n * sty - st * sy) / det;
    let intercept = (sy - slope * st) / n;
    let ss_tot = syy - sy * sy / n;
    let mut ss_res = 0.0;
    for &(t, v) in &pts {
        let r = v.ln() - (intercept + slope * t);
        ss_res += r * r;
    }
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else if ss_res <= 1e-28 {
        1.0
    } else {
        0.0
    };
    Ok(DecayFit {
        rate: T::of(-slope),
        r_squared: T::of(r_squared),
        amplitude: T::of(intercept.exp()),
        n_used: pts.len(),
    })
}

/// Verdict of the defect-entropy monotonicity monitor.
#[derive(Debug, Clone, Copy)]
pub struct EntropyVerdict<T> {
    pub pass: bool,
    /// Worst value of `S_defect(t) − S_defect(0)` (positive means increase).
    pub worst_increase: T,
    /// Time of the worst increase.
    pub worst_t: T,
    /// Tolerance the verdict used.
    pub tol: T,
}

/// Default entropy tolerance: relative to the initial defect entropy with an
/// absolute floor.
pub fn entropy_tolerance<T: Scalar>(s0: T) -> T {
    T::of(1e-6) * s0.abs() + T::of(1e-10)
}

/// Checks `S_defect(t) ≤ S_defect(0) + tol` across a run.
pub fn entropy_monitor<T: Scalar>(records: &[DiagnosticsRecord<T>], tol: T) -> Result<EntropyVerdict<T>> {
    if records.len() < 2 {
        return Err(Error::InvalidConfig(
            "entropy monitor needs at least 2 records".into(),
        ));
    }
    let s0 = records[0].s_defect;
    let mut worst = T::neg_infinity();
    let mut worst_t = records[0].t;
    for r in records {
        let inc = r.s_defect - s0;
        if inc > worst {
            worst = inc;
            worst_t = r.t;
        }
    }
    Ok(EntropyVerdict {
        pass: worst <= tol,
        worst_increase: worst,
        worst_t,
        tol,
    })
}

/// Fixed CSV column order of the time series.
pub const CSV_HEADER: &str = "t,m_plus,m_minus,j1,j2,j3,e_tot,s_defect,relent,hinf_p,hinf_m,l1linf,neutral_gap,dxh,dvh,fs1,fs2,picard_iters";

/// Formats one record as a CSV row (shortest round-trip float formatting, so
/// identical runs produce identical bytes).
pub fn csv_row<T: Scalar>(r: &DiagnosticsRecord<T>) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
        r.t.widen(),
        r.m_plus.widen(),
        r.m_minus.widen(),
        r.j[0].widen(),
        r.j[1].widen(),
        r.j[2].widen(),
        r.e_tot.widen(),
        r.s_defect.widen(),
        r.relative_entropy.widen(),
        r.h_inf_plus.widen(),
        r.h_inf_minus.widen(),
        r.h_tilde_l1_linf.widen(),
        r.neutral_gap.widen(),
        r.dxh_inf.widen(),
        r.dvh_inf.widen(),
        r.fs_grad_margin.widen(),
        r.fs_hess_margin.widen(),
        r.picard_iters
    )
}

/// Writes the whole time series as CSV with the fixed header.
pub fn write_csv<T: Scalar>(path: &Path, records: &[DiagnosticsRecord<T>]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(out, "{}", csv_row(r))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::solve_poisson;
    use crate::phase_grid::build_phase_grid;
    use crate::states::{build_initial_data, InitialData};
    use approx::assert_relative_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn wspec() -> WeightSpec<f64> {
        WeightSpec::new(9.0, 4.0, 1.0 / 16.0).unwrap()
    }

    #[test]
    fn equilibrium_measures_to_zero() {
        let g = build_phase_grid::<f64>(1, 8, 8, 6.0, 2, 4).unwrap();
        let eq = DistributionPair::equilibrium(&g);
        let field = solve_poisson(&g.x, &eq.charge_density(&g)).unwrap();
        let rec = measure(&g, &eq, &field, &wspec(), 0.01, 0).unwrap();
        assert_eq!(rec.max_abs(), 0.0);
        assert_eq!(rec.picard_iters, 0);
    }

    #[test]
    fn relative_entropy_matches_density_modulation_oracle() {
        // F± = ρ₀μ with ρ₀ = 1 + a·cos(2πx), φ = 0: the velocity integral
        // factors out of the relative entropy, leaving per species
        // ∫(ρ₀lnρ₀ − ρ₀ + 1)dx, evaluated independently by dense quadrature.
        let g = build_phase_grid::<f64>(1, 32, 16, 6.0, 2, 4).unwrap();
        let n_v = g.v.len();
        let n_x = g.x.len();
        let a = 0.3;
        let mut fp = vec![0.0; n_x * n_v];
        for ix in 0..n_x {
            let rho = 1.0 + a * (2.0 * std::f64::consts::PI * g.x.node(ix)[0]).cos();
            for jv in 0..n_v {
                fp[ix * n_v + jv] = rho * maxwellian(g.v.node(jv));
            }
        }
        let state = DistributionPair::new(fp.clone(), fp, 0.0, &g).unwrap();
        let field = solve_poisson(&g.x, &state.charge_density(&g)).unwrap();
        assert!(field.grad_inf < 1e-14);
        let rec = measure(&g, &state, &field, &wspec(), 0.01, 0).unwrap();

        // Dense midpoint oracle for ∫₀¹(ρ₀lnρ₀ − ρ₀ + 1)dx.
        let m = 200_000usize;
        let h = 1.0 / m as f64;
        let mut oracle = 0.0;
        for i in 0..m {
            let x = (i as f64 + 0.5) * h;
            let rho = 1.0 + a * (2.0 * std::f64::consts::PI * x).cos();
            oracle += rho * rho.ln() - rho + 1.0;
        }
        oracle *= h * 2.0; // two species
        assert_relative_eq!(rec.relative_entropy, oracle, epsilon = 1e-6);
    }

    #[test]
    fn quadratic_linear_split_bounded_by_relative_entropy() {
        let g = build_phase_grid::<f64>(1, 16, 10, 6.0, 2, 4).unwrap();
        let (state, _) = build_initial_data(
            &InitialData::DensityModulation {
                amplitude: 0.3,
                neutrality_gap: 1e-3,
            },
            &g,
            &wspec(),
        )
        .unwrap();
        let field = solve_poisson(&g.x, &state.charge_density(&g)).unwrap();
        let rec = measure(&g, &state, &field, &wspec(), 0.01, 0).unwrap();
        let split = entropy_split(&g, &state, &field);
        assert!(split > 0.0);
        assert!(
            split <= rec.relative_entropy,
            "split {split:e} vs relative entropy {:e}",
            rec.relative_entropy
        );
    }

    #[test]
    fn decay_fit_recovers_exact_exponential() {
        let series: Vec<(f64, f64)> = (0..40)
            .map(|i| {
                let t = 0.1 * i as f64;
                (t, 3.0 * (-0.7 * t).exp())
            })
            .collect();
        let fit = decay_fit(&series, 0.5).unwrap();
        assert_relative_eq!(fit.rate, 0.7, epsilon = 1e-10);
        assert_relative_eq!(fit.amplitude, 3.0, max_relative = 1e-10);
        assert!(fit.r_squared > 1.0 - 1e-12);

        let flat: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 2.5)).collect();
        let fit = decay_fit(&flat, 0.0).unwrap();
        assert!(fit.rate.abs() < 1e-14);
    }

    #[test]
    fn decay_fit_tolerates_multiplicative_noise() {
        let mut rng = StdRng::seed_from_u64(7);
        let series: Vec<(f64, f64)> = (0..200)
            .map(|i| {
                let t = 0.05 * i as f64;
                let noise = 1.0 + 0.01 * (2.0 * rng.gen::<f64>() - 1.0);
                (t, 5.0 * (-1.3 * t).exp() * noise)
            })
            .collect();
        let fit = decay_fit(&series, 0.0).unwrap();
        assert_relative_eq!(fit.rate, 1.3, max_relative = 0.05);
        assert!(fit.r_squared > 0.9);
    }

    #[test]
    fn decay_fit_rejects_bad_input() {
        let short: Vec<(f64, f64)> = (0..4).map(|i| (i as f64, 1.0)).collect();
        assert!(decay_fit(&short, 0.0).is_err());
        let neg: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 1.0 - 0.3 * i as f64)).collect();
        assert!(decay_fit(&neg, 0.0).is_err());
    }

    #[test]
    fn entropy_monitor_flags_artificial_increase() {
        let g = build_phase_grid::<f64>(1, 8, 8, 6.0, 2, 4).unwrap();
        let eq = DistributionPair::equilibrium(&g);
        let field = solve_poisson(&g.x, &eq.charge_density(&g)).unwrap();
        let mut recs = Vec::new();
        for k in 0..3 {
            let mut r = measure(&g, &eq, &field, &wspec(), 0.01, 0).unwrap();
            r.t = 0.01 * k as f64;
            recs.push(r);
        }
        let v = entropy_monitor(&recs, entropy_tolerance(recs[0].s_defect)).unwrap();
        assert!(v.pass);
        recs[2].s_defect = 1e-3;
        let v = entropy_monitor(&recs, entropy_tolerance(recs[0].s_defect)).unwrap();
        assert!(!v.pass);
        assert_relative_eq!(v.worst_increase, 1e-3, max_relative = 1e-12);
        assert_eq!(v.worst_t, 0.02);
    }

    #[test]
    fn csv_rows_are_deterministic_and_ordered() {
        let g = build_phase_grid::<f64>(1, 8, 8, 6.0, 2, 4).unwrap();
        let (state, _) = build_initial_data(
            &InitialData::DensityModulation {
                amplitude: 0.2,
                neutrality_gap: 1e-3,
            },
            &g,
            &wspec(),
        )
        .unwrap();
        let field = solve_poisson(&g.x, &state.charge_density(&g)).unwrap();
        let r1 = measure(&g, &state, &field, &wspec(), 0.01, 3).unwrap();
        let r2 = measure(&g, &state, &field, &wspec(), 0.01, 3).unwrap();
        assert_eq!(csv_row(&r1), csv_row(&r2));
        assert_eq!(CSV_HEADER.split(',').count(), csv_row(&r1).split(',').count());
        assert!(csv_row(&r1).ends_with(",3"));

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("series.csv");
        write_csv(&path, &[r1.clone(), r2]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        assert_eq!(lines.count(), 2);
    }
}
