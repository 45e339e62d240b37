//! Reference Maxwellian, time-velocity weights, the three state representations
//! `F± ↔ f± ↔ h±`, conserved totals, initial-data builders, and snapshot
//! persistence.
//!
//! `F±` are the two species' number densities. The perturbation view is
//! `f± = (F± − μ)/√μ` and the weighted views are `h± = w_β f±`,
//! `h̃± = w_{β₁} f±` with the time-velocity weight
//! `w_β(t, v) = (1 + |v|²)^{β/2} · exp(σ₀|v|²/(1+t))`.

use std::io::{Read, Write};
use std::path::Path;

use crate::field::{solve_poisson, FieldState};
use crate::phase_grid::PhaseGrid;
use crate::scalar::{norm_sq3, Scalar};
use crate::{Error, Result};

/// Negativity tolerance: entries of `F` below `-TOL_POS` are hard errors, tiny
/// negatives above it are flagged as discretization noise.
pub const TOL_POS: f64 = 1e-12;

/// The normalized global Maxwellian `μ(v) = (2π)^{-3/2} exp(-|v|²/2)`.
#[inline]
pub fn maxwellian<T: Scalar>(v: [T; 3]) -> T {
    T::of((2.0 * std::f64::consts::PI).powf(-1.5)) * (-T::of(0.5) * norm_sq3(v)).exp()
}

/// `√μ(v)`.
#[inline]
pub fn sqrt_maxwellian<T: Scalar>(v: [T; 3]) -> T {
    T::of((2.0 * std::f64::consts::PI).powf(-0.75)) * (-T::of(0.25) * norm_sq3(v)).exp()
}

/// Exponents and decay rate of the time-velocity weight family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightSpec<T> {
    /// Primary exponent `β` (the `h` view).
    pub beta: T,
    /// Secondary exponent `β₁` (the `h̃` view), `4 ≤ β₁ < β − 4`.
    pub beta1: T,
    /// Gaussian rate `σ₀ ∈ (0, 1/16]`.
    pub sigma0: T,
}

impl<T: Scalar> WeightSpec<T> {
    pub fn new(beta: T, beta1: T, sigma0: T) -> Result<Self> {
        let spec = Self {
            beta,
            beta1,
            sigma0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta1 >= T::of(4.0)) {
            return Err(Error::InvalidConfig(format!(
                "weight exponent requires β₁ ≥ 4, got β₁ = {}",
                self.beta1
            )));
        }
        if !(self.beta1 < self.beta - T::of(4.0)) {
            return Err(Error::InvalidConfig(format!(
                "weight exponent requires β₁ < β − 4, got β = {}, β₁ = {}",
                self.beta, self.beta1
            )));
        }
        if !(self.sigma0 > T::zero() && self.sigma0 <= T::of(1.0 / 16.0)) {
            return Err(Error::InvalidConfig(format!(
                "σ₀ ∈ (0, 1/16] required, got {}",
                self.sigma0
            )));
        }
        Ok(())
    }
}

/// Which exponent of the weight family to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightKind {
    /// The primary exponent `β`.
    Beta,
    /// The secondary exponent `β₁`.
    Beta1,
}

/// The time-velocity weight `w(t, v) = (1+|v|²)^{exp/2} · exp(σ₀|v|²/(1+t))`.
#[inline]
pub fn weight<T: Scalar>(spec: &WeightSpec<T>, kind: WeightKind, t: T, v: [T; 3]) -> T {
    let exp = match kind {
        WeightKind::Beta => spec.beta,
        WeightKind::Beta1 => spec.beta1,
    };
    let v2 = norm_sq3(v);
    (T::one() + v2).powf(exp * T::of(0.5)) * (spec.sigma0 * v2 / (T::one() + t)).exp()
}

/// Both species' number densities on the phase grid.
///
/// Storage layout is `[x][v]` flattened (spatial index outer, velocity inner),
/// matching the snapshot format. The perturbation and weighted views are derived
/// on demand and never stored redundantly.
#[derive(Debug, Clone)]
pub struct DistributionPair<T> {
    /// `F₊`, length `n_x_total · n_v_total`.
    pub f_plus: Vec<T>,
    /// `F₋`, same layout.
    pub f_minus: Vec<T>,
    /// Time stamp.
    pub t: T,
    n_x: usize,
    n_v: usize,
}

impl<T: Scalar> DistributionPair<T> {
    pub fn new(f_plus: Vec<T>, f_minus: Vec<T>, t: T, grid: &PhaseGrid<T>) -> Result<Self> {
        let expect = grid.phase_len();
        for (name, f) in [("F+", &f_plus), ("F-", &f_minus)] {
            if f.len() != expect {
                return Err(Error::SizeMismatch {
                    context: "DistributionPair::new",
                    expected: expect,
                    got: f.len(),
                });
            }
            if f.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(if name == "F+" {
                    "F+ entries"
                } else {
                    "F- entries"
                }));
            }
        }
        Ok(Self {
            f_plus,
            f_minus,
            t,
            n_x: grid.x.len(),
            n_v: grid.v.len(),
        })
    }

    /// Equilibrium state `F± = μ`.
    pub fn equilibrium(grid: &PhaseGrid<T>) -> Self {
        let mu: Vec<T> = grid.v.nodes().iter().map(|&v| maxwellian(v)).collect();
        let mut f = Vec::with_capacity(grid.phase_len());
        for _ in 0..grid.x.len() {
            f.extend_from_slice(&mu);
        }
        Self {
            f_plus: f.clone(),
            f_minus: f,
            t: T::zero(),
            n_x: grid.x.len(),
            n_v: grid.v.len(),
        }
    }

    pub fn n_x_total(&self) -> usize {
        self.n_x
    }

    pub fn n_v_total(&self) -> usize {
        self.n_v
    }

    /// Flat index of spatial node `ix`, velocity node `jv`.
    #[inline]
    pub fn idx(&self, ix: usize, jv: usize) -> usize {
        ix * self.n_v + jv
    }

    /// Perturbation view `f± = (F± − μ)/√μ` for one species.
    pub fn perturbation(&self, grid: &PhaseGrid<T>, plus: bool) -> Vec<T> {
        let src = if plus { &self.f_plus } else { &self.f_minus };
        let mu: Vec<T> = grid.v.nodes().iter().map(|&v| maxwellian(v)).collect();
        let sq: Vec<T> = grid.v.nodes().iter().map(|&v| sqrt_maxwellian(v)).collect();
        let mut out = vec![T::zero(); src.len()];
        for ix in 0..self.n_x {
            for jv in 0..self.n_v {
                let k = self.idx(ix, jv);
                out[k] = (src[k] - mu[jv]) / sq[jv];
            }
        }
        out
    }

    /// Rebuilds `F±` from perturbation arrays at time `t`.
    pub fn from_perturbation(
        f_pert_plus: &[T],
        f_pert_minus: &[T],
        t: T,
        grid: &PhaseGrid<T>,
    ) -> Result<Self> {
        let mu: Vec<T> = grid.v.nodes().iter().map(|&v| maxwellian(v)).collect();
        let sq: Vec<T> = grid.v.nodes().iter().map(|&v| sqrt_maxwellian(v)).collect();
        let n_v = grid.v.len();
        let build = |p: &[T]| -> Vec<T> {
            p.iter()
                .enumerate()
                .map(|(k, &f)| mu[k % n_v] + sq[k % n_v] * f)
                .collect()
        };
        Self::new(build(f_pert_plus), build(f_pert_minus), t, grid)
    }

    /// Weighted view `h± = w · f±` at the pair's time stamp.
    pub fn weighted(&self, grid: &PhaseGrid<T>, spec: &WeightSpec<T>, kind: WeightKind, plus: bool) -> Vec<T> {
        let mut out = self.perturbation(grid, plus);
        let w: Vec<T> = grid
            .v
            .nodes()
            .iter()
            .map(|&v| weight(spec, kind, self.t, v))
            .collect();
        for ix in 0..self.n_x {
            for jv in 0..self.n_v {
                out[ix * self.n_v + jv] *= w[jv];
            }
        }
        out
    }

    /// Minimum entry over both species.
    pub fn min_value(&self) -> T {
        self.f_plus
            .iter()
            .chain(self.f_minus.iter())
            .fold(T::infinity(), |m, &x| m.min(x))
    }

    /// Charge density `ρ(x) = ∫√μ (f₊ − f₋) dv = ∫(F₊ − F₋) dv`.
    pub fn charge_density(&self, grid: &PhaseGrid<T>) -> Vec<T> {
        let w = grid.v.cell_volume();
        (0..self.n_x)
            .map(|ix| {
                let base = ix * self.n_v;
                let mut acc = T::zero();
                for jv in 0..self.n_v {
                    acc += self.f_plus[base + jv] - self.f_minus[base + jv];
                }
                acc * w
            })
            .collect()
    }
}

/// Conserved totals of a state: defect mass, momentum, total energy (including
/// field energy), defect entropy, and relative entropy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConservedTotals<T> {
    pub m_plus: T,
    pub m_minus: T,
    pub j: [T; 3],
    pub e_tot: T,
    pub s_defect: T,
    pub relative_entropy: T,
}

/// Computes all conserved totals of a state given its solved field.
///
/// The entropy integrand uses the continuous extension `F ln F = 0` at `F = 0`;
/// negative `F` (beyond roundoff) is a hard error.
pub fn conserved_totals<T: Scalar>(
    grid: &PhaseGrid<T>,
    state: &DistributionPair<T>,
    field: &FieldState<T>,
) -> Result<ConservedTotals<T>> {
    let wv = grid.v.cell_volume();
    let wx = grid.x.cell_volume();
    let n_v = grid.v.len();
    let mu: Vec<T> = grid.v.nodes().iter().map(|&v| maxwellian(v)).collect();
    let xlnx = |f: T| -> Result<T> {
        if f > T::zero() {
            Ok(f * f.ln())
        } else if f >= T::of(-TOL_POS) {
            Ok(T::zero())
        } else {
            Err(Error::Numerics(format!(
                "negative density {:e} in entropy integrand",
                f.widen()
            )))
        }
    };

    let mut m_plus = T::zero();
    let mut m_minus = T::zero();
    let mut j = [T::zero(); 3];
    let mut kinetic = T::zero();
    let mut s = T::zero();
    let mut lin = T::zero(); // ∫(1 + ln μ)(F₊ + F₋ − 2μ)
    for ix in 0..state.n_x_total() {
        let base = ix * n_v;
        for jv in 0..n_v {
            let v = grid.v.node(jv);
            let fp = state.f_plus[base + jv];
            let fm = state.f_minus[base + jv];
            let dp = fp - mu[jv];
            let dm = fm - mu[jv];
            m_plus += dp;
            m_minus += dm;
            let dsum = dp + dm;
            for a in 0..3 {
                j[a] += v[a] * dsum;
            }
            let v2 = norm_sq3(v);
            kinetic += v2 * dsum;
            s += xlnx(fp)? + xlnx(fm)? - T::of(2.0) * mu[jv] * mu[jv].ln();
            lin += (T::one() + mu[jv].ln()) * dsum;
        }
    }
    let scale = wv * wx;
    let field_energy = field.energy();
    let e_tot = kinetic * scale + field_energy;
    let s_defect = s * scale;
    let relent = s_defect - lin * scale + T::of(0.5) * field_energy;
    Ok(ConservedTotals {
        m_plus: m_plus * scale,
        m_minus: m_minus * scale,
        j: [j[0] * scale, j[1] * scale, j[2] * scale],
        e_tot,
        s_defect,
        relative_entropy: relent,
    })
}

/// Families of initial data.
#[derive(Debug, Clone)]
pub enum InitialData<T> {
    /// `F± = μ`.
    Equilibrium,
    /// `F± = ρ₀(x)μ ± (ε₀/2)·cos(2πx₁)·μ` with `ρ₀ = 1 + a·cos(2πx₁)`:
    /// large-amplitude density modulation with a zero-mean charge imbalance of
    /// sup-size `ε₀` in the `f`-gap.
    DensityModulation { amplitude: T, neutrality_gap: T },
    /// Caller-supplied densities (normalized like the built-in families).
    Custom { f_plus: Vec<T>, f_minus: Vec<T> },
}

/// What the builder achieved: defects after enforcement and the smallness
/// quantities the theory's hypotheses constrain.
#[derive(Debug, Clone)]
pub struct InitialDataReport<T> {
    pub totals: ConservedTotals<T>,
    /// `‖h̃₀‖_{L¹ₓ L∞_v}`.
    pub h_tilde_l1_linf: T,
    /// `‖f₊,₀ − f₋,₀‖∞`.
    pub neutrality_gap: T,
    /// `‖h₀‖∞`.
    pub h_inf: T,
}

/// Builds initial data and enforces `(M±,0, J₀, E₀) = (0, 0, 0)`.
///
/// Enforcement subtracts Maxwellian-weighted moments: `μ` multiples to zero the
/// species masses, `v_i μ` multiples to zero the momentum, and a `(|v|² − 3)μ`
/// multiple (equal for both species, so the field is untouched) to cancel the
/// field energy from the kinetic part. Two sweeps push the defects to roundoff.
/// Drives the discrete defect mass (per species), total momentum, and total
/// energy (kinetic plus field) of a density pair to zero by subtracting
/// x-uniform Maxwellian-moment corrections.
///
/// The energy correction slightly perturbs the masses (the discrete
/// `∫(|v|²−3)μ` is not exactly zero) and re-solves Poisson, so a couple of
/// sweeps are iterated; two reach roundoff for near-equilibrium states.
pub fn enforce_zero_defects<T: Scalar>(
    grid: &PhaseGrid<T>,
    fp: &mut [T],
    fm: &mut [T],
    sweeps: usize,
) -> Result<()> {
    let n_v = grid.v.len();
    let n_x = grid.x.len();
    if fp.len() != n_x * n_v || fm.len() != n_x * n_v {
        return Err(Error::SizeMismatch {
            context: "enforce_zero_defects",
            expected: n_x * n_v,
            got: fp.len(),
        });
    }
    let mu: Vec<T> = grid.v.nodes().iter().map(|&v| maxwellian(v)).collect();

    // Discrete moments of the Maxwellian used by the normalization.
    let wv = grid.v.cell_volume();
    let mu_mass: T = mu.iter().copied().sum::<T>() * wv;
    let mut sig = [T::zero(); 3]; // ∫ v_a² μ dv
    let mut q = T::zero(); // ∫ |v|²(|v|²−3) μ dv
    for (jv, &m) in mu.iter().enumerate() {
        let v = grid.v.node(jv);
        for a in 0..3 {
            sig[a] += v[a] * v[a] * m;
        }
        let v2 = norm_sq3(v);
        q += v2 * (v2 - T::of(3.0)) * m;
    }
    for s in &mut sig {
        *s *= wv;
    }
    q *= wv;

    let wx = grid.x.cell_volume();
    let scale = wv * wx;
    for _ in 0..sweeps {
        // Zero the species defect masses.
        let mut mp = T::zero();
        let mut mm = T::zero();
        for ix in 0..n_x {
            for jv in 0..n_v {
                mp += fp[ix * n_v + jv] - mu[jv];
                mm += fm[ix * n_v + jv] - mu[jv];
            }
        }
        mp *= scale;
        mm *= scale;
        for ix in 0..n_x {
            for jv in 0..n_v {
                fp[ix * n_v + jv] -= mp * mu[jv] / mu_mass;
                fm[ix * n_v + jv] -= mm * mu[jv] / mu_mass;
            }
        }
        // Zero the total momentum.
        let mut j = [T::zero(); 3];
        for ix in 0..n_x {
            for jv in 0..n_v {
                let v = grid.v.node(jv);
                let dsum = fp[ix * n_v + jv] + fm[ix * n_v + jv] - T::of(2.0) * mu[jv];
                for a in 0..3 {
                    j[a] += v[a] * dsum;
                }
            }
        }
        for a in 0..3 {
            j[a] *= scale;
        }
        for ix in 0..n_x {
            for jv in 0..n_v {
                let v = grid.v.node(jv);
                let mut corr = T::zero();
                for a in 0..3 {
                    corr += j[a] * v[a] / (T::of(2.0) * sig[a]);
                }
                fp[ix * n_v + jv] -= corr * mu[jv];
                fm[ix * n_v + jv] -= corr * mu[jv];
            }
        }
        // Zero the total energy, including the field part.
        let pair = DistributionPair {
            f_plus: fp.to_vec(),
            f_minus: fm.to_vec(),
            t: T::zero(),
            n_x,
            n_v,
        };
        let field = solve_poisson(&grid.x, &pair.charge_density(grid))?;
        let mut kinetic = T::zero();
        for ix in 0..n_x {
            for jv in 0..n_v {
                let v2 = norm_sq3(grid.v.node(jv));
                kinetic += v2 * (fp[ix * n_v + jv] + fm[ix * n_v + jv] - T::of(2.0) * mu[jv]);
            }
        }
        let e0 = kinetic * scale + field.energy();
        let kappa = e0 / (T::of(2.0) * q);
        for ix in 0..n_x {
            for jv in 0..n_v {
                let v2 = norm_sq3(grid.v.node(jv));
                let corr = kappa * (v2 - T::of(3.0)) * mu[jv];
                fp[ix * n_v + jv] -= corr;
                fm[ix * n_v + jv] -= corr;
            }
        }
    }
    Ok(())
}

pub fn build_initial_data<T: Scalar>(
    kind: &InitialData<T>,
    grid: &PhaseGrid<T>,
    spec: &WeightSpec<T>,
) -> Result<(DistributionPair<T>, InitialDataReport<T>)> {
    let n_v = grid.v.len();
    let n_x = grid.x.len();
    let mu: Vec<T> = grid.v.nodes().iter().map(|&v| maxwellian(v)).collect();

    let (mut fp, mut fm) = match kind {
        InitialData::Equilibrium => {
            let eq = DistributionPair::equilibrium(grid);
            (eq.f_plus, eq.f_minus)
        }
        InitialData::DensityModulation {
            amplitude,
            neutrality_gap,
        } => {
            let a = *amplitude;
            let eps = *neutrality_gap;
            let mut fp = Vec::with_capacity(n_x * n_v);
            let mut fm = Vec::with_capacity(n_x * n_v);
            for ix in 0..n_x {
                let x = grid.x.node(ix);
                let c = (T::of(2.0 * std::f64::consts::PI) * x[0]).cos();
                let rho0 = T::one() + a * c;
                if !(rho0 > T::zero()) {
                    return Err(Error::InvalidConfig(format!(
                        "density modulation amplitude {} makes ρ₀ nonpositive",
                        a
                    )));
                }
                let gap = T::of(0.5) * eps * c;
                for jv in 0..n_v {
                    fp.push((rho0 + gap) * mu[jv]);
                    fm.push((rho0 - gap) * mu[jv]);
                }
            }
            (fp, fm)
        }
        InitialData::Custom { f_plus, f_minus } => (f_plus.clone(), f_minus.clone()),
    };

    enforce_zero_defects(grid, &mut fp, &mut fm, 2)?;
    let wx = grid.x.cell_volume();

    let min = fp
        .iter()
        .chain(fm.iter())
        .fold(T::infinity(), |m, &x| m.min(x));
    if min < T::of(-TOL_POS) {
        return Err(Error::InvalidConfig(format!(
            "requested data violates F ≥ 0 after normalization (min {:e})",
            min.widen()
        )));
    }

    let pair = DistributionPair::new(fp, fm, T::zero(), grid)?;
    let field = solve_poisson(&grid.x, &pair.charge_density(grid))?;
    let totals = conserved_totals(grid, &pair, &field)?;

    let f_p = pair.perturbation(grid, true);
    let f_m = pair.perturbation(grid, false);
    let w1: Vec<T> = grid
        .v
        .nodes()
        .iter()
        .map(|&v| weight(spec, WeightKind::Beta1, T::zero(), v))
        .collect();
    let wb: Vec<T> = grid
        .v
        .nodes()
        .iter()
        .map(|&v| weight(spec, WeightKind::Beta, T::zero(), v))
        .collect();
    let mut l1linf = T::zero();
    let mut h_inf = T::zero();
    let mut gap = T::zero();
    for ix in 0..n_x {
        let mut sup = T::zero();
        for jv in 0..n_v {
            let k = ix * n_v + jv;
            let tp = (w1[jv] * f_p[k]).abs().max((w1[jv] * f_m[k]).abs());
            sup = sup.max(tp);
            h_inf = h_inf
                .max((wb[jv] * f_p[k]).abs())
                .max((wb[jv] * f_m[k]).abs());
            gap = gap.max((f_p[k] - f_m[k]).abs());
        }
        l1linf += sup;
    }
    l1linf *= wx;

    Ok((
        pair,
        InitialDataReport {
            totals,
            h_tilde_l1_linf: l1linf,
            neutrality_gap: gap,
            h_inf,
        },
    ))
}

const SNAPSHOT_MAGIC: &[u8; 4] = b"VPB1";

/// Writes a state snapshot: 64-byte header (magic `VPB1`, dims, time, weight
/// spec, little-endian) followed by `F₊` then `F₋` as row-major little-endian
/// `f64` (spatial axes outer, velocity axes inner).
pub fn write_snapshot<T: Scalar>(
    path: &Path,
    grid: &PhaseGrid<T>,
    spec: &WeightSpec<T>,
    state: &DistributionPair<T>,
) -> Result<()> {
    let mut header = [0u8; 64];
    header[0..4].copy_from_slice(SNAPSHOT_MAGIC);
    header[4..8].copy_from_slice(&(grid.x.dim_x as u32).to_le_bytes());
    header[8..12].copy_from_slice(&(grid.x.n_x as u32).to_le_bytes());
    header[12..16].copy_from_slice(&(grid.v.n_v as u32).to_le_bytes());
    header[16..24].copy_from_slice(&grid.v.v_max.widen().to_le_bytes());
    header[24..32].copy_from_slice(&state.t.widen().to_le_bytes());
    header[32..40].copy_from_slice(&spec.beta.widen().to_le_bytes());
    header[40..48].copy_from_slice(&spec.beta1.widen().to_le_bytes());
    header[48..56].copy_from_slice(&spec.sigma0.widen().to_le_bytes());
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    file.write_all(&header)?;
    for arr in [&state.f_plus, &state.f_minus] {
        for &x in arr.iter() {
            file.write_all(&x.widen().to_le_bytes())?;
        }
    }
    file.flush()?;
    Ok(())
}

/// Snapshot header contents.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotHeader {
    pub dim_x: usize,
    pub n_x: usize,
    pub n_v: usize,
    pub v_max: f64,
    pub t: f64,
    pub beta: f64,
    pub beta1: f64,
    pub sigma0: f64,
}

/// Reads a snapshot written by [`write_snapshot`].
pub fn read_snapshot(path: &Path) -> Result<(SnapshotHeader, Vec<f64>, Vec<f64>)> {
    let mut file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut header = [0u8; 64];
    file.read_exact(&mut header)?;
    if &header[0..4] != SNAPSHOT_MAGIC {
        return Err(Error::InvalidConfig("snapshot magic mismatch".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap()) as usize;
    let f64_at = |o: usize| f64::from_le_bytes(header[o..o + 8].try_into().unwrap());
    let hdr = SnapshotHeader {
        dim_x: u32_at(4),
        n_x: u32_at(8),
        n_v: u32_at(12),
        v_max: f64_at(16),
        t: f64_at(24),
        beta: f64_at(32),
        beta1: f64_at(40),
        sigma0: f64_at(48),
    };
    let total = hdr.n_x.pow(hdr.dim_x as u32) * hdr.n_v.pow(3);
    let mut read_arr = || -> Result<Vec<f64>> {
        let mut buf = vec![0u8; total * 8];
        file.read_exact(&mut buf)?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    };
    let fp = read_arr()?;
    let fm = read_arr()?;
    Ok((hdr, fp, fm))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phase_grid::build_phase_grid;
    use approx::assert_relative_eq;

    fn grid() -> PhaseGrid<f64> {
        build_phase_grid(1, 32, 12, 6.0, 4, 8).unwrap()
    }

    fn spec() -> WeightSpec<f64> {
        WeightSpec::new(9.0, 4.0, 1.0 / 16.0).unwrap()
    }

    #[test]
    fn maxwellian_values() {
        assert_relative_eq!(
            maxwellian([0.0, 0.0, 0.0]),
            0.06349363593424097,
            max_relative = 1e-10
        );
        let v = [0.3, -1.2, 0.7];
        let neg = [-0.3, 1.2, -0.7];
        assert_eq!(maxwellian(v), maxwellian(neg));
        assert_relative_eq!(
            sqrt_maxwellian(v) * sqrt_maxwellian(v),
            maxwellian(v),
            max_relative = 1e-14
        );
    }

    #[test]
    fn weight_examples() {
        let s = spec();
        assert_eq!(weight(&s, WeightKind::Beta, 0.0, [0.0; 3]), 1.0);
        // (t=0, |v|=1, β=4): (1+1)² e^{1/16} ≈ 4.25803
        let s4 = WeightSpec {
            beta: 4.0,
            beta1: 4.0,
            sigma0: 1.0 / 16.0,
        };
        let w = weight(&s4, WeightKind::Beta, 0.0, [1.0, 0.0, 0.0]);
        assert_relative_eq!(w, 4.0 * (1.0f64 / 16.0).exp(), max_relative = 1e-12);
        // Weight decreases in t at fixed v.
        let v = [1.5, 0.2, -0.4];
        assert!(weight(&s, WeightKind::Beta, 2.0, v) < weight(&s, WeightKind::Beta, 1.0, v));
    }

    #[test]
    fn weight_spec_validation() {
        assert!(WeightSpec::new(9.0, 6.0, 0.05).is_err()); // β₁ ≥ β − 4
        assert!(WeightSpec::new(9.0, 3.0, 0.05).is_err()); // β₁ < 4
        assert!(WeightSpec::new(9.0, 4.0, 0.2).is_err()); // σ₀ > 1/16
        assert!(WeightSpec::new(9.0, 4.0, 0.0).is_err());
        assert!(WeightSpec::new(9.0, 4.0, 1.0 / 16.0).is_ok());
    }

    #[test]
    fn roundtrip_f_to_perturbation() {
        let g = grid();
        let (state, _) = build_initial_data(
            &InitialData::DensityModulation {
                amplitude: 0.3,
                neutrality_gap: 1e-3,
            },
            &g,
            &spec(),
        )
        .unwrap();
        let fp = state.perturbation(&g, true);
        let fm = state.perturbation(&g, false);
        let back = DistributionPair::from_perturbation(&fp, &fm, 0.0, &g).unwrap();
        for (a, b) in state.f_plus.iter().zip(&back.f_plus) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
        for (a, b) in state.f_minus.iter().zip(&back.f_minus) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn weighted_views_ordered() {
        let g = grid();
        let s = spec();
        let (state, _) = build_initial_data(
            &InitialData::DensityModulation {
                amplitude: 0.2,
                neutrality_gap: 1e-3,
            },
            &g,
            &s,
        )
        .unwrap();
        let h = state.weighted(&g, &s, WeightKind::Beta, true);
        let ht = state.weighted(&g, &s, WeightKind::Beta1, true);
        for (a, b) in ht.iter().zip(&h) {
            assert!(a.abs() <= b.abs() * (1.0 + 1e-14));
        }
    }

    #[test]
    fn equilibrium_all_zero() {
        let g = grid();
        let (state, report) = build_initial_data(&InitialData::Equilibrium, &g, &spec()).unwrap();
        assert_eq!(state.min_value() > 0.0, true);
        assert!(report.totals.m_plus.abs() < 1e-14);
        assert!(report.totals.relative_entropy.abs() < 1e-12);
        assert!(report.neutrality_gap == 0.0);
        assert!(report.h_inf == 0.0);
    }

    #[test]
    fn density_modulation_defects_enforced() {
        let g = grid();
        let eps = 1e-3;
        let (state, report) = build_initial_data(
            &InitialData::DensityModulation {
                amplitude: 0.3,
                neutrality_gap: eps,
            },
            &g,
            &spec(),
        )
        .unwrap();
        let t = &report.totals;
        assert!(t.m_plus.abs() < 1e-12, "M+ = {:e}", t.m_plus);
        assert!(t.m_minus.abs() < 1e-12);
        assert!(t.j.iter().all(|c| c.abs() < 1e-12));
        assert!(t.e_tot.abs() < 1e-12, "E0 = {:e}", t.e_tot);
        assert!(t.relative_entropy > 0.0);
        // sup gap ε₀·(2π)^{-3/4} at the v-grid node closest to the origin.
        let sq_max = g
            .v
            .nodes()
            .iter()
            .map(|&v| sqrt_maxwellian(v))
            .fold(0.0f64, f64::max);
        assert_relative_eq!(report.neutrality_gap, eps * sq_max, max_relative = 1e-6);
        assert!(state.min_value() > -TOL_POS);
    }

    #[test]
    fn relative_entropy_matches_density_formula() {
        // For F± = ρ₀ μ and φ = 0: 𝓔 = 2 ∫ (ρ₀ ln ρ₀ − ρ₀ + 1) dx.
        let g = grid();
        let n_v = g.v.len();
        let mu: Vec<f64> = g.v.nodes().iter().map(|&v| maxwellian(v)).collect();
        let mut fp = Vec::new();
        for ix in 0..g.x.len() {
            let x = g.x.node(ix);
            let rho0 = 1.0 + 0.3 * (2.0 * std::f64::consts::PI * x[0]).cos();
            for jv in 0..n_v {
                fp.push(rho0 * mu[jv]);
            }
        }
        let pair = DistributionPair::new(fp.clone(), fp, 0.0, &g).unwrap();
        let field = FieldState::zero(g.x.len());
        let totals = conserved_totals(&g, &pair, &field).unwrap();
        let mut oracle = 0.0;
        for ix in 0..g.x.len() {
            let x = g.x.node(ix);
            let r = 1.0 + 0.3 * (2.0 * std::f64::consts::PI * x[0]).cos();
            oracle += r * r.ln() - r + 1.0;
        }
        oracle *= 2.0 * g.x.cell_volume();
        // Velocity truncation costs a few parts in 1e5 here; 5% is the contract.
        assert_relative_eq!(totals.relative_entropy, oracle, max_relative = 0.05);
        assert!((totals.relative_entropy - oracle).abs() < 1e-3);
    }

    #[test]
    fn snapshot_roundtrip() {
        let g = grid();
        let s = spec();
        let (state, _) = build_initial_data(
            &InitialData::DensityModulation {
                amplitude: 0.25,
                neutrality_gap: 1e-3,
            },
            &g,
            &s,
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("state.vpb");
        write_snapshot(&path, &g, &s, &state).unwrap();
        let (hdr, fp, fm) = read_snapshot(&path).unwrap();
        assert_eq!(hdr.dim_x, 1);
        assert_eq!(hdr.n_x, 32);
        assert_eq!(hdr.n_v, 12);
        assert_eq!(hdr.v_max, 6.0);
        assert_eq!(hdr.beta, 9.0);
        assert_eq!(fp, state.f_plus);
        assert_eq!(fm, state.f_minus);
    }

    #[test]
    fn nonpositive_modulation_rejected() {
        let g = grid();
        let err = build_initial_data(
            &InitialData::DensityModulation {
                amplitude: 1.5,
                neutrality_gap: 0.0,
            },
            &g,
            &spec(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("nonpositive"));
    }
}
