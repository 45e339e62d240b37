//! Run configuration: TOML blocks with defaults, strict unknown-key
//! rejection, and the same invariant validation the core types enforce.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

fn default_dim_x() -> usize {
    1
}
fn default_v_max() -> f64 {
    6.0
}
fn default_n_theta() -> usize {
    2
}
fn default_n_phi() -> usize {
    6
}

/// Discretization sizes. Only `n_x` and `n_v` are required.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridBlock {
    #[serde(default = "default_dim_x")]
    pub dim_x: usize,
    pub n_x: usize,
    pub n_v: usize,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
    #[serde(default = "default_n_theta")]
    pub n_theta: usize,
    #[serde(default = "default_n_phi")]
    pub n_phi: usize,
}

/// Kernel and weight parameters.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct PhysicsBlock {
    /// Potential exponent of the collision kernel, `γ ∈ [0, 1]`.
    pub gamma: f64,
    /// Primary weight exponent β.
    pub beta: f64,
    /// Secondary weight exponent β₁, requires `4 ≤ β₁ < β − 4`.
    pub beta1: f64,
    /// Gaussian weight rate, `σ₀ ∈ (0, 1/16]`.
    pub sigma0: f64,
}

impl Default for PhysicsBlock {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            beta: 9.0,
            beta1: 4.0,
            sigma0: 1.0 / 16.0,
        }
    }
}

/// Initial datum family and its smallness parameters.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialDataBlock {
    /// `"equilibrium"` or `"density-modulation"`.
    pub kind: String,
    /// Density modulation amplitude `a`.
    pub amplitude: f64,
    /// Sup-norm of the species gap `f₊ − f₋` at `t = 0` (ε₀).
    pub neutrality_gap: f64,
}

impl Default for InitialDataBlock {
    fn default() -> Self {
        Self {
            kind: "density-modulation".into(),
            amplitude: 0.3,
            neutrality_gap: 1e-3,
        }
    }
}

/// Time-stepping parameters.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct SteppingBlock {
    pub dt: f64,
    pub t_end: f64,
    /// Absolute Picard tolerance in the weighted sup norm.
    pub picard_tol: f64,
    pub picard_max: usize,
    /// Guard factor in `Δt ≤ cfl_safety·Δx/v_max`.
    pub cfl_safety: f64,
    /// Characteristics substep; defaults to `Δt/4`.
    pub dtau_sub: Option<f64>,
}

impl Default for SteppingBlock {
    fn default() -> Self {
        Self {
            dt: 0.01,
            t_end: 2.0,
            picard_tol: 1e-2,
            picard_max: 25,
            cfl_safety: 4.0,
            dtau_sub: None,
        }
    }
}

/// Monitor thresholds.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonitorsBlock {
    /// Free-streaming threshold δ in `‖∇φ‖∞ ≤ δ(1+t)⁻²`.
    pub delta: f64,
    /// Entropy tolerance `entropy_tol_rel·|S(0)| + entropy_tol_abs`.
    pub entropy_tol_rel: f64,
    pub entropy_tol_abs: f64,
    /// Decay fits exclude `t < t_burn`.
    pub t_burn: f64,
}

impl Default for MonitorsBlock {
    fn default() -> Self {
        Self {
            delta: 0.01,
            entropy_tol_rel: 1e-6,
            entropy_tol_abs: 1e-10,
            t_burn: 1.0,
        }
    }
}

/// Artifact names (relative to the output directory) and snapshot cadence.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputBlock {
    pub csv: String,
    pub summary: String,
    /// Snapshot every this many steps; 0 disables snapshots.
    pub snapshot_every: usize,
}

impl Default for OutputBlock {
    fn default() -> Self {
        Self {
            csv: "series.csv".into(),
            summary: "summary.json".into(),
            snapshot_every: 0,
        }
    }
}

/// Full run configuration. Unknown keys anywhere are rejected.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridBlock,
    #[serde(default)]
    pub physics: PhysicsBlock,
    #[serde(default)]
    pub initial_data: InitialDataBlock,
    #[serde(default)]
    pub stepping: SteppingBlock,
    #[serde(default)]
    pub monitors: MonitorsBlock,
    #[serde(default)]
    pub output: OutputBlock,
}

impl RunConfig {
    /// Re-checks every invariant the core types would enforce, so a bad file
    /// fails at load time with the field named.
    pub fn validate(&self) -> Result<()> {
        let g = &self.grid;
        if g.dim_x == 0 || g.dim_x > 3 {
            bail!("grid.dim_x must be 1, 2, or 3, got {}", g.dim_x);
        }
        if g.n_x < 2 || g.n_v < 2 {
            bail!("grid requires n_x ≥ 2 and n_v ≥ 2, got ({}, {})", g.n_x, g.n_v);
        }
        if !(g.v_max > 0.0) {
            bail!("grid.v_max must be positive, got {}", g.v_max);
        }
        if g.n_theta < 2 || g.n_phi < 2 {
            bail!(
                "sphere quadrature requires n_theta, n_phi ≥ 2, got ({}, {})",
                g.n_theta,
                g.n_phi
            );
        }
        let p = &self.physics;
        if !(0.0..=1.0).contains(&p.gamma) {
            bail!("physics.gamma ∈ [0, 1] required, got {}", p.gamma);
        }
        vpb_core::states::WeightSpec::new(p.beta, p.beta1, p.sigma0)
            .map_err(|e| anyhow::anyhow!("physics block: {e}"))?;
        match self.initial_data.kind.as_str() {
            "equilibrium" | "density-modulation" => {}
            other => bail!(
                "initial_data.kind must be \"equilibrium\" or \"density-modulation\", got {other:?}"
            ),
        }
        if !(self.initial_data.neutrality_gap >= 0.0) {
            bail!(
                "initial_data.neutrality_gap must be nonnegative, got {}",
                self.initial_data.neutrality_gap
            );
        }
        let s = &self.stepping;
        if !(s.dt > 0.0) || !(s.t_end > 0.0) {
            bail!("stepping.dt and stepping.t_end must be positive");
        }
        if !(s.picard_tol > 0.0) || s.picard_max == 0 {
            bail!("stepping requires picard_tol > 0 and picard_max ≥ 1");
        }
        if let Some(sub) = s.dtau_sub {
            if !(sub > 0.0) {
                bail!("stepping.dtau_sub must be positive, got {sub}");
            }
        }
        if !(self.monitors.delta > 0.0) {
            bail!("monitors.delta must be positive, got {}", self.monitors.delta);
        }
        Ok(())
    }
}

/// Loads and validates a TOML config file.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let cfg: RunConfig =
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    cfg.validate()
        .with_context(|| format!("validating config {}", path.display()))?;
    Ok(cfg)
}
