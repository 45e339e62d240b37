//! Run orchestration: build → tables → initial data → time loop → fits, with
//! CSV/JSON/snapshot emission and monitor verdicts.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use vpb_core::collision::{build_tables, CollisionKernelSpec, DEFAULT_TABLE_BUDGET};
use vpb_core::diagnostics::{
    decay_fit, entropy_monitor, measure, write_csv, DiagnosticsRecord,
};
use vpb_core::field::solve_poisson;
use vpb_core::phase_grid::build_phase_grid;
use vpb_core::states::{build_initial_data, write_snapshot, InitialData, WeightSpec};
use vpb_core::stepper::{StepConfig, Stepper};

use crate::config::RunConfig;

/// One fitted decay rate in the JSON summary; `note` explains a skipped fit
/// (e.g. the series is identically zero on an equilibrium run).
#[derive(Debug, Serialize)]
struct FitSummary {
    rate: Option<f64>,
    r_squared: Option<f64>,
    amplitude: Option<f64>,
    n_used: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    note: Option<String>,
}

impl FitSummary {
    fn from_series(series: &[(f64, f64)], t_burn: f64) -> Self {
        match decay_fit(series, t_burn) {
            Ok(fit) => Self {
                rate: Some(fit.rate),
                r_squared: Some(fit.r_squared),
                amplitude: Some(fit.amplitude),
                n_used: Some(fit.n_used),
                note: None,
            },
            Err(e) => Self {
                rate: None,
                r_squared: None,
                amplitude: None,
                n_used: None,
                note: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Serialize)]
struct EntropySummary {
    pass: bool,
    worst_increase: f64,
    worst_t: f64,
    tol: f64,
}

#[derive(Debug, Serialize)]
struct FreeStreamingSummary {
    pass: bool,
    worst_grad_margin: f64,
    worst_hess_margin: f64,
}

#[derive(Debug, Serialize)]
struct DriftSummary {
    mass_plus: f64,
    mass_minus: f64,
    momentum: f64,
    energy: f64,
}

#[derive(Debug, Serialize)]
struct PicardSummary {
    max_iterations: usize,
    worst_contraction: Option<f64>,
}

/// The JSON run summary.
#[derive(Debug, Serialize)]
struct RunSummary {
    status: &'static str,
    steps: usize,
    t_end: f64,
    entropy: EntropySummary,
    free_streaming: FreeStreamingSummary,
    drifts: DriftSummary,
    picard: PicardSummary,
    fits: FitsSummary,
}

#[derive(Debug, Serialize)]
struct FitsSummary {
    h_inf_plus: FitSummary,
    h_inf_minus: FitSummary,
    neutral_gap: FitSummary,
    h_tilde_l1_linf: FitSummary,
}

/// What a completed run produced.
pub struct RunOutcome {
    pub monitors_ok: bool,
    pub csv_path: PathBuf,
    pub summary_path: PathBuf,
}

/// Executes a full configured run, writing all artifacts into `out_dir`.
///
/// Returns `Ok` whenever the run itself completes; monitor failures are
/// reported through [`RunOutcome::monitors_ok`], not as errors.
pub fn run(cfg: &RunConfig, out_dir: &Path) -> Result<RunOutcome> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("creating output directory {}", out_dir.display()))?;
    let echo = toml::to_string_pretty(cfg).context("serializing effective config")?;
    std::fs::write(out_dir.join("effective-config.toml"), echo)
        .context("writing effective config echo")?;

    let g = &cfg.grid;
    let grid = build_phase_grid::<f64>(g.dim_x, g.n_x, g.n_v, g.v_max, g.n_theta, g.n_phi)?;
    let wspec = WeightSpec::new(cfg.physics.beta, cfg.physics.beta1, cfg.physics.sigma0)?;
    let kernel = CollisionKernelSpec::new(cfg.physics.gamma)?;
    let tables = build_tables(&grid, &kernel, DEFAULT_TABLE_BUDGET)?;

    let kind = match cfg.initial_data.kind.as_str() {
        "equilibrium" => InitialData::Equilibrium,
        _ => InitialData::DensityModulation {
            amplitude: cfg.initial_data.amplitude,
            neutrality_gap: cfg.initial_data.neutrality_gap,
        },
    };
    let (mut state, report) = build_initial_data(&kind, &grid, &wspec)?;
    println!(
        "initial data: ‖h₀‖∞ = {:.3e}, ‖h̃₀‖_L¹ₓL∞ᵥ = {:.3e}, ‖f₊−f₋‖∞ = {:.3e}",
        report.h_inf, report.h_tilde_l1_linf, report.neutrality_gap
    );

    let s = &cfg.stepping;
    let mut step_cfg = StepConfig::new(s.dt);
    step_cfg.picard_tol = s.picard_tol;
    step_cfg.picard_max = s.picard_max;
    step_cfg.cfl_safety = s.cfl_safety;
    if let Some(sub) = s.dtau_sub {
        step_cfg.dtau_sub = sub;
    }
    let stepper = Stepper::new(grid.clone(), tables, wspec.clone(), step_cfg)?;

    let n_steps = (s.t_end / s.dt).round() as usize;
    let delta = cfg.monitors.delta;
    let mut records: Vec<DiagnosticsRecord<f64>> = Vec::with_capacity(n_steps + 1);
    let field0 = solve_poisson(&grid.x, &state.charge_density(&grid))?;
    records.push(measure(&grid, &state, &field0, &wspec, delta, 0)?);

    let mut max_iters = 0usize;
    let mut worst_contraction: Option<f64> = None;
    for k in 0..n_steps {
        let t0 = s.dt * k as f64;
        let (next, rep) = stepper
            .advance(&state, t0)
            .with_context(|| format!("step {} (t = {t0})", k + 1))?;
        state = next;
        records.push(measure(&grid, &state, &rep.field, &wspec, delta, rep.iterations)?);
        max_iters = max_iters.max(rep.iterations);
        if let Some(c) = rep.contraction {
            worst_contraction = Some(worst_contraction.map_or(c, |w: f64| w.max(c)));
        }
        if cfg.output.snapshot_every > 0 && (k + 1) % cfg.output.snapshot_every == 0 {
            let path = out_dir.join(format!("snapshot_{:06}.bin", k + 1));
            write_snapshot(&path, &grid, &wspec, &state)?;
        }
        if (k + 1) % 25 == 0 || k + 1 == n_steps {
            let r = records.last().unwrap();
            println!(
                "step {}/{}: t = {:.3}, picard = {}, ‖h₊‖∞ = {:.3e}, S = {:.3e}",
                k + 1,
                n_steps,
                state.t,
                rep.iterations,
                r.h_inf_plus,
                r.s_defect
            );
        }
    }

    let csv_path = out_dir.join(&cfg.output.csv);
    write_csv(&csv_path, &records)?;

    let tol = cfg.monitors.entropy_tol_rel * records[0].s_defect.abs() + cfg.monitors.entropy_tol_abs;
    let entropy = entropy_monitor(&records, tol)?;
    let fs_pass = records
        .iter()
        .all(|r| r.fs_grad_margin <= 1.0 && r.fs_hess_margin <= 1.0);
    let worst_grad = records.iter().map(|r| r.fs_grad_margin).fold(0.0, f64::max);
    let worst_hess = records.iter().map(|r| r.fs_hess_margin).fold(0.0, f64::max);

    let series = |f: fn(&DiagnosticsRecord<f64>) -> f64| -> Vec<(f64, f64)> {
        records.iter().map(|r| (r.t, f(r))).collect()
    };
    let t_burn = cfg.monitors.t_burn;
    let fits = FitsSummary {
        h_inf_plus: FitSummary::from_series(&series(|r| r.h_inf_plus), t_burn),
        h_inf_minus: FitSummary::from_series(&series(|r| r.h_inf_minus), t_burn),
        neutral_gap: FitSummary::from_series(&series(|r| r.neutral_gap), t_burn),
        h_tilde_l1_linf: FitSummary::from_series(&series(|r| r.h_tilde_l1_linf), t_burn),
    };

    let drift = |f: fn(&DiagnosticsRecord<f64>) -> f64| -> f64 {
        let base = f(&records[0]);
        records.iter().map(|r| (f(r) - base).abs()).fold(0.0, f64::max)
    };
    let drifts = DriftSummary {
        mass_plus: drift(|r| r.m_plus),
        mass_minus: drift(|r| r.m_minus),
        momentum: drift(|r| r.j[0].abs().max(r.j[1].abs()).max(r.j[2].abs())),
        energy: drift(|r| r.e_tot),
    };

    let monitors_ok = entropy.pass && fs_pass;
    let summary = RunSummary {
        status: if monitors_ok { "ok" } else { "monitor-failed" },
        steps: n_steps,
        t_end: state.t,
        entropy: EntropySummary {
            pass: entropy.pass,
            worst_increase: entropy.worst_increase,
            worst_t: entropy.worst_t,
            tol,
        },
        free_streaming: FreeStreamingSummary {
            pass: fs_pass,
            worst_grad_margin: worst_grad,
            worst_hess_margin: worst_hess,
        },
        drifts,
        picard: PicardSummary {
            max_iterations: max_iters,
            worst_contraction,
        },
        fits,
    };
    let summary_path = out_dir.join(&cfg.output.summary);
    std::fs::write(&summary_path, serde_json::to_string_pretty(&summary)?)
        .context("writing run summary")?;

    if !monitors_ok {
        eprintln!(
            "monitor failure: entropy pass = {}, free-streaming pass = {}",
            entropy.pass, fs_pass
        );
    }
    Ok(RunOutcome {
        monitors_ok,
        csv_path,
        summary_path,
    })
}
