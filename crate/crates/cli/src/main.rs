//! `vpb`: command-line driver for the two-species Vlasov-Poisson-Boltzmann
//! solver. `run` executes a configured simulation; the subcommands wrap the
//! kernel validators, the characteristic integrator, and the decay fitter.

mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use vpb_core::characteristics::{integrate_backward, ZeroField};
use vpb_core::collision::{
    build_tables, invariant_moments, q_conservative, q_field, validate_kernel_bounds,
    CollisionKernelSpec, DEFAULT_TABLE_BUDGET,
};
use vpb_core::diagnostics::decay_fit;
use vpb_core::phase_grid::build_phase_grid;
use vpb_core::states::WeightSpec;

#[derive(Parser)]
#[command(name = "vpb", about = "Two-species Vlasov-Poisson-Boltzmann solver", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Seed for the randomized validators.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a configured simulation run.
    Run {
        /// TOML configuration file.
        config: PathBuf,
        /// Directory for CSV/JSON/snapshot artifacts (default: "out").
        #[arg(long, default_value = "out")]
        output_dir: PathBuf,
    },
    /// Build collision tables and report the kernel-estimate measurements.
    ValidateKernels {
        #[arg(long, default_value_t = 10)]
        n_v: usize,
        #[arg(long, default_value_t = 6.0)]
        v_max: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 2)]
        n_theta: usize,
        #[arg(long, default_value_t = 6)]
        n_phi: usize,
    },
    /// Integrate backward characteristics under a zero field and print the path.
    TraceCharacteristics {
        /// Starting position, comma-separated (e.g. "0.1,0,0").
        #[arg(long, default_value = "0,0,0")]
        x: String,
        /// Starting velocity, comma-separated.
        #[arg(long, default_value = "1,0,0")]
        v: String,
        /// Time of the starting point.
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        /// Earliest time to trace back to.
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        /// Rows to print between t and t0.
        #[arg(long, default_value_t = 8)]
        samples: usize,
        /// Species sign: "plus" or "minus".
        #[arg(long, default_value = "plus")]
        species: String,
        /// RK4 substep.
        #[arg(long, default_value_t = 0.05)]
        dtau: f64,
    },
    /// Fit an exponential decay rate to a column of a diagnostics CSV.
    FitDecay {
        csv: PathBuf,
        /// Column to fit (default: second column).
        #[arg(long)]
        column: Option<String>,
        /// Exclude samples with t below this.
        #[arg(long, default_value_t = 0.0)]
        t_burn: f64,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: setting thread pool size: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.cmd {
        Cmd::Run { config, output_dir } => {
            let cfg = config::load_config(&config)?;
            let outcome = run::run(&cfg, &output_dir)?;
            println!(
                "wrote {} and {}",
                outcome.csv_path.display(),
                outcome.summary_path.display()
            );
            Ok(if outcome.monitors_ok { 0 } else { 2 })
        }
        Cmd::ValidateKernels {
            n_v,
            v_max,
            gamma,
            n_theta,
            n_phi,
        } => validate_kernels(n_v, v_max, gamma, n_theta, n_phi, cli.seed),
        Cmd::TraceCharacteristics {
            x,
            v,
            t,
            t0,
            samples,
            species,
            dtau,
        } => trace_characteristics(&x, &v, t, t0, samples, &species, dtau),
        Cmd::FitDecay { csv, column, t_burn } => fit_decay(&csv, column.as_deref(), t_burn),
    }
}

fn validate_kernels(
    n_v: usize,
    v_max: f64,
    gamma: f64,
    n_theta: usize,
    n_phi: usize,
    seed: u64,
) -> Result<u8> {
    let grid = build_phase_grid::<f64>(1, 2, n_v, v_max, n_theta, n_phi)?;
    let spec = CollisionKernelSpec::new(gamma)?;
    let tables = build_tables(&grid, &spec, DEFAULT_TABLE_BUDGET)?;
    let wspec = WeightSpec::new(9.0, 4.0, 1.0 / 16.0)?;
    let report = validate_kernel_bounds(&grid, &tables, &wspec)?;
    println!("kernel-estimate report (n_v = {n_v}, v_max = {v_max}, γ = {gamma}):");
    println!("  weighted row sums positive: {}", report.row_sums_positive);
    println!("  worst weighted row sum:     {:.6e}", report.worst_row_sum);
    println!("  row-sum exponent (w_β):     {:+.4}", report.row_sum_exponent);
    println!("  row-sum exponent (exp):     {:+.4}", report.row_sum_exponent_exp);
    println!("  k₂ envelope constant:       {:.6e}", report.envelope_constant);
    println!("  Γ bilinear constant:        {:.6e}", report.gamma_constant);

    // Randomized collision-invariant defects: raw quadrature vs the
    // moment-projected operator actually used in production.
    let mut rng = StdRng::seed_from_u64(seed);
    let n = grid.v.len();
    let mut worst_raw = 0.0f64;
    let mut worst_proj = 0.0f64;
    for _ in 0..5 {
        // Ratio form r = F/μ for a random positive density F.
        let r: Vec<f64> = (0..n).map(|_| 1.0 + 0.5 * rng.gen::<f64>()).collect();
        let raw = q_field(&grid, gamma, &r, &r)?;
        let proj = q_conservative(&grid, gamma, &r, &r)?;
        for q in [(&raw, &mut worst_raw), (&proj, &mut worst_proj)] {
            let m = invariant_moments(&grid, q.0);
            let dv3 = grid.v.cell_volume();
            let w = m.iter().map(|x| (x * dv3).abs()).fold(0.0, f64::max);
            *q.1 = q.1.max(w);
        }
    }
    println!("  worst invariant defect, raw quadrature:  {worst_raw:.6e}");
    println!("  worst invariant defect, projected:       {worst_proj:.6e}");
    if !report.row_sums_positive {
        bail!("kernel row sums lost positivity");
    }
    Ok(0)
}

fn parse_triple(s: &str) -> Result<[f64; 3]> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(anyhow::Error::from))
        .collect::<Result<_>>()
        .with_context(|| format!("parsing vector {s:?}"))?;
    if parts.len() != 3 {
        bail!("expected 3 comma-separated components, got {}", parts.len());
    }
    Ok([parts[0], parts[1], parts[2]])
}

fn trace_characteristics(
    x: &str,
    v: &str,
    t: f64,
    t0: f64,
    samples: usize,
    species: &str,
    dtau: f64,
) -> Result<u8> {
    let x = parse_triple(x)?;
    let v = parse_triple(v)?;
    let sign = match species {
        "plus" => 1.0,
        "minus" => -1.0,
        other => bail!("species must be \"plus\" or \"minus\", got {other:?}"),
    };
    if samples == 0 {
        bail!("samples must be ≥ 1");
    }
    println!("s, X1, X2, X3, V1, V2, V3, det(dX/dv)");
    for k in 0..=samples {
        let s = t - (t - t0) * k as f64 / samples as f64;
        let res = integrate_backward(sign, t, x, v, s, &ZeroField, dtau, true)?;
        let det = res.jacobian.as_ref().map(|j| j.det_dx_dv()).unwrap_or(0.0);
        println!(
            "{s}, {}, {}, {}, {}, {}, {}, {det}",
            res.x[0], res.x[1], res.x[2], res.v[0], res.v[1], res.v[2]
        );
    }
    Ok(0)
}

fn fit_decay(csv: &std::path::Path, column: Option<&str>, t_burn: f64) -> Result<u8> {
    let text = std::fs::read_to_string(csv)
        .with_context(|| format!("reading {}", csv.display()))?;
    let mut lines = text.lines();
    let header = lines.next().context("empty CSV")?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let col_idx = match column {
        Some(name) => cols
            .iter()
            .position(|c| *c == name)
            .with_context(|| format!("column {name:?} not in header {cols:?}"))?,
        None => 1,
    };
    if cols.len() < 2 {
        bail!("CSV needs at least a time column and a value column");
    }
    let mut series = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            bail!("line {}: expected {} fields, got {}", lineno + 2, cols.len(), fields.len());
        }
        let t: f64 = fields[0].trim().parse().with_context(|| format!("line {}", lineno + 2))?;
        let y: f64 = fields[col_idx]
            .trim()
            .parse()
            .with_context(|| format!("line {}", lineno + 2))?;
        series.push((t, y));
    }
    let fit = decay_fit(&series, t_burn)?;
    println!(
        "column {}: rate = {:.6e}, R² = {:.6}, amplitude = {:.6e}, points = {}",
        cols[col_idx], fit.rate, fit.r_squared, fit.amplitude, fit.n_used
    );
    Ok(0)
}
