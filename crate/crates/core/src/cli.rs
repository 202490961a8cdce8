//! Subcommand implementations behind the `heatpack` binary.

use crate::config::ExperimentConfig;
use crate::design;
use crate::error::{Error, Result};
use crate::grid::{BoxDomain, GridField, ObservationSet};
use crate::observability;
use crate::oracle;
use crate::packet::{self, Frame};
use crate::report::{fmt_f64, Json};
use crate::validate::{self, Fault};
use clap::{Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "heatpack",
    about = "Heat-packet frames, observability constants, and optimal sensor placement on box domains",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Configuration file (key=value lines); defaults are used when absent.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Output directory for reports and artifacts.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,

    /// Worker threads (0 = all cores). Outputs are byte-identical for any value.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Override the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Subcommand)]
pub enum Command {
    /// Build the packet frame for the configured bump and certify its error.
    Decompose,
    /// Solve the relaxed sensor-placement problem (optionally a stability study).
    Design {
        /// Comma-separated list of truncation radii, e.g. 4,8,16,32.
        #[arg(long)]
        stability: Option<String>,
    },
    /// Compute observability constants and run the sandwich trials.
    Observe {
        /// Observation mask in the grid format (default: left half of the domain).
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Number of random-coefficient sandwich trials.
        #[arg(long)]
        trials: Option<usize>,
        /// Number of sine modes for the spectral constant.
        #[arg(long, name = "modes-cap")]
        modes_cap: Option<usize>,
    },
    /// Run the invariant suites and write a deterministic report.
    Validate {
        /// Run a single named suite.
        #[arg(long)]
        suite: Option<String>,
        /// Inject a known fault (gramian-diag) to exercise failure paths.
        #[arg(long)]
        inject: Option<String>,
    },
    /// Dump free-kernel / Kac-bound tables.
    Kernel,
}

pub fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::parse(&std::fs::read_to_string(path)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

pub fn run(cli: &Cli) -> Result<i32> {
    if cli.threads > 0 {
        // ordered reductions keep results identical for any pool size
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global();
    }
    let config = load_config(cli)?;
    std::fs::create_dir_all(&cli.out)?;
    match &cli.command {
        Command::Decompose => cmd_decompose(&config, &cli.out),
        Command::Design { stability } => cmd_design(&config, &cli.out, stability.as_deref()),
        Command::Observe {
            mask,
            trials,
            modes_cap,
        } => cmd_observe(&config, &cli.out, mask.as_deref(), *trials, *modes_cap),
        Command::Validate { suite, inject } => {
            cmd_validate(&config, &cli.out, suite.as_deref(), inject.as_deref())
        }
        Command::Kernel => cmd_kernel(&config, &cli.out),
    }
}

fn build_frame(config: &ExperimentConfig) -> Result<packet::FrameBuild> {
    let bump = config.bump();
    let domain = config.domain()?;
    packet::build_frame_full(
        &bump,
        config.eta,
        config.epsilon_policy(),
        config.mode,
        &domain,
        &config.res,
    )
}

fn config_header(config: &ExperimentConfig) -> Json {
    let mut o = Json::obj();
    o.push("config_hash", Json::Str(config.content_hash()));
    o.push("config", Json::Str(config.canonical()));
    o
}

fn cmd_decompose(config: &ExperimentConfig, out: &Path) -> Result<i32> {
    let built = build_frame(config)?;
    std::fs::write(out.join("frame.json"), built.frame.to_json())?;
    let mut report = config_header(config);
    report
        .push("measured_error", Json::Float(built.frame.measured_error))
        .push("eta", Json::Float(config.eta))
        .push("retained_modes", Json::UInt(built.frame.len() as u64))
        .push("sigma", Json::Float(built.frame.params.sigma))
        .push("L", Json::Float(built.frame.params.lattice_l))
        .push("epsilon", Json::Float(built.frame.params.epsilon))
        .push("mode", Json::Str(built.frame.params.mode.name().into()))
        .push("passed", Json::Bool(built.passed));
    std::fs::write(out.join("decompose_report.json"), report.render())?;
    println!(
        "frame: |S| = {}, measured error = {} (eta = {}) -> {}",
        built.frame.len(),
        fmt_f64(built.frame.measured_error),
        fmt_f64(config.eta),
        if built.passed { "PASS" } else { "FAIL" }
    );
    Ok(if built.passed { 0 } else { 4 })
}

fn alpha_json(sol: &design::DesignSolution, densities: &[design::PacketEnergyDensity]) -> Json {
    Json::Array(
        densities
            .iter()
            .zip(&sol.alpha)
            .map(|(d, &w)| {
                let mut o = Json::obj();
                o.push(
                    "n",
                    Json::Array(d.index.iter().map(|&v| Json::Int(v)).collect()),
                )
                .push("weight", Json::Float(w));
                o
            })
            .collect(),
    )
}

fn cmd_design(config: &ExperimentConfig, out: &Path, stability: Option<&str>) -> Result<i32> {
    let built = build_frame(config)?;
    let domain = config.domain()?;
    let densities = design::densities_for_frame(
        &built.frame,
        config.n_radius,
        config.t_end,
        &domain,
        &config.res,
    )?;
    let sol = design::saddle_solve(
        &densities,
        config.m_fraction,
        config.iters,
        config.tol,
        config.step_c,
    )?;
    sol.mask.save(&out.join("mask.grid"))?;
    std::fs::write(out.join("mask.pgm"), sol.mask.write_pgm()?)?;

    let mut report = config_header(config);
    report
        .push("value", Json::Float(sol.value))
        .push("gap", Json::Float(sol.gap))
        .push("lambda", Json::Float(sol.lambda))
        .push("N", Json::Float(config.n_radius))
        .push(
            "argmin_index",
            Json::Array(sol.argmin_index.iter().map(|&v| Json::Int(v)).collect()),
        )
        .push("fractional_cells", Json::UInt(sol.fractional_cells as u64))
        .push("alpha", alpha_json(&sol, &densities));

    if let Some(list) = stability {
        let radii: Vec<f64> = list
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad stability list '{list}'")))
            })
            .collect::<Result<_>>()?;
        let study = design::stability_study(
            &built.frame,
            config.m_fraction,
            config.t_end,
            &radii,
            &domain,
            &config.res,
            config.iters,
            config.tol,
        )?;
        let mut rows = Vec::new();
        for (i, sol_n) in study.solutions.iter().enumerate() {
            let mut row = Json::obj();
            row.push("N", Json::Float(study.radii[i]))
                .push("value", Json::Float(sol_n.value))
                .push("gap", Json::Float(sol_n.gap));
            if i > 0 {
                row.push("sym_diff_prev", Json::Float(study.sym_diff[i - 1]))
                    .push("hausdorff_prev", Json::Float(study.hausdorff[i - 1]));
            }
            rows.push(row);
        }
        report
            .push("stability", Json::Array(rows))
            .push("stabilized", Json::Bool(study.stabilized));
        println!(
            "stability over N = {:?}: stabilized = {}",
            study.radii, study.stabilized
        );
    }
    std::fs::write(out.join("design_report.json"), report.render())?;
    println!(
        "design: value = {}, gap = {}, lambda = {}",
        fmt_f64(sol.value),
        fmt_f64(sol.gap),
        fmt_f64(sol.lambda)
    );
    Ok(0)
}

/// Pencil index selection for the observe report: keep indices whose
/// attenuation at T stays above 1e-6, subsample to at most 12, and shrink
/// further if the H factorization still degenerates.
fn observe_pencil(
    frame: &Frame,
    omega: &ObservationSet,
    domain: &BoxDomain,
    res: &[usize],
    t_end: f64,
) -> Result<Option<(crate::gramian::GramianPencil, f64)>> {
    let viable: Vec<Vec<i64>> = frame
        .params
        .set
        .iter()
        .filter(|n| {
            let p = frame.packet(n);
            packet::attenuation(t_end, &p.xi, p.sigma) >= 1e-6
        })
        .cloned()
        .collect();
    if viable.is_empty() {
        return Ok(None);
    }
    for cap in [12usize, 8, 6, 4, 2, 1] {
        let step = viable.len().div_ceil(cap);
        let subset: Vec<Vec<i64>> = viable.iter().step_by(step.max(1)).cloned().collect();
        let packets: Vec<_> = subset.iter().map(|n| frame.packet(n)).collect();
        match crate::gramian::assemble_pencil(&packets, &subset, omega, domain, res, t_end) {
            Ok(pencil) => {
                let lam = observability::c_det_pencil(&pencil)?;
                return Ok(Some((pencil, lam)));
            }
            Err(Error::PencilDegenerate) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(None)
}

fn cmd_observe(
    config: &ExperimentConfig,
    out: &Path,
    mask_path: Option<&Path>,
    trials: Option<usize>,
    modes_cap: Option<usize>,
) -> Result<i32> {
    let built = build_frame(config)?;
    let domain = config.domain()?;
    let omega = match mask_path {
        Some(path) => ObservationSet::masked(GridField::load(path)?)?,
        None => {
            let mid = 0.5 * (domain.lo[0] + domain.hi[0]);
            ObservationSet::half_space(domain.clone(), config.res.clone(), 0, mid)?
        }
    };
    let trials = trials.unwrap_or(config.trials);
    let modes_cap = modes_cap.unwrap_or(config.modes_cap);

    let (c_rand, rand_index) = observability::c_rand_packets(&built.frame, &omega, config.t_end)?;
    let pencil_out = observe_pencil(&built.frame, &omega, &domain, &config.res, config.t_end)?;
    let (c_spec, spec_mode) =
        observability::c_rand_spectral(&domain, &omega, config.t_end, modes_cap)?;
    let sandwich = observability::sandwich_check(
        &built.frame,
        &omega,
        &domain,
        &config.res,
        config.t_end.min(2e-7),
        trials,
        config.seed,
        config.c_sd,
    )?;

    let mut report = config_header(config);
    report
        .push("c_rand_packets", Json::Float(c_rand))
        .push(
            "c_rand_packets_argmin",
            Json::Array(rand_index.iter().map(|&v| Json::Int(v)).collect()),
        )
        .push(
            "c_det_pencil",
            match &pencil_out {
                Some((_, lam)) => Json::Float(*lam),
                None => Json::Null,
            },
        )
        .push(
            "c_det_pencil_indices",
            match &pencil_out {
                Some((p, _)) => Json::Array(
                    p.indices
                        .iter()
                        .map(|n| Json::Array(n.iter().map(|&v| Json::Int(v)).collect()))
                        .collect(),
                ),
                None => Json::Null,
            },
        )
        .push("c_rand_spectral", Json::Float(c_spec))
        .push(
            "c_rand_spectral_mode",
            Json::Array(spec_mode.iter().map(|&v| Json::UInt(v as u64)).collect()),
        )
        .push("sandwich_t", Json::Float(config.t_end.min(2e-7)))
        .push("sandwich_trials", Json::UInt(sandwich.trials.len() as u64))
        .push("c_ta_empirical", Json::Float(sandwich.c_ta_empirical))
        .push("c_t_empirical", Json::Float(sandwich.c_t_empirical))
        .push("sandwich_regime_ok", Json::Bool(sandwich.regime_ok))
        .push("sandwich_pass", Json::Bool(sandwich.pass))
        .push("seed", Json::UInt(sandwich.seed));
    if let Some((pencil, _)) = &pencil_out {
        std::fs::write(out.join("G.csv"), pencil.g_csv())?;
        std::fs::write(out.join("H.csv"), pencil.h_csv())?;
        std::fs::write(out.join("pencil.json"), pencil.sidecar_json())?;
    }
    std::fs::write(out.join("observe_report.json"), report.render())?;
    println!(
        "observe: c_rand_packets = {}, c_det_pencil = {}, c_rand_spectral = {}, sandwich = {}",
        fmt_f64(c_rand),
        pencil_out
            .as_ref()
            .map(|(_, l)| fmt_f64(*l))
            .unwrap_or_else(|| "degenerate".into()),
        fmt_f64(c_spec),
        if sandwich.pass { "PASS" } else { "FAIL" }
    );
    Ok(0)
}

fn cmd_validate(
    config: &ExperimentConfig,
    out: &Path,
    suite: Option<&str>,
    inject: Option<&str>,
) -> Result<i32> {
    let fault = inject.map(Fault::parse).transpose()?;
    let report = validate::run_suites(config, suite, fault, |s, secs| {
        println!(
            "SUITE {:<10} {} ({:.2}s)",
            s.name,
            if s.pass { "PASS" } else { "FAIL" },
            secs
        );
    })?;
    std::fs::write(out.join("validate_report.json"), report.to_json())?;
    println!(
        "validate: {}",
        if report.all_pass { "ALL PASS" } else { "FAILURES" }
    );
    Ok(if report.all_pass { 0 } else { 4 })
}

fn cmd_kernel(config: &ExperimentConfig, out: &Path) -> Result<i32> {
    let domain = config.domain()?;
    let bump = config.bump();
    let res = config.res[0];
    let mut csv = String::from("t,y,free_kernel,kac_bound\n");
    let times: Vec<f64> = (0..8)
        .map(|k| config.t_end * 2f64.powi(k - 7))
        .collect();
    for &t in &times {
        for i in 0..res {
            let y = domain.lo[0] + (i as f64 + 0.5) * domain.side(0) / res as f64;
            let mut point = bump.x0.clone();
            point[0] = y;
            let free = oracle::free_kernel(t, &bump.x0, &point)?;
            let kac = oracle::kac_bound(t, &point, &domain)?;
            csv.push_str(&format!(
                "{},{},{},{}\n",
                fmt_f64(t),
                fmt_f64(y),
                fmt_f64(free),
                fmt_f64(kac)
            ));
        }
    }
    std::fs::write(out.join("kernel_table.csv"), csv)?;
    let mut report = config_header(config);
    report.push("rows", Json::UInt((times.len() * res) as u64));
    std::fs::write(out.join("kernel_report.json"), report.render())?;
    println!("kernel: wrote {} rows", times.len() * res);
    Ok(0)
}
