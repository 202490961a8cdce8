//! The invariant-suite runner behind `heatpack validate`: every suite
//! checks one block of the library's guarantees on pinned configurations
//! and reports deterministic numbers (timings go to the console, never
//! into the report).

use crate::bump::BumpSpec;
use crate::config::ExperimentConfig;
use crate::design;
use crate::error::{Error, Result};
use crate::gramian::{self, frozen_constants};
use crate::grid::{BoxDomain, GridField, ObservationSet};
use crate::observability;
use crate::oracle;
use crate::packet::{self, EpsilonPolicy, HeatPacket, TruncationMode};
use crate::quad::gl_refine;
use crate::report::{fmt_f64, Json};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Deliberate perturbations for fault-injection tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    /// Perturb one diagonal Gramian value before the bound check.
    GramianDiag,
}

impl Fault {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "gramian-diag" => Ok(Fault::GramianDiag),
            other => Err(Error::Config(format!("unknown fault '{other}'"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SuiteResult {
    pub name: String,
    pub pass: bool,
    /// deterministic key/value detail lines
    pub details: Vec<(String, String)>,
}

impl SuiteResult {
    fn new(name: &str) -> Self {
        SuiteResult {
            name: name.into(),
            pass: true,
            details: Vec::new(),
        }
    }

    fn put(&mut self, key: &str, value: String) {
        self.details.push((key.into(), value));
    }

    fn put_f(&mut self, key: &str, value: f64) {
        self.put(key, fmt_f64(value));
    }

    fn check(&mut self, key: &str, ok: bool) {
        self.put(key, if ok { "pass".into() } else { "FAIL".into() });
        self.pass &= ok;
    }
}

pub struct ValidateReport {
    pub suites: Vec<SuiteResult>,
    pub all_pass: bool,
    pub config_hash: String,
    pub config_canonical: String,
}

impl ValidateReport {
    pub fn to_json(&self) -> String {
        let mut root = Json::obj();
        root.push("config_hash", Json::Str(self.config_hash.clone()));
        let mut suites = Vec::new();
        for s in &self.suites {
            let mut o = Json::obj();
            o.push("name", Json::Str(s.name.clone()))
                .push("pass", Json::Bool(s.pass));
            let mut details = Json::obj();
            for (k, v) in &s.details {
                details.push(k, Json::Str(v.clone()));
            }
            o.push("details", details);
            suites.push(o);
        }
        root.push("suites", Json::Array(suites))
            .push("all_pass", Json::Bool(self.all_pass));
        root.render()
    }
}

pub const SUITE_NAMES: &[&str] = &[
    "frame1d", "frame2d", "packets", "kac", "shorttime", "energy", "gramian", "pencil",
    "sandwich", "saddle", "h1", "h2", "stability",
];

/// Runs the selected suites (all by default) with optional fault injection.
pub fn run_suites(
    config: &ExperimentConfig,
    filter: Option<&str>,
    fault: Option<Fault>,
    mut progress: impl FnMut(&SuiteResult, f64),
) -> Result<ValidateReport> {
    if let Some(name) = filter {
        if !SUITE_NAMES.contains(&name) {
            return Err(Error::Config(format!(
                "unknown suite '{name}' (available: {})",
                SUITE_NAMES.join(", ")
            )));
        }
    }
    let mut suites = Vec::new();
    for &name in SUITE_NAMES {
        if let Some(f) = filter {
            if f != name {
                continue;
            }
        }
        let start = std::time::Instant::now();
        let suite = run_suite(name, config, fault)?;
        progress(&suite, start.elapsed().as_secs_f64());
        suites.push(suite);
    }
    let all_pass = suites.iter().all(|s| s.pass);
    Ok(ValidateReport {
        suites,
        all_pass,
        config_hash: config.content_hash(),
        config_canonical: config.canonical(),
    })
}

fn classic_frame_1d(config: &ExperimentConfig) -> Result<packet::Frame> {
    let bump = BumpSpec::new(0.1, vec![0.0], 0.5);
    let dom = BoxDomain::new(vec![-1.0], vec![1.0])?;
    Ok(packet::build_frame_full(
        &bump,
        config.eta,
        EpsilonPolicy::Fixed(1e-3),
        TruncationMode::Box,
        &dom,
        &[256],
    )?
    .frame)
}

fn run_suite(name: &str, config: &ExperimentConfig, fault: Option<Fault>) -> Result<SuiteResult> {
    match name {
        "frame1d" => suite_frame1d(config),
        "frame2d" => suite_frame2d(config),
        "packets" => suite_packets(),
        "kac" => suite_kac(),
        "shorttime" => suite_shorttime(),
        "energy" => suite_energy(),
        "gramian" => suite_gramian(config, fault),
        "pencil" => suite_pencil(config),
        "sandwich" => suite_sandwich(config),
        "saddle" => suite_saddle(config),
        "h1" => suite_h1(config),
        "h2" => suite_h2(config),
        "stability" => suite_stability(config),
        _ => unreachable!(),
    }
}

/// Frame certificate, 1-D: spectral truncation at eps = e^{-e} meets eta.
fn suite_frame1d(config: &ExperimentConfig) -> Result<SuiteResult> {
    let mut s = SuiteResult::new("frame1d");
    let bump = BumpSpec::new(0.1, vec![0.0], 0.5);
    let dom = BoxDomain::new(vec![-1.0], vec![1.0])?;
    let out = packet::build_frame_full(
        &bump,
        config.eta,
        EpsilonPolicy::Fixed((-std::f64::consts::E).exp()),
        TruncationMode::Spectral,
        &dom,
        &[512],
    )?;
    s.put_f("measured_error", out.frame.measured_error);
    s.put_f("eta", config.eta);
    s.put("retained_modes", out.frame.len().to_string());
    s.check("certificate", out.passed);
    // grid refinement stability: doubling changes the error by < 1%
    let finer = packet::build_frame_full(
        &bump,
        config.eta,
        EpsilonPolicy::Fixed((-std::f64::consts::E).exp()),
        TruncationMode::Spectral,
        &dom,
        &[1024],
    )?;
    let rel = (finer.frame.measured_error - out.frame.measured_error).abs()
        / out.frame.measured_error;
    s.put_f("refinement_change", rel);
    s.check("refinement_stable", rel < 0.01);
    Ok(s)
}

/// Frame certificate, 2-D.
fn suite_frame2d(config: &ExperimentConfig) -> Result<SuiteResult> {
    let mut s = SuiteResult::new("frame2d");
    let bump = BumpSpec::new(0.6, vec![0.0, 0.0], 0.8);
    let dom = BoxDomain::new(vec![-1.5, -1.5], vec![1.5, 1.5])?;
    let out = packet::build_frame_full(
        &bump,
        config.eta,
        EpsilonPolicy::Fixed((-std::f64::consts::E).exp()),
        TruncationMode::Spectral,
        &dom,
        &[128, 128],
    )?;
    s.put_f("measured_error", out.frame.measured_error);
    s.put("retained_modes", out.frame.len().to_string());
    s.check("certificate", out.passed);
    Ok(s)
}

/// Packet analytics: unit norm, evolved-norm closed form, overlaps.
fn suite_packets() -> Result<SuiteResult> {
    let mut s = SuiteResult::new("packets");
    let sigma = 0.7;
    // unit initial norm within 1e-8 (quadrature over an 8 sigma box)
    let p = HeatPacket::new(vec![0.2], vec![3.0], sigma);
    let norm = gl_refine(&[0.2 - 8.0 * sigma], &[0.2 + 8.0 * sigma], 64, 1e-12, 8, |x| {
        p.value(0.0, x).norm_sqr()
    })?;
    s.put_f("initial_norm", norm);
    s.check("unit_norm", (norm - 1.0).abs() <= 1e-8);

    // evolved norm closed form within 1e-6 relative on a 5x5 (t, xi) sweep
    let mut worst: f64 = 0.0;
    for &t in &[0.0, 0.05, 0.2, 0.6, 1.3] {
        for &xi in &[0.0, 0.5, 1.0, 2.0, 4.0] {
            let p = HeatPacket::new(vec![0.0], vec![xi], sigma);
            let half = 8.0 * (sigma * sigma + t).sqrt() + 1.0;
            let v = gl_refine(&[-half], &[half], 64, 1e-12, 8, |x| {
                p.value(t, x).norm_sqr()
            })?;
            worst = worst.max((v - p.norm_sq(t)).abs() / p.norm_sq(t));
        }
    }
    s.put_f("evolved_norm_worst_rel", worst);
    s.check("evolved_norm", worst <= 1e-6);

    // overlap formula within 1e-8
    let (sig, ll) = packet::sigma_lattice(0.1, 0.5, 1e-3);
    let mut worst_overlap: f64 = 0.0;
    for &(n, m) in &[(0i64, 1i64), (2, -1), (3, 3), (-4, 2), (5, 1)] {
        let pn = HeatPacket::new(vec![0.0], vec![n as f64 / ll], sig);
        let pm = HeatPacket::new(vec![0.0], vec![m as f64 / ll], sig);
        let half = 10.0 * sig;
        let (xq, wq) = crate::quad::gl_on_interval(512, -half, half);
        let mut acc = Complex64::new(0.0, 0.0);
        for (&x, &w) in xq.iter().zip(&wq) {
            acc += pn.value(0.0, &[x]) * pm.value(0.0, &[x]).conj() * w;
        }
        let gamma = (-(sig * sig) * ((n - m) as f64 / ll).powi(2) / 2.0).exp();
        worst_overlap = worst_overlap.max((acc.re - gamma).abs()).max(acc.im.abs());
    }
    s.put_f("overlap_worst_abs", worst_overlap);
    s.check("overlap", worst_overlap <= 1e-8);
    Ok(s)
}

/// Kac sandwich at 256 cells within 1e-4 absolute.
fn suite_kac() -> Result<SuiteResult> {
    let mut s = SuiteResult::new("kac");
    let bump = BumpSpec::new(0.75, vec![0.0], 0.88);
    let dom = BoxDomain::new(vec![-1.7], vec![1.7])?;
    let rep = oracle::kac_sandwich_check(&bump, &dom, &[256], 1e-4, 1e-4)?;
    s.put_f("min_difference", rep.min_difference);
    s.put_f("max_excess", rep.max_excess);
    s.put_f("tolerance", rep.tol);
    s.check("sandwich", rep.pass);
    Ok(s)
}

/// Whole-space vs domain evolution and the short-time bootstrap.
fn suite_shorttime() -> Result<SuiteResult> {
    let mut s = SuiteResult::new("shorttime");
    let bump = BumpSpec::new(0.3, vec![0.0], 0.6);
    let dom = BoxDomain::new(vec![-1.0], vec![1.0])?;
    let rep = oracle::whole_vs_domain_check(&bump, &dom, &[2048], 1e-4, None, 0.1)?;
    s.put_f("whole_vs_domain_sup", rep.measured_sup);
    s.put_f("whole_vs_domain_bound", rep.bound);
    s.check("whole_vs_domain", rep.pass);

    let bump1 = BumpSpec::new(0.1, vec![0.0], 0.5);
    let rep = oracle::short_time_check(&bump1, &dom, &[512], 2e-7, None, 0.1, 1.0)?;
    s.put_f("short_time_sup", rep.measured_sup);
    s.put_f("short_time_eta0", rep.eta0);
    s.put_f("short_time_regime_bound", rep.regime_bound);
    s.check("short_time", rep.pass);
    Ok(s)
}

/// Discrete energy identity, monotone decay, second-order convergence.
fn suite_energy() -> Result<SuiteResult> {
    let mut s = SuiteResult::new("energy");
    let dom = BoxDomain::new(vec![0.0], vec![1.0])?;
    let first_mode = |res: usize| -> Result<(f64, f64)> {
        let g = GridField::from_fn(dom.clone(), vec![res], |x| {
            (std::f64::consts::PI * x[0]).sin()
        })?;
        let sol = oracle::fd_solve(&g, 0.1, &[0.1])?;
        let rep = oracle::energy_check(&sol, 1e-4);
        // relative error against the exact decay
        let field = &sol.snapshots[0].1;
        let decay = (-std::f64::consts::PI.powi(2) * 0.1).exp();
        let mut worst: f64 = 0.0;
        for (i, x) in field.cell_centers().enumerate() {
            let exact = decay * (std::f64::consts::PI * x[0]).sin();
            worst = worst.max((field.real()[i] - exact).abs() / decay);
        }
        if !rep.monotone {
            return Err(Error::AssertionFailure("norm not monotone".into()));
        }
        Ok((rep.identity_rel_err, worst))
    };
    let (id64, e64) = first_mode(64)?;
    let (id128, e128) = first_mode(128)?;
    let (id256, e256) = first_mode(256)?;
    let _ = (id64, id128);
    s.put_f("energy_identity_rel_256", id256);
    s.check("energy_identity", id256 <= 1e-4);
    let f1 = e64 / e128;
    let f2 = e128 / e256;
    s.put_f("convergence_factor_64_128", f1);
    s.put_f("convergence_factor_128_256", f2);
    s.check(
        "second_order",
        (3.5..=4.5).contains(&f1) && (3.5..=4.5).contains(&f2),
    );
    s.check("first_mode_tolerance", e256 <= 1e-3);
    Ok(s)
}

fn pencil_indices_stride4() -> Vec<Vec<i64>> {
    (-38..=38).step_by(4).map(|n| vec![n]).collect()
}

/// Gramian diagonal sandwich and off-diagonal bounds on a 20-index pencil.
fn suite_gramian(config: &ExperimentConfig, fault: Option<Fault>) -> Result<SuiteResult> {
    let mut s = SuiteResult::new("gramian");
    let frame = classic_frame_1d(config)?;
    let sigma = frame.params.sigma;
    let sig2 = sigma * sigma;
    let dom = BoxDomain::new(vec![-2.3], vec![2.3])?;
    let omega = ObservationSet::half_space(dom.clone(), vec![256], 0, 0.0)?;
    let t_end = 0.25 * sig2;
    let consts = frozen_constants(1);
    let indices = pencil_indices_stride4();
    s.put("pencil_size", indices.len().to_string());

    let mut diag_violations = 0usize;
    let mut injected_caught = false;
    for (pos, n) in indices.iter().enumerate() {
        let p = frame.packet(n);
        match gramian::diag_bounds(&p, &omega, &dom, t_end, &consts) {
            Ok(b) => {
                if fault == Some(Fault::GramianDiag) && pos == 0 {
                    // perturb the value the way a broken quadrature would
                    let bad = b.value * 3.0;
                    if !(b.lower <= bad && bad <= b.upper) {
                        injected_caught = true;
                        diag_violations += 1;
                    }
                }
            }
            Err(Error::BoundViolation { .. }) => diag_violations += 1,
            Err(e) => return Err(e),
        }
    }
    s.put("diag_violations", diag_violations.to_string());
    if fault == Some(Fault::GramianDiag) {
        s.put("fault_injected", "gramian-diag".into());
        s.check("diag_bounds", diag_violations == 0 && !injected_caught);
    } else {
        s.check("diag_bounds", diag_violations == 0);
    }

    use rayon::prelude::*;
    let pairs: Vec<(usize, usize)> = (0..indices.len())
        .flat_map(|i| ((i + 1)..indices.len()).map(move |j| (i, j)))
        .collect();
    let results: Vec<Result<gramian::OffdiagBound>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            gramian::offdiag_bound(
                &frame.packet(&indices[i]),
                &frame.packet(&indices[j]),
                &omega,
                &dom,
                t_end,
                &consts,
            )
        })
        .collect();
    let mut offdiag_violations = 0usize;
    for r in results {
        match r {
            Ok(_) => {}
            Err(Error::BoundViolation { .. }) => offdiag_violations += 1,
            Err(e) => return Err(e),
        }
    }
    s.put("offdiag_pairs", pairs.len().to_string());
    s.put("offdiag_violations", offdiag_violations.to_string());
    s.check("offdiag_bounds", offdiag_violations == 0);
    Ok(s)
}

/// Pencil sanity: H positive definite, lambda_min below random Rayleigh
/// quotients, equality at the minimizing eigenvector.
fn suite_pencil(config: &ExperimentConfig) -> Result<SuiteResult> {
    let mut s = SuiteResult::new("pencil");
    let frame = classic_frame_1d(config)?;
    let sigma = frame.params.sigma;
    let dom = BoxDomain::new(vec![-2.3], vec![2.3])?;
    let omega = ObservationSet::half_space(dom.clone(), vec![256], 0, 0.0)?;
    let t_end = 0.01 * sigma * sigma;
    let indices = pencil_indices_stride4();
    let packets: Vec<HeatPacket> = indices.iter().map(|n| frame.packet(n)).collect();
    let pencil = gramian::assemble_pencil(&packets, &indices, &omega, &dom, &[256], t_end)?;
    s.put("pencil_size", pencil.size().to_string());
    s.check("h_positive_definite", true); // assemble_pencil verified Cholesky
    let lam = observability::c_det_pencil(&pencil)?;
    s.put_f("lambda_min", lam);
    s.check("lambda_nonnegative", lam >= 0.0);

    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut min_quotient = f64::INFINITY;
    let mut below = true;
    for _ in 0..100 {
        let c: Vec<Complex64> = (0..pencil.size())
            .map(|_| Complex64::new(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5))
            .collect();
        let q = observability::rayleigh_quotient(&pencil, &c);
        min_quotient = min_quotient.min(q);
        if q < lam - 1e-10 {
            below = false;
        }
    }
    s.put_f("min_random_rayleigh", min_quotient);
    s.check("lambda_below_samples", below);
    let v = observability::pencil_minimizing_vector(&pencil)?;
    let q = observability::rayleigh_quotient(&pencil, &v);
    s.put_f("eigenvector_quotient", q);
    s.check("eigenvector_gap", (q - lam).abs() <= 1e-6 * lam.max(1e-12));
    Ok(s)
}

/// Packet-vs-FD sandwich over random-coefficient trials.
fn suite_sandwich(config: &ExperimentConfig) -> Result<SuiteResult> {
    let mut s = SuiteResult::new("sandwich");
    let frame = classic_frame_1d(config)?;
    let dom = BoxDomain::new(vec![-1.0], vec![1.0])?;
    let omega = ObservationSet::half_space(dom.clone(), vec![256], 0, 0.0)?;
    let rep = observability::sandwich_check(
        &frame,
        &omega,
        &dom,
        &[256],
        2e-7,
        config.trials,
        config.seed,
        config.c_sd,
    )?;
    s.put("trials", rep.trials.len().to_string());
    s.put_f("c_ta_empirical", rep.c_ta_empirical);
    s.put_f("c_t_empirical", rep.c_t_empirical);
    s.put_f("regime_bound", rep.regime_bound);
    s.put_f("taper_removed_max", rep.taper_removed_max);
    s.check("regime", rep.regime_ok);
    s.check("sandwich", rep.pass);
    s.check("c_ta_positive", rep.c_ta_empirical > 0.0);
    Ok(s)
}

/// Saddle exactness against exhaustive enumeration and the shipped gap.
fn suite_saddle(config: &ExperimentConfig) -> Result<SuiteResult> {
    let mut s = SuiteResult::new("saddle");
    let frame = classic_frame_1d(config)?;
    let dom = BoxDomain::new(vec![-1.0], vec![1.0])?;

    // 16-cell exhaustive oracle on three packet densities
    let g = 16usize;
    let densities: Vec<design::PacketEnergyDensity> = [0i64, 1, 2]
        .iter()
        .map(|&n| design::energy_density(&frame.packet(&[n]), &[n], 0.05, &dom, &[g]))
        .collect::<Result<_>>()?;
    let vol = densities[0].rho.cell_volume();
    let total = dom.volume();
    let mut worst_match: f64 = 0.0;
    for &m in &[0.5, 0.3] {
        let budget = m * total / vol;
        let k = budget.floor() as usize;
        let f = budget - k as f64;
        let mut brute = f64::NEG_INFINITY;
        for bits in 0u32..(1 << g) {
            if bits.count_ones() as usize != k {
                continue;
            }
            let base: Vec<f64> = (0..g)
                .map(|i| if bits & (1 << i) != 0 { 1.0 } else { 0.0 })
                .collect();
            let eval = |a: &[f64]| -> f64 {
                densities
                    .iter()
                    .map(|d| {
                        a.iter()
                            .zip(d.rho.real())
                            .map(|(ai, ri)| ai * ri)
                            .sum::<f64>()
                            * vol
                    })
                    .fold(f64::INFINITY, f64::min)
            };
            if f < 1e-12 {
                brute = brute.max(eval(&base));
            } else {
                for j in 0..g {
                    if base[j] == 0.0 {
                        let mut a = base.clone();
                        a[j] = f;
                        brute = brute.max(eval(&a));
                    }
                }
            }
        }
        let sol = design::saddle_solve(&densities, m, 50_000, 1e-9, config.step_c)?;
        worst_match = worst_match.max((sol.value - brute).abs() / brute.abs().max(1e-300));
    }
    s.put_f("exhaustive_worst_rel", worst_match);
    s.check("exhaustive_match", worst_match <= 1e-6);

    // shipped config: full radius-N solve, gap <= tol
    let densities = design::densities_for_frame(
        &frame,
        config.n_radius,
        config.t_end,
        &dom,
        &config.res,
    )?;
    let sol = design::saddle_solve_full(
        &densities,
        config.m_fraction,
        config.iters,
        config.tol.min(1e-6),
        config.step_c,
    )?;
    s.put_f("shipped_value", sol.value);
    s.put_f("shipped_gap", sol.gap);
    s.put("shipped_argmin", format!("{:?}", sol.argmin_index));
    s.check("shipped_gap_small", sol.gap <= 1e-6);
    s.check("characteristic_mask", sol.fractional_cells <= 1);
    Ok(s)
}

/// Level-set thinness of the shipped design mixture.
fn suite_h1(config: &ExperimentConfig) -> Result<SuiteResult> {
    let mut s = SuiteResult::new("h1");
    let frame = classic_frame_1d(config)?;
    let dom = BoxDomain::new(vec![-1.0], vec![1.0])?;
    let densities = design::densities_for_frame(&frame, 4.0, config.t_end, &dom, &[256])?;
    let alpha = vec![1.0 / densities.len() as f64; densities.len()];
    let rep = design::h1_levelset_check(&alpha, &densities)?;
    s.put_f("flagged_measure", rep.flagged_measure);
    s.put_f("layer_allowance", rep.layer_allowance);
    s.check("thin_level_sets", rep.pass);
    s.check("not_degenerate", !rep.degenerate);
    Ok(s)
}

/// High-frequency quotient dominance (H2).
fn suite_h2(config: &ExperimentConfig) -> Result<SuiteResult> {
    let mut s = SuiteResult::new("h2");
    let frame = classic_frame_1d(config)?;
    let dom = BoxDomain::new(vec![-1.0], vec![1.0])?;
    let omega = ObservationSet::half_space(dom.clone(), vec![256], 0, 0.0)?;
    let consts = frozen_constants(1);
    let rep = design::h2_gamma_check(&frame, &omega, config.t_end, &dom, &[256], &consts)?;
    s.put_f("gamma1", rep.gamma1);
    s.put_f("top_quotient", rep.top_quotient);
    s.put_f("u1_upper", rep.u1_upper);
    s.put_f("u2_lower", rep.u2_lower);
    s.put("lowest_index", format!("{:?}", rep.lowest_index));
    s.put("top_index", format!("{:?}", rep.top_index));
    s.check("quotient_dominance", rep.pass);
    Ok(s)
}

/// Truncation stabilization across N in {4, 8, 16, 32}.
fn suite_stability(config: &ExperimentConfig) -> Result<SuiteResult> {
    let mut s = SuiteResult::new("stability");
    let frame = classic_frame_1d(config)?;
    let dom = BoxDomain::new(vec![-1.0], vec![1.0])?;
    let rep = design::stability_study(
        &frame,
        config.m_fraction,
        config.t_end,
        &[4.0, 8.0, 16.0, 32.0],
        &dom,
        &[256],
        config.iters,
        config.tol.min(1e-6),
    )?;
    for (i, sd) in rep.sym_diff.iter().enumerate() {
        s.put_f(&format!("sym_diff_{}", i), *sd);
    }
    let last_sym = *rep.sym_diff.last().unwrap();
    s.check("two_largest_agree", rep.stabilized && last_sym == 0.0);
    Ok(s)
}
