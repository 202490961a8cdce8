//! Gramian matrices of evolved heat packets over the observation set, the
//! diagonal/off-diagonal bounds with per-dimension calibrated constants,
//! and the rational erfc approximation.

use crate::error::{Error, Result};
use crate::grid::{BoxDomain, GridField, ObservationSet};
use crate::packet::HeatPacket;
use crate::quad::{gl_on_interval, simpson_nodes, simpson_refine};
use crate::report::{fmt_f64, hash_hex, Json};
use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

pub use crate::packet::attenuation;

/// Reference values of erf(1) and erfc(1) used in the bound prefactors.
pub const ERF_1: f64 = 0.8427007929497149;
pub const ERFC_1: f64 = 0.15729920705028513;

/// Rational approximation of erfc for b >= 0:
/// (1 + a1 b + a2 b^2 + a3 b^3 + a4 b^4)^{-4}, max error ~ 5e-4.
pub fn erfc_rational(b: f64) -> Result<f64> {
    if b < 0.0 {
        return Err(Error::NegativeArgument(b));
    }
    const A1: f64 = 0.278393;
    const A2: f64 = 0.230389;
    const A3: f64 = 0.000972;
    const A4: f64 = 0.078108;
    let p = 1.0 + A1 * b + A2 * b * b + A3 * b.powi(3) + A4 * b.powi(4);
    Ok(p.powi(-4))
}

/// |omega ∩ B(x0, sqrt(sigma^2+t))| / |B| with B of radius 2 sqrt(sigma^2+t).
pub fn ball_fraction(omega: &ObservationSet, x0: &[f64], t: f64, sigma: f64) -> f64 {
    let radius = 2.0 * (sigma * sigma + t).sqrt();
    match omega {
        ObservationSet::FullSpace => 1.0,
        ObservationSet::Masked(mask) => {
            let d = mask.dim();
            let ball_vol = match d {
                1 => 2.0 * radius,
                2 => std::f64::consts::PI * radius * radius,
                _ => 4.0 / 3.0 * std::f64::consts::PI * radius.powi(3),
            };
            let vol = mask.cell_volume();
            let mut inter = 0.0;
            for (i, x) in mask.cell_centers().enumerate() {
                let r2: f64 = x.iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum();
                if r2.sqrt() <= radius {
                    inter += mask.real()[i] * vol;
                }
            }
            inter / ball_vol
        }
    }
}

/// Spatial quadrature rule over the observation set: points and weights
/// (mask value folded into the weight).
fn spatial_rule(
    omega: &ObservationSet,
    centers: &[&[f64]],
    sigma: f64,
    t_end: f64,
    order: usize,
) -> (Vec<Vec<f64>>, Vec<f64>) {
    match omega {
        ObservationSet::Masked(mask) => {
            let d = mask.dim();
            let (ref_pts, ref_ws): (Vec<Vec<f64>>, Vec<f64>) =
                crate::quad::gl_tensor(order, &vec![-0.5; d], &vec![0.5; d]);
            let mut pts = Vec::new();
            let mut ws = Vec::new();
            let spacing: Vec<f64> = (0..d).map(|j| mask.spacing(j)).collect();
            let vol = mask.cell_volume();
            for (i, c) in mask.cell_centers().enumerate() {
                let m = mask.real()[i];
                if m == 0.0 {
                    continue;
                }
                for (rp, &rw) in ref_pts.iter().zip(&ref_ws) {
                    let p: Vec<f64> = (0..d).map(|j| c[j] + rp[j] * spacing[j]).collect();
                    pts.push(p);
                    ws.push(rw * vol * m);
                }
            }
            (pts, ws)
        }
        ObservationSet::FullSpace => {
            // bounding box around the packet centers, 8.5 effective widths
            let d = centers[0].len();
            let pad = 8.5 * (sigma * sigma + t_end).sqrt();
            let lo: Vec<f64> = (0..d)
                .map(|j| centers.iter().map(|c| c[j]).fold(f64::INFINITY, f64::min) - pad)
                .collect();
            let hi: Vec<f64> = (0..d)
                .map(|j| {
                    centers.iter().map(|c| c[j]).fold(f64::NEG_INFINITY, f64::max) + pad
                })
                .collect();
            crate::quad::gl_tensor(32 * order, &lo, &hi)
        }
    }
}

const ENTRY_TOL: f64 = 1e-8;

/// Effective integration window: past it the integrand has decayed below
/// e^{-35} of its initial size, so the truncated tail is invisible at the
/// 1e-8 tolerance.
fn time_window(pn: &HeatPacket, pm: &HeatPacket, t_end: f64) -> f64 {
    xi_window(&pn.xi, &pm.xi, pn.sigma, t_end)
}

/// Truncation point past which sqrt(A_n A_m) has decayed below e^{-35}.
fn xi_window(xi_n: &[f64], xi_m: &[f64], sigma: f64, t_end: f64) -> f64 {
    let sig2 = sigma * sigma;
    let xi2: f64 = xi_n.iter().map(|x| x * x).sum::<f64>()
        + xi_m.iter().map(|x| x * x).sum::<f64>();
    let rate = sig2 * xi2 / (sig2 + t_end);
    if rate <= 0.0 {
        t_end
    } else {
        t_end.min(35.0 / rate)
    }
}

/// G_nm = int_0^T int_omega phi_n conj(phi_m) dx dt by tensor Gauss-Legendre
/// in space and composite Simpson in time, refined to 1e-8 relative.
pub fn gramian_entry(
    pn: &HeatPacket,
    pm: &HeatPacket,
    omega: &ObservationSet,
    t_end: f64,
) -> Result<Complex64> {
    if (pn.sigma - pm.sigma).abs() > 1e-15 {
        return Err(Error::PreconditionViolation(
            "gramian entries require packets of equal width".into(),
        ));
    }
    if t_end <= 0.0 {
        return Err(Error::NonpositiveTime(t_end));
    }
    let window = time_window(pn, pm, t_end);
    let order_cap = if pn.dim() == 1 { 8 } else { 4 };
    let mut prev = Complex64::new(f64::NAN, 0.0);
    let mut last_change = f64::NAN;
    let mut intervals = 32usize;
    let mut order = 2usize;
    for _ in 0..8 {
        let centers: Vec<&[f64]> = vec![&pn.x0, &pm.x0];
        let (pts, ws) = spatial_rule(omega, &centers, pn.sigma, t_end, order);
        let tnodes = simpson_nodes(window, intervals);
        let mut val = Complex64::new(0.0, 0.0);
        for &(t, tw) in &tnodes {
            let mut acc = Complex64::new(0.0, 0.0);
            for (p, &w) in pts.iter().zip(&ws) {
                acc += pn.value(t, p) * pm.value(t, p).conj() * w;
            }
            val += acc * tw;
        }
        if prev.re.is_finite() {
            last_change = (val - prev).norm() / val.norm().max(1e-300);
            if last_change < ENTRY_TOL {
                return Ok(val);
            }
        }
        prev = val;
        intervals *= 2;
        order = (order * 2).min(order_cap);
    }
    Err(Error::QuadratureNonConvergence {
        levels: 8,
        last_change,
    })
}

/// Same integral with Gauss-Legendre panels in time (spectrally accurate
/// on the decay window); used for batch pencil assembly. Agrees with the
/// Simpson-refined `gramian_entry` to ~1e-8 (tested).
pub(crate) fn gramian_entry_fast(
    pn: &HeatPacket,
    pm: &HeatPacket,
    omega: &ObservationSet,
    t_end: f64,
) -> Result<Complex64> {
    if t_end <= 0.0 {
        return Err(Error::NonpositiveTime(t_end));
    }
    let window = time_window(pn, pm, t_end);
    let order_cap = if pn.dim() == 1 { 8 } else { 4 };
    let mut prev = Complex64::new(f64::NAN, 0.0);
    let mut last_change = f64::NAN;
    let mut tnodes_n = 48usize;
    let mut order = 2usize;
    for _ in 0..5 {
        let centers: Vec<&[f64]> = vec![&pn.x0, &pm.x0];
        let (pts, ws) = spatial_rule(omega, &centers, pn.sigma, t_end, order);
        let (tq, tw) = gl_on_interval(tnodes_n, 0.0, window);
        let mut val = Complex64::new(0.0, 0.0);
        for (&t, &wt) in tq.iter().zip(&tw) {
            let mut acc = Complex64::new(0.0, 0.0);
            for (p, &w) in pts.iter().zip(&ws) {
                acc += pn.value(t, p) * pm.value(t, p).conj() * w;
            }
            val += acc * wt;
        }
        if prev.re.is_finite() {
            last_change = (val - prev).norm() / val.norm().max(1e-300);
            if last_change < ENTRY_TOL {
                return Ok(val);
            }
        }
        prev = val;
        tnodes_n *= 2;
        order = (order * 2).min(order_cap);
    }
    Err(Error::QuadratureNonConvergence {
        levels: 5,
        last_change,
    })
}

/// Hermitian pencil (G, H) over a list of lattice indices.
#[derive(Clone, Debug)]
pub struct GramianPencil {
    pub indices: Vec<Vec<i64>>,
    pub g: DMatrix<Complex64>,
    pub h: DMatrix<Complex64>,
    pub horizon: f64,
    pub mask_hash: String,
}

/// Assembles G (over omega x [0,T]) and H (over Omega at time T) for the
/// given packets; symmetrizes and verifies H by Cholesky.
pub fn assemble_pencil(
    packets: &[HeatPacket],
    indices: &[Vec<i64>],
    omega: &ObservationSet,
    domain: &BoxDomain,
    domain_res: &[usize],
    t_end: f64,
) -> Result<GramianPencil> {
    if packets.is_empty() {
        return Err(Error::Config("empty pencil".into()));
    }
    let sigma = packets[0].sigma;
    let m = packets.len();
    let centers: Vec<&[f64]> = packets.iter().map(|p| p.x0.as_slice()).collect();

    // G entry by entry (each pair carries its own decay window)
    let pair_list: Vec<(usize, usize)> = (0..m)
        .flat_map(|i| (i..m).map(move |j| (i, j)))
        .collect();
    let entries: Vec<Result<Complex64>> = pair_list
        .par_iter()
        .map(|&(i, j)| gramian_entry_fast(&packets[i], &packets[j], omega, t_end))
        .collect();
    let mut g = DMatrix::<Complex64>::zeros(m, m);
    for (&(i, j), entry) in pair_list.iter().zip(entries) {
        let v = entry?;
        g[(i, j)] = v;
        g[(j, i)] = v.conj();
    }

    // H over the full domain at time T (unit mask on the domain grid)
    let full = ObservationSet::Masked(GridField::from_fn(
        domain.clone(),
        domain_res.to_vec(),
        |_| 1.0,
    )?);
    let mut h = DMatrix::<Complex64>::zeros(m, m);
    let mut h_prev: Option<DMatrix<Complex64>> = None;
    let mut order_h = 2usize;
    for _ in 0..5 {
        let (pts, ws) = spatial_rule(&full, &centers, sigma, t_end, order_h);
        let mut v = DMatrix::<Complex64>::zeros(m, pts.len());
        for (i, p) in packets.iter().enumerate() {
            for (q, x) in pts.iter().enumerate() {
                v[(i, q)] = p.value(t_end, x);
            }
        }
        let mut vw = v.clone();
        for q in 0..pts.len() {
            for i in 0..m {
                vw[(i, q)] *= ws[q];
            }
        }
        let acc = &vw * v.adjoint();
        if let Some(prev) = &h_prev {
            if (&acc - prev).norm() / acc.norm().max(1e-300) < ENTRY_TOL {
                h = acc;
                break;
            }
        }
        h = acc.clone();
        h_prev = Some(acc);
        order_h = (order_h * 2).min(16);
    }

    // enforce Hermitian symmetry by averaging
    let g = (&g + &g.adjoint()) * Complex64::new(0.5, 0.0);
    let h = (&h + &h.adjoint()) * Complex64::new(0.5, 0.0);

    match h.clone().cholesky() {
        None => return Err(Error::PencilDegenerate),
        Some(chol) => {
            let l = chol.l();
            let scale = (0..m).map(|k| h[(k, k)].re).fold(0.0f64, f64::max);
            let min_pivot = (0..m).map(|k| l[(k, k)].re.powi(2)).fold(f64::INFINITY, f64::min);
            #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN pivots must fail
            if !(min_pivot > 1e-13 * scale) {
                return Err(Error::PencilDegenerate);
            }
        }
    }

    let mask_hash = match omega {
        ObservationSet::Masked(mask) => hash_hex(mask.write_text().as_bytes()),
        ObservationSet::FullSpace => "fullspace".to_string(),
    };
    Ok(GramianPencil {
        indices: indices.to_vec(),
        g,
        h,
        horizon: t_end,
        mask_hash,
    })
}

impl GramianPencil {
    pub fn size(&self) -> usize {
        self.indices.len()
    }

    fn matrix_csv(m: &DMatrix<Complex64>) -> String {
        let mut out = String::new();
        for i in 0..m.nrows() {
            let row: Vec<String> = (0..m.ncols())
                .map(|j| format!("{} {}", fmt_f64(m[(i, j)].re), fmt_f64(m[(i, j)].im)))
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn g_csv(&self) -> String {
        Self::matrix_csv(&self.g)
    }

    pub fn h_csv(&self) -> String {
        Self::matrix_csv(&self.h)
    }

    pub fn sidecar_json(&self) -> String {
        let mut root = Json::obj();
        root.push(
            "indices",
            Json::Array(
                self.indices
                    .iter()
                    .map(|n| Json::Array(n.iter().map(|&v| Json::Int(v)).collect()))
                    .collect(),
            ),
        )
        .push("T", Json::Float(self.horizon))
        .push("mask_hash", Json::Str(self.mask_hash.clone()));
        root.render()
    }
}

/// Calibrated order-constants of the Prop-style bounds, one set per
/// dimension. The paper fixes them only as "a constant depending on the
/// dimension"; `calibrate` derives them from a canonical sweep and the
/// frozen values below carry a 1.25x safety margin.
#[derive(Clone, Copy, Debug)]
pub struct CalibrationConstants {
    pub c_a: f64,
    pub c_b: f64,
    pub c_c: f64,
}

/// Frozen constants from a `calibrate` run (margins applied).
pub fn frozen_constants(d: usize) -> CalibrationConstants {
    match d {
        1 => CalibrationConstants {
            c_a: 1.265646,
            c_b: 0.934675,
            c_c: 0.298719,
        },
        _ => CalibrationConstants {
            c_a: 0.098551,
            c_b: 0.100892,
            c_c: 0.010529,
        },
    }
}

/// Lower/upper diagonal bounds (a, b) and the quadrature value.
#[derive(Clone, Copy, Debug)]
pub struct DiagBounds {
    pub lower: f64,
    pub upper: f64,
    pub value: f64,
}

fn check_hypotheses(domain: &BoxDomain, sigma: f64, t_end: f64) -> Result<()> {
    let sig2 = sigma * sigma;
    let inside = (0..domain.dim()).all(|j| domain.lo[j] >= -sig2 && domain.hi[j] <= sig2);
    if !inside {
        return Err(Error::HypothesisViolation(format!(
            "Omega not contained in [-sigma^2, sigma^2]^d (sigma^2 = {sig2})"
        )));
    }
    if !(t_end > 0.0 && t_end < sig2) {
        return Err(Error::HypothesisViolation(format!(
            "T = {t_end} outside (0, sigma^2 = {sig2})"
        )));
    }
    Ok(())
}

/// Diagonal sandwich: C_a e^{-1} sigma^d I <= G_nn <= C_b (1+erfc 1)/erf 1
/// sigma^d I with I = int_0^T ballfrac A dt.
pub fn diag_bounds(
    packet: &HeatPacket,
    omega: &ObservationSet,
    domain: &BoxDomain,
    t_end: f64,
    consts: &CalibrationConstants,
) -> Result<DiagBounds> {
    check_hypotheses(domain, packet.sigma, t_end)?;
    let d = packet.dim() as f64;
    let window = xi_window(&packet.xi, &packet.xi, packet.sigma, t_end);
    let shape = simpson_refine(window, 32, 1e-10, 14, |t| {
        ball_fraction(omega, &packet.x0, t, packet.sigma)
            * attenuation(t, &packet.xi, packet.sigma)
    })?;
    let sig_d = packet.sigma.powf(d);
    let lower = consts.c_a * (-1.0f64).exp() * sig_d * shape;
    let upper = consts.c_b * (1.0 + ERFC_1) / ERF_1 * sig_d * shape;
    let value = gramian_entry(packet, packet, omega, t_end)?;
    let value = value.re;
    if !(lower <= value && value <= upper) {
        return Err(Error::BoundViolation {
            index: format!("{:?}", packet.xi),
            lower,
            value,
            upper,
        });
    }
    Ok(DiagBounds {
        lower,
        upper,
        value,
    })
}

/// Off-diagonal bound c): |G_nm| <= C_c |omega| int (sig^2/s)^{d/2}
/// A^{1/2}(t,n) A^{1/2}(t,m) exp(-|x0-y0|^2/(4s)) dt.
#[derive(Clone, Copy, Debug)]
pub struct OffdiagBound {
    pub bound: f64,
    pub value_abs: f64,
}

pub fn offdiag_bound(
    pn: &HeatPacket,
    pm: &HeatPacket,
    omega: &ObservationSet,
    domain: &BoxDomain,
    t_end: f64,
    consts: &CalibrationConstants,
) -> Result<OffdiagBound> {
    check_hypotheses(domain, pn.sigma, t_end)?;
    let measure = omega.measure().ok_or_else(|| {
        Error::PreconditionViolation("off-diagonal bound needs a finite-measure mask".into())
    })?;
    let d = pn.dim() as f64;
    let sig2 = pn.sigma * pn.sigma;
    let dist2: f64 = pn
        .x0
        .iter()
        .zip(&pm.x0)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let window = xi_window(&pn.xi, &pm.xi, pn.sigma, t_end);
    let integral = simpson_refine(window, 32, 1e-10, 14, |t| {
        let s = sig2 + t;
        (sig2 / s).powf(d / 2.0)
            * (attenuation(t, &pn.xi, pn.sigma) * attenuation(t, &pm.xi, pm.sigma)).sqrt()
            * (-dist2 / (4.0 * s)).exp()
    })?;
    let bound = consts.c_c * measure * integral;
    // the GL-time path agrees with the Simpson one to ~1e-8 (tested) and
    // keeps 20-index pair sweeps fast
    let value = gramian_entry_fast(pn, pm, omega, t_end)?;
    let value_abs = value.norm();
    if value_abs > bound {
        return Err(Error::BoundViolation {
            index: format!("{:?}/{:?}", pn.xi, pm.xi),
            lower: 0.0,
            value: value_abs,
            upper: bound,
        });
    }
    Ok(OffdiagBound { bound, value_abs })
}

/// Canonical calibration sweep. Returns raw extremal ratios with the 1.25x
/// margin already applied (min ratio / 1.25 for the lower constant, max
/// ratio * 1.25 for upper ones).
pub fn calibrate(d: usize) -> Result<CalibrationConstants> {
    let (sigma, lattice_l) = crate::packet::sigma_lattice(
        if d == 1 { 0.1 } else { 0.5 },
        if d == 1 { 0.5 } else { 0.75 },
        1e-3,
    );
    let sig2 = sigma * sigma;
    let (domain, res): (BoxDomain, Vec<usize>) = if d == 1 {
        (BoxDomain::new(vec![-2.3], vec![2.3])?, vec![256])
    } else {
        (
            BoxDomain::new(vec![-1.5, -1.5], vec![1.5, 1.5])?,
            vec![48, 48],
        )
    };
    let x0 = vec![0.0; d];
    let eighth = 0.125f64.powf(1.0 / d as f64);
    let masks: Vec<ObservationSet> = vec![
        ObservationSet::FullSpace,
        ObservationSet::Masked(GridField::from_fn(domain.clone(), res.clone(), |_| 1.0)?),
        ObservationSet::half_space(domain.clone(), res.clone(), 0, 0.0)?,
        ObservationSet::Masked(GridField::from_fn(domain.clone(), res.clone(), |x| {
            let inside = (0..d).all(|j| x[j].abs() <= 0.5 * eighth * domain.side(j));
            if inside {
                1.0
            } else {
                0.0
            }
        })?),
    ];
    let lattice: Vec<Vec<i64>> = if d == 1 {
        [0i64, 6, 14, 22, 30, 38, 46, 57]
            .iter()
            .map(|&n| vec![n])
            .collect()
    } else {
        vec![
            vec![0, 0],
            vec![3, 0],
            vec![0, 7],
            vec![7, 7],
            vec![14, 0],
            vec![10, 10],
            vec![22, 0],
            vec![16, 16],
        ]
    };
    let packet_of = |n: &Vec<i64>| {
        HeatPacket::new(
            x0.clone(),
            n.iter().map(|&v| v as f64 / lattice_l).collect(),
            sigma,
        )
    };

    let mut ratio_min = f64::INFINITY;
    let mut ratio_max: f64 = 0.0;
    for t_end in [0.1 * sig2, 0.5 * sig2] {
        for omega in &masks {
            for n in &lattice {
                let p = packet_of(n);
                let window = xi_window(&p.xi, &p.xi, sigma, t_end);
                let shape = simpson_refine(window, 32, 1e-10, 14, |t| {
                    ball_fraction(omega, &p.x0, t, sigma) * attenuation(t, &p.xi, sigma)
                })?;
                let value = gramian_entry(&p, &p, omega, t_end)?.re;
                let r = value / (sigma.powf(d as f64) * shape);
                ratio_min = ratio_min.min(r);
                ratio_max = ratio_max.max(r);
            }
        }
    }
    let c_a = ratio_min * std::f64::consts::E / 1.25;
    let c_b = ratio_max * ERF_1 / (1.0 + ERFC_1) * 1.25;

    let pairs: Vec<(usize, usize)> = vec![(0, 1), (0, 3), (1, 2), (2, 5), (3, 6), (5, 7), (0, 7)];
    let mut ratio_c: f64 = 0.0;
    for t_end in [0.1 * sig2, 0.5 * sig2] {
        for omega in masks.iter().skip(1) {
            let measure = omega.measure().unwrap();
            for &(i, j) in &pairs {
                let pn = packet_of(&lattice[i]);
                let pm = packet_of(&lattice[j]);
                let window = xi_window(&pn.xi, &pm.xi, sigma, t_end);
                let integral = simpson_refine(window, 32, 1e-10, 14, |t| {
                    let s = sig2 + t;
                    (sig2 / s).powf(d as f64 / 2.0)
                        * (attenuation(t, &pn.xi, sigma) * attenuation(t, &pm.xi, sigma)).sqrt()
                })?;
                let value = gramian_entry(&pn, &pm, omega, t_end)?.norm();
                ratio_c = ratio_c.max(value / (measure * integral));
            }
        }
    }
    let c_c = ratio_c * 1.25;
    Ok(CalibrationConstants { c_a, c_b, c_c })
}
