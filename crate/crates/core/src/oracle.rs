//! Independent ground truth: free-space heat kernel, Kac-principle bounds,
//! a Crank–Nicolson Dirichlet solver on the box, and the energy /
//! short-time / whole-vs-domain consistency checks.

use crate::bump::BumpSpec;
use crate::error::{Error, Result};
use crate::grid::{BoxDomain, FieldValues, GridField};
use crate::quad::gl_tensor;

/// Free-space heat kernel (4 pi t)^{-d/2} exp(-|x-y|^2 / (4t)).
pub fn free_kernel(t: f64, x: &[f64], y: &[f64]) -> Result<f64> {
    if t <= 0.0 {
        return Err(Error::NonpositiveTime(t));
    }
    let d = x.len() as f64;
    let r2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((4.0 * std::f64::consts::PI * t).powf(-d / 2.0) * (-r2 / (4.0 * t)).exp())
}

/// Kac's principle bound on k_free - k_Omega in terms of the distance of y
/// to the boundary; t0(y) = d(y, Gamma)^2 / (2d).
pub fn kac_bound(t: f64, y: &[f64], domain: &BoxDomain) -> Result<f64> {
    if t <= 0.0 {
        return Err(Error::NonpositiveTime(t));
    }
    if !domain.contains(y) {
        return Err(Error::PointOutsideDomain);
    }
    let d = domain.dim() as f64;
    let dist = domain.distance_to_boundary(y);
    let t0 = dist * dist / (2.0 * d);
    let v = if t <= t0 {
        (4.0 * std::f64::consts::PI * t).powf(-d / 2.0) * (-dist * dist / (4.0 * t)).exp()
    } else {
        (4.0 * std::f64::consts::PI * t0).powf(-d / 2.0) * (-d / 2.0).exp()
    };
    Ok(v)
}

/// Free evolution of bump data by Gaussian-kernel quadrature, in the
/// substituted variable u = (y - x)/sqrt(4t) so the kernel stays resolved
/// at any t:  u(t,x) = pi^{-d/2} int e^{-|u|^2} psi(x + 2 sqrt(t) u) du.
pub fn free_evolve_bump(bump: &BumpSpec, t: f64, x: &[f64]) -> Result<f64> {
    if t == 0.0 {
        return Ok(bump.scaled_value(x));
    }
    if t < 0.0 {
        return Err(Error::NonpositiveTime(t));
    }
    let d = bump.dim();
    let scale = 2.0 * t.sqrt();
    let half = 8.5f64;
    let nodes = match d {
        1 => 96,
        2 => 48,
        _ => 24,
    };
    let (pts, ws) = gl_tensor(nodes, &vec![-half; d], &vec![half; d]);
    let pref = std::f64::consts::PI.powf(-(d as f64) / 2.0);
    let mut y = vec![0.0; d];
    let mut acc = 0.0;
    for (p, &w) in pts.iter().zip(&ws) {
        let u2: f64 = p.iter().map(|v| v * v).sum();
        for j in 0..d {
            y[j] = x[j] + scale * p[j];
        }
        let psi = bump.scaled_value(&y);
        if psi != 0.0 {
            acc += w * (-u2).exp() * psi;
        }
    }
    Ok(pref * acc)
}

/// One finite-difference run: Crank–Nicolson in time, second-order central
/// differences in space, homogeneous Dirichlet boundary via ghost reflection.
#[derive(Clone, Debug)]
pub struct FdSolution {
    pub dt: f64,
    pub nsteps: usize,
    /// (actual time, field) at the requested snapshot times, rounded to steps.
    pub snapshots: Vec<(f64, GridField)>,
    /// L2 norm after each step, including step 0.
    pub step_norms: Vec<f64>,
    /// Cumulative trapezoid of the discrete Dirichlet energy ||Du||^2.
    pub dissipation: Vec<f64>,
    pub scheme: String,
}

const BOUNDARY_TOL: f64 = 1e-12;

/// Applies the Dirichlet Laplacian (ghost reflection u_ghost = -u_edge).
fn apply_laplacian(u: &[f64], res: &[usize], h: &[f64], out: &mut [f64]) {
    let d = res.len();
    out.fill(0.0);
    // strides for row-major layout
    let mut strides = vec![1usize; d];
    for axis in (0..d.saturating_sub(1)).rev() {
        strides[axis] = strides[axis + 1] * res[axis + 1];
    }
    let n = u.len();
    for (axis, (&r, &stride)) in res.iter().zip(&strides).enumerate() {
        let inv_h2 = 1.0 / (h[axis] * h[axis]);
        for i in 0..n {
            let coord = (i / stride) % r;
            let left = if coord == 0 { -u[i] } else { u[i - stride] };
            let right = if coord == r - 1 { -u[i] } else { u[i + stride] };
            out[i] += (left - 2.0 * u[i] + right) * inv_h2;
        }
    }
}

fn l2_norm_sq(u: &[f64], vol: f64) -> f64 {
    u.iter().map(|x| x * x).sum::<f64>() * vol
}

/// Discrete Dirichlet energy ||Du||^2 = -<A u, u> * cellvol.
fn dirichlet_energy(u: &[f64], res: &[usize], h: &[f64], vol: f64, scratch: &mut [f64]) -> f64 {
    apply_laplacian(u, res, h, scratch);
    -u.iter().zip(scratch.iter()).map(|(a, b)| a * b).sum::<f64>() * vol
}

/// Tridiagonal Thomas solve for the 1-D Crank–Nicolson system.
struct Tridiag {
    diag: Vec<f64>,
    off: f64,
    scratch_c: Vec<f64>,
    scratch_d: Vec<f64>,
}

impl Tridiag {
    /// System (I - (dt/2) A): interior diagonal 1 + dt/h^2, boundary rows
    /// 1 + 3dt/(2h^2), off-diagonal -dt/(2h^2).
    fn new_cn(n: usize, dt: f64, h: f64) -> Self {
        let r = dt / (2.0 * h * h);
        let mut diag = vec![1.0 + 2.0 * r; n];
        diag[0] = 1.0 + 3.0 * r;
        diag[n - 1] = 1.0 + 3.0 * r;
        Tridiag {
            diag,
            off: -r,
            scratch_c: vec![0.0; n],
            scratch_d: vec![0.0; n],
        }
    }

    fn solve(&mut self, rhs: &[f64], out: &mut [f64]) {
        let n = rhs.len();
        let c = &mut self.scratch_c;
        let d = &mut self.scratch_d;
        c[0] = self.off / self.diag[0];
        d[0] = rhs[0] / self.diag[0];
        for i in 1..n {
            let m = self.diag[i] - self.off * c[i - 1];
            c[i] = self.off / m;
            d[i] = (rhs[i] - self.off * d[i - 1]) / m;
        }
        out[n - 1] = d[n - 1];
        for i in (0..n - 1).rev() {
            out[i] = d[i] - c[i] * out[i + 1];
        }
    }
}

/// Conjugate gradient for the SPD system (I - (dt/2) A) x = b (d >= 2).
fn cg_solve(
    res: &[usize],
    h: &[f64],
    dt: f64,
    b: &[f64],
    x: &mut [f64],
    scratch: &mut [Vec<f64>],
) {
    let n = b.len();
    let apply = |v: &[f64], out: &mut [f64], lap: &mut [f64]| {
        apply_laplacian(v, res, h, lap);
        for i in 0..n {
            out[i] = v[i] - 0.5 * dt * lap[i];
        }
    };
    let (r, p, ap, lap) = {
        let (a, rest) = scratch.split_at_mut(1);
        let (b2, rest) = rest.split_at_mut(1);
        let (c, d) = rest.split_at_mut(1);
        (&mut a[0], &mut b2[0], &mut c[0], &mut d[0])
    };
    // initial guess: previous solution (already in x)
    apply(x, ap, lap);
    for i in 0..n {
        r[i] = b[i] - ap[i];
        p[i] = r[i];
    }
    let mut rs: f64 = r.iter().map(|v| v * v).sum();
    let b_norm: f64 = b.iter().map(|v| v * v).sum::<f64>().max(1e-300);
    for _ in 0..1000 {
        if rs / b_norm < 1e-26 {
            break;
        }
        apply(p, ap, lap);
        let pap: f64 = p.iter().zip(ap.iter()).map(|(a, b)| a * b).sum();
        let alpha = rs / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
}

/// Crank–Nicolson Dirichlet solve. The time step satisfies both
/// dt <= h^2/2 and nsteps >= 64; initial data must vanish on boundary cells.
pub fn fd_solve(g: &GridField, t_end: f64, snapshot_times: &[f64]) -> Result<FdSolution> {
    if t_end <= 0.0 {
        return Err(Error::NonpositiveTime(t_end));
    }
    let u0 = match &g.values {
        FieldValues::Real(v) => v.clone(),
        FieldValues::Complex(_) => {
            return Err(Error::Config("fd_solve expects a real field".into()))
        }
    };
    check_boundary(g, &u0)?;

    let d = g.dim();
    let h: Vec<f64> = (0..d).map(|j| g.spacing(j)).collect();
    let h_min = h.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let nsteps = (t_end / (h_min * h_min / 2.0)).ceil().max(64.0) as usize;
    let dt = t_end / nsteps as f64;
    let vol = g.cell_volume();
    let n = u0.len();

    // snapshot step indices (rounded, deduplicated, sorted)
    let mut snap_steps: Vec<usize> = snapshot_times
        .iter()
        .map(|&t| ((t / dt).round() as usize).min(nsteps))
        .collect();
    snap_steps.sort_unstable();
    snap_steps.dedup();

    let mut u = u0;
    let mut rhs = vec![0.0; n];
    let mut lap = vec![0.0; n];
    let mut step_norms = Vec::with_capacity(nsteps + 1);
    let mut dissipation = Vec::with_capacity(nsteps + 1);
    step_norms.push(l2_norm_sq(&u, vol).sqrt());
    dissipation.push(0.0);
    let mut energy_prev = dirichlet_energy(&u, g.res.as_slice(), &h, vol, &mut lap);

    let mut snapshots = Vec::new();
    let mut snap_iter = snap_steps.iter().peekable();
    if let Some(&&0) = snap_iter.peek() {
        snapshots.push((0.0, field_from(g, &u)));
        snap_iter.next();
    }

    let mut tri = if d == 1 {
        Some(Tridiag::new_cn(n, dt, h[0]))
    } else {
        None
    };
    let mut cg_scratch = vec![vec![0.0; n]; 4];
    let mut next = vec![0.0; n];

    for step in 1..=nsteps {
        // rhs = (I + dt/2 A) u
        apply_laplacian(&u, g.res.as_slice(), &h, &mut lap);
        for i in 0..n {
            rhs[i] = u[i] + 0.5 * dt * lap[i];
        }
        match &mut tri {
            Some(tri) => tri.solve(&rhs, &mut next),
            None => {
                next.copy_from_slice(&u);
                cg_solve(g.res.as_slice(), &h, dt, &rhs, &mut next, &mut cg_scratch);
            }
        }
        std::mem::swap(&mut u, &mut next);

        step_norms.push(l2_norm_sq(&u, vol).sqrt());
        let energy_now = dirichlet_energy(&u, g.res.as_slice(), &h, vol, &mut lap);
        dissipation.push(dissipation[step - 1] + 0.5 * dt * (energy_prev + energy_now));
        energy_prev = energy_now;

        if snap_iter.peek() == Some(&&step) {
            snapshots.push((step as f64 * dt, field_from(g, &u)));
            snap_iter.next();
        }
    }

    Ok(FdSolution {
        dt,
        nsteps,
        snapshots,
        step_norms,
        dissipation,
        scheme: format!("crank-nicolson cd2 dirichlet d={d}"),
    })
}

/// Dirichlet compatibility: the boundary trace of g, estimated by quadratic
/// extrapolation of the first three cells to the face, must vanish. On a
/// cell-centered grid the estimate itself carries an O(h^3) truncation
/// error, so the 1e-12 floor is widened by 16 h^3 (smooth admissible data
/// like a sine mode sits below that; genuinely incompatible data is O(1)).
fn check_boundary(g: &GridField, u: &[f64]) -> Result<()> {
    let max_abs = u.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    if max_abs == 0.0 {
        return Ok(());
    }
    let d = g.dim();
    let mut strides = vec![1usize; d];
    for axis in (0..d.saturating_sub(1)).rev() {
        strides[axis] = strides[axis + 1] * g.res[axis + 1];
    }
    let mut worst_ratio = 0.0f64;
    for axis in 0..d {
        let r = g.res[axis];
        let h = g.spacing(axis);
        let tol = BOUNDARY_TOL.max(16.0 * h * h * h);
        let stride = strides[axis];
        for i in 0..u.len() {
            let coord = (i / stride) % r;
            let trace = if coord == 0 && r >= 3 {
                (15.0 * u[i] - 10.0 * u[i + stride] + 3.0 * u[i + 2 * stride]) / 8.0
            } else if coord == r - 1 && r >= 3 {
                (15.0 * u[i] - 10.0 * u[i - stride] + 3.0 * u[i - 2 * stride]) / 8.0
            } else if r < 3 && (coord == 0 || coord == r - 1) {
                u[i]
            } else {
                continue;
            };
            let ratio = trace.abs() / max_abs;
            if ratio > tol {
                return Err(Error::BoundaryViolation { ratio });
            }
            worst_ratio = worst_ratio.max(ratio);
        }
    }
    let _ = worst_ratio;
    Ok(())
}

fn field_from(proto: &GridField, u: &[f64]) -> GridField {
    GridField {
        domain: proto.domain.clone(),
        res: proto.res.clone(),
        values: FieldValues::Real(u.to_vec()),
    }
}

/// Multiplies a field by a smooth collar taper so it vanishes at the
/// boundary; returns the tapered field and the L2 fraction it removed.
pub fn taper_boundary(g: &GridField, collar_frac: f64) -> (GridField, f64) {
    let d = g.dim();
    let mut out = g.clone();
    let before = g.l2_norm();
    let smoothstep = |q: f64| {
        let q = q.clamp(0.0, 1.0);
        q * q * (3.0 - 2.0 * q)
    };
    let centers: Vec<Vec<f64>> = g.cell_centers().collect();
    let widths: Vec<f64> = (0..d)
        .map(|j| (collar_frac * g.domain.side(j)).max(2.5 * g.spacing(j)))
        .collect();
    // the ramp starts three cells in so the cells feeding the boundary-trace
    // extrapolation are identically zero
    let shifts: Vec<f64> = (0..d).map(|j| 3.0 * g.spacing(j)).collect();
    let weight = |x: &[f64]| -> f64 {
        (0..d)
            .map(|j| {
                let dist = (x[j] - g.domain.lo[j]).min(g.domain.hi[j] - x[j]);
                smoothstep((dist - shifts[j]) / widths[j])
            })
            .product()
    };
    match &mut out.values {
        FieldValues::Real(v) => {
            for (i, x) in centers.iter().enumerate() {
                v[i] *= weight(x);
            }
        }
        FieldValues::Complex(v) => {
            for (i, x) in centers.iter().enumerate() {
                v[i] *= weight(x);
            }
        }
    }
    let after = out.l2_norm();
    let removed = if before > 0.0 {
        (1.0 - (after / before).powi(2)).max(0.0)
    } else {
        0.0
    };
    (out, removed)
}

/// Report of the discrete energy identity and norm monotonicity.
#[derive(Clone, Debug)]
pub struct EnergyReport {
    /// max over steps of |1/2||u||^2 + int ||Du||^2 - 1/2||g||^2| / (1/2||g||^2)
    pub identity_rel_err: f64,
    pub monotone: bool,
    pub pass: bool,
    pub tol: f64,
}

/// Verifies 1/2 ||u(t)||^2 + int_0^t ||Du||^2 = 1/2 ||g||^2 (trapezoid in
/// time) and monotone decay of ||u(t)||.
pub fn energy_check(sol: &FdSolution, tol: f64) -> EnergyReport {
    let e0 = 0.5 * sol.step_norms[0].powi(2);
    let mut worst = 0.0f64;
    let mut monotone = true;
    for k in 1..sol.step_norms.len() {
        let lhs = 0.5 * sol.step_norms[k].powi(2) + sol.dissipation[k];
        if e0 > 0.0 {
            worst = worst.max((lhs - e0).abs() / e0);
        }
        if sol.step_norms[k] > sol.step_norms[k - 1] * (1.0 + 1e-13) {
            monotone = false;
        }
    }
    EnergyReport {
        identity_rel_err: worst,
        monotone,
        pass: worst <= tol && monotone,
        tol,
    }
}

/// Report of the whole-space vs domain evolution comparison (Kac estimate).
#[derive(Clone, Debug)]
pub struct WholeVsDomainReport {
    pub measured_sup: f64,
    /// (eta0 / 2) * M0 with M0 = ||psi||_C0 of the unscaled profile.
    pub bound: f64,
    pub eta0: f64,
    pub m0_measured: f64,
    pub pass: bool,
}

/// Measures sup over snapshots and interior grid points of
/// |exp(t lap_free) psi - exp(t lap_Omega) psi| and reports it against the
/// Kac-based bound (eta0/2) M0. When `eta0` is None it is derived a
/// posteriori as eta * m0 / M0 with m0 the largest |u| over the snapshots.
pub fn whole_vs_domain_check(
    bump: &BumpSpec,
    domain: &BoxDomain,
    res: &[usize],
    t_end: f64,
    eta0: Option<f64>,
    eta: f64,
) -> Result<WholeVsDomainReport> {
    bump.validate_in(domain)?;
    let d2 = bump.delta * bump.delta;
    if !(bump.epsilon0 < d2 && d2 < 1.0) {
        return Err(Error::PreconditionViolation(format!(
            "need eps0 < delta^2 < 1, got eps0 = {}, delta^2 = {}",
            bump.epsilon0, d2
        )));
    }
    if let Some(e0) = eta0 {
        if t_end >= e0 * bump.delta.powi(4) {
            return Err(Error::PreconditionViolation(format!(
                "T = {t_end} >= eta0 * delta^4 = {}",
                e0 * bump.delta.powi(4)
            )));
        }
    }

    let g = GridField::from_fn(domain.clone(), res.to_vec(), |x| bump.scaled_value(x))?;
    let snaps: Vec<f64> = (1..=4).map(|k| t_end * k as f64 / 4.0).collect();
    let sol = fd_solve(&g, t_end, &snaps)?;

    let m0 = sol
        .snapshots
        .iter()
        .flat_map(|(_, f)| f.real().iter().map(|v| v.abs()))
        .fold(0.0f64, f64::max);
    let big_m0 = bump.sup_norm();
    let eta0 = eta0.unwrap_or(eta * m0 / big_m0);
    if t_end >= eta0 * bump.delta.powi(4) {
        return Err(Error::PreconditionViolation(format!(
            "T = {t_end} >= eta0 * delta^4 = {} (eta0 measured a posteriori)",
            eta0 * bump.delta.powi(4)
        )));
    }

    let mut measured = 0.0f64;
    let proto = GridField::zeros(domain.clone(), res.to_vec())?;
    let h_max: f64 = (0..domain.dim())
        .map(|j| proto.spacing(j))
        .fold(0.0, f64::max);
    for (t, field) in &sol.snapshots {
        let fd_vals = field.real();
        for (i, x) in proto.cell_centers().enumerate() {
            if domain.distance_to_boundary(&x) < 2.0 * h_max {
                continue;
            }
            let free = free_evolve_bump(bump, *t, &x)?;
            measured = measured.max((free - fd_vals[i]).abs());
        }
    }
    let bound = 0.5 * eta0 * big_m0;
    Ok(WholeVsDomainReport {
        measured_sup: measured,
        bound,
        eta0,
        m0_measured: m0,
        pass: measured <= bound,
    })
}

/// Report of the short-time bootstrap check.
#[derive(Clone, Debug)]
pub struct ShortTimeReport {
    pub t: f64,
    /// Regime bound C_{s,d}^{-1} M2^{-1} eta0 eps0^{2+s}.
    pub regime_bound: f64,
    pub measured_sup: f64,
    pub eta0: f64,
    pub m2: f64,
    pub pass: bool,
}

/// Verifies sup_x |u(t, x) - psi_eps0(x)| <= eta0 with u the Dirichlet FD
/// evolution of the bump. `c_sd` is the Sobolev-embedding constant knob
/// (default 1 upstream).
pub fn short_time_check(
    bump: &BumpSpec,
    domain: &BoxDomain,
    res: &[usize],
    t: f64,
    eta0: Option<f64>,
    eta: f64,
    c_sd: f64,
) -> Result<ShortTimeReport> {
    bump.validate_in(domain)?;
    let d = bump.dim();
    let s = d / 2 + 1; // smallest integer > d/2
    let m2 = bump.ck_norm(2 + s);
    if t == 0.0 {
        return Ok(ShortTimeReport {
            t,
            regime_bound: f64::NAN,
            measured_sup: 0.0,
            eta0: eta0.unwrap_or(eta),
            m2,
            pass: true,
        });
    }
    let g = GridField::from_fn(domain.clone(), res.to_vec(), |x| bump.scaled_value(x))?;
    let sol = fd_solve(&g, t, &[t])?;
    let m0 = sol
        .snapshots
        .iter()
        .flat_map(|(_, f)| f.real().iter().map(|v| v.abs()))
        .fold(0.0f64, f64::max);
    let eta0 = eta0.unwrap_or(eta * m0 / bump.sup_norm());
    let regime_bound = eta0 * bump.epsilon0.powi((2 + s) as i32) / (c_sd * m2);
    if t >= regime_bound {
        return Err(Error::PreconditionViolation(format!(
            "t = {t} >= short-time regime bound {regime_bound}"
        )));
    }
    let field = &sol.snapshots.last().unwrap().1;
    let mut measured = 0.0f64;
    for (i, x) in field.cell_centers().enumerate() {
        measured = measured.max((field.real()[i] - bump.scaled_value(&x)).abs());
    }
    Ok(ShortTimeReport {
        t,
        regime_bound,
        measured_sup: measured,
        eta0,
        m2,
        pass: measured <= eta0,
    })
}

/// Kac sandwich over a run: 0 <= free - fd <= integrated kac bound,
/// pointwise on interior cells, within `tol`.
#[derive(Clone, Debug)]
pub struct KacSandwichReport {
    /// most negative value of (free - fd) observed (should be >= -tol)
    pub min_difference: f64,
    /// largest excess of (free - fd) above the integrated bound
    pub max_excess: f64,
    pub pass: bool,
    pub tol: f64,
}

pub fn kac_sandwich_check(
    bump: &BumpSpec,
    domain: &BoxDomain,
    res: &[usize],
    t_end: f64,
    tol: f64,
) -> Result<KacSandwichReport> {
    bump.validate_in(domain)?;
    let g = GridField::from_fn(domain.clone(), res.to_vec(), |x| bump.scaled_value(x))?;
    let snaps: Vec<f64> = (1..=4).map(|k| t_end * k as f64 / 4.0).collect();
    let sol = fd_solve(&g, t_end, &snaps)?;

    let proto = GridField::zeros(domain.clone(), res.to_vec())?;
    let h_max: f64 = (0..domain.dim())
        .map(|j| proto.spacing(j))
        .fold(0.0, f64::max);
    let d = domain.dim();
    let e0 = bump.epsilon0;
    let lo: Vec<f64> = bump.x0.iter().map(|&c| c - e0).collect();
    let hi: Vec<f64> = bump.x0.iter().map(|&c| c + e0).collect();
    let nodes = if d == 1 { 256 } else { 64 };
    let (pts, ws) = gl_tensor(nodes, &lo, &hi);

    let mut min_diff = f64::INFINITY;
    let mut max_excess = f64::NEG_INFINITY;
    for (t, field) in &sol.snapshots {
        // integrated bound Q(t) = int kac_bound(t, y) psi(y) dy
        let mut q = 0.0;
        for (p, &w) in pts.iter().zip(&ws) {
            let psi = bump.scaled_value(p);
            if psi > 0.0 {
                q += w * psi * kac_bound(*t, p, domain)?;
            }
        }
        let fd_vals = field.real();
        for (i, x) in proto.cell_centers().enumerate() {
            if domain.distance_to_boundary(&x) < 2.0 * h_max {
                continue;
            }
            let free = free_evolve_bump(bump, *t, &x)?;
            let diff = free - fd_vals[i];
            min_diff = min_diff.min(diff);
            max_excess = max_excess.max(diff - q);
        }
    }
    Ok(KacSandwichReport {
        min_difference: min_diff,
        max_excess,
        pass: min_diff >= -tol && max_excess <= tol,
        tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::gl_refine;
    use approx::assert_relative_eq;

    fn line_domain() -> BoxDomain {
        BoxDomain::new(vec![-1.0], vec![1.0]).unwrap()
    }

    #[test]
    fn free_kernel_values() {
        // x = y
        let v = free_kernel(0.3, &[0.1, 0.2], &[0.1, 0.2]).unwrap();
        assert_relative_eq!(
            v,
            (4.0 * std::f64::consts::PI * 0.3).powi(-1),
            max_relative = 1e-14
        );
        // d=1, t=1/4, |x-y|=1 -> pi^{-1/2} e^{-1}
        let v = free_kernel(0.25, &[0.0], &[1.0]).unwrap();
        assert_relative_eq!(
            v,
            std::f64::consts::PI.powf(-0.5) * (-1.0f64).exp(),
            max_relative = 1e-14
        );
        assert_relative_eq!(v, 0.207554, max_relative = 1e-5);
        assert!(matches!(
            free_kernel(0.0, &[0.0], &[0.0]),
            Err(Error::NonpositiveTime(_))
        ));
    }

    #[test]
    fn free_kernel_unit_mass() {
        let t: f64 = 0.07;
        let half = 10.0 * t.sqrt();
        let mass = gl_refine(&[-half], &[half], 32, 1e-12, 8, |y| {
            free_kernel(t, &[0.0], y).unwrap()
        })
        .unwrap();
        assert_relative_eq!(mass, 1.0, epsilon = 1e-8);
    }

    #[test]
    fn kac_bound_branches_and_continuity() {
        let dom = line_domain();
        let y = [0.4]; // dist 0.6, t0 = 0.36/2 = 0.18
        let t0 = 0.18;
        // short-time branch formula
        let v = kac_bound(0.1, &y, &dom).unwrap();
        assert_relative_eq!(
            v,
            (4.0 * std::f64::consts::PI * 0.1f64).powf(-0.5) * (-0.36 / 0.4f64).exp(),
            max_relative = 1e-14
        );
        // continuity at t0: both branches agree there
        let left = kac_bound(t0, &y, &dom).unwrap();
        let right = (4.0 * std::f64::consts::PI * t0).powf(-0.5) * (-0.5f64).exp();
        assert_relative_eq!(left, right, max_relative = 1e-12);
        // long-time branch is t-independent
        assert_eq!(kac_bound(0.5, &y, &dom).unwrap(), kac_bound(5.0, &y, &dom).unwrap());
        // far from the boundary at fixed t the bound collapses
        let big = BoxDomain::new(vec![-100.0], vec![100.0]).unwrap();
        assert!(kac_bound(0.1, &[0.0], &big).unwrap() < 1e-300);
        assert!(matches!(
            kac_bound(0.1, &[2.0], &dom),
            Err(Error::PointOutsideDomain)
        ));
    }

    #[test]
    fn fd_zero_data_stays_zero() {
        let g = GridField::zeros(line_domain(), vec![64]).unwrap();
        let sol = fd_solve(&g, 0.05, &[0.05]).unwrap();
        assert!(sol.snapshots[0].1.real().iter().all(|&v| v == 0.0));
        let rep = energy_check(&sol, 1e-6);
        assert!(rep.pass);
        assert_eq!(rep.identity_rel_err, 0.0);
    }

    fn first_mode_error(res: usize, t_end: f64) -> f64 {
        // Omega = (0,1), g = sin(pi x), exact decay e^{-pi^2 t}
        let dom = BoxDomain::new(vec![0.0], vec![1.0]).unwrap();
        let g = GridField::from_fn(dom, vec![res], |x| (std::f64::consts::PI * x[0]).sin()).unwrap();
        let sol = fd_solve(&g, t_end, &[t_end]).unwrap();
        let field = &sol.snapshots[0].1;
        let decay = (-std::f64::consts::PI.powi(2) * t_end).exp();
        let mut worst: f64 = 0.0;
        for (i, x) in field.cell_centers().enumerate() {
            let exact = decay * (std::f64::consts::PI * x[0]).sin();
            worst = worst.max((field.real()[i] - exact).abs() / decay);
        }
        worst
    }

    #[test]
    fn fd_first_mode_decay_within_tolerance() {
        // spec example: relative error <= 1e-3 at T = 0.1 on a 256-point grid
        assert!(first_mode_error(256, 0.1) <= 1e-3);
    }

    #[test]
    fn fd_second_order_convergence() {
        let e64 = first_mode_error(64, 0.1);
        let e128 = first_mode_error(128, 0.1);
        let e256 = first_mode_error(256, 0.1);
        let f1 = e64 / e128;
        let f2 = e128 / e256;
        assert!((3.5..=4.5).contains(&f1), "factor {f1}");
        assert!((3.5..=4.5).contains(&f2), "factor {f2}");
    }

    #[test]
    fn fd_norm_contraction_and_monotone_energy() {
        let bump = BumpSpec::new(0.1, vec![0.0], 0.5);
        let g = GridField::from_fn(line_domain(), vec![256], |x| bump.scaled_value(x)).unwrap();
        let norm0 = g.l2_norm();
        let sol = fd_solve(&g, 0.01, &[0.01]).unwrap();
        assert!(sol.snapshots[0].1.l2_norm() <= norm0);
        // strictly decreasing for nonzero data
        for k in 1..sol.step_norms.len() {
            assert!(sol.step_norms[k] < sol.step_norms[k - 1]);
        }
        let rep = energy_check(&sol, 1e-3);
        assert!(rep.pass, "identity err {}", rep.identity_rel_err);
    }

    #[test]
    fn fd_energy_identity_first_mode_tight() {
        let dom = BoxDomain::new(vec![0.0], vec![1.0]).unwrap();
        let g = GridField::from_fn(dom, vec![256], |x| (std::f64::consts::PI * x[0]).sin()).unwrap();
        let sol = fd_solve(&g, 0.1, &[0.1]).unwrap();
        let rep = energy_check(&sol, 1e-6);
        assert!(rep.pass, "identity err {}", rep.identity_rel_err);
    }

    #[test]
    fn fd_rejects_boundary_mass() {
        let g = GridField::from_fn(line_domain(), vec![64], |_| 1.0).unwrap();
        assert!(matches!(
            fd_solve(&g, 0.01, &[0.01]),
            Err(Error::BoundaryViolation { .. })
        ));
    }

    #[test]
    fn fd_minimum_steps_honored() {
        let g = GridField::from_fn(line_domain(), vec![64], |x| {
            (std::f64::consts::PI * (x[0] + 1.0) / 2.0).sin()
        })
        .unwrap();
        let sol = fd_solve(&g, 1e-6, &[1e-6]).unwrap();
        assert!(sol.nsteps >= 64);
    }

    #[test]
    fn taper_zeroes_collar() {
        let g = GridField::from_fn(line_domain(), vec![128], |_| 1.0).unwrap();
        let (tapered, removed) = taper_boundary(&g, 0.1);
        assert!(check_boundary(&tapered, tapered.real()).is_ok());
        assert!(removed > 0.0 && removed < 0.5);
        // interior untouched
        assert_eq!(tapered.real()[64], 1.0);
    }

    #[test]
    fn whole_vs_domain_tiny_time() {
        // both evolutions nearly identical far from the boundary; at 2048
        // cells the FD side resolves the bump to ~7e-6
        let bump = BumpSpec::new(0.3, vec![0.0], 0.6);
        let rep =
            whole_vs_domain_check(&bump, &line_domain(), &[2048], 1e-4, None, 0.1).unwrap();
        assert!(rep.measured_sup < 1e-5, "measured {}", rep.measured_sup);
        assert!(rep.pass);
        assert!(rep.bound > 0.0);
    }

    #[test]
    fn whole_vs_domain_preconditions() {
        // eps0 >= delta^2
        let bad = BumpSpec::new(0.4, vec![0.0], 0.632);
        assert!(matches!(
            whole_vs_domain_check(&bad, &line_domain(), &[256], 1e-4, None, 0.1),
            Err(Error::PreconditionViolation(_))
        ));
        // configured eta0 makes T too large
        let bump = BumpSpec::new(0.3, vec![0.0], 0.6);
        assert!(matches!(
            whole_vs_domain_check(&bump, &line_domain(), &[256], 0.5, Some(0.1), 0.1),
            Err(Error::PreconditionViolation(_))
        ));
    }

    #[test]
    fn short_time_zero_and_regime() {
        let bump = BumpSpec::new(0.1, vec![0.0], 0.5);
        let rep = short_time_check(&bump, &line_domain(), &[256], 0.0, None, 0.1, 1.0).unwrap();
        assert_eq!(rep.measured_sup, 0.0);
        assert!(rep.pass);
        // inside the regime the measured sup stays below eta0
        let t = 2e-7;
        let rep = short_time_check(&bump, &line_domain(), &[512], t, None, 0.1, 1.0).unwrap();
        assert!(rep.t < rep.regime_bound);
        assert!(rep.pass, "sup {} vs eta0 {}", rep.measured_sup, rep.eta0);
        // far beyond the regime: precondition violation
        assert!(matches!(
            short_time_check(&bump, &line_domain(), &[256], 0.5, None, 0.1, 1.0),
            Err(Error::PreconditionViolation(_))
        ));
    }

    #[test]
    fn kac_sandwich_wide_bump_256() {
        // 256 cells resolve this bump to ~5e-5; the tolerance gate is 1e-4
        let bump = BumpSpec::new(0.75, vec![0.0], 0.88);
        let dom = BoxDomain::new(vec![-1.7], vec![1.7]).unwrap();
        let rep = kac_sandwich_check(&bump, &dom, &[256], 1e-4, 1e-4).unwrap();
        assert!(
            rep.pass,
            "min diff {} max excess {}",
            rep.min_difference, rep.max_excess
        );
    }

    #[test]
    fn kac_sandwich_narrow_bump_needs_resolution() {
        // the eps0 = 0.1 bump carries ~4e-3 of spatial FD error at 256
        // cells, far above the 1e-4 band; the check must say so
        let bump = BumpSpec::new(0.1, vec![0.0], 0.5);
        let rep = kac_sandwich_check(&bump, &line_domain(), &[256], 1e-3, 1e-4).unwrap();
        assert!(!rep.pass);
        assert!(rep.max_excess > 1e-4);
    }

    #[test]
    fn free_evolution_contracts_l2() {
        let bump = BumpSpec::new(0.3, vec![0.0], 0.6);
        let dom = line_domain();
        let proto = GridField::zeros(dom.clone(), vec![256]).unwrap();
        let vol = proto.cell_volume();
        let mut norm2 = 0.0;
        for x in proto.cell_centers() {
            norm2 += free_evolve_bump(&bump, 0.02, &x).unwrap().powi(2);
        }
        assert!((norm2 * vol).sqrt() <= 1.0 + 1e-9);
    }
}
