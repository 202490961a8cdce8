//! Bump initial data: the built-in normalized profile, its scaled versions,
//! derivative-norm estimates, and the spectral tail table used by the
//! spectral truncation mode.

use crate::error::{Error, Result};
use crate::grid::BoxDomain;
use crate::quad::{gl_on_interval, gl_tensor};
use std::sync::OnceLock;

/// Base profile of the initial data.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Profile {
    /// exp(-1/(1-|x|^2)) on the unit ball, L2-normalized over [-1,1]^d.
    StandardBump,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::StandardBump => "standard",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(Profile::StandardBump),
            other => Err(Error::Config(format!("unknown bump profile '{other}'"))),
        }
    }
}

/// Bump initial data u(0, x) = eps0^{-d/2} psi((x - x0)/eps0).
#[derive(Clone, Debug)]
pub struct BumpSpec {
    pub epsilon0: f64,
    pub x0: Vec<f64>,
    pub delta: f64,
    pub profile: Profile,
}

fn raw_profile(r2: f64) -> f64 {
    if r2 < 1.0 {
        (-1.0 / (1.0 - r2)).exp()
    } else {
        0.0
    }
}

/// L2 normalization constant of the raw profile per dimension.
fn norm_constant(d: usize) -> f64 {
    static CONSTS: OnceLock<[f64; 3]> = OnceLock::new();
    let table = CONSTS.get_or_init(|| {
        let mut out = [0.0; 3];
        for (i, dd) in (1..=3usize).enumerate() {
            let lo = vec![-1.0; dd];
            let hi = vec![1.0; dd];
            let (pts, ws) = gl_tensor(if dd == 3 { 80 } else { 240 }, &lo, &hi);
            let mass: f64 = pts
                .iter()
                .zip(&ws)
                .map(|(p, &w)| {
                    let r2: f64 = p.iter().map(|x| x * x).sum();
                    w * raw_profile(r2).powi(2)
                })
                .sum();
            out[i] = 1.0 / mass.sqrt();
        }
        out
    });
    table[d - 1]
}

impl BumpSpec {
    pub fn new(epsilon0: f64, x0: Vec<f64>, delta: f64) -> Self {
        BumpSpec {
            epsilon0,
            x0,
            delta,
            profile: Profile::StandardBump,
        }
    }

    pub fn dim(&self) -> usize {
        self.x0.len()
    }

    /// Checks the admissibility range and that the scaled support sits inside
    /// the domain at distance at least delta.
    pub fn validate_in(&self, domain: &BoxDomain) -> Result<()> {
        let d = self.dim();
        if d != domain.dim() {
            return Err(Error::Config("bump center dimension mismatch".into()));
        }
        if self.epsilon0 <= 0.0 || self.epsilon0 >= 0.5 * domain.diameter() {
            return Err(Error::PreconditionViolation(format!(
                "epsilon0 = {} outside (0, diam(Omega)/2 = {})",
                self.epsilon0,
                0.5 * domain.diameter()
            )));
        }
        if !(self.delta > self.epsilon0.sqrt() && self.delta < 1.0) {
            return Err(Error::PreconditionViolation(format!(
                "delta = {} outside (sqrt(eps0) = {}, 1)",
                self.delta,
                self.epsilon0.sqrt()
            )));
        }
        if !domain.contains(&self.x0) {
            return Err(Error::PreconditionViolation("bump center outside domain".into()));
        }
        let dist = domain.distance_to_boundary(&self.x0) - self.epsilon0;
        if dist < self.delta {
            return Err(Error::PreconditionViolation(format!(
                "scaled support at distance {dist:.6} from the boundary, need >= delta = {}",
                self.delta
            )));
        }
        Ok(())
    }

    /// Normalized base profile psi at a point in base coordinates.
    pub fn base_value(&self, y: &[f64]) -> f64 {
        let r2: f64 = y.iter().map(|x| x * x).sum();
        norm_constant(self.dim()) * raw_profile(r2)
    }

    /// Scaled data psi_{eps0}(x) = eps0^{-d/2} psi((x - x0)/eps0).
    pub fn scaled_value(&self, x: &[f64]) -> f64 {
        let d = self.dim();
        let e = self.epsilon0;
        let r2: f64 = x
            .iter()
            .zip(&self.x0)
            .map(|(&xi, &ci)| ((xi - ci) / e).powi(2))
            .sum();
        e.powf(-(d as f64) / 2.0) * norm_constant(d) * raw_profile(r2)
    }

    /// sup |psi| of the unscaled profile (M0).
    pub fn sup_norm(&self) -> f64 {
        norm_constant(self.dim()) * (-1.0f64).exp()
    }

    /// C^k norm estimate of the unscaled profile by centered finite
    /// differences on a fine grid (max over all partial derivatives of
    /// order <= k along the estimation stencils).
    pub fn ck_norm(&self, k: usize) -> f64 {
        ck_norm_estimate(self.dim(), k)
    }
}

/// Finite-difference C^k norm of psi per (dimension, order), cached.
fn ck_norm_estimate(d: usize, k: usize) -> f64 {
    use std::collections::HashMap;
    use std::sync::Mutex;
    static CACHE: OnceLock<Mutex<HashMap<(usize, usize), f64>>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(&v) = cache.lock().unwrap().get(&(d, k)) {
        return v;
    }
    let nc = norm_constant(d);
    let v = match d {
        1 => {
            let n = 400_001usize;
            let h = 2.0 / (n - 1) as f64;
            let grid: Vec<f64> = (0..n).map(|i| -1.0 + i as f64 * h).collect();
            let vals: Vec<f64> = grid.iter().map(|&x| nc * raw_profile(x * x)).collect();
            max_derivative_1d(&vals, h, k)
        }
        2 => {
            // radial profile: partial derivatives estimated on a 2-D grid
            let n = 1201usize;
            let h = 2.0 / (n - 1) as f64;
            let mut vals = vec![0.0; n * n];
            for i in 0..n {
                let x = -1.0 + i as f64 * h;
                for j in 0..n {
                    let y = -1.0 + j as f64 * h;
                    vals[i * n + j] = nc * raw_profile(x * x + y * y);
                }
            }
            let mut best = 0.0f64;
            for ax in 0..=k {
                let ay = k - ax;
                // apply FD of order ax along rows then ay along cols, track sup
                let mut work = vals.clone();
                for _ in 0..ax {
                    work = fd_axis(&work, n, n, h, true);
                }
                for _ in 0..ay {
                    work = fd_axis(&work, n, n, h, false);
                }
                best = best.max(work.iter().fold(0.0f64, |m, &v| m.max(v.abs())));
            }
            // C^k includes all orders <= k
            if k > 0 {
                best = best.max(ck_norm_estimate(d, k - 1));
            }
            best
        }
        _ => {
            // d = 3 falls back to the 1-D axis estimate (radial profile)
            ck_norm_estimate(1, k)
        }
    };
    cache.lock().unwrap().insert((d, k), v);
    v
}

fn max_derivative_1d(vals: &[f64], h: f64, k: usize) -> f64 {
    let mut best = vals.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
    let mut cur = vals.to_vec();
    for _ in 0..k {
        let n = cur.len();
        let mut next = vec![0.0; n];
        for i in 1..n - 1 {
            next[i] = (cur[i + 1] - cur[i - 1]) / (2.0 * h);
        }
        best = best.max(next.iter().fold(0.0f64, |m, &v| m.max(v.abs())));
        cur = next;
    }
    best
}

fn fd_axis(vals: &[f64], rows: usize, cols: usize, h: f64, along_rows: bool) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            let v = if along_rows {
                if i == 0 || i == rows - 1 {
                    0.0
                } else {
                    (vals[(i + 1) * cols + j] - vals[(i - 1) * cols + j]) / (2.0 * h)
                }
            } else if j == 0 || j == cols - 1 {
                0.0
            } else {
                (vals[i * cols + j + 1] - vals[i * cols + j - 1]) / (2.0 * h)
            };
            out[i * cols + j] = v;
        }
    }
    out
}

const TAIL_ZMAX: f64 = 80.0;
const TAIL_STEPS: usize = 4000;

/// L2 fraction of the unscaled profile's Fourier mass beyond radius zeta,
/// as a function on a fixed table grid. Used by the spectral truncation mode.
pub fn spectral_tail_fraction(d: usize, zeta: f64) -> Result<f64> {
    let table = tail_table(d)?;
    if zeta <= 0.0 {
        return Ok(1.0);
    }
    let step = TAIL_ZMAX / TAIL_STEPS as f64;
    let idx = (zeta / step) as usize;
    if idx >= table.len() - 1 {
        return Ok(table[table.len() - 1]);
    }
    let frac = (zeta - idx as f64 * step) / step;
    Ok(table[idx] * (1.0 - frac) + table[idx + 1] * frac)
}

/// Smallest tabulated radius whose tail fraction is at most `target`.
pub fn spectral_cutoff(d: usize, target: f64) -> Result<f64> {
    let table = tail_table(d)?;
    let step = TAIL_ZMAX / TAIL_STEPS as f64;
    for (i, &t) in table.iter().enumerate() {
        if t <= target {
            return Ok(i as f64 * step);
        }
    }
    Err(Error::PreconditionViolation(format!(
        "spectral tail target {target} unreachable within the tabulated range"
    )))
}

fn tail_table(d: usize) -> Result<&'static Vec<f64>> {
    static T1: OnceLock<Vec<f64>> = OnceLock::new();
    static T2: OnceLock<Vec<f64>> = OnceLock::new();
    match d {
        1 => Ok(T1.get_or_init(build_tail_table_1d)),
        2 => Ok(T2.get_or_init(build_tail_table_2d)),
        _ => Err(Error::Config(format!(
            "spectral truncation mode supports d <= 2, got d = {d}"
        ))),
    }
}

fn build_tail_table_1d() -> Vec<f64> {
    let nc = norm_constant(1);
    let (xq, wq) = gl_on_interval(400, -1.0, 1.0);
    let psi: Vec<f64> = xq.iter().map(|&x| nc * raw_profile(x * x)).collect();
    let step = TAIL_ZMAX / TAIL_STEPS as f64;
    // psi is even, so psihat is the cosine transform
    let hat: Vec<f64> = (0..=TAIL_STEPS)
        .map(|i| {
            let z = i as f64 * step;
            xq.iter()
                .zip(&wq)
                .zip(&psi)
                .map(|((&x, &w), &p)| w * p * (z * x).cos())
                .sum::<f64>()
        })
        .collect();
    // cumulative Plancherel mass 2 * int_0^z hat^2
    let mut cum = vec![0.0; hat.len()];
    for i in 1..hat.len() {
        cum[i] = cum[i - 1] + (hat[i - 1].powi(2) + hat[i].powi(2)) * step; // 2 * trapezoid
    }
    let total = 2.0 * std::f64::consts::PI; // Parseval for a unit-L2 function
    cum.iter()
        .map(|&c| ((total - c).max(0.0) / total).sqrt())
        .collect()
}

fn build_tail_table_2d() -> Vec<f64> {
    let nc = norm_constant(2);
    let (rq, wr) = gl_on_interval(300, 0.0, 1.0);
    let psi: Vec<f64> = rq.iter().map(|&r| nc * raw_profile(r * r)).collect();
    // J0 via its integral representation on a fine z-grid, then interpolated
    let jmax = TAIL_ZMAX; // arguments z*r <= TAIL_ZMAX
    let jn = 32_000usize;
    let jstep = jmax / jn as f64;
    let (tq, tw) = gl_on_interval(256, 0.0, std::f64::consts::PI);
    let sins: Vec<f64> = tq.iter().map(|&t| t.sin()).collect();
    let j0: Vec<f64> = (0..=jn)
        .map(|i| {
            let z = i as f64 * jstep;
            tw.iter()
                .zip(&sins)
                .map(|(&w, &s)| w * (z * s).cos())
                .sum::<f64>()
                / std::f64::consts::PI
        })
        .collect();
    let j0_at = |z: f64| -> f64 {
        let u = z / jstep;
        let i = (u as usize).min(jn - 1);
        let f = u - i as f64;
        j0[i] * (1.0 - f) + j0[i + 1] * f
    };
    let step = TAIL_ZMAX / TAIL_STEPS as f64;
    let hat: Vec<f64> = (0..=TAIL_STEPS)
        .map(|i| {
            let z = i as f64 * step;
            2.0 * std::f64::consts::PI
                * rq.iter()
                    .zip(&wr)
                    .zip(&psi)
                    .map(|((&r, &w), &p)| w * p * j0_at(z * r) * r)
                    .sum::<f64>()
        })
        .collect();
    // cumulative radial Plancherel mass int_0^z hat^2 rho drho;
    // total = 2pi for a unit-L2 function
    let mut cum = vec![0.0; hat.len()];
    for i in 1..hat.len() {
        let z0 = (i - 1) as f64 * step;
        let z1 = i as f64 * step;
        cum[i] = cum[i - 1] + 0.5 * (hat[i - 1].powi(2) * z0 + hat[i].powi(2) * z1) * step;
    }
    let total = 2.0 * std::f64::consts::PI;
    cum.iter()
        .map(|&c| ((total - c).max(0.0) / total).sqrt())
        .collect()
}
