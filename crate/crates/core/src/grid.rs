//! Box domains, sampled grid fields, and observation masks.
//!
//! A [`GridField`] stores samples at cell centers of a uniform Cartesian grid
//! over a [`BoxDomain`]; the quadrature weight of every sample is the cell
//! volume. Fields round-trip through a plain text format (`HPGRID` header,
//! one sample per line, 17 significant digits) and masks additionally export
//! as PGM images.

use crate::error::{Error, Result};
use crate::report::fmt_f64;
use num_complex::Complex64;
use std::fmt::Write as _;
use std::path::Path;

/// Axis-aligned box in R^d, d in {1, 2, 3}.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxDomain {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoxDomain {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() || lo.is_empty() || lo.len() > 3 {
            return Err(Error::Config(format!(
                "box dimension must be 1..=3, got lo/hi of lengths {}/{}",
                lo.len(),
                hi.len()
            )));
        }
        if lo.iter().zip(&hi).any(|(a, b)| a >= b) {
            return Err(Error::Config("box has empty extent on some axis".into()));
        }
        Ok(BoxDomain { lo, hi })
    }

    /// Unit-volume box centered at the origin (the paper's |Omega| = 1 preset).
    pub fn unit_centered(d: usize) -> Self {
        BoxDomain {
            lo: vec![-0.5; d],
            hi: vec![0.5; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn side(&self, axis: usize) -> f64 {
        self.hi[axis] - self.lo[axis]
    }

    pub fn volume(&self) -> f64 {
        (0..self.dim()).map(|j| self.side(j)).product()
    }

    pub fn diameter(&self) -> f64 {
        (0..self.dim()).map(|j| self.side(j).powi(2)).sum::<f64>().sqrt()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&xi, (&lo, &hi))| xi >= lo && xi <= hi)
    }

    /// Exact distance from an interior point to the box boundary.
    pub fn distance_to_boundary(&self, x: &[f64]) -> f64 {
        (0..self.dim())
            .map(|j| (x[j] - self.lo[j]).min(self.hi[j] - x[j]))
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum FieldValues {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl FieldValues {
    pub fn len(&self) -> usize {
        match self {
            FieldValues::Real(v) => v.len(),
            FieldValues::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Samples of a real or complex function at the cell centers of a uniform
/// grid over a box.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub domain: BoxDomain,
    pub res: Vec<usize>,
    pub values: FieldValues,
}

impl GridField {
    pub fn zeros(domain: BoxDomain, res: Vec<usize>) -> Result<Self> {
        Self::check_res(&domain, &res)?;
        let n = res.iter().product();
        Ok(GridField {
            domain,
            res,
            values: FieldValues::Real(vec![0.0; n]),
        })
    }

    pub fn from_fn(domain: BoxDomain, res: Vec<usize>, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        Self::check_res(&domain, &res)?;
        let mut g = Self::zeros(domain, res)?;
        let centers: Vec<Vec<f64>> = g.cell_centers().collect();
        if let FieldValues::Real(v) = &mut g.values {
            for (i, c) in centers.iter().enumerate() {
                v[i] = f(c);
            }
        }
        Ok(g)
    }

    pub fn from_fn_complex(
        domain: BoxDomain,
        res: Vec<usize>,
        f: impl Fn(&[f64]) -> Complex64,
    ) -> Result<Self> {
        Self::check_res(&domain, &res)?;
        let n: usize = res.iter().product();
        let mut g = GridField {
            domain,
            res,
            values: FieldValues::Complex(vec![Complex64::new(0.0, 0.0); n]),
        };
        let centers: Vec<Vec<f64>> = g.cell_centers().collect();
        if let FieldValues::Complex(v) = &mut g.values {
            for (i, c) in centers.iter().enumerate() {
                v[i] = f(c);
            }
        }
        Ok(g)
    }

    fn check_res(domain: &BoxDomain, res: &[usize]) -> Result<()> {
        if res.len() != domain.dim() || res.contains(&0) {
            return Err(Error::Config(format!(
                "resolution {:?} does not match domain dimension {}",
                res,
                domain.dim()
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.domain.dim()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        (0..self.dim())
            .map(|j| self.domain.side(j) / self.res[j] as f64)
            .product()
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        self.domain.side(axis) / self.res[axis] as f64
    }

    /// Center coordinates of the cell with row-major flat index `i`.
    pub fn center_of(&self, mut i: usize) -> Vec<f64> {
        let d = self.dim();
        let mut idx = vec![0usize; d];
        for axis in (0..d).rev() {
            idx[axis] = i % self.res[axis];
            i /= self.res[axis];
        }
        (0..d)
            .map(|j| self.domain.lo[j] + (idx[j] as f64 + 0.5) * self.spacing(j))
            .collect()
    }

    pub fn cell_centers(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |i| self.center_of(i))
    }

    pub fn real(&self) -> &[f64] {
        match &self.values {
            FieldValues::Real(v) => v,
            FieldValues::Complex(_) => panic!("expected real field"),
        }
    }

    pub fn real_mut(&mut self) -> &mut [f64] {
        match &mut self.values {
            FieldValues::Real(v) => v,
            FieldValues::Complex(_) => panic!("expected real field"),
        }
    }

    pub fn complex(&self) -> &[Complex64] {
        match &self.values {
            FieldValues::Complex(v) => v,
            FieldValues::Real(_) => panic!("expected complex field"),
        }
    }

    /// Integral over the box by midpoint quadrature (real fields).
    pub fn integral(&self) -> f64 {
        self.real().iter().sum::<f64>() * self.cell_volume()
    }

    /// L2 norm over the box by midpoint quadrature.
    pub fn l2_norm(&self) -> f64 {
        let s = match &self.values {
            FieldValues::Real(v) => v.iter().map(|x| x * x).sum::<f64>(),
            FieldValues::Complex(v) => v.iter().map(|z| z.norm_sqr()).sum::<f64>(),
        };
        (s * self.cell_volume()).sqrt()
    }

    pub fn write_text(&self) -> String {
        let kind = match &self.values {
            FieldValues::Real(_) => "real",
            FieldValues::Complex(_) => "complex",
        };
        let mut out = String::new();
        let join = |xs: &[f64]| xs.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(",");
        let _ = writeln!(
            out,
            "HPGRID d={} res={} lo={} hi={} kind={}",
            self.dim(),
            self.res
                .iter()
                .map(|r| r.to_string())
                .collect::<Vec<_>>()
                .join(","),
            join(&self.domain.lo),
            join(&self.domain.hi),
            kind
        );
        match &self.values {
            FieldValues::Real(v) => {
                for &x in v {
                    let _ = writeln!(out, "{}", fmt_f64(x));
                }
            }
            FieldValues::Complex(v) => {
                for z in v {
                    let _ = writeln!(out, "{} {}", fmt_f64(z.re), fmt_f64(z.im));
                }
            }
        }
        out
    }

    pub fn read_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Format("empty grid file".into()))?;
        let mut d = None;
        let mut res: Vec<usize> = Vec::new();
        let mut lo: Vec<f64> = Vec::new();
        let mut hi: Vec<f64> = Vec::new();
        let mut kind = String::new();
        let mut fields = header.split_whitespace();
        if fields.next() != Some("HPGRID") {
            return Err(Error::Format("missing HPGRID header".into()));
        }
        for field in fields {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad header field '{field}'")))?;
            match key {
                "d" => d = Some(value.parse::<usize>().map_err(|e| Error::Format(e.to_string()))?),
                "res" => {
                    res = value
                        .split(',')
                        .map(|s| s.parse::<usize>().map_err(|e| Error::Format(e.to_string())))
                        .collect::<Result<_>>()?
                }
                "lo" => lo = parse_f64_list(value)?,
                "hi" => hi = parse_f64_list(value)?,
                "kind" => kind = value.to_string(),
                _ => return Err(Error::Format(format!("unknown header key '{key}'"))),
            }
        }
        let d = d.ok_or_else(|| Error::Format("header missing d=".into()))?;
        if res.len() != d || lo.len() != d || hi.len() != d {
            return Err(Error::Format("header res/lo/hi arity mismatch".into()));
        }
        let domain = BoxDomain::new(lo, hi)?;
        let n: usize = res.iter().product();
        let values = match kind.as_str() {
            "real" => {
                let mut v = Vec::with_capacity(n);
                for line in lines.by_ref().take(n) {
                    v.push(parse_f64(line.trim())?);
                }
                if v.len() != n {
                    return Err(Error::Format(format!("expected {n} samples, got {}", v.len())));
                }
                FieldValues::Real(v)
            }
            "complex" => {
                let mut v = Vec::with_capacity(n);
                for line in lines.by_ref().take(n) {
                    let mut parts = line.split_whitespace();
                    let re = parse_f64(parts.next().unwrap_or(""))?;
                    let im = parse_f64(parts.next().unwrap_or(""))?;
                    v.push(Complex64::new(re, im));
                }
                if v.len() != n {
                    return Err(Error::Format(format!("expected {n} samples, got {}", v.len())));
                }
                FieldValues::Complex(v)
            }
            other => return Err(Error::Format(format!("unknown kind '{other}'"))),
        };
        Ok(GridField { domain, res, values })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.write_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_text(&std::fs::read_to_string(path)?)
    }

    /// PGM (P2) export for d <= 2 real fields, values scaled to 0..=255.
    pub fn write_pgm(&self) -> Result<String> {
        let v = self.real();
        let (w, h) = match self.dim() {
            1 => (self.res[0], 1),
            2 => (self.res[1], self.res[0]),
            _ => return Err(Error::Format("PGM export supports d <= 2 only".into())),
        };
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for &x in v {
            min = min.min(x);
            max = max.max(x);
        }
        let span = if max > min { max - min } else { 1.0 };
        let mut out = format!("P2\n{} {}\n255\n", w, h);
        for row in 0..h {
            let mut line = String::new();
            for col in 0..w {
                let idx = if self.dim() == 1 { col } else { row * w + col };
                let g = ((v[idx] - min) / span * 255.0).round() as i64;
                if col > 0 {
                    line.push(' ');
                }
                let _ = write!(line, "{}", g.clamp(0, 255));
            }
            out.push_str(&line);
            out.push('\n');
        }
        Ok(out)
    }
}

fn parse_f64_list(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(parse_f64).collect()
}

fn parse_f64(s: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Format(format!("bad float '{s}'")))
}

/// Observation set: either a density mask on a grid (values in [0, 1]) or
/// all of R^d (used by full-space Gramian cross-checks).
#[derive(Clone, Debug)]
pub enum ObservationSet {
    Masked(GridField),
    FullSpace,
}

impl ObservationSet {
    pub fn masked(mask: GridField) -> Result<Self> {
        let bad = mask
            .real()
            .iter()
            .any(|&x| !(-1e-12..=1.0 + 1e-12).contains(&x));
        if bad {
            return Err(Error::Config("mask values must lie in [0, 1]".into()));
        }
        Ok(ObservationSet::Masked(mask))
    }

    /// Characteristic mask of `omega = {x : x[axis] < threshold}` inside the domain.
    pub fn half_space(domain: BoxDomain, res: Vec<usize>, axis: usize, threshold: f64) -> Result<Self> {
        let mask = GridField::from_fn(domain, res, |x| if x[axis] < threshold { 1.0 } else { 0.0 })?;
        Self::masked(mask)
    }

    /// Total measure of the observation set (mask integral).
    pub fn measure(&self) -> Option<f64> {
        match self {
            ObservationSet::Masked(m) => Some(m.integral()),
            ObservationSet::FullSpace => None,
        }
    }

    /// Measure fraction M = |omega| / |Omega|.
    pub fn fraction(&self) -> Option<f64> {
        match self {
            ObservationSet::Masked(m) => Some(m.integral() / m.domain.volume()),
            ObservationSet::FullSpace => None,
        }
    }

    pub fn mask(&self) -> Option<&GridField> {
        match self {
            ObservationSet::Masked(m) => Some(m),
            ObservationSet::FullSpace => None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn centers_and_volume() {
        let dom = BoxDomain::new(vec![-1.0], vec![1.0]).unwrap();
        let g = GridField::zeros(dom, vec![4]).unwrap();
        assert_eq!(g.cell_volume(), 0.5);
        assert_eq!(g.center_of(0), vec![-0.75]);
        assert_eq!(g.center_of(3), vec![0.75]);
    }

    #[test]
    fn row_major_indexing_2d() {
        let dom = BoxDomain::new(vec![0.0, 0.0], vec![1.0, 2.0]).unwrap();
        let g = GridField::zeros(dom, vec![2, 4]).unwrap();
        // last axis varies fastest
        assert_eq!(g.center_of(1)[1], 0.75);
        assert_eq!(g.center_of(4)[0], 0.75);
    }

    #[test]
    fn distance_to_boundary_box() {
        let dom = BoxDomain::new(vec![0.0, 0.0], vec![2.0, 1.0]).unwrap();
        assert!((dom.distance_to_boundary(&[1.0, 0.5]) - 0.5).abs() < 1e-15);
        assert!((dom.distance_to_boundary(&[0.25, 0.5]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn grid_text_round_trip_real_and_complex() {
        let dom = BoxDomain::new(vec![-1.0, 0.0], vec![1.0, 3.0]).unwrap();
        let g = GridField::from_fn(dom.clone(), vec![3, 5], |x| (x[0] * 7.3).sin() * x[1]).unwrap();
        let back = GridField::read_text(&g.write_text()).unwrap();
        assert_eq!(g, back);

        let gc = GridField::from_fn_complex(dom, vec![2, 2], |x| {
            Complex64::new(x[0], -x[1] * std::f64::consts::E)
        })
        .unwrap();
        let backc = GridField::read_text(&gc.write_text()).unwrap();
        assert_eq!(gc, backc);
    }

    #[test]
    fn half_space_measure() {
        let dom = BoxDomain::new(vec![-1.0], vec![1.0]).unwrap();
        let omega = ObservationSet::half_space(dom, vec![64], 0, 0.0).unwrap();
        assert!((omega.fraction().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pgm_header_and_range() {
        let dom = BoxDomain::new(vec![0.0], vec![1.0]).unwrap();
        let g = GridField::from_fn(dom, vec![8], |x| x[0]).unwrap();
        let pgm = g.write_pgm().unwrap();
        assert!(pgm.starts_with("P2\n8 1\n255\n"));
        assert!(pgm.trim_end().ends_with("255"));
    }
}
