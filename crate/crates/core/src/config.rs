//! Experiment configuration: key=value text files, strict key checking,
//! canonical serialization, and the content hash embedded in run reports.

use crate::bump::BumpSpec;
use crate::error::{Error, Result};
use crate::grid::BoxDomain;
use crate::packet::{EpsilonPolicy, TruncationMode};
use crate::report::{fmt_f64, hash_hex};

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub d: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub res: Vec<usize>,
    pub epsilon0: f64,
    pub delta: f64,
    pub x0: Vec<f64>,
    pub eta: f64,
    pub epsilon: f64,
    pub mode: TruncationMode,
    /// "fixed" uses `epsilon` directly; "ob1" runs the paper's bisection.
    pub eta_search: String,
    pub m_fraction: f64,
    pub t_end: f64,
    pub n_radius: f64,
    pub iters: usize,
    pub tol: f64,
    pub step_c: f64,
    pub seed: u64,
    pub trials: usize,
    pub modes_cap: usize,
    pub c_sd: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            d: 1,
            lo: vec![-1.0],
            hi: vec![1.0],
            res: vec![256],
            epsilon0: 0.1,
            delta: 0.5,
            x0: vec![0.0],
            eta: 0.1,
            epsilon: (-std::f64::consts::E).exp(),
            mode: TruncationMode::Spectral,
            eta_search: "fixed".into(),
            m_fraction: 0.3,
            t_end: 0.05,
            n_radius: 16.0,
            iters: 5000,
            tol: 1e-6,
            step_c: 1.0,
            seed: 42,
            trials: 20,
            modes_cap: 64,
            c_sd: 1.0,
        }
    }
}

impl ExperimentConfig {
    pub fn default_for_dim(d: usize) -> Self {
        let mut c = ExperimentConfig::default();
        if d == 2 {
            c.d = 2;
            c.lo = vec![-1.5, -1.5];
            c.hi = vec![1.5, 1.5];
            c.res = vec![64, 64];
            c.epsilon0 = 0.6;
            c.delta = 0.8;
            c.x0 = vec![0.0, 0.0];
            c.epsilon = (-std::f64::consts::E).exp();
            c.mode = TruncationMode::Spectral;
            c.n_radius = 4.0;
        }
        c
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = ExperimentConfig::default();
        let mut seen_d = false;
        // first pass: dimension decides the per-dimension defaults
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got '{line}'")))?;
            if key.trim() == "d" {
                let d: usize = value
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad d '{value}'")))?;
                c = ExperimentConfig::default_for_dim(d);
                seen_d = true;
            }
        }
        let _ = seen_d;
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').unwrap();
            let key = key.trim();
            let value = value.trim();
            let fval = || -> Result<f64> {
                value
                    .parse::<f64>()
                    .map_err(|_| Error::Config(format!("bad float for {key}: '{value}'")))
            };
            let uval = || -> Result<usize> {
                value
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("bad integer for {key}: '{value}'")))
            };
            let flist = || -> Result<Vec<f64>> {
                value
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::Config(format!("bad list for {key}: '{value}'")))
                    })
                    .collect()
            };
            match key {
                "d" => {}
                "lo" => c.lo = flist()?,
                "hi" => c.hi = flist()?,
                "x0" => c.x0 = flist()?,
                "res" => {
                    c.res = value
                        .split(',')
                        .map(|s| {
                            s.trim().parse::<usize>().map_err(|_| {
                                Error::Config(format!("bad res list '{value}'"))
                            })
                        })
                        .collect::<Result<_>>()?
                }
                "epsilon0" => c.epsilon0 = fval()?,
                "delta" => c.delta = fval()?,
                "eta" => c.eta = fval()?,
                "epsilon" => c.epsilon = fval()?,
                "mode" => c.mode = TruncationMode::parse(value)?,
                "eta_search" => {
                    if value != "fixed" && value != "ob1" {
                        return Err(Error::Config(format!("bad eta_search '{value}'")));
                    }
                    c.eta_search = value.to_string();
                }
                "M" => c.m_fraction = fval()?,
                "T" => c.t_end = fval()?,
                "N" => c.n_radius = fval()?,
                "iters" => c.iters = uval()?,
                "tol" => c.tol = fval()?,
                "step_c" => c.step_c = fval()?,
                "seed" => {
                    c.seed = value
                        .parse::<u64>()
                        .map_err(|_| Error::Config(format!("bad seed '{value}'")))?
                }
                "trials" => c.trials = uval()?,
                "modes_cap" => c.modes_cap = uval()?,
                "c_sd" => c.c_sd = fval()?,
                other => return Err(Error::Config(format!("unknown config key '{other}'"))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if self.lo.len() != self.d || self.hi.len() != self.d || self.res.len() != self.d {
            return Err(Error::Config(
                "lo/hi/res arity must match the dimension d".into(),
            ));
        }
        if self.x0.len() != self.d {
            return Err(Error::Config("x0 arity must match d".into()));
        }
        let _ = self.domain()?;
        Ok(())
    }

    pub fn domain(&self) -> Result<BoxDomain> {
        BoxDomain::new(self.lo.clone(), self.hi.clone())
    }

    pub fn bump(&self) -> BumpSpec {
        BumpSpec::new(self.epsilon0, self.x0.clone(), self.delta)
    }

    pub fn epsilon_policy(&self) -> EpsilonPolicy {
        if self.eta_search == "ob1" {
            EpsilonPolicy::Ob1Bisection
        } else {
            EpsilonPolicy::Fixed(self.epsilon)
        }
    }

    /// Canonical text (sorted keys, 17-digit floats): the hashed identity of
    /// a run.
    pub fn canonical(&self) -> String {
        let list = |xs: &[f64]| {
            xs.iter()
                .map(|&v| fmt_f64(v))
                .collect::<Vec<_>>()
                .join(",")
        };
        let mut lines = vec![
            format!("N={}", fmt_f64(self.n_radius)),
            format!("M={}", fmt_f64(self.m_fraction)),
            format!("T={}", fmt_f64(self.t_end)),
            format!("c_sd={}", fmt_f64(self.c_sd)),
            format!("d={}", self.d),
            format!("delta={}", fmt_f64(self.delta)),
            format!("epsilon0={}", fmt_f64(self.epsilon0)),
            format!("epsilon={}", fmt_f64(self.epsilon)),
            format!("eta={}", fmt_f64(self.eta)),
            format!("eta_search={}", self.eta_search),
            format!("hi={}", list(&self.hi)),
            format!("iters={}", self.iters),
            format!("lo={}", list(&self.lo)),
            format!("mode={}", self.mode.name()),
            format!("modes_cap={}", self.modes_cap),
            format!(
                "res={}",
                self.res
                    .iter()
                    .map(|r| r.to_string())
                    .collect::<Vec<_>>()
                    .join(",")
            ),
            format!("seed={}", self.seed),
            format!("step_c={}", fmt_f64(self.step_c)),
            format!("tol={}", fmt_f64(self.tol)),
            format!("trials={}", self.trials),
            format!("x0={}", list(&self.x0)),
        ];
        lines.sort();
        lines.join("\n") + "\n"
    }

    pub fn content_hash(&self) -> String {
        hash_hex(self.canonical().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_round_trip_and_hash_stability() {
        let text = "d=1\nepsilon0=0.1\ndelta=0.5\nT=0.05\nM=0.3\nseed=7\n# comment\n";
        let c = ExperimentConfig::parse(text).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.t_end, 0.05);
        let h1 = c.content_hash();
        let c2 = ExperimentConfig::parse(text).unwrap();
        assert_eq!(h1, c2.content_hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(
            ExperimentConfig::parse("bogus=1\n"),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn dimension_defaults() {
        let c = ExperimentConfig::parse("d=2\n").unwrap();
        assert_eq!(c.res, vec![64, 64]);
        assert_eq!(c.mode, TruncationMode::Spectral);
        // overriding after d works regardless of line order
        let c = ExperimentConfig::parse("res=32,32\nd=2\n").unwrap();
        assert_eq!(c.res, vec![32, 32]);
    }

    #[test]
    fn arity_mismatch_rejected() {
        assert!(ExperimentConfig::parse("d=2\nlo=-1\n").is_err());
    }
}
