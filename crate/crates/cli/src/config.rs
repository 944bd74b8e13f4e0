//! Experiment configuration.
//!
//! One `key = value` pair per line; `#` starts a comment. Numbers accept
//! fractions (`h = 1/128`). Recognised keys:
//!
//! ```text
//! scenario = name                 label copied into the manifest
//! R, T, rho                       geometry; rho defaults to the smallest aligned value >= (R+T)/2
//! h, lmax                         resolution
//! model = radial|linearized|nonlinear
//! q = <profile>                   radial potential q(|x|)
//! q.<l>.<m> = <profile>           coefficient q_lm(r) of r^l φ_lm in q
//! q_file = path                   potential JSON (replaces q, q.<l>.<m>)
//! q_b = <profile>                 linearization background
//! noise, seed                     iid Gaussian trace noise and its seed
//! sweeps, smoothing, noise_floor, depth
//! kirchhoff_order                 sphere quadrature order (default 32)
//! threshold                       relative L2 bound checked by `invert` (default 0.05)
//! qgamma_points                   radii sampled by `qgamma` (default 17)
//! experiment = mms|layer-strip|zero, k, min_order   convergence study
//! save_field = true|false
//! out = dir
//! ```
//!
//! Profiles: `zero`, `const c`, `bump a c w` (a exp(-(r-c)^2/w)),
//! `gauss a w` (a exp(-(r/w)^2)), `poly c0 c1 ...`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use conewave::inverse::InversionConfig;
use conewave::radial::node_count;
use conewave::sphgrid::mode_index;
use conewave::{CharGrid, HarmonicPotential, RadialProfile};
use sha2::{Digest, Sha256};

use crate::CliError;

const KEYS: &[&str] = &[
    "scenario",
    "R",
    "T",
    "rho",
    "h",
    "lmax",
    "model",
    "q",
    "q_file",
    "q_b",
    "noise",
    "seed",
    "sweeps",
    "smoothing",
    "noise_floor",
    "depth",
    "kirchhoff_order",
    "threshold",
    "qgamma_points",
    "experiment",
    "k",
    "min_order",
    "save_field",
    "out",
];

#[derive(Debug, Clone, PartialEq)]
pub enum Profile {
    Zero,
    Const(f64),
    Bump { amp: f64, center: f64, width: f64 },
    Gauss { amp: f64, width: f64 },
    Poly(Vec<f64>),
}

impl Profile {
    pub fn eval(&self, r: f64) -> f64 {
        match self {
            Profile::Zero => 0.0,
            Profile::Const(c) => *c,
            Profile::Bump { amp, center, width } => amp * (-(r - center).powi(2) / width).exp(),
            Profile::Gauss { amp, width } => amp * (-(r / width).powi(2)).exp(),
            Profile::Poly(c) => c.iter().rev().fold(0.0, |acc, a| acc * r + a),
        }
    }

    fn parse(key: &str, text: &str) -> Result<Self, CliError> {
        let mut words = text.split_whitespace();
        let kind = words.next().unwrap_or("");
        let args = words
            .map(|w| parse_number(key, w))
            .collect::<Result<Vec<f64>, _>>()?;
        let arity = |n: usize| {
            if args.len() == n {
                Ok(())
            } else {
                Err(CliError::validation(key, format!("`{kind}` takes {n} numbers, got {}", args.len())))
            }
        };
        match kind {
            "zero" => arity(0).map(|_| Profile::Zero),
            "const" => arity(1).map(|_| Profile::Const(args[0])),
            "bump" => {
                arity(3)?;
                if args[2] <= 0.0 {
                    return Err(CliError::validation(key, "bump width must be > 0"));
                }
                Ok(Profile::Bump {
                    amp: args[0],
                    center: args[1],
                    width: args[2],
                })
            }
            "gauss" => {
                arity(2)?;
                if args[1] <= 0.0 {
                    return Err(CliError::validation(key, "gauss width must be > 0"));
                }
                Ok(Profile::Gauss {
                    amp: args[0],
                    width: args[1],
                })
            }
            "poly" if !args.is_empty() => Ok(Profile::Poly(args)),
            _ => Err(CliError::validation(
                key,
                format!("unknown profile `{text}` (zero, const, bump, gauss, poly)"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Model {
    Radial,
    Linearized,
    Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Mms,
    LayerStrip,
    Zero,
}

/// Where the potential comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum PotentialSpec {
    Formula {
        radial: Option<Profile>,
        modes: Vec<((usize, i64), Profile)>,
    },
    File(PathBuf),
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub scenario: String,
    pub radius: f64,
    pub t_end: f64,
    pub rho: f64,
    pub h: f64,
    pub lmax: usize,
    pub model: Model,
    pub potential: Option<PotentialSpec>,
    pub q_b: Profile,
    pub noise: f64,
    pub seed: u64,
    pub inversion: InversionConfig,
    pub kirchhoff_order: usize,
    pub threshold: f64,
    pub qgamma_points: usize,
    pub experiment: Experiment,
    pub k: usize,
    pub min_order: f64,
    pub save_field: bool,
    pub out: Option<PathBuf>,
    /// Normalised `key=value` lines, sorted; the hashed identity of the run.
    pub canonical: String,
}

fn parse_number(key: &str, text: &str) -> Result<f64, CliError> {
    let v = match text.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|_| CliError::validation(key, format!("`{text}` is not a number")))?;
            let b: f64 = b.trim().parse().map_err(|_| CliError::validation(key, format!("`{text}` is not a number")))?;
            a / b
        }
        None => text
            .parse()
            .map_err(|_| CliError::validation(key, format!("`{text}` is not a number")))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(CliError::validation(key, format!("`{text}` is not finite")))
    }
}

fn parse_usize(key: &str, text: &str) -> Result<usize, CliError> {
    text.parse()
        .map_err(|_| CliError::validation(key, format!("`{text}` is not a non-negative integer")))
}

fn parse_mode_key(key: &str) -> Result<Option<(usize, i64)>, CliError> {
    let Some(rest) = key.strip_prefix("q.") else {
        return Ok(None);
    };
    let (l, m) = rest
        .split_once('.')
        .ok_or_else(|| CliError::validation(key, "expected q.<l>.<m>"))?;
    let l = parse_usize(key, l)?;
    let m: i64 = m
        .parse()
        .map_err(|_| CliError::validation(key, format!("`{m}` is not an integer order")))?;
    if m.unsigned_abs() as usize > l {
        return Err(CliError::validation(key, format!("order {m} exceeds degree {l}")));
    }
    Ok(Some((l, m)))
}

fn aligned(key: &str, v: f64, h: f64) -> Result<(), CliError> {
    match node_count(v, h) {
        Some(_) => Ok(()),
        None => Err(CliError::validation(key, format!("{v} is not a multiple of h = {h}"))),
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Parse and validate. Relative `q_file` paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self, CliError> {
        let mut raw: BTreeMap<String, String> = BTreeMap::new();
        let mut modes = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::validation(&format!("line {}", lineno + 1), "expected `key = value`")
            })?;
            let (key, value) = (key.trim(), value.trim());
            if let Some(lm) = parse_mode_key(key)? {
                modes.push((lm, Profile::parse(key, value)?));
            } else if !KEYS.contains(&key) {
                return Err(CliError::validation(key, "unknown key"));
            }
            if raw.insert(key.to_string(), value.to_string()).is_some() {
                return Err(CliError::validation(key, "given twice"));
            }
        }
        let get = |k: &str| raw.get(k).map(String::as_str);
        let need = |k: &str| get(k).ok_or_else(|| CliError::validation(k, "required"));

        let h = parse_number("h", need("h")?)?;
        if h <= 0.0 {
            return Err(CliError::validation("h", "must be > 0"));
        }
        let radius = parse_number("R", need("R")?)?;
        let t_end = parse_number("T", need("T")?)?;
        if radius <= 0.0 {
            return Err(CliError::validation("R", "must be > 0"));
        }
        if radius >= t_end {
            return Err(CliError::validation("R", format!("need R < T, got R = {radius}, T = {t_end}")));
        }
        aligned("R", radius, h)?;
        aligned("T", t_end, h)?;
        let rho = match get("rho") {
            Some(v) => parse_number("rho", v)?,
            None => (0.5 * (radius + t_end) / h - 1e-9).ceil() * h,
        };
        aligned("rho", rho, h)?;
        if t_end > 2.0 * rho - radius + 1e-12 {
            return Err(CliError::validation(
                "rho",
                format!("need T <= 2 rho - R, got T = {t_end}, 2 rho - R = {}", 2.0 * rho - radius),
            ));
        }
        let lmax = match get("lmax") {
            Some(v) => parse_usize("lmax", v)?,
            None => 0,
        };
        for ((l, _), _) in &modes {
            if *l > lmax {
                return Err(CliError::validation(&format!("q.{l}"), format!("degree exceeds lmax = {lmax}")));
            }
        }
        let model = match get("model").unwrap_or("radial") {
            "radial" => Model::Radial,
            "linearized" => Model::Linearized,
            "nonlinear" => Model::Nonlinear,
            other => return Err(CliError::validation("model", format!("unknown model `{other}`"))),
        };
        let radial_q = get("q").map(|v| Profile::parse("q", v)).transpose()?;
        let potential = match get("q_file") {
            Some(_) if radial_q.is_some() || !modes.is_empty() => {
                return Err(CliError::validation("q_file", "cannot be combined with q or q.<l>.<m>"))
            }
            Some(p) => Some(PotentialSpec::File(base.join(p))),
            None if radial_q.is_none() && modes.is_empty() => None,
            None => Some(PotentialSpec::Formula { radial: radial_q, modes }),
        };
        let q_b = get("q_b").map(|v| Profile::parse("q_b", v)).transpose()?.unwrap_or(Profile::Zero);

        let number_or = |k: &str, d: f64| get(k).map(|v| parse_number(k, v)).transpose().map(|v| v.unwrap_or(d));
        let usize_or = |k: &str, d: usize| get(k).map(|v| parse_usize(k, v)).transpose().map(|v| v.unwrap_or(d));

        let noise = number_or("noise", 0.0)?;
        if noise < 0.0 {
            return Err(CliError::validation("noise", "must be >= 0"));
        }
        let seed = get("seed")
            .map(|v| v.parse::<u64>().map_err(|_| CliError::validation("seed", format!("`{v}` is not a u64"))))
            .transpose()?
            .unwrap_or(0);
        let inversion = InversionConfig {
            step: Some(h),
            sweeps: usize_or("sweeps", 3)?,
            smoothing: number_or("smoothing", 0.0)?,
            noise_floor: number_or("noise_floor", 0.0)?,
            depth: get("depth").map(|v| parse_number("depth", v)).transpose()?,
        };
        inversion
            .validate()
            .map_err(|e| CliError::validation("inversion", e.to_string()))?;
        let kirchhoff_order = usize_or("kirchhoff_order", 32)?;
        if kirchhoff_order < 2 {
            return Err(CliError::validation("kirchhoff_order", "must be >= 2"));
        }
        let threshold = number_or("threshold", 0.05)?;
        if threshold <= 0.0 {
            return Err(CliError::validation("threshold", "must be > 0"));
        }
        let qgamma_points = usize_or("qgamma_points", 17)?;
        if qgamma_points < 2 {
            return Err(CliError::validation("qgamma_points", "must be >= 2"));
        }
        let experiment = match get("experiment").unwrap_or("mms") {
            "mms" => Experiment::Mms,
            "layer-strip" => Experiment::LayerStrip,
            "zero" => Experiment::Zero,
            other => return Err(CliError::validation("experiment", format!("unknown experiment `{other}`"))),
        };
        let k = usize_or("k", 0)?;
        let min_order = number_or("min_order", 1.8)?;
        let save_field = match get("save_field").unwrap_or("false") {
            "true" => true,
            "false" => false,
            other => return Err(CliError::validation("save_field", format!("`{other}` is not true/false"))),
        };
        let canonical = raw.iter().map(|(k, v)| format!("{k}={v}\n")).collect();
        Ok(ExperimentConfig {
            scenario: get("scenario").unwrap_or("unnamed").to_string(),
            radius,
            t_end,
            rho,
            h,
            lmax,
            model,
            potential,
            q_b,
            noise,
            seed,
            inversion,
            kirchhoff_order,
            threshold,
            qgamma_points,
            experiment,
            k,
            min_order,
            save_field,
            out: get("out").map(PathBuf::from),
            canonical,
        })
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical.as_bytes()))
    }

    pub fn grid(&self) -> Result<CharGrid, CliError> {
        Ok(CharGrid::new(self.h, self.rho)?)
    }

    /// Copy with spacing `h / factor`; the canonical text records the change.
    pub fn refined(&self, factor: usize) -> Self {
        let mut c = self.clone();
        c.h = self.h / factor as f64;
        c.inversion.step = Some(c.h);
        c.canonical = format!("{}refine={factor}\n", self.canonical);
        c
    }

    pub fn background(&self) -> Result<RadialProfile, CliError> {
        let q_b = self.q_b.clone();
        Ok(RadialProfile::from_fn(self.h, self.rho, move |r| q_b.eval(r))?)
    }

    /// The configured potential on `[0, rho]`, or `None` when none is given.
    pub fn potential(&self) -> Result<Option<HarmonicPotential>, CliError> {
        match &self.potential {
            None => Ok(None),
            Some(PotentialSpec::File(p)) => Ok(Some(load_potential(p)?)),
            Some(PotentialSpec::Formula { radial, modes }) => {
                let c0 = (4.0 * std::f64::consts::PI).sqrt();
                let q = HarmonicPotential::from_fn(self.lmax, self.h, self.rho, |n, r| {
                    let mut v = 0.0;
                    if n == 0 {
                        if let Some(p) = radial {
                            v += c0 * p.eval(r);
                        }
                    }
                    for ((l, m), p) in modes {
                        if mode_index(*l, *m) == n {
                            v += p.eval(r);
                        }
                    }
                    v
                })?;
                Ok(Some(q))
            }
        }
    }

    pub fn require_potential(&self) -> Result<HarmonicPotential, CliError> {
        self.potential()?
            .ok_or_else(|| CliError::validation("q", "no potential given (q, q.<l>.<m> or q_file)"))
    }
}

/// Load a potential file; empty files are a validation error.
pub fn load_potential(path: &Path) -> Result<HarmonicPotential, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    if text.trim().is_empty() {
        return Err(CliError::validation("potential", format!("{} is empty", path.display())));
    }
    Ok(HarmonicPotential::from_json(&text, &path.display().to_string())?)
}
