//! Uniformly sampled radial functions and the 1D quadrature/interpolation
//! rules shared by the solvers.

use crate::error::{Error, Result};

/// Samples `f(i h)` on `[0, ρ]`, interpolated by 4-point cubic Lagrange.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialProfile {
    pub h: f64,
    pub samples: Vec<f64>,
}

impl RadialProfile {
    pub fn new(h: f64, samples: Vec<f64>) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("spacing {h} must be > 0")));
        }
        if samples.len() < 2 {
            return Err(Error::InvalidParameter("radial profile needs >= 2 samples".into()));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("radial profile".into()));
        }
        Ok(RadialProfile { h, samples })
    }

    /// Sample `f` on `[0, rho]` with spacing `h`.
    pub fn from_fn(h: f64, rho: f64, f: impl Fn(f64) -> f64) -> Result<Self> {
        let n = node_count(rho, h).ok_or(Error::Misaligned {
            what: "rho",
            value: rho,
            h,
        })?;
        Self::new(h, (0..=n).map(|i| f(i as f64 * h)).collect())
    }

    pub fn zeros(h: f64, rho: f64) -> Result<Self> {
        Self::from_fn(h, rho, |_| 0.0)
    }

    pub fn r_max(&self) -> f64 {
        (self.samples.len() - 1) as f64 * self.h
    }

    pub fn eval(&self, r: f64) -> f64 {
        interp_cubic(&self.samples, self.h, r)
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |a, v| a.max(v.abs()))
    }

    pub fn scaled(&self, a: f64) -> Self {
        RadialProfile {
            h: self.h,
            samples: self.samples.iter().map(|v| a * v).collect(),
        }
    }
}

/// `Some(n)` when `len = n h` to within rounding.
pub fn node_count(len: f64, h: f64) -> Option<usize> {
    if !(len >= 0.0 && h > 0.0) {
        return None;
    }
    let n = (len / h).round();
    if (n * h - len).abs() <= 1e-9 * h.max(len) {
        Some(n as usize)
    } else {
        None
    }
}

/// Cubic Lagrange interpolation on uniform nodes `i h`; stencil clamped at the ends.
pub fn interp_cubic(samples: &[f64], h: f64, r: f64) -> f64 {
    let n = samples.len();
    if n == 1 {
        return samples[0];
    }
    let x = r / h;
    let near = x.round();
    if (x - near).abs() < 1e-12 && near >= 0.0 && (near as usize) < n {
        return samples[near as usize];
    }
    if n < 4 {
        let i = (x.floor().max(0.0) as usize).min(n - 2);
        let s = x - i as f64;
        return samples[i] * (1.0 - s) + samples[i + 1] * s;
    }
    let i = x.floor() as i64;
    let start = (i - 1).clamp(0, n as i64 - 4) as usize;
    let mut out = 0.0;
    for a in 0..4 {
        let xa = (start + a) as f64;
        let mut l = 1.0;
        for b in 0..4 {
            if a != b {
                let xb = (start + b) as f64;
                l *= (x - xb) / (xa - xb);
            }
        }
        out += l * samples[start + a];
    }
    out
}

/// Running integral `F(i h) = ∫_0^{i h} f` by composite Simpson; odd nodes close
/// with a three-point rule on the last interval.
pub fn cumulative_simpson(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    if n == 2 {
        out[1] = 0.5 * h * (f[0] + f[1]);
        return out;
    }
    out[1] = h * (5.0 * f[0] + 8.0 * f[1] - f[2]) / 12.0;
    for i in 2..n {
        if i % 2 == 0 {
            out[i] = out[i - 2] + h / 3.0 * (f[i - 2] + 4.0 * f[i - 1] + f[i]);
        } else {
            out[i] = out[i - 1] + h * (-f[i - 2] + 8.0 * f[i - 1] + 5.0 * f[i]) / 12.0;
        }
    }
    out
}

/// Composite trapezoid over uniformly spaced samples.
pub fn trapezoid(f: &[f64], h: f64) -> f64 {
    match f.len() {
        0 | 1 => 0.0,
        n => h * (0.5 * (f[0] + f[n - 1]) + f[1..n - 1].iter().sum::<f64>()),
    }
}

/// Composite Simpson when the sample count is odd, otherwise Simpson plus a
/// closing three-point interval.
pub fn simpson(f: &[f64], h: f64) -> f64 {
    match f.len() {
        0 | 1 => 0.0,
        _ => *cumulative_simpson(f, h).last().expect("nonempty"),
    }
}

/// Second-order derivative of uniform samples (one-sided at both ends).
pub fn derivative(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    match n {
        0 => vec![],
        1 => vec![0.0],
        2 => vec![(f[1] - f[0]) / h; 2],
        _ => (0..n)
            .map(|i| {
                if i == 0 {
                    (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
                } else if i == n - 1 {
                    (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h)
                } else {
                    (f[i + 1] - f[i - 1]) / (2.0 * h)
                }
            })
            .collect(),
    }
}

/// Relative L² error `‖a − b‖ / ‖b‖` with optional weights.
pub fn relative_l2(a: &[f64], b: &[f64], weights: Option<&[f64]>) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        let w = weights.map_or(1.0, |w| w[i]);
        num += w * (x - y) * (x - y);
        den += w * y * y;
    }
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (num / den).sqrt()
    }
}

/// Observed convergence order from errors at `h` and `h/2`.
pub fn observed_order(coarse: f64, fine: f64) -> f64 {
    (coarse / fine).log2()
}
