//! Smooth initial profiles on `(0,1)` given by short Fourier series.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// `mean + Σ_k cos[k-1]·cos(kπy) + Σ_k sin[k-1]·sin(kπy)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FourierSeries {
    pub mean: f64,
    pub cos: Vec<f64>,
    pub sin: Vec<f64>,
}

impl FourierSeries {
    pub fn constant(mean: f64) -> Self {
        FourierSeries {
            mean,
            ..Default::default()
        }
    }

    pub fn eval(&self, y: f64) -> f64 {
        let mut v = self.mean;
        for (k, c) in self.cos.iter().enumerate() {
            v += c * ((k + 1) as f64 * PI * y).cos();
        }
        for (k, s) in self.sin.iter().enumerate() {
            v += s * ((k + 1) as f64 * PI * y).sin();
        }
        v
    }

    /// `∂_y` of the series.
    pub fn derivative(&self, y: f64) -> f64 {
        let mut v = 0.0;
        for (k, c) in self.cos.iter().enumerate() {
            let w = (k + 1) as f64 * PI;
            v -= c * w * (w * y).sin();
        }
        for (k, s) in self.sin.iter().enumerate() {
            let w = (k + 1) as f64 * PI;
            v += s * w * (w * y).cos();
        }
        v
    }

    /// True when the series is an even function about both `y = 0` and `y = 1`
    /// (no sine terms), i.e. compatible with mirror reflection at the ends.
    pub fn is_even_about_ends(&self) -> bool {
        self.sin.iter().all(|&s| s == 0.0)
    }

    /// True when the series is odd about both ends (no mean, no cosine terms).
    pub fn is_odd_about_ends(&self) -> bool {
        self.mean == 0.0 && self.cos.iter().all(|&c| c == 0.0)
    }
}

/// Initial density, axial velocity and temperature of the one-dimensional problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileSpec {
    pub rho: FourierSeries,
    pub u: FourierSeries,
    pub theta: FourierSeries,
}

impl Default for ProfileSpec {
    /// `ρ = 1 + 0.1 cos πy`, `u = 0.1 sin πy`, `θ = 1 + 0.1 cos 2πy`.
    fn default() -> Self {
        ProfileSpec {
            rho: FourierSeries {
                mean: 1.0,
                cos: vec![0.1],
                sin: vec![],
            },
            u: FourierSeries {
                mean: 0.0,
                cos: vec![],
                sin: vec![0.1],
            },
            theta: FourierSeries {
                mean: 1.0,
                cos: vec![0.0, 0.1],
                sin: vec![],
            },
        }
    }
}

impl ProfileSpec {
    pub fn uniform(rho: f64, u: f64, theta: f64) -> Self {
        ProfileSpec {
            rho: FourierSeries::constant(rho),
            u: FourierSeries::constant(u),
            theta: FourierSeries::constant(theta),
        }
    }

    /// `(ρ, u, θ)` at `y`.
    pub fn eval(&self, y: f64) -> [f64; 3] {
        [self.rho.eval(y), self.u.eval(y), self.theta.eval(y)]
    }

    /// Whether mirror reflection at the pipe ends reproduces the profile exactly:
    /// ρ and θ even, u odd.
    pub fn reflection_compatible(&self) -> bool {
        self.rho.is_even_about_ends()
            && self.theta.is_even_about_ends()
            && self.u.is_odd_about_ends()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_evaluation_and_derivative() {
        let f = FourierSeries {
            mean: 1.0,
            cos: vec![0.5],
            sin: vec![0.0, 0.25],
        };
        assert!((f.eval(0.0) - 1.5).abs() < 1e-15);
        let h = 1e-6;
        for &y in &[0.1, 0.37, 0.9] {
            let fd = (f.eval(y + h) - f.eval(y - h)) / (2.0 * h);
            assert!((fd - f.derivative(y)).abs() < 1e-8);
        }
    }

    #[test]
    fn default_profile_is_reflection_compatible() {
        let p = ProfileSpec::default();
        assert!(p.reflection_compatible());
        assert!(p.u.eval(0.0).abs() < 1e-15 && p.u.eval(1.0).abs() < 1e-15);
        let mut q = p.clone();
        q.rho.sin = vec![0.0, 0.1];
        assert!(!q.reflection_compatible());
    }
}
