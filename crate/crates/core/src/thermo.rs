//! Constitutive model of a heat-conducting compressible gas with radiation.
//!
//! The pressure is written through a reference function `P` of the
//! degeneracy variable `Z = ρ/θ^{3/2}`:
//!
//! ```text
//! p(ρ,θ) = θ^{5/2} P(Z) + (a/3) θ⁴
//! e(ρ,θ) = (3/2) θ^{5/2} P(Z) / ρ + a θ⁴ / ρ
//! s(ρ,θ) = S(Z) + (4a/3) θ³ / ρ,    S'(Z) = -(3/2) ((5/3) P(Z) - Z P'(Z)) / Z²
//! ```
//!
//! Viscosities are affine in θ, the conductivity is `κ0 + κ2 θ² + κ3 θ³`.
//! All quantities are nondimensional.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{NsfError, Result};
use crate::sampling::{halton, lerp};

/// 3×3 tensor stored row-major.
pub type Tensor3 = [[f64; 3]; 3];

const SQRT_3: f64 = 1.732_050_807_568_877_2;

/// The reference pressure function `P(Z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PressureClosure {
    /// `P(Z) = linear·Z + polytropic·Z^{5/3}`; `linear = polytropic = 1` is the
    /// default closure. Gives `S(Z) = -linear·ln Z`.
    LinearPolytropic { linear: f64, polytropic: f64 },
    /// `P(Z) = Z (1+Z)^{2/3}`: Boltzmann-like for small `Z`, degenerate for large `Z`.
    Degenerate,
}

impl PressureClosure {
    pub const REFERENCE: PressureClosure = PressureClosure::LinearPolytropic {
        linear: 1.0,
        polytropic: 1.0,
    };

    fn validate(&self) -> Result<()> {
        match *self {
            PressureClosure::LinearPolytropic { linear, polytropic } => {
                if !(linear > 0.0
                    && polytropic > 0.0
                    && linear.is_finite()
                    && polytropic.is_finite())
                {
                    return Err(NsfError::InvalidParameter(format!(
                        "linear-polytropic closure needs positive coefficients, got ({linear}, {polytropic})"
                    )));
                }
                Ok(())
            }
            PressureClosure::Degenerate => Ok(()),
        }
    }

    /// `P(Z)`.
    pub fn p(&self, z: f64) -> f64 {
        match *self {
            PressureClosure::LinearPolytropic { linear, polytropic } => {
                let c = z.cbrt();
                linear * z + polytropic * z * c * c
            }
            PressureClosure::Degenerate => {
                let w = (1.0 + z).cbrt();
                z * w * w
            }
        }
    }

    /// `P'(Z)`.
    pub fn dp(&self, z: f64) -> f64 {
        match *self {
            PressureClosure::LinearPolytropic { linear, polytropic } => {
                let c = z.cbrt();
                linear + 5.0 / 3.0 * polytropic * c * c
            }
            PressureClosure::Degenerate => (1.0 + 5.0 * z / 3.0) / (1.0 + z).cbrt(),
        }
    }

    /// `P(Z)/Z`, finite at `Z = 0`.
    #[inline]
    pub fn p_over_z(&self, z: f64) -> f64 {
        match *self {
            PressureClosure::LinearPolytropic { linear, polytropic } => {
                let c = z.cbrt();
                linear + polytropic * c * c
            }
            PressureClosure::Degenerate => {
                let w = (1.0 + z).cbrt();
                w * w
            }
        }
    }

    /// `((5/3) P(Z) - Z P'(Z)) / Z`; positive and bounded under the stability hypotheses.
    pub fn stability_ratio(&self, z: f64) -> f64 {
        match *self {
            PressureClosure::LinearPolytropic { linear, .. } => 2.0 / 3.0 * linear,
            PressureClosure::Degenerate => 2.0 / 3.0 / (1.0 + z).cbrt(),
        }
    }

    /// `S(Z)` without the integration constant.
    pub fn s(&self, z: f64) -> f64 {
        match *self {
            PressureClosure::LinearPolytropic { linear, .. } => -linear * z.ln(),
            PressureClosure::Degenerate => {
                // S = -F(w), F'(w) = 3w/(w³-1), w = (1+Z)^{1/3}; w-1 = Z/(w²+w+1) avoids cancellation.
                let w = (1.0 + z).cbrt();
                let q = w * w + w + 1.0;
                let f = (z / q).ln() - 0.5 * q.ln() + SQRT_3 * ((2.0 * w + 1.0) / SQRT_3).atan();
                -f
            }
        }
    }

    /// `S'(Z) = -(3/2)((5/3)P - Z P')/Z²`.
    pub fn ds(&self, z: f64) -> f64 {
        -1.5 * self.stability_ratio(z) / z
    }

    /// `lim_{Z→∞} P(Z)/Z^{5/3}`.
    pub fn p_infinity(&self) -> f64 {
        match *self {
            PressureClosure::LinearPolytropic { polytropic, .. } => polytropic,
            PressureClosure::Degenerate => 1.0,
        }
    }
}

impl fmt::Display for PressureClosure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            c if c == PressureClosure::REFERENCE => write!(f, "reference"),
            PressureClosure::LinearPolytropic { linear, polytropic } => {
                write!(f, "linear-polytropic({linear},{polytropic})")
            }
            PressureClosure::Degenerate => write!(f, "degenerate"),
        }
    }
}

impl FromStr for PressureClosure {
    type Err = NsfError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "reference" => return Ok(PressureClosure::REFERENCE),
            "degenerate" => return Ok(PressureClosure::Degenerate),
            _ => {}
        }
        if let Some(args) = s
            .strip_prefix("linear-polytropic(")
            .and_then(|r| r.strip_suffix(')'))
        {
            let parts: Vec<&str> = args.split(',').map(str::trim).collect();
            if parts.len() == 2 {
                if let (Ok(linear), Ok(polytropic)) = (parts[0].parse(), parts[1].parse()) {
                    let closure = PressureClosure::LinearPolytropic { linear, polytropic };
                    closure.validate()?;
                    return Ok(closure);
                }
            }
        }
        Err(NsfError::InvalidParameter(format!(
            "unknown pressure closure `{s}` (expected `reference`, `degenerate` or `linear-polytropic(c1,c2)`)"
        )))
    }
}

/// Cube root of a positive normal number: bit-level estimate and three Halley steps,
/// within 2 ulp of `f64::cbrt` and several times cheaper.
#[inline]
pub(crate) fn cbrt_pos(x: f64) -> f64 {
    debug_assert!(x.is_normal() && x > 0.0);
    let mut c = f64::from_bits(x.to_bits() / 3 + 0x2A9F_7893_0000_0000);
    for _ in 0..3 {
        let c3 = c * c * c;
        c *= (c3 + 2.0 * x) / (2.0 * c3 + x);
    }
    c
}

/// Plain-data form of the `[thermo]` configuration section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThermoParams {
    pub a: f64,
    pub mu0: f64,
    pub mu1: f64,
    pub eta0: f64,
    pub eta1: f64,
    pub kappa0: f64,
    pub kappa2: f64,
    pub kappa3: f64,
    #[serde(rename = "P_closure")]
    pub p_closure: String,
    #[serde(rename = "S0")]
    pub s0: f64,
}

impl Default for ThermoParams {
    fn default() -> Self {
        ThermoParams {
            a: 1.0,
            mu0: 1.0,
            mu1: 1.0,
            eta0: 0.0,
            eta1: 0.0,
            kappa0: 1.0,
            kappa2: 1.0,
            kappa3: 1.0,
            p_closure: "reference".to_string(),
            s0: 0.0,
        }
    }
}

/// Material constants and closure; immutable once built.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermoModel {
    pub(crate) a: f64,
    pub(crate) mu0: f64,
    pub(crate) mu1: f64,
    pub(crate) eta0: f64,
    pub(crate) eta1: f64,
    pub(crate) kappa0: f64,
    pub(crate) kappa2: f64,
    pub(crate) kappa3: f64,
    pub(crate) closure: PressureClosure,
    pub(crate) s0: f64,
}

impl Default for ThermoModel {
    fn default() -> Self {
        ThermoModel::reference()
    }
}

impl TryFrom<&ThermoParams> for ThermoModel {
    type Error = NsfError;

    fn try_from(p: &ThermoParams) -> Result<Self> {
        let closure: PressureClosure = p.p_closure.parse()?;
        ThermoModel::new(
            p.a,
            [p.mu0, p.mu1],
            [p.eta0, p.eta1],
            [p.kappa0, p.kappa2, p.kappa3],
            closure,
            p.s0,
        )
    }
}

fn check_domain(rho: f64, theta: f64) -> Result<()> {
    if rho > 0.0 && theta > 0.0 && rho.is_finite() && theta.is_finite() {
        Ok(())
    } else {
        Err(NsfError::Domain(format!(
            "need rho > 0 and theta > 0, got rho = {rho}, theta = {theta}"
        )))
    }
}

fn check_theta(theta: f64) -> Result<()> {
    if theta > 0.0 && theta.is_finite() {
        Ok(())
    } else {
        Err(NsfError::Domain(format!("need theta > 0, got {theta}")))
    }
}

impl ThermoModel {
    /// Builds a model, rejecting coefficients outside the admissible cone.
    pub fn new(
        a: f64,
        mu: [f64; 2],
        eta: [f64; 2],
        kappa: [f64; 3],
        closure: PressureClosure,
        s0: f64,
    ) -> Result<Self> {
        let bad = |what: &str| Err(NsfError::InvalidParameter(what.to_string()));
        if !(a > 0.0) {
            return bad("radiation coefficient a must be positive");
        }
        if !(mu[0] > 0.0 && mu[1] > 0.0) {
            return bad("shear viscosity coefficients mu0, mu1 must be positive");
        }
        if !(eta[0] >= 0.0 && eta[1] >= 0.0) {
            return bad("bulk viscosity coefficients eta0, eta1 must be nonnegative");
        }
        if !kappa.iter().all(|&k| k > 0.0) {
            return bad("conductivity coefficients kappa0, kappa2, kappa3 must be positive");
        }
        if !s0.is_finite() {
            return bad("entropy constant S0 must be finite");
        }
        let all = [
            a, mu[0], mu[1], eta[0], eta[1], kappa[0], kappa[1], kappa[2],
        ];
        if !all.iter().all(|v| v.is_finite()) {
            return bad("coefficients must be finite");
        }
        closure.validate()?;
        Ok(ThermoModel {
            a,
            mu0: mu[0],
            mu1: mu[1],
            eta0: eta[0],
            eta1: eta[1],
            kappa0: kappa[0],
            kappa2: kappa[1],
            kappa3: kappa[2],
            closure,
            s0,
        })
    }

    /// `a = 1, μ0 = μ1 = 1, η0 = η1 = 0, κ0 = κ2 = κ3 = 1`, reference closure, `S0 = 0`.
    pub fn reference() -> Self {
        ThermoModel::try_from(&ThermoParams::default()).expect("default parameters are admissible")
    }

    pub fn with_closure(mut self, closure: PressureClosure) -> Result<Self> {
        closure.validate()?;
        self.closure = closure;
        Ok(self)
    }

    pub fn params(&self) -> ThermoParams {
        ThermoParams {
            a: self.a,
            mu0: self.mu0,
            mu1: self.mu1,
            eta0: self.eta0,
            eta1: self.eta1,
            kappa0: self.kappa0,
            kappa2: self.kappa2,
            kappa3: self.kappa3,
            p_closure: self.closure.to_string(),
            s0: self.s0,
        }
    }

    pub fn closure(&self) -> PressureClosure {
        self.closure
    }

    pub fn radiation(&self) -> f64 {
        self.a
    }

    pub fn s0(&self) -> f64 {
        self.s0
    }

    #[inline]
    pub fn mu(&self, theta: f64) -> f64 {
        self.mu0 + self.mu1 * theta
    }

    #[inline]
    pub fn eta(&self, theta: f64) -> f64 {
        self.eta0 + self.eta1 * theta
    }

    #[inline]
    pub fn kappa(&self, theta: f64) -> f64 {
        let t2 = theta * theta;
        self.kappa0 + self.kappa2 * t2 + self.kappa3 * t2 * theta
    }

    /// `ν_i = (4/3)μ_i + η_i`.
    pub fn nu(&self) -> [f64; 2] {
        [
            4.0 / 3.0 * self.mu0 + self.eta0,
            4.0 / 3.0 * self.mu1 + self.eta1,
        ]
    }

    /// One-dimensional viscosity `ν0 + ν1 θ`.
    #[inline]
    pub fn nu_at(&self, theta: f64) -> f64 {
        4.0 / 3.0 * self.mu(theta) + self.eta(theta)
    }

    #[inline]
    fn z_of(rho: f64, theta: f64) -> f64 {
        rho / (theta * theta.sqrt())
    }

    // Unchecked kernels shared by the solvers. Callers guarantee rho, theta > 0.

    #[inline]
    pub(crate) fn pressure_raw(&self, rho: f64, theta: f64) -> f64 {
        let t4 = (theta * theta) * (theta * theta);
        match self.closure {
            PressureClosure::LinearPolytropic { linear, polytropic } => {
                let c = rho.cbrt();
                linear * rho * theta + polytropic * rho * c * c + self.a * t4 / 3.0
            }
            closure => rho * theta * closure.p_over_z(Self::z_of(rho, theta)) + self.a * t4 / 3.0,
        }
    }

    #[inline]
    pub(crate) fn energy_raw(&self, rho: f64, theta: f64) -> f64 {
        let t4 = (theta * theta) * (theta * theta);
        match self.closure {
            PressureClosure::LinearPolytropic { linear, polytropic } => {
                let c = rho.cbrt();
                1.5 * (linear * theta + polytropic * c * c) + self.a * t4 / rho
            }
            closure => 1.5 * theta * closure.p_over_z(Self::z_of(rho, theta)) + self.a * t4 / rho,
        }
    }

    #[inline]
    pub(crate) fn entropy_raw(&self, rho: f64, theta: f64) -> f64 {
        self.s0
            + self.closure.s(Self::z_of(rho, theta))
            + 4.0 * self.a / 3.0 * theta * theta * theta / rho
    }

    /// `∂e/∂θ`.
    #[inline]
    pub(crate) fn cv_raw(&self, rho: f64, theta: f64) -> f64 {
        let z = Self::z_of(rho, theta);
        // ∂θ[θ^{5/2} P(Z)] = (3/2) θ^{3/2} Z ((5/3)P - Z P')/Z = (3/2) ρ ((5/3)P - Z P')/Z
        2.25 * self.closure.stability_ratio(z) + 4.0 * self.a * theta * theta * theta / rho
    }

    /// `∂p/∂ρ` at fixed θ.
    #[inline]
    pub(crate) fn dp_drho_raw(&self, rho: f64, theta: f64) -> f64 {
        theta * self.closure.dp(Self::z_of(rho, theta))
    }

    /// `∂p/∂θ` at fixed ρ.
    #[inline]
    pub(crate) fn dp_dtheta_raw(&self, rho: f64, theta: f64) -> f64 {
        let z = Self::z_of(rho, theta);
        let p = self.closure.p(z);
        let dp = self.closure.dp(z);
        theta * theta.sqrt() * (2.5 * p - 1.5 * z * dp) + 4.0 / 3.0 * self.a * theta * theta * theta
    }

    /// Squared adiabatic sound speed `∂p/∂ρ + θ (∂p/∂θ)² / (ρ² ∂e/∂θ)`.
    #[inline]
    pub(crate) fn sound_speed_sq_raw(&self, rho: f64, theta: f64) -> f64 {
        let pt = self.dp_dtheta_raw(rho, theta);
        self.dp_drho_raw(rho, theta) + theta * pt * pt / (rho * rho * self.cv_raw(rho, theta))
    }

    /// Internal energy as θ → 0⁺ at fixed ρ; no state with `e` at or below it exists.
    #[inline]
    pub(crate) fn cold_energy(&self, rho: f64) -> f64 {
        let c = rho.cbrt();
        1.5 * self.closure.p_infinity() * c * c
    }

    /// Solves `e(ρ, θ) = e_target` for θ by safeguarded Newton on the monotone map `θ ↦ e(ρ, θ)`.
    ///
    /// `guess` seeds the iteration; the bracket `[lo, hi]` always contains the root.
    pub(crate) fn temperature_from_energy(
        &self,
        rho: f64,
        e_target: f64,
        guess: f64,
    ) -> Option<f64> {
        if !(rho > 0.0 && e_target.is_finite()) || e_target <= self.cold_energy(rho) {
            return None;
        }
        let mut lo = 0.0_f64;
        let mut hi = if guess > 0.0 && guess.is_finite() {
            guess
        } else {
            1.0
        };
        while self.energy_raw(rho, hi) < e_target {
            lo = hi;
            hi *= 2.0;
            if hi > 1e150 {
                return None;
            }
        }
        let mut theta = if guess > 0.0 && guess.is_finite() && guess <= hi {
            guess
        } else {
            hi
        };
        for _ in 0..200 {
            let f = self.energy_raw(rho, theta) - e_target;
            if f > 0.0 {
                hi = theta;
            } else {
                lo = theta;
            }
            let step = f / self.cv_raw(rho, theta);
            let mut next = theta - step;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - theta).abs() <= 1e-13 * next || hi - lo <= 1e-14 * hi {
                return Some(next);
            }
            theta = next;
        }
        Some(theta)
    }

    /// Pressure, squared sound speed and `c_v` at `(ρ, θ)` in one pass.
    #[inline]
    pub(crate) fn eos_point(&self, rho: f64, theta: f64) -> EosPoint {
        match self.closure {
            PressureClosure::LinearPolytropic { linear, polytropic } => {
                let c = cbrt_pos(rho);
                self.linear_polytropic_point(linear, polytropic, rho, c * c, theta)
            }
            _ => EosPoint {
                theta,
                p: self.pressure_raw(rho, theta),
                cs2: self.sound_speed_sq_raw(rho, theta),
                cv: self.cv_raw(rho, theta),
            },
        }
    }

    #[inline]
    fn linear_polytropic_point(
        &self,
        linear: f64,
        polytropic: f64,
        rho: f64,
        r23: f64,
        theta: f64,
    ) -> EosPoint {
        let t3 = theta * theta * theta;
        let p = linear * rho * theta + polytropic * rho * r23 + self.a * t3 * theta / 3.0;
        let dp_drho = linear * theta + 5.0 / 3.0 * polytropic * r23;
        let dp_dtheta = linear * rho + 4.0 / 3.0 * self.a * t3;
        let cv = 1.5 * linear + 4.0 * self.a * t3 / rho;
        EosPoint {
            theta,
            p,
            cs2: dp_drho + theta * dp_dtheta * dp_dtheta / (rho * rho * cv),
            cv,
        }
    }

    /// Inverts `e(ρ, ·)` and evaluates [`eos_point`](Self::eos_point) at the result.
    #[inline]
    pub(crate) fn eos_from_energy(&self, rho: f64, e_target: f64, guess: f64) -> Option<EosPoint> {
        match self.closure {
            PressureClosure::LinearPolytropic { linear, polytropic } => {
                if !(rho > 0.0 && e_target.is_finite()) {
                    return None;
                }
                let c = cbrt_pos(rho);
                let r23 = c * c;
                // 1.5·linear·θ + (a/ρ)θ⁴ = g is convex and increasing in θ
                let g = e_target - 1.5 * polytropic * r23;
                if !(g > 0.0) {
                    return None;
                }
                let (k1, b) = (1.5 * linear, self.a / rho);
                let mut theta = if guess > 0.0 && guess.is_finite() {
                    guess
                } else {
                    g / k1
                };
                let mut converged = false;
                for _ in 0..100 {
                    let t3 = theta * theta * theta;
                    let f = k1 * theta + b * t3 * theta - g;
                    let next = theta - f / (k1 + 4.0 * b * t3);
                    let next = if next > 0.0 { next } else { 0.5 * theta };
                    // quadratic convergence with |f''/2f'| ≤ 1.5/θ: a step below 1e-8·θ
                    // leaves an error under 2e-16·θ
                    let done = (next - theta).abs() <= 1e-8 * next;
                    theta = next;
                    if done {
                        converged = true;
                        break;
                    }
                }
                if !converged || !theta.is_finite() {
                    return None;
                }
                Some(self.linear_polytropic_point(linear, polytropic, rho, r23, theta))
            }
            _ => {
                let theta = self.temperature_from_energy(rho, e_target, guess)?;
                Some(self.eos_point(rho, theta))
            }
        }
    }

    /// `p(ρ,θ) = θ^{5/2} P(ρ/θ^{3/2}) + (a/3)θ⁴`.
    pub fn pressure(&self, rho: f64, theta: f64) -> Result<f64> {
        check_domain(rho, theta)?;
        Ok(self.pressure_raw(rho, theta))
    }

    /// Specific internal energy `e(ρ,θ)`.
    pub fn internal_energy(&self, rho: f64, theta: f64) -> Result<f64> {
        check_domain(rho, theta)?;
        Ok(self.energy_raw(rho, theta))
    }

    /// Specific entropy `s(ρ,θ) = S0 + S(ρ/θ^{3/2}) + (4a/3)θ³/ρ`.
    pub fn entropy(&self, rho: f64, theta: f64) -> Result<f64> {
        check_domain(rho, theta)?;
        Ok(self.entropy_raw(rho, theta))
    }

    /// Newtonian stress `μ(θ)(∇u + ∇uᵀ - (2/3) div u I) + η(θ) div u I`.
    ///
    /// `grad_u[i][j] = ∂_j u_i`.
    pub fn stress_tensor(&self, theta: f64, grad_u: &Tensor3) -> Result<Tensor3> {
        if !grad_u.iter().flatten().all(|g| g.is_finite()) || !theta.is_finite() {
            return Err(NsfError::Domain("stress tensor needs finite inputs".into()));
        }
        Ok(stress_from_gradient(
            self.mu(theta),
            self.eta(theta),
            grad_u,
        ))
    }

    /// Fourier flux `-κ(θ) ∇θ`.
    pub fn heat_flux(&self, theta: f64, grad_theta: [f64; 3]) -> Result<[f64; 3]> {
        check_theta(theta)?;
        let k = self.kappa(theta);
        Ok(grad_theta.map(|g| -k * g))
    }

    /// One-dimensional stress `(ν0 + ν1 θ) ∂_y u`.
    pub fn stress_1d(&self, theta: f64, du_dy: f64) -> Result<f64> {
        check_theta(theta)?;
        Ok(self.nu_at(theta) * du_dy)
    }

    /// One-dimensional heat flux `-κ(θ) ∂_y θ`.
    pub fn heat_flux_1d(&self, theta: f64, dtheta_dy: f64) -> Result<f64> {
        check_theta(theta)?;
        Ok(-self.kappa(theta) * dtheta_dy)
    }

    /// Constant `c` with `ρe ≥ c(ρ^{5/3} + θ⁴)` for this closure, namely `min((3/2)P∞, a)`.
    pub fn energy_coercivity_constant(&self) -> f64 {
        (1.5 * self.closure.p_infinity()).min(self.a)
    }

    /// `∂_ρ(ρ e)` in closed form: `(3/2) θ P'(Z)`.
    pub fn d_rho_rho_e(&self, rho: f64, theta: f64) -> Result<f64> {
        check_domain(rho, theta)?;
        Ok(1.5 * theta * self.closure.dp(Self::z_of(rho, theta)))
    }

    /// `∂_ρ(ρ s)` in closed form: `S0 + S(Z) + Z S'(Z)`.
    pub fn d_rho_rho_s(&self, rho: f64, theta: f64) -> Result<f64> {
        check_domain(rho, theta)?;
        let z = Self::z_of(rho, theta);
        Ok(self.s0 + self.closure.s(z) + z * self.closure.ds(z))
    }
}

/// Equation-of-state values at one state, as used by the solvers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct EosPoint {
    pub theta: f64,
    pub p: f64,
    pub cs2: f64,
    pub cv: f64,
}

/// Stress from viscosities already evaluated at the local temperature.
#[inline]
pub(crate) fn stress_from_gradient(mu: f64, eta: f64, g: &Tensor3) -> Tensor3 {
    let div = g[0][0] + g[1][1] + g[2][2];
    let mut s = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            s[i][j] = mu * (g[i][j] + g[j][i]);
        }
        s[i][i] += (eta - 2.0 / 3.0 * mu) * div;
    }
    s
}

/// Pointwise thermodynamic functions, abstracted so the consistency checks can be
/// pointed at perturbed models.
pub trait Thermodynamics {
    fn pressure(&self, rho: f64, theta: f64) -> f64;
    fn internal_energy(&self, rho: f64, theta: f64) -> f64;
    fn entropy(&self, rho: f64, theta: f64) -> f64;
}

impl Thermodynamics for ThermoModel {
    fn pressure(&self, rho: f64, theta: f64) -> f64 {
        self.pressure_raw(rho, theta)
    }

    fn internal_energy(&self, rho: f64, theta: f64) -> f64 {
        self.energy_raw(rho, theta)
    }

    fn entropy(&self, rho: f64, theta: f64) -> f64 {
        self.entropy_raw(rho, theta)
    }
}

/// Residual of `θ Ds = De + p D(1/ρ)` by central differences with absolute `step`,
/// maximised over the ρ and θ directions.
pub fn gibbs_residual<T: Thermodynamics + ?Sized>(
    model: &T,
    rho: f64,
    theta: f64,
    step: f64,
) -> Result<f64> {
    check_domain(rho, theta)?;
    if !(step > 0.0) || step >= 0.5 * rho.min(theta) {
        return Err(NsfError::Domain(format!(
            "finite-difference step {step} must be positive and small against (rho, theta) = ({rho}, {theta})"
        )));
    }
    let p = model.pressure(rho, theta);
    let two_h = 2.0 * step;

    let ds = (model.entropy(rho, theta + step) - model.entropy(rho, theta - step)) / two_h;
    let de = (model.internal_energy(rho, theta + step) - model.internal_energy(rho, theta - step))
        / two_h;
    let theta_dir = (theta * ds - de).abs();

    let ds = (model.entropy(rho + step, theta) - model.entropy(rho - step, theta)) / two_h;
    let de = (model.internal_energy(rho + step, theta) - model.internal_energy(rho - step, theta))
        / two_h;
    let dv = (1.0 / (rho + step) - 1.0 / (rho - step)) / two_h;
    let rho_dir = (theta * ds - de - p * dv).abs();

    Ok(theta_dir.max(rho_dir))
}

/// Outcome of the sampled structural checks on a model.
#[derive(Debug, Clone, Serialize)]
pub struct ThermoCheckReport {
    pub samples: usize,
    pub max_gibbs_residual: f64,
    pub min_dp_drho: f64,
    pub min_de_dtheta: f64,
    /// Extremes of `((5/3)P - Z P')/Z` over the sampled `Z`.
    pub stability_ratio_min: f64,
    pub stability_ratio_max: f64,
    pub p_over_z53_monotone: bool,
    /// `P(Z)/Z^{5/3}` at the largest sampled `Z`.
    pub p_over_z53_tail: f64,
    pub p_infinity: f64,
    pub max_s_prime: f64,
    pub energy_coercivity_constant: f64,
    pub min_energy_coercivity_ratio: f64,
}

impl ThermoCheckReport {
    /// Gibbs tolerance used by [`ThermoCheckReport::passed`].
    pub const GIBBS_TOLERANCE: f64 = 1e-6;

    pub fn passed(&self) -> bool {
        self.max_gibbs_residual < Self::GIBBS_TOLERANCE
            && self.min_dp_drho > 0.0
            && self.min_de_dtheta > 0.0
            && self.stability_ratio_min > 0.0
            && self.stability_ratio_max.is_finite()
            && self.p_over_z53_monotone
            && self.p_infinity > 0.0
            && self.p_over_z53_tail >= self.p_infinity
            && (self.p_over_z53_tail - self.p_infinity) / self.p_infinity < 1e-2
            && self.max_s_prime < 0.0
            && self.min_energy_coercivity_ratio >= 1.0
    }
}

/// Samples `samples` Halton points in `[0.1, 10]²` for the Gibbs, stability and
/// energy-coercivity checks, and a log-spaced `Z` ladder in `(0, 10³]` (extended
/// to `10⁹` for the `P∞` tail) for the closure checks.
pub fn check_model(model: &ThermoModel, samples: usize) -> ThermoCheckReport {
    let mut max_gibbs: f64 = 0.0;
    let mut min_pr = f64::INFINITY;
    let mut min_cv = f64::INFINITY;
    let mut min_coerc = f64::INFINITY;
    let c = model.energy_coercivity_constant();
    for i in 1..=samples as u64 {
        let [u, v] = halton::<2>(i);
        let rho = lerp(0.1, 10.0, u);
        let theta = lerp(0.1, 10.0, v);
        let g = gibbs_residual(model, rho, theta, 1e-5).unwrap_or(f64::INFINITY);
        max_gibbs = max_gibbs.max(g);
        min_pr = min_pr.min(model.dp_drho_raw(rho, theta));
        min_cv = min_cv.min(model.cv_raw(rho, theta));
        let rho_e = rho * model.energy_raw(rho, theta);
        min_coerc = min_coerc.min(rho_e / (c * (rho.powf(5.0 / 3.0) + theta.powi(4))));
    }

    let closure = model.closure();
    let zs: Vec<f64> = (0..=240)
        .map(|k| 10f64.powf(-9.0 + 12.0 * k as f64 / 240.0))
        .collect();
    let mut ratio_min = f64::INFINITY;
    let mut ratio_max: f64 = 0.0;
    let mut max_sp = f64::NEG_INFINITY;
    for &z in zs.iter().filter(|&&z| z <= 1e3) {
        let r = closure.stability_ratio(z);
        ratio_min = ratio_min.min(r);
        ratio_max = ratio_max.max(r);
        max_sp = max_sp.max(closure.ds(z));
    }
    let quotient: Vec<f64> = zs
        .iter()
        .map(|&z| closure.p(z) / z.powf(5.0 / 3.0))
        .collect();
    let monotone = quotient.windows(2).all(|w| w[1] <= w[0]);

    ThermoCheckReport {
        samples,
        max_gibbs_residual: max_gibbs,
        min_dp_drho: min_pr,
        min_de_dtheta: min_cv,
        stability_ratio_min: ratio_min,
        stability_ratio_max: ratio_max,
        p_over_z53_monotone: monotone,
        p_over_z53_tail: *quotient.last().unwrap(),
        p_infinity: closure.p_infinity(),
        max_s_prime: max_sp,
        energy_coercivity_constant: c,
        min_energy_coercivity_ratio: min_coerc,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn model() -> ThermoModel {
        ThermoModel::reference()
    }

    fn central<F: Fn(f64) -> f64>(f: F, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn pressure_matches_hand_substitution() {
        assert_relative_eq!(
            model().pressure(1.0, 1.0).unwrap(),
            2.0 + 1.0 / 3.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn pressure_vacuum_limit_is_radiation() {
        let p = model().pressure(1e-14, 1.0).unwrap();
        assert!((p - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn pressure_density_derivative() {
        let m = model();
        let fd = central(|r| m.pressure_raw(r, 1.0), 1.0, 1e-5);
        assert!((fd - 8.0 / 3.0).abs() < 1e-6);
        assert!((m.dp_drho_raw(1.0, 1.0) - 8.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn internal_energy_values() {
        let m = model();
        assert_relative_eq!(m.internal_energy(1.0, 1.0).unwrap(), 4.0, epsilon = 1e-14);
        assert!(m.cv_raw(1.0, 1.0) > 0.0);
        // ρe at (8, 1): 1.5 (8 + 32) + 1 = 61 ≥ (3/2)·8^{5/3} = 48
        let rho_e = 8.0 * m.internal_energy(8.0, 1.0).unwrap();
        assert_relative_eq!(rho_e, 61.0, epsilon = 1e-12);
        assert!(rho_e >= 48.0);
    }

    #[test]
    fn entropy_of_reference_closure() {
        let m = model();
        assert_relative_eq!(m.entropy(1.0, 1.0).unwrap(), 4.0 / 3.0, epsilon = 1e-14);
        let mut prev = f64::INFINITY;
        for k in 1..100 {
            let s = m.entropy(0.05 * k as f64, 0.7).unwrap();
            assert!(s < prev);
            prev = s;
        }
    }

    #[test]
    fn domain_errors() {
        let m = model();
        assert!(matches!(m.pressure(0.0, 1.0), Err(NsfError::Domain(_))));
        assert!(matches!(
            m.internal_energy(1.0, -1.0),
            Err(NsfError::Domain(_))
        ));
        assert!(matches!(m.entropy(f64::NAN, 1.0), Err(NsfError::Domain(_))));
        assert!(m.heat_flux(0.0, [1.0, 0.0, 0.0]).is_err());
        assert!(m.stress_1d(-1.0, 1.0).is_err());
        assert!(m
            .stress_tensor(1.0, &[[f64::INFINITY, 0.0, 0.0], [0.0; 3], [0.0; 3]])
            .is_err());
    }

    #[test]
    fn invalid_coefficients_rejected() {
        let c = PressureClosure::REFERENCE;
        assert!(ThermoModel::new(0.0, [1.0, 1.0], [0.0, 0.0], [1.0, 1.0, 1.0], c, 0.0).is_err());
        assert!(ThermoModel::new(1.0, [0.0, 1.0], [0.0, 0.0], [1.0, 1.0, 1.0], c, 0.0).is_err());
        assert!(ThermoModel::new(1.0, [1.0, 1.0], [-0.1, 0.0], [1.0, 1.0, 1.0], c, 0.0).is_err());
        assert!(ThermoModel::new(1.0, [1.0, 1.0], [0.0, 0.0], [1.0, 0.0, 1.0], c, 0.0).is_err());
        let bad = PressureClosure::LinearPolytropic {
            linear: -1.0,
            polytropic: 1.0,
        };
        assert!(ThermoModel::new(1.0, [1.0, 1.0], [0.0, 0.0], [1.0, 1.0, 1.0], bad, 0.0).is_err());
    }

    #[test]
    fn closure_names_round_trip() {
        for c in [
            PressureClosure::REFERENCE,
            PressureClosure::Degenerate,
            PressureClosure::LinearPolytropic {
                linear: 0.5,
                polytropic: 2.0,
            },
        ] {
            assert_eq!(c.to_string().parse::<PressureClosure>().unwrap(), c);
        }
        assert!("ideal".parse::<PressureClosure>().is_err());
    }

    #[test]
    fn stress_antisymmetric_gradient_vanishes() {
        let g = [[0.0, 1.0, -2.0], [-1.0, 0.0, 0.5], [2.0, -0.5, 0.0]];
        let s = model().stress_tensor(1.3, &g).unwrap();
        assert!(s.iter().flatten().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn stress_identity_gradient() {
        let m = ThermoModel::new(
            1.0,
            [1.0, 1.0],
            [0.25, 0.5],
            [1.0, 1.0, 1.0],
            PressureClosure::REFERENCE,
            0.0,
        )
        .unwrap();
        let id = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        let s = m.stress_tensor(1.0, &id).unwrap();
        for (i, row) in s.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                let expect = if i == j { 3.0 * 0.75 } else { 0.0 };
                assert!((v - expect).abs() < 1e-14, "S[{i}][{j}] = {v}");
            }
        }
    }

    #[test]
    fn stress_is_affine_in_temperature() {
        let m = model();
        let g = [[0.3, -1.2, 0.4], [0.7, 0.1, -0.9], [0.2, 0.5, -0.6]];
        let s0 = stress_from_gradient(m.mu0, m.eta0, &g);
        let s1 = stress_from_gradient(m.mu1, m.eta1, &g);
        for theta in [0.5, 1.0, 2.0] {
            let s = m.stress_tensor(theta, &g).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    assert!((s[i][j] - (s0[i][j] + theta * s1[i][j])).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn heat_flux_values() {
        let m = model();
        assert_eq!(m.heat_flux(1.0, [0.0; 3]).unwrap(), [0.0; 3]);
        let q = m.heat_flux(1.0, [1.0, 0.0, 0.0]).unwrap();
        assert_eq!(q, [-3.0, 0.0, 0.0]);
        assert!(q[0] * 1.0 <= 0.0);
    }

    #[test]
    fn one_dimensional_laws() {
        let m = ThermoModel::new(
            1.0,
            [0.75, 1e-300],
            [0.0, 0.0],
            [1.0, 1.0, 1.0],
            PressureClosure::REFERENCE,
            0.0,
        )
        .unwrap();
        assert_relative_eq!(m.stress_1d(3.7, 1.0).unwrap(), 1.0, epsilon = 1e-12);
        assert_eq!(m.stress_1d(1.0, 0.0).unwrap(), 0.0);
        assert_eq!(m.heat_flux_1d(1.0, 2.0).unwrap(), -6.0);

        let m = model();
        for theta in [0.4, 1.0, 2.5] {
            let mut g = [[0.0; 3]; 3];
            g[2][2] = 1.7;
            let s = m.stress_tensor(theta, &g).unwrap();
            assert_relative_eq!(
                s[2][2],
                m.stress_1d(theta, 1.7).unwrap(),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn gibbs_residual_examples() {
        let m = model();
        assert!(gibbs_residual(&m, 1.0, 1.0, 1e-5).unwrap() < 1e-6);
        assert!(gibbs_residual(&m, 2.0, 0.5, 1e-5).unwrap() < 1e-5);
        assert!(gibbs_residual(&m, 1.0, 1.0, 0.0).is_err());
        assert!(gibbs_residual(&m, 1e-6, 1.0, 1e-5).is_err());
    }

    struct CorruptedEntropy(ThermoModel);

    impl Thermodynamics for CorruptedEntropy {
        fn pressure(&self, rho: f64, theta: f64) -> f64 {
            self.0.pressure_raw(rho, theta)
        }
        fn internal_energy(&self, rho: f64, theta: f64) -> f64 {
            self.0.energy_raw(rho, theta)
        }
        fn entropy(&self, rho: f64, theta: f64) -> f64 {
            // S0 replaced by an offset depending on Z
            let z = rho / theta.powf(1.5);
            self.0.entropy_raw(rho, theta) + 0.1 * z
        }
    }

    #[test]
    fn gibbs_residual_detects_corrupted_entropy() {
        let r = gibbs_residual(&CorruptedEntropy(model()), 1.0, 1.0, 1e-5).unwrap();
        assert!(r > 1e-2, "residual {r}");
    }

    #[test]
    fn degenerate_closure_is_consistent() {
        let m = model().with_closure(PressureClosure::Degenerate).unwrap();
        for &(r, t) in &[(1.0, 1.0), (0.2, 3.0), (7.0, 0.3)] {
            assert!(gibbs_residual(&m, r, t, 1e-5).unwrap() < 1e-6);
        }
        let c = PressureClosure::Degenerate;
        for &z in &[1e-6, 1e-2, 1.0, 50.0, 1e4] {
            let fd = central(|x| c.s(x), z, 1e-6 * z);
            assert_relative_eq!(fd, c.ds(z), max_relative = 1e-6);
            let fd = central(|x| c.p(x), z, 1e-6 * z);
            assert_relative_eq!(fd, c.dp(z), max_relative = 1e-6);
        }
    }

    #[test]
    fn closed_form_derivatives_match_finite_differences() {
        for m in [
            model(),
            model().with_closure(PressureClosure::Degenerate).unwrap(),
        ] {
            for &(r, t) in &[(1.0, 1.0), (0.3, 2.0), (4.0, 0.6)] {
                let h = 1e-6;
                let cv = central(|x| m.energy_raw(r, x), t, h);
                assert_relative_eq!(cv, m.cv_raw(r, t), max_relative = 1e-7);
                let pt = central(|x| m.pressure_raw(r, x), t, h);
                assert_relative_eq!(pt, m.dp_dtheta_raw(r, t), max_relative = 1e-7);
                let pr = central(|x| m.pressure_raw(x, t), r, h);
                assert_relative_eq!(pr, m.dp_drho_raw(r, t), max_relative = 1e-7);
                let dre = central(|x| x * m.energy_raw(x, t), r, h);
                assert_relative_eq!(dre, m.d_rho_rho_e(r, t).unwrap(), max_relative = 1e-7);
                let drs = central(|x| x * m.entropy_raw(x, t), r, h);
                assert_relative_eq!(drs, m.d_rho_rho_s(r, t).unwrap(), max_relative = 1e-7);
            }
        }
    }

    #[test]
    fn fused_kernels_agree_with_separate_ones() {
        for closure in [PressureClosure::REFERENCE, PressureClosure::Degenerate] {
            let m = model().with_closure(closure).unwrap();
            for &(rho, theta) in &[(0.1, 0.2), (1.0, 1.0), (7.0, 0.3), (0.5, 9.0)] {
                let pt = m.eos_point(rho, theta);
                assert!((pt.p - m.pressure_raw(rho, theta)).abs() <= 1e-13 * pt.p);
                assert!((pt.cs2 - m.sound_speed_sq_raw(rho, theta)).abs() <= 1e-12 * pt.cs2);
                assert!((pt.cv - m.cv_raw(rho, theta)).abs() <= 1e-13 * pt.cv);
                let e = m.energy_raw(rho, theta);
                for guess in [theta, 0.0, 3.0 * theta, 1e-3] {
                    let back = m.eos_from_energy(rho, e, guess).unwrap();
                    assert!(
                        (back.theta - theta).abs() <= 1e-12 * theta,
                        "{rho} {theta} {guess}"
                    );
                }
            }
            assert!(m
                .eos_from_energy(2.0, 0.9 * m.cold_energy(2.0), 1.0)
                .is_none());
        }
    }

    #[test]
    fn temperature_inversion_recovers_theta() {
        for m in [
            model(),
            model().with_closure(PressureClosure::Degenerate).unwrap(),
        ] {
            for &(r, t) in &[(1.0, 1.0), (0.1, 10.0), (10.0, 0.1), (2.0, 0.5)] {
                let e = m.energy_raw(r, t);
                for guess in [t, 1.0, 0.01, 100.0] {
                    let back = m.temperature_from_energy(r, e, guess).unwrap();
                    assert_relative_eq!(back, t, max_relative = 1e-12);
                }
            }
            assert!(m
                .temperature_from_energy(1.0, m.cold_energy(1.0), 1.0)
                .is_none());
            assert!(m
                .temperature_from_energy(1.0, 0.5 * m.cold_energy(1.0), 1.0)
                .is_none());
        }
    }

    #[test]
    fn sampled_checks_pass_for_both_closures() {
        let report = check_model(&model(), 100);
        assert!(report.passed(), "{report:?}");
        assert_relative_eq!(report.stability_ratio_max, 2.0 / 3.0, epsilon = 1e-15);
        let report = check_model(
            &model().with_closure(PressureClosure::Degenerate).unwrap(),
            100,
        );
        assert!(report.passed(), "{report:?}");
    }

    proptest::proptest! {
        #[test]
        fn stress_symmetric_and_flux_antiparallel(
            g in proptest::array::uniform3(proptest::array::uniform3(-10.0f64..10.0)),
            theta in 0.05f64..20.0,
            gt in proptest::array::uniform3(-10.0f64..10.0),
        ) {
            let m = ThermoModel::reference();
            let s = m.stress_tensor(theta, &g).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    proptest::prop_assert!((s[i][j] - s[j][i]).abs() <= 1e-12 * (1.0 + s[i][j].abs()));
                }
            }
            let div = g[0][0] + g[1][1] + g[2][2];
            let tr = s[0][0] + s[1][1] + s[2][2];
            proptest::prop_assert!((tr - 3.0 * m.eta(theta) * div).abs() <= 1e-10 * (1.0 + tr.abs()));
            let q = m.heat_flux(theta, gt).unwrap();
            let dot: f64 = q.iter().zip(gt.iter()).map(|(a, b)| a * b).sum();
            proptest::prop_assert!(dot <= 0.0);
        }

        #[test]
        fn stability_signs(rho in 0.01f64..100.0, theta in 0.01f64..100.0) {
            for m in [ThermoModel::reference(), ThermoModel::reference().with_closure(PressureClosure::Degenerate).unwrap()] {
                proptest::prop_assert!(m.dp_drho_raw(rho, theta) > 0.0);
                proptest::prop_assert!(m.cv_raw(rho, theta) > 0.0);
                let c = m.energy_coercivity_constant();
                let rho_e = rho * m.energy_raw(rho, theta);
                proptest::prop_assert!(rho_e >= c * (rho.powf(5.0 / 3.0) + theta.powi(4)) * (1.0 - 1e-12));
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn fast_cube_root_is_accurate(x in 1e-300f64..1e300) {
            let (a, b) = (cbrt_pos(x), x.cbrt());
            proptest::prop_assert!((a - b).abs() <= 2.0 * f64::EPSILON * b, "{x}: {a} vs {b}");
        }
    }
}
