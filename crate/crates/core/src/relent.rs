//! Ballistic free energy, the relative entropy built from it, the essential/residual
//! split and the scaled distances between a pipe solution and the 1D reference.

use serde::Serialize;

use crate::error::{NsfError, Result};
use crate::sampling::{halton, lerp, log_lerp};
use crate::solver1d::State1D;
use crate::solver3d::State3D;
use crate::thermo::ThermoModel;

fn check_positive(values: &[(&str, f64)]) -> Result<()> {
    for (name, v) in values {
        if !(*v > 0.0 && v.is_finite()) {
            return Err(NsfError::Domain(format!(
                "{name} must be positive, got {v}"
            )));
        }
    }
    Ok(())
}

/// `H^Θ(ρ,θ) = ρe(ρ,θ) − Θ ρs(ρ,θ)`.
pub fn ballistic_free_energy(
    model: &ThermoModel,
    rho: f64,
    theta: f64,
    big_theta: f64,
) -> Result<f64> {
    check_positive(&[("rho", rho), ("theta", theta), ("Theta", big_theta)])?;
    Ok(ballistic_raw(model, rho, theta, big_theta))
}

#[inline]
pub(crate) fn ballistic_raw(model: &ThermoModel, rho: f64, theta: f64, big_theta: f64) -> f64 {
    rho * (model.energy_raw(rho, theta) - big_theta * model.entropy_raw(rho, theta))
}

/// `∂_ρ H^Θ(r, Θ) = ∂_ρ(ρe) − Θ ∂_ρ(ρs)`, both taken at temperature Θ.
pub fn ballistic_density_derivative(model: &ThermoModel, r: f64, big_theta: f64) -> Result<f64> {
    Ok(model.d_rho_rho_e(r, big_theta)? - big_theta * model.d_rho_rho_s(r, big_theta)?)
}

/// Richardson-extrapolated central difference of `ρ ↦ H^Θ(ρ, Θ)` at `r`.
pub fn ballistic_density_derivative_fd(model: &ThermoModel, r: f64, big_theta: f64) -> Result<f64> {
    check_positive(&[("r", r), ("Theta", big_theta)])?;
    let h = 1e-3 * r;
    let d = |h: f64| {
        (ballistic_raw(model, r + h, big_theta, big_theta)
            - ballistic_raw(model, r - h, big_theta, big_theta))
            / (2.0 * h)
    };
    Ok((4.0 * d(0.5 * h) - d(h)) / 3.0)
}

/// Relative entropy `E(ρ,θ | r,Θ) = H^Θ(ρ,θ) − ∂_ρH^Θ(r,Θ)(ρ − r) − H^Θ(r,Θ)`.
pub fn rel_entropy(
    model: &ThermoModel,
    rho: f64,
    theta: f64,
    r: f64,
    big_theta: f64,
) -> Result<f64> {
    check_positive(&[
        ("rho", rho),
        ("theta", theta),
        ("r", r),
        ("Theta", big_theta),
    ])?;
    Ok(rel_entropy_raw(model, rho, theta, r, big_theta))
}

#[inline]
pub(crate) fn rel_entropy_raw(
    model: &ThermoModel,
    rho: f64,
    theta: f64,
    r: f64,
    big_theta: f64,
) -> f64 {
    let slope = model.d_rho_rho_e(r, big_theta).unwrap_or(f64::NAN)
        - big_theta * model.d_rho_rho_s(r, big_theta).unwrap_or(f64::NAN);
    ballistic_raw(model, rho, theta, big_theta)
        - slope * (rho - r)
        - ballistic_raw(model, r, big_theta, big_theta)
}

/// The box `[rho_lo, rho_hi] × [theta_lo, theta_hi]` separating essential from residual states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EssentialWindow {
    pub rho_lo: f64,
    pub rho_hi: f64,
    pub theta_lo: f64,
    pub theta_hi: f64,
}

impl EssentialWindow {
    pub fn new(rho_lo: f64, rho_hi: f64, theta_lo: f64, theta_hi: f64) -> Result<Self> {
        check_positive(&[
            ("rho_lo", rho_lo),
            ("rho_hi", rho_hi),
            ("theta_lo", theta_lo),
            ("theta_hi", theta_hi),
        ])?;
        if rho_lo > rho_hi || theta_lo > theta_hi {
            return Err(NsfError::InvalidParameter(format!(
                "window bounds out of order: [{rho_lo}, {rho_hi}] x [{theta_lo}, {theta_hi}]"
            )));
        }
        Ok(EssentialWindow {
            rho_lo,
            rho_hi,
            theta_lo,
            theta_hi,
        })
    }

    /// Half the smallest and twice the largest values of ρ̃ and θ̃ over all snapshots.
    pub fn from_reference<'a, I>(snapshots: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a State1D>,
    {
        let (mut rl, mut rh, mut tl, mut th) = (f64::INFINITY, 0.0_f64, f64::INFINITY, 0.0_f64);
        let mut any = false;
        for s in snapshots {
            any = true;
            for (&r, &t) in s.rho().iter().zip(s.theta()) {
                rl = rl.min(r);
                rh = rh.max(r);
                tl = tl.min(t);
                th = th.max(t);
            }
        }
        if !any {
            return Err(NsfError::InsufficientData("no reference snapshots".into()));
        }
        EssentialWindow::new(0.5 * rl, 2.0 * rh, 0.5 * tl, 2.0 * th)
    }

    #[inline]
    pub fn contains(&self, rho: f64, theta: f64) -> bool {
        (self.rho_lo..=self.rho_hi).contains(&rho)
            && (self.theta_lo..=self.theta_hi).contains(&theta)
    }
}

/// Splits `values` into the part carried by essential states and the rest.
/// `values`, `rho` and `theta` are sampled at the same points.
pub fn essential_residual_split(
    values: &[f64],
    rho: &[f64],
    theta: &[f64],
    window: &EssentialWindow,
) -> (Vec<f64>, Vec<f64>) {
    assert!(
        values.len() == rho.len() && values.len() == theta.len(),
        "split needs paired samples"
    );
    values
        .iter()
        .zip(rho.iter().zip(theta))
        .map(|(&v, (&r, &t))| {
            if window.contains(r, t) {
                (v, 0.0)
            } else {
                (0.0, v)
            }
        })
        .unzip()
}

/// Largest constants for which the coercivity bounds hold on the samples.
///
/// A constant is `+∞` when no sample constrains it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CoercivityReport {
    pub samples: usize,
    /// Essential states: `E ≥ c (|ρ−r|² + |θ−Θ|²)`.
    pub c_ess: f64,
    /// Residual states: `E ≥ c (1 + |ρs| + ρe)`.
    pub c_res: f64,
    /// `ρ < rho_lo`: `E ≥ c |ρ − r|`.
    pub c_below: f64,
    /// `ρ > rho_hi`: `E ≥ c ρ`.
    pub c_above: f64,
    pub min_rel_entropy: f64,
    /// Samples away from the reference point where `E ≤ 0`.
    pub nonpositive_off_reference: usize,
    /// Largest mismatch between the closed-form and difference-quotient `∂_ρH^Θ`,
    /// relative to the magnitude of its two terms.
    pub max_slope_mismatch: f64,
}

impl CoercivityReport {
    pub const SLOPE_TOLERANCE: f64 = 1e-8;

    pub fn passed(&self) -> bool {
        self.c_ess > 0.0
            && self.c_res > 0.0
            && self.c_below > 0.0
            && self.c_above > 0.0
            && self.min_rel_entropy >= 0.0
            && self.nonpositive_off_reference == 0
            && self.max_slope_mismatch < Self::SLOPE_TOLERANCE
    }
}

/// Evaluates the bounds on explicit `(ρ, θ, r, Θ)` samples.
pub fn coercivity_from_samples(
    model: &ThermoModel,
    window: &EssentialWindow,
    samples: &[[f64; 4]],
) -> Result<CoercivityReport> {
    if samples.is_empty() {
        return Err(NsfError::InsufficientData(
            "coercivity check needs at least one sample".into(),
        ));
    }
    let mut rep = CoercivityReport {
        samples: samples.len(),
        c_ess: f64::INFINITY,
        c_res: f64::INFINITY,
        c_below: f64::INFINITY,
        c_above: f64::INFINITY,
        min_rel_entropy: f64::INFINITY,
        nonpositive_off_reference: 0,
        max_slope_mismatch: 0.0,
    };
    for &[rho, theta, r, big_theta] in samples {
        let e = rel_entropy(model, rho, theta, r, big_theta)?;
        rep.min_rel_entropy = rep.min_rel_entropy.min(e);
        let at_reference = rho == r && theta == big_theta;
        if at_reference {
            continue;
        }
        if e <= 0.0 {
            rep.nonpositive_off_reference += 1;
        }
        let de = model.d_rho_rho_e(r, big_theta)?;
        let ds = big_theta * model.d_rho_rho_s(r, big_theta)?;
        let fd = ballistic_density_derivative_fd(model, r, big_theta)?;
        rep.max_slope_mismatch = rep
            .max_slope_mismatch
            .max(((de - ds) - fd).abs() / (de.abs() + ds.abs()).max(1e-300));
        if window.contains(rho, theta) {
            let d2 = (rho - r).powi(2) + (theta - big_theta).powi(2);
            rep.c_ess = rep.c_ess.min(e / d2);
        } else {
            let s = model.entropy_raw(rho, theta);
            let en = model.energy_raw(rho, theta);
            rep.c_res = rep.c_res.min(e / (1.0 + (rho * s).abs() + rho * en));
        }
        if rho < window.rho_lo {
            rep.c_below = rep.c_below.min(e / (rho - r).abs());
        } else if rho > window.rho_hi {
            rep.c_above = rep.c_above.min(e / rho);
        }
    }
    Ok(rep)
}

/// Low-discrepancy sampling of the bounds: states `(ρ, θ)` log-uniform over the window
/// enlarged by a factor 8 each way, reference points `(r, Θ)` uniform over the
/// window's central half.
pub fn coercivity_check(
    model: &ThermoModel,
    window: &EssentialWindow,
    samples: usize,
) -> Result<CoercivityReport> {
    let w = window;
    let points: Vec<[f64; 4]> = (1..=samples as u64)
        .map(|i| {
            let [a, b, c, d] = halton::<4>(i);
            let (rq, tq) = (
                0.25 * (w.rho_hi - w.rho_lo),
                0.25 * (w.theta_hi - w.theta_lo),
            );
            [
                log_lerp(w.rho_lo / 8.0, 8.0 * w.rho_hi, a),
                log_lerp(w.theta_lo / 8.0, 8.0 * w.theta_hi, b),
                lerp(w.rho_lo + rq, w.rho_hi - rq, c),
                lerp(w.theta_lo + tq, w.theta_hi - tq, d),
            ]
        })
        .collect();
    coercivity_from_samples(model, window, &points)
}

/// Distances between a pipe state and the lifted reference at one instant, each
/// normalized by the cross-section area `|Q_ε|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaledNorms {
    pub time: f64,
    /// `(1/|Q_ε|) ‖ρ − ρ̃‖_{5/3}^{5/3}`.
    pub rho_norm: f64,
    /// `(1/|Q_ε|) ‖θ − θ̃‖_2²`.
    pub theta_norm: f64,
    /// `(1/|Q_ε|) ‖u − ũ‖_r^r` for each requested `r`.
    pub u_norm: Vec<f64>,
    /// `(1/|Q_ε|) ∫ ½ρ|u − ũ|² + E(ρ,θ | ρ̃,θ̃)`.
    pub e_scaled: f64,
}

fn check_exponents(r_exponents: &[f64]) -> Result<()> {
    for &r in r_exponents {
        if !(1.0..2.0).contains(&r) {
            return Err(NsfError::InvalidParameter(format!(
                "velocity exponent r = {r} must lie in [1, 2)"
            )));
        }
    }
    Ok(())
}

/// Reference values `(ρ̃, ũ, θ̃)` on the 3D axial cells. The 3D axial grid must equal
/// the 1D grid or refine it by an integer factor; refined cells take linear
/// interpolants of the reference through its mirror extension.
pub fn reference_on_axis(reference: &State1D, n3: usize) -> Result<[Vec<f64>; 3]> {
    let n = reference.n();
    if n3 % n != 0 {
        return Err(NsfError::NonconformingGrid(format!(
            "axial grid of {n3} cells does not refine the reference grid of {n} cells"
        )));
    }
    let m = n3 / n;
    let fields = [reference.rho(), reference.u(), reference.theta()];
    let odd = [false, true, false];
    let mut out = [
        Vec::with_capacity(n3),
        Vec::with_capacity(n3),
        Vec::with_capacity(n3),
    ];
    for k in 0..n3 {
        // position in units of reference cells, relative to reference cell centers
        let x = (k as f64 + 0.5) / m as f64 - 0.5;
        let i0 = x.floor();
        let w = x - i0;
        let i0 = i0 as isize;
        for c in 0..3 {
            let at = |i: isize| -> f64 {
                if i < 0 {
                    let v = fields[c][(-1 - i) as usize];
                    if odd[c] {
                        -v
                    } else {
                        v
                    }
                } else if i as usize >= n {
                    let v = fields[c][2 * n - 1 - i as usize];
                    if odd[c] {
                        -v
                    } else {
                        v
                    }
                } else {
                    fields[c][i as usize]
                }
            };
            out[c].push(if m == 1 {
                fields[c][k]
            } else {
                (1.0 - w) * at(i0) + w * at(i0 + 1)
            });
        }
    }
    Ok(out)
}

/// Midpoint-rule scaled norms of `state` against `reference` lifted as
/// `(ρ̃(y), (0,0,ũ(y)), θ̃(y))`.
pub fn scaled_norms(
    model: &ThermoModel,
    state: &State3D,
    reference: &State1D,
    r_exponents: &[f64],
) -> Result<ScaledNorms> {
    check_exponents(r_exponents)?;
    let d = state.domain();
    let [_, _, n3] = d.n;
    let [rr, ur, tr] = reference_on_axis(reference, n3)?;
    let slopes: Vec<f64> = (0..n3)
        .map(|k| {
            model.d_rho_rho_e(rr[k], tr[k]).unwrap_or(f64::NAN)
                - tr[k] * model.d_rho_rho_s(rr[k], tr[k]).unwrap_or(f64::NAN)
        })
        .collect();
    let h_ref: Vec<f64> = (0..n3)
        .map(|k| ballistic_raw(model, rr[k], tr[k], tr[k]))
        .collect();
    let (rho, theta) = (state.rho(), state.theta());
    let [u1, u2, u3] = state.u();
    let mut acc_rho = 0.0;
    let mut acc_theta = 0.0;
    let mut acc_e = 0.0;
    let mut acc_u = vec![0.0; r_exponents.len()];
    for idx in 0..rho.len() {
        let k = idx % n3;
        let dr = rho[idx] - rr[k];
        let dt = theta[idx] - tr[k];
        let du = [u1[idx], u2[idx], u3[idx] - ur[k]];
        let du2 = du[0] * du[0] + du[1] * du[1] + du[2] * du[2];
        acc_rho += dr.abs().powf(5.0 / 3.0);
        acc_theta += dt * dt;
        let rel = ballistic_raw(model, rho[idx], theta[idx], tr[k]) - slopes[k] * dr - h_ref[k];
        acc_e += 0.5 * rho[idx] * du2 + rel;
        let mag = du2.sqrt();
        for (a, &r) in acc_u.iter_mut().zip(r_exponents) {
            *a += pow_r(mag, r);
        }
    }
    let w = d.cell_volume() / d.q_eps_area();
    Ok(ScaledNorms {
        time: state.time(),
        rho_norm: acc_rho * w,
        theta_norm: acc_theta * w,
        u_norm: acc_u.into_iter().map(|a| a * w).collect(),
        e_scaled: acc_e * w,
    })
}

#[inline]
fn pow_r(x: f64, r: f64) -> f64 {
    if r == 1.0 {
        x
    } else if r == 1.5 {
        x * x.sqrt()
    } else {
        x.powf(r)
    }
}

/// `(1/|Q_ε|) ‖u − ũ‖_r^r` at one instant for each `r`; the cheap part of
/// [`scaled_norms`], meant for accumulation over every time step.
pub fn velocity_deviation(
    state: &State3D,
    reference: &State1D,
    r_exponents: &[f64],
) -> Result<Vec<f64>> {
    check_exponents(r_exponents)?;
    let d = state.domain();
    let n3 = d.n[2];
    let ur = reference_on_axis(reference, n3)?[1].clone();
    let [u1, u2, u3] = state.u();
    let mut acc = vec![0.0; r_exponents.len()];
    for idx in 0..u1.len() {
        let w = u3[idx] - ur[idx % n3];
        let mag = (u1[idx] * u1[idx] + u2[idx] * u2[idx] + w * w).sqrt();
        for (a, &r) in acc.iter_mut().zip(r_exponents) {
            *a += pow_r(mag, r);
        }
    }
    let w = d.cell_volume() / d.q_eps_area();
    Ok(acc.into_iter().map(|a| a * w).collect())
}

/// Cross-section mean of a cell field at every axial cell.
pub fn cross_section_average(state: &State3D, field: &[f64]) -> Vec<f64> {
    let [n1, n2, n3] = state.domain().n;
    assert_eq!(field.len(), n1 * n2 * n3, "field does not match the grid");
    let mut avg = vec![0.0; n3];
    for (idx, v) in field.iter().enumerate() {
        avg[idx % n3] += v;
    }
    let inv = 1.0 / (n1 * n2) as f64;
    avg.iter_mut().for_each(|a| *a *= inv);
    avg
}

/// Per-ε summary of the distance between pipe and reference over a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaledNormReport {
    pub epsilon: f64,
    pub r_exponents: Vec<f64>,
    /// Instantaneous values at each output time.
    pub rows: Vec<ScaledNorms>,
    pub sup_t_density_norm: f64,
    pub sup_t_temperature_norm: f64,
    /// `(1/|Q_ε|) ‖u − ũ‖^r` over `(0,T) × Ω_ε`, per `r`.
    pub velocity_norm_r: Vec<f64>,
    /// The same over `(0,t)` for each output time `t`.
    pub velocity_cumulative: Vec<Vec<f64>>,
    pub rel_entropy_trace: Vec<f64>,
}

impl ScaledNormReport {
    /// Collects output rows; `velocity_cumulative[i]` is the caller's space-time
    /// accumulation up to the time of `rows[i]`.
    pub fn new(
        epsilon: f64,
        r_exponents: Vec<f64>,
        rows: Vec<ScaledNorms>,
        velocity_cumulative: Vec<Vec<f64>>,
    ) -> Self {
        let velocity_norm_r = velocity_cumulative
            .last()
            .cloned()
            .unwrap_or_else(|| vec![0.0; r_exponents.len()]);
        let sup = |f: &dyn Fn(&ScaledNorms) -> f64| rows.iter().map(f).fold(0.0_f64, f64::max);
        ScaledNormReport {
            epsilon,
            sup_t_density_norm: sup(&|r| r.rho_norm),
            sup_t_temperature_norm: sup(&|r| r.theta_norm),
            rel_entropy_trace: rows.iter().map(|r| r.e_scaled).collect(),
            r_exponents,
            rows,
            velocity_norm_r,
            velocity_cumulative,
        }
    }

    pub fn sup_t_rel_entropy(&self) -> f64 {
        self.rel_entropy_trace.iter().copied().fold(0.0, f64::max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn model() -> ThermoModel {
        ThermoModel::reference()
    }

    #[test]
    fn ballistic_free_energy_at_unit_state() {
        let h = ballistic_free_energy(&model(), 1.0, 1.0, 1.0).unwrap();
        assert!((h - 8.0 / 3.0).abs() < 1e-14);
        assert!(ballistic_free_energy(&model(), 1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn ballistic_free_energy_is_affine_in_reference_temperature() {
        let m = model();
        for &(rho, theta, big) in &[(1.0, 1.0, 1.0), (0.3, 2.0, 0.7), (5.0, 0.4, 1.9)] {
            let h1 = ballistic_free_energy(&m, rho, theta, big).unwrap();
            let h2 = ballistic_free_energy(&m, rho, theta, 2.0 * big).unwrap();
            let rho_e = rho * m.internal_energy(rho, theta).unwrap();
            assert!((h2 - 2.0 * h1 + rho_e).abs() < 1e-12 * rho_e.max(1.0));
        }
    }

    #[test]
    fn ballistic_free_energy_vacuum_limit() {
        // ρe → aθ⁴ and ρs → (4a/3)θ³ + O(ρ ln ρ) as ρ → 0
        let big = 0.8;
        let h = ballistic_free_energy(&model(), 1e-6, 1.0, big).unwrap();
        assert!((h - (1.0 - 4.0 / 3.0 * big)).abs() < 1e-4);
    }

    #[test]
    fn rel_entropy_vanishes_at_reference() {
        assert_eq!(rel_entropy(&model(), 1.0, 1.0, 1.0, 1.0).unwrap(), 0.0);
        assert!(rel_entropy(&model(), 1.0, -1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn rel_entropy_density_offset_matches_brute_force() {
        let m = model();
        let e = rel_entropy(&m, 1.1, 1.0, 1.0, 1.0).unwrap();
        // ρe − ρs at θ = Θ = 1 equals 1.5ρ + 1.5ρ^{5/3} + 1 + ρ ln ρ − 4/3; its slope at 1 is 1.5 + 2.5 + 1 = 5
        let f = |r: f64| 1.5 * r + 1.5 * r.powf(5.0 / 3.0) + 1.0 + r * r.ln() - 4.0 / 3.0;
        let brute = f(1.1) - 5.0 * 0.1 - f(1.0);
        assert!(e > 0.0);
        assert!((e - brute).abs() < 1e-13, "{e} vs {brute}");
    }

    #[test]
    fn rel_entropy_is_quadratic_near_reference() {
        let m = model();
        let q: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&h| rel_entropy(&m, 1.0 + h, 1.0, 1.0, 1.0).unwrap() / (h * h))
            .collect();
        // ½ ∂²_ρ H = ½ (5/3 ρ^{-1/3} + 1/ρ) = 4/3 at ρ = 1
        assert!(q.iter().all(|&v| v > 0.0));
        assert!((q[2] - 4.0 / 3.0).abs() < 1e-3);
        assert!((q[1] - q[2]).abs() < (q[0] - q[1]).abs());
    }

    #[test]
    fn closed_form_slope_matches_difference_quotient() {
        for closure in [
            crate::PressureClosure::REFERENCE,
            crate::PressureClosure::Degenerate,
        ] {
            let m = model().with_closure(closure).unwrap();
            for i in 1..200 {
                let [a, b] = halton::<2>(i);
                let (r, big) = (log_lerp(0.1, 10.0, a), log_lerp(0.1, 10.0, b));
                let de = m.d_rho_rho_e(r, big).unwrap();
                let ds = big * m.d_rho_rho_s(r, big).unwrap();
                let fd = ballistic_density_derivative_fd(&m, r, big).unwrap();
                assert!(
                    ((de - ds) - fd).abs() <= 1e-8 * (de.abs() + ds.abs()),
                    "{closure} r={r} Θ={big}"
                );
                assert_eq!(ballistic_density_derivative(&m, r, big).unwrap(), de - ds);
            }
        }
    }

    #[test]
    fn window_from_reference_uses_half_and_double() {
        let m = model();
        let s =
            crate::solver1d::init_smooth(&m, &crate::profile::ProfileSpec::default(), 64).unwrap();
        let w = EssentialWindow::from_reference([&s]).unwrap();
        let rmin = s.rho().iter().copied().fold(f64::INFINITY, f64::min);
        let tmax = s.theta().iter().copied().fold(0.0, f64::max);
        assert_eq!(w.rho_lo, 0.5 * rmin);
        assert_eq!(w.theta_hi, 2.0 * tmax);
        assert!(EssentialWindow::new(2.0, 1.0, 1.0, 1.0).is_err());
        assert!(EssentialWindow::from_reference(std::iter::empty()).is_err());
    }

    #[test]
    fn single_reference_sample_gives_no_constraint() {
        let w = EssentialWindow::new(0.5, 2.0, 0.5, 2.0).unwrap();
        let rep = coercivity_from_samples(&model(), &w, &[[1.0, 1.0, 1.0, 1.0]]).unwrap();
        assert_eq!(rep.c_ess, f64::INFINITY);
        assert_eq!(rep.c_res, f64::INFINITY);
        assert_eq!(rep.min_rel_entropy, 0.0);
        assert!(coercivity_from_samples(&model(), &w, &[]).is_err());
    }

    #[test]
    fn coercivity_constants_positive_on_default_window() {
        let w = EssentialWindow::new(0.5, 2.0, 0.5, 2.0).unwrap();
        let rep = coercivity_check(&model(), &w, 10_000).unwrap();
        assert!(rep.passed(), "{rep:?}");
        // regression baselines for the reference closure
        assert!(rep.c_ess > 0.05 && rep.c_ess < 2.0, "{rep:?}");
        assert!(rep.c_res > 1e-3, "{rep:?}");
    }

    #[test]
    fn split_reconstructs_field() {
        let w = EssentialWindow::new(0.5, 2.0, 0.5, 2.0).unwrap();
        let rho = [1.0, 3.0, 0.6, 0.1, 1.9];
        let theta = [1.0, 1.0, 5.0, 1.0, 0.5];
        let vals = [0.1, -2.0, 3.5, 1e-3, 7.0];
        let (ess, res) = essential_residual_split(&vals, &rho, &theta, &w);
        assert_eq!(ess, vec![0.1, 0.0, 0.0, 0.0, 7.0]);
        for i in 0..5 {
            assert_eq!(ess[i] + res[i], vals[i]);
        }
        let (ess, res) = essential_residual_split(&vals, &[1.0; 5], &[1.0; 5], &w);
        assert!(res.iter().all(|&v| v == 0.0) && ess == vals);
        let (ess, _) = essential_residual_split(&vals, &[9.0; 5], &[1.0; 5], &w);
        assert!(ess.iter().all(|&v| v == 0.0));
    }

    proptest! {
        #[test]
        fn rel_entropy_nonnegative(
            rho in 0.01f64..50.0, theta in 0.01f64..50.0, r in 0.1f64..10.0, big in 0.1f64..10.0,
        ) {
            let e = rel_entropy(&model(), rho, theta, r, big).unwrap();
            prop_assert!(e >= 0.0);
            if (rho - r).abs() + (theta - big).abs() > 1e-3 {
                prop_assert!(e > 0.0);
            }
        }

        #[test]
        fn split_is_exact(vals in proptest::collection::vec(-1e3f64..1e3, 1..40), seed in 0u64..1000) {
            let w = EssentialWindow::new(0.5, 2.0, 0.5, 2.0).unwrap();
            let n = vals.len();
            let rho: Vec<f64> = (0..n as u64).map(|i| log_lerp(0.1, 10.0, halton::<2>(i + seed)[0])).collect();
            let theta: Vec<f64> = (0..n as u64).map(|i| log_lerp(0.1, 10.0, halton::<2>(i + seed)[1])).collect();
            let (ess, res) = essential_residual_split(&vals, &rho, &theta, &w);
            for i in 0..n {
                prop_assert_eq!(ess[i] + res[i], vals[i]);
            }
        }
    }
}
