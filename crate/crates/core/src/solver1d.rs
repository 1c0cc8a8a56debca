//! Finite-volume solver for the one-dimensional heat-conducting flow on `(0,1)`
//! with no-slip, insulated ends.
//!
//! Cells are uniform with centers `y_i = (i + 1/2) h`. The conservative variables
//! `(ρ, ρu, E)` are advanced with central face fluxes and Heun's two-stage method.
//! The ends are handled by mirror ghost cells: ρ, θ, p, E even and u odd, which
//! makes the face velocity, the mass flux, the energy flux and the heat flux vanish
//! exactly on both walls.

use std::f64::consts::PI;

use crate::error::{NsfError, Result};
use crate::profile::ProfileSpec;
use crate::thermo::ThermoModel;

/// Safety factor applied to every stability bound.
pub const CFL_SAFETY: f64 = 0.4;

/// Cell-averaged primitive and conservative fields at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct State1D {
    t: f64,
    h: f64,
    rho: Vec<f64>,
    u: Vec<f64>,
    theta: Vec<f64>,
    mom: Vec<f64>,
    energy: Vec<f64>,
    // equation-of-state cache, refreshed with θ
    p: Vec<f64>,
    cs: Vec<f64>,
    cv: Vec<f64>,
}

impl State1D {
    /// Builds a state from primitive samples at the cell centers.
    pub fn from_primitive(
        model: &ThermoModel,
        t: f64,
        rho: Vec<f64>,
        u: Vec<f64>,
        theta: Vec<f64>,
    ) -> Result<Self> {
        let n = rho.len();
        if n < 2 {
            return Err(NsfError::InvalidParameter(format!(
                "need at least 2 cells, got {n}"
            )));
        }
        if u.len() != n || theta.len() != n {
            return Err(NsfError::InvalidParameter("field lengths differ".into()));
        }
        if let Some(i) = rho.iter().position(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(NsfError::Domain(format!(
                "density {} in cell {i} is not positive",
                rho[i]
            )));
        }
        if let Some(i) = theta.iter().position(|r| !(*r > 0.0 && r.is_finite())) {
            return Err(NsfError::Domain(format!(
                "temperature {} in cell {i} is not positive",
                theta[i]
            )));
        }
        if let Some(i) = u.iter().position(|v| !v.is_finite()) {
            return Err(NsfError::Domain(format!(
                "velocity in cell {i} is not finite"
            )));
        }
        let mom: Vec<f64> = rho.iter().zip(&u).map(|(r, v)| r * v).collect();
        let energy = (0..n)
            .map(|i| 0.5 * rho[i] * u[i] * u[i] + rho[i] * model.energy_raw(rho[i], theta[i]))
            .collect();
        let mut s = State1D {
            t,
            h: 1.0 / n as f64,
            rho,
            u,
            theta,
            mom,
            energy,
            p: vec![0.0; n],
            cs: vec![0.0; n],
            cv: vec![0.0; n],
        };
        for i in 0..n {
            let pt = model.eos_point(s.rho[i], s.theta[i]);
            s.p[i] = pt.p;
            s.cs[i] = pt.cs2.sqrt();
            s.cv[i] = pt.cv;
        }
        Ok(s)
    }

    pub fn n(&self) -> usize {
        self.rho.len()
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    /// Snaps the clock of a state advanced by steps that sum to `t` up to rounding.
    pub(crate) fn set_time(&mut self, t: f64) {
        self.t = t;
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    pub fn u(&self) -> &[f64] {
        &self.u
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn momentum(&self) -> &[f64] {
        &self.mom
    }

    /// Total energy density `½ρu² + ρe` per cell.
    pub fn total_energy(&self) -> &[f64] {
        &self.energy
    }

    pub fn cell_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.h
    }

    pub fn cell_centers(&self) -> Vec<f64> {
        (0..self.n()).map(|i| self.cell_center(i)).collect()
    }

    pub fn mass(&self) -> f64 {
        self.h * self.rho.iter().sum::<f64>()
    }

    pub fn energy(&self) -> f64 {
        self.h * self.energy.iter().sum::<f64>()
    }

    /// Pointwise entropy production `(1/θ)(ν(θ)(∂u)² + κ(θ)(∂θ)²/θ)` with central
    /// differences through the mirror ghosts.
    pub fn entropy_production(&self, model: &ThermoModel) -> Vec<f64> {
        let n = self.n();
        let inv2h = 0.5 / self.h;
        (0..n)
            .map(|i| {
                let (ul, tl) = if i == 0 {
                    (-self.u[0], self.theta[0])
                } else {
                    (self.u[i - 1], self.theta[i - 1])
                };
                let (ur, tr) = if i + 1 == n {
                    (-self.u[n - 1], self.theta[n - 1])
                } else {
                    (self.u[i + 1], self.theta[i + 1])
                };
                let du = (ur - ul) * inv2h;
                let dt = (tr - tl) * inv2h;
                let th = self.theta[i];
                (model.nu_at(th) * du * du + model.kappa(th) * dt * dt / th) / th
            })
            .collect()
    }

    pub fn diagnostics(&self, model: &ThermoModel) -> BalanceDiagnostics1D {
        let sigma = self.entropy_production(model);
        BalanceDiagnostics1D {
            t: self.t,
            mass: self.mass(),
            energy: self.energy(),
            entropy_production_min: sigma.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

/// Integral balances of one snapshot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalanceDiagnostics1D {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub entropy_production_min: f64,
}

/// Samples `profile` at `n` cell centers.
///
/// The velocity must vanish at both ends and ρ, θ must be positive.
pub fn init_smooth(model: &ThermoModel, profile: &ProfileSpec, n: usize) -> Result<State1D> {
    for y in [0.0, 1.0] {
        let u = profile.u.eval(y);
        if u.abs() > 1e-12 {
            return Err(NsfError::Boundary(format!(
                "initial velocity is {u} at y = {y}, must vanish"
            )));
        }
    }
    if n < 2 {
        return Err(NsfError::InvalidParameter(format!(
            "need at least 2 cells, got {n}"
        )));
    }
    let h = 1.0 / n as f64;
    let mut rho = Vec::with_capacity(n);
    let mut u = Vec::with_capacity(n);
    let mut theta = Vec::with_capacity(n);
    // check positivity on a finer set than the cell centers, including the ends
    for k in 0..=4 * n {
        let [r, _, th] = profile.eval(k as f64 / (4 * n) as f64);
        if !(r > 0.0) || !(th > 0.0) {
            return Err(NsfError::Domain(format!(
                "initial profile not positive at y = {}: rho = {r}, theta = {th}",
                k as f64 / (4 * n) as f64
            )));
        }
    }
    for i in 0..n {
        let [r, v, th] = profile.eval((i as f64 + 0.5) * h);
        rho.push(r);
        u.push(v);
        theta.push(th);
    }
    State1D::from_primitive(model, 0.0, rho, u, theta)
}

/// Stable explicit step for `state`: advective, viscous and conductive bounds times
/// [`CFL_SAFETY`].
pub fn stable_dt(model: &ThermoModel, state: &State1D) -> f64 {
    let h = state.h;
    let mut wave = 0.0_f64;
    let mut rho_min = f64::INFINITY;
    let mut cv_min = f64::INFINITY;
    let mut theta_max = 0.0_f64;
    for i in 0..state.n() {
        wave = wave.max(state.u[i].abs() + state.cs[i]);
        rho_min = rho_min.min(state.rho[i]);
        cv_min = cv_min.min(state.cv[i]);
        theta_max = theta_max.max(state.theta[i]);
    }
    diffusive_limit(model, h * h, wave / h, rho_min, cv_min, theta_max)
}

/// `0.4·min(1/rate, h²ρ_min/(2ν_max), h²ρ_min c_v,min/(2κ_max))` where `rate` is the
/// largest advective frequency. ν and κ increase with θ, so they peak at `theta_max`.
pub(crate) fn diffusive_limit(
    model: &ThermoModel,
    h2: f64,
    rate: f64,
    rho_min: f64,
    cv_min: f64,
    theta_max: f64,
) -> f64 {
    let adv = if rate > 0.0 {
        1.0 / rate
    } else {
        f64::INFINITY
    };
    let visc = h2 * rho_min / (2.0 * model.nu_at(theta_max));
    let heat = h2 * rho_min * cv_min / (2.0 * model.kappa(theta_max));
    CFL_SAFETY * adv.min(visc).min(heat)
}

/// Pointwise source `(f_ρ, f_m, f_E)` added to the right-hand side, as a function of `(y, t)`.
pub type Source<'a> = &'a (dyn Fn(f64, f64) -> [f64; 3] + Sync);

/// Explicit stepper with reusable scratch space.
#[derive(Debug, Clone)]
pub struct Solver1D {
    model: ThermoModel,
    n: usize,
    k: [Vec<f64>; 3],
    stage: State1D,
    next: State1D,
}

impl Solver1D {
    pub fn new(model: ThermoModel, n: usize) -> Self {
        let z = vec![0.0; n];
        let blank = State1D {
            t: 0.0,
            h: 1.0 / n as f64,
            rho: z.clone(),
            u: z.clone(),
            theta: z.clone(),
            mom: z.clone(),
            energy: z.clone(),
            p: z.clone(),
            cs: z.clone(),
            cv: z.clone(),
        };
        Solver1D {
            model,
            n,
            k: [z.clone(), z.clone(), z],
            stage: blank.clone(),
            next: blank,
        }
    }

    pub fn model(&self) -> &ThermoModel {
        &self.model
    }

    /// One step of size `dt`, returning the new state.
    pub fn step(&mut self, state: &State1D, dt: f64) -> Result<State1D> {
        let mut next = state.clone();
        self.advance(&mut next, dt, None)?;
        Ok(next)
    }

    /// Advances `state` in place by `dt`, optionally adding a pointwise source.
    ///
    /// On error `state` is left untouched.
    pub fn advance(
        &mut self,
        state: &mut State1D,
        dt: f64,
        source: Option<Source<'_>>,
    ) -> Result<()> {
        if state.n() != self.n {
            return Err(NsfError::InvalidParameter(format!(
                "solver built for {} cells, state has {}",
                self.n,
                state.n()
            )));
        }
        if !(dt > 0.0) {
            return Err(NsfError::InvalidParameter(format!(
                "time step must be positive, got {dt}"
            )));
        }
        let limit = stable_dt(&self.model, state);
        if dt > limit * (1.0 + 1e-12) {
            return Err(NsfError::Cfl { dt, limit });
        }
        self.advance_unchecked(state, dt, source)
    }

    fn advance_unchecked(
        &mut self,
        state: &mut State1D,
        dt: f64,
        source: Option<Source<'_>>,
    ) -> Result<()> {
        let t0 = state.t;
        let h = state.h;

        // stage 1: U1 = U0 + dt L(U0)
        rhs(&self.model, state, &mut self.k);
        if let Some(f) = source {
            add_source(&mut self.k, h, t0, f);
        }
        {
            let s1 = &mut self.stage;
            for i in 0..self.n {
                s1.rho[i] = state.rho[i] + dt * self.k[0][i];
                s1.mom[i] = state.mom[i] + dt * self.k[1][i];
                s1.energy[i] = state.energy[i] + dt * self.k[2][i];
            }
            s1.t = t0 + dt;
            recover(&self.model, s1, &state.theta)?;
        }

        // stage 2: U = (U0 + U1 + dt L(U1)) / 2
        rhs(&self.model, &self.stage, &mut self.k);
        if let Some(f) = source {
            add_source(&mut self.k, h, t0 + dt, f);
        }
        let (s1, out) = (&self.stage, &mut self.next);
        for i in 0..self.n {
            out.rho[i] = 0.5 * (state.rho[i] + s1.rho[i] + dt * self.k[0][i]);
            out.mom[i] = 0.5 * (state.mom[i] + s1.mom[i] + dt * self.k[1][i]);
            out.energy[i] = 0.5 * (state.energy[i] + s1.energy[i] + dt * self.k[2][i]);
        }
        out.t = t0 + dt;
        recover(&self.model, out, &s1.theta)?;
        std::mem::swap(state, &mut self.next);
        Ok(())
    }
}

fn add_source(k: &mut [Vec<f64>; 3], h: f64, t: f64, f: Source<'_>) {
    for i in 0..k[0].len() {
        let s = f((i as f64 + 0.5) * h, t);
        for c in 0..3 {
            k[c][i] += s[c];
        }
    }
}

/// Primitive recovery: u = m/ρ, θ from e = E/ρ − u²/2.
fn recover(model: &ThermoModel, s: &mut State1D, guess: &[f64]) -> Result<()> {
    for i in 0..s.rho.len() {
        let r = s.rho[i];
        if !(r > 0.0 && r.is_finite()) {
            return Err(NsfError::PositivityLoss {
                time: s.t,
                what: format!("density {r} in cell {i}"),
            });
        }
        let u = s.mom[i] / r;
        let e = s.energy[i] / r - 0.5 * u * u;
        s.u[i] = u;
        let pt =
            model
                .eos_from_energy(r, e, guess[i])
                .ok_or_else(|| NsfError::TemperatureRecovery {
                    cell: i,
                    reason: format!(
                        "specific energy {e} at density {r} is below the cold energy {}",
                        model.cold_energy(r)
                    ),
                })?;
        s.theta[i] = pt.theta;
        s.p[i] = pt.p;
        s.cs[i] = pt.cs2.sqrt();
        s.cv[i] = pt.cv;
    }
    Ok(())
}

/// Semi-discrete right-hand side `-(F_{i+1/2} - F_{i-1/2})/h` into `k`.
fn rhs(model: &ThermoModel, s: &State1D, k: &mut [Vec<f64>; 3]) {
    let n = s.rho.len();
    let inv_h = 1.0 / s.h;
    let p = &s.p;
    let [kr, km, ke] = k;
    // wall faces: with the mirror ghost the mass and energy fluxes cancel, the
    // momentum flux keeps ρu² + p and the viscous stress ν(u_in − u_ghost)/h
    let wall = |i: usize, du: f64| {
        let th = s.theta[i];
        [
            0.0,
            s.mom[i] * s.u[i] + p[i] - model.nu_at(th) * du * inv_h,
            0.0,
        ]
    };
    let mut prev = wall(0, 2.0 * s.u[0]);
    for f in 1..=n {
        let flux = if f == n {
            wall(n - 1, -2.0 * s.u[n - 1])
        } else {
            let (l, r) = (f - 1, f);
            let (ul, ur) = (s.u[l], s.u[r]);
            let (tl, tr) = (s.theta[l], s.theta[r]);
            let uf = 0.5 * (ul + ur);
            let tf = 0.5 * (tl + tr);
            let tau = model.nu_at(tf) * (ur - ul) * inv_h;
            let q = -model.kappa(tf) * (tr - tl) * inv_h;
            [
                0.5 * (s.mom[l] + s.mom[r]),
                0.5 * (s.mom[l] * ul + p[l] + s.mom[r] * ur + p[r]) - tau,
                0.5 * ((s.energy[l] + p[l]) * ul + (s.energy[r] + p[r]) * ur) - tau * uf + q,
            ]
        };
        let i = f - 1;
        kr[i] = (prev[0] - flux[0]) * inv_h;
        km[i] = (prev[1] - flux[1]) * inv_h;
        ke[i] = (prev[2] - flux[2]) * inv_h;
        prev = flux;
    }
}

/// Snapshots and their diagnostics at the requested output times.
#[derive(Debug, Clone, Default)]
pub struct Trajectory1D {
    pub snapshots: Vec<State1D>,
    pub diagnostics: Vec<BalanceDiagnostics1D>,
    pub steps: usize,
}

/// Integrates to `t_final`, recording `outputs` equally spaced snapshots after the
/// initial one. `t_final = 0` yields the initial state only.
pub fn integrate(
    model: &ThermoModel,
    state: &State1D,
    t_final: f64,
    outputs: usize,
) -> Result<Trajectory1D> {
    let mut traj = Trajectory1D::default();
    integrate_with(model, state, t_final, outputs, |s, d| {
        traj.snapshots.push(s.clone());
        traj.diagnostics.push(*d);
        Ok(())
    })
    .map(|steps| {
        traj.steps = steps;
        traj
    })
}

/// Like [`integrate`] but hands each snapshot to `on_output` instead of storing it.
/// Returns the number of steps taken.
pub fn integrate_with<F>(
    model: &ThermoModel,
    state: &State1D,
    t_final: f64,
    outputs: usize,
    mut on_output: F,
) -> Result<usize>
where
    F: FnMut(&State1D, &BalanceDiagnostics1D) -> Result<()>,
{
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(NsfError::InvalidParameter(format!(
            "final time must be nonnegative, got {t_final}"
        )));
    }
    let mut s = state.clone();
    on_output(&s, &s.diagnostics(model))?;
    if t_final == 0.0 {
        return Ok(0);
    }
    let outputs = outputs.max(1);
    let t0 = s.t;
    let mut solver = Solver1D::new(*model, s.n());
    let mut steps = 0;
    for k in 1..=outputs {
        let target = t0 + t_final * k as f64 / outputs as f64;
        steps += advance_to(&mut solver, &mut s, target, None)?;
        on_output(&s, &s.diagnostics(model))?;
    }
    Ok(steps)
}

/// Steps `s` until it reaches `target` exactly; returns the number of steps.
pub fn advance_to(
    solver: &mut Solver1D,
    s: &mut State1D,
    target: f64,
    source: Option<Source<'_>>,
) -> Result<usize> {
    let mut steps = 0;
    while s.t < target {
        let limit = stable_dt(&solver.model, s);
        let remaining = target - s.t;
        let last = remaining <= limit * (1.0 + 1e-9);
        let dt = if last { remaining } else { limit };
        solver.advance_unchecked(s, dt, source)?;
        if last {
            s.t = target;
        }
        steps += 1;
    }
    Ok(steps)
}

/// Largest pointwise residual of the entropy balance
/// `∂t(ρs) + ∂y(ρsu) + ∂y(q/θ) − σ` over the interior snapshots, using the
/// three-point time derivative and central differences in space.
pub fn entropy_balance_residual(model: &ThermoModel, snapshots: &[State1D]) -> Result<f64> {
    if snapshots.len() < 3 {
        return Err(NsfError::InsufficientData(format!(
            "need at least 3 snapshots, got {}",
            snapshots.len()
        )));
    }
    let n = snapshots[0].n();
    if snapshots.iter().any(|s| s.n() != n) {
        return Err(NsfError::NonconformingGrid(
            "snapshots have different cell counts".into(),
        ));
    }
    let rho_s: Vec<Vec<f64>> = snapshots
        .iter()
        .map(|s| {
            (0..n)
                .map(|i| s.rho[i] * model.entropy_raw(s.rho[i], s.theta[i]))
                .collect()
        })
        .collect();
    let mut worst = 0.0_f64;
    for k in 1..snapshots.len() - 1 {
        let (d1, d2) = (
            snapshots[k].t - snapshots[k - 1].t,
            snapshots[k + 1].t - snapshots[k].t,
        );
        if !(d1 > 0.0 && d2 > 0.0) {
            return Err(NsfError::InsufficientData(
                "snapshot times must increase strictly".into(),
            ));
        }
        let s = &snapshots[k];
        let h = s.h;
        let sigma = s.entropy_production(model);
        // entropy flux q/θ at faces; zero on the walls
        let phi: Vec<f64> = (0..=n)
            .map(|f| {
                if f == 0 || f == n {
                    0.0
                } else {
                    let (tl, tr) = (s.theta[f - 1], s.theta[f]);
                    let tf = 0.5 * (tl + tr);
                    -model.kappa(tf) * (tr - tl) / h / tf
                }
            })
            .collect();
        for i in 0..n {
            let dt_term = ((rho_s[k + 1][i] - rho_s[k][i]) * d1 / d2
                + (rho_s[k][i] - rho_s[k - 1][i]) * d2 / d1)
                / (d1 + d2);
            let flux = |j: usize| rho_s[k][j] * s.u[j];
            let fl = if i == 0 { -flux(0) } else { flux(i - 1) };
            let fr = if i + 1 == n {
                -flux(n - 1)
            } else {
                flux(i + 1)
            };
            let conv = (fr - fl) / (2.0 * h);
            let cond = (phi[i + 1] - phi[i]) / h;
            worst = worst.max((dt_term + conv + cond - sigma[i]).abs());
        }
    }
    Ok(worst)
}

/// A smooth exact solution of the forced problem, used to verify the order of the scheme.
///
/// `ρ = 1 + 0.1 cos(πy) cos(2πt)`, `u = 0.1 sin(πy)(1 + sin 2πt)`,
/// `θ = 1 + 0.05 cos(πy) + 0.1 cos(2πy) cos(2πt)`.
#[derive(Debug, Clone, Copy)]
pub struct ManufacturedSolution {
    pub model: ThermoModel,
}

impl ManufacturedSolution {
    /// `[ρ, ρ_y, u, u_y, θ, θ_y]` at `(y, t)`.
    fn fields(y: f64, t: f64) -> [f64; 6] {
        let (c1, s1) = ((PI * y).cos(), (PI * y).sin());
        let (c2, s2) = ((2.0 * PI * y).cos(), (2.0 * PI * y).sin());
        let (ct, st) = ((2.0 * PI * t).cos(), (2.0 * PI * t).sin());
        [
            1.0 + 0.1 * c1 * ct,
            -0.1 * PI * s1 * ct,
            0.1 * s1 * (1.0 + st),
            0.1 * PI * c1 * (1.0 + st),
            1.0 + 0.05 * c1 + 0.1 * c2 * ct,
            -0.05 * PI * s1 - 0.2 * PI * s2 * ct,
        ]
    }

    /// `(ρ, u, θ)` at `(y, t)`.
    pub fn exact(&self, y: f64, t: f64) -> [f64; 3] {
        let f = Self::fields(y, t);
        [f[0], f[2], f[4]]
    }

    fn conserved(&self, y: f64, t: f64) -> [f64; 3] {
        let [r, u, th] = self.exact(y, t);
        [r, r * u, 0.5 * r * u * u + r * self.model.energy_raw(r, th)]
    }

    fn flux(&self, y: f64, t: f64) -> [f64; 3] {
        let [r, _, u, uy, th, thy] = Self::fields(y, t);
        let p = self.model.pressure_raw(r, th);
        let e_tot = 0.5 * r * u * u + r * self.model.energy_raw(r, th);
        let tau = self.model.nu_at(th) * uy;
        let q = -self.model.kappa(th) * thy;
        [r * u, r * u * u + p - tau, (e_tot + p) * u - tau * u + q]
    }

    /// Forcing that makes [`exact`](Self::exact) solve the balance laws, from
    /// fourth-order differences of the exact conserved variables and fluxes.
    pub fn source(&self, y: f64, t: f64) -> [f64; 3] {
        const D: f64 = 1e-3;
        let d4 = |g: &dyn Fn(f64) -> [f64; 3], x: f64| -> [f64; 3] {
            let (a, b, c, d) = (g(x - 2.0 * D), g(x - D), g(x + D), g(x + 2.0 * D));
            let mut out = [0.0; 3];
            for k in 0..3 {
                out[k] = (a[k] - 8.0 * b[k] + 8.0 * c[k] - d[k]) / (12.0 * D);
            }
            out
        };
        let dt = d4(&|tt| self.conserved(y, tt), t);
        let dy = d4(&|yy| self.flux(yy, t), y);
        [dt[0] + dy[0], dt[1] + dy[1], dt[2] + dy[2]]
    }

    pub fn initial_state(&self, n: usize) -> Result<State1D> {
        let h = 1.0 / n as f64;
        let mut rho = Vec::with_capacity(n);
        let mut u = Vec::with_capacity(n);
        let mut theta = Vec::with_capacity(n);
        for i in 0..n {
            let [r, v, th] = self.exact((i as f64 + 0.5) * h, 0.0);
            rho.push(r);
            u.push(v);
            theta.push(th);
        }
        State1D::from_primitive(&self.model, 0.0, rho, u, theta)
    }

    /// Discrete L² error of `(ρ, u, θ)` against the exact solution at `state`'s time.
    pub fn l2_error(&self, state: &State1D) -> f64 {
        let mut sum = 0.0;
        for i in 0..state.n() {
            let [r, u, th] = self.exact(state.cell_center(i), state.t);
            sum += (state.rho[i] - r).powi(2)
                + (state.u[i] - u).powi(2)
                + (state.theta[i] - th).powi(2);
        }
        (sum * state.h).sqrt()
    }

    /// Runs the forced problem on `n` cells to `t_final` and returns the L² error.
    pub fn run(&self, n: usize, t_final: f64) -> Result<f64> {
        let mut s = self.initial_state(n)?;
        let mut solver = Solver1D::new(self.model, n);
        let src = |y: f64, t: f64| self.source(y, t);
        advance_to(&mut solver, &mut s, t_final, Some(&src))?;
        Ok(self.l2_error(&s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::profile::FourierSeries;

    fn model() -> ThermoModel {
        ThermoModel::reference()
    }

    #[test]
    fn uniform_profile_gives_uniform_state() {
        let s = init_smooth(&model(), &ProfileSpec::uniform(1.0, 0.0, 1.0), 16).unwrap();
        assert!(s.rho().iter().all(|&r| r == 1.0));
        assert!(s.u().iter().all(|&v| v == 0.0));
        assert!(s.theta().iter().all(|&t| t == 1.0));
    }

    #[test]
    fn boundary_compatibility_of_initial_velocity() {
        let mut p = ProfileSpec::default();
        p.rho = FourierSeries {
            mean: 1.0,
            cos: vec![],
            sin: vec![0.0, 0.1],
        };
        p.theta = FourierSeries {
            mean: 1.0,
            cos: vec![],
            sin: vec![0.1],
        };
        assert!(init_smooth(&model(), &p, 32).is_ok());
        p.u = FourierSeries {
            mean: 0.0,
            cos: vec![0.1],
            sin: vec![],
        };
        assert!(matches!(
            init_smooth(&model(), &p, 32),
            Err(NsfError::Boundary(_))
        ));
    }

    #[test]
    fn nonpositive_profile_rejected() {
        let p = ProfileSpec::uniform(-1.0, 0.0, 1.0);
        assert!(matches!(
            init_smooth(&model(), &p, 8),
            Err(NsfError::Domain(_))
        ));
    }

    #[test]
    fn uniform_rest_state_is_a_fixed_point() {
        let m = model();
        let s0 = init_smooth(&m, &ProfileSpec::uniform(1.0, 0.0, 1.0), 32).unwrap();
        let mut solver = Solver1D::new(m, 32);
        let dt = stable_dt(&m, &s0);
        let mut s = s0.clone();
        for _ in 0..50 {
            s = solver.step(&s, dt).unwrap();
        }
        for i in 0..32 {
            assert!((s.rho()[i] - 1.0).abs() < 1e-14);
            assert!(s.u()[i].abs() < 1e-14);
            assert!((s.theta()[i] - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn oversized_step_is_rejected() {
        let m = model();
        let s = init_smooth(&m, &ProfileSpec::default(), 32).unwrap();
        let dt = stable_dt(&m, &s);
        let mut solver = Solver1D::new(m, 32);
        assert!(matches!(
            solver.step(&s, 2.0 * dt),
            Err(NsfError::Cfl { .. })
        ));
    }

    #[test]
    fn mass_is_conserved_over_many_steps() {
        let m = model();
        let s0 = init_smooth(&m, &ProfileSpec::default(), 64).unwrap();
        let mut solver = Solver1D::new(m, 64);
        let mut s = s0.clone();
        let dt = stable_dt(&m, &s0);
        for _ in 0..1000 {
            let mut next = s.clone();
            solver
                .advance(&mut next, dt.min(stable_dt(&m, &s)), None)
                .unwrap();
            s = next;
        }
        assert!(((s.mass() - s0.mass()) / s0.mass()).abs() < 1e-12);
        assert!(((s.energy() - s0.energy()) / s0.energy()).abs() < 1e-12);
    }

    #[test]
    fn zero_final_time_returns_initial_state_only() {
        let m = model();
        let s0 = init_smooth(&m, &ProfileSpec::default(), 16).unwrap();
        let traj = integrate(&m, &s0, 0.0, 10).unwrap();
        assert_eq!(traj.snapshots.len(), 1);
        assert_eq!(traj.snapshots[0], s0);
    }

    #[test]
    fn integrate_hits_output_times_and_keeps_production_nonnegative() {
        let m = model();
        let s0 = init_smooth(&m, &ProfileSpec::default(), 32).unwrap();
        let traj = integrate(&m, &s0, 0.05, 5).unwrap();
        assert_eq!(traj.snapshots.len(), 6);
        for (k, s) in traj.snapshots.iter().enumerate() {
            assert!((s.time() - 0.01 * k as f64).abs() < 1e-15);
        }
        assert!(traj
            .diagnostics
            .iter()
            .all(|d| d.entropy_production_min >= 0.0));
    }

    #[test]
    fn entropy_residual_needs_three_snapshots() {
        let m = model();
        let s0 = init_smooth(&m, &ProfileSpec::default(), 16).unwrap();
        assert!(matches!(
            entropy_balance_residual(&m, &[s0.clone(), s0]),
            Err(NsfError::InsufficientData(_))
        ));
    }

    #[test]
    fn entropy_residual_vanishes_for_uniform_trajectory() {
        let m = model();
        let s0 = init_smooth(&m, &ProfileSpec::uniform(1.0, 0.0, 1.0), 16).unwrap();
        let traj = integrate(&m, &s0, 0.01, 2).unwrap();
        assert!(entropy_balance_residual(&m, &traj.snapshots).unwrap() < 1e-12);
    }

    #[test]
    fn manufactured_source_vanishes_for_steady_rest() {
        // sanity of the differencing: the forcing must reproduce ∂t ρ = -∂y(ρu)
        let ms = ManufacturedSolution { model: model() };
        let (y, t) = (0.3, 0.05);
        let f = ms.source(y, t);
        let [r, _, u, uy, _, _] = ManufacturedSolution::fields(y, t);
        let rho_t = -0.1 * (PI * y).cos() * 2.0 * PI * (2.0 * PI * t).sin();
        let rho_y = -0.1 * PI * (PI * y).sin() * (2.0 * PI * t).cos();
        let expected = rho_t + rho_y * u + r * uy;
        assert!((f[0] - expected).abs() < 1e-8, "{} vs {}", f[0], expected);
    }
}
