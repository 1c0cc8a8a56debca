//! Finite-volume solver for heat-conducting compressible flow in the pipe
//! `Ω_ε = εQ × (0,1)` with complete slip and insulated walls.
//!
//! Same scheme as the 1D solver: central face fluxes, compact normal
//! derivatives, tangential derivatives averaged from the two adjacent cells,
//! Heun's method. Walls are mirror planes; one ghost layer holds the even
//! reflection of ρ, θ, p, E and tangential velocity and the odd reflection of
//! the normal velocity. Edge and corner ghosts are reflected twice.
//!
//! Cell arrays are stored with the axial index fastest:
//! `index(i, j, k) = (i·n2 + j)·n3 + k`.

use std::f64::consts::PI;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{NsfError, Result};
use crate::relent::{ballistic_raw, reference_on_axis};
use crate::solver1d::{diffusive_limit, State1D};
use crate::thermo::ThermoModel;

/// The rectangle `Q = (a,b) × (c,d)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CrossSection {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl Default for CrossSection {
    fn default() -> Self {
        CrossSection {
            a: 0.0,
            b: 1.0,
            c: 0.0,
            d: 1.0,
        }
    }
}

impl CrossSection {
    pub fn area(&self) -> f64 {
        (self.b - self.a) * (self.d - self.c)
    }
}

/// Cell counts, identical for every ε.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Resolution {
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
}

impl Default for Resolution {
    fn default() -> Self {
        Resolution {
            n1: 16,
            n2: 16,
            n3: 64,
        }
    }
}

/// Uniform grid on `εQ × (0,1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Domain3 {
    pub q: CrossSection,
    pub epsilon: f64,
    pub n: [usize; 3],
    pub h: [f64; 3],
}

/// Grid on `εQ × (0,1)` whose transverse spacing shrinks with ε.
pub fn build_domain(q: CrossSection, epsilon: f64, res: Resolution) -> Result<Domain3> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(NsfError::InvalidParameter(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    if !(q.b > q.a && q.d > q.c) || ![q.a, q.b, q.c, q.d].iter().all(|v| v.is_finite()) {
        return Err(NsfError::InvalidParameter(format!(
            "degenerate cross-section ({}, {}) x ({}, {})",
            q.a, q.b, q.c, q.d
        )));
    }
    let n = [res.n1, res.n2, res.n3];
    if n.iter().any(|&m| m < 2) {
        return Err(NsfError::InvalidParameter(format!(
            "need at least 2 cells per direction, got {n:?}"
        )));
    }
    let h = [
        epsilon * (q.b - q.a) / n[0] as f64,
        epsilon * (q.d - q.c) / n[1] as f64,
        1.0 / n[2] as f64,
    ];
    Ok(Domain3 { q, epsilon, n, h })
}

impl Domain3 {
    pub fn cells(&self) -> usize {
        self.n[0] * self.n[1] * self.n[2]
    }

    /// `|Q_ε| = ε²|Q|`.
    pub fn q_eps_area(&self) -> f64 {
        self.epsilon * self.epsilon * self.q.area()
    }

    pub fn cell_volume(&self) -> f64 {
        self.h[0] * self.h[1] * self.h[2]
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n[1] + j) * self.n[2] + k
    }

    /// Physical center `(x1, x2, y)` of cell `(i, j, k)`.
    pub fn center(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        [
            self.epsilon * self.q.a + (i as f64 + 0.5) * self.h[0],
            self.epsilon * self.q.c + (j as f64 + 0.5) * self.h[1],
            (k as f64 + 0.5) * self.h[2],
        ]
    }

    /// Cross-section coordinates scaled to the unit square, `ξ = (x − εa)/(ε(b − a))`.
    pub fn scaled_center(&self, i: usize, j: usize) -> [f64; 2] {
        [
            (i as f64 + 0.5) / self.n[0] as f64,
            (j as f64 + 0.5) / self.n[1] as f64,
        ]
    }
}

/// Cell values of one pipe state.
#[derive(Debug, Clone, PartialEq)]
pub struct State3D {
    domain: Domain3,
    t: f64,
    rho: Vec<f64>,
    u: [Vec<f64>; 3],
    theta: Vec<f64>,
    mom: [Vec<f64>; 3],
    energy: Vec<f64>,
    p: Vec<f64>,
    cs: Vec<f64>,
    cv: Vec<f64>,
}

impl State3D {
    pub fn from_primitive(
        model: &ThermoModel,
        domain: Domain3,
        t: f64,
        rho: Vec<f64>,
        u: [Vec<f64>; 3],
        theta: Vec<f64>,
    ) -> Result<Self> {
        let n = domain.cells();
        if rho.len() != n || theta.len() != n || u.iter().any(|c| c.len() != n) {
            return Err(NsfError::InvalidParameter(format!(
                "fields must have {n} cells"
            )));
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
        if u.iter().flatten().any(|v| !v.is_finite()) {
            return Err(NsfError::Domain("velocity is not finite".into()));
        }
        let mom = [0, 1, 2].map(|c| {
            rho.iter()
                .zip(&u[c])
                .map(|(r, v)| r * v)
                .collect::<Vec<f64>>()
        });
        let mut s = State3D {
            domain,
            t,
            energy: vec![0.0; n],
            p: vec![0.0; n],
            cs: vec![0.0; n],
            cv: vec![0.0; n],
            rho,
            u,
            theta,
            mom,
        };
        for i in 0..n {
            let (r, th) = (s.rho[i], s.theta[i]);
            let ke = 0.5 * r * (s.u[0][i].powi(2) + s.u[1][i].powi(2) + s.u[2][i].powi(2));
            s.energy[i] = ke + r * model.energy_raw(r, th);
            let pt = model.eos_point(r, th);
            s.p[i] = pt.p;
            s.cs[i] = pt.cs2.sqrt();
            s.cv[i] = pt.cv;
        }
        Ok(s)
    }

    /// Uniform state on `domain`.
    pub fn uniform(
        model: &ThermoModel,
        domain: Domain3,
        rho: f64,
        u: [f64; 3],
        theta: f64,
    ) -> Result<Self> {
        let n = domain.cells();
        State3D::from_primitive(
            model,
            domain,
            0.0,
            vec![rho; n],
            u.map(|v| vec![v; n]),
            vec![theta; n],
        )
    }

    pub fn domain(&self) -> &Domain3 {
        &self.domain
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

    pub fn u(&self) -> [&[f64]; 3] {
        [&self.u[0], &self.u[1], &self.u[2]]
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn total_energy(&self) -> &[f64] {
        &self.energy
    }

    pub fn mass(&self) -> f64 {
        self.domain.cell_volume() * self.rho.iter().sum::<f64>()
    }

    pub fn energy(&self) -> f64 {
        self.domain.cell_volume() * self.energy.iter().sum::<f64>()
    }

    /// `∫ ½ρ|u|² + H^Θ(ρ,θ)`.
    pub fn kinetic_ballistic(&self, model: &ThermoModel, big_theta: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.rho.len() {
            let u2 = self.u[0][i].powi(2) + self.u[1][i].powi(2) + self.u[2][i].powi(2);
            acc += 0.5 * self.rho[i] * u2
                + ballistic_raw(model, self.rho[i], self.theta[i], big_theta);
        }
        acc * self.domain.cell_volume()
    }

    /// Pointwise entropy production
    /// `(1/θ)(μ/2 |∇u + ∇uᵀ − (2/3) div u I|² + η (div u)² + κ |∇θ|²/θ)`
    /// from central differences through the mirror ghosts.
    pub fn entropy_production(&self, model: &ThermoModel) -> Vec<f64> {
        let mut ws = Workspace::new(&self.domain);
        ws.fill(self);
        ws.gradients(&self.domain);
        let mut sigma = vec![0.0; self.domain.cells()];
        ws.production(model, &self.domain, &mut sigma);
        sigma
    }

    /// Maximum of `|u·n|` over cells touching each wall, which the reflection
    /// treats as mirror images; exposed for boundary-compliance checks.
    pub fn max_normal_velocity_at_walls(&self) -> f64 {
        let d = &self.domain;
        let [n1, n2, n3] = d.n;
        let mut m = 0.0_f64;
        for i in 0..n1 {
            for j in 0..n2 {
                for k in 0..n3 {
                    let idx = d.index(i, j, k);
                    if i == 0 || i + 1 == n1 {
                        m = m.max(self.u[0][idx].abs());
                    }
                    if j == 0 || j + 1 == n2 {
                        m = m.max(self.u[1][idx].abs());
                    }
                    if k == 0 || k + 1 == n3 {
                        m = m.max(self.u[2][idx].abs());
                    }
                }
            }
        }
        m
    }
}

/// Axial dependence of the density/temperature perturbation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AxialShape {
    #[default]
    Cos,
    Sin,
}

/// Transverse perturbation of the lifted data with amplitude `delta·ε^epsilon_exponent`.
///
/// With `ξ ∈ (0,1)²` the scaled cross-section coordinates and `A(y)` the axial shape,
/// `φ = cos(2π m1 ξ1) cos(2π m2 ξ2) A(l π y)` perturbs ρ and θ multiplicatively and
/// `ψ = (sin(2π m1' ξ1) cos(2π m2 ξ2) cos(lπy), cos(2π m1 ξ1) sin(2π m2' ξ2) cos(lπy),
/// cos(2π m1 ξ1) cos(2π m2 ξ2) sin(lπy))` is added to the velocity, where
/// `m' = max(m, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PerturbationSpec {
    pub delta: f64,
    pub epsilon_exponent: f64,
    pub m1: u32,
    pub m2: u32,
    pub axial_mode: u32,
    pub axial_shape: AxialShape,
}

impl Default for PerturbationSpec {
    fn default() -> Self {
        PerturbationSpec {
            delta: 0.05,
            epsilon_exponent: 1.0,
            m1: 1,
            m2: 0,
            axial_mode: 1,
            axial_shape: AxialShape::Cos,
        }
    }
}

/// Shapes of the lifted perturbation in scaled coordinates `ξ ∈ (0,1)²`, `y ∈ (0,1)`.
pub trait Perturbation {
    /// Effective amplitude at `epsilon`.
    fn amplitude(&self, epsilon: f64) -> f64;
    /// Relative density and temperature perturbation.
    fn phi(&self, xi: [f64; 2], y: f64) -> f64;
    /// Velocity perturbation.
    fn psi(&self, xi: [f64; 2], y: f64) -> [f64; 3];
}

impl Perturbation for PerturbationSpec {
    fn amplitude(&self, epsilon: f64) -> f64 {
        self.delta * epsilon.powf(self.epsilon_exponent)
    }

    fn phi(&self, xi: [f64; 2], y: f64) -> f64 {
        let l = self.axial_mode as f64 * PI * y;
        let axial = match self.axial_shape {
            AxialShape::Cos => l.cos(),
            AxialShape::Sin => l.sin(),
        };
        (2.0 * PI * self.m1 as f64 * xi[0]).cos()
            * (2.0 * PI * self.m2 as f64 * xi[1]).cos()
            * axial
    }

    fn psi(&self, xi: [f64; 2], y: f64) -> [f64; 3] {
        let (m1, m2) = (self.m1 as f64, self.m2 as f64);
        let (m1p, m2p) = (m1.max(1.0), m2.max(1.0));
        let l = self.axial_mode as f64 * PI * y;
        let (c1, c2) = ((2.0 * PI * m1 * xi[0]).cos(), (2.0 * PI * m2 * xi[1]).cos());
        [
            (2.0 * PI * m1p * xi[0]).sin() * c2 * l.cos(),
            c1 * (2.0 * PI * m2p * xi[1]).sin() * l.cos(),
            c1 * c2 * l.sin(),
        ]
    }
}

/// Lifts the 1D state as `ρ = ρ̃(1 + δφ)`, `θ = θ̃(1 + δφ)`, `u = (δψ1, δψ2, ũ + δψ3)`.
///
/// The normal component of ψ must vanish on every wall.
pub fn lift_initial_data(
    model: &ThermoModel,
    reference: &State1D,
    pert: &dyn Perturbation,
    domain: Domain3,
) -> Result<State3D> {
    let delta = pert.amplitude(domain.epsilon);
    if delta != 0.0 {
        check_compliance(pert)?;
    }
    let [n1, n2, n3] = domain.n;
    let [rr, ur, tr] = reference_on_axis(reference, n3)?;
    let n = domain.cells();
    let mut rho = vec![0.0; n];
    let mut theta = vec![0.0; n];
    let mut u = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    for i in 0..n1 {
        for j in 0..n2 {
            let xi = domain.scaled_center(i, j);
            for k in 0..n3 {
                let idx = domain.index(i, j, k);
                let y = domain.center(i, j, k)[2];
                let (phi, psi) = if delta != 0.0 {
                    (pert.phi(xi, y), pert.psi(xi, y))
                } else {
                    (0.0, [0.0; 3])
                };
                rho[idx] = rr[k] * (1.0 + delta * phi);
                theta[idx] = tr[k] * (1.0 + delta * phi);
                u[0][idx] = delta * psi[0];
                u[1][idx] = delta * psi[1];
                u[2][idx] = ur[k] + delta * psi[2];
            }
        }
    }
    State3D::from_primitive(model, domain, reference.time(), rho, u, theta)
}

/// Samples the normal trace of ψ on the six walls.
fn check_compliance(pert: &dyn Perturbation) -> Result<()> {
    const M: usize = 17;
    for a in 0..=M {
        for b in 0..=M {
            let (s, t) = (a as f64 / M as f64, b as f64 / M as f64);
            let traces = [
                (pert.psi([0.0, s], t)[0], "x1 = a"),
                (pert.psi([1.0, s], t)[0], "x1 = b"),
                (pert.psi([s, 0.0], t)[1], "x2 = c"),
                (pert.psi([s, 1.0], t)[1], "x2 = d"),
                (pert.psi([s, t], 0.0)[2], "y = 0"),
                (pert.psi([s, t], 1.0)[2], "y = 1"),
            ];
            for (v, wall) in traces {
                if v.abs() > 1e-12 {
                    return Err(NsfError::Boundary(format!(
                        "perturbation has normal velocity {v} on wall {wall}"
                    )));
                }
            }
        }
    }
    Ok(())
}

/// Padded primitive fields and cell gradients reused across stages.
#[derive(Debug, Clone)]
struct Workspace {
    np: [usize; 3],
    stride: [usize; 3],
    rho: Vec<f64>,
    u: [Vec<f64>; 3],
    theta: Vec<f64>,
    p: Vec<f64>,
    e: Vec<f64>,
    /// `grad[3i + j] = ∂_j u_i` at interior cells.
    grad: [Vec<f64>; 9],
    /// `∂_j θ` at interior cells.
    grad_theta: [Vec<f64>; 3],
    /// Face fluxes of one direction, indexed by the padded cell above the face.
    flux: [Vec<f64>; 5],
}

impl Workspace {
    fn new(d: &Domain3) -> Self {
        let np = [d.n[0] + 2, d.n[1] + 2, d.n[2] + 2];
        let len = np[0] * np[1] * np[2];
        let z = vec![0.0; len];
        let zi = vec![0.0; d.cells()];
        Workspace {
            np,
            stride: [np[1] * np[2], np[2], 1],
            rho: z.clone(),
            u: [z.clone(), z.clone(), z.clone()],
            theta: z.clone(),
            p: z.clone(),
            e: z,
            grad: std::array::from_fn(|_| zi.clone()),
            grad_theta: std::array::from_fn(|_| zi.clone()),
            flux: std::array::from_fn(|_| vec![0.0; len]),
        }
    }

    /// Padded index of interior cell `(i, j, k)`; `-1` and `n` address ghosts.
    #[inline]
    fn at(&self, i: isize, j: isize, k: isize) -> usize {
        ((i + 1) as usize * self.np[1] + (j + 1) as usize) * self.np[2] + (k + 1) as usize
    }

    fn fill(&mut self, s: &State3D) {
        let [n1, n2, n3] = s.domain.n;
        for i in 0..n1 {
            for j in 0..n2 {
                let src = s.domain.index(i, j, 0);
                let dst = self.at(i as isize, j as isize, 0);
                self.rho[dst..dst + n3].copy_from_slice(&s.rho[src..src + n3]);
                self.theta[dst..dst + n3].copy_from_slice(&s.theta[src..src + n3]);
                self.p[dst..dst + n3].copy_from_slice(&s.p[src..src + n3]);
                self.e[dst..dst + n3].copy_from_slice(&s.energy[src..src + n3]);
                for c in 0..3 {
                    self.u[c][dst..dst + n3].copy_from_slice(&s.u[c][src..src + n3]);
                }
            }
        }
        self.reflect(s.domain.n);
    }

    /// Mirror ghosts, one direction after another so edges and corners are
    /// reflected in every direction they lie outside of.
    fn reflect(&mut self, n: [usize; 3]) {
        let np = self.np;
        for d in 0..3 {
            let sd = self.stride[d];
            // ranges of the other two padded coordinates: interior for directions not yet
            // processed, full padded range for directions already reflected
            let range = |e: usize| if e < d { 0..np[e] } else { 1..np[e] - 1 };
            let (e1, e2) = match d {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            for a in range(e1) {
                for b in range(e2) {
                    let mut base = [0usize; 3];
                    base[e1] = a;
                    base[e2] = b;
                    let lin = |c: usize, base: &[usize; 3]| {
                        let mut idx = base[0] * self.stride[0]
                            + base[1] * self.stride[1]
                            + base[2] * self.stride[2];
                        idx += c * sd;
                        idx
                    };
                    let pairs = [
                        (lin(0, &base), lin(1, &base)),
                        (lin(n[d] + 1, &base), lin(n[d], &base)),
                    ];
                    for (g, m) in pairs {
                        self.rho[g] = self.rho[m];
                        self.theta[g] = self.theta[m];
                        self.p[g] = self.p[m];
                        self.e[g] = self.e[m];
                        for c in 0..3 {
                            self.u[c][g] = if c == d { -self.u[c][m] } else { self.u[c][m] };
                        }
                    }
                }
            }
        }
    }

    fn gradients(&mut self, d: &Domain3) {
        let [n1, n2, n3] = d.n;
        let inv2h = d.h.map(|h| 0.5 / h);
        let st = self.stride;
        let mut idx = 0;
        for i in 0..n1 {
            for j in 0..n2 {
                let row = self.at(i as isize, j as isize, 0);
                for k in 0..n3 {
                    let pc = row + k;
                    for dir in 0..3 {
                        let (pp, pm) = (pc + st[dir], pc - st[dir]);
                        for c in 0..3 {
                            self.grad[3 * c + dir][idx] =
                                (self.u[c][pp] - self.u[c][pm]) * inv2h[dir];
                        }
                        self.grad_theta[dir][idx] = (self.theta[pp] - self.theta[pm]) * inv2h[dir];
                    }
                    idx += 1;
                }
            }
        }
    }

    fn production(&self, model: &ThermoModel, d: &Domain3, out: &mut [f64]) {
        for idx in 0..d.cells() {
            let pc = {
                let k = idx % d.n[2];
                let ij = idx / d.n[2];
                self.at((ij / d.n[1]) as isize, (ij % d.n[1]) as isize, k as isize)
            };
            let th = self.theta[pc];
            let g: [f64; 9] = std::array::from_fn(|m| self.grad[m][idx]);
            let div = g[0] + g[4] + g[8];
            let mut dev2 = 0.0;
            for a in 0..3 {
                for b in 0..3 {
                    let mut s = g[3 * a + b] + g[3 * b + a];
                    if a == b {
                        s -= 2.0 / 3.0 * div;
                    }
                    dev2 += s * s;
                }
            }
            let gt2 = self.grad_theta.iter().map(|v| v[idx] * v[idx]).sum::<f64>();
            out[idx] = (0.5 * model.mu(th) * dev2
                + model.eta(th) * div * div
                + model.kappa(th) * gt2 / th)
                / th;
        }
    }
}

/// Stable step on `state`: advective rate `Σ_d (|u_d| + c_s)/h_d`, diffusive bounds with
/// `h² = 1/Σ_d h_d⁻²`, all times the 1D safety factor.
pub fn stable_dt3(model: &ThermoModel, state: &State3D) -> f64 {
    let h = state.domain.h;
    let inv_h = h.map(|v| 1.0 / v);
    let mut rate = 0.0_f64;
    let mut rho_min = f64::INFINITY;
    let mut cv_min = f64::INFINITY;
    let mut theta_max = 0.0_f64;
    for i in 0..state.rho.len() {
        let c = state.cs[i];
        let r = (state.u[0][i].abs() + c) * inv_h[0]
            + (state.u[1][i].abs() + c) * inv_h[1]
            + (state.u[2][i].abs() + c) * inv_h[2];
        rate = rate.max(r);
        rho_min = rho_min.min(state.rho[i]);
        cv_min = cv_min.min(state.cv[i]);
        theta_max = theta_max.max(state.theta[i]);
    }
    let h2 = 1.0 / inv_h.iter().map(|v| v * v).sum::<f64>();
    diffusive_limit(model, h2, rate, rho_min, cv_min, theta_max)
}

/// Explicit 3D stepper with reusable scratch space.
#[derive(Debug, Clone)]
pub struct Solver3D {
    model: ThermoModel,
    domain: Domain3,
    ws: Workspace,
    k: [Vec<f64>; 5],
    stage: State3D,
    next: State3D,
}

impl Solver3D {
    pub fn new(model: ThermoModel, domain: Domain3) -> Self {
        let n = domain.cells();
        let z = vec![0.0; n];
        let blank = State3D {
            domain,
            t: 0.0,
            rho: z.clone(),
            u: [z.clone(), z.clone(), z.clone()],
            theta: z.clone(),
            mom: [z.clone(), z.clone(), z.clone()],
            energy: z.clone(),
            p: z.clone(),
            cs: z.clone(),
            cv: z.clone(),
        };
        Solver3D {
            model,
            domain,
            ws: Workspace::new(&domain),
            k: std::array::from_fn(|_| z.clone()),
            stage: blank.clone(),
            next: blank,
        }
    }

    pub fn model(&self) -> &ThermoModel {
        &self.model
    }

    pub fn step(&mut self, state: &State3D, dt: f64) -> Result<State3D> {
        let mut next = state.clone();
        self.advance(&mut next, dt)?;
        Ok(next)
    }

    /// Advances `state` in place; on error it is left untouched.
    pub fn advance(&mut self, state: &mut State3D, dt: f64) -> Result<()> {
        if state.domain != self.domain {
            return Err(NsfError::NonconformingGrid(
                "state and solver grids differ".into(),
            ));
        }
        if !(dt > 0.0) {
            return Err(NsfError::InvalidParameter(format!(
                "time step must be positive, got {dt}"
            )));
        }
        let limit = stable_dt3(&self.model, state);
        if dt > limit * (1.0 + 1e-12) {
            return Err(NsfError::Cfl { dt, limit });
        }
        self.advance_unchecked(state, dt)
    }

    /// Advances by `min(dt_max, stable step)` and returns the step taken.
    pub fn advance_stable(&mut self, state: &mut State3D, dt_max: f64) -> Result<f64> {
        if state.domain != self.domain {
            return Err(NsfError::NonconformingGrid(
                "state and solver grids differ".into(),
            ));
        }
        if !(dt_max > 0.0) {
            return Err(NsfError::InvalidParameter(format!(
                "time step must be positive, got {dt_max}"
            )));
        }
        let dt = dt_max.min(stable_dt3(&self.model, state));
        self.advance_unchecked(state, dt)?;
        Ok(dt)
    }

    fn advance_unchecked(&mut self, state: &mut State3D, dt: f64) -> Result<()> {
        let n = self.domain.cells();
        rhs3(&self.model, &self.domain, &mut self.ws, &mut self.k, state);
        {
            let s1 = &mut self.stage;
            for i in 0..n {
                s1.rho[i] = state.rho[i] + dt * self.k[0][i];
                for c in 0..3 {
                    s1.mom[c][i] = state.mom[c][i] + dt * self.k[1 + c][i];
                }
                s1.energy[i] = state.energy[i] + dt * self.k[4][i];
            }
            s1.t = state.t + dt;
            recover(&self.model, s1, &state.theta)?;
        }
        rhs3(
            &self.model,
            &self.domain,
            &mut self.ws,
            &mut self.k,
            &self.stage,
        );
        let (s1, out) = (&self.stage, &mut self.next);
        for i in 0..n {
            out.rho[i] = 0.5 * (state.rho[i] + s1.rho[i] + dt * self.k[0][i]);
            for c in 0..3 {
                out.mom[c][i] = 0.5 * (state.mom[c][i] + s1.mom[c][i] + dt * self.k[1 + c][i]);
            }
            out.energy[i] = 0.5 * (state.energy[i] + s1.energy[i] + dt * self.k[4][i]);
        }
        out.t = state.t + dt;
        recover(&self.model, out, &s1.theta)?;
        std::mem::swap(state, &mut self.next);
        Ok(())
    }

    /// `∫ σ_h` over the domain for `state`.
    fn production_integral(&mut self, state: &State3D, sigma: &mut [f64]) -> f64 {
        self.ws.fill(state);
        self.ws.gradients(&self.domain);
        self.ws.production(&self.model, &self.domain, sigma);
        sigma.iter().sum::<f64>() * self.domain.cell_volume()
    }
}

/// Semi-discrete right-hand side of `s` into `k`.
fn rhs3(model: &ThermoModel, d: &Domain3, ws: &mut Workspace, k: &mut [Vec<f64>; 5], s: &State3D) {
    ws.fill(s);
    face_fluxes::<0>(model, d, ws);
    divergence::<0>(d, ws, k);
    face_fluxes::<1>(model, d, ws);
    divergence::<1>(d, ws, k);
    face_fluxes::<2>(model, d, ws);
    divergence::<2>(d, ws, k);
}

/// Numerical flux in direction `D` through the low face of each padded cell that
/// borders the interior, stored at that cell's padded index.
///
/// Tangential derivatives are face averages of the two cell central differences,
/// taken straight from the padded arrays; at walls the mirrored edge ghosts make
/// the odd component's tangential derivative cancel.
fn face_fluxes<const D: usize>(model: &ThermoModel, d: &Domain3, ws: &mut Workspace) {
    let (t1, t2) = ((D + 1) % 3, (D + 2) % 3);
    let st = ws.stride;
    let (sd, s1, s2) = (st[D], st[t1], st[t2]);
    let ihd = 1.0 / d.h[D];
    let (q1, q2) = (0.25 / d.h[t1], 0.25 / d.h[t2]);
    let mut hi = d.n;
    hi[D] += 1;
    let np = ws.np;
    let Workspace {
        rho,
        u,
        theta,
        p,
        e,
        flux,
        ..
    } = ws;
    let [f_rho, f_m0, f_m1, f_m2, f_e] = flux;
    let mut f_m = [Some(f_m0), Some(f_m1), Some(f_m2)];
    let (f_d, f_1, f_2) = (
        f_m[D].take().unwrap(),
        f_m[t1].take().unwrap(),
        f_m[t2].take().unwrap(),
    );
    let coef = FaceCoef {
        mu: [model.mu0, model.mu1],
        eta: [model.eta0, model.eta1],
        kappa: [model.kappa0, model.kappa2, model.kappa3],
        ihd,
        q1,
        q2,
        sd,
        s1,
        s2,
    };
    for i in 0..hi[0] {
        for j in 0..hi[1] {
            let row = ((i + 1) * np[1] + j + 1) * np[2] + 1;
            let out = row..row + hi[2];
            row_fluxes(
                &coef,
                row,
                rho,
                theta,
                p,
                e,
                &u[D],
                &u[t1],
                &u[t2],
                &mut f_rho[out.clone()],
                &mut f_d[out.clone()],
                &mut f_1[out.clone()],
                &mut f_2[out.clone()],
                &mut f_e[out],
            );
        }
    }
}

/// Constants of one direction's face sweep.
struct FaceCoef {
    mu: [f64; 2],
    eta: [f64; 2],
    kappa: [f64; 3],
    ihd: f64,
    q1: f64,
    q2: f64,
    sd: usize,
    s1: usize,
    s2: usize,
}

/// Fluxes through the low faces of the padded cells `base..base + f_rho.len()`;
/// `ud` is the normal velocity component, `u1`, `u2` the tangential ones.
#[allow(clippy::too_many_arguments)]
#[inline(never)]
fn row_fluxes(
    c: &FaceCoef,
    base: usize,
    rho: &[f64],
    theta: &[f64],
    p: &[f64],
    e: &[f64],
    ud: &[f64],
    u1: &[f64],
    u2: &[f64],
    f_rho: &mut [f64],
    f_d: &mut [f64],
    f_1: &mut [f64],
    f_2: &mut [f64],
    f_e: &mut [f64],
) {
    let n = f_rho.len();
    let (sd, s1, s2) = (c.sd, c.s1, c.s2);
    let len = rho.len();
    assert!(base >= sd + s1 + s2 && base + n + s1 + s2 <= len);
    for v in [theta, p, e, ud, u1, u2] {
        assert_eq!(v.len(), len);
    }
    let (f_d, f_1, f_2, f_e) = (&mut f_d[..n], &mut f_1[..n], &mut f_2[..n], &mut f_e[..n]);
    // SAFETY: every index below lies in [base - sd - s1 - s2, base + n + s1 + s2),
    // inside the bounds asserted above.
    let g = |v: &[f64], i: usize| unsafe { *v.get_unchecked(i) };
    let (ihd, q1, q2) = (c.ihd, c.q1, c.q2);
    for kk in 0..n {
        let r = base + kk;
        let l = r - sd;
        let nd = (g(ud, r) - g(ud, l)) * ihd;
        let n1 = (g(u1, r) - g(u1, l)) * ihd;
        let n2 = (g(u2, r) - g(u2, l)) * ihd;
        let g1d = q1 * ((g(ud, l + s1) - g(ud, l - s1)) + (g(ud, r + s1) - g(ud, r - s1)));
        let g2d = q2 * ((g(ud, l + s2) - g(ud, l - s2)) + (g(ud, r + s2) - g(ud, r - s2)));
        let g11 = q1 * ((g(u1, l + s1) - g(u1, l - s1)) + (g(u1, r + s1) - g(u1, r - s1)));
        let g22 = q2 * ((g(u2, l + s2) - g(u2, l - s2)) + (g(u2, r + s2) - g(u2, r - s2)));

        let (thl, thr) = (g(theta, l), g(theta, r));
        let tf = 0.5 * (thl + thr);
        let mu = c.mu[0] + c.mu[1] * tf;
        let lam = c.eta[0] + c.eta[1] * tf - 2.0 / 3.0 * mu;
        let kappa = c.kappa[0] + (c.kappa[1] + c.kappa[2] * tf) * tf * tf;
        let div = nd + g11 + g22;
        let tau_d = 2.0 * mu * nd + lam * div;
        let tau_1 = mu * (g1d + n1);
        let tau_2 = mu * (g2d + n2);

        let (rl, rr) = (g(rho, l), g(rho, r));
        let (pl, pr) = (g(p, l), g(p, r));
        let (udl, udr) = (g(ud, l), g(ud, r));
        let (u1l, u1r) = (g(u1, l), g(u1, r));
        let (u2l, u2r) = (g(u2, l), g(u2, r));
        let (ml, mr) = (rl * udl, rr * udr);
        f_rho[kk] = 0.5 * (ml + mr);
        f_d[kk] = 0.5 * (ml * udl + mr * udr + pl + pr) - tau_d;
        f_1[kk] = 0.5 * (ml * u1l + mr * u1r) - tau_1;
        f_2[kk] = 0.5 * (ml * u2l + mr * u2r) - tau_2;
        let work = 0.5 * (tau_d * (udl + udr) + tau_1 * (u1l + u1r) + tau_2 * (u2l + u2r));
        let q = -kappa * (thr - thl) * ihd;
        f_e[kk] = 0.5 * ((g(e, l) + pl) * udl + (g(e, r) + pr) * udr) - work + q;
    }
}

/// `k -= ∂_D F` over the interior cells, from the fluxes left by [`face_fluxes`];
/// the first direction overwrites `k`.
fn divergence<const D: usize>(d: &Domain3, ws: &Workspace, k: &mut [Vec<f64>; 5]) {
    let [n1, n2, n3] = d.n;
    let w = 1.0 / d.h[D];
    let sd = ws.stride[D];
    for (kc, f) in k.iter_mut().zip(&ws.flux) {
        for i in 0..n1 {
            for j in 0..n2 {
                let ic = (i * n2 + j) * n3;
                let pc = ws.at(i as isize, j as isize, 0);
                let lo = &f[pc..pc + n3];
                let up = &f[pc + sd..pc + sd + n3];
                for ((kv, a), b) in kc[ic..ic + n3].iter_mut().zip(lo).zip(up) {
                    let v = (a - b) * w;
                    *kv = if D == 0 { v } else { *kv + v };
                }
            }
        }
    }
}

fn recover(model: &ThermoModel, s: &mut State3D, guess: &[f64]) -> Result<()> {
    for i in 0..s.rho.len() {
        let r = s.rho[i];
        if !(r > 0.0 && r.is_finite()) {
            return Err(NsfError::PositivityLoss {
                time: s.t,
                what: format!("density {r} in cell {i}"),
            });
        }
        let inv = 1.0 / r;
        let u = [s.mom[0][i] * inv, s.mom[1][i] * inv, s.mom[2][i] * inv];
        let e = s.energy[i] * inv - 0.5 * (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]);
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
        for c in 0..3 {
            s.u[c][i] = u[c];
        }
        s.theta[i] = pt.theta;
        s.p[i] = pt.p;
        s.cs[i] = pt.cs2.sqrt();
        s.cv[i] = pt.cv;
    }
    Ok(())
}

/// Snapshot-time summary of a 3D run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Diagnostics3D {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub entropy_production_min: f64,
    /// `∫_0^t ∫ σ_h`, trapezoidal in time over every step.
    pub production_integral: f64,
}

/// Snapshots and diagnostics of a 3D run.
#[derive(Debug, Clone, Default)]
pub struct Trajectory3D {
    pub snapshots: Vec<State3D>,
    pub diagnostics: Vec<Diagnostics3D>,
    pub steps: usize,
}

/// Drives a [`Solver3D`] while integrating the entropy production in time.
#[derive(Debug, Clone)]
pub struct Integrator3D {
    solver: Solver3D,
    sigma: Vec<f64>,
    production_now: f64,
    production_integral: f64,
    sigma_min: f64,
}

impl Integrator3D {
    pub fn new(model: ThermoModel, state: &State3D) -> Self {
        let mut solver = Solver3D::new(model, *state.domain());
        let mut sigma = vec![0.0; state.domain.cells()];
        let production_now = solver.production_integral(state, &mut sigma);
        let sigma_min = sigma.iter().copied().fold(f64::INFINITY, f64::min);
        Integrator3D {
            solver,
            sigma,
            production_now,
            production_integral: 0.0,
            sigma_min,
        }
    }

    pub fn model(&self) -> &ThermoModel {
        &self.solver.model
    }

    /// Largest stable step for `state`.
    pub fn stable_dt(&self, state: &State3D) -> f64 {
        stable_dt3(&self.solver.model, state)
    }

    /// One step of size `dt`, which must not exceed [`stable_dt`](Self::stable_dt).
    pub fn advance(&mut self, state: &mut State3D, dt: f64) -> Result<()> {
        self.solver.advance(state, dt)?;
        self.record(state, dt);
        Ok(())
    }

    /// Advances by `min(dt_max, stable step)` and returns the step taken.
    pub fn advance_stable(&mut self, state: &mut State3D, dt_max: f64) -> Result<f64> {
        let dt = self.solver.advance_stable(state, dt_max)?;
        self.record(state, dt);
        Ok(dt)
    }

    fn record(&mut self, state: &State3D, dt: f64) {
        let after = self.solver.production_integral(state, &mut self.sigma);
        self.sigma_min = self.sigma.iter().copied().fold(self.sigma_min, f64::min);
        self.production_integral += 0.5 * dt * (self.production_now + after);
        self.production_now = after;
    }

    /// Smallest pointwise σ_h seen since the last call.
    pub fn take_sigma_min(&mut self) -> f64 {
        std::mem::replace(&mut self.sigma_min, f64::INFINITY)
    }

    pub fn diagnostics(&mut self, state: &State3D) -> Diagnostics3D {
        let sigma_min = self.take_sigma_min();
        Diagnostics3D {
            t: state.t,
            mass: state.mass(),
            energy: state.energy(),
            entropy_production_min: sigma_min,
            production_integral: self.production_integral,
        }
    }
}

/// Integrates to `t_final` with `outputs` equally spaced snapshots after the initial one.
pub fn integrate3d(
    model: &ThermoModel,
    state: &State3D,
    t_final: f64,
    outputs: usize,
) -> Result<Trajectory3D> {
    let mut traj = Trajectory3D::default();
    let steps = integrate3d_with(model, state, t_final, outputs, |s, d| {
        traj.snapshots.push(s.clone());
        traj.diagnostics.push(*d);
        Ok(())
    })?;
    traj.steps = steps;
    Ok(traj)
}

/// Like [`integrate3d`] but streams snapshots to `on_output`; returns the step count.
pub fn integrate3d_with<F>(
    model: &ThermoModel,
    state: &State3D,
    t_final: f64,
    outputs: usize,
    mut on_output: F,
) -> Result<usize>
where
    F: FnMut(&State3D, &Diagnostics3D) -> Result<()>,
{
    if !(t_final >= 0.0 && t_final.is_finite()) {
        return Err(NsfError::InvalidParameter(format!(
            "final time must be nonnegative, got {t_final}"
        )));
    }
    let mut s = state.clone();
    let mut integ = Integrator3D::new(*model, &s);
    on_output(&s, &integ.diagnostics(&s))?;
    if t_final == 0.0 {
        return Ok(0);
    }
    let outputs = outputs.max(1);
    let t0 = s.t;
    let mut steps = 0;
    for k in 1..=outputs {
        let target = t0 + t_final * k as f64 / outputs as f64;
        while s.t < target {
            let remaining = target - s.t;
            let dt = integ.advance_stable(&mut s, remaining)?;
            if dt == remaining || target - s.t <= 1e-9 * dt {
                s.t = target;
            }
            steps += 1;
        }
        on_output(&s, &integ.diagnostics(&s))?;
    }
    Ok(steps)
}

/// One entry of the total dissipation balance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LedgerEntry {
    pub t: f64,
    /// `∫ ½ρ|u|² + H^θ̄(ρ,θ)`.
    pub kinetic_ballistic: f64,
    /// `θ̄ ∫_0^t ∫ σ_h`.
    pub production: f64,
    pub total: f64,
}

/// Total dissipation balance of a trajectory at constant reference temperature θ̄.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DissipationLedger {
    pub theta_bar: f64,
    pub initial_total: f64,
    pub entries: Vec<LedgerEntry>,
}

impl DissipationLedger {
    /// `max_t |total(t) − total(0)|`.
    pub fn max_imbalance(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| (e.total - self.initial_total).abs())
            .fold(0.0, f64::max)
    }

    /// `max_t (total(t) − total(0))`, positive when the ledger gains.
    pub fn max_excess(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.total - self.initial_total)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn production_nondecreasing(&self) -> bool {
        self.entries
            .windows(2)
            .all(|w| w[1].production >= w[0].production)
    }
}

pub fn dissipation_ledger(
    model: &ThermoModel,
    trajectory: &Trajectory3D,
    theta_bar: f64,
) -> Result<DissipationLedger> {
    if !(theta_bar > 0.0 && theta_bar.is_finite()) {
        return Err(NsfError::InvalidParameter(format!(
            "reference temperature must be positive, got {theta_bar}"
        )));
    }
    if trajectory.snapshots.is_empty() || trajectory.snapshots.len() != trajectory.diagnostics.len()
    {
        return Err(NsfError::InsufficientData(
            "trajectory needs snapshots with diagnostics".into(),
        ));
    }
    let entries: Vec<LedgerEntry> = trajectory
        .snapshots
        .iter()
        .zip(&trajectory.diagnostics)
        .map(|(s, d)| {
            let kb = s.kinetic_ballistic(model, theta_bar);
            let prod = theta_bar * d.production_integral;
            LedgerEntry {
                t: s.t,
                kinetic_ballistic: kb,
                production: prod,
                total: kb + prod,
            }
        })
        .collect();
    Ok(DissipationLedger {
        theta_bar,
        initial_total: entries[0].total,
        entries,
    })
}

/// Writes `state` as CSV with columns `i,j,k,x1,x2,y,rho,u1,u2,u3,theta`.
pub fn write_csv(state: &State3D, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record([
        "i", "j", "k", "x1", "x2", "y", "rho", "u1", "u2", "u3", "theta",
    ])
    .map_err(|e| csv_err(path, e))?;
    let d = state.domain;
    for i in 0..d.n[0] {
        for j in 0..d.n[1] {
            for k in 0..d.n[2] {
                let idx = d.index(i, j, k);
                let [x1, x2, y] = d.center(i, j, k);
                let rec = [
                    i.to_string(),
                    j.to_string(),
                    k.to_string(),
                    x1.to_string(),
                    x2.to_string(),
                    y.to_string(),
                    state.rho[idx].to_string(),
                    state.u[0][idx].to_string(),
                    state.u[1][idx].to_string(),
                    state.u[2][idx].to_string(),
                    state.theta[idx].to_string(),
                ];
                w.write_record(&rec).map_err(|e| csv_err(path, e))?;
            }
        }
    }
    w.flush().map_err(|e| NsfError::io(path, e))
}

pub(crate) fn csv_err(path: &Path, e: csv::Error) -> NsfError {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => NsfError::io(path, io),
        other => NsfError::io(path, std::io::Error::other(format!("{other:?}"))),
    }
}

pub const BINARY_MAGIC: &[u8; 4] = b"NSF3";
pub const BINARY_VERSION: u32 = 1;

/// Raw snapshot: magic `NSF3`, version (u32), n1, n2, n3 (u64), ε, t (f64),
/// then the fields ρ, u1, u2, u3, θ one after another, each in axial-fastest order.
/// Everything little-endian.
pub fn write_binary(state: &State3D, mut w: impl Write) -> std::io::Result<()> {
    let d = state.domain;
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&BINARY_VERSION.to_le_bytes())?;
    for n in d.n {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    w.write_all(&d.epsilon.to_le_bytes())?;
    w.write_all(&state.t.to_le_bytes())?;
    for field in [
        &state.rho,
        &state.u[0],
        &state.u[1],
        &state.u[2],
        &state.theta,
    ] {
        let mut buf = Vec::with_capacity(field.len() * 8);
        for v in field.iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

/// Header and fields of a raw snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct BinarySnapshot {
    pub n: [usize; 3],
    pub epsilon: f64,
    pub t: f64,
    /// ρ, u1, u2, u3, θ.
    pub fields: [Vec<f64>; 5],
}

pub fn read_binary(mut r: impl Read) -> std::io::Result<BinarySnapshot> {
    let bad = |m: &str| std::io::Error::new(std::io::ErrorKind::InvalidData, m.to_string());
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != BINARY_MAGIC {
        return Err(bad("not an NSF3 snapshot"));
    }
    let mut b4 = [0u8; 4];
    r.read_exact(&mut b4)?;
    if u32::from_le_bytes(b4) != BINARY_VERSION {
        return Err(bad("unsupported snapshot version"));
    }
    let mut b8 = [0u8; 8];
    let mut n = [0usize; 3];
    for v in n.iter_mut() {
        r.read_exact(&mut b8)?;
        *v = u64::from_le_bytes(b8) as usize;
    }
    r.read_exact(&mut b8)?;
    let epsilon = f64::from_le_bytes(b8);
    r.read_exact(&mut b8)?;
    let t = f64::from_le_bytes(b8);
    let len = n[0]
        .checked_mul(n[1])
        .and_then(|m| m.checked_mul(n[2]))
        .ok_or_else(|| bad("dimensions overflow"))?;
    let mut fields: [Vec<f64>; 5] = Default::default();
    for f in fields.iter_mut() {
        let mut buf = vec![0u8; len * 8];
        r.read_exact(&mut buf)?;
        *f = buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
    }
    Ok(BinarySnapshot {
        n,
        epsilon,
        t,
        fields,
    })
}
