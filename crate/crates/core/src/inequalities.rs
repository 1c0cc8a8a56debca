//! Discrete checks of the Korn-type inequalities on boxes with `u·n = 0` and of the
//! Poincaré–Ladyzhenskaya bound on thin pipes.
//!
//! Fields live on the nodes of a tensor grid that includes the boundary, so the
//! boundary condition is imposed exactly at the boundary nodes. Derivatives are
//! central inside and one-sided second order on the boundary; integrals use the
//! trapezoid rule, i.e. the midpoint rule on the dual cells.

use std::f64::consts::PI;

use rand::{Rng, RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{NsfError, Result};
use crate::solver3d::CrossSection;

/// Largest normal component tolerated on a constrained face.
pub const BOUNDARY_TOLERANCE: f64 = 1e-12;

/// `n[d]` equal intervals on `[lo[d], hi[d]]`, so `n[d] + 1` nodes per axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NodeGrid {
    pub n: [usize; 3],
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl NodeGrid {
    pub fn new(n: [usize; 3], lo: [f64; 3], hi: [f64; 3]) -> Result<Self> {
        if n.iter().any(|&m| m < 2) {
            return Err(NsfError::InvalidParameter(format!(
                "need at least 2 intervals per axis, got {n:?}"
            )));
        }
        for d in 0..3 {
            if !(lo[d].is_finite() && hi[d].is_finite() && hi[d] > lo[d]) {
                return Err(NsfError::Domain(format!(
                    "empty or non-finite extent [{}, {}] on axis {d}",
                    lo[d], hi[d]
                )));
            }
        }
        Ok(NodeGrid { n, lo, hi })
    }

    /// Unit cube with `n` intervals per axis.
    pub fn unit_cube(n: usize) -> Result<Self> {
        NodeGrid::new([n; 3], [0.0; 3], [1.0; 3])
    }

    /// `εQ × [0, 1]`.
    pub fn thin_pipe(q: CrossSection, epsilon: f64, n: [usize; 3]) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(NsfError::InvalidParameter(format!(
                "epsilon must be positive, got {epsilon}"
            )));
        }
        NodeGrid::new(
            n,
            [epsilon * q.a, epsilon * q.c, 0.0],
            [epsilon * q.b, epsilon * q.d, 1.0],
        )
    }

    pub fn nodes(&self) -> [usize; 3] {
        [self.n[0] + 1, self.n[1] + 1, self.n[2] + 1]
    }

    pub fn len(&self) -> usize {
        let m = self.nodes();
        m[0] * m[1] * m[2]
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn h(&self) -> [f64; 3] {
        std::array::from_fn(|d| (self.hi[d] - self.lo[d]) / self.n[d] as f64)
    }

    pub fn h_max(&self) -> f64 {
        self.h().into_iter().fold(0.0, f64::max)
    }

    /// Coordinate of node `i` on axis `d`; the end nodes are exact.
    pub fn coord(&self, d: usize, i: usize) -> f64 {
        if i == self.n[d] {
            self.hi[d]
        } else {
            self.lo[d] + i as f64 * (self.hi[d] - self.lo[d]) / self.n[d] as f64
        }
    }

    /// Linear index of node `(i, j, k)`, `k` fastest.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        let m = self.nodes();
        (i * m[1] + j) * m[2] + k
    }

    /// Samples `f(x)` at every node.
    pub fn sample(&self, f: impl Fn([f64; 3]) -> f64) -> Vec<f64> {
        let m = self.nodes();
        let mut out = Vec::with_capacity(self.len());
        for i in 0..m[0] {
            for j in 0..m[1] {
                for k in 0..m[2] {
                    out.push(f([self.coord(0, i), self.coord(1, j), self.coord(2, k)]));
                }
            }
        }
        out
    }

    /// Trapezoid weights along axis `d`.
    fn weights(&self, d: usize) -> Vec<f64> {
        let h = self.h()[d];
        let mut w = vec![h; self.n[d] + 1];
        w[0] = 0.5 * h;
        w[self.n[d]] = 0.5 * h;
        w
    }

    /// `∂_d v` at every node.
    fn derivative(&self, v: &[f64], d: usize) -> Vec<f64> {
        let m = self.nodes();
        let stride = [m[1] * m[2], m[2], 1][d];
        let last = self.n[d];
        let inv2h = 0.5 / self.h()[d];
        let mut out = vec![0.0; v.len()];
        for i in 0..m[0] {
            for j in 0..m[1] {
                for k in 0..m[2] {
                    let idx = self.index(i, j, k);
                    let c = [i, j, k][d];
                    out[idx] = if c == 0 {
                        (-3.0 * v[idx] + 4.0 * v[idx + stride] - v[idx + 2 * stride]) * inv2h
                    } else if c == last {
                        (3.0 * v[idx] - 4.0 * v[idx - stride] + v[idx - 2 * stride]) * inv2h
                    } else {
                        (v[idx + stride] - v[idx - stride]) * inv2h
                    };
                }
            }
        }
        out
    }

    /// Calls `f(index, weight)` for every node.
    fn for_each_weighted(&self, mut f: impl FnMut(usize, f64)) {
        let w: [Vec<f64>; 3] = std::array::from_fn(|d| self.weights(d));
        let mut idx = 0;
        for wi in &w[0] {
            for wj in &w[1] {
                let wij = wi * wj;
                for wk in &w[2] {
                    f(idx, wij * wk);
                    idx += 1;
                }
            }
        }
    }
}

/// Nodal vector field with a `u·n = 0` flag per pair of opposite faces.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteVectorField {
    grid: NodeGrid,
    u: [Vec<f64>; 3],
    /// `constrained[d]`: `u_d` must vanish on the two faces normal to axis `d`.
    constrained: [bool; 3],
}

impl DiscreteVectorField {
    pub fn new(grid: NodeGrid, u: [Vec<f64>; 3], constrained: [bool; 3]) -> Result<Self> {
        let len = grid.len();
        if let Some(c) = u.iter().position(|v| v.len() != len) {
            return Err(NsfError::InvalidParameter(format!(
                "component {c} has {} values, grid has {len} nodes",
                u[c].len()
            )));
        }
        Ok(DiscreteVectorField {
            grid,
            u,
            constrained,
        })
    }

    /// Samples `f` with every face constrained.
    pub fn from_fn(grid: NodeGrid, f: impl Fn([f64; 3]) -> [f64; 3]) -> Self {
        let u = std::array::from_fn(|c| grid.sample(|x| f(x)[c]));
        DiscreteVectorField {
            grid,
            u,
            constrained: [true; 3],
        }
    }

    pub fn grid(&self) -> &NodeGrid {
        &self.grid
    }

    pub fn component(&self, c: usize) -> &[f64] {
        &self.u[c]
    }

    pub fn constrained(&self) -> [bool; 3] {
        self.constrained
    }

    /// Largest `|u·n|` over the constrained faces.
    pub fn boundary_violation(&self) -> f64 {
        let g = &self.grid;
        let m = g.nodes();
        let mut worst = 0.0_f64;
        for i in 0..m[0] {
            for j in 0..m[1] {
                for k in 0..m[2] {
                    let c = [i, j, k];
                    for d in 0..3 {
                        if self.constrained[d] && (c[d] == 0 || c[d] == g.n[d]) {
                            worst = worst.max(self.u[d][g.index(i, j, k)].abs());
                        }
                    }
                }
            }
        }
        worst
    }
}

/// `∇u` at every node, `g[a][b] = ∂_b u_a`.
pub fn discrete_gradient(field: &DiscreteVectorField) -> Vec<[[f64; 3]; 3]> {
    let g = gradient_arrays(field);
    (0..field.grid.len())
        .map(|idx| std::array::from_fn(|a| std::array::from_fn(|b| g[3 * a + b][idx])))
        .collect()
}

fn gradient_arrays(field: &DiscreteVectorField) -> [Vec<f64>; 9] {
    std::array::from_fn(|m| field.grid.derivative(&field.u[m / 3], m % 3))
}

/// Quadratic forms of a velocity gradient over the box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KornReport {
    /// `‖∇u‖²`.
    pub grad_sq: f64,
    /// `‖∇u + ∇uᵀ‖²`.
    pub sym_sq: f64,
    /// `‖∇u + ∇uᵀ − (2/3) div u I‖²`.
    pub dev_sq: f64,
    /// `∫ (∇u + ∇uᵀ − (2/3) div u I) : ∇u`.
    pub mixed: f64,
    /// `‖div u‖²`.
    pub div_sq: f64,
    /// `10 h_max² (1 + grad_sq)`.
    pub tol: f64,
}

impl KornReport {
    /// `[sym_sq, dev_sq, mixed] − grad_sq`; nonnegative in the continuum.
    pub fn margins(&self) -> [f64; 3] {
        [
            self.sym_sq - self.grad_sq,
            self.dev_sq - self.grad_sq,
            self.mixed - self.grad_sq,
        ]
    }

    pub fn holds(&self) -> [bool; 3] {
        self.margins().map(|m| m >= -self.tol)
    }

    pub fn passed(&self) -> bool {
        self.holds().iter().all(|&b| b)
    }

    /// `sym_sq − 2(grad_sq + div_sq)`, zero in the continuum when `u·n = 0`.
    pub fn sym_identity_residual(&self) -> f64 {
        self.sym_sq - 2.0 * (self.grad_sq + self.div_sq)
    }

    /// `mixed − (grad_sq + div_sq/3)`, zero in the continuum.
    pub fn mixed_identity_residual(&self) -> f64 {
        self.mixed - (self.grad_sq + self.div_sq / 3.0)
    }
}

pub fn korn_report(field: &DiscreteVectorField) -> Result<KornReport> {
    let viol = field.boundary_violation();
    if viol > BOUNDARY_TOLERANCE {
        return Err(NsfError::Boundary(format!(
            "normal velocity reaches {viol:e} on a constrained face"
        )));
    }
    let g = gradient_arrays(field);
    let mut r = KornReport {
        grad_sq: 0.0,
        sym_sq: 0.0,
        dev_sq: 0.0,
        mixed: 0.0,
        div_sq: 0.0,
        tol: 0.0,
    };
    field.grid.for_each_weighted(|idx, w| {
        let gr: [f64; 9] = std::array::from_fn(|m| g[m][idx]);
        let div = gr[0] + gr[4] + gr[8];
        let (mut grad, mut sym, mut dev, mut mixed) = (0.0, 0.0, 0.0, 0.0);
        for a in 0..3 {
            for b in 0..3 {
                let gab = gr[3 * a + b];
                let s = gab + gr[3 * b + a];
                let d = if a == b { s - 2.0 / 3.0 * div } else { s };
                grad += gab * gab;
                sym += s * s;
                dev += d * d;
                mixed += d * gab;
            }
        }
        r.grad_sq += w * grad;
        r.sym_sq += w * sym;
        r.dev_sq += w * dev;
        r.mixed += w * mixed;
        r.div_sq += w * div * div;
    });
    let h = field.grid.h_max();
    r.tol = 10.0 * h * h * (1.0 + r.grad_sq);
    Ok(r)
}

/// Largest wave number used by [`random_compliant_field`].
pub const MAX_WAVE_NUMBER: u32 = 3;

/// Sum of `modes` separable trigonometric terms per component. Along its own axis
/// component `u_a` is `sin(kπξ)`, so it vanishes on both faces normal to that axis;
/// along the other axes it is `cos(kπξ + φ)` with random phase.
pub fn random_compliant_field<R: Rng>(
    grid: NodeGrid,
    rng: &mut R,
    modes: usize,
) -> DiscreteVectorField {
    let m = grid.nodes();
    let u = std::array::from_fn(|a| {
        let mut v = vec![0.0; grid.len()];
        for _ in 0..modes {
            let amp: f64 = rng.random_range(-1.0..1.0);
            let factors: [Vec<f64>; 3] = std::array::from_fn(|d| {
                let (k, phase) = if d == a {
                    (rng.random_range(1..=MAX_WAVE_NUMBER), None)
                } else {
                    (
                        rng.random_range(0..=MAX_WAVE_NUMBER),
                        Some(rng.random_range(0.0..2.0 * PI)),
                    )
                };
                (0..m[d])
                    .map(|i| {
                        let arg = k as f64 * PI * i as f64 / grid.n[d] as f64;
                        match phase {
                            None => arg.sin(),
                            Some(p) => (arg + p).cos(),
                        }
                    })
                    .collect()
            });
            let mut idx = 0;
            for fi in &factors[0] {
                for fj in &factors[1] {
                    let c = amp * fi * fj;
                    for fk in &factors[2] {
                        v[idx] += c * fk;
                        idx += 1;
                    }
                }
            }
        }
        v
    });
    DiscreteVectorField {
        grid,
        u,
        constrained: [true; 3],
    }
}

/// Korn reports of `count` random compliant fields; field `i` draws from stream `i`
/// of a ChaCha generator seeded with `seed`.
pub fn korn_suite(grid: NodeGrid, count: usize, seed: u64) -> Result<Vec<KornReport>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            korn_report(&random_compliant_field(grid, &mut rng, 4))
        })
        .collect()
}

/// Nodal scalar field.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarField {
    pub grid: NodeGrid,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn from_fn(grid: NodeGrid, f: impl Fn([f64; 3]) -> f64) -> Self {
        ScalarField {
            values: grid.sample(f),
            grid,
        }
    }
}

/// Both sides of `‖f − (f)_Q‖⁴_{L⁴} ≤ c ‖∇f‖⁴_{L²}` on one thin pipe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoincareReport {
    pub epsilon: f64,
    /// `‖f − (f)_{Q_ε}‖⁴_{L⁴}`.
    pub numerator: f64,
    /// `‖∇f‖²_{L²}`.
    pub grad_sq: f64,
    /// `numerator / grad_sq²`, and 0 for `f = 0`.
    pub ratio: f64,
}

/// Evaluates the Poincaré–Ladyzhenskaya ratio of `f`, which must vanish at `y = 0`
/// and `y = 1` (axis 2 of the grid).
pub fn poincare_ladyzhenskaya_check(f: &ScalarField, epsilon: f64) -> Result<PoincareReport> {
    let g = &f.grid;
    let m = g.nodes();
    if f.values.len() != g.len() {
        return Err(NsfError::InvalidParameter(format!(
            "field has {} values, grid has {} nodes",
            f.values.len(),
            g.len()
        )));
    }
    let mut worst = 0.0_f64;
    for i in 0..m[0] {
        for j in 0..m[1] {
            worst = worst
                .max(f.values[g.index(i, j, 0)].abs())
                .max(f.values[g.index(i, j, g.n[2])].abs());
        }
    }
    if worst > BOUNDARY_TOLERANCE {
        return Err(NsfError::Boundary(format!(
            "field reaches {worst:e} on y = 0 or y = 1"
        )));
    }

    let (w0, w1) = (g.weights(0), g.weights(1));
    let area: f64 = w0.iter().sum::<f64>() * w1.iter().sum::<f64>();
    let mut mean = vec![0.0; m[2]];
    for (i, wi) in w0.iter().enumerate() {
        for (j, wj) in w1.iter().enumerate() {
            let row = g.index(i, j, 0);
            for (mk, v) in mean.iter_mut().zip(&f.values[row..row + m[2]]) {
                *mk += wi * wj * v;
            }
        }
    }
    mean.iter_mut().for_each(|v| *v /= area);

    let grad: [Vec<f64>; 3] = std::array::from_fn(|d| g.derivative(&f.values, d));
    let (mut numerator, mut grad_sq) = (0.0, 0.0);
    g.for_each_weighted(|idx, w| {
        let dev = f.values[idx] - mean[idx % m[2]];
        let d2 = dev * dev;
        numerator += w * d2 * d2;
        grad_sq += w * (grad[0][idx].powi(2) + grad[1][idx].powi(2) + grad[2][idx].powi(2));
    });
    let ratio = if numerator == 0.0 {
        0.0
    } else {
        numerator / (grad_sq * grad_sq)
    };
    Ok(PoincareReport {
        epsilon,
        numerator,
        grad_sq,
        ratio,
    })
}

/// `sin(πy)·(x₁ − centre of εQ)`, the documented test family.
pub fn poincare_test_family(q: CrossSection, epsilon: f64) -> impl Fn([f64; 3]) -> f64 {
    let c = 0.5 * epsilon * (q.a + q.b);
    move |x| (PI * x[2]).sin() * (x[0] - c)
}

/// [`poincare_ladyzhenskaya_check`] of the test family for each ε on a grid with
/// the same interval counts `n`.
pub fn poincare_sweep(
    q: CrossSection,
    epsilons: &[f64],
    n: [usize; 3],
) -> Result<Vec<PoincareReport>> {
    epsilons
        .iter()
        .map(|&eps| {
            let grid = NodeGrid::thin_pipe(q, eps, n)?;
            let f = ScalarField::from_fn(grid, poincare_test_family(q, eps));
            poincare_ladyzhenskaya_check(&f, eps)
        })
        .collect()
}

/// Whether every ratio stays below `slack` times the first one.
pub fn ratios_bounded(reports: &[PoincareReport], slack: f64) -> bool {
    match reports.first() {
        None => true,
        Some(base) => reports.iter().all(|r| r.ratio <= slack * base.ratio),
    }
}
