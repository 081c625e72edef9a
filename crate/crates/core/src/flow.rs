//! Parametric divergence-free face-flux fields.
//!
//! The convective data consumed by the transport discretization is the
//! face-normal volumetric flux phi_f = u.n S_f. Here it comes from a
//! cell-centered potential-flow solve with uniform far-field wind
//! (mu1, mu2) = (magnitude, incidence), so discrete incompressibility
//! holds by construction: each cell equation IS the zero-divergence
//! condition.

use crate::grid::{FaceKind, GridError, StructuredGrid};
use crate::linsolve::{cg_jacobi, SolveError, Triplets};
use crate::scalar::Real;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("incompatible boundary data: net boundary flux {0:e}")]
    Incompatible(f64),
    #[error("flux field has {got} entries, grid has {expected} faces")]
    SizeMismatch { got: usize, expected: usize },
    #[error("log-law argument non-positive: {0}")]
    LogDomain(f64),
}

/// Far-field wind sample: magnitude (m/s) and incidence (radians).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindParameter<R> {
    pub mu1: R,
    pub mu2: R,
}

impl<R: Real> WindParameter<R> {
    /// Normalizes the angle into [0, 2*pi) and clamps negative magnitudes to zero.
    pub fn new(mu1: R, mu2: R) -> Self {
        let two_pi = R::of(std::f64::consts::TAU);
        let mut a = mu2 % two_pi;
        if a < R::zero() {
            a += two_pi;
        }
        Self { mu1: if mu1 < R::zero() { R::zero() } else { mu1 }, mu2: a }
    }

    /// Cartesian far-field velocity (u_ref components).
    pub fn velocity(&self) -> (R, R) {
        (self.mu1 * num_traits::Float::cos(self.mu2), self.mu1 * num_traits::Float::sin(self.mu2))
    }
}

/// Per-face normal volumetric flux, aligned with the grid face list.
/// Interior faces are signed owner -> neighbour; boundary faces carry
/// signed outward flux; wall faces are zero.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxField<R> {
    pub values: Vec<R>,
}

impl<R: Real> FluxField<R> {
    pub fn zeros(g: &StructuredGrid<R>) -> Self {
        Self { values: vec![R::zero(); g.n_faces()] }
    }

    pub fn check(&self, g: &StructuredGrid<R>) -> Result<(), FlowError> {
        if self.values.len() != g.n_faces() {
            return Err(FlowError::SizeMismatch { got: self.values.len(), expected: g.n_faces() });
        }
        Ok(())
    }

    pub fn max_abs(&self) -> R {
        self.values.iter().fold(R::zero(), |m, &v| num_traits::Float::max(m, num_traits::Float::abs(v)))
    }

    /// Face data the upwind discretization is linear in: the signed
    /// fluxes followed by their magnitudes. Snapshot reduction of the
    /// convective term operates on this augmented vector, so the
    /// dissipative part of the operator is captured by the basis instead
    /// of being approximated by magnitudes of signed-flux modes.
    pub fn convective_data(&self) -> Vec<R> {
        let mut out = Vec::with_capacity(2 * self.values.len());
        out.extend(self.values.iter().copied());
        out.extend(self.values.iter().map(|&v| num_traits::Float::abs(v)));
        out
    }

    /// a*self + b*other, face-wise.
    pub fn linear_combination(&self, a: R, other: &FluxField<R>, b: R) -> FluxField<R> {
        assert_eq!(self.values.len(), other.values.len());
        FluxField {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&x, &y)| a * x + b * y)
                .collect(),
        }
    }

    pub fn scale(&self, a: R) -> FluxField<R> {
        FluxField { values: self.values.iter().map(|&x| a * x).collect() }
    }
}

/// Atmospheric-boundary-layer log-law profile:
/// u(z) = u_ref * ln((z - d + z0)/z0) / ln((z_ref + z0)/z0).
pub fn abl_profile<R: Real>(z: R, u_ref: R, z_ref: R, d: R, z0: R) -> Result<R, FlowError> {
    let num_arg = (z - d + z0) / z0;
    let den_arg = (z_ref + z0) / z0;
    if z0 <= R::zero() || num_arg <= R::zero() || den_arg <= R::zero() {
        return Err(FlowError::LogDomain(num_arg.to_f64()));
    }
    Ok(u_ref * num_traits::Float::ln(num_arg) / num_traits::Float::ln(den_arg))
}

const DIV_TOL: f64 = 1e-10;

/// Solves the cell-centered potential problem with Neumann data
/// u_ref.n S_f on outer boundary faces and zero flux on walls; returns
/// the exactly divergence-free face fluxes of the solution.
pub fn solve_potential_flow<R: Real>(
    g: &StructuredGrid<R>,
    w: &WindParameter<R>,
) -> Result<FluxField<R>, FlowError> {
    let (ux, uy) = w.velocity();
    solve_potential_flow_uniform(g, ux, uy)
}

/// Potential flow for a raw Cartesian far-field velocity. Fluxes are
/// linear in (ux, uy), which the pipeline exploits via superposition.
pub fn solve_potential_flow_uniform<R: Real>(
    g: &StructuredGrid<R>,
    ux: R,
    uy: R,
) -> Result<FluxField<R>, FlowError> {
    let n = g.n_active();
    if ux == R::zero() && uy == R::zero() {
        return Ok(FluxField::zeros(g));
    }

    // Boundary Neumann data and compatibility check.
    let mut rhs = vec![R::zero(); n];
    let mut net = R::zero();
    let mut abs_sum = R::zero();
    for f in &g.faces {
        if let FaceKind::Boundary { .. } = f.kind {
            let phi = (ux * f.normal.0 + uy * f.normal.1) * f.area;
            rhs[f.owner] += phi;
            net += phi;
            abs_sum += num_traits::Float::abs(phi);
        }
    }
    if num_traits::Float::abs(net) > R::of(DIV_TOL) * num_traits::Float::max(abs_sum, R::one()) {
        return Err(FlowError::Incompatible(net.to_f64()));
    }

    // Two-point Laplacian: L p = rhs, T_f = S_f / delta.
    let mut t = Triplets::new(n, n);
    for f in &g.faces {
        if let FaceKind::Interior { neighbor } = f.kind {
            let delta = if f.normal.0 != R::zero() { g.dx } else { g.dy };
            let tf = f.area / delta;
            t.push(f.owner, f.owner, tf);
            t.push(neighbor, neighbor, tf);
            t.push(f.owner, neighbor, -tf);
            t.push(neighbor, f.owner, -tf);
        }
    }
    let lap = t.to_csr();
    let p = cg_jacobi(&lap, &rhs, R::of(1e-12), 10 * n.max(100), Some(0))?;

    let mut values = vec![R::zero(); g.n_faces()];
    for (k, f) in g.faces.iter().enumerate() {
        values[k] = match f.kind {
            FaceKind::Interior { neighbor } => {
                let delta = if f.normal.0 != R::zero() { g.dx } else { g.dy };
                (f.area / delta) * (p[neighbor] - p[f.owner])
            }
            FaceKind::Boundary { .. } => (ux * f.normal.0 + uy * f.normal.1) * f.area,
            FaceKind::Wall => R::zero(),
        };
    }
    Ok(FluxField { values })
}

/// Per-cell signed outgoing flux sum (m^3/s).
pub fn divergence<R: Real>(g: &StructuredGrid<R>, phi: &FluxField<R>) -> Result<Vec<R>, FlowError> {
    phi.check(g)?;
    let mut div = vec![R::zero(); g.n_active()];
    for (k, f) in g.faces.iter().enumerate() {
        let v = phi.values[k];
        div[f.owner] += v;
        if let FaceKind::Interior { neighbor } = f.kind {
            div[neighbor] -= v;
        }
    }
    Ok(div)
}

/// Checks the discrete incompressibility invariant.
pub fn max_divergence<R: Real>(g: &StructuredGrid<R>, phi: &FluxField<R>) -> Result<R, FlowError> {
    let div = divergence(g, phi)?;
    Ok(div.iter().fold(R::zero(), |m, &v| num_traits::Float::max(m, num_traits::Float::abs(v))))
}
