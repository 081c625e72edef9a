//! Full-order finite-volume discretization of the transport-diffusion
//! equation and its implicit-Euler time integration.
//!
//! Semi-discrete form per active cell e (integral form, unit depth):
//!   V_e dc_e/dt + (A c)_e + (C(phi) c)_e = V_e f_e
//! where A is the two-point diffusion operator (diffusivity folded in)
//! and C(phi) the first-order upwind convection operator, linear in the
//! face flux phi. Boundary closure: c = 0 on inflow portions of the
//! outer boundary (Dirichlet, half-cell distance), zero diffusive flux
//! on walls and obstacles, pure advective outflow elsewhere.

use crate::emission::{EmissionError, EmissionSeries};
use crate::flow::{max_divergence, FlowError, FluxField};
use crate::grid::{FaceKind, GridError, StructuredGrid};
use crate::linsolve::{bicgstab_jacobi, Csr, SolveError, Triplets};
use crate::scalar::Real;
use nalgebra::DMatrix;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FomError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Emission(#[from] EmissionError),
    #[error(transparent)]
    Solve(#[from] SolveError),
    #[error("record cadence {record_every} is not a multiple of dt {dt}")]
    BadCadence { record_every: f64, dt: f64 },
    #[error("time step must be positive, got {0}")]
    BadDt(f64),
}

/// Face-interpolation rule tag; the reduced convective tensor must be
/// assembled with the same rule as the FOM.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SchemeTag {
    Upwind,
}

#[derive(Debug, Clone)]
pub struct TransportOperators<R> {
    /// Diagonal mass operator: cell volumes.
    pub mass: Vec<R>,
    /// Diffusion operator with diffusivity and inlet closure folded in.
    pub diffusion: Csr<R>,
    /// Upwind convection operator for the flux the operators were built with.
    pub convection: Csr<R>,
    pub scheme: SchemeTag,
}

const DIV_WARN: f64 = 1e-8;

/// Two-point diffusion operator. `inflow` carries the flux used to
/// classify outer boundary faces: Dirichlet c = 0 on inflow faces, zero
/// diffusive flux elsewhere. `None` means all-Neumann.
pub fn assemble_diffusion<R: Real>(
    g: &StructuredGrid<R>,
    nu: R,
    inflow: Option<&FluxField<R>>,
) -> Result<Csr<R>, FomError> {
    if let Some(phi) = inflow {
        phi.check(g)?;
    }
    let n = g.n_active();
    let mut t = Triplets::new(n, n);
    let half = R::of(0.5);
    for (k, f) in g.faces.iter().enumerate() {
        let delta = if f.normal.0 != R::zero() { g.dx } else { g.dy };
        match f.kind {
            FaceKind::Interior { neighbor } => {
                let coeff = nu * f.area / delta;
                t.push(f.owner, f.owner, coeff);
                t.push(f.owner, neighbor, -coeff);
                t.push(neighbor, neighbor, coeff);
                t.push(neighbor, f.owner, -coeff);
            }
            FaceKind::Boundary { .. } => {
                if let Some(phi) = inflow {
                    if phi.values[k] < R::zero() {
                        // Dirichlet c = 0 at half-cell distance.
                        t.push(f.owner, f.owner, nu * f.area / (half * delta));
                    }
                }
            }
            FaceKind::Wall => {}
        }
    }
    Ok(t.to_csr())
}

/// First-order upwind convection operator for a given face flux.
pub fn assemble_convection<R: Real>(
    g: &StructuredGrid<R>,
    phi: &FluxField<R>,
) -> Result<Csr<R>, FomError> {
    phi.check(g)?;
    let max_div = max_divergence(g, phi)?;
    let scale = num_traits::Float::max(phi.max_abs(), R::of(f64::MIN_POSITIVE));
    if max_div > R::of(DIV_WARN) * scale {
        eprintln!(
            "warning: convection flux has max cell divergence {:e} (> {DIV_WARN:e} * max|phi|); conservation degrades",
            max_div.to_f64()
        );
    }
    let abs: Vec<R> = phi.values.iter().map(|&q| num_traits::Float::abs(q)).collect();
    assemble_convection_split(g, &phi.values, &abs)
}

/// Upwind convection written in its central + dissipation form: the face
/// contribution is (q + d)/2 from the owner and (q - d)/2 from the
/// neighbor. With `diss = |signed|` this is the classic upwind operator;
/// the split form is linear in the pair (signed, diss), which is what
/// the reduced convective tensor is assembled against.
pub fn assemble_convection_split<R: Real>(
    g: &StructuredGrid<R>,
    signed: &[R],
    diss: &[R],
) -> Result<Csr<R>, FomError> {
    if signed.len() != g.n_faces() || diss.len() != g.n_faces() {
        return Err(FomError::Flow(crate::flow::FlowError::SizeMismatch {
            got: signed.len().min(diss.len()),
            expected: g.n_faces(),
        }));
    }
    let half = R::of(0.5);
    let n = g.n_active();
    let mut t = Triplets::new(n, n);
    for (k, f) in g.faces.iter().enumerate() {
        let q = signed[k];
        let d = diss[k];
        if q == R::zero() && d == R::zero() {
            continue;
        }
        let qp = (q + d) * half;
        let qm = (q - d) * half;
        match f.kind {
            FaceKind::Interior { neighbor } => {
                t.push(f.owner, f.owner, qp);
                t.push(neighbor, f.owner, -qp);
                t.push(f.owner, neighbor, qm);
                t.push(neighbor, neighbor, -qm);
            }
            FaceKind::Boundary { .. } => {
                // outflow advects the interior value outward; the inflow
                // part multiplies the inlet concentration (0): no entry
                t.push(f.owner, f.owner, qp);
            }
            FaceKind::Wall => {}
        }
    }
    Ok(t.to_csr())
}

pub fn assemble_operators<R: Real>(
    g: &StructuredGrid<R>,
    nu: R,
    phi: &FluxField<R>,
) -> Result<TransportOperators<R>, FomError> {
    let v = g.cell_volume();
    Ok(TransportOperators {
        mass: vec![v; g.n_active()],
        diffusion: assemble_diffusion(g, nu, Some(phi))?,
        convection: assemble_convection(g, phi)?,
        scheme: SchemeTag::Upwind,
    })
}

const STEP_TOL: f64 = 1e-10;

impl<R: Real> TransportOperators<R> {
    /// System matrix M/dt + A + C of the implicit Euler step.
    pub fn system_matrix(&self, dt: R) -> Csr<R> {
        let n = self.mass.len();
        let mut t = Triplets::new(n, n);
        for (i, &m) in self.mass.iter().enumerate() {
            t.push(i, i, m / dt);
        }
        let md = t.to_csr();
        md.add_scaled(R::one(), &self.diffusion, R::one())
            .add_scaled(R::one(), &self.convection, R::one())
    }

    /// One implicit Euler step: (M/dt + A + C) c_next = (M/dt) c + M f.
    pub fn step(&self, c: &[R], f: &[R], dt: R) -> Result<Vec<R>, FomError> {
        if dt <= R::zero() {
            return Err(FomError::BadDt(dt.to_f64()));
        }
        let sys = self.system_matrix(dt);
        self.step_with(&sys, c, f, dt)
    }

    /// Step with a prebuilt system matrix (time-invariant flux fast path).
    pub fn step_with(&self, sys: &Csr<R>, c: &[R], f: &[R], dt: R) -> Result<Vec<R>, FomError> {
        let n = self.mass.len();
        assert_eq!(c.len(), n);
        assert_eq!(f.len(), n);
        let mut rhs = vec![R::zero(); n];
        for i in 0..n {
            rhs[i] = self.mass[i] * (c[i] / dt + f[i]);
        }
        let x = bicgstab_jacobi(sys, &rhs, Some(c), R::of(STEP_TOL), 100 * n.max(100))?;
        Ok(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotRole {
    Concentration,
    Source,
    Flux,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix<R> {
    /// Columns are full-order fields at the recorded instants.
    pub data: DMatrix<R>,
    pub instants: Vec<R>,
    pub role: SnapshotRole,
}

impl<R: Real> SnapshotMatrix<R> {
    pub fn n_snapshots(&self) -> usize {
        self.data.ncols()
    }

    pub fn column(&self, j: usize) -> Vec<R> {
        self.data.column(j).iter().copied().collect()
    }
}

fn cadence_steps<R: Real>(record_every: R, dt: R) -> Result<usize, FomError> {
    let ratio = record_every.to_f64() / dt.to_f64();
    let rounded = ratio.round();
    if rounded < 1.0 || (ratio - rounded).abs() > 1e-9 * rounded {
        return Err(FomError::BadCadence { record_every: record_every.to_f64(), dt: dt.to_f64() });
    }
    Ok(rounded as usize)
}

/// Marches the FOM with a fixed flux over [t0, t0 + horizon], recording
/// concentration columns every `record_every` seconds. Returns the
/// snapshots together with the wall-clock seconds spent time stepping.
pub fn run_fom<R: Real>(
    g: &StructuredGrid<R>,
    phi: &FluxField<R>,
    series: &EmissionSeries<R>,
    nu: R,
    t0: R,
    horizon: R,
    dt: R,
    record_every: R,
) -> Result<(SnapshotMatrix<R>, f64), FomError> {
    let ops = assemble_operators(g, nu, phi)?;
    let sys = ops.system_matrix(dt);
    run_loop(g, series, t0, horizon, dt, record_every, |c, f, _t| ops.step_with(&sys, c, f, dt))
}

/// Same, but with a time-varying flux; operators are reassembled per step.
pub fn run_fom_varying<R: Real>(
    g: &StructuredGrid<R>,
    flux_at: impl Fn(R) -> Result<FluxField<R>, FomError>,
    series: &EmissionSeries<R>,
    nu: R,
    t0: R,
    horizon: R,
    dt: R,
    record_every: R,
) -> Result<(SnapshotMatrix<R>, f64), FomError> {
    run_loop(g, series, t0, horizon, dt, record_every, |c, f, t| {
        let phi = flux_at(t)?;
        let ops = assemble_operators(g, nu, &phi)?;
        ops.step(c, f, dt)
    })
}

fn run_loop<R: Real>(
    g: &StructuredGrid<R>,
    series: &EmissionSeries<R>,
    t0: R,
    horizon: R,
    dt: R,
    record_every: R,
    mut advance: impl FnMut(&[R], &[R], R) -> Result<Vec<R>, FomError>,
) -> Result<(SnapshotMatrix<R>, f64), FomError> {
    if dt <= R::zero() {
        return Err(FomError::BadDt(dt.to_f64()));
    }
    let every = cadence_steps(record_every, dt)?;
    let n_steps = (horizon.to_f64() / dt.to_f64()).round() as usize;

    let start = Instant::now();
    let mut c = vec![R::zero(); g.n_active()];
    let mut columns = vec![c.clone()];
    let mut instants = vec![t0];
    for k in 1..=n_steps {
        let t = t0 + dt * R::of(k as f64);
        let f = series.evaluate_source(g, t)?;
        c = advance(&c, &f, t)?;
        if k % every == 0 {
            columns.push(c.clone());
            instants.push(t);
        }
    }
    let elapsed = start.elapsed().as_secs_f64();

    let data = DMatrix::from_fn(g.n_active(), columns.len(), |r, j| columns[j][r]);
    Ok((SnapshotMatrix { data, instants, role: SnapshotRole::Concentration }, elapsed))
}

/// Right-hand side of the discrete mass budget at the post-step state:
/// boundary advective outflow plus inlet diffusive loss of `c`.
pub fn boundary_loss<R: Real>(g: &StructuredGrid<R>, phi: &FluxField<R>, nu: R, c: &[R]) -> R {
    let half = R::of(0.5);
    let mut loss = R::zero();
    for (k, f) in g.faces.iter().enumerate() {
        if let FaceKind::Boundary { .. } = f.kind {
            let q = phi.values[k];
            if q > R::zero() {
                loss += q * c[f.owner];
            } else if q < R::zero() {
                let delta = if f.normal.0 != R::zero() { g.dx } else { g.dy };
                loss += nu * f.area / (half * delta) * c[f.owner];
            }
        }
    }
    loss
}
