//! Reduced-order modeling of urban pollutant transport.
//!
//! The full-order model is a structured finite-volume discretization of
//! the advection-diffusion equation, driven by divergence-free potential
//! fluxes and synthetic road emissions. Offline, POD bases, a DEIM
//! source model, a convective tensor and a small coefficient-regression
//! network are built from snapshots; online, a dense reduced system is
//! marched at a cost independent of the grid size.
//!
//! Everything numerical is generic over the scalar type; the `f64`
//! aliases below are the ones the CLI and the persistence layer use.

pub mod config;
pub mod deim;
pub mod emission;
pub mod flow;
pub mod fom;
pub mod grid;
pub mod io;
pub mod linsolve;
pub mod mlp;
pub mod pipeline;
pub mod pod;
pub mod rom;
pub mod scalar;

pub use scalar::Real;

pub type Grid = grid::StructuredGrid<f64>;
pub type Flux = flow::FluxField<f64>;
pub type Wind = flow::WindParameter<f64>;
pub type Emissions = emission::EmissionSeries<f64>;
pub type Operators = fom::TransportOperators<f64>;
pub type Snapshots = fom::SnapshotMatrix<f64>;
pub type Basis = pod::PodBasis<f64>;
pub type Deim = deim::DeimModel<f64>;
pub type Net = mlp::Mlp<f64>;
pub type Rom = rom::RomOperators<f64>;
