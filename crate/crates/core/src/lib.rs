//! Forward and inverse numerics for the wave equation `u_tt − Δu − q(x)u = 0`
//! driven by a point source, with data measured on the cylinder `|x| = R`.
//!
//! - [`sphgrid`]: real spherical harmonics, quadrature transforms, angular operators
//! - [`goursat1d`]: characteristic-grid solvers for the radial and per-mode problems
//! - [`assembly`]: potentials, assembled fields, forward problems, cylinder traces
//! - [`energy`]: discrete sideways and time energies and their identities
//! - [`inverse`]: layer stripping, mode-wise linearized inversion, Kirchhoff recovery

#![allow(clippy::needless_range_loop)]

pub mod assembly;
pub mod energy;
pub mod error;
pub mod goursat1d;
pub mod inverse;
pub mod radial;
pub mod sphgrid;

pub use assembly::{
    eval_total, extract_trace, forward_linearized, forward_nonlinear, load_trace, save_trace,
    CylinderTrace, HarmonicPotential, TotalFieldSample, VolumetricField,
};
pub use error::{Error, Result};
pub use goursat1d::{
    cylinder_trace_mode, diagonal_trace, manufactured_residual, solve_background, solve_mode, CharGrid,
    ModeCoefficient, ModeCone, ModeForcing, ModeTrace,
};
pub use radial::RadialProfile;
pub use sphgrid::{
    build_basis, AngularField, HarmonicBasis, HarmonicCoeffs, QGammaReport, SphereGrid, SphereTransform,
};
pub use energy::{EnergyReport, Geometry, LatticeField};
pub use inverse::{InversionConfig, KirchhoffConfig, RecoveredPotential};
