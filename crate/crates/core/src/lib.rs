//! Numerical laboratory for eigenfunctions of the Dirichlet Laplacian on
//! rational polygons.
//!
//! The crate is organised bottom-up:
//!
//! * [`polygon`] and [`region`]: validated rational polygons, their finite
//!   reflection groups and measurable test regions.
//! * [`billiard`]: the specular billiard flow, directional orbits, time
//!   averages of position observables and Liouville Monte Carlo.
//! * [`mesh`]: conforming triangulations with nested refinement.
//! * [`spectral`]: linear finite elements and a shift-invert block Lanczos
//!   eigensolver for the lowest Dirichlet modes.
//! * [`ergodicity`]: matrix elements, quantum variance, local Weyl means and
//!   density-one subsequence extraction.
//!
//! Data-parallel loops (Monte Carlo samples, per-mode matrix elements,
//! reorthogonalisation) go through [`Exec`], which uses rayon when the
//! `parallel` feature is enabled and falls back to plain iteration otherwise.
//! Results never depend on the execution mode.

pub mod billiard;
pub mod ergodicity;
pub mod exec;
pub mod geom;
pub mod mesh;
pub mod observable;
pub mod polygon;
pub mod quadrature;
pub mod region;
pub mod spectral;

pub use exec::Exec;
pub use geom::Vec2;
pub use observable::Observable;
pub use polygon::{RationalPolygon, ReflectionGroup};
pub use region::Region;
