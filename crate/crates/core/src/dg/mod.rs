//! Discontinuous Galerkin discretization on a Kuhn-split box.

pub mod mesh;
pub mod quadrature;
pub mod space;

pub use mesh::DgMesh;
pub use quadrature::{QuadratureKind, TetRule};
pub use space::DgSpace;
