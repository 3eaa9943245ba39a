//! P1 finite elements for simultaneous distributed and boundary optimal
//! control of an elliptic problem with Dirichlet or Robin data on one part of
//! the boundary and a Neumann control on the other.

pub mod analysis;
pub mod control;
pub mod error;
pub mod fem;
pub mod mesh;
pub mod solvers;
pub mod sparse;
pub mod study;
pub mod verify;

pub use control::{ControlProblem, FixedPointOptions, Optimum, Relaxation};
pub use error::{Error, Result};
pub use fem::{BoundaryTrace, ControlPair, FeFunction, NormKind, P1Space, Space, Transfer};
pub use mesh::{BoundaryLabel, Mesh, Side};
pub use solvers::{EllipticOperator, ProblemSpec, Variant};

/// Guide chapters, compiled so their snippets run as doc-tests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/meshes.md")]
    mod meshes {}
    #[doc = include_str!("../../../book/src/state-adjoint.md")]
    mod state_adjoint {}
    #[doc = include_str!("../../../book/src/optimization.md")]
    mod optimization {}
    #[doc = include_str!("../../../book/src/constants.md")]
    mod constants {}
    #[doc = include_str!("../../../book/src/studies.md")]
    mod studies {}
}
