//! Discrete local generator and nonlocal jump operator.

mod jumps;
mod stencil;
mod symbolic;

pub use jumps::{
    apply_jump_operator, build_jump_quadrature, build_jump_quadrature_at, gradient, levy_integrability_report,
    ComponentQuadrature, Destination, Exterior, JumpQuadrature, LevyReport,
};
pub use stencil::{apply_local_generator, slot, CoefficientFields, LocalStencil};
pub use symbolic::ExprGenerator;
