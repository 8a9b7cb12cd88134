//! Numerical laboratory for the deformed de Rham complex `d + T df` on
//! tame noncompact models: spectra of the deformed Laplacian, distance
//! fields and decay estimates for its eigenforms, gradient-flow counting
//! complexes, and the scenario catalog tying them together.

pub mod agmon;
pub mod collar;
pub mod exterior;
pub mod spectra;
pub mod field_dsl;
pub mod flow;
pub mod geometry;
pub mod grid;
pub mod report;
pub mod scenarios;
pub mod sparse;
pub mod witten;
