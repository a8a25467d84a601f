//! Cultural evaluation toolkit for multilingual text-to-image models.

pub mod embedding;
pub mod extrinsic;
pub mod human_eval;
pub mod intrinsic;
mod io;
pub mod ontology;
pub mod optimizer;
pub mod par;
pub mod pipeline;
pub mod prompt;
pub mod report;
pub mod suite;
