//! Binary code authorship attribution.
//!
//! The crate covers the whole attribution workflow over an assembly-level
//! program model: ingesting listings ([`model`]), filtering compiler and
//! library functions, extracting stylometric features ([`features`]),
//! ranking them by association with authors ([`ranking`]), training and
//! cross-validating a linear attribution model ([`attribution`]), clustering
//! functions ([`clustering`]), and forging synthetic author-styled corpora
//! with evasion transforms ([`forge`]).

pub mod features;
pub mod model;
pub mod attribution;
pub mod clustering;
pub mod ranking;
pub mod forge;
pub mod store;
pub mod pipeline;
