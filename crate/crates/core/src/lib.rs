//! Image grammar learning: part semantics by deep clustering, part syntax by
//! a bidirectional LSTM, and grammar-based detection of patch corruptions.

pub mod numcore;
pub mod data;
pub mod corrupt;
pub mod cluster;
pub mod syntax;
pub mod validate;
