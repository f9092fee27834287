//! Test-only models of notibus behaviour, written separately from the
//! implementation so the two can be compared.

pub mod gen;
pub mod naming_model;
pub mod reference_filter;
