//! Hoeffding-Bentkus p-values and Learn-then-Test selection.

pub mod bounds;
pub mod ltt;

pub use bounds::{binom_cdf, hb_pvalue, kl_bernoulli};
pub use ltt::{
    build_views, certification_from_counts, certify, ltt_select, select_from_counts, sweep_counts,
    Certification, LambdaGrid, Selection,
};
