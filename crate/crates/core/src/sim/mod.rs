//! Synthetic cascades with a computable ground-truth risk.

pub mod generate;
pub mod oracle;
pub mod profile;

pub use generate::{simulate_dataset, simulate_record, Simulator};
pub use oracle::{
    oracle_icl_risk, oracle_loss_laws, oracle_risk, oracle_risk_mc, LossLaw, McEstimate,
};
pub use profile::{DiscreteProfile, NoiseModel, SimProfile};
