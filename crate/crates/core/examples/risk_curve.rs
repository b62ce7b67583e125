//! Prints the exact risk curve of the default enumerable profile together
//! with per-layer accuracy of each context kind.
//!
//! `cargo run --example risk_curve -- [mix]`

use icl_guard::sim::{oracle_loss_laws, simulate_dataset, DiscreteProfile};
use icl_guard::{ConfidenceMeasure, ContextKind, ExitPolicy, LambdaGrid};

fn main() -> icl_guard::Result<()> {
    let mix: f64 = std::env::args()
        .nth(1)
        .map(|s| s.parse().expect("mix"))
        .unwrap_or(0.5);
    let profile = DiscreteProfile::default().with_mix(mix)?;
    let template = ExitPolicy::lambda(1.0, profile.first_exit_layer, ConfidenceMeasure::Argmax)?;

    let records = simulate_dataset(&profile, 20_000, 1)?;
    println!("layer  acc_correct  acc_incorrect");
    for layer in 1..=profile.num_layers {
        let acc = |kind| {
            let of_kind: Vec<_> = records
                .iter()
                .filter(|r| r.context_kind() == kind)
                .collect();
            let hits = of_kind
                .iter()
                .filter(|r| r.effective_trace().layer(layer).argmax() == r.true_label())
                .count();
            hits as f64 / of_kind.len().max(1) as f64
        };
        println!(
            "{layer:5}  {:11.3}  {:13.3}",
            acc(ContextKind::Correct),
            acc(ContextKind::Incorrect)
        );
    }

    let grid = LambdaGrid::default();
    let candidates = grid.candidates();
    let laws = oracle_loss_laws(&profile, &template, &candidates)?;
    println!("\nlambda  risk  helpful  harmful");
    for (t, law) in candidates.iter().zip(&laws) {
        println!(
            "{t:>14}  {:+.4}  {:.4}  {:.4}",
            law.icl_risk(),
            law.helpful,
            law.harmful
        );
    }
    Ok(())
}
