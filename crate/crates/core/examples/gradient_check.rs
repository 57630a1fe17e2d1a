//! Central differences against the tape for every custom operator.

use siamtrack::training::{standard_grad_checks, GradCheckConfig};

fn main() -> siamtrack::Result<()> {
    for eps in [1e-4, 1e-5, 1e-6] {
        let cfg = GradCheckConfig { eps, ..GradCheckConfig::default() };
        println!("eps {eps:e}");
        for (name, r) in standard_grad_checks(&cfg)? {
            println!(
                "  {name:<11} max rel err {:.2e} over {} coords, {} skipped",
                r.max_rel_error,
                r.checked,
                r.skipped.len()
            );
        }
    }
    Ok(())
}
