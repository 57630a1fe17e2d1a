//! Trains with no target shift and with a wide shift, then compares where
//! each model puts its confidence on uniformly placed targets. Takes a few
//! minutes; pass an epoch count to shorten it (default 8).

use siamtrack::bias_lab::{run_simulation, BiasRunConfig};

fn main() -> siamtrack::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(8);
    for shift in [0.0, 32.0] {
        let mut cfg = BiasRunConfig::desk(shift, 1);
        cfg.epochs = epochs;
        cfg.eval_samples = 100;
        cfg.track_sequences = 3;
        let r = run_simulation(&cfg)?;
        println!(
            "shift {shift:>4}: central mass {:.3} chi2 {:.3} entropy {:.3} tracking iou {:.3}",
            r.stats.central_mass,
            r.stats.chi_square,
            r.stats.entropy,
            r.track_iou.unwrap_or(f64::NAN)
        );
        let m = &r.stats.map;
        for row in (0..m.size).step_by(3) {
            let line: String = (0..m.size)
                .step_by(2)
                .map(|c| {
                    let v = m.data[row * m.size + c] * (m.size * m.size) as f64;
                    [' ', '.', ':', '+', '#'][(v * 1.5).min(4.0) as usize]
                })
                .collect();
            println!("    |{line}|");
        }
    }
    Ok(())
}
