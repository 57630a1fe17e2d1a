//! Success curve, AUC and precision for an oracle, a jittered oracle and
//! random boxes on the same dataset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siamtrack::harness::{random_predictions, score_predictions, SequenceDataset};
use siamtrack::sampling::SynthSpec;

fn main() -> siamtrack::Result<()> {
    let spec = SynthSpec::default();
    let ds = SequenceDataset::synthetic(&spec, 5, 50, 3)?;
    let thr = 20.0 * 127.0 / 255.0;
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let oracle: Vec<_> = ds.sequences.iter().map(|s| (s.name.clone(), s.gt.clone())).collect();
    let jitter: Vec<_> = ds
        .sequences
        .iter()
        .map(|s| {
            let boxes = s.gt.iter().map(|b| b.translated(rng.random_range(-6.0..6.0), rng.random_range(-6.0..6.0))).collect();
            (s.name.clone(), boxes)
        })
        .collect();
    let c = spec.canvas as f64;
    let random = random_predictions(&ds, (c, c), 2);

    for (name, preds) in [("oracle", oracle), ("jitter", jitter), ("random", random)] {
        let r = score_predictions(&ds, &preds, thr)?;
        let curve: Vec<String> = r.success.iter().step_by(4).map(|(t, s)| format!("{t:.1}:{s:.2}")).collect();
        println!("{name:<7} AUC {:.4} precision {:.4}  [{}]", r.auc, r.precision, curve.join(" "));
    }
    Ok(())
}
