//! Short training run on synthetic pairs, then one-pass evaluation on
//! held-out sequences. Pass an epoch count as the first argument (default 4).

use siamtrack::harness::config::RunConfig;
use siamtrack::harness::{eval_ope, SequenceDataset};
use siamtrack::model::SiamModel;
use siamtrack::sampling::LabelConfig;
use siamtrack::training::{train, SynthPairs};

fn main() -> siamtrack::Result<()> {
    let epochs: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(4);
    let mut cfg = RunConfig::default();
    cfg.train.epochs = epochs;
    cfg.train.warmup_epochs = cfg.train.warmup_epochs.min(epochs - 1);

    let mut model = SiamModel::build(&cfg.model_config(), cfg.seed)?;
    println!("{} trainable parameters", model.trainable_params());
    let data = SynthPairs {
        spec: cfg.synth.clone(),
        sample: cfg.sample_config(),
        seed: cfg.seed,
    };
    let log = train(&mut model, &cfg.train_config(), &data, &LabelConfig::default(), None)?;
    for (e, loss) in log.epoch_totals().iter().enumerate() {
        println!("epoch {:>2} loss {loss:.4}", e + 1);
    }
    let w = model.fusion_weights();
    println!("fusion alpha {:.3?} beta {:.3?}", w.normalized_alpha(), w.normalized_beta());

    let ds = SequenceDataset::synthetic(&cfg.synth, 4, 60, cfg.data.seed)?;
    let run = eval_ope(&model, &ds, &cfg.tracker)?;
    println!("AUC {:.4}  precision {:.4} over {} frames", run.result.auc, run.result.precision, run.result.frames);
    Ok(())
}
