//! Flat key-value configs: parse, validate, canonical form and hash.

use siamtrack::harness::config::RunConfig;
use siamtrack::harness::config_hash;

fn main() {
    let text = "\
# short run on the pad-free network
seed = 3
model.variant = padfree
model.levels = 5
train.epochs = 6
train.warmup_epochs = 1
train.shift_range = 16
";
    match RunConfig::from_text(text) {
        Ok(cfg) => {
            let canon = cfg.canonical();
            println!("hash {}", config_hash(&canon));
            println!("{canon}");
        }
        Err(e) => println!("error: {e}"),
    }
    for bad in ["train.epochs = 0", "model.levels = 6", "tracker.nope = 1"] {
        match RunConfig::from_text(bad) {
            Ok(_) => println!("{bad:<20} accepted"),
            Err(e) => println!("{bad:<20} {e}"),
        }
    }
}
