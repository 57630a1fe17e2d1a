//! Strides, receptive fields and what zero padding does to translation.

use siamtrack::backbone::{build_backbone, shift_deviation, BackboneConfig, Level};

fn main() -> siamtrack::Result<()> {
    for (name, cfg) in [("padded", BackboneConfig::desk()), ("pad-free", BackboneConfig::desk_padfree())] {
        let (bb, store) = build_backbone(&cfg, 1)?;
        println!("{name}: dilations {:?}", cfg.dilations);
        for level in Level::ALL {
            let i = level.index();
            println!(
                "  conv{} stride {} rf {:>3}  63 -> {:>2}  127 -> {:>2}",
                level.tag(),
                bb.strides()[i],
                bb.receptive_field(level),
                bb.output_size(level, 63)?,
                bb.output_size(level, 127)?
            );
        }
        let r = shift_deviation(&bb, &store, Level::Conv5, 127, 1, 9)?;
        let cols: Vec<String> = r.columns.iter().map(|v| format!("{v:.0e}")).collect();
        println!("  one-cell shift, conv5 deviation per column: {}", cols.join(" "));
    }
    Ok(())
}
