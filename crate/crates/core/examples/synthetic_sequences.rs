//! Generates a small synthetic dataset on disk and reads it back.

use siamtrack::harness::SequenceDataset;
use siamtrack::sampling::{Motion, SynthSpec};

fn main() -> siamtrack::Result<()> {
    let spec = SynthSpec {
        motion: Motion::ConstantVelocity { speed: 3.0 },
        distractors: 2,
        ..SynthSpec::default()
    };
    let ds = SequenceDataset::synthetic(&spec, 3, 40, 7)?;
    let root = std::env::temp_dir().join("siamtrack_synth_example");
    ds.write_dir(&root)?;
    let back = SequenceDataset::load_dir(&root)?;
    println!("wrote and reloaded {} frames under {}", back.total_frames(), root.display());
    for s in &back.sequences {
        let (a, b) = (&s.gt[0], &s.gt[s.len() - 1]);
        println!(
            "{}: {} frames, box ({:.0}, {:.0}) {:.0}x{:.0} -> ({:.0}, {:.0})",
            s.name,
            s.len(),
            a.cx,
            a.cy,
            a.w,
            a.h,
            b.cx,
            b.cy
        );
    }
    Ok(())
}
