//! Depthwise correlation against the naive loop, plus the head size table.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use siamtrack::correlation::{count_params, dw_xcorr, dw_xcorr_reference, CorrConfig, CorrVariant};
use siamtrack::tensor::Tensor;
use std::time::Instant;

fn main() -> siamtrack::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let z = Tensor::randn(&[2, 32, 7, 7], 1.0, &mut rng);
    let x = Tensor::randn(&[2, 32, 31, 31], 1.0, &mut rng);

    let t = Instant::now();
    let fast = dw_xcorr(&z, &x)?;
    let t_fast = t.elapsed();
    let t = Instant::now();
    let slow = dw_xcorr_reference(&z, &x)?;
    let t_slow = t.elapsed();
    println!("output {:?}, max diff {:.2e}", fast.shape(), fast.max_abs_diff(&slow));
    println!("gemm {t_fast:?} vs loops {t_slow:?}");

    println!("\nhead parameters at k = 5:");
    println!("{:>6} {:>10} {:>12} {:>12}", "D", "xcorr", "up_xcorr", "dw_xcorr");
    for d in [64, 128, 256] {
        let n = |v| count_params(&CorrConfig::new(v, d), 5).total();
        println!(
            "{d:>6} {:>10} {:>12} {:>12}",
            n(CorrVariant::XCorr),
            n(CorrVariant::UpXCorr),
            n(CorrVariant::DwXCorr)
        );
    }
    Ok(())
}
