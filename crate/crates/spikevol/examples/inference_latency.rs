//! Per-spike inference cost of the two deployment routes: the image-only
//! multi-view regressor versus the point-cloud route (pairwise-distance
//! featurization plus encoder).
//!
//! The image route skips the O(n^2) featurization entirely, which is the
//! practical payoff of distilling cloud knowledge into the image model; the
//! quadratic growth of the cloud route is measured directly alongside.

use std::error::Error;

use spikevol::learn::dataset::make_synthetic_dataset;
use spikevol::learn::train::{train_regulated, train_teacher};
use spikevol::learn::TrainConfig;
use spikevol::pipeline::{benchmark_inference, histogram_scaling_ratio};

fn main() -> Result<(), Box<dyn Error>> {
    // Latency depends on architecture and input sizes, not on how well the
    // weights fit, so a brief training pass is enough to get real models.
    println!("preparing models on a small dataset...");
    let dataset = make_synthetic_dataset(12, 12, 5)?;
    let encoder = train_teacher(&dataset, &TrainConfig { epochs: 3, ..TrainConfig::encoder_default(5) })?;
    let rt = train_regulated(&dataset, 1.0, &TrainConfig { epochs: 3, ..TrainConfig::regressor_default(5) })?;

    let bench = benchmark_inference(&rt, &encoder, &dataset.spikes, 5)?;
    println!(
        "image route:  median {:>8.1} us   p95 {:>8.1} us   ({} samples)",
        bench.image_path.median_us, bench.image_path.p95_us, bench.image_path.samples
    );
    println!(
        "cloud route:  median {:>8.1} us   p95 {:>8.1} us   ({} samples)",
        bench.cloud_path.median_us, bench.cloud_path.p95_us, bench.cloud_path.samples
    );
    println!(
        "cloud / image median ratio: {:.1}x (the image route should win by well over 10x)",
        bench.median_ratio
    );

    // The cloud route's cost is dominated by the all-pairs distance pass;
    // doubling the point count should roughly quadruple the time.
    let ratio = histogram_scaling_ratio(1000, 2000, 5, 5)?;
    println!("featurization time ratio t(2000 pts) / t(1000 pts): {ratio:.2} (quadratic => ~4)");

    Ok(())
}
