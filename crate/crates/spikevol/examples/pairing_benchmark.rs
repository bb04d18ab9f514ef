//! Pairing quality on synthetic scenes, broken down by view count.
//!
//! Reproduces the headline pairing experiment: an upright-pose scene scored
//! with border detections excluded, a random-pose scene scored on everything,
//! and a large-scene throughput measurement.

use std::error::Error;
use std::time::Instant;

use spikevol::pairing::{build_graph, consensus_clusters, PairingParams};
use spikevol::scene::{
    generate_scene, score_pairing, standard_rig, view_count_breakdown, PoseMode, SceneConfig,
};

fn main() -> Result<(), Box<dyn Error>> {
    let rig = standard_rig();
    let params = PairingParams::default();
    let bins = [(6, 9), (10, 12), (12, 12)];

    for (name, pose, exclude_border) in [
        ("upright, border excluded", PoseMode::Upright { sigma_deg: 15.0 }, true),
        ("random pose, all detections", PoseMode::Random, false),
    ] {
        let config = SceneConfig { n_spikes: 100, pose, seed: 42, ..SceneConfig::default() };
        let scene = generate_scene(&config, &rig)?;
        let t0 = Instant::now();
        let graph = build_graph(&scene.detection_boxes(), &scene.cameras, &params, config.seed)?;
        let clusters = consensus_clusters(&graph, 3, 2, config.seed);
        let elapsed = t0.elapsed();
        let overall = score_pairing(&scene, &clusters, exclude_border);
        println!(
            "{name}: {} detections, {} edges, paired in {:.2?}",
            scene.detections.len(),
            graph.edges.len(),
            elapsed
        );
        println!(
            "  overall      P {:.3}  R {:.3}  (tp {} fp {} fn {})",
            overall.precision,
            overall.recall,
            overall.true_pairs,
            overall.false_pairs,
            overall.missed_pairs
        );
        for bin in view_count_breakdown(&scene, &clusters, &bins, exclude_border) {
            println!(
                "  views {:>5}  P {:.3}  R {:.3}  ({} spikes, tp {} fp {} fn {})",
                bin.label,
                bin.score.precision,
                bin.score.recall,
                bin.spike_count,
                bin.score.true_pairs,
                bin.score.false_pairs,
                bin.score.missed_pairs
            );
        }
    }

    // Throughput probe: a dense plot with ~500 detections per image.
    let config = SceneConfig {
        n_spikes: 520,
        extent: (1300.0, 1000.0),
        min_spacing: 40.0,
        seed: 7,
        ..SceneConfig::default()
    };
    let scene = generate_scene(&config, &rig)?;
    let per_image = scene.detections.len() as f64 / rig.len() as f64;
    let t0 = Instant::now();
    let graph = build_graph(&scene.detection_boxes(), &scene.cameras, &params, config.seed)?;
    let built = t0.elapsed();
    let clusters = consensus_clusters(&graph, 3, 2, config.seed);
    let total = t0.elapsed();
    let score = score_pairing(&scene, &clusters, true);
    println!(
        "dense scene: {} detections (~{per_image:.0}/image), graph {built:.2?}, total {total:.2?}, P {:.3} R {:.3}",
        scene.detections.len(),
        score.precision,
        score.recall
    );
    Ok(())
}
