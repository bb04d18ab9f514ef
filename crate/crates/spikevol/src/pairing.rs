//! Cross-view pairing of detection boxes by epipolar consistency.
//!
//! Detections of the same physical spike in different images are linked by
//! sampling pixels inside one box and testing whether their epipolar lines
//! intersect the other box. The resulting weighted graph (with negative
//! weights repelling epipolar-inconsistent and same-image pairs) is
//! clustered by seeded label propagation; running propagation several times
//! and keeping only pairs that co-cluster in enough runs yields the final
//! consensus clusters.

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector2};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::camera::{
    epipolar_line, fundamental_matrix, line_intersects_box, BoundingBox, Camera, GeometryError,
    HomogeneousLine,
};
use crate::rng;

#[derive(Debug, Error)]
pub enum PairingError {
    #[error("detection {detection_id} references unknown image {image_id}")]
    UnknownImage { detection_id: String, image_id: String },
    #[error("pairing needs detections from at least 2 images, got {0}")]
    TooFewImages(usize),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Tunables of graph construction and clustering.
#[derive(Debug, Clone, PartialEq)]
pub struct PairingParams {
    /// Pixels sampled per box for epipolar tests.
    pub samples_per_box: usize,
    /// Minimum edge weight; weights in `(0, tau]` produce no edge.
    pub tau: f64,
    /// Weight assigned when no sampled epipolar line hits the partner box.
    pub w_miss: f64,
    /// Weight between two detections of the same image.
    pub w_same_image: f64,
    /// Maximum label-propagation sweeps.
    pub max_iterations: usize,
}

impl Default for PairingParams {
    fn default() -> Self {
        Self {
            samples_per_box: 20,
            tau: 0.75,
            w_miss: -2.0,
            w_same_image: -5.0,
            max_iterations: 100,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: u32,
    pub b: u32,
    pub weight: f64,
}

/// Weighted pairing graph over detection boxes.
#[derive(Debug, Clone)]
pub struct PairingGraph {
    pub nodes: Vec<BoundingBox>,
    pub edges: Vec<Edge>,
    pub params: PairingParams,
}

/// Final clustering: disjoint sets of detection ids.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterSet {
    pub clusters: Vec<Vec<String>>,
    pub run_count: usize,
    pub agreement_threshold: usize,
}

impl ClusterSet {
    /// Map each detection id to its cluster index.
    pub fn membership(&self) -> HashMap<&str, usize> {
        let mut map = HashMap::new();
        for (idx, cluster) in self.clusters.iter().enumerate() {
            for id in cluster {
                map.insert(id.as_str(), idx);
            }
        }
        map
    }
}

/// Seed for a box's pixel samples, keyed by its ids so every pair evaluation
/// reuses the same samples for the same box.
fn box_seed(seed: u64, bbox: &BoundingBox) -> u64 {
    rng::derive_keyed(seed, "box-samples", &[&bbox.image_id, &bbox.detection_id])
}

/// Draw `k` pixels uniformly over the closed box rectangle.
pub fn sample_box_points(bbox: &BoundingBox, k: usize, seed: u64) -> Vec<Vector2<f64>> {
    let mut rng = rng::rng_from(seed);
    (0..k)
        .map(|_| {
            Vector2::new(
                rng.random_range(bbox.min_x..=bbox.max_x),
                rng.random_range(bbox.min_y..=bbox.max_y),
            )
        })
        .collect()
}

fn count_hits(target: &BoundingBox, lines: &[Option<HomogeneousLine>]) -> usize {
    lines
        .iter()
        .filter(|l| matches!(l, Some(line) if line_intersects_box(line, target)))
        .count()
}

fn lines_into_other_image(
    f: &Matrix3<f64>,
    samples: &[Vector2<f64>],
) -> Vec<Option<HomogeneousLine>> {
    // A sample at the epipole has no epipolar line; it simply never hits.
    samples.iter().map(|p| epipolar_line(f, p).ok()).collect()
}

/// Epipolar-consistency weight between two boxes in different images.
///
/// `f_ab` maps image-`a` pixels to epipolar lines in image `b`, `f_ba` the
/// reverse (`f_ba == f_ab` transposed). The weight is the fraction of sampled
/// pixels, over both directions, whose epipolar line intersects the partner
/// box; per-box samples are derived from `(seed, image id, detection id)` so
/// the weight is symmetric and reused samples make repeated evaluations agree.
pub fn edge_weight(
    box_a: &BoundingBox,
    box_b: &BoundingBox,
    f_ab: &Matrix3<f64>,
    f_ba: &Matrix3<f64>,
    k: usize,
    seed: u64,
) -> f64 {
    debug_assert_ne!(box_a.image_id, box_b.image_id, "edge_weight needs distinct images");
    let samples_a = sample_box_points(box_a, k, box_seed(seed, box_a));
    let samples_b = sample_box_points(box_b, k, box_seed(seed, box_b));
    let hits_on_a = count_hits(box_a, &lines_into_other_image(f_ba, &samples_b));
    let hits_on_b = count_hits(box_b, &lines_into_other_image(f_ab, &samples_a));
    (hits_on_a + hits_on_b) as f64 / (2 * k) as f64
}

/// Build the pairing graph over all detections.
///
/// Cross-image pairs get their epipolar weight when it exceeds `tau`, the
/// repulsive `w_miss` when it is exactly zero, and no edge otherwise;
/// detections sharing an image are always linked by `w_same_image`.
pub fn build_graph(
    detections: &[BoundingBox],
    cameras: &[Camera],
    params: &PairingParams,
    seed: u64,
) -> Result<PairingGraph, PairingError> {
    let camera_index: HashMap<&str, usize> =
        cameras.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();
    let mut by_image: Vec<Vec<u32>> = vec![Vec::new(); cameras.len()];
    for (node, det) in detections.iter().enumerate() {
        let Some(&cam) = camera_index.get(det.image_id.as_str()) else {
            return Err(PairingError::UnknownImage {
                detection_id: det.detection_id.clone(),
                image_id: det.image_id.clone(),
            });
        };
        by_image[cam].push(node as u32);
    }
    let occupied = by_image.iter().filter(|v| !v.is_empty()).count();
    if occupied < 2 {
        return Err(PairingError::TooFewImages(occupied));
    }

    let k = params.samples_per_box;
    let samples: Vec<Vec<Vector2<f64>>> = detections
        .par_iter()
        .map(|det| sample_box_points(det, k, box_seed(seed, det)))
        .collect();

    let mut edges = Vec::new();
    for i in 0..cameras.len() {
        for j in (i + 1)..cameras.len() {
            if by_image[i].is_empty() || by_image[j].is_empty() {
                continue;
            }
            let f_ij = fundamental_matrix(&cameras[i], &cameras[j])?;
            let f_ji = f_ij.transpose();
            // Epipolar lines depend only on (box, target image), so they are
            // computed once per box here rather than once per pair.
            let lines_in_j: Vec<Vec<Option<HomogeneousLine>>> = by_image[i]
                .par_iter()
                .map(|&a| lines_into_other_image(&f_ij, &samples[a as usize]))
                .collect();
            let lines_in_i: Vec<Vec<Option<HomogeneousLine>>> = by_image[j]
                .par_iter()
                .map(|&b| lines_into_other_image(&f_ji, &samples[b as usize]))
                .collect();
            let pair_edges: Vec<Vec<Edge>> = by_image[i]
                .par_iter()
                .enumerate()
                .map(|(ai, &a)| {
                    let box_a = &detections[a as usize];
                    let mut local = Vec::new();
                    for (bj, &b) in by_image[j].iter().enumerate() {
                        let box_b = &detections[b as usize];
                        let hits = count_hits(box_a, &lines_in_i[bj])
                            + count_hits(box_b, &lines_in_j[ai]);
                        let w = hits as f64 / (2 * k) as f64;
                        if w > params.tau {
                            local.push(Edge { a, b, weight: w });
                        } else if w == 0.0 {
                            local.push(Edge { a, b, weight: params.w_miss });
                        }
                    }
                    local
                })
                .collect();
            edges.extend(pair_edges.into_iter().flatten());
        }
    }
    for nodes in &by_image {
        for (p, &a) in nodes.iter().enumerate() {
            for &b in &nodes[p + 1..] {
                edges.push(Edge { a, b, weight: params.w_same_image });
            }
        }
    }
    Ok(PairingGraph { nodes: detections.to_vec(), edges, params: params.clone() })
}

/// Compressed adjacency shared by the propagation runs.
struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    weights: Vec<f64>,
}

impl Adjacency {
    fn build(n: usize, edges: &[Edge]) -> Self {
        let mut degree = vec![0usize; n];
        for e in edges {
            degree[e.a as usize] += 1;
            degree[e.b as usize] += 1;
        }
        let mut offsets = vec![0usize; n + 1];
        for v in 0..n {
            offsets[v + 1] = offsets[v] + degree[v];
        }
        let mut cursor = offsets.clone();
        let mut targets = vec![0u32; offsets[n]];
        let mut weights = vec![0f64; offsets[n]];
        for e in edges {
            targets[cursor[e.a as usize]] = e.b;
            weights[cursor[e.a as usize]] = e.weight;
            cursor[e.a as usize] += 1;
            targets[cursor[e.b as usize]] = e.a;
            weights[cursor[e.b as usize]] = e.weight;
            cursor[e.b as usize] += 1;
        }
        Self { offsets, targets, weights }
    }

    fn neighbors(&self, v: usize) -> impl Iterator<Item = (u32, f64)> + '_ {
        (self.offsets[v]..self.offsets[v + 1]).map(move |i| (self.targets[i], self.weights[i]))
    }
}

fn propagate(adj: &Adjacency, n: usize, max_iterations: usize, seed: u64) -> Vec<u32> {
    let mut rng = rng::rng_from(seed);
    let mut labels: Vec<u32> = (0..n as u32).collect();
    let mut order: Vec<usize> = (0..n).collect();
    // Scratch accumulators stamped per visit; labels live in 0..n.
    let mut support = vec![0f64; n];
    let mut stamp = vec![0u64; n];
    let mut epoch = 0u64;
    let mut touched: Vec<u32> = Vec::new();
    let mut ties: Vec<u32> = Vec::new();
    for _ in 0..max_iterations {
        order.shuffle(&mut rng);
        let mut changed = false;
        for &u in &order {
            epoch += 1;
            touched.clear();
            for (v, w) in adj.neighbors(u) {
                let lbl = labels[v as usize];
                if stamp[lbl as usize] != epoch {
                    stamp[lbl as usize] = epoch;
                    support[lbl as usize] = 0.0;
                    touched.push(lbl);
                }
                support[lbl as usize] += w;
            }
            if touched.is_empty() {
                continue;
            }
            let mut best = f64::NEG_INFINITY;
            for &lbl in &touched {
                if support[lbl as usize] > best {
                    best = support[lbl as usize];
                }
            }
            // Repulsion rule: without strictly positive support, keep the
            // current label rather than adopting a hostile one.
            if best <= 0.0 {
                continue;
            }
            ties.clear();
            ties.extend(touched.iter().copied().filter(|&l| support[l as usize] == best));
            let winner = if ties.len() == 1 {
                ties[0]
            } else {
                ties.sort_unstable();
                ties[rng.random_range(0..ties.len())]
            };
            if winner != labels[u] {
                labels[u] = winner;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    labels
}

/// One seeded label-propagation run; returns a label per node.
///
/// Nodes start with unique labels and are visited in a seeded random order,
/// each adopting the label with the largest summed incident weight (ties
/// broken uniformly from the seeded stream, labels kept when the best
/// support is not positive), until a sweep changes nothing or the sweep
/// limit is reached.
pub fn label_propagation(graph: &PairingGraph, seed: u64) -> Vec<u32> {
    let adj = Adjacency::build(graph.nodes.len(), &graph.edges);
    propagate(&adj, graph.nodes.len(), graph.params.max_iterations, seed)
}

struct Dsu(Vec<u32>);

impl Dsu {
    fn new(n: usize) -> Self {
        Self((0..n as u32).collect())
    }
    fn find(&mut self, x: u32) -> u32 {
        let mut root = x;
        while self.0[root as usize] != root {
            root = self.0[root as usize];
        }
        let mut cur = x;
        while self.0[cur as usize] != root {
            let next = self.0[cur as usize];
            self.0[cur as usize] = root;
            cur = next;
        }
        root
    }
    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.0[ra.max(rb) as usize] = ra.min(rb);
        }
    }
}

/// Consensus clustering over `runs` label-propagation runs.
///
/// Pairs co-clustered in at least `agreement` runs define a co-assignment
/// graph whose connected components become clusters. A component holding two
/// detections of one image keeps the one with the larger total positive
/// incident weight; the other is evicted to a singleton.
pub fn consensus_clusters(
    graph: &PairingGraph,
    runs: usize,
    agreement: usize,
    seed: u64,
) -> ClusterSet {
    let n = graph.nodes.len();
    let adj = Adjacency::build(n, &graph.edges);
    let mut counts: HashMap<(u32, u32), u32> = HashMap::new();
    for run in 0..runs {
        let labels = propagate(
            &adj,
            n,
            graph.params.max_iterations,
            rng::derive_indexed(seed, "propagation-run", run as u64),
        );
        let mut groups: HashMap<u32, Vec<u32>> = HashMap::new();
        for (node, &lbl) in labels.iter().enumerate() {
            groups.entry(lbl).or_default().push(node as u32);
        }
        for members in groups.values() {
            for (p, &a) in members.iter().enumerate() {
                for &b in &members[p + 1..] {
                    *counts.entry((a.min(b), a.max(b)), ).or_insert(0) += 1;
                }
            }
        }
    }
    let mut dsu = Dsu::new(n);
    for (&(a, b), &c) in &counts {
        if c as usize >= agreement {
            dsu.union(a, b);
        }
    }
    let mut components: HashMap<u32, Vec<u32>> = HashMap::new();
    for node in 0..n as u32 {
        components.entry(dsu.find(node)).or_default().push(node);
    }

    // Support used by the same-image filter: total positive incident weight.
    let positive_support: Vec<f64> = (0..n)
        .map(|v| adj.neighbors(v).map(|(_, w)| w.max(0.0)).sum())
        .collect();
    let mut clusters: Vec<Vec<u32>> = Vec::new();
    for (_, members) in components {
        let mut per_image: HashMap<&str, Vec<u32>> = HashMap::new();
        for &node in &members {
            per_image
                .entry(graph.nodes[node as usize].image_id.as_str())
                .or_default()
                .push(node);
        }
        let mut kept = Vec::new();
        for (_, mut nodes) in per_image {
            nodes.sort_by(|&a, &b| {
                positive_support[b as usize]
                    .partial_cmp(&positive_support[a as usize])
                    .unwrap()
                    .then(a.cmp(&b))
            });
            kept.push(nodes[0]);
            for &evicted in &nodes[1..] {
                clusters.push(vec![evicted]);
            }
        }
        clusters.push(kept);
    }

    let mut named: Vec<Vec<String>> = clusters
        .into_iter()
        .map(|c| {
            let mut ids: Vec<String> = c
                .into_iter()
                .map(|node| graph.nodes[node as usize].detection_id.clone())
                .collect();
            ids.sort();
            ids
        })
        .collect();
    named.sort();
    ClusterSet { clusters: named, run_count: runs, agreement_threshold: agreement }
}

/// Drop clusters with fewer than `min_views` members.
pub fn filter_small_clusters(set: &ClusterSet, min_views: usize) -> ClusterSet {
    ClusterSet {
        clusters: set.clusters.iter().filter(|c| c.len() >= min_views).cloned().collect(),
        run_count: set.run_count,
        agreement_threshold: set.agreement_threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};

    fn lookat_camera(id: &str, center: Vector3<f64>) -> Camera {
        let fwd = (-center).normalize();
        let x = Vector3::new(0.0, 1.0, 0.0).cross(&fwd).normalize();
        let y = fwd.cross(&x);
        let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), fwd.transpose()]);
        Camera::new(id, 10_000.0, 10_000.0, 2048.0, 1500.0, r, center, 4096.0, 3000.0).unwrap()
    }

    fn rig2() -> (Camera, Camera) {
        (
            lookat_camera("a", Vector3::new(-400.0, 60.0, 2500.0)),
            lookat_camera("b", Vector3::new(390.0, -80.0, 2510.0)),
        )
    }

    fn box_around(cam: &Camera, id: &str, world: &Vector3<f64>, half: f64) -> BoundingBox {
        let p = cam.project(world).unwrap();
        BoundingBox::new(
            cam.id.clone(),
            id,
            p.x - half,
            p.y - half,
            p.x + half,
            p.y + half,
        )
        .unwrap()
    }

    #[test]
    fn sampled_points_stay_inside_the_closed_box() {
        let bbox = BoundingBox::new("i", "d", 5.0, 8.0, 9.0, 20.0).unwrap();
        let pts = sample_box_points(&bbox, 20, 99);
        assert_eq!(pts.len(), 20);
        assert!(pts.iter().all(|p| bbox.contains(p)));
        assert_eq!(pts, sample_box_points(&bbox, 20, 99), "same seed, same samples");
        assert_ne!(pts, sample_box_points(&bbox, 20, 100));
    }

    #[test]
    fn edge_weight_is_symmetric_and_high_for_true_matches() {
        let (ca, cb) = rig2();
        let f_ab = fundamental_matrix(&ca, &cb).unwrap();
        let f_ba = f_ab.transpose();
        let world = Vector3::new(55.0, -30.0, 10.0);
        let box_a = box_around(&ca, "da", &world, 40.0);
        let box_b = box_around(&cb, "db", &world, 40.0);
        let w_ab = edge_weight(&box_a, &box_b, &f_ab, &f_ba, 20, 7);
        let w_ba = edge_weight(&box_b, &box_a, &f_ba, &f_ab, 20, 7);
        assert_eq!(w_ab, w_ba, "weight must not depend on argument order");
        assert!(w_ab >= 0.9, "true-match weight {w_ab}");
    }

    #[test]
    fn edge_weight_is_low_for_distant_spikes() {
        let (ca, cb) = rig2();
        let f_ab = fundamental_matrix(&ca, &cb).unwrap();
        let f_ba = f_ab.transpose();
        let mut below = 0;
        let trials = 40;
        for t in 0..trials {
            let mut r = rng::rng_from(rng::derive_indexed(11, "trial", t));
            let p1 = Vector3::new(r.random_range(-300.0..300.0), r.random_range(-250.0..250.0), 0.0);
            // Second spike 300 mm away in a random direction.
            let ang = r.random_range(0.0..std::f64::consts::TAU);
            let p2 = p1 + Vector3::new(300.0 * ang.cos(), 300.0 * ang.sin(), 0.0);
            let box_a = box_around(&ca, "da", &p1, 8.0);
            let box_b = box_around(&cb, "db", &p2, 8.0);
            if edge_weight(&box_a, &box_b, &f_ab, &f_ba, 20, t) < 0.75 {
                below += 1;
            }
        }
        assert!(below as f64 >= 0.95 * trials as f64, "only {below}/{trials} below threshold");
    }

    #[test]
    fn graph_classifies_matches_misses_and_same_image_pairs() {
        let (ca, cb) = rig2();
        let s1 = Vector3::new(-80.0, 120.0, 0.0);
        let s2 = Vector3::new(200.0, -150.0, 0.0);
        let detections = vec![
            box_around(&ca, "a1", &s1, 30.0),
            box_around(&ca, "a2", &s2, 30.0),
            box_around(&cb, "b1", &s1, 30.0),
            box_around(&cb, "b2", &s2, 30.0),
        ];
        let params = PairingParams::default();
        let graph = build_graph(&detections, &[ca, cb], &params, 13).unwrap();
        let find = |a: &str, b: &str| {
            graph.edges.iter().find(|e| {
                let (ea, eb) = (
                    &graph.nodes[e.a as usize].detection_id,
                    &graph.nodes[e.b as usize].detection_id,
                );
                (ea == a && eb == b) || (ea == b && eb == a)
            })
        };
        assert!(find("a1", "b1").unwrap().weight > params.tau);
        assert!(find("a2", "b2").unwrap().weight > params.tau);
        assert_eq!(find("a1", "a2").unwrap().weight, params.w_same_image);
        assert_eq!(find("b1", "b2").unwrap().weight, params.w_same_image);
        for e in &graph.edges {
            assert!(
                e.weight > params.tau || e.weight == params.w_miss || e.weight == params.w_same_image,
                "no edge may carry a weight in (0, tau]: {e:?}"
            );
        }
    }

    #[test]
    fn unknown_image_is_rejected() {
        let (ca, _) = rig2();
        let det = BoundingBox::new("ghost", "d", 0.0, 0.0, 1.0, 1.0).unwrap();
        let res = build_graph(&[det], &[ca], &PairingParams::default(), 1);
        assert!(matches!(res, Err(PairingError::UnknownImage { .. })));
    }

    /// Hand-built triangle: +1, +1 and a -5 repulsive pair. The oracle walks
    /// every labeling reachable from the unique-label start under any visit
    /// order and tie-break, keeps the fixed points, and requires that the
    /// repulsive pair is separated in all of them.
    #[test]
    fn repulsive_pair_never_shares_a_label() {
        let nodes: Vec<BoundingBox> = ["a", "b", "c"]
            .iter()
            .enumerate()
            .map(|(i, id)| {
                BoundingBox::new(format!("img{i}"), *id, 0.0, 0.0, 1.0, 1.0).unwrap()
            })
            .collect();
        let edges = vec![
            Edge { a: 0, b: 1, weight: 1.0 },
            Edge { a: 1, b: 2, weight: 1.0 },
            Edge { a: 0, b: 2, weight: -5.0 },
        ];
        let graph = PairingGraph { nodes, edges, params: PairingParams::default() };

        // One update of node `u`: labels it could move to (or keep).
        let weights = [[0.0, 1.0, -5.0], [1.0, 0.0, 1.0], [-5.0, 1.0, 0.0]];
        let updates = |l: &[usize; 3], u: usize| -> Vec<usize> {
            let mut support = [f64::NEG_INFINITY; 3];
            for v in 0..3 {
                if v != u {
                    let s = &mut support[l[v]];
                    if s.is_infinite() {
                        *s = 0.0;
                    }
                    *s += weights[u][v];
                }
            }
            let best = support.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if best <= 0.0 {
                return vec![l[u]];
            }
            (0..3).filter(|&lbl| support[lbl] == best).collect()
        };
        // BFS over all states reachable from the unique-label start.
        let mut reachable = vec![[0usize, 1, 2]];
        let mut queue = vec![[0usize, 1, 2]];
        while let Some(state) = queue.pop() {
            for u in 0..3 {
                for lbl in updates(&state, u) {
                    let mut next = state;
                    next[u] = lbl;
                    if !reachable.contains(&next) {
                        reachable.push(next);
                        queue.push(next);
                    }
                }
            }
        }
        let fixed: Vec<[usize; 3]> = reachable
            .into_iter()
            .filter(|s| (0..3).all(|u| updates(s, u).contains(&s[u])))
            .collect();
        assert!(!fixed.is_empty());
        for s in &fixed {
            assert_ne!(s[0], s[2], "reachable fixed point {s:?} merges the repulsive pair");
        }
        for seed in 0..20 {
            let labels = label_propagation(&graph, seed);
            assert_ne!(labels[0], labels[2], "seed {seed} merged the -5 pair: {labels:?}");
            let as_state = [labels[0] as usize, labels[1] as usize, labels[2] as usize];
            assert!(
                fixed.contains(&as_state),
                "seed {seed} returned a labeling outside the oracle's fixed points: {labels:?}"
            );
        }
    }

    #[test]
    fn propagation_merges_positive_cliques() {
        let nodes: Vec<BoundingBox> = (0..6)
            .map(|i| BoundingBox::new(format!("img{i}"), format!("d{i}"), 0.0, 0.0, 1.0, 1.0).unwrap())
            .collect();
        let mut edges = Vec::new();
        for group in [[0u32, 1, 2], [3, 4, 5]] {
            for p in 0..3 {
                for q in (p + 1)..3 {
                    edges.push(Edge { a: group[p], b: group[q], weight: 1.0 });
                }
            }
        }
        edges.push(Edge { a: 2, b: 3, weight: -2.0 });
        let graph = PairingGraph { nodes, edges, params: PairingParams::default() };
        let labels = label_propagation(&graph, 5);
        assert_eq!(labels[0], labels[1]);
        assert_eq!(labels[1], labels[2]);
        assert_eq!(labels[3], labels[4]);
        assert_eq!(labels[4], labels[5]);
        assert_ne!(labels[0], labels[3]);
    }

    #[test]
    fn consensus_keeps_the_stronger_same_image_detection() {
        // a1 and a2 share an image; b1 links to both, more strongly to a1.
        let nodes = vec![
            BoundingBox::new("A", "a1", 0.0, 0.0, 1.0, 1.0).unwrap(),
            BoundingBox::new("A", "a2", 2.0, 2.0, 3.0, 3.0).unwrap(),
            BoundingBox::new("B", "b1", 0.0, 0.0, 1.0, 1.0).unwrap(),
        ];
        let edges = vec![
            Edge { a: 0, b: 2, weight: 1.0 },
            Edge { a: 1, b: 2, weight: 0.9 },
            Edge { a: 0, b: 1, weight: -5.0 },
        ];
        let graph = PairingGraph { nodes, edges, params: PairingParams::default() };
        let set = consensus_clusters(&graph, 3, 2, 123);
        assert!(set.clusters.contains(&vec!["a2".to_string()]), "clusters: {:?}", set.clusters);
        assert!(
            set.clusters.iter().any(|c| c.contains(&"a1".to_string()) && c.contains(&"b1".to_string()))
                || set.clusters.contains(&vec!["a1".to_string()]),
            "clusters: {:?}",
            set.clusters
        );
        let every: usize = set.clusters.iter().map(|c| c.len()).sum();
        assert_eq!(every, 3, "every detection appears exactly once");
    }

    #[test]
    fn consensus_is_deterministic_for_a_seed() {
        let (ca, cb) = rig2();
        let mut detections = Vec::new();
        for (i, y) in [-200.0, -60.0, 90.0, 230.0].iter().enumerate() {
            let world = Vector3::new(40.0 * i as f64 - 60.0, *y, 0.0);
            detections.push(box_around(&ca, &format!("a{i}"), &world, 25.0));
            detections.push(box_around(&cb, &format!("b{i}"), &world, 25.0));
        }
        let params = PairingParams::default();
        let graph = build_graph(&detections, &[ca, cb], &params, 21).unwrap();
        let c1 = consensus_clusters(&graph, 3, 2, 55);
        let c2 = consensus_clusters(&graph, 3, 2, 55);
        assert_eq!(c1, c2);
        for i in 0..4 {
            let (a, b) = (format!("a{i}"), format!("b{i}"));
            assert!(
                c1.clusters.iter().any(|c| c.contains(&a) && c.contains(&b)),
                "pair {i} not co-clustered: {:?}",
                c1.clusters
            );
        }
    }

    #[test]
    fn small_clusters_are_filtered() {
        let set = ClusterSet {
            clusters: vec![
                vec!["a".into(), "b".into(), "c".into()],
                vec!["d".into()],
                vec!["e".into(), "f".into()],
            ],
            run_count: 3,
            agreement_threshold: 2,
        };
        let kept = filter_small_clusters(&set, 2);
        assert_eq!(kept.clusters.len(), 2);
        assert!(kept.clusters.iter().all(|c| c.len() >= 2));
    }
}
