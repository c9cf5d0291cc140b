//! Keypoint correspondence by mutual nearest neighbor and Lowe's ratio test
//! on L2 descriptor distance.

use crate::provider::KeypointSet;

fn sq_dist(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum()
}

/// Pairs `(query index, reference index)`, sorted by query index. A pair is
/// kept when each keypoint is the other's nearest neighbor and the nearest
/// reference distance is below `ratio` times the second nearest. With a
/// single reference keypoint the ratio test is skipped.
pub fn match_keypoints(query: &KeypointSet, reference: &KeypointSet, ratio: f64) -> Vec<(usize, usize)> {
    if query.is_empty() || reference.is_empty() {
        return Vec::new();
    }
    if query.dim() != reference.dim() {
        log::warn!("descriptor dimensions differ ({} vs {}); no matches", query.dim(), reference.dim());
        return Vec::new();
    }
    let (n, m) = (query.len(), reference.len());
    let dist: Vec<f64> = (0..n)
        .flat_map(|i| (0..m).map(move |j| (i, j)))
        .map(|(i, j)| sq_dist(query.descriptor(i), reference.descriptor(j)))
        .collect();
    let mut best_query_for_ref = vec![(usize::MAX, f64::INFINITY); m];
    for i in 0..n {
        for j in 0..m {
            if dist[i * m + j] < best_query_for_ref[j].1 {
                best_query_for_ref[j] = (i, dist[i * m + j]);
            }
        }
    }
    let mut out = Vec::new();
    for i in 0..n {
        let row = &dist[i * m..(i + 1) * m];
        let mut first = (usize::MAX, f64::INFINITY);
        let mut second = f64::INFINITY;
        for (j, &d) in row.iter().enumerate() {
            if d < first.1 {
                second = first.1;
                first = (j, d);
            } else if d < second {
                second = d;
            }
        }
        let j = first.0;
        let passes_ratio = m == 1 || first.1.sqrt() < ratio * second.sqrt();
        if passes_ratio && best_query_for_ref[j].0 == i {
            out.push((i, j));
        }
    }
    out
}
