use std::collections::BTreeMap;

use super::CounterfactualRecord;

pub fn manhattan(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

/// Greedy geometric set cover with closed Manhattan balls of `radius`.
///
/// Repeatedly keeps the point whose ball covers the most still-uncovered
/// points (ties to the lowest index) until every point is covered. Returns
/// kept indices in ascending order.
pub fn greedy_cover(points: &[&[f64]], radius: f64) -> Vec<usize> {
    let n = points.len();
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| manhattan(points[i], points[j]) <= radius).collect())
        .collect();
    let mut gain: Vec<usize> = neighbors.iter().map(Vec::len).collect();
    let mut covered = vec![false; n];
    let mut remaining = n;
    let mut kept = Vec::new();
    while remaining > 0 {
        let best = (0..n)
            .max_by(|&a, &b| gain[a].cmp(&gain[b]).then(b.cmp(&a)))
            .expect("nonempty");
        kept.push(best);
        for &j in &neighbors[best] {
            if !covered[j] {
                covered[j] = true;
                remaining -= 1;
                for &k in &neighbors[j] {
                    gain[k] -= 1;
                }
            }
        }
    }
    kept.sort_unstable();
    kept
}

/// Drops near-duplicate records, covering each `(student, label)` group
/// separately in student feature space. Survivors keep their input order.
pub fn dedup_set_cover(records: Vec<CounterfactualRecord>, radius: f64) -> Vec<CounterfactualRecord> {
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        groups.entry((r.student, r.label)).or_default().push(i);
    }
    let mut keep = vec![false; records.len()];
    for members in groups.values() {
        let points: Vec<&[f64]> = members.iter().map(|&i| records[i].features.as_slice()).collect();
        for k in greedy_cover(&points, radius) {
            keep[members[k]] = true;
        }
    }
    records
        .into_iter()
        .zip(keep)
        .filter_map(|(r, k)| k.then_some(r))
        .collect()
}
