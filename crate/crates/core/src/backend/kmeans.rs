use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroid, recorded before
    /// every centroid update and once more at the end.
    pub inertia_history: Vec<f64>,
}

impl KMeans {
    pub fn inertia(&self) -> f64 {
        *self.inertia_history.last().unwrap()
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid (lowest index on ties) and its distance.
fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = dist2(x, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn plus_plus_init(data: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = data.len();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = data.iter().map(|x| dist2(x, &data[chosen[0]])).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 && u < d {
                    pick = i;
                    break;
                }
                u -= d;
            }
            pick
        } else {
            // Every point coincides with a chosen one.
            (0..n).find(|i| !chosen.contains(i)).unwrap()
        };
        chosen.push(next);
        for (i, x) in data.iter().enumerate() {
            d2[i] = d2[i].min(dist2(x, &data[next]));
        }
    }
    chosen.into_iter().map(|i| data[i].clone()).collect()
}

/// Lloyd's algorithm from a k-means++ start. Stops when assignments repeat
/// or after `max_iter` updates. A centroid left without points is moved to
/// the point farthest from its own centroid.
pub fn kmeans(data: &[Vec<f64>], k: usize, max_iter: usize, seed: u64) -> Result<KMeans> {
    let n = data.len();
    if k == 0 || n < k {
        return Err(Error::arg(format!("k-means needs 1 <= k <= N, got k = {k}, N = {n}")));
    }
    let d = data[0].len();
    if data.iter().any(|x| x.len() != d) {
        return Err(Error::dim("k-means: points have different dimensions"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(data, k, &mut rng);
    let mut assignments = vec![usize::MAX; n];
    let mut history = Vec::new();
    for _ in 0..max_iter.max(1) {
        let mut dists = vec![0.0; n];
        let mut changed = false;
        for (i, x) in data.iter().enumerate() {
            let (j, dd) = nearest(x, &centroids);
            changed |= assignments[i] != j;
            assignments[i] = j;
            dists[i] = dd;
        }
        history.push(dists.iter().sum());
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (x, &j) in data.iter().zip(&assignments) {
            counts[j] += 1;
            sums[j].iter_mut().zip(x).for_each(|(s, v)| *s += v);
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
            } else {
                let far = (0..n).max_by(|&a, &b| dists[a].total_cmp(&dists[b])).unwrap();
                log::debug!("k-means: cluster {j} empty, reseeding from point {far}");
                centroids[j] = data[far].clone();
                dists[far] = 0.0;
            }
        }
    }
    let final_inertia = data
        .iter()
        .zip(&assignments)
        .map(|(x, &j)| dist2(x, &centroids[j]))
        .sum();
    history.push(final_inertia);
    Ok(KMeans {
        centroids,
        assignments,
        inertia_history: history,
    })
}
