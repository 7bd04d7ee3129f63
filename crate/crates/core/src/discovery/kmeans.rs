//! Lloyd's K-means with k-means++ seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::DiscoveryError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmeansFit {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster index of every input point.
    pub assignments: Vec<usize>,
    /// Inertia after each assignment step.
    pub inertia_trace: Vec<f64>,
    /// True when the last iteration left every assignment unchanged.
    pub converged: bool,
}

impl KmeansFit {
    pub fn inertia(&self) -> f64 {
        self.inertia_trace.last().copied().unwrap_or(0.0)
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties go to the smallest index.
pub fn nearest(centroids: &[Vec<f64>], z: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(c, z);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn distinct_count(points: &[Vec<f64>], at_least: usize) -> usize {
    let mut seen: Vec<&Vec<f64>> = Vec::new();
    for p in points {
        if !seen.contains(&p) {
            seen.push(p);
            if seen.len() >= at_least {
                break;
            }
        }
    }
    seen.len()
}

/// k-means++: the first centre is uniform, each later one is drawn with
/// probability proportional to its squared distance from the chosen set.
fn plus_plus_init<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let mut r = rng.random::<f64>() * total;
        let mut pick = None;
        for (i, &d) in d2.iter().enumerate() {
            if d > 0.0 {
                pick = Some(i);
                if r < d {
                    break;
                }
                r -= d;
            }
        }
        let c = points[pick.expect("enough distinct points")].clone();
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(squared_distance(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = points
        .iter()
        .map(|p| {
            let (i, d) = nearest(centroids, p);
            inertia += d;
            i
        })
        .collect();
    (labels, inertia)
}

/// Fits `k` clusters. Stops when an assignment step changes nothing or after
/// `max_iters` assignment steps. A cluster left empty by an update is
/// re-seeded at the point farthest from its own centroid (lowest index on
/// ties) that is not already a centroid.
pub fn kmeans_fit(
    points: &[Vec<f64>],
    k: usize,
    seed: u64,
    max_iters: usize,
) -> Result<KmeansFit, DiscoveryError> {
    if k == 0 || points.len() < k {
        return Err(DiscoveryError::TooFewPoints {
            points: points.len(),
            k,
        });
    }
    let dim = points[0].len();
    for p in points {
        if p.len() != dim {
            return Err(DiscoveryError::Dimension {
                expected: dim,
                found: p.len(),
            });
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(DiscoveryError::NonFiniteInput);
        }
    }
    let distinct = distinct_count(points, k);
    if distinct < k {
        return Err(DiscoveryError::TooFewDistinct { distinct, k });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = plus_plus_init(points, k, &mut rng);
    let mut labels: Option<Vec<usize>> = None;
    let mut inertia_trace = Vec::new();
    let mut converged = false;
    for _ in 0..max_iters.max(1) {
        let (next, inertia) = assign(points, &centroids);
        inertia_trace.push(inertia);
        if labels.as_ref() == Some(&next) {
            converged = true;
            break;
        }
        let labels_now = labels.insert(next);
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &c) in points.iter().zip(labels_now.iter()) {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(p) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = points
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| !centroids.contains(p))
                    .map(|(i, p)| (i, squared_distance(p, &centroids[labels_now[i]])))
                    .fold(None::<(usize, f64)>, |best, (i, d)| match best {
                        Some((_, bd)) if bd >= d => best,
                        _ => Some((i, d)),
                    });
                if let Some((i, _)) = far {
                    centroids[c] = points[i].clone();
                }
            }
        }
    }
    let (assignments, _) = assign(points, &centroids);
    Ok(KmeansFit {
        centroids,
        assignments,
        inertia_trace,
        converged,
    })
}
