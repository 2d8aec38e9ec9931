//! Seeded Lloyd k-means used to train the IVF coarse quantizer.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const MAX_ITERATIONS: usize = 25;
pub const CONVERGENCE_EPS: f64 = 1e-6;

pub fn l2_squared(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum()
}

/// Index of the nearest centroid (L2), lowest index on ties.
pub fn nearest(centroids: &[Vec<f32>], v: &[f32]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = l2_squared(c, v);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// Trains `k` centroids over `points`. Requires `1 <= k <= points.len()`.
pub fn train(points: &[Vec<f32>], k: usize, seed: u64) -> Vec<Vec<f32>> {
    assert!(k >= 1 && k <= points.len(), "k out of range");
    let dim = points[0].len();
    let mut centroids = initial_centroids(points, k, seed);
    let mut assignment = vec![0usize; points.len()];

    for _ in 0..MAX_ITERATIONS {
        for (a, p) in assignment.iter_mut().zip(points) {
            *a = nearest(&centroids, p);
        }

        let mut sums = vec![vec![0f64; dim]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignment.iter().zip(points) {
            counts[a] += 1;
            for (s, &x) in sums[a].iter_mut().zip(p) {
                *s += x as f64;
            }
        }

        let mut next: Vec<Vec<f32>> = sums
            .iter()
            .zip(&counts)
            .zip(&centroids)
            .map(|((s, &n), old)| {
                if n == 0 {
                    old.clone()
                } else {
                    s.iter().map(|x| (x / n as f64) as f32).collect()
                }
            })
            .collect();

        for empty in 0..k {
            if counts[empty] != 0 {
                continue;
            }
            // Largest cluster, lowest index on ties.
            let largest = (0..k).max_by(|&a, &b| counts[a].cmp(&counts[b]).then(b.cmp(&a))).unwrap();
            let far = (0..points.len())
                .filter(|&i| assignment[i] == largest)
                .max_by(|&a, &b| {
                    l2_squared(&points[a], &next[largest])
                        .total_cmp(&l2_squared(&points[b], &next[largest]))
                        .then(b.cmp(&a))
                });
            if let Some(far) = far {
                next[empty] = points[far].clone();
                assignment[far] = empty;
                counts[largest] -= 1;
                counts[empty] += 1;
            }
        }

        let movement = centroids
            .iter()
            .zip(&next)
            .map(|(a, b)| l2_squared(a, b).sqrt())
            .fold(0.0, f64::max);
        centroids = next;
        if movement < CONVERGENCE_EPS {
            break;
        }
    }
    centroids
}

/// Seeded sample of `k` points, preferring distinct vectors.
fn initial_centroids(points: &[Vec<f32>], k: usize, seed: u64) -> Vec<Vec<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut rng);

    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut duplicates = Vec::new();
    for &i in &order {
        if chosen.len() == k {
            break;
        }
        if chosen.iter().any(|&c| points[c] == points[i]) {
            duplicates.push(i);
        } else {
            chosen.push(i);
        }
    }
    chosen.extend(duplicates.into_iter().take(k - chosen.len()));
    chosen.into_iter().map(|i| points[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_equal_n_converges_to_the_points() {
        let points: Vec<Vec<f32>> = (0..10).map(|i| vec![i as f32, (i * i) as f32 * 0.1]).collect();
        let mut cs = train(&points, 10, 3);
        cs.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(cs, points);
    }

    #[test]
    fn seeded_training_is_repeatable() {
        let points: Vec<Vec<f32>> = (0..200).map(|i| vec![(i % 17) as f32, (i % 5) as f32]).collect();
        assert_eq!(train(&points, 8, 42), train(&points, 8, 42));
    }

    #[test]
    fn separated_clusters_are_recovered() {
        let mut points = Vec::new();
        for i in 0..20 {
            let j = i as f32 * 0.01;
            points.push(vec![j, j]);
            points.push(vec![100.0 + j, 100.0 - j]);
        }
        let cs = train(&points, 2, 1);
        let a = nearest(&cs, &[0.0, 0.0]);
        let b = nearest(&cs, &[100.0, 100.0]);
        assert_ne!(a, b);
    }

    #[test]
    fn duplicate_points_do_not_leave_empty_clusters_unseeded() {
        let mut points = vec![vec![0.0, 0.0]; 6];
        points.push(vec![5.0, 5.0]);
        let cs = train(&points, 3, 9);
        assert_eq!(cs.len(), 3);
    }
}
