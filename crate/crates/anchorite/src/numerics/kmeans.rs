//! Lloyd's k-means clustering with seeded, fully deterministic behavior.
//!
//! Centroids are initialized by uniform sampling without replacement from
//! the input set; empty clusters are re-seeded with the sample farthest from
//! its currently assigned centroid. Besides centroids and assignments, the
//! result carries a per-cluster *representative*: the in-cluster sample
//! closest to the centroid, which callers use to anchor concrete entities
//! (e.g. integration points) to clusters.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::NumericsError;

/// Result of a [`kmeans`] run.
#[derive(Debug, Clone)]
pub struct ClusterResult {
    /// Cluster centroids in sample space.
    pub centroids: Vec<DVector<f64>>,
    /// For each sample, the index of the cluster it belongs to.
    pub assignment: Vec<usize>,
    /// For each cluster, the index of the in-cluster sample nearest to the
    /// centroid (lowest index wins ties).
    pub representatives: Vec<usize>,
}

impl ClusterResult {
    /// Sum of squared distances from each sample to its assigned centroid.
    pub fn objective(&self, samples: &[DVector<f64>]) -> f64 {
        samples
            .iter()
            .zip(&self.assignment)
            .map(|(s, &c)| (s - &self.centroids[c]).norm_squared())
            .sum()
    }
}

/// Clusters `samples` into `k` groups with at most `max_iter` Lloyd
/// iterations. Deterministic for a fixed `seed`.
pub fn kmeans(
    samples: &[DVector<f64>],
    k: usize,
    seed: u64,
    max_iter: usize,
) -> Result<ClusterResult, NumericsError> {
    let n = samples.len();
    if k == 0 || n < k {
        return Err(NumericsError::TooFewSamples { k: k.max(1), n });
    }
    let dim = samples[0].len();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<DVector<f64>> = rand::seq::index::sample(&mut rng, n, k)
        .iter()
        .map(|i| samples[i].clone())
        .collect();

    let mut assignment = assign(samples, &centroids);
    for _ in 0..max_iter {
        // Means of the current assignment.
        let mut sums = vec![DVector::<f64>::zeros(dim); k];
        let mut counts = vec![0usize; k];
        for (s, &c) in samples.iter().zip(&assignment) {
            sums[c] += s;
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = &sums[c] / counts[c] as f64;
            }
        }
        // Re-seed empty clusters with the sample farthest from its own
        // centroid so no cluster degenerates.
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = (&samples[a] - &centroids[assignment[a]]).norm_squared();
                        let db = (&samples[b] - &centroids[assignment[b]]).norm_squared();
                        da.total_cmp(&db)
                    })
                    .expect("non-empty sample set");
                centroids[c] = samples[far].clone();
                assignment[far] = c;
            }
        }

        let next = assign(samples, &centroids);
        let stable = next == assignment;
        assignment = next;
        if stable {
            break;
        }
    }

    let representatives = (0..k)
        .map(|c| {
            (0..n)
                .filter(|&i| assignment[i] == c)
                .min_by(|&a, &b| {
                    let da = (&samples[a] - &centroids[c]).norm_squared();
                    let db = (&samples[b] - &centroids[c]).norm_squared();
                    da.total_cmp(&db)
                })
                .expect("every cluster is non-empty after re-seeding")
        })
        .collect();

    Ok(ClusterResult { centroids, assignment, representatives })
}

/// Nearest-centroid assignment; ties broken toward the lowest cluster index.
fn assign(samples: &[DVector<f64>], centroids: &[DVector<f64>]) -> Vec<usize> {
    samples
        .iter()
        .map(|s| {
            (0..centroids.len())
                .min_by(|&a, &b| {
                    let da = (s - &centroids[a]).norm_squared();
                    let db = (s - &centroids[b]).norm_squared();
                    da.total_cmp(&db)
                })
                .expect("at least one centroid")
        })
        .collect()
}
