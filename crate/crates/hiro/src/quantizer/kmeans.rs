//! Recursive k-means over residuals, the unsupervised baseline hierarchy.

use rand::Rng;

use super::{argmax, sq_dist, QuantizerConfig, QuantizerModel};
use crate::error::Result;

/// Lloyd's algorithm with k-means++ seeding. Returns `(centroids, labels)`.
pub fn kmeans<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, max_iter: usize, rng: &mut R) -> (Vec<Vec<f64>>, Vec<usize>) {
    assert!(!points.is_empty() && k >= 1);
    let dim = points[0].len();
    let mut centroids: Vec<Vec<f64>> = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[next].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centroids.last().unwrap()));
        }
    }

    let nearest = |p: &[f64], cs: &[Vec<f64>]| -> usize {
        let neg: Vec<f64> = cs.iter().map(|c| -sq_dist(p, c)).collect();
        argmax(&neg)
    };
    let mut labels: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
    for _ in 0..max_iter {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
        let next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        if next == labels {
            break;
        }
        labels = next;
    }
    (centroids, labels)
}

/// Hierarchy built by clustering the points, subtracting the assigned
/// centroids and clustering the residuals again, level after level.
#[derive(Debug, Clone)]
pub struct RecursiveKMeans;

impl RecursiveKMeans {
    /// Fit `depth` levels of `k` centroids; the result encodes exactly like
    /// a trained quantizer with an identity projection.
    pub fn fit<R: Rng + ?Sized>(points: &[Vec<f64>], k: usize, depth: usize, rng: &mut R) -> Result<QuantizerModel> {
        let mut residuals = points.to_vec();
        let mut codebooks = Vec::with_capacity(depth);
        for _ in 0..depth {
            let (centroids, labels) = kmeans(&residuals, k, 100, rng);
            for (r, &l) in residuals.iter_mut().zip(&labels) {
                for (x, c) in r.iter_mut().zip(&centroids[l]) {
                    *x -= c;
                }
            }
            codebooks.push(centroids);
        }
        QuantizerModel::from_codebooks(codebooks, QuantizerConfig::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn separates_obvious_clusters() {
        let pts: Vec<Vec<f64>> = (0..20)
            .map(|i| if i < 10 { vec![i as f64 * 0.01, 0.0] } else { vec![10.0 + i as f64 * 0.01, 5.0] })
            .collect();
        let (_, labels) = kmeans(&pts, 2, 50, &mut substream(1, "km"));
        assert!(labels[..10].iter().all(|&l| l == labels[0]));
        assert!(labels[10..].iter().all(|&l| l == labels[10]));
        assert_ne!(labels[0], labels[10]);
    }

    #[test]
    fn recursive_levels_reduce_residual() {
        let mut rng = substream(2, "pts");
        let pts: Vec<Vec<f64>> = (0..60).map(|_| (0..3).map(|_| rng.random::<f64>()).collect()).collect();
        let model = RecursiveKMeans::fit(&pts, 3, 3, &mut substream(2, "km")).unwrap();
        let err = |depth: usize| -> f64 {
            pts.iter()
                .map(|p| {
                    let path = model.encode(p);
                    sq_dist(p, &model.path_embedding(&path.prefix(depth)))
                })
                .sum()
        };
        assert!(err(2) < err(1) && err(3) < err(2));
    }
}
