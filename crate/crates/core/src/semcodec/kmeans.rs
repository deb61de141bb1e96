//! Deterministic k-means with k-means++ seeding.
//!
//! Ties go to the lowest centroid index in assignment and to the lowest
//! point index in re-seeding. Distances accumulate in `f64` in component
//! order, so results depend only on the feature order, `k`, and the seed.

use crate::rng::SimRng;

use super::CodecError;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansConfig {
    pub k: usize,
    pub max_iters: usize,
    /// Stop once the relative drop in total distortion falls below this.
    pub tol: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centroids: Vec<Vec<f32>>,
    /// Index of the nearest returned centroid for each input feature.
    pub assignments: Vec<usize>,
    /// Sum of squared distances to the assigned centroids.
    pub distortion: f64,
    pub iterations: usize,
    /// Set when fewer than `k` distinct centroids came out, which happens
    /// whenever `k` exceeds the number of distinct input points.
    pub duplicate_centroids: bool,
}

pub fn squared_distance(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - f64::from(y);
            d * d
        })
        .sum()
}

fn squared_distance_f64(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = f64::from(x) - y;
            d * d
        })
        .sum()
}

/// Index and squared distance of the nearest centroid, lowest index on ties.
pub fn nearest<C: AsRef<[f32]>>(centroids: &[C], x: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance(x, c.as_ref());
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn nearest_f64(centroids: &[Vec<f64>], x: &[f32]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, c) in centroids.iter().enumerate() {
        let d = squared_distance_f64(x, c);
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

fn seed_plus_plus(features: &[Vec<f32>], k: usize, rng: &mut SimRng) -> Vec<Vec<f64>> {
    let n = features.len();
    let to_f64 = |f: &Vec<f32>| f.iter().map(|&v| f64::from(v)).collect::<Vec<f64>>();

    let first = rng.below(n);
    let mut centroids = vec![to_f64(&features[first])];
    let mut d2: Vec<f64> = features
        .iter()
        .map(|f| squared_distance_f64(f, &centroids[0]))
        .collect();

    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let threshold = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > threshold {
                    pick = Some(i);
                    break;
                }
            }
            // Rounding can leave the threshold past the final sum.
            pick.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap_or(0))
        } else {
            rng.below(n)
        };
        let c = to_f64(&features[pick]);
        for (w, f) in d2.iter_mut().zip(features) {
            *w = w.min(squared_distance_f64(f, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Lloyd iterations from a k-means++ start.
pub fn train_codebook(features: &[Vec<f32>], cfg: &KMeansConfig) -> Result<KMeansResult, CodecError> {
    if features.is_empty() {
        return Err(CodecError::EmptyFeatures);
    }
    if cfg.k == 0 {
        return Err(CodecError::InvalidConfig("k must be at least 1".into()));
    }
    let dim = features[0].len();
    if let Some(bad) = features.iter().find(|f| f.len() != dim) {
        return Err(CodecError::DimensionMismatch {
            expected: dim,
            got: bad.len(),
        });
    }

    let mut rng = SimRng::new(cfg.seed);
    let mut centroids = seed_plus_plus(features, cfg.k, &mut rng);
    let mut assignments = vec![0usize; features.len()];
    let mut dists = vec![0.0f64; features.len()];
    let mut prev = f64::INFINITY;
    let mut iterations = 0;

    for _ in 0..cfg.max_iters {
        iterations += 1;
        let mut total = 0.0;
        for (i, f) in features.iter().enumerate() {
            let (a, d) = nearest_f64(&centroids, f);
            assignments[i] = a;
            dists[i] = d;
            total += d;
        }
        if total == 0.0 || (prev.is_finite() && prev - total < cfg.tol * prev) {
            break;
        }
        prev = total;

        let mut sums = vec![vec![0.0f64; dim]; cfg.k];
        let mut counts = vec![0usize; cfg.k];
        for (f, &a) in features.iter().zip(&assignments) {
            counts[a] += 1;
            for (s, &v) in sums[a].iter_mut().zip(f) {
                *s += f64::from(v);
            }
        }
        for (j, (sum, &count)) in sums.into_iter().zip(&counts).enumerate() {
            if count > 0 {
                centroids[j] = sum.into_iter().map(|s| s / count as f64).collect();
            }
        }
        // Empty clusters take the point currently worst served.
        for j in (0..cfg.k).filter(|&j| counts[j] == 0) {
            let mut far = None::<(usize, f64)>;
            for (i, &d) in dists.iter().enumerate() {
                if far.is_none_or(|(_, fd)| d > fd) {
                    far = Some((i, d));
                }
            }
            if let Some((i, _)) = far {
                centroids[j] = features[i].iter().map(|&v| f64::from(v)).collect();
                dists[i] = -1.0;
            }
        }
    }

    let centroids: Vec<Vec<f32>> = centroids
        .into_iter()
        .map(|c| c.into_iter().map(|v| v as f32).collect())
        .collect();
    let mut distortion = 0.0;
    for (i, f) in features.iter().enumerate() {
        let (a, d) = nearest(&centroids, f);
        assignments[i] = a;
        distortion += d;
    }
    let distinct = {
        let mut sorted: Vec<&Vec<f32>> = centroids.iter().collect();
        sorted.sort_by(|a, b| {
            a.iter()
                .zip(b.iter())
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        sorted.dedup();
        sorted.len()
    };

    Ok(KMeansResult {
        duplicate_centroids: distinct < cfg.k,
        centroids,
        assignments,
        distortion,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: usize, seed: u64) -> KMeansConfig {
        KMeansConfig {
            k,
            max_iters: 100,
            tol: 1e-6,
            seed,
        }
    }

    #[test]
    fn single_cluster_is_the_mean() {
        let mut rng = SimRng::new(1);
        let feats: Vec<Vec<f32>> = (0..20)
            .map(|_| (0..8).map(|_| rng.uniform() as f32).collect())
            .collect();
        let r = train_codebook(&feats, &cfg(1, 3)).unwrap();
        for d in 0..8 {
            let mean = feats.iter().map(|f| f64::from(f[d])).sum::<f64>() / 20.0;
            assert!((f64::from(r.centroids[0][d]) - mean).abs() < 1e-6);
        }
    }

    #[test]
    fn planted_two_clusters() {
        // Two tight clusters around 0.2 and 0.8. The optimal 2-clustering,
        // found by enumerating every bipartition of the 8 points, splits
        // them by cluster; its centroids are the cluster means.
        let offsets = [-0.01f32, 0.0, 0.01, 0.005];
        let mut feats = Vec::new();
        for base in [0.2f32, 0.8] {
            for o in offsets {
                feats.push(vec![base + o; 4]);
            }
        }
        let mut best = (f64::INFINITY, 0u32);
        for mask in 1u32..(1 << 8) - 1 {
            let mut cost = 0.0;
            for side in [true, false] {
                let members: Vec<&Vec<f32>> = feats
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| (mask >> i & 1 == 1) == side)
                    .map(|(_, f)| f)
                    .collect();
                let mean: Vec<f64> = (0..4)
                    .map(|d| members.iter().map(|f| f64::from(f[d])).sum::<f64>() / members.len() as f64)
                    .collect();
                cost += members.iter().map(|f| squared_distance_f64(f, &mean)).sum::<f64>();
            }
            if cost < best.0 {
                best = (cost, mask);
            }
        }
        assert!(best.1 == 0x0F || best.1 == 0xF0);

        let r = train_codebook(&feats, &cfg(2, 9)).unwrap();
        let mut means: Vec<f32> = r.centroids.iter().map(|c| c[0]).collect();
        means.sort_by(f32::total_cmp);
        assert!((means[0] - 0.20125).abs() < 1e-6);
        assert!((means[1] - 0.80125).abs() < 1e-6);
        assert!((r.distortion - best.0).abs() < 1e-9);
    }

    #[test]
    fn deterministic_given_seed() {
        let mut rng = SimRng::new(2);
        let feats: Vec<Vec<f32>> = (0..50)
            .map(|_| (0..16).map(|_| rng.uniform() as f32).collect())
            .collect();
        let a = train_codebook(&feats, &cfg(5, 77)).unwrap();
        let b = train_codebook(&feats, &cfg(5, 77)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn more_clusters_than_points_flags_duplicates() {
        let feats = vec![vec![0.1f32; 4], vec![0.9f32; 4]];
        let r = train_codebook(&feats, &cfg(4, 1)).unwrap();
        assert_eq!(r.centroids.len(), 4);
        assert!(r.duplicate_centroids);
        assert_eq!(r.distortion, 0.0);
    }

    #[test]
    fn doubling_k_never_hurts_on_planted_data() {
        // Four well-separated clusters: k=4 recovers them exactly, k=2 cannot.
        let mut rng = SimRng::new(4);
        let mut feats = Vec::new();
        for base in [0.1f32, 0.35, 0.6, 0.85] {
            for _ in 0..6 {
                feats.push((0..8).map(|_| base + 0.01 * rng.uniform() as f32).collect());
            }
        }
        for seed in 0..5 {
            let d2 = train_codebook(&feats, &cfg(2, seed)).unwrap().distortion;
            let d4 = train_codebook(&feats, &cfg(4, seed)).unwrap().distortion;
            assert!(d4 <= d2, "seed {seed}: {d4} > {d2}");
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(train_codebook(&[], &cfg(1, 0)), Err(CodecError::EmptyFeatures)));
        assert!(matches!(
            train_codebook(&[vec![0.0; 2], vec![0.0; 3]], &cfg(1, 0)),
            Err(CodecError::DimensionMismatch { .. })
        ));
    }
}
