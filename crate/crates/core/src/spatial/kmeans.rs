use rand::Rng;

use super::{dist, SpatialError};

const MAX_ITER: usize = 100;
const TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub centers: Vec<[f64; 2]>,
    pub labels: Vec<usize>,
    pub iterations: usize,
}

fn nearest(p: &[f64; 2], centers: &[[f64; 2]]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(c, ctr)| (c, dist(p, ctr)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn plus_plus_init<R: Rng>(points: &[[f64; 2]], k: usize, rng: &mut R) -> Vec<[f64; 2]> {
    let mut centers = vec![points[rng.random_range(0..points.len())]];
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| nearest(p, &centers).1.powi(2))
            .collect();
        let total: f64 = d2.iter().sum();
        if total == 0.0 {
            // fewer distinct points than clusters; duplicates are repaired later
            centers.push(points[rng.random_range(0..points.len())]);
            continue;
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = points.len() - 1;
        for (i, w) in d2.iter().enumerate() {
            if target < *w {
                pick = i;
                break;
            }
            target -= w;
        }
        centers.push(points[pick]);
    }
    centers
}

/// Lloyd iterations from a k-means++ start. Empty clusters are re-seeded at
/// the point farthest from its current center.
pub fn kmeans<R: Rng>(
    points: &[[f64; 2]],
    k: usize,
    rng: &mut R,
) -> Result<KMeansResult, SpatialError> {
    let n = points.len();
    let mut centers = plus_plus_init(points, k, rng);
    let mut labels = vec![0usize; n];
    let mut repairs = 0;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        iterations += 1;
        for (l, p) in labels.iter_mut().zip(points) {
            *l = nearest(p, &centers).0;
        }
        let mut sums = vec![[0.0f64; 2]; k];
        let mut counts = vec![0usize; k];
        for (l, p) in labels.iter().zip(points) {
            sums[*l][0] += p[0];
            sums[*l][1] += p[1];
            counts[*l] += 1;
        }
        if let Some(empty) = counts.iter().position(|&c| c == 0) {
            repairs += 1;
            if repairs > k {
                return Err(SpatialError::Clustering(k));
            }
            let far = (0..n)
                .max_by(|&a, &b| {
                    let da = dist(&points[a], &centers[labels[a]]);
                    let db = dist(&points[b], &centers[labels[b]]);
                    da.total_cmp(&db).then(b.cmp(&a))
                })
                .expect("nonempty point set");
            centers[empty] = points[far];
            continue;
        }
        let mut shift = 0.0f64;
        for c in 0..k {
            let new = [sums[c][0] / counts[c] as f64, sums[c][1] / counts[c] as f64];
            shift = shift.max(dist(&new, &centers[c]));
            centers[c] = new;
        }
        if shift <= TOL {
            break;
        }
    }
    for (l, p) in labels.iter_mut().zip(points) {
        *l = nearest(p, &centers).0;
    }
    let mut counts = vec![0usize; k];
    for l in &labels {
        counts[*l] += 1;
    }
    if counts.contains(&0) {
        return Err(SpatialError::Clustering(repairs));
    }
    Ok(KMeansResult {
        centers,
        labels,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn recovers_separated_blobs() {
        let mut pts = Vec::new();
        for c in [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]] {
            for k in 0..4 {
                pts.push([c[0] + 0.1 * k as f64, c[1]]);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = kmeans(&pts, 3, &mut rng).unwrap();
        for blob in pts.chunks(4).enumerate().map(|(b, _)| b) {
            let l = r.labels[blob * 4];
            assert!(r.labels[blob * 4..blob * 4 + 4].iter().all(|x| *x == l));
        }
    }

    #[test]
    fn too_few_distinct_points_fails() {
        let pts = vec![[1.0, 1.0]; 5];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            kmeans(&pts, 3, &mut rng),
            Err(SpatialError::Clustering(_))
        ));
    }
}
