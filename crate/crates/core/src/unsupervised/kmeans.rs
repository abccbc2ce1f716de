use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::UnitSequence;
use crate::error::{check_len, Error, Result};
use crate::features::FrameFeatures;
use crate::io::{check_version, read_json, write_json};

pub const DEFAULT_CLUSTERS: usize = 200;
const MAX_ITERATIONS: usize = 300;
const TOLERANCE: f64 = 1e-6;

/// Nearest-centroid quantizer over frame features.
#[derive(Debug, Clone, PartialEq)]
pub struct KMeansQuantizer {
    centroids: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct KMeansFit {
    pub quantizer: KMeansQuantizer,
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

impl KMeansQuantizer {
    pub fn new(centroids: Vec<Vec<f64>>) -> Result<Self> {
        if centroids.len() < 2 {
            return Err(Error::invalid("quantizer needs at least 2 centroids"));
        }
        let dim = centroids[0].len();
        if dim == 0 {
            return Err(Error::invalid("centroids must be non-empty"));
        }
        for c in &centroids {
            check_len(dim, c.len())?;
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::invalid("non-finite centroid"));
            }
        }
        for i in 0..centroids.len() {
            for j in 0..i {
                if centroids[i] == centroids[j] {
                    return Err(Error::invalid(format!("centroids {j} and {i} coincide")));
                }
            }
        }
        Ok(Self { centroids })
    }

    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids[0].len()
    }

    pub fn centroids(&self) -> &[Vec<f64>] {
        &self.centroids
    }

    /// Index of the nearest centroid; ties go to the lowest index.
    pub fn nearest(&self, x: &[f64]) -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.centroids.iter().enumerate() {
            let d = sq_dist(x, c);
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }

    /// Maps each frame to its nearest unit, optionally collapsing runs of
    /// the same unit.
    pub fn quantize(&self, f: &FrameFeatures, dedup: bool) -> Result<UnitSequence> {
        check_len(self.dim(), f.dim())?;
        let mut units: Vec<u32> = Vec::with_capacity(f.n_frames());
        for row in f.rows() {
            let u = self.nearest(row).0 as u32;
            if !(dedup && units.last() == Some(&u)) {
                units.push(u);
            }
        }
        UnitSequence::new(units, self.k())
    }
}

/// k-means++ seeding followed by Lloyd iterations until the largest centroid
/// shift drops below 1e-6 or 300 iterations have run. Clusters that empty
/// out are reseeded to the frame farthest from its current centroid.
pub fn kmeans_fit(frames: &FrameFeatures, k: usize, seed: u64) -> Result<KMeansFit> {
    let n = frames.n_frames();
    if k < 2 {
        return Err(Error::invalid("K must be at least 2"));
    }
    if n < k {
        return Err(Error::invalid(format!(
            "{n} frames cannot fill {k} clusters"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut centroids: Vec<Vec<f64>> = vec![frames.row(rng.random_range(0..n)).to_vec()];
    let mut closest: Vec<f64> = frames.rows().map(|x| sq_dist(x, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = closest.iter().sum();
        if total <= 0.0 {
            return Err(Error::invalid(format!(
                "fewer than {k} distinct frames for {k} clusters"
            )));
        }
        let mut target = rng.random::<f64>() * total;
        let mut pick = n - 1;
        for (i, &d) in closest.iter().enumerate() {
            if d > 0.0 && target < d {
                pick = i;
                break;
            }
            target -= d;
        }
        // guard against rounding landing on an already chosen frame
        if closest[pick] == 0.0 {
            pick = closest.iter().rposition(|&d| d > 0.0).expect("total > 0");
        }
        let c = frames.row(pick).to_vec();
        for (d, x) in closest.iter_mut().zip(frames.rows()) {
            *d = d.min(sq_dist(x, &c));
        }
        centroids.push(c);
    }

    let dim = frames.dim();
    let mut assign = vec![0usize; n];
    let mut iterations = 0;
    loop {
        iterations += 1;
        let current = KMeansQuantizer {
            centroids: centroids.clone(),
        };
        let mut dist = vec![0.0; n];
        for (i, x) in frames.rows().enumerate() {
            let (a, d) = current.nearest(x);
            assign[i] = a;
            dist[i] = d;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (x, &a) in frames.rows().zip(&assign) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(x) {
                *s += v;
            }
        }
        let mut taken = vec![false; n];
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let next = if counts[c] > 0 {
                sums[c].iter().map(|s| s / counts[c] as f64).collect()
            } else {
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .max_by(|&a, &b| dist[a].total_cmp(&dist[b]).then(b.cmp(&a)))
                    .expect("n >= k");
                taken[far] = true;
                dist[far] = 0.0;
                frames.row(far).to_vec()
            };
            shift = shift.max(sq_dist(&next, &centroids[c]).sqrt());
            centroids[c] = next;
        }
        if shift < TOLERANCE || iterations >= MAX_ITERATIONS {
            break;
        }
    }

    let quantizer = KMeansQuantizer::new(centroids)?;
    let inertia = frames.rows().map(|x| quantizer.nearest(x).1).sum();
    Ok(KMeansFit {
        quantizer,
        inertia,
        iterations,
    })
}

pub const QUANTIZER_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QuantizerFile {
    format_version: u32,
    k: usize,
    dim: usize,
    centroids: Vec<Vec<f64>>,
}

pub fn save_quantizer(path: &Path, q: &KMeansQuantizer) -> Result<()> {
    write_json(
        path,
        &QuantizerFile {
            format_version: QUANTIZER_FORMAT_VERSION,
            k: q.k(),
            dim: q.dim(),
            centroids: q.centroids.clone(),
        },
    )
}

pub fn load_quantizer(path: &Path) -> Result<KMeansQuantizer> {
    let file: QuantizerFile = read_json(path)?;
    check_version(path, file.format_version, QUANTIZER_FORMAT_VERSION)?;
    if file.centroids.len() != file.k || file.centroids.iter().any(|c| c.len() != file.dim) {
        return Err(Error::format(path, "centroid table does not match k x dim"));
    }
    KMeansQuantizer::new(file.centroids).map_err(|e| Error::format(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn rows(points: &[Vec<f64>]) -> FrameFeatures {
        FrameFeatures::from_rows(points).unwrap()
    }

    #[test]
    fn exact_cover() {
        let pts = vec![
            vec![0.0, 0.0],
            vec![5.0, 1.0],
            vec![-3.0, 2.0],
            vec![1.0, 9.0],
        ];
        let fit = kmeans_fit(&rows(&pts), 4, 3).unwrap();
        assert_eq!(fit.inertia, 0.0);
        let mut got = fit.quantizer.centroids().to_vec();
        got.sort_by(|a, b| a[0].total_cmp(&b[0]));
        let mut want = pts.clone();
        want.sort_by(|a, b| a[0].total_cmp(&b[0]));
        assert_eq!(got, want);
    }

    #[test]
    fn separates_two_blobs() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let means = [[-4.0, 0.0, 1.0], [4.0, 2.0, -1.0]];
        let mut pts = Vec::new();
        let mut labels = Vec::new();
        for i in 0..400 {
            let m = &means[i % 2];
            pts.push(
                m.iter()
                    .map(|c| c + noise.sample(&mut rng))
                    .collect::<Vec<f64>>(),
            );
            labels.push(i % 2);
        }
        let frames = rows(&pts);
        let fit = kmeans_fit(&frames, 2, 1).unwrap();
        for c in fit.quantizer.centroids() {
            let near = means
                .iter()
                .map(|m| sq_dist(m, c).sqrt())
                .fold(f64::INFINITY, f64::min);
            assert!(near < 3.0 * 0.5);
        }
        let which = |x: &[f64]| fit.quantizer.nearest(x).0;
        let flip = which(&pts[0]) != 0;
        let pure = pts
            .iter()
            .zip(&labels)
            .filter(|(p, &l)| (which(p) == 1) ^ flip == (l == 1))
            .count();
        assert!(pure as f64 / pts.len() as f64 >= 0.99);
    }

    #[test]
    fn preconditions() {
        let pts = vec![vec![0.0], vec![1.0]];
        assert!(kmeans_fit(&rows(&pts), 3, 0).is_err());
        let dup = vec![vec![1.0], vec![1.0], vec![1.0]];
        assert!(kmeans_fit(&rows(&dup), 2, 0).is_err());
    }

    #[test]
    fn empty_clusters_are_reseeded() {
        // seeding cannot produce empty clusters on distinct data, so start
        // from the reseed path directly via a skewed layout
        let mut pts: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64 * 1e-3]).collect();
        pts.push(vec![100.0]);
        pts.push(vec![101.0]);
        let fit = kmeans_fit(&rows(&pts), 5, 4).unwrap();
        assert_eq!(fit.quantizer.k(), 5);
        let mut counts = [0usize; 5];
        for p in &pts {
            counts[fit.quantizer.nearest(p).0] += 1;
        }
        assert!(counts.iter().all(|&c| c > 0), "{counts:?}");
    }

    #[test]
    fn quantize_examples() {
        let centroids: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64, 0.0]).collect();
        let q = KMeansQuantizer::new(centroids).unwrap();
        let f = rows(&[vec![3.0, 0.0], vec![3.0, 0.0], vec![7.0, 0.0]]);
        assert_eq!(q.quantize(&f, true).unwrap().units(), &[3, 7]);
        assert_eq!(q.quantize(&f, false).unwrap().units(), &[3, 3, 7]);
        let tie =
            KMeansQuantizer::new(vec![vec![0.0], vec![-1.0], vec![9.0], vec![7.0], vec![1.0]])
                .unwrap();
        assert_eq!(tie.nearest(&[0.5]).0, 0);
        assert_eq!(tie.nearest(&[0.0]).0, 0);
        let eq = KMeansQuantizer::new(vec![vec![5.0], vec![-1.0], vec![9.0], vec![7.0], vec![1.0]])
            .unwrap();
        assert_eq!(
            eq.quantize(&rows(&[vec![0.0]]), true).unwrap().units(),
            &[1]
        );
        assert!(q.quantize(&rows(&[vec![1.0]]), true).is_err());
    }

    #[test]
    fn deterministic_and_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pts: Vec<Vec<f64>> = (0..300)
            .map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let frames = rows(&pts);
        let a = kmeans_fit(&frames, 10, 5).unwrap().quantizer;
        let b = kmeans_fit(&frames, 10, 5).unwrap().quantizer;
        assert_eq!(a, b);
        assert_eq!(
            a.quantize(&frames, true).unwrap(),
            b.quantize(&frames, true).unwrap()
        );
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("q.json");
        save_quantizer(&p, &a).unwrap();
        assert_eq!(load_quantizer(&p).unwrap(), a);
    }
}
