//! Clustering-based shift evaluator: k-means over source-era
//! representations, nearest-centroid warmup labels, and shift vectors.

use rand::Rng;

use crate::encoder::Representation;
use crate::error::{MoteError, Result};
use crate::rng::{stream_rng, STREAM_KMEANS};

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub centroids: Vec<Vec<f64>>,
    /// Cluster label of each training representation.
    pub assignments: Vec<usize>,
    pub inertia: f64,
    pub iterations: usize,
    /// Inertia after initialization and after every Lloyd iteration.
    pub inertia_trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KMeansConfig {
    pub clusters: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub seed: u64,
    /// Independent seedings per fit; the lowest-inertia run is kept.
    pub restarts: usize,
}

impl KMeansConfig {
    pub fn new(clusters: usize, seed: u64) -> Self {
        KMeansConfig {
            clusters,
            max_iters: 100,
            tol: 1e-8,
            seed,
            restarts: 3,
        }
    }
}

/// `z - c_j` together with the cluster it was measured against.
#[derive(Debug, Clone, PartialEq)]
pub struct ShiftVector {
    pub vector: Vec<f64>,
    pub cluster: usize,
}

/// Representations paired with their nearest-cluster labels.
#[derive(Debug, Clone, PartialEq)]
pub struct WarmupDataset {
    pub pairs: Vec<(Representation, usize)>,
}

impl WarmupDataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the closest centroid; ties go to the lowest index.
pub fn nearest_centroid(z: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = squared_distance(z, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

fn assign(points: &[Vec<f64>], centroids: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut inertia = 0.0;
    let labels = points
        .iter()
        .map(|p| {
            let (j, d) = nearest_centroid(p, centroids);
            inertia += d;
            j
        })
        .collect();
    (labels, inertia)
}

fn count_distinct(points: &[Vec<f64>]) -> usize {
    let mut keys: Vec<Vec<u64>> = points
        .iter()
        .map(|p| p.iter().map(|x| x.to_bits()).collect())
        .collect();
    keys.sort();
    keys.dedup();
    keys.len()
}

/// Index drawn with probability proportional to `dist`, skipping zeros.
fn d2_sample<R: Rng>(dist: &[f64], rng: &mut R) -> usize {
    let total: f64 = dist.iter().sum();
    let mut target = rng.gen::<f64>() * total;
    let mut pick = None;
    for (i, &d) in dist.iter().enumerate() {
        if d <= 0.0 {
            continue;
        }
        pick = Some(i);
        if target < d {
            break;
        }
        target -= d;
    }
    // total > 0 is guaranteed while fewer than `distinct` centroids exist
    pick.expect("a point with positive distance remains")
}

/// Greedy k-means++: each new centroid is the best of `2 + ln k` D²-sampled
/// candidates by resulting potential.
fn kmeans_plus_plus<R: Rng>(points: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<Vec<f64>> {
    let trials = 2 + (k as f64).ln().floor() as usize;
    let mut centroids = vec![points[rng.gen_range(0..points.len())].clone()];
    let mut dist: Vec<f64> = points
        .iter()
        .map(|p| squared_distance(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for _ in 0..trials {
            let cand = d2_sample(&dist, rng);
            let updated: Vec<f64> = dist
                .iter()
                .zip(points)
                .map(|(d, p)| d.min(squared_distance(p, &points[cand])))
                .collect();
            let potential: f64 = updated.iter().sum();
            if best.as_ref().map_or(true, |(b, _, _)| potential < *b) {
                best = Some((potential, cand, updated));
            }
        }
        let (_, pick, updated) = best.expect("at least one candidate");
        centroids.push(points[pick].clone());
        dist = updated;
    }
    centroids
}

/// Best of `cfg.restarts` k-means++ seedings, each refined by Lloyd
/// iterations.
pub fn fit_clusters(points: &[Representation], cfg: &KMeansConfig) -> Result<ClusterModel> {
    let k = cfg.clusters;
    if k == 0 {
        return Err(MoteError::InvalidArgument("cluster count must be positive".into()));
    }
    let dim = points.first().map_or(0, Vec::len);
    if points.iter().any(|p| p.len() != dim) {
        return Err(MoteError::InvalidArgument("representations differ in width".into()));
    }
    let distinct = count_distinct(points);
    if distinct < k {
        return Err(MoteError::InvalidArgument(format!(
            "{distinct} distinct points cannot form {k} clusters"
        )));
    }
    if cfg.restarts == 0 {
        return Err(MoteError::InvalidArgument("k-means needs at least one restart".into()));
    }
    let mut rng = stream_rng(cfg.seed, STREAM_KMEANS);
    let mut best: Option<ClusterModel> = None;
    for _ in 0..cfg.restarts {
        let run = lloyd(points, k, dim, cfg, &mut rng);
        if best.as_ref().map_or(true, |b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// One k-means++ seeding followed by Lloyd iterations.
fn lloyd<R: Rng>(points: &[Representation], k: usize, dim: usize, cfg: &KMeansConfig, rng: &mut R) -> ClusterModel {
    let mut centroids = kmeans_plus_plus(points, k, rng);
    let (mut labels, mut inertia) = assign(points, &centroids);
    let mut trace = vec![inertia];
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &l) in points.iter().zip(&labels) {
            counts[l] += 1;
            for (s, x) in sums[l].iter_mut().zip(p) {
                *s += x;
            }
        }
        for j in 0..k {
            // An emptied cluster keeps its previous centroid.
            if counts[j] > 0 {
                let inv = 1.0 / counts[j] as f64;
                centroids[j] = sums[j].iter().map(|s| s * inv).collect();
            }
        }
        let (new_labels, new_inertia) = assign(points, &centroids);
        iterations += 1;
        let stable = new_labels == labels;
        let improvement = inertia - new_inertia;
        labels = new_labels;
        inertia = new_inertia;
        trace.push(inertia);
        if stable || improvement < cfg.tol {
            break;
        }
    }
    ClusterModel {
        centroids,
        assignments: labels,
        inertia,
        iterations,
        inertia_trace: trace,
    }
}

impl ClusterModel {
    /// Wraps fixed centroids, e.g. loaded from a checkpoint.
    pub fn from_centroids(centroids: Vec<Vec<f64>>) -> Self {
        ClusterModel {
            centroids,
            assignments: Vec::new(),
            inertia: 0.0,
            iterations: 0,
            inertia_trace: Vec::new(),
        }
    }

    pub fn clusters(&self) -> usize {
        self.centroids.len()
    }

    pub fn dim(&self) -> usize {
        self.centroids.first().map_or(0, Vec::len)
    }

    pub fn nearest(&self, z: &[f64]) -> Result<usize> {
        self.check_width(z)?;
        Ok(nearest_centroid(z, &self.centroids).0)
    }

    fn check_width(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim() {
            return Err(MoteError::InvalidArgument(format!(
                "representation width {} does not match centroid width {}",
                z.len(),
                self.dim()
            )));
        }
        Ok(())
    }
}

/// Pairs every representation with its nearest centroid.
pub fn build_warmup_dataset(
    representations: &[Representation],
    model: &ClusterModel,
) -> Result<WarmupDataset> {
    let pairs = representations
        .iter()
        .map(|z| Ok((z.clone(), model.nearest(z)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(WarmupDataset { pairs })
}

pub fn compute_shift_vector(z: &[f64], model: &ClusterModel, j: usize) -> Result<ShiftVector> {
    let c = model.centroids.get(j).ok_or(MoteError::IndexOutOfRange {
        what: "cluster",
        index: j,
        len: model.clusters(),
    })?;
    model.check_width(z)?;
    Ok(ShiftVector {
        vector: z.iter().zip(c).map(|(a, b)| a - b).collect(),
        cluster: j,
    })
}
