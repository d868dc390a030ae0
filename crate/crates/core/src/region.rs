//! Spatial discretization: either k-means clusters over raw (lat, lon)
//! coordinates or precomputed per-POI region labels.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkin::CheckIn;
use crate::error::{Error, Result};
use crate::num::{real, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionMode {
    Kmeans,
    PrecomputedLabels,
}

/// Maps check-ins to region ids in `[0, region_count)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionModel<T> {
    pub mode: RegionMode,
    pub region_count: u32,
    /// Cluster centers, k-means mode only.
    pub centroids: Vec<(T, T)>,
    /// POI key -> region id, precomputed mode only. Persisted separately
    /// from the model JSON (see `load_labels`).
    #[serde(skip)]
    labels: HashMap<String, u32>,
}

impl<T: Real> RegionModel<T> {
    /// Builds a k-means-mode model from explicit centroids.
    pub fn from_centroids(centroids: Vec<(T, T)>) -> Result<Self> {
        if centroids.is_empty() {
            return Err(Error::Data("region model needs at least one centroid".into()));
        }
        for (i, a) in centroids.iter().enumerate() {
            if centroids[..i].contains(a) {
                return Err(Error::Data(format!("duplicate centroid at index {i}")));
            }
        }
        Ok(RegionModel {
            mode: RegionMode::Kmeans,
            region_count: centroids.len() as u32,
            centroids,
            labels: HashMap::new(),
        })
    }

    /// Builds a precomputed-label model; region count is the highest id + 1.
    pub fn from_labels(labels: HashMap<String, u32>) -> Result<Self> {
        let max = labels
            .values()
            .max()
            .ok_or_else(|| Error::Data("empty region label table".into()))?;
        Ok(RegionModel {
            mode: RegionMode::PrecomputedLabels,
            region_count: max + 1,
            centroids: Vec::new(),
            labels,
        })
    }

    /// Reads a `poi_id<TAB or comma>region_id` label file.
    pub fn from_label_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read region labels {}: {e}", path.display())))?;
        let mut labels = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(['\t', ',']);
            let key = parts.next().unwrap_or_default().trim();
            let id: u32 = parts
                .next()
                .unwrap_or_default()
                .trim()
                .parse()
                .map_err(|_| Error::Data(format!("bad region label on line {}", lineno + 1)))?;
            labels.insert(key.to_string(), id);
        }
        Self::from_labels(labels)
    }

    /// Nearest-centroid region id for a point; ties go to the lowest id.
    /// Only valid in k-means mode.
    pub fn assign_region(&self, point: (T, T)) -> Result<u32> {
        if self.mode != RegionMode::Kmeans {
            return Err(Error::Data(
                "assign_region by coordinates requires a k-means region model".into(),
            ));
        }
        Ok(nearest_centroid(&self.centroids, point))
    }

    /// Label lookup by POI key, precomputed mode only.
    pub fn region_of_poi_key(&self, key: &str) -> Result<u32> {
        if self.mode != RegionMode::PrecomputedLabels {
            return Err(Error::Data("region_of_poi_key requires precomputed labels".into()));
        }
        self.labels
            .get(key)
            .copied()
            .ok_or_else(|| Error::Data(format!("no region label for poi '{key}'")))
    }

    /// Region of a check-in: nearest centroid in k-means mode, label lookup
    /// by POI key in precomputed mode.
    pub fn region_of(&self, checkin: &CheckIn<T>) -> Result<u32> {
        match self.mode {
            RegionMode::Kmeans => self.assign_region(checkin.coords()),
            RegionMode::PrecomputedLabels => self
                .labels
                .get(&checkin.poi)
                .copied()
                .ok_or_else(|| Error::Data(format!("no region label for poi '{}'", checkin.poi))),
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)
            .map_err(|e| Error::Data(format!("cannot write region model: {e}")))?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let file = fs::File::open(path)?;
        serde_json::from_reader(std::io::BufReader::new(file))
            .map_err(|e| Error::Data(format!("cannot read region model: {e}")))
    }

    /// Re-attaches the label table after `load_json` in precomputed mode.
    pub fn load_labels(&mut self, path: &Path) -> Result<()> {
        let loaded = Self::from_label_file(path)?;
        if loaded.region_count > self.region_count {
            return Err(Error::Data("label file has more regions than the model".into()));
        }
        self.labels = loaded.labels;
        Ok(())
    }
}

fn squared_dist<T: Real>(a: (T, T), b: (T, T)) -> T {
    let dx = a.0 - b.0;
    let dy = a.1 - b.1;
    dx * dx + dy * dy
}

fn nearest_centroid<T: Real>(centroids: &[(T, T)], point: (T, T)) -> u32 {
    let mut best = 0usize;
    let mut best_d = squared_dist(centroids[0], point);
    for (i, c) in centroids.iter().enumerate().skip(1) {
        let d = squared_dist(*c, point);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best as u32
}

/// Clusters points with k-means++ seeding and Lloyd iterations (squared
/// Euclidean on raw degrees). Deterministic for a fixed seed; converges when
/// no assignment changes or after `max_iters`.
pub fn cluster_regions<T: Real>(
    points: &[(T, T)],
    k: u32,
    seed: u64,
    max_iters: u32,
) -> Result<RegionModel<T>> {
    let (centroids, _trace) = kmeans(points, k, seed, max_iters)?;
    Ok(RegionModel {
        mode: RegionMode::Kmeans,
        region_count: k,
        centroids,
        labels: HashMap::new(),
    })
}

/// Centroids plus the inertia after each assignment pass.
type KMeansFit<T> = (Vec<(T, T)>, Vec<T>);

/// Lloyd's algorithm with k-means++ seeding.
fn kmeans<T: Real>(points: &[(T, T)], k: u32, seed: u64, max_iters: u32) -> Result<KMeansFit<T>> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let k = k as usize;
    if points.len() < k {
        return Err(Error::Data(format!(
            "cannot form {k} clusters from {} points",
            points.len()
        )));
    }
    let mut distinct: Vec<(T, T)> = Vec::new();
    for p in points {
        if !distinct.contains(p) {
            distinct.push(*p);
            if distinct.len() >= k {
                break;
            }
        }
    }
    if distinct.len() < k {
        return Err(Error::Data(format!(
            "cannot form {k} clusters: only {} distinct points",
            distinct.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids = kmeans_plus_plus_init(points, k, &mut rng);

    let mut assignment = vec![u32::MAX; points.len()];
    let mut trace = Vec::new();
    for _ in 0..max_iters {
        let mut changed = false;
        let mut inertia = T::zero();
        for (i, p) in points.iter().enumerate() {
            let c = nearest_centroid(&centroids, *p);
            inertia += squared_dist(centroids[c as usize], *p);
            if assignment[i] != c {
                assignment[i] = c;
                changed = true;
            }
        }
        trace.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![(T::zero(), T::zero()); k];
        let mut sizes = vec![0usize; k];
        for (i, p) in points.iter().enumerate() {
            let c = assignment[i] as usize;
            sums[c].0 += p.0;
            sums[c].1 += p.1;
            sizes[c] += 1;
        }
        for c in 0..k {
            if sizes[c] > 0 {
                let n = real::<T>(sizes[c] as f64);
                centroids[c] = (sums[c].0 / n, sums[c].1 / n);
            }
            // An empty cluster keeps its previous centroid.
        }
    }
    Ok((centroids, trace))
}

fn kmeans_plus_plus_init<T: Real>(points: &[(T, T)], k: usize, rng: &mut ChaCha8Rng) -> Vec<(T, T)> {
    let mut centroids = Vec::with_capacity(k);
    centroids.push(points[rng.random_range(0..points.len())]);
    let mut d2: Vec<T> = points.iter().map(|p| squared_dist(*p, centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().map(|d| d.to_f64().unwrap_or(0.0)).sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut chosen = points.len() - 1;
            for (i, d) in d2.iter().enumerate() {
                u -= d.to_f64().unwrap_or(0.0);
                if u <= 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            // All mass on already-chosen points can only happen with
            // duplicates; fall back to the first uncovered point.
            d2.iter().position(|d| *d > T::zero()).unwrap_or(0)
        };
        let c = points[next];
        centroids.push(c);
        for (i, p) in points.iter().enumerate() {
            let d = squared_dist(*p, c);
            if d < d2[i] {
                d2[i] = d;
            }
        }
    }
    centroids
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkin::CheckIn;

    fn sorted(mut cs: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
        cs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        cs
    }

    #[test]
    fn k_equal_to_n_gives_zero_inertia() {
        let points = vec![(0.0, 0.0), (1.0, 5.0), (-3.0, 2.0), (8.0, 8.0)];
        let (centroids, trace) = kmeans(&points, 4, 7, 100).unwrap();
        assert_eq!(sorted(centroids), sorted(points));
        assert_eq!(*trace.last().unwrap(), 0.0);
    }

    #[test]
    fn two_tight_groups_recover_their_centers() {
        let eps = 1e-3;
        let points = vec![
            (0.0 + eps, 0.0),
            (0.0 - eps, 0.0),
            (0.0, 0.0 + eps),
            (10.0 + eps, 10.0),
            (10.0 - eps, 10.0),
            (10.0, 10.0 - eps),
        ];
        let (centroids, _) = kmeans(&points, 2, 3, 100).unwrap();

        // Oracle: brute-force minimum inertia over all 2-partitions.
        let n = points.len();
        let mut best_inertia = f64::INFINITY;
        let mut best_centroids = Vec::new();
        for mask in 1..(1u32 << n) - 1 {
            let (mut a, mut b): (Vec<_>, Vec<_>) = (Vec::new(), Vec::new());
            for (i, p) in points.iter().enumerate() {
                if mask & (1 << i) != 0 {
                    a.push(*p)
                } else {
                    b.push(*p)
                }
            }
            let mean = |ps: &[(f64, f64)]| {
                let n = ps.len() as f64;
                (ps.iter().map(|p| p.0).sum::<f64>() / n, ps.iter().map(|p| p.1).sum::<f64>() / n)
            };
            let (ca, cb) = (mean(&a), mean(&b));
            let inertia: f64 = a.iter().map(|p| squared_dist(*p, ca)).sum::<f64>()
                + b.iter().map(|p| squared_dist(*p, cb)).sum::<f64>();
            if inertia < best_inertia {
                best_inertia = inertia;
                best_centroids = vec![ca, cb];
            }
        }

        let got = sorted(centroids);
        let want = sorted(best_centroids);
        for (g, w) in got.iter().zip(&want) {
            assert!((g.0 - w.0).abs() < 1e-9 && (g.1 - w.1).abs() < 1e-9, "{got:?} vs {want:?}");
        }
        assert!((got[0].0).abs() < 0.01 && (got[1].0 - 10.0).abs() < 0.01);
    }

    #[test]
    fn inertia_is_non_increasing_and_seed_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let points: Vec<(f64, f64)> =
            (0..200).map(|_| (rng.random::<f64>() * 50.0, rng.random::<f64>() * 50.0)).collect();
        let (c1, trace) = kmeans(&points, 8, 42, 100).unwrap();
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "inertia increased: {:?}", w);
        }
        let (c2, _) = kmeans(&points, 8, 42, 100).unwrap();
        assert_eq!(c1, c2, "same seed must give bit-identical centroids");
        let model = cluster_regions(&points, 8, 42, 100).unwrap();
        assert_eq!(model.centroids, c1);
        assert_eq!(model.region_count, 8);
    }

    #[test]
    fn rejects_fewer_distinct_points_than_k() {
        let points = vec![(1.0, 1.0); 10];
        assert!(kmeans(&points, 2, 1, 100).is_err());
        assert!(kmeans::<f64>(&[], 1, 1, 100).is_err());
    }

    #[test]
    fn assignment_of_exact_centroid() {
        let model =
            RegionModel::from_centroids(vec![(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (3.0, 3.0), (4.0, 4.0)])
                .unwrap();
        assert_eq!(model.assign_region((3.0, 3.0)).unwrap(), 3);
    }

    #[test]
    fn ties_break_to_the_lowest_id() {
        let model = RegionModel::from_centroids(vec![(5.0, 5.0), (0.0, 0.0), (2.0, 0.0)]).unwrap();
        // (1, 0) is equidistant from centroids 1 and 2.
        assert_eq!(model.assign_region((1.0, 0.0)).unwrap(), 1);
    }

    #[test]
    fn nearest_of_two_centroids_by_hand() {
        // (0.1, 0.1): d^2 to (0,0) is 0.02, to (10,10) is 196.02.
        let model = RegionModel::from_centroids(vec![(0.0, 0.0), (10.0, 10.0)]).unwrap();
        assert_eq!(model.assign_region((0.1, 0.1)).unwrap(), 0);
    }

    #[test]
    fn precomputed_labels_resolve_by_poi_key() {
        let mut labels = HashMap::new();
        labels.insert("p1".to_string(), 0);
        labels.insert("p2".to_string(), 3);
        let model = RegionModel::<f64>::from_labels(labels).unwrap();
        assert_eq!(model.region_count, 4);
        let c = CheckIn::new("u", "p2", 0.0, 0.0, 1, None).unwrap();
        assert_eq!(model.region_of(&c).unwrap(), 3);
        let unknown = CheckIn::new("u", "p9", 0.0, 0.0, 1, None).unwrap();
        assert!(model.region_of(&unknown).is_err());
        assert!(model.assign_region((0.0, 0.0)).is_err());
    }

    #[test]
    fn json_round_trip() {
        let points: Vec<(f64, f64)> = vec![(0.0, 0.0), (1.0, 0.5), (10.0, 10.0), (11.0, 10.5)];
        let model = cluster_regions(&points, 2, 5, 100).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("regions.json");
        model.save_json(&path).unwrap();
        let loaded = RegionModel::<f64>::load_json(&path).unwrap();
        assert_eq!(model, loaded);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"mode\":\"kmeans\""));
        assert!(text.contains("\"region_count\":2"));
        assert!(text.contains("\"centroids\""));
    }
}
