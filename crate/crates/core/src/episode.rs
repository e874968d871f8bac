//! Episodic task construction.
//!
//! A [`Dataset`] is a list of classes, each a matrix of feature rows. An
//! [`Episode`] draws `n_way` classes and, per class, `k_shot` support plus
//! `queries_per_class` query rows without replacement. Support and query
//! blocks are stored class-major, and graph layouts always place the support
//! block before the queries.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Absorbs representation error when `labeled_fraction · k_shot` is an integer.
const FRACTION_SLACK: f64 = 1e-9;

/// Deterministic generator for stream `stream` of `seed`.
///
/// ChaCha is counter based, so distinct streams are independent and can be
/// consumed from different threads in any order.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeSpec {
    pub n_way: usize,
    pub k_shot: usize,
    pub queries_per_class: usize,
    /// Fraction of support labels visible per class, in `(0, 1]`.
    pub labeled_fraction: f64,
    pub transductive: bool,
}

impl EpisodeSpec {
    /// Fully labelled, transductive spec.
    pub fn new(n_way: usize, k_shot: usize, queries_per_class: usize) -> Self {
        EpisodeSpec {
            n_way,
            k_shot,
            queries_per_class,
            labeled_fraction: 1.0,
            transductive: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_way == 0 || self.k_shot == 0 || self.queries_per_class == 0 {
            return Err(Error::Parameter(format!(
                "n_way, k_shot and queries_per_class must be positive (got {}, {}, {})",
                self.n_way, self.k_shot, self.queries_per_class
            )));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(Error::Parameter(format!(
                "labeled_fraction must lie in (0, 1], got {}",
                self.labeled_fraction
            )));
        }
        Ok(())
    }

    /// `ceil(labeled_fraction · k_shot)`, never below one.
    pub fn labeled_per_class(&self) -> usize {
        let raw = (self.labeled_fraction * self.k_shot as f64 - FRACTION_SLACK).ceil();
        (raw as usize).clamp(1, self.k_shot)
    }

    pub fn support_len(&self) -> usize {
        self.n_way * self.k_shot
    }

    pub fn query_len(&self) -> usize {
        self.n_way * self.queries_per_class
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassSamples {
    pub name: String,
    /// `m × D` matrix, one sample per row.
    pub features: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    classes: Vec<ClassSamples>,
    feature_dim: usize,
}

impl Dataset {
    pub fn new(classes: Vec<ClassSamples>) -> Result<Self> {
        let first = classes
            .first()
            .ok_or_else(|| Error::Parameter("dataset needs at least one class".into()))?;
        let feature_dim = first.features.cols();
        for c in &classes {
            if c.features.shape().len() != 2 || c.features.cols() != feature_dim {
                return Err(Error::dim(
                    "Dataset::new",
                    &[feature_dim],
                    c.features.shape(),
                ));
            }
        }
        Ok(Dataset {
            classes,
            feature_dim,
        })
    }

    pub fn classes(&self) -> &[ClassSamples] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }
}

/// Gaussian clusters around prototypes drawn uniformly from
/// `[-class_separation, class_separation]^dim`.
pub fn make_synthetic_dataset(
    num_classes: usize,
    samples_per_class: usize,
    dim: usize,
    class_separation: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 || samples_per_class < 2 || dim < 1 {
        return Err(Error::Parameter(format!(
            "synthetic dataset needs ≥2 classes, ≥2 samples per class and dim ≥1 \
             (got {num_classes}, {samples_per_class}, {dim})"
        )));
    }
    if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
        return Err(Error::Parameter(format!(
            "noise_sigma must be finite and ≥0, got {noise_sigma}"
        )));
    }
    if !(class_separation >= 0.0 && class_separation.is_finite()) {
        return Err(Error::Parameter(format!(
            "class_separation must be finite and ≥0, got {class_separation}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let width = (num_classes - 1).to_string().len();
    let mut classes = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let prototype: Vec<f64> = (0..dim)
            .map(|_| class_separation * (2.0 * rng.random::<f64>() - 1.0))
            .collect();
        let mut data = Vec::with_capacity(samples_per_class * dim);
        for _ in 0..samples_per_class {
            for &p in &prototype {
                let z: f64 = rng.sample(StandardNormal);
                data.push(p + noise_sigma * z);
            }
        }
        classes.push(ClassSamples {
            name: format!("class{c:0width$}"),
            features: Tensor::new(vec![samples_per_class, dim], data)?,
        });
    }
    Dataset::new(classes)
}

/// Reads one class per `<name>.csv` file in `dir`, ordered by file name.
pub fn load_csv_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::NotFound(format!("{}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::NotFound(format!(
            "no .csv class files in {}",
            dir.display()
        )));
    }

    let mut classes = Vec::with_capacity(files.len());
    let mut dim: Option<usize> = None;
    for file in files {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .from_path(&file)?;
        let mut data = Vec::new();
        let mut rows = 0usize;
        for record in reader.records() {
            let record = record?;
            let line = record.position().map_or(rows as u64 + 1, |p| p.line());
            let expected = *dim.get_or_insert(record.len());
            if record.len() != expected {
                return Err(Error::Format {
                    file: file.clone(),
                    line,
                    message: format!("expected {expected} values, found {}", record.len()),
                });
            }
            for token in record.iter() {
                let value: f64 = token.trim().parse().map_err(|_| Error::Parse {
                    file: file.clone(),
                    line,
                    token: token.to_string(),
                })?;
                data.push(value);
            }
            rows += 1;
        }
        if rows == 0 {
            return Err(Error::Format {
                file: file.clone(),
                line: 1,
                message: "class file has no rows".into(),
            });
        }
        let name = file
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        classes.push(ClassSamples {
            name,
            features: Tensor::new(vec![rows, dim.unwrap_or(0)], data)?,
        });
    }
    Dataset::new(classes)
}

/// Writes `dataset` in the layout read by [`load_csv_dataset`].
///
/// Values use the shortest representation that parses back to the same `f64`.
pub fn write_csv_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    for class in dataset.classes() {
        let mut writer = csv::Writer::from_path(dir.join(format!("{}.csv", class.name)))?;
        for r in 0..class.features.rows() {
            writer.write_record(class.features.row(r).iter().map(|x| x.to_string()))?;
        }
        writer.flush()?;
    }
    Ok(())
}

/// One N-way K-shot task with episode-local labels `0..n_way`.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub n_way: usize,
    pub support_features: Tensor,
    pub support_labels: Vec<usize>,
    /// `true` where the support label is visible to the model.
    pub label_mask: Vec<bool>,
    pub query_features: Tensor,
    pub query_labels: Vec<usize>,
    pub transductive: bool,
    /// Dataset `(class, row)` of every support item followed by every query.
    pub provenance: Vec<(usize, usize)>,
}

impl Episode {
    pub fn support_len(&self) -> usize {
        self.support_labels.len()
    }

    pub fn query_len(&self) -> usize {
        self.query_labels.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.support_features.cols()
    }

    /// Support rows followed by query rows.
    pub fn all_features(&self) -> Tensor {
        let mut data = self.support_features.data().to_vec();
        data.extend_from_slice(self.query_features.data());
        Tensor::new(
            vec![self.support_len() + self.query_len(), self.feature_dim()],
            data,
        )
        .expect("support and query share the feature width")
    }

    /// Digest of the sampled items and mask; equal episodes hash equally.
    pub fn fingerprint(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for &(c, r) in &self.provenance {
            h.update((c as u64).to_le_bytes());
            h.update((r as u64).to_le_bytes());
        }
        for &label in self.support_labels.iter().chain(&self.query_labels) {
            h.update((label as u64).to_le_bytes());
        }
        h.update(self.label_mask.iter().map(|&m| m as u8).collect::<Vec<_>>());
        h.update([self.transductive as u8]);
        h.finalize().into()
    }
}

pub fn sample_episode<R: Rng + ?Sized>(
    dataset: &Dataset,
    spec: &EpisodeSpec,
    rng: &mut R,
) -> Result<Episode> {
    spec.validate()?;
    if dataset.num_classes() < spec.n_way {
        return Err(Error::Capacity(format!(
            "{}-way episode needs {} classes, dataset has {} (short by {})",
            spec.n_way,
            spec.n_way,
            dataset.num_classes(),
            spec.n_way - dataset.num_classes()
        )));
    }
    let per_class = spec.k_shot + spec.queries_per_class;
    if let Some(c) = dataset
        .classes()
        .iter()
        .find(|c| c.features.rows() < per_class)
    {
        return Err(Error::Capacity(format!(
            "class {:?} has {} samples, episode needs {} (short by {})",
            c.name,
            c.features.rows(),
            per_class,
            per_class - c.features.rows()
        )));
    }

    let dim = dataset.feature_dim();
    let visible = spec.labeled_per_class();
    let chosen = index::sample(rng, dataset.num_classes(), spec.n_way).into_vec();

    let mut support = Vec::with_capacity(spec.support_len() * dim);
    let mut query = Vec::with_capacity(spec.query_len() * dim);
    let mut support_labels = Vec::with_capacity(spec.support_len());
    let mut query_labels = Vec::with_capacity(spec.query_len());
    let mut label_mask = Vec::with_capacity(spec.support_len());
    let mut support_src = Vec::with_capacity(spec.support_len());
    let mut query_src = Vec::with_capacity(spec.query_len());

    for (local, &global) in chosen.iter().enumerate() {
        let features = &dataset.classes()[global].features;
        let rows = index::sample(rng, features.rows(), per_class).into_vec();
        let (shots, queries) = rows.split_at(spec.k_shot);
        for &r in shots {
            support.extend_from_slice(features.row(r));
            support_labels.push(local);
            support_src.push((global, r));
        }
        for &r in queries {
            query.extend_from_slice(features.row(r));
            query_labels.push(local);
            query_src.push((global, r));
        }
        let mut mask = vec![false; spec.k_shot];
        for i in index::sample(rng, spec.k_shot, visible) {
            mask[i] = true;
        }
        label_mask.extend(mask);
    }

    support_src.extend(query_src);
    Ok(Episode {
        n_way: spec.n_way,
        support_features: Tensor::new(vec![spec.support_len(), dim], support)?,
        support_labels,
        label_mask,
        query_features: Tensor::new(vec![spec.query_len(), dim], query)?,
        query_labels,
        transductive: spec.transductive,
        provenance: support_src,
    })
}

/// Node set of one graph: every support item, then the listed queries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub support: usize,
    /// Episode query indices, in node order after the support block.
    pub queries: Vec<usize>,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.support + self.queries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row indices into [`Episode::all_features`] in node order.
    pub fn feature_rows(&self) -> Vec<usize> {
        (0..self.support)
            .chain(self.queries.iter().map(|q| self.support + q))
            .collect()
    }

    /// Node positions of the queries in this layout.
    pub fn query_positions(&self) -> std::ops::Range<usize> {
        self.support..self.len()
    }
}

/// Transductive episodes form one graph over all nodes; otherwise each query
/// gets its own graph alongside the full support set.
pub fn episode_graphs(episode: &Episode) -> Vec<Layout> {
    let support = episode.support_len();
    if episode.transductive {
        vec![Layout {
            support,
            queries: (0..episode.query_len()).collect(),
        }]
    } else {
        (0..episode.query_len())
            .map(|q| Layout {
                support,
                queries: vec![q],
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset() -> Dataset {
        make_synthetic_dataset(8, 12, 3, 2.0, 0.3, 11).unwrap()
    }

    #[test]
    fn zero_noise_gives_identical_samples() {
        let ds = make_synthetic_dataset(3, 5, 4, 1.0, 0.0, 1).unwrap();
        for class in ds.classes() {
            for r in 1..class.features.rows() {
                assert_eq!(class.features.row(r), class.features.row(0));
            }
        }
    }

    #[test]
    fn synthetic_is_deterministic() {
        let a = make_synthetic_dataset(4, 6, 5, 3.0, 0.7, 99).unwrap();
        let b = make_synthetic_dataset(4, 6, 5, 3.0, 0.7, 99).unwrap();
        assert_eq!(a, b);
        let c = make_synthetic_dataset(4, 6, 5, 3.0, 0.7, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn synthetic_rejects_bad_sizes() {
        assert!(matches!(
            make_synthetic_dataset(1, 5, 2, 1.0, 0.1, 0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            make_synthetic_dataset(3, 1, 2, 1.0, 0.1, 0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            make_synthetic_dataset(3, 5, 0, 1.0, 0.1, 0),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            make_synthetic_dataset(3, 5, 2, 1.0, -0.1, 0),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn well_separated_clusters_are_nearest_prototype_separable() {
        let ds = make_synthetic_dataset(10, 20, 16, 5.0, 0.5, 2024).unwrap();
        let means: Vec<Vec<f64>> = ds
            .classes()
            .iter()
            .map(|c| {
                let mut m = vec![0.0; 16];
                for r in 0..c.features.rows() {
                    for (acc, x) in m.iter_mut().zip(c.features.row(r)) {
                        *acc += x / c.features.rows() as f64;
                    }
                }
                m
            })
            .collect();
        let mut correct = 0;
        let mut total = 0;
        for (label, class) in ds.classes().iter().enumerate() {
            for r in 0..class.features.rows() {
                let x = class.features.row(r);
                let best = means
                    .iter()
                    .map(|m| m.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                    .enumerate()
                    .min_by(|a, b| a.1.total_cmp(&b.1))
                    .unwrap()
                    .0;
                correct += (best == label) as usize;
                total += 1;
            }
        }
        assert_eq!(correct, total);
    }

    #[test]
    fn labeled_per_class_is_ceiling() {
        let mut spec = EpisodeSpec::new(5, 5, 1);
        for (f, want) in [(0.2, 1), (0.4, 2), (0.6, 3), (1.0, 5), (0.21, 2), (0.01, 1)] {
            spec.labeled_fraction = f;
            assert_eq!(spec.labeled_per_class(), want, "fraction {f}");
        }
    }

    #[test]
    fn spec_validation() {
        let mut spec = EpisodeSpec::new(5, 1, 1);
        spec.labeled_fraction = 0.0;
        assert!(spec.validate().is_err());
        spec.labeled_fraction = 1.5;
        assert!(spec.validate().is_err());
        assert!(EpisodeSpec::new(0, 1, 1).validate().is_err());
    }

    #[test]
    fn five_way_one_shot_sizes() {
        let ds = toy_dataset();
        let spec = EpisodeSpec::new(5, 1, 1);
        let ep = sample_episode(&ds, &spec, &mut stream_rng(3, 0)).unwrap();
        assert_eq!(ep.support_len(), 5);
        assert_eq!(ep.query_len(), 5);
        assert_eq!(ep.support_len() + ep.query_len(), 10);
        assert_eq!(ep.all_features().shape(), &[10, 3]);
    }

    #[test]
    fn twenty_percent_leaves_one_label_per_class() {
        let ds = toy_dataset();
        let mut spec = EpisodeSpec::new(5, 5, 2);
        spec.labeled_fraction = 0.2;
        for s in 0..20 {
            let ep = sample_episode(&ds, &spec, &mut stream_rng(5, s)).unwrap();
            for c in 0..5 {
                let visible = (0..ep.support_len())
                    .filter(|&i| ep.support_labels[i] == c && ep.label_mask[i])
                    .count();
                assert_eq!(visible, 1);
            }
        }
    }

    #[test]
    fn support_and_query_are_disjoint_and_balanced() {
        let ds = toy_dataset();
        let spec = EpisodeSpec::new(4, 3, 5);
        for s in 0..50 {
            let ep = sample_episode(&ds, &spec, &mut stream_rng(8, s)).unwrap();
            let mut seen = std::collections::HashSet::new();
            for &item in &ep.provenance {
                assert!(seen.insert(item), "duplicate {item:?}");
            }
            for c in 0..4 {
                assert_eq!(ep.support_labels.iter().filter(|&&l| l == c).count(), 3);
                assert_eq!(ep.query_labels.iter().filter(|&&l| l == c).count(), 5);
            }
            // Each local label maps to exactly one global class.
            for c in 0..4 {
                let globals: std::collections::HashSet<usize> = ep
                    .provenance
                    .iter()
                    .zip(ep.support_labels.iter().chain(&ep.query_labels))
                    .filter(|(_, &l)| l == c)
                    .map(|(&(g, _), _)| g)
                    .collect();
                assert_eq!(globals.len(), 1);
            }
        }
    }

    #[test]
    fn features_follow_provenance() {
        let ds = toy_dataset();
        let spec = EpisodeSpec::new(3, 2, 2);
        let ep = sample_episode(&ds, &spec, &mut stream_rng(1, 1)).unwrap();
        let all = ep.all_features();
        for (i, &(c, r)) in ep.provenance.iter().enumerate() {
            assert_eq!(all.row(i), ds.classes()[c].features.row(r));
        }
    }

    #[test]
    fn sampling_is_reproducible() {
        let ds = toy_dataset();
        let mut spec = EpisodeSpec::new(5, 3, 2);
        spec.labeled_fraction = 0.4;
        let a: Vec<Episode> = (0..10)
            .map(|i| sample_episode(&ds, &spec, &mut stream_rng(77, i)).unwrap())
            .collect();
        let b: Vec<Episode> = (0..10)
            .map(|i| sample_episode(&ds, &spec, &mut stream_rng(77, i)).unwrap())
            .collect();
        assert_eq!(a, b);
        assert_ne!(a[0].fingerprint(), a[1].fingerprint());
    }

    #[test]
    fn capacity_errors_name_the_deficit() {
        let ds = toy_dataset();
        let err =
            sample_episode(&ds, &EpisodeSpec::new(10, 1, 1), &mut stream_rng(0, 0)).unwrap_err();
        assert!(matches!(err, Error::Capacity(_)));
        assert!(err.to_string().contains("short by 2"), "{err}");
        let err =
            sample_episode(&ds, &EpisodeSpec::new(2, 10, 5), &mut stream_rng(0, 0)).unwrap_err();
        assert!(err.to_string().contains("short by 3"), "{err}");
    }

    #[test]
    fn graph_layout_counts() {
        let ds = toy_dataset();
        let mut spec = EpisodeSpec::new(5, 5, 5);
        let ep = sample_episode(&ds, &spec, &mut stream_rng(2, 0)).unwrap();
        let layouts = episode_graphs(&ep);
        assert_eq!(layouts.len(), 1);
        assert_eq!(layouts[0].len(), 50);

        spec.transductive = false;
        let ep = sample_episode(&ds, &spec, &mut stream_rng(2, 0)).unwrap();
        let layouts = episode_graphs(&ep);
        assert_eq!(layouts.len(), 25);
        assert!(layouts.iter().all(|l| l.len() == 26));
        assert_eq!(layouts[7].feature_rows().last(), Some(&(25 + 7)));
    }

    #[test]
    fn single_query_layouts_coincide() {
        let ds = toy_dataset();
        let mut spec = EpisodeSpec::new(1, 2, 1);
        let trans = episode_graphs(&sample_episode(&ds, &spec, &mut stream_rng(4, 0)).unwrap());
        spec.transductive = false;
        let induct = episode_graphs(&sample_episode(&ds, &spec, &mut stream_rng(4, 0)).unwrap());
        assert_eq!(trans, induct);
    }

    #[test]
    fn csv_directory_ingestion() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join("b.csv"),
            "1,2,3,4\n5,6,7,8\n9,10,11,12\n0,0,0,0\n1,1,1,1\n",
        )
        .unwrap();
        fs::write(
            dir.path().join("a.csv"),
            "1,2,3,4\n-1.5,2e3,3,4\n0.25, 1 ,2,3\n",
        )
        .unwrap();
        fs::write(dir.path().join("notes.txt"), "ignored").unwrap();
        let ds = load_csv_dataset(dir.path()).unwrap();
        assert_eq!(ds.num_classes(), 2);
        assert_eq!(ds.feature_dim(), 4);
        assert_eq!(ds.classes()[0].name, "a");
        assert_eq!(ds.classes()[0].features.shape(), &[3, 4]);
        assert_eq!(ds.classes()[1].features.shape(), &[5, 4]);
        assert_eq!(ds.classes()[0].features.row(1), &[-1.5, 2000.0, 3.0, 4.0]);
    }

    #[test]
    fn csv_ragged_rows_report_file_and_line() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("a.csv"), "1,2,3,4\n1,2,3,4,5\n").unwrap();
        match load_csv_dataset(dir.path()).unwrap_err() {
            Error::Format { file, line, .. } => {
                assert!(file.ends_with("a.csv"));
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_bad_token_and_empty_dir() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_csv_dataset(dir.path()),
            Err(Error::NotFound(_))
        ));
        assert!(matches!(
            load_csv_dataset(dir.path().join("missing")),
            Err(Error::NotFound(_))
        ));
        fs::write(dir.path().join("x.csv"), "1,2\n3,abc\n").unwrap();
        match load_csv_dataset(dir.path()).unwrap_err() {
            Error::Parse { line, token, .. } => {
                assert_eq!(line, 2);
                assert_eq!(token, "abc");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let ds = make_synthetic_dataset(12, 7, 5, 3.3, 1.7, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_csv_dataset(&ds, dir.path()).unwrap();
        let back = load_csv_dataset(dir.path()).unwrap();
        assert_eq!(back.num_classes(), ds.num_classes());
        for (a, b) in ds.classes().iter().zip(back.classes()) {
            assert_eq!(a.name, b.name);
            assert!(a.features.max_abs_diff(&b.features) <= 1e-12);
            assert_eq!(a.features, b.features);
        }
    }
}
