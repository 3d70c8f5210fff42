//! Dataset ingestion, disjoint class splitting, and N-way-K-shot episode
//! sampling.
//!
//! Corpus layout on disk: `<root>/<class_name>/<image>.{ppm,pgm,pnm}`.
//! A synthetic corpus can live purely in memory (regenerated per access
//! from its spec) or be materialized to the same layout by `relfsl synth`.

pub mod pnm;
pub mod preprocess;
pub mod synthetic;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use pnm::RawImage;
use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::{Path, PathBuf};
use synthetic::SyntheticSpec;

/// Where a dataset's pixels come from.
#[derive(Clone, Debug)]
pub enum Source {
    Disk(PathBuf),
    Synthetic(SyntheticSpec),
}

#[derive(Clone, Debug)]
enum ImageRef {
    Path(PathBuf),
    /// Original class index and item index into the synthetic spec.
    Synthetic { class: usize, item: usize },
}

/// Read-only image collection grouped by class; images decode lazily.
#[derive(Clone, Debug)]
pub struct Dataset {
    classes: Vec<String>,
    items: Vec<Vec<ImageRef>>,
    source: Source,
}

impl Dataset {
    pub fn classes(&self) -> &[String] {
        &self.classes
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn items_in(&self, class: usize) -> usize {
        self.items[class].len()
    }

    pub fn total_items(&self) -> usize {
        self.items.iter().map(Vec::len).sum()
    }

    pub fn source(&self) -> &Source {
        &self.source
    }

    pub fn load_image(&self, class: usize, item: usize) -> Result<RawImage> {
        match &self.items[class][item] {
            ImageRef::Path(p) => pnm::read_pnm(p),
            ImageRef::Synthetic { class, item } => match &self.source {
                Source::Synthetic(spec) => Ok(synthetic::synthetic_image(spec, *class, *item)),
                Source::Disk(_) => unreachable!("synthetic ref in disk dataset"),
            },
        }
    }
}

/// Load a corpus from `<root>/<class>/<image>.{ppm,pgm,pnm}`.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let mut class_dirs: Vec<PathBuf> = std::fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    class_dirs.sort();
    if class_dirs.is_empty() {
        return Err(Error::Data(format!(
            "no class directories under {}",
            root.display()
        )));
    }
    let mut classes = Vec::new();
    let mut items = Vec::new();
    for dir in class_dirs {
        let name = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| Error::io(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("ppm") | Some("pgm") | Some("pnm")
                )
            })
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Data(format!(
                "class {:?} has no images under {}",
                name,
                dir.display()
            )));
        }
        classes.push(name);
        items.push(files.into_iter().map(ImageRef::Path).collect());
    }
    Ok(Dataset {
        classes,
        items,
        source: Source::Disk(root.to_path_buf()),
    })
}

/// In-memory deterministic synthetic dataset.
pub fn generate_synthetic(
    num_classes: usize,
    per_class: usize,
    image_size: usize,
    seed: u64,
) -> Result<Dataset> {
    if num_classes < 2 || per_class < 2 {
        return Err(Error::Data(format!(
            "synthetic dataset needs at least 2 classes and 2 items per class, got {num_classes}/{per_class}"
        )));
    }
    if image_size < 16 {
        return Err(Error::Data(format!(
            "synthetic image size {image_size} too small (minimum 16)"
        )));
    }
    let spec = SyntheticSpec {
        num_classes,
        per_class,
        image_size,
        seed,
    };
    let classes = (0..num_classes).map(synthetic::class_name).collect();
    let items = (0..num_classes)
        .map(|c| {
            (0..per_class)
                .map(|i| ImageRef::Synthetic { class: c, item: i })
                .collect()
        })
        .collect();
    Ok(Dataset {
        classes,
        items,
        source: Source::Synthetic(spec),
    })
}

/// Disjoint class split: shuffles classes under `seed`, assigns
/// `round(train_fraction * n)` to the training side. Errors if either side
/// would be empty.
pub fn split_classes(dataset: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = dataset.num_classes();
    let n_train = (train_fraction * n as f64).round() as usize;
    if n_train == 0 || n_train >= n {
        return Err(Error::Data(format!(
            "train fraction {train_fraction} gives a {n_train}/{} split of {n} classes; each side needs at least 1 class",
            n - n_train.min(n)
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut train_idx: Vec<usize> = order[..n_train].to_vec();
    let mut test_idx: Vec<usize> = order[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let subset = |idx: &[usize]| Dataset {
        classes: idx.iter().map(|&i| dataset.classes[i].clone()).collect(),
        items: idx.iter().map(|&i| dataset.items[i].clone()).collect(),
        source: dataset.source.clone(),
    };
    Ok((subset(&train_idx), subset(&test_idx)))
}

/// One N-way-K-shot task: preprocessed support and query tensors with
/// fresh 0..N-1 labels.
#[derive(Clone, Debug)]
pub struct Episode<E> {
    /// `[N*K, 3, 84, 84]`, class-major (all shots of episode-label 0 first).
    pub support: Tensor<E>,
    pub support_labels: Vec<usize>,
    /// `[N*n_query, 3, 84, 84]`, class-major.
    pub query: Tensor<E>,
    pub query_labels: Vec<usize>,
    /// Episode label -> dataset class name.
    pub class_map: Vec<String>,
}

impl<E: Scalar> Episode<E> {
    pub fn n_way(&self) -> usize {
        self.class_map.len()
    }

    pub fn k_shot(&self) -> usize {
        self.support_labels.len() / self.class_map.len()
    }

    pub fn n_query_per_class(&self) -> usize {
        self.query_labels.len() / self.class_map.len()
    }
}

/// Sample an episode, choosing classes at random from the dataset.
pub fn sample_episode<E: Scalar, R: Rng>(
    dataset: &Dataset,
    n_way: usize,
    k_shot: usize,
    n_query: usize,
    train_mode: bool,
    rng: &mut R,
) -> Result<Episode<E>> {
    if dataset.num_classes() < n_way {
        return Err(Error::Data(format!(
            "episode needs {n_way} classes but dataset has {}",
            dataset.num_classes()
        )));
    }
    let mut order: Vec<usize> = (0..dataset.num_classes()).collect();
    order.shuffle(rng);
    let classes: Vec<usize> = order[..n_way].to_vec();
    sample_episode_over(dataset, &classes, k_shot, n_query, train_mode, rng)
}

/// Sample an episode over a fixed class list (episode label i = classes[i]).
/// Used to draw same-label-space task pairs for interpolation.
pub fn sample_episode_over<E: Scalar, R: Rng>(
    dataset: &Dataset,
    classes: &[usize],
    k_shot: usize,
    n_query: usize,
    train_mode: bool,
    rng: &mut R,
) -> Result<Episode<E>> {
    let n_way = classes.len();
    let img_elems = 3 * preprocess::CROP * preprocess::CROP;
    let mut support = vec![E::zero(); n_way * k_shot * img_elems];
    let mut query = vec![E::zero(); n_way * n_query * img_elems];
    let mut support_labels = Vec::with_capacity(n_way * k_shot);
    let mut query_labels = Vec::with_capacity(n_way * n_query);
    let mut class_map = Vec::with_capacity(n_way);

    for (label, &class) in classes.iter().enumerate() {
        let available = dataset.items_in(class);
        if available < k_shot + n_query {
            return Err(Error::Data(format!(
                "class {:?} has {available} items; episode needs {} (K={k_shot} + Q={n_query})",
                dataset.classes()[class],
                k_shot + n_query
            )));
        }
        let (support_items, query_items) = disjoint_indices(available, k_shot, n_query, rng);
        for (s, &item) in support_items.iter().enumerate() {
            let img = dataset.load_image(class, item)?;
            let t = preprocess::preprocess::<E, _>(&img, train_mode, rng)?;
            let row = label * k_shot + s;
            support[row * img_elems..(row + 1) * img_elems].copy_from_slice(t.data());
            support_labels.push(label);
        }
        for (q, &item) in query_items.iter().enumerate() {
            let img = dataset.load_image(class, item)?;
            let t = preprocess::preprocess::<E, _>(&img, train_mode, rng)?;
            let row = label * n_query + q;
            query[row * img_elems..(row + 1) * img_elems].copy_from_slice(t.data());
            query_labels.push(label);
        }
        class_map.push(dataset.classes()[class].clone());
    }

    Ok(Episode {
        support: Tensor::new(
            vec![n_way * k_shot, 3, preprocess::CROP, preprocess::CROP],
            support,
        )?,
        support_labels,
        query: Tensor::new(
            vec![n_way * n_query, 3, preprocess::CROP, preprocess::CROP],
            query,
        )?,
        query_labels,
        class_map,
    })
}

/// Draw k+q distinct item indices; the first k become support, the rest
/// queries. Disjointness holds by construction.
fn disjoint_indices<R: Rng>(count: usize, k: usize, q: usize, rng: &mut R) -> (Vec<usize>, Vec<usize>) {
    let mut all: Vec<usize> = (0..count).collect();
    all.shuffle(rng);
    let support = all[..k].to_vec();
    let query = all[k..k + q].to_vec();
    (support, query)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn synth(classes: usize, per_class: usize, seed: u64) -> Dataset {
        generate_synthetic(classes, per_class, 84, seed).unwrap()
    }

    #[test]
    fn synthetic_counts() {
        let ds = synth(5, 20, 7);
        assert_eq!(ds.num_classes(), 5);
        assert_eq!(ds.total_items(), 100);
        let img = ds.load_image(3, 11).unwrap();
        assert_eq!((img.width, img.height), (84, 84));
    }

    #[test]
    fn synthetic_bit_identical_across_builds() {
        let a = synth(3, 4, 9);
        let b = synth(3, 4, 9);
        assert_eq!(a.load_image(2, 3).unwrap(), b.load_image(2, 3).unwrap());
    }

    #[test]
    fn split_is_disjoint_and_exhaustive() {
        let ds = synth(8, 4, 1);
        let (train, test) = split_classes(&ds, 0.75, 42).unwrap();
        assert_eq!(train.num_classes(), 6);
        assert_eq!(test.num_classes(), 2);
        let a: HashSet<_> = train.classes().iter().cloned().collect();
        let b: HashSet<_> = test.classes().iter().cloned().collect();
        assert!(a.is_disjoint(&b));
        let mut all: Vec<_> = a.union(&b).cloned().collect();
        all.sort();
        let mut orig = ds.classes().to_vec();
        orig.sort();
        assert_eq!(all, orig);
    }

    #[test]
    fn split_with_empty_side_errors() {
        let ds = synth(8, 4, 1);
        let err = split_classes(&ds, 1.0, 0).unwrap_err().to_string();
        assert!(err.contains("at least 1 class"), "{err}");
    }

    #[test]
    fn split_is_seed_deterministic() {
        let ds = synth(8, 4, 1);
        let (a, _) = split_classes(&ds, 0.75, 5).unwrap();
        let (b, _) = split_classes(&ds, 0.75, 5).unwrap();
        assert_eq!(a.classes(), b.classes());
    }

    #[test]
    fn five_way_one_shot_fifteen_query_shapes() {
        let ds = synth(7, 20, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ep: Episode<f32> = sample_episode(&ds, 5, 1, 15, true, &mut rng).unwrap();
        assert_eq!(ep.support.shape(), &[5, 3, 84, 84]);
        assert_eq!(ep.query.shape(), &[75, 3, 84, 84]);
        assert_eq!(ep.support_labels, vec![0, 1, 2, 3, 4]);
        assert_eq!(ep.query_labels.len(), 75);
        assert!(ep.query_labels.iter().all(|&l| l < 5));
        for label in 0..5 {
            assert_eq!(ep.query_labels.iter().filter(|&&l| l == label).count(), 15);
        }
    }

    #[test]
    fn two_way_isic_style_counts() {
        let ds = synth(4, 20, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ep: Episode<f32> = sample_episode(&ds, 2, 1, 15, false, &mut rng).unwrap();
        assert_eq!(ep.support.shape()[0], 2);
        assert_eq!(ep.query.shape()[0], 30);
    }

    #[test]
    fn support_and_query_items_are_disjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let (s, q) = disjoint_indices(6, 2, 3, &mut rng);
            let ss: HashSet<_> = s.iter().collect();
            assert!(q.iter().all(|i| !ss.contains(i)));
            assert_eq!(s.len(), 2);
            assert_eq!(q.len(), 3);
        }
    }

    #[test]
    fn insufficient_items_error_carries_counts() {
        let ds = synth(3, 4, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = sample_episode::<f32, _>(&ds, 3, 2, 5, true, &mut rng)
            .unwrap_err()
            .to_string();
        assert!(err.contains("4 items") && err.contains("7"), "{err}");
    }

    #[test]
    fn nearest_centroid_on_raw_pixels_beats_chance() {
        // separability sanity check for the synthetic families
        let ds = synth(5, 8, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ep: Episode<f64> = sample_episode(&ds, 5, 3, 4, false, &mut rng).unwrap();
        let dim = 3 * 84 * 84;
        let mut centroids = vec![vec![0.0f64; dim]; 5];
        for (row, &label) in ep.support_labels.iter().enumerate() {
            for i in 0..dim {
                centroids[label][i] += ep.support.data()[row * dim + i] / 3.0;
            }
        }
        let mut correct = 0;
        for (row, &label) in ep.query_labels.iter().enumerate() {
            let x = &ep.query.data()[row * dim..(row + 1) * dim];
            let mut best = (f64::INFINITY, 0);
            for (c, cen) in centroids.iter().enumerate() {
                let d: f64 = x.iter().zip(cen).map(|(a, b)| (a - b) * (a - b)).sum();
                if d < best.0 {
                    best = (d, c);
                }
            }
            if best.1 == label {
                correct += 1;
            }
        }
        let acc = correct as f64 / ep.query_labels.len() as f64;
        assert!(acc > 0.2, "nearest-centroid accuracy {acc} not above chance");
    }

    #[test]
    fn disk_roundtrip_matches_memory() {
        let ds = synth(3, 3, 13);
        let dir = tempfile::tempdir().unwrap();
        for c in 0..3 {
            let cdir = dir.path().join(&ds.classes()[c]);
            std::fs::create_dir_all(&cdir).unwrap();
            for i in 0..3 {
                let img = ds.load_image(c, i).unwrap();
                pnm::write_ppm(&cdir.join(format!("{i:03}.ppm")), &img).unwrap();
            }
        }
        let loaded = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded.classes(), ds.classes());
        assert_eq!(loaded.load_image(1, 2).unwrap(), ds.load_image(1, 2).unwrap());
    }

    #[test]
    fn empty_root_errors() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(err.contains("no class directories"), "{err}");
    }
}
