//! Synthetic re-identification data.
//!
//! Identities are unit-norm centers. A configurable fraction of disjoint
//! identity pairs is pulled close together so that clustering confuses them,
//! and every camera applies its own fixed linear distortion before additive
//! Gaussian noise, which tends to split an identity by camera.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::linalg::{dot, normalize, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub n_identities: usize,
    pub samples_per_identity: usize,
    pub d_in: usize,
    pub n_cameras: usize,
    pub intra_noise_sigma: f64,
    /// Fraction of disjoint identity pairs `(0,1), (2,3), ...` made confusable.
    pub confusable_fraction: f64,
    /// Chord distance between the two centers of a confusable pair.
    pub confusable_gap: f64,
    pub camera_distortion_scale: f64,
    pub seed: u64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        Self {
            n_identities: 64,
            samples_per_identity: 16,
            d_in: 32,
            n_cameras: 4,
            intra_noise_sigma: 0.06,
            confusable_fraction: 0.2,
            confusable_gap: 0.35,
            camera_distortion_scale: 0.8,
            seed: 0,
        }
    }
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_identities < 2 {
            return Err(Error::config("n_identities", "must be at least 2"));
        }
        if self.samples_per_identity < 2 {
            return Err(Error::config("samples_per_identity", "must be at least 2"));
        }
        if self.d_in < 2 {
            return Err(Error::config("d_in", "must be at least 2"));
        }
        if self.n_cameras < 2 {
            return Err(Error::config("n_cameras", "must be at least 2"));
        }
        if !(self.intra_noise_sigma.is_finite() && self.intra_noise_sigma >= 0.0) {
            return Err(Error::config("intra_noise_sigma", "must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.confusable_fraction) {
            return Err(Error::config("confusable_fraction", "must lie in [0, 1]"));
        }
        if !(self.confusable_gap > 0.0 && self.confusable_gap <= 2.0) {
            return Err(Error::config("confusable_gap", "must lie in (0, 2]"));
        }
        if !(self.camera_distortion_scale.is_finite() && self.camera_distortion_scale >= 0.0) {
            return Err(Error::config(
                "camera_distortion_scale",
                "must be finite and >= 0",
            ));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.n_identities * self.samples_per_identity
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identity {
    pub id: usize,
    pub center: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub index: usize,
    pub input: Vec<f64>,
    /// Ground truth; only evaluation code may look at it.
    pub identity: usize,
    pub camera: usize,
}

/// What training code is allowed to see of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainView<'a> {
    pub index: usize,
    pub input: &'a [f64],
    pub camera: usize,
}

impl Sample {
    pub fn view(&self) -> TrainView<'_> {
        TrainView {
            index: self.index,
            input: &self.input,
            camera: self.camera,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub identities: Vec<Identity>,
    /// Index pairs of identities whose centers were placed `confusable_gap` apart.
    pub confusable_pairs: Vec<(usize, usize)>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn d_in(&self) -> usize {
        self.samples.first().map_or(0, |s| s.input.len())
    }

    pub fn inputs(&self) -> Matrix {
        let rows: Vec<&[f64]> = self.samples.iter().map(|s| s.input.as_slice()).collect();
        Matrix::from_rows(&rows)
    }

    pub fn identity_labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.identity).collect()
    }

    pub fn cameras(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.camera).collect()
    }
}

fn gaussian_vec(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.sample(StandardNormal)).collect()
}

fn random_unit(rng: &mut impl Rng, d: usize) -> Vec<f64> {
    loop {
        let mut v = gaussian_vec(rng, d);
        if normalize(&mut v) > 1e-12 {
            return v;
        }
    }
}

/// Point on the unit sphere at chord distance `gap` from the unit vector `a`.
fn place_at_gap(rng: &mut impl Rng, a: &[f64], gap: f64) -> Vec<f64> {
    let angle = 2.0 * (gap / 2.0).asin();
    let u = loop {
        let mut u = gaussian_vec(rng, a.len());
        let proj = dot(&u, a);
        u.iter_mut().zip(a).for_each(|(x, y)| *x -= proj * y);
        if normalize(&mut u) > 1e-12 {
            break u;
        }
    };
    let mut b: Vec<f64> = a
        .iter()
        .zip(&u)
        .map(|(x, y)| angle.cos() * x + angle.sin() * y)
        .collect();
    normalize(&mut b);
    b
}

/// Generates a dataset; deterministic in `spec.seed`.
pub fn generate(spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let d = spec.d_in;

    let mut centers: Vec<Vec<f64>> = (0..spec.n_identities)
        .map(|_| random_unit(&mut rng, d))
        .collect();

    let n_pairs = spec.n_identities / 2;
    let n_confusable = (spec.confusable_fraction * n_pairs as f64).round() as usize;
    let mut pair_ids: Vec<usize> = (0..n_pairs).collect();
    pair_ids.shuffle(&mut rng);
    let mut confusable_pairs: Vec<(usize, usize)> = pair_ids[..n_confusable]
        .iter()
        .map(|&p| (2 * p, 2 * p + 1))
        .collect();
    confusable_pairs.sort_unstable();
    for &(a, b) in &confusable_pairs {
        centers[b] = place_at_gap(&mut rng, &centers[a], spec.confusable_gap);
    }

    // Per-camera map I + s * G / sqrt(d).
    let scale = spec.camera_distortion_scale / (d as f64).sqrt();
    let cameras: Vec<Matrix> = (0..spec.n_cameras)
        .map(|_| {
            let mut m = Matrix::from_vec(d, d, gaussian_vec(&mut rng, d * d));
            m.as_mut_slice().iter_mut().for_each(|x| *x *= scale);
            for i in 0..d {
                let v = m.get(i, i) + 1.0;
                m.set(i, i, v);
            }
            m
        })
        .collect();

    let mut raw = Vec::with_capacity(spec.len());
    for (id, center) in centers.iter().enumerate() {
        let offset = rng.random_range(0..spec.n_cameras);
        for s in 0..spec.samples_per_identity {
            let camera = (offset + s) % spec.n_cameras;
            let m = &cameras[camera];
            let input: Vec<f64> = (0..d)
                .map(|i| {
                    let noise: f64 = rng.sample(StandardNormal);
                    dot(m.row(i), center) + spec.intra_noise_sigma * noise
                })
                .collect();
            raw.push((id, camera, input));
        }
    }
    raw.shuffle(&mut rng);

    let samples = raw
        .into_iter()
        .enumerate()
        .map(|(index, (identity, camera, input))| Sample {
            index,
            input,
            identity,
            camera,
        })
        .collect();
    let identities = centers
        .into_iter()
        .enumerate()
        .map(|(id, center)| Identity { id, center })
        .collect();
    Ok(Dataset {
        samples,
        identities,
        confusable_pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryGallerySplit {
    /// Sample positions in the query set, ascending.
    pub query: Vec<usize>,
    /// Sample positions in the gallery set, ascending.
    pub gallery: Vec<usize>,
    /// Identities that received no query (single sample or a single camera).
    pub excluded_identities: usize,
}

/// Splits samples so that every query keeps at least one gallery sample of
/// the same identity from a different camera.
pub fn split_query_gallery(
    samples: &[Sample],
    query_fraction: f64,
    seed: u64,
) -> Result<QueryGallerySplit> {
    if !(query_fraction > 0.0 && query_fraction < 1.0) {
        return Err(Error::config("query_fraction", "must lie in (0, 1)"));
    }
    let mut by_identity: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (pos, s) in samples.iter().enumerate() {
        by_identity.entry(s.identity).or_default().push(pos);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut is_query = vec![false; samples.len()];
    let mut excluded = 0;
    for members in by_identity.values() {
        let target = (query_fraction * members.len() as f64).round() as usize;
        if members.len() < 2 {
            excluded += 1;
            continue;
        }
        let mut order = members.clone();
        order.shuffle(&mut rng);
        let mut chosen: Vec<usize> = Vec::new();
        for &cand in &order {
            if chosen.len() >= target {
                break;
            }
            chosen.push(cand);
            let every_query_matched = chosen.iter().all(|&q| {
                members.iter().any(|&g| {
                    !chosen.contains(&g) && samples[g].camera != samples[q].camera
                })
            });
            if !every_query_matched {
                chosen.pop();
            }
        }
        if chosen.is_empty() {
            excluded += 1;
        }
        for q in chosen {
            is_query[q] = true;
        }
    }

    let (query, gallery): (Vec<usize>, Vec<usize>) =
        (0..samples.len()).partition(|&i| is_query[i]);
    Ok(QueryGallerySplit {
        query,
        gallery,
        excluded_identities: excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::{BTreeMap, BTreeSet};

    fn small() -> DatasetSpec {
        DatasetSpec {
            n_identities: 8,
            samples_per_identity: 4,
            d_in: 6,
            ..DatasetSpec::default()
        }
    }

    #[test]
    fn deterministic_by_seed() {
        let spec = DatasetSpec {
            seed: 7,
            ..small()
        };
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        for (x, y) in a.samples.iter().zip(&b.samples) {
            assert_eq!(x.identity, y.identity);
            let xb: Vec<u64> = x.input.iter().map(|v| v.to_bits()).collect();
            let yb: Vec<u64> = y.input.iter().map(|v| v.to_bits()).collect();
            assert_eq!(xb, yb);
        }
    }

    #[test]
    fn zero_noise_reproduces_centers() {
        let spec = DatasetSpec {
            intra_noise_sigma: 0.0,
            camera_distortion_scale: 0.0,
            ..small()
        };
        let ds = generate(&spec).unwrap();
        for s in &ds.samples {
            assert_eq!(s.input, ds.identities[s.identity].center);
        }
    }

    #[test]
    fn counts_and_camera_coverage() {
        let spec = DatasetSpec {
            n_identities: 64,
            samples_per_identity: 16,
            ..DatasetSpec::default()
        };
        let ds = generate(&spec).unwrap();
        assert_eq!(ds.len(), 1024);
        let mut cams: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for s in &ds.samples {
            cams.entry(s.identity).or_default().insert(s.camera);
            *counts.entry(s.identity).or_default() += 1;
            assert!(s.input.iter().all(|v| v.is_finite()));
        }
        assert_eq!(cams.len(), 64);
        assert!(cams.values().all(|c| c.len() >= 2));
        assert!(counts.values().all(|&c| c == 16));
    }

    #[test]
    fn confusable_pairs_are_closer() {
        let spec = DatasetSpec {
            n_identities: 40,
            confusable_fraction: 0.5,
            confusable_gap: 0.3,
            ..small()
        };
        let ds = generate(&spec).unwrap();
        assert_eq!(ds.confusable_pairs.len(), 10);
        let dist = |a: usize, b: usize| {
            crate::linalg::euclidean(&ds.identities[a].center, &ds.identities[b].center)
        };
        let conf: Vec<f64> = ds.confusable_pairs.iter().map(|&(a, b)| dist(a, b)).collect();
        for d in &conf {
            assert!((d - 0.3).abs() < 1e-9);
        }
        let pairs: BTreeSet<(usize, usize)> = ds.confusable_pairs.iter().copied().collect();
        let mut other = Vec::new();
        for a in 0..40 {
            for b in a + 1..40 {
                if !pairs.contains(&(a, b)) {
                    other.push(dist(a, b));
                }
            }
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean(&conf) < mean(&other));
    }

    #[test]
    fn invalid_fields_are_named() {
        let spec = DatasetSpec {
            confusable_fraction: 1.5,
            ..small()
        };
        match generate(&spec) {
            Err(Error::Config { field, .. }) => assert_eq!(field, "confusable_fraction"),
            other => panic!("unexpected {other:?}"),
        }
        let spec = DatasetSpec {
            intra_noise_sigma: -1.0,
            ..small()
        };
        assert!(matches!(
            spec.validate(),
            Err(Error::Config {
                field: "intra_noise_sigma",
                ..
            })
        ));
    }

    #[test]
    fn split_partition_arithmetic() {
        let spec = DatasetSpec {
            n_identities: 64,
            samples_per_identity: 16,
            ..DatasetSpec::default()
        };
        let ds = generate(&spec).unwrap();
        let split = split_query_gallery(&ds.samples, 0.25, 3).unwrap();
        assert_eq!(split.query.len(), 256);
        assert_eq!(split.gallery.len(), 768);
        let q: BTreeSet<_> = split.query.iter().collect();
        assert!(split.gallery.iter().all(|g| !q.contains(g)));
        for &qi in &split.query {
            let s = &ds.samples[qi];
            assert!(split.gallery.iter().any(|&g| {
                ds.samples[g].identity == s.identity && ds.samples[g].camera != s.camera
            }));
        }
        assert_eq!(split, split_query_gallery(&ds.samples, 0.25, 3).unwrap());
    }

    #[test]
    fn single_camera_identity_yields_no_queries() {
        let mk = |index, identity, camera| Sample {
            index,
            input: vec![0.0, 1.0],
            identity,
            camera,
        };
        let samples = vec![
            mk(0, 0, 1),
            mk(1, 0, 1),
            mk(2, 0, 1),
            mk(3, 0, 1),
            mk(4, 1, 0),
            mk(5, 1, 1),
            mk(6, 1, 0),
            mk(7, 1, 1),
            mk(8, 2, 0),
        ];
        let split = split_query_gallery(&samples, 0.5, 0).unwrap();
        assert!(split.query.iter().all(|&q| samples[q].identity == 1));
        assert_eq!(split.query.len(), 2);
        assert_eq!(split.excluded_identities, 2);
    }

    #[test]
    fn split_rejects_bad_fraction() {
        assert!(split_query_gallery(&[], 1.0, 0).is_err());
        assert!(split_query_gallery(&[], 0.0, 0).is_err());
    }
}
