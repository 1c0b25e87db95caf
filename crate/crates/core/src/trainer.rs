//! The co-teaching loop.
//!
//! Per epoch: both mean nets embed the whole dataset, each embedding is
//! clustered with its own scheduled parameter, outliers are dropped, each
//! clustering initializes its memory bank, and both Davies-Bouldin indices
//! decide whether consistent sample mining is active for the epoch.
//!
//! Per iteration: each clustering yields a P x K batch, optionally mined
//! against its own bank with its own mean net. Net 1 then learns from
//! clustering 2's batch, labels and bank, and net 2 from clustering 1's. The
//! features each net produced update the bank it was contrasted against, and
//! both mean nets take an EMA step.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clustering::{self, pseudo_labels, ClusterResult, TrainingSet, OUTLIER};
use crate::config::{ClustererKind, RunConfig};
use crate::csm::{self, CsmReport};
use crate::datagen::{self, split_query_gallery, Dataset, QueryGallerySplit};
use crate::encoder::{self, forward, loss_and_grad, EncoderParams, LossOutput, MeanNet};
use crate::eval::{self, LabeledSet, RetrievalResult};
use crate::linalg::{dot, Matrix};
use crate::memory::MemoryBank;
use crate::metricspace::k_reciprocal_jaccard;
use crate::{Error, Result};

const BATCH_STREAMS: [u64; 2] = [1, 2];
const KMEANS_STREAM: u64 = 3;

/// One P x K batch: dataset positions and their pseudo labels.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Batch {
    pub positions: Vec<usize>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn subset(&self, keep: &[usize]) -> Batch {
        Batch {
            positions: keep.iter().map(|&i| self.positions[i]).collect(),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// Samples `p` distinct classes uniformly, then `k` members of each: without
/// replacement when the class has at least `k` members, with replacement
/// otherwise. Returns the batch and whether `p` had to be lowered.
pub fn pk_sample(set: &TrainingSet, p: usize, k: usize, rng: &mut impl Rng) -> (Batch, bool) {
    let members = set.members();
    let lowered = p > set.num_classes;
    let p = p.min(set.num_classes);
    let mut batch = Batch::default();
    for class in index::sample(rng, set.num_classes, p) {
        let m = &members[class];
        if m.len() >= k {
            for i in index::sample(rng, m.len(), k) {
                batch.positions.push(m[i]);
            }
        } else {
            for _ in 0..k {
                batch.positions.push(m[rng.random_range(0..m.len())]);
            }
        }
        batch.labels.extend(std::iter::repeat_n(class, k));
    }
    (batch, lowered)
}

/// Per-epoch log row. Written to the metrics CSV in field order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub skipped: bool,
    pub p1: f64,
    pub p2: f64,
    pub clusters1: usize,
    pub clusters2: usize,
    pub outliers1: usize,
    pub outliers2: usize,
    pub dbi1: Option<f64>,
    pub dbi2: Option<f64>,
    pub gate: bool,
    pub iterations: usize,
    pub skipped_steps: usize,
    pub consistent: usize,
    pub inconsistent: usize,
    pub inconsistent_correct: usize,
    pub inconsistent_incorrect: usize,
    /// Fraction of non-outlier samples whose pseudo label is correct under the
    /// one-to-one cluster/identity matching, per clustering.
    pub label_accuracy1: f64,
    pub label_accuracy2: f64,
    pub loss1: f64,
    pub loss2: f64,
    pub lr: f64,
    pub map1: f64,
    pub map2: f64,
    pub top1_1: f64,
    pub top5_1: f64,
    pub top10_1: f64,
    pub top1_2: f64,
    pub top5_2: f64,
    pub top10_2: f64,
    /// Mean cosine similarity between the two mean nets' embeddings of the
    /// same sample, over the whole dataset.
    pub mean_net_cosine: f64,
}

impl EpochMetrics {
    pub const COLUMNS: [&'static str; 31] = [
        "epoch",
        "skipped",
        "p1",
        "p2",
        "clusters1",
        "clusters2",
        "outliers1",
        "outliers2",
        "dbi1",
        "dbi2",
        "gate",
        "iterations",
        "skipped_steps",
        "consistent",
        "inconsistent",
        "inconsistent_correct",
        "inconsistent_incorrect",
        "label_accuracy1",
        "label_accuracy2",
        "loss1",
        "loss2",
        "lr",
        "map1",
        "map2",
        "top1_1",
        "top5_1",
        "top10_1",
        "top1_2",
        "top5_2",
        "top10_2",
        "mean_net_cosine",
    ];

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        [
            self.epoch.to_string(),
            self.skipped.to_string(),
            self.p1.to_string(),
            self.p2.to_string(),
            self.clusters1.to_string(),
            self.clusters2.to_string(),
            self.outliers1.to_string(),
            self.outliers2.to_string(),
            opt(self.dbi1),
            opt(self.dbi2),
            self.gate.to_string(),
            self.iterations.to_string(),
            self.skipped_steps.to_string(),
            self.consistent.to_string(),
            self.inconsistent.to_string(),
            self.inconsistent_correct.to_string(),
            self.inconsistent_incorrect.to_string(),
            self.label_accuracy1.to_string(),
            self.label_accuracy2.to_string(),
            self.loss1.to_string(),
            self.loss2.to_string(),
            self.lr.to_string(),
            self.map1.to_string(),
            self.map2.to_string(),
            self.top1_1.to_string(),
            self.top5_1.to_string(),
            self.top10_1.to_string(),
            self.top1_2.to_string(),
            self.top5_2.to_string(),
            self.top10_2.to_string(),
            self.mean_net_cosine.to_string(),
        ]
        .join(",")
    }
}

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = EpochMetrics::COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Everything produced by one clustering at the start of an epoch.
#[derive(Debug, Clone)]
pub struct ClusteringState {
    pub param: f64,
    pub result: ClusterResult,
    pub set: TrainingSet,
    pub bank: MemoryBank,
    /// Per dataset position: is the pseudo label correct under the one-to-one
    /// cluster/identity matching? Diagnostics only.
    pub label_correct: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub metrics: Vec<EpochMetrics>,
    /// 1 or 2: the mean net with the higher final mAP.
    pub best_net: usize,
    pub best_params: EncoderParams,
    pub best_eval: RetrievalResult,
    /// 1 or 2: the mean net whose last clustering had the lower DBI.
    pub label_free_choice: usize,
    pub final_params: [EncoderParams; 2],
}

/// Outcome of the gradient half of an iteration, before any state changes.
#[derive(Debug, Clone)]
pub struct Updates {
    /// `steps[0]` trains net 1 on clustering 2's batch; `None` when the mined
    /// batch was empty.
    pub steps: [Option<LossOutput>; 2],
    /// Batches the steps were computed on (after mining).
    pub batches: [Batch; 2],
    pub report: CsmReport,
}

pub struct Trainer {
    config: RunConfig,
    dataset: Dataset,
    inputs: Matrix,
    split: QueryGallerySplit,
    nets: [EncoderParams; 2],
    means: [MeanNet; 2],
    clusterings: Option<[ClusteringState; 2]>,
    gate: bool,
    batch_rngs: [ChaCha8Rng; 2],
    epoch: usize,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Ground-truth correctness of pseudo labels under a one-to-one matching:
/// each cluster is matched to its majority identity, and each identity keeps
/// only its largest matched cluster. Fragments of a split identity and
/// minority members of a merged cluster count as incorrect.
fn label_correctness(result: &ClusterResult, identities: &[usize]) -> (Vec<bool>, f64) {
    let mut votes: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); result.num_clusters];
    for (&l, &id) in result.labels.iter().zip(identities) {
        if l != OUTLIER {
            *votes[l as usize].entry(id).or_default() += 1;
        }
    }
    // (majority identity, its count) per cluster; ties go to the smaller identity
    let majority: Vec<(usize, usize)> = votes
        .iter()
        .map(|v| {
            v.iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map_or((usize::MAX, 0), |(&id, &n)| (id, n))
        })
        .collect();
    let mut primary: BTreeMap<usize, usize> = BTreeMap::new();
    for (c, &(id, n)) in majority.iter().enumerate() {
        let e = primary.entry(id).or_insert(c);
        if majority[*e].1 < n {
            *e = c;
        }
    }
    let correct: Vec<bool> = result
        .labels
        .iter()
        .zip(identities)
        .map(|(&l, &id)| l != OUTLIER && primary.get(&id) == Some(&(l as usize)))
        .collect();
    let members = result.len() - result.num_outliers();
    let purity = correct.iter().filter(|&&c| c).count() as f64 / members.max(1) as f64;
    (correct, purity)
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let dataset = datagen::generate(&config.dataset)?;
        Self::with_dataset(config, dataset)
    }

    /// Uses a pre-generated dataset (ablation cells share one).
    pub fn with_dataset(config: RunConfig, dataset: Dataset) -> Result<Self> {
        config.validate()?;
        let inputs = dataset.inputs();
        let split = split_query_gallery(&dataset.samples, config.query_fraction, config.dataset.seed)?;
        let mut init_rng = stream_rng(config.seed, 0);
        let theta = EncoderParams::init(config.encoder_dims(), &mut init_rng);
        let means = [
            MeanNet::new(&theta, config.alpha)?,
            MeanNet::new(&theta, config.alpha)?,
        ];
        let batch_rngs = BATCH_STREAMS.map(|s| stream_rng(config.seed, s));
        Ok(Self {
            nets: [theta.clone(), theta],
            means,
            clusterings: None,
            gate: false,
            batch_rngs,
            epoch: 0,
            config,
            dataset,
            inputs,
            split,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn dataset(&self) -> &Dataset {
        &self.dataset
    }

    pub fn nets(&self) -> &[EncoderParams; 2] {
        &self.nets
    }

    pub fn means(&self) -> &[MeanNet; 2] {
        &self.means
    }

    pub fn clusterings(&self) -> Option<&[ClusteringState; 2]> {
        self.clusterings.as_ref()
    }

    pub fn clusterings_mut(&mut self) -> Option<&mut [ClusteringState; 2]> {
        self.clusterings.as_mut()
    }

    pub fn gate(&self) -> bool {
        self.gate
    }

    /// Embeddings of the full dataset by both mean nets.
    pub fn mean_features(&self) -> Result<[Matrix; 2]> {
        Ok([
            forward(self.means[0].params(), &self.inputs)?,
            forward(self.means[1].params(), &self.inputs)?,
        ])
    }

    /// Clustering parameters for `epoch`.
    pub fn params_at(&self, epoch: usize) -> Result<(f64, f64)> {
        let schedule = self.config.schedule();
        if self.config.use_dcdp {
            schedule.params_at(epoch)
        } else {
            schedule.validate()?;
            Ok(schedule.fixed())
        }
    }

    fn cluster(&self, features: &Matrix, param: f64, epoch: usize) -> Result<ClusterResult> {
        let c = &self.config;
        let n = features.rows();
        let k1 = c.k1.min(n.saturating_sub(1)).max(1);
        let k2 = c.k2.min(k1);
        let mut result = match c.clusterer {
            ClustererKind::Dbscan => {
                let dist = k_reciprocal_jaccard(features, k1, k2, c.jaccard_lambda)?;
                clustering::dbscan(&dist, param, c.min_pts)?
            }
            ClustererKind::Infomap => {
                let dist = k_reciprocal_jaccard(features, k1, k2, c.jaccard_lambda)?;
                clustering::infomap(&dist, param)?
            }
            ClustererKind::Kmeans => {
                // both clusterings draw the same seeds so equal inputs give equal outputs
                let mut rng = stream_rng(c.seed.wrapping_add(epoch as u64), KMEANS_STREAM);
                clustering::kmeans(features, (param as usize).min(n), &mut rng)?
            }
        };
        result.score(features)?;
        Ok(result)
    }

    /// Clusters both mean nets' features and re-initializes both banks.
    /// On `Error::NoClusters` the previous state is left untouched.
    pub fn epoch_setup(&mut self, epoch: usize) -> Result<()> {
        let (p1, p2) = self.params_at(epoch)?;
        let features = self.mean_features()?;
        let identities = self.dataset.identity_labels();
        let mut states = Vec::with_capacity(2);
        for (feats, param) in features.iter().zip([p1, p2]) {
            let result = self.cluster(feats, param, epoch)?;
            let set = pseudo_labels(&result)?;
            let bank = MemoryBank::init_from_clusters(
                feats,
                &result.labels,
                result.num_clusters,
                self.config.beta,
                self.config.normalize_memory,
            )?;
            let (label_correct, _) = label_correctness(&result, &identities);
            states.push(ClusteringState {
                param,
                result,
                set,
                bank,
                label_correct,
            });
        }
        let second = states.pop().expect("two clusterings");
        let first = states.pop().expect("two clusterings");
        self.gate = self.config.use_csm
            && csm::gate(first.result.dbi, second.result.dbi, self.config.gamma);
        self.clusterings = Some([first, second]);
        self.epoch = epoch;
        Ok(())
    }

    /// Draws both batches and mines them (mining is always run for the
    /// report, but only applied while the gate is open).
    pub fn draw_batches(&mut self) -> Result<([Batch; 2], CsmReport)> {
        let states = self.clusterings.as_ref().ok_or(Error::NoClusters)?;
        let (p, k) = (self.config.p_ids, self.config.k_inst);
        let mut batches: [Batch; 2] = Default::default();
        let mut report = CsmReport::default();
        for t in 0..2 {
            let (batch, _) = pk_sample(&states[t].set, p, k, &mut self.batch_rngs[t]);
            let inputs = self.inputs.select_rows(&batch.positions);
            let feats = forward(self.means[t].params(), &inputs)?;
            let correct: Vec<bool> = batch
                .positions
                .iter()
                .map(|&i| states[t].label_correct[i])
                .collect();
            let (kept, r) = csm::mine(&feats, &batch.labels, &states[t].bank, Some(&correct))?;
            report.merge(&r);
            batches[t] = if self.gate { batch.subset(&kept) } else { batch };
        }
        Ok((batches, report))
    }

    /// Losses and gradients for both nets, cross-wired: net 1 sees batch 2
    /// against bank 2, net 2 sees batch 1 against bank 1.
    pub fn compute_updates(&self, batches: [Batch; 2], report: CsmReport) -> Result<Updates> {
        let states = self.clusterings.as_ref().ok_or(Error::NoClusters)?;
        let tau = self.config.tau;
        let step = |net: usize| -> Result<Option<LossOutput>> {
            let peer = 1 - net;
            let batch = &batches[peer];
            if batch.is_empty() {
                return Ok(None);
            }
            let inputs = self.inputs.select_rows(&batch.positions);
            loss_and_grad(&self.nets[net], &inputs, &batch.labels, &states[peer].bank, tau).map(Some)
        };
        let (a, b) = rayon::join(|| step(0), || step(1));
        Ok(Updates {
            steps: [a?, b?],
            batches,
            report,
        })
    }

    /// Applies SGD steps, bank momentum updates and EMA updates.
    pub fn apply_updates(&mut self, updates: &Updates) -> Result<()> {
        let lr = encoder::lr_at_epoch(self.config.lr, self.epoch, self.config.epochs);
        let states = self.clusterings.as_mut().ok_or(Error::NoClusters)?;
        for net in 0..2 {
            let peer = 1 - net;
            if let Some(out) = &updates.steps[net] {
                states[peer]
                    .bank
                    .update_batch(&updates.batches[peer].labels, &out.features)?;
                self.nets[net].sgd_step(&out.grad, lr, self.config.weight_decay)?;
            }
        }
        for net in 0..2 {
            self.means[net].update(&self.nets[net])?;
        }
        Ok(())
    }

    /// One full iteration; returns the updates that were applied.
    pub fn iteration(&mut self) -> Result<Updates> {
        let (batches, report) = self.draw_batches()?;
        let updates = self.compute_updates(batches, report)?;
        self.apply_updates(&updates)?;
        Ok(updates)
    }

    fn evaluate_net(&self, features: &Matrix) -> Result<RetrievalResult> {
        let ids = self.dataset.identity_labels();
        let cams = self.dataset.cameras();
        let pick = |idx: &[usize], v: &[usize]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let qf = features.select_rows(&self.split.query);
        let gf = features.select_rows(&self.split.gallery);
        let (qi, qc) = (pick(&self.split.query, &ids), pick(&self.split.query, &cams));
        let (gi, gc) = (pick(&self.split.gallery, &ids), pick(&self.split.gallery, &cams));
        eval::evaluate(
            &LabeledSet {
                features: &qf,
                identities: &qi,
                cameras: &qc,
            },
            &LabeledSet {
                features: &gf,
                identities: &gi,
                cameras: &gc,
            },
        )
    }

    /// Evaluates an arbitrary encoder on this run's query/gallery split.
    pub fn evaluate_params(&self, params: &EncoderParams) -> Result<RetrievalResult> {
        self.evaluate_net(&forward(params, &self.inputs)?)
    }

    /// Evaluates both mean nets on the query/gallery split.
    pub fn evaluate(&self) -> Result<[RetrievalResult; 2]> {
        let feats = self.mean_features()?;
        Ok([self.evaluate_net(&feats[0])?, self.evaluate_net(&feats[1])?])
    }

    fn run_epoch(&mut self, epoch: usize) -> Result<EpochMetrics> {
        let (p1, p2) = self.params_at(epoch)?;
        let lr = encoder::lr_at_epoch(self.config.lr, epoch, self.config.epochs);
        let mut m = EpochMetrics {
            epoch,
            skipped: false,
            p1,
            p2,
            clusters1: 0,
            clusters2: 0,
            outliers1: 0,
            outliers2: 0,
            dbi1: None,
            dbi2: None,
            gate: false,
            iterations: 0,
            skipped_steps: 0,
            consistent: 0,
            inconsistent: 0,
            inconsistent_correct: 0,
            inconsistent_incorrect: 0,
            label_accuracy1: 0.0,
            label_accuracy2: 0.0,
            loss1: 0.0,
            loss2: 0.0,
            lr,
            map1: 0.0,
            map2: 0.0,
            top1_1: 0.0,
            top5_1: 0.0,
            top10_1: 0.0,
            top1_2: 0.0,
            top5_2: 0.0,
            top10_2: 0.0,
            mean_net_cosine: 0.0,
        };

        match self.epoch_setup(epoch) {
            Ok(()) => {
                let identities = self.dataset.identity_labels();
                let states = self.clusterings.as_ref().expect("set up");
                m.clusters1 = states[0].result.num_clusters;
                m.clusters2 = states[1].result.num_clusters;
                m.outliers1 = states[0].result.num_outliers();
                m.outliers2 = states[1].result.num_outliers();
                m.dbi1 = states[0].result.dbi;
                m.dbi2 = states[1].result.dbi;
                m.label_accuracy1 = label_correctness(&states[0].result, &identities).1;
                m.label_accuracy2 = label_correctness(&states[1].result, &identities).1;
                m.gate = self.gate;
                let mut loss_sum = [0.0; 2];
                let mut loss_n = [0usize; 2];
                for _ in 0..self.config.iterations {
                    let u = self.iteration()?;
                    m.iterations += 1;
                    m.consistent += u.report.consistent;
                    m.inconsistent += u.report.inconsistent;
                    m.inconsistent_correct += u.report.inconsistent_correct;
                    m.inconsistent_incorrect += u.report.inconsistent_incorrect;
                    for net in 0..2 {
                        match &u.steps[net] {
                            Some(out) => {
                                loss_sum[net] += out.loss;
                                loss_n[net] += 1;
                            }
                            None => m.skipped_steps += 1,
                        }
                    }
                }
                m.loss1 = loss_sum[0] / loss_n[0].max(1) as f64;
                m.loss2 = loss_sum[1] / loss_n[1].max(1) as f64;
            }
            Err(Error::NoClusters) => {
                m.skipped = true;
                self.clusterings = None;
            }
            Err(e) => return Err(e),
        }

        let feats = self.mean_features()?;
        let r1 = self.evaluate_net(&feats[0])?;
        let r2 = self.evaluate_net(&feats[1])?;
        m.map1 = r1.map;
        m.map2 = r2.map;
        [m.top1_1, m.top5_1, m.top10_1] = r1.cmc;
        [m.top1_2, m.top5_2, m.top10_2] = r2.cmc;
        let n = feats[0].rows();
        m.mean_net_cosine = (0..n)
            .map(|i| dot(feats[0].row(i), feats[1].row(i)))
            .sum::<f64>()
            / n as f64;
        Ok(m)
    }

    /// Runs every epoch, calling `on_epoch` after each with the log so far.
    pub fn run_with(
        mut self,
        mut on_epoch: impl FnMut(&[EpochMetrics]) -> Result<()>,
    ) -> Result<RunResult> {
        let mut metrics = Vec::with_capacity(self.config.epochs);
        for epoch in 0..self.config.epochs {
            let row = self.run_epoch(epoch).map_err(|e| Error::Epoch {
                epoch,
                source: Box::new(e),
            })?;
            metrics.push(row);
            on_epoch(&metrics)?;
        }

        let [r1, r2] = self.evaluate()?;
        let best_net = if r2.map > r1.map { 2 } else { 1 };
        let last_dbi = |sel: fn(&EpochMetrics) -> Option<f64>| {
            metrics.iter().rev().find_map(sel).unwrap_or(f64::INFINITY)
        };
        let label_free_choice = if last_dbi(|m| m.dbi2) < last_dbi(|m| m.dbi1) { 2 } else { 1 };
        let [m1, m2] = self.means;
        let best_params = if best_net == 1 { m1.params().clone() } else { m2.params().clone() };
        Ok(RunResult {
            metrics,
            best_net,
            best_params,
            best_eval: if best_net == 1 { r1 } else { r2 },
            label_free_choice,
            final_params: [m1.params().clone(), m2.params().clone()],
        })
    }

    pub fn run(self) -> Result<RunResult> {
        self.run_with(|_| Ok(()))
    }
}

/// Runs a full training from a config.
pub fn run(config: &RunConfig) -> Result<RunResult> {
    Trainer::new(config.clone())?.run()
}
