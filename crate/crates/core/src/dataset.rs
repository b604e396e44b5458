//! Day-based train/validation/test splits and quota-matched minibatches.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::numeric::Example;
use crate::simulator::{mix_seed, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Val,
    Test,
}

impl SplitKind {
    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Val => "val",
            SplitKind::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: Vec<Trajectory>,
    pub val: Vec<Trajectory>,
    pub test: Vec<Trajectory>,
    /// Per-task trajectory counts over the whole corpus.
    pub task_histogram: Vec<usize>,
    pub d_val: usize,
    pub d_test: usize,
}

/// Partitions by day: `train` gets days before `d_val`, `val` gets `d_val`,
/// `test` gets `d_test`. Trajectories on any other day are rejected so that
/// nothing is silently dropped.
pub fn temporal_split(
    trajectories: Vec<Trajectory>,
    num_tasks: usize,
    d_val: usize,
    d_test: usize,
) -> Result<SplitDataset> {
    if d_val >= d_test {
        return Err(Error::SplitDays(format!(
            "d_val = {d_val} must precede d_test = {d_test}"
        )));
    }
    let mut task_histogram = vec![0; num_tasks];
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for tr in trajectories {
        if tr.task >= num_tasks {
            return Err(Error::UnknownTask(tr.task));
        }
        task_histogram[tr.task] += 1;
        match tr.day {
            d if d < d_val => train.push(tr),
            d if d == d_val => val.push(tr),
            d if d == d_test => test.push(tr),
            d => {
                return Err(Error::SplitDays(format!(
                    "day {d} falls in no split (d_val = {d_val}, d_test = {d_test})"
                )))
            }
        }
    }
    for (name, split) in [("train", &train), ("val", &val), ("test", &test)] {
        if split.is_empty() {
            return Err(Error::EmptySplit(name));
        }
    }
    Ok(SplitDataset {
        train,
        val,
        test,
        task_histogram,
        d_val,
        d_test,
    })
}

impl SplitDataset {
    pub fn num_tasks(&self) -> usize {
        self.task_histogram.len()
    }

    pub fn split(&self, kind: SplitKind) -> &[Trajectory] {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Val => &self.val,
            SplitKind::Test => &self.test,
        }
    }

    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Day → split assignment, one `day,split` line per day after a header.
    pub fn manifest(&self) -> String {
        let mut days = BTreeMap::new();
        for kind in [SplitKind::Train, SplitKind::Val, SplitKind::Test] {
            for tr in self.split(kind) {
                days.insert(tr.day, kind);
            }
        }
        let mut out = String::from("day,split\n");
        for (d, k) in days {
            out.push_str(&format!("{d},{}\n", k.name()));
        }
        out
    }

    /// Highest quality seen per task in the training split.
    pub fn max_train_quality(&self) -> Vec<f64> {
        let mut best = vec![f64::NEG_INFINITY; self.num_tasks()];
        for tr in &self.train {
            best[tr.task] = best[tr.task].max(tr.quality);
        }
        best.into_iter()
            .map(|q| if q.is_finite() { q } else { 1.0 })
            .collect()
    }
}

/// Largest-remainder apportionment of `batch` over `histogram`, then a
/// top-up so every task gets at least one slot (taken from the largest
/// quota, lowest index on ties).
pub fn quotas(histogram: &[usize], batch: usize) -> Result<Vec<usize>> {
    let k = histogram.len();
    if k == 0 {
        return Err(Error::TaskCount {
            expected: 1,
            got: 0,
        });
    }
    if batch < k {
        return Err(Error::Config(format!(
            "batch size {batch} smaller than task count {k}"
        )));
    }
    let total: usize = histogram.iter().sum();
    if total == 0 {
        return Err(Error::TaskMissing(0));
    }
    let mut q: Vec<usize> = histogram.iter().map(|&h| h * batch / total).collect();
    let mut rest: Vec<(usize, usize)> = histogram
        .iter()
        .enumerate()
        .map(|(i, &h)| (h * batch % total, i))
        .collect();
    // Largest remainder first, lowest index on ties.
    rest.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let short = batch - q.iter().sum::<usize>();
    for &(_, i) in rest.iter().take(short) {
        q[i] += 1;
    }
    for i in 0..k {
        if q[i] == 0 {
            let donor = (0..k)
                .max_by(|&a, &b| q[a].cmp(&q[b]).then(b.cmp(&a)))
                .expect("k >= 1");
            q[donor] -= 1;
            q[i] = 1;
        }
    }
    Ok(q)
}

/// Per-task samples for one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub per_task: Vec<Vec<Example>>,
}

impl Batch {
    pub fn sizes(&self) -> Vec<usize> {
        self.per_task.iter().map(Vec::len).collect()
    }

    pub fn len(&self) -> usize {
        self.per_task.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Uniform sampler over the `(trajectory, step)` pairs of one split.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    trajectories: &'a [Trajectory],
    // per task: (trajectory index, step)
    eligible: Vec<Vec<(usize, usize)>>,
    quotas: Vec<usize>,
}

impl<'a> Sampler<'a> {
    pub fn new(data: &'a SplitDataset, kind: SplitKind, batch: usize) -> Result<Self> {
        let trajectories = data.split(kind);
        let mut eligible = vec![Vec::new(); data.num_tasks()];
        for (i, tr) in trajectories.iter().enumerate() {
            eligible[tr.task].extend((0..tr.steps.len()).map(|t| (i, t)));
        }
        if let Some(k) = eligible.iter().position(Vec::is_empty) {
            return Err(Error::TaskMissing(k));
        }
        Ok(Self {
            trajectories,
            eligible,
            quotas: quotas(&data.task_histogram, batch)?,
        })
    }

    pub fn quotas(&self) -> &[usize] {
        &self.quotas
    }

    /// Task `task`'s sub-batch. Each task draws from its own seed stream,
    /// so its samples never depend on other tasks' data.
    pub fn sample_task(
        &self,
        store: &FeatureStore,
        task: usize,
        seed: u64,
    ) -> Result<Vec<Example>> {
        let pool = self.eligible.get(task).ok_or(Error::UnknownTask(task))?;
        let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(&[seed, task as u64]));
        (0..self.quotas[task])
            .map(|_| {
                let (i, t) = pool[rng.random_range(0..pool.len())];
                store.example(&self.trajectories[i], t)
            })
            .collect()
    }

    pub fn sample(&self, store: &FeatureStore, seed: u64) -> Result<Batch> {
        let per_task = (0..self.quotas.len())
            .map(|k| self.sample_task(store, k, seed))
            .collect::<Result<_>>()?;
        Ok(Batch { per_task })
    }
}

/// One-shot batch draw.
pub fn sample_batch(
    data: &SplitDataset,
    kind: SplitKind,
    batch: usize,
    seed: u64,
    store: &FeatureStore,
) -> Result<Batch> {
    Sampler::new(data, kind, batch)?.sample(store, seed)
}
