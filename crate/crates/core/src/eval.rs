//! Evaluation protocol: seeded identity-disjoint splits, CMC curves,
//! repeated trials and the single-partition λ search.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{CrossViewDataset, SampleSet};
use crate::error::{Error, Result};
use crate::pipeline::{fit_and_rank, MethodSpec};
use crate::ranking::Ranking;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainSize {
    Count(usize),
    /// Share of the paired identities, rounded to the nearest count.
    Fraction(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: TrainSize,
    pub seed: u64,
    #[serde(default = "default_true")]
    pub single_shot: bool,
}

fn default_true() -> bool {
    true
}

impl SplitSpec {
    /// Half of the identities for training, the rest for testing.
    pub fn half(seed: u64) -> Self {
        SplitSpec {
            train: TrainSize::Fraction(0.5),
            seed,
            single_shot: true,
        }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        SplitSpec { seed, ..self }
    }

    /// Number of training identities out of `total`.
    pub fn train_count(&self, total: usize) -> Result<usize> {
        let count = match self.train {
            TrainSize::Count(c) => c,
            TrainSize::Fraction(f) => {
                if !(f > 0.0 && f < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "train fraction must lie in (0, 1), got {f}"
                    )));
                }
                (f * total as f64).round() as usize
            }
        };
        if count == 0 || count >= total {
            return Err(Error::InsufficientData(format!(
                "cannot train on {count} of {total} identities and keep a test set"
            )));
        }
        Ok(count)
    }
}

fn rows_of(set: &SampleSet) -> BTreeMap<&str, Vec<usize>> {
    let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, id) in set.ids.iter().enumerate() {
        map.entry(id.as_str()).or_default().push(i);
    }
    map
}

/// Identity-disjoint train/test partition.
///
/// The paired identities (sorted) are shuffled with
/// `ChaCha8Rng::seed_from_u64(seed)`; the first `train_count` go to
/// training. With `single_shot`, the same generator then picks one row per
/// identity per camera, visiting paired identities in sorted order (probe
/// camera first) and then the distractors. Training views are aligned row by
/// row; the test probe view is sorted by id and the test gallery, which also
/// receives every distractor, is sorted by id.
pub fn split(ds: &CrossViewDataset, spec: &SplitSpec) -> Result<(CrossViewDataset, CrossViewDataset)> {
    ds.validate()?;
    let rows_a = rows_of(&ds.view_a);
    let rows_b = rows_of(&ds.view_b);
    let distractors: BTreeSet<&str> = ds.distractor_ids.iter().map(String::as_str).collect();
    let paired: Vec<&str> = rows_b
        .keys()
        .copied()
        .filter(|id| !distractors.contains(id) && rows_a.contains_key(id))
        .collect();
    let n_train = spec.train_count(paired.len())?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut shuffled = paired.clone();
    shuffled.shuffle(&mut rng);
    let train_ids: BTreeSet<&str> = shuffled[..n_train].iter().copied().collect();

    let mut pick = |rows: &Vec<usize>, id: &str| -> Result<Vec<usize>> {
        if spec.single_shot {
            Ok(vec![rows[rng.random_range(0..rows.len())]])
        } else if rows.len() == 1 {
            Ok(rows.clone())
        } else {
            Err(Error::InvalidParameter(format!(
                "identity {id:?} has several images per camera; enable single_shot selection"
            )))
        }
    };
    let mut chosen_a = BTreeMap::new();
    let mut chosen_b = BTreeMap::new();
    for id in &paired {
        chosen_a.insert(*id, pick(&rows_a[id], id)?);
        chosen_b.insert(*id, pick(&rows_b[id], id)?);
    }
    for id in &distractors {
        let rows = rows_b
            .get(id)
            .ok_or_else(|| Error::InvalidParameter(format!("distractor {id:?} is not in the gallery view")))?;
        chosen_b.insert(*id, pick(rows, id)?);
    }

    let collect = |map: &BTreeMap<&str, Vec<usize>>, keep: &dyn Fn(&str) -> bool| -> Vec<usize> {
        map.iter()
            .filter(|(id, _)| keep(id))
            .flat_map(|(_, rows)| rows.iter().copied())
            .collect()
    };
    let is_train = |id: &str| train_ids.contains(id);
    let is_test = |id: &str| !train_ids.contains(id);

    let train = CrossViewDataset {
        view_a: ds.view_a.select(&collect(&chosen_a, &is_train)),
        view_b: ds.view_b.select(&collect(&chosen_b, &is_train)),
        distractor_ids: Vec::new(),
    };
    let test = CrossViewDataset {
        view_a: ds.view_a.select(&collect(&chosen_a, &is_test)),
        view_b: ds.view_b.select(&collect(&chosen_b, &is_test)),
        distractor_ids: distractors.iter().map(|s| s.to_string()).collect(),
    };
    Ok((train, test))
}

/// Cumulative match characteristic. `rates[k - 1]` is the rank-`k` rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmcCurve {
    pub rates: Vec<f64>,
    pub trials: usize,
}

impl CmcCurve {
    /// Rate at rank `k` (1-based); ranks past the gallery size give the
    /// final rate.
    pub fn rate(&self, k: usize) -> f64 {
        assert!(k >= 1, "ranks are 1-based");
        self.rates[(k - 1).min(self.rates.len() - 1)]
    }

    pub fn rank1(&self) -> f64 {
        self.rate(1)
    }
}

/// Gallery index holding each probe's true match.
pub fn truth_indices(probe_ids: &[String], gallery_ids: &[String]) -> Result<Vec<usize>> {
    let mut index: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, id) in gallery_ids.iter().enumerate() {
        index.entry(id).or_default().push(i);
    }
    probe_ids
        .iter()
        .map(|id| match index.get(id.as_str()).map(Vec::as_slice) {
            Some([i]) => Ok(*i),
            Some(_) => Err(Error::InvalidParameter(format!(
                "probe {id:?} has several gallery matches"
            ))),
            None => Err(Error::UnknownId(format!("probe {id:?} has no gallery match"))),
        })
        .collect()
}

/// CMC from per-probe gallery orderings and the true-match gallery index of
/// each probe.
pub fn cmc(orders: &[Vec<usize>], truth: &[usize]) -> Result<CmcCurve> {
    if orders.len() != truth.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} rankings, {} ground-truth entries",
            orders.len(),
            truth.len()
        )));
    }
    if orders.is_empty() {
        return Err(Error::InsufficientData("no probes".into()));
    }
    let l_g = orders[0].len();
    let mut hits = vec![0usize; l_g];
    for (j, (order, &t)) in orders.iter().zip(truth).enumerate() {
        if order.len() != l_g {
            return Err(Error::DimensionMismatch("rankings differ in gallery size".into()));
        }
        let pos = order.iter().position(|&g| g == t).ok_or_else(|| {
            Error::UnknownId(format!("true match of probe {j} is not in its ranking"))
        })?;
        hits[pos] += 1;
    }
    let n = orders.len() as f64;
    let mut acc = 0;
    let rates = hits
        .into_iter()
        .map(|h| {
            acc += h;
            acc as f64 / n
        })
        .collect();
    Ok(CmcCurve { rates, trials: 1 })
}

/// Seeds of `n_trials` trials: `base_seed + t`, skipping `exclude`.
pub fn trial_seeds(base_seed: u64, n_trials: usize, exclude: Option<u64>) -> Vec<u64> {
    (0u64..)
        .map(|t| base_seed.wrapping_add(t))
        .filter(|s| Some(*s) != exclude)
        .take(n_trials)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialTiming {
    pub split_seconds: f64,
    pub fit_rank_seconds: f64,
}

/// Outcome of one split/fit/rank/CMC cycle.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub seed: u64,
    pub test: CrossViewDataset,
    pub ranking: Ranking,
    pub curve: CmcCurve,
    pub timing: TrialTiming,
}

/// Runs one trial with the split seed `seed`.
pub fn run_trial(ds: &CrossViewDataset, split_spec: &SplitSpec, method: &MethodSpec, seed: u64) -> Result<TrialOutcome> {
    let t0 = Instant::now();
    let (train, test) = split(ds, &split_spec.with_seed(seed))?;
    let t1 = Instant::now();
    let ranking = fit_and_rank(method, &train, &test.view_b.features, &test.view_a.features)?;
    let truth = truth_indices(&test.view_a.ids, &test.view_b.ids)?;
    let curve = cmc(&ranking.order, &truth)?;
    let t2 = Instant::now();
    Ok(TrialOutcome {
        seed,
        test,
        ranking,
        curve,
        timing: TrialTiming {
            split_seconds: (t1 - t0).as_secs_f64(),
            fit_rank_seconds: (t2 - t1).as_secs_f64(),
        },
    })
}

/// Averaged CMC with per-trial curves. `std_rates` is the sample standard
/// deviation across trials (0 for a single trial).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub seeds: Vec<u64>,
    pub mean: CmcCurve,
    pub std_rates: Vec<f64>,
    pub per_trial: Vec<CmcCurve>,
    pub timings: Vec<TrialTiming>,
}

/// Runs trials with the given split seeds in parallel on the current rayon
/// pool. Results are assembled in seed order.
pub fn run_trials_with_seeds(
    ds: &CrossViewDataset,
    split_spec: &SplitSpec,
    method: &MethodSpec,
    seeds: &[u64],
) -> Result<TrialReport> {
    if seeds.is_empty() {
        return Err(Error::InvalidParameter("at least one trial is required".into()));
    }
    method.validate()?;
    let outcomes: Vec<Result<TrialOutcome>> = seeds
        .par_iter()
        .enumerate()
        .map(|(t, &seed)| {
            run_trial(ds, split_spec, method, seed).map_err(|e| Error::Trial {
                trial: t,
                seed,
                source: Box::new(e),
            })
        })
        .collect();
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    let per_trial: Vec<CmcCurve> = outcomes.iter().map(|o| o.curve.clone()).collect();
    let (mean, std_rates) = average_curves(&per_trial)?;
    Ok(TrialReport {
        seeds: seeds.to_vec(),
        mean,
        std_rates,
        per_trial,
        timings: outcomes.iter().map(|o| o.timing).collect(),
    })
}

/// Trials with seeds `base_seed + t`; `exclude` removes a seed (the tuning
/// partition) from the sequence.
pub fn run_trials(
    ds: &CrossViewDataset,
    split_spec: &SplitSpec,
    method: &MethodSpec,
    n_trials: usize,
    base_seed: u64,
    exclude: Option<u64>,
) -> Result<TrialReport> {
    run_trials_with_seeds(ds, split_spec, method, &trial_seeds(base_seed, n_trials, exclude))
}

/// Per-rank mean and sample standard deviation.
pub fn average_curves(curves: &[CmcCurve]) -> Result<(CmcCurve, Vec<f64>)> {
    let first = curves
        .first()
        .ok_or_else(|| Error::InsufficientData("no curves to average".into()))?;
    let len = first.rates.len();
    if curves.iter().any(|c| c.rates.len() != len) {
        return Err(Error::DimensionMismatch("curves differ in gallery size".into()));
    }
    let n = curves.len() as f64;
    let mean: Vec<f64> = (0..len)
        .map(|k| curves.iter().map(|c| c.rates[k]).sum::<f64>() / n)
        .collect();
    let std = (0..len)
        .map(|k| {
            if curves.len() < 2 {
                return 0.0;
            }
            let ss: f64 = curves.iter().map(|c| (c.rates[k] - mean[k]).powi(2)).sum();
            (ss / (n - 1.0)).sqrt()
        })
        .collect();
    Ok((
        CmcCurve {
            rates: mean,
            trials: curves.len(),
        },
        std,
    ))
}

/// Rank-1 per λ on one tuning partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneReport {
    pub grid: Vec<f64>,
    /// `None` where fitting or ranking failed for that λ.
    pub rank1_scores: Vec<Option<f64>>,
    pub chosen_lambda: f64,
    pub tuning_seed: u64,
}

/// Evaluates rank-1 for every λ on the partition drawn with `split_spec.seed`
/// and picks the best; ties go to the larger λ.
pub fn lambda_tune(ds: &CrossViewDataset, split_spec: &SplitSpec, method: &MethodSpec, grid: &[f64]) -> Result<TuneReport> {
    if grid.is_empty() {
        return Err(Error::InvalidParameter("the λ grid is empty".into()));
    }
    let (train, test) = split(ds, split_spec)?;
    let truth = truth_indices(&test.view_a.ids, &test.view_b.ids)?;
    let results: Vec<Result<f64>> = grid
        .par_iter()
        .map(|&lambda| {
            let spec = method.clone().with_lambda(lambda);
            let r = fit_and_rank(&spec, &train, &test.view_b.features, &test.view_a.features)?;
            Ok(cmc(&r.order, &truth)?.rank1())
        })
        .collect();

    let mut best: Option<(f64, f64)> = None;
    let mut first_err = None;
    let mut scores = Vec::with_capacity(grid.len());
    for (&lambda, res) in grid.iter().zip(results) {
        match res {
            Ok(s) => {
                scores.push(Some(s));
                let better = match best {
                    None => true,
                    Some((bs, bl)) => s > bs || (s == bs && lambda > bl),
                };
                if better {
                    best = Some((s, lambda));
                }
            }
            Err(e) => {
                scores.push(None);
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some((_, chosen)) => Ok(TuneReport {
            grid: grid.to_vec(),
            rank1_scores: scores,
            chosen_lambda: chosen,
            tuning_seed: split_spec.seed,
        }),
        None => Err(first_err.expect("non-empty grid")),
    }
}

/// CMC table with columns `rank,mean_rate,std_rate`.
pub fn write_cmc_csv(path: impl AsRef<Path>, report: &TrialReport) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("rank,mean_rate,std_rate\n");
    for (k, (m, s)) in report.mean.rates.iter().zip(&report.std_rates).enumerate() {
        out.push_str(&format!("{},{},{}\n", k + 1, m, s));
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads back a CMC table as `(mean_rates, std_rates)`.
pub fn read_cmc_csv(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<f64>)> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some("rank,mean_rate,std_rate") {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "expected header rank,mean_rate,std_rate".into(),
        });
    }
    let (mut mean, mut std) = (Vec::new(), Vec::new());
    for (i, line) in lines.enumerate() {
        let bad = || Error::Parse {
            path: path.to_path_buf(),
            line: i + 2,
            message: format!("malformed row {line:?}"),
        };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 3 || f[0].parse::<usize>().ok() != Some(i + 1) {
            return Err(bad());
        }
        mean.push(f[1].parse().map_err(|_| bad())?);
        std.push(f[2].parse().map_err(|_| bad())?);
    }
    Ok((mean, std))
}

#[derive(Serialize)]
struct TrialsJson<'a> {
    seeds: &'a [u64],
    curves: Vec<&'a [f64]>,
}

/// Per-trial seeds and curves (no timings, so reruns are byte-identical).
pub fn write_trials_json(path: impl AsRef<Path>, report: &TrialReport) -> Result<()> {
    let path = path.as_ref();
    let body = TrialsJson {
        seeds: &report.seeds,
        curves: report.per_trial.iter().map(|c| c.rates.as_slice()).collect(),
    };
    let text = serde_json::to_string_pretty(&body)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Provenance of an evaluation run: what was run, on which partitions, and
/// how long it took.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub dataset: serde_json::Value,
    pub method: MethodSpec,
    pub split: SplitSpec,
    pub n_trials: usize,
    pub base_seed: u64,
    pub excluded_seed: Option<u64>,
    pub seeds: Vec<u64>,
    pub threads: usize,
    pub timings: Vec<TrialTiming>,
    pub total_seconds: f64,
    pub rank1_mean: f64,
    pub rank1_std: f64,
}

pub fn write_run_manifest(path: impl AsRef<Path>, manifest: &RunManifest) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(manifest)? + "\n";
    fs::write(path, text).map_err(|e| Error::io(path, e))
}
