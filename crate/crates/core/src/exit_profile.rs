//! Accuracy-ratio tables built from recorded per-sample branch confidences.
//!
//! A validation set is evaluated once; every sample's confidence at every
//! exit branch is kept. For any threshold setting the exit outcome of each
//! sample is then fixed, so the whole threshold grid can be tabulated without
//! touching the model again.
//!
//! The table is filled in one pass over the samples: for each sample the set
//! of grid points at which it reaches, leaves, or correctly leaves a stage is
//! an axis-aligned box in grid-index space, so each sample contributes a
//! handful of corner updates to a multi-dimensional difference array, which
//! is prefix-summed at the end.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fmt::sig6;
use crate::model::ThresholdSetting;

/// One validation sample: confidence and correctness at each exit branch
/// (ascending layer) plus final-layer correctness.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub id: u64,
    pub confidence: Vec<f64>,
    pub branch_correct: Vec<bool>,
    pub final_correct: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BranchRecordSet {
    /// Exit-branch layers, ascending.
    pub branches: Vec<usize>,
    pub final_layer: usize,
    pub samples: Vec<SampleRecord>,
}

impl BranchRecordSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Reads `sample_id,layer,confidence,correct` rows. The highest layer is
    /// the final layer; every other layer present is an exit branch.
    pub fn read_csv<R: BufRead>(reader: R) -> Result<Self> {
        let mut rows: BTreeMap<u64, BTreeMap<usize, (f64, bool)>> = BTreeMap::new();
        let mut layers = std::collections::BTreeSet::new();
        let mut header_seen = false;
        for (k, line) in reader.lines().enumerate() {
            let lineno = k + 1;
            let line = line?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if !header_seen {
                header_seen = true;
                if line.replace(' ', "") != "sample_id,layer,confidence,correct" {
                    return Err(Error::Records {
                        line: lineno,
                        message: format!(
                            "expected header `sample_id,layer,confidence,correct`, got `{line}`"
                        ),
                    });
                }
                continue;
            }
            let bad = |message: String| Error::Records {
                line: lineno,
                message,
            };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(bad(format!("expected 4 fields, got {}", fields.len())));
            }
            let id: u64 = fields[0]
                .parse()
                .map_err(|_| bad(format!("bad sample_id `{}`", fields[0])))?;
            let layer: usize = fields[1]
                .parse()
                .map_err(|_| bad(format!("bad layer `{}`", fields[1])))?;
            let conf: f64 = fields[2]
                .parse()
                .map_err(|_| bad(format!("bad confidence `{}`", fields[2])))?;
            if !(0.0..=1.0).contains(&conf) {
                return Err(bad(format!("confidence {conf} outside [0, 1]")));
            }
            let correct = match fields[3] {
                "1" | "true" => true,
                "0" | "false" => false,
                other => return Err(bad(format!("bad correct flag `{other}`"))),
            };
            if rows
                .entry(id)
                .or_default()
                .insert(layer, (conf, correct))
                .is_some()
            {
                return Err(bad(format!("duplicate row for sample {id} layer {layer}")));
            }
            layers.insert(layer);
        }
        let final_layer = *layers.iter().next_back().ok_or(Error::EmptyRecords)?;
        let branches: Vec<usize> = layers
            .iter()
            .copied()
            .filter(|&l| l != final_layer)
            .collect();
        let mut samples = Vec::with_capacity(rows.len());
        for (id, per_layer) in rows {
            let mut confidence = Vec::with_capacity(branches.len());
            let mut branch_correct = Vec::with_capacity(branches.len());
            for &b in &branches {
                let &(c, ok) = per_layer.get(&b).ok_or(Error::MissingBranch {
                    sample: id,
                    layer: b,
                })?;
                confidence.push(c);
                branch_correct.push(ok);
            }
            let &(_, final_correct) = per_layer.get(&final_layer).ok_or(Error::MissingBranch {
                sample: id,
                layer: final_layer,
            })?;
            samples.push(SampleRecord {
                id,
                confidence,
                branch_correct,
                final_correct,
            });
        }
        Ok(Self {
            branches,
            final_layer,
            samples,
        })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "sample_id,layer,confidence,correct")?;
        for s in &self.samples {
            for (b, &layer) in self.branches.iter().enumerate() {
                writeln!(
                    w,
                    "{},{},{},{}",
                    s.id,
                    layer,
                    s.confidence[b],
                    u8::from(s.branch_correct[b])
                )?;
            }
            writeln!(
                w,
                "{},{},1,{}",
                s.id,
                self.final_layer,
                u8::from(s.final_correct)
            )?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to vec");
        String::from_utf8(buf).expect("ascii")
    }

    fn check(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::EmptyRecords);
        }
        for s in &self.samples {
            if s.confidence.len() != self.branches.len()
                || s.branch_correct.len() != self.branches.len()
            {
                let layer = self.branches[s
                    .confidence
                    .len()
                    .min(s.branch_correct.len())
                    .min(self.branches.len() - 1)];
                return Err(Error::MissingBranch {
                    sample: s.id,
                    layer,
                });
            }
        }
        Ok(())
    }
}

/// Shape of synthetic validation records.
///
/// Samples are ranked by difficulty. A sample is correct at a stage iff its
/// rank is below `accuracy * N`, so correct sets are nested across stages and
/// later stages are never less accurate. Branch confidence grows with
/// easiness: it equals `confidence_center` at the sample that sits on the
/// branch's correctness boundary, rises with `confidence_slope` per unit of
/// easiness, and carries Gaussian noise of scale `noise`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DifficultyProfile {
    pub branch_accuracy: Vec<f64>,
    pub final_accuracy: f64,
    #[serde(default = "DifficultyProfile::default_center")]
    pub confidence_center: f64,
    #[serde(default = "DifficultyProfile::default_slope")]
    pub confidence_slope: f64,
    #[serde(default = "DifficultyProfile::default_noise")]
    pub noise: f64,
}

impl DifficultyProfile {
    fn default_center() -> f64 {
        0.8
    }

    fn default_slope() -> f64 {
        1.0
    }

    fn default_noise() -> f64 {
        0.08
    }

    /// Branch accuracies rise evenly from just above 0.5 toward 0.75; the final
    /// layer scores 0.8.
    pub fn default_for(branches: usize) -> Self {
        let b = branches as f64;
        Self {
            branch_accuracy: (0..branches)
                .map(|k| 0.5 + 0.25 * (k as f64 + 1.0) / (b + 1.0))
                .collect(),
            final_accuracy: 0.8,
            confidence_center: Self::default_center(),
            confidence_slope: Self::default_slope(),
            noise: Self::default_noise(),
        }
    }

    /// Every sample correct everywhere.
    pub fn all_easy(branches: usize) -> Self {
        Self {
            branch_accuracy: vec![1.0; branches],
            final_accuracy: 1.0,
            ..Self::default_for(branches)
        }
    }
}

/// Deterministic synthetic records for the given branch layers.
pub fn synthesize_records(
    seed: u64,
    n: usize,
    profile: &DifficultyProfile,
    branches: &[usize],
    final_layer: usize,
) -> BranchRecordSet {
    assert_eq!(
        profile.branch_accuracy.len(),
        branches.len(),
        "one accuracy per branch"
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rank: Vec<usize> = (0..n).collect();
    for k in (1..n).rev() {
        let j = rng.random_range(0..=k);
        rank.swap(k, j);
    }
    // running max keeps accuracy non-decreasing along the pipeline
    let mut acc = Vec::with_capacity(branches.len());
    let mut best = 0.0f64;
    for &a in &profile.branch_accuracy {
        best = best.max(a.clamp(0.0, 1.0));
        acc.push(best);
    }
    let final_acc = best.max(profile.final_accuracy.clamp(0.0, 1.0));
    let cut = |a: f64| (a * n as f64).round() as usize;

    let samples = (0..n)
        .map(|k| {
            let r = rank[k];
            let easiness = 1.0 - (r as f64 + 0.5) / n as f64;
            let mut confidence = Vec::with_capacity(branches.len());
            let mut branch_correct = Vec::with_capacity(branches.len());
            for &a in &acc {
                let z: f64 = rng.sample(StandardNormal);
                let c = profile.confidence_center
                    + profile.confidence_slope * (easiness - (1.0 - a))
                    + profile.noise * z;
                confidence.push(c.clamp(0.0, 0.999));
                branch_correct.push(r < cut(a));
            }
            SampleRecord {
                id: k as u64,
                confidence,
                branch_correct,
                final_correct: r < cut(final_acc),
            }
        })
        .collect();
    BranchRecordSet {
        branches: branches.to_vec(),
        final_layer,
        samples,
    }
}

/// Evenly spaced grid `{0, step, 2 step, ..., 1}`.
pub fn default_grid(step: f64) -> Vec<f64> {
    let n = (1.0 / step).round() as usize;
    (0..=n)
        .map(|k| (k as f64 * step * 1e9).round() / 1e9)
        .collect()
}

/// Per-stage counts at one grid point. Stage `b < B` is exit branch `b`;
/// stage `B` is the final layer.
#[derive(Clone, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StageCounts {
    pub reached: Vec<u32>,
    pub exited: Vec<u32>,
    pub correct: Vec<u32>,
}

/// Accuracy and conditional surviving ratios for every grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct ExitTable {
    branches: Vec<usize>,
    grids: Vec<Vec<f64>>,
    strides: Vec<usize>,
    samples: u32,
    counts: Vec<StageCounts>,
    a_min: f64,
    a_max: f64,
}

impl ExitTable {
    /// Table for a pipeline without exit branches.
    pub fn branchless(final_accuracy: f64) -> Self {
        let samples = 1_000_000u32;
        let correct = (final_accuracy * samples as f64).round() as u32;
        Self::from_counts(
            vec![],
            vec![],
            samples,
            vec![StageCounts {
                reached: vec![samples],
                exited: vec![samples],
                correct: vec![correct],
            }],
        )
    }

    fn from_counts(
        branches: Vec<usize>,
        grids: Vec<Vec<f64>>,
        samples: u32,
        counts: Vec<StageCounts>,
    ) -> Self {
        let mut strides = vec![1usize; grids.len()];
        for d in (0..grids.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * grids[d + 1].len();
        }
        let acc =
            |c: &StageCounts| c.correct.iter().map(|&x| x as f64).sum::<f64>() / samples as f64;
        let (mut a_min, mut a_max) = (f64::INFINITY, f64::NEG_INFINITY);
        for c in &counts {
            let a = acc(c);
            a_min = a_min.min(a);
            a_max = a_max.max(a);
        }
        Self {
            branches,
            grids,
            strides,
            samples,
            counts,
            a_min,
            a_max,
        }
    }

    pub fn branches(&self) -> &[usize] {
        &self.branches
    }

    pub fn grids(&self) -> &[Vec<f64>] {
        &self.grids
    }

    pub fn grid(&self, branch: usize) -> &[f64] {
        &self.grids[branch]
    }

    pub fn samples(&self) -> u32 {
        self.samples
    }

    pub fn point_count(&self) -> usize {
        self.counts.len()
    }

    pub fn flat_index(&self, c: &ThresholdSetting) -> Result<usize> {
        if c.idx.len() != self.grids.len() {
            return Err(Error::TableMismatch(format!(
                "setting has {} thresholds, table has {} branches",
                c.idx.len(),
                self.grids.len()
            )));
        }
        let mut flat = 0;
        for (d, &k) in c.idx.iter().enumerate() {
            if k >= self.grids[d].len() {
                return Err(Error::OffGrid {
                    layer: self.branches[d],
                    value: k as f64,
                });
            }
            flat += k * self.strides[d];
        }
        Ok(flat)
    }

    pub fn setting_at(&self, mut flat: usize) -> ThresholdSetting {
        let mut idx = vec![0; self.grids.len()];
        for d in 0..self.grids.len() {
            idx[d] = flat / self.strides[d];
            flat %= self.strides[d];
        }
        ThresholdSetting::new(idx)
    }

    pub fn counts(&self, c: &ThresholdSetting) -> Result<&StageCounts> {
        Ok(&self.counts[self.flat_index(c)?])
    }

    /// Overall accuracy `A(C)` and conditional surviving ratio `I_h` per
    /// branch (ascending layer).
    pub fn query(&self, c: &ThresholdSetting) -> Result<(f64, Vec<f64>)> {
        let k = self.counts(c)?;
        Ok((self.accuracy_of(k), self.surviving_of(k)))
    }

    fn accuracy_of(&self, k: &StageCounts) -> f64 {
        k.correct.iter().map(|&x| x as f64).sum::<f64>() / self.samples as f64
    }

    fn surviving_of(&self, k: &StageCounts) -> Vec<f64> {
        (0..self.branches.len())
            .map(|b| {
                if k.reached[b] == 0 {
                    1.0
                } else {
                    1.0 - k.exited[b] as f64 / k.reached[b] as f64
                }
            })
            .collect()
    }

    pub fn accuracy(&self, c: &ThresholdSetting) -> Result<f64> {
        Ok(self.query(c)?.0)
    }

    /// Surviving ratios indexed by layer `0..=depth`; 1 for branchless layers.
    pub fn surviving_by_layer(&self, c: &ThresholdSetting, depth: usize) -> Result<Vec<f64>> {
        let (_, i) = self.query(c)?;
        let mut out = vec![1.0; depth + 1];
        for (b, &layer) in self.branches.iter().enumerate() {
            out[layer] = i[b];
        }
        Ok(out)
    }

    /// Probability that a task leaving at stage `s` is correct, per stage
    /// (branches then final). Stages nobody leaves from report 0.
    pub fn stage_accuracy(&self, c: &ThresholdSetting) -> Result<Vec<f64>> {
        let k = self.counts(c)?;
        Ok(k.exited
            .iter()
            .zip(&k.correct)
            .map(|(&e, &ok)| if e == 0 { 0.0 } else { ok as f64 / e as f64 })
            .collect())
    }

    /// `(A_min, A_max)` over the whole grid, found by scan.
    pub fn accuracy_bounds(&self) -> (f64, f64) {
        (self.a_min, self.a_max)
    }

    /// Every threshold at its grid maximum.
    pub fn max_setting(&self) -> ThresholdSetting {
        ThresholdSetting::new(self.grids.iter().map(|g| g.len() - 1).collect())
    }

    pub fn values(&self, c: &ThresholdSetting) -> Vec<f64> {
        c.idx
            .iter()
            .enumerate()
            .map(|(d, &k)| self.grids[d][k])
            .collect()
    }

    /// Setting with every branch at `value` (must lie on each grid).
    pub fn uniform_setting(&self, value: f64) -> Result<ThresholdSetting> {
        let idx = self
            .grids
            .iter()
            .enumerate()
            .map(|(d, g)| {
                g.iter()
                    .position(|&x| (x - value).abs() < 1e-9)
                    .ok_or(Error::OffGrid {
                        layer: self.branches[d],
                        value,
                    })
            })
            .collect::<Result<_>>()?;
        Ok(ThresholdSetting::new(idx))
    }

    /// Branch position of `layer`, if that layer has an exit.
    pub fn branch_index(&self, layer: usize) -> Option<usize> {
        self.branches.iter().position(|&l| l == layer)
    }

    pub fn to_doc(&self) -> ExitTableDoc {
        let mut entries = BTreeMap::new();
        for (flat, k) in self.counts.iter().enumerate() {
            let c = self.setting_at(flat);
            let key = self
                .values(&c)
                .iter()
                .map(|&v| sig6(v))
                .collect::<Vec<_>>()
                .join(",");
            entries.insert(
                key,
                TableEntry {
                    accuracy: self.accuracy_of(k),
                    surviving: self.surviving_of(k),
                    counts: k.clone(),
                },
            );
        }
        ExitTableDoc {
            branches: self.branches.clone(),
            grids: self.grids.clone(),
            samples: self.samples,
            a_min: self.a_min,
            a_max: self.a_max,
            entries,
        }
    }

    pub fn from_doc(doc: &ExitTableDoc) -> Result<Self> {
        let skeleton = Self::from_counts(
            doc.branches.clone(),
            doc.grids.clone(),
            doc.samples,
            vec![StageCounts::default()],
        );
        let total: usize = doc.grids.iter().map(Vec::len).product();
        let mut counts = Vec::with_capacity(total);
        for flat in 0..total {
            let c = skeleton.setting_at(flat);
            let key = skeleton
                .values(&c)
                .iter()
                .map(|&v| sig6(v))
                .collect::<Vec<_>>()
                .join(",");
            let e = doc
                .entries
                .get(&key)
                .ok_or_else(|| Error::TableMismatch(format!("missing entry `{key}`")))?;
            counts.push(e.counts.clone());
        }
        Ok(Self::from_counts(
            doc.branches.clone(),
            doc.grids.clone(),
            doc.samples,
            counts,
        ))
    }
}

/// JSON export of an [`ExitTable`], keyed by the comma-joined threshold tuple.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExitTableDoc {
    pub branches: Vec<usize>,
    pub grids: Vec<Vec<f64>>,
    pub samples: u32,
    pub a_min: f64,
    pub a_max: f64,
    pub entries: BTreeMap<String, TableEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableEntry {
    pub accuracy: f64,
    pub surviving: Vec<f64>,
    pub counts: StageCounts,
}

/// Builds the full table over the product of per-branch grids.
pub fn build_exit_table(records: &BranchRecordSet, grids: &[Vec<f64>]) -> Result<ExitTable> {
    records.check()?;
    if grids.len() != records.branches.len() {
        return Err(Error::TableMismatch(format!(
            "{} grids for {} branches",
            grids.len(),
            records.branches.len()
        )));
    }
    for (d, g) in grids.iter().enumerate() {
        if g.is_empty() || g.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::BadGrid {
                layer: records.branches[d],
            });
        }
    }
    let dims: Vec<usize> = grids.iter().map(Vec::len).collect();
    let stages = dims.len() + 1;
    let mut acc = BoxAccumulator::new(&dims, 3 * stages);

    let mut lo = vec![0usize; dims.len()];
    let mut hi = dims.clone();
    for s in &records.samples {
        // exits at branch d iff grid index < cut[d]
        let cut: Vec<usize> = s
            .confidence
            .iter()
            .zip(grids)
            .map(|(&c, g)| g.partition_point(|&v| v <= c))
            .collect();
        lo.fill(0);
        hi.copy_from_slice(&dims);
        for b in 0..stages {
            // reached stage b: earlier dims already constrained to [cut, G)
            acc.add(3 * b, &lo, &hi);
            if b < dims.len() {
                hi[b] = cut[b];
                acc.add(3 * b + 1, &lo, &hi);
                if s.branch_correct[b] {
                    acc.add(3 * b + 2, &lo, &hi);
                }
                lo[b] = cut[b];
                hi[b] = dims[b];
            } else {
                acc.add(3 * b + 1, &lo, &hi);
                if s.final_correct {
                    acc.add(3 * b + 2, &lo, &hi);
                }
            }
        }
    }
    let fields = acc.finish();
    let points: usize = dims.iter().product();
    let counts = (0..points)
        .map(|p| {
            let get = |f: usize| fields[f][p] as u32;
            StageCounts {
                reached: (0..stages).map(|b| get(3 * b)).collect(),
                exited: (0..stages).map(|b| get(3 * b + 1)).collect(),
                correct: (0..stages).map(|b| get(3 * b + 2)).collect(),
            }
        })
        .collect();
    Ok(ExitTable::from_counts(
        records.branches.clone(),
        grids.to_vec(),
        records.samples.len() as u32,
        counts,
    ))
}

/// Multi-dimensional difference arrays over a shared index space.
struct BoxAccumulator {
    dims: Vec<usize>,
    strides: Vec<usize>,
    fields: Vec<Vec<i64>>,
}

impl BoxAccumulator {
    fn new(dims: &[usize], n_fields: usize) -> Self {
        let mut strides = vec![1usize; dims.len()];
        for d in (0..dims.len().saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * dims[d + 1];
        }
        let size: usize = dims.iter().product();
        Self {
            dims: dims.to_vec(),
            strides,
            fields: vec![vec![0; size]; n_fields],
        }
    }

    /// Adds 1 on the half-open box `[lo, hi)`.
    fn add(&mut self, field: usize, lo: &[usize], hi: &[usize]) {
        if lo.iter().zip(hi).any(|(a, b)| a >= b) {
            return;
        }
        let nd = self.dims.len();
        'corners: for mask in 0u32..(1 << nd) {
            let mut flat = 0;
            for d in 0..nd {
                let k = if mask & (1 << d) != 0 { hi[d] } else { lo[d] };
                if k >= self.dims[d] {
                    continue 'corners;
                }
                flat += k * self.strides[d];
            }
            let sign = if mask.count_ones() % 2 == 0 { 1 } else { -1 };
            self.fields[field][flat] += sign;
        }
    }

    fn finish(mut self) -> Vec<Vec<i64>> {
        let size: usize = self.dims.iter().product();
        for field in &mut self.fields {
            for d in 0..self.dims.len() {
                let stride = self.strides[d];
                for flat in 0..size {
                    if !(flat / stride).is_multiple_of(self.dims[d]) {
                        field[flat] += field[flat - stride];
                    }
                }
            }
        }
        self.fields
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn three_samples() -> BranchRecordSet {
        let mk = |id, c, ok, fin| SampleRecord {
            id,
            confidence: vec![c],
            branch_correct: vec![ok],
            final_correct: fin,
        };
        BranchRecordSet {
            branches: vec![1],
            final_layer: 2,
            samples: vec![
                mk(0, 0.9, true, true),
                mk(1, 0.3, false, true),
                mk(2, 0.6, false, false),
            ],
        }
    }

    fn at(table: &ExitTable, v: f64) -> (f64, Vec<f64>) {
        table.query(&table.uniform_setting(v).unwrap()).unwrap()
    }

    #[test]
    fn three_sample_walk() {
        let t = build_exit_table(&three_samples(), &[default_grid(0.05)]).unwrap();
        let (a, i) = at(&t, 0.5);
        assert!((a - 2.0 / 3.0).abs() < 1e-15);
        assert!((i[0] - 1.0 / 3.0).abs() < 1e-15);
        let (a, i) = at(&t, 0.95);
        assert!((a - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(i[0], 1.0);
        let (a, i) = at(&t, 0.0);
        assert!((a - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(i[0], 0.0);
        let (lo, hi) = t.accuracy_bounds();
        assert!((lo - 1.0 / 3.0).abs() < 1e-15 && (hi - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn single_always_correct_sample() {
        let rs = BranchRecordSet {
            branches: vec![1],
            final_layer: 2,
            samples: vec![SampleRecord {
                id: 0,
                confidence: vec![0.4],
                branch_correct: vec![true],
                final_correct: true,
            }],
        };
        let t = build_exit_table(&rs, &[default_grid(0.1)]).unwrap();
        assert_eq!(t.accuracy_bounds(), (1.0, 1.0));
    }

    #[test]
    fn branchless_query() {
        let t = ExitTable::branchless(0.75);
        let (a, i) = t.query(&ThresholdSetting::new(vec![])).unwrap();
        assert!((a - 0.75).abs() < 1e-9);
        assert!(i.is_empty());
        assert_eq!(
            t.surviving_by_layer(&t.max_setting(), 3).unwrap(),
            vec![1.0; 4]
        );
    }

    #[test]
    fn off_grid_and_bad_grid() {
        let t = build_exit_table(&three_samples(), &[default_grid(0.05)]).unwrap();
        assert!(matches!(
            t.uniform_setting(0.33),
            Err(Error::OffGrid { .. })
        ));
        assert!(matches!(
            t.query(&ThresholdSetting::new(vec![21])),
            Err(Error::OffGrid { .. })
        ));
        assert!(matches!(
            build_exit_table(&three_samples(), &[vec![]]),
            Err(Error::BadGrid { .. })
        ));
    }

    #[test]
    fn csv_round_trip_and_errors() {
        let rs = synthesize_records(3, 50, &DifficultyProfile::default_for(2), &[2, 3], 4);
        let csv = rs.to_csv_string();
        let back = BranchRecordSet::read_csv(csv.as_bytes()).unwrap();
        assert_eq!(back, rs);

        let missing = "sample_id,layer,confidence,correct\n0,1,0.5,1\n0,2,1,1\n1,2,1,0\n";
        assert!(matches!(
            BranchRecordSet::read_csv(missing.as_bytes()),
            Err(Error::MissingBranch {
                sample: 1,
                layer: 1
            })
        ));
        let bad = "sample_id,layer,confidence,correct\n0,1,0.5,1\n0,2,x,1\n";
        match BranchRecordSet::read_csv(bad.as_bytes()) {
            Err(Error::Records { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        let p = DifficultyProfile::default_for(2);
        let a = synthesize_records(7, 1000, &p, &[2, 3], 4).to_csv_string();
        let b = synthesize_records(7, 1000, &p, &[2, 3], 4).to_csv_string();
        assert_eq!(a, b);
        let c = synthesize_records(8, 1000, &p, &[2, 3], 4).to_csv_string();
        assert_ne!(a, c);
    }

    #[test]
    fn all_easy_profile_is_flat() {
        let rs = synthesize_records(7, 300, &DifficultyProfile::all_easy(2), &[2, 3], 4);
        let t = build_exit_table(&rs, &[default_grid(0.1), default_grid(0.1)]).unwrap();
        assert_eq!(t.accuracy_bounds(), (1.0, 1.0));
    }

    #[test]
    fn doc_round_trip() {
        let rs = synthesize_records(1, 200, &DifficultyProfile::default_for(2), &[1, 2], 3);
        let t = build_exit_table(&rs, &[default_grid(0.1), default_grid(0.25)]).unwrap();
        let json = serde_json::to_string(&t.to_doc()).unwrap();
        let doc: ExitTableDoc = serde_json::from_str(&json).unwrap();
        assert_eq!(ExitTable::from_doc(&doc).unwrap(), t);
    }
}
