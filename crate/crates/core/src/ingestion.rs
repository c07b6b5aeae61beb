//! Dataset files, train/validation/test splitting, and consensus labeling.
//!
//! A dataset is newline-delimited JSON. The label space is declared either by a
//! header line `{"label_space": {"classes": [...], "positive": "..."}}` before
//! the first record or by a separate label-space file. Each record line is
//!
//! ```json
//! {"id": "r1", "text": "...", "gold": "ADE", "base_probs": [0.2, 0.8],
//!  "expert_pred": "ADE", "group_id": "note-17"}
//! ```
//!
//! with `expert_pred` and `group_id` optional.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelSpace, PredictionRecord, ProbabilityDistribution};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub label_space: LabelSpace,
    pub records: Vec<PredictionRecord>,
    pub provenance: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    label_space: LabelSpace,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RecordLine {
    id: String,
    text: String,
    gold: String,
    base_probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    expert_pred: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    group_id: Option<String>,
}

/// Reads a label-space file: a bare `{"classes": [...], "positive": ...}` object
/// or a header line of the same shape as the dataset header.
pub fn load_label_space(path: &Path) -> Result<LabelSpace> {
    let raw = std::fs::read_to_string(path)?;
    if let Ok(h) = serde_json::from_str::<Header>(&raw) {
        return Ok(h.label_space);
    }
    Ok(serde_json::from_str(&raw)?)
}

fn label(labels: &LabelSpace, name: &str, field: &str, line: usize) -> Result<usize> {
    labels
        .index_of(name)
        .ok_or_else(|| Error::Ingestion { line, message: format!("unknown label `{name}` in `{field}`") })
}

/// Loads and validates a dataset, stopping at the first malformed line.
///
/// `labels` supplies the label space when the file has no header; if both are
/// present they must agree.
pub fn load_dataset(path: &Path, labels: Option<&LabelSpace>) -> Result<DatasetManifest> {
    let file = std::fs::File::open(path)?;
    let mut label_space = labels.cloned();
    let mut records = Vec::new();
    let mut seen = HashSet::new();

    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if records.is_empty() {
            if let Ok(h) = serde_json::from_str::<Header>(&line) {
                match &label_space {
                    Some(given) if *given != h.label_space => {
                        return Err(Error::Ingestion {
                            line: lineno,
                            message: "header label space differs from the one supplied".into(),
                        })
                    }
                    _ => label_space = Some(h.label_space),
                }
                continue;
            }
        }
        let Some(space) = &label_space else {
            return Err(Error::Ingestion {
                line: lineno,
                message: "no label space: add a header line or pass a label-space file".into(),
            });
        };
        let raw: RecordLine =
            serde_json::from_str(&line).map_err(|e| Error::Ingestion { line: lineno, message: e.to_string() })?;
        if raw.id.is_empty() {
            return Err(Error::Ingestion { line: lineno, message: "empty id".into() });
        }
        if !seen.insert(raw.id.clone()) {
            return Err(Error::Ingestion { line: lineno, message: format!("duplicate id `{}`", raw.id) });
        }
        let base_probs = ProbabilityDistribution::new(raw.base_probs)
            .map_err(|e| Error::Ingestion { line: lineno, message: e.to_string() })?;
        base_probs.check_against(space).map_err(|e| Error::Ingestion { line: lineno, message: e.to_string() })?;
        let gold = label(space, &raw.gold, "gold", lineno)?;
        let expert_pred = raw.expert_pred.as_deref().map(|e| label(space, e, "expert_pred", lineno)).transpose()?;
        records.push(PredictionRecord {
            id: raw.id,
            text: raw.text,
            gold,
            base_probs,
            expert_pred,
            group_id: raw.group_id,
        });
    }

    let label_space = match label_space {
        Some(ls) if !records.is_empty() => ls,
        _ => return Err(Error::EmptyDataset(format!("{} contains no records", path.display()))),
    };
    Ok(DatasetManifest { label_space, records, provenance: path.display().to_string() })
}

fn record_line(r: &PredictionRecord, labels: &LabelSpace) -> Result<RecordLine> {
    r.validate(labels)?;
    let name = |i: usize| labels.name(i).unwrap_or_default().to_string();
    Ok(RecordLine {
        id: r.id.clone(),
        text: r.text.clone(),
        gold: name(r.gold),
        base_probs: r.base_probs.probs().to_vec(),
        expert_pred: r.expert_pred.map(name),
        group_id: r.group_id.clone(),
    })
}

/// Writes a header line followed by one line per record.
pub fn write_dataset<W: Write>(mut out: W, labels: &LabelSpace, records: &[PredictionRecord]) -> Result<()> {
    serde_json::to_writer(&mut out, &Header { label_space: labels.clone() })?;
    out.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut out, &record_line(r, labels)?)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_dataset(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_dataset(&mut out, &manifest.label_space, &manifest.records)?;
    out.flush()?;
    Ok(())
}

/// Train/validation/test fractions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitFractions(pub [f64; 3]);

impl SplitFractions {
    pub fn new(train: f64, val: f64, test: f64) -> Result<Self> {
        let f = [train, val, test];
        if f.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::invalid(format!("split fractions must be non-negative, got {f:?}")));
        }
        if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("split fractions must sum to 1, got {f:?}")));
        }
        Ok(SplitFractions(f))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<PredictionRecord>,
    pub val: Vec<PredictionRecord>,
    pub test: Vec<PredictionRecord>,
    pub warnings: Vec<String>,
}

impl Split {
    fn from_assignment(records: &[PredictionRecord], assignment: &[usize], warnings: Vec<String>) -> Self {
        let mut parts: [Vec<PredictionRecord>; 3] = Default::default();
        for (r, &s) in records.iter().zip(assignment) {
            parts[s].push(r.clone());
        }
        let [train, val, test] = parts;
        Split { train, val, test, warnings }
    }

    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }
}

/// Largest-remainder apportionment of `n` items to the fractions.
fn apportion(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for s in 0..3 {
        counts[s] = exact[s].floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let mut left = n - counts.iter().sum::<usize>();
    for &s in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if fractions[s] > 0.0 {
            counts[s] += 1;
            left -= 1;
        }
    }
    counts
}

/// Stratified split preserving class proportions.
///
/// Each class receives `floor(n_c·f_s)` rows per split; the leftover rows of each
/// class go to distinct splits, chosen to bring split totals to the overall
/// largest-remainder targets. Per-class counts therefore sit within one row of
/// their exact share.
pub fn stratified_split(records: &[PredictionRecord], fractions: SplitFractions, seed: u64) -> Result<Split> {
    let f = fractions.0;
    let targets = apportion(records.len(), &f);
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        by_class.entry(r.gold).or_default().push(i);
    }
    let active = f.iter().filter(|x| **x > 0.0).count();
    let mut warnings = Vec::new();

    let mut floors: BTreeMap<usize, [usize; 3]> = BTreeMap::new();
    let mut totals = [0usize; 3];
    for (&c, members) in &by_class {
        if members.len() < active {
            warnings.push(format!("class {c} has {} members for {active} splits; assigned greedily", members.len()));
        }
        let fl = [0, 1, 2].map(|s| (members.len() as f64 * f[s]).floor() as usize);
        (0..3).for_each(|s| totals[s] += fl[s]);
        floors.insert(c, fl);
    }
    let mut need: [i64; 3] = [0, 1, 2].map(|s| targets[s] as i64 - totals[s] as i64);

    let mut rng = seed::rng(seed);
    let mut assignment = vec![0usize; records.len()];
    for (&c, members) in by_class.iter_mut() {
        let n_c = members.len();
        let mut counts = floors[&c];
        let mut left = n_c - counts.iter().sum::<usize>();
        let frac = [0, 1, 2].map(|s| n_c as f64 * f[s] - counts[s] as f64);
        let mut used = [false; 3];
        while left > 0 {
            let s = (0..3)
                .filter(|&s| f[s] > 0.0 && !used[s])
                .max_by(|&a, &b| need[a].cmp(&need[b]).then(frac[a].total_cmp(&frac[b])).then(b.cmp(&a)))
                .expect("leftover rows never exceed the number of active splits");
            used[s] = true;
            counts[s] += 1;
            need[s] -= 1;
            left -= 1;
        }
        members.shuffle(&mut rng);
        let mut it = members.iter();
        for (s, &count) in counts.iter().enumerate() {
            for &i in it.by_ref().take(count) {
                assignment[i] = s;
            }
        }
    }
    Ok(Split::from_assignment(records, &assignment, warnings))
}

/// Group-aware split: every record of a group lands in the same split.
///
/// Groups are shuffled, then each is assigned to the split with the largest
/// remaining record deficit (ties to the earlier split).
pub fn group_split(records: &[PredictionRecord], fractions: SplitFractions, seed: u64) -> Result<Split> {
    let f = fractions.0;
    let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
    let mut index: BTreeMap<&str, usize> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        let g = r.group_id.as_deref().ok_or_else(|| Error::invalid(format!("record `{}` has no group_id", r.id)))?;
        let slot = *index.entry(g).or_insert_with(|| {
            groups.push((g, Vec::new()));
            groups.len() - 1
        });
        groups[slot].1.push(i);
    }
    groups.shuffle(&mut seed::rng(seed));

    let n = records.len() as f64;
    let mut deficit = [0, 1, 2].map(|s| f[s] * n);
    let mut assignment = vec![0usize; records.len()];
    for (_, members) in &groups {
        let s = (0..3)
            .filter(|&s| f[s] > 0.0)
            .max_by(|&a, &b| deficit[a].total_cmp(&deficit[b]).then(b.cmp(&a)))
            .expect("fractions sum to 1");
        deficit[s] -= members.len() as f64;
        members.iter().for_each(|&i| assignment[i] = s);
    }
    Ok(Split::from_assignment(records, &assignment, Vec::new()))
}

/// A class label as written in a consensus file: a name or a numeric index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LabelRef {
    Index(usize),
    Name(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsensusPair {
    pub id: String,
    pub label_a: usize,
    pub label_b: usize,
}

#[derive(Deserialize)]
struct ConsensusLine {
    id: String,
    label_a: LabelRef,
    label_b: LabelRef,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConsensusResult {
    /// Ids with the agreed label, in input order.
    pub kept: Vec<(String, usize)>,
    pub total: usize,
    pub agreement_rate: f64,
}

pub fn load_consensus_pairs(path: &Path, labels: &LabelSpace) -> Result<Vec<ConsensusPair>> {
    let file = std::fs::File::open(path)?;
    let mut pairs = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: ConsensusLine =
            serde_json::from_str(&line).map_err(|e| Error::Ingestion { line: lineno, message: e.to_string() })?;
        let resolve = |r: &LabelRef, field: &str| -> Result<usize> {
            let idx = match r {
                LabelRef::Index(i) => *i,
                LabelRef::Name(n) => label(labels, n, field, lineno)?,
            };
            labels.check_index(idx).map_err(|e| Error::Ingestion { line: lineno, message: e.to_string() })?;
            Ok(idx)
        };
        pairs.push(ConsensusPair {
            label_a: resolve(&raw.label_a, "label_a")?,
            label_b: resolve(&raw.label_b, "label_b")?,
            id: raw.id,
        });
    }
    if pairs.is_empty() {
        return Err(Error::EmptyDataset(format!("{} contains no pairs", path.display())));
    }
    Ok(pairs)
}

/// Keeps pairs whose two annotators agree.
pub fn consensus_filter(pairs: &[ConsensusPair]) -> Result<ConsensusResult> {
    if pairs.is_empty() {
        return Err(Error::invalid("consensus filtering needs at least one pair"));
    }
    let kept: Vec<(String, usize)> =
        pairs.iter().filter(|p| p.label_a == p.label_b).map(|p| (p.id.clone(), p.label_a)).collect();
    Ok(ConsensusResult { agreement_rate: kept.len() as f64 / pairs.len() as f64, total: pairs.len(), kept })
}
