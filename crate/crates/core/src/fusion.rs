//! File-level posteriors, late fusion across spectrogram kinds, and
//! accuracy reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::spectra::SpectrogramKind;

/// Lower clamp applied to every probability before a product fusion.
pub const PROD_FLOOR: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum FusionError {
    #[error("nothing to aggregate: {0}")]
    Empty(String),
    #[error("inputs are not aligned: {0}")]
    Align(String),
    #[error("probability file format error: {0}")]
    Format(String),
    #[error("fusion configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Patch,
    File,
    Fused,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbVector {
    pub probs: Vec<f64>,
    pub level: Level,
    pub file_id: String,
    /// One kind for patch and file vectors, every contributor for fused ones.
    pub kinds: Vec<SpectrogramKind>,
}

impl ProbVector {
    pub fn n_classes(&self) -> usize {
        self.probs.len()
    }

    /// `logmel`, or `cqt+logmel` for fused vectors.
    pub fn kind_label(&self) -> String {
        kinds_label(&self.kinds)
    }
}

pub fn kinds_label(kinds: &[SpectrogramKind]) -> String {
    kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>().join("+")
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Mean,
    Prod,
    Max,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Mean, Strategy::Prod, Strategy::Max];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Mean => "mean",
            Strategy::Prod => "prod",
            Strategy::Max => "max",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = FusionError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mean" => Ok(Strategy::Mean),
            "prod" => Ok(Strategy::Prod),
            "max" => Ok(Strategy::Max),
            other => Err(FusionError::Config(format!("unknown strategy `{other}` (mean, prod or max)"))),
        }
    }
}

/// Averages the patch posteriors of one file.
pub fn patch_mean(rows: &[Vec<f64>], file_id: &str, kind: SpectrogramKind) -> Result<ProbVector, FusionError> {
    let Some(first) = rows.first() else {
        return Err(FusionError::Empty(format!("file {file_id} has no patch predictions")));
    };
    let c = first.len();
    let mut sum = vec![0.0; c];
    for r in rows {
        if r.len() != c {
            return Err(FusionError::Align(format!("patch rows of {file_id} disagree on the class count")));
        }
        for (s, &p) in sum.iter_mut().zip(r) {
            *s += p;
        }
    }
    let n = rows.len() as f64;
    Ok(ProbVector {
        probs: sum.into_iter().map(|s| s / n).collect(),
        level: Level::File,
        file_id: file_id.to_string(),
        kinds: vec![kind],
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Prediction {
    pub class: usize,
    /// Another class shares the maximum; the lowest index won.
    pub tie: bool,
}

pub fn predict(probs: &[f64]) -> Prediction {
    let mut best = 0;
    let mut tie = false;
    for (i, &p) in probs.iter().enumerate().skip(1) {
        if p > probs[best] {
            best = i;
            tie = false;
        } else if p == probs[best] {
            tie = true;
        }
    }
    if tie {
        log::debug!("argmax tie in {probs:?}, taking class {best}");
    }
    Prediction { class: best, tie }
}

/// Fuses one file's posteriors from several systems.
///
/// `prod` is the elementwise product scaled by `1/S` after clamping at
/// [`PROD_FLOOR`]; it is not renormalized.
pub fn fuse(inputs: &[ProbVector], strategy: Strategy) -> Result<ProbVector, FusionError> {
    let Some(first) = inputs.first() else {
        return Err(FusionError::Empty("no systems to fuse".into()));
    };
    let c = first.n_classes();
    for v in inputs {
        if v.n_classes() != c {
            return Err(FusionError::Align(format!(
                "{} has {} classes, {} has {c}",
                v.kind_label(),
                v.n_classes(),
                first.kind_label()
            )));
        }
        if v.file_id != first.file_id {
            return Err(FusionError::Align(format!("file {} fused with {}", v.file_id, first.file_id)));
        }
    }
    let s = inputs.len() as f64;
    let probs: Vec<f64> = (0..c)
        .map(|k| {
            let col = inputs.iter().map(|v| v.probs[k]);
            match strategy {
                Strategy::Mean => col.sum::<f64>() / s,
                Strategy::Prod => col.map(|p| p.max(PROD_FLOOR)).product::<f64>() / s,
                Strategy::Max => col.fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    Ok(ProbVector {
        probs,
        level: Level::Fused,
        file_id: first.file_id.clone(),
        kinds: inputs.iter().flat_map(|v| v.kinds.iter().copied()).collect(),
    })
}

/// Fuses per-system lists aligned by file id; every list must cover the
/// same files.
pub fn fuse_systems(systems: &[Vec<ProbVector>], strategy: Strategy) -> Result<Vec<ProbVector>, FusionError> {
    let Some(first) = systems.first() else {
        return Err(FusionError::Empty("no systems to fuse".into()));
    };
    let index: Vec<BTreeMap<&str, &ProbVector>> = systems
        .iter()
        .map(|s| s.iter().map(|v| (v.file_id.as_str(), v)).collect())
        .collect();
    let ids: BTreeSet<&str> = index[0].keys().copied().collect();
    for (i, other) in index.iter().enumerate().skip(1) {
        let theirs: BTreeSet<&str> = other.keys().copied().collect();
        if theirs != ids {
            let diff: Vec<&str> = ids.symmetric_difference(&theirs).copied().collect();
            return Err(FusionError::Align(format!(
                "system {i} covers different files; symmetric difference: {}",
                diff.join(", ")
            )));
        }
    }
    first
        .iter()
        .map(|v| {
            let row: Vec<ProbVector> = index.iter().map(|m| m[v.file_id.as_str()].clone()).collect();
            fuse(&row, strategy)
        })
        .collect()
}

/// Combinations proposed for fusion, smallest first.
pub fn proposed_combinations() -> Vec<Vec<SpectrogramKind>> {
    use SpectrogramKind::*;
    vec![
        vec![Cqt, Stft],
        vec![Cqt, Gam],
        vec![Cqt, LogMel],
        vec![Cqt, Mfcc],
        vec![Cqt, LogMel, Gam],
        vec![Cqt, Gam, Mfcc],
        vec![Cqt, Gam, Stft, Mfcc],
        vec![Cqt, Gam, Stft, LogMel],
        vec![Cqt, LogMel, Gam, Stft, Mfcc],
    ]
}

/// Every single kind followed by [`proposed_combinations`].
pub fn evaluated_combinations() -> Vec<Vec<SpectrogramKind>> {
    SpectrogramKind::ALL
        .iter()
        .map(|&k| vec![k])
        .chain(proposed_combinations())
        .collect()
}

/// Ground truth for one evaluated file.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    pub file_id: String,
    pub label: usize,
    pub device: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub systems: String,
    pub strategy: Option<Strategy>,
    pub categories: Vec<String>,
    pub n_files: usize,
    pub accuracy: f64,
    pub per_class: Vec<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub ties: usize,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub devices: BTreeMap<String, f64>,
}

/// Scores file-level vectors against the truth; both are matched by file id.
pub fn evaluate(
    probs: &[ProbVector],
    truth: &[Truth],
    categories: &[String],
    strategy: Option<Strategy>,
) -> Result<EvalReport, FusionError> {
    let c = categories.len();
    if truth.is_empty() {
        return Err(FusionError::Empty("no files to evaluate".into()));
    }
    let by_id: BTreeMap<&str, &ProbVector> = probs.iter().map(|p| (p.file_id.as_str(), p)).collect();
    let mut confusion = vec![vec![0usize; c]; c];
    let mut ties = 0;
    let mut device_hits: BTreeMap<String, (usize, usize)> = BTreeMap::new();
    for t in truth {
        let p = by_id
            .get(t.file_id.as_str())
            .ok_or_else(|| FusionError::Align(format!("no prediction for file {}", t.file_id)))?;
        if p.n_classes() != c || t.label >= c {
            return Err(FusionError::Align(format!(
                "file {} has {} probabilities for {c} categories",
                t.file_id,
                p.n_classes()
            )));
        }
        let pred = predict(&p.probs);
        ties += pred.tie as usize;
        confusion[t.label][pred.class] += 1;
        if let Some(d) = &t.device {
            let e = device_hits.entry(d.clone()).or_default();
            e.0 += (pred.class == t.label) as usize;
            e.1 += 1;
        }
    }
    let correct: usize = (0..c).map(|k| confusion[k][k]).sum();
    let per_class = (0..c)
        .map(|k| {
            let n: usize = confusion[k].iter().sum();
            if n == 0 { f64::NAN } else { confusion[k][k] as f64 / n as f64 }
        })
        .collect();
    let mut devices: BTreeMap<String, f64> = device_hits
        .iter()
        .map(|(d, &(hit, n))| (d.clone(), hit as f64 / n as f64))
        .collect();
    if let (Some(b), Some(cc)) = (device_hits.get("B"), device_hits.get("C")) {
        devices.insert("B&C".into(), (b.0 + cc.0) as f64 / (b.1 + cc.1) as f64);
    }
    Ok(EvalReport {
        systems: probs.first().map(ProbVector::kind_label).unwrap_or_default(),
        strategy,
        categories: categories.to_vec(),
        n_files: truth.len(),
        accuracy: correct as f64 / truth.len() as f64,
        per_class,
        confusion,
        ties,
        devices,
    })
}

impl EvalReport {
    /// Plain-text summary with the confusion matrix.
    pub fn table(&self) -> String {
        let mut s = format!(
            "systems {} strategy {} files {} accuracy {:.4}\n",
            self.systems,
            self.strategy.map_or("-".to_string(), |x| x.to_string()),
            self.n_files,
            self.accuracy
        );
        let width = self.categories.iter().map(String::len).max().unwrap_or(4).max(6);
        s.push_str(&format!("{:width$}  {:>8}  confusion\n", "class", "acc"));
        for (k, name) in self.categories.iter().enumerate() {
            let row: Vec<String> = self.confusion[k].iter().map(|n| format!("{n:>4}")).collect();
            s.push_str(&format!("{name:width$}  {:>8.4}  {}\n", self.per_class[k], row.join("")));
        }
        for (d, acc) in &self.devices {
            s.push_str(&format!("device {d}: {acc:.4}\n"));
        }
        s
    }

    /// `category,accuracy` rows for bar charts.
    pub fn write_category_csv<W: Write>(&self, w: W) -> Result<(), FusionError> {
        let mut out = csv::Writer::from_writer(w);
        let fail = |e: csv::Error| FusionError::Format(e.to_string());
        out.write_record(["category", "accuracy"]).map_err(fail)?;
        for (name, acc) in self.categories.iter().zip(&self.per_class) {
            out.write_record([name.as_str(), &format!("{acc:.6}")]).map_err(fail)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Writes `file_id,kind,p_0,…` with nine significant decimals per value.
pub fn dump_probs<W: Write>(w: W, probs: &[ProbVector]) -> Result<(), FusionError> {
    let c = probs.first().map_or(0, ProbVector::n_classes);
    let fail = |e: csv::Error| FusionError::Format(e.to_string());
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["file_id".to_string(), "kind".to_string()];
    header.extend((0..c).map(|k| format!("p_{k}")));
    out.write_record(&header).map_err(fail)?;
    for v in probs {
        if v.n_classes() != c {
            return Err(FusionError::Format(format!("{} has {} classes, expected {c}", v.file_id, v.n_classes())));
        }
        let mut rec = vec![v.file_id.clone(), v.kind_label()];
        rec.extend(v.probs.iter().map(|p| format!("{p:.9e}")));
        out.write_record(&rec).map_err(fail)?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_probs<R: Read>(r: R) -> Result<Vec<ProbVector>, FusionError> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(r);
    let header = rdr.headers().map_err(|e| FusionError::Format(e.to_string()))?.clone();
    if header.len() < 4 || &header[0] != "file_id" || &header[1] != "kind" {
        return Err(FusionError::Format("expected header file_id,kind,p_0,p_1,…".into()));
    }
    let c = header.len() - 2;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| FusionError::Format(e.to_string()))?;
        let row = i + 2;
        if rec.len() != c + 2 {
            return Err(FusionError::Format(format!("row {row} has {} columns, expected {}", rec.len(), c + 2)));
        }
        let kinds = rec[1]
            .split('+')
            .map(|k| k.parse::<SpectrogramKind>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| FusionError::Format(format!("row {row}: {e}")))?;
        let probs = (2..c + 2)
            .map(|j| rec[j].trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| FusionError::Format(format!("row {row}: {e}")))?;
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(FusionError::Format(format!("row {row} holds a negative or non-finite probability")));
        }
        out.push(ProbVector {
            probs,
            level: if kinds.len() > 1 { Level::Fused } else { Level::File },
            file_id: rec[0].to_string(),
            kinds,
        });
    }
    Ok(out)
}
