//! Classification and attribute metrics, plus the prediction analyses
//! (binned CCC, mean ± std, per-emotion improvement shares).

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dataio::{LabelRow, Split};
use crate::error::{Error, Result};
use crate::losses::ccc;
use crate::taxonomy::{Attribute, Emotion, NUM_CLASSES};

/// Rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix(pub [[usize; NUM_CLASSES]; NUM_CLASSES]);

impl ConfusionMatrix {
    pub fn total(&self) -> usize {
        self.0.iter().flatten().sum()
    }

    pub fn row_sum(&self, c: usize) -> usize {
        self.0[c].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> usize {
        self.0.iter().map(|r| r[c]).sum()
    }

    pub fn true_positives(&self) -> usize {
        (0..NUM_CLASSES).map(|c| self.0[c][c]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub n: usize,
    pub confusion: ConfusionMatrix,
    /// `None` for classes absent from both truth and predictions.
    pub per_class_f1: Vec<Option<f64>>,
    pub per_class_recall: Vec<Option<f64>>,
    pub f1_macro: f64,
    pub f1_micro: f64,
    pub accuracy: f64,
    /// Number of classes averaged into `f1_macro`.
    pub macro_classes: usize,
}

/// Confusion matrix, per-class F1, macro F1 over classes present in truth or
/// predictions, and micro F1 from pooled counts.
pub fn classification_metrics(pred: &[Emotion], truth: &[Emotion]) -> Result<ClassificationReport> {
    if pred.len() != truth.len() {
        return Err(Error::invalid(
            "predictions",
            format!("length mismatch: {} predictions vs {} labels", pred.len(), truth.len()),
        ));
    }
    if pred.is_empty() {
        return Err(Error::invalid("predictions", "need at least one sample"));
    }
    let mut m = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for (p, t) in pred.iter().zip(truth) {
        m[t.index()][p.index()] += 1;
    }
    let cm = ConfusionMatrix(m);
    let n = pred.len();

    let mut per_class_f1 = Vec::with_capacity(NUM_CLASSES);
    let mut per_class_recall = Vec::with_capacity(NUM_CLASSES);
    for c in 0..NUM_CLASSES {
        let tp = cm.0[c][c];
        let fn_ = cm.row_sum(c) - tp;
        let fp = cm.col_sum(c) - tp;
        let denom = 2 * tp + fp + fn_;
        per_class_f1.push((denom > 0).then(|| 2.0 * tp as f64 / denom as f64));
        per_class_recall.push((cm.row_sum(c) > 0).then(|| tp as f64 / cm.row_sum(c) as f64));
    }
    let present: Vec<f64> = per_class_f1.iter().flatten().copied().collect();
    let f1_macro = present.iter().sum::<f64>() / present.len() as f64;

    let tp = cm.true_positives();
    let (fp, fn_) = (n - tp, n - tp);
    let f1_micro = 2.0 * tp as f64 / (2 * tp + fp + fn_) as f64;
    let accuracy = tp as f64 / n as f64;
    debug_assert_eq!(f1_micro, accuracy);

    Ok(ClassificationReport {
        n,
        confusion: cm,
        per_class_f1,
        per_class_recall,
        f1_macro,
        f1_micro,
        accuracy,
        macro_classes: present.len(),
    })
}

/// Per-attribute CCC and their mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeReport {
    pub n: usize,
    pub arousal: f64,
    pub valence: f64,
    pub dominance: f64,
    pub average: f64,
}

impl AttributeReport {
    pub fn get(&self, a: Attribute) -> f64 {
        match a {
            Attribute::Arousal => self.arousal,
            Attribute::Valence => self.valence,
            Attribute::Dominance => self.dominance,
        }
    }
}

/// Triples are `[arousal, valence, dominance]`.
pub fn attribute_metrics(pred: &[[f64; 3]], truth: &[[f64; 3]]) -> Result<AttributeReport> {
    if pred.len() != truth.len() {
        return Err(Error::invalid(
            "predictions",
            format!("length mismatch: {} predictions vs {} labels", pred.len(), truth.len()),
        ));
    }
    let col = |v: &[[f64; 3]], j: usize| v.iter().map(|r| r[j]).collect::<Vec<_>>();
    let mut c = [0.0; 3];
    for (j, slot) in c.iter_mut().enumerate() {
        *slot = ccc(&col(pred, j), &col(truth, j))?;
    }
    Ok(AttributeReport {
        n: pred.len(),
        arousal: c[0],
        valence: c[1],
        dominance: c[2],
        average: (c[0] + c[1] + c[2]) / 3.0,
    })
}

/// Combined report; either half may be absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub classification: Option<ClassificationReport>,
    pub attributes: Option<AttributeReport>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl MetricsReport {
    pub fn new(classification: Option<ClassificationReport>, attributes: Option<AttributeReport>) -> Self {
        let mut notes = Vec::new();
        if let Some(c) = &classification {
            assert_eq!(c.f1_micro, c.accuracy, "F1-micro must equal accuracy for single-label data");
            if c.macro_classes < NUM_CLASSES {
                notes.push(format!(
                    "F1-macro averaged over {} of {NUM_CLASSES} classes; absent classes excluded",
                    c.macro_classes
                ));
            }
        }
        Self {
            classification,
            attributes,
            notes,
        }
    }

    pub fn value(&self, col: Column) -> Option<f64> {
        let c = self.classification.as_ref();
        let a = self.attributes.as_ref();
        match col {
            Column::F1Macro => c.map(|c| c.f1_macro),
            Column::F1Micro => c.map(|c| c.f1_micro),
            Column::Accuracy => c.map(|c| c.accuracy),
            Column::Valence => a.map(|a| a.valence),
            Column::Arousal => a.map(|a| a.arousal),
            Column::Dominance => a.map(|a| a.dominance),
            Column::Average => a.map(|a| a.average),
        }
    }

    /// CSV row in `shape` column order, 3 decimals, empty cells for missing halves.
    pub fn csv_row(&self, shape: TableShape) -> String {
        shape
            .columns()
            .iter()
            .map(|&c| self.value(c).map(|v| format!("{v:.3}")).unwrap_or_default())
            .collect::<Vec<_>>()
            .join(",")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    F1Macro,
    F1Micro,
    Accuracy,
    Valence,
    Arousal,
    Dominance,
    Average,
}

impl Column {
    pub fn header(self) -> &'static str {
        match self {
            Column::F1Macro => "F1-Macro",
            Column::F1Micro => "F1-Micro",
            Column::Accuracy => "Acc",
            Column::Valence => "Val",
            Column::Arousal => "Aro",
            Column::Dominance => "Dom",
            Column::Average => "Avg",
        }
    }
}

/// Column layouts of the three result tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TableShape {
    /// Fusion strategies: categorical metrics plus per-attribute CCC and mean.
    Table1,
    /// Balancing schemas: categorical metrics only.
    Table2,
    /// Text-only models: categorical metrics and per-attribute CCC.
    Table3,
}

impl TableShape {
    pub fn columns(self) -> &'static [Column] {
        use Column::*;
        match self {
            TableShape::Table1 => &[F1Macro, F1Micro, Accuracy, Valence, Arousal, Dominance, Average],
            TableShape::Table2 => &[F1Macro, F1Micro, Accuracy],
            TableShape::Table3 => &[F1Macro, F1Micro, Accuracy, Valence, Arousal, Dominance],
        }
    }

    pub fn header(self) -> String {
        self.columns().iter().map(|c| c.header()).collect::<Vec<_>>().join(",")
    }
}

impl std::fmt::Display for TableShape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            TableShape::Table1 => "table1",
            TableShape::Table2 => "table2",
            TableShape::Table3 => "table3",
        })
    }
}

impl std::str::FromStr for TableShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table1" => Ok(TableShape::Table1),
            "table2" => Ok(TableShape::Table2),
            "table3" => Ok(TableShape::Table3),
            _ => Err(Error::invalid("shape", format!("expected table1|table2|table3, got `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum BinValue {
    Ccc { value: f64 },
    Insufficient,
    Degenerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinCcc {
    pub lo: f64,
    pub hi: f64,
    /// Whether `hi` itself belongs to the bin (true for the last bin only).
    pub closed: bool,
    pub n: usize,
    #[serde(flatten)]
    pub result: BinValue,
}

impl BinCcc {
    pub fn label(&self) -> String {
        format!("[{}, {}{}", self.lo, self.hi, if self.closed { "]" } else { ")" })
    }

    pub fn value(&self) -> Option<f64> {
        match self.result {
            BinValue::Ccc { value } => Some(value),
            _ => None,
        }
    }
}

/// CCC within ground-truth ranges `[e0, e1), [e1, e2), …, [e_{k-1}, e_k]`.
pub fn binned_ccc(pred: &[f64], truth: &[f64], edges: &[f64]) -> Result<Vec<BinCcc>> {
    if pred.len() != truth.len() {
        return Err(Error::invalid("binned_ccc", "prediction and truth lengths differ"));
    }
    if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::invalid("edges", format!("need ≥ 2 strictly increasing edges, got {edges:?}")));
    }
    let last = edges.len() - 2;
    let mut out = Vec::with_capacity(edges.len() - 1);
    for (b, w) in edges.windows(2).enumerate() {
        let (lo, hi) = (w[0], w[1]);
        let closed = b == last;
        let (p, t): (Vec<f64>, Vec<f64>) = pred
            .iter()
            .zip(truth)
            .filter(|(_, &y)| y >= lo && (y < hi || (closed && y == hi)))
            .map(|(&x, &y)| (x, y))
            .unzip();
        let result = if p.len() < 2 {
            BinValue::Insufficient
        } else {
            match ccc(&p, &t) {
                Ok(value) => BinValue::Ccc { value },
                Err(Error::DegenerateCcc) => BinValue::Degenerate,
                Err(e) => return Err(e),
            }
        };
        out.push(BinCcc {
            lo,
            hi,
            closed,
            n: p.len(),
            result,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictionStats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl std::fmt::Display for PredictionStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2}±{:.2}", self.mean, self.std)
    }
}

pub fn prediction_stats(pred: &[f64]) -> Result<PredictionStats> {
    if pred.is_empty() {
        return Err(Error::invalid("prediction_stats", "need at least one value"));
    }
    let n = pred.len() as f64;
    let mean = pred.iter().sum::<f64>() / n;
    let var = pred.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok(PredictionStats { mean, std: var.sqrt() })
}

/// Samples where model A's squared error beats model B's, broken down by emotion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelComparison {
    pub n: usize,
    /// Indices with `SE_A < SE_B`; ties excluded.
    pub improved: Vec<usize>,
    /// Emotion shares within the improved set, indexed by class.
    pub improved_shares: Vec<f64>,
    /// Emotion shares across all samples.
    pub full_shares: Vec<f64>,
}

impl ModelComparison {
    pub fn render(&self) -> String {
        let mut s = format!("improved {}/{} samples\ncode,improved_share,overall_share\n", self.improved.len(), self.n);
        for e in Emotion::ALL {
            let _ = writeln!(
                s,
                "{},{:.1}%,{:.1}%",
                e.code(),
                100.0 * self.improved_shares[e.index()],
                100.0 * self.full_shares[e.index()]
            );
        }
        s
    }
}

pub fn compare_models(pred_a: &[f64], pred_b: &[f64], truth: &[f64], emotions: &[Emotion]) -> Result<ModelComparison> {
    let n = truth.len();
    if pred_a.len() != n || pred_b.len() != n || emotions.len() != n {
        return Err(Error::invalid(
            "compare_models",
            format!(
                "length mismatch: a={}, b={}, truth={n}, emotions={}",
                pred_a.len(),
                pred_b.len(),
                emotions.len()
            ),
        ));
    }
    let improved: Vec<usize> = (0..n)
        .filter(|&i| {
            let ea = (pred_a[i] - truth[i]).powi(2);
            let eb = (pred_b[i] - truth[i]).powi(2);
            ea < eb
        })
        .collect();
    let shares = |idx: &mut dyn Iterator<Item = usize>, total: usize| {
        let mut counts = vec![0usize; NUM_CLASSES];
        idx.for_each(|i| counts[emotions[i].index()] += 1);
        counts
            .into_iter()
            .map(|c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
            .collect::<Vec<_>>()
    };
    Ok(ModelComparison {
        n,
        improved_shares: shares(&mut improved.iter().copied(), improved.len()),
        full_shares: shares(&mut (0..n), n),
        improved,
    })
}

/// Scores prediction rows against label rows joined by id. Truth rows outside
/// `split`, or without a label for a half, are skipped; truth rows without a
/// prediction are counted in a note. Prediction ids absent from the labels
/// are an error.
pub fn evaluate_rows(pred: &[LabelRow], truth: &[LabelRow], split: Option<Split>) -> Result<MetricsReport> {
    let by_id: HashMap<&str, &LabelRow> = pred.iter().map(|r| (r.id.as_str(), r)).collect();
    let known: HashSet<&str> = truth.iter().map(|r| r.id.as_str()).collect();
    if let Some(stray) = pred.iter().find(|r| !known.contains(r.id.as_str())) {
        return Err(Error::invalid("predictions", format!("id `{}` has no label row", stray.id)));
    }
    let (mut cp, mut ct, mut ap, mut at) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut missing = 0;
    for t in truth.iter().filter(|t| split.is_none_or(|s| t.split == s)) {
        let Some(p) = by_id.get(t.id.as_str()) else {
            missing += 1;
            continue;
        };
        if let (Some(pe), Some(te)) = (p.emotion, t.emotion) {
            cp.push(pe);
            ct.push(te);
        }
        if let (Some(pa), Some(ta)) = (p.attributes, t.attributes) {
            ap.push(pa.to_array());
            at.push(ta.to_array());
        }
    }
    if cp.is_empty() && ap.is_empty() {
        return Err(Error::invalid("predictions", "no prediction matches a labelled row"));
    }
    let classification = (!cp.is_empty()).then(|| classification_metrics(&cp, &ct)).transpose()?;
    let attributes = (!ap.is_empty()).then(|| attribute_metrics(&ap, &at)).transpose()?;
    let mut report = MetricsReport::new(classification, attributes);
    if missing > 0 {
        report.notes.push(format!("{missing} labelled rows have no prediction and are excluded"));
    }
    Ok(report)
}
