//! Binary classification metrics and rank correlation.
//!
//! AUROC uses the Mann-Whitney convention (tied positive/negative pairs count
//! one half). AUPRC is average precision: a step integral over the distinct
//! score levels in descending order, not a trapezoid.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::arg(format!(
                "{} scores but {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::arg(format!("labels must be 0/1, got {l}")));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::Numeric(format!("non-finite score {s}")));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    fn require_both_classes(&self, what: &str) -> Result<(usize, usize)> {
        let p = self.positives();
        let n = self.len() - p;
        if p == 0 || n == 0 {
            return Err(Error::UndefinedMetric(format!(
                "{what} needs both classes ({p} positives, {n} negatives)"
            )));
        }
        Ok((p, n))
    }
}

/// Average (1-based) ranks; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn auroc(s: &ScoredSet) -> Result<f64> {
    let (p, n) = s.require_both_classes("AUROC")?;
    let ranks = average_ranks(&s.scores);
    let rank_sum: f64 = ranks
        .iter()
        .zip(&s.labels)
        .filter(|(_, &l)| l == 1)
        .map(|(r, _)| r)
        .sum();
    let (p, n) = (p as f64, n as f64);
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * n))
}

/// Score order, descending, grouped into runs of equal score.
fn descending_groups(s: &ScoredSet) -> Vec<(f64, usize, usize)> {
    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s.scores[b].total_cmp(&s.scores[a]));
    let mut groups: Vec<(f64, usize, usize)> = Vec::new();
    for i in order {
        let score = s.scores[i];
        let (pos, neg) = if s.labels[i] == 1 { (1, 0) } else { (0, 1) };
        match groups.last_mut() {
            Some(g) if g.0 == score => {
                g.1 += pos;
                g.2 += neg;
            }
            _ => groups.push((score, pos, neg)),
        }
    }
    groups
}

pub fn auprc(s: &ScoredSet) -> Result<f64> {
    let total_pos = s.positives();
    if total_pos == 0 {
        return Err(Error::UndefinedMetric("AUPRC needs at least one positive".into()));
    }
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut ap = 0.0;
    for (_, pos, neg) in descending_groups(s) {
        tp += pos;
        fp += neg;
        if pos > 0 {
            ap += pos as f64 * (tp as f64 / (tp + fp) as f64);
        }
    }
    // one division at the end keeps a perfect ranking at exactly 1
    Ok(ap / total_pos as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn at_threshold(s: &ScoredSet, threshold: f64) -> Self {
        let mut c = Counts::default();
        for (&score, &label) in s.scores.iter().zip(&s.labels) {
            match (score >= threshold, label == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    fn sensitivity(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    /// `None` when the set holds a single class.
    pub auroc: Option<f64>,
    /// `None` when the set holds no positives.
    pub auprc: Option<f64>,
    pub f1: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub threshold: f64,
    pub counts: Counts,
    /// Metrics whose denominator was zero and were reported as 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
}

/// Predicts positive iff `score >= threshold` and fills every metric.
pub fn confusion_metrics(s: &ScoredSet, threshold: f64) -> Result<MetricsReport> {
    if s.is_empty() {
        return Err(Error::arg("cannot score an empty set"));
    }
    let c = Counts::at_threshold(s, threshold);
    let mut degenerate = Vec::new();
    let mut metric = |name: &str, num: usize, den: usize| {
        if den == 0 {
            degenerate.push(name.to_string());
        }
        ratio(num, den)
    };
    let accuracy = metric("accuracy", c.tp + c.tn, c.total());
    let sensitivity = metric("sensitivity", c.tp, c.tp + c.fn_);
    let specificity = metric("specificity", c.tn, c.tn + c.fp);
    let precision = metric("precision", c.tp, c.tp + c.fp);
    let f1 = metric("f1", 2 * c.tp, 2 * c.tp + c.fp + c.fn_);
    Ok(MetricsReport {
        accuracy,
        auroc: auroc(s).ok(),
        auprc: auprc(s).ok(),
        f1,
        sensitivity,
        specificity,
        precision,
        threshold,
        counts: c,
        degenerate,
    })
}

/// Threshold maximizing F1, scanning the lowest score (everything positive),
/// midpoints between consecutive distinct scores, and +inf. Ties prefer higher
/// sensitivity, then the lower threshold.
pub fn optimal_threshold(val: &ScoredSet) -> Result<f64> {
    let (total_pos, _) = val.require_both_classes("threshold optimization")?;
    let groups = descending_groups(val);
    let total_neg = val.len() - total_pos;

    // Sweeping from high to low threshold; a threshold just below group g's
    // score admits groups 0..=g as positive.
    let mut best = (Counts {
        tp: 0,
        fp: 0,
        tn: total_neg,
        fn_: total_pos,
    }, f64::INFINITY);
    let (mut tp, mut fp) = (0, 0);
    for (g, &(score, pos, neg)) in groups.iter().enumerate() {
        tp += pos;
        fp += neg;
        let threshold = match groups.get(g + 1) {
            Some(&(next, _, _)) => (score + next) / 2.0,
            None => score,
        };
        let c = Counts {
            tp,
            fp,
            tn: total_neg - fp,
            fn_: total_pos - tp,
        };
        if better(&c, threshold, &best.0, best.1) {
            best = (c, threshold);
        }
    }
    Ok(best.1)
}

fn better(c: &Counts, t: f64, best: &Counts, best_t: f64) -> bool {
    match c.f1().total_cmp(&best.f1()) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => match c.sensitivity().total_cmp(&best.sensitivity()) {
            Ordering::Greater => true,
            Ordering::Less => false,
            Ordering::Equal => t < best_t,
        },
    }
}

/// Tie-aware Spearman rank correlation.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::arg(format!("length mismatch {} vs {}", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(Error::arg("spearman needs at least 3 points"));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    pearson(&ra, &rb)
        .ok_or_else(|| Error::UndefinedMetric("zero rank variance in spearman input".into()))
}

fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}
