//! MSE, LCC, SRCC and Kendall tau-b at utterance and system level.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::MosDataset;
use crate::error::{check_len, Error, Result};

fn check_pair(pred: &[f64], truth: &[f64], min_len: usize) -> Result<()> {
    check_len(truth.len(), pred.len())?;
    if pred.len() < min_len {
        return Err(Error::invalid(format!(
            "need at least {min_len} values, got {}",
            pred.len()
        )));
    }
    Ok(())
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 1)?;
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok(sum / pred.len() as f64)
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Pearson linear correlation coefficient.
pub fn lcc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 2)?;
    let (mx, my) = (mean(pred), mean(truth));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in pred.iter().zip(truth) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("constant input"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based fractional ranks; tied values share the mean of their positions.
pub fn fractional_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && x[order[end]] == x[order[start]] {
            end += 1;
        }
        // positions start+1 ..= end
        let r = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = r;
        }
        start = end;
    }
    ranks
}

/// Spearman rank correlation: Pearson on fractional ranks.
pub fn srcc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 2)?;
    lcc(&fractional_ranks(pred), &fractional_ranks(truth))
}

/// Kendall tau-b in O(n log n) (Knight's algorithm).
pub fn ktau(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth, 2)?;
    let n = pred.len();
    let n0 = (n * (n - 1) / 2) as f64;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        pred[a]
            .total_cmp(&pred[b])
            .then(truth[a].total_cmp(&truth[b]))
    });

    // pairs tied in pred (n1) and tied in both (n3)
    let (mut n1, mut n3) = (0u64, 0u64);
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pred[order[j]] == pred[order[i]] {
            j += 1;
        }
        n1 += pairs(j - i);
        let mut k = i;
        while k < j {
            let mut l = k + 1;
            while l < j && truth[order[l]] == truth[order[k]] {
                l += 1;
            }
            n3 += pairs(l - k);
            k = l;
        }
        i = j;
    }

    // merge sort on truth counts swaps = discordant pairs
    let mut ys: Vec<f64> = order.iter().map(|&i| truth[i]).collect();
    let mut scratch = vec![0.0; n];
    let swaps = merge_count(&mut ys, &mut scratch);

    let mut n2 = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && ys[j] == ys[i] {
            j += 1;
        }
        n2 += pairs(j - i);
        i = j;
    }

    let (n1, n2, n3) = (n1 as f64, n2 as f64, n3 as f64);
    let denom = ((n0 - n1) * (n0 - n2)).sqrt();
    if denom == 0.0 {
        return Err(Error::UndefinedCorrelation("all pairs tied"));
    }
    // concordant - discordant = n0 - n1 - n2 + n3 - 2 * swaps
    let numer = n0 - n1 - n2 + n3 - 2.0 * swaps as f64;
    Ok((numer / denom).clamp(-1.0, 1.0))
}

fn pairs(k: usize) -> u64 {
    (k as u64) * (k as u64).saturating_sub(1) / 2
}

fn merge_count(v: &mut [f64], scratch: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (left, right) = v.split_at_mut(mid);
        let (sl, sr) = scratch.split_at_mut(mid);
        merge_count(left, sl) + merge_count(right, sr)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j] < v[i] {
            scratch[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            scratch[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    scratch[k..k + mid - i].copy_from_slice(&v[i..mid]);
    k += mid - i;
    scratch[k..k + n - j].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&scratch[..n]);
    swaps
}

/// Per-system means of predictions and utterance MOS labels, systems in id order.
pub fn system_level(pred: &[f64], dataset: &MosDataset) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len(dataset.len(), pred.len())?;
    let mut acc: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
    for (u, &p) in dataset.utterances().iter().zip(pred) {
        let e = acc.entry(u.system_id.as_str()).or_insert((0.0, 0.0, 0));
        e.0 += p;
        e.1 += u.mean_opinion_score();
        e.2 += 1;
    }
    Ok(acc
        .values()
        .map(|&(p, t, n)| (p / n as f64, t / n as f64))
        .unzip())
}

/// A metric value, or an explicit marker when the correlation is undefined.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Value(f64),
    Undefined(Undefined),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Undefined {
    Undefined,
}

impl MetricValue {
    pub const UNDEFINED: Self = MetricValue::Undefined(Undefined::Undefined);

    fn from_result(r: Result<f64>) -> Result<Self> {
        match r {
            Ok(v) => Ok(MetricValue::Value(v)),
            Err(Error::UndefinedCorrelation(_)) => Ok(Self::UNDEFINED),
            Err(e) => Err(e),
        }
    }

    pub fn value(&self) -> Option<f64> {
        match *self {
            MetricValue::Value(v) => Some(v),
            MetricValue::Undefined(_) => None,
        }
    }
}

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricValue::Value(v) => write!(f, "{v:.3}"),
            MetricValue::Undefined(_) => f.write_str("undef"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelMetrics {
    pub mse: f64,
    pub lcc: MetricValue,
    pub srcc: MetricValue,
    pub ktau: MetricValue,
}

impl LevelMetrics {
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self> {
        // correlations need two points; a single system gets undefined markers
        let corr = |f: fn(&[f64], &[f64]) -> Result<f64>| {
            if pred.len() < 2 {
                Ok(MetricValue::UNDEFINED)
            } else {
                MetricValue::from_result(f(pred, truth))
            }
        };
        Ok(Self {
            mse: mse(pred, truth)?,
            lcc: corr(lcc)?,
            srcc: corr(srcc)?,
            ktau: corr(ktau)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub utterance: LevelMetrics,
    pub system: LevelMetrics,
    pub n_utterances: usize,
    pub n_systems: usize,
    pub ktau_variant: String,
}

pub fn evaluate(pred: &[f64], dataset: &MosDataset) -> Result<EvalReport> {
    check_len(dataset.len(), pred.len())?;
    let labels = dataset.mos_labels();
    let (sys_pred, sys_truth) = system_level(pred, dataset)?;
    Ok(EvalReport {
        utterance: LevelMetrics::compute(pred, &labels)?,
        system: LevelMetrics::compute(&sys_pred, &sys_truth)?,
        n_utterances: dataset.len(),
        n_systems: sys_pred.len(),
        ktau_variant: "tau-b".into(),
    })
}

impl EvalReport {
    /// Aligned text table: MSE, LCC, SRCC, KTAU for utterance then system level.
    pub fn to_table(&self) -> String {
        let row = |name: &str, m: &LevelMetrics| {
            format!(
                "{name:<10} {:>8.3} {:>8} {:>8} {:>8}\n",
                m.mse,
                m.lcc.to_string(),
                m.srcc.to_string(),
                m.ktau.to_string()
            )
        };
        let mut s = format!(
            "{:<10} {:>8} {:>8} {:>8} {:>8}\n",
            "level", "MSE", "LCC", "SRCC", "KTAU"
        );
        s += &row("utterance", &self.utterance);
        s += &row("system", &self.system);
        s += &format!(
            "({} utterances, {} systems)\n",
            self.n_utterances, self.n_systems
        );
        s
    }
}
