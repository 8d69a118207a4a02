//! AUC of the ROC curve and Spearman rank correlation.

use serde::{Deserialize, Serialize};

use crate::agreement::Metric;
use crate::{Error, Result};

/// Ranks starting at 1; tied values share the mean rank of their block.
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
        // positions start..end hold ranks start+1..=end
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

/// Mann–Whitney AUC: the fraction of positive/negative pairs in which the
/// positive instance scores higher, ties counting one half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("AUC scores".into()));
    }
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Label("AUC needs both classes".into()));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y == 1).map(|(r, _)| r).sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Pearson correlation of average ranks. Fails with [`Error::Undefined`]
/// when either series is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::Shape(format!("series lengths {} and {} differ", xs.len(), ys.len())));
    }
    if xs.len() < 3 {
        return Err(Error::InvalidArgument(format!("need at least 3 points, got {}", xs.len())));
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(Error::NonFinite("spearman input".into()));
    }
    let rx = average_ranks(xs);
    let ry = average_ranks(ys);
    let n = rx.len() as f64;
    let mean = (n + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mean, b - mean);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Undefined("constant series".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochPoint {
    pub epoch: usize,
    pub auc: f64,
    pub mean_agreement: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoStatus {
    Defined,
    ConstantAgreement,
    ConstantAuc,
    /// Fewer than three epochs were available.
    TooFewEpochs,
}

impl RhoStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RhoStatus::Defined => "defined",
            RhoStatus::ConstantAgreement => "constant_agreement",
            RhoStatus::ConstantAuc => "constant_auc",
            RhoStatus::TooFewEpochs => "too_few_epochs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "defined" => Some(RhoStatus::Defined),
            "constant_agreement" => Some(RhoStatus::ConstantAgreement),
            "constant_auc" => Some(RhoStatus::ConstantAuc),
            "too_few_epochs" => Some(RhoStatus::TooFewEpochs),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub metric: Metric,
    pub k: usize,
    /// `None` unless `status` is `Defined`.
    pub rho: Option<f64>,
    pub status: RhoStatus,
    pub points: Vec<EpochPoint>,
}

/// Spearman correlation across epochs between mean agreement and AUC.
pub fn correlate_agreement_auc(points: &[EpochPoint], metric: Metric, k: usize) -> Result<CorrelationReport> {
    if points.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "correlation needs at least 3 epochs, got {}",
            points.len()
        )));
    }
    let agreement: Vec<f64> = points.iter().map(|p| p.mean_agreement).collect();
    let aucs: Vec<f64> = points.iter().map(|p| p.auc).collect();
    let constant = |v: &[f64]| v.iter().all(|x| *x == v[0]);
    let (rho, status) = if constant(&agreement) {
        (None, RhoStatus::ConstantAgreement)
    } else if constant(&aucs) {
        (None, RhoStatus::ConstantAuc)
    } else {
        (Some(spearman(&agreement, &aucs)?), RhoStatus::Defined)
    };
    Ok(CorrelationReport {
        metric,
        k,
        rho,
        status,
        points: points.to_vec(),
    })
}
