//! Top-k feature selection and pairwise agreement between explanations.
//!
//! Four metrics compare the top-k features of two attribution vectors:
//!
//! - feature agreement (FA): shared features
//! - sign agreement (SA): shared features with the same sign
//! - rank agreement (RA): shared features at the same rank position
//! - signed rank agreement (SRA): same position and same sign
//!
//! Each is a count divided by `k`, so it lies in `[0, 1]` and moves in steps
//! of `1/k`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionVector, Method};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "FA")]
    Fa,
    #[serde(rename = "SA")]
    Sa,
    #[serde(rename = "RA")]
    Ra,
    #[serde(rename = "SRA")]
    Sra,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Fa, Metric::Sa, Metric::Ra, Metric::Sra];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Fa => "FA",
            Metric::Sa => "SA",
            Metric::Ra => "RA",
            Metric::Sra => "SRA",
        }
    }

    pub fn evaluate(self, a: &TopK, b: &TopK) -> Result<f64> {
        match self {
            Metric::Fa => feature_agreement(a, b),
            Metric::Sa => sign_agreement(a, b),
            Metric::Ra => rank_agreement(a, b),
            Metric::Sra => signed_rank_agreement(a, b),
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "FA" => Ok(Metric::Fa),
            "SA" => Ok(Metric::Sa),
            "RA" => Ok(Metric::Ra),
            "SRA" => Ok(Metric::Sra),
            _ => Err(Error::InvalidArgument(format!("unknown metric '{s}' (expected FA, SA, RA or SRA)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopEntry {
    pub feature: usize,
    /// -1, 0 or +1; zero only for a score of exactly zero.
    pub sign: i8,
    /// Position in the ranking, starting at 1.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TopK {
    pub entries: Vec<TopEntry>,
    pub k: usize,
}

impl TopK {
    fn position_of(&self, feature: usize) -> Option<&TopEntry> {
        self.entries.iter().find(|e| e.feature == feature)
    }
}

fn sign_of(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

/// All features ordered by descending absolute score, ties by ascending index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ranking {
    entries: Vec<TopEntry>,
}

impl Ranking {
    pub fn new(scores: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].abs().total_cmp(&scores[a].abs()).then(a.cmp(&b)));
        let entries = order
            .into_iter()
            .enumerate()
            .map(|(pos, feature)| TopEntry {
                feature,
                sign: sign_of(scores[feature]),
                rank: pos + 1,
            })
            .collect();
        Self { entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn top_k(&self, k: usize) -> Result<TopK> {
        if k == 0 || k > self.entries.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} outside 1..={}",
                self.entries.len()
            )));
        }
        Ok(TopK {
            entries: self.entries[..k].to_vec(),
            k,
        })
    }

    fn prefix(&self, k: usize) -> &[TopEntry] {
        &self.entries[..k]
    }
}

pub fn top_k(attr: &AttributionVector, k: usize) -> Result<TopK> {
    Ranking::new(&attr.scores).top_k(k)
}

fn same_k(a: &TopK, b: &TopK) -> Result<()> {
    if a.k != b.k {
        return Err(Error::InvalidArgument(format!("top-k sizes differ: {} vs {}", a.k, b.k)));
    }
    Ok(())
}

fn count_matches(a: &[TopEntry], b: &[TopEntry], metric: Metric) -> usize {
    match metric {
        Metric::Ra => a.iter().zip(b).filter(|(x, y)| x.feature == y.feature).count(),
        Metric::Sra => a
            .iter()
            .zip(b)
            .filter(|(x, y)| x.feature == y.feature && x.sign == y.sign)
            .count(),
        Metric::Fa => a.iter().filter(|x| b.iter().any(|y| y.feature == x.feature)).count(),
        Metric::Sa => a
            .iter()
            .filter(|x| b.iter().any(|y| y.feature == x.feature && y.sign == x.sign))
            .count(),
    }
}

pub fn feature_agreement(a: &TopK, b: &TopK) -> Result<f64> {
    same_k(a, b)?;
    let shared = a.entries.iter().filter(|e| b.position_of(e.feature).is_some()).count();
    Ok(shared as f64 / a.k as f64)
}

pub fn sign_agreement(a: &TopK, b: &TopK) -> Result<f64> {
    same_k(a, b)?;
    let shared = a
        .entries
        .iter()
        .filter(|e| b.position_of(e.feature).is_some_and(|o| o.sign == e.sign))
        .count();
    Ok(shared as f64 / a.k as f64)
}

pub fn rank_agreement(a: &TopK, b: &TopK) -> Result<f64> {
    same_k(a, b)?;
    let shared = a
        .entries
        .iter()
        .filter(|e| b.position_of(e.feature).is_some_and(|o| o.rank == e.rank))
        .count();
    Ok(shared as f64 / a.k as f64)
}

pub fn signed_rank_agreement(a: &TopK, b: &TopK) -> Result<f64> {
    same_k(a, b)?;
    let shared = a
        .entries
        .iter()
        .filter(|e| b.position_of(e.feature).is_some_and(|o| o.rank == e.rank && o.sign == e.sign))
        .count();
    Ok(shared as f64 / a.k as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementRecord {
    pub metric: Metric,
    pub k: usize,
    pub pair: (Method, Method),
    pub instance_id: usize,
    pub value: f64,
    pub epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementSummary {
    pub metric: Metric,
    pub k: usize,
    pub epoch: usize,
    pub methods: Vec<Method>,
    /// Per-pair mean over instances; symmetric with a unit diagonal.
    pub pair_matrix: Vec<Vec<f64>>,
    /// Mean of the upper-triangle entries.
    pub overall_mean: f64,
}

/// Rankings for every (instance, method) cell of one epoch.
#[derive(Debug, Clone)]
pub struct RankingGrid {
    pub epoch: usize,
    pub methods: Vec<Method>,
    pub instances: Vec<usize>,
    /// `rankings[i][m]` for instance position `i` and method position `m`.
    rankings: Vec<Vec<Ranking>>,
    n_features: usize,
}

impl RankingGrid {
    /// Groups the vectors of a single epoch by instance and method. Methods
    /// are kept in canonical order and instances ascending; every cell must be
    /// filled exactly once.
    pub fn new(attrs: &[AttributionVector]) -> Result<Self> {
        let first = attrs
            .first()
            .ok_or_else(|| Error::MissingAttributions("no attribution vectors".into()))?;
        let epoch = first.epoch;
        let n_features = first.scores.len();
        let mut methods: Vec<Method> = attrs.iter().map(|a| a.method).collect();
        methods.sort();
        methods.dedup();
        let mut instances: Vec<usize> = attrs.iter().map(|a| a.instance_id).collect();
        instances.sort_unstable();
        instances.dedup();
        let mut cells: Vec<Vec<Option<Ranking>>> = vec![vec![None; methods.len()]; instances.len()];
        for a in attrs {
            if a.epoch != epoch {
                return Err(Error::InvalidArgument(format!(
                    "vectors from epochs {epoch} and {} mixed in one summary",
                    a.epoch
                )));
            }
            if a.scores.len() != n_features {
                return Err(Error::Shape(format!(
                    "attribution lengths {} and {n_features} differ",
                    a.scores.len()
                )));
            }
            let i = instances.binary_search(&a.instance_id).expect("collected");
            let m = methods.binary_search(&a.method).expect("collected");
            if cells[i][m].replace(Ranking::new(&a.scores)).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "duplicate attribution for instance {} method {}",
                    a.instance_id, a.method
                )));
            }
        }
        let mut rankings = Vec::with_capacity(instances.len());
        for (i, row) in cells.into_iter().enumerate() {
            let mut filled = Vec::with_capacity(methods.len());
            for (m, cell) in row.into_iter().enumerate() {
                filled.push(cell.ok_or_else(|| {
                    Error::MissingAttributions(format!(
                        "instance {} has no {} attribution at epoch {epoch}",
                        instances[i], methods[m]
                    ))
                })?);
            }
            rankings.push(filled);
        }
        Ok(Self {
            epoch,
            methods,
            instances,
            rankings,
            n_features,
        })
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Unordered method pairs `(a, b)` with `a < b`, row-major.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let m = self.methods.len();
        (0..m).flat_map(|a| (a + 1..m).map(move |b| (a, b))).collect()
    }

    /// Metric value for every unordered pair (outer, in [`Self::pairs`] order)
    /// and instance (inner).
    pub fn pair_values(&self, metric: Metric, k: usize) -> Result<Vec<Vec<f64>>> {
        if k == 0 || k > self.n_features {
            return Err(Error::InvalidArgument(format!("k = {k} outside 1..={}", self.n_features)));
        }
        Ok(self
            .pairs()
            .into_iter()
            .map(|(a, b)| {
                self.rankings
                    .iter()
                    .map(|row| count_matches(row[a].prefix(k), row[b].prefix(k), metric) as f64 / k as f64)
                    .collect()
            })
            .collect())
    }

    pub fn summary(&self, metric: Metric, k: usize) -> Result<AgreementSummary> {
        if self.methods.len() < 2 {
            return Err(Error::InvalidArgument("agreement needs at least two methods".into()));
        }
        let values = self.pair_values(metric, k)?;
        let m = self.methods.len();
        let mut pair_matrix = vec![vec![0.0; m]; m];
        for (i, row) in pair_matrix.iter_mut().enumerate() {
            row[i] = 1.0;
        }
        let mut total = 0.0;
        for ((a, b), vals) in self.pairs().into_iter().zip(&values) {
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            pair_matrix[a][b] = mean;
            pair_matrix[b][a] = mean;
            total += mean;
        }
        Ok(AgreementSummary {
            metric,
            k,
            epoch: self.epoch,
            methods: self.methods.clone(),
            pair_matrix,
            overall_mean: total / values.len() as f64,
        })
    }

    pub fn records(&self, metric: Metric, k: usize) -> Result<Vec<AgreementRecord>> {
        let values = self.pair_values(metric, k)?;
        let mut out = Vec::with_capacity(values.len() * self.instances.len());
        for ((a, b), vals) in self.pairs().into_iter().zip(values) {
            for (&instance_id, value) in self.instances.iter().zip(vals) {
                out.push(AgreementRecord {
                    metric,
                    k,
                    pair: (self.methods[a], self.methods[b]),
                    instance_id,
                    value,
                    epoch: self.epoch,
                });
            }
        }
        Ok(out)
    }
}

/// Per-pair means over instances and their overall mean, for one epoch.
pub fn pairwise_summary(attrs: &[AttributionVector], metric: Metric, k: usize) -> Result<AgreementSummary> {
    RankingGrid::new(attrs)?.summary(metric, k)
}
