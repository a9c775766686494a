//! Top-k accuracy and attack-success metrics.
//!
//! Every function takes per-user ranked lists (best first) and reads only the
//! first `k` entries. Averages run over users in id order.

use serde::Serialize;

use crate::attack::PoisonedDataset;
use crate::dataset::InteractionDataset;
use crate::error::{Error, Result};
use crate::model::EmbeddingModel;
use crate::ItemId;

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

fn check_k(k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    Ok(())
}

fn head(list: &[ItemId], k: usize) -> &[ItemId] {
    &list[..k.min(list.len())]
}

fn per_user_mean(
    recs: &[Vec<ItemId>],
    test: &[Vec<ItemId>],
    k: usize,
    f: impl Fn(&[ItemId], &[ItemId]) -> f64,
) -> Result<f64> {
    check_k(k)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (list, t) in recs.iter().zip(test) {
        if t.is_empty() {
            continue;
        }
        sum += f(head(list, k), t);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Data("no user has test items to evaluate".into()));
    }
    Ok(sum / n as f64)
}

/// Mean over users with test items of `|top-k ∩ test| / |test|`.
/// `test` lists must be sorted.
pub fn recall_at_k(recs: &[Vec<ItemId>], test: &[Vec<ItemId>], k: usize) -> Result<f64> {
    per_user_mean(recs, test, k, |top, t| {
        let hits = top.iter().filter(|i| t.binary_search(i).is_ok()).count();
        hits as f64 / t.len() as f64
    })
}

/// Mean over users with test items of DCG@k / ideal DCG@k, binary gains.
/// `test` lists must be sorted.
pub fn ndcg_at_k(recs: &[Vec<ItemId>], test: &[Vec<ItemId>], k: usize) -> Result<f64> {
    per_user_mean(recs, test, k, |top, t| {
        let dcg: f64 = top
            .iter()
            .enumerate()
            .filter(|(_, i)| t.binary_search(i).is_ok())
            .map(|(r, _)| discount(r + 1))
            .sum();
        let ideal: f64 = (1..=k.min(t.len())).map(discount).sum();
        dcg / ideal
    })
}

/// Shared body of the target metrics: `gain(rank)` for each eligible user
/// whose top-k contains the target, averaged over eligible users and then
/// over targets. Users `>= n_genuine` are fakes and never counted.
fn target_metric(
    recs: &[Vec<ItemId>],
    ds: &InteractionDataset,
    n_genuine: usize,
    targets: &[ItemId],
    k: usize,
    gain: impl Fn(usize) -> f64,
) -> Result<f64> {
    check_k(k)?;
    if targets.is_empty() {
        return Err(Error::Config("no target items given".into()));
    }
    let mut total = 0.0;
    for &target in targets {
        let (mut sum, mut n) = (0.0, 0usize);
        for u in 0..n_genuine.min(recs.len()) {
            if ds.has_interacted(u, target) {
                continue;
            }
            n += 1;
            if let Some(pos) = head(&recs[u], k).iter().position(|&i| i == target) {
                sum += gain(pos + 1);
            }
        }
        if n == 0 {
            return Err(Error::Data(format!(
                "every genuine user interacted with target item {target}"
            )));
        }
        total += sum / n as f64;
    }
    Ok(total / targets.len() as f64)
}

/// Target hit ratio: share of genuine users who never interacted with a
/// target that find it in their top-k, averaged over targets.
pub fn target_hit_ratio(
    recs: &[Vec<ItemId>],
    ds: &InteractionDataset,
    n_genuine: usize,
    targets: &[ItemId],
    k: usize,
) -> Result<f64> {
    target_metric(recs, ds, n_genuine, targets, k, |_| 1.0)
}

/// Target NDCG: as [`target_hit_ratio`] with gain `1/log2(rank+1)`.
pub fn target_ndcg(
    recs: &[Vec<ItemId>],
    ds: &InteractionDataset,
    n_genuine: usize,
    targets: &[ItemId],
    k: usize,
) -> Result<f64> {
    target_metric(recs, ds, n_genuine, targets, k, discount)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRow {
    pub metric: &'static str,
    pub k: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub rows: Vec<MetricRow>,
    pub users_evaluated: usize,
    pub targets: Vec<ItemId>,
}

impl MetricsReport {
    pub fn get(&self, metric: &str, k: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.metric == metric && r.k == k).map(|r| r.value)
    }
}

/// Full-ranking evaluation of `m` on the genuine users of `data`.
///
/// Rows come out grouped by metric (`recall`, `ndcg`, then `t_hr`, `t_ndcg`
/// when targets are given), each in the order of `ks`.
pub fn evaluate(
    m: &EmbeddingModel,
    data: &PoisonedDataset,
    ks: &[usize],
    targets: Option<&[ItemId]>,
) -> Result<MetricsReport> {
    let ds = data.dataset();
    let k_max = *ks.iter().max().ok_or_else(|| Error::Config("empty k list".into()))?;
    let n = data.n_genuine();
    let recs = m.recommend_all(ds, n, k_max);
    let test = &ds.split_lists(crate::dataset::Split::Test)[..n];
    let mut rows = Vec::new();
    for &k in ks {
        rows.push(MetricRow { metric: "recall", k, value: recall_at_k(&recs, test, k)? });
    }
    for &k in ks {
        rows.push(MetricRow { metric: "ndcg", k, value: ndcg_at_k(&recs, test, k)? });
    }
    if let Some(t) = targets {
        for &k in ks {
            rows.push(MetricRow { metric: "t_hr", k, value: target_hit_ratio(&recs, ds, n, t, k)? });
        }
        for &k in ks {
            rows.push(MetricRow { metric: "t_ndcg", k, value: target_ndcg(&recs, ds, n, t, k)? });
        }
    }
    Ok(MetricsReport {
        rows,
        users_evaluated: test.iter().filter(|t| !t.is_empty()).count(),
        targets: targets.map(<[ItemId]>::to_vec).unwrap_or_default(),
    })
}
