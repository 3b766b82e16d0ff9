use serde::{Deserialize, Serialize};

use super::ScoreSummary;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankEntry {
    pub model_id: String,
    pub rank: usize,
    pub mean: f64,
    pub std: f64,
}

/// Models in descending-mean order with their ranks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTable {
    pub entries: Vec<RankEntry>,
}

impl RankTable {
    pub fn rank_of(&self, model_id: &str) -> Option<usize> {
        self.entries.iter().find(|e| e.model_id == model_id).map(|e| e.rank)
    }
}

/// Significance-aware ranking. Models are sorted by mean (descending, ties by
/// id); the first unranked model `i` and every unranked model with
/// `μ ≥ μᵢ − σᵢ` share the current rank, which then increments.
pub fn rank_models(summaries: &[ScoreSummary]) -> Result<RankTable> {
    if summaries.is_empty() {
        return Err(Error::Domain("ranking needs at least one model".into()));
    }
    if let Some(s) = summaries.iter().find(|s| !s.mean.is_finite() || !s.std.is_finite()) {
        return Err(Error::Numeric(format!("model {} has a non-finite summary", s.model_id)));
    }
    let mut order: Vec<&ScoreSummary> = summaries.iter().collect();
    order.sort_by(|a, b| b.mean.total_cmp(&a.mean).then_with(|| a.model_id.cmp(&b.model_id)));
    let mut ranks = vec![0usize; order.len()];
    let mut rank = 1;
    while let Some(i) = ranks.iter().position(|&r| r == 0) {
        let threshold = order[i].mean - order[i].std;
        for (j, s) in order.iter().enumerate() {
            if ranks[j] == 0 && s.mean >= threshold {
                ranks[j] = rank;
            }
        }
        rank += 1;
    }
    let entries = order
        .into_iter()
        .zip(ranks)
        .map(|(s, rank)| RankEntry {
            model_id: s.model_id.clone(),
            rank,
            mean: s.mean,
            std: s.std,
        })
        .collect();
    Ok(RankTable { entries })
}
