//! Request accounting for the inference service.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Nearest-rank percentile of ascending `sorted`: the order statistic at
/// rank `floor(p·n) + 1`, clamped to `n`. `None` for an empty sample.
pub fn nearest_rank(sorted: &[u64], p: f64) -> Option<u64> {
    if sorted.is_empty() || !(0.0..=1.0).contains(&p) {
        return None;
    }
    let n = sorted.len();
    let rank = ((p * n as f64).floor() as usize + 1).min(n);
    Some(sorted[rank - 1])
}

#[derive(Debug, Clone, Default)]
pub struct ServeStats {
    latencies_us: Vec<u64>,
    layer_counts: BTreeMap<usize, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub count: usize,
    pub p50_us: Option<u64>,
    pub p90_us: Option<u64>,
    pub p99_us: Option<u64>,
    /// Layers executed per request → number of requests.
    pub layers_executed: BTreeMap<usize, u64>,
}

impl ServeStats {
    pub fn record(&mut self, latency_us: u64, layers: usize) {
        self.latencies_us.push(latency_us);
        *self.layer_counts.entry(layers).or_default() += 1;
    }

    pub fn count(&self) -> usize {
        self.latencies_us.len()
    }

    pub fn percentile(&self, p: f64) -> Option<u64> {
        let mut sorted = self.latencies_us.clone();
        sorted.sort_unstable();
        nearest_rank(&sorted, p)
    }

    pub fn summary(&self) -> StatsSummary {
        let mut sorted = self.latencies_us.clone();
        sorted.sort_unstable();
        StatsSummary {
            count: sorted.len(),
            p50_us: nearest_rank(&sorted, 0.50),
            p90_us: nearest_rank(&sorted, 0.90),
            p99_us: nearest_rank(&sorted, 0.99),
            layers_executed: self.layer_counts.clone(),
        }
    }
}
