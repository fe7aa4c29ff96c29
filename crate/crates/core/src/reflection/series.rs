//! Windowed counts and trailing-baseline spike detection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{ReflectionError, ReflectionEvent, SegmentRef};
use crate::ids::CardId;

/// Lower bound on the baseline standard deviation, in clicks per window.
pub const SIGMA_FLOOR: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngagementSeries {
    pub window_ms: u64,
    pub n_windows: usize,
    /// One count per window for every deck card, including silent ones.
    pub counts: BTreeMap<CardId, Vec<u64>>,
}

impl EngagementSeries {
    pub fn empty(window_ms: u64, cards: impl IntoIterator<Item = CardId>, n_windows: usize) -> Self {
        Self { window_ms, n_windows, counts: cards.into_iter().map(|c| (c, vec![0; n_windows])).collect() }
    }

    pub fn total(&self) -> u64 {
        self.counts.values().flatten().sum()
    }

    pub fn window_range(&self, w: usize) -> (u64, u64) {
        (w as u64 * self.window_ms, (w as u64 + 1) * self.window_ms)
    }

    /// Sums groups of `factor` consecutive windows.
    pub fn coarsen(&self, factor: usize) -> Self {
        let n = self.n_windows.div_ceil(factor);
        let counts = self
            .counts
            .iter()
            .map(|(c, v)| (c.clone(), v.chunks(factor).map(|ch| ch.iter().sum()).collect::<Vec<u64>>()))
            .map(|(c, mut v)| {
                v.resize(n, 0);
                (c, v)
            })
            .collect();
        Self { window_ms: self.window_ms * factor as u64, n_windows: n, counts }
    }
}

/// Windows needed to cover `duration_ms` and every event.
pub fn window_count(window_ms: u64, duration_ms: u64, max_t: Option<u64>) -> usize {
    let by_duration = duration_ms.div_ceil(window_ms) as usize;
    let by_events = max_t.map_or(0, |t| (t / window_ms) as usize + 1);
    by_duration.max(by_events)
}

/// Counts per card per window `[w·window, (w+1)·window)`.
pub fn aggregate(
    events: &[ReflectionEvent],
    cards: impl IntoIterator<Item = CardId>,
    window_ms: u64,
    duration_ms: u64,
) -> Result<EngagementSeries, ReflectionError> {
    if window_ms == 0 {
        return Err(ReflectionError::InvalidConfig("window_ms must be > 0".into()));
    }
    let n = window_count(window_ms, duration_ms, events.iter().map(|e| e.t_ms).max());
    let mut series = EngagementSeries::empty(window_ms, cards, n);
    for e in events {
        let row = series.counts.get_mut(&e.card_id).ok_or_else(|| ReflectionError::UnknownCard(e.card_id.clone()))?;
        row[(e.t_ms / window_ms) as usize] += 1;
    }
    Ok(series)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
pub struct SpikeAlert {
    pub id: String,
    pub card_id: CardId,
    pub window_index: usize,
    pub window_start_ms: u64,
    pub window_end_ms: u64,
    pub z_score: f64,
    pub count: u64,
    pub baseline_mean: f64,
    pub threshold: f64,
    pub linked_segment: Option<SegmentRef>,
    pub theme: Option<String>,
}

/// z = (c − μ) / max(σ, floor) with μ, σ the population mean and deviation of
/// the preceding `baseline_n` windows.
pub fn z_score(baseline: &[u64], count: u64) -> (f64, f64) {
    let n = baseline.len() as f64;
    let mean = baseline.iter().sum::<u64>() as f64 / n;
    let var = baseline.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / n;
    ((count as f64 - mean) / var.sqrt().max(SIGMA_FLOOR), mean)
}

pub fn alert_id(card: &CardId, window: usize) -> String {
    format!("alert-{card}-{window}")
}

/// Alerts for window `w` alone; depends only on windows ≤ w.
pub fn detect_window(
    series: &EngagementSeries,
    w: usize,
    baseline_n: usize,
    z_threshold: f64,
) -> Vec<SpikeAlert> {
    if baseline_n == 0 || w < baseline_n || w >= series.n_windows {
        return Vec::new();
    }
    let (start, end) = series.window_range(w);
    let mut out = Vec::new();
    for (card, counts) in &series.counts {
        let (z, mean) = z_score(&counts[w - baseline_n..w], counts[w]);
        if z >= z_threshold {
            out.push(SpikeAlert {
                id: alert_id(card, w),
                card_id: card.clone(),
                window_index: w,
                window_start_ms: start,
                window_end_ms: end,
                z_score: z,
                count: counts[w],
                baseline_mean: mean,
                threshold: z_threshold,
                linked_segment: None,
                theme: None,
            });
        }
    }
    out
}

pub fn detect_spikes(series: &EngagementSeries, baseline_n: usize, z_threshold: f64) -> Result<Vec<SpikeAlert>, ReflectionError> {
    if baseline_n == 0 {
        return Err(ReflectionError::InvalidConfig("baseline_n must be ≥ 1".into()));
    }
    if series.n_windows < baseline_n + 1 {
        return Err(ReflectionError::SeriesTooShort { windows: series.n_windows, need: baseline_n + 1 });
    }
    Ok((baseline_n..series.n_windows).flat_map(|w| detect_window(series, w, baseline_n, z_threshold)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(card: &str, t: u64) -> ReflectionEvent {
        ReflectionEvent { event_id: "e".into(), participant: "p".into(), card_id: card.into(), t_ms: t }
    }

    fn one_card(counts: Vec<u64>) -> EngagementSeries {
        EngagementSeries { window_ms: 15_000, n_windows: counts.len(), counts: BTreeMap::from([(CardId::from("A"), counts)]) }
    }

    #[test]
    fn three_clicks_two_windows() {
        let s = aggregate(&[ev("A", 100), ev("A", 200), ev("A", 15_100)], [CardId::from("A")], 15_000, 0).unwrap();
        assert_eq!(s.counts[&CardId::from("A")], vec![2, 1]);
    }

    #[test]
    fn empty_log_is_zero_series() {
        let s = aggregate(&[], [CardId::from("A"), CardId::from("B")], 15_000, 40_000).unwrap();
        assert_eq!(s.n_windows, 3);
        assert_eq!(s.total(), 0);
    }

    #[test]
    fn unknown_card_rejected() {
        assert!(matches!(aggregate(&[ev("Z", 1)], [CardId::from("A")], 1000, 0), Err(ReflectionError::UnknownCard(_))));
    }

    #[test]
    fn hand_computed_spike() {
        let mut counts: Vec<u64> = [1, 2].repeat(5);
        counts.push(15);
        let alerts = detect_spikes(&one_card(counts), 10, 3.0).unwrap();
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].window_index, 10);
        assert!((alerts[0].z_score - 27.0).abs() < 1e-9);
        assert_eq!(alerts[0].baseline_mean, 1.5);
    }

    #[test]
    fn flat_series_has_no_alerts() {
        assert!(detect_spikes(&one_card(vec![2; 30]), 10, 3.0).unwrap().is_empty());
        let (z, _) = z_score(&[2; 10], 2);
        assert_eq!(z, 0.0);
    }

    #[test]
    fn too_short() {
        assert_eq!(
            detect_spikes(&one_card(vec![1; 10]), 10, 3.0),
            Err(ReflectionError::SeriesTooShort { windows: 10, need: 11 })
        );
    }

    #[test]
    fn coarsen_sums_triples() {
        let s = one_card(vec![1, 2, 3, 4, 5, 6, 7]);
        let c = s.coarsen(3);
        assert_eq!(c.counts[&CardId::from("A")], vec![6, 15, 7]);
        assert_eq!(c.window_ms, 45_000);
    }

    #[test]
    fn window_count_cases() {
        assert_eq!(window_count(15_000, 0, None), 0);
        assert_eq!(window_count(15_000, 15_000, None), 1);
        assert_eq!(window_count(15_000, 15_001, None), 2);
        assert_eq!(window_count(15_000, 0, Some(15_000)), 2);
    }
}
