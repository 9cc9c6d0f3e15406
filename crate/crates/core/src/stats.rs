//! Histograms and five-number summaries shipped to the UI instead of raw values.

use serde::{Deserialize, Serialize};

pub const HISTOGRAM_BINS: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub counts: Vec<u32>,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&c| u64::from(c)).sum()
    }

    pub fn bin_width(&self) -> f64 {
        (self.max - self.min) / self.counts.len() as f64
    }
}

/// Uniform bins over the observed range. A constant sample lands entirely in bin 0.
pub fn histogram(values: &[f64], bins: usize) -> Option<Histogram> {
    let (lo, hi) = range(values)?;
    Some(histogram_in(values, lo, hi, bins))
}

/// Uniform bins over `[lo, hi]`; values outside are clamped into the edge bins.
pub fn histogram_in(values: &[f64], lo: f64, hi: f64, bins: usize) -> Histogram {
    let bins = bins.max(1);
    let mut counts = vec![0u32; bins];
    let width = hi - lo;
    for &v in values {
        let idx = if width > 0.0 {
            (((v - lo) / width) * bins as f64).floor().clamp(0.0, (bins - 1) as f64) as usize
        } else {
            0
        };
        counts[idx] += 1;
    }
    Histogram { min: lo, max: hi, counts }
}

pub fn range(values: &[f64]) -> Option<(f64, f64)> {
    let mut it = values.iter().copied();
    let first = it.next()?;
    Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub count: usize,
}

/// Quartiles by linear interpolation between order statistics.
pub fn box_stats(values: &[f64]) -> Option<BoxStats> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (sorted.len() - 1) as f64;
        let lo = pos.floor() as usize;
        let hi = pos.ceil() as usize;
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    Some(BoxStats {
        min: sorted[0],
        q1: q(0.25),
        median: q(0.5),
        q3: q(0.75),
        max: sorted[sorted.len() - 1],
        count: sorted.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_sample_fills_one_bin() {
        let h = histogram(&[2.5; 9], HISTOGRAM_BINS).unwrap();
        assert_eq!(h.counts[0], 9);
        assert_eq!(h.total(), 9);
    }

    #[test]
    fn max_lands_in_last_bin() {
        let h = histogram(&[0.0, 1.0, 0.5], 4).unwrap();
        assert_eq!(h.counts, vec![1, 0, 1, 1]);
    }

    #[test]
    fn box_stats_ordered() {
        let b = box_stats(&[5.0, 1.0, 3.0, 2.0, 4.0]).unwrap();
        assert_eq!((b.min, b.q1, b.median, b.q3, b.max), (1.0, 2.0, 3.0, 4.0, 5.0));
        assert!(box_stats(&[]).is_none());
    }
}
