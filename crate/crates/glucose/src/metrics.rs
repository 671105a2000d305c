//! Glycemic scores computed from CGM samples.

/// Asymmetric per-sample glucose penalty.
///
/// Zero on `(80, 140]`, a steep power law below 80, a milder one up to 300,
/// and a flat 100 above.
pub fn penalty(y: f64) -> f64 {
    if y <= 80.0 {
        1.0567 * (80.0 - y).powf(1.3378)
    } else if y <= 140.0 {
        0.0
    } else if y <= 300.0 {
        0.4607 * (y - 140.0).powf(1.0601)
    } else {
        100.0
    }
}

/// Glycemic penalty index: the penalty summed over the samples.
pub fn gpi(samples: &[f64]) -> f64 {
    samples.iter().map(|y| penalty(*y)).sum()
}

/// Centered three-sample moving average; the two end samples average with
/// their single neighbour.
pub fn smooth3(samples: &[f64]) -> Vec<f64> {
    let n = samples.len();
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(1);
            let hi = (i + 1).min(n - 1);
            let window = &samples[lo..=hi];
            window.iter().sum::<f64>() / window.len() as f64
        })
        .collect()
}

/// Index of the smoothed peak, earliest on ties.
pub fn peak_index(samples: &[f64]) -> usize {
    let smooth = smooth3(samples);
    let mut best = 0;
    for (i, v) in smooth.iter().enumerate() {
        if *v > smooth[best] {
            best = i;
        }
    }
    best
}

/// Lowest reading from the smoothed peak to the end, minus 70 mg/dl.
/// Nonnegative means no hypoglycemic reading after the meal peak.
///
/// # Panics
/// If `samples` is empty.
pub fn hypo_constraint(samples: &[f64]) -> f64 {
    assert!(!samples.is_empty(), "hypo constraint of an empty trace");
    let tp = peak_index(samples);
    samples[tp..].iter().cloned().fold(f64::INFINITY, f64::min) - 70.0
}

/// Fractions of samples in range `(70, 180]`, above 180 and at or below 70.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TimeInRange {
    pub in_range: f64,
    pub above: f64,
    pub below: f64,
}

/// # Panics
/// If `samples` is empty.
pub fn tir_metrics(samples: &[f64]) -> TimeInRange {
    assert!(!samples.is_empty(), "time in range of an empty trace");
    let (mut below, mut above) = (0usize, 0usize);
    for y in samples {
        if *y <= 70.0 {
            below += 1;
        } else if *y > 180.0 {
            above += 1;
        }
    }
    let n = samples.len();
    let in_range = n - below - above;
    TimeInRange {
        in_range: in_range as f64 / n as f64,
        above: above as f64 / n as f64,
        below: below as f64 / n as f64,
    }
}
