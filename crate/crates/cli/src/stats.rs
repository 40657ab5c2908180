//! Small summary statistics for experiment reports.

/// Five-number summary (min, lower quartile, median, upper quartile, max)
/// with linear interpolation between order statistics.
pub fn five_number(values: &[f64]) -> [f64; 5] {
    assert!(!values.is_empty(), "summary of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("summaries need finite values"));
    [
        sorted[0],
        quantile_sorted(&sorted, 0.25),
        quantile_sorted(&sorted, 0.5),
        quantile_sorted(&sorted, 0.75),
        sorted[sorted.len() - 1],
    ]
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn median(values: &[f64]) -> f64 {
    five_number(values)[2]
}

/// Trailing moving average: entry t averages the last `window` values
/// (fewer near the start, where the history is shorter).
pub fn smooth_trailing(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window > 0, "smoothing window must be positive");
    (0..values.len())
        .map(|t| {
            let lo = (t + 1).saturating_sub(window);
            let slice = &values[lo..=t];
            slice.iter().sum::<f64>() / slice.len() as f64
        })
        .collect()
}

/// First 1-based position at which the curve reaches `threshold`.
pub fn first_reach(curve: &[f64], threshold: f64) -> Option<usize> {
    curve.iter().position(|&v| v >= threshold).map(|i| i + 1)
}

/// Pearson chi-square statistic for uniformity of points in the unit
/// square over a `bins` x `bins` partition, with its degrees of freedom.
pub fn chi_square_uniform(points: &[(f64, f64)], bins: usize) -> (f64, usize) {
    assert!(bins > 0 && !points.is_empty());
    let mut counts = vec![0usize; bins * bins];
    for &(x, y) in points {
        let i = ((x * bins as f64) as usize).min(bins - 1);
        let j = ((y * bins as f64) as usize).min(bins - 1);
        counts[i * bins + j] += 1;
    }
    let expected = points.len() as f64 / (bins * bins) as f64;
    let stat = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - expected;
            d * d / expected
        })
        .sum();
    (stat, bins * bins - 1)
}

/// Pearson correlation of two equally long sequences.
pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    let n = xs.len() as f64;
    let mean_x = xs.iter().sum::<f64>() / n;
    let mean_y = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxy += (x - mean_x) * (y - mean_y);
        sxx += (x - mean_x) * (x - mean_x);
        syy += (y - mean_y) * (y - mean_y);
    }
    sxy / (sxx * syy).sqrt()
}
