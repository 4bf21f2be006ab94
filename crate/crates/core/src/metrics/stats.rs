/// Pearson correlation. `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let w = vec![1.0; x.len()];
    weighted_pearson(x, y, &w)
}

pub fn weighted_pearson(x: &[f64], y: &[f64], w: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    assert_eq!(x.len(), w.len());
    let total: f64 = w.iter().sum();
    if x.is_empty() || total <= 0.0 {
        return None;
    }
    let mx = x.iter().zip(w).map(|(a, w)| a * w).sum::<f64>() / total;
    let my = y.iter().zip(w).map(|(b, w)| b * w).sum::<f64>() / total;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for ((a, b), w) in x.iter().zip(y).zip(w) {
        let (dx, dy) = (a - mx, b - my);
        sxy += w * dx * dy;
        sxx += w * dx * dx;
        syy += w * dy * dy;
    }
    let scale = (sxx * syy).sqrt();
    if scale <= f64::EPSILON * total {
        return None;
    }
    Some((sxy / scale).clamp(-1.0, 1.0))
}

/// Maps a correlation in `[-1, 1]` onto `[0, 1]`.
pub(crate) fn unit_correlation(r: f64) -> f64 {
    ((r + 1.0) / 2.0).clamp(0.0, 1.0)
}
