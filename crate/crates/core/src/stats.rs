//! Small statistical helpers shared by the estimator modules.

/// Sample mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of the mean for (approximately) independent samples.
pub fn standard_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Mean and batch-mean standard error, robust to serial correlation.
pub fn batch_mean_se(xs: &[f64], batches: usize) -> (f64, f64) {
    let b = batches.clamp(2, xs.len().max(2) / 2);
    let per = xs.len() / b;
    let ms: Vec<f64> = (0..b).map(|i| mean(&xs[i * per..(i + 1) * per])).collect();
    (mean(&xs[..b * per]), standard_error(&ms))
}

/// Least-squares line through `(x, y)`; returns `(slope, intercept, slope SE)`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let se = if xs.len() > 2 {
        (ss_res / (n - 2.0) / sxx).sqrt()
    } else {
        0.0
    };
    (slope, intercept, se)
}

/// Geyer initial-positive-sequence estimate of the integrated
/// autocorrelation time (≥ 0.5; 0.5 means uncorrelated).
pub fn integrated_autocorrelation(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 4 {
        return 0.5;
    }
    let m = mean(xs);
    let c0: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 0.5;
    }
    let gamma = |k: usize| -> f64 {
        xs[..n - k]
            .iter()
            .zip(&xs[k..])
            .map(|(a, b)| (a - m) * (b - m))
            .sum::<f64>()
            / n as f64
    };
    let mut tau = 0.5;
    let mut k = 1;
    while k + 1 < n / 2 {
        let pair = gamma(k) + gamma(k + 1);
        if pair <= 0.0 {
            break;
        }
        tau += pair / c0;
        k += 2;
    }
    tau
}
