use std::collections::BTreeMap;

/// Mean, variance, quartiles and CDF points of an iteration sample.
pub fn iteration_metrics(iterations: &[u32], prefix: &str, out: &mut BTreeMap<String, f64>) {
    let xs: Vec<f64> = iterations.iter().map(|&i| i as f64).collect();
    let n = xs.len() as f64;
    let mean = if xs.is_empty() { 0.0 } else { xs.iter().sum::<f64>() / n };
    let var = if xs.len() < 2 {
        0.0
    } else {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    };
    let mut sorted = xs.clone();
    sorted.sort_by(f64::total_cmp);
    let cdf = |k: f64| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().filter(|&&x| x <= k).count() as f64 / n
        }
    };
    out.insert(format!("{prefix}iter_mean"), mean);
    out.insert(format!("{prefix}iter_var"), var);
    out.insert(format!("{prefix}iter_p25"), quantile(&sorted, 0.25));
    out.insert(format!("{prefix}iter_p50"), quantile(&sorted, 0.5));
    out.insert(format!("{prefix}iter_p75"), quantile(&sorted, 0.75));
    out.insert(format!("{prefix}iter_cdf5"), cdf(5.0));
    out.insert(format!("{prefix}iter_cdf15"), cdf(15.0));
}

/// Nearest-rank quantile of an ascending sample; 0 when empty.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Ranks starting at 1, ties sharing their average rank.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        idx[i..=j].iter().for_each(|&k| out[k] = avg);
        i = j + 1;
    }
    out
}

/// Spearman rank correlation; `None` if either sample is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma) * (x - ma)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb) * (y - mb)).sum();
    (va > 0.0 && vb > 0.0).then(|| cov / (va * vb).sqrt())
}
