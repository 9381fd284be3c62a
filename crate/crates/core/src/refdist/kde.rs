use crate::error::{Error, Result};

/// Silverman's rule of thumb, `0.9 · min(σ, IQR / 1.34) · n^(-1/5)`,
/// falling back to `σ` when the IQR is zero. `sorted` must be ascending.
pub fn silverman_bandwidth(sorted: &[f64]) -> Result<f64> {
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let sd = var.sqrt();
    let q = |p: f64| sorted[((p * (n - 1.0)).round() as usize).min(sorted.len() - 1)];
    let iqr = q(0.75) - q(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0) || !spread.is_finite() {
        return Err(Error::DegenerateSample("sample has zero or non-finite variance".into()));
    }
    Ok(0.9 * spread * n.powf(-0.2))
}

/// Gaussian KDE with reflection at `0` and at the last grid node, evaluated
/// on `grid_size` nodes `i · step` and renormalized to unit trapezoid mass.
///
/// Samples are linearly binned onto the grid first, then convolved with the
/// kernel truncated at 6 bandwidths.
pub(super) fn reflected_gaussian_kde(
    sorted: &[f64],
    grid_size: usize,
    step: f64,
    bandwidth: f64,
) -> Vec<f64> {
    let last = grid_size - 1;
    let mut counts = vec![0.0f64; grid_size];
    for &x in sorted {
        let pos = x / step;
        let i = (pos as usize).min(last);
        let frac = (pos - i as f64).clamp(0.0, 1.0);
        if i == last {
            counts[last] += 1.0;
        } else {
            counts[i] += 1.0 - frac;
            counts[i + 1] += frac;
        }
    }

    // Mass reflected about both boundaries, indexed by j + last for
    // j in [-last, 2·last].
    let span = 3 * last + 1;
    let mut ext = vec![0.0f64; span];
    for (j, &c) in counts.iter().enumerate() {
        ext[j + last] += c;
        ext[last - j] += c;
        ext[3 * last - j] += c;
    }

    let reach = ((6.0 * bandwidth / step).ceil() as usize).min(2 * last);
    let kernel: Vec<f64> = (0..=reach)
        .map(|d| {
            let u = d as f64 * step / bandwidth;
            (-0.5 * u * u).exp()
        })
        .collect();

    let mut density = vec![0.0f64; grid_size];
    for (i, out) in density.iter_mut().enumerate() {
        let center = i + last;
        let mut acc = kernel[0] * ext[center];
        for (d, &kv) in kernel.iter().enumerate().skip(1) {
            let lo = ext.get(center.wrapping_sub(d)).copied().unwrap_or(0.0);
            let hi = ext.get(center + d).copied().unwrap_or(0.0);
            acc += kv * (lo + hi);
        }
        *out = acc;
    }

    let mass = trapezoid(&density, step, last as f64 * step);
    if mass > 0.0 {
        for v in &mut density {
            *v /= mass;
        }
    }
    density
}

/// Trapezoid rule on nodes `0, step, …` whose last node sits at `end`.
pub(super) fn trapezoid(values: &[f64], step: f64, end: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for i in 0..n - 1 {
        let left = i as f64 * step;
        let right = if i + 2 == n { end } else { (i + 1) as f64 * step };
        total += (values[i] + values[i + 1]) / 2.0 * (right - left);
    }
    total
}
