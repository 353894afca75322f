use crate::error::{Error, Result};

/// Normalized Gaussian weights `w_k ∝ exp(-k² / 2σ²)` for `k ∈ [-r, r]`,
/// `size = 2r + 1`.
pub fn gaussian_kernel(sigma: f64, size: usize) -> Result<Vec<f64>> {
    if size % 2 == 0 {
        return Err(Error::InvalidArgument(format!("kernel size {size} must be odd")));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidArgument(format!("sigma {sigma} must be > 0")));
    }
    let r = (size / 2) as isize;
    let raw: Vec<f64> = (-r..=r).map(|k| (-((k * k) as f64) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f64 = raw.iter().sum();
    Ok(raw.into_iter().map(|w| w / total).collect())
}

/// Padding applied on each side: `3σ` rounded, never less than the kernel radius.
pub fn padding_for(sigma: f64, size: usize) -> usize {
    ((3.0 * sigma).round() as usize).max(size / 2)
}

/// Reflects an out-of-range index about the boundary samples
/// (`x[-1] = x[1]`, `x[n] = x[n-2]`), repeating for long excursions.
pub fn reflect_index(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    if m >= n as isize {
        (period - m) as usize
    } else {
        m as usize
    }
}

/// Gaussian smoothing with reflective padding; output has the input's length.
pub fn smooth(signal: &[f64], sigma: f64, size: usize) -> Result<Vec<f64>> {
    let kernel = gaussian_kernel(sigma, size)?;
    if signal.is_empty() {
        return Ok(Vec::new());
    }
    let n = signal.len();
    let pad = padding_for(sigma, size) as isize;
    let padded: Vec<f64> = (-pad..n as isize + pad).map(|i| signal[reflect_index(i, n)]).collect();
    let r = size / 2;
    let offset = pad as usize - r;
    Ok((0..n)
        .map(|i| {
            let start = i + offset;
            kernel.iter().zip(&padded[start..start + size]).map(|(w, x)| w * x).sum()
        })
        .collect())
}
