/// A retained local maximum of a signal.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Peak {
    pub index: usize,
    pub height: f64,
    pub prominence: f64,
}

/// Local maxima. A flat top counts once, at its midpoint rounded down;
/// samples at either end of the signal are never peaks.
pub fn local_maxima(x: &[f64]) -> Vec<usize> {
    let n = x.len();
    let mut peaks = Vec::new();
    if n < 3 {
        return peaks;
    }
    let mut i = 1;
    while i < n - 1 {
        if x[i - 1] < x[i] {
            let mut ahead = i + 1;
            while ahead < n - 1 && x[ahead] == x[i] {
                ahead += 1;
            }
            if x[ahead] < x[i] {
                peaks.push((i + ahead - 1) / 2);
                i = ahead;
                continue;
            }
        }
        i += 1;
    }
    peaks
}

/// Height above the higher of the two bases, each base being the lowest
/// sample between the peak and the nearest strictly higher sample on that
/// side (or the signal end).
pub fn prominence(x: &[f64], peak: usize) -> f64 {
    let h = x[peak];
    let mut left_min = h;
    for &v in x[..peak].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &x[peak + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Peaks with `height >= min_height` and
/// `prominence >= prominence_frac * (max - min)` of `x`.
pub fn find_peaks(x: &[f64], min_height: f64, prominence_frac: f64) -> Vec<Peak> {
    if x.len() < 3 {
        return Vec::new();
    }
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_prominence = prominence_frac * (hi - lo);
    local_maxima(x)
        .into_iter()
        .map(|index| Peak {
            index,
            height: x[index],
            prominence: prominence(x, index),
        })
        .filter(|p| p.height >= min_height && p.prominence >= min_prominence)
        .collect()
}
