//! Synthetic frame-embedding streams with planted handover events.
//!
//! Each event mixes two shared pattern vectors `a` and `b` under a triangular
//! amplitude envelope. A `Receives` event fades from `a` to `b`, a `Gives`
//! event from `b` to `a`, so the two directions have the same per-frame
//! distribution and differ only in temporal order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::windowing::{FrameLabel, LabeledFrameStream, WindowSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_streams: usize,
    pub frames_per_stream: usize,
    pub feature_dim: usize,
    /// Events per 1000 frames.
    pub event_rate: f64,
    pub event_duration_min: usize,
    pub event_duration_max: usize,
    /// Fraction of events labeled `Receives`.
    pub direction_ratio: f64,
    pub noise_sigma: f64,
    /// Peak norm of the planted pattern.
    pub event_amplitude: f64,
    /// Minimum number of idle frames between consecutive events.
    pub min_gap: usize,
    /// Idle frames kept at both stream ends.
    pub edge_margin: usize,
    pub seed: u64,
    /// Seed of the two pattern vectors; shared by datasets that must agree on them.
    pub pattern_seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let extent = WindowSpec::default().extent();
        SynthConfig {
            num_streams: 16,
            frames_per_stream: 2000,
            feature_dim: 16,
            event_rate: 10.0,
            event_duration_min: 16,
            event_duration_max: 28,
            direction_ratio: 334.0 / 484.0,
            noise_sigma: 1.0,
            event_amplitude: 8.0,
            min_gap: 2 * extent,
            edge_margin: extent,
            seed: 0,
            pattern_seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.feature_dim == 0 {
            return Err(Error::InvalidArgument("feature_dim must be > 0".into()));
        }
        if self.event_duration_min < 2 || self.event_duration_min > self.event_duration_max {
            return Err(Error::InvalidArgument(
                "event durations need 2 <= min <= max".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.direction_ratio) {
            return Err(Error::InvalidArgument("direction_ratio must lie in [0, 1]".into()));
        }
        if !(self.event_rate >= 0.0) || !(self.noise_sigma >= 0.0) || !self.event_amplitude.is_finite() {
            return Err(Error::InvalidArgument("rates and noise must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Number of events planted per stream.
    pub fn events_per_stream(&self) -> usize {
        (self.event_rate * self.frames_per_stream as f64 / 1000.0).round() as usize
    }

    /// Seed of stream `index` in a generated dataset.
    pub fn stream_seed(&self, index: usize) -> u64 {
        self.seed.wrapping_add(index as u64)
    }
}

/// Ground-truth event, frames `start..=end`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedEvent {
    pub start: usize,
    pub end: usize,
    pub direction: FrameLabel,
}

impl PlantedEvent {
    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// The two unit pattern vectors, scaled to `event_amplitude`.
pub fn pattern_vectors(cfg: &SynthConfig) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.pattern_seed);
    let mut draw = || {
        let v: Vec<f64> = (0..cfg.feature_dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        v.into_iter().map(|x| cfg.event_amplitude * x / norm).collect::<Vec<f64>>()
    };
    let a = draw();
    let b = draw();
    (a, b)
}

/// Generates one stream using `rng` for placement, directions and noise.
pub fn generate_stream<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Result<(LabeledFrameStream, Vec<PlantedEvent>)> {
    cfg.validate()?;
    let extent = WindowSpec::default().extent();
    if cfg.frames_per_stream < extent {
        return Err(Error::InvalidArgument(format!(
            "frames_per_stream {} shorter than one window ({extent})",
            cfg.frames_per_stream
        )));
    }
    let events = place_events(cfg, rng)?;

    let n = cfg.frames_per_stream;
    let dim = cfg.feature_dim;
    let mut labels = vec![FrameLabel::Idle; n];
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("sigma validated");
    let mut features: Vec<f64> = (0..n * dim).map(|_| noise.sample(rng)).collect();

    let (a, b) = pattern_vectors(cfg);
    for event in &events {
        let (from, to) = match event.direction {
            FrameLabel::Receives => (&a, &b),
            _ => (&b, &a),
        };
        let denom = (event.len() + 1) as f64;
        for frame in event.start..=event.end {
            labels[frame] = event.direction;
            let tau = (frame - event.start + 1) as f64 / denom;
            let envelope = 1.0 - (2.0 * tau - 1.0).abs();
            let row = &mut features[frame * dim..(frame + 1) * dim];
            for k in 0..dim {
                row[k] += envelope * ((1.0 - tau) * from[k] + tau * to[k]);
            }
        }
    }
    Ok((LabeledFrameStream::new(labels, features, dim)?, events))
}

fn place_events<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Result<Vec<PlantedEvent>> {
    let count = cfg.events_per_stream();
    if count == 0 {
        return Ok(Vec::new());
    }
    let n = cfg.frames_per_stream;
    let needed = 2 * cfg.edge_margin + count * cfg.event_duration_max + (count - 1) * cfg.min_gap;
    if needed > n {
        return Err(Error::InfeasibleDensity(format!(
            "{count} events need up to {needed} frames, stream has {n}"
        )));
    }
    let durations: Vec<usize> = (0..count)
        .map(|_| rng.random_range(cfg.event_duration_min..=cfg.event_duration_max))
        .collect();
    let slack = n - 2 * cfg.edge_margin - durations.iter().sum::<usize>() - (count - 1) * cfg.min_gap;
    // split the slack into count + 1 parts at sorted uniform cut points
    let mut cuts: Vec<usize> = (0..count).map(|_| rng.random_range(0..=slack)).collect();
    cuts.sort_unstable();

    let mut events = Vec::with_capacity(count);
    let mut cursor = cfg.edge_margin;
    let mut previous_cut = 0;
    for (i, (&duration, &cut)) in durations.iter().zip(&cuts).enumerate() {
        cursor += cut - previous_cut;
        if i > 0 {
            cursor += cfg.min_gap;
        }
        previous_cut = cut;
        let direction = if rng.random_bool(cfg.direction_ratio) {
            FrameLabel::Receives
        } else {
            FrameLabel::Gives
        };
        events.push(PlantedEvent {
            start: cursor,
            end: cursor + duration - 1,
            direction,
        });
        cursor += duration;
    }
    Ok(events)
}

/// Generates `cfg.num_streams` streams, stream `i` seeded with `seed + i`.
pub fn generate_dataset(cfg: &SynthConfig) -> Result<Vec<(LabeledFrameStream, Vec<PlantedEvent>)>> {
    (0..cfg.num_streams)
        .map(|i| generate_stream(cfg, &mut ChaCha8Rng::seed_from_u64(cfg.stream_seed(i))))
        .collect()
}

/// Adds i.i.d. Gaussian noise of standard deviation `strength` to every feature.
pub fn jitter_embeddings<R: Rng>(stream: &LabeledFrameStream, strength: f64, rng: &mut R) -> Result<LabeledFrameStream> {
    if !(strength >= 0.0) || !strength.is_finite() {
        return Err(Error::InvalidArgument(format!("jitter strength {strength} must be >= 0")));
    }
    let mut out = stream.clone();
    if strength > 0.0 {
        let noise = Normal::new(0.0, strength).expect("strength validated");
        for value in out.features_mut() {
            *value += noise.sample(rng);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::windowing::enumerate_windows;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn zero_rate_is_all_idle() {
        let cfg = SynthConfig {
            event_rate: 0.0,
            ..SynthConfig::default()
        };
        let (stream, events) = generate_stream(&cfg, &mut rng(1)).unwrap();
        assert!(events.is_empty());
        assert!(stream.labels().iter().all(|&l| l == FrameLabel::Idle));
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let cfg = SynthConfig::default();
        let (s1, e1) = generate_stream(&cfg, &mut rng(9)).unwrap();
        let (s2, e2) = generate_stream(&cfg, &mut rng(9)).unwrap();
        assert_eq!(e1, e2);
        assert!(s1.features().iter().zip(s2.features()).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(s1.labels(), s2.labels());
    }

    /// Recovers events by scanning labels for maximal runs and compares them
    /// with the reported list.
    #[test]
    fn label_scan_recovers_events() {
        let cfg = SynthConfig {
            frames_per_stream: 1000,
            event_rate: 10.0,
            ..SynthConfig::default()
        };
        for seed in 0..20 {
            let (stream, events) = generate_stream(&cfg, &mut rng(seed)).unwrap();
            let labels = stream.labels();
            let mut runs = Vec::new();
            let mut i = 0;
            while i < labels.len() {
                if labels[i].is_handover() {
                    let j = (i..labels.len()).find(|&j| labels[j] != labels[i]).unwrap_or(labels.len());
                    runs.push(PlantedEvent { start: i, end: j - 1, direction: labels[i] });
                    i = j;
                } else {
                    i += 1;
                }
            }
            assert_eq!(runs, events);
            assert_eq!(runs.len(), 10);
            for pair in events.windows(2) {
                assert!(pair[1].start - pair[0].end - 1 >= cfg.min_gap);
            }
            for e in &events {
                assert!((cfg.event_duration_min..=cfg.event_duration_max).contains(&e.len()));
                assert!(e.start >= cfg.edge_margin && e.end + cfg.edge_margin < cfg.frames_per_stream);
            }
        }
    }

    #[test]
    fn infeasible_density_is_reported() {
        let cfg = SynthConfig {
            frames_per_stream: 500,
            event_rate: 100.0,
            ..SynthConfig::default()
        };
        assert!(matches!(generate_stream(&cfg, &mut rng(0)), Err(Error::InfeasibleDensity(_))));
    }

    #[test]
    fn eval_positive_windows_are_those_touching_events() {
        let cfg = SynthConfig::default();
        let spec = WindowSpec::default();
        let (stream, events) = generate_stream(&cfg, &mut rng(3)).unwrap();
        for w in stream.windows(&spec) {
            let last = w.start + spec.extent() - 1;
            let touches = events.iter().any(|e| e.start <= last && w.start <= e.end);
            assert_eq!(w.eval_positive, touches, "window {}", w.start);
        }
        assert!(!enumerate_windows(stream.num_frames(), &spec).is_empty());
    }

    #[test]
    fn direction_ratio_chi_square() {
        let cfg = SynthConfig {
            num_streams: 40,
            ..SynthConfig::default()
        };
        let events: Vec<PlantedEvent> = generate_dataset(&cfg).unwrap().into_iter().flat_map(|(_, e)| e).collect();
        let n = events.len() as f64;
        assert!(n >= 500.0);
        let receives = events.iter().filter(|e| e.direction == FrameLabel::Receives).count() as f64;
        let expected_r = n * cfg.direction_ratio;
        let expected_g = n - expected_r;
        let chi2 = (receives - expected_r).powi(2) / expected_r + ((n - receives) - expected_g).powi(2) / expected_g;
        // 1 dof, 99.9% quantile
        assert!(chi2 < 10.83, "chi2 = {chi2}");
    }

    #[test]
    fn jitter_properties() {
        let cfg = SynthConfig {
            num_streams: 1,
            frames_per_stream: 6250,
            ..SynthConfig::default()
        };
        let (stream, _) = generate_stream(&cfg, &mut rng(5)).unwrap();
        assert_eq!(jitter_embeddings(&stream, 0.0, &mut rng(1)).unwrap(), stream);
        let j1 = jitter_embeddings(&stream, 0.5, &mut rng(2)).unwrap();
        let j2 = jitter_embeddings(&stream, 0.5, &mut rng(2)).unwrap();
        assert_eq!(j1, j2);
        assert_eq!(j1.labels(), stream.labels());
        // 6250 x 16 = 1e5 samples
        let mean_abs = j1
            .features()
            .iter()
            .zip(stream.features())
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / stream.features().len() as f64;
        let expected = 0.5 * (2.0 / std::f64::consts::PI).sqrt();
        assert!((mean_abs / expected - 1.0).abs() < 0.05, "{mean_abs} vs {expected}");
        assert!(jitter_embeddings(&stream, -1.0, &mut rng(1)).is_err());
    }

    #[test]
    fn pattern_vectors_have_amplitude_norm() {
        let cfg = SynthConfig::default();
        let (a, b) = pattern_vectors(&cfg);
        let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm(&a) - cfg.event_amplitude).abs() < 1e-12);
        assert!((norm(&b) - cfg.event_amplitude).abs() < 1e-12);
    }
}
