use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::windowing::FrameLabel;

/// Ground-truth event in window-index space: windows `first..=last`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GtEventInterval {
    pub first: usize,
    pub last: usize,
    pub direction: FrameLabel,
}

impl GtEventInterval {
    pub fn len(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Checks intervals are well formed, sorted and disjoint.
pub fn validate_intervals(intervals: &[GtEventInterval]) -> Result<()> {
    for iv in intervals {
        if iv.first > iv.last {
            return Err(Error::InvalidArgument(format!("interval [{}, {}] is empty", iv.first, iv.last)));
        }
        if !iv.direction.is_handover() {
            return Err(Error::InvalidArgument("interval direction must be Receives or Gives".into()));
        }
    }
    for pair in intervals.windows(2) {
        if pair[1].first <= pair[0].last {
            return Err(Error::InvalidArgument(format!(
                "intervals [{}, {}] and [{}, {}] overlap or are unsorted",
                pair[0].first, pair[0].last, pair[1].first, pair[1].last
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventMatchResult {
    /// `(peak index, interval position)`
    pub pairs: Vec<(usize, usize)>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Greedy one-to-one matching. Peaks are visited in ascending order; each
/// takes the first unmatched interval `[a, b]` with `a - tol <= peak <= b + tol`.
pub fn match_events(peaks: &[usize], intervals: &[GtEventInterval], tol: usize) -> Result<EventMatchResult> {
    validate_intervals(intervals)?;
    let mut order = peaks.to_vec();
    order.sort_unstable();
    let mut taken = vec![false; intervals.len()];
    let mut pairs = Vec::new();
    for &p in &order {
        let hit = intervals
            .iter()
            .enumerate()
            .find(|(k, iv)| !taken[*k] && p + tol >= iv.first && p <= iv.last + tol);
        if let Some((k, _)) = hit {
            taken[k] = true;
            pairs.push((p, k));
        }
    }
    let tp = pairs.len();
    Ok(EventMatchResult {
        pairs,
        tp,
        fp: peaks.len() - tp,
        fn_: intervals.len() - tp,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn iv(first: usize, last: usize) -> GtEventInterval {
        GtEventInterval {
            first,
            last,
            direction: FrameLabel::Gives,
        }
    }

    #[test]
    fn inside_tolerance() {
        let r = match_events(&[13], &[iv(10, 14)], 2).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (1, 0, 0));
        let r = match_events(&[16], &[iv(10, 14)], 2).unwrap();
        assert_eq!(r.tp, 1);
        let r = match_events(&[8], &[iv(10, 14)], 2).unwrap();
        assert_eq!(r.tp, 1);
    }

    #[test]
    fn outside_tolerance() {
        let r = match_events(&[17], &[iv(10, 14)], 2).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (0, 1, 1));
        let r = match_events(&[7], &[iv(10, 14)], 2).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (0, 1, 1));
    }

    #[test]
    fn one_to_one() {
        let r = match_events(&[11, 12], &[iv(10, 14)], 2).unwrap();
        assert_eq!((r.tp, r.fp, r.fn_), (1, 1, 0));
        assert_eq!(r.pairs, vec![(11, 0)]);
    }

    #[test]
    fn peak_between_close_intervals_takes_the_first() {
        let r = match_events(&[15, 16], &[iv(10, 14), iv(17, 20)], 2).unwrap();
        assert_eq!(r.pairs, vec![(15, 0), (16, 1)]);
    }

    #[test]
    fn overlapping_intervals_rejected() {
        assert!(match_events(&[1], &[iv(0, 5), iv(5, 8)], 2).is_err());
        assert!(match_events(&[1], &[iv(6, 8), iv(0, 3)], 2).is_err());
    }

    proptest! {
        #[test]
        fn counts_are_consistent(
            peaks in prop::collection::vec(0usize..200, 0..20),
            gaps in prop::collection::vec((1usize..15, 0usize..10), 0..10),
            tol in 0usize..4,
        ) {
            let mut ivs = Vec::new();
            let mut cursor = 0;
            for (gap, len) in gaps {
                let first = cursor + gap;
                ivs.push(iv(first, first + len));
                cursor = first + len;
            }
            let r = match_events(&peaks, &ivs, tol).unwrap();
            prop_assert_eq!(r.tp + r.fp, peaks.len());
            prop_assert_eq!(r.tp + r.fn_, ivs.len());
            let mut used: Vec<usize> = r.pairs.iter().map(|p| p.1).collect();
            used.sort_unstable();
            used.dedup();
            prop_assert_eq!(used.len(), r.tp);
            for (p, k) in r.pairs {
                prop_assert!(p + tol >= ivs[k].first && p <= ivs[k].last + tol);
            }
        }
    }
}
