use serde::{Deserialize, Serialize};

use super::{Snapshot, TemporalGraph};
use crate::error::{Error, Result};

/// Inclusive snapshot range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SnapshotRange {
    pub start: Snapshot,
    pub end: Snapshot,
}

impl SnapshotRange {
    pub fn new(start: Snapshot, end: Snapshot) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, s: Snapshot) -> bool {
        self.start <= s && s <= self.end
    }

    pub fn len(&self) -> usize {
        (self.end + 1).saturating_sub(self.start)
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }

    pub fn iter(&self) -> impl Iterator<Item = Snapshot> {
        self.start..=self.end
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: SnapshotRange,
    pub val: SnapshotRange,
    pub test: SnapshotRange,
}

/// Choose boundaries `b1 < b2` (train = `1..=b1`, val = `b1+1..=b2`,
/// test = `b2+1..=T`) so cumulative event counts best match the requested
/// fractions. Every range must hold at least one event.
pub fn chronological_split(g: &TemporalGraph, fractions: (f64, f64, f64)) -> Result<SplitSpec> {
    let (f_train, f_val, f_test) = fractions;
    if !(f_train > 0.0 && f_val > 0.0 && f_test > 0.0)
        || ((f_train + f_val + f_test) - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let t = g.num_snapshots();
    if t < 3 {
        return Err(Error::Split(format!(
            "{t} snapshots cannot form three non-empty ranges"
        )));
    }
    let counts = g.snapshot_counts();
    let total: usize = counts.iter().sum();
    // cum[s] = events in snapshots 1..=s
    let mut cum = vec![0usize; t + 1];
    for s in 1..=t {
        cum[s] = cum[s - 1] + counts[s - 1];
    }
    let target_train = f_train * total as f64;
    let target_val = (f_train + f_val) * total as f64;

    let mut best: Option<((usize, usize), f64)> = None;
    for b1 in 1..t - 1 {
        if cum[b1] == 0 {
            continue;
        }
        for b2 in b1 + 1..t {
            if cum[b2] == cum[b1] || cum[t] == cum[b2] {
                continue;
            }
            let cost = (cum[b1] as f64 - target_train).abs() + (cum[b2] as f64 - target_val).abs();
            if best.is_none_or(|(_, c)| cost < c) {
                best = Some(((b1, b2), cost));
            }
        }
    }
    let ((b1, b2), _) = best.ok_or_else(|| {
        Error::Split("no boundary pair gives three ranges that each contain events".into())
    })?;
    Ok(SplitSpec {
        train: SnapshotRange::new(1, b1),
        val: SnapshotRange::new(b1 + 1, b2),
        test: SnapshotRange::new(b2 + 1, t),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::GraphBuilder;

    fn with_counts(counts: &[usize]) -> TemporalGraph {
        let mut b = GraphBuilder::new(2, counts.len(), 1, 1);
        for (s, &c) in counts.iter().enumerate() {
            for _ in 0..c {
                b.push(0, 1, s + 1, s as f64, &[]).unwrap();
            }
        }
        b.build()
    }

    /// Exhaustive reference: enumerate every (b1, b2), score it, keep the first minimum.
    fn brute(counts: &[usize], f: (f64, f64)) -> (usize, usize) {
        let total: usize = counts.iter().sum();
        let cum = |b: usize| counts[..b].iter().sum::<usize>();
        let mut all = Vec::new();
        for b1 in 1..counts.len() {
            for b2 in b1 + 1..counts.len() {
                let ok = cum(b1) > 0 && cum(b2) > cum(b1) && total > cum(b2);
                if ok {
                    let c = (cum(b1) as f64 - f.0 * total as f64).abs()
                        + (cum(b2) as f64 - (f.0 + f.1) * total as f64).abs();
                    all.push((c, b1, b2));
                }
            }
        }
        let min = all.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
        let (_, b1, b2) = all.into_iter().find(|x| x.0 == min).unwrap();
        (b1, b2)
    }

    #[test]
    fn uniform_ten_snapshots() {
        let s = chronological_split(&with_counts(&[5; 10]), (0.8, 0.1, 0.1)).unwrap();
        assert_eq!(s.train, SnapshotRange::new(1, 8));
        assert_eq!(s.val, SnapshotRange::new(9, 9));
        assert_eq!(s.test, SnapshotRange::new(10, 10));
    }

    #[test]
    fn skewed_counts_put_test_last() {
        let counts = [10, 10, 10, 10, 60];
        assert_eq!(brute(&counts, (0.8, 0.1)), (3, 4));
        let s = chronological_split(&with_counts(&counts), (0.8, 0.1, 0.1)).unwrap();
        assert_eq!(s.test, SnapshotRange::new(5, 5));
        assert_eq!(s.train, SnapshotRange::new(1, 3));
        assert_eq!(s.val, SnapshotRange::new(4, 4));
    }

    #[test]
    fn too_few_snapshots() {
        assert!(matches!(
            chronological_split(&with_counts(&[3, 3]), (0.8, 0.1, 0.1)),
            Err(Error::Split(_))
        ));
    }

    #[test]
    fn bad_fractions() {
        assert!(chronological_split(&with_counts(&[3, 3, 3]), (0.8, 0.3, 0.1)).is_err());
        assert!(chronological_split(&with_counts(&[3, 3, 3]), (1.0, 0.0, 0.0)).is_err());
    }

    #[test]
    fn skips_empty_snapshots() {
        let counts = [4, 0, 4, 0, 1, 0, 1];
        let s = chronological_split(&with_counts(&counts), (0.8, 0.1, 0.1)).unwrap();
        assert_eq!((s.train.end, s.val.end), brute(&counts, (0.8, 0.1)));
    }

    proptest::proptest! {
        #[test]
        fn matches_brute_force(counts in proptest::collection::vec(0usize..20, 3..16)) {
            let g = with_counts(&counts);
            let total: usize = counts.iter().sum();
            let nonempty = counts.iter().filter(|&&c| c > 0).count();
            match chronological_split(&g, (0.8, 0.1, 0.1)) {
                Ok(s) => {
                    proptest::prop_assert_eq!((s.train.end, s.val.end), brute(&counts, (0.8, 0.1)));
                    proptest::prop_assert_eq!(s.train.start, 1);
                    proptest::prop_assert_eq!(s.val.start, s.train.end + 1);
                    proptest::prop_assert_eq!(s.test.start, s.val.end + 1);
                    proptest::prop_assert_eq!(s.test.end, counts.len());
                    proptest::prop_assert!(!g.events_in(s.val).is_empty());
                    proptest::prop_assert!(!g.events_in(s.test).is_empty());
                }
                Err(_) => proptest::prop_assert!(nonempty < 3 || total < 3),
            }
        }
    }
}
