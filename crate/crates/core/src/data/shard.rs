use std::ops::Range;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Trunk size of the full-scale pipeline (2^20 pairs).
pub const FULL_SCALE_TRUNK_SIZE: usize = 1 << 20;

/// Splits `0..total` into `parts` contiguous ranges whose sizes differ by at
/// most one; the first `total % parts` ranges get the extra item.
pub fn even_ranges(total: usize, parts: usize) -> Vec<Range<usize>> {
    assert!(parts >= 1, "cannot split into zero parts");
    let (base, extra) = (total / parts, total % parts);
    let mut start = 0;
    (0..parts)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Per-node ranges of a dataset of `total` pairs.
pub fn shard_pairs(total: usize, nodes: usize) -> Result<Vec<Range<usize>>> {
    if nodes == 0 {
        return Err(Error::Input("need at least one node".into()));
    }
    Ok(even_ranges(total, nodes))
}

/// Splits one shuffled trunk among `ranks` consumers.
pub fn rank_split<T: Clone>(shuffled: &[T], ranks: usize) -> Result<Vec<Vec<T>>> {
    if ranks == 0 {
        return Err(Error::Input("need at least one rank".into()));
    }
    Ok(even_ranges(shuffled.len(), ranks)
        .into_iter()
        .map(|r| shuffled[r].to_vec())
        .collect())
}

/// Deterministic permutation of `items`, keyed by `(seed, trunk_id)`.
pub fn trunk_shuffle(items: Range<usize>, seed: u64, trunk_id: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trunk_id);
    let mut v: Vec<usize> = items.collect();
    v.shuffle(&mut rng);
    v
}

/// Visit order of `n` trunks in `epoch`. Identity unless `reshuffle` is set.
pub fn trunk_order(n: usize, seed: u64, epoch: u64, reshuffle: bool) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    if reshuffle {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::MAX - epoch);
        order.shuffle(&mut rng);
    }
    order
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Trunk {
    pub id: usize,
    /// First global sample index.
    pub start: usize,
    pub len: usize,
    /// Record file relative to the manifest, when stored on disk.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

impl Trunk {
    pub fn range(&self) -> Range<usize> {
        self.start..self.start + self.len
    }
}

/// One node's shard as an ordered list of fixed-size trunks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrunkManifest {
    pub node_id: usize,
    pub trunk_size: usize,
    pub shard_start: usize,
    pub shard_len: usize,
    #[serde(default)]
    pub trunks: Vec<Trunk>,
}

impl TrunkManifest {
    /// Cuts `shard` into trunks of `trunk_size`; the last may be short.
    pub fn new(node_id: usize, shard: Range<usize>, trunk_size: usize) -> Result<Self> {
        if trunk_size == 0 {
            return Err(Error::Validation("trunk_size must be at least 1".into()));
        }
        let trunks = shard
            .clone()
            .step_by(trunk_size)
            .enumerate()
            .map(|(id, start)| Trunk {
                id,
                start,
                len: trunk_size.min(shard.end - start),
                file: None,
            })
            .collect();
        Ok(TrunkManifest {
            node_id,
            trunk_size,
            shard_start: shard.start,
            shard_len: shard.len(),
            trunks,
        })
    }

    /// Manifests for every node of a `total`-pair dataset.
    pub fn for_topology(total: usize, nodes: usize, trunk_size: usize) -> Result<Vec<Self>> {
        shard_pairs(total, nodes)?
            .into_iter()
            .enumerate()
            .map(|(node, r)| Self::new(node, r, trunk_size))
            .collect()
    }

    pub fn shard(&self) -> Range<usize> {
        self.shard_start..self.shard_start + self.shard_len
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |reason: String| Err(Error::format("manifest", reason));
        if self.trunk_size == 0 {
            return bad("trunk_size must be at least 1".into());
        }
        let mut at = self.shard_start;
        for (i, t) in self.trunks.iter().enumerate() {
            if t.id != i {
                return bad(format!("trunk {i} has id {}", t.id));
            }
            if t.start != at {
                return bad(format!("trunk {i} starts at {} but {at} was expected", t.start));
            }
            let last = i + 1 == self.trunks.len();
            if t.len == 0 || t.len > self.trunk_size || (!last && t.len != self.trunk_size) {
                return bad(format!("trunk {i} has {} items with trunk_size {}", t.len, self.trunk_size));
            }
            at = at
                .checked_add(t.len)
                .ok_or_else(|| Error::format("manifest", "trunk ranges overflow"))?;
        }
        if at != self.shard_start.saturating_add(self.shard_len) {
            return bad(format!(
                "trunks cover {} items but the shard has {}",
                at - self.shard_start,
                self.shard_len
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let m: TrunkManifest =
            toml::from_str(text).map_err(|e| Error::format("manifest", e.message().to_string()))?;
        m.validate()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sizes(r: &[Range<usize>]) -> Vec<usize> {
        r.iter().map(|r| r.len()).collect()
    }

    #[test]
    fn shard_examples() {
        assert_eq!(sizes(&shard_pairs(10, 3).unwrap()), [4, 3, 3]);
        assert_eq!(shard_pairs(8, 1).unwrap(), vec![0..8]);
        assert_eq!(sizes(&shard_pairs(3, 3).unwrap()), [1, 1, 1]);
        assert_eq!(sizes(&shard_pairs(2, 4).unwrap()), [1, 1, 0, 0]);
        assert!(shard_pairs(5, 0).is_err());
    }

    #[test]
    fn rank_split_examples() {
        let v: Vec<usize> = (0..8).collect();
        assert!(rank_split(&v, 4).unwrap().iter().all(|r| r.len() == 2));
        let v: Vec<usize> = (0..7).collect();
        let s = rank_split(&v, 2).unwrap();
        assert_eq!((s[0].len(), s[1].len()), (4, 3));
        assert_eq!(rank_split(&v, 1).unwrap(), vec![v.clone()]);
    }

    #[test]
    fn shuffle_is_a_keyed_permutation() {
        let a = trunk_shuffle(100..164, 7, 3);
        assert_eq!(a, trunk_shuffle(100..164, 7, 3));
        let mut sorted = a.clone();
        sorted.sort();
        assert_eq!(sorted, (100..164).collect::<Vec<_>>());
        assert_ne!(a, trunk_shuffle(100..164, 7, 4));
        let differing = (0..100u64)
            .filter(|&s| trunk_shuffle(0..16, s, 0) != trunk_shuffle(0..16, s + 1000, 0))
            .count();
        assert_eq!(differing, 100);
    }

    #[test]
    fn manifest_partitions_the_shard() {
        let m = TrunkManifest::new(1, 10..31, 8).unwrap();
        assert_eq!(
            m.trunks.iter().map(|t| t.range()).collect::<Vec<_>>(),
            vec![10..18, 18..26, 26..31]
        );
        m.validate().unwrap();
        let back = TrunkManifest::from_toml(&m.to_toml()).unwrap();
        assert_eq!(back, m);

        let mut gap = m.clone();
        gap.trunks[1].start += 1;
        assert!(gap.validate().is_err());
        let mut short = m;
        short.trunks[0].len = 7;
        assert!(short.validate().is_err());
    }

    #[test]
    fn trunk_order_is_identity_by_default() {
        assert_eq!(trunk_order(5, 1, 3, false), vec![0, 1, 2, 3, 4]);
        let o = trunk_order(50, 1, 3, true);
        assert_ne!(o, (0..50).collect::<Vec<_>>());
        assert_eq!(o, trunk_order(50, 1, 3, true));
    }
}
