//! Multi-resolution training-set composition.
//!
//! A mix assigns each resolution a proportion of the total sample budget.
//! Counts come from largest-remainder rounding (ties go to the lower, i.e.
//! cheaper, resolution) and sample indices are drawn disjointly across
//! resolutions, so no physical state appears twice at different resolutions.

use crate::error::{Error, Result};
use crate::generators::GridPack;
use crate::rng::substream;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixEntry {
    pub resolution: usize,
    pub proportion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixSpec {
    pub entries: Vec<MixEntry>,
    pub total_samples: usize,
}

impl MixSpec {
    pub fn single(resolution: usize, total_samples: usize) -> MixSpec {
        MixSpec {
            entries: vec![MixEntry {
                resolution,
                proportion: 1.0,
            }],
            total_samples,
        }
    }

    /// Pairwise mix: proportion `p` at `lo`, `1-p` at `hi`.
    pub fn pair(lo: usize, hi: usize, p: f64, total_samples: usize) -> MixSpec {
        MixSpec {
            entries: vec![
                MixEntry {
                    resolution: lo,
                    proportion: p,
                },
                MixEntry {
                    resolution: hi,
                    proportion: 1.0 - p,
                },
            ],
            total_samples,
        }
    }

    pub fn from_proportions(resolutions: &[usize], proportions: &[f64], total: usize) -> MixSpec {
        MixSpec {
            entries: resolutions
                .iter()
                .zip(proportions)
                .map(|(&resolution, &proportion)| MixEntry {
                    resolution,
                    proportion,
                })
                .collect(),
            total_samples: total,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.is_empty() || self.total_samples == 0 {
            return Err(Error::Usage("mix needs entries and a positive total".into()));
        }
        let sum: f64 = self.entries.iter().map(|e| e.proportion).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Usage(format!("mix proportions sum to {sum}, expected 1")));
        }
        if self.entries.iter().any(|e| e.proportion < 0.0) {
            return Err(Error::Usage("mix proportions must be non-negative".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for e in &self.entries {
            if !seen.insert(e.resolution) {
                return Err(Error::Usage(format!(
                    "resolution {} appears twice in mix",
                    e.resolution
                )));
            }
        }
        Ok(())
    }

    /// Largest-remainder sample counts, summing exactly to `total_samples`.
    /// Remainder ties break toward the lower resolution.
    pub fn counts(&self) -> Result<Vec<(usize, usize)>> {
        self.validate()?;
        let mut rows: Vec<(usize, f64)> = self
            .entries
            .iter()
            .map(|e| (e.resolution, e.proportion * self.total_samples as f64))
            .collect();
        rows.sort_by_key(|&(r, _)| r);
        let mut counts: Vec<(usize, usize)> =
            rows.iter().map(|&(r, q)| (r, q.floor() as usize)).collect();
        let assigned: usize = counts.iter().map(|&(_, c)| c).sum();
        let mut leftover = self.total_samples - assigned;
        let mut order: Vec<usize> = (0..rows.len()).collect();
        order.sort_by(|&a, &b| {
            let fa = rows[a].1 - rows[a].1.floor();
            let fb = rows[b].1 - rows[b].1.floor();
            fb.total_cmp(&fa).then(rows[a].0.cmp(&rows[b].0))
        });
        let mut cursor = 0;
        while leftover > 0 {
            counts[order[cursor % order.len()]].1 += 1;
            cursor += 1;
            leftover -= 1;
        }
        Ok(counts)
    }

    /// `sum_i p_i * r_i^dims`: the mean pixel count of one training sample.
    pub fn average_pixels(&self, dims: usize) -> f64 {
        self.entries
            .iter()
            .map(|e| e.proportion * (e.resolution as f64).powi(dims as i32))
            .sum()
    }
}

/// A composed training set: `(resolution, sample index)` in a deterministic
/// shuffled order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSet {
    pub items: Vec<(usize, usize)>,
    pub counts: Vec<(usize, usize)>,
}

impl TrainSet {
    pub fn buckets(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &(res, idx) in &self.items {
            out.entry(res).or_default().push(idx);
        }
        out
    }
}

/// Draws `counts()` samples per resolution at disjoint indices (sample `i`
/// is the same physical state in every derived pack), then shuffles.
pub fn compose_mix(
    packs: &BTreeMap<usize, &GridPack>,
    mix: &MixSpec,
    seed: u64,
) -> Result<TrainSet> {
    let counts = mix.counts()?;
    let mut available = usize::MAX;
    for &(res, _) in &counts {
        let pack = packs.get(&res).ok_or_else(|| {
            Error::Data(format!("mix requests resolution {res} but no pack provides it"))
        })?;
        available = available.min(pack.count);
    }
    let need: usize = counts.iter().map(|&(_, c)| c).sum();
    if need > available {
        let scarcest = counts
            .iter()
            .map(|&(r, _)| r)
            .min_by_key(|r| packs[r].count)
            .unwrap();
        return Err(Error::Data(format!(
            "mix needs {need} distinct samples but resolution {scarcest} provides only {}",
            packs[&scarcest].count
        )));
    }

    let mut indices: Vec<usize> = (0..available).collect();
    indices.shuffle(&mut substream(seed, "mix/indices"));
    let mut items = Vec::with_capacity(need);
    let mut cursor = 0;
    for &(res, count) in &counts {
        for &idx in &indices[cursor..cursor + count] {
            items.push((res, idx));
        }
        cursor += count;
    }
    items.shuffle(&mut substream(seed, "mix/shuffle"));
    Ok(TrainSet { items, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{GridPack, Lineage, PackMeta, PackParams};
    use crate::spectral::GridField;

    fn pack(res: usize, count: usize) -> GridPack {
        let fields: Vec<GridField> = (0..count)
            .map(|i| GridField::new(1, res, vec![i as f64; res]).unwrap())
            .collect();
        GridPack::from_fields(
            &fields,
            &fields,
            PackMeta {
                pde: "test".into(),
                params: PackParams::default(),
                lowpass_limit: None,
                seed: 0,
                lineage: Lineage::default(),
                created_at: "1970-01-01T00:00:00Z".into(),
            },
        )
        .unwrap()
    }

    /// Independent largest-remainder oracle.
    fn oracle_counts(res: &[usize], props: &[f64], total: usize) -> Vec<(usize, usize)> {
        let mut rows: Vec<(usize, f64)> = res.iter().copied().zip(
            props.iter().map(|p| p * total as f64),
        ).collect();
        rows.sort_by_key(|r| r.0);
        let mut counts: Vec<(usize, usize)> = rows.iter().map(|&(r, q)| (r, q as usize)).collect();
        let mut rest = total - counts.iter().map(|c| c.1).sum::<usize>();
        let mut by_frac: Vec<usize> = (0..rows.len()).collect();
        by_frac.sort_by(|&a, &b| {
            (rows[b].1.fract())
                .total_cmp(&rows[a].1.fract())
                .then(rows[a].0.cmp(&rows[b].0))
        });
        let mut i = 0;
        while rest > 0 {
            counts[by_frac[i % by_frac.len()]].1 += 1;
            rest -= 1;
            i += 1;
        }
        counts
    }

    #[test]
    fn single_entry_takes_everything() {
        let mix = MixSpec::single(16, 10);
        assert_eq!(mix.counts().unwrap(), vec![(16, 10)]);
    }

    #[test]
    fn pairwise_ratios_match_oracle() {
        for &p in &[0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.95] {
            let mix = MixSpec::pair(16, 128, p, 512);
            let counts = mix.counts().unwrap();
            let oracle = oracle_counts(&[16, 128], &[p, 1.0 - p], 512);
            assert_eq!(counts, oracle, "p={p}");
            assert_eq!(counts.iter().map(|c| c.1).sum::<usize>(), 512);
        }
    }

    #[test]
    fn all_resolution_tuples_match_oracle() {
        let res = [16usize, 32, 64, 128];
        for props in [
            [0.25, 0.25, 0.25, 0.25],
            [0.7, 0.1, 0.1, 0.1],
            [0.9, 0.05, 0.03, 0.02],
        ] {
            let mix = MixSpec::from_proportions(&res, &props, 512);
            let counts = mix.counts().unwrap();
            assert_eq!(counts, oracle_counts(&res, &props, 512), "{props:?}");
            assert_eq!(counts.iter().map(|c| c.1).sum::<usize>(), 512);
        }
    }

    #[test]
    fn composition_is_deterministic_and_disjoint() {
        let p16 = pack(16, 64);
        let p32 = pack(32, 64);
        let mut packs = BTreeMap::new();
        packs.insert(16, &p16);
        packs.insert(32, &p32);
        let mix = MixSpec::pair(16, 32, 0.3, 40);
        let a = compose_mix(&packs, &mix, 9).unwrap();
        let b = compose_mix(&packs, &mix, 9).unwrap();
        assert_eq!(a, b);
        let mut seen = std::collections::BTreeSet::new();
        for &(_, idx) in &a.items {
            assert!(seen.insert(idx), "index {idx} drawn twice across resolutions");
        }
        assert_eq!(a.items.len(), 40);
    }

    #[test]
    fn insufficient_samples_name_the_resolution() {
        let p16 = pack(16, 8);
        let p32 = pack(32, 64);
        let mut packs = BTreeMap::new();
        packs.insert(16, &p16);
        packs.insert(32, &p32);
        let mix = MixSpec::pair(16, 32, 0.5, 40);
        let err = compose_mix(&packs, &mix, 1).unwrap_err();
        assert!(err.to_string().contains("16"), "{err}");
    }

    #[test]
    fn rejects_bad_proportions() {
        let mix = MixSpec::from_proportions(&[16, 32], &[0.9, 0.5], 10);
        assert!(mix.validate().is_err());
        let mix = MixSpec::from_proportions(&[16, 16], &[0.5, 0.5], 10);
        assert!(mix.validate().is_err());
    }

    #[test]
    fn average_pixels_matches_hand_arithmetic() {
        assert_eq!(MixSpec::single(16, 1).average_pixels(2), 256.0);
        let half = MixSpec::pair(16, 128, 0.5, 2);
        assert_eq!(half.average_pixels(2), 8320.0);
        let mix = MixSpec::from_proportions(&[16, 32, 64, 128], &[0.9, 0.05, 0.03, 0.02], 512);
        let hand = 0.9 * 256.0 + 0.05 * 1024.0 + 0.03 * 4096.0 + 0.02 * 16384.0;
        assert!((mix.average_pixels(2) - hand).abs() < 1e-12);
    }
}
