use crate::data::Manifest;
use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Train:test proportions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitRatio {
    pub train: usize,
    pub test: usize,
}

impl Default for SplitRatio {
    fn default() -> Self {
        Self { train: 80, test: 20 }
    }
}

impl SplitRatio {
    /// `⌈n·train/(train+test)⌉`, in integer arithmetic.
    pub fn train_count(&self, n: usize) -> usize {
        let total = self.train + self.test;
        (n * self.train).div_ceil(total)
    }
}

/// Per-class seeded shuffle, with the first `⌈ratio·n_c⌉` of each class going
/// to train. Both outputs keep the input's entry order.
pub fn stratified_split(manifest: &Manifest, ratio: SplitRatio, seed: u64) -> Result<(Manifest, Manifest)> {
    if ratio.train + ratio.test == 0 {
        return Err(Error::Split("ratio must have a positive total".into()));
    }
    let mut by_class = vec![Vec::new(); manifest.classes()];
    for (i, e) in manifest.entries.iter().enumerate() {
        by_class[e.label].push(i);
    }
    let rng = Rng::new(seed);
    let mut to_train = vec![false; manifest.len()];
    for (c, idx) in by_class.iter_mut().enumerate() {
        if idx.len() < 2 {
            return Err(Error::Split(format!(
                "class {c} (`{}`) has {} samples, need at least 2",
                manifest.labels[c],
                idx.len()
            )));
        }
        rng.derive(c as u64).shuffle(idx);
        for &i in &idx[..ratio.train_count(idx.len())] {
            to_train[i] = true;
        }
    }
    let (train, test): (Vec<_>, Vec<_>) = manifest
        .entries
        .iter()
        .zip(&to_train)
        .partition(|(_, &t)| t);
    let strip = |v: Vec<(&crate::data::Entry, &bool)>| v.into_iter().map(|(e, _)| e.clone()).collect();
    Ok((manifest.with_entries(strip(train)), manifest.with_entries(strip(test))))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Entry;
    use std::path::PathBuf;

    fn manifest(counts: &[usize]) -> Manifest {
        let mut entries = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            for k in 0..n {
                entries.push(Entry {
                    path: PathBuf::from(format!("{c}_{k}.efv")),
                    label: c,
                });
            }
        }
        let labels = (0..counts.len()).map(|c| format!("L{c}")).collect();
        Manifest::new(labels, entries, PathBuf::from(".")).unwrap()
    }

    #[test]
    fn ceil_rule() {
        let r = SplitRatio::default();
        assert_eq!(r.train_count(10), 8);
        assert_eq!(r.train_count(5), 4);
        assert_eq!(r.train_count(2), 2);
        assert_eq!(r.train_count(3), 3);
        assert_eq!(r.train_count(7), 6);
    }

    #[test]
    fn partition_per_class() {
        let m = manifest(&[10, 5, 3]);
        let (train, test) = stratified_split(&m, SplitRatio::default(), 4).unwrap();
        assert_eq!(train.class_counts(), vec![8, 4, 3]);
        assert_eq!(test.class_counts(), vec![2, 1, 0]);
        let mut all: Vec<_> = train.entries.iter().chain(&test.entries).cloned().collect();
        all.sort_by(|a, b| a.path.cmp(&b.path));
        let mut orig = m.entries.clone();
        orig.sort_by(|a, b| a.path.cmp(&b.path));
        assert_eq!(all, orig);
    }

    #[test]
    fn deterministic_per_seed() {
        let m = manifest(&[10, 10]);
        let a = stratified_split(&m, SplitRatio::default(), 1).unwrap();
        assert_eq!(a, stratified_split(&m, SplitRatio::default(), 1).unwrap());
        let differs = (2..10).any(|s| stratified_split(&m, SplitRatio::default(), s).unwrap() != a);
        assert!(differs);
    }

    #[test]
    fn tiny_class_rejected() {
        assert!(matches!(
            stratified_split(&manifest(&[4, 1]), SplitRatio::default(), 0),
            Err(Error::Split(_))
        ));
    }
}
