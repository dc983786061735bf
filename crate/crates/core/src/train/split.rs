use std::collections::{BTreeMap, BTreeSet};

use crate::embedding::Episode;
use crate::error::{Error, Result};
use crate::tensor::SeededRng;

fn by_class(dataset: &[Episode]) -> BTreeMap<usize, Vec<usize>> {
    let mut m: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, e) in dataset.iter().enumerate() {
        m.entry(e.class_id).or_default().push(i);
    }
    m
}

/// Per class, a seeded `val_fraction` share (rounded, at least one when the
/// class has two or more episodes) goes to validation. Returns sorted
/// `(train, val)` indices.
pub fn stratified_split(dataset: &[Episode], val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&val_fraction) {
        return Err(Error::InvalidConfig(format!("val_fraction {val_fraction} must lie in [0, 1)")));
    }
    let mut rng = SeededRng::new(seed);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (_, mut idx) in by_class(dataset) {
        rng.shuffle(&mut idx);
        let mut k = (val_fraction * idx.len() as f64).round() as usize;
        if val_fraction > 0.0 && idx.len() >= 2 {
            k = k.clamp(1, idx.len() - 1);
        }
        val.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    if train.is_empty() {
        return Err(Error::Empty("training split"));
    }
    Ok((train, val))
}

/// `shots` seeded episodes per class as support, the rest as query.
pub fn split_few_shot(dataset: &[Episode], shots: usize, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if shots == 0 {
        return Err(Error::InvalidConfig("shots must be at least 1".into()));
    }
    let mut rng = SeededRng::new(seed);
    let (mut support, mut query) = (Vec::new(), Vec::new());
    for (class, mut idx) in by_class(dataset) {
        if shots >= idx.len() {
            return Err(Error::InvalidConfig(format!(
                "{shots} shots leave no query episodes for class {class} ({} episodes)",
                idx.len()
            )));
        }
        rng.shuffle(&mut idx);
        support.extend_from_slice(&idx[..shots]);
        query.extend_from_slice(&idx[shots..]);
    }
    if support.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    support.sort_unstable();
    query.sort_unstable();
    Ok((support, query))
}

/// Trains on the seen classes only. The evaluation set holds every
/// held-out episode plus a stratified `val_fraction` of the seen ones.
pub fn split_unseen(
    dataset: &[Episode],
    held_out: &[usize],
    val_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let classes: BTreeSet<usize> = dataset.iter().map(|e| e.class_id).collect();
    let held: BTreeSet<usize> = held_out.iter().copied().collect();
    if held.is_empty() || !held.is_subset(&classes) || held.len() >= classes.len() {
        return Err(Error::InvalidConfig(format!(
            "held-out classes {held:?} must be a non-empty proper subset of {classes:?}"
        )));
    }
    let seen: Vec<usize> = (0..dataset.len())
        .filter(|&i| !held.contains(&dataset[i].class_id))
        .collect();
    let seen_eps: Vec<Episode> = seen.iter().map(|&i| dataset[i].clone()).collect();
    let (tr, va) = stratified_split(&seen_eps, val_fraction, seed)?;
    let train: Vec<usize> = tr.into_iter().map(|k| seen[k]).collect();
    let mut eval: Vec<usize> = va.into_iter().map(|k| seen[k]).collect();
    eval.extend((0..dataset.len()).filter(|&i| held.contains(&dataset[i].class_id)));
    eval.sort_unstable();
    Ok((train, eval))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{synth_dataset, SynthConfig};

    fn data() -> Vec<Episode> {
        synth_dataset(&SynthConfig {
            num_classes: 4,
            episodes_per_class: 10,
            frames: 2,
            patches: 4,
            objects_per_frame: 1,
            visual_dim: 3,
            text_dim: 3,
            noise_std: 0.1,
            seed: 2,
        })
        .unwrap()
    }

    #[test]
    fn stratified_split_is_balanced_and_disjoint() {
        let d = data();
        let (tr, va) = stratified_split(&d, 0.2, 5).unwrap();
        assert_eq!((tr.len(), va.len()), (32, 8));
        for c in 0..4 {
            assert_eq!(va.iter().filter(|&&i| d[i].class_id == c).count(), 2);
        }
        assert!(tr.iter().all(|i| !va.contains(i)));
        assert_eq!(stratified_split(&d, 0.2, 5).unwrap(), (tr, va));
    }

    #[test]
    fn few_shot_sizes() {
        let d = data();
        let (s, q) = split_few_shot(&d, 1, 3).unwrap();
        assert_eq!((s.len(), q.len()), (4, 36));
        assert!(split_few_shot(&d, 10, 3).is_err());
        assert!(split_few_shot(&d, 0, 3).is_err());
    }

    #[test]
    fn unseen_split_classes() {
        let d = data();
        let (tr, ev) = split_unseen(&d, &[3], 0.2, 1).unwrap();
        let classes = |idx: &[usize]| idx.iter().map(|&i| d[i].class_id).collect::<BTreeSet<_>>();
        assert_eq!(classes(&tr).len(), 3);
        assert_eq!(classes(&ev).len(), 4);
        assert!(split_unseen(&d, &[], 0.2, 1).is_err());
        assert!(split_unseen(&d, &[0, 1, 2, 3], 0.2, 1).is_err());
        assert!(split_unseen(&d, &[9], 0.2, 1).is_err());
    }
}
