//! Overlap scores between label maps.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::image::LabelMap;

/// Per-label Dice coefficients and their mean.
#[derive(Debug, Clone, PartialEq)]
pub struct DiceScores {
    pub per_label: Vec<f64>,
    pub mean: f64,
}

fn check_dims(a: &LabelMap, b: &LabelMap) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::DimsMismatch { expected: a.dims().to_vec(), found: b.dims().to_vec() });
    }
    Ok(())
}

/// Counts `(|A_k|, |B_k|, |A_k ∩ B_k|)` for labels `0..k`; other values are
/// ignored.
fn counts(a: &LabelMap, b: &LabelMap, k: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let (mut na, mut nb, mut both) = (vec![0; k], vec![0; k], vec![0; k]);
    for (&la, &lb) in a.labels().iter().zip(b.labels()) {
        let (la, lb) = (la as usize, lb as usize);
        if la < k {
            na[la] += 1;
        }
        if lb < k {
            nb[lb] += 1;
        }
        if la == lb && la < k {
            both[la] += 1;
        }
    }
    (na, nb, both)
}

/// `2 |A_k ∩ B_k| / (|A_k| + |B_k|)` per label. Two empty sets score 1.
pub fn dice(a: &LabelMap, b: &LabelMap, k: usize) -> Result<DiceScores> {
    check_dims(a, b)?;
    if k == 0 {
        return Err(Error::InvalidParam("K must be positive".into()));
    }
    let (na, nb, both) = counts(a, b, k);
    let per_label: Vec<f64> = (0..k)
        .map(|l| {
            let denom = na[l] + nb[l];
            if denom == 0 {
                1.0
            } else {
                2.0 * both[l] as f64 / denom as f64
            }
        })
        .collect();
    let mean = per_label.iter().sum::<f64>() / k as f64;
    Ok(DiceScores { per_label, mean })
}

/// Pooled overlap over the foreground labels `1..k`; label 0 is background.
/// Maps without any foreground score 1.
pub fn mean_overlap(a: &LabelMap, b: &LabelMap, k: usize) -> Result<f64> {
    check_dims(a, b)?;
    let (na, nb, both) = counts(a, b, k);
    let (mut num, mut den) = (0usize, 0usize);
    for l in 1..k {
        num += both[l];
        den += na[l] + nb[l];
    }
    Ok(if den == 0 { 1.0 } else { 2.0 * num as f64 / den as f64 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn map(labels: &[u16]) -> LabelMap {
        LabelMap::new(&[labels.len(), 1], labels.to_vec()).unwrap()
    }

    #[test]
    fn dice_cases() {
        let a = map(&[0, 1, 1, 0]);
        assert_eq!(dice(&a, &a, 2).unwrap().per_label, vec![1.0, 1.0]);
        let d = dice(&map(&[1, 0]), &map(&[0, 1]), 2).unwrap();
        assert_eq!(d.per_label, vec![0.0, 0.0]);
        // A_1 = {0, 1}, B_1 = {1, 2}
        let d = dice(&map(&[1, 1, 0]), &map(&[0, 1, 1]), 2).unwrap();
        assert_eq!(d.per_label[1], 0.5);
    }

    #[test]
    fn empty_label_scores_one() {
        let d = dice(&map(&[0, 0]), &map(&[0, 0]), 2).unwrap();
        assert_eq!(d.per_label, vec![1.0, 1.0]);
        assert_eq!(d.mean, 1.0);
    }

    #[test]
    fn mean_overlap_cases() {
        let a = map(&[0, 1, 2, 2]);
        assert_eq!(mean_overlap(&a, &a, 3).unwrap(), 1.0);
        assert_eq!(mean_overlap(&map(&[1, 1, 0]), &map(&[0, 1, 1]), 2).unwrap(), 0.5);
        assert_eq!(mean_overlap(&map(&[0, 0]), &map(&[0, 0]), 3).unwrap(), 1.0);
    }

    #[test]
    fn dims_must_match() {
        assert!(dice(&map(&[0]), &map(&[0, 0]), 1).is_err());
        assert!(mean_overlap(&map(&[0]), &map(&[0, 0]), 1).is_err());
    }
}
