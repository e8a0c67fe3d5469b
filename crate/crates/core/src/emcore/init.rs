use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::seeds;
use crate::shotdata::ShotDataset;

/// k-means++ seeding over the distinct observed strings, weighted by their
/// counts.
///
/// The first center is drawn with probability proportional to count, each
/// later one proportional to `count * d^2` where `d` is the Hamming distance
/// to the nearest chosen center. Once every observed string has been chosen
/// the remaining centers are uniform random strings. Weights are integers, so
/// the draw sequence depends only on `seed`.
pub fn kmeanspp_init(dataset: &ShotDataset, k: usize, seed: u64) -> Result<Vec<BitString>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = seeds::rng(seed);
    let distinct = dataset.distinct();
    let counts = dataset.multiplicities();
    let mut centers = Vec::with_capacity(k);
    if k == 0 {
        return Ok(centers);
    }

    let first = WeightedIndex::new(counts).expect("counts are positive").sample(&mut rng);
    centers.push(distinct[first].clone());
    let mut nearest: Vec<u64> = distinct
        .iter()
        .map(|s| s.distance_unchecked(&distinct[first]) as u64)
        .collect();

    while centers.len() < k {
        let weights: Vec<u64> = counts.iter().zip(&nearest).map(|(&c, &d)| c * d * d).collect();
        let Ok(picker) = WeightedIndex::new(&weights) else {
            break;
        };
        let pick = picker.sample(&mut rng);
        let chosen = distinct[pick].clone();
        for (d, s) in nearest.iter_mut().zip(distinct) {
            *d = (*d).min(s.distance_unchecked(&chosen) as u64);
        }
        centers.push(chosen);
    }
    while centers.len() < k {
        centers.push(BitString::random(dataset.n(), &mut rng));
    }
    Ok(centers)
}
