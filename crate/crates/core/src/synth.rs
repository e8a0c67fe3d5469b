//! Synthetic shots under shot-level depolarizing noise followed by per-bit
//! symmetric readout flips.
//!
//! Each shot is drawn from its own ChaCha stream (stream index = shot index),
//! so generation is parallel and independent of the worker count.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bits::BitString;
use crate::error::{Error, Result};
use crate::seeds;
use crate::shotdata::ShotDataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Probability that a shot is replaced by a uniform random string.
    pub p: f64,
    /// Per-qubit readout flip probability.
    pub eps: Vec<f64>,
    /// Free-form circuit description (e.g. depth); never used by the model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_label: Option<String>,
}

impl NoiseSpec {
    pub fn new(p: f64, eps: Vec<f64>) -> Result<Self> {
        let spec = NoiseSpec {
            p,
            eps,
            depth_label: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn noiseless(n: usize) -> Self {
        NoiseSpec {
            p: 0.0,
            eps: vec![0.0; n],
            depth_label: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.p) {
            return Err(Error::InvalidConfig(format!("p = {} is outside [0, 1]", self.p)));
        }
        if let Some((j, e)) = self
            .eps
            .iter()
            .enumerate()
            .find(|(_, e)| !(0.0..0.5).contains(*e))
        {
            return Err(Error::InvalidConfig(format!("eps[{j}] = {e} is outside [0, 0.5)")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub solutions: Vec<BitString>,
    pub weights: Vec<f64>,
}

impl GroundTruth {
    /// Equal weights over `solutions`.
    pub fn uniform(solutions: Vec<BitString>) -> Result<Self> {
        let k = solutions.len();
        GroundTruth::with_weights(solutions, vec![1.0 / k as f64; k])
    }

    pub fn with_weights(solutions: Vec<BitString>, weights: Vec<f64>) -> Result<Self> {
        let truth = GroundTruth { solutions, weights };
        truth.validate()?;
        Ok(truth)
    }

    pub fn n(&self) -> usize {
        self.solutions[0].len()
    }

    pub fn k(&self) -> usize {
        self.solutions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let first = self
            .solutions
            .first()
            .ok_or_else(|| Error::InvalidConfig("ground truth needs at least one solution".into()))?;
        if self.solutions.len() != self.weights.len() {
            return Err(Error::InvalidConfig(format!(
                "{} solutions but {} weights",
                self.solutions.len(),
                self.weights.len()
            )));
        }
        if let Some(s) = self.solutions.iter().find(|s| s.len() != first.len()) {
            return Err(Error::Dimension {
                expected: first.len(),
                found: s.len(),
                line: None,
            });
        }
        let unique: HashSet<&BitString> = self.solutions.iter().collect();
        if unique.len() != self.solutions.len() {
            return Err(Error::InvalidConfig("ground-truth solutions must be distinct".into()));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(Error::InvalidConfig("weights must be non-negative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::Normalization { total });
        }
        Ok(())
    }
}

/// `k` distinct uniform-random strings of width `n` with equal weights.
pub fn sample_ground_truth(n: usize, k: usize, seed: u64) -> Result<GroundTruth> {
    if n == 0 || k == 0 {
        return Err(Error::InvalidConfig("n and K must be at least 1".into()));
    }
    if n < 64 && k as u128 > 1u128 << n {
        return Err(Error::Infeasible(format!("cannot draw {k} distinct strings of {n} bits")));
    }
    let mut rng = seeds::rng(seed);
    let solutions = if n <= 20 {
        index::sample(&mut rng, 1usize << n, k)
            .into_iter()
            .map(|v| BitString::from_bits((0..n).map(|j| v >> (n - 1 - j) & 1 == 1)))
            .collect()
    } else {
        let mut seen = HashSet::with_capacity(k);
        let mut out = Vec::with_capacity(k);
        while out.len() < k {
            let s = BitString::random(n, &mut rng);
            if seen.insert(s.clone()) {
                out.push(s);
            }
        }
        out
    };
    GroundTruth::uniform(solutions)
}

/// Independent `eps_j ~ U[low, high]`.
pub fn sample_eps(n: usize, low: f64, high: f64, seed: u64) -> Result<Vec<f64>> {
    if !(0.0 <= low && low <= high && high < 0.5) {
        return Err(Error::InvalidConfig(format!(
            "flip interval [{low}, {high}] must satisfy 0 <= low <= high < 0.5"
        )));
    }
    let mut rng = seeds::rng(seed);
    Ok((0..n)
        .map(|_| if low == high { low } else { rng.random_range(low..high) })
        .collect())
}

pub fn generate_shots(truth: &GroundTruth, noise: &NoiseSpec, shots: usize, seed: u64) -> Result<ShotDataset> {
    truth.validate()?;
    noise.validate()?;
    let n = truth.n();
    if noise.eps.len() != n {
        return Err(Error::Dimension {
            expected: n,
            found: noise.eps.len(),
            line: None,
        });
    }
    if shots == 0 {
        return Err(Error::EmptyDataset);
    }
    let picker = WeightedIndex::new(&truth.weights)
        .map_err(|e| Error::InvalidConfig(format!("ground-truth weights: {e}")))?;

    let out: Vec<BitString> = (0..shots as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = seeds::rng_stream(seed, i);
            if rng.random_bool(noise.p) {
                return BitString::random(n, &mut rng);
            }
            let mut y = truth.solutions[picker.sample(&mut rng)].clone();
            for (j, &e) in noise.eps.iter().enumerate() {
                if e > 0.0 && rng.random_bool(e) {
                    y.flip(j);
                }
            }
            y
        })
        .collect();
    ShotDataset::new(out)
}

/// Ground truth plus the noise that produced a dataset; written next to
/// generated data for later evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub n: usize,
    pub solutions: Vec<BitString>,
    pub alpha: Vec<f64>,
    pub eps: Vec<f64>,
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth_label: Option<String>,
}

impl TruthFile {
    pub fn new(truth: &GroundTruth, noise: &NoiseSpec) -> Self {
        TruthFile {
            n: truth.n(),
            solutions: truth.solutions.clone(),
            alpha: truth.weights.clone(),
            eps: noise.eps.clone(),
            p: noise.p,
            depth_label: noise.depth_label.clone(),
        }
    }

    pub fn ground_truth(&self) -> Result<GroundTruth> {
        let truth = GroundTruth::with_weights(self.solutions.clone(), self.alpha.clone())?;
        if truth.n() != self.n {
            return Err(Error::Dimension {
                expected: self.n,
                found: truth.n(),
                line: None,
            });
        }
        Ok(truth)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("truth file serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn single_bit_truth_is_both_strings() {
        for seed in 0..5 {
            let t = sample_ground_truth(1, 2, seed).unwrap();
            let mut s: Vec<String> = t.solutions.iter().map(|s| s.to_string()).collect();
            s.sort();
            assert_eq!(s, ["0", "1"]);
            assert_eq!(t.weights, [0.5, 0.5]);
        }
    }

    #[test]
    fn truth_is_distinct_with_equal_weights() {
        let t = sample_ground_truth(10, 8, 7).unwrap();
        let set: HashSet<_> = t.solutions.iter().collect();
        assert_eq!(set.len(), 8);
        assert!(t.weights.iter().all(|&w| w == 0.125));
        assert_eq!(t, sample_ground_truth(10, 8, 7).unwrap());

        let wide = sample_ground_truth(128, 8, 7).unwrap();
        assert_eq!(wide.solutions.iter().collect::<HashSet<_>>().len(), 8);
    }

    #[test]
    fn too_many_solutions_is_infeasible() {
        assert!(matches!(sample_ground_truth(2, 5, 0), Err(Error::Infeasible(_))));
        assert!(sample_ground_truth(2, 4, 0).is_ok());
    }

    #[test]
    fn noiseless_shots_are_solutions() {
        let t = sample_ground_truth(12, 4, 1).unwrap();
        let ds = generate_shots(&t, &NoiseSpec::noiseless(12), 8000, 2).unwrap();
        let counts = ds.counts();
        assert_eq!(counts.len(), 4);
        for s in &t.solutions {
            let freq = counts[s] as f64 / 8000.0;
            assert!((freq - 0.25).abs() < 0.03, "{freq}");
        }
    }

    #[test]
    fn full_depolarization_is_uniform() {
        let n = 12;
        let t = sample_ground_truth(n, 2, 5).unwrap();
        let noise = NoiseSpec::new(1.0, vec![0.1; n]).unwrap();
        let s = 10_000;
        let ds = generate_shots(&t, &noise, s, 11).unwrap();
        let bins = 1usize << n;
        let expected = s as f64 / bins as f64;
        let observed: f64 = ds
            .multiplicities()
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        let empty = (bins - ds.distinct().len()) as f64 * expected;
        let chi2 = observed + empty;
        let pval = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2);
        assert!(pval > 0.001, "chi2 = {chi2}, p = {pval}");
    }

    #[test]
    fn clean_flip_rate_matches_eps() {
        let truth = GroundTruth::uniform(vec!["10110010".parse().unwrap()]).unwrap();
        let eps = vec![0.0, 0.02, 0.05, 0.1, 0.15, 0.2, 0.3, 0.45];
        let noise = NoiseSpec::new(0.0, eps.clone()).unwrap();
        let s = 50_000;
        let ds = generate_shots(&truth, &noise, s, 99).unwrap();
        let x = &truth.solutions[0];
        for (j, &e) in eps.iter().enumerate() {
            let flips = ds.shots().iter().filter(|y| y.get(j) != x.get(j)).count() as f64;
            let rate = flips / s as f64;
            let half_width = 4.0 * (e * (1.0 - e) / s as f64).sqrt() + 1e-12;
            assert!((rate - e).abs() <= half_width, "bit {j}: {rate} vs {e}");
        }
    }

    #[test]
    fn generation_is_seed_deterministic() {
        let t = sample_ground_truth(20, 3, 4).unwrap();
        let noise = NoiseSpec::new(0.5, sample_eps(20, 0.05, 0.15, 6).unwrap()).unwrap();
        let a = generate_shots(&t, &noise, 2000, 8).unwrap();
        let b = generate_shots(&t, &noise, 2000, 8).unwrap();
        assert_eq!(a, b);
        let c = generate_shots(&t, &noise, 2000, 9).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn eps_sampler_respects_interval() {
        let e = sample_eps(128, 0.05, 0.15, 3).unwrap();
        assert!(e.iter().all(|&x| (0.05..0.15).contains(&x)));
        assert!(sample_eps(4, 0.2, 0.5, 0).is_err());
        assert!(sample_eps(4, 0.3, 0.2, 0).is_err());
    }

    #[test]
    fn noise_validation() {
        assert!(NoiseSpec::new(1.5, vec![0.1]).is_err());
        assert!(NoiseSpec::new(0.5, vec![0.5]).is_err());
        let t = sample_ground_truth(4, 1, 0).unwrap();
        assert!(generate_shots(&t, &NoiseSpec::noiseless(5), 10, 0).is_err());
    }

    #[test]
    fn truth_file_round_trip() {
        let t = sample_ground_truth(6, 3, 2).unwrap();
        let mut noise = NoiseSpec::new(0.3, vec![0.1; 6]).unwrap();
        noise.depth_label = Some("D=500".into());
        let file = TruthFile::new(&t, &noise);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        file.save(&p).unwrap();
        let back = TruthFile::load(&p).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.ground_truth().unwrap(), t);
    }
}
