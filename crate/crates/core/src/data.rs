//! Ring-of-Gaussians toy data and mode-coverage readout.

use std::f64::consts::TAU;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::numerics::{Matrix, Rng};

/// Isotropic Gaussians with means equally spaced on a circle.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RingMixture {
    pub n_modes: usize,
    pub radius: f64,
    pub sigma: f64,
}

impl Default for RingMixture {
    fn default() -> Self {
        Self {
            n_modes: 8,
            radius: 2.0,
            sigma: 0.02,
        }
    }
}

impl RingMixture {
    pub fn validate(&self) -> Result<()> {
        if self.n_modes == 0 {
            return Err(Error::InvalidArgument("mixture needs at least one mode".into()));
        }
        if !(self.radius.is_finite() && self.radius >= 0.0) {
            return Err(Error::InvalidArgument(format!("radius must be finite and ≥ 0, got {}", self.radius)));
        }
        if !(self.sigma.is_finite() && self.sigma >= 0.0) {
            return Err(Error::InvalidArgument(format!("sigma must be finite and ≥ 0, got {}", self.sigma)));
        }
        Ok(())
    }

    pub fn mean(&self, mode: usize) -> [f64; 2] {
        let angle = TAU * mode as f64 / self.n_modes as f64;
        [self.radius * angle.cos(), self.radius * angle.sin()]
    }

    /// `n_modes × 2` matrix of component means.
    pub fn means(&self) -> Matrix {
        Matrix::from_fn(self.n_modes, 2, |r, c| self.mean(r)[c])
    }

    /// Index of the closest mean and the distance to it.
    pub fn nearest_mode(&self, point: [f64; 2]) -> (usize, f64) {
        (0..self.n_modes)
            .map(|m| {
                let [mx, my] = self.mean(m);
                (m, (point[0] - mx).hypot(point[1] - my))
            })
            .fold((0, f64::INFINITY), |best, cand| if cand.1 < best.1 { cand } else { best })
    }
}

/// `n` samples and the mode each was drawn from.
pub fn sample_mixture(mix: &RingMixture, rng: &mut Rng, n: usize) -> Result<(Matrix, Vec<usize>)> {
    mix.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be ≥ 1".into()));
    }
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mode = rng.below(mix.n_modes);
        let [mx, my] = mix.mean(mode);
        data.push(mx + mix.sigma * rng.normal());
        data.push(my + mix.sigma * rng.normal());
        labels.push(mode);
    }
    Ok((Matrix::new(n, 2, data)?, labels))
}

/// One-hot rows for `labels` over `n_classes` columns.
pub fn one_hot(labels: &[usize], n_classes: usize) -> Result<Matrix> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::InvalidArgument(format!("label {bad} out of range for {n_classes} classes")));
    }
    Ok(Matrix::from_fn(labels.len(), n_classes, |r, c| f64::from(u8::from(labels[r] == c))))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub covered_modes: usize,
    /// High-quality samples whose nearest mean is each mode.
    pub per_mode_counts: Vec<usize>,
    pub high_quality_fraction: f64,
}

/// Assigns each sample to its nearest mean; a sample is high quality when
/// within `threshold_multiplier · sigma` of it, and a mode is covered when at
/// least `max(1, 1%)` of all samples land on it with high quality.
pub fn mode_coverage(samples: &Matrix, mix: &RingMixture, threshold_multiplier: f64) -> Result<CoverageReport> {
    if samples.cols() != 2 {
        return Err(dim_err("mode_coverage", format!("samples must be 2-d, got {} columns", samples.cols())));
    }
    let threshold = threshold_multiplier * mix.sigma;
    let mut counts = vec![0usize; mix.n_modes];
    for row in samples.row_iter() {
        let (mode, dist) = mix.nearest_mode([row[0], row[1]]);
        if dist <= threshold {
            counts[mode] += 1;
        }
    }
    let n = samples.rows();
    let needed = ((n as f64) * 0.01).ceil().max(1.0) as usize;
    let hq: usize = counts.iter().sum();
    Ok(CoverageReport {
        covered_modes: counts.iter().filter(|&&c| c >= needed).count(),
        per_mode_counts: counts,
        high_quality_fraction: if n == 0 { 0.0 } else { hq as f64 / n as f64 },
    })
}

/// CSV dump with columns `x,y` or, when labels are given, `x,y,label`.
pub fn write_samples_csv(w: &mut impl Write, samples: &Matrix, labels: Option<&[usize]>) -> std::io::Result<()> {
    match labels {
        Some(labels) => {
            writeln!(w, "x,y,label")?;
            for (row, l) in samples.row_iter().zip(labels) {
                writeln!(w, "{},{},{l}", row[0], row[1])?;
            }
        }
        None => {
            writeln!(w, "x,y")?;
            for row in samples.row_iter() {
                writeln!(w, "{},{}", row[0], row[1])?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::numerics::Rng;

    #[test]
    fn means_on_circle() {
        let mix = RingMixture { n_modes: 8, radius: 2.0, sigma: 0.0 };
        let means = mix.means();
        for r in 0..8 {
            assert!((means[(r, 0)].hypot(means[(r, 1)]) - 2.0).abs() < 1e-15);
            let next = (r + 1) % 8;
            let gap = (means[(r, 0)] - means[(next, 0)]).hypot(means[(r, 1)] - means[(next, 1)]);
            // chord for 45°: 2r·sin(π/8)
            assert!((gap - 4.0 * (std::f64::consts::PI / 8.0).sin()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_sigma_lands_on_means() {
        let mix = RingMixture { sigma: 0.0, ..RingMixture::default() };
        let (s, labels) = sample_mixture(&mix, &mut Rng::new(1), 100).unwrap();
        for (r, &l) in labels.iter().enumerate() {
            assert_eq!(s.row(r), &mix.mean(l));
        }
    }

    #[test]
    fn mode_counts_binomial() {
        let n = 100_000;
        let (_, labels) = sample_mixture(&RingMixture::default(), &mut Rng::new(7), n).unwrap();
        let p = 1.0 / 8.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for m in 0..8 {
            let c = labels.iter().filter(|&&l| l == m).count() as f64;
            assert!((c - n as f64 * p).abs() <= 4.0 * sd, "mode {m}: {c}");
        }
    }

    #[test]
    fn sampling_is_seeded() {
        let mix = RingMixture::default();
        let a = sample_mixture(&mix, &mut Rng::new(3), 50).unwrap();
        let b = sample_mixture(&mix, &mut Rng::new(3), 50).unwrap();
        assert_eq!(a, b);
        assert!(sample_mixture(&mix, &mut Rng::new(3), 0).is_err());
    }

    #[test]
    fn coverage_examples() {
        let mix = RingMixture::default();
        let at_means = mode_coverage(&mix.means(), &mix, 3.0).unwrap();
        assert_eq!(at_means.covered_modes, 8);
        assert_eq!(at_means.high_quality_fraction, 1.0);

        let one = Matrix::from_fn(200, 2, |_, c| mix.mean(5)[c]);
        let rep = mode_coverage(&one, &mix, 3.0).unwrap();
        assert_eq!(rep.covered_modes, 1);
        assert_eq!(rep.per_mode_counts[5], 200);

        let far = Matrix::from_fn(64, 2, |r, c| {
            let a = std::f64::consts::TAU * r as f64 / 64.0;
            4.0 * if c == 0 { a.cos() } else { a.sin() }
        });
        let rep = mode_coverage(&far, &mix, 3.0).unwrap();
        assert_eq!(rep.covered_modes, 0);
        assert_eq!(rep.high_quality_fraction, 0.0);

        assert!(mode_coverage(&Matrix::zeros(3, 3), &mix, 3.0).is_err());
    }

    #[test]
    fn one_percent_rule() {
        let mix = RingMixture::default();
        // 1000 samples at mode 0, 9 at mode 1: 9 < ceil(1% of 1009) = 11
        let pts = Matrix::from_fn(1009, 2, |r, c| mix.mean(usize::from(r >= 1000))[c]);
        assert_eq!(mode_coverage(&pts, &mix, 3.0).unwrap().covered_modes, 1);
    }

    #[test]
    fn one_hot_rows() {
        let m = one_hot(&[2, 0], 3).unwrap();
        assert_eq!(m.data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        assert!(one_hot(&[3], 3).is_err());
    }

    #[test]
    fn csv_dump() {
        let m = Matrix::from_rows(&[[0.5, -1.0], [2.0, 0.25]]).unwrap();
        let mut out = Vec::new();
        write_samples_csv(&mut out, &m, Some(&[1, 7])).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "x,y,label\n0.5,-1,1\n2,0.25,7\n");
        let mut out = Vec::new();
        write_samples_csv(&mut out, &m, None).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "x,y\n0.5,-1\n2,0.25\n");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn coverage_permutation_invariant(seed in any::<u64>(), n in 1usize..300) {
            let mix = RingMixture { sigma: 0.05, ..RingMixture::default() };
            let mut rng = Rng::new(seed);
            let (s, _) = sample_mixture(&mix, &mut rng, n).unwrap();
            let perm = rng.permutation(n);
            let shuffled = Matrix::from_fn(n, 2, |r, c| s[(perm[r], c)]);
            prop_assert_eq!(mode_coverage(&s, &mix, 3.0).unwrap(), mode_coverage(&shuffled, &mix, 3.0).unwrap());
        }

        #[test]
        fn coverage_monotone_in_threshold(seed in any::<u64>(), t in 0.0f64..6.0, dt in 0.0f64..3.0) {
            let mix = RingMixture { sigma: 0.05, ..RingMixture::default() };
            let mut rng = Rng::new(seed);
            let (s, _) = sample_mixture(&mix, &mut rng, 200).unwrap();
            let s = s.map(|v| v * 1.03);
            let lo = mode_coverage(&s, &mix, t).unwrap();
            let hi = mode_coverage(&s, &mix, t + dt).unwrap();
            prop_assert!(lo.covered_modes <= hi.covered_modes);
            prop_assert!(lo.high_quality_fraction <= hi.high_quality_fraction);
        }
    }
}
