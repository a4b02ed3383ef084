//! Acquisition corruption: thick-slice resolution loss, smooth multiplicative
//! bias field, additive Gaussian noise and a random gamma curve.
//!
//! Steps run in a fixed order: blur → down/up-sample → bias → noise → gamma →
//! clamp to `[0, 1]`. Every magnitude scales with a severity in `[0, 1]`; at
//! severity 0 the image passes through untouched.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::gaussian_blur;
use crate::rng::{child_seed, rng_from_seed, Stage};
use crate::volume::{resample_raw, Interp, Volume};

/// Largest magnitudes, reached at severity 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorruptionCaps {
    pub max_slice_spacing_mm: f64,
    pub bias_max: f64,
    pub noise_max: f64,
    pub gamma_log_max: f64,
}

impl Default for CorruptionCaps {
    fn default() -> Self {
        CorruptionCaps {
            max_slice_spacing_mm: 8.0,
            bias_max: 0.5,
            noise_max: 0.08,
            gamma_log_max: 0.25,
        }
    }
}

impl CorruptionCaps {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.max_slice_spacing_mm,
            self.bias_max,
            self.noise_max,
            self.gamma_log_max,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config(format!("corruption caps must be >= 0: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    pub severity: f64,
    /// Simulated acquisition spacing per axis, mm.
    pub slice_spacing: [f64; 3],
    /// Standard deviation of the log bias control values.
    pub bias_strength: f64,
    pub noise_std: f64,
    pub gamma_log_std: f64,
    pub seed: u64,
}

impl CorruptionSpec {
    /// No-op corruption for an image with the given spacing.
    pub fn clean(native_spacing: [f64; 3], seed: u64) -> Self {
        CorruptionSpec {
            severity: 0.0,
            slice_spacing: native_spacing,
            bias_strength: 0.0,
            noise_std: 0.0,
            gamma_log_std: 0.0,
            seed,
        }
    }

    /// Draws magnitudes in `[0, cap · severity]`. One randomly chosen axis gets
    /// the thick slices.
    pub fn from_severity(severity: f64, caps: &CorruptionCaps, native_spacing: [f64; 3], seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&severity) {
            return Err(Error::InvalidValue(format!("severity {severity} outside [0, 1]")));
        }
        caps.validate()?;
        let mut rng = rng_from_seed(child_seed(seed, Stage::Corruption, 0));
        let axis = rng.random_range(0..3usize);
        let u: [f64; 4] = std::array::from_fn(|_| rng.random());
        let mut slice_spacing = native_spacing;
        let extra = (caps.max_slice_spacing_mm - native_spacing[axis]).max(0.0);
        slice_spacing[axis] = native_spacing[axis] + severity * u[0] * extra;
        Ok(CorruptionSpec {
            severity,
            slice_spacing,
            bias_strength: severity * caps.bias_max * u[1],
            noise_std: severity * caps.noise_max * u[2],
            gamma_log_std: severity * caps.gamma_log_max * u[3],
            seed,
        })
    }
}

/// Anti-aliasing blur for simulating `target` spacing from `native`:
/// `0.85 · (target / native − 1) / 2` voxels, floored at 0.
pub fn blur_sigma_for_spacing(target: [f64; 3], native: [f64; 3]) -> [f64; 3] {
    std::array::from_fn(|a| (0.85 * (target[a] / native[a] - 1.0) / 2.0).max(0.0))
}

pub fn corrupt(s: &Volume, spec: &CorruptionSpec) -> Result<Volume> {
    if spec.severity == 0.0 {
        return Ok(s.clone());
    }
    let grid = s.grid().clone();
    let dims = grid.dims;
    let native = grid.spacing;
    if spec.slice_spacing.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::InvalidValue(format!("slice spacing {:?}", spec.slice_spacing)));
    }
    let mut data = s.data().to_vec();

    // 1-2. resolution
    let sigma = blur_sigma_for_spacing(spec.slice_spacing, native);
    if sigma.iter().any(|&v| v > 0.0) {
        gaussian_blur(&mut data, dims, sigma);
        let low_dims: [usize; 3] =
            std::array::from_fn(|a| ((dims[a] as f64 * native[a] / spec.slice_spacing[a]).round() as usize).max(1));
        if low_dims != dims {
            let low_spacing: [f64; 3] = std::array::from_fn(|a| dims[a] as f64 * native[a] / low_dims[a] as f64);
            let low = resample_raw(&data, dims, &native, low_dims, &low_spacing, Interp::Trilinear);
            data = resample_raw(&low, low_dims, &low_spacing, dims, &native, Interp::Trilinear);
        }
    }

    // 3. bias field
    if spec.bias_strength > 0.0 {
        let bias = bias_field(
            dims,
            native,
            spec.bias_strength,
            child_seed(spec.seed, Stage::Corruption, 1),
        );
        let in_brain: Vec<bool> = s.data().iter().map(|&v| v > 0.0).collect();
        let any_brain = in_brain.iter().any(|&b| b);
        let (sum, n) = bias
            .iter()
            .zip(&in_brain)
            .filter(|(_, &m)| m || !any_brain)
            .fold((0.0f64, 0usize), |(s, n), (&b, _)| (s + b, n + 1));
        let mean = sum / n as f64;
        for (v, b) in data.iter_mut().zip(&bias) {
            *v = (*v as f64 * b / mean) as f32;
        }
    }

    // 4. noise
    if spec.noise_std > 0.0 {
        let mut rng = rng_from_seed(child_seed(spec.seed, Stage::Corruption, 2));
        for v in data.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = (*v as f64 + spec.noise_std * z) as f32;
        }
    }

    // 5. gamma
    if spec.gamma_log_std > 0.0 {
        let mut rng = rng_from_seed(child_seed(spec.seed, Stage::Corruption, 3));
        let z: f64 = rng.sample(StandardNormal);
        let g = (spec.gamma_log_std * z).exp();
        for v in data.iter_mut() {
            *v = (*v as f64).max(0.0).powf(g) as f32;
        }
    }

    // 6. clamp
    for v in data.iter_mut() {
        *v = if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 };
    }
    Volume::new(grid, data)
}

/// Exponentiated, trilinearly upsampled 4³ grid of `N(0, strength²)` log values.
fn bias_field(dims: [usize; 3], native: [f64; 3], strength: f64, seed: u64) -> Vec<f64> {
    let coarse_dims = dims.map(|d| d.min(4));
    let coarse_spacing: [f64; 3] = std::array::from_fn(|a| dims[a] as f64 * native[a] / coarse_dims[a] as f64);
    let mut rng = rng_from_seed(seed);
    let coarse: Vec<f32> = (0..coarse_dims.iter().product::<usize>())
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (strength * z) as f32
        })
        .collect();
    resample_raw(&coarse, coarse_dims, &coarse_spacing, dims, &native, Interp::Trilinear)
        .into_iter()
        .map(|l| (l as f64).exp())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    #[test]
    fn sigma_rule() {
        assert_eq!(blur_sigma_for_spacing([1.0; 3], [1.0; 3]), [0.0; 3]);
        let s = blur_sigma_for_spacing([3.0, 1.0, 0.5], [1.0; 3]);
        assert!((s[0] - 0.85).abs() < 1e-15);
        assert_eq!(s[1], 0.0);
        assert_eq!(s[2], 0.0);
        let mut last = -1.0;
        for t in [1.0, 1.5, 2.0, 4.0, 8.0] {
            let v = blur_sigma_for_spacing([t; 3], [1.0; 3])[0];
            assert!(v > last);
            last = v;
        }
    }

    #[test]
    fn zero_severity_is_identity() {
        let v = Volume::from_fn(Grid::cubic(8), |i, j, k| ((i * j + k) % 7) as f32 / 7.0).unwrap();
        let spec = CorruptionSpec::from_severity(0.0, &CorruptionCaps::default(), [1.0; 3], 5).unwrap();
        assert_eq!(spec.bias_strength, 0.0);
        assert_eq!(spec.noise_std, 0.0);
        assert_eq!(spec.gamma_log_std, 0.0);
        assert_eq!(spec.slice_spacing, [1.0; 3]);
        assert_eq!(corrupt(&v, &spec).unwrap(), v);
    }

    #[test]
    fn output_is_bounded_and_deterministic() {
        let v = Volume::from_fn(Grid::cubic(12), |i, j, k| ((i + 2 * j + 3 * k) % 10) as f32 / 9.0).unwrap();
        for seed in 0..5 {
            let spec = CorruptionSpec::from_severity(1.0, &CorruptionCaps::default(), [1.0; 3], seed).unwrap();
            let a = corrupt(&v, &spec).unwrap();
            let b = corrupt(&v, &spec).unwrap();
            assert_eq!(a, b);
            assert!(a.data().iter().all(|&x| (0.0..=1.0).contains(&x)));
        }
    }

    #[test]
    fn severity_out_of_range_rejected() {
        assert!(CorruptionSpec::from_severity(1.5, &CorruptionCaps::default(), [1.0; 3], 0).is_err());
    }
}
