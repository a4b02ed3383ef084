//! Random spatial deformation: an affine part (rotation, scaling, shear,
//! translation about the volume center) plus a smooth nonlinear displacement
//! obtained by trilinear upsampling of a coarse Gaussian control grid.
//!
//! Warping is pull-back: output voxel `x` takes the source value at `φ(x)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::rng_from_seed;
use crate::volume::{nearest_index, trilinear_raw, Border, Grid, LabelVolume, ProbVolume, Volume};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeformationConfig {
    /// Rotation range per axis, degrees.
    pub rotation_deg: f64,
    /// Scaling factors are drawn from `[1 - scaling, 1 + scaling]`.
    pub scaling: f64,
    pub shear: f64,
    pub translation_mm: f64,
    /// Upper bound on the standard deviation of the control-point displacements.
    pub nonlinear_std_mm: f64,
    /// Hard cap on the displacement magnitude at every control point.
    pub nonlinear_cap_mm: f64,
    pub control_points: usize,
}

impl Default for DeformationConfig {
    fn default() -> Self {
        DeformationConfig {
            rotation_deg: 15.0,
            scaling: 0.15,
            shear: 0.012,
            translation_mm: 5.0,
            nonlinear_std_mm: 3.0,
            nonlinear_cap_mm: 10.0,
            control_points: 8,
        }
    }
}

impl DeformationConfig {
    pub fn none() -> Self {
        DeformationConfig {
            rotation_deg: 0.0,
            scaling: 0.0,
            shear: 0.0,
            translation_mm: 0.0,
            nonlinear_std_mm: 0.0,
            nonlinear_cap_mm: 0.0,
            control_points: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("rotation_deg", self.rotation_deg),
            ("scaling", self.scaling),
            ("shear", self.shear),
            ("translation_mm", self.translation_mm),
            ("nonlinear_std_mm", self.nonlinear_std_mm),
            ("nonlinear_cap_mm", self.nonlinear_cap_mm),
        ];
        for (name, v) in ranges {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("deformation.{name} must be >= 0, got {v}")));
            }
        }
        if self.scaling >= 1.0 {
            return Err(Error::Config("deformation.scaling must be < 1".into()));
        }
        if self.control_points < 2 {
            return Err(Error::Config("deformation.control_points must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineParams {
    pub rotation_deg: [f64; 3],
    pub scaling: [f64; 3],
    pub shear: [f64; 3],
    pub translation_mm: [f64; 3],
}

impl AffineParams {
    pub fn identity() -> Self {
        AffineParams {
            rotation_deg: [0.0; 3],
            scaling: [1.0; 3],
            shear: [0.0; 3],
            translation_mm: [0.0; 3],
        }
    }

    pub fn translation(t_mm: [f64; 3]) -> Self {
        AffineParams {
            translation_mm: t_mm,
            ..AffineParams::identity()
        }
    }

    /// Linear part `R · H · S` acting on millimeter offsets from the center.
    pub fn matrix(&self) -> [[f64; 3]; 3] {
        let [ax, ay, az] = self.rotation_deg.map(f64::to_radians);
        let rx = [[1.0, 0.0, 0.0], [0.0, ax.cos(), -ax.sin()], [0.0, ax.sin(), ax.cos()]];
        let ry = [[ay.cos(), 0.0, ay.sin()], [0.0, 1.0, 0.0], [-ay.sin(), 0.0, ay.cos()]];
        let rz = [[az.cos(), -az.sin(), 0.0], [az.sin(), az.cos(), 0.0], [0.0, 0.0, 1.0]];
        let [h0, h1, h2] = self.shear;
        let shear = [[1.0, h0, h1], [0.0, 1.0, h2], [0.0, 0.0, 1.0]];
        let [s0, s1, s2] = self.scaling;
        let scale = [[s0, 0.0, 0.0], [0.0, s1, 0.0], [0.0, 0.0, s2]];
        matmul(&matmul(&matmul(&rz, &ry), &rx), &matmul(&shear, &scale))
    }
}

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    std::array::from_fn(|r| std::array::from_fn(|c| (0..3).map(|k| a[r][k] * b[k][c]).sum()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeformationField {
    pub source_dims: [usize; 3],
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub affine: AffineParams,
    pub control_dims: [usize; 3],
    /// Control-point displacements in mm, x fastest.
    pub control: Vec<[f64; 3]>,
    pub seed: u64,
}

fn symmetric<R: Rng>(rng: &mut R, half_width: f64) -> f64 {
    let u: f64 = rng.random();
    half_width * (2.0 * u - 1.0)
}

/// Random field on a grid of `dims` voxels.
pub fn sample_deformation(
    dims: [usize; 3],
    spacing: [f64; 3],
    config: &DeformationConfig,
    seed: u64,
) -> Result<DeformationField> {
    sample_deformation_between(dims, dims, spacing, config, seed)
}

/// Random field mapping an output grid of `dims` voxels into a source grid of
/// `source_dims` voxels, the two centered on each other.
pub fn sample_deformation_between(
    source_dims: [usize; 3],
    dims: [usize; 3],
    spacing: [f64; 3],
    config: &DeformationConfig,
    seed: u64,
) -> Result<DeformationField> {
    config.validate()?;
    Grid::new(dims, spacing)?;
    Grid::new(source_dims, spacing)?;
    let mut rng = rng_from_seed(seed);
    let rotation_deg = std::array::from_fn(|_| symmetric(&mut rng, config.rotation_deg));
    let scaling = std::array::from_fn(|_| 1.0 + symmetric(&mut rng, config.scaling));
    let shear = std::array::from_fn(|_| symmetric(&mut rng, config.shear));
    let translation_mm = std::array::from_fn(|_| symmetric(&mut rng, config.translation_mm));
    let std_u: f64 = rng.random();
    let std = config.nonlinear_std_mm * std_u;
    let cap = config.nonlinear_cap_mm;
    let nc = config.control_points;
    let control_dims = dims.map(|d| nc.min(d.max(1)));
    let count = control_dims.iter().product();
    let control = (0..count)
        .map(|_| {
            let mut v: [f64; 3] = std::array::from_fn(|_| {
                let z: f64 = rng.sample(StandardNormal);
                std * z
            });
            let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            if norm > cap {
                let s = if norm > 0.0 { cap / norm } else { 0.0 };
                v = v.map(|c| c * s);
            }
            v
        })
        .collect();
    Ok(DeformationField {
        source_dims,
        dims,
        spacing,
        affine: AffineParams {
            rotation_deg,
            scaling,
            shear,
            translation_mm,
        },
        control_dims,
        control,
        seed,
    })
}

impl DeformationField {
    /// Field with the given affine part and no nonlinear displacement.
    pub fn from_affine(dims: [usize; 3], spacing: [f64; 3], affine: AffineParams) -> Result<Self> {
        Grid::new(dims, spacing)?;
        Ok(DeformationField {
            source_dims: dims,
            dims,
            spacing,
            affine,
            control_dims: [2; 3],
            control: vec![[0.0; 3]; 8],
            seed: 0,
        })
    }

    pub fn identity(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        Self::from_affine(dims, spacing, AffineParams::identity())
    }

    pub fn max_control_displacement_mm(&self) -> f64 {
        self.control
            .iter()
            .map(|v| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt())
            .fold(0.0, f64::max)
    }

    /// Source voxel coordinate for every output voxel, x fastest.
    pub fn sampling_map(&self) -> SamplingMap {
        let dims = self.dims;
        let s = self.spacing;
        let m = self.affine.matrix();
        // Linear part in voxel units: S⁻¹ · M · S.
        let a: [[f64; 3]; 3] = std::array::from_fn(|r| std::array::from_fn(|c| m[r][c] * s[c] / s[r]));
        let t: [f64; 3] = std::array::from_fn(|r| self.affine.translation_mm[r] / s[r]);
        let c_out = dims.map(|d| (d as f64 - 1.0) / 2.0);
        let c_src = self.source_dims.map(|d| (d as f64 - 1.0) / 2.0);

        let taps: Vec<Vec<(usize, usize, f64)>> = (0..3)
            .map(|ax| {
                let n = dims[ax];
                let nc = self.control_dims[ax];
                (0..n)
                    .map(|i| {
                        let p = if n > 1 {
                            i as f64 * (nc - 1) as f64 / (n - 1) as f64
                        } else {
                            0.0
                        };
                        let lo = (p.floor() as usize).min(nc - 1);
                        let hi = (lo + 1).min(nc - 1);
                        (lo, hi, p - lo as f64)
                    })
                    .collect()
            })
            .collect();
        let has_nonlinear = self.control.iter().any(|v| v.iter().any(|&c| c != 0.0));
        let [cx, cy, _] = self.control_dims;
        let ctrl = |i: usize, j: usize, k: usize| &self.control[i + cx * (j + cy * k)];

        let mut points = Vec::with_capacity(dims.iter().product());
        for k in 0..dims[2] {
            let dz = k as f64 - c_out[2];
            for j in 0..dims[1] {
                let dy = j as f64 - c_out[1];
                for i in 0..dims[0] {
                    let dx = i as f64 - c_out[0];
                    let mut p: [f64; 3] =
                        std::array::from_fn(|r| c_src[r] + (a[r][0] * dx + a[r][1] * dy + a[r][2] * dz) + t[r]);
                    if has_nonlinear {
                        let (x0, x1, u) = taps[0][i];
                        let (y0, y1, w) = taps[1][j];
                        let (z0, z1, v) = taps[2][k];
                        for (r, pr) in p.iter_mut().enumerate() {
                            let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
                            let c00 = lerp(ctrl(x0, y0, z0)[r], ctrl(x1, y0, z0)[r], u);
                            let c10 = lerp(ctrl(x0, y1, z0)[r], ctrl(x1, y1, z0)[r], u);
                            let c01 = lerp(ctrl(x0, y0, z1)[r], ctrl(x1, y0, z1)[r], u);
                            let c11 = lerp(ctrl(x0, y1, z1)[r], ctrl(x1, y1, z1)[r], u);
                            *pr += lerp(lerp(c00, c10, w), lerp(c01, c11, w), v) / s[r];
                        }
                    }
                    points.push(p);
                }
            }
        }
        SamplingMap {
            source_dims: self.source_dims,
            dims,
            points,
        }
    }

    /// Displacement `φ(x) - x` in mm at output voxel `(i, j, k)`, with the
    /// output grid embedded in the source grid by center alignment.
    pub fn displacement_mm(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let map = self.sampling_map();
        let p = map.points[i + self.dims[0] * (j + self.dims[1] * k)];
        let offset: [f64; 3] = std::array::from_fn(|a| (self.source_dims[a] as f64 - self.dims[a] as f64) / 2.0);
        let x = [i as f64, j as f64, k as f64];
        std::array::from_fn(|a| (p[a] - x[a] - offset[a]) * self.spacing[a])
    }
}

/// Precomputed pull-back coordinates, shared by every volume warped with one field.
#[derive(Clone, Debug)]
pub struct SamplingMap {
    source_dims: [usize; 3],
    dims: [usize; 3],
    points: Vec<[f64; 3]>,
}

impl SamplingMap {
    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    fn output_grid(&self, source: &Grid) -> Result<Grid> {
        if source.dims != self.source_dims {
            return Err(Error::GridMismatch(format!(
                "field expects source dims {:?}, got {:?}",
                self.source_dims, source.dims
            )));
        }
        if self.dims == source.dims {
            Ok(source.clone())
        } else {
            source.centered(self.dims)
        }
    }

    pub fn warp_labels(&self, l: &LabelVolume) -> Result<LabelVolume> {
        let grid = self.output_grid(l.grid())?;
        let src = l.data();
        let data = self
            .points
            .iter()
            .map(|&p| nearest_index(p, self.source_dims).map_or(0, |i| src[i]))
            .collect();
        Ok(LabelVolume::new_unchecked(grid, data, l.table().clone()))
    }

    pub fn warp_volume(&self, v: &Volume) -> Result<Volume> {
        let grid = self.output_grid(v.grid())?;
        let data = self.warp_raw(v.data());
        Ok(Volume::new_unchecked(grid, data))
    }

    pub fn warp_prob(&self, p: &ProbVolume) -> Result<ProbVolume> {
        let grid = self.output_grid(p.grid())?;
        let data = self.warp_raw(p.data()).into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
        Ok(ProbVolume::new_unchecked(grid, data))
    }

    fn warp_raw(&self, src: &[f32]) -> Vec<f32> {
        self.points
            .iter()
            .map(|&p| trilinear_raw(src, self.source_dims, p, Border::Constant(0.0)))
            .collect()
    }
}

/// Nearest-neighbor pull-back of a label map.
pub fn warp_labels(l: &LabelVolume, phi: &DeformationField) -> Result<LabelVolume> {
    phi.sampling_map().warp_labels(l)
}

/// Trilinear pull-back of an intensity volume.
pub fn warp_volume(v: &Volume, phi: &DeformationField) -> Result<Volume> {
    phi.sampling_map().warp_volume(v)
}

/// Trilinear pull-back of a probability map; stays within `[0, 1]`.
pub fn warp_prob(p: &ProbVolume, phi: &DeformationField) -> Result<ProbVolume> {
    phi.sampling_map().warp_prob(p)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_ranges_give_identity() {
        let f = sample_deformation([9, 7, 5], [1.0, 1.5, 2.0], &DeformationConfig::none(), 17).unwrap();
        let map = f.sampling_map();
        let grid = Grid::new([9, 7, 5], [1.0, 1.5, 2.0]).unwrap();
        for (idx, p) in map.points().iter().enumerate() {
            let c = grid.coords(idx);
            assert_eq!(*p, [c[0] as f64, c[1] as f64, c[2] as f64]);
        }
    }

    #[test]
    fn translation_only_is_constant_displacement() {
        let cfg = DeformationConfig {
            translation_mm: 4.0,
            ..DeformationConfig::none()
        };
        let f = sample_deformation([6, 6, 6], [1.0; 3], &cfg, 3).unwrap();
        let d0 = f.displacement_mm(0, 0, 0);
        assert!(d0.iter().any(|&d| d != 0.0));
        for (i, j, k) in [(5, 5, 5), (2, 3, 4), (0, 5, 1)] {
            let d = f.displacement_mm(i, j, k);
            for a in 0..3 {
                assert!((d[a] - d0[a]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn same_seed_same_field() {
        let cfg = DeformationConfig::default();
        let a = sample_deformation([16; 3], [1.0; 3], &cfg, 99).unwrap();
        let b = sample_deformation([16; 3], [1.0; 3], &cfg, 99).unwrap();
        assert_eq!(a, b);
        let c = sample_deformation([16; 3], [1.0; 3], &cfg, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn control_displacements_respect_cap() {
        let cfg = DeformationConfig {
            nonlinear_std_mm: 50.0,
            nonlinear_cap_mm: 2.5,
            ..DeformationConfig::default()
        };
        for seed in 0..20 {
            let f = sample_deformation([12; 3], [1.0; 3], &cfg, seed).unwrap();
            assert!(f.max_control_displacement_mm() <= 2.5 + 1e-12);
        }
    }

    #[test]
    fn rejects_negative_ranges() {
        let cfg = DeformationConfig {
            shear: -0.1,
            ..DeformationConfig::default()
        };
        assert!(sample_deformation([4; 3], [1.0; 3], &cfg, 0).is_err());
    }

    #[test]
    fn pure_rotation_matrix_is_orthonormal() {
        let p = AffineParams {
            rotation_deg: [10.0, -20.0, 33.0],
            ..AffineParams::identity()
        };
        let m = p.matrix();
        for r in 0..3 {
            for c in 0..3 {
                let dot: f64 = (0..3).map(|k| m[r][k] * m[c][k]).sum();
                let want = if r == c { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn crop_to_smaller_output_grid() {
        let src = Volume::from_fn(Grid::cubic(6), |i, j, k| (i + 6 * j + 36 * k) as f32).unwrap();
        let f = sample_deformation_between([6; 3], [4; 3], [1.0; 3], &DeformationConfig::none(), 0).unwrap();
        let out = f.sampling_map().warp_volume(&src).unwrap();
        assert_eq!(out.dims(), [4; 3]);
        assert_eq!(out.get(0, 0, 0), src.get(1, 1, 1));
        assert_eq!(out.get(3, 3, 3), src.get(4, 4, 4));
        assert_eq!(out.grid().voxel_to_world([0.0; 3]), [1.0; 3]);
    }
}
