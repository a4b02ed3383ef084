//! 3D scalar grids, interpolation and resampling.
//!
//! Voxel `(i, j, k)` sits at world position `affine · (i, j, k, 1)`; data is
//! stored with `i` varying fastest (NIfTI order). Continuous voxel coordinates
//! inside `[-0.5, n - 0.5]` on every axis are inside the grid; the half voxel
//! beyond the outermost centers replicates the edge value. Anything further out
//! takes the border value.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Affine = [[f64; 4]; 4];

/// Dimensions, spacing (mm) and voxel-to-world transform of a volume.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub affine: Affine,
}

impl Grid {
    /// Axis-aligned grid with the origin at voxel `(0, 0, 0)`.
    pub fn new(dims: [usize; 3], spacing: [f64; 3]) -> Result<Self> {
        let mut affine = identity_affine();
        for a in 0..3 {
            affine[a][a] = spacing[a];
        }
        Self::with_affine(dims, spacing, affine)
    }

    pub fn with_affine(dims: [usize; 3], spacing: [f64; 3], affine: Affine) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::InvalidGrid(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s.is_finite() && s > 0.0)) {
            return Err(Error::InvalidGrid(format!(
                "spacing must be finite and positive, got {spacing:?}"
            )));
        }
        if affine.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidGrid("affine has non-finite entries".into()));
        }
        Ok(Grid { dims, spacing, affine })
    }

    pub fn cubic(n: usize) -> Self {
        Grid::new([n; 3], [1.0; 3]).expect("positive cube")
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let [nx, ny, _] = self.dims;
        [idx % nx, (idx / nx) % ny, idx / (nx * ny)]
    }

    pub fn voxel_to_world(&self, p: [f64; 3]) -> [f64; 3] {
        let a = &self.affine;
        std::array::from_fn(|r| a[r][0] * p[0] + a[r][1] * p[1] + a[r][2] * p[2] + a[r][3])
    }

    /// Same dims (the only requirement for voxelwise operations).
    pub fn same_shape(&self, other: &Grid) -> bool {
        self.dims == other.dims
    }

    pub(crate) fn check_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "{what}: {:?} vs {:?}",
                self.dims, other.dims
            )))
        }
    }

    /// Grid covering the same world extent with new dims and spacing.
    ///
    /// Voxel `i` of the new grid maps to continuous source index
    /// `(i + 0.5) · (target_spacing / spacing) - 0.5` per axis.
    pub fn resampled(&self, target_dims: [usize; 3], target_spacing: [f64; 3]) -> Result<Grid> {
        let ratio: [f64; 3] = std::array::from_fn(|a| target_spacing[a] / self.spacing[a]);
        let origin: [f64; 3] = std::array::from_fn(|a| 0.5 * ratio[a] - 0.5);
        let mut affine = self.affine;
        let world_origin = self.voxel_to_world(origin);
        for r in 0..3 {
            for c in 0..3 {
                affine[r][c] = self.affine[r][c] * ratio[c];
            }
            affine[r][3] = world_origin[r];
        }
        Grid::with_affine(target_dims, target_spacing, affine)
    }

    /// Grid of `dims` voxels sharing this grid's spacing, centered on it.
    pub fn centered(&self, dims: [usize; 3]) -> Result<Grid> {
        let shift: [f64; 3] = std::array::from_fn(|a| (self.dims[a] as f64 - 1.0) / 2.0 - (dims[a] as f64 - 1.0) / 2.0);
        let mut affine = self.affine;
        let world_origin = self.voxel_to_world(shift);
        for r in 0..3 {
            affine[r][3] = world_origin[r];
        }
        Grid::with_affine(dims, self.spacing, affine)
    }
}

pub fn identity_affine() -> Affine {
    let mut a = [[0.0; 4]; 4];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    a
}

/// Value used for samples falling outside the grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Border {
    Constant(f32),
    /// Clamp the coordinate onto the grid.
    Replicate,
}

impl Default for Border {
    fn default() -> Self {
        Border::Constant(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Interp {
    Trilinear,
    Nearest,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TissueClass {
    WhiteMatter,
    GrayMatter,
    Csf,
    Other,
    Background,
}

impl TissueClass {
    /// FreeSurfer `aseg` conventions for the common structures.
    pub fn from_freesurfer(label: u32) -> TissueClass {
        match label {
            0 => TissueClass::Background,
            2 | 41 | 7 | 46 | 77 | 251..=255 => TissueClass::WhiteMatter,
            3 | 42 | 8 | 47 | 10..=13 | 17 | 18 | 26 | 28 | 49..=54 | 58 | 60 => TissueClass::GrayMatter,
            4 | 5 | 14 | 15 | 24 | 43 | 44 => TissueClass::Csf,
            _ => TissueClass::Other,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TissueClass::WhiteMatter => "white-matter",
            TissueClass::GrayMatter => "gray-matter",
            TissueClass::Csf => "csf",
            TissueClass::Other => "other",
            TissueClass::Background => "background",
        }
    }
}

fn check_finite(data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::InvalidValue(format!("non-finite value at voxel {i}"))),
        None => Ok(()),
    }
}

fn check_len(grid: &Grid, len: usize) -> Result<()> {
    if grid.len() != len {
        return Err(Error::InvalidGrid(format!(
            "data length {len} does not match dims {:?}",
            grid.dims
        )));
    }
    Ok(())
}

/// Intensity image or any real-valued field.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    grid: Grid,
    data: Vec<f32>,
}

impl Volume {
    pub fn new(grid: Grid, data: Vec<f32>) -> Result<Self> {
        check_len(&grid, data.len())?;
        check_finite(&data)?;
        Ok(Volume { grid, data })
    }

    pub(crate) fn new_unchecked(grid: Grid, data: Vec<f32>) -> Self {
        debug_assert_eq!(grid.len(), data.len());
        Volume { grid, data }
    }

    pub fn filled(grid: Grid, value: f32) -> Self {
        assert!(value.is_finite(), "fill value must be finite");
        let data = vec![value; grid.len()];
        Volume { grid, data }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(grid.len());
        for k in 0..grid.dims[2] {
            for j in 0..grid.dims[1] {
                for i in 0..grid.dims[0] {
                    data.push(f(i, j, k));
                }
            }
        }
        Volume::new(grid, data)
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.grid.index(i, j, k)]
    }

    /// Elementwise map. The closure must keep values finite.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Result<Volume> {
        Volume::new(self.grid.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }
}

/// Anatomy label map.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVolume {
    grid: Grid,
    data: Vec<u32>,
    table: BTreeMap<u32, TissueClass>,
}

impl LabelVolume {
    /// Label 0 is always background; every other label in `data` must be in `table`.
    pub fn new(grid: Grid, data: Vec<u32>, mut table: BTreeMap<u32, TissueClass>) -> Result<Self> {
        check_len(&grid, data.len())?;
        match table.get(&0) {
            Some(TissueClass::Background) | None => {
                table.insert(0, TissueClass::Background);
            }
            Some(c) => {
                return Err(Error::InvalidValue(format!(
                    "label 0 must be background, table says {}",
                    c.name()
                )))
            }
        }
        if let Some((&l, _)) = table.iter().find(|(&l, &c)| l != 0 && c == TissueClass::Background) {
            return Err(Error::InvalidValue(format!("only label 0 may be background, got {l}")));
        }
        let mut seen = BTreeSet::new();
        for &l in &data {
            if seen.insert(l) && !table.contains_key(&l) {
                return Err(Error::MissingLabel(l));
            }
        }
        Ok(LabelVolume { grid, data, table })
    }

    /// Builds the table from the labels present, classified with FreeSurfer conventions.
    pub fn with_freesurfer_table(grid: Grid, data: Vec<u32>) -> Result<Self> {
        let table = data
            .iter()
            .copied()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|l| (l, TissueClass::from_freesurfer(l)))
            .collect();
        LabelVolume::new(grid, data, table)
    }

    pub(crate) fn new_unchecked(grid: Grid, data: Vec<u32>, table: BTreeMap<u32, TissueClass>) -> Self {
        LabelVolume { grid, data, table }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    #[inline]
    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn table(&self) -> &BTreeMap<u32, TissueClass> {
        &self.table
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> u32 {
        self.data[self.grid.index(i, j, k)]
    }

    pub fn class_of(&self, label: u32) -> TissueClass {
        self.table.get(&label).copied().unwrap_or(TissueClass::Other)
    }

    /// Distinct labels present in the data.
    pub fn labels_present(&self) -> BTreeSet<u32> {
        self.data.iter().copied().collect()
    }
}

/// Per-voxel probability in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVolume {
    grid: Grid,
    data: Vec<f32>,
}

impl ProbVolume {
    pub fn new(grid: Grid, data: Vec<f32>) -> Result<Self> {
        check_len(&grid, data.len())?;
        if let Some(i) = data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::ProbabilityOutOfRange {
                index: i,
                value: data[i] as f64,
            });
        }
        Ok(ProbVolume { grid, data })
    }

    pub(crate) fn new_unchecked(grid: Grid, data: Vec<f32>) -> Self {
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        ProbVolume { grid, data }
    }

    pub fn zeros(grid: Grid) -> Self {
        let data = vec![0.0; grid.len()];
        ProbVolume { grid, data }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.grid.dims
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, k: usize) -> f32 {
        self.data[self.grid.index(i, j, k)]
    }

    /// Voxels with nonzero probability.
    pub fn support(&self) -> Vec<bool> {
        self.data.iter().map(|&p| p > 0.0).collect()
    }

    pub fn to_volume(&self) -> Volume {
        Volume::new_unchecked(self.grid.clone(), self.data.clone())
    }
}

/// Binary region, e.g. an annotated lesion.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    grid: Grid,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(grid: Grid, data: Vec<bool>) -> Result<Self> {
        check_len(&grid, data.len())?;
        Ok(Mask { grid, data })
    }

    /// Voxels strictly above `threshold`.
    pub fn from_values(grid: Grid, values: &[f32], threshold: f32) -> Result<Self> {
        Mask::new(grid, values.iter().map(|&v| v > threshold).collect())
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

fn check_point(p: [f64; 3]) -> Result<()> {
    if p.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidCoordinate(p[0], p[1], p[2]))
    }
}

#[inline]
fn inside(p: [f64; 3], dims: [usize; 3]) -> bool {
    (0..3).all(|a| p[a] >= -0.5 && p[a] <= dims[a] as f64 - 0.5)
}

/// Trilinear interpolation over raw data. `p` must be finite.
#[inline]
pub(crate) fn trilinear_raw(data: &[f32], dims: [usize; 3], p: [f64; 3], border: Border) -> f32 {
    if !inside(p, dims) {
        match border {
            Border::Constant(c) => return c,
            Border::Replicate => {}
        }
    }
    let mut lo = [0usize; 3];
    let mut hi = [0usize; 3];
    let mut t = [0f64; 3];
    for a in 0..3 {
        let top = (dims[a] - 1) as f64;
        let c = p[a].clamp(0.0, top);
        let f = c.floor();
        lo[a] = f as usize;
        hi[a] = (lo[a] + 1).min(dims[a] - 1);
        t[a] = c - f;
    }
    let at = |i: usize, j: usize, k: usize| data[i + dims[0] * (j + dims[1] * k)] as f64;
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    let c00 = lerp(at(lo[0], lo[1], lo[2]), at(hi[0], lo[1], lo[2]), t[0]);
    let c10 = lerp(at(lo[0], hi[1], lo[2]), at(hi[0], hi[1], lo[2]), t[0]);
    let c01 = lerp(at(lo[0], lo[1], hi[2]), at(hi[0], lo[1], hi[2]), t[0]);
    let c11 = lerp(at(lo[0], hi[1], hi[2]), at(hi[0], hi[1], hi[2]), t[0]);
    let c0 = lerp(c00, c10, t[1]);
    let c1 = lerp(c01, c11, t[1]);
    lerp(c0, c1, t[2]) as f32
}

/// Index of the nearest voxel center, or `None` outside the grid.
/// Exact halves go to the lower index.
#[inline]
pub(crate) fn nearest_index(p: [f64; 3], dims: [usize; 3]) -> Option<usize> {
    if !inside(p, dims) {
        return None;
    }
    let mut idx = [0usize; 3];
    for a in 0..3 {
        let r = (p[a] - 0.5).ceil().max(0.0) as usize;
        idx[a] = r.min(dims[a] - 1);
    }
    Some(idx[0] + dims[0] * (idx[1] + dims[1] * idx[2]))
}

/// Trilinear sample at a continuous voxel coordinate.
pub fn trilinear_sample(v: &Volume, point: [f64; 3], border: Border) -> Result<f32> {
    check_point(point)?;
    Ok(trilinear_raw(&v.data, v.grid.dims, point, border))
}

/// Trilinear sample of a probability map; stays within `[0, 1]` for in-range borders.
pub fn trilinear_sample_prob(v: &ProbVolume, point: [f64; 3], border: Border) -> Result<f32> {
    check_point(point)?;
    Ok(trilinear_raw(&v.data, v.grid.dims, point, border).clamp(0.0, 1.0))
}

/// Label of the nearest voxel center; `border_label` outside the grid.
pub fn nearest_sample(v: &LabelVolume, point: [f64; 3], border_label: u32) -> Result<u32> {
    check_point(point)?;
    Ok(nearest_index(point, v.grid.dims).map_or(border_label, |i| v.data[i]))
}

struct AxisTaps {
    lo: Vec<usize>,
    hi: Vec<usize>,
    t: Vec<f64>,
    nearest: Vec<usize>,
}

fn axis_taps(src_n: usize, dst_n: usize, ratio: f64) -> AxisTaps {
    let mut taps = AxisTaps {
        lo: Vec::with_capacity(dst_n),
        hi: Vec::with_capacity(dst_n),
        t: Vec::with_capacity(dst_n),
        nearest: Vec::with_capacity(dst_n),
    };
    let top = (src_n - 1) as f64;
    for i in 0..dst_n {
        let p = (i as f64 + 0.5) * ratio - 0.5;
        let c = p.clamp(0.0, top);
        let f = c.floor();
        let lo = f as usize;
        taps.lo.push(lo);
        taps.hi.push((lo + 1).min(src_n - 1));
        taps.t.push(c - f);
        taps.nearest.push(((p - 0.5).ceil().max(0.0) as usize).min(src_n - 1));
    }
    taps
}

/// Resample onto a grid covering the same world extent.
pub fn resample(v: &Volume, target_dims: [usize; 3], target_spacing: [f64; 3], mode: Interp) -> Result<Volume> {
    let grid = v.grid.resampled(target_dims, target_spacing)?;
    if target_dims == v.grid.dims && target_spacing == v.grid.spacing {
        return Ok(v.clone());
    }
    let data = resample_raw(
        &v.data,
        v.grid.dims,
        &v.grid.spacing,
        target_dims,
        &target_spacing,
        mode,
    );
    Ok(Volume::new_unchecked(grid, data))
}

pub(crate) fn resample_raw(
    src: &[f32],
    dims: [usize; 3],
    spacing: &[f64; 3],
    target_dims: [usize; 3],
    target_spacing: &[f64; 3],
    mode: Interp,
) -> Vec<f32> {
    let taps: Vec<AxisTaps> = (0..3)
        .map(|a| axis_taps(dims[a], target_dims[a], target_spacing[a] / spacing[a]))
        .collect();
    let [tx, ty, tz] = [&taps[0], &taps[1], &taps[2]];
    let mut out = Vec::with_capacity(target_dims.iter().product());
    let at = |i: usize, j: usize, k: usize| src[i + dims[0] * (j + dims[1] * k)] as f64;
    let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
    for k in 0..target_dims[2] {
        for j in 0..target_dims[1] {
            for i in 0..target_dims[0] {
                let value = match mode {
                    Interp::Nearest => at(tx.nearest[i], ty.nearest[j], tz.nearest[k]),
                    Interp::Trilinear => {
                        let (x0, x1, u) = (tx.lo[i], tx.hi[i], tx.t[i]);
                        let (y0, y1, w) = (ty.lo[j], ty.hi[j], ty.t[j]);
                        let (z0, z1, s) = (tz.lo[k], tz.hi[k], tz.t[k]);
                        let c00 = lerp(at(x0, y0, z0), at(x1, y0, z0), u);
                        let c10 = lerp(at(x0, y1, z0), at(x1, y1, z0), u);
                        let c01 = lerp(at(x0, y0, z1), at(x1, y0, z1), u);
                        let c11 = lerp(at(x0, y1, z1), at(x1, y1, z1), u);
                        lerp(lerp(c00, c10, w), lerp(c01, c11, w), s)
                    }
                };
                out.push(value as f32);
            }
        }
    }
    out
}
