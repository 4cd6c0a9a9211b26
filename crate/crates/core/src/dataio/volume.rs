use std::path::Path;

use crate::numerics::{ngt, Tensor};
use crate::{Error, Result};

use super::AtlasSpec;

/// A 3D scalar field stored x-major (`[x][y][z]`).
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    data: Tensor<f32>,
}

impl Volume {
    pub fn new(extents: [usize; 3], voxels: Vec<f32>) -> Result<Self> {
        Ok(Volume {
            data: Tensor::new(extents.to_vec(), voxels)?,
        })
    }

    pub fn zeros(extents: [usize; 3]) -> Self {
        Volume {
            data: Tensor::zeros(&extents),
        }
    }

    pub fn extents(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[0], s[1], s[2]]
    }

    fn index(&self, p: [usize; 3]) -> usize {
        let e = self.extents();
        (p[0] * e[1] + p[1]) * e[2] + p[2]
    }

    pub fn get(&self, p: [usize; 3]) -> f32 {
        self.data.data()[self.index(p)]
    }

    pub fn set(&mut self, p: [usize; 3], v: f32) {
        let i = self.index(p);
        self.data.data_mut()[i] = v;
    }

    pub fn voxels(&self) -> &[f32] {
        self.data.data()
    }

    pub fn voxels_mut(&mut self) -> &mut [f32] {
        self.data.data_mut()
    }

    /// Mean intensity inside each atlas box, in atlas order.
    pub fn roi_means(&self, atlas: &AtlasSpec) -> Vec<f64> {
        atlas
            .rois
            .iter()
            .map(|b| {
                let mut sum = 0.0f64;
                for x in b.lo[0]..b.hi[0] {
                    for y in b.lo[1]..b.hi[1] {
                        for z in b.lo[2]..b.hi[2] {
                            sum += self.get([x, y, z]) as f64;
                        }
                    }
                }
                sum / b.voxel_count() as f64
            })
            .collect()
    }

    /// Adds `shift[r]` to every voxel of ROI box `r`.
    pub fn shift_rois(&mut self, atlas: &AtlasSpec, shift: &[f64]) {
        for (b, &s) in atlas.rois.iter().zip(shift) {
            for x in b.lo[0]..b.hi[0] {
                for y in b.lo[1]..b.hi[1] {
                    for z in b.lo[2]..b.hi[2] {
                        let i = self.index([x, y, z]);
                        let v = &mut self.data.data_mut()[i];
                        *v = (*v as f64 + s) as f32;
                    }
                }
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        ngt::save(path, &self.data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let data = ngt::load(path)?;
        if data.rank() != 3 {
            return Err(Error::parse(
                path.display().to_string(),
                format!("volume must be rank 3, found rank {}", data.rank()),
            ));
        }
        Ok(Volume { data })
    }
}

/// `T × N` regional signal matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiTimeSeries {
    data: Tensor<f32>,
}

impl RoiTimeSeries {
    pub const MIN_TIMEPOINTS: usize = 8;

    pub fn new(data: Tensor<f32>) -> Result<Self> {
        if data.rank() != 2 {
            return Err(Error::Shape(format!(
                "time series must be T×N, got {:?}",
                data.shape()
            )));
        }
        if data.rows() < Self::MIN_TIMEPOINTS {
            return Err(Error::InvalidArgument(format!(
                "time series needs at least {} time points, got {}",
                Self::MIN_TIMEPOINTS,
                data.rows()
            )));
        }
        data.check_finite("time series")?;
        Ok(RoiTimeSeries { data })
    }

    pub fn timepoints(&self) -> usize {
        self.data.rows()
    }

    pub fn roi_count(&self) -> usize {
        self.data.cols()
    }

    pub fn matrix(&self) -> &Tensor<f32> {
        &self.data
    }

    pub fn column(&self, roi: usize) -> Vec<f64> {
        (0..self.timepoints())
            .map(|t| self.data.get2(t, roi) as f64)
            .collect()
    }

    /// Applies `y ← offset[r] + scale[r]·y` to every column.
    pub fn affine_columns(&mut self, offset: &[f64], scale: &[f64]) {
        let n = self.roi_count();
        for row in self.data.data_mut().chunks_mut(n) {
            for (r, v) in row.iter_mut().enumerate() {
                *v = (offset[r] + scale[r] * *v as f64) as f32;
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        ngt::save(path, &self.data)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::new(ngt::load(path)?).map_err(|e| match e {
            Error::Shape(m) | Error::InvalidArgument(m) => Error::parse(path.display().to_string(), m),
            other => other,
        })
    }
}

/// One cube of side `p` per ROI, flattened x-major into rows of `p³`.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiPatchSet {
    pub side: usize,
    pub patches: Tensor<f32>,
}

impl RoiPatchSet {
    pub fn roi_count(&self) -> usize {
        self.patches.rows()
    }

    pub fn patch(&self, roi: usize) -> &[f32] {
        self.patches.row(roi)
    }
}

/// Crops, for every ROI, the cube of side `p` centred on the box centroid.
/// Voxels outside the volume are zero.
pub fn extract_roi_patches(v: &Volume, atlas: &AtlasSpec, p: usize) -> Result<RoiPatchSet> {
    let ext = v.extents();
    if p == 0 || ext.iter().any(|&e| p > e) {
        return Err(Error::InvalidArgument(format!(
            "patch side {p} exceeds volume extents {ext:?}"
        )));
    }
    if ext != atlas.volume_extents {
        return Err(Error::Shape(format!(
            "volume extents {ext:?} differ from atlas {:?}",
            atlas.volume_extents
        )));
    }
    let p3 = p * p * p;
    let mut out = vec![0.0f32; atlas.roi_count() * p3];
    let half = (p / 2) as isize;
    for (r, b) in atlas.rois.iter().enumerate() {
        let c = b.centroid();
        let origin = c.map(|v| v as isize - half);
        let dst = &mut out[r * p3..(r + 1) * p3];
        for i in 0..p {
            let x = origin[0] + i as isize;
            if x < 0 || x >= ext[0] as isize {
                continue;
            }
            for j in 0..p {
                let y = origin[1] + j as isize;
                if y < 0 || y >= ext[1] as isize {
                    continue;
                }
                for k in 0..p {
                    let z = origin[2] + k as isize;
                    if z < 0 || z >= ext[2] as isize {
                        continue;
                    }
                    dst[(i * p + j) * p + k] = v.get([x as usize, y as usize, z as usize]);
                }
            }
        }
    }
    Ok(RoiPatchSet {
        side: p,
        patches: Tensor::from_parts(vec![atlas.roi_count(), p3], out),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::RoiBox;
    use proptest::prelude::*;

    fn atlas(boxes: Vec<RoiBox>, side: usize) -> AtlasSpec {
        AtlasSpec {
            name: "test".into(),
            volume_extents: [side; 3],
            rois: boxes,
        }
    }

    #[test]
    fn constant_volume_gives_constant_patches() {
        let a = AtlasSpec::synthetic(8, 24).unwrap();
        let v = Volume::new([24; 3], vec![2.5; 24 * 24 * 24]).unwrap();
        let ps = extract_roi_patches(&v, &a, 4).unwrap();
        assert!(ps.patches.data().iter().all(|&x| x == 2.5));
        assert_eq!(ps.roi_count(), 8);
    }

    #[test]
    fn corner_box_pads_with_zero() {
        let a = atlas(
            vec![
                RoiBox { lo: [0, 0, 0], hi: [2, 2, 2] },
                RoiBox { lo: [6, 6, 6], hi: [8, 8, 8] },
            ],
            8,
        );
        let v = Volume::new([8; 3], vec![1.0; 512]).unwrap();
        let ps = extract_roi_patches(&v, &a, 4).unwrap();
        // centroid (1,1,1), origin (-1,-1,-1): index 0 along any axis is padding
        let p = ps.patch(0);
        for i in 0..4 {
            for j in 0..4 {
                for k in 0..4 {
                    let padded = i == 0 || j == 0 || k == 0;
                    assert_eq!(p[(i * 4 + j) * 4 + k], if padded { 0.0 } else { 1.0 });
                }
            }
        }
        assert!(extract_roi_patches(&v, &a, 9).is_err());
    }

    #[test]
    fn marker_lands_at_matching_patch_centre_only() {
        let a = AtlasSpec::synthetic(8, 32).unwrap();
        let mut v = Volume::zeros([32; 3]);
        let c = a.rois[3].centroid();
        v.set(c, 7.0);
        let p = 6;
        let ps = extract_roi_patches(&v, &a, p).unwrap();
        let centre = (p / 2 * p + p / 2) * p + p / 2;
        for r in 0..8 {
            for (idx, &x) in ps.patch(r).iter().enumerate() {
                let expected = if r == 3 && idx == centre { 7.0 } else { 0.0 };
                assert_eq!(x, expected, "roi {r} idx {idx}");
            }
        }
    }

    #[test]
    fn time_series_validation() {
        assert!(RoiTimeSeries::new(Tensor::zeros(&[7, 3])).is_err());
        assert!(RoiTimeSeries::new(Tensor::zeros(&[8, 3])).is_ok());
    }

    proptest! {
        #[test]
        fn patches_are_translation_consistent(dx in 0usize..4, dy in 0usize..4, dz in 0usize..4, seed in any::<u32>()) {
            let side = 20;
            let boxes = vec![
                RoiBox { lo: [3, 3, 3], hi: [7, 7, 7] },
                RoiBox { lo: [9, 4, 5], hi: [13, 8, 9] },
            ];
            let base = atlas(boxes.clone(), side);
            let shifted = atlas(
                boxes.iter().map(|b| RoiBox { lo: [b.lo[0] + dx, b.lo[1] + dy, b.lo[2] + dz], hi: [b.hi[0] + dx, b.hi[1] + dy, b.hi[2] + dz] }).collect(),
                side,
            );
            let mut v = Volume::zeros([side; 3]);
            let mut w = Volume::zeros([side; 3]);
            for x in 0..side - 4 {
                for y in 0..side - 4 {
                    for z in 0..side - 4 {
                        let val = ((x * 31 + y * 17 + z * 7) as u32 ^ seed) as f32 % 97.0;
                        v.set([x, y, z], val);
                        w.set([x + dx, y + dy, z + dz], val);
                    }
                }
            }
            let a = extract_roi_patches(&v, &base, 4).unwrap();
            let b = extract_roi_patches(&w, &shifted, 4).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
