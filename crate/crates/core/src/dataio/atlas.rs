use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Half-open voxel cuboid `lo..hi` along each axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoiBox {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
}

impl RoiBox {
    /// Integer centroid, rounding toward `lo`.
    pub fn centroid(&self) -> [usize; 3] {
        [0, 1, 2].map(|a| (self.lo[a] + self.hi[a]) / 2)
    }

    pub fn voxel_count(&self) -> usize {
        (0..3).map(|a| self.hi[a] - self.lo[a]).product()
    }

    pub fn contains(&self, p: [usize; 3]) -> bool {
        (0..3).all(|a| p[a] >= self.lo[a] && p[a] < self.hi[a])
    }

    fn overlaps(&self, other: &RoiBox) -> bool {
        (0..3).all(|a| self.lo[a] < other.hi[a] && other.lo[a] < self.hi[a])
    }
}

/// A parcellation of a volume into `N` ROIs given by bounding boxes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AtlasSpec {
    pub name: String,
    pub volume_extents: [usize; 3],
    pub rois: Vec<RoiBox>,
}

impl AtlasSpec {
    /// Disjoint cubic boxes laid out on a regular grid inside a cube of side
    /// `volume_side`; each box sits in the middle of its grid cell.
    pub fn synthetic(n_rois: usize, volume_side: usize) -> Result<Self> {
        if n_rois < 2 {
            return Err(Error::InvalidArgument("an atlas needs at least 2 ROIs".into()));
        }
        let grid = (1..).find(|g: &usize| g.pow(3) >= n_rois).expect("unbounded search");
        let cell = volume_side / grid;
        if cell < 3 {
            return Err(Error::InvalidArgument(format!(
                "volume side {volume_side} too small for {n_rois} ROIs"
            )));
        }
        let margin = (cell / 8).max(1);
        let rois = (0..n_rois)
            .map(|i| {
                let idx = [i / (grid * grid), (i / grid) % grid, i % grid];
                RoiBox {
                    lo: idx.map(|c| c * cell + margin),
                    hi: idx.map(|c| (c + 1) * cell - margin),
                }
            })
            .collect();
        let atlas = AtlasSpec {
            name: format!("synthetic-{n_rois}"),
            volume_extents: [volume_side; 3],
            rois,
        };
        atlas.validate()?;
        Ok(atlas)
    }

    pub fn roi_count(&self) -> usize {
        self.rois.len()
    }

    /// `N >= 2`, non-empty boxes inside the volume, pairwise disjoint.
    pub fn validate(&self) -> Result<()> {
        if self.rois.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "atlas '{}' has {} ROIs; at least 2 required",
                self.name,
                self.rois.len()
            )));
        }
        for (i, b) in self.rois.iter().enumerate() {
            if (0..3).any(|a| b.lo[a] >= b.hi[a] || b.hi[a] > self.volume_extents[a]) {
                return Err(Error::InvalidArgument(format!(
                    "ROI {i} box {b:?} is empty or outside volume {:?}",
                    self.volume_extents
                )));
            }
        }
        for i in 0..self.rois.len() {
            for j in i + 1..self.rois.len() {
                if self.rois[i].overlaps(&self.rois[j]) {
                    return Err(Error::InvalidArgument(format!("ROI boxes {i} and {j} overlap")));
                }
            }
        }
        Ok(())
    }
}
