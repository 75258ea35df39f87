//! Guiding key-value database: feature patches keyed by vectors, thinned with
//! farthest-point sampling and queried by exact nearest neighbour.

mod database;
mod fps;
mod persist;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use database::{
    build_database, query_nearest, query_pose, squared_distance, DbEntry, Hit, PatchDatabase,
    PoseExprKey, POSE_ANGLES,
};
pub use fps::fps_sample;
pub use persist::{load, read_file, save, write_file, DB_MAGIC};

/// Dense `channels x height x width` tensor, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "feature map dims must be positive, got {channels}x{height}x{width}"
            )));
        }
        let want = channels
            .checked_mul(height)
            .and_then(|v| v.checked_mul(width))
            .ok_or_else(|| Error::shape("feature map too large"))?;
        if data.len() != want {
            return Err(Error::shape(format!(
                "{channels}x{height}x{width} map needs {want} values, got {}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::shape(format!("non-finite value at {i}")));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(
            channels,
            height,
            width,
            vec![0.0; channels * height * width],
        )
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::shape("patch grid needs positive rows and cols"));
        }
        Ok(Self { rows, cols })
    }

    pub fn count(&self) -> usize {
        self.rows * self.cols
    }
}

/// Split `f` into `rows x cols` equal tiles, row-major.
pub fn cut_into_patches(f: &FeatureMap, g: PatchGrid) -> Result<Vec<FeatureMap>> {
    let (c, h, w) = f.shape();
    if g.rows == 0 || g.cols == 0 || h % g.rows != 0 || w % g.cols != 0 {
        return Err(Error::shape(format!(
            "{}x{} grid does not divide {h}x{w} map",
            g.rows, g.cols
        )));
    }
    let (ph, pw) = (h / g.rows, w / g.cols);
    let mut patches = Vec::with_capacity(g.count());
    for gr in 0..g.rows {
        for gc in 0..g.cols {
            let mut data = Vec::with_capacity(c * ph * pw);
            for ch in 0..c {
                for y in 0..ph {
                    let start = (ch * h + gr * ph + y) * w + gc * pw;
                    data.extend_from_slice(&f.data[start..start + pw]);
                }
            }
            patches.push(FeatureMap {
                channels: c,
                height: ph,
                width: pw,
                data,
            });
        }
    }
    Ok(patches)
}

/// Reassemble row-major tiles into one map; inverse of [`cut_into_patches`].
pub fn glue_patches(patches: &[FeatureMap], g: PatchGrid) -> Result<FeatureMap> {
    if patches.len() != g.count() || patches.is_empty() {
        return Err(Error::shape(format!(
            "{}x{} grid needs {} patches, got {}",
            g.rows,
            g.cols,
            g.count(),
            patches.len()
        )));
    }
    let (c, ph, pw) = patches[0].shape();
    if let Some(i) = patches.iter().position(|p| p.shape() != (c, ph, pw)) {
        return Err(Error::shape(format!(
            "patch {i} has shape {:?}, expected {:?}",
            patches[i].shape(),
            (c, ph, pw)
        )));
    }
    let (h, w) = (ph * g.rows, pw * g.cols);
    let mut data = vec![0.0f32; c * h * w];
    for (i, p) in patches.iter().enumerate() {
        let (gr, gc) = (i / g.cols, i % g.cols);
        for ch in 0..c {
            for y in 0..ph {
                let dst = (ch * h + gr * ph + y) * w + gc * pw;
                let src = (ch * ph + y) * pw;
                data[dst..dst + pw].copy_from_slice(&p.data[src..src + pw]);
            }
        }
    }
    Ok(FeatureMap {
        channels: c,
        height: h,
        width: w,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ramp(c: usize, h: usize, w: usize) -> FeatureMap {
        FeatureMap::new(c, h, w, (0..c * h * w).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn cut_2x2_row_major() {
        let f = ramp(1, 2, 2);
        let p = cut_into_patches(&f, PatchGrid::new(2, 2).unwrap()).unwrap();
        let vals: Vec<f32> = p.iter().map(|m| m.data()[0]).collect();
        assert_eq!(vals, vec![0.0, 1.0, 2.0, 3.0]);
        assert!(p.iter().all(|m| m.shape() == (1, 1, 1)));
    }

    #[test]
    fn cut_identity_grid() {
        let f = ramp(3, 4, 6);
        let g = PatchGrid::new(1, 1).unwrap();
        let p = cut_into_patches(&f, g).unwrap();
        assert_eq!(p, vec![f.clone()]);
        assert_eq!(glue_patches(&p, g).unwrap(), f);
    }

    #[test]
    fn cut_wide_map_into_128_pixels() {
        let f = ramp(512, 8, 16);
        let p = cut_into_patches(&f, PatchGrid::new(8, 16).unwrap()).unwrap();
        assert_eq!(p.len(), 128);
        assert!(p.iter().all(|m| m.shape() == (512, 1, 1)));
        // patch (row 2, col 5), channel 7 is the pixel at (7, 2, 5)
        assert_eq!(p[2 * 16 + 5].data()[7], f.at(7, 2, 5));
    }

    #[test]
    fn shape_errors() {
        let f = ramp(1, 4, 6);
        assert!(matches!(
            cut_into_patches(&f, PatchGrid { rows: 3, cols: 2 }),
            Err(Error::Shape(_))
        ));
        let g = PatchGrid::new(2, 2).unwrap();
        let p = cut_into_patches(&ramp(1, 4, 4), g).unwrap();
        assert!(glue_patches(&p[..3], g).is_err());
        let mut odd = p.clone();
        odd[1] = ramp(1, 1, 2);
        assert!(glue_patches(&odd, g).is_err());
        assert!(FeatureMap::new(1, 2, 2, vec![0.0; 3]).is_err());
        assert!(FeatureMap::new(1, 1, 1, vec![f32::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn glue_inverts_cut(
            c in 1usize..4, rows in 1usize..5, cols in 1usize..5,
            ph in 1usize..4, pw in 1usize..4, seed in any::<u64>()
        ) {
            let (h, w) = (rows * ph, cols * pw);
            let mut s = seed;
            let data = (0..c * h * w).map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                (s >> 40) as f32 / 1024.0 - 8000.0
            }).collect();
            let f = FeatureMap::new(c, h, w, data).unwrap();
            let g = PatchGrid::new(rows, cols).unwrap();
            let back = glue_patches(&cut_into_patches(&f, g).unwrap(), g).unwrap();
            prop_assert_eq!(back, f);
        }
    }
}
