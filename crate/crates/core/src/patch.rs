//! Non-overlapping `P x P` patch grid, per-patch keypoint counts, and the
//! Keypoint / Non-keypoint split.

use thiserror::Error;

use crate::sift::Keypoint;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("image {width}x{height} is not divisible into {patch}x{patch} patches")]
    Indivisible {
        width: usize,
        height: usize,
        patch: usize,
    },
    #[error("keypoint ({x}, {y}) lies outside the {width}x{height} grid")]
    OutOfBounds {
        x: f64,
        y: f64,
        width: usize,
        height: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch_size: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn new(width: usize, height: usize, patch_size: usize) -> Result<Self, GridError> {
        if patch_size == 0 || width == 0 || height == 0 || !width.is_multiple_of(patch_size) || !height.is_multiple_of(patch_size) {
            return Err(GridError::Indivisible {
                width,
                height,
                patch: patch_size,
            });
        }
        Ok(PatchGrid {
            patch_size,
            rows: height / patch_size,
            cols: width / patch_size,
        })
    }

    /// Total patch count `N`.
    #[inline]
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn width(&self) -> usize {
        self.cols * self.patch_size
    }

    pub fn height(&self) -> usize {
        self.rows * self.patch_size
    }

    /// `(row, col)` of patch `index` in raster order.
    #[inline]
    pub fn position(&self, index: usize) -> (usize, usize) {
        (index / self.cols, index % self.cols)
    }

    /// Patch containing the point, or `None` outside the grid.
    pub fn patch_of(&self, x: f64, y: f64) -> Option<usize> {
        if !(x >= 0.0 && y >= 0.0) {
            return None;
        }
        let col = (x / self.patch_size as f64).floor() as usize;
        let row = (y / self.patch_size as f64).floor() as usize;
        (row < self.rows && col < self.cols).then_some(row * self.cols + col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Identity {
    Keypoint,
    NonKeypoint,
}

impl Identity {
    pub fn as_str(self) -> &'static str {
        match self {
            Identity::Keypoint => "keypoint",
            Identity::NonKeypoint => "non-keypoint",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchStats {
    counts: Vec<u32>,
    identity: Vec<Identity>,
}

impl PatchStats {
    pub fn from_counts(counts: Vec<u32>) -> Self {
        let identity = counts
            .iter()
            .map(|&t| if t >= 1 { Identity::Keypoint } else { Identity::NonKeypoint })
            .collect();
        PatchStats { counts, identity }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Keypoint count `t_j` per patch.
    #[inline]
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    #[inline]
    pub fn identity(&self) -> &[Identity] {
        &self.identity
    }

    #[inline]
    pub fn is_keypoint(&self, j: usize) -> bool {
        self.identity[j] == Identity::Keypoint
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().map(|&t| t as u64).sum()
    }

    /// `patch_index,row,col,t,identity` with a header line.
    pub fn to_csv(&self, grid: &PatchGrid) -> String {
        let mut out = String::from("patch_index,row,col,t,identity\n");
        for (j, (&t, id)) in self.counts.iter().zip(&self.identity).enumerate() {
            let (r, c) = grid.position(j);
            out.push_str(&format!("{j},{r},{c},{t},{}\n", id.as_str()));
        }
        out
    }
}

pub fn assign_keypoints(grid: &PatchGrid, keypoints: &[Keypoint]) -> Result<PatchStats, GridError> {
    let mut counts = vec![0u32; grid.len()];
    for k in keypoints {
        let j = grid.patch_of(k.x, k.y).ok_or(GridError::OutOfBounds {
            x: k.x,
            y: k.y,
            width: grid.width(),
            height: grid.height(),
        })?;
        counts[j] += 1;
    }
    Ok(PatchStats::from_counts(counts))
}

/// `(S_Key, S_Non)`, each in ascending patch order.
pub fn split_identity_sets(stats: &PatchStats) -> (Vec<usize>, Vec<usize>) {
    (0..stats.len()).partition(|&j| stats.is_keypoint(j))
}
