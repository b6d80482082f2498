//! Binary region masks, their pairing, and reduction to feature resolution.

mod fusion;
mod global;
mod rle;

use std::path::Path;

use image::ExtendedColorType;

use crate::error::{Error, Result};
use crate::image::encode_png;
use crate::tensor::GridShape;

pub use fusion::{fuse_attention, validate_fusion};
pub use global::global_masked_adain;
pub use rle::{rle_decode, rle_encode, Rle};

/// Full-resolution binary mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Mask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "{height}x{width} mask needs {} bits, got {}",
                height * width,
                bits.len()
            )));
        }
        Ok(Self { height, width, bits })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![false; height * width],
        }
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            bits: vec![true; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(y, x));
            }
        }
        Self { height, width, bits }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.bits[y * self.width + x] = value;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.contains(&true)
    }

    /// Decodes a PNG; any nonzero luma value counts as set.
    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Png)
            .map_err(|e| Error::BadImage(e.to_string()))?
            .to_luma8();
        let bits = img.as_raw().iter().map(|&v| v != 0).collect();
        Self::new(img.height() as usize, img.width() as usize, bits)
    }

    /// 8-bit single-channel PNG, 255 for set pixels and 0 otherwise.
    pub fn to_png_bytes(&self) -> Vec<u8> {
        let raw: Vec<u8> = self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect();
        encode_png(&raw, self.width as u32, self.height as u32, ExtendedColorType::L8)
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_png_bytes(&std::fs::read(path)?)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_png_bytes())?;
        Ok(())
    }
}

/// "This content region takes its style from that style region."
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPair {
    pub content: Mask,
    pub style: Mask,
}

impl MaskPair {
    pub fn new(content: Mask, style: Mask) -> Self {
        Self { content, style }
    }
}

/// Ordered pair list; later pairs override earlier ones on shared content.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MaskPairSet(Vec<MaskPair>);

impl MaskPairSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, pair: MaskPair) -> usize {
        self.0.push(pair);
        self.0.len() - 1
    }

    pub fn remove(&mut self, index: usize) -> Option<MaskPair> {
        (index < self.0.len()).then(|| self.0.remove(index))
    }

    pub fn clear(&mut self) {
        self.0.clear();
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MaskPair> {
        self.0.iter()
    }

    pub fn as_slice(&self) -> &[MaskPair] {
        &self.0
    }
}

impl From<Vec<MaskPair>> for MaskPairSet {
    fn from(pairs: Vec<MaskPair>) -> Self {
        Self(pairs)
    }
}

impl FromIterator<MaskPair> for MaskPairSet {
    fn from_iter<I: IntoIterator<Item = MaskPair>>(iter: I) -> Self {
        Self(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a MaskPairSet {
    type Item = &'a MaskPair;
    type IntoIter = std::slice::Iter<'a, MaskPair>;

    fn into_iter(self) -> Self::IntoIter {
        self.0.iter()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskRole {
    Content,
    Style,
}

/// A mask at feature-grid resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DownsampledMask {
    grid: GridShape,
    bits: Vec<bool>,
}

impl DownsampledMask {
    pub fn new(grid: GridShape, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != grid.cells() {
            return Err(Error::GridMismatch(format!(
                "{}x{} grid needs {} cells, got {}",
                grid.h,
                grid.w,
                grid.cells(),
                bits.len()
            )));
        }
        Ok(Self { grid, bits })
    }

    pub fn from_cells(grid: GridShape, cells: impl IntoIterator<Item = usize>) -> Result<Self> {
        let mut bits = vec![false; grid.cells()];
        for c in cells {
            *bits
                .get_mut(c)
                .ok_or_else(|| Error::GridMismatch(format!("cell {c} outside {}x{} grid", grid.h, grid.w)))? = true;
        }
        Ok(Self { grid, bits })
    }

    pub fn full(grid: GridShape) -> Self {
        Self {
            grid,
            bits: vec![true; grid.cells()],
        }
    }

    pub fn grid(&self) -> GridShape {
        self.grid
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn contains(&self, cell: usize) -> bool {
        self.bits[cell]
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.contains(&true)
    }

    pub fn cells(&self) -> impl Iterator<Item = usize> + Clone + '_ {
        self.bits.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i)
    }
}

/// Reduces `mask` to `grid` by `factor x factor` majority vote: a cell is set
/// when at least half of its (border-clipped) pixel block is set.
///
/// A non-empty style mask that loses every cell is `MaskTooSmall`.
pub fn downsample_mask(mask: &Mask, grid: GridShape, factor: usize, role: MaskRole) -> Result<DownsampledMask> {
    if factor == 0 || mask.height.div_ceil(factor) != grid.h || mask.width.div_ceil(factor) != grid.w {
        return Err(Error::GridMismatch(format!(
            "{}x{} mask does not tile a {}x{} grid with factor {factor}",
            mask.height, mask.width, grid.h, grid.w
        )));
    }
    let mut bits = Vec::with_capacity(grid.cells());
    for gy in 0..grid.h {
        let ys = gy * factor..((gy + 1) * factor).min(mask.height);
        for gx in 0..grid.w {
            let xs = gx * factor..((gx + 1) * factor).min(mask.width);
            let total = ys.len() * xs.len();
            let set = ys
                .clone()
                .flat_map(|y| xs.clone().map(move |x| (y, x)))
                .filter(|&(y, x)| mask.get(y, x))
                .count();
            bits.push(2 * set >= total);
        }
    }
    let out = DownsampledMask { grid, bits };
    if role == MaskRole::Style && out.is_empty() && !mask.is_empty() {
        return Err(Error::MaskTooSmall { pair: None });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_mask_stays_full() {
        let m = Mask::full(9, 7);
        let d = downsample_mask(&m, GridShape::new(3, 2), 4, MaskRole::Style).unwrap();
        assert!(d.bits().iter().all(|&b| b));
    }

    #[test]
    fn single_block_maps_to_single_cell() {
        let m = Mask::from_fn(4, 4, |y, x| (2..4).contains(&y) && x < 2);
        let d = downsample_mask(&m, GridShape::new(2, 2), 2, MaskRole::Content).unwrap();
        assert_eq!(d.bits(), &[false, false, true, false]);
    }

    #[test]
    fn thin_style_row_vanishes() {
        let m = Mask::from_fn(8, 8, |y, _| y == 3);
        let err = downsample_mask(&m, GridShape::new(1, 1), 8, MaskRole::Style).unwrap_err();
        assert!(matches!(err, Error::MaskTooSmall { pair: None }));
        let d = downsample_mask(&m, GridShape::new(1, 1), 8, MaskRole::Content).unwrap();
        assert!(d.is_empty());
    }

    #[test]
    fn half_coverage_counts_as_set() {
        let m = Mask::from_fn(2, 2, |y, _| y == 0);
        let d = downsample_mask(&m, GridShape::new(1, 1), 2, MaskRole::Style).unwrap();
        assert!(d.contains(0));
    }

    #[test]
    fn border_blocks_are_clipped() {
        // 5 wide with factor 2: last column block is 1 pixel wide
        let m = Mask::from_fn(2, 5, |_, x| x == 4);
        let d = downsample_mask(&m, GridShape::new(1, 3), 2, MaskRole::Content).unwrap();
        assert_eq!(d.bits(), &[false, false, true]);
    }

    #[test]
    fn grid_mismatch() {
        let m = Mask::full(8, 8);
        let err = downsample_mask(&m, GridShape::new(3, 2), 4, MaskRole::Content).unwrap_err();
        assert_eq!(err.name(), "GridMismatch");
    }

    #[test]
    fn png_round_trip() {
        let m = Mask::from_fn(5, 6, |y, x| (x + y) % 3 == 0);
        let bytes = m.to_png_bytes();
        assert_eq!(Mask::from_png_bytes(&bytes).unwrap(), m);
    }

    #[test]
    fn pair_set_keeps_order() {
        let mut set = MaskPairSet::new();
        for i in 0..3 {
            assert_eq!(set.push(MaskPair::new(Mask::empty(1, i + 1), Mask::full(1, 1))), i);
        }
        set.remove(0).unwrap();
        assert_eq!(set.as_slice()[0].content.width(), 2);
        assert!(set.remove(5).is_none());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn downsample_is_monotone(
                bits in proptest::collection::vec(any::<bool>(), 12 * 10),
                extra in proptest::collection::vec(any::<bool>(), 12 * 10),
                factor in 1usize..5,
            ) {
                let small = Mask::new(12, 10, bits.clone()).unwrap();
                let big = Mask::new(12, 10, bits.iter().zip(&extra).map(|(a, b)| *a || *b).collect()).unwrap();
                let grid = GridShape::new(12usize.div_ceil(factor), 10usize.div_ceil(factor));
                let a = downsample_mask(&small, grid, factor, MaskRole::Content).unwrap();
                let b = downsample_mask(&big, grid, factor, MaskRole::Content).unwrap();
                for (x, y) in a.bits().iter().zip(b.bits()) {
                    prop_assert!(!*x || *y);
                }
            }
        }
    }
}
