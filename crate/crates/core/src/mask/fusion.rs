use crate::error::{Error, Result};
use crate::tensor::AttentionMap;

use super::DownsampledMask;

/// Edits pre-softmax scores so each paired content cell can only attend to
/// its paired style cells.
///
/// Pairs apply in order. For pair `i`, every row selected by its content mask
/// is first restored to the input scores and then has the columns outside
/// its style mask set to `-inf`. A later pair therefore replaces, rather
/// than intersects with, an earlier pair's control over a shared row.
pub fn fuse_attention(scores: &AttentionMap, pairs: &[(DownsampledMask, DownsampledMask)]) -> Result<AttentionMap> {
    let content_grid = scores.content_grid();
    let style_grid = scores.style_grid();
    for (i, (content, style)) in pairs.iter().enumerate() {
        if content.grid() != content_grid {
            return Err(Error::GridMismatch(format!(
                "content mask of pair {i} is {}x{}, attention rows are {}x{}",
                content.grid().h,
                content.grid().w,
                content_grid.h,
                content_grid.w
            )));
        }
        if style.grid() != style_grid {
            return Err(Error::GridMismatch(format!(
                "style mask of pair {i} is {}x{}, attention columns are {}x{}",
                style.grid().h,
                style.grid().w,
                style_grid.h,
                style_grid.w
            )));
        }
        if style.is_empty() {
            return Err(Error::EmptyStyleMask { pair: Some(i) });
        }
    }

    let mut fused = scores.clone();
    for (i, (content, style)) in pairs.iter().enumerate() {
        if content.is_empty() {
            log::warn!("content mask of pair {i} selects no feature cell; pair has no effect");
            continue;
        }
        for row in content.cells() {
            let out = fused.matrix_mut().row_mut(row);
            out.copy_from_slice(scores.row(row));
            for (col, v) in out.iter_mut().enumerate() {
                if !style.contains(col) {
                    *v = f32::NEG_INFINITY;
                }
            }
        }
    }
    Ok(fused)
}

/// Fails with the first row whose scores are all `-inf`.
pub fn validate_fusion(scores: &AttentionMap) -> Result<()> {
    for row in 0..scores.rows() {
        if scores.row(row).iter().all(|&v| v == f32::NEG_INFINITY) {
            return Err(Error::DegenerateRow { row });
        }
    }
    Ok(())
}
