use crate::error::{Error, Result};
use crate::tensor::{channel_moments, instance_norm, FeatureMap, GridShape, Matrix, DEFAULT_EPS};

use super::DownsampledMask;

/// Region-paired adaptive instance normalization.
///
/// Builds one `(mean, std)` transform per style mask plus a default computed
/// over the whole style feature. Content cells selected by a pair (the last
/// selecting pair wins) take that pair's transform; every other cell takes
/// the default.
pub fn global_masked_adain(
    content: &FeatureMap,
    style: &FeatureMap,
    pairs: &[(DownsampledMask, DownsampledMask)],
) -> Result<FeatureMap> {
    if content.channels() != style.channels() {
        return Err(Error::ChannelMismatch {
            expected: content.channels(),
            got: style.channels(),
        });
    }
    let content_grid = GridShape::new(content.spatial_h(), content.spatial_w());
    let style_grid = GridShape::new(style.spatial_h(), style.spatial_w());
    for (i, (c, s)) in pairs.iter().enumerate() {
        if c.grid() != content_grid || s.grid() != style_grid {
            return Err(Error::GridMismatch(format!("masks of pair {i} do not match the feature grids")));
        }
        if s.is_empty() {
            return Err(Error::EmptyStyleMask { pair: Some(i) });
        }
    }

    let sm = style.matrix();
    let to_transform = |moments: Vec<(f64, f64)>| -> Vec<(f64, f64)> {
        moments.into_iter().map(|(mean, var)| (mean, var.sqrt())).collect()
    };
    let default = to_transform(channel_moments(sm, 0..sm.rows()));
    let bank: Vec<Vec<(f64, f64)>> = pairs
        .iter()
        .map(|(_, s)| to_transform(channel_moments(sm, s.cells())))
        .collect();

    let mut assigned: Vec<Option<usize>> = vec![None; content.positions()];
    for (i, (c, _)) in pairs.iter().enumerate() {
        for cell in c.cells() {
            assigned[cell] = Some(i);
        }
    }

    let normalized = instance_norm(content, DEFAULT_EPS);
    let n = normalized.matrix();
    let out = Matrix::from_fn(n.rows(), n.cols(), |r, ch| {
        let transform = assigned[r].map_or(&default, |i| &bank[i]);
        let (mean, std) = transform[ch];
        (std * n.get(r, ch) as f64 + mean) as f32
    });
    FeatureMap::new(content.spatial_h(), content.spatial_w(), out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_halves_transfer_exactly() {
        // style: top row all `a`, bottom row all `b`
        let (a, b) = ([0.25f32, -1.5], [3.0f32, 0.75]);
        let style_data: Vec<f32> = (0..8).flat_map(|p| if p < 4 { a } else { b }).collect();
        let style = FeatureMap::from_vec(2, 4, 2, style_data).unwrap();
        let content = FeatureMap::from_vec(3, 3, 2, (0..18).map(|i| (i * 7 % 5) as f32).collect()).unwrap();
        let region = [0usize, 1, 4];
        let pairs = [(
            DownsampledMask::from_cells(GridShape::new(3, 3), region).unwrap(),
            DownsampledMask::from_cells(GridShape::new(2, 4), 0..4).unwrap(),
        )];
        let out = global_masked_adain(&content, &style, &pairs).unwrap();
        for p in region {
            assert_eq!(out.get(p, 0), a[0]);
            assert_eq!(out.get(p, 1), a[1]);
        }
    }

    #[test]
    fn empty_style_mask_rejected() {
        let f = FeatureMap::from_vec(2, 2, 1, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let pairs = [(
            DownsampledMask::full(GridShape::new(2, 2)),
            DownsampledMask::from_cells(GridShape::new(2, 2), []).unwrap(),
        )];
        assert!(matches!(
            global_masked_adain(&f, &f, &pairs),
            Err(Error::EmptyStyleMask { pair: Some(0) })
        ));
    }
}
