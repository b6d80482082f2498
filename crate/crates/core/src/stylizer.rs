//! Attention-weighted statistics transfer and the end-to-end `stylize` path.

use crate::codec::{decode, encode, ModelParams};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::{downsample_mask, fuse_attention, validate_fusion, DownsampledMask, MaskPairSet, MaskRole};
use crate::tensor::{
    conv1x1, instance_norm, matmul, matmul_transposed, softmax_rows, AttentionMap, FeatureMap, GridShape, Matrix,
    DEFAULT_EPS,
};

/// Per-position attention-weighted mean and standard deviation of the value
/// features.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionStats {
    pub mean: Matrix,
    pub std: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Qkv {
    pub query: FeatureMap,
    pub key: FeatureMap,
    pub value: FeatureMap,
}

/// `Q = g_q(IN(content))`, `K = g_k(IN(style))`, `V = g_v(style)`.
///
/// The value projection reads the un-normalized style features.
pub fn project_qkv(content: &FeatureMap, style: &FeatureMap, params: &ModelParams) -> Result<Qkv> {
    Ok(Qkv {
        query: conv1x1(&instance_norm(content, DEFAULT_EPS), &params.query)?,
        key: conv1x1(&instance_norm(style, DEFAULT_EPS), &params.key)?,
        value: conv1x1(style, &params.value)?,
    })
}

/// Unscaled dot-product scores `Q Kᵀ`.
pub fn raw_attention(query: &FeatureMap, key: &FeatureMap) -> Result<AttentionMap> {
    if query.channels() != key.channels() {
        return Err(Error::ChannelMismatch {
            expected: query.channels(),
            got: key.channels(),
        });
    }
    let scores = matmul_transposed(query.matrix(), key.matrix())?;
    AttentionMap::new(
        GridShape::new(query.spatial_h(), query.spatial_w()),
        GridShape::new(key.spatial_h(), key.spatial_w()),
        scores,
    )
}

/// `M = A V`, `S = sqrt(max(0, A (V∘V) - M∘M))`.
pub fn adaattn_statistics(attention: &AttentionMap, value: &FeatureMap) -> Result<AttentionStats> {
    if attention.cols() != value.positions() {
        return Err(Error::DimensionMismatch(format!(
            "attention has {} style columns, value has {} positions",
            attention.cols(),
            value.positions()
        )));
    }
    let v = value.matrix();
    let mean = matmul(attention.matrix(), v)?;
    let second = matmul(attention.matrix(), &v.map(|x| x * x))?;
    let std = Matrix::from_fn(mean.rows(), mean.cols(), |r, c| {
        let m = mean.get(r, c);
        // rounding can leave a tiny negative variance
        (second.get(r, c) - m * m).max(0.0).sqrt()
    });
    Ok(AttentionStats { mean, std })
}

/// `S · IN(content) + M`.
pub fn stylize_feature(content: &FeatureMap, stats: &AttentionStats) -> Result<FeatureMap> {
    let shape = (content.positions(), content.channels());
    for (name, m) in [("mean", &stats.mean), ("std", &stats.std)] {
        if (m.rows(), m.cols()) != shape {
            return Err(Error::DimensionMismatch(format!(
                "{name} is {}x{}, content features are {}x{}",
                m.rows(),
                m.cols(),
                shape.0,
                shape.1
            )));
        }
    }
    let normalized = instance_norm(content, DEFAULT_EPS);
    let n = normalized.matrix();
    let out = Matrix::from_fn(shape.0, shape.1, |r, c| {
        stats.std.get(r, c) * n.get(r, c) + stats.mean.get(r, c)
    });
    FeatureMap::new(content.spatial_h(), content.spatial_w(), out)
}

/// Reduces every pair to feature resolution, tagging mask errors with the
/// pair index.
pub fn downsample_pairs(
    pairs: &MaskPairSet,
    content_grid: GridShape,
    style_grid: GridShape,
    factor: usize,
) -> Result<Vec<(DownsampledMask, DownsampledMask)>> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, pair)| {
            let c = downsample_mask(&pair.content, content_grid, factor, MaskRole::Content).map_err(|e| e.with_pair(i))?;
            let s = downsample_mask(&pair.style, style_grid, factor, MaskRole::Style).map_err(|e| e.with_pair(i))?;
            Ok((c, s))
        })
        .collect()
}

/// Full pipeline: encode, project, score, fuse the mask pairs, normalize,
/// align statistics, decode.
///
/// With an empty pair set the fusion step is skipped entirely.
pub fn stylize(content: &Image, style: &Image, pairs: &MaskPairSet, params: &ModelParams) -> Result<Image> {
    for (i, pair) in pairs.iter().enumerate() {
        if (pair.content.height(), pair.content.width()) != (content.height(), content.width()) {
            return Err(Error::DimensionMismatch(format!(
                "content mask of pair {i} is {}x{}, content image is {}x{}",
                pair.content.height(),
                pair.content.width(),
                content.height(),
                content.width()
            )));
        }
        if (pair.style.height(), pair.style.width()) != (style.height(), style.width()) {
            return Err(Error::DimensionMismatch(format!(
                "style mask of pair {i} is {}x{}, style image is {}x{}",
                pair.style.height(),
                pair.style.width(),
                style.height(),
                style.width()
            )));
        }
    }

    let fc = encode(content, &params.encoder)?;
    let fs = encode(style, &params.encoder)?;
    let qkv = project_qkv(&fc, &fs, params)?;
    let mut scores = raw_attention(&qkv.query, &qkv.key)?;
    if !pairs.is_empty() {
        let reduced = downsample_pairs(pairs, scores.content_grid(), scores.style_grid(), params.factor())?;
        scores = fuse_attention(&scores, &reduced)?;
        validate_fusion(&scores)?;
    }
    let attention = softmax_rows(&scores)?;
    let stats = adaattn_statistics(&attention, &qkv.value)?;
    let stylized = stylize_feature(&fc, &stats)?;
    decode(&stylized, &params.decoder, content.height(), content.width())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mask::{Mask, MaskPair};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_features(rng: &mut ChaCha8Rng, h: usize, w: usize, c: usize) -> FeatureMap {
        FeatureMap::from_vec(h, w, c, (0..h * w * c).map(|_| rng.gen_range(-2.0..2.0)).collect()).unwrap()
    }

    fn random_stochastic(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let mut m = Matrix::from_fn(rows, cols, |_, _| rng.gen_range(0.0..1.0f32));
        for r in 0..rows {
            let s: f32 = m.row(r).iter().sum();
            m.row_mut(r).iter_mut().for_each(|v| *v /= s);
        }
        m
    }

    /// Independent f64 re-derivation of `g(IN(x))`.
    fn oracle_projection(f: &FeatureMap, p: &crate::tensor::Conv1x1Params, normalize: bool) -> Vec<f64> {
        let (n, c) = (f.positions(), f.channels());
        let mut x: Vec<f64> = f.matrix().as_slice().iter().map(|&v| v as f64).collect();
        if normalize {
            for ch in 0..c {
                let mean = (0..n).map(|p| x[p * c + ch]).sum::<f64>() / n as f64;
                let var = (0..n).map(|p| (x[p * c + ch] - mean).powi(2)).sum::<f64>() / n as f64;
                for p in 0..n {
                    x[p * c + ch] = (x[p * c + ch] - mean) / (var + 1e-5).sqrt();
                }
            }
        }
        let o = p.out_channels();
        let mut out = vec![0.0; n * o];
        for pos in 0..n {
            for j in 0..o {
                out[pos * o + j] = p.bias[j] as f64
                    + (0..c).map(|i| p.weight.get(j, i) as f64 * x[pos * c + i]).sum::<f64>();
            }
        }
        out
    }

    #[test]
    fn qkv_identity_projections() {
        let model = ModelParams::identity();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let fc = FeatureMap::from_vec(2, 2, 3, vec![0.4; 12]).unwrap();
        let fs = random_features(&mut rng, 3, 2, 3);
        let qkv = project_qkv(&fc, &fs, &model).unwrap();
        assert!(qkv.query.matrix().as_slice().iter().all(|&v| v == 0.0));
        assert_eq!(qkv.value, fs);
    }

    #[test]
    fn qkv_matches_composition_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = ModelParams::toy(9);
        let fc = random_features(&mut rng, 3, 3, 16);
        let fs = random_features(&mut rng, 2, 4, 16);
        let qkv = project_qkv(&fc, &fs, &model).unwrap();
        for (got, want) in [
            (&qkv.query, oracle_projection(&fc, &model.query, true)),
            (&qkv.key, oracle_projection(&fs, &model.key, true)),
            (&qkv.value, oracle_projection(&fs, &model.value, false)),
        ] {
            for (a, b) in got.matrix().as_slice().iter().zip(&want) {
                assert!((*a as f64 - b).abs() < 1e-6 * b.abs().max(1.0), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn attention_of_orthonormal_rows_is_identity() {
        let q = FeatureMap::new(3, 1, Matrix::identity(3)).unwrap();
        let a = raw_attention(&q, &q).unwrap();
        assert_eq!(a.matrix(), &Matrix::identity(3));
    }

    #[test]
    fn zero_query_gives_uniform_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let q = FeatureMap::from_vec(2, 2, 3, vec![0.0; 12]).unwrap();
        let k = random_features(&mut rng, 5, 1, 3);
        let a = softmax_rows(&raw_attention(&q, &k).unwrap()).unwrap();
        assert!(a.matrix().as_slice().iter().all(|&v| (v - 0.2).abs() < 1e-7));
    }

    #[test]
    fn raw_attention_matches_matmul_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let q = random_features(&mut rng, 2, 2, 5);
        let k = random_features(&mut rng, 3, 2, 5);
        let a = raw_attention(&q, &k).unwrap();
        assert_eq!((a.rows(), a.cols()), (4, 6));
        for p in 0..4 {
            for s in 0..6 {
                let want: f64 = (0..5).map(|c| q.get(p, c) as f64 * k.get(s, c) as f64).sum();
                assert!((a.get(p, s) as f64 - want).abs() < 1e-6);
            }
        }
        let bad = random_features(&mut rng, 1, 1, 4);
        assert!(matches!(raw_attention(&q, &bad), Err(Error::ChannelMismatch { .. })));
    }

    #[test]
    fn one_hot_attention_has_zero_std() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = random_features(&mut rng, 3, 2, 4);
        let targets = [5usize, 0, 3, 3];
        let a = Matrix::from_fn(4, 6, |r, c| if targets[r] == c { 1.0 } else { 0.0 });
        let stats = adaattn_statistics(&AttentionMap::from_matrix(a), &v).unwrap();
        for (r, &t) in targets.iter().enumerate() {
            assert_eq!(stats.mean.row(r), v.matrix().row(t));
            assert!(stats.std.row(r).iter().all(|&s| s == 0.0));
        }
    }

    #[test]
    fn constant_value_gives_constant_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = FeatureMap::from_vec(2, 2, 2, vec![0.75; 8]).unwrap();
        let a = random_stochastic(&mut rng, 3, 4);
        let stats = adaattn_statistics(&AttentionMap::from_matrix(a), &v).unwrap();
        assert!(stats.mean.as_slice().iter().all(|&m| (m - 0.75).abs() < 1e-6));
        assert!(stats.std.as_slice().iter().all(|&s| s < 1e-3));
    }

    #[test]
    fn statistics_match_weighted_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let v = random_features(&mut rng, 8, 4, 3);
        let a = random_stochastic(&mut rng, 5, 32);
        let stats = adaattn_statistics(&AttentionMap::from_matrix(a.clone()), &v).unwrap();
        for p in 0..5 {
            for c in 0..3 {
                let mean: f64 = (0..32).map(|q| a.get(p, q) as f64 * v.get(q, c) as f64).sum();
                let var: f64 = (0..32)
                    .map(|q| a.get(p, q) as f64 * (v.get(q, c) as f64 - mean).powi(2))
                    .sum();
                assert!((stats.mean.get(p, c) as f64 - mean).abs() < 1e-5);
                assert!((stats.std.get(p, c) as f64 - var.sqrt()).abs() < 1e-5);
            }
        }
        let wrong = random_features(&mut rng, 2, 2, 3);
        assert!(matches!(
            adaattn_statistics(&AttentionMap::from_matrix(a), &wrong),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn stylize_feature_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let fc = random_features(&mut rng, 2, 3, 4);
        let mean = Matrix::from_fn(6, 4, |r, c| (r * 4 + c) as f32);
        let zero = AttentionStats { mean: mean.clone(), std: Matrix::zeros(6, 4) };
        assert_eq!(stylize_feature(&fc, &zero).unwrap().matrix(), &mean);

        let unit = AttentionStats { mean: Matrix::zeros(6, 4), std: Matrix::filled(6, 4, 1.0) };
        assert_eq!(stylize_feature(&fc, &unit).unwrap(), instance_norm(&fc, DEFAULT_EPS));
    }

    #[test]
    fn stylize_feature_matches_elementwise_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let fc = random_features(&mut rng, 3, 2, 2);
        let stats = AttentionStats {
            mean: Matrix::from_fn(6, 2, |_, _| rng.gen_range(-1.0..1.0)),
            std: Matrix::from_fn(6, 2, |_, _| rng.gen_range(0.0..2.0)),
        };
        let out = stylize_feature(&fc, &stats).unwrap();
        let normalized = instance_norm(&fc, DEFAULT_EPS);
        for p in 0..6 {
            for c in 0..2 {
                let want = stats.std.get(p, c) as f64 * normalized.get(p, c) as f64 + stats.mean.get(p, c) as f64;
                assert!((out.get(p, c) as f64 - want).abs() < 1e-6);
            }
        }
        let bad = AttentionStats { mean: Matrix::zeros(5, 2), std: Matrix::zeros(5, 2) };
        assert!(stylize_feature(&fc, &bad).is_err());
    }

    fn two_tone(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |_, x| if x < w / 2 { [0.9, 0.1, 0.2] } else { [0.1, 0.3, 0.8] }).unwrap()
    }

    #[test]
    fn full_pair_is_bit_identical_to_baseline() {
        let model = ModelParams::toy(1);
        let content = Image::from_fn(20, 24, |y, x| [y as f32 / 20.0, x as f32 / 24.0, 0.5]).unwrap();
        let style = two_tone(16, 16);
        let base = stylize(&content, &style, &MaskPairSet::new(), &model).unwrap();
        let pairs: MaskPairSet = vec![MaskPair::new(Mask::full(20, 24), Mask::full(16, 16))].into();
        assert_eq!(stylize(&content, &style, &pairs, &model).unwrap(), base);
    }

    #[test]
    fn mask_errors_carry_pair_index() {
        let model = ModelParams::toy(1);
        let content = two_tone(16, 16);
        let style = two_tone(16, 16);
        let tiny = Mask::from_fn(16, 16, |y, x| y == 0 && x == 0);
        let pairs: MaskPairSet = vec![
            MaskPair::new(Mask::full(16, 16), Mask::full(16, 16)),
            MaskPair::new(Mask::full(16, 16), tiny),
        ]
        .into();
        let err = stylize(&content, &style, &pairs, &model).unwrap_err();
        assert!(matches!(err, Error::MaskTooSmall { pair: Some(1) }));
    }

    #[test]
    fn mask_dims_must_match_images() {
        let model = ModelParams::identity();
        let img = two_tone(4, 4);
        let pairs: MaskPairSet = vec![MaskPair::new(Mask::full(4, 5), Mask::full(4, 4))].into();
        assert!(matches!(
            stylize(&img, &img, &pairs, &model),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn stylize_is_deterministic() {
        let model = ModelParams::toy(2);
        let content = two_tone(24, 20);
        let style = Image::from_fn(12, 28, |y, x| [(x % 5) as f32 / 5.0, (y % 3) as f32 / 3.0, 0.3]).unwrap();
        let pairs: MaskPairSet = vec![MaskPair::new(
            Mask::from_fn(24, 20, |_, x| x < 10),
            Mask::from_fn(12, 28, |_, x| x >= 14),
        )]
        .into();
        let a = stylize(&content, &style, &pairs, &model).unwrap();
        let b = stylize(&content, &style, &pairs, &model).unwrap();
        assert_eq!(a.to_png_bytes(), b.to_png_bytes());
    }
}
