//! Feature encoder, mirrored decoder and the model parameter bundle.
//!
//! Layers run on planar `C x H x W` buffers. Convolutions use stride 1 and
//! reflection padding; max pooling is 2x2/stride 2 with ceiling output size,
//! so an `H x W` input leaves the encoder at `ceil(H/d) x ceil(W/d)`.

mod weights;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::{Conv1x1Params, FeatureMap, Matrix};

pub use weights::{load_weights, read_weights, save_weights, write_weights, WEIGHTS_MAGIC, WEIGHTS_VERSION};

/// `k x k` convolution, weights laid out `[out][in][ky][kx]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl ConvLayer {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, weight: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if kernel.is_multiple_of(2) {
            return Err(Error::Shape(format!("kernel size {kernel} is not odd")));
        }
        if in_channels == 0 || out_channels == 0 {
            return Err(Error::Shape("convolution with zero channels".into()));
        }
        let expected = out_channels * in_channels * kernel * kernel;
        if weight.len() != expected {
            return Err(Error::Shape(format!(
                "conv weight declares {expected} values, has {}",
                weight.len()
            )));
        }
        if bias.len() != out_channels {
            return Err(Error::Shape(format!(
                "conv bias declares {out_channels} channels, has {}",
                bias.len()
            )));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Shape("non-finite convolution parameter".into()));
        }
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            weight,
            bias,
        })
    }

    /// He-uniform initialization from `rng`.
    pub fn random(rng: &mut impl Rng, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        let fan_in = (in_channels * kernel * kernel) as f32;
        let bound = (6.0 / fan_in).sqrt();
        let weight = (0..out_channels * in_channels * kernel * kernel)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let bias = (0..out_channels).map(|_| rng.gen_range(-0.05..0.05)).collect();
        Self::new(in_channels, out_channels, kernel, weight, bias).expect("generated shapes are consistent")
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn weight(&self) -> &[f32] {
        &self.weight
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn weight_at(&self, out: usize, inp: usize, ky: usize, kx: usize) -> f32 {
        let k = self.kernel;
        self.weight[((out * self.in_channels + inp) * k + ky) * k + kx]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Conv(ConvLayer),
    Relu,
    /// 2x2 max pool, stride 2 (encoder only).
    MaxPool,
    /// Nearest-neighbour 2x upsampling (decoder only).
    Upsample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    layers: Vec<Layer>,
    factor: usize,
    out_channels: usize,
}

impl EncoderParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let mut channels = 3;
        let mut factor = 1;
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                Layer::Conv(c) => {
                    if c.in_channels != channels {
                        return Err(Error::Shape(format!(
                            "encoder layer {i} expects {} channels, receives {channels}",
                            c.in_channels
                        )));
                    }
                    channels = c.out_channels;
                }
                Layer::MaxPool => factor *= 2,
                Layer::Upsample => {
                    return Err(Error::Shape(format!("encoder layer {i} is an upsample")));
                }
                Layer::Relu => {}
            }
        }
        Ok(Self {
            layers,
            factor,
            out_channels: channels,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Total downsampling factor `d`.
    pub fn factor(&self) -> usize {
        self.factor
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderParams {
    layers: Vec<Layer>,
    in_channels: usize,
    factor: usize,
}

impl DecoderParams {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        let in_channels = layers
            .iter()
            .find_map(|l| match l {
                Layer::Conv(c) => Some(c.in_channels),
                _ => None,
            })
            .unwrap_or(3);
        let mut channels = in_channels;
        let mut factor = 1;
        for (i, layer) in layers.iter().enumerate() {
            match layer {
                Layer::Conv(c) => {
                    if c.in_channels != channels {
                        return Err(Error::Shape(format!(
                            "decoder layer {i} expects {} channels, receives {channels}",
                            c.in_channels
                        )));
                    }
                    channels = c.out_channels;
                }
                Layer::Upsample => factor *= 2,
                Layer::MaxPool => {
                    return Err(Error::Shape(format!("decoder layer {i} is a max pool")));
                }
                Layer::Relu => {}
            }
        }
        if channels != 3 {
            return Err(Error::Shape(format!("decoder produces {channels} channels, not 3")));
        }
        Ok(Self {
            layers,
            in_channels,
            factor,
        })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn factor(&self) -> usize {
        self.factor
    }
}

/// Encoder, decoder and the query/key/value projections as one unit.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub encoder: EncoderParams,
    pub decoder: DecoderParams,
    pub query: Conv1x1Params,
    pub key: Conv1x1Params,
    pub value: Conv1x1Params,
    /// Seed the weights were generated from, when they are synthetic.
    pub seed: Option<u64>,
}

impl ModelParams {
    pub fn new(
        encoder: EncoderParams,
        decoder: DecoderParams,
        query: Conv1x1Params,
        key: Conv1x1Params,
        value: Conv1x1Params,
        seed: Option<u64>,
    ) -> Result<Self> {
        let f = encoder.out_channels();
        for (name, p) in [("query", &query), ("key", &key), ("value", &value)] {
            if p.in_channels() != f {
                return Err(Error::Shape(format!(
                    "{name} projection takes {} channels, encoder yields {f}",
                    p.in_channels()
                )));
            }
        }
        if query.out_channels() != key.out_channels() {
            return Err(Error::Shape(format!(
                "query projects to {} channels, key to {}",
                query.out_channels(),
                key.out_channels()
            )));
        }
        if value.out_channels() != f {
            return Err(Error::Shape(format!(
                "value projects to {} channels, content features have {f}",
                value.out_channels()
            )));
        }
        if decoder.in_channels() != f {
            return Err(Error::Shape(format!(
                "decoder takes {} channels, encoder yields {f}",
                decoder.in_channels()
            )));
        }
        if decoder.factor() != encoder.factor() {
            return Err(Error::Shape(format!(
                "decoder upsamples by {}, encoder downsamples by {}",
                decoder.factor(),
                encoder.factor()
            )));
        }
        for p in [&query, &key, &value] {
            if p.weight.as_slice().iter().chain(&p.bias).any(|v| !v.is_finite()) {
                return Err(Error::Shape("non-finite projection parameter".into()));
            }
        }
        Ok(Self {
            encoder,
            decoder,
            query,
            key,
            value,
            seed,
        })
    }

    /// Pass-through model: no encoder/decoder layers (`d = 1`, `f = 3`) and
    /// identity projections.
    pub fn identity() -> Self {
        Self::new(
            EncoderParams::new(vec![]).unwrap(),
            DecoderParams::new(vec![]).unwrap(),
            Conv1x1Params::identity(3),
            Conv1x1Params::identity(3),
            Conv1x1Params::identity(3),
            None,
        )
        .expect("identity model is consistent")
    }

    /// Small seeded model with two halving stages (`d = 4`, `f = 16`).
    pub fn toy(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let encoder = vec![
            Layer::Conv(ConvLayer::random(&mut rng, 3, 8, 3)),
            Layer::Relu,
            Layer::MaxPool,
            Layer::Conv(ConvLayer::random(&mut rng, 8, 16, 3)),
            Layer::Relu,
            Layer::MaxPool,
        ];
        let decoder = vec![
            Layer::Conv(ConvLayer::random(&mut rng, 16, 8, 3)),
            Layer::Relu,
            Layer::Upsample,
            Layer::Conv(ConvLayer::random(&mut rng, 8, 8, 3)),
            Layer::Relu,
            Layer::Upsample,
            Layer::Conv(output_layer(&mut rng, 8)),
        ];
        Self::seeded(encoder, decoder, 16, 16, &mut rng, seed)
    }

    /// VGG-19 topology up to `relu4_1` (`d = 8`, `f = 512`) and its mirrored
    /// decoder, with seeded synthetic weights. Real checkpoints are
    /// converted offline into the weight file format.
    pub fn vgg19_relu4_1(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut conv = |i, o| Layer::Conv(ConvLayer::random(&mut rng, i, o, 3));
        let encoder = vec![
            conv(3, 64), Layer::Relu,
            conv(64, 64), Layer::Relu,
            Layer::MaxPool,
            conv(64, 128), Layer::Relu,
            conv(128, 128), Layer::Relu,
            Layer::MaxPool,
            conv(128, 256), Layer::Relu,
            conv(256, 256), Layer::Relu,
            conv(256, 256), Layer::Relu,
            conv(256, 256), Layer::Relu,
            Layer::MaxPool,
            conv(256, 512), Layer::Relu,
        ];
        let mut decoder = vec![
            conv(512, 256), Layer::Relu,
            Layer::Upsample,
            conv(256, 256), Layer::Relu,
            conv(256, 256), Layer::Relu,
            conv(256, 256), Layer::Relu,
            conv(256, 128), Layer::Relu,
            Layer::Upsample,
            conv(128, 128), Layer::Relu,
            conv(128, 64), Layer::Relu,
            Layer::Upsample,
            conv(64, 64), Layer::Relu,
        ];
        decoder.push(Layer::Conv(output_layer(&mut rng, 64)));
        Self::seeded(encoder, decoder, 512, 512, &mut rng, seed)
    }

    fn seeded(
        encoder: Vec<Layer>,
        decoder: Vec<Layer>,
        f: usize,
        qk: usize,
        rng: &mut ChaCha8Rng,
        seed: u64,
    ) -> Self {
        let mut projection = |out: usize, near_identity: bool| {
            let bound = (3.0 / f as f32).sqrt();
            let weight = Matrix::from_fn(out, f, |r, c| {
                let noise = rng.gen_range(-bound..bound);
                if near_identity {
                    (if r == c { 1.0 } else { 0.0 }) + 0.1 * noise
                } else {
                    noise
                }
            });
            Conv1x1Params::new(weight, vec![0.0; out]).unwrap()
        };
        let query = projection(qk, false);
        let key = projection(qk, false);
        let value = projection(f, true);
        Self::new(
            EncoderParams::new(encoder).unwrap(),
            DecoderParams::new(decoder).unwrap(),
            query,
            key,
            value,
            Some(seed),
        )
        .expect("generated model is consistent")
    }

    /// Encoder downsampling factor `d`.
    pub fn factor(&self) -> usize {
        self.encoder.factor()
    }

    /// Feature channel count `f`.
    pub fn channels(&self) -> usize {
        self.encoder.out_channels()
    }
}

/// Final decoder layer: small weights and a mid-grey bias so untrained
/// outputs land inside `[0, 1]`.
fn output_layer(rng: &mut impl Rng, in_channels: usize) -> ConvLayer {
    let n = 3 * in_channels * 9;
    let bound = 0.5 / (in_channels as f32 * 9.0).sqrt();
    let weight = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    ConvLayer::new(in_channels, 3, 3, weight, vec![0.5; 3]).unwrap()
}

/// Planar `channels x h x w` activation buffer.
#[derive(Debug, Clone)]
struct Planes {
    channels: usize,
    h: usize,
    w: usize,
    data: Vec<f32>,
}

impl Planes {
    fn plane(&self, c: usize) -> &[f32] {
        &self.data[c * self.h * self.w..(c + 1) * self.h * self.w]
    }
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let i = i.rem_euclid(period);
    if i >= n as isize {
        (period - i) as usize
    } else {
        i as usize
    }
}

fn conv2d(x: &Planes, layer: &ConvLayer) -> Planes {
    let (h, w, k) = (x.h, x.w, layer.kernel);
    let pad = k / 2;
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    let rows: Vec<usize> = (0..ph).map(|y| reflect(y as isize - pad as isize, h)).collect();
    let cols: Vec<usize> = (0..pw).map(|x| reflect(x as isize - pad as isize, w)).collect();
    let mut padded = vec![0f32; x.channels * ph * pw];
    for c in 0..x.channels {
        let src = x.plane(c);
        let dst = &mut padded[c * ph * pw..(c + 1) * ph * pw];
        for (py, &sy) in rows.iter().enumerate() {
            for (px, &sx) in cols.iter().enumerate() {
                dst[py * pw + px] = src[sy * w + sx];
            }
        }
    }

    let mut out = vec![0f32; layer.out_channels * h * w];
    out.par_chunks_mut(h * w).enumerate().for_each(|(oc, plane)| {
        plane.fill(layer.bias[oc]);
        for ic in 0..layer.in_channels {
            let src = &padded[ic * ph * pw..(ic + 1) * ph * pw];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = layer.weight_at(oc, ic, ky, kx);
                    if wv == 0.0 {
                        continue;
                    }
                    for y in 0..h {
                        let src_row = &src[(y + ky) * pw + kx..(y + ky) * pw + kx + w];
                        for (o, &s) in plane[y * w..(y + 1) * w].iter_mut().zip(src_row) {
                            *o += wv * s;
                        }
                    }
                }
            }
        }
    });
    Planes {
        channels: layer.out_channels,
        h,
        w,
        data: out,
    }
}

fn max_pool(x: &Planes) -> Planes {
    let (oh, ow) = (x.h.div_ceil(2), x.w.div_ceil(2));
    let mut data = Vec::with_capacity(x.channels * oh * ow);
    for c in 0..x.channels {
        let src = x.plane(c);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f32::NEG_INFINITY;
                for y in 2 * oy..(2 * oy + 2).min(x.h) {
                    for xx in 2 * ox..(2 * ox + 2).min(x.w) {
                        m = m.max(src[y * x.w + xx]);
                    }
                }
                data.push(m);
            }
        }
    }
    Planes {
        channels: x.channels,
        h: oh,
        w: ow,
        data,
    }
}

fn upsample(x: &Planes) -> Planes {
    let (oh, ow) = (x.h * 2, x.w * 2);
    let mut data = Vec::with_capacity(x.channels * oh * ow);
    for c in 0..x.channels {
        let src = x.plane(c);
        for y in 0..oh {
            for xx in 0..ow {
                data.push(src[(y / 2) * x.w + xx / 2]);
            }
        }
    }
    Planes {
        channels: x.channels,
        h: oh,
        w: ow,
        data,
    }
}

fn run_layers(mut x: Planes, layers: &[Layer]) -> Planes {
    for layer in layers {
        x = match layer {
            Layer::Conv(c) => conv2d(&x, c),
            Layer::Relu => {
                x.data.iter_mut().for_each(|v| *v = v.max(0.0));
                x
            }
            Layer::MaxPool => max_pool(&x),
            Layer::Upsample => upsample(&x),
        };
    }
    x
}

/// Image to features: `ceil(H/d) x ceil(W/d)` positions by `f` channels.
pub fn encode(image: &Image, params: &EncoderParams) -> Result<FeatureMap> {
    let d = params.factor();
    let (h, w) = (image.height(), image.width());
    if h < d || w < d {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            factor: d,
        });
    }
    let src = image.as_slice();
    let mut data = vec![0f32; 3 * h * w];
    for (i, px) in src.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px[c];
        }
    }
    let out = run_layers(Planes { channels: 3, h, w, data }, params.layers());
    let n = out.h * out.w;
    let mut features = vec![0f32; n * out.channels];
    for c in 0..out.channels {
        for (p, &v) in out.plane(c).iter().enumerate() {
            features[p * out.channels + c] = v;
        }
    }
    FeatureMap::from_vec(out.h, out.w, out.channels, features)
}

/// Features back to an image of exactly `height x width`, clamped to `[0, 1]`.
///
/// The decoded raster (`h*d x w*d`) is cropped from the top-left when it
/// covers the target, otherwise resampled with nearest neighbour.
pub fn decode(features: &FeatureMap, params: &DecoderParams, height: usize, width: usize) -> Result<Image> {
    if features.channels() != params.in_channels() {
        return Err(Error::ChannelMismatch {
            expected: params.in_channels(),
            got: features.channels(),
        });
    }
    let (fh, fw, f) = (features.spatial_h(), features.spatial_w(), features.channels());
    let m = features.matrix().as_slice();
    let mut data = vec![0f32; f * fh * fw];
    for p in 0..fh * fw {
        for c in 0..f {
            data[c * fh * fw + p] = m[p * f + c];
        }
    }
    let out = run_layers(Planes { channels: f, h: fh, w: fw, data }, params.layers());
    let crop = out.h >= height && out.w >= width;
    let mut pixels = Vec::with_capacity(height * width * 3);
    for y in 0..height {
        let sy = if crop { y } else { y * out.h / height };
        for x in 0..width {
            let sx = if crop { x } else { x * out.w / width };
            for c in 0..3 {
                pixels.push(out.plane(c)[sy * out.w + sx].clamp(0.0, 1.0));
            }
        }
    }
    Image::new(height, width, pixels)
}
