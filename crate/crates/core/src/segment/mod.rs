//! Prompt-driven segmentation: labeled points, an optional box and an
//! optional contour in, a binary mask out.
//!
//! The local algorithm is seeded region growing. Foreground and background
//! seeds each grow 4-connected regions; a neighbour joins a region when its
//! RGB distance to the region's running mean is at most `tau`. The mask is
//! the foreground set minus the background set, clipped to the box.
//! A contour, when given, replaces growing with an even-odd polygon fill.

mod polygon;
mod remote;

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::Mask;

pub use polygon::fill_polygon;
pub use remote::{RemoteSegmenter, DEFAULT_TIMEOUT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum PointLabel {
    Background,
    Foreground,
}

impl TryFrom<u8> for PointLabel {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, Self::Error> {
        match v {
            0 => Ok(PointLabel::Background),
            1 => Ok(PointLabel::Foreground),
            other => Err(format!("point label must be 0 or 1, got {other}")),
        }
    }
}

impl From<PointLabel> for u8 {
    fn from(l: PointLabel) -> u8 {
        match l {
            PointLabel::Background => 0,
            PointLabel::Foreground => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptPoint {
    pub x: usize,
    pub y: usize,
    pub label: PointLabel,
}

impl PromptPoint {
    pub fn foreground(x: usize, y: usize) -> Self {
        Self { x, y, label: PointLabel::Foreground }
    }

    pub fn background(x: usize, y: usize) -> Self {
        Self { x, y, label: PointLabel::Background }
    }
}

/// Inclusive pixel box: both corners belong to it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PromptBox {
    pub x_lt: usize,
    pub y_lt: usize,
    pub x_rb: usize,
    pub y_rb: usize,
}

impl PromptBox {
    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x_lt..=self.x_rb).contains(&x) && (self.y_lt..=self.y_rb).contains(&y)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    #[serde(default)]
    pub points: Vec<PromptPoint>,
    #[serde(default, rename = "box")]
    pub bbox: Option<PromptBox>,
    /// Closed polygon in continuous pixel coordinates.
    #[serde(default)]
    pub contour: Option<Vec<[f64; 2]>>,
}

impl PromptSet {
    pub fn has_foreground(&self) -> bool {
        self.points.iter().any(|p| p.label == PointLabel::Foreground)
    }

    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        for p in &self.points {
            if p.x >= width || p.y >= height {
                return Err(Error::OutOfBounds(format!(
                    "point ({}, {}) outside {width}x{height} image",
                    p.x, p.y
                )));
            }
        }
        if let Some(b) = &self.bbox {
            if b.x_lt > b.x_rb || b.y_lt > b.y_rb {
                return Err(Error::InvalidPrompt(format!(
                    "box corners ({}, {}) / ({}, {}) are not ordered",
                    b.x_lt, b.y_lt, b.x_rb, b.y_rb
                )));
            }
            if b.x_rb >= width || b.y_rb >= height {
                return Err(Error::OutOfBounds(format!(
                    "box corner ({}, {}) outside {width}x{height} image",
                    b.x_rb, b.y_rb
                )));
            }
        }
        if let Some(contour) = &self.contour {
            if contour.len() < 3 {
                return Err(Error::InvalidPrompt(format!(
                    "contour needs at least 3 vertices, got {}",
                    contour.len()
                )));
            }
            for v in contour {
                let inside = v[0].is_finite()
                    && v[1].is_finite()
                    && (0.0..=width as f64).contains(&v[0])
                    && (0.0..=height as f64).contains(&v[1]);
                if !inside {
                    return Err(Error::OutOfBounds(format!(
                        "contour vertex ({}, {}) outside {width}x{height} image",
                        v[0], v[1]
                    )));
                }
            }
        }
        if !self.has_foreground() && self.contour.is_none() {
            return Err(Error::NoForegroundEvidence);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmenterConfig {
    /// Admission threshold on RGB distance to the region mean.
    pub tau: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self { tau: 0.1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "warning")]
pub enum SegmentWarning {
    /// A foreground seed was removed by background growth.
    SeedConflict { x: usize, y: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub mask: Mask,
    pub warnings: Vec<SegmentWarning>,
}

pub fn segment(image: &Image, prompts: &PromptSet, cfg: &SegmenterConfig) -> Result<Segmentation> {
    let (h, w) = (image.height(), image.width());
    prompts.validate(h, w)?;

    let mut warnings = Vec::new();
    let mut mask = if let Some(contour) = &prompts.contour {
        fill_polygon(contour, h, w)
    } else {
        let seeds = |label| {
            prompts
                .points
                .iter()
                .filter(move |p| p.label == label)
                .map(|p| (p.x, p.y))
        };
        let fg = grow_regions(image, seeds(PointLabel::Foreground), cfg.tau);
        let bg = grow_regions(image, seeds(PointLabel::Background), cfg.tau);
        for (x, y) in seeds(PointLabel::Foreground) {
            if bg[y * w + x] {
                warnings.push(SegmentWarning::SeedConflict { x, y });
            }
        }
        let bits = fg.iter().zip(&bg).map(|(&f, &b)| f && !b).collect();
        Mask::new(h, w, bits)?
    };
    if let Some(b) = &prompts.bbox {
        for y in 0..h {
            for x in 0..w {
                if !b.contains(x, y) {
                    mask.set(y, x, false);
                }
            }
        }
    }
    Ok(Segmentation { mask, warnings })
}

/// Recomputes the segmentation with one more point appended.
pub fn refine(image: &Image, previous: &PromptSet, added: PromptPoint, cfg: &SegmenterConfig) -> Result<Segmentation> {
    let mut prompts = previous.clone();
    prompts.points.push(added);
    segment(image, &prompts, cfg)
}

/// Grows one region per seed, in seed order. A seed already covered by an
/// earlier region adds nothing, and regions never claim each other's pixels.
fn grow_regions(image: &Image, seeds: impl Iterator<Item = (usize, usize)>, tau: f64) -> Vec<bool> {
    let (h, w) = (image.height(), image.width());
    let data = image.as_slice();
    let color = |i: usize| [data[3 * i] as f64, data[3 * i + 1] as f64, data[3 * i + 2] as f64];
    let mut reached = vec![false; h * w];
    let mut queue = VecDeque::new();
    for (sx, sy) in seeds {
        let start = sy * w + sx;
        if reached[start] {
            continue;
        }
        reached[start] = true;
        let mut sum = color(start);
        let mut count = 1.0;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            let (y, x) = (i / w, i % w);
            let neighbours = [
                (y > 0).then(|| i - w),
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
                (y + 1 < h).then(|| i + w),
            ];
            for n in neighbours.into_iter().flatten() {
                if reached[n] {
                    continue;
                }
                let c = color(n);
                let dist2: f64 = (0..3).map(|k| (c[k] - sum[k] / count).powi(2)).sum();
                if dist2.sqrt() <= tau {
                    reached[n] = true;
                    for k in 0..3 {
                        sum[k] += c[k];
                    }
                    count += 1.0;
                    queue.push_back(n);
                }
            }
        }
    }
    reached
}
