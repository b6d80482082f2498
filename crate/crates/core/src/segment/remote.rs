//! Client for an external promptable-segmentation service.
//!
//! `POST {endpoint}/segment` with
//! `{"image": <base64 PNG>, "points": [{"x","y","label"}], "box": {...} | null}`;
//! the reply is the RLE mask JSON form.

use std::time::Duration;

use base64::Engine;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::{Mask, Rle};

use super::{PromptBox, PromptPoint, PromptSet};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Serialize)]
struct SegmentRequest<'a> {
    image: String,
    points: &'a [PromptPoint],
    #[serde(rename = "box")]
    bbox: Option<&'a PromptBox>,
}

/// Handle on one remote endpoint. Clone it to share across threads.
#[derive(Debug, Clone)]
pub struct RemoteSegmenter {
    endpoint: String,
    timeout: Duration,
}

impl RemoteSegmenter {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_owned(),
            timeout: DEFAULT_TIMEOUT,
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    /// Sends the image and point/box prompts, returns the decoded mask.
    ///
    /// Blocking; call it off any async executor thread.
    pub fn remote_segment(&self, image: &Image, prompts: &PromptSet) -> Result<Mask> {
        let body = SegmentRequest {
            image: base64::engine::general_purpose::STANDARD.encode(image.to_png_bytes()),
            points: &prompts.points,
            bbox: prompts.bbox.as_ref(),
        };
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| Error::Transport(e.to_string()))?;
        let response = client
            .post(format!("{}/segment", self.endpoint))
            .json(&body)
            .send()
            .map_err(classify)?;
        let status = response.status();
        if !status.is_success() {
            return Err(Error::Protocol(format!("server answered {status}")));
        }
        let bytes = response.bytes().map_err(classify)?;
        let rle: Rle = serde_json::from_slice(&bytes).map_err(|e| Error::Protocol(format!("bad mask body: {e}")))?;
        if (rle.h, rle.w) != (image.height(), image.width()) {
            return Err(Error::Protocol(format!(
                "mask is {}x{}, image is {}x{}",
                rle.h,
                rle.w,
                image.height(),
                image.width()
            )));
        }
        rle.decode().map_err(|e| Error::Protocol(e.to_string()))
    }
}

fn classify(e: reqwest::Error) -> Error {
    if e.is_timeout() {
        Error::Timeout
    } else {
        Error::Transport(e.to_string())
    }
}
