//! HTTP client for the model gateway.
//!
//! Images are uploaded once through `POST /images` and referenced by digest
//! afterwards; if the upload fails and the PNG is small enough the image is
//! sent inline as a data URL instead. Transport failures and gateway
//! overload statuses (502/503/504) are retried with exponential backoff;
//! every other error status is final.

use std::collections::HashSet;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use base64::Engine;
use serde::Serialize;
use serde_json::Value;

use super::wire::{self, op};
use super::{
    BackendError, ConceptSegmenter, Criterion, FeatureExtractor, MaskCandidate, ParsedExpression, Reasoner,
    ReasoningOptions,
};
use crate::image::Image;
use crate::mask::{io, BBox, BinaryMask, PixelPoint};
use crate::similarity::FeatureMap;

const MAX_BODY: u64 = 512 * 1024 * 1024;

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    pub timeout: Duration,
    pub retries: u32,
    /// Delay before the first retry; doubles on each further attempt.
    pub backoff: Duration,
    pub max_inflight: usize,
    /// PNGs up to this many bytes may be sent inline when upload fails.
    pub inline_limit: usize,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        RemoteConfig {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(120),
            retries: 2,
            backoff: Duration::from_millis(250),
            max_inflight: 8,
            inline_limit: 64 * 1024,
        }
    }
}

/// Counting semaphore bounding concurrent requests.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

struct SlotGuard<'a>(&'a Slots);

impl Slots {
    fn new(n: usize) -> Self {
        Slots { free: Mutex::new(n.max(1)), cv: Condvar::new() }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        SlotGuard(self)
    }
}

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

enum Failure {
    Retryable(String),
    Final(BackendError),
}

pub struct RemoteClient {
    config: RemoteConfig,
    agent: ureq::Agent,
    slots: Slots,
    uploaded: Mutex<HashSet<String>>,
    upload_unsupported: AtomicBool,
}

impl std::fmt::Debug for RemoteClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteClient").field("config", &self.config).finish()
    }
}

fn data_url(png: &[u8]) -> String {
    format!("data:image/png;base64,{}", base64::engine::general_purpose::STANDARD.encode(png))
}

fn error_body(bytes: &[u8]) -> Option<wire::ErrorBody> {
    serde_json::from_slice(bytes).ok()
}

impl RemoteClient {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        RemoteClient {
            slots: Slots::new(config.max_inflight),
            agent,
            config,
            uploaded: Mutex::new(HashSet::new()),
            upload_unsupported: AtomicBool::new(false),
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.config.base_url, path)
    }

    /// One HTTP exchange; `Ok` carries the body of a 2xx response.
    fn exchange(
        &self,
        op_name: &str,
        path: &str,
        body: Option<(&str, &[u8])>,
    ) -> Result<Vec<u8>, Failure> {
        let _slot = self.slots.acquire();
        let url = self.url(path);
        let result = match body {
            Some((content_type, bytes)) => self.agent.post(&url).header("content-type", content_type).send(bytes),
            None => self.agent.get(&url).call(),
        };
        let mut resp = result.map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        let bytes = resp
            .body_mut()
            .with_config()
            .limit(MAX_BODY)
            .read_to_vec()
            .map_err(|e| Failure::Retryable(e.to_string()))?;
        if (200..300).contains(&status) {
            return Ok(bytes);
        }
        let detail = match error_body(&bytes) {
            Some(b) => format!("HTTP {status} {}: {}", b.code, b.message),
            None => format!("HTTP {status}: {}", String::from_utf8_lossy(&bytes).chars().take(200).collect::<String>()),
        };
        if matches!(status, 502..=504) {
            Err(Failure::Retryable(detail))
        } else {
            Err(Failure::Final(BackendError::semantic(op_name, detail)))
        }
    }

    fn with_retries(
        &self,
        op_name: &str,
        path: &str,
        body: Option<(&str, &[u8])>,
    ) -> Result<Vec<u8>, BackendError> {
        let mut delay = self.config.backoff;
        let mut attempt = 0;
        loop {
            match self.exchange(op_name, path, body) {
                Ok(bytes) => return Ok(bytes),
                Err(Failure::Final(e)) => return Err(e),
                Err(Failure::Retryable(message)) if attempt >= self.config.retries => {
                    return Err(BackendError::Transport { op: op_name.to_string(), message });
                }
                Err(Failure::Retryable(message)) => {
                    log::debug!("{op_name}: attempt {} failed ({message}); retrying", attempt + 1);
                    std::thread::sleep(delay);
                    delay = delay.saturating_mul(2);
                    attempt += 1;
                }
            }
        }
    }

    /// Gateway health document.
    pub fn health(&self) -> Result<Value, BackendError> {
        let bytes = self.with_retries("healthz", wire::HEALTH, None)?;
        serde_json::from_slice(&bytes)
            .map_err(|e| BackendError::parse("healthz", e.to_string(), String::from_utf8_lossy(&bytes)))
    }

    fn upload(&self, image: &Image) -> Result<(), BackendError> {
        let bytes = self.with_retries("upload", wire::IMAGES, Some(("image/png", image.png_bytes())))?;
        let raw = String::from_utf8_lossy(&bytes);
        let r: wire::UploadResponse = wire::decode("upload", &raw)?;
        if r.digest != image.digest() {
            return Err(BackendError::semantic(
                "upload",
                format!("gateway digest {} does not match {}", r.digest, image.digest()),
            ));
        }
        Ok(())
    }

    /// Wire reference for `image`, uploading it on first use.
    pub fn image_ref(&self, image: &Image) -> Result<String, BackendError> {
        let digest = image.digest().to_string();
        if self.uploaded.lock().unwrap_or_else(|e| e.into_inner()).contains(&digest) {
            return Ok(digest);
        }
        let small = image.png_bytes().len() <= self.config.inline_limit;
        if small && self.upload_unsupported.load(Ordering::Relaxed) {
            return Ok(data_url(image.png_bytes()));
        }
        match self.upload(image) {
            Ok(()) => {
                self.uploaded.lock().unwrap_or_else(|e| e.into_inner()).insert(digest.clone());
                Ok(digest)
            }
            Err(e) if small && !e.is_transport() => {
                log::warn!("image upload rejected ({e}); sending inline");
                self.upload_unsupported.store(true, Ordering::Relaxed);
                Ok(data_url(image.png_bytes()))
            }
            Err(e) => Err(e),
        }
    }

    fn forget(&self, image: &Image) {
        self.uploaded.lock().unwrap_or_else(|e| e.into_inner()).remove(image.digest());
    }

    fn post_raw<Req: Serialize>(
        &self,
        op_name: &str,
        image: Option<&Image>,
        build: impl Fn(String) -> Req,
    ) -> Result<Vec<u8>, BackendError> {
        let path = wire::endpoint(op_name).expect("known operation");
        let send = |image_ref: String| {
            let body = serde_json::to_vec(&build(image_ref)).expect("wire types always serialize");
            self.with_retries(op_name, path, Some(("application/json", &body)))
        };
        let Some(image) = image else {
            return send(String::new());
        };
        match send(self.image_ref(image)?) {
            // The gateway lost the upload (e.g. restarted): upload again once.
            Err(BackendError::Semantic { message, .. }) if message.contains("unknown_image") => {
                self.forget(image);
                send(self.image_ref(image)?)
            }
            other => other,
        }
    }

    fn post<Req: Serialize, Resp: serde::de::DeserializeOwned>(
        &self,
        op_name: &str,
        image: Option<&Image>,
        build: impl Fn(String) -> Req,
    ) -> Result<Resp, BackendError> {
        let bytes = self.post_raw(op_name, image, build)?;
        wire::decode(op_name, &String::from_utf8_lossy(&bytes))
    }
}

impl Reasoner for RemoteClient {
    fn parse_expression(
        &self,
        image: &Image,
        query: &str,
        options: ReasoningOptions,
    ) -> Result<ParsedExpression, BackendError> {
        self.post(op::PARSE, Some(image), |image| wire::ParseRequest { image, query: query.into(), options })
    }

    fn augment_target(&self, target: &str) -> Result<Vec<String>, BackendError> {
        let r: wire::AugmentResponse =
            self.post(op::AUGMENT, None, |_| wire::AugmentRequest { target: target.into() })?;
        Ok(r.texts)
    }

    fn criterion_map(&self, target: &str, refer: &str, refer_box: BBox) -> Result<Criterion, BackendError> {
        let r: wire::CriterionResponse = self.post(op::CRITERION, None, |_| wire::CriterionRequest {
            target: target.into(),
            refer: refer.into(),
            bbox: refer_box,
        })?;
        Ok(Criterion { relation_text: r.relation, refer_name: refer.into(), refer_box })
    }

    fn rephrase(
        &self,
        query: &str,
        target: &str,
        refers: &[String],
        criterion: &Criterion,
    ) -> Result<(String, String), BackendError> {
        let r: wire::RephraseResponse = self.post(op::REPHRASE, None, |_| wire::RephraseRequest {
            query: query.into(),
            target: target.into(),
            refers: refers.to_vec(),
            relation: criterion.relation_text.clone(),
        })?;
        Ok((r.short, r.long))
    }

    fn ground_bbox(&self, image: &Image, text: &str) -> Result<BBox, BackendError> {
        let r: wire::GroundResponse =
            self.post(op::GROUND, Some(image), |image| wire::GroundRequest { image, text: text.into() })?;
        Ok(r.bbox)
    }

    fn score_mask(
        &self,
        image: &Image,
        mask: &BinaryMask,
        query: &str,
        options: ReasoningOptions,
    ) -> Result<f64, BackendError> {
        let mask = io::to_rle(mask);
        let r: wire::ScoreResponse = self.post(op::SCORE, Some(image), |image| wire::ScoreRequest {
            image,
            mask: mask.clone(),
            query: query.into(),
            options,
        })?;
        Ok(r.score)
    }

    fn prefer_mask(
        &self,
        image: &Image,
        masks: &[BinaryMask],
        query: &str,
        options: ReasoningOptions,
    ) -> Result<i64, BackendError> {
        let masks: Vec<String> = masks.iter().map(io::to_rle).collect();
        let r: wire::PreferResponse = self.post(op::PREFER, Some(image), |image| wire::PreferRequest {
            image,
            masks: masks.clone(),
            query: query.into(),
            options,
        })?;
        Ok(r.index)
    }

    fn affiliation(&self, image: &Image, region: &BinaryMask, core: &BinaryMask) -> Result<bool, BackendError> {
        let (region, core) = (io::to_rle(region), io::to_rle(core));
        let r: wire::AffiliateResponse = self.post(op::AFFILIATE, Some(image), |image| wire::AffiliateRequest {
            image,
            region: region.clone(),
            core: core.clone(),
        })?;
        Ok(r.same_object)
    }
}

impl ConceptSegmenter for RemoteClient {
    fn segment_text(&self, image: &Image, phrase: &str) -> Result<Vec<MaskCandidate>, BackendError> {
        let r: wire::SegmentTextResponse =
            self.post(op::SEGMENT_TEXT, Some(image), |image| wire::SegmentTextRequest { image, phrase: phrase.into() })?;
        r.candidates.into_iter().map(|c| c.into_candidate(op::SEGMENT_TEXT)).collect()
    }

    fn segment_box(&self, image: &Image, bbox: BBox) -> Result<MaskCandidate, BackendError> {
        let r: wire::CandidateWire =
            self.post(op::SEGMENT_BOX, Some(image), |image| wire::SegmentBoxRequest { image, bbox })?;
        r.into_candidate(op::SEGMENT_BOX)
    }

    fn segment_points(
        &self,
        image: &Image,
        positives: &[PixelPoint],
        negatives: &[PixelPoint],
        prior: Option<&BinaryMask>,
    ) -> Result<MaskCandidate, BackendError> {
        let prior = prior.map(io::to_rle);
        let r: wire::CandidateWire = self.post(op::SEGMENT_POINTS, Some(image), |image| wire::SegmentPointsRequest {
            image,
            positives: positives.iter().map(wire::point_to_wire).collect(),
            negatives: negatives.iter().map(wire::point_to_wire).collect(),
            prior: prior.clone(),
        })?;
        r.into_candidate(op::SEGMENT_POINTS)
    }
}

impl FeatureExtractor for RemoteClient {
    fn extract(&self, image: &Image) -> Result<FeatureMap, BackendError> {
        let bytes = self.post_raw(op::FEATURES, Some(image), |image| wire::FeaturesRequest { image })?;
        FeatureMap::from_bytes(&bytes)
            .map_err(|e| BackendError::parse(op::FEATURES, e.to_string(), format!("<{} bytes of FMAP>", bytes.len())))
    }
}
