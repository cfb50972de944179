//! Question-guided region extraction: detector backends propose boxes, the
//! engine validates and ranks them, selects one primary region, and crops.
//!
//! Coordinates are normalized to `[0, 1]` relative to the image, so boxes
//! are resolution-independent. Detection itself is delegated to a backend
//! behind [`DetectorBackend`]: a JSONL fixture (the test-time default) or
//! a live HTTP service. Backends return unvalidated drafts; validation
//! happens here at the trust boundary, so a misbehaving service and a
//! hand-edited fixture fail identically.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::{is_stopword, tokenize, INTERROGATIVES};

/// Default confidence floor for primary-region selection.
pub const DEFAULT_MIN_CONFIDENCE: f64 = 0.3;

#[derive(Debug, Error)]
pub enum RegionError {
    #[error("detector backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("detector backend returned a malformed response: {0}")]
    BackendMalformedResponse(String),
    #[error("invalid bounding box: {0}")]
    InvalidBoundingBox(String),
    #[error("failed to load image: {0}")]
    ImageLoadFailure(String),
    #[error("io failure: {0}")]
    IoFailure(#[from] std::io::Error),
    #[error("malformed fixture: {0}")]
    SchemaViolation(String),
}

/// A reference to an image by id and URI, with pixel dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRef {
    pub image_id: String,
    pub uri: String,
    pub width: u32,
    pub height: u32,
}

/// An axis-aligned box in normalized coordinates: `0 ≤ x, y`,
/// `w, h > 0`, `x + w ≤ 1`, `y + h ≤ 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, RegionError> {
        let ok = [x, y, w, h].iter().all(|v| v.is_finite())
            && (0.0..=1.0).contains(&x)
            && (0.0..=1.0).contains(&y)
            && w > 0.0
            && h > 0.0
            && x + w <= 1.0
            && y + h <= 1.0;
        if ok {
            Ok(BoundingBox { x, y, w, h })
        } else {
            Err(RegionError::InvalidBoundingBox(format!(
                "x={x} y={y} w={w} h={h} violates normalized-coordinate constraints"
            )))
        }
    }

    /// The whole image.
    pub fn full_image() -> Self {
        BoundingBox {
            x: 0.0,
            y: 0.0,
            w: 1.0,
            h: 1.0,
        }
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }
}

/// A validated, ranked region proposal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionProposal {
    pub bbox: BoundingBox,
    pub label: String,
    /// Detector confidence in [0, 1].
    pub confidence: f64,
}

/// Unvalidated proposal as produced by a backend (fixture row or HTTP
/// body). [`detect_regions`] turns drafts into [`RegionProposal`]s.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProposalDraft {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
    pub label: String,
    pub confidence: f64,
}

/// A source of region proposals for an image/query pair.
pub trait DetectorBackend: Send + Sync {
    fn detect(&self, image: &ImageRef, query: &str) -> Result<Vec<ProposalDraft>, RegionError>;
}

/// Reduce a question to a detection query: drop stopwords and
/// interrogatives, keep remaining tokens in order. Falls back to the
/// normalized question when nothing survives.
///
/// "Where is the attraction located?" becomes "attraction located".
pub fn detection_query(question: &str) -> String {
    let tokens = tokenize(question);
    let kept: Vec<&String> = tokens
        .iter()
        .filter(|t| !is_stopword(t) && INTERROGATIVES.binary_search(&t.as_str()).is_err())
        .collect();
    if kept.is_empty() {
        tokens.join(" ")
    } else {
        kept.iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Ask the backend for proposals, validate every draft, and rank:
/// confidence descending, then area descending, then top-left order
/// (y ascending, then x ascending). The sort is stable, so fully tied
/// proposals keep backend order.
pub fn detect_regions(
    image: &ImageRef,
    query: &str,
    backend: &dyn DetectorBackend,
) -> Result<Vec<RegionProposal>, RegionError> {
    let drafts = backend.detect(image, query)?;
    let mut proposals = Vec::with_capacity(drafts.len());
    for d in drafts {
        if !d.confidence.is_finite() || !(0.0..=1.0).contains(&d.confidence) {
            return Err(RegionError::BackendMalformedResponse(format!(
                "confidence {} outside [0, 1] for label {:?}",
                d.confidence, d.label
            )));
        }
        let bbox = BoundingBox::new(d.x, d.y, d.w, d.h)
            .map_err(|e| RegionError::BackendMalformedResponse(e.to_string()))?;
        proposals.push(RegionProposal {
            bbox,
            label: d.label,
            confidence: d.confidence,
        });
    }
    proposals.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .expect("validated confidences are finite")
            .then(
                b.bbox
                    .area()
                    .partial_cmp(&a.bbox.area())
                    .expect("areas are finite"),
            )
            .then(a.bbox.y.partial_cmp(&b.bbox.y).expect("coords are finite"))
            .then(a.bbox.x.partial_cmp(&b.bbox.x).expect("coords are finite"))
    });
    Ok(proposals)
}

/// Pick the primary region: the highest-ranked proposal with confidence at
/// least `min_confidence`. Total — when nothing qualifies (including an
/// empty proposal list) the full image is the region, with confidence 0.
pub fn select_primary_region(proposals: &[RegionProposal], min_confidence: f64) -> RegionProposal {
    proposals
        .iter()
        .find(|p| p.confidence >= min_confidence)
        .cloned()
        .unwrap_or(RegionProposal {
            bbox: BoundingBox::full_image(),
            label: "full-image".to_string(),
            confidence: 0.0,
        })
}

/// Crop arithmetic on the image reference: the new dimensions are the
/// box extent times the pixel size, rounded to the nearest integer and
/// clamped to at least 1×1. The full-image box leaves dimensions
/// unchanged. No pixel data is touched — downstream consumers embed by
/// URI + box.
pub fn crop(image: &ImageRef, bbox: &BoundingBox) -> ImageRef {
    let width = ((bbox.w * f64::from(image.width)).round() as u32).max(1);
    let height = ((bbox.h * f64::from(image.height)).round() as u32).max(1);
    let suffix = format!(
        "#crop({:.4},{:.4},{:.4},{:.4})",
        bbox.x, bbox.y, bbox.w, bbox.h
    );
    ImageRef {
        image_id: format!("{}{}", image.image_id, suffix),
        uri: format!("{}{}", image.uri, suffix),
        width,
        height,
    }
}

/// JSONL-backed fixture detector: one line per image,
/// `{"image_id": ..., "proposals": [{x, y, w, h, label, confidence}, ...]}`.
/// Unknown image ids yield no proposals (the pipeline then falls back to
/// the full image).
pub struct FixtureDetector {
    by_image: HashMap<String, Vec<ProposalDraft>>,
}

#[derive(Deserialize)]
struct FixtureRow {
    image_id: String,
    proposals: Vec<ProposalDraft>,
}

impl FixtureDetector {
    pub fn from_jsonl(path: &Path) -> Result<Self, RegionError> {
        let reader = BufReader::new(File::open(path)?);
        let mut by_image = HashMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let row: FixtureRow = serde_json::from_str(&line)
                .map_err(|e| RegionError::SchemaViolation(format!("line {}: {e}", lineno + 1)))?;
            by_image.insert(row.image_id, row.proposals);
        }
        Ok(FixtureDetector { by_image })
    }

    /// Fixture from in-memory rows (test convenience).
    pub fn from_map(by_image: HashMap<String, Vec<ProposalDraft>>) -> Self {
        FixtureDetector { by_image }
    }
}

impl DetectorBackend for FixtureDetector {
    fn detect(&self, image: &ImageRef, _query: &str) -> Result<Vec<ProposalDraft>, RegionError> {
        Ok(self
            .by_image
            .get(&image.image_id)
            .cloned()
            .unwrap_or_default())
    }
}

/// Live detector: `POST {base_url}/detect` with
/// `{"image_uri": ..., "query": ...}`, expecting
/// `{"proposals": [{x, y, w, h, label, confidence}, ...]}`.
pub struct HttpDetector {
    base_url: String,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct DetectRequest<'a> {
    image_uri: &'a str,
    query: &'a str,
}

#[derive(Deserialize)]
struct DetectResponse {
    proposals: Vec<ProposalDraft>,
}

impl HttpDetector {
    pub fn new(base_url: &str, timeout: Duration) -> Result<Self, RegionError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| RegionError::BackendUnavailable(e.to_string()))?;
        Ok(HttpDetector {
            base_url: base_url.trim_end_matches('/').to_string(),
            client,
        })
    }
}

impl DetectorBackend for HttpDetector {
    fn detect(&self, image: &ImageRef, query: &str) -> Result<Vec<ProposalDraft>, RegionError> {
        let resp = self
            .client
            .post(format!("{}/detect", self.base_url))
            .json(&DetectRequest {
                image_uri: &image.uri,
                query,
            })
            .send()
            .map_err(|e| RegionError::BackendUnavailable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(RegionError::BackendUnavailable(format!(
                "detector returned HTTP {}",
                resp.status()
            )));
        }
        let body: DetectResponse = resp
            .json()
            .map_err(|e| RegionError::BackendMalformedResponse(e.to_string()))?;
        Ok(body.proposals)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn image() -> ImageRef {
        ImageRef {
            image_id: "img-1".to_string(),
            uri: "img://1".to_string(),
            width: 640,
            height: 480,
        }
    }

    fn draft(x: f64, y: f64, w: f64, h: f64, label: &str, confidence: f64) -> ProposalDraft {
        ProposalDraft {
            x,
            y,
            w,
            h,
            label: label.to_string(),
            confidence,
        }
    }

    fn fixture(drafts: Vec<ProposalDraft>) -> FixtureDetector {
        FixtureDetector::from_map(HashMap::from([("img-1".to_string(), drafts)]))
    }

    #[test]
    fn bounding_box_validation() {
        assert!(BoundingBox::new(0.0, 0.0, 1.0, 1.0).is_ok());
        assert!(BoundingBox::new(0.5, 0.5, 0.5, 0.5).is_ok());
        for bad in [
            (-0.1, 0.0, 0.5, 0.5),
            (0.0, 0.0, 0.0, 0.5), // zero width
            (0.0, 0.0, 0.5, -0.1),
            (0.6, 0.0, 0.5, 0.5), // x + w > 1
            (0.0, 0.6, 0.5, 0.5), // y + h > 1
            (f64::NAN, 0.0, 0.5, 0.5),
        ] {
            assert!(
                matches!(
                    BoundingBox::new(bad.0, bad.1, bad.2, bad.3),
                    Err(RegionError::InvalidBoundingBox(_))
                ),
                "expected rejection for {:?}",
                bad
            );
        }
    }

    #[test]
    fn detect_regions_sorts_by_confidence_then_area_then_top_left() {
        let det = fixture(vec![
            draft(0.0, 0.0, 0.2, 0.2, "small-low", 0.4),
            draft(0.1, 0.1, 0.5, 0.5, "big-high", 0.9),
            draft(0.4, 0.4, 0.1, 0.1, "tiny-high", 0.9),
            draft(0.6, 0.2, 0.1, 0.1, "tie-right", 0.9),
            draft(0.2, 0.2, 0.1, 0.1, "tie-left-upper", 0.9),
        ]);
        let got = detect_regions(&image(), "anything", &det).unwrap();
        let labels: Vec<&str> = got.iter().map(|p| p.label.as_str()).collect();
        // 0.9s first; among them the larger box wins; among equal-size 0.9s
        // the upper-left one comes first. The 0.4 proposal trails.
        assert_eq!(
            labels,
            vec![
                "big-high",
                "tie-left-upper",
                "tie-right",
                "tiny-high",
                "small-low"
            ]
        );
    }

    #[test]
    fn detect_regions_rejects_out_of_range_confidence() {
        let det = fixture(vec![draft(0.0, 0.0, 0.5, 0.5, "overconfident", 1.2)]);
        assert!(matches!(
            detect_regions(&image(), "q", &det),
            Err(RegionError::BackendMalformedResponse(_))
        ));
    }

    #[test]
    fn detect_regions_rejects_invalid_boxes_from_backend() {
        let det = fixture(vec![draft(0.9, 0.0, 0.5, 0.5, "overflow", 0.8)]);
        assert!(matches!(
            detect_regions(&image(), "q", &det),
            Err(RegionError::BackendMalformedResponse(_))
        ));
    }

    #[test]
    fn select_primary_takes_best_above_threshold() {
        let det = fixture(vec![
            draft(0.0, 0.0, 0.5, 0.5, "strong", 0.8),
            draft(0.5, 0.5, 0.4, 0.4, "weak", 0.2),
        ]);
        let ranked = detect_regions(&image(), "q", &det).unwrap();
        let primary = select_primary_region(&ranked, DEFAULT_MIN_CONFIDENCE);
        assert_eq!(primary.label, "strong");
    }

    #[test]
    fn select_primary_falls_back_to_full_image() {
        // All below threshold.
        let ranked = detect_regions(
            &image(),
            "q",
            &fixture(vec![draft(0.0, 0.0, 0.5, 0.5, "weak", 0.1)]),
        )
        .unwrap();
        let primary = select_primary_region(&ranked, DEFAULT_MIN_CONFIDENCE);
        assert_eq!(primary.bbox, BoundingBox::full_image());
        assert_eq!(primary.confidence, 0.0);

        // No proposals at all.
        let primary = select_primary_region(&[], DEFAULT_MIN_CONFIDENCE);
        assert_eq!(primary.bbox, BoundingBox::full_image());
    }

    #[test]
    fn crop_rounds_then_clamps_dimensions() {
        let img = image(); // 640 × 480
        let quarter = BoundingBox::new(0.25, 0.25, 0.5, 0.5).unwrap();
        let c = crop(&img, &quarter);
        assert_eq!((c.width, c.height), (320, 240));
        assert!(c.image_id.starts_with("img-1#crop("));

        // A sliver rounds to 0 and clamps to 1.
        let tiny = BoundingBox::new(0.0, 0.0, 0.001, 0.001).unwrap();
        let c = crop(
            &ImageRef {
                width: 100,
                height: 100,
                ..img.clone()
            },
            &tiny,
        );
        assert_eq!((c.width, c.height), (1, 1));

        // Full image leaves dimensions unchanged.
        let c = crop(&img, &BoundingBox::full_image());
        assert_eq!((c.width, c.height), (640, 480));

        // 0.5 fractions round half away from zero: 0.3 × 225 = 67.5 → 68.
        let strip = BoundingBox::new(0.0, 0.0, 0.3, 1.0).unwrap();
        let c = crop(
            &ImageRef {
                width: 225,
                height: 10,
                ..img
            },
            &strip,
        );
        assert_eq!(c.width, 68);
    }

    #[test]
    fn detection_query_strips_stopwords_and_interrogatives() {
        assert_eq!(
            detection_query("Where is the attraction located?"),
            "attraction located"
        );
        assert_eq!(detection_query("Who painted it?"), "painted");
        // Nothing survives: fall back to the normalized question.
        assert_eq!(detection_query("What is it?"), "what is it");
    }

    #[test]
    fn fixture_detector_loads_jsonl_and_misses_yield_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("det.jsonl");
        std::fs::write(
            &path,
            "{\"image_id\":\"img-1\",\"proposals\":[{\"x\":0.1,\"y\":0.1,\"w\":0.5,\"h\":0.5,\
             \"label\":\"landmark\",\"confidence\":0.9}]}\n\n",
        )
        .unwrap();
        let det = FixtureDetector::from_jsonl(&path).unwrap();
        assert_eq!(detect_regions(&image(), "q", &det).unwrap().len(), 1);
        let other = ImageRef {
            image_id: "img-2".to_string(),
            ..image()
        };
        assert!(detect_regions(&other, "q", &det).unwrap().is_empty());
    }

    #[test]
    fn fixture_detector_rejects_malformed_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "not json\n").unwrap();
        assert!(matches!(
            FixtureDetector::from_jsonl(&path),
            Err(RegionError::SchemaViolation(_))
        ));
    }
}
