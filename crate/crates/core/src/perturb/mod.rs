//! Image-side perturbations and their diagnostics.

mod diagnostics;
mod geometry;
mod raster;
mod reposition;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use diagnostics::{
    bg_delta, filter_by_artifacts, gradient_magnitude, ring, seam_ratio, ArtifactCriterion,
};
pub use geometry::{flip, gaussian_blur, gaussian_kernel, rotate};
pub use raster::{Frame, Mask};
pub use reposition::{anchor_point, composite, reposition, Blend, RepositionParams, Repositioned};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PerturbError {
    #[error("invalid perturbation spec: {0}")]
    InvalidSpec(String),
    #[error("object mask is empty")]
    EmptyMask,
    #[error("no valid placement for {item_id} at {anchor} after {tries} retries")]
    PlacementFailure { item_id: String, anchor: Anchor, tries: usize },
    #[error("degenerate region: {0}")]
    DegenerateRegion(String),
    #[error("image and mask shapes differ")]
    ShapeMismatch,
    #[error("io: {0}")]
    Io(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipAxis {
    Vertical,
    Horizontal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Anchor {
    TL,
    TR,
    BL,
    BR,
}

impl Anchor {
    pub const ALL: [Anchor; 4] = [Anchor::TL, Anchor::TR, Anchor::BL, Anchor::BR];
}

impl fmt::Display for Anchor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Anchor::TL => "TL",
            Anchor::TR => "TR",
            Anchor::BL => "BL",
            Anchor::BR => "BR",
        };
        f.write_str(s)
    }
}

impl FromStr for Anchor {
    type Err = PerturbError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "TL" => Ok(Anchor::TL),
            "TR" => Ok(Anchor::TR),
            "BL" => Ok(Anchor::BL),
            "BR" => Ok(Anchor::BR),
            other => Err(PerturbError::InvalidSpec(format!("unknown anchor {other:?}"))),
        }
    }
}

pub const ROTATION_ANGLES: [f64; 4] = [-10.0, -5.0, 5.0, 10.0];
pub const BLUR_SIGMAS: [f64; 2] = [1.0, 2.0];

/// One image perturbation. Parameters are checked on construction and on deserialization;
/// a zero-degree rotation is accepted as an identity probe.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case", try_from = "RawSpec")]
pub enum PerturbationSpec {
    VerticalFlip,
    HorizontalFlip,
    Rotation { angle_deg: f64 },
    Reposition { anchor: Anchor },
    Blur { sigma: f64 },
}

#[derive(Deserialize)]
#[serde(tag = "family", content = "params", rename_all = "snake_case")]
enum RawSpec {
    VerticalFlip,
    HorizontalFlip,
    Rotation { angle_deg: f64 },
    Reposition { anchor: Anchor },
    Blur { sigma: f64 },
}

impl TryFrom<RawSpec> for PerturbationSpec {
    type Error = PerturbError;
    fn try_from(raw: RawSpec) -> Result<Self, Self::Error> {
        match raw {
            RawSpec::VerticalFlip => Ok(Self::VerticalFlip),
            RawSpec::HorizontalFlip => Ok(Self::HorizontalFlip),
            RawSpec::Rotation { angle_deg } => Self::rotation(angle_deg),
            RawSpec::Reposition { anchor } => Ok(Self::Reposition { anchor }),
            RawSpec::Blur { sigma } => Self::blur(sigma),
        }
    }
}

impl PerturbationSpec {
    pub fn rotation(angle_deg: f64) -> Result<Self, PerturbError> {
        if angle_deg == 0.0 || ROTATION_ANGLES.contains(&angle_deg) {
            Ok(Self::Rotation { angle_deg })
        } else {
            Err(PerturbError::InvalidSpec(format!("rotation angle {angle_deg} not in {{-10,-5,5,10}}")))
        }
    }

    pub fn blur(sigma: f64) -> Result<Self, PerturbError> {
        if BLUR_SIGMAS.contains(&sigma) {
            Ok(Self::Blur { sigma })
        } else {
            Err(PerturbError::InvalidSpec(format!("blur sigma {sigma} not in {{1.0,2.0}}")))
        }
    }

    /// The full audit set: two flips, four rotations, four anchors, two blur levels.
    pub fn standard_set() -> Vec<PerturbationSpec> {
        let mut v = vec![Self::VerticalFlip, Self::HorizontalFlip];
        v.extend(ROTATION_ANGLES.iter().map(|&a| Self::Rotation { angle_deg: a }));
        v.extend(Anchor::ALL.iter().map(|&anchor| Self::Reposition { anchor }));
        v.extend(BLUR_SIGMAS.iter().map(|&sigma| Self::Blur { sigma }));
        v
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            Self::VerticalFlip => "vertical_flip",
            Self::HorizontalFlip => "horizontal_flip",
            Self::Rotation { .. } => "rotation",
            Self::Reposition { .. } => "reposition",
            Self::Blur { .. } => "blur",
        }
    }

    /// Stable short key, e.g. `rotation:+10`, `reposition:TL`, `blur:1.0`.
    pub fn key(&self) -> String {
        match self {
            Self::VerticalFlip | Self::HorizontalFlip => self.family_name().to_string(),
            Self::Rotation { angle_deg } => format!("rotation:{angle_deg:+}"),
            Self::Reposition { anchor } => format!("reposition:{anchor}"),
            Self::Blur { sigma } => format!("blur:{sigma:.1}"),
        }
    }

    pub fn from_key(key: &str) -> Result<Self, PerturbError> {
        let bad = || PerturbError::InvalidSpec(format!("unrecognised spec key {key:?}"));
        let (family, arg) = match key.split_once(':') {
            Some((f, a)) => (f, Some(a)),
            None => (key, None),
        };
        match (family, arg) {
            ("vertical_flip", None) => Ok(Self::VerticalFlip),
            ("horizontal_flip", None) => Ok(Self::HorizontalFlip),
            ("rotation", Some(a)) => Self::rotation(a.parse().map_err(|_| bad())?),
            ("reposition", Some(a)) => Ok(Self::Reposition { anchor: a.parse()? }),
            ("blur", Some(a)) => Self::blur(a.parse().map_err(|_| bad())?),
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub bg_delta: f64,
    pub seam_ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VariantRecord {
    pub item_id: String,
    pub spec: PerturbationSpec,
    pub image: Frame,
    /// Object mask after the transform (moved for repositioning, rotated or mirrored otherwise).
    pub moved_mask: Mask,
    /// Set for repositioned variants only.
    pub diagnostics: Option<Diagnostics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticParams {
    pub bg_pad_px: u32,
    pub seam_inner_px: u32,
    pub seam_outer_px: u32,
}

impl Default for DiagnosticParams {
    fn default() -> Self {
        Self { bg_pad_px: 8, seam_inner_px: 2, seam_outer_px: 5 }
    }
}

/// Applies `spec` to one item. `salient` constrains repositioning only.
pub fn apply(
    item_id: &str,
    spec: &PerturbationSpec,
    frame: &Frame,
    mask: &Mask,
    salient: Option<&Mask>,
    params: &RepositionParams,
    diag: &DiagnosticParams,
) -> Result<VariantRecord, PerturbError> {
    if frame.width() != mask.width() || frame.height() != mask.height() {
        return Err(PerturbError::ShapeMismatch);
    }
    if frame.is_empty() {
        return Err(PerturbError::InvalidSpec("empty image".into()));
    }
    let (image, moved_mask, diagnostics) = match *spec {
        PerturbationSpec::VerticalFlip => {
            let (f, m) = flip(frame, mask, FlipAxis::Vertical);
            (f, m, None)
        }
        PerturbationSpec::HorizontalFlip => {
            let (f, m) = flip(frame, mask, FlipAxis::Horizontal);
            (f, m, None)
        }
        PerturbationSpec::Rotation { angle_deg } => {
            let (f, m) = rotate(frame, mask, angle_deg);
            (f, m, None)
        }
        PerturbationSpec::Blur { sigma } => (gaussian_blur(frame, sigma), mask.clone(), None),
        PerturbationSpec::Reposition { anchor } => {
            let r = reposition(item_id, frame, mask, salient, anchor, params)?;
            let bg = bg_delta(frame, &r.image, mask, &r.moved_mask, diag.bg_pad_px)?;
            let seam = seam_ratio(
                frame,
                &r.image,
                mask,
                &r.moved_mask,
                diag.seam_inner_px,
                diag.seam_outer_px,
            )?;
            (r.image, r.moved_mask, Some(Diagnostics { bg_delta: bg, seam_ratio: seam }))
        }
    };
    Ok(VariantRecord { item_id: item_id.to_string(), spec: spec.clone(), image, moved_mask, diagnostics })
}
