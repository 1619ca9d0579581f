//! Initial similarity alignment: a three-detector feature path scored by mask
//! overlap, an automatic fail gate, and a centroid + rotation-search + global
//! affine fallback for feature-poor pairs.

mod detect;
mod global_affine;
mod matching;
mod similarity;

pub use detect::{descriptor_distance, detect_features, DetectorKind, Keypoint, MAX_KEYPOINTS};
pub use global_affine::{global_affine_ssd, GlobalAffineOutcome};
pub use matching::{match_features, MatchPair, MatchSet};
pub use similarity::{estimate_similarity, ransac_similarity, MIN_CONSENSUS};

use serde::{Deserialize, Serialize};

use crate::error::{RegError, Result};
use crate::imgcore::{affine_to_field, warp_image, Affine2D, BinaryMask, Interp};
use crate::preprocess::{dice, PreprocessedPair};

/// Which path produced the initial alignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    Feature,
    CentroidRotation,
    IdentityFallback,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlignmentStatus {
    Ok,
    FailDetected,
}

/// Outcome of the initial alignment: the transform maps source (fixed)
/// coordinates into target (moving) coordinates. When the fail gate trips,
/// the transform is the identity.
#[derive(Debug, Clone)]
pub struct InitialAlignmentResult {
    pub transform: Affine2D,
    pub dice_score: f64,
    pub method: InitMethod,
    pub detector_kind: Option<DetectorKind>,
    pub inlier_matches: MatchSet,
    pub status: AlignmentStatus,
}

/// Tunables for the initial alignment stage.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InitialAlignParams {
    /// RANSAC hypothesis count.
    pub ransac_iters: usize,
    /// RANSAC inlier tolerance in working pixels.
    pub inlier_tol: f64,
    /// Lowe ratio-test threshold defining "good matches".
    pub ratio_threshold: f64,
    /// Per-image keypoint cap (hard-limited to 5000).
    pub max_keypoints: usize,
    /// Dice needed to accept an alignment; below this the fail path engages.
    pub dice_accept: f64,
    /// Rotation grid step of the fallback search, degrees.
    pub angle_step_deg: f64,
    /// Gradient-descent iterations of the fallback global affine stage.
    pub affine_iters: usize,
    /// Gradient-descent step of the fallback global affine stage.
    pub affine_step: f64,
    pub seed: u64,
}

impl Default for InitialAlignParams {
    fn default() -> Self {
        Self {
            ransac_iters: 2000,
            inlier_tol: 5.0,
            ratio_threshold: 0.75,
            max_keypoints: 2000,
            dice_accept: 0.85,
            angle_step_deg: 1.0,
            affine_iters: 300,
            affine_step: 0.02,
            seed: 0,
        }
    }
}

/// Dice between the source mask carried into target space by `a` (mapping
/// source coordinates into target coordinates) and the target mask.
pub fn dice_after_affine(
    src_mask: &BinaryMask,
    tgt_mask: &BinaryMask,
    a: &Affine2D,
) -> Result<f64> {
    let inv = a.inverse()?;
    let field = affine_to_field(&inv, tgt_mask.width(), tgt_mask.height())?;
    let warped = warp_image(&src_mask.to_image(), &field, Interp::Nearest)?;
    dice(&BinaryMask::from_image_threshold(&warped, 0.5), tgt_mask)
}

fn fail_result(dice_score: f64) -> InitialAlignmentResult {
    InitialAlignmentResult {
        transform: Affine2D::identity(),
        dice_score,
        method: InitMethod::IdentityFallback,
        detector_kind: None,
        inlier_matches: MatchSet::empty(DetectorKind::BlobScaleSpace),
        status: AlignmentStatus::FailDetected,
    }
}

/// Feature path: run every detector kind, fit a RANSAC similarity per kind,
/// and keep the candidate with the highest mask Dice. Detector failures are
/// recorded, not raised; the returned status reports whether the best
/// candidate clears the acceptance threshold. Also returns each kind's full
/// ratio-test match set (the pre-RANSAC "good matches").
pub fn feature_alignment(
    pair: &PreprocessedPair,
    params: &InitialAlignParams,
) -> Result<(InitialAlignmentResult, Vec<MatchSet>)> {
    struct Candidate {
        kind: DetectorKind,
        transform: Affine2D,
        dice_score: f64,
        inliers: MatchSet,
    }

    let mut good_matches = Vec::new();
    let mut candidates: Vec<Candidate> = Vec::new();

    for (ki, kind) in DetectorKind::ALL.into_iter().enumerate() {
        let src_kps = match detect_features(&pair.source, kind, params.max_keypoints) {
            Ok(k) => k,
            Err(_) => continue,
        };
        let tgt_kps = match detect_features(&pair.target, kind, params.max_keypoints) {
            Ok(k) => k,
            Err(_) => continue,
        };
        if src_kps.is_empty() || tgt_kps.is_empty() {
            continue;
        }
        let Ok(matches) = match_features(&src_kps, &tgt_kps, kind, params.ratio_threshold) else {
            continue;
        };
        if matches.len() < 2 {
            if !matches.is_empty() {
                good_matches.push(matches);
            }
            continue;
        }
        good_matches.push(matches.clone());
        let Ok((transform, inliers)) = ransac_similarity(
            &matches,
            params.ransac_iters,
            params.inlier_tol,
            params.seed ^ (ki as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
        ) else {
            continue;
        };
        let Ok(dice_score) = dice_after_affine(&pair.source_mask, &pair.target_mask, &transform)
        else {
            continue;
        };
        candidates.push(Candidate {
            kind,
            transform,
            dice_score,
            inliers,
        });
    }

    let best = candidates.into_iter().max_by(|a, b| {
        a.dice_score
            .partial_cmp(&b.dice_score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let result = match best {
        Some(c) if c.dice_score >= params.dice_accept => InitialAlignmentResult {
            transform: c.transform,
            dice_score: c.dice_score,
            method: InitMethod::Feature,
            detector_kind: Some(c.kind),
            inlier_matches: c.inliers,
            status: AlignmentStatus::Ok,
        },
        Some(c) => fail_result(c.dice_score),
        None => fail_result(0.0),
    };
    Ok((result, good_matches))
}

/// Fallback geometric alignment: translate the source centroid onto the target
/// centroid, then pick the rotation about the target centroid maximizing Dice
/// over the angle grid {0, step, ..., 360 − step} degrees.
pub fn centroid_rotation_alignment(
    src_mask: &BinaryMask,
    tgt_mask: &BinaryMask,
    angle_step_deg: f64,
) -> Result<Affine2D> {
    if angle_step_deg <= 0.0 || angle_step_deg > 360.0 {
        return Err(RegError::InvalidParameter(format!(
            "angle step {angle_step_deg} out of (0, 360]"
        )));
    }
    let c_src = src_mask.centroid().ok_or_else(|| {
        RegError::DegenerateInput("centroid alignment needs a nonempty source mask".into())
    })?;
    let c_tgt = tgt_mask.centroid().ok_or_else(|| {
        RegError::DegenerateInput("centroid alignment needs a nonempty target mask".into())
    })?;

    let translation = Affine2D::translation(c_tgt.0 - c_src.0, c_tgt.1 - c_src.1);
    let mut best_angle = 0.0f64;
    let mut best_dice = f64::NEG_INFINITY;
    let steps = (360.0 / angle_step_deg).round() as usize;
    for i in 0..steps {
        let angle_deg = i as f64 * angle_step_deg;
        let rot = Affine2D::rotation_about(angle_deg.to_radians(), c_tgt);
        let a = rot.compose(&translation);
        let d = dice_after_affine(src_mask, tgt_mask, &a)?;
        if d > best_dice {
            best_dice = d;
            best_angle = angle_deg;
        }
    }
    Ok(Affine2D::rotation_about(best_angle.to_radians(), c_tgt).compose(&translation))
}

/// Full initial alignment with automatic fail detection: feature path first;
/// if its Dice falls short, the centroid + rotation + global-affine fallback;
/// if that also falls short, an identity transform flagged `fail_detected`.
pub fn initial_alignment(
    pair: &PreprocessedPair,
    params: &InitialAlignParams,
) -> Result<(InitialAlignmentResult, Vec<MatchSet>)> {
    let (feature, good_matches) = feature_alignment(pair, params)?;
    if feature.status == AlignmentStatus::Ok {
        return Ok((feature, good_matches));
    }
    let feature_dice = feature.dice_score;

    // Fallback path.
    let coarse = match centroid_rotation_alignment(
        &pair.source_mask,
        &pair.target_mask,
        params.angle_step_deg,
    ) {
        Ok(a) => a,
        Err(_) => return Ok((fail_result(feature_dice), good_matches)),
    };
    let coarse_dice = dice_after_affine(&pair.source_mask, &pair.target_mask, &coarse)?;

    let refined = global_affine_ssd(
        &pair.source,
        &pair.target,
        &coarse,
        params.affine_iters,
        params.affine_step,
    )?;
    let refined_dice = if refined.diverged {
        f64::NEG_INFINITY
    } else {
        dice_after_affine(&pair.source_mask, &pair.target_mask, &refined.transform)?
    };

    let (transform, dice_score) = if refined_dice >= coarse_dice {
        (refined.transform, refined_dice)
    } else {
        (coarse, coarse_dice)
    };

    if dice_score >= params.dice_accept {
        Ok((
            InitialAlignmentResult {
                transform,
                dice_score,
                method: InitMethod::CentroidRotation,
                detector_kind: None,
                inlier_matches: MatchSet::empty(DetectorKind::BlobScaleSpace),
                status: AlignmentStatus::Ok,
            },
            good_matches,
        ))
    } else {
        Ok((
            fail_result(dice_score.max(feature_dice)),
            good_matches,
        ))
    }
}
