//! Descriptor matching: mutual nearest neighbors filtered by the Lowe ratio
//! test. Pairs that survive are the "good matches" reused later by the thin
//! plate spline engine.

use rayon::prelude::*;

use super::detect::{descriptor_distance, DetectorKind, Keypoint};
use crate::error::{RegError, Result};

/// One correspondence between a source and a target keypoint.
#[derive(Debug, Clone)]
pub struct MatchPair {
    pub source: Keypoint,
    pub target: Keypoint,
    pub distance: f64,
}

/// Ratio-test-filtered correspondences from one detector kind.
#[derive(Debug, Clone)]
pub struct MatchSet {
    pub detector_kind: DetectorKind,
    pub pairs: Vec<MatchPair>,
}

impl MatchSet {
    pub fn empty(kind: DetectorKind) -> Self {
        Self {
            detector_kind: kind,
            pairs: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Point pairs ((source x, y), (target x, y)).
    pub fn point_pairs(&self) -> Vec<((f64, f64), (f64, f64))> {
        self.pairs
            .iter()
            .map(|m| ((m.source.x, m.source.y), (m.target.x, m.target.y)))
            .collect()
    }
}

/// Best and second-best target index for one query descriptor.
fn two_nearest(
    kind: DetectorKind,
    query: &[f32],
    candidates: &[Keypoint],
) -> (usize, f64, f64) {
    let mut best = usize::MAX;
    let mut d1 = f64::INFINITY;
    let mut d2 = f64::INFINITY;
    for (j, kp) in candidates.iter().enumerate() {
        let d = descriptor_distance(kind, query, &kp.descriptor);
        if d < d1 {
            d2 = d1;
            d1 = d;
            best = j;
        } else if d < d2 {
            d2 = d;
        }
    }
    (best, d1, d2)
}

/// Mutual nearest neighbors in descriptor space passing the ratio test
/// (best / second-best < `ratio`). Output sorted by ascending distance.
pub fn match_features(
    src: &[Keypoint],
    tgt: &[Keypoint],
    kind: DetectorKind,
    ratio: f64,
) -> Result<MatchSet> {
    if src.is_empty() || tgt.is_empty() {
        return Err(RegError::DegenerateInput(
            "cannot match against an empty keypoint set".into(),
        ));
    }

    let forward: Vec<(usize, f64, f64)> = src
        .par_iter()
        .map(|kp| two_nearest(kind, &kp.descriptor, tgt))
        .collect();
    let backward: Vec<usize> = tgt
        .par_iter()
        .map(|kp| two_nearest(kind, &kp.descriptor, src).0)
        .collect();

    let mut pairs: Vec<MatchPair> = forward
        .iter()
        .enumerate()
        .filter_map(|(i, &(j, d1, d2))| {
            if j == usize::MAX {
                return None;
            }
            // Ratio test; a missing or equal second-best is ambiguous.
            if !(d1 < ratio * d2) {
                return None;
            }
            if backward[j] != i {
                return None;
            }
            Some(MatchPair {
                source: src[i].clone(),
                target: tgt[j].clone(),
                distance: d1,
            })
        })
        .collect();

    pairs.sort_by(|a, b| {
        a.distance
            .partial_cmp(&b.distance)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| {
                (a.source.y, a.source.x)
                    .partial_cmp(&(b.source.y, b.source.x))
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });

    Ok(MatchSet {
        detector_kind: kind,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kp(x: f64, y: f64, descriptor: Vec<f32>) -> Keypoint {
        Keypoint {
            x,
            y,
            scale: 1.0,
            orientation: 0.0,
            descriptor,
            response: 1.0,
        }
    }

    #[test]
    fn identical_sets_match_one_to_one() {
        let kps: Vec<Keypoint> = (0..8)
            .map(|i| {
                let mut d = vec![0.0f32; 8];
                d[i] = 1.0;
                kp(i as f64, i as f64, d)
            })
            .collect();
        let m = match_features(&kps, &kps, DetectorKind::BlobScaleSpace, 0.75).unwrap();
        assert_eq!(m.len(), 8);
        for pair in &m.pairs {
            assert_eq!(pair.source.x, pair.target.x);
            assert_eq!(pair.distance, 0.0);
        }
    }

    #[test]
    fn planted_match_survives_orthogonal_noise() {
        // Source descriptors are orthogonal to every target except one planted pair.
        let mut src = Vec::new();
        let mut tgt = Vec::new();
        for i in 0..5 {
            let mut d = vec![0.0f32; 16];
            d[i] = 1.0;
            src.push(kp(i as f64, 0.0, d));
        }
        for i in 0..5 {
            let mut d = vec![0.0f32; 16];
            d[10 + i] = 1.0;
            tgt.push(kp(i as f64, 5.0, d));
        }
        // The planted pair shares a descriptor.
        let mut d = vec![0.0f32; 16];
        d[7] = 1.0;
        src.push(kp(9.0, 9.0, d.clone()));
        tgt.push(kp(8.0, 8.0, d));

        let m = match_features(&src, &tgt, DetectorKind::BlobScaleSpace, 0.75).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.pairs[0].source.x, 9.0);
        assert_eq!(m.pairs[0].target.x, 8.0);
    }

    #[test]
    fn identical_descriptors_are_rejected_as_ambiguous() {
        let d = vec![0.5f32; 8];
        let src: Vec<Keypoint> = (0..4).map(|i| kp(i as f64, 0.0, d.clone())).collect();
        let tgt: Vec<Keypoint> = (0..4).map(|i| kp(i as f64, 1.0, d.clone())).collect();
        let m = match_features(&src, &tgt, DetectorKind::BlobScaleSpace, 0.75).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn empty_input_errors() {
        let d = vec![0.5f32; 8];
        let src = vec![kp(0.0, 0.0, d)];
        assert!(match_features(&src, &[], DetectorKind::BlobScaleSpace, 0.75).is_err());
        assert!(match_features(&[], &src, DetectorKind::BlobScaleSpace, 0.75).is_err());
    }
}
