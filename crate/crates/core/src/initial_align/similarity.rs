//! Least-squares similarity estimation and its RANSAC wrapper.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::matching::MatchSet;
use crate::error::{RegError, Result};
use crate::imgcore::Affine2D;

/// Minimum consensus size below which RANSAC reports failure.
pub const MIN_CONSENSUS: usize = 6;

/// Closed-form least-squares similarity (scale, rotation, translation) mapping
/// each `pairs[i].0` onto `pairs[i].1`. Reflections are excluded unless
/// `allow_reflection` is set, in which case the better-fitting of the direct
/// and reflected families is returned.
///
/// Uses the complex-variable form: with centered points p', q', the direct
/// similarity minimizing Σ|α p' − q'|² is α = Σ q'·conj(p') / Σ|p'|².
pub fn estimate_similarity(
    pairs: &[((f64, f64), (f64, f64))],
    allow_reflection: bool,
) -> Result<Affine2D> {
    if pairs.len() < 2 {
        return Err(RegError::DegenerateInput(format!(
            "similarity estimation needs at least 2 pairs, got {}",
            pairs.len()
        )));
    }
    let n = pairs.len() as f64;
    let (mut pcx, mut pcy, mut qcx, mut qcy) = (0.0, 0.0, 0.0, 0.0);
    for &((px, py), (qx, qy)) in pairs {
        pcx += px;
        pcy += py;
        qcx += qx;
        qcy += qy;
    }
    pcx /= n;
    pcy /= n;
    qcx /= n;
    qcy /= n;

    let mut denom = 0.0;
    // Direct model: Σ q'·conj(p').
    let (mut ar, mut ai) = (0.0, 0.0);
    // Reflected model: Σ q'·p'.
    let (mut br, mut bi) = (0.0, 0.0);
    let mut qnorm = 0.0;
    for &((px, py), (qx, qy)) in pairs {
        let (px, py) = (px - pcx, py - pcy);
        let (qx, qy) = (qx - qcx, qy - qcy);
        denom += px * px + py * py;
        ar += qx * px + qy * py;
        ai += qy * px - qx * py;
        br += qx * px - qy * py;
        bi += qy * px + qx * py;
        qnorm += qx * qx + qy * qy;
    }
    if denom < 1e-12 {
        return Err(RegError::DegenerateInput(
            "similarity estimation needs non-coincident source points".into(),
        ));
    }

    // Residual of each family: Σ|q'|² − |Σ q'·conj(p')|²/Σ|p'|² (direct), same
    // with the reflected correlation.
    let direct_gain = (ar * ar + ai * ai) / denom;
    let reflected_gain = (br * br + bi * bi) / denom;
    let use_reflection = allow_reflection && reflected_gain > direct_gain;

    let (a, b, reflect) = if use_reflection {
        (br / denom, bi / denom, true)
    } else {
        (ar / denom, ai / denom, false)
    };
    let _ = qnorm;

    if (a * a + b * b).sqrt() < 1e-12 {
        return Err(RegError::SingularTransform(
            "estimated similarity has zero scale".into(),
        ));
    }

    // Linear part: direct α = a + bi acts as [[a, −b], [b, a]]; reflected
    // model maps conj(p'), i.e. [[a, b], [b, −a]].
    let (m00, m01, m10, m11) = if reflect {
        (a, b, b, -a)
    } else {
        (a, -b, b, a)
    };
    let tx = qcx - (m00 * pcx + m01 * pcy);
    let ty = qcy - (m10 * pcx + m11 * pcy);
    Affine2D::new([[m00, m01, tx], [m10, m11, ty], [0.0, 0.0, 1.0]])
}

fn residual(a: &Affine2D, pair: &((f64, f64), (f64, f64))) -> f64 {
    let ((px, py), (qx, qy)) = *pair;
    let (mx, my) = a.apply(px, py);
    ((mx - qx).powi(2) + (my - qy).powi(2)).sqrt()
}

/// RANSAC similarity estimation over a match set: repeated 2-point hypotheses,
/// consensus by inlier count (ties by lower mean residual), final refit on all
/// inliers. Deterministic for a fixed seed.
pub fn ransac_similarity(
    matches: &MatchSet,
    iters: usize,
    inlier_tol: f64,
    seed: u64,
) -> Result<(Affine2D, MatchSet)> {
    let pairs = matches.point_pairs();
    if pairs.len() < 2 {
        return Err(RegError::DegenerateInput(format!(
            "RANSAC needs at least 2 matches, got {}",
            pairs.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(usize, f64, Affine2D)> = None;

    for _ in 0..iters {
        let i = rng.random_range(0..pairs.len());
        let j = rng.random_range(0..pairs.len());
        if i == j {
            continue;
        }
        let sample = [pairs[i], pairs[j]];
        let d2 = (sample[0].0 .0 - sample[1].0 .0).powi(2)
            + (sample[0].0 .1 - sample[1].0 .1).powi(2);
        if d2 < 1e-9 {
            continue;
        }
        let Ok(model) = estimate_similarity(&sample, false) else {
            continue;
        };
        let mut count = 0usize;
        let mut total = 0.0;
        for pair in &pairs {
            let r = residual(&model, pair);
            if r <= inlier_tol {
                count += 1;
                total += r;
            }
        }
        if count == 0 {
            continue;
        }
        let mean = total / count as f64;
        let better = match &best {
            None => true,
            Some((bc, bm, _)) => count > *bc || (count == *bc && mean < *bm),
        };
        if better {
            best = Some((count, mean, model));
        }
    }

    let (count, _, model) = best.ok_or(RegError::NoConsensus {
        found: 0,
        required: MIN_CONSENSUS,
    })?;
    if count < MIN_CONSENSUS {
        return Err(RegError::NoConsensus {
            found: count,
            required: MIN_CONSENSUS,
        });
    }

    // Refit on the consensus set, then report the inliers of the refit model.
    let inlier_pairs: Vec<_> = pairs
        .iter()
        .filter(|p| residual(&model, p) <= inlier_tol)
        .cloned()
        .collect();
    let refit = estimate_similarity(&inlier_pairs, false).unwrap_or(model);

    let inliers = MatchSet {
        detector_kind: matches.detector_kind,
        pairs: matches
            .pairs
            .iter()
            .filter(|m| {
                residual(&refit, &((m.source.x, m.source.y), (m.target.x, m.target.y)))
                    <= inlier_tol
            })
            .cloned()
            .collect(),
    };
    if inliers.len() < MIN_CONSENSUS {
        return Err(RegError::NoConsensus {
            found: inliers.len(),
            required: MIN_CONSENSUS,
        });
    }
    Ok((refit, inliers))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::initial_align::detect::{DetectorKind, Keypoint};
    use crate::initial_align::matching::MatchPair;

    fn pairs_under(a: &Affine2D, pts: &[(f64, f64)]) -> Vec<((f64, f64), (f64, f64))> {
        pts.iter().map(|&p| (p, a.apply(p.0, p.1))).collect()
    }

    #[test]
    fn identity_pairs_give_identity() {
        let pts = [(0.0, 0.0), (10.0, 0.0), (3.0, 7.0)];
        let pairs = pairs_under(&Affine2D::identity(), &pts);
        let a = estimate_similarity(&pairs, false).unwrap();
        for &(x, y) in &pts {
            let (mx, my) = a.apply(x, y);
            assert!((mx - x).abs() < 1e-12 && (my - y).abs() < 1e-12);
        }
    }

    #[test]
    fn two_point_exact_recovery() {
        // Scale 2 + rotation 90°: hand-checkable on two points.
        let truth = Affine2D::similarity(2.0, std::f64::consts::FRAC_PI_2, 1.0, -2.0);
        let pairs = pairs_under(&truth, &[(0.0, 0.0), (1.0, 0.0)]);
        let a = estimate_similarity(&pairs, false).unwrap();
        for (p, q) in &pairs {
            let (mx, my) = a.apply(p.0, p.1);
            assert!((mx - q.0).abs() < 1e-10 && (my - q.1).abs() < 1e-10);
        }
    }

    #[test]
    fn noisy_monte_carlo_recovery() {
        // 50 noisy pairs from a known transform: parameters within 1%.
        let truth = Affine2D::similarity(1.25, 0.5, 12.0, -8.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<(f64, f64)> = (0..50)
            .map(|_| {
                (
                    rng.random_range(0.0..200.0),
                    rng.random_range(0.0..200.0),
                )
            })
            .collect();
        let pairs: Vec<_> = pts
            .iter()
            .map(|&p| {
                let (qx, qy) = truth.apply(p.0, p.1);
                let nx: f64 = rng.random_range(-0.5..0.5);
                let ny: f64 = rng.random_range(-0.5..0.5);
                (p, (qx + nx, qy + ny))
            })
            .collect();
        let a = estimate_similarity(&pairs, false).unwrap();
        let m = a.matrix();
        let t = truth.matrix();
        for i in 0..2 {
            for j in 0..2 {
                assert!(
                    (m[i][j] - t[i][j]).abs() < 0.01 * 1.25,
                    "linear part off: {:?} vs {:?}",
                    m,
                    t
                );
            }
        }
        assert!((m[0][2] - t[0][2]).abs() < 1.0);
        assert!((m[1][2] - t[1][2]).abs() < 1.0);
    }

    #[test]
    fn degenerate_inputs_error() {
        assert!(estimate_similarity(&[((0.0, 0.0), (1.0, 1.0))], false).is_err());
        let coincident = vec![((2.0, 2.0), (0.0, 0.0)), ((2.0, 2.0), (5.0, 5.0))];
        assert!(estimate_similarity(&coincident, false).is_err());
    }

    #[test]
    fn reflection_handling() {
        // A pure mirror across the x-axis.
        let pts = [(0.0, 0.0), (4.0, 1.0), (-2.0, 3.0), (1.0, -5.0)];
        let pairs: Vec<_> = pts.iter().map(|&(x, y)| ((x, y), (x, -y))).collect();
        // Excluded by default: the best direct similarity cannot reproduce it.
        let direct = estimate_similarity(&pairs, false).unwrap();
        assert!(direct.det2() > 0.0);
        // Allowed: recovered exactly, with a negative determinant.
        let refl = estimate_similarity(&pairs, true).unwrap();
        assert!(refl.det2() < 0.0);
        for (p, q) in &pairs {
            let (mx, my) = refl.apply(p.0, p.1);
            assert!((mx - q.0).abs() < 1e-10 && (my - q.1).abs() < 1e-10);
        }
    }

    fn match_set_from(pairs: &[((f64, f64), (f64, f64))]) -> MatchSet {
        MatchSet {
            detector_kind: DetectorKind::BlobScaleSpace,
            pairs: pairs
                .iter()
                .map(|&((sx, sy), (tx, ty))| MatchPair {
                    source: Keypoint {
                        x: sx,
                        y: sy,
                        scale: 1.0,
                        orientation: 0.0,
                        descriptor: vec![],
                        response: 1.0,
                    },
                    target: Keypoint {
                        x: tx,
                        y: ty,
                        scale: 1.0,
                        orientation: 0.0,
                        descriptor: vec![],
                        response: 1.0,
                    },
                    distance: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn ransac_clean_matches() {
        let truth = Affine2D::similarity(1.1, 0.3, 5.0, 9.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pairs: Vec<_> = (0..100)
            .map(|_| {
                let p = (
                    rng.random_range(0.0..300.0),
                    rng.random_range(0.0..300.0),
                );
                (p, truth.apply(p.0, p.1))
            })
            .collect();
        let ms = match_set_from(&pairs);
        let (model, inliers) = ransac_similarity(&ms, 500, 2.0, 42).unwrap();
        assert_eq!(inliers.len(), 100);
        for (p, q) in &pairs {
            let (mx, my) = model.apply(p.0, p.1);
            assert!((mx - q.0).abs() < 1e-6 && (my - q.1).abs() < 1e-6);
        }
    }

    #[test]
    fn ransac_rejects_half_outliers() {
        let truth = Affine2D::similarity(0.9, -0.4, -10.0, 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut pairs = Vec::new();
        for _ in 0..50 {
            let p = (
                rng.random_range(0.0..300.0),
                rng.random_range(0.0..300.0),
            );
            pairs.push((p, truth.apply(p.0, p.1)));
        }
        for _ in 0..50 {
            pairs.push((
                (
                    rng.random_range(0.0..300.0),
                    rng.random_range(0.0..300.0),
                ),
                (
                    rng.random_range(0.0..300.0),
                    rng.random_range(0.0..300.0),
                ),
            ));
        }
        let ms = match_set_from(&pairs);
        let (model, inliers) = ransac_similarity(&ms, 2000, 2.0, 1).unwrap();
        assert!(inliers.len() >= 50);
        // RMS residual over the true inliers must be small.
        let mut rms = 0.0;
        for (p, q) in pairs.iter().take(50) {
            let (mx, my) = model.apply(p.0, p.1);
            rms += (mx - q.0).powi(2) + (my - q.1).powi(2);
        }
        rms = (rms / 50.0).sqrt();
        assert!(rms < 0.5, "rms {rms}");
    }

    #[test]
    fn ransac_no_consensus_on_garbage() {
        // 5 matches, all mapping random points to random points.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pairs: Vec<_> = (0..5)
            .map(|_| {
                (
                    (
                        rng.random_range(0.0..100.0),
                        rng.random_range(0.0..100.0),
                    ),
                    (
                        rng.random_range(0.0..100.0),
                        rng.random_range(0.0..100.0),
                    ),
                )
            })
            .collect();
        let ms = match_set_from(&pairs);
        assert!(matches!(
            ransac_similarity(&ms, 500, 0.5, 9),
            Err(RegError::NoConsensus { .. })
        ));
    }

    #[test]
    fn ransac_is_deterministic() {
        let truth = Affine2D::similarity(1.3, 0.2, 3.0, 3.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pairs: Vec<_> = (0..40)
            .map(|_| {
                let p = (
                    rng.random_range(0.0..100.0),
                    rng.random_range(0.0..100.0),
                );
                let q = truth.apply(p.0, p.1);
                let jitter: f64 = rng.random_range(-1.0..1.0);
                (p, (q.0 + jitter, q.1 - jitter))
            })
            .collect();
        let ms = match_set_from(&pairs);
        let (a1, in1) = ransac_similarity(&ms, 800, 3.0, 77).unwrap();
        let (a2, in2) = ransac_similarity(&ms, 800, 3.0, 77).unwrap();
        assert_eq!(a1.matrix(), a2.matrix());
        assert_eq!(in1.len(), in2.len());
    }

    #[test]
    fn estimate_similarity_is_rigid_equivariant() {
        // Conjugating the input pairs by a rigid motion conjugates the output.
        let truth = Affine2D::similarity(1.4, 0.7, 6.0, -3.0);
        let pts = [(0.0, 0.0), (10.0, 2.0), (4.0, 9.0), (-3.0, 5.0)];
        let pairs = pairs_under(&truth, &pts);
        let base = estimate_similarity(&pairs, false).unwrap();

        let g = Affine2D::similarity(1.0, 1.1, 20.0, -7.0); // rigid motion
        let conj_pairs: Vec<_> = pairs
            .iter()
            .map(|&(p, q)| (g.apply(p.0, p.1), g.apply(q.0, q.1)))
            .collect();
        let conj = estimate_similarity(&conj_pairs, false).unwrap();
        let expected = g.compose(&base).compose(&g.inverse().unwrap());
        for i in 0..2 {
            for j in 0..3 {
                assert!(
                    (conj.matrix()[i][j] - expected.matrix()[i][j]).abs() < 1e-8,
                    "entry ({i},{j})"
                );
            }
        }
    }
}
