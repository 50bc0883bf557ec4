//! Short-lived feature tracks on fruit disks and on the background plane.

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{GroundTruth, SceneConfig};
use crate::localize::FeatureTrack;
use crate::model::PixelPoint;

fn in_image(truth: &GroundTruth, p: &PixelPoint) -> bool {
    p.u >= 0.0 && p.v >= 0.0 && p.u <= truth.height as f64 - 1.0 && p.v <= truth.width as f64 - 1.0
}

/// Follows a world point from `start` while it stays in the image and its
/// front-most surface is `surface`, for at most `lifetime` frames.
fn observe(
    truth: &GroundTruth,
    world: &Vector3<f64>,
    start: usize,
    lifetime: usize,
    surface: Option<usize>,
    noise: Option<&Normal<f64>>,
    rng: &mut ChaCha8Rng,
) -> Vec<(usize, PixelPoint)> {
    let mut obs = Vec::new();
    for k in start..(start + lifetime).min(truth.frame_count()) {
        let Ok(p) = truth.pose(k).project(world) else { break };
        let p = p.pixel;
        if !in_image(truth, &p) || truth.owner(k, &p) != surface {
            break;
        }
        let p = match noise {
            Some(n) => PixelPoint::new(p.u + n.sample(rng), p.v + n.sample(rng)),
            None => p,
        };
        obs.push((k, p));
    }
    obs
}

pub(super) fn generate_features(truth: &GroundTruth, cfg: &SceneConfig, rng: &mut ChaCha8Rng) -> Vec<FeatureTrack> {
    let noise = (cfg.feature_noise > 0.0).then(|| Normal::new(0.0, cfg.feature_noise).expect("finite sigma"));
    let mut tracks = Vec::new();
    let push = |obs: Vec<(usize, PixelPoint)>, tracks: &mut Vec<FeatureTrack>| {
        if obs.len() >= 2 {
            let id = tracks.len();
            tracks.push(FeatureTrack::new(id, obs));
        }
    };

    for (i, f) in truth.fruits.iter().enumerate() {
        let frames = truth.visible_frames(i);
        let Some(&first) = frames.first() else { continue };
        for &k in frames.iter().filter(|&&k| (k - first) % cfg.feature_spawn_interval == 0) {
            for _ in 0..cfg.features_per_spawn {
                let rho = 0.8 * f.radius * rng.random::<f64>().sqrt();
                let theta = rng.random_range(0.0..std::f64::consts::TAU);
                let world = Vector3::new(f.center[0] + rho * theta.cos(), f.center[1] + rho * theta.sin(), f.center[2]);
                let obs = observe(truth, &world, k, cfg.feature_lifetime, Some(i), noise.as_ref(), rng);
                push(obs, &mut tracks);
            }
        }
    }

    for k in 0..truth.frame_count() {
        let pose = truth.pose(k);
        let depth = truth.background_depth - truth.camera_centers[k][2];
        for _ in 0..cfg.background_features_per_frame {
            let p = PixelPoint::new(
                rng.random_range(0.0..truth.height as f64 - 1.0),
                rng.random_range(0.0..truth.width as f64 - 1.0),
            );
            let world = pose.back_project(&p, depth);
            let obs = observe(truth, &world, k, cfg.feature_lifetime, None, noise.as_ref(), rng);
            push(obs, &mut tracks);
        }
    }
    tracks
}
