//! Disk-sprite rasterization over a value-noise background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::GroundTruth;
use crate::model::FrameImage;

const NONE: u32 = u32::MAX;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn lattice(i: i64, j: i64, salt: u64) -> f64 {
    let h = splitmix(splitmix(splitmix(salt) ^ i as u64) ^ j as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Smoothly interpolated lattice noise in `[0, 1]`.
pub(crate) fn value_noise(x: f64, y: f64, salt: u64) -> f64 {
    let (xf, yf) = (x.floor(), y.floor());
    let (i, j) = (xf as i64, yf as i64);
    let s = |t: f64| t * t * (3.0 - 2.0 * t);
    let (tx, ty) = (s(x - xf), s(y - yf));
    let a = lattice(i, j, salt) * (1.0 - tx) + lattice(i + 1, j, salt) * tx;
    let b = lattice(i, j + 1, salt) * (1.0 - tx) + lattice(i + 1, j + 1, salt) * tx;
    a * (1.0 - ty) + b * ty
}

/// Background plane intensity at world `(x, y)`.
pub(crate) fn background_value(x: f64, y: f64) -> f64 {
    60.0 + 80.0 * (0.65 * value_noise(x / 0.2, y / 0.2, 1) + 0.35 * value_noise(x / 0.07, y / 0.07, 2))
}

/// Fruit surface intensity at disk-local coordinates (unit radius).
pub(crate) fn fruit_value(id: usize, brightness: f64, lx: f64, ly: f64) -> f64 {
    let salt = 1000 + id as u64;
    brightness + 50.0 * (value_noise(lx / 0.3, ly / 0.3, salt) - 0.5) + 24.0 * (value_noise(lx / 0.12, ly / 0.12, salt + 7) - 0.5)
}

/// Per-pixel front-most fruit index (`u32::MAX` where none) for frame `k`,
/// together with the rendered intensities before noise.
pub(crate) fn rasterize(gt: &GroundTruth, k: usize) -> (Vec<u32>, Vec<f64>) {
    let (w, h) = (gt.width, gt.height);
    let pose = gt.pose(k);
    let depth = gt.background_depth - gt.camera_centers[k][2];
    let mut values = vec![0.0; w * h];
    for r in 0..h {
        for c in 0..w {
            let p = pose.back_project(&crate::model::PixelPoint::new(r as f64, c as f64), depth);
            values[r * w + c] = background_value(p.x, p.y);
        }
    }
    let mut owner = vec![NONE; w * h];
    for &i in &gt.render_order() {
        let f = &gt.fruits[i];
        if !gt.disk_in_view(i, k) {
            continue;
        }
        let (center, radius) = gt.projected(i, k);
        let r0 = (center.u - radius).floor().max(0.0) as usize;
        let r1 = ((center.u + radius).ceil() as i64).min(h as i64 - 1);
        let c0 = (center.v - radius).floor().max(0.0) as usize;
        let c1 = ((center.v + radius).ceil() as i64).min(w as i64 - 1);
        if r1 < 0 || c1 < 0 {
            continue;
        }
        for r in r0..=r1 as usize {
            for c in c0..=c1 as usize {
                let (du, dv) = (r as f64 - center.u, c as f64 - center.v);
                if du * du + dv * dv <= radius * radius {
                    owner[r * w + c] = i as u32;
                    values[r * w + c] = fruit_value(f.id, f.brightness, dv / radius, du / radius);
                }
            }
        }
    }
    (owner, values)
}

/// Renders frame `k` and its detection mask.
pub(crate) fn render_frame(gt: &GroundTruth, k: usize, noise: f64) -> (FrameImage, FrameImage) {
    let (w, h) = (gt.width, gt.height);
    let (owner, values) = rasterize(gt, k);
    let mut rng = ChaCha8Rng::seed_from_u64(gt.seed);
    rng.set_stream(k as u64 + 1);
    let pixels: Vec<u8> = values
        .iter()
        .map(|&v| {
            let n = if noise > 0.0 { rng.random_range(-noise..=noise) } else { 0.0 };
            (v + n).round().clamp(0.0, 255.0) as u8
        })
        .collect();

    // A fruit pixel is marked unless the fruit is in a dropout gap or an
    // 8-neighbor belongs to a different fruit, which keeps touching disks
    // in separate components.
    let mut mask = vec![0u8; w * h];
    for r in 0..h {
        for c in 0..w {
            let o = owner[r * w + c];
            if o == NONE || gt.in_gap(o as usize, k) {
                continue;
            }
            let mut boundary = false;
            'n: for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (rr, cc) = (r as i64 + dr, c as i64 + dc);
                    if rr < 0 || cc < 0 || rr >= h as i64 || cc >= w as i64 {
                        continue;
                    }
                    let q = owner[rr as usize * w + cc as usize];
                    if q != NONE && q != o {
                        boundary = true;
                        break 'n;
                    }
                }
            }
            if !boundary {
                mask[r * w + c] = 255;
            }
        }
    }
    (
        FrameImage {
            index: k,
            width: w,
            height: h,
            channels: 1,
            pixels,
        },
        FrameImage {
            index: k,
            width: w,
            height: h,
            channels: 1,
            pixels: mask,
        },
    )
}
