//! Sparse pyramidal Lucas-Kanade optical flow.
//!
//! Flow is returned in `(d_u, d_v)` = (rows, columns) per frame. Sampling is
//! bilinear with borders clamped.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FrameImage, PixelPoint};

/// Minimum eigenvalue of the window-averaged gradient matrix, with gradients
/// in 8-bit grey levels per pixel scaled by 1/32 (so a uniform gradient of
/// about 0.32 levels/px sits at the threshold).
pub const MIN_EIGENVALUE: f64 = 1e-4;

/// Converts `[0, 1]` intensity gradient products to the units of
/// [`MIN_EIGENVALUE`].
const EIGEN_SCALE: f64 = 255.0 * 255.0 / 1024.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    /// Integration window span in pixels (odd).
    pub window: usize,
    pub pyramid_levels: usize,
    pub max_iterations: usize,
    /// Convergence threshold on the per-iteration update, in pixels.
    pub epsilon: f64,
    /// Flows longer than this are reported invalid.
    pub max_displacement: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            window: 21,
            pyramid_levels: 3,
            max_iterations: 30,
            epsilon: 0.01,
            max_displacement: 100.0,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 5 || self.window % 2 == 0 {
            return Err(Error::InvalidFlowConfig(format!(
                "window must be odd and >= 5, got {}",
                self.window
            )));
        }
        if self.pyramid_levels == 0 || self.max_iterations == 0 {
            return Err(Error::InvalidFlowConfig(
                "pyramid_levels and max_iterations must be positive".into(),
            ));
        }
        if !(self.epsilon > 0.0) || !(self.max_displacement > 0.0) {
            return Err(Error::InvalidFlowConfig(
                "epsilon and max_displacement must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FlowVector {
    pub du: f64,
    pub dv: f64,
    pub valid: bool,
}

impl FlowVector {
    pub const fn new(du: f64, dv: f64, valid: bool) -> Self {
        Self { du, dv, valid }
    }

    pub const fn invalid() -> Self {
        Self::new(0.0, 0.0, false)
    }

    pub fn norm(&self) -> f64 {
        self.du.hypot(self.dv)
    }
}

/// Mean over valid flows; `(0, 0)` when none are valid.
pub fn mean_flow(flows: &[FlowVector]) -> (f64, f64) {
    let (su, sv, n) = flows
        .iter()
        .filter(|f| f.valid)
        .fold((0.0, 0.0, 0usize), |(su, sv, n), f| (su + f.du, sv + f.dv, n + 1));
    if n == 0 {
        (0.0, 0.0)
    } else {
        (su / n as f64, sv / n as f64)
    }
}

/// Source of per-point flow between one fixed pair of consecutive frames.
pub trait FlowProvider {
    /// Flow at each point; `guesses[i]` seeds point `i`.
    fn flows(&self, points: &[PixelPoint], guesses: &[(f64, f64)]) -> Result<Vec<FlowVector>>;
}

#[derive(Debug, Clone)]
struct Plane {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Plane {
    fn from_image(img: &FrameImage) -> Self {
        let data = (0..img.width * img.height)
            .map(|i| img.pixels[i * img.channels] as f32 / 255.0)
            .collect();
        Self {
            width: img.width,
            height: img.height,
            data,
        }
    }

    #[inline]
    fn at(&self, r: isize, c: isize) -> f32 {
        let r = r.clamp(0, self.height as isize - 1) as usize;
        let c = c.clamp(0, self.width as isize - 1) as usize;
        self.data[r * self.width + c]
    }

    #[inline]
    fn sample(&self, u: f64, v: f64) -> f64 {
        let (r0, c0) = (u.floor(), v.floor());
        let (fr, fc) = (u - r0, v - c0);
        let (r, c) = (r0 as isize, c0 as isize);
        let a = self.at(r, c) as f64;
        let b = self.at(r, c + 1) as f64;
        let d = self.at(r + 1, c) as f64;
        let e = self.at(r + 1, c + 1) as f64;
        (1.0 - fr) * ((1.0 - fc) * a + fc * b) + fr * ((1.0 - fc) * d + fc * e)
    }

    /// 5-tap binomial blur followed by 2x decimation.
    fn pyr_down(&self) -> Plane {
        const K: [f32; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];
        let (w, h) = (self.width, self.height);
        let mut tmp = vec![0f32; w * h];
        for r in 0..h {
            for c in 0..w {
                tmp[r * w + c] = (0..5)
                    .map(|k| K[k] * self.at(r as isize, c as isize + k as isize - 2))
                    .sum();
            }
        }
        let tmp = Plane {
            width: w,
            height: h,
            data: tmp,
        };
        let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
        let mut data = vec![0f32; nw * nh];
        for r in 0..nh {
            for c in 0..nw {
                data[r * nw + c] = (0..5)
                    .map(|k| K[k] * tmp.at(2 * r as isize + k as isize - 2, 2 * c as isize))
                    .sum();
            }
        }
        Plane {
            width: nw,
            height: nh,
            data,
        }
    }
}

/// Image pyramids for one frame pair, reusable across many points.
#[derive(Debug, Clone)]
pub struct LucasKanade {
    prev: Vec<Plane>,
    next: Vec<Plane>,
    config: FlowConfig,
}

impl LucasKanade {
    pub fn new(prev: &FrameImage, next: &FrameImage, config: &FlowConfig) -> Result<Self> {
        config.validate()?;
        if !prev.same_dimensions(next) {
            return Err(Error::DimensionMismatch(prev.width, prev.height, next.width, next.height));
        }
        let build = |img: &FrameImage| {
            let mut levels = vec![Plane::from_image(img)];
            for _ in 1..config.pyramid_levels {
                let down = levels.last().unwrap().pyr_down();
                levels.push(down);
            }
            levels
        };
        Ok(Self {
            prev: build(prev),
            next: build(next),
            config: config.clone(),
        })
    }

    /// Tracks one point, seeding the coarsest level with `guess`.
    pub fn track(&self, point: PixelPoint, guess: (f64, f64)) -> Result<FlowVector> {
        let base = &self.prev[0];
        if !(point.u >= 0.0 && point.v >= 0.0 && point.u <= (base.height - 1) as f64 && point.v <= (base.width - 1) as f64) {
            return Err(Error::PointOutOfBounds(point.u, point.v));
        }
        let levels = self.prev.len();
        let half = (self.config.window / 2) as isize;
        let npix = (self.config.window * self.config.window) as f64;
        let top_scale = (1u64 << (levels - 1)) as f64;
        let (mut gu, mut gv) = (guess.0 / top_scale, guess.1 / top_scale);

        let mut grad_u = Vec::with_capacity(self.config.window * self.config.window);
        let mut grad_v = Vec::with_capacity(grad_u.capacity());
        let mut template = Vec::with_capacity(grad_u.capacity());

        for lvl in (0..levels).rev() {
            let scale = (1u64 << lvl) as f64;
            let (pu, pv) = (point.u / scale, point.v / scale);
            let (prev, next) = (&self.prev[lvl], &self.next[lvl]);

            grad_u.clear();
            grad_v.clear();
            template.clear();
            let (mut guu, mut guv, mut gvv) = (0.0, 0.0, 0.0);
            for dr in -half..=half {
                for dc in -half..=half {
                    let (u, v) = (pu + dr as f64, pv + dc as f64);
                    let iu = 0.5 * (prev.sample(u + 1.0, v) - prev.sample(u - 1.0, v));
                    let iv = 0.5 * (prev.sample(u, v + 1.0) - prev.sample(u, v - 1.0));
                    guu += iu * iu;
                    guv += iu * iv;
                    gvv += iv * iv;
                    grad_u.push(iu);
                    grad_v.push(iv);
                    template.push(prev.sample(u, v));
                }
            }
            let tr = 0.5 * (guu + gvv);
            let min_eig = (tr - ((0.5 * (guu - gvv)).powi(2) + guv * guv).sqrt()) / npix * EIGEN_SCALE;
            if !(min_eig >= MIN_EIGENVALUE) {
                return Ok(FlowVector::invalid());
            }
            let det = guu * gvv - guv * guv;

            let (mut nu, mut nv) = (0.0, 0.0);
            let mut converged = false;
            for _ in 0..self.config.max_iterations {
                let (mut bu, mut bv) = (0.0, 0.0);
                let mut i = 0;
                for dr in -half..=half {
                    for dc in -half..=half {
                        let u = pu + dr as f64 + gu + nu;
                        let v = pv + dc as f64 + gv + nv;
                        let e = template[i] - next.sample(u, v);
                        bu += e * grad_u[i];
                        bv += e * grad_v[i];
                        i += 1;
                    }
                }
                let eta_u = (gvv * bu - guv * bv) / det;
                let eta_v = (guu * bv - guv * bu) / det;
                nu += eta_u;
                nv += eta_v;
                if eta_u.hypot(eta_v) < self.config.epsilon {
                    converged = true;
                    break;
                }
            }
            if lvl > 0 {
                gu = 2.0 * (gu + nu);
                gv = 2.0 * (gv + nv);
            } else {
                let flow = FlowVector::new(gu + nu, gv + nv, converged);
                let (tu, tv) = (point.u + flow.du, point.v + flow.dv);
                let inside = tu >= 0.0 && tv >= 0.0 && tu <= (base.height - 1) as f64 && tv <= (base.width - 1) as f64;
                let ok = flow.valid && inside && flow.norm() <= self.config.max_displacement && flow.du.is_finite() && flow.dv.is_finite();
                return Ok(if ok { flow } else { FlowVector { valid: false, ..flow } });
            }
        }
        unreachable!("pyramid has at least one level")
    }
}

impl FlowProvider for LucasKanade {
    fn flows(&self, points: &[PixelPoint], guesses: &[(f64, f64)]) -> Result<Vec<FlowVector>> {
        points
            .iter()
            .zip(guesses)
            .map(|(p, g)| self.track(*p, *g))
            .collect()
    }
}

/// Flow for each point between `prev` and `next`, all seeded with `initial_guess`.
pub fn estimate_flow(
    prev: &FrameImage,
    next: &FrameImage,
    points: &[PixelPoint],
    initial_guess: (f64, f64),
    config: &FlowConfig,
) -> Result<Vec<FlowVector>> {
    let lk = LucasKanade::new(prev, next, config)?;
    points.iter().map(|p| lk.track(*p, initial_guess)).collect()
}
