use crate::model::{BoundingBox, FrameImage, PixelPoint, Region};

pub const DEFAULT_MIN_AREA: usize = 20;

/// Extracts one [`Region`] per 8-connected nonzero component with at least
/// `min_area` pixels. Output is sorted by centroid `(u, v)`.
pub fn mask_to_regions(mask: &FrameImage, min_area: usize) -> Vec<Region> {
    let (w, h) = (mask.width, mask.height);
    let mut visited = vec![false; w * h];
    let mut stack = Vec::new();
    let mut regions = Vec::new();

    for start in 0..w * h {
        if visited[start] || mask.pixels[start * mask.channels] == 0 {
            continue;
        }
        visited[start] = true;
        stack.push(start);
        let (mut n, mut sum_r, mut sum_c) = (0usize, 0u64, 0u64);
        let (mut r0, mut c0, mut r1, mut c1) = (usize::MAX, usize::MAX, 0, 0);
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            n += 1;
            sum_r += r as u64;
            sum_c += c as u64;
            r0 = r0.min(r);
            r1 = r1.max(r);
            c0 = c0.min(c);
            c1 = c1.max(c);
            for nr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for nc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    let j = nr * w + nc;
                    if !visited[j] && mask.pixels[j * mask.channels] != 0 {
                        visited[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if n >= min_area.max(1) {
            regions.push(Region {
                frame: mask.index,
                centroid: PixelPoint::new(sum_r as f64 / n as f64, sum_c as f64 / n as f64),
                bbox: BoundingBox::from_pixel_span(r0, c0, r1, c1),
                area: n,
            });
        }
    }
    regions.sort_by(|a, b| {
        a.centroid
            .u
            .total_cmp(&b.centroid.u)
            .then(a.centroid.v.total_cmp(&b.centroid.v))
    });
    regions
}
