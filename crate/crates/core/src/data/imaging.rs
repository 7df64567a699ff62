//! Geometric and photometric primitives on interleaved `[H, W, C]` buffers.

/// Bilinear sample at `(x, y)` with border replication.
fn sample(img: &[f64], h: usize, w: usize, c: usize, x: f64, y: f64, ch: usize) -> f64 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(w - 1);
    let y1 = (y0 + 1).min(h - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let at = |yy: usize, xx: usize| img[(yy * w + xx) * c + ch];
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resamples `img` through `map`, which sends output pixel coordinates to
/// source coordinates.
fn warp(img: &[f64], h: usize, w: usize, c: usize, map: impl Fn(f64, f64) -> (f64, f64)) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for y in 0..h {
        for x in 0..w {
            let (sx, sy) = map(x as f64, y as f64);
            for ch in 0..c {
                out[(y * w + x) * c + ch] = sample(img, h, w, c, sx, sy, ch);
            }
        }
    }
    out
}

/// Rotation by `degrees` (counter-clockwise) about the image center.
pub(crate) fn rotate(img: &[f64], h: usize, w: usize, c: usize, degrees: f64) -> Vec<f64> {
    let (s, co) = degrees.to_radians().sin_cos();
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    warp(img, h, w, c, |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        (co * dx - s * dy + cx, s * dx + co * dy + cy)
    })
}

pub(crate) fn flip_horizontal(img: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; img.len()];
    for y in 0..h {
        for x in 0..w {
            let src = (y * w + (w - 1 - x)) * c;
            let dst = (y * w + x) * c;
            out[dst..dst + c].copy_from_slice(&img[src..src + c]);
        }
    }
    out
}

pub(crate) fn flip_vertical(img: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let row = w * c;
    let mut out = vec![0.0; img.len()];
    for y in 0..h {
        out[y * row..(y + 1) * row].copy_from_slice(&img[(h - 1 - y) * row..(h - y) * row]);
    }
    out
}

/// Projective transform sending the image rectangle onto `quad` (source
/// corners in TL, TR, BR, BL order), resampled back to full size.
pub(crate) fn perspective(img: &[f64], h: usize, w: usize, c: usize, quad: [(f64, f64); 4]) -> Vec<f64> {
    let (wm, hm) = ((w - 1) as f64, (h - 1) as f64);
    let rect = [(0.0, 0.0), (wm, 0.0), (wm, hm), (0.0, hm)];
    match homography(rect, quad) {
        Some(m) => warp(img, h, w, c, |x, y| {
            let z = m[6] * x + m[7] * y + 1.0;
            ((m[0] * x + m[1] * y + m[2]) / z, (m[3] * x + m[4] * y + m[5]) / z)
        }),
        None => img.to_vec(),
    }
}

/// Solves for the 3x3 homography (with `h22 = 1`) mapping `from[i]` to `to[i]`.
pub(crate) fn homography(from: [(f64, f64); 4], to: [(f64, f64); 4]) -> Option<[f64; 8]> {
    let mut a = [[0.0f64; 9]; 8];
    for i in 0..4 {
        let (x, y) = from[i];
        let (u, v) = to[i];
        a[2 * i] = [x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, u];
        a[2 * i + 1] = [0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y, v];
    }
    for col in 0..8 {
        let pivot = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        for row in 0..8 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..9 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let mut out = [0.0; 8];
    for i in 0..8 {
        out[i] = a[i][8] / a[i][i];
    }
    Some(out)
}

/// Contrast-limited adaptive histogram equalization of one 8-bit channel.
///
/// The image is cut into a `grid x grid` tile layout (fewer tiles along an
/// axis shorter than `grid`). Each tile's histogram is clipped at
/// `clip_limit * tile_area / 256` (at least 1) with the excess spread evenly
/// over all bins, and pixels interpolate bilinearly between the equalization
/// maps of the four nearest tile centers.
pub fn clahe(channel: &[u8], h: usize, w: usize, clip_limit: f64, grid: usize) -> Vec<u8> {
    assert_eq!(channel.len(), h * w);
    let gy = grid.min(h).max(1);
    let gx = grid.min(w).max(1);
    let bounds = |n: usize, g: usize| -> Vec<usize> { (0..=g).map(|t| t * n / g).collect() };
    let ys = bounds(h, gy);
    let xs = bounds(w, gx);

    let mut luts = vec![[0u8; 256]; gy * gx];
    for ty in 0..gy {
        for tx in 0..gx {
            let mut hist = [0usize; 256];
            for y in ys[ty]..ys[ty + 1] {
                for x in xs[tx]..xs[tx + 1] {
                    hist[channel[y * w + x] as usize] += 1;
                }
            }
            let area = (ys[ty + 1] - ys[ty]) * (xs[tx + 1] - xs[tx]);
            let limit = ((clip_limit * area as f64 / 256.0) as usize).max(1);
            let mut excess = 0;
            for b in hist.iter_mut() {
                if *b > limit {
                    excess += *b - limit;
                    *b = limit;
                }
            }
            let share = excess / 256;
            let residual = excess % 256;
            for b in hist.iter_mut() {
                *b += share;
            }
            if residual > 0 {
                let step = (256 / residual).max(1);
                for b in (0..256).step_by(step).take(residual) {
                    hist[b] += 1;
                }
            }
            let scale = 255.0 / area as f64;
            let mut cdf = 0;
            let lut = &mut luts[ty * gx + tx];
            for (v, &count) in hist.iter().enumerate() {
                cdf += count;
                lut[v] = (cdf as f64 * scale).round().clamp(0.0, 255.0) as u8;
            }
        }
    }

    let tile_h = h as f64 / gy as f64;
    let tile_w = w as f64 / gx as f64;
    let neighbours = |p: usize, size: f64, g: usize| -> (usize, usize, f64) {
        let f = (p as f64 + 0.5) / size - 0.5;
        if f <= 0.0 {
            return (0, 0, 0.0);
        }
        let i0 = (f.floor() as usize).min(g - 1);
        let i1 = (i0 + 1).min(g - 1);
        (i0, i1, (f - i0 as f64).clamp(0.0, 1.0))
    };
    let mut out = vec![0u8; channel.len()];
    for y in 0..h {
        let (y0, y1, fy) = neighbours(y, tile_h, gy);
        for x in 0..w {
            let (x0, x1, fx) = neighbours(x, tile_w, gx);
            let v = channel[y * w + x] as usize;
            let l = |ty: usize, tx: usize| f64::from(luts[ty * gx + tx][v]);
            let top = l(y0, x0) * (1.0 - fx) + l(y0, x1) * fx;
            let bottom = l(y1, x0) * (1.0 - fx) + l(y1, x1) * fx;
            out[y * w + x] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_rotation_and_identity_perspective_are_identity() {
        let img: Vec<f64> = (0..12).map(f64::from).collect();
        assert_eq!(rotate(&img, 3, 4, 1, 0.0), img);
        let quad = [(0.0, 0.0), (3.0, 0.0), (3.0, 2.0), (0.0, 2.0)];
        let out = perspective(&img, 3, 4, 1, quad);
        for (a, b) in out.iter().zip(&img) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn flips_reverse_axes() {
        let img = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(flip_horizontal(&img, 2, 2, 1), vec![2.0, 1.0, 4.0, 3.0]);
        assert_eq!(flip_vertical(&img, 2, 2, 1), vec![3.0, 4.0, 1.0, 2.0]);
    }

    #[test]
    fn quarter_turn_permutes_pixels() {
        let img: Vec<f64> = (0..9).map(f64::from).collect();
        let r = rotate(&img, 3, 3, 1, 90.0);
        // Output (x, y) samples source (cx - dy, cy + dx): (0, 0) <- (2, 0).
        assert!((r[0] - 2.0).abs() < 1e-9);
        assert!((r[4] - 4.0).abs() < 1e-9);
    }

    #[test]
    fn homography_maps_corners() {
        let from = [(0.0, 0.0), (9.0, 0.0), (9.0, 9.0), (0.0, 9.0)];
        let to = [(1.0, 0.5), (8.0, 1.0), (8.5, 8.0), (0.5, 9.0)];
        let m = homography(from, to).unwrap();
        for (f, t) in from.iter().zip(&to) {
            let z = m[6] * f.0 + m[7] * f.1 + 1.0;
            let u = (m[0] * f.0 + m[1] * f.1 + m[2]) / z;
            let v = (m[3] * f.0 + m[4] * f.1 + m[5]) / z;
            assert!((u - t.0).abs() < 1e-9 && (v - t.1).abs() < 1e-9);
        }
    }

    #[test]
    fn clahe_constant_image_stays_constant() {
        let img = vec![100u8; 16 * 16];
        let out = clahe(&img, 16, 16, 2.0, 8);
        assert!(out.windows(2).all(|p| p[0] == p[1]));
    }

    #[test]
    fn clahe_spreads_a_low_contrast_ramp() {
        let img: Vec<u8> = (0..32 * 32).map(|i| 100 + ((i % 32) / 4) as u8).collect();
        let out = clahe(&img, 32, 32, 10.0, 8);
        let span = |v: &[u8]| v.iter().max().unwrap() - v.iter().min().unwrap();
        assert!(span(&out) > span(&img));
    }
}
