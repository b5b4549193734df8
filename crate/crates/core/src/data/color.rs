//! RGB/HSV conversion with hue measured in turns (`[0, 1)`).

/// Converts RGB in `[0, 1]` to `(hue, saturation, value)`, hue in turns.
pub fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let value = max;
    let saturation = if max > 0.0 { delta / max } else { 0.0 };
    if delta <= 0.0 {
        return (0.0, saturation, value);
    }
    let sector = if max == r {
        ((g - b) / delta).rem_euclid(6.0)
    } else if max == g {
        (b - r) / delta + 2.0
    } else {
        (r - g) / delta + 4.0
    };
    ((sector / 6.0).rem_euclid(1.0), saturation, value)
}

/// Inverse of [`rgb_to_hsv`].
pub fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - ((h % 2.0) - 1.0).abs());
    let m = v - c;
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    (r + m, g + m, b + m)
}

/// Rotates the hue of a CHW image stored in `[-1, 1]` by `turns`.
pub fn rotate_hue(chw: &[f32], height: usize, width: usize, turns: f32) -> Vec<f32> {
    let plane = height * width;
    let mut out = vec![0.0f32; chw.len()];
    for i in 0..plane {
        let r = (chw[i] + 1.0) * 0.5;
        let g = (chw[plane + i] + 1.0) * 0.5;
        let b = (chw[2 * plane + i] + 1.0) * 0.5;
        let (h, s, v) = rgb_to_hsv(r, g, b);
        let (r, g, b) = hsv_to_rgb(h + turns, s, v);
        out[i] = (r * 2.0 - 1.0).clamp(-1.0, 1.0);
        out[plane + i] = (g * 2.0 - 1.0).clamp(-1.0, 1.0);
        out[2 * plane + i] = (b * 2.0 - 1.0).clamp(-1.0, 1.0);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primaries() {
        assert_eq!(rgb_to_hsv(1.0, 0.0, 0.0), (0.0, 1.0, 1.0));
        let (h, _, _) = rgb_to_hsv(0.0, 1.0, 0.0);
        assert!((h - 1.0 / 3.0).abs() < 1e-6);
        let (h, _, _) = rgb_to_hsv(0.0, 0.0, 1.0);
        assert!((h - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn round_trip() {
        for i in 0..1000 {
            let r = (i % 10) as f32 / 9.0;
            let g = ((i / 10) % 10) as f32 / 9.0;
            let b = (i / 100) as f32 / 9.0;
            let (h, s, v) = rgb_to_hsv(r, g, b);
            let (r2, g2, b2) = hsv_to_rgb(h, s, v);
            assert!((r - r2).abs() < 1e-5 && (g - g2).abs() < 1e-5 && (b - b2).abs() < 1e-5);
        }
    }

    #[test]
    fn full_rotation_is_identity() {
        let img: Vec<f32> = (0..3 * 16).map(|i| ((i * 37) % 100) as f32 / 50.0 - 1.0).collect();
        let rotated = rotate_hue(&rotate_hue(&img, 4, 4, 0.25), 4, 4, 0.75);
        for (a, b) in img.iter().zip(&rotated) {
            assert!((a - b).abs() < 1e-4);
        }
    }
}
