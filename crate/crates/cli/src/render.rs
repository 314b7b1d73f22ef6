//! Heatmap rendering to binary PPM.

use std::fs;
use std::io;
use std::path::Path;

/// Dark purple through orange to pale yellow.
const SEQUENTIAL: [[f64; 3]; 5] = [
    [0.0, 0.0, 4.0],
    [87.0, 16.0, 110.0],
    [188.0, 55.0, 84.0],
    [249.0, 142.0, 9.0],
    [252.0, 255.0, 164.0],
];

/// Blue through white to red.
const DIVERGING: [[f64; 3]; 3] = [
    [59.0, 76.0, 192.0],
    [247.0, 247.0, 247.0],
    [180.0, 4.0, 38.0],
];

fn ramp(stops: &[[f64; 3]], t: f64) -> [u8; 3] {
    let t = if t.is_finite() {
        t.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let pos = t * (stops.len() - 1) as f64;
    let i = (pos.floor() as usize).min(stops.len() - 2);
    let f = pos - i as f64;
    let mut out = [0u8; 3];
    for (k, o) in out.iter_mut().enumerate() {
        *o = (stops[i][k] + f * (stops[i + 1][k] - stops[i][k])).round() as u8;
    }
    out
}

/// Colour of `t ∈ [0, 1]` on the sequential scale.
pub fn sequential(t: f64) -> [u8; 3] {
    ramp(&SEQUENTIAL, t)
}

/// Colour of `t ∈ [-1, 1]` on the diverging scale; 0 is white.
pub fn diverging(t: f64) -> [u8; 3] {
    ramp(&DIVERGING, 0.5 * (t + 1.0))
}

/// RGB pixels of a `height × width` map, each value drawn as a
/// `scale × scale` block. Unsigned maps are stretched to their own
/// `[min, max]`; signed maps to `[-m, m]` with `m` the largest magnitude.
pub fn heatmap(values: &[f64], height: usize, width: usize, signed: bool, scale: usize) -> Vec<u8> {
    assert_eq!(values.len(), height * width);
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let colour: Box<dyn Fn(f64) -> [u8; 3]> = if signed {
        let m = finite.fold(0.0f64, |m, v| m.max(v.abs()));
        Box::new(move |v| diverging(if m > 0.0 { v / m } else { 0.0 }))
    } else {
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        Box::new(move |v| sequential(if hi > lo { (v - lo) / (hi - lo) } else { 0.0 }))
    };
    let (h, w) = (height * scale, width * scale);
    let mut rgb = Vec::with_capacity(3 * h * w);
    for r in 0..h {
        for c in 0..w {
            rgb.extend(colour(values[(r / scale) * width + c / scale]));
        }
    }
    rgb
}

/// Binary PPM; `comment` lines go into the header.
pub fn write_ppm(
    path: &Path,
    width: usize,
    height: usize,
    rgb: &[u8],
    comment: &str,
) -> io::Result<()> {
    assert_eq!(rgb.len(), 3 * width * height);
    let mut out = b"P6\n".to_vec();
    for line in comment.lines() {
        out.extend_from_slice(format!("# {line}\n").as_bytes());
    }
    out.extend_from_slice(format!("{width} {height}\n255\n").as_bytes());
    out.extend_from_slice(rgb);
    fs::write(path, out)
}
