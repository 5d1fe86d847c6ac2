//! Minimal raster plots: line series on a white canvas, written as PNG.
//!
//! There is no text rendering; axes are drawn as a frame and every plot is
//! described by the caller (file name, log output).

use std::path::Path;

use anyhow::{Context, Result};
use image::{Rgb, RgbImage};

const WIDTH: u32 = 900;
const HEIGHT: u32 = 360;
const MARGIN: u32 = 24;

pub const PALETTE: [Rgb<u8>; 6] = [
    Rgb([31, 119, 180]),
    Rgb([214, 39, 40]),
    Rgb([44, 160, 44]),
    Rgb([148, 103, 189]),
    Rgb([255, 127, 14]),
    Rgb([23, 190, 207]),
];
const GREY: Rgb<u8> = Rgb([150, 150, 150]);
const FRAME: Rgb<u8> = Rgb([40, 40, 40]);

struct Canvas {
    img: RgbImage,
    x_range: (f64, f64),
    y_range: (f64, f64),
}

impl Canvas {
    fn new(x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
        let (x0, y0, x1, y1) = (MARGIN, MARGIN, WIDTH - MARGIN, HEIGHT - MARGIN);
        for x in x0..=x1 {
            img.put_pixel(x, y0, FRAME);
            img.put_pixel(x, y1, FRAME);
        }
        for y in y0..=y1 {
            img.put_pixel(x0, y, FRAME);
            img.put_pixel(x1, y, FRAME);
        }
        let widen = |(a, b): (f64, f64)| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        Self {
            img,
            x_range: widen(x_range),
            y_range: widen(y_range),
        }
    }

    fn to_pixel(&self, x: f64, y: f64) -> (f64, f64) {
        let w = (WIDTH - 2 * MARGIN) as f64;
        let h = (HEIGHT - 2 * MARGIN) as f64;
        let px = MARGIN as f64 + (x - self.x_range.0) / (self.x_range.1 - self.x_range.0) * w;
        let py = (HEIGHT - MARGIN) as f64 - (y - self.y_range.0) / (self.y_range.1 - self.y_range.0) * h;
        (px, py)
    }

    fn put(&mut self, x: i64, y: i64, c: Rgb<u8>) {
        let inside = |v: i64, hi: u32| v >= MARGIN as i64 && v <= (hi - MARGIN) as i64;
        if inside(x, WIDTH) && inside(y, HEIGHT) {
            self.img.put_pixel(x as u32, y as u32, c);
        }
    }

    fn segment(&mut self, a: (f64, f64), b: (f64, f64), c: Rgb<u8>) {
        let (mut x0, mut y0) = (a.0.round() as i64, a.1.round() as i64);
        let (x1, y1) = (b.0.round() as i64, b.1.round() as i64);
        let dx = (x1 - x0).abs();
        let dy = -(y1 - y0).abs();
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let mut err = dx + dy;
        loop {
            self.put(x0, y0, c);
            if x0 == x1 && y0 == y1 {
                break;
            }
            let e2 = 2 * err;
            if e2 >= dy {
                err += dy;
                x0 += sx;
            }
            if e2 <= dx {
                err += dx;
                y0 += sy;
            }
        }
    }

    fn series(&mut self, xs: &[f64], ys: &[f64], c: Rgb<u8>) {
        let pts: Vec<_> = xs
            .iter()
            .zip(ys)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| self.to_pixel(x, y))
            .collect();
        for w in pts.windows(2) {
            self.segment(w[0], w[1], c);
        }
    }

    fn dashed_hline(&mut self, y: f64, c: Rgb<u8>) {
        let (_, py) = self.to_pixel(0.0, y);
        for x in (MARGIN..WIDTH - MARGIN).filter(|x| (x / 6) % 2 == 0) {
            self.put(x as i64, py.round() as i64, c);
        }
    }

    fn rect(&mut self, x: (f64, f64), y: (f64, f64), c: Rgb<u8>) {
        let (ax, ay) = self.to_pixel(x.0, y.1);
        let (bx, by) = self.to_pixel(x.1, y.0);
        for px in ax.round() as i64..bx.round() as i64 {
            for py in ay.round() as i64..by.round() as i64 {
                self.put(px, py, c);
            }
        }
    }

    fn save(&self, path: &Path) -> Result<()> {
        self.img
            .save(path)
            .with_context(|| format!("writing plot {}", path.display()))
    }
}

/// Magnitude spectrum (grey) with a fitted spectral density overlaid, each
/// scaled to its own maximum.
pub fn spectrum(path: &Path, freqs: &[f64], mags: &[f64], fitted: &[f64], max_hz: f64) -> Result<()> {
    let n = freqs.iter().take_while(|&&f| f <= max_hz).count().max(2).min(freqs.len());
    let norm = |v: &[f64]| -> Vec<f64> {
        let m = v[..n].iter().cloned().fold(0.0, f64::max);
        v[..n].iter().map(|x| if m > 0.0 { x / m } else { 0.0 }).collect()
    };
    let mut c = Canvas::new((freqs[0], freqs[n - 1]), (0.0, 1.05));
    c.series(&freqs[..n], &norm(mags), GREY);
    c.series(&freqs[..n], &norm(fitted), PALETTE[1]);
    c.save(path)
}

/// One activation curve per pitch with the decision threshold dashed.
pub fn activations(path: &Path, times: &[f64], curves: &[&[f64]], threshold: f64) -> Result<()> {
    let t_end = times.last().copied().unwrap_or(1.0);
    let mut c = Canvas::new((times.first().copied().unwrap_or(0.0), t_end), (0.0, 1.0));
    c.dashed_hline(threshold, GREY);
    // Thin long curves so the plot stays legible.
    let step = (times.len() / (4 * WIDTH as usize)).max(1);
    let xs: Vec<f64> = times.iter().step_by(step).copied().collect();
    for (k, curve) in curves.iter().enumerate() {
        let ys: Vec<f64> = curve.iter().step_by(step).copied().collect();
        c.series(&xs, &ys, PALETTE[k % PALETTE.len()]);
    }
    c.save(path)
}

/// Piano-roll: one horizontal lane per pitch, filled where active.
pub fn roll(path: &Path, active: &[Vec<bool>], hop_s: f64) -> Result<()> {
    let n_frames = active.first().map_or(0, |r| r.len());
    let lanes = active.len().max(1) as f64;
    let mut c = Canvas::new((0.0, n_frames as f64 * hop_s), (0.0, lanes));
    for (k, row) in active.iter().enumerate() {
        let lane = lanes - 1.0 - k as f64;
        for (i, &on) in row.iter().enumerate() {
            if on {
                let t = i as f64 * hop_s;
                c.rect((t, t + hop_s), (lane + 0.1, lane + 0.9), PALETTE[k % PALETTE.len()]);
            }
        }
    }
    c.save(path)
}

/// ELBO against iteration.
pub fn trace(path: &Path, elbo: &[f64]) -> Result<()> {
    let xs: Vec<f64> = (0..elbo.len()).map(|i| i as f64).collect();
    let lo = elbo.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = elbo.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut c = Canvas::new((0.0, xs.len().saturating_sub(1) as f64), (lo, hi));
    c.series(&xs, elbo, PALETTE[0]);
    c.save(path)
}
