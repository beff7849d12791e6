//! Tiny software rasteriser producing 8-bit RGB frames.

use crate::types::Observation;

pub type Rgb = [u8; 3];

pub const BLACK: Rgb = [0, 0, 0];
pub const RED: Rgb = [230, 25, 25];
pub const GREEN: Rgb = [25, 200, 60];
pub const YELLOW: Rgb = [240, 220, 30];
pub const PURPLE: Rgb = [150, 40, 200];
pub const LIGHT_GREY: Rgb = [210, 210, 210];
pub const DARK_GREY: Rgb = [60, 60, 60];
pub const DISTRACTOR_COLORS: [Rgb; 4] = [[40, 90, 240], [250, 140, 20], [230, 40, 200], [30, 210, 220]];

#[derive(Clone, Debug)]
pub struct Canvas {
    height: usize,
    width: usize,
    pixels: Vec<u8>,
}

impl Canvas {
    pub fn new(height: usize, width: usize, background: Rgb) -> Self {
        let pixels = background.iter().copied().cycle().take(height * width * 3).collect();
        Self { height, width, pixels }
    }

    pub fn set(&mut self, y: usize, x: usize, color: Rgb) {
        if y < self.height && x < self.width {
            let i = (y * self.width + x) * 3;
            self.pixels[i..i + 3].copy_from_slice(&color);
        }
    }

    pub fn get(&self, y: usize, x: usize) -> Rgb {
        let i = (y * self.width + x) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    /// Fills pixels whose centres satisfy `inside(x, y)` within the given
    /// pixel bounding box (inclusive).
    fn fill_where(&mut self, y0: f64, y1: f64, x0: f64, x1: f64, color: Rgb, inside: impl Fn(f64, f64) -> bool) {
        let clamp = |v: f64, n: usize| v.floor().max(0.0).min(n as f64 - 1.0) as usize;
        if self.height == 0 || self.width == 0 {
            return;
        }
        for y in clamp(y0, self.height)..=clamp(y1, self.height) {
            for x in clamp(x0, self.width)..=clamp(x1, self.width) {
                if inside(x as f64 + 0.5, y as f64 + 0.5) {
                    self.set(y, x, color);
                }
            }
        }
    }

    /// Axis-aligned rectangle covering pixels `[y0, y1) x [x0, x1)`.
    pub fn fill_rect(&mut self, y0: usize, x0: usize, y1: usize, x1: usize, color: Rgb) {
        for y in y0..y1.min(self.height) {
            for x in x0..x1.min(self.width) {
                self.set(y, x, color);
            }
        }
    }

    /// Disc in continuous pixel coordinates (x right, y down).
    pub fn fill_disc(&mut self, cx: f64, cy: f64, radius: f64, color: Rgb) {
        let r2 = radius * radius;
        self.fill_where(cy - radius, cy + radius, cx - radius, cx + radius, color, |x, y| {
            (x - cx).powi(2) + (y - cy).powi(2) <= r2
        });
    }

    /// Triangle from three `(x, y)` vertices.
    pub fn fill_triangle(&mut self, p: [(f64, f64); 3], color: Rgb) {
        let edge = |a: (f64, f64), b: (f64, f64), x: f64, y: f64| (b.0 - a.0) * (y - a.1) - (b.1 - a.1) * (x - a.0);
        let area = edge(p[0], p[1], p[2].0, p[2].1);
        if area == 0.0 {
            return;
        }
        let xs = [p[0].0, p[1].0, p[2].0];
        let ys = [p[0].1, p[1].1, p[2].1];
        let min = |v: [f64; 3]| v.iter().copied().fold(f64::INFINITY, f64::min);
        let max = |v: [f64; 3]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        self.fill_where(min(ys), max(ys), min(xs), max(xs), color, |x, y| {
            let w = [edge(p[1], p[2], x, y), edge(p[2], p[0], x, y), edge(p[0], p[1], x, y)];
            w.iter().all(|v| v * area >= 0.0)
        });
    }

    pub fn into_observation(self) -> Observation {
        Observation::new(self.height, self.width, self.pixels).expect("canvas buffer matches its shape")
    }
}
