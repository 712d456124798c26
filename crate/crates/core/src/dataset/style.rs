//! Domain styles for the procedural shape datasets.
//!
//! Styles decide backgrounds and glyph colors. Two of them plant the
//! background shortcut studied by the shade/texture experiments: their
//! backgrounds are a deterministic function of the class id, so a trivial
//! background read-out predicts the class perfectly on the training domain.

use serde::{Deserialize, Serialize};

use crate::dataset::glyph::{Geometry, Glyph};
use crate::rng::Stream;

/// Subpixel grid used for coverage antialiasing.
const SUPERSAMPLE: usize = 3;

/// Rendering style of one domain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Style {
    /// White glyph on black; the neutral domain.
    Plain,
    /// White glyph over a gray background whose level encodes the class.
    ClassShade,
    /// White glyph over 45-degree stripes whose period encodes the class.
    ClassTexture,
    /// One-pixel glyph boundary on near-white.
    SketchOutline,
    /// Saturated class-hue fill with a two-pixel dark outline on flat gray.
    CartoonFlat,
    /// Class-hue fill with per-pixel noise over a two-color gradient.
    PaintJitter,
}

impl Style {
    pub fn name(self) -> &'static str {
        match self {
            Style::Plain => "plain",
            Style::ClassShade => "class-shade",
            Style::ClassTexture => "class-texture",
            Style::SketchOutline => "sketch-outline",
            Style::CartoonFlat => "cartoon-flat",
            Style::PaintJitter => "paint-jitter",
        }
    }

    pub fn parse(name: &str) -> Option<Style> {
        match name {
            "plain" => Some(Style::Plain),
            "class-shade" => Some(Style::ClassShade),
            "class-texture" => Some(Style::ClassTexture),
            "sketch-outline" => Some(Style::SketchOutline),
            "cartoon-flat" => Some(Style::CartoonFlat),
            "paint-jitter" => Some(Style::PaintJitter),
            _ => None,
        }
    }
}

/// Background gray level planted for class `k` by [`Style::ClassShade`].
pub fn shade_level(class_id: usize) -> f64 {
    0.05 + 0.09 * class_id as f64
}

/// Stripe period in pixels planted for class `k` by [`Style::ClassTexture`].
pub fn texture_period(class_id: usize) -> usize {
    class_id + 2
}

/// Saturated RGB color on the hue wheel for class `k` of `class_count`.
pub fn class_hue(class_id: usize, class_count: usize) -> [f64; 3] {
    let h = 6.0 * class_id as f64 / class_count.max(1) as f64;
    let sector = h.floor() as usize % 6;
    let f = h - h.floor();
    match sector {
        0 => [1.0, f, 0.0],
        1 => [1.0 - f, 1.0, 0.0],
        2 => [0.0, 1.0, f],
        3 => [0.0, 1.0 - f, 1.0],
        4 => [f, 0.0, 1.0],
        _ => [1.0, 0.0, 1.0 - f],
    }
}

/// Draws geometry jitter: position within +-10% of the half-extent, scale
/// within +-15%, rotation within +-10 degrees.
pub fn jittered_geometry(height: usize, width: usize, stream: &mut Stream) -> Geometry {
    let base = 0.32 * height.min(width) as f64;
    let dx = stream.range(-0.1, 0.1) * base;
    let dy = stream.range(-0.1, 0.1) * base;
    let scale = base * stream.range(0.85, 1.15);
    let rot = stream.range(-10.0, 10.0) * std::f64::consts::PI / 180.0;
    Geometry {
        cx: width as f64 / 2.0 + dx,
        cy: height as f64 / 2.0 + dy,
        scale,
        rot,
    }
}

/// Renders one sample into a `[3, h, w]` row-major buffer with values in
/// `[0, 1]`. The stream is only consumed by styles that draw per-pixel noise.
pub fn render(
    style: Style,
    class_id: usize,
    class_count: usize,
    glyph: Glyph,
    geom: Geometry,
    height: usize,
    width: usize,
    stream: &mut Stream,
) -> Vec<f64> {
    let mut coverage = vec![0.0f64; height * width];
    for i in 0..height {
        for j in 0..width {
            coverage[i * width + j] = geom.coverage(glyph, i, j, SUPERSAMPLE);
        }
    }

    let mut out = vec![0.0f64; 3 * height * width];
    let plane = height * width;
    let mut put = |i: usize, j: usize, rgb: [f64; 3]| {
        for (c, v) in rgb.into_iter().enumerate() {
            out[c * plane + i * width + j] = v.clamp(0.0, 1.0);
        }
    };

    match style {
        Style::Plain => {
            for i in 0..height {
                for j in 0..width {
                    let v = coverage[i * width + j];
                    put(i, j, [v, v, v]);
                }
            }
        }
        Style::ClassShade => {
            let bg = shade_level(class_id);
            for i in 0..height {
                for j in 0..width {
                    let a = coverage[i * width + j];
                    let v = bg * (1.0 - a) + 1.0 * a;
                    put(i, j, [v, v, v]);
                }
            }
        }
        Style::ClassTexture => {
            let period = texture_period(class_id);
            for i in 0..height {
                for j in 0..width {
                    let stripe = (i + j) % period < period.div_ceil(2);
                    let bg = if stripe { 0.2 } else { 0.6 };
                    let a = coverage[i * width + j];
                    let v = bg * (1.0 - a) + 1.0 * a;
                    put(i, j, [v, v, v]);
                }
            }
        }
        Style::SketchOutline => {
            let inside =
                |i: usize, j: usize| -> bool { coverage[i * width + j] >= 0.5 };
            for i in 0..height {
                for j in 0..width {
                    let mut v = 0.95;
                    if inside(i, j) {
                        let at_edge = (i == 0 || !inside(i - 1, j))
                            || (i + 1 >= height || !inside(i + 1, j))
                            || (j == 0 || !inside(i, j - 1))
                            || (j + 1 >= width || !inside(i, j + 1));
                        if at_edge {
                            v = 0.05;
                        }
                    }
                    put(i, j, [v, v, v]);
                }
            }
        }
        Style::CartoonFlat => {
            let fill = class_hue(class_id, class_count);
            let bg = [0.85, 0.85, 0.85];
            let inside =
                |i: usize, j: usize| -> bool { coverage[i * width + j] >= 0.5 };
            for i in 0..height {
                for j in 0..width {
                    let a = coverage[i * width + j];
                    let mut color = fill;
                    if inside(i, j) {
                        // two-pixel outline: an outside pixel within
                        // Chebyshev distance 2
                        let mut edge = false;
                        'scan: for di in -2i64..=2 {
                            for dj in -2i64..=2 {
                                let ni = i as i64 + di;
                                let nj = j as i64 + dj;
                                if ni < 0
                                    || nj < 0
                                    || ni >= height as i64
                                    || nj >= width as i64
                                    || !inside(ni as usize, nj as usize)
                                {
                                    edge = true;
                                    break 'scan;
                                }
                            }
                        }
                        if edge {
                            color = [0.05, 0.05, 0.05];
                        }
                    }
                    put(
                        i,
                        j,
                        [
                            bg[0] * (1.0 - a) + color[0] * a,
                            bg[1] * (1.0 - a) + color[1] * a,
                            bg[2] * (1.0 - a) + color[2] * a,
                        ],
                    );
                }
            }
        }
        Style::PaintJitter => {
            let fill = class_hue(class_id, class_count);
            let top = [0.20, 0.30, 0.70];
            let bottom = [0.90, 0.60, 0.20];
            for i in 0..height {
                let t = i as f64 / (height - 1).max(1) as f64;
                for j in 0..width {
                    let a = coverage[i * width + j];
                    let bg = [
                        top[0] * (1.0 - t) + bottom[0] * t,
                        top[1] * (1.0 - t) + bottom[1] * t,
                        top[2] * (1.0 - t) + bottom[2] * t,
                    ];
                    let noisy = [
                        fill[0] + 0.1 * stream.normal(),
                        fill[1] + 0.1 * stream.normal(),
                        fill[2] + 0.1 * stream.normal(),
                    ];
                    put(
                        i,
                        j,
                        [
                            bg[0] * (1.0 - a) + noisy[0] * a,
                            bg[1] * (1.0 - a) + noisy[1] * a,
                            bg[2] * (1.0 - a) + noisy[2] * a,
                        ],
                    );
                }
            }
        }
    }
    out
}
