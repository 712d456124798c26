//! Procedural glyph shapes.
//!
//! Ten shapes play the role of the ten digit classes. Each is defined by a
//! membership predicate over unit coordinates: the glyph lives inside the
//! square `[-1, 1]^2` and every shape stays within radius 0.9 of the origin,
//! which keeps rendered glyphs clear of the image border after jitter.

/// The class-indexed shape vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Glyph {
    Disk,
    Ring,
    Cross,
    Bar,
    Triangle,
    Square,
    Ell,
    Tee,
    Diamond,
    DotPair,
}

pub const GLYPHS: [Glyph; 10] = [
    Glyph::Disk,
    Glyph::Ring,
    Glyph::Cross,
    Glyph::Bar,
    Glyph::Triangle,
    Glyph::Square,
    Glyph::Ell,
    Glyph::Tee,
    Glyph::Diamond,
    Glyph::DotPair,
];

impl Glyph {
    pub fn for_class(class_id: usize) -> Option<Glyph> {
        GLYPHS.get(class_id).copied()
    }

    /// Membership test in glyph-local unit coordinates.
    pub fn contains(self, x: f64, y: f64) -> bool {
        match self {
            Glyph::Disk => x * x + y * y <= 0.62 * 0.62,
            Glyph::Ring => {
                let r2 = x * x + y * y;
                (0.42 * 0.42..=0.72 * 0.72).contains(&r2)
            }
            Glyph::Cross => {
                (x.abs() <= 0.22 && y.abs() <= 0.75) || (y.abs() <= 0.22 && x.abs() <= 0.75)
            }
            Glyph::Bar => x.abs() <= 0.22 && y.abs() <= 0.8,
            Glyph::Triangle => {
                // vertices (0, 0.75), (-0.65, -0.6), (0.65, -0.6)
                y >= -0.6 && y <= 0.75 && x.abs() <= 0.65 * (0.75 - y) / 1.35
            }
            Glyph::Square => x.abs() <= 0.55 && y.abs() <= 0.55,
            Glyph::Ell => {
                let stem = (x + 0.32).abs() <= 0.18 && (-0.7..=0.7).contains(&y);
                let foot = (-0.7..=-0.36).contains(&y) && (-0.5..=0.5).contains(&x);
                stem || foot
            }
            Glyph::Tee => {
                let cap = (0.36..=0.7).contains(&y) && x.abs() <= 0.55;
                let stem = x.abs() <= 0.18 && (-0.7..=0.7).contains(&y);
                cap || stem
            }
            Glyph::Diamond => x.abs() + y.abs() <= 0.88,
            Glyph::DotPair => {
                let left = (x + 0.4) * (x + 0.4) + y * y <= 0.3 * 0.3;
                let right = (x - 0.4) * (x - 0.4) + y * y <= 0.3 * 0.3;
                left || right
            }
        }
    }
}

/// Placement of a glyph in pixel space.
#[derive(Debug, Clone, Copy)]
pub struct Geometry {
    /// Center in pixel coordinates.
    pub cx: f64,
    pub cy: f64,
    /// Half-extent in pixels (unit length 1 maps to this many pixels).
    pub scale: f64,
    /// Rotation in radians, applied counterclockwise to the glyph.
    pub rot: f64,
}

impl Geometry {
    /// Fraction of an `ss x ss` subpixel grid of pixel `(row, col)` covered
    /// by the glyph.
    pub fn coverage(&self, glyph: Glyph, row: usize, col: usize, ss: usize) -> f64 {
        let (sin, cos) = self.rot.sin_cos();
        let mut hits = 0usize;
        for a in 0..ss {
            for b in 0..ss {
                let px = col as f64 + (b as f64 + 0.5) / ss as f64;
                let py = row as f64 + (a as f64 + 0.5) / ss as f64;
                let dx = (px - self.cx) / self.scale;
                let dy = (py - self.cy) / self.scale;
                // rotate into glyph space
                let gx = cos * dx + sin * dy;
                let gy = -sin * dx + cos * dy;
                if glyph.contains(gx, gy) {
                    hits += 1;
                }
            }
        }
        hits as f64 / (ss * ss) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ten_glyphs_cover_ten_classes() {
        for k in 0..10 {
            assert!(Glyph::for_class(k).is_some());
        }
        assert!(Glyph::for_class(10).is_none());
    }

    #[test]
    fn shapes_fit_inside_radius() {
        // every glyph point stays within radius 0.9 so jittered renders
        // cannot touch the image border
        for glyph in GLYPHS {
            for i in 0..200 {
                for j in 0..200 {
                    let x = -1.0 + 2.0 * (i as f64 + 0.5) / 200.0;
                    let y = -1.0 + 2.0 * (j as f64 + 0.5) / 200.0;
                    if glyph.contains(x, y) {
                        assert!(
                            x * x + y * y <= 0.9 * 0.9,
                            "{glyph:?} exceeds radius at ({x}, {y})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn glyphs_are_distinct() {
        // crude pixel-level distinctness check at a fixed placement
        let geom = Geometry {
            cx: 8.0,
            cy: 8.0,
            scale: 5.0,
            rot: 0.0,
        };
        let mut renders: Vec<Vec<bool>> = Vec::new();
        for glyph in GLYPHS {
            let mut mask = Vec::new();
            for i in 0..16 {
                for j in 0..16 {
                    mask.push(geom.coverage(glyph, i, j, 2) >= 0.5);
                }
            }
            assert!(
                !renders.contains(&mask),
                "{glyph:?} renders identically to an earlier glyph"
            );
            renders.push(mask);
        }
    }

    #[test]
    fn disk_is_rotation_invariant() {
        let a = Geometry {
            cx: 8.0,
            cy: 8.0,
            scale: 5.0,
            rot: 0.0,
        };
        let b = Geometry {
            rot: std::f64::consts::PI,
            ..a
        };
        for i in 0..16 {
            for j in 0..16 {
                let ca = a.coverage(Glyph::Disk, i, j, 3);
                let cb = b.coverage(Glyph::Disk, i, j, 3);
                assert!((ca - cb).abs() < 1e-9);
            }
        }
    }
}
