//! Planar roto-translations acting on row vectors: `p ↦ pR(θ) + t`.

use std::f64::consts::PI;

pub type Point = [f64; 2];

/// Rotation by `theta` (counter-clockwise) followed by translation `t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Se2 {
    pub theta: f64,
    pub t: Point,
}

impl Se2 {
    pub const IDENTITY: Se2 = Se2 {
        theta: 0.0,
        t: [0.0, 0.0],
    };

    pub fn new(theta: f64, t: Point) -> Self {
        Self { theta, t }
    }

    pub fn rotation(theta: f64) -> Self {
        Self {
            theta,
            t: [0.0, 0.0],
        }
    }

    pub fn translation(t: Point) -> Self {
        Self { theta: 0.0, t }
    }

    pub fn from_degrees(deg: f64, t: Point) -> Self {
        Self::new(deg * PI / 180.0, t)
    }

    pub fn rotate(&self, p: Point) -> Point {
        rotate(p, self.theta)
    }

    pub fn apply(&self, p: Point) -> Point {
        let r = self.rotate(p);
        [r[0] + self.t[0], r[1] + self.t[1]]
    }

    /// The element `g⁻¹` with `g⁻¹(g(p)) = p`: `(−θ, −tR(−θ))`.
    pub fn inverse(&self) -> Self {
        let t = rotate(self.t, -self.theta);
        Self {
            theta: -self.theta,
            t: [-t[0], -t[1]],
        }
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &Se2) -> Self {
        Self {
            theta: first.theta + self.theta,
            t: self.apply(first.t),
        }
    }

    pub fn apply_all(&self, points: &[Point]) -> Vec<Point> {
        points.iter().map(|&p| self.apply(p)).collect()
    }
}

pub fn rotate(p: Point, theta: f64) -> Point {
    let (s, c) = theta.sin_cos();
    [p[0] * c - p[1] * s, p[0] * s + p[1] * c]
}

pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn add(a: Point, b: Point) -> Point {
    [a[0] + b[0], a[1] + b[1]]
}

pub fn scale(a: Point, f: f64) -> Point {
    [a[0] * f, a[1] * f]
}

pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

pub fn dist(a: Point, b: Point) -> f64 {
    norm(sub(a, b))
}

pub fn lerp(a: Point, b: Point, f: f64) -> Point {
    [a[0] + (b[0] - a[0]) * f, a[1] + (b[1] - a[1]) * f]
}

pub fn mean(points: &[Point]) -> Point {
    let n = points.len().max(1) as f64;
    let s = points.iter().fold([0.0, 0.0], |acc, &p| add(acc, p));
    [s[0] / n, s[1] / n]
}

/// Mean pointwise distance of two equally long tracks; 0 when empty.
pub fn mean_dist(a: &[Point], b: &[Point]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    if a.is_empty() {
        return 0.0;
    }
    a.iter().zip(b).map(|(&p, &q)| dist(p, q)).sum::<f64>() / a.len() as f64
}
