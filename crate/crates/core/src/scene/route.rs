use crate::error::{Error, Result};
use crate::geometry::{self, Point};
use crate::tensor::Tensor;

/// The ego route resampled to a fixed number of points, equally spaced in
/// arc length. Its row count equals the model's coordinate dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct RouteEmbedding {
    pub points: Vec<Point>,
}

impl RouteEmbedding {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::from_points(&self.points)
    }
}

pub(crate) fn arc_length(polyline: &[Point]) -> f64 {
    polyline
        .windows(2)
        .map(|w| geometry::dist(w[0], w[1]))
        .sum()
}

/// Resamples `polyline` to `count` points at arc-length fractions
/// `0, 1/(count−1), …, 1`. Both endpoints are copied exactly.
pub fn resample_route(polyline: &[Point], count: usize) -> Result<RouteEmbedding> {
    if count < 2 {
        return Err(Error::validation(format!(
            "route resampling needs at least 2 points, got {count}"
        )));
    }
    let total = arc_length(polyline);
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::validation(
            "degenerate route: polyline has zero arc length",
        ));
    }

    let mut points = Vec::with_capacity(count);
    points.push(polyline[0]);
    let mut seg = 0;
    let mut seg_start = 0.0;
    let mut seg_len = geometry::dist(polyline[0], polyline[1]);
    for k in 1..count - 1 {
        let target = total * k as f64 / (count - 1) as f64;
        while seg + 2 < polyline.len() && seg_start + seg_len < target {
            seg_start += seg_len;
            seg += 1;
            seg_len = geometry::dist(polyline[seg], polyline[seg + 1]);
        }
        let f = if seg_len > 0.0 {
            ((target - seg_start) / seg_len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        points.push(geometry::lerp(polyline[seg], polyline[seg + 1], f));
    }
    points.push(*polyline.last().expect("non-empty polyline"));
    Ok(RouteEmbedding { points })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Se2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: Point, b: Point) -> bool {
        geometry::dist(a, b) < 1e-12
    }

    /// Arc-length coordinate of `p` on `polyline`, found by projecting onto
    /// the nearest segment.
    fn arc_coordinate(polyline: &[Point], p: Point) -> f64 {
        let mut best = (f64::INFINITY, 0.0);
        let mut start = 0.0;
        for w in polyline.windows(2) {
            let d = geometry::sub(w[1], w[0]);
            let len2 = geometry::dot(d, d);
            let f = (geometry::dot(geometry::sub(p, w[0]), d) / len2).clamp(0.0, 1.0);
            let q = geometry::lerp(w[0], w[1], f);
            let e = geometry::dist(p, q);
            if e < best.0 {
                best = (e, start + f * len2.sqrt());
            }
            start += len2.sqrt();
        }
        best.1
    }

    #[test]
    fn uniform_segment() {
        let r = resample_route(&[[0.0, 0.0], [3.0, 0.0]], 4).unwrap();
        let expect = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]];
        for (a, b) in r.points.iter().zip(expect) {
            assert!(close(*a, b), "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn right_angle_midpoint_is_corner() {
        let r = resample_route(&[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]], 3).unwrap();
        assert_eq!(r.points, vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]);
    }

    #[test]
    fn degenerate_polyline_rejected() {
        assert!(matches!(
            resample_route(&[[2.0, 2.0], [2.0, 2.0], [2.0, 2.0]], 8),
            Err(Error::Validation(_))
        ));
        assert!(resample_route(&[[0.0, 0.0], [1.0, 0.0]], 1).is_err());
    }

    #[test]
    fn duplicate_vertices_are_skipped() {
        let r = resample_route(&[[0.0, 0.0], [0.0, 0.0], [2.0, 0.0], [2.0, 0.0]], 3).unwrap();
        assert!(close(r.points[1], [1.0, 0.0]));
    }

    #[test]
    fn random_polyline_has_equal_spacing() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let poly: Vec<Point> = (0..10)
            .map(|_| [rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0)])
            .collect();
        let r = resample_route(&poly, 64).unwrap();
        assert_eq!(r.len(), 64);
        assert_eq!(r.points[0], poly[0]);
        assert_eq!(r.points[63], poly[9]);
        // Independent route: project each sample back onto the polyline.
        let s: Vec<f64> = r.points.iter().map(|&p| arc_coordinate(&poly, p)).collect();
        let step = arc_length(&poly) / 63.0;
        for w in s.windows(2) {
            assert!(
                (w[1] - w[0] - step).abs() < 1e-9,
                "{} vs {}",
                w[1] - w[0],
                step
            );
        }
    }

    proptest! {
        #[test]
        fn resampling_commutes_with_se2(theta in -7.0..7.0f64, tx in -100.0..100.0f64,
                                        ty in -100.0..100.0f64, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let poly: Vec<Point> = (0..6)
                .map(|_| [rng.gen_range(-30.0..30.0), rng.gen_range(-30.0..30.0)])
                .collect();
            let g = Se2::new(theta, [tx, ty]);
            let a = resample_route(&g.apply_all(&poly), 16).unwrap();
            let b = g.apply_all(&resample_route(&poly, 16).unwrap().points);
            for (p, q) in a.points.iter().zip(&b) {
                prop_assert!(geometry::dist(*p, *q) < 1e-12);
            }
        }
    }
}
