//! Rotated bird's-eye-view and 3D intersection over union.

use crate::boxes::{signed_area, OrientedBox3D};

/// Clips a polygon against a convex counter-clockwise clip polygon.
/// Points on a clip edge count as inside.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut out: Vec<[f64; 2]> = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if out.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % n];
        let side = |p: [f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut out);
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let sc = side(cur);
            let sp = side(prev);
            if sc >= 0.0 {
                if sp < 0.0 {
                    out.push(intersect(prev, cur, sp, sc));
                }
                out.push(cur);
            } else if sp >= 0.0 {
                out.push(intersect(prev, cur, sp, sc));
            }
        }
    }
    out
}

fn intersect(p: [f64; 2], q: [f64; 2], sp: f64, sq: f64) -> [f64; 2] {
    let t = sp / (sp - sq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

/// Area of the overlap of the two ground-plane rectangles.
pub fn bev_intersection_area(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    let poly = clip_convex(&a.bev_corners(), &b.bev_corners());
    if poly.len() < 3 {
        return 0.0;
    }
    signed_area(&poly).abs()
}

pub fn iou_bev(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    let inter = bev_intersection_area(a, b);
    let union = a.length * a.width + b.length * b.width - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

pub fn iou_3d(a: &OrientedBox3D, b: &OrientedBox3D) -> f64 {
    let (a0, a1) = a.y_range();
    let (b0, b1) = b.y_range();
    let dy = (a1.min(b1) - a0.max(b0)).max(0.0);
    if dy == 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dy;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn bx(x: f64, y: f64, z: f64, l: f64, w: f64, h: f64, yaw: f64) -> OrientedBox3D {
        OrientedBox3D::new([x, y, z], l, w, h, yaw).unwrap()
    }

    #[test]
    fn identical_and_disjoint() {
        let a = bx(1.0, 0.5, 10.0, 4.0, 2.0, 1.5, 0.3);
        assert!((iou_bev(&a, &a) - 1.0).abs() < 1e-12);
        assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-12);
        let b = bx(20.0, 0.5, 10.0, 4.0, 2.0, 1.5, 0.3);
        assert_eq!(iou_bev(&a, &b), 0.0);
        let c = bx(1.0, 5.0, 10.0, 4.0, 2.0, 1.5, 0.3);
        assert_eq!(iou_3d(&a, &c), 0.0);
        assert!((iou_bev(&a, &c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn axis_aligned_analytic() {
        // 4x2 footprints offset by 1 m along x: overlap 3x2
        let a = bx(0.0, 0.0, 10.0, 4.0, 2.0, 2.0, 0.0);
        let b = bx(1.0, 0.0, 10.0, 4.0, 2.0, 2.0, 0.0);
        assert!((iou_bev(&a, &b) - 6.0 / 10.0).abs() < 1e-9);
        // half vertical overlap
        let c = bx(1.0, 1.0, 10.0, 4.0, 2.0, 2.0, 0.0);
        assert!((iou_3d(&a, &c) - 6.0 / (16.0 + 16.0 - 6.0)).abs() < 1e-9);
        // touching edges: zero area
        let d = bx(4.0, 0.0, 10.0, 4.0, 2.0, 2.0, 0.0);
        assert!(iou_bev(&a, &d).abs() < 1e-12);
        // nested
        let e = bx(0.0, 0.0, 10.0, 2.0, 1.0, 2.0, 0.0);
        assert!((iou_bev(&a, &e) - 2.0 / 8.0).abs() < 1e-9);
    }

    #[test]
    fn rotated_square_closed_form() {
        // unit squares, same center, 45 degrees: octagon of area 2(sqrt2 - 1)
        let a = bx(0.0, 0.0, 5.0, 1.0, 1.0, 1.0, 0.0);
        let b = bx(0.0, 0.0, 5.0, 1.0, 1.0, 1.0, PI / 4.0);
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        assert!((iou_bev(&a, &b) - inter / (2.0 - inter)).abs() < 1e-12);
    }

    fn monte_carlo_bev(a: &OrientedBox3D, b: &OrientedBox3D, n: usize, seed: u64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 2]> = a.bev_corners().iter().chain(b.bev_corners().iter()).copied().collect();
        let (x0, x1) = pts.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p[0]), hi.max(p[0])));
        let (z0, z1) = pts.iter().fold((f64::MAX, f64::MIN), |(lo, hi), p| (lo.min(p[1]), hi.max(p[1])));
        let (mut inter, mut union) = (0usize, 0usize);
        for _ in 0..n {
            let p = [rng.gen_range(x0..x1), a.center[1], rng.gen_range(z0..z1)];
            let q = [p[0], b.center[1], p[2]];
            let (ia, ib) = (a.contains(p, 0.0), b.contains(q, 0.0));
            inter += (ia && ib) as usize;
            union += (ia || ib) as usize;
        }
        inter as f64 / union as f64
    }

    #[test]
    fn unit_squares_at_45_degrees_match_sampling() {
        let a = bx(0.0, 0.0, 5.0, 1.0, 1.0, 1.0, 0.0);
        let b = bx(0.0, 0.0, 5.0, 1.0, 1.0, 1.0, PI / 4.0);
        let mc = monte_carlo_bev(&a, &b, 1_000_000, 3);
        assert!((iou_bev(&a, &b) - mc).abs() < 0.005);
    }

    proptest! {
        #[test]
        fn symmetric_bounded_and_rigid_invariant(
            seed in 0u64..100_000,
            tx in -20.0f64..20.0, tz in -20.0f64..20.0, dyaw in -PI..PI,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut r = || {
                bx(rng.gen_range(-2.0..2.0), 0.0, rng.gen_range(8.0..12.0),
                   rng.gen_range(0.5..5.0), rng.gen_range(0.5..3.0), 1.5, rng.gen_range(-PI..PI))
            };
            let a = r();
            let b = r();
            let ab = iou_bev(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert!((ab - iou_bev(&b, &a)).abs() < 1e-9);
            prop_assert!((iou_3d(&a, &b) - iou_3d(&b, &a)).abs() < 1e-9);
            // same vertical extent: 3D equals BEV
            prop_assert!((iou_3d(&a, &b) - ab).abs() < 1e-9);
            // rotate both about the origin by dyaw (yaw measured about +y),
            // then translate
            let (s, c) = dyaw.sin_cos();
            let mv = |o: &OrientedBox3D| {
                let x = c * o.center[0] + s * o.center[2];
                let z = -s * o.center[0] + c * o.center[2];
                bx(x + tx, o.center[1], z + tz, o.length, o.width, o.height, o.yaw + dyaw)
            };
            prop_assert!((iou_bev(&mv(&a), &mv(&b)) - ab).abs() < 1e-9);
        }
    }
}
