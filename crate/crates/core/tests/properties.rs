use std::f64::consts::PI;

use frustum_forge::baselines::{dbscan, logit_fuse};
use frustum_forge::geometry::{from_local, in_box, iou_bev, nms, to_local};
use frustum_forge::{normalize_angle, Box3D, Point3D};
use proptest::prelude::*;

fn arb_box() -> impl Strategy<Value = Box3D> {
    (
        -20.0..20.0f64,
        -20.0..20.0f64,
        -2.0..2.0f64,
        0.3..5.0f64,
        0.3..8.0f64,
        0.3..4.0f64,
        -4.0..4.0f64,
        0.0..1.0f64,
    )
        .prop_map(|(x, y, z, w, l, h, yaw, score)| {
            Box3D::new(Point3D::new(x, y, z), [w, l, h], yaw, 0, score).unwrap()
        })
}

proptest! {
    #[test]
    fn angles_land_in_half_open_range(a in -1e4..1e4f64) {
        let n = normalize_angle(a);
        prop_assert!((-PI..PI).contains(&n));
        let k = ((a - n) / (2.0 * PI)).round();
        prop_assert!((a - n - 2.0 * PI * k).abs() < 1e-7);
    }

    #[test]
    fn bev_iou_is_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let ab = iou_bev(&a, &b);
        let ba = iou_bev(&b, &a);
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!((-1e-12..=1.0 + 1e-12).contains(&ab));
        prop_assert!((iou_bev(&a, &a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn local_frame_round_trips(b in arb_box(), x in -30.0..30.0f64, y in -30.0..30.0f64, z in -5.0..5.0f64) {
        let p = Point3D::new(x, y, z);
        let q = from_local(to_local(p, &b), &b);
        prop_assert!((p.x - q.x).abs() < 1e-9 && (p.y - q.y).abs() < 1e-9 && (p.z - q.z).abs() < 1e-9);
        prop_assert!(in_box(b.center, &b));
    }

    #[test]
    fn nms_output_is_pairwise_separated(boxes in prop::collection::vec(arb_box(), 0..25), thr in 0.05..0.9f64) {
        let kept = nms(&boxes, thr);
        prop_assert!(kept.len() <= boxes.len());
        for i in 0..kept.len() {
            for j in i + 1..kept.len() {
                prop_assert!(iou_bev(&kept[i], &kept[j]) <= thr);
            }
        }
        if let Some(best) = boxes.iter().map(|b| b.score).reduce(f64::max) {
            prop_assert!(kept.iter().any(|k| k.score == best));
        }
    }

    #[test]
    fn fusion_is_a_threshold_in_image_score(p in 0.0..=1.0f64, q in 0.0..=1.0f64, gamma in 0.0..=1.0f64) {
        let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
        let at_lo = logit_fuse(lo, 1, 2, gamma);
        let at_hi = logit_fuse(hi, 1, 2, gamma);
        prop_assert!(!(at_lo == 2 && at_hi == 1));
        prop_assert_eq!(logit_fuse(p, 7, 7, gamma), 7);
    }

    #[test]
    fn dbscan_partition_ignores_input_order(
        pts in prop::collection::vec((0.0..10.0f64, 0.0..10.0f64, 0.0..2.0f64), 1..120),
        seed in any::<u64>(),
    ) {
        let points: Vec<[f64; 3]> = pts.iter().map(|&(x, y, z)| [x, y, z]).collect();
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut s = seed;
        for i in (1..order.len()).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let shuffled: Vec<[f64; 3]> = order.iter().map(|&i| points[i]).collect();
        let a = dbscan(&points, 1.0, 4);
        let b = dbscan(&shuffled, 1.0, 4);
        let core_of = |labels: &[i64], pts: &[[f64; 3]], i: usize| {
            pts.iter().filter(|q| {
                let d: f64 = (0..3).map(|k| (q[k] - pts[i][k]).powi(2)).sum();
                d.sqrt() <= 1.0
            }).count() >= 4 && labels[i] >= 0
        };
        for (j, &i) in order.iter().enumerate() {
            prop_assert_eq!(core_of(&a, &points, i), core_of(&b, &shuffled, j));
        }
        for x in 0..points.len() {
            for y in 0..points.len() {
                if core_of(&a, &points, x) && core_of(&a, &points, y) {
                    let jx = order.iter().position(|&o| o == x).unwrap();
                    let jy = order.iter().position(|&o| o == y).unwrap();
                    prop_assert_eq!(a[x] == a[y], b[jx] == b[jy]);
                }
            }
        }
    }
}
