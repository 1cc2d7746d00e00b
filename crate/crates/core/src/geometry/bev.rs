use std::cmp::Ordering;

use crate::Scalar;

use super::Box3;

/// Counter-clockwise BEV footprint of a box.
pub fn bev_polygon<T: Scalar>(b: &Box3<T>) -> [[T; 2]; 4] {
    let c = b.corners();
    [
        [c[0].x, c[0].y],
        [c[1].x, c[1].y],
        [c[2].x, c[2].y],
        [c[3].x, c[3].y],
    ]
}

/// Shoelace area, positive for counter-clockwise polygons.
pub fn polygon_area<T: Scalar>(poly: &[[T; 2]]) -> T {
    if poly.len() < 3 {
        return T::zero();
    }
    let mut acc = T::zero();
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc = acc + (a[0] * b[1] - b[0] * a[1]);
    }
    acc * T::lit(0.5)
}

fn cross<T: Scalar>(o: [T; 2], a: [T; 2], b: [T; 2]) -> T {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn segment_line_intersection<T: Scalar>(p: [T; 2], q: [T; 2], a: [T; 2], b: [T; 2]) -> [T; 2] {
    let dp = cross(a, b, p);
    let dq = cross(a, b, q);
    let denom = dp - dq;
    if denom == T::zero() {
        return p;
    }
    let t = dp / denom;
    [p[0] + (q[0] - p[0]) * t, p[1] + (q[1] - p[1]) * t]
}

/// Area of the intersection of two convex counter-clockwise polygons
/// (Sutherland-Hodgman clipping of `subject` by every edge of `clip`).
pub fn convex_intersection_area<T: Scalar>(subject: &[[T; 2]], clip: &[[T; 2]]) -> T {
    let mut output: Vec<[T; 2]> = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(a, b, cur) >= T::zero();
            let prev_in = cross(a, b, prev) >= T::zero();
            if cur_in {
                if !prev_in {
                    output.push(segment_line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if prev_in {
                output.push(segment_line_intersection(prev, cur, a, b));
            }
        }
    }
    polygon_area(&output).max(T::zero())
}

fn canonical_order<T: Scalar>(a: &Box3<T>, b: &Box3<T>) -> Ordering {
    let ka = [a.center.x, a.center.y, a.w, a.l, a.yaw];
    let kb = [b.center.x, b.center.y, b.w, b.l, b.yaw];
    ka.iter()
        .zip(kb.iter())
        .map(|(x, y)| x.partial_cmp(y).unwrap_or(Ordering::Equal))
        .find(|o| *o != Ordering::Equal)
        .unwrap_or(Ordering::Equal)
}

/// IoU of the yaw-rotated footprints in the ground plane; height is ignored.
///
/// The operands are put in a canonical order first, so the result is
/// bit-for-bit symmetric.
pub fn iou_bev<T: Scalar>(a: &Box3<T>, b: &Box3<T>) -> T {
    let (a, b) = if canonical_order(a, b) == Ordering::Greater {
        (b, a)
    } else {
        (a, b)
    };
    if a.center.bev_distance(&b.center) > a.bev_radius() + b.bev_radius() {
        return T::zero();
    }
    let pa = bev_polygon(a);
    let pb = bev_polygon(b);
    let inter = convex_intersection_area(&pa, &pb);
    if inter <= T::zero() {
        return T::zero();
    }
    let union = a.w * a.l + b.w * b.l - inter;
    if union <= T::zero() {
        return T::zero();
    }
    (inter / union).max(T::zero()).min(T::one())
}

/// Greedy non-maximum suppression on BEV IoU.
///
/// Boxes are visited by descending score (lower input index first on ties);
/// a box is kept unless it overlaps an already kept box by more than
/// `iou_threshold`. The result is in visiting order.
pub fn nms<T: Scalar>(boxes: &[Box3<T>], iou_threshold: T) -> Vec<Box3<T>> {
    let mut order: Vec<usize> = (0..boxes.len()).collect();
    order.sort_by(|&i, &j| {
        boxes[j]
            .score
            .partial_cmp(&boxes[i].score)
            .unwrap_or(Ordering::Equal)
            .then(i.cmp(&j))
    });
    let mut kept: Vec<Box3<T>> = Vec::new();
    for i in order {
        let candidate = &boxes[i];
        if kept.iter().all(|k| iou_bev(k, candidate) <= iou_threshold) {
            kept.push(*candidate);
        }
    }
    kept
}
