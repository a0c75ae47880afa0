//! Planar convex hulls (Andrew's monotone chain).

#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::vec::Vec;


fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Indices of the convex hull of `points`, counter-clockwise, starting at
/// the lexicographically smallest point. Points lying on a hull edge are
/// dropped, as are exact duplicates (the first occurrence is kept).
///
/// Degenerate inputs yield degenerate hulls: one index for a single distinct
/// point, the two extreme indices when every point is collinear.
pub fn convex_hull_2d(points: &[[f64; 2]]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| {
        points[i][0]
            .total_cmp(&points[j][0])
            .then(points[i][1].total_cmp(&points[j][1]))
            .then(i.cmp(&j))
    });
    order.dedup_by(|a, b| points[*a] == points[*b]);
    if order.len() <= 2 {
        return order;
    }

    let mut hull: Vec<usize> = Vec::with_capacity(order.len() + 1);
    for &i in &order {
        while hull.len() >= 2
            && cross(points[hull[hull.len() - 2]], points[hull[hull.len() - 1]], points[i]) <= 0.0
        {
            hull.pop();
        }
        hull.push(i);
    }
    let lower_len = hull.len() + 1;
    for &i in order.iter().rev().skip(1) {
        while hull.len() >= lower_len
            && cross(points[hull[hull.len() - 2]], points[hull[hull.len() - 1]], points[i]) <= 0.0
        {
            hull.pop();
        }
        hull.push(i);
    }
    // the last point repeats the first
    hull.pop();
    hull
}

/// Length of the closed boundary through `hull` (a two-point hull counts
/// its segment twice).
pub fn hull_perimeter(points: &[[f64; 2]], hull: &[usize]) -> f64 {
    if hull.len() < 2 {
        return 0.0;
    }
    (0..hull.len())
        .map(|k| {
            let a = points[hull[k]];
            let b = points[hull[(k + 1) % hull.len()]];
            ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
        })
        .sum()
}
