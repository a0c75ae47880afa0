//! Finite-difference verification of the refinement energies.
//!
//! Each check draws seeded random cases (a jittered grid mesh, random frozen
//! targets with mixed hull-point weights, a random smoothness reference) and
//! compares the analytic gradient against central differences.

#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::{TriangleMesh, Vec3};
use crate::refine::{
    energy_circumference, energy_euclidean, energy_geodesic, measurement_energy, EdgeTerm,
    FrozenConstraints, HullEdgeTerm, PointEncoding, Smoothness,
};
use crate::solver::finite_difference_gradient;

pub const DEFAULT_CONFIGURATIONS: usize = 20;
pub const DEFAULT_TOLERANCE: f64 = 1e-6;
const STEP: f64 = 1e-5;
const GRID: usize = 4;

/// One random evaluation point.
#[derive(Debug, Clone)]
pub struct GradientCase {
    pub coords: Vec<f64>,
    pub frozen: FrozenConstraints,
    pub smoothness: Smoothness,
    pub lambda: f64,
}

/// An energy with an analytic gradient.
pub trait CheckedTerm {
    fn name(&self) -> &'static str;
    /// Energy at `x`, with the gradient written to (not added into) `grad`.
    fn evaluate(&self, case: &GradientCase, x: &[f64], grad: &mut [f64]) -> f64;
}

macro_rules! stock_term {
    ($ty:ident, $name:literal, |$case:ident, $x:ident, $g:ident| $body:expr) => {
        #[derive(Debug, Clone, Copy, Default)]
        pub struct $ty;

        impl CheckedTerm for $ty {
            fn name(&self) -> &'static str {
                $name
            }

            fn evaluate(&self, $case: &GradientCase, $x: &[f64], $g: &mut [f64]) -> f64 {
                $g.iter_mut().for_each(|v| *v = 0.0);
                $body
            }
        }
    };
}

stock_term!(EuclideanTerm, "euclidean", |c, x, g| energy_euclidean(x, &c.frozen, g, 1.0));
stock_term!(GeodesicTerm, "geodesic", |c, x, g| energy_geodesic(x, &c.frozen, g, 1.0));
stock_term!(CircumferenceTerm, "circumference", |c, x, g| energy_circumference(x, &c.frozen, g, 1.0));
stock_term!(SmoothnessTerm, "smoothness", |c, x, g| c.smoothness.energy(x, g, 1.0));
stock_term!(CombinedTerm, "combined", |c, x, g| {
    let em = measurement_energy(x, &c.frozen, g, 1.0 - c.lambda);
    let es = c.smoothness.energy(x, g, c.lambda);
    (1.0 - c.lambda) * em + c.lambda * es
});

/// The five stock terms: the three measurement energies, smoothness and the
/// stage-two combination.
pub fn stock_terms() -> Vec<&'static dyn CheckedTerm> {
    vec![&EuclideanTerm, &GeodesicTerm, &CircumferenceTerm, &SmoothnessTerm, &CombinedTerm]
}

#[derive(Debug, Clone, PartialEq)]
pub struct TermCheck {
    pub term: &'static str,
    pub configurations: usize,
    pub max_relative_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub seed: u64,
    pub tolerance: f64,
    pub checks: Vec<TermCheck>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TermCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

/// Jittered `GRID x GRID` vertex grid with random heights.
fn random_mesh(rng: &mut ChaCha8Rng) -> TriangleMesh {
    let mut verts = Vec::with_capacity(GRID * GRID);
    for i in 0..GRID {
        for j in 0..GRID {
            verts.push(Vec3::new(
                i as f64 + rng.random_range(-0.2..0.2),
                j as f64 + rng.random_range(-0.2..0.2),
                rng.random_range(-0.5..0.5),
            ));
        }
    }
    let mut tris = Vec::new();
    for i in 0..GRID - 1 {
        for j in 0..GRID - 1 {
            let v = i * GRID + j;
            tris.push([v, v + GRID, v + 1]);
            tris.push([v + 1, v + GRID, v + GRID + 1]);
        }
    }
    TriangleMesh::new(verts, tris).expect("grid mesh is valid")
}

/// Draws one case; targets are scaled around current lengths so residuals
/// are of both signs.
pub fn random_case(rng: &mut ChaCha8Rng) -> GradientCase {
    let mesh = random_mesh(rng);
    let m = mesh.vertex_count();
    let coords = mesh.flatten();
    let at = |i: usize| Vec3::new(coords[3 * i], coords[3 * i + 1], coords[3 * i + 2]);
    let edges = mesh.edges();
    let mut frozen = FrozenConstraints::default();
    for _ in 0..4 {
        let a = rng.random_range(0..m);
        let b = (a + rng.random_range(1..m)) % m;
        let t = (at(a) - at(b)).norm() * rng.random_range(0.5..1.5);
        frozen.euclidean.push(EdgeTerm { a, b, target: t });
    }
    for _ in 0..6 {
        let (a, b) = edges[rng.random_range(0..edges.len())];
        let t = (at(a) - at(b)).norm() * rng.random_range(0.5..1.5);
        frozen.geodesic.push(EdgeTerm { a, b, target: t });
    }
    let hull_point = |rng: &mut ChaCha8Rng| {
        let (a, b) = edges[rng.random_range(0..edges.len())];
        let alpha = if rng.random_bool(0.25) { 1.0 } else { rng.random_range(0.0..1.0) };
        PointEncoding { a, b, alpha }
    };
    let first = hull_point(rng);
    let mut prev = first;
    for k in 0..5 {
        let next = if k == 4 { first } else { hull_point(rng) };
        frozen.circumference.push(HullEdgeTerm {
            from: prev,
            to: next,
            target: rng.random_range(0.5..2.0),
        });
        prev = next;
    }
    let reference = mesh.map_vertices(|p| {
        p + Vec3::new(
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
        )
    });
    GradientCase {
        coords,
        frozen,
        smoothness: Smoothness::new(&reference),
        lambda: rng.random_range(0.0..1.0),
    }
}

fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b) * (a - b)).sum();
    let scale: f64 = numeric.iter().map(|v| v * v).sum();
    if scale == 0.0 {
        diff.sqrt()
    } else {
        (diff / scale).sqrt()
    }
}

/// Checks `terms` on `configurations` cases drawn from `seed`. Every term
/// sees the same cases.
pub fn check_terms(
    terms: &[&dyn CheckedTerm],
    seed: u64,
    configurations: usize,
    tolerance: f64,
) -> GradcheckReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cases: Vec<GradientCase> = (0..configurations).map(|_| random_case(&mut rng)).collect();
    let checks = terms
        .iter()
        .map(|term| {
            let mut worst: f64 = 0.0;
            for case in &cases {
                let mut analytic = vec![0.0; case.coords.len()];
                term.evaluate(case, &case.coords, &mut analytic);
                let mut scratch = vec![0.0; case.coords.len()];
                let numeric =
                    finite_difference_gradient(|y| term.evaluate(case, y, &mut scratch), &case.coords, STEP);
                let err = relative_error(&analytic, &numeric);
                worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
            }
            TermCheck {
                term: term.name(),
                configurations,
                max_relative_error: worst,
                passed: worst < tolerance,
            }
        })
        .collect();
    GradcheckReport {
        seed,
        tolerance,
        checks,
    }
}

/// Stock check at the default configuration count and tolerance.
pub fn run_gradcheck(seed: u64) -> GradcheckReport {
    check_terms(&stock_terms(), seed, DEFAULT_CONFIGURATIONS, DEFAULT_TOLERANCE)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Flipped;

    impl CheckedTerm for Flipped {
        fn name(&self) -> &'static str {
            "flipped-euclidean"
        }

        fn evaluate(&self, case: &GradientCase, x: &[f64], grad: &mut [f64]) -> f64 {
            let e = EuclideanTerm.evaluate(case, x, grad);
            grad.iter_mut().for_each(|v| *v = -*v);
            e
        }
    }

    #[test]
    fn stock_terms_pass() {
        let report = run_gradcheck(7);
        assert!(report.passed(), "{report:?}");
        assert_eq!(report.checks.len(), 5);
    }

    #[test]
    fn sign_flip_is_caught_by_name() {
        let report = check_terms(&[&EuclideanTerm, &Flipped], 3, 4, DEFAULT_TOLERANCE);
        let failed: Vec<_> = report.failures().map(|c| c.term).collect();
        assert_eq!(failed, vec!["flipped-euclidean"]);
    }

    #[test]
    fn deterministic() {
        assert_eq!(run_gradcheck(11), run_gradcheck(11));
    }
}
