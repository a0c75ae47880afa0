//! PCA shape space, the measurement-to-weights feature map and weight clamping.

#[allow(unused_imports)]
use num_traits::Float as _;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::mesh::{MeshError, TriangleMesh};

/// Eigenvalues below this fraction of the largest one are treated as null
/// (about 45 machine epsilons; centring leaves one such component).
pub const NULL_VARIANCE_RATIO: f64 = 1e-14;

/// Ridge factor for the feature-map normal equations, relative to the mean
/// diagonal of the (standardised) system.
pub const FEATURE_RIDGE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("need at least 2 meshes, got {0}")]
    NotEnoughMeshes(usize),
    #[error("mesh {index} does not share the topology of mesh 0")]
    TopologyMismatch { index: usize },
    #[error("requested {requested} components but at most {max} are available")]
    TooManyComponents { requested: usize, max: usize },
    #[error("expected {expected} weights, found {found}")]
    WeightLength { expected: usize, found: usize },
    #[error("expected {expected} measurements, found {found}")]
    MeasurementLength { expected: usize, found: usize },
    #[error("{measurements} measurement vectors but {weights} weight vectors")]
    UnalignedTrainingData { measurements: usize, weights: usize },
    #[error("feature-map normal equations are not positive definite")]
    SingularSystem,
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ComponentCount {
    /// Every component with non-null variance (at most `n - 1`).
    #[default]
    All,
    Count(usize),
}

/// Divisor applied to PCA weights before the feature-map regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    /// Divide by the component variance.
    #[default]
    Eigenvalue,
    /// Divide by the component standard deviation.
    StdDev,
}

impl Normalization {
    pub fn divisor(self, variance: f64) -> f64 {
        match self {
            Normalization::Eigenvalue => variance,
            Normalization::StdDev => variance.sqrt(),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Normalization::Eigenvalue => "eigenvalue",
            Normalization::StdDev => "stddev",
        }
    }
}

/// Raw PCA coordinates of a shape (millimetre-scaled).
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeWeights(pub Vec<f64>);

impl ShapeWeights {
    pub fn zeros(r: usize) -> Self {
        Self(vec![0.0; r])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Mean shape, orthonormal basis and per-component variances.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaModel {
    mean: TriangleMesh,
    mean_flat: Vec<f64>,
    /// `3m x r`, orthonormal columns.
    basis: DMatrix<f64>,
    variances: Vec<f64>,
    training_count: usize,
}

impl PcaModel {
    /// Reassembles a model from stored parts (e.g. a model file). The basis
    /// is `3m x r`.
    pub fn from_parts(
        mean: TriangleMesh,
        basis: DMatrix<f64>,
        variances: Vec<f64>,
        training_count: usize,
    ) -> Result<Self, ModelError> {
        if basis.nrows() != 3 * mean.vertex_count() {
            return Err(ModelError::Mesh(MeshError::VertexCountMismatch {
                expected: mean.vertex_count(),
                found: basis.nrows() / 3,
            }));
        }
        if basis.ncols() != variances.len() {
            return Err(ModelError::WeightLength {
                expected: basis.ncols(),
                found: variances.len(),
            });
        }
        Ok(Self {
            mean_flat: mean.flatten(),
            mean,
            basis,
            variances,
            training_count,
        })
    }

    pub fn mean(&self) -> &TriangleMesh {
        &self.mean
    }

    pub fn mean_flat(&self) -> &[f64] {
        &self.mean_flat
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn stddevs(&self) -> Vec<f64> {
        self.variances.iter().map(|v| v.sqrt()).collect()
    }

    pub fn component_count(&self) -> usize {
        self.variances.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.mean.vertex_count()
    }

    pub fn training_count(&self) -> usize {
        self.training_count
    }

    fn check_len(&self, w: &[f64]) -> Result<(), ModelError> {
        if w.len() != self.component_count() {
            return Err(ModelError::WeightLength {
                expected: self.component_count(),
                found: w.len(),
            });
        }
        Ok(())
    }

    /// `W = A^T (X - mu)`; the transpose is the pseudo-inverse of an
    /// orthonormal basis.
    pub fn project(&self, mesh: &TriangleMesh) -> Result<ShapeWeights, ModelError> {
        if !mesh.same_topology(&self.mean) || mesh.vertex_count() != self.vertex_count() {
            return Err(ModelError::TopologyMismatch { index: 0 });
        }
        Ok(self.project_flat(&mesh.flatten()))
    }

    pub fn project_flat(&self, coords: &[f64]) -> ShapeWeights {
        let centered: Vec<f64> = coords.iter().zip(&self.mean_flat).map(|(x, m)| x - m).collect();
        ShapeWeights(self.pull_back(&centered))
    }

    /// `A^T g` for a stacked per-coordinate vector `g`.
    pub fn pull_back(&self, g: &[f64]) -> Vec<f64> {
        let g = nalgebra::DVectorView::from_slice(g, g.len());
        (self.basis.tr_mul(&g)).data.into()
    }

    /// `A W + mu`, flattened.
    pub fn synthesize_flat(&self, w: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.check_len(w)?;
        let w = nalgebra::DVectorView::from_slice(w, w.len());
        let mut out = DVector::from_column_slice(&self.mean_flat);
        out.gemv(1.0, &self.basis, &w, 1.0);
        Ok(out.data.into())
    }

    pub fn synthesize(&self, w: &ShapeWeights) -> Result<TriangleMesh, ModelError> {
        Ok(self.mean.with_flat(&self.synthesize_flat(&w.0)?)?)
    }

    /// Limits each weight to `l` standard deviations of its component.
    pub fn clamp_weights(&self, w: &ShapeWeights, l: f64) -> ShapeWeights {
        ShapeWeights(
            w.0.iter()
                .zip(&self.variances)
                .map(|(&x, &var)| {
                    let bound = l * var.sqrt();
                    x.clamp(-bound, bound)
                })
                .collect(),
        )
    }
}

/// PCA of a corresponded mesh set via the `n x n` Gram matrix of the
/// centred data (the snapshot method; `3m` is far larger than `n`).
pub fn train_pca(meshes: &[TriangleMesh], components: ComponentCount) -> Result<PcaModel, ModelError> {
    let n = meshes.len();
    if n < 2 {
        return Err(ModelError::NotEnoughMeshes(n));
    }
    let first = &meshes[0];
    for (index, m) in meshes.iter().enumerate().skip(1) {
        if m.vertex_count() != first.vertex_count() || !m.same_topology(first) {
            return Err(ModelError::TopologyMismatch { index });
        }
    }
    let requested = match components {
        ComponentCount::All => n - 1,
        ComponentCount::Count(r) if r > n - 1 => {
            return Err(ModelError::TooManyComponents {
                requested: r,
                max: n - 1,
            })
        }
        ComponentCount::Count(r) => r,
    };

    let dim = 3 * first.vertex_count();
    let mut data = DMatrix::<f64>::zeros(dim, n);
    for (j, m) in meshes.iter().enumerate() {
        data.set_column(j, &DVector::from_vec(m.flatten()));
    }
    let mean: DVector<f64> = data.column_mean();
    for mut col in data.column_iter_mut() {
        col -= &mean;
    }

    let gram = data.tr_mul(&data);
    let eig = nalgebra::SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let kept: Vec<usize> = order
        .into_iter()
        .take(requested)
        .take_while(|&k| top > 0.0 && eig.eigenvalues[k] > NULL_VARIANCE_RATIO * top)
        .collect();

    let mut basis = DMatrix::<f64>::zeros(dim, kept.len());
    for (c, &k) in kept.iter().enumerate() {
        let v = eig.eigenvectors.column(k);
        let col = &data * v / eig.eigenvalues[k].sqrt();
        basis.set_column(c, &col);
    }
    orthonormalize(&mut basis);
    orthonormalize(&mut basis);

    // Rayleigh quotients of the refined directions
    let proj = basis.tr_mul(&data);
    let mut comps: Vec<(f64, DVector<f64>)> = (0..kept.len())
        .map(|c| {
            let var = proj.row(c).norm_squared() / (n - 1) as f64;
            let mut col: DVector<f64> = basis.column(c).into_owned();
            // sign convention: largest-magnitude entry positive
            let imax = col.iamax();
            if col[imax] < 0.0 {
                col.neg_mut();
            }
            (var, col)
        })
        .collect();
    comps.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut basis = DMatrix::<f64>::zeros(dim, comps.len());
    let mut variances = Vec::with_capacity(comps.len());
    for (c, (var, col)) in comps.into_iter().enumerate() {
        basis.set_column(c, &col);
        variances.push(var);
    }
    let mean_mesh = first.with_flat(mean.as_slice())?;
    PcaModel::from_parts(mean_mesh, basis, variances, n)
}

/// Modified Gram-Schmidt on the columns, in place.
fn orthonormalize(m: &mut DMatrix<f64>) {
    for j in 0..m.ncols() {
        for i in 0..j {
            let d = m.column(i).dot(&m.column(j));
            let ci = m.column(i).into_owned();
            m.column_mut(j).axpy(-d, &ci, 1.0);
        }
        let norm = m.column(j).norm();
        m.column_mut(j).unscale_mut(norm);
    }
}

/// Linear map from an augmented measurement vector `[P; 1]` to normalised
/// PCA weights `W[j] / divisor_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    /// `r x (q + 1)`; the last column is the bias.
    matrix: DMatrix<f64>,
    normalization: Normalization,
}

impl FeatureMap {
    pub fn from_parts(matrix: DMatrix<f64>, normalization: Normalization) -> Self {
        Self {
            matrix,
            normalization,
        }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn measurement_count(&self) -> usize {
        self.matrix.ncols() - 1
    }

    /// Normalised weights `B [P; 1]`.
    pub fn apply(&self, measurements: &[f64]) -> Result<Vec<f64>, ModelError> {
        let q = self.measurement_count();
        if measurements.len() != q {
            return Err(ModelError::MeasurementLength {
                expected: q,
                found: measurements.len(),
            });
        }
        let mut aug = Vec::with_capacity(q + 1);
        aug.extend_from_slice(measurements);
        aug.push(1.0);
        Ok((&self.matrix * DVector::from_vec(aug)).data.into())
    }

    /// Feature-map prediction followed by de-normalisation.
    pub fn predict_weights(&self, model: &PcaModel, measurements: &[f64]) -> Result<ShapeWeights, ModelError> {
        if self.matrix.nrows() != model.component_count() {
            return Err(ModelError::WeightLength {
                expected: model.component_count(),
                found: self.matrix.nrows(),
            });
        }
        let normalized = self.apply(measurements)?;
        Ok(ShapeWeights(
            normalized
                .iter()
                .zip(model.variances())
                .map(|(w, &var)| w * self.normalization.divisor(var))
                .collect(),
        ))
    }
}

/// Least-squares fit of `B` minimising `sum_i |B [P_i; 1] - W_i / d|^2`.
///
/// The regression runs on standardised measurement columns (so the ridge
/// does not depend on measurement units) and is mapped back onto raw
/// millimetre inputs afterwards.
pub fn train_feature_map(
    model: &PcaModel,
    measurements: &[&[f64]],
    weights: &[ShapeWeights],
    normalization: Normalization,
) -> Result<FeatureMap, ModelError> {
    let n = measurements.len();
    if n != weights.len() {
        return Err(ModelError::UnalignedTrainingData {
            measurements: n,
            weights: weights.len(),
        });
    }
    if n < 2 {
        return Err(ModelError::NotEnoughMeshes(n));
    }
    let q = measurements[0].len();
    let r = model.component_count();
    for p in measurements {
        if p.len() != q {
            return Err(ModelError::MeasurementLength {
                expected: q,
                found: p.len(),
            });
        }
    }
    for w in weights {
        if w.len() != r {
            return Err(ModelError::WeightLength {
                expected: r,
                found: w.len(),
            });
        }
    }

    let mut center = vec![0.0; q];
    for p in measurements {
        for k in 0..q {
            center[k] += p[k] / n as f64;
        }
    }
    let mut scale = vec![0.0; q];
    for p in measurements {
        for k in 0..q {
            scale[k] += (p[k] - center[k]).powi(2) / (n - 1) as f64;
        }
    }
    for s in &mut scale {
        *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
    }

    // design rows [z_i; 1], targets normalised weights
    let design = DMatrix::from_fn(n, q + 1, |i, k| {
        if k == q {
            1.0
        } else {
            (measurements[i][k] - center[k]) / scale[k]
        }
    });
    let divisors: Vec<f64> = model.variances().iter().map(|&v| normalization.divisor(v)).collect();
    let targets = DMatrix::from_fn(n, r, |i, j| weights[i].0[j] / divisors[j]);

    let mut normal = design.tr_mul(&design);
    let ridge = FEATURE_RIDGE * normal.trace() / (q + 1) as f64;
    for k in 0..=q {
        normal[(k, k)] += ridge;
    }
    let rhs = design.tr_mul(&targets);
    let chol = nalgebra::Cholesky::new(normal).ok_or(ModelError::SingularSystem)?;
    // (q+1) x r in standardised coordinates
    let solved = chol.solve(&rhs);

    let mut matrix = DMatrix::<f64>::zeros(r, q + 1);
    for j in 0..r {
        let mut bias = solved[(q, j)];
        for k in 0..q {
            let coef = solved[(k, j)] / scale[k];
            matrix[(j, k)] = coef;
            bias -= coef * center[k];
        }
        matrix[(j, q)] = bias;
    }
    Ok(FeatureMap {
        matrix,
        normalization,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::Vec3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tri_mesh(coords: &[f64]) -> TriangleMesh {
        let m = coords.len() / 3;
        let tris: Vec<[usize; 3]> = (0..m - 2).map(|k| [k, k + 1, k + 2]).collect();
        TriangleMesh::unflatten(coords, tris).unwrap()
    }

    fn random_meshes(n: usize, m: usize, seed: u64) -> Vec<TriangleMesh> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = tri_mesh(&(0..3 * m).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
        (0..n)
            .map(|_| {
                let c: Vec<f64> = (0..3 * m).map(|_| rng.random_range(-1.0..1.0)).collect();
                base.with_flat(&c).unwrap()
            })
            .collect()
    }

    #[test]
    fn two_mesh_pca_is_analytic() {
        let x0 = tri_mesh(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let x1 = x0.with_flat(&[0.0, 0.0, 2.0, 1.0, 0.0, 2.0, 0.0, 1.0, 2.0]).unwrap();
        let model = train_pca(&[x0.clone(), x1.clone()], ComponentCount::All).unwrap();
        assert_eq!(model.component_count(), 1);
        let diff: Vec<f64> = x1.flatten().iter().zip(x0.flatten()).map(|(a, b)| a - b).collect();
        let dnorm2: f64 = diff.iter().map(|d| d * d).sum();
        assert!((model.variances()[0] - dnorm2 / 2.0).abs() < 1e-12);
        for (k, m) in model.mean_flat().iter().enumerate() {
            assert!((m - (x0.flatten()[k] + x1.flatten()[k]) / 2.0).abs() < 1e-15);
        }
        // basis column parallel to X1 - X0
        let col = model.basis().column(0);
        let cos = col.iter().zip(&diff).map(|(a, b)| a * b).sum::<f64>() / dnorm2.sqrt();
        assert!((cos.abs() - 1.0).abs() < 1e-12);
        let w1 = model.project(&x1).unwrap();
        assert!((w1.0[0].abs() - dnorm2.sqrt() / 2.0).abs() < 1e-12);
        let rebuilt = model.synthesize(&w1).unwrap();
        for (a, b) in rebuilt.flatten().iter().zip(x1.flatten()) {
            assert!((a - b).abs() < 1e-8);
        }
        let w0 = model.project(&x0).unwrap();
        assert!((w0.0[0] + w1.0[0]).abs() < 1e-12);
    }

    #[test]
    fn identical_meshes_have_no_components() {
        let x = tri_mesh(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let model = train_pca(&[x.clone(), x.clone(), x], ComponentCount::All).unwrap();
        assert_eq!(model.component_count(), 0);
    }

    #[test]
    fn training_errors() {
        let x = tri_mesh(&[0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        assert_eq!(train_pca(core::slice::from_ref(&x), ComponentCount::All), Err(ModelError::NotEnoughMeshes(1)));
        assert_eq!(
            train_pca(&[x.clone(), x.clone()], ComponentCount::Count(2)),
            Err(ModelError::TooManyComponents {
                requested: 2,
                max: 1
            })
        );
        let other = TriangleMesh::new(
            vec![Vec3::zeros(), Vec3::x(), Vec3::y()],
            vec![[0, 2, 1]],
        )
        .unwrap();
        assert_eq!(
            train_pca(&[x, other], ComponentCount::All),
            Err(ModelError::TopologyMismatch { index: 1 })
        );
    }

    #[test]
    fn basis_spans_covariance_eigenvectors() {
        // explicit 15 x 15 sample covariance, dense eigendecomposition
        let meshes = random_meshes(10, 5, 3);
        let model = train_pca(&meshes, ComponentCount::All).unwrap();
        assert_eq!(model.component_count(), 9);
        let n = meshes.len() as f64;
        let flat: Vec<Vec<f64>> = meshes.iter().map(|m| m.flatten()).collect();
        let mean: Vec<f64> = (0..15).map(|k| flat.iter().map(|f| f[k]).sum::<f64>() / n).collect();
        let mut cov = DMatrix::<f64>::zeros(15, 15);
        for f in &flat {
            for i in 0..15 {
                for j in 0..15 {
                    cov[(i, j)] += (f[i] - mean[i]) * (f[j] - mean[j]) / (n - 1.0);
                }
            }
        }
        let eig = nalgebra::SymmetricEigen::new(cov);
        let mut ev: Vec<(f64, usize)> = eig.eigenvalues.iter().copied().zip(0..).collect();
        ev.sort_by(|a, b| b.0.total_cmp(&a.0));
        for (c, &(lambda, k)) in ev.iter().take(9).enumerate() {
            assert!((model.variances()[c] - lambda).abs() < 1e-9 * lambda.max(1.0));
            // covariance eigenvector lies in span(A)
            let v = eig.eigenvectors.column(k);
            let in_span = model.basis() * model.basis().tr_mul(&v);
            assert!((in_span - v).norm() < 1e-8);
        }
    }

    #[test]
    fn orthonormal_basis_and_round_trips() {
        let meshes = random_meshes(12, 6, 11);
        let model = train_pca(&meshes, ComponentCount::All).unwrap();
        let r = model.component_count();
        let gram = model.basis().tr_mul(model.basis());
        assert!((gram - DMatrix::<f64>::identity(r, r)).abs().max() < 1e-9);
        for m in &meshes {
            let back = model.synthesize(&model.project(m).unwrap()).unwrap();
            for (a, b) in back.flatten().iter().zip(m.flatten()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let zero = model.project(model.mean()).unwrap();
        assert!(zero.0.iter().all(|w| w.abs() < 1e-12));
        let w = ShapeWeights((0..r).map(|k| k as f64 - 2.5).collect());
        let again = model.project(&model.synthesize(&w).unwrap()).unwrap();
        for (a, b) in again.0.iter().zip(&w.0) {
            assert!((a - b).abs() < 1e-9);
        }
        // variance of projected training weights equals the eigenvalue
        let ws: Vec<ShapeWeights> = meshes.iter().map(|m| model.project(m).unwrap()).collect();
        for c in 0..r {
            let mean = ws.iter().map(|w| w.0[c]).sum::<f64>() / ws.len() as f64;
            let var = ws.iter().map(|w| (w.0[c] - mean).powi(2)).sum::<f64>() / (ws.len() - 1) as f64;
            assert!((var - model.variances()[c]).abs() <= 1e-6 * model.variances()[c]);
        }
        assert!(model.variances().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn projection_residual_is_orthogonal_to_basis() {
        let meshes = random_meshes(4, 5, 5);
        let model = train_pca(&meshes, ComponentCount::All).unwrap();
        let outside = random_meshes(1, 5, 99).remove(0);
        let outside = meshes[0].with_vertices(outside.vertices().to_vec()).unwrap();
        let w = model.project(&outside).unwrap();
        let fit = model.synthesize_flat(&w.0).unwrap();
        let residual: Vec<f64> = outside.flatten().iter().zip(&fit).map(|(x, f)| x - f).collect();
        for v in model.pull_back(&residual) {
            assert!(v.abs() < 1e-9);
        }
    }

    #[test]
    fn synthesis_is_affine() {
        let meshes = random_meshes(6, 4, 2);
        let model = train_pca(&meshes, ComponentCount::Count(3)).unwrap();
        let mu = model.mean_flat().to_vec();
        let w1 = [0.3, -1.0, 2.0];
        let w2 = [1.5, 0.25, -0.75];
        let w12: Vec<f64> = w1.iter().zip(&w2).map(|(a, b)| a + b).collect();
        let s1 = model.synthesize_flat(&w1).unwrap();
        let s2 = model.synthesize_flat(&w2).unwrap();
        let s12 = model.synthesize_flat(&w12).unwrap();
        for k in 0..mu.len() {
            assert!(((s12[k] - mu[k]) - (s1[k] - mu[k]) - (s2[k] - mu[k])).abs() < 1e-9);
        }
        assert_eq!(model.synthesize_flat(&[0.0; 3]).unwrap(), mu);
        assert!(model.synthesize_flat(&[0.0; 2]).is_err());
    }

    #[test]
    fn clamping() {
        let meshes = random_meshes(5, 4, 8);
        let model = train_pca(&meshes, ComponentCount::All).unwrap();
        let s = model.stddevs();
        let w = ShapeWeights(vec![5.0 * s[0], -4.0 * s[1], 0.5 * s[2], 0.0]);
        let c = model.clamp_weights(&w, 3.0);
        assert!((c.0[0] - 3.0 * s[0]).abs() < 1e-12);
        assert!((c.0[1] + 3.0 * s[1]).abs() < 1e-12);
        assert_eq!(c.0[2], w.0[2]);
        assert_eq!(model.clamp_weights(&c, 3.0), c);
    }

    /// Model with given variances over a throwaway basis.
    fn model_with_variances(variances: Vec<f64>) -> PcaModel {
        let r = variances.len();
        let m = r + 2;
        let mean = tri_mesh(&(0..3 * m).map(|k| k as f64).collect::<Vec<_>>());
        let basis = DMatrix::<f64>::identity(3 * m, r);
        PcaModel::from_parts(mean, basis, variances, r + 1).unwrap()
    }

    /// Ordinary least squares through the explicit normal equations on raw
    /// inputs, used as an independent check of the standardised solve.
    fn ols(p: &[Vec<f64>], targets: &[Vec<f64>]) -> DMatrix<f64> {
        let q = p[0].len();
        let x = DMatrix::from_fn(p.len(), q + 1, |i, k| if k == q { 1.0 } else { p[i][k] });
        let y = DMatrix::from_fn(p.len(), targets[0].len(), |i, j| targets[i][j]);
        let xtx = x.tr_mul(&x);
        (xtx.try_inverse().unwrap() * x.tr_mul(&y)).transpose()
    }

    #[test]
    fn feature_map_fits_affine_data() {
        let model = model_with_variances(vec![4.0, 2.0, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let ps: Vec<Vec<f64>> = (0..12)
            .map(|_| (0..3).map(|_| rng.random_range(800.0..1200.0)).collect())
            .collect();
        // normalised weights 2 P + 5 elementwise
        let ws: Vec<ShapeWeights> = ps
            .iter()
            .map(|p| ShapeWeights(p.iter().zip(model.variances()).map(|(x, v)| (2.0 * x + 5.0) * v).collect()))
            .collect();
        let refs: Vec<&[f64]> = ps.iter().map(|p| p.as_slice()).collect();
        let fm = train_feature_map(&model, &refs, &ws, Normalization::Eigenvalue).unwrap();
        let oracle = ols(
            &ps,
            &ps.iter().map(|p| p.iter().map(|x| 2.0 * x + 5.0).collect()).collect::<Vec<_>>(),
        );
        let diff = (fm.matrix() - &oracle).abs().max();
        assert!(diff < 1e-6, "{diff} {} {oracle}", fm.matrix());
        for (p, w) in ps.iter().zip(&ws) {
            let pred = fm.predict_weights(&model, p).unwrap();
            for (a, b) in pred.0.iter().zip(&w.0) {
                assert!((a - b).abs() < 1e-6 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn feature_map_interpolates_when_underdetermined() {
        let model = model_with_variances(vec![3.0, 1.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // 4 subjects, 6 measurements
        let ps: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..6).map(|_| rng.random_range(100.0..900.0)).collect())
            .collect();
        let ws: Vec<ShapeWeights> = (0..4)
            .map(|_| ShapeWeights((0..2).map(|_| rng.random_range(-5.0..5.0)).collect()))
            .collect();
        let refs: Vec<&[f64]> = ps.iter().map(|p| p.as_slice()).collect();
        let fm = train_feature_map(&model, &refs, &ws, Normalization::Eigenvalue).unwrap();
        for (p, w) in ps.iter().zip(&ws) {
            let pred = fm.predict_weights(&model, p).unwrap();
            for (a, b) in pred.0.iter().zip(&w.0) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn constant_weights_give_bias_only_map() {
        let model = model_with_variances(vec![2.0, 1.0]);
        let ps: Vec<Vec<f64>> = (0..5).map(|i| vec![100.0 + i as f64, 300.0 - 2.0 * i as f64 * i as f64]).collect();
        let ws: Vec<ShapeWeights> = (0..5).map(|_| ShapeWeights(vec![1.0, -3.0])).collect();
        let refs: Vec<&[f64]> = ps.iter().map(|p| p.as_slice()).collect();
        let fm = train_feature_map(&model, &refs, &ws, Normalization::Eigenvalue).unwrap();
        for j in 0..2 {
            for k in 0..2 {
                assert!(fm.matrix()[(j, k)].abs() < 1e-10);
            }
        }
        assert!((fm.matrix()[(0, 2)] - 0.5).abs() < 1e-7);
        assert!((fm.matrix()[(1, 2)] + 3.0).abs() < 1e-7);
    }

    #[test]
    fn denormalization_scales_with_variance() {
        let fm = FeatureMap::from_parts(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]), Normalization::Eigenvalue);
        let small = model_with_variances(vec![1.0, 3.0]);
        let big = model_with_variances(vec![2.0, 6.0]);
        let a = fm.predict_weights(&small, &[4.0]).unwrap();
        let b = fm.predict_weights(&big, &[4.0]).unwrap();
        assert_eq!(a.0, vec![4.0, 6.0]);
        assert_eq!(b.0, vec![8.0, 12.0]);
        let sd = FeatureMap::from_parts(fm.matrix().clone(), Normalization::StdDev);
        assert_eq!(sd.predict_weights(&big, &[4.0]).unwrap().0[1], 2.0 * 6f64.sqrt());
        assert!(fm.predict_weights(&small, &[1.0, 2.0]).is_err());
    }
}
