//! Exact t-SNE.
//!
//! High-dimensional affinities use a Gaussian kernel with a bandwidth per
//! point, chosen by binary search so that the conditional distribution of
//! each point has the requested perplexity. The conditionals are then
//! symmetrized, `p_ij = (p(j|i) + p(i|j)) / 2N`. Low-dimensional affinities
//! use the Student-t kernel `(1 + |y_i - y_j|^2)^-1`, and the embedding
//! descends `KL(P || Q)` with exact `O(N^2)` gradients.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Embedding;
use crate::corpus::SparseVector;
use crate::error::{Error, Result};

/// Smallest symmetric affinity kept before renormalization.
pub const AFFINITY_FLOOR: f64 = 1e-12;

const PERPLEXITY_TOL: f64 = 1e-5;
const MAX_BISECTIONS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    /// Output dimension `n`.
    pub dim: usize,
    pub perplexity: f64,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    /// Number of leading iterations that use the exaggerated affinities.
    pub exaggeration_iterations: usize,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub momentum_switch: usize,
    /// Standard deviation of the Gaussian initialization.
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        Self {
            dim: super::DEFAULT_DIM,
            perplexity: 30.0,
            iterations: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iterations: 250,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            momentum_switch: 250,
            init_scale: 1e-4,
            seed: 0,
        }
    }
}

/// Dense `N x N` matrix of pairwise probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct AffinityMatrix {
    n: usize,
    values: Vec<f64>,
}

impl AffinityMatrix {
    /// Wraps raw row-major values. Only the shape is checked.
    pub fn from_values(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::Shape(format!(
                "{} values for a {n}x{n} affinity matrix",
                values.len()
            )));
        }
        Ok(Self { n, values })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn sum(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| self.get(i, j) == self.get(j, i)))
    }
}

/// Result of per-point bandwidth calibration.
#[derive(Debug, Clone)]
pub struct Calibration {
    /// Gaussian bandwidth of each point.
    pub sigmas: Vec<f64>,
    /// Row-stochastic conditionals `p(j|i)`, zero diagonal.
    pub conditionals: Vec<f64>,
    /// Achieved perplexity `exp(H_i)` of each row.
    pub perplexities: Vec<f64>,
}

/// Pairwise squared Euclidean distances of sparse points, row-major.
pub fn squared_distances(points: &[SparseVector]) -> Vec<f64> {
    let n = points.len();
    let norms: Vec<f64> = points.iter().map(SparseVector::norm_sq).collect();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let d = (norms[i] + norms[j] - 2.0 * points[i].dot(&points[j])).max(0.0);
            out[i * n + j] = d;
            out[j * n + i] = d;
        }
    }
    out
}

/// Finds, for every point, the Gaussian precision whose conditional
/// distribution over the other points has perplexity `perplexity`.
pub fn calibrate_bandwidths(distances: &[f64], perplexity: f64) -> Result<Calibration> {
    let n = (distances.len() as f64).sqrt().round() as usize;
    if n * n != distances.len() {
        return Err(Error::Shape("distance matrix is not square".into()));
    }
    if n < 2 {
        return Err(Error::invalid("need at least two points"));
    }
    if distances.iter().any(|d| !d.is_finite()) {
        return Err(Error::invalid("distances must be finite"));
    }
    if !(perplexity >= 1.0 && perplexity <= (n - 1) as f64) {
        return Err(Error::invalid(format!(
            "perplexity {perplexity} outside [1, {}]",
            n - 1
        )));
    }
    let target = perplexity.ln();
    let mut sigmas = Vec::with_capacity(n);
    let mut perplexities = Vec::with_capacity(n);
    let mut conditionals = vec![0.0; n * n];
    let mut row = vec![0.0; n];
    for i in 0..n {
        let d = &distances[i * n..(i + 1) * n];
        let d_min = (0..n)
            .filter(|&j| j != i)
            .map(|j| d[j])
            .fold(f64::INFINITY, f64::min);
        let mut beta = 1.0;
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut entropy = 0.0;
        for _ in 0..MAX_BISECTIONS {
            entropy = conditional_row(d, i, beta, d_min, &mut row);
            if (entropy.exp() - perplexity).abs() < PERPLEXITY_TOL {
                break;
            }
            if entropy > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
            }
        }
        conditionals[i * n..(i + 1) * n].copy_from_slice(&row);
        sigmas.push((1.0 / (2.0 * beta)).sqrt());
        perplexities.push(entropy.exp());
    }
    Ok(Calibration {
        sigmas,
        conditionals,
        perplexities,
    })
}

/// Fills `row` with `p(j|i)` at precision `beta` and returns its entropy in
/// nats. Distances are shifted by the row minimum for stability.
fn conditional_row(d: &[f64], i: usize, beta: f64, d_min: f64, row: &mut [f64]) -> f64 {
    let mut z = 0.0;
    let mut weighted = 0.0;
    for (j, slot) in row.iter_mut().enumerate() {
        if j == i {
            *slot = 0.0;
            continue;
        }
        let shifted = d[j] - d_min;
        let p = (-beta * shifted).exp();
        *slot = p;
        z += p;
        weighted += shifted * p;
    }
    for p in row.iter_mut() {
        *p /= z;
    }
    z.ln() + beta * weighted / z
}

/// Symmetrized high-dimensional affinities of the given points.
pub fn high_dim_affinities(points: &[SparseVector], config: &TsneConfig) -> Result<AffinityMatrix> {
    let n = points.len();
    if n < 2 {
        return Err(Error::invalid("need at least two points"));
    }
    let calib = calibrate_bandwidths(&squared_distances(points), config.perplexity)?;
    Ok(symmetrize(n, &calib.conditionals))
}

fn symmetrize(n: usize, cond: &[f64]) -> AffinityMatrix {
    let mut values = vec![0.0; n * n];
    let scale = 2.0 * n as f64;
    for i in 0..n {
        for j in i + 1..n {
            let p = ((cond[i * n + j] + cond[j * n + i]) / scale).max(AFFINITY_FLOOR);
            values[i * n + j] = p;
            values[j * n + i] = p;
        }
    }
    let total: f64 = values.iter().sum();
    for v in &mut values {
        *v /= total;
    }
    AffinityMatrix { n, values }
}

/// Student-t affinities of an embedding, normalized over all ordered pairs.
pub fn low_dim_affinities(emb: &Embedding) -> Result<AffinityMatrix> {
    let n = emb.rows();
    if n < 2 {
        return Err(Error::invalid("need at least two points"));
    }
    let mut values = vec![0.0; n * n];
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let w = 1.0 / (1.0 + super::sq_dist(emb.row(i), emb.row(j)));
            values[i * n + j] = w;
            values[j * n + i] = w;
            total += 2.0 * w;
        }
    }
    for v in &mut values {
        *v /= total;
    }
    Ok(AffinityMatrix { n, values })
}

/// `KL(P || Q)` over off-diagonal entries with `p_ij > 0`.
pub fn kl_objective(p: &AffinityMatrix, q: &AffinityMatrix) -> Result<f64> {
    if p.n != q.n {
        return Err(Error::Shape(format!("{}x{0} vs {}x{1}", p.n, q.n)));
    }
    let mut kl = 0.0;
    for i in 0..p.n {
        for j in 0..p.n {
            let pij = p.get(i, j);
            if i != j && pij > 0.0 {
                kl += pij * (pij / q.get(i, j)).ln();
            }
        }
    }
    Ok(kl)
}

/// Exact gradient of `KL(P || Q(Y))` with respect to the embedding,
/// `4 sum_j (p_ij - q_ij)(y_i - y_j) / (1 + |y_i - y_j|^2)`.
pub fn tsne_gradient(p: &AffinityMatrix, emb: &Embedding) -> Result<Vec<f64>> {
    if p.n != emb.rows() {
        return Err(Error::Shape(format!(
            "{} affinities for {} points",
            p.n,
            emb.rows()
        )));
    }
    let mut kernel = vec![0.0; p.n * p.n];
    let mut grad = vec![0.0; emb.coords.len()];
    gradient_into(p, 1.0, emb.dim, &emb.coords, &mut kernel, &mut grad);
    Ok(grad)
}

/// Writes the (optionally exaggerated) gradient into `grad`, using `kernel`
/// as scratch for the Student-t weights.
fn gradient_into(
    p: &AffinityMatrix,
    exaggeration: f64,
    dim: usize,
    y: &[f64],
    kernel: &mut [f64],
    grad: &mut [f64],
) {
    let n = p.n;
    let mut total = 0.0;
    for i in 0..n {
        let yi = &y[i * dim..(i + 1) * dim];
        for j in i + 1..n {
            let w = 1.0 / (1.0 + super::sq_dist(yi, &y[j * dim..(j + 1) * dim]));
            kernel[i * n + j] = w;
            total += 2.0 * w;
        }
    }
    grad.fill(0.0);
    for i in 0..n {
        for j in i + 1..n {
            let w = kernel[i * n + j];
            let coef = 4.0 * (exaggeration * p.values[i * n + j] - w / total) * w;
            for k in 0..dim {
                let diff = coef * (y[i * dim + k] - y[j * dim + k]);
                grad[i * dim + k] += diff;
                grad[j * dim + k] -= diff;
            }
        }
    }
}

/// Output of [`tsne_fit`].
#[derive(Debug, Clone)]
pub struct TsneRun {
    pub embedding: Embedding,
    /// `(iteration, KL)` samples, always including the first iteration after
    /// exaggeration ends and the final state.
    pub kl_trace: Vec<(usize, f64)>,
}

impl TsneRun {
    pub fn final_kl(&self) -> f64 {
        self.kl_trace.last().map_or(f64::NAN, |&(_, kl)| kl)
    }

    pub fn kl_at(&self, iteration: usize) -> Option<f64> {
        self.kl_trace
            .iter()
            .find(|&&(it, _)| it == iteration)
            .map(|&(_, kl)| kl)
    }
}

/// Fits a t-SNE embedding of `points` into `config.dim` dimensions.
pub fn tsne_fit(points: &[SparseVector], config: &TsneConfig) -> Result<TsneRun> {
    let n = points.len();
    if n < 4 {
        return Err(Error::invalid("t-SNE needs at least four points"));
    }
    if config.iterations == 0 || config.dim == 0 {
        return Err(Error::invalid("iterations and dim must be at least 1"));
    }
    let p = high_dim_affinities(points, config)?;
    let dim = config.dim;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, config.init_scale).map_err(|e| Error::invalid(e.to_string()))?;
    let mut y: Vec<f64> = (0..n * dim).map(|_| normal.sample(&mut rng)).collect();
    let mut update = vec![0.0; n * dim];
    let mut gains = vec![1.0f64; n * dim];
    let mut grad = vec![0.0; n * dim];
    let mut kernel = vec![0.0; n * n];
    let mut kl_trace = Vec::new();

    let kl_now = |y: &[f64]| -> Result<f64> {
        let emb = Embedding {
            dim,
            coords: y.to_vec(),
        };
        kl_objective(&p, &low_dim_affinities(&emb)?)
    };

    for iter in 0..config.iterations {
        if iter == config.exaggeration_iterations || (iter > 0 && iter % 100 == 0) {
            kl_trace.push((iter, kl_now(&y)?));
        }
        let exaggeration = if iter < config.exaggeration_iterations {
            config.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < config.momentum_switch {
            config.initial_momentum
        } else {
            config.final_momentum
        };
        gradient_into(&p, exaggeration, dim, &y, &mut kernel, &mut grad);
        for k in 0..n * dim {
            gains[k] = if (grad[k] > 0.0) != (update[k] > 0.0) {
                gains[k] + 0.2
            } else {
                (gains[k] * 0.8).max(0.01)
            };
            update[k] = momentum * update[k] - config.learning_rate * gains[k] * grad[k];
            y[k] += update[k];
        }
        for c in 0..dim {
            let mean = (0..n).map(|i| y[i * dim + c]).sum::<f64>() / n as f64;
            for i in 0..n {
                y[i * dim + c] -= mean;
            }
        }
    }
    kl_trace.push((config.iterations, kl_now(&y)?));
    Ok(TsneRun {
        embedding: Embedding::new(dim, y)?,
        kl_trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_points(rows: &[&[f64]]) -> Vec<SparseVector> {
        rows.iter().map(|r| SparseVector::from_dense(r)).collect()
    }

    #[test]
    fn two_points_single_neighbor() {
        let calib = calibrate_bandwidths(&[0.0, 4.0, 4.0, 0.0], 1.0).unwrap();
        assert_eq!(calib.conditionals, [0.0, 1.0, 1.0, 0.0]);
        assert!(calib.sigmas.iter().all(|s| s.is_finite() && *s > 0.0));
    }

    #[test]
    fn simplex_gives_uniform_conditionals() {
        let mut d = vec![2.0; 16];
        for i in 0..4 {
            d[i * 4 + i] = 0.0;
        }
        let calib = calibrate_bandwidths(&d, 3.0).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 0.0 } else { 1.0 / 3.0 };
                assert!((calib.conditionals[i * 4 + j] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn calibration_hits_target_perplexity() {
        let pts: Vec<Vec<f64>> = (0..12).map(|i| vec![(i * i) as f64 * 0.1, (i % 3) as f64]).collect();
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let d = squared_distances(&dense_points(&refs));
        let calib = calibrate_bandwidths(&d, 4.0).unwrap();
        for p in calib.perplexities {
            assert!((p - 4.0).abs() < 1e-5, "{p}");
        }
    }

    #[test]
    fn two_clusters_keep_mass_inside() {
        // Oracle: evaluate the calibrated Gaussian conditionals directly.
        let mut pts = Vec::new();
        for c in 0..2 {
            for k in 0..5 {
                let base = 10.0 * c as f64;
                pts.push(vec![base + (k as f64) * 0.25, (k % 2) as f64 * 0.25]);
            }
        }
        let refs: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
        let d = squared_distances(&dense_points(&refs));
        let calib = calibrate_bandwidths(&d, 4.0).unwrap();
        for i in 0..10 {
            let sigma = calib.sigmas[i];
            let kernel: Vec<f64> = (0..10)
                .map(|j| if i == j { 0.0 } else { (-d[i * 10 + j] / (2.0 * sigma * sigma)).exp() })
                .collect();
            let total: f64 = kernel.iter().sum();
            let inside: f64 = (0..10).filter(|j| j / 5 == i / 5).map(|j| kernel[j]).sum();
            assert!(inside / total > 0.9);
            assert!((inside / total - (0..10).filter(|j| j / 5 == i / 5).map(|j| calib.conditionals[i * 10 + j]).sum::<f64>()).abs() < 1e-9);
        }
    }

    #[test]
    fn calibration_rejects_bad_input() {
        assert!(calibrate_bandwidths(&[0.0, f64::NAN, f64::NAN, 0.0], 1.0).is_err());
        assert!(calibrate_bandwidths(&[0.0, 1.0, 1.0], 1.0).is_err());
    }

    #[test]
    fn pair_affinities() {
        let pts = dense_points(&[&[0.0, 0.0], &[1.0, 0.0]]);
        let cfg = TsneConfig { perplexity: 1.0, ..Default::default() };
        let p = high_dim_affinities(&pts, &cfg).unwrap();
        assert_eq!(p.values(), [0.0, 0.5, 0.5, 0.0]);
    }

    #[test]
    fn collinear_near_pair_dominates() {
        let pts = dense_points(&[&[0.0], &[1.0], &[11.0]]);
        let cfg = TsneConfig { perplexity: 1.5, ..Default::default() };
        let p = high_dim_affinities(&pts, &cfg).unwrap();
        assert!(p.get(0, 1) > p.get(1, 2));
        assert!(p.get(0, 1) > p.get(0, 2));
        assert!(p.is_symmetric());
        assert!((p.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn low_dim_examples() {
        let q = low_dim_affinities(&Embedding::new(2, vec![1.0, 1.0, 1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(q.get(0, 1), 0.5);

        let h = 3f64.sqrt() / 2.0;
        let tri = Embedding::new(2, vec![0.0, 0.0, 1.0, 0.0, 0.5, h]).unwrap();
        let q = low_dim_affinities(&tri).unwrap();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            assert!((q.get(i, j) - 1.0 / 6.0).abs() < 1e-12);
        }

        let line = Embedding::new(1, vec![0.0, 1.0, 3.0]).unwrap();
        let q = low_dim_affinities(&line).unwrap();
        assert!((q.get(0, 1) / q.get(1, 2) - 2.5).abs() < 1e-12);
    }

    #[test]
    fn kl_examples() {
        let p = AffinityMatrix::from_values(2, vec![0.0, 0.75, 0.25, 0.0]).unwrap();
        let q = AffinityMatrix::from_values(2, vec![0.0, 0.5, 0.5, 0.0]).unwrap();
        let expect = 0.75 * 1.5f64.ln() + 0.25 * 0.5f64.ln();
        assert!((kl_objective(&p, &q).unwrap() - expect).abs() < 1e-15);
        assert!((expect - 0.1308).abs() < 1e-4);
        assert_eq!(kl_objective(&p, &p).unwrap(), 0.0);
        let r = AffinityMatrix::from_values(3, vec![0.0; 9]).unwrap();
        assert!(kl_objective(&p, &r).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let pts = dense_points(&[
            &[0.0, 0.0, 1.0],
            &[0.2, 0.1, 0.9],
            &[1.0, 1.0, 0.0],
            &[0.9, 1.2, 0.1],
            &[0.5, 0.4, 0.5],
        ]);
        let cfg = TsneConfig { perplexity: 2.0, ..Default::default() };
        let p = high_dim_affinities(&pts, &cfg).unwrap();
        let y = vec![0.3, -0.2, 0.1, 0.4, -0.5, 0.2, 0.0, 0.7, -0.3, 0.1, 0.6, -0.4, 0.2, 0.2, 0.3];
        let emb = Embedding::new(3, y.clone()).unwrap();
        let grad = tsne_gradient(&p, &emb).unwrap();
        let h = 1e-5;
        for k in 0..y.len() {
            let (mut plus, mut minus) = (y.clone(), y.clone());
            plus[k] += h;
            minus[k] -= h;
            let f = |c: Vec<f64>| kl_objective(&p, &low_dim_affinities(&Embedding::new(3, c).unwrap()).unwrap()).unwrap();
            let fd = (f(plus) - f(minus)) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / fd.abs().max(grad[k].abs()).max(1e-8);
            assert!(rel < 1e-4, "coordinate {k}: analytic {} vs fd {fd}", grad[k]);
        }
    }

    #[test]
    fn fit_rejects_tiny_inputs() {
        let pts = dense_points(&[&[0.0], &[1.0], &[2.0]]);
        assert!(tsne_fit(&pts, &TsneConfig::default()).is_err());
    }

    #[test]
    fn fit_is_reproducible_and_descends() {
        let pts: Vec<SparseVector> = (0..24)
            .map(|i| {
                let mut v = vec![0.0; 6];
                v[i % 3] = 1.0;
                v[3 + i % 2] = 0.1 * (i as f64 / 24.0);
                SparseVector::from_dense(&v)
            })
            .collect();
        let cfg = TsneConfig { perplexity: 5.0, iterations: 400, exaggeration_iterations: 100, momentum_switch: 100, ..Default::default() };
        let a = tsne_fit(&pts, &cfg).unwrap();
        let b = tsne_fit(&pts, &cfg).unwrap();
        assert_eq!(a.embedding, b.embedding);
        assert!(a.final_kl() <= a.kl_at(100).unwrap());
        assert!(a.embedding.coords().iter().all(|c| c.is_finite()));
    }
}
