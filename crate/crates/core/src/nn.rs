//! Small shared building blocks: ReLU MLPs with both taped and plain forward
//! paths, spectral normalization by power iteration, and orthogonal init.
//!
//! Parameter traversal convention: `visit`/`visit_mut` and the graph-side
//! `vars()` enumerate parameters in the same order (`w0, b0, w1, b1, ...`).
//! Training loops rely on that alignment to pair gradients with parameters.

use rand::Rng;

use crate::tensor::tape::{Tape, Var};
use crate::tensor::{matmul, Tensor};

/// Fully connected ReLU network; the final layer is linear.
#[derive(Debug, Clone)]
pub struct Mlp {
    /// Layer weights, each `[in, out]`.
    pub weights: Vec<Tensor>,
    /// Layer biases, each `[out]`.
    pub biases: Vec<Tensor>,
}

impl Mlp {
    /// He-initialized hidden layers. With `final_zero` the last layer starts
    /// at exactly zero, which callers use to make fresh models act as
    /// identity/uniform maps.
    pub fn new(dims: &[usize], final_zero: bool, rng: &mut impl Rng) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for i in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[i], dims[i + 1]);
            let last = i == dims.len() - 2;
            let w = if last && final_zero {
                Tensor::zeros(&[fan_in, fan_out])
            } else {
                he_init(fan_in, fan_out, rng)
            };
            weights.push(w);
            biases.push(Tensor::zeros(&[fan_out]));
        }
        Mlp { weights, biases }
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].shape()[0]
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().unwrap().shape()[1]
    }

    pub fn graph<'t>(&self, tape: &'t Tape) -> MlpGraph<'t> {
        MlpGraph {
            ws: self.weights.iter().map(|w| tape.leaf(w.clone())).collect(),
            bs: self.biases.iter().map(|b| tape.leaf(b.clone())).collect(),
        }
    }

    /// `x: [rows, in]` flattened; returns `[rows, out]` flattened.
    pub fn forward_plain(&self, x: &[f64], rows: usize) -> Vec<f64> {
        let mut h = x.to_vec();
        let mut cur_dim = self.input_dim();
        assert_eq!(x.len(), rows * cur_dim, "input rows do not match MLP input dim");
        for (li, (w, b)) in self.weights.iter().zip(self.biases.iter()).enumerate() {
            let (fin, fout) = (w.shape()[0], w.shape()[1]);
            assert_eq!(cur_dim, fin);
            let mut out = matmul(&h, w.data(), rows, fin, fout);
            for r in 0..rows {
                for c in 0..fout {
                    out[r * fout + c] += b.data()[c];
                }
            }
            if li + 1 < self.weights.len() {
                for v in out.iter_mut() {
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
            }
            h = out;
            cur_dim = fout;
        }
        h
    }

    pub fn visit(&self, prefix: &str, f: &mut impl FnMut(&str, &Tensor)) {
        for i in 0..self.weights.len() {
            f(&format!("{prefix}.w{i}"), &self.weights[i]);
            f(&format!("{prefix}.b{i}"), &self.biases[i]);
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(&str, &mut Tensor)) {
        for i in 0..self.weights.len() {
            f(&format!("{prefix}.w{i}"), &mut self.weights[i]);
            f(&format!("{prefix}.b{i}"), &mut self.biases[i]);
        }
    }
}

/// Tape-side view of an [`Mlp`]: parameter leaves for one forward/backward.
pub struct MlpGraph<'t> {
    pub ws: Vec<Var<'t>>,
    pub bs: Vec<Var<'t>>,
}

impl<'t> MlpGraph<'t> {
    pub fn forward(&self, x: Var<'t>) -> Var<'t> {
        let mut h = x;
        for (i, (&w, &b)) in self.ws.iter().zip(self.bs.iter()).enumerate() {
            h = h.matmul(w) + b;
            if i + 1 < self.ws.len() {
                h = h.relu();
            }
        }
        h
    }

    /// Leaves in `visit` order.
    pub fn vars(&self) -> Vec<Var<'t>> {
        self.ws
            .iter()
            .zip(self.bs.iter())
            .flat_map(|(&w, &b)| [w, b])
            .collect()
    }
}

pub fn he_init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor {
    let std = (2.0 / fan_in as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| {
            // Box-Muller keeps us off rand_distr here; the exact distribution
            // of init noise is immaterial.
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen_range(0.0..1.0);
            std * (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        })
        .collect();
    Tensor::new(vec![fan_in, fan_out], data)
}

/// One power-iteration refinement of `u` for `w: [m, n]`; returns the spectral
/// norm estimate σ̂ = uᵀ W v.
pub fn power_iteration_step(w: &Tensor, u: &mut [f64]) -> f64 {
    let (m, n) = (w.rows(), w.cols());
    assert_eq!(u.len(), m, "power vector length must match rows");
    // v = normalize(Wᵀ u)
    let mut v = vec![0.0; n];
    for i in 0..m {
        let ui = u[i];
        if ui == 0.0 {
            continue;
        }
        for j in 0..n {
            v[j] += w.data()[i * n + j] * ui;
        }
    }
    normalize(&mut v);
    // u = normalize(W v)
    let mut nu = vec![0.0; m];
    for i in 0..m {
        let row = &w.data()[i * n..(i + 1) * n];
        nu[i] = row.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
    }
    normalize(&mut nu);
    u.copy_from_slice(&nu);
    // σ̂ = uᵀ W v
    let mut sigma = 0.0;
    for i in 0..m {
        let row = &w.data()[i * n..(i + 1) * n];
        let wv: f64 = row.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        sigma += u[i] * wv;
    }
    sigma
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
}

/// Refine `u` for `iters` steps, then rescale `w` in place to spectral norm
/// `c` (Ŵ = c·W/σ̂). Returns the σ̂ estimate before rescaling; zero means the
/// matrix was all zeros and was left untouched.
pub fn spectral_normalize(w: &mut Tensor, u: &mut [f64], c: f64, iters: usize) -> f64 {
    let mut sigma = 0.0;
    for _ in 0..iters {
        sigma = power_iteration_step(w, u);
    }
    if sigma > 0.0 {
        let scale = c / sigma;
        for v in w.data_mut().iter_mut() {
            *v *= scale;
        }
    }
    sigma
}

/// Independent spectral-norm estimate: fresh random start, many iterations.
pub fn spectral_norm_estimate(w: &Tensor, iters: usize, seed: u64) -> f64 {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let mut u: Vec<f64> = (0..w.rows()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    normalize(&mut u);
    let mut sigma = 0.0;
    for _ in 0..iters {
        sigma = power_iteration_step(w, &mut u);
    }
    sigma
}

/// Random orthogonal `[n, n]` matrix via modified Gram-Schmidt on a Gaussian
/// draw.
pub fn random_orthogonal(n: usize, rng: &mut impl Rng) -> Tensor {
    let g = he_init(n, n, rng);
    // columns of g orthonormalized
    let mut q = g.data().to_vec();
    for j in 0..n {
        for prev in 0..j {
            let mut dot = 0.0;
            for i in 0..n {
                dot += q[i * n + j] * q[i * n + prev];
            }
            for i in 0..n {
                q[i * n + j] -= dot * q[i * n + prev];
            }
        }
        // second pass for numerical cleanliness
        for prev in 0..j {
            let mut dot = 0.0;
            for i in 0..n {
                dot += q[i * n + j] * q[i * n + prev];
            }
            for i in 0..n {
                q[i * n + j] -= dot * q[i * n + prev];
            }
        }
        let mut norm = 0.0;
        for i in 0..n {
            norm += q[i * n + j] * q[i * n + j];
        }
        let norm = norm.sqrt();
        assert!(norm > 1e-9, "degenerate random draw in orthogonal init");
        for i in 0..n {
            q[i * n + j] /= norm;
        }
    }
    Tensor::new(vec![n, n], q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn graph_and_plain_forward_agree() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let mlp = Mlp::new(&[4, 8, 3], false, &mut rng);
        let x: Vec<f64> = (0..12).map(|i| (i as f64 * 0.17).sin()).collect();
        let plain = mlp.forward_plain(&x, 3);
        let tape = Tape::new();
        let g = mlp.graph(&tape);
        let xv = tape.leaf(Tensor::new(vec![3, 4], x));
        let out = g.forward(xv).value();
        for (a, b) in out.data().iter().zip(plain.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn final_zero_outputs_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(6);
        let mlp = Mlp::new(&[4, 8, 3], true, &mut rng);
        let x: Vec<f64> = (0..8).map(|i| i as f64).collect();
        let out = mlp.forward_plain(&x, 2);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spectral_norm_of_diagonal_matrix() {
        // σ of diag(2, 1) is 2; normalizing with c = 1 gives diag(1, 0.5)
        let mut w = Tensor::new(vec![2, 2], vec![2.0, 0.0, 0.0, 1.0]);
        let mut u = vec![0.9, 0.1]; // anything not orthogonal to e1
        let sigma = spectral_normalize(&mut w, &mut u, 1.0, 200);
        assert!((sigma - 2.0).abs() < 1e-9, "sigma {sigma}");
        let want = [1.0, 0.0, 0.0, 0.5];
        for (a, b) in w.data().iter().zip(want.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn unit_norm_matrix_is_unchanged() {
        let mut rng = ChaCha12Rng::seed_from_u64(7);
        let mut w = he_init(6, 6, &mut rng);
        // normalize to 1 first
        let mut u = vec![1.0; 6];
        spectral_normalize(&mut w, &mut u, 1.0, 300);
        let before = w.clone();
        spectral_normalize(&mut w, &mut u, 1.0, 50);
        for (a, b) in w.data().iter().zip(before.data().iter()) {
            assert!((a - b).abs() < 1e-9, "already-normalized matrix must be a fixed point");
        }
    }

    #[test]
    fn fifty_iterations_match_long_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let w = he_init(16, 16, &mut rng);
        let mut u: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut sigma = 0.0;
        for _ in 0..50 {
            sigma = power_iteration_step(&w, &mut u);
        }
        let oracle = spectral_norm_estimate(&w, 1000, 12345);
        assert!(
            (sigma - oracle).abs() <= 1e-3,
            "50-step σ̂ {sigma} vs 1000-step oracle {oracle}"
        );
    }

    #[test]
    fn zero_matrix_reports_zero_sigma() {
        let mut w = Tensor::zeros(&[3, 3]);
        let mut u = vec![1.0, 0.0, 0.0];
        let sigma = spectral_normalize(&mut w, &mut u, 1.0, 5);
        assert_eq!(sigma, 0.0);
        assert!(w.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_orthogonal_is_orthogonal() {
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let n = 12;
        let q = random_orthogonal(n, &mut rng);
        // QᵀQ = I
        for i in 0..n {
            for j in 0..n {
                let mut dot = 0.0;
                for r in 0..n {
                    dot += q.data()[r * n + i] * q.data()[r * n + j];
                }
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-10, "QtQ[{i},{j}] = {dot}");
            }
        }
    }
}
