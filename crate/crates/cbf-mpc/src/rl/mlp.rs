//! Dense multi-layer perceptron with hand-written reverse-mode gradients and
//! an Adam optimizer.
//!
//! Hidden layers use tanh; the output layer is linear. Forward passes run on
//! whole batches (one column per sample) so the heavy lifting is matrix-matrix
//! products. `backward` consumes the cached forward pass and the loss gradient
//! at the output and returns parameter gradients summed over the batch plus
//! the gradient with respect to the input batch (needed when a network feeds
//! another, e.g. the policy feeding a critic).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub struct Layer {
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Cached activations of one batched forward pass. `post[0]` is the input
/// batch; `post[l + 1]` is the output of layer `l` after its activation.
pub struct ForwardPass {
    pub post: Vec<DMatrix<f64>>,
}

impl ForwardPass {
    pub fn output(&self) -> &DMatrix<f64> {
        self.post.last().expect("forward pass has at least the input")
    }
}

/// Per-layer parameter gradients, summed over the batch.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w: Vec<DMatrix<f64>>,
    pub b: Vec<DVector<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            w: net.layers.iter().map(|l| DMatrix::zeros(l.w.nrows(), l.w.ncols())).collect(),
            b: net.layers.iter().map(|l| DVector::zeros(l.b.len())).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for w in &mut self.w {
            *w *= s;
        }
        for b in &mut self.b {
            *b *= s;
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += b;
        }
        for (a, b) in self.b.iter_mut().zip(&other.b) {
            *a += b;
        }
    }
}

impl Mlp {
    /// Glorot-uniform initialization with a dedicated RNG.
    pub fn new(sizes: &[usize], rng: &mut ChaCha8Rng) -> Self {
        assert!(sizes.len() >= 2, "need at least input and output sizes");
        let layers = sizes
            .windows(2)
            .map(|pair| {
                let (n_in, n_out) = (pair[0], pair[1]);
                let s = (6.0 / (n_in + n_out) as f64).sqrt();
                let w = DMatrix::from_fn(n_out, n_in, |_, _| rng.gen_range(-s..s));
                Layer { w, b: DVector::zeros(n_out) }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().expect("non-empty").w.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").w.nrows()
    }

    /// Layer widths including input and output.
    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.input_dim()];
        s.extend(self.layers.iter().map(|l| l.w.nrows()));
        s
    }

    /// Batched forward pass; input has one column per sample.
    pub fn forward(&self, input: &DMatrix<f64>) -> ForwardPass {
        assert_eq!(input.nrows(), self.input_dim(), "input dimension mismatch");
        let last = self.layers.len() - 1;
        let mut post = Vec::with_capacity(self.layers.len() + 1);
        post.push(input.clone_owned());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut pre = &layer.w * post.last().unwrap();
            for mut col in pre.column_iter_mut() {
                col += &layer.b;
            }
            if l < last {
                pre.apply(|x| *x = x.tanh());
            }
            post.push(pre);
        }
        ForwardPass { post }
    }

    /// Convenience single-sample forward returning just the output vector.
    pub fn forward_one(&self, input: &DVector<f64>) -> DVector<f64> {
        let batch = DMatrix::from_column_slice(input.len(), 1, input.as_slice());
        DVector::from_column_slice(self.forward(&batch).output().as_slice())
    }

    /// Reverse-mode pass. `dout` is dL/d(output), one column per sample;
    /// returns parameter gradients summed over the batch and dL/d(input).
    pub fn backward(&self, fwd: &ForwardPass, dout: &DMatrix<f64>) -> (Gradients, DMatrix<f64>) {
        let mut grads = Gradients::zeros_like(self);
        let mut delta = dout.clone_owned();
        let mut dinput = DMatrix::zeros(self.input_dim(), dout.ncols());
        for l in (0..self.layers.len()).rev() {
            grads.w[l] = &delta * fwd.post[l].transpose();
            grads.b[l] = delta.column_sum();
            let dprev = self.layers[l].w.tr_mul(&delta);
            if l > 0 {
                // Input to layer l is tanh output: d tanh = 1 - tanh^2.
                delta = dprev;
                delta.zip_apply(&fwd.post[l], |d, p| *d *= 1.0 - p * p);
            } else {
                dinput = dprev;
            }
        }
        (grads, dinput)
    }

    /// In-place Polyak averaging toward `source`: p <- (1 - tau) p + tau q.
    pub fn polyak_from(&mut self, source: &Mlp, tau: f64) {
        for (dst, src) in self.layers.iter_mut().zip(&source.layers) {
            dst.w.zip_apply(&src.w, |d, s| *d = (1.0 - tau) * *d + tau * s);
            dst.b.zip_apply(&src.b, |d, s| *d = (1.0 - tau) * *d + tau * s);
        }
    }
}

/// Adam optimizer with bias correction, one instance per network.
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for l in 0..net.layers.len() {
            update_matrix(
                &mut net.layers[l].w,
                &grads.w[l],
                &mut self.m.w[l],
                &mut self.v.w[l],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                c1,
                c2,
            );
            let (m, v) = (&mut self.m.b[l], &mut self.v.b[l]);
            for i in 0..net.layers[l].b.len() {
                let g = grads.b[l][i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                net.layers[l].b[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update_matrix(
    p: &mut DMatrix<f64>,
    g: &DMatrix<f64>,
    m: &mut DMatrix<f64>,
    v: &mut DMatrix<f64>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    c1: f64,
    c2: f64,
) {
    for i in 0..p.len() {
        let gi = g[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
        v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
        p[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small_net(seed: u64) -> Mlp {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Mlp::new(&[3, 8, 5, 2], &mut rng)
    }

    /// Scalar test loss: sum of squared outputs over the batch.
    fn loss(net: &Mlp, x: &DMatrix<f64>) -> f64 {
        let out = net.forward(x);
        out.output().iter().map(|v| v * v).sum()
    }

    #[test]
    fn backward_matches_finite_differences_on_every_weight() {
        let mut net = small_net(42);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = DMatrix::from_fn(3, 4, |_, _| rng.gen_range(-1.0..1.0));

        let fwd = net.forward(&x);
        let dout = 2.0 * fwd.output().clone_owned();
        let (grads, _) = net.backward(&fwd, &dout);

        let h = 1e-6;
        for l in 0..net.layers.len() {
            for idx in 0..net.layers[l].w.len() {
                let orig = net.layers[l].w[idx];
                net.layers[l].w[idx] = orig + h;
                let up = loss(&net, &x);
                net.layers[l].w[idx] = orig - h;
                let down = loss(&net, &x);
                net.layers[l].w[idx] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads.w[l][idx];
                let rel = (an - fd).abs() / fd.abs().max(1e-6);
                assert!(rel < 1e-5, "layer {l} w[{idx}]: analytic {an}, fd {fd}");
            }
            for i in 0..net.layers[l].b.len() {
                let orig = net.layers[l].b[i];
                net.layers[l].b[i] = orig + h;
                let up = loss(&net, &x);
                net.layers[l].b[i] = orig - h;
                let down = loss(&net, &x);
                net.layers[l].b[i] = orig;
                let fd = (up - down) / (2.0 * h);
                let an = grads.b[l][i];
                let rel = (an - fd).abs() / fd.abs().max(1e-6);
                assert!(rel < 1e-5, "layer {l} b[{i}]: analytic {an}, fd {fd}");
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let net = small_net(3);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut x = DMatrix::from_fn(3, 2, |_, _| rng.gen_range(-1.0..1.0));

        let fwd = net.forward(&x);
        let dout = 2.0 * fwd.output().clone_owned();
        let (_, dinput) = net.backward(&fwd, &dout);

        let h = 1e-6;
        for idx in 0..x.len() {
            let orig = x[idx];
            x[idx] = orig + h;
            let up = loss(&net, &x);
            x[idx] = orig - h;
            let down = loss(&net, &x);
            x[idx] = orig;
            let fd = (up - down) / (2.0 * h);
            let rel = (dinput[idx] - fd).abs() / fd.abs().max(1e-6);
            assert!(rel < 1e-5, "input[{idx}]: analytic {}, fd {fd}", dinput[idx]);
        }
    }

    #[test]
    fn adam_fits_a_small_regression_problem() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::new(&[1, 16, 1], &mut rng);
        let mut opt = Adam::new(&net, 1e-2);
        let xs = DMatrix::from_fn(1, 32, |_, j| -1.0 + 2.0 * j as f64 / 31.0);
        let ys = xs.map(|x| (2.5 * x).sin());

        let mut first = f64::NAN;
        let mut last = f64::NAN;
        for it in 0..500 {
            let fwd = net.forward(&xs);
            let err = fwd.output() - &ys;
            let mse = err.iter().map(|e| e * e).sum::<f64>() / 32.0;
            if it == 0 {
                first = mse;
            }
            last = mse;
            let dout = err * (2.0 / 32.0);
            let (grads, _) = net.backward(&fwd, &dout);
            opt.step(&mut net, &grads);
        }
        assert!(last < first * 0.05, "mse {first} -> {last}");
        assert!(last < 0.01, "final mse {last}");
    }

    #[test]
    fn polyak_update_moves_targets_toward_source() {
        let mut target = small_net(5);
        let source = small_net(6);
        let before = (target.layers[0].w[(0, 0)] - source.layers[0].w[(0, 0)]).abs();
        target.polyak_from(&source, 0.25);
        let after = (target.layers[0].w[(0, 0)] - source.layers[0].w[(0, 0)]).abs();
        assert!(after < before);
        let mut converged = small_net(5);
        for _ in 0..200 {
            converged.polyak_from(&source, 0.25);
        }
        assert!((converged.layers[1].w[(2, 3)] - source.layers[1].w[(2, 3)]).abs() < 1e-12);
    }

    #[test]
    fn forward_one_agrees_with_batched_forward() {
        let net = small_net(8);
        let x = DVector::from_vec(vec![0.3, -0.7, 0.1]);
        let single = net.forward_one(&x);
        let batch = DMatrix::from_fn(3, 3, |i, j| if j == 1 { x[i] } else { 0.5 });
        let out = net.forward(&batch);
        for i in 0..2 {
            assert_eq!(single[i].to_bits(), out.output()[(i, 1)].to_bits());
        }
    }
}
