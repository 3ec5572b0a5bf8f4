//! Reference solvers for tests. They share no code path with the production
//! algorithms they check.

use crate::nn::Mlp;

/// Deterministic tabular MDP.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    /// `next[s][a]`
    pub next: Vec<Vec<usize>>,
    /// `reward[s][a]`
    pub reward: Vec<Vec<f64>>,
}

impl TabularMdp {
    pub fn n_states(&self) -> usize {
        self.next.len()
    }

    pub fn n_actions(&self) -> usize {
        self.next[0].len()
    }

    /// Iterates `Q(s,a) <- R(s,a) + gamma * max_a' Q(s', a')` until the largest
    /// change is below `tol`.
    pub fn value_iteration(&self, gamma: f64, tol: f64) -> Vec<Vec<f64>> {
        let mut q = vec![vec![0.0; self.n_actions()]; self.n_states()];
        loop {
            let mut delta: f64 = 0.0;
            let v: Vec<f64> = q.iter().map(|row| row.iter().cloned().fold(f64::NEG_INFINITY, f64::max)).collect();
            for s in 0..self.n_states() {
                for a in 0..self.n_actions() {
                    let new = self.reward[s][a] + gamma * v[self.next[s][a]];
                    delta = delta.max((new - q[s][a]).abs());
                    q[s][a] = new;
                }
            }
            if delta < tol {
                return q;
            }
        }
    }

    pub fn greedy_policy(q: &[Vec<f64>]) -> Vec<usize> {
        q.iter()
            .map(|row| {
                let mut best = 0;
                for (a, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = a;
                    }
                }
                best
            })
            .collect()
    }
}

/// Central finite-difference gradient of `output_grad . net(input)` with respect
/// to every parameter and every input.
pub fn finite_difference(net: &Mlp, input: &[f64], output_grad: &[f64], h: f64) -> (Vec<f64>, Vec<f64>) {
    let objective =
        |n: &Mlp, x: &[f64]| -> f64 { n.predict(x).unwrap().iter().zip(output_grad).map(|(o, g)| o * g).sum() };
    let mut probe = net.clone();
    let mut params = Vec::with_capacity(net.param_count());
    for i in 0..net.param_count() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + h;
        let plus = objective(&probe, input);
        probe.params_mut()[i] = orig - h;
        let minus = objective(&probe, input);
        probe.params_mut()[i] = orig;
        params.push((plus - minus) / (2.0 * h));
    }
    let mut x = input.to_vec();
    let mut inputs = Vec::with_capacity(input.len());
    for i in 0..input.len() {
        let orig = x[i];
        x[i] = orig + h;
        let plus = objective(net, &x);
        x[i] = orig - h;
        let minus = objective(net, &x);
        x[i] = orig;
        inputs.push((plus - minus) / (2.0 * h));
    }
    (params, inputs)
}

/// Relative error, falling back to absolute error when both magnitudes are tiny.
pub fn gradient_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-6 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / denom
    }
}

/// Dense scan of output `action` over the last input in `[lo, hi]`.
/// Returns `(argmax, max)` over `points` evenly spaced values.
pub fn grid_scan(net: &Mlp, state: &[f64], action: usize, lo: f64, hi: f64, points: usize) -> (f64, f64) {
    let mut x = state.to_vec();
    x.push(lo);
    let last = x.len() - 1;
    let mut best = (lo, f64::NEG_INFINITY);
    for i in 0..points {
        let a = lo + (hi - lo) * i as f64 / (points - 1) as f64;
        x[last] = a;
        let q = net.predict(&x).unwrap()[action];
        if q > best.1 {
            best = (a, q);
        }
    }
    best
}

/// Independent forward pass: explicit per-neuron loops with ReLU applied as `max(0, z)`.
pub fn reference_forward(net: &Mlp, input: &[f64]) -> Vec<f64> {
    let mut a = input.to_vec();
    for (l, spec) in net.layers().iter().enumerate() {
        let w = net.weights(l);
        let b = net.biases(l);
        let mut z = vec![0.0; spec.output_dim];
        for o in 0..spec.output_dim {
            let mut acc = b[o];
            for i in 0..spec.input_dim {
                acc += w[o * spec.input_dim + i] * a[i];
            }
            z[o] = match spec.activation {
                crate::nn::Activation::Relu => f64::max(0.0, acc),
                crate::nn::Activation::Linear => acc,
            };
        }
        a = z;
    }
    a
}
