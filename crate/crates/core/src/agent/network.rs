//! Fully connected Q-network with hand-written backpropagation and Adam.

use rand::Rng;
use rand_distr::{Distribution, Normal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn name(&self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    fn apply(&self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(&self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

/// Dense layer, weights stored row-major as `[out][in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Layer {
    fn he<R: Rng + ?Sized>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (2.0 / inputs as f64).sqrt()).expect("finite std");
        Self {
            inputs,
            outputs,
            weights: (0..inputs * outputs).map(|_| normal.sample(rng)).collect(),
            biases: vec![0.0; outputs],
        }
    }

    fn zeros_like(&self) -> Self {
        Self {
            inputs: self.inputs,
            outputs: self.outputs,
            weights: vec![0.0; self.weights.len()],
            biases: vec![0.0; self.biases.len()],
        }
    }

    fn forward_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.outputs {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            let dot: f64 = row.iter().zip(input).map(|(w, x)| w * x).sum();
            out.push(dot + self.biases[o]);
        }
    }
}

/// MLP `inputs -> hidden... -> actions`, linear output layer.
#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Parameter-shaped container for gradients and optimizer moments.
pub type Gradients = QNetwork;

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(
        inputs: usize,
        hidden: &[usize],
        actions: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let mut sizes = vec![inputs];
        sizes.extend_from_slice(hidden);
        sizes.push(actions);
        let layers = sizes.windows(2).map(|w| Layer::he(w[0], w[1], rng)).collect();
        Self { layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self.layers.iter().map(Layer::zeros_like).collect(),
            activation: self.activation,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    /// Flat view over all parameters in layer order, weights before biases.
    pub fn parameters(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weights.iter().chain(l.biases.iter()))
    }

    pub fn parameters_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.biases.iter_mut()))
    }

    pub fn is_finite(&self) -> bool {
        self.parameters().all(|p| p.is_finite())
    }

    pub fn forward(&self, input: &[f64]) -> Vec<f64> {
        let mut acts = Vec::new();
        self.forward_trace(input, &mut acts);
        acts.pop().unwrap_or_default()
    }

    /// Records every layer's output (post-activation for hidden layers) in
    /// `acts`; `acts[0]` is the input.
    fn forward_trace(&self, input: &[f64], acts: &mut Vec<Vec<f64>>) {
        acts.clear();
        acts.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = Vec::with_capacity(layer.outputs);
            layer.forward_into(&acts[i], &mut out);
            if i < last {
                for v in &mut out {
                    *v = self.activation.apply(*v);
                }
            }
            acts.push(out);
        }
    }

    /// Accumulates `d(output . upstream) / d(params)` into `grads`.
    fn backward(&self, acts: &[Vec<f64>], upstream: &[f64], grads: &mut Gradients) {
        let mut delta = upstream.to_vec();
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let input = &acts[i];
            let g = &mut grads.layers[i];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                g.biases[o] += d;
                let row = &mut g.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (gw, x) in row.iter_mut().zip(input) {
                    *gw += d * x;
                }
            }
            if i == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.inputs];
            for o in 0..layer.outputs {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                for (p, w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            for (p, y) in prev.iter_mut().zip(&acts[i]) {
                *p *= self.activation.derivative_from_output(*y);
            }
            delta = prev;
        }
    }
}

/// One transition as consumed by the TD update.
#[derive(Clone, Debug, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
}

/// TD targets `r + gamma (1 - d) max_a' Q_boot(s', a')`.
pub fn td_targets(bootstrap: &QNetwork, batch: &[&Transition], gamma: f64) -> Vec<f64> {
    batch
        .iter()
        .map(|t| {
            if t.done {
                t.reward
            } else {
                let next = bootstrap.forward(&t.next_obs);
                t.reward + gamma * next.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
        })
        .collect()
}

/// Mean squared TD error and its gradient with the targets held fixed.
pub fn td_loss_and_gradient(net: &QNetwork, batch: &[&Transition], targets: &[f64]) -> (f64, Gradients) {
    let mut grads = net.zeros_like();
    let mut acts = Vec::new();
    let mut loss = 0.0;
    let n = batch.len() as f64;
    let mut upstream = vec![0.0; net.output_dim()];
    for (t, y) in batch.iter().zip(targets) {
        net.forward_trace(&t.obs, &mut acts);
        let q = acts.last().expect("output layer")[t.action];
        let err = q - y;
        loss += err * err / n;
        upstream.iter_mut().for_each(|u| *u = 0.0);
        upstream[t.action] = 2.0 * err / n;
        net.backward(&acts, &upstream, &mut grads);
    }
    (loss, grads)
}

/// Mean squared TD error without gradients.
pub fn td_loss(net: &QNetwork, batch: &[&Transition], targets: &[f64]) -> f64 {
    let n = batch.len() as f64;
    batch
        .iter()
        .zip(targets)
        .map(|(t, y)| {
            let e = net.forward(&t.obs)[t.action] - y;
            e * e / n
        })
        .sum()
}

/// Relative error `||g_analytic - g_fd|| / ||g_analytic||` between the
/// backpropagated TD-loss gradient and central differences (step 1e-5) on a
/// small seeded network and batch.
pub fn gradient_check(activation: Activation, seed: u64) -> f64 {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let net = QNetwork::new(4, &[6, 5], 3, activation, &mut rng);
    let batch: Vec<Transition> = (0..8)
        .map(|i| Transition {
            obs: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            action: rng.random_range(0..3),
            reward: rng.random_range(-1.0..0.0),
            next_obs: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            done: i % 3 == 0,
        })
        .collect();
    let refs: Vec<&Transition> = batch.iter().collect();
    let targets = td_targets(&net, &refs, 0.95);
    let (_, grads) = td_loss_and_gradient(&net, &refs, &targets);
    let h = 1e-5;
    let mut diff = 0.0;
    let mut scale = 0.0;
    for (i, g) in grads.parameters().enumerate() {
        let mut plus = net.clone();
        *plus.parameters_mut().nth(i).expect("index in range") += h;
        let mut minus = net.clone();
        *minus.parameters_mut().nth(i).expect("index in range") -= h;
        let fd = (td_loss(&plus, &refs, &targets) - td_loss(&minus, &refs, &targets)) / (2.0 * h);
        diff += (g - fd).powi(2);
        scale += g * g;
    }
    (diff / scale).sqrt()
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Gradients,
    v: Gradients,
    t: i32,
}

impl Adam {
    pub fn new(net: &QNetwork, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: net.zeros_like(),
            v: net.zeros_like(),
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut QNetwork, grads: &Gradients) {
        if self.lr == 0.0 {
            return;
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        for (((p, g), m), v) in net
            .parameters_mut()
            .zip(grads.parameters())
            .zip(self.m.parameters_mut())
            .zip(self.v.parameters_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_net(activation: Activation, seed: u64) -> QNetwork {
        QNetwork::new(4, &[6, 5], 3, activation, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    fn batch(rng: &mut ChaCha8Rng, n: usize, inputs: usize, actions: usize) -> Vec<Transition> {
        (0..n)
            .map(|i| Transition {
                obs: (0..inputs).map(|_| rng.random_range(-1.0..1.0)).collect(),
                action: rng.random_range(0..actions),
                reward: rng.random_range(-1.0..0.0),
                next_obs: (0..inputs).map(|_| rng.random_range(-1.0..1.0)).collect(),
                done: i % 3 == 0,
            })
            .collect()
    }

    #[test]
    fn zero_output_layer_returns_biases() {
        let mut net = small_net(Activation::Relu, 1);
        let last = net.layers.last_mut().unwrap();
        last.weights.iter_mut().for_each(|w| *w = 0.0);
        last.biases = vec![0.5, -1.0, 2.0];
        assert_eq!(net.forward(&[0.3, -0.2, 0.9, 1.0]), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn forward_is_deterministic_per_seed() {
        let a = small_net(Activation::Tanh, 7);
        let b = small_net(Activation::Tanh, 7);
        let x = [0.1, 0.2, -0.3, 0.4];
        let (qa, qb) = (a.forward(&x), b.forward(&x));
        assert!(qa.iter().zip(&qb).all(|(p, q)| p.to_bits() == q.to_bits()));
        assert_eq!(a.forward(&x), qa);
        assert_ne!(small_net(Activation::Tanh, 8).forward(&x), qa);
    }

    #[test]
    fn forward_is_continuous_in_input() {
        let net = small_net(Activation::Tanh, 3);
        let x = vec![0.1, 0.2, -0.3, 0.4];
        for i in 0..4 {
            let q = |h: f64| {
                let mut y = x.clone();
                y[i] += h;
                net.forward(&y)
            };
            let slope: Vec<f64> = q(1e-6).iter().zip(q(-1e-6)).map(|(a, b)| (a - b) / 2e-6).collect();
            let slope_coarse: Vec<f64> = q(1e-4).iter().zip(q(-1e-4)).map(|(a, b)| (a - b) / 2e-4).collect();
            for (s, c) in slope.iter().zip(&slope_coarse) {
                assert!(s.is_finite() && (s - c).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn targets_for_terminal_and_zero_discount() {
        let net = small_net(Activation::Relu, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = batch(&mut rng, 6, 4, 3);
        let refs: Vec<&Transition> = b.iter().collect();
        let y = td_targets(&net, &refs, 0.99);
        for (t, y) in b.iter().zip(&y) {
            if t.done {
                assert_eq!(*y, t.reward);
            }
        }
        let y0 = td_targets(&net, &refs, 0.0);
        for (t, y) in b.iter().zip(&y0) {
            assert_eq!(*y, t.reward);
        }
    }

    #[test]
    fn two_action_linear_net_loss_by_hand() {
        // No hidden layers: Q(s) = W s + b.
        let net = QNetwork {
            layers: vec![Layer {
                inputs: 2,
                outputs: 2,
                weights: vec![1.0, 2.0, -1.0, 0.5],
                biases: vec![0.1, -0.2],
            }],
            activation: Activation::Relu,
        };
        let t = Transition {
            obs: vec![0.5, -1.0],
            action: 1,
            reward: -0.3,
            next_obs: vec![1.0, 1.0],
            done: false,
        };
        // Q(s, 1) = -0.5 - 0.5 - 0.2 = -1.2
        // Q(s') = (3.1, -0.7), max 3.1; y = -0.3 + 0.9 * 3.1 = 2.49
        // loss = (-1.2 - 2.49)^2 = 13.6161
        let y = td_targets(&net, &[&t], 0.9);
        assert!((y[0] - 2.49).abs() < 1e-12);
        let (loss, grads) = td_loss_and_gradient(&net, &[&t], &y);
        assert!((loss - 13.6161).abs() < 1e-10);
        // dL/dW[1] = 2 (Q - y) s = -7.38 * (0.5, -1.0)
        let g = &grads.layers[0];
        assert!((g.weights[2] - (-3.69)).abs() < 1e-10);
        assert!((g.weights[3] - 7.38).abs() < 1e-10);
        assert!((g.biases[1] - (-7.38)).abs() < 1e-10);
        assert_eq!(&g.weights[..2], &[0.0, 0.0]);
    }

    #[test]
    fn analytic_gradient_matches_finite_differences() {
        for seed in 0..4 {
            assert!(gradient_check(Activation::Tanh, seed) < 1e-4);
        }
        // Seed 1 puts a ReLU pre-activation within 1e-5 of its kink, where
        // central differences are meaningless.
        for seed in [0, 2, 3] {
            assert!(gradient_check(Activation::Relu, seed) < 1e-4);
        }
    }

    #[test]
    fn adam_reduces_loss_and_zero_lr_is_inert() {
        let mut net = small_net(Activation::Tanh, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let b = batch(&mut rng, 16, 4, 3);
        let refs: Vec<&Transition> = b.iter().collect();
        let targets: Vec<f64> = b.iter().map(|t| t.reward).collect();

        let frozen = net.clone();
        let mut still = Adam::new(&net, 0.0);
        let (_, g) = td_loss_and_gradient(&net, &refs, &targets);
        still.step(&mut net, &g);
        assert_eq!(net, frozen);

        let mut adam = Adam::new(&net, 1e-2);
        let before = td_loss(&net, &refs, &targets);
        for _ in 0..200 {
            let (_, g) = td_loss_and_gradient(&net, &refs, &targets);
            adam.step(&mut net, &g);
        }
        assert!(td_loss(&net, &refs, &targets) < 0.1 * before);
    }
}
