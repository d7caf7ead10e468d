use rand::Rng;

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(q: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in q.iter().enumerate().skip(1) {
        if *v > q[best] {
            best = i;
        }
    }
    best
}

/// Linear decay from `start` to `end` over the first `fraction` of
/// `total_steps`, constant afterwards.
pub fn epsilon_at(step: usize, total_steps: usize, start: f64, end: f64, fraction: f64) -> f64 {
    let horizon = fraction * total_steps as f64;
    if horizon <= 0.0 {
        return end;
    }
    let progress = step as f64 / horizon;
    if progress >= 1.0 {
        end
    } else {
        start + (end - start) * progress
    }
}

/// Currently applied action and the steps left before another switch is allowed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DwellState {
    pub current: usize,
    pub remaining: usize,
    pub dwell_steps: usize,
}

impl DwellState {
    /// Fresh state: the first call to [`select_action`] is a decision point.
    pub fn new(initial: usize, dwell_steps: usize) -> Self {
        Self {
            current: initial,
            remaining: 0,
            dwell_steps,
        }
    }

    pub fn can_switch(&self) -> bool {
        self.remaining == 0
    }

    /// Advances one environment step.
    pub fn tick(&mut self) {
        self.remaining = self.remaining.saturating_sub(1);
    }
}

/// Epsilon-greedy choice masked by the dwell timer. While the timer runs the
/// current action is returned untouched; at a decision point the choice is
/// made and the timer reset to `dwell_steps`.
pub fn select_action<R: Rng + ?Sized>(q: &[f64], epsilon: f64, dwell: &mut DwellState, rng: &mut R) -> usize {
    if !dwell.can_switch() {
        return dwell.current;
    }
    let explore = epsilon > 0.0 && rng.random::<f64>() < epsilon;
    let action = if explore {
        rng.random_range(0..q.len())
    } else {
        argmax(q)
    };
    dwell.current = action;
    dwell.remaining = dwell.dwell_steps;
    action
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn greedy_when_epsilon_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = DwellState::new(0, 10);
        assert_eq!(select_action(&[0.1, 0.7, -0.2, 0.7], 0.0, &mut d, &mut rng), 1);
        assert_eq!(d.remaining, 10);
    }

    #[test]
    fn dwell_holds_previous_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut d = DwellState {
            current: 2,
            remaining: 3,
            dwell_steps: 10,
        };
        assert_eq!(select_action(&[5.0, 0.0, -5.0], 0.0, &mut d, &mut rng), 2);
        assert_eq!(select_action(&[5.0, 0.0, -5.0], 1.0, &mut d, &mut rng), 2);
        assert_eq!(d.remaining, 3);
    }

    #[test]
    fn ties_break_to_lowest_index() {
        assert_eq!(argmax(&[0.0; 15]), 0);
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }

    #[test]
    fn uniform_exploration_within_three_sigma() {
        let n = 15;
        let draws = 100_000;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut counts = vec![0usize; n];
        let q = vec![0.0; n];
        for _ in 0..draws {
            let mut d = DwellState::new(0, 10);
            counts[select_action(&q, 1.0, &mut d, &mut rng)] += 1;
        }
        let p = 1.0 / n as f64;
        let mean = draws as f64 * p;
        let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() < 3.0 * sigma, "count {c} vs {mean}");
        }
    }

    #[test]
    fn epsilon_schedule_endpoints() {
        assert_eq!(epsilon_at(0, 1000, 1.0, 0.05, 0.6), 1.0);
        assert!((epsilon_at(300, 1000, 1.0, 0.05, 0.6) - 0.525).abs() < 1e-12);
        assert_eq!(epsilon_at(600, 1000, 1.0, 0.05, 0.6), 0.05);
        assert_eq!(epsilon_at(999, 1000, 1.0, 0.05, 0.6), 0.05);
        assert_eq!(epsilon_at(5, 1000, 1.0, 0.05, 0.0), 0.05);
    }

    proptest! {
        #[test]
        fn switches_only_on_dwell_multiples(
            dwell in 1usize..20,
            steps in 1usize..300,
            eps in 0.0f64..=1.0,
            seed in any::<u64>(),
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut d = DwellState::new(0, dwell);
            let mut prev = None;
            for step in 0..steps {
                let q: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
                let a = select_action(&q, eps, &mut d, &mut rng);
                prop_assert!(d.remaining <= dwell);
                if let Some(p) = prev {
                    if p != a {
                        prop_assert_eq!(step % dwell, 0);
                    }
                }
                prev = Some(a);
                d.tick();
            }
        }
    }
}
