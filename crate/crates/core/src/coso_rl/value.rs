use serde::{Deserialize, Serialize};

use crate::optim::Adam;

/// Linear state-value baseline over one-hot state features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearValue {
    cards: Vec<usize>,
    /// One weight per one-hot feature, then a bias.
    pub weights: Vec<f64>,
    opt: Adam,
}

impl LinearValue {
    pub fn new(cards: Vec<usize>, lr: f64) -> Self {
        let len = cards.iter().sum::<usize>() + 1;
        Self { cards, weights: vec![0.0; len], opt: Adam::new(len, lr) }
    }

    fn active<'a>(&'a self, state: &'a [u8]) -> impl Iterator<Item = usize> + 'a {
        let mut off = 0;
        state.iter().zip(&self.cards).map(move |(f, c)| {
            let i = off + *f as usize;
            off += c;
            i
        })
    }

    pub fn predict(&self, state: &[u8]) -> f64 {
        let bias = self.weights[self.weights.len() - 1];
        bias + self.active(state).map(|i| self.weights[i]).sum::<f64>()
    }

    /// One Adam step on the mean squared error; returns the loss before it.
    pub fn fit_step(&mut self, states: &[&[u8]], targets: &[f64]) -> f64 {
        if states.is_empty() {
            return 0.0;
        }
        let m = states.len() as f64;
        let mut grad = vec![0.0; self.weights.len()];
        let bias = grad.len() - 1;
        let mut loss = 0.0;
        for (s, t) in states.iter().zip(targets) {
            let err = self.predict(s) - t;
            loss += err * err / m;
            let g = 2.0 * err / m;
            for i in self.active(s).collect::<Vec<_>>() {
                grad[i] += g;
            }
            grad[bias] += g;
        }
        self.opt.descend(&mut self.weights, &grad);
        loss
    }
}
