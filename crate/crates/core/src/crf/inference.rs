//! Forward-backward and Viterbi over dense log-potentials.

use crate::linalg::logsumexp;
use crate::{Error, Result};

/// Log-potentials of one sequence: `emissions[t·L + y]` and
/// `transitions[a·L + b]` for moving from label `a` to label `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Potentials {
    pub labels: usize,
    pub emissions: Vec<f64>,
    pub transitions: Vec<f64>,
}

impl Potentials {
    pub fn new(labels: usize, emissions: Vec<f64>, transitions: Vec<f64>) -> Self {
        assert!(labels > 0);
        assert_eq!(emissions.len() % labels, 0);
        assert_eq!(transitions.len(), labels * labels);
        Potentials {
            labels,
            emissions,
            transitions,
        }
    }

    pub fn len(&self) -> usize {
        self.emissions.len() / self.labels
    }

    pub fn is_empty(&self) -> bool {
        self.emissions.is_empty()
    }

    pub fn emission(&self, t: usize, y: usize) -> f64 {
        self.emissions[t * self.labels + y]
    }

    pub fn transition(&self, a: usize, b: usize) -> f64 {
        self.transitions[a * self.labels + b]
    }

    /// Unnormalized log-score of one labeling.
    pub fn path_score(&self, path: &[usize]) -> f64 {
        let mut s = 0.0;
        for (t, &y) in path.iter().enumerate() {
            s += self.emission(t, y);
            if t > 0 {
                s += self.transition(path[t - 1], y);
            }
        }
        s
    }

    fn nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::Invalid("empty sequence".into()))
        } else {
            Ok(())
        }
    }

    /// Forward log-messages, `n × L`.
    pub fn forward(&self) -> Vec<f64> {
        let (n, l) = (self.len(), self.labels);
        let mut alpha = vec![0.0; n * l];
        alpha[..l].copy_from_slice(&self.emissions[..l]);
        let mut buf = vec![0.0; l];
        for t in 1..n {
            for y in 0..l {
                for (p, b) in buf.iter_mut().enumerate() {
                    *b = alpha[(t - 1) * l + p] + self.transition(p, y);
                }
                alpha[t * l + y] = self.emission(t, y) + logsumexp(&buf);
            }
        }
        alpha
    }

    /// Backward log-messages, `n × L`.
    pub fn backward(&self) -> Vec<f64> {
        let (n, l) = (self.len(), self.labels);
        let mut beta = vec![0.0; n * l];
        let mut buf = vec![0.0; l];
        for t in (0..n.saturating_sub(1)).rev() {
            for y in 0..l {
                for (q, b) in buf.iter_mut().enumerate() {
                    *b = self.transition(y, q) + self.emission(t + 1, q) + beta[(t + 1) * l + q];
                }
                beta[t * l + y] = logsumexp(&buf);
            }
        }
        beta
    }

    /// `log Z` from the forward recursion.
    pub fn log_partition(&self) -> Result<f64> {
        self.nonempty()?;
        let alpha = self.forward();
        let l = self.labels;
        Ok(logsumexp(&alpha[(self.len() - 1) * l..]))
    }

    /// `log Z` from the backward recursion.
    pub fn log_partition_backward(&self) -> Result<f64> {
        self.nonempty()?;
        let beta = self.backward();
        let l = self.labels;
        let terms: Vec<f64> = (0..l).map(|y| self.emissions[y] + beta[y]).collect();
        Ok(logsumexp(&terms))
    }

    /// Posterior marginals `P(y_t = y)` (`n × L`) and pairwise marginals
    /// summed over positions (`L × L`), with `log Z`.
    pub fn marginals(&self) -> Result<Marginals> {
        self.nonempty()?;
        let (n, l) = (self.len(), self.labels);
        let alpha = self.forward();
        let beta = self.backward();
        let log_z = logsumexp(&alpha[(n - 1) * l..]);
        let unary = (0..n * l)
            .map(|i| (alpha[i] + beta[i] - log_z).exp())
            .collect();
        let mut pairwise = vec![0.0; l * l];
        for t in 1..n {
            for a in 0..l {
                let fa = alpha[(t - 1) * l + a];
                for b in 0..l {
                    pairwise[a * l + b] += (fa + self.transition(a, b) + self.emission(t, b)
                        + beta[t * l + b]
                        - log_z)
                        .exp();
                }
            }
        }
        Ok(Marginals {
            log_z,
            unary,
            pairwise,
        })
    }

    /// Highest-scoring labeling and its score. Ties go to the smallest label
    /// index, both at each backpointer and at the final position.
    pub fn viterbi(&self) -> Result<(Vec<usize>, f64)> {
        self.nonempty()?;
        let (n, l) = (self.len(), self.labels);
        let mut delta = self.emissions[..l].to_vec();
        let mut back = vec![0usize; n * l];
        for t in 1..n {
            let mut next = vec![0.0; l];
            for y in 0..l {
                let mut best = 0;
                let mut best_score = delta[0] + self.transition(0, y);
                for p in 1..l {
                    let s = delta[p] + self.transition(p, y);
                    if s > best_score {
                        best = p;
                        best_score = s;
                    }
                }
                back[t * l + y] = best;
                next[y] = best_score + self.emission(t, y);
            }
            delta = next;
        }
        let mut last = 0;
        for y in 1..l {
            if delta[y] > delta[last] {
                last = y;
            }
        }
        let score = delta[last];
        let mut path = vec![0; n];
        path[n - 1] = last;
        for t in (1..n).rev() {
            path[t - 1] = back[t * l + path[t]];
        }
        Ok((path, score))
    }
}

#[derive(Debug, Clone)]
pub struct Marginals {
    pub log_z: f64,
    pub unary: Vec<f64>,
    pub pairwise: Vec<f64>,
}
