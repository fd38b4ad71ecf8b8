//! Experience replay with n-step returns.

use std::sync::Arc;

use rand::Rng;

use crate::environment::Instance;
use crate::graph::NodeId;

/// A state is the instance plus the set of nodes intervened on so far.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub instance: Arc<Instance>,
    pub marked: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Snapshot,
    pub action: NodeId,
    /// Discounted reward sum over at most `n` steps.
    pub ret: f64,
    /// State `n` steps later; `None` when the window reached the episode end.
    pub next: Option<Snapshot>,
    /// Discount applied to the bootstrap value, `gamma^n`.
    pub discount: f64,
}

/// Converts one finished episode into n-step transitions.
///
/// `marks[t]` is the intervened set before step `t`, so it has one more entry
/// than `actions` and `rewards`.
pub fn nstep_transitions(
    instance: &Arc<Instance>,
    marks: &[Vec<bool>],
    actions: &[NodeId],
    rewards: &[f64],
    gamma: f64,
    n: usize,
) -> Vec<Transition> {
    let horizon = actions.len();
    assert_eq!(rewards.len(), horizon, "one reward per action");
    assert_eq!(marks.len(), horizon + 1, "one state per step plus the final one");
    let n = n.max(1);
    (0..horizon)
        .map(|t| {
            let end = (t + n).min(horizon);
            let mut ret = 0.0;
            let mut g = 1.0;
            for r in &rewards[t..end] {
                ret += g * r;
                g *= gamma;
            }
            let next = (t + n < horizon).then(|| Snapshot {
                instance: Arc::clone(instance),
                marked: marks[t + n].clone(),
            });
            Transition {
                state: Snapshot {
                    instance: Arc::clone(instance),
                    marked: marks[t].clone(),
                },
                action: actions[t],
                ret,
                next,
                discount: gamma.powi(n as i32),
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: Vec::new(),
            head: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Adds a transition, overwriting the oldest once full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
    }

    pub fn extend(&mut self, ts: impl IntoIterator<Item = Transition>) {
        for t in ts {
            self.push(t);
        }
    }

    /// Uniform sample with replacement.
    pub fn sample<'b, R: Rng + ?Sized>(&'b self, size: usize, rng: &mut R) -> Vec<&'b Transition> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..size)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::Variant;
    use crate::graph::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn inst() -> Arc<Instance> {
        Arc::new(
            Instance::new(
                Arc::new(Graph::new(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]).unwrap()),
                vec![1.0, 1.0, -1.0, -1.0],
                vec![1.0; 4],
                3,
                Variant::Mi,
            )
            .unwrap(),
        )
    }

    fn marks() -> Vec<Vec<bool>> {
        vec![
            vec![false; 4],
            vec![true, false, false, false],
            vec![true, true, false, false],
            vec![true, true, true, false],
        ]
    }

    #[test]
    fn one_step_returns_are_rewards() {
        let ts = nstep_transitions(&inst(), &marks(), &[0, 1, 2], &[-1.0, -2.0, -3.0], 0.9, 1);
        assert_eq!(ts.iter().map(|t| t.ret).collect::<Vec<_>>(), vec![-1.0, -2.0, -3.0]);
        assert_eq!(ts[0].next.as_ref().unwrap().marked, marks()[1]);
        assert!(ts[2].next.is_none());
    }

    #[test]
    fn full_window_sums_rewards() {
        let ts = nstep_transitions(&inst(), &marks(), &[0, 1, 2], &[-1.0, -2.0, -3.0], 1.0, 3);
        assert_eq!(ts[0].ret, -6.0);
        assert!(ts.iter().all(|t| t.next.is_none()));
    }

    #[test]
    fn windows_truncate_at_the_end() {
        let ts = nstep_transitions(&inst(), &marks(), &[0, 1, 2], &[-1.0, -2.0, -3.0], 0.5, 2);
        assert_eq!(ts[0].ret, -1.0 + 0.5 * -2.0);
        assert_eq!(ts[0].next.as_ref().unwrap().marked, marks()[2]);
        assert_eq!(ts[0].discount, 0.25);
        assert_eq!(ts[1].ret, -2.0 + 0.5 * -3.0);
        assert!(ts[1].next.is_none());
        assert!(ts[2].next.is_none());
    }

    #[test]
    fn ring_buffer_keeps_capacity() {
        let mut b = ReplayBuffer::new(2);
        let ts = nstep_transitions(&inst(), &marks(), &[0, 1, 2], &[-1.0, -2.0, -3.0], 1.0, 1);
        b.extend(ts);
        assert_eq!(b.len(), 2);
        let mut seen: Vec<usize> = b.items.iter().map(|t| t.action).collect();
        seen.sort();
        assert_eq!(seen, vec![1, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(b.sample(5, &mut rng).len(), 5);
        assert!(ReplayBuffer::new(3).sample(4, &mut rng).is_empty());
    }
}
