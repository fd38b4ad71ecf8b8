//! Learned node-selection policy: scoring, action choice, deployment and
//! persistence. Training lives in [`train`].

pub mod network;
pub mod replay;
pub mod train;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::{Method, Plan};
use crate::encoder::InputBuilder;
use crate::environment::{Instance, Variant};
use crate::error::{Error, Result};
use crate::graph::NodeId;
use crate::neural::{load_checkpoint, save_checkpoint, ParamStore};

pub use network::{Interaction, NetConfig, QNet, MASK_PENALTY};
pub use replay::{nstep_transitions, ReplayBuffer, Snapshot, Transition};
pub use train::{AgentConfig, TrainLogRow, TrainOutcome, TrainVariant, Trainer};

/// Feasible node with the highest score, ties broken by ascending id.
pub fn argmax_feasible(q: &[f64], mask: &[bool]) -> Option<NodeId> {
    let mut best: Option<NodeId> = None;
    for v in (0..q.len()).filter(|&v| mask[v]) {
        if best.is_none_or(|b| q[v] > q[b]) {
            best = Some(v);
        }
    }
    best
}

/// Epsilon-greedy choice over feasible nodes.
///
/// One uniform draw decides between exploring and exploiting, so the random
/// stream advances identically for every `eps`.
pub fn select_action<R: Rng + ?Sized>(q: &[f64], mask: &[bool], eps: f64, rng: &mut R) -> Result<NodeId> {
    let feasible: Vec<NodeId> = (0..mask.len()).filter(|&v| mask[v]).collect();
    if feasible.is_empty() {
        return Err(Error::EpisodeDone);
    }
    if rng.gen::<f64>() < eps {
        Ok(feasible[rng.gen_range(0..feasible.len())])
    } else {
        Ok(argmax_feasible(q, mask).expect("feasible set is not empty"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta {
    pub net: NetConfig,
    pub trained_as: TrainVariant,
    pub variant: Variant,
}

/// A network layout together with its weights.
#[derive(Debug, Clone)]
pub struct Policy {
    pub meta: PolicyMeta,
    pub net: QNet,
    pub params: ParamStore,
}

impl Policy {
    pub fn init<R: Rng + ?Sized>(meta: PolicyMeta, rng: &mut R) -> Result<Self> {
        let mut params = ParamStore::new();
        let net = QNet::init(meta.net.clone(), &mut params, rng)?;
        Ok(Self { meta, net, params })
    }

    pub fn method(&self) -> Method {
        match self.meta.trained_as {
            TrainVariant::Rl => Method::PacifierRl,
            TrainVariant::Greedy => Method::PacifierGreedy,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let w = BufWriter::new(File::create(path)?);
        save_checkpoint(w, &self.meta, &self.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let r = BufReader::new(File::open(path)?);
        let (meta, params): (PolicyMeta, ParamStore) = load_checkpoint(r)?;
        let net = QNet::locate(meta.net.clone(), &params)?;
        Ok(Self { meta, net, params })
    }

    /// Plans `k` interventions greedily with respect to the network.
    ///
    /// Only the instance and the policy's own choices are consulted; no
    /// opinion state is ever settled here.
    pub fn deploy(&self, inst: &Instance, k: usize) -> Result<Plan> {
        let n = inst.node_count();
        if k > n {
            return Err(Error::InvalidBudget { k, n });
        }
        let builder = InputBuilder::new(inst);
        let mut marked = vec![false; n];
        let mut actions = Vec::with_capacity(k);
        let mut scores = Vec::with_capacity(k);
        let mut cache = None;
        for _ in 0..k {
            let input = builder.build(&marked);
            let cache = match cache.as_mut() {
                None => cache.insert(self.net.encoding_cache(&self.params, &input)),
                Some(c) => {
                    c.update(&input);
                    c
                }
            };
            let q = self.net.q_values_cached(&self.params, cache, &input)?;
            let a = argmax_feasible(&q, &input.mask).ok_or(Error::EpisodeDone)?;
            marked[a] = true;
            actions.push(a);
            scores.push(q[a]);
        }
        Ok(Plan {
            actions,
            method: self.method(),
            scores,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::settle_calls;
    use crate::encoder::EncoderConfig;
    use crate::graph::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn policy(seed: u64) -> Policy {
        let meta = PolicyMeta {
            net: NetConfig {
                encoder: EncoderConfig { embed_dim: 8, layers: 2 },
                hidden: vec![8, 4],
                interaction: Interaction::Scalar,
            },
            trained_as: TrainVariant::Rl,
            variant: Variant::Mi,
        };
        Policy::init(meta, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn greedy_choice_and_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(select_action(&[1.0, 3.0, 3.0], &[true; 3], 0.0, &mut rng).unwrap(), 1);
        assert_eq!(select_action(&[1.0, 3.0, 3.0], &[true, false, true], 0.0, &mut rng).unwrap(), 2);
        assert_eq!(select_action(&[9.0, 0.0], &[false, true], 1.0, &mut rng).unwrap(), 1);
        assert!(matches!(
            select_action(&[1.0], &[false], 0.5, &mut rng),
            Err(Error::EpisodeDone)
        ));
    }

    #[test]
    fn shifting_scores_keeps_the_choice() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let q: Vec<f64> = (0..8).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let mask: Vec<bool> = (0..8).map(|i| i == 0 || rng.gen_bool(0.6)).collect();
            let c = rng.gen_range(-100.0..100.0);
            let shifted: Vec<f64> = q.iter().map(|x| x + c).collect();
            assert_eq!(argmax_feasible(&q, &mask), argmax_feasible(&shifted, &mask));
        }
    }

    #[test]
    fn exploration_is_uniform() {
        // chi-square with 4 degrees of freedom; 13.28 is the 1% critical value
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mask = [true, false, true, true, true, true, false];
        let mut counts = [0usize; 7];
        let draws = 10_000;
        for _ in 0..draws {
            counts[select_action(&[0.0; 7], &mask, 1.0, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[1] + counts[6], 0);
        let expected = draws as f64 / 5.0;
        let chi2: f64 = counts
            .iter()
            .zip(mask)
            .filter(|(_, m)| *m)
            .map(|(&c, _)| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < 13.28, "chi2 = {chi2}");
    }

    #[test]
    fn deploy_is_a_feasible_sequence_without_settles() {
        let p = policy(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = crate::synthgen::GenConfig::default().with_nodes(10, 30);
        for _ in 0..20 {
            let inst = crate::synthgen::generate_instance(&cfg, &mut rng).unwrap();
            let n = inst.node_count();
            let before = settle_calls();
            let plan = p.deploy(&inst, n).unwrap();
            assert_eq!(settle_calls(), before);
            let mut seen = plan.actions.clone();
            seen.sort();
            assert_eq!(seen, (0..n).collect::<Vec<_>>());
        }
        let inst = crate::synthgen::generate_instance(&cfg, &mut rng).unwrap();
        assert!(p.deploy(&inst, 0).unwrap().actions.is_empty());
        assert!(matches!(
            p.deploy(&inst, inst.node_count() + 1),
            Err(Error::InvalidBudget { .. })
        ));
    }

    #[test]
    fn cached_scores_match_the_full_forward_pass() {
        let p = policy(6);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for variant in [Variant::Mi, Variant::Me, Variant::Removal] {
            let cfg = crate::synthgen::GenConfig {
                variant,
                ..crate::synthgen::GenConfig::default().with_nodes(20, 60)
            };
            for _ in 0..5 {
                let inst = crate::synthgen::generate_instance(&cfg, &mut rng).unwrap();
                let builder = InputBuilder::new(&inst);
                let mut marked = vec![false; inst.node_count()];
                let mut cache = p.net.encoding_cache(&p.params, &builder.build(&marked));
                let mut uncached = Vec::new();
                for _ in 0..inst.node_count() / 2 {
                    let input = builder.build(&marked);
                    cache.update(&input);
                    let full = p.net.q_values(&p.params, &input).unwrap();
                    let fast = p.net.q_values_cached(&p.params, &cache, &input).unwrap();
                    for (a, b) in full.iter().zip(&fast) {
                        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{variant}: {a} vs {b}");
                    }
                    let a = argmax_feasible(&full, &input.mask).unwrap();
                    marked[a] = true;
                    uncached.push(a);
                }
                assert_eq!(p.deploy(&inst, uncached.len()).unwrap().actions, uncached);
            }
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_plans() {
        let p = policy(5);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("policy.ckpt");
        p.save(&path).unwrap();
        let q = Policy::load(&path).unwrap();
        assert_eq!(q.meta, p.meta);
        let inst = Instance::new(
            Arc::new(Graph::new(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)]).unwrap()),
            vec![1.0, 1.0, -1.0, -1.0],
            vec![1.0; 4],
            2,
            Variant::Mi,
        )
        .unwrap();
        assert_eq!(p.deploy(&inst, 3).unwrap(), q.deploy(&inst, 3).unwrap());
    }
}
