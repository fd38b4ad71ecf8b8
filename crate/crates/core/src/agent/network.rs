//! Q-network: encoder, graph-conditioned interaction and per-node MLP head.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode, CachedEncoding, EncoderConfig, EncoderParams, Encoding, StateInput, AUX_FEATURES};
use crate::error::{Error, Result};
use crate::neural::{ParamStore, Tape, Var};

/// Penalty subtracted from the score of infeasible nodes.
pub const MASK_PENALTY: f64 = 1e9;

/// How the pooled graph embedding modulates each node embedding.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Interaction {
    /// `z_v = (g . w) h_v`
    #[default]
    Scalar,
    /// `z_v = (g * w) * h_v`, elementwise.
    Elementwise,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetConfig {
    pub encoder: EncoderConfig,
    pub hidden: Vec<usize>,
    pub interaction: Interaction,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            hidden: vec![64, 32],
            interaction: Interaction::Scalar,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QNet {
    pub config: NetConfig,
    enc: EncoderParams,
    w_dec: usize,
    layers: Vec<(usize, usize)>,
}

impl QNet {
    pub fn init<R: Rng + ?Sized>(config: NetConfig, store: &mut ParamStore, rng: &mut R) -> Result<Self> {
        if config.hidden.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        let enc = EncoderParams::init(config.encoder, store, rng)?;
        let d = config.encoder.embed_dim;
        let w_dec = match config.interaction {
            Interaction::Scalar => store.add_glorot("dec.w", d, 1, rng),
            Interaction::Elementwise => store.add_glorot("dec.w", 1, d, rng),
        };
        let mut layers = Vec::new();
        let mut width = d + AUX_FEATURES;
        for (i, &h) in config.hidden.iter().chain(std::iter::once(&1)).enumerate() {
            let w = store.add_glorot(&format!("mlp.{i}.w"), width, h, rng);
            let b = store.add_zeros(&format!("mlp.{i}.b"), 1, h);
            layers.push((w, b));
            width = h;
        }
        Ok(Self {
            config,
            enc,
            w_dec,
            layers,
        })
    }

    /// Rebinds a network layout to parameters loaded from a checkpoint.
    pub fn locate(config: NetConfig, store: &ParamStore) -> Result<Self> {
        let find = |name: &str| {
            store
                .index_of(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
        };
        let enc = EncoderParams::locate(config.encoder, store)?;
        let w_dec = find("dec.w")?;
        let layers = (0..=config.hidden.len())
            .map(|i| Ok((find(&format!("mlp.{i}.w"))?, find(&format!("mlp.{i}.b"))?)))
            .collect::<Result<Vec<_>>>()?;
        let net = Self {
            config,
            enc,
            w_dec,
            layers,
        };
        net.check_shapes(store)?;
        Ok(net)
    }

    fn check_shapes(&self, store: &ParamStore) -> Result<()> {
        let d = self.config.encoder.embed_dim;
        let mut expect = vec![
            (self.enc.w0, (crate::encoder::NODE_FEATURES, d)),
            (self.enc.w_nbr, (d, d)),
            (self.enc.w_self, (d, d)),
            (self.enc.w_sage, (2 * d, d)),
            (
                self.w_dec,
                match self.config.interaction {
                    Interaction::Scalar => (d, 1),
                    Interaction::Elementwise => (1, d),
                },
            ),
        ];
        let mut width = d + AUX_FEATURES;
        for (&(w, b), &h) in self.layers.iter().zip(self.config.hidden.iter().chain(std::iter::once(&1))) {
            expect.push((w, (width, h)));
            expect.push((b, (1, h)));
            width = h;
        }
        for (idx, shape) in expect {
            if store.get(idx).dim() != shape {
                return Err(Error::Checkpoint(format!(
                    "parameter {} has shape {:?}, expected {:?}",
                    store.name(idx),
                    store.get(idx).dim(),
                    shape
                )));
            }
        }
        Ok(())
    }

    /// Unmasked Q-values as an `n x 1` column on `tape`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, input: &StateInput) -> Result<Var> {
        let enc = encode(tape, store, &self.enc, input)?;
        self.decode(tape, store, enc, input)
    }

    fn decode(&self, tape: &mut Tape, store: &ParamStore, enc: Encoding, input: &StateInput) -> Result<Var> {
        let n = input.node_count();
        let w = tape.param(self.w_dec, store.get(self.w_dec).clone());
        let gw = match self.config.interaction {
            Interaction::Scalar => tape.matmul(enc.g, w)?,
            Interaction::Elementwise => tape.mul(enc.g, w)?,
        };
        let z = tape.mul_row(enc.h, gw)?;
        let u = tape.constant(input.aux.to_row());
        let u = tape.broadcast_rows(u, n)?;
        let mut x = tape.concat_cols(z, u)?;
        let last = self.layers.len() - 1;
        for (i, &(wi, bi)) in self.layers.iter().enumerate() {
            let w = tape.param(wi, store.get(wi).clone());
            let b = tape.param(bi, store.get(bi).clone());
            x = tape.matmul(x, w)?;
            x = tape.add_row(x, b)?;
            if i != last {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }

    /// Q-values for every node with infeasible nodes pushed down by
    /// [`MASK_PENALTY`].
    pub fn q_values(&self, store: &ParamStore, input: &StateInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let q = self.forward(&mut tape, store, input)?;
        Ok(mask_scores(tape.value(q), &input.mask))
    }

    /// Starts a node-embedding cache at `input` for [`QNet::q_values_cached`].
    pub fn encoding_cache(&self, store: &ParamStore, input: &StateInput) -> CachedEncoding {
        CachedEncoding::new(store, &self.enc, input)
    }

    /// Same as [`QNet::q_values`] with the encoder replaced by `cache`,
    /// which must already be updated to `input`.
    pub fn q_values_cached(&self, store: &ParamStore, cache: &CachedEncoding, input: &StateInput) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let h = tape.constant(cache.h().clone());
        let g = tape.sum_rows(h);
        let q = self.decode(&mut tape, store, Encoding { h, g }, input)?;
        Ok(mask_scores(tape.value(q), &input.mask))
    }
}

pub fn mask_scores(q: &Array2<f64>, mask: &[bool]) -> Vec<f64> {
    q.column(0)
        .iter()
        .zip(mask)
        .map(|(&q, &feasible)| if feasible { q } else { q - MASK_PENALTY })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::InputBuilder;
    use crate::environment::{Instance, Variant};
    use crate::graph::Graph;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn small(interaction: Interaction) -> NetConfig {
        NetConfig {
            encoder: EncoderConfig { embed_dim: 6, layers: 2 },
            hidden: vec![5, 4],
            interaction,
        }
    }

    fn star() -> Instance {
        Instance::new(
            Arc::new(Graph::new(4, &[(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0)]).unwrap()),
            vec![1.0, -1.0, 1.0, 1.0],
            vec![1.0, 0.5, 1.5, 1.0],
            2,
            Variant::MiCost,
        )
        .unwrap()
    }

    #[test]
    fn masked_nodes_never_win() {
        let mut store = ParamStore::new();
        let net = QNet::init(small(Interaction::Scalar), &mut store, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let i = star();
        let input = InputBuilder::new(&i).build(&[true, false, true, false]);
        let q = net.q_values(&store, &input).unwrap();
        let worst_feasible = q[1].min(q[3]);
        assert!(q[0] < worst_feasible && q[2] < worst_feasible);
    }

    #[test]
    fn symmetric_leaves_score_alike() {
        let mut store = ParamStore::new();
        let net = QNet::init(small(Interaction::Elementwise), &mut store, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let mut i = star();
        i.costs = vec![1.0; 4];
        let q = net.q_values(&store, &InputBuilder::new(&i).build(&[false; 4])).unwrap();
        assert_eq!(q[2], q[3]);
    }

    #[test]
    fn orthogonal_interaction_leaves_aux_only() {
        let mut store = ParamStore::new();
        let net = QNet::init(small(Interaction::Scalar), &mut store, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        store.get_mut(net.w_dec).fill(0.0);
        let q = net.q_values(&store, &InputBuilder::new(&star()).build(&[false; 4])).unwrap();
        assert!(q.iter().all(|x| *x == q[0]));
    }

    #[test]
    fn locate_matches_init() {
        for interaction in [Interaction::Scalar, Interaction::Elementwise] {
            let mut store = ParamStore::new();
            let net = QNet::init(small(interaction), &mut store, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            assert_eq!(QNet::locate(small(interaction), &store).unwrap(), net);
        }
        let mut store = ParamStore::new();
        QNet::init(small(Interaction::Scalar), &mut store, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert!(matches!(
            QNet::locate(small(Interaction::Elementwise), &store),
            Err(Error::Checkpoint(_))
        ));
    }
}
