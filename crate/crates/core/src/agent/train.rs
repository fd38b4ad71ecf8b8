//! Q-learning on freshly generated instances.
//!
//! Two regimes share the loop. `Rl` explores epsilon-greedily and regresses
//! onto n-step bootstrapped targets from a periodically synced copy of the
//! network. `Greedy` rolls out uniformly at random and regresses onto the
//! immediate reward alone.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::NetConfig;
use super::replay::{nstep_transitions, ReplayBuffer, Transition};
use super::{argmax_feasible, select_action, Policy, PolicyMeta};
use crate::encoder::InputBuilder;
use crate::environment::{evaluate_plan, Env, Instance};
use crate::error::{Error, Result};
use crate::metrics::Normalization;
use crate::neural::{Adam, AdamConfig, Grads, ParamStore, Tape};
use crate::synthgen::{generate_instance, GenConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainVariant {
    Rl,
    Greedy,
}

impl TrainVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainVariant::Rl => "rl",
            TrainVariant::Greedy => "greedy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub net: NetConfig,
    pub variant: TrainVariant,
    pub episodes: usize,
    pub gamma: f64,
    pub n_step: usize,
    pub replay_capacity: usize,
    pub batch: usize,
    pub lr: f64,
    pub eps_start: f64,
    pub eps_end: f64,
    /// Fraction of the episodes over which epsilon decays linearly.
    pub eps_decay_frac: f64,
    pub target_sync_every: u64,
    /// Transitions required before the first gradient step.
    pub learn_start: usize,
    pub updates_per_step: usize,
    /// Episodes between validation passes; 0 validates only at the end.
    pub validation_every: usize,
    pub validation_instances: usize,
    /// Return the weights with the lowest validation ANP seen instead of the
    /// final ones.
    pub keep_best: bool,
    pub seed: u64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            net: NetConfig::default(),
            variant: TrainVariant::Rl,
            episodes: 2000,
            gamma: 0.99,
            n_step: 5,
            replay_capacity: 50_000,
            batch: 64,
            lr: 1e-4,
            eps_start: 1.0,
            eps_end: 0.05,
            eps_decay_frac: 0.7,
            target_sync_every: 1000,
            learn_start: 64,
            updates_per_step: 1,
            validation_every: 100,
            validation_instances: 20,
            keep_best: true,
            seed: 0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        if self.n_step == 0 {
            return bad("n_step must be at least 1");
        }
        if !(0.0 <= self.eps_end && self.eps_end <= self.eps_start && self.eps_start <= 1.0) {
            return bad("need 0 <= eps_end <= eps_start <= 1");
        }
        if !(self.eps_decay_frac > 0.0 && self.eps_decay_frac <= 1.0) {
            return bad("eps_decay_frac must lie in (0, 1]");
        }
        if self.batch == 0 || self.replay_capacity == 0 {
            return bad("batch and replay capacity must be positive");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return bad("learning rate must be finite and non-negative");
        }
        if self.target_sync_every == 0 {
            return bad("target_sync_every must be positive");
        }
        Ok(())
    }

    pub fn epsilon(&self, episode: usize) -> f64 {
        if self.variant == TrainVariant::Greedy {
            return 1.0;
        }
        let span = (self.eps_decay_frac * self.episodes as f64).max(1.0);
        let frac = (episode as f64 / span).min(1.0);
        self.eps_start + (self.eps_end - self.eps_start) * frac
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub episode: usize,
    pub epsilon: f64,
    pub grad_steps: u64,
    /// Mean TD loss over this episode's gradient steps.
    pub loss: Option<f64>,
    pub episode_return: f64,
    pub final_pol: f64,
    /// Mean ANP of the greedy policy on the validation set.
    pub validation_anp: Option<f64>,
}

impl TrainLogRow {
    pub const CSV_HEADER: &'static str = "episode,epsilon,grad_steps,loss,return,final_pol,validation_anp";

    pub fn csv_row(&self) -> String {
        let opt = |x: Option<f64>| x.map(|v| format!("{v:.10}")).unwrap_or_default();
        format!(
            "{},{:.6},{},{},{:.10},{:.10},{}",
            self.episode,
            self.epsilon,
            self.grad_steps,
            opt(self.loss),
            self.episode_return,
            self.final_pol,
            opt(self.validation_anp)
        )
    }
}

pub fn log_to_csv(rows: &[TrainLogRow]) -> String {
    let mut out = String::from(TrainLogRow::CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_row());
    }
    out
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: Policy,
    pub log: Vec<TrainLogRow>,
}

pub struct Trainer {
    cfg: AgentConfig,
    gen: GenConfig,
    policy: Policy,
    target: ParamStore,
    adam: Adam,
    buffer: ReplayBuffer,
    gen_rng: ChaCha8Rng,
    act_rng: ChaCha8Rng,
    replay_rng: ChaCha8Rng,
    validation: Vec<Instance>,
    best: Option<(f64, Policy)>,
    grad_steps: u64,
    episode: usize,
    log: Vec<TrainLogRow>,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

impl Trainer {
    pub fn new(cfg: AgentConfig, gen: GenConfig) -> Result<Self> {
        cfg.validate()?;
        gen.validate()?;
        let meta = PolicyMeta {
            net: cfg.net.clone(),
            trained_as: cfg.variant,
            variant: gen.variant,
        };
        let policy = Policy::init(meta, &mut stream(cfg.seed, 0))?;
        let mut val_rng = stream(cfg.seed, 4);
        let validation = (0..cfg.validation_instances)
            .map(|i| Ok(generate_instance(&gen, &mut val_rng)?.with_name(format!("val-{i}"))))
            .collect::<Result<Vec<_>>>()?;
        let adam = Adam::new(
            AdamConfig {
                lr: cfg.lr,
                ..AdamConfig::default()
            },
            &policy.params,
        );
        Ok(Self {
            target: policy.params.clone(),
            adam,
            buffer: ReplayBuffer::new(cfg.replay_capacity),
            gen_rng: stream(cfg.seed, 1),
            act_rng: stream(cfg.seed, 2),
            replay_rng: stream(cfg.seed, 3),
            validation,
            best: None,
            grad_steps: 0,
            episode: 0,
            log: Vec::new(),
            policy,
            cfg,
            gen,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    /// Current weights; after a divergence these are the last finite ones.
    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn target_params(&self) -> &ParamStore {
        &self.target
    }

    pub fn target_params_mut(&mut self) -> &mut ParamStore {
        &mut self.target
    }

    pub fn grad_steps(&self) -> u64 {
        self.grad_steps
    }

    pub fn log(&self) -> &[TrainLogRow] {
        &self.log
    }

    /// Lowest validation ANP so far and the weights that reached it.
    pub fn best(&self) -> Option<(f64, &Policy)> {
        self.best.as_ref().map(|(anp, p)| (*anp, p))
    }

    pub fn validation_set(&self) -> &[Instance] {
        &self.validation
    }

    /// Regression target for one stored transition.
    pub fn td_target(&self, t: &Transition) -> Result<f64> {
        if self.cfg.variant == TrainVariant::Greedy {
            return Ok(t.ret);
        }
        let Some(next) = &t.next else {
            return Ok(t.ret);
        };
        let input = InputBuilder::new(&next.instance).build(&next.marked);
        let q = self.policy.net.q_values(&self.target, &input)?;
        match argmax_feasible(&q, &input.mask) {
            Some(a) => Ok(t.ret + t.discount * q[a]),
            None => Ok(t.ret),
        }
    }

    fn sample_loss(&self, t: &Transition, y: f64) -> Result<(f64, Grads)> {
        let input = InputBuilder::new(&t.state.instance).build(&t.state.marked);
        let mut tape = Tape::new();
        let q = self.policy.net.forward(&mut tape, &self.policy.params, &input)?;
        let qa = tape.pick(q, t.action, 0)?;
        let diff = tape.offset(qa, -y);
        let loss = tape.square(diff);
        let grads = tape.backward(loss, self.policy.params.len())?;
        Ok((tape.scalar(loss), grads))
    }

    /// One minibatch update; returns the mean squared TD error.
    fn learn(&mut self) -> Result<f64> {
        let batch: Vec<Transition> = self
            .buffer
            .sample(self.cfg.batch, &mut self.replay_rng)
            .into_iter()
            .cloned()
            .collect();
        let targets = batch
            .par_iter()
            .map(|t| self.td_target(t))
            .collect::<Result<Vec<_>>>()?;
        let per_sample = batch
            .par_iter()
            .zip(&targets)
            .map(|(t, &y)| self.sample_loss(t, y))
            .collect::<Result<Vec<_>>>()?;
        let scale = 1.0 / batch.len() as f64;
        let mut total = Grads {
            grads: vec![None; self.policy.params.len()],
        };
        let mut loss = 0.0;
        for (l, g) in per_sample {
            loss += l;
            for (slot, gi) in total.grads.iter_mut().zip(g.grads) {
                match (slot.as_mut(), gi) {
                    (Some(acc), Some(gi)) => *acc += &gi,
                    (None, Some(gi)) => *slot = Some(gi),
                    _ => {}
                }
            }
        }
        loss *= scale;
        for g in total.grads.iter_mut().flatten() {
            *g *= scale;
        }
        let finite = loss.is_finite() && total.grads.iter().flatten().all(|g| g.iter().all(|x| x.is_finite()));
        if !finite {
            return Err(Error::TrainingDiverged { episode: self.episode });
        }
        let mut next = self.policy.params.clone();
        self.adam.step(&mut next, &total)?;
        if !next.is_finite() {
            return Err(Error::TrainingDiverged { episode: self.episode });
        }
        self.policy.params = next;
        self.grad_steps += 1;
        if self.cfg.variant == TrainVariant::Rl && self.grad_steps.is_multiple_of(self.cfg.target_sync_every) {
            self.target.copy_from(&self.policy.params)?;
        }
        Ok(loss)
    }

    /// Mean ANP of the current greedy policy over the validation set.
    pub fn validate(&self) -> Result<f64> {
        if self.validation.is_empty() {
            return Ok(f64::NAN);
        }
        let anps = self
            .validation
            .par_iter()
            .map(|inst| {
                let plan = self.policy.deploy(inst, inst.budget)?;
                Ok(evaluate_plan(inst, &plan.actions, Normalization::PerNode)?.anp)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(anps.iter().sum::<f64>() / anps.len() as f64)
    }

    pub fn run_episode(&mut self) -> Result<TrainLogRow> {
        let eps = self.cfg.epsilon(self.episode);
        let inst = Arc::new(generate_instance(&self.gen, &mut self.gen_rng)?);
        let (mut env, _) = Env::reset(&inst)?;
        let builder = InputBuilder::new(&inst);
        let mut marks = vec![env.marked().to_vec()];
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        let mut losses = Vec::new();
        while !env.is_done() {
            let mask = env.mask();
            let a = if eps >= 1.0 {
                select_action(&[], &mask, 1.0, &mut self.act_rng)?
            } else {
                let input = builder.build(env.marked());
                let q = self.policy.net.q_values(&self.policy.params, &input)?;
                select_action(&q, &mask, eps, &mut self.act_rng)?
            };
            let step = env.step(a)?;
            actions.push(a);
            rewards.push(step.reward);
            marks.push(env.marked().to_vec());
            if self.buffer.len() >= self.cfg.learn_start.max(1) {
                for _ in 0..self.cfg.updates_per_step {
                    losses.push(self.learn()?);
                }
            }
        }
        let n = match self.cfg.variant {
            TrainVariant::Rl => self.cfg.n_step,
            TrainVariant::Greedy => 1,
        };
        self.buffer
            .extend(nstep_transitions(&inst, &marks, &actions, &rewards, self.cfg.gamma, n));
        self.episode += 1;
        let due = self.cfg.validation_every > 0 && self.episode.is_multiple_of(self.cfg.validation_every);
        let last = self.episode == self.cfg.episodes;
        let validation_anp = if due || last { Some(self.validate()?) } else { None };
        if let Some(anp) = validation_anp.filter(|a| a.is_finite()) {
            if self.best.as_ref().is_none_or(|(b, _)| anp < *b) {
                self.best = Some((anp, self.policy.clone()));
            }
        }
        let row = TrainLogRow {
            episode: self.episode,
            epsilon: eps,
            grad_steps: self.grad_steps,
            loss: (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64),
            episode_return: rewards.iter().sum(),
            final_pol: env.pol(),
            validation_anp,
        };
        self.log.push(row.clone());
        Ok(row)
    }

    /// Runs the remaining episodes.
    pub fn run(&mut self) -> Result<TrainOutcome> {
        while self.episode < self.cfg.episodes {
            self.run_episode()?;
        }
        let policy = match &self.best {
            Some((_, p)) if self.cfg.keep_best => p.clone(),
            _ => self.policy.clone(),
        };
        Ok(TrainOutcome {
            policy,
            log: self.log.clone(),
        })
    }
}
