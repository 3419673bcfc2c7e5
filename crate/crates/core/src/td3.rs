//! Twin-delayed deep deterministic policy gradient agents and the DDPG
//! variant.
//!
//! Several agents can share one replay buffer: each owns the slice
//! `[offset, offset + action_dim)` of the stored joint action and its critics
//! see `state ⧺ own action`. Networks and replay storage use [`Real`]; the
//! environment side stays in `f64`.

use std::f64::consts::{PI, TAU};

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::config::AgentConfig;
use crate::error::{Error, Result};
use crate::nn::{Adam, Batch, Mlp, OutputActivation};
use crate::rng::RandomStream;
use crate::twin::AgentState;

/// Float type of agent networks and replay storage.
pub type Real = f32;

pub fn to_real(x: &[f64]) -> Vec<Real> {
    x.iter().map(|&v| v as Real).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Td3,
    Ddpg,
}

/// Max-abs state normalization. SINRs are divided by the largest magnitude
/// seen so far, powers by `p_max` and phases by `2π`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateNormalizer {
    pub running_max_alpha: f64,
    pub p_max: f64,
    pub enabled: bool,
}

impl StateNormalizer {
    pub fn new(p_max: f64, enabled: bool) -> Self {
        StateNormalizer {
            running_max_alpha: 1.0,
            p_max,
            enabled,
        }
    }

    /// Updates the running maximum with `raw.alpha`, then normalizes.
    pub fn normalize(&mut self, raw: &AgentState) -> Vec<f64> {
        let mut out = Vec::with_capacity(raw.dim());
        if !self.enabled {
            out.extend(&raw.alpha);
            out.extend(&raw.p);
            out.extend(&raw.phi);
            return out;
        }
        let peak = raw.alpha.iter().fold(0.0f64, |m, a| m.max(a.abs()));
        self.running_max_alpha = self.running_max_alpha.max(peak);
        out.extend(raw.alpha.iter().map(|a| a / self.running_max_alpha));
        out.extend(raw.p.iter().map(|p| p / self.p_max));
        out.extend(raw.phi.iter().map(|phi| phi / TAU));
        out
    }
}

/// `p = (a + 1)/2 · p_max`.
pub fn map_power(a: &[f64], p_max: f64) -> Vec<f64> {
    a.iter().map(|&x| (x.clamp(-1.0, 1.0) + 1.0) / 2.0 * p_max).collect()
}

/// `φ = (a + 1)·π`, wrapped into `[0, 2π)`.
pub fn map_phase(a: &[f64]) -> Vec<f64> {
    a.iter()
        .map(|&x| {
            let phi = ((x.clamp(-1.0, 1.0) + 1.0) * PI).rem_euclid(TAU);
            if phi >= TAU {
                0.0
            } else {
                phi
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Td3Agent {
    pub algorithm: Algorithm,
    pub state_dim: usize,
    pub action_dim: usize,
    /// Position of this agent's action slice in the stored joint action.
    pub offset: usize,
    pub actor: Mlp<Real>,
    pub actor_target: Mlp<Real>,
    pub critic1: Mlp<Real>,
    pub critic1_target: Mlp<Real>,
    pub critic2: Mlp<Real>,
    pub critic2_target: Mlp<Real>,
    pub actor_opt: Adam<Real>,
    pub critic1_opt: Adam<Real>,
    pub critic2_opt: Adam<Real>,
    pub gamma: f64,
    pub chi: f64,
    pub actor_delay: u64,
    pub target_noise_std: f64,
    pub target_noise_clip: f64,
    pub explore_prob: f64,
    pub explore_std: f64,
    pub explore_decay: f64,
    /// Training steps taken so far.
    pub updates: u64,
}

impl Td3Agent {
    pub fn new(
        algorithm: Algorithm,
        state_dim: usize,
        action_dim: usize,
        offset: usize,
        cfg: &AgentConfig,
        rng: &mut RandomStream,
    ) -> Self {
        let mut actor_sizes = vec![state_dim];
        actor_sizes.extend(&cfg.hidden);
        actor_sizes.push(action_dim);
        let mut critic_sizes = vec![state_dim + action_dim];
        critic_sizes.extend(&cfg.hidden);
        critic_sizes.push(1);
        let actor = Mlp::new(&actor_sizes, OutputActivation::Tanh, 1e-3, rng);
        let critic1 = Mlp::new(&critic_sizes, OutputActivation::Identity, 1.0, rng);
        let critic2 = Mlp::new(&critic_sizes, OutputActivation::Identity, 1.0, rng);
        let adam = |net: &Mlp<Real>, lr: f64| Adam::new(net, lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
        let (delay, noise) = match algorithm {
            Algorithm::Td3 => (cfg.actor_delay, cfg.target_noise_std),
            Algorithm::Ddpg => (1, 0.0),
        };
        Td3Agent {
            algorithm,
            state_dim,
            action_dim,
            offset,
            actor_opt: adam(&actor, cfg.lr_actor),
            critic1_opt: adam(&critic1, cfg.lr_critic),
            critic2_opt: adam(&critic2, cfg.lr_critic),
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor,
            critic1,
            critic2,
            gamma: cfg.gamma,
            chi: cfg.chi,
            actor_delay: delay,
            target_noise_std: noise,
            target_noise_clip: cfg.target_noise_clip,
            explore_prob: cfg.explore_prob,
            explore_std: cfg.explore_std,
            explore_decay: cfg.explore_decay,
            updates: 0,
        }
    }

    /// Policy action, with Gaussian exploration noise added with probability
    /// `explore_prob` when `explore` is set. Always within `[-1, 1]`.
    pub fn act(&self, state: &[f64], explore: bool, rng: &mut RandomStream) -> Result<Vec<f64>> {
        let mut a: Vec<f64> = self.actor.forward_one(&to_real(state))?.into_iter().map(f64::from).collect();
        if explore && self.explore_std > 0.0 && rng.gen::<f64>() < self.explore_prob {
            let normal = Normal::new(0.0, self.explore_std).expect("positive std");
            let c = self.target_noise_clip;
            for x in a.iter_mut() {
                *x += normal.sample(rng).clamp(-c, c);
            }
        }
        a.iter_mut().for_each(|x| *x = x.clamp(-1.0, 1.0));
        Ok(a)
    }

    pub fn decay_exploration(&mut self) {
        self.explore_std *= self.explore_decay;
    }

    fn own_actions<'a>(&self, batch: &'a Batch<Real>) -> Result<ArrayView2<'a, Real>> {
        let end = self.offset + self.action_dim;
        if batch.a.ncols() < end {
            return Err(Error::shape("agent action slice", end, batch.a.ncols()));
        }
        Ok(batch.a.slice(s![.., self.offset..end]))
    }

    fn critic_input(s: ArrayView2<Real>, a: ArrayView2<Real>) -> Array2<Real> {
        concatenate![Axis(1), s, a]
    }

    /// Bootstrapped targets `y = r + γ · min_i Q'_i(s', ã)` with smoothed
    /// target actions; DDPG uses critic 1 alone and no smoothing.
    pub fn target_q(&self, batch: &Batch<Real>, rng: &mut RandomStream) -> Result<Array1<Real>> {
        let mut a2 = self.actor_target.forward(batch.s2.view())?;
        if self.target_noise_std > 0.0 {
            let normal = Normal::new(0.0, self.target_noise_std).expect("positive std");
            let c = self.target_noise_clip;
            a2.mapv_inplace(|x| (x + normal.sample(rng).clamp(-c, c) as Real).clamp(-1.0, 1.0));
        }
        let input = Self::critic_input(batch.s2.view(), a2.view());
        let q1 = self.critic1_target.forward(input.view())?.column(0).to_owned();
        let q = match self.algorithm {
            Algorithm::Td3 => {
                let q2 = self.critic2_target.forward(input.view())?.column(0).to_owned();
                ndarray::Zip::from(&q1).and(&q2).map_collect(|&a, &b| a.min(b))
            }
            Algorithm::Ddpg => q1,
        };
        Ok(&batch.r + &(q * self.gamma as Real))
    }

    /// One gradient step of each evaluated critic on the mean squared TD
    /// error. Returns the pre-step loss of critic 1.
    pub fn critic_update(&mut self, batch: &Batch<Real>, y: &Array1<Real>) -> Result<f64> {
        let input = Self::critic_input(batch.s.view(), self.own_actions(batch)?);
        let n = batch.r.len() as Real;
        let mut loss1 = 0.0;
        let critics: &mut [(&mut Mlp<Real>, &mut Adam<Real>)] = match self.algorithm {
            Algorithm::Td3 => &mut [
                (&mut self.critic1, &mut self.critic1_opt),
                (&mut self.critic2, &mut self.critic2_opt),
            ],
            Algorithm::Ddpg => &mut [(&mut self.critic1, &mut self.critic1_opt)],
        };
        for (i, (critic, opt)) in critics.iter_mut().enumerate() {
            let cache = critic.forward_cached(input.view())?;
            let q = cache.output().column(0);
            let resid = &q - y;
            if i == 0 {
                loss1 = f64::from(resid.mapv(|e| e * e).sum() / n);
            }
            let upstream = (resid * (2.0 / n)).insert_axis(Axis(1));
            let (grads, _) = critic.backward(&cache, upstream.view())?;
            opt.apply(critic, &grads);
        }
        Ok(loss1)
    }

    /// Deterministic policy gradient step ascending `mean Q_1(s, μ(s))`.
    pub fn actor_update(&mut self, states: ArrayView2<Real>) -> Result<()> {
        let n = states.nrows() as Real;
        let actor_cache = self.actor.forward_cached(states)?;
        let input = Self::critic_input(states, actor_cache.output().view());
        let critic_cache = self.critic1.forward_cached(input.view())?;
        let upstream = Array2::from_elem((states.nrows(), 1), -1.0 / n);
        let (_, dinput) = self.critic1.backward(&critic_cache, upstream.view())?;
        let da = dinput.slice(s![.., self.state_dim..]);
        let (grads, _) = self.actor.backward(&actor_cache, da)?;
        self.actor_opt.apply(&mut self.actor, &grads);
        Ok(())
    }

    pub fn soft_update_targets(&mut self) {
        self.actor_target.soft_update_from(&self.actor, self.chi);
        self.critic1_target.soft_update_from(&self.critic1, self.chi);
        if self.algorithm == Algorithm::Td3 {
            self.critic2_target.soft_update_from(&self.critic2, self.chi);
        }
    }

    /// One training step: critics every call, actor and targets every
    /// `actor_delay` calls.
    pub fn train_step(&mut self, batch: &Batch<Real>, rng: &mut RandomStream) -> Result<f64> {
        self.updates += 1;
        let y = self.target_q(batch, rng)?;
        let loss = self.critic_update(batch, &y)?;
        if self.updates % self.actor_delay == 0 {
            self.actor_update(batch.s.view())?;
            self.soft_update_targets();
        }
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;
    use crate::nn::ReplayBuffer;

    fn small_cfg() -> AgentConfig {
        let mut c = Preset::Desk.agent();
        c.hidden = vec![8, 8];
        c.batch_size = 16;
        c.lr_actor = 1e-3;
        c.lr_critic = 1e-3;
        c
    }

    fn filled_buffer(sd: usize, ad: usize, n: usize, rng: &mut RandomStream) -> ReplayBuffer<Real> {
        let mut b = ReplayBuffer::new(n, sd, ad);
        for _ in 0..n {
            let s: Vec<Real> = (0..sd).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let a: Vec<Real> = (0..ad).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let s2: Vec<Real> = (0..sd).map(|_| rng.gen_range(-1.0..1.0)).collect();
            b.push(&s, &a, rng.gen_range(-3.0..5.0), &s2).unwrap();
        }
        b
    }

    #[test]
    fn normalizer_examples() {
        let mut n = StateNormalizer::new(0.4, true);
        let s = AgentState {
            alpha: vec![0.0, -3.0, 6.0],
            p: vec![0.0, 0.2, 0.4],
            phi: vec![PI],
        };
        assert_eq!(n.normalize(&s), vec![0.0, -0.5, 1.0, 0.0, 0.5, 1.0, 0.5]);
        let small = AgentState {
            alpha: vec![3.0],
            p: vec![],
            phi: vec![],
        };
        assert_eq!(n.normalize(&small), vec![0.5]);
    }

    #[test]
    fn action_maps() {
        assert_eq!(map_power(&[-1.0, 0.0, 1.0], 0.4), vec![0.0, 0.2, 0.4]);
        assert_eq!(map_phase(&[0.0]), vec![PI]);
        assert_eq!(map_phase(&[1.0]), vec![0.0]);
        assert_eq!(map_phase(&[-1.0]), vec![0.0]);
    }

    #[test]
    fn zero_actor_maps_to_midpoints() {
        let mut rng = RandomStream::from_seed(1);
        let mut agent = Td3Agent::new(Algorithm::Td3, 4, 2, 0, &small_cfg(), &mut rng);
        agent.actor = Mlp::zeros(&agent.actor.sizes(), OutputActivation::Tanh);
        let a = agent.act(&[0.3, 0.1, -0.2, 0.9], false, &mut rng).unwrap();
        assert_eq!(map_power(&a, 0.4), vec![0.2, 0.2]);
        assert_eq!(map_phase(&a), vec![PI, PI]);
        assert_eq!(a, agent.act(&[0.3, 0.1, -0.2, 0.9], false, &mut rng).unwrap());
    }

    #[test]
    fn exploration_noise_std() {
        let mut rng = RandomStream::from_seed(2);
        let mut cfg = small_cfg();
        cfg.explore_prob = 1.0;
        let mut agent = Td3Agent::new(Algorithm::Td3, 3, 1, 0, &cfg, &mut rng);
        agent.actor = Mlp::zeros(&agent.actor.sizes(), OutputActivation::Tanh);
        let draws: Vec<f64> = (0..10_000)
            .map(|_| agent.act(&[0.0; 3], true, &mut rng).unwrap()[0])
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let std = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / draws.len() as f64).sqrt();
        assert!((std / 0.1 - 1.0).abs() < 0.05, "{std}");
    }

    #[test]
    fn gamma_zero_target_is_reward() {
        let mut rng = RandomStream::from_seed(3);
        let mut cfg = small_cfg();
        cfg.gamma = 0.0;
        let agent = Td3Agent::new(Algorithm::Td3, 3, 2, 0, &cfg, &mut rng);
        let buf = filled_buffer(3, 2, 32, &mut rng);
        let batch = buf.sample(16, &mut rng).unwrap();
        assert_eq!(agent.target_q(&batch, &mut rng).unwrap(), batch.r);
    }

    #[test]
    fn target_matches_scalar_composition() {
        let mut rng = RandomStream::from_seed(4);
        let mut agent = Td3Agent::new(Algorithm::Td3, 3, 2, 0, &small_cfg(), &mut rng);
        agent.target_noise_std = 0.0;
        let buf = filled_buffer(3, 2, 32, &mut rng);
        let batch = buf.sample(16, &mut rng).unwrap();
        let y = agent.target_q(&batch, &mut rng).unwrap();
        for i in 0..16 {
            let s2 = batch.s2.row(i).to_vec();
            let a2 = agent.actor_target.forward_one(&s2).unwrap();
            let input: Vec<Real> = s2.iter().chain(&a2).copied().collect();
            let q1 = agent.critic1_target.forward_one(&input).unwrap()[0];
            let q2 = agent.critic2_target.forward_one(&input).unwrap()[0];
            let want = batch.r[i] + agent.gamma as Real * q1.min(q2);
            assert!((y[i] - want).abs() < 1e-5);
        }
    }

    #[test]
    fn identical_critics_give_single_critic_target() {
        let mut rng = RandomStream::from_seed(5);
        let mut agent = Td3Agent::new(Algorithm::Td3, 3, 2, 0, &small_cfg(), &mut rng);
        agent.critic2_target = agent.critic1_target.clone();
        let buf = filled_buffer(3, 2, 32, &mut rng);
        let batch = buf.sample(16, &mut rng).unwrap();
        let mut ddpg = agent.clone();
        ddpg.algorithm = Algorithm::Ddpg;
        let (mut r1, mut r2) = (RandomStream::from_seed(9), RandomStream::from_seed(9));
        assert_eq!(agent.target_q(&batch, &mut r1).unwrap(), ddpg.target_q(&batch, &mut r2).unwrap());
    }

    #[test]
    fn critic_step_reduces_loss() {
        let mut rng = RandomStream::from_seed(6);
        let mut agent = Td3Agent::new(Algorithm::Td3, 1, 1, 0, &small_cfg(), &mut rng);
        let batch = Batch {
            s: ndarray::array![[0.5]],
            a: ndarray::array![[0.2]],
            r: ndarray::array![1.0],
            s2: ndarray::array![[0.1]],
        };
        let y = ndarray::array![1.0];
        let before = agent.critic_update(&batch, &y).unwrap();
        let after = agent.critic_update(&batch, &y).unwrap();
        assert!(after < before);
    }

    #[test]
    fn critic_at_target_has_zero_gradient() {
        let mut rng = RandomStream::from_seed(7);
        let mut agent = Td3Agent::new(Algorithm::Ddpg, 2, 1, 0, &small_cfg(), &mut rng);
        let buf = filled_buffer(2, 1, 16, &mut rng);
        let batch = buf.sample(16, &mut rng).unwrap();
        let input = Td3Agent::critic_input(batch.s.view(), batch.a.view());
        let y = agent.critic1.forward(input.view()).unwrap().column(0).to_owned();
        let before = agent.critic1.clone();
        agent.critic_update(&batch, &y).unwrap();
        assert_eq!(agent.critic1, before);
    }

    #[test]
    fn soft_update_endpoints() {
        let mut rng = RandomStream::from_seed(8);
        let mut agent = Td3Agent::new(Algorithm::Td3, 3, 2, 0, &small_cfg(), &mut rng);
        let buf = filled_buffer(3, 2, 32, &mut rng);
        for _ in 0..3 {
            let b = buf.sample(16, &mut rng).unwrap();
            let y = agent.target_q(&b, &mut rng).unwrap();
            agent.critic_update(&b, &y).unwrap();
            agent.actor_update(b.s.view()).unwrap();
        }
        let mut frozen = agent.clone();
        frozen.chi = 0.0;
        let before = frozen.actor_target.clone();
        frozen.soft_update_targets();
        assert_eq!(frozen.actor_target, before);
        agent.chi = 1.0;
        agent.soft_update_targets();
        assert_eq!(agent.actor_target, agent.actor);
        assert_eq!(agent.critic1_target, agent.critic1);
        assert_eq!(agent.critic2_target, agent.critic2);
    }

    #[test]
    fn actor_chain_rule_on_scalar_nets() {
        // Linear actor a = tanh(w·s + b) and linear critic Q = u·s + v·a + c.
        use crate::nn::Dense;
        let mut rng = RandomStream::from_seed(10);
        let mut agent = Td3Agent::new(Algorithm::Td3, 1, 1, 0, &small_cfg(), &mut rng);
        let (w, b, u, v, c) = (0.4, -0.1, 0.3, 0.8, 0.05);
        agent.actor = Mlp {
            layers: vec![Dense { w: ndarray::array![[w]], b: ndarray::array![b] }],
            output: OutputActivation::Tanh,
        };
        agent.actor_opt = Adam::new(&agent.actor, 0.01, 0.9, 0.999, 1e-8);
        agent.critic1 = Mlp {
            layers: vec![Dense { w: ndarray::array![[u], [v]], b: ndarray::array![c] }],
            output: OutputActivation::Identity,
        };
        let s = ndarray::array![[0.5], [-1.0]];
        // d(-mean Q)/dw = -mean(v · (1 - a²) · s)
        let grad_w: Real = -[0.5 as Real, -1.0]
            .iter()
            .map(|&x| v * (1.0 - (w * x + b).tanh().powi(2)) * x)
            .sum::<Real>()
            / 2.0;
        agent.actor_update(s.view()).unwrap();
        // First Adam step moves each parameter by lr·sign(g).
        let moved = agent.actor.layers[0].w[[0, 0]] - w;
        assert!((moved + 0.01 * grad_w.signum()).abs() < 1e-6, "{moved} {grad_w}");
    }

    #[test]
    fn td3_degenerates_to_ddpg() {
        let mut rng = RandomStream::from_seed(11);
        let mut cfg = small_cfg();
        cfg.actor_delay = 1;
        cfg.target_noise_std = 0.0;
        let mut td3 = Td3Agent::new(Algorithm::Td3, 3, 2, 0, &cfg, &mut rng);
        td3.critic2 = td3.critic1.clone();
        td3.critic2_target = td3.critic1_target.clone();
        let mut ddpg = td3.clone();
        ddpg.algorithm = Algorithm::Ddpg;
        let buf = filled_buffer(3, 2, 64, &mut rng);
        for _ in 0..5 {
            let b = buf.sample(16, &mut rng).unwrap();
            td3.train_step(&b, &mut RandomStream::from_seed(1)).unwrap();
            ddpg.train_step(&b, &mut RandomStream::from_seed(1)).unwrap();
        }
        assert_eq!(td3.actor, ddpg.actor);
        assert_eq!(td3.critic1, ddpg.critic1);
    }

    #[test]
    fn rejects_batches_without_agent_slice() {
        let mut rng = RandomStream::from_seed(12);
        let mut agent = Td3Agent::new(Algorithm::Td3, 3, 2, 4, &small_cfg(), &mut rng);
        let buf = filled_buffer(3, 2, 16, &mut rng);
        let b = buf.sample(16, &mut rng).unwrap();
        assert!(agent.train_step(&b, &mut rng).is_err());
    }
}
