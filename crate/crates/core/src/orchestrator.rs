//! The epoch loop: association, twin-trained power control and RIS
//! beamforming, physical tests and the hand-off of the best decision into the
//! next epoch. Every compared method runs through [`run_seed`].

use std::f64::consts::{PI, TAU};
use std::time::Instant;

use rand::Rng;

use crate::aua::{bpso_baseline, position_update, rectify_infeasible_rows, solve_aua, AuaOutcome};
use crate::config::{ExperimentSpec, Method};
use crate::error::{Error, Result};
use crate::iees::{coordinate_search, implicit_enumeration, phase_levels, power_levels, LEVELS};
use crate::metrics::{penalized_sum_rate, AssociationMatrix};
use crate::nn::ReplayBuffer;
use crate::rng::{Purpose, RandomStream};
use crate::td3::{map_phase, map_power, to_real, Algorithm, Real, StateNormalizer, Td3Agent};
use crate::twin::{StepOutcome, TwinEnvironment};

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub epoch: usize,
    pub episode: usize,
    pub step: usize,
    pub reward: f64,
    pub sum_rate: f64,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalTest {
    pub reward: f64,
    pub sum_rate: f64,
    pub violations: usize,
}

impl PhysicalTest {
    fn from_outcome(out: &StepOutcome) -> Self {
        PhysicalTest {
            reward: out.reward,
            sum_rate: out.report.sum_rate,
            violations: out.report.violators.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeSummary {
    pub mean_reward: f64,
    pub mean_sum_rate: f64,
    pub violations: usize,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub assoc: AssociationMatrix,
    /// Association search result, when the method runs one.
    pub aua_fitness: Option<f64>,
    /// The swarm's global best before its first evaluation.
    pub aua_initial_gbest: Option<f64>,
    /// Best twin reward of the epoch and the action that achieved it.
    pub r_opt: f64,
    pub p_opt: Vec<f64>,
    pub phi_opt: Vec<f64>,
    pub physical: Option<PhysicalTest>,
    pub episodes: Vec<EpisodeSummary>,
    pub refreshed: bool,
    pub twin_steps: u64,
    pub physical_steps: u64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    pub epochs: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub env: TwinEnvironment,
    pub agents: Vec<Td3Agent>,
}

impl RunResult {
    /// Physical test of the last epoch; every run performs one.
    pub fn final_physical(&self) -> &PhysicalTest {
        self.epochs
            .last()
            .and_then(|e| e.physical.as_ref())
            .expect("the final epoch is always tested")
    }

    pub fn final_sum_rate(&self) -> f64 {
        self.final_physical().sum_rate
    }
}

/// How a learning method produces associations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum AuaKind {
    Pabpso,
    Bpso,
    /// Read from the agent's action.
    FromAction,
}

/// The agents of a learning method and how their actions are laid out in the
/// stored joint action `[powers | phases | association scores]`.
struct Learner {
    agents: Vec<Td3Agent>,
    k: usize,
    m: usize,
    bn: usize,
    with_assoc: bool,
}

struct Decision {
    joint: Vec<f64>,
    p: Vec<f64>,
    phi: Vec<f64>,
    assoc: Option<AssociationMatrix>,
}

/// Association from per-entry scores: per-column argmax, then rectification.
pub fn association_from_scores(k: usize, m: usize, scores: &[f64]) -> Result<AssociationMatrix> {
    let mut x = position_update(k, m, scores);
    rectify_infeasible_rows(&mut x, scores)?;
    Ok(x)
}

impl Learner {
    fn new(method: Method, spec: &ExperimentSpec, rng: &mut RandomStream) -> Self {
        let sys = &spec.system;
        let (k, m, bn) = (sys.num_ues, sys.num_aps, sys.ris_elements());
        let sd = 2 * k + bn;
        let cfg = &spec.agent;
        let algo = if method == Method::PabpsoDdpg {
            Algorithm::Ddpg
        } else {
            Algorithm::Td3
        };
        let with_assoc = method == Method::Allout;
        let agents = match method {
            Method::PcrbOut | Method::Allout => {
                let dim = k + bn + if with_assoc { k * m } else { 0 };
                vec![Td3Agent::new(algo, sd, dim, 0, cfg, rng)]
            }
            _ => {
                let mut v = vec![Td3Agent::new(algo, sd, k, 0, cfg, rng)];
                if bn > 0 {
                    v.push(Td3Agent::new(algo, sd, bn, k, cfg, rng));
                }
                v
            }
        };
        Learner {
            agents,
            k,
            m,
            bn,
            with_assoc,
        }
    }

    fn action_dim(&self) -> usize {
        self.k + self.bn + if self.with_assoc { self.k * self.m } else { 0 }
    }

    fn decide(&self, state: &[f64], p_max: f64, rng: &mut RandomStream) -> Result<Decision> {
        let mut joint = Vec::with_capacity(self.action_dim());
        for a in &self.agents {
            joint.extend(a.act(state, true, rng)?);
        }
        let (k, bn) = (self.k, self.bn);
        let assoc = if self.with_assoc {
            Some(association_from_scores(k, self.m, &joint[k + bn..])?)
        } else {
            None
        };
        Ok(Decision {
            p: map_power(&joint[..k], p_max),
            phi: map_phase(&joint[k..k + bn]),
            joint,
            assoc,
        })
    }
}

/// Wall-clock seconds are kept out of every deterministic output.
fn elapsed(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn check_finite(x: f64, what: &str) -> Result<f64> {
    if x.is_finite() {
        Ok(x)
    } else {
        Err(Error::NonFinite(format!("{what} = {x}")))
    }
}

fn tests_physical(spec: &ExperimentSpec, epoch: usize) -> bool {
    spec.training.schedule.fires(epoch) || epoch == spec.training.epochs
}

/// Runs `spec.method` for one seed. All randomness derives from `seed`, so
/// two methods with the same seed see the same topology and channels.
pub fn run_seed(spec: &ExperimentSpec, seed: u64) -> Result<RunResult> {
    let mut spec = spec.clone();
    spec.system.seed = seed;
    spec.validate()?;
    let env = TwinEnvironment::new(&spec.system, spec.training.schedule, spec.agent.penalty_c)?;
    match spec.method {
        Method::Proposed | Method::PabpsoDdpg | Method::PcrbOut => run_learning(&spec, env, AuaKind::Pabpso),
        Method::BpsoTd3 => run_learning(&spec, env, AuaKind::Bpso),
        Method::Allout => run_learning(&spec, env, AuaKind::FromAction),
        Method::Iees => run_iees(&spec, env),
        Method::Random => run_random(&spec, env),
    }
}

fn run_learning(spec: &ExperimentSpec, mut env: TwinEnvironment, kind: AuaKind) -> Result<RunResult> {
    let sys = &spec.system;
    let seed = sys.seed;
    let (k, m, bn) = (sys.num_ues, sys.num_aps, sys.ris_elements());
    let tr = &spec.training;
    let mut swarm_rng = RandomStream::new(seed, Purpose::Swarm);
    let mut init_rng = RandomStream::new(seed, Purpose::AgentInit);
    let mut explore_rng = RandomStream::new(seed, Purpose::Exploration);
    let mut replay_rng = RandomStream::new(seed, Purpose::Replay);
    let mut target_rng = RandomStream::new(seed, Purpose::TargetNoise);

    let mut learner = Learner::new(spec.method, spec, &mut init_rng);
    let sd = 2 * k + bn;
    let mut buffer = ReplayBuffer::<Real>::new(spec.agent.buffer_capacity, sd, learner.action_dim());
    let mut normalizer = StateNormalizer::new(sys.p_max_w, spec.agent.normalize_state);
    let (p_mid, phi_mid) = (vec![sys.p_max_w / 2.0; k], vec![PI; bn]);

    let mut epochs: Vec<EpochRecord> = Vec::with_capacity(tr.epochs);
    let mut steps = Vec::with_capacity(tr.epochs * tr.episodes * tr.steps);
    for z in 1..=tr.epochs {
        let started = Instant::now();
        let (twin0, phys0) = (env.twin_steps(), env.physical_steps());
        let refreshed = env.refresh_pending()?;
        let prev = epochs.last();
        let (p_in, phi_in) = prev.map_or((p_mid.clone(), phi_mid.clone()), |e| (e.p_opt.clone(), e.phi_opt.clone()));
        let warm = prev.map(|e| (e.assoc.clone(), e.r_opt));
        let aua: Option<AuaOutcome> = match kind {
            AuaKind::Pabpso => Some(solve_aua(&env, &p_in, &phi_in, &spec.swarm, &mut swarm_rng, warm)?),
            AuaKind::Bpso => Some(bpso_baseline(&env, &p_in, &phi_in, &spec.swarm, &mut swarm_rng, warm)?),
            AuaKind::FromAction => None,
        };
        let epoch_assoc = match (&aua, prev) {
            (Some(o), _) => o.assoc.clone(),
            (None, Some(e)) => e.assoc.clone(),
            (None, None) => association_from_scores(k, m, &vec![0.0; k * m])?,
        };
        env.sync_epoch(z, epoch_assoc.clone())?;

        let mut best: Option<(f64, Vec<f64>, Vec<f64>, AssociationMatrix)> = None;
        let mut episodes = Vec::with_capacity(tr.episodes);
        for y in 1..=tr.episodes {
            let init = env.peek(&p_mid, &phi_mid)?;
            let mut state = normalizer.normalize(&init.next_state);
            let (mut reward_sum, mut rate_sum, mut violations) = (0.0, 0.0, 0);
            for t in 1..=tr.steps {
                let d = learner.decide(&state, sys.p_max_w, &mut explore_rng)?;
                let out = match &d.assoc {
                    Some(a) => env.twin_step_with(a, &d.p, &d.phi)?,
                    None => env.twin_step(&d.p, &d.phi)?,
                };
                let reward = check_finite(out.reward, "twin reward")?;
                let next = normalizer.normalize(&out.next_state);
                buffer.push(&to_real(&state), &to_real(&d.joint), reward as Real, &to_real(&next))?;
                if best.as_ref().map_or(true, |b| reward > b.0) {
                    let assoc = d.assoc.clone().unwrap_or_else(|| epoch_assoc.clone());
                    best = Some((reward, d.p.clone(), d.phi.clone(), assoc));
                }
                if buffer.len() >= spec.agent.batch_size {
                    let batch = buffer.sample(spec.agent.batch_size, &mut replay_rng)?;
                    for a in learner.agents.iter_mut() {
                        check_finite(a.train_step(&batch, &mut target_rng)?, "critic loss")?;
                    }
                }
                reward_sum += reward;
                rate_sum += out.report.sum_rate;
                violations += out.report.violators.len();
                steps.push(StepRecord {
                    epoch: z,
                    episode: y,
                    step: t,
                    reward,
                    sum_rate: out.report.sum_rate,
                    violations: out.report.violators.len(),
                });
                state = next;
            }
            for a in learner.agents.iter_mut() {
                a.decay_exploration();
            }
            let n = tr.steps as f64;
            episodes.push(EpisodeSummary {
                mean_reward: reward_sum / n,
                mean_sum_rate: rate_sum / n,
                violations,
                steps: tr.steps,
            });
        }
        let (r_opt, p_opt, phi_opt, assoc) = best.expect("epochs contain at least one step");
        if assoc != epoch_assoc {
            env.sync_epoch(z, assoc.clone())?;
        }
        let physical = if tests_physical(spec, z) {
            Some(PhysicalTest::from_outcome(&env.physical_step(&p_opt, &phi_opt)?))
        } else {
            None
        };
        epochs.push(EpochRecord {
            epoch: z,
            assoc,
            aua_fitness: aua.as_ref().map(|o| o.fitness),
            aua_initial_gbest: aua.as_ref().map(|o| o.initial_gbest_fit),
            r_opt,
            p_opt,
            phi_opt,
            physical,
            episodes,
            refreshed,
            twin_steps: env.twin_steps() - twin0,
            physical_steps: env.physical_steps() - phys0,
            wall_time_s: elapsed(started),
        });
    }
    Ok(RunResult {
        method: spec.method,
        seed,
        epochs,
        steps,
        env,
        agents: learner.agents,
    })
}

/// Implicit enumeration for the association given the previous `(p, φ)`,
/// then coordinate search for `(p, φ)` given the association, once per epoch.
/// Starts from full power and zero phases.
fn run_iees(spec: &ExperimentSpec, mut env: TwinEnvironment) -> Result<RunResult> {
    let sys = &spec.system;
    let (k, m, bn) = (sys.num_ues, sys.num_aps, sys.ris_elements());
    let penalty = spec.swarm.penalty_u;
    let (power_grid, phase_grid) = (power_levels(sys.p_max_w), phase_levels());
    let (mut lp, mut lf) = (vec![LEVELS - 1; k], vec![0usize; bn]);
    let mut epochs = Vec::with_capacity(spec.training.epochs);
    for z in 1..=spec.training.epochs {
        let started = Instant::now();
        let (twin0, phys0) = (env.twin_steps(), env.physical_steps());
        let refreshed = env.refresh_pending()?;
        let p_in: Vec<f64> = lp.iter().map(|&l| power_grid[l]).collect();
        let phi_in: Vec<f64> = lf.iter().map(|&l| phase_grid[l]).collect();
        let (assoc, _) = {
            let f = env.fitness_fn(&p_in, &phi_in, penalty)?;
            implicit_enumeration(k, m, f)?
        };
        let search = coordinate_search(sys.p_max_w, lp.clone(), lf.clone(), |p, phi| {
            Ok(penalized_sum_rate(&env.twin_report(&assoc, p, phi)?, penalty))
        })?;
        lp = search.level_p.clone();
        lf = search.level_phi.clone();
        env.sync_epoch(z, assoc.clone())?;
        let physical = if tests_physical(spec, z) {
            Some(PhysicalTest::from_outcome(&env.physical_step(&search.p, &search.phi)?))
        } else {
            None
        };
        epochs.push(EpochRecord {
            epoch: z,
            assoc,
            aua_fitness: None,
            aua_initial_gbest: None,
            r_opt: check_finite(search.value, "coordinate search objective")?,
            p_opt: search.p,
            phi_opt: search.phi,
            physical,
            episodes: Vec::new(),
            refreshed,
            twin_steps: env.twin_steps() - twin0,
            physical_steps: env.physical_steps() - phys0,
            wall_time_s: elapsed(started),
        });
    }
    Ok(RunResult {
        method: Method::Iees,
        seed: sys.seed,
        epochs,
        steps: Vec::new(),
        env,
        agents: Vec::new(),
    })
}

/// Uniform over feasible associations: each AP picks a UE uniformly and the
/// draw is rejected unless every UE is covered.
pub fn uniform_association(k: usize, m: usize, rng: &mut RandomStream) -> Result<AssociationMatrix> {
    if k == 0 || k > m {
        return Err(Error::InfeasibleAssociation(format!("{m} APs cannot cover {k} UEs")));
    }
    loop {
        let serving: Vec<usize> = (0..m).map(|_| rng.gen_range(0..k)).collect();
        let a = AssociationMatrix::from_assignment(k, &serving)?;
        if a.is_feasible() {
            return Ok(a);
        }
    }
}

/// One uniformly random decision per epoch, with no search.
fn run_random(spec: &ExperimentSpec, mut env: TwinEnvironment) -> Result<RunResult> {
    let sys = &spec.system;
    let (k, m, bn) = (sys.num_ues, sys.num_aps, sys.ris_elements());
    let mut rng = RandomStream::new(sys.seed, Purpose::Baseline);
    let mut epochs = Vec::with_capacity(spec.training.epochs);
    for z in 1..=spec.training.epochs {
        let started = Instant::now();
        let (twin0, phys0) = (env.twin_steps(), env.physical_steps());
        let refreshed = env.refresh_pending()?;
        let assoc = uniform_association(k, m, &mut rng)?;
        let p: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..=sys.p_max_w)).collect();
        let phi: Vec<f64> = (0..bn).map(|_| rng.gen_range(0.0..TAU)).collect();
        env.sync_epoch(z, assoc.clone())?;
        let r = check_finite(env.peek(&p, &phi)?.reward, "twin reward")?;
        let physical = if tests_physical(spec, z) {
            Some(PhysicalTest::from_outcome(&env.physical_step(&p, &phi)?))
        } else {
            None
        };
        epochs.push(EpochRecord {
            epoch: z,
            assoc,
            aua_fitness: None,
            aua_initial_gbest: None,
            r_opt: r,
            p_opt: p,
            phi_opt: phi,
            physical,
            episodes: Vec::new(),
            refreshed,
            twin_steps: env.twin_steps() - twin0,
            physical_steps: env.physical_steps() - phys0,
            wall_time_s: elapsed(started),
        });
    }
    Ok(RunResult {
        method: Method::Random,
        seed: sys.seed,
        epochs,
        steps: Vec::new(),
        env,
        agents: Vec::new(),
    })
}

/// Worker threads for multi-seed runs: `RISTWIN_THREADS` if set, otherwise
/// the available parallelism.
pub fn thread_count() -> usize {
    std::env::var("RISTWIN_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every seed of `spec`, in parallel across seeds. Results come back in
/// seed order.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Vec<RunResult>> {
    run_many(spec.seeds.iter().map(|&s| (spec.clone(), s)).collect())
}

/// Runs independent `(spec, seed)` jobs on a small worker pool, preserving
/// job order in the output.
pub fn run_many(jobs: Vec<(ExperimentSpec, u64)>) -> Result<Vec<RunResult>> {
    let workers = thread_count().min(jobs.len()).max(1);
    let next = std::sync::atomic::AtomicUsize::new(0);
    let slots: Vec<std::sync::Mutex<Option<Result<RunResult>>>> =
        jobs.iter().map(|_| std::sync::Mutex::new(None)).collect();
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                let Some((spec, seed)) = jobs.get(i) else { break };
                let r = run_seed(spec, *seed);
                *slots[i].lock().expect("result slot") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("result slot").expect("every job ran"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;
    use crate::twin::InteractionSchedule;

    fn tiny(method: Method) -> ExperimentSpec {
        let mut s = ExperimentSpec::from_preset(Preset::Desk, method);
        s.training.epochs = 2;
        s.training.episodes = 2;
        s.training.steps = 5;
        s.swarm.particles = 6;
        s.swarm.iterations = 3;
        s.agent.hidden = vec![8, 8];
        s.agent.batch_size = 4;
        s
    }

    #[test]
    fn scores_of_zero_give_rectified_row_zero() {
        let a = association_from_scores(3, 4, &[0.0; 12]).unwrap();
        assert!(a.is_feasible());
        assert_eq!(a.row_sum(0), 2);
    }

    #[test]
    fn action_layouts() {
        let spec = tiny(Method::Allout);
        let mut rng = RandomStream::from_seed(1);
        assert_eq!(Learner::new(Method::Allout, &spec, &mut rng).action_dim(), 25);
        assert_eq!(Learner::new(Method::PcrbOut, &spec, &mut rng).action_dim(), 13);
        let split = Learner::new(Method::Proposed, &spec, &mut rng);
        assert_eq!(split.agents.len(), 2);
        assert_eq!((split.agents[1].offset, split.agents[1].action_dim), (3, 10));
    }

    #[test]
    fn all_methods_run_and_test_the_final_epoch() {
        for method in Method::ALL {
            let r = run_seed(&tiny(method), 4).unwrap();
            assert_eq!(r.epochs.len(), 2, "{method}");
            assert!(r.final_sum_rate().is_finite());
            for e in &r.epochs {
                assert!(e.assoc.is_feasible());
                assert!(e.physical_steps <= 1);
            }
        }
    }

    #[test]
    fn uniform_association_covers_feasible_set() {
        let mut rng = RandomStream::from_seed(2);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..2000 {
            seen.insert(uniform_association(2, 3, &mut rng).unwrap());
        }
        assert_eq!(seen.len(), 6);
    }

    #[test]
    fn never_schedule_tests_only_at_the_end() {
        let mut spec = tiny(Method::Proposed);
        spec.training.epochs = 3;
        spec.training.schedule = InteractionSchedule::Never;
        let r = run_seed(&spec, 1).unwrap();
        let tested: Vec<bool> = r.epochs.iter().map(|e| e.physical.is_some()).collect();
        assert_eq!(tested, vec![false, false, true]);
        assert!(r.epochs.iter().all(|e| !e.refreshed));
    }
}
