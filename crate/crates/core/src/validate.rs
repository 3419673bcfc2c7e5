//! Self-checks against independent oracles, run by the `validate` command.

use std::f64::consts::TAU;
use std::time::Instant;

use ndarray::Array2;
use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::Rng;

use crate::aua::solve_aua;
use crate::config::{Preset, SystemConfig};
use crate::error::Result;
use crate::metrics::{penalized_sum_rate, rate_report, AssociationMatrix, SignalChannels};
use crate::nn::{gradient_check, Batch, Mlp, OutputActivation};
use crate::rng::RandomStream;
use crate::td3::{map_phase, map_power, Algorithm, Real, Td3Agent};
use crate::topology::{
    complex_normal, generate_topology, mmse_estimate, mmse_from_observations, sample_channels, ChannelRealization,
    PilotNoise,
};
use crate::twin::{InteractionSchedule, TwinEnvironment};

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn timed(name: &'static str, f: impl FnOnce() -> Result<(bool, String)>) -> CheckReport {
    let t = Instant::now();
    let (passed, detail) = match f() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckReport {
        name,
        passed,
        detail,
        seconds: t.elapsed().as_secs_f64(),
    }
}

/// Every feasible association of `k` UEs to `m` APs, found by scanning all
/// bit patterns.
fn feasible_by_scan(k: usize, m: usize) -> Vec<AssociationMatrix> {
    let d = k * m;
    (0u32..1 << d)
        .filter_map(|mask| {
            let bits: Vec<u8> = (0..d).map(|i| ((mask >> i) & 1) as u8).collect();
            let rows_ok = (0..k).all(|r| bits[r * m..(r + 1) * m].iter().any(|&b| b == 1));
            let cols_ok = (0..m).all(|c| (0..k).filter(|&r| bits[r * m + c] == 1).count() == 1);
            (rows_ok && cols_ok).then(|| AssociationMatrix::from_bits(k, m, bits).expect("shape"))
        })
        .collect()
}

/// The swarm recovers the exhaustive optimum on small instances and keeps
/// every particle feasible.
pub fn association_oracle() -> CheckReport {
    timed("association oracle (K=2, M=3, 20 instances)", || {
        let swarm = Preset::Desk.swarm();
        let (mut hits, mut feasible) = (0, 0);
        for seed in 0..20 {
            let mut cfg = Preset::Desk.system();
            cfg.num_ues = 2;
            cfg.num_aps = 3;
            cfg.seed = seed;
            let env = TwinEnvironment::new(&cfg, InteractionSchedule::EveryEpoch, -3.0)?;
            let p = vec![cfg.p_max_w; 2];
            let phi = vec![0.0; cfg.ris_elements()];
            let mut best = f64::NEG_INFINITY;
            let mut best_assoc = Vec::new();
            for a in feasible_by_scan(2, 3) {
                let f = env.fitness(&a, &p, &phi, swarm.penalty_u)?;
                if f > best {
                    best = f;
                    best_assoc = vec![a];
                } else if f == best {
                    best_assoc.push(a);
                }
            }
            let out = solve_aua(&env, &p, &phi, &swarm, &mut RandomStream::from_seed(seed + 1000), None)?;
            if best_assoc.contains(&out.assoc) {
                hits += 1;
            }
            feasible += usize::from(out.always_feasible);
        }
        Ok((hits >= 19 && feasible == 20, format!("optimum {hits}/20, feasible {feasible}/20")))
    })
}

/// Matched-filter SINR written out term by term from raw channel arrays.
fn transcribed_sinr(
    lambda: &AssociationMatrix,
    p: &[f64],
    phi: &[f64],
    h: (&Array2<Complex64>, &ndarray::Array3<Complex64>),
    hhat: (&Array2<Complex64>, &ndarray::Array3<Complex64>),
    noise: f64,
) -> Vec<f64> {
    let (m, e, k) = h.1.dim();
    let eff = |d: &Array2<Complex64>, c: &ndarray::Array3<Complex64>, mi: usize, ki: usize| {
        let mut acc = d[[mi, ki]];
        for ei in 0..e {
            acc += c[[mi, ei, ki]] * Complex64::new(phi[ei].cos(), phi[ei].sin());
        }
        acc
    };
    (0..k)
        .map(|ki| {
            let mut num = Complex64::new(0.0, 0.0);
            let mut den = 0.0;
            for mi in 0..m {
                if lambda.get(ki, mi) {
                    let g = eff(hhat.0, hhat.1, mi, ki);
                    num += g.conj() * eff(h.0, h.1, mi, ki);
                    den += noise * g.norm_sqr();
                }
            }
            for kj in (0..k).filter(|&kj| kj != ki) {
                let mut acc = Complex64::new(0.0, 0.0);
                for mi in 0..m {
                    if lambda.get(ki, mi) {
                        acc += eff(hhat.0, hhat.1, mi, ki).conj() * eff(h.0, h.1, mi, kj);
                    }
                }
                den += p[kj] * acc.norm_sqr();
            }
            p[ki] * num.norm_sqr() / den
        })
        .collect()
}

fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// SINR, rate and reward in both modes against the transcription on random
/// instances with K ≤ 3, M ≤ 4, B ≤ 2, N ≤ 5.
pub fn rate_oracle() -> CheckReport {
    timed("SINR/rate/reward oracle (100 instances)", || {
        let mut rng = RandomStream::from_seed(77);
        let mut worst: f64 = 0.0;
        for _ in 0..100 {
            let mut cfg: SystemConfig = Preset::Desk.system();
            cfg.num_ues = rng.gen_range(1..=3);
            cfg.num_aps = rng.gen_range(cfg.num_ues..=4);
            cfg.num_ris = rng.gen_range(0..=2);
            cfg.elements_per_ris = if cfg.num_ris == 0 { 0 } else { rng.gen_range(0..=5) };
            let (k, m) = (cfg.num_ues, cfg.num_aps);
            let topo = generate_topology(&cfg, &mut rng);
            let real = sample_channels(&topo, &cfg, &mut rng)?;
            let est = mmse_estimate(&real, &cfg, &mut rng)?;
            let serving: Vec<usize> = loop {
                let s: Vec<usize> = (0..m).map(|_| rng.gen_range(0..k)).collect();
                if (0..k).all(|u| s.contains(&u)) {
                    break s;
                }
            };
            let assoc = AssociationMatrix::from_assignment(k, &serving)?;
            let p: Vec<f64> = (0..k).map(|_| rng.gen_range(0.0..cfg.p_max_w)).collect();
            let phi: Vec<f64> = (0..cfg.ris_elements()).map(|_| rng.gen_range(0.0..TAU)).collect();
            let noise = cfg.noise_power_w();
            let truth = (&real.h_direct, &real.h_cascaded);
            let twin = (&est.hhat_direct, &est.hhat_cascaded);
            for (signal, h) in [(SignalChannels::Truth(&real), truth), (SignalChannels::Estimates, twin)] {
                let got = rate_report(&assoc, &p, &phi, signal, &est, noise, cfg.r_min)?;
                let want = transcribed_sinr(&assoc, &p, &phi, h, twin, noise);
                let mut sum = 0.0;
                let mut viol = 0;
                for ki in 0..k {
                    worst = worst.max(rel_err(got.sinr[ki], want[ki]));
                    let r = (1.0 + want[ki]).ln() / std::f64::consts::LN_2;
                    worst = worst.max(rel_err(got.rate[ki], r));
                    sum += r;
                    viol += usize::from(r < cfg.r_min);
                }
                let reward = if viol == 0 { sum } else { -3.0 * viol as f64 };
                worst = worst.max(rel_err(penalized_sum_rate(&got, -3.0), reward));
            }
        }
        Ok((worst <= 1e-9, format!("max relative error {worst:.2e}")))
    })
}

/// Finite-difference checks of the actor and critic shapes of both desk
/// agents, at 10 random parameter points each.
pub fn gradient_integrity() -> CheckReport {
    timed("gradient integrity (desk agent shapes)", || {
        let cfg = Preset::Desk.system();
        let hidden = Preset::Desk.agent().hidden;
        let state = 2 * cfg.num_ues + cfg.ris_elements();
        let mut shapes = Vec::new();
        for action in [cfg.num_ues, cfg.ris_elements()] {
            let mut actor = vec![state];
            actor.extend(&hidden);
            actor.push(action);
            shapes.push((actor, OutputActivation::Tanh, 1e-3));
            let mut critic = vec![state + action];
            critic.extend(&hidden);
            critic.push(1);
            shapes.push((critic, OutputActivation::Identity, 1.0));
        }
        let mut rng = RandomStream::from_seed(5);
        let mut worst: f64 = 0.0;
        for (sizes, act, scale) in &shapes {
            for _ in 0..10 {
                let net = Mlp::<f64>::new(sizes, *act, *scale, &mut rng);
                let x = Array2::from_shape_simple_fn((2, sizes[0]), || rng.gen_range(-1.0..1.0));
                let w = Array2::from_shape_simple_fn((2, *sizes.last().expect("sizes")), || rng.gen_range(-1.0..1.0));
                let mut idx: Vec<usize> = (0..net.num_params()).collect();
                idx.shuffle(&mut rng);
                idx.truncate(1000);
                worst = worst.max(gradient_check(&net, x.view(), w.view(), 1e-6, 1e-6, Some(&idx))?);
            }
        }
        Ok((worst <= 1e-4, format!("{} shapes, max relative error {worst:.2e}", shapes.len())))
    })
}

fn random_batch(sd: usize, ad: usize, n: usize, rng: &mut RandomStream) -> Batch<Real> {
    let mut u = |r: usize, c: usize| Array2::from_shape_simple_fn((r, c), || rng.gen_range(-1.0..1.0) as Real);
    let s = u(n, sd);
    let a = u(n, ad);
    let s2 = u(n, sd);
    let r = u(n, 1).column(0).to_owned();
    Batch { s, a, r, s2 }
}

fn distance(a: &Mlp<Real>, b: &Mlp<Real>) -> f64 {
    a.flat_params()
        .iter()
        .zip(b.flat_params())
        .map(|(x, y)| f64::from(x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Clipped double-Q targets, delayed actor updates, soft-update contraction
/// and action bounds on randomized batches.
pub fn td3_mechanics(batches: usize) -> CheckReport {
    timed("TD3 mechanics", || {
        let mut cfg = Preset::Desk.agent();
        cfg.hidden = vec![16, 16];
        cfg.lr_actor = 1e-3;
        cfg.lr_critic = 1e-3;
        cfg.chi = 0.05;
        let (sd, ad, n) = (7, 3, 16);
        let p_max = Preset::Desk.system().p_max_w;
        let mut rng = RandomStream::from_seed(8);
        let mut agent = Td3Agent::new(Algorithm::Td3, sd, ad, 0, &cfg, &mut rng);
        let mut failures = [0usize; 4];
        let mut worst_contraction: f64 = 0.0;
        for _ in 0..batches {
            let batch = random_batch(sd, ad, n, &mut rng);

            // Without target smoothing the target is r + γ·min(Q1', Q2').
            let mut plain = agent.clone();
            plain.target_noise_std = 0.0;
            let y = plain.target_q(&batch, &mut rng)?;
            let a2 = agent.actor_target.forward(batch.s2.view())?;
            let input = ndarray::concatenate![ndarray::Axis(1), batch.s2, a2];
            let q1 = agent.critic1_target.forward(input.view())?;
            let q2 = agent.critic2_target.forward(input.view())?;
            for i in 0..n {
                let want = f64::from(batch.r[i]) + agent.gamma * f64::from(q1[[i, 0]].min(q2[[i, 0]]));
                if (f64::from(y[i]) - want).abs() > 1e-5 * want.abs().max(1.0) {
                    failures[0] += 1;
                    break;
                }
            }

            // The actor and targets move only on multiples of the delay.
            let before = agent.clone();
            agent.train_step(&batch, &mut rng)?;
            let due = agent.updates % agent.actor_delay == 0;
            let moved = agent.actor != before.actor || agent.actor_target != before.actor_target;
            if moved != due || agent.critic1 == before.critic1 {
                failures[1] += 1;
            }

            // θ' ← χθ + (1 − χ)θ' shrinks the distance by exactly 1 − χ.
            let mut probe = agent.clone();
            let d0 = distance(&probe.actor_target, &probe.actor);
            probe.soft_update_targets();
            let d1 = distance(&probe.actor_target, &probe.actor);
            if d0 > 0.0 {
                let dev = (d1 / d0 - (1.0 - agent.chi)).abs();
                worst_contraction = worst_contraction.max(dev);
                if dev > 1e-4 {
                    failures[2] += 1;
                }
            }

            // Actions and their continuous decisions satisfy the box
            // constraints by construction.
            let s: Vec<f64> = (0..sd).map(|_| rng.gen_range(-50.0..50.0)).collect();
            let a = agent.act(&s, true, &mut rng)?;
            let pw = map_power(&a, p_max);
            let ph = map_phase(&a);
            let ok = a.iter().all(|x| (-1.0..=1.0).contains(x))
                && pw.iter().all(|x| (0.0..=p_max).contains(x))
                && ph.iter().all(|x| (0.0..TAU).contains(x));
            if !ok {
                failures[3] += 1;
            }
        }
        Ok((
            failures.iter().all(|&f| f == 0),
            format!(
                "{batches} batches; failures min-target {}, delay {}, contraction {} (max dev {worst_contraction:.1e}), bounds {}",
                failures[0], failures[1], failures[2], failures[3]
            ),
        ))
    })
}

/// Orthogonality of the estimation error to the pilot observation and the
/// noiseless limit.
pub fn mmse_statistics() -> CheckReport {
    timed("MMSE statistics", || {
        let cfg = Preset::Desk.system();
        let topo = generate_topology(&cfg, &mut RandomStream::from_seed(1));
        let real = sample_channels(&topo, &cfg, &mut RandomStream::from_seed(101))?;

        let noiseless = 1e-40;
        let mut obs = PilotNoise::empty(&real);
        obs.observe(noiseless, &mut RandomStream::from_seed(2));
        let est = mmse_from_observations(&real, &obs, cfg.p_pilot_w, noiseless)?;
        let mut worst: f64 = 0.0;
        for (a, b) in est.hhat_direct.iter().zip(&real.h_direct) {
            worst = worst.max((a - b).norm() / b.norm());
        }
        for (a, b) in est.hhat_cascaded.iter().zip(&real.h_cascaded) {
            worst = worst.max((a - b).norm() / b.norm());
        }

        // One direct link with fresh fading and pilot noise per repetition.
        let noise = cfg.noise_power_w();
        let beta = real.large.beta_direct[[0, 0]];
        let mut rng = RandomStream::from_seed(3);
        let reps = 100_000;
        let mut samples = Vec::with_capacity(reps);
        for _ in 0..reps {
            let mut nlos_direct = real.nlos_direct.clone();
            nlos_direct[[0, 0]] = complex_normal(&mut rng);
            let r = ChannelRealization::from_parts(real.large.clone(), nlos_direct, real.nlos_cascaded.clone())?;
            let mut obs = PilotNoise::empty(&r);
            obs.sum_direct[[0, 0]] = complex_normal(&mut rng) * noise.sqrt();
            obs.count = 1;
            let est = mmse_from_observations(&r, &obs, cfg.p_pilot_w, noise)?;
            let y = r.nlos_direct[[0, 0]] * (cfg.p_pilot_w * beta).sqrt() + obs.sum_direct[[0, 0]];
            samples.push((est.hhat_direct[[0, 0]] - r.h_direct[[0, 0]]) * y.conj());
        }
        let mean = samples.iter().sum::<Complex64>() / reps as f64;
        let var = samples.iter().map(|s| (s - mean).norm_sqr()).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        let z = mean.norm() / se;
        Ok((
            worst <= 1e-9 && z < 3.0,
            format!("noiseless max relative error {worst:.2e}; orthogonality |mean| = {z:.2} standard errors"),
        ))
    })
}

/// The quick suites.
pub fn run_all() -> Vec<CheckReport> {
    vec![
        association_oracle(),
        rate_oracle(),
        gradient_integrity(),
        td3_mechanics(1000),
        mmse_statistics(),
    ]
}
