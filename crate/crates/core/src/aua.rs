//! AP-UE association by position-adaptive binary PSO.
//!
//! Positions are `K × M` binary matrices stored row-major. The position update
//! picks the highest-velocity row of every column, so each AP always serves
//! exactly one UE; all-zero rows are then repaired by moving an AP over from a
//! UE that has more than one.

use rand::Rng;

use crate::config::SwarmConfig;
use crate::error::{Error, Result};
use crate::metrics::AssociationMatrix;
use crate::rng::RandomStream;
use crate::twin::TwinEnvironment;

/// One velocity update with explicit uniforms, clamped to `[v_min, v_max]`.
#[allow(clippy::too_many_arguments)]
pub fn velocity_update(
    v: &mut [f64],
    x: &[u8],
    pbest: &[u8],
    gbest: &[u8],
    hyper: &SwarmConfig,
    u1: &[f64],
    u2: &[f64],
) {
    for d in 0..v.len() {
        let cognitive = hyper.c1 * u1[d] * (pbest[d] as f64 - x[d] as f64);
        let social = hyper.c2 * u2[d] * (gbest[d] as f64 - x[d] as f64);
        v[d] = (hyper.inertia * v[d] + cognitive + social).clamp(hyper.v_min, hyper.v_max);
    }
}

fn random_velocity_update(
    v: &mut [f64],
    x: &[u8],
    pbest: &[u8],
    gbest: &[u8],
    hyper: &SwarmConfig,
    rng: &mut RandomStream,
) {
    let u1: Vec<f64> = (0..v.len()).map(|_| rng.gen()).collect();
    let u2: Vec<f64> = (0..v.len()).map(|_| rng.gen()).collect();
    velocity_update(v, x, pbest, gbest, hyper, &u1, &u2);
}

/// Per-column argmax of a `K × M` velocity matrix; ties go to the lowest row.
pub fn position_update(k: usize, m: usize, v: &[f64]) -> AssociationMatrix {
    let serving: Vec<usize> = (0..m)
        .map(|col| {
            let mut best = 0;
            for row in 1..k {
                if v[row * m + col] > v[best * m + col] {
                    best = row;
                }
            }
            best
        })
        .collect();
    AssociationMatrix::from_assignment(k, &serving).expect("rows index within K")
}

/// Repairs all-zero rows in ascending order. For each one, columns are tried
/// by descending velocity of that row and the first whose current owner keeps
/// at least one AP is moved over.
pub fn rectify_infeasible_rows(x: &mut AssociationMatrix, v: &[f64]) -> Result<()> {
    let (k, m) = (x.num_ues(), x.num_aps());
    if m < k {
        return Err(Error::InfeasibleAssociation(format!("{k} UEs cannot be covered by {m} APs")));
    }
    for row in 0..k {
        if x.row_sum(row) > 0 {
            continue;
        }
        let mut cols: Vec<usize> = (0..m).collect();
        cols.sort_by(|&a, &b| v[row * m + b].total_cmp(&v[row * m + a]));
        let donor = cols.into_iter().find_map(|col| {
            let owner = (0..k).find(|&r| x.get(r, col))?;
            (x.row_sum(owner) >= 2).then_some((owner, col))
        });
        // With K ≤ M and every column owned, an all-zero row implies some
        // other row owns two or more columns.
        let (owner, col) = donor.ok_or_else(|| {
            Error::InfeasibleAssociation(format!("no donor column for UE {row} in {x}"))
        })?;
        x.set(owner, col, false);
        x.set(row, col, true);
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Particle {
    pub x: AssociationMatrix,
    pub v: Vec<f64>,
    pub pbest: AssociationMatrix,
    pub pbest_fit: f64,
}

#[derive(Debug, Clone)]
pub struct AuaOutcome {
    pub assoc: AssociationMatrix,
    pub fitness: f64,
    /// Global best fitness before any particle was evaluated (the warm start,
    /// or negative infinity).
    pub initial_gbest_fit: f64,
    /// Global best fitness after initialization and after each iteration.
    pub gbest_history: Vec<f64>,
    /// Whether every particle was feasible at every iteration.
    pub always_feasible: bool,
    pub evaluations: usize,
}

/// Position-adaptive BPSO over an arbitrary fitness.
pub fn pabpso<F>(
    k: usize,
    m: usize,
    hyper: &SwarmConfig,
    rng: &mut RandomStream,
    warm: Option<(AssociationMatrix, f64)>,
    mut fitness: F,
) -> Result<AuaOutcome>
where
    F: FnMut(&AssociationMatrix) -> Result<f64>,
{
    let d = k * m;
    let mut evaluations = 0;
    let mut always_feasible = true;
    let mut particles = Vec::with_capacity(hyper.particles);
    for _ in 0..hyper.particles {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(hyper.v_min..=hyper.v_max)).collect();
        let mut x = position_update(k, m, &v);
        rectify_infeasible_rows(&mut x, &v)?;
        always_feasible &= x.is_feasible();
        let fit = fitness(&x)?;
        evaluations += 1;
        particles.push(Particle {
            pbest: x.clone(),
            x,
            v,
            pbest_fit: fit,
        });
    }

    let initial_gbest_fit = warm.as_ref().map_or(f64::NEG_INFINITY, |w| w.1);
    let (mut gbest, mut gbest_fit) = match warm {
        Some((g, f)) => {
            g.check_feasible()?;
            (g, f)
        }
        None => (particles[0].pbest.clone(), f64::NEG_INFINITY),
    };
    let update_gbest = |particles: &[Particle], gbest: &mut AssociationMatrix, gbest_fit: &mut f64| {
        for p in particles {
            if p.pbest_fit > *gbest_fit {
                *gbest_fit = p.pbest_fit;
                *gbest = p.pbest.clone();
            }
        }
    };
    update_gbest(&particles, &mut gbest, &mut gbest_fit);
    let mut gbest_history = vec![gbest_fit];

    for _ in 0..hyper.iterations {
        for p in particles.iter_mut() {
            random_velocity_update(&mut p.v, p.x.bits(), p.pbest.bits(), gbest.bits(), hyper, rng);
            let mut x = position_update(k, m, &p.v);
            rectify_infeasible_rows(&mut x, &p.v)?;
            always_feasible &= x.is_feasible();
            let fit = fitness(&x)?;
            evaluations += 1;
            if fit > p.pbest_fit {
                p.pbest_fit = fit;
                p.pbest = x.clone();
            }
            p.x = x;
        }
        update_gbest(&particles, &mut gbest, &mut gbest_fit);
        gbest_history.push(gbest_fit);
    }
    Ok(AuaOutcome {
        assoc: gbest,
        fitness: gbest_fit,
        initial_gbest_fit,
        gbest_history,
        always_feasible,
        evaluations,
    })
}

/// Association for fixed `(p, phi)`, evaluated on the twin.
pub fn solve_aua(
    env: &TwinEnvironment,
    p: &[f64],
    phi: &[f64],
    hyper: &SwarmConfig,
    rng: &mut RandomStream,
    warm: Option<(AssociationMatrix, f64)>,
) -> Result<AuaOutcome> {
    let fitness = env.fitness_fn(p, phi, hyper.penalty_u)?;
    pabpso(env.num_ues(), env.num_aps(), hyper, rng, warm, fitness)
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// Bit is set with probability `sigmoid(v)`.
pub fn sigmoid_position(v: &[f64], rng: &mut RandomStream) -> Vec<u8> {
    v.iter().map(|&vd| (rng.gen::<f64>() < sigmoid(vd)) as u8).collect()
}

/// Makes an arbitrary binary matrix feasible: every column keeps only its
/// highest-velocity one (or the argmax row if it has none), then empty rows
/// are rectified.
pub fn repair(k: usize, m: usize, bits: &[u8], v: &[f64]) -> Result<AssociationMatrix> {
    let serving: Vec<usize> = (0..m)
        .map(|col| {
            let rows: Vec<usize> = (0..k).filter(|&r| bits[r * m + col] == 1).collect();
            let pool = if rows.is_empty() { (0..k).collect() } else { rows };
            let mut best = pool[0];
            for &r in &pool[1..] {
                if v[r * m + col] > v[best * m + col] {
                    best = r;
                }
            }
            best
        })
        .collect();
    let mut x = AssociationMatrix::from_assignment(k, &serving)?;
    rectify_infeasible_rows(&mut x, v)?;
    Ok(x)
}

/// Standard sigmoid BPSO. Infeasible particles score `K · A_u`; the final
/// global best is repaired once if needed.
pub fn bpso<F>(
    k: usize,
    m: usize,
    hyper: &SwarmConfig,
    rng: &mut RandomStream,
    warm: Option<(AssociationMatrix, f64)>,
    mut fitness: F,
) -> Result<AuaOutcome>
where
    F: FnMut(&AssociationMatrix) -> Result<f64>,
{
    let d = k * m;
    let infeasible_fit = k as f64 * hyper.penalty_u;
    let mut evaluations = 0;
    let mut always_feasible = true;
    let mut score = |bits: &[u8], always_feasible: &mut bool, evaluations: &mut usize| -> Result<f64> {
        let x = AssociationMatrix::from_bits(k, m, bits.to_vec())?;
        if x.is_feasible() {
            *evaluations += 1;
            fitness(&x)
        } else {
            *always_feasible = false;
            Ok(infeasible_fit)
        }
    };

    struct Bp {
        x: Vec<u8>,
        v: Vec<f64>,
        pbest: Vec<u8>,
        pbest_fit: f64,
        pbest_v: Vec<f64>,
    }
    let mut particles = Vec::with_capacity(hyper.particles);
    for _ in 0..hyper.particles {
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(hyper.v_min..=hyper.v_max)).collect();
        let x = sigmoid_position(&v, rng);
        let fit = score(&x, &mut always_feasible, &mut evaluations)?;
        particles.push(Bp {
            pbest: x.clone(),
            pbest_v: v.clone(),
            x,
            v,
            pbest_fit: fit,
        });
    }
    let initial_gbest_fit = warm.as_ref().map_or(f64::NEG_INFINITY, |w| w.1);
    let (mut gbest, mut gbest_fit, mut gbest_v) = match warm {
        Some((g, f)) => (g.bits().to_vec(), f, vec![0.0; d]),
        None => (particles[0].pbest.clone(), f64::NEG_INFINITY, particles[0].pbest_v.clone()),
    };
    let refresh = |particles: &[Bp], g: &mut Vec<u8>, gf: &mut f64, gv: &mut Vec<f64>| {
        for p in particles {
            if p.pbest_fit > *gf {
                *gf = p.pbest_fit;
                *g = p.pbest.clone();
                *gv = p.pbest_v.clone();
            }
        }
    };
    refresh(&particles, &mut gbest, &mut gbest_fit, &mut gbest_v);
    let mut gbest_history = vec![gbest_fit];
    for _ in 0..hyper.iterations {
        for p in particles.iter_mut() {
            random_velocity_update(&mut p.v, &p.x, &p.pbest, &gbest, hyper, rng);
            p.x = sigmoid_position(&p.v, rng);
            let fit = score(&p.x, &mut always_feasible, &mut evaluations)?;
            if fit > p.pbest_fit {
                p.pbest_fit = fit;
                p.pbest = p.x.clone();
                p.pbest_v = p.v.clone();
            }
        }
        refresh(&particles, &mut gbest, &mut gbest_fit, &mut gbest_v);
        gbest_history.push(gbest_fit);
    }

    let candidate = AssociationMatrix::from_bits(k, m, gbest.clone())?;
    let (assoc, fit) = if candidate.is_feasible() {
        (candidate, gbest_fit)
    } else {
        let fixed = repair(k, m, &gbest, &gbest_v)?;
        let f = fitness(&fixed)?;
        evaluations += 1;
        (fixed, f)
    };
    Ok(AuaOutcome {
        assoc,
        fitness: fit,
        initial_gbest_fit,
        gbest_history,
        always_feasible,
        evaluations,
    })
}

pub fn bpso_baseline(
    env: &TwinEnvironment,
    p: &[f64],
    phi: &[f64],
    hyper: &SwarmConfig,
    rng: &mut RandomStream,
    warm: Option<(AssociationMatrix, f64)>,
) -> Result<AuaOutcome> {
    let fitness = env.fitness_fn(p, phi, hyper.penalty_u)?;
    bpso(env.num_ues(), env.num_aps(), hyper, rng, warm, fitness)
}

/// Number of column assignments the exhaustive search may enumerate.
const MAX_KM: usize = 20;

/// Every feasible association in lexicographic order of the row-major bits.
pub fn all_feasible(k: usize, m: usize) -> Result<Vec<AssociationMatrix>> {
    if k * m > MAX_KM {
        return Err(Error::TooLarge(format!("K·M = {} exceeds {MAX_KM}", k * m)));
    }
    let total = (k as u64).checked_pow(m as u32).unwrap_or(u64::MAX);
    let mut out = Vec::new();
    let mut serving = vec![0usize; m];
    for code in 0..total {
        let mut c = code;
        for s in serving.iter_mut().rev() {
            *s = (c % k as u64) as usize;
            c /= k as u64;
        }
        let a = AssociationMatrix::from_assignment(k, &serving)?;
        if a.is_feasible() {
            out.push(a);
        }
    }
    out.sort();
    Ok(out)
}

/// Exhaustive optimum over a fitness; ties go to the lexicographically
/// smallest matrix.
pub fn brute_force<F>(k: usize, m: usize, mut fitness: F) -> Result<(AssociationMatrix, f64)>
where
    F: FnMut(&AssociationMatrix) -> Result<f64>,
{
    let mut best: Option<(AssociationMatrix, f64)> = None;
    for a in all_feasible(k, m)? {
        let f = fitness(&a)?;
        if best.as_ref().map_or(true, |b| f > b.1) {
            best = Some((a, f));
        }
    }
    best.ok_or_else(|| Error::InfeasibleAssociation(format!("no feasible association for K={k}, M={m}")))
}

pub fn brute_force_aua(env: &TwinEnvironment, p: &[f64], phi: &[f64], penalty_u: f64) -> Result<(AssociationMatrix, f64)> {
    let fitness = env.fitness_fn(p, phi, penalty_u)?;
    brute_force(env.num_ues(), env.num_aps(), fitness)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;
    use crate::twin::InteractionSchedule;

    fn hyper() -> SwarmConfig {
        Preset::Desk.swarm()
    }

    fn m(k: usize, mm: usize, rows: &[&[u8]]) -> AssociationMatrix {
        AssociationMatrix::from_bits(k, mm, rows.concat()).unwrap()
    }

    #[test]
    fn velocity_update_examples() {
        let mut h = hyper();
        let mut v = vec![3.0, -2.0];
        velocity_update(&mut v, &[1, 0], &[1, 0], &[1, 0], &h, &[0.3, 0.9], &[0.2, 0.4]);
        assert_eq!(v, vec![1.5, -1.0]);
        h.inertia = 0.0;
        let mut v = vec![7.0];
        velocity_update(&mut v, &[0], &[1], &[1], &h, &[1.0], &[1.0]);
        assert_eq!(v, vec![4.0]);
        let mut v = vec![9.0];
        h.inertia = 1.0;
        velocity_update(&mut v, &[0], &[1], &[1], &h, &[1.0], &[1.0]);
        assert_eq!(v, vec![10.0]);
    }

    #[test]
    fn velocity_update_matches_scalar_transcription() {
        let h = hyper();
        let mut rng = RandomStream::from_seed(3);
        for _ in 0..200 {
            let d = 12;
            let v0: Vec<f64> = (0..d).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let bits = |rng: &mut RandomStream| (0..d).map(|_| rng.gen_range(0..2u8)).collect::<Vec<_>>();
            let (x, pb, gb) = (bits(&mut rng), bits(&mut rng), bits(&mut rng));
            let u1: Vec<f64> = (0..d).map(|_| rng.gen()).collect();
            let u2: Vec<f64> = (0..d).map(|_| rng.gen()).collect();
            let mut v = v0.clone();
            velocity_update(&mut v, &x, &pb, &gb, &h, &u1, &u2);
            for i in 0..d {
                let raw = 0.5 * v0[i] + 2.0 * u1[i] * (pb[i] as f64 - x[i] as f64) + 2.0 * u2[i] * (gb[i] as f64 - x[i] as f64);
                let want = if raw > 10.0 { 10.0 } else if raw < -10.0 { -10.0 } else { raw };
                assert_eq!(v[i], want);
            }
        }
    }

    #[test]
    fn position_update_examples() {
        assert_eq!(position_update(2, 2, &[3.0, 1.0, 2.0, 5.0]), m(2, 2, &[&[1, 0], &[0, 1]]));
        assert_eq!(position_update(3, 1, &[1.0, 1.0, 1.0]), m(3, 1, &[&[1], &[0], &[0]]));
        let mut rng = RandomStream::from_seed(1);
        for _ in 0..50 {
            let v: Vec<f64> = (0..24).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let x = position_update(4, 6, &v);
            for col in 0..6 {
                let mut arg = 0;
                let mut best = f64::NEG_INFINITY;
                for row in 0..4 {
                    if v[row * 6 + col] > best {
                        best = v[row * 6 + col];
                        arg = row;
                    }
                }
                for row in 0..4 {
                    assert_eq!(x.get(row, col), row == arg);
                }
            }
        }
    }

    #[test]
    fn rectification_trace() {
        let mut x = m(3, 3, &[&[1, 1, 0], &[0, 0, 1], &[0, 0, 0]]);
        let v = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 5.0, 3.0];
        rectify_infeasible_rows(&mut x, &v).unwrap();
        assert_eq!(x, m(3, 3, &[&[1, 0, 0], &[0, 0, 1], &[0, 1, 0]]));

        // Column 2 ranks first but its owner has only one AP, so column 1
        // (next by velocity) is taken instead.
        let mut x = m(3, 3, &[&[1, 1, 0], &[0, 0, 1], &[0, 0, 0]]);
        let v = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 3.0, 5.0];
        rectify_infeasible_rows(&mut x, &v).unwrap();
        assert_eq!(x, m(3, 3, &[&[1, 0, 0], &[0, 0, 1], &[0, 1, 0]]));

        let mut ok = m(2, 2, &[&[1, 0], &[0, 1]]);
        rectify_infeasible_rows(&mut ok, &[0.0; 4]).unwrap();
        assert_eq!(ok, m(2, 2, &[&[1, 0], &[0, 1]]));

        let mut impossible = AssociationMatrix::from_bits(3, 2, vec![1, 1, 0, 0, 0, 0]).unwrap();
        assert!(rectify_infeasible_rows(&mut impossible, &[0.0; 6]).is_err());
    }

    #[test]
    fn rectification_exhaustive_3x3() {
        // Every column assignment of a 3x3 matrix under every velocity
        // ordering produced by a few random fields.
        let mut rng = RandomStream::from_seed(5);
        for code in 0..27usize {
            let serving = [code % 3, (code / 3) % 3, code / 9];
            for _ in 0..20 {
                let v: Vec<f64> = (0..9).map(|_| rng.gen_range(-10.0..10.0)).collect();
                let before = AssociationMatrix::from_assignment(3, &serving).unwrap();
                let mut x = before.clone();
                rectify_infeasible_rows(&mut x, &v).unwrap();
                assert!(x.is_feasible(), "{before} -> {x}");
                if before.is_feasible() {
                    assert_eq!(x, before);
                }
                for col in 0..3 {
                    assert_eq!(x.col_sum(col), 1);
                }
            }
        }
    }

    #[test]
    fn brute_force_counts() {
        assert_eq!(all_feasible(1, 1).unwrap().len(), 1);
        assert_eq!(all_feasible(2, 2).unwrap().len(), 2);
        assert_eq!(all_feasible(2, 3).unwrap().len(), 6);
        assert_eq!(all_feasible(3, 4).unwrap().len(), 36);
        assert!(all_feasible(5, 5).is_err());
        let (a, _) = brute_force(1, 1, |_| Ok(1.0)).unwrap();
        assert_eq!(a, m(1, 1, &[&[1]]));
        // All ties: lexicographically smallest bits.
        let (a, _) = brute_force(2, 2, |_| Ok(0.0)).unwrap();
        assert_eq!(a, m(2, 2, &[&[0, 1], &[1, 0]]));
    }

    fn small_env(seed: u64) -> TwinEnvironment {
        let mut cfg = Preset::Desk.system();
        cfg.num_ues = 2;
        cfg.num_aps = 3;
        cfg.seed = seed;
        TwinEnvironment::new(&cfg, InteractionSchedule::EveryEpoch, -3.0).unwrap()
    }

    #[test]
    fn single_ue_is_trivial() {
        let mut cfg = Preset::Desk.system();
        cfg.num_ues = 1;
        let env = TwinEnvironment::new(&cfg, InteractionSchedule::Never, -3.0).unwrap();
        let mut h = hyper();
        h.iterations = 1;
        let out = solve_aua(&env, &[0.2], &[0.0; 10], &h, &mut RandomStream::from_seed(1), None).unwrap();
        assert_eq!(out.assoc, m(1, 4, &[&[1, 1, 1, 1]]));
    }

    #[test]
    fn fitness_of_all_feasible_matches_direct_evaluation() {
        let env = small_env(2);
        let (p, phi) = ([0.3, 0.2], [1.0; 10]);
        let f = env.fitness_fn(&p, &phi, -3.0).unwrap();
        let all = all_feasible(2, 3).unwrap();
        assert_eq!(all.len(), 6);
        for a in all {
            let r = env.twin_report(&a, &p, &phi).unwrap();
            let want = if r.violators.is_empty() { r.sum_rate } else { -3.0 * r.violators.len() as f64 };
            assert_eq!(f(&a).unwrap(), want);
        }
    }

    #[test]
    fn pabpso_finds_brute_force_optimum() {
        let mut hits = 0;
        for seed in 0..20 {
            let env = small_env(seed);
            let (p, phi) = ([0.4, 0.4], [0.0; 10]);
            let (best, best_fit) = brute_force_aua(&env, &p, &phi, -3.0).unwrap();
            let out = solve_aua(&env, &p, &phi, &hyper(), &mut RandomStream::from_seed(seed), None).unwrap();
            assert!(out.always_feasible);
            assert!(out.gbest_history.windows(2).all(|w| w[1] >= w[0]));
            if out.assoc == best || out.fitness == best_fit {
                hits += 1;
            }
        }
        assert!(hits >= 19, "{hits}/20");
    }

    #[test]
    fn warm_start_sets_initial_gbest() {
        let env = small_env(1);
        let warm = m(2, 3, &[&[1, 1, 0], &[0, 0, 1]]);
        let out = solve_aua(&env, &[0.4, 0.4], &[0.0; 10], &hyper(), &mut RandomStream::from_seed(1), Some((warm.clone(), 1e9)))
            .unwrap();
        assert_eq!(out.initial_gbest_fit, 1e9);
        assert_eq!(out.assoc, warm);
    }

    #[test]
    fn sigmoid_bits() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(10.0) > 0.999);
        let mut rng = RandomStream::from_seed(2);
        let ones: usize = (0..10_000).map(|_| sigmoid_position(&[0.0], &mut rng)[0] as usize).sum();
        assert!((ones as f64 / 10_000.0 - 0.5).abs() < 0.02);
    }

    #[test]
    fn bpso_returns_feasible_and_does_not_beat_pabpso_on_average() {
        let (mut sum_b, mut sum_p) = (0.0, 0.0);
        let mut h = hyper();
        h.particles = 10;
        h.iterations = 5;
        for seed in 0..20 {
            let env = small_env(seed);
            let (p, phi) = ([0.4, 0.4], [0.0; 10]);
            let b = bpso_baseline(&env, &p, &phi, &h, &mut RandomStream::from_seed(seed), None).unwrap();
            let pa = solve_aua(&env, &p, &phi, &h, &mut RandomStream::from_seed(seed), None).unwrap();
            assert!(b.assoc.is_feasible());
            sum_b += b.fitness;
            sum_p += pa.fitness;
        }
        assert!(sum_b <= sum_p, "{sum_b} > {sum_p}");
    }

    proptest::proptest! {
        #[test]
        fn pabpso_particles_stay_feasible(seed in 0u64..200, k in 1usize..4, extra in 0usize..3) {
            let mm = k + extra;
            let mut h = hyper();
            h.particles = 8;
            h.iterations = 5;
            let mut rng = RandomStream::from_seed(seed);
            let weights: Vec<f64> = (0..k * mm).map(|_| rng.gen()).collect();
            let out = pabpso(k, mm, &h, &mut rng, None, |a| {
                assert!(a.is_feasible());
                Ok(a.bits().iter().zip(&weights).map(|(&b, w)| b as f64 * w).sum())
            })
            .unwrap();
            proptest::prop_assert!(out.always_feasible);
            proptest::prop_assert!(out.gbest_history.windows(2).all(|w| w[1] >= w[0]));
        }

        #[test]
        fn repair_always_feasible(seed in 0u64..500) {
            let mut rng = RandomStream::from_seed(seed);
            let bits: Vec<u8> = (0..12).map(|_| rng.gen_range(0..2u8)).collect();
            let v: Vec<f64> = (0..12).map(|_| rng.gen_range(-10.0..10.0)).collect();
            proptest::prop_assert!(repair(3, 4, &bits, &v).unwrap().is_feasible());
        }
    }
}
