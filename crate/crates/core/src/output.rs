//! CSV curves, run manifests and run snapshots.
//!
//! `steps.csv` has one row per twin step. `episodes.csv` has one row per
//! episode (means over its steps, violations summed) and one row per physical
//! test with empty `episode` and `step`, where `reward_twin` is the epoch's
//! best twin reward and the remaining columns describe the physical outcome.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::config::ExperimentSpec;
use crate::error::{Error, Result};
use crate::orchestrator::{EpisodeSummary, EpochRecord, PhysicalTest, RunResult, StepRecord};
use crate::snapshot::{self, Snapshot};

pub const CSV_HEADER: [&str; 8] = [
    "seed",
    "epoch",
    "episode",
    "step",
    "reward_twin",
    "reward_phys",
    "sum_rate",
    "violations",
];

/// Nine significant digits, without trailing zeros; scientific notation
/// outside `[1e-5, 1e9)`.
pub fn fmt_sig9(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-5..9).contains(&exp) {
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{m}e{exp}");
    }
    let decimals = (8 - exp).max(0) as usize;
    let fixed = format!("{x:.decimals$}");
    if fixed.contains('.') {
        fixed.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        fixed
    }
}

fn row(seed: u64, epoch: usize, episode: Option<usize>, step: Option<usize>, twin: f64, phys: Option<f64>, rate: f64, viol: usize) -> [String; 8] {
    let opt = |v: Option<usize>| v.map_or(String::new(), |x| x.to_string());
    [
        seed.to_string(),
        epoch.to_string(),
        opt(episode),
        opt(step),
        fmt_sig9(twin),
        phys.map_or(String::new(), fmt_sig9),
        fmt_sig9(rate),
        viol.to_string(),
    ]
}

pub fn write_steps_csv<W: Write>(out: W, runs: &[(u64, &[StepRecord])]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for (seed, steps) in runs {
        for s in steps.iter() {
            w.write_record(row(*seed, s.epoch, Some(s.episode), Some(s.step), s.reward, None, s.sum_rate, s.violations))?;
        }
    }
    w.flush()?;
    Ok(())
}

/// The parts of an epoch that appear in `episodes.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochCurve {
    pub epoch: usize,
    pub r_opt: f64,
    pub episodes: Vec<EpisodeSummary>,
    pub physical: Option<PhysicalTest>,
}

impl From<&EpochRecord> for EpochCurve {
    fn from(e: &EpochRecord) -> Self {
        EpochCurve {
            epoch: e.epoch,
            r_opt: e.r_opt,
            episodes: e.episodes.clone(),
            physical: e.physical.clone(),
        }
    }
}

pub fn write_episodes_csv<W: Write>(out: W, runs: &[(u64, &[EpochCurve])]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for (seed, epochs) in runs {
        for e in epochs.iter() {
            for (i, ep) in e.episodes.iter().enumerate() {
                w.write_record(row(*seed, e.epoch, Some(i + 1), Some(ep.steps), ep.mean_reward, None, ep.mean_sum_rate, ep.violations))?;
            }
            if let Some(p) = &e.physical {
                w.write_record(row(*seed, e.epoch, None, None, e.r_opt, Some(p.reward), p.sum_rate, p.violations))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct EpochManifest<'a> {
    epoch: usize,
    association: Vec<Vec<u8>>,
    aua_fitness: Option<f64>,
    aua_initial_gbest: Option<f64>,
    r_opt: f64,
    p_opt: &'a [f64],
    phi_opt: &'a [f64],
    physical_reward: Option<f64>,
    physical_sum_rate: Option<f64>,
    refreshed: bool,
    twin_steps: u64,
    physical_steps: u64,
    wall_time_s: f64,
}

#[derive(Debug, Serialize)]
struct RunManifest<'a> {
    seed: u64,
    final_sum_rate: f64,
    twin_steps: u64,
    physical_steps: u64,
    epochs: Vec<EpochManifest<'a>>,
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    method: String,
    seeds: &'a [u64],
    /// The fully resolved spec, as TOML text.
    config: String,
    runs: Vec<RunManifest<'a>>,
}

fn epoch_manifest(e: &EpochRecord) -> EpochManifest<'_> {
    let (k, m) = (e.assoc.num_ues(), e.assoc.num_aps());
    EpochManifest {
        epoch: e.epoch,
        association: (0..k).map(|r| (0..m).map(|c| u8::from(e.assoc.get(r, c))).collect()).collect(),
        aua_fitness: e.aua_fitness,
        aua_initial_gbest: e.aua_initial_gbest,
        r_opt: e.r_opt,
        p_opt: &e.p_opt,
        phi_opt: &e.phi_opt,
        physical_reward: e.physical.as_ref().map(|p| p.reward),
        physical_sum_rate: e.physical.as_ref().map(|p| p.sum_rate),
        refreshed: e.refreshed,
        twin_steps: e.twin_steps,
        physical_steps: e.physical_steps,
        wall_time_s: e.wall_time_s,
    }
}

/// JSON manifest echoing the resolved configuration and per-epoch results.
/// Unlike the CSVs it contains wall-clock times.
pub fn manifest_json(spec: &ExperimentSpec, runs: &[RunResult]) -> String {
    let m = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        method: spec.method.to_string(),
        seeds: &spec.seeds,
        config: spec.to_toml(),
        runs: runs
            .iter()
            .map(|r| RunManifest {
                seed: r.seed,
                final_sum_rate: r.final_sum_rate(),
                twin_steps: r.env.twin_steps(),
                physical_steps: r.env.physical_steps(),
                epochs: r.epochs.iter().map(epoch_manifest).collect(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&m).expect("manifest serializes")
}

/// Run snapshot: spec, final environment, agent checkpoints and all curves.
pub fn run_snapshot(spec: &ExperimentSpec, run: &RunResult) -> Snapshot {
    let mut s = Snapshot::new();
    s.put_text("spec", &spec.to_toml());
    s.put_u64("seed", &[1], vec![run.seed]);
    snapshot::put_environment(&mut s, "env", &run.env);
    s.put_u64("agents", &[1], vec![run.agents.len() as u64]);
    for (i, a) in run.agents.iter().enumerate() {
        snapshot::put_agent(&mut s, &format!("agent{i}"), a);
    }
    let n = run.steps.len();
    s.put_u64(
        "steps.index",
        &[n, 4],
        run.steps
            .iter()
            .flat_map(|r| [r.epoch as u64, r.episode as u64, r.step as u64, r.violations as u64])
            .collect(),
    );
    s.put_f64(
        "steps.values",
        &[n, 2],
        run.steps.iter().flat_map(|r| [r.reward, r.sum_rate]).collect(),
    );
    let z = run.epochs.len();
    s.put_u64(
        "epochs.index",
        &[z, 4],
        run.epochs
            .iter()
            .flat_map(|e| [e.epoch as u64, e.episodes.len() as u64, u64::from(e.physical.is_some()), e.physical.as_ref().map_or(0, |p| p.violations as u64)])
            .collect(),
    );
    s.put_f64(
        "epochs.values",
        &[z, 3],
        run.epochs
            .iter()
            .flat_map(|e| {
                let p = e.physical.as_ref();
                [e.r_opt, p.map_or(0.0, |p| p.reward), p.map_or(0.0, |p| p.sum_rate)]
            })
            .collect(),
    );
    let eps: Vec<&EpisodeSummary> = run.epochs.iter().flat_map(|e| &e.episodes).collect();
    s.put_u64(
        "episodes.index",
        &[eps.len(), 2],
        eps.iter().flat_map(|e| [e.steps as u64, e.violations as u64]).collect(),
    );
    s.put_f64(
        "episodes.values",
        &[eps.len(), 2],
        eps.iter().flat_map(|e| [e.mean_reward, e.mean_sum_rate]).collect(),
    );
    s
}

/// Curves recovered from a run snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayedCurves {
    pub seed: u64,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochCurve>,
}

fn rows<'a, T>(data: &'a [T], dims: &[usize], width: usize, name: &str) -> Result<std::slice::Chunks<'a, T>> {
    if dims.len() != 2 || dims[1] != width {
        return Err(Error::Snapshot {
            line: 0,
            message: format!("`{name}` must be n×{width}"),
        });
    }
    Ok(data.chunks(width))
}

pub fn replay_curves(s: &Snapshot) -> Result<ReplayedCurves> {
    let [seed] = s.u64_fixed::<1>("seed")?;
    let (di, idx) = s.u64s("steps.index")?;
    let (dv, val) = s.f64s("steps.values")?;
    let steps = rows(idx, di, 4, "steps.index")?
        .zip(rows(val, dv, 2, "steps.values")?)
        .map(|(i, v)| StepRecord {
            epoch: i[0] as usize,
            episode: i[1] as usize,
            step: i[2] as usize,
            violations: i[3] as usize,
            reward: v[0],
            sum_rate: v[1],
        })
        .collect();
    let (pi, pidx) = s.u64s("episodes.index")?;
    let (pv, pval) = s.f64s("episodes.values")?;
    let mut episodes = rows(pidx, pi, 2, "episodes.index")?
        .zip(rows(pval, pv, 2, "episodes.values")?)
        .map(|(i, v)| EpisodeSummary {
            steps: i[0] as usize,
            violations: i[1] as usize,
            mean_reward: v[0],
            mean_sum_rate: v[1],
        });
    let (ei, eidx) = s.u64s("epochs.index")?;
    let (ev, evals) = s.f64s("epochs.values")?;
    let mut epochs = Vec::new();
    for (i, v) in rows(eidx, ei, 4, "epochs.index")?.zip(rows(evals, ev, 3, "epochs.values")?) {
        epochs.push(EpochCurve {
            epoch: i[0] as usize,
            r_opt: v[0],
            episodes: episodes.by_ref().take(i[1] as usize).collect(),
            physical: (i[2] == 1).then(|| PhysicalTest {
                reward: v[1],
                sum_rate: v[2],
                violations: i[3] as usize,
            }),
        });
    }
    Ok(ReplayedCurves { seed, steps, epochs })
}

/// Writes the CSVs of replayed runs, in the given order.
pub fn write_replayed_csvs(dir: &Path, runs: &[ReplayedCurves]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let steps: Vec<(u64, &[StepRecord])> = runs.iter().map(|r| (r.seed, r.steps.as_slice())).collect();
    write_steps_csv(std::fs::File::create(dir.join("steps.csv"))?, &steps)?;
    let epochs: Vec<(u64, &[EpochCurve])> = runs.iter().map(|r| (r.seed, r.epochs.as_slice())).collect();
    write_episodes_csv(std::fs::File::create(dir.join("episodes.csv"))?, &epochs)?;
    Ok(())
}

pub fn snapshot_name(seed: u64) -> String {
    format!("seed-{seed}.snap")
}

/// Writes `steps.csv`, `episodes.csv`, `manifest.json` and one snapshot per
/// seed into `dir`.
pub fn write_run_outputs(dir: &Path, spec: &ExperimentSpec, runs: &[RunResult]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let steps: Vec<(u64, &[StepRecord])> = runs.iter().map(|r| (r.seed, r.steps.as_slice())).collect();
    write_steps_csv(std::fs::File::create(dir.join("steps.csv"))?, &steps)?;
    let curves: Vec<Vec<EpochCurve>> = runs.iter().map(|r| r.epochs.iter().map(EpochCurve::from).collect()).collect();
    let epochs: Vec<(u64, &[EpochCurve])> = runs.iter().zip(&curves).map(|(r, c)| (r.seed, c.as_slice())).collect();
    write_episodes_csv(std::fs::File::create(dir.join("episodes.csv"))?, &epochs)?;
    std::fs::write(dir.join("manifest.json"), manifest_json(spec, runs))?;
    for r in runs {
        run_snapshot(spec, r).save(&dir.join(snapshot_name(r.seed)))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_significant_digits() {
        assert_eq!(fmt_sig9(0.0), "0");
        assert_eq!(fmt_sig9(1.0), "1");
        assert_eq!(fmt_sig9(-3.0), "-3");
        assert_eq!(fmt_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(fmt_sig9(12345.678912345), "12345.6789");
        assert_eq!(fmt_sig9(9.9999999999), "10");
        assert_eq!(fmt_sig9(123456789.4), "123456789");
        assert_eq!(fmt_sig9(1.5e-7), "1.5e-7");
        assert_eq!(fmt_sig9(2.0e12), "2e12");
        assert_eq!(fmt_sig9(0.000123456789123), "0.000123456789");
    }

    #[test]
    fn nine_digits_parse_back_within_half_ulp_of_the_ninth_digit() {
        let mut x = 1.234567891234e-4;
        for _ in 0..40 {
            let back: f64 = fmt_sig9(x).parse().unwrap();
            assert!(((back - x) / x).abs() <= 5e-9, "{x} -> {back}");
            x *= -7.3;
        }
    }

    #[test]
    fn episode_rows_include_physical_tests() {
        use crate::metrics::AssociationMatrix;
        let e = EpochRecord {
            epoch: 2,
            assoc: AssociationMatrix::from_assignment(1, &[0]).unwrap(),
            aua_fitness: None,
            aua_initial_gbest: None,
            r_opt: 4.5,
            p_opt: vec![0.1],
            phi_opt: vec![],
            physical: Some(PhysicalTest {
                reward: -3.0,
                sum_rate: 0.1,
                violations: 1,
            }),
            episodes: vec![EpisodeSummary {
                mean_reward: 2.25,
                mean_sum_rate: 2.5,
                violations: 0,
                steps: 3,
            }],
            refreshed: false,
            twin_steps: 3,
            physical_steps: 1,
            wall_time_s: 0.0,
        };
        let mut buf = Vec::new();
        write_episodes_csv(&mut buf, &[(7, &[EpochCurve::from(&e)][..])]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "seed,epoch,episode,step,reward_twin,reward_phys,sum_rate,violations\n7,2,1,3,2.25,,2.5,0\n7,2,,,4.5,-3,0.1,1\n"
        );
    }
}
