//! Digital-twin environment.
//!
//! The twin answers every training step from stored channel estimates. The
//! true channels sit behind [`Hidden`] and are read only by physical steps and
//! by re-estimation after a physical interaction.

use std::cell::Cell;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::config::{SystemConfig, TruthModel};
use crate::error::{Error, Result};
use crate::metrics::{
    penalized_sum_rate, rate_report, sinr_from_effective, AssociationMatrix, RateReport, SignalChannels,
};
use crate::rng::{Purpose, RandomStream};
use crate::topology::{
    generate_topology, mmse_from_observations, ChannelEstimates, ChannelRealization, LargeScale, NetworkTopology,
    PilotNoise,
};

/// When the optimizer deploys its decision in the physical environment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum InteractionSchedule {
    EveryEpoch,
    EveryNEpochs(usize),
    Never,
}

impl InteractionSchedule {
    /// Whether the schedule calls for a physical interaction at the end of
    /// 1-based epoch `epoch`.
    pub fn fires(self, epoch: usize) -> bool {
        match self {
            InteractionSchedule::EveryEpoch => true,
            InteractionSchedule::EveryNEpochs(n) => epoch % n == 0,
            InteractionSchedule::Never => false,
        }
    }
}

impl fmt::Display for InteractionSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InteractionSchedule::EveryEpoch => f.write_str("every_epoch"),
            InteractionSchedule::EveryNEpochs(n) => write!(f, "every_{n}_epochs"),
            InteractionSchedule::Never => f.write_str("never"),
        }
    }
}

impl FromStr for InteractionSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::config(
                "training.schedule",
                format!("`{s}` is not one of every_epoch, every_<n>_epochs, never"),
            )
        };
        match s {
            "every_epoch" => Ok(InteractionSchedule::EveryEpoch),
            "never" => Ok(InteractionSchedule::Never),
            _ => {
                let n: usize = s
                    .strip_prefix("every_")
                    .and_then(|r| r.strip_suffix("_epochs"))
                    .and_then(|n| n.parse().ok())
                    .ok_or_else(bad)?;
                if n == 0 {
                    return Err(bad());
                }
                Ok(if n == 1 {
                    InteractionSchedule::EveryEpoch
                } else {
                    InteractionSchedule::EveryNEpochs(n)
                })
            }
        }
    }
}

impl TryFrom<String> for InteractionSchedule {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<InteractionSchedule> for String {
    fn from(s: InteractionSchedule) -> String {
        s.to_string()
    }
}

/// Wrapper that counts every read of its contents.
#[derive(Debug, Clone)]
pub struct Hidden<T> {
    pub(crate) value: T,
    reads: Cell<u64>,
}

impl<T> Hidden<T> {
    pub fn new(value: T) -> Self {
        Hidden {
            value,
            reads: Cell::new(0),
        }
    }

    pub fn read(&self) -> &T {
        self.reads.set(self.reads.get() + 1);
        &self.value
    }

    pub fn reads(&self) -> u64 {
        self.reads.get()
    }

    fn replace(&mut self, value: T) {
        self.value = value;
    }
}

/// State seen by the agents: last SINRs, powers and phases.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentState {
    pub alpha: Vec<f64>,
    pub p: Vec<f64>,
    pub phi: Vec<f64>,
}

impl AgentState {
    pub fn dim(&self) -> usize {
        self.alpha.len() + self.p.len() + self.phi.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepMode {
    Twin,
    Physical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub reward: f64,
    pub next_state: AgentState,
    pub report: RateReport,
    pub mode: StepMode,
}

#[derive(Debug, Clone)]
pub struct TwinEnvironment {
    pub(crate) config: SystemConfig,
    pub(crate) topology: NetworkTopology,
    pub(crate) truth: Hidden<ChannelRealization>,
    pub(crate) pilots: PilotNoise,
    pub(crate) estimates: ChannelEstimates,
    pub(crate) assoc: Option<AssociationMatrix>,
    pub(crate) schedule: InteractionSchedule,
    pub(crate) penalty_c: f64,
    pub(crate) noise_w: f64,
    pub(crate) pilot_rng: RandomStream,
    pub(crate) redraw_rng: RandomStream,
    /// A physical interaction happened since the last synchronization.
    pub(crate) pending_refresh: bool,
    pub(crate) twin_steps: u64,
    pub(crate) physical_steps: u64,
    pub(crate) refreshes: u64,
}

impl TwinEnvironment {
    /// Builds the environment for `cfg.seed`: topology, large-scale gains,
    /// fading and one round of pilot estimation. All draws come from
    /// seed-derived streams, so every method sees the same channels.
    pub fn new(cfg: &SystemConfig, schedule: InteractionSchedule, penalty_c: f64) -> Result<Self> {
        cfg.validate()?;
        let seed = cfg.seed;
        let topology = generate_topology(cfg, &mut RandomStream::new(seed, Purpose::Topology));
        let large = LargeScale::compute(&topology, cfg, &mut RandomStream::new(seed, Purpose::Shadowing))?;
        let truth = ChannelRealization::sample(
            large,
            &mut RandomStream::new(seed, Purpose::FadingDirect),
            &mut RandomStream::new(seed, Purpose::FadingCascaded),
        );
        Self::from_truth(cfg, topology, truth, schedule, penalty_c)
    }

    pub fn from_truth(
        cfg: &SystemConfig,
        topology: NetworkTopology,
        truth: ChannelRealization,
        schedule: InteractionSchedule,
        penalty_c: f64,
    ) -> Result<Self> {
        let noise_w = cfg.noise_power_w();
        let mut pilot_rng = RandomStream::new(cfg.seed, Purpose::PilotNoise);
        let mut pilots = PilotNoise::empty(&truth);
        pilots.observe(noise_w, &mut pilot_rng);
        let estimates = mmse_from_observations(&truth, &pilots, cfg.p_pilot_w, noise_w)?;
        Ok(TwinEnvironment {
            config: cfg.clone(),
            topology,
            truth: Hidden::new(truth),
            pilots,
            estimates,
            assoc: None,
            schedule,
            penalty_c,
            noise_w,
            pilot_rng,
            redraw_rng: RandomStream::new(cfg.seed, Purpose::Redraw),
            pending_refresh: false,
            twin_steps: 0,
            physical_steps: 0,
            refreshes: 0,
        })
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn topology(&self) -> &NetworkTopology {
        &self.topology
    }

    pub fn estimates(&self) -> &ChannelEstimates {
        &self.estimates
    }

    pub fn schedule(&self) -> InteractionSchedule {
        self.schedule
    }

    pub fn noise_w(&self) -> f64 {
        self.noise_w
    }

    pub fn association(&self) -> Option<&AssociationMatrix> {
        self.assoc.as_ref()
    }

    pub fn twin_steps(&self) -> u64 {
        self.twin_steps
    }

    pub fn physical_steps(&self) -> u64 {
        self.physical_steps
    }

    pub fn refreshes(&self) -> u64 {
        self.refreshes
    }

    pub fn truth_reads(&self) -> u64 {
        self.truth.reads()
    }

    pub fn num_ues(&self) -> usize {
        self.config.num_ues
    }

    pub fn num_aps(&self) -> usize {
        self.config.num_aps
    }

    pub fn num_elements(&self) -> usize {
        self.config.ris_elements()
    }

    /// Twin-mode rate report for an arbitrary association; not counted as a
    /// step. Used for swarm fitness and baseline searches.
    pub fn twin_report(&self, assoc: &AssociationMatrix, p: &[f64], phi: &[f64]) -> Result<RateReport> {
        rate_report(
            assoc,
            p,
            phi,
            SignalChannels::Estimates,
            &self.estimates,
            self.noise_w,
            self.config.r_min,
        )
    }

    /// Association fitness evaluated on the twin.
    pub fn fitness(&self, assoc: &AssociationMatrix, p: &[f64], phi: &[f64], penalty_u: f64) -> Result<f64> {
        Ok(penalized_sum_rate(&self.twin_report(assoc, p, phi)?, penalty_u))
    }

    /// Fitness of candidate associations under fixed `(p, phi)`, with the
    /// effective channels computed once.
    pub fn fitness_fn<'a>(
        &'a self,
        p: &'a [f64],
        phi: &[f64],
        penalty_u: f64,
    ) -> Result<impl Fn(&AssociationMatrix) -> Result<f64> + 'a> {
        let fhat = self.estimates.effective(phi)?;
        let (noise, r_min) = (self.noise_w, self.config.r_min);
        Ok(move |assoc: &AssociationMatrix| {
            let s = sinr_from_effective(assoc, p, &fhat, &fhat, noise)?;
            Ok(penalized_sum_rate(&RateReport::from_sinr(s, r_min), penalty_u))
        })
    }

    fn installed(&self) -> Result<&AssociationMatrix> {
        self.assoc.as_ref().ok_or(Error::NoAssociation)
    }

    fn outcome(&self, report: RateReport, p: &[f64], phi: &[f64], mode: StepMode) -> StepOutcome {
        StepOutcome {
            reward: penalized_sum_rate(&report, self.penalty_c),
            next_state: AgentState {
                alpha: report.sinr.clone(),
                p: p.to_vec(),
                phi: phi.to_vec(),
            },
            report,
            mode,
        }
    }

    /// Twin-mode evaluation of the installed association without counting a
    /// step, e.g. to build an episode's initial state.
    pub fn peek(&self, p: &[f64], phi: &[f64]) -> Result<StepOutcome> {
        let report = self.twin_report(self.installed()?, p, phi)?;
        Ok(self.outcome(report, p, phi, StepMode::Twin))
    }

    pub fn twin_step(&mut self, p: &[f64], phi: &[f64]) -> Result<StepOutcome> {
        let out = self.peek(p, phi)?;
        self.twin_steps += 1;
        Ok(out)
    }

    /// Deploys `(p, phi)` in the physical environment. The pilot exchange that
    /// accompanies the deployment is folded into the estimates at the next
    /// synchronization.
    pub fn physical_step(&mut self, p: &[f64], phi: &[f64]) -> Result<StepOutcome> {
        let assoc = self.installed()?.clone();
        let report = rate_report(
            &assoc,
            p,
            phi,
            SignalChannels::Truth(self.truth.read()),
            &self.estimates,
            self.noise_w,
            self.config.r_min,
        )?;
        self.physical_steps += 1;
        self.pending_refresh = true;
        Ok(self.outcome(report, p, phi, StepMode::Physical))
    }

    /// Installs the association for epoch `epoch` and refreshes the estimates
    /// if a physical interaction happened since the previous call. Returns
    /// whether the estimates were refreshed.
    pub fn sync_epoch(&mut self, _epoch: usize, assoc: AssociationMatrix) -> Result<bool> {
        assoc.check_feasible()?;
        if assoc.num_ues() != self.config.num_ues || assoc.num_aps() != self.config.num_aps {
            return Err(Error::shape(
                "epoch association",
                self.config.num_ues * self.config.num_aps,
                assoc.bits().len(),
            ));
        }
        self.assoc = Some(assoc);
        self.refresh_pending()
    }

    /// Folds a pending physical interaction into the estimates. Returns
    /// whether anything changed.
    pub fn refresh_pending(&mut self) -> Result<bool> {
        if !self.pending_refresh {
            return Ok(false);
        }
        self.pending_refresh = false;
        self.refresh()?;
        Ok(true)
    }

    /// Twin step under an explicit association instead of the installed one.
    pub fn twin_step_with(&mut self, assoc: &AssociationMatrix, p: &[f64], phi: &[f64]) -> Result<StepOutcome> {
        let report = self.twin_report(assoc, p, phi)?;
        self.twin_steps += 1;
        Ok(self.outcome(report, p, phi, StepMode::Twin))
    }

    fn refresh(&mut self) -> Result<()> {
        match self.config.truth_model {
            TruthModel::Static => {
                self.pilots.observe(self.noise_w, &mut self.pilot_rng);
            }
            TruthModel::RedrawOnInteraction => {
                let large = if self.config.redraw_topology_at_sync {
                    self.topology.redraw_ues(&self.config, &mut self.redraw_rng);
                    LargeScale::compute(&self.topology, &self.config, &mut self.redraw_rng)?
                } else {
                    self.truth.read().large.clone()
                };
                let mut fading_c = self.redraw_rng.fork();
                let truth = ChannelRealization::sample(large, &mut self.redraw_rng, &mut fading_c);
                self.truth.replace(truth);
                self.pilots = PilotNoise::empty(self.truth.read());
                self.pilots.observe(self.noise_w, &mut self.pilot_rng);
            }
        }
        self.estimates = mmse_from_observations(self.truth.read(), &self.pilots, self.config.p_pilot_w, self.noise_w)?;
        self.refreshes += 1;
        Ok(())
    }
}
