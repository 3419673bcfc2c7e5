//! Scenario and hyper-parameter configuration.
//!
//! Spec files are TOML. A spec names a `preset` that supplies every value, and
//! any key present in the file overrides the preset. Unknown keys are rejected
//! with their table path, and type errors carry the TOML line and column.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::twin::InteractionSchedule;

/// How the configured noise figure is turned into a per-AP noise power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    /// `noise_dbm` is a spectral density in dBm/Hz, integrated over `bw_hz`.
    PerHz,
    /// `noise_dbm` is the total noise power in dBm.
    Total,
}

/// Large-scale gain model for the per-element RIS-cascaded links.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CascadeModel {
    /// Product of the AP-RIS and RIS-UE three-slope gains.
    SegmentProduct,
    /// Three-slope gain of the unfolded AP-RIS-UE path length.
    UnfoldedPath,
}

/// What the physical channel does between digital-twin synchronizations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TruthModel {
    /// Small-scale fading is fixed for the run; every interaction adds one
    /// pilot observation and the estimates are re-derived from all of them.
    Static,
    /// Small-scale fading is redrawn at every synchronization that follows a
    /// physical interaction and the estimates are re-derived from one fresh
    /// observation.
    RedrawOnInteraction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub num_ues: usize,
    pub num_aps: usize,
    pub num_ris: usize,
    pub elements_per_ris: usize,
    pub radius_m: f64,
    pub h_ap_m: f64,
    pub h_ue_m: f64,
    pub h_ris_m: f64,
    pub fc_hz: f64,
    pub bw_hz: f64,
    pub noise_dbm: f64,
    pub noise_mode: NoiseMode,
    pub sigma_sh_db: f64,
    pub p_max_w: f64,
    /// Minimum per-UE rate in bit/s/Hz.
    pub r_min: f64,
    pub p_pilot_w: f64,
    pub rician_k_direct: f64,
    pub rician_k_ris: f64,
    pub d0_m: f64,
    pub d1_m: f64,
    pub min_distance_m: f64,
    pub cascade_model: CascadeModel,
    pub truth_model: TruthModel,
    pub redraw_topology_at_sync: bool,
    /// Recorded for completeness; no implemented formula uses them.
    pub coherence_symbols: u32,
    pub pilot_symbols: u32,
    pub seed: u64,
}

impl SystemConfig {
    pub fn ris_elements(&self) -> usize {
        self.num_ris * self.elements_per_ris
    }

    pub fn wavelength_m(&self) -> f64 {
        299_792_458.0 / self.fc_hz
    }

    /// Per-AP noise power in watts.
    pub fn noise_power_w(&self) -> f64 {
        let dbm = match self.noise_mode {
            NoiseMode::PerHz => self.noise_dbm + 10.0 * self.bw_hz.log10(),
            NoiseMode::Total => self.noise_dbm,
        };
        10f64.powf((dbm - 30.0) / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_ues == 0 {
            return Err(Error::config("num_ues", "must be at least 1"));
        }
        if self.num_aps == 0 {
            return Err(Error::config("num_aps", "must be at least 1"));
        }
        if self.num_ues > self.num_aps {
            return Err(Error::config(
                "num_ues",
                format!(
                    "K = {} exceeds M = {}; every UE needs its own AP",
                    self.num_ues, self.num_aps
                ),
            ));
        }
        let positive = [
            ("radius_m", self.radius_m),
            ("h_ap_m", self.h_ap_m),
            ("h_ue_m", self.h_ue_m),
            ("h_ris_m", self.h_ris_m),
            ("fc_hz", self.fc_hz),
            ("bw_hz", self.bw_hz),
            ("p_max_w", self.p_max_w),
            ("d0_m", self.d0_m),
            ("d1_m", self.d1_m),
            ("min_distance_m", self.min_distance_m),
        ];
        for (field, value) in positive {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::config(field, format!("must be > 0, got {value}")));
            }
        }
        let non_negative = [
            ("sigma_sh_db", self.sigma_sh_db),
            ("r_min", self.r_min),
            ("p_pilot_w", self.p_pilot_w),
            ("rician_k_direct", self.rician_k_direct),
            ("rician_k_ris", self.rician_k_ris),
        ];
        for (field, value) in non_negative {
            if !(value.is_finite() && value >= 0.0) {
                return Err(Error::config(field, format!("must be >= 0, got {value}")));
            }
        }
        if self.d1_m <= self.d0_m {
            return Err(Error::config("d1_m", "must exceed d0_m"));
        }
        if !self.noise_dbm.is_finite() {
            return Err(Error::config("noise_dbm", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SwarmConfig {
    pub particles: usize,
    pub iterations: usize,
    pub inertia: f64,
    pub c1: f64,
    pub c2: f64,
    pub v_min: f64,
    pub v_max: f64,
    /// Per-violator fitness penalty, negative.
    pub penalty_u: f64,
}

impl SwarmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(Error::config("swarm.particles", "must be at least 1"));
        }
        if self.iterations == 0 {
            return Err(Error::config("swarm.iterations", "must be at least 1"));
        }
        if !(self.v_min < self.v_max) {
            return Err(Error::config("swarm.v_min", "must be below v_max"));
        }
        if !(self.penalty_u < 0.0) {
            return Err(Error::config("swarm.penalty_u", "must be negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub gamma: f64,
    /// Soft-update rate of the target networks.
    pub chi: f64,
    pub actor_delay: u64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Standard deviation of the target-policy smoothing noise.
    pub target_noise_std: f64,
    pub target_noise_clip: f64,
    pub explore_prob: f64,
    pub explore_std: f64,
    /// Multiplicative decay of `explore_std` per episode.
    pub explore_decay: f64,
    /// Per-violator reward penalty, negative.
    pub penalty_c: f64,
    /// Max-abs state normalization; `false` feeds the raw state.
    pub normalize_state: bool,
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(Error::config("agent.hidden", "layer widths must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::config("agent.gamma", "must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.chi) {
            return Err(Error::config("agent.chi", "must lie in [0, 1]"));
        }
        if self.actor_delay == 0 {
            return Err(Error::config("agent.actor_delay", "must be at least 1"));
        }
        if self.batch_size == 0 || self.batch_size > self.buffer_capacity {
            return Err(Error::config(
                "agent.batch_size",
                "must be >= 1 and no larger than buffer_capacity",
            ));
        }
        if !(0.0..=1.0).contains(&self.explore_prob) {
            return Err(Error::config("agent.explore_prob", "must lie in [0, 1]"));
        }
        if self.lr_actor < 0.0 || self.lr_critic < 0.0 {
            return Err(Error::config("agent.lr_actor", "learning rates must be >= 0"));
        }
        if !(self.penalty_c < 0.0) {
            return Err(Error::config("agent.penalty_c", "must be negative"));
        }
        if self.target_noise_std < 0.0 || self.target_noise_clip < 0.0 || self.explore_std < 0.0 {
            return Err(Error::config("agent.target_noise_std", "noise scales must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub episodes: usize,
    pub steps: usize,
    pub schedule: InteractionSchedule,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        for (field, v) in [
            ("training.epochs", self.epochs),
            ("training.episodes", self.episodes),
            ("training.steps", self.steps),
        ] {
            if v == 0 {
                return Err(Error::config(field, "must be at least 1"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Small scenario and budget that keeps a full run in the minutes range.
    Desk,
    /// Full-scale scenario and training budget.
    Paper,
}

impl Preset {
    pub fn system(self) -> SystemConfig {
        SystemConfig {
            num_ues: 3,
            num_aps: 4,
            num_ris: 2,
            elements_per_ris: 5,
            radius_m: 100.0,
            h_ap_m: 15.0,
            h_ue_m: 1.5,
            h_ris_m: 20.0,
            fc_hz: 1.9e9,
            bw_hz: 20e6,
            noise_dbm: -106.0,
            noise_mode: NoiseMode::Total,
            sigma_sh_db: 8.0,
            p_max_w: 0.4,
            r_min: 0.2,
            p_pilot_w: 0.1,
            rician_k_direct: 1.0,
            rician_k_ris: 10.0,
            d0_m: 10.0,
            d1_m: 50.0,
            min_distance_m: 1.0,
            cascade_model: CascadeModel::UnfoldedPath,
            truth_model: TruthModel::Static,
            redraw_topology_at_sync: false,
            coherence_symbols: 200,
            pilot_symbols: 8,
            seed: 1,
        }
    }

    pub fn swarm(self) -> SwarmConfig {
        let (particles, iterations) = match self {
            Preset::Desk => (50, 20),
            Preset::Paper => (200, 80),
        };
        SwarmConfig {
            particles,
            iterations,
            inertia: 0.5,
            c1: 2.0,
            c2: 2.0,
            v_min: -10.0,
            v_max: 10.0,
            penalty_u: -3.0,
        }
    }

    pub fn agent(self) -> AgentConfig {
        // The desk budget is 60 times smaller than the full one.
        let lr = match self {
            Preset::Desk => 1e-3,
            Preset::Paper => 5e-5,
        };
        AgentConfig {
            hidden: vec![128, 128],
            lr_actor: lr,
            lr_critic: lr,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            gamma: 0.997,
            chi: 0.001,
            actor_delay: 5,
            batch_size: 128,
            buffer_capacity: 40_000,
            target_noise_std: 0.5f64.sqrt(),
            target_noise_clip: 1.0,
            explore_prob: 0.9,
            explore_std: 0.1,
            explore_decay: 0.999,
            penalty_c: -3.0,
            normalize_state: true,
        }
    }

    pub fn training(self) -> TrainingConfig {
        let (epochs, episodes, steps) = match self {
            Preset::Desk => (6, 40, 50),
            Preset::Paper => (18, 200, 200),
        };
        TrainingConfig {
            epochs,
            episodes,
            steps,
            schedule: InteractionSchedule::EveryEpoch,
        }
    }
}

/// The methods an experiment can run, one per compared algorithm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// PABPSO association with two parallel TD3 agents.
    Proposed,
    /// PABPSO association with two parallel DDPG agents.
    PabpsoDdpg,
    /// Standard sigmoid BPSO association with two parallel TD3 agents.
    BpsoTd3,
    /// PABPSO association with one TD3 agent emitting powers and phases.
    PcrbOut,
    /// One TD3 agent emitting association, powers and phases.
    Allout,
    /// Implicit enumeration plus six-level coordinate search.
    Iees,
    /// Uniformly random decisions.
    Random,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Proposed,
        Method::PabpsoDdpg,
        Method::BpsoTd3,
        Method::PcrbOut,
        Method::Allout,
        Method::Iees,
        Method::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Proposed => "proposed",
            Method::PabpsoDdpg => "pabpso_ddpg",
            Method::BpsoTd3 => "bpso_td3",
            Method::PcrbOut => "pcrb_out",
            Method::Allout => "allout",
            Method::Iees => "iees",
            Method::Random => "random",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config("method", format!("unknown method `{s}`")))
    }
}

/// One experiment: a method, a full configuration, seeds and an output path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub preset: Preset,
    pub method: Method,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub system: SystemConfig,
    pub swarm: SwarmConfig,
    pub agent: AgentConfig,
    pub training: TrainingConfig,
}

impl ExperimentSpec {
    pub fn from_preset(preset: Preset, method: Method) -> Self {
        let system = preset.system();
        ExperimentSpec {
            preset,
            method,
            seeds: vec![system.seed],
            output: PathBuf::from("runs"),
            system,
            swarm: preset.swarm(),
            agent: preset.agent(),
            training: preset.training(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.swarm.validate()?;
        self.agent.validate()?;
        self.training.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::config("seeds", "at least one seed is required"));
        }
        Ok(())
    }

    /// Parses a spec from TOML text. `origin` is only used in diagnostics.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let spec_err = |message: String| Error::Spec {
            path: origin.to_path_buf(),
            message,
        };
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| spec_err(e.to_string()))?;
        let preset = match user.get("preset") {
            None => Preset::Desk,
            Some(v) => v
                .clone()
                .try_into::<Preset>()
                .map_err(|e| spec_err(format!("field `preset`: {e}")))?,
        };
        let method = match user.get("method") {
            None => return Err(spec_err("missing field `method`".into())),
            Some(v) => v
                .clone()
                .try_into::<Method>()
                .map_err(|e| spec_err(format!("field `method`: {e}")))?,
        };
        let base = ExperimentSpec::from_preset(preset, method);
        let mut merged = toml::Table::try_from(&base).map_err(|e| spec_err(e.to_string()))?;
        merge_strict(&mut merged, &user, "").map_err(|(field, msg)| match user_line(text, &field) {
            Some(l) => spec_err(format!("line {l}: {msg}")),
            None => spec_err(msg),
        })?;

        // Round-trip through text so type errors carry a span, then map the
        // span back to a field and a line of the user's file.
        let merged_text = toml::to_string(&merged).map_err(|e| spec_err(e.to_string()))?;
        let spec: ExperimentSpec = toml::from_str(&merged_text).map_err(|e| {
            let field = e.span().and_then(|s| field_at(&merged_text, s.start));
            match field {
                Some(f) => {
                    let line = user_line(text, &f).map_or(String::new(), |l| format!(" (line {l})"));
                    spec_err(format!("field `{f}`{line}: {}", e.message()))
                }
                None => spec_err(e.message().to_string()),
            }
        })?;
        spec.validate().map_err(|e| spec_err(e.to_string()))?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        ExperimentSpec::parse(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("spec serializes to TOML")
    }

    /// Copy with one field replaced, addressed by a dotted path such as
    /// `system.elements_per_ris`. `value` is TOML value syntax; bare words
    /// are taken as strings.
    pub fn with_override(&self, path: &str, value: &str) -> Result<Self> {
        let err = |message: String| Error::config(path, message);
        let parsed: toml::Value = match format!("v = {value}").parse::<toml::Table>() {
            Ok(mut t) => t.remove("v").expect("single key"),
            Err(_) => toml::Value::String(value.to_string()),
        };
        let mut user = toml::Table::new();
        let keys: Vec<&str> = path.split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(err("empty path segment".into()));
        }
        {
            let mut slot = &mut user;
            for k in &keys[..keys.len() - 1] {
                slot = slot
                    .entry(k.to_string())
                    .or_insert_with(|| toml::Value::Table(toml::Table::new()))
                    .as_table_mut()
                    .expect("fresh table");
            }
            slot.insert(keys[keys.len() - 1].to_string(), parsed);
        }
        let mut merged = toml::Table::try_from(self).map_err(|e| err(e.to_string()))?;
        merge_strict(&mut merged, &user, "").map_err(|(_, msg)| err(msg))?;
        let text = toml::to_string(&merged).map_err(|e| err(e.to_string()))?;
        let spec: ExperimentSpec = toml::from_str(&text).map_err(|e| err(e.message().to_string()))?;
        spec.validate()?;
        Ok(spec)
    }
}

/// Dotted path of the key defined on the line containing byte `pos`.
fn field_at(text: &str, pos: usize) -> Option<String> {
    let mut section = String::new();
    let mut start = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        if t.starts_with('[') {
            section = t.trim_matches(|c| c == '[' || c == ']').to_string();
        }
        if pos < start + line.len() {
            let key = t.split('=').next()?.trim();
            if key.is_empty() || t.starts_with('[') {
                return None;
            }
            return Some(if section.is_empty() { key.to_string() } else { format!("{section}.{key}") });
        }
        start += line.len();
    }
    None
}

/// 1-based line of `field` in a spec file written with `[section]` headers.
fn user_line(text: &str, field: &str) -> Option<usize> {
    let (section, key) = field.rsplit_once('.').unwrap_or(("", field));
    let mut current = "";
    for (i, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.starts_with('[') {
            current = t.trim_matches(|c| c == '[' || c == ']').trim();
        } else if current == section && t.split('=').next().map(str::trim) == Some(key) {
            return Some(i + 1);
        }
    }
    None
}

/// Overlays `user` onto `base`, refusing keys that `base` does not have.
/// Errors carry the offending dotted path.
fn merge_strict(base: &mut toml::Table, user: &toml::Table, path: &str) -> std::result::Result<(), (String, String)> {
    for (key, value) in user {
        let full = if path.is_empty() {
            key.clone()
        } else {
            format!("{path}.{key}")
        };
        match base.get_mut(key) {
            None => return Err((full.clone(), format!("unknown field `{full}`"))),
            Some(toml::Value::Table(inner)) => match value {
                toml::Value::Table(user_inner) => merge_strict(inner, user_inner, &full)?,
                other => {
                    let msg = format!("field `{full}` must be a table, got {}", other.type_str());
                    return Err((full, msg));
                }
            },
            Some(slot) => *slot = value.clone(),
        }
    }
    Ok(())
}
