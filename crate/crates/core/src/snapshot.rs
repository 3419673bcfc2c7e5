//! Self-describing text snapshots of environments, agents and run curves.
//!
//! ```text
//! ristwin-snapshot v1
//! text <name> <line count>
//! <that many lines, verbatim>
//! f64 <name> <dims>
//! <values>
//! ```
//!
//! `dims` is `x`-separated (`3x4`, `0x3`); a scalar is `1`. Values sit on one
//! line separated by single spaces: `f64` and `u64` are 16 hex digits of the
//! little-endian bytes, `c64` is the real part followed by the imaginary part
//! (32 hex digits). Blank lines and lines starting with `#` between entries
//! are ignored. Floats round-trip bit-exactly.

use std::path::Path;
use std::str::FromStr;

use ndarray::{ArrayD, Dimension, IxDyn};
use num_complex::Complex64;

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::metrics::AssociationMatrix;
use crate::nn::{Adam, Dense, Mlp, OutputActivation};
use crate::rng::RandomStream;
use crate::td3::{Algorithm, Real, Td3Agent};
use crate::topology::{ChannelEstimates, ChannelRealization, LargeScale, NetworkTopology, PilotNoise};
use crate::twin::{Hidden, InteractionSchedule, TwinEnvironment};

pub const HEADER: &str = "ristwin-snapshot v1";

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    Text(String),
    F64 { dims: Vec<usize>, data: Vec<f64> },
    C64 { dims: Vec<usize>, data: Vec<Complex64> },
    U64 { dims: Vec<usize>, data: Vec<u64> },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Snapshot {
    entries: Vec<(String, Entry)>,
}

fn hex_u64(x: u64) -> String {
    hex::encode(x.to_le_bytes())
}

fn parse_hex_u64(s: &str, line: usize) -> Result<u64> {
    let bad = |message: String| Error::Snapshot { line, message };
    if s.len() != 16 {
        return Err(bad(format!("expected 16 hex digits, got `{s}`")));
    }
    let mut bytes = [0u8; 8];
    hex::decode_to_slice(s, &mut bytes).map_err(|e| bad(format!("`{s}`: {e}")))?;
    Ok(u64::from_le_bytes(bytes))
}

fn dims_text(dims: &[usize]) -> String {
    if dims.is_empty() {
        return "1".into();
    }
    dims.iter().map(usize::to_string).collect::<Vec<_>>().join("x")
}

impl Snapshot {
    pub fn new() -> Self {
        Snapshot::default()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn insert(&mut self, name: &str, entry: Entry) {
        assert!(
            !name.is_empty() && !name.contains(char::is_whitespace),
            "snapshot names are single non-empty tokens"
        );
        match self.entries.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = entry,
            None => self.entries.push((name.to_string(), entry)),
        }
    }

    pub fn get(&self, name: &str) -> Result<&Entry> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, e)| e)
            .ok_or_else(|| Error::Snapshot {
                line: 0,
                message: format!("missing entry `{name}`"),
            })
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.iter().any(|(n, _)| n == name)
    }

    fn wrong_kind(name: &str, want: &str) -> Error {
        Error::Snapshot {
            line: 0,
            message: format!("entry `{name}` is not of type {want}"),
        }
    }

    pub fn put_text(&mut self, name: &str, text: &str) {
        self.insert(name, Entry::Text(text.to_string()));
    }

    pub fn put_f64(&mut self, name: &str, dims: &[usize], data: Vec<f64>) {
        assert_eq!(dims.iter().product::<usize>(), data.len(), "dims match data for `{name}`");
        self.insert(name, Entry::F64 { dims: dims.to_vec(), data });
    }

    pub fn put_c64(&mut self, name: &str, dims: &[usize], data: Vec<Complex64>) {
        assert_eq!(dims.iter().product::<usize>(), data.len(), "dims match data for `{name}`");
        self.insert(name, Entry::C64 { dims: dims.to_vec(), data });
    }

    pub fn put_u64(&mut self, name: &str, dims: &[usize], data: Vec<u64>) {
        assert_eq!(dims.iter().product::<usize>(), data.len(), "dims match data for `{name}`");
        self.insert(name, Entry::U64 { dims: dims.to_vec(), data });
    }

    pub fn put_f64_array<D: Dimension>(&mut self, name: &str, a: &ndarray::Array<f64, D>) {
        self.put_f64(name, a.shape(), a.iter().copied().collect());
    }

    pub fn put_c64_array<D: Dimension>(&mut self, name: &str, a: &ndarray::Array<Complex64, D>) {
        self.put_c64(name, a.shape(), a.iter().copied().collect());
    }

    pub fn text(&self, name: &str) -> Result<&str> {
        match self.get(name)? {
            Entry::Text(t) => Ok(t),
            _ => Err(Self::wrong_kind(name, "text")),
        }
    }

    pub fn f64s(&self, name: &str) -> Result<(&[usize], &[f64])> {
        match self.get(name)? {
            Entry::F64 { dims, data } => Ok((dims, data)),
            _ => Err(Self::wrong_kind(name, "f64")),
        }
    }

    pub fn c64s(&self, name: &str) -> Result<(&[usize], &[Complex64])> {
        match self.get(name)? {
            Entry::C64 { dims, data } => Ok((dims, data)),
            _ => Err(Self::wrong_kind(name, "c64")),
        }
    }

    pub fn u64s(&self, name: &str) -> Result<(&[usize], &[u64])> {
        match self.get(name)? {
            Entry::U64 { dims, data } => Ok((dims, data)),
            _ => Err(Self::wrong_kind(name, "u64")),
        }
    }

    pub fn f64_scalar(&self, name: &str) -> Result<f64> {
        match self.f64s(name)?.1 {
            [x] => Ok(*x),
            other => Err(Error::Snapshot {
                line: 0,
                message: format!("entry `{name}` holds {} values, expected 1", other.len()),
            }),
        }
    }

    pub fn f64_array<D: Dimension>(&self, name: &str) -> Result<ndarray::Array<f64, D>> {
        let (dims, data) = self.f64s(name)?;
        shaped(name, dims, data.to_vec())
    }

    pub fn c64_array<D: Dimension>(&self, name: &str) -> Result<ndarray::Array<Complex64, D>> {
        let (dims, data) = self.c64s(name)?;
        shaped(name, dims, data.to_vec())
    }

    pub fn u64_fixed<const L: usize>(&self, name: &str) -> Result<[u64; L]> {
        let data = self.u64s(name)?.1;
        data.try_into().map_err(|_| Error::Snapshot {
            line: 0,
            message: format!("entry `{name}` holds {} values, expected {L}", data.len()),
        })
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(HEADER);
        out.push('\n');
        let join = |parts: Vec<String>| parts.join(" ");
        for (name, entry) in &self.entries {
            match entry {
                Entry::Text(t) => {
                    let lines: Vec<&str> = if t.is_empty() { Vec::new() } else { t.lines().collect() };
                    out.push_str(&format!("text {name} {}\n", lines.len()));
                    for l in lines {
                        out.push_str(l);
                        out.push('\n');
                    }
                }
                Entry::F64 { dims, data } => {
                    out.push_str(&format!("f64 {name} {}\n", dims_text(dims)));
                    out.push_str(&join(data.iter().map(|x| hex_u64(x.to_bits())).collect()));
                    out.push('\n');
                }
                Entry::C64 { dims, data } => {
                    out.push_str(&format!("c64 {name} {}\n", dims_text(dims)));
                    out.push_str(&join(
                        data.iter()
                            .map(|z| format!("{}{}", hex_u64(z.re.to_bits()), hex_u64(z.im.to_bits())))
                            .collect(),
                    ));
                    out.push('\n');
                }
                Entry::U64 { dims, data } => {
                    out.push_str(&format!("u64 {name} {}\n", dims_text(dims)));
                    out.push_str(&join(data.iter().map(|&x| hex_u64(x)).collect()));
                    out.push('\n');
                }
            }
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        std::fs::read_to_string(path)?.parse()
    }
}

fn shaped<T, D: Dimension>(name: &str, dims: &[usize], data: Vec<T>) -> Result<ndarray::Array<T, D>> {
    let bad = |message: String| Error::Snapshot { line: 0, message };
    let dyn_array = ArrayD::from_shape_vec(IxDyn(dims), data).map_err(|e| bad(format!("`{name}`: {e}")))?;
    dyn_array
        .into_dimensionality::<D>()
        .map_err(|e| bad(format!("`{name}` has dims {}: {e}", dims_text(dims))))
}

impl FromStr for Snapshot {
    type Err = Error;

    fn from_str(text: &str) -> Result<Self> {
        let lines: Vec<&str> = text.lines().collect();
        let bad = |line: usize, message: String| Error::Snapshot { line, message };
        if lines.first().map(|l| l.trim_end()) != Some(HEADER) {
            return Err(bad(1, format!("expected header `{HEADER}`")));
        }
        let mut snap = Snapshot::new();
        let mut i = 1;
        while i < lines.len() {
            let lineno = i + 1;
            let head = lines[i].trim();
            i += 1;
            if head.is_empty() || head.starts_with('#') {
                continue;
            }
            let parts: Vec<&str> = head.split_whitespace().collect();
            let [kind, name, arg] = parts[..] else {
                return Err(bad(lineno, format!("expected `<type> <name> <dims>`, got `{head}`")));
            };
            if snap.contains(name) {
                return Err(bad(lineno, format!("duplicate entry `{name}`")));
            }
            if kind == "text" {
                let n: usize = arg.parse().map_err(|_| bad(lineno, format!("bad line count `{arg}`")))?;
                if i + n > lines.len() {
                    return Err(bad(lineno, format!("text `{name}` needs {n} lines")));
                }
                let body: Vec<&str> = lines[i..i + n].to_vec();
                i += n;
                let mut t = body.join("\n");
                if n > 0 {
                    t.push('\n');
                }
                snap.insert(name, Entry::Text(t));
                continue;
            }
            let dims: Vec<usize> = arg
                .split('x')
                .map(|d| d.parse().map_err(|_| bad(lineno, format!("bad dims `{arg}`"))))
                .collect::<Result<_>>()?;
            let count: usize = dims.iter().product();
            let data_line = lines.get(i).copied().unwrap_or("");
            let data_no = i + 1;
            i += 1;
            let tokens: Vec<&str> = data_line.split_whitespace().collect();
            if tokens.len() != count {
                return Err(bad(data_no, format!("`{name}` expects {count} values, found {}", tokens.len())));
            }
            let entry = match kind {
                "f64" => Entry::F64 {
                    dims,
                    data: tokens
                        .iter()
                        .map(|t| parse_hex_u64(t, data_no).map(f64::from_bits))
                        .collect::<Result<_>>()?,
                },
                "u64" => Entry::U64 {
                    dims,
                    data: tokens.iter().map(|t| parse_hex_u64(t, data_no)).collect::<Result<_>>()?,
                },
                "c64" => Entry::C64 {
                    dims,
                    data: tokens
                        .iter()
                        .map(|t| {
                            if t.len() != 32 || !t.is_ascii() {
                                return Err(bad(data_no, format!("expected 32 hex digits, got `{t}`")));
                            }
                            let re = f64::from_bits(parse_hex_u64(&t[..16], data_no)?);
                            let im = f64::from_bits(parse_hex_u64(&t[16..], data_no)?);
                            Ok(Complex64::new(re, im))
                        })
                        .collect::<Result<_>>()?,
                },
                other => return Err(bad(lineno, format!("unknown entry type `{other}`"))),
            };
            snap.insert(name, entry);
        }
        Ok(snap)
    }
}

fn put_points(snap: &mut Snapshot, name: &str, pts: &[[f64; 3]]) {
    snap.put_f64(name, &[pts.len(), 3], pts.iter().flatten().copied().collect());
}

fn points(snap: &Snapshot, name: &str) -> Result<Vec<[f64; 3]>> {
    let (dims, data) = snap.f64s(name)?;
    if dims.len() != 2 || dims[1] != 3 {
        return Err(Error::Snapshot {
            line: 0,
            message: format!("`{name}` must be n×3"),
        });
    }
    Ok(data.chunks(3).map(|c| [c[0], c[1], c[2]]).collect())
}

/// Writes the complete environment state under `prefix`.
pub fn put_environment(snap: &mut Snapshot, prefix: &str, env: &TwinEnvironment) {
    let key = |s: &str| format!("{prefix}.{s}");
    snap.put_text(&key("config"), &toml::to_string(&env.config).expect("config serializes"));
    snap.put_text(&key("schedule"), &format!("{}\n", env.schedule));
    put_points(snap, &key("ue_pos"), &env.topology.ue_pos);
    put_points(snap, &key("ap_pos"), &env.topology.ap_pos);
    put_points(snap, &key("ris_pos"), &env.topology.ris_pos);
    let truth = &env.truth.value;
    snap.put_f64_array(&key("beta_direct"), &truth.large.beta_direct);
    snap.put_f64_array(&key("beta_cascaded"), &truth.large.beta_cascaded);
    snap.put_c64_array(&key("los_direct"), &truth.large.los_direct);
    snap.put_c64_array(&key("los_cascaded"), &truth.large.los_cascaded);
    snap.put_u64(&key("elements_per_ris"), &[1], vec![truth.large.elements_per_ris as u64]);
    snap.put_c64_array(&key("nlos_direct"), &truth.nlos_direct);
    snap.put_c64_array(&key("nlos_cascaded"), &truth.nlos_cascaded);
    snap.put_c64_array(&key("pilot_sum_direct"), &env.pilots.sum_direct);
    snap.put_c64_array(&key("pilot_sum_cascaded"), &env.pilots.sum_cascaded);
    snap.put_u64(&key("pilot_count"), &[1], vec![env.pilots.count]);
    snap.put_c64_array(&key("hhat_direct"), &env.estimates.hhat_direct);
    snap.put_c64_array(&key("hhat_cascaded"), &env.estimates.hhat_cascaded);
    if let Some(a) = &env.assoc {
        snap.put_u64(
            &key("assoc"),
            &[a.num_ues(), a.num_aps()],
            a.bits().iter().map(|&b| u64::from(b)).collect(),
        );
    }
    snap.put_f64(&key("penalty_c"), &[1], vec![env.penalty_c]);
    snap.put_u64(&key("pilot_rng"), &[7], env.pilot_rng.state().to_vec());
    snap.put_u64(&key("redraw_rng"), &[7], env.redraw_rng.state().to_vec());
    snap.put_u64(
        &key("counters"),
        &[4],
        vec![u64::from(env.pending_refresh), env.twin_steps, env.physical_steps, env.refreshes],
    );
}

pub fn environment(snap: &Snapshot, prefix: &str) -> Result<TwinEnvironment> {
    let key = |s: &str| format!("{prefix}.{s}");
    let bad = |message: String| Error::Snapshot { line: 0, message };
    let config: SystemConfig =
        toml::from_str(snap.text(&key("config"))?).map_err(|e| bad(format!("environment config: {e}")))?;
    let schedule: InteractionSchedule = snap.text(&key("schedule"))?.trim().parse()?;
    let topology = NetworkTopology {
        ue_pos: points(snap, &key("ue_pos"))?,
        ap_pos: points(snap, &key("ap_pos"))?,
        ris_pos: points(snap, &key("ris_pos"))?,
    };
    let [elements_per_ris] = snap.u64_fixed::<1>(&key("elements_per_ris"))?;
    let large = LargeScale {
        beta_direct: snap.f64_array(&key("beta_direct"))?,
        beta_cascaded: snap.f64_array(&key("beta_cascaded"))?,
        los_direct: snap.c64_array(&key("los_direct"))?,
        los_cascaded: snap.c64_array(&key("los_cascaded"))?,
        elements_per_ris: elements_per_ris as usize,
    };
    let truth = ChannelRealization::from_parts(
        large,
        snap.c64_array(&key("nlos_direct"))?,
        snap.c64_array(&key("nlos_cascaded"))?,
    )?;
    let [count] = snap.u64_fixed::<1>(&key("pilot_count"))?;
    let pilots = PilotNoise {
        sum_direct: snap.c64_array(&key("pilot_sum_direct"))?,
        sum_cascaded: snap.c64_array(&key("pilot_sum_cascaded"))?,
        count,
    };
    let estimates = ChannelEstimates {
        hhat_direct: snap.c64_array(&key("hhat_direct"))?,
        hhat_cascaded: snap.c64_array(&key("hhat_cascaded"))?,
    };
    if estimates.hhat_direct.dim() != truth.h_direct.dim() || estimates.hhat_cascaded.dim() != truth.h_cascaded.dim() {
        return Err(bad("estimates and truth dimensions differ".into()));
    }
    let assoc = if snap.contains(&key("assoc")) {
        let (dims, bits) = snap.u64s(&key("assoc"))?;
        let [k, m] = dims[..] else {
            return Err(bad("association must be K×M".into()));
        };
        let bits = bits
            .iter()
            .map(|&b| u8::try_from(b).map_err(|_| bad("association entries must be 0 or 1".into())))
            .collect::<Result<_>>()?;
        Some(AssociationMatrix::from_bits(k, m, bits)?)
    } else {
        None
    };
    let [pending, twin_steps, physical_steps, refreshes] = snap.u64_fixed::<4>(&key("counters"))?;
    Ok(TwinEnvironment {
        noise_w: config.noise_power_w(),
        config,
        topology,
        truth: Hidden::new(truth),
        pilots,
        estimates,
        assoc,
        schedule,
        penalty_c: snap.f64_scalar(&key("penalty_c"))?,
        pilot_rng: RandomStream::from_state(snap.u64_fixed(&key("pilot_rng"))?),
        redraw_rng: RandomStream::from_state(snap.u64_fixed(&key("redraw_rng"))?),
        pending_refresh: pending != 0,
        twin_steps,
        physical_steps,
        refreshes,
    })
}

fn dense_flat(layers: &[Dense<Real>]) -> Vec<f64> {
    layers
        .iter()
        .flat_map(|l| l.w.iter().chain(l.b.iter()))
        .map(|&x| f64::from(x))
        .collect()
}

fn put_net(snap: &mut Snapshot, name: &str, net: &Mlp<Real>) {
    snap.put_u64(&format!("{name}.sizes"), &[net.sizes().len()], net.sizes().iter().map(|&s| s as u64).collect());
    let flat = dense_flat(&net.layers);
    snap.put_f64(&format!("{name}.params"), &[flat.len()], flat);
}

fn net(snap: &Snapshot, name: &str, output: OutputActivation) -> Result<Mlp<Real>> {
    let sizes: Vec<usize> = snap.u64s(&format!("{name}.sizes"))?.1.iter().map(|&s| s as usize).collect();
    if sizes.len() < 2 {
        return Err(Error::Snapshot {
            line: 0,
            message: format!("`{name}` needs at least two layer sizes"),
        });
    }
    let mut out = Mlp::zeros(&sizes, output);
    let params: Vec<Real> = snap.f64s(&format!("{name}.params"))?.1.iter().map(|&x| x as Real).collect();
    out.set_flat_params(&params)?;
    Ok(out)
}

fn put_adam(snap: &mut Snapshot, name: &str, opt: &Adam<Real>) {
    snap.put_f64(&format!("{name}.hyper"), &[4], vec![opt.lr, opt.beta1, opt.beta2, opt.eps]);
    snap.put_u64(&format!("{name}.step"), &[1], vec![opt.step]);
    let m = dense_flat(&opt.m);
    let v = dense_flat(&opt.v);
    snap.put_f64(&format!("{name}.m"), &[m.len()], m);
    snap.put_f64(&format!("{name}.v"), &[v.len()], v);
}

fn adam(snap: &Snapshot, name: &str, shape: &Mlp<Real>) -> Result<Adam<Real>> {
    let (_, h) = snap.f64s(&format!("{name}.hyper"))?;
    let [lr, beta1, beta2, eps] = h[..] else {
        return Err(Error::Snapshot {
            line: 0,
            message: format!("`{name}.hyper` needs 4 values"),
        });
    };
    let mut opt = Adam::new(shape, lr, beta1, beta2, eps);
    [opt.step] = snap.u64_fixed::<1>(&format!("{name}.step"))?;
    let mut moments = shape.clone();
    for (target, suffix) in [(&mut opt.m, "m"), (&mut opt.v, "v")] {
        let flat: Vec<Real> = snap.f64s(&format!("{name}.{suffix}"))?.1.iter().map(|&x| x as Real).collect();
        moments.set_flat_params(&flat)?;
        *target = moments.layers.clone();
    }
    Ok(opt)
}

/// Writes an agent checkpoint: all six networks, the optimizer states and the
/// exploration schedule.
pub fn put_agent(snap: &mut Snapshot, prefix: &str, agent: &Td3Agent) {
    let key = |s: &str| format!("{prefix}.{s}");
    let algo = match agent.algorithm {
        Algorithm::Td3 => "td3",
        Algorithm::Ddpg => "ddpg",
    };
    snap.put_text(&key("algorithm"), &format!("{algo}\n"));
    snap.put_u64(
        &key("dims"),
        &[5],
        vec![
            agent.state_dim as u64,
            agent.action_dim as u64,
            agent.offset as u64,
            agent.actor_delay,
            agent.updates,
        ],
    );
    snap.put_f64(
        &key("hyper"),
        &[7],
        vec![
            agent.gamma,
            agent.chi,
            agent.target_noise_std,
            agent.target_noise_clip,
            agent.explore_prob,
            agent.explore_std,
            agent.explore_decay,
        ],
    );
    put_net(snap, &key("actor"), &agent.actor);
    put_net(snap, &key("actor_target"), &agent.actor_target);
    put_net(snap, &key("critic1"), &agent.critic1);
    put_net(snap, &key("critic1_target"), &agent.critic1_target);
    put_net(snap, &key("critic2"), &agent.critic2);
    put_net(snap, &key("critic2_target"), &agent.critic2_target);
    put_adam(snap, &key("actor_opt"), &agent.actor_opt);
    put_adam(snap, &key("critic1_opt"), &agent.critic1_opt);
    put_adam(snap, &key("critic2_opt"), &agent.critic2_opt);
}

pub fn agent(snap: &Snapshot, prefix: &str) -> Result<Td3Agent> {
    let key = |s: &str| format!("{prefix}.{s}");
    let algorithm = match snap.text(&key("algorithm"))?.trim() {
        "td3" => Algorithm::Td3,
        "ddpg" => Algorithm::Ddpg,
        other => {
            return Err(Error::Snapshot {
                line: 0,
                message: format!("unknown algorithm `{other}`"),
            })
        }
    };
    let [state_dim, action_dim, offset, actor_delay, updates] = snap.u64_fixed::<5>(&key("dims"))?;
    let (_, h) = snap.f64s(&key("hyper"))?;
    let [gamma, chi, target_noise_std, target_noise_clip, explore_prob, explore_std, explore_decay] = h[..] else {
        return Err(Error::Snapshot {
            line: 0,
            message: format!("`{prefix}.hyper` needs 7 values"),
        });
    };
    let actor = net(snap, &key("actor"), OutputActivation::Tanh)?;
    let critic1 = net(snap, &key("critic1"), OutputActivation::Identity)?;
    let critic2 = net(snap, &key("critic2"), OutputActivation::Identity)?;
    Ok(Td3Agent {
        algorithm,
        state_dim: state_dim as usize,
        action_dim: action_dim as usize,
        offset: offset as usize,
        actor_opt: adam(snap, &key("actor_opt"), &actor)?,
        critic1_opt: adam(snap, &key("critic1_opt"), &critic1)?,
        critic2_opt: adam(snap, &key("critic2_opt"), &critic2)?,
        actor_target: net(snap, &key("actor_target"), OutputActivation::Tanh)?,
        critic1_target: net(snap, &key("critic1_target"), OutputActivation::Identity)?,
        critic2_target: net(snap, &key("critic2_target"), OutputActivation::Identity)?,
        actor,
        critic1,
        critic2,
        gamma,
        chi,
        actor_delay,
        target_noise_std,
        target_noise_clip,
        explore_prob,
        explore_std,
        explore_decay,
        updates,
    })
}
