//! Network geometry, three-slope path loss, Rician channels and MMSE pilot
//! estimation.
//!
//! Cascaded per-element channels are stored as `M × (B·N) × K` arrays with the
//! element index `b·N + n`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use ndarray::{Array2, Array3, ArrayView1, Zip};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::config::{CascadeModel, SystemConfig};
use crate::error::{Error, Result};
use crate::rng::RandomStream;

pub type Point = [f64; 3];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub ue_pos: Vec<Point>,
    pub ap_pos: Vec<Point>,
    pub ris_pos: Vec<Point>,
}

fn uniform_in_disk(radius: f64, height: f64, rng: &mut RandomStream) -> Point {
    let r = radius * rng.gen::<f64>().sqrt();
    let theta = 2.0 * PI * rng.gen::<f64>();
    [r * theta.cos(), r * theta.sin(), height]
}

/// Drops UEs and APs uniformly in the disk and spaces the RISs along the 45°
/// diameter at the midpoints of `B` equal segments.
pub fn generate_topology(cfg: &SystemConfig, rng: &mut RandomStream) -> NetworkTopology {
    let ap_pos = (0..cfg.num_aps)
        .map(|_| uniform_in_disk(cfg.radius_m, cfg.h_ap_m, rng))
        .collect();
    let ue_pos = (0..cfg.num_ues)
        .map(|_| uniform_in_disk(cfg.radius_m, cfg.h_ue_m, rng))
        .collect();
    let b = cfg.num_ris;
    let ris_pos = (0..b)
        .map(|j| {
            let t = -cfg.radius_m + 2.0 * cfg.radius_m * (j as f64 + 0.5) / b as f64;
            [t * FRAC_1_SQRT_2, t * FRAC_1_SQRT_2, cfg.h_ris_m]
        })
        .collect();
    NetworkTopology {
        ue_pos,
        ap_pos,
        ris_pos,
    }
}

impl NetworkTopology {
    /// Redraws UE positions, keeping APs and RISs in place.
    pub fn redraw_ues(&mut self, cfg: &SystemConfig, rng: &mut RandomStream) {
        for ue in &mut self.ue_pos {
            *ue = uniform_in_disk(cfg.radius_m, cfg.h_ue_m, rng);
        }
    }
}

/// Positions of the elements of one RIS: a half-wavelength uniform linear
/// array centred on the RIS, perpendicular to the 45° diameter.
fn element_positions(center: Point, n: usize, wavelength: f64) -> Vec<Point> {
    let spacing = wavelength / 2.0;
    (0..n)
        .map(|i| {
            let offset = (i as f64 - (n as f64 - 1.0) / 2.0) * spacing;
            [
                center[0] - offset * FRAC_1_SQRT_2,
                center[1] + offset * FRAC_1_SQRT_2,
                center[2],
            ]
        })
        .collect()
}

/// 3-D distance with the horizontal separation clamped from below.
fn distance(a: Point, b: Point, min_2d: f64) -> f64 {
    let horizontal = (a[0] - b[0]).hypot(a[1] - b[1]).max(min_2d);
    horizontal.hypot(a[2] - b[2])
}

/// Antenna heights entering the COST-Hata constant.
#[derive(Debug, Clone, Copy)]
pub struct Heights {
    pub base: f64,
    pub mobile: f64,
}

impl Heights {
    pub fn between(a: f64, b: f64) -> Self {
        Heights {
            base: a.max(b),
            mobile: a.min(b),
        }
    }
}

/// COST-231 Hata constant in dB.
pub fn hata_constant_db(fc_hz: f64, h: Heights) -> f64 {
    let lf = (fc_hz / 1e6).log10();
    46.3 + 33.9 * lf
        - 13.82 * h.base.log10()
        - ((1.1 * lf - 0.7) * h.mobile - (1.56 * lf - 0.8))
}

/// Three-slope path loss in dB (a negative number); `shadow_db` is added only
/// beyond the far breakpoint.
pub fn path_loss_db(d_m: f64, h: Heights, cfg: &SystemConfig, shadow_db: f64) -> Result<f64> {
    if !(d_m > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "path-loss distance must be positive, got {d_m}"
        )));
    }
    let l = hata_constant_db(cfg.fc_hz, h);
    let (d, d0, d1) = (d_m / 1e3, cfg.d0_m / 1e3, cfg.d1_m / 1e3);
    Ok(if d > d1 {
        -l - 35.0 * d.log10() + shadow_db
    } else if d > d0 {
        -l - 15.0 * d1.log10() - 20.0 * d.log10()
    } else {
        -l - 15.0 * d1.log10() - 20.0 * d0.log10()
    })
}

/// Linear path-loss gain with a fresh shadowing draw.
pub fn path_loss(d_m: f64, h: Heights, cfg: &SystemConfig, rng: &mut RandomStream) -> Result<f64> {
    let z: f64 = StandardNormal.sample(rng);
    let db = path_loss_db(d_m, h, cfg, cfg.sigma_sh_db * z)?;
    Ok(db_to_linear(db))
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Circularly symmetric complex Gaussian with unit variance.
pub fn complex_normal(rng: &mut impl Rng) -> Complex64 {
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex64::new(re, im) * FRAC_1_SQRT_2
}

fn complex_normal_array<D: ndarray::Dimension, Sh: ndarray::ShapeBuilder<Dim = D>>(
    shape: Sh,
    rng: &mut impl Rng,
) -> ndarray::Array<Complex64, D> {
    ndarray::Array::from_shape_simple_fn(shape, || complex_normal(rng))
}

/// Deterministic part of every link: NLoS variances and LoS components.
#[derive(Debug, Clone, PartialEq)]
pub struct LargeScale {
    /// `M × K`.
    pub beta_direct: Array2<f64>,
    /// `M × B × K`: one variance per RIS, shared by its elements.
    pub beta_cascaded: Array3<f64>,
    pub los_direct: Array2<Complex64>,
    /// `M × (B·N) × K`.
    pub los_cascaded: Array3<Complex64>,
    pub elements_per_ris: usize,
}

impl LargeScale {
    pub fn compute(topo: &NetworkTopology, cfg: &SystemConfig, rng: &mut RandomStream) -> Result<Self> {
        let (m, k, b, n) = (
            topo.ap_pos.len(),
            topo.ue_pos.len(),
            topo.ris_pos.len(),
            cfg.elements_per_ris,
        );
        let lambda = cfg.wavelength_m();
        let min_d = cfg.min_distance_m;
        let los_phase = |d: f64| Complex64::from_polar(1.0, -2.0 * PI * d / lambda);
        let split = |gain: f64, kappa: f64| ((gain * kappa / (1.0 + kappa)).sqrt(), gain / (1.0 + kappa));

        let direct_h = Heights::between(cfg.h_ap_m, cfg.h_ue_m);
        let mut beta_direct = Array2::zeros((m, k));
        let mut los_direct = Array2::zeros((m, k));
        for mi in 0..m {
            for ki in 0..k {
                let d = distance(topo.ap_pos[mi], topo.ue_pos[ki], min_d);
                let gain = path_loss(d, direct_h, cfg, rng)?;
                let (amp, beta) = split(gain, cfg.rician_k_direct);
                beta_direct[[mi, ki]] = beta;
                los_direct[[mi, ki]] = los_phase(d) * amp;
            }
        }

        let ap_ris_h = Heights::between(cfg.h_ap_m, cfg.h_ris_m);
        let ris_ue_h = Heights::between(cfg.h_ris_m, cfg.h_ue_m);
        let mut beta_cascaded = Array3::zeros((m, b, k));
        let mut los_cascaded = Array3::zeros((m, b * n, k));
        // Shadowing is drawn per segment for the product model and per
        // AP-RIS-UE triple for the unfolded model.
        let mut seg_ap = Array2::zeros((m, b));
        let mut seg_ue = Array2::zeros((b, k));
        if cfg.cascade_model == CascadeModel::SegmentProduct {
            for bi in 0..b {
                for mi in 0..m {
                    let d = distance(topo.ap_pos[mi], topo.ris_pos[bi], min_d);
                    seg_ap[[mi, bi]] = path_loss(d, ap_ris_h, cfg, rng)?;
                }
                for ki in 0..k {
                    let d = distance(topo.ris_pos[bi], topo.ue_pos[ki], min_d);
                    seg_ue[[bi, ki]] = path_loss(d, ris_ue_h, cfg, rng)?;
                }
            }
        }
        for bi in 0..b {
            let elements = element_positions(topo.ris_pos[bi], n, lambda);
            for mi in 0..m {
                for ki in 0..k {
                    let gain = match cfg.cascade_model {
                        CascadeModel::SegmentProduct => seg_ap[[mi, bi]] * seg_ue[[bi, ki]],
                        CascadeModel::UnfoldedPath => {
                            let d = distance(topo.ap_pos[mi], topo.ris_pos[bi], min_d)
                                + distance(topo.ris_pos[bi], topo.ue_pos[ki], min_d);
                            path_loss(d, ris_ue_h, cfg, rng)?
                        }
                    };
                    let (amp, beta) = split(gain, cfg.rician_k_ris);
                    beta_cascaded[[mi, bi, ki]] = beta;
                    for (ni, e) in elements.iter().enumerate() {
                        let d = distance(topo.ap_pos[mi], *e, min_d) + distance(*e, topo.ue_pos[ki], min_d);
                        los_cascaded[[mi, bi * n + ni, ki]] = los_phase(d) * amp;
                    }
                }
            }
        }
        Ok(LargeScale {
            beta_direct,
            beta_cascaded,
            los_direct,
            los_cascaded,
            elements_per_ris: n,
        })
    }

    /// NLoS variance of element `e` (flat index `b·N + n`) on link `(m, k)`.
    pub fn beta_element(&self, m: usize, e: usize, k: usize) -> f64 {
        self.beta_cascaded[[m, e / self.elements_per_ris, k]]
    }

    /// NLoS variances broadcast to the `M × (B·N) × K` element layout.
    pub fn beta_elements(&self) -> Array3<f64> {
        let (m, _, k) = self.beta_cascaded.dim();
        let e = self.los_cascaded.dim().1;
        Array3::from_shape_fn((m, e, k), |(mi, ei, ki)| self.beta_element(mi, ei, ki))
    }
}

/// True end-to-end channels: `h = h̄ + √β · h̃`.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    pub large: LargeScale,
    /// Standard complex Gaussian NLoS draws, `M × K`.
    pub nlos_direct: Array2<Complex64>,
    /// `M × (B·N) × K`.
    pub nlos_cascaded: Array3<Complex64>,
    pub h_direct: Array2<Complex64>,
    pub h_cascaded: Array3<Complex64>,
}

impl ChannelRealization {
    pub fn from_parts(
        large: LargeScale,
        nlos_direct: Array2<Complex64>,
        nlos_cascaded: Array3<Complex64>,
    ) -> Result<Self> {
        if nlos_direct.dim() != large.los_direct.dim() {
            return Err(Error::shape("direct NLoS draws", large.los_direct.len(), nlos_direct.len()));
        }
        if nlos_cascaded.dim() != large.los_cascaded.dim() {
            return Err(Error::shape(
                "cascaded NLoS draws",
                large.los_cascaded.len(),
                nlos_cascaded.len(),
            ));
        }
        let mut h_direct = large.los_direct.clone();
        Zip::from(&mut h_direct)
            .and(&large.beta_direct)
            .and(&nlos_direct)
            .for_each(|h, &b, &z| *h += z * b.sqrt());
        let beta_e = large.beta_elements();
        let mut h_cascaded = large.los_cascaded.clone();
        Zip::from(&mut h_cascaded)
            .and(&beta_e)
            .and(&nlos_cascaded)
            .for_each(|h, &b, &z| *h += z * b.sqrt());
        Ok(ChannelRealization {
            large,
            nlos_direct,
            nlos_cascaded,
            h_direct,
            h_cascaded,
        })
    }

    /// Draws fresh small-scale fading around fixed large-scale parameters.
    pub fn sample(large: LargeScale, rng_direct: &mut RandomStream, rng_cascaded: &mut RandomStream) -> Self {
        let nlos_direct = complex_normal_array(large.los_direct.dim(), rng_direct);
        let nlos_cascaded = complex_normal_array(large.los_cascaded.dim(), rng_cascaded);
        Self::from_parts(large, nlos_direct, nlos_cascaded).expect("shapes derive from large-scale arrays")
    }

    pub fn num_aps(&self) -> usize {
        self.h_direct.dim().0
    }

    pub fn num_ues(&self) -> usize {
        self.h_direct.dim().1
    }

    pub fn num_elements(&self) -> usize {
        self.h_cascaded.dim().1
    }
}

/// Topology-to-channels in one call, drawing everything from one stream.
pub fn sample_channels(topo: &NetworkTopology, cfg: &SystemConfig, rng: &mut RandomStream) -> Result<ChannelRealization> {
    let large = LargeScale::compute(topo, cfg, rng)?;
    let mut fading = rng.fork();
    let mut fading_c = rng.fork();
    Ok(ChannelRealization::sample(large, &mut fading, &mut fading_c))
}

/// Accumulated pilot observation noise. After `count` independent pilot
/// rounds on an unchanged channel the sufficient statistic carries the mean
/// noise, whose variance is `σ² / count`.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotNoise {
    pub sum_direct: Array2<Complex64>,
    pub sum_cascaded: Array3<Complex64>,
    pub count: u64,
}

impl PilotNoise {
    pub fn empty(real: &ChannelRealization) -> Self {
        PilotNoise {
            sum_direct: Array2::zeros(real.h_direct.dim()),
            sum_cascaded: Array3::zeros(real.h_cascaded.dim()),
            count: 0,
        }
    }

    /// Adds one pilot round with per-link noise variance `noise_w`.
    pub fn observe(&mut self, noise_w: f64, rng: &mut RandomStream) {
        let s = noise_w.sqrt();
        self.sum_direct.mapv_inplace(|u| u + complex_normal(rng) * s);
        self.sum_cascaded.mapv_inplace(|u| u + complex_normal(rng) * s);
        self.count += 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimates {
    pub hhat_direct: Array2<Complex64>,
    pub hhat_cascaded: Array3<Complex64>,
}

fn mmse_one(los: Complex64, beta: f64, nlos: Complex64, mean_noise: Complex64, p: f64, noise: f64) -> Complex64 {
    let denom = p * beta + noise;
    if denom == 0.0 {
        return los;
    }
    los + (nlos * (p * beta).sqrt() + mean_noise) * (p.sqrt() * beta / denom)
}

/// MMSE estimates from the accumulated pilot rounds in `obs`.
pub fn mmse_from_observations(
    real: &ChannelRealization,
    obs: &PilotNoise,
    p_pilot: f64,
    noise_w: f64,
) -> Result<ChannelEstimates> {
    if obs.count == 0 {
        return Err(Error::InvalidArgument("no pilot observation recorded".into()));
    }
    if obs.sum_direct.dim() != real.h_direct.dim() || obs.sum_cascaded.dim() != real.h_cascaded.dim() {
        return Err(Error::shape("pilot noise", real.h_cascaded.len(), obs.sum_cascaded.len()));
    }
    let n = obs.count as f64;
    let eff_noise = noise_w / n;
    let large = &real.large;
    let hhat_direct = Zip::from(&large.los_direct)
        .and(&large.beta_direct)
        .and(&real.nlos_direct)
        .and(&obs.sum_direct)
        .map_collect(|&l, &b, &z, &u| mmse_one(l, b, z, u / n, p_pilot, eff_noise));
    let beta_e = large.beta_elements();
    let hhat_cascaded = Zip::from(&large.los_cascaded)
        .and(&beta_e)
        .and(&real.nlos_cascaded)
        .and(&obs.sum_cascaded)
        .map_collect(|&l, &b, &z, &u| mmse_one(l, b, z, u / n, p_pilot, eff_noise));
    Ok(ChannelEstimates {
        hhat_direct,
        hhat_cascaded,
    })
}

/// Single-round MMSE estimate with fresh pilot noise.
pub fn mmse_estimate(real: &ChannelRealization, cfg: &SystemConfig, rng: &mut RandomStream) -> Result<ChannelEstimates> {
    let noise = cfg.noise_power_w();
    let mut obs = PilotNoise::empty(real);
    obs.observe(noise, rng);
    mmse_from_observations(real, &obs, cfg.p_pilot_w, noise)
}

/// `h + Σ h_e · e^{jφ_e}` for one AP-UE link.
pub fn effective_channel(h_direct: Complex64, cascaded_row: ArrayView1<Complex64>, phases: &[f64]) -> Result<Complex64> {
    if cascaded_row.len() != phases.len() {
        return Err(Error::shape("effective channel phases", cascaded_row.len(), phases.len()));
    }
    Ok(cascaded_row
        .iter()
        .zip(phases)
        .fold(h_direct, |acc, (&h, &phi)| acc + h * Complex64::cis(phi)))
}

/// Effective channels of every link, `M × K`.
pub fn effective_channels(direct: &Array2<Complex64>, cascaded: &Array3<Complex64>, phases: &[f64]) -> Result<Array2<Complex64>> {
    let (m, e, k) = cascaded.dim();
    if direct.dim() != (m, k) {
        return Err(Error::shape("direct channel rows", m * k, direct.len()));
    }
    if e != phases.len() {
        return Err(Error::shape("effective channel phases", e, phases.len()));
    }
    let rot: Vec<Complex64> = phases.iter().map(|&p| Complex64::cis(p)).collect();
    let mut out = direct.clone();
    for mi in 0..m {
        for (ei, r) in rot.iter().enumerate() {
            for ki in 0..k {
                out[[mi, ki]] += cascaded[[mi, ei, ki]] * r;
            }
        }
    }
    Ok(out)
}

impl ChannelRealization {
    pub fn effective(&self, phases: &[f64]) -> Result<Array2<Complex64>> {
        effective_channels(&self.h_direct, &self.h_cascaded, phases)
    }
}

impl ChannelEstimates {
    pub fn effective(&self, phases: &[f64]) -> Result<Array2<Complex64>> {
        effective_channels(&self.hhat_direct, &self.hhat_cascaded, phases)
    }

    /// Estimates that equal the true channels.
    pub fn perfect(real: &ChannelRealization) -> Self {
        ChannelEstimates {
            hhat_direct: real.h_direct.clone(),
            hhat_cascaded: real.h_cascaded.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;
    use crate::rng::Purpose;

    fn cfg() -> SystemConfig {
        let mut c = Preset::Desk.system();
        c.sigma_sh_db = 0.0;
        c
    }

    // Computed independently (L = 141.15107804806564 dB) and frozen.
    const PL_200M_DB: f64 = -116.68712789630499;

    #[test]
    fn path_loss_regression_at_200m() {
        let c = cfg();
        let h = Heights::between(15.0, 1.5);
        assert!((hata_constant_db(1.9e9, h) - 141.15107804806564).abs() < 1e-9);
        let db = path_loss_db(200.0, h, &c, 0.0).unwrap();
        assert!((db - PL_200M_DB).abs() < 1e-9, "{db}");
        let mut rng = RandomStream::from_seed(0);
        let lin = path_loss(200.0, h, &c, &mut rng).unwrap();
        assert!((lin / 2.1443082197681226e-12 - 1.0).abs() < 1e-9);
    }

    #[test]
    fn path_loss_piecewise_shape() {
        let c = cfg();
        let h = Heights::between(15.0, 1.5);
        let at = |d: f64| path_loss_db(d, h, &c, 0.0).unwrap();
        assert_eq!(at(5.0), at(10.0));
        let far = -hata_constant_db(c.fc_hz, h) - 35.0 * (0.05f64).log10();
        let mid = at(50.0);
        assert!(((far - mid) / mid).abs() < 1e-9);
        assert!(path_loss_db(0.0, h, &c, 0.0).is_err());
        assert!(path_loss_db(-1.0, h, &c, 0.0).is_err());
        // Shadowing only beyond d1.
        assert_eq!(path_loss_db(30.0, h, &c, 5.0).unwrap(), at(30.0));
        assert_eq!(path_loss_db(80.0, h, &c, 5.0).unwrap(), at(80.0) + 5.0);
    }

    #[test]
    fn topology_heights_and_ris_positions() {
        let c = cfg();
        let t = generate_topology(&c, &mut RandomStream::new(3, Purpose::Topology));
        assert!(t.ap_pos.iter().all(|p| p[2] == 15.0 && p[0].hypot(p[1]) <= 100.0));
        assert!(t.ue_pos.iter().all(|p| p[2] == 1.5 && p[0].hypot(p[1]) <= 100.0));
        assert!(t.ris_pos.iter().all(|p| p[2] == 20.0));
        let q = 100.0 / (2.0 * 2f64.sqrt());
        assert!((t.ris_pos[0][0] + q).abs() < 1e-12 && (t.ris_pos[0][1] + q).abs() < 1e-12);
        assert!((t.ris_pos[1][0] - q).abs() < 1e-12 && (t.ris_pos[1][1] - q).abs() < 1e-12);

        let mut one = c.clone();
        one.num_ris = 1;
        let t = generate_topology(&one, &mut RandomStream::from_seed(1));
        assert!(t.ris_pos[0][0].abs() < 1e-12 && t.ris_pos[0][1].abs() < 1e-12);
    }

    fn one_link_config(kappa: f64, model: CascadeModel) -> (SystemConfig, NetworkTopology) {
        let mut c = cfg();
        c.num_ues = 1;
        c.num_aps = 1;
        c.num_ris = 1;
        c.elements_per_ris = 1;
        c.rician_k_direct = kappa;
        c.rician_k_ris = kappa;
        c.cascade_model = model;
        let topo = NetworkTopology {
            ue_pos: vec![[60.0, 10.0, 1.5]],
            ap_pos: vec![[-30.0, 40.0, 15.0]],
            ris_pos: vec![[0.0, 0.0, 20.0]],
        };
        (c, topo)
    }

    fn mc_power(c: &SystemConfig, topo: &NetworkTopology, draws: usize) -> (f64, f64, LargeScale) {
        let large = LargeScale::compute(topo, c, &mut RandomStream::from_seed(1)).unwrap();
        let mut rd = RandomStream::from_seed(2);
        let mut rc = RandomStream::from_seed(3);
        let (mut pd, mut pc) = (0.0, 0.0);
        for _ in 0..draws {
            let r = ChannelRealization::sample(large.clone(), &mut rd, &mut rc);
            pd += r.h_direct[[0, 0]].norm_sqr();
            pc += r.h_cascaded[[0, 0, 0]].norm_sqr();
        }
        (pd / draws as f64, pc / draws as f64, large)
    }

    #[test]
    fn rayleigh_limit_power_matches_path_loss() {
        let (c, topo) = one_link_config(0.0, CascadeModel::SegmentProduct);
        let (pd, pc, large) = mc_power(&c, &topo, 100_000);
        assert_eq!(large.los_direct[[0, 0]], Complex64::new(0.0, 0.0));
        assert_eq!(large.los_cascaded[[0, 0, 0]], Complex64::new(0.0, 0.0));
        let d = distance(topo.ap_pos[0], topo.ue_pos[0], 1.0);
        let g = path_loss_db(d, Heights::between(15.0, 1.5), &c, 0.0).map(db_to_linear).unwrap();
        assert!((pd / g - 1.0).abs() < 0.02, "{}", pd / g);
        let g_ar = path_loss_db(distance(topo.ap_pos[0], topo.ris_pos[0], 1.0), Heights::between(15.0, 20.0), &c, 0.0)
            .map(db_to_linear)
            .unwrap();
        let g_ru = path_loss_db(distance(topo.ris_pos[0], topo.ue_pos[0], 1.0), Heights::between(20.0, 1.5), &c, 0.0)
            .map(db_to_linear)
            .unwrap();
        assert!((pc / (g_ar * g_ru) - 1.0).abs() < 0.03, "{}", pc / (g_ar * g_ru));
    }

    #[test]
    fn cascaded_power_matches_model_gain_with_rician_split() {
        for model in [CascadeModel::SegmentProduct, CascadeModel::UnfoldedPath] {
            let (c, topo) = one_link_config(10.0, model);
            let (_, pc, large) = mc_power(&c, &topo, 100_000);
            let g = large.beta_cascaded[[0, 0, 0]] * 11.0;
            assert!((pc / g - 1.0).abs() < 0.03, "{model:?}: {}", pc / g);
            assert!((large.los_cascaded[[0, 0, 0]].norm_sqr() / (g * 10.0 / 11.0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_limit_has_negligible_spread() {
        let (c, topo) = one_link_config(1e6, CascadeModel::SegmentProduct);
        let large = LargeScale::compute(&topo, &c, &mut RandomStream::from_seed(1)).unwrap();
        let mean = large.los_direct[[0, 0]];
        let mut rng = RandomStream::from_seed(5);
        let draws = 2000;
        let var = (0..draws)
            .map(|_| {
                let r = ChannelRealization::sample(large.clone(), &mut rng.fork(), &mut rng.fork());
                (r.h_direct[[0, 0]] - mean).norm_sqr()
            })
            .sum::<f64>()
            / draws as f64;
        assert!(var < 1e-4 * mean.norm_sqr());
    }

    #[test]
    fn sampling_is_reproducible() {
        let c = cfg();
        let topo = generate_topology(&c, &mut RandomStream::from_seed(1));
        let a = sample_channels(&topo, &c, &mut RandomStream::from_seed(9)).unwrap();
        let b = sample_channels(&topo, &c, &mut RandomStream::from_seed(9)).unwrap();
        assert_eq!(a, b);
    }

    fn desk_real(c: &SystemConfig, seed: u64) -> ChannelRealization {
        let topo = generate_topology(c, &mut RandomStream::from_seed(seed));
        sample_channels(&topo, c, &mut RandomStream::from_seed(seed + 100)).unwrap()
    }

    #[test]
    fn noiseless_and_zero_pilot_limits() {
        let c = cfg();
        let real = desk_real(&c, 1);
        let mut obs = PilotNoise::empty(&real);
        // Channel gains here are ~1e-12, so the noiseless limit needs a noise
        // power far below that scale.
        obs.observe(1e-40, &mut RandomStream::from_seed(2));
        let est = mmse_from_observations(&real, &obs, c.p_pilot_w, 1e-40).unwrap();
        Zip::from(&est.hhat_direct).and(&real.h_direct).for_each(|a, b| {
            assert!((a - b).norm() <= 1e-9 * b.norm(), "{a} {b}");
        });
        Zip::from(&est.hhat_cascaded).and(&real.h_cascaded).for_each(|a, b| {
            assert!((a - b).norm() <= 1e-9 * b.norm());
        });
        let est = mmse_from_observations(&real, &obs, 0.0, c.noise_power_w()).unwrap();
        assert_eq!(est.hhat_direct, real.large.los_direct);
        assert_eq!(est.hhat_cascaded, real.large.los_cascaded);
    }

    #[test]
    fn mmse_error_orthogonal_to_observation() {
        // The error of the MMSE estimate is uncorrelated with the observation
        // when the fading is random, which is the setting the estimator is
        // optimal for: redraw h̃ with every pilot repetition.
        let (beta, p, noise): (f64, f64, f64) = (2.0e-11, 0.1, 10f64.powf(-13.6));
        let mut rng = RandomStream::from_seed(11);
        let reps = 100_000;
        let mut samples = Vec::with_capacity(reps);
        for _ in 0..reps {
            let z = complex_normal(&mut rng);
            let u = complex_normal(&mut rng) * noise.sqrt();
            let h = z * beta.sqrt();
            let y = z * (p * beta).sqrt() + u;
            let hhat = mmse_one(Complex64::new(0.0, 0.0), beta, z, u, p, noise);
            samples.push((hhat - h) * y.conj());
        }
        let mean = samples.iter().sum::<Complex64>() / reps as f64;
        let var = samples.iter().map(|s| (s - mean).norm_sqr()).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        assert!(mean.norm() < 3.0 * se, "{} vs {}", mean.norm(), se);
    }

    #[test]
    fn mmse_error_non_increasing_in_pilot_power() {
        let (beta, noise): (f64, f64) = (2.0e-11, 10f64.powf(-13.6));
        let err = |p: f64| {
            let mut rng = RandomStream::from_seed(4);
            (0..10_000)
                .map(|_| {
                    let z = complex_normal(&mut rng);
                    let u = complex_normal(&mut rng) * noise.sqrt();
                    (mmse_one(Complex64::new(0.0, 0.0), beta, z, u, p, noise) - z * beta.sqrt()).norm_sqr()
                })
                .sum::<f64>()
        };
        let (a, b, c) = (err(1e-3), err(1e-2), err(1e-1));
        assert!(a >= b && b >= c, "{a} {b} {c}");
    }

    #[test]
    fn more_pilot_rounds_tighten_estimates() {
        let c = cfg();
        let real = desk_real(&c, 3);
        let noise = c.noise_power_w() * 1e4;
        let mut rng = RandomStream::from_seed(8);
        let mut obs = PilotNoise::empty(&real);
        let mse = |est: &ChannelEstimates| (&est.hhat_direct - &real.h_direct).mapv(|e| e.norm_sqr()).sum();
        obs.observe(noise, &mut rng);
        let one = mse(&mmse_from_observations(&real, &obs, c.p_pilot_w, noise).unwrap());
        for _ in 0..63 {
            obs.observe(noise, &mut rng);
        }
        let many = mse(&mmse_from_observations(&real, &obs, c.p_pilot_w, noise).unwrap());
        assert!(many < one, "{many} !< {one}");
    }

    #[test]
    fn effective_channel_examples() {
        let h = Complex64::new(0.3, -0.2);
        let row = ndarray::arr1(&[Complex64::new(0.1, 0.4), Complex64::new(-0.5, 0.2)]);
        let f = effective_channel(h, row.view(), &[0.0, 0.0]).unwrap();
        assert!((f - (h + row[0] + row[1])).norm() < 1e-15);

        let single = ndarray::arr1(&[Complex64::new(0.1, 0.4)]);
        let phi = (h.arg() - single[0].arg()).rem_euclid(2.0 * PI);
        let f = effective_channel(h, single.view(), &[phi]).unwrap();
        assert!((f.norm() - (h.norm() + single[0].norm())).abs() < 1e-12);

        assert!(effective_channel(h, row.view(), &[0.0]).is_err());
    }

    #[test]
    fn effective_matrix_matches_term_by_term_sum() {
        let mut rng = RandomStream::from_seed(21);
        let direct = complex_normal_array((2, 3), &mut rng);
        let casc = complex_normal_array((2, 2, 3), &mut rng);
        let phases: Vec<f64> = (0..2).map(|_| rng.gen::<f64>() * 2.0 * PI).collect();
        let f = effective_channels(&direct, &casc, &phases).unwrap();
        for m in 0..2 {
            for k in 0..3 {
                let mut acc = direct[[m, k]];
                for e in 0..2 {
                    let (s, c) = phases[e].sin_cos();
                    let h = casc[[m, e, k]];
                    acc += Complex64::new(h.re * c - h.im * s, h.re * s + h.im * c);
                }
                assert!((acc - f[[m, k]]).norm() < 1e-14);
            }
        }
    }

    proptest::proptest! {
        #[test]
        fn path_loss_monotone_beyond_d0(a in 10.0f64..2000.0, b in 10.0f64..2000.0) {
            let c = cfg();
            let h = Heights::between(15.0, 1.5);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            proptest::prop_assert!(path_loss_db(lo, h, &c, 0.0).unwrap() >= path_loss_db(hi, h, &c, 0.0).unwrap());
        }

        #[test]
        fn effective_channel_triangle_inequality(seed in 0u64..1000, n in 1usize..8) {
            let mut rng = RandomStream::from_seed(seed);
            let h = complex_normal(&mut rng);
            let row = ndarray::Array1::from_shape_simple_fn(n, || complex_normal(&mut rng));
            let phases: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() * 2.0 * PI).collect();
            let f = effective_channel(h, row.view(), &phases).unwrap();
            let bound = h.norm() + row.iter().map(|x| x.norm()).sum::<f64>();
            proptest::prop_assert!(f.norm() <= bound + 1e-12);
        }
    }
}
