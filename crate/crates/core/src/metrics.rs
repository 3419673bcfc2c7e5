//! Matched-filter SINR, rates, constraint checks and the penalized rewards.

use std::fmt;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::topology::{ChannelEstimates, ChannelRealization};

/// Binary `K × M` association matrix. Rows are UEs, columns are APs.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AssociationMatrix {
    k: usize,
    m: usize,
    /// Row-major `K × M` entries in {0, 1}.
    bits: Vec<u8>,
}

impl AssociationMatrix {
    /// Builds a matrix from its row-major entries without checking feasibility.
    pub fn from_bits(k: usize, m: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != k * m {
            return Err(Error::shape("association entries", k * m, bits.len()));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::InfeasibleAssociation("entries must be 0 or 1".into()));
        }
        Ok(AssociationMatrix { k, m, bits })
    }

    /// Matrix where AP `m` serves UE `serving[m]`.
    pub fn from_assignment(k: usize, serving: &[usize]) -> Result<Self> {
        let m = serving.len();
        let mut bits = vec![0; k * m];
        for (col, &row) in serving.iter().enumerate() {
            if row >= k {
                return Err(Error::InvalidArgument(format!("AP {col} assigned to UE {row} of {k}")));
            }
            bits[row * m + col] = 1;
        }
        Ok(AssociationMatrix { k, m, bits })
    }

    pub fn num_ues(&self) -> usize {
        self.k
    }

    pub fn num_aps(&self) -> usize {
        self.m
    }

    pub fn get(&self, k: usize, m: usize) -> bool {
        self.bits[k * self.m + m] == 1
    }

    pub fn set(&mut self, k: usize, m: usize, on: bool) {
        self.bits[k * self.m + m] = on as u8;
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn row_sum(&self, k: usize) -> usize {
        self.bits[k * self.m..(k + 1) * self.m].iter().map(|&b| b as usize).sum()
    }

    pub fn col_sum(&self, m: usize) -> usize {
        (0..self.k).map(|k| self.bits[k * self.m + m] as usize).sum()
    }

    /// APs serving UE `k`.
    pub fn serving_set(&self, k: usize) -> Vec<usize> {
        (0..self.m).filter(|&m| self.get(k, m)).collect()
    }

    /// UE served by each AP, if every column has exactly one entry.
    pub fn assignment(&self) -> Option<Vec<usize>> {
        (0..self.m)
            .map(|m| {
                let rows: Vec<usize> = (0..self.k).filter(|&k| self.get(k, m)).collect();
                (rows.len() == 1).then(|| rows[0])
            })
            .collect()
    }

    /// Checks that every AP serves exactly one UE and every UE has an AP.
    pub fn check_feasible(&self) -> Result<()> {
        for m in 0..self.m {
            let s = self.col_sum(m);
            if s != 1 {
                return Err(Error::InfeasibleAssociation(format!("AP {m} serves {s} UEs")));
            }
        }
        for k in 0..self.k {
            if self.row_sum(k) == 0 {
                return Err(Error::InfeasibleAssociation(format!("UE {k} has no serving AP")));
            }
        }
        Ok(())
    }

    pub fn is_feasible(&self) -> bool {
        self.check_feasible().is_ok()
    }
}

impl fmt::Display for AssociationMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for k in 0..self.k {
            if k > 0 {
                f.write_str(";")?;
            }
            for m in 0..self.m {
                write!(f, "{}", self.bits[k * self.m + m])?;
            }
        }
        Ok(())
    }
}

/// Where the effective channel in the signal role comes from.
#[derive(Debug, Clone, Copy)]
pub enum SignalChannels<'a> {
    /// Physical environment: true channels.
    Truth(&'a ChannelRealization),
    /// Digital twin: the stored estimates play both roles.
    Estimates,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub sinr: Vec<f64>,
    /// Per-UE rate in bit/s/Hz.
    pub rate: Vec<f64>,
    pub sum_rate: f64,
    /// UEs whose rate is below the minimum.
    pub violators: Vec<usize>,
}

impl RateReport {
    pub fn from_sinr(sinr: Vec<f64>, r_min: f64) -> Self {
        let rate: Vec<f64> = sinr.iter().map(|&a| (1.0 + a).log2()).collect();
        let sum_rate = rate.iter().sum();
        let violators = rate
            .iter()
            .enumerate()
            .filter(|(_, &r)| r < r_min)
            .map(|(k, _)| k)
            .collect();
        RateReport {
            sinr,
            rate,
            sum_rate,
            violators,
        }
    }
}

/// SINR of every UE from effective channels `f` (signal role) and `fhat`
/// (combining role), both `M × K`.
pub fn sinr_from_effective(
    assoc: &AssociationMatrix,
    p: &[f64],
    f: &Array2<Complex64>,
    fhat: &Array2<Complex64>,
    noise_w: f64,
) -> Result<Vec<f64>> {
    let (m, k) = f.dim();
    if assoc.num_ues() != k || assoc.num_aps() != m {
        return Err(Error::shape("association vs channels", m * k, assoc.num_aps() * assoc.num_ues()));
    }
    if fhat.dim() != (m, k) {
        return Err(Error::shape("estimated channels", m * k, fhat.len()));
    }
    if p.len() != k {
        return Err(Error::shape("power vector", k, p.len()));
    }
    assoc.check_feasible()?;

    let mut out = Vec::with_capacity(k);
    for ki in 0..k {
        let serving = assoc.serving_set(ki);
        let gain = |kj: usize| {
            serving
                .iter()
                .map(|&mi| fhat[[mi, ki]].conj() * f[[mi, kj]])
                .sum::<Complex64>()
                .norm_sqr()
        };
        let signal = p[ki] * gain(ki);
        let noise: f64 = serving.iter().map(|&mi| noise_w * fhat[[mi, ki]].norm_sqr()).sum();
        let interference: f64 = (0..k).filter(|&kj| kj != ki).map(|kj| p[kj] * gain(kj)).sum();
        let denom = noise + interference;
        out.push(if denom > 0.0 { signal / denom } else { 0.0 });
    }
    Ok(out)
}

/// SINR of every UE under phases `phi`.
pub fn sinr(
    assoc: &AssociationMatrix,
    p: &[f64],
    phi: &[f64],
    signal: SignalChannels<'_>,
    est: &ChannelEstimates,
    noise_w: f64,
) -> Result<Vec<f64>> {
    let fhat = est.effective(phi)?;
    match signal {
        SignalChannels::Truth(real) => {
            let f = real.effective(phi)?;
            sinr_from_effective(assoc, p, &f, &fhat, noise_w)
        }
        SignalChannels::Estimates => sinr_from_effective(assoc, p, &fhat, &fhat, noise_w),
    }
}

pub fn rate_report(
    assoc: &AssociationMatrix,
    p: &[f64],
    phi: &[f64],
    signal: SignalChannels<'_>,
    est: &ChannelEstimates,
    noise_w: f64,
    r_min: f64,
) -> Result<RateReport> {
    Ok(RateReport::from_sinr(sinr(assoc, p, phi, signal, est, noise_w)?, r_min))
}

/// Sum-rate when every UE meets the minimum rate, otherwise the number of
/// violators times a negative penalty. Serves as both the agents' reward and
/// the swarm's fitness.
pub fn penalized_sum_rate(report: &RateReport, penalty: f64) -> f64 {
    if report.violators.is_empty() {
        report.sum_rate
    } else {
        report.violators.len() as f64 * penalty
    }
}

pub fn pcrb_reward(report: &RateReport, penalty_c: f64) -> f64 {
    penalized_sum_rate(report, penalty_c)
}
