//! Implicit enumeration for the association plus cyclic coordinate search
//! over six-level power and phase grids.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::metrics::AssociationMatrix;

pub const LEVELS: usize = 6;

const MAX_KM: usize = 20;

/// Upper bound on full coordinate sweeps; a sweep that changes nothing ends
/// the search earlier.
const MAX_SWEEPS: usize = 100;

/// `{0, p_max/5, …, p_max}`.
pub fn power_levels(p_max: f64) -> [f64; LEVELS] {
    std::array::from_fn(|i| p_max * i as f64 / (LEVELS - 1) as f64)
}

/// `{0, π/3, …, 5π/3}`.
pub fn phase_levels() -> [f64; LEVELS] {
    std::array::from_fn(|i| 2.0 * PI * i as f64 / LEVELS as f64)
}

/// Depth-first assignment of APs to UEs, column by column, pruning branches
/// whose remaining columns cannot cover the still-unserved UEs. Returns the
/// best association and fitness; ties keep the first leaf in depth-first
/// order, where lower UE indices are tried first.
pub fn implicit_enumeration<F>(k: usize, m: usize, mut fitness: F) -> Result<(AssociationMatrix, f64)>
where
    F: FnMut(&AssociationMatrix) -> Result<f64>,
{
    if k * m > MAX_KM {
        return Err(Error::TooLarge(format!("K·M = {} exceeds {MAX_KM}", k * m)));
    }
    if k == 0 || k > m {
        return Err(Error::InfeasibleAssociation(format!("{m} APs cannot cover {k} UEs")));
    }
    struct Search<'a, F> {
        k: usize,
        m: usize,
        serving: Vec<usize>,
        served: Vec<usize>,
        uncovered: usize,
        best: Option<(AssociationMatrix, f64)>,
        fitness: &'a mut F,
    }
    impl<F: FnMut(&AssociationMatrix) -> Result<f64>> Search<'_, F> {
        fn visit(&mut self, col: usize) -> Result<()> {
            if self.uncovered > self.m - col {
                return Ok(());
            }
            if col == self.m {
                let a = AssociationMatrix::from_assignment(self.k, &self.serving)?;
                let f = (self.fitness)(&a)?;
                if self.best.as_ref().map_or(true, |b| f > b.1) {
                    self.best = Some((a, f));
                }
                return Ok(());
            }
            for ue in 0..self.k {
                self.serving[col] = ue;
                self.served[ue] += 1;
                if self.served[ue] == 1 {
                    self.uncovered -= 1;
                }
                self.visit(col + 1)?;
                if self.served[ue] == 1 {
                    self.uncovered += 1;
                }
                self.served[ue] -= 1;
            }
            Ok(())
        }
    }
    let mut s = Search {
        k,
        m,
        serving: vec![0; m],
        served: vec![0; k],
        uncovered: k,
        best: None,
        fitness: &mut fitness,
    };
    s.visit(0)?;
    Ok(s.best.expect("K ≤ M admits a feasible association"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinateResult {
    pub level_p: Vec<usize>,
    pub level_phi: Vec<usize>,
    pub p: Vec<f64>,
    pub phi: Vec<f64>,
    pub value: f64,
    pub sweeps: usize,
    pub evaluations: usize,
}

/// Cyclic coordinate search: every power then every phase coordinate in turn
/// is set to its best level with the others fixed, until a full sweep brings
/// no strict improvement.
pub fn coordinate_search<F>(
    p_max: f64,
    start_p: Vec<usize>,
    start_phi: Vec<usize>,
    mut objective: F,
) -> Result<CoordinateResult>
where
    F: FnMut(&[f64], &[f64]) -> Result<f64>,
{
    let pl = power_levels(p_max);
    let fl = phase_levels();
    if start_p.iter().chain(&start_phi).any(|&l| l >= LEVELS) {
        return Err(Error::InvalidArgument(format!("grid levels must be below {LEVELS}")));
    }
    let (mut lp, mut lf) = (start_p, start_phi);
    let values = |lp: &[usize], lf: &[usize]| -> (Vec<f64>, Vec<f64>) {
        (lp.iter().map(|&l| pl[l]).collect(), lf.iter().map(|&l| fl[l]).collect())
    };
    let (p, phi) = values(&lp, &lf);
    let mut best = objective(&p, &phi)?;
    let mut evaluations = 1;
    let mut sweeps = 0;
    let n = lp.len() + lf.len();
    while sweeps < MAX_SWEEPS {
        sweeps += 1;
        let mut improved = false;
        for c in 0..n {
            let current = if c < lp.len() { lp[c] } else { lf[c - lp.len()] };
            let mut choice = current;
            for level in 0..LEVELS {
                if level == current {
                    continue;
                }
                let (mut tp, mut tf) = (lp.clone(), lf.clone());
                if c < tp.len() {
                    tp[c] = level;
                } else {
                    tf[c - lp.len()] = level;
                }
                let (p, phi) = values(&tp, &tf);
                let v = objective(&p, &phi)?;
                evaluations += 1;
                if v > best {
                    best = v;
                    choice = level;
                }
            }
            if choice != current {
                improved = true;
                if c < lp.len() {
                    lp[c] = choice;
                } else {
                    lf[c - lp.len()] = choice;
                }
            }
        }
        if !improved {
            break;
        }
    }
    let (p, phi) = values(&lp, &lf);
    Ok(CoordinateResult {
        level_p: lp,
        level_phi: lf,
        p,
        phi,
        value: best,
        sweeps,
        evaluations,
    })
}
