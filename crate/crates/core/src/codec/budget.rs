use serde::{Deserialize, Serialize};

use super::Mode;
use crate::error::{Error, Result};
use crate::inr::{kernel_len, BandRef};
use crate::nn::NetDims;
use crate::wavelet::{level_shapes, orientation_count};

pub const MIN_WIDTH: usize = 24;
pub const MAX_WIDTH: usize = 1024;
pub const DEPTH: usize = 3;

/// What one network generates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "kebab-case")]
pub enum NetRole {
    /// The whole normalized tensor.
    Plain,
    /// Output channel `c` generates `bands[c]`, all at pyramid level `scale`.
    Subnet { scale: usize, bands: Vec<BandRef> },
    /// Kernel predictor generating every orientation at `target_scale` from
    /// the subnet of `target_scale + 1`.
    Enhancement { target_scale: usize },
}

/// One network of a plan: its role, output width, and the number of
/// coefficients it accounts for (the allocation weight).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanEntry {
    #[serde(flatten)]
    pub role: NetRole,
    pub outputs: usize,
    pub coefficients: usize,
    pub share: usize,
    pub width: usize,
    pub params: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub budget: usize,
    pub entries: Vec<PlanEntry>,
}

impl BudgetPlan {
    pub fn total_params(&self) -> usize {
        self.entries.iter().map(|e| e.params).sum()
    }

    pub fn enhancement_params(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| matches!(e.role, NetRole::Enhancement { .. }))
            .map(|e| e.params)
            .sum()
    }

    pub fn dims(&self, entry: usize, p: usize) -> NetDims {
        let e = &self.entries[entry];
        NetDims::uniform(p, e.width, DEPTH, e.outputs)
    }
}

pub fn params_at(p: usize, width: usize, outputs: usize) -> usize {
    NetDims::uniform(p, width, DEPTH, outputs).parameter_count()
}

/// Widest network in `[MIN_WIDTH, MAX_WIDTH]` whose size fits `share`.
fn widest_within(p: usize, outputs: usize, share: usize) -> usize {
    let (mut lo, mut hi) = (MIN_WIDTH, MAX_WIDTH);
    while lo < hi {
        let mid = (lo + hi).div_ceil(2);
        if params_at(p, mid, outputs) <= share {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    lo
}

/// Networks a mode needs for a `levels`-level pyramid over `shape`, with
/// output widths and coefficient counts.
pub fn plan_roles(shape: &[usize], mode: Mode, levels: usize, window: usize, enhance_scale: usize) -> Result<Vec<(NetRole, usize, usize)>> {
    let p = shape.len();
    if mode == Mode::Plain {
        return Ok(vec![(NetRole::Plain, 1, shape.iter().product())]);
    }
    let shapes = level_shapes(shape, levels)?;
    let count = |j: usize| shapes[j].iter().product::<usize>();
    let o = orientation_count(p);
    let mut roles = vec![(NetRole::Subnet { scale: levels, bands: vec![BandRef::Approx] }, 1, count(levels))];
    for j in (1..=levels).rev() {
        let detail = |orientation| BandRef::Detail { scale: j, orientation };
        match mode {
            Mode::Eq2 => {
                for i in 1..=o {
                    roles.push((NetRole::Subnet { scale: j, bands: vec![detail(i)] }, 1, count(j)));
                }
            }
            Mode::WienInr if j == enhance_scale => {
                roles.push((NetRole::Enhancement { target_scale: j }, o * kernel_len(window, p), o * count(j)));
            }
            _ => {
                roles.push((NetRole::Subnet { scale: j, bands: (1..=o).map(detail).collect() }, o, o * count(j)));
            }
        }
    }
    Ok(roles)
}

/// Splits `budget` parameters over the networks of `mode` in proportion to
/// the coefficients each one generates. Networks whose proportional share
/// is below the smallest allowed size are pinned to that size and the rest
/// is re-split among the others. Each share is then realized by the widest
/// three-hidden-layer network that fits it.
pub fn allocate_params(
    budget: usize,
    shape: &[usize],
    mode: Mode,
    levels: usize,
    window: usize,
    enhance_scale: usize,
) -> Result<BudgetPlan> {
    let p = shape.len();
    let roles = plan_roles(shape, mode, levels, window, enhance_scale)?;
    let minima: Vec<usize> = roles.iter().map(|(_, out, _)| params_at(p, MIN_WIDTH, *out)).collect();
    let minimum: usize = minima.iter().sum();
    if budget < minimum {
        return Err(Error::BudgetTooSmall { budget, minimum });
    }
    let mut pinned = vec![false; roles.len()];
    let mut shares = vec![0usize; roles.len()];
    loop {
        let fixed: usize = (0..roles.len()).filter(|&i| pinned[i]).map(|i| minima[i]).sum();
        let free = budget - fixed;
        let weight: u128 = (0..roles.len())
            .filter(|&i| !pinned[i])
            .map(|i| roles[i].2 as u128)
            .sum();
        let mut changed = false;
        for i in 0..roles.len() {
            shares[i] = if pinned[i] {
                minima[i]
            } else {
                (free as u128 * roles[i].2 as u128 / weight.max(1)) as usize
            };
            if !pinned[i] && shares[i] < minima[i] {
                pinned[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let entries = roles
        .into_iter()
        .zip(shares)
        .map(|((role, outputs, coefficients), share)| {
            let width = widest_within(p, outputs, share);
            PlanEntry {
                role,
                outputs,
                coefficients,
                share,
                width,
                params: params_at(p, width, outputs),
            }
        })
        .collect();
    Ok(BudgetPlan { budget, entries })
}
