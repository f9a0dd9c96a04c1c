//! Dispatch policies.
//!
//! * `UncAgn`: every participant greedily heads for its nearest free spot.
//! * `CordAgn`: one Hungarian solve over travel times.
//! * `CordOracle`: Hungarian over competitor-aware costs (blocked pairs are
//!   infeasible, contested ones are inflated by capture probabilities).
//! * `CordApprox`: Hungarian over travel time divided by predicted
//!   availability of the spot's cell.
//!
//! Free spots in a cell are interchangeable, so a cell with `f` free spots
//! contributes `f` identical columns.

use std::fmt;
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::grid::{manhattan, CellCoord};
use crate::matching::{hungarian_assign, CostMatrix, INFEASIBLE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "unc-agn")]
    UncAgn,
    #[serde(rename = "cord-agn")]
    CordAgn,
    #[serde(rename = "cord-oracle")]
    CordOracle,
    #[serde(rename = "cord-approx")]
    CordApprox,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::UncAgn,
        StrategyKind::CordAgn,
        StrategyKind::CordApprox,
        StrategyKind::CordOracle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::UncAgn => "unc-agn",
            StrategyKind::CordAgn => "cord-agn",
            StrategyKind::CordOracle => "cord-oracle",
            StrategyKind::CordApprox => "cord-approx",
        }
    }

    pub fn is_coordinated(self) -> bool {
        self != StrategyKind::UncAgn
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "unc-agn" | "uncagn" => Ok(StrategyKind::UncAgn),
            "cord-agn" | "cordagn" => Ok(StrategyKind::CordAgn),
            "cord-oracle" | "cordoracle" => Ok(StrategyKind::CordOracle),
            "cord-approx" | "cordapprox" => Ok(StrategyKind::CordApprox),
            other => Err(SimError::config(format!(
                "unknown strategy {other:?} (expected unc-agn, cord-agn, cord-oracle or cord-approx)"
            ))),
        }
    }
}

/// Competitor positions known to the oracle.
#[derive(Debug, Clone, Copy)]
pub struct OracleContext<'a> {
    pub competitors: &'a [CellCoord],
    pub radius: u32,
    /// When set, reachable sets are clipped to an `n x n` grid instead of the
    /// unbounded lattice.
    pub clip_to: Option<u32>,
}

/// Greedy nearest-spot choice per participant. Many participants may pick the
/// same cell; equidistant cells are chosen uniformly at random.
pub fn unc_agn_targets<R: Rng + ?Sized>(
    participants: &[CellCoord],
    spots: &[(CellCoord, u32)],
    rng: &mut R,
) -> Vec<Option<CellCoord>> {
    let cells: Vec<CellCoord> = spots.iter().filter(|s| s.1 > 0).map(|s| s.0).collect();
    let mut nearest = Vec::new();
    participants
        .iter()
        .map(|&d| {
            let best = cells.iter().map(|&s| manhattan(d, s)).min()?;
            nearest.clear();
            nearest.extend(cells.iter().copied().filter(|&s| manhattan(d, s) == best));
            nearest.choose(rng).copied()
        })
        .collect()
}

/// Travel-time matrix, one row per participant and one column per spot.
pub fn cord_agn_matrix(participants: &[CellCoord], columns: &[CellCoord]) -> CostMatrix {
    CostMatrix::from_fn(participants.len(), columns.len(), |r, c| {
        manhattan(participants[r], columns[c]) as f64
    })
}

/// Moves a competitor can make before the participant is one step from the
/// visibility ring: `min(tau - R - 1, R)`.
pub fn t_budget(tau_ds: u32, radius: u32) -> Result<u32> {
    if tau_ds <= radius {
        return Err(SimError::Contract(format!(
            "move budget needs tau > R (tau = {tau_ds}, R = {radius})"
        )));
    }
    Ok((tau_ds - radius - 1).min(radius))
}

/// Cells within `t_c` steps of `c` on the unbounded lattice.
pub fn reachable_set(c: CellCoord, t_c: u32) -> Vec<(i64, i64)> {
    let (ci, cj, t) = (c.i as i64, c.j as i64, t_c as i64);
    let mut out = Vec::with_capacity((1 + 2 * t * (t + 1)) as usize);
    for di in -t..=t {
        let span = t - di.abs();
        for dj in -span..=span {
            out.push((ci + di, cj + dj));
        }
    }
    out
}

/// `(favourable, total)` counts over the reachable set: endpoints at
/// distance exactly `R` from `s`. Clipping drops off-grid cells.
pub fn capture_counts(c: CellCoord, s: CellCoord, radius: u32, t_c: u32, clip_to: Option<u32>) -> (u32, u32) {
    let (si, sj) = (s.i as i64, s.j as i64);
    let mut favourable = 0;
    let mut total = 0;
    for (zi, zj) in reachable_set(c, t_c) {
        if let Some(n) = clip_to {
            let n = n as i64;
            if zi < 0 || zj < 0 || zi >= n || zj >= n {
                continue;
            }
        }
        total += 1;
        if (zi - si).unsigned_abs() + (zj - sj).unsigned_abs() == radius as u64 {
            favourable += 1;
        }
    }
    (favourable, total)
}

/// Probability that competitor `c` ends its move budget on the radius-`R`
/// ring around `s`, with the budget derived from the participant's travel
/// time `tau_ds`.
pub fn capture_probability(c: CellCoord, s: CellCoord, radius: u32, tau_ds: u32) -> Result<f64> {
    capture_probability_clipped(c, s, radius, tau_ds, None)
}

pub fn capture_probability_clipped(
    c: CellCoord,
    s: CellCoord,
    radius: u32,
    tau_ds: u32,
    clip_to: Option<u32>,
) -> Result<f64> {
    if manhattan(c, s) <= radius {
        return Err(SimError::Contract(format!(
            "capture probability needs the competitor outside R (tau(c,s) = {}, R = {radius})",
            manhattan(c, s)
        )));
    }
    let t_c = t_budget(tau_ds, radius)?;
    let (fav, total) = capture_counts(c, s, radius, t_c, clip_to);
    Ok(if total == 0 { 0.0 } else { fav as f64 / total as f64 })
}

/// Competitor-aware cost of sending the participant at `d` to spot `s`.
pub fn oracle_cost(d: CellCoord, s: CellCoord, ctx: &OracleContext<'_>) -> f64 {
    let tau = manhattan(d, s);
    let r = ctx.radius;
    let nearest = ctx.competitors.iter().map(|&c| manhattan(c, s)).min();
    match nearest {
        None => return tau as f64,
        Some(m) if tau < m => return tau as f64,
        Some(m) if m <= r && m < tau => return INFEASIBLE,
        _ => {}
    }
    let mut penalty = 0.0;
    for &c in ctx.competitors {
        let tc = manhattan(c, s);
        if tc < tau && tc > r {
            let t_c = (tau - r - 1).min(r);
            let (fav, total) = capture_counts(c, s, r, t_c, ctx.clip_to);
            if total > 0 {
                penalty += tau as f64 * fav as f64 / total as f64;
            }
        }
    }
    tau as f64 + penalty
}

/// Oracle cost as a function of travel time for one spot cell. Precomputes
/// the competitor terms once so each `(d, s)` entry is a table lookup.
#[derive(Debug, Clone)]
pub struct OracleSpotCosts {
    /// `cost[tau]` for `tau` in `0..=max_tau`.
    cost: Vec<f64>,
}

impl OracleSpotCosts {
    pub fn new(s: CellCoord, max_tau: u32, ctx: &OracleContext<'_>) -> Self {
        let r = ctx.radius;
        let mut dists: Vec<(u32, CellCoord)> = ctx
            .competitors
            .iter()
            .map(|&c| (manhattan(c, s), c))
            .collect();
        dists.sort_unstable_by_key(|d| d.0);
        let nearest = dists.first().map(|d| d.0);

        // For each budget t (0..=R) the probability mass per competitor
        // outside R. Budgets never exceed R, so competitors beyond 2R cannot
        // reach the ring and contribute nothing.
        let budgets = r as usize + 1;
        let outside: Vec<(u32, Vec<f64>)> = dists
            .iter()
            .filter(|d| d.0 > r && d.0 <= 2 * r)
            .map(|&(tc, c)| {
                let probs = (0..budgets as u32)
                    .map(|t| {
                        let (fav, total) = capture_counts(c, s, r, t, ctx.clip_to);
                        if total == 0 {
                            0.0
                        } else {
                            fav as f64 / total as f64
                        }
                    })
                    .collect();
                (tc, probs)
            })
            .collect();

        let cost = (0..=max_tau)
            .map(|tau| match nearest {
                None => tau as f64,
                Some(m) if tau < m => tau as f64,
                Some(m) if m <= r && m < tau => INFEASIBLE,
                _ => {
                    let t_c = if tau > r { ((tau - r - 1).min(r)) as usize } else { 0 };
                    let sum: f64 = outside
                        .iter()
                        .take_while(|o| o.0 < tau)
                        .map(|o| o.1[t_c])
                        .sum();
                    tau as f64 + tau as f64 * sum
                }
            })
            .collect();
        Self { cost }
    }

    #[inline]
    pub fn cost(&self, tau: u32) -> f64 {
        self.cost[tau as usize]
    }
}

/// Effective distance `tau / p_hat`.
pub fn approx_cost(tau: u32, p_hat: f64) -> Result<f64> {
    if !(p_hat > 0.0) {
        return Err(SimError::Contract(format!(
            "availability prediction must be positive, got {p_hat}"
        )));
    }
    Ok(tau as f64 / p_hat)
}

/// Everything a dispatch decision needs for one tick.
pub struct DispatchInput<'a> {
    /// Participant positions. Earlier entries win equal-cost ties.
    pub participants: &'a [CellCoord],
    /// Free spot units per cell that may be handed out this tick.
    pub spots: &'a [(CellCoord, u32)],
    pub oracle: Option<OracleContext<'a>>,
    /// Predicted availability per cell index (row-major on an `n x n` grid).
    pub availability: Option<(&'a [f64], u32)>,
}

/// Target cell per participant (same order as `participants`).
pub fn dispatch<R: Rng + ?Sized>(
    kind: StrategyKind,
    input: &DispatchInput<'_>,
    rng: &mut R,
) -> Result<Vec<Option<CellCoord>>> {
    match kind {
        StrategyKind::UncAgn => Ok(unc_agn_targets(input.participants, input.spots, rng)),
        StrategyKind::CordAgn => Ok(coordinated(input, |d, s| Ok(manhattan(d, s) as f64))?),
        StrategyKind::CordOracle => {
            let ctx = input
                .oracle
                .ok_or_else(|| SimError::config("cord-oracle dispatch requires competitor positions"))?;
            let max_tau = input
                .participants
                .iter()
                .flat_map(|&d| input.spots.iter().map(move |s| manhattan(d, s.0)))
                .max()
                .unwrap_or(0);
            let tables: std::collections::HashMap<CellCoord, OracleSpotCosts> = input
                .spots
                .iter()
                .map(|&(s, _)| (s, OracleSpotCosts::new(s, max_tau, &ctx)))
                .collect();
            coordinated(input, |d, s| Ok(tables[&s].cost(manhattan(d, s))))
        }
        StrategyKind::CordApprox => {
            let (p_hat, n) = input
                .availability
                .ok_or_else(|| SimError::config("cord-approx dispatch requires an availability predictor"))?;
            coordinated(input, |d, s| {
                approx_cost(manhattan(d, s), p_hat[(s.i * n + s.j) as usize])
            })
        }
    }
}

/// Builds the per-unit cost matrix and solves it. Equal-cost optima resolve
/// by scan order: earlier participants first, then row-major cells. Only cells
/// that fall within some participant's `rows` cheapest units are kept, which
/// cannot change the optimum.
fn coordinated(
    input: &DispatchInput<'_>,
    cost: impl Fn(CellCoord, CellCoord) -> Result<f64>,
) -> Result<Vec<Option<CellCoord>>> {
    let rows = input.participants.len();
    let mut out = vec![None; rows];
    let mut cells: Vec<(CellCoord, u32)> = input
        .spots
        .iter()
        .filter(|s| s.1 > 0)
        .map(|&(c, f)| (c, f.min(rows as u32)))
        .collect();
    if rows == 0 || cells.is_empty() {
        return Ok(out);
    }
    cells.sort_by_key(|&(c, _)| (c.i, c.j));

    let mut cell_costs = Vec::with_capacity(rows);
    for &d in input.participants {
        let row = cells
            .iter()
            .map(|&(s, _)| cost(d, s))
            .collect::<Result<Vec<f64>>>()?;
        cell_costs.push(row);
    }

    let mut keep = vec![false; cells.len()];
    let mut idx: Vec<usize> = (0..cells.len()).collect();
    for row in &cell_costs {
        idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        let mut units = 0u32;
        for &k in &idx {
            if !row[k].is_finite() || units >= rows as u32 {
                break;
            }
            keep[k] = true;
            units += cells[k].1;
        }
    }

    let mut columns: Vec<usize> = Vec::new();
    for (k, &(_, units)) in cells.iter().enumerate() {
        if keep[k] {
            columns.extend(std::iter::repeat_n(k, units as usize));
        }
    }
    let matrix = CostMatrix::from_fn(rows, columns.len(), |r, c| cell_costs[r][columns[c]]);
    for (r, c) in hungarian_assign(&matrix).pairs {
        out[r] = Some(cells[columns[c]].0);
    }
    Ok(out)
}
