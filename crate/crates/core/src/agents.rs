//! Agent state and per-tick movement policies.
//!
//! Participants walk one cell per tick toward the target handed out by the
//! dispatcher. Competitors random-walk until a free spot enters their
//! visibility radius and then head for the nearest one. Parking claims at a
//! cell are settled by drawing winners uniformly without replacement.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};

use crate::demand::Group;
use crate::error::{Result, SimError};
use crate::grid::{manhattan, CellCoord, GridSpec, OccupancyState};

pub const DEFAULT_T_MAX: u32 = 30;
pub const DEFAULT_RADIUS: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "state", content = "tick")]
pub enum Status {
    Searching,
    Parked(u32),
    Failed(u32),
    Departed(u32),
}

/// A participant or competitor. Both groups share the same record; only the
/// movement policy differs.
#[derive(Debug, Clone)]
pub struct Agent {
    pub id: AgentId,
    pub group: Group,
    pub pos: CellCoord,
    pub spawn_tick: u32,
    /// Participants: the dispatched spot cell. Competitors: the visible cell
    /// currently being approached, if any.
    pub target: Option<CellCoord>,
    pub status: Status,
    /// Dwell drawn at spawn; becomes `dwell_remaining` on parking.
    pub dwell: u32,
    pub dwell_remaining: Option<u32>,
    pub park_cell: Option<CellCoord>,
    pub park_tick: Option<u32>,
}

impl Agent {
    pub fn new(id: AgentId, group: Group, pos: CellCoord, spawn_tick: u32, dwell: u32) -> Self {
        Self {
            id,
            group,
            pos,
            spawn_tick,
            target: None,
            status: Status::Searching,
            dwell,
            dwell_remaining: None,
            park_cell: None,
            park_tick: None,
        }
    }

    pub fn is_searching(&self) -> bool {
        matches!(self.status, Status::Searching)
    }

    pub fn age(&self, tick: u32) -> u32 {
        tick.saturating_sub(self.spawn_tick)
    }
}

/// Cells within Manhattan distance `radius` of `pos` that hold a free spot.
pub fn visible_spots(pos: CellCoord, state: &OccupancyState, grid: &GridSpec, radius: u32) -> Vec<CellCoord> {
    let n = grid.n() as i64;
    let r = radius as i64;
    let (ci, cj) = (pos.i as i64, pos.j as i64);
    let mut out = Vec::new();
    for i in (ci - r).max(0)..=(ci + r).min(n - 1) {
        let span = r - (i - ci).abs();
        for j in (cj - span).max(0)..=(cj + span).min(n - 1) {
            let z = CellCoord::new(i as u32, j as u32);
            if state.free_at(z) > 0 {
                out.push(z);
            }
        }
    }
    out
}

/// One step from `pos` toward `target`, choosing uniformly between the two
/// axes when both reduce the distance.
pub fn step_toward<R: Rng + ?Sized>(pos: CellCoord, target: CellCoord, rng: &mut R) -> CellCoord {
    let vertical = pos.i != target.i;
    let horizontal = pos.j != target.j;
    let move_vertical = match (vertical, horizontal) {
        (false, false) => return pos,
        (true, false) => true,
        (false, true) => false,
        (true, true) => rng.random_bool(0.5),
    };
    if move_vertical {
        let i = if target.i > pos.i { pos.i + 1 } else { pos.i - 1 };
        CellCoord::new(i, pos.j)
    } else {
        let j = if target.j > pos.j { pos.j + 1 } else { pos.j - 1 };
        CellCoord::new(pos.i, j)
    }
}

pub fn step_participant<R: Rng + ?Sized>(pos: CellCoord, target: CellCoord, rng: &mut R) -> CellCoord {
    step_toward(pos, target, rng)
}

/// Competitor move: head for the nearest visible free cell (ties uniform),
/// otherwise take a uniform step to an in-bounds neighbour. Returns the new
/// position and the cell being approached.
pub fn step_competitor<R: Rng + ?Sized>(
    grid: &GridSpec,
    pos: CellCoord,
    visible: &[CellCoord],
    rng: &mut R,
) -> (CellCoord, Option<CellCoord>) {
    if let Some(best) = visible.iter().map(|&z| manhattan(pos, z)).min() {
        let nearest: Vec<CellCoord> = visible
            .iter()
            .copied()
            .filter(|&z| manhattan(pos, z) == best)
            .collect();
        let goal = *nearest.choose(rng).expect("non-empty");
        return (step_toward(pos, goal, rng), Some(goal));
    }
    let mut options = [pos; 4];
    let mut count = 0;
    for z in grid.neighbors(pos) {
        options[count] = z;
        count += 1;
    }
    if count == 0 {
        return (pos, None);
    }
    (options[rng.random_range(0..count)], None)
}

/// Draws `min(free_count, claimants)` winners uniformly without replacement.
/// Winners are returned in draw order.
pub fn resolve_parking<T: Copy, R: Rng + ?Sized>(claimants: &[T], free_count: u32, rng: &mut R) -> Vec<T> {
    let k = (free_count as usize).min(claimants.len());
    if k == 0 {
        return Vec::new();
    }
    if k == claimants.len() && k == 1 {
        return claimants.to_vec();
    }
    let mut pool = claimants.to_vec();
    let (chosen, _) = pool.partial_shuffle(rng, k);
    chosen.to_vec()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DwellSpec {
    Fixed { minutes: u32 },
    Lognormal { median: f64, sigma: f64 },
}

impl Default for DwellSpec {
    fn default() -> Self {
        DwellSpec::Lognormal {
            median: 45.0,
            sigma: 0.5,
        }
    }
}

impl DwellSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DwellSpec::Fixed { .. } => Ok(()),
            DwellSpec::Lognormal { median, sigma } => {
                if !(median > 0.0 && median.is_finite()) || !(sigma >= 0.0 && sigma.is_finite()) {
                    Err(SimError::config(format!(
                        "lognormal dwell needs median > 0 and sigma >= 0 (got {median}, {sigma})"
                    )))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Dwell time in whole minutes, at least 1.
pub fn sample_dwell<R: Rng + ?Sized>(spec: &DwellSpec, rng: &mut R) -> Result<u32> {
    spec.validate()?;
    let raw = match *spec {
        DwellSpec::Fixed { minutes } => minutes as f64,
        DwellSpec::Lognormal { median, sigma } => {
            let dist = LogNormal::new(median.ln(), sigma)
                .map_err(|e| SimError::config(format!("lognormal dwell: {e}")))?;
            dist.sample(rng)
        }
    };
    Ok(raw.round().clamp(1.0, u32::MAX as f64) as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Spawn,
    Move,
    Assign,
    Park,
    Depart,
    Fail,
}

/// One line of `events.ndjson`. `cell` is the row-major cell index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub tick: u32,
    pub agent_id: AgentId,
    pub group: Group,
    pub event: EventKind,
    pub cell: u32,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{RngStream, StreamTag};

    fn c(i: u32, j: u32) -> CellCoord {
        CellCoord::new(i, j)
    }

    fn rng(seed: u64) -> RngStream {
        RngStream::new(seed, StreamTag::Movement)
    }

    #[test]
    fn visible_spots_examples() {
        let grid = GridSpec::uniform(5, 1).unwrap();
        let mut st = OccupancyState::new(&grid);
        // Only (2,2) free at R=0.
        assert_eq!(visible_spots(c(2, 2), &st, &grid, 0), vec![c(2, 2)]);

        // Fill everything except (2,3) [d=1] and (2,4) [d=2].
        for k in 0..grid.cell_count() {
            let z = grid.coord(k);
            if z != c(2, 3) && z != c(2, 4) {
                st.occupy(z).unwrap();
            }
        }
        assert_eq!(visible_spots(c(2, 2), &st, &grid, 1), vec![c(2, 3)]);
        st.occupy(c(2, 3)).unwrap();
        st.occupy(c(2, 4)).unwrap();
        assert!(visible_spots(c(2, 2), &st, &grid, 3).is_empty());
    }

    #[test]
    fn competitor_forced_move_east() {
        let grid = GridSpec::uniform(5, 1).unwrap();
        let mut r = rng(1);
        for _ in 0..20 {
            assert_eq!(step_competitor(&grid, c(2, 2), &[c(2, 3)], &mut r), (c(2, 3), Some(c(2, 3))));
        }
        // Already on a free cell: stay.
        assert_eq!(step_competitor(&grid, c(2, 2), &[c(2, 2), c(2, 3)], &mut r).0, c(2, 2));
    }

    #[test]
    fn competitor_random_walk_frequencies() {
        let grid = GridSpec::uniform(5, 1).unwrap();
        let mut r = rng(2);
        let mut counts = std::collections::HashMap::new();
        let draws = 100_000;
        for _ in 0..draws {
            *counts.entry(step_competitor(&grid, c(2, 2), &[], &mut r).0).or_insert(0u32) += 1;
        }
        assert_eq!(counts.len(), 4);
        for (z, n) in counts {
            assert_eq!(manhattan(z, c(2, 2)), 1);
            assert!((n as f64 / draws as f64 - 0.25).abs() < 0.02);
        }
    }

    #[test]
    fn competitor_corner_clip() {
        let grid = GridSpec::uniform(5, 1).unwrap();
        let mut r = rng(3);
        let mut seen = std::collections::BTreeSet::new();
        for _ in 0..1000 {
            seen.insert(step_competitor(&grid, c(0, 0), &[], &mut r).0);
        }
        assert_eq!(seen.into_iter().collect::<Vec<_>>(), vec![c(0, 1), c(1, 0)]);
    }

    #[test]
    fn participant_steps() {
        let mut r = rng(4);
        assert_eq!(step_participant(c(0, 0), c(0, 3), &mut r), c(0, 1));
        assert_eq!(step_participant(c(3, 3), c(3, 3), &mut r), c(3, 3));
        let mut down = 0;
        let trials = 100_000;
        for _ in 0..trials {
            let z = step_participant(c(0, 0), c(2, 2), &mut r);
            assert!(z == c(1, 0) || z == c(0, 1));
            if z == c(1, 0) {
                down += 1;
            }
        }
        assert!((down as f64 / trials as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn participant_travel_time_equals_distance() {
        let mut r = rng(5);
        for (a, b) in [(c(0, 0), c(7, 3)), (c(5, 9), c(0, 0)), (c(4, 4), c(4, 4))] {
            let mut pos = a;
            let mut ticks = 0;
            while pos != b {
                let next = step_participant(pos, b, &mut r);
                assert_eq!(manhattan(next, b) + 1, manhattan(pos, b));
                pos = next;
                ticks += 1;
            }
            assert_eq!(ticks, manhattan(a, b));
        }
    }

    #[test]
    fn resolve_parking_examples() {
        let mut r = rng(6);
        assert_eq!(resolve_parking(&[7u32], 1, &mut r), vec![7]);
        assert!(resolve_parking(&[1u32, 2, 3], 0, &mut r).is_empty());
        assert_eq!(resolve_parking(&[1u32, 2, 3], 5, &mut r).len(), 3);
        let trials = 100_000;
        let mut first = 0;
        for _ in 0..trials {
            let w = resolve_parking(&[0u32, 1], 1, &mut r);
            assert_eq!(w.len(), 1);
            if w[0] == 0 {
                first += 1;
            }
        }
        assert!((first as f64 / trials as f64 - 0.5).abs() < 0.02);
    }

    #[test]
    fn dwell_examples() {
        let mut r = rng(7);
        assert_eq!(sample_dwell(&DwellSpec::Fixed { minutes: 45 }, &mut r).unwrap(), 45);
        assert_eq!(sample_dwell(&DwellSpec::Fixed { minutes: 0 }, &mut r).unwrap(), 1);
        let spec = DwellSpec::default();
        let mut xs: Vec<u32> = (0..100_000).map(|_| sample_dwell(&spec, &mut r).unwrap()).collect();
        assert!(xs.iter().all(|&x| x >= 1));
        xs.sort_unstable();
        let median = xs[xs.len() / 2] as f64;
        assert!((median - 45.0).abs() <= 2.0, "median {median}");
        let tiny = DwellSpec::Lognormal { median: 0.01, sigma: 0.1 };
        assert_eq!(sample_dwell(&tiny, &mut r).unwrap(), 1);
        assert!(sample_dwell(&DwellSpec::Lognormal { median: -1.0, sigma: 0.5 }, &mut r).is_err());
    }

    #[test]
    fn dwell_is_deterministic_per_seed() {
        let spec = DwellSpec::default();
        let a: Vec<u32> = {
            let mut r = rng(11);
            (0..50).map(|_| sample_dwell(&spec, &mut r).unwrap()).collect()
        };
        let b: Vec<u32> = {
            let mut r = rng(11);
            (0..50).map(|_| sample_dwell(&spec, &mut r).unwrap()).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn event_serialization_shape() {
        let e = Event {
            tick: 3,
            agent_id: AgentId(9),
            group: Group::Competitor,
            event: EventKind::Park,
            cell: 12,
        };
        assert_eq!(
            serde_json::to_string(&e).unwrap(),
            r#"{"tick":3,"agent_id":9,"group":"competitor","event":"park","cell":12}"#
        );
    }
}
