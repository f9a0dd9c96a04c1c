//! The city lattice: cell coordinates, Geohash labels, spot capacities and
//! live occupancy.
//!
//! Cells are indexed row-major, `k = i * n + j`. Spots inside a cell are
//! fungible, so occupancy is tracked as a per-cell counter.

use std::collections::HashSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};

pub const DEFAULT_GRID_DIM: u32 = 22;

/// Nominal cell footprint in metres. Metadata only; every computation is
/// lattice based.
pub const CELL_WIDTH_M: f64 = 152.8;
pub const CELL_HEIGHT_M: f64 = 116.4;

const GEOHASH_ALPHABET: &[u8] = b"0123456789bcdefghjkmnpqrstuvwxyz";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CellCoord {
    pub i: u32,
    pub j: u32,
}

impl CellCoord {
    pub const fn new(i: u32, j: u32) -> Self {
        Self { i, j }
    }
}

/// Lattice travel time between two cells.
#[inline]
pub fn manhattan(a: CellCoord, b: CellCoord) -> u32 {
    a.i.abs_diff(b.i) + a.j.abs_diff(b.j)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    n: u32,
    labels: Vec<String>,
    zones: Option<Vec<String>>,
    capacity: Vec<u32>,
}

impl GridSpec {
    pub fn new(
        n: u32,
        labels: Vec<String>,
        zones: Option<Vec<String>>,
        capacity: Vec<u32>,
    ) -> Result<Self> {
        if n == 0 {
            return Err(SimError::config("grid dimension must be positive"));
        }
        let cells = (n as usize) * (n as usize);
        if labels.len() != cells {
            return Err(SimError::validation(
                None,
                format!("expected {cells} cell labels, got {}", labels.len()),
            ));
        }
        let mut seen = HashSet::with_capacity(cells);
        for label in &labels {
            if !seen.insert(label.as_str()) {
                return Err(SimError::validation(
                    None,
                    format!("duplicate cell label {label:?}"),
                ));
            }
        }
        if let Some(z) = &zones {
            if z.len() != cells {
                return Err(SimError::validation(
                    None,
                    "zone map must cover every cell".to_string(),
                ));
            }
        }
        if capacity.len() != cells {
            return Err(SimError::validation(
                None,
                format!("expected {cells} capacities, got {}", capacity.len()),
            ));
        }
        Ok(Self {
            n,
            labels,
            zones,
            capacity,
        })
    }

    /// Builds an `n x n` grid with generated labels, the given capacities and
    /// zones laid out as `zone_block x zone_block` tiles (named `Z<r>-<c>`).
    pub fn synthetic(n: u32, capacity: Vec<u32>, zone_block: Option<u32>) -> Result<Self> {
        let cells = (n as usize) * (n as usize);
        let labels = (0..cells).map(synthetic_label).collect();
        let zones = zone_block.filter(|b| *b > 0).map(|b| {
            (0..cells)
                .map(|k| {
                    let (i, j) = (k as u32 / n, k as u32 % n);
                    format!("Z{}-{}", i / b, j / b)
                })
                .collect()
        });
        Self::new(n, labels, zones, capacity)
    }

    pub fn uniform(n: u32, capacity_per_cell: u32) -> Result<Self> {
        let cells = (n as usize) * (n as usize);
        Self::synthetic(n, vec![capacity_per_cell; cells], None)
    }

    #[inline]
    pub fn n(&self) -> u32 {
        self.n
    }

    #[inline]
    pub fn cell_count(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn index(&self, c: CellCoord) -> usize {
        (c.i * self.n + c.j) as usize
    }

    #[inline]
    pub fn coord(&self, k: usize) -> CellCoord {
        CellCoord::new(k as u32 / self.n, k as u32 % self.n)
    }

    #[inline]
    pub fn contains(&self, c: CellCoord) -> bool {
        c.i < self.n && c.j < self.n
    }

    pub fn label(&self, k: usize) -> &str {
        &self.labels[k]
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn find_label(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn zones(&self) -> Option<&[String]> {
        self.zones.as_deref()
    }

    pub fn capacity(&self) -> &[u32] {
        &self.capacity
    }

    pub fn total_capacity(&self) -> u64 {
        self.capacity.iter().map(|&b| b as u64).sum()
    }

    /// Von Neumann neighbours that lie inside the grid, in N, S, W, E order.
    pub fn neighbors(&self, c: CellCoord) -> impl Iterator<Item = CellCoord> + '_ {
        let n = self.n;
        let cand = [
            (c.i > 0).then(|| CellCoord::new(c.i - 1, c.j)),
            (c.i + 1 < n).then(|| CellCoord::new(c.i + 1, c.j)),
            (c.j > 0).then(|| CellCoord::new(c.i, c.j - 1)),
            (c.j + 1 < n).then(|| CellCoord::new(c.i, c.j + 1)),
        ];
        cand.into_iter().flatten()
    }

    /// Reads the grid definition table: `k,geohash7,i,j,capacity[,zone_id]`.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let col = |name: &str| headers.iter().position(|h| h == name);
        let need = |name: &str| {
            col(name).ok_or_else(|| SimError::Parse {
                line: 1,
                msg: format!("missing column {name:?}"),
            })
        };
        let (ck, cg, ci, cj, cc) = (
            need("k")?,
            need("geohash7")?,
            need("i")?,
            need("j")?,
            need("capacity")?,
        );
        let cz = col("zone_id");

        let mut rows = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
            let field = |c: usize| rec.get(c).unwrap_or("");
            let num = |c: usize, name: &str| -> Result<u32> {
                field(c).parse::<u32>().map_err(|_| SimError::Parse {
                    line,
                    msg: format!("invalid {name} {:?}", field(c)),
                })
            };
            let label = field(cg).to_string();
            if label.len() != 7 {
                return Err(SimError::validation(
                    Some(line),
                    format!("geohash {label:?} is not 7 characters"),
                ));
            }
            let zone = cz.map(|c| field(c).to_string()).filter(|z| !z.is_empty());
            rows.push((
                num(ck, "k")?,
                label,
                num(ci, "i")?,
                num(cj, "j")?,
                num(cc, "capacity")?,
                zone,
                line,
            ));
        }

        let cells = rows.len();
        let n = (cells as f64).sqrt().round() as u32;
        if (n as usize) * (n as usize) != cells || n == 0 {
            return Err(SimError::validation(
                None,
                format!("{cells} rows do not form a square grid"),
            ));
        }
        let mut labels = vec![String::new(); cells];
        let mut capacity = vec![0; cells];
        let mut zones: Vec<Option<String>> = vec![None; cells];
        let mut filled = vec![false; cells];
        for (k, label, i, j, cap, zone, line) in rows {
            if i >= n || j >= n || (i * n + j) != k {
                return Err(SimError::validation(
                    Some(line),
                    format!("cell k={k} does not match (i={i}, j={j}) on a {n}x{n} grid"),
                ));
            }
            let k = k as usize;
            if std::mem::replace(&mut filled[k], true) {
                return Err(SimError::validation(Some(line), format!("duplicate cell k={k}")));
            }
            labels[k] = label;
            capacity[k] = cap;
            zones[k] = zone;
        }
        let zone_count = zones.iter().filter(|z| z.is_some()).count();
        let zones = match zone_count {
            0 => None,
            c if c == cells => Some(zones.into_iter().map(Option::unwrap).collect()),
            _ => {
                return Err(SimError::validation(
                    None,
                    "zone_id must be given for every cell or for none",
                ))
            }
        };
        Self::new(n, labels, zones, capacity)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let with_zone = self.zones.is_some();
        if with_zone {
            w.write_record(["k", "geohash7", "i", "j", "capacity", "zone_id"])?;
        } else {
            w.write_record(["k", "geohash7", "i", "j", "capacity"])?;
        }
        for k in 0..self.cell_count() {
            let c = self.coord(k);
            let mut row = vec![
                k.to_string(),
                self.labels[k].clone(),
                c.i.to_string(),
                c.j.to_string(),
                self.capacity[k].to_string(),
            ];
            if let Some(z) = &self.zones {
                row.push(z[k].clone());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn synthetic_label(k: usize) -> String {
    // Three-character prefix followed by the base-32 index.
    let mut s = String::from("ezj");
    for shift in (0..4).rev() {
        let d = (k >> (5 * shift)) & 31;
        s.push(GEOHASH_ALPHABET[d] as char);
    }
    s
}

/// Live spot occupancy. `capacity` never changes during a run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OccupancyState {
    n: u32,
    capacity: Vec<u32>,
    occupied: Vec<u32>,
    pub tick: u32,
}

impl OccupancyState {
    pub fn new(grid: &GridSpec) -> Self {
        Self {
            n: grid.n,
            capacity: grid.capacity.clone(),
            occupied: vec![0; grid.capacity.len()],
            tick: 0,
        }
    }

    #[inline]
    fn index(&self, c: CellCoord) -> usize {
        (c.i * self.n + c.j) as usize
    }

    pub fn capacity_at(&self, c: CellCoord) -> u32 {
        self.capacity[self.index(c)]
    }

    pub fn occupied_at(&self, c: CellCoord) -> u32 {
        self.occupied[self.index(c)]
    }

    #[inline]
    pub fn free_at(&self, c: CellCoord) -> u32 {
        let k = self.index(c);
        self.capacity[k] - self.occupied[k]
    }

    #[inline]
    pub fn free_at_index(&self, k: usize) -> u32 {
        self.capacity[k] - self.occupied[k]
    }

    pub fn total_capacity(&self) -> u64 {
        self.capacity.iter().map(|&b| b as u64).sum()
    }

    pub fn total_occupied(&self) -> u64 {
        self.occupied.iter().map(|&o| o as u64).sum()
    }

    pub fn total_free(&self) -> u64 {
        self.total_capacity() - self.total_occupied()
    }

    /// Free fraction of the whole city, `free / B`. Zero when `B = 0`.
    pub fn availability(&self) -> f64 {
        let b = self.total_capacity();
        if b == 0 {
            0.0
        } else {
            self.total_free() as f64 / b as f64
        }
    }

    /// Every cell that still has a free spot, with its free count, in
    /// row-major order.
    pub fn free_spots(&self) -> Vec<(CellCoord, u32)> {
        (0..self.capacity.len())
            .filter_map(|k| {
                let free = self.capacity[k] - self.occupied[k];
                (free > 0).then(|| (CellCoord::new(k as u32 / self.n, k as u32 % self.n), free))
            })
            .collect()
    }

    pub fn occupy(&mut self, c: CellCoord) -> Result<()> {
        let k = self.index(c);
        if self.occupied[k] >= self.capacity[k] {
            return Err(SimError::CapacityViolation {
                op: "occupy",
                cell: c,
                occupied: self.occupied[k],
                capacity: self.capacity[k],
            });
        }
        self.occupied[k] += 1;
        Ok(())
    }

    pub fn release(&mut self, c: CellCoord) -> Result<()> {
        let k = self.index(c);
        if self.occupied[k] == 0 {
            return Err(SimError::CapacityViolation {
                op: "release",
                cell: c,
                occupied: 0,
                capacity: self.capacity[k],
            });
        }
        self.occupied[k] -= 1;
        Ok(())
    }

    /// Checks `0 <= occupied <= capacity` for every cell.
    pub fn check_bounds(&self) -> Result<()> {
        for (k, (&o, &b)) in self.occupied.iter().zip(&self.capacity).enumerate() {
            if o > b {
                return Err(SimError::Invariant {
                    tick: self.tick,
                    msg: format!("cell {k} holds {o} vehicles but has {b} spots"),
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn c(i: u32, j: u32) -> CellCoord {
        CellCoord::new(i, j)
    }

    #[test]
    fn manhattan_examples() {
        assert_eq!(manhattan(c(0, 0), c(2, 3)), 5);
        assert_eq!(manhattan(c(4, 4), c(4, 4)), 0);
        assert_eq!(manhattan(c(1, 1), c(4, 1)), 3);
    }

    #[test]
    fn free_spots_examples() {
        let grid = GridSpec::synthetic(1, vec![3], None).unwrap();
        let mut st = OccupancyState::new(&grid);
        for _ in 0..3 {
            st.occupy(c(0, 0)).unwrap();
        }
        assert!(st.free_spots().is_empty());
        st.release(c(0, 0)).unwrap();
        st.release(c(0, 0)).unwrap();
        assert_eq!(st.free_spots(), vec![(c(0, 0), 2)]);

        let grid = GridSpec::synthetic(2, vec![1, 0, 2, 5], None).unwrap();
        let st = OccupancyState::new(&grid);
        assert_eq!(
            st.free_spots(),
            vec![(c(0, 0), 1), (c(1, 0), 2), (c(1, 1), 5)]
        );
    }

    #[test]
    fn occupy_release_errors() {
        let grid = GridSpec::synthetic(2, vec![1, 0, 0, 0], None).unwrap();
        let mut st = OccupancyState::new(&grid);
        let before = st.clone();
        st.occupy(c(0, 0)).unwrap();
        st.release(c(0, 0)).unwrap();
        assert_eq!(st, before);

        st.occupy(c(0, 0)).unwrap();
        assert!(matches!(
            st.occupy(c(0, 0)),
            Err(SimError::CapacityViolation { op: "occupy", .. })
        ));
        assert!(matches!(
            st.release(c(0, 1)),
            Err(SimError::CapacityViolation { op: "release", .. })
        ));
    }

    #[test]
    fn grid_rejects_bad_shapes() {
        assert!(GridSpec::new(2, vec!["a".into(); 4], None, vec![0; 4]).is_err());
        let labels: Vec<String> = (0..4).map(synthetic_label).collect();
        assert!(GridSpec::new(2, labels.clone(), Some(vec!["z".into(); 3]), vec![0; 4]).is_err());
        assert!(GridSpec::new(2, labels[..3].to_vec(), None, vec![0; 3]).is_err());
        assert!(GridSpec::new(2, labels, None, vec![1; 4]).is_ok());
    }

    #[test]
    fn synthetic_labels_are_unique_geohash_width() {
        let g = GridSpec::uniform(22, 1).unwrap();
        assert!(g.labels().iter().all(|l| l.len() == 7));
    }

    #[test]
    fn grid_csv_roundtrip() {
        let g = GridSpec::synthetic(4, (0..16).collect(), Some(2)).unwrap();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let back = GridSpec::read_csv(buf.as_slice()).unwrap();
        assert_eq!(g, back);
    }

    #[test]
    fn grid_csv_errors() {
        let missing = "k,geohash7,i,j\n0,ezj0000,0,0\n";
        assert!(matches!(
            GridSpec::read_csv(missing.as_bytes()),
            Err(SimError::Parse { .. })
        ));
        let mismatch = "k,geohash7,i,j,capacity\n0,ezj0000,0,1,3\n";
        assert!(GridSpec::read_csv(mismatch.as_bytes()).is_err());
        let ok = "k,geohash7,i,j,capacity\n0,ezj0000,0,0,3\n";
        let g = GridSpec::read_csv(ok.as_bytes()).unwrap();
        assert_eq!(g.n(), 1);
        assert_eq!(g.capacity(), &[3]);
    }

    #[test]
    fn neighbors_clip_at_corner() {
        let g = GridSpec::uniform(3, 0).unwrap();
        let corner: Vec<_> = g.neighbors(c(0, 0)).collect();
        assert_eq!(corner, vec![c(1, 0), c(0, 1)]);
        assert_eq!(g.neighbors(c(1, 1)).count(), 4);
    }

    proptest! {
        #[test]
        fn manhattan_is_a_metric(a in (0u32..50, 0u32..50), b in (0u32..50, 0u32..50), z in (0u32..50, 0u32..50)) {
            let (a, b, z) = (c(a.0, a.1), c(b.0, b.1), c(z.0, z.1));
            prop_assert_eq!(manhattan(a, b), manhattan(b, a));
            prop_assert!(manhattan(a, b) <= manhattan(a, z) + manhattan(z, b));
            prop_assert_eq!(manhattan(a, b) == 0, a == b);
        }

        #[test]
        fn free_totals_reconcile(caps in proptest::collection::vec(0u32..4, 9), ops in proptest::collection::vec((0usize..9, any::<bool>()), 0..60)) {
            let grid = GridSpec::synthetic(3, caps, None).unwrap();
            let mut st = OccupancyState::new(&grid);
            for (k, occ) in ops {
                let cell = grid.coord(k);
                let _ = if occ { st.occupy(cell) } else { st.release(cell) };
                st.check_bounds().unwrap();
                let free: u64 = st.free_spots().iter().map(|(_, f)| *f as u64).sum();
                prop_assert_eq!(free, st.total_capacity() - st.total_occupied());
            }
        }
    }
}
