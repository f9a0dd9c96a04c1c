//! Outcome aggregation and report export.
//!
//! Success ratios count parked agents over parked plus failed agents spawned
//! inside a window; agents still searching at the horizon are censored and
//! reported separately. Search times average successful parks only.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::agents::AgentId;
use crate::demand::Group;
use crate::engine::RunOutput;
use crate::error::Result;
use crate::grid::GridSpec;
use crate::strategies::StrategyKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "state", content = "tick")]
pub enum Terminal {
    Parked(u32),
    Failed(u32),
    Censored,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub agent_id: AgentId,
    pub group: Group,
    pub spawn_tick: u32,
    pub terminal: Terminal,
    pub park_cell: Option<usize>,
}

impl OutcomeRecord {
    pub fn search_time(&self) -> Option<u32> {
        match self.terminal {
            Terminal::Parked(t) => Some(t - self.spawn_tick),
            _ => None,
        }
    }
}

/// Spawn-time window `[start, end)` in minutes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: u32,
    pub end: u32,
}

impl Window {
    pub fn new(start: u32, end: u32) -> Self {
        Self { start, end }
    }

    pub fn all() -> Self {
        Self { start: 0, end: u32::MAX }
    }

    pub fn contains(&self, t: u32) -> bool {
        (self.start..self.end).contains(&t)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub spawned: usize,
    pub parked: usize,
    pub failed: usize,
    pub censored: usize,
}

pub fn tally<'a>(outcomes: impl IntoIterator<Item = &'a OutcomeRecord>, group: Group, window: Window) -> Tally {
    let mut t = Tally::default();
    for o in outcomes {
        if o.group != group || !window.contains(o.spawn_tick) {
            continue;
        }
        t.spawned += 1;
        match o.terminal {
            Terminal::Parked(_) => t.parked += 1,
            Terminal::Failed(_) => t.failed += 1,
            Terminal::Censored => t.censored += 1,
        }
    }
    t
}

/// Parked share of resolved agents; `None` when nothing resolved.
pub fn success_ratio(outcomes: &[OutcomeRecord], group: Group, window: Window) -> Option<f64> {
    let t = tally(outcomes, group, window);
    let resolved = t.parked + t.failed;
    (resolved > 0).then(|| t.parked as f64 / resolved as f64)
}

pub fn failure_ratio(outcomes: &[OutcomeRecord], group: Group, window: Window) -> Option<f64> {
    let t = tally(outcomes, group, window);
    let resolved = t.parked + t.failed;
    (resolved > 0).then(|| t.failed as f64 / resolved as f64)
}

pub fn avg_search_time(outcomes: &[OutcomeRecord], group: Group, window: Window) -> Option<f64> {
    mean_search_time(outcomes.iter().filter(|o| o.group == group && window.contains(o.spawn_tick)))
}

fn mean_search_time<'a>(outcomes: impl Iterator<Item = &'a OutcomeRecord>) -> Option<f64> {
    let (sum, n) = outcomes
        .filter_map(OutcomeRecord::search_time)
        .fold((0u64, 0usize), |(s, n), t| (s + t as u64, n + 1));
    (n > 0).then(|| sum as f64 / n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeBin {
    Low,
    Intermediate,
    High,
}

impl RegimeBin {
    pub const ALL: [RegimeBin; 3] = [RegimeBin::Low, RegimeBin::Intermediate, RegimeBin::High];

    /// Inclusive free-spot fraction range.
    pub fn range(self) -> (f64, f64) {
        match self {
            RegimeBin::Low => (0.0, 0.05),
            RegimeBin::Intermediate => (0.20, 0.25),
            RegimeBin::High => (0.40, 0.45),
        }
    }

    pub fn classify(availability: f64) -> Option<RegimeBin> {
        Self::ALL.into_iter().find(|b| {
            let (lo, hi) = b.range();
            availability >= lo && availability <= hi
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RegimeBin::Low => "low",
            RegimeBin::Intermediate => "intermediate",
            RegimeBin::High => "high",
        }
    }
}

/// Participant minus competitor success ratio per availability regime. An
/// agent falls in the bin of the availability sampled at its spawn tick.
pub fn regime_gap(outcomes: &[OutcomeRecord], availability: &[f64]) -> BTreeMap<RegimeBin, Option<f64>> {
    let mut counts: BTreeMap<(RegimeBin, Group), (usize, usize)> = BTreeMap::new();
    for o in outcomes {
        let Some(bin) = availability.get(o.spawn_tick as usize).and_then(|&a| RegimeBin::classify(a)) else {
            continue;
        };
        let e = counts.entry((bin, o.group)).or_default();
        match o.terminal {
            Terminal::Parked(_) => {
                e.0 += 1;
                e.1 += 1;
            }
            Terminal::Failed(_) => e.1 += 1,
            Terminal::Censored => {}
        }
    }
    let ratio = |bin, group| {
        counts
            .get(&(bin, group))
            .filter(|c| c.1 > 0)
            .map(|&(p, n)| p as f64 / n as f64)
    };
    RegimeBin::ALL
        .into_iter()
        .map(|bin| {
            let gap = match (ratio(bin, Group::Participant), ratio(bin, Group::Competitor)) {
                (Some(p), Some(c)) => Some(p - c),
                _ => None,
            };
            (bin, gap)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ZoneSpec {
    pub id: String,
    pub cells: Vec<usize>,
    pub label: Option<String>,
}

/// Zones of a grid, in first-appearance order of their ids.
pub fn zones_from_grid(grid: &GridSpec) -> Vec<ZoneSpec> {
    let Some(ids) = grid.zones() else {
        return Vec::new();
    };
    let mut out: Vec<ZoneSpec> = Vec::new();
    for (k, id) in ids.iter().enumerate() {
        if id.is_empty() {
            continue;
        }
        match out.iter_mut().find(|z| &z.id == id) {
            Some(z) => z.cells.push(k),
            None => out.push(ZoneSpec {
                id: id.clone(),
                cells: vec![k],
                label: None,
            }),
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZoneRow {
    pub zone: String,
    pub participant_search_time: Option<f64>,
    pub competitor_search_time: Option<f64>,
    pub participant_parks: usize,
    pub competitor_parks: usize,
}

/// Search times of parks whose cell lies in each zone.
pub fn zone_report(outcomes: &[OutcomeRecord], zones: &[ZoneSpec], window: Window) -> Vec<ZoneRow> {
    zones
        .iter()
        .map(|z| {
            let inside = |group: Group| {
                outcomes.iter().filter(move |o| {
                    o.group == group
                        && window.contains(o.spawn_tick)
                        && o.park_cell.is_some_and(|k| z.cells.contains(&k))
                        && o.search_time().is_some()
                })
            };
            ZoneRow {
                zone: z.id.clone(),
                participant_search_time: mean_search_time(inside(Group::Participant)),
                competitor_search_time: mean_search_time(inside(Group::Competitor)),
                participant_parks: inside(Group::Participant).count(),
                competitor_parks: inside(Group::Competitor).count(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub success_ratio: Option<f64>,
    pub avg_search_time: Option<f64>,
    #[serde(flatten)]
    pub tally: Tally,
}

impl GroupSummary {
    fn of(outcomes: &[OutcomeRecord], group: Group, window: Window) -> Self {
        Self {
            success_ratio: success_ratio(outcomes, group, window),
            avg_search_time: avg_search_time(outcomes, group, window),
            tally: tally(outcomes, group, window),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourRow {
    pub hour: u32,
    pub group: Group,
    pub success_ratio: Option<f64>,
    pub avg_search_time: Option<f64>,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub participants: GroupSummary,
    pub competitors: GroupSummary,
    pub regimes: BTreeMap<RegimeBin, Option<f64>>,
    pub zones: Vec<ZoneRow>,
    pub hourly: Vec<HourRow>,
    pub mean_availability: Option<f64>,
    /// Per-cell mean search time over all parks, row-major.
    pub cell_search_time: Vec<Option<f64>>,
}

impl RunSummary {
    pub fn group(&self, g: Group) -> &GroupSummary {
        match g {
            Group::Participant => &self.participants,
            Group::Competitor => &self.competitors,
        }
    }
}

pub fn summarize_run(run: &RunOutput, grid: &GridSpec, window: Window) -> RunSummary {
    let o = &run.outcomes;
    let hours = run.horizon.div_ceil(60);
    let mut hourly = Vec::new();
    for h in 0..hours {
        let w = Window::new(h * 60, (h + 1) * 60);
        for g in [Group::Participant, Group::Competitor] {
            hourly.push(HourRow {
                hour: h,
                group: g,
                success_ratio: success_ratio(o, g, w),
                avg_search_time: avg_search_time(o, g, w),
                n: tally(o, g, w).spawned,
            });
        }
    }
    let mut per_cell = vec![(0u64, 0usize); grid.cell_count()];
    for rec in o.iter().filter(|r| window.contains(r.spawn_tick)) {
        if let (Some(k), Some(t)) = (rec.park_cell, rec.search_time()) {
            per_cell[k].0 += t as u64;
            per_cell[k].1 += 1;
        }
    }
    let in_window: Vec<f64> = run
        .availability
        .iter()
        .enumerate()
        .filter(|(t, _)| window.contains(*t as u32))
        .map(|(_, &a)| a)
        .collect();
    RunSummary {
        seed: run.seed,
        participants: GroupSummary::of(o, Group::Participant, window),
        competitors: GroupSummary::of(o, Group::Competitor, window),
        regimes: regime_gap(o, &run.availability),
        zones: zone_report(o, &zones_from_grid(grid), window),
        hourly,
        mean_availability: (!in_window.is_empty()).then(|| in_window.iter().sum::<f64>() / in_window.len() as f64),
        cell_search_time: per_cell
            .into_iter()
            .map(|(s, n)| (n > 0).then(|| s as f64 / n as f64))
            .collect(),
    }
}

/// Report over all runs of one strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimReport {
    pub strategy: StrategyKind,
    pub window: Window,
    pub grid_n: u32,
    pub runs: Vec<RunSummary>,
}

/// Mean of the defined values; `None` if none are defined.
pub fn mean_defined(values: impl IntoIterator<Item = Option<f64>>) -> Option<f64> {
    let (s, n) = values.into_iter().flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| s / n as f64)
}

impl SimReport {
    pub fn new(strategy: StrategyKind, grid: &GridSpec, window: Window, runs: &[RunOutput]) -> Self {
        Self {
            strategy,
            window,
            grid_n: grid.n(),
            runs: runs.iter().map(|r| summarize_run(r, grid, window)).collect(),
        }
    }

    pub fn mean_success(&self, g: Group) -> Option<f64> {
        mean_defined(self.runs.iter().map(|r| r.group(g).success_ratio))
    }

    pub fn mean_search_time(&self, g: Group) -> Option<f64> {
        mean_defined(self.runs.iter().map(|r| r.group(g).avg_search_time))
    }

    pub fn mean_regime(&self, bin: RegimeBin) -> Option<f64> {
        mean_defined(self.runs.iter().map(|r| r.regimes.get(&bin).copied().flatten()))
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Summary<'a> {
            strategy: StrategyKind,
            window: Window,
            grid_n: u32,
            mean: Mean,
            runs: &'a [RunSummary],
        }
        #[derive(Serialize)]
        struct Mean {
            participant_success_ratio: Option<f64>,
            competitor_success_ratio: Option<f64>,
            participant_avg_search_time: Option<f64>,
            competitor_avg_search_time: Option<f64>,
            regimes: BTreeMap<RegimeBin, Option<f64>>,
        }
        let s = Summary {
            strategy: self.strategy,
            window: self.window,
            grid_n: self.grid_n,
            mean: Mean {
                participant_success_ratio: self.mean_success(Group::Participant),
                competitor_success_ratio: self.mean_success(Group::Competitor),
                participant_avg_search_time: self.mean_search_time(Group::Participant),
                competitor_avg_search_time: self.mean_search_time(Group::Competitor),
                regimes: RegimeBin::ALL.into_iter().map(|b| (b, self.mean_regime(b))).collect(),
            },
            runs: &self.runs,
        };
        let mut out = serde_json::to_string_pretty(&s)?;
        out.push('\n');
        Ok(out)
    }

    /// Reads back a report written by [`SimReport::to_json`]; the mean block
    /// is recomputed rather than parsed.
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    fn run_headers(&self, names: &[&str]) -> String {
        let mut h = String::new();
        for i in 0..self.runs.len() {
            for n in names {
                let _ = write!(h, ",run{}_{n}", i + 1);
            }
        }
        h
    }

    pub fn series_csv(&self) -> String {
        let mut out = String::from("hour,strategy,group,success_ratio,avg_search_time,n");
        out += &self.run_headers(&["success_ratio", "avg_search_time", "n"]);
        out.push('\n');
        let Some(first) = self.runs.first() else {
            return out;
        };
        for (row, base) in first.hourly.iter().enumerate() {
            let rows: Vec<&HourRow> = self.runs.iter().map(|r| &r.hourly[row]).collect();
            let _ = write!(
                out,
                "{},{},{},{},{},{}",
                base.hour,
                self.strategy,
                base.group.as_str(),
                fmt_opt(mean_defined(rows.iter().map(|r| r.success_ratio))),
                fmt_opt(mean_defined(rows.iter().map(|r| r.avg_search_time))),
                rows.iter().map(|r| r.n).sum::<usize>()
            );
            for r in &rows {
                let _ = write!(out, ",{},{},{}", fmt_opt(r.success_ratio), fmt_opt(r.avg_search_time), r.n);
            }
            out.push('\n');
        }
        out
    }

    pub fn regimes_csv(&self) -> String {
        let mut out = String::from("strategy,bin,delta");
        out += &self.run_headers(&["delta"]);
        out.push('\n');
        if self.runs.is_empty() {
            return out;
        }
        for bin in RegimeBin::ALL {
            let _ = write!(out, "{},{},{}", self.strategy, bin.as_str(), fmt_opt(self.mean_regime(bin)));
            for r in &self.runs {
                let _ = write!(out, ",{}", fmt_opt(r.regimes.get(&bin).copied().flatten()));
            }
            out.push('\n');
        }
        out
    }

    pub fn zones_csv(&self) -> String {
        let mut out = String::from("zone,group,avg_search_time");
        out += &self.run_headers(&["avg_search_time"]);
        out.push('\n');
        let Some(first) = self.runs.first() else {
            return out;
        };
        for (i, z) in first.zones.iter().enumerate() {
            for g in [Group::Participant, Group::Competitor] {
                let pick = |r: &RunSummary| {
                    let row = &r.zones[i];
                    match g {
                        Group::Participant => row.participant_search_time,
                        Group::Competitor => row.competitor_search_time,
                    }
                };
                let _ = write!(
                    out,
                    "{},{},{}",
                    z.zone,
                    g.as_str(),
                    fmt_opt(mean_defined(self.runs.iter().map(pick)))
                );
                for r in &self.runs {
                    let _ = write!(out, ",{}", fmt_opt(pick(r)));
                }
                out.push('\n');
            }
        }
        out
    }

    /// Grid heatmap of mean search time per cell with numeric labels.
    pub fn heatmap_svg(&self) -> String {
        let n = self.grid_n as usize;
        let cell_px = 40;
        let size = n * cell_px;
        let values: Vec<Option<f64>> = (0..n * n)
            .map(|k| mean_defined(self.runs.iter().map(|r| r.cell_search_time.get(k).copied().flatten())))
            .collect();
        let max = values.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
        let mut svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{}\" font-family=\"monospace\" font-size=\"11\">\n",
            size + 20
        );
        let _ = writeln!(
            svg,
            "<text x=\"2\" y=\"14\">{} mean search time (min)</text>",
            self.strategy
        );
        for (k, v) in values.iter().enumerate() {
            let (i, j) = (k / n, k % n);
            let (x, y) = (j * cell_px, i * cell_px + 20);
            let fill = match v {
                Some(v) if max > 0.0 => {
                    let f = v / max;
                    let r = 255;
                    let gb = (255.0 * (1.0 - f)).round() as u8;
                    format!("rgb({r},{gb},{gb})")
                }
                Some(_) => "rgb(255,255,255)".to_string(),
                None => "rgb(220,220,220)".to_string(),
            };
            let _ = writeln!(
                svg,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell_px}\" height=\"{cell_px}\" fill=\"{fill}\" stroke=\"#888\"/>"
            );
            if let Some(v) = v {
                let _ = writeln!(
                    svg,
                    "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{v:.1}</text>",
                    x + cell_px / 2,
                    y + cell_px / 2 + 4
                );
            }
        }
        svg.push_str("</svg>\n");
        svg
    }

    /// Writes `report.json`, `series.csv`, `regimes.csv`, `zones.csv` and
    /// `heatmap.svg` into `dir`.
    pub fn export(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), self.to_json()?)?;
        fs::write(dir.join("series.csv"), self.series_csv())?;
        fs::write(dir.join("regimes.csv"), self.regimes_csv())?;
        fs::write(dir.join("zones.csv"), self.zones_csv())?;
        fs::write(dir.join("heatmap.svg"), self.heatmap_svg())?;
        Ok(())
    }
}

pub fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.6}"),
        None => String::new(),
    }
}
