//! The rolling-horizon tick loop.
//!
//! Each tick runs, in order: spawn, depart, capture, dispatch, move, resolve,
//! expire, and (hourly) history merge. Agents spawned at tick `t` are
//! dispatched and may park on their spawn cell at `t`, but first move at
//! `t + 1`, so a search time equals the number of cells driven.
//!
//! Participants are handed to the dispatcher in a fixed random priority order
//! drawn at spawn. A participant that has never been assigned a spot cruises
//! like a competitor and takes a free spot it lands on; once assigned, it
//! heads for its latest target.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;

use crate::agents::{
    resolve_parking, sample_dwell, step_competitor, step_participant, visible_spots, Agent, AgentId, DwellSpec, Event,
    EventKind, Status,
};
use crate::config::SimConfig;
use crate::demand::{ArrivalSeries, Group};
use crate::error::{Result, SimError};
use crate::grid::{manhattan, CellCoord, GridSpec, OccupancyState};
use crate::metrics::{OutcomeRecord, Terminal};
use crate::predictor::{
    retrain, AvailabilityModel, CellObservation, FeatureSchema, HistoryCorpus, PredictorSnapshot, RetrainConfig,
    TrendIndex, BUCKETS_PER_DAY, BUCKET_MINUTES,
};
use crate::rng::{RngStream, StreamTag};
use crate::strategies::{dispatch, DispatchInput, OracleContext, StrategyKind};

/// Per-run parameters taken from the config.
#[derive(Debug, Clone)]
pub struct RunParams {
    pub strategy: StrategyKind,
    pub radius: u32,
    pub t_max: u32,
    pub horizon: u32,
    pub dwell: DwellSpec,
    pub clip_reachable: bool,
    pub initial_occupancy: f64,
    pub day: u32,
    pub retrain_every: u32,
    pub retrain: RetrainConfig,
}

impl From<&SimConfig> for RunParams {
    fn from(c: &SimConfig) -> Self {
        Self {
            strategy: c.strategy,
            radius: c.radius,
            t_max: c.t_max,
            horizon: c.horizon,
            dwell: c.dwell,
            clip_reachable: c.clip_reachable,
            initial_occupancy: c.initial_occupancy,
            day: c.day,
            retrain_every: c.predictor.retrain_every,
            retrain: c.predictor.retrain_config(),
        }
    }
}

/// Everything a finished run hands to the metrics layer.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub strategy: StrategyKind,
    pub horizon: u32,
    pub events: Vec<Event>,
    pub outcomes: Vec<OutcomeRecord>,
    /// Free-spot fraction per tick, sampled at dispatch.
    pub availability: Vec<f64>,
    /// Attempt outcomes observed during this run, hourly per cell.
    pub history: HistoryCorpus,
}

impl RunOutput {
    pub fn write_events<W: Write>(&self, mut w: W) -> Result<()> {
        for e in &self.events {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Manhattan distance from every cell to the nearest source (`u32::MAX` when
/// there are none), by a two-pass distance transform.
pub fn distance_field(grid: &GridSpec, sources: &[CellCoord]) -> Vec<u32> {
    let n = grid.n() as usize;
    let mut d = vec![u32::MAX; n * n];
    for s in sources {
        d[grid.index(*s)] = 0;
    }
    if sources.is_empty() {
        return d;
    }
    for i in 0..n {
        for j in 0..n {
            let mut v = d[i * n + j];
            if i > 0 {
                v = v.min(d[(i - 1) * n + j].saturating_add(1));
            }
            if j > 0 {
                v = v.min(d[i * n + j - 1].saturating_add(1));
            }
            d[i * n + j] = v;
        }
    }
    for i in (0..n).rev() {
        for j in (0..n).rev() {
            let mut v = d[i * n + j];
            if i + 1 < n {
                v = v.min(d[(i + 1) * n + j].saturating_add(1));
            }
            if j + 1 < n {
                v = v.min(d[i * n + j + 1].saturating_add(1));
            }
            d[i * n + j] = v;
        }
    }
    d
}

/// Free cells a competitor will take this tick: within `radius` of some
/// searching competitor that is strictly closer than every searching
/// participant. Returned with the number of spot units withheld per cell
/// (free units, capped by the number of capturing competitors), in cell
/// order.
pub fn competitor_captures(
    grid: &GridSpec,
    state: &OccupancyState,
    competitors: &[CellCoord],
    participants: &[CellCoord],
    radius: u32,
) -> Vec<(CellCoord, u32)> {
    let to_participant = distance_field(grid, participants);
    let mut capturers: BTreeMap<usize, u32> = BTreeMap::new();
    for &c in competitors {
        for s in visible_spots(c, state, grid, radius) {
            let k = grid.index(s);
            if manhattan(c, s) < to_participant[k] {
                *capturers.entry(k).or_default() += 1;
            }
        }
    }
    capturers
        .into_iter()
        .map(|(k, count)| {
            let s = grid.coord(k);
            (s, count.min(state.free_at(s)))
        })
        .collect()
}

/// Vehicles occupying spots at tick 0 that are not tracked as agents.
#[derive(Debug, Clone, Copy)]
struct Resident {
    cell: CellCoord,
    remaining: u32,
}

pub struct Engine<'a> {
    grid: &'a GridSpec,
    arrivals: &'a ArrivalSeries,
    params: RunParams,
    seed: u64,
    pub occupancy: OccupancyState,
    agents: Vec<Agent>,
    movement: Vec<Option<RngStream>>,
    /// Dispatch rank drawn at spawn; lower keys win equal-cost ties.
    priority: Vec<u64>,
    searching: Vec<usize>,
    parked: Vec<usize>,
    residents: Vec<Resident>,
    departed: usize,
    failed: usize,
    ties: RngStream,
    dwell_rng: RngStream,
    events: Vec<Event>,
    availability: Vec<f64>,
    observations: Vec<CellObservation>,
    base_history: HistoryCorpus,
    history: HistoryCorpus,
    schema: FeatureSchema,
    snapshot: Option<PredictorSnapshot>,
    trends: TrendIndex,
}

impl<'a> Engine<'a> {
    /// `history` seeds the predictor for the prediction-weighted strategy;
    /// an empty corpus yields the uniform prior.
    pub fn new(
        grid: &'a GridSpec,
        arrivals: &'a ArrivalSeries,
        params: RunParams,
        seed: u64,
        history: HistoryCorpus,
    ) -> Result<Self> {
        let cells = grid.cell_count();
        let schema = FeatureSchema { cells };
        let mut engine = Self {
            grid,
            arrivals,
            seed,
            occupancy: OccupancyState::new(grid),
            agents: Vec::new(),
            movement: Vec::new(),
            priority: Vec::new(),
            searching: Vec::new(),
            parked: Vec::new(),
            residents: Vec::new(),
            departed: 0,
            failed: 0,
            ties: RngStream::new(seed, StreamTag::Ties),
            dwell_rng: RngStream::new(seed, StreamTag::Dwell),
            events: Vec::new(),
            availability: Vec::with_capacity(params.horizon as usize),
            observations: (0..cells).map(|cell| CellObservation { cell, ..Default::default() }).collect(),
            trends: TrendIndex::new(&history),
            snapshot: None,
            base_history: history,
            history: HistoryCorpus::default(),
            schema,
            params,
        };
        if engine.params.strategy == StrategyKind::CordApprox {
            let model = retrain(&engine.base_history, schema, &engine.params.retrain)?;
            engine.snapshot = Some(PredictorSnapshot::new(model));
        }
        engine.seed_initial_occupancy()?;
        Ok(engine)
    }

    fn seed_initial_occupancy(&mut self) -> Result<()> {
        let frac = self.params.initial_occupancy;
        if frac <= 0.0 {
            return Ok(());
        }
        let mut rng = RngStream::new(self.seed, StreamTag::Initial);
        for k in 0..self.grid.cell_count() {
            let cell = self.grid.coord(k);
            let units = (self.grid.capacity()[k] as f64 * frac).round() as u32;
            for _ in 0..units {
                let dwell = sample_dwell(&self.params.dwell, &mut rng)?;
                let remaining = rng.random_range(1..=dwell);
                self.occupancy.occupy(cell)?;
                self.residents.push(Resident { cell, remaining });
            }
        }
        Ok(())
    }

    pub fn tick(&self) -> u32 {
        self.occupancy.tick
    }

    pub fn agents(&self) -> &[Agent] {
        &self.agents
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn snapshot_model(&self) -> Option<std::sync::Arc<AvailabilityModel>> {
        self.snapshot.as_ref().map(|s| std::sync::Arc::clone(&s.model))
    }

    fn log(&mut self, idx: usize, event: EventKind, cell: CellCoord) {
        let a = &self.agents[idx];
        self.events.push(Event {
            tick: self.occupancy.tick,
            agent_id: a.id,
            group: a.group,
            event,
            cell: self.grid.index(cell) as u32,
        });
    }

    /// Adds an agent outside the arrival series (tests and tooling).
    pub fn spawn(&mut self, group: Group, cell: CellCoord) -> Result<AgentId> {
        let idx = self.agents.len();
        let id = AgentId(idx as u32);
        let dwell = sample_dwell(&self.params.dwell, &mut self.dwell_rng)?;
        self.agents.push(Agent::new(id, group, cell, self.occupancy.tick, dwell));
        self.movement.push(Some(RngStream::with_key(self.seed, StreamTag::Movement, idx as u64)));
        self.priority.push(self.ties.random());
        self.searching.push(idx);
        self.log(idx, EventKind::Spawn, cell);
        Ok(id)
    }

    fn spawn_arrivals(&mut self) -> Result<()> {
        let t = self.occupancy.tick;
        for group in [Group::Participant, Group::Competitor] {
            let batch: Vec<(usize, u32)> = self.arrivals.at(group, t).collect();
            for (cell, count) in batch {
                let coord = self.grid.coord(cell);
                for _ in 0..count {
                    self.spawn(group, coord)?;
                }
            }
        }
        Ok(())
    }

    fn depart(&mut self) -> Result<()> {
        let mut still = Vec::with_capacity(self.parked.len());
        for idx in std::mem::take(&mut self.parked) {
            let remaining = self.agents[idx].dwell_remaining.unwrap_or(0).saturating_sub(1);
            self.agents[idx].dwell_remaining = Some(remaining);
            if remaining == 0 {
                let cell = self.agents[idx].park_cell.expect("parked agent has a cell");
                self.occupancy.release(cell)?;
                self.agents[idx].status = Status::Departed(self.occupancy.tick);
                self.departed += 1;
                self.log(idx, EventKind::Depart, cell);
            } else {
                still.push(idx);
            }
        }
        self.parked = still;
        let mut kept = Vec::with_capacity(self.residents.len());
        for mut r in std::mem::take(&mut self.residents) {
            r.remaining -= 1;
            if r.remaining == 0 {
                self.occupancy.release(r.cell)?;
            } else {
                kept.push(r);
            }
        }
        self.residents = kept;
        Ok(())
    }

    fn positions(&self, group: Group) -> (Vec<usize>, Vec<CellCoord>) {
        self.searching
            .iter()
            .filter(|&&i| self.agents[i].group == group)
            .map(|&i| (i, self.agents[i].pos))
            .unzip()
    }

    fn dispatch_participants(&mut self) -> Result<()> {
        let t = self.occupancy.tick;
        self.availability.push(self.occupancy.availability());
        let (mut p_idx, _) = self.positions(Group::Participant);
        if p_idx.is_empty() {
            return Ok(());
        }
        p_idx.sort_by_key(|&i| (self.priority[i], i));
        let p_pos: Vec<CellCoord> = p_idx.iter().map(|&i| self.agents[i].pos).collect();
        let (_, c_pos) = self.positions(Group::Competitor);
        let strategy = self.params.strategy;
        let mut spots = self.occupancy.free_spots();
        if strategy.is_coordinated() {
            let captured = competitor_captures(self.grid, &self.occupancy, &c_pos, &p_pos, self.params.radius);
            for (cell, units) in captured {
                if let Ok(pos) = spots.binary_search_by_key(&self.grid.index(cell), |s| self.grid.index(s.0)) {
                    spots[pos].1 -= units;
                }
            }
            spots.retain(|s| s.1 > 0);
        }
        let oracle = (strategy == StrategyKind::CordOracle).then(|| OracleContext {
            competitors: &c_pos,
            radius: self.params.radius,
            clip_to: self.params.clip_reachable.then(|| self.grid.n()),
        });
        let n = self.grid.n();
        let cells = self.grid.cell_count();
        let bucket = self.params.day * BUCKETS_PER_DAY + t / BUCKET_MINUTES;
        let predicted = match self.snapshot.as_mut() {
            Some(snap) if strategy == StrategyKind::CordApprox => {
                Some(snap.availability(cells, bucket, &self.trends)?.to_vec())
            }
            _ => None,
        };
        let input = DispatchInput {
            participants: &p_pos,
            spots: &spots,
            oracle,
            availability: predicted.as_deref().map(|p| (p, n)),
        };
        let targets = dispatch(strategy, &input, &mut self.ties)?;
        for (idx, target) in p_idx.into_iter().zip(targets) {
            if let Some(s) = target {
                if self.agents[idx].target != Some(s) {
                    self.agents[idx].target = Some(s);
                    self.log(idx, EventKind::Assign, s);
                }
            }
        }
        Ok(())
    }

    fn move_agents(&mut self) -> Result<()> {
        let t = self.occupancy.tick;
        for k in 0..self.searching.len() {
            let idx = self.searching[k];
            if self.agents[idx].spawn_tick >= t {
                continue;
            }
            let pos = self.agents[idx].pos;
            let rng = self.movement[idx].as_mut().expect("searching agent has a stream");
            let next = match self.agents[idx].group {
                Group::Participant => match self.agents[idx].target {
                    Some(target) => step_participant(pos, target, rng),
                    None => {
                        let visible = visible_spots(pos, &self.occupancy, self.grid, self.params.radius);
                        step_competitor(self.grid, pos, &visible, rng).0
                    }
                },
                Group::Competitor => {
                    let visible = visible_spots(pos, &self.occupancy, self.grid, self.params.radius);
                    let (next, goal) = step_competitor(self.grid, pos, &visible, rng);
                    self.agents[idx].target = goal;
                    next
                }
            };
            if next != pos {
                self.agents[idx].pos = next;
                self.log(idx, EventKind::Move, next);
            }
        }
        Ok(())
    }

    fn resolve(&mut self) -> Result<()> {
        let t = self.occupancy.tick;
        let mut claims: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &idx in &self.searching {
            let a = &self.agents[idx];
            let claiming = match a.group {
                Group::Participant => match a.target {
                    Some(t) => t == a.pos,
                    None => self.occupancy.free_at(a.pos) > 0,
                },
                Group::Competitor => a.target == Some(a.pos) || self.occupancy.free_at(a.pos) > 0,
            };
            if claiming {
                claims.entry(self.grid.index(a.pos)).or_default().push(idx);
            }
        }
        for (k, claimants) in claims {
            let cell = self.grid.coord(k);
            let free = self.occupancy.free_at(cell);
            let winners = resolve_parking(&claimants, free, &mut self.ties);
            if winners.len() as u32 > free {
                return Err(SimError::Invariant {
                    tick: t,
                    msg: format!("cell {k}: {} awards for {free} free units", winners.len()),
                });
            }
            self.observations[k].attempts += claimants.len() as u32;
            self.observations[k].successes += winners.len() as u32;
            for idx in winners {
                self.occupancy.occupy(cell)?;
                let a = &mut self.agents[idx];
                a.status = Status::Parked(t);
                a.park_cell = Some(cell);
                a.park_tick = Some(t);
                a.dwell_remaining = Some(a.dwell);
                self.parked.push(idx);
                self.movement[idx] = None;
                self.log(idx, EventKind::Park, cell);
            }
        }
        Ok(())
    }

    fn expire(&mut self) {
        let t = self.occupancy.tick;
        let t_max = self.params.t_max;
        let mut still = Vec::with_capacity(self.searching.len());
        for idx in std::mem::take(&mut self.searching) {
            let a = &self.agents[idx];
            if !a.is_searching() {
                continue;
            }
            if a.age(t) >= t_max {
                let pos = a.pos;
                self.agents[idx].status = Status::Failed(t);
                self.failed += 1;
                self.movement[idx] = None;
                self.log(idx, EventKind::Fail, pos);
            } else {
                still.push(idx);
            }
        }
        self.searching = still;
    }

    fn merge_history(&mut self) -> Result<()> {
        let t = self.occupancy.tick;
        let end_of_bucket = (t + 1) % BUCKET_MINUTES == 0 || t + 1 == self.params.horizon;
        if end_of_bucket {
            let bucket = self.params.day * BUCKETS_PER_DAY + t / BUCKET_MINUTES;
            self.history.update(bucket, &self.observations)?;
            for o in &mut self.observations {
                o.attempts = 0;
                o.successes = 0;
            }
        }
        let every = self.params.retrain_every;
        if self.snapshot.is_some() && every > 0 && (t + 1) % every == 0 {
            let mut corpus = self.base_history.clone();
            corpus.merge(&self.history);
            let model = retrain(&corpus, self.schema, &self.params.retrain)?;
            self.trends = TrendIndex::new(&corpus);
            self.snapshot = Some(PredictorSnapshot::new(model));
        }
        Ok(())
    }

    fn check_invariants(&self) -> Result<()> {
        let t = self.occupancy.tick;
        self.occupancy
            .check_bounds()
            .map_err(|e| SimError::Invariant { tick: t, msg: e.to_string() })?;
        let accounted = self.searching.len() + self.parked.len() + self.departed + self.failed;
        if accounted != self.agents.len() {
            return Err(SimError::Invariant {
                tick: t,
                msg: format!(
                    "{} agents spawned but {} searching + {} parked + {} departed + {} failed",
                    self.agents.len(),
                    self.searching.len(),
                    self.parked.len(),
                    self.departed,
                    self.failed
                ),
            });
        }
        let held = (self.parked.len() + self.residents.len()) as u64;
        if held != self.occupancy.total_occupied() {
            return Err(SimError::Invariant {
                tick: t,
                msg: format!("{held} parked vehicles but {} occupied units", self.occupancy.total_occupied()),
            });
        }
        Ok(())
    }

    /// Advances one minute.
    pub fn step(&mut self) -> Result<()> {
        if self.occupancy.tick >= self.params.horizon {
            return Err(SimError::Contract(format!(
                "tick {} is past the horizon {}",
                self.occupancy.tick, self.params.horizon
            )));
        }
        self.spawn_arrivals()?;
        self.depart()?;
        self.dispatch_participants()?;
        self.move_agents()?;
        self.resolve()?;
        self.expire();
        self.merge_history()?;
        self.check_invariants()?;
        self.occupancy.tick += 1;
        Ok(())
    }

    pub fn run(mut self) -> Result<RunOutput> {
        while self.occupancy.tick < self.params.horizon {
            self.step()?;
        }
        Ok(self.finish())
    }

    pub fn finish(self) -> RunOutput {
        let outcomes = self
            .agents
            .iter()
            .map(|a| OutcomeRecord {
                agent_id: a.id,
                group: a.group,
                spawn_tick: a.spawn_tick,
                terminal: match (a.status, a.park_tick) {
                    (Status::Failed(t), _) => Terminal::Failed(t),
                    (_, Some(t)) => Terminal::Parked(t),
                    _ => Terminal::Censored,
                },
                park_cell: a.park_cell.map(|c| self.grid.index(c)),
            })
            .collect();
        RunOutput {
            seed: self.seed,
            strategy: self.params.strategy,
            horizon: self.params.horizon,
            events: self.events,
            outcomes,
            availability: self.availability,
            history: self.history,
        }
    }
}

/// Loaded, validated inputs shared by every run of a config.
pub struct Scenario {
    pub config: SimConfig,
    pub grid: GridSpec,
    pub history: Option<HistoryCorpus>,
}

impl Scenario {
    /// Reads every input up front so bad files fail before tick 0.
    pub fn load(config: SimConfig) -> Result<Self> {
        config.validate()?;
        let grid = config.load_grid()?;
        let history = config.load_history()?;
        if config.strategy == StrategyKind::CordApprox && history.is_none() {
            return Err(SimError::config(
                "predictor requires history: cord-approx needs predictor.history_file",
            ));
        }
        // Surface arrival errors now rather than inside a run.
        config.load_arrivals(&grid, config.run_seed(0))?;
        Ok(Self { config, grid, history })
    }

    pub fn run_one(&self, index: u32) -> Result<RunOutput> {
        let seed = self.config.run_seed(index);
        let arrivals = self.config.load_arrivals(&self.grid, seed)?;
        let history = self.history.clone().unwrap_or_default();
        Engine::new(&self.grid, &arrivals, RunParams::from(&self.config), seed, history)?.run()
    }

    /// All configured runs, executed on separate threads; output order
    /// follows run index.
    pub fn run_all(&self) -> Result<Vec<RunOutput>> {
        let runs = self.config.runs;
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..runs).map(|r| scope.spawn(move || self.run_one(r))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("run thread panicked"))
                .collect()
        })
    }
}

pub fn run_simulation(config: SimConfig) -> Result<Vec<RunOutput>> {
    Scenario::load(config)?.run_all()
}
