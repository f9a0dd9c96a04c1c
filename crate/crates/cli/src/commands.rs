use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use anyhow::Context;
use parksim_core::agents::Event;
use parksim_core::config::SimConfig;
use parksim_core::demand::Group;
use parksim_core::engine::{RunOutput, Scenario};
use parksim_core::metrics::{fmt_opt, SimReport, Window};
use parksim_core::predictor::{retrain, AvailabilityModel, FeatureSchema, HistoryCorpus};
use parksim_core::strategies::StrategyKind;
use serde::Serialize;

use crate::Overrides;

/// Bad or missing input that is not a config error (exit code 2).
#[derive(Debug)]
pub struct InputError(pub String);

impl std::fmt::Display for InputError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

#[derive(Serialize)]
struct RunEvent<'a> {
    run: usize,
    #[serde(flatten)]
    event: &'a Event,
}

fn window(cfg: &SimConfig) -> Window {
    Window::new(cfg.window.0, cfg.window.1)
}

/// Writes the run artifacts for one strategy into `out`.
fn write_outputs(scenario: &Scenario, runs: &[RunOutput], out: &Path) -> anyhow::Result<SimReport> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut w = BufWriter::new(File::create(out.join("events.ndjson"))?);
    for (i, r) in runs.iter().enumerate() {
        for e in &r.events {
            serde_json::to_writer(&mut w, &RunEvent { run: i, event: e })?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()?;

    let mut history = HistoryCorpus::default();
    for r in runs {
        history.merge(&r.history);
    }
    history.write_csv(File::create(out.join("history.csv"))?)?;

    let report = SimReport::new(scenario.config.strategy, &scenario.grid, window(&scenario.config), runs);
    report.export(out)?;
    Ok(report)
}

fn print_summary(label: &str, report: &SimReport) {
    println!(
        "{label}: participants success {} search {} | competitors success {} search {} ({} runs)",
        fmt_opt(report.mean_success(Group::Participant)),
        fmt_opt(report.mean_search_time(Group::Participant)),
        fmt_opt(report.mean_success(Group::Competitor)),
        fmt_opt(report.mean_search_time(Group::Competitor)),
        report.runs.len()
    );
}

pub fn run(o: &Overrides, out: &Path) -> anyhow::Result<ExitCode> {
    let scenario = Scenario::load(o.load()?)?;
    let runs = scenario.run_all()?;
    let report = write_outputs(&scenario, &runs, out)?;
    print_summary(scenario.config.strategy.as_str(), &report);
    Ok(ExitCode::SUCCESS)
}

struct Cell {
    group: usize,
    run: u32,
}

pub fn sweep(
    o: &Overrides,
    strategies: &[StrategyKind],
    scales: &[f64],
    jobs: usize,
    out: &Path,
) -> anyhow::Result<ExitCode> {
    let base = o.load()?;
    base.validate()?;
    let strategies = if strategies.is_empty() { &StrategyKind::ALL[..] } else { strategies };
    if scales.is_empty() || base.runs == 0 {
        return Err(InputError("sweep needs at least one scale and one run".into()).into());
    }

    let mut groups = Vec::new();
    for &scale in scales {
        for &strategy in strategies {
            let mut cfg = base.clone();
            cfg.strategy = strategy;
            cfg.demand_scale = scale;
            let label = format!("{strategy}_x{scale}");
            groups.push((label, Scenario::load(cfg).map_err(|e| e.to_string())));
        }
    }
    let cells: Vec<Cell> = (0..groups.len())
        .flat_map(|group| (0..base.runs).map(move |run| Cell { group, run }))
        .collect();

    let results: Vec<Mutex<Option<Result<RunOutput, String>>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, cells.len().max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::Relaxed);
                let Some(cell) = cells.get(k) else { break };
                let res = match &groups[cell.group].1 {
                    Ok(sc) => sc.run_one(cell.run).map_err(|e| e.to_string()),
                    Err(e) => Err(e.clone()),
                };
                *results[k].lock().unwrap() = Some(res);
            });
        }
    });
    let mut results: Vec<Result<RunOutput, String>> =
        results.into_iter().map(|m| m.into_inner().unwrap().expect("every cell ran")).collect();

    fs::create_dir_all(out)?;
    let mut table = String::from(
        "strategy,scale,run,seed,status,participant_success_ratio,competitor_success_ratio,\
         participant_avg_search_time,competitor_avg_search_time,mean_availability\n",
    );
    let mut failed = 0usize;
    let per_group = base.runs as usize;
    for (g, (label, scenario)) in groups.iter().enumerate() {
        let chunk: Vec<Result<RunOutput, String>> = results.drain(..per_group).collect();
        let strategy = strategies[g % strategies.len()];
        let scale = scales[g / strategies.len()];
        let ok: Vec<RunOutput> = chunk.iter().filter_map(|r| r.as_ref().ok().cloned()).collect();
        let report = match scenario {
            Ok(sc) if !ok.is_empty() => {
                let report = write_outputs(sc, &ok, &out.join(label))?;
                print_summary(label, &report);
                Some(report)
            }
            _ => None,
        };
        let mut summaries = report.iter().flat_map(|r| r.runs.iter());
        for (run, res) in chunk.iter().enumerate() {
            let seed = base.run_seed(run as u32);
            match res {
                Ok(_) => {
                    let s = summaries.next().expect("one summary per successful run");
                    table += &format!(
                        "{strategy},{scale},{run},{seed},ok,{},{},{},{},{}\n",
                        fmt_opt(s.participants.success_ratio),
                        fmt_opt(s.competitors.success_ratio),
                        fmt_opt(s.participants.avg_search_time),
                        fmt_opt(s.competitors.avg_search_time),
                        fmt_opt(s.mean_availability),
                    );
                }
                Err(e) => {
                    failed += 1;
                    eprintln!("{label} run {run}: {e}");
                    table += &format!("{strategy},{scale},{run},{seed},failed,,,,,\n");
                }
            }
        }
    }
    fs::write(out.join("comparison.csv"), table)?;
    println!("{} of {} runs completed", cells.len() - failed, cells.len());
    Ok(if failed > 0 { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

pub fn train(o: &Overrides, out: &Path) -> anyhow::Result<ExitCode> {
    let cfg = o.load()?;
    cfg.validate()?;
    let grid = cfg.load_grid()?;
    let corpus = cfg.load_history()?.ok_or_else(|| {
        InputError("predictor requires history: set predictor.history_file or pass --history".into())
    })?;
    let model = retrain(&corpus, FeatureSchema { cells: grid.cell_count() }, &cfg.predictor.retrain_config())?;
    fs::write(out, serde_json::to_string_pretty(&model)? + "\n")?;
    match &model {
        AvailabilityModel::Prior { p } => println!("no usable history; wrote prior p = {p}"),
        AvailabilityModel::Ridge(m) => println!(
            "fitted {} coefficients on {} records, lambda = {}",
            m.coefficients.len(),
            corpus.records.len(),
            m.lambda
        ),
    }
    Ok(ExitCode::SUCCESS)
}

/// `report.json` files in `dir` and its immediate subdirectories.
fn find_reports(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let own = dir.join("report.json");
    if own.is_file() {
        found.push(own);
    }
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    found.extend(subdirs.into_iter().map(|d| d.join("report.json")).filter(|p| p.is_file()));
    Ok(found)
}

pub fn report(dir: &Path) -> anyhow::Result<ExitCode> {
    let paths = find_reports(dir)?;
    if paths.is_empty() {
        return Err(InputError(format!("no report.json found under {}", dir.display())).into());
    }
    let mut table = String::from(
        "source,strategy,runs,participant_success_ratio,competitor_success_ratio,\
         participant_avg_search_time,competitor_avg_search_time\n",
    );
    for path in paths {
        let text = fs::read_to_string(&path)?;
        let report = SimReport::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
        let parent = path.parent().unwrap_or(dir);
        report.export(parent)?;
        let source = parent.strip_prefix(dir).unwrap_or(parent).display().to_string();
        let source = if source.is_empty() { ".".to_string() } else { source };
        print_summary(&source, &report);
        table += &format!(
            "{source},{},{},{},{},{},{}\n",
            report.strategy,
            report.runs.len(),
            fmt_opt(report.mean_success(Group::Participant)),
            fmt_opt(report.mean_success(Group::Competitor)),
            fmt_opt(report.mean_search_time(Group::Participant)),
            fmt_opt(report.mean_search_time(Group::Competitor)),
        );
    }
    fs::write(dir.join("comparison_summary.csv"), table)?;
    Ok(ExitCode::SUCCESS)
}

pub fn validate(o: &Overrides) -> anyhow::Result<ExitCode> {
    let scenario = Scenario::load(o.load()?)?;
    let c = &scenario.config;
    println!(
        "ok: {}x{} grid, {} spots, strategy {}, {} runs, horizon {} min",
        scenario.grid.n(),
        scenario.grid.n(),
        scenario.grid.total_capacity(),
        c.strategy,
        c.runs,
        c.horizon
    );
    Ok(ExitCode::SUCCESS)
}
