//! Parameter sweeps over simulated trials and the ordering report built
//! from them.
//!
//! Every cell of the sweep is one combination of number of turns,
//! assistance mode and the two noise levels. Trials within a cell are
//! seeded from the base seed, the turn count and the trial index (tasks),
//! plus both noise indices (user noise). The assistance mode is left out of
//! the seed so that all three modes face the same tasks and the same
//! random stream.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assistance::{AssistanceConfig, AssistanceMode, DEFAULT_EPSILON};
use crate::env::{generate_task, run_trial, EnvStep, DEFAULT_MAX_STEPS, DEFAULT_SEGMENT_LEN};
use crate::error::ExperimentError;
use crate::model::ControlMapping;
use crate::user_model::{mixture_tables, NoiseLevel, SimulatedUser};

pub const TRIALS_FILE: &str = "trials.jsonl";
pub const TRIALS_CSV: &str = "trials.csv";
pub const CELLS_CSV: &str = "cells.csv";
pub const CONFIG_FILE: &str = "config.json";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n_turns: Vec<usize>,
    pub assistance: Vec<AssistanceMode>,
    pub lambda_i: Vec<NoiseLevel>,
    pub lambda_m: Vec<NoiseLevel>,
    pub trials_per_cell: usize,
    pub epsilon: f64,
    pub rho_user: f64,
    pub rho_assumed: f64,
    pub base_seed: u64,
    pub segment_len: u32,
    pub max_steps: u32,
    pub mapping: ControlMapping,
    /// Keep full step traces in the per-trial log.
    pub record_traces: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        let levels = [0.1, 0.3, 0.5, 0.7].map(|l| NoiseLevel::new(l).expect("in range"));
        Self {
            n_turns: vec![1, 2, 3],
            assistance: vec![
                AssistanceMode::Filter,
                AssistanceMode::Corrective,
                AssistanceMode::NoAssistance,
            ],
            lambda_i: levels.to_vec(),
            lambda_m: levels.to_vec(),
            trials_per_cell: 500,
            epsilon: DEFAULT_EPSILON,
            rho_user: 0.0,
            rho_assumed: 0.0,
            base_seed: 0,
            segment_len: DEFAULT_SEGMENT_LEN,
            max_steps: DEFAULT_MAX_STEPS,
            mapping: ControlMapping::default(),
            record_traces: false,
        }
    }
}

impl SweepConfig {
    pub fn from_json_file(path: &Path) -> Result<Self, ExperimentError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        let cfg: SweepConfig = serde_json::from_str(&text)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let empty = [
            ("n_turns", self.n_turns.is_empty()),
            ("assistance", self.assistance.is_empty()),
            ("lambda_i", self.lambda_i.is_empty()),
            ("lambda_m", self.lambda_m.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(ExperimentError::Config(format!(
                "`{name}` must not be empty"
            )));
        }
        if self.trials_per_cell == 0 {
            return Err(ExperimentError::Config(
                "`trials_per_cell` must be at least 1".into(),
            ));
        }
        for (name, v) in [
            ("epsilon", self.epsilon),
            ("rho_user", self.rho_user),
            ("rho_assumed", self.rho_assumed),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ExperimentError::Config(format!(
                    "`{name}` = {v} outside [0, 1]"
                )));
            }
        }
        if self.segment_len == 0 || self.max_steps == 0 {
            return Err(ExperimentError::Config(
                "`segment_len` and `max_steps` must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn cells(&self) -> Vec<CellParams> {
        let mut out = Vec::new();
        for (ni, &n_turns) in self.n_turns.iter().enumerate() {
            for &assistance in &self.assistance {
                for (ii, &lambda_i) in self.lambda_i.iter().enumerate() {
                    for (mi, &lambda_m) in self.lambda_m.iter().enumerate() {
                        out.push(CellParams {
                            cell: out.len(),
                            n_turns,
                            assistance,
                            lambda_i: lambda_i.value(),
                            lambda_m: lambda_m.value(),
                            noise_key: [ni as u64, ii as u64, mi as u64],
                        });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellParams {
    pub cell: usize,
    pub n_turns: usize,
    pub assistance: AssistanceMode,
    pub lambda_i: f64,
    pub lambda_m: f64,
    noise_key: [u64; 3],
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x6A09_E667_F3BC_C908, |acc, p| splitmix(acc ^ splitmix(*p)))
}

/// One line of the per-trial log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_id: usize,
    pub cell: usize,
    pub assistance: AssistanceMode,
    pub n_turns: usize,
    pub lambda_i: f64,
    pub lambda_m: f64,
    pub task_seed: u64,
    pub noise_seed: u64,
    pub optimal_steps: u32,
    pub optimal_mode_switches: u32,
    pub steps: u32,
    pub mode_switches: u32,
    pub success: bool,
    pub dist_xy: u32,
    pub dist_theta: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub trace: Vec<EnvStep>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub median: f64,
    pub stddev: f64,
}

impl Stats {
    /// Sample standard deviation; zero for a single value.
    pub fn of(values: &[f64]) -> Stats {
        let n = values.len();
        assert!(n > 0, "statistics of an empty sample");
        let mean = values.iter().sum::<f64>() / n as f64;
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
        };
        let stddev = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Stats {
            mean,
            median,
            stddev,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCellResult {
    pub cell: usize,
    pub n_turns: usize,
    pub assistance: AssistanceMode,
    pub lambda_i: f64,
    pub lambda_m: f64,
    pub trials: usize,
    pub steps: Stats,
    pub mode_switches: Stats,
    pub success_rate: f64,
    pub mean_optimal_steps: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepOutput {
    pub config: SweepConfig,
    pub cells: Vec<SweepCellResult>,
    pub trials: Vec<TrialRecord>,
}

fn run_cell_trial(
    cfg: &SweepConfig,
    cell: &CellParams,
    trial: usize,
) -> Result<TrialRecord, ExperimentError> {
    let task_seed = derive_seed(&[cfg.base_seed, cell.n_turns as u64, trial as u64]);
    let [ni, ii, mi] = cell.noise_key;
    let noise_seed = derive_seed(&[cfg.base_seed, ni, ii, mi, trial as u64, 1]);
    let task = generate_task(
        cell.n_turns,
        cfg.segment_len,
        cfg.max_steps,
        &mut ChaCha8Rng::seed_from_u64(task_seed),
    )?;
    let tables = mixture_tables(
        NoiseLevel::new(cell.lambda_i)?,
        NoiseLevel::new(cell.lambda_m)?,
        &cfg.mapping,
    );
    let user = SimulatedUser::new(tables, cfg.rho_user, noise_seed)?;
    let assist = AssistanceConfig::new(cell.assistance, cfg.epsilon)?
        .with_assumed_policy_noise(cfg.rho_assumed)?;
    let result = run_trial(
        &task,
        &user,
        &assist,
        &cfg.mapping,
        &mut ChaCha8Rng::seed_from_u64(noise_seed),
    )?;
    Ok(TrialRecord {
        trial_id: cell.cell * cfg.trials_per_cell + trial,
        cell: cell.cell,
        assistance: cell.assistance,
        n_turns: cell.n_turns,
        lambda_i: cell.lambda_i,
        lambda_m: cell.lambda_m,
        task_seed,
        noise_seed,
        optimal_steps: task.optimal_steps,
        optimal_mode_switches: task.optimal_mode_switches,
        steps: result.steps_total,
        mode_switches: result.mode_switches,
        success: result.success,
        dist_xy: result.final_distance.xy,
        dist_theta: result.final_distance.theta,
        trace: if cfg.record_traces {
            result.trace
        } else {
            Vec::new()
        },
    })
}

/// Runs every cell of the sweep. Trials run in parallel; results come back
/// in cell order, then trial order.
pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepOutput, ExperimentError> {
    cfg.validate()?;
    let cells = cfg.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..cfg.trials_per_cell).map(move |t| (c, t)))
        .collect();
    let trials = jobs
        .par_iter()
        .map(|&(c, t)| run_cell_trial(cfg, &cells[c], t))
        .collect::<Result<Vec<_>, _>>()?;
    let cell_results = aggregate(&trials);
    Ok(SweepOutput {
        config: cfg.clone(),
        cells: cell_results,
        trials,
    })
}

/// Groups per-trial records by cell id (in order of first appearance) and
/// computes cell statistics.
pub fn aggregate(trials: &[TrialRecord]) -> Vec<SweepCellResult> {
    let mut order: Vec<usize> = Vec::new();
    let mut groups: std::collections::BTreeMap<usize, Vec<&TrialRecord>> = Default::default();
    for t in trials {
        let g = groups.entry(t.cell).or_default();
        if g.is_empty() {
            order.push(t.cell);
        }
        g.push(t);
    }
    order
        .into_iter()
        .map(|cell| {
            let g = &groups[&cell];
            let first = g[0];
            let steps: Vec<f64> = g.iter().map(|t| t.steps as f64).collect();
            let switches: Vec<f64> = g.iter().map(|t| t.mode_switches as f64).collect();
            let n = g.len() as f64;
            SweepCellResult {
                cell,
                n_turns: first.n_turns,
                assistance: first.assistance,
                lambda_i: first.lambda_i,
                lambda_m: first.lambda_m,
                trials: g.len(),
                steps: Stats::of(&steps),
                mode_switches: Stats::of(&switches),
                success_rate: g.iter().filter(|t| t.success).count() as f64 / n,
                mean_optimal_steps: g.iter().map(|t| t.optimal_steps as f64).sum::<f64>() / n,
            }
        })
        .collect()
}

#[derive(Serialize)]
struct TrialCsvRow {
    trial_id: usize,
    assistance: AssistanceMode,
    n_turns: usize,
    lambda_i: f64,
    lambda_m: f64,
    steps: u32,
    mode_switches: u32,
    success: bool,
    dist_xy: u32,
    dist_theta: u32,
}

#[derive(Serialize)]
struct CellCsvRow {
    cell: usize,
    assistance: AssistanceMode,
    n_turns: usize,
    lambda_i: f64,
    lambda_m: f64,
    trials: usize,
    steps_mean: f64,
    steps_median: f64,
    steps_stddev: f64,
    mode_switches_mean: f64,
    mode_switches_median: f64,
    mode_switches_stddev: f64,
    success_rate: f64,
    optimal_steps_mean: f64,
}

/// Writes `config.json`, `trials.jsonl`, `trials.csv` and `cells.csv` into `dir`.
pub fn write_sweep(out: &SweepOutput, dir: &Path) -> Result<(), ExperimentError> {
    fs::create_dir_all(dir)?;
    fs::write(
        dir.join(CONFIG_FILE),
        serde_json::to_string_pretty(&out.config)? + "\n",
    )?;

    let mut jsonl = BufWriter::new(File::create(dir.join(TRIALS_FILE))?);
    for t in &out.trials {
        serde_json::to_writer(&mut jsonl, t)?;
        jsonl.write_all(b"\n")?;
    }
    jsonl.flush()?;

    let mut csv = csv::Writer::from_path(dir.join(TRIALS_CSV))?;
    for t in &out.trials {
        csv.serialize(TrialCsvRow {
            trial_id: t.trial_id,
            assistance: t.assistance,
            n_turns: t.n_turns,
            lambda_i: t.lambda_i,
            lambda_m: t.lambda_m,
            steps: t.steps,
            mode_switches: t.mode_switches,
            success: t.success,
            dist_xy: t.dist_xy,
            dist_theta: t.dist_theta,
        })?;
    }
    csv.flush()?;

    let mut csv = csv::Writer::from_path(dir.join(CELLS_CSV))?;
    for c in &out.cells {
        csv.serialize(CellCsvRow {
            cell: c.cell,
            assistance: c.assistance,
            n_turns: c.n_turns,
            lambda_i: c.lambda_i,
            lambda_m: c.lambda_m,
            trials: c.trials,
            steps_mean: c.steps.mean,
            steps_median: c.steps.median,
            steps_stddev: c.steps.stddev,
            mode_switches_mean: c.mode_switches.mean,
            mode_switches_median: c.mode_switches.median,
            mode_switches_stddev: c.mode_switches.stddev,
            success_rate: c.success_rate,
            optimal_steps_mean: c.mean_optimal_steps,
        })?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_trials(dir: &Path) -> Result<Vec<TrialRecord>, ExperimentError> {
    let reader = BufReader::new(File::open(dir.join(TRIALS_FILE))?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Mean steps of each assistance mode in one `(λ_i, λ_m)` column, pooled over turn counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseCellRanking {
    pub lambda_i: f64,
    pub lambda_m: f64,
    /// Modes from fewest to most mean steps.
    pub ranking: Vec<(AssistanceMode, f64)>,
    /// Corrective < Filter < NoAssistance among the modes present.
    pub expected_order_holds: bool,
}

/// Mean-step gap between two modes as the internal-model noise varies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapTrend {
    pub lambda_m: f64,
    pub worse: AssistanceMode,
    pub better: AssistanceMode,
    /// `(λ_i, mean(worse) - mean(better))`, in increasing `λ_i`.
    pub gaps: Vec<(f64, f64)>,
    /// Gap at the largest `λ_i` is smaller than at the smallest.
    pub shrinks: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderingReport {
    pub rankings: Vec<NoiseCellRanking>,
    pub gap_trends: Vec<GapTrend>,
    pub all_orderings_hold: bool,
}

const EXPECTED_ORDER: [AssistanceMode; 3] = [
    AssistanceMode::Corrective,
    AssistanceMode::Filter,
    AssistanceMode::NoAssistance,
];

fn pooled_mean(cells: &[SweepCellResult], mode: AssistanceMode, li: f64, lm: f64) -> Option<f64> {
    let (sum, n) = cells
        .iter()
        .filter(|c| c.assistance == mode && c.lambda_i == li && c.lambda_m == lm)
        .fold((0.0, 0usize), |(s, n), c| {
            (s + c.steps.mean * c.trials as f64, n + c.trials)
        });
    (n > 0).then(|| sum / n as f64)
}

fn distinct_sorted(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

pub fn summarize(cells: &[SweepCellResult]) -> OrderingReport {
    let lis = distinct_sorted(cells.iter().map(|c| c.lambda_i));
    let lms = distinct_sorted(cells.iter().map(|c| c.lambda_m));
    let modes: Vec<AssistanceMode> = EXPECTED_ORDER
        .into_iter()
        .filter(|m| cells.iter().any(|c| c.assistance == *m))
        .collect();

    let mut rankings = Vec::new();
    for &li in &lis {
        for &lm in &lms {
            let means: Vec<(AssistanceMode, f64)> = modes
                .iter()
                .filter_map(|&m| pooled_mean(cells, m, li, lm).map(|v| (m, v)))
                .collect();
            let expected_order_holds = means.windows(2).all(|w| w[0].1 < w[1].1);
            let mut ranking = means;
            ranking.sort_by(|a, b| a.1.total_cmp(&b.1));
            rankings.push(NoiseCellRanking {
                lambda_i: li,
                lambda_m: lm,
                ranking,
                expected_order_holds,
            });
        }
    }

    let mut gap_trends = Vec::new();
    for (wi, &worse) in modes.iter().enumerate().rev() {
        for &better in &modes[..wi] {
            for &lm in &lms {
                let gaps: Vec<(f64, f64)> = lis
                    .iter()
                    .filter_map(|&li| {
                        Some((
                            li,
                            pooled_mean(cells, worse, li, lm)?
                                - pooled_mean(cells, better, li, lm)?,
                        ))
                    })
                    .collect();
                let shrinks = match (gaps.first(), gaps.last()) {
                    (Some(lo), Some(hi)) if gaps.len() > 1 => hi.1 < lo.1,
                    _ => false,
                };
                gap_trends.push(GapTrend {
                    lambda_m: lm,
                    worse,
                    better,
                    gaps,
                    shrinks,
                });
            }
        }
    }

    OrderingReport {
        all_orderings_hold: rankings.iter().all(|r| r.expected_order_holds),
        rankings,
        gap_trends,
    }
}

impl OrderingReport {
    pub fn render(&self) -> String {
        let mut s = String::new();
        for r in &self.rankings {
            let ranks: Vec<String> = r
                .ranking
                .iter()
                .map(|(m, v)| format!("{m}={v:.2}"))
                .collect();
            s.push_str(&format!(
                "lambda_i={} lambda_m={}: {} [{}]\n",
                r.lambda_i,
                r.lambda_m,
                ranks.join(" < "),
                if r.expected_order_holds {
                    "ordering holds"
                } else {
                    "ordering violated"
                }
            ));
        }
        for g in &self.gap_trends {
            let gaps: Vec<String> = g
                .gaps
                .iter()
                .map(|(li, d)| format!("{li}:{d:.2}"))
                .collect();
            s.push_str(&format!(
                "gap {}-{} at lambda_m={}: {} [{}]\n",
                g.worse,
                g.better,
                g.lambda_m,
                gaps.join(" "),
                if g.shrinks {
                    "shrinks"
                } else {
                    "does not shrink"
                }
            ));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(trials: usize) -> SweepConfig {
        SweepConfig {
            n_turns: vec![1, 2],
            lambda_i: vec![NoiseLevel::new(0.1).unwrap(), NoiseLevel::new(0.5).unwrap()],
            lambda_m: vec![NoiseLevel::new(0.3).unwrap()],
            trials_per_cell: trials,
            ..SweepConfig::default()
        }
    }

    #[test]
    fn default_grid_has_144_cells() {
        let cfg = SweepConfig::default();
        assert_eq!(cfg.cells().len(), 144);
        cfg.validate().unwrap();
    }

    #[test]
    fn empty_lists_are_config_errors() {
        for broken in [
            SweepConfig {
                n_turns: vec![],
                ..SweepConfig::default()
            },
            SweepConfig {
                assistance: vec![],
                ..SweepConfig::default()
            },
            SweepConfig {
                lambda_i: vec![],
                ..SweepConfig::default()
            },
            SweepConfig {
                lambda_m: vec![],
                ..SweepConfig::default()
            },
            SweepConfig {
                trials_per_cell: 0,
                ..SweepConfig::default()
            },
            SweepConfig {
                epsilon: 1.5,
                ..SweepConfig::default()
            },
        ] {
            assert!(run_sweep(&broken).unwrap_err().is_config());
        }
    }

    #[test]
    fn config_json_overrides_defaults() {
        let cfg: SweepConfig =
            serde_json::from_str(r#"{"trials_per_cell": 7, "lambda_i": [0.2]}"#).unwrap();
        assert_eq!(cfg.trials_per_cell, 7);
        assert_eq!(cfg.lambda_i, vec![NoiseLevel::new(0.2).unwrap()]);
        assert_eq!(cfg.n_turns, vec![1, 2, 3]);
        assert!(serde_json::from_str::<SweepConfig>(r#"{"lambda_i": [1.2]}"#).is_err());
        assert!(serde_json::from_str::<SweepConfig>(r#"{"bogus": 1}"#).is_err());
    }

    #[test]
    fn cell_count_and_trial_count() {
        let cfg = small(3);
        let out = run_sweep(&cfg).unwrap();
        assert_eq!(out.cells.len(), 2 * 3 * 2);
        assert_eq!(out.trials.len(), out.cells.len() * 3);
        for (i, c) in out.cells.iter().enumerate() {
            assert_eq!(c.cell, i);
            assert_eq!(c.trials, 3);
        }
        let ids: Vec<usize> = out.trials.iter().map(|t| t.trial_id).collect();
        assert_eq!(ids, (0..out.trials.len()).collect::<Vec<_>>());
    }

    #[test]
    fn modes_share_tasks_and_noise_streams() {
        let out = run_sweep(&small(2)).unwrap();
        let key = |t: &TrialRecord| {
            (
                t.n_turns,
                t.lambda_i.to_bits(),
                t.lambda_m.to_bits(),
                t.trial_id % 2,
            )
        };
        for a in &out.trials {
            for b in &out.trials {
                if key(a) == key(b) {
                    assert_eq!((a.task_seed, a.noise_seed), (b.task_seed, b.noise_seed));
                }
            }
        }
    }

    #[test]
    fn zero_noise_sweep_is_optimal() {
        let cfg = SweepConfig {
            lambda_i: vec![NoiseLevel::new(0.0).unwrap()],
            lambda_m: vec![NoiseLevel::new(0.0).unwrap()],
            trials_per_cell: 1,
            ..SweepConfig::default()
        };
        let out = run_sweep(&cfg).unwrap();
        for t in &out.trials {
            assert!(t.success);
            assert_eq!(t.steps, t.optimal_steps);
            assert_eq!(t.mode_switches, t.optimal_mode_switches);
        }
    }

    #[test]
    fn stats_by_hand() {
        let s = Stats::of(&[1.0, 2.0, 3.0, 10.0]);
        assert_eq!(s.mean, 4.0);
        assert_eq!(s.median, 2.5);
        assert!((s.stddev - (50.0f64 / 3.0).sqrt()).abs() < 1e-12);
        assert_eq!(Stats::of(&[5.0]).stddev, 0.0);
    }

    #[test]
    fn single_mode_summary_is_trivially_ordered() {
        let cfg = SweepConfig {
            assistance: vec![AssistanceMode::Filter],
            ..small(2)
        };
        let report = summarize(&run_sweep(&cfg).unwrap().cells);
        assert!(report.all_orderings_hold);
        assert!(report.gap_trends.is_empty());
    }

    #[test]
    fn written_files_round_trip_and_aggregate() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_sweep(&small(4)).unwrap();
        write_sweep(&out, dir.path()).unwrap();
        let trials = read_trials(dir.path()).unwrap();
        assert_eq!(trials, out.trials);
        assert_eq!(aggregate(&trials), out.cells);
        let csv = fs::read_to_string(dir.path().join(TRIALS_CSV)).unwrap();
        assert!(csv.starts_with(
            "trial_id,assistance,n_turns,lambda_i,lambda_m,steps,mode_switches,success,dist_xy,dist_theta\n"
        ));
    }
}
