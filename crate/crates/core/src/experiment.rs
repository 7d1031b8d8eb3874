//! Solver dispatch, parameter sweeps and record serialization shared by the
//! command-line driver and the test suites.

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::asynch::{AsyncSim, ReadCheckEntry};
use crate::benchmarks::{solve_oracle, OracleSolution};
use crate::config::{Config, Instance, ProbSpec};
use crate::diagnostics::{Row, RunRecord};
use crate::error::{GneError, Result};
use crate::model::PrimalDualState;
use crate::stepsizes::{validate, StepReport};
use crate::sync::{sync_run, Variant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Sync,
    Async,
    SyncFb,
    AsyncFb,
}

impl Mode {
    pub fn variant(self) -> Variant {
        match self {
            Mode::Sync | Mode::Async => Variant::PredictCorrect,
            Mode::SyncFb | Mode::AsyncFb => Variant::ForwardBackward,
        }
    }

    pub fn is_async(self) -> bool {
        matches!(self, Mode::Async | Mode::AsyncFb)
    }

    pub fn name(self) -> &'static str {
        match self {
            Mode::Sync => "sync",
            Mode::Async => "async",
            Mode::SyncFb => "sync-fb",
            Mode::AsyncFb => "async-fb",
        }
    }

    /// Whether the step sizes meet the conditions this mode relies on.
    pub fn admits(self, report: &StepReport) -> bool {
        if self.is_async() {
            report.all_ok()
        } else {
            report.sync_ok()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub mode: Mode,
    pub report: StepReport,
    pub record: RunRecord,
    pub state: PrimalDualState<f64>,
    pub oracle: Option<OracleSolution>,
    /// Why no reference was available, if so.
    pub oracle_error: Option<String>,
    /// Delayed-read identity log of an instrumented asynchronous run.
    pub read_checks: Option<Vec<ReadCheckEntry>>,
}

/// Runs `mode` on a resolved instance. Step sizes that fail validation are an
/// error unless `force` is set, in which case the record is marked unvalidated.
pub fn execute(inst: &Instance, mode: Mode, force: bool) -> Result<Outcome> {
    run_instance(inst, mode, force, false)
}

/// As [`execute`], additionally logging every activation of an asynchronous
/// run (memory grows with the iteration count).
pub fn execute_logged(inst: &Instance, mode: Mode, force: bool) -> Result<Outcome> {
    run_instance(inst, mode, force, true)
}

fn run_instance(inst: &Instance, mode: Mode, force: bool, log: bool) -> Result<Outcome> {
    let report = validate(&inst.steps, &inst.game, &inst.graph, &inst.consts)?;
    let validated = mode.admits(&report);
    if !validated && !force {
        return Err(GneError::StepSize(format!("step sizes fail validation for mode {}\n{report}", mode.name())));
    }
    let (oracle, oracle_error) = match solve_oracle(&inst.game, &inst.graph, &inst.steps) {
        Ok(o) => (Some(o), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let reference = oracle.as_ref().map(|o| &o.reference);
    let init = PrimalDualState::initial(&inst.game, &inst.graph)?;
    let mut read_checks = None;
    let (state, mut record) = if mode.is_async() {
        let mut sim = AsyncSim::new(&inst.game, &inst.graph, &inst.steps, mode.variant(), &init, &inst.scheduler)?;
        if let Some(r) = reference {
            sim.set_reference(r)?;
        }
        if log {
            sim.enable_read_check();
        }
        let mut record = sim.run(&inst.stop)?;
        record.flags = reference.map(|r| r.absolute_components()).unwrap_or_default();
        read_checks = sim.read_checks().map(|l| l.to_vec());
        (sim.state(), record)
    } else {
        sync_run(&inst.game, &inst.graph, &inst.steps, init, &inst.stop, mode.variant(), reference)?
    };
    record.validated = validated;
    if let Some(e) = &oracle_error {
        record.flags.push(format!("no reference solution: {e}"));
    }
    Ok(Outcome { mode, report, record, state, oracle, oracle_error, read_checks })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Vary {
    Eps,
    Pmin,
}

impl Vary {
    pub fn name(self) -> &'static str {
        match self {
            Vary::Eps => "eps",
            Vary::Pmin => "pmin",
        }
    }

    /// `cfg` with the swept parameter set to `value`; needs a recipe.
    pub fn apply(self, cfg: &Config, value: f64) -> Result<Config> {
        let mut cfg = cfg.clone();
        let recipe = cfg
            .recipe
            .as_mut()
            .ok_or_else(|| GneError::Config("sweeps need a `recipe` section to recompute step sizes".into()))?;
        match self {
            Vary::Eps => {
                if value < 0.0 || value.fract() != 0.0 {
                    return Err(GneError::Config(format!("eps must be a nonnegative integer, got {value}")));
                }
                recipe.eps = value as usize;
            }
            Vary::Pmin => recipe.probs = ProbSpec::PMin(value),
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub value: f64,
    pub seed: u64,
    pub outcome: Result<Outcome>,
}

impl SweepCell {
    /// Iterations to reach `threshold`; `None` if never reached or the run failed.
    pub fn iterations_to(&self, threshold: f64) -> Option<u64> {
        self.outcome.as_ref().ok().and_then(|o| o.record.iterations_to(threshold))
    }
}

/// Runs every `(value, seed)` pair with `seed in 0..seeds`, on up to `threads`
/// workers. Cells come back ordered by value, then seed.
pub fn sweep(cfg: &Config, vary: Vary, values: &[f64], seeds: u64, mode: Mode, force: bool, threads: usize) -> Result<Vec<SweepCell>> {
    let jobs: Vec<(f64, u64, Config)> = values
        .iter()
        .flat_map(|&v| (0..seeds).map(move |s| (v, s)))
        .map(|(v, s)| Ok((v, s, vary.apply(cfg, v)?.with_seed(s))))
        .collect::<Result<_>>()?;
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<SweepCell>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    std::thread::scope(|scope| {
        for _ in 0..threads.max(1).min(jobs.len().max(1)) {
            scope.spawn(|| loop {
                let n = next.fetch_add(1, Ordering::Relaxed);
                let Some((value, seed, c)) = jobs.get(n) else { break };
                let outcome = c.resolve().and_then(|inst| execute(&inst, mode, force));
                *slots[n].lock().unwrap() = Some(SweepCell { value: *value, seed: *seed, outcome });
            });
        }
    });
    Ok(slots.into_iter().map(|s| s.into_inner().unwrap().expect("every job ran")).collect())
}

/// Median with the two middle values averaged; `None` for an empty slice.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    match n {
        0 => None,
        _ if n % 2 == 1 => Some(v[n / 2]),
        _ => Some(0.5 * (v[n / 2 - 1] + v[n / 2])),
    }
}

/// Per-value summary of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub value: f64,
    pub runs: usize,
    pub reached: usize,
    /// Median iterations to threshold; runs that never got there count as their final iteration.
    pub median_iterations: Option<f64>,
}

pub fn summarize(cells: &[SweepCell], threshold: f64) -> Vec<SweepSummary> {
    let mut out: Vec<SweepSummary> = Vec::new();
    for c in cells {
        if out.last().is_none_or(|s| s.value != c.value) {
            out.push(SweepSummary { value: c.value, runs: 0, reached: 0, median_iterations: None });
        }
        let s = out.last_mut().unwrap();
        s.runs += 1;
        if c.iterations_to(threshold).is_some() {
            s.reached += 1;
        }
    }
    for s in &mut out {
        let its: Vec<f64> = cells
            .iter()
            .filter(|c| c.value == s.value)
            .filter_map(|c| match &c.outcome {
                Ok(o) => Some(c.iterations_to(threshold).unwrap_or(o.record.iterations) as f64),
                Err(_) => None,
            })
            .collect();
        s.median_iterations = median(&its);
    }
    out
}

pub const CSV_COLUMNS: [&str; 8] =
    ["k", "primal_res", "dual_res", "fp_res_sq", "dist_sq", "phi", "activation", "max_delay_seen"];

fn fmt_opt_f(v: Option<f64>) -> String {
    v.map(|x| format!("{x:e}")).unwrap_or_default()
}

fn fmt_opt_u<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn row_fields(r: &Row) -> [String; 8] {
    [
        r.k.to_string(),
        fmt_opt_f(r.primal_res),
        fmt_opt_f(r.dual_res),
        fmt_opt_f(r.fp_res_sq),
        fmt_opt_f(r.dist_sq),
        fmt_opt_f(r.phi),
        fmt_opt_u(r.activation),
        fmt_opt_u(r.max_delay_seen),
    ]
}

/// Writes `comments` as `# `-prefixed lines, then the record with the fixed
/// column set; absent metrics are empty fields.
pub fn write_csv<W: Write>(mut out: W, comments: &str, record: &RunRecord) -> std::io::Result<()> {
    for line in comments.lines() {
        writeln!(out, "# {line}")?;
    }
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for r in &record.rows {
        w.write_record(row_fields(r))?;
    }
    w.flush()
}

/// Parses a CSV written by [`write_csv`] back into rows.
pub fn read_csv(text: &str) -> Result<Vec<Row>> {
    let body: String = text.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let bad = |e: String| GneError::Config(format!("record csv: {e}"));
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let f = |i: usize| -> Result<Option<f64>> {
            let s = &rec[i];
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse().map(Some).map_err(|_| bad(format!("bad number {s:?}")))
            }
        };
        let u = |i: usize| -> Result<Option<usize>> { Ok(f(i)?.map(|v| v as usize)) };
        rows.push(Row {
            k: rec[0].parse().map_err(|_| bad(format!("bad k {:?}", &rec[0])))?,
            primal_res: f(1)?,
            dual_res: f(2)?,
            fp_res_sq: f(3)?,
            dist_sq: f(4)?,
            phi: f(5)?,
            activation: u(6)?,
            max_delay_seen: u(7)?,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn medians() {
        assert_eq!(median(&[]), None);
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), Some(2.5));
    }

    #[test]
    fn csv_round_trip_keeps_empty_fields() {
        let record = RunRecord {
            rows: vec![
                Row { k: 0, primal_res: Some(0.5), fp_res_sq: Some(1e-300), activation: Some(3), ..Default::default() },
                Row { k: 7, dist_sq: Some(2.0), ..Default::default() },
            ],
            ..Default::default()
        };
        let mut buf = Vec::new();
        write_csv(&mut buf, "a\nb", &record).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("# a\n# b\nk,primal_res,"));
        assert!(text.contains("\n7,,,,2e0,,,\n"));
        assert_eq!(read_csv(&text).unwrap(), record.rows);
    }

    #[test]
    fn sweep_requires_recipe() {
        let doc = r#"{"benchmark": {"kind": "cournot"}, "recipe": {}, "stop": {"tol": 1e-3, "max_iter": 5}}"#;
        let mut cfg = Config::from_json(doc).unwrap();
        assert!(Vary::Eps.apply(&cfg, 2.0).is_ok());
        assert!(Vary::Eps.apply(&cfg, 2.5).is_err());
        cfg.steps = Some(cfg.resolve().unwrap().steps);
        cfg.recipe = None;
        assert!(Vary::Pmin.apply(&cfg, 0.05).is_err());
    }
}
