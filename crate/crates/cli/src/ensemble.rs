//! Ensemble execution.
//!
//! Trajectories of one leg (an initial-data entry at one step size) run in
//! parallel on a bounded pool; each returns its own buffer and the buffers
//! are merged in trajectory order, so results do not depend on the worker
//! count or scheduling.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use temsp_core::measure::{
    bl_lower_bound, cauchy_diagnostic, default_dictionary, subsample_indices, Ecdf, EmpiricalSegmentMeasure,
    MeanEstimate, SolverRegistry, TestFunctional,
};
use temsp_core::model::{InitialData, ModelRegistry, SddeModel};
use temsp_core::rng::{derive_seed, SeedSpec};
use temsp_core::scheme::{Segment, Simulator};
use temsp_core::truncation::{parse_growth, AdmissibilityReport, Grid, TruncationRule};

use crate::config::{InitialSpec, RunConfig};
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct MeanRow {
    pub t: f64,
    pub psi: String,
    pub initial: String,
    pub dt: f64,
    pub estimate: MeanEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EcdfSet {
    pub psi: String,
    pub initial: String,
    pub dt: f64,
    pub t: f64,
    pub ecdf: Ecdf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRow {
    /// The measure at `t` is compared with the one at the reference time.
    pub t: f64,
    pub method: String,
    pub value: f64,
    pub n: usize,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LegSummary {
    pub initial: String,
    pub dt: f64,
    pub seed: u64,
    pub steps: usize,
    pub radius: f64,
    pub max_state_norm: f64,
    pub truncation_excess: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceInfo {
    pub initial: String,
    pub dt: f64,
    pub reference_time: f64,
    pub method: String,
    pub samples_total: usize,
    pub samples_used: usize,
    pub bl_best: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// The validated configuration that produced this output.
    pub config: RunConfig,
    pub admissibility: Vec<(f64, Option<AdmissibilityReport>)>,
    pub legs: Vec<LegSummary>,
    pub means: Vec<MeanRow>,
    pub ecdfs: Vec<EcdfSet>,
    pub distances: Vec<DistanceRow>,
    pub distance_info: Option<DistanceInfo>,
    pub wall_clock_seconds: f64,
}

impl RunOutput {
    pub fn mean(&self, t: f64, psi: &str, initial: &str, dt: f64) -> Option<&MeanRow> {
        self.means
            .iter()
            .find(|r| r.t == t && r.psi == psi && r.initial == initial && r.dt == dt)
    }

    pub fn ecdf(&self, psi: &str, initial: &str, dt: f64) -> Option<&Ecdf> {
        self.ecdfs
            .iter()
            .find(|e| e.psi == psi && e.initial == initial && e.dt == dt)
            .map(|e| &e.ecdf)
    }

    pub fn total_truncation_excess(&self) -> usize {
        self.legs.iter().map(|l| l.truncation_excess).sum()
    }
}

/// Independent master seed of one leg.
pub fn leg_seed(master: u64, initial: &str, dt: f64) -> u64 {
    derive_seed(master, &format!("{initial}@{dt}"))
}

struct TrajOut {
    means: Vec<f64>,
    ecdf: Vec<f64>,
    segments: Vec<Segment>,
    max_norm: f64,
    excess: usize,
}

struct Leg<'a> {
    sim: Simulator,
    initial: InitialData,
    spec: &'a InitialSpec,
    seed: u64,
    mean_steps: Vec<usize>,
    ecdf_step: usize,
    dist_steps: Vec<usize>,
    keep: Vec<bool>,
}

fn steps_of(grid: &Grid, times: &[f64]) -> Result<Vec<usize>, CliError> {
    times
        .iter()
        .map(|&t| grid.step_of(t).map(|k| k as usize).map_err(CliError::from))
        .collect()
}

fn run_leg(leg: &Leg<'_>, functionals: &[Box<dyn TestFunctional>], n: usize) -> Result<Vec<TrajOut>, CliError> {
    let nf = functionals.len();
    let mut observe: Vec<usize> = leg
        .mean_steps
        .iter()
        .chain(&leg.dist_steps)
        .copied()
        .chain([leg.ecdf_step])
        .collect();
    observe.sort_unstable();
    observe.dedup();
    (0..n)
        .into_par_iter()
        .map(|i| {
            let mut out = TrajOut {
                means: vec![0.0; leg.mean_steps.len() * nf],
                ecdf: vec![0.0; nf],
                segments: Vec::new(),
                max_norm: 0.0,
                excess: 0,
            };
            let keep = leg.keep[i];
            let summary = leg.sim.simulate_observed(
                &leg.initial,
                &SeedSpec::scheme_noise(leg.seed, i as u64),
                &observe,
                |k, seg| {
                    if let Ok(pos) = leg.mean_steps.binary_search(&k) {
                        for (f, psi) in functionals.iter().enumerate() {
                            out.means[pos * nf + f] = psi.eval(seg);
                        }
                    }
                    if k == leg.ecdf_step {
                        for (f, psi) in functionals.iter().enumerate() {
                            out.ecdf[f] = psi.eval(seg);
                        }
                    }
                    if keep && leg.dist_steps.binary_search(&k).is_ok() {
                        out.segments.push(seg.to_owned());
                    }
                },
            )?;
            out.max_norm = summary.max_state_norm;
            out.excess = summary.truncation_excess;
            Ok(out)
        })
        .collect()
}

/// Runs every leg of `config` and computes means, ECDFs and distances.
/// Writes nothing; see [`crate::output::write_run`].
pub fn run_ensemble(config: &RunConfig, log: &mut dyn FnMut(&str)) -> Result<RunOutput, CliError> {
    let started = Instant::now();
    let mut config = config.clone();
    config.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.ensemble.workers)
        .build()
        .map_err(|e| CliError::config(format!("ensemble.workers: {e}")))?;

    let model: Arc<dyn SddeModel> = ModelRegistry::with_builtins().get(&config.model.name)?;
    let growth = match &config.model.growth {
        Some(g) => parse_growth(g)?,
        None => model.growth_function().expect("checked by validate"),
    };
    let rule = TruncationRule::for_model(model.as_ref(), growth, config.model.nu)?;
    let functionals: Vec<Box<dyn TestFunctional>> = config
        .functionals
        .names
        .iter()
        .map(|n| temsp_core::measure::parse_functional(n).map_err(CliError::from))
        .collect::<Result<_, _>>()?;
    let n = config.ensemble.samples;
    let obs_times = config.observation_times();
    let ecdf_time = config.ecdf_time();
    let dist = &config.distance;
    let dist_dt = config.distance_dt();

    let mut out = RunOutput {
        config: config.clone(),
        admissibility: Vec::new(),
        legs: Vec::new(),
        means: Vec::new(),
        ecdfs: Vec::new(),
        distances: Vec::new(),
        distance_info: None,
        wall_clock_seconds: 0.0,
    };

    for &dt in &config.grid.dt {
        let base = Grid::from_dt(model.delay(), dt, 0)?;
        let steps = base.step_of(config.grid.horizon)? as usize;
        let grid = base.with_steps(steps);
        let sim = Simulator::new(model.clone(), rule.clone(), grid, config.output.override_admissibility)?;
        out.admissibility.push((dt, sim.admissibility().copied()));
        let mean_steps = steps_of(&grid, &obs_times)?;
        let ecdf_step = grid.step_of(ecdf_time)? as usize;

        for spec in &config.initial {
            let seed = leg_seed(config.ensemble.seed, &spec.name, dt);
            let is_dist = dist.enabled && spec.name == dist.initial && dt == dist_dt;
            let (dist_steps, keep) = if is_dist {
                let mut keep = vec![false; n];
                for i in subsample_indices(n, dist.subsample, seed, 0) {
                    keep[i] = true;
                }
                (steps_of(&grid, &dist.times)?, keep)
            } else {
                (Vec::new(), vec![false; n])
            };
            let leg = Leg {
                sim: sim.clone(),
                initial: spec.spec.parse()?,
                spec,
                seed,
                mean_steps: mean_steps.clone(),
                ecdf_step,
                dist_steps,
                keep,
            };
            log(&format!("simulating {} at dt = {dt}: {n} trajectories x {steps} steps", spec.name));
            let trajs = pool.install(|| run_leg(&leg, &functionals, n))?;
            collect_leg(&leg, &trajs, &functionals, &obs_times, ecdf_time, &mut out);
            if is_dist {
                log(&format!("transport distances for {} at dt = {dt}", spec.name));
                let (rows, info) = pool.install(|| distances(&leg, &trajs, &config, dt, n))?;
                out.distances = rows;
                out.distance_info = Some(info);
            }
        }
    }
    out.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(out)
}

fn collect_leg(
    leg: &Leg<'_>,
    trajs: &[TrajOut],
    functionals: &[Box<dyn TestFunctional>],
    obs_times: &[f64],
    ecdf_time: f64,
    out: &mut RunOutput,
) {
    let nf = functionals.len();
    let dt = leg.sim.grid().dt();
    for (pos, &t) in obs_times.iter().enumerate() {
        for (f, psi) in functionals.iter().enumerate() {
            let vals: Vec<f64> = trajs.iter().map(|tr| tr.means[pos * nf + f]).collect();
            out.means.push(MeanRow {
                t,
                psi: psi.name(),
                initial: leg.spec.name.clone(),
                dt,
                estimate: MeanEstimate::from_values(&vals).expect("samples >= 1"),
            });
        }
    }
    for (f, psi) in functionals.iter().enumerate() {
        let vals: Vec<f64> = trajs.iter().map(|tr| tr.ecdf[f]).collect();
        out.ecdfs.push(EcdfSet {
            psi: psi.name(),
            initial: leg.spec.name.clone(),
            dt,
            t: ecdf_time,
            ecdf: Ecdf::from_values(vals).expect("finite functional values"),
        });
    }
    out.legs.push(LegSummary {
        initial: leg.spec.name.clone(),
        dt,
        seed: leg.seed,
        steps: leg.sim.grid().n_steps(),
        radius: leg.sim.radius(),
        max_state_norm: trajs.iter().map(|t| t.max_norm).fold(0.0, f64::max),
        truncation_excess: trajs.iter().map(|t| t.excess).sum(),
    });
}

fn distances(
    leg: &Leg<'_>,
    trajs: &[TrajOut],
    config: &RunConfig,
    dt: f64,
    n: usize,
) -> Result<(Vec<DistanceRow>, DistanceInfo), CliError> {
    let times = &config.distance.times;
    let measures: Vec<EmpiricalSegmentMeasure> = times
        .iter()
        .enumerate()
        .map(|(j, &t)| {
            let samples: Vec<Segment> = trajs
                .iter()
                .filter(|tr| !tr.segments.is_empty())
                .map(|tr| tr.segments[j].clone())
                .collect();
            EmpiricalSegmentMeasure::new(samples, leg.dist_steps[j], t, format!("{}@{t}", leg.spec.name))
        })
        .collect::<Result<_, _>>()?;
    let method = &config.distance.method;
    let solver = SolverRegistry::with_builtins().get(method)?;
    let cauchy = cauchy_diagnostic(&measures, solver.as_ref())?;
    let last = measures.last().expect("at least two times");
    let mut rows = Vec::new();
    let mut bl_best = Vec::new();
    for (row, m) in cauchy.iter().zip(&measures) {
        let dict = default_dictionary(m, last, leg.seed);
        let refs: Vec<&dyn TestFunctional> = dict.iter().map(|p| p.as_ref()).collect();
        let bl = bl_lower_bound(m, last, &refs)?;
        let est = &row.distance;
        if est.epsilon.is_none() && bl.value > bl.sandwich_factor() * est.value + 1e-12 {
            return Err(CliError::Check(format!(
                "bounded-Lipschitz lower bound {} exceeds {} x transport distance {} at t = {}",
                bl.value,
                bl.sandwich_factor(),
                est.value,
                row.time
            )));
        }
        rows.push(DistanceRow {
            t: row.time,
            method: est.method.clone(),
            value: est.value,
            n: m.len(),
            epsilon: est.epsilon,
        });
        rows.push(DistanceRow {
            t: row.time,
            method: "bl-lower-bound".into(),
            value: bl.value,
            n: m.len(),
            epsilon: None,
        });
        bl_best.push(bl.best_functional);
    }
    let info = DistanceInfo {
        initial: leg.spec.name.clone(),
        dt,
        reference_time: *times.last().expect("at least two times"),
        method: solver.name(),
        samples_total: n,
        samples_used: last.len(),
        bl_best,
    };
    Ok((rows, info))
}
