//! Built-in reproduction of the two-dimensional cubic example.

use std::fmt::Write as _;

use temsp_core::measure::ks_statistic;

use crate::config::{paper_initials, RunConfig};
use crate::ensemble::RunOutput;

pub const PSI1: &str = "cos-norm";
pub const PSI2: &str = "clip-norm:2";
pub const DEFAULT_DTS: [f64; 2] = [1e-3, 1e-4];

/// Three initials, `Psi_1` and `Psi_2`, means every 0.1 on `[0, horizon]`,
/// ECDFs at the horizon and the Cauchy diagnostic for `xi3` at the
/// coarsest step.
pub fn paper_config(dts: &[f64], samples: usize, horizon: f64) -> RunConfig {
    let mut c = RunConfig::default();
    c.grid.dt = dts.to_vec();
    c.grid.horizon = horizon;
    c.ensemble.samples = samples;
    c.initial = paper_initials();
    c.functionals.names = vec![PSI1.into(), PSI2.into()];
    let coarse = dts.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    c.distance.dt = Some(coarse);
    c.distance.times = [1.0, 5.0, 10.0].into_iter().filter(|&t| t < horizon).chain([horizon]).collect();
    c.distance.times.dedup();
    c
}

/// Mean difference in units of the combined standard error.
pub fn z_score(run: &RunOutput, t: f64, psi: &str, a: &str, b: &str, dt_a: f64, dt_b: f64) -> Option<(f64, f64, f64)> {
    let ea = run.mean(t, psi, a, dt_a)?.estimate;
    let eb = run.mean(t, psi, b, dt_b)?.estimate;
    let se = ea.stderr.hypot(eb.stderr);
    Some(((ea.mean - eb.mean).abs(), se, (ea.mean - eb.mean).abs() / se))
}

/// Human-readable digest of the stability checks.
pub fn summary_text(run: &RunOutput) -> String {
    let c = &run.config;
    let t = c.grid.horizon;
    let n = c.ensemble.samples;
    let mut s = String::new();
    let _ = writeln!(s, "model {} with {} trajectories per leg, horizon {t}", c.model.name, n);
    for (dt, rep) in &run.admissibility {
        match rep {
            Some(r) => {
                let _ = writeln!(
                    s,
                    "dt = {dt}: admissible = {}, margin_a = {:.6} (> {}), margin_b = {:.6} (> {}), dt_max = {:.6e}",
                    r.ok, r.margin_a, r.threshold_a, r.margin_b, r.threshold_b, r.dt_max
                );
            }
            None => {
                let _ = writeln!(s, "dt = {dt}: no certificates");
            }
        }
    }
    for leg in &run.legs {
        let _ = writeln!(
            s,
            "leg {} dt = {}: radius {:.7}, max |u| {:.7}, states above radius {}",
            leg.initial, leg.dt, leg.radius, leg.max_state_norm, leg.truncation_excess
        );
    }
    let ks_crit = 1.36 * (2.0 / n as f64).sqrt();
    for &dt in &c.grid.dt {
        for psi in [PSI1, PSI2] {
            if let Some((diff, se, z)) = z_score(run, t, psi, "xi2", "xi3", dt, dt) {
                let ks = match (run.ecdf(psi, "xi2", dt), run.ecdf(psi, "xi3", dt)) {
                    (Some(a), Some(b)) => ks_statistic(a, b),
                    _ => f64::NAN,
                };
                let _ = writeln!(
                    s,
                    "t = {t}, dt = {dt}, {psi}: |mean xi2 - mean xi3| = {diff:.5} ({z:.2} combined se of {se:.5}); KS = {ks:.4} (5% critical {ks_crit:.4})"
                );
            }
        }
    }
    if c.grid.dt.len() >= 2 {
        let (a, b) = (c.grid.dt[0], c.grid.dt[1]);
        if let Some((diff, se, z)) = z_score(run, t, PSI2, "xi3", "xi3", a, b) {
            let _ = writeln!(
                s,
                "t = {t}, {PSI2}, xi3: |mean(dt = {a}) - mean(dt = {b})| = {diff:.5} ({z:.2} combined se of {se:.5})"
            );
        }
    }
    if let Some(info) = &run.distance_info {
        let _ = writeln!(
            s,
            "transport distances to the law at t = {} ({}, dt = {}, {} of {} samples, {}):",
            info.reference_time, info.initial, info.dt, info.samples_used, info.samples_total, info.method
        );
        for r in &run.distances {
            let _ = writeln!(s, "  t = {}: {} = {:.5}", r.t, r.method, r.value);
        }
    }
    let _ = writeln!(s, "wall clock {:.1} s", run.wall_clock_seconds);
    s
}
