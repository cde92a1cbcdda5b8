//! The truncated Euler-Maruyama recursion and its segment process.
//!
//! With `Gamma` the radial truncation onto the ball of radius
//! `Phi^{-1}(K dt^{-nu})`:
//!
//! ```text
//! u(t_k)     = Gamma(xi(t_k))                                  k = -N..=0
//! u'(t_{k+1}) = u(t_k) + f(u(t_k), u(t_{k-N})) dt + g(u(t_k), u(t_{k-N})) dW_k
//! u(t_{k+1}) = Gamma(u'(t_{k+1}))                              k >= 0
//! ```
//!
//! The piecewise-linear interpolant of the `u(t_k)` gives a continuous path
//! `y`, and the segment at step `k` is `Y_k(theta) = y(t_k + theta)` for
//! `theta` in `[-tau, 0]`. Segments are stored as their `N + 1` node values.
//! On `[-tau, 0]` the path is the interpolant of the truncated initial nodes,
//! not `Gamma(xi(t))` at every real `t`; for Brownian initial data the two
//! differ by `O(dt^{1/2})` between nodes.

use std::io::{self, Write};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::{dist, norm};
use crate::model::{InitialData, SddeModel};
use crate::rng::{BrownianIncrements, SeedSpec, StreamLabel};
use crate::truncation::{admissible_dt, truncate_in_place, AdmissibilityReport, Grid, TruncationRule};

/// Borrowed segment: `N + 1` nodes of dimension `dim`, flattened, at
/// `theta_j = -tau + j dt`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentRef<'a> {
    pub nodes: &'a [f64],
    pub dim: usize,
    pub dt: f64,
}

/// Owned segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub nodes: Vec<f64>,
    pub dim: usize,
    pub dt: f64,
}

impl Segment {
    pub fn new(nodes: Vec<f64>, dim: usize, dt: f64) -> Result<Self> {
        if dim == 0 || nodes.len() % dim != 0 || nodes.len() < 2 * dim {
            return Err(Error::Usage(format!(
                "segment needs at least two nodes of dimension {dim}, got {} values",
                nodes.len()
            )));
        }
        Ok(Self { nodes, dim, dt })
    }

    /// Constant segment with `n_nodes` copies of `value`.
    pub fn constant(value: &[f64], n_nodes: usize, dt: f64) -> Self {
        let mut nodes = Vec::with_capacity(value.len() * n_nodes);
        for _ in 0..n_nodes {
            nodes.extend_from_slice(value);
        }
        Self {
            nodes,
            dim: value.len(),
            dt,
        }
    }

    pub fn as_ref(&self) -> SegmentRef<'_> {
        SegmentRef {
            nodes: &self.nodes,
            dim: self.dim,
            dt: self.dt,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len() / self.dim
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.nodes[j * self.dim..(j + 1) * self.dim]
    }
}

impl<'a> SegmentRef<'a> {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len() / self.dim
    }

    pub fn node(&self, j: usize) -> &'a [f64] {
        &self.nodes[j * self.dim..(j + 1) * self.dim]
    }

    /// `-tau`.
    pub fn theta_min(&self) -> f64 {
        -((self.n_nodes() - 1) as f64) * self.dt
    }

    /// Linear interpolation at `theta` in `[-tau, 0]`.
    pub fn eval(&self, theta: f64) -> Result<Vec<f64>> {
        let last = self.n_nodes() - 1;
        let tmin = self.theta_min();
        if !(theta >= tmin - 1e-12 * self.dt && theta <= 1e-12 * self.dt) {
            return Err(Error::Usage(format!("theta {theta} outside [{tmin}, 0]")));
        }
        let s = ((theta - tmin) / self.dt).clamp(0.0, last as f64);
        let j = (s.floor() as usize).min(last - 1);
        let w = s - j as f64;
        let (a, b) = (self.node(j), self.node(j + 1));
        Ok(a.iter().zip(b).map(|(x, y)| (1.0 - w) * x + w * y).collect())
    }

    pub fn to_owned(&self) -> Segment {
        Segment {
            nodes: self.nodes.to_vec(),
            dim: self.dim,
            dt: self.dt,
        }
    }
}

/// `sup_theta |Y(theta)|` of the linear interpolant.
///
/// On each inter-node interval `|a + s b|^2` is a convex quadratic in
/// `s in [0, 1]` (leading coefficient `|b|^2 >= 0`); its interior critical
/// point is a minimum, so the supremum is attained at a node.
pub fn segment_sup_norm(seg: SegmentRef<'_>) -> f64 {
    seg.nodes
        .chunks_exact(seg.dim)
        .map(norm)
        .fold(0.0, f64::max)
}

/// `sup_theta |A(theta) - B(theta)|` for segments on the same grid. The
/// difference path is piecewise linear on the shared nodes, so the same
/// node rule is exact.
pub fn segment_sup_distance(a: SegmentRef<'_>, b: SegmentRef<'_>) -> f64 {
    debug_assert_eq!(a.nodes.len(), b.nodes.len());
    a.nodes
        .chunks_exact(a.dim)
        .zip(b.nodes.chunks_exact(b.dim))
        .map(|(x, y)| dist(x, y))
        .fold(0.0, f64::max)
}

/// Full scheme output `u(t_k)`, `k = -N..=n_steps`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: Grid,
    pub dim: usize,
    /// Flattened states, entry `k + N` holds `u(t_k)`.
    pub values: Vec<f64>,
    pub radius: f64,
    pub model_name: String,
    pub seed: SeedSpec,
}

impl Trajectory {
    fn index(&self, k: i64) -> Result<usize> {
        let n = self.grid.delay_steps() as i64;
        if k < -n || k > self.grid.n_steps() as i64 {
            return Err(Error::Usage(format!(
                "step {k} outside [-{n}, {}]",
                self.grid.n_steps()
            )));
        }
        Ok((k + n) as usize)
    }

    fn at(&self, idx: usize) -> &[f64] {
        &self.values[idx * self.dim..(idx + 1) * self.dim]
    }

    /// `u(t_k)`.
    pub fn state(&self, k: i64) -> Result<&[f64]> {
        Ok(self.at(self.index(k)?))
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max_state_norm(&self) -> f64 {
        self.values.chunks_exact(self.dim).map(norm).fold(0.0, f64::max)
    }

    /// Number of stored states with norm above the truncation radius.
    pub fn truncation_excess_count(&self) -> usize {
        self.values
            .chunks_exact(self.dim)
            .filter(|u| norm(u) > self.radius)
            .count()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        let (lo, hi) = (-self.grid.tau(), self.grid.horizon());
        if !(t >= lo && t <= hi) {
            return Err(Error::Usage(format!("time {t} outside [{lo}, {hi}]")));
        }
        Ok(())
    }

    /// Index `k` with `t_k <= t < t_{k+1}`, robust to rounding in `k dt`.
    fn floor_step(&self, t: f64) -> i64 {
        let dt = self.grid.dt();
        let mut k = (t / dt).floor() as i64;
        if self.grid.time(k + 1) <= t {
            k += 1;
        }
        if self.grid.time(k) > t {
            k -= 1;
        }
        k
    }

    /// Right-continuous step interpolant: `u(t_k)` on `[t_k, t_{k+1})`.
    pub fn piecewise_constant(&self, t: f64) -> Result<Vec<f64>> {
        self.check_time(t)?;
        let k = self.floor_step(t).min(self.grid.n_steps() as i64);
        Ok(self.state(k)?.to_vec())
    }

    /// Continuous piecewise-linear interpolant.
    pub fn piecewise_linear(&self, t: f64) -> Result<Vec<f64>> {
        self.check_time(t)?;
        let last = self.grid.n_steps() as i64;
        let k = self.floor_step(t);
        if k >= last {
            return Ok(self.state(last)?.to_vec());
        }
        let tk = self.grid.time(k);
        let w = (t - tk) / self.grid.dt();
        let (a, b) = (self.state(k)?, self.state(k + 1)?);
        if w == 0.0 {
            return Ok(a.to_vec());
        }
        Ok(a.iter().zip(b).map(|(x, y)| (1.0 - w) * x + w * y).collect())
    }

    /// Zero-copy view of the segment at step `k` (`0 <= k <= n_steps`).
    pub fn segment(&self, k: usize) -> Result<SegmentRef<'_>> {
        if k > self.grid.n_steps() {
            return Err(Error::Usage(format!(
                "segment step {k} outside [0, {}]",
                self.grid.n_steps()
            )));
        }
        let n = self.grid.delay_steps();
        Ok(SegmentRef {
            nodes: &self.values[k * self.dim..(k + n + 1) * self.dim],
            dim: self.dim,
            dt: self.grid.dt(),
        })
    }

    pub fn extract_segment(&self, k: usize) -> Result<Segment> {
        self.segment(k).map(|s| s.to_owned())
    }

    /// CSV with header `k,t,x_1..x_d`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "k,t")?;
        for i in 1..=self.dim {
            write!(w, ",x_{i}")?;
        }
        writeln!(w)?;
        let n = self.grid.delay_steps() as i64;
        for (idx, u) in self.values.chunks_exact(self.dim).enumerate() {
            let k = idx as i64 - n;
            write!(w, "{k},{}", self.grid.time(k))?;
            for v in u {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// CSV with header `j,theta,x_1..x_d`.
pub fn write_segment_csv<W: Write>(seg: SegmentRef<'_>, mut w: W) -> io::Result<()> {
    write!(w, "j,theta")?;
    for i in 1..=seg.dim {
        write!(w, ",x_{i}")?;
    }
    writeln!(w)?;
    let last = seg.n_nodes() as i64 - 1;
    for j in 0..seg.n_nodes() {
        write!(w, "{j},{}", (j as i64 - last) as f64 * seg.dt)?;
        for v in seg.node(j) {
            write!(w, ",{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

/// Result of an observed (streaming) run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StreamSummary {
    pub max_state_norm: f64,
    /// Stored states with norm above the radius; zero unless there is a bug.
    pub truncation_excess: usize,
}

/// A configured scheme: model, truncation rule and grid, with the
/// admissibility gate already evaluated.
#[derive(Debug, Clone)]
pub struct Simulator {
    model: Arc<dyn SddeModel>,
    rule: TruncationRule,
    grid: Grid,
    radius: f64,
    admissibility: Option<AdmissibilityReport>,
}

impl Simulator {
    /// Fails with [`Error::Admissibility`] when the step-size gates reject
    /// `grid.dt()` (or the model carries no certificates to evaluate them),
    /// unless `override_admissibility` is set.
    pub fn new(
        model: Arc<dyn SddeModel>,
        rule: TruncationRule,
        grid: Grid,
        override_admissibility: bool,
    ) -> Result<Self> {
        if (grid.tau() - model.delay()).abs() > 1e-12 * model.delay() {
            return Err(Error::Config(format!(
                "grid delay {} differs from model delay {}",
                grid.tau(),
                model.delay()
            )));
        }
        let dt = grid.dt();
        let radius = rule.truncation_radius(dt)?;
        let admissibility = model
            .certificates()
            .map(|c| admissible_dt(&c.dissipativity, &c.contraction, rule.k(), rule.nu(), dt));
        if !override_admissibility {
            match &admissibility {
                None => {
                    return Err(Error::Admissibility {
                        dt,
                        reason: format!("model '{}' carries no certificates", model.name()),
                    })
                }
                Some(rep) if !rep.ok => {
                    return Err(Error::Admissibility {
                        dt,
                        reason: format!(
                            "margin_a = {} (needs > {}), margin_b = {} (needs > {}), dt_max = {}",
                            rep.margin_a, rep.threshold_a, rep.margin_b, rep.threshold_b, rep.dt_max
                        ),
                    })
                }
                Some(_) => {}
            }
        }
        Ok(Self {
            model,
            rule,
            grid,
            radius,
            admissibility,
        })
    }

    pub fn model(&self) -> &Arc<dyn SddeModel> {
        &self.model
    }
    pub fn rule(&self) -> &TruncationRule {
        &self.rule
    }
    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn radius(&self) -> f64 {
        self.radius
    }
    pub fn admissibility(&self) -> Option<&AdmissibilityReport> {
        self.admissibility.as_ref()
    }

    /// Truncated initial nodes `Gamma(xi(t_k))`, `k = -N..=0`.
    fn initial_nodes(&self, initial: &InitialData, seed: &SeedSpec) -> Result<Vec<f64>> {
        let d = self.model.state_dim();
        let init_seed = seed.with_label(StreamLabel::InitialData);
        let mut nodes = initial.nodes(d, &self.grid, &init_seed)?;
        let n = self.grid.delay_steps() as i64;
        for (j, u) in nodes.chunks_exact_mut(d).enumerate() {
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { step: j as i64 - n });
            }
            truncate_in_place(u, self.radius);
        }
        Ok(nodes)
    }

    /// Runs the recursion over the whole horizon and stores every state.
    ///
    /// `seed` selects the scheme-noise substream; random initial data use
    /// the same key with [`StreamLabel::InitialData`].
    pub fn simulate(&self, initial: &InitialData, seed: &SeedSpec) -> Result<Trajectory> {
        let d = self.model.state_dim();
        let n = self.grid.delay_steps();
        let steps = self.grid.n_steps();
        let mut values = self.initial_nodes(initial, seed)?;
        values.reserve(steps * d);
        let mut stepper = Stepper::new(self, seed);
        let mut next = vec![0.0; d];
        for k in 0..steps {
            let cur = &values[(k + n) * d..(k + n + 1) * d];
            let delayed = &values[k * d..(k + 1) * d];
            stepper.step(cur, delayed, &mut next, k)?;
            values.extend_from_slice(&next);
        }
        Ok(Trajectory {
            grid: self.grid,
            dim: d,
            values,
            radius: self.radius,
            model_name: self.model.name().to_string(),
            seed: *seed,
        })
    }

    /// Runs the recursion keeping only the rolling window of `N + 1` states.
    /// `on_segment(k, Y_k)` is called for each `k` in `observe` (ascending,
    /// `<= n_steps`; duplicates are reported once).
    pub fn simulate_observed<F>(
        &self,
        initial: &InitialData,
        seed: &SeedSpec,
        observe: &[usize],
        mut on_segment: F,
    ) -> Result<StreamSummary>
    where
        F: FnMut(usize, SegmentRef<'_>),
    {
        let d = self.model.state_dim();
        let n = self.grid.delay_steps();
        let w = n + 1;
        let steps = self.grid.n_steps();
        if let Some(&bad) = observe.iter().find(|&&k| k > steps) {
            return Err(Error::Usage(format!("observation step {bad} beyond horizon {steps}")));
        }
        if observe.windows(2).any(|p| p[0] > p[1]) {
            return Err(Error::Usage("observation steps must be ascending".into()));
        }
        // Each state is written twice, at slot s and s + w, so the window of
        // step k always sits contiguously at slots [k mod w, k mod w + w).
        let init = self.initial_nodes(initial, seed)?;
        let mut buf = vec![0.0; 2 * w * d];
        let mut summary = StreamSummary {
            max_state_norm: 0.0,
            truncation_excess: 0,
        };
        let record = |u: &[f64], summary: &mut StreamSummary| {
            let r = norm(u);
            summary.max_state_norm = summary.max_state_norm.max(r);
            if r > self.radius {
                summary.truncation_excess += 1;
            }
        };
        for (j, u) in init.chunks_exact(d).enumerate() {
            buf[j * d..(j + 1) * d].copy_from_slice(u);
            buf[(j + w) * d..(j + w + 1) * d].copy_from_slice(u);
            record(u, &mut summary);
        }
        let mut obs = observe.iter().copied().peekable();
        let mut emit = |k: usize, buf: &[f64], obs: &mut std::iter::Peekable<_>| {
            let mut hit = false;
            while obs.peek() == Some(&k) {
                obs.next();
                hit = true;
            }
            if hit {
                let start = k % w;
                on_segment(
                    k,
                    SegmentRef {
                        nodes: &buf[start * d..(start + w) * d],
                        dim: d,
                        dt: self.grid.dt(),
                    },
                );
            }
        };
        emit(0, &buf, &mut obs);
        let mut stepper = Stepper::new(self, seed);
        let mut next = vec![0.0; d];
        for k in 0..steps {
            let cur_slot = (k + n) % w;
            let old_slot = k % w;
            stepper.step(
                &buf[cur_slot * d..(cur_slot + 1) * d],
                &buf[old_slot * d..(old_slot + 1) * d],
                &mut next,
                k,
            )?;
            record(&next, &mut summary);
            buf[old_slot * d..(old_slot + 1) * d].copy_from_slice(&next);
            buf[(old_slot + w) * d..(old_slot + w + 1) * d].copy_from_slice(&next);
            emit(k + 1, &buf, &mut obs);
        }
        Ok(summary)
    }
}

/// Per-trajectory scratch for one step of the recursion.
struct Stepper<'a> {
    sim: &'a Simulator,
    noise: BrownianIncrements,
    f: Vec<f64>,
    g: Vec<f64>,
    dw: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(sim: &'a Simulator, seed: &SeedSpec) -> Self {
        let (d, m) = (sim.model.state_dim(), sim.model.noise_dim());
        let noise_seed = seed.with_label(StreamLabel::SchemeNoise);
        Self {
            sim,
            noise: BrownianIncrements::new(&noise_seed, sim.grid.dt()),
            f: vec![0.0; d],
            g: vec![0.0; d * m],
            dw: vec![0.0; m],
        }
    }

    /// Computes `u(t_{k+1})` from `u(t_k)` and `u(t_{k-N})`.
    #[inline]
    fn step(&mut self, cur: &[f64], delayed: &[f64], next: &mut [f64], k: usize) -> Result<()> {
        let model = &self.sim.model;
        let m = self.dw.len();
        let dt = self.sim.grid.dt();
        model.drift_into(cur, delayed, &mut self.f);
        model.diffusion_into(cur, delayed, &mut self.g);
        self.noise.fill(&mut self.dw);
        for (i, out) in next.iter_mut().enumerate() {
            let row = &self.g[i * m..(i + 1) * m];
            let noise: f64 = row.iter().zip(&self.dw).map(|(a, b)| a * b).sum();
            *out = cur[i] + self.f[i] * dt + noise;
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k as i64 + 1 });
        }
        truncate_in_place(next, self.sim.radius);
        Ok(())
    }
}

/// Worst ratios of the coefficients to their truncated growth bounds
/// `|f| <= K dt^-nu (1 + |u| + |v|)` and `|g| <= K^1/2 dt^-nu/2 (1 + |u| + |v|)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GrowthReport {
    pub max_drift_ratio: f64,
    pub max_diffusion_ratio: f64,
    pub worst_step: i64,
    pub violations: usize,
}

impl GrowthReport {
    /// A violation means `Phi` understates the coefficients' growth for this
    /// model: a configuration fault, not a numerical one.
    pub fn is_consistent(&self) -> bool {
        self.violations == 0
    }
}

/// Growth ratios `(drift, diffusion)` at one pair of states.
pub fn growth_ratios(
    model: &dyn SddeModel,
    rule: &TruncationRule,
    dt: f64,
    u: &[f64],
    v: &[f64],
) -> (f64, f64) {
    let (d, m) = (model.state_dim(), model.noise_dim());
    let mut f = vec![0.0; d];
    let mut g = vec![0.0; d * m];
    model.drift_into(u, v, &mut f);
    model.diffusion_into(u, v, &mut g);
    let base = 1.0 + norm(u) + norm(v);
    let kf = rule.k() * dt.powf(-rule.nu());
    (norm(&f) / (kf * base), norm(&g) / (kf.sqrt() * base))
}

pub fn coefficient_growth_check(
    model: &dyn SddeModel,
    traj: &Trajectory,
    rule: &TruncationRule,
) -> Result<GrowthReport> {
    if traj.dim != model.state_dim() {
        return Err(Error::dim("trajectory state", model.state_dim(), traj.dim));
    }
    let n = traj.grid.delay_steps() as i64;
    let dt = traj.grid.dt();
    let mut rep = GrowthReport {
        max_drift_ratio: 0.0,
        max_diffusion_ratio: 0.0,
        worst_step: 0,
        violations: 0,
    };
    let mut worst = f64::NEG_INFINITY;
    for k in 0..=traj.grid.n_steps() as i64 {
        let (rf, rg) = growth_ratios(model, rule, dt, traj.state(k)?, traj.state(k - n)?);
        rep.max_drift_ratio = rep.max_drift_ratio.max(rf);
        rep.max_diffusion_ratio = rep.max_diffusion_ratio.max(rg);
        if rf.max(rg) > worst {
            worst = rf.max(rg);
            rep.worst_step = k;
        }
        if rf > 1.0 || rg > 1.0 {
            rep.violations += 1;
        }
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{frozen_model, linear_decay_model, CubicDelayedNoiseModel, FnModel};
    use crate::truncation::PowerLaw;
    use proptest::prelude::*;

    fn frozen_sim(n: usize, steps: usize) -> Simulator {
        let model: Arc<dyn SddeModel> = Arc::new(frozen_model());
        let rule = TruncationRule::for_model(model.as_ref(), Arc::new(PowerLaw::new(1.0, 1.0).unwrap()), 0.25).unwrap();
        Simulator::new(model, rule, Grid::new(1.0, n, steps).unwrap(), true).unwrap()
    }

    fn example_sim(n: usize, steps: usize) -> Simulator {
        let model: Arc<dyn SddeModel> = Arc::new(CubicDelayedNoiseModel);
        let rule = TruncationRule::for_model(model.as_ref(), model.growth_function().unwrap(), 0.01).unwrap();
        Simulator::new(model, rule, Grid::new(1.0, n, steps).unwrap(), n < 1000).unwrap()
    }

    fn decay_sim(n: usize, steps: usize) -> Simulator {
        let model: Arc<dyn SddeModel> = Arc::new(linear_decay_model());
        let rule = TruncationRule::for_model(model.as_ref(), model.growth_function().unwrap(), 0.01).unwrap();
        Simulator::new(model, rule, Grid::new(1.0, n, steps).unwrap(), false).unwrap()
    }

    #[test]
    fn frozen_dynamics_stay_put() {
        let sim = frozen_sim(10, 50);
        let c = [0.3, -0.2];
        let tr = sim.simulate(&InitialData::Constant(c.to_vec()), &SeedSpec::scheme_noise(1, 0)).unwrap();
        assert_eq!(tr.len(), 61);
        for k in -10..=50 {
            assert_eq!(tr.state(k).unwrap(), &c);
        }
        let first = tr.extract_segment(0).unwrap();
        for k in 0..=50 {
            assert_eq!(tr.extract_segment(k).unwrap(), first);
        }
    }

    #[test]
    fn linear_decay_matches_closed_form() {
        let sim = decay_sim(1000, 10_000);
        let tr = sim.simulate(&InitialData::Constant(vec![1.0]), &SeedSpec::scheme_noise(1, 0)).unwrap();
        let dt = sim.grid().dt();
        let mut euler = 1.0f64;
        for k in 0..=10_000i64 {
            let u = tr.state(k).unwrap()[0];
            assert!((u - (1.0 - dt).powi(k as i32)).abs() <= 1e-10);
            // explicit Euler recursion, evaluated the same way
            assert!((u - euler).abs() <= 8.0 * (k.max(1) as f64) * f64::EPSILON * euler.abs());
            euler = euler + (-euler) * dt;
        }
    }

    #[test]
    fn oversized_initial_value_is_clipped_to_radius() {
        let sim = frozen_sim(10, 5);
        let r = sim.radius();
        let tr = sim.simulate(&InitialData::Constant(vec![30.0, 40.0]), &SeedSpec::scheme_noise(1, 0)).unwrap();
        let n0 = norm(tr.state(0).unwrap());
        assert!(n0 <= r && (n0 - r).abs() < 1e-12 * r);
    }

    #[test]
    fn example_initial_segment_is_truncated() {
        let sim = example_sim(1000, 0);
        let tr = sim.simulate(&InitialData::Constant(vec![-3.0, 4.0]), &SeedSpec::scheme_noise(1, 0)).unwrap();
        let r = 10f64.powf(0.0075);
        for k in -1000..=0 {
            let u = tr.state(k).unwrap();
            assert!((u[0] + 0.6 * r).abs() < 1e-12 && (u[1] - 0.8 * r).abs() < 1e-12);
        }
    }

    #[test]
    fn admissibility_gate() {
        let model: Arc<dyn SddeModel> = Arc::new(CubicDelayedNoiseModel);
        let rule = TruncationRule::for_model(model.as_ref(), model.growth_function().unwrap(), 0.01).unwrap();
        let coarse = Grid::new(1.0, 100, 10).unwrap();
        assert!(matches!(
            Simulator::new(model.clone(), rule.clone(), coarse, false),
            Err(Error::Admissibility { .. })
        ));
        assert!(Simulator::new(model.clone(), rule.clone(), coarse, true).is_ok());
        let frozen: Arc<dyn SddeModel> = Arc::new(frozen_model());
        assert!(Simulator::new(frozen, rule.clone(), Grid::new(1.0, 1000, 1).unwrap(), false).is_err());
        assert!(Simulator::new(model, rule, Grid::new(2.0, 2000, 1).unwrap(), true).is_err());
    }

    #[test]
    fn example_run_respects_radius_and_growth() {
        let sim = example_sim(1000, 10_000);
        for traj in 0..4 {
            let tr = sim.simulate(&InitialData::BrownianPath, &SeedSpec::scheme_noise(11, traj)).unwrap();
            assert_eq!(tr.truncation_excess_count(), 0);
            assert!(tr.max_state_norm() <= sim.radius());
            let rep = coefficient_growth_check(sim.model().as_ref(), &tr, sim.rule()).unwrap();
            assert!(rep.is_consistent(), "{rep:?}");
            assert!(rep.max_drift_ratio <= 1.0 && rep.max_diffusion_ratio <= 1.0);
        }
    }

    #[test]
    fn frozen_growth_ratios_are_zero() {
        let sim = frozen_sim(10, 20);
        let tr = sim.simulate(&InitialData::Constant(vec![0.5, 0.5]), &SeedSpec::scheme_noise(1, 0)).unwrap();
        let rep = coefficient_growth_check(sim.model().as_ref(), &tr, sim.rule()).unwrap();
        assert_eq!((rep.max_drift_ratio, rep.max_diffusion_ratio), (0.0, 0.0));
    }

    #[test]
    fn undersized_growth_function_is_flagged() {
        let cubic: Arc<dyn SddeModel> = Arc::new(
            FnModel::new("cubic", 1, 1, 1.0, |x, _, o| o[0] = 1.0 - 3.0 * x[0].powi(3), |_, _, o| o[0] = 0.0).unwrap(),
        );
        let rule = TruncationRule::for_model(cubic.as_ref(), Arc::new(PowerLaw::new(1.0, 1.0).unwrap()), 1.0 / 3.0).unwrap();
        let grid = Grid::new(1.0, 1000, 3).unwrap();
        let sim = Simulator::new(cubic.clone(), rule.clone(), grid, true).unwrap();
        let r = sim.radius();
        assert!((r - 10.0).abs() < 1e-9);
        let near = InitialData::GridSamples(vec![vec![0.99 * r]; 1001]);
        let tr = sim.simulate(&near, &SeedSpec::scheme_noise(1, 0)).unwrap();
        let rep = coefficient_growth_check(cubic.as_ref(), &tr, &rule).unwrap();
        assert!(!rep.is_consistent());
        assert!(rep.max_drift_ratio > 1.0);
    }

    #[test]
    fn interpolants_at_nodes_and_between() {
        let sim = example_sim(1000, 2000);
        let tr = sim.simulate(&InitialData::Affine { slope: vec![2.0, 1.0], intercept: vec![0.0, 1.0] }, &SeedSpec::scheme_noise(3, 0)).unwrap();
        let dt = sim.grid().dt();
        for k in [-1000i64, -3, 0, 1, 17, 999, 1999] {
            let t = sim.grid().time(k);
            let u = tr.state(k).unwrap();
            assert_eq!(tr.piecewise_constant(t).unwrap(), u);
            assert_eq!(tr.piecewise_linear(t).unwrap(), u);
            assert_eq!(tr.piecewise_constant(t + dt / 2.0).unwrap(), u);
            let almost = sim.grid().time(k + 1) - dt * 2f64.powi(-20);
            assert_eq!(tr.piecewise_constant(almost).unwrap(), u);
            let mid = tr.piecewise_linear(t + dt / 2.0).unwrap();
            let v = tr.state(k + 1).unwrap();
            for i in 0..2 {
                assert!((mid[i] - 0.5 * (u[i] + v[i])).abs() < 1e-15);
            }
        }
        assert_eq!(tr.piecewise_constant(sim.grid().horizon()).unwrap(), tr.state(2000).unwrap());
        assert!(tr.piecewise_constant(-1.5).is_err());
        assert!(tr.piecewise_linear(20.1).is_err());
    }

    #[test]
    fn segments_slide() {
        let sim = example_sim(1000, 300);
        let tr = sim.simulate(&InitialData::BrownianPath, &SeedSpec::scheme_noise(4, 2)).unwrap();
        let s0 = tr.extract_segment(0).unwrap();
        assert_eq!(s0.n_nodes(), 1001);
        for j in 0..=1000 {
            assert_eq!(s0.node(j), tr.state(j as i64 - 1000).unwrap());
        }
        for k in 0..300 {
            let a = tr.extract_segment(k).unwrap();
            let b = tr.extract_segment(k + 1).unwrap();
            assert_eq!(&a.nodes[2..], &b.nodes[..1000 * 2]);
        }
        assert!(tr.extract_segment(301).is_err());
    }

    #[test]
    fn observed_run_matches_full_run() {
        let sim = example_sim(1000, 3000);
        let seed = SeedSpec::scheme_noise(9, 5);
        let xi = InitialData::BrownianPath;
        let full = sim.simulate(&xi, &seed).unwrap();
        let observe = [0usize, 1, 999, 1000, 1001, 2500, 2500, 3000];
        let mut seen = Vec::new();
        let summary = sim
            .simulate_observed(&xi, &seed, &observe, |k, seg| {
                assert_eq!(seg, full.segment(k).unwrap());
                seen.push(k);
            })
            .unwrap();
        assert_eq!(seen, vec![0, 1, 999, 1000, 1001, 2500, 3000]);
        assert_eq!(summary.truncation_excess, 0);
        assert_eq!(summary.max_state_norm, full.max_state_norm());
        assert!(sim.simulate_observed(&xi, &seed, &[3001], |_, _| {}).is_err());
    }

    #[test]
    fn sup_norm_examples() {
        let c = Segment::constant(&[3.0, 4.0], 5, 0.25);
        assert_eq!(segment_sup_norm(c.as_ref()), 5.0);
        let alt = Segment::new(vec![1.0, -1.0, 1.0, -1.0], 1, 0.5).unwrap();
        assert_eq!(segment_sup_norm(alt.as_ref()), 1.0);
        let arc = Segment::new(vec![1.0, 0.0, 0.0, 1.0], 2, 1.0).unwrap();
        assert_eq!(segment_sup_norm(arc.as_ref()), 1.0);
        assert!((norm(&arc.as_ref().eval(-0.5).unwrap()) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn csv_headers() {
        let sim = frozen_sim(2, 1);
        let tr = sim.simulate(&InitialData::Constant(vec![0.0, 0.5]), &SeedSpec::scheme_noise(1, 0)).unwrap();
        let mut out = Vec::new();
        tr.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next().unwrap(), "k,t,x_1,x_2");
        assert_eq!(text.lines().nth(1).unwrap(), "-2,-1,0,0.5");
        assert_eq!(text.lines().count(), 5);
        let mut out = Vec::new();
        write_segment_csv(tr.segment(1).unwrap(), &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert_eq!(text.lines().next().unwrap(), "j,theta,x_1,x_2");
        assert_eq!(text.lines().nth(1).unwrap(), "0,-1,0,0.5");
    }

    proptest! {
        // The sup over a dense theta sweep never exceeds the node rule, and
        // the node rule is attained (the sweep hits every node).
        #[test]
        fn sup_norm_dominates_dense_sweep(vals in prop::collection::vec(-3f64..3.0, 6..20)) {
            let n = vals.len() / 2 * 2;
            let seg = Segment::new(vals[..n].to_vec(), 2, 0.1).unwrap();
            let s = segment_sup_norm(seg.as_ref());
            let tmin = seg.as_ref().theta_min();
            let mut best = 0.0f64;
            for j in 0..seg.n_nodes() - 1 {
                for i in 0..=100 {
                    let theta = (tmin + (j as f64 + i as f64 / 100.0) * 0.1).min(0.0);
                    best = best.max(norm(&seg.as_ref().eval(theta).unwrap()));
                }
            }
            prop_assert!(best <= s * (1.0 + 1e-12));
            prop_assert!(best >= s * (1.0 - 1e-12));
        }

        #[test]
        fn linear_interpolant_is_convex_combination(frac in 0.0f64..1.0, k in 0i64..500) {
            let sim = example_sim(100, 500);
            let tr = sim.simulate(&InitialData::BrownianPath, &SeedSpec::scheme_noise(2, 0)).unwrap();
            let dt = sim.grid().dt();
            let t = (sim.grid().time(k) + frac * dt).min(sim.grid().horizon());
            let y = tr.piecewise_linear(t).unwrap();
            let (a, b) = (tr.state(k).unwrap(), tr.state((k + 1).min(500)).unwrap());
            for i in 0..2 {
                let (lo, hi) = (a[i].min(b[i]), a[i].max(b[i]));
                prop_assert!(y[i] >= lo - 1e-14 && y[i] <= hi + 1e-14);
            }
        }
    }
}
