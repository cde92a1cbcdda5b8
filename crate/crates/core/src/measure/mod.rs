//! Empirical measures on segment space and their statistics.
//!
//! The bounded-Lipschitz distance `d_Xi` is a supremum over an infinite
//! class and is never computed directly. Instead two computable quantities
//! bracket it: [`bl_lower_bound`] maximises over a finite dictionary of
//! `Xi`-functionals, and [`truncated_wasserstein`] solves the transport
//! problem with cost `1 ∧ ||X1 - X2||`.

mod functional;
mod transport;

pub use functional::{
    parse_functional, spot_check_bounds, BoundCheck, ClipDistance, ClipNorm, ClippedCoordinate, Constant,
    CosNorm, Scaled, TestFunctional,
};
pub use transport::{CostMatrix, Entropic, ExactAssignment, SolverRegistry, TransportEstimate, TransportSolver};

use rand::seq::index::sample;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{SeedSpec, StreamLabel};
use crate::scheme::{segment_sup_distance, Segment};

/// Equal-weight sample of segments at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSegmentMeasure {
    samples: Vec<Segment>,
    pub step: usize,
    pub time: f64,
    pub label: String,
}

impl EmpiricalSegmentMeasure {
    pub fn new(samples: Vec<Segment>, step: usize, time: f64, label: impl Into<String>) -> Result<Self> {
        let first = samples
            .first()
            .ok_or_else(|| Error::Usage("empirical measure needs at least one sample".into()))?;
        let (len, dim, dt) = (first.nodes.len(), first.dim, first.dt);
        if samples.iter().any(|s| s.nodes.len() != len || s.dim != dim || s.dt != dt) {
            return Err(Error::Usage("all segments of a measure must share N, d and dt".into()));
        }
        Ok(Self {
            samples,
            step,
            time,
            label: label.into(),
        })
    }

    pub fn samples(&self) -> &[Segment] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    fn same_space(&self, other: &Self) -> Result<()> {
        let (a, b) = (&self.samples[0], &other.samples[0]);
        if a.nodes.len() != b.nodes.len() || a.dim != b.dim || a.dt != b.dt {
            return Err(Error::Usage("measures live on different segment grids".into()));
        }
        Ok(())
    }

    /// Seeded subsample without replacement of `k` samples (all if `k >= len`),
    /// kept in original order.
    pub fn subsample(&self, k: usize, master_seed: u64) -> Self {
        if k >= self.len() {
            return self.clone();
        }
        Self {
            samples: subsample_indices(self.len(), k, master_seed, self.step as u64)
                .into_iter()
                .map(|i| self.samples[i].clone())
                .collect(),
            step: self.step,
            time: self.time,
            label: self.label.clone(),
        }
    }
}

/// `min(k, n)` distinct indices from `0..n`, ascending, from the
/// subsampling stream of `(master_seed, key)`.
pub fn subsample_indices(n: usize, k: usize, master_seed: u64, key: u64) -> Vec<usize> {
    if k >= n {
        return (0..n).collect();
    }
    let mut rng = SeedSpec::new(master_seed, key, StreamLabel::Subsample).rng();
    let mut idx = sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}

pub fn functional_values(measure: &EmpiricalSegmentMeasure, psi: &dyn TestFunctional) -> Vec<f64> {
    measure.samples.iter().map(|s| psi.eval(s.as_ref())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanEstimate {
    pub mean: f64,
    /// Standard error with the `n - 1` variance divisor; 0 for one sample.
    pub stderr: f64,
    pub n: usize,
}

impl MeanEstimate {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        let n = values.len();
        if n == 0 {
            return Err(Error::Usage("mean of an empty sample".into()));
        }
        // Welford: a constant sample gives exactly that constant and zero spread.
        let (mut mean, mut m2) = (0.0f64, 0.0f64);
        for (k, &v) in values.iter().enumerate() {
            let delta = v - mean;
            mean += delta / (k + 1) as f64;
            m2 += delta * (v - mean);
        }
        let stderr = if n > 1 { (m2 / (n - 1) as f64 / n as f64).sqrt() } else { 0.0 };
        Ok(Self { mean, stderr, n })
    }

    /// `|mean_a - mean_b| <= z sqrt(se_a^2 + se_b^2)`.
    pub fn agrees_with(&self, other: &Self, z: f64) -> bool {
        (self.mean - other.mean).abs() <= z * self.stderr.hypot(other.stderr)
    }
}

pub fn functional_mean(measure: &EmpiricalSegmentMeasure, psi: &dyn TestFunctional) -> MeanEstimate {
    MeanEstimate::from_values(&functional_values(measure, psi)).expect("measures are nonempty")
}

/// Right-continuous empirical CDF `F(v) = #{x_i <= v} / n`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn from_values(mut values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Usage("ECDF of an empty sample".into()));
        }
        if values.iter().any(|v| v.is_nan()) {
            return Err(Error::Usage("ECDF input contains NaN".into()));
        }
        values.sort_by(f64::total_cmp);
        Ok(Self { sorted: values })
    }

    pub fn sorted_values(&self) -> &[f64] {
        &self.sorted
    }

    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    pub fn eval(&self, v: f64) -> f64 {
        self.sorted.partition_point(|&x| x <= v) as f64 / self.sorted.len() as f64
    }

    /// `(x_(i), (i + 1) / n)` for the sorted sample.
    pub fn steps(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let n = self.sorted.len() as f64;
        self.sorted.iter().enumerate().map(move |(i, &x)| (x, (i + 1) as f64 / n))
    }

    /// Mean of the distribution the ECDF describes.
    pub fn mean(&self) -> f64 {
        self.sorted.iter().sum::<f64>() / self.sorted.len() as f64
    }
}

pub fn empirical_cdf(measure: &EmpiricalSegmentMeasure, psi: &dyn TestFunctional) -> Ecdf {
    Ecdf::from_values(functional_values(measure, psi)).expect("measures are nonempty")
}

/// Two-sample Kolmogorov-Smirnov statistic `sup_v |F_a(v) - F_b(v)|`.
pub fn ks_statistic(a: &Ecdf, b: &Ecdf) -> f64 {
    let (xa, xb) = (&a.sorted, &b.sorted);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut best = 0.0f64;
    while i < xa.len() || j < xb.len() {
        // next jump point in the merged sample; consume ties on both sides
        let v = match (xa.get(i), xb.get(j)) {
            (Some(&p), Some(&q)) => p.min(q),
            (Some(&p), None) => p,
            (None, Some(&q)) => q,
            (None, None) => unreachable!(),
        };
        while i < xa.len() && xa[i] <= v {
            i += 1;
        }
        while j < xb.len() && xb[j] <= v {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    best
}

/// Lower bound on `d_Xi`: the largest mean gap over the dictionary.
#[derive(Debug, Clone, PartialEq)]
pub struct BlBound {
    pub value: f64,
    pub best_functional: String,
    /// Largest spread `max - min` of any probe over the pooled samples.
    pub max_oscillation: f64,
}

impl BlBound {
    /// `c` with `value <= c * W(1 ∧ ||.||)` guaranteed. A 1-Lipschitz probe
    /// with spread `s` on the pooled support satisfies
    /// `|psi(x) - psi(y)| <= max(1, s) (1 ∧ ||x - y||)`, so `c = 1` when every
    /// spread is at most 1.
    pub fn sandwich_factor(&self) -> f64 {
        self.max_oscillation.max(1.0)
    }
}

pub fn bl_lower_bound(
    a: &EmpiricalSegmentMeasure,
    b: &EmpiricalSegmentMeasure,
    dictionary: &[&dyn TestFunctional],
) -> Result<BlBound> {
    a.same_space(b)?;
    if let Some(bad) = dictionary.iter().find(|p| !p.in_xi()) {
        return Err(Error::Usage(format!(
            "functional '{}' is not in the bounded-Lipschitz class (L = {}, sup = {})",
            bad.name(),
            bad.lipschitz_bound(),
            bad.sup_bound()
        )));
    }
    let mut out = BlBound {
        value: 0.0,
        best_functional: String::new(),
        max_oscillation: 0.0,
    };
    for psi in dictionary {
        let (va, vb) = (functional_values(a, *psi), functional_values(b, *psi));
        let (lo, hi) = va
            .iter()
            .chain(&vb)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        out.max_oscillation = out.max_oscillation.max(hi - lo);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let gap = (mean(&va) - mean(&vb)).abs();
        if gap > out.value || out.best_functional.is_empty() {
            out.value = gap.max(out.value);
            out.best_functional = psi.name();
        }
    }
    Ok(out)
}

/// Default probes: `cos ||X||`, `1 ∧ ||X||`, `1 ∧ ||X - X_ref||` for 8
/// references drawn from the pooled samples, and coordinates at
/// `theta in {-tau, -tau/2, 0}` clipped to `[-1, 1]` and halved, so that
/// each probe other than `cos ||X||` spreads over at most 1.
pub fn default_dictionary(
    a: &EmpiricalSegmentMeasure,
    b: &EmpiricalSegmentMeasure,
    master_seed: u64,
) -> Vec<Box<dyn TestFunctional>> {
    let mut dict: Vec<Box<dyn TestFunctional>> = vec![Box::new(CosNorm), Box::new(ClipNorm { level: 1.0 })];
    let pool: Vec<&Segment> = a.samples.iter().chain(&b.samples).collect();
    let mut rng = SeedSpec::new(master_seed, u64::MAX, StreamLabel::Subsample).rng();
    let picks = sample(&mut rng, pool.len(), pool.len().min(8)).into_vec();
    for (r, idx) in picks.into_iter().enumerate() {
        dict.push(Box::new(ClipDistance {
            level: 1.0,
            reference: pool[idx].clone(),
            tag: format!("ref{r}"),
        }));
    }
    let first = &a.samples[0];
    let tmin = first.as_ref().theta_min();
    for theta in [tmin, 0.5 * tmin, 0.0] {
        for coord in 0..first.dim {
            dict.push(Box::new(Scaled {
                factor: 0.5,
                inner: Box::new(ClippedCoordinate { theta, coord }),
            }));
        }
    }
    dict
}

/// `C_ij = 1 ∧ ||A_i - B_j||`, assembled in parallel.
pub fn truncated_cost_matrix(a: &EmpiricalSegmentMeasure, b: &EmpiricalSegmentMeasure) -> Result<CostMatrix> {
    a.same_space(b)?;
    let nb = b.len();
    let data: Vec<f64> = (0..a.len() * nb)
        .into_par_iter()
        .map(|idx| {
            let (i, j) = (idx / nb, idx % nb);
            segment_sup_distance(a.samples[i].as_ref(), b.samples[j].as_ref()).min(1.0)
        })
        .collect();
    CostMatrix::new(a.len(), nb, data)
}

/// Transport distance with cost `1 ∧ ||X1 - X2||`; a value in `[0, 1]`.
pub fn truncated_wasserstein(
    a: &EmpiricalSegmentMeasure,
    b: &EmpiricalSegmentMeasure,
    solver: &dyn TransportSolver,
) -> Result<TransportEstimate> {
    solver.solve(&truncated_cost_matrix(a, b)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CauchyRow {
    pub step: usize,
    pub time: f64,
    /// Distance from this time's measure to the last one.
    pub distance: TransportEstimate,
}

/// Distances `W(mu_{t_j}, mu_{t_last})` for every earlier time `t_j`.
pub fn cauchy_diagnostic(
    measures: &[EmpiricalSegmentMeasure],
    solver: &dyn TransportSolver,
) -> Result<Vec<CauchyRow>> {
    let (last, rest) = measures
        .split_last()
        .filter(|(_, rest)| !rest.is_empty())
        .ok_or_else(|| Error::Usage("Cauchy diagnostic needs at least two time points".into()))?;
    rest.iter()
        .map(|m| {
            Ok(CauchyRow {
                step: m.step,
                time: m.time,
                distance: truncated_wasserstein(m, last, solver)?,
            })
        })
        .collect()
}
