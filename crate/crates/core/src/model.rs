//! SDDE coefficient sets, their assumption certificates and sampling checkers.
//!
//! A model supplies the drift `f(x, y)` and diffusion `g(x, y)` of
//! `dx(t) = f(x(t), x(t - tau)) dt + g(x(t), x(t - tau)) dW(t)`, where `x`
//! is the current state and `y` the delayed one. Models may also carry
//! user-supplied claims about the coefficients:
//!
//! - a dissipativity bound `<2x, f(x,y)> + |g(x,y)|^2 <= a1 - a2|x|^alpha + a3|y|^alpha`,
//! - a contraction bound
//!   `2<x-x', f(x,y)-f(x',y')> + |g(x,y)-g(x',y')|^2
//!    <= -b1|x-x'|^2 + b2|y-y'|^2 - b3 V(x,x') + b4 V(y,y')`.
//!
//! These claims are never proven here. [`check_dissipativity`] and
//! [`check_contraction`] try to falsify them on random samples; an empty
//! report means "consistent at the sampled points" and nothing more.
//! Local Lipschitz continuity of the coefficients is assumed and not checked.
//!
//! `|g|` is always the trace (Frobenius) norm of the `d x m` matrix.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{dist_sq, dot, norm, norm_sq};
use crate::rng::{brownian_initial_path, SeedSpec};
use crate::truncation::{GrowthFunction, Grid, PowerLaw};

/// Coefficients of a stochastic delay differential equation.
///
/// Implementations must be pure: identical inputs give bitwise identical
/// outputs, and both coefficients are defined on all of `R^d x R^d`.
pub trait SddeModel: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    /// State dimension `d`.
    fn state_dim(&self) -> usize;
    /// Noise dimension `m`.
    fn noise_dim(&self) -> usize;
    /// Delay `tau > 0`.
    fn delay(&self) -> f64;

    /// Writes `f(x, y)` into `out` (length `d`). Inputs are trusted to have
    /// the right length; use [`evaluate_drift`] for a checked call.
    fn drift_into(&self, x: &[f64], y: &[f64], out: &mut [f64]);

    /// Writes `g(x, y)` into `out`, row-major `d x m`.
    fn diffusion_into(&self, x: &[f64], y: &[f64], out: &mut [f64]);

    fn certificates(&self) -> Option<Certificates> {
        None
    }

    /// A growth function known to dominate the local Lipschitz moduli.
    fn growth_function(&self) -> Option<Arc<dyn GrowthFunction>> {
        None
    }
}

/// A `rows x cols` matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl CoefMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn trace_norm(&self) -> f64 {
        norm(&self.data)
    }
}

fn check_args(model: &dyn SddeModel, x: &[f64], y: &[f64]) -> Result<()> {
    let d = model.state_dim();
    if x.len() != d {
        return Err(Error::dim("current state x", d, x.len()));
    }
    if y.len() != d {
        return Err(Error::dim("delayed state y", d, y.len()));
    }
    Ok(())
}

pub fn evaluate_drift(model: &dyn SddeModel, x: &[f64], y: &[f64]) -> Result<Vec<f64>> {
    check_args(model, x, y)?;
    let mut out = vec![0.0; model.state_dim()];
    model.drift_into(x, y, &mut out);
    Ok(out)
}

pub fn evaluate_diffusion(model: &dyn SddeModel, x: &[f64], y: &[f64]) -> Result<CoefMatrix> {
    check_args(model, x, y)?;
    let (d, m) = (model.state_dim(), model.noise_dim());
    let mut data = vec![0.0; d * m];
    model.diffusion_into(x, y, &mut data);
    Ok(CoefMatrix {
        rows: d,
        cols: m,
        data,
    })
}

/// Claimed dissipativity constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DissipativityCert {
    pub alpha: f64,
    pub a1: f64,
    pub a2: f64,
    pub a3: f64,
}

impl DissipativityCert {
    pub fn new(alpha: f64, a1: f64, a2: f64, a3: f64) -> Result<Self> {
        if !(alpha >= 2.0) {
            return Err(Error::Config(format!("dissipativity exponent {alpha} < 2")));
        }
        if !(a1 >= 0.0 && a2 >= 0.0 && a3 >= 0.0) {
            return Err(Error::Config("dissipativity constants must be >= 0".into()));
        }
        if !(a2 > a3) {
            return Err(Error::Config(format!("need a2 > a3, got a2={a2}, a3={a3}")));
        }
        Ok(Self { alpha, a1, a2, a3 })
    }
}

/// Companion function `V` of the contraction bound.
pub type LyapunovFn = Arc<dyn Fn(&[f64], &[f64]) -> f64 + Send + Sync>;

/// Claimed contraction constants and companion function `V`.
#[derive(Clone)]
pub struct ContractionCert {
    pub b1: f64,
    pub b2: f64,
    pub b3: f64,
    pub b4: f64,
    pub v: LyapunovFn,
}

impl fmt::Debug for ContractionCert {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ContractionCert")
            .field("b1", &self.b1)
            .field("b2", &self.b2)
            .field("b3", &self.b3)
            .field("b4", &self.b4)
            .finish_non_exhaustive()
    }
}

impl ContractionCert {
    pub fn new(b1: f64, b2: f64, b3: f64, b4: f64, v: LyapunovFn) -> Result<Self> {
        if !(b1 >= 0.0 && b2 >= 0.0 && b3 >= 0.0 && b4 >= 0.0) {
            return Err(Error::Config("contraction constants must be >= 0".into()));
        }
        if !(b1 > b2) {
            return Err(Error::Config(format!("need b1 > b2, got b1={b1}, b2={b2}")));
        }
        if !(b3 > b4) {
            return Err(Error::Config(format!("need b3 > b4, got b3={b3}, b4={b4}")));
        }
        Ok(Self { b1, b2, b3, b4, v })
    }

    /// Contraction claim without the `V` terms (`V == 0`, `b3 = 1`, `b4 = 0`).
    pub fn plain(b1: f64, b2: f64) -> Result<Self> {
        Self::new(b1, b2, 1.0, 0.0, Arc::new(|_, _| 0.0))
    }
}

/// Both certificates a model needs for the step-size gates.
#[derive(Debug, Clone)]
pub struct Certificates {
    pub dissipativity: DissipativityCert,
    pub contraction: ContractionCert,
}

/// Produces sample points for certificate checks.
pub trait PointSampler {
    fn fill(&mut self, out: &mut [f64]);
}

/// Uniform samples on `[-half_width, half_width]^k`.
#[derive(Debug, Clone)]
pub struct UniformBox {
    pub half_width: f64,
    rng: ChaCha8Rng,
}

impl UniformBox {
    pub const DEFAULT_HALF_WIDTH: f64 = 5.0;
    pub const DEFAULT_POINTS: usize = 100_000;

    pub fn new(half_width: f64, seed: u64) -> Self {
        Self {
            half_width,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }
}

impl Default for UniformBox {
    fn default() -> Self {
        Self::new(Self::DEFAULT_HALF_WIDTH, 0)
    }
}

impl PointSampler for UniformBox {
    fn fill(&mut self, out: &mut [f64]) {
        let w = self.half_width;
        for v in out.iter_mut() {
            *v = self.rng.random_range(-w..=w);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// The sampled arguments, concatenated.
    pub point: Vec<f64>,
    /// `rhs - lhs`; negative.
    pub margin: f64,
}

/// Outcome of a sampling check. Margins are `rhs - lhs` of the claimed
/// inequality, so negative means violated.
#[derive(Debug, Clone, PartialEq)]
pub struct ViolationReport {
    pub checked: usize,
    pub worst_margin: f64,
    pub worst_point: Vec<f64>,
    pub violation_count: usize,
    /// The first [`ViolationReport::MAX_LISTED`] violations.
    pub violations: Vec<Violation>,
}

impl ViolationReport {
    pub const MAX_LISTED: usize = 64;

    fn new() -> Self {
        Self {
            checked: 0,
            worst_margin: f64::INFINITY,
            worst_point: Vec::new(),
            violation_count: 0,
            violations: Vec::new(),
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.violation_count == 0
    }

    // Roundoff allowance: margins within 1e-12 of the magnitude of the terms
    // involved count as satisfied.
    fn record(&mut self, point: &[f64], margin: f64, scale: f64) {
        self.checked += 1;
        if margin < self.worst_margin || self.worst_point.is_empty() {
            self.worst_margin = margin;
            self.worst_point = point.to_vec();
        }
        if margin < -1e-12 * (1.0 + scale) || margin.is_nan() {
            self.violation_count += 1;
            if self.violations.len() < Self::MAX_LISTED {
                self.violations.push(Violation {
                    point: point.to_vec(),
                    margin,
                });
            }
        }
    }
}

/// `(rhs - lhs, scale)` of the dissipativity claim at one point.
fn dissipativity_terms(
    model: &dyn SddeModel,
    cert: &DissipativityCert,
    x: &[f64],
    y: &[f64],
    f: &mut [f64],
    g: &mut [f64],
) -> (f64, f64) {
    model.drift_into(x, y, f);
    model.diffusion_into(x, y, g);
    let lhs = 2.0 * dot(x, f) + norm_sq(g);
    let ax = cert.a2 * norm(x).powf(cert.alpha);
    let ay = cert.a3 * norm(y).powf(cert.alpha);
    let rhs = cert.a1 - ax + ay;
    (rhs - lhs, lhs.abs() + cert.a1 + ax + ay)
}

/// Margin `rhs - lhs` of the dissipativity claim at `(x, y)`.
pub fn dissipativity_margin(
    model: &dyn SddeModel,
    cert: &DissipativityCert,
    x: &[f64],
    y: &[f64],
) -> Result<f64> {
    check_args(model, x, y)?;
    let (d, m) = (model.state_dim(), model.noise_dim());
    let (mut f, mut g) = (vec![0.0; d], vec![0.0; d * m]);
    Ok(dissipativity_terms(model, cert, x, y, &mut f, &mut g).0)
}

pub fn check_dissipativity(
    model: &dyn SddeModel,
    cert: &DissipativityCert,
    sampler: &mut dyn PointSampler,
    n_points: usize,
) -> Result<ViolationReport> {
    if n_points == 0 {
        return Err(Error::Usage("n_points must be >= 1".into()));
    }
    let (d, m) = (model.state_dim(), model.noise_dim());
    let mut point = vec![0.0; 2 * d];
    let (mut f, mut g) = (vec![0.0; d], vec![0.0; d * m]);
    let mut report = ViolationReport::new();
    for _ in 0..n_points {
        sampler.fill(&mut point);
        let (x, y) = point.split_at(d);
        let (margin, scale) = dissipativity_terms(model, cert, x, y, &mut f, &mut g);
        report.record(&point, margin, scale);
    }
    Ok(report)
}

/// Largest sampled value of `<2x,f> + |g|^2 + a2|x|^alpha - a3|y|^alpha`,
/// i.e. the smallest `a1` consistent with the samples.
pub fn sampled_dissipativity_constant(
    model: &dyn SddeModel,
    alpha: f64,
    a2: f64,
    a3: f64,
    sampler: &mut dyn PointSampler,
    n_points: usize,
) -> f64 {
    let cert = DissipativityCert {
        alpha,
        a1: 0.0,
        a2,
        a3,
    };
    let (d, m) = (model.state_dim(), model.noise_dim());
    let mut point = vec![0.0; 2 * d];
    let (mut f, mut g) = (vec![0.0; d], vec![0.0; d * m]);
    let mut sup = f64::NEG_INFINITY;
    for _ in 0..n_points {
        sampler.fill(&mut point);
        let (x, y) = point.split_at(d);
        let (margin, _) = dissipativity_terms(model, &cert, x, y, &mut f, &mut g);
        sup = sup.max(-margin);
    }
    sup
}

struct ContractionScratch {
    f: Vec<f64>,
    fb: Vec<f64>,
    g: Vec<f64>,
    gb: Vec<f64>,
    dx: Vec<f64>,
}

impl ContractionScratch {
    fn new(d: usize, m: usize) -> Self {
        Self {
            f: vec![0.0; d],
            fb: vec![0.0; d],
            g: vec![0.0; d * m],
            gb: vec![0.0; d * m],
            dx: vec![0.0; d],
        }
    }
}

fn contraction_terms(
    model: &dyn SddeModel,
    cert: &ContractionCert,
    x: &[f64],
    xb: &[f64],
    y: &[f64],
    yb: &[f64],
    s: &mut ContractionScratch,
) -> (f64, f64) {
    model.drift_into(x, y, &mut s.f);
    model.drift_into(xb, yb, &mut s.fb);
    model.diffusion_into(x, y, &mut s.g);
    model.diffusion_into(xb, yb, &mut s.gb);
    for (i, v) in s.dx.iter_mut().enumerate() {
        *v = x[i] - xb[i];
    }
    let df: f64 = s.dx.iter().zip(s.f.iter().zip(&s.fb)).map(|(d, (a, b))| d * (a - b)).sum();
    let lhs = 2.0 * df + dist_sq(&s.g, &s.gb);
    let tx = cert.b1 * norm_sq(&s.dx);
    let ty = cert.b2 * dist_sq(y, yb);
    let vx = cert.b3 * (cert.v)(x, xb);
    let vy = cert.b4 * (cert.v)(y, yb);
    let rhs = -tx + ty - vx + vy;
    (rhs - lhs, lhs.abs() + tx + ty + vx.abs() + vy.abs())
}

/// Margin `rhs - lhs` of the contraction claim at `(x, x', y, y')`.
pub fn contraction_margin(
    model: &dyn SddeModel,
    cert: &ContractionCert,
    x: &[f64],
    xb: &[f64],
    y: &[f64],
    yb: &[f64],
) -> Result<f64> {
    check_args(model, x, y)?;
    check_args(model, xb, yb)?;
    let mut s = ContractionScratch::new(model.state_dim(), model.noise_dim());
    Ok(contraction_terms(model, cert, x, xb, y, yb, &mut s).0)
}

/// Samples quadruples `(x, x', y, y')` and checks the contraction claim.
///
/// Also requires `V(x, x) == 0` at every sampled `x`; a companion function
/// failing that is a configuration error.
pub fn check_contraction(
    model: &dyn SddeModel,
    cert: &ContractionCert,
    sampler: &mut dyn PointSampler,
    n_points: usize,
) -> Result<ViolationReport> {
    if n_points == 0 {
        return Err(Error::Usage("n_points must be >= 1".into()));
    }
    let d = model.state_dim();
    let mut point = vec![0.0; 4 * d];
    let mut s = ContractionScratch::new(d, model.noise_dim());
    let mut report = ViolationReport::new();
    for _ in 0..n_points {
        sampler.fill(&mut point);
        let (x, rest) = point.split_at(d);
        let (xb, rest) = rest.split_at(d);
        let (y, yb) = rest.split_at(d);
        let vxx = (cert.v)(x, x);
        if vxx != 0.0 {
            return Err(Error::Config(format!(
                "companion function V(x, x) = {vxx} != 0 at x = {x:?}"
            )));
        }
        let (margin, scale) = contraction_terms(model, cert, x, xb, y, yb, &mut s);
        report.record(&point, margin, scale);
    }
    Ok(report)
}

type DriftFn = dyn Fn(&[f64], &[f64], &mut [f64]) + Send + Sync;

/// A model built from closures. This is how library users plug in their own
/// coefficients.
#[derive(Clone)]
pub struct FnModel {
    name: String,
    d: usize,
    m: usize,
    tau: f64,
    drift: Arc<DriftFn>,
    diffusion: Arc<DriftFn>,
    certificates: Option<Certificates>,
    growth: Option<Arc<dyn GrowthFunction>>,
}

impl fmt::Debug for FnModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnModel")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("m", &self.m)
            .field("tau", &self.tau)
            .finish_non_exhaustive()
    }
}

impl FnModel {
    pub fn new(
        name: impl Into<String>,
        d: usize,
        m: usize,
        tau: f64,
        drift: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
        diffusion: impl Fn(&[f64], &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Result<Self> {
        if d == 0 || m == 0 {
            return Err(Error::Config(format!("dimensions must be >= 1, got d={d}, m={m}")));
        }
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Config(format!("delay must be positive, got {tau}")));
        }
        Ok(Self {
            name: name.into(),
            d,
            m,
            tau,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            certificates: None,
            growth: None,
        })
    }

    pub fn with_certificates(mut self, certs: Certificates) -> Self {
        self.certificates = Some(certs);
        self
    }

    pub fn with_growth(mut self, growth: Arc<dyn GrowthFunction>) -> Self {
        self.growth = Some(growth);
        self
    }
}

impl SddeModel for FnModel {
    fn name(&self) -> &str {
        &self.name
    }
    fn state_dim(&self) -> usize {
        self.d
    }
    fn noise_dim(&self) -> usize {
        self.m
    }
    fn delay(&self) -> f64 {
        self.tau
    }
    fn drift_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.drift)(x, y, out)
    }
    fn diffusion_into(&self, x: &[f64], y: &[f64], out: &mut [f64]) {
        (self.diffusion)(x, y, out)
    }
    fn certificates(&self) -> Option<Certificates> {
        self.certificates.clone()
    }
    fn growth_function(&self) -> Option<Arc<dyn GrowthFunction>> {
        self.growth.clone()
    }
}

/// Two-dimensional example with cubic mean reversion and squared delayed
/// noise, unit delay:
///
/// ```text
/// dx1 = (1 - x1 - 3 x1^3) dt + x2(t-1)^2 dW1
/// dx2 = -(x2 + 3 x2^3) dt    + x1(t-1)^2 dW2
/// ```
///
/// Carries the certificates `alpha = 4, a2 = 3, a3 = 1` (with `a1 = 1/2`,
/// the bound `2 x1 - 2 x1^2 <= 1/2`; the tight constant is about 0.4104) and `b1 = 2, b2 = 0, b3 = 3, b4 = 1`
/// with `V(u, v) = sum_i (u_i + v_i)^2 (u_i - v_i)^2`, and the growth
/// function `Phi(R) = 16 R^4`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CubicDelayedNoiseModel;

impl CubicDelayedNoiseModel {
    pub const NAME: &'static str = "paper-example-5.1";
}

/// `V(u, v) = sum_i (u_i + v_i)^2 (u_i - v_i)^2`.
pub fn quartic_difference_lyapunov(u: &[f64], v: &[f64]) -> f64 {
    u.iter()
        .zip(v)
        .map(|(a, b)| {
            let s = (a + b) * (a - b);
            s * s
        })
        .sum()
}

impl SddeModel for CubicDelayedNoiseModel {
    fn name(&self) -> &str {
        Self::NAME
    }
    fn state_dim(&self) -> usize {
        2
    }
    fn noise_dim(&self) -> usize {
        2
    }
    fn delay(&self) -> f64 {
        1.0
    }
    fn drift_into(&self, x: &[f64], _y: &[f64], out: &mut [f64]) {
        let (x1, x2) = (x[0], x[1]);
        out[0] = 1.0 - x1 - 3.0 * x1 * x1 * x1;
        out[1] = -(x2 + 3.0 * x2 * x2 * x2);
    }
    fn diffusion_into(&self, _x: &[f64], y: &[f64], out: &mut [f64]) {
        out[0] = y[1] * y[1];
        out[1] = 0.0;
        out[2] = 0.0;
        out[3] = y[0] * y[0];
    }
    fn certificates(&self) -> Option<Certificates> {
        Some(Certificates {
            dissipativity: DissipativityCert {
                alpha: 4.0,
                a1: 0.5,
                a2: 3.0,
                a3: 1.0,
            },
            contraction: ContractionCert {
                b1: 2.0,
                b2: 0.0,
                b3: 3.0,
                b4: 1.0,
                v: Arc::new(quartic_difference_lyapunov),
            },
        })
    }
    fn growth_function(&self) -> Option<Arc<dyn GrowthFunction>> {
        Some(Arc::new(PowerLaw::new(16.0, 4.0).expect("valid power law")))
    }
}

/// `dx = -x dt` in one dimension with unit delay and no noise.
pub fn linear_decay_model() -> FnModel {
    FnModel::new(
        "linear-decay",
        1,
        1,
        1.0,
        |x, _y, out| out[0] = -x[0],
        |_x, _y, out| out[0] = 0.0,
    )
    .expect("valid linear decay model")
    .with_certificates(Certificates {
        dissipativity: DissipativityCert {
            alpha: 2.0,
            a1: 0.0,
            a2: 2.0,
            a3: 0.0,
        },
        contraction: ContractionCert::plain(2.0, 0.0).expect("valid contraction"),
    })
    .with_growth(Arc::new(PowerLaw::new(1.0, 1.0).expect("valid power law")))
}

/// `f == 0`, `g == 0` in two dimensions. Satisfies no dissipativity claim, so
/// simulating it needs the admissibility override.
pub fn frozen_model() -> FnModel {
    FnModel::new(
        "frozen",
        2,
        2,
        1.0,
        |_x, _y, out| out.fill(0.0),
        |_x, _y, out| out.fill(0.0),
    )
    .expect("valid frozen model")
    .with_growth(Arc::new(PowerLaw::new(1.0, 1.0).expect("valid power law")))
}

pub type ModelConstructor = fn() -> Arc<dyn SddeModel>;

/// Name -> model constructor.
#[derive(Clone)]
pub struct ModelRegistry {
    entries: BTreeMap<String, ModelConstructor>,
}

impl fmt::Debug for ModelRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

impl Default for ModelRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl ModelRegistry {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn with_builtins() -> Self {
        let mut reg = Self::empty();
        reg.register(CubicDelayedNoiseModel::NAME, || Arc::new(CubicDelayedNoiseModel));
        reg.register("linear-decay", || Arc::new(linear_decay_model()));
        reg.register("frozen", || Arc::new(frozen_model()));
        reg
    }

    /// Registers or replaces `name`.
    pub fn register(&mut self, name: &str, ctor: ModelConstructor) {
        self.entries.insert(name.to_string(), ctor);
    }

    pub fn get(&self, name: &str) -> Result<Arc<dyn SddeModel>> {
        self.entries.get(name).map(|c| c()).ok_or_else(|| {
            Error::Config(format!(
                "unknown model '{name}' (known: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

/// Initial segment `xi` on `[-tau, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialData {
    /// `xi(theta) = c`.
    Constant(Vec<f64>),
    /// `xi(theta) = slope * theta + intercept`, per coordinate.
    Affine {
        slope: Vec<f64>,
        intercept: Vec<f64>,
    },
    /// `xi(theta) = B(-theta)` for a `d`-dimensional Brownian motion `B`
    /// drawn from the trajectory's initial-data substream.
    BrownianPath,
    /// Explicit values at `theta = -tau + j dt`, `j = 0..=N`.
    GridSamples(Vec<Vec<f64>>),
}

impl InitialData {
    /// Untruncated `xi(t_k)` for `k = -N..=0`, flattened (`(N+1) * d`).
    pub fn nodes(&self, d: usize, grid: &Grid, seed: &SeedSpec) -> Result<Vec<f64>> {
        let n = grid.delay_steps();
        let mut out = Vec::with_capacity((n + 1) * d);
        match self {
            InitialData::Constant(c) => {
                if c.len() != d {
                    return Err(Error::dim("constant initial value", d, c.len()));
                }
                for _ in 0..=n {
                    out.extend_from_slice(c);
                }
            }
            InitialData::Affine { slope, intercept } => {
                if slope.len() != d {
                    return Err(Error::dim("affine initial slope", d, slope.len()));
                }
                if intercept.len() != d {
                    return Err(Error::dim("affine initial intercept", d, intercept.len()));
                }
                for j in 0..=n {
                    let theta = grid.time(j as i64 - n as i64);
                    out.extend(slope.iter().zip(intercept).map(|(a, b)| a * theta + b));
                }
            }
            InitialData::BrownianPath => {
                for v in brownian_initial_path(seed, d, grid) {
                    out.extend_from_slice(&v);
                }
            }
            InitialData::GridSamples(samples) => {
                if samples.len() != n + 1 {
                    return Err(Error::dim("initial grid samples", n + 1, samples.len()));
                }
                for s in samples {
                    if s.len() != d {
                        return Err(Error::dim("initial grid sample", d, s.len()));
                    }
                    out.extend_from_slice(s);
                }
            }
        }
        Ok(out)
    }

    pub fn is_random(&self) -> bool {
        matches!(self, InitialData::BrownianPath)
    }
}

fn parse_vec(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<f64>()
                .map_err(|e| Error::Config(format!("bad number '{t}': {e}")))
        })
        .collect()
}

/// Parses `constant:c1,c2,..`, `affine:s1,s2,..:b1,b2,..` or `brownian`.
impl FromStr for InitialData {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.trim().split(':');
        let kind = parts.next().unwrap_or_default();
        let rest: Vec<&str> = parts.collect();
        match (kind, rest.as_slice()) {
            ("constant", [c]) => Ok(InitialData::Constant(parse_vec(c)?)),
            ("affine", [a, b]) => Ok(InitialData::Affine {
                slope: parse_vec(a)?,
                intercept: parse_vec(b)?,
            }),
            ("brownian", []) => Ok(InitialData::BrownianPath),
            _ => Err(Error::Config(format!(
                "cannot parse initial data '{s}' (expected constant:c,.. | affine:s,..:b,.. | brownian)"
            ))),
        }
    }
}

impl fmt::Display for InitialData {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        match self {
            InitialData::Constant(c) => write!(f, "constant:{}", join(c)),
            InitialData::Affine { slope, intercept } => {
                write!(f, "affine:{}:{}", join(slope), join(intercept))
            }
            InitialData::BrownianPath => write!(f, "brownian"),
            InitialData::GridSamples(s) => write!(f, "grid-samples[{}]", s.len()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn expanding_model() -> FnModel {
        FnModel::new(
            "expanding",
            2,
            1,
            1.0,
            |x, _y, out| out.copy_from_slice(x),
            |_x, _y, out| out.fill(0.0),
        )
        .unwrap()
    }

    #[test]
    fn example_drift_values() {
        let m = CubicDelayedNoiseModel;
        assert_eq!(evaluate_drift(&m, &[0.0, 0.0], &[0.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(evaluate_drift(&m, &[1.0, 1.0], &[7.0, -2.0]).unwrap(), vec![-3.0, -4.0]);
        let z = frozen_model();
        assert_eq!(evaluate_drift(&z, &[3.0, 1.0], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn example_diffusion_values() {
        let m = CubicDelayedNoiseModel;
        let g = evaluate_diffusion(&m, &[1.0, 2.0], &[0.0, 0.0]).unwrap();
        assert_eq!(g.data, vec![0.0; 4]);
        let g = evaluate_diffusion(&m, &[0.5, -1.0], &[2.0, 3.0]).unwrap();
        assert_eq!((g.get(0, 0), g.get(0, 1), g.get(1, 0), g.get(1, 1)), (9.0, 0.0, 0.0, 4.0));

        let column = FnModel::new(
            "unit-column",
            2,
            1,
            1.0,
            |_x, _y, out| out.fill(0.0),
            |_x, _y, out| out.copy_from_slice(&[1.0, 0.0]),
        )
        .unwrap();
        let a = evaluate_diffusion(&column, &[1.0, 1.0], &[2.0, 2.0]).unwrap();
        let b = evaluate_diffusion(&column, &[-4.0, 0.0], &[0.0, 9.0]).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.data, vec![1.0, 0.0]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let m = CubicDelayedNoiseModel;
        assert!(matches!(
            evaluate_drift(&m, &[0.0], &[0.0, 0.0]),
            Err(Error::Dimension { expected: 2, got: 1, .. })
        ));
        assert!(evaluate_diffusion(&m, &[0.0, 0.0], &[0.0, 0.0, 1.0]).is_err());
    }

    #[test]
    fn evaluation_is_bitwise_repeatable() {
        let m = CubicDelayedNoiseModel;
        let mut s = UniformBox::new(5.0, 9);
        let mut p = [0.0; 4];
        for _ in 0..1000 {
            s.fill(&mut p);
            let a = evaluate_drift(&m, &p[..2], &p[2..]).unwrap();
            let b = evaluate_drift(&m, &p[..2], &p[2..]).unwrap();
            assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
            let a = evaluate_diffusion(&m, &p[..2], &p[2..]).unwrap();
            let b = evaluate_diffusion(&m, &p[..2], &p[2..]).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn example_dissipativity_holds_at_sampled_supremum() {
        let m = CubicDelayedNoiseModel;
        let a1 = sampled_dissipativity_constant(&m, 4.0, 3.0, 1.0, &mut UniformBox::new(5.0, 1), 20_000);
        // analytic supremum of 2 x1 - 2|x|^2 is 1/2
        assert!(a1 <= 0.5 + 1e-12, "a1 = {a1}");
        let cert = DissipativityCert::new(4.0, a1, 3.0, 1.0).unwrap();
        let r = check_dissipativity(&m, &cert, &mut UniformBox::new(5.0, 1), 20_000).unwrap();
        assert!(r.is_consistent(), "{r:?}");
        assert_eq!(r.checked, 20_000);
    }

    #[test]
    fn expanding_drift_violates_dissipativity() {
        let m = expanding_model();
        let cert = DissipativityCert::new(2.0, 0.0, 1.0, 0.0).unwrap();
        let r = check_dissipativity(&m, &cert, &mut UniformBox::default(), 500).unwrap();
        assert_eq!(r.violation_count, 500);
        assert!(r.worst_margin < 0.0);
        let margin = dissipativity_margin(&m, &cert, &[1.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(margin, -3.0);
    }

    #[test]
    fn frozen_dynamics_violate_except_at_origin() {
        let m = frozen_model();
        let cert = DissipativityCert::new(2.0, 0.0, 1.0, 0.0).unwrap();
        assert_eq!(dissipativity_margin(&m, &cert, &[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        let r = check_dissipativity(&m, &cert, &mut UniformBox::default(), 200).unwrap();
        assert_eq!(r.violation_count, 200);
        assert!(r.violations.len() <= ViolationReport::MAX_LISTED);
    }

    #[test]
    fn worst_margin_is_antitone_in_a2() {
        let m = CubicDelayedNoiseModel;
        let base = DissipativityCert::new(4.0, 0.5, 3.0, 1.0).unwrap();
        let bumped = DissipativityCert { a2: 4.0, ..base };
        let r0 = check_dissipativity(&m, &base, &mut UniformBox::new(5.0, 3), 5000).unwrap();
        let r1 = check_dissipativity(&m, &bumped, &mut UniformBox::new(5.0, 3), 5000).unwrap();
        assert!(r1.worst_margin <= r0.worst_margin);
    }

    #[test]
    fn example_contraction_holds_on_box() {
        let m = CubicDelayedNoiseModel;
        let cert = m.certificates().unwrap().contraction;
        let r = check_contraction(&m, &cert, &mut UniformBox::new(5.0, 2), 20_000).unwrap();
        assert!(r.is_consistent(), "{r:?}");
    }

    #[test]
    fn coincident_points_never_violate() {
        let m = CubicDelayedNoiseModel;
        let cert = m.certificates().unwrap().contraction;
        let mut s = UniformBox::new(5.0, 4);
        let mut p = [0.0; 4];
        for _ in 0..100 {
            s.fill(&mut p);
            let margin = contraction_margin(&m, &cert, &p[..2], &p[..2], &p[2..], &p[2..]).unwrap();
            assert_eq!(margin, 0.0);
        }
    }

    #[test]
    fn expanding_drift_violates_contraction() {
        let m = expanding_model();
        let cert = ContractionCert::plain(1.0, 0.0).unwrap();
        let margin =
            contraction_margin(&m, &cert, &[1.0, 0.0], &[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
        assert_eq!(margin, -3.0);
        let r = check_contraction(&m, &cert, &mut UniformBox::default(), 100).unwrap();
        assert_eq!(r.violation_count, 100);
    }

    #[test]
    fn nonvanishing_companion_is_rejected() {
        let m = CubicDelayedNoiseModel;
        let cert = ContractionCert::new(2.0, 0.0, 3.0, 1.0, Arc::new(|_, _| 1.0)).unwrap();
        assert!(matches!(
            check_contraction(&m, &cert, &mut UniformBox::default(), 10),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn certificate_invariants() {
        assert!(DissipativityCert::new(1.5, 0.0, 3.0, 1.0).is_err());
        assert!(DissipativityCert::new(2.0, 0.0, 1.0, 1.0).is_err());
        assert!(ContractionCert::plain(0.0, 0.0).is_err());
        assert!(ContractionCert::new(2.0, 0.0, 1.0, 1.0, Arc::new(|_, _| 0.0)).is_err());
    }

    #[test]
    fn registry_lookup() {
        let reg = ModelRegistry::with_builtins();
        let m = reg.get("paper-example-5.1").unwrap();
        assert_eq!((m.state_dim(), m.noise_dim(), m.delay()), (2, 2, 1.0));
        assert!(reg.get("nope").is_err());
        assert!(reg.names().contains(&"frozen"));
    }

    #[test]
    fn initial_data_parsing() {
        let c: InitialData = "constant:-3,4".parse().unwrap();
        assert_eq!(c, InitialData::Constant(vec![-3.0, 4.0]));
        let a: InitialData = "affine:2,1:0,1".parse().unwrap();
        assert_eq!(
            a,
            InitialData::Affine {
                slope: vec![2.0, 1.0],
                intercept: vec![0.0, 1.0]
            }
        );
        assert_eq!("brownian".parse::<InitialData>().unwrap(), InitialData::BrownianPath);
        assert!("affine:1,2".parse::<InitialData>().is_err());
        assert_eq!(a.to_string().parse::<InitialData>().unwrap(), a);
    }

    #[test]
    fn grid_samples_length_is_checked() {
        let grid = Grid::new(1.0, 4, 10).unwrap();
        let seed = SeedSpec::initial_data(0, 0);
        let bad = InitialData::GridSamples(vec![vec![0.0, 0.0]; 4]);
        assert!(bad.nodes(2, &grid, &seed).is_err());
        let good = InitialData::GridSamples(vec![vec![0.0, 1.0]; 5]);
        assert_eq!(good.nodes(2, &grid, &seed).unwrap().len(), 10);
    }

    #[test]
    fn affine_initial_matches_theta() {
        let grid = Grid::new(1.0, 4, 10).unwrap();
        let xi = InitialData::Affine {
            slope: vec![2.0, 1.0],
            intercept: vec![0.0, 1.0],
        };
        let nodes = xi.nodes(2, &grid, &SeedSpec::initial_data(0, 0)).unwrap();
        assert_eq!(&nodes[..2], &[-2.0, 0.0]);
        assert_eq!(&nodes[8..], &[0.0, 1.0]);
        assert_eq!(&nodes[4..6], &[-1.0, 0.5]);
    }
}
