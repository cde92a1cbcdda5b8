//! Test functionals on segment space.
//!
//! The bounded-Lipschitz class `Xi` holds functionals that are 1-Lipschitz
//! for the sup norm and bounded by 1. Every functional declares its own
//! Lipschitz and sup bounds; [`spot_check_bounds`] tries to falsify them.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scheme::{segment_sup_distance, segment_sup_norm, Segment, SegmentRef};

pub trait TestFunctional: Send + Sync + fmt::Debug {
    /// Stable identifier used in CSV output.
    fn name(&self) -> String;
    fn eval(&self, seg: SegmentRef<'_>) -> f64;
    fn lipschitz_bound(&self) -> f64;
    fn sup_bound(&self) -> f64;

    fn in_xi(&self) -> bool {
        self.lipschitz_bound() <= 1.0 && self.sup_bound() <= 1.0
    }
}

/// `cos(||X||)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct CosNorm;

impl TestFunctional for CosNorm {
    fn name(&self) -> String {
        "cos-norm".into()
    }
    fn eval(&self, seg: SegmentRef<'_>) -> f64 {
        segment_sup_norm(seg).cos()
    }
    fn lipschitz_bound(&self) -> f64 {
        1.0
    }
    fn sup_bound(&self) -> f64 {
        1.0
    }
}

/// `level ∧ ||X||`. With `level = 2` this is a reporting functional only
/// (sup bound 2, outside `Xi`).
#[derive(Debug, Clone, Copy)]
pub struct ClipNorm {
    pub level: f64,
}

impl TestFunctional for ClipNorm {
    fn name(&self) -> String {
        format!("clip-norm:{}", self.level)
    }
    fn eval(&self, seg: SegmentRef<'_>) -> f64 {
        segment_sup_norm(seg).min(self.level)
    }
    fn lipschitz_bound(&self) -> f64 {
        1.0
    }
    fn sup_bound(&self) -> f64 {
        self.level
    }
}

/// `level ∧ ||X - reference||`.
#[derive(Debug, Clone)]
pub struct ClipDistance {
    pub level: f64,
    pub reference: Segment,
    pub tag: String,
}

impl TestFunctional for ClipDistance {
    fn name(&self) -> String {
        format!("clip-dist:{}@{}", self.level, self.tag)
    }
    fn eval(&self, seg: SegmentRef<'_>) -> f64 {
        segment_sup_distance(seg, self.reference.as_ref()).min(self.level)
    }
    fn lipschitz_bound(&self) -> f64 {
        1.0
    }
    fn sup_bound(&self) -> f64 {
        self.level
    }
}

/// Coordinate `X_i(theta)` clipped to `[-1, 1]`.
#[derive(Debug, Clone, Copy)]
pub struct ClippedCoordinate {
    pub theta: f64,
    pub coord: usize,
}

impl TestFunctional for ClippedCoordinate {
    fn name(&self) -> String {
        format!("coord:{}@{}", self.coord + 1, self.theta)
    }
    fn eval(&self, seg: SegmentRef<'_>) -> f64 {
        let theta = self.theta.max(seg.theta_min());
        let x = seg.eval(theta).expect("theta clamped into the segment window");
        x[self.coord].clamp(-1.0, 1.0)
    }
    fn lipschitz_bound(&self) -> f64 {
        1.0
    }
    fn sup_bound(&self) -> f64 {
        1.0
    }
}

/// `factor * inner`.
#[derive(Debug)]
pub struct Scaled {
    pub factor: f64,
    pub inner: Box<dyn TestFunctional>,
}

impl TestFunctional for Scaled {
    fn name(&self) -> String {
        format!("{}*{}", self.factor, self.inner.name())
    }
    fn eval(&self, seg: SegmentRef<'_>) -> f64 {
        self.factor * self.inner.eval(seg)
    }
    fn lipschitz_bound(&self) -> f64 {
        self.factor.abs() * self.inner.lipschitz_bound()
    }
    fn sup_bound(&self) -> f64 {
        self.factor.abs() * self.inner.sup_bound()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Constant(pub f64);

impl TestFunctional for Constant {
    fn name(&self) -> String {
        format!("const:{}", self.0)
    }
    fn eval(&self, _seg: SegmentRef<'_>) -> f64 {
        self.0
    }
    fn lipschitz_bound(&self) -> f64 {
        0.0
    }
    fn sup_bound(&self) -> f64 {
        self.0.abs()
    }
}

/// Builds a functional from its name: `cos-norm`, `clip-norm:<level>`,
/// `coord:<i>@<theta>` (1-based coordinate), `const:<c>`, or
/// `<factor>*<name>`.
pub fn parse_functional(name: &str) -> Result<Box<dyn TestFunctional>> {
    let bad = |why: &str| Error::Config(format!("cannot parse functional '{name}': {why}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad("bad number"));
    let name = name.trim();
    if let Some((factor, inner)) = name.split_once('*') {
        return Ok(Box::new(Scaled {
            factor: num(factor)?,
            inner: parse_functional(inner)?,
        }));
    }
    if name == "cos-norm" {
        return Ok(Box::new(CosNorm));
    }
    if let Some(level) = name.strip_prefix("clip-norm:") {
        let level = num(level)?;
        if !(level > 0.0) {
            return Err(bad("clip level must be positive"));
        }
        return Ok(Box::new(ClipNorm { level }));
    }
    if let Some(rest) = name.strip_prefix("coord:") {
        let (i, theta) = rest.split_once('@').ok_or_else(|| bad("expected coord:<i>@<theta>"))?;
        let i: usize = i.trim().parse().map_err(|_| bad("bad coordinate"))?;
        if i == 0 {
            return Err(bad("coordinates are 1-based"));
        }
        let theta = num(theta)?;
        if theta > 0.0 {
            return Err(bad("theta must be <= 0"));
        }
        return Ok(Box::new(ClippedCoordinate { theta, coord: i - 1 }));
    }
    if let Some(c) = name.strip_prefix("const:") {
        return Ok(Box::new(Constant(num(c)?)));
    }
    Err(bad("unknown kind"))
}

/// Worst observed ratios against the declared bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub pairs: usize,
    /// `max |Psi(X1) - Psi(X2)| / ||X1 - X2||`.
    pub max_lipschitz_ratio: f64,
    pub max_abs: f64,
    pub ok: bool,
}

/// Random segments with `n_nodes` nodes in `[-scale, scale]^dim`. Half of
/// the pairs are small perturbations of each other, to probe the local
/// Lipschitz constant.
pub fn spot_check_bounds(
    psi: &dyn TestFunctional,
    n_pairs: usize,
    n_nodes: usize,
    dim: usize,
    scale: f64,
    seed: u64,
) -> BoundCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dt = 1.0 / (n_nodes - 1) as f64;
    let mut check = BoundCheck {
        pairs: n_pairs,
        max_lipschitz_ratio: 0.0,
        max_abs: 0.0,
        ok: true,
    };
    for p in 0..n_pairs {
        let s = scale * rng.random_range(0.01..1.0);
        let a: Vec<f64> = (0..n_nodes * dim).map(|_| rng.random_range(-s..=s)).collect();
        let b: Vec<f64> = if p % 2 == 0 {
            (0..n_nodes * dim).map(|_| rng.random_range(-s..=s)).collect()
        } else {
            let eps = s * 1e-3;
            a.iter().map(|v| v + rng.random_range(-eps..=eps)).collect()
        };
        let (a, b) = (Segment { nodes: a, dim, dt }, Segment { nodes: b, dim, dt });
        let (fa, fb) = (psi.eval(a.as_ref()), psi.eval(b.as_ref()));
        let d = segment_sup_distance(a.as_ref(), b.as_ref());
        if d > 0.0 {
            check.max_lipschitz_ratio = check.max_lipschitz_ratio.max((fa - fb).abs() / d);
        }
        check.max_abs = check.max_abs.max(fa.abs()).max(fb.abs());
    }
    let tol = 1e-9;
    check.ok = check.max_lipschitz_ratio <= psi.lipschitz_bound() + tol
        && check.max_abs <= psi.sup_bound() + tol;
    check
}
