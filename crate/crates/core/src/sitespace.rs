//! Single-site value spaces with a normalized base measure.
//!
//! Every space carries a discrete rule (labels or quadrature nodes with weights) that all
//! exact computations integrate against.

use std::fmt;
use std::num::NonZeroUsize;
use std::sync::Arc;

use gauss_quad::{GaussHermite, GaussLegendre};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LEGENDRE_ORDER: usize = 16;
pub const DEFAULT_HERMITE_ORDER: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SiteKind {
    FiniteSpin,
    UnitInterval,
    RealLine,
}

/// Serializable description of a site space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SiteDescriptor {
    FiniteSpin {
        values: Vec<f64>,
        /// Defaults to uniform.
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    UnitInterval {
        #[serde(default = "default_legendre")]
        order: usize,
        #[serde(default)]
        step: Option<f64>,
    },
    RealLine {
        #[serde(default = "default_hermite")]
        order: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default)]
        step: Option<f64>,
    },
}

fn default_legendre() -> usize {
    DEFAULT_LEGENDRE_ORDER
}
fn default_hermite() -> usize {
    DEFAULT_HERMITE_ORDER
}
fn default_sigma() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct SiteSpace {
    kind: SiteKind,
    points: Vec<f64>,
    weights: Vec<f64>,
    sigma: f64,
    step: f64,
}

/// Gauss–Legendre rule mapped to `[0, 1]`, nodes ascending, weights summing to one.
pub fn unit_legendre(order: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = NonZeroUsize::new(order)
        .ok_or_else(|| Error::InvalidSiteSpace("quadrature order must be positive".into()))?;
    let mut rule: Vec<(f64, f64)> = GaussLegendre::new(n)
        .iter()
        .map(|(x, w)| ((x + 1.0) / 2.0, w / 2.0))
        .collect();
    rule.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(rule.into_iter().unzip())
}

/// `∫_a^b f` by Gauss–Legendre of the given order.
pub fn integrate_interval(f: impl Fn(f64) -> f64, a: f64, b: f64, order: usize) -> Result<f64> {
    let (x, w) = unit_legendre(order)?;
    Ok((b - a) * x.iter().zip(&w).map(|(&x, &w)| w * f(a + (b - a) * x)).sum::<f64>())
}

impl SiteSpace {
    pub fn finite_spin(values: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidSiteSpace("no spin values".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidSiteSpace("spin values must be finite".into()));
        }
        for (i, a) in values.iter().enumerate() {
            if values[..i].contains(a) {
                return Err(Error::InvalidSiteSpace(format!("duplicate spin value {a}")));
            }
        }
        let raw = weights.unwrap_or_else(|| vec![1.0; values.len()]);
        if raw.len() != values.len() {
            return Err(Error::InvalidSiteSpace(format!(
                "{} weights for {} values",
                raw.len(),
                values.len()
            )));
        }
        if raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidSiteSpace("weights must be finite and non-negative".into()));
        }
        let total: f64 = raw.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidSiteSpace("weights are not normalizable".into()));
        }
        Ok(SiteSpace {
            kind: SiteKind::FiniteSpin,
            points: values,
            weights: raw.iter().map(|w| w / total).collect(),
            sigma: 0.0,
            step: 0.0,
        })
    }

    /// Uniform `{-1, +1}`.
    pub fn ising() -> Self {
        SiteSpace::finite_spin(vec![-1.0, 1.0], None).expect("valid")
    }

    pub fn unit_interval(order: usize) -> Result<Self> {
        let (points, weights) = unit_legendre(order)?;
        Ok(SiteSpace { kind: SiteKind::UnitInterval, points, weights, sigma: 0.0, step: 0.25 })
    }

    /// Gaussian base measure `N(0, sigma^2)` with Gauss–Hermite nodes.
    pub fn real_line(order: usize, sigma: f64) -> Result<Self> {
        let n = NonZeroUsize::new(order)
            .ok_or_else(|| Error::InvalidSiteSpace("quadrature order must be positive".into()))?;
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidSiteSpace(format!("sigma must be positive, got {sigma}")));
        }
        let norm = std::f64::consts::PI.sqrt();
        let scale = std::f64::consts::SQRT_2 * sigma;
        let mut rule: Vec<(f64, f64)> = GaussHermite::new(n).iter().map(|(x, w)| (x * scale, w / norm)).collect();
        rule.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (points, weights) = rule.into_iter().unzip();
        Ok(SiteSpace { kind: SiteKind::RealLine, points, weights, sigma, step: sigma })
    }

    pub fn with_step(mut self, step: f64) -> Result<Self> {
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::InvalidSiteSpace(format!("proposal step must be positive, got {step}")));
        }
        self.step = step;
        Ok(self)
    }

    pub fn kind(&self) -> SiteKind {
        self.kind
    }

    /// Labels or quadrature nodes.
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn size(&self) -> usize {
        self.points.len()
    }

    pub fn is_discrete(&self) -> bool {
        self.kind == SiteKind::FiniteSpin
    }

    /// Standard deviation of the gaussian base measure; zero for other spaces.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Metropolis step width for continuous spaces.
    pub fn proposal_step(&self) -> f64 {
        self.step
    }

    /// Log density of the base measure against Lebesgue measure, up to a constant.
    /// Only meaningful on continuous spaces.
    pub fn log_base_density(&self, x: f64) -> f64 {
        match self.kind {
            SiteKind::FiniteSpin => 0.0,
            SiteKind::UnitInterval => {
                if (0.0..=1.0).contains(&x) {
                    0.0
                } else {
                    f64::NEG_INFINITY
                }
            }
            SiteKind::RealLine => -0.5 * x * x / (self.sigma * self.sigma),
        }
    }

    /// Position of a finite-spin label.
    pub fn label_index(&self, x: f64) -> Option<usize> {
        self.points.iter().position(|&p| p == x)
    }

    /// Whether averages of values stay in the value space.
    pub fn closed_under_averaging(&self) -> bool {
        self.kind != SiteKind::FiniteSpin
    }

    /// Values of an observable on the points, checked for finiteness.
    pub fn tabulate(&self, a: &SiteObservable) -> Result<Vec<f64>> {
        self.points
            .iter()
            .map(|&x| {
                let v = a.eval(x);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(Error::NonFinite(format!("observable {} at {x}", a.name())))
                }
            })
            .collect()
    }
}

pub fn make_site_space(desc: &SiteDescriptor) -> Result<SiteSpace> {
    match desc {
        SiteDescriptor::FiniteSpin { values, weights } => SiteSpace::finite_spin(values.clone(), weights.clone()),
        SiteDescriptor::UnitInterval { order, step } => {
            let s = SiteSpace::unit_interval(*order)?;
            match step {
                Some(st) => s.with_step(*st),
                None => Ok(s),
            }
        }
        SiteDescriptor::RealLine { order, sigma, step } => {
            let s = SiteSpace::real_line(*order, *sigma)?;
            match step {
                Some(st) => s.with_step(*st),
                None => Ok(s),
            }
        }
    }
}

type SiteFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;
type PairFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// A real function of one site value.
#[derive(Clone)]
pub struct SiteObservable {
    name: String,
    f: SiteFn,
    projection: bool,
}

impl fmt::Debug for SiteObservable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SiteObservable")
            .field("name", &self.name)
            .field("projection", &self.projection)
            .finish()
    }
}

impl SiteObservable {
    pub fn new(name: impl Into<String>, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        SiteObservable { name: name.into(), f: Arc::new(f), projection: false }
    }

    pub fn one() -> Self {
        SiteObservable::new("1", |_| 1.0)
    }

    pub fn identity() -> Self {
        SiteObservable::new("u", |x| x)
    }

    pub fn power(p: i32) -> Self {
        SiteObservable::new(format!("u^{p}"), move |x| x.powi(p))
    }

    /// Values given per finite-spin label; other arguments evaluate to NaN.
    pub fn tabulated(name: impl Into<String>, space: &SiteSpace, values: Vec<f64>) -> Result<Self> {
        if values.len() != space.size() {
            return Err(Error::InvalidSiteSpace(format!(
                "{} values for {} labels",
                values.len(),
                space.size()
            )));
        }
        let labels = space.points().to_vec();
        let projection = values.iter().all(|&v| v == 0.0 || v == 1.0);
        let mut obs = SiteObservable::new(name, move |x| {
            labels.iter().position(|&p| p == x).map_or(f64::NAN, |i| values[i])
        });
        obs.projection = projection;
        Ok(obs)
    }

    /// A 0/1-valued observable; checked at use sites via [`SiteObservable::is_projection_on`].
    pub fn projection(name: impl Into<String>, f: impl Fn(f64) -> bool + Send + Sync + 'static) -> Self {
        let mut obs = SiteObservable::new(name, move |x| if f(x) { 1.0 } else { 0.0 });
        obs.projection = true;
        obs
    }

    /// Indicator of `[lo, hi]`.
    pub fn indicator(lo: f64, hi: f64) -> Self {
        SiteObservable::projection(format!("1[{lo},{hi}]"), move |x| (lo..=hi).contains(&x))
    }

    /// `1 - P` for a projection `P`.
    pub fn complement(&self) -> Self {
        let f = self.f.clone();
        let mut obs = SiteObservable::new(format!("1-{}", self.name), move |x| 1.0 - f(x));
        obs.projection = self.projection;
        obs
    }

    pub fn product(&self, other: &SiteObservable) -> Self {
        let (f, g) = (self.f.clone(), other.f.clone());
        let mut obs = SiteObservable::new(format!("{}*{}", self.name, other.name), move |x| f(x) * g(x));
        obs.projection = self.projection && other.projection;
        obs
    }

    pub fn scaled(&self, c: f64) -> Self {
        let f = self.f.clone();
        SiteObservable::new(format!("{c}*{}", self.name), move |x| c * f(x))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_projection(&self) -> bool {
        self.projection
    }

    pub fn is_projection_on(&self, space: &SiteSpace) -> bool {
        self.projection && space.points().iter().all(|&x| matches!(self.eval(x), v if v == 0.0 || v == 1.0))
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        (self.f)(x)
    }

    /// `sup |a|` over the space's points.
    pub fn sup_norm(&self, space: &SiteSpace) -> f64 {
        space.points().iter().map(|&x| self.eval(x).abs()).fold(0.0, f64::max)
    }
}

/// A real function of two site values, used for face couplings.
#[derive(Clone)]
pub struct PairWeight {
    name: String,
    f: PairFn,
}

impl fmt::Debug for PairWeight {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PairWeight").field("name", &self.name).finish()
    }
}

impl PairWeight {
    pub fn new(name: impl Into<String>, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        PairWeight { name: name.into(), f: Arc::new(f) }
    }

    pub fn one() -> Self {
        PairWeight::new("1", |_, _| 1.0)
    }

    /// `exp(K x y)`.
    pub fn ising(k: f64) -> Self {
        PairWeight::new(format!("ising(K={k})"), move |x, y| (k * x * y).exp())
    }

    /// `h(x) h(y)`.
    pub fn rank_one(h: &SiteObservable) -> Self {
        let f = h.f.clone();
        PairWeight::new(format!("{}⊗{}", h.name, h.name), move |x, y| f(x) * f(y))
    }

    /// Matrix indexed by finite-spin labels; other arguments evaluate to NaN.
    pub fn tabulated(name: impl Into<String>, space: &SiteSpace, table: Vec<Vec<f64>>) -> Result<Self> {
        let m = space.size();
        if table.len() != m || table.iter().any(|r| r.len() != m) {
            return Err(Error::InvalidSiteSpace(format!("pair table must be {m}x{m}")));
        }
        let labels = space.points().to_vec();
        Ok(PairWeight::new(name, move |x, y| {
            match (labels.iter().position(|&p| p == x), labels.iter().position(|&p| p == y)) {
                (Some(i), Some(j)) => table[i][j],
                _ => f64::NAN,
            }
        }))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    #[inline]
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        (self.f)(x, y)
    }

    /// `m x m` table on the points of a space.
    pub fn matrix(&self, space: &SiteSpace) -> Result<Vec<Vec<f64>>> {
        let p = space.points();
        p.iter()
            .map(|&x| {
                p.iter()
                    .map(|&y| {
                        let v = self.eval(x, y);
                        if v.is_finite() {
                            Ok(v)
                        } else {
                            Err(Error::NonFinite(format!("pair weight {} at ({x}, {y})", self.name)))
                        }
                    })
                    .collect()
            })
            .collect()
    }

    pub fn is_symmetric_on(&self, space: &SiteSpace, tol: f64) -> bool {
        let p = space.points();
        p.iter().all(|&x| p.iter().all(|&y| (self.eval(x, y) - self.eval(y, x)).abs() <= tol))
    }
}

/// `⟨Ω, a Ω⟩`.
pub fn site_expectation(space: &SiteSpace, a: &SiteObservable) -> Result<f64> {
    let vals = space.tabulate(a)?;
    Ok(vals.iter().zip(space.weights()).map(|(v, w)| v * w).sum())
}

/// `⟨Ω⊗Ω, w (a⊗b) Ω⊗Ω⟩`.
pub fn site_pair_expectation(space: &SiteSpace, w: &PairWeight, a: &SiteObservable, b: &SiteObservable) -> Result<f64> {
    let wm = w.matrix(space)?;
    if let Some((i, j)) = (0..space.size())
        .flat_map(|i| (0..space.size()).map(move |j| (i, j)))
        .find(|&(i, j)| wm[i][j] < 0.0)
    {
        return Err(Error::Positivity(format!(
            "pair weight {} is {} at ({}, {})",
            w.name(),
            wm[i][j],
            space.points()[i],
            space.points()[j]
        )));
    }
    let av = space.tabulate(a)?;
    let bv = space.tabulate(b)?;
    let q = space.weights();
    let mut total = 0.0;
    for i in 0..space.size() {
        let mut row = 0.0;
        for j in 0..space.size() {
            row += q[j] * wm[i][j] * bv[j];
        }
        total += q[i] * av[i] * row;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn constructors() {
        let s = SiteSpace::ising();
        assert_eq!(s.weights(), &[0.5, 0.5]);
        let u = SiteSpace::unit_interval(16).unwrap();
        assert_eq!(u.size(), 16);
        assert!(u.points().iter().all(|&x| x > 0.0 && x < 1.0));
        assert_relative_eq!(u.weights().iter().sum::<f64>(), 1.0, epsilon = 1e-14);
        let r = SiteSpace::real_line(32, 1.0).unwrap();
        let m2 = site_expectation(&r, &SiteObservable::power(2)).unwrap();
        assert!((m2 - 1.0).abs() < 1e-12);
        assert!(SiteSpace::unit_interval(0).is_err());
        assert!(SiteSpace::finite_spin(vec![1.0, 1.0], None).is_err());
        assert!(SiteSpace::finite_spin(vec![1.0, 2.0], Some(vec![0.0, 0.0])).is_err());
    }

    #[test]
    fn descriptors() {
        let d = SiteDescriptor::UnitInterval { order: 8, step: Some(0.1) };
        let s = make_site_space(&d).unwrap();
        assert_eq!((s.size(), s.proposal_step()), (8, 0.1));
        let d = SiteDescriptor::RealLine { order: 0, sigma: 1.0, step: None };
        assert!(make_site_space(&d).is_err());
    }

    #[test]
    fn expectations() {
        let s = SiteSpace::ising();
        assert_eq!(site_expectation(&s, &SiteObservable::one()).unwrap(), 1.0);
        assert_eq!(site_expectation(&s, &SiteObservable::identity()).unwrap(), 0.0);
        let u = SiteSpace::unit_interval(16).unwrap();
        let e = site_expectation(&u, &SiteObservable::new("exp", f64::exp)).unwrap();
        assert!((e - (1f64.exp() - 1.0)).abs() < 1e-10);
        let bad = SiteObservable::new("inf", |_| f64::INFINITY);
        assert!(site_expectation(&s, &bad).is_err());
    }

    #[test]
    fn pair_expectations() {
        let s = SiteSpace::ising();
        let one = SiteObservable::one();
        assert_eq!(site_pair_expectation(&s, &PairWeight::one(), &one, &one).unwrap(), 1.0);
        let z = site_pair_expectation(&s, &PairWeight::ising(0.5), &one, &one).unwrap();
        assert!((z - 0.5f64.cosh()).abs() < 1e-15);
        let neg = PairWeight::new("neg", |x, y| x * y);
        assert!(matches!(site_pair_expectation(&s, &neg, &one, &one), Err(Error::Positivity(_))));
    }

    #[test]
    fn gauss_exactness() {
        let u = SiteSpace::unit_interval(8).unwrap();
        for p in 0..16 {
            let got = site_expectation(&u, &SiteObservable::power(p)).unwrap();
            assert_relative_eq!(got, 1.0 / (p as f64 + 1.0), max_relative = 1e-13);
        }
        let r = SiteSpace::real_line(10, 2.0).unwrap();
        let mut double_fact = 1.0;
        for p in (0..20).step_by(2) {
            if p > 0 {
                double_fact *= (p - 1) as f64;
            }
            let got = site_expectation(&r, &SiteObservable::power(p)).unwrap();
            assert_relative_eq!(got, double_fact * 2f64.powi(p), max_relative = 1e-10);
            assert!(site_expectation(&r, &SiteObservable::power(p + 1)).unwrap().abs() < 1e-9 * double_fact.max(1.0) * 2f64.powi(p + 1));
        }
    }

    #[test]
    fn interval_integration() {
        let v = integrate_interval(f64::exp, 0.2, 0.7, 16).unwrap();
        assert!((v - (0.7f64.exp() - 0.2f64.exp())).abs() < 1e-14);
    }

    #[test]
    fn tabulated_and_projection() {
        let s = SiteSpace::finite_spin(vec![0.0, 1.0, 2.0], Some(vec![1.0, 2.0, 1.0])).unwrap();
        let p = SiteObservable::tabulated("p", &s, vec![0.0, 1.0, 1.0]).unwrap();
        assert!(p.is_projection_on(&s));
        assert!((site_expectation(&s, &p).unwrap() - 0.75).abs() < 1e-15);
        assert!((site_expectation(&s, &p.complement()).unwrap() - 0.25).abs() < 1e-15);
        assert!(!SiteObservable::identity().is_projection_on(&s));
    }

    proptest! {
        #[test]
        fn rank_one_factorizes(h in prop::collection::vec(0.01f64..3.0, 3), a in prop::collection::vec(-2.0f64..2.0, 3), b in prop::collection::vec(-2.0f64..2.0, 3)) {
            let s = SiteSpace::finite_spin(vec![-1.0, 0.0, 1.0], Some(vec![0.2, 0.3, 0.5])).unwrap();
            let h = SiteObservable::tabulated("h", &s, h).unwrap();
            let a = SiteObservable::tabulated("a", &s, a).unwrap();
            let b = SiteObservable::tabulated("b", &s, b).unwrap();
            let lhs = site_pair_expectation(&s, &PairWeight::rank_one(&h), &a, &b).unwrap();
            let rhs = site_expectation(&s, &h.product(&a)).unwrap() * site_expectation(&s, &h.product(&b)).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs.abs()));
        }

        #[test]
        fn expectation_positive_and_linear(a in prop::collection::vec(0.0f64..5.0, 4), b in prop::collection::vec(-5.0f64..5.0, 4), c in -3.0f64..3.0) {
            let s = SiteSpace::finite_spin(vec![1.0, 2.0, 3.0, 4.0], Some(vec![0.1, 0.2, 0.3, 0.4])).unwrap();
            let ao = SiteObservable::tabulated("a", &s, a.clone()).unwrap();
            prop_assert!(site_expectation(&s, &ao).unwrap() >= 0.0);
            let bo = SiteObservable::tabulated("b", &s, b.clone()).unwrap();
            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + c * y).collect();
            let so = SiteObservable::tabulated("s", &s, sum).unwrap();
            let lhs = site_expectation(&s, &so).unwrap();
            let rhs = site_expectation(&s, &ao).unwrap() + c * site_expectation(&s, &bo).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
