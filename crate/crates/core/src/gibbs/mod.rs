//! Gibbs states `z^-1 ⟨ω_n, v_n (·)⟩`: partition functions, expectations, correlations.

pub(crate) mod metropolis;
pub mod stats;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::action::LatticeAction;
use crate::error::{Error, Result};
use crate::exact::{self, enumerate, uniform_measure, FactorModel, DEFAULT_EXACT_CAP};
use crate::lattice::{CubeIndex, Torus};
use crate::sitespace::{SiteObservable, SiteSpace};

pub use metropolis::{metropolis_sample, MetropolisChain, MetropolisSettings, ACCEPTANCE_WINDOW};
pub use stats::{correlation_length_fit, integrated_autocorrelation, jackknife, CorrelationFit};

/// Product `∏_j a_j(u(Δ_j))` over cube ids. The empty product is the unit.
#[derive(Clone, Debug, Default)]
pub struct LatticeObservable {
    pub factors: Vec<(usize, SiteObservable)>,
}

impl LatticeObservable {
    pub fn unit() -> Self {
        LatticeObservable::default()
    }

    pub fn single(cube: usize, a: SiteObservable) -> Self {
        LatticeObservable { factors: vec![(cube, a)] }
    }

    pub fn at(torus: &Torus, cube: &CubeIndex, a: SiteObservable) -> Result<Self> {
        torus.check_cube(cube)?;
        Ok(LatticeObservable::single(torus.id(cube), a))
    }

    pub fn pair(c1: usize, a: SiteObservable, c2: usize, b: SiteObservable) -> Self {
        LatticeObservable { factors: vec![(c1, a), (c2, b)] }
    }

    pub fn times(&self, other: &LatticeObservable) -> Self {
        let mut f = self.factors.clone();
        f.extend(other.factors.iter().cloned());
        LatticeObservable { factors: f }
    }

    pub fn translate(&self, torus: &Torus, g: &[i64]) -> Self {
        LatticeObservable {
            factors: self.factors.iter().map(|(c, a)| (torus.translate_id(*c, g), a.clone())).collect(),
        }
    }

    pub fn is_unit(&self) -> bool {
        self.factors.is_empty()
    }

    pub fn cubes(&self) -> Vec<usize> {
        let mut c: Vec<usize> = self.factors.iter().map(|f| f.0).collect();
        c.sort_unstable();
        c.dedup();
        c
    }

    pub fn name(&self) -> String {
        if self.factors.is_empty() {
            return "1".into();
        }
        self.factors.iter().map(|(c, a)| format!("{}@{c}", a.name())).collect::<Vec<_>>().join("*")
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        self.factors.iter().map(|(c, a)| a.eval(u[*c])).product()
    }

    /// Product of factors on the same cube, one site observable per cube.
    pub fn merged(&self) -> Vec<(usize, SiteObservable)> {
        self.cubes()
            .into_iter()
            .map(|c| {
                let mut it = self.factors.iter().filter(|f| f.0 == c).map(|f| f.1.clone());
                let first = it.next().expect("cube has a factor");
                (c, it.fold(first, |acc, a| acc.product(&a)))
            })
            .collect()
    }

    /// Factors tabulated on the space's points, for index-based evaluation.
    pub(crate) fn tabulate(&self, space: &SiteSpace) -> Result<Vec<(usize, Vec<f64>)>> {
        self.factors.iter().map(|(c, a)| Ok((*c, space.tabulate(a)?))).collect()
    }
}

type ConfigFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Any real function of the configuration; products are kept in factored form.
#[derive(Clone)]
pub enum Observable {
    Product(LatticeObservable),
    Function { name: String, f: ConfigFn },
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Observable({})", self.name())
    }
}

impl From<LatticeObservable> for Observable {
    fn from(o: LatticeObservable) -> Self {
        Observable::Product(o)
    }
}

impl Observable {
    pub fn function(name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Observable::Function { name: name.into(), f: Arc::new(f) }
    }

    pub fn name(&self) -> String {
        match self {
            Observable::Product(p) => p.name(),
            Observable::Function { name, .. } => name.clone(),
        }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        match self {
            Observable::Product(p) => p.eval(u),
            Observable::Function { f, .. } => f(u),
        }
    }

    pub fn times(&self, other: &Observable) -> Observable {
        match (self, other) {
            (Observable::Product(a), Observable::Product(b)) => Observable::Product(a.times(b)),
            _ => {
                let (a, b) = (self.clone(), other.clone());
                Observable::function(format!("{}*{}", a.name(), b.name()), move |u| a.eval(u) * b.eval(u))
            }
        }
    }
}

/// A value with an optional sampling error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: Option<f64>,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, stderr: None }
    }
}

#[derive(Clone, Debug)]
pub enum Estimator {
    /// Enumeration of the full integration grid, up to `cap` points.
    Exact { cap: u64 },
    Metropolis(MetropolisSettings),
}

impl Default for Estimator {
    fn default() -> Self {
        Estimator::Exact { cap: DEFAULT_EXACT_CAP }
    }
}

/// Diagnostics of the most recent sampling run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SamplingDiagnostics {
    pub acceptance_rate: f64,
    pub tau_int: Vec<f64>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub struct GibbsState {
    torus: Torus,
    space: SiteSpace,
    action: LatticeAction,
    estimator: Estimator,
}

impl GibbsState {
    pub fn new(torus: Torus, space: SiteSpace, action: LatticeAction, estimator: Estimator) -> Result<Self> {
        if let Estimator::Exact { cap } = estimator {
            exact::check_cap(space.size(), torus.cube_count(), cap)?;
        }
        Ok(GibbsState { torus, space, action, estimator })
    }

    pub fn exact(torus: Torus, space: SiteSpace, action: LatticeAction) -> Result<Self> {
        GibbsState::new(torus, space, action, Estimator::default())
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn space(&self) -> &SiteSpace {
        &self.space
    }

    pub fn action(&self) -> &LatticeAction {
        &self.action
    }

    pub fn estimator(&self) -> &Estimator {
        &self.estimator
    }

    fn base_measure(&self) -> Vec<Vec<f64>> {
        uniform_measure(self.space.weights(), self.torus.cube_count())
    }

    fn cap(&self) -> u64 {
        match self.estimator {
            Estimator::Exact { cap } => cap,
            Estimator::Metropolis(_) => DEFAULT_EXACT_CAP,
        }
    }

    /// Weighted enumeration over the grid with the action folded in.
    fn exact_fold<A, I, V, M>(&self, init: I, visit: V, merge: M) -> Result<A>
    where
        A: Send,
        I: Fn() -> A + Sync,
        V: Fn(&mut A, &[usize], f64) + Sync,
        M: Fn(&mut A, A),
    {
        let n = self.torus.cube_count();
        let m = self.space.size();
        let measure = self.base_measure();
        match self.action.factor_model(&self.torus, &self.space)? {
            Some(model) => {
                let scale = model.log_scale.exp();
                enumerate(&model, &measure, self.cap(), init, |a, x, w| visit(a, x, w * scale), merge)
            }
            None => {
                let unit = FactorModel::unit(n, m);
                let pts = self.space.points();
                let (torus, action) = (&self.torus, &self.action);
                enumerate(
                    &unit,
                    &measure,
                    self.cap(),
                    init,
                    |a, x, w| {
                        let u: Vec<f64> = x.iter().map(|&k| pts[k]).collect();
                        let v = action.weight(torus, &u);
                        if v != 0.0 {
                            visit(a, x, w * v)
                        }
                    },
                    merge,
                )
            }
        }
    }

    /// `z = ⟨ω_n, v_n⟩`. Sampling estimators estimate it as the mean of `v` under the base
    /// measure.
    pub fn partition_function(&self) -> Result<Estimate> {
        match &self.estimator {
            Estimator::Exact { .. } => {
                let z = self.exact_fold(|| 0.0, |a, _, w| *a += w, |a, b| *a += b)?;
                if !(z > 0.0) || !z.is_finite() {
                    return Err(Error::DegeneratePartition(z));
                }
                Ok(Estimate::exact(z))
            }
            Estimator::Metropolis(s) => metropolis::base_sampled_partition(self, s),
        }
    }

    /// `ln z` by the cheapest exact route (ring contraction for one-dimensional
    /// nearest-neighbour weights, enumeration otherwise).
    pub fn log_partition(&self) -> Result<f64> {
        match self.action.factor_model(&self.torus, &self.space)? {
            Some(model) => {
                let (lz, sign) = exact::log_partition(&model, &self.base_measure(), self.cap())?;
                if sign <= 0.0 || !lz.is_finite() {
                    return Err(Error::DegeneratePartition(sign * lz.exp()));
                }
                Ok(lz)
            }
            None => Ok(self.partition_function()?.value.ln()),
        }
    }

    /// Expectations of several observables from one pass (exact) or one set of chains
    /// (Metropolis).
    pub fn measure(&self, obs: &[Observable]) -> Result<Vec<Estimate>> {
        match &self.estimator {
            Estimator::Exact { .. } => {
                let sums = self.exact_sums(obs)?;
                let z = sums[obs.len()];
                if !(z > 0.0) || !z.is_finite() {
                    return Err(Error::DegeneratePartition(z));
                }
                Ok(sums[..obs.len()].iter().map(|s| Estimate::exact(s / z)).collect())
            }
            Estimator::Metropolis(s) => {
                let run = metropolis::run(self, s, obs)?;
                Ok((0..obs.len())
                    .map(|i| {
                        let (v, e) = jackknife(&run.series, s.blocks, |m| m[i]);
                        Estimate { value: v, stderr: Some(e) }
                    })
                    .collect())
            }
        }
    }

    /// `Σ_x ω(x) v(x) a_i(x)` for each observable, followed by `z`.
    fn exact_sums(&self, obs: &[Observable]) -> Result<Vec<f64>> {
        enum Tab {
            Product(Vec<(usize, Vec<f64>)>),
            Function(ConfigFn),
        }
        let tabs: Vec<Tab> = obs
            .iter()
            .map(|o| match o {
                Observable::Product(p) => Ok(Tab::Product(p.tabulate(&self.space)?)),
                Observable::Function { f, .. } => Ok(Tab::Function(f.clone())),
            })
            .collect::<Result<_>>()?;
        let k = obs.len();
        let pts = self.space.points();
        let needs_values = tabs.iter().any(|t| matches!(t, Tab::Function(_)));
        let sums = self.exact_fold(
            || vec![0.0; k + 1],
            |acc, x, w| {
                let u: Vec<f64> = if needs_values { x.iter().map(|&i| pts[i]).collect() } else { Vec::new() };
                for (i, t) in tabs.iter().enumerate() {
                    let v = match t {
                        Tab::Product(fs) => fs.iter().map(|(c, tab)| tab[x[*c]]).product::<f64>(),
                        Tab::Function(f) => f(&u),
                    };
                    acc[i] += w * v;
                }
                acc[k] += w;
            },
            |a, b| a.iter_mut().zip(b).for_each(|(x, y)| *x += y),
        )?;
        if let Some(i) = sums.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("expectation sum {i}")));
        }
        Ok(sums)
    }

    pub fn expectation(&self, obs: &Observable) -> Result<Estimate> {
        Ok(self.measure(std::slice::from_ref(obs))?[0])
    }

    /// `⟨ab⟩ - ⟨a⟩⟨b⟩`.
    pub fn correlation(&self, a: &Observable, b: &Observable) -> Result<Estimate> {
        let obs = [a.times(b), a.clone(), b.clone()];
        match &self.estimator {
            Estimator::Exact { .. } => {
                let e = self.measure(&obs)?;
                Ok(Estimate::exact(e[0].value - e[1].value * e[2].value))
            }
            Estimator::Metropolis(s) => {
                let run = metropolis::run(self, s, &obs)?;
                let (v, e) = jackknife(&run.series, s.blocks, |m| m[0] - m[1] * m[2]);
                Ok(Estimate { value: v, stderr: Some(e) })
            }
        }
    }

    /// Many correlations `⟨a_i b_i⟩ - ⟨a_i⟩⟨b_i⟩` sharing one pass.
    pub fn correlations(&self, pairs: &[(Observable, Observable)]) -> Result<Vec<Estimate>> {
        let mut obs = Vec::with_capacity(3 * pairs.len());
        for (a, b) in pairs {
            obs.push(a.times(b));
            obs.push(a.clone());
            obs.push(b.clone());
        }
        match &self.estimator {
            Estimator::Exact { .. } => {
                let e = self.measure(&obs)?;
                Ok(e.chunks(3).map(|c| Estimate::exact(c[0].value - c[1].value * c[2].value)).collect())
            }
            Estimator::Metropolis(s) => {
                let run = metropolis::run(self, s, &obs)?;
                Ok((0..pairs.len())
                    .map(|i| {
                        let (v, e) = jackknife(&run.series, s.blocks, |m| m[3 * i] - m[3 * i + 1] * m[3 * i + 2]);
                        Estimate { value: v, stderr: Some(e) }
                    })
                    .collect())
            }
        }
    }

    /// Diagnostics of a Metropolis run measuring `obs`; errors for exact states.
    pub fn sampling_diagnostics(&self, obs: &[Observable]) -> Result<SamplingDiagnostics> {
        match &self.estimator {
            Estimator::Metropolis(s) => Ok(metropolis::run(self, s, obs)?.diagnostics),
            Estimator::Exact { .. } => Err(Error::Precondition("exact states are not sampled".into())),
        }
    }

    /// The same state with another estimator.
    pub fn with_estimator(&self, estimator: Estimator) -> Result<Self> {
        GibbsState::new(self.torus.clone(), self.space.clone(), self.action.clone(), estimator)
    }
}
