//! Face-variable representation of `v[w]` models with `w = ∫ h(s) ⊗ h(s) ds`, and the
//! connected two-point functional of projections used to detect non-ultra-local limits.
//!
//! The `s`-integral is always the model's fixed Gauss–Legendre rule, so the primal model
//! built by [`DualModel::primal_action`] and the dual sums agree as finite sums.

use std::fmt;
use std::sync::Arc;

use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{ExpCouplingFamily, FaceCouplingAction, LatticeAction};
use crate::error::{Error, Result};
use crate::exact::{self, enumerate, Factor, FactorModel, DEFAULT_EXACT_CAP};
use crate::gibbs::{Estimate, GibbsState, LatticeObservable, Observable};
use crate::lattice::{CubeIndex, LatticeSpec, Refinement, RefinementStep, Torus};
use crate::rng::rng_from_seed;
use crate::sitespace::{integrate_interval, unit_legendre, PairWeight, SiteKind, SiteObservable, SiteSpace};

type Coupling = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

#[derive(Clone)]
pub struct DualModel {
    torus: Torus,
    space: SiteSpace,
    name: String,
    h: Coupling,
    nodes: Vec<f64>,
    weights: Vec<f64>,
    /// `h(x_i, s_j)` at site point `i`, face node `j`.
    h_table: Vec<Vec<f64>>,
}

impl fmt::Debug for DualModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DualModel")
            .field("name", &self.name)
            .field("spec", self.torus.spec())
            .field("face_order", &self.nodes.len())
            .finish()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum DualEstimator {
    Exact { cap: u64 },
    /// Face variables drawn from the face rule's weights, self-normalized by `v̂`.
    Sampled { seed: u64, samples: usize },
}

impl Default for DualEstimator {
    fn default() -> Self {
        DualEstimator::Exact { cap: DEFAULT_EXACT_CAP }
    }
}

impl DualModel {
    pub fn new(
        torus: Torus,
        space: SiteSpace,
        name: impl Into<String>,
        face_order: usize,
        h: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Result<Self> {
        let (nodes, weights) = unit_legendre(face_order)?;
        Self::build(torus, space, name.into(), Arc::new(h), nodes, weights)
    }

    /// The exp coupling with the family's own face rule.
    pub fn from_exp(torus: Torus, space: SiteSpace, family: &ExpCouplingFamily) -> Result<Self> {
        let f = family.clone();
        let name = format!("exp-coupling(y={})", family.profile().name());
        Self::build(torus, space, name, Arc::new(move |u, s| f.h(u, s)), family.nodes().to_vec(), family.weights().to_vec())
    }

    fn build(torus: Torus, space: SiteSpace, name: String, h: Coupling, nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let h_table: Vec<Vec<f64>> = space.points().iter().map(|&x| nodes.iter().map(|&s| h(x, s)).collect()).collect();
        if let Some(v) = h_table.iter().flatten().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("coupling {name} takes value {v}")));
        }
        Ok(DualModel { torus, space, name, h, nodes, weights, h_table })
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn space(&self) -> &SiteSpace {
        &self.space
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `w(x, y) = Σ_j ω_j h(x, s_j) h(y, s_j)`.
    pub fn pair_weight(&self) -> PairWeight {
        let (h, nodes, weights) = (self.h.clone(), self.nodes.clone(), self.weights.clone());
        PairWeight::new(format!("∫{0}⊗{0}", self.name), move |x, y| {
            nodes.iter().zip(&weights).map(|(&s, &w)| w * h(x, s) * h(y, s)).sum()
        })
    }

    /// The primal face-coupling action with the same discrete `w`.
    pub fn primal_action(&self) -> Result<LatticeAction> {
        Ok(LatticeAction::FaceCoupling(FaceCouplingAction::new(self.pair_weight(), &self.space)?))
    }

    /// `Σ_x Ω(x) a(x) ∏_Γ h(x, s_Γ)` with face node indices `s` on the boundary of a cube.
    fn cube_sum(&self, s_local: &[usize], a: Option<&[f64]>) -> f64 {
        let w = self.space.weights();
        (0..w.len())
            .map(|x| {
                let hx = &self.h_table[x];
                let prod: f64 = s_local.iter().map(|&j| hx[j]).product();
                w[x] * prod * a.map_or(1.0, |a| a[x])
            })
            .sum()
    }

    fn boundary_nodes(&self, cube: usize, s: &[usize]) -> Vec<usize> {
        self.torus.boundary_face_ids(cube).into_iter().map(|f| s[f]).collect()
    }

    /// `⟨E^(s)_Δ, a⟩` with real face values on the cube's boundary.
    pub fn dual_site_state(&self, s_local: &[f64], a: &SiteObservable) -> Result<f64> {
        self.check_local(s_local.len())?;
        let (pts, w) = (self.space.points(), self.space.weights());
        let mut num = 0.0;
        let mut den = 0.0;
        for (&x, &wx) in pts.iter().zip(w) {
            let p: f64 = s_local.iter().map(|&s| (self.h)(x, s)).product();
            num += wx * p * a.eval(x);
            den += wx * p;
        }
        if !(den.abs() > 0.0) {
            return Err(Error::DegeneratePartition(den));
        }
        Ok(num / den)
    }

    /// `⟨E^(s)_Δ, 1_[u0,u1]⟩` for a unit-interval base, integrating the coupling with an
    /// `order`-point rule on each side of the cut.
    pub fn dual_interval_state(&self, s_local: &[f64], u0: f64, u1: f64, order: usize) -> Result<f64> {
        self.check_local(s_local.len())?;
        if self.space.kind() != SiteKind::UnitInterval {
            return Err(Error::Unsupported("interval states need a unit-interval base".into()));
        }
        if !(0.0 <= u0 && u0 <= u1 && u1 <= 1.0) {
            return Err(Error::Precondition(format!("[{u0}, {u1}] is not inside [0, 1]")));
        }
        let f = |u: f64| s_local.iter().map(|&s| (self.h)(u, s)).product::<f64>();
        let part = integrate_interval(f, u0, u1, order)?;
        let whole = integrate_interval(f, 0.0, u0, order)? + part + integrate_interval(f, u1, 1.0, order)?;
        Ok(part / whole)
    }

    fn check_local(&self, len: usize) -> Result<()> {
        let want = 2 * self.torus.dim();
        if len != want {
            return Err(Error::Precondition(format!("a cube has {want} boundary faces, got {len} face values")));
        }
        Ok(())
    }

    /// `v̂(s) = ∏_Δ z^(s)_Δ` at face node indices.
    pub fn dual_action(&self, s: &[usize]) -> f64 {
        (0..self.torus.cube_count()).map(|c| self.cube_sum(&self.boundary_nodes(c, s), None)).product()
    }

    /// `v̂` as a factor model over face variables, with site tables `a_c` inserted on
    /// the listed cubes.
    pub fn dual_factor_model(&self, inserted: &[(usize, Vec<f64>)]) -> Result<FactorModel> {
        let q = self.nodes.len();
        let d2 = 2 * self.torus.dim();
        let mut model = FactorModel::unit(self.torus.face_count(), q);
        for c in 0..self.torus.cube_count() {
            let a = inserted.iter().find(|(i, _)| *i == c).map(|(_, t)| t.as_slice());
            let table: Vec<f64> = (0..q.pow(d2 as u32)).map(|i| self.cube_sum(&exact::decode(i, q, d2), a)).collect();
            model.push(Factor { sites: self.torus.boundary_face_ids(c), table })?;
        }
        Ok(model)
    }

    fn face_grid(&self) -> f64 {
        (self.nodes.len() as f64).powi(self.torus.face_count() as i32)
    }

    /// `ẑ^{-1} Σ_s ω(s) v̂(s) â(s)` over face node configurations.
    pub fn dual_expectation(&self, a_hat: &(dyn Fn(&[usize]) -> f64 + Sync), est: DualEstimator) -> Result<Estimate> {
        let nf = self.torus.face_count();
        match est {
            DualEstimator::Exact { cap } => {
                let model = self.dual_factor_model(&[])?;
                let measure = exact::uniform_measure(&self.weights, nf);
                let (num, den) = enumerate(
                    &model,
                    &measure,
                    cap,
                    || (0.0, 0.0),
                    |acc, s, w| {
                        acc.0 += w * a_hat(s);
                        acc.1 += w;
                    },
                    |a, b| {
                        a.0 += b.0;
                        a.1 += b.1;
                    },
                )?;
                if !(den > 0.0) {
                    return Err(Error::DegeneratePartition(den));
                }
                Ok(Estimate::exact(num / den))
            }
            DualEstimator::Sampled { seed, samples } => {
                if samples < 2 {
                    return Err(Error::Precondition("sampled dual expectation needs at least two samples".into()));
                }
                let total: f64 = self.weights.iter().sum();
                let mut rng = rng_from_seed(seed);
                let mut draws = Vec::with_capacity(samples);
                for _ in 0..samples {
                    let s: Vec<usize> = (0..nf)
                        .map(|_| {
                            let r = rng.random::<f64>() * total;
                            let mut acc = 0.0;
                            self.weights.iter().position(|&w| {
                                acc += w;
                                r < acc
                            })
                            .unwrap_or(self.weights.len() - 1)
                        })
                        .collect();
                    draws.push(s);
                }
                let (num, den): (Vec<f64>, Vec<f64>) = draws
                    .par_iter()
                    .map(|s| {
                        let v = self.dual_action(s);
                        (v * a_hat(s), v)
                    })
                    .unzip();
                let (value, stderr) = crate::gibbs::jackknife(&[num, den], 32, |m| m[0] / m[1]);
                Ok(Estimate { value, stderr: Some(stderr) })
            }
        }
    }

    /// `Π_j ⟨E^(s)_{Δ_j}, a_j⟩` as a function of face node indices; factors on the same
    /// cube are multiplied first.
    pub fn dual_observable(&self, obs: &LatticeObservable) -> Result<impl Fn(&[usize]) -> f64 + Sync + '_> {
        let tables: Vec<(usize, Vec<f64>)> =
            obs.merged().into_iter().map(|(c, a)| Ok((c, self.space.tabulate(&a)?))).collect::<Result<_>>()?;
        Ok(move |s: &[usize]| {
            tables
                .iter()
                .map(|(c, a)| {
                    let local = self.boundary_nodes(*c, s);
                    self.cube_sum(&local, Some(a)) / self.cube_sum(&local, None)
                })
                .product()
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DualRoute {
    /// `â` evaluated on every face configuration.
    Enumerated,
    /// The site states folded into the cube factors and contracted.
    Folded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DualityCheck {
    pub observable: String,
    pub lhs: f64,
    pub rhs: f64,
    pub defect: f64,
    pub route: DualRoute,
}

/// `⟨η_n, ∏ Φ(Δ_j, a_j)⟩` on the primal `v[w]` model against the dual-lattice integral of
/// `∏ ⟨E^(s)_{Δ_j}, a_j⟩`.
pub fn duality_identity_check(model: &DualModel, obs: &LatticeObservable, cap: u64) -> Result<DualityCheck> {
    let primal = GibbsState::exact(model.torus.clone(), model.space.clone(), model.primal_action()?)?;
    let (lhs, rhs_route) = rayon::join(
        || primal.expectation(&Observable::Product(obs.clone())),
        || -> Result<(f64, DualRoute)> {
            if model.face_grid() <= cap as f64 {
                let a_hat = model.dual_observable(obs)?;
                Ok((model.dual_expectation(&a_hat, DualEstimator::Exact { cap })?.value, DualRoute::Enumerated))
            } else {
                let inserted: Vec<(usize, Vec<f64>)> = obs
                    .merged()
                    .into_iter()
                    .map(|(c, a)| Ok((c, model.space.tabulate(&a)?)))
                    .collect::<Result<_>>()?;
                let measure = exact::uniform_measure(&model.weights, model.torus.face_count());
                let (ln_num, sign) = exact::log_partition(&model.dual_factor_model(&inserted)?, &measure, cap)?;
                let (ln_den, _) = exact::log_partition(&model.dual_factor_model(&[])?, &measure, cap)?;
                Ok((sign * (ln_num - ln_den).exp(), DualRoute::Folded))
            }
        },
    );
    let lhs = lhs?.value;
    let (rhs, route) = rhs_route?;
    Ok(DualityCheck { observable: obs.name(), lhs, rhs, defect: (lhs - rhs).abs(), route })
}

/// `⟨η, a1(Δ1) a2(Δ2)⟩ - ⟨η, a1(Δ1)⟩⟨η, a2(Δ2)⟩`.
pub fn correlation_functional(state: &GibbsState, c1: usize, a1: &SiteObservable, c2: usize, a2: &SiteObservable) -> Result<f64> {
    let o1 = Observable::Product(LatticeObservable::single(c1, a1.clone()));
    let o2 = Observable::Product(LatticeObservable::single(c2, a2.clone()));
    let both = Observable::Product(LatticeObservable::pair(c1, a1.clone(), c2, a2.clone()));
    let e = state.measure(&[both, o1, o2])?;
    Ok(e[0].value - e[1].value * e[2].value)
}

#[derive(Clone, Debug)]
pub struct CorrelationSetQuery {
    pub c: f64,
    pub cube1: CubeIndex,
    pub cube2: CubeIndex,
    pub p1: SiteObservable,
    pub p2: SiteObservable,
    pub k: RefinementStep,
}

impl CorrelationSetQuery {
    pub fn validate(&self, space: &SiteSpace) -> Result<()> {
        if !(self.c > 0.0 && self.c < 2.0) {
            return Err(Error::Precondition(format!("threshold {} must lie in (0, 2)", self.c)));
        }
        for p in [&self.p1, &self.p2] {
            if !p.is_projection_on(space) {
                return Err(Error::Precondition(format!("{} is not a projection", p.name())));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    /// `c(P1 ⊗ P2)` at the decimated cube pair.
    pub value: f64,
    pub member: bool,
    /// `|c(P1 ⊗ 1)|`.
    pub unit_defect: f64,
    /// `|c((1 - P1) ⊗ P2) + c(P1 ⊗ P2)|`.
    pub sign_defect: f64,
    /// `max_g |c at (gΔ1, gΔ2) - c at (Δ1, Δ2)|` over all fine translations.
    pub translation_defect: f64,
    pub membership_translation_invariant: bool,
}

/// Exact state of the face-coupled model with weight `w` on the lattice `spec`.
pub fn coupled_state(space: &SiteSpace, w: &PairWeight, spec: &LatticeSpec, cap: u64) -> Result<GibbsState> {
    let action = LatticeAction::FaceCoupling(FaceCouplingAction::new(w.clone(), space)?);
    GibbsState::new(Torus::new(*spec), space.clone(), action, crate::gibbs::Estimator::Exact { cap })
}

/// Evaluate the correlation functional of the `v[w]` state at `n + k` on the decimated
/// images of the query cubes, with the identities that the membership test relies on.
pub fn projection_correlation_test(
    space: &SiteSpace,
    w: &PairWeight,
    spec: &LatticeSpec,
    query: &CorrelationSetQuery,
    cap: u64,
) -> Result<CorrelationReport> {
    query.validate(space)?;
    let r = Refinement::new(spec, query.k)?;
    r.coarse().check_cube(&query.cube1)?;
    r.coarse().check_cube(&query.cube2)?;
    let state = coupled_state(space, w, r.fine().spec(), cap)?;
    let fine = r.fine();
    let d1 = r.distinguished()[r.coarse().id(&query.cube1)];
    let d2 = r.distinguished()[r.coarse().id(&query.cube2)];
    let (p1, p2) = (&query.p1, &query.p2);
    let not_p1 = p1.complement();

    // One pass over the grid for every needed expectation.
    let d = fine.dim();
    let translations: Vec<Vec<i64>> = (0..fine.cube_count())
        .map(|i| fine.cube(i).coords.iter().map(|&x| x as i64).collect::<Vec<_>>())
        .collect();
    let mut obs = Vec::new();
    let push_corr = |obs: &mut Vec<Observable>, c1: usize, a1: &SiteObservable, c2: usize, a2: &SiteObservable| {
        obs.push(Observable::Product(LatticeObservable::pair(c1, a1.clone(), c2, a2.clone())));
        obs.push(Observable::Product(LatticeObservable::single(c1, a1.clone())));
        obs.push(Observable::Product(LatticeObservable::single(c2, a2.clone())));
    };
    push_corr(&mut obs, d1, p1, d2, p2);
    push_corr(&mut obs, d1, p1, d2, &SiteObservable::one());
    push_corr(&mut obs, d1, &not_p1, d2, p2);
    for g in &translations {
        debug_assert_eq!(g.len(), d);
        push_corr(&mut obs, fine.translate_id(d1, g), p1, fine.translate_id(d2, g), p2);
    }
    let e = state.measure(&obs)?;
    let corr = |i: usize| e[3 * i].value - e[3 * i + 1].value * e[3 * i + 2].value;
    let value = corr(0);
    let member = value.abs() > query.c;
    let translated: Vec<f64> = (0..translations.len()).map(|t| corr(3 + t)).collect();
    Ok(CorrelationReport {
        value,
        member,
        unit_defect: corr(1).abs(),
        sign_defect: (corr(2) + value).abs(),
        translation_defect: translated.iter().map(|c| (c - value).abs()).fold(0.0, f64::max),
        membership_translation_invariant: translated.iter().all(|c| (c.abs() > query.c) == member),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub parameter: f64,
    /// `(k, c)` for each refinement.
    pub per_k: Vec<(RefinementStep, f64)>,
    /// `min_k |c|`.
    pub uniform_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    pub best_parameter: f64,
    /// Largest `c` certified uniformly over the k range.
    pub best_bound: f64,
}

/// Sweep a one-parameter coupling family and report, for each parameter, the smallest
/// `|c(P1 ⊗ P2)|` over `ks`.
pub fn correlation_sweep(
    space: &SiteSpace,
    family: &(dyn Fn(f64) -> PairWeight + Sync),
    parameters: &[f64],
    spec: &LatticeSpec,
    query: &CorrelationSetQuery,
    ks: &[RefinementStep],
    cap: u64,
) -> Result<SweepReport> {
    if parameters.is_empty() || ks.is_empty() {
        return Err(Error::Precondition("sweep needs at least one parameter and one k".into()));
    }
    let entries: Vec<SweepEntry> = parameters
        .par_iter()
        .map(|&p| {
            let w = family(p);
            let per_k: Vec<(RefinementStep, f64)> = ks
                .iter()
                .map(|&k| {
                    let q = CorrelationSetQuery { k, ..query.clone() };
                    Ok((k, projection_correlation_test(space, &w, spec, &q, cap)?.value))
                })
                .collect::<Result<_>>()?;
            let uniform_bound = per_k.iter().map(|p| p.1.abs()).fold(f64::INFINITY, f64::min);
            Ok(SweepEntry { parameter: p, per_k, uniform_bound })
        })
        .collect::<Result<_>>()?;
    let best = entries.iter().fold(&entries[0], |a, b| if b.uniform_bound > a.uniform_bound { b } else { a });
    Ok(SweepReport { best_parameter: best.parameter, best_bound: best.uniform_bound, entries })
}
