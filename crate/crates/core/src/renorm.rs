//! Conditional expectations onto coarser scales, effective actions, multiplicative
//! renormalization and the seminorm bounds that certify it.
//!
//! All conditional expectations use decimation: the fine sites that are not
//! distinguished, including the exterior ones added by volume growth, are integrated
//! against the base single-site measure.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{ActionFamily, CustomAction, ExpCouplingFamily, FaceCouplingAction, LatticeAction};
use crate::error::{Error, Result};
use crate::exact::{self, check_cap, contract_ring, decode, log_sup_abs, uniform_measure, Factor, FactorModel};
use crate::gibbs::LatticeObservable;
use crate::lattice::{LatticeSpec, Refinement, RefinementStep, Scale, Torus};
use crate::sitespace::{site_expectation, unit_legendre, PairWeight, SiteKind, SiteSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Route {
    /// Product of single-site factors, integrated site by site.
    SiteProduct,
    /// One-dimensional transfer matrices between distinguished sites.
    RingTransfer,
    /// Dense table by full enumeration.
    Enumeration,
}

/// `e_(ω,n,n+k)(b)` as a function of the coarse configuration at `n`.
#[derive(Clone, Debug)]
pub struct EffectiveActionTable {
    pub spec: LatticeSpec,
    pub k: RefinementStep,
    pub model: FactorModel,
    pub route: Route,
}

impl EffectiveActionTable {
    /// Value at a coarse configuration given as site-space indices.
    pub fn eval(&self, x: &[usize]) -> f64 {
        self.model.eval(x)
    }

    pub fn log_sup_norm(&self, cap: u64) -> Result<f64> {
        log_sup_abs(&self.model, cap)
    }

    /// `ln ⟨ω_n, e⟩`, which equals `ln ⟨ω_{n+k}, b⟩` for a positive `b`.
    pub fn log_mass(&self, space: &SiteSpace, cap: u64) -> Result<f64> {
        let measure = uniform_measure(space.weights(), self.model.n_sites());
        let (lz, sign) = exact::log_partition(&self.model, &measure, cap)?;
        if sign <= 0.0 || !lz.is_finite() {
            return Err(Error::DegeneratePartition(sign * lz.exp()));
        }
        Ok(lz)
    }

    /// Every entry of the table, in coarse-configuration order.
    pub fn dense(&self, cap: u64) -> Result<Vec<f64>> {
        dense_values(&self.model, cap)
    }
}

/// All values of a model on its grid, first site most significant.
pub fn dense_values(model: &FactorModel, cap: u64) -> Result<Vec<f64>> {
    let (n, m) = (model.n_sites(), model.m());
    check_cap(m, n, cap)?;
    Ok((0..m.pow(n as u32)).into_par_iter().map(|i| model.eval(&decode(i, m, n))).collect())
}

fn check_grid(model: &FactorModel, r: &Refinement, space: &SiteSpace) -> Result<()> {
    if model.n_sites() != r.fine().cube_count() || model.m() != space.size() {
        return Err(Error::Precondition(format!(
            "model on {} sites with {} values does not match the fine lattice ({} cubes, {} values)",
            model.n_sites(),
            model.m(),
            r.fine().cube_count(),
            space.size()
        )));
    }
    Ok(())
}

/// Conditional expectation of a fine function given as a factor model on the site
/// space's points.
pub fn conditional_expectation(
    space: &SiteSpace,
    spec: &LatticeSpec,
    k: RefinementStep,
    b: &FactorModel,
    cap: u64,
) -> Result<EffectiveActionTable> {
    let r = Refinement::new(spec, k)?;
    check_grid(b, &r, space)?;
    let (model, route) = if b.only_site_factors() {
        (integrate_site_product(space, &r, b)?, Route::SiteProduct)
    } else if b.is_ring() {
        let measure = uniform_measure(space.weights(), b.n_sites());
        (contract_ring(b, &measure, r.distinguished())?, Route::RingTransfer)
    } else {
        let m = space.size();
        check_cap(m, b.n_sites(), cap).map_err(|_| sampled_hint(m, b.n_sites(), cap))?;
        let table = enumerate_onto(space, &r, cap, |x| b.eval_unscaled(x))?;
        (table.scaled_log(b.log_scale), Route::Enumeration)
    };
    Ok(EffectiveActionTable { spec: *spec, k, model, route })
}

fn sampled_hint(m: usize, n: usize, cap: u64) -> Error {
    Error::Unsupported(format!(
        "conditional expectation of a non-factorizing weight needs {m}^{n} terms, over the exact cap {cap}; use a sampled estimator"
    ))
}

/// Conditional expectation of an arbitrary function of the fine field values, by
/// enumeration.
pub fn conditional_expectation_fn(
    space: &SiteSpace,
    spec: &LatticeSpec,
    k: RefinementStep,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    cap: u64,
) -> Result<EffectiveActionTable> {
    let r = Refinement::new(spec, k)?;
    let (m, n) = (space.size(), r.fine().cube_count());
    check_cap(m, n, cap).map_err(|_| sampled_hint(m, n, cap))?;
    let pts = space.points();
    let model = enumerate_onto(space, &r, cap, |x| {
        let u: Vec<f64> = x.iter().map(|&i| pts[i]).collect();
        f(&u)
    })?;
    Ok(EffectiveActionTable { spec: *spec, k, model, route: Route::Enumeration })
}

fn integrate_site_product(space: &SiteSpace, r: &Refinement, b: &FactorModel) -> Result<FactorModel> {
    let nc = r.coarse().cube_count();
    let mut out = FactorModel::unit(nc, space.size());
    out.log_scale = b.log_scale;
    let mut constant = b.constant_part();
    for f in 0..b.n_sites() {
        let v = b.site_vector(f);
        match r.distinguished_owner(f) {
            Some(c) => {
                if v.iter().any(|&x| x != 1.0) {
                    out.push(Factor::site(c, v))?;
                }
            }
            None => {
                let t: f64 = v.iter().zip(space.weights()).map(|(a, w)| a * w).sum();
                if t == 0.0 {
                    constant = 0.0;
                } else {
                    out.log_scale += t.abs().ln();
                    constant *= t.signum();
                }
            }
        }
    }
    if constant != 1.0 {
        out.push(Factor::constant(constant))?;
    }
    Ok(out)
}

/// Dense coarse table `y ↦ Σ_z ∏ μ(z) g(y ∪ z)` with `g` evaluated on index
/// configurations of the fine lattice.
fn enumerate_onto(
    space: &SiteSpace,
    r: &Refinement,
    cap: u64,
    g: impl Fn(&[usize]) -> f64 + Sync,
) -> Result<FactorModel> {
    let m = space.size();
    let n = r.fine().cube_count();
    let keep = r.distinguished();
    let nc = keep.len();
    check_cap(m, n, cap)?;
    let rest: Vec<usize> = (0..n).filter(|f| r.distinguished_owner(*f).is_none()).collect();
    let w = space.weights();
    let inner = m.pow(rest.len() as u32);
    let table: Vec<f64> = (0..m.pow(nc as u32))
        .into_par_iter()
        .map(|yi| {
            let y = decode(yi, m, nc);
            let mut x = vec![0usize; n];
            for (c, &f) in keep.iter().enumerate() {
                x[f] = y[c];
            }
            let mut total = 0.0;
            for zi in 0..inner {
                let z = decode(zi, m, rest.len());
                let mut weight = 1.0;
                for (&f, &v) in rest.iter().zip(&z) {
                    x[f] = v;
                    weight *= w[v];
                }
                if weight != 0.0 {
                    total += weight * g(&x);
                }
            }
            total
        })
        .collect();
    FactorModel::new(nc, m, vec![Factor { sites: (0..nc).collect(), table }])
}

/// A lattice observable as a factor model on `n_sites` sites.
pub fn observable_model(space: &SiteSpace, n_sites: usize, a: &LatticeObservable) -> Result<FactorModel> {
    let mut model = FactorModel::unit(n_sites, space.size());
    for (c, o) in a.merged() {
        model.push(Factor::site(c, space.tabulate(&o)?))?;
    }
    Ok(model)
}

/// `|⟨ω_{n+k}, b ι(a)⟩ - ⟨ω_n, e(b) a⟩|`.
pub fn adjointness_defect(
    space: &SiteSpace,
    spec: &LatticeSpec,
    k: RefinementStep,
    b: &FactorModel,
    a: &LatticeObservable,
    cap: u64,
) -> Result<f64> {
    let r = Refinement::new(spec, k)?;
    let e = conditional_expectation(space, spec, k, b, cap)?;
    let pulled = crate::blockspin::pullback_product(&r, a);
    let lhs = signed_total(space, &b.multiply(&observable_model(space, b.n_sites(), &pulled)?)?, cap)?;
    let rhs = signed_total(space, &e.model.multiply(&observable_model(space, e.model.n_sites(), a)?)?, cap)?;
    Ok((lhs - rhs).abs())
}

fn signed_total(space: &SiteSpace, model: &FactorModel, cap: u64) -> Result<f64> {
    let measure = uniform_measure(space.weights(), model.n_sites());
    let (lz, sign) = exact::log_partition(model, &measure, cap)?;
    Ok(if sign == 0.0 { 0.0 } else { sign * lz.exp() })
}

/// `sup |e_(n,n+k0) e_(n+k0,n+k)(f) - e_(n,n+k)(f)|` for `f` on the lattice at `n + k`.
pub fn tower_property_check(
    space: &SiteSpace,
    spec: &LatticeSpec,
    k0: RefinementStep,
    k: RefinementStep,
    f: &FactorModel,
    cap: u64,
) -> Result<f64> {
    let rest = k0
        .difference(k)
        .ok_or_else(|| Error::Precondition(format!("k0 = {k0:?} does not precede k = {k:?}")))?;
    let mid = spec.refined(k0)?;
    let inner = conditional_expectation(space, &mid, rest, f, cap)?;
    let two_step = conditional_expectation(space, spec, k0, &inner.model, cap)?;
    let direct = conditional_expectation(space, spec, k, f, cap)?;
    let a = two_step.dense(cap)?;
    let b = direct.dense(cap)?;
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max))
}

/// An action for every lattice, possibly failing.
pub trait ScaleFamily: Sync {
    fn action_at(&self, spec: &LatticeSpec) -> Result<LatticeAction>;
    fn name(&self) -> String;
}

impl ScaleFamily for ActionFamily {
    fn action_at(&self, spec: &LatticeSpec) -> Result<LatticeAction> {
        Ok(self.at(spec))
    }

    fn name(&self) -> String {
        match self {
            ActionFamily::Fixed(a) => a.name(),
            ActionFamily::PerScale { name, .. } => name.clone(),
        }
    }
}

/// `ln z = ln ⟨ω_n, v_n⟩`, exact.
pub fn log_partition_at(space: &SiteSpace, action: &LatticeAction, spec: &LatticeSpec, cap: u64) -> Result<f64> {
    let torus = Torus::new(*spec);
    let n = torus.cube_count();
    let measure = uniform_measure(space.weights(), n);
    let (lz, sign) = match action.factor_model(&torus, space)? {
        Some(model) => exact::log_partition(&model, &measure, cap)?,
        None => {
            let pts = space.points();
            let unit = FactorModel::unit(n, space.size());
            let z = exact::enumerate(
                &unit,
                &measure,
                cap,
                || 0.0,
                |acc, x, w| {
                    let u: Vec<f64> = x.iter().map(|&i| pts[i]).collect();
                    *acc += w * action.weight(&torus, &u);
                },
                |a, b| *a += b,
            )?;
            (z.abs().ln(), z.signum())
        }
    };
    if sign <= 0.0 || !lz.is_finite() {
        return Err(Error::DegeneratePartition(sign * lz.exp()));
    }
    Ok(lz)
}

/// `e^(k)(v)_n = e_(ω,n,n+k)(v_{n+k})`.
pub fn effective_action(
    space: &SiteSpace,
    family: &dyn ScaleFamily,
    spec: &LatticeSpec,
    k: RefinementStep,
    cap: u64,
) -> Result<EffectiveActionTable> {
    let fine = spec.refined(k)?;
    let action = family.action_at(&fine)?;
    match action.factor_model(&Torus::new(fine), space)? {
        Some(model) => conditional_expectation(space, spec, k, &model, cap),
        None => {
            let torus = Torus::new(fine);
            conditional_expectation_fn(space, spec, k, &|u| action.weight(&torus, u), cap)
        }
    }
}

/// `(r_ω v)_n = z_n^{-1} v_n`.
#[derive(Clone, Debug)]
pub struct RenormalizedFamily {
    space: SiteSpace,
    inner: ActionFamily,
    cap: u64,
}

pub fn multiplicative_renormalize(space: &SiteSpace, family: ActionFamily, cap: u64) -> RenormalizedFamily {
    RenormalizedFamily { space: space.clone(), inner: family, cap }
}

impl RenormalizedFamily {
    pub fn inner(&self) -> &ActionFamily {
        &self.inner
    }

    /// `ln z_n` of the unrenormalized family.
    pub fn log_z(&self, spec: &LatticeSpec) -> Result<f64> {
        log_partition_at(&self.space, &self.inner.at(spec), spec, self.cap)
    }
}

impl ScaleFamily for RenormalizedFamily {
    fn action_at(&self, spec: &LatticeSpec) -> Result<LatticeAction> {
        let lz = self.log_z(spec)?;
        Ok(self.inner.at(spec).scaled(-lz))
    }

    fn name(&self) -> String {
        format!("r[{}]", ScaleFamily::name(&self.inner))
    }
}

/// The finite set of refinements searched in place of all of `ℕ²`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KRange {
    pub max_fine: u32,
    pub max_volume: u32,
}

impl Default for KRange {
    fn default() -> Self {
        KRange { max_fine: 3, max_volume: 1 }
    }
}

impl KRange {
    pub fn new(max_fine: u32, max_volume: u32) -> Self {
        KRange { max_fine, max_volume }
    }

    /// Volume-major, then fine.
    pub fn steps(&self) -> Vec<RefinementStep> {
        (0..=self.max_volume)
            .flat_map(|v| (0..=self.max_fine).map(move |f| RefinementStep::new(f, v)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeminormEstimate {
    pub scale: Scale,
    /// `max_k ‖e_(ω,n,n+k)(f_{n+k})‖` over the searched range; a lower bound for the
    /// supremum over all `k`.
    pub value: f64,
    pub log_value: f64,
    pub k_range: KRange,
    /// `(k, ln ‖e_(ω,n,n+k)(f_{n+k})‖)`.
    pub per_k: Vec<(RefinementStep, f64)>,
    /// The norms still grow without contracting at the edge of the range.
    pub still_growing: bool,
}

const GROWTH_TOL: f64 = 1e-9;

pub fn seminorm_estimate(
    space: &SiteSpace,
    family: &dyn ScaleFamily,
    spec: &LatticeSpec,
    k_range: KRange,
    cap: u64,
) -> Result<SeminormEstimate> {
    let steps = k_range.steps();
    let per_k: Vec<(RefinementStep, f64)> = steps
        .par_iter()
        .map(|&k| {
            let e = effective_action(space, family, spec, k, cap)
                .map_err(|err| Error::Precondition(format!("k = ({}, {}): {err}", k.fine, k.volume)))?;
            Ok((k, e.log_sup_norm(cap)?))
        })
        .collect::<Result<_>>()?;
    let log_value = per_k.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    Ok(SeminormEstimate {
        scale: spec.scale(),
        value: log_value.exp(),
        log_value,
        k_range,
        still_growing: still_growing(&per_k),
        per_k,
    })
}

/// Along each volume slice, the last increment of the log norm is positive and at least
/// half the one before it.
fn still_growing(per_k: &[(RefinementStep, f64)]) -> bool {
    let mut volumes: Vec<u32> = per_k.iter().map(|p| p.0.volume).collect();
    volumes.dedup();
    volumes.into_iter().any(|v| {
        let mut seq: Vec<(u32, f64)> = per_k.iter().filter(|p| p.0.volume == v).map(|p| (p.0.fine, p.1)).collect();
        seq.sort_by_key(|p| p.0);
        if seq.len() < 3 {
            return false;
        }
        let j = seq.len() - 1;
        let last = seq[j].1 - seq[j - 1].1;
        let prev = seq[j - 1].1 - seq[j - 2].1;
        last > GROWTH_TOL * seq[j].1.abs().max(1.0) && last >= 0.5 * prev
    })
}

/// The face coupling `h(u, s)` behind an action `v[h]` with `w(x, y) = ∫ h(x, s) h(y, s) ds`.
#[derive(Clone)]
pub enum CouplingProfile {
    Exp(ExpCouplingFamily),
    Generic { name: String, h: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>, face_order: usize },
}

impl fmt::Debug for CouplingProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl CouplingProfile {
    pub fn generic(name: impl Into<String>, face_order: usize, h: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        CouplingProfile::Generic { name: name.into(), h: Arc::new(h), face_order }
    }

    pub fn name(&self) -> String {
        match self {
            CouplingProfile::Exp(f) => format!("exp-coupling(y={})", f.profile().name()),
            CouplingProfile::Generic { name, .. } => name.clone(),
        }
    }

    pub fn h(&self, u: f64, s: f64) -> f64 {
        match self {
            CouplingProfile::Exp(f) => f.h(u, s),
            CouplingProfile::Generic { h, .. } => h(u, s),
        }
    }

    /// The action `v[h]`.
    pub fn action(&self, space: &SiteSpace) -> Result<LatticeAction> {
        match self {
            CouplingProfile::Exp(f) => Ok(LatticeAction::ExpCoupling(f.clone())),
            CouplingProfile::Generic { name, h, face_order } => {
                let (nodes, weights) = unit_legendre(*face_order)?;
                let h = h.clone();
                let w = PairWeight::new(format!("∫{name}⊗{name}"), move |x, y| {
                    nodes.iter().zip(&weights).map(|(&s, &ws)| ws * h(x, s) * h(y, s)).sum()
                });
                Ok(LatticeAction::FaceCoupling(FaceCouplingAction::new(w, space)?))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSettings {
    /// Points per axis of the first pass, endpoints included.
    pub points: usize,
    /// The second pass divides the spacing by this factor around each extremum.
    pub refine: usize,
    /// Use the closed-form extrema for exp couplings with a monotone profile.
    pub analytic: bool,
}

impl Default for GridSettings {
    fn default() -> Self {
        GridSettings { points: 33, refine: 4, analytic: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IsrBounds {
    /// `inf_s ⟨Ω, h(s_1)⋯h(s_2d) Ω⟩` for the unrescaled `h`.
    pub i: f64,
    pub s: f64,
    /// `ln` of the factor that makes `sup |h| = 1`.
    pub log_rescale: f64,
    /// `ln R` computed from the rescaled `h`.
    pub log_r: f64,
    pub r: f64,
    pub method: String,
    pub k_range: KRange,
}

/// `(e^Y - 1) / Y`, the base integral of `∏_Γ exp(u y(s_Γ))` over `u ∈ [0, 1]`.
fn exp_mean(y: f64) -> f64 {
    if y == 0.0 {
        1.0
    } else {
        y.exp_m1() / y
    }
}

/// Minimum and maximum of `g` over `[0,1]^dim` by a uniform grid and one refinement
/// pass around each extremum.
fn grid_extrema(dim: usize, grid: GridSettings, g: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Result<(f64, f64)> {
    if grid.points < 2 || grid.refine < 1 {
        return Err(Error::Precondition("grid needs at least 2 points per axis and refine ≥ 1".into()));
    }
    let h = 1.0 / (grid.points - 1) as f64;
    let coarse: Vec<f64> = (0..grid.points).map(|j| j as f64 * h).collect();
    let scan = |axes: &[Vec<f64>]| -> ((f64, Vec<f64>), (f64, Vec<f64>)) {
        let sizes: Vec<usize> = axes.iter().map(Vec::len).collect();
        let total: usize = sizes.iter().product();
        let point = |mut i: usize| -> Vec<f64> {
            let mut s = vec![0.0; dim];
            for a in (0..dim).rev() {
                s[a] = axes[a][i % sizes[a]];
                i /= sizes[a];
            }
            s
        };
        (0..total)
            .into_par_iter()
            .map(|i| {
                let s = point(i);
                let v = g(&s);
                ((v, s.clone()), (v, s))
            })
            .reduce(
                || ((f64::INFINITY, vec![]), (f64::NEG_INFINITY, vec![])),
                |a, b| {
                    let lo = if b.0 .0 < a.0 .0 { b.0 } else { a.0 };
                    let hi = if b.1 .0 > a.1 .0 { b.1 } else { a.1 };
                    (lo, hi)
                },
            )
    };
    let ((lo, arg_lo), (hi, arg_hi)) = scan(&vec![coarse; dim]);
    let local = |center: &[f64]| -> Vec<Vec<f64>> {
        let r = grid.refine as i64;
        center
            .iter()
            .map(|&c| {
                let mut ax: Vec<f64> = (-r..=r).map(|j| (c + j as f64 * h / r as f64).clamp(0.0, 1.0)).collect();
                ax.dedup();
                ax
            })
            .collect()
    };
    let ((lo2, _), _) = scan(&local(&arg_lo));
    let (_, (hi2, _)) = scan(&local(&arg_hi));
    Ok((lo.min(lo2), hi.max(hi2)))
}

/// `I`, `S` and `R` for the coupling `h` at `spec`, with `R` maximized over `k_range`.
pub fn isr_bounds(
    profile: &CouplingProfile,
    space: &SiteSpace,
    spec: &LatticeSpec,
    k_range: KRange,
    grid: GridSettings,
) -> Result<IsrBounds> {
    let d = spec.dim();
    let two_d = 2 * d;
    let (i, s, log_sup_h, method) = match profile {
        CouplingProfile::Exp(f) => {
            let log_sup = f.y_max().max(0.0);
            if grid.analytic && f.profile().is_monotone() {
                (exp_mean(f.r(d)), exp_mean(f.q(d)), log_sup, "analytic".to_string())
            } else {
                let g = |s: &[f64]| exp_mean(s.iter().map(|&v| f.profile().eval(v)).sum());
                let (lo, hi) = grid_extrema(two_d, grid, &g)?;
                (lo, hi, log_sup, format!("grid {}x{}", grid.points, grid.refine))
            }
        }
        CouplingProfile::Generic { h, .. } => {
            if space.kind() == SiteKind::RealLine {
                return Err(Error::Unsupported("coupling bounds need a bounded value space".into()));
            }
            let (pts, w) = (space.points(), space.weights());
            let g = |s: &[f64]| -> f64 {
                pts.iter().zip(w).map(|(&x, &wx)| wx * s.iter().map(|&si| h(x, si)).product::<f64>()).sum()
            };
            let (lo, hi) = grid_extrema(two_d, grid, &g)?;
            let sups: Vec<f64> = (0..grid.points)
                .into_par_iter()
                .map(|j| {
                    let sj = j as f64 / (grid.points - 1) as f64;
                    pts.iter().map(|&x| h(x, sj).abs()).fold(0.0, f64::max)
                })
                .collect();
            let sup = sups.into_iter().fold(0.0, f64::max);
            (lo, hi, sup.ln(), format!("grid {}x{}", grid.points, grid.refine))
        }
    };
    let log_rescale = -log_sup_h;
    let (ln_i, ln_s) = (i.ln(), s.ln());
    let ln_s_tilde = ln_s + two_d as f64 * log_rescale;
    let tau_n = spec.cube_count() as f64;
    let mut log_r = f64::NEG_INFINITY;
    for k in k_range.steps() {
        let tau = spec.refined(k)?.cube_count() as f64;
        let ratio = if ln_s == ln_i { 0.0 } else { tau * (ln_s - ln_i) };
        log_r = log_r.max(ratio - tau_n * ln_s_tilde);
    }
    if !(i > 0.0) {
        log_r = f64::INFINITY;
    }
    Ok(IsrBounds { i, s, log_rescale, log_r, r: log_r.exp(), method, k_range })
}

/// `ln sup_k γ_{n+k}^{-τ(n)}` for ultra-local families with `γ_n = ⟨Ω, w_n Ω⟩`.
pub fn ultra_local_log_bound(
    space: &SiteSpace,
    family: &ActionFamily,
    spec: &LatticeSpec,
    k_range: KRange,
) -> Result<f64> {
    let tau_n = spec.cube_count() as f64;
    let mut best = f64::NEG_INFINITY;
    for k in k_range.steps() {
        let fine = spec.refined(k)?;
        let LatticeAction::UltraLocal(a) = family.at(&fine) else {
            return Err(Error::Precondition("ultra-local bound needs an ultra-local family".into()));
        };
        if !a.is_uniform() {
            return Err(Error::Precondition("ultra-local bound needs the same weight on every cube".into()));
        }
        let gamma = site_expectation(space, a.at(0))?;
        best = best.max(-tau_n * gamma.ln());
    }
    Ok(best)
}

#[derive(Clone, Debug)]
pub enum BoundSource {
    Coupling { profile: CouplingProfile, grid: GridSettings },
    UltraLocal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Certified,
    BoundViolated,
    NotCertified,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenormCertificate {
    pub scale: Scale,
    pub family: String,
    pub log_z: f64,
    pub seminorm: SeminormEstimate,
    pub log_bound: f64,
    pub bound: f64,
    pub isr: Option<IsrBounds>,
    pub verdict: Verdict,
    pub reason: Option<String>,
}

/// Relative tolerance of `1 ≤ [[r_ω v]] ≤ R`.
pub const CERTIFICATE_TOL: f64 = 1e-9;

pub fn renormalizability_check(
    space: &SiteSpace,
    family: &ActionFamily,
    bound: &BoundSource,
    spec: &LatticeSpec,
    k_range: KRange,
    cap: u64,
) -> Result<RenormCertificate> {
    let renormalized = multiplicative_renormalize(space, family.clone(), cap);
    let log_z = renormalized.log_z(spec)?;
    let seminorm = seminorm_estimate(space, &renormalized, spec, k_range, cap)?;
    let (log_bound, isr) = match bound {
        BoundSource::Coupling { profile, grid } => {
            let b = isr_bounds(profile, space, spec, k_range, *grid)?;
            (b.log_r, Some(b))
        }
        BoundSource::UltraLocal => (ultra_local_log_bound(space, family, spec, k_range)?, None),
    };
    let tol = CERTIFICATE_TOL.ln_1p();
    let (verdict, reason) = if !log_bound.is_finite() {
        (Verdict::NotCertified, Some("R is infinite".to_string()))
    } else if seminorm.still_growing {
        (Verdict::NotCertified, Some("seminorm still growing at the edge of the searched k range".to_string()))
    } else if seminorm.log_value < -tol || seminorm.log_value > log_bound + tol {
        let msg = format!("seminorm {:e} outside [1, {:e}]", seminorm.value, log_bound.exp());
        (Verdict::BoundViolated, Some(msg))
    } else {
        (Verdict::Certified, None)
    };
    Ok(RenormCertificate {
        scale: spec.scale(),
        family: ScaleFamily::name(family),
        log_z,
        seminorm,
        log_bound,
        bound: log_bound.exp(),
        isr,
        verdict,
        reason,
    })
}

/// Quadratic part `⟨φ, A φ⟩` of `-ln v` around a constant configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct FreePart {
    pub a: DMatrix<f64>,
    pub base_point: f64,
    pub step: f64,
}

impl FreePart {
    pub fn quadratic(&self, phi: &[f64]) -> f64 {
        let p = nalgebra::DVector::from_column_slice(phi);
        p.dot(&(&self.a * &p))
    }

    /// `exp(-⟨φ, A φ⟩)`.
    pub fn weight(&self, phi: &[f64]) -> f64 {
        (-self.quadratic(phi)).exp()
    }

    /// The gaussian weight as an action on fluctuations around the base point.
    pub fn gaussian_action(&self) -> LatticeAction {
        let n = self.a.nrows();
        let m: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| 2.0 * self.a[(i, j)]).collect()).collect();
        LatticeAction::Custom(CustomAction::gaussian(m))
    }
}

/// `A = ½ ∂∂(-ln v)` at the constant configuration `u_o` by central differences.
pub fn free_part_quadratic(
    log_v: &(dyn Fn(&[f64]) -> f64 + Sync),
    n_sites: usize,
    u_o: f64,
    step: f64,
) -> Result<FreePart> {
    if !(step > 0.0) {
        return Err(Error::Precondition(format!("finite-difference step {step} must be positive")));
    }
    let s = |offsets: &[(usize, f64)]| -> Result<f64> {
        let mut u = vec![u_o; n_sites];
        for &(i, d) in offsets {
            u[i] += d;
        }
        let lv = log_v(&u);
        if !lv.is_finite() {
            return Err(Error::Positivity(format!("v is not positive near the base point {u_o}")));
        }
        Ok(-lv)
    };
    let centre = s(&[])?;
    let pairs: Vec<(usize, usize)> = (0..n_sites).flat_map(|i| (i..n_sites).map(move |j| (i, j))).collect();
    let h = step;
    let entries: Vec<(usize, usize, f64)> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let second = if i == j {
                (s(&[(i, h)])? - 2.0 * centre + s(&[(i, -h)])?) / (h * h)
            } else {
                (s(&[(i, h), (j, h)])? - s(&[(i, h), (j, -h)])? - s(&[(i, -h), (j, h)])? + s(&[(i, -h), (j, -h)])?)
                    / (4.0 * h * h)
            };
            Ok((i, j, 0.5 * second))
        })
        .collect::<Result<_>>()?;
    let mut a = DMatrix::zeros(n_sites, n_sites);
    for (i, j, v) in entries {
        a[(i, j)] = v;
        a[(j, i)] = v;
    }
    Ok(FreePart { a, base_point: u_o, step })
}

/// [`free_part_quadratic`] for a lattice action.
pub fn free_part_of_action(action: &LatticeAction, torus: &Torus, u_o: f64, step: f64) -> Result<FreePart> {
    free_part_quadratic(&|u| action.log_weight(torus, u), torus.cube_count(), u_o, step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{ScalarActionParams, UltraLocalAction, YProfile};
    use crate::exact::DEFAULT_EXACT_CAP;
    use crate::sitespace::SiteObservable;

    const CAP: u64 = DEFAULT_EXACT_CAP;

    fn spec(d: usize, n0: i32, n1: i32) -> LatticeSpec {
        LatticeSpec::new(3, d, Scale::new(n0, n1)).unwrap()
    }

    fn ising_weight(gamma: f64) -> SiteObservable {
        // w(+1) = 1, w(-1) = 2γ - 1 has mean γ.
        SiteObservable::new("w", move |x| if x > 0.0 { 1.0 } else { 2.0 * gamma - 1.0 })
    }

    #[test]
    fn tower_property_on_a_chain() {
        let s = SiteSpace::ising();
        let sp = spec(1, 0, 1);
        let fine = Torus::new(sp.refined(RefinementStep::new(2, 0)).unwrap());
        let a = crate::gibbs::LatticeObservable::pair(1, SiteObservable::identity(), 13, SiteObservable::power(2));
        let f = observable_model(&s, fine.cube_count(), &a).unwrap();
        let d = tower_property_check(&s, &sp, RefinementStep::new(1, 0), RefinementStep::new(2, 0), &f, CAP).unwrap();
        assert!(d < 1e-13, "{d}");
        let wrong_way = tower_property_check(&s, &sp, RefinementStep::new(2, 0), RefinementStep::new(1, 0), &f, CAP);
        assert!(matches!(wrong_way, Err(Error::Precondition(_))));
    }

    #[test]
    fn unit_maps_to_unit() {
        let s = SiteSpace::ising();
        let sp = spec(1, 0, 1);
        for k in [RefinementStep::new(1, 0), RefinementStep::new(0, 1)] {
            let e = effective_action(&s, &ActionFamily::Fixed(LatticeAction::Unit), &sp, k, CAP).unwrap();
            assert!(e.dense(CAP).unwrap().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        }
    }

    #[test]
    fn single_site_slots() {
        let s = SiteSpace::ising();
        let sp = spec(1, 0, 1);
        let k = RefinementStep::new(1, 0);
        let a = SiteObservable::new("p", |x| (1.0 + x) / 2.0 * 0.8 + 0.1);
        let at_dist = observable_model(&s, 9, &LatticeObservable::single(4, a.clone())).unwrap();
        let e = conditional_expectation(&s, &sp, k, &at_dist, CAP).unwrap();
        let want = observable_model(&s, 3, &LatticeObservable::single(1, a.clone())).unwrap();
        assert_eq!(e.dense(CAP).unwrap(), dense_values(&want, CAP).unwrap());
        let off = observable_model(&s, 9, &LatticeObservable::single(5, a.clone())).unwrap();
        let e = conditional_expectation(&s, &sp, k, &off, CAP).unwrap();
        let mean = site_expectation(&s, &a).unwrap();
        assert!(e.dense(CAP).unwrap().iter().all(|&v| (v - mean).abs() < 1e-15));
    }

    #[test]
    fn ultra_local_effective_action() {
        let s = SiteSpace::ising();
        let sp = spec(2, 0, 1);
        let w = ising_weight(0.7);
        let fam = ActionFamily::Fixed(LatticeAction::UltraLocal(UltraLocalAction::new(w.clone(), &s).unwrap()));
        let e = effective_action(&s, &fam, &sp, RefinementStep::new(1, 0), CAP).unwrap();
        let vals = e.dense(CAP).unwrap();
        let factor = 0.7f64.powi(81 - 9);
        for (i, v) in vals.iter().enumerate() {
            let x = decode(i, 2, 9);
            let prod: f64 = x.iter().map(|&j| w.eval(s.points()[j])).product();
            assert!((v - prod * factor).abs() <= 1e-12 * (prod * factor).abs());
        }
    }

    #[test]
    fn ring_matches_enumeration() {
        let s = SiteSpace::ising();
        let sp = spec(1, 0, 1);
        let w = PairWeight::ising(0.4);
        let action = LatticeAction::FaceCoupling(FaceCouplingAction::new(w, &s).unwrap());
        let fine = sp.refined(RefinementStep::new(1, 0)).unwrap();
        let torus = Torus::new(fine);
        let model = action.factor_model(&torus, &s).unwrap().unwrap();
        let ring = conditional_expectation(&s, &sp, RefinementStep::new(1, 0), &model, CAP).unwrap();
        assert_eq!(ring.route, Route::RingTransfer);
        let brute =
            conditional_expectation_fn(&s, &sp, RefinementStep::new(1, 0), &|u| action.weight(&torus, u), CAP).unwrap();
        for (a, b) in ring.dense(CAP).unwrap().iter().zip(brute.dense(CAP).unwrap()) {
            assert!((a - b).abs() < 1e-12 * b.abs());
        }
    }

    #[test]
    fn renormalized_partition_is_one() {
        let s = SiteSpace::unit_interval(4).unwrap();
        let fam = ActionFamily::Fixed(LatticeAction::ExpCoupling(
            ExpCouplingFamily::new(YProfile::affine(1.0, 1.0), 4).unwrap(),
        ));
        let r = multiplicative_renormalize(&s, fam, CAP);
        for sp in [spec(1, 0, 1), spec(1, 1, 1), spec(2, 0, 1)] {
            let a = r.action_at(&sp).unwrap();
            assert!(log_partition_at(&s, &a, &sp, CAP).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn ultra_local_certificate() {
        let s = SiteSpace::ising();
        let sp = spec(2, 0, 1);
        let fam = ActionFamily::Fixed(LatticeAction::UltraLocal(UltraLocalAction::new(ising_weight(0.7), &s).unwrap()));
        let cert = renormalizability_check(&s, &fam, &BoundSource::UltraLocal, &sp, KRange::new(1, 1), CAP).unwrap();
        assert_eq!(cert.verdict, Verdict::Certified, "{cert:?}");
        assert!(cert.seminorm.value > 1.0);
        assert!((cert.log_bound + 9.0 * 0.7f64.ln()).abs() < 1e-12);
        // sup w / γ per cube.
        assert!((cert.seminorm.log_value - 9.0 * (1.0f64 / 0.7).ln()).abs() < 1e-9);
    }

    #[test]
    fn vanishing_gamma_is_not_certified() {
        let s = SiteSpace::unit_interval(16).unwrap();
        let fam = ActionFamily::per_scale("exp(-b^n u)", |sp| {
            let lam = 3f64.powi(sp.scale().fine);
            let space = SiteSpace::unit_interval(16).unwrap();
            LatticeAction::UltraLocal(UltraLocalAction::new(SiteObservable::new("w", move |x| (-lam * x).exp()), &space).unwrap())
        });
        let cert =
            renormalizability_check(&s, &fam, &BoundSource::UltraLocal, &spec(1, 0, 1), KRange::new(3, 0), CAP).unwrap();
        assert_eq!(cert.verdict, Verdict::NotCertified, "{cert:?}");
    }

    #[test]
    fn isr_closed_forms() {
        let s = SiteSpace::unit_interval(16).unwrap();
        let sp = spec(1, 0, 1);
        let flat = CouplingProfile::Exp(ExpCouplingFamily::new(YProfile::constant(1.0), 8).unwrap());
        let b = isr_bounds(&flat, &s, &sp, KRange::default(), GridSettings::default()).unwrap();
        let want = (std::f64::consts::E.powi(2) - 1.0) / 2.0;
        assert!((b.i - want).abs() < 1e-12 && (b.s - want).abs() < 1e-12);
        let ramp = CouplingProfile::Exp(ExpCouplingFamily::new(YProfile::affine(1.0, 1.0), 8).unwrap());
        let grid = GridSettings { analytic: false, ..GridSettings::default() };
        let g = isr_bounds(&ramp, &s, &sp, KRange::default(), grid).unwrap();
        let a = isr_bounds(&ramp, &s, &sp, KRange::default(), GridSettings::default()).unwrap();
        assert!((g.i - exp_mean(2.0)).abs() < 1e-6 * exp_mean(2.0));
        assert!((g.s - exp_mean(4.0)).abs() < 1e-6 * exp_mean(4.0));
        assert!((a.log_r - g.log_r).abs() < 1e-6 * a.log_r.abs());
    }

    #[test]
    fn constant_coupling_collapses() {
        let s = SiteSpace::unit_interval(8).unwrap();
        let sp = spec(1, 0, 1);
        let one = CouplingProfile::generic("1", 4, |_, _| 1.0);
        let b = isr_bounds(&one, &s, &sp, KRange::default(), GridSettings::default()).unwrap();
        assert_eq!((b.i, b.s, b.log_r), (1.0, 1.0, 0.0));
        let half = CouplingProfile::generic("1/2", 4, |_, _| 0.5);
        let b = isr_bounds(&half, &s, &sp, KRange::default(), GridSettings::default()).unwrap();
        assert!((b.i - b.s).abs() < 1e-15 && b.log_r.abs() < 1e-12);
        let fam = ActionFamily::Fixed(one.action(&s).unwrap());
        let bound = BoundSource::Coupling { profile: one, grid: GridSettings::default() };
        let cert = renormalizability_check(&s, &fam, &bound, &sp, KRange::new(2, 1), CAP).unwrap();
        assert_eq!(cert.verdict, Verdict::Certified);
        assert!(cert.seminorm.log_value.abs() < 1e-12);
    }

    #[test]
    fn free_part_examples() {
        let torus = Torus::new(spec(1, 0, 1));
        let fp = free_part_of_action(&LatticeAction::Unit, &torus, 0.0, 1e-4).unwrap();
        assert!(fp.a.iter().all(|&v| v == 0.0));
        let p = ScalarActionParams::new(0.0, vec![0.8], Default::default()).unwrap();
        let fp = free_part_of_action(&LatticeAction::Scalar(p), &torus, 0.0, 1e-4).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 0.8 } else { 0.0 };
                assert!((fp.a[(i, j)] - want).abs() < 1e-6);
            }
        }
        let bad = LatticeAction::Custom(CustomAction::new("zero", |_| 0.0));
        assert!(free_part_of_action(&bad, &torus, 0.0, 1e-4).is_err());
    }
}
