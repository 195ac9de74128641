//! Block-spin maps `p_(n,n+k)` between scales and the pullback of observables.

use rand::RngExt;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{decode, DEFAULT_EXACT_CAP};
use crate::gibbs::metropolis::sample_base;
use crate::gibbs::{Estimate, GibbsState, LatticeObservable, Observable};
use crate::lattice::{LatticeSpec, Refinement, RefinementStep, Torus};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sitespace::{site_expectation, SiteObservable, SiteSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockSpinKind {
    /// Keep the value at the centre cube of each block.
    Decimation,
    /// Average the values over each block.
    BlockAverage,
}

/// Coarse configuration `p(u)` from a fine one. Exterior fine cubes are ignored.
pub fn block_map(kind: BlockSpinKind, r: &Refinement, u_fine: &[f64]) -> Result<Vec<f64>> {
    if u_fine.len() != r.fine().cube_count() {
        return Err(Error::Precondition(format!(
            "fine configuration has {} values, lattice has {} cubes",
            u_fine.len(),
            r.fine().cube_count()
        )));
    }
    Ok(apply(kind, r, u_fine))
}

fn apply(kind: BlockSpinKind, r: &Refinement, u: &[f64]) -> Vec<f64> {
    match kind {
        BlockSpinKind::Decimation => r.distinguished().iter().map(|&f| u[f]).collect(),
        BlockSpinKind::BlockAverage => (0..r.coarse().cube_count())
            .map(|c| {
                let cover = r.cover(c);
                cover.iter().map(|&f| u[f]).sum::<f64>() / cover.len() as f64
            })
            .collect(),
    }
}

/// Check that a block-spin kind applies to a value space.
pub fn check_kind(kind: BlockSpinKind, space: &SiteSpace) -> Result<()> {
    if kind == BlockSpinKind::BlockAverage && !space.closed_under_averaging() {
        return Err(Error::Unsupported("block averages of finite spins leave the label set".into()));
    }
    Ok(())
}

/// `ι a = a ∘ p`. Decimation keeps product form; block averages become composed
/// evaluations.
pub fn pullback_observable(kind: BlockSpinKind, r: &Refinement, a: &LatticeObservable) -> Observable {
    match kind {
        BlockSpinKind::Decimation => Observable::Product(pullback_product(r, a)),
        BlockSpinKind::BlockAverage => {
            let r = r.clone();
            let a = a.clone();
            Observable::function(format!("avg[{}]", a.name()), move |u| a.eval(&apply(BlockSpinKind::BlockAverage, &r, u)))
        }
    }
}

/// Decimation pullback: every factor moves to the distinguished cube.
pub fn pullback_product(r: &Refinement, a: &LatticeObservable) -> LatticeObservable {
    LatticeObservable { factors: a.factors.iter().map(|(c, o)| (r.distinguished()[*c], o.clone())).collect() }
}

/// Pull back a general observable along `p`.
pub fn pullback(kind: BlockSpinKind, r: &Refinement, a: &Observable) -> Observable {
    match (kind, a) {
        (_, Observable::Product(p)) => pullback_observable(kind, r, p),
        (_, Observable::Function { name, f }) => {
            let (r, f) = (r.clone(), f.clone());
            Observable::function(format!("ι[{name}]"), move |u| f(&apply(kind, &r, u)))
        }
    }
}

/// `(β_g F)(u) = F(u(· + g))` for configuration functions.
pub fn translate_observable(torus: &Torus, a: &Observable, g: &[i64]) -> Observable {
    match a {
        Observable::Product(p) => Observable::Product(p.translate(torus, g)),
        Observable::Function { name, f } => {
            let (t, f, g) = (torus.clone(), f.clone(), g.to_vec());
            Observable::function(format!("β{g:?}[{name}]"), move |u| {
                let shifted: Vec<f64> = (0..u.len()).map(|c| u[t.translate_id(c, &g)]).collect();
                f(&shifted)
            })
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxiomReport {
    pub kind: BlockSpinKind,
    pub cosheaf: bool,
    pub locality: bool,
    pub covariance: bool,
    pub cosheaf_defect: f64,
    pub covariance_defect: f64,
    pub configurations_checked: usize,
    pub failures: Vec<String>,
}

impl AxiomReport {
    pub fn passed(&self) -> bool {
        self.cosheaf && self.locality && self.covariance
    }
}

fn probe_configurations(n: usize, seed: u64, random: usize) -> Vec<Vec<f64>> {
    let mut out: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut e = vec![0.0; n];
            e[i] = 1.0;
            e
        })
        .collect();
    let mut rng = rng_from_seed(seed);
    for _ in 0..random {
        out.push((0..n).map(|_| 2.0 * rng.random::<f64>() - 1.0).collect());
    }
    out
}

fn probe_observables(coarse: &Torus) -> Vec<LatticeObservable> {
    let n = coarse.cube_count();
    let cosine = SiteObservable::new("cos", f64::cos);
    let mut out = Vec::new();
    for c in 0..n {
        out.push(LatticeObservable::single(c, SiteObservable::identity()));
        out.push(LatticeObservable::single(c, cosine.clone()));
    }
    for c in 0..n {
        let partner = (c * 7 + 1) % n;
        out.push(LatticeObservable::pair(c, SiteObservable::power(2), partner, cosine.clone()));
    }
    out
}

const AXIOM_TOL: f64 = 1e-12;

/// Check the cosheaf, locality and covariance conditions for the maps from `spec`
/// refined by `k1`, then by `k2`.
pub fn verify_blockspin_axioms(
    kind: BlockSpinKind,
    spec: &LatticeSpec,
    k1: RefinementStep,
    k2: RefinementStep,
) -> Result<AxiomReport> {
    let r01 = Refinement::new(spec, k1)?;
    let r12 = Refinement::new(&spec.refined(k1)?, k2)?;
    let r02 = Refinement::new(spec, k1 + k2)?;
    let n2 = r02.fine().cube_count();
    let configs = probe_configurations(n2, 0x5eed, 32);
    let mut failures = Vec::new();

    // p_{n0,n1} ∘ p_{n1,n2} = p_{n0,n2}, also seen through observables.
    let mut cosheaf_defect = 0.0f64;
    let obs = probe_observables(r01.coarse());
    let twice: Vec<Observable> = obs.iter().map(|a| pullback(kind, &r12, &pullback_observable(kind, &r01, a))).collect();
    let once: Vec<Observable> = obs.iter().map(|a| pullback_observable(kind, &r02, a)).collect();
    for u in &configs {
        let via = apply(kind, &r01, &apply(kind, &r12, u));
        let direct = apply(kind, &r02, u);
        for (a, b) in via.iter().zip(&direct) {
            cosheaf_defect = cosheaf_defect.max((a - b).abs());
        }
        for (a, b) in twice.iter().zip(&once) {
            cosheaf_defect = cosheaf_defect.max((a.eval(u) - b.eval(u)).abs());
        }
    }
    let cosheaf = cosheaf_defect <= AXIOM_TOL;
    if !cosheaf {
        failures.push(format!("cosheaf defect {cosheaf_defect:e}"));
    }

    let mut locality = true;
    let mut covariance_defect = 0.0f64;
    for r in [&r01, &r02] {
        locality &= check_locality(kind, r, &mut failures);
        covariance_defect = covariance_defect.max(covariance(kind, r, &configs[n2..]));
    }
    let covariance = covariance_defect <= AXIOM_TOL;
    if !covariance {
        failures.push(format!("covariance defect {covariance_defect:e}"));
    }
    Ok(AxiomReport {
        kind,
        cosheaf,
        locality,
        covariance,
        cosheaf_defect,
        covariance_defect,
        configurations_checked: configs.len(),
        failures,
    })
}

/// The pullback of an observable on coarse cube `c` may only depend on fine cubes in the
/// block of `c`; probed by perturbing one fine value at a time.
fn check_locality(kind: BlockSpinKind, r: &Refinement, failures: &mut Vec<String>) -> bool {
    let nf = r.fine().cube_count();
    let mut rng = rng_from_seed(0x10ca1);
    let base: Vec<f64> = (0..nf).map(|_| rng.random::<f64>()).collect();
    let mut ok = true;
    for c in 0..r.coarse().cube_count() {
        let a = LatticeObservable::single(c, SiteObservable::new("exp", f64::exp));
        let pulled = pullback_observable(kind, r, &a);
        let v0 = pulled.eval(&base);
        let cover = r.cover(c);
        for f in 0..nf {
            let mut u = base.clone();
            u[f] += 0.5;
            if pulled.eval(&u) != v0 && !cover.contains(&f) {
                ok = false;
                failures.push(format!("pullback at coarse cube {c} depends on fine cube {f}"));
            }
        }
        if let Observable::Product(p) = &pulled {
            if p.cubes().iter().any(|f| !cover.contains(f)) {
                ok = false;
                failures.push(format!("pullback at coarse cube {c} leaves its block"));
            }
        }
    }
    ok
}

/// `max |ι β_g a - β_{g'} ι a|` over coarse translations `g` whose image does not wrap
/// when the fine torus is larger than the embedded coarse region.
fn covariance(kind: BlockSpinKind, r: &Refinement, configs: &[Vec<f64>]) -> f64 {
    let coarse = r.coarse();
    let d = coarse.dim();
    let side = coarse.side() as i64;
    let stride = (coarse.spec().base() as i64).pow(r.step().fine);
    let wraps = r.step().volume > 0;
    let gs: Vec<Vec<i64>> = (0..side.pow(d as u32))
        .map(|i| decode(i as usize, side as usize, d).into_iter().map(|x| x as i64).collect())
        .collect();
    let obs = probe_observables(coarse);
    let defects: Vec<f64> = gs
        .par_iter()
        .map(|g| {
            let mut worst = 0.0f64;
            for a in &obs {
                if wraps
                    && a.cubes().iter().any(|&c| (0..d).any(|ax| coarse.coord(c, ax) as i64 + g[ax] >= side))
                {
                    continue;
                }
                let fine_g: Vec<i64> = g.iter().map(|x| x * stride).collect();
                let lhs = pullback_observable(kind, r, &a.translate(coarse, g));
                let rhs = translate_observable(r.fine(), &pullback_observable(kind, r, a), &fine_g);
                for u in configs {
                    worst = worst.max((lhs.eval(u) - rhs.eval(u)).abs());
                }
            }
            worst
        })
        .collect();
    defects.into_iter().fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyEntry {
    pub observable: String,
    /// `ω_{n+k}(ι a)`.
    pub fine: f64,
    /// `ω_n(a)`.
    pub coarse: f64,
    pub sampled: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub kind: BlockSpinKind,
    pub max_defect: f64,
    pub within_tolerance: bool,
    pub entries: Vec<ConsistencyEntry>,
}

/// `ω_{n+k}(ι a)` vs `ω_n(a)` for the base product state over single- and two-factor
/// observables. Block averages are evaluated by enumerating one block when it fits the
/// exact cap, and by sampling with `seed` otherwise.
pub fn state_consistency_check(
    kind: BlockSpinKind,
    space: &SiteSpace,
    spec: &LatticeSpec,
    k: RefinementStep,
    observables: &[SiteObservable],
    tolerance: f64,
    seed: u64,
) -> Result<ConsistencyReport> {
    check_kind(kind, space)?;
    let r = Refinement::new(spec, k)?;
    let n = r.coarse().cube_count();
    let mut probes = Vec::new();
    for a in observables {
        probes.push(LatticeObservable::single(0, a.clone()));
        if n > 1 {
            probes.push(LatticeObservable::pair(0, a.clone(), n - 1, a.clone()));
        }
        probes.push(LatticeObservable::pair(0, a.clone(), 0, a.clone()));
    }
    let block = r.cover(0).len();
    let mut entries = Vec::new();
    for p in &probes {
        let coarse = product_state_expectation(space, p)?;
        let (fine, sampled) = match kind {
            BlockSpinKind::Decimation => (product_state_expectation(space, &pullback_product(&r, p))?, false),
            BlockSpinKind::BlockAverage => {
                let mut total = 1.0;
                let mut sampled = false;
                for (i, (_, a)) in p.merged().into_iter().enumerate() {
                    let (v, s) = block_mean_expectation(space, &a, block, derive_seed(seed, i as u64))?;
                    total *= v;
                    sampled |= s;
                }
                (total, sampled)
            }
        };
        entries.push(ConsistencyEntry { observable: p.name(), fine, coarse, sampled });
    }
    let max_defect = entries.iter().map(|e| (e.fine - e.coarse).abs()).fold(0.0, f64::max);
    Ok(ConsistencyReport { kind, max_defect, within_tolerance: max_defect <= tolerance, entries })
}

/// Expectation of a product observable in the base product state.
pub fn product_state_expectation(space: &SiteSpace, a: &LatticeObservable) -> Result<f64> {
    a.merged().iter().map(|(_, o)| site_expectation(space, o)).product()
}

const BLOCK_SAMPLES: usize = 1 << 18;

/// `E[a(mean of N iid base draws)]`.
fn block_mean_expectation(space: &SiteSpace, a: &SiteObservable, n: usize, seed: u64) -> Result<(f64, bool)> {
    let m = space.size();
    let grid = (m as f64).powi(n as i32);
    if grid <= DEFAULT_EXACT_CAP as f64 {
        let (p, w) = (space.points(), space.weights());
        let terms: Vec<f64> = (0..m.pow(n as u32))
            .into_par_iter()
            .map(|i| {
                let x = decode(i, m, n);
                let weight: f64 = x.iter().map(|&k| w[k]).product();
                let mean = x.iter().map(|&k| p[k]).sum::<f64>() / n as f64;
                weight * a.eval(mean)
            })
            .collect();
        return Ok((terms.iter().sum(), false));
    }
    let mut rng = rng_from_seed(seed);
    let mut acc = 0.0;
    for _ in 0..BLOCK_SAMPLES {
        let mean = (0..n).map(|_| sample_base(space, &mut rng)).sum::<f64>() / n as f64;
        acc += a.eval(mean);
    }
    Ok((acc / BLOCK_SAMPLES as f64, true))
}

/// Pulled-back expectations `⟨η_{n+k}, ι a⟩` along a list of refinements.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TowerRow {
    pub k: RefinementStep,
    pub observable_id: usize,
    pub observable: String,
    pub value: f64,
    pub stderr: Option<f64>,
    /// Change from the previous entry of the same observable.
    pub increment: Option<f64>,
}

pub fn tower_flow(
    kind: BlockSpinKind,
    states: &(dyn Fn(&LatticeSpec) -> Result<GibbsState> + Sync),
    base: &LatticeSpec,
    k_list: &[RefinementStep],
    observables: &[LatticeObservable],
) -> Result<Vec<TowerRow>> {
    let per_k: Vec<Vec<Estimate>> = k_list
        .par_iter()
        .map(|&k| {
            let r = Refinement::new(base, k)?;
            let state = states(r.fine().spec())
                .map_err(|e| Error::Precondition(format!("state at k = ({}, {}): {e}", k.fine, k.volume)))?;
            check_kind(kind, state.space())?;
            let pulled: Vec<Observable> = observables.iter().map(|a| pullback_observable(kind, &r, a)).collect();
            state
                .measure(&pulled)
                .map_err(|e| Error::Precondition(format!("estimator at k = ({}, {}): {e}", k.fine, k.volume)))
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (i, a) in observables.iter().enumerate() {
        let mut prev: Option<f64> = None;
        for (k, est) in k_list.iter().zip(&per_k) {
            let v = est[i].value;
            rows.push(TowerRow {
                k: *k,
                observable_id: i,
                observable: a.name(),
                value: v,
                stderr: est[i].stderr,
                increment: prev.map(|p| v - p),
            });
            prev = Some(v);
        }
    }
    Ok(rows)
}
