//! Time reflections and reflexion positivity, translation invariance of states, and
//! smeared observables with their translation-continuity modulus.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gibbs::{GibbsState, LatticeObservable, Observable};
use crate::lattice::Torus;
use crate::sitespace::{PairWeight, SiteKind, SiteObservable, SiteSpace};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layer {
    /// Cubes fixed by the reflection.
    Zero,
    Plus,
    Minus,
}

/// The reflection `c_μ ↦ -c_μ mod L` through the centres of the cubes with `c_μ = 0`.
#[derive(Clone, Debug)]
pub struct ReflectionStructure {
    torus: Torus,
    axis: usize,
}

impl ReflectionStructure {
    pub fn new(torus: Torus, axis: usize) -> Result<Self> {
        if axis >= torus.dim() {
            return Err(Error::OutOfRange(format!("axis {axis} on a {}-dimensional torus", torus.dim())));
        }
        if torus.side() % 2 == 0 {
            return Err(Error::InvalidLattice(format!("reflection layers need an odd side, got {}", torus.side())));
        }
        Ok(ReflectionStructure { torus, axis })
    }

    pub fn torus(&self) -> &Torus {
        &self.torus
    }

    pub fn axis(&self) -> usize {
        self.axis
    }

    pub fn theta(&self, cube: usize) -> usize {
        let l = self.torus.side();
        let c = self.torus.coord(cube, self.axis);
        let target = (l - c) % l;
        self.torus.step(cube, self.axis, target as i64 - c as i64)
    }

    pub fn layer(&self, cube: usize) -> Layer {
        let c = self.torus.coord(cube, self.axis);
        if c == 0 {
            Layer::Zero
        } else if c <= (self.torus.side() - 1) / 2 {
            Layer::Plus
        } else {
            Layer::Minus
        }
    }

    pub fn layer_cubes(&self, layer: Layer) -> Vec<usize> {
        (0..self.torus.cube_count()).filter(|&c| self.layer(c) == layer).collect()
    }

    /// `j_μ(a)`: every factor moves to the reflected cube. Observables are real, so the
    /// conjugation acts trivially.
    pub fn reflect(&self, obs: &LatticeObservable) -> LatticeObservable {
        LatticeObservable { factors: obs.factors.iter().map(|(c, a)| (self.theta(*c), a.clone())).collect() }
    }

    fn supported_on_nonnegative(&self, obs: &LatticeObservable) -> bool {
        obs.cubes().iter().all(|&c| self.layer(c) != Layer::Minus)
    }
}

/// `j_μ` applied to a lattice observable.
pub fn time_reflection(rs: &ReflectionStructure, obs: &LatticeObservable) -> LatticeObservable {
    rs.reflect(obs)
}

/// Site observables used to build Gram bases: the label indicators but the last on
/// finite spaces, `u` and `u²` otherwise.
pub fn site_generators(space: &SiteSpace) -> Vec<SiteObservable> {
    match space.kind() {
        SiteKind::FiniteSpin => {
            let pts = space.points();
            pts[..pts.len() - 1]
                .iter()
                .map(|&v| SiteObservable::projection(format!("1[u={v}]"), move |x| x == v))
                .collect()
        }
        _ => vec![SiteObservable::identity(), SiteObservable::power(2)],
    }
}

pub const MAX_RP_BASIS: usize = 256;

/// `1`, single factors on layers `0 ∪ +`, and products of two factors on distinct
/// cubes of the `+` layer; at most [`MAX_RP_BASIS`] elements.
pub fn default_rp_basis(rs: &ReflectionStructure, space: &SiteSpace) -> Vec<LatticeObservable> {
    let gens = site_generators(space);
    let mut basis = vec![LatticeObservable::unit()];
    let mut cubes = rs.layer_cubes(Layer::Zero);
    cubes.extend(rs.layer_cubes(Layer::Plus));
    cubes.sort_unstable();
    for &c in &cubes {
        for g in &gens {
            basis.push(LatticeObservable::single(c, g.clone()));
        }
    }
    let plus = rs.layer_cubes(Layer::Plus);
    for (i, &c1) in plus.iter().enumerate() {
        for &c2 in &plus[i + 1..] {
            for g1 in &gens {
                for g2 in &gens {
                    basis.push(LatticeObservable::pair(c1, g1.clone(), c2, g2.clone()));
                }
            }
        }
    }
    basis.truncate(MAX_RP_BASIS);
    basis
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GramReport {
    pub axis: usize,
    pub basis: Vec<String>,
    pub matrix: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub min_eigenvalue: f64,
    /// Spectral norm.
    pub norm: f64,
    pub hermitian_defect: f64,
    pub psd: bool,
}

/// Relative tolerance on the smallest Gram eigenvalue.
pub const PSD_TOL: f64 = 1e-10;

/// `M_ij = ⟨η, j_μ(a_i) a_j⟩` and its spectrum.
pub fn rp_gram_check(state: &GibbsState, axis: usize, basis: &[LatticeObservable]) -> Result<GramReport> {
    let rs = ReflectionStructure::new(state.torus().clone(), axis)?;
    if let Some(bad) = basis.iter().find(|b| !rs.supported_on_nonnegative(b)) {
        return Err(Error::Precondition(format!("basis element {} touches the negative layer", bad.name())));
    }
    let n = basis.len();
    let reflected: Vec<LatticeObservable> = basis.iter().map(|a| rs.reflect(a)).collect();
    let obs: Vec<Observable> = (0..n * n)
        .map(|ij| Observable::Product(reflected[ij / n].times(&basis[ij % n])))
        .collect();
    let values = state.measure(&obs)?;
    let m = DMatrix::from_fn(n, n, |i, j| values[i * n + j].value);
    let hermitian_defect = (0..n)
        .flat_map(|i| (0..n).map(move |j| (i, j)))
        .map(|(i, j)| (m[(i, j)] - m[(j, i)]).abs())
        .fold(0.0, f64::max);
    let sym = (&m + m.transpose()) * 0.5;
    let mut eigenvalues: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let min_eigenvalue = eigenvalues.first().copied().unwrap_or(0.0);
    let norm = eigenvalues.iter().map(|v| v.abs()).fold(0.0, f64::max);
    Ok(GramReport {
        axis,
        basis: basis.iter().map(LatticeObservable::name).collect(),
        matrix: (0..n).map(|i| (0..n).map(|j| m[(i, j)]).collect()).collect(),
        psd: min_eigenvalue >= -PSD_TOL * norm,
        eigenvalues,
        min_eigenvalue,
        norm,
        hermitian_defect,
    })
}

/// `max |⟨η, β_g a⟩ - ⟨η, a⟩|` over generators and observables.
pub fn invariance_check(state: &GibbsState, generators: &[Vec<i64>], observables: &[LatticeObservable]) -> Result<f64> {
    let torus = state.torus();
    let mut obs: Vec<Observable> = observables.iter().cloned().map(Observable::Product).collect();
    for g in generators {
        if g.len() != torus.dim() {
            return Err(Error::Precondition(format!("translation {g:?} has the wrong dimension")));
        }
        obs.extend(observables.iter().map(|a| Observable::Product(a.translate(torus, g))));
    }
    let e = state.measure(&obs)?;
    let k = observables.len();
    Ok((k..e.len()).map(|i| (e[i].value - e[i % k].value).abs()).fold(0.0, f64::max))
}

/// The unit translations along every axis.
pub fn unit_translations(dim: usize) -> Vec<Vec<i64>> {
    (0..dim)
        .map(|a| {
            let mut g = vec![0; dim];
            g[a] = 1;
            g
        })
        .collect()
}

type TestFunction = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// `Φ_n(f ⊗ a)`: the lattice sum `b^{-d n⁰} Σ_{x'} f(x' - x) β_{x'}(a)`.
#[derive(Clone)]
pub struct SmearedObservable {
    name: String,
    f: TestFunction,
    a: SiteObservable,
    /// Largest radius, in physical units, of the truncated lattice sum.
    pub max_radius: f64,
    /// Truncation stops once a shell adds at most this fraction of the `ℓ¹` mass.
    pub tail_tol: f64,
}

impl fmt::Debug for SmearedObservable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Φ({} ⊗ {})", self.name, self.a.name())
    }
}

/// Lattice points at Chebyshev distance exactly `r` from the origin.
fn shell(dim: usize, r: i64) -> Vec<Vec<i64>> {
    let side = (2 * r + 1) as usize;
    (0..side.pow(dim as u32))
        .map(|mut i| {
            (0..dim)
                .map(|_| {
                    let v = (i % side) as i64 - r;
                    i /= side;
                    v
                })
                .collect::<Vec<i64>>()
        })
        .filter(|p| p.iter().any(|v| v.abs() == r))
        .collect()
}

impl SmearedObservable {
    pub fn new(name: impl Into<String>, a: SiteObservable, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        SmearedObservable { name: name.into(), f: Arc::new(f), a, max_radius: 50.0, tail_tol: 1e-12 }
    }

    /// `f(x) = (2πσ²)^{-d/2} exp(-|x - c|² / 2σ²)`.
    pub fn gaussian(a: SiteObservable, centre: Vec<f64>, sigma: f64) -> Self {
        let name = format!("gauss(σ={sigma})");
        let mut s = SmearedObservable::new(name, a, move |x| {
            let d = x.len() as f64;
            let r2: f64 = x.iter().zip(&centre).map(|(a, b)| (a - b).powi(2)).sum();
            (-r2 / (2.0 * sigma * sigma)).exp() / (2.0 * std::f64::consts::PI * sigma * sigma).powf(d / 2.0)
        });
        s.max_radius = (40.0 * sigma).max(10.0);
        s
    }

    pub fn site_observable(&self) -> &SiteObservable {
        &self.a
    }

    pub fn test_function(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    /// Sum `g(p)` over lattice index points `p` shell by shell around `centre` until a
    /// shell adds at most `tail_tol` of the running total of `|g|`.
    fn shell_sum(&self, torus: &Torus, centre: &[f64], mut g: impl FnMut(&[i64]) -> f64) -> Result<f64> {
        let spacing = torus.spec().spacing();
        let base: Vec<i64> = centre.iter().map(|x| (x / spacing).round() as i64).collect();
        let mut mass = 0.0;
        let mut r = 0i64;
        loop {
            if r as f64 * spacing > self.max_radius {
                return Err(Error::Precondition(format!(
                    "tail of {} not below {:e} within radius {}",
                    self.name, self.tail_tol, self.max_radius
                )));
            }
            let mut shell_mass = 0.0;
            for off in shell(torus.dim(), r) {
                let p: Vec<i64> = base.iter().zip(&off).map(|(b, o)| b + o).collect();
                shell_mass += g(&p).abs();
            }
            mass += shell_mass;
            if r >= 1 && shell_mass <= self.tail_tol * mass {
                return Ok(mass);
            }
            r += 1;
        }
    }

    /// Per-cube coefficients of `Φ(f ⊗ a)(x)`, folded onto the torus, and `b^{-dn⁰} Σ |f|`.
    pub fn coefficients(&self, torus: &Torus, x: &[f64]) -> Result<(Vec<f64>, f64)> {
        if x.len() != torus.dim() {
            return Err(Error::Precondition(format!("point {x:?} has the wrong dimension")));
        }
        let spacing = torus.spec().spacing();
        let vol = spacing.powi(torus.dim() as i32);
        let mut coeff = vec![0.0; torus.cube_count()];
        let l1 = self.shell_sum(torus, x, |p| {
            let y: Vec<f64> = p.iter().zip(x).map(|(&pi, &xi)| pi as f64 * spacing - xi).collect();
            let v = (self.f)(&y);
            coeff[torus.translate_id(0, p)] += vol * v;
            v
        })?;
        Ok((coeff, vol * l1))
    }

    /// `‖Φ(f ⊗ a)(x)‖ ≤ b^{-dn⁰} Σ |f(x' - x)| sup |a|`.
    pub fn norm_bound(&self, torus: &Torus, space: &SiteSpace, x: &[f64]) -> Result<f64> {
        Ok(self.coefficients(torus, x)?.1 * self.a.sup_norm(space))
    }

    /// `b^{-dn⁰} Σ_{y'} |f(y' - y) - f(y' - y - shift)| sup |a|` maximized over a grid of
    /// `samples^d` base points `y` in one lattice cell together with `extra` points.
    pub fn continuity_modulus(
        &self,
        torus: &Torus,
        space: &SiteSpace,
        shift: &[f64],
        samples: usize,
        extra: &[Vec<f64>],
    ) -> Result<f64> {
        let d = torus.dim();
        if shift.len() != d {
            return Err(Error::Precondition(format!("shift {shift:?} has the wrong dimension")));
        }
        if shift.iter().all(|&s| s == 0.0) {
            return Ok(0.0);
        }
        let spacing = torus.spec().spacing();
        let vol = spacing.powi(d as i32);
        let samples = samples.max(1);
        let mut points: Vec<Vec<f64>> = (0..samples.pow(d as u32))
            .map(|mut i| {
                (0..d)
                    .map(|_| {
                        let v = (i % samples) as f64 / samples as f64 * spacing;
                        i /= samples;
                        v
                    })
                    .collect()
            })
            .collect();
        points.extend(extra.iter().cloned());
        let mut best = 0.0f64;
        for y in &points {
            let total = self.shell_sum(torus, y, |p| {
                let a: Vec<f64> = p.iter().zip(y).map(|(&pi, &yi)| pi as f64 * spacing - yi).collect();
                let b: Vec<f64> = a.iter().zip(shift).map(|(ai, si)| ai - si).collect();
                (self.f)(&a) - (self.f)(&b)
            })?;
            best = best.max(vol * total);
        }
        Ok(best * self.a.sup_norm(space))
    }

    /// `Φ(f ⊗ a)(x)` as a function of the configuration.
    pub fn at(&self, torus: &Torus, x: &[f64]) -> Result<Observable> {
        let (coeff, _) = self.coefficients(torus, x)?;
        let a = self.a.clone();
        let terms: Vec<(usize, f64)> = coeff.into_iter().enumerate().filter(|(_, c)| *c != 0.0).collect();
        Ok(Observable::function(format!("{self:?}({x:?})"), move |u| terms.iter().map(|&(c, w)| w * a.eval(u[c])).sum()))
    }
}

/// `⟨η, ∏_j Φ(f_j ⊗ a_j)(x_j)⟩`.
pub fn smeared_observable_eval(state: &GibbsState, factors: &[(SmearedObservable, Vec<f64>)]) -> Result<f64> {
    let torus = state.torus();
    let parts: Vec<Observable> = factors.iter().map(|(s, x)| s.at(torus, x)).collect::<Result<_>>()?;
    let product = parts.into_iter().fold(Observable::Product(LatticeObservable::unit()), |acc, o| acc.times(&o));
    Ok(state.expectation(&product)?.value)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShiftCheck {
    pub before: f64,
    pub after: f64,
    pub observed: f64,
    /// `Σ_j M_j ∏_{i≠j} N_i` with `M_j` the continuity modulus of factor `j` and `N_i`
    /// a norm bound valid before and after the shift.
    pub bound: f64,
    pub within: bool,
}

/// Shift every evaluation point by `shift` and compare the observed change with the
/// telescoped continuity bound.
pub fn smeared_shift_check(
    state: &GibbsState,
    factors: &[(SmearedObservable, Vec<f64>)],
    shift: &[f64],
    samples: usize,
) -> Result<ShiftCheck> {
    let torus = state.torus();
    let space = state.space();
    let moved: Vec<(SmearedObservable, Vec<f64>)> = factors
        .iter()
        .map(|(s, x)| (s.clone(), x.iter().zip(shift).map(|(a, b)| a + b).collect()))
        .collect();
    let before = smeared_observable_eval(state, factors)?;
    let after = smeared_observable_eval(state, &moved)?;
    let mut moduli = Vec::with_capacity(factors.len());
    let mut norms = Vec::with_capacity(factors.len());
    for ((s, x), (_, y)) in factors.iter().zip(&moved) {
        moduli.push(s.continuity_modulus(torus, space, shift, samples, std::slice::from_ref(x))?);
        norms.push(s.norm_bound(torus, space, x)?.max(s.norm_bound(torus, space, y)?));
    }
    let bound: f64 = (0..factors.len())
        .map(|j| moduli[j] * norms.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, n)| n).product::<f64>())
        .sum();
    let observed = (before - after).abs();
    Ok(ShiftCheck { before, after, observed, bound, within: observed <= bound * (1.0 + 1e-12) + 1e-15 })
}

/// A face weight on `{-1, +1}` with a negative diagonal entry. It is not of the form
/// `v[w]` with positive `w`, and its state fails reflexion positivity on `L = 3`.
pub fn signed_counterexample_weight(space: &SiteSpace) -> Result<PairWeight> {
    PairWeight::tabulated("signed", space, vec![vec![-1.0, 0.5], vec![0.5, 2.0]])
}
