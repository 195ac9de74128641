//! Action weights `v_n` on lattice configurations.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::{Factor, FactorModel};
use crate::lattice::{LatticeSpec, Torus};
use crate::sitespace::{unit_legendre, PairWeight, SiteObservable, SiteSpace};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KineticForm {
    /// `λ0 Σ_Γ (u(Δ1) - u(Δ0))^2`.
    #[default]
    SquaredDifference,
    /// `λ0 Σ_Γ (u(Δ1) - u(Δ0))`, which telescopes to zero on a torus.
    LinearAsWritten,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalarActionParams {
    pub lambda0: f64,
    /// `λ_1, .., λ_L` multiplying `u^2, .., u^{2L}`.
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub kinetic_form: KineticForm,
}

impl ScalarActionParams {
    pub fn new(lambda0: f64, lambdas: Vec<f64>, kinetic_form: KineticForm) -> Result<Self> {
        let p = ScalarActionParams { lambda0, lambdas, kinetic_form };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.lambda0.is_finite() || self.lambdas.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite("scalar action couplings".into()));
        }
        if let Some(&top) = self.lambdas.last() {
            if top <= 0.0 {
                return Err(Error::Precondition(format!("highest even coupling must be positive, got {top}")));
            }
        }
        Ok(())
    }

    pub fn potential(&self, x: f64) -> f64 {
        let x2 = x * x;
        let mut p = x2;
        let mut total = 0.0;
        for l in &self.lambdas {
            total += l * p;
            p *= x2;
        }
        total
    }

    fn kinetic(&self, diff: f64) -> f64 {
        match self.kinetic_form {
            KineticForm::SquaredDifference => self.lambda0 * diff * diff,
            KineticForm::LinearAsWritten => self.lambda0 * diff,
        }
    }
}

/// `u(Δ1) - u(Δ0)` across a face.
pub fn codifferential(torus: &Torus, u: &[f64], face: usize) -> f64 {
    let [a, b] = torus.face_cubes(face);
    u[b] - u[a]
}

pub fn scalar_action(torus: &Torus, params: &ScalarActionParams, u: &[f64]) -> f64 {
    let kinetic: f64 = (0..torus.face_count()).map(|f| params.kinetic(codifferential(torus, u, f))).sum();
    kinetic + u.iter().map(|&x| params.potential(x)).sum::<f64>()
}

/// `v[w] = ∏_faces w(u(Δ0), u(Δ1))` for a non-negative symmetric `w`.
#[derive(Clone, Debug)]
pub struct FaceCouplingAction {
    w: PairWeight,
}

impl FaceCouplingAction {
    pub fn new(w: PairWeight, space: &SiteSpace) -> Result<Self> {
        let table = w.matrix(space)?;
        if let Some(v) = table.iter().flatten().find(|&&v| v < 0.0) {
            return Err(Error::Positivity(format!("pair weight {} takes value {v}", w.name())));
        }
        if !w.is_symmetric_on(space, 1e-12) {
            return Err(Error::Precondition(format!("pair weight {} is not symmetric", w.name())));
        }
        Ok(FaceCouplingAction { w })
    }

    pub fn weight(&self) -> &PairWeight {
        &self.w
    }
}

pub fn face_coupling_weight(torus: &Torus, action: &FaceCouplingAction, u: &[f64]) -> Result<f64> {
    let mut v = 1.0;
    for (f, &[a, b]) in torus.face_table().iter().enumerate() {
        let x = action.w.eval(u[a], u[b]);
        if x.is_nan() || x <= 0.0 {
            let face = torus.faces().nth(f).expect("face in range");
            return Err(Error::Positivity(format!(
                "factor {x} on face {:?} axis {}",
                face.base.coords, face.axis
            )));
        }
        v *= x;
    }
    Ok(v)
}

/// `v = ∏_Δ w_Δ(u(Δ))` with `0 ≤ w ≤ 1`.
#[derive(Clone, Debug)]
pub struct UltraLocalAction {
    weights: SiteWeights,
}

#[derive(Clone, Debug)]
enum SiteWeights {
    Uniform(SiteObservable),
    PerCube(Vec<SiteObservable>),
}

fn check_unit_bounded(w: &SiteObservable, space: &SiteSpace) -> Result<()> {
    for v in space.tabulate(w)? {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::Positivity(format!("site weight {} takes value {v} outside [0, 1]", w.name())));
        }
    }
    Ok(())
}

impl UltraLocalAction {
    pub fn new(w: SiteObservable, space: &SiteSpace) -> Result<Self> {
        check_unit_bounded(&w, space)?;
        Ok(UltraLocalAction { weights: SiteWeights::Uniform(w) })
    }

    /// A different weight on every cube; breaks translation invariance.
    pub fn inhomogeneous(ws: Vec<SiteObservable>, space: &SiteSpace) -> Result<Self> {
        for w in &ws {
            check_unit_bounded(w, space)?;
        }
        Ok(UltraLocalAction { weights: SiteWeights::PerCube(ws) })
    }

    pub fn at(&self, cube: usize) -> &SiteObservable {
        match &self.weights {
            SiteWeights::Uniform(w) => w,
            SiteWeights::PerCube(ws) => &ws[cube % ws.len()],
        }
    }

    pub fn is_uniform(&self) -> bool {
        matches!(self.weights, SiteWeights::Uniform(_))
    }
}

/// Positive profile `y(s)` on `[0, 1]`.
#[derive(Clone)]
pub struct YProfile {
    name: String,
    f: Arc<dyn Fn(f64) -> f64 + Send + Sync>,
    monotone: bool,
}

impl fmt::Debug for YProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("YProfile").field("name", &self.name).field("monotone", &self.monotone).finish()
    }
}

impl YProfile {
    pub fn new(name: impl Into<String>, monotone: bool, f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        YProfile { name: name.into(), f: Arc::new(f), monotone }
    }

    pub fn constant(c: f64) -> Self {
        YProfile::new(format!("{c}"), true, move |_| c)
    }

    /// `offset + slope * s`.
    pub fn affine(offset: f64, slope: f64) -> Self {
        YProfile::new(format!("{offset}+{slope}s"), true, move |s| offset + slope * s)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn is_monotone(&self) -> bool {
        self.monotone
    }

    #[inline]
    pub fn eval(&self, s: f64) -> f64 {
        (self.f)(s)
    }
}

/// The coupling family `h(u, s) = exp(u y(s))` with `w(x, y) = ∫ h(x, s) h(y, s) ds`,
/// the `s`-integral taken by a fixed Gauss–Legendre rule.
#[derive(Clone, Debug)]
pub struct ExpCouplingFamily {
    y: YProfile,
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl ExpCouplingFamily {
    pub fn new(y: YProfile, face_order: usize) -> Result<Self> {
        let (nodes, weights) = unit_legendre(face_order)?;
        for &s in &nodes {
            let v = y.eval(s);
            if !(v >= 1.0 && v.is_finite()) {
                return Err(Error::Precondition(format!("profile {} is {v} < 1 at s = {s}", y.name())));
            }
        }
        Ok(ExpCouplingFamily { y, nodes, weights })
    }

    pub fn profile(&self) -> &YProfile {
        &self.y
    }

    /// Face-variable quadrature nodes on `[0, 1]`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    #[inline]
    pub fn h(&self, u: f64, s: f64) -> f64 {
        (u * self.y.eval(s)).exp()
    }

    pub fn y_max(&self) -> f64 {
        self.y_extreme(f64::max)
    }

    pub fn y_min(&self) -> f64 {
        self.y_extreme(f64::min)
    }

    /// Extremes of `y` over `[0, 1]`: endpoints for monotone profiles, else the face nodes
    /// together with the endpoints.
    fn y_extreme(&self, pick: fn(f64, f64) -> f64) -> f64 {
        let ends = pick(self.y.eval(0.0), self.y.eval(1.0));
        if self.y.monotone {
            ends
        } else {
            self.nodes.iter().map(|&s| self.y.eval(s)).fold(ends, pick)
        }
    }

    /// `2d sup y`.
    pub fn q(&self, dim: usize) -> f64 {
        2.0 * dim as f64 * self.y_max()
    }

    /// `2d inf y`.
    pub fn r(&self, dim: usize) -> f64 {
        2.0 * dim as f64 * self.y_min()
    }

    pub fn pair_weight(&self) -> PairWeight {
        let fam = self.clone();
        PairWeight::new(format!("exp-coupling(y={})", self.y.name()), move |x, y| {
            fam.nodes.iter().zip(&fam.weights).map(|(&s, &w)| w * fam.h(x, s) * fam.h(y, s)).sum()
        })
    }
}

/// `∫_{u0}^{u1} ∏_Γ h(u, s_Γ) du = Y^{-1} (exp(u1 Y) - exp(u0 Y))` with `Y = Σ_Γ y(s_Γ)`.
pub fn exp_coupling_h(family: &ExpCouplingFamily, u0: f64, u1: f64, s: &[f64]) -> Result<f64> {
    if u0 > u1 {
        return Err(Error::Precondition(format!("empty interval [{u0}, {u1}]")));
    }
    if let Some(v) = s.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::Precondition(format!("face value {v} outside [0, 1]")));
    }
    let y: f64 = s.iter().map(|&v| family.y.eval(v)).sum();
    if y <= 0.0 {
        return Err(Error::Precondition("profile sum must be positive".into()));
    }
    Ok(((u1 * y).exp() - (u0 * y).exp()) / y)
}

/// Arbitrary weight given as a function of the full configuration.
#[derive(Clone)]
pub struct CustomAction {
    name: String,
    f: Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl fmt::Debug for CustomAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomAction").field("name", &self.name).finish()
    }
}

impl CustomAction {
    pub fn new(name: impl Into<String>, f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        CustomAction { name: name.into(), f: Arc::new(f) }
    }

    /// `exp(-½ uᵀ M u)`.
    pub fn gaussian(m: Vec<Vec<f64>>) -> Self {
        CustomAction::new("gaussian", move |u| {
            let q: f64 = m.iter().zip(u).map(|(row, &ui)| ui * row.iter().zip(u).map(|(a, b)| a * b).sum::<f64>()).sum();
            (-0.5 * q).exp()
        })
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        (self.f)(u)
    }
}

#[derive(Clone, Debug)]
pub enum LatticeAction {
    /// `v ≡ 1`: the base product state.
    Unit,
    Scalar(ScalarActionParams),
    FaceCoupling(FaceCouplingAction),
    /// Face product with a weight that may be negative; not an admissible action, used to
    /// build counterexamples.
    SignedFaceCoupling(PairWeight),
    UltraLocal(UltraLocalAction),
    ExpCoupling(ExpCouplingFamily),
    Custom(CustomAction),
    /// `exp(log_factor) * inner`.
    Scaled { inner: Box<LatticeAction>, log_factor: f64 },
}

impl LatticeAction {
    pub fn scaled(self, log_factor: f64) -> LatticeAction {
        match self {
            LatticeAction::Scaled { inner, log_factor: l } => LatticeAction::Scaled { inner, log_factor: l + log_factor },
            other => LatticeAction::Scaled { inner: Box::new(other), log_factor },
        }
    }

    pub fn name(&self) -> String {
        match self {
            LatticeAction::Unit => "unit".into(),
            LatticeAction::Scalar(p) => format!("scalar(λ0={}, λ={:?})", p.lambda0, p.lambdas),
            LatticeAction::FaceCoupling(a) => format!("v[{}]", a.w.name()),
            LatticeAction::SignedFaceCoupling(w) => format!("signed[{}]", w.name()),
            LatticeAction::UltraLocal(a) => format!("ultra-local[{}]", a.at(0).name()),
            LatticeAction::ExpCoupling(f) => format!("exp-coupling(y={})", f.y.name()),
            LatticeAction::Custom(c) => c.name.clone(),
            LatticeAction::Scaled { inner, log_factor } => format!("exp({log_factor})*{}", inner.name()),
        }
    }

    /// Whether the weight commutes with lattice translations.
    pub fn is_translation_invariant(&self) -> bool {
        match self {
            LatticeAction::UltraLocal(a) => a.is_uniform(),
            LatticeAction::Custom(_) => false,
            LatticeAction::Scaled { inner, .. } => inner.is_translation_invariant(),
            _ => true,
        }
    }

    /// Whether the weight is known to be non-negative everywhere.
    pub fn is_nonnegative(&self) -> bool {
        match self {
            LatticeAction::SignedFaceCoupling(_) | LatticeAction::Custom(_) => false,
            LatticeAction::Scaled { inner, .. } => inner.is_nonnegative(),
            _ => true,
        }
    }

    /// The weight tabulated on the site space's points, or `None` for custom weights.
    pub fn factor_model(&self, torus: &Torus, space: &SiteSpace) -> Result<Option<FactorModel>> {
        let n = torus.cube_count();
        let m = space.size();
        let pts = space.points();
        let mut model = FactorModel::unit(n, m);
        let pair_table = |w: &PairWeight| -> Result<Vec<f64>> { Ok(w.matrix(space)?.into_iter().flatten().collect()) };
        let push_faces = |model: &mut FactorModel, table: Vec<f64>| -> Result<()> {
            for &[a, b] in torus.face_table() {
                model.push(Factor::pair(a, b, table.clone()))?;
            }
            Ok(())
        };
        match self {
            LatticeAction::Unit => {}
            LatticeAction::Scalar(p) => {
                let pot: Vec<f64> = pts.iter().map(|&x| (-p.potential(x)).exp()).collect();
                if p.lambdas.iter().any(|&l| l != 0.0) {
                    for c in 0..n {
                        model.push(Factor::site(c, pot.clone()))?;
                    }
                }
                if p.lambda0 != 0.0 {
                    let kin: Vec<f64> =
                        pts.iter().flat_map(|&x| pts.iter().map(move |&y| (-p.kinetic(y - x)).exp())).collect();
                    push_faces(&mut model, kin)?;
                }
            }
            LatticeAction::FaceCoupling(a) => push_faces(&mut model, pair_table(&a.w)?)?,
            LatticeAction::SignedFaceCoupling(w) => push_faces(&mut model, pair_table(w)?)?,
            LatticeAction::ExpCoupling(f) => push_faces(&mut model, pair_table(&f.pair_weight())?)?,
            LatticeAction::UltraLocal(a) => {
                for c in 0..n {
                    model.push(Factor::site(c, space.tabulate(a.at(c))?))?;
                }
            }
            LatticeAction::Custom(_) => return Ok(None),
            LatticeAction::Scaled { inner, log_factor } => {
                return Ok(inner.factor_model(torus, space)?.map(|m| m.scaled_log(*log_factor)));
            }
        }
        Ok(Some(model))
    }

    /// `v(u)` at real field values.
    pub fn weight(&self, torus: &Torus, u: &[f64]) -> f64 {
        match self {
            LatticeAction::Unit => 1.0,
            LatticeAction::Scalar(p) => (-scalar_action(torus, p, u)).exp(),
            LatticeAction::FaceCoupling(a) => face_product(torus, &a.w, u),
            LatticeAction::SignedFaceCoupling(w) => face_product(torus, w, u),
            LatticeAction::ExpCoupling(f) => face_product(torus, &f.pair_weight(), u),
            LatticeAction::UltraLocal(a) => u.iter().enumerate().map(|(c, &x)| a.at(c).eval(x)).product(),
            LatticeAction::Custom(c) => c.eval(u),
            LatticeAction::Scaled { inner, log_factor } => log_factor.exp() * inner.weight(torus, u),
        }
    }

    /// `ln v(u)`; `-inf` where `v` vanishes and NaN where it is negative.
    pub fn log_weight(&self, torus: &Torus, u: &[f64]) -> f64 {
        match self {
            LatticeAction::Unit => 0.0,
            LatticeAction::Scalar(p) => -scalar_action(torus, p, u),
            LatticeAction::Scaled { inner, log_factor } => log_factor + inner.log_weight(torus, u),
            LatticeAction::UltraLocal(a) => u.iter().enumerate().map(|(c, &x)| safe_ln(a.at(c).eval(x))).sum(),
            _ => {
                let pw = self.face_weight();
                match pw {
                    Some(w) => torus.face_table().iter().map(|&[a, b]| safe_ln(w.eval(u[a], u[b]))).sum(),
                    None => safe_ln(self.weight(torus, u)),
                }
            }
        }
    }

    /// Sum of the log factors that depend on `u[site]`, or the full log weight when the
    /// action has no local structure.
    pub fn local_log_weight(&self, torus: &Torus, u: &[f64], site: usize) -> f64 {
        match self {
            LatticeAction::Unit => 0.0,
            LatticeAction::Scalar(p) => {
                let kin: f64 = torus
                    .boundary_face_ids(site)
                    .into_iter()
                    .map(|f| p.kinetic(codifferential(torus, u, f)))
                    .sum();
                -(kin + p.potential(u[site]))
            }
            LatticeAction::UltraLocal(a) => safe_ln(a.at(site).eval(u[site])),
            LatticeAction::Scaled { inner, .. } => inner.local_log_weight(torus, u, site),
            LatticeAction::Custom(_) => self.log_weight(torus, u),
            _ => {
                let w = self.face_weight().expect("face action");
                torus
                    .boundary_face_ids(site)
                    .into_iter()
                    .map(|f| {
                        let [a, b] = torus.face_cubes(f);
                        safe_ln(w.eval(u[a], u[b]))
                    })
                    .sum()
            }
        }
    }

    fn face_weight(&self) -> Option<PairWeight> {
        match self {
            LatticeAction::FaceCoupling(a) => Some(a.w.clone()),
            LatticeAction::SignedFaceCoupling(w) => Some(w.clone()),
            LatticeAction::ExpCoupling(f) => Some(f.pair_weight()),
            _ => None,
        }
    }
}

fn safe_ln(v: f64) -> f64 {
    if v < 0.0 {
        f64::NAN
    } else {
        v.ln()
    }
}

fn face_product(torus: &Torus, w: &PairWeight, u: &[f64]) -> f64 {
    torus.face_table().iter().map(|&[a, b]| w.eval(u[a], u[b])).product()
}

/// An action for every scale.
#[derive(Clone)]
pub enum ActionFamily {
    Fixed(LatticeAction),
    PerScale { name: String, f: Arc<dyn Fn(&LatticeSpec) -> LatticeAction + Send + Sync> },
}

impl fmt::Debug for ActionFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActionFamily::Fixed(a) => f.debug_tuple("Fixed").field(a).finish(),
            ActionFamily::PerScale { name, .. } => f.debug_struct("PerScale").field("name", name).finish(),
        }
    }
}

impl ActionFamily {
    pub fn per_scale(name: impl Into<String>, f: impl Fn(&LatticeSpec) -> LatticeAction + Send + Sync + 'static) -> Self {
        ActionFamily::PerScale { name: name.into(), f: Arc::new(f) }
    }

    pub fn at(&self, spec: &LatticeSpec) -> LatticeAction {
        match self {
            ActionFamily::Fixed(a) => a.clone(),
            ActionFamily::PerScale { f, .. } => f(spec),
        }
    }
}

impl From<LatticeAction> for ActionFamily {
    fn from(a: LatticeAction) -> Self {
        ActionFamily::Fixed(a)
    }
}
