use std::collections::BTreeMap;

use blockspin::action::{ActionFamily, LatticeAction};
use blockspin::blockspin::{state_consistency_check, tower_flow, verify_blockspin_axioms};
use blockspin::duality::{duality_identity_check, DualModel};
use blockspin::gibbs::{correlation_length_fit, GibbsState, LatticeObservable, Observable};
use blockspin::lattice::{LatticeSpec, Torus};
use blockspin::renorm::{renormalizability_check, seminorm_estimate, BoundSource, CouplingProfile, GridSettings, Verdict};
use blockspin::rng::derive_seed;
use blockspin::symmetry::{default_rp_basis, invariance_check, rp_gram_check, site_generators, unit_translations, ReflectionStructure};
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Model, ObservableConfig, SiteFunction, TaskConfig};
use crate::error::CliError;
use crate::report::{Cell, Table, TaskReport, TaskVerdict};

type TaskResult = Result<(TaskVerdict, Value, Value, Vec<Table>), CliError>;

pub fn run_task(cfg: &ExperimentConfig, model: &Model, index: usize, task: &TaskConfig) -> Result<TaskReport, CliError> {
    let seed = cfg.task_seed(index);
    let out = match task {
        TaskConfig::Rgflow { observables } => rgflow(cfg, model, seed, observables.as_deref()),
        TaskConfig::RpCheck { axes } => rp_check(cfg, model, seed, axes.as_deref()),
        TaskConfig::InvarianceCheck { tolerance } => invariance(cfg, model, seed, *tolerance),
        TaskConfig::RenormCheck { grid } => renorm_check(cfg, model, *grid),
        TaskConfig::DualityCheck { tolerance } => duality_check(cfg, model, *tolerance),
        TaskConfig::Correlate { function, fit_max_distance, expected_length, length_tolerance } => {
            correlate(cfg, model, seed, function.as_ref(), *fit_max_distance, *expected_length, *length_tolerance)
        }
        TaskConfig::AxiomsCheck { k1, k2, consistency_tolerance } => {
            let (k1, k2) = (*k1, *k2);
            let axioms = verify_blockspin_axioms(cfg.block_spin, &model.spec, k1, k2)?;
            let consistency = state_consistency_check(
                cfg.block_spin,
                &model.space,
                &model.spec,
                k1,
                &site_generators(&model.space),
                *consistency_tolerance,
                seed,
            )?;
            let pass = axioms.passed() && consistency.within_tolerance;
            let table = Table {
                name: "axioms-check".into(),
                columns: vec!["check", "passed", "defect"],
                rows: vec![
                    vec![Cell::Text("cosheaf".into()), Cell::Int(axioms.cosheaf as i64), Cell::Float(axioms.cosheaf_defect)],
                    vec![Cell::Text("locality".into()), Cell::Int(axioms.locality as i64), Cell::OptFloat(None)],
                    vec![
                        Cell::Text("covariance".into()),
                        Cell::Int(axioms.covariance as i64),
                        Cell::Float(axioms.covariance_defect),
                    ],
                    vec![
                        Cell::Text("state_consistency".into()),
                        Cell::Int(consistency.within_tolerance as i64),
                        Cell::Float(consistency.max_defect),
                    ],
                ],
            };
            Ok((
                verdict(pass),
                json!({ "kind": cfg.block_spin, "spec": model.spec, "k1": k1, "k2": k2, "consistency_tolerance": consistency_tolerance }),
                json!({ "axioms": axioms, "state_consistency": consistency }),
                vec![table],
            ))
        }
    };
    let (verdict, inputs, result, tables) =
        out.map_err(|e| CliError::Task { index, task: task.name(), source: Box::new(e) })?;
    Ok(TaskReport { index, task: task.name().to_string(), verdict, inputs, result, tables })
}

fn verdict(pass: bool) -> TaskVerdict {
    if pass {
        TaskVerdict::Pass
    } else {
        TaskVerdict::Fail
    }
}

fn state_at(cfg: &ExperimentConfig, model: &Model, spec: &LatticeSpec, seed: u64) -> Result<GibbsState, CliError> {
    Ok(GibbsState::new(Torus::new(*spec), model.space.clone(), model.action.clone(), cfg.estimator.build(seed))?)
}

fn neighbour(torus: &Torus) -> usize {
    torus.step(0, 0, 1)
}

fn default_observables(torus: &Torus, a: &blockspin::sitespace::SiteObservable) -> Vec<LatticeObservable> {
    vec![LatticeObservable::single(0, a.clone()), LatticeObservable::pair(0, a.clone(), neighbour(torus), a.clone())]
}

fn rgflow(cfg: &ExperimentConfig, model: &Model, seed: u64, observables: Option<&[ObservableConfig]>) -> TaskResult {
    let torus = Torus::new(model.spec);
    let obs = match observables {
        Some(list) => list.iter().map(|o| o.build(&torus, &model.space)).collect::<Result<Vec<_>, _>>()?,
        None => default_observables(&torus, &blockspin::sitespace::SiteObservable::identity()),
    };
    let steps = cfg.k_range.steps();
    let states = |spec: &LatticeSpec| {
        state_at(cfg, model, spec, derive_seed(seed, spec.cube_count() as u64)).map_err(|e| match e {
            CliError::Core(c) => c,
            other => blockspin::Error::Precondition(other.to_string()),
        })
    };
    let rows = tower_flow(cfg.block_spin, &states, &model.spec, &steps, &obs)?;
    let family = ActionFamily::Fixed(model.action.clone());
    let seminorm = seminorm_estimate(&model.space, &family, &model.spec, cfg.k_range, cfg.estimator.cap());
    let (seminorm, seminorm_error) = match seminorm {
        Ok(s) => (Some(s), None),
        Err(e) => {
            log::warn!("rgflow: effective actions unavailable: {e}");
            (None, Some(e.to_string()))
        }
    };
    let table = Table {
        name: "rgflow".into(),
        columns: vec!["k0", "k1", "observable_id", "value", "stderr"],
        rows: rows
            .iter()
            .map(|r| {
                vec![
                    Cell::Int(r.k.fine as i64),
                    Cell::Int(r.k.volume as i64),
                    Cell::Int(r.observable_id as i64),
                    Cell::Float(r.value),
                    Cell::OptFloat(r.stderr),
                ]
            })
            .collect(),
    };
    Ok((
        TaskVerdict::Info,
        json!({
            "kind": cfg.block_spin,
            "spec": model.spec,
            "k_list": steps,
            "observables": obs.iter().map(LatticeObservable::name).collect::<Vec<_>>(),
        }),
        json!({ "tower": rows, "seminorm": seminorm, "seminorm_error": seminorm_error }),
        vec![table],
    ))
}

fn rp_check(cfg: &ExperimentConfig, model: &Model, seed: u64, axes: Option<&[usize]>) -> TaskResult {
    let state = state_at(cfg, model, &model.spec, seed)?;
    let torus = state.torus().clone();
    let axes: Vec<usize> = axes.map(<[usize]>::to_vec).unwrap_or_else(|| (0..torus.dim()).collect());
    let mut reports = Vec::new();
    for &axis in &axes {
        let rs = ReflectionStructure::new(torus.clone(), axis)?;
        reports.push(rp_gram_check(&state, axis, &default_rp_basis(&rs, &model.space))?);
    }
    let table = Table {
        name: "rp-check".into(),
        columns: vec!["axis", "basis_size", "min_eigenvalue", "norm", "hermitian_defect", "psd"],
        rows: reports
            .iter()
            .map(|g| {
                vec![
                    Cell::Int(g.axis as i64),
                    Cell::Int(g.basis.len() as i64),
                    Cell::Float(g.min_eigenvalue),
                    Cell::Float(g.norm),
                    Cell::Float(g.hermitian_defect),
                    Cell::Int(g.psd as i64),
                ]
            })
            .collect(),
    };
    Ok((
        verdict(reports.iter().all(|g| g.psd)),
        json!({ "spec": model.spec, "action": model.action.name(), "axes": axes }),
        json!({ "gram": reports }),
        vec![table],
    ))
}

fn invariance(cfg: &ExperimentConfig, model: &Model, seed: u64, tolerance: f64) -> TaskResult {
    let state = state_at(cfg, model, &model.spec, seed)?;
    let torus = state.torus();
    let obs: Vec<LatticeObservable> =
        site_generators(&model.space).iter().flat_map(|a| default_observables(torus, a)).collect();
    let generators = unit_translations(torus.dim());
    let defect = invariance_check(&state, &generators, &obs)?;
    Ok((
        verdict(defect <= tolerance),
        json!({
            "spec": model.spec,
            "action": model.action.name(),
            "generators": generators,
            "observables": obs.iter().map(LatticeObservable::name).collect::<Vec<_>>(),
            "tolerance": tolerance,
        }),
        json!({ "max_defect": defect }),
        Vec::new(),
    ))
}

fn renorm_check(cfg: &ExperimentConfig, model: &Model, grid: GridSettings) -> TaskResult {
    let bound = match (&model.action, cfg.action.exp_family()?) {
        (_, Some(f)) => BoundSource::Coupling { profile: CouplingProfile::Exp(f), grid },
        (LatticeAction::UltraLocal(_), None) => BoundSource::UltraLocal,
        (other, None) => {
            return Err(CliError::Unsupported(format!("no renormalizability bound for action {}", other.name())));
        }
    };
    let family = ActionFamily::Fixed(model.action.clone());
    let cert = renormalizability_check(&model.space, &family, &bound, &model.spec, cfg.k_range, cfg.estimator.cap())?;
    let table = Table {
        name: "renorm-check".into(),
        columns: vec!["k0", "k1", "log_norm"],
        rows: cert
            .seminorm
            .per_k
            .iter()
            .map(|(k, v)| vec![Cell::Int(k.fine as i64), Cell::Int(k.volume as i64), Cell::Float(*v)])
            .collect(),
    };
    Ok((
        verdict(cert.verdict == Verdict::Certified),
        json!({ "spec": model.spec, "family": cert.family, "k_range": cfg.k_range, "grid": grid }),
        serde_json::to_value(&cert)?,
        vec![table],
    ))
}

fn duality_check(cfg: &ExperimentConfig, model: &Model, tolerance: f64) -> TaskResult {
    let Some(family) = cfg.action.exp_family()? else {
        return Err(CliError::Unsupported("duality-check needs an exp_coupling action".into()));
    };
    let torus = Torus::new(model.spec);
    let dual = DualModel::from_exp(torus.clone(), model.space.clone(), &family)?;
    let obs = default_observables(&torus, &blockspin::sitespace::SiteObservable::identity());
    let checks = obs
        .iter()
        .map(|o| duality_identity_check(&dual, o, cfg.estimator.cap()))
        .collect::<Result<Vec<_>, _>>()?;
    let table = Table {
        name: "duality-check".into(),
        columns: vec!["observable", "primal", "dual", "defect"],
        rows: checks
            .iter()
            .map(|c| vec![Cell::Text(c.observable.clone()), Cell::Float(c.lhs), Cell::Float(c.rhs), Cell::Float(c.defect)])
            .collect(),
    };
    Ok((
        verdict(checks.iter().all(|c| c.defect <= tolerance)),
        json!({ "spec": model.spec, "model": dual.name(), "tolerance": tolerance }),
        json!({ "checks": checks }),
        vec![table],
    ))
}

fn correlate(
    cfg: &ExperimentConfig,
    model: &Model,
    seed: u64,
    function: Option<&SiteFunction>,
    fit_max_distance: Option<f64>,
    expected_length: Option<f64>,
    length_tolerance: Option<f64>,
) -> TaskResult {
    let state = state_at(cfg, model, &model.spec, seed)?;
    let torus = state.torus().clone();
    let a = function.unwrap_or(&SiteFunction::Identity).build(&model.space)?;
    let n = torus.cube_count();
    let mut obs: Vec<Observable> = (0..n).map(|c| Observable::Product(LatticeObservable::single(c, a.clone()))).collect();
    let mut pairs = Vec::new();
    for c1 in 0..n {
        for c2 in c1 + 1..n {
            pairs.push((c1, c2));
            obs.push(Observable::Product(LatticeObservable::pair(c1, a.clone(), c2, a.clone())));
        }
    }
    let e = state.measure(&obs)?;
    // Distances keyed in units of 1e-9 so equal classes merge exactly.
    let mut classes: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for (i, &(c1, c2)) in pairs.iter().enumerate() {
        let d = torus.index_distance(&torus.cube(c1), &torus.cube(c2));
        let corr = e[n + i].value - e[c1].value * e[c2].value;
        let entry = classes.entry((d * 1e9).round() as u64).or_insert((d, 0.0, 0));
        entry.1 += corr.abs();
        entry.2 += 1;
    }
    let series: Vec<(f64, f64)> = classes.values().map(|&(d, s, k)| (d, s / k as f64)).collect();
    let max_d = fit_max_distance.unwrap_or(torus.side() as f64 / 3.0);
    let window: Vec<(f64, f64)> = series.iter().copied().filter(|&(d, _)| d <= max_d + 1e-9).collect();
    let fit = correlation_length_fit(&window)?;
    let pass = match expected_length {
        Some(l) => (fit.length - l).abs() <= length_tolerance.unwrap_or(0.05) * l.abs(),
        None => true,
    };
    let table = Table {
        name: "correlate".into(),
        columns: vec!["distance", "mean_abs_corr", "K_fit", "ell_fit"],
        rows: series
            .iter()
            .map(|&(d, c)| vec![Cell::Float(d), Cell::Float(c), Cell::Float(fit.amplitude), Cell::Float(fit.length)])
            .collect(),
    };
    Ok((
        if expected_length.is_some() { verdict(pass) } else { TaskVerdict::Info },
        json!({
            "spec": model.spec,
            "action": model.action.name(),
            "function": a.name(),
            "fit_max_distance": max_d,
            "expected_length": expected_length,
            "length_tolerance": length_tolerance,
        }),
        json!({ "series": series, "fit": fit }),
        vec![table],
    ))
}
