use std::path::Path;

use anyhow::{bail, Context};
use netdof::bounds::{balance_lambda, required_width, BalanceRule, BoundInputs, BoundReport};
use netdof::compress::{CompressTargets, CompressionPlan, CompressionReport, Compressor, WidthRule, EVAL_SAMPLES};
use netdof::estimators::{fit_rate, gen_data, rate_sweep, Estimator, RateFit, SweepConfig, WidthsRule};
use netdof::io::{
    load_model, read_dataset, save_model, write_csv, write_dataset, write_json, CompressRow, DofRow, PlanRow, SweepRow,
    SpectrumRow,
};
use netdof::net::{make_teacher, TeacherKind, TeacherSpec};
use netdof::spectral::{dof, feature_matrix, fit_decay, DecayFit, DofCurve, LayerSpectrum, Solver};
use netdof::{Matrix, Network, NormBudget, Spectrum};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentSpec, RunConfig};

/// A failure that does not stop the command but makes it exit nonzero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub context: String,
    pub message: String,
}

impl Failure {
    fn new(context: impl Into<String>, err: impl std::fmt::Display) -> Self {
        Self {
            context: context.into(),
            message: err.to_string(),
        }
    }
}

pub type Outcome = anyhow::Result<Vec<Failure>>;

/// Dataset inputs when one is configured, otherwise `synthetic_n` uniform draws.
fn inputs(cfg: &RunConfig, net: &Network) -> anyhow::Result<Matrix> {
    match &cfg.data {
        Some(p) => {
            let d = read_dataset(p, cfg.sigma).with_context(|| format!("reading data {}", p.display()))?;
            if d.input_dim() != net.input_dim() {
                bail!(
                    "data has {} input columns but the model expects {}",
                    d.input_dim(),
                    net.input_dim()
                );
            }
            Ok(d.x)
        }
        None => Ok(gen_data(net, cfg.synthetic_n, 0.0, cfg.budget.d_x, cfg.seed)?.x),
    }
}

fn load(cfg: &RunConfig) -> anyhow::Result<Network> {
    let p = cfg.model_path()?;
    load_model(p).with_context(|| format!("loading model {}", p.display()))
}

/// Spectrum of the kernel of layer `ℓ = 2..=L`, keyed by `ℓ`.
fn layer_spectra(net: &Network, x: &Matrix) -> anyhow::Result<Vec<(usize, LayerSpectrum<f64>)>> {
    (1..net.depth())
        .map(|k| {
            let ell = k + 1;
            let phi = feature_matrix(net, x, k).with_context(|| format!("layer {ell}: features"))?;
            let s = LayerSpectrum::from_features(&phi, Solver::Ql).with_context(|| format!("layer {ell}: spectrum"))?;
            Ok((ell, s))
        })
        .collect()
}

fn rule_for(net: &Network) -> BalanceRule {
    if net.depth() == 2 {
        BalanceRule::TwoLayer { d_x: net.input_dim() }
    } else {
        BalanceRule::Deep
    }
}

pub fn teacher(cfg: &RunConfig) -> Outcome {
    let spec = cfg
        .teacher
        .as_ref()
        .context("no teacher given; add a [teacher] table to the config")?;
    let net = make_teacher(spec)?;
    std::fs::create_dir_all(&cfg.out)?;
    save_model(&cfg.out.join("teacher.json"), &net)?;
    if let Some(n) = cfg.n {
        let data = gen_data(&net, n, cfg.sigma, spec.d_x_bound, cfg.seed)?;
        write_dataset(&cfg.out.join("data.csv"), &data)?;
    }
    Ok(Vec::new())
}

#[derive(Serialize)]
struct AnalyzeLayer {
    layer: usize,
    nodes: usize,
    nonzero: usize,
    clamped: usize,
    top: f64,
    decay: Option<DecayFit>,
    decay_error: Option<String>,
}

#[derive(Serialize)]
struct AnalyzeSummary<'a> {
    config: &'a RunConfig,
    samples: usize,
    layers: Vec<AnalyzeLayer>,
}

pub fn analyze(cfg: &RunConfig) -> Outcome {
    let net = load(cfg)?;
    let x = inputs(cfg, &net)?;
    std::fs::create_dir_all(&cfg.out)?;
    let mut layers = Vec::new();
    for (ell, ls) in layer_spectra(&net, &x)? {
        let spec = &ls.spectrum;
        let rows: Vec<SpectrumRow> = spec
            .eigenvalues
            .iter()
            .enumerate()
            .map(|(j, &mu_j)| SpectrumRow {
                layer: ell,
                j: j + 1,
                mu_j,
            })
            .collect();
        write_csv(&cfg.out.join(format!("spectrum_l{ell}.csv")), &rows)?;
        let dof_rows: Vec<DofRow> = match DofCurve::log_grid(spec, cfg.lambda_points) {
            Ok(grid) => DofCurve::evaluate(spec, &grid)?
                .points
                .into_iter()
                .map(|(lambda, dof)| DofRow { layer: ell, lambda, dof })
                .collect(),
            Err(_) => Vec::new(),
        };
        write_csv(&cfg.out.join(format!("dof_l{ell}.csv")), &dof_rows)?;
        let (decay, decay_error) = match fit_decay(spec) {
            Ok(f) => (Some(f), None),
            Err(e) => (None, Some(e.to_string())),
        };
        layers.push(AnalyzeLayer {
            layer: ell,
            nodes: ls.num_nodes(),
            nonzero: spec.nonzero_count(),
            clamped: spec.clamped,
            top: spec.top(),
            decay,
            decay_error,
        });
    }
    write_json(
        &cfg.out.join("analyze.json"),
        &AnalyzeSummary {
            config: cfg,
            samples: x.rows(),
            layers,
        },
    )?;
    Ok(Vec::new())
}

#[derive(Serialize)]
struct PlanReport<'a> {
    config: &'a RunConfig,
    n: usize,
    rows: &'a [PlanRow],
    bound: Option<BoundReport>,
    bound_error: Option<String>,
}

/// `λ` and width per layer: balanced at `n`, or from explicit `λ`s.
fn plan_rows(cfg: &RunConfig, net: &Network, spectra: &[(usize, Spectrum)], n: usize) -> anyhow::Result<Vec<PlanRow>> {
    let delta = cfg.budget.delta;
    if let Some(l) = &cfg.lambda {
        if l.len() != spectra.len() {
            bail!("{} lambdas given for {} layers", l.len(), spectra.len());
        }
        return spectra
            .iter()
            .zip(l)
            .map(|((ell, s), &lambda)| {
                let nd = dof(s, lambda)?;
                let m = if nd > 0.0 { required_width(nd, delta)?.m } else { 1 };
                Ok(PlanRow {
                    layer: *ell,
                    lambda,
                    dof: nd,
                    m_required: m,
                    converged: true,
                })
            })
            .collect();
    }
    let rule = rule_for(net);
    spectra
        .iter()
        .map(|(ell, s)| {
            let b = balance_lambda(s, n, delta, rule).with_context(|| format!("layer {ell}: balancing"))?;
            Ok(PlanRow {
                layer: *ell,
                lambda: b.lambda,
                dof: b.dof,
                m_required: b.m,
                converged: b.converged || b.degenerate,
            })
        })
        .collect()
}

pub fn plan(cfg: &RunConfig) -> Outcome {
    let net = load(cfg)?;
    let x = inputs(cfg, &net)?;
    let n = cfg.n.unwrap_or(x.rows());
    let spectra: Vec<(usize, Spectrum)> = layer_spectra(&net, &x)?
        .into_iter()
        .map(|(ell, s)| (ell, s.spectrum))
        .collect();
    let rows = plan_rows(cfg, &net, &spectra, n)?;
    let mut failures: Vec<Failure> = rows
        .iter()
        .filter(|r| !r.converged)
        .map(|r| Failure::new(format!("layer {}", r.layer), "balancing fixed point did not converge"))
        .collect();

    let mut widths = vec![net.input_dim()];
    widths.extend(rows.iter().map(|r| r.m_required));
    widths.push(1);
    let decay_s = spectra
        .iter()
        .map(|(_, s)| fit_decay(s).ok().map(|f| f.s))
        .collect::<Option<Vec<f64>>>();
    let inputs = BoundInputs {
        n,
        sigma: cfg.sigma,
        budget: cfg.budget,
        widths,
        lambdas: rows.iter().map(|r| r.lambda).collect(),
        decay_s,
    };
    let (bound, bound_error) = match BoundReport::compute(inputs) {
        Ok(b) => (Some(b), None),
        Err(e) => {
            failures.push(Failure::new("bound report", &e));
            (None, Some(e.to_string()))
        }
    };
    std::fs::create_dir_all(&cfg.out)?;
    write_csv(&cfg.out.join("plan.csv"), &rows)?;
    write_json(
        &cfg.out.join("bound_report.json"),
        &PlanReport {
            config: cfg,
            n,
            rows: &rows,
            bound,
            bound_error,
        },
    )?;
    Ok(failures)
}

#[derive(Serialize)]
struct CompressSummary<'a> {
    config: &'a RunConfig,
    targets: &'a CompressTargets,
    plan: Option<&'a CompressionPlan>,
    report: Option<&'a CompressionReport>,
    error: Option<String>,
}

fn compress_targets(cfg: &RunConfig, net: &Network, spectra: &[(usize, Spectrum)], n: usize) -> anyhow::Result<CompressTargets> {
    let hidden = &net.widths()[1..net.depth()];
    if let Some(w) = &cfg.widths {
        if w.len() != hidden.len() {
            bail!("{} widths given for {} hidden layers", w.len(), hidden.len());
        }
        return Ok(if w.as_slice() == hidden {
            CompressTargets::Identity
        } else {
            CompressTargets::Widths(w.clone())
        });
    }
    let lambdas = match &cfg.lambda {
        Some(l) => l.clone(),
        None => plan_rows(cfg, net, spectra, n)?.iter().map(|r| r.lambda).collect(),
    };
    Ok(CompressTargets::Lambdas {
        lambdas,
        rule: WidthRule::Theorem,
    })
}

pub fn compress(cfg: &RunConfig) -> Outcome {
    let net = load(cfg)?;
    let x = inputs(cfg, &net)?;
    let n = cfg.n.unwrap_or(x.rows());
    let x_eval = gen_data(&net, EVAL_SAMPLES, 0.0, cfg.budget.d_x, cfg.seed.wrapping_add(1))?.x;
    let comp = Compressor::new(&net, cfg.budget, &x, &x_eval)?;
    let spectra: Vec<(usize, Spectrum)> = (2..=net.depth())
        .map(|ell| (ell, comp.layer_spectrum(ell).spectrum.clone()))
        .collect();
    let targets = compress_targets(cfg, &net, &spectra, n)?;
    std::fs::create_dir_all(&cfg.out)?;
    let summary_path = cfg.out.join("compress_report.json");
    match comp.compress(&targets, cfg.seed) {
        Ok((small, plan, report)) => {
            save_model(&cfg.out.join("compressed.json"), &small)?;
            let rows: Vec<CompressRow> = report
                .layers
                .iter()
                .map(|l| CompressRow {
                    layer: l.ell,
                    lambda: l.lambda,
                    m: l.m,
                    dof: l.dof,
                    err_emp: l.err_emp,
                    err_guarantee: l.err_guarantee,
                    err_bound: l.err_bound,
                    weight_mass: l.weight_mass,
                })
                .collect();
            write_csv(&cfg.out.join("compress.csv"), &rows)?;
            write_json(
                &summary_path,
                &CompressSummary {
                    config: cfg,
                    targets: &targets,
                    plan: Some(&plan),
                    report: Some(&report),
                    error: None,
                },
            )?;
            Ok(report
                .norms
                .iter()
                .filter(|a| !a.ok)
                .map(|a| Failure::new(format!("layer {}", a.layer), "norm audit exceeded its cap"))
                .collect())
        }
        Err(e) => {
            write_json(
                &summary_path,
                &CompressSummary {
                    config: cfg,
                    targets: &targets,
                    plan: None,
                    report: None,
                    error: Some(e.to_string()),
                },
            )?;
            Ok(vec![Failure::new("compress", e)])
        }
    }
}

/// Rate exponent of the error bound for the given teacher, log factors aside.
pub fn target_exponent(spec: &TeacherSpec) -> Option<f64> {
    match spec.kind {
        TeacherKind::FiniteDim => Some(-1.0),
        TeacherKind::PolyDecay { s, .. } if spec.widths.len() == 3 => Some(-1.0 / (1.0 + s)),
        TeacherKind::PolyDecay { s, .. } => Some(-1.0 / (1.0 + 2.0 * s)),
        TeacherKind::KernelTwoLayer => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub estimator: Estimator,
    pub target_exponent: Option<f64>,
    pub fit: Option<RateFit>,
    pub null_level: Option<f64>,
    pub injected: bool,
    pub error: Option<String>,
}

fn teacher_label(spec: &TeacherSpec) -> String {
    match spec.kind {
        TeacherKind::FiniteDim => "finite_dim".into(),
        TeacherKind::PolyDecay { a, s } => format!("poly_decay_a{a}_s{s}"),
        TeacherKind::KernelTwoLayer => "kernel_two_layer".into(),
    }
}

fn sweep_config(cfg: &RunConfig, e: &ExperimentSpec) -> anyhow::Result<SweepConfig> {
    let mut s = SweepConfig::new(e.teacher.clone(), e.estimator, cfg.n_grid.clone());
    s.seeds = cfg.seeds;
    s.sigma = e.sigma.unwrap_or(cfg.sigma);
    s.budget = NormBudget::new(e.teacher.r, e.teacher.r_b, e.teacher.d_x_bound, cfg.budget.delta)?;
    s.erm = e.erm.clone();
    s.bayes = e.bayes.clone();
    s.master_seed = cfg.seed;
    if let Some(t) = e.n_test {
        s.n_test = t;
    }
    let fixed = cfg.widths.as_ref().or(e.widths.as_ref());
    s.widths = match fixed {
        Some(h) => {
            let mut w = vec![e.teacher.widths[0]];
            w.extend(h);
            w.push(1);
            WidthsRule::Fixed(w)
        }
        None => WidthsRule::Balanced { max_width: e.max_width },
    };
    Ok(s)
}

fn run_one(cfg: &RunConfig, e: &ExperimentSpec, out: &Path) -> anyhow::Result<(RateFit, Option<f64>)> {
    let label = teacher_label(&e.teacher);
    let row = |n: usize, seed: usize, mse: f64, stderr: f64| SweepRow {
        estimator: e.estimator.name().into(),
        teacher: label.clone(),
        n,
        seed,
        mse,
        stderr,
    };
    if let Some(inj) = e.inject {
        let errors: Vec<f64> = cfg.n_grid.iter().map(|&n| inj.c * (n as f64).powf(inj.exponent)).collect();
        let rows: Vec<SweepRow> = cfg
            .n_grid
            .iter()
            .zip(&errors)
            .flat_map(|(&n, &err)| (0..cfg.seeds).map(move |s| (n, s, err)))
            .map(|(n, s, err)| row(n, s, err, 0.0))
            .collect();
        write_csv(out, &rows)?;
        return Ok((fit_rate(&cfg.n_grid, &errors, None)?, None));
    }
    let res = rate_sweep(&sweep_config(cfg, e)?)?;
    let rows: Vec<SweepRow> = res.cells.iter().map(|c| row(c.n, c.seed, c.mse, c.stderr)).collect();
    write_csv(out, &rows)?;
    Ok((res.fit, Some(res.null_level)))
}

pub fn experiment(cfg: &RunConfig) -> Outcome {
    if cfg.experiments.is_empty() {
        bail!("no experiments configured; add [[experiment]] tables to the config");
    }
    std::fs::create_dir_all(&cfg.out)?;
    let mut failures = Vec::new();
    let mut summary = Vec::new();
    for e in &cfg.experiments {
        let out = cfg.out.join(format!("sweep_{}.csv", e.name));
        log::info!("experiment {}: {} on {}", e.name, e.estimator.name(), teacher_label(&e.teacher));
        let (fit, null_level, error) = match run_one(cfg, e, &out) {
            Ok((f, null)) => (Some(f), null, None),
            Err(err) => {
                failures.push(Failure::new(format!("experiment {}", e.name), format!("{err:#}")));
                (None, None, Some(format!("{err:#}")))
            }
        };
        summary.push(ExperimentSummary {
            name: e.name.clone(),
            estimator: e.estimator,
            target_exponent: e.inject.map(|i| i.exponent).or_else(|| target_exponent(&e.teacher)),
            fit,
            null_level,
            injected: e.inject.is_some(),
            error,
        });
    }
    write_json(&cfg.out.join("summary.json"), &summary)?;
    Ok(failures)
}
