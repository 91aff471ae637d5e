use std::path::Path;

use sitebal_core::balance::imbalance_report;
use sitebal_core::estimators::naive_estimate;
use sitebal_core::features::Bandwidth;
use sitebal_core::heterogeneity::HeterogeneityError;
use sitebal_core::model::pooled_covariates;
use sitebal_core::multisite::overall_target;
use sitebal_core::{
    estimate_theta, lambda_sweep, pseudo_r2, run_simulation, solve_weights, transport_all,
    BalanceError, BalanceMode, BalanceProblem, FeatureMap, HeterogeneityReport, KernelSpec, Method,
    ModeConfig, SimError, SiteDataset, SiteEffectSet, TargetSpec,
};

use crate::config::RunConfig;
use crate::error::CliError;
use crate::io::{
    feature_label, finish, num, read_data, read_effects, read_moments, read_target_sample,
    write_row, writer, Dataset,
};
use crate::{
    DataArgs, HeterogeneityArgs, ModeArg, SimulateArgs, SweepArgs, TransportArgs, WeightsArgs,
};

fn strings<const N: usize>(fields: [&str; N]) -> Vec<String> {
    fields.iter().map(|s| s.to_string()).collect()
}

fn mode_config(cfg: &RunConfig, flag: Option<ModeArg>) -> ModeConfig {
    match (flag, &cfg.transport.mode) {
        (None, m) => m.clone(),
        (Some(ModeArg::Linear), _) => ModeConfig::Linear,
        (Some(ModeArg::Kernel), m @ ModeConfig::Kernel { .. }) => m.clone(),
        (Some(ModeArg::Kernel), ModeConfig::Linear) => {
            let rbf = KernelSpec::Rbf {
                bandwidth: Bandwidth::MedianHeuristic,
            };
            ModeConfig::Kernel {
                k_tau: rbf,
                k_0: rbf,
            }
        }
    }
}

/// Trial data, fitted feature map, target and balancing geometry shared by
/// the data-driven subcommands.
struct Prepared {
    data: Dataset,
    map: FeatureMap,
    target: TargetSpec,
    mode_config: ModeConfig,
    mode: BalanceMode,
}

fn prepare(cfg: &RunConfig, args: &DataArgs) -> Result<Prepared, CliError> {
    let mode_config = mode_config(cfg, args.mode);
    if args.moments.is_some() && matches!(mode_config, ModeConfig::Kernel { .. }) {
        return Err(CliError::Usage(
            "kernel mode compares weighted units with individual target units, so it needs a unit-level \
             target sample (--target); a moments file only supports linear mode"
                .into(),
        ));
    }
    let data = read_data(&args.data)?;
    let pooled = pooled_covariates(&data.sites);
    let map = cfg.transport.features.fit(&pooled)?;
    let target = match (&args.target, &args.moments) {
        (Some(p), _) => TargetSpec::Sample(read_target_sample(p, &data.covariates)?),
        (None, Some(p)) => TargetSpec::Moments(read_moments(p, &map, &data.covariates)?),
        (None, None) => overall_target(&data.sites),
    };
    let mode = mode_config.build(&map, &pooled)?;
    Ok(Prepared {
        data,
        map,
        target,
        mode_config,
        mode,
    })
}

fn status_of(e: &BalanceError) -> String {
    match e {
        BalanceError::SolverFailed { status, .. } => status.to_string(),
        _ => "error".into(),
    }
}

pub fn weights(cfg: &RunConfig, a: &WeightsArgs) -> Result<(), CliError> {
    let p = prepare(cfg, &a.data)?;
    let lambda = a.lambda.unwrap_or(cfg.transport.lambda);
    let sites: Vec<&SiteDataset> = match &a.site {
        Some(id) => vec![p
            .data
            .sites
            .iter()
            .find(|s| s.site_id().0 == *id)
            .ok_or_else(|| CliError::Input(format!("unknown site `{id}`")))?],
        None => p.data.sites.iter().collect(),
    };
    let names: Vec<String> = p
        .map
        .names()
        .iter()
        .map(|n| feature_label(n, &p.data.covariates))
        .collect();

    let mut wout = writer(Some(&a.out))?;
    write_row(&mut wout, &strings(["site_id", "row", "gamma"]))?;
    let mut diag = writer(a.diagnostics.as_deref())?;
    write_row(
        &mut diag,
        &strings([
            "site_id",
            "lambda",
            "status",
            "iterations",
            "objective",
            "imbalance_tau",
            "imbalance_0",
            "ess",
            "ess_treated",
            "ess_control",
            "flags",
        ]),
    )?;
    let mut imb = a
        .imbalance
        .as_deref()
        .map(|p| writer(Some(p)))
        .transpose()?;
    if let Some(w) = imb.as_mut() {
        write_row(
            w,
            &strings(["site_id", "term", "feature", "before", "after"]),
        )?;
    }

    let mut first_error = None;
    for site in sites {
        let id = site.site_id().0.clone();
        let prob = BalanceProblem {
            site,
            target: &p.target,
            mode: &p.mode,
            lambda,
        };
        let w = match solve_weights(&prob, &cfg.transport.solver) {
            Ok(w) => w,
            Err(e) => {
                let mut row = vec![id, num(lambda), status_of(&e)];
                row.resize(11, String::new());
                write_row(&mut diag, &row)?;
                first_error.get_or_insert(e);
                continue;
            }
        };
        for (u, g) in site.units().iter().zip(&w.gamma) {
            write_row(&mut wout, &[id.clone(), u.row.to_string(), num(*g)])?;
        }
        let flags: Vec<String> = w
            .flags
            .iter()
            .map(|f| {
                serde_json::to_value(f)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default()
            })
            .collect();
        write_row(
            &mut diag,
            &[
                id.clone(),
                num(lambda),
                w.solver.status.to_string(),
                w.solver.iterations.to_string(),
                num(w.objective),
                num(w.imbalance_tau),
                num(w.imbalance_0),
                num(w.ess),
                num(w.ess_treated),
                num(w.ess_control),
                flags.join(";"),
            ],
        )?;
        if let Some(out) = imb.as_mut() {
            let before = imbalance_report(site, &vec![1.0; site.n()], &prob)?;
            let after = imbalance_report(site, &w.gamma, &prob)?;
            for (term, b, a) in [
                ("tau", &before.per_feature_tau, &after.per_feature_tau),
                ("control", &before.per_feature_0, &after.per_feature_0),
            ] {
                if let (Some(b), Some(a)) = (b, a) {
                    for ((name, x), y) in names.iter().zip(b).zip(a) {
                        write_row(
                            out,
                            &[id.clone(), term.into(), name.clone(), num(*x), num(*y)],
                        )?;
                    }
                }
            }
            write_row(
                out,
                &[
                    id.clone(),
                    "tau".into(),
                    "norm".into(),
                    num(before.imbalance_tau),
                    num(after.imbalance_tau),
                ],
            )?;
            write_row(
                out,
                &[
                    id.clone(),
                    "control".into(),
                    "norm".into(),
                    num(before.imbalance_0),
                    num(after.imbalance_0),
                ],
            )?;
        }
    }
    finish(wout)?;
    finish(diag)?;
    if let Some(w) = imb {
        finish(w)?;
    }
    match first_error {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

pub fn transport(cfg: &RunConfig, a: &TransportArgs) -> Result<(), CliError> {
    let p = prepare(cfg, &a.data)?;
    let mut tc = cfg.transport.clone();
    tc.mode = p.mode_config.clone();
    if let Some(l) = a.lambda {
        tc.lambda = l;
    }
    let report = transport_all(&p.data.sites, &p.target, &tc)?;
    for f in &report.failures {
        let rec = serde_json::json!({ "warning": { "site_id": f.site_id, "method": f.method, "message": f.message } });
        eprintln!("{rec}");
    }

    let mut out = writer(a.out.as_deref())?;
    write_row(
        &mut out,
        &strings([
            "site_id",
            "method",
            "estimate",
            "std_error",
            "untransported",
            "untransported_std_error",
            "ess_treated",
            "ess_control",
            "max_ratio",
            "clip_rate",
        ]),
    )?;
    for site in &p.data.sites {
        let naive = naive_estimate(site);
        for e in report
            .estimates
            .iter()
            .filter(|e| &e.site_id == site.site_id())
        {
            write_row(
                &mut out,
                &[
                    e.site_id.0.clone(),
                    e.method.to_string(),
                    num(e.estimate),
                    num(e.std_error),
                    num(naive.estimate),
                    num(naive.std_error),
                    num(e.ess_treated),
                    num(e.ess_control),
                    num(e.max_ratio),
                    num(e.clip_rate),
                ],
            )?;
        }
    }
    finish(out)?;

    if let Some(path) = &a.weights {
        let mut w = writer(Some(path))?;
        write_row(&mut w, &strings(["site_id", "row", "gamma"]))?;
        for sol in &report.weights {
            let site = p
                .data
                .sites
                .iter()
                .find(|s| s.site_id() == &sol.site_id)
                .expect("weights belong to a site");
            for (u, g) in site.units().iter().zip(&sol.gamma) {
                write_row(&mut w, &[sol.site_id.0.clone(), u.row.to_string(), num(*g)])?;
            }
        }
        finish(w)?;
    }
    Ok(())
}

fn report_rows(scope: &str, r: &HeterogeneityReport) -> Vec<[String; 3]> {
    let row = |k: &str, v: String| [scope.to_string(), k.to_string(), v];
    vec![
        row("sites", r.sites.to_string()),
        row("alpha", num(r.alpha)),
        row("theta_hat", num(r.theta_hat)),
        row("theta_sd", num(r.theta_sd)),
        row("ci_variance_lower", num(r.ci_variance.0)),
        row("ci_variance_upper", num(r.ci_variance.1)),
        row("ci_sd_lower", num(r.ci_sd.0)),
        row("ci_sd_upper", num(r.ci_sd.1)),
        row("q_at_zero", num(r.q_at_zero)),
        row("degenerate", r.degenerate.to_string()),
    ]
}

fn theta_report(path: &Path, method: &str, alpha: f64) -> Result<HeterogeneityReport, CliError> {
    let t = read_effects(path, method)?;
    let effects = SiteEffectSet::new(t.estimates, t.std_errors)
        .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
    Ok(estimate_theta(&effects, alpha)?)
}

pub fn heterogeneity(cfg: &RunConfig, a: &HeterogeneityArgs) -> Result<(), CliError> {
    let alpha = a.alpha.unwrap_or(cfg.alpha);
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(CliError::Usage(format!(
            "alpha must lie in (0, 1), got {alpha}"
        )));
    }
    let main = theta_report(&a.effects, &a.method, alpha)?;
    let mut rows = report_rows("effects", &main);
    if let Some(path) = &a.baseline {
        let base = theta_report(path, &a.baseline_method, alpha)?;
        rows.extend(report_rows("baseline", &base));
        let r2 = match pseudo_r2(base.theta_sd, main.theta_sd) {
            Ok(v) => num(v),
            Err(HeterogeneityError::ZeroBaseline) => "NA".into(),
            Err(e) => return Err(e.into()),
        };
        rows.push(["comparison".into(), "pseudo_r2".into(), r2]);
    }
    let mut out = writer(a.out.as_deref())?;
    write_row(&mut out, &strings(["scope", "statistic", "value"]))?;
    for r in rows {
        write_row(&mut out, &r)?;
    }
    finish(out)
}

pub fn simulate(cfg: &RunConfig, a: &SimulateArgs) -> Result<(), CliError> {
    let mut sc = cfg.simulation.clone();
    if let Some(r) = a.reps {
        sc.reps = r;
    }
    sc.audit |= a.audit.is_some();
    let report = run_simulation(&sc).map_err(|e| match e {
        SimError::InvalidConfig(m) => CliError::Usage(format!("invalid simulation config: {m}")),
        other => other.into(),
    })?;

    let mut out = writer(a.out.as_deref())?;
    write_row(
        &mut out,
        &strings([
            "method",
            "lambda",
            "rmse",
            "mean_abs_bias",
            "mean_ess",
            "failures",
        ]),
    )?;
    for r in &report.rows {
        write_row(
            &mut out,
            &[
                r.method.to_string(),
                num(r.lambda),
                num(r.rmse),
                num(r.mean_abs_bias),
                num(r.mean_ess),
                r.failures.to_string(),
            ],
        )?;
    }
    finish(out)?;

    if let Some(dir) = &a.emit_plot_data {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
        let baselines: Vec<_> = report
            .rows
            .iter()
            .filter(|r| r.method != Method::Weighting)
            .collect();
        let mut header = vec!["lambda".to_string(), "weighting".to_string()];
        header.extend(baselines.iter().map(|r| r.method.to_string()));
        for (file, metric) in [("rmse.csv", 0), ("mean_abs_bias.csv", 1)] {
            let pick =
                |r: &sitebal_core::sim::SimRow| if metric == 0 { r.rmse } else { r.mean_abs_bias };
            let mut w = writer(Some(&dir.join(file)))?;
            write_row(&mut w, &header)?;
            for r in report.weighting_rows() {
                let mut row = vec![num(r.lambda), num(pick(r))];
                row.extend(baselines.iter().map(|b| num(pick(b))));
                write_row(&mut w, &row)?;
            }
            finish(w)?;
        }
        let mut w = writer(Some(&dir.join("ess.csv")))?;
        write_row(&mut w, &strings(["lambda", "mean_ess"]))?;
        for r in report.weighting_rows() {
            write_row(&mut w, &[num(r.lambda), num(r.mean_ess)])?;
        }
        finish(w)?;
    }

    if let (Some(path), Some(audit)) = (&a.audit, &report.audit) {
        let mut w = writer(Some(path))?;
        write_row(
            &mut w,
            &strings(["rep", "site_id", "method", "lambda", "estimate", "truth"]),
        )?;
        for r in audit {
            write_row(
                &mut w,
                &[
                    r.rep.to_string(),
                    r.site_id.0.clone(),
                    r.method.to_string(),
                    num(r.lambda),
                    num(r.estimate),
                    num(r.truth),
                ],
            )?;
        }
        finish(w)?;
    }
    Ok(())
}

pub fn sweep(cfg: &RunConfig, a: &SweepArgs) -> Result<(), CliError> {
    let p = prepare(cfg, &a.data)?;
    let grid = a
        .lambdas
        .clone()
        .unwrap_or_else(|| cfg.sweep.lambdas.clone());
    let mut rows = lambda_sweep(
        &p.data.sites,
        &p.target,
        &p.mode,
        &grid,
        &cfg.transport.solver,
    )?;
    rows.reverse();
    // imbalance of uniform weights, per site
    let uniform: Vec<f64> = p
        .data
        .sites
        .iter()
        .map(|site| {
            let prob = BalanceProblem {
                site,
                target: &p.target,
                mode: &p.mode,
                lambda: 0.0,
            };
            imbalance_report(site, &vec![1.0; site.n()], &prob).map(|r| r.imbalance_tau)
        })
        .collect::<Result<_, _>>()?;

    let mut out = writer(a.out.as_deref())?;
    write_row(
        &mut out,
        &strings([
            "lambda",
            "imbalance_tau",
            "imbalance_0",
            "ess",
            "imbalance_reduction",
            "solved",
            "failed",
        ]),
    )?;
    for r in &rows {
        let (mut after, mut before) = (0.0, 0.0);
        for (c, u) in r.cells.iter().zip(&uniform) {
            if let Ok(w) = &c.result {
                after += w.imbalance_tau;
                before += u;
            }
        }
        let reduction = (before > 0.0).then(|| 1.0 - after / before);
        let solved = r.solved > 0;
        write_row(
            &mut out,
            &[
                num(r.lambda),
                num(solved.then_some(r.imbalance_tau)),
                num(solved.then_some(r.imbalance_0)),
                num(solved.then_some(r.ess)),
                num(reduction),
                r.solved.to_string(),
                r.failed.to_string(),
            ],
        )?;
    }
    finish(out)?;

    if let Some(path) = &a.cells {
        let mut w = writer(Some(path))?;
        write_row(
            &mut w,
            &strings([
                "site_id",
                "lambda",
                "status",
                "imbalance_tau",
                "imbalance_0",
                "ess",
            ]),
        )?;
        for r in &rows {
            for c in &r.cells {
                let row = match &c.result {
                    Ok(s) => [
                        c.site_id.0.clone(),
                        num(r.lambda),
                        s.solver.status.to_string(),
                        num(s.imbalance_tau),
                        num(s.imbalance_0),
                        num(s.ess),
                    ],
                    Err(e) => [
                        c.site_id.0.clone(),
                        num(r.lambda),
                        status_of(e),
                        String::new(),
                        String::new(),
                        String::new(),
                    ],
                };
                write_row(&mut w, &row)?;
            }
        }
        finish(w)?;
    }
    let failed: usize = rows.iter().map(|r| r.failed).sum();
    if failed == rows.len() * p.data.sites.len() {
        return Err(CliError::Runtime("every sweep cell failed".into()));
    }
    Ok(())
}
