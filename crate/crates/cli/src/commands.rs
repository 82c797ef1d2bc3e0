//! One function per subcommand family; each returns a CSV table and a JSON result.

use std::path::Path;

use clap::Subcommand;
use ghmm::ghmm::log_likelihood;
use ghmm::inference::{aic_order_select, aic_state_select, AicReport, FitOptions};
use ghmm::info::{
    crlb_report, fisher_hessian_estimate, fisher_score_estimate, kl_estimate, kl_sweep, quadratic_check,
    second_differences, FisherEstimate,
};
use ghmm::models::garch::garch_fisher_series;
use ghmm::models::lssm_fisher;
use ghmm::montecarlo::simulate_run;
use ghmm::sensitivity::{hessian, score};
use ghmm::{Ghmm, McRun};
use serde_json::{json, Value};

use crate::config::{LoadedModel, RunConfig};
use crate::error::{CliError, Context};
use crate::io::{read_observations, Cell, Observation, Table};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Simulate a trajectory.
    Simulate,
    /// Log-likelihood of the observation file.
    Loglik,
    /// Analytic score of the observation file.
    Score,
    /// Analytic Hessian of the observation file.
    Hessian,
    /// Monte Carlo Fisher information.
    Fisher,
    /// Monte Carlo KL divergence between two parameter vectors.
    Kl,
    /// KL divergence over a grid of one parameter coordinate, with replicates.
    KlSweep,
    /// Ratio of KL divergence to its quadratic Fisher approximation.
    QuadCheck,
    /// Cramér–Rao bounds from a Fisher estimate.
    Crlb,
    /// AIC selection of the hidden chain's order.
    AicOrder,
    /// AIC selection of the number of hidden states.
    AicStates,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Loglik => "loglik",
            Command::Score => "score",
            Command::Hessian => "hessian",
            Command::Fisher => "fisher",
            Command::Kl => "kl",
            Command::KlSweep => "kl-sweep",
            Command::QuadCheck => "quad-check",
            Command::Crlb => "crlb",
            Command::AicOrder => "aic-order",
            Command::AicStates => "aic-states",
        }
    }
}

pub struct Output {
    pub table: Table,
    pub result: Value,
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable result")
}

pub fn run(cmd: Command, cfg: &RunConfig, config_path: &Path) -> Result<Output, CliError> {
    if matches!(cmd, Command::AicOrder | Command::AicStates) {
        return aic(cmd, cfg, config_path);
    }
    let method = cfg.estimator.method.as_deref().unwrap_or("hessian");
    match cfg.model()?.build()? {
        LoadedModel::Finite(m, theta) => generic(cmd, &m, &theta, cfg, config_path, &|_, _| None),
        LoadedModel::Garch(m, spec, theta) => {
            if cmd == Command::Fisher && method == "series" {
                let run = mc_run(cfg)?;
                let est = garch_fisher_series(&spec, &run).at("estimator")?;
                let mut table = Table::new(&["i", "j", "value", "se"]);
                table.push(vec![2usize.into(), 2usize.into(), est.value.into(), est.se.into()]);
                return Ok(Output {
                    table,
                    result: to_json(&est),
                });
            }
            generic(cmd, &m, &theta, cfg, config_path, &|_, _| None)
        }
        LoadedModel::Lssm(m, theta) => {
            let special = |method: &str, run: &McRun| (method == "steady-state").then(|| lssm_fisher(&m, &theta, run));
            generic(cmd, &m, &theta, cfg, config_path, &special)
        }
    }
}

fn mc_run(cfg: &RunConfig) -> Result<McRun, CliError> {
    let e = &cfg.estimator;
    let n =
        e.n.ok_or_else(|| CliError::validation("estimator.n", "required for this command"))?;
    let mut run = McRun::new(n, cfg.seed).x0(e.x0).stream(e.stream.unwrap_or(0));
    if let Some(b) = e.burn_in {
        run = run.burn_in(b);
    }
    if run.n <= run.burn_in {
        return Err(CliError::validation(
            "estimator.burn_in",
            "must be smaller than estimator.n",
        ));
    }
    Ok(run)
}

fn theta_field(v: &Option<Vec<f64>>, default: &[f64], q: usize, path: &str) -> Result<Vec<f64>, CliError> {
    let t = v.clone().unwrap_or_else(|| default.to_vec());
    if t.len() != q {
        return Err(CliError::validation(
            path,
            format!("expected {q} entries, got {}", t.len()),
        ));
    }
    Ok(t)
}

type Special<'a> = dyn Fn(&str, &McRun) -> Option<ghmm::Result<FisherEstimate>> + 'a;

fn fisher<M: Ghmm>(model: &M, theta: &[f64], cfg: &RunConfig, special: &Special) -> Result<FisherEstimate, CliError> {
    let run = mc_run(cfg)?;
    let method = cfg.estimator.method.as_deref().unwrap_or("hessian");
    match method {
        "hessian" => fisher_hessian_estimate(model, theta, &run).at("estimator"),
        "score" => fisher_score_estimate(model, theta, &run).at("estimator"),
        other => special(other, &run)
            .ok_or_else(|| {
                CliError::validation("estimator.method", format!("`{other}` is not available for this model"))
            })?
            .at("estimator"),
    }
}

fn fisher_table(f: &FisherEstimate) -> Table {
    let mut t = Table::new(&["i", "j", "value", "se"]);
    for i in 0..f.dim {
        for j in 0..f.dim {
            t.push(vec![i.into(), j.into(), f.get(i, j).into(), f.se_at(i, j).into()]);
        }
    }
    t
}

fn generic<M: Ghmm>(
    cmd: Command,
    model: &M,
    theta: &[f64],
    cfg: &RunConfig,
    config_path: &Path,
    special: &Special,
) -> Result<Output, CliError>
where
    M::Obs: Observation,
{
    let q = model.param_dim();
    let est = &cfg.estimator;
    let data = || -> Result<Vec<M::Obs>, CliError> { read_observations(&cfg.data_path(config_path)?) };
    match cmd {
        Command::Simulate => {
            let run = mc_run(cfg)?;
            let traj = simulate_run(model, theta, &run).at("estimator")?;
            let d = traj.obs.first().map_or(1, |o| o.to_row().len());
            let mut header = vec!["t".to_string()];
            header.extend((1..=d).map(|i| format!("y{i}")));
            if traj.hidden.is_some() {
                header.push("x".into());
            }
            let mut table = Table::new(&header);
            for (t, y) in traj.obs.iter().enumerate() {
                let mut row: Vec<Cell> = vec![t.into()];
                row.extend(y.to_row().into_iter().map(Cell::F));
                if let Some(h) = &traj.hidden {
                    row.push(h[t].into());
                }
                table.push(row);
            }
            Ok(Output {
                table,
                result: json!({ "n": run.n, "seed": run.seed, "stream": run.stream, "theta": theta }),
            })
        }
        Command::Loglik => {
            let y = data()?;
            let ll = log_likelihood(model, theta, &y).at("data")?;
            let mut table = Table::new(&["loglik", "n"]);
            table.push(vec![ll.into(), y.len().into()]);
            Ok(Output {
                table,
                result: json!({ "loglik": ll, "n": y.len(), "theta": theta }),
            })
        }
        Command::Score => {
            let y = data()?;
            let s = score(model, theta, &y).at("data")?;
            let mut table = Table::new(&["i", "score"]);
            for (i, v) in s.iter().enumerate() {
                table.push(vec![i.into(), (*v).into()]);
            }
            Ok(Output {
                table,
                result: json!({ "score": s, "theta": theta }),
            })
        }
        Command::Hessian => {
            let y = data()?;
            let h = hessian(model, theta, &y).at("data")?;
            let mut table = Table::new(&["i", "j", "value"]);
            for i in 0..h.dim {
                for j in 0..h.dim {
                    table.push(vec![i.into(), j.into(), h.get(i, j).into()]);
                }
            }
            Ok(Output {
                table,
                result: json!({ "hessian": h.matrix, "dim": h.dim, "asymmetry": h.asymmetry, "asymmetry_warning": h.asymmetry_warning }),
            })
        }
        Command::Fisher => {
            let f = fisher(model, theta, cfg, special)?;
            Ok(Output {
                table: fisher_table(&f),
                result: to_json(&f),
            })
        }
        Command::Kl => {
            let run = mc_run(cfg)?;
            let t1 = theta_field(&est.theta1, theta, q, "estimator.theta1")?;
            let t0 = theta_field(&est.theta0, theta, q, "estimator.theta0")?;
            let k = kl_estimate(model, &t1, &t0, &run).at("estimator")?;
            let mut table = Table::new(&["K_hat", "se", "infinite", "n", "seed", "stream"]);
            table.push(vec![
                k.value.into(),
                k.se.into(),
                k.infinite.into(),
                k.n.into(),
                k.seed.into(),
                k.stream.into(),
            ]);
            Ok(Output {
                table,
                result: to_json(&k),
            })
        }
        Command::KlSweep => {
            let run = mc_run(cfg)?;
            let grid = est
                .grid
                .clone()
                .ok_or_else(|| CliError::validation("estimator.grid", "required for kl-sweep"))?;
            let idx = est.sweep_index.unwrap_or(0);
            if idx >= q {
                return Err(CliError::validation(
                    "estimator.sweep_index",
                    format!("model has {q} parameters"),
                ));
            }
            let t0 = theta_field(&est.theta0, theta, q, "estimator.theta0")?;
            let base = theta_field(&est.theta1, &t0, q, "estimator.theta1")?;
            let thetas: Vec<Vec<f64>> = grid
                .iter()
                .map(|g| {
                    let mut t = base.clone();
                    t[idx] = *g;
                    t
                })
                .collect();
            let reps = est.replicates.unwrap_or(1);
            let points = kl_sweep(model, &thetas, &t0, &run, reps).at("estimator")?;
            let mut table = Table::new(&["delta", "K_hat", "se", "n", "seed"]);
            for (g, p) in grid.iter().zip(&points) {
                table.push(vec![
                    (*g).into(),
                    p.value.into(),
                    p.se.into(),
                    run.n.into(),
                    run.seed.into(),
                ]);
            }
            let second = to_json(&second_differences(&points));
            Ok(Output {
                table,
                result: json!({ "points": to_json(&points), "second_differences": second, "replicates": reps }),
            })
        }
        Command::QuadCheck => {
            let run = mc_run(cfg)?;
            let eps = est
                .eps_grid
                .clone()
                .ok_or_else(|| CliError::validation("estimator.eps_grid", "required for quad-check"))?;
            let mut unit = vec![0.0; q];
            if let Some(u) = unit.first_mut() {
                *u = 1.0;
            }
            let v = theta_field(&est.direction, &unit, q, "estimator.direction")?;
            let t0 = theta_field(&est.theta0, theta, q, "estimator.theta0")?;
            let chk = quadratic_check(model, &t0, &v, &eps, &run).at("estimator")?;
            let mut table = Table::new(&["eps", "K_hat", "K_se", "predicted", "rho", "rho_se", "deviation"]);
            for r in &chk.rows {
                table.push(vec![
                    r.eps.into(),
                    r.kl.into(),
                    r.kl_se.into(),
                    r.predicted.into(),
                    r.rho.into(),
                    r.rho_se.into(),
                    r.deviation.into(),
                ]);
            }
            Ok(Output {
                table,
                result: to_json(&chk),
            })
        }
        Command::Crlb => {
            let f = fisher(model, theta, cfg, special)?;
            let mut unit = vec![0.0; q];
            if let Some(u) = unit.first_mut() {
                *u = 1.0;
            }
            let v = theta_field(&est.direction, &unit, q, "estimator.direction")?;
            let ns = est.crlb_n.clone().unwrap_or_else(|| vec![f.n]);
            let r = crlb_report(&f.to_dmatrix(), &v, &ns).at("estimator")?;
            let mut table = Table::new(&["n", "bound"]);
            for (n, b) in &r.per_n {
                table.push(vec![(*n).into(), (*b).into()]);
            }
            Ok(Output {
                table,
                result: json!({ "crlb": to_json(&r), "fisher": to_json(&f) }),
            })
        }
        Command::AicOrder | Command::AicStates => unreachable!("handled before model construction"),
    }
}

fn aic(cmd: Command, cfg: &RunConfig, config_path: &Path) -> Result<Output, CliError> {
    let a = cfg
        .aic
        .as_ref()
        .ok_or_else(|| CliError::validation("aic", "missing [aic] block"))?;
    let y: Vec<f64> = read_observations(&cfg.data_path(config_path)?)?;
    let defaults = FitOptions::default();
    let opts = FitOptions {
        restarts: a.restarts.unwrap_or(defaults.restarts),
        max_iter: a.max_iter.unwrap_or(defaults.max_iter),
        grad_tol: a.grad_tol.unwrap_or(defaults.grad_tol),
        seed: cfg.seed,
        ..defaults
    };
    let report: AicReport = if cmd == Command::AicOrder {
        let l = a
            .states
            .ok_or_else(|| CliError::validation("aic.states", "required for aic-order"))?;
        let k_max = a
            .k_max
            .ok_or_else(|| CliError::validation("aic.k_max", "required for aic-order"))?;
        aic_order_select(&y, l, k_max, a.emission, &opts).at("aic")?
    } else {
        let [lo, hi] = a
            .state_range
            .ok_or_else(|| CliError::validation("aic.state_range", "required for aic-states"))?;
        aic_state_select(&y, a.order.unwrap_or(1), lo..=hi, a.emission, &opts).at("aic")?
    };
    let mut table = Table::new(&["k", "loglik", "penalty", "aic", "p", "converged", "iters"]);
    for r in &report.rows {
        table.push(vec![
            r.k.into(),
            r.log_lik.into(),
            r.penalty.into(),
            r.aic.into(),
            r.n_params.into(),
            r.converged.into(),
            r.iterations.into(),
        ]);
    }
    Ok(Output {
        table,
        result: to_json(&report),
    })
}
