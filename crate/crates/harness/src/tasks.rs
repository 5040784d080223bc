//! One function per subcommand. Each returns a result table plus the list
//! of asserted checks that failed.

use crate::config::RunConfig;
use crate::emit::{Table, Value};
use cylren::condexp::{cond_exp_power, tower_check, CoefficientPolynomial};
use cylren::effective::{
    bouquet_sum, divergence_scan, mass_coefficient_limit, mass_lren, t_ren_counterterm,
};
use cylren::exact::{max_abs, qpow, Q};
use cylren::graphs::{enumerate_graphs, lagrangian_cumulant, GraphContext};
use cylren::kinetic::{kinetic_identity_residual, t_ren_martingale_residual, t_shift, CoarsePolynomial};
use cylren::mc_oracle::{registered_identities, weak_test, TestFunction};
use cylren::reference::{symmetric_grid, verify_compatibility, FamilyKind};
use cylren::wick::{martingale_check, wick};
use num_traits::{One, Zero};
use rayon::prelude::*;
use thiserror::Error;

/// Largest graph enumeration `graph-expand` will attempt.
pub const MAX_GRAPHS: u128 = 200_000;

#[derive(Debug, Error)]
pub enum TaskError {
    #[error("{0}")]
    Invalid(String),
}

fn invalid(e: impl std::fmt::Display) -> TaskError {
    TaskError::Invalid(e.to_string())
}

pub struct TaskOutput {
    pub table: Table,
    pub failures: Vec<String>,
}

pub fn run(cfg: &RunConfig) -> Result<TaskOutput, TaskError> {
    match cfg.command.as_str() {
        "verify-compat" => verify_compat(cfg),
        "cond-exp" => cond_exp(cfg),
        "wick" => wick_task(cfg),
        "kinetic-ren" => kinetic_ren(cfg),
        "graph-expand" => graph_expand(cfg),
        "mass-eff" => mass_eff(cfg),
        "divergence-scan" => divergence(cfg),
        "mc-check" => mc_check(cfg),
        other => Err(invalid(format!("unknown subcommand {other}"))),
    }
}

fn verify_compat(cfg: &RunConfig) -> Result<TaskOutput, TaskError> {
    let fam = cfg.family().map_err(invalid)?;
    let grid = symmetric_grid(10.0, 200);
    let mut table = Table::new(&["family", "n", "max_deviation", "branch_points", "tolerance", "pass"]);
    let mut failures = Vec::new();
    for n in cfg.levels.0..=cfg.levels.1 {
        let rep = verify_compatibility(&fam, n, &grid);
        let pass = rep.max_deviation < cfg.tolerance;
        if !pass {
            failures.push(format!("n={n}: deviation {:e}", rep.max_deviation));
        }
        table.push(vec![
            fam.name().into(),
            n.into(),
            rep.max_deviation.into(),
            rep.branch_points.into(),
            cfg.tolerance.into(),
            pass.into(),
        ]);
    }
    Ok(TaskOutput { table, failures })
}

fn cond_exp(cfg: &RunConfig) -> Result<TaskOutput, TaskError> {
    let fam = cfg.family().map_err(invalid)?;
    let mut table = Table::new(&["family", "n", "m", "k", "power", "coefficient"]);
    let mut failures = Vec::new();
    for k in 0..=cfg.k {
        let poly = cond_exp_power(&fam, cfg.n, cfg.m, k).map_err(invalid)?;
        for (power, c) in poly.coeffs.iter().enumerate() {
            table.push(vec![
                fam.name().into(),
                cfg.n.into(),
                cfg.m.into(),
                k.into(),
                power.into(),
                c.clone().into(),
            ]);
        }
        if k == 1 && poly != CoefficientPolynomial::monomial(Q::one(), 1) {
            failures.push("degree-1 conditional expectation is not the identity".into());
        }
        if !tower_check(&fam, cfg.n, cfg.m / 2, cfg.m, k).map_err(invalid)? {
            failures.push(format!("tower property fails at k={k}"));
        }
    }
    Ok(TaskOutput { table, failures })
}

fn wick_task(cfg: &RunConfig) -> Result<TaskOutput, TaskError> {
    let fam = cfg.family().map_err(invalid)?;
    let w = wick(&fam, cfg.n, cfg.k).map_err(invalid)?;
    let mut table = Table::new(&["family", "n", "k", "power", "coefficient"]);
    for power in (0..=cfg.k).rev() {
        table.push(vec![
            fam.name().into(),
            cfg.n.into(),
            cfg.k.into(),
            power.into(),
            w.poly.coeff(power).into(),
        ]);
    }
    let mut failures = Vec::new();
    let residual = martingale_check(&fam, cfg.n, cfg.m, cfg.k).map_err(invalid)?;
    if !residual.is_zero() {
        failures.push(format!("martingale residual {:?} at m={}", residual.coeffs, cfg.m));
    }
    Ok(TaskOutput { table, failures })
}

fn residual_size(p: &CoarsePolynomial) -> Q {
    max_abs(p.quadratic.values().chain(p.linear.values()).chain([&p.constant]))
}

fn kinetic_ren(cfg: &RunConfig) -> Result<TaskOutput, TaskError> {
    let fam = cfg.family().map_err(invalid)?;
    if cfg.n == 0 {
        return Err(invalid("kinetic-ren needs n >= 1: at n = 0 the coarse cell wraps onto itself"));
    }
    if cfg.d > 2 || cfg.n + cfg.m > 6 {
        return Err(invalid("kinetic-ren is limited to d <= 2 and n + m <= 6"));
    }
    let mut table = Table::new(&["family", "d", "n", "m", "quantity", "power", "value"]);
    let row = |quantity: &str, power: Value, value: Value| {
        vec![
            fam.name().into(),
            cfg.d.into(),
            cfg.n.into(),
            cfg.m.into(),
            quantity.into(),
            power,
            value,
        ]
    };
    let mut rows = Vec::new();
    let shift = t_shift(&fam, cfg.n, cfg.m).map_err(invalid)?;
    for (power, c) in shift.coeffs.iter().enumerate() {
        rows.push(row("t_shift", power.into(), c.clone().into()));
    }
    if matches!(fam.kind(), FamilyKind::Gamma { .. }) {
        let c = t_ren_counterterm(&fam, cfg.n).map_err(invalid)?;
        rows.push(row("t_ren_loop_weight", Value::Missing, c.into()));
    }
    let identity = residual_size(&kinetic_identity_residual(&fam, cfg.n, cfg.m).map_err(invalid)?);
    let ren = residual_size(&t_ren_martingale_residual(&fam, cfg.n, cfg.m).map_err(invalid)?);
    rows.push(row("identity_residual", Value::Missing, identity.clone().into()));
    rows.push(row("t_ren_residual", Value::Missing, ren.clone().into()));
    for r in rows {
        table.push(r);
    }
    let mut failures = Vec::new();
    if !identity.is_zero() {
        failures.push(format!("conditional kinetic identity residual {identity}"));
    }
    if !ren.is_zero() {
        failures.push(format!("T_ren martingale residual {ren}"));
    }
    Ok(TaskOutput { table, failures })
}

fn multisets(types: u128, size: u128) -> u128 {
    (0..size).fold(1u128, |acc, i| acc.saturating_mul(types + i) / (i + 1))
}

fn graph_expand(cfg: &RunConfig) -> Result<TaskOutput, TaskError> {
    let fam = cfg.family().map_err(invalid)?;
    let ctx = GraphContext::new(fam, cfg.n, cfg.m).map_err(invalid)?;
    let sites: Vec<usize> = (0..ctx.fine_sites()).collect();
    let types = (sites.len() * (sites.len() + 1) / 2) as u128;
    let total: u128 = (1..=cfg.max_edges as u128).map(|k| multisets(types, k)).sum();
    if total > MAX_GRAPHS {
        return Err(invalid(format!(
            "{total} graphs on {} fine sites exceed the cap of {MAX_GRAPHS}; lower n, m or max_edges",
            sites.len()
        )));
    }
    let mut table = Table::new(&[
        "graph",
        "size",
        "coarse_graph",
        "coarsely_connected",
        "exponents",
        "chi",
        "chi_connected",
        "roundtrip",
    ]);
    let graphs = enumerate_graphs(&sites, cfg.max_edges);
    let results: Vec<(Vec<Value>, Vec<String>)> = graphs
        .par_iter()
        .map(|g| {
            let connected = ctx.is_coarsely_connected(g);
            let chi = ctx.chi(g).map_err(invalid)?;
            let (chi_c, agree) = match ctx.chi_connected(g) {
                Ok(c) => (Some(c.coef), true),
                Err(_) => (None, false),
            };
            let roundtrip = ctx.moment_cumulant_roundtrip(g).map_err(invalid)?;
            let mut failures = Vec::new();
            if !agree {
                failures.push(format!("{:?}: recursion and Möbius sum disagree", g.edges()));
            }
            if !connected && chi_c.as_ref().is_some_and(|c| !c.is_zero()) {
                failures.push(format!("{:?}: disconnected but χ_c ≠ 0", g.edges()));
            }
            if !roundtrip {
                failures.push(format!("{:?}: moment-cumulant roundtrip fails", g.edges()));
            }
            let row = vec![
                Value::Edges(g.edges().to_vec()),
                g.size().into(),
                Value::Edges(ctx.coarse(g).edges().to_vec()),
                connected.into(),
                Value::Ints(chi.exponents),
                chi.coef.into(),
                chi_c.into(),
                roundtrip.into(),
            ];
            Ok((row, failures))
        })
        .collect::<Result<_, TaskError>>()?;
    let mut failures = Vec::new();
    for (row, f) in results {
        table.push(row);
        failures.extend(f);
    }
    Ok(TaskOutput { table, failures })
}

fn mass_eff(cfg: &RunConfig) -> Result<TaskOutput, TaskError> {
    let fam = cfg.family().map_err(invalid)?;
    let mut table = Table::new(&[
        "k",
        "m",
        "coefficient",
        "difference",
        "limit",
        "monotone_decay",
        "converged",
        "bell",
        "integer_partitions",
        "term_bound",
    ]);
    for k in 1..=cfg.k {
        let rep = mass_coefficient_limit(&fam, cfg.n, k, cfg.m_max).map_err(invalid)?;
        for m in 1..=cfg.m_max {
            let exact = bouquet_sum(&fam, cfg.n, m, k).map_err(invalid)?;
            let diff = (m >= 2).then(|| rep.sequence.differences[m - 2]);
            table.push(vec![
                k.into(),
                m.into(),
                exact.into(),
                diff.into(),
                rep.sequence.limit.into(),
                rep.sequence.monotone_decay.into(),
                rep.sequence.converged.into(),
                (rep.bell as i64).into(),
                (rep.integer_partitions as i64).into(),
                rep.term_bound.into(),
            ]);
        }
    }

    // Two independent paths for the second cumulant at depth 1.
    let mut failures = Vec::new();
    let ctx = GraphContext::new(fam.clone(), cfg.n, 1).map_err(invalid)?;
    let form = mass_lren(&fam, cfg.n + 1).map_err(invalid)?;
    let kappa = lagrangian_cumulant(&ctx, &form, 2).map_err(invalid)?;
    let mut exps = vec![0; ctx.coarse_sites()];
    exps[0] = 4;
    let graph_path = kappa.coeff(&exps) * qpow(&fam.r_pow(cfg.n as i64), 2);
    let bouquet_path = bouquet_sum(&fam, cfg.n, 1, 2).map_err(invalid)?;
    if graph_path != bouquet_path {
        failures.push(format!("k=2, m=1: graph cumulant {graph_path} vs bouquet sum {bouquet_path}"));
    }
    Ok(TaskOutput { table, failures })
}

fn divergence(cfg: &RunConfig) -> Result<TaskOutput, TaskError> {
    let fam = cfg.family().map_err(invalid)?;
    let rows = divergence_scan(&fam, cfg.n, cfg.k, cfg.m_range.0..=cfg.m_range.1).map_err(invalid)?;
    let mut table = Table::new(&[
        "class",
        "stratum",
        "k",
        "m",
        "value",
        "fitted_slope",
        "plain_slope",
        "predicted_exponent",
        "verdict",
        "agrees",
        "limit",
    ]);
    let mut failures = Vec::new();
    for row in &rows {
        if !row.agrees {
            failures.push(format!(
                "{} ℓ={}: slope {:?} vs exponent {:?}",
                row.class, row.stratum, row.fitted_slope, row.predicted_exponent
            ));
        }
        let verdict = format!("{:?}", row.verdict).to_lowercase();
        for (m, v) in &row.values {
            table.push(vec![
                row.class.clone().into(),
                row.stratum.into(),
                row.k.into(),
                (*m).into(),
                (*v).into(),
                row.fitted_slope.into(),
                row.plain_slope.into(),
                row.predicted_exponent.into(),
                verdict.clone().into(),
                row.agrees.into(),
                row.limit.into(),
            ]);
        }
    }
    Ok(TaskOutput { table, failures })
}

fn mc_check(cfg: &RunConfig) -> Result<TaskOutput, TaskError> {
    let fam = cfg.family().map_err(invalid)?;
    let idents = registered_identities(&fam, cfg.n, cfg.m).map_err(invalid)?;
    let reports = weak_test(
        &fam,
        cfg.n,
        cfg.m,
        &idents,
        &TestFunction::BASIS,
        cfg.samples,
        cfg.seed,
        cfg.z,
    )
    .map_err(invalid)?;
    let mut table = Table::new(&["identity", "test_function", "estimate", "reference", "se", "z", "pass"]);
    let mut failures = Vec::new();
    for r in reports {
        if !r.pass {
            failures.push(format!("{} with H = {}", r.identity, r.test_function.name()));
        }
        table.push(vec![
            r.identity.into(),
            r.test_function.name().into(),
            r.estimate.into(),
            r.reference.into(),
            r.se.into(),
            r.z.into(),
            r.pass.into(),
        ]);
    }
    Ok(TaskOutput { table, failures })
}
