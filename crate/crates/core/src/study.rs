//! Refinement studies: convergence tables with least-squares rates, and the
//! inf-sup sweep.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::coupling::assemble_c2;
use crate::error::{FdError, Result};
use crate::infsup::{build_norm_matrices, infsup_constant, InfSupLevel, InfSupReport};
use crate::norms::{error_norms, multiplier_error, multiplier_integral, self_convergence_norms, ErrorNorms};
use crate::problem::{immersed_spaces, solve_level, LevelSolve, ProblemConfig};

/// Least-squares slope of `log(err)` against `log(h)`.
pub fn least_squares_slope(h: &[f64], err: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = h.iter().zip(err).map(|(a, b)| (a.ln(), b.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// Errors against the exact radial solution.
    Exact,
    /// Errors against the same scheme two levels finer.
    SelfConvergence,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRecord {
    pub level: usize,
    pub h: f64,
    pub h2: f64,
    pub dofs_u: usize,
    pub dofs_u2: usize,
    pub dofs_lambda: usize,
    pub errors: ErrorNorms,
    /// `h2 ‖λ_h - Π λ_ref‖_0` against the finest solved level.
    pub lambda_err: Option<f64>,
    /// `Σ λ_i |K_i|`
    pub lambda_integral: f64,
    pub relative_residual: f64,
    pub constraint_residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rates {
    pub l2_u: f64,
    pub h1_u: f64,
    pub l2_u2: f64,
    pub h1_u2: f64,
    pub lambda_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateTable {
    pub reference: Reference,
    pub rows: Vec<LevelRecord>,
    /// Present when three or more levels are available.
    pub rates: Option<Rates>,
    /// Largest residuals over every solved level, reference levels included.
    pub max_relative_residual: f64,
    pub max_constraint_residual: f64,
}

impl RateTable {
    fn compute_rates(rows: &[LevelRecord]) -> Option<Rates> {
        if rows.len() < 3 {
            return None;
        }
        let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
        let col = |f: &dyn Fn(&LevelRecord) -> f64| least_squares_slope(&h, &rows.iter().map(f).collect::<Vec<_>>());
        let lam: Vec<(f64, f64)> = rows
            .iter()
            .filter_map(|r| r.lambda_err.map(|e| (r.h, e)))
            .filter(|(_, e)| *e > 0.0)
            .collect();
        let lambda_err = (lam.len() >= 3).then(|| {
            let (lh, le): (Vec<f64>, Vec<f64>) = lam.into_iter().unzip();
            least_squares_slope(&lh, &le)
        });
        Some(Rates {
            l2_u: col(&|r| r.errors.l2_u),
            h1_u: col(&|r| r.errors.h1_u),
            l2_u2: col(&|r| r.errors.l2_u2),
            h1_u2: col(&|r| r.errors.h1_u2),
            lambda_err,
        })
    }

    /// CSV with one row per level and a final `rates` row; `header` lines are
    /// written as `#` comments.
    pub fn to_csv(&self, header: &str) -> String {
        let mut out = String::new();
        for line in header.lines() {
            let _ = writeln!(out, "# {line}");
        }
        out.push_str("level,h,h2,dofs_u,dofs_u2,dofs_lambda,l2_u,h1_u,l2_u2,h1_u2,lambda_err,lambda_integral,relative_residual,constraint_residual\n");
        let opt = |v: Option<f64>| v.map_or_else(String::new, |v| format!("{v:.12e}"));
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{:.12e},{:.12e},{},{},{},{:.12e},{:.12e},{:.12e},{:.12e},{},{:.12e},{:.12e},{:.12e}",
                r.level,
                r.h,
                r.h2,
                r.dofs_u,
                r.dofs_u2,
                r.dofs_lambda,
                r.errors.l2_u,
                r.errors.h1_u,
                r.errors.l2_u2,
                r.errors.h1_u2,
                opt(r.lambda_err),
                r.lambda_integral,
                r.relative_residual,
                r.constraint_residual
            );
        }
        if let Some(rt) = &self.rates {
            let _ = writeln!(
                out,
                "rates,,,,,,{:.12e},{:.12e},{:.12e},{:.12e},{},,,",
                rt.l2_u,
                rt.h1_u,
                rt.l2_u2,
                rt.h1_u2,
                opt(rt.lambda_err)
            );
        }
        out
    }
}

fn solve_levels(cfg: &ProblemConfig, levels: std::ops::Range<usize>, parallel: bool) -> Result<Vec<LevelSolve>> {
    if parallel {
        levels.into_par_iter().map(|l| solve_level(cfg, l)).collect()
    } else {
        levels.map(|l| solve_level(cfg, l)).collect()
    }
}

/// Solves levels `0..levels` and tabulates errors. With a known exact
/// solution the errors are exact; otherwise two extra levels are solved and
/// each level is compared with the one two steps finer.
pub fn convergence_study(cfg: &ProblemConfig, levels: usize, parallel_levels: bool) -> Result<RateTable> {
    if levels == 0 {
        return Err(FdError::InvalidParameter("at least one level is required".into()));
    }
    let exact = cfg.exact_solution();
    let solved = if exact.is_some() { levels } else { levels + 2 };
    let sols = solve_levels(cfg, 0..solved, parallel_levels)?;
    let finest = sols.last().expect("nonempty");
    let mut rows = Vec::with_capacity(levels);
    for (k, s) in sols.iter().take(levels).enumerate() {
        let d = &s.disc;
        let sol = &s.solution;
        let errors = match &exact {
            Some(ex) => ex.with_fields(|outer, inner| error_norms(&d.vh, &sol.u, &d.v2, &sol.u2, &d.coupling, outer, inner)),
            None => {
                let r = &sols[k + 2];
                self_convergence_norms(
                    (&d.vh, &sol.u, &d.v2, &sol.u2),
                    (&r.disc.vh, &r.solution.u, &r.disc.v2, &r.solution.u2),
                )?
            }
        };
        let lambda_err = if std::ptr::eq(s, finest) {
            None
        } else {
            Some(multiplier_error(&sol.lambda, &d.immersed, &finest.solution.lambda, &finest.disc.immersed)?)
        };
        rows.push(LevelRecord {
            level: k,
            h: d.h(),
            h2: d.h2(),
            dofs_u: d.vh.ndofs(),
            dofs_u2: d.v2.ndofs(),
            dofs_lambda: d.lambda.ndofs(),
            errors,
            lambda_err,
            lambda_integral: multiplier_integral(&sol.lambda, &d.immersed),
            relative_residual: sol.relative_residual,
            constraint_residual: sol.constraint_residual,
        });
    }
    let rates = RateTable::compute_rates(&rows);
    let worst = |f: fn(&LevelSolve) -> f64| sols.iter().map(f).fold(0.0, f64::max);
    Ok(RateTable {
        reference: if exact.is_some() { Reference::Exact } else { Reference::SelfConvergence },
        rows,
        rates,
        max_relative_residual: worst(|s| s.solution.relative_residual),
        max_constraint_residual: worst(|s| s.solution.constraint_residual),
    })
}

/// Inf-sup estimates on the immersed meshes of levels `0..levels`.
pub fn infsup_sweep(cfg: &ProblemConfig, levels: usize) -> Result<InfSupReport> {
    if levels < 3 {
        return Err(FdError::InvalidParameter(format!("the inf-sup sweep needs at least 3 levels, got {levels}")));
    }
    let mut out = Vec::with_capacity(levels);
    for level in 0..levels {
        let (v2, lambda) = immersed_spaces(cfg, level)?;
        let (n1, n2) = build_norm_matrices(&v2, &lambda)?;
        let c2 = assemble_c2(&lambda, &v2)?;
        let h2 = v2.mesh().h;
        let est = infsup_constant(&c2, &n1, &n2, h2)?;
        out.push(InfSupLevel {
            level,
            h2,
            dim_v2h: v2.ndofs(),
            dim_lh: lambda.ndofs(),
            sigma_min: est.sigma_min,
            gamma_est: est.gamma,
        });
    }
    Ok(InfSupReport {
        element: cfg.element.tag().to_string(),
        levels: out,
    })
}
