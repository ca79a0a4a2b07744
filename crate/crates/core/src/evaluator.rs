//! Solution quality protocols.
//!
//! Two complementary checks. The residual protocol differentiates a sampled
//! solution by finite differences and substitutes it back into the ESD
//! system; the per-equation MSE between left and right sides measures how
//! well the samples satisfy the equations, with no reference solution
//! needed. The direct protocol compares two solutions on a shared grid with
//! R-squared, MAE, MSE and RMSE per state component.
//!
//! Both methods' solutions are differentiated by the same finite-difference
//! routine so the residual comparison treats them uniformly; the exact
//! network tangent is available separately as a diagnostic
//! ([`residual_mse_exact_tangent`]).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diff::forward_with_tangent;
use crate::error::{Error, Result};
use crate::esd::{rhs_unchecked, EsdParameters, State};
use crate::mlp::MlpNetwork;
use crate::rk45::SolutionTable;

/// Agreement metrics for one state component. `r_squared` is `None` when
/// the reference has zero variance (the ratio is undefined there).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    #[serde(rename = "r2")]
    pub r_squared: Option<f64>,
    pub mae: f64,
    pub mse: f64,
    pub rmse: f64,
}

/// Residual MSE of the four equations for one method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EquationMse {
    pub eq1: f64,
    pub eq2: f64,
    pub eq3: f64,
    pub eq4: f64,
}

impl EquationMse {
    pub fn from_array(a: [f64; 4]) -> Self {
        Self { eq1: a[0], eq2: a[1], eq3: a[2], eq4: a[3] }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.eq1, self.eq2, self.eq3, self.eq4]
    }
}

/// Report provenance: grid, span, method identifiers, config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub grid_size: usize,
    pub t_span: (f64, f64),
    pub reference_method: String,
    pub candidate_method: String,
    pub config_hash: String,
}

/// Per-component metrics block keyed like the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentMetrics {
    pub x1: Metrics,
    pub x2: Metrics,
    pub x3: Metrics,
    pub x4: Metrics,
}

impl ComponentMetrics {
    pub fn from_array(m: [Metrics; 4]) -> Self {
        Self { x1: m[0], x2: m[1], x3: m[2], x4: m[3] }
    }

    pub fn to_array(&self) -> [Metrics; 4] {
        [self.x1, self.x2, self.x3, self.x4]
    }
}

/// Residual MSEs per method plus the direct comparison block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub meta: ReportMeta,
    pub residual_mse: BTreeMap<String, EquationMse>,
    pub metrics: ComponentMetrics,
}

/// First-derivative estimate of every column by finite differences.
///
/// Central differences in the interior, second-order one-sided three-point
/// stencils at both ends, so every row is O(h^2) accurate. Requires at
/// least three rows on a uniform grid.
pub fn finite_diff_derivatives(table: &SolutionTable) -> Result<Vec<[f64; 4]>> {
    let times = table.times();
    let n = times.len();
    if n < 3 {
        return Err(Error::InvalidArgument(format!(
            "finite differences need at least 3 rows, got {n}"
        )));
    }
    let h = (times[n - 1] - times[0]) / (n - 1) as f64;
    // Uniformity up to the representation limit of the endpoints.
    let tol = (1e-12 * h).max(4.0 * f64::EPSILON * times[n - 1].abs().max(times[0].abs()));
    for i in 1..n {
        if ((times[i] - times[i - 1]) - h).abs() > tol {
            return Err(Error::NonUniformGrid { index: i });
        }
    }

    let states = table.states();
    let col = |i: usize| states[i].to_array();
    let mut out = Vec::with_capacity(n);
    let two_h = 2.0 * h;
    for i in 0..n {
        let mut d = [0.0f64; 4];
        for (c, dc) in d.iter_mut().enumerate() {
            *dc = if i == 0 {
                (-3.0 * col(0)[c] + 4.0 * col(1)[c] - col(2)[c]) / two_h
            } else if i == n - 1 {
                (3.0 * col(n - 1)[c] - 4.0 * col(n - 2)[c] + col(n - 3)[c]) / two_h
            } else {
                (col(i + 1)[c] - col(i - 1)[c]) / two_h
            };
        }
        out.push(d);
    }
    Ok(out)
}

/// Mean squared residual per equation: finite-difference derivatives of the
/// table substituted into the ESD system against its right-hand sides.
pub fn residual_mse(table: &SolutionTable, params: &EsdParameters) -> Result<[f64; 4]> {
    let derivs = finite_diff_derivatives(table)?;
    let mut sums = [0.0f64; 4];
    for (state, d) in table.states().iter().zip(&derivs) {
        let f = rhs_unchecked(params, state).to_array();
        for k in 0..4 {
            let r = d[k] - f[k];
            sums[k] += r * r;
        }
    }
    let inv_n = 1.0 / table.len() as f64;
    Ok([
        sums[0] * inv_n,
        sums[1] * inv_n,
        sums[2] * inv_n,
        sums[3] * inv_n,
    ])
}

/// Residual MSE of a network solution using its exact tangent instead of
/// finite differences. Diagnostic only; reports keep the uniform
/// finite-difference protocol.
pub fn residual_mse_exact_tangent(
    net: &MlpNetwork,
    times: &[f64],
    params: &EsdParameters,
) -> Result<[f64; 4]> {
    if times.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut sums = [0.0f64; 4];
    for &t in times {
        let out = forward_with_tangent(net, t);
        let f = rhs_unchecked(params, &State::from_array(out.value)).to_array();
        for k in 0..4 {
            let r = out.tangent[k] - f[k];
            sums[k] += r * r;
        }
    }
    let inv_n = 1.0 / times.len() as f64;
    Ok([
        sums[0] * inv_n,
        sums[1] * inv_n,
        sums[2] * inv_n,
        sums[3] * inv_n,
    ])
}

fn ensure_same_grid(reference: &SolutionTable, candidate: &SolutionTable) -> Result<()> {
    if reference.len() != candidate.len() {
        return Err(Error::GridMismatch {
            index: reference.len().min(candidate.len()),
            left: f64::NAN,
            right: f64::NAN,
        });
    }
    for (i, (a, b)) in reference.times().iter().zip(candidate.times()).enumerate() {
        if a != b {
            return Err(Error::GridMismatch { index: i, left: *a, right: *b });
        }
    }
    Ok(())
}

/// R-squared, MAE, MSE and RMSE per component; the reference plays the role
/// of the true values and supplies the mean in R-squared.
pub fn compare_metrics(
    reference: &SolutionTable,
    candidate: &SolutionTable,
) -> Result<[Metrics; 4]> {
    ensure_same_grid(reference, candidate)?;
    let n = reference.len() as f64;
    let mut out = [Metrics { r_squared: None, mae: 0.0, mse: 0.0, rmse: 0.0 }; 4];
    for (k, metric) in out.iter_mut().enumerate() {
        let y = reference.component(k);
        let y_hat = candidate.component(k);
        let mut abs_sum = 0.0;
        let mut sq_sum = 0.0;
        let mut y_sum = 0.0;
        for (yi, yh) in y.iter().zip(&y_hat) {
            let d = yi - yh;
            abs_sum += d.abs();
            sq_sum += d * d;
            y_sum += yi;
        }
        let y_mean = y_sum / n;
        let mut ss_tot = 0.0;
        for yi in &y {
            let d = yi - y_mean;
            ss_tot += d * d;
        }
        let mse = sq_sum / n;
        *metric = Metrics {
            r_squared: (ss_tot > 0.0).then(|| 1.0 - sq_sum / ss_tot),
            mae: abs_sum / n,
            mse,
            rmse: mse.sqrt(),
        };
    }
    Ok(out)
}

/// Assembles residual rows for both tables plus the direct-comparison block.
pub fn build_report(
    reference: &SolutionTable,
    candidate: &SolutionTable,
    params: &EsdParameters,
    meta: ReportMeta,
) -> Result<ComparisonReport> {
    ensure_same_grid(reference, candidate)?;
    let mut residual = BTreeMap::new();
    residual.insert(
        meta.reference_method.clone(),
        EquationMse::from_array(residual_mse(reference, params)?),
    );
    residual.insert(
        meta.candidate_method.clone(),
        EquationMse::from_array(residual_mse(candidate, params)?),
    );
    let metrics = compare_metrics(reference, candidate)?;
    Ok(ComparisonReport {
        meta,
        residual_mse: residual,
        metrics: ComponentMetrics::from_array(metrics),
    })
}

impl ComparisonReport {
    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Aligned-text rendering with 10 significant digits.
    pub fn render_text(&self) -> String {
        fn num(v: f64) -> String {
            format!("{v:.9e}")
        }
        fn opt(v: Option<f64>) -> String {
            v.map_or_else(|| "undefined".to_string(), num)
        }
        let mut out = String::new();
        let m = &self.meta;
        let _ = writeln!(
            out,
            "grid size {}   t span [{}, {}]   config {}",
            m.grid_size, m.t_span.0, m.t_span.1, m.config_hash
        );
        let _ = writeln!(out);
        let _ = writeln!(out, "Residual MSE (finite-difference substitution into the system)");
        let _ = writeln!(
            out,
            "{:<10}{:>18}{:>18}{:>18}{:>18}",
            "method", "eq1", "eq2", "eq3", "eq4"
        );
        for (method, mse) in &self.residual_mse {
            let _ = writeln!(
                out,
                "{:<10}{:>18}{:>18}{:>18}{:>18}",
                method,
                num(mse.eq1),
                num(mse.eq2),
                num(mse.eq3),
                num(mse.eq4)
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "Direct comparison ({} as reference, {} as candidate)",
            m.reference_method, m.candidate_method
        );
        let _ = writeln!(
            out,
            "{:<10}{:>18}{:>18}{:>18}{:>18}",
            "metric", "x1", "x2", "x3", "x4"
        );
        let cols = self.metrics.to_array();
        let rows = [
            ("r2", cols.map(|mt| opt(mt.r_squared))),
            ("mae", cols.map(|mt| num(mt.mae))),
            ("mse", cols.map(|mt| num(mt.mse))),
            ("rmse", cols.map(|mt| num(mt.rmse))),
        ];
        for (label, values) in rows {
            let _ = writeln!(
                out,
                "{:<10}{:>18}{:>18}{:>18}{:>18}",
                label, values[0], values[1], values[2], values[3]
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::esd::{default_chaotic_params, default_initial_state};
    use crate::rk45::{integrate, ToleranceSpec};

    fn table_from(times: Vec<f64>, rows: Vec<[f64; 4]>) -> SolutionTable {
        SolutionTable::new(times, rows.into_iter().map(State::from_array).collect()).unwrap()
    }

    fn scalar_table(times: Vec<f64>, values: Vec<f64>) -> SolutionTable {
        let rows = values.iter().map(|v| [*v, 0.0, 1.0, -1.0]).collect();
        table_from(times, rows)
    }

    fn meta() -> ReportMeta {
        ReportMeta {
            grid_size: 0,
            t_span: (0.0, 1.0),
            reference_method: "rk45".into(),
            candidate_method: "pinn".into(),
            config_hash: "test".into(),
        }
    }

    #[test]
    fn derivative_exact_on_quadratic() {
        // Central and one-sided second-order stencils are exact on t^2.
        let times = vec![0.0, 0.1, 0.2];
        let rows = times.iter().map(|t| [t * t, 0.0, 0.0, 0.0]).collect();
        let table = table_from(times, rows);
        let d = finite_diff_derivatives(&table).unwrap();
        assert!((d[1][0] - 0.2).abs() <= 1e-15);
        assert!((d[0][0] - 0.0).abs() <= 1e-15);
        assert!((d[2][0] - 0.4).abs() <= 1e-15);
    }

    #[test]
    fn derivative_of_constant_table_is_zero() {
        let times = vec![0.0, 0.5, 1.0, 1.5];
        let rows = vec![[1.0, 2.0, 3.0, 4.0]; 4];
        let d = finite_diff_derivatives(&table_from(times, rows)).unwrap();
        for row in d {
            assert_eq!(row, [0.0; 4]);
        }
    }

    #[test]
    fn derivative_accuracy_on_sine() {
        let n = 1000;
        let times: Vec<f64> = (0..n).map(|i| 10.0 * i as f64 / (n - 1) as f64).collect();
        let rows = times.iter().map(|t| [t.sin(), 0.0, 0.0, 0.0]).collect();
        let d = finite_diff_derivatives(&table_from(times.clone(), rows)).unwrap();
        let max_err = times
            .iter()
            .zip(&d)
            .map(|(t, di)| (di[0] - t.cos()).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err <= 1e-4, "max error {max_err}");
    }

    #[test]
    fn derivative_rejects_bad_grids() {
        let short = scalar_table(vec![0.0, 1.0], vec![0.0, 1.0]);
        assert!(finite_diff_derivatives(&short).is_err());
        // Nominal spacing comes from the endpoints (0.25 here), so the first
        // interval is already off.
        let uneven = scalar_table(vec![0.0, 0.1, 0.5], vec![0.0, 1.0, 2.0]);
        match finite_diff_derivatives(&uneven).unwrap_err() {
            Error::NonUniformGrid { index } => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn residual_mse_zero_at_equilibrium() {
        let p = default_chaotic_params();
        let times = vec![0.0, 0.5, 1.0, 1.5];
        let rows = vec![[0.0; 4]; 4];
        let mse = residual_mse(&table_from(times, rows), &p).unwrap();
        assert_eq!(mse, [0.0; 4]);
    }

    #[test]
    fn residual_mse_grows_when_a_column_is_perturbed() {
        let p = default_chaotic_params();
        let y0 = default_initial_state();
        let tol = ToleranceSpec::new(1e-9, 1e-9).unwrap();
        let grid: Vec<f64> = (0..500).map(|i| 10.0 * i as f64 / 499.0).collect();
        let clean = integrate(&p, &y0, (0.0, 10.0), &tol, &grid).unwrap();
        let base = residual_mse(&clean, &p).unwrap();

        // Deterministic noise on the x2 column.
        let noisy_states: Vec<State> = clean
            .states()
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut a = s.to_array();
                a[1] += 1e-3 * ((i * 2654435761) % 1000) as f64 / 1000.0 - 5e-4;
                State::from_array(a)
            })
            .collect();
        let noisy = SolutionTable::new(clean.times().to_vec(), noisy_states).unwrap();
        let perturbed = residual_mse(&noisy, &p).unwrap();
        assert!(
            perturbed[1] > base[1] * 10.0,
            "eq2 mse {} did not grow from {}",
            perturbed[1],
            base[1]
        );
    }

    #[test]
    fn residual_mse_is_time_shift_invariant() {
        // The system is autonomous: moving the time origin changes nothing.
        let p = default_chaotic_params();
        let y0 = default_initial_state();
        let tol = ToleranceSpec::new(1e-6, 1e-3).unwrap();
        let grid: Vec<f64> = (0..200).map(|i| 5.0 * i as f64 / 199.0).collect();
        let table = integrate(&p, &y0, (0.0, 5.0), &tol, &grid).unwrap();
        let shifted_times: Vec<f64> = table.times().iter().map(|t| t + 17.0).collect();
        let shifted = SolutionTable::new(shifted_times, table.states().to_vec()).unwrap();
        let a = residual_mse(&table, &p).unwrap();
        let b = residual_mse(&shifted, &p).unwrap();
        for k in 0..4 {
            assert!((a[k] - b[k]).abs() <= 1e-12 * a[k].abs().max(1e-12));
        }
    }

    #[test]
    fn identical_tables_give_perfect_metrics() {
        let times: Vec<f64> = (0..50).map(|i| i as f64 * 0.1).collect();
        let rows = times.iter().map(|t| [t.sin(), t.cos(), *t, t * t]).collect();
        let table = table_from(times, rows);
        let m = compare_metrics(&table, &table).unwrap();
        for mk in m {
            assert_eq!(mk.r_squared, Some(1.0));
            assert_eq!(mk.mae, 0.0);
            assert_eq!(mk.mse, 0.0);
            assert_eq!(mk.rmse, 0.0);
        }
    }

    #[test]
    fn constant_offset_metrics() {
        let times: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = times.iter().map(|t| t.sin()).collect();
        let reference = scalar_table(times.clone(), y.clone());
        let candidate = scalar_table(times, y.iter().map(|v| v + 1.0).collect());
        let m = compare_metrics(&reference, &candidate).unwrap();
        assert!((m[0].mae - 1.0).abs() <= 1e-12);
        assert!((m[0].mse - 1.0).abs() <= 1e-12);
        assert!((m[0].rmse - 1.0).abs() <= 1e-12);
        let ss_tot: f64 = {
            let mean = y.iter().sum::<f64>() / y.len() as f64;
            y.iter().map(|v| (v - mean) * (v - mean)).sum()
        };
        let expected_r2 = 1.0 - y.len() as f64 / ss_tot;
        assert!((m[0].r_squared.unwrap() - expected_r2).abs() <= 1e-12);
    }

    #[test]
    fn hand_case_one_two_three() {
        let reference = scalar_table(vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 3.0]);
        let candidate = scalar_table(vec![0.0, 1.0, 2.0], vec![2.0, 3.0, 4.0]);
        let m = compare_metrics(&reference, &candidate).unwrap()[0];
        assert!((m.mae - 1.0).abs() <= 1e-12);
        assert!((m.mse - 1.0).abs() <= 1e-12);
        assert!((m.rmse - 1.0).abs() <= 1e-12);
        assert!((m.r_squared.unwrap() + 0.5).abs() <= 1e-12);
    }

    #[test]
    fn zero_variance_reference_marks_r2_undefined() {
        let reference = scalar_table(vec![0.0, 1.0, 2.0], vec![2.0, 2.0, 2.0]);
        let candidate = scalar_table(vec![0.0, 1.0, 2.0], vec![2.5, 2.5, 2.5]);
        let m = compare_metrics(&reference, &candidate).unwrap()[0];
        assert_eq!(m.r_squared, None);
        assert!((m.mae - 0.5).abs() <= 1e-12);
        assert!((m.mse - 0.25).abs() <= 1e-12);
    }

    #[test]
    fn swapping_tables_changes_r2_but_not_error_metrics() {
        let reference = scalar_table(vec![0.0, 1.0, 2.0, 3.0], vec![0.0, 1.0, 2.0, 3.0]);
        let candidate = scalar_table(vec![0.0, 1.0, 2.0, 3.0], vec![0.2, 0.9, 2.2, 2.7]);
        let fwd = compare_metrics(&reference, &candidate).unwrap()[0];
        let rev = compare_metrics(&candidate, &reference).unwrap()[0];
        assert_eq!(fwd.mae, rev.mae);
        assert_eq!(fwd.mse, rev.mse);
        assert_eq!(fwd.rmse, rev.rmse);
        assert_ne!(fwd.r_squared, rev.r_squared);
    }

    #[test]
    fn rmse_squared_equals_mse() {
        let p = default_chaotic_params();
        let y0 = default_initial_state();
        let tol = ToleranceSpec::new(1e-6, 1e-3).unwrap();
        let grid: Vec<f64> = (0..100).map(|i| 3.0 * i as f64 / 99.0).collect();
        let a = integrate(&p, &y0, (0.0, 3.0), &tol, &grid).unwrap();
        let loose = ToleranceSpec::new(1e-3, 1e-2).unwrap();
        let b = integrate(&p, &y0, (0.0, 3.0), &loose, &grid).unwrap();
        for m in compare_metrics(&a, &b).unwrap() {
            assert!((m.rmse * m.rmse - m.mse).abs() <= 1e-12 * m.mse.max(1e-300));
            assert!(m.mae >= 0.0);
            if let Some(r2) = m.r_squared {
                assert!(r2 <= 1.0);
            }
        }
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let a = scalar_table(vec![0.0, 1.0, 2.0], vec![0.0, 1.0, 2.0]);
        let b = scalar_table(vec![0.0, 1.1, 2.0], vec![0.0, 1.0, 2.0]);
        match compare_metrics(&a, &b).unwrap_err() {
            Error::GridMismatch { index, left, right } => {
                assert_eq!(index, 1);
                assert_eq!((left, right), (1.0, 1.1));
            }
            other => panic!("unexpected {other:?}"),
        }
        let c = scalar_table(vec![0.0, 1.0], vec![0.0, 1.0]);
        assert!(compare_metrics(&a, &c).is_err());
    }

    #[test]
    fn report_round_trips_and_renders() {
        let times: Vec<f64> = (0..64).map(|i| i as f64 * 0.05).collect();
        let rows: Vec<[f64; 4]> = times
            .iter()
            .map(|t| [t.sin(), (2.0 * t).cos(), 0.1 * t, (t * 0.3).exp() - 1.0])
            .collect();
        let table = table_from(times, rows);
        let p = default_chaotic_params();
        let mut m = meta();
        m.grid_size = table.len();
        let report = build_report(&table, &table, &p, m).unwrap();

        // Identical slots: perfect metrics, equal residual rows.
        assert_eq!(report.metrics.x1.r_squared, Some(1.0));
        assert_eq!(report.metrics.x4.mse, 0.0);
        assert_eq!(report.residual_mse["rk45"], report.residual_mse["pinn"]);

        let json = report.to_json_string().unwrap();
        let back = ComparisonReport::from_json_str(&json).unwrap();
        assert_eq!(back, report);
        assert!(json.contains("\"residual_mse\""));
        assert!(json.contains("\"r2\""));

        let text = report.render_text();
        assert!(text.contains("rk45"));
        assert!(text.contains("pinn"));
        assert!(text.contains("rmse"));
    }

    #[test]
    fn exact_tangent_residual_is_reported_for_networks() {
        let net = crate::mlp::init_network(1, 6, 4).unwrap();
        let p = default_chaotic_params();
        let times: Vec<f64> = (0..32).map(|i| i as f64 * 0.03).collect();
        let mse = residual_mse_exact_tangent(&net, &times, &p).unwrap();
        assert!(mse.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(residual_mse_exact_tangent(&net, &[], &p).is_err());
    }
}
