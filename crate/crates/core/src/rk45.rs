//! Adaptive Dormand-Prince 5(4) integration of the ESD system.
//!
//! Seven-stage embedded pair with FSAL, the elementary step-size controller
//! and the standard quartic dense-output interpolant. Steps are never forced
//! onto requested output times; grid values come from the interpolant of the
//! accepted step covering them, so output does not perturb stepping.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::esd::{rhs, EsdParameters, State};

/// Absolute and relative step-error tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToleranceSpec {
    pub atol: f64,
    pub rtol: f64,
}

impl ToleranceSpec {
    pub fn new(atol: f64, rtol: f64) -> Result<Self> {
        let spec = Self { atol, rtol };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.atol > 0.0 && self.atol.is_finite() && self.rtol > 0.0 && self.rtol.is_finite())
        {
            return Err(Error::InvalidArgument(format!(
                "tolerances must be positive and finite, got atol={} rtol={}",
                self.atol, self.rtol
            )));
        }
        Ok(())
    }
}

/// A trajectory sampled on a strictly increasing time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SolutionTable {
    times: Vec<f64>,
    states: Vec<State>,
}

impl SolutionTable {
    pub fn new(times: Vec<f64>, states: Vec<State>) -> Result<Self> {
        if times.len() != states.len() {
            return Err(Error::InvalidArgument(format!(
                "times ({}) and states ({}) differ in length",
                times.len(),
                states.len()
            )));
        }
        for (i, t) in times.iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::InvalidArgument(format!("non-finite time at row {i}")));
            }
            if i > 0 && times[i - 1] >= *t {
                return Err(Error::InvalidArgument(format!(
                    "times not strictly increasing at row {i}"
                )));
            }
        }
        if states.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteState);
        }
        Ok(Self { times, states })
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[State] {
        &self.states
    }

    /// One state component over the whole grid, 0-based.
    pub fn component(&self, k: usize) -> Vec<f64> {
        assert!(k < 4, "component index out of range: {k}");
        self.states.iter().map(|s| s.to_array()[k]).collect()
    }

    /// CSV with header `t,x1,x2,x3,x4`, 17 significant digits per value
    /// (round-trip safe for f64).
    pub fn to_csv_string(&self) -> String {
        let mut out = String::with_capacity(self.len() * 96 + 16);
        out.push_str("t,x1,x2,x3,x4\n");
        for (t, s) in self.times.iter().zip(&self.states) {
            let a = s.to_array();
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                t, a[0], a[1], a[2], a[3]
            )
            .expect("string write");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }

    pub fn from_csv_str(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header.trim_end() == "t,x1,x2,x3,x4" => {}
            Some((_, header)) => {
                return Err(Error::Csv {
                    line: 1,
                    msg: format!("expected header `t,x1,x2,x3,x4`, got `{header}`"),
                })
            }
            None => return Err(Error::Csv { line: 1, msg: "empty document".into() }),
        }
        let mut times = Vec::new();
        let mut states = Vec::new();
        for (idx, line) in lines {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::Csv {
                    line: lineno,
                    msg: format!("expected 5 fields, got {}", fields.len()),
                });
            }
            let mut values = [0.0f64; 5];
            for (v, field) in values.iter_mut().zip(&fields) {
                *v = field.trim().parse::<f64>().map_err(|e| Error::Csv {
                    line: lineno,
                    msg: format!("bad float `{field}`: {e}"),
                })?;
            }
            times.push(values[0]);
            states.push(State::new(values[1], values[2], values[3], values[4]));
        }
        Self::new(times, states)
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_csv_str(&text)
    }
}

/// One accepted step with its stage derivatives, enough to interpolate
/// anywhere inside `[t_start, t_end]`.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t_start: f64,
    pub t_end: f64,
    pub y_start: State,
    pub y_end: State,
    pub k_stages: [[f64; 4]; 7],
}

// Dormand-Prince 5(4) tableau. k7 is evaluated at the 5th-order solution
// (FSAL): it feeds the error estimate and the dense output, and is reused
// as k1 of the next step.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

const A: [[f64; 6]; 7] = [
    [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];

/// Fifth-order solution weights (row 7 of `A`; `b7 = 0`).
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];

/// Error weights `B5 - B4`; the embedded 4th-order difference.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Dense-output coefficients: `y(t0 + theta*h) = y0 + h * sum_i k_i *
/// sum_j P[i][j] * theta^(j+1)`. Quartic in theta; rows sum to `B5` so
/// `theta = 1` reproduces the step endpoint.
const P: [[f64; 4]; 7] = [
    [
        1.0,
        -8048581381.0 / 2820520608.0,
        8663915743.0 / 2820520608.0,
        -12715105075.0 / 11282082432.0,
    ],
    [0.0, 0.0, 0.0, 0.0],
    [
        0.0,
        131558114200.0 / 32700410799.0,
        -68118460800.0 / 10900136933.0,
        87487479700.0 / 32700410799.0,
    ],
    [
        0.0,
        -1754552775.0 / 470086768.0,
        14199869525.0 / 1410260304.0,
        -10690763975.0 / 1880347072.0,
    ],
    [
        0.0,
        127303824393.0 / 49829197408.0,
        -318862633887.0 / 49829197408.0,
        701980252875.0 / 199316789632.0,
    ],
    [
        0.0,
        -282668133.0 / 205662961.0,
        2019193451.0 / 616988883.0,
        -1453857185.0 / 822651844.0,
    ],
    [
        0.0,
        40617522.0 / 29380423.0,
        -110615467.0 / 29380423.0,
        69997945.0 / 29380423.0,
    ],
];

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
/// Steps below this fraction of the span abort the integration.
const MIN_STEP_FRACTION: f64 = 1e-14;

fn eval(params: &EsdParameters, t: f64, y: &State) -> Result<[f64; 4]> {
    let _ = t; // the system is autonomous
    rhs(params, y).map(|d| d.to_array())
}

/// One embedded 5(4) step from `(t, y)` with step size `h`.
///
/// Returns the 5th-order solution, the componentwise `|y5 - y4|` estimate
/// and all seven stage derivatives. Acceptance is the caller's business.
pub fn step(
    params: &EsdParameters,
    y: &State,
    t: f64,
    h: f64,
) -> Result<(State, [f64; 4], [[f64; 4]; 7])> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidArgument(format!("step size must be positive, got {h}")));
    }
    let k1 = eval(params, t, y)?;
    step_with_k1(params, y, t, h, k1)
}

fn step_with_k1(
    params: &EsdParameters,
    y: &State,
    t: f64,
    h: f64,
    k1: [f64; 4],
) -> Result<(State, [f64; 4], [[f64; 4]; 7])> {
    let y0 = y.to_array();
    let mut k = [[0.0f64; 4]; 7];
    k[0] = k1;
    for stage in 1..6 {
        let mut ys = [0.0f64; 4];
        for c in 0..4 {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate().take(stage) {
                acc += A[stage][j] * kj[c];
            }
            ys[c] = y0[c] + h * acc;
        }
        k[stage] = eval(params, t + C[stage] * h, &State::from_array(ys))?;
    }
    // 5th-order solution, then the FSAL stage at (t + h, y5).
    let mut y5 = [0.0f64; 4];
    for c in 0..4 {
        let mut acc = 0.0;
        for (j, kj) in k.iter().enumerate().take(6) {
            acc += B5[j] * kj[c];
        }
        y5[c] = y0[c] + h * acc;
    }
    k[6] = eval(params, t + h, &State::from_array(y5))?;

    let mut err = [0.0f64; 4];
    for c in 0..4 {
        let mut acc = 0.0;
        for (j, kj) in k.iter().enumerate() {
            acc += E[j] * kj[c];
        }
        err[c] = (h * acc).abs();
    }
    Ok((State::from_array(y5), err, k))
}

/// Dense-output evaluation inside an accepted step.
pub fn interpolate(rec: &StepRecord, t: f64) -> Result<State> {
    if !(rec.t_start <= t && t <= rec.t_end) {
        return Err(Error::InvalidArgument(format!(
            "t={t} outside step [{}, {}]",
            rec.t_start, rec.t_end
        )));
    }
    let h = rec.t_end - rec.t_start;
    let theta = (t - rec.t_start) / h;
    let y0 = rec.y_start.to_array();
    let mut out = [0.0f64; 4];
    for c in 0..4 {
        // Horner evaluation of sum_j theta^(j+1) * (K^T P)[c][j].
        let mut poly = 0.0;
        for j in (0..4).rev() {
            let mut kp = 0.0;
            for (i, ki) in rec.k_stages.iter().enumerate() {
                kp += ki[c] * P[i][j];
            }
            poly = theta * (poly + kp);
        }
        out[c] = y0[c] + h * poly;
    }
    Ok(State::from_array(out))
}

/// Scaled RMS error norm over the four components.
fn error_norm(err: &[f64; 4], y_old: &State, y_new: &State, tol: &ToleranceSpec) -> f64 {
    let old = y_old.to_array();
    let new = y_new.to_array();
    let mut acc = 0.0;
    for c in 0..4 {
        let scale = tol.atol + tol.rtol * old[c].abs().max(new[c].abs());
        let ratio = err[c] / scale;
        acc += ratio * ratio;
    }
    (acc / 4.0).sqrt()
}

/// Classic automatic initial step-size heuristic from the local derivative.
fn initial_step(
    params: &EsdParameters,
    t0: f64,
    y0: &State,
    f0: &[f64; 4],
    span: f64,
    tol: &ToleranceSpec,
) -> Result<f64> {
    let y = y0.to_array();
    let scale: Vec<f64> = y.iter().map(|v| tol.atol + tol.rtol * v.abs()).collect();
    let norm = |v: &[f64; 4]| -> f64 {
        let mut acc = 0.0;
        for c in 0..4 {
            let r = v[c] / scale[c];
            acc += r * r;
        }
        (acc / 4.0).sqrt()
    };
    let d0 = norm(&y);
    let d1 = norm(f0);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };

    let mut y1 = [0.0f64; 4];
    for c in 0..4 {
        y1[c] = y[c] + h0 * f0[c];
    }
    let f1 = eval(params, t0 + h0, &State::from_array(y1))?;
    let mut df = [0.0f64; 4];
    for c in 0..4 {
        df[c] = f1[c] - f0[c];
    }
    let d2 = norm(&df) / h0;

    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    Ok((100.0 * h0).min(h1).min(span))
}

/// Integrates the ESD system over `t_span` and samples the solution at the
/// requested `grid` times via dense output.
///
/// Adaptive Dormand-Prince 5(4): a step is accepted when the scaled RMS of
/// the embedded error estimate is at most 1 (componentwise scale
/// `atol + rtol*|y|`), and the step size is updated by
/// `h * clamp(0.9 * err_norm^(-1/5), 0.2, 5)`. Propagation uses the
/// 5th-order solution.
pub fn integrate(
    params: &EsdParameters,
    y0: &State,
    t_span: (f64, f64),
    tol: &ToleranceSpec,
    grid: &[f64],
) -> Result<SolutionTable> {
    let (a, b) = t_span;
    if !(a.is_finite() && b.is_finite() && a < b) {
        return Err(Error::InvalidArgument(format!("invalid t_span ({a}, {b})")));
    }
    tol.validate()?;
    if !y0.is_finite() {
        return Err(Error::NonFiniteState);
    }
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty output grid".into()));
    }
    for (i, t) in grid.iter().enumerate() {
        if !t.is_finite() || *t < a || *t > b {
            return Err(Error::InvalidArgument(format!(
                "grid time {t} at index {i} outside span [{a}, {b}]"
            )));
        }
        if i > 0 && grid[i - 1] >= *t {
            return Err(Error::InvalidArgument(format!(
                "grid not strictly ascending at index {i}"
            )));
        }
    }

    let span = b - a;
    let min_step = MIN_STEP_FRACTION * span;
    let mut t = a;
    let mut y = *y0;
    let mut k1 = eval(params, t, &y)?;
    let mut h = initial_step(params, t, &y, &k1, span, tol)?;

    let mut times = Vec::with_capacity(grid.len());
    let mut states = Vec::with_capacity(grid.len());
    let mut gi = 0;

    while t < b {
        if !h.is_finite() || h < min_step {
            return Err(Error::IntegrationFailure {
                t,
                reason: format!("step size underflow (h={h:e})"),
            });
        }
        let capped = h >= b - t;
        let h_try = if capped { b - t } else { h };
        let (y5, err, stages) = match step_with_k1(params, &y, t, h_try, k1) {
            Ok(v) => v,
            Err(Error::NonFiniteState) => {
                return Err(Error::IntegrationFailure { t, reason: "non-finite state".into() })
            }
            Err(e) => return Err(e),
        };
        if !y5.is_finite() || err.iter().any(|e| !e.is_finite()) {
            return Err(Error::IntegrationFailure { t, reason: "non-finite state".into() });
        }
        let err_norm = error_norm(&err, &y, &y5, tol);
        let factor = if err_norm == 0.0 {
            MAX_FACTOR
        } else {
            (SAFETY * err_norm.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
        };
        if err_norm <= 1.0 {
            let t_end = if capped { b } else { t + h_try };
            let rec = StepRecord {
                t_start: t,
                t_end,
                y_start: y,
                y_end: y5,
                k_stages: stages,
            };
            while gi < grid.len() && grid[gi] <= t_end {
                times.push(grid[gi]);
                states.push(interpolate(&rec, grid[gi])?);
                gi += 1;
            }
            t = t_end;
            y = y5;
            k1 = stages[6]; // FSAL
        }
        h = h_try * factor;
    }

    debug_assert_eq!(gi, grid.len(), "all grid points covered by accepted steps");
    SolutionTable::new(times, states)
}
