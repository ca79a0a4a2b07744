//! Exact differentiation for the PINN losses.
//!
//! Two derivative flavours are needed. The time derivative of the network
//! outputs, `dX/dt`, enters the residual losses; it is computed by forward
//! tangent propagation, exact because the input is a single scalar. The
//! gradient of a loss with respect to every weight and bias is computed by
//! reverse accumulation through both the primal and the tangent graphs, so
//! paths through `X'(t)` are differentiated exactly as well.
//!
//! Central finite differences are confined to the verification oracles
//! [`finite_diff_gradient`] and [`finite_diff_tangent`].
//!
//! Per-collocation-point work is evaluated in fixed-size row chunks
//! (optionally in parallel) and reduced in chunk order, so identical inputs
//! give bit-identical results at any thread count.

use ndarray::{Array1, Array2, Axis};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::esd::{rhs_unchecked, EsdParameters, State};
use crate::mlp::{tanh_activation, MlpNetwork};
use crate::trainer::CollocationGrid;

/// Rows per evaluation chunk. Fixed so the floating-point reduction order
/// does not depend on the thread count.
const CHUNK_ROWS: usize = 256;

/// Network output and its exact time derivative at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TangentOutput {
    pub value: [f64; 4],
    pub tangent: [f64; 4],
}

/// Flat loss gradient, aligned entry-for-entry with
/// [`crate::mlp::ParameterVector`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector(Vec<f64>);

impl GradientVector {
    pub fn from_vec(v: Vec<f64>) -> Self {
        Self(v)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

/// Which weighted combination of the five loss terms to differentiate.
///
/// The residual term for equation `k` is the mean over the batch of the
/// squared residual of that equation, weighted by `eq_weights[k]`; the
/// initial-condition term is the squared deviation from `initial_state` at
/// `t_initial`, weighted by `initial_weight`. The usual total loss is
/// `eq_weights = [alpha; 4]`, `initial_weight = beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossSpec {
    pub esd: EsdParameters,
    pub eq_weights: [f64; 4],
    pub initial_weight: f64,
    pub t_initial: f64,
    pub initial_state: State,
}

impl LossSpec {
    /// `alpha * (eq1 + eq2 + eq3 + eq4) + beta * initial`.
    pub fn total(
        esd: EsdParameters,
        alpha: f64,
        beta: f64,
        t_initial: f64,
        initial_state: State,
    ) -> Self {
        Self {
            esd,
            eq_weights: [alpha; 4],
            initial_weight: beta,
            t_initial,
            initial_state,
        }
    }

    /// A single residual term, unweighted. `eq` is 0-based.
    pub fn equation(esd: EsdParameters, eq: usize) -> Self {
        assert!(eq < 4, "equation index out of range: {eq}");
        let mut eq_weights = [0.0; 4];
        eq_weights[eq] = 1.0;
        Self {
            esd,
            eq_weights,
            initial_weight: 0.0,
            t_initial: 0.0,
            initial_state: State::ZERO,
        }
    }

    /// The initial-condition term alone, unweighted.
    pub fn initial(esd: EsdParameters, t_initial: f64, initial_state: State) -> Self {
        Self {
            esd,
            eq_weights: [0.0; 4],
            initial_weight: 1.0,
            t_initial,
            initial_state,
        }
    }

    /// Multiplies every weight by `c`.
    pub fn scaled(mut self, c: f64) -> Self {
        for w in &mut self.eq_weights {
            *w *= c;
        }
        self.initial_weight *= c;
        self
    }
}

/// Unweighted values of the five loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    /// Mean squared residual per equation.
    pub eq: [f64; 4],
    /// Squared deviation from the initial condition.
    pub initial: f64,
}

impl LossTerms {
    /// The weighted combination defined by `spec`.
    pub fn weighted(&self, spec: &LossSpec) -> f64 {
        let mut total = 0.0;
        for k in 0..4 {
            total += spec.eq_weights[k] * self.eq[k];
        }
        total + spec.initial_weight * self.initial
    }
}

/// Network value and exact `dX/dt` by tangent propagation.
///
/// The primal computation is operation-for-operation the same as
/// [`MlpNetwork::forward`], so `value` is bit-identical to it.
pub fn forward_with_tangent(net: &MlpNetwork, t: f64) -> TangentOutput {
    let (t_in, dt_in) = net.map_input(t);
    let mut a = Array1::from_elem(1, t_in);
    let mut da = Array1::from_elem(1, dt_in);
    let last = net.layers().len() - 1;
    for (v, layer) in net.layers().iter().enumerate() {
        let mut z = a.dot(layer.weights()) + layer.bias();
        let zdot = da.dot(layer.weights());
        if v < last {
            z.mapv_inplace(tanh_activation);
            da = z.mapv(|ai| 1.0 - ai * ai) * &zdot;
        } else {
            da = zdot;
        }
        a = z;
    }
    TangentOutput {
        value: [a[0], a[1], a[2], a[3]],
        tangent: [da[0], da[1], da[2], da[3]],
    }
}

/// Central-difference approximation of the time derivative,
/// `(forward(t+h) - forward(t-h)) / 2h`. Verification oracle for
/// [`forward_with_tangent`].
pub fn finite_diff_tangent(net: &MlpNetwork, t: f64, h: f64) -> Result<[f64; 4]> {
    if h <= 0.0 {
        return Err(Error::InvalidArgument("finite-difference step must be > 0".into()));
    }
    let plus = net.forward(t + h);
    let minus = net.forward(t - h);
    let mut out = [0.0; 4];
    for k in 0..4 {
        out[k] = (plus[k] - minus[k]) / (2.0 * h);
    }
    Ok(out)
}

/// Loss value and exact parameter gradient over a collocation batch.
pub fn loss_gradient(
    net: &MlpNetwork,
    batch: &CollocationGrid,
    spec: &LossSpec,
) -> Result<(f64, GradientVector)> {
    let (_, total, grad) = loss_terms_and_gradient(net, batch, spec)?;
    Ok((total, grad))
}

/// Like [`loss_gradient`] but also returns the unweighted term values, which
/// the trainer records per epoch.
pub fn loss_terms_and_gradient(
    net: &MlpNetwork,
    batch: &CollocationGrid,
    spec: &LossSpec,
) -> Result<(LossTerms, f64, GradientVector)> {
    let (terms, grad) = evaluate(net, batch.times(), spec, true)?;
    let grad = grad.expect("gradient requested");
    Ok((terms, terms.weighted(spec), GradientVector(grad)))
}

/// Loss value only (no gradient work).
pub fn loss_value(net: &MlpNetwork, batch: &CollocationGrid, spec: &LossSpec) -> Result<f64> {
    let (terms, _) = evaluate(net, batch.times(), spec, false)?;
    Ok(terms.weighted(spec))
}

/// Unweighted term values only.
pub fn loss_terms(net: &MlpNetwork, batch: &CollocationGrid, spec: &LossSpec) -> Result<LossTerms> {
    let (terms, _) = evaluate(net, batch.times(), spec, false)?;
    Ok(terms)
}

/// Central-difference gradient of the loss with respect to every parameter.
/// Verification oracle for [`loss_gradient`].
pub fn finite_diff_gradient(
    net: &MlpNetwork,
    batch: &CollocationGrid,
    spec: &LossSpec,
    h: f64,
) -> Result<GradientVector> {
    if h <= 0.0 {
        return Err(Error::InvalidArgument("finite-difference step must be > 0".into()));
    }
    if batch.times().is_empty() {
        return Err(Error::EmptyBatch);
    }
    let params = net.flatten().into_vec();
    let grad = central_difference(
        |p| {
            let candidate = net
                .unflatten(&crate::mlp::ParameterVector::from_vec(p.to_vec()))
                .expect("same length as flatten");
            loss_value(&candidate, batch, spec).expect("batch already validated")
        },
        &params,
        h,
    );
    Ok(GradientVector(grad))
}

/// Central differences of a scalar function of a flat vector,
/// `(f(p + h e_j) - f(p - h e_j)) / 2h` per coordinate.
pub(crate) fn central_difference<F: Fn(&[f64]) -> f64>(f: F, p: &[f64], h: f64) -> Vec<f64> {
    let mut work = p.to_vec();
    let mut grad = Vec::with_capacity(p.len());
    for j in 0..p.len() {
        let orig = work[j];
        work[j] = orig + h;
        let fp = f(&work);
        work[j] = orig - h;
        let fm = f(&work);
        work[j] = orig;
        grad.push((fp - fm) / (2.0 * h));
    }
    grad
}

/// Partial derivatives of the ESD right-hand side, `jac[k][m] = df_k/dx_m`.
/// Needed so residual gradients can flow back through the state values.
fn rhs_jacobian(p: &EsdParameters, s: &State) -> [[f64; 4]; 4] {
    [
        [
            p.a1 * (1.0 - 2.0 * s.x1 / p.m),
            -p.a2,
            -p.a2,
            -p.d3,
        ],
        [
            p.z3 * (p.n - 2.0 * s.x1 + s.x3),
            -p.z1,
            -p.z2 + p.z3 * s.x1,
            0.0,
        ],
        [p.s1 * p.s2 * s.x3, 0.0, p.s1 * (p.s2 * s.x1 - p.s3), 0.0],
        [p.d1, 0.0, 0.0, -p.d2],
    ]
}

struct ChunkOutput {
    eq_sq_sums: [f64; 4],
    grad: Option<Vec<f64>>,
}

/// Element offset of each layer's parameters in the flat vector.
fn layer_offsets(net: &MlpNetwork) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(net.layers().len());
    let mut off = 0;
    for layer in net.layers() {
        offsets.push(off);
        off += layer.weights().len() + layer.bias().len();
    }
    offsets
}

/// Evaluates the loss terms (and optionally the gradient) over `times`.
///
/// The residual sums are accumulated per chunk and reduced in chunk order;
/// the initial-condition term is added after all chunks.
fn evaluate(
    net: &MlpNetwork,
    times: &[f64],
    spec: &LossSpec,
    want_grad: bool,
) -> Result<(LossTerms, Option<Vec<f64>>)> {
    if times.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let inv_n = 1.0 / times.len() as f64;
    let offsets = layer_offsets(net);

    let outputs: Vec<ChunkOutput> = times
        .par_chunks(CHUNK_ROWS)
        .map(|chunk| eval_chunk(net, chunk, spec, inv_n, want_grad, &offsets))
        .collect();

    let mut eq_sq = [0.0f64; 4];
    let mut grad = want_grad.then(|| vec![0.0f64; net.parameter_count()]);
    for out in outputs {
        for (acc, part) in eq_sq.iter_mut().zip(&out.eq_sq_sums) {
            *acc += part;
        }
        if let (Some(acc), Some(part)) = (grad.as_deref_mut(), out.grad.as_deref()) {
            for (a, p) in acc.iter_mut().zip(part) {
                *a += p;
            }
        }
    }
    let eq = [
        eq_sq[0] * inv_n,
        eq_sq[1] * inv_n,
        eq_sq[2] * inv_n,
        eq_sq[3] * inv_n,
    ];

    let initial = initial_term(net, spec, grad.as_deref_mut(), &offsets);

    Ok((LossTerms { eq, initial }, grad))
}

/// Forward-with-tangent over one chunk of collocation points, plus reverse
/// accumulation of the residual-loss gradient when requested.
fn eval_chunk(
    net: &MlpNetwork,
    times: &[f64],
    spec: &LossSpec,
    inv_n: f64,
    want_grad: bool,
    offsets: &[usize],
) -> ChunkOutput {
    let n = times.len();
    let layers = net.layers();
    let hidden = layers.len() - 1;

    // Forward pass, keeping the per-layer trace only if we will backprop.
    // acts[v] is the input to layer v; hidden_aux[v] = (sech2, zdot) of
    // hidden layer v with sech2 = 1 - tanh^2(z).
    let mut acts: Vec<(Array2<f64>, Array2<f64>)> = Vec::new();
    let mut hidden_aux: Vec<(Array2<f64>, Array2<f64>)> = Vec::new();

    let mut a = Array2::from_shape_fn((n, 1), |(i, _)| net.map_input(times[i]).0);
    let dt_in = net.map_input(0.0).1;
    let mut da = Array2::from_elem((n, 1), dt_in);

    let (y, ydot) = {
        let mut out = None;
        for (v, layer) in layers.iter().enumerate() {
            let mut z = a.dot(layer.weights());
            z += layer.bias();
            let zdot = da.dot(layer.weights());
            if v < hidden {
                z.mapv_inplace(tanh_activation);
                let sech2 = z.mapv(|ai| 1.0 - ai * ai);
                let da_next = &sech2 * &zdot;
                if want_grad {
                    acts.push((a, da));
                    hidden_aux.push((sech2, zdot));
                }
                a = z;
                da = da_next;
            } else {
                if want_grad {
                    acts.push((a, da));
                }
                out = Some((z, zdot));
                break;
            }
        }
        out.expect("network has at least one layer")
    };

    // Residuals r = dX/dt - f(X) and the seed gradients for Y and dY.
    let mut eq_sq_sums = [0.0f64; 4];
    let mut gy = want_grad.then(|| Array2::<f64>::zeros((n, 4)));
    let mut gydot = want_grad.then(|| Array2::<f64>::zeros((n, 4)));
    for i in 0..n {
        let s = State::new(y[[i, 0]], y[[i, 1]], y[[i, 2]], y[[i, 3]]);
        let f = rhs_unchecked(&spec.esd, &s).to_array();
        let mut r = [0.0; 4];
        for k in 0..4 {
            r[k] = ydot[[i, k]] - f[k];
            eq_sq_sums[k] += r[k] * r[k];
        }
        if let (Some(gy), Some(gydot)) = (gy.as_mut(), gydot.as_mut()) {
            let jac = rhs_jacobian(&spec.esd, &s);
            for k in 0..4 {
                let g = spec.eq_weights[k] * (2.0 * inv_n) * r[k];
                gydot[[i, k]] = g;
                for m in 0..4 {
                    gy[[i, m]] -= g * jac[k][m];
                }
            }
        }
    }

    if !want_grad {
        return ChunkOutput { eq_sq_sums, grad: None };
    }
    let gy = gy.expect("gradient path");
    let gydot = gydot.expect("gradient path");

    // Reverse pass through the joint primal + tangent graph.
    let mut grad = vec![0.0f64; net.parameter_count()];
    let (a_last, da_last) = &acts[hidden];
    let dw_out = a_last.t().dot(&gy) + da_last.t().dot(&gydot);
    let db_out = gy.sum_axis(Axis(0));
    write_layer_grad(&mut grad, offsets[hidden], &dw_out, &db_out);

    let w_out = layers[hidden].weights();
    let mut ga = gy.dot(&w_out.t());
    let mut gda = gydot.dot(&w_out.t());

    for v in (0..hidden).rev() {
        let (sech2, zdot) = &hidden_aux[v];
        let a_out = &acts[v + 1].0;
        let gzdot = &gda * sech2;
        // d(sech2)/d(a_out) = -2 a_out feeds the tangent path's dependence
        // on the primal activations back into ga.
        let ga_total = &ga - &(2.0 * (a_out * &gda * zdot));
        let gz = &ga_total * sech2;
        let (a_in, da_in) = &acts[v];
        let dw = a_in.t().dot(&gz) + da_in.t().dot(&gzdot);
        let db = gz.sum_axis(Axis(0));
        write_layer_grad(&mut grad, offsets[v], &dw, &db);
        if v > 0 {
            let w = layers[v].weights();
            ga = gz.dot(&w.t());
            gda = gzdot.dot(&w.t());
        }
    }

    ChunkOutput { eq_sq_sums, grad: Some(grad) }
}

fn write_layer_grad(grad: &mut [f64], offset: usize, dw: &Array2<f64>, db: &Array1<f64>) {
    let mut idx = offset;
    for v in dw.iter() {
        grad[idx] += v;
        idx += 1;
    }
    for v in db.iter() {
        grad[idx] += v;
        idx += 1;
    }
}

/// Value (always) and gradient contribution (when `grad` is given and the
/// weight is nonzero) of the initial-condition term. Primal-only backprop.
fn initial_term(
    net: &MlpNetwork,
    spec: &LossSpec,
    grad: Option<&mut [f64]>,
    offsets: &[usize],
) -> f64 {
    let layers = net.layers();
    let hidden = layers.len() - 1;
    let (t_in, _) = net.map_input(spec.t_initial);

    let mut acts: Vec<Vec<f64>> = vec![vec![t_in]];
    let mut sech2s: Vec<Vec<f64>> = Vec::with_capacity(hidden);
    for (v, layer) in layers.iter().enumerate() {
        let a_in = &acts[v];
        let shape = layer.shape();
        let mut z = vec![0.0; shape.fan_out];
        for (j, zj) in z.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (i, ai) in a_in.iter().enumerate() {
                acc += ai * layer.weights()[[i, j]];
            }
            *zj = acc + layer.bias()[j];
        }
        if v < hidden {
            for zj in z.iter_mut() {
                *zj = tanh_activation(*zj);
            }
            sech2s.push(z.iter().map(|a| 1.0 - a * a).collect());
        }
        acts.push(z);
    }

    let y = &acts[layers.len()];
    let x0 = spec.initial_state.to_array();
    let mut value = 0.0;
    let mut deviation = [0.0; 4];
    for k in 0..4 {
        deviation[k] = y[k] - x0[k];
        value += deviation[k] * deviation[k];
    }

    let grad = match grad {
        Some(g) if spec.initial_weight != 0.0 => g,
        _ => return value,
    };

    let w0 = spec.initial_weight;
    let mut gz: Vec<f64> = deviation.iter().map(|d| 2.0 * w0 * d).collect();
    for v in (0..layers.len()).rev() {
        let layer = &layers[v];
        let shape = layer.shape();
        let a_in = &acts[v];
        let off = offsets[v];
        for i in 0..shape.fan_in {
            for j in 0..shape.fan_out {
                grad[off + i * shape.fan_out + j] += a_in[i] * gz[j];
            }
        }
        let bias_off = off + shape.fan_in * shape.fan_out;
        for j in 0..shape.fan_out {
            grad[bias_off + j] += gz[j];
        }
        if v > 0 {
            let mut ga = vec![0.0; shape.fan_in];
            for (i, gai) in ga.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (j, gzj) in gz.iter().enumerate() {
                    acc += layer.weights()[[i, j]] * gzj;
                }
                *gai = acc;
            }
            // Pull back through tanh of the producing hidden layer.
            gz = ga
                .iter()
                .zip(&sech2s[v - 1])
                .map(|(g, s)| g * s)
                .collect();
        }
    }
    value
}
