//! Scaled forward-algorithm log-likelihood of the embedded model, its
//! gradient, and two independent oracles: exhaustive path enumeration and the
//! exact semi-Markov forward recursion.

use crate::ad::{Real, Tape};
use crate::embedding::{
    build_phi_g, stationary_vector_g, SparseTransitionMatrix, StationarySolve,
};
use crate::error::{Error, Result};
use crate::math::special::{log_add_exp, log_sum_exp};
use crate::model::{
    dwell_log_pmf_g, emission_log_density_g, InitialDistribution, ModelSpec, ParamsG, ParamVector,
    TimeSeries,
};
use crate::transform::constrain_g;

/// Output of the scaled forward pass.
#[derive(Debug, Clone)]
pub struct ForwardResult {
    /// Total log-likelihood; equals the sum of `log_scale`.
    pub log_likelihood: f64,
    /// Per-step log normalizing constants.
    pub log_scale: Vec<f64>,
    /// Final scaled forward vector (a probability simplex over aggregates).
    pub alpha_t: Vec<f64>,
}

/// Initial distribution over expanded states for the given policy.
pub fn initial_vector_g<S: StationarySolve>(
    spec: &ModelSpec,
    phi: &SparseTransitionMatrix<S>,
) -> Result<Vec<S>> {
    match spec.initial {
        InitialDistribution::Stationary => stationary_vector_g(phi),
        InitialDistribution::FixedUnitVector(state) => {
            let ctx = phi.values[0];
            let head = phi.aggregate_offsets[state];
            Ok((0..phi.dim)
                .map(|i| if i == head { ctx.lit(1.0) } else { ctx.lit(0.0) })
                .collect())
        }
    }
}

/// One scaled forward pass, generic over the evaluation scalar.
///
/// Returns (total log-likelihood, per-step log scales, final forward simplex).
pub fn forward_g<S: StationarySolve>(
    spec: &ModelSpec,
    params: &ParamsG<S>,
    y: &TimeSeries,
) -> Result<(S, Vec<S>, Vec<S>)> {
    let phi = build_phi_g(spec, params);
    let pi0 = initial_vector_g(spec, &phi)?;
    forward_with_phi(spec, params, y, &phi, &pi0)
}

fn emission_row<S: Real>(
    spec: &ModelSpec,
    params: &ParamsG<S>,
    yt: f64,
    t: usize,
) -> Result<Vec<S>> {
    let mut p_state = Vec::with_capacity(spec.n_states);
    for j in 0..spec.n_states {
        let dens =
            emission_log_density_g(&params.emissions[j], yt, t, spec.omega_hat).exp();
        if !dens.val().is_finite() {
            return Err(Error::BadEmission { t, state: j + 1 });
        }
        p_state.push(dens);
    }
    Ok(p_state)
}

fn forward_with_phi<S: StationarySolve>(
    spec: &ModelSpec,
    params: &ParamsG<S>,
    y: &TimeSeries,
    phi: &SparseTransitionMatrix<S>,
    pi0: &[S],
) -> Result<(S, Vec<S>, Vec<S>)> {
    let t_len = y.len();
    let owner = &phi.owner;
    let ctx = params.lambda[0];
    let mut log_scale = Vec::with_capacity(t_len);
    let mut alpha: Vec<S> = Vec::with_capacity(phi.dim);
    let mut propagated: Vec<S> = Vec::new();

    for (step, &yt) in y.values().iter().enumerate() {
        let t = step + 1;
        let p_state = emission_row(spec, params, yt, t)?;
        if step == 0 {
            alpha.extend(pi0.iter().enumerate().map(|(i, &p)| p * p_state[owner[i]]));
        } else {
            phi.left_mul(&alpha, &mut propagated);
            alpha.clear();
            alpha.extend(
                propagated.iter().enumerate().map(|(i, &v)| v * p_state[owner[i]]),
            );
        }
        let mut norm = ctx.lit(0.0);
        for &v in &alpha {
            norm = norm + v;
        }
        for v in alpha.iter_mut() {
            *v = *v / norm;
        }
        log_scale.push(norm.ln());
    }

    let mut total = ctx.lit(0.0);
    for &s in &log_scale {
        total = total + s;
    }
    Ok((total, log_scale, alpha))
}

/// Log-likelihood of the embedded model by the scaled sparse forward pass.
/// Cost O(T·K·Ā).
pub fn log_likelihood(
    spec: &ModelSpec,
    params: &ParamVector,
    y: &TimeSeries,
) -> Result<ForwardResult> {
    params.validate(spec)?;
    let (total, log_scale, alpha_t) = forward_g(spec, params, y)?;
    Ok(ForwardResult { log_likelihood: total, log_scale, alpha_t })
}

/// Taped log-likelihood with the whole scaled forward recursion collapsed
/// into one custom node: the recursion and its reverse sweep run in plain
/// `f64` over the stored forward vectors, and the accumulated partials with
/// respect to the Φ entries, the initial distribution and the per-(t, state)
/// emission log-densities are attached to the tape in a single node. Same
/// value and gradient as the generic taped recursion at a fraction of the
/// tape traffic.
pub fn forward_fast_var<'t>(
    spec: &ModelSpec,
    params: &crate::model::ParamsG<crate::ad::Var<'t>>,
    y: &TimeSeries,
) -> Result<crate::ad::Var<'t>> {
    use crate::ad::Var;
    use crate::math::linalg::Lu;

    let phi = build_phi_g(spec, params);
    let tape = params.lambda[0].tape();
    let n = phi.dim;
    let t_len = y.len();
    let k = spec.n_states;
    let owner = &phi.owner;

    // Initial distribution in f64; for the stationary policy keep the LU
    // factors so the reverse sweep can run the implicit adjoint solve.
    let phi_vals: Vec<f64> = phi.values.iter().map(|v| v.val()).collect();
    let (pi0_vals, stationary_ctx): (Vec<f64>, Option<(Lu, Vec<f64>, f64)>) = match spec.initial
    {
        InitialDistribution::FixedUnitVector(state) => {
            let mut v = vec![0.0; n];
            v[phi.aggregate_offsets[state]] = 1.0;
            (v, None)
        }
        InitialDistribution::Stationary => {
            // A = (I − Φ + U)ᵀ, A x = 1, π0 = x / Σx.
            let mut a = vec![0.0f64; n * n];
            for i in 0..n {
                for c in 0..n {
                    a[c * n + i] = 1.0 + if i == c { 1.0 } else { 0.0 };
                }
            }
            for i in 0..n {
                for e in phi.row_ptr[i]..phi.row_ptr[i + 1] {
                    a[phi.col_idx[e] * n + i] -= phi_vals[e];
                }
            }
            let lu = Lu::factor(&a, n)
                .map_err(|_| Error::Stationary("transition matrix is reducible".into()))?;
            let x = lu.solve(&vec![1.0; n]);
            let sum: f64 = x.iter().sum();
            if !(sum.is_finite() && sum > 0.0) {
                return Err(Error::Stationary("stationary solve produced a non-positive total".into()));
            }
            let pi0: Vec<f64> = x.iter().map(|v| v / sum).collect();
            if pi0.iter().any(|v| !v.is_finite()) {
                return Err(Error::Stationary("non-finite stationary entry".into()));
            }
            (pi0, Some((lu, x, sum)))
        }
    };

    // Taped per-(t, state) emission log-densities, plus their f64 values.
    let mut log_dens_nodes: Vec<Var<'t>> = Vec::with_capacity(t_len * k);
    let mut dens = vec![0.0f64; t_len * k];
    for (step, &yt) in y.values().iter().enumerate() {
        for j in 0..k {
            let node =
                emission_log_density_g(&params.emissions[j], yt, step + 1, spec.omega_hat);
            if !node.val().is_finite() && node.val() != f64::NEG_INFINITY {
                return Err(Error::BadEmission { t: step + 1, state: j + 1 });
            }
            dens[step * k + j] = node.val().exp();
            log_dens_nodes.push(node);
        }
    }

    // Forward pass in f64, storing normalized alphas and propagated vectors.
    let mut alphas = vec![0.0f64; t_len * n];
    let mut propagated = vec![0.0f64; t_len * n]; // v(t) = Φᵀ α(t−1); v(0) = π0
    let mut scales = vec![0.0f64; t_len];
    let mut total = 0.0f64;
    for step in 0..t_len {
        let (prev, cur) = alphas.split_at_mut(step * n);
        let v = &mut propagated[step * n..(step + 1) * n];
        if step == 0 {
            v.copy_from_slice(&pi0_vals);
        } else {
            let alpha_prev = &prev[(step - 1) * n..];
            v.fill(0.0);
            for i in 0..n {
                let a = alpha_prev[i];
                if a == 0.0 {
                    continue;
                }
                for e in phi.row_ptr[i]..phi.row_ptr[i + 1] {
                    v[phi.col_idx[e]] += a * phi_vals[e];
                }
            }
        }
        let alpha = &mut cur[..n];
        let mut norm = 0.0f64;
        for i in 0..n {
            alpha[i] = v[i] * dens[step * k + owner[i]];
            norm += alpha[i];
        }
        if !(norm > 0.0 && norm.is_finite()) {
            // Zero or non-finite forward mass: surface as −∞ via a node the
            // caller can test, keeping gradient semantics out of it.
            return Ok(tape.var(f64::NEG_INFINITY));
        }
        for a in alpha.iter_mut() {
            *a /= norm;
        }
        scales[step] = norm;
        total += norm.ln();
    }

    // Reverse sweep. alpha_bar holds ∂logL/∂α(t) for the current t.
    let mut alpha_bar = vec![0.0f64; n];
    let mut ahat_bar = vec![0.0f64; n];
    let mut v_bar = vec![0.0f64; n];
    let mut phi_bar = vec![0.0f64; phi.nnz()];
    let mut pi0_bar = vec![0.0f64; n];
    let mut dens_bar = vec![0.0f64; t_len * k];
    for step in (0..t_len).rev() {
        let alpha = &alphas[step * n..(step + 1) * n];
        let v = &propagated[step * n..(step + 1) * n];
        // Adjoint of the normalization α = α̂ / c with logL += ln c:
        // ∂/∂α̂_i = (ᾱ_i − Σ_j ᾱ_j α_j) / c + 1/c.
        let dot: f64 = alpha_bar.iter().zip(alpha).map(|(b, a)| b * a).sum();
        let inv_c = 1.0 / scales[step];
        for i in 0..n {
            ahat_bar[i] = (alpha_bar[i] - dot) * inv_c + inv_c;
        }
        // α̂_i = v_i · p_t(owner i)
        for i in 0..n {
            let d = dens[step * k + owner[i]];
            v_bar[i] = ahat_bar[i] * d;
            dens_bar[step * k + owner[i]] += ahat_bar[i] * v[i];
        }
        if step == 0 {
            pi0_bar.copy_from_slice(&v_bar);
        } else {
            let alpha_prev = &alphas[(step - 1) * n..step * n];
            for i in 0..n {
                let mut acc = 0.0f64;
                let a_prev = alpha_prev[i];
                for e in phi.row_ptr[i]..phi.row_ptr[i + 1] {
                    let c = phi.col_idx[e];
                    phi_bar[e] += a_prev * v_bar[c];
                    acc += phi_vals[e] * v_bar[c];
                }
                alpha_bar[i] = acc;
            }
        }
    }

    // Fold the stationary-distribution sensitivity into the Φ partials via
    // one adjoint solve: with A x = 1 and π0 = x/Σx,
    // ∂logL/∂Φ_lc += (A⁻ᵀ x̄)_c · x_l.
    if let Some((lu, x, sum)) = stationary_ctx {
        let dot: f64 = pi0_bar.iter().zip(&pi0_vals).map(|(b, p)| b * p).sum();
        let x_bar: Vec<f64> = pi0_bar.iter().map(|b| (b - dot) / sum).collect();
        let w = lu.solve_transpose(&x_bar);
        for l in 0..n {
            for e in phi.row_ptr[l]..phi.row_ptr[l + 1] {
                phi_bar[e] += w[phi.col_idx[e]] * x[l];
            }
        }
    }

    // One custom node carrying every accumulated partial. Emission
    // log-density nodes chain through ∂p/∂log p = p.
    let mut partials: Vec<(Var<'t>, f64)> =
        Vec::with_capacity(phi.nnz() + t_len * k);
    for (e, &bar) in phi_bar.iter().enumerate() {
        partials.push((phi.values[e], bar));
    }
    for (idx, node) in log_dens_nodes.iter().enumerate() {
        partials.push((*node, dens_bar[idx] * dens[idx]));
    }
    Ok(tape.multi(total, &partials))
}

/// Dense-matrix variant of the same recursion; identical result, O(T·Ā²).
pub fn log_likelihood_dense(
    spec: &ModelSpec,
    params: &ParamVector,
    y: &TimeSeries,
) -> Result<ForwardResult> {
    params.validate(spec)?;
    let phi = build_phi_g(spec, params);
    let pi0 = initial_vector_g(spec, &phi)?;
    let dense = phi.to_dense();
    let n = phi.dim;
    let owner = &phi.owner;

    let mut log_scale = Vec::with_capacity(y.len());
    let mut alpha: Vec<f64> = Vec::new();
    let mut next = vec![0.0f64; n];
    for (step, &yt) in y.values().iter().enumerate() {
        let t = step + 1;
        let p_state = emission_row(spec, params, yt, t)?;
        if step == 0 {
            alpha = (0..n).map(|i| pi0[i] * p_state[owner[i]]).collect();
        } else {
            for c in 0..n {
                let mut acc = 0.0;
                for (i, &a) in alpha.iter().enumerate() {
                    acc += a * dense[i * n + c];
                }
                next[c] = acc * p_state[owner[c]];
            }
            alpha.copy_from_slice(&next);
        }
        let norm: f64 = alpha.iter().sum();
        for v in alpha.iter_mut() {
            *v /= norm;
        }
        log_scale.push(norm.ln());
    }
    Ok(ForwardResult {
        log_likelihood: log_scale.iter().sum(),
        log_scale,
        alpha_t: alpha,
    })
}

/// Forward pass normalizing by the maximum instead of the sum at each step;
/// the total log-likelihood must agree with the default scaling. Exposed for
/// the scaling-invariance property tests.
pub fn log_likelihood_max_scaled(
    spec: &ModelSpec,
    params: &ParamVector,
    y: &TimeSeries,
) -> Result<f64> {
    params.validate(spec)?;
    let phi = build_phi_g(spec, params);
    let pi0 = initial_vector_g(spec, &phi)?;
    let owner = &phi.owner;
    let mut total = 0.0f64;
    let mut alpha: Vec<f64> = Vec::new();
    let mut propagated: Vec<f64> = Vec::new();
    for (step, &yt) in y.values().iter().enumerate() {
        let t = step + 1;
        let p_state = emission_row(spec, params, yt, t)?;
        if step == 0 {
            alpha = (0..phi.dim).map(|i| pi0[i] * p_state[owner[i]]).collect();
        } else {
            phi.left_mul(&alpha, &mut propagated);
            alpha.clear();
            alpha.extend(propagated.iter().enumerate().map(|(i, &v)| v * p_state[owner[i]]));
        }
        let m = alpha.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for v in alpha.iter_mut() {
            *v /= m;
        }
        total += m.ln();
    }
    Ok(total + alpha.iter().sum::<f64>().ln())
}

/// Exhaustive-path oracle: sums the joint density over every expanded-state
/// path. Guarded to Ā^T ≤ 10⁷ paths.
pub fn brute_force_loglik(
    spec: &ModelSpec,
    params: &ParamVector,
    y: &TimeSeries,
) -> Result<f64> {
    params.validate(spec)?;
    let phi = build_phi_g(spec, params);
    let n = phi.dim;
    let t_len = y.len();
    let n_paths = (n as f64).powi(t_len as i32);
    if n_paths > 1e7 {
        return Err(Error::TooLarge(format!(
            "brute force would enumerate {n_paths:.3e} paths (limit 1e7)"
        )));
    }
    let pi0 = initial_vector_g(spec, &phi)?;
    let dense = phi.to_dense();
    let owner = &phi.owner;
    let log_pi0: Vec<f64> = pi0.iter().map(|p| p.ln()).collect();
    let log_phi: Vec<f64> = dense.iter().map(|&v| v.ln()).collect();
    let mut log_emis = vec![0.0f64; t_len * n];
    for (step, &yt) in y.values().iter().enumerate() {
        for i in 0..n {
            log_emis[step * n + i] =
                emission_log_density_g(&params.emissions[owner[i]], yt, step + 1, spec.omega_hat);
        }
    }

    // Streaming log-sum-exp over the path odometer.
    let mut running_max = f64::NEG_INFINITY;
    let mut running_sum = 0.0f64;
    let mut path = vec![0usize; t_len];
    loop {
        let mut lp = log_pi0[path[0]] + log_emis[path[0]];
        for t in 1..t_len {
            lp += log_phi[path[t - 1] * n + path[t]] + log_emis[t * n + path[t]];
            if lp == f64::NEG_INFINITY {
                break;
            }
        }
        if lp > running_max {
            running_sum = running_sum * (running_max - lp).exp() + 1.0;
            running_max = lp;
        } else if lp > f64::NEG_INFINITY {
            running_sum += (lp - running_max).exp();
        }
        // Advance the odometer.
        let mut pos = t_len;
        loop {
            if pos == 0 {
                return Ok(running_max + running_sum.ln());
            }
            pos -= 1;
            path[pos] += 1;
            if path[pos] < n {
                break;
            }
            path[pos] = 0;
        }
    }
}

/// Result of the exact semi-Markov forward recursion.
#[derive(Debug, Clone)]
pub struct ExactHsmmResult {
    pub log_likelihood: f64,
    /// Per-state dwell truncation point (survival < 1e−12).
    pub d_max: Vec<usize>,
    pub warning: Option<String>,
}

/// Exact hidden semi-Markov forward recursion over (state, segment) space
/// with right-censoring of the final segment. `initial` is the fresh-segment
/// distribution over states at t = 1. The dwell-approximation thresholds in
/// `spec` are ignored; dwell support is truncated where survival < 1e−12.
/// Cost O(T·D·K + T·K²).
pub fn exact_hsmm_loglik(
    spec: &ModelSpec,
    params: &ParamVector,
    y: &TimeSeries,
    initial: &[f64],
) -> Result<ExactHsmmResult> {
    exact_hsmm_impl(spec, params, y, initial, None)
}

/// Exact recursion evaluating every duration up to `d_max` regardless of the
/// survival rule; with `d_max = T` this reproduces the cost profile of a
/// full-support implementation (used by the benchmark command).
pub fn exact_hsmm_loglik_with_dmax(
    spec: &ModelSpec,
    params: &ParamVector,
    y: &TimeSeries,
    initial: &[f64],
    d_max: usize,
) -> Result<ExactHsmmResult> {
    exact_hsmm_impl(spec, params, y, initial, Some(d_max))
}

fn exact_hsmm_impl(
    spec: &ModelSpec,
    params: &ParamVector,
    y: &TimeSeries,
    initial: &[f64],
    d_max_override: Option<usize>,
) -> Result<ExactHsmmResult> {
    params.validate(spec)?;
    let k = spec.n_states;
    if initial.len() != k {
        return Err(Error::InvalidParam("initial distribution must have one entry per state".into()));
    }
    if (initial.iter().sum::<f64>() - 1.0).abs() > 1e-8 || initial.iter().any(|&p| p < 0.0) {
        return Err(Error::InvalidParam("initial distribution must be a probability vector".into()));
    }
    let t_len = y.len();

    // Dwell support truncation per state.
    let mut d_max = vec![0usize; k];
    let mut warning = None;
    let mut log_pmf = vec![Vec::new(); k];
    let mut log_surv = vec![Vec::new(); k];
    for j in 0..k {
        let mut cum = 0.0f64;
        let hard_cap = match d_max_override {
            Some(d) => d.max(1),
            None => 10 * t_len + 1000,
        };
        let mut d = 0usize;
        loop {
            d += 1;
            let lp = dwell_log_pmf_g(spec.dwell[j], params.lambda[j], params.rho[j], d);
            log_surv[j].push((1.0 - cum).max(1e-300).ln());
            log_pmf[j].push(lp);
            cum += lp.exp();
            if d >= hard_cap || (d_max_override.is_none() && 1.0 - cum < 1e-12) {
                break;
            }
        }
        if d_max_override.is_none() && d > 10 * t_len {
            warning = Some(format!(
                "state {} dwell support reaches {d} (> 10·T); recursion truncated there",
                j + 1
            ));
        }
        d_max[j] = d.min(t_len);
    }

    // Cumulative log-emissions per state.
    let mut cum_emis = vec![vec![0.0f64; t_len + 1]; k];
    for j in 0..k {
        for (step, &yt) in y.values().iter().enumerate() {
            let ld = emission_log_density_g(&params.emissions[j], yt, step + 1, spec.omega_hat);
            if !ld.is_finite() && ld != f64::NEG_INFINITY {
                return Err(Error::BadEmission { t: step + 1, state: j + 1 });
            }
            cum_emis[j][step + 1] = cum_emis[j][step] + ld;
        }
    }

    // incoming[u][j]: log-probability weight of a fresh segment of state j
    // starting at time u+1, given everything up to u.
    let mut forward = vec![vec![f64::NEG_INFINITY; t_len + 1]; k];
    let mut incoming = vec![vec![f64::NEG_INFINITY; t_len + 1]; k];
    for j in 0..k {
        incoming[j][0] = initial[j].ln();
    }

    let mut terms: Vec<f64> = Vec::new();
    for t in 1..=t_len {
        for j in 0..k {
            terms.clear();
            for d in 1..=d_max[j].min(t) {
                let start = t - d;
                let inc = incoming[j][start];
                if inc == f64::NEG_INFINITY {
                    continue;
                }
                terms.push(log_pmf[j][d - 1] + cum_emis[j][t] - cum_emis[j][start] + inc);
            }
            forward[j][t] = log_sum_exp(&terms);
        }
        if t < t_len {
            for j in 0..k {
                let mut acc = f64::NEG_INFINITY;
                for l in 0..k {
                    if l == j || params.pi[l][j] == 0.0 {
                        continue;
                    }
                    acc = log_add_exp(acc, params.pi[l][j].ln() + forward[l][t]);
                }
                incoming[j][t] = acc;
            }
        }
    }

    // Right-censored final segment: survival counts dwells of length ≥ d.
    let mut tail_terms = Vec::new();
    for j in 0..k {
        for d in 1..=d_max[j].min(t_len) {
            let start = t_len - d;
            let inc = incoming[j][start];
            if inc == f64::NEG_INFINITY {
                continue;
            }
            tail_terms.push(log_surv[j][d - 1] + cum_emis[j][t_len] - cum_emis[j][start] + inc);
        }
    }
    Ok(ExactHsmmResult { log_likelihood: log_sum_exp(&tail_terms), d_max, warning })
}

/// Gradient of `log_likelihood ∘ constrain` at unconstrained coordinates,
/// computed by the reverse sweep over the taped forward recursion.
pub fn loglik_gradient(
    spec: &ModelSpec,
    u: &[f64],
    y: &TimeSeries,
) -> Result<(f64, Vec<f64>)> {
    let tape = Tape::new();
    let vars: Vec<_> = u.iter().map(|&x| tape.var(x)).collect();
    let (params, _) = constrain_g(spec, &vars);
    let total = forward_fast_var(spec, &params, y)?;
    if !total.val().is_finite() {
        return Err(Error::Domain(format!(
            "log-likelihood is not finite at the requested point ({})",
            total.val()
        )));
    }
    let adj = tape.gradient(total);
    Ok((total.val(), vars.iter().map(|v| adj[v.index()]).collect()))
}
