//! The structured sparse transition matrix that embeds per-state dwell
//! distributions into an expanded Markov chain.
//!
//! Each state j owns an aggregate of a_j expanded states. Within the
//! aggregate the chain advances along a superdiagonal with probabilities
//! 1 − h_j(r); exits re-enter aggregate k at its first expanded state with
//! probability π_jk h_j(r). Hazards h_j(r) = pmf(r)/survival(r) make the
//! embedded dwell law exact below a_j, with a geometric tail pooled into the
//! last expanded state.

use crate::ad::{Real, Var};
use crate::error::{Error, Result};
use crate::math::linalg::Lu;
use crate::model::{dwell_log_pmf_g, DwellFamily, ModelSpec, ParamsG};

/// Smallest survival value used as a hazard denominator. Beyond this point
/// the hazard is pinned to exactly 1: the dwell mass involved is ≤ the floor,
/// so likelihood values are unaffected at working precision, while the
/// ratio's derivatives (which scale like 1/survival) stay bounded instead of
/// forming a cliff that collapses sampler step sizes.
const SURVIVAL_FLOOR: f64 = 1e-12;

/// Hazard rates h(1..=a) for one dwell distribution.
///
/// Survival is the linear complement 1 − Σ pmf (each pmf term evaluated in
/// log space); once the complement is numerically exhausted (below the
/// floor) the hazard is exactly 1.
pub fn hazard_sweep_g<S: Real>(
    family: DwellFamily,
    lambda: S,
    rho: Option<S>,
    a: usize,
) -> Vec<S> {
    let mut hazards = Vec::with_capacity(a);
    let mut cum = lambda.lit(0.0);
    for r in 1..=a {
        let pmf = dwell_log_pmf_g(family, lambda, rho, r).exp();
        let survival = cum.rsub(1.0);
        let h = if survival.val() <= SURVIVAL_FLOOR || pmf.val() >= survival.val() {
            lambda.lit(1.0)
        } else {
            pmf / survival
        };
        hazards.push(h);
        cum = cum + pmf;
    }
    hazards
}

/// Single hazard value h(r) with argument validation.
pub fn hazard(family: DwellFamily, lambda: f64, rho: Option<f64>, r: usize) -> Result<f64> {
    // Reuse the pmf checks.
    crate::model::dwell_pmf(family, lambda, rho, r)?;
    Ok(hazard_sweep_g(family, lambda, rho, r)[r - 1])
}

/// Compressed-row representation of the embedded transition matrix.
///
/// Row i has at most K structural nonzeros: the within-aggregate advance and
/// one entry into min(A_k) for each other state k.
#[derive(Debug, Clone)]
pub struct SparseTransitionMatrix<S> {
    pub dim: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<S>,
    /// Start index of each state aggregate.
    pub aggregate_offsets: Vec<usize>,
    /// Owning state of each expanded index.
    pub owner: Vec<usize>,
}

impl<S: Real> SparseTransitionMatrix<S> {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, S)> + '_ {
        let lo = self.row_ptr[i];
        let hi = self.row_ptr[i + 1];
        self.col_idx[lo..hi].iter().copied().zip(self.values[lo..hi].iter().copied())
    }

    /// Row-vector product yᵀ = xᵀ Φ (the forward-recursion step).
    pub fn left_mul(&self, x: &[S], out: &mut Vec<S>) {
        debug_assert_eq!(x.len(), self.dim);
        out.clear();
        out.extend((0..self.dim).map(|_| x[0].lit(0.0)));
        for i in 0..self.dim {
            let xi = x[i];
            if xi.val() == 0.0 {
                continue;
            }
            for (c, v) in self.row(i) {
                out[c] = out[c] + xi * v;
            }
        }
    }

    /// Column-vector product y = Φ x (the backward-recursion step).
    pub fn right_mul(&self, x: &[S], out: &mut Vec<S>) {
        debug_assert_eq!(x.len(), self.dim);
        out.clear();
        out.extend((0..self.dim).map(|_| x[0].lit(0.0)));
        for i in 0..self.dim {
            let mut acc = x[0].lit(0.0);
            for (c, v) in self.row(i) {
                acc = acc + v * x[c];
            }
            out[i] = acc;
        }
    }

    /// Dense row-major copy of the primal values.
    pub fn to_dense(&self) -> Vec<f64> {
        let n = self.dim;
        let mut dense = vec![0.0; n * n];
        for i in 0..n {
            for (c, v) in self.row(i) {
                dense[i * n + c] = v.val();
            }
        }
        dense
    }
}

/// Build the embedded transition matrix from between-state probabilities and
/// dwell hazards. Rows are emitted with sorted column indices.
pub fn build_phi_g<S: Real>(spec: &ModelSpec, params: &ParamsG<S>) -> SparseTransitionMatrix<S> {
    let k = spec.n_states;
    let offsets = spec.aggregate_offsets();
    let dim = spec.total_dim();
    let mut row_ptr = Vec::with_capacity(dim + 1);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    row_ptr.push(0);

    let mut entries: Vec<(usize, S)> = Vec::with_capacity(k);
    for j in 0..k {
        let a_j = spec.thresholds[j];
        let hazards = hazard_sweep_g(spec.dwell[j], params.lambda[j], params.rho[j], a_j);
        for r in 1..=a_j {
            let i = offsets[j] + r - 1;
            let h = hazards[r - 1];
            entries.clear();
            // Within-aggregate advance; the last expanded state self-loops.
            let stay_col = if r < a_j { i + 1 } else { i };
            entries.push((stay_col, h.rsub(1.0)));
            // Exits into min(A_k) for every other state.
            for l in 0..k {
                if l == j {
                    continue;
                }
                entries.push((offsets[l], params.pi[j][l] * h));
            }
            entries.sort_by_key(|&(c, _)| c);
            for &(c, v) in entries.iter() {
                col_idx.push(c);
                values.push(v);
            }
            row_ptr.push(col_idx.len());
        }
    }

    SparseTransitionMatrix {
        dim,
        row_ptr,
        col_idx,
        values,
        aggregate_offsets: offsets,
        owner: spec.owners(),
    }
}

/// Validated `f64` construction.
pub fn build_phi(spec: &ModelSpec, params: &ParamsG<f64>) -> Result<SparseTransitionMatrix<f64>> {
    params.validate(spec)?;
    let phi = build_phi_g(spec, params);
    for i in 0..phi.dim {
        let sum: f64 = phi.row(i).map(|(_, v)| v).sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParam(format!("row {i} of phi sums to {sum}")));
        }
    }
    Ok(phi)
}

/// Stationary distribution of a row-stochastic matrix.
#[derive(Debug, Clone)]
pub struct StationaryDistribution {
    pub pi0_star: Vec<f64>,
}

/// Scalar types that can solve for the stationary distribution of the
/// embedded chain. The `f64` path is a dense LU solve of (I − Φ + U)ᵀ x = 1;
/// the taped path does the same solve numerically and injects the implicit
/// gradient ∂x_i/∂Φ_lc = (A⁻¹)_ic · x_l as a multi-parent node.
pub trait StationarySolve: Real {
    fn stationary_raw(phi: &SparseTransitionMatrix<Self>) -> Result<Vec<Self>>;
}

fn stationary_system(phi_dense: &[f64], n: usize) -> Vec<f64> {
    // A = (I − Φ + U)ᵀ
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        for c in 0..n {
            let v = if i == c { 1.0 } else { 0.0 } - phi_dense[i * n + c] + 1.0;
            a[c * n + i] = v;
        }
    }
    a
}

impl StationarySolve for f64 {
    fn stationary_raw(phi: &SparseTransitionMatrix<f64>) -> Result<Vec<f64>> {
        let n = phi.dim;
        let a = stationary_system(&phi.to_dense(), n);
        let lu = Lu::factor(&a, n)
            .map_err(|_| Error::Stationary("transition matrix is reducible".into()))?;
        Ok(lu.solve(&vec![1.0; n]))
    }
}

impl<'t> StationarySolve for Var<'t> {
    fn stationary_raw(phi: &SparseTransitionMatrix<Var<'t>>) -> Result<Vec<Var<'t>>> {
        let n = phi.dim;
        let tape = phi.values[0].tape();
        let a = stationary_system(&phi.to_dense(), n);
        let lu = Lu::factor(&a, n)
            .map_err(|_| Error::Stationary("transition matrix is reducible".into()))?;
        let x = lu.solve(&vec![1.0; n]);
        let inv = lu.inverse();
        // Partials of every output against every structural entry of Φ.
        let mut outputs = Vec::with_capacity(n);
        let mut partials: Vec<(Var<'t>, f64)> = Vec::with_capacity(phi.nnz());
        for i in 0..n {
            partials.clear();
            for l in 0..n {
                let lo = phi.row_ptr[l];
                let hi = phi.row_ptr[l + 1];
                for e in lo..hi {
                    let c = phi.col_idx[e];
                    partials.push((phi.values[e], inv[i * n + c] * x[l]));
                }
            }
            outputs.push(tape.multi(x[i], &partials));
        }
        Ok(outputs)
    }
}

/// Normalized stationary vector, generic over the scalar.
pub fn stationary_vector_g<S: StationarySolve>(phi: &SparseTransitionMatrix<S>) -> Result<Vec<S>> {
    let raw = S::stationary_raw(phi)?;
    let mut sum = raw[0];
    for &v in &raw[1..] {
        sum = sum + v;
    }
    if !sum.val().is_finite() || sum.val() <= 0.0 {
        return Err(Error::Stationary("stationary solve produced a non-positive total".into()));
    }
    let pi0: Vec<S> = raw.into_iter().map(|v| v / sum).collect();
    // Residual check catches near-singular (reducible) systems that slip
    // through the factorization.
    let vals: Vec<f64> = pi0.iter().map(|v| v.val()).collect();
    let mut residual = 0.0f64;
    let mut image = vec![0.0f64; phi.dim];
    for i in 0..phi.dim {
        let lo = phi.row_ptr[i];
        let hi = phi.row_ptr[i + 1];
        for e in lo..hi {
            image[phi.col_idx[e]] += vals[i] * phi.values[e].val();
        }
    }
    for i in 0..phi.dim {
        residual = residual.max((image[i] - vals[i]).abs());
        if !vals[i].is_finite() {
            return Err(Error::Stationary("non-finite stationary entry".into()));
        }
    }
    if residual > 1e-8 {
        return Err(Error::Stationary(format!(
            "fixed-point residual {residual:.3e}; the chain is numerically reducible"
        )));
    }
    Ok(pi0)
}

/// Stationary distribution of Φ with validation; errors on reducible chains
/// rather than returning NaNs.
pub fn stationary_distribution(
    phi: &SparseTransitionMatrix<f64>,
) -> Result<StationaryDistribution> {
    let mut pi0 = stationary_vector_g(phi)?;
    for v in pi0.iter_mut() {
        if !v.is_finite() {
            return Err(Error::Stationary("non-finite entry in stationary solve".into()));
        }
        if *v < 0.0 {
            if *v < -1e-9 {
                return Err(Error::Stationary(format!(
                    "solver produced a significantly negative mass {v}"
                )));
            }
            *v = 0.0;
        }
    }
    let total: f64 = pi0.iter().sum();
    for v in pi0.iter_mut() {
        *v /= total;
    }
    Ok(StationaryDistribution { pi0_star: pi0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{EmissionFamily, EmissionParams, ModelSpec, ParamVector};
    use crate::priors::PriorConfig;

    fn close(a: f64, b: f64, tol: f64) {
        assert!((a - b).abs() < tol, "{a} vs {b}");
    }

    pub(crate) fn gaussian_spec(
        k: usize,
        dwell: DwellFamily,
        thresholds: Vec<usize>,
    ) -> ModelSpec {
        let families = vec![dwell; k];
        let prior = PriorConfig::weakly_informative(k, &families);
        ModelSpec::new(k, families, thresholds, EmissionFamily::Gaussian, None, prior).unwrap()
    }

    fn two_state_geometric(lambda: [f64; 2]) -> (ModelSpec, ParamVector) {
        let spec = gaussian_spec(2, DwellFamily::Geometric, vec![1, 1]);
        let params = ParamVector {
            pi: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            lambda: lambda.to_vec(),
            rho: vec![None, None],
            emissions: vec![EmissionParams::gaussian(0.0, 1.0), EmissionParams::gaussian(3.0, 1.0)],
        };
        (spec, params)
    }

    #[test]
    fn geometric_hazard_is_memoryless() {
        // γ = 0.6 ⇒ λ = 1.5, hazard 0.4 at any r
        for (r, tol) in [(1usize, 1e-15), (5, 1e-12), (50, 1e-4)] {
            let h = hazard(DwellFamily::Geometric, 1.5, None, r).unwrap();
            close(h, 0.4, tol);
        }
    }

    #[test]
    fn poisson_hazard_examples() {
        close(
            hazard(DwellFamily::Poisson, 2.0, None, 1).unwrap(),
            (-2.0f64).exp(),
            1e-15,
        );
        // Survival is numerically exhausted long before r = 40 at λ = 1.
        assert_eq!(hazard(DwellFamily::Poisson, 1.0, None, 40).unwrap(), 1.0);
    }

    #[test]
    fn hazards_stay_in_unit_interval() {
        for (family, lambda, rho) in [
            (DwellFamily::Geometric, 4.0, None),
            (DwellFamily::Poisson, 9.0, None),
            (DwellFamily::NegBinomial, 6.0, Some(0.3)),
        ] {
            for r in 1..=300 {
                let h = hazard(family, lambda, rho, r).unwrap();
                assert!((0.0..=1.0).contains(&h), "{family:?} r={r}: {h}");
            }
        }
    }

    #[test]
    fn phi_reduces_to_standard_hmm_for_unit_thresholds() {
        // γ₁ = 0.7, γ₂ = 0.6 ⇒ λ = γ/(1−γ)
        let (spec, params) = two_state_geometric([0.7 / 0.3, 1.5]);
        let phi = build_phi(&spec, &params).unwrap();
        let dense = phi.to_dense();
        let expect = [0.7, 0.3, 0.4, 0.6];
        for i in 0..4 {
            close(dense[i], expect[i], 1e-12);
        }
    }

    #[test]
    fn phi_rows_sum_to_one() {
        let spec = gaussian_spec(3, DwellFamily::Poisson, vec![4, 2, 7]);
        let params = ParamVector {
            pi: vec![
                vec![0.0, 0.25, 0.75],
                vec![0.6, 0.0, 0.4],
                vec![0.9, 0.1, 0.0],
            ],
            lambda: vec![3.0, 1.0, 6.0],
            rho: vec![None, None, None],
            emissions: vec![
                EmissionParams::gaussian(0.0, 1.0),
                EmissionParams::gaussian(2.0, 1.0),
                EmissionParams::gaussian(5.0, 1.0),
            ],
        };
        let phi = build_phi(&spec, &params).unwrap();
        for i in 0..phi.dim {
            let sum: f64 = phi.row(i).map(|(_, v)| v).sum();
            close(sum, 1.0, 1e-12);
        }
        // Between-aggregate entries land on aggregate heads only.
        let offsets = phi.aggregate_offsets.clone();
        for i in 0..phi.dim {
            let j = phi.owner[i];
            for (c, _) in phi.row(i) {
                let target_owner = phi.owner[c];
                if target_owner != j {
                    assert_eq!(c, offsets[target_owner], "row {i} exits into the middle of an aggregate");
                }
            }
        }
    }

    #[test]
    fn phi_sparsity_bound() {
        let spec = gaussian_spec(3, DwellFamily::Poisson, vec![30, 30, 30]);
        let params = ParamVector {
            pi: vec![
                vec![0.0, 0.5, 0.5],
                vec![0.5, 0.0, 0.5],
                vec![0.5, 0.5, 0.0],
            ],
            lambda: vec![5.0, 5.0, 5.0],
            rho: vec![None, None, None],
            emissions: vec![
                EmissionParams::gaussian(0.0, 1.0),
                EmissionParams::gaussian(2.0, 1.0),
                EmissionParams::gaussian(5.0, 1.0),
            ],
        };
        let phi = build_phi(&spec, &params).unwrap();
        assert_eq!(phi.dim, 90);
        assert!(phi.nnz() <= 270, "nnz = {}", phi.nnz());
        let sparsity = 1.0 - phi.nnz() as f64 / (90.0 * 90.0);
        assert!(sparsity >= 1.0 - 270.0 / 8100.0, "sparsity = {sparsity}");
    }

    #[test]
    fn embedded_dwell_law_matches_pmf_below_threshold() {
        // Telescoping identity: exit probability at dwell r equals
        // h(r) Π_{s<r} (1 − h(s)), which must reproduce the pmf for r < a.
        for (family, lambda, rho) in [
            (DwellFamily::Poisson, 4.0, None),
            (DwellFamily::NegBinomial, 3.0, Some(0.7)),
            (DwellFamily::Geometric, 2.0, None),
        ] {
            let a = 40;
            let hazards = hazard_sweep_g(family, lambda, rho, a);
            let mut stay = 1.0f64;
            for r in 1..a {
                let exit = hazards[r - 1] * stay;
                let pmf = crate::model::dwell_pmf(family, lambda, rho, r).unwrap();
                assert!(
                    (exit - pmf).abs() < 1e-10,
                    "{family:?} r={r}: {exit} vs {pmf}"
                );
                stay *= 1.0 - hazards[r - 1];
            }
            // Pooled tail mass beyond a−1 equals the survival at a.
            let surv = crate::model::dwell_survival(family, lambda, rho, a).unwrap();
            assert!((stay - surv).abs() < 1e-10);
        }
    }

    #[test]
    fn stationary_examples() {
        let (spec, params) = two_state_geometric([1.0, 1.0]);
        let phi = build_phi(&spec, &params).unwrap();
        let st = stationary_distribution(&phi).unwrap();
        close(st.pi0_star[0], 0.5, 1e-12);

        let (spec, params) = two_state_geometric([0.7 / 0.3, 1.5]);
        let phi = build_phi(&spec, &params).unwrap();
        let st = stationary_distribution(&phi).unwrap();
        close(st.pi0_star[0], 4.0 / 7.0, 1e-12);
        close(st.pi0_star[1], 3.0 / 7.0, 1e-12);
    }

    #[test]
    fn stationary_is_a_fixed_point() {
        let spec = gaussian_spec(3, DwellFamily::Poisson, vec![6, 3, 9]);
        let params = ParamVector {
            pi: vec![
                vec![0.0, 0.3, 0.7],
                vec![0.2, 0.0, 0.8],
                vec![0.55, 0.45, 0.0],
            ],
            lambda: vec![2.0, 5.0, 1.3],
            rho: vec![None, None, None],
            emissions: vec![
                EmissionParams::gaussian(0.0, 1.0),
                EmissionParams::gaussian(2.0, 1.0),
                EmissionParams::gaussian(5.0, 1.0),
            ],
        };
        let phi = build_phi(&spec, &params).unwrap();
        let st = stationary_distribution(&phi).unwrap();
        let mut product = Vec::new();
        phi.left_mul(&st.pi0_star, &mut product);
        for i in 0..phi.dim {
            assert!((product[i] - st.pi0_star[i]).abs() < 1e-10);
        }
        let total: f64 = st.pi0_star.iter().sum();
        close(total, 1.0, 1e-12);
        assert!(st.pi0_star.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn reducible_chain_is_an_explicit_error() {
        // Identity matrix: every state absorbing.
        let phi = SparseTransitionMatrix {
            dim: 2,
            row_ptr: vec![0, 1, 2],
            col_idx: vec![0, 1],
            values: vec![1.0, 1.0],
            aggregate_offsets: vec![0, 1],
            owner: vec![0, 1],
        };
        let err = stationary_distribution(&phi).unwrap_err();
        assert!(err.to_string().contains("stationary"), "{err}");
    }

    #[test]
    fn taped_stationary_matches_f64_and_finite_differences() {
        use crate::ad::Tape;
        let (spec, params) = two_state_geometric([2.0, 1.2]);
        let phi = build_phi(&spec, &params).unwrap();
        let base = stationary_vector_g(&phi).unwrap();

        let tape = Tape::new();
        let params_t = ParamsG {
            pi: vec![
                vec![tape.var(0.0), tape.var(1.0)],
                vec![tape.var(1.0), tape.var(0.0)],
            ],
            lambda: vec![tape.var(2.0), tape.var(1.2)],
            rho: vec![None, None],
            emissions: vec![
                crate::model::EmissionParamsG::Gaussian { mu: tape.var(0.0), sigma2: tape.var(1.0) },
                crate::model::EmissionParamsG::Gaussian { mu: tape.var(3.0), sigma2: tape.var(1.0) },
            ],
        };
        let phi_t = build_phi_g(&spec, &params_t);
        let pi0_t = stationary_vector_g(&phi_t).unwrap();
        for (t, f) in pi0_t.iter().zip(&base) {
            assert!((t.val() - f).abs() < 1e-12);
        }
        // Gradient of π0*[0] against λ₁ vs central finite differences.
        let adj = tape.gradient(pi0_t[0]);
        let grad = adj[params_t.lambda[0].index()];
        let h = 1e-6;
        let eval = |l: f64| {
            let mut p = params.clone();
            p.lambda[0] = l;
            let phi = build_phi(&spec, &p).unwrap();
            stationary_vector_g(&phi).unwrap()[0]
        };
        let fd = (eval(2.0 + h) - eval(2.0 - h)) / (2.0 * h);
        assert!((grad - fd).abs() < 1e-6, "{grad} vs {fd}");
    }
}
