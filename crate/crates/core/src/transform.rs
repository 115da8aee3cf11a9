//! Bijection between constrained model parameters and the unconstrained
//! vector the samplers and optimizers work on.
//!
//! Emission locations use an ordered transform (μ₁ < … < μ_K), which pins the
//! state labels. Positive parameters go through log, and each off-diagonal
//! transition simplex uses the stick-breaking transform with K−2 free
//! coordinates per state (none for K = 2, where the off-diagonal probability
//! is identically 1).

use crate::ad::Real;
use crate::error::{Error, Result};
use crate::model::{EmissionFamily, EmissionParamsG, ModelSpec, ParamsG, ParamVector};

/// Index bookkeeping for the unconstrained vector of one model.
#[derive(Debug, Clone)]
pub struct UnconstrainedLayout {
    pub n_states: usize,
    pub emission: EmissionFamily,
    /// States carrying a dispersion parameter, in state order.
    pub nb_states: Vec<usize>,
    pub dim: usize,
}

impl UnconstrainedLayout {
    pub fn of(spec: &ModelSpec) -> Self {
        let k = spec.n_states;
        let nb_states: Vec<usize> =
            (0..k).filter(|&j| spec.dwell[j].needs_dispersion()).collect();
        let emission_dim = match spec.emission {
            EmissionFamily::Gaussian => 2 * k,
            EmissionFamily::HarmonicGaussian => 4 * k,
        };
        let dim = emission_dim + k + nb_states.len() + k * k.saturating_sub(2);
        Self { n_states: k, emission: spec.emission, nb_states, dim }
    }

    /// Names of the unconstrained coordinates, in layout order.
    pub fn coordinate_names(&self) -> Vec<String> {
        let k = self.n_states;
        let mut names = Vec::with_capacity(self.dim);
        let loc = match self.emission {
            EmissionFamily::Gaussian => "mu",
            EmissionFamily::HarmonicGaussian => "beta0",
        };
        for j in 0..k {
            names.push(format!("{loc}_ord[{}]", j + 1));
        }
        if self.emission == EmissionFamily::HarmonicGaussian {
            for j in 0..k {
                names.push(format!("beta1[{}]", j + 1));
                names.push(format!("beta2[{}]", j + 1));
            }
        }
        for j in 0..k {
            names.push(format!("log_sigma2[{}]", j + 1));
        }
        for j in 0..k {
            names.push(format!("log_lambda[{}]", j + 1));
        }
        for &j in &self.nb_states {
            names.push(format!("log_rho[{}]", j + 1));
        }
        for j in 0..k {
            for c in 0..k.saturating_sub(2) {
                names.push(format!("pi_stick[{}][{}]", j + 1, c + 1));
            }
        }
        names
    }
}

fn inv_logit<S: Real>(t: S) -> S {
    if t.val() >= 0.0 {
        ((-t).exp() + 1.0).rdiv(1.0)
    } else {
        let e = t.exp();
        e / (e + 1.0)
    }
}

/// Map an unconstrained vector to constrained parameters plus the
/// log-Jacobian of the transform.
pub fn constrain_g<S: Real>(spec: &ModelSpec, u: &[S]) -> (ParamsG<S>, S) {
    let layout = UnconstrainedLayout::of(spec);
    debug_assert_eq!(u.len(), layout.dim);
    let k = spec.n_states;
    let mut log_jac = u[0].lit(0.0);
    let mut pos = 0usize;

    // Ordered locations.
    let mut locations = Vec::with_capacity(k);
    let mut prev = u[pos];
    locations.push(prev);
    pos += 1;
    for _ in 1..k {
        let gap = u[pos];
        prev = prev + gap.exp();
        locations.push(prev);
        log_jac = log_jac + gap;
        pos += 1;
    }

    // Harmonic coefficients.
    let mut harmonic = Vec::new();
    if spec.emission == EmissionFamily::HarmonicGaussian {
        for _ in 0..k {
            harmonic.push((u[pos], u[pos + 1]));
            pos += 2;
        }
    }

    // Scales.
    let mut sigma2 = Vec::with_capacity(k);
    for _ in 0..k {
        let s = u[pos];
        sigma2.push(s.exp());
        log_jac = log_jac + s;
        pos += 1;
    }

    let emissions: Vec<EmissionParamsG<S>> = (0..k)
        .map(|j| match spec.emission {
            EmissionFamily::Gaussian => {
                EmissionParamsG::Gaussian { mu: locations[j], sigma2: sigma2[j] }
            }
            EmissionFamily::HarmonicGaussian => EmissionParamsG::Harmonic {
                beta0: locations[j],
                beta1: harmonic[j].0,
                beta2: harmonic[j].1,
                sigma2: sigma2[j],
            },
        })
        .collect();

    // Dwell rates.
    let mut lambda = Vec::with_capacity(k);
    for _ in 0..k {
        let l = u[pos];
        lambda.push(l.exp());
        log_jac = log_jac + l;
        pos += 1;
    }

    // Dispersions.
    let mut rho: Vec<Option<S>> = vec![None; k];
    for &j in &layout.nb_states {
        let r = u[pos];
        rho[j] = Some(r.exp());
        log_jac = log_jac + r;
        pos += 1;
    }

    // Transition simplexes via stick-breaking.
    let zero = u[0].lit(0.0);
    let one = u[0].lit(1.0);
    let mut pi = Vec::with_capacity(k);
    for j in 0..k {
        let mut row = vec![zero; k];
        if k == 2 {
            row[1 - j] = one;
        } else {
            let m = k - 1;
            let mut remaining = one;
            let mut parts = Vec::with_capacity(m);
            for c in 0..m - 1 {
                let t = u[pos] - ((m - 1 - c) as f64).ln();
                let z = inv_logit(t);
                parts.push(remaining * z);
                log_jac = log_jac + z.ln() + (-z + 1.0).ln() + remaining.ln();
                remaining = remaining * z.rsub(1.0);
                pos += 1;
            }
            parts.push(remaining);
            let mut idx = 0;
            for l in 0..k {
                if l != j {
                    row[l] = parts[idx];
                    idx += 1;
                }
            }
        }
        pi.push(row);
    }

    (ParamsG { pi, lambda, rho, emissions }, log_jac)
}

/// Constrained → unconstrained inverse of [`constrain_g`].
pub fn unconstrain(spec: &ModelSpec, params: &ParamVector) -> Result<Vec<f64>> {
    params.validate(spec)?;
    let layout = UnconstrainedLayout::of(spec);
    let k = spec.n_states;
    let mut u = Vec::with_capacity(layout.dim);

    let locations: Vec<f64> = params.emissions.iter().map(|e| e.location()).collect();
    for j in 1..k {
        if locations[j] <= locations[j - 1] {
            return Err(Error::InvalidParam(
                "emission locations must be strictly increasing for the ordered transform".into(),
            ));
        }
    }
    u.push(locations[0]);
    for j in 1..k {
        u.push((locations[j] - locations[j - 1]).ln());
    }
    if spec.emission == EmissionFamily::HarmonicGaussian {
        for e in &params.emissions {
            if let EmissionParamsG::Harmonic { beta1, beta2, .. } = *e {
                u.push(beta1);
                u.push(beta2);
            }
        }
    }
    for e in &params.emissions {
        u.push(e.sigma2().ln());
    }
    for &l in &params.lambda {
        u.push(l.ln());
    }
    for &j in &layout.nb_states {
        u.push(params.rho[j].expect("validated").ln());
    }
    if k > 2 {
        let m = k - 1;
        for j in 0..k {
            let parts: Vec<f64> =
                (0..k).filter(|&l| l != j).map(|l| params.pi[j][l]).collect();
            let mut remaining = 1.0;
            for c in 0..m - 1 {
                let z = (parts[c] / remaining).clamp(1e-15, 1.0 - 1e-15);
                u.push((z / (1.0 - z)).ln() + ((m - 1 - c) as f64).ln());
                remaining -= parts[c];
            }
        }
    }
    debug_assert_eq!(u.len(), layout.dim);
    Ok(u)
}

/// Flatten constrained parameters in reporting order, with matching names
/// from [`constrained_names`].
pub fn flatten_constrained(spec: &ModelSpec, params: &ParamVector) -> Vec<f64> {
    let k = spec.n_states;
    let mut out = Vec::new();
    for e in &params.emissions {
        match *e {
            EmissionParamsG::Gaussian { mu, sigma2 } => {
                out.push(mu);
                out.push(sigma2);
            }
            EmissionParamsG::Harmonic { beta0, beta1, beta2, sigma2 } => {
                out.push(beta0);
                out.push(beta1);
                out.push(beta2);
                out.push(sigma2);
            }
        }
    }
    for &l in &params.lambda {
        out.push(l);
    }
    for r in &params.rho {
        if let Some(v) = r {
            out.push(*v);
        }
    }
    for j in 0..k {
        for l in 0..k {
            if l != j {
                out.push(params.pi[j][l]);
            }
        }
    }
    out
}

/// Names matching [`flatten_constrained`].
pub fn constrained_names(spec: &ModelSpec) -> Vec<String> {
    let k = spec.n_states;
    let mut names = Vec::new();
    for j in 1..=k {
        match spec.emission {
            EmissionFamily::Gaussian => {
                names.push(format!("mu[{j}]"));
                names.push(format!("sigma2[{j}]"));
            }
            EmissionFamily::HarmonicGaussian => {
                names.push(format!("beta0[{j}]"));
                names.push(format!("beta1[{j}]"));
                names.push(format!("beta2[{j}]"));
                names.push(format!("sigma2[{j}]"));
            }
        }
    }
    for j in 1..=k {
        names.push(format!("lambda[{j}]"));
    }
    for (j, f) in spec.dwell.iter().enumerate() {
        if f.needs_dispersion() {
            names.push(format!("rho[{}]", j + 1));
        }
    }
    for j in 1..=k {
        for l in 1..=k {
            if l != j {
                names.push(format!("pi[{j}][{l}]"));
            }
        }
    }
    names
}

/// `f64` convenience wrapper around [`constrain_g`].
pub fn constrain(spec: &ModelSpec, u: &[f64]) -> (ParamVector, f64) {
    constrain_g(spec, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{DwellFamily, EmissionParams};
    use crate::priors::PriorConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn spec_k3() -> ModelSpec {
        let families =
            vec![DwellFamily::Poisson, DwellFamily::NegBinomial, DwellFamily::Geometric];
        let prior = PriorConfig::weakly_informative(3, &families);
        ModelSpec::new(3, families, vec![4, 3, 5], EmissionFamily::Gaussian, None, prior).unwrap()
    }

    #[test]
    fn layout_dimension_counts() {
        let spec = spec_k3();
        let layout = UnconstrainedLayout::of(&spec);
        // 3 locations + 3 scales + 3 lambdas + 1 rho + 3 sticks
        assert_eq!(layout.dim, 13);
        assert_eq!(layout.coordinate_names().len(), 13);
    }

    #[test]
    fn constrain_produces_valid_parameters() {
        let spec = spec_k3();
        let layout = UnconstrainedLayout::of(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let u: Vec<f64> = (0..layout.dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let (params, log_jac) = constrain(&spec, &u);
            params.validate(&spec).unwrap();
            assert!(log_jac.is_finite());
            // Ordered locations
            let locs: Vec<f64> = params.emissions.iter().map(|e| e.location()).collect();
            assert!(locs.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn round_trip_identity() {
        let spec = spec_k3();
        let layout = UnconstrainedLayout::of(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let u: Vec<f64> = (0..layout.dim).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let (params, _) = constrain(&spec, &u);
            let u2 = unconstrain(&spec, &params).unwrap();
            let (params2, _) = constrain(&spec, &u2);
            for (a, b) in flatten_constrained(&spec, &params)
                .iter()
                .zip(flatten_constrained(&spec, &params2))
            {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn k2_has_degenerate_simplex() {
        let families = vec![DwellFamily::Poisson; 2];
        let prior = PriorConfig::weakly_informative(2, &families);
        let spec =
            ModelSpec::new(2, families, vec![2, 2], EmissionFamily::Gaussian, None, prior).unwrap();
        let layout = UnconstrainedLayout::of(&spec);
        // 2 locations + 2 scales + 2 lambdas, no sticks
        assert_eq!(layout.dim, 6);
        let (params, _) = constrain(&spec, &vec![0.0; 6]);
        assert_eq!(params.pi[0], vec![0.0, 1.0]);
        assert_eq!(params.pi[1], vec![1.0, 0.0]);
    }

    #[test]
    fn unconstrain_rejects_unordered_locations() {
        let families = vec![DwellFamily::Poisson; 2];
        let prior = PriorConfig::weakly_informative(2, &families);
        let spec =
            ModelSpec::new(2, families, vec![2, 2], EmissionFamily::Gaussian, None, prior).unwrap();
        let params = ParamVector {
            pi: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            lambda: vec![1.0, 1.0],
            rho: vec![None, None],
            emissions: vec![EmissionParams::gaussian(2.0, 1.0), EmissionParams::gaussian(1.0, 1.0)],
        };
        assert!(unconstrain(&spec, &params).is_err());
    }

    #[test]
    fn stick_breaking_jacobian_matches_finite_differences() {
        // det(∂π/∂u) via numerical differentiation on the free block of one row.
        let spec = spec_k3();
        let layout = UnconstrainedLayout::of(&spec);
        let u0: Vec<f64> = (0..layout.dim).map(|i| 0.1 * i as f64 - 0.6).collect();
        let (_, log_jac) = constrain(&spec, &u0);

        // The full Jacobian factorizes over blocks; check the total against a
        // finite-difference determinant computed coordinate block by block.
        let mut expect = 0.0;
        // gaps of ordered locations
        for j in 1..3 {
            expect += u0[j];
        }
        // scales and rates: log transforms
        for idx in 3..10 {
            expect += u0[idx];
        }
        // stick rows: 1 free coordinate per row for K = 3; FD on π_j entries
        for j in 0..3 {
            let idx = 10 + j;
            let h = 1e-6;
            let mut hi = u0.clone();
            hi[idx] += h;
            let mut lo = u0.clone();
            lo[idx] -= h;
            let (p_hi, _) = constrain(&spec, &hi);
            let (p_lo, _) = constrain(&spec, &lo);
            // first off-diagonal entry of row j determines the 1-D stick
            let l = if j == 0 { 1 } else { 0 };
            let d = (p_hi.pi[j][l] - p_lo.pi[j][l]) / (2.0 * h);
            expect += d.abs().ln();
        }
        assert!((log_jac - expect).abs() < 1e-6, "{log_jac} vs {expect}");
    }
}
