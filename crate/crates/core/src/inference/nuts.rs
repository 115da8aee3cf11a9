//! Dynamic Hamiltonian Monte Carlo with multiplicative trajectory doubling,
//! U-turn termination, multinomial candidate selection, dual-averaging step
//! size adaptation and windowed diagonal mass-matrix estimation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Energy error beyond which a transition is marked divergent.
const MAX_ENERGY_ERROR: f64 = 1000.0;

/// A differentiable unnormalized log-density.
pub trait LogDensityGrad: Sync {
    fn dim(&self) -> usize;
    /// Log-density and gradient; a non-finite log-density flags the point as
    /// divergent rather than aborting the chain.
    fn logp_grad(&self, q: &[f64]) -> (f64, Vec<f64>);
}

#[derive(Debug, Clone)]
pub struct NutsConfig {
    pub max_depth: usize,
    pub target_accept: f64,
    /// Initial step size; tuned automatically when `None`.
    pub init_step: Option<f64>,
}

impl Default for NutsConfig {
    fn default() -> Self {
        Self { max_depth: 10, target_accept: 0.8, init_step: None }
    }
}

/// One chain's post-warmup output.
#[derive(Debug, Clone)]
pub struct ChainOutput {
    pub draws: Vec<Vec<f64>>,
    pub lp: Vec<f64>,
    /// Mean leapfrog acceptance statistic per kept iteration.
    pub accept_stats: Vec<f64>,
    pub divergences: usize,
    pub step_size: f64,
    pub inv_mass: Vec<f64>,
}

#[derive(Clone)]
struct PhasePoint {
    q: Vec<f64>,
    p: Vec<f64>,
    grad: Vec<f64>,
    logp: f64,
}

impl PhasePoint {
    fn energy(&self, inv_mass: &[f64]) -> f64 {
        let ke: f64 = self
            .p
            .iter()
            .zip(inv_mass)
            .map(|(&p, &im)| 0.5 * p * p * im)
            .sum();
        -self.logp + ke
    }
}

struct Subtree {
    left: PhasePoint,
    right: PhasePoint,
    proposal: PhasePoint,
    log_sum_weight: f64,
    sum_accept: f64,
    n_leapfrog: usize,
    turning: bool,
    diverging: bool,
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

fn leapfrog(
    target: &dyn LogDensityGrad,
    point: &PhasePoint,
    eps: f64,
    inv_mass: &[f64],
) -> PhasePoint {
    let dim = point.q.len();
    let mut p = vec![0.0; dim];
    let mut q = vec![0.0; dim];
    for i in 0..dim {
        p[i] = point.p[i] + 0.5 * eps * point.grad[i];
    }
    for i in 0..dim {
        q[i] = point.q[i] + eps * inv_mass[i] * p[i];
    }
    let (logp, grad) = target.logp_grad(&q);
    for i in 0..dim {
        p[i] += 0.5 * eps * grad[i];
    }
    PhasePoint { q, p, grad, logp }
}

fn is_uturn(left: &PhasePoint, right: &PhasePoint, inv_mass: &[f64]) -> bool {
    let mut dot_left = 0.0;
    let mut dot_right = 0.0;
    for i in 0..left.q.len() {
        let dq = right.q[i] - left.q[i];
        dot_left += dq * inv_mass[i] * left.p[i];
        dot_right += dq * inv_mass[i] * right.p[i];
    }
    dot_left < 0.0 || dot_right < 0.0
}

#[allow(clippy::too_many_arguments)]
fn build_subtree(
    target: &dyn LogDensityGrad,
    from: &PhasePoint,
    eps: f64,
    depth: usize,
    h0: f64,
    inv_mass: &[f64],
    rng: &mut ChaCha8Rng,
) -> Subtree {
    if depth == 0 {
        let next = leapfrog(target, from, eps, inv_mass);
        let h = next.energy(inv_mass);
        let delta = h - h0;
        let diverging = !delta.is_finite() || delta > MAX_ENERGY_ERROR;
        let log_weight = if diverging { f64::NEG_INFINITY } else { -delta };
        let accept = if delta.is_finite() { (-delta).exp().min(1.0) } else { 0.0 };
        return Subtree {
            left: next.clone(),
            right: next.clone(),
            proposal: next,
            log_sum_weight: log_weight,
            sum_accept: accept,
            n_leapfrog: 1,
            turning: false,
            diverging,
        };
    }

    let inner = build_subtree(target, from, eps, depth - 1, h0, inv_mass, rng);
    if inner.diverging || inner.turning {
        return inner;
    }
    let start = if eps > 0.0 { &inner.right } else { &inner.left };
    let outer = build_subtree(target, start, eps, depth - 1, h0, inv_mass, rng);

    let log_sum = log_add(inner.log_sum_weight, outer.log_sum_weight);
    let take_outer = if outer.diverging {
        false
    } else {
        let prob = (outer.log_sum_weight - log_sum).exp();
        rng.gen::<f64>() < prob
    };
    let proposal = if take_outer { outer.proposal.clone() } else { inner.proposal.clone() };
    let (left, right) = if eps > 0.0 {
        (inner.left, outer.right)
    } else {
        (outer.left, inner.right)
    };
    let turning = outer.turning || is_uturn(&left, &right, inv_mass);
    Subtree {
        left,
        right,
        proposal,
        log_sum_weight: log_sum,
        sum_accept: inner.sum_accept + outer.sum_accept,
        n_leapfrog: inner.n_leapfrog + outer.n_leapfrog,
        turning,
        diverging: outer.diverging,
    }
}

struct Transition {
    next: PhasePoint,
    accept_stat: f64,
    diverging: bool,
}

fn nuts_transition(
    target: &dyn LogDensityGrad,
    current: PhasePoint,
    eps: f64,
    max_depth: usize,
    inv_mass: &[f64],
    rng: &mut ChaCha8Rng,
) -> Transition {
    let h0 = current.energy(inv_mass);
    let mut left = current.clone();
    let mut right = current.clone();
    let mut proposal = current;
    let mut log_sum_weight = 0.0f64;
    let mut sum_accept = 0.0f64;
    let mut n_leapfrog = 0usize;
    let mut diverging = false;

    for depth in 0..max_depth {
        let forward: bool = rng.gen();
        let subtree = if forward {
            build_subtree(target, &right, eps, depth, h0, inv_mass, rng)
        } else {
            build_subtree(target, &left, -eps, depth, h0, inv_mass, rng)
        };
        sum_accept += subtree.sum_accept;
        n_leapfrog += subtree.n_leapfrog;
        if subtree.diverging {
            diverging = true;
            break;
        }
        if subtree.turning {
            break;
        }
        // Biased progressive sampling favouring the fresh subtree.
        let prob = (subtree.log_sum_weight - log_sum_weight).exp();
        if rng.gen::<f64>() < prob {
            proposal = subtree.proposal.clone();
        }
        log_sum_weight = log_add(log_sum_weight, subtree.log_sum_weight);
        if forward {
            right = subtree.right;
        } else {
            left = subtree.left;
        }
        if is_uturn(&left, &right, inv_mass) {
            break;
        }
    }

    let accept_stat = if n_leapfrog > 0 { sum_accept / n_leapfrog as f64 } else { 0.0 };
    Transition { next: proposal, accept_stat, diverging }
}

fn find_initial_step(
    target: &dyn LogDensityGrad,
    point: &PhasePoint,
    inv_mass: &[f64],
    rng: &mut ChaCha8Rng,
) -> f64 {
    let dim = point.q.len();
    let mut trial = point.clone();
    for i in 0..dim {
        let z: f64 = rng.sample(StandardNormal);
        trial.p[i] = z / inv_mass[i].sqrt();
    }
    let h0 = trial.energy(inv_mass);
    let mut eps = 1.0f64;
    let step = leapfrog(target, &trial, eps, inv_mass);
    let mut ratio = h0 - step.energy(inv_mass);
    if !ratio.is_finite() {
        ratio = f64::NEG_INFINITY;
    }
    let go_up = ratio > (0.5f64).ln();
    for _ in 0..40 {
        eps *= if go_up { 2.0 } else { 0.5 };
        let step = leapfrog(target, &trial, eps, inv_mass);
        let r = h0 - step.energy(inv_mass);
        let r = if r.is_finite() { r } else { f64::NEG_INFINITY };
        if go_up && r <= (0.5f64).ln() {
            break;
        }
        if !go_up && r >= (0.5f64).ln() {
            break;
        }
    }
    eps.clamp(1e-8, 1e2)
}

struct DualAveraging {
    mu: f64,
    log_eps: f64,
    log_eps_bar: f64,
    h_bar: f64,
    count: u64,
    target: f64,
}

impl DualAveraging {
    fn new(eps: f64, target: f64) -> Self {
        Self {
            mu: (10.0 * eps).ln(),
            log_eps: eps.ln(),
            log_eps_bar: eps.ln(),
            h_bar: 0.0,
            count: 0,
            target,
        }
    }

    fn update(&mut self, accept_stat: f64) {
        const GAMMA: f64 = 0.05;
        const T0: f64 = 10.0;
        const KAPPA: f64 = 0.75;
        self.count += 1;
        let m = self.count as f64;
        let w = 1.0 / (m + T0);
        self.h_bar = (1.0 - w) * self.h_bar + w * (self.target - accept_stat);
        self.log_eps = self.mu - m.sqrt() / GAMMA * self.h_bar;
        let m_pow = m.powf(-KAPPA);
        self.log_eps_bar = m_pow * self.log_eps + (1.0 - m_pow) * self.log_eps_bar;
    }

    fn current(&self) -> f64 {
        self.log_eps.exp()
    }

    fn adapted(&self) -> f64 {
        self.log_eps_bar.exp()
    }
}

// Warmup schedule: fast start (step size only), expanding slow windows
// (mass matrix), fast tail.
struct AdaptSchedule {
    init_buffer: usize,
    term_start: usize,
    window_ends: Vec<usize>,
}

impl AdaptSchedule {
    fn new(n_warmup: usize) -> Self {
        if n_warmup < 40 {
            return Self { init_buffer: n_warmup, term_start: n_warmup, window_ends: vec![] };
        }
        let init_buffer = (n_warmup as f64 * 0.15).round() as usize;
        let term_buffer = (n_warmup as f64 * 0.10).round() as usize;
        let term_start = n_warmup - term_buffer;
        let mut window_ends = Vec::new();
        let mut size = 25usize.min(term_start.saturating_sub(init_buffer).max(1));
        let mut pos = init_buffer;
        loop {
            let mut end = pos + size;
            // Absorb a too-small final window.
            if end + 2 * size > term_start {
                end = term_start;
            }
            window_ends.push(end.min(term_start));
            if end >= term_start {
                break;
            }
            pos = end;
            size *= 2;
        }
        Self { init_buffer, term_start, window_ends }
    }
}

/// Run one NUTS chain: `n_warmup` adaptation iterations followed by
/// `n_draws` kept draws.
pub fn nuts_chain(
    target: &dyn LogDensityGrad,
    init: &[f64],
    n_warmup: usize,
    n_draws: usize,
    config: &NutsConfig,
    rng: &mut ChaCha8Rng,
) -> Result<ChainOutput, String> {
    let dim = target.dim();
    assert_eq!(init.len(), dim);
    let (logp, grad) = target.logp_grad(init);
    if !logp.is_finite() {
        return Err(format!("initial point has non-finite log density ({logp})"));
    }
    let mut current = PhasePoint { q: init.to_vec(), p: vec![0.0; dim], grad, logp };
    let mut inv_mass = vec![1.0; dim];

    let mut eps = match config.init_step {
        Some(e) => e,
        None => find_initial_step(target, &current, &inv_mass, rng),
    };
    let mut da = DualAveraging::new(eps, config.target_accept);
    let schedule = AdaptSchedule::new(n_warmup);
    let mut window_idx = 0usize;
    let (mut welford_n, mut welford_mean, mut welford_m2) =
        (0u64, vec![0.0f64; dim], vec![0.0f64; dim]);

    let mut out = ChainOutput {
        draws: Vec::with_capacity(n_draws),
        lp: Vec::with_capacity(n_draws),
        accept_stats: Vec::with_capacity(n_draws),
        divergences: 0,
        step_size: eps,
        inv_mass: inv_mass.clone(),
    };

    for iter in 0..(n_warmup + n_draws) {
        let warming = iter < n_warmup;
        for i in 0..dim {
            let z: f64 = rng.sample(StandardNormal);
            current.p[i] = z / inv_mass[i].sqrt();
        }
        let transition =
            nuts_transition(target, current.clone(), eps, config.max_depth, &inv_mass, rng);
        current = transition.next;
        if transition.diverging && !warming {
            out.divergences += 1;
        }

        if warming {
            da.update(transition.accept_stat);
            eps = da.current();

            let in_slow = iter >= schedule.init_buffer
                && iter < schedule.term_start
                && window_idx < schedule.window_ends.len();
            if in_slow {
                welford_n += 1;
                let n = welford_n as f64;
                for i in 0..dim {
                    let delta = current.q[i] - welford_mean[i];
                    welford_mean[i] += delta / n;
                    welford_m2[i] += delta * (current.q[i] - welford_mean[i]);
                }
                if iter + 1 == schedule.window_ends[window_idx] {
                    if welford_n > 4 {
                        let n = welford_n as f64;
                        for i in 0..dim {
                            let var = welford_m2[i] / (n - 1.0);
                            // Shrink towards unit scale as Stan does.
                            inv_mass[i] = (var * n / (n + 5.0) + 1e-3 * 5.0 / (n + 5.0)).max(1e-10);
                        }
                    }
                    welford_n = 0;
                    welford_mean.fill(0.0);
                    welford_m2.fill(0.0);
                    window_idx += 1;
                    eps = find_initial_step(target, &current, &inv_mass, rng);
                    da = DualAveraging::new(eps, config.target_accept);
                }
            }
            if iter + 1 == n_warmup {
                eps = da.adapted();
            }
        } else {
            out.draws.push(current.q.clone());
            out.lp.push(current.logp);
            out.accept_stats.push(transition.accept_stat);
        }
    }
    out.step_size = eps;
    out.inv_mass = inv_mass;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    struct StdNormal {
        dim: usize,
    }

    impl LogDensityGrad for StdNormal {
        fn dim(&self) -> usize {
            self.dim
        }
        fn logp_grad(&self, q: &[f64]) -> (f64, Vec<f64>) {
            let logp = -0.5 * q.iter().map(|x| x * x).sum::<f64>();
            (logp, q.iter().map(|x| -x).collect())
        }
    }

    #[test]
    fn standard_normal_moments_recovered() {
        // Detailed-balance smoke test on a 2-D standard normal: sample mean
        // within 3 SE of zero, covariance within 5% of identity.
        let target = StdNormal { dim: 2 };
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        let out = nuts_chain(
            &target,
            &[0.3, -0.2],
            1000,
            10_000,
            &NutsConfig::default(),
            &mut rng,
        )
        .unwrap();
        let n = out.draws.len() as f64;
        for d in 0..2 {
            let mean: f64 = out.draws.iter().map(|q| q[d]).sum::<f64>() / n;
            // ESS is below n; allow a conservative 3x inflation of the SE.
            let se = (1.0 / n).sqrt() * 3.0;
            assert!(mean.abs() < 3.0 * se, "dim {d}: mean {mean}");
            let var: f64 =
                out.draws.iter().map(|q| (q[d] - mean) * (q[d] - mean)).sum::<f64>() / (n - 1.0);
            assert!((var - 1.0).abs() < 0.05, "dim {d}: var {var}");
        }
        let cov: f64 = out
            .draws
            .iter()
            .map(|q| q[0] * q[1])
            .sum::<f64>()
            / n;
        assert!(cov.abs() < 0.05, "cov {cov}");
        assert_eq!(out.divergences, 0);
    }

    #[test]
    fn correlated_gaussian_is_handled_by_mass_adaptation() {
        // Anisotropic normal: variances 100 and 0.01.
        struct Aniso;
        impl LogDensityGrad for Aniso {
            fn dim(&self) -> usize {
                2
            }
            fn logp_grad(&self, q: &[f64]) -> (f64, Vec<f64>) {
                let logp = -0.5 * (q[0] * q[0] / 100.0 + q[1] * q[1] / 0.01);
                (logp, vec![-q[0] / 100.0, -q[1] / 0.01])
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out =
            nuts_chain(&Aniso, &[1.0, 0.05], 1500, 4000, &NutsConfig::default(), &mut rng).unwrap();
        let n = out.draws.len() as f64;
        let var0: f64 = out.draws.iter().map(|q| q[0] * q[0]).sum::<f64>() / n;
        let var1: f64 = out.draws.iter().map(|q| q[1] * q[1]).sum::<f64>() / n;
        assert!((var0 / 100.0 - 1.0).abs() < 0.2, "var0 = {var0}");
        assert!((var1 / 0.01 - 1.0).abs() < 0.2, "var1 = {var1}");
        // The adapted mass matrix should reflect the scale split.
        assert!(out.inv_mass[0] > 10.0 * out.inv_mass[1]);
    }

    #[test]
    fn divergent_region_is_flagged_not_fatal() {
        // A target with a hard support boundary (log densities -inf outside).
        struct HalfLine;
        impl LogDensityGrad for HalfLine {
            fn dim(&self) -> usize {
                1
            }
            fn logp_grad(&self, q: &[f64]) -> (f64, Vec<f64>) {
                if q[0] <= 0.0 {
                    (f64::NEG_INFINITY, vec![0.0])
                } else {
                    // Exp(1) on the half line
                    (-q[0], vec![-1.0])
                }
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out =
            nuts_chain(&HalfLine, &[1.0], 500, 2000, &NutsConfig::default(), &mut rng).unwrap();
        let n = out.draws.len() as f64;
        let mean: f64 = out.draws.iter().map(|q| q[0]).sum::<f64>() / n;
        assert!((mean - 1.0).abs() < 0.12, "mean {mean}");
        assert!(out.draws.iter().all(|q| q[0] > 0.0));
    }

    #[test]
    fn seeded_chains_are_bitwise_reproducible() {
        let target = StdNormal { dim: 3 };
        let run = |seed: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            nuts_chain(&target, &[0.0, 0.1, -0.1], 200, 300, &NutsConfig::default(), &mut rng)
                .unwrap()
                .draws
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }

    #[test]
    fn non_finite_init_is_an_error() {
        struct AlwaysBad;
        impl LogDensityGrad for AlwaysBad {
            fn dim(&self) -> usize {
                1
            }
            fn logp_grad(&self, _q: &[f64]) -> (f64, Vec<f64>) {
                (f64::NEG_INFINITY, vec![0.0])
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(
            nuts_chain(&AlwaysBad, &[0.0], 10, 10, &NutsConfig::default(), &mut rng).is_err()
        );
    }
}
