//! Soft-max smoothing, quadratic penalties and an L-BFGS minimizer that
//! falls back to a gradient step (with memory reset) when the Armijo
//! backtracking search fails.

use std::collections::VecDeque;

use crate::error::{DcfError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub mu: f64,
    pub rho_pen: f64,
    pub lbfgs_memory: usize,
    pub max_iters: usize,
    /// Infinity-norm gradient tolerance.
    pub grad_tol: f64,
    pub ls_shrink: f64,
    pub ls_c1: f64,
    pub ls_max_steps: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mu: 1e-6,
            rho_pen: 1e6,
            lbfgs_memory: 10,
            max_iters: 2000,
            grad_tol: 1e-6,
            ls_shrink: 0.5,
            ls_c1: 1e-4,
            ls_max_steps: 40,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(DcfError::InvalidArgument(format!("solver config: {what}")));
        if !(self.mu > 0.0) {
            return bad("mu must be positive");
        }
        if !(self.rho_pen > 0.0) {
            return bad("rho_pen must be positive");
        }
        if self.lbfgs_memory == 0 {
            return bad("lbfgs_memory must be at least 1");
        }
        if !(self.grad_tol >= 0.0) {
            return bad("grad_tol must be non-negative");
        }
        if !(self.ls_shrink > 0.0 && self.ls_shrink < 1.0) {
            return bad("ls_shrink must lie in (0, 1)");
        }
        if !(self.ls_c1 > 0.0 && self.ls_c1 < 1.0) {
            return bad("ls_c1 must lie in (0, 1)");
        }
        if self.ls_max_steps == 0 {
            return bad("ls_max_steps must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub final_value: f64,
    pub final_grad_norm: f64,
    pub line_search_failures: usize,
    pub converged: bool,
    /// Set when a non-finite value or gradient stopped the run.
    pub abort: Option<String>,
}

/// A differentiable objective. `eval` writes the gradient and returns the value.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Adapts a closure `(x, grad) -> value` into an [`Objective`].
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) -> f64 + Sync> FnObjective<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64]) -> f64 + Sync> Objective for FnObjective<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.f)(x, grad)
    }
}

/// Inequality residuals `g_i(x) <= 0`.
pub trait ConstraintSet: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn residuals(&self, x: &[f64], out: &mut [f64]);

    /// `grad += coef * grad g_i(x)`.
    fn add_gradient(&self, x: &[f64], i: usize, coef: f64, grad: &mut [f64]);
}

/// Largest positive residual, or 0 when feasible.
pub fn max_violation(c: &dyn ConstraintSet, x: &[f64]) -> f64 {
    let mut r = vec![0.0; c.len()];
    c.residuals(x, &mut r);
    r.into_iter().fold(0.0, f64::max)
}

pub struct Penalized<'a> {
    base: &'a dyn Objective,
    constraints: &'a dyn ConstraintSet,
    rho: f64,
}

/// `base(x) + rho * sum max(0, g_i(x))^2`.
pub fn penalty_objective<'a>(base: &'a dyn Objective, constraints: &'a dyn ConstraintSet, rho: f64) -> Penalized<'a> {
    Penalized { base, constraints, rho }
}

impl Objective for Penalized<'_> {
    fn dim(&self) -> usize {
        self.base.dim()
    }

    fn eval(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let mut value = self.base.eval(x, grad);
        let mut r = vec![0.0; self.constraints.len()];
        self.constraints.residuals(x, &mut r);
        let mut pen = 0.0;
        for (i, &g) in r.iter().enumerate() {
            if g > 0.0 {
                pen += g * g;
                self.constraints.add_gradient(x, i, 2.0 * self.rho * g, grad);
            }
        }
        value += self.rho * pen;
        value
    }
}

/// `mu * ln sum exp(alpha_k / mu)`, computed with a max shift.
pub fn softmax_smooth(alpha: &[f64], mu: f64) -> Result<f64> {
    if alpha.is_empty() {
        return Err(DcfError::InvalidArgument("soft-max of an empty vector".into()));
    }
    let m = alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = alpha.iter().map(|a| ((a - m) / mu).exp()).sum();
    Ok(m + mu * s.ln())
}

/// Gradient of [`softmax_smooth`] with respect to `alpha`.
pub fn softmax_weights(alpha: &[f64], mu: f64) -> Result<Vec<f64>> {
    if alpha.is_empty() {
        return Err(DcfError::InvalidArgument("soft-max of an empty vector".into()));
    }
    let mut w = vec![0.0; alpha.len()];
    softmax_weights_into(alpha, mu, &mut w);
    Ok(w)
}

/// In-place variant of [`softmax_weights`]; returns the true maximum and
/// the smoothed value.
#[inline]
pub fn softmax_weights_into(alpha: &[f64], mu: f64, out: &mut [f64]) -> (f64, f64) {
    let m = alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, a) in out.iter_mut().zip(alpha) {
        let t = (a - m) / mu;
        *o = if t < -746.0 { 0.0 } else { t.exp() };
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
    (m, m + mu * s.ln())
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, a| m.max(a.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| p * q).sum()
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|a| a.is_finite())
}

struct Memory {
    pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)>,
    cap: usize,
}

impl Memory {
    fn push(&mut self, s: Vec<f64>, y: Vec<f64>) {
        let sy = dot(&s, &y);
        let (ns, ny) = (dot(&s, &s).sqrt(), dot(&y, &y).sqrt());
        if !(sy > 1e-12 * ns * ny) {
            return;
        }
        if self.pairs.len() == self.cap {
            self.pairs.pop_front();
        }
        self.pairs.push_back((s, y, 1.0 / sy));
    }

    /// Two-loop recursion: returns `-H g`.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let mut alphas = Vec::with_capacity(self.pairs.len());
        for (s, y, rho) in self.pairs.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        if let Some((s, y, _)) = self.pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            q.iter_mut().for_each(|qi| *qi *= gamma);
        }
        for ((s, y, rho), a) in self.pairs.iter().zip(alphas.into_iter().rev()) {
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|qi| *qi = -*qi);
        q
    }
}

/// Minimizes `obj` from `x0`. The returned point is the best accepted iterate.
pub fn lbfgs_minimize(obj: &dyn Objective, x0: &[f64], cfg: &SolverConfig) -> (Vec<f64>, SolveReport) {
    let n = obj.dim();
    assert_eq!(x0.len(), n, "starting point has the wrong dimension");
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut f = obj.eval(&x, &mut g);
    let mut report = SolveReport {
        iterations: 0,
        final_value: f,
        final_grad_norm: inf_norm(&g),
        line_search_failures: 0,
        converged: false,
        abort: None,
    };
    if !f.is_finite() || !all_finite(&g) {
        report.abort = Some("non-finite objective at the starting point".into());
        return (x, report);
    }
    let mut mem = Memory { pairs: VecDeque::new(), cap: cfg.lbfgs_memory };
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];

    while report.iterations < cfg.max_iters {
        if inf_norm(&g) <= cfg.grad_tol {
            report.converged = true;
            break;
        }
        let mut used_memory = !mem.pairs.is_empty();
        let mut dir = if used_memory { mem.direction(&g) } else { steepest(&g) };
        if !(dot(&g, &dir) < 0.0) || !all_finite(&dir) {
            mem.pairs.clear();
            used_memory = false;
            dir = steepest(&g);
        }
        let accepted = loop {
            match line_search(obj, &x, f, &g, &dir, cfg, &mut x_new, &mut g_new) {
                Some(f_new) => break Some(f_new),
                None => {
                    report.line_search_failures += 1;
                    if used_memory {
                        mem.pairs.clear();
                        used_memory = false;
                        dir = steepest(&g);
                    } else {
                        break None;
                    }
                }
            }
        };
        let Some(f_new) = accepted else { break };
        report.iterations += 1;
        if !all_finite(&g_new) {
            report.abort = Some(format!("non-finite gradient at iteration {}", report.iterations));
            break;
        }
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        mem.push(s, y);
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        f = f_new;
    }
    if !report.converged && report.abort.is_none() && inf_norm(&g) <= cfg.grad_tol {
        report.converged = true;
    }
    report.final_value = f;
    report.final_grad_norm = inf_norm(&g);
    (x, report)
}

/// Unit-length steepest-descent direction.
fn steepest(g: &[f64]) -> Vec<f64> {
    let norm = dot(g, g).sqrt();
    let scale = if norm > 0.0 { 1.0 / norm } else { 1.0 };
    g.iter().map(|v| -v * scale).collect()
}

/// Armijo backtracking from step 1. Non-finite trial values count as rejections.
#[allow(clippy::too_many_arguments)]
fn line_search(
    obj: &dyn Objective,
    x: &[f64],
    f: f64,
    g: &[f64],
    dir: &[f64],
    cfg: &SolverConfig,
    x_new: &mut [f64],
    g_new: &mut [f64],
) -> Option<f64> {
    let slope = dot(g, dir);
    let mut step = 1.0;
    for _ in 0..cfg.ls_max_steps {
        for i in 0..x.len() {
            x_new[i] = x[i] + step * dir[i];
        }
        let f_new = obj.eval(x_new, g_new);
        if f_new.is_finite() && f_new <= f + cfg.ls_c1 * step * slope {
            if x_new == x {
                return None;
            }
            return Some(f_new);
        }
        step *= cfg.ls_shrink;
    }
    None
}

/// Central finite-difference gradient with step `1e-6 * (1 + |x_i|)`.
pub fn finite_difference_gradient(obj: &dyn Objective, x: &[f64]) -> Vec<f64> {
    let mut scratch = vec![0.0; x.len()];
    let mut xp = x.to_vec();
    (0..x.len())
        .map(|i| {
            let h = 1e-6 * (1.0 + x[i].abs());
            xp[i] = x[i] + h;
            let fp = obj.eval(&xp, &mut scratch);
            xp[i] = x[i] - h;
            let fm = obj.eval(&xp, &mut scratch);
            xp[i] = x[i];
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    struct Linear {
        a: Vec<Vec<f64>>,
        c: Vec<f64>,
    }

    impl ConstraintSet for Linear {
        fn len(&self) -> usize {
            self.c.len()
        }
        fn residuals(&self, x: &[f64], out: &mut [f64]) {
            for (i, o) in out.iter_mut().enumerate() {
                *o = dot(&self.a[i], x) - self.c[i];
            }
        }
        fn add_gradient(&self, _x: &[f64], i: usize, coef: f64, grad: &mut [f64]) {
            grad.iter_mut().zip(&self.a[i]).for_each(|(g, a)| *g += coef * a);
        }
    }

    fn zero_obj(dim: usize) -> FnObjective<impl Fn(&[f64], &mut [f64]) -> f64 + Sync> {
        FnObjective::new(dim, |_x: &[f64], g: &mut [f64]| {
            g.iter_mut().for_each(|v| *v = 0.0);
            0.0
        })
    }

    #[test]
    fn softmax_examples() {
        assert!((softmax_smooth(&[0.0, 0.0], 1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(softmax_smooth(&[-3.25], 0.1).unwrap(), -3.25);
        assert_eq!(softmax_smooth(&[0.0, 1.0], 1e-6).unwrap(), 1.0);
        assert!(softmax_smooth(&[], 1.0).is_err());
        assert_eq!(softmax_weights(&[0.0, 0.0], 1.0).unwrap(), vec![0.5, 0.5]);
        assert_eq!(softmax_weights(&[0.0, 10.0], 1e-6).unwrap(), vec![0.0, 1.0]);
        assert!(softmax_weights(&[], 1.0).is_err());
        assert!(softmax_smooth(&[1e308, -1e308], 1e-6).unwrap().is_finite());
    }

    #[test]
    fn softmax_overestimate_bound_and_normalization() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..500 {
            let k = rng.random_range(1..20);
            let mu = 10f64.powf(rng.random_range(-6.0..0.0));
            let a: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..5.0)).collect();
            let m = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let s = softmax_smooth(&a, mu).unwrap();
            assert!(s >= m && s <= m + mu * (k as f64).ln() + 1e-12);
            let w = softmax_weights(&a, mu).unwrap();
            assert!(w.iter().all(|&v| v >= 0.0));
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn penalty_examples() {
        let base = FnObjective::new(1, |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * x[0];
            x[0] * x[0]
        });
        let c = Linear { a: vec![vec![1.0]], c: vec![1.0] };
        let pen = penalty_objective(&base, &c, 1e6);
        let mut g = [0.0];
        assert_eq!(pen.eval(&[0.5], &mut g), 0.25);
        let zero = zero_obj(1);
        let pen0 = penalty_objective(&zero, &c, 1e6);
        assert_eq!(pen0.eval(&[2.0], &mut g), 1e6);
        assert_eq!(g[0], 2e6);
        assert_eq!(max_violation(&c, &[2.0]), 1.0);
        assert_eq!(max_violation(&c, &[0.0]), 0.0);
    }

    #[test]
    fn penalty_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..20 {
            let dim = 4;
            let q: Vec<f64> = (0..dim).map(|_| rng.random_range(0.5..2.0)).collect();
            let base = FnObjective::new(dim, move |x: &[f64], g: &mut [f64]| {
                let mut v = 0.0;
                for i in 0..x.len() {
                    v += q[i] * x[i].powi(2) + x[i].sin();
                    g[i] = 2.0 * q[i] * x[i] + x[i].cos();
                }
                v
            });
            let c = Linear {
                a: (0..3).map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()).collect(),
                c: (0..3).map(|_| rng.random_range(-0.5..0.5)).collect(),
            };
            let pen = penalty_objective(&base, &c, 10.0);
            let x: Vec<f64> = (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mut g = vec![0.0; dim];
            pen.eval(&x, &mut g);
            let fd = finite_difference_gradient(&pen, &x);
            for (a, b) in g.iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-5 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn lbfgs_quadratic() {
        let obj = FnObjective::new(1, |x: &[f64], g: &mut [f64]| {
            g[0] = 2.0 * (x[0] - 3.0);
            (x[0] - 3.0).powi(2)
        });
        let (x, rep) = lbfgs_minimize(&obj, &[0.0], &SolverConfig::default());
        assert!((x[0] - 3.0).abs() < 1e-6);
        assert!(rep.converged);
        assert!(rep.final_value <= 9.0);
    }

    #[test]
    fn lbfgs_rosenbrock() {
        let obj = FnObjective::new(2, |x: &[f64], g: &mut [f64]| {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        });
        let (x, rep) = lbfgs_minimize(&obj, &[-1.2, 1.0], &SolverConfig::default());
        assert!((x[0] - 1.0).abs() < 1e-4 && (x[1] - 1.0).abs() < 1e-4, "{x:?} {rep:?}");
    }

    #[test]
    fn lbfgs_zero_gradient_start() {
        let obj = zero_obj(3);
        let (x, rep) = lbfgs_minimize(&obj, &[1.0, 2.0, 3.0], &SolverConfig::default());
        assert_eq!(x, vec![1.0, 2.0, 3.0]);
        assert!(rep.converged);
        assert_eq!(rep.iterations, 0);
    }

    #[test]
    fn lbfgs_monotone_and_deterministic() {
        use std::sync::Mutex;
        let trace = Mutex::new(Vec::new());
        let obj = FnObjective::new(3, |x: &[f64], g: &mut [f64]| {
            let mut v = 0.0;
            for i in 0..3 {
                let t = x[i] - i as f64;
                v += t.abs().powf(1.5) + 0.1 * t * t;
                g[i] = 1.5 * t.abs().sqrt() * t.signum() + 0.2 * t;
            }
            trace.lock().unwrap().push(v);
            v
        });
        let cfg = SolverConfig { max_iters: 200, ..SolverConfig::default() };
        let (x1, r1) = lbfgs_minimize(&obj, &[5.0, -4.0, 2.0], &cfg);
        let (x2, r2) = lbfgs_minimize(&obj, &[5.0, -4.0, 2.0], &cfg);
        assert_eq!(x1, x2);
        assert_eq!(r1, r2);
        assert!(r1.final_value <= 5f64.powf(1.5) + 2.5 + 5f64.powf(1.5) + 2.5 + 1.0);
        assert!(r1.iterations <= cfg.max_iters);
    }

    #[test]
    fn lbfgs_nonfinite_aborts_with_best_iterate() {
        let obj = FnObjective::new(1, |x: &[f64], g: &mut [f64]| {
            g[0] = if x[0] > 0.5 { f64::NAN } else { -1.0 };
            -x[0]
        });
        let cfg = SolverConfig { max_iters: 5, ..SolverConfig::default() };
        let (x, rep) = lbfgs_minimize(&obj, &[0.0], &cfg);
        assert_eq!(x, vec![0.0]);
        assert_eq!(rep.final_value, 0.0);
        assert!(rep.abort.is_some());
        let bad = FnObjective::new(1, |_x: &[f64], g: &mut [f64]| {
            g[0] = 0.0;
            f64::NAN
        });
        let (_, rep) = lbfgs_minimize(&bad, &[0.0], &cfg);
        assert!(rep.abort.is_some());
    }

    #[test]
    fn config_validation() {
        assert!(SolverConfig::default().validate().is_ok());
        assert!(SolverConfig { mu: 0.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { ls_shrink: 1.0, ..Default::default() }.validate().is_err());
        assert!(SolverConfig { lbfgs_memory: 0, ..Default::default() }.validate().is_err());
    }
}
