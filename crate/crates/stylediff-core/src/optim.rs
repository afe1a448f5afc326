//! Optimizers for the generated-image pixel vector: L-BFGS with a
//! strong-Wolfe line search, and an adaptive-moment first-order
//! fallback. Both are deterministic given the same objective and
//! starting point.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

#[cfg(not(feature = "std"))]
use num_traits::Float;

use crate::{Error, Result, Scalar};

/// Loss value together with its two reported components (unweighted
/// content and style terms, always carried as f64 for tracing).
#[derive(Debug, Clone, Copy)]
pub struct LossBreakdown<T: Scalar> {
    pub total: T,
    pub content_term: f64,
    pub style_term: f64,
}

impl<T: Scalar> LossBreakdown<T> {
    pub fn scalar_only(total: T) -> Self {
        Self {
            total,
            content_term: 0.0,
            style_term: 0.0,
        }
    }
}

/// A differentiable scalar function of a flat vector. `eval` fills the
/// gradient and returns the loss with its component breakdown.
pub trait Objective<T: Scalar> {
    fn eval(&mut self, x: &[T], grad: &mut [T]) -> Result<LossBreakdown<T>>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct LbfgsParams {
    /// Number of curvature pairs kept.
    pub history: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Function-evaluation budget per line search.
    pub max_evals_per_step: usize,
}

impl Default for LbfgsParams {
    fn default() -> Self {
        Self {
            history: 20,
            c1: 1e-4,
            c2: 0.9,
            max_evals_per_step: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default))]
pub struct AdamParams {
    pub step: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        Self {
            step: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optional convergence cutoff: stop once the relative improvement
/// over `window` iterations drops below `rel_improvement`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EarlyStop {
    pub rel_improvement: f64,
    pub window: usize,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            rel_improvement: 1e-7,
            window: 10,
        }
    }
}

/// Why a run ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Termination {
    IterationBudget,
    EarlyStop,
    /// No acceptable step could be found within the evaluation budget.
    LineSearchStalled,
    GradientVanished,
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b.iter()) {
        acc += *x * *y;
    }
    acc
}

#[inline]
fn norm2<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

fn check_finite<T: Scalar>(value: T, iteration: usize) -> Result<()> {
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration,
            detail: format!("loss value {value}"),
        });
    }
    Ok(())
}

struct Eval<T: Scalar> {
    alpha: f64,
    breakdown: LossBreakdown<T>,
    grad: Vec<T>,
}

/// Strong-Wolfe line search (bracketing + zoom with safeguarded
/// bisection). Returns the accepted evaluation, or the best
/// plain-decrease point seen when the Wolfe conditions cannot be met
/// within the budget, or `None` when nothing improved.
#[allow(clippy::too_many_arguments)]
fn wolfe_line_search<T: Scalar, O: Objective<T>>(
    obj: &mut O,
    x: &[T],
    d: &[T],
    f0: f64,
    dphi0: f64,
    alpha_init: f64,
    params: &LbfgsParams,
    xt: &mut [T],
    grad_buf: &mut [T],
) -> Result<Option<Eval<T>>> {
    let c1 = params.c1;
    let c2 = params.c2;
    let mut evals = 0usize;
    let mut best: Option<Eval<T>> = None;

    macro_rules! probe {
        ($alpha:expr) => {{
            let alpha: f64 = $alpha;
            for (t, (xi, di)) in xt.iter_mut().zip(x.iter().zip(d.iter())) {
                *t = *xi + T::from_f64(alpha) * *di;
            }
            let breakdown = obj.eval(xt, grad_buf)?;
            let phi = breakdown.total.to_f64();
            let dphi = dot(grad_buf, d).to_f64();
            if phi.is_finite() && phi < f0 {
                let better = match &best {
                    Some(b) => phi < b.breakdown.total.to_f64(),
                    None => true,
                };
                if better {
                    best = Some(Eval {
                        alpha,
                        breakdown,
                        grad: grad_buf.to_vec(),
                    });
                }
            }
            (phi, dphi, breakdown)
        }};
    }

    // bracketing phase
    let mut alpha_prev = 0.0f64;
    let mut phi_prev = f0;
    let mut alpha = alpha_init;
    let mut bracket: Option<(f64, f64, f64)> = None; // (lo, phi_lo, hi)
    while evals < params.max_evals_per_step {
        evals += 1;
        let (phi, dphi, breakdown) = probe!(alpha);
        if !phi.is_finite() {
            // overshot into non-finite territory: zoom towards zero
            bracket = Some((alpha_prev, phi_prev, alpha));
            break;
        }
        if phi > f0 + c1 * alpha * dphi0 || (evals > 1 && phi >= phi_prev) {
            bracket = Some((alpha_prev, phi_prev, alpha));
            break;
        }
        if dphi.abs() <= -c2 * dphi0 {
            return Ok(Some(Eval {
                alpha,
                breakdown,
                grad: grad_buf.to_vec(),
            }));
        }
        if dphi >= 0.0 {
            bracket = Some((alpha, phi, alpha_prev));
            break;
        }
        alpha_prev = alpha;
        phi_prev = phi;
        alpha *= 2.0;
    }

    // zoom phase: safeguarded bisection of the bracket
    if let Some((mut lo, mut phi_lo, mut hi)) = bracket {
        while evals < params.max_evals_per_step {
            evals += 1;
            let alpha_j = lo + 0.5 * (hi - lo);
            let (phi, dphi, breakdown) = probe!(alpha_j);
            if !phi.is_finite() || phi > f0 + c1 * alpha_j * dphi0 || phi >= phi_lo {
                hi = alpha_j;
            } else {
                if dphi.abs() <= -c2 * dphi0 {
                    return Ok(Some(Eval {
                        alpha: alpha_j,
                        breakdown,
                        grad: grad_buf.to_vec(),
                    }));
                }
                if dphi * (hi - lo) >= 0.0 {
                    hi = lo;
                }
                lo = alpha_j;
                phi_lo = phi;
            }
            if (hi - lo).abs() <= 1e-16 * lo.abs().max(1.0) {
                break;
            }
        }
    }

    Ok(best)
}

/// L-BFGS with strong-Wolfe line search. `on_accept` fires for the
/// starting point (iteration 0) and every accepted iterate; accepted
/// losses are non-increasing by construction.
pub fn minimize_lbfgs<T: Scalar, O: Objective<T>>(
    obj: &mut O,
    x0: Vec<T>,
    iterations: usize,
    params: &LbfgsParams,
    early_stop: Option<EarlyStop>,
    mut on_accept: impl FnMut(usize, &[T], LossBreakdown<T>),
) -> Result<(Vec<T>, Termination)> {
    let n = x0.len();
    let mut x = x0;
    let mut grad = vec![T::zero(); n];
    let breakdown0 = obj.eval(&x, &mut grad)?;
    check_finite(breakdown0.total, 0)?;
    on_accept(0, &x, breakdown0);
    let mut f = breakdown0.total.to_f64();

    let mut history: VecDeque<(Vec<T>, Vec<T>, f64)> = VecDeque::new(); // (s, y, rho)
    let mut xt = vec![T::zero(); n];
    let mut grad_buf = vec![T::zero(); n];
    let mut recent: VecDeque<f64> = VecDeque::new();

    for k in 1..=iterations {
        let gnorm = norm2(&grad).to_f64();
        if gnorm == 0.0 {
            return Ok((x, Termination::GradientVanished));
        }

        // two-loop recursion: d = -H g
        let mut d: Vec<T> = grad.iter().map(|&g| -g).collect();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = *rho * dot(s, &d).to_f64();
            let at = T::from_f64(a);
            for (di, yi) in d.iter_mut().zip(y.iter()) {
                *di -= at * *yi;
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let gamma = dot(s, y).to_f64() / dot(y, y).to_f64();
            let gt = T::from_f64(gamma);
            for di in d.iter_mut() {
                *di *= gt;
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.into_iter().rev()) {
            let b = *rho * dot(y, &d).to_f64();
            let c = T::from_f64(a - b);
            for (di, si) in d.iter_mut().zip(s.iter()) {
                *di += c * *si;
            }
        }

        let mut dphi0 = dot(&grad, &d).to_f64();
        if dphi0 >= 0.0 {
            // not a descent direction: restart from steepest descent
            history.clear();
            for (di, gi) in d.iter_mut().zip(grad.iter()) {
                *di = -*gi;
            }
            dphi0 = -(gnorm * gnorm);
        }

        let alpha_init = if history.is_empty() {
            (1.0 / gnorm).min(1.0)
        } else {
            1.0
        };

        let accepted = wolfe_line_search(
            obj,
            &x,
            &d,
            f,
            dphi0,
            alpha_init,
            params,
            &mut xt,
            &mut grad_buf,
        )?;
        let Some(eval) = accepted else {
            return Ok((x, Termination::LineSearchStalled));
        };
        check_finite(eval.breakdown.total, k)?;

        let at = T::from_f64(eval.alpha);
        let mut s = vec![T::zero(); n];
        let mut y = vec![T::zero(); n];
        for i in 0..n {
            s[i] = at * d[i];
            y[i] = eval.grad[i] - grad[i];
        }
        let sy = dot(&s, &y).to_f64();
        if sy > 1e-12 * norm2(&s).to_f64() * norm2(&y).to_f64() {
            history.push_back((s.clone(), y, 1.0 / sy));
            if history.len() > params.history {
                history.pop_front();
            }
        }
        for i in 0..n {
            x[i] += s[i];
        }
        grad = eval.grad;
        f = eval.breakdown.total.to_f64();
        on_accept(k, &x, eval.breakdown);

        if let Some(es) = early_stop {
            recent.push_back(f);
            if recent.len() > es.window {
                let old = recent.pop_front().expect("non-empty window");
                let rel = (old - f) / old.abs().max(1e-300);
                if rel < es.rel_improvement {
                    return Ok((x, Termination::EarlyStop));
                }
            }
        }
    }
    Ok((x, Termination::IterationBudget))
}

/// Adaptive-moment gradient descent; the first-order fallback. The
/// optional projection is applied to the iterate after every step.
pub fn minimize_adam<T: Scalar, O: Objective<T>>(
    obj: &mut O,
    x0: Vec<T>,
    iterations: usize,
    params: &AdamParams,
    early_stop: Option<EarlyStop>,
    mut project: Option<impl FnMut(&mut [T])>,
    mut on_accept: impl FnMut(usize, &[T], LossBreakdown<T>),
) -> Result<(Vec<T>, Termination)> {
    let n = x0.len();
    let mut x = x0;
    let mut grad = vec![T::zero(); n];
    let breakdown0 = obj.eval(&x, &mut grad)?;
    check_finite(breakdown0.total, 0)?;
    on_accept(0, &x, breakdown0);

    let mut m = vec![0.0f64; n];
    let mut v = vec![0.0f64; n];
    let mut recent: VecDeque<f64> = VecDeque::new();
    for k in 1..=iterations {
        for i in 0..n {
            let g = grad[i].to_f64();
            m[i] = params.beta1 * m[i] + (1.0 - params.beta1) * g;
            v[i] = params.beta2 * v[i] + (1.0 - params.beta2) * g * g;
            let mhat = m[i] / (1.0 - params.beta1.powi(k as i32));
            let vhat = v[i] / (1.0 - params.beta2.powi(k as i32));
            let upd = params.step * mhat / (vhat.sqrt() + params.eps);
            x[i] = x[i] - T::from_f64(upd);
        }
        if let Some(p) = project.as_mut() {
            p(&mut x);
        }
        let breakdown = obj.eval(&x, &mut grad)?;
        check_finite(breakdown.total, k)?;
        on_accept(k, &x, breakdown);
        if let Some(es) = early_stop {
            let f = breakdown.total.to_f64();
            recent.push_back(f);
            if recent.len() > es.window {
                let old = recent.pop_front().expect("non-empty window");
                let rel = (old - f) / old.abs().max(1e-300);
                if rel < es.rel_improvement {
                    return Ok((x, Termination::EarlyStop));
                }
            }
        }
    }
    Ok((x, Termination::IterationBudget))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        center: Vec<f64>,
    }

    impl Objective<f64> for Quadratic {
        fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> Result<LossBreakdown<f64>> {
            let mut f = 0.0;
            for i in 0..x.len() {
                let d = x[i] - self.center[i];
                f += d * d;
                grad[i] = 2.0 * d;
            }
            Ok(LossBreakdown::scalar_only(f))
        }
    }

    struct Rosenbrock;

    impl Objective<f64> for Rosenbrock {
        fn eval(&mut self, x: &[f64], grad: &mut [f64]) -> Result<LossBreakdown<f64>> {
            let (a, b) = (x[0], x[1]);
            let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            grad[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            grad[1] = 200.0 * (b - a * a);
            Ok(LossBreakdown::scalar_only(f))
        }
    }

    #[test]
    fn lbfgs_solves_quadratic_quickly() {
        let mut obj = Quadratic {
            center: vec![1.0, -2.0, 3.0],
        };
        let (x, term) = minimize_lbfgs(
            &mut obj,
            vec![0.0; 3],
            50,
            &LbfgsParams::default(),
            None,
            |_, _, _| {},
        )
        .unwrap();
        assert!((x[0] - 1.0).abs() < 1e-8, "{x:?}");
        assert!((x[1] + 2.0).abs() < 1e-8);
        assert!((x[2] - 3.0).abs() < 1e-8);
        assert_ne!(term, Termination::LineSearchStalled);
    }

    #[test]
    fn lbfgs_solves_rosenbrock() {
        let (x, _) = minimize_lbfgs(
            &mut Rosenbrock,
            vec![-1.2, 1.0],
            200,
            &LbfgsParams::default(),
            None,
            |_, _, _| {},
        )
        .unwrap();
        assert!(
            (x[0] - 1.0).abs() < 1e-5 && (x[1] - 1.0).abs() < 1e-5,
            "{x:?}"
        );
    }

    #[test]
    fn lbfgs_accepted_losses_are_non_increasing() {
        let mut trace = Vec::new();
        minimize_lbfgs(
            &mut Rosenbrock,
            vec![-1.2, 1.0],
            100,
            &LbfgsParams::default(),
            None,
            |_, _, b| trace.push(b.total),
        )
        .unwrap();
        assert!(trace.len() > 2);
        for w in trace.windows(2) {
            assert!(
                w[1] <= w[0] * (1.0 + 1e-6) + 1e-300,
                "loss increased: {} -> {}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn lbfgs_reports_gradient_vanished_at_optimum() {
        let mut obj = Quadratic { center: vec![2.0] };
        let (x, term) = minimize_lbfgs(
            &mut obj,
            vec![2.0],
            10,
            &LbfgsParams::default(),
            None,
            |_, _, _| {},
        )
        .unwrap();
        assert_eq!(term, Termination::GradientVanished);
        assert_eq!(x[0], 2.0);
    }

    #[test]
    fn early_stop_cuts_iteration_budget() {
        let mut obj = Quadratic {
            center: vec![1.0, 1.0],
        };
        let mut count = 0;
        let (_, term) = minimize_lbfgs(
            &mut obj,
            vec![0.0, 0.0],
            1000,
            &LbfgsParams::default(),
            Some(EarlyStop::default()),
            |_, _, _| count += 1,
        )
        .unwrap();
        assert!(matches!(
            term,
            Termination::EarlyStop | Termination::GradientVanished
        ));
        assert!(count < 1000);
    }

    #[test]
    fn non_finite_loss_reports_iteration() {
        struct Explodes;
        impl Objective<f64> for Explodes {
            fn eval(&mut self, _x: &[f64], grad: &mut [f64]) -> Result<LossBreakdown<f64>> {
                grad.fill(f64::NAN);
                Ok(LossBreakdown::scalar_only(f64::NAN))
            }
        }
        let err = minimize_lbfgs(
            &mut Explodes,
            vec![0.0],
            5,
            &LbfgsParams::default(),
            None,
            |_, _, _| {},
        )
        .unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { iteration: 0, .. }));
    }

    #[test]
    fn adam_decreases_quadratic() {
        let mut obj = Quadratic {
            center: vec![0.5, 0.5],
        };
        let mut first = None;
        let mut last = None;
        minimize_adam(
            &mut obj,
            vec![0.0, 1.0],
            200,
            &AdamParams::default(),
            None,
            None::<fn(&mut [f64])>,
            |_, _, b| {
                if first.is_none() {
                    first = Some(b.total);
                }
                last = Some(b.total);
            },
        )
        .unwrap();
        assert!(last.unwrap() < 0.01 * first.unwrap());
    }

    #[test]
    fn adam_projection_keeps_iterates_in_bounds() {
        let mut obj = Quadratic {
            center: vec![5.0], // optimum outside [0, 1]
        };
        let (x, _) = minimize_adam(
            &mut obj,
            vec![0.5],
            100,
            &AdamParams::default(),
            None,
            Some(|x: &mut [f64]| {
                for v in x.iter_mut() {
                    *v = v.max(0.0).min(1.0);
                }
            }),
            |_, _, _| {},
        )
        .unwrap();
        assert!(x[0] >= 0.0 && x[0] <= 1.0);
    }
}
