//! Limited-memory BFGS with a backtracking Armijo line search.

use std::collections::VecDeque;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    /// Maximum number of accepted steps.
    pub steps: usize,
    /// First trial step length of every line search.
    pub alpha: f64,
    /// Number of curvature pairs kept.
    pub memory: usize,
    /// Sufficient-decrease constant.
    pub armijo_c: f64,
    pub max_backtracks: usize,
    /// Stop once the largest gradient component falls below this.
    pub gradient_tolerance: f64,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            steps: 15,
            alpha: 0.1,
            memory: 10,
            armijo_c: 1e-4,
            max_backtracks: 10,
            gradient_tolerance: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    StepLimit,
    Stationary,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsOutcome {
    /// Best iterate seen.
    pub x: Vec<f64>,
    pub value: f64,
    pub steps: usize,
    pub evaluations: usize,
    pub stop: StopReason,
}

/// Called after every accepted step with the step index and new value.
pub struct StepInfo<'a> {
    pub step: usize,
    pub value: f64,
    pub x: &'a [f64],
}

pub fn lbfgs_minimize<F>(objective: F, start: &[f64], opts: &LbfgsOptions) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    lbfgs_minimize_with(objective, start, opts, |_| {})
}

pub fn lbfgs_minimize_with<F, O>(
    mut objective: F,
    start: &[f64],
    opts: &LbfgsOptions,
    mut on_step: O,
) -> Result<LbfgsOutcome>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
    O: FnMut(&StepInfo),
{
    if opts.steps == 0 || opts.memory == 0 || !(opts.alpha > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "L-BFGS needs steps >= 1, memory >= 1 and alpha > 0: {opts:?}"
        )));
    }
    let mut x = start.to_vec();
    let (mut f, mut g) = objective(&x)?;
    let mut evaluations = 1;
    if !f.is_finite() {
        return Err(Error::NonFinite {
            value: f,
            context: "objective at the starting point".into(),
        });
    }
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut steps = 0;
    let mut stop = StopReason::StepLimit;

    while steps < opts.steps {
        if max_abs(&g) <= opts.gradient_tolerance {
            stop = StopReason::Stationary;
            break;
        }
        let mut d = two_loop_direction(&g, &pairs);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            pairs.clear();
            d = two_loop_direction(&g, &pairs);
            slope = dot(&g, &d);
        }

        let mut t = opts.alpha;
        let mut accepted = None;
        for _ in 0..=opts.max_backtracks {
            let trial: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + t * di).collect();
            let (ft, gt) = objective(&trial)?;
            evaluations += 1;
            if ft.is_finite() && ft <= f + opts.armijo_c * t * slope {
                accepted = Some((trial, ft, gt));
                break;
            }
            t *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            stop = StopReason::LineSearchFailed;
            break;
        };

        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() && sy > 0.0 {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        x = x_new;
        f = f_new;
        g = g_new;
        steps += 1;
        on_step(&StepInfo {
            step: steps,
            value: f,
            x: &x,
        });
    }
    if steps == opts.steps && max_abs(&g) <= opts.gradient_tolerance {
        stop = StopReason::Stationary;
    }
    Ok(LbfgsOutcome {
        x,
        value: f,
        steps,
        evaluations,
        stop,
    })
}

fn two_loop_direction(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = Vec::with_capacity(pairs.len());
    for (s, y, rho) in pairs.iter().rev() {
        let a = rho * dot(s, &q);
        axpy(-a, y, &mut q);
        alphas.push(a);
    }
    // initial Hessian scale; without curvature pairs, cap the first step's
    // L1 length at one
    let gamma = match pairs.back() {
        Some((s, y, _)) => dot(s, y) / dot(y, y),
        None => 1.0f64.min(1.0 / g.iter().map(|v| v.abs()).sum::<f64>()),
    };
    q.iter_mut().for_each(|v| *v *= gamma);
    for ((s, y, rho), a) in pairs.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        axpy(a - b, s, &mut q);
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
