//! Unconstrained minimizers: adaptive Nelder–Mead and BFGS with
//! central-difference gradients.

use nalgebra::{DMatrix, DVector};

use crate::exec::Execution;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NelderMeadOptions {
    pub initial_step: f64,
    pub f_tol: f64,
    pub x_tol: f64,
    pub max_iter: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        NelderMeadOptions { initial_step: 0.2, f_tol: 1e-10, x_tol: 1e-7, max_iter: 3000 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BfgsOptions {
    /// Relative finite-difference step.
    pub fd_step: f64,
    pub grad_tol: f64,
    pub max_iter: usize,
}

impl Default for BfgsOptions {
    fn default() -> Self {
        BfgsOptions { fd_step: 1e-5, grad_tol: 1e-6, max_iter: 200 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

/// Nelder–Mead with dimension-dependent coefficients (Gao–Han).
pub fn nelder_mead(f: &(impl Fn(&DVector<f64>) -> f64 + Sync), x0: &DVector<f64>, opts: NelderMeadOptions) -> Minimum {
    let n = x0.len();
    let nf = n as f64;
    let (alpha, beta, gamma, delta) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);
    let mut evaluations = 0;
    let mut eval = |x: &DVector<f64>| {
        evaluations += 1;
        finite_or_inf(f(x))
    };
    let mut simplex: Vec<(DVector<f64>, f64)> = Vec::with_capacity(n + 1);
    let f0 = eval(x0);
    simplex.push((x0.clone(), f0));
    for i in 0..n {
        let mut x = x0.clone();
        x[i] += opts.initial_step;
        let fx = eval(&x);
        simplex.push((x, fx));
    }
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let best = simplex[0].1;
        let worst = simplex[n].1;
        let size = simplex.iter().skip(1).map(|(x, _)| (x - &simplex[0].0).amax()).fold(0.0, f64::max);
        if best.is_finite() && (worst - best).abs() <= opts.f_tol * (1.0 + best.abs()) && size <= opts.x_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let centroid = simplex.iter().take(n).fold(DVector::zeros(n), |acc, (x, _)| acc + x) / nf;
        let xr = &centroid + (&centroid - &simplex[n].0) * alpha;
        let fr = eval(&xr);
        if fr < simplex[0].1 {
            let xe = &centroid + (&xr - &centroid) * beta;
            let fe = eval(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < simplex[n].1 {
                let xc = &centroid + (&xr - &centroid) * gamma;
                let fc = eval(&xc);
                (xc, fc)
            } else {
                let xc = &centroid - (&centroid - &simplex[n].0) * gamma;
                let fc = eval(&xc);
                (xc, fc)
            };
            if fc < fr.min(simplex[n].1) {
                simplex[n] = (xc, fc);
            } else {
                let x_best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    let x = &x_best + (&v.0 - &x_best) * delta;
                    let fx = eval(&x);
                    *v = (x, fx);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    let (x, f) = simplex.swap_remove(0);
    Minimum { x, f, iterations, evaluations, converged }
}

/// Central-difference gradient; the `2n` evaluations run through `exec`.
pub fn central_gradient(
    f: &(impl Fn(&DVector<f64>) -> f64 + Sync),
    x: &DVector<f64>,
    rel_step: f64,
    exec: Execution,
) -> DVector<f64> {
    let n = x.len();
    let steps: Vec<f64> = x.iter().map(|v| rel_step * v.abs().max(1.0)).collect();
    let values = exec.map(2 * n, |k| {
        let i = k / 2;
        let mut xp = x.clone();
        xp[i] += if k % 2 == 0 { steps[i] } else { -steps[i] };
        f(&xp)
    });
    DVector::from_fn(n, |i, _| (values[2 * i] - values[2 * i + 1]) / (2.0 * steps[i]))
}

/// BFGS with Armijo backtracking and finite-difference gradients.
pub fn bfgs(f: &(impl Fn(&DVector<f64>) -> f64 + Sync), x0: &DVector<f64>, opts: BfgsOptions, exec: Execution) -> Minimum {
    let n = x0.len();
    let mut x = x0.clone();
    let mut fx = finite_or_inf(f(&x));
    let mut evaluations = 1;
    if !fx.is_finite() {
        return Minimum { x, f: fx, iterations: 0, evaluations, converged: false };
    }
    let mut g = central_gradient(f, &x, opts.fd_step, exec);
    evaluations += 2 * n;
    let mut h_inv = DMatrix::<f64>::identity(n, n);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < opts.max_iter {
        if g.amax() <= opts.grad_tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut dir = -(&h_inv * &g);
        let mut slope = g.dot(&dir);
        if slope >= 0.0 {
            h_inv = DMatrix::identity(n, n);
            dir = -g.clone();
            slope = g.dot(&dir);
        }
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let xt = &x + &dir * step;
            let ft = finite_or_inf(f(&xt));
            evaluations += 1;
            if ft <= fx + 1e-4 * step * slope {
                accepted = Some((xt, ft));
                break;
            }
            step *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            // No descent along the quasi-Newton direction: the gradient is at
            // the finite-difference noise floor.
            converged = g.amax() <= opts.grad_tol * 100.0;
            break;
        };
        let gn = central_gradient(f, &xn, opts.fd_step, exec);
        evaluations += 2 * n;
        let s = &xn - &x;
        let y = &gn - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let left = &i - (&s * y.transpose()) * rho;
            let right = &i - (&y * s.transpose()) * rho;
            h_inv = &left * &h_inv * &right + (&s * s.transpose()) * rho;
        }
        let small_change = (fx - fnew).abs() <= 1e-15 * (1.0 + fx.abs());
        x = xn;
        fx = fnew;
        g = gn;
        if small_change {
            converged = g.amax() <= opts.grad_tol * 100.0;
            break;
        }
    }
    Minimum { x, f: fx, iterations, evaluations, converged }
}
