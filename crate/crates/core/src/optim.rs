//! Dense BFGS for small unconstrained problems.

/// Settings for [`minimize`].
#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    /// Budget of objective/gradient evaluations.
    pub max_evals: usize,
    /// Convergence when the gradient's max-norm drops to this value.
    pub grad_tol: f64,
}

/// Consecutive accepted steps without a representable decrease after which
/// the objective is treated as minimized to machine precision.
const STALL_STEPS: usize = 10;

impl Default for BfgsOptions {
    fn default() -> Self {
        Self {
            max_evals: 5000,
            grad_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub converged: bool,
    pub n_evals: usize,
    /// Objective value at the start and after every accepted step.
    pub trace: Vec<f64>,
    /// Final inverse-Hessian approximation, row-major.
    pub inv_hessian: Vec<f64>,
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f`, which writes the gradient into its second argument and
/// returns the value. Non-finite values mark infeasible points; the line
/// search backs away from them.
pub fn minimize<F>(f: F, x0: &[f64], opts: BfgsOptions) -> BfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    minimize_from(f, x0, None, opts)
}

/// [`minimize`] starting from a given inverse-Hessian approximation, e.g.
/// the one left by a previous fit to similar data.
pub fn minimize_from<F>(mut f: F, x0: &[f64], h0: Option<&[f64]>, opts: BfgsOptions) -> BfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut evals = 1;
    let mut trace = vec![fx];
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return BfgsResult {
            x,
            f: fx,
            grad: g,
            converged: false,
            n_evals: evals,
            trace,
            inv_hessian: Vec::new(),
        };
    }

    // Inverse Hessian approximation, row-major.
    let mut h = vec![0.0; n * n];
    let reset = |h: &mut [f64], scale: f64| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            h[i * n + i] = scale;
        }
    };
    let mut fresh = true;
    match h0 {
        Some(h0) if h0.len() == n * n && h0.iter().all(|v| v.is_finite()) => {
            h.copy_from_slice(h0);
            fresh = false;
        }
        _ => reset(&mut h, 1.0),
    }

    let mut dir = vec![0.0; n];
    let mut x_new = vec![0.0; n];
    let mut g_new = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut hy = vec![0.0; n];

    let mut converged = max_abs(&g) <= opts.grad_tol;
    let mut stalled = 0;
    while !converged && evals < opts.max_evals {
        for i in 0..n {
            dir[i] = -dot(&h[i * n..(i + 1) * n], &g);
        }
        let mut slope = dot(&dir, &g);
        if !(slope < 0.0) {
            reset(&mut h, 1.0);
            fresh = true;
            dir.iter_mut().zip(&g).for_each(|(d, gi)| *d = -gi);
            slope = -dot(&g, &g);
        }
        // Keep the very first steepest-descent step modest.
        let mut step = if fresh {
            (1.0 / max_abs(&dir).max(1e-300)).min(1.0)
        } else {
            1.0
        };

        let mut accepted = false;
        let mut f_new = f64::NAN;
        for _ in 0..60 {
            for i in 0..n {
                x_new[i] = x[i] + step * dir[i];
            }
            f_new = f(&x_new, &mut g_new);
            evals += 1;
            if f_new.is_finite()
                && g_new.iter().all(|v| v.is_finite())
                && f_new <= fx + 1e-4 * step * slope
            {
                accepted = true;
                break;
            }
            if evals >= opts.max_evals {
                break;
            }
            // Quadratic interpolation of the backtrack, safeguarded.
            let next = if f_new.is_finite() {
                let denom = 2.0 * (f_new - fx - slope * step);
                if denom > 0.0 {
                    (-slope * step * step / denom).clamp(0.1 * step, 0.5 * step)
                } else {
                    0.5 * step
                }
            } else {
                0.25 * step
            };
            step = next;
        }

        if !accepted {
            if fresh {
                break;
            }
            reset(&mut h, 1.0);
            fresh = true;
            continue;
        }

        for i in 0..n {
            s[i] = x_new[i] - x[i];
            y[i] = g_new[i] - g[i];
        }
        std::mem::swap(&mut x, &mut x_new);
        std::mem::swap(&mut g, &mut g_new);
        if fx - f_new <= f64::EPSILON * fx.abs().max(1.0) {
            stalled += 1;
        } else {
            stalled = 0;
        }
        fx = f_new;
        trace.push(fx);

        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if fresh {
                reset(&mut h, sy / dot(&y, &y));
            }
            for i in 0..n {
                hy[i] = dot(&h[i * n..(i + 1) * n], &y);
            }
            let yhy = dot(&y, &hy);
            let rho = 1.0 / sy;
            let c = (1.0 + rho * yhy) * rho;
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += c * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
            fresh = false;
        }
        converged = max_abs(&g) <= opts.grad_tol || stalled >= STALL_STEPS;
    }

    BfgsResult {
        x,
        f: fx,
        grad: g,
        converged,
        n_evals: evals,
        trace,
        inv_hessian: h,
    }
}
