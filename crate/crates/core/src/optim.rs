//! Box-constrained minimizers: a projected quasi-Newton method driven by
//! finite-difference gradients, and a Nelder–Mead simplex that reflects
//! trial points back into the box.
//!
//! Both minimize `f` over `{lo ≤ x ≤ hi}`. Coordinates with `lo == hi` are
//! held fixed. `f` may return `+∞` (or NaN) for points it refuses.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};

use crate::numdiff;

#[derive(Debug, Clone)]
pub struct Outcome {
    pub x: Vec<f64>,
    pub f: f64,
    pub converged: bool,
    /// `‖projected gradient‖_∞` at `x` for the gradient method, simplex
    /// diameter for Nelder–Mead.
    pub criterion: f64,
    pub evaluations: usize,
    /// The method could not make progress (non-finite gradient, line search
    /// stall away from a stationary point).
    pub failed: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct BfgsOptions {
    pub max_iter: usize,
    /// Stop when `‖projected gradient‖_∞ ≤ pg_tol`.
    pub pg_tol: f64,
    pub fd_eps: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SimplexOptions {
    pub max_evals: usize,
    /// Stop when every vertex is within this ∞-distance of the best one.
    pub diam_tol: f64,
}

fn finite_or_inf(v: f64) -> f64 {
    if v.is_finite() {
        v
    } else {
        f64::INFINITY
    }
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

fn at_lower(x: f64, lo: f64) -> bool {
    x - lo <= 1e-12 * lo.abs().max(1.0)
}

fn at_upper(x: f64, hi: f64) -> bool {
    hi - x <= 1e-12 * hi.abs().max(1.0)
}

fn projected_gradient(x: &[f64], g: &[f64], lo: &[f64], hi: &[f64], free: &[usize]) -> Vec<f64> {
    let mut pg = vec![0.0; x.len()];
    for &i in free {
        let blocked =
            (g[i] > 0.0 && at_lower(x[i], lo[i])) || (g[i] < 0.0 && at_upper(x[i], hi[i]));
        if !blocked {
            pg[i] = g[i];
        }
    }
    pg
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, a| m.max(a.abs()))
}

/// Projected BFGS with an Armijo backtracking search along the projection
/// arc `α ↦ P(x + α d)`.
pub fn projected_bfgs<F>(
    mut f: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &BfgsOptions,
) -> Outcome
where
    F: FnMut(&[f64]) -> f64,
{
    let d = x0.len();
    let free: Vec<usize> = (0..d).filter(|&i| lo[i] < hi[i]).collect();
    let active: Vec<bool> = (0..d).map(|i| lo[i] < hi[i]).collect();
    let m = free.len();
    let evals = Cell::new(0usize);
    let mut feval = |x: &[f64]| {
        evals.set(evals.get() + 1);
        finite_or_inf(f(x))
    };

    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let mut fx = feval(&x);
    let mut out = Outcome {
        x: x.clone(),
        f: fx,
        converged: false,
        criterion: f64::INFINITY,
        evaluations: 0,
        failed: true,
    };
    if !fx.is_finite() {
        out.evaluations = evals.get();
        return out;
    }
    if m == 0 {
        out.converged = true;
        out.failed = false;
        out.criterion = 0.0;
        out.evaluations = evals.get();
        return out;
    }

    let grad = |x: &[f64], feval: &mut dyn FnMut(&[f64]) -> f64| -> Option<Vec<f64>> {
        let plan = numdiff::plan_steps(x, lo, hi, &active, opts.fd_eps, None).ok()?;
        let g = numdiff::gradient(
            |u| {
                let v = feval(u);
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(crate::AcxError::NonFinite { t: 0 })
                }
            },
            x,
            &plan,
        )
        .ok()?;
        g.iter().all(|v| v.is_finite()).then_some(g)
    };

    let Some(mut g) = grad(&x, &mut feval) else {
        out.evaluations = evals.get();
        return out;
    };
    let mut hinv = DMatrix::<f64>::identity(m, m);
    let mut hinv_is_identity = true;
    let mut failed = false;
    let mut pg_norm = inf_norm(&projected_gradient(&x, &g, lo, hi, &free));

    for _ in 0..opts.max_iter {
        if pg_norm <= opts.pg_tol {
            break;
        }
        // Coordinates pinned at a bound by the gradient take no step.
        let movable: Vec<bool> = free
            .iter()
            .map(|&i| {
                !((g[i] > 0.0 && at_lower(x[i], lo[i])) || (g[i] < 0.0 && at_upper(x[i], hi[i])))
            })
            .collect();
        let gf = DVector::from_fn(m, |k, _| if movable[k] { g[free[k]] } else { 0.0 });
        let mut dir = -(&hinv * &gf);
        for k in 0..m {
            if !movable[k] {
                dir[k] = 0.0;
            }
        }
        if dir.dot(&gf) >= 0.0 {
            hinv = DMatrix::identity(m, m);
            hinv_is_identity = true;
            dir = -gf.clone();
        }
        if hinv_is_identity {
            // Unscaled steepest descent: cap the first trial step.
            let big = dir.amax();
            if big > 1.0 {
                dir /= big;
            }
        }

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let mut xn = x.clone();
            for k in 0..m {
                xn[free[k]] += alpha * dir[k];
            }
            project(&mut xn, lo, hi);
            let decrease: f64 = free.iter().map(|&i| g[i] * (xn[i] - x[i])).sum();
            if xn == x {
                break;
            }
            let fnew = feval(&xn);
            if fnew <= fx + 1e-4 * decrease {
                accepted = Some((xn, fnew));
                break;
            }
            alpha *= 0.5;
        }
        let Some((xn, fnew)) = accepted else {
            if hinv_is_identity {
                failed = true;
                break;
            }
            hinv = DMatrix::identity(m, m);
            hinv_is_identity = true;
            continue;
        };
        let Some(gn) = grad(&xn, &mut feval) else {
            // Keep the improved point, hand over to the fallback.
            x = xn;
            fx = fnew;
            failed = true;
            break;
        };

        let s = DVector::from_fn(m, |k, _| xn[free[k]] - x[free[k]]);
        let y = DVector::from_fn(m, |k, _| gn[free[k]] - g[free[k]]);
        let sy = s.dot(&y);
        if sy > 1e-10 * s.norm() * y.norm() {
            if hinv_is_identity {
                hinv = DMatrix::identity(m, m) * (sy / y.dot(&y));
            }
            let rho = 1.0 / sy;
            let hy = &hinv * &y;
            let yhy = y.dot(&hy);
            // H⁺ = H − ρ(H y sᵀ + s yᵀ H) + (ρ² yᵀHy + ρ) s sᵀ
            hinv -= (&hy * s.transpose() + &s * hy.transpose()) * rho;
            hinv += (&s * s.transpose()) * (rho * rho * yhy + rho);
            hinv_is_identity = false;
        }
        x = xn;
        fx = fnew;
        g = gn;
        pg_norm = inf_norm(&projected_gradient(&x, &g, lo, hi, &free));
    }

    let converged = !failed && pg_norm <= opts.pg_tol;
    Outcome {
        x,
        f: fx,
        converged,
        criterion: if failed { f64::INFINITY } else { pg_norm },
        evaluations: evals.get(),
        failed: failed || !converged,
    }
}

/// Fold a trial coordinate back into `[lo, hi]` by mirror reflection.
fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    let r = if v < lo {
        lo + (lo - v)
    } else if v > hi {
        hi - (v - hi)
    } else {
        v
    };
    r.clamp(lo, hi)
}

/// Nelder–Mead simplex over the free coordinates with reflection at the box.
pub fn nelder_mead_box<F>(
    mut f: F,
    x0: &[f64],
    lo: &[f64],
    hi: &[f64],
    opts: &SimplexOptions,
) -> Outcome
where
    F: FnMut(&[f64]) -> f64,
{
    let d = x0.len();
    let free: Vec<usize> = (0..d).filter(|&i| lo[i] < hi[i]).collect();
    let m = free.len();
    let mut base = x0.to_vec();
    project(&mut base, lo, hi);
    let mut evals = 0usize;
    let embed = |z: &[f64], base: &[f64]| {
        let mut x = base.to_vec();
        for (k, &i) in free.iter().enumerate() {
            x[i] = z[k];
        }
        x
    };
    let mut eval = |z: &[f64], evals: &mut usize| {
        *evals += 1;
        finite_or_inf(f(&embed(z, &base)))
    };
    if m == 0 {
        let fx = eval(&[], &mut evals);
        return Outcome {
            x: base,
            f: fx,
            converged: fx.is_finite(),
            criterion: 0.0,
            evaluations: evals,
            failed: !fx.is_finite(),
        };
    }
    let fold = |z: &mut [f64]| {
        for (k, &i) in free.iter().enumerate() {
            z[k] = reflect(z[k], lo[i], hi[i]);
        }
    };

    let z0: Vec<f64> = free.iter().map(|&i| base[i]).collect();
    let mut simplex = vec![z0.clone()];
    for (k, &i) in free.iter().enumerate() {
        let width = hi[i] - lo[i];
        let step = (0.1 * width).min(0.1 * z0[k].abs().max(0.5));
        let mut v = z0.clone();
        v[k] = if z0[k] + step <= hi[i] {
            z0[k] + step
        } else {
            z0[k] - step
        };
        fold(&mut v);
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|z| eval(z, &mut evals)).collect();

    let diameter = |s: &[Vec<f64>]| -> f64 {
        s[1..]
            .iter()
            .map(|v| {
                v.iter()
                    .zip(&s[0])
                    .fold(0.0f64, |a, (p, q)| a.max((p - q).abs()))
            })
            .fold(0.0, f64::max)
    };

    let mut diam;
    loop {
        let mut order: Vec<usize> = (0..=m).collect();
        order.sort_by(|&a, &b| fv[a].total_cmp(&fv[b]));
        simplex = order.iter().map(|&k| simplex[k].clone()).collect();
        fv = order.iter().map(|&k| fv[k]).collect();
        diam = diameter(&simplex);
        if diam <= opts.diam_tol || evals >= opts.max_evals {
            break;
        }
        let centroid: Vec<f64> = (0..m)
            .map(|k| simplex[..m].iter().map(|v| v[k]).sum::<f64>() / m as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> {
            let mut z: Vec<f64> = (0..m)
                .map(|k| centroid[k] + t * (simplex[m][k] - centroid[k]))
                .collect();
            fold(&mut z);
            z
        };
        let zr = along(-1.0);
        let fr = eval(&zr, &mut evals);
        if fr < fv[0] {
            let ze = along(-2.0);
            let fe = eval(&ze, &mut evals);
            if fe < fr {
                simplex[m] = ze;
                fv[m] = fe;
            } else {
                simplex[m] = zr;
                fv[m] = fr;
            }
        } else if fr < fv[m - 1] {
            simplex[m] = zr;
            fv[m] = fr;
        } else {
            let (zc, fc) = if fr < fv[m] {
                let z = along(-0.5);
                let v = eval(&z, &mut evals);
                (z, v)
            } else {
                let z = along(0.5);
                let v = eval(&z, &mut evals);
                (z, v)
            };
            if fc < fv[m].min(fr) {
                simplex[m] = zc;
                fv[m] = fc;
            } else {
                // Shrink towards the best vertex.
                for j in 1..=m {
                    let z: Vec<f64> = (0..m)
                        .map(|k| simplex[0][k] + 0.5 * (simplex[j][k] - simplex[0][k]))
                        .collect();
                    fv[j] = eval(&z, &mut evals);
                    simplex[j] = z;
                }
            }
        }
    }
    let x = embed(&simplex[0], &base);
    let converged = diam <= opts.diam_tol && fv[0].is_finite();
    Outcome {
        x,
        f: fv[0],
        converged,
        criterion: diam,
        evaluations: evals,
        failed: !fv[0].is_finite(),
    }
}
