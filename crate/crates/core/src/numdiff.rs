//! Finite-difference derivatives inside a box.
//!
//! Each coordinate gets a step `h_i = ε·max(1, |x_i|)`. Central differences
//! are used when `x_i ± (h_i + reserve_i)` stays inside the box, otherwise a
//! one-sided difference towards the interior. `reserve_i` lets a nested
//! difference (a Hessian built from differenced scores) keep room for its
//! inner step.

use crate::error::{AcxError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    Central,
    Forward,
    Backward,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub scheme: Scheme,
    pub h: f64,
}

/// Step plan for the coordinates flagged in `active`; inactive ones get `None`.
pub fn plan_steps(
    x: &[f64],
    lo: &[f64],
    hi: &[f64],
    active: &[bool],
    eps: f64,
    reserve: Option<&[f64]>,
) -> Result<Vec<Option<Step>>> {
    x.iter()
        .enumerate()
        .map(|(i, &xi)| {
            if !active[i] {
                return Ok(None);
            }
            let h = eps * xi.abs().max(1.0);
            let extra = reserve.map_or(0.0, |r| r[i]);
            let up = xi + h + extra <= hi[i];
            let down = xi - h - extra >= lo[i];
            let scheme = match (down, up) {
                (true, true) => Scheme::Central,
                (false, true) => Scheme::Forward,
                (true, false) => Scheme::Backward,
                (false, false) => return Err(AcxError::BoxTooTight { component: i }),
            };
            Ok(Some(Step { scheme, h }))
        })
        .collect()
}

/// Finite-difference gradient of a scalar function.
pub fn gradient<F>(mut f: F, x: &[f64], plan: &[Option<Step>]) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let f0 = if plan.iter().flatten().any(|s| s.scheme != Scheme::Central) {
        Some(f(x)?)
    } else {
        None
    };
    let mut xs = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for (i, step) in plan.iter().enumerate() {
        let Some(step) = step else { continue };
        let xi = x[i];
        let (plus, minus) = (xi + step.h, xi - step.h);
        g[i] = match step.scheme {
            Scheme::Central => {
                xs[i] = plus;
                let fp = f(&xs)?;
                xs[i] = minus;
                let fm = f(&xs)?;
                (fp - fm) / (plus - minus)
            }
            Scheme::Forward => {
                xs[i] = plus;
                (f(&xs)? - f0.unwrap()) / (plus - xi)
            }
            Scheme::Backward => {
                xs[i] = minus;
                (f0.unwrap() - f(&xs)?) / (xi - minus)
            }
        };
        xs[i] = xi;
    }
    Ok(g)
}

/// Finite-difference Jacobian of a vector function; entry `[k][i]` is
/// `∂f_k/∂x_i` (rows indexed by output).
pub fn jacobian<F>(mut f: F, x: &[f64], m: usize, plan: &[Option<Step>]) -> Result<Vec<Vec<f64>>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let f0 = if plan.iter().flatten().any(|s| s.scheme != Scheme::Central) {
        Some(f(x)?)
    } else {
        None
    };
    let mut xs = x.to_vec();
    let mut jac = vec![vec![0.0; x.len()]; m];
    for (i, step) in plan.iter().enumerate() {
        let Some(step) = step else { continue };
        let xi = x[i];
        let (plus, minus) = (xi + step.h, xi - step.h);
        let (fa, fb, span) = match step.scheme {
            Scheme::Central => {
                xs[i] = plus;
                let fp = f(&xs)?;
                xs[i] = minus;
                (fp, f(&xs)?, plus - minus)
            }
            Scheme::Forward => {
                xs[i] = plus;
                (f(&xs)?, f0.clone().unwrap(), plus - xi)
            }
            Scheme::Backward => {
                xs[i] = minus;
                (f0.clone().unwrap(), f(&xs)?, xi - minus)
            }
        };
        for k in 0..m {
            jac[k][i] = (fa[k] - fb[k]) / span;
        }
        xs[i] = xi;
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_form_gradient() {
        // f(x) = x'Ax, ∇f = 2Ax for symmetric A.
        let a = [[2.0, 0.5, -0.3], [0.5, 1.0, 0.2], [-0.3, 0.2, 3.0]];
        let f = |x: &[f64]| -> Result<f64> {
            let mut s = 0.0;
            for i in 0..3 {
                for j in 0..3 {
                    s += x[i] * a[i][j] * x[j];
                }
            }
            Ok(s)
        };
        let x = [0.7, -1.3, 2.1];
        let plan = plan_steps(&x, &[-10.0; 3], &[10.0; 3], &[true; 3], 1e-6, None).unwrap();
        let g = gradient(f, &x, &plan).unwrap();
        for i in 0..3 {
            let want: f64 = 2.0 * (0..3).map(|j| a[i][j] * x[j]).sum::<f64>();
            assert!(
                (g[i] - want).abs() <= 1e-6 * want.abs().max(1.0),
                "{i}: {} vs {want}",
                g[i]
            );
        }
    }

    #[test]
    fn one_sided_at_bounds() {
        let x = [0.0, 1.0, 0.5];
        let plan = plan_steps(
            &x,
            &[0.0, 0.0, 0.0],
            &[1.0, 1.0, 1.0],
            &[true, true, false],
            1e-6,
            None,
        )
        .unwrap();
        assert_eq!(plan[0].unwrap().scheme, Scheme::Forward);
        assert_eq!(plan[1].unwrap().scheme, Scheme::Backward);
        assert!(plan[2].is_none());
        let g = gradient(|x| Ok(3.0 * x[0] - 2.0 * x[1]), &x, &plan).unwrap();
        assert!((g[0] - 3.0).abs() < 1e-8);
        assert!((g[1] + 2.0).abs() < 1e-8);
        assert_eq!(g[2], 0.0);
    }

    #[test]
    fn collapsed_box_is_too_tight() {
        let err = plan_steps(&[0.3], &[0.3], &[0.3], &[true], 1e-6, None).unwrap_err();
        assert!(matches!(err, AcxError::BoxTooTight { component: 0 }));
    }

    #[test]
    fn jacobian_of_linear_map() {
        let x = [1.0, 2.0];
        let plan = plan_steps(&x, &[-5.0; 2], &[5.0; 2], &[true; 2], 1e-5, None).unwrap();
        let j = jacobian(|x| Ok(vec![x[0] + 2.0 * x[1], 3.0 * x[0]]), &x, 2, &plan).unwrap();
        assert!((j[0][0] - 1.0).abs() < 1e-9 && (j[0][1] - 2.0).abs() < 1e-9);
        assert!((j[1][0] - 3.0).abs() < 1e-9 && j[1][1].abs() < 1e-9);
    }
}
