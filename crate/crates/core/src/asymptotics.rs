//! Sandwich covariance `Σ = F⁻¹GF⁻¹`, the boundary cone and projections onto
//! it in the metric induced by `F`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{AcxError, Result};
use crate::likelihood::{self, DEFAULT_FD_EPS, HESSIAN_FD_EPS};
use crate::model::{ModelSpec, ParamSpace, Theta};
use crate::simulate::Sample;

/// `F` with a larger condition number is treated as singular.
pub const CONDITION_LIMIT: f64 = 1e8;

/// Maximum number of sign-constrained coordinates handled by exhaustive
/// active-set enumeration.
pub const MAX_ENUMERATED: usize = 12;

/// Row-major JSON form `{rows, cols, data}` for matrices.
pub mod matrix_json {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    struct Doc {
        rows: usize,
        cols: usize,
        data: Vec<f64>,
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let data = (0..m.nrows())
            .flat_map(|i| m.row(i).iter().copied().collect::<Vec<_>>())
            .collect();
        Doc {
            rows: m.nrows(),
            cols: m.ncols(),
            data,
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let doc = Doc::deserialize(d)?;
        if doc.data.len() != doc.rows * doc.cols {
            return Err(serde::de::Error::custom(format!(
                "matrix data has {} entries, expected {} x {}",
                doc.data.len(),
                doc.rows,
                doc.cols
            )));
        }
        Ok(DMatrix::from_row_slice(doc.rows, doc.cols, &doc.data))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SandwichEstimate {
    #[serde(rename = "F", with = "matrix_json")]
    pub f: DMatrix<f64>,
    #[serde(rename = "G", with = "matrix_json")]
    pub g: DMatrix<f64>,
    #[serde(rename = "Sigma", with = "matrix_json")]
    pub sigma: DMatrix<f64>,
    #[serde(rename = "condition_F")]
    pub condition_f: f64,
    /// Relative asymmetry of the raw finite-difference Hessian.
    pub asymmetry: f64,
    /// Ridge added to `F` before factorization (0 when none was needed).
    pub jitter: f64,
}

/// Ratio of the largest to the smallest absolute eigenvalue; infinite if
/// `m` is not positive definite.
pub fn condition_number(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let max = eig.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let min = eig.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Cholesky factor of `m`, adding `1e−10·trace·I` (then ×10, ×100) when the
/// plain factorization fails. Returns the factor and the ridge used.
pub fn cholesky_with_jitter(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok((c, 0.0));
    }
    let d = m.nrows();
    let trace = m.trace().abs().max(f64::MIN_POSITIVE);
    let mut ridge = 1e-10 * trace;
    for _ in 0..3 {
        let shifted = m + DMatrix::identity(d, d) * ridge;
        if let Some(c) = Cholesky::new(shifted) {
            return Ok((c, ridge));
        }
        ridge *= 10.0;
    }
    Err(AcxError::NotPositiveDefinite(format!(
        "Cholesky failed after a ridge of {:.3e}",
        ridge / 10.0
    )))
}

/// `F⁻¹GF⁻¹` by two triangular solves against the Cholesky factor of `F`.
pub fn sandwich(f: &DMatrix<f64>, g: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let (chol, jitter) = cholesky_with_jitter(f)?;
    let fg = chol.solve(g);
    let sigma = chol.solve(&fg.transpose());
    Ok((symmetrize(&sigma), jitter))
}

/// Sandwich pieces at `theta_hat`:
/// `F = n⁻¹ Σ_t ∂²q̂_t/∂θ∂θ'` and `G = n⁻¹ Σ_t (∂q̂_t/∂θ)(∂q̂_t/∂θ)'`.
pub fn estimate_sandwich(
    spec: &ModelSpec,
    space: &ParamSpace,
    sample: &Sample,
    theta_hat: &Theta,
) -> Result<SandwichEstimate> {
    let n = sample.n() as f64;
    let hess = likelihood::deviance_hessian_fd(
        spec,
        space,
        theta_hat,
        sample,
        DEFAULT_FD_EPS,
        HESSIAN_FD_EPS,
    )?;
    let f = hess.symmetrized() / n;
    let scores = likelihood::per_obs_scores(spec, space, theta_hat, sample, DEFAULT_FD_EPS)?;
    let g = symmetrize(&(scores.transpose() * &scores)) / n;
    let condition_f = condition_number(&f);
    if !(condition_f <= CONDITION_LIMIT) {
        return Err(AcxError::SingularHessian {
            condition: condition_f,
        });
    }
    let (sigma, jitter) = sandwich(&f, &g)?;
    Ok(SandwichEstimate {
        f,
        g,
        sigma,
        condition_f,
        asymmetry: hess.asymmetry,
        jitter,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeKind {
    Free,
    NonNegative,
    NonPositive,
}

/// Product cone `C = Π C_i` with each `C_i` one of ℝ, [0,∞) or (−∞,0].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cone {
    kinds: Vec<ConeKind>,
}

impl Cone {
    pub fn new(kinds: Vec<ConeKind>) -> Self {
        Self { kinds }
    }

    /// All of ℝ^d.
    pub fn free(d: usize) -> Self {
        Self::new(vec![ConeKind::Free; d])
    }

    pub fn kinds(&self) -> &[ConeKind] {
        &self.kinds
    }

    pub fn dim(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_free(&self) -> bool {
        self.kinds.iter().all(|k| *k == ConeKind::Free)
    }

    /// Indices of the sign-constrained components.
    pub fn constrained_indices(&self) -> Vec<usize> {
        (0..self.dim())
            .filter(|&i| self.kinds[i] != ConeKind::Free)
            .collect()
    }

    pub fn contains(&self, z: &[f64], tol: f64) -> bool {
        z.iter().zip(&self.kinds).all(|(v, k)| match k {
            ConeKind::Free => true,
            ConeKind::NonNegative => *v >= -tol,
            ConeKind::NonPositive => *v <= tol,
        })
    }
}

/// Cone at `theta_ref`: components in `activity` are sign-constrained
/// towards the interior from whichever bound they sit nearer to.
pub fn build_cone(space: &ParamSpace, theta_ref: &Theta, activity: &[usize]) -> Result<Cone> {
    let d = space.dim();
    if theta_ref.len() != d {
        return Err(AcxError::DimensionMismatch {
            what: "reference theta".into(),
            expected: d,
            got: theta_ref.len(),
        });
    }
    let mut kinds = vec![ConeKind::Free; d];
    for &i in activity {
        if i >= d {
            return Err(AcxError::DimensionMismatch {
                what: "activity index".into(),
                expected: d,
                got: i,
            });
        }
        if !space.constrained()[i] {
            return Err(AcxError::InvalidArgument(format!(
                "component {i} is not constrained and cannot be boundary-active"
            )));
        }
        let v = theta_ref.0[i];
        kinds[i] = if (v - space.lo()[i]).abs() <= (space.hi()[i] - v).abs() {
            ConeKind::NonNegative
        } else {
            ConeKind::NonPositive
        };
    }
    Ok(Cone::new(kinds))
}

/// One face of the cone: sign-constrained coordinates in `fixed` are zero,
/// the rest are free and equal `z_N + F_NN⁻¹F_NA z_A`.
#[derive(Debug, Clone)]
struct Face {
    fixed: Vec<usize>,
    open: Vec<usize>,
    /// `F_NN⁻¹ F_NA` (|N| × |A|).
    shift: DMatrix<f64>,
}

/// Reusable F-metric projector onto a fixed cone.
#[derive(Debug, Clone)]
pub struct ConeProjector {
    f: DMatrix<f64>,
    cone: Cone,
    faces: Option<Vec<Face>>,
    lipschitz: f64,
}

impl ConeProjector {
    pub fn new(f: &DMatrix<f64>, cone: &Cone) -> Result<Self> {
        let d = cone.dim();
        if f.nrows() != d || f.ncols() != d {
            return Err(AcxError::DimensionMismatch {
                what: "metric matrix".into(),
                expected: d,
                got: f.nrows(),
            });
        }
        if Cholesky::new(f.clone()).is_none() {
            return Err(AcxError::NotPositiveDefinite("projection metric F".into()));
        }
        let signed = cone.constrained_indices();
        let faces = if signed.len() <= MAX_ENUMERATED {
            let mut faces = Vec::with_capacity(1 << signed.len());
            for mask in 0u32..(1u32 << signed.len()) {
                let fixed: Vec<usize> = (0..signed.len())
                    .filter(|b| mask & (1 << b) != 0)
                    .map(|b| signed[b])
                    .collect();
                let open: Vec<usize> = (0..d).filter(|i| !fixed.contains(i)).collect();
                faces.push(Self::face(f, fixed, open)?);
            }
            Some(faces)
        } else {
            None
        };
        let lipschitz = SymmetricEigen::new(f.clone()).eigenvalues.max();
        Ok(Self {
            f: f.clone(),
            cone: cone.clone(),
            faces,
            lipschitz,
        })
    }

    fn face(f: &DMatrix<f64>, fixed: Vec<usize>, open: Vec<usize>) -> Result<Face> {
        let f_nn = f.select_rows(&open).select_columns(&open);
        let f_na = f.select_rows(&open).select_columns(&fixed);
        let shift = if open.is_empty() || fixed.is_empty() {
            DMatrix::zeros(open.len(), fixed.len())
        } else {
            Cholesky::new(f_nn)
                .ok_or_else(|| AcxError::NotPositiveDefinite("principal block of F".into()))?
                .solve(&f_na)
        };
        Ok(Face { fixed, open, shift })
    }

    pub fn cone(&self) -> &Cone {
        &self.cone
    }

    fn objective(&self, c: &DVector<f64>, z: &DVector<f64>) -> f64 {
        let r = c - z;
        r.dot(&(&self.f * &r))
    }

    fn face_candidate(&self, face: &Face, z: &DVector<f64>) -> DVector<f64> {
        let mut c = DVector::zeros(z.len());
        let z_a = DVector::from_iterator(face.fixed.len(), face.fixed.iter().map(|&i| z[i]));
        let moved = &face.shift * z_a;
        for (k, &i) in face.open.iter().enumerate() {
            c[i] = z[i] + moved[k];
        }
        c
    }

    /// `argmin_{c ∈ C} (c − z)'F(c − z)`.
    pub fn project(&self, z: &[f64]) -> Vec<f64> {
        let zv = DVector::from_column_slice(z);
        if self.cone.is_free() {
            return z.to_vec();
        }
        if self.cone.contains(z, 0.0) {
            return z.to_vec();
        }
        match &self.faces {
            Some(faces) => {
                let mut best: Option<(f64, DVector<f64>)> = None;
                for face in faces {
                    let c = self.face_candidate(face, &zv);
                    if !self.cone.contains(c.as_slice(), 0.0) {
                        continue;
                    }
                    let v = self.objective(&c, &zv);
                    if best.as_ref().is_none_or(|(b, _)| v < *b) {
                        best = Some((v, c));
                    }
                }
                // The face holding the true projection is always feasible.
                best.expect("the all-fixed face is always feasible")
                    .1
                    .as_slice()
                    .to_vec()
            }
            None => self.project_iterative(&zv),
        }
    }

    fn clip(&self, c: &mut DVector<f64>) {
        for (v, k) in c.iter_mut().zip(self.cone.kinds()) {
            match k {
                ConeKind::Free => {}
                ConeKind::NonNegative => *v = v.max(0.0),
                ConeKind::NonPositive => *v = v.min(0.0),
            }
        }
    }

    /// Projected gradient followed by an exact solve on the detected face.
    fn project_iterative(&self, z: &DVector<f64>) -> Vec<f64> {
        let step = 1.0 / self.lipschitz;
        let mut c = z.clone();
        self.clip(&mut c);
        for _ in 0..20_000 {
            let grad = &self.f * (&c - z);
            let mut next = &c - grad * step;
            self.clip(&mut next);
            let moved = (&next - &c).amax();
            c = next;
            if moved <= 1e-14 * (1.0 + z.amax()) {
                break;
            }
        }
        // Polish: re-solve exactly on the face where the iterate landed.
        let d = z.len();
        let fixed: Vec<usize> = self
            .cone
            .constrained_indices()
            .into_iter()
            .filter(|&i| c[i] == 0.0)
            .collect();
        let open: Vec<usize> = (0..d).filter(|i| !fixed.contains(i)).collect();
        if let Ok(face) = Self::face(&self.f, fixed, open) {
            let polished = self.face_candidate(&face, z);
            if self.cone.contains(polished.as_slice(), 0.0)
                && self.objective(&polished, z) <= self.objective(&c, z)
            {
                return polished.as_slice().to_vec();
            }
        }
        c.as_slice().to_vec()
    }
}

/// One-off F-metric projection of `z` onto `cone`.
pub fn cone_project(z: &[f64], f: &DMatrix<f64>, cone: &Cone) -> Result<Vec<f64>> {
    if z.len() != cone.dim() {
        return Err(AcxError::DimensionMismatch {
            what: "vector to project".into(),
            expected: cone.dim(),
            got: z.len(),
        });
    }
    Ok(ConeProjector::new(f, cone)?.project(z))
}
