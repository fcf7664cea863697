use std::fmt;
use std::str::FromStr;

use ndarray::{Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::geometry::{warp_plane, Affine2};
use crate::{RegadError, Result};

/// Smallest admissible `|det L|` for a predicted transform.
pub const DET_FLOOR: f64 = 1e-3;
/// Largest admissible shear coefficient; keeps `1 - shx·shy` above [`DET_FLOOR`].
pub const SHEAR_LIMIT: f64 = 0.95;

/// Which transformation family the spatial transformer may predict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StnMode {
    None,
    Translation,
    Rotation,
    Scale,
    Shear,
    RotationScale,
    TranslationScale,
    TranslationRotation,
    TranslationRotationScale,
    Affine,
}

impl StnMode {
    pub const ALL: [StnMode; 10] = [
        StnMode::None,
        StnMode::Translation,
        StnMode::Rotation,
        StnMode::Scale,
        StnMode::Shear,
        StnMode::RotationScale,
        StnMode::TranslationScale,
        StnMode::TranslationRotation,
        StnMode::TranslationRotationScale,
        StnMode::Affine,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StnMode::None => "none",
            StnMode::Translation => "translation",
            StnMode::Rotation => "rotation",
            StnMode::Scale => "scale",
            StnMode::Shear => "shear",
            StnMode::RotationScale => "rotation_scale",
            StnMode::TranslationScale => "translation_scale",
            StnMode::TranslationRotation => "translation_rotation",
            StnMode::TranslationRotationScale => "translation_rotation_scale",
            StnMode::Affine => "affine",
        }
    }

    /// Number of regressed parameters.
    pub fn n_params(self) -> usize {
        match self {
            StnMode::None => 0,
            StnMode::Rotation | StnMode::Scale => 1,
            StnMode::Translation | StnMode::Shear | StnMode::RotationScale => 2,
            StnMode::TranslationScale | StnMode::TranslationRotation => 3,
            StnMode::TranslationRotationScale => 4,
            StnMode::Affine => 6,
        }
    }

    /// Parameter vector that maps to the identity transform.
    pub fn identity_params(self) -> Vec<f64> {
        match self {
            StnMode::None => vec![],
            StnMode::Translation => vec![0.0, 0.0],
            StnMode::Rotation => vec![0.0],
            StnMode::Scale => vec![1.0],
            StnMode::Shear => vec![0.0, 0.0],
            StnMode::RotationScale => vec![1.0, 0.0],
            StnMode::TranslationScale => vec![1.0, 0.0, 0.0],
            StnMode::TranslationRotation => vec![0.0, 0.0, 0.0],
            StnMode::TranslationRotationScale => vec![1.0, 0.0, 0.0, 0.0],
            StnMode::Affine => vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        }
    }

    /// Scalar mirror of the differentiable parametrization in the STN head.
    /// Parameter order: `s` (scale), `phi` (radians), `tx`, `ty`; shear is
    /// `(shx, shy)`; affine is the row-major 2×3 matrix.
    pub fn theta_from_params(self, p: &[f64]) -> Affine2 {
        assert_eq!(p.len(), self.n_params(), "wrong parameter count for {self}");
        let scale = |s: f64| s.max(DET_FLOOR.sqrt());
        let sim = |s: f64, phi: f64, tx: f64, ty: f64| {
            let (sn, cs) = phi.sin_cos();
            Affine2([[s * cs, -s * sn, tx], [s * sn, s * cs, ty]])
        };
        match self {
            StnMode::None => Affine2::IDENTITY,
            StnMode::Translation => Affine2::translation(p[0], p[1]),
            StnMode::Rotation => sim(1.0, p[0], 0.0, 0.0),
            StnMode::Scale => sim(scale(p[0]), 0.0, 0.0, 0.0),
            StnMode::Shear => {
                let (a, b) = (
                    p[0].clamp(-SHEAR_LIMIT, SHEAR_LIMIT),
                    p[1].clamp(-SHEAR_LIMIT, SHEAR_LIMIT),
                );
                Affine2([[1.0, a, 0.0], [b, 1.0, 0.0]])
            }
            StnMode::RotationScale => sim(scale(p[0]), p[1], 0.0, 0.0),
            StnMode::TranslationScale => sim(scale(p[0]), 0.0, p[1], p[2]),
            StnMode::TranslationRotation => sim(1.0, p[0], p[1], p[2]),
            StnMode::TranslationRotationScale => sim(scale(p[0]), p[1], p[2], p[3]),
            StnMode::Affine => floor_determinant(Affine2([[p[0], p[1], p[2]], [p[3], p[4], p[5]]])),
        }
    }

    /// Nearest transform (least squares on the linear part) satisfying the
    /// mode's constraint.
    pub fn project(self, theta: &Affine2) -> Affine2 {
        let m = &theta.0;
        let (tx, ty) = (m[0][2], m[1][2]);
        let a = (m[0][0] + m[1][1]) / 2.0;
        let b = (m[1][0] - m[0][1]) / 2.0;
        let sim_s = (a * a + b * b).sqrt();
        let phi = b.atan2(a);
        let p = match self {
            StnMode::None => vec![],
            StnMode::Translation => vec![tx, ty],
            StnMode::Rotation => vec![phi],
            StnMode::Scale => vec![a],
            StnMode::Shear => vec![m[0][1], m[1][0]],
            StnMode::RotationScale => vec![sim_s, phi],
            StnMode::TranslationScale => vec![a, tx, ty],
            StnMode::TranslationRotation => vec![phi, tx, ty],
            StnMode::TranslationRotationScale => vec![sim_s, phi, tx, ty],
            StnMode::Affine => vec![m[0][0], m[0][1], tx, m[1][0], m[1][1], ty],
        };
        self.theta_from_params(&p)
    }

    pub fn satisfies(self, theta: &Affine2, tol: f64) -> bool {
        self.project(theta).max_abs_diff(theta) <= tol
    }
}

impl fmt::Display for StnMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StnMode {
    type Err = RegadError;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace(['-', '+'], "_");
        StnMode::ALL
            .into_iter()
            .find(|m| m.as_str() == norm)
            .ok_or_else(|| RegadError::Config(format!("unknown STN mode `{s}`")))
    }
}

/// Rescales the linear part so that `|det L| >= DET_FLOOR`.
pub fn floor_determinant(theta: Affine2) -> Affine2 {
    let det = theta.det();
    if det.abs() >= DET_FLOOR {
        return theta;
    }
    let mut out = theta;
    if det == 0.0 {
        let bump = DET_FLOOR.sqrt();
        out.0[0][0] += bump;
        out.0[1][1] += bump;
        if out.det().abs() >= DET_FLOOR {
            return out;
        }
        return Affine2([[bump, 0.0, theta.0[0][2]], [0.0, bump, theta.0[1][2]]]);
    }
    let k = (DET_FLOOR / det.abs()).sqrt();
    for row in out.0.iter_mut() {
        row[0] *= k;
        row[1] *= k;
    }
    out
}

/// A predicted spatial transform together with the family it was drawn from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AffineParams {
    pub theta: Affine2,
    pub mode: StnMode,
}

impl AffineParams {
    pub fn identity(mode: StnMode) -> Self {
        AffineParams {
            theta: Affine2::IDENTITY,
            mode,
        }
    }

    /// Validates the mode constraint and the determinant floor.
    pub fn new(theta: Affine2, mode: StnMode) -> Result<Self> {
        if mode != StnMode::Affine && !mode.satisfies(&theta, 1e-6) {
            return Err(RegadError::InvalidInput(format!(
                "{theta:?} violates the {mode} constraint"
            )));
        }
        let det = theta.det();
        if det.abs() < DET_FLOOR {
            return Err(RegadError::Singular {
                det,
                floor: DET_FLOOR,
            });
        }
        Ok(AffineParams { theta, mode })
    }

    /// `(s, φ)` such that the linear part is `s·R(φ)`, for similarity modes.
    pub fn similarity_factors(&self) -> (f64, f64) {
        let m = &self.theta.0;
        let a = (m[0][0] + m[1][1]) / 2.0;
        let b = (m[1][0] - m[0][1]) / 2.0;
        ((a * a + b * b).sqrt(), b.atan2(a))
    }
}

impl Default for AffineParams {
    fn default() -> Self {
        AffineParams::identity(StnMode::None)
    }
}

/// `[L⁻¹ | −L⁻¹ t]`.
pub fn invert_affine(params: &AffineParams) -> Result<AffineParams> {
    let inv = params.theta.inverse(DET_FLOOR).ok_or(RegadError::Singular {
        det: params.theta.det(),
        floor: DET_FLOOR,
    })?;
    Ok(AffineParams {
        theta: inv,
        mode: params.mode,
    })
}

/// Resamples a `C×H×W` map through `params` (bilinear, zero outside).
pub fn apply_affine(map: &Array3<f64>, params: &AffineParams) -> Result<Array3<f64>> {
    if params.theta.det().abs() < DET_FLOOR {
        return Err(RegadError::Singular {
            det: params.theta.det(),
            floor: DET_FLOOR,
        });
    }
    let mut out = Array3::zeros(map.dim());
    for (src, mut dst) in map.axis_iter(Axis(0)).zip(out.axis_iter_mut(Axis(0))) {
        dst.assign(&warp_plane(src, &params.theta));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::s;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> Array3<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array3::from_shape_fn((c, h, w), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_is_preserved_by_every_mode() {
        for mode in StnMode::ALL {
            assert_eq!(
                mode.theta_from_params(&mode.identity_params()),
                Affine2::IDENTITY,
                "{mode}"
            );
            assert_eq!(mode.project(&Affine2::IDENTITY), Affine2::IDENTITY, "{mode}");
        }
    }

    #[test]
    fn translation_mode_keeps_identity_linear_part() {
        let theta = StnMode::Translation.project(&Affine2([[1.7, 0.3, 0.2], [-0.4, 0.6, -0.1]]));
        assert_eq!(theta.linear(), [[1.0, 0.0], [0.0, 1.0]]);
        assert_eq!((theta.0[0][2], theta.0[1][2]), (0.2, -0.1));
    }

    #[test]
    fn rotation_scale_factorizes() {
        let theta = StnMode::RotationScale.theta_from_params(&[1.3, 0.4]);
        let p = AffineParams::new(theta, StnMode::RotationScale).unwrap();
        let (s, phi) = p.similarity_factors();
        let (sn, cs) = phi.sin_cos();
        let rebuilt = [[s * cs, -s * sn], [s * sn, s * cs]];
        let lin = theta.linear();
        for r in 0..2 {
            for c in 0..2 {
                assert!((rebuilt[r][c] - lin[r][c]).abs() < 1e-6);
            }
        }
        assert!((s - 1.3).abs() < 1e-12 && (phi - 0.4).abs() < 1e-12);
    }

    #[test]
    fn mode_constraint_is_checked() {
        let shear = Affine2([[1.0, 0.3, 0.0], [0.0, 1.0, 0.0]]);
        assert!(AffineParams::new(shear, StnMode::Rotation).is_err());
        assert!(AffineParams::new(shear, StnMode::Shear).is_ok());
    }

    #[test]
    fn determinant_floor_holds_for_every_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for mode in StnMode::ALL {
            for _ in 0..200 {
                let p: Vec<f64> = (0..mode.n_params()).map(|_| rng.random_range(-3.0..3.0)).collect();
                let det = mode.theta_from_params(&p).det().abs();
                assert!(det >= DET_FLOOR * (1.0 - 1e-12), "{mode}: {det}");
            }
        }
        let collapsed = StnMode::Affine.theta_from_params(&[0.0; 6]);
        assert!(collapsed.det().abs() >= DET_FLOOR * (1.0 - 1e-12));
    }

    #[test]
    fn analytic_inverses() {
        let id = AffineParams::identity(StnMode::Affine);
        assert_eq!(invert_affine(&id).unwrap().theta, Affine2::IDENTITY);
        let twice = AffineParams::new(Affine2([[2.0, 0.0, 0.0], [0.0, 2.0, 0.0]]), StnMode::Scale).unwrap();
        assert_eq!(
            invert_affine(&twice).unwrap().theta,
            Affine2([[0.5, 0.0, 0.0], [0.0, 0.5, 0.0]])
        );
    }

    #[test]
    fn singular_params_are_rejected() {
        let p = AffineParams {
            theta: Affine2([[1e-3, 0.0, 0.0], [0.0, 1e-3, 0.0]]),
            mode: StnMode::Affine,
        };
        assert!(matches!(invert_affine(&p), Err(RegadError::Singular { .. })));
        assert!(apply_affine(&random_map(1, 4, 4, 0), &p).is_err());
    }

    #[test]
    fn identity_apply_is_bitwise() {
        let m = random_map(3, 8, 8, 1);
        let out = apply_affine(&m, &AffineParams::identity(StnMode::Affine)).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn one_cell_translation_shifts_indices() {
        let m = random_map(2, 8, 8, 2);
        // Sampling at x + one cell moves content one column to the left.
        let p = AffineParams::new(Affine2::translation(2.0 / 8.0, 0.0), StnMode::Translation).unwrap();
        let out = apply_affine(&m, &p).unwrap();
        assert_eq!(out.slice(s![.., .., ..7]), m.slice(s![.., .., 1..]));
        assert!(out.slice(s![.., .., 7]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn double_half_turn_round_trips() {
        let m = random_map(3, 8, 8, 3);
        let half = StnMode::Rotation.theta_from_params(&[std::f64::consts::PI]);
        let p = AffineParams::new(half, StnMode::Rotation).unwrap();
        let twice = apply_affine(&apply_affine(&m, &p).unwrap(), &p).unwrap();
        let interior = s![.., 1..7, 1..7];
        let mae = (&twice.slice(interior) - &m.slice(interior)).mapv(f64::abs).mean().unwrap();
        assert!(mae <= 1e-5, "mae {mae}");
    }

    #[test]
    fn shape_is_preserved() {
        let m = random_map(2, 5, 9, 4);
        let p = AffineParams::new(StnMode::Affine.theta_from_params(&[0.9, 0.2, 0.1, -0.3, 1.1, 0.0]), StnMode::Affine).unwrap();
        assert_eq!(apply_affine(&m, &p).unwrap().dim(), (2, 5, 9));
    }
}
