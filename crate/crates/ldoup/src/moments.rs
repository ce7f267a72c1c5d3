//! Closed-form moments, covariances and autocorrelation of the innovation
//! term and the stationary law; used for grid sizing, constraint solving and
//! validation.

use crate::params::{LdoupModel, ModelKind, WvagParams};
use nalgebra::{DMatrix, DVector};

/// Central moments per coordinate plus the cross covariance of one law.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentSet {
    pub m1: DVector<f64>,
    pub m2: DVector<f64>,
    pub m3: DVector<f64>,
    pub m4: DVector<f64>,
    pub cross_cov: DMatrix<f64>,
    /// gamma_k = (e^{k lambda Delta} - 1)/k for k = 1..4.
    pub gamma: [f64; 4],
}

/// The scalars gamma_k = (e^{k lambda Delta} - 1)/k linking moments of Z(1)
/// to moments of Z*(Delta).
pub fn gammas(lambda: f64, delta: f64) -> [f64; 4] {
    let ld = lambda * delta;
    [
        ld.exp() - 1.0,
        ((2.0 * ld).exp() - 1.0) / 2.0,
        ((3.0 * ld).exp() - 1.0) / 3.0,
        ((4.0 * ld).exp() - 1.0) / 4.0,
    ]
}

/// Central moments m1..m4 of the VG^1(b, mu, sigma2) law at unit time.
pub fn vg_unit_moments(b: f64, mu: f64, sigma2: f64) -> [f64; 4] {
    let nu = 1.0 / b;
    [
        mu,
        sigma2 + mu * mu * nu,
        2.0 * mu.powi(3) * nu * nu + 3.0 * mu * sigma2 * nu,
        3.0 * sigma2 * sigma2 * (1.0 + nu)
            + 6.0 * sigma2 * mu * mu * nu * (1.0 + 2.0 * nu)
            + 3.0 * mu.powi(4) * nu * nu * (1.0 + 2.0 * nu),
    ]
}

/// Central moments and cross covariance of W(1) for W ~ WVAG^n, from the
/// explicit representation as a sum of independent VG parts plus drift.
pub fn wvag_unit_moments(p: &WvagParams) -> MomentSet {
    let n = p.n();
    let a = p.a();
    let mut m1 = DVector::zeros(n);
    let mut m2 = DVector::zeros(n);
    let mut m3 = DVector::zeros(n);
    let mut m4 = DVector::zeros(n);
    for k in 0..n {
        let (al, be) = (p.alpha()[k], p.betas()[k]);
        let (mk, sk) = (p.mu()[k], p.sigma()[(k, k)]);
        let common = vg_unit_moments(a, a * al * mk, a * al * sk);
        let idio = vg_unit_moments(be, al * be * mk, al * be * sk);
        m1[k] = p.eta()[k] + common[0] + idio[0];
        m2[k] = common[1] + idio[1];
        m3[k] = common[2] + idio[2];
        // fourth central moment of an independent sum
        m4[k] = common[3] + 6.0 * common[1] * idio[1] + idio[3];
    }
    // Only the common part couples coordinates:
    // Cov = a ((alpha_k ^ alpha_l) Sigma_kl + alpha_k alpha_l mu_k mu_l).
    let cross_cov = DMatrix::from_fn(n, n, |k, l| {
        if k == l {
            m2[k]
        } else {
            a * (p.alpha()[k].min(p.alpha()[l]) * p.sigma()[(k, l)]
                + p.alpha()[k] * p.alpha()[l] * p.mu()[k] * p.mu()[l])
        }
    });
    MomentSet {
        m1,
        m2,
        m3,
        m4,
        cross_cov,
        gamma: [0.0; 4],
    }
}

/// Innovation moments of a WVAG-OU model, in closed form.
pub fn zstar_moments_wvagou(model: &LdoupModel) -> MomentSet {
    assert_eq!(model.kind(), ModelKind::WvagOu);
    let p = model.wvag();
    let n = p.n();
    let g = gammas(model.lambda(), model.delta());
    let m1 = DVector::from_fn(n, |k, _| g[0] * p.eta()[k]);
    let m2 = DVector::from_fn(n, |k, _| 2.0 * g[1] * p.sigma()[(k, k)]);
    let m3 = DVector::zeros(n);
    let m4 = DVector::from_fn(n, |k, _| {
        12.0 * p.sigma()[(k, k)].powi(2) * (g[3] * (p.alpha()[k] + 1.0) - g[1])
    });
    let cross_cov = DMatrix::from_fn(n, n, |k, l| {
        if k == l {
            m2[k]
        } else {
            2.0 * g[1] * p.alpha()[k].min(p.alpha()[l]) * p.sigma()[(k, l)]
        }
    });
    MomentSet {
        m1,
        m2,
        m3,
        m4,
        cross_cov,
        gamma: g,
    }
}

/// Innovation moments of an OU-WVAG model: WVAG(1) moments scaled by gamma,
/// with the usual cumulant correction in the fourth moment.
pub fn zstar_moments_ouwvag(model: &LdoupModel) -> MomentSet {
    assert_eq!(model.kind(), ModelKind::OuWvag);
    let w = wvag_unit_moments(model.wvag());
    let g = gammas(model.lambda(), model.delta());
    let n = model.n();
    let m1 = &w.m1 * g[0];
    let m2 = &w.m2 * g[1];
    let m3 = &w.m3 * g[2];
    let m4 = DVector::from_fn(n, |k, _| g[3] * w.m4[k] - 3.0 * g[1] * w.m2[k] * w.m2[k]);
    let cross_cov = DMatrix::from_fn(n, n, |k, l| {
        if k == l {
            m2[k]
        } else {
            g[1] * w.cross_cov[(k, l)]
        }
    });
    MomentSet {
        m1,
        m2,
        m3,
        m4,
        cross_cov,
        gamma: g,
    }
}

/// Innovation moments for either model kind.
pub fn zstar_moments(model: &LdoupModel) -> MomentSet {
    match model.kind() {
        ModelKind::WvagOu => zstar_moments_wvagou(model),
        ModelKind::OuWvag => zstar_moments_ouwvag(model),
    }
}

/// Covariance matrix of the stationary law X(t).
pub fn stationary_cov(model: &LdoupModel) -> DMatrix<f64> {
    let w = wvag_unit_moments(model.wvag());
    match model.kind() {
        ModelKind::WvagOu => w.cross_cov,
        ModelKind::OuWvag => w.cross_cov * 0.5,
    }
}

/// Mean of the stationary law X(t).
pub fn stationary_mean(model: &LdoupModel) -> DVector<f64> {
    let w = wvag_unit_moments(model.wvag());
    match model.kind() {
        ModelKind::WvagOu => w.m1,
        // Y has exponent int_0^inf Psi_Z(e^{-t} theta) dt, so E[Y] = E[Z(1)].
        ModelKind::OuWvag => w.m1,
    }
}

/// Autocorrelation of every marginal component at lag t.
pub fn acf(model: &LdoupModel, t: f64) -> f64 {
    (-model.lambda() * t).exp()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charfn::wvagou_zstar_psi;
    use crate::params::{LdoupModel, ModelKind, WvagParams};
    use approx::assert_relative_eq;

    fn paper_wvagou() -> LdoupModel {
        let p = WvagParams::from_slices(
            1.0,
            &[0.9, 0.5],
            &[0.0, 0.0],
            &[vec![0.18, 0.09], vec![0.09, 0.08]],
            &[-0.06, 0.0],
        )
        .unwrap();
        LdoupModel::new(ModelKind::WvagOu, 0.5, p, 1.0).unwrap()
    }

    fn paper_ouwvag() -> LdoupModel {
        let p = WvagParams::from_slices(
            1.0,
            &[0.9, 0.5],
            &[0.15, -0.06],
            &[vec![0.18, 0.09], vec![0.09, 0.08]],
            &[-0.06, 0.0],
        )
        .unwrap();
        LdoupModel::new(ModelKind::OuWvag, 0.5, p, 1.0).unwrap()
    }

    fn round4(x: f64) -> f64 {
        (x * 1e4).round() / 1e4
    }

    #[test]
    fn wvagou_innovation_moments_match_reference_table() {
        let ms = zstar_moments_wvagou(&paper_wvagou());
        assert_eq!(round4(ms.m2[0]), 0.3093);
        assert_eq!(round4(ms.m4[0]), 0.8459);
        assert_eq!(round4(ms.m2[1]), 0.1375);
        assert_eq!(round4(ms.m4[1]), 0.1180);
        assert_eq!(round4(ms.cross_cov[(0, 1)]), 0.0773);
        assert_eq!(ms.m3[0], 0.0);
        assert_eq!(ms.m3[1], 0.0);
    }

    #[test]
    fn ouwvag_innovation_moments_match_reference_table() {
        let ms = zstar_moments_ouwvag(&paper_ouwvag());
        assert_eq!(round4(ms.m1[0]), 0.0584);
        assert_eq!(round4(ms.m2[0]), 0.1720);
        assert_eq!(round4(ms.m3[0]), 0.0910);
        assert_eq!(round4(ms.m4[0]), 0.2949);
        assert_eq!(round4(ms.m1[1]), -0.0389);
        assert_eq!(round4(ms.m2[1]), 0.0703);
        assert_eq!(round4(ms.m3[1]), -0.0085);
        assert_eq!(round4(ms.m4[1]), 0.0315);
        assert_eq!(round4(ms.cross_cov[(0, 1)]), 0.0352);
    }

    #[test]
    fn stationary_covariance_matches_reference_table() {
        assert_eq!(round4(stationary_cov(&paper_wvagou())[(0, 1)]), 0.0450);
        assert_eq!(round4(stationary_cov(&paper_ouwvag())[(0, 1)]), 0.0205);
    }

    #[test]
    fn stationary_cov_vanishes_without_coupling() {
        let p = WvagParams::from_slices(
            1.0,
            &[0.9, 0.5],
            &[0.0, 0.0],
            &[vec![0.18, 0.0], vec![0.0, 0.08]],
            &[0.0, 0.0],
        )
        .unwrap();
        let m = LdoupModel::new(ModelKind::WvagOu, 0.5, p, 1.0).unwrap();
        assert_eq!(stationary_cov(&m)[(0, 1)], 0.0);
    }

    #[test]
    fn zero_eta_gives_zero_innovation_mean() {
        let p = WvagParams::from_slices(
            1.0,
            &[0.9, 0.5],
            &[0.0, 0.0],
            &[vec![0.18, 0.09], vec![0.09, 0.08]],
            &[0.0, 0.0],
        )
        .unwrap();
        let m = LdoupModel::new(ModelKind::WvagOu, 0.5, p, 1.0).unwrap();
        assert_eq!(zstar_moments(&m).m1, DVector::zeros(2));
    }

    #[test]
    fn all_moments_vanish_as_delta_shrinks() {
        let m = paper_wvagou().with_delta(1e-9).unwrap();
        let ms = zstar_moments(&m);
        assert!(ms.m1.norm() < 1e-9);
        assert!(ms.m2.norm() < 1e-8);
        assert!(ms.m4.norm() < 1e-8);
    }

    #[test]
    fn symmetric_law_has_zero_odd_moments() {
        let p = WvagParams::from_slices(
            1.0,
            &[0.9, 0.5],
            &[0.0, 0.0],
            &[vec![0.18, 0.09], vec![0.09, 0.08]],
            &[0.0, 0.0],
        )
        .unwrap();
        let m = LdoupModel::new(ModelKind::OuWvag, 0.5, p, 1.0).unwrap();
        let ms = zstar_moments_ouwvag(&m);
        assert!(ms.m1.norm() < 1e-15);
        assert!(ms.m3.norm() < 1e-15);
    }

    #[test]
    fn second_moment_ties_to_characteristic_exponent() {
        // m2 = - d^2/dtheta^2 Re Psi_{Z*} at 0 by central differences.
        let m = paper_wvagou();
        let ms = zstar_moments_wvagou(&m);
        let h = 1e-4;
        for k in 0..2 {
            let mut tp = [0.0, 0.0];
            tp[k] = h;
            let mut tm = [0.0, 0.0];
            tm[k] = -h;
            let second = (wvagou_zstar_psi(&m, &tp).re - 2.0 * wvagou_zstar_psi(&m, &[0.0, 0.0]).re
                + wvagou_zstar_psi(&m, &tm).re)
                / (h * h);
            assert_relative_eq!(-second, ms.m2[k], max_relative = 1e-5);
        }
    }

    #[test]
    fn acf_is_exponential_decay() {
        let m = paper_wvagou();
        assert_eq!(acf(&m, 0.0), 1.0);
        assert_relative_eq!(acf(&m, 1.0), (-0.5f64).exp());
        assert!(acf(&m, 1e6) < 1e-300);
    }

    #[test]
    fn gammas_match_direct_evaluation() {
        let g = gammas(0.5, 1.0);
        assert_relative_eq!(g[0], 0.5f64.exp() - 1.0);
        assert_relative_eq!(g[1], (1f64.exp() - 1.0) / 2.0);
        assert_relative_eq!(g[2], (1.5f64.exp() - 1.0) / 3.0);
        assert_relative_eq!(g[3], (2f64.exp() - 1.0) / 4.0);
    }
}
