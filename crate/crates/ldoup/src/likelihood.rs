//! Log-likelihood evaluation: the WVAG-OU mixture case, marginal VG-OU
//! components, and the general absolutely-continuous case.

use crate::charfn::{self, MixtureProbs};
use crate::fourier::{self, DensityGrid, FourierSpec, EPS_FLOOR};
use crate::moments;
use crate::params::{LdoupModel, ModelKind, ObservationSet};
use nalgebra::DVector;
use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LikelihoodError {
    #[error("mixture likelihood supports n = 2 only, got n = {0}")]
    DimensionUnsupported(usize),
    #[error("fourier: {0}")]
    Fourier(#[from] fourier::FourierError),
    #[error("charfn: {0}")]
    CharFn(#[from] charfn::CharFnError),
    #[error("params: {0}")]
    Params(#[from] crate::params::ParamErrors),
}

/// The four-part mixture of the WVAG-OU innovation: an atom at zeta, two
/// axis laws and a planar law.
#[derive(Debug, Clone)]
pub struct InnovationMixture {
    pub zeta: DVector<f64>,
    pub p: f64,
    pub p1: f64,
    pub p2: f64,
    pub p0: f64,
    pub f1: DensityGrid,
    pub f2: DensityGrid,
    pub f0: DensityGrid,
}

/// Log-likelihood value with branch diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogLik {
    pub value: f64,
    pub n_atom_hits: usize,
    pub n_axis_hits: [usize; 2],
    pub n_floor_hits: usize,
}

/// Grid geometry for the mixture densities, defaulting to N = 2^13,
/// h = 2^-7 sqrt(m2) in 1D and N = 2^10, h = 2^-5 sqrt(m2) in 2D.
#[derive(Debug, Clone)]
pub struct MixtureGeometry {
    pub f1: FourierSpec,
    pub f2: FourierSpec,
    pub f0: FourierSpec,
}

/// 1D spec with the default span preserved under a coarser point count.
pub fn spec_1d(m2: f64, center: f64, n: usize) -> FourierSpec {
    let h = 2f64.powi(-7) * m2.sqrt() * ((1usize << 13) as f64 / n as f64);
    FourierSpec::dim1(n, h, center)
}

/// 2D spec with the default span preserved under a coarser point count.
pub fn spec_2d(m2: [f64; 2], center: [f64; 2], n: usize) -> FourierSpec {
    let scale = ((1usize << 10) as f64) / n as f64;
    FourierSpec::dim2(
        n,
        [
            2f64.powi(-5) * m2[0].sqrt() * scale,
            2f64.powi(-5) * m2[1].sqrt() * scale,
        ],
        center,
    )
}

impl MixtureGeometry {
    /// Paper-default geometry sized from the innovation second moments.
    pub fn for_model(model: &LdoupModel) -> Self {
        Self::for_model_sized(model, 1 << 13, 1 << 10)
    }

    /// Same spans at caller-chosen point counts.
    pub fn for_model_sized(model: &LdoupModel, n1: usize, n2: usize) -> Self {
        let ms = moments::zstar_moments_wvagou(model);
        Self {
            f1: spec_1d(ms.m2[0], 0.0, n1),
            f2: spec_1d(ms.m2[1], 0.0, n1),
            f0: spec_2d([ms.m2[0], ms.m2[1]], [0.0, 0.0], n2),
        }
    }
}

/// Tabulates the planar mixture component CF on the f0 frequency grid.
///
/// The centered innovation CF factors into a common term and two per-axis
/// terms; the axis terms are precomputed per frequency index.
fn plane_component_values(
    model: &LdoupModel,
    probs: &MixtureProbs,
    spec: &FourierSpec,
) -> Vec<Complex64> {
    let p = model.wvag();
    let (a, b1, b2) = (p.a(), p.betas()[0], p.betas()[1]);
    let (al1, al2) = (p.alpha()[0], p.alpha()[1]);
    let (s11, s22, s12) = (p.sigma()[(0, 0)], p.sigma()[(1, 1)], p.sigma()[(0, 1)]);
    let e2 = (2.0 * model.lambda() * model.delta()).exp();
    let (q1m, q2m) = (
        (-2.0 * b1 * model.lambda() * model.delta()).exp(),
        (-2.0 * b2 * model.lambda() * model.delta()).exp(),
    );
    let axes = spec.frequency_axes();
    let n = spec.n_points;
    let ratio_pow = |c: f64, t: f64, beta: f64| -> f64 {
        let q = 0.5 * c * t * t;
        (-beta * ((1.0 + q * e2) / (1.0 + q)).ln()).exp()
    };
    let tab1: Vec<f64> = axes[0].iter().map(|&t| ratio_pow(al1 * s11, t, b1)).collect();
    let tab2: Vec<f64> = axes[1].iter().map(|&t| ratio_pow(al2 * s22, t, b2)).collect();
    let phi1: Vec<f64> = tab1.iter().map(|v| (v - q1m) / (1.0 - q1m)).collect();
    let phi2: Vec<f64> = tab2.iter().map(|v| (v - q2m) / (1.0 - q2m)).collect();
    let amin = al1.min(al2);
    (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (k1, k2) = (idx / n, idx % n);
            let (t1, t2) = (axes[0][k1], axes[1][k2]);
            let q0 = 0.5 * (al1 * s11 * t1 * t1 + 2.0 * amin * s12 * t1 * t2 + al2 * s22 * t2 * t2);
            let common = (-a * ((1.0 + q0 * e2) / (1.0 + q0)).ln()).exp();
            let centered = common * tab1[k1] * tab2[k2];
            let v = (centered - probs.p - probs.p1 * phi1[k1] - probs.p2 * phi2[k2]) / probs.p0;
            Complex64::new(v, 0.0)
        })
        .collect()
}

/// Builds the innovation mixture of an n = 2 WVAG-OU model.
pub fn build_mixture(
    model: &LdoupModel,
    geometry: Option<&MixtureGeometry>,
) -> Result<InnovationMixture, LikelihoodError> {
    if model.n() != 2 {
        return Err(LikelihoodError::DimensionUnsupported(model.n()));
    }
    model.wvag().require_invertible()?;
    let probs = charfn::mixture_probabilities(model)?;
    let default_geom;
    let geom = match geometry {
        Some(g) => g,
        None => {
            default_geom = MixtureGeometry::for_model(model);
            &default_geom
        }
    };
    let f1 = fourier::invert_cf(
        |t| charfn::mixture_component_cf(model, charfn::MixturePart::Axis1, t).unwrap(),
        &geom.f1,
    )?;
    let f2 = fourier::invert_cf(
        |t| charfn::mixture_component_cf(model, charfn::MixturePart::Axis2, t).unwrap(),
        &geom.f2,
    )?;
    let f0 = fourier::invert_cf_values(&geom.f0, plane_component_values(model, &probs, &geom.f0))?;
    let growth = (model.lambda() * model.delta()).exp() - 1.0;
    Ok(InnovationMixture {
        zeta: model.wvag().eta() * growth,
        p: probs.p,
        p1: probs.p1,
        p2: probs.p2,
        p0: probs.p0,
        f1,
        f2,
        f0,
    })
}

/// Stationary density of a WVAG-OU model (a WVAG law with mu = 0),
/// tabulated by Fourier inversion.
pub fn wvagou_stationary_density(
    model: &LdoupModel,
    spec: Option<&FourierSpec>,
) -> Result<DensityGrid, LikelihoodError> {
    assert_eq!(model.kind(), ModelKind::WvagOu);
    let p = model.wvag();
    let default_spec;
    let spec = match spec {
        Some(s) => s,
        None => {
            let mean = moments::stationary_mean(model);
            default_spec = spec_2d(
                [p.sigma()[(0, 0)], p.sigma()[(1, 1)]],
                [mean[0], mean[1]],
                1 << 10,
            );
            &default_spec
        }
    };
    // mu = 0 makes the exponent real up to the eta drift, which only shifts
    // the grid; evaluate the factored real form per axis.
    let (a, b1, b2) = (p.a(), p.betas()[0], p.betas()[1]);
    let (al1, al2) = (p.alpha()[0], p.alpha()[1]);
    let (s11, s22, s12) = (p.sigma()[(0, 0)], p.sigma()[(1, 1)], p.sigma()[(0, 1)]);
    let (e1, e2eta) = (p.eta()[0], p.eta()[1]);
    let amin = al1.min(al2);
    let axes = spec.frequency_axes();
    let n = spec.n_points;
    let tab1: Vec<f64> = axes[0]
        .iter()
        .map(|&t| (-b1 * (1.0 + 0.5 * al1 * s11 * t * t).ln()).exp())
        .collect();
    let tab2: Vec<f64> = axes[1]
        .iter()
        .map(|&t| (-b2 * (1.0 + 0.5 * al2 * s22 * t * t).ln()).exp())
        .collect();
    let values: Vec<Complex64> = (0..n * n)
        .into_par_iter()
        .map(|idx| {
            let (k1, k2) = (idx / n, idx % n);
            let (t1, t2) = (axes[0][k1], axes[1][k2]);
            let q0 = 0.5 * (al1 * s11 * t1 * t1 + 2.0 * amin * s12 * t1 * t2 + al2 * s22 * t2 * t2);
            let magnitude = (-a * (1.0 + q0).ln()).exp() * tab1[k1] * tab2[k2];
            magnitude * Complex64::new(0.0, e1 * t1 + e2eta * t2).exp()
        })
        .collect();
    Ok(fourier::invert_cf_values(spec, values)?)
}

/// 1D stationary density of one marginal component, for either model kind.
///
/// WVAG-OU marginals are VG laws with a closed-form exponent; OU-WVAG
/// marginals go through the quadrature exponent of the marginal VG BDLP.
pub fn marginal_stationary_density(
    model: &LdoupModel,
    k: usize,
    grid_n: usize,
) -> Result<DensityGrid, LikelihoodError> {
    let p = model.wvag();
    let w = moments::wvag_unit_moments(p);
    let (alpha_k, mu_k, s_kk, eta_k) = (p.alpha()[k], p.mu()[k], p.sigma()[(k, k)], p.eta()[k]);
    match model.kind() {
        ModelKind::WvagOu => {
            let spec = spec_1d(w.m2[k], w.m1[k], grid_n);
            Ok(fourier::invert_cf(
                |t| {
                    (charfn::vg_psi(1.0 / alpha_k, 0.0, s_kk, t[0])
                        + Complex64::new(0.0, eta_k * t[0]))
                    .exp()
                },
                &spec,
            )?)
        }
        ModelKind::OuWvag => {
            let spec = spec_1d(w.m2[k] / 2.0, w.m1[k], grid_n);
            let theta_max = spec.frequency_axes()[0]
                .iter()
                .fold(0.0f64, |m, t| m.max(t.abs()));
            let quad = charfn::QuadratureSpec::for_theta_max(theta_max);
            let psi = |t: &[f64]| {
                charfn::vg_psi(1.0 / alpha_k, mu_k, s_kk, t[0])
                    + Complex64::new(0.0, eta_k * t[0])
            };
            Ok(fourier::invert_cf(
                |t| {
                    charfn::ou_stationary_psi(psi, t, &quad)
                        .map(|q| q.value.exp())
                        .unwrap_or(Complex64::new(0.0, 0.0))
                },
                &spec,
            )?)
        }
    }
}

fn atom_eps(zeta_k: f64) -> f64 {
    1e-9 * (1.0 + zeta_k.abs())
}

struct LogAcc {
    value: f64,
    floor_hits: usize,
}

impl LogAcc {
    fn new() -> Self {
        Self {
            value: 0.0,
            floor_hits: 0,
        }
    }

    fn add_density(&mut self, d: f64) {
        if d <= EPS_FLOOR {
            self.floor_hits += 1;
        }
        self.value += d.max(EPS_FLOOR).ln();
    }
}

/// Log-likelihood of 2D observations under the WVAG-OU mixture law.
///
/// Each innovation z = e^{lambda Delta} x_k - x_{k-1} is classified against
/// the atom zeta coordinatewise, then scored on the matching mixture branch.
pub fn wvagou_loglik(
    model: &LdoupModel,
    obs: &ObservationSet,
    mix: &InnovationMixture,
    stat_density: &DensityGrid,
) -> LogLik {
    assert_eq!(obs.n(), 2, "mixture likelihood is bivariate");
    let innovations = obs.innovations(model.lambda());
    let (z1a, z2a) = (mix.zeta[0], mix.zeta[1]);
    let (eps1, eps2) = (atom_eps(z1a), atom_eps(z2a));
    let mut acc = LogAcc::new();
    let mut atoms = 0usize;
    let mut axis = [0usize; 2];
    acc.add_density(stat_density.density_at(&[obs.data[(0, 0)], obs.data[(0, 1)]]));
    for k in 0..innovations.nrows() {
        let (z1, z2) = (innovations[(k, 0)], innovations[(k, 1)]);
        let on1 = (z1 - z1a).abs() <= eps1;
        let on2 = (z2 - z2a).abs() <= eps2;
        match (on1, on2) {
            (true, true) => {
                atoms += 1;
                acc.value += mix.p.ln();
            }
            (false, true) => {
                axis[0] += 1;
                acc.value += mix.p1.ln();
                acc.add_density(mix.f1.density_at(&[z1 - z1a]));
            }
            (true, false) => {
                axis[1] += 1;
                acc.value += mix.p2.ln();
                acc.add_density(mix.f2.density_at(&[z2 - z2a]));
            }
            (false, false) => {
                acc.value += mix.p0.ln();
                acc.add_density(mix.f0.density_at(&[z1 - z1a, z2 - z2a]));
            }
        }
    }
    LogLik {
        value: acc.value,
        n_atom_hits: atoms,
        n_axis_hits: axis,
        n_floor_hits: acc.floor_hits,
    }
}

/// Grid geometry for one marginal VG-OU likelihood.
#[derive(Debug, Clone)]
pub struct MarginalGeometry {
    pub innovation: FourierSpec,
    pub stationary: FourierSpec,
}

impl MarginalGeometry {
    /// Default: innovation grid sized by m2(Z_k*) around zero, stationary
    /// grid sized by Sigma_kk around eta_k.
    pub fn for_params(lambda: f64, delta: f64, eta_k: f64, sigma_kk: f64, n: usize) -> Self {
        let g2 = moments::gammas(lambda, delta)[1];
        Self {
            innovation: spec_1d(2.0 * g2 * sigma_kk, 0.0, n),
            stationary: spec_1d(sigma_kk, eta_k, n),
        }
    }
}

/// Marginal VG-OU log-likelihood for one coordinate of a WVAG-OU model:
/// an atom at zeta_k mixed with a Fourier-inverted continuous part.
pub fn marginal_vgou_loglik(
    lambda: f64,
    delta: f64,
    eta_k: f64,
    alpha_k: f64,
    sigma_kk: f64,
    series: &[f64],
    geometry: Option<&MarginalGeometry>,
) -> Result<LogLik, LikelihoodError> {
    let default_geom;
    let geom = match geometry {
        Some(g) => g,
        None => {
            default_geom = MarginalGeometry::for_params(lambda, delta, eta_k, sigma_kk, 1 << 13);
            &default_geom
        }
    };
    let p_atom = charfn::vgou_marginal_atom_prob(alpha_k, lambda, delta);
    let f_cont = fourier::invert_cf(
        |t| {
            Complex64::new(
                charfn::vgou_marginal_innovation_cf(alpha_k, sigma_kk, lambda, delta, t[0]),
                0.0,
            )
        },
        &geom.innovation,
    )?;
    // X_k(0) is VG^1(1/alpha_k, 0, Sigma_kk) shifted by eta_k.
    let f_stat = fourier::invert_cf(
        |t| {
            (charfn::vg_psi(1.0 / alpha_k, 0.0, sigma_kk, t[0])
                + Complex64::new(0.0, eta_k * t[0]))
            .exp()
        },
        &geom.stationary,
    )?;

    let growth = (lambda * delta).exp();
    let zeta = eta_k * (growth - 1.0);
    let eps = atom_eps(zeta);
    let mut acc = LogAcc::new();
    let mut atoms = 0usize;
    acc.add_density(f_stat.density_at(&[series[0]]));
    for w in series.windows(2) {
        let z = growth * w[1] - w[0];
        if (z - zeta).abs() <= eps {
            atoms += 1;
            acc.value += p_atom.ln();
        } else {
            acc.value += (1.0 - p_atom).ln();
            acc.add_density(f_cont.density_at(&[z - zeta]));
        }
    }
    Ok(LogLik {
        value: acc.value,
        n_atom_hits: atoms,
        n_axis_hits: [0, 0],
        n_floor_hits: acc.floor_hits,
    })
}

/// Log-likelihood for an absolutely continuous innovation law, including
/// the e^{m n lambda Delta} Jacobian of the AR(1) change of variables.
pub fn generic_loglik(
    lambda: f64,
    delta: f64,
    obs: &ObservationSet,
    innov_density: &DensityGrid,
    stat_density: &DensityGrid,
) -> LogLik {
    let m = obs.m();
    let n = obs.n();
    let mut acc = LogAcc::new();
    acc.value += m as f64 * n as f64 * lambda * delta;
    let x0: Vec<f64> = obs.data.row(0).iter().cloned().collect();
    acc.add_density(stat_density.density_at(&x0));
    let innovations = obs.innovations(lambda);
    let mut z = vec![0.0; n];
    for k in 0..m {
        for (j, zj) in z.iter_mut().enumerate() {
            *zj = innovations[(k, j)];
        }
        acc.add_density(innov_density.density_at(&z));
    }
    LogLik {
        value: acc.value,
        n_atom_hits: 0,
        n_axis_hits: [0, 0],
        n_floor_hits: acc.floor_hits,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{LdoupModel, ModelKind, WvagParams};
    use crate::sampling::{sample_path, PathOptions};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

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

    fn coarse_geometry(model: &LdoupModel) -> MixtureGeometry {
        MixtureGeometry::for_model_sized(model, 1 << 11, 1 << 8)
    }

    #[test]
    fn mixture_probabilities_and_zeta() {
        let model = paper_wvagou();
        let mix = build_mixture(&model, Some(&coarse_geometry(&model))).unwrap();
        assert_relative_eq!(mix.p, (-19.0f64 / 9.0).exp(), max_relative = 1e-12);
        let p2 = (-1.0f64).exp() * (-1.0f64 / 9.0).exp() * (1.0 - (-1.0f64).exp());
        assert_relative_eq!(mix.p2, p2, max_relative = 1e-12);
        assert_relative_eq!(mix.zeta[0], -0.06 * ((0.5f64).exp() - 1.0));
        assert_eq!(mix.zeta[1], 0.0);
    }

    #[test]
    fn mixture_rejects_non_bivariate_models() {
        let p = WvagParams::from_slices(1.0, &[0.5], &[0.0], &[vec![1.0]], &[0.0]).unwrap();
        let m = LdoupModel::new(ModelKind::WvagOu, 0.5, p, 1.0).unwrap();
        assert!(matches!(
            build_mixture(&m, None),
            Err(LikelihoodError::DimensionUnsupported(1))
        ));
    }

    #[test]
    fn mixture_measure_normalization() {
        let model = paper_wvagou();
        let mix = build_mixture(&model, None).unwrap();
        let total = mix.p
            + mix.p1 * mix.f1.raw_mass
            + mix.p2 * mix.f2.raw_mass
            + mix.p0 * mix.f0.raw_mass;
        assert!((total - 1.0).abs() < 2e-3, "integral against nu = {total}");
    }

    #[test]
    fn axis_densities_are_symmetric() {
        let model = paper_wvagou();
        let mix = build_mixture(&model, Some(&coarse_geometry(&model))).unwrap();
        let n = mix.f1.spec.n_points;
        for k in 1..n / 2 {
            let d = (mix.f1.values[n / 2 + k] - mix.f1.values[n / 2 - k]).abs();
            assert!(d < 1e-8, "f1 asymmetry {d}");
        }
    }

    #[test]
    fn atom_innovation_contributes_log_p() {
        let model = paper_wvagou();
        let mix = build_mixture(&model, Some(&coarse_geometry(&model))).unwrap();
        let stat = wvagou_stationary_density(&model, None).unwrap();
        let decay = (-0.5f64).exp();
        let x0 = [0.2, -0.1];
        let x1 = [
            decay * (x0[0] + mix.zeta[0]),
            decay * (x0[1] + mix.zeta[1]),
        ];
        let obs = ObservationSet::new(
            DMatrix::from_row_slice(2, 2, &[x0[0], x0[1], x1[0], x1[1]]),
            1.0,
        )
        .unwrap();
        let ll = wvagou_loglik(&model, &obs, &mix, &stat);
        assert_eq!(ll.n_atom_hits, 1);
        assert_eq!(ll.n_axis_hits, [0, 0]);
        let stat_term = stat.density_at(&x0).ln();
        assert_relative_eq!(ll.value - stat_term, mix.p.ln(), max_relative = 1e-9);
    }

    #[test]
    fn axis_innovation_takes_axis_branch() {
        let model = paper_wvagou();
        let mix = build_mixture(&model, Some(&coarse_geometry(&model))).unwrap();
        let stat = wvagou_stationary_density(&model, None).unwrap();
        let decay = (-0.5f64).exp();
        let x0 = [0.2, -0.1];
        let jump = 0.37;
        let x1 = [
            decay * (x0[0] + mix.zeta[0] + jump),
            decay * (x0[1] + mix.zeta[1]),
        ];
        let obs = ObservationSet::new(
            DMatrix::from_row_slice(2, 2, &[x0[0], x0[1], x1[0], x1[1]]),
            1.0,
        )
        .unwrap();
        let ll = wvagou_loglik(&model, &obs, &mix, &stat);
        assert_eq!(ll.n_atom_hits, 0);
        assert_eq!(ll.n_axis_hits, [1, 0]);
        let stat_term = stat.density_at(&x0).ln();
        let want = mix.p1.ln() + mix.f1.density_at(&[jump]).ln();
        assert_relative_eq!(ll.value - stat_term, want, max_relative = 1e-6);
    }

    #[test]
    fn branches_partition_simulated_innovations() {
        let model = paper_wvagou();
        let mix = build_mixture(&model, Some(&coarse_geometry(&model))).unwrap();
        let stat = wvagou_stationary_density(&model, None).unwrap();
        let m = 400;
        let path = sample_path(&model, m, 21, &PathOptions::default()).unwrap();
        let obs = ObservationSet::new(path.data, 1.0).unwrap();
        let ll = wvagou_loglik(&model, &obs, &mix, &stat);
        assert!(ll.value.is_finite());
        // every innovation lands in exactly one branch
        assert!(ll.n_atom_hits + ll.n_axis_hits[0] + ll.n_axis_hits[1] <= m);
        // atom frequency should be near p
        let p = mix.p;
        let se = (p * (1.0 - p) / m as f64).sqrt();
        let freq = ll.n_atom_hits as f64 / m as f64;
        assert!((freq - p).abs() < 5.0 * se, "atom freq {freq} vs p {p}");
    }

    #[test]
    fn marginal_stationary_density_has_correct_mean() {
        let model = paper_wvagou();
        let g = marginal_stationary_density(&model, 0, 1 << 12).unwrap();
        assert!((g.raw_mass - 1.0).abs() < 1e-3);
        let mean: f64 = g
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| g.spec.coord(0, i) * v * g.spec.spacing[0])
            .sum();
        // E[X_1] = eta_1 for the mu = 0 stationary law
        assert!((mean + 0.06).abs() < 1e-3, "mean {mean}");
    }

    #[test]
    fn marginal_atom_probability_value() {
        assert_relative_eq!(
            charfn::vgou_marginal_atom_prob(0.5, 0.5, 1.0),
            (-2.0f64).exp(),
            max_relative = 1e-14
        );
    }

    #[test]
    fn marginal_loglik_constant_drift_segment() {
        // With z = zeta at every step the likelihood is m log p plus the
        // stationary term.
        let (lambda, delta) = (0.5, 1.0);
        let (eta_k, alpha_k, sigma_kk) = (-0.06, 0.9, 0.18);
        let growth: f64 = (lambda * delta as f64).exp();
        let zeta = eta_k * (growth - 1.0);
        let mut xs = vec![0.3];
        for _ in 0..5 {
            let prev = *xs.last().unwrap();
            xs.push((prev + zeta) / growth);
        }
        let geom = MarginalGeometry::for_params(lambda, delta, eta_k, sigma_kk, 1 << 11);
        let ll =
            marginal_vgou_loglik(lambda, delta, eta_k, alpha_k, sigma_kk, &xs, Some(&geom))
                .unwrap();
        assert_eq!(ll.n_atom_hits, 5);
        let p = charfn::vgou_marginal_atom_prob(alpha_k, lambda, delta);
        let f_stat_term = ll.value - 5.0 * p.ln();
        assert!(f_stat_term.is_finite());
    }

    #[test]
    fn generic_loglik_m0_is_stationary_term_only() {
        let spec = FourierSpec::dim1(64, 0.1, 0.0);
        let flat = DensityGrid::from_values(spec.clone(), vec![1.0; 64]);
        let obs = ObservationSet::new(DMatrix::from_row_slice(2, 1, &[0.0, 0.05]), 1.0).unwrap();
        let ll = generic_loglik(0.5, 1.0, &obs, &flat, &flat);
        // one innovation term plus jacobian m n lambda delta = 0.5
        let single = flat.density_at(&[0.0]).ln();
        assert_relative_eq!(
            ll.value,
            0.5 + single + flat.density_at(&[obs.innovations(0.5)[(0, 0)]]).ln(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn jacobian_term_shifts_by_mn_lambda_delta() {
        let spec = FourierSpec::dim1(64, 0.1, 0.0);
        let flat = DensityGrid::from_values(spec, vec![1.0; 64]);
        let data = DMatrix::from_row_slice(4, 1, &[0.0, 0.01, -0.02, 0.03]);
        let obs = ObservationSet::new(data, 1.0).unwrap();
        let ll = generic_loglik(0.5, 1.0, &obs, &flat, &flat);
        let mut manual = flat.density_at(&[0.0]).ln();
        let z = obs.innovations(0.5);
        for k in 0..3 {
            manual += flat.density_at(&[z[(k, 0)]]).ln();
        }
        assert_relative_eq!(ll.value - manual, 3.0 * 0.5, max_relative = 1e-12);
    }

    #[test]
    fn appending_an_observation_changes_the_loglik() {
        let spec = FourierSpec::default_1d(1.0, 0.0);
        let gauss = fourier::invert_cf(
            |t| Complex64::new((-0.5 * t[0] * t[0]).exp(), 0.0),
            &spec,
        )
        .unwrap();
        let data3 = DMatrix::from_row_slice(3, 1, &[0.1, -0.4, 0.3]);
        let data4 = DMatrix::from_row_slice(4, 1, &[0.1, -0.4, 0.3, 0.9]);
        let a = generic_loglik(
            0.5,
            1.0,
            &ObservationSet::new(data3, 1.0).unwrap(),
            &gauss,
            &gauss,
        );
        let b = generic_loglik(
            0.5,
            1.0,
            &ObservationSet::new(data4, 1.0).unwrap(),
            &gauss,
            &gauss,
        );
        assert!((b.value - a.value).abs() > 1e-12);
    }

    #[test]
    fn floor_hits_counted_for_outliers() {
        let spec = FourierSpec::dim1(64, 0.01, 0.0);
        let narrow = DensityGrid::from_values(spec, vec![1.0; 64]);
        let data = DMatrix::from_row_slice(2, 1, &[500.0, 500.0]);
        let obs = ObservationSet::new(data, 1.0).unwrap();
        let ll = generic_loglik(0.5, 1.0, &obs, &narrow, &narrow);
        assert!(ll.n_floor_hits >= 2);
        assert!(ll.value.is_finite());
    }
}
