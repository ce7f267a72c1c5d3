//! Random generation: VG and WVAG laws, the exact WVAG-OU innovation and
//! path, the Euler-scheme OU-WVAG innovation and path, and stationary
//! initial draws.

use crate::charfn::{self, QuadratureSpec};
use crate::fourier::{self, DensityGrid, FourierSpec, GridSampler};
use crate::moments;
use crate::params::{LdoupModel, ModelConfig, ModelKind, ObsError, WvagParams};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, Gamma, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SamplingError {
    #[error("euler step too coarse: floor(lambda*delta/step) = {0} < 8")]
    StepTooCoarse(usize),
    #[error("stationary sampling supports n in {{1, 2}}, got n = {0}")]
    DimensionUnsupported(usize),
    #[error("the exact scheme requires a WVAG-OU model")]
    SchemeUnsupported,
    #[error("fourier: {0}")]
    Fourier(#[from] fourier::FourierError),
    #[error("charfn: {0}")]
    CharFn(#[from] charfn::CharFnError),
    #[error("invalid distribution parameter: {0}")]
    BadParameter(String),
}

/// Square-root factor of a PSD matrix for multivariate normal sampling.
/// Cholesky when positive definite, symmetric eigendecomposition otherwise.
#[derive(Debug, Clone)]
struct MvnFactor {
    l: DMatrix<f64>,
}

impl MvnFactor {
    fn new(sigma: &DMatrix<f64>) -> Self {
        if let Some(chol) = nalgebra::Cholesky::new(sigma.clone()) {
            return Self { l: chol.unpack() };
        }
        let eig = nalgebra::SymmetricEigen::new(sigma.clone());
        let n = sigma.nrows();
        let mut l = DMatrix::zeros(n, n);
        for j in 0..n {
            let s = eig.eigenvalues[j].max(0.0).sqrt();
            for i in 0..n {
                l[(i, j)] = eig.eigenvectors[(i, j)] * s;
            }
        }
        Self { l }
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let n = self.l.nrows();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        &self.l * z
    }
}

/// Reusable sampler of the VG^n(b, mu, Sigma) process.
#[derive(Debug, Clone)]
pub struct VgSampler {
    b: f64,
    mu: DVector<f64>,
    factor: MvnFactor,
}

impl VgSampler {
    pub fn new(b: f64, mu: DVector<f64>, sigma: &DMatrix<f64>) -> Result<Self, SamplingError> {
        if !(b.is_finite() && b > 0.0) {
            return Err(SamplingError::BadParameter(format!("vg shape b = {b}")));
        }
        Ok(Self {
            b,
            mu,
            factor: MvnFactor::new(sigma),
        })
    }

    /// One draw of the process at time t: Brownian motion with drift run on
    /// an independent Gamma(b t, rate b) clock.
    pub fn sample<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> DVector<f64> {
        let gamma = Gamma::new(self.b * t, 1.0 / self.b).expect("valid gamma");
        let g: f64 = gamma.sample(rng);
        &self.mu * g + self.factor.sample(rng) * g.sqrt()
    }
}

/// One draw of VG^n(b, mu, Sigma) at time t.
pub fn sample_vg<R: Rng + ?Sized>(
    b: f64,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    t: f64,
    rng: &mut R,
) -> Result<DVector<f64>, SamplingError> {
    Ok(VgSampler::new(b, mu.clone(), sigma)?.sample(t, rng))
}

/// Scalar VG draw helper.
#[derive(Debug, Clone, Copy)]
struct ScalarVg {
    b: f64,
    mu: f64,
    sd: f64,
}

impl ScalarVg {
    fn sample<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> f64 {
        let g: f64 = Gamma::new(self.b * t, 1.0 / self.b).expect("valid gamma").sample(rng);
        let z: f64 = rng.sample(StandardNormal);
        self.mu * g + self.sd * g.sqrt() * z
    }
}

/// Reusable sampler of W(t) for W ~ WVAG^n(a, alpha, mu, Sigma, eta), using
/// the explicit representation eta t + V_0(t) + (V_1(t), ..., V_n(t)).
#[derive(Debug, Clone)]
pub struct WvagSampler {
    eta: DVector<f64>,
    common: VgSampler,
    idio: Vec<ScalarVg>,
}

impl WvagSampler {
    pub fn new(params: &WvagParams) -> Result<Self, SamplingError> {
        let a = params.a();
        let adm = params.alpha_diamond_mu();
        let ads = params.alpha_diamond_sigma();
        let common = VgSampler::new(a, &adm * a, &(&ads * a))?;
        let idio = (0..params.n())
            .map(|k| {
                let (al, be) = (params.alpha()[k], params.betas()[k]);
                ScalarVg {
                    b: be,
                    mu: al * be * params.mu()[k],
                    sd: (al * be * params.sigma()[(k, k)]).sqrt(),
                }
            })
            .collect();
        Ok(Self {
            eta: params.eta().clone(),
            common,
            idio,
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, t: f64, rng: &mut R) -> DVector<f64> {
        let mut v = &self.eta * t + self.common.sample(t, rng);
        for (k, s) in self.idio.iter().enumerate() {
            v[k] += s.sample(t, rng);
        }
        v
    }
}

/// One draw of W(t) for W ~ WVAG^n.
pub fn sample_wvag<R: Rng + ?Sized>(
    params: &WvagParams,
    t: f64,
    rng: &mut R,
) -> Result<DVector<f64>, SamplingError> {
    Ok(WvagSampler::new(params)?.sample(t, rng))
}

/// One exact innovation draw with the Poisson-count bookkeeping.
#[derive(Debug, Clone)]
pub struct InnovationDraw {
    pub value: DVector<f64>,
    /// `atom_flags[0]` for the common structure, `atom_flags[k]` for axis k;
    /// true when the corresponding Poisson count was zero.
    pub atom_flags: Vec<bool>,
}

impl InnovationDraw {
    pub fn is_atom(&self) -> bool {
        self.atom_flags.iter().all(|f| *f)
    }
}

/// Exact sampler of the WVAG-OU innovation Z*(Delta): a drift atom plus
/// compound-Poisson sums of exponentially scaled VG jumps.
#[derive(Debug, Clone)]
pub struct WvagOuInnovationSampler {
    horizon: f64,
    zeta: DVector<f64>,
    common_rate: f64,
    common_jump: MvnFactor,
    axis_rates: Vec<f64>,
    axis_sds: Vec<f64>,
    n: usize,
}

impl WvagOuInnovationSampler {
    pub fn new(model: &LdoupModel) -> Result<Self, SamplingError> {
        assert_eq!(model.kind(), ModelKind::WvagOu);
        let p = model.wvag();
        let horizon = model.lambda() * model.delta();
        let growth = horizon.exp() - 1.0;
        Ok(Self {
            horizon,
            zeta: p.eta() * growth,
            common_rate: 2.0 * p.a(),
            common_jump: MvnFactor::new(&p.alpha_diamond_sigma()),
            axis_rates: p.betas().iter().map(|b| 2.0 * b).collect(),
            axis_sds: (0..p.n())
                .map(|k| (p.alpha()[k] * p.sigma()[(k, k)]).sqrt())
                .collect(),
            n: p.n(),
        })
    }

    pub fn zeta(&self) -> &DVector<f64> {
        &self.zeta
    }

    /// Arrival times on [0, horizon] given the count: sorted uniforms.
    fn arrivals<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Vec<f64> {
        let mut t: Vec<f64> = (0..count)
            .map(|_| rng.random::<f64>() * self.horizon)
            .collect();
        t.sort_by(|a, b| a.partial_cmp(b).unwrap());
        t
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> InnovationDraw {
        let mut value = self.zeta.clone();
        let mut atom_flags = Vec::with_capacity(self.n + 1);

        let n0 = Poisson::new(self.common_rate * self.horizon)
            .expect("valid poisson")
            .sample(rng) as usize;
        atom_flags.push(n0 == 0);
        for t in self.arrivals(n0, rng) {
            // VG^n(1, 0, alpha<>Sigma) jump: Exp(1) clock on the Brownian part.
            let g: f64 = rng.sample(Exp1);
            value += self.common_jump.sample(rng) * (g.sqrt() * t.exp());
        }

        for k in 0..self.n {
            let nk = Poisson::new(self.axis_rates[k] * self.horizon)
                .expect("valid poisson")
                .sample(rng) as usize;
            atom_flags.push(nk == 0);
            for t in self.arrivals(nk, rng) {
                let g: f64 = rng.sample(Exp1);
                let z: f64 = rng.sample(StandardNormal);
                value[k] += self.axis_sds[k] * g.sqrt() * z * t.exp();
            }
        }

        InnovationDraw { value, atom_flags }
    }
}

/// One exact draw of the WVAG-OU innovation.
pub fn sample_wvagou_innovation<R: Rng + ?Sized>(
    model: &LdoupModel,
    rng: &mut R,
) -> Result<InnovationDraw, SamplingError> {
    Ok(WvagOuInnovationSampler::new(model)?.sample(rng))
}

/// Increment source for the Euler innovation scheme.
pub trait BdlpSampler {
    fn dim(&self) -> usize;
    fn sample_increment<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> DVector<f64>;
}

impl BdlpSampler for WvagSampler {
    fn dim(&self) -> usize {
        self.eta.len()
    }

    fn sample_increment<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> DVector<f64> {
        self.sample(dt, rng)
    }
}

/// Increment sampler of the WVAG-OU background driving process: compound
/// Poisson jumps (common VG jumps plus per-axis VG jumps) with drift eta.
#[derive(Debug, Clone)]
pub struct WvagOuBdlpSampler {
    eta: DVector<f64>,
    common_rate: f64,
    common_jump: MvnFactor,
    axis_rates: Vec<f64>,
    axis_sds: Vec<f64>,
    n: usize,
}

impl WvagOuBdlpSampler {
    pub fn new(model: &LdoupModel) -> Result<Self, SamplingError> {
        assert_eq!(model.kind(), ModelKind::WvagOu);
        let p = model.wvag();
        Ok(Self {
            eta: p.eta().clone(),
            common_rate: 2.0 * p.a(),
            common_jump: MvnFactor::new(&p.alpha_diamond_sigma()),
            axis_rates: p.betas().iter().map(|b| 2.0 * b).collect(),
            axis_sds: (0..p.n())
                .map(|k| (p.alpha()[k] * p.sigma()[(k, k)]).sqrt())
                .collect(),
            n: p.n(),
        })
    }
}

/// Either BDLP increment source, by model kind.
enum EulerBdlp {
    Wvag(WvagSampler),
    CompoundPoisson(WvagOuBdlpSampler),
}

impl BdlpSampler for EulerBdlp {
    fn dim(&self) -> usize {
        match self {
            EulerBdlp::Wvag(s) => s.dim(),
            EulerBdlp::CompoundPoisson(s) => s.dim(),
        }
    }

    fn sample_increment<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> DVector<f64> {
        match self {
            EulerBdlp::Wvag(s) => s.sample_increment(dt, rng),
            EulerBdlp::CompoundPoisson(s) => s.sample_increment(dt, rng),
        }
    }
}

impl BdlpSampler for WvagOuBdlpSampler {
    fn dim(&self) -> usize {
        self.n
    }

    fn sample_increment<R: Rng + ?Sized>(&self, dt: f64, rng: &mut R) -> DVector<f64> {
        let mut v = &self.eta * dt;
        let n0 = Poisson::new(self.common_rate * dt)
            .expect("valid poisson")
            .sample(rng) as usize;
        for _ in 0..n0 {
            let g: f64 = rng.sample(Exp1);
            v += self.common_jump.sample(rng) * g.sqrt();
        }
        for k in 0..self.n {
            let nk = Poisson::new(self.axis_rates[k] * dt)
                .expect("valid poisson")
                .sample(rng) as usize;
            for _ in 0..nk {
                let g: f64 = rng.sample(Exp1);
                let z: f64 = rng.sample(StandardNormal);
                v[k] += self.axis_sds[k] * g.sqrt() * z;
            }
        }
        v
    }
}

/// Euler approximation of Z*(Delta): the weighted sum of BDLP increments
/// sum_{l=1}^{n~} e^{l step} (Z((l+1) step) - Z(l step)).
pub fn sample_euler_innovation<B: BdlpSampler, R: Rng + ?Sized>(
    bdlp: &B,
    lambda: f64,
    delta: f64,
    tilde_delta: f64,
    rng: &mut R,
) -> Result<DVector<f64>, SamplingError> {
    let n_steps = (lambda * delta / tilde_delta).floor() as usize;
    if n_steps < 8 {
        return Err(SamplingError::StepTooCoarse(n_steps));
    }
    let mut acc = DVector::zeros(bdlp.dim());
    for l in 1..=n_steps {
        let w = (l as f64 * tilde_delta).exp();
        acc += bdlp.sample_increment(tilde_delta, rng) * w;
    }
    Ok(acc)
}

/// Simulation scheme used for a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    ExactWvagOu,
    EulerOuWvag,
}

/// An (m+1) x n simulated observation matrix with provenance metadata.
#[derive(Debug, Clone)]
pub struct PathSample {
    pub data: DMatrix<f64>,
    pub delta: f64,
    pub scheme: Scheme,
    pub euler_step: Option<f64>,
    pub seed: u64,
}

impl PathSample {
    /// Writes the `t,x1,...,xn` CSV format.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ObsError> {
        crate::params::write_matrix_csv(&self.data, self.delta, w)
    }

    /// Endpoint row X(t_m).
    pub fn endpoint(&self) -> DVector<f64> {
        self.data.row(self.data.nrows() - 1).transpose()
    }
}

/// JSON sidecar from which a simulation output can be regenerated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PathSidecar {
    pub model: ModelConfig,
    pub seed: u64,
    pub scheme: Scheme,
    pub euler_step: Option<f64>,
    pub m: usize,
    pub delta: f64,
}

/// Options for path simulation.
#[derive(Debug, Clone, Default)]
pub struct PathOptions {
    /// Default scheme follows the model kind.
    pub scheme: Option<Scheme>,
    /// Euler step, default 1e-4.
    pub euler_step: Option<f64>,
    /// Stationary-density grid override for the OU-WVAG initial draw.
    pub stationary_spec: Option<FourierSpec>,
}

impl PathOptions {
    fn resolved_scheme(&self, kind: ModelKind) -> Scheme {
        self.scheme.unwrap_or(match kind {
            ModelKind::WvagOu => Scheme::ExactWvagOu,
            ModelKind::OuWvag => Scheme::EulerOuWvag,
        })
    }
}

/// Builds the stationary-density grid of a model by Fourier inversion.
///
/// WVAG-OU stationary laws are WVAG with mu = 0 and invert in closed form;
/// OU-WVAG goes through the quadrature exponent. Supports n in {1, 2}.
pub fn stationary_density(
    model: &LdoupModel,
    spec_override: Option<&FourierSpec>,
) -> Result<DensityGrid, SamplingError> {
    let n = model.n();
    if n > 2 {
        return Err(SamplingError::DimensionUnsupported(n));
    }
    let w = moments::wvag_unit_moments(model.wvag());
    let mean = moments::stationary_mean(model);
    let var: Vec<f64> = match model.kind() {
        ModelKind::WvagOu => (0..n).map(|k| w.m2[k]).collect(),
        ModelKind::OuWvag => (0..n).map(|k| w.m2[k] / 2.0).collect(),
    };
    let spec = match spec_override {
        Some(s) => s.clone(),
        None => match n {
            1 => FourierSpec::default_1d(var[0], mean[0]),
            _ => FourierSpec::default_2d([var[0], var[1]], [mean[0], mean[1]]),
        },
    };
    match model.kind() {
        ModelKind::WvagOu => Ok(fourier::invert_cf(
            |t| charfn::wvag_cf(model.wvag(), t, 1.0),
            &spec,
        )?),
        ModelKind::OuWvag => {
            let theta_max = spec
                .frequency_axes()
                .iter()
                .flat_map(|ax| ax.iter().map(|t| t.abs()))
                .fold(0.0f64, f64::max);
            let quad = QuadratureSpec::for_theta_max(theta_max * (n as f64).sqrt());
            let nodes = charfn::gauss_legendre(calibrate_stationary_nodes(model, theta_max, &quad));
            let grid = fourier::invert_cf(
                |t| {
                    let mut acc = num_complex::Complex64::new(0.0, 0.0);
                    let half = 0.5 * quad.t_max;
                    for (x, wq) in nodes.0.iter().zip(nodes.1.iter()) {
                        let s = (-(half + half * x)).exp();
                        let scaled: Vec<f64> = t.iter().map(|v| v * s).collect();
                        acc += *wq * charfn::wvag_psi(model.wvag(), &scaled);
                    }
                    (half * acc).exp()
                },
                &spec,
            )?;
            Ok(grid)
        }
    }
}

/// Picks a fixed Gauss-Legendre node count for grid-wide stationary
/// integrals by node-doubling at the most oscillatory frequency.
fn calibrate_stationary_nodes(model: &LdoupModel, theta_max: f64, quad: &QuadratureSpec) -> usize {
    let probe = [theta_max, theta_max / (model.n() as f64).sqrt()];
    let mut nodes = quad.nodes.max(32);
    loop {
        let psi = |t: &[f64]| charfn::wvag_psi(model.wvag(), t);
        let coarse = charfn::gl_integrate(
            |t| {
                let s = (-t).exp();
                psi(&probe.map(|v| v * s))
            },
            0.0,
            quad.t_max,
            nodes,
        );
        let fine = charfn::gl_integrate(
            |t| {
                let s = (-t).exp();
                psi(&probe.map(|v| v * s))
            },
            0.0,
            quad.t_max,
            nodes * 2,
        );
        if (fine - coarse).norm() <= 1e-10 * (1.0 + fine.norm()) || nodes >= 2048 {
            return nodes * 2;
        }
        nodes *= 2;
    }
}

/// Simulates the observations X(0), X(Delta), ..., X(m Delta).
pub fn sample_path(
    model: &LdoupModel,
    m: usize,
    seed: u64,
    opts: &PathOptions,
) -> Result<PathSample, SamplingError> {
    Ok(sample_path_with_innovations(model, m, seed, opts)?.0)
}

/// As [`sample_path`], also returning the m x n matrix of innovation draws.
pub fn sample_path_with_innovations(
    model: &LdoupModel,
    m: usize,
    seed: u64,
    opts: &PathOptions,
) -> Result<(PathSample, DMatrix<f64>), SamplingError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = model.n();
    let scheme = opts.resolved_scheme(model.kind());
    let decay = (-model.lambda() * model.delta()).exp();
    let mut data = DMatrix::zeros(m + 1, n);
    let mut innovations = DMatrix::zeros(m, n);

    if scheme == Scheme::ExactWvagOu && model.kind() != ModelKind::WvagOu {
        return Err(SamplingError::SchemeUnsupported);
    }

    let x0: DVector<f64> = match model.kind() {
        ModelKind::WvagOu => {
            let sampler = WvagSampler::new(model.wvag())?;
            sampler.sample(1.0, &mut rng)
        }
        ModelKind::OuWvag => {
            let grid = stationary_density(model, opts.stationary_spec.as_ref())?;
            let sampler: GridSampler = grid.sampler();
            DVector::from_vec(sampler.sample(&mut rng))
        }
    };
    data.row_mut(0).copy_from(&x0.transpose());

    match scheme {
        Scheme::ExactWvagOu => {
            let sampler = WvagOuInnovationSampler::new(model)?;
            let mut prev = x0;
            for k in 0..m {
                let z = sampler.sample(&mut rng).value;
                innovations.row_mut(k).copy_from(&z.transpose());
                prev = (prev + z) * decay;
                data.row_mut(k + 1).copy_from(&prev.transpose());
            }
        }
        Scheme::EulerOuWvag => {
            let step = opts.euler_step.unwrap_or(1e-4);
            let bdlp = match model.kind() {
                ModelKind::OuWvag => EulerBdlp::Wvag(WvagSampler::new(model.wvag())?),
                ModelKind::WvagOu => EulerBdlp::CompoundPoisson(WvagOuBdlpSampler::new(model)?),
            };
            let mut prev = x0;
            for k in 0..m {
                let z = sample_euler_innovation(
                    &bdlp,
                    model.lambda(),
                    model.delta(),
                    step,
                    &mut rng,
                )?;
                innovations.row_mut(k).copy_from(&z.transpose());
                prev = (prev + z) * decay;
                data.row_mut(k + 1).copy_from(&prev.transpose());
            }
        }
    }

    let euler_step = match scheme {
        Scheme::ExactWvagOu => None,
        Scheme::EulerOuWvag => Some(opts.euler_step.unwrap_or(1e-4)),
    };
    Ok((
        PathSample {
            data,
            delta: model.delta(),
            scheme,
            euler_step,
            seed,
        },
        innovations,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::charfn::{ou_zstar_psi, wvag_psi};
    use approx::assert_relative_eq;
    use num_complex::Complex64;

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

    fn emp_cf(rows: &[DVector<f64>], theta: &[f64]) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for r in rows {
            let dot: f64 = r.iter().zip(theta).map(|(x, t)| x * t).sum();
            acc += Complex64::new(0.0, dot).exp();
        }
        acc / rows.len() as f64
    }

    #[test]
    fn degenerate_vg_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = sample_vg(
            1.0,
            &DVector::zeros(2),
            &DMatrix::zeros(2, 2),
            1.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(v, DVector::zeros(2));
    }

    #[test]
    fn vg_mean_matches_drift() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mu = DVector::from_column_slice(&[0.4, -0.2]);
        let sigma = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.3]);
        let s = VgSampler::new(2.0, mu.clone(), &sigma).unwrap();
        let t = 0.7;
        let m = 200_000;
        let mut acc = DVector::zeros(2);
        for _ in 0..m {
            acc += s.sample(t, &mut rng);
        }
        acc /= m as f64;
        // Var(V_k) = t (sigma_kk + mu_k^2 / b); SE = sqrt(Var/m)
        for k in 0..2 {
            let var = t * (sigma[(k, k)] + mu[k] * mu[k] / 2.0);
            let se = (var / m as f64).sqrt();
            assert!(
                (acc[k] - mu[k] * t).abs() < 3.0 * se,
                "mean[{k}] = {} vs {}",
                acc[k],
                mu[k] * t
            );
        }
    }

    #[test]
    fn vg_empirical_cf_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mu = DVector::from_column_slice(&[0.3]);
        let sigma = DMatrix::from_row_slice(1, 1, &[0.8]);
        let s = VgSampler::new(1.5, mu, &sigma).unwrap();
        let t = 1.3;
        let m = 100_000;
        let draws: Vec<DVector<f64>> = (0..m).map(|_| s.sample(t, &mut rng)).collect();
        let tol = 5.0 / (m as f64).sqrt();
        for theta in [0.5, 1.0, 2.0] {
            let want = (t * crate::charfn::vg_psi(1.5, 0.3, 0.8, theta)).exp();
            let got = emp_cf(&draws, &[theta]);
            assert!((got - want).norm() < tol, "cf diff {}", (got - want).norm());
        }
    }

    #[test]
    fn wvag_degenerates_to_pure_drift() {
        let p = WvagParams::from_slices(
            1e-6,
            &[0.5, 0.5],
            &[0.0, 0.0],
            &[vec![0.0, 0.0], vec![0.0, 0.0]],
            &[2.0, -1.0],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = sample_wvag(&p, 3.0, &mut rng).unwrap();
        assert_relative_eq!(v[0], 6.0, epsilon = 1e-12);
        assert_relative_eq!(v[1], -3.0, epsilon = 1e-12);
    }

    #[test]
    fn wvag_empirical_cf_matches_exponent() {
        let m = paper_ouwvag();
        let s = WvagSampler::new(m.wvag()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let draws: Vec<DVector<f64>> = (0..n).map(|_| s.sample(1.0, &mut rng)).collect();
        let tol = 5.0 / (n as f64).sqrt();
        for theta in [[0.5, 0.0], [1.0, 1.0], [-1.0, 2.0], [0.0, -1.5]] {
            let want = wvag_psi(m.wvag(), &theta).exp();
            let got = emp_cf(&draws, &theta);
            assert!(
                (got - want).norm() < tol,
                "cf diff {} at {:?}",
                (got - want).norm(),
                theta
            );
        }
    }

    #[test]
    fn wvag_sample_covariance_matches_formula() {
        let m = paper_ouwvag();
        let s = WvagSampler::new(m.wvag()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let n = 200_000;
        let draws: Vec<DVector<f64>> = (0..n).map(|_| s.sample(1.0, &mut rng)).collect();
        let mean: DVector<f64> = draws.iter().sum::<DVector<f64>>() / n as f64;
        let mut cov = 0.0;
        let mut m22 = 0.0;
        for d in &draws {
            let (x, y) = (d[0] - mean[0], d[1] - mean[1]);
            cov += x * y;
            m22 += x * x * y * y;
        }
        cov /= n as f64;
        m22 /= n as f64;
        // C(mu_1, mu_2) = a ((a1 ^ a2) S12 + a1 a2 mu1 mu2)
        let want = 1.0 * (0.5 * 0.09 + 0.9 * 0.5 * 0.15 * (-0.06));
        let se = ((m22 - cov * cov) / n as f64).sqrt();
        assert!((cov - want).abs() < 3.0 * se, "cov {cov} vs {want}");
    }

    #[test]
    fn innovation_atom_is_exact_drift() {
        let model = paper_wvagou();
        let s = WvagOuInnovationSampler::new(&model).unwrap();
        let zeta = model.wvag().eta() * ((0.5f64).exp() - 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut seen_atom = false;
        for _ in 0..200 {
            let d = s.sample(&mut rng);
            assert_eq!(d.atom_flags.len(), 3);
            if d.is_atom() {
                assert_eq!(d.value, zeta);
                seen_atom = true;
            }
        }
        assert!(seen_atom, "no atom in 200 draws at p ~ 0.12");
    }

    #[test]
    fn innovation_atom_frequency_matches_probability() {
        let model = paper_wvagou();
        let s = WvagOuInnovationSampler::new(&model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let n = 1_000_000usize;
        let hits = (0..n).filter(|_| s.sample(&mut rng).is_atom()).count();
        let p = (-19.0f64 / 9.0).exp();
        let se = (p * (1.0 - p) / n as f64).sqrt();
        let freq = hits as f64 / n as f64;
        assert!((freq - p).abs() < 3.0 * se, "freq {freq} vs p {p}");
    }

    #[test]
    fn innovation_sample_moments_match_closed_form() {
        let model = paper_wvagou();
        let s = WvagOuInnovationSampler::new(&model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 200_000usize;
        let draws: Vec<DVector<f64>> = (0..n).map(|_| s.sample(&mut rng).value).collect();
        let ms = moments::zstar_moments_wvagou(&model);
        let mean: DVector<f64> = draws.iter().sum::<DVector<f64>>() / n as f64;
        for k in 0..2 {
            let m2: f64 = draws.iter().map(|d| (d[k] - mean[k]).powi(2)).sum::<f64>() / n as f64;
            let m4: f64 = draws.iter().map(|d| (d[k] - mean[k]).powi(4)).sum::<f64>() / n as f64;
            let se2 = ((m4 - m2 * m2) / n as f64).sqrt();
            assert!(
                (m2 - ms.m2[k]).abs() < 4.0 * se2,
                "m2[{k}] {m2} vs {}",
                ms.m2[k]
            );
        }
        let mut cov = 0.0;
        let mut m22 = 0.0;
        for d in &draws {
            let (x, y) = (d[0] - mean[0], d[1] - mean[1]);
            cov += x * y;
            m22 += x * x * y * y;
        }
        cov /= n as f64;
        m22 /= n as f64;
        let se = ((m22 - cov * cov) / n as f64).sqrt();
        assert!(
            (cov - ms.cross_cov[(0, 1)]).abs() < 4.0 * se,
            "cov {cov} vs {}",
            ms.cross_cov[(0, 1)]
        );
    }

    struct DriftBdlp {
        eta: DVector<f64>,
    }

    impl BdlpSampler for DriftBdlp {
        fn dim(&self) -> usize {
            self.eta.len()
        }
        fn sample_increment<R: Rng + ?Sized>(&self, dt: f64, _rng: &mut R) -> DVector<f64> {
            &self.eta * dt
        }
    }

    #[test]
    fn euler_on_deterministic_drift_is_a_riemann_sum() {
        let eta = DVector::from_column_slice(&[2.0]);
        let bdlp = DriftBdlp { eta };
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let want = 2.0 * ((0.5f64).exp() - 1.0);
        let coarse = sample_euler_innovation(&bdlp, 0.5, 1.0, 1e-2, &mut rng).unwrap()[0];
        let fine = sample_euler_innovation(&bdlp, 0.5, 1.0, 1e-4, &mut rng).unwrap()[0];
        assert!((fine - want).abs() < (coarse - want).abs());
        assert!((fine - want).abs() < 1e-3);
    }

    #[test]
    fn euler_rejects_too_coarse_steps() {
        let bdlp = DriftBdlp {
            eta: DVector::zeros(1),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        assert!(matches!(
            sample_euler_innovation(&bdlp, 0.5, 1.0, 0.1, &mut rng),
            Err(SamplingError::StepTooCoarse(5))
        ));
    }

    #[test]
    fn euler_innovation_cf_matches_quadrature_exponent() {
        let model = paper_ouwvag();
        let bdlp = WvagSampler::new(model.wvag()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 30_000;
        let draws: Vec<DVector<f64>> = (0..n)
            .map(|_| sample_euler_innovation(&bdlp, 0.5, 1.0, 1e-3, &mut rng).unwrap())
            .collect();
        let quad = QuadratureSpec::default();
        let tol = 5.0 / (n as f64).sqrt();
        for theta in [[0.5, 0.5], [1.0, -0.5]] {
            let want = ou_zstar_psi(|t| wvag_psi(model.wvag(), t), 0.5, 1.0, &theta, &quad)
                .unwrap()
                .value
                .exp();
            let got = emp_cf(&draws, &theta);
            assert!(
                (got - want).norm() < tol,
                "cf diff {}",
                (got - want).norm()
            );
        }
    }

    #[test]
    fn wvagou_euler_innovation_cf_matches_closed_form() {
        let model = paper_wvagou();
        let bdlp = WvagOuBdlpSampler::new(&model).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let n = 30_000;
        let draws: Vec<DVector<f64>> = (0..n)
            .map(|_| sample_euler_innovation(&bdlp, 0.5, 1.0, 1e-3, &mut rng).unwrap())
            .collect();
        let tol = 5.0 / (n as f64).sqrt();
        for theta in [[0.8, 0.0], [0.5, -0.5]] {
            let want = crate::charfn::wvagou_zstar_psi(&model, &theta).exp();
            let got = emp_cf(&draws, &theta);
            assert!((got - want).norm() < tol, "cf diff {}", (got - want).norm());
        }
    }

    #[test]
    fn exact_scheme_rejected_for_ouwvag_models() {
        let model = paper_ouwvag();
        let res = sample_path(
            &model,
            5,
            1,
            &PathOptions {
                scheme: Some(Scheme::ExactWvagOu),
                ..PathOptions::default()
            },
        );
        assert!(matches!(res, Err(SamplingError::SchemeUnsupported)));
    }

    #[test]
    fn exact_path_satisfies_ar1_reconstruction() {
        let model = paper_wvagou();
        let (path, innov) =
            sample_path_with_innovations(&model, 200, 42, &PathOptions::default()).unwrap();
        assert_eq!(path.scheme, Scheme::ExactWvagOu);
        let growth = (0.5f64).exp();
        for k in 0..200 {
            for j in 0..2 {
                let rec = growth * path.data[(k + 1, j)] - path.data[(k, j)];
                assert!(
                    (rec - innov[(k, j)]).abs() < 1e-12,
                    "reconstruction error {}",
                    (rec - innov[(k, j)]).abs()
                );
            }
        }
    }

    #[test]
    fn fast_reversion_decorrelates_consecutive_rows() {
        let p = paper_wvagou().wvag().clone();
        let model = LdoupModel::new(ModelKind::WvagOu, 50.0, p, 1.0).unwrap();
        let path = sample_path(&model, 2000, 13, &PathOptions::default()).unwrap();
        let xs: Vec<f64> = path.data.column(0).iter().cloned().collect();
        let acf = crate::stats::sample_acf(&xs, 1).unwrap();
        assert!(acf[0].abs() < 3.0 / (2000f64).sqrt(), "lag-1 acf {}", acf[0]);
    }

    #[test]
    fn paper_path_lag1_acf_near_theory() {
        let model = paper_wvagou();
        let path = sample_path(&model, 1000, 99, &PathOptions::default()).unwrap();
        let phi = (-0.5f64).exp();
        for j in 0..2 {
            let xs: Vec<f64> = path.data.column(j).iter().cloned().collect();
            let acf = crate::stats::sample_acf(&xs, 1).unwrap();
            let se = ((1.0 - phi * phi) / 1000.0).sqrt();
            assert!(
                (acf[0] - phi).abs() < 3.0 * se,
                "lag-1 acf {} vs {phi}",
                acf[0]
            );
        }
    }

    #[test]
    fn replicate_endpoint_covariance_matches_theory() {
        let model = paper_wvagou();
        let n = 10_000usize;
        let mut xs = Vec::with_capacity(n);
        for r in 0..n {
            let path = sample_path(&model, 3, 1000 ^ r as u64, &PathOptions::default()).unwrap();
            let e = path.endpoint();
            xs.push((e[0], e[1]));
        }
        let mx = xs.iter().map(|p| p.0).sum::<f64>() / n as f64;
        let my = xs.iter().map(|p| p.1).sum::<f64>() / n as f64;
        let mut cov = 0.0;
        let mut m22 = 0.0;
        for (x, y) in &xs {
            cov += (x - mx) * (y - my);
            m22 += (x - mx).powi(2) * (y - my).powi(2);
        }
        cov /= n as f64;
        m22 /= n as f64;
        let se = ((m22 - cov * cov) / n as f64).sqrt();
        assert!((cov - 0.045).abs() < 4.0 * se, "cov {cov} vs 0.0450");
    }

    #[test]
    fn stationary_density_mass_is_sane_for_both_kinds() {
        let g1 = stationary_density(&paper_wvagou(), None).unwrap();
        assert!((g1.raw_mass - 1.0).abs() < 1e-3);
        // Coarse override keeps the quadrature-based build quick.
        let spec = FourierSpec::dim2(
            1 << 8,
            [2f64.powi(-3) * 0.2f64.sqrt(), 2f64.powi(-3) * 0.04f64.sqrt()],
            [0.09, -0.06],
        );
        let g2 = stationary_density(&paper_ouwvag(), Some(&spec)).unwrap();
        assert!((g2.raw_mass - 1.0).abs() < 5e-3, "raw mass {}", g2.raw_mass);
    }

    #[test]
    fn path_csv_round_trip_preserves_data() {
        let model = paper_wvagou();
        let path = sample_path(&model, 20, 5, &PathOptions::default()).unwrap();
        let mut buf = Vec::new();
        path.write_csv(&mut buf).unwrap();
        let obs = crate::params::ObservationSet::read_csv(&buf[..]).unwrap();
        assert_eq!(obs.data, path.data);
    }
}
