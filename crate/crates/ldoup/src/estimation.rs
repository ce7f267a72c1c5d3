//! Parameter recovery: exact lambda/eta recovery from jump-free triplets,
//! decoupled WVAG-OU maximum likelihood, the stepwise OU-WVAG procedure, and
//! the shared derivative-free optimizer.

use crate::charfn::gauss_legendre;
use crate::fourier::{self, FourierSpec};
use crate::likelihood::{
    self, build_mixture, generic_loglik, marginal_vgou_loglik, spec_1d, spec_2d, LikelihoodError,
    MarginalGeometry, MixtureGeometry,
};
use crate::moments;
use crate::params::{transform, LdoupModel, ModelKind, ObservationSet, WvagParams};
use crate::stats;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EstimationError {
    #[error("no repeated (slope, intercept) line pair found; data may have infinite activity")]
    NoRepeatedLine,
    #[error("recovered slope {0} outside (0, 1)")]
    InvalidSlope(f64),
    #[error("optimizer failed: {0}")]
    OptimizerFailed(String),
    #[error("covariance constraint infeasible: no a in (0, {bound:.4}) gives |Sigma12| < sqrt(S11 S22)")]
    ConstraintInfeasible { bound: f64 },
    #[error("likelihood: {0}")]
    Likelihood(#[from] LikelihoodError),
    #[error("stats: {0}")]
    Stats(#[from] stats::StatsError),
    #[error("params: {0}")]
    Params(#[from] crate::params::ParamErrors),
}

/// Controls for the Nelder-Mead search.
#[derive(Debug, Clone, Copy)]
pub struct OptimOptions {
    pub max_evals: usize,
    /// Simplex diameter below which the search stops as converged.
    pub tol: f64,
    /// Relative initial simplex step.
    pub init_step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        Self {
            max_evals: 2000,
            tol: 1e-6,
            init_step: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub n_evals: usize,
    pub converged: bool,
}

/// Derivative-free ascent (Nelder-Mead) in unconstrained coordinates.
/// Non-finite objective values are treated as -inf.
pub fn optimize<F: FnMut(&[f64]) -> f64>(mut f: F, init: &[f64], opts: &OptimOptions) -> OptimResult {
    let dim = init.len();
    let mut n_evals = 0usize;
    let mut eval = |x: &[f64], n_evals: &mut usize| -> f64 {
        *n_evals += 1;
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::NEG_INFINITY
        }
    };

    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(dim + 1);
    simplex.push(init.to_vec());
    for i in 0..dim {
        let mut p = init.to_vec();
        p[i] += if p[i].abs() > 1e-4 {
            opts.init_step * p[i].abs()
        } else {
            0.2 * opts.init_step
        };
        simplex.push(p);
    }
    let mut values: Vec<f64> = simplex
        .iter()
        .map(|p| eval(p, &mut n_evals))
        .collect();
    let init_value = values[0];
    if values.iter().all(|v| *v == init_value) {
        return OptimResult {
            x: init.to_vec(),
            value: init_value,
            n_evals,
            converged: false,
        };
    }

    let mut converged = false;
    while n_evals < opts.max_evals {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
        let best = order[0];
        let worst = order[dim];
        let second_worst = order[dim - 1];

        let diameter = simplex
            .iter()
            .map(|p| {
                p.iter()
                    .zip(&simplex[best])
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0f64, f64::max)
            })
            .fold(0.0f64, f64::max);
        if diameter < opts.tol {
            converged = true;
            break;
        }

        let mut centroid = vec![0.0; dim];
        for &i in order.iter().take(dim) {
            for d in 0..dim {
                centroid[d] += simplex[i][d];
            }
        }
        for c in centroid.iter_mut() {
            *c /= dim as f64;
        }

        let reflect: Vec<f64> = centroid
            .iter()
            .zip(&simplex[worst])
            .map(|(c, w)| 2.0 * c - w)
            .collect();
        let fr = eval(&reflect, &mut n_evals);

        if fr > values[best] {
            let expand: Vec<f64> = centroid
                .iter()
                .zip(&simplex[worst])
                .map(|(c, w)| 3.0 * c - 2.0 * w)
                .collect();
            let fe = eval(&expand, &mut n_evals);
            if fe > fr {
                simplex[worst] = expand;
                values[worst] = fe;
            } else {
                simplex[worst] = reflect;
                values[worst] = fr;
            }
        } else if fr > values[second_worst] {
            simplex[worst] = reflect;
            values[worst] = fr;
        } else {
            let contract: Vec<f64> = if fr > values[worst] {
                centroid
                    .iter()
                    .zip(&reflect)
                    .map(|(c, r)| 0.5 * (c + r))
                    .collect()
            } else {
                centroid
                    .iter()
                    .zip(&simplex[worst])
                    .map(|(c, w)| 0.5 * (c + w))
                    .collect()
            };
            let fc = eval(&contract, &mut n_evals);
            if fc > values[worst].max(fr) {
                simplex[worst] = contract;
                values[worst] = fc;
            } else {
                // shrink toward the best vertex
                let best_point = simplex[best].clone();
                for i in 0..=dim {
                    if i == best {
                        continue;
                    }
                    for d in 0..dim {
                        simplex[i][d] = 0.5 * (simplex[i][d] + best_point[d]);
                    }
                    values[i] = eval(&simplex[i], &mut n_evals);
                    if n_evals >= opts.max_evals {
                        break;
                    }
                }
            }
        }
    }

    let best = (0..=dim)
        .max_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap())
        .unwrap();
    OptimResult {
        x: simplex[best].clone(),
        value: values[best],
        n_evals,
        converged,
    }
}

/// Golden-section maximization of a unimodal function on [lo, hi].
pub fn maximize_1d<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    tol: f64,
    max_iter: usize,
) -> (f64, f64, usize) {
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut evals = 2;
    for _ in 0..max_iter {
        if (b - a).abs() < tol {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
        evals += 1;
    }
    if fc > fd {
        (c, fc, evals)
    } else {
        (d, fd, evals)
    }
}

/// Result of the exact lambda/eta recovery.
#[derive(Debug, Clone)]
pub struct RecoveryResult {
    pub lambda_hat: f64,
    pub eta_hat: DVector<f64>,
    /// Size of the accepted (slope, intercept) cluster for coordinate 1.
    pub n_matches: usize,
}

/// Relative quantization tolerance for matching (slope, intercept) pairs.
const LINE_EPS: f64 = 1e-7;

#[derive(Debug, Clone, Copy)]
struct LineCluster {
    count: usize,
    c: f64,
    d: f64,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    xs[xs.len() / 2]
}

/// Clusters of (slope, intercept) pairs over consecutive triplets, largest
/// first. Jump-free triplets of a finite-activity path all produce the same
/// line; everything else is almost surely distinct.
fn line_clusters(series: &[f64]) -> Vec<LineCluster> {
    let mut cds: Vec<(f64, f64)> = Vec::new();
    for w in series.windows(3) {
        let denom = w[1] - w[0];
        if denom.abs() < 1e-300 {
            continue;
        }
        let c = (w[2] - w[1]) / denom;
        let d = w[1] - c * w[0];
        if c.is_finite() && d.is_finite() {
            cds.push((c, d));
        }
    }
    cds.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());

    let mut clusters = Vec::new();
    let mut i = 0;
    while i < cds.len() {
        let anchor_c = cds[i].0;
        let mut j = i;
        while j < cds.len() && (cds[j].0 - anchor_c).abs() <= LINE_EPS * (1.0 + anchor_c.abs()) {
            j += 1;
        }
        let mut group: Vec<(f64, f64)> = cds[i..j].to_vec();
        group.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
        let mut s = 0;
        while s < group.len() {
            let anchor_d = group[s].1;
            let mut t = s;
            while t < group.len() && (group[t].1 - anchor_d).abs() <= LINE_EPS * (1.0 + anchor_d.abs())
            {
                t += 1;
            }
            if t - s >= 2 {
                let mut cs: Vec<f64> = group[s..t].iter().map(|g| g.0).collect();
                let mut ds: Vec<f64> = group[s..t].iter().map(|g| g.1).collect();
                clusters.push(LineCluster {
                    count: t - s,
                    c: median(&mut cs),
                    d: median(&mut ds),
                });
            }
            s = t;
        }
        i = j;
    }
    clusters.sort_by(|a, b| b.count.cmp(&a.count));
    clusters
}

/// Recovers lambda and eta exactly from jump-free observation triplets.
///
/// For each coordinate, every consecutive triplet defines the line through
/// (x_k, x_{k+1}) and (x_{k+1}, x_{k+2}); a repeated (slope, intercept) pair
/// identifies a deterministic segment, giving lambda = -log(c)/Delta and
/// eta_k = d/(1 - c).
pub fn recover_lambda_eta(obs: &ObservationSet) -> Result<RecoveryResult, EstimationError> {
    let first = line_clusters(&obs.component(0));
    let best = first.first().ok_or(EstimationError::NoRepeatedLine)?;
    let c = best.c;
    if !(0.0 < c && c < 1.0) {
        return Err(EstimationError::InvalidSlope(c));
    }
    let lambda = -c.ln() / obs.delta;
    let mut eta = DVector::zeros(obs.n());
    eta[0] = best.d / (1.0 - c);
    for k in 1..obs.n() {
        let clusters = line_clusters(&obs.component(k));
        let hit = clusters
            .iter()
            .find(|cl| (cl.c - c).abs() <= 1e-6 * (1.0 + c.abs()))
            .ok_or(EstimationError::NoRepeatedLine)?;
        eta[k] = hit.d / (1.0 - hit.c);
    }
    Ok(RecoveryResult {
        lambda_hat: lambda,
        eta_hat: eta,
        n_matches: best.count,
    })
}

/// Per-stage record of a fit.
#[derive(Debug, Clone, serde::Serialize)]
pub struct StageRecord {
    pub stage: String,
    pub estimates: BTreeMap<String, f64>,
    pub loglik: f64,
    pub n_evals: usize,
}

/// Final estimates plus diagnostics of a fit.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EstimationResult {
    pub theta_hat: BTreeMap<String, f64>,
    pub loglik: f64,
    pub n_evals: usize,
    pub converged: bool,
    pub stage_trace: Vec<StageRecord>,
}

/// Grid and optimizer controls shared by the fitting pipelines.
#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub optim: OptimOptions,
    /// Point count of 1D density grids (span is held at the default).
    pub grid_1d_n: usize,
    /// Point count of 2D density grids.
    pub grid_2d_n: usize,
    /// Relative movement of a variance parameter that triggers a grid
    /// geometry rebuild.
    pub trust_radius: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            optim: OptimOptions::default(),
            grid_1d_n: 1 << 13,
            grid_2d_n: 1 << 10,
            trust_radius: 0.10,
        }
    }
}

fn central_moments(z: &[f64]) -> [f64; 4] {
    let n = z.len() as f64;
    let mean = z.iter().sum::<f64>() / n;
    let mut m = [mean, 0.0, 0.0, 0.0];
    for v in z {
        let d = v - mean;
        m[1] += d * d;
        m[2] += d * d * d;
        m[3] += d * d * d * d;
    }
    m[1] /= n;
    m[2] /= n;
    m[3] /= n;
    m
}

fn column(mat: &DMatrix<f64>, k: usize) -> Vec<f64> {
    mat.column(k).iter().cloned().collect()
}

fn cov_of(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - ma) * (y - mb))
        .sum::<f64>()
        / n
}

/// Method-of-moments start for one WVAG-OU marginal, from the innovation
/// sample moments m2 = 2 g2 Sigma and m4 = 12 Sigma^2 (g4 (alpha+1) - g2).
fn wvagou_marginal_mom(z: &[f64], g: &[f64; 4]) -> (f64, f64) {
    let m = central_moments(z);
    let sigma = (m[1] / (2.0 * g[1])).max(1e-8);
    let alpha = ((m[3] / (12.0 * sigma * sigma) + g[1]) / g[3] - 1.0).clamp(0.05, 20.0);
    (alpha, sigma)
}

/// Decoupled WVAG-OU estimation: marginal ML for (alpha_k, Sigma_kk), then
/// full ML over (a, alpha, Sigma) with the marginal estimates as warm starts.
/// lambda and eta are treated as known.
pub fn fit_wvagou(
    obs: &ObservationSet,
    lambda: f64,
    eta: &DVector<f64>,
    init: Option<&transform::WvagOuTheta>,
    opts: &FitOptions,
) -> Result<EstimationResult, EstimationError> {
    assert_eq!(obs.n(), 2, "decoupled fit is bivariate");
    let delta = obs.delta;
    let g = moments::gammas(lambda, delta);
    let innov = obs.innovations(lambda);
    let mut stage_trace = Vec::new();
    let mut total_evals = 0usize;

    // Step 1: marginal ML per coordinate.
    let mut alpha_hat = [0.0; 2];
    let mut sdiag_hat = [0.0; 2];
    for k in 0..2 {
        let series = obs.component(k);
        let (a0, s0) = match init {
            Some(t) => {
                if k == 0 {
                    (t.alpha1, t.s11)
                } else {
                    (t.alpha2, t.s22)
                }
            }
            None => wvagou_marginal_mom(&column(&innov, k), &g),
        };
        let mut geom_base = s0;
        let mut geom = MarginalGeometry::for_params(lambda, delta, eta[k], s0, opts.grid_1d_n);
        let trust = opts.trust_radius;
        let objective = |x: &[f64]| -> f64 {
            let alpha = x[0].exp();
            let sigma = x[1].exp();
            if (sigma - geom_base).abs() > trust * geom_base {
                geom_base = sigma;
                geom = MarginalGeometry::for_params(lambda, delta, eta[k], sigma, opts.grid_1d_n);
            }
            match marginal_vgou_loglik(lambda, delta, eta[k], alpha, sigma, &series, Some(&geom)) {
                Ok(ll) => ll.value,
                Err(_) => f64::NEG_INFINITY,
            }
        };
        let res = optimize(objective, &[a0.ln(), s0.ln()], &opts.optim);
        if !res.value.is_finite() {
            return Err(EstimationError::OptimizerFailed(format!(
                "marginal stage {k}: objective not finite at start"
            )));
        }
        alpha_hat[k] = res.x[0].exp();
        sdiag_hat[k] = res.x[1].exp();
        total_evals += res.n_evals;
        stage_trace.push(StageRecord {
            stage: format!("marginal-{}", k + 1),
            estimates: BTreeMap::from([
                (format!("alpha{}", k + 1), alpha_hat[k]),
                (format!("sigma{0}{0}", k + 1), sdiag_hat[k]),
            ]),
            loglik: res.value,
            n_evals: res.n_evals,
        });
    }

    // Step 2: joint ML with warm starts.
    let (a0, s12_0) = match init {
        Some(t) => (t.a, t.s12),
        None => {
            let c_innov = cov_of(&column(&innov, 0), &column(&innov, 1));
            let amin = alpha_hat[0].min(alpha_hat[1]);
            let s12_mom = c_innov / (2.0 * g[1] * amin);
            let c_x = cov_of(&obs.component(0), &obs.component(1));
            let a_mom = if s12_mom.abs() > 1e-12 {
                c_x / (amin * s12_mom)
            } else {
                f64::NAN
            };
            let a_cap = 0.999 / alpha_hat[0].max(alpha_hat[1]);
            let a0 = if a_mom.is_finite() {
                a_mom.clamp(0.01 * a_cap, 0.99 * a_cap)
            } else {
                0.5 * a_cap
            };
            (a0, s12_mom)
        }
    };
    let a_cap = (1.0 - 1e-9) / alpha_hat[0].max(alpha_hat[1]);
    let a0 = a0.min(a_cap * (1.0 - 1e-6)).max(1e-6);
    let rho_cap = 0.97;
    let rho0 = (s12_0 / (sdiag_hat[0] * sdiag_hat[1]).sqrt()).clamp(-rho_cap, rho_cap);
    let theta0 = transform::WvagOuTheta {
        a: a0,
        alpha1: alpha_hat[0].min((1.0 - 1e-9) / a0),
        alpha2: alpha_hat[1].min((1.0 - 1e-9) / a0),
        s11: sdiag_hat[0],
        s22: sdiag_hat[1],
        s12: rho0 * (sdiag_hat[0] * sdiag_hat[1]).sqrt(),
    };
    let psi0 = transform::to_unconstrained(&theta0);

    let mut geom_base = (theta0.s11, theta0.s22);
    let build_geometry = |t: &transform::WvagOuTheta| -> (MixtureGeometry, FourierSpec) {
        let m2 = [2.0 * g[1] * t.s11, 2.0 * g[1] * t.s22];
        (
            MixtureGeometry {
                f1: spec_1d(m2[0], 0.0, opts.grid_1d_n),
                f2: spec_1d(m2[1], 0.0, opts.grid_1d_n),
                f0: spec_2d(m2, [0.0, 0.0], opts.grid_2d_n),
            },
            spec_2d([t.s11, t.s22], [eta[0], eta[1]], opts.grid_2d_n),
        )
    };
    let (mut geom, mut stat_spec) = build_geometry(&theta0);
    let eta_vec = eta.clone();
    let trust = opts.trust_radius;
    let objective = |psi: &[f64]| -> f64 {
        let t = transform::from_unconstrained(psi);
        let params = match WvagParams::from_slices(
            t.a,
            &[t.alpha1, t.alpha2],
            &[0.0, 0.0],
            &[vec![t.s11, t.s12], vec![t.s12, t.s22]],
            &[eta_vec[0], eta_vec[1]],
        ) {
            Ok(p) => p,
            Err(_) => return f64::NEG_INFINITY,
        };
        let model = match LdoupModel::new(ModelKind::WvagOu, lambda, params, delta) {
            Ok(m) => m,
            Err(_) => return f64::NEG_INFINITY,
        };
        if (t.s11 - geom_base.0).abs() > trust * geom_base.0
            || (t.s22 - geom_base.1).abs() > trust * geom_base.1
        {
            geom_base = (t.s11, t.s22);
            let rebuilt = build_geometry(&t);
            geom = rebuilt.0;
            stat_spec = rebuilt.1;
        }
        let mix = match build_mixture(&model, Some(&geom)) {
            Ok(m) => m,
            Err(_) => return f64::NEG_INFINITY,
        };
        let stat = match likelihood::wvagou_stationary_density(&model, Some(&stat_spec)) {
            Ok(s) => s,
            Err(_) => return f64::NEG_INFINITY,
        };
        likelihood::wvagou_loglik(&model, obs, &mix, &stat).value
    };
    let res = optimize(objective, &psi0, &opts.optim);
    if !res.value.is_finite() {
        return Err(EstimationError::OptimizerFailed(
            "joint stage: objective not finite at start".into(),
        ));
    }
    total_evals += res.n_evals;
    let t_hat = transform::from_unconstrained(&res.x);
    // Every fit is an ascent: the returned vertex dominates the start.
    let theta_hat = BTreeMap::from([
        ("a".to_string(), t_hat.a),
        ("alpha1".to_string(), t_hat.alpha1),
        ("alpha2".to_string(), t_hat.alpha2),
        ("sigma11".to_string(), t_hat.s11),
        ("sigma22".to_string(), t_hat.s22),
        ("sigma12".to_string(), t_hat.s12),
    ]);
    stage_trace.push(StageRecord {
        stage: "joint".to_string(),
        estimates: theta_hat.clone(),
        loglik: res.value,
        n_evals: res.n_evals,
    });
    debug_assert!(
        crate::params::validate(
            t_hat.a,
            &DVector::from_column_slice(&[t_hat.alpha1, t_hat.alpha2]),
            &DVector::zeros(2),
            &DMatrix::from_row_slice(2, 2, &[t_hat.s11, t_hat.s12, t_hat.s12, t_hat.s22]),
            &eta_vec,
            false,
        )
        .is_empty()
    );
    Ok(EstimationResult {
        theta_hat,
        loglik: res.value,
        n_evals: total_evals,
        converged: res.converged,
        stage_trace,
    })
}

/// Gauss-Legendre nodes mapped onto [0, len], with the e^{sign * t} scale
/// factors the quadrature exponents need.
struct MappedRule {
    scales: Vec<f64>,
    weights: Vec<f64>,
}

fn mapped_rule(n: usize, len: f64, sign: f64) -> MappedRule {
    let rule = gauss_legendre(n);
    let half = 0.5 * len;
    MappedRule {
        scales: rule.0.iter().map(|x| (sign * (half + half * x)).exp()).collect(),
        weights: rule.1.iter().map(|w| w * half).collect(),
    }
}

/// Picks a node count by doubling until the integral of the marginal VG log
/// term stabilizes at the largest grid frequency.
fn calibrate_nodes(
    alpha: f64,
    mu: f64,
    sigma: f64,
    theta_max: f64,
    len: f64,
    sign: f64,
) -> usize {
    let integrand = |s: f64| -> Complex64 {
        let t = s * theta_max;
        -Complex64::new(1.0 + 0.5 * alpha * sigma * t * t, -alpha * mu * t).ln()
    };
    let mut n = 32;
    loop {
        let eval = |nn: usize| -> Complex64 {
            let r = mapped_rule(nn, len, sign);
            r.scales
                .iter()
                .zip(&r.weights)
                .map(|(s, w)| *w * integrand(*s))
                .sum()
        };
        let coarse = eval(n);
        let fine = eval(2 * n);
        if (fine - coarse).norm() <= 1e-10 * (1.0 + fine.norm()) || n >= 1024 {
            return (2 * n).min(1024);
        }
        n *= 2;
    }
}

/// Tabulated CF of one OU-WVAG marginal innovation and stationary law.
fn ouwvag_marginal_grids(
    lambda: f64,
    delta: f64,
    alpha: f64,
    mu: f64,
    sigma: f64,
    eta: f64,
    innov_spec: &FourierSpec,
    stat_spec: &FourierSpec,
    innov_rule: &MappedRule,
    stat_rule: &MappedRule,
) -> Result<(fourier::DensityGrid, fourier::DensityGrid), LikelihoodError> {
    let b = 1.0 / alpha;
    let g1 = (lambda * delta).exp() - 1.0;
    let log_term = |t: f64| -> Complex64 {
        -Complex64::new(1.0 + 0.5 * alpha * sigma * t * t, -alpha * mu * t).ln()
    };
    let build = |spec: &FourierSpec, rule: &MappedRule, drift: f64| {
        let axis = &spec.frequency_axes()[0];
        let values: Vec<Complex64> = axis
            .par_iter()
            .map(|&t| {
                let mut acc = Complex64::new(0.0, 0.0);
                for (s, w) in rule.scales.iter().zip(&rule.weights) {
                    acc += *w * log_term(s * t);
                }
                (b * acc + Complex64::new(0.0, drift * t)).exp()
            })
            .collect();
        fourier::invert_cf_values(spec, values)
    };
    // innovation drift integrates to gamma_1 eta; stationary drift to eta.
    let innov = build(innov_spec, innov_rule, g1 * eta)?;
    let stat = build(stat_spec, stat_rule, eta)?;
    Ok((innov, stat))
}

/// Method-of-moments start for one OU-WVAG marginal.
fn ouwvag_marginal_mom(z: &[f64], g: &[f64; 4]) -> (f64, f64, f64, f64) {
    let m = central_moments(z);
    let big_m2 = (m[1] / g[1]).max(1e-10);
    let alpha = ((m[3] + 3.0 * g[1] * big_m2 * big_m2) / (3.0 * g[3] * big_m2 * big_m2) - 1.0)
        .clamp(0.05, 20.0);
    let mu = (m[2] / g[2]) / (3.0 * alpha * big_m2);
    let sigma = (big_m2 - alpha * mu * mu).max(0.1 * big_m2);
    let eta = m[0] / g[0] - mu;
    (alpha, mu, sigma, eta)
}

/// Warm start for the OU-WVAG marginal stage.
#[derive(Debug, Clone, Copy)]
pub struct OuWvagInit {
    pub alpha: [f64; 2],
    pub mu: [f64; 2],
    pub sigma_diag: [f64; 2],
    pub eta: [f64; 2],
}

/// Joint OU-WVAG likelihood over (a, Sigma12) with everything else frozen.
/// The a-independent per-axis integrals and per-point quadratic forms are
/// cached so a 1-D search over `a` only recomputes the common log term.
struct JointOuWvagLik<'a> {
    obs: &'a ObservationSet,
    lambda: f64,
    delta: f64,
    alpha: [f64; 2],
    eta: [f64; 2],
    innov_spec: FourierSpec,
    stat_spec: FourierSpec,
    innov_rule: MappedRule,
    stat_rule: MappedRule,
    // per-point caches, row-major over the 2D frequency grid
    u0_innov: Vec<f64>,
    qa_innov: Vec<f64>,
    qb_innov: Vec<f64>,
    u0_stat: Vec<f64>,
    qa_stat: Vec<f64>,
    qb_stat: Vec<f64>,
    marg_innov: [Vec<Complex64>; 2],
    marg_stat: [Vec<Complex64>; 2],
    drift_innov: f64,
    drift_stat: f64,
}

impl<'a> JointOuWvagLik<'a> {
    #[allow(clippy::too_many_arguments)]
    fn new(
        obs: &'a ObservationSet,
        lambda: f64,
        alpha: [f64; 2],
        mu: [f64; 2],
        sdiag: [f64; 2],
        eta: [f64; 2],
        grid_n: usize,
    ) -> Self {
        let delta = obs.delta;
        let g = moments::gammas(lambda, delta);
        let m2 = [
            g[1] * (sdiag[0] + alpha[0] * mu[0] * mu[0]),
            g[1] * (sdiag[1] + alpha[1] * mu[1] * mu[1]),
        ];
        let mean = [g[0] * (eta[0] + mu[0]), g[0] * (eta[1] + mu[1])];
        let innov_spec = spec_2d(m2, mean, grid_n);
        let stat_var = [
            0.5 * (sdiag[0] + alpha[0] * mu[0] * mu[0]),
            0.5 * (sdiag[1] + alpha[1] * mu[1] * mu[1]),
        ];
        let stat_spec = spec_2d(stat_var, [eta[0] + mu[0], eta[1] + mu[1]], grid_n);

        let theta_max = |spec: &FourierSpec| -> f64 {
            spec.frequency_axes()
                .iter()
                .flat_map(|ax| ax.iter().map(|t| t.abs()))
                .fold(0.0f64, f64::max)
        };
        let tmax_innov = theta_max(&innov_spec);
        let tmax_stat = theta_max(&stat_spec);
        let t_cut = (tmax_stat.max(1.0) * 2.0 * 1e8).ln();
        let n_innov = calibrate_nodes(alpha[0], mu[0], sdiag[0], tmax_innov, lambda * delta, 1.0);
        let n_stat = calibrate_nodes(alpha[0], mu[0], sdiag[0], tmax_stat, t_cut, -1.0);
        let innov_rule = mapped_rule(n_innov, lambda * delta, 1.0);
        let stat_rule = mapped_rule(n_stat, t_cut, -1.0);

        let fill = |spec: &FourierSpec| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
            let axes = spec.frequency_axes();
            let n = spec.n_points;
            let mut u0 = vec![0.0; n * n];
            let mut qa = vec![0.0; n * n];
            let mut qb = vec![0.0; n * n];
            for k1 in 0..n {
                let t1 = axes[0][k1];
                for k2 in 0..n {
                    let t2 = axes[1][k2];
                    let idx = k1 * n + k2;
                    u0[idx] = alpha[0] * mu[0] * t1 + alpha[1] * mu[1] * t2;
                    qa[idx] = alpha[0] * sdiag[0] * t1 * t1 + alpha[1] * sdiag[1] * t2 * t2;
                    qb[idx] = 2.0 * alpha[0].min(alpha[1]) * t1 * t2;
                }
            }
            (u0, qa, qb)
        };
        let (u0_innov, qa_innov, qb_innov) = fill(&innov_spec);
        let (u0_stat, qa_stat, qb_stat) = fill(&stat_spec);

        // a-independent marginal log integrals per axis frequency
        let marg_table = |spec: &FourierSpec, rule: &MappedRule, k: usize| -> Vec<Complex64> {
            spec.frequency_axes()[k]
                .par_iter()
                .map(|&t| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (s, w) in rule.scales.iter().zip(&rule.weights) {
                        let st = s * t;
                        acc -= *w
                            * Complex64::new(
                                1.0 + 0.5 * alpha[k] * sdiag[k] * st * st,
                                -alpha[k] * mu[k] * st,
                            )
                            .ln();
                    }
                    acc
                })
                .collect()
        };
        let marg_innov = [
            marg_table(&innov_spec, &innov_rule, 0),
            marg_table(&innov_spec, &innov_rule, 1),
        ];
        let marg_stat = [
            marg_table(&stat_spec, &stat_rule, 0),
            marg_table(&stat_spec, &stat_rule, 1),
        ];

        Self {
            obs,
            lambda,
            delta,
            alpha,
            eta,
            innov_spec,
            stat_spec,
            innov_rule,
            stat_rule,
            u0_innov,
            qa_innov,
            qb_innov,
            u0_stat,
            qa_stat,
            qb_stat,
            marg_innov,
            marg_stat,
            drift_innov: g[0],
            drift_stat: 1.0 - (-t_cut).exp(),
        }
    }

    fn cf_values(
        &self,
        spec: &FourierSpec,
        rule: &MappedRule,
        u0: &[f64],
        qa: &[f64],
        qb: &[f64],
        marg: &[Vec<Complex64>; 2],
        drift_scale: f64,
        a: f64,
        sigma12: f64,
    ) -> Vec<Complex64> {
        let n = spec.n_points;
        let axes = spec.frequency_axes();
        let b1 = (1.0 - a * self.alpha[0]) / self.alpha[0];
        let b2 = (1.0 - a * self.alpha[1]) / self.alpha[1];
        let eta = self.eta;
        (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let (k1, k2) = (idx / n, idx % n);
                let q_lin = qa[idx] + sigma12 * qb[idx];
                let mut common = Complex64::new(0.0, 0.0);
                for (s, w) in rule.scales.iter().zip(&rule.weights) {
                    common -= *w
                        * Complex64::new(1.0 + 0.5 * s * s * q_lin, -s * u0[idx]).ln();
                }
                let drift = drift_scale * (eta[0] * axes[0][k1] + eta[1] * axes[1][k2]);
                (a * common
                    + b1 * marg[0][k1]
                    + b2 * marg[1][k2]
                    + Complex64::new(0.0, drift))
                .exp()
            })
            .collect()
    }

    fn eval(&self, a: f64, sigma12: f64) -> f64 {
        let innov = self.cf_values(
            &self.innov_spec,
            &self.innov_rule,
            &self.u0_innov,
            &self.qa_innov,
            &self.qb_innov,
            &self.marg_innov,
            self.drift_innov,
            a,
            sigma12,
        );
        let stat = self.cf_values(
            &self.stat_spec,
            &self.stat_rule,
            &self.u0_stat,
            &self.qa_stat,
            &self.qb_stat,
            &self.marg_stat,
            self.drift_stat,
            a,
            sigma12,
        );
        let innov_grid = match fourier::invert_cf_values(&self.innov_spec, innov) {
            Ok(g) => g,
            Err(_) => return f64::NEG_INFINITY,
        };
        let stat_grid = match fourier::invert_cf_values(&self.stat_spec, stat) {
            Ok(g) => g,
            Err(_) => return f64::NEG_INFINITY,
        };
        generic_loglik(self.lambda, self.delta, self.obs, &innov_grid, &stat_grid).value
    }
}

/// Stepwise OU-WVAG estimation: lambda from lag-Delta autocorrelation
/// matching, marginal ML for (alpha_k, mu_k, Sigma_kk, eta_k), then a 1-D
/// joint search over a with Sigma12 pinned by the covariance constraint.
pub fn fit_ouwvag(
    obs: &ObservationSet,
    init: Option<&OuWvagInit>,
    opts: &FitOptions,
) -> Result<EstimationResult, EstimationError> {
    assert_eq!(obs.n(), 2, "stepwise fit is bivariate");
    let delta = obs.delta;
    let mut stage_trace = Vec::new();
    let mut total_evals = 0usize;

    // Step 1: e^{-lambda Delta} matched to the mean lag-1 autocorrelation.
    let rho1 = stats::sample_acf(&obs.component(0), 1)?[0];
    let rho2 = stats::sample_acf(&obs.component(1), 1)?[0];
    let u = (0.5 * (rho1 + rho2)).clamp(1e-6, 1.0 - 1e-6);
    let lambda = -u.ln() / delta;
    stage_trace.push(StageRecord {
        stage: "acf-lambda".to_string(),
        estimates: BTreeMap::from([("lambda".to_string(), lambda)]),
        loglik: f64::NAN,
        n_evals: 0,
    });

    let g = moments::gammas(lambda, delta);
    let innov = obs.innovations(lambda);

    // Step 2: marginal ML per coordinate given lambda.
    let mut alpha_hat = [0.0; 2];
    let mut mu_hat = [0.0; 2];
    let mut sdiag_hat = [0.0; 2];
    let mut eta_hat = [0.0; 2];
    for k in 0..2 {
        let series = obs.component(k);
        let obs_k = ObservationSet::new(
            DMatrix::from_iterator(series.len(), 1, series.iter().cloned()),
            delta,
        )
        .expect("column observation set");
        let (a0, mu0, s0, e0) = match init {
            Some(t) => (t.alpha[k], t.mu[k], t.sigma_diag[k], t.eta[k]),
            None => ouwvag_marginal_mom(&column(&innov, k), &g),
        };
        let grid_n = opts.grid_1d_n;
        let build_specs = |alpha: f64, mu: f64, sigma: f64, eta: f64| {
            let m2_vg = sigma + alpha * mu * mu;
            (
                spec_1d(g[1] * m2_vg, g[0] * (eta + mu), grid_n),
                spec_1d(0.5 * m2_vg, eta + mu, grid_n),
            )
        };
        let (innov_spec0, stat_spec0) = build_specs(a0, mu0, s0, e0);
        let theta_max = innov_spec0.frequency_axes()[0]
            .iter()
            .fold(0.0f64, |m, t| m.max(t.abs()));
        let stat_theta_max = stat_spec0.frequency_axes()[0]
            .iter()
            .fold(0.0f64, |m, t| m.max(t.abs()));
        let t_cut = (stat_theta_max.max(1.0) * 1e8).ln();
        let innov_rule = mapped_rule(
            calibrate_nodes(a0, mu0, s0, theta_max, lambda * delta, 1.0),
            lambda * delta,
            1.0,
        );
        let stat_rule = mapped_rule(
            calibrate_nodes(a0, mu0, s0, stat_theta_max, t_cut, -1.0),
            t_cut,
            -1.0,
        );
        let mut base_m2 = s0 + a0 * mu0 * mu0;
        let mut specs = (innov_spec0, stat_spec0);
        let trust = opts.trust_radius;
        let objective = |x: &[f64]| -> f64 {
            let (alpha, mu, sigma, eta) = (x[0].exp(), x[1], x[2].exp(), x[3]);
            let m2_vg = sigma + alpha * mu * mu;
            if (m2_vg - base_m2).abs() > trust * base_m2 {
                base_m2 = m2_vg;
                specs = build_specs(alpha, mu, sigma, eta);
            }
            match ouwvag_marginal_grids(
                lambda, delta, alpha, mu, sigma, eta, &specs.0, &specs.1, &innov_rule, &stat_rule,
            ) {
                Ok((fi, fs)) => generic_loglik(lambda, delta, &obs_k, &fi, &fs).value,
                Err(_) => f64::NEG_INFINITY,
            }
        };
        let res = optimize(objective, &[a0.ln(), mu0, s0.ln(), e0], &opts.optim);
        if !res.value.is_finite() {
            return Err(EstimationError::OptimizerFailed(format!(
                "ou-wvag marginal stage {k}: objective not finite at start"
            )));
        }
        alpha_hat[k] = res.x[0].exp();
        mu_hat[k] = res.x[1];
        sdiag_hat[k] = res.x[2].exp();
        eta_hat[k] = res.x[3];
        total_evals += res.n_evals;
        stage_trace.push(StageRecord {
            stage: format!("marginal-{}", k + 1),
            estimates: BTreeMap::from([
                (format!("alpha{}", k + 1), alpha_hat[k]),
                (format!("mu{}", k + 1), mu_hat[k]),
                (format!("sigma{0}{0}", k + 1), sdiag_hat[k]),
                (format!("eta{}", k + 1), eta_hat[k]),
            ]),
            loglik: res.value,
            n_evals: res.n_evals,
        });
    }

    // Step 3: joint 1-D search over a with Sigma12 solved from the
    // covariance constraint gamma_2 a ((a1^a2) S12 + a1 a2 mu1 mu2) = c_hat.
    let c_hat = cov_of(&column(&innov, 0), &column(&innov, 1));
    let amin = alpha_hat[0].min(alpha_hat[1]);
    let mu_prod = alpha_hat[0] * alpha_hat[1] * mu_hat[0] * mu_hat[1];
    let s12_of_a = |a: f64| -> f64 { (c_hat / (g[1] * a) - mu_prod) / amin };
    let s12_bound = (sdiag_hat[0] * sdiag_hat[1]).sqrt();
    let a_cap = (1.0 - 1e-9) / alpha_hat[0].max(alpha_hat[1]);

    // The implied Sigma12 is monotone in a, so the feasible set is an
    // interval. Locate it with a cheap scan before the golden search.
    let scan = 512;
    let mut lo = None;
    let mut hi = None;
    for i in 0..=scan {
        let a = a_cap * (i as f64 + 0.5) / (scan as f64 + 1.0);
        if s12_of_a(a).abs() < s12_bound {
            if lo.is_none() {
                lo = Some(a);
            }
            hi = Some(a);
        }
    }
    let (a_lo, a_hi) = match (lo, hi) {
        (Some(l), Some(h)) if h > l => (l, h),
        _ => return Err(EstimationError::ConstraintInfeasible { bound: a_cap }),
    };

    let joint = JointOuWvagLik::new(obs, lambda, alpha_hat, mu_hat, sdiag_hat, eta_hat, opts.grid_2d_n);
    let (a_hat, joint_ll, evals) = maximize_1d(
        |a| joint.eval(a, s12_of_a(a)),
        a_lo,
        a_hi,
        1e-3 * a_cap,
        40,
    );
    total_evals += evals;
    if !joint_ll.is_finite() {
        return Err(EstimationError::OptimizerFailed(
            "joint 1-D stage: objective not finite".into(),
        ));
    }
    let s12_hat = s12_of_a(a_hat);
    let theta_hat = BTreeMap::from([
        ("lambda".to_string(), lambda),
        ("a".to_string(), a_hat),
        ("alpha1".to_string(), alpha_hat[0]),
        ("alpha2".to_string(), alpha_hat[1]),
        ("mu1".to_string(), mu_hat[0]),
        ("mu2".to_string(), mu_hat[1]),
        ("sigma11".to_string(), sdiag_hat[0]),
        ("sigma22".to_string(), sdiag_hat[1]),
        ("sigma12".to_string(), s12_hat),
        ("eta1".to_string(), eta_hat[0]),
        ("eta2".to_string(), eta_hat[1]),
    ]);
    stage_trace.push(StageRecord {
        stage: "joint-a".to_string(),
        estimates: BTreeMap::from([
            ("a".to_string(), a_hat),
            ("sigma12".to_string(), s12_hat),
        ]),
        loglik: joint_ll,
        n_evals: evals,
    });
    Ok(EstimationResult {
        theta_hat,
        loglik: joint_ll,
        n_evals: total_evals,
        converged: true,
        stage_trace,
    })
}
