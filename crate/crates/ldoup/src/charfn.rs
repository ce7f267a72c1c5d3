//! Characteristic exponents and functions: closed forms for the WVAG law,
//! the WVAG-OU BDLP and innovation, the mixture components of the WVAG-OU
//! innovation, and quadrature-based exponents for models that only have an
//! integral representation.

use crate::params::{LdoupModel, ModelKind, WvagParams};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};
use thiserror::Error;

/// Value of a characteristic exponent or function at one frequency.
pub type CharValue = Complex64;

#[derive(Debug, Error)]
pub enum CharFnError {
    #[error("quadrature did not converge: last node-doubling change {change:.3e} at {nodes} nodes")]
    QuadratureNotConverged { change: f64, nodes: usize },
    #[error("operation supports n = 2 only, got n = {0}")]
    DimensionUnsupported(usize),
}

fn quad_form(sigma: &DMatrix<f64>, theta: &[f64]) -> f64 {
    let n = theta.len();
    let mut s = 0.0;
    for k in 0..n {
        for l in 0..n {
            s += theta[k] * sigma[(k, l)] * theta[l];
        }
    }
    s
}

fn dot(a: &DVector<f64>, theta: &[f64]) -> f64 {
    a.iter().zip(theta).map(|(x, t)| x * t).sum()
}

/// Characteristic exponent of W ~ WVAG^n(a, alpha, mu, Sigma, eta).
///
/// The log arguments have real part >= 1, so the principal branch is smooth
/// and no unwinding is needed.
pub fn wvag_psi(params: &WvagParams, theta: &[f64]) -> CharValue {
    let a = params.a();
    let adm = params.alpha_diamond_mu();
    let ads = params.alpha_diamond_sigma();
    let drift = dot(params.eta(), theta);
    let common = Complex64::new(1.0 + 0.5 * quad_form(&ads, theta), -dot(&adm, theta));
    let mut psi = Complex64::new(0.0, drift) - a * common.ln();
    for k in 0..params.n() {
        let tk = theta[k];
        let alpha_k = params.alpha()[k];
        let arg = Complex64::new(
            1.0 + 0.5 * alpha_k * params.sigma()[(k, k)] * tk * tk,
            -alpha_k * params.mu()[k] * tk,
        );
        psi -= params.betas()[k] * arg.ln();
    }
    psi
}

/// Characteristic function of W(t) for W ~ WVAG^n.
pub fn wvag_cf(params: &WvagParams, theta: &[f64], t: f64) -> CharValue {
    (t * wvag_psi(params, theta)).exp()
}

/// Characteristic exponent of the univariate VG^1(b, mu, sigma2) process.
pub fn vg_psi(b: f64, mu: f64, sigma2: f64, theta: f64) -> CharValue {
    let arg = Complex64::new(1.0 + 0.5 * sigma2 * theta * theta / b, -mu * theta / b);
    -b * arg.ln()
}

/// BDLP exponent of a WVAG-OU model: a rational function, no logs.
pub fn wvagou_bdlp_psi(model: &LdoupModel, theta: &[f64]) -> CharValue {
    assert_eq!(model.kind(), ModelKind::WvagOu, "BDLP closed form requires a WVAG-OU model");
    let p = model.wvag();
    let ads = p.alpha_diamond_sigma();
    let q0 = quad_form(&ads, theta);
    let mut re = -p.a() * q0 / (1.0 + 0.5 * q0);
    for k in 0..p.n() {
        let qk = p.alpha()[k] * p.sigma()[(k, k)] * theta[k] * theta[k];
        re -= p.betas()[k] * qk / (1.0 + 0.5 * qk);
    }
    Complex64::new(re, dot(p.eta(), theta))
}

/// Innovation exponent of a WVAG-OU model in closed form.
pub fn wvagou_zstar_psi(model: &LdoupModel, theta: &[f64]) -> CharValue {
    assert_eq!(model.kind(), ModelKind::WvagOu, "innovation closed form requires a WVAG-OU model");
    let p = model.wvag();
    let e2 = (2.0 * model.lambda() * model.delta()).exp();
    let growth = (model.lambda() * model.delta()).exp() - 1.0;
    let ads = p.alpha_diamond_sigma();
    let q0 = 0.5 * quad_form(&ads, theta);
    let mut re = -p.a() * ((1.0 + q0 * e2) / (1.0 + q0)).ln();
    for k in 0..p.n() {
        let qk = 0.5 * p.alpha()[k] * p.sigma()[(k, k)] * theta[k] * theta[k];
        re -= p.betas()[k] * ((1.0 + qk * e2) / (1.0 + qk)).ln();
    }
    Complex64::new(re, growth * dot(p.eta(), theta))
}

/// Characteristic function of the WVAG-OU innovation.
pub fn wvagou_zstar_cf(model: &LdoupModel, theta: &[f64]) -> CharValue {
    wvagou_zstar_psi(model, theta).exp()
}

/// Gauss-Legendre rule; nodes and weights on [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QuadRule {
    GaussLegendre,
}

/// Integration controls for the quadrature-based exponents.
#[derive(Debug, Clone, Copy)]
pub struct QuadratureSpec {
    pub rule: QuadRule,
    /// Starting node count; doubled adaptively up to 4096.
    pub nodes: usize,
    /// Truncation of the improper stationary integral.
    pub t_max: f64,
}

impl QuadratureSpec {
    /// Picks t_max so that e^{-t_max} * theta_max <= 1e-12, which bounds the
    /// integrand (dominated by its drift term O(s) in the scaled frequency)
    /// below 1e-12 at the truncation point.
    pub fn for_theta_max(theta_max: f64) -> Self {
        Self {
            rule: QuadRule::GaussLegendre,
            nodes: 64,
            t_max: (theta_max.max(1.0) * 1e12).ln(),
        }
    }
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self::for_theta_max(1.0)
    }
}

/// Quadrature value plus convergence diagnostics.
#[derive(Debug, Clone, Copy)]
pub struct QuadResult {
    pub value: CharValue,
    pub nodes_used: usize,
    /// Magnitude of the integrand at the truncation point (stationary case).
    pub tail_bound: f64,
}

static GL_CACHE: OnceLock<Mutex<HashMap<usize, Arc<(Vec<f64>, Vec<f64>)>>>> = OnceLock::new();

/// Nodes and weights of the n-point Gauss-Legendre rule on [-1, 1].
pub fn gauss_legendre(n: usize) -> Arc<(Vec<f64>, Vec<f64>)> {
    let cache = GL_CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(hit) = cache.lock().unwrap().get(&n) {
        return hit.clone();
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Tricomi initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p0 = 1.0;
            let mut p1 = x;
            for j in 2..=n {
                let jf = j as f64;
                let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
                p0 = p1;
                p1 = p2;
            }
            pp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / pp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * pp * pp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    let entry = Arc::new((nodes, weights));
    cache.lock().unwrap().insert(n, entry.clone());
    entry
}

/// Gauss-Legendre integral of a complex-valued function over [a, b].
pub fn gl_integrate<F: Fn(f64) -> Complex64>(f: F, a: f64, b: f64, n: usize) -> Complex64 {
    let rule = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    let mut acc = Complex64::new(0.0, 0.0);
    for (x, w) in rule.0.iter().zip(rule.1.iter()) {
        acc += *w * f(mid + half * x);
    }
    half * acc
}

const QUAD_REL_TOL: f64 = 1e-9;
const QUAD_FAIL_TOL: f64 = 1e-8;
const QUAD_MAX_NODES: usize = 4096;

fn adaptive_gl<F: Fn(f64) -> Complex64>(
    f: &F,
    a: f64,
    b: f64,
    start_nodes: usize,
) -> Result<(CharValue, usize), CharFnError> {
    let mut n = start_nodes.max(16);
    let mut prev = gl_integrate(f, a, b, n);
    loop {
        let n2 = n * 2;
        let cur = gl_integrate(f, a, b, n2);
        let change = (cur - prev).norm();
        if change <= QUAD_REL_TOL * (1.0 + cur.norm()) {
            return Ok((cur, n2));
        }
        if n2 >= QUAD_MAX_NODES {
            if change <= QUAD_FAIL_TOL * (1.0 + cur.norm()) {
                return Ok((cur, n2));
            }
            return Err(CharFnError::QuadratureNotConverged { change, nodes: n2 });
        }
        prev = cur;
        n = n2;
    }
}

/// Stationary-law exponent Psi_Y(theta) = int_0^inf Psi_Z(e^{-t} theta) dt,
/// truncated at `quad.t_max` and evaluated by adaptive Gauss-Legendre.
pub fn ou_stationary_psi<F: Fn(&[f64]) -> CharValue>(
    bdlp_psi: F,
    theta: &[f64],
    quad: &QuadratureSpec,
) -> Result<QuadResult, CharFnError> {
    let mut scaled = vec![0.0; theta.len()];
    let integrand = |t: f64| {
        let s = (-t).exp();
        let mut buf = vec![0.0; theta.len()];
        for (b, &th) in buf.iter_mut().zip(theta) {
            *b = s * th;
        }
        bdlp_psi(&buf)
    };
    let (value, nodes_used) = adaptive_gl(&integrand, 0.0, quad.t_max, quad.nodes)?;
    let s = (-quad.t_max).exp();
    for (b, &th) in scaled.iter_mut().zip(theta) {
        *b = s * th;
    }
    let tail_bound = bdlp_psi(&scaled).norm();
    Ok(QuadResult {
        value,
        nodes_used,
        tail_bound,
    })
}

/// Innovation exponent Psi_{Z*(Delta)}(theta) = int_0^{lambda Delta} Psi_Z(e^t theta) dt.
pub fn ou_zstar_psi<F: Fn(&[f64]) -> CharValue>(
    bdlp_psi: F,
    lambda: f64,
    delta: f64,
    theta: &[f64],
    quad: &QuadratureSpec,
) -> Result<QuadResult, CharFnError> {
    let integrand = |t: f64| {
        let s = t.exp();
        let mut buf = vec![0.0; theta.len()];
        for (b, &th) in buf.iter_mut().zip(theta) {
            *b = s * th;
        }
        bdlp_psi(&buf)
    };
    let (value, nodes_used) = adaptive_gl(&integrand, 0.0, lambda * delta, quad.nodes)?;
    Ok(QuadResult {
        value,
        nodes_used,
        tail_bound: 0.0,
    })
}

/// Mixture weights (p, p1, p2, p0) of the n = 2 WVAG-OU innovation.
#[derive(Debug, Clone, Copy)]
pub struct MixtureProbs {
    pub p: f64,
    pub p1: f64,
    pub p2: f64,
    pub p0: f64,
}

pub fn mixture_probabilities(model: &LdoupModel) -> Result<MixtureProbs, CharFnError> {
    assert_eq!(model.kind(), ModelKind::WvagOu);
    if model.n() != 2 {
        return Err(CharFnError::DimensionUnsupported(model.n()));
    }
    let ld = model.lambda() * model.delta();
    let a = model.wvag().a();
    let b1 = model.wvag().betas()[0];
    let b2 = model.wvag().betas()[1];
    let p = (-2.0 * (a + b1 + b2) * ld).exp();
    let p1 = (-2.0 * a * ld).exp() * (1.0 - (-2.0 * b1 * ld).exp()) * (-2.0 * b2 * ld).exp();
    let p2 = (-2.0 * a * ld).exp() * (-2.0 * b1 * ld).exp() * (1.0 - (-2.0 * b2 * ld).exp());
    Ok(MixtureProbs {
        p,
        p1,
        p2,
        p0: 1.0 - p - p1 - p2,
    })
}

/// Which mixture component: the axis laws f1, f2 or the planar law f0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MixturePart {
    Axis1,
    Axis2,
    Plane,
}

fn axis_ratio(model: &LdoupModel, k: usize, theta_k: f64) -> f64 {
    let p = model.wvag();
    let e2 = (2.0 * model.lambda() * model.delta()).exp();
    let q = 0.5 * p.alpha()[k] * p.sigma()[(k, k)] * theta_k * theta_k;
    (1.0 + q * e2) / (1.0 + q)
}

fn axis_component_cf(model: &LdoupModel, k: usize, theta_k: f64) -> f64 {
    let beta = model.wvag().betas()[k];
    let q = (-2.0 * beta * model.lambda() * model.delta()).exp();
    (axis_ratio(model, k, theta_k).powf(-beta) - q) / (1.0 - q)
}

/// Characteristic function of one mixture component of the WVAG-OU innovation
/// (n = 2). `Axis1`/`Axis2` take a scalar frequency, `Plane` takes theta in R^2.
pub fn mixture_component_cf(
    model: &LdoupModel,
    part: MixturePart,
    theta: &[f64],
) -> Result<CharValue, CharFnError> {
    if model.n() != 2 {
        return Err(CharFnError::DimensionUnsupported(model.n()));
    }
    match part {
        MixturePart::Axis1 => Ok(Complex64::new(axis_component_cf(model, 0, theta[0]), 0.0)),
        MixturePart::Axis2 => Ok(Complex64::new(axis_component_cf(model, 1, theta[0]), 0.0)),
        MixturePart::Plane => {
            let probs = mixture_probabilities(model)?;
            // e^{-i<theta, zeta>} Phi_{Z*}(theta): the drift atom cancels,
            // leaving a real product of the three ratio powers.
            let p = model.wvag();
            let e2 = (2.0 * model.lambda() * model.delta()).exp();
            let ads = p.alpha_diamond_sigma();
            let q0 = 0.5 * quad_form(&ads, theta);
            let centered = ((1.0 + q0 * e2) / (1.0 + q0)).powf(-p.a())
                * axis_ratio(model, 0, theta[0]).powf(-p.betas()[0])
                * axis_ratio(model, 1, theta[1]).powf(-p.betas()[1]);
            let v = (centered
                - probs.p
                - probs.p1 * axis_component_cf(model, 0, theta[0])
                - probs.p2 * axis_component_cf(model, 1, theta[1]))
                / probs.p0;
            Ok(Complex64::new(v, 0.0))
        }
    }
}

/// Continuous part of the WVAG-OU marginal innovation law: the characteristic
/// function of (Z_k*(Delta) - zeta_k) conditional on at least one jump.
pub fn vgou_marginal_innovation_cf(
    alpha_k: f64,
    sigma_kk: f64,
    lambda: f64,
    delta: f64,
    theta: f64,
) -> f64 {
    let e2 = (2.0 * lambda * delta).exp();
    let q = 0.5 * alpha_k * sigma_kk * theta * theta;
    let ratio = (1.0 + q * e2) / (1.0 + q);
    let p = (-(2.0 / alpha_k) * lambda * delta).exp();
    (ratio.powf(-1.0 / alpha_k) - p) / (1.0 - p)
}

/// Atom weight p = e^{-(2/alpha_k) lambda Delta} of the marginal innovation.
pub fn vgou_marginal_atom_prob(alpha_k: f64, lambda: f64, delta: f64) -> f64 {
    (-(2.0 / alpha_k) * lambda * delta).exp()
}
