//! Parameter containers, validation and derived quantities shared by every
//! other module, plus the JSON model-config and CSV observation formats.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

/// A single violated parameter invariant.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParamError {
    #[error("a must be a positive finite real, got {0}")]
    NonPositiveA(f64),
    #[error("alpha[{k}] = {alpha} violates a*alpha < 1 with a = {a} (alpha must lie in (0, 1/a))")]
    AlphaOutOfRange { k: usize, alpha: f64, a: f64 },
    #[error("Sigma is not symmetric: |Sigma[{i}][{j}] - Sigma[{j}][{i}]| = {diff}")]
    SigmaNotSymmetric { i: usize, j: usize, diff: f64 },
    #[error("Sigma is not positive semidefinite: min eigenvalue {0}")]
    SigmaNotPsd(f64),
    #[error("Sigma is singular (min eigenvalue {0}) but invertibility is required")]
    SigmaSingular(f64),
    #[error("{field} contains a non-finite entry")]
    NonFinite { field: &'static str },
    #[error("dimension mismatch: {field} has length {got}, expected {expected}")]
    DimensionMismatch {
        field: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("lambda must be a positive finite real, got {0}")]
    NonPositiveLambda(f64),
    #[error("delta must be a positive finite real, got {0}")]
    NonPositiveDelta(f64),
    #[error("a WVAG-OU model requires mu = 0 for stationarity, got mu[{k}] = {mu}")]
    NonZeroMu { k: usize, mu: f64 },
}

/// Every violation found, not just the first.
#[derive(Debug, Clone, Error)]
#[error("invalid parameters: {}", .0.iter().map(|e| e.to_string()).collect::<Vec<_>>().join("; "))]
pub struct ParamErrors(pub Vec<ParamError>);

/// Relative eigenvalue floor absorbing rounding in the PSD test.
const PSD_EIG_FLOOR: f64 = 1e-10;
/// Relative eigenvalue threshold below which Sigma counts as singular.
const SINGULAR_EIG_FLOOR: f64 = 1e-12;

/// Parameter vector (a, alpha, mu, Sigma, eta) of a WVAG law.
///
/// Immutable after construction; `betas` is derived at build time.
#[derive(Debug, Clone, PartialEq)]
pub struct WvagParams {
    a: f64,
    alpha: DVector<f64>,
    mu: DVector<f64>,
    sigma: DMatrix<f64>,
    eta: DVector<f64>,
    betas: DVector<f64>,
}

/// Checks the base invariants and returns every violation found.
pub fn validate(
    a: f64,
    alpha: &DVector<f64>,
    mu: &DVector<f64>,
    sigma: &DMatrix<f64>,
    eta: &DVector<f64>,
    require_invertible: bool,
) -> Vec<ParamError> {
    let mut errs = Vec::new();
    let n = alpha.len();

    if !(a.is_finite() && a > 0.0) {
        errs.push(ParamError::NonPositiveA(a));
    }
    for (field, v) in [("alpha", alpha), ("mu", mu), ("eta", eta)] {
        if v.iter().any(|x| !x.is_finite()) {
            errs.push(ParamError::NonFinite { field });
        }
    }
    if sigma.iter().any(|x| !x.is_finite()) {
        errs.push(ParamError::NonFinite { field: "sigma" });
    }
    for (field, len) in [("mu", mu.len()), ("eta", eta.len())] {
        if len != n {
            errs.push(ParamError::DimensionMismatch {
                field,
                got: len,
                expected: n,
            });
        }
    }
    if sigma.nrows() != n || sigma.ncols() != n {
        errs.push(ParamError::DimensionMismatch {
            field: "sigma",
            got: sigma.nrows(),
            expected: n,
        });
    }
    if !errs.is_empty() {
        // Shape or finiteness is already broken; the numeric checks below
        // would only cascade.
        return errs;
    }

    if a > 0.0 {
        for k in 0..n {
            let ak = alpha[k];
            if !(ak > 0.0 && a * ak < 1.0) {
                errs.push(ParamError::AlphaOutOfRange { k, alpha: ak, a });
            }
        }
    }

    let mut symmetric = true;
    for i in 0..n {
        for j in (i + 1)..n {
            let diff = (sigma[(i, j)] - sigma[(j, i)]).abs();
            let scale = sigma[(i, j)].abs().max(sigma[(j, i)].abs()).max(1.0);
            if diff > 1e-12 * scale {
                errs.push(ParamError::SigmaNotSymmetric { i, j, diff });
                symmetric = false;
            }
        }
    }
    if symmetric {
        let norm = sigma.norm().max(1e-300);
        let eigs = sigma.clone().symmetric_eigenvalues();
        let min_eig = eigs.iter().cloned().fold(f64::INFINITY, f64::min);
        if min_eig < -PSD_EIG_FLOOR * norm {
            errs.push(ParamError::SigmaNotPsd(min_eig));
        } else if require_invertible && min_eig <= SINGULAR_EIG_FLOOR * norm {
            errs.push(ParamError::SigmaSingular(min_eig));
        }
    }

    errs
}

impl WvagParams {
    /// Builds and validates a parameter set; `betas` is derived here.
    pub fn new(
        a: f64,
        alpha: DVector<f64>,
        mu: DVector<f64>,
        sigma: DMatrix<f64>,
        eta: DVector<f64>,
    ) -> Result<Self, ParamErrors> {
        let errs = validate(a, &alpha, &mu, &sigma, &eta, false);
        if !errs.is_empty() {
            return Err(ParamErrors(errs));
        }
        let betas = alpha.map(|ak| (1.0 - a * ak) / ak);
        Ok(Self {
            a,
            alpha,
            mu,
            sigma,
            eta,
            betas,
        })
    }

    /// Convenience constructor from slices.
    pub fn from_slices(
        a: f64,
        alpha: &[f64],
        mu: &[f64],
        sigma: &[Vec<f64>],
        eta: &[f64],
    ) -> Result<Self, ParamErrors> {
        let n = alpha.len();
        let mut s = DMatrix::zeros(sigma.len(), sigma.first().map_or(0, |r| r.len()));
        for (i, row) in sigma.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                s[(i, j)] = *v;
            }
        }
        let _ = n;
        Self::new(
            a,
            DVector::from_column_slice(alpha),
            DVector::from_column_slice(mu),
            s,
            DVector::from_column_slice(eta),
        )
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn alpha(&self) -> &DVector<f64> {
        &self.alpha
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn eta(&self) -> &DVector<f64> {
        &self.eta
    }

    /// beta_k = (1 - a*alpha_k)/alpha_k, positive for valid parameters.
    pub fn betas(&self) -> &DVector<f64> {
        &self.betas
    }

    /// Componentwise product (alpha_1 mu_1, ..., alpha_n mu_n).
    pub fn alpha_diamond_mu(&self) -> DVector<f64> {
        self.alpha.component_mul(&self.mu)
    }

    /// The matrix with entries Sigma_kl * min(alpha_k, alpha_l).
    pub fn alpha_diamond_sigma(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(n, n, |k, l| self.sigma[(k, l)] * self.alpha[k].min(self.alpha[l]))
    }

    /// Re-runs validation demanding det(Sigma) > 0.
    pub fn require_invertible(&self) -> Result<(), ParamErrors> {
        let errs = validate(self.a, &self.alpha, &self.mu, &self.sigma, &self.eta, true);
        if errs.is_empty() {
            Ok(())
        } else {
            Err(ParamErrors(errs))
        }
    }
}

/// Which side of the model is WVAG: the stationary law or the BDLP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    WvagOu,
    OuWvag,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ModelKind::WvagOu => write!(f, "wvag-ou"),
            ModelKind::OuWvag => write!(f, "ou-wvag"),
        }
    }
}

/// A stationary LDOUP specification together with the sampling interval.
#[derive(Debug, Clone, PartialEq)]
pub struct LdoupModel {
    kind: ModelKind,
    lambda: f64,
    wvag: WvagParams,
    delta: f64,
}

impl LdoupModel {
    pub fn new(
        kind: ModelKind,
        lambda: f64,
        wvag: WvagParams,
        delta: f64,
    ) -> Result<Self, ParamErrors> {
        let mut errs = Vec::new();
        if !(lambda.is_finite() && lambda > 0.0) {
            errs.push(ParamError::NonPositiveLambda(lambda));
        }
        if !(delta.is_finite() && delta > 0.0) {
            errs.push(ParamError::NonPositiveDelta(delta));
        }
        if kind == ModelKind::WvagOu {
            for (k, &m) in wvag.mu().iter().enumerate() {
                if m != 0.0 {
                    errs.push(ParamError::NonZeroMu { k, mu: m });
                }
            }
        }
        if errs.is_empty() {
            Ok(Self {
                kind,
                lambda,
                wvag,
                delta,
            })
        } else {
            Err(ParamErrors(errs))
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn wvag(&self) -> &WvagParams {
        &self.wvag
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn n(&self) -> usize {
        self.wvag.n()
    }

    /// Same model at a different sampling interval.
    pub fn with_delta(&self, delta: f64) -> Result<Self, ParamErrors> {
        Self::new(self.kind, self.lambda, self.wvag.clone(), delta)
    }
}

/// Equally spaced observations X(0), X(Delta), ..., X(m Delta), one row each.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub data: DMatrix<f64>,
    pub delta: f64,
}

#[derive(Debug, Error)]
pub enum ObsError {
    #[error("observation set needs at least 2 rows, got {0}")]
    TooShort(usize),
    #[error("observation set contains a non-finite entry at row {row}")]
    NonFinite { row: usize },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv row {row} has {got} fields, expected {expected}")]
    RaggedRow {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("csv field {field:?} at row {row} is not a number")]
    BadNumber { row: usize, field: String },
    #[error("delta must be positive, got {0}")]
    BadDelta(f64),
}

impl ObservationSet {
    pub fn new(data: DMatrix<f64>, delta: f64) -> Result<Self, ObsError> {
        if data.nrows() < 2 {
            return Err(ObsError::TooShort(data.nrows()));
        }
        if !(delta.is_finite() && delta > 0.0) {
            return Err(ObsError::BadDelta(delta));
        }
        for i in 0..data.nrows() {
            if data.row(i).iter().any(|x| !x.is_finite()) {
                return Err(ObsError::NonFinite { row: i });
            }
        }
        Ok(Self { data, delta })
    }

    /// Number of steps m (rows - 1).
    pub fn m(&self) -> usize {
        self.data.nrows() - 1
    }

    pub fn n(&self) -> usize {
        self.data.ncols()
    }

    /// One marginal component as a plain series.
    pub fn component(&self, k: usize) -> Vec<f64> {
        self.data.column(k).iter().cloned().collect()
    }

    /// Reconstructed innovations e^{lambda Delta} x_k - x_{k-1}, one row per step.
    pub fn innovations(&self, lambda: f64) -> DMatrix<f64> {
        let growth = (lambda * self.delta).exp();
        let m = self.m();
        DMatrix::from_fn(m, self.n(), |k, j| {
            growth * self.data[(k + 1, j)] - self.data[(k, j)]
        })
    }

    /// Writes the `t,x1,...,xn` CSV format.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), ObsError> {
        write_matrix_csv(&self.data, self.delta, w)
    }

    /// Reads the `t,x1,...,xn` CSV format; delta is inferred from the time column.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, ObsError> {
        let (data, delta) = read_matrix_csv(r)?;
        Self::new(data, delta)
    }

    pub fn read_csv_path(path: &Path) -> Result<Self, ObsError> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

pub(crate) fn write_matrix_csv<W: Write>(
    data: &DMatrix<f64>,
    delta: f64,
    w: W,
) -> Result<(), ObsError> {
    let mut wtr = csv::Writer::from_writer(w);
    let n = data.ncols();
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|k| format!("x{k}")));
    wtr.write_record(&header)?;
    for i in 0..data.nrows() {
        let mut rec = vec![format!("{}", i as f64 * delta)];
        rec.extend(data.row(i).iter().map(|v| format!("{v}")));
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub(crate) fn read_matrix_csv<R: Read>(r: R) -> Result<(DMatrix<f64>, f64), ObsError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let n = rdr.headers()?.len().saturating_sub(1);
    let mut times = Vec::new();
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != n + 1 {
            return Err(ObsError::RaggedRow {
                row: i,
                got: rec.len(),
                expected: n + 1,
            });
        }
        let mut row = Vec::with_capacity(n + 1);
        for field in rec.iter() {
            row.push(field.trim().parse::<f64>().map_err(|_| ObsError::BadNumber {
                row: i,
                field: field.to_string(),
            })?);
        }
        times.push(row[0]);
        rows.push(row[1..].to_vec());
    }
    if rows.len() < 2 {
        return Err(ObsError::TooShort(rows.len()));
    }
    let delta = times[1] - times[0];
    let data = DMatrix::from_fn(rows.len(), n, |i, j| rows[i][j]);
    Ok((data, delta))
}

/// JSON model-config schema: {kind, lambda, a, alpha[], mu[], sigma[][], eta[], delta}.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub lambda: f64,
    pub a: f64,
    pub alpha: Vec<f64>,
    #[serde(default)]
    pub mu: Option<Vec<f64>>,
    pub sigma: Vec<Vec<f64>>,
    pub eta: Vec<f64>,
    pub delta: f64,
}

impl ModelConfig {
    pub fn to_model(&self) -> Result<LdoupModel, ParamErrors> {
        let mu = self
            .mu
            .clone()
            .unwrap_or_else(|| vec![0.0; self.alpha.len()]);
        let params = WvagParams::from_slices(self.a, &self.alpha, &mu, &self.sigma, &self.eta)?;
        LdoupModel::new(self.kind, self.lambda, params, self.delta)
    }

    pub fn from_model(model: &LdoupModel) -> Self {
        let w = model.wvag();
        let n = w.n();
        Self {
            kind: model.kind(),
            lambda: model.lambda(),
            a: w.a(),
            alpha: w.alpha().iter().cloned().collect(),
            mu: Some(w.mu().iter().cloned().collect()),
            sigma: (0..n)
                .map(|i| (0..n).map(|j| w.sigma()[(i, j)]).collect())
                .collect(),
            eta: w.eta().iter().cloned().collect(),
            delta: model.delta(),
        }
    }

    pub fn read_json_path(path: &Path) -> Result<Self, std::io::Error> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))
    }
}

/// Bijection between the constrained WVAG-OU parameter block
/// (a, alpha1, alpha2, Sigma11, Sigma22, Sigma12) and R^6.
///
/// Coordinates: (ln a, logit(a*alpha1), logit(a*alpha2), ln S11, ln S22,
/// atanh(rho)). The constraints a > 0, alpha_k in (0, 1/a), S_kk > 0 and
/// |rho| < 1 hold by construction.
pub mod transform {
    /// Constrained WVAG-OU theta block.
    #[derive(Debug, Clone, Copy, PartialEq)]
    pub struct WvagOuTheta {
        pub a: f64,
        pub alpha1: f64,
        pub alpha2: f64,
        pub s11: f64,
        pub s22: f64,
        pub s12: f64,
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    fn sigmoid(x: f64) -> f64 {
        if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        }
    }

    pub fn to_unconstrained(t: &WvagOuTheta) -> [f64; 6] {
        let rho = t.s12 / (t.s11 * t.s22).sqrt();
        [
            t.a.ln(),
            logit(t.a * t.alpha1),
            logit(t.a * t.alpha2),
            t.s11.ln(),
            t.s22.ln(),
            rho.clamp(-1.0 + 1e-12, 1.0 - 1e-12).atanh(),
        ]
    }

    pub fn from_unconstrained(x: &[f64]) -> WvagOuTheta {
        let a = x[0].exp();
        let s11 = x[3].exp();
        let s22 = x[4].exp();
        let rho = x[5].tanh();
        WvagOuTheta {
            a,
            alpha1: sigmoid(x[1]) / a,
            alpha2: sigmoid(x[2]) / a,
            s11,
            s22,
            s12: rho * (s11 * s22).sqrt(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn paper_params() -> WvagParams {
        WvagParams::from_slices(
            1.0,
            &[0.9, 0.5],
            &[0.0, 0.0],
            &[vec![0.18, 0.09], vec![0.09, 0.08]],
            &[-0.06, 0.0],
        )
        .unwrap()
    }

    #[test]
    fn paper_params_are_valid() {
        let p = paper_params();
        assert!(p.require_invertible().is_ok());
    }

    #[test]
    fn betas_match_defining_formula() {
        let p = paper_params();
        assert_eq!(p.betas()[0], (1.0 - 0.9) / 0.9);
        assert_eq!(p.betas()[1], 1.0);
    }

    #[test]
    fn beta_half_alpha() {
        // (1 - 0.5)/0.5 = 1 for a = 1, alpha = 0.5
        let p = WvagParams::from_slices(
            1.0,
            &[0.5],
            &[0.0],
            &[vec![1.0]],
            &[0.0],
        )
        .unwrap();
        assert_eq!(p.betas()[0], 1.0);
    }

    #[test]
    fn alpha_out_of_range_reported_for_both_components() {
        let errs = validate(
            2.0,
            &DVector::from_column_slice(&[0.9, 0.5]),
            &DVector::zeros(2),
            &DMatrix::identity(2, 2),
            &DVector::zeros(2),
            false,
        );
        let ks: Vec<usize> = errs
            .iter()
            .filter_map(|e| match e {
                ParamError::AlphaOutOfRange { k, .. } => Some(*k),
                _ => None,
            })
            .collect();
        assert_eq!(ks, vec![0, 1]);
    }

    #[test]
    fn indefinite_sigma_rejected() {
        let errs = validate(
            1.0,
            &DVector::from_column_slice(&[0.5, 0.5]),
            &DVector::zeros(2),
            &DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]),
            &DVector::zeros(2),
            false,
        );
        assert!(errs.iter().any(|e| matches!(e, ParamError::SigmaNotPsd(_))));
    }

    #[test]
    fn singular_sigma_only_rejected_when_invertibility_required() {
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let alpha = DVector::from_column_slice(&[0.5, 0.5]);
        let ok = validate(1.0, &alpha, &DVector::zeros(2), &sigma, &DVector::zeros(2), false);
        assert!(ok.is_empty());
        let errs = validate(1.0, &alpha, &DVector::zeros(2), &sigma, &DVector::zeros(2), true);
        assert!(errs.iter().any(|e| matches!(e, ParamError::SigmaSingular(_))));
    }

    #[test]
    fn wvagou_model_requires_zero_mu() {
        let p = WvagParams::from_slices(
            1.0,
            &[0.9, 0.5],
            &[0.15, -0.06],
            &[vec![0.18, 0.09], vec![0.09, 0.08]],
            &[-0.06, 0.0],
        )
        .unwrap();
        assert!(LdoupModel::new(ModelKind::WvagOu, 0.5, p.clone(), 1.0).is_err());
        assert!(LdoupModel::new(ModelKind::OuWvag, 0.5, p, 1.0).is_ok());
    }

    #[test]
    fn alpha_diamond_sigma_uses_componentwise_min() {
        let p = paper_params();
        let ads = p.alpha_diamond_sigma();
        assert_relative_eq!(ads[(0, 0)], 0.9 * 0.18);
        assert_relative_eq!(ads[(1, 1)], 0.5 * 0.08);
        assert_relative_eq!(ads[(0, 1)], 0.5 * 0.09);
        assert_relative_eq!(ads[(1, 0)], 0.5 * 0.09);
    }

    #[test]
    fn innovations_reconstruct_ar1_step() {
        let data = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 0.5, 1.0, 0.25, 0.5]);
        let obs = ObservationSet::new(data, 1.0).unwrap();
        let z = obs.innovations(0.5);
        let g = 0.5f64.exp();
        assert_relative_eq!(z[(0, 0)], g * 0.5 - 1.0);
        assert_relative_eq!(z[(1, 1)], g * 0.5 - 1.0);
    }

    #[test]
    fn observation_csv_round_trip() {
        let data = DMatrix::from_row_slice(3, 2, &[0.1, -0.25, 0.5, 1.0 / 3.0, -1e-9, 2.5]);
        let obs = ObservationSet::new(data, 0.01).unwrap();
        let mut buf = Vec::new();
        obs.write_csv(&mut buf).unwrap();
        let back = ObservationSet::read_csv(&buf[..]).unwrap();
        assert_eq!(obs.data, back.data);
        assert_relative_eq!(obs.delta, back.delta);
    }

    #[test]
    fn model_config_json_round_trip() {
        let model = LdoupModel::new(ModelKind::WvagOu, 0.5, paper_params(), 1.0).unwrap();
        let cfg = ModelConfig::from_model(&model);
        let text = serde_json::to_string(&cfg).unwrap();
        let cfg2: ModelConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, cfg2);
        let model2 = cfg2.to_model().unwrap();
        assert_eq!(model, model2);
    }

    #[test]
    fn transform_round_trip_and_feasibility() {
        let t = transform::WvagOuTheta {
            a: 1.0,
            alpha1: 0.9,
            alpha2: 0.5,
            s11: 0.18,
            s22: 0.08,
            s12: 0.09,
        };
        let x = transform::to_unconstrained(&t);
        let b = transform::from_unconstrained(&x);
        assert_relative_eq!(b.a, t.a, max_relative = 1e-12);
        assert_relative_eq!(b.alpha1, t.alpha1, max_relative = 1e-12);
        assert_relative_eq!(b.alpha2, t.alpha2, max_relative = 1e-12);
        assert_relative_eq!(b.s12, t.s12, max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn valid_params_have_positive_betas(
            a in 0.05f64..3.0,
            u1 in 0.01f64..0.99,
            u2 in 0.01f64..0.99,
            s11 in 0.01f64..2.0,
            s22 in 0.01f64..2.0,
            rho in -0.95f64..0.95,
        ) {
            let alpha = [u1 / a, u2 / a];
            let s12 = rho * (s11 * s22).sqrt();
            let p = WvagParams::from_slices(
                a,
                &alpha,
                &[0.0, 0.0],
                &[vec![s11, s12], vec![s12, s22]],
                &[0.0, 0.0],
            ).unwrap();
            prop_assert!(p.betas().iter().all(|b| *b > 0.0));
        }

        #[test]
        fn any_unconstrained_point_maps_to_valid_params(x in proptest::array::uniform6(-6.0f64..6.0)) {
            let t = transform::from_unconstrained(&x);
            let p = WvagParams::from_slices(
                t.a,
                &[t.alpha1, t.alpha2],
                &[0.0, 0.0],
                &[vec![t.s11, t.s12], vec![t.s12, t.s22]],
                &[0.0, 0.0],
            );
            prop_assert!(p.is_ok());
        }

        #[test]
        fn config_json_round_trip_is_exact(
            lambda in 0.01f64..5.0,
            a in 0.05f64..3.0,
            u1 in 0.01f64..0.99,
            s11 in 0.001f64..4.0,
            eta in -2.0f64..2.0,
        ) {
            let cfg = ModelConfig {
                kind: ModelKind::OuWvag,
                lambda,
                a,
                alpha: vec![u1 / a, 0.5 * u1 / a],
                mu: Some(vec![0.123456789e-3, -7.0]),
                sigma: vec![vec![s11, 0.0], vec![0.0, s11 * 0.5]],
                eta: vec![eta, 0.0],
                delta: 1.0,
            };
            let text = serde_json::to_string(&cfg).unwrap();
            let cfg2: ModelConfig = serde_json::from_str(&text).unwrap();
            prop_assert_eq!(cfg, cfg2);
        }
    }
}
