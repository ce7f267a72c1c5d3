//! Fourier inversion of characteristic functions to density tables on
//! rectangular grids (1D and 2D), with interpolation for likelihood
//! evaluation and piecewise-linear inverse-CDF sampling.

use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use rustfft::FftPlanner;
use std::f64::consts::TAU;
use std::io::Write;
use thiserror::Error;

/// Density floor per unit volume; keeps log-likelihoods finite while
/// penalizing observations far outside the grid.
pub const EPS_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FourierError {
    #[error("inverted density mass {mass:.4} outside [0.99, 1.01]; grid too small or cf invalid")]
    MassDeficit { mass: f64 },
    #[error("n_points must be a power of two >= 4, got {0}")]
    BadGridSize(usize),
    #[error("spec dims {spec} does not match value count {got}")]
    ShapeMismatch { spec: usize, got: usize },
}

/// Grid geometry for Fourier inversion. `spacing.len()` is the dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierSpec {
    pub n_points: usize,
    pub spacing: Vec<f64>,
    pub center: Vec<f64>,
}

impl FourierSpec {
    pub fn dim1(n_points: usize, h: f64, center: f64) -> Self {
        Self {
            n_points,
            spacing: vec![h],
            center: vec![center],
        }
    }

    pub fn dim2(n_points: usize, h: [f64; 2], center: [f64; 2]) -> Self {
        Self {
            n_points,
            spacing: h.to_vec(),
            center: center.to_vec(),
        }
    }

    /// 1D default: N = 2^13, h = 2^-7 sqrt(m2); spans +-32 standard deviations.
    pub fn default_1d(m2: f64, mean: f64) -> Self {
        Self::dim1(1 << 13, 2f64.powi(-7) * m2.sqrt(), mean)
    }

    /// 2D default: N = 2^10, h_k = 2^-5 sqrt(m2_k); spans +-16 standard deviations.
    pub fn default_2d(m2: [f64; 2], mean: [f64; 2]) -> Self {
        Self::dim2(
            1 << 10,
            [2f64.powi(-5) * m2[0].sqrt(), 2f64.powi(-5) * m2[1].sqrt()],
            mean,
        )
    }

    pub fn dims(&self) -> usize {
        self.spacing.len()
    }

    /// State-space coordinate of node index `i` on axis `d`.
    pub fn coord(&self, d: usize, i: usize) -> f64 {
        self.center[d] + (i as f64 - self.n_points as f64 / 2.0) * self.spacing[d]
    }

    /// Frequency-space step per axis.
    pub fn freq_step(&self, d: usize) -> f64 {
        TAU / (self.n_points as f64 * self.spacing[d])
    }

    /// Frequency nodes theta_k = (k - N/2) s per axis.
    pub fn frequency_axes(&self) -> Vec<Vec<f64>> {
        let n = self.n_points;
        (0..self.dims())
            .map(|d| {
                let s = self.freq_step(d);
                (0..n).map(|k| (k as f64 - n as f64 / 2.0) * s).collect()
            })
            .collect()
    }

    fn check(&self) -> Result<(), FourierError> {
        let n = self.n_points;
        if n < 4 || !n.is_power_of_two() {
            return Err(FourierError::BadGridSize(n));
        }
        Ok(())
    }

    fn cell_volume(&self) -> f64 {
        self.spacing.iter().product()
    }
}

/// Fourier-inverted density table on a `FourierSpec` grid.
///
/// Values are clipped to be nonnegative and renormalized to unit mass;
/// `raw_mass` and `clipped_mass` record what the inversion produced before
/// those repairs.
#[derive(Debug, Clone)]
pub struct DensityGrid {
    pub spec: FourierSpec,
    pub values: Vec<f64>,
    pub total_mass: f64,
    /// Positive mass away from the grid boundary before renormalization.
    pub raw_mass: f64,
    /// Absolute mass removed by clipping negative ripples.
    pub clipped_mass: f64,
}

/// Inverts a characteristic function to a density grid.
pub fn invert_cf<F>(cf: F, spec: &FourierSpec) -> Result<DensityGrid, FourierError>
where
    F: Fn(&[f64]) -> Complex64 + Sync,
{
    spec.check()?;
    let axes = spec.frequency_axes();
    let n = spec.n_points;
    let values: Vec<Complex64> = match spec.dims() {
        1 => axes[0].par_iter().map(|&t| cf(&[t])).collect(),
        2 => (0..n)
            .into_par_iter()
            .flat_map_iter(|i| {
                let t1 = axes[0][i];
                let row: Vec<Complex64> = (0..n).map(|j| cf(&[t1, axes[1][j]])).collect();
                row
            })
            .collect(),
        d => panic!("unsupported dimension {d}"),
    };
    invert_cf_values(spec, values)
}

/// Inverts a characteristic function already tabulated on the grid returned
/// by [`FourierSpec::frequency_axes`] (row-major for 2D).
pub fn invert_cf_values(
    spec: &FourierSpec,
    mut values: Vec<Complex64>,
) -> Result<DensityGrid, FourierError> {
    spec.check()?;
    let n = spec.n_points;
    let expected = n.pow(spec.dims() as u32);
    if values.len() != expected {
        return Err(FourierError::ShapeMismatch {
            spec: expected,
            got: values.len(),
        });
    }

    // Pre-twiddle: (-1)^k e^{-i (k - N/2) s c} per axis, then forward DFT;
    // post-twiddle (-1)^j and the spectral cell volume give the density.
    let twiddles: Vec<Vec<Complex64>> = (0..spec.dims())
        .map(|d| {
            let s = spec.freq_step(d);
            (0..n)
                .map(|k| {
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    sign * Complex64::new(0.0, -(k as f64 - n as f64 / 2.0) * s * spec.center[d])
                        .exp()
                })
                .collect()
        })
        .collect();

    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);

    match spec.dims() {
        1 => {
            for (k, v) in values.iter_mut().enumerate() {
                *v *= twiddles[0][k];
            }
            fft.process(&mut values);
        }
        2 => {
            values
                .par_chunks_mut(n)
                .enumerate()
                .for_each(|(k1, row)| {
                    for (k2, v) in row.iter_mut().enumerate() {
                        *v *= twiddles[0][k1] * twiddles[1][k2];
                    }
                    fft.process(row);
                });
            let mut transposed = vec![Complex64::default(); n * n];
            transpose(&values, &mut transposed, n);
            transposed.par_chunks_mut(n).for_each(|col| fft.process(col));
            transpose(&transposed, &mut values, n);
        }
        _ => unreachable!(),
    }

    let scale: f64 =
        (0..spec.dims()).map(|d| spec.freq_step(d) / TAU).product();
    let cell = spec.cell_volume();
    let mut raw = Vec::with_capacity(values.len());
    match spec.dims() {
        1 => {
            for (j, v) in values.iter().enumerate() {
                let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
                raw.push(sign * scale * v.re);
            }
        }
        2 => {
            for (idx, v) in values.iter().enumerate() {
                let (j1, j2) = (idx / n, idx % n);
                let sign = if (j1 + j2) % 2 == 0 { 1.0 } else { -1.0 };
                raw.push(sign * scale * v.re);
            }
        }
        _ => unreachable!(),
    }

    // The lattice sum conserves total signed mass exactly (it telescopes to
    // Phi(0) by Poisson summation), so grid adequacy is judged by the
    // positive mass away from the boundary: aliasing piles mass onto the
    // edges and a non-CF input shows up as large negative ripple.
    let margin = (n / 32).max(1);
    let interior_positive: f64 = match spec.dims() {
        1 => raw[margin..n - margin]
            .iter()
            .map(|v| v.max(0.0))
            .sum::<f64>(),
        2 => (margin..n - margin)
            .map(|i| {
                raw[i * n + margin..i * n + n - margin]
                    .iter()
                    .map(|v| v.max(0.0))
                    .sum::<f64>()
            })
            .sum(),
        _ => unreachable!(),
    };
    let raw_mass = interior_positive * cell;
    if !(0.99..=1.01).contains(&raw_mass) {
        return Err(FourierError::MassDeficit { mass: raw_mass });
    }
    let mut clipped_mass = 0.0;
    for v in raw.iter_mut() {
        if *v < 0.0 {
            clipped_mass -= *v;
            *v = 0.0;
        }
    }
    clipped_mass *= cell;
    let clipped_total: f64 = raw.iter().sum::<f64>() * cell;
    let norm = 1.0 / clipped_total;
    for v in raw.iter_mut() {
        *v *= norm;
    }

    Ok(DensityGrid {
        spec: spec.clone(),
        values: raw,
        total_mass: 1.0,
        raw_mass,
        clipped_mass,
    })
}

fn transpose(src: &[Complex64], dst: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in 0..n {
            dst[j * n + i] = src[i * n + j];
        }
    }
}

impl DensityGrid {
    /// Wraps raw nonnegative values as a normalized density table.
    pub fn from_values(spec: FourierSpec, values: Vec<f64>) -> Self {
        let cell = spec.cell_volume();
        let raw_mass: f64 = values.iter().sum::<f64>() * cell;
        let norm = 1.0 / raw_mass;
        let values = values.into_iter().map(|v| (v * norm).max(0.0)).collect();
        Self {
            spec,
            values,
            total_mass: 1.0,
            raw_mass,
            clipped_mass: 0.0,
        }
    }

    /// Multilinear interpolation with the `EPS_FLOOR` outside the grid.
    pub fn density_at(&self, x: &[f64]) -> f64 {
        let n = self.spec.n_points;
        match self.spec.dims() {
            1 => {
                let u = (x[0] - self.spec.coord(0, 0)) / self.spec.spacing[0];
                if u < 0.0 || u > (n - 1) as f64 {
                    return EPS_FLOOR;
                }
                let i = (u as usize).min(n - 2);
                let w = u - i as f64;
                let v = (1.0 - w) * self.values[i] + w * self.values[i + 1];
                v.max(EPS_FLOOR)
            }
            2 => {
                let u0 = (x[0] - self.spec.coord(0, 0)) / self.spec.spacing[0];
                let u1 = (x[1] - self.spec.coord(1, 0)) / self.spec.spacing[1];
                let max = (n - 1) as f64;
                if u0 < 0.0 || u0 > max || u1 < 0.0 || u1 > max {
                    return EPS_FLOOR;
                }
                let i = (u0 as usize).min(n - 2);
                let j = (u1 as usize).min(n - 2);
                let (w0, w1) = (u0 - i as f64, u1 - j as f64);
                let at = |a: usize, b: usize| self.values[a * n + b];
                let v = (1.0 - w0) * ((1.0 - w1) * at(i, j) + w1 * at(i, j + 1))
                    + w0 * ((1.0 - w1) * at(i + 1, j) + w1 * at(i + 1, j + 1));
                v.max(EPS_FLOOR)
            }
            _ => unreachable!(),
        }
    }

    /// Cumulative trapezoid CDF of a 1D grid, normalized to [0, 1].
    pub fn cdf_1d(&self) -> Cdf1 {
        assert_eq!(self.spec.dims(), 1, "cdf_1d requires a 1D grid");
        Cdf1::from_density(
            &self.values,
            self.spec.coord(0, 0),
            self.spec.spacing[0],
        )
    }

    /// Piecewise-linear inverse-CDF sampler (1D) or conditional sampler (2D).
    pub fn sampler(&self) -> GridSampler {
        match self.spec.dims() {
            1 => GridSampler::Dim1 {
                cdf: self.cdf_1d(),
            },
            2 => {
                let n = self.spec.n_points;
                let mut marginal = vec![0.0; n];
                for i in 0..n {
                    marginal[i] = self.values[i * n..(i + 1) * n].iter().sum::<f64>()
                        * self.spec.spacing[1];
                }
                GridSampler::Dim2 {
                    marginal: Cdf1::from_density(
                        &marginal,
                        self.spec.coord(0, 0),
                        self.spec.spacing[0],
                    ),
                    grid: self.clone(),
                }
            }
            _ => unreachable!(),
        }
    }

    /// Dumps `x[,y],density` rows for plotting.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let n = self.spec.n_points;
        match self.spec.dims() {
            1 => {
                writeln!(w, "x,density")?;
                for (i, v) in self.values.iter().enumerate() {
                    writeln!(w, "{},{}", self.spec.coord(0, i), v)?;
                }
            }
            2 => {
                writeln!(w, "x,y,density")?;
                for i in 0..n {
                    for j in 0..n {
                        writeln!(
                            w,
                            "{},{},{}",
                            self.spec.coord(0, i),
                            self.spec.coord(1, j),
                            self.values[i * n + j]
                        )?;
                    }
                }
            }
            _ => unreachable!(),
        }
        Ok(())
    }
}

/// Piecewise-linear CDF over evenly spaced nodes.
#[derive(Debug, Clone)]
pub struct Cdf1 {
    x0: f64,
    h: f64,
    /// Normalized node CDF values, c[0] = 0, c[n-1] = 1.
    c: Vec<f64>,
}

impl Cdf1 {
    fn from_density(values: &[f64], x0: f64, h: f64) -> Self {
        let mut c = Vec::with_capacity(values.len());
        c.push(0.0);
        for w in values.windows(2) {
            c.push(c.last().unwrap() + 0.5 * h * (w[0] + w[1]));
        }
        let total = *c.last().unwrap();
        if total > 0.0 {
            for v in c.iter_mut() {
                *v /= total;
            }
        }
        Self { x0, h, c }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = (x - self.x0) / self.h;
        if u <= 0.0 {
            return 0.0;
        }
        let n = self.c.len();
        if u >= (n - 1) as f64 {
            return 1.0;
        }
        let i = u as usize;
        let w = u - i as f64;
        (1.0 - w) * self.c[i] + w * self.c[i + 1]
    }

    /// Linear inversion: the quantile of `u` in [0, 1].
    pub fn quantile(&self, u: f64) -> f64 {
        let n = self.c.len();
        let u = u.clamp(0.0, 1.0);
        // first index with c[i+1] >= u
        let mut lo = 0usize;
        let mut hi = n - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.c[mid] < u {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let span = self.c[hi] - self.c[lo];
        let w = if span > 0.0 { (u - self.c[lo]) / span } else { 0.5 };
        self.x0 + (lo as f64 + w) * self.h
    }
}

/// Inverse-CDF sampler over a density grid.
#[derive(Debug, Clone)]
pub enum GridSampler {
    Dim1 { cdf: Cdf1 },
    Dim2 { marginal: Cdf1, grid: DensityGrid },
}

impl GridSampler {
    pub fn dims(&self) -> usize {
        match self {
            GridSampler::Dim1 { .. } => 1,
            GridSampler::Dim2 { .. } => 2,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        match self {
            GridSampler::Dim1 { cdf } => vec![cdf.quantile(rng.random::<f64>())],
            GridSampler::Dim2 { marginal, grid } => {
                let x0 = marginal.quantile(rng.random::<f64>());
                let n = grid.spec.n_points;
                let u = ((x0 - grid.spec.coord(0, 0)) / grid.spec.spacing[0])
                    .clamp(0.0, (n - 1) as f64);
                let i = (u as usize).min(n - 2);
                let w = u - i as f64;
                // conditional slice interpolated between the two bracketing rows
                let row: Vec<f64> = (0..n)
                    .map(|j| (1.0 - w) * grid.values[i * n + j] + w * grid.values[(i + 1) * n + j])
                    .collect();
                let cond = Cdf1::from_density(&row, grid.spec.coord(1, 0), grid.spec.spacing[1]);
                vec![x0, cond.quantile(rng.random::<f64>())]
            }
        }
    }
}
