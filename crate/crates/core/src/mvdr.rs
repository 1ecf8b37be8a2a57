//! Minimum variance distortionless response beamformer.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::dsp::{stft, MultichannelWaveform, StftConfig, StftPlan};
use crate::error::{Error, Result};
use crate::scene::{ArrayGeometry, SPEED_OF_SOUND};

/// Diagonal loading relative to `trace(R) / M`.
pub const DEFAULT_LOADING: f64 = 1e-6;

/// Far-field steering vectors `[freqs, mics]` for an azimuth in degrees,
/// phase-referenced to mic 0.
pub fn steering(
    doa_deg: f64,
    geometry: &ArrayGeometry,
    n_freqs: usize,
    sample_rate: u32,
) -> Array2<Complex64> {
    let (s, c) = doa_deg.to_radians().sin_cos();
    let offsets = geometry.mic_offsets();
    // A mic displaced towards the source hears the wave early: tau < 0.
    let tau: Vec<f64> = offsets
        .iter()
        .map(|o| -(o[0] * c + o[1] * s) / SPEED_OF_SOUND)
        .collect();
    let window_len = 2 * (n_freqs - 1);
    Array2::from_shape_fn((n_freqs, geometry.n_mics), |(f, m)| {
        let hz = f as f64 * sample_rate as f64 / window_len as f64;
        Complex64::from_polar(1.0, -2.0 * std::f64::consts::PI * hz * (tau[m] - tau[0]))
    })
}

/// Solves `A x = b` for a small dense complex system by Gaussian elimination
/// with partial pivoting.
fn solve(mut a: Array2<Complex64>, mut b: Array1<Complex64>) -> Result<Array1<Complex64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[[i, col]].norm().total_cmp(&a[[j, col]].norm()))
            .expect("non-empty");
        if a[[pivot, col]].norm() == 0.0 {
            return Err(Error::Numeric("singular covariance".into()));
        }
        if pivot != col {
            for k in 0..n {
                a.swap([pivot, k], [col, k]);
            }
            b.swap(pivot, col);
        }
        for row in col + 1..n {
            let factor = a[[row, col]] / a[[col, col]];
            for k in col..n {
                let v = a[[col, k]];
                a[[row, k]] -= factor * v;
            }
            let v = b[col];
            b[row] -= factor * v;
        }
    }
    let mut x = Array1::zeros(n);
    for row in (0..n).rev() {
        let mut acc = b[row];
        for k in row + 1..n {
            acc -= a[[row, k]] * x[k];
        }
        x[row] = acc / a[[row, row]];
    }
    Ok(x)
}

/// Beamformer weights plus the diagonal loading that was added per frequency.
#[derive(Debug, Clone)]
pub struct MvdrWeights {
    /// `[freqs, mics]`; the output is `w^H x`.
    pub w: Array2<Complex64>,
    pub loading: Vec<f64>,
}

/// `w_f = R_f^-1 d_f / (d_f^H R_f^-1 d_f)` after loading `R_f` with
/// `loading * trace(R_f) / M` on the diagonal.
pub fn mvdr_weights(
    cov: &Array3<Complex64>,
    d: &Array2<Complex64>,
    loading: f64,
) -> Result<MvdrWeights> {
    let (freqs, m, m2) = cov.dim();
    if m != m2 || d.dim() != (freqs, m) {
        return Err(Error::shape(
            "mvdr",
            format!(
                "covariance {:?} and steering {:?} disagree",
                cov.dim(),
                d.dim()
            ),
        ));
    }
    let mut w = Array2::zeros((freqs, m));
    let mut loads = Vec::with_capacity(freqs);
    for f in 0..freqs {
        let mut r = cov.index_axis(Axis(0), f).to_owned();
        let trace: f64 = (0..m).map(|i| r[[i, i]].re).sum();
        let delta = if trace > 0.0 {
            loading * trace / m as f64
        } else {
            loading.max(1e-12)
        };
        for i in 0..m {
            r[[i, i]] += delta;
        }
        loads.push(delta);
        let df = d.row(f).to_owned();
        let x = solve(r, df.clone())?;
        let denom: Complex64 = df.iter().zip(x.iter()).map(|(a, b)| a.conj() * b).sum();
        if denom.norm() == 0.0 || !denom.is_finite() {
            return Err(Error::Numeric(format!(
                "degenerate MVDR denominator at bin {f}"
            )));
        }
        w.row_mut(f).assign(&x.mapv(|v| v / denom));
    }
    Ok(MvdrWeights { w, loading: loads })
}

/// Applies `w^H x` per bin to a `[mics, frames, freqs]` spectrogram.
pub fn apply_weights(w: ArrayView2<Complex64>, spec: &Array3<Complex64>) -> Array2<Complex64> {
    let (m, t, f) = spec.dim();
    Array2::from_shape_fn((t, f), |(ti, fi)| {
        (0..m).map(|c| w[[fi, c]].conj() * spec[[c, ti, fi]]).sum()
    })
}

/// Spatial covariance `[freqs, mics, mics]` averaged over the frames whose
/// flag is set (all frames when `frames` is `None`).
pub fn covariance(spec: &Array3<Complex64>, frames: Option<&[bool]>) -> Array3<Complex64> {
    let (m, t, f) = spec.dim();
    let mut cov = Array3::zeros((f, m, m));
    let mut count = 0usize;
    for ti in 0..t {
        if frames.is_some_and(|fl| !fl[ti]) {
            continue;
        }
        count += 1;
        accumulate(&mut cov, spec, ti, 1.0);
    }
    if count > 0 {
        cov.mapv_inplace(|v| v / count as f64);
    }
    cov
}

fn accumulate(cov: &mut Array3<Complex64>, spec: &Array3<Complex64>, ti: usize, weight: f64) {
    let (m, _, f) = spec.dim();
    for fi in 0..f {
        for i in 0..m {
            let xi = spec[[i, ti, fi]];
            for j in 0..m {
                cov[[fi, i, j]] += xi * spec[[j, ti, fi]].conj() * weight;
            }
        }
    }
}

/// Recursive covariance average `R <- a R + (1 - a) x x^H` over flagged
/// frames, started from the first flagged frame.
pub fn recursive_covariance(
    spec: &Array3<Complex64>,
    frames: &[bool],
    forget: f64,
) -> Array3<Complex64> {
    let (m, t, f) = spec.dim();
    let mut cov = Array3::zeros((f, m, m));
    let mut started = false;
    for ti in 0..t {
        if !frames[ti] {
            continue;
        }
        if started {
            cov.mapv_inplace(|v| v * forget);
            accumulate(&mut cov, spec, ti, 1.0 - forget);
        } else {
            accumulate(&mut cov, spec, ti, 1.0);
            started = true;
        }
    }
    cov
}

/// Frames where the target's reference-channel energy is more than
/// `threshold_db` below its loudest frame.
pub fn oracle_vad(
    target: ArrayView1<f64>,
    cfg: StftConfig,
    threshold_db: f64,
) -> Result<Vec<bool>> {
    let plan = StftPlan::new(cfg)?;
    let spec = plan.analyze(&target.to_vec())?;
    let energy: Vec<f64> = spec
        .outer_iter()
        .map(|r| r.iter().map(|v| v.norm_sqr()).sum())
        .collect();
    let peak = energy.iter().copied().fold(0.0, f64::max);
    let floor = peak * 10f64.powf(-threshold_db / 10.0);
    Ok(energy.iter().map(|&e| e <= floor).collect())
}

/// How the noise-plus-interference covariance is obtained.
#[derive(Debug, Clone)]
pub enum CovarianceSource {
    /// Direct average over a known noise-plus-interference signal.
    Oracle(MultichannelWaveform),
    /// Recursive average of mixture frames where the known target is silent.
    OracleVad {
        target: Vec<f64>,
        threshold_db: f64,
        forget: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MvdrReport {
    pub noise_frames: usize,
    pub mean_loading: f64,
}

/// Beamforms `x` towards `doa_deg` and returns the time signal plus a report.
pub fn mvdr_extract(
    x: &MultichannelWaveform,
    doa_deg: f64,
    geometry: &ArrayGeometry,
    cfg: StftConfig,
    source: &CovarianceSource,
) -> Result<(Vec<f64>, MvdrReport)> {
    if x.channels() != geometry.n_mics {
        return Err(Error::shape(
            "mvdr",
            format!(
                "{} channels for a {}-mic array",
                x.channels(),
                geometry.n_mics
            ),
        ));
    }
    let spec = stft(x, cfg)?;
    let (cov, noise_frames) = match source {
        CovarianceSource::Oracle(noise) => {
            let ns = stft(noise, cfg)?;
            (covariance(&ns.bins, None), ns.frames())
        }
        CovarianceSource::OracleVad {
            target,
            threshold_db,
            forget,
        } => {
            let flags = oracle_vad(ArrayView1::from(target.as_slice()), cfg, *threshold_db)?;
            let n = flags.iter().filter(|&&b| b).count();
            if n == 0 {
                return Err(Error::Numeric(
                    "no target-free frames for the covariance".into(),
                ));
            }
            (recursive_covariance(&spec.bins, &flags, *forget), n)
        }
    };
    let d = steering(doa_deg, geometry, cfg.n_freqs(), x.sample_rate());
    let weights = mvdr_weights(&cov, &d, DEFAULT_LOADING)?;
    let y = apply_weights(weights.w.view(), &spec.bins);
    let plan = StftPlan::new(cfg)?;
    let out = plan.synthesize(y.view(), x.len())?;
    let mean_loading = weights.loading.iter().sum::<f64>() / weights.loading.len() as f64;
    log::debug!("mvdr: {noise_frames} noise frames, mean loading {mean_loading:.3e}");
    Ok((
        out,
        MvdrReport {
            noise_frames,
            mean_loading,
        },
    ))
}
