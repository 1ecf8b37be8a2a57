//! Image-source room impulse responses for a shoebox room.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Mutex, OnceLock};

use super::{SceneSpec, MIN_MIC_DISTANCE, SPEED_OF_SOUND};
use crate::error::{Error, Result};

/// Half-length of the windowed-sinc fractional delay kernel.
const FD_HALF: isize = 8;

/// Impulse response from one source to each microphone.
#[derive(Debug, Clone, PartialEq)]
pub struct Rir {
    pub per_mic: Vec<Vec<f64>>,
}

/// Width of the time bins used when calibrating the wall reflection.
const CAL_BIN_S: f64 = 1e-3;
const CAL_RECEIVER_HEIGHT: f64 = 1.0;
const CAL_SOURCE_OFFSET: [f64; 3] = [1.5, 0.0, 0.5];

/// Uniform wall reflection coefficient whose image-source response decays
/// by 60 dB in `rt60` seconds. Eyring's formula assumes a diffuse field and
/// overestimates absorption for a shoebox image model, so the coefficient is
/// found by bisection on the Schroeder decay of the image energy envelope for
/// a receiver and source at the room centre.
pub fn reflection_coefficient(room: [f64; 3], rt60: f64) -> f64 {
    static CACHE: OnceLock<Mutex<HashMap<[u64; 4], f64>>> = OnceLock::new();
    let key = [
        room[0].to_bits(),
        room[1].to_bits(),
        room[2].to_bits(),
        rt60.to_bits(),
    ];
    let cache = CACHE.get_or_init(Default::default);
    if let Some(&b) = cache.lock().expect("cache lock").get(&key) {
        return b;
    }
    let receiver = [
        0.5 * room[0],
        0.5 * room[1],
        CAL_RECEIVER_HEIGHT.min(room[2]),
    ];
    let source = [
        receiver[0] + CAL_SOURCE_OFFSET[0],
        receiver[1] + CAL_SOURCE_OFFSET[1],
        receiver[2] + CAL_SOURCE_OFFSET[2],
    ];
    let source = std::array::from_fn(|a| source[a].clamp(0.0, room[a]));
    let table = order_energy_table(room, source, receiver, rt60);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        match envelope_decay(&table, mid) {
            Some(t) if t > rt60 => hi = mid,
            _ => lo = mid,
        }
    }
    let beta = 0.5 * (lo + hi);
    cache.lock().expect("cache lock").insert(key, beta);
    beta
}

/// Image energy `1/(4 pi d)^2` per arrival bin and reflection order, up to
/// `horizon_s` seconds.
fn order_energy_table(
    room: [f64; 3],
    source: [f64; 3],
    receiver: [f64; 3],
    horizon_s: f64,
) -> Vec<Vec<f64>> {
    let max_dist = horizon_s * SPEED_OF_SOUND;
    let n_bins = (horizon_s / CAL_BIN_S).ceil() as usize + 1;
    let mut table = vec![Vec::new(); n_bins];
    let axes: Vec<Vec<(f64, u32)>> = (0..3)
        .map(|a| {
            let max_n = (max_dist / (2.0 * room[a])).ceil() as i64 + 1;
            axis_images(source[a], room[a], max_n)
                .into_iter()
                .map(|(c, r)| (c - receiver[a], r))
                .collect()
        })
        .collect();
    for &(x, rx) in &axes[0] {
        for &(y, ry) in &axes[1] {
            let dxy2 = x * x + y * y;
            if dxy2 > max_dist * max_dist {
                continue;
            }
            for &(z, rz) in &axes[2] {
                let order = (rx + ry + rz) as usize;
                let d = (dxy2 + z * z).sqrt();
                if d > max_dist {
                    continue;
                }
                let bin = &mut table[(d / SPEED_OF_SOUND / CAL_BIN_S) as usize];
                if bin.len() <= order {
                    bin.resize(order + 1, 0.0);
                }
                bin[order] += (4.0 * PI * d).powi(-2);
            }
        }
    }
    table
}

fn envelope_decay(table: &[Vec<f64>], beta: f64) -> Option<f64> {
    let b2 = beta * beta;
    let energy: Vec<f64> = table
        .iter()
        .map(|orders| orders.iter().rev().fold(0.0, |acc, e| acc * b2 + e))
        .collect();
    schroeder_decay(&energy, CAL_BIN_S)
}

/// Cutoff of the high-pass applied to reverberant responses.
const HPF_CUTOFF_HZ: f64 = 100.0;

/// Two-pole high-pass (Allen and Berkley). All image arrivals share one sign,
/// so a dense tail sums into a slowly decaying offset that real rooms lack.
fn remove_dc(h: &mut [f64], fs: f64) {
    let w = 2.0 * PI * HPF_CUTOFF_HZ / fs;
    let r1 = (-w).exp();
    let (b1, b2) = (2.0 * r1 * w.cos(), -r1 * r1);
    let a1 = -(1.0 + r1);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    for v in h.iter_mut() {
        let x0 = *v;
        let y0 = b1 * y1 + b2 * y2 + x0 + a1 * x1 + r1 * x2;
        (x2, x1, y2, y1) = (x1, x0, y1, y0);
        *v = y0;
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn add_arrival(out: &mut [f64], delay: f64, amplitude: f64) {
    let base = delay.floor() as isize;
    let width = FD_HALF as f64 + 0.5;
    for k in (base - FD_HALF + 1)..=(base + FD_HALF) {
        if k < 0 || k as usize >= out.len() {
            continue;
        }
        let x = k as f64 - delay;
        let window = 0.5 * (1.0 + (PI * x / width).cos());
        out[k as usize] += amplitude * sinc(x) * window;
    }
}

/// Candidate image coordinates along one axis: `(coordinate, reflections)`.
fn axis_images(source: f64, size: f64, max_n: i64) -> Vec<(f64, u32)> {
    let mut v = Vec::with_capacity((4 * max_n + 2) as usize);
    for n in -max_n..=max_n {
        for q in 0..2i64 {
            let coord = 2.0 * n as f64 * size + (1 - 2 * q) as f64 * source;
            v.push((coord, (2 * n - q).unsigned_abs() as u32));
        }
    }
    v
}

fn response_len(spec: &SceneSpec, max_direct: f64) -> usize {
    let direct = (max_direct / SPEED_OF_SOUND * spec.sample_rate as f64).ceil() as usize;
    if spec.max_order == Some(0) {
        direct + FD_HALF as usize + 1
    } else {
        (spec.rt60 * spec.sample_rate as f64).ceil() as usize + direct + FD_HALF as usize + 1
    }
}

/// Impulse responses from an arbitrary point to every microphone of `spec`.
pub fn simulate_rir_at(spec: &SceneSpec, source: [f64; 3]) -> Result<Rir> {
    for (axis, (&v, &size)) in source.iter().zip(&spec.room).enumerate() {
        if !(v >= 0.0 && v <= size) {
            return Err(Error::Geometry(format!(
                "source {source:?} is outside the room on axis {axis}"
            )));
        }
    }
    let mics = spec.geometry().mic_positions();
    let dist = |a: [f64; 3], b: [f64; 3]| {
        ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
    };
    let mut max_direct: f64 = 0.0;
    for &m in &mics {
        let d = dist(source, m);
        if d < MIN_MIC_DISTANCE {
            return Err(Error::Geometry(format!(
                "source {source:?} coincides with microphone {m:?}"
            )));
        }
        max_direct = max_direct.max(d);
    }
    let len = response_len(spec, max_direct);
    let beta = reflection_coefficient(spec.room, spec.rt60);
    image_response(spec, source, beta, len)
}

fn image_response(spec: &SceneSpec, source: [f64; 3], beta: f64, len: usize) -> Result<Rir> {
    let mics = spec.geometry().mic_positions();
    let fs = spec.sample_rate as f64;
    let max_dist = len as f64 / fs * SPEED_OF_SOUND;
    let order_cap = spec.max_order.unwrap_or(u32::MAX);

    let axes: Vec<Vec<(f64, u32)>> = (0..3)
        .map(|a| {
            let max_n = if order_cap == 0 {
                0
            } else {
                (max_dist / (2.0 * spec.room[a])).ceil() as i64 + 1
            };
            axis_images(source[a], spec.room[a], max_n)
        })
        .collect();

    let mut per_mic = Vec::with_capacity(mics.len());
    for &m in &mics {
        let mut h = vec![0.0; len];
        for &(x, rx) in &axes[0] {
            let dx2 = (x - m[0]).powi(2);
            if dx2 > max_dist * max_dist || rx > order_cap {
                continue;
            }
            for &(y, ry) in &axes[1] {
                let dxy2 = dx2 + (y - m[1]).powi(2);
                if dxy2 > max_dist * max_dist || rx + ry > order_cap {
                    continue;
                }
                for &(z, rz) in &axes[2] {
                    let order = rx + ry + rz;
                    if order > order_cap {
                        continue;
                    }
                    let d = (dxy2 + (z - m[2]).powi(2)).sqrt();
                    if d > max_dist {
                        continue;
                    }
                    let amp = beta.powi(order as i32) / (4.0 * PI * d);
                    add_arrival(&mut h, d / SPEED_OF_SOUND * fs, amp);
                }
            }
        }
        if order_cap > 0 {
            remove_dc(&mut h, fs);
        }
        if h.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite impulse response".into()));
        }
        per_mic.push(h);
    }
    Ok(Rir { per_mic })
}

/// Impulse responses for `spec.sources[source_index]`; the index equal to
/// `sources.len()` selects the noise source.
pub fn simulate_rir(spec: &SceneSpec, source_index: usize) -> Result<Rir> {
    let src = if source_index < spec.sources.len() {
        &spec.sources[source_index]
    } else if source_index == spec.sources.len() && spec.noise.is_some() {
        spec.noise.as_ref().expect("checked")
    } else {
        return Err(Error::Input(format!("no source with index {source_index}")));
    };
    simulate_rir_at(spec, src.position)
}

/// 60 dB decay time from the Schroeder backward integral, extrapolated from
/// a line fit over the -5 dB to -35 dB range.
pub fn decay_time(rir: &[f64], sample_rate: u32) -> Option<f64> {
    let energy: Vec<f64> = rir.iter().map(|v| v * v).collect();
    schroeder_decay(&energy, 1.0 / sample_rate as f64)
}

fn schroeder_decay(energy: &[f64], dt: f64) -> Option<f64> {
    let mut edc = vec![0.0; energy.len()];
    let mut acc = 0.0;
    for (i, e) in energy.iter().enumerate().rev() {
        acc += e;
        edc[i] = acc;
    }
    let total = edc.first().copied().filter(|&e| e > 0.0)?;
    let (mut n, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, e) in edc.iter().enumerate() {
        let db = 10.0 * (e / total).log10();
        if (-35.0..=-5.0).contains(&db) {
            let t = i as f64 * dt;
            n += 1.0;
            sx += t;
            sy += db;
            sxx += t * t;
            sxy += t * db;
        }
    }
    if n < 2.0 {
        return None;
    }
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    (slope < 0.0).then(|| -60.0 / slope)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SourceSpec;

    fn spec(order: Option<u32>, rt60: f64) -> SceneSpec {
        SceneSpec {
            room: [7.0, 6.5, 3.0],
            rt60,
            max_order: order,
            array_center: [3.5, 3.0, 1.0],
            array_radius: 0.03,
            n_mics: 3,
            sources: vec![],
            noise: None,
            mix_rms_db: None,
            sample_rate: 16000,
            n_samples: 16000,
            seed: 0,
        }
    }

    fn peak(h: &[f64]) -> usize {
        h.iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .unwrap()
            .0
    }

    #[test]
    fn free_field_is_single_scaled_arrival() {
        let s = spec(Some(0), 0.3);
        let mic0 = s.geometry().mic_positions()[0];
        let src = [mic0[0] + 1.0, mic0[1], mic0[2]];
        let rir = simulate_rir_at(&s, src).unwrap();
        let h = &rir.per_mic[0];
        // 1 m at 343 m/s and 16 kHz: 46.65 samples.
        assert_eq!(peak(h), 47);
        let sum: f64 = h.iter().sum();
        assert!((sum - 1.0 / (4.0 * PI)).abs() < 0.01 / (4.0 * PI));
    }

    #[test]
    fn symmetric_mics_share_direct_delay() {
        let s = spec(Some(0), 0.3);
        // Mics 1 and 2 are mirror images about the +x axis through the centre.
        let src = [5.0, 3.0, 1.0];
        let rir = simulate_rir_at(&s, src).unwrap();
        for (a, b) in rir.per_mic[1].iter().zip(&rir.per_mic[2]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn outside_source_is_rejected() {
        let s = spec(None, 0.3);
        assert!(simulate_rir_at(&s, [8.0, 1.0, 1.0]).is_err());
        let on_mic = s.geometry().mic_positions()[1];
        assert!(simulate_rir_at(&s, on_mic).is_err());
    }

    #[test]
    fn index_selects_source_or_noise() {
        let mut s = spec(Some(0), 0.3);
        let c = s.array_center;
        s.sources.push(
            SourceSpec::at(
                [5.0, 3.0, 1.5],
                c,
                crate::scene::SignalKind::Tone { freq_hz: 100.0 },
                0.0,
            )
            .unwrap(),
        );
        assert!(simulate_rir(&s, 0).is_ok());
        assert!(simulate_rir(&s, 1).is_err());
    }

    #[test]
    fn schroeder_decay_matches_rt60_across_rooms_and_positions() {
        let cases = [
            ([7.0, 6.0, 3.0], 0.4),
            ([9.0, 9.0, 3.0], 0.3),
            ([6.0, 6.0, 3.0], 0.5),
        ];
        let offsets = [[1.7, 1.4, 0.6], [-2.0, 0.8, 0.2], [0.5, -2.2, 0.9]];
        for (room, rt60) in cases {
            let s = SceneSpec {
                room,
                array_center: [room[0] / 2.0, room[1] / 2.0, 1.0],
                ..spec(None, rt60)
            };
            for o in offsets {
                let src = [
                    s.array_center[0] + o[0],
                    s.array_center[1] + o[1],
                    1.0 + o[2],
                ];
                let rir = simulate_rir_at(&s, src).unwrap();
                let t = decay_time(&rir.per_mic[0], 16000).unwrap();
                assert!(
                    (t / rt60 - 1.0).abs() < 0.2,
                    "{room:?} {src:?}: {t} vs {rt60}"
                );
            }
        }
    }

    #[test]
    fn reflection_coefficient_grows_with_rt60() {
        let room = [7.0, 6.0, 3.0];
        let b: Vec<f64> = [0.2, 0.4, 0.8]
            .iter()
            .map(|&t| reflection_coefficient(room, t))
            .collect();
        assert!(
            0.0 < b[0] && b[0] < b[1] && b[1] < b[2] && b[2] < 1.0,
            "{b:?}"
        );
    }

    #[test]
    fn decay_time_of_exponential() {
        let fs = 16000;
        let rt = 0.4;
        let h: Vec<f64> = (0..fs as usize)
            .map(|i| (-3.0 * std::f64::consts::LN_10 * i as f64 / fs as f64 / rt).exp())
            .collect();
        let t = decay_time(&h, fs).unwrap();
        assert!((t - rt).abs() < 0.01 * rt, "{t}");
    }
}
