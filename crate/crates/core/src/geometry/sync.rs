use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::GeometryError;
use crate::numerics::Real;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MfccConfig {
    /// Video frame rate; one MFCC frame per video frame.
    pub fps: u32,
    pub n_mels: usize,
    pub n_coeffs: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            fps: 50,
            n_mels: 26,
            n_coeffs: 13,
        }
    }
}

fn hz_to_mel(f: Real) -> Real {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: Real) -> Real {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filters over the `nfft / 2 + 1` power-spectrum bins.
fn mel_filterbank(n_mels: usize, nfft: usize, sample_rate: u32) -> Vec<Vec<(usize, Real)>> {
    let top = hz_to_mel(sample_rate as Real / 2.0);
    let edges: Vec<Real> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as Real / (n_mels + 1) as Real) * nfft as Real / sample_rate as Real)
        .collect();
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            (0..=nfft / 2)
                .filter_map(|b| {
                    let f = b as Real;
                    let w = if f > lo && f <= mid {
                        (f - lo) / (mid - lo)
                    } else if f > mid && f < hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    };
                    (w > 0.0).then_some((b, w))
                })
                .collect()
        })
        .collect()
}

/// Per-video-frame MFCCs: hop = sample_rate / fps, Hann window of two hops,
/// log mel energies, orthonormal DCT-II.
pub fn mfcc(samples: &[f32], sample_rate: u32, cfg: &MfccConfig) -> Result<Vec<Vec<Real>>, GeometryError> {
    if cfg.fps == 0 || sample_rate < 2 * cfg.fps {
        return Err(GeometryError::Invalid(format!("sample rate {sample_rate} with {} fps", cfg.fps)));
    }
    let hop = (sample_rate as Real / cfg.fps as Real).round() as usize;
    let len = 2 * hop;
    if samples.len() < len {
        return Ok(Vec::new());
    }
    let nfft = len.next_power_of_two();
    let window: Vec<Real> = (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as Real / len as Real).cos())
        .collect();
    let bank = mel_filterbank(cfg.n_mels, nfft, sample_rate);
    let fft = FftPlanner::<Real>::new().plan_fft_forward(nfft);
    let frames = (samples.len() - len) / hop + 1;
    let m = cfg.n_mels as Real;
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let s = &samples[f * hop..f * hop + len];
        for (i, c) in buf.iter_mut().enumerate() {
            *c = Complex::new(if i < len { s[i] as Real * window[i] } else { 0.0 }, 0.0);
        }
        fft.process(&mut buf);
        let power: Vec<Real> = buf[..=nfft / 2].iter().map(|c| c.norm_sqr()).collect();
        let logmel: Vec<Real> = bank
            .iter()
            .map(|filt| (filt.iter().map(|&(b, w)| w * power[b]).sum::<Real>() + 1e-10).ln())
            .collect();
        let coeffs = (0..cfg.n_coeffs)
            .map(|k| {
                let scale = if k == 0 { (1.0 / m).sqrt() } else { (2.0 / m).sqrt() };
                scale
                    * logmel
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| v * (std::f64::consts::PI * k as Real * (i as Real + 0.5) / m).cos())
                        .sum::<Real>()
            })
            .collect();
        out.push(coeffs);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SyncConfig {
    pub mfcc: MfccConfig,
    /// Largest lag searched, in frames.
    pub max_lag: usize,
    /// Peak-to-second-peak ratio needed for a reliable offset.
    pub min_confidence: Real,
    pub min_seconds: Real,
}

impl Default for SyncConfig {
    fn default() -> Self {
        Self {
            mfcc: MfccConfig::default(),
            max_lag: 150,
            min_confidence: 1.5,
            min_seconds: 2.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyncResult {
    /// Frames by which `b` lags `a` (negative: `b` leads).
    pub offset: i64,
    pub confidence: Real,
    pub reliable: bool,
    /// `(lag, ncc)` for every searched lag.
    pub curve: Vec<(i64, Real)>,
}

/// Coefficient tracks standardized over time.
fn standardize(x: &mut [Vec<Real>]) {
    let Some(d) = x.first().map(Vec::len) else { return };
    let n = x.len() as Real;
    for k in 0..d {
        let mean = x.iter().map(|r| r[k]).sum::<Real>() / n;
        let sd = (x.iter().map(|r| (r[k] - mean).powi(2)).sum::<Real>() / n).sqrt().max(1e-12);
        for r in x.iter_mut() {
            r[k] = (r[k] - mean) / sd;
        }
    }
}

/// Frame offset between two recordings from normalized cross-correlation
/// of their MFCC sequences.
pub fn sync_offset(a: &[f32], b: &[f32], sample_rate: u32, cfg: &SyncConfig) -> Result<SyncResult, GeometryError> {
    let need = (cfg.min_seconds * sample_rate as Real).ceil() as usize;
    for (name, s) in [("a", a), ("b", b)] {
        if s.len() < need {
            return Err(GeometryError::Invalid(format!(
                "signal {name} has {} samples, needs {need} ({} s)",
                s.len(),
                cfg.min_seconds
            )));
        }
    }
    let mut fa = mfcc(a, sample_rate, &cfg.mfcc)?;
    let mut fb = mfcc(b, sample_rate, &cfg.mfcc)?;
    standardize(&mut fa);
    standardize(&mut fb);
    let (na, nb) = (fa.len() as i64, fb.len() as i64);
    let min_overlap = (na.min(nb) / 2).max(1);
    let lag = cfg.max_lag as i64;
    let mut curve = Vec::new();
    for k in -lag..=lag {
        let (t0, t1) = (0.max(-k), na.min(nb - k));
        if t1 - t0 < min_overlap {
            continue;
        }
        let (mut dot, mut ea, mut eb) = (0.0, 0.0, 0.0);
        for t in t0..t1 {
            let (x, y) = (&fa[t as usize], &fb[(t + k) as usize]);
            for (u, v) in x.iter().zip(y) {
                dot += u * v;
                ea += u * u;
                eb += v * v;
            }
        }
        curve.push((k, dot / (ea * eb).sqrt().max(1e-300)));
    }
    if curve.is_empty() {
        return Err(GeometryError::Invalid("no lag with enough overlap".into()));
    }
    let (mut best, mut best_i) = (Real::NEG_INFINITY, 0);
    for (i, &(_, v)) in curve.iter().enumerate() {
        if v > best {
            best = v;
            best_i = i;
        }
    }
    let second = (0..curve.len())
        .filter(|&i| i != best_i)
        .filter(|&i| {
            let v = curve[i].1;
            (i == 0 || curve[i - 1].1 <= v) && (i + 1 == curve.len() || curve[i + 1].1 <= v)
        })
        .map(|i| curve[i].1)
        .fold(Real::NEG_INFINITY, Real::max);
    let confidence = if second > 0.0 { best / second } else { Real::INFINITY };
    Ok(SyncResult {
        offset: curve[best_i].0,
        confidence,
        reliable: confidence >= cfg.min_confidence,
        curve,
    })
}

/// Raw mono little-endian binary32 samples.
pub fn read_raw_audio(path: &Path) -> Result<Vec<f32>, GeometryError> {
    let bytes = std::fs::read(path).map_err(|source| GeometryError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() % 4 != 0 {
        return Err(GeometryError::Parse {
            path: path.to_path_buf(),
            msg: format!("{} bytes is not a whole number of f32 samples", bytes.len()),
        });
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

pub fn write_raw_audio(path: &Path, samples: &[f32]) -> Result<(), GeometryError> {
    let bytes: Vec<u8> = samples.iter().flat_map(|s| s.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|source| GeometryError::Io {
        path: path.to_path_buf(),
        source,
    })
}
