//! Harmonic-plus-noise speaker synthesiser.
//!
//! Each speaker is a fundamental frequency and a few formant-like
//! resonances. An utterance is a harmonic stack at a jittered fundamental
//! with a -12 dB/octave source tilt, boosted near the jittered resonances,
//! plus low-level noise through a two-pole resonator at the first formant.

use std::f64::consts::PI;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::SAMPLE_RATE;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpeakerSpec {
    pub speaker_id: usize,
    /// Fundamental frequency in Hz.
    pub f0: f64,
    /// Resonance centre frequencies in Hz (2 or 3).
    pub formants: Vec<f64>,
    /// Relative per-utterance jitter of the fundamental, e.g. 0.02 for +-2%.
    pub f0_jitter: f64,
    pub formant_jitter: f64,
    /// Noise amplitude relative to the harmonic part.
    pub noise_floor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    pub min_len: usize,
    pub max_len: usize,
    pub f0_range: (f64, f64),
    /// Minimum relative distance between any two speakers' fundamentals.
    pub f0_margin: f64,
    /// Minimum relative distance of at least one resonance.
    pub formant_margin: f64,
    pub f0_jitter: f64,
    pub formant_jitter: f64,
    pub noise_floor: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self {
            min_len: 9_000,
            max_len: 16_000,
            f0_range: (85.0, 270.0),
            f0_margin: 0.04,
            formant_margin: 0.15,
            f0_jitter: 0.01,
            formant_jitter: 0.02,
            noise_floor: 0.03,
        }
    }
}

const FORMANT_BANDS: [(f64, f64); 3] = [(300.0, 900.0), (900.0, 2400.0), (2400.0, 3400.0)];

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.min(b)
}

/// Draw `n` mutually distinct speakers.
pub fn default_speakers(n: usize, opts: &SynthOptions, rng: &mut dyn RngCore) -> Result<Vec<SyntheticSpeakerSpec>> {
    let mut out: Vec<SyntheticSpeakerSpec> = Vec::with_capacity(n);
    let (lo, hi) = opts.f0_range;
    let mut attempts = 0;
    while out.len() < n {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::arg(format!(
                "cannot fit {n} speakers into f0 range {lo}-{hi} Hz with margin {}",
                opts.f0_margin
            )));
        }
        // Log-uniform fundamental.
        let f0 = (lo.ln() + rng.random::<f64>() * (hi / lo).ln()).exp();
        let formants: Vec<f64> = FORMANT_BANDS.iter().map(|&(a, b)| rng.random_range(a..b)).collect();
        let distinct = out.iter().all(|s| {
            rel(s.f0, f0) >= opts.f0_margin
                && s.formants.iter().zip(&formants).any(|(&p, &q)| rel(p, q) >= opts.formant_margin)
        });
        if distinct {
            out.push(SyntheticSpeakerSpec {
                speaker_id: out.len(),
                f0,
                formants,
                f0_jitter: opts.f0_jitter,
                formant_jitter: opts.formant_jitter,
                noise_floor: opts.noise_floor,
            });
        }
    }
    Ok(out)
}

fn jitter(x: f64, amount: f64, rng: &mut dyn RngCore) -> f64 {
    if amount > 0.0 {
        x * (1.0 + rng.random_range(-amount..amount))
    } else {
        x
    }
}

/// One utterance of `len` samples, peak-normalised to 0.5.
pub fn synthesize_utterance(spec: &SyntheticSpeakerSpec, len: usize, rng: &mut dyn RngCore) -> Vec<f64> {
    let sr = SAMPLE_RATE as f64;
    let f0 = jitter(spec.f0, spec.f0_jitter, rng);
    let formants: Vec<f64> = spec.formants.iter().map(|&f| jitter(f, spec.formant_jitter, rng)).collect();
    let vib_rate = rng.random_range(4.0..6.0);
    let vib_depth = 0.004;
    let vib_phase = rng.random_range(0.0..2.0 * PI);

    let n_harm = ((0.25 * sr) / f0).floor() as usize;
    let amps: Vec<f64> = (1..=n_harm)
        .map(|h| {
            let f = h as f64 * f0;
            let boost: f64 = formants
                .iter()
                .map(|&fc| {
                    let bw = 60.0 + 0.06 * fc;
                    1.0 / (1.0 + ((f - fc) / bw).powi(2))
                })
                .sum();
            (1.0 + 8.0 * boost) / (h * h) as f64
        })
        .collect();
    let phases: Vec<f64> = (0..n_harm).map(|_| rng.random_range(0.0..2.0 * PI)).collect();

    let mut y = vec![0.0; len];
    let mut phase = 0.0;
    for (t, out) in y.iter_mut().enumerate() {
        let ts = t as f64 / sr;
        let f = f0 * (1.0 + vib_depth * (2.0 * PI * vib_rate * ts + vib_phase).sin());
        phase += 2.0 * PI * f / sr;
        let mut s = 0.0;
        for (h, (&a, &p)) in amps.iter().zip(&phases).enumerate() {
            s += a * ((h + 1) as f64 * phase + p).sin();
        }
        *out = s;
    }

    // Resonant noise at the first formant.
    let r = 0.97;
    let theta = 2.0 * PI * formants[0] / sr;
    let (a1, a2) = (2.0 * r * theta.cos(), -r * r);
    let (mut y1, mut y2) = (0.0, 0.0);
    let mut noise: Vec<f64> = (0..len)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            let v = e + a1 * y1 + a2 * y2;
            y2 = y1;
            y1 = v;
            v
        })
        .collect();
    let rms = |v: &[f64]| (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt();
    let (sig_rms, noise_rms) = (rms(&y), rms(&noise));
    if noise_rms > 0.0 {
        let k = spec.noise_floor * sig_rms / noise_rms;
        noise.iter_mut().for_each(|v| *v *= k);
    }

    // 20 ms fade in/out.
    let ramp = (0.02 * sr) as usize;
    for (t, (v, n)) in y.iter_mut().zip(&noise).enumerate() {
        let edge = t.min(len - 1 - t);
        let g = if edge < ramp { edge as f64 / ramp as f64 } else { 1.0 };
        *v = g * (*v + n);
    }
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        y.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    y
}
