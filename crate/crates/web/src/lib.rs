//! Browser bindings: synthetic voices, the layer shape plan of a network
//! configuration, and EER evaluation of a score file.
//!
//! The plain functions return `Result<_, String>` so they can be tested
//! natively; the `#[wasm_bindgen]` wrappers turn errors into JS exceptions.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rawnet::audio::{default_speakers, synthesize_utterance, SynthOptions, SAMPLE_RATE};
use rawnet::model::RawNetConfig;
use rawnet::scoring::{det_points, parse_scores, Metrics};
use wasm_bindgen::prelude::*;

/// One synthesised utterance and the voice that produced it.
#[wasm_bindgen(getter_with_clone)]
#[derive(Clone, Debug)]
pub struct Voice {
    pub samples: Vec<f32>,
    pub f0: f64,
    pub formants: Vec<f64>,
    pub sample_rate: u32,
}

/// Speaker `speaker` of a set of `speakers` voices drawn from `seed`, the
/// same draw `rawnet gen-data --seed` makes. `take` selects the utterance.
pub fn voice(speaker: usize, speakers: usize, seed: u32, take: u32, len: usize) -> Result<Voice, String> {
    if speaker >= speakers {
        return Err(format!("speaker {speaker} out of range for {speakers} voices"));
    }
    if len == 0 {
        return Err("length must be positive".into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
    rng.set_stream(1);
    let specs = default_speakers(speakers, &SynthOptions::default(), &mut rng).map_err(|e| e.to_string())?;
    let spec = &specs[speaker];
    let mut take_rng = ChaCha8Rng::seed_from_u64(((seed as u64) << 32) | take as u64);
    take_rng.set_stream(2 + speaker as u64);
    Ok(Voice {
        samples: synthesize_utterance(spec, len, &mut take_rng).into_iter().map(|v| v as f32).collect(),
        f0: spec.f0,
        formants: spec.formants.clone(),
        sample_rate: SAMPLE_RATE,
    })
}

/// `layer<TAB>d0 x d1` per line, for a network of `speakers` classes with
/// widths divided by `scale_factor`, on an input of `input_len` samples.
pub fn shape_table(scale_factor: usize, input_len: usize, speakers: usize, pretrain: bool) -> Result<String, String> {
    let cfg = RawNetConfig {
        scale_factor,
        input_len,
        num_speakers: speakers,
        ..RawNetConfig::default()
    };
    let plan = cfg.shape_plan(input_len, pretrain).map_err(|e| e.to_string())?;
    Ok(plan
        .iter()
        .map(|l| {
            let dims: Vec<String> = l.shape.iter().map(usize::to_string).collect();
            format!("{}\t{}\n", l.layer, dims.join(" x "))
        })
        .collect())
}

/// EER summary and DET curve of a score file.
#[wasm_bindgen(getter_with_clone)]
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub eer: f64,
    pub threshold: f64,
    pub n_trials: usize,
    /// `EER%  threshold  n_trials`, as `rawnet eval` prints it.
    pub summary: String,
    pub far: Vec<f64>,
    pub frr: Vec<f64>,
}

pub fn evaluation(csv: &str) -> Result<Evaluation, String> {
    let trials = parse_scores(csv).map_err(|e| e.to_string())?;
    let m = Metrics::from_trials(&trials).map_err(|e| e.to_string())?;
    let det = det_points(&trials).map_err(|e| e.to_string())?;
    Ok(Evaluation {
        eer: m.eer,
        threshold: m.threshold,
        n_trials: m.n_trials,
        summary: m.summary_line(),
        far: det.iter().map(|p| p.far).collect(),
        frr: det.iter().map(|p| p.frr).collect(),
    })
}

#[wasm_bindgen]
pub fn synthesize(speaker: usize, speakers: usize, seed: u32, take: u32, len: usize) -> Result<Voice, JsError> {
    voice(speaker, speakers, seed, take, len).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = shapePlan)]
pub fn shape_plan(scale_factor: usize, input_len: usize, speakers: usize, pretrain: bool) -> Result<String, JsError> {
    shape_table(scale_factor, input_len, speakers, pretrain).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn evaluate(csv: &str) -> Result<Evaluation, JsError> {
    evaluation(csv).map_err(|e| JsError::new(&e))
}
