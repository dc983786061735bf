//! Central finite differences for validating analytic gradients, and a
//! whole-model check that compares every parameter's taped gradient with
//! its finite-difference estimate.

use serde::Serialize;

use crate::embedding::{synth_dataset, Episode, SynthConfig};
use crate::error::Result;
use crate::graph::{GraphConfig, GraphInput};
use crate::model::{forward_tape, ModelConfig, ModelDims, ModelParams, Variant};
use crate::tensor::Tape;

/// Step used by every finite-difference check in the crate.
pub const FD_STEP: f64 = 1e-6;

/// Absolute floor of the relative-error denominator, so gradients that are
/// zero on both sides compare as equal instead of `0/0`.
pub const REL_FLOOR: f64 = 1e-6;

/// `(f(x + h·e_k) − f(x − h·e_k)) / 2h` for every coordinate `k`.
pub fn central_difference<F>(mut f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|k| {
            probe[k] = x[k] + h;
            let plus = f(&probe);
            probe[k] = x[k] - h;
            let minus = f(&probe);
            probe[k] = x[k];
            (plus - minus) / (2.0 * h)
        })
        .collect()
}

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    debug_assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Parameter groups reported by [`model_gradcheck`], in report order.
pub const GROUPS: [&str; 10] = [
    "W", "a", "omega", "lambda", "M", "W_v", "W_t", "a_fusion", "temporal", "classifier",
];

fn group_of(name: &str) -> &'static str {
    let last = name.rsplit('.').next().unwrap_or(name);
    match name.split('.').next() {
        Some("temporal") => "temporal",
        Some("classifier") => "classifier",
        Some("adapt") => "lambda",
        Some("fusion") => match last {
            "w_v" => "W_v",
            "w_t" => "W_t",
            _ => "a_fusion",
        },
        _ => match last {
            "w" => "W",
            "a" => "a",
            "m" => "M",
            _ => "omega",
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupReport {
    pub group: String,
    pub values: usize,
    pub max_rel_error: f64,
    /// Largest analytic gradient magnitude, so a vacuous pass is visible.
    pub max_abs_grad: f64,
}

/// The default check fixture: two frames with two objects each and one
/// text embedding.
pub fn tiny_episode(seed: u64) -> Result<Episode> {
    let cfg = SynthConfig {
        num_classes: 2,
        episodes_per_class: 1,
        frames: 2,
        patches: 4,
        objects_per_frame: 2,
        visual_dim: 5,
        text_dim: 4,
        noise_std: 0.3,
        seed,
    };
    Ok(synth_dataset(&cfg)?.swap_remove(0))
}

/// Model settings for the check: the full variant with refined weights
/// scaling messages (so every λ is on the loss path) and thresholds that
/// keep the topology fixed under small perturbations.
pub fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        variant: Variant::Full,
        graph: GraphConfig {
            spatial_threshold: -1.0,
            semantic_threshold: -1.0,
        },
        prune_threshold: -2.0,
        add_threshold: 1.01,
        weighted_messages: true,
    }
}

fn loss(params: &ModelParams, input: &GraphInput, label: usize, cfg: &ModelConfig) -> Result<f64> {
    let tape = Tape::new();
    let vars = params.bind_constant(&tape);
    let fwd = forward_tape(&tape, params, &vars, input, cfg)?;
    let l = tape.cross_entropy(fwd.logits, label)?;
    Ok(tape.item(l))
}

/// Max relative error between taped and central-difference gradients of
/// the cross-entropy loss, per parameter group.
pub fn model_gradcheck(episode: &Episode, params: &ModelParams, cfg: &ModelConfig) -> Result<Vec<GroupReport>> {
    let input = GraphInput::from_episode(episode)?;
    let label = episode.class_id;

    let tape = Tape::new();
    let vars = params.bind(&tape);
    let fwd = forward_tape(&tape, params, &vars, &input, cfg)?;
    let l = tape.cross_entropy(fwd.logits, label)?;
    tape.backward(l)?;

    let mut reports: Vec<GroupReport> = GROUPS
        .iter()
        .map(|g| GroupReport {
            group: g.to_string(),
            values: 0,
            max_rel_error: 0.0,
            max_abs_grad: 0.0,
        })
        .collect();
    let mut probe = params.clone();
    for (k, p) in params.params().iter().enumerate() {
        let analytic = tape.grad(vars.vars[k]).unwrap_or_else(|| vec![0.0; p.tensor.numel()]);
        let mut numeric = Vec::with_capacity(p.tensor.numel());
        for idx in 0..p.tensor.numel() {
            let x = p.tensor.data()[idx];
            probe.tensor_mut(k).data_mut()[idx] = x + FD_STEP;
            let plus = loss(&probe, &input, label, cfg)?;
            probe.tensor_mut(k).data_mut()[idx] = x - FD_STEP;
            let minus = loss(&probe, &input, label, cfg)?;
            probe.tensor_mut(k).data_mut()[idx] = x;
            numeric.push((plus - minus) / (2.0 * FD_STEP));
        }
        let r = reports
            .iter_mut()
            .find(|r| r.group == group_of(&p.name))
            .expect("known group");
        r.values += numeric.len();
        r.max_rel_error = r.max_rel_error.max(max_relative_error(&analytic, &numeric));
        r.max_abs_grad = analytic.iter().fold(r.max_abs_grad, |m, g| m.max(g.abs()));
    }
    Ok(reports)
}

/// [`model_gradcheck`] on [`tiny_episode`] with freshly seeded parameters.
pub fn default_gradcheck(seed: u64) -> Result<Vec<GroupReport>> {
    let episode = tiny_episode(seed)?;
    let dims = ModelDims {
        hidden: 6,
        layers: 2,
        ..ModelDims::new(episode.visual_dim, episode.text_dim, 2)
    };
    let cfg = gradcheck_config();
    let params = ModelParams::init(&dims, cfg.variant, seed)?;
    model_gradcheck(&episode, &params, &cfg)
}
