//! Finite-difference checks over the differentiable building blocks.

use serde::{Deserialize, Serialize};

use super::model::{block, Binder};
use super::params::{proj_name, ModelWeights};
use super::{DiTConfig, TextEmbedding};
use crate::audio::{GROUP_DIM, PACK_DIM};
use crate::error::Result;
use crate::numerics::{grad_check, AttentionMask, Graph, Rng, Tensor, Var};

/// Finite-difference step used by [`gradient_suite`].
pub const SUITE_STEP: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub name: String,
    /// Scalar coordinates perturbed.
    pub coordinates: usize,
    pub max_rel_err: f64,
}

/// Reduces `y` against a fixed random weighting so every output
/// coordinate carries a distinct gradient.
fn probe_sum(g: &mut Graph, y: Var, rng: &mut Rng) -> Result<Var> {
    let w = rng.normal_tensor(g.value(y).shape());
    let w = g.constant(w);
    let p = g.mul(y, w)?;
    Ok(g.sum(p))
}

fn check<F>(name: &str, inputs: Vec<Tensor>, seed: u64, f: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let coordinates = inputs.iter().map(Tensor::numel).sum();
    let max_rel_err = grad_check(
        |g, v| {
            let y = f(g, v)?;
            probe_sum(g, y, &mut Rng::new(seed))
        },
        &inputs,
        SUITE_STEP,
    )?;
    Ok(GradReport {
        name: name.to_string(),
        coordinates,
        max_rel_err,
    })
}

/// Linear, layer norm, attention, FFN, audio packing and one full
/// injection block, each checked against central differences.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradReport>> {
    let mut rng = Rng::derive(seed, 0x6C);
    let mut n = |shape: &[usize], s: f64| rng.normal_tensor(shape).scale(s);
    let mut out = Vec::new();

    out.push(check(
        "linear",
        vec![n(&[5, 4], 1.0), n(&[4, 3], 0.5), n(&[1, 3], 0.5)],
        seed,
        |g, v| {
            let y = g.matmul(v[0], v[1])?;
            g.add_row(y, v[2])
        },
    )?);

    out.push(check(
        "layernorm",
        vec![n(&[4, 6], 1.0), n(&[1, 6], 1.0), n(&[1, 6], 1.0)],
        seed,
        |g, v| {
            let y = g.layernorm(v[0], 1e-5);
            let y = g.mul_row(y, v[1])?;
            g.add_row(y, v[2])
        },
    )?);

    out.push(check(
        "attention",
        vec![n(&[6, 8], 1.0), n(&[6, 8], 1.0), n(&[6, 8], 1.0)],
        seed,
        |g, v| g.attention(v[0], v[1], v[2], 2, AttentionMask::Full),
    )?);

    out.push(check(
        "attention_frame_local",
        vec![n(&[6, 8], 1.0), n(&[6, 8], 1.0), n(&[6, 8], 1.0)],
        seed,
        |g, v| g.attention(v[0], v[1], v[2], 2, AttentionMask::Grouped { tokens_per_group: 3 }),
    )?);

    out.push(check(
        "ffn",
        vec![
            n(&[5, 6], 1.0),
            n(&[6, 12], 0.4),
            n(&[1, 12], 0.2),
            n(&[12, 6], 0.3),
            n(&[1, 6], 0.2),
        ],
        seed,
        |g, v| {
            let h = g.matmul(v[0], v[1])?;
            let h = g.add_row(h, v[2])?;
            let h = g.silu(h);
            let y = g.matmul(h, v[3])?;
            g.add_row(y, v[4])
        },
    )?);

    let groups = n(&[3, GROUP_DIM], 1.0);
    out.push(check(
        "audio_pack",
        vec![n(&[GROUP_DIM, PACK_DIM], 0.1), n(&[PACK_DIM, 8], 0.2)],
        seed,
        |g, v| {
            let a = g.constant(groups.clone());
            let z_a = g.matmul(a, v[0])?;
            let per_frame = g.matmul(z_a, v[1])?;
            Ok(g.repeat_rows(per_frame, 4))
        },
    )?);

    out.push(dit_block(seed)?);
    Ok(out)
}

/// Block 2 of a small injection-enabled model: every block weight, the
/// audio projection, the residual input and the packed audio rows.
fn dit_block(seed: u64) -> Result<GradReport> {
    let mut cfg = DiTConfig::with_blocks(2, 16, 2, 32);
    cfg.init_seed = seed;
    let mut weights = ModelWeights::init(&cfg)?;
    weights.randomize_audio(seed ^ 0xA);
    let mut rng = Rng::derive(seed, 0xB1);
    let (frames, hw) = (2, 4);
    let text = TextEmbedding::from_prompt("a round face speaking", cfg.d_model).canonical();

    let prefix = "blocks.2.";
    let mut names: Vec<String> = weights
        .params
        .keys()
        .filter(|k| k.starts_with(prefix))
        .cloned()
        .collect();
    names.push(proj_name(2));
    let mut inputs: Vec<Tensor> = names.iter().map(|k| weights.params[k].clone()).collect();
    // Norm gains start at one and offsets at zero; perturb them so the check
    // exercises a generic point.
    for (k, t) in names.iter().zip(inputs.iter_mut()) {
        if k.contains("norm") {
            let jitter = rng.normal_tensor(t.shape()).scale(0.2);
            t.axpy(1.0, &jitter)?;
        }
    }
    inputs.push(rng.normal_tensor(&[frames * hw, cfg.d_model]));
    inputs.push(rng.normal_tensor(&[frames, cfg.pack_dim]).scale(0.5));
    let n_named = names.len();

    check("dit_block", inputs, seed, |g, v| {
        let mut b = Binder::new(&weights, None, None);
        for (name, var) in names.iter().zip(v) {
            b.bind(name, *var);
        }
        let t = g.constant(text.clone());
        block(g, &mut b, 2, v[n_named], t, Some(v[n_named + 1]), hw)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_case_passes() {
        let reports = gradient_suite(7).unwrap();
        let names: Vec<&str> = reports.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(
            names,
            [
                "linear",
                "layernorm",
                "attention",
                "attention_frame_local",
                "ffn",
                "audio_pack",
                "dit_block"
            ]
        );
        for r in &reports {
            assert!(r.max_rel_err < 1e-4, "{}: {}", r.name, r.max_rel_err);
        }
        assert!(reports[6].coordinates > 3000);
    }
}
