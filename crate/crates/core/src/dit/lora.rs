use std::collections::BTreeMap;

use super::params::ModelWeights;
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor};

/// Low-rank update of one base matrix: effective weight `W + (alpha/r)·A·B`.
#[derive(Clone, Debug, PartialEq)]
pub struct LoraAdapter {
    pub target: String,
    /// `[d_in, r]`
    pub a: Tensor,
    /// `[r, d_out]`
    pub b: Tensor,
    pub rank: usize,
    pub alpha: f64,
}

impl LoraAdapter {
    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    /// `(alpha/r)·A·B`.
    pub fn delta(&self) -> Result<Tensor> {
        Ok(self.a.matmul(&self.b)?.scale(self.scaling()))
    }
}

pub const LORA_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct LoraSet {
    pub adapters: BTreeMap<String, LoraAdapter>,
}

pub fn lora_param_name(target: &str, factor: char) -> String {
    format!("lora.{target}.{factor}")
}

impl LoraSet {
    /// `A ~ N(0, 0.02²)`, `B = 0`, so the effective weights start equal to the base.
    pub fn init(targets: &[String], weights: &ModelWeights, rank: usize, alpha: f64, seed: u64) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Config("LoRA rank must be positive".into()));
        }
        let mut rng = Rng::derive(seed, 0x10AA);
        let mut adapters = BTreeMap::new();
        for t in targets {
            let w = weights.get(t)?;
            let (d_in, d_out) = (w.shape()[0], w.shape()[1]);
            adapters.insert(
                t.clone(),
                LoraAdapter {
                    target: t.clone(),
                    a: rng.normal_tensor(&[d_in, rank]).scale(LORA_STD),
                    b: Tensor::zeros(&[rank, d_out]),
                    rank,
                    alpha,
                },
            );
        }
        Ok(Self { adapters })
    }

    pub fn get(&self, target: &str) -> Option<&LoraAdapter> {
        self.adapters.get(target)
    }

    pub fn param_names(&self) -> impl Iterator<Item = String> + '_ {
        self.adapters
            .keys()
            .flat_map(|t| [lora_param_name(t, 'a'), lora_param_name(t, 'b')])
    }

    fn split(name: &str) -> Option<(&str, char)> {
        let rest = name.strip_prefix("lora.")?;
        let (target, factor) = rest.rsplit_once('.')?;
        match factor {
            "a" => Some((target, 'a')),
            "b" => Some((target, 'b')),
            _ => None,
        }
    }

    pub fn param(&self, name: &str) -> Option<&Tensor> {
        let (target, factor) = Self::split(name)?;
        let ad = self.adapters.get(target)?;
        Some(if factor == 'a' { &ad.a } else { &ad.b })
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let (target, factor) = Self::split(name)?;
        let ad = self.adapters.get_mut(target)?;
        Some(if factor == 'a' { &mut ad.a } else { &mut ad.b })
    }
}

fn apply(weights: &ModelWeights, adapters: &LoraSet, sign: f64) -> Result<ModelWeights> {
    let mut out = weights.clone();
    for (target, ad) in &adapters.adapters {
        let w = out
            .params
            .get_mut(target)
            .ok_or_else(|| Error::Config(format!("LoRA target {target} is not a base weight")))?;
        let delta = ad.delta()?;
        if delta.shape() != w.shape() {
            return Err(Error::Dimension {
                op: "merge_lora",
                lhs: w.shape().to_vec(),
                rhs: delta.shape().to_vec(),
            });
        }
        w.axpy(sign, &delta)?;
    }
    Ok(out)
}

/// Weights with every target replaced by `W + (alpha/r)·A·B`; the input is untouched.
pub fn merge_lora(weights: &ModelWeights, adapters: &LoraSet) -> Result<ModelWeights> {
    apply(weights, adapters, 1.0)
}

/// Inverse of [`merge_lora`].
pub fn unmerge_lora(weights: &ModelWeights, adapters: &LoraSet) -> Result<ModelWeights> {
    apply(weights, adapters, -1.0)
}
