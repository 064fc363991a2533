//! Named parameter groups and their binding into a computation graph.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use aulm_tensor::{Graph, Mat, Var};
use serde::{Deserialize, Serialize};

use crate::Float;

/// The three independently frozen parts of the model.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamGroup {
    Encoder,
    Adaptor,
    Llm,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 3] = [ParamGroup::Encoder, ParamGroup::Adaptor, ParamGroup::Llm];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::Adaptor => "adaptor",
            ParamGroup::Llm => "llm",
        }
    }

    /// Group owning a parameter name such as `llm.blocks.0.attn.wq`.
    pub fn of(param: &str) -> Option<ParamGroup> {
        let prefix = param.split('.').next()?;
        prefix.parse().ok()
    }
}

impl fmt::Display for ParamGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ParamGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "encoder" => Ok(ParamGroup::Encoder),
            "adaptor" => Ok(ParamGroup::Adaptor),
            "llm" => Ok(ParamGroup::Llm),
            other => Err(format!("unknown parameter group {other:?}")),
        }
    }
}

/// Graph handles for every model parameter of one forward/backward pass.
pub struct Bindings {
    vars: HashMap<String, Var>,
}

impl Bindings {
    /// Adds every parameter as a leaf; only members of `trainable` require
    /// gradients, so frozen groups are constants to the graph.
    pub fn new<F: Float>(
        g: &mut Graph<F>,
        params: &[(String, &Mat<F>)],
        trainable: &BTreeSet<ParamGroup>,
    ) -> Self {
        let vars = params
            .iter()
            .map(|(name, value)| {
                let grad = ParamGroup::of(name).is_some_and(|grp| trainable.contains(&grp));
                (name.clone(), g.leaf((*value).clone(), grad))
            })
            .collect();
        Bindings { vars }
    }

    pub fn get(&self, name: &str) -> Var {
        *self.vars.get(name).unwrap_or_else(|| panic!("parameter {name} is not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Owned copy of parameters, keyed by name.
pub type ParamSnapshot<F> = BTreeMap<String, Mat<F>>;

/// Largest absolute elementwise difference per group.
pub fn max_delta_per_group<F: Float>(
    before: &ParamSnapshot<F>,
    after: &ParamSnapshot<F>,
) -> BTreeMap<ParamGroup, f64> {
    let mut out: BTreeMap<ParamGroup, f64> = ParamGroup::ALL.iter().map(|&g| (g, 0.0)).collect();
    for (name, a) in before {
        let Some(b) = after.get(name) else { continue };
        let Some(group) = ParamGroup::of(name) else { continue };
        let delta = a.iter().zip(b.iter()).map(|(x, y)| (*x - *y).abs().as_f64()).fold(0.0, f64::max);
        let slot = out.entry(group).or_insert(0.0);
        *slot = slot.max(delta);
    }
    out
}

/// `true` iff every parameter of `group` is bitwise identical.
pub fn group_bit_identical<F: Float>(
    before: &ParamSnapshot<F>,
    after: &ParamSnapshot<F>,
    group: ParamGroup,
) -> bool {
    before.iter().filter(|(name, _)| ParamGroup::of(name) == Some(group)).all(|(name, a)| {
        after
            .get(name)
            .is_some_and(|b| a.dim() == b.dim() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits_eq(*y)))
    })
}

/// Bitwise float equality (distinguishes `-0.0` from `0.0`, equates NaNs with
/// equal payloads).
pub trait BitEq {
    fn to_bits_eq(self, other: Self) -> bool;
}

impl<F: Float> BitEq for F {
    fn to_bits_eq(self, other: Self) -> bool {
        let (mut a, mut b) = (Vec::new(), Vec::new());
        self.write_le(&mut a);
        other.write_le(&mut b);
        a == b
    }
}
