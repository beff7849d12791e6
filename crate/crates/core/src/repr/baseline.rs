use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::losses::LossWeights;
use crate::error::{Error, Result};

/// The five representation-learning methods compared in the experiments.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Baseline {
    #[default]
    #[serde(rename = "OURS")]
    Ours,
    #[serde(rename = "MDP_H")]
    MdpH,
    #[serde(rename = "D_MDP")]
    DMdp,
    #[serde(rename = "JSAE")]
    Jsae,
    #[serde(rename = "JSAE_C")]
    JsaeC,
}

/// How the action reaches the latent models.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Wiring {
    pub use_action_encoder: bool,
    pub state_free_action_encoder: bool,
}

impl Baseline {
    pub const ALL: [Baseline; 5] = [Baseline::Ours, Baseline::MdpH, Baseline::DMdp, Baseline::Jsae, Baseline::JsaeC];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Ours => "OURS",
            Baseline::MdpH => "MDP_H",
            Baseline::DMdp => "D_MDP",
            Baseline::Jsae => "JSAE",
            Baseline::JsaeC => "JSAE_C",
        }
    }

    /// Zeroes the weights of the losses this method does not use.
    pub fn weights(self, base: LossWeights) -> LossWeights {
        let mut w = base;
        match self {
            Baseline::Ours | Baseline::JsaeC => {}
            Baseline::MdpH => w.w_delta = 0.0,
            Baseline::DMdp => {
                w.w_c = 0.0;
                w.w_delta = 0.0;
            }
            Baseline::Jsae => w.w_c = 0.0,
        }
        w
    }

    /// MDP-H and D-MDP feed the one-hot action straight into the latent
    /// models. The JSAE variants embed actions independently of the state.
    pub fn wiring(self) -> Wiring {
        match self {
            Baseline::Ours => Wiring { use_action_encoder: true, state_free_action_encoder: false },
            Baseline::MdpH | Baseline::DMdp => Wiring { use_action_encoder: false, state_free_action_encoder: false },
            Baseline::Jsae | Baseline::JsaeC => Wiring { use_action_encoder: true, state_free_action_encoder: true },
        }
    }
}

impl fmt::Display for Baseline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase().replace('-', "_");
        Baseline::ALL.into_iter().find(|b| b.name() == key).ok_or_else(|| Error::UnknownBaseline(s.to_string()))
    }
}

/// Loss weights (from the defaults) and wiring for a method name.
pub fn configure_baseline(name: &str) -> Result<(LossWeights, Wiring)> {
    let b: Baseline = name.parse()?;
    Ok((b.weights(LossWeights::default()), b.wiring()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_table() {
        let (w, wiring) = configure_baseline("D_MDP").unwrap();
        assert_eq!((w.w_c, w.w_delta, wiring.use_action_encoder), (0.0, 0.0, false));
        assert!(w.w_t > 0.0 && w.w_r > 0.0);
        let (w, wiring) = configure_baseline("MDP_H").unwrap();
        assert_eq!((w.w_delta, wiring.use_action_encoder), (0.0, false));
        assert!(w.w_c > 0.0);
        let (w, wiring) = configure_baseline("OURS").unwrap();
        assert!(w.w_t > 0.0 && w.w_r > 0.0 && w.w_c > 0.0 && w.w_delta > 0.0);
        assert!(wiring.use_action_encoder && !wiring.state_free_action_encoder);
        let (jsae, _) = configure_baseline("JSAE").unwrap();
        let (jsae_c, _) = configure_baseline("jsae-c").unwrap();
        assert_eq!(jsae.w_c, 0.0);
        assert_eq!(LossWeights { w_c: jsae_c.w_c, ..jsae }, jsae_c);
        assert!(matches!(configure_baseline("PPO"), Err(Error::UnknownBaseline(_))));
    }

    #[test]
    fn names_round_trip() {
        for b in Baseline::ALL {
            assert_eq!(b.name().parse::<Baseline>().unwrap(), b);
            let json = serde_json::to_string(&b).unwrap();
            assert_eq!(json, format!("\"{}\"", b.name()));
        }
    }
}
