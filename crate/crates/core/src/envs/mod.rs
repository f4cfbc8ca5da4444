//! The benchmark environments and their config-file selection.

mod customer;
mod particle;
mod snap;
mod tabular;
mod vpn;

pub use customer::{CustomerGridEnv, CustomerServiceEnv};
pub use particle::ParticleEnv;
pub use snap::{fit_income_kde, read_income_csv, Component, IncomeDensity, SnapConfig, SnapEnv};
pub use tabular::{Outcome, TabularEnv};
pub use vpn::VpnEnv;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::mdp::Environment;

/// Environment section of a run config, selected by `kind`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvConfig {
    Vpn(VpnEnv),
    Particle(ParticleEnv),
    Customer(CustomerServiceEnv),
    Snap(SnapConfig),
    CustomerGrid(GridConfig),
    Coin(CoinConfig),
    Classification,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub horizon: usize,
    pub separation: i64,
    pub drift: i64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            horizon: 3,
            separation: 2,
            drift: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoinConfig {
    pub horizon: usize,
}

impl Default for CoinConfig {
    fn default() -> Self {
        CoinConfig { horizon: 1 }
    }
}

impl EnvConfig {
    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvConfig::Vpn(e) => {
                e.validate()?;
                Box::new(e.clone().finish())
            }
            EnvConfig::Particle(e) => {
                e.validate()?;
                Box::new(e.clone().finish())
            }
            EnvConfig::Customer(e) => {
                e.validate()?;
                Box::new(e.clone().finish())
            }
            EnvConfig::Snap(c) => Box::new(SnapEnv::new(c.clone())?),
            EnvConfig::CustomerGrid(g) => {
                if g.horizon == 0 {
                    return Err(crate::Error::config("env.horizon", "must be positive"));
                }
                Box::new(CustomerGridEnv::new(g.horizon, g.separation, g.drift))
            }
            EnvConfig::Coin(c) => {
                if c.horizon == 0 {
                    return Err(crate::Error::config("env.horizon", "must be positive"));
                }
                Box::new(TabularEnv::coin(c.horizon))
            }
            EnvConfig::Classification => Box::new(TabularEnv::biased_classification()),
        })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            EnvConfig::Vpn(_) => "vpn",
            EnvConfig::Particle(_) => "particle",
            EnvConfig::Customer(_) => "customer",
            EnvConfig::Snap(_) => "snap",
            EnvConfig::CustomerGrid(_) => "customer_grid",
            EnvConfig::Coin(_) => "coin",
            EnvConfig::Classification => "classification",
        }
    }
}
