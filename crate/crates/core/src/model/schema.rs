use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::calendar::MARK_WIDTH;

/// How a raw driver channel is routed through the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelRole {
    /// Passed through the multi-scale wavelet path.
    Dynamic,
    /// Static or sparse channel that skips wavelet refinement.
    Bypass,
    /// Categorical land-cover code.
    Landcover,
}

/// Named raw driver channels with their roles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSchema {
    pub names: Vec<String>,
    pub roles: Vec<ChannelRole>,
    /// Raw index of the fire-detection channel whose forecast is the fire logit.
    pub fire_channel: Option<usize>,
}

impl ChannelSchema {
    pub fn new(
        names: Vec<String>,
        roles: Vec<ChannelRole>,
        fire_channel: Option<usize>,
    ) -> Result<Self> {
        let s = Self {
            names,
            roles,
            fire_channel,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.names.len() != self.roles.len() {
            return Err(Error::Config(format!(
                "{} channel names but {} roles",
                self.names.len(),
                self.roles.len()
            )));
        }
        let lc = self.roles.iter().filter(|r| **r == ChannelRole::Landcover).count();
        if lc != 1 {
            return Err(Error::Config(format!(
                "exactly one landcover channel required, found {lc}"
            )));
        }
        let Some(fire) = self.fire_channel else {
            return Ok(());
        };
        match self.roles.get(fire) {
            Some(ChannelRole::Dynamic | ChannelRole::Bypass) => Ok(()),
            _ => Err(Error::Config(format!(
                "fire channel {fire} must be a continuous channel"
            ))),
        }
    }

    /// Raw channel count `N`.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn landcover_channel(&self) -> usize {
        self.roles
            .iter()
            .position(|r| *r == ChannelRole::Landcover)
            .expect("validated schema")
    }

    /// Raw indices of the continuous channels, in driver order.
    pub fn continuous(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.roles[i] != ChannelRole::Landcover)
            .collect()
    }

    pub fn dynamic(&self) -> Vec<usize> {
        self.with_role(ChannelRole::Dynamic)
    }

    pub fn bypass(&self) -> Vec<usize> {
        self.with_role(ChannelRole::Bypass)
    }

    fn with_role(&self, role: ChannelRole) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.roles[i] == role).collect()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Positions of every channel group inside the token axis `[continuous | landcover | marks]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenLayout {
    pub n_tok: usize,
    /// Token width used by the land-cover channel (embedding width, or 1 for the raw code).
    pub landcover_width: usize,
    /// Token positions of the dynamic channels.
    pub dynamic: Vec<usize>,
    /// Token positions of the forecast (continuous) channels, in raw driver order.
    pub forecast: Vec<usize>,
    /// Position of the fire channel within the forecast channels.
    pub fire_forecast: Option<usize>,
}

impl TokenLayout {
    pub fn new(schema: &ChannelSchema, landcover_width: usize) -> Self {
        let continuous = schema.continuous();
        let token_of = |raw: usize| continuous.iter().position(|&c| c == raw).unwrap();
        let dynamic = schema.dynamic().into_iter().map(token_of).collect();
        let fire_forecast = schema.fire_channel.map(token_of);
        Self {
            n_tok: continuous.len() + landcover_width + MARK_WIDTH,
            landcover_width,
            dynamic,
            forecast: (0..continuous.len()).collect(),
            fire_forecast,
        }
    }

    pub fn n_continuous(&self) -> usize {
        self.forecast.len()
    }
}
