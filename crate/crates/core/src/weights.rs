//! The `pcnet-weights-v1` JSON document: bank layout, modulation taps and
//! the trainable scalars.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gabor::{BankConfig, FilterBank, Modulation};
use crate::pc::PcParams;

pub const WEIGHTS_VERSION: &str = "pcnet-weights-v1";

/// Modulation taps of one (scale, orientation) cell, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellWeights {
    pub scale: usize,
    pub orientation: usize,
    pub size: usize,
    pub even: Vec<f64>,
    pub odd: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub version: String,
    pub bank: BankConfig,
    pub alpha: f64,
    pub beta: f64,
    pub xi: f64,
    pub cells: Vec<CellWeights>,
    /// `alpha` + `beta` + every modulation tap.
    pub n_params: usize,
}

impl Weights {
    pub fn new(bank: &BankConfig, params: &PcParams, modulation: &Modulation) -> Self {
        let cells = (0..bank.n_scales())
            .flat_map(|s| (0..bank.n_orientations).map(move |o| (s, o)))
            .map(|(s, o)| {
                let c = bank.cell(s, o);
                CellWeights {
                    scale: s,
                    orientation: o,
                    size: bank.kernel_sizes[s],
                    even: modulation.even[c].clone(),
                    odd: modulation.odd[c].clone(),
                }
            })
            .collect();
        Self {
            version: WEIGHTS_VERSION.to_string(),
            bank: bank.clone(),
            alpha: params.alpha,
            beta: params.beta,
            xi: params.xi,
            cells,
            n_params: 2 + modulation.len(),
        }
    }

    /// Untrained weights: all-ones modulation and default scalars.
    pub fn initial(bank: &BankConfig) -> Self {
        Self::new(bank, &PcParams::default(), &Modulation::ones(bank))
    }

    pub fn from_bank(bank: &FilterBank, params: &PcParams) -> Self {
        Self::new(bank.config(), params, bank.modulation())
    }

    pub fn params(&self) -> PcParams {
        PcParams {
            alpha: self.alpha,
            beta: self.beta,
            xi: self.xi,
        }
    }

    pub fn modulation(&self) -> Result<Modulation> {
        let cfg = &self.bank;
        let mut m = Modulation::ones(cfg);
        let mut seen = vec![false; cfg.n_cells()];
        for cell in &self.cells {
            if cell.scale >= cfg.n_scales() || cell.orientation >= cfg.n_orientations {
                return Err(Error::Weights(format!(
                    "cell ({}, {}) outside the bank layout",
                    cell.scale, cell.orientation
                )));
            }
            let c = cfg.cell(cell.scale, cell.orientation);
            let k = cfg.kernel_sizes[cell.scale];
            if cell.size != k || cell.even.len() != k * k || cell.odd.len() != k * k {
                return Err(Error::Weights(format!(
                    "cell ({}, {}) expects {k}x{k} taps",
                    cell.scale, cell.orientation
                )));
            }
            if std::mem::replace(&mut seen[c], true) {
                return Err(Error::Weights(format!(
                    "duplicate cell ({}, {})",
                    cell.scale, cell.orientation
                )));
            }
            m.even[c] = cell.even.clone();
            m.odd[c] = cell.odd.clone();
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Weights("missing modulation cells".into()));
        }
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != WEIGHTS_VERSION {
            return Err(Error::Weights(format!(
                "unsupported version {:?}, expected {WEIGHTS_VERSION:?}",
                self.version
            )));
        }
        self.bank.validate()?;
        self.params().validate()?;
        let m = self.modulation()?;
        if self.n_params != 2 + m.len() {
            return Err(Error::Weights(format!(
                "n_params is {}, layout has {}",
                self.n_params,
                2 + m.len()
            )));
        }
        Ok(())
    }

    /// Builds the modulated bank and the scalar parameters.
    pub fn build(&self) -> Result<(FilterBank, PcParams)> {
        self.validate()?;
        let bank = FilterBank::new(self.bank.clone())?.with_modulation(self.modulation()?)?;
        Ok((bank, self.params()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let w: Self = serde_json::from_str(text)?;
        w.validate()?;
        Ok(w)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Weights(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }
}
