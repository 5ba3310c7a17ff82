use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Ablation {
    NoAux,
    NoProgressive,
    NoPra,
    NoSharedDisc,
    NoLns,
    NoLrec,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::NoAux,
        Ablation::NoProgressive,
        Ablation::NoPra,
        Ablation::NoSharedDisc,
        Ablation::NoLns,
        Ablation::NoLrec,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoAux => "no_aux",
            Ablation::NoProgressive => "no_progressive",
            Ablation::NoPra => "no_pra",
            Ablation::NoSharedDisc => "no_shared_disc",
            Ablation::NoLns => "no_Lns",
            Ablation::NoLrec => "no_Lrec",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}

/// Ablation switches after normalization: `no_aux` implies `no_pra`, and
/// `no_pra` implies `no_progressive`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablations {
    pub no_aux: bool,
    pub no_progressive: bool,
    pub no_pra: bool,
    pub no_shared_disc: bool,
    pub no_lns: bool,
    pub no_lrec: bool,
}

impl Ablations {
    pub fn from_flags(flags: &[Ablation]) -> Result<Self> {
        let mut out = Self::default();
        for (i, f) in flags.iter().enumerate() {
            if flags[..i].contains(f) {
                return Err(Error::Config(format!("ablation `{f}` listed twice")));
            }
            match f {
                Ablation::NoAux => out.no_aux = true,
                Ablation::NoProgressive => out.no_progressive = true,
                Ablation::NoPra => out.no_pra = true,
                Ablation::NoSharedDisc => out.no_shared_disc = true,
                Ablation::NoLns => out.no_lns = true,
                Ablation::NoLrec => out.no_lrec = true,
            }
        }
        if out.no_aux && out.no_shared_disc {
            return Err(Error::Config(
                "ablations `no_aux` and `no_shared_disc` contradict: without the auxiliary domain there is no second discriminator to share with".into(),
            ));
        }
        out.no_pra |= out.no_aux;
        out.no_progressive |= out.no_pra;
        Ok(out)
    }

    /// Comma-separated list; empty means the full model.
    pub fn parse_list(s: &str) -> Result<Self> {
        let flags = s
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Ablation>>>()?;
        Self::from_flags(&flags)
    }

    /// Canonical list of the active switches, implied ones included.
    pub fn flags(&self) -> Vec<Ablation> {
        let on = [
            self.no_aux,
            self.no_progressive,
            self.no_pra,
            self.no_shared_disc,
            self.no_lns,
            self.no_lrec,
        ];
        Ablation::ALL
            .into_iter()
            .zip(on)
            .filter_map(|(a, on)| on.then_some(a))
            .collect()
    }
}

impl fmt::Display for Ablations {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.flags().iter().map(|a| a.name()).collect();
        f.write_str(&names.join(","))
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub resolution: usize,
    pub ds_dim: usize,
    pub dr_dim: usize,
    /// Generator channels per pyramid level, coarsest first. The pyramid has
    /// one level per entry; the base extent is `resolution / 2^(levels-1)`.
    pub widths: Vec<usize>,
    /// Channels of the two domain-specific discriminator convolutions and
    /// of the shared tail convolution.
    pub disc_widths: [usize; 3],
    pub ablations: Ablations,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            resolution: 32,
            ds_dim: 64,
            dr_dim: 16,
            widths: vec![128, 128, 64, 64, 32],
            disc_widths: [32, 64, 128],
            ablations: Ablations::default(),
        }
    }
}

impl ModelConfig {
    pub fn levels(&self) -> usize {
        self.widths.len()
    }

    pub fn base_extent(&self) -> usize {
        self.resolution >> (self.levels() - 1)
    }

    /// Spatial extent of each pyramid level.
    pub fn extents(&self) -> Vec<usize> {
        (0..self.levels()).map(|l| self.base_extent() << l).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.ds_dim == 0 || self.dr_dim == 0 {
            return Err(Error::Config("ds_dim and dr_dim must be positive".into()));
        }
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::Config(
                "widths needs at least two positive entries".into(),
            ));
        }
        let levels = self.levels();
        if levels > 12 || self.resolution % (1 << (levels - 1)) != 0 || self.base_extent() == 0 {
            return Err(Error::Config(format!(
                "resolution {} is not divisible by 2^{} (one halving per pyramid level)",
                self.resolution,
                levels - 1
            )));
        }
        if self.resolution % 8 != 0 {
            return Err(Error::Config(format!(
                "resolution {} must be a multiple of 8 (three stride-2 discriminator layers)",
                self.resolution
            )));
        }
        if self.disc_widths.contains(&0) {
            return Err(Error::Config("disc_widths must be positive".into()));
        }
        Ok(())
    }
}
