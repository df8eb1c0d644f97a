//! The four transceivers as modulate/demodulate pairs.
//!
//! OFDM and SC-FDMA are the single-slot (`N = 1`) framings of OSTF and OTFS;
//! they share the same code path so the reductions hold structurally.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{DdGrid, FrameParams, TfGrid, TimeSignal, C64};
use crate::transforms::{heisenberg, isfft, sfft, unitary_dft, wigner, Direction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Otfs,
    Ostf,
    Ofdm,
    Scfdma,
}

impl Scheme {
    pub const ALL: [Scheme; 4] = [Scheme::Otfs, Scheme::Ostf, Scheme::Ofdm, Scheme::Scfdma];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::Otfs => "otfs",
            Scheme::Ostf => "ostf",
            Scheme::Ofdm => "ofdm",
            Scheme::Scfdma => "scfdma",
        }
    }

    /// Symbols live on the delay(-Doppler) grid rather than the TF grid.
    pub fn is_dd(&self) -> bool {
        matches!(self, Scheme::Otfs | Scheme::Scfdma)
    }

    pub fn single_slot(&self) -> bool {
        matches!(self, Scheme::Ofdm | Scheme::Scfdma)
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchemeConfig {
    pub scheme: Scheme,
    pub params: FrameParams,
    pub cp_len: usize,
}

impl SchemeConfig {
    pub fn new(scheme: Scheme, params: FrameParams, cp_len: usize) -> Result<Self> {
        if scheme.single_slot() && params.n() != 1 {
            return Err(Error::InvalidParameter(format!(
                "{scheme} is framed one slot per block, got N={}",
                params.n()
            )));
        }
        if cp_len > params.m() {
            return Err(Error::InvalidParameter(format!(
                "cyclic prefix {cp_len} exceeds slot length {}",
                params.m()
            )));
        }
        Ok(Self { scheme, params, cp_len })
    }

    pub fn ofdm(m: usize, delta_f: f64, cp_len: usize) -> Result<Self> {
        Self::new(Scheme::Ofdm, FrameParams::new(m, 1, delta_f)?, cp_len)
    }

    pub fn scfdma(m: usize, delta_f: f64, cp_len: usize) -> Result<Self> {
        Self::new(Scheme::Scfdma, FrameParams::new(m, 1, delta_f)?, cp_len)
    }

    /// Number of data symbols in one block.
    pub fn block_len(&self) -> usize {
        self.params.dof()
    }
}

/// Symbols of one block in the scheme's native shape.
#[derive(Debug, Clone, PartialEq)]
pub enum SymbolBlock {
    /// `N x M` delay-Doppler grid (OTFS).
    Dd(DdGrid),
    /// `M x N` time-frequency grid (OSTF).
    Tf(TfGrid),
    /// Length-`M` vector (OFDM on subcarriers, SC-FDMA on delay taps).
    Line(Vec<C64>),
}

impl SymbolBlock {
    /// Canonical vector: `vec(x^T)` for DD grids, `vec(X)` for TF grids.
    pub fn to_vec(&self) -> Vec<C64> {
        match self {
            SymbolBlock::Dd(g) => g.to_vec(),
            SymbolBlock::Tf(g) => g.to_vec(),
            SymbolBlock::Line(v) => v.clone(),
        }
    }

    pub fn from_vec(cfg: &SchemeConfig, v: &[C64]) -> Result<Self> {
        let (m, n) = (cfg.params.m(), cfg.params.n());
        match cfg.scheme {
            Scheme::Otfs => Ok(SymbolBlock::Dd(DdGrid::from_vec(n, m, v)?)),
            Scheme::Ostf => Ok(SymbolBlock::Tf(TfGrid::from_vec(m, n, v)?)),
            Scheme::Ofdm | Scheme::Scfdma => {
                if v.len() != m {
                    return Err(Error::dim(m, v.len()));
                }
                Ok(SymbolBlock::Line(v.to_vec()))
            }
        }
    }
}

fn tf_for(cfg: &SchemeConfig, symbols: &SymbolBlock) -> Result<TfGrid> {
    let (m, n) = (cfg.params.m(), cfg.params.n());
    match (cfg.scheme, symbols) {
        (Scheme::Otfs, SymbolBlock::Dd(x)) => {
            x.check_shape(n, m)?;
            Ok(isfft(x))
        }
        (Scheme::Ostf, SymbolBlock::Tf(x)) => {
            x.check_shape(m, n)?;
            Ok(x.clone())
        }
        (Scheme::Ofdm, SymbolBlock::Line(v)) => TfGrid::from_vec(m, 1, v),
        (Scheme::Scfdma, SymbolBlock::Line(v)) => {
            if v.len() != m {
                return Err(Error::dim(m, v.len()));
            }
            let mut spread = v.clone();
            unitary_dft(&mut spread, Direction::Forward);
            TfGrid::from_vec(m, 1, &spread)
        }
        (s, _) => Err(Error::dim(format!("{s} symbol block"), "a block of another scheme")),
    }
}

/// OTFS: Heisenberg(ISFFT(x)); OSTF: Heisenberg(X); OFDM: Heisenberg of the
/// `M x 1` grid; SC-FDMA: Heisenberg(F_M x).
pub fn modulate(cfg: &SchemeConfig, symbols: &SymbolBlock) -> Result<TimeSignal> {
    let x = tf_for(cfg, symbols)?;
    heisenberg(&x, &cfg.params, cfg.cp_len)
}

/// Exact adjoint of [`modulate`] through a noiseless identity channel.
pub fn demodulate(cfg: &SchemeConfig, r: &TimeSignal) -> Result<SymbolBlock> {
    if r.cp_len() != cfg.cp_len {
        return Err(Error::dim(
            format!("prefix of {} samples", cfg.cp_len),
            format!("prefix of {} samples", r.cp_len()),
        ));
    }
    let y = wigner(r, &cfg.params)?;
    Ok(match cfg.scheme {
        Scheme::Otfs => SymbolBlock::Dd(sfft(&y)),
        Scheme::Ostf => SymbolBlock::Tf(y),
        Scheme::Ofdm => SymbolBlock::Line(y.to_vec()),
        Scheme::Scfdma => {
            let mut v = y.to_vec();
            unitary_dft(&mut v, Direction::Inverse);
            SymbolBlock::Line(v)
        }
    })
}

/// [`modulate`] on the canonical symbol vector.
pub fn modulate_vec(cfg: &SchemeConfig, v: &[C64]) -> Result<TimeSignal> {
    modulate(cfg, &SymbolBlock::from_vec(cfg, v)?)
}

/// [`demodulate`] returning the canonical symbol vector.
pub fn demodulate_vec(cfg: &SchemeConfig, r: &TimeSignal) -> Result<Vec<C64>> {
    Ok(demodulate(cfg, r)?.to_vec())
}

/// Received TF grid to the scheme's symbol domain (SFFT for the DD schemes).
pub fn tf_to_symbols(cfg: &SchemeConfig, y: &TfGrid) -> Result<Vec<C64>> {
    y.check_shape(cfg.params.m(), cfg.params.n())?;
    Ok(match cfg.scheme {
        Scheme::Otfs => sfft(y).to_vec(),
        Scheme::Ostf | Scheme::Ofdm => y.to_vec(),
        Scheme::Scfdma => {
            let mut v = y.to_vec();
            unitary_dft(&mut v, Direction::Inverse);
            v
        }
    })
}
