//! Scenario files (TOML). Unknown keys are rejected.
//!
//! ```toml
//! seed = 7
//! trials = 200
//! snr_db_list = [0.0, 5.0, 10.0]
//! scheme = "otfs"            # otfs | ostf | ofdm | scfdma
//! constellation = "qpsk"     # bpsk | qpsk | 16qam
//! equalizer = "mmse_dd"      # one_tap_tf | mmse_dd | ml
//!
//! [frame]
//! M = 16
//! N = 8
//! delta_f_hz = 15000.0
//! cp_len = 4
//!
//! [channel]
//! mode = "per_slot_cp"       # cyclic | per_slot_cp
//! taps = [{ delay = 0, doppler = 0, gain = [0.8, 0.0] },
//!         { delay = 2, doppler = 1, gain = [0.0, 0.6] }]
//! # or: random = { L_max = 4, V_max = 2, profile = { kind = "uniform" } }
//! ```

use std::path::Path;

use serde::Deserialize;

use crate::channel::{ChannelMode, DdChannel, PowerProfile, Tap};
use crate::equalizer::{Modulation, ML_MAX_BITS};
use crate::error::{Error, Result};
use crate::frame::{FrameParams, MappingKind, C64};
use crate::modem::{Scheme, SchemeConfig};
use crate::multiuser::BetaPlacement;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EqualizerKind {
    OneTapTf,
    #[default]
    MmseDd,
    Ml,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSection {
    #[serde(rename = "M")]
    pub m: usize,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(default = "default_delta_f")]
    pub delta_f_hz: f64,
    #[serde(default)]
    pub cp_len: usize,
}

fn default_delta_f() -> f64 {
    15e3
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TapSpec {
    pub delay: usize,
    #[serde(default)]
    pub doppler: i64,
    /// `[re, im]`
    pub gain: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSpec {
    #[serde(rename = "L_max")]
    pub l_max: usize,
    #[serde(rename = "V_max")]
    pub v_max: usize,
    #[serde(default = "default_profile")]
    pub profile: PowerProfile,
}

fn default_profile() -> PowerProfile {
    PowerProfile::Uniform
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    #[serde(default = "default_mode")]
    pub mode: ChannelMode,
    pub taps: Option<Vec<TapSpec>>,
    pub random: Option<RandomSpec>,
}

fn default_mode() -> ChannelMode {
    ChannelMode::Cyclic
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            mode: ChannelMode::Cyclic,
            taps: None,
            random: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Uplink,
    Downlink,
}

impl Direction {
    pub fn name(&self) -> &'static str {
        match self {
            Direction::Uplink => "uplink",
            Direction::Downlink => "downlink",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpreaderKind {
    /// Small per-user ISFFT placed on the user's TF cells.
    TfMapped,
    /// Placement on the DD grid followed by the full ISFFT.
    DdMapped,
    /// Separable spreading with the selected DFT columns.
    Isfft,
    /// Separable spreading with random complex Gaussian columns.
    Gaussian,
    /// Symbols placed directly on TF cells with power weights.
    TfAlloc,
    /// Zero-forcing transmit preprocessing (downlink).
    Zf,
}

impl SpreaderKind {
    pub const ALL: [SpreaderKind; 6] = [
        SpreaderKind::TfMapped,
        SpreaderKind::DdMapped,
        SpreaderKind::Isfft,
        SpreaderKind::Gaussian,
        SpreaderKind::TfAlloc,
        SpreaderKind::Zf,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SpreaderKind::TfMapped => "tf_mapped",
            SpreaderKind::DdMapped => "dd_mapped",
            SpreaderKind::Isfft => "isfft",
            SpreaderKind::Gaussian => "gaussian",
            SpreaderKind::TfAlloc => "tf_alloc",
            SpreaderKind::Zf => "zf",
        }
    }

    pub fn allowed(&self, dir: Direction) -> bool {
        match dir {
            Direction::Uplink => !matches!(self, SpreaderKind::Zf),
            Direction::Downlink => !matches!(self, SpreaderKind::TfMapped),
        }
    }

    /// Each user only touches its own TF cells.
    pub fn is_tf_local(&self) -> bool {
        matches!(self, SpreaderKind::TfMapped | SpreaderKind::TfAlloc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PowerAllocation {
    #[default]
    Equal,
    WaterFill,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiuserSection {
    pub mode: Direction,
    #[serde(rename = "K_d")]
    pub k_d: usize,
    #[serde(rename = "K_D")]
    pub k_dd: usize,
    #[serde(default = "default_mapping")]
    pub freq_mapping: MappingKind,
    #[serde(default = "default_mapping")]
    pub time_mapping: MappingKind,
    pub spreader: SpreaderKind,
    /// Total expected transmit energy per block; defaults to `MN`.
    pub power_budget: Option<f64>,
    #[serde(default)]
    pub beta_placement: BetaPlacement,
    #[serde(default)]
    pub power_allocation: PowerAllocation,
}

fn default_mapping() -> MappingKind {
    MappingKind::Localized
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub frame: FrameSection,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    #[serde(default = "default_constellation")]
    pub constellation: Modulation,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub equalizer: EqualizerKind,
    pub multiuser: Option<MultiuserSection>,
    pub snr_db_list: Vec<f64>,
    pub trials: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_scheme() -> Scheme {
    Scheme::Otfs
}

fn default_constellation() -> Modulation {
    Modulation::Qpsk
}

/// The channel a scenario describes.
#[derive(Debug, Clone, PartialEq)]
pub enum ChannelSpec {
    Fixed(DdChannel),
    Random {
        l_max: usize,
        v_max: usize,
        profile: PowerProfile,
    },
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let s: Scenario = toml::from_str(text).map_err(|e| Error::Config(e.to_string().trim_end().to_string()))?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn params(&self) -> Result<FrameParams> {
        FrameParams::new(self.frame.m, self.frame.n, self.frame.delta_f_hz)
            .map_err(|e| Error::Config(format!("frame: {e}")))
    }

    pub fn scheme_config(&self) -> Result<SchemeConfig> {
        SchemeConfig::new(self.scheme, self.params()?, self.frame.cp_len)
            .map_err(|e| Error::Config(format!("scheme: {e}")))
    }

    pub fn channel_spec(&self) -> Result<ChannelSpec> {
        let params = self.params()?;
        match (&self.channel.taps, &self.channel.random) {
            (Some(_), Some(_)) => Err(Error::Config(
                "channel: give either `taps` or `random`, not both".into(),
            )),
            (None, None) => Ok(ChannelSpec::Fixed(DdChannel::identity())),
            (Some(taps), None) => {
                let taps = taps
                    .iter()
                    .map(|t| Tap::new(t.delay, t.doppler, C64::new(t.gain[0], t.gain[1])))
                    .collect();
                DdChannel::new(taps, &params)
                    .map(ChannelSpec::Fixed)
                    .map_err(|e| Error::Config(format!("channel.taps: {e}")))
            }
            (None, Some(r)) => Ok(ChannelSpec::Random {
                l_max: r.l_max,
                v_max: r.v_max,
                profile: r.profile.clone(),
            }),
        }
    }

    /// Largest delay bin the channel can produce.
    fn max_delay(&self) -> Result<usize> {
        Ok(match self.channel_spec()? {
            ChannelSpec::Fixed(ch) => ch.max_delay(),
            ChannelSpec::Random { l_max, .. } => l_max.saturating_sub(1),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let params = self.params()?;
        if self.trials == 0 {
            return Err(Error::Config("trials: must be at least 1".into()));
        }
        if self.snr_db_list.is_empty() {
            return Err(Error::Config("snr_db_list: must not be empty".into()));
        }
        if self.snr_db_list.iter().any(|s| s.is_nan() || *s == f64::NEG_INFINITY) {
            return Err(Error::Config("snr_db_list: values must be numbers or +inf".into()));
        }
        if let ChannelSpec::Random { l_max, v_max, profile } = self.channel_spec()? {
            if l_max == 0 || v_max == 0 || l_max > params.m() || v_max > params.n() {
                return Err(Error::Config(format!(
                    "channel.random: need 1 <= L_max <= M and 1 <= V_max <= N, got L_max={l_max}, V_max={v_max}"
                )));
            }
            if let PowerProfile::Custom { weights } = &profile {
                if weights.len() != l_max * v_max {
                    return Err(Error::Config(format!(
                        "channel.random.profile: {} weights for {} taps",
                        weights.len(),
                        l_max * v_max
                    )));
                }
            }
        }
        if self.channel.mode == ChannelMode::PerSlotCp && self.max_delay()? > self.frame.cp_len {
            return Err(Error::Config(format!(
                "channel: delay bin {} exceeds cp_len {} in per_slot_cp mode",
                self.max_delay()?,
                self.frame.cp_len
            )));
        }
        match &self.multiuser {
            None => {
                let cfg = self.scheme_config()?;
                if self.equalizer == EqualizerKind::Ml {
                    let bits =
                        cfg.block_len() * crate::equalizer::Constellation::new(self.constellation).bits_per_symbol();
                    if bits > ML_MAX_BITS {
                        return Err(Error::Config(format!(
                            "equalizer: ml searches {bits} bits per block, limit is {ML_MAX_BITS}"
                        )));
                    }
                }
            }
            Some(mu) => {
                if mu.k_d == 0 || mu.k_dd == 0 || params.m() % mu.k_d != 0 || params.n() % mu.k_dd != 0 {
                    return Err(Error::Config(format!(
                        "multiuser: K_d={} and K_D={} must divide M={} and N={}",
                        mu.k_d,
                        mu.k_dd,
                        params.m(),
                        params.n()
                    )));
                }
                if !mu.spreader.allowed(mu.mode) {
                    return Err(Error::Config(format!(
                        "multiuser: spreader {} is not available on the {}",
                        mu.spreader.name(),
                        mu.mode.name()
                    )));
                }
                if self.equalizer == EqualizerKind::Ml {
                    return Err(Error::Config("multiuser: equalizer ml is single-user only".into()));
                }
                if self.equalizer == EqualizerKind::OneTapTf
                    && !mu.spreader.is_tf_local()
                    && mu.spreader != SpreaderKind::Zf
                {
                    return Err(Error::Config(format!(
                        "multiuser: one_tap_tf needs TF-local users, spreader {} spreads over the grid",
                        mu.spreader.name()
                    )));
                }
                if mu.mode == Direction::Uplink && mu.power_budget.is_some() {
                    return Err(Error::Config(
                        "multiuser.power_budget: uplink users always send unit-energy symbols".into(),
                    ));
                }
                if let Some(b) = mu.power_budget {
                    if !(b > 0.0 && b.is_finite()) {
                        return Err(Error::Config(format!("multiuser.power_budget: {b}")));
                    }
                }
                if mu.power_allocation == PowerAllocation::WaterFill && mu.spreader != SpreaderKind::TfAlloc {
                    return Err(Error::Config(
                        "multiuser: water_fill applies to the tf_alloc spreader".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Label used in the `scheme` column.
    pub fn label(&self) -> String {
        match &self.multiuser {
            None => self.scheme.name().to_string(),
            Some(mu) => format!("{}-{}", mu.mode.name(), mu.spreader.name()),
        }
    }
}
