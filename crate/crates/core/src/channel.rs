//! Doubly-selective channels on the delay-Doppler grid.
//!
//! A channel is a sparse list of on-grid taps `(l, k, h)`: delay `l` in
//! samples of `1/B`, Doppler `k` in bins of `1/(N T)` (signed), complex gain
//! `h`. In time it acts as `r[t] = sum h x[t - l] exp(j 2 pi k c(t - l) / MN)`
//! where `c(.)` is the body-sample clock (prefix samples do not advance it).

use std::collections::HashSet;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::{FrameParams, TfGrid, TimeSignal, C64};
use crate::modem::{self, SchemeConfig};
use crate::transforms::{basis_waveform, dft_matrix};

/// `exp(j 2 pi num / den)` with the numerator reduced modulo `den` first.
pub(crate) fn cis_frac(num: i64, den: i64) -> C64 {
    let r = num.rem_euclid(den);
    C64::from_polar(1.0, 2.0 * PI * r as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tap {
    pub delay: usize,
    pub doppler: i64,
    pub gain: C64,
}

impl Tap {
    pub fn new(delay: usize, doppler: i64, gain: C64) -> Self {
        Self { delay, doppler, gain }
    }
}

/// Sparse on-grid delay-Doppler channel.
#[derive(Debug, Clone, PartialEq)]
pub struct DdChannel {
    taps: Vec<Tap>,
}

impl DdChannel {
    /// Validates `0 <= l < M`, `|k| <= N/2` and uniqueness of `(l, k)`.
    pub fn new(taps: Vec<Tap>, params: &FrameParams) -> Result<Self> {
        let mut seen = HashSet::new();
        let half = (params.n() / 2) as i64;
        for t in &taps {
            if t.delay >= params.m() {
                return Err(Error::ChannelConfig(format!(
                    "delay bin {} outside 0..{}",
                    t.delay,
                    params.m()
                )));
            }
            if t.doppler.abs() > half {
                return Err(Error::ChannelConfig(format!(
                    "Doppler bin {} outside [-{half}, {half}]",
                    t.doppler
                )));
            }
            if !seen.insert((t.delay, t.doppler)) {
                return Err(Error::ChannelConfig(format!(
                    "duplicate tap at ({}, {})",
                    t.delay, t.doppler
                )));
            }
        }
        Ok(Self { taps })
    }

    /// Single unit tap at the origin.
    pub fn identity() -> Self {
        Self {
            taps: vec![Tap::new(0, 0, C64::new(1.0, 0.0))],
        }
    }

    pub fn taps(&self) -> &[Tap] {
        &self.taps
    }

    /// `1 + max delay bin` (0 for an empty channel).
    pub fn l_max(&self) -> usize {
        self.taps.iter().map(|t| t.delay + 1).max().unwrap_or(0)
    }

    /// `1 + max |Doppler bin|` (0 for an empty channel).
    pub fn v_max(&self) -> usize {
        self.taps
            .iter()
            .map(|t| t.doppler.unsigned_abs() as usize + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn max_delay(&self) -> usize {
        self.taps.iter().map(|t| t.delay).max().unwrap_or(0)
    }

    /// Total power conveyed to the receiver, `sum |h|^2`.
    pub fn received_power(&self) -> f64 {
        self.taps.iter().map(|t| t.gain.norm_sqr()).sum()
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            taps: self
                .taps
                .iter()
                .map(|t| Tap::new(t.delay, t.doppler, t.gain * factor))
                .collect(),
        }
    }
}

/// Free-function form of [`DdChannel::received_power`].
pub fn received_power(ch: &DdChannel) -> f64 {
    ch.received_power()
}

/// Relative mean power per tap for [`random_channel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum PowerProfile {
    Uniform,
    /// Power falls by `decay_db` per delay bin.
    Exponential {
        decay_db: f64,
    },
    /// One weight per tap, delay-major: index `l * V_max + v`.
    Custom {
        weights: Vec<f64>,
    },
}

/// Doppler bins `v = 0..V_max` centred on zero: `v - floor((V_max - 1) / 2)`.
pub fn doppler_bins(v_max: usize) -> impl Iterator<Item = i64> {
    let lo = ((v_max as i64) - 1).max(0) / 2;
    (0..v_max as i64).map(move |v| v - lo)
}

/// Draws `L_max * V_max` i.i.d. circular Gaussian taps following `profile`,
/// normalized so that the realization carries unit received power.
pub fn random_channel<R: Rng + ?Sized>(
    l_max: usize,
    v_max: usize,
    profile: &PowerProfile,
    params: &FrameParams,
    rng: &mut R,
) -> Result<DdChannel> {
    if l_max == 0 || v_max == 0 || l_max > params.m() || v_max > params.n() {
        return Err(Error::ChannelConfig(format!(
            "need 1 <= L_max <= M and 1 <= V_max <= N, got L_max={l_max}, V_max={v_max} on {}x{}",
            params.m(),
            params.n()
        )));
    }
    let weights: Vec<f64> = match profile {
        PowerProfile::Uniform => vec![1.0; l_max * v_max],
        PowerProfile::Exponential { decay_db } => (0..l_max)
            .flat_map(|l| std::iter::repeat_n(10f64.powf(-decay_db * l as f64 / 10.0), v_max))
            .collect(),
        PowerProfile::Custom { weights } => {
            if weights.len() != l_max * v_max {
                return Err(Error::ChannelConfig(format!(
                    "profile has {} weights for {} taps",
                    weights.len(),
                    l_max * v_max
                )));
            }
            if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || weights.iter().all(|w| *w == 0.0) {
                return Err(Error::ChannelConfig(
                    "profile weights must be non-negative and not all zero".into(),
                ));
            }
            weights.clone()
        }
    };
    let mut taps = Vec::with_capacity(l_max * v_max);
    for l in 0..l_max {
        for (v, k) in doppler_bins(v_max).enumerate() {
            let w = weights[l * v_max + v];
            if w == 0.0 {
                continue;
            }
            let sd = (w / 2.0).sqrt();
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            taps.push(Tap::new(l, k, C64::new(re * sd, im * sd)));
        }
    }
    let ch = DdChannel::new(taps, params)?;
    let p = ch.received_power();
    Ok(ch.scaled(1.0 / p.sqrt()))
}

/// How the block edges are treated when the channel is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    /// The body of the whole block (`MN` samples) wraps around; prefixes are
    /// regenerated from the output body.
    Cyclic,
    /// Linear convolution over the transmitted stream; each slot's prefix
    /// must cover the largest delay.
    PerSlotCp,
}

fn check_signal(s: &TimeSignal, params: &FrameParams) -> Result<()> {
    if s.slot_len() != params.m() || s.num_slots() != params.n() {
        return Err(Error::dim(
            format!("{} slots of {} samples", params.n(), params.m()),
            format!("{} slots of {} samples", s.num_slots(), s.slot_len()),
        ));
    }
    Ok(())
}

/// Noiseless passage of `s` through `ch`.
pub fn propagate(s: &TimeSignal, ch: &DdChannel, params: &FrameParams, mode: ChannelMode) -> Result<TimeSignal> {
    check_signal(s, params)?;
    let mn = params.dof() as i64;
    match mode {
        ChannelMode::Cyclic => {
            let body = s.body();
            let len = body.len();
            let mut out = vec![C64::new(0.0, 0.0); len];
            for tap in ch.taps() {
                let l = tap.delay;
                for (t, o) in out.iter_mut().enumerate() {
                    let src = (t + len - l) % len;
                    let clock = t as i64 - l as i64;
                    *o += tap.gain * body[src] * cis_frac(tap.doppler * clock, mn);
                }
            }
            TimeSignal::from_body(&out, s.slot_len(), s.cp_len(), s.sample_rate())
        }
        ChannelMode::PerSlotCp => {
            let cp = s.cp_len();
            if ch.max_delay() > cp {
                return Err(Error::ChannelConfig(format!(
                    "delay bin {} exceeds the cyclic prefix of {cp} samples",
                    ch.max_delay()
                )));
            }
            let m = s.slot_len();
            let stride = m + cp;
            let x = s.samples();
            let clock = |i: usize| ((i / stride) * m) as i64 + (i % stride) as i64 - cp as i64;
            let mut out = vec![C64::new(0.0, 0.0); x.len()];
            for tap in ch.taps() {
                let l = tap.delay;
                for i in l..x.len() {
                    out[i] += tap.gain * x[i - l] * cis_frac(tap.doppler * clock(i - l), mn);
                }
            }
            Ok(TimeSignal::from_parts(out, m, cp, s.sample_rate()))
        }
    }
}

/// Adds i.i.d. circular complex Gaussian noise of variance `noise_var` per sample.
pub fn add_awgn<R: Rng + ?Sized>(s: &mut TimeSignal, noise_var: f64, rng: &mut R) {
    if noise_var <= 0.0 {
        return;
    }
    let sd = (noise_var / 2.0).sqrt();
    for v in s.samples_mut() {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        *v += C64::new(re * sd, im * sd);
    }
}

/// Linear time-varying filtering followed by additive noise.
pub fn apply_channel<R: Rng + ?Sized>(
    s: &TimeSignal,
    ch: &DdChannel,
    params: &FrameParams,
    mode: ChannelMode,
    noise_var: f64,
    rng: &mut R,
) -> Result<TimeSignal> {
    let mut r = propagate(s, ch, params, mode)?;
    add_awgn(&mut r, noise_var, rng);
    Ok(r)
}

/// Time-frequency channel gains `H[m, n]`, `M x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfChannel(DMatrix<C64>);

impl TfChannel {
    pub fn from_matrix(h: DMatrix<C64>) -> Self {
        Self(h)
    }

    pub fn as_matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn get(&self, m: usize, n: usize) -> C64 {
        self.0[(m, n)]
    }

    pub fn rows(&self) -> usize {
        self.0.nrows()
    }

    pub fn cols(&self) -> usize {
        self.0.ncols()
    }

    /// `|H[m, n]|` in dB.
    pub fn magnitude_db(&self) -> DMatrix<f64> {
        self.0.map(|h| 20.0 * h.norm().max(1e-300).log10())
    }
}

/// Twisted tap gain `h~(l, k) = h(l, k) exp(-j 2 pi l k / MN)`.
pub fn twisted_gain(tap: &Tap, params: &FrameParams) -> C64 {
    tap.gain * cis_frac(-(tap.delay as i64) * tap.doppler, params.dof() as i64)
}

/// `H[m, n] = sum h~(l, k) exp(-j 2 pi (m l / M - n k / N))`, direct sum over taps.
pub fn tf_channel(ch: &DdChannel, params: &FrameParams) -> TfChannel {
    let (m_len, n_len) = (params.m(), params.n());
    let mn = params.dof() as i64;
    let mut h = DMatrix::zeros(m_len, n_len);
    for tap in ch.taps() {
        let g = twisted_gain(tap, params);
        for m in 0..m_len {
            for n in 0..n_len {
                // m l / M - n k / N over the common denominator MN
                let num = -((m * tap.delay * n_len) as i64) + n as i64 * tap.doppler * m_len as i64;
                h[(m, n)] += g * cis_frac(num, mn);
            }
        }
    }
    TfChannel(h)
}

/// Compact `L_max x V` matrix of twisted gains together with the identity
/// columns that embed it into the `M x N` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct DdEmbedding {
    /// Row of `I_M` selected for each compact delay index.
    pub delay_rows: Vec<usize>,
    /// Row of `I_N` selected for each compact Doppler index (Doppler mod N).
    pub doppler_rows: Vec<usize>,
    pub compact: DMatrix<C64>,
}

impl DdEmbedding {
    pub fn psi_delay(&self, m: usize) -> DMatrix<C64> {
        selection(m, &self.delay_rows)
    }

    pub fn psi_doppler(&self, n: usize) -> DMatrix<C64> {
        selection(n, &self.doppler_rows)
    }

    /// `Psi_M H~ Psi_N^T`, the sparse `M x N` form.
    pub fn sparse(&self, m: usize, n: usize) -> DMatrix<C64> {
        self.psi_delay(m) * &self.compact * self.psi_doppler(n).transpose()
    }
}

fn selection(ambient: usize, rows: &[usize]) -> DMatrix<C64> {
    let mut p = DMatrix::zeros(ambient, rows.len());
    for (c, &r) in rows.iter().enumerate() {
        p[(r, c)] = C64::new(1.0, 0.0);
    }
    p
}

/// Builds the compact twisted-gain matrix over delays `0..L_max` and Doppler
/// bins `min(0, k_min)..=max(0, k_max)`.
pub fn dd_embedding(ch: &DdChannel, params: &FrameParams) -> Result<DdEmbedding> {
    let l_max = ch.l_max().max(1);
    let k_lo = ch.taps().iter().map(|t| t.doppler).min().unwrap_or(0).min(0);
    let k_hi = ch.taps().iter().map(|t| t.doppler).max().unwrap_or(0).max(0);
    let span = (k_hi - k_lo + 1) as usize;
    if params.m() < l_max || params.n() < ch.v_max() || params.n() < span {
        return Err(Error::InvalidParameter(format!(
            "embedding needs M >= L_max and N >= V_max (M={}, L_max={l_max}, N={}, V_max={}, Doppler span {span})",
            params.m(),
            params.n(),
            ch.v_max()
        )));
    }
    let mut compact = DMatrix::zeros(l_max, span);
    for tap in ch.taps() {
        compact[(tap.delay, (tap.doppler - k_lo) as usize)] += twisted_gain(tap, params);
    }
    let n = params.n() as i64;
    Ok(DdEmbedding {
        delay_rows: (0..l_max).collect(),
        doppler_rows: (k_lo..=k_hi).map(|k| k.rem_euclid(n) as usize).collect(),
        compact,
    })
}

/// `H_TF = sqrt(MN) F_M Psi_M H~ Psi_N^T F_N^H`.
pub fn tf_channel_factored(ch: &DdChannel, params: &FrameParams) -> Result<TfChannel> {
    let emb = dd_embedding(ch, params)?;
    let sparse = emb.sparse(params.m(), params.n());
    let scale = (params.dof() as f64).sqrt();
    let h = dft_matrix(params.m()) * sparse * dft_matrix(params.n()).adjoint() * C64::new(scale, 0.0);
    Ok(TfChannel(h))
}

/// Signed Doppler bin represented by row `row` of an `N`-row DD matrix:
/// rows cover `(-N/2, N/2]`.
pub fn centered_doppler(row: usize, n: usize) -> i64 {
    if row <= n / 2 {
        row as i64
    } else {
        row as i64 - n as i64
    }
}

/// Rectangular TF window seen at integer DD offset `(delay, doppler)`:
/// `sum_m sum_n exp(-j 2 pi (doppler n / N - delay m / M))`.
pub fn window_kernel(delay: i64, doppler: i64, params: &FrameParams) -> C64 {
    let (m, n) = (params.m() as i64, params.n() as i64);
    // both geometric sums run over full periods of an integer frequency
    if delay.rem_euclid(m) == 0 && doppler.rem_euclid(n) == 0 {
        C64::new((m * n) as f64, 0.0)
    } else {
        C64::new(0.0, 0.0)
    }
}

/// Windowed DD channel `h_w[l, k]`, stored `N x M` (row = Doppler bin with
/// the centred representative of [`centered_doppler`], column = delay).
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedChannel(DMatrix<C64>);

impl WindowedChannel {
    pub fn as_matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    /// `h_w` at delay `l` and signed Doppler `k`.
    pub fn at(&self, l: usize, k: i64) -> C64 {
        let n = self.0.nrows() as i64;
        self.0[(k.rem_euclid(n) as usize, l)]
    }
}

/// `h_w(l, k) = sum h(l', k') w(l - l', k - k') exp(-j 2 pi l k / MN)`.
pub fn windowed_dd_channel(ch: &DdChannel, params: &FrameParams) -> WindowedChannel {
    let (m, n) = (params.m(), params.n());
    let mn = params.dof() as i64;
    let mut hw = DMatrix::zeros(n, m);
    for row in 0..n {
        let k = centered_doppler(row, n);
        for l in 0..m {
            let mut acc = C64::new(0.0, 0.0);
            for tap in ch.taps() {
                let w = window_kernel(l as i64 - tap.delay as i64, k - tap.doppler, params);
                if w.norm_sqr() > 0.0 {
                    acc += tap.gain * w;
                }
            }
            hw[(row, l)] = acc * cis_frac(-(l as i64) * k, mn);
        }
    }
    WindowedChannel(hw)
}

/// The DD-domain input-output operator for rectangular pulses over a cyclic
/// block: a 2D circular convolution with kernel `h_w / MN`, twisted by
/// `exp(j 2 pi k m / MN)` and the quasi-periodic factor
/// `exp(-j 2 pi n_in / N)` on delay wrap-around. Acts on `vec(x^T)`.
pub fn twisted_convolution_matrix(hw: &WindowedChannel, params: &FrameParams) -> DMatrix<C64> {
    let (m, n) = (params.m(), params.n());
    let mn = params.dof();
    let mut op = DMatrix::zeros(mn, mn);
    let w = hw.as_matrix();
    for row in 0..n {
        let k = centered_doppler(row, n);
        for l in 0..m {
            let coeff = w[(row, l)];
            if coeff.norm_sqr() == 0.0 {
                continue;
            }
            let coeff = coeff / mn as f64;
            for dop in 0..n {
                let dop_in = (dop as i64 - k).rem_euclid(n as i64) as usize;
                for del in 0..m {
                    let del_in = (del + m - l) % m;
                    let mut v = coeff * cis_frac(k * del as i64, mn as i64);
                    if del < l {
                        v *= cis_frac(-(dop_in as i64), n as i64);
                    }
                    op[(dop * m + del, dop_in * m + del_in)] += v;
                }
            }
        }
    }
    op
}

/// Channel coupling `H_{m,n}[m', n']` between transmit basis `phi_{m',n'}`
/// and receive basis `phi_{m,n}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingTensor {
    m: usize,
    n: usize,
    data: DMatrix<C64>,
}

impl CouplingTensor {
    pub fn get(&self, m: usize, n: usize, mp: usize, np: usize) -> C64 {
        self.data[(n * self.m + m, np * self.m + mp)]
    }

    /// `MN x MN` matrix acting on `vec(X)`.
    pub fn as_matrix(&self) -> &DMatrix<C64> {
        &self.data
    }

    /// `Y[m, n] = sum H_{m,n}[m', n'] X[m', n']`.
    pub fn apply(&self, x: &TfGrid) -> Result<TfGrid> {
        x.check_shape(self.m, self.n)?;
        let v = nalgebra::DVector::from_vec(x.to_vec());
        let y = &self.data * v;
        TfGrid::from_vec(self.m, self.n, y.as_slice())
    }
}

/// Largest `MN` accepted by [`coupling_tensor`].
pub const COUPLING_MAX_DOF: usize = 256;

/// Passes every basis waveform through the noiseless channel and
/// correlates the output with every receive basis waveform.
pub fn coupling_tensor(
    ch: &DdChannel,
    params: &FrameParams,
    mode: ChannelMode,
    cp_len: usize,
) -> Result<CouplingTensor> {
    let mn = params.dof();
    if mn > COUPLING_MAX_DOF {
        return Err(Error::SizeGuard(format!(
            "coupling tensor limited to MN <= {COUPLING_MAX_DOF}, got {mn}"
        )));
    }
    let (m, n) = (params.m(), params.n());
    let basis: Vec<TimeSignal> = (0..n)
        .flat_map(|nn| (0..m).map(move |mm| (mm, nn)))
        .map(|(mm, nn)| basis_waveform(mm, nn, params))
        .collect::<Result<_>>()?;
    let mut data = DMatrix::zeros(mn, mn);
    for (col, phi) in basis.iter().enumerate() {
        let tx = phi.with_cyclic_prefix(cp_len)?;
        let rx = propagate(&tx, ch, params, mode)?;
        for (row, psi) in basis.iter().enumerate() {
            data[(row, col)] = rx.inner(psi);
        }
    }
    Ok(CouplingTensor { m, n, data })
}

/// Exact linear model of modulate -> channel -> demodulate over canonical
/// symbol vectors (see [`modem::SymbolBlock::to_vec`]).
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveMatrix {
    pub matrix: DMatrix<C64>,
}

impl EffectiveMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Largest `MN` accepted by [`effective_matrix`].
pub const EFFECTIVE_MAX_DOF: usize = 4096;

/// Column `c` is the demodulated response to the unit impulse at symbol index `c`.
pub fn effective_matrix(cfg: &SchemeConfig, ch: &DdChannel, mode: ChannelMode) -> Result<EffectiveMatrix> {
    let mn = cfg.params.dof();
    if mn > EFFECTIVE_MAX_DOF {
        return Err(Error::SizeGuard(format!(
            "effective matrix limited to MN <= {EFFECTIVE_MAX_DOF}, got {mn}"
        )));
    }
    let mut matrix = DMatrix::zeros(mn, mn);
    let mut e = vec![C64::new(0.0, 0.0); mn];
    for c in 0..mn {
        e[c] = C64::new(1.0, 0.0);
        let s = modem::modulate_vec(cfg, &e)?;
        e[c] = C64::new(0.0, 0.0);
        let r = propagate(&s, ch, &cfg.params, mode)?;
        let y = modem::demodulate_vec(cfg, &r)?;
        matrix.column_mut(c).iter_mut().zip(y).for_each(|(d, v)| *d = v);
    }
    Ok(EffectiveMatrix { matrix })
}
