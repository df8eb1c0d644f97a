//! Seeded Monte-Carlo link simulation.
//!
//! Every trial owns a ChaCha8 stream: the generator is seeded with the
//! scenario seed and switched to stream `(snr_index << 32) | trial_index`.
//! Trials of one SNR point may run on any number of workers; their outcomes
//! are folded in trial order, so results do not depend on the worker count.

use std::io::Write;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::config::{ChannelSpec, Direction, EqualizerKind, PowerAllocation, Scenario, SpreaderKind};
use crate::channel::{
    add_awgn, effective_matrix, propagate, random_channel, tf_channel, ChannelMode, DdChannel, EffectiveMatrix,
};
use crate::equalizer::{ml_detect, one_tap_tf, Constellation, MmseEqualizer};
use crate::error::{Error, Result};
use crate::frame::{DdGrid, FrameParams, TfGrid, TimeSignal, UserAllocation, C64};
use crate::metrics::{count_errors, map_bits, papr, papr_over_slots, slice, LinkResult};
use crate::modem::{demodulate_vec, modulate_vec, tf_to_symbols, Scheme, SchemeConfig};
use crate::multiuser::{
    downlink_superpose, water_fill, zf_precode, BetaPlacement, DownlinkMode, PowerWeights, PrecodeSet, SpreadingPair,
    UserRoute,
};
use crate::par;
use crate::transforms::{heisenberg, wigner};

/// Generator for trial `trial` of SNR point `snr_index`.
pub fn trial_rng(seed: u64, snr_index: usize, trial: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((snr_index as u64) << 32) | (trial & 0xffff_ffff));
    rng
}

/// Generator for draws shared by every trial (random spreaders).
pub fn setup_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    rng
}

/// `sigma^2 = E_s / SNR` with `E_s = 1`; `+inf` dB is noiseless.
pub fn noise_variance(snr_db: f64) -> f64 {
    if snr_db == f64::INFINITY {
        0.0
    } else {
        10f64.powf(-snr_db / 10.0)
    }
}

fn random_bits<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Vec<u8> {
    (0..len).map(|_| rng.random_range(0..2u8)).collect()
}

#[derive(Debug, Clone, Default)]
struct Outcome {
    bit_errors: u64,
    symbol_errors: u64,
    papr: Vec<f64>,
}

/// Shared, read-only state of a scenario.
struct Link {
    params: FrameParams,
    cp_len: usize,
    mode: ChannelMode,
    constellation: Constellation,
    spec: ChannelSpec,
    equalizer: EqualizerKind,
    kind: LinkKind,
}

enum LinkKind {
    Single(SchemeConfig),
    Multi(MultiUser),
}

struct MultiUser {
    direction: Direction,
    spreader: SpreaderKind,
    routes: Vec<UserRoute>,
    power_budget: f64,
    placement: BetaPlacement,
    power_allocation: PowerAllocation,
}

impl MultiUser {
    fn data_len(&self) -> usize {
        self.routes[0].data_len()
    }

    fn downlink_mode(&self) -> DownlinkMode {
        match self.spreader {
            SpreaderKind::DdMapped => DownlinkMode::DdMapped,
            SpreaderKind::TfAlloc | SpreaderKind::Zf => DownlinkMode::TfAlloc,
            _ => DownlinkMode::TfSpread,
        }
    }

    /// Amplitude applied to spread (non-allocated) downlink signals.
    fn amplitude(&self, params: &FrameParams) -> f64 {
        (self.power_budget / params.dof() as f64).sqrt()
    }
}

/// Per-SNR caches for a channel that does not change between trials.
struct Cache {
    noise_var: f64,
    fixed: Option<FixedCache>,
}

struct FixedCache {
    channel: DdChannel,
    mmse: Option<MmseEqualizer>,
    effective: Option<EffectiveMatrix>,
    precoder: Option<PrecodeSet>,
}

fn ostf(params: &FrameParams, cp_len: usize) -> Result<SchemeConfig> {
    SchemeConfig::new(Scheme::Ostf, *params, cp_len)
}

impl Link {
    fn new(s: &Scenario) -> Result<Self> {
        let params = s.params()?;
        let constellation = Constellation::new(s.constellation);
        let kind = match &s.multiuser {
            None => LinkKind::Single(s.scheme_config()?),
            Some(mu) => {
                let alloc = UserAllocation::tiled(&params, mu.k_d, mu.k_dd, mu.freq_mapping, mu.time_mapping)
                    .map_err(|e| Error::Config(format!("multiuser: {e}")))?;
                let mut setup = setup_rng(s.seed);
                let (m_d, n_d) = alloc.users()[0].shape();
                let routes = alloc
                    .users()
                    .iter()
                    .map(|u| match mu.spreader {
                        SpreaderKind::TfMapped => UserRoute::TfMapped(u.clone()),
                        SpreaderKind::DdMapped => UserRoute::DdMapped(u.clone()),
                        SpreaderKind::Isfft => UserRoute::Pair(SpreadingPair::isfft(u)),
                        SpreaderKind::Gaussian => UserRoute::Pair(SpreadingPair::random_gaussian(
                            params.m(),
                            m_d,
                            params.n(),
                            n_d,
                            &mut setup,
                        )),
                        SpreaderKind::TfAlloc | SpreaderKind::Zf => {
                            UserRoute::TfAlloc(u.clone(), PowerWeights::unit(mu.beta_placement, m_d, n_d))
                        }
                    })
                    .collect();
                LinkKind::Multi(MultiUser {
                    direction: mu.mode,
                    spreader: mu.spreader,
                    routes,
                    power_budget: mu.power_budget.unwrap_or(params.dof() as f64),
                    placement: mu.beta_placement,
                    power_allocation: mu.power_allocation,
                })
            }
        };
        Ok(Self {
            params,
            cp_len: s.frame.cp_len,
            mode: s.channel.mode,
            constellation,
            spec: s.channel_spec()?,
            equalizer: s.equalizer,
            kind,
        })
    }

    fn users(&self) -> usize {
        match &self.kind {
            LinkKind::Single(_) => 1,
            LinkKind::Multi(mu) => mu.routes.len(),
        }
    }

    fn symbols_per_block(&self) -> usize {
        match &self.kind {
            LinkKind::Single(cfg) => cfg.block_len(),
            LinkKind::Multi(mu) => mu.routes.len() * mu.data_len(),
        }
    }

    fn draw_channel<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DdChannel> {
        match &self.spec {
            ChannelSpec::Fixed(ch) => Ok(ch.clone()),
            ChannelSpec::Random { l_max, v_max, profile } => random_channel(*l_max, *v_max, profile, &self.params, rng),
        }
    }

    /// TF-to-TF effective matrix (OSTF framing) of `ch`.
    fn tf_effective(&self, ch: &DdChannel) -> Result<EffectiveMatrix> {
        effective_matrix(&ostf(&self.params, self.cp_len)?, ch, self.mode)
    }

    fn prepare(&self, snr_db: f64) -> Result<Cache> {
        let noise_var = noise_variance(snr_db);
        let ChannelSpec::Fixed(ch) = &self.spec else {
            return Ok(Cache { noise_var, fixed: None });
        };
        let mut fixed = FixedCache {
            channel: ch.clone(),
            mmse: None,
            effective: None,
            precoder: None,
        };
        match &self.kind {
            LinkKind::Single(cfg) => {
                if matches!(self.equalizer, EqualizerKind::MmseDd | EqualizerKind::Ml) {
                    let h = effective_matrix(cfg, ch, self.mode)?;
                    if self.equalizer == EqualizerKind::MmseDd {
                        fixed.mmse = Some(MmseEqualizer::new(&h.matrix, noise_var)?);
                    }
                    fixed.effective = Some(h);
                }
            }
            LinkKind::Multi(mu) => {
                if mu.spreader == SpreaderKind::Zf {
                    let g = self.tf_effective(ch)?;
                    fixed.precoder = Some(self.zf_for(mu, &vec![g; mu.routes.len()])?);
                } else if self.equalizer == EqualizerKind::MmseDd {
                    let g = self.tf_effective(ch)?;
                    let weights = self.downlink_weights(mu, &vec![ch.clone(); mu.routes.len()], noise_var)?;
                    let a = self.composite(mu, &g, &weights)?;
                    fixed.mmse = Some(MmseEqualizer::new(&a, noise_var)?);
                    fixed.effective = Some(g);
                }
            }
        }
        Ok(Cache {
            noise_var,
            fixed: Some(fixed),
        })
    }

    fn trial(&self, cache: &Cache, rng: &mut ChaCha8Rng, papr_only: bool) -> Result<Outcome> {
        match &self.kind {
            LinkKind::Single(cfg) => self.single_trial(cfg, cache, rng, papr_only),
            LinkKind::Multi(mu) => match mu.direction {
                Direction::Uplink => self.uplink_trial(mu, cache, rng, papr_only),
                Direction::Downlink if mu.spreader == SpreaderKind::Zf => self.zf_trial(mu, cache, rng, papr_only),
                Direction::Downlink => self.downlink_trial(mu, cache, rng, papr_only),
            },
        }
    }

    fn single_trial(
        &self,
        cfg: &SchemeConfig,
        cache: &Cache,
        rng: &mut ChaCha8Rng,
        papr_only: bool,
    ) -> Result<Outcome> {
        let c = &self.constellation;
        let bits = random_bits(cfg.block_len() * c.bits_per_symbol(), rng);
        let x = map_bits(&bits, c)?;
        let tx = modulate_vec(cfg, &x)?;
        let mut out = Outcome {
            papr: vec![papr(&tx)?],
            ..Outcome::default()
        };
        if papr_only {
            return Ok(out);
        }
        let ch = match &cache.fixed {
            Some(f) => f.channel.clone(),
            None => self.draw_channel(rng)?,
        };
        let mut rx = propagate(&tx, &ch, &self.params, self.mode)?;
        add_awgn(&mut rx, cache.noise_var, rng);
        let est = match self.equalizer {
            EqualizerKind::OneTapTf => {
                let y = wigner(&rx, &self.params)?;
                let xh = one_tap_tf(&y, &tf_channel(&ch, &self.params), cache.noise_var)?;
                tf_to_symbols(cfg, &xh)?
            }
            EqualizerKind::MmseDd => {
                let y = demodulate_vec(cfg, &rx)?;
                match cache.fixed.as_ref().and_then(|f| f.mmse.as_ref()) {
                    Some(eq) => eq.equalize(&y)?,
                    None => {
                        let h = effective_matrix(cfg, &ch, self.mode)?;
                        MmseEqualizer::new(&h.matrix, cache.noise_var)?.equalize(&y)?
                    }
                }
            }
            EqualizerKind::Ml => {
                let y = demodulate_vec(cfg, &rx)?;
                let owned;
                let h = match cache.fixed.as_ref().and_then(|f| f.effective.as_ref()) {
                    Some(h) => h,
                    None => {
                        owned = effective_matrix(cfg, &ch, self.mode)?;
                        &owned
                    }
                };
                ml_detect(&y, &h.matrix, c)?
                    .into_iter()
                    .map(|l| c.points()[l])
                    .collect()
            }
        };
        let (be, se) = count_errors(&bits, &slice(&est, c), c.bits_per_symbol())?;
        out.bit_errors = be;
        out.symbol_errors = se;
        Ok(out)
    }

    fn user_symbols(&self, mu: &MultiUser, rng: &mut ChaCha8Rng) -> Result<(Vec<Vec<u8>>, Vec<DdGrid>)> {
        let (n_d, m_d) = mu.routes[0].data_shape();
        let bps = self.constellation.bits_per_symbol();
        let mut bits = Vec::with_capacity(mu.routes.len());
        let mut blocks = Vec::with_capacity(mu.routes.len());
        for _ in &mu.routes {
            let b = random_bits(n_d * m_d * bps, rng);
            blocks.push(DdGrid::from_vec(n_d, m_d, &map_bits(&b, &self.constellation)?)?);
            bits.push(b);
        }
        Ok((bits, blocks))
    }

    fn channels(&self, cache: &Cache, users: usize, rng: &mut ChaCha8Rng) -> Result<Vec<DdChannel>> {
        (0..users)
            .map(|_| match &cache.fixed {
                Some(f) => Ok(f.channel.clone()),
                None => self.draw_channel(rng),
            })
            .collect()
    }

    fn score(&self, bits: &[Vec<u8>], est: &[Vec<C64>], out: &mut Outcome) -> Result<()> {
        let c = &self.constellation;
        for (b, e) in bits.iter().zip(est) {
            let (be, se) = count_errors(b, &slice(e, c), c.bits_per_symbol())?;
            out.bit_errors += be;
            out.symbol_errors += se;
        }
        Ok(())
    }

    /// `[G S_1 w_1, ..., G S_K w_K]` over `vec(X)`.
    fn composite(&self, mu: &MultiUser, g: &EffectiveMatrix, weights: &[PowerWeights]) -> Result<DMatrix<C64>> {
        let d = mu.data_len();
        let mut a = DMatrix::zeros(self.params.dof(), d * mu.routes.len());
        for (k, route) in mu.routes.iter().enumerate() {
            let r = self.weighted_route(mu, route, &weights[k]);
            let s = r.matrix(&self.params)? * C64::new(self.route_amplitude(mu), 0.0);
            a.columns_mut(k * d, d).copy_from(&(&g.matrix * s));
        }
        Ok(a)
    }

    fn route_amplitude(&self, mu: &MultiUser) -> f64 {
        match (mu.direction, mu.spreader) {
            (Direction::Downlink, SpreaderKind::TfAlloc) | (Direction::Uplink, _) => 1.0,
            (Direction::Downlink, _) => mu.amplitude(&self.params),
        }
    }

    fn weighted_route(&self, mu: &MultiUser, route: &UserRoute, w: &PowerWeights) -> UserRoute {
        match (mu.direction, route) {
            (Direction::Downlink, UserRoute::TfAlloc(maps, _)) => UserRoute::TfAlloc(maps.clone(), w.clone()),
            _ => route.clone(),
        }
    }

    /// Downlink allocation weights: equal power, or water-filling over the
    /// users' mean TF gains. Per-symbol power sums to the budget.
    fn downlink_weights(&self, mu: &MultiUser, chans: &[DdChannel], noise_var: f64) -> Result<Vec<PowerWeights>> {
        let (n_d, m_d) = mu.routes[0].data_shape();
        let k = mu.routes.len();
        let d = (n_d * m_d) as f64;
        let per_symbol: Vec<f64> = match mu.power_allocation {
            PowerAllocation::Equal => vec![mu.power_budget / (k as f64 * d); k],
            PowerAllocation::WaterFill => {
                let gains: Vec<f64> = mu
                    .routes
                    .iter()
                    .zip(chans)
                    .map(|(r, ch)| {
                        let h = tf_channel(ch, &self.params);
                        let cells = r.tf_cells().unwrap_or_default();
                        let m = self.params.m();
                        let g = cells.iter().map(|&c| h.get(c % m, c / m).norm_sqr()).sum::<f64>()
                            / cells.len().max(1) as f64;
                        g.max(f64::MIN_POSITIVE)
                    })
                    .collect();
                water_fill(&gains, mu.power_budget / d, noise_var)?
            }
        };
        Ok(per_symbol
            .iter()
            .map(|p| {
                let mut w = PowerWeights::unit(mu.placement, m_d, n_d);
                w.weights.iter_mut().for_each(|v| *v = p.sqrt());
                w
            })
            .collect())
    }

    fn uplink_trial(&self, mu: &MultiUser, cache: &Cache, rng: &mut ChaCha8Rng, papr_only: bool) -> Result<Outcome> {
        let (bits, blocks) = self.user_symbols(mu, rng)?;
        let mut out = Outcome::default();
        let mut signals = Vec::with_capacity(blocks.len());
        for (x, route) in blocks.iter().zip(&mu.routes) {
            let s = heisenberg(&route.spread(x, &self.params)?, &self.params, self.cp_len)?;
            out.papr.push(papr_over_slots(&s, &route.active_slots())?);
            signals.push(s);
        }
        if papr_only {
            return Ok(out);
        }
        let chans = self.channels(cache, mu.routes.len(), rng)?;
        let mut rx: Option<TimeSignal> = None;
        for (s, ch) in signals.iter().zip(&chans) {
            let r = propagate(s, ch, &self.params, self.mode)?;
            match rx.as_mut() {
                None => rx = Some(r),
                Some(acc) => acc.samples_mut().iter_mut().zip(r.samples()).for_each(|(a, b)| *a += b),
            }
        }
        let mut rx = rx.expect("at least one user");
        add_awgn(&mut rx, cache.noise_var, rng);
        let y = wigner(&rx, &self.params)?;
        let est = match self.equalizer {
            EqualizerKind::OneTapTf => mu
                .routes
                .iter()
                .zip(&chans)
                .map(|(route, ch)| {
                    let xh = one_tap_tf(&y, &tf_channel(ch, &self.params), cache.noise_var)?;
                    Ok(route.recover(&xh, &self.params)?.to_vec())
                })
                .collect::<Result<Vec<_>>>()?,
            _ => {
                let joint = match cache.fixed.as_ref().and_then(|f| f.mmse.as_ref()) {
                    Some(eq) => eq.equalize(&y.to_vec())?,
                    None => {
                        let d = mu.data_len();
                        let mut a = DMatrix::zeros(self.params.dof(), d * mu.routes.len());
                        for (k, (route, ch)) in mu.routes.iter().zip(&chans).enumerate() {
                            let g = self.tf_effective(ch)?;
                            a.columns_mut(k * d, d)
                                .copy_from(&(&g.matrix * route.matrix(&self.params)?));
                        }
                        MmseEqualizer::new(&a, cache.noise_var)?.equalize(&y.to_vec())?
                    }
                };
                joint.chunks(mu.data_len()).map(|c| c.to_vec()).collect()
            }
        };
        self.score(&bits, &est, &mut out)?;
        Ok(out)
    }

    fn downlink_trial(&self, mu: &MultiUser, cache: &Cache, rng: &mut ChaCha8Rng, papr_only: bool) -> Result<Outcome> {
        let (bits, blocks) = self.user_symbols(mu, rng)?;
        let chans = self.channels(cache, mu.routes.len(), rng)?;
        let weights = self.downlink_weights(mu, &chans, cache.noise_var)?;
        let routes: Vec<UserRoute> = mu
            .routes
            .iter()
            .zip(&weights)
            .map(|(r, w)| self.weighted_route(mu, r, w))
            .collect();
        let x = downlink_superpose(&blocks, &routes, &self.params, mu.downlink_mode())?;
        let x = TfGrid::from_matrix(x.into_matrix() * C64::new(self.route_amplitude(mu), 0.0));
        let s = heisenberg(&x, &self.params, self.cp_len)?;
        let mut out = Outcome {
            papr: vec![papr(&s)?],
            ..Outcome::default()
        };
        if papr_only {
            return Ok(out);
        }
        let d = mu.data_len();
        let mut est = Vec::with_capacity(routes.len());
        for (k, ch) in chans.iter().enumerate() {
            let mut r = propagate(&s, ch, &self.params, self.mode)?;
            add_awgn(&mut r, cache.noise_var, rng);
            let y = wigner(&r, &self.params)?;
            let e = match self.equalizer {
                EqualizerKind::OneTapTf => {
                    let xh = one_tap_tf(&y, &tf_channel(ch, &self.params), cache.noise_var)?;
                    recover_or_zero(&routes[k], &xh, &self.params)?
                }
                _ => {
                    let joint = match cache.fixed.as_ref().and_then(|f| f.mmse.as_ref()) {
                        Some(eq) => eq.equalize(&y.to_vec())?,
                        None => {
                            let a = self.composite(mu, &self.tf_effective(ch)?, &weights)?;
                            MmseEqualizer::new(&a, cache.noise_var)?.equalize(&y.to_vec())?
                        }
                    };
                    joint[k * d..(k + 1) * d].to_vec()
                }
            };
            est.push(e);
        }
        self.score(&bits, &est, &mut out)?;
        Ok(out)
    }

    /// Stacks, for every user, the rows of its TF effective matrix at its own cells.
    fn zf_for(&self, mu: &MultiUser, gs: &[EffectiveMatrix]) -> Result<PrecodeSet> {
        let d = mu.data_len();
        let mn = self.params.dof();
        let mut stacked = DMatrix::zeros(mn, mn);
        for (k, (route, g)) in mu.routes.iter().zip(gs).enumerate() {
            let cells = route.tf_cells().expect("zf users own TF cells");
            for (i, &c) in cells.iter().enumerate() {
                stacked.row_mut(k * d + i).copy_from(&g.matrix.row(c));
            }
        }
        zf_precode(
            &EffectiveMatrix { matrix: stacked },
            &vec![d; mu.routes.len()],
            mu.power_budget,
        )
    }

    fn zf_trial(&self, mu: &MultiUser, cache: &Cache, rng: &mut ChaCha8Rng, papr_only: bool) -> Result<Outcome> {
        let c = &self.constellation;
        let d = mu.data_len();
        let bits: Vec<Vec<u8>> = mu
            .routes
            .iter()
            .map(|_| random_bits(d * c.bits_per_symbol(), rng))
            .collect();
        let symbols: Vec<C64> = bits
            .iter()
            .map(|b| map_bits(b, c))
            .collect::<Result<Vec<_>>>()?
            .concat();
        let chans = self.channels(cache, mu.routes.len(), rng)?;
        let owned;
        let pre = match cache.fixed.as_ref().and_then(|f| f.precoder.as_ref()) {
            Some(p) => p,
            None => {
                let gs = chans
                    .iter()
                    .map(|ch| self.tf_effective(ch))
                    .collect::<Result<Vec<_>>>()?;
                owned = self.zf_for(mu, &gs)?;
                &owned
            }
        };
        let x = TfGrid::from_vec(self.params.m(), self.params.n(), &pre.precode(&symbols)?)?;
        let s = heisenberg(&x, &self.params, self.cp_len)?;
        let mut out = Outcome {
            papr: vec![papr(&s)?],
            ..Outcome::default()
        };
        if papr_only {
            return Ok(out);
        }
        let mut est = Vec::with_capacity(mu.routes.len());
        for (k, (route, ch)) in mu.routes.iter().zip(&chans).enumerate() {
            let mut r = propagate(&s, ch, &self.params, self.mode)?;
            add_awgn(&mut r, cache.noise_var, rng);
            let y = wigner(&r, &self.params)?.to_vec();
            let cells = route.tf_cells().expect("zf users own TF cells");
            est.push(
                cells
                    .iter()
                    .enumerate()
                    .map(|(i, &cell)| y[cell] / pre.beta()[k * d + i])
                    .collect::<Vec<_>>(),
            );
        }
        self.score(&bits, &est, &mut out)?;
        Ok(out)
    }
}

/// Undoes TF allocation weights; symbols sent with zero power come back as zeros.
fn recover_or_zero(route: &UserRoute, xh: &TfGrid, params: &FrameParams) -> Result<Vec<C64>> {
    if let UserRoute::TfAlloc(_, w) = route {
        if w.weights.contains(&0.0) {
            let adj = route.despread(xh, params)?.to_vec();
            let sq: Vec<f64> = match w.placement {
                BetaPlacement::PerSymbol => w.weights.iter().map(|v| v * v).collect(),
                BetaPlacement::AsWritten => {
                    let (_, m_d) = route.data_shape();
                    w.weights.iter().flat_map(|v| std::iter::repeat_n(v * v, m_d)).collect()
                }
            };
            return Ok(adj
                .iter()
                .zip(sq)
                .map(|(a, s)| if s == 0.0 { C64::new(0.0, 0.0) } else { a / s })
                .collect());
        }
    }
    Ok(route.recover(xh, params)?.to_vec())
}

fn point_context(label: &str, snr_db: f64) -> String {
    format!("{label} at {snr_db} dB")
}

fn run_point(
    link: &Link,
    label: &str,
    seed: u64,
    snr_index: usize,
    snr_db: f64,
    trials: u64,
    papr_only: bool,
) -> Result<LinkResult> {
    let ctx = |e: Error| e.context(point_context(label, snr_db));
    let cache = if papr_only {
        // the transmit side never needs the receive caches, except ZF
        match &link.kind {
            LinkKind::Multi(mu) if mu.spreader == SpreaderKind::Zf => link.prepare(snr_db).map_err(ctx)?,
            _ => Cache {
                noise_var: noise_variance(snr_db),
                fixed: None,
            },
        }
    } else {
        link.prepare(snr_db).map_err(ctx)?
    };
    let outcomes = par::map_range(trials as usize, |t| {
        let mut rng = trial_rng(seed, snr_index, t as u64);
        link.trial(&cache, &mut rng, papr_only)
    });
    let bps = link.constellation.bits_per_symbol() as u64;
    let sym = link.symbols_per_block() as u64;
    let mut result = LinkResult::empty(label, snr_db, sym * bps, sym);
    for (t, o) in outcomes.into_iter().enumerate() {
        let o = o.map_err(|e| ctx(e.context(format!("trial {t}"))))?;
        result.record(o.bit_errors, o.symbol_errors, o.papr);
    }
    Ok(result)
}

/// Runs every SNR point of the scenario on the ambient worker pool.
pub fn run(s: &Scenario) -> Result<Vec<LinkResult>> {
    s.validate()?;
    let link = Link::new(s)?;
    let label = s.label();
    s.snr_db_list
        .iter()
        .enumerate()
        .map(|(i, &snr)| run_point(&link, &label, s.seed, i, snr, s.trials, false))
        .collect()
}

/// [`run`] on a pool of `workers` threads (`0` keeps the ambient pool).
pub fn run_with_workers(s: &Scenario, workers: usize) -> Result<Vec<LinkResult>> {
    par::with_workers(workers, || run(s))
}

/// Variants of `s` compared by a sweep: every scheme the frame supports for
/// single-user scenarios, every spreader allowed on the link direction for
/// multiuser ones.
pub fn sweep_scenarios(s: &Scenario) -> Vec<Scenario> {
    match &s.multiuser {
        None => Scheme::ALL
            .iter()
            .filter(|sc| s.frame.n == 1 || !sc.single_slot())
            .map(|&sc| Scenario {
                scheme: sc,
                ..s.clone()
            })
            .filter(|v| v.validate().is_ok())
            .collect(),
        Some(mu) => SpreaderKind::ALL
            .iter()
            .filter(|k| k.allowed(mu.mode))
            .map(|&k| {
                let mut v = s.clone();
                if let Some(m) = v.multiuser.as_mut() {
                    m.spreader = k;
                    if k != SpreaderKind::TfAlloc {
                        m.power_allocation = PowerAllocation::Equal;
                    }
                }
                v
            })
            .filter(|v| v.validate().is_ok())
            .collect(),
    }
}

pub fn sweep_with_workers(s: &Scenario, workers: usize) -> Result<Vec<LinkResult>> {
    let variants = sweep_scenarios(s);
    if variants.is_empty() {
        return Err(Error::Config("no scheme is valid for this scenario".into()));
    }
    let mut out = Vec::new();
    for v in &variants {
        out.extend(run_with_workers(v, workers)?);
    }
    Ok(out)
}

/// Linear PAPR samples of the transmitted blocks, per sweep variant.
pub fn papr_samples(s: &Scenario, workers: usize) -> Result<Vec<(String, Vec<f64>)>> {
    par::with_workers(workers, || {
        sweep_scenarios(s)
            .iter()
            .map(|v| {
                let link = Link::new(v)?;
                let label = v.label();
                let r = run_point(&link, &label, v.seed, 0, f64::INFINITY, v.trials, true)?;
                Ok((label, r.papr_samples))
            })
            .collect()
    })
}

/// Number of users a scenario carries.
pub fn user_count(s: &Scenario) -> Result<usize> {
    Ok(Link::new(s)?.users())
}

/// `%g`-style rendering with `digits` significant digits.
pub fn format_sig(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if exp < -5 || exp >= digits as i32 {
        let m = trim_zeros(mantissa);
        return format!("{m}e{exp}");
    }
    let decimals = (digits as i32 - 1 - exp).max(0) as usize;
    trim_zeros(&format!("{:.*}", decimals, x)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub const CSV_HEADER: &str = "scheme,snr_db,trials,ber,ser,papr_mean,papr_p99";

pub fn write_csv<W: Write>(results: &[LinkResult], mut w: W) -> std::io::Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in results {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.scheme,
            format_sig(r.snr_db, 12),
            r.trials,
            format_sig(r.ber(), 12),
            format_sig(r.ser(), 12),
            format_sig(r.papr_mean(), 12),
            format_sig(r.papr_p99(), 12)
        )?;
    }
    Ok(())
}

pub fn to_csv(results: &[LinkResult]) -> String {
    let mut buf = Vec::new();
    write_csv(results, &mut buf).expect("writing to memory");
    String::from_utf8(buf).expect("ascii output")
}

/// `label,papr_db,ccdf` rows over `thresholds_db`.
pub fn ccdf_csv(curves: &[(String, Vec<f64>)], thresholds_db: &[f64]) -> String {
    let mut out = String::from("scheme,papr_db,ccdf\n");
    for (label, samples) in curves {
        for (t, p) in thresholds_db.iter().zip(crate::metrics::ccdf(samples, thresholds_db)) {
            out.push_str(&format!("{label},{},{}\n", format_sig(*t, 12), format_sig(p, 12)));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(extra: &str) -> Scenario {
        Scenario::from_toml_str(&format!(
            "seed = 11\ntrials = 6\nsnr_db_list = [inf]\nscheme = \"otfs\"\nconstellation = \"qpsk\"\n{extra}\n[frame]\nM = 8\nN = 4\ncp_len = 2\n"
        ))
        .unwrap()
    }

    #[test]
    fn format_sig_examples() {
        assert_eq!(format_sig(0.0, 12), "0");
        assert_eq!(format_sig(0.5, 12), "0.5");
        assert_eq!(format_sig(1.0 / 3.0, 12), "0.333333333333");
        assert_eq!(format_sig(1234.5, 12), "1234.5");
        assert_eq!(format_sig(1.5e-7, 12), "1.5e-7");
        assert_eq!(format_sig(f64::INFINITY, 12), "inf");
        assert_eq!(format_sig(2.0e13, 12), "2e13");
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: u64 = trial_rng(1, 0, 0).random();
        let b: u64 = trial_rng(1, 0, 1).random();
        let c: u64 = trial_rng(1, 1, 0).random();
        assert!(a != b && a != c && b != c);
        assert_eq!(a, trial_rng(1, 0, 0).random::<u64>());
    }

    #[test]
    fn noiseless_links_are_error_free() {
        for (scheme, eq) in [
            (Scheme::Otfs, "mmse_dd"),
            (Scheme::Ostf, "one_tap_tf"),
            (Scheme::Otfs, "one_tap_tf"),
            (Scheme::Ostf, "mmse_dd"),
        ] {
            let s = scenario(&format!(
                "equalizer = \"{eq}\"\n[channel]\nmode = \"per_slot_cp\"\ntaps = [{{ delay = 0, doppler = 0, gain = [0.6, 0.0] }}, {{ delay = 2, doppler = 0, gain = [0.0, 0.8] }}]\n"
            ));
            let r = run(&Scenario { scheme, ..s }).unwrap();
            assert_eq!(r[0].bit_errors, 0, "{scheme} {eq}");
        }
    }

    #[test]
    fn noiseless_doubly_selective_mmse_is_error_free() {
        let s = scenario("equalizer = \"mmse_dd\"\n[channel]\nrandom = { L_max = 3, V_max = 2 }\n");
        assert_eq!(run(&s).unwrap()[0].bit_errors, 0);
    }

    #[test]
    fn noiseless_multiuser_links_are_error_free() {
        let cases = [
            ("uplink", "tf_mapped", "one_tap_tf"),
            ("uplink", "dd_mapped", "mmse_dd"),
            ("uplink", "gaussian", "mmse_dd"),
            ("uplink", "tf_alloc", "one_tap_tf"),
            ("downlink", "dd_mapped", "mmse_dd"),
            ("downlink", "isfft", "mmse_dd"),
            ("downlink", "tf_alloc", "one_tap_tf"),
            ("downlink", "zf", "mmse_dd"),
        ];
        for (dir, spreader, eq) in cases {
            let s = scenario(&format!(
                "equalizer = \"{eq}\"\n[channel]\nmode = \"per_slot_cp\"\nrandom = {{ L_max = 2, V_max = 1 }}\n[multiuser]\nmode = \"{dir}\"\nK_d = 2\nK_D = 2\nfreq_mapping = \"interleaved\"\nspreader = \"{spreader}\"\n"
            ));
            let r = run(&s).unwrap();
            assert_eq!(r[0].bit_errors, 0, "{dir} {spreader} {eq}");
            assert_eq!(r[0].scheme, format!("{dir}-{spreader}"));
        }
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let s = Scenario {
            snr_db_list: vec![0.0, 6.0],
            trials: 40,
            ..scenario("equalizer = \"mmse_dd\"\n[channel]\nrandom = { L_max = 2, V_max = 2 }\n")
        };
        let one = to_csv(&run_with_workers(&s, 1).unwrap());
        assert_eq!(one, to_csv(&run_with_workers(&s, 3).unwrap()));
        assert!(one.starts_with(CSV_HEADER));
    }

    #[test]
    fn sweep_covers_valid_schemes() {
        let s = scenario("");
        let labels: Vec<String> = sweep_scenarios(&s).iter().map(|v| v.label()).collect();
        assert_eq!(labels, vec!["otfs", "ostf"]);
        let one_slot = Scenario::from_toml_str("trials = 1\nsnr_db_list = [0.0]\n[frame]\nM = 8\nN = 1\n").unwrap();
        assert_eq!(sweep_scenarios(&one_slot).len(), 4);
    }

    #[test]
    fn zero_gain_surfaces_as_numerical_guard() {
        let s =
            scenario("equalizer = \"one_tap_tf\"\n[channel]\ntaps = [{ delay = 0, doppler = 0, gain = [0.0, 0.0] }]\n");
        let e = run(&Scenario {
            scheme: Scheme::Ostf,
            ..s
        })
        .unwrap_err();
        assert!(e.is_numerical_guard(), "{e}");
    }
}
