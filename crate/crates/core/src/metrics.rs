//! PAPR, bit mapping, error counting and mergeable link statistics.

use crate::equalizer::Constellation;
use crate::error::{Error, Result};
use crate::frame::{TimeSignal, C64};

/// Linear peak-to-average power ratio of raw samples.
pub fn papr_of(samples: &[C64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("PAPR of an empty signal".into()));
    }
    let (peak, sum) = samples.iter().fold((0.0f64, 0.0f64), |(p, s), v| {
        let e = v.norm_sqr();
        (p.max(e), s + e)
    });
    if sum == 0.0 {
        return Err(Error::InvalidParameter("PAPR of an all-zero signal".into()));
    }
    Ok(peak * samples.len() as f64 / sum)
}

/// PAPR over the body samples (prefixes excluded), at critical sampling.
pub fn papr(s: &TimeSignal) -> Result<f64> {
    papr_of(&s.body())
}

/// PAPR over the bodies of the listed slots only.
pub fn papr_over_slots(s: &TimeSignal, slots: &[usize]) -> Result<f64> {
    let mut samples = Vec::with_capacity(slots.len() * s.slot_len());
    for &n in slots {
        if n >= s.num_slots() {
            return Err(Error::InvalidParameter(format!(
                "slot {n} outside 0..{}",
                s.num_slots()
            )));
        }
        samples.extend_from_slice(s.slot_body(n));
    }
    papr_of(&samples)
}

/// Gray mapping, `bits_per_symbol` bits MSB first per symbol.
pub fn map_bits(bits: &[u8], c: &Constellation) -> Result<Vec<C64>> {
    let k = c.bits_per_symbol();
    if !bits.len().is_multiple_of(k) {
        return Err(Error::InvalidParameter(format!(
            "{} bits do not fill whole {k}-bit symbols",
            bits.len()
        )));
    }
    Ok(bits
        .chunks(k)
        .map(|chunk| {
            let label = chunk.iter().fold(0usize, |acc, &b| (acc << 1) | (b & 1) as usize);
            c.points()[label]
        })
        .collect())
}

/// Nearest-point slicing followed by Gray delabeling.
pub fn slice(symbols: &[C64], c: &Constellation) -> Vec<u8> {
    let k = c.bits_per_symbol();
    let mut bits = Vec::with_capacity(symbols.len() * k);
    for &z in symbols {
        let label = c.nearest(z);
        bits.extend((0..k).rev().map(|i| ((label >> i) & 1) as u8));
    }
    bits
}

/// `(bit_errors, symbol_errors)`; a symbol is in error if any of its
/// `bits_per_symbol` bits differ.
pub fn count_errors(tx: &[u8], rx: &[u8], bits_per_symbol: usize) -> Result<(u64, u64)> {
    if tx.len() != rx.len() {
        return Err(Error::dim(tx.len(), rx.len()));
    }
    if bits_per_symbol == 0 || !tx.len().is_multiple_of(bits_per_symbol) {
        return Err(Error::InvalidParameter(format!(
            "{} bits do not fill whole {bits_per_symbol}-bit symbols",
            tx.len()
        )));
    }
    let mut bit_errors = 0u64;
    let mut symbol_errors = 0u64;
    for (a, b) in tx.chunks(bits_per_symbol).zip(rx.chunks(bits_per_symbol)) {
        let e = a.iter().zip(b).filter(|(x, y)| x != y).count() as u64;
        bit_errors += e;
        symbol_errors += (e > 0) as u64;
    }
    Ok((bit_errors, symbol_errors))
}

/// Error counts and PAPR samples for one `(scheme, snr)` point.
///
/// Merging is associative and the derived statistics do not depend on how
/// the trials were partitioned: counts add, and PAPR statistics are computed
/// from the sorted sample set.
#[derive(Debug, Clone, PartialEq)]
pub struct LinkResult {
    pub scheme: String,
    pub snr_db: f64,
    pub trials: u64,
    pub bits_per_block: u64,
    pub symbols_per_block: u64,
    pub bit_errors: u64,
    pub symbol_errors: u64,
    pub papr_samples: Vec<f64>,
}

impl LinkResult {
    pub fn empty(scheme: impl Into<String>, snr_db: f64, bits_per_block: u64, symbols_per_block: u64) -> Self {
        Self {
            scheme: scheme.into(),
            snr_db,
            trials: 0,
            bits_per_block,
            symbols_per_block,
            bit_errors: 0,
            symbol_errors: 0,
            papr_samples: Vec::new(),
        }
    }

    /// Records one block.
    pub fn record(&mut self, bit_errors: u64, symbol_errors: u64, papr: impl IntoIterator<Item = f64>) {
        self.trials += 1;
        self.bit_errors += bit_errors;
        self.symbol_errors += symbol_errors;
        self.papr_samples.extend(papr);
    }

    pub fn merge(mut self, other: &LinkResult) -> Result<Self> {
        if self.scheme != other.scheme
            || self.snr_db.to_bits() != other.snr_db.to_bits()
            || self.bits_per_block != other.bits_per_block
            || self.symbols_per_block != other.symbols_per_block
        {
            return Err(Error::InvalidParameter(format!(
                "cannot merge {}@{} with {}@{}",
                self.scheme, self.snr_db, other.scheme, other.snr_db
            )));
        }
        self.trials += other.trials;
        self.bit_errors += other.bit_errors;
        self.symbol_errors += other.symbol_errors;
        self.papr_samples.extend_from_slice(&other.papr_samples);
        Ok(self)
    }

    pub fn ber(&self) -> f64 {
        let total = self.trials * self.bits_per_block;
        if total == 0 {
            0.0
        } else {
            self.bit_errors as f64 / total as f64
        }
    }

    pub fn ser(&self) -> f64 {
        let total = self.trials * self.symbols_per_block;
        if total == 0 {
            0.0
        } else {
            self.symbol_errors as f64 / total as f64
        }
    }

    fn sorted_papr(&self) -> Vec<f64> {
        let mut v = self.papr_samples.clone();
        v.sort_by(f64::total_cmp);
        v
    }

    /// Mean of the linear PAPR samples; `NaN` when there are none.
    pub fn papr_mean(&self) -> f64 {
        let v = self.sorted_papr();
        if v.is_empty() {
            return f64::NAN;
        }
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// Nearest-rank 99th percentile of the linear PAPR samples.
    pub fn papr_p99(&self) -> f64 {
        let v = self.sorted_papr();
        if v.is_empty() {
            return f64::NAN;
        }
        let rank = ((0.99 * v.len() as f64).ceil() as usize).clamp(1, v.len());
        v[rank - 1]
    }
}

/// Empirical `P(PAPR > threshold)` for each threshold in dB.
pub fn ccdf(papr_linear: &[f64], thresholds_db: &[f64]) -> Vec<f64> {
    let n = papr_linear.len().max(1) as f64;
    thresholds_db
        .iter()
        .map(|t| {
            let lin = 10f64.powf(t / 10.0);
            papr_linear.iter().filter(|&&p| p > lin).count() as f64 / n
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equalizer::Modulation;
    use crate::modem::{modulate_vec, SchemeConfig};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn papr_examples() {
        let flat = vec![C64::from_polar(1.0, 0.3); 16];
        assert!((papr_of(&flat).unwrap() - 1.0).abs() < 1e-12);
        let two = [C64::new(2f64.sqrt(), 0.0), C64::new(0.0, 0.0)];
        assert!((papr_of(&two).unwrap() - 2.0).abs() < 1e-15);
        assert!(papr_of(&[C64::new(0.0, 0.0); 4]).is_err());
        assert!(papr_of(&[]).is_err());
    }

    #[test]
    fn scfdma_qpsk_is_constant_envelope() {
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        let q = Constellation::new(Modulation::Qpsk);
        let cfg = SchemeConfig::scfdma(64, 15e3, 8).unwrap();
        let bits: Vec<u8> = (0..128).map(|_| rng.random_range(0..2u8)).collect();
        let s = modulate_vec(&cfg, &map_bits(&bits, &q).unwrap()).unwrap();
        assert!((papr(&s).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn mapping_examples() {
        let q = Constellation::new(Modulation::Qpsk);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((map_bits(&[0, 0], &q).unwrap()[0] - C64::new(r, r)).norm() < 1e-15);
        assert!((map_bits(&[1, 0], &q).unwrap()[0] - C64::new(-r, r)).norm() < 1e-15);
        assert!(map_bits(&[0, 0, 1], &q).is_err());
        let c16 = Constellation::new(Modulation::Qam16);
        let e: f64 = c16.points().iter().map(|p| p.norm_sqr()).sum::<f64>() / 16.0;
        assert!((e - 1.0).abs() < 1e-12);
    }

    #[test]
    fn error_count_examples() {
        let a = vec![0u8, 1, 1, 0, 0, 0];
        assert_eq!(count_errors(&a, &a, 2).unwrap(), (0, 0));
        let inv: Vec<u8> = a.iter().map(|b| 1 - b).collect();
        assert_eq!(count_errors(&a, &inv, 2).unwrap(), (6, 3));
        let mut one = a.clone();
        one[3] ^= 1;
        assert_eq!(count_errors(&a, &one, 2).unwrap(), (1, 1));
        assert!(count_errors(&a, &a[..4], 2).is_err());
    }

    proptest! {
        #[test]
        fn slice_inverts_map(bits in proptest::collection::vec(0u8..2, 0..64), kind in 0usize..3) {
            let c = Constellation::new([Modulation::Bpsk, Modulation::Qpsk, Modulation::Qam16][kind]);
            let k = c.bits_per_symbol();
            let bits = &bits[..bits.len() / k * k];
            prop_assert_eq!(slice(&map_bits(bits, &c).unwrap(), &c), bits.to_vec());
        }

        #[test]
        fn merge_is_partition_independent(
            samples in proptest::collection::vec((0u64..5, 0u64..3, 1.0f64..20.0), 1..40),
            cut in 0usize..40,
        ) {
            let whole = samples.iter().fold(LinkResult::empty("x", 3.0, 8, 4), |mut r, s| {
                r.record(s.0, s.1, [s.2]);
                r
            });
            let cut = cut.min(samples.len());
            let mut a = LinkResult::empty("x", 3.0, 8, 4);
            let mut b = a.clone();
            samples[..cut].iter().for_each(|s| a.record(s.0, s.1, [s.2]));
            samples[cut..].iter().for_each(|s| b.record(s.0, s.1, [s.2]));
            let ba = b.clone().merge(&a).unwrap();
            let ab = a.merge(&b).unwrap();
            prop_assert_eq!(ab.ber().to_bits(), whole.ber().to_bits());
            prop_assert_eq!(ba.ser().to_bits(), whole.ser().to_bits());
            prop_assert_eq!(ba.papr_mean().to_bits(), whole.papr_mean().to_bits());
            prop_assert_eq!(ab.papr_p99().to_bits(), whole.papr_p99().to_bits());
        }
    }

    #[test]
    fn p99_nearest_rank() {
        let mut r = LinkResult::empty("x", 0.0, 1, 1);
        for i in 1..=200 {
            r.record(0, 0, [i as f64]);
        }
        assert_eq!(r.papr_p99(), 198.0);
        assert!((r.papr_mean() - 100.5).abs() < 1e-12);
    }

    #[test]
    fn ccdf_is_monotone() {
        let v = [1.0, 2.0, 4.0, 8.0];
        let c = ccdf(&v, &[-1.0, 0.0, 6.5, 10.0]);
        assert_eq!(c, vec![1.0, 0.75, 0.25, 0.0]);
    }
}
