//! Channel inspection: TF magnitude surface, windowed DD response, taps and
//! frequency correlation.

use std::fs;
use std::path::{Path, PathBuf};

use super::config::{ChannelSpec, Scenario};
use super::runner::{format_sig, trial_rng};
use crate::channel::{
    centered_doppler, random_channel, tf_channel, windowed_dd_channel, DdChannel, TfChannel, WindowedChannel,
};
use crate::error::Result;
use crate::frame::{FrameParams, C64};

/// Realizations averaged for the frequency correlation of a random channel.
pub const ACF_REALIZATIONS: u64 = 256;

#[derive(Debug, Clone)]
pub struct ChannelReport {
    pub params: FrameParams,
    /// The fixed channel, or the first realization of a random one.
    pub channel: DdChannel,
    pub tf: TfChannel,
    pub windowed: WindowedChannel,
    /// `|R(k)| / R(0)` for cyclic frequency lags `k = 0..M`.
    pub freq_acf: Vec<f64>,
    /// Lag of the first local minimum of `freq_acf`.
    pub correlation_length: usize,
}

/// Cyclic frequency autocorrelation of `H`, averaged over slots:
/// `R(k) = mean_{m,n} H[m + k, n] conj(H[m, n])`.
pub fn frequency_acf(h: &TfChannel) -> Vec<C64> {
    let (m, n) = (h.rows(), h.cols());
    let norm = (m * n) as f64;
    (0..m)
        .map(|k| {
            let mut acc = C64::new(0.0, 0.0);
            for col in 0..n {
                for row in 0..m {
                    acc += h.get((row + k) % m, col) * h.get(row, col).conj();
                }
            }
            acc / norm
        })
        .collect()
}

/// First lag `k >= 1` with `acf[k] < acf[k - 1]` and `acf[k] <= acf[k + 1]`
/// (cyclically); `acf.len()` when the correlation never dips.
pub fn correlation_length(acf: &[f64]) -> usize {
    let m = acf.len();
    for k in 1..m {
        if acf[k] < acf[k - 1] && acf[k] <= acf[(k + 1) % m] {
            return k;
        }
    }
    m
}

pub fn inspect_channel(s: &Scenario) -> Result<ChannelReport> {
    let params = s.params()?;
    let (channel, realizations) = match s.channel_spec()? {
        ChannelSpec::Fixed(ch) => (ch.clone(), vec![ch]),
        ChannelSpec::Random { l_max, v_max, profile } => {
            let draws = (0..ACF_REALIZATIONS)
                .map(|r| random_channel(l_max, v_max, &profile, &params, &mut trial_rng(s.seed, 0, r)))
                .collect::<Result<Vec<_>>>()?;
            (draws[0].clone(), draws)
        }
    };
    let mut acc = vec![C64::new(0.0, 0.0); params.m()];
    for ch in &realizations {
        for (a, r) in acc.iter_mut().zip(frequency_acf(&tf_channel(ch, &params))) {
            *a += r;
        }
    }
    let r0 = acc[0].norm();
    let freq_acf: Vec<f64> = acc.iter().map(|r| if r0 > 0.0 { r.norm() / r0 } else { 0.0 }).collect();
    let correlation_length = correlation_length(&freq_acf);
    Ok(ChannelReport {
        tf: tf_channel(&channel, &params),
        windowed: windowed_dd_channel(&channel, &params),
        params,
        channel,
        freq_acf,
        correlation_length,
    })
}

impl ChannelReport {
    /// `M` rows (subbands) of `N` comma-separated values (slots), in dB.
    pub fn tf_surface_csv(&self) -> String {
        let db = self.tf.magnitude_db();
        let mut out = String::new();
        for row in 0..db.nrows() {
            let line: Vec<String> = (0..db.ncols()).map(|c| format_sig(db[(row, c)], 12)).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn windowed_csv(&self) -> String {
        let h = self.windowed.as_matrix();
        let mut out = String::from("doppler,delay,re,im,abs\n");
        for row in 0..h.nrows() {
            let k = centered_doppler(row, h.nrows());
            for l in 0..h.ncols() {
                let v = h[(row, l)];
                out.push_str(&format!(
                    "{k},{l},{},{},{}\n",
                    format_sig(v.re, 12),
                    format_sig(v.im, 12),
                    format_sig(v.norm(), 12)
                ));
            }
        }
        out
    }

    pub fn taps_csv(&self) -> String {
        let mut out = String::from("delay,doppler,re,im,power\n");
        for t in self.channel.taps() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                t.delay,
                t.doppler,
                format_sig(t.gain.re, 12),
                format_sig(t.gain.im, 12),
                format_sig(t.gain.norm_sqr(), 12)
            ));
        }
        out
    }

    pub fn acf_csv(&self) -> String {
        let mut out = String::from("lag,acf\n");
        for (k, v) in self.freq_acf.iter().enumerate() {
            out.push_str(&format!("{k},{}\n", format_sig(*v, 12)));
        }
        out
    }

    /// Writes the four CSV files into `dir`, creating it if needed.
    pub fn write_dir(&self, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
        fs::create_dir_all(dir)?;
        let files = [
            ("tf_surface.csv", self.tf_surface_csv()),
            ("windowed_dd.csv", self.windowed_csv()),
            ("taps.csv", self.taps_csv()),
            ("freq_acf.csv", self.acf_csv()),
        ];
        let mut written = Vec::with_capacity(files.len());
        for (name, body) in files {
            let p = dir.join(name);
            fs::write(&p, body)?;
            written.push(p);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario(channel: &str) -> Scenario {
        Scenario::from_toml_str(&format!(
            "trials = 1\nsnr_db_list = [0.0]\nseed = 3\n[frame]\nM = 32\nN = 8\n[channel]\n{channel}\n"
        ))
        .unwrap()
    }

    #[test]
    fn flat_channel_is_zero_db() {
        let r = inspect_channel(&scenario("taps = [{ delay = 0, doppler = 0, gain = [1.0, 0.0] }]")).unwrap();
        assert!(r.tf.magnitude_db().iter().all(|v| v.abs() < 1e-12));
        assert_eq!(r.correlation_length, 32);
    }

    #[test]
    fn delay_only_surface_is_constant_in_time() {
        let r = inspect_channel(&scenario(
            "taps = [{ delay = 0, doppler = 0, gain = [0.8, 0.0] }, { delay = 3, doppler = 0, gain = [0.0, 0.6] }]",
        ))
        .unwrap();
        let db = r.tf.magnitude_db();
        for m in 0..32 {
            for n in 1..8 {
                assert!((db[(m, n)] - db[(m, 0)]).abs() < 1e-9);
            }
        }
        let varies = (1..32).any(|m| (db[(m, 0)] - db[(0, 0)]).abs() > 1e-3);
        assert!(varies);
    }

    #[test]
    fn random_channel_correlation_length_tracks_delay_spread() {
        for l_max in [2usize, 4, 8] {
            let r = inspect_channel(&scenario(&format!("random = {{ L_max = {l_max}, V_max = 2 }}"))).unwrap();
            let expected = 32 / l_max;
            assert!(
                r.correlation_length.abs_diff(expected) <= 1,
                "L_max={l_max}: {} vs {expected}",
                r.correlation_length
            );
            let db = r.tf.magnitude_db();
            let spread = |f: &dyn Fn(usize) -> f64, len| {
                (0..len).map(f).fold(f64::NEG_INFINITY, f64::max) - (0..len).map(f).fold(f64::INFINITY, f64::min)
            };
            assert!(spread(&|m| db[(m, 0)], 32) > 1e-3);
            assert!(spread(&|n| db[(0, n)], 8) > 1e-3);
        }
    }

    #[test]
    fn csv_shapes() {
        let r = inspect_channel(&scenario("random = { L_max = 2, V_max = 3 }")).unwrap();
        assert_eq!(r.tf_surface_csv().lines().count(), 32);
        assert_eq!(r.tf_surface_csv().lines().next().unwrap().split(',').count(), 8);
        assert_eq!(r.windowed_csv().lines().count(), 1 + 32 * 8);
        assert_eq!(r.taps_csv().lines().count(), 1 + 6);
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(r.write_dir(dir.path()).unwrap().len(), 4);
    }
}
