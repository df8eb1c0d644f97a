//! Built-in invariant suite with a pass/fail line per check.
//!
//! All inputs come from a fixed seed, so two runs print the same report.
//! [`Fault::IsfftSign`] swaps the ISFFT used by the transform and channel
//! checks for one whose slot-axis DFT has the wrong sign; those checks must
//! then fail, which guards the suite against passing vacuously.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::channel::{
    coupling_tensor, propagate, random_channel, tf_channel, tf_channel_factored, twisted_convolution_matrix,
    windowed_dd_channel, ChannelMode, EffectiveMatrix, PowerProfile,
};
use crate::error::Result;
use crate::frame::{DdGrid, FrameParams, MappingKind, TfGrid, UserAllocation, C64};
use crate::modem::{modulate_vec, SchemeConfig};
use crate::multiuser::{
    downlink_superpose, kron_spreader, spread_vec, tf_spread, uplink_map_dd, zf_precode, DownlinkMode, SpreadingPair,
    UserRoute,
};
use crate::transforms::{dft_matrix, heisenberg, isfft, isfft_with, sfft, wigner};

const SEED: u64 = 0x5e1f_7e57;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fault {
    #[default]
    None,
    /// ISFFT computed as `F_M x^T F_N` instead of `F_M x^T F_N^H`.
    IsfftSign,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub max_error: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.max_error <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{} {} (max error {:.3e}, tolerance {:.0e})",
                if c.passed() { "PASS" } else { "FAIL" },
                c.name,
                c.max_error,
                c.tolerance
            )?;
        }
        let failed = self.checks.iter().filter(|c| !c.passed()).count();
        write!(f, "{} checks, {failed} failed", self.checks.len())
    }
}

fn faulty_isfft(x: &DdGrid) -> TfGrid {
    let (n, m) = (x.rows(), x.cols());
    TfGrid::from_matrix(dft_matrix(m) * x.as_matrix().transpose() * dft_matrix(n))
}

fn max_diff(a: &[C64], b: &[C64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

fn gaussian(len: usize, rng: &mut ChaCha8Rng) -> Vec<C64> {
    (0..len)
        .map(|_| {
            let re: f64 = StandardNormal.sample(rng);
            let im: f64 = StandardNormal.sample(rng);
            C64::new(re, im)
        })
        .collect()
}

fn dd(n: usize, m: usize, rng: &mut ChaCha8Rng) -> DdGrid {
    DdGrid::from_vec(n, m, &gaussian(n * m, rng)).expect("matching length")
}

fn tf(m: usize, n: usize, rng: &mut ChaCha8Rng) -> TfGrid {
    TfGrid::from_vec(m, n, &gaussian(m * n, rng)).expect("matching length")
}

struct Suite {
    rng: ChaCha8Rng,
    isfft: fn(&DdGrid) -> TfGrid,
}

const SHAPES: [(usize, usize); 5] = [(1, 1), (4, 2), (8, 4), (16, 8), (5, 3)];

impl Suite {
    fn isfft_oracle(&mut self) -> Result<f64> {
        let mut err = 0.0f64;
        for (m, n) in SHAPES {
            let x = dd(n, m, &mut self.rng);
            let dense = isfft_with(&x, &dft_matrix(m), &dft_matrix(n))?;
            err = err.max(max_diff(&(self.isfft)(&x).to_vec(), &dense.to_vec()));
        }
        Ok(err)
    }

    fn isfft_round_trip(&mut self) -> Result<f64> {
        let mut err = 0.0f64;
        for (m, n) in SHAPES {
            let x = dd(n, m, &mut self.rng);
            let big = (self.isfft)(&x);
            err = err.max(max_diff(&sfft(&big).to_vec(), &x.to_vec()));
            err = err.max((big.energy() - x.energy()).abs() / x.energy());
        }
        Ok(err)
    }

    fn heisenberg_round_trip(&mut self) -> Result<f64> {
        let mut err = 0.0f64;
        for (m, n) in SHAPES {
            let p = FrameParams::new(m, n, 15e3)?;
            let x = tf(m, n, &mut self.rng);
            let s = heisenberg(&x, &p, m / 4)?;
            err = err.max(max_diff(&wigner(&s, &p)?.to_vec(), &x.to_vec()));
            err = err.max((s.body_energy() - x.energy()).abs() / x.energy());
        }
        Ok(err)
    }

    fn reductions(&mut self) -> Result<f64> {
        let mut err = 0.0f64;
        for m in [4usize, 8, 16] {
            let cp = m / 4;
            let one = FrameParams::new(m, 1, 15e3)?;
            let v = gaussian(m, &mut self.rng);
            let otfs = heisenberg(&(self.isfft)(&DdGrid::from_vec(1, m, &v)?), &one, cp)?;
            let sc = modulate_vec(&SchemeConfig::scfdma(m, 15e3, cp)?, &v)?;
            err = err.max(max_diff(otfs.samples(), sc.samples()));
            let ostf = modulate_vec(&SchemeConfig::new(crate::Scheme::Ostf, one, cp)?, &v)?;
            let ofdm = modulate_vec(&SchemeConfig::ofdm(m, 15e3, cp)?, &v)?;
            err = err.max(max_diff(ostf.samples(), ofdm.samples()));
            let p = FrameParams::new(m, 4, 15e3)?;
            let x = dd(4, m, &mut self.rng);
            let ident = isfft_with(&x, &DMatrix::identity(m, m), &DMatrix::identity(4, 4))?;
            let a = heisenberg(&ident, &p, cp)?;
            let b = modulate_vec(&SchemeConfig::new(crate::Scheme::Ostf, p, cp)?, &ident.to_vec())?;
            err = err.max(max_diff(a.samples(), b.samples()));
        }
        Ok(err)
    }

    fn channel_oracle(&mut self) -> Result<f64> {
        let p = FrameParams::new(8, 4, 15e3)?;
        let mut err = 0.0f64;
        for _ in 0..5 {
            let ch = random_channel(3, 3, &PowerProfile::Uniform, &p, &mut self.rng)?;
            let x = dd(4, 8, &mut self.rng);
            let s = heisenberg(&(self.isfft)(&x), &p, 0)?;
            let y = sfft(&wigner(&propagate(&s, &ch, &p, ChannelMode::Cyclic)?, &p)?);
            let op = twisted_convolution_matrix(&windowed_dd_channel(&ch, &p), &p);
            let expect = op * DVector::from_column_slice(&x.to_vec());
            err = err.max(max_diff(&y.to_vec(), expect.as_slice()));
        }
        Ok(err)
    }

    fn tf_factored(&mut self) -> Result<f64> {
        let mut err = 0.0f64;
        for (m, n) in [(8usize, 4usize), (16, 8)] {
            let p = FrameParams::new(m, n, 15e3)?;
            let ch = random_channel(4, 3, &PowerProfile::Uniform, &p, &mut self.rng)?;
            let a = tf_channel(&ch, &p);
            let b = tf_channel_factored(&ch, &p)?;
            err = err.max(max_diff(a.as_matrix().as_slice(), b.as_matrix().as_slice()));
        }
        Ok(err)
    }

    fn coupling(&mut self) -> Result<f64> {
        let p = FrameParams::new(4, 4, 15e3)?;
        let mut err = 0.0f64;
        for _ in 0..3 {
            let ch = random_channel(2, 3, &PowerProfile::Uniform, &p, &mut self.rng)?;
            let h = coupling_tensor(&ch, &p, ChannelMode::Cyclic, 1)?;
            let x = tf(4, 4, &mut self.rng);
            let direct = wigner(&propagate(&heisenberg(&x, &p, 1)?, &ch, &p, ChannelMode::Cyclic)?, &p)?;
            err = err.max(max_diff(&h.apply(&x)?.to_vec(), &direct.to_vec()));
        }
        Ok(err)
    }

    fn spreading_equivalences(&mut self) -> Result<f64> {
        let p = FrameParams::new(8, 4, 15e3)?;
        let alloc = UserAllocation::tiled(&p, 2, 2, MappingKind::Interleaved, MappingKind::Localized)?;
        let mut err = 0.0f64;
        for u in alloc.users() {
            let (m_d, n_d) = u.shape();
            let x = dd(n_d, m_d, &mut self.rng);
            let pair = SpreadingPair::isfft(u);
            let a = uplink_map_dd(&x, u, &p)?.to_vec();
            let b = tf_spread(&x, &pair)?.to_vec();
            let c = spread_vec(&x.to_vec(), &kron_spreader(&pair))?;
            err = err.max(max_diff(&a, &b)).max(max_diff(&a, &c));
        }
        Ok(err)
    }

    fn zero_mui(&mut self) -> Result<f64> {
        let p = FrameParams::new(8, 4, 15e3)?;
        let alloc = UserAllocation::tiled(&p, 2, 2, MappingKind::Localized, MappingKind::Interleaved)?;
        let routes: Vec<UserRoute> = alloc.users().iter().map(|u| UserRoute::DdMapped(u.clone())).collect();
        let blocks: Vec<DdGrid> = alloc
            .users()
            .iter()
            .map(|u| {
                let (m_d, n_d) = u.shape();
                dd(n_d, m_d, &mut self.rng)
            })
            .collect();
        let y = downlink_superpose(&blocks, &routes, &p, DownlinkMode::DdMapped)?;
        let mut err = 0.0f64;
        for (r, x) in routes.iter().zip(&blocks) {
            err = err.max(max_diff(&r.despread(&y, &p)?.to_vec(), &x.to_vec()));
        }
        Ok(err)
    }

    fn zf_residual(&mut self) -> Result<f64> {
        let h = DMatrix::from_vec(16, 16, gaussian(256, &mut self.rng));
        let pre = zf_precode(&EffectiveMatrix { matrix: h.clone() }, &[4, 4, 4, 4], 16.0)?;
        Ok(pre.residual(&h))
    }
}

/// Runs every check; a check that errors out is reported with an infinite error.
pub fn selftest(fault: Fault) -> Report {
    let mut suite = Suite {
        rng: ChaCha8Rng::seed_from_u64(SEED),
        isfft: match fault {
            Fault::None => isfft,
            Fault::IsfftSign => faulty_isfft,
        },
    };
    type Step = fn(&mut Suite) -> Result<f64>;
    let steps: [(&'static str, Step, f64); 10] = [
        ("isfft matches the dense DFT form", Suite::isfft_oracle, 1e-10),
        ("isfft/sfft round trip and Parseval", Suite::isfft_round_trip, 1e-10),
        (
            "heisenberg/wigner round trip and Parseval",
            Suite::heisenberg_round_trip,
            1e-10,
        ),
        ("single-slot and identity-DFT reductions", Suite::reductions, 1e-12),
        (
            "effective DD channel equals twisted convolution",
            Suite::channel_oracle,
            1e-9,
        ),
        ("TF channel direct and factored forms agree", Suite::tf_factored, 1e-10),
        ("coupling tensor reproduces the wigner output", Suite::coupling, 1e-10),
        (
            "uplink DD mapping, DFT spreading and Kronecker form agree",
            Suite::spreading_equivalences,
            1e-12,
        ),
        (
            "zero multiuser interference over an identity channel",
            Suite::zero_mui,
            1e-12,
        ),
        ("zero-forcing precoder residual", Suite::zf_residual, 1e-9),
    ];
    let checks = steps
        .into_iter()
        .map(|(name, step, tolerance)| Check {
            name,
            max_error: step(&mut suite).unwrap_or(f64::INFINITY),
            tolerance,
        })
        .collect();
    Report { checks }
}
