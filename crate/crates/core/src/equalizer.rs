//! Detection: one-tap TF equalization, linear MMSE on the composed model,
//! and exhaustive ML for tiny blocks.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::channel::{EffectiveMatrix, TfChannel};
use crate::error::{Error, Result};
use crate::frame::{TfGrid, C64};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modulation {
    Bpsk,
    Qpsk,
    #[serde(rename = "16qam")]
    Qam16,
}

/// Unit-energy Gray-labelled constellation. `points[label]` is the symbol
/// for the bit label read MSB first.
///
/// Labels: BPSK `0 -> +1`, `1 -> -1`. QPSK first bit sets the sign of I,
/// second the sign of Q (`0 -> +`), so `00 -> (1 + j)/sqrt(2)`. 16-QAM uses
/// bits `b0 b1` for I and `b2 b3` for Q, each pair mapped
/// `00 -> +3, 01 -> +1, 11 -> -1, 10 -> -3`, scaled by `1/sqrt(10)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constellation {
    kind: Modulation,
    points: Vec<C64>,
}

fn pam4(b0: usize, b1: usize) -> f64 {
    match (b0, b1) {
        (0, 0) => 3.0,
        (0, 1) => 1.0,
        (1, 1) => -1.0,
        _ => -3.0,
    }
}

impl Constellation {
    pub fn new(kind: Modulation) -> Self {
        let points = match kind {
            Modulation::Bpsk => vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)],
            Modulation::Qpsk => {
                let r = std::f64::consts::FRAC_1_SQRT_2;
                (0..4)
                    .map(|l| {
                        let i = if l & 0b10 == 0 { r } else { -r };
                        let q = if l & 0b01 == 0 { r } else { -r };
                        C64::new(i, q)
                    })
                    .collect()
            }
            Modulation::Qam16 => {
                let s = 1.0 / 10f64.sqrt();
                (0..16)
                    .map(|l| {
                        let bit = |k: usize| (l >> (3 - k)) & 1;
                        C64::new(pam4(bit(0), bit(1)) * s, pam4(bit(2), bit(3)) * s)
                    })
                    .collect()
            }
        };
        Self { kind, points }
    }

    pub fn kind(&self) -> Modulation {
        self.kind
    }

    pub fn points(&self) -> &[C64] {
        &self.points
    }

    pub fn size(&self) -> usize {
        self.points.len()
    }

    pub fn bits_per_symbol(&self) -> usize {
        self.points.len().trailing_zeros() as usize
    }

    /// Label of the nearest point; ties resolve to the lowest label.
    pub fn nearest(&self, z: C64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (z - p).norm_sqr();
            if d < best_d {
                best_d = d;
                best = i;
            }
        }
        best
    }
}

/// Scalar MMSE per TF cell: `conj(H) Y / (|H|^2 + noise_var)`; with zero
/// noise variance this is `Y / H`.
pub fn one_tap_tf(y: &TfGrid, h: &TfChannel, noise_var: f64) -> Result<TfGrid> {
    if y.rows() != h.rows() || y.cols() != h.cols() {
        return Err(Error::dim(
            format!("{}x{}", h.rows(), h.cols()),
            format!("{}x{}", y.rows(), y.cols()),
        ));
    }
    let mut out = TfGrid::zeros(y.rows(), y.cols());
    for m in 0..y.rows() {
        for n in 0..y.cols() {
            let g = h.get(m, n);
            let den = g.norm_sqr() + noise_var;
            if den == 0.0 {
                return Err(Error::ZeroGain { row: m, col: n });
            }
            out.set(m, n, g.conj() * y.get(m, n) / den);
        }
    }
    Ok(out)
}

/// Largest system [`MmseEqualizer`] will factor.
pub const MMSE_MAX_DIM: usize = 1024;

/// Precomputed linear MMSE filter `W = H^H (H H^H + noise_var I)^-1`.
#[derive(Debug, Clone)]
pub struct MmseEqualizer {
    w: DMatrix<C64>,
    pinv_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MmseOutput {
    pub estimates: Vec<C64>,
    /// The system was singular at zero noise and a pseudo-inverse was used.
    pub pinv_fallback: bool,
}

impl MmseEqualizer {
    pub fn new(h: &DMatrix<C64>, noise_var: f64) -> Result<Self> {
        let (rows, cols) = h.shape();
        if rows.max(cols) > MMSE_MAX_DIM {
            return Err(Error::SizeGuard(format!(
                "MMSE limited to {MMSE_MAX_DIM} dimensions, got {rows}x{cols}"
            )));
        }
        if !(noise_var >= 0.0) {
            return Err(Error::InvalidParameter(format!("noise variance {noise_var}")));
        }
        if noise_var == 0.0 {
            let svd = h.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let tol = smax * (rows.max(cols) as f64) * f64::EPSILON;
            let rank_deficient = svd.singular_values.iter().any(|s| *s <= tol);
            let w = svd
                .pseudo_inverse(tol)
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            return Ok(Self {
                w,
                pinv_fallback: rank_deficient,
            });
        }
        let mut gram = h * h.adjoint();
        for i in 0..rows {
            gram[(i, i)] += C64::new(noise_var, 0.0);
        }
        let chol = gram
            .cholesky()
            .ok_or_else(|| Error::InvalidParameter("MMSE Gram matrix not positive definite".into()))?;
        // G^-1 H, and W = (G^-1 H)^H because G is Hermitian
        let w = chol.solve(h).adjoint();
        Ok(Self {
            w,
            pinv_fallback: false,
        })
    }

    pub fn filter(&self) -> &DMatrix<C64> {
        &self.w
    }

    pub fn equalize(&self, y: &[C64]) -> Result<Vec<C64>> {
        if y.len() != self.w.ncols() {
            return Err(Error::dim(self.w.ncols(), y.len()));
        }
        let v = &self.w * DVector::from_column_slice(y);
        Ok(v.as_slice().to_vec())
    }

    pub fn pinv_fallback(&self) -> bool {
        self.pinv_fallback
    }
}

/// One-shot `x = H^H (H H^H + noise_var I)^-1 y`.
pub fn mmse_dd(y: &[C64], h_eff: &EffectiveMatrix, noise_var: f64) -> Result<MmseOutput> {
    let eq = MmseEqualizer::new(&h_eff.matrix, noise_var)?;
    Ok(MmseOutput {
        estimates: eq.equalize(y)?,
        pinv_fallback: eq.pinv_fallback,
    })
}

/// Largest search space for [`ml_detect`], in bits per block.
pub const ML_MAX_BITS: usize = 16;

/// Exhaustive `argmin ||y - H x||^2` over constellation-valued `x`. Returns
/// the labels; on exact ties the lexicographically smallest label vector wins.
pub fn ml_detect(y: &[C64], h: &DMatrix<C64>, constellation: &Constellation) -> Result<Vec<usize>> {
    let dim = h.ncols();
    if y.len() != h.nrows() {
        return Err(Error::dim(h.nrows(), y.len()));
    }
    let bits = dim * constellation.bits_per_symbol();
    if bits > ML_MAX_BITS {
        return Err(Error::SizeGuard(format!(
            "ML search over {bits} bits exceeds {ML_MAX_BITS}"
        )));
    }
    let q = constellation.size();
    let pts = constellation.points();
    let total = q.pow(dim as u32);
    let mut labels = vec![0usize; dim];
    let mut best = labels.clone();
    let mut best_metric = f64::INFINITY;
    let mut resid = vec![C64::new(0.0, 0.0); y.len()];
    for _ in 0..total {
        resid.copy_from_slice(y);
        for (c, &l) in labels.iter().enumerate() {
            let s = pts[l];
            for (r, v) in resid.iter_mut().enumerate() {
                *v -= h[(r, c)] * s;
            }
        }
        let metric: f64 = resid.iter().map(|v| v.norm_sqr()).sum();
        if metric < best_metric {
            best_metric = metric;
            best.copy_from_slice(&labels);
        }
        // odometer with the first coordinate most significant
        for c in (0..dim).rev() {
            labels[c] += 1;
            if labels[c] < q {
                break;
            }
            labels[c] = 0;
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{tf_channel, DdChannel, Tap};
    use crate::frame::FrameParams;
    use crate::modem::{demodulate_vec, modulate_vec, SchemeConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn cn(rng: &mut ChaCha8Rng, var: f64) -> C64 {
        let sd = (var / 2.0).sqrt();
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re * sd, im * sd)
    }

    fn gaussian_matrix(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<C64> {
        DMatrix::from_fn(n, n, |_, _| cn(rng, 1.0))
    }

    fn max_diff(a: &[C64], b: &[C64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn constellations_have_unit_energy_and_gray_labels() {
        for kind in [Modulation::Bpsk, Modulation::Qpsk, Modulation::Qam16] {
            let c = Constellation::new(kind);
            let e: f64 = c.points().iter().map(|p| p.norm_sqr()).sum::<f64>() / c.size() as f64;
            assert!((e - 1.0).abs() < 1e-12);
            // nearest neighbours differ in exactly one bit
            let dmin = c
                .points()
                .iter()
                .enumerate()
                .flat_map(|(i, a)| c.points().iter().skip(i + 1).map(move |b| (a - b).norm()))
                .fold(f64::INFINITY, f64::min);
            for (i, a) in c.points().iter().enumerate() {
                for (j, b) in c.points().iter().enumerate() {
                    if i != j && ((a - b).norm() - dmin).abs() < 1e-9 {
                        assert_eq!((i ^ j).count_ones(), 1, "{kind:?} {i} {j}");
                    }
                }
            }
        }
        let q = Constellation::new(Modulation::Qpsk);
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((q.points()[0] - C64::new(r, r)).norm() < 1e-15);
    }

    #[test]
    fn one_tap_examples() {
        let y = TfGrid::from_matrix(DMatrix::from_fn(4, 2, |r, c| C64::new(r as f64, c as f64)));
        let ones = TfChannel::from_matrix(DMatrix::from_element(4, 2, C64::new(1.0, 0.0)));
        assert_eq!(one_tap_tf(&y, &ones, 0.0).unwrap(), y);
        let half = one_tap_tf(&y, &ones, 1.0).unwrap();
        assert!((half.as_matrix() - y.as_matrix() * C64::new(0.5, 0.0)).norm() < 1e-15);
        let zero = TfChannel::from_matrix(DMatrix::zeros(4, 2));
        assert!(matches!(one_tap_tf(&y, &zero, 0.0), Err(Error::ZeroGain { .. })));
        assert!(one_tap_tf(&y, &TfChannel::from_matrix(DMatrix::zeros(2, 4)), 1.0).is_err());
    }

    #[test]
    fn one_tap_recovers_ofdm_over_delay_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let cfg = SchemeConfig::ofdm(16, 15e3, 3).unwrap();
        let ch = DdChannel::new(
            vec![Tap::new(0, 0, C64::new(0.8, 0.0)), Tap::new(3, 0, C64::new(0.2, 0.5))],
            &cfg.params,
        )
        .unwrap();
        let x: Vec<C64> = (0..16).map(|_| cn(&mut rng, 1.0)).collect();
        let r = crate::channel::propagate(
            &modulate_vec(&cfg, &x).unwrap(),
            &ch,
            &cfg.params,
            crate::channel::ChannelMode::PerSlotCp,
        )
        .unwrap();
        let y = TfGrid::from_vec(16, 1, &demodulate_vec(&cfg, &r).unwrap()).unwrap();
        let xh = one_tap_tf(&y, &tf_channel(&ch, &cfg.params), 0.0).unwrap();
        assert!(max_diff(&xh.to_vec(), &x) < 1e-10);
        let _ = FrameParams::new(1, 1, 1.0).unwrap();
    }

    #[test]
    fn mmse_identity_cases() {
        let eye = EffectiveMatrix {
            matrix: DMatrix::identity(8, 8),
        };
        let y: Vec<C64> = (0..8).map(|i| C64::new(i as f64, 1.0)).collect();
        let out = mmse_dd(&y, &eye, 0.0).unwrap();
        assert!(max_diff(&out.estimates, &y) < 1e-14);
        assert!(!out.pinv_fallback);
        let out = mmse_dd(&y, &eye, 1.0).unwrap();
        let half: Vec<C64> = y.iter().map(|v| v * 0.5).collect();
        assert!(max_diff(&out.estimates, &half) < 1e-14);
    }

    #[test]
    fn mmse_solves_well_conditioned_system() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let h = gaussian_matrix(&mut rng, 16) + DMatrix::identity(16, 16) * C64::new(4.0, 0.0);
        let x: Vec<C64> = (0..16).map(|_| cn(&mut rng, 1.0)).collect();
        let y = &h * DVector::from_column_slice(&x);
        let out = mmse_dd(y.as_slice(), &EffectiveMatrix { matrix: h.clone() }, 1e-8).unwrap();
        assert!(max_diff(&out.estimates, &x) < 1e-3);
    }

    #[test]
    fn mmse_tends_to_zero_forcing() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let h = gaussian_matrix(&mut rng, 12) + DMatrix::identity(12, 12) * C64::new(3.0, 0.0);
        let y: Vec<C64> = (0..12).map(|_| cn(&mut rng, 1.0)).collect();
        let zf = h.clone().lu().solve(&DVector::from_column_slice(&y)).unwrap();
        let out = mmse_dd(&y, &EffectiveMatrix { matrix: h }, 1e-12).unwrap();
        assert!(max_diff(&out.estimates, zf.as_slice()) < 1e-6);
    }

    #[test]
    fn singular_zero_noise_falls_back_to_pinv() {
        let mut h = DMatrix::identity(4, 4);
        h[(3, 3)] = C64::new(0.0, 0.0);
        let y = vec![C64::new(1.0, 0.0); 4];
        let out = mmse_dd(&y, &EffectiveMatrix { matrix: h }, 0.0).unwrap();
        assert!(out.pinv_fallback);
        assert!(
            max_diff(
                &out.estimates,
                &[
                    C64::new(1.0, 0.0),
                    C64::new(1.0, 0.0),
                    C64::new(1.0, 0.0),
                    C64::new(0.0, 0.0)
                ]
            ) < 1e-14
        );
    }

    #[test]
    fn mmse_beats_matched_filter_on_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let (mut mse_mmse, mut mse_mf) = (0.0, 0.0);
        for _ in 0..10_000 {
            let h = gaussian_matrix(&mut rng, 4);
            let x: Vec<C64> = (0..4).map(|_| cn(&mut rng, 1.0)).collect();
            let noise_var = 0.1;
            let mut y = &h * DVector::from_column_slice(&x);
            y.iter_mut().for_each(|v| *v += cn(&mut rng, noise_var));
            let est = MmseEqualizer::new(&h, noise_var)
                .unwrap()
                .equalize(y.as_slice())
                .unwrap();
            let mf = h.adjoint() * &y;
            mse_mmse += est.iter().zip(&x).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
            mse_mf += mf.iter().zip(&x).map(|(a, b)| (a - b).norm_sqr()).sum::<f64>();
        }
        assert!(mse_mmse <= mse_mf * 1.05, "mmse {mse_mmse} mf {mse_mf}");
    }

    #[test]
    fn ml_noiseless_and_slicer_behaviour() {
        let mut rng = ChaCha8Rng::seed_from_u64(44);
        let qpsk = Constellation::new(Modulation::Qpsk);
        let h = gaussian_matrix(&mut rng, 4);
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..4)).collect();
        let x: Vec<C64> = labels.iter().map(|&l| qpsk.points()[l]).collect();
        let y = &h * DVector::from_column_slice(&x);
        assert_eq!(ml_detect(y.as_slice(), &h, &qpsk).unwrap(), labels);

        let eye = DMatrix::identity(3, 3);
        let y = vec![C64::new(0.2, -0.9), C64::new(-1.5, 0.1), C64::new(0.3, 0.4)];
        let got = ml_detect(&y, &eye, &qpsk).unwrap();
        let sliced: Vec<usize> = y.iter().map(|v| qpsk.nearest(*v)).collect();
        assert_eq!(got, sliced);

        let big = DMatrix::identity(9, 9);
        assert!(matches!(
            ml_detect(&[C64::new(0.0, 0.0); 9], &big, &qpsk),
            Err(Error::SizeGuard(_))
        ));
    }

    #[test]
    fn ml_tie_breaks_to_lowest_label() {
        let bpsk = Constellation::new(Modulation::Bpsk);
        let h = DMatrix::identity(2, 2);
        assert_eq!(ml_detect(&[C64::new(0.0, 0.0); 2], &h, &bpsk).unwrap(), vec![0, 0]);
    }

    // Independent recursive enumeration.
    fn ml_recursive(y: &[C64], h: &DMatrix<C64>, c: &Constellation) -> Vec<usize> {
        fn go(
            depth: usize,
            cur: &mut Vec<usize>,
            y: &[C64],
            h: &DMatrix<C64>,
            c: &Constellation,
            best: &mut (f64, Vec<usize>),
        ) {
            if depth == h.ncols() {
                let x = DVector::from_iterator(cur.len(), cur.iter().map(|&l| c.points()[l]));
                let r = DVector::from_column_slice(y) - h * x;
                let m = r.norm_squared();
                if m < best.0 {
                    *best = (m, cur.clone());
                }
                return;
            }
            for l in 0..c.size() {
                cur.push(l);
                go(depth + 1, cur, y, h, c, best);
                cur.pop();
            }
        }
        let mut best = (f64::INFINITY, vec![]);
        go(0, &mut Vec::new(), y, h, c, &mut best);
        best.1
    }

    #[test]
    fn ml_matches_independent_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(45);
        let qpsk = Constellation::new(Modulation::Qpsk);
        for _ in 0..50 {
            let h = gaussian_matrix(&mut rng, 4);
            let y: Vec<C64> = (0..4).map(|_| cn(&mut rng, 1.0)).collect();
            assert_eq!(ml_detect(&y, &h, &qpsk).unwrap(), ml_recursive(&y, &h, &qpsk));
        }
    }

    #[test]
    fn ml_symbol_errors_never_exceed_mmse() {
        let mut rng = ChaCha8Rng::seed_from_u64(46);
        let qpsk = Constellation::new(Modulation::Qpsk);
        let noise_var = 0.3;
        let (mut err_ml, mut err_mmse) = (0usize, 0usize);
        for _ in 0..1000 {
            let h = gaussian_matrix(&mut rng, 4);
            let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..4)).collect();
            let x: Vec<C64> = labels.iter().map(|&l| qpsk.points()[l]).collect();
            let mut y = &h * DVector::from_column_slice(&x);
            y.iter_mut().for_each(|v| *v += cn(&mut rng, noise_var));
            let ml = ml_detect(y.as_slice(), &h, &qpsk).unwrap();
            let lin = MmseEqualizer::new(&h, noise_var)
                .unwrap()
                .equalize(y.as_slice())
                .unwrap();
            err_ml += ml.iter().zip(&labels).filter(|(a, b)| a != b).count();
            err_mmse += lin.iter().zip(&labels).filter(|(z, &b)| qpsk.nearest(**z) != b).count();
        }
        assert!(err_ml <= err_mmse, "ml {err_ml} mmse {err_mmse}");
    }
}
