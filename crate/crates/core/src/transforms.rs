//! Unitary discrete transforms between the delay-Doppler grid, the
//! time-frequency grid and the sampled time waveform.
//!
//! Every transform carries its `1/sqrt(len)` factor so energy and noise
//! variance pass through the chain unchanged. The pulse is rectangular over
//! one slot, sampled critically (`M` samples per slot).

use std::cell::RefCell;
use std::f64::consts::PI;

use nalgebra::DMatrix;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::frame::{DdGrid, FrameParams, TfGrid, TimeSignal, C64};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `exp(-j 2 pi a b / n) / sqrt(n)`
    Forward,
    /// `exp(+j 2 pi a b / n) / sqrt(n)`
    Inverse,
}

/// In-place unitary DFT of `buf`.
pub fn unitary_dft(buf: &mut [C64], dir: Direction) {
    let n = buf.len();
    if n <= 1 {
        return;
    }
    let fft = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        match dir {
            Direction::Forward => p.plan_fft_forward(n),
            Direction::Inverse => p.plan_fft_inverse(n),
        }
    });
    fft.process(buf);
    let scale = 1.0 / (n as f64).sqrt();
    buf.iter_mut().for_each(|v| *v *= scale);
}

/// Dense normalized DFT matrix `F[a, b] = exp(-j 2 pi a b / n) / sqrt(n)`.
pub fn dft_matrix(n: usize) -> DMatrix<C64> {
    let scale = 1.0 / (n as f64).sqrt();
    DMatrix::from_fn(n, n, |a, b| {
        // reduce the exponent mod n before scaling to keep the phase exact
        let k = ((a * b) % n) as f64;
        C64::from_polar(scale, -2.0 * PI * k / n as f64)
    })
}

fn dft_columns(mat: &mut DMatrix<C64>, dir: Direction) {
    for mut col in mat.column_iter_mut() {
        let mut buf: Vec<C64> = col.iter().copied().collect();
        unitary_dft(&mut buf, dir);
        col.iter_mut().zip(buf).for_each(|(d, s)| *d = s);
    }
}

fn dft_rows(mat: &mut DMatrix<C64>, dir: Direction) {
    for mut row in mat.row_iter_mut() {
        let mut buf: Vec<C64> = row.iter().copied().collect();
        unitary_dft(&mut buf, dir);
        row.iter_mut().zip(buf).for_each(|(d, s)| *d = s);
    }
}

/// ISFFT: `X = F_M x^T F_N^H`, an `N x M` DD grid to an `M x N` TF grid.
pub fn isfft(x: &DdGrid) -> TfGrid {
    let mut t = x.as_matrix().transpose();
    dft_columns(&mut t, Direction::Forward);
    dft_rows(&mut t, Direction::Inverse);
    TfGrid::from_matrix(t)
}

/// SFFT: `y^T = F_M^H Y F_N`, the exact inverse of [`isfft`].
pub fn sfft(y: &TfGrid) -> DdGrid {
    let mut t = y.as_matrix().clone();
    dft_columns(&mut t, Direction::Inverse);
    dft_rows(&mut t, Direction::Forward);
    DdGrid::from_matrix(t.transpose())
}

/// [`isfft`] with a shape check against `params`.
pub fn isfft_checked(x: &DdGrid, params: &FrameParams) -> Result<TfGrid> {
    x.check_shape(params.n(), params.m())?;
    Ok(isfft(x))
}

/// [`sfft`] with a shape check against `params`.
pub fn sfft_checked(y: &TfGrid, params: &FrameParams) -> Result<DdGrid> {
    y.check_shape(params.m(), params.n())?;
    Ok(sfft(y))
}

/// Dense form `A x^T B^H`. With `A = F_M`, `B = F_N` this is the ISFFT;
/// with identities it is a plain transpose (the OSTF placement).
pub fn isfft_with(x: &DdGrid, a: &DMatrix<C64>, b: &DMatrix<C64>) -> Result<TfGrid> {
    let (n, m) = (x.rows(), x.cols());
    if a.shape() != (m, m) || b.shape() != (n, n) {
        return Err(Error::dim(
            format!("{m}x{m} and {n}x{n} kernels"),
            format!("{:?} and {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(TfGrid::from_matrix(a * x.as_matrix().transpose() * b.adjoint()))
}

/// Heisenberg transform: one unitary `M`-point inverse DFT per slot, each
/// slot preceded by its last `cp_len` body samples.
pub fn heisenberg(x: &TfGrid, params: &FrameParams, cp_len: usize) -> Result<TimeSignal> {
    x.check_shape(params.m(), params.n())?;
    if cp_len > params.m() {
        return Err(Error::InvalidParameter(format!(
            "cyclic prefix {cp_len} exceeds slot length {}",
            params.m()
        )));
    }
    let m = params.m();
    let mut body = Vec::with_capacity(params.dof());
    for col in x.as_matrix().column_iter() {
        let mut buf: Vec<C64> = col.iter().copied().collect();
        unitary_dft(&mut buf, Direction::Inverse);
        body.extend(buf);
    }
    TimeSignal::from_body(&body, m, cp_len, params.bandwidth())
}

/// Wigner transform (matched filter): strip each prefix and apply the
/// unitary `M`-point forward DFT per slot.
pub fn wigner(s: &TimeSignal, params: &FrameParams) -> Result<TfGrid> {
    if s.slot_len() != params.m() || s.num_slots() != params.n() {
        return Err(Error::dim(
            format!("{} slots of {} samples", params.n(), params.m()),
            format!("{} slots of {} samples", s.num_slots(), s.slot_len()),
        ));
    }
    let mut out = DMatrix::zeros(params.m(), params.n());
    for n in 0..params.n() {
        let mut buf = s.slot_body(n).to_vec();
        unitary_dft(&mut buf, Direction::Forward);
        out.column_mut(n).iter_mut().zip(buf).for_each(|(d, v)| *d = v);
    }
    Ok(TfGrid::from_matrix(out))
}

/// Basis waveform `phi_{m,n}`: a unit-energy complex exponential at
/// subband `m`, supported on slot `n` only, no prefix.
pub fn basis_waveform(m: usize, n: usize, params: &FrameParams) -> Result<TimeSignal> {
    if m >= params.m() || n >= params.n() {
        return Err(Error::InvalidParameter(format!(
            "basis index ({m}, {n}) outside {}x{}",
            params.m(),
            params.n()
        )));
    }
    let len = params.m();
    let scale = 1.0 / (len as f64).sqrt();
    let mut samples = vec![C64::new(0.0, 0.0); params.dof()];
    for p in 0..len {
        let k = ((m * p) % len) as f64;
        samples[n * len + p] = C64::from_polar(scale, 2.0 * PI * k / len as f64);
    }
    TimeSignal::new(samples, len, 0, params.bandwidth())
}

/// Discrete cross-ambiguity of the rectangular receive/transmit pulse pair at
/// an integer lag (samples) and Doppler offset (bins of `1 / (N T)`).
///
/// Lags with `|delay| >= M` return zero; the Doppler offset is clamped to
/// `[-N/2, N/2]`.
pub fn ambiguity(delay_samples: i64, doppler_bins: i64, params: &FrameParams) -> C64 {
    let m = params.m() as i64;
    let n = params.n() as i64;
    if delay_samples.abs() >= m {
        return C64::new(0.0, 0.0);
    }
    let k = doppler_bins.clamp(-(n / 2), n / 2);
    let mn = (m * n) as f64;
    let amp = 1.0 / m as f64;
    // g_rx and g_tx are both 1/sqrt(M) on [0, M); overlap is [max(0,d), min(M, M+d))
    let lo = delay_samples.max(0);
    let hi = (m + delay_samples).min(m);
    (lo..hi)
        .map(|p| C64::from_polar(amp, 2.0 * PI * (k * p) as f64 / mn))
        .sum()
}
