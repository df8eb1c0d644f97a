//! Grid geometry, symbol containers and resource mapping.
//!
//! Orientation is fixed throughout the crate: a delay-Doppler grid is
//! `N x M` (row = Doppler bin, column = delay bin) and a time-frequency grid
//! is `M x N` (row = subband, column = time-slot). Vectorised forms always
//! use the column-major order of the `M x N` orientation, i.e. index
//! `n * M + m`, which for a DD grid is `vec(x^T)`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex64;

/// Time-frequency grid geometry with `T * delta_f = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameParams {
    m: usize,
    n: usize,
    delta_f: f64,
    slot_duration: f64,
}

impl FrameParams {
    pub fn new(m: usize, n: usize, delta_f: f64) -> Result<Self> {
        if m == 0 || n == 0 {
            return Err(Error::InvalidParameter(format!(
                "grid must be at least 1x1, got M={m}, N={n}"
            )));
        }
        if !(delta_f.is_finite() && delta_f > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "subband width must be positive, got {delta_f}"
            )));
        }
        Ok(Self {
            m,
            n,
            delta_f,
            slot_duration: 1.0 / delta_f,
        })
    }

    /// Number of subbands (delay bins).
    pub fn m(&self) -> usize {
        self.m
    }

    /// Number of time-slots (Doppler bins).
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn delta_f(&self) -> f64 {
        self.delta_f
    }

    pub fn slot_duration(&self) -> f64 {
        self.slot_duration
    }

    pub fn bandwidth(&self) -> f64 {
        self.m as f64 * self.delta_f
    }

    pub fn block_duration(&self) -> f64 {
        self.n as f64 * self.slot_duration
    }

    pub fn delay_resolution(&self) -> f64 {
        1.0 / self.bandwidth()
    }

    pub fn doppler_resolution(&self) -> f64 {
        1.0 / self.block_duration()
    }

    /// Degrees of freedom of one block, `M * N`.
    pub fn dof(&self) -> usize {
        self.m * self.n
    }

    /// Same geometry with a different number of slots.
    pub fn with_slots(&self, n: usize) -> Result<Self> {
        Self::new(self.m, n, self.delta_f)
    }
}

/// Convenience constructor mirroring [`FrameParams::new`].
pub fn make_frame(m: usize, n: usize, delta_f: f64) -> Result<FrameParams> {
    FrameParams::new(m, n, delta_f)
}

/// `N x M` delay-Doppler symbol matrix, `x[doppler, delay]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DdGrid(DMatrix<C64>);

/// `M x N` time-frequency symbol matrix, `X[subband, slot]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TfGrid(DMatrix<C64>);

macro_rules! grid_common {
    ($ty:ident, $rows:literal, $cols:literal) => {
        impl $ty {
            pub fn from_matrix(data: DMatrix<C64>) -> Self {
                Self(data)
            }

            pub fn zeros(rows: usize, cols: usize) -> Self {
                Self(DMatrix::zeros(rows, cols))
            }

            pub fn as_matrix(&self) -> &DMatrix<C64> {
                &self.0
            }

            pub fn into_matrix(self) -> DMatrix<C64> {
                self.0
            }

            pub fn rows(&self) -> usize {
                self.0.nrows()
            }

            pub fn cols(&self) -> usize {
                self.0.ncols()
            }

            pub fn get(&self, r: usize, c: usize) -> C64 {
                self.0[(r, c)]
            }

            pub fn set(&mut self, r: usize, c: usize, v: C64) {
                self.0[(r, c)] = v;
            }

            pub fn energy(&self) -> f64 {
                self.0.iter().map(|v| v.norm_sqr()).sum()
            }

            pub(crate) fn check_shape(&self, rows: usize, cols: usize) -> Result<()> {
                if self.0.nrows() != rows || self.0.ncols() != cols {
                    return Err(Error::dim(
                        format!("{rows}x{cols} {}", stringify!($ty)),
                        format!("{}x{}", self.0.nrows(), self.0.ncols()),
                    ));
                }
                Ok(())
            }
        }
    };
}

grid_common!(DdGrid, "N", "M");
grid_common!(TfGrid, "M", "N");

impl DdGrid {
    /// Builds a grid from `vec(x^T)` (index `doppler * M + delay`).
    pub fn from_vec(n: usize, m: usize, v: &[C64]) -> Result<Self> {
        if v.len() != n * m {
            return Err(Error::dim(n * m, v.len()));
        }
        Ok(Self(DMatrix::from_fn(n, m, |r, c| v[r * m + c])))
    }

    /// `vec(x^T)`: index `doppler * M + delay`.
    pub fn to_vec(&self) -> Vec<C64> {
        // row-major over an N x M matrix equals column-major over its transpose
        self.0.transpose().as_slice().to_vec()
    }

    /// Impulse at `(doppler, delay)`.
    pub fn impulse(n: usize, m: usize, doppler: usize, delay: usize) -> Self {
        let mut g = Self::zeros(n, m);
        g.0[(doppler, delay)] = C64::new(1.0, 0.0);
        g
    }
}

impl TfGrid {
    /// Builds a grid from `vec(X)` (index `slot * M + subband`).
    pub fn from_vec(m: usize, n: usize, v: &[C64]) -> Result<Self> {
        if v.len() != n * m {
            return Err(Error::dim(n * m, v.len()));
        }
        Ok(Self(DMatrix::from_column_slice(m, n, v)))
    }

    /// `vec(X)`: index `slot * M + subband`.
    pub fn to_vec(&self) -> Vec<C64> {
        self.0.as_slice().to_vec()
    }

    pub fn impulse(m: usize, n: usize, subband: usize, slot: usize) -> Self {
        let mut g = Self::zeros(m, n);
        g.0[(subband, slot)] = C64::new(1.0, 0.0);
        g
    }
}

/// Complex baseband block sampled at `B = M * delta_f`, `M` body samples per
/// slot, each slot optionally preceded by a cyclic prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    samples: Vec<C64>,
    slot_len: usize,
    cp_len: usize,
    sample_rate: f64,
}

impl TimeSignal {
    pub fn new(samples: Vec<C64>, slot_len: usize, cp_len: usize, sample_rate: f64) -> Result<Self> {
        let stride = slot_len + cp_len;
        if slot_len == 0 || !samples.len().is_multiple_of(stride) {
            return Err(Error::dim(format!("a multiple of {stride} samples"), samples.len()));
        }
        Ok(Self {
            samples,
            slot_len,
            cp_len,
            sample_rate,
        })
    }

    pub(crate) fn from_parts(samples: Vec<C64>, slot_len: usize, cp_len: usize, sample_rate: f64) -> Self {
        debug_assert_eq!(samples.len() % (slot_len + cp_len), 0);
        Self {
            samples,
            slot_len,
            cp_len,
            sample_rate,
        }
    }

    pub fn samples(&self) -> &[C64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [C64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<C64> {
        self.samples
    }

    pub fn slot_len(&self) -> usize {
        self.slot_len
    }

    pub fn cp_len(&self) -> usize {
        self.cp_len
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn num_slots(&self) -> usize {
        self.samples.len() / (self.slot_len + self.cp_len)
    }

    /// Body samples of slot `n` (cyclic prefix stripped).
    pub fn slot_body(&self, n: usize) -> &[C64] {
        let start = n * (self.slot_len + self.cp_len) + self.cp_len;
        &self.samples[start..start + self.slot_len]
    }

    /// All body samples, slot after slot.
    pub fn body(&self) -> Vec<C64> {
        (0..self.num_slots())
            .flat_map(|n| self.slot_body(n).iter().copied())
            .collect()
    }

    pub fn body_energy(&self) -> f64 {
        (0..self.num_slots())
            .map(|n| self.slot_body(n).iter().map(|v| v.norm_sqr()).sum::<f64>())
            .sum()
    }

    /// Rebuilds the signal from body samples, regenerating each slot's prefix.
    pub fn from_body(body: &[C64], slot_len: usize, cp_len: usize, sample_rate: f64) -> Result<Self> {
        if slot_len == 0 || !body.len().is_multiple_of(slot_len) {
            return Err(Error::dim(format!("a multiple of {slot_len}"), body.len()));
        }
        if cp_len > slot_len {
            return Err(Error::InvalidParameter(format!(
                "cyclic prefix {cp_len} longer than slot {slot_len}"
            )));
        }
        let mut samples = Vec::with_capacity(body.len() / slot_len * (slot_len + cp_len));
        for slot in body.chunks(slot_len) {
            samples.extend_from_slice(&slot[slot_len - cp_len..]);
            samples.extend_from_slice(slot);
        }
        Ok(Self::from_parts(samples, slot_len, cp_len, sample_rate))
    }

    /// Same body with a new cyclic prefix length.
    pub fn with_cyclic_prefix(&self, cp_len: usize) -> Result<Self> {
        Self::from_body(&self.body(), self.slot_len, cp_len, self.sample_rate)
    }

    /// Hermitian inner product over body samples, `<self, other> = sum self * conj(other)`.
    pub fn inner(&self, other: &TimeSignal) -> C64 {
        self.body()
            .iter()
            .zip(other.body().iter())
            .map(|(a, b)| a * b.conj())
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MappingKind {
    Localized,
    Interleaved,
    Custom,
}

/// A selection of `len` distinct columns of the identity over `ambient`
/// resources, kept as an index list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingMatrix {
    ambient: usize,
    selected: Vec<usize>,
    kind: MappingKind,
}

fn check_divisible(ambient: usize, len: usize, user: usize) -> Result<usize> {
    if len == 0 || ambient == 0 || !ambient.is_multiple_of(len) {
        return Err(Error::InvalidAllocation(format!(
            "{len} resources per user do not tile {ambient}"
        )));
    }
    let users = ambient / len;
    if user >= users {
        return Err(Error::InvalidAllocation(format!(
            "user {user} out of range for {users} users"
        )));
    }
    Ok(users)
}

impl MappingMatrix {
    /// Contiguous block `user * len .. (user + 1) * len`.
    pub fn localized(ambient: usize, len: usize, user: usize) -> Result<Self> {
        check_divisible(ambient, len, user)?;
        Ok(Self {
            ambient,
            selected: (0..len).map(|i| user * len + i).collect(),
            kind: MappingKind::Localized,
        })
    }

    /// Comb `user, user + K, user + 2K, ...` with `K = ambient / len`.
    pub fn interleaved(ambient: usize, len: usize, user: usize) -> Result<Self> {
        let users = check_divisible(ambient, len, user)?;
        Ok(Self {
            ambient,
            selected: (0..len).map(|i| user + i * users).collect(),
            kind: MappingKind::Interleaved,
        })
    }

    pub fn custom(ambient: usize, selected: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; ambient];
        for &i in &selected {
            if i >= ambient {
                return Err(Error::InvalidAllocation(format!("index {i} outside 0..{ambient}")));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidAllocation(format!("index {i} selected twice")));
            }
        }
        if selected.is_empty() {
            return Err(Error::InvalidAllocation("empty selection".into()));
        }
        Ok(Self {
            ambient,
            selected,
            kind: MappingKind::Custom,
        })
    }

    pub fn identity(ambient: usize) -> Self {
        Self {
            ambient,
            selected: (0..ambient).collect(),
            kind: MappingKind::Localized,
        }
    }

    pub fn by_kind(kind: MappingKind, ambient: usize, len: usize, user: usize) -> Result<Self> {
        match kind {
            MappingKind::Localized => Self::localized(ambient, len, user),
            MappingKind::Interleaved => Self::interleaved(ambient, len, user),
            MappingKind::Custom => Err(Error::InvalidAllocation(
                "custom mappings need an explicit index list".into(),
            )),
        }
    }

    pub fn ambient(&self) -> usize {
        self.ambient
    }

    pub fn selected(&self) -> &[usize] {
        &self.selected
    }

    pub fn kind(&self) -> MappingKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// `P v`: scatters `v` onto the selected positions.
    pub fn apply(&self, v: &[C64]) -> Result<Vec<C64>> {
        if v.len() != self.selected.len() {
            return Err(Error::dim(self.selected.len(), v.len()));
        }
        let mut out = vec![C64::new(0.0, 0.0); self.ambient];
        for (&idx, &val) in self.selected.iter().zip(v) {
            out[idx] = val;
        }
        Ok(out)
    }

    /// `P^T w`: gathers the selected positions.
    pub fn extract(&self, w: &[C64]) -> Result<Vec<C64>> {
        if w.len() != self.ambient {
            return Err(Error::dim(self.ambient, w.len()));
        }
        Ok(self.selected.iter().map(|&i| w[i]).collect())
    }

    /// Dense `ambient x len` 0/1 matrix.
    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut p = DMatrix::zeros(self.ambient, self.selected.len());
        for (col, &row) in self.selected.iter().enumerate() {
            p[(row, col)] = C64::new(1.0, 0.0);
        }
        p
    }

    pub fn is_disjoint(&self, other: &MappingMatrix) -> bool {
        !self.selected.iter().any(|i| other.selected.contains(i))
    }
}

/// Frequency (over `M`) and time (over `N`) selections of one user.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserMaps {
    pub freq: MappingMatrix,
    pub time: MappingMatrix,
}

impl UserMaps {
    pub fn full(params: &FrameParams) -> Self {
        Self {
            freq: MappingMatrix::identity(params.m()),
            time: MappingMatrix::identity(params.n()),
        }
    }

    /// `(M_d, N_D)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.freq.len(), self.time.len())
    }

    /// Two users share a TF cell iff both their subband and slot sets intersect.
    pub fn overlaps(&self, other: &UserMaps) -> bool {
        !self.freq.is_disjoint(&other.freq) && !self.time.is_disjoint(&other.time)
    }
}

/// `K_d x K_D` users tiling the grid, each with `M_d x N_D` resources.
#[derive(Debug, Clone, PartialEq)]
pub struct UserAllocation {
    k_d: usize,
    k_dd: usize,
    users: Vec<UserMaps>,
}

impl UserAllocation {
    /// User `u = t * K_d + f` takes frequency share `f` and time share `t`.
    pub fn tiled(
        params: &FrameParams,
        k_d: usize,
        k_dd: usize,
        freq_kind: MappingKind,
        time_kind: MappingKind,
    ) -> Result<Self> {
        if k_d == 0 || k_dd == 0 || !params.m().is_multiple_of(k_d) || !params.n().is_multiple_of(k_dd) {
            return Err(Error::InvalidAllocation(format!(
                "K_d={k_d}, K_D={k_dd} must divide M={}, N={}",
                params.m(),
                params.n()
            )));
        }
        let m_d = params.m() / k_d;
        let n_dd = params.n() / k_dd;
        let mut users = Vec::with_capacity(k_d * k_dd);
        for t in 0..k_dd {
            for f in 0..k_d {
                users.push(UserMaps {
                    freq: MappingMatrix::by_kind(freq_kind, params.m(), m_d, f)?,
                    time: MappingMatrix::by_kind(time_kind, params.n(), n_dd, t)?,
                });
            }
        }
        Ok(Self { k_d, k_dd, users })
    }

    pub fn k_d(&self) -> usize {
        self.k_d
    }

    pub fn k_dd(&self) -> usize {
        self.k_dd
    }

    pub fn users(&self) -> &[UserMaps] {
        &self.users
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn frame_derived_quantities() {
        let f = make_frame(16, 8, 15e3).unwrap();
        assert_eq!(f.dof(), 128);
        assert!((f.delay_resolution() - 1.0 / 240e3).abs() < 1e-18);
        assert!((f.doppler_resolution() - 1875.0).abs() < 1e-9);
        assert!((f.delay_resolution() * f.bandwidth() - 1.0).abs() < 1e-15);
        assert!((f.doppler_resolution() * f.block_duration() - 1.0).abs() < 1e-15);
        assert!((f.slot_duration() * f.delta_f() - 1.0).abs() < 1e-15);

        let one = make_frame(1, 1, 15e3).unwrap();
        assert!((one.slot_duration() - 1.0 / 15e3).abs() < 1e-18);
        assert!((one.delay_resolution() - 1.0 / 15e3).abs() < 1e-18);
        assert!((one.doppler_resolution() - 15e3).abs() < 1e-9);
    }

    #[test]
    fn frame_rejects_bad_arguments() {
        assert!(make_frame(0, 4, 1.0).is_err());
        assert!(make_frame(4, 0, 1.0).is_err());
        assert!(make_frame(4, 4, 0.0).is_err());
        assert!(make_frame(4, 4, -3.0).is_err());
    }

    #[test]
    fn localized_and_interleaved_indices() {
        assert_eq!(MappingMatrix::localized(16, 4, 2).unwrap().selected(), &[8, 9, 10, 11]);
        assert_eq!(
            MappingMatrix::localized(16, 16, 0).unwrap().selected(),
            (0..16).collect::<Vec<_>>().as_slice()
        );
        assert_eq!(MappingMatrix::localized(8, 2, 3).unwrap().selected(), &[6, 7]);

        assert_eq!(
            MappingMatrix::interleaved(16, 4, 2).unwrap().selected(),
            &[2, 6, 10, 14]
        );
        assert_eq!(
            MappingMatrix::interleaved(16, 16, 0).unwrap().selected(),
            (0..16).collect::<Vec<_>>().as_slice()
        );
        assert_eq!(MappingMatrix::interleaved(8, 4, 1).unwrap().selected(), &[1, 3, 5, 7]);
    }

    #[test]
    fn mapping_errors() {
        assert!(MappingMatrix::localized(16, 5, 0).is_err());
        assert!(MappingMatrix::interleaved(16, 4, 4).is_err());
        assert!(MappingMatrix::custom(4, vec![0, 0]).is_err());
        assert!(MappingMatrix::custom(4, vec![4]).is_err());
        let p = MappingMatrix::localized(8, 2, 0).unwrap();
        assert!(p.apply(&[C64::new(1.0, 0.0)]).is_err());
    }

    #[test]
    fn apply_places_values() {
        let p = MappingMatrix::interleaved(16, 4, 2).unwrap();
        let v: Vec<C64> = (1..=4).map(|i| C64::new(i as f64, -(i as f64))).collect();
        let out = p.apply(&v).unwrap();
        for (i, x) in out.iter().enumerate() {
            match i {
                2 => assert_eq!(*x, v[0]),
                6 => assert_eq!(*x, v[1]),
                10 => assert_eq!(*x, v[2]),
                14 => assert_eq!(*x, v[3]),
                _ => assert_eq!(*x, C64::new(0.0, 0.0)),
            }
        }
        let id = MappingMatrix::identity(4);
        assert_eq!(id.apply(&v).unwrap(), v);
    }

    #[test]
    fn dense_form_is_orthonormal_selection() {
        let p = MappingMatrix::interleaved(16, 4, 1).unwrap().to_dense();
        let ptp = p.adjoint() * &p;
        assert_eq!(ptp, DMatrix::identity(4, 4));
    }

    #[test]
    fn tiled_allocation_covers_grid_once() {
        let f = make_frame(16, 8, 1.0).unwrap();
        for (fk, tk) in [
            (MappingKind::Localized, MappingKind::Localized),
            (MappingKind::Interleaved, MappingKind::Interleaved),
        ] {
            let alloc = UserAllocation::tiled(&f, 4, 4, fk, tk).unwrap();
            assert_eq!(alloc.len(), 16);
            let mut hits = vec![0; 128];
            for u in alloc.users() {
                assert_eq!(u.shape(), (4, 2));
                for &m in u.freq.selected() {
                    for &n in u.time.selected() {
                        hits[n * 16 + m] += 1;
                    }
                }
            }
            assert!(hits.iter().all(|&h| h == 1));
            for (i, a) in alloc.users().iter().enumerate() {
                for b in &alloc.users()[i + 1..] {
                    assert!(!a.overlaps(b));
                }
            }
        }
        assert!(UserAllocation::tiled(&f, 3, 4, MappingKind::Localized, MappingKind::Localized).is_err());
    }

    #[test]
    fn grid_vectorisation_orders() {
        let dd = DdGrid::from_matrix(DMatrix::from_fn(2, 3, |r, c| C64::new((r * 3 + c) as f64, 0.0)));
        let v = dd.to_vec();
        assert_eq!(
            v.iter().map(|z| z.re as usize).collect::<Vec<_>>(),
            vec![0, 1, 2, 3, 4, 5]
        );
        assert_eq!(DdGrid::from_vec(2, 3, &v).unwrap(), dd);
        let tf = TfGrid::from_matrix(DMatrix::from_fn(3, 2, |r, c| C64::new((c * 3 + r) as f64, 0.0)));
        let w = tf.to_vec();
        assert_eq!(
            w.iter().map(|z| z.re as usize).collect::<Vec<_>>(),
            vec![0, 1, 2, 3, 4, 5]
        );
    }

    #[test]
    fn cyclic_prefix_layout() {
        let body: Vec<C64> = (0..8).map(|i| C64::new(i as f64, 0.0)).collect();
        let s = TimeSignal::from_body(&body, 4, 2, 1.0).unwrap();
        let re: Vec<f64> = s.samples().iter().map(|z| z.re).collect();
        assert_eq!(re, vec![2., 3., 0., 1., 2., 3., 6., 7., 4., 5., 6., 7.]);
        assert_eq!(s.body(), body);
        assert_eq!(s.num_slots(), 2);
        assert!(TimeSignal::new(vec![C64::new(0.0, 0.0); 5], 4, 0, 1.0).is_err());
    }

    proptest! {
        #[test]
        fn extract_inverts_apply(ambient_pow in 0u32..6, len_pow in 0u32..6, user_seed in 0usize..64,
                                  vals in proptest::collection::vec(-1.0f64..1.0, 64)) {
            let ambient = 1usize << ambient_pow;
            let len = 1usize << len_pow.min(ambient_pow);
            let user = user_seed % (ambient / len);
            for p in [MappingMatrix::localized(ambient, len, user).unwrap(),
                      MappingMatrix::interleaved(ambient, len, user).unwrap()] {
                let v: Vec<C64> = (0..len).map(|i| C64::new(vals[i], vals[63 - i])).collect();
                prop_assert_eq!(p.extract(&p.apply(&v).unwrap()).unwrap(), v.clone());
                // any other user's extraction of this user's signal is exactly zero
                for other in 0..ambient / len {
                    if other == user { continue; }
                    let q = MappingMatrix::by_kind(p.kind(), ambient, len, other).unwrap();
                    prop_assert!(q.extract(&p.apply(&v).unwrap()).unwrap().iter().all(|z| *z == C64::new(0.0, 0.0)));
                }
            }
        }
    }
}
