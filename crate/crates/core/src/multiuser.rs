//! Uplink and downlink multiplexing on the TF grid: TF-domain mapping,
//! DD-domain mapping (ISFFT spreading), general TF spreading, downlink
//! superposition, zero-forcing preprocessing and power allocation.
//!
//! User data is an `N_D x M_d` [`DdGrid`]; its canonical vector is
//! `vec(x^T)`. TF signals are `M x N` [`TfGrid`]s with canonical vector
//! `vec(X)`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::channel::EffectiveMatrix;
use crate::error::{Error, Result};
use crate::frame::{DdGrid, FrameParams, TfGrid, UserMaps, C64};
use crate::metrics::papr_over_slots;
use crate::transforms::{dft_matrix, heisenberg, isfft, sfft};

const UNIT_NORM_TOL: f64 = 1e-9;

/// Largest condition number [`zf_precode`] accepts.
pub const ZF_CONDITION_LIMIT: f64 = 1e8;

fn check_unit_columns(s: &DMatrix<C64>, what: &str) -> Result<()> {
    for (j, col) in s.column_iter().enumerate() {
        let norm = col.norm();
        if (norm - 1.0).abs() > UNIT_NORM_TOL {
            return Err(Error::InvalidParameter(format!(
                "{what} column {j} has norm {norm}, expected 1"
            )));
        }
    }
    Ok(())
}

fn normalize_columns(s: &mut DMatrix<C64>) {
    for mut col in s.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= C64::new(norm, 0.0);
        }
    }
}

fn check_data(x: &DdGrid, n_d: usize, m_d: usize) -> Result<()> {
    if x.rows() != n_d || x.cols() != m_d {
        return Err(Error::dim(
            format!("{n_d}x{m_d} user block"),
            format!("{}x{}", x.rows(), x.cols()),
        ));
    }
    Ok(())
}

fn check_grid(y: &TfGrid, m: usize, n: usize) -> Result<()> {
    if y.rows() != m || y.cols() != n {
        return Err(Error::dim(
            format!("{m}x{n} TF grid"),
            format!("{}x{}", y.rows(), y.cols()),
        ));
    }
    Ok(())
}

fn check_maps(maps: &UserMaps, params: &FrameParams) -> Result<()> {
    if maps.freq.ambient() != params.m() || maps.time.ambient() != params.n() {
        return Err(Error::dim(
            format!("maps over {}x{}", params.m(), params.n()),
            format!("maps over {}x{}", maps.freq.ambient(), maps.time.ambient()),
        ));
    }
    Ok(())
}

fn gaussian_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<C64> {
    DMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = StandardNormal.sample(rng);
        let im: f64 = StandardNormal.sample(rng);
        C64::new(re, im)
    })
}

/// Separable spreading `X = S_A x^T S_B^T` with `S_A: M x M_d`, `S_B: N x N_D`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpreadingPair {
    a: DMatrix<C64>,
    b: DMatrix<C64>,
}

impl SpreadingPair {
    pub fn new(a: DMatrix<C64>, b: DMatrix<C64>) -> Result<Self> {
        check_unit_columns(&a, "S_A")?;
        check_unit_columns(&b, "S_B")?;
        Ok(Self { a, b })
    }

    /// Selected DFT columns: `S_A = F_M P_f`, `S_B^T = P_t^T F_N^H`.
    pub fn isfft(maps: &UserMaps) -> Self {
        let a = dft_matrix(maps.freq.ambient()).select_columns(maps.freq.selected());
        let b = dft_matrix(maps.time.ambient())
            .select_columns(maps.time.selected())
            .map(|v| v.conj());
        Self { a, b }
    }

    /// The 0/1 mapping matrices themselves (plain resource mapping).
    pub fn mapping(maps: &UserMaps) -> Self {
        Self {
            a: maps.freq.to_dense(),
            b: maps.time.to_dense(),
        }
    }

    /// Complex Gaussian spreaders with unit-norm columns.
    pub fn random_gaussian<R: Rng + ?Sized>(m: usize, m_d: usize, n: usize, n_d: usize, rng: &mut R) -> Self {
        let mut a = gaussian_matrix(m, m_d, rng);
        let mut b = gaussian_matrix(n, n_d, rng);
        normalize_columns(&mut a);
        normalize_columns(&mut b);
        Self { a, b }
    }

    pub fn a(&self) -> &DMatrix<C64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<C64> {
        &self.b
    }

    /// `(N_D, M_d)`, the user block shape.
    pub fn data_shape(&self) -> (usize, usize) {
        (self.b.ncols(), self.a.ncols())
    }

    /// `(M, N)`.
    pub fn grid_shape(&self) -> (usize, usize) {
        (self.a.nrows(), self.b.nrows())
    }
}

/// Arbitrary `MN x (M_d N_D)` spreading matrix acting on `vec(x^T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneralSpreader {
    s: DMatrix<C64>,
    grid: (usize, usize),
    data: (usize, usize),
}

impl GeneralSpreader {
    /// `grid = (M, N)`, `data = (N_D, M_d)`.
    pub fn new(s: DMatrix<C64>, grid: (usize, usize), data: (usize, usize)) -> Result<Self> {
        if s.nrows() != grid.0 * grid.1 || s.ncols() != data.0 * data.1 {
            return Err(Error::dim(
                format!("{}x{}", grid.0 * grid.1, data.0 * data.1),
                format!("{}x{}", s.nrows(), s.ncols()),
            ));
        }
        check_unit_columns(&s, "spreader")?;
        Ok(Self { s, grid, data })
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.s
    }

    pub fn grid_shape(&self) -> (usize, usize) {
        self.grid
    }

    pub fn data_shape(&self) -> (usize, usize) {
        self.data
    }
}

/// `S = S_B kron S_A`, so that `S vec(x^T) = vec(S_A x^T S_B^T)`.
pub fn kron_spreader(pair: &SpreadingPair) -> GeneralSpreader {
    GeneralSpreader {
        s: pair.b.kronecker(&pair.a),
        grid: pair.grid_shape(),
        data: pair.data_shape(),
    }
}

/// `S v` for a user data vector `v = vec(x^T)`.
pub fn spread_vec(data: &[C64], s: &GeneralSpreader) -> Result<Vec<C64>> {
    if data.len() != s.s.ncols() {
        return Err(Error::dim(s.s.ncols(), data.len()));
    }
    Ok((&s.s * DVector::from_column_slice(data)).as_slice().to_vec())
}

/// `X = P_f F_{M_d} x^T F_{N_D}^H P_t`: a small ISFFT placed on the user's
/// subbands and slots.
pub fn uplink_map_tf(x: &DdGrid, maps: &UserMaps) -> Result<TfGrid> {
    let (m_d, n_d) = maps.shape();
    check_data(x, n_d, m_d)?;
    let inner = isfft(x);
    let mut out = TfGrid::zeros(maps.freq.ambient(), maps.time.ambient());
    for (i, &f) in maps.freq.selected().iter().enumerate() {
        for (j, &t) in maps.time.selected().iter().enumerate() {
            out.set(f, t, inner.get(i, j));
        }
    }
    Ok(out)
}

/// `X = F_M P_f x^T P_t F_N^H`: placement on the full DD grid, then the
/// full ISFFT.
pub fn uplink_map_dd(x: &DdGrid, maps: &UserMaps, params: &FrameParams) -> Result<TfGrid> {
    check_maps(maps, params)?;
    let (m_d, n_d) = maps.shape();
    check_data(x, n_d, m_d)?;
    let mut dd = DdGrid::zeros(params.n(), params.m());
    for (i, &f) in maps.freq.selected().iter().enumerate() {
        for (j, &t) in maps.time.selected().iter().enumerate() {
            dd.set(t, f, x.get(j, i));
        }
    }
    Ok(isfft(&dd))
}

/// The selected-column form of [`uplink_map_dd`]:
/// `F_M[:, f] x^T (F_N[:, t])^H`.
pub fn uplink_map_dd_selected(x: &DdGrid, maps: &UserMaps) -> Result<TfGrid> {
    let (m_d, n_d) = maps.shape();
    check_data(x, n_d, m_d)?;
    let fa = dft_matrix(maps.freq.ambient()).select_columns(maps.freq.selected());
    let fb = dft_matrix(maps.time.ambient()).select_columns(maps.time.selected());
    Ok(TfGrid::from_matrix(fa * x.as_matrix().transpose() * fb.adjoint()))
}

/// `X = S_A x^T S_B^T`.
pub fn tf_spread(x: &DdGrid, pair: &SpreadingPair) -> Result<TfGrid> {
    let (n_d, m_d) = pair.data_shape();
    check_data(x, n_d, m_d)?;
    Ok(TfGrid::from_matrix(
        &pair.a * x.as_matrix().transpose() * pair.b.transpose(),
    ))
}

/// Where the real power weights enter the pure TF allocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaPlacement {
    /// `N_D x N_D` diagonal between `x^T` and the time map: one weight per
    /// allocated slot.
    #[default]
    AsWritten,
    /// One weight per symbol, indexed like `vec(x^T)`.
    PerSymbol,
}

/// Amplitude weights `beta` of one user.
#[derive(Debug, Clone, PartialEq)]
pub struct PowerWeights {
    pub placement: BetaPlacement,
    pub weights: Vec<f64>,
}

impl PowerWeights {
    pub fn unit(placement: BetaPlacement, m_d: usize, n_d: usize) -> Self {
        let len = match placement {
            BetaPlacement::AsWritten => n_d,
            BetaPlacement::PerSymbol => m_d * n_d,
        };
        Self {
            placement,
            weights: vec![1.0; len],
        }
    }

    fn check(&self, m_d: usize, n_d: usize) -> Result<()> {
        let len = match self.placement {
            BetaPlacement::AsWritten => n_d,
            BetaPlacement::PerSymbol => m_d * n_d,
        };
        if self.weights.len() != len {
            return Err(Error::dim(format!("{len} power weights"), self.weights.len()));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::InvalidParameter("non-finite power weight".into()));
        }
        Ok(())
    }

    /// Weight applied to symbol `x^T[i, j]`.
    fn at(&self, i: usize, j: usize, m_d: usize) -> f64 {
        match self.placement {
            BetaPlacement::AsWritten => self.weights[j],
            BetaPlacement::PerSymbol => self.weights[j * m_d + i],
        }
    }
}

/// `X = P_f x^T beta P_t`: the symbols are placed directly on the user's TF
/// cells with real amplitude weights.
pub fn tf_alloc(x: &DdGrid, maps: &UserMaps, beta: &PowerWeights) -> Result<TfGrid> {
    let (m_d, n_d) = maps.shape();
    check_data(x, n_d, m_d)?;
    beta.check(m_d, n_d)?;
    let mut out = TfGrid::zeros(maps.freq.ambient(), maps.time.ambient());
    for (i, &f) in maps.freq.selected().iter().enumerate() {
        for (j, &t) in maps.time.selected().iter().enumerate() {
            out.set(f, t, x.get(j, i) * beta.at(i, j, m_d));
        }
    }
    Ok(out)
}

/// How one user's block reaches the TF grid.
#[derive(Debug, Clone, PartialEq)]
pub enum UserRoute {
    TfMapped(UserMaps),
    DdMapped(UserMaps),
    Pair(SpreadingPair),
    General(GeneralSpreader),
    TfAlloc(UserMaps, PowerWeights),
}

impl UserRoute {
    /// `(N_D, M_d)`.
    pub fn data_shape(&self) -> (usize, usize) {
        match self {
            UserRoute::TfMapped(m) | UserRoute::DdMapped(m) | UserRoute::TfAlloc(m, _) => {
                let (m_d, n_d) = m.shape();
                (n_d, m_d)
            }
            UserRoute::Pair(p) => p.data_shape(),
            UserRoute::General(g) => g.data_shape(),
        }
    }

    pub fn data_len(&self) -> usize {
        let (a, b) = self.data_shape();
        a * b
    }

    /// `(M, N)`.
    pub fn grid_shape(&self) -> (usize, usize) {
        match self {
            UserRoute::TfMapped(m) | UserRoute::DdMapped(m) | UserRoute::TfAlloc(m, _) => {
                (m.freq.ambient(), m.time.ambient())
            }
            UserRoute::Pair(p) => p.grid_shape(),
            UserRoute::General(g) => g.grid_shape(),
        }
    }

    fn check_params(&self, params: &FrameParams) -> Result<()> {
        let (m, n) = self.grid_shape();
        if (m, n) != (params.m(), params.n()) {
            return Err(Error::dim(
                format!("route over {}x{}", params.m(), params.n()),
                format!("route over {m}x{n}"),
            ));
        }
        Ok(())
    }

    pub fn spread(&self, x: &DdGrid, params: &FrameParams) -> Result<TfGrid> {
        self.check_params(params)?;
        match self {
            UserRoute::TfMapped(m) => uplink_map_tf(x, m),
            UserRoute::DdMapped(m) => uplink_map_dd(x, m, params),
            UserRoute::Pair(p) => tf_spread(x, p),
            UserRoute::General(g) => {
                let (n_d, m_d) = g.data_shape();
                check_data(x, n_d, m_d)?;
                TfGrid::from_vec(params.m(), params.n(), &spread_vec(&x.to_vec(), g)?)
            }
            UserRoute::TfAlloc(m, beta) => tf_alloc(x, m, beta),
        }
    }

    /// Adjoint of [`UserRoute::spread`].
    pub fn despread(&self, y: &TfGrid, params: &FrameParams) -> Result<DdGrid> {
        self.check_params(params)?;
        check_grid(y, params.m(), params.n())?;
        let (n_d, m_d) = self.data_shape();
        match self {
            UserRoute::TfMapped(maps) => {
                let mut inner = TfGrid::zeros(m_d, n_d);
                for (i, &f) in maps.freq.selected().iter().enumerate() {
                    for (j, &t) in maps.time.selected().iter().enumerate() {
                        inner.set(i, j, y.get(f, t));
                    }
                }
                Ok(sfft(&inner))
            }
            UserRoute::DdMapped(maps) => {
                let g = sfft(y);
                let mut out = DdGrid::zeros(n_d, m_d);
                for (i, &f) in maps.freq.selected().iter().enumerate() {
                    for (j, &t) in maps.time.selected().iter().enumerate() {
                        out.set(j, i, g.get(t, f));
                    }
                }
                Ok(out)
            }
            UserRoute::Pair(p) => {
                let xt = p.a.adjoint() * y.as_matrix() * p.b.map(|v| v.conj());
                Ok(DdGrid::from_matrix(xt.transpose()))
            }
            UserRoute::General(g) => {
                let v = g.s.adjoint() * DVector::from_column_slice(&y.to_vec());
                DdGrid::from_vec(n_d, m_d, v.as_slice())
            }
            UserRoute::TfAlloc(maps, beta) => {
                let mut out = DdGrid::zeros(n_d, m_d);
                for (i, &f) in maps.freq.selected().iter().enumerate() {
                    for (j, &t) in maps.time.selected().iter().enumerate() {
                        out.set(j, i, y.get(f, t) * beta.at(i, j, m_d));
                    }
                }
                Ok(out)
            }
        }
    }

    /// Least-squares left inverse of [`UserRoute::spread`]. Equal to
    /// [`UserRoute::despread`] for the DFT and mapping routes; weighted TF
    /// allocations divide their weights out and general spreaders use a
    /// pseudo-inverse.
    pub fn recover(&self, y: &TfGrid, params: &FrameParams) -> Result<DdGrid> {
        let pinv = |s: &DMatrix<C64>| {
            s.clone()
                .pseudo_inverse(1e-12)
                .map_err(|e| Error::InvalidParameter(e.to_string()))
        };
        match self {
            UserRoute::Pair(p) => {
                self.check_params(params)?;
                check_grid(y, params.m(), params.n())?;
                let xt = pinv(&p.a)? * y.as_matrix() * pinv(&p.b)?.transpose();
                Ok(DdGrid::from_matrix(xt.transpose()))
            }
            UserRoute::General(g) => {
                self.check_params(params)?;
                check_grid(y, params.m(), params.n())?;
                let (n_d, m_d) = self.data_shape();
                let v = pinv(&g.s)? * DVector::from_column_slice(&y.to_vec());
                DdGrid::from_vec(n_d, m_d, v.as_slice())
            }
            UserRoute::TfAlloc(maps, beta) => {
                let (n_d, m_d) = self.data_shape();
                self.check_params(params)?;
                check_grid(y, params.m(), params.n())?;
                let mut out = DdGrid::zeros(n_d, m_d);
                for (i, &f) in maps.freq.selected().iter().enumerate() {
                    for (j, &t) in maps.time.selected().iter().enumerate() {
                        let w = beta.at(i, j, m_d);
                        if w == 0.0 {
                            return Err(Error::ZeroGain { row: f, col: t });
                        }
                        out.set(j, i, y.get(f, t) / w);
                    }
                }
                Ok(out)
            }
            _ => self.despread(y, params),
        }
    }

    /// Dense `MN x (M_d N_D)` matrix from `vec(x^T)` to `vec(X)`.
    pub fn matrix(&self, params: &FrameParams) -> Result<DMatrix<C64>> {
        if let UserRoute::General(g) = self {
            self.check_params(params)?;
            return Ok(g.s.clone());
        }
        let (n_d, m_d) = self.data_shape();
        let d = n_d * m_d;
        let mut out = DMatrix::zeros(params.dof(), d);
        let mut e = vec![C64::new(0.0, 0.0); d];
        for c in 0..d {
            e[c] = C64::new(1.0, 0.0);
            let x = self.spread(&DdGrid::from_vec(n_d, m_d, &e)?, params)?;
            e[c] = C64::new(0.0, 0.0);
            out.column_mut(c).iter_mut().zip(x.to_vec()).for_each(|(o, v)| *o = v);
        }
        Ok(out)
    }

    /// TF cells (as `vec(X)` indices `n M + m`) the route can excite, for
    /// routes confined to their own allocation.
    pub fn tf_cells(&self) -> Option<Vec<usize>> {
        match self {
            UserRoute::TfMapped(maps) | UserRoute::TfAlloc(maps, _) => {
                let m = maps.freq.ambient();
                let mut cells = Vec::with_capacity(maps.freq.len() * maps.time.len());
                for &t in maps.time.selected() {
                    for &f in maps.freq.selected() {
                        cells.push(t * m + f);
                    }
                }
                Some(cells)
            }
            _ => None,
        }
    }

    /// Slots carrying this user's energy.
    pub fn active_slots(&self) -> Vec<usize> {
        match self {
            UserRoute::TfMapped(maps) | UserRoute::TfAlloc(maps, _) => {
                let mut s = maps.time.selected().to_vec();
                s.sort_unstable();
                s
            }
            _ => (0..self.grid_shape().1).collect(),
        }
    }
}

/// PAPR of one user's transmitted waveform, measured over the slots the user
/// occupies (no prefix).
pub fn user_papr(x: &TfGrid, route: &UserRoute, params: &FrameParams) -> Result<f64> {
    let s = heisenberg(x, params, 0)?;
    papr_over_slots(&s, &route.active_slots())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DownlinkMode {
    /// Every user mapped on the DD grid, one shared ISFFT.
    DdMapped,
    /// Per-user separable or general spreading.
    TfSpread,
    /// Disjoint weighted TF allocations.
    TfAlloc,
}

/// Sum of the per-user TF contributions. Routes must match `mode`; in
/// [`DownlinkMode::TfAlloc`] the allocations must not share a cell.
pub fn downlink_superpose(
    blocks: &[DdGrid],
    routes: &[UserRoute],
    params: &FrameParams,
    mode: DownlinkMode,
) -> Result<TfGrid> {
    if blocks.len() != routes.len() {
        return Err(Error::dim(format!("{} user blocks", routes.len()), blocks.len()));
    }
    for (k, r) in routes.iter().enumerate() {
        let ok = matches!(
            (mode, r),
            (DownlinkMode::DdMapped, UserRoute::DdMapped(_))
                | (DownlinkMode::TfSpread, UserRoute::Pair(_) | UserRoute::General(_))
                | (DownlinkMode::TfAlloc, UserRoute::TfAlloc(..))
        );
        if !ok {
            return Err(Error::Config(format!(
                "user {k} route does not fit downlink mode {mode:?}"
            )));
        }
    }
    if mode == DownlinkMode::TfAlloc {
        for (a, ra) in routes.iter().enumerate() {
            for (b, rb) in routes.iter().enumerate().skip(a + 1) {
                if let (UserRoute::TfAlloc(ma, _), UserRoute::TfAlloc(mb, _)) = (ra, rb) {
                    if ma.overlaps(mb) {
                        return Err(Error::Config(format!("TF allocations of users {a} and {b} overlap")));
                    }
                }
            }
        }
    }
    if mode == DownlinkMode::DdMapped {
        // place everyone on one DD grid, then a single ISFFT
        let mut dd = DdGrid::zeros(params.n(), params.m());
        for (x, r) in blocks.iter().zip(routes) {
            let UserRoute::DdMapped(maps) = r else { unreachable!() };
            check_maps(maps, params)?;
            let (m_d, n_d) = maps.shape();
            check_data(x, n_d, m_d)?;
            for (i, &f) in maps.freq.selected().iter().enumerate() {
                for (j, &t) in maps.time.selected().iter().enumerate() {
                    dd.set(t, f, dd.get(t, f) + x.get(j, i));
                }
            }
        }
        return Ok(isfft(&dd));
    }
    let mut sum = DMatrix::zeros(params.m(), params.n());
    for (x, r) in blocks.iter().zip(routes) {
        sum += r.spread(x, params)?.into_matrix();
    }
    Ok(TfGrid::from_matrix(sum))
}

/// Transmit preprocessing `P = P' beta` with `P' = H^-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecodeSet {
    p: DMatrix<C64>,
    beta: Vec<f64>,
    blocks: Vec<Range<usize>>,
    condition: f64,
}

impl PrecodeSet {
    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.p
    }

    /// Column amplitude weights (the diagonal of `beta`).
    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn blocks(&self) -> &[Range<usize>] {
        &self.blocks
    }

    /// 2-norm condition number of the inverted matrix.
    pub fn condition(&self) -> f64 {
        self.condition
    }

    /// The columns `P^(k)` of user `k`.
    pub fn user_block(&self, k: usize) -> DMatrix<C64> {
        let r = self.blocks[k].clone();
        self.p.columns(r.start, r.len()).into_owned()
    }

    pub fn precode(&self, x: &[C64]) -> Result<Vec<C64>> {
        if x.len() != self.p.ncols() {
            return Err(Error::dim(self.p.ncols(), x.len()));
        }
        Ok((&self.p * DVector::from_column_slice(x)).as_slice().to_vec())
    }

    /// `max |H P - diag(beta)|`.
    pub fn residual(&self, h: &DMatrix<C64>) -> f64 {
        let mut hp = h * &self.p;
        for (i, b) in self.beta.iter().enumerate() {
            hp[(i, i)] -= C64::new(*b, 0.0);
        }
        hp.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Expected transmit energy `||P||_F^2` for unit-energy i.i.d. symbols.
    pub fn transmit_power(&self) -> f64 {
        self.p.norm_squared()
    }
}

fn partition_ranges(partition: &[usize], dim: usize) -> Result<Vec<Range<usize>>> {
    if partition.iter().sum::<usize>() != dim || partition.contains(&0) {
        return Err(Error::InvalidAllocation(format!(
            "user blocks {partition:?} do not partition {dim} dimensions"
        )));
    }
    let mut start = 0;
    Ok(partition
        .iter()
        .map(|&len| {
            let r = start..start + len;
            start += len;
            r
        })
        .collect())
}

/// Zero-forcing preprocessing with one common amplitude so that the expected
/// transmit power equals `power_budget`.
pub fn zf_precode(h: &EffectiveMatrix, partition: &[usize], power_budget: f64) -> Result<PrecodeSet> {
    zf_precode_weighted(h, partition, &vec![1.0; partition.len()], power_budget)
}

/// As [`zf_precode`], with user `k`'s power proportional to `user_power[k]`.
pub fn zf_precode_weighted(
    h: &EffectiveMatrix,
    partition: &[usize],
    user_power: &[f64],
    power_budget: f64,
) -> Result<PrecodeSet> {
    let hm = &h.matrix;
    if !hm.is_square() {
        return Err(Error::dim(
            "square effective matrix",
            format!("{}x{}", hm.nrows(), hm.ncols()),
        ));
    }
    if !(power_budget > 0.0) {
        return Err(Error::InvalidParameter(format!("power budget {power_budget}")));
    }
    if user_power.len() != partition.len() || user_power.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::InvalidParameter(
            "one non-negative power per user required".into(),
        ));
    }
    let blocks = partition_ranges(partition, hm.nrows())?;
    let sv = hm.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(condition <= ZF_CONDITION_LIMIT) {
        return Err(Error::IllConditioned {
            condition,
            limit: ZF_CONDITION_LIMIT,
        });
    }
    let inv = hm.clone().try_inverse().ok_or(Error::IllConditioned {
        condition,
        limit: ZF_CONDITION_LIMIT,
    })?;
    // beta_j = c sqrt(w_k) for column j of user k, with sum_j beta_j^2 ||p'_j||^2 = budget
    let col_energy: Vec<f64> = inv.column_iter().map(|c| c.norm_squared()).collect();
    let mut raw = vec![0.0; hm.ncols()];
    for (k, r) in blocks.iter().enumerate() {
        for j in r.clone() {
            raw[j] = user_power[k].sqrt();
        }
    }
    let energy: f64 = raw.iter().zip(&col_energy).map(|(b, e)| b * b * e).sum();
    if energy == 0.0 {
        return Err(Error::InvalidParameter("all user powers are zero".into()));
    }
    let c = (power_budget / energy).sqrt();
    let beta: Vec<f64> = raw.iter().map(|b| b * c).collect();
    let mut p = inv;
    for (j, mut col) in p.column_iter_mut().enumerate() {
        col *= C64::new(beta[j], 0.0);
    }
    Ok(PrecodeSet {
        p,
        beta,
        blocks,
        condition,
    })
}

/// Water-filling `p_i = max(0, mu - noise_var / g_i)` with `sum p_i = total_power`.
pub fn water_fill(gains: &[f64], total_power: f64, noise_var: f64) -> Result<Vec<f64>> {
    if gains.is_empty() {
        return Err(Error::InvalidParameter("water-filling needs at least one gain".into()));
    }
    if gains.iter().any(|g| !(*g > 0.0) || !g.is_finite()) {
        return Err(Error::InvalidParameter("channel gains must be positive".into()));
    }
    if !(total_power > 0.0) || !(noise_var >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "total power {total_power}, noise variance {noise_var}"
        )));
    }
    let floor: Vec<f64> = gains.iter().map(|g| noise_var / g).collect();
    let filled = |mu: f64| floor.iter().map(|f| (mu - f).max(0.0)).sum::<f64>();
    let mut lo = 0.0;
    let mut hi = total_power + floor.iter().cloned().fold(0.0, f64::max);
    while hi - lo > 1e-10 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if filled(mid) > total_power {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    // refine on the active set so the budget is met to rounding
    let mu0 = 0.5 * (lo + hi);
    let active: Vec<usize> = (0..floor.len()).filter(|&i| floor[i] < mu0).collect();
    let mu = (total_power + active.iter().map(|&i| floor[i]).sum::<f64>()) / active.len() as f64;
    Ok(floor.iter().map(|f| (mu - f).max(0.0)).collect())
}
