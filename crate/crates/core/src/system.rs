//! First-order formulation `(D_t - H(t)) rho u = -pi_1^* v` and the projection
//! algebra around it.
//!
//! Operators act on pairs of grid functions in the reduced variables.
//! Adjoints are taken with respect to the fixed inner product `(.|.)_0`
//! weighted by `|h_0|^{1/2}`.

use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{KgError, Result};
use crate::grid::{sobolev_norm_sq, unitary_fft, GridFunction, SpacetimeFunction, SpatialGrid, C64};
use crate::model::ReducedModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    pub fn value(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Sign::Plus => Sign::Minus,
            Sign::Minus => Sign::Plus,
        }
    }
}

/// A pair of grid functions: Cauchy data `(u, i^{-1} d_t u)` or diagonalized data.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoComponent {
    pub c0: GridFunction,
    pub c1: GridFunction,
}

impl TwoComponent {
    pub fn new(c0: GridFunction, c1: GridFunction) -> Result<Self> {
        if c0.grid() != c1.grid() {
            return Err(KgError::SizeMismatch {
                expected: c0.grid().len(),
                got: c1.grid().len(),
            });
        }
        Ok(Self { c0, c1 })
    }

    pub fn zeros(grid: SpatialGrid) -> Self {
        Self {
            c0: GridFunction::zeros(grid),
            c1: GridFunction::zeros(grid),
        }
    }

    pub fn grid(&self) -> SpatialGrid {
        self.c0.grid()
    }

    /// Stacked `[c0; c1]`.
    pub fn to_vec(&self) -> Vec<C64> {
        let mut v = self.c0.values().to_vec();
        v.extend_from_slice(self.c1.values());
        v
    }

    pub fn from_vec(grid: SpatialGrid, v: &[C64]) -> Result<Self> {
        let n = grid.len();
        if v.len() != 2 * n {
            return Err(KgError::SizeMismatch {
                expected: 2 * n,
                got: v.len(),
            });
        }
        Ok(Self {
            c0: GridFunction::new(grid, v[..n].to_vec())?,
            c1: GridFunction::new(grid, v[n..].to_vec())?,
        })
    }

    pub fn sub(&self, other: &TwoComponent) -> Result<Self> {
        Self::new(self.c0.sub(&other.c0)?, self.c1.sub(&other.c1)?)
    }

    pub fn max_abs(&self) -> f64 {
        self.c0.max_abs().max(self.c1.max_abs())
    }
}

/// `sqrt(||f0||_{H^m}^2 + ||f1||_{H^m}^2)`.
pub fn hnorm(f: &TwoComponent, m: f64) -> f64 {
    (sobolev_norm_sq(&f.c0, m) + sobolev_norm_sq(&f.c1, m)).sqrt()
}

/// One entry of an [`OperatorMatrix`].
#[derive(Debug, Clone)]
pub enum Block {
    Zero,
    Scalar(C64),
    /// Fourier multiplier, symbol listed in FFT order.
    Fourier(Arc<Vec<C64>>),
    /// Dense matrix acting on nodal values.
    Dense(Arc<DMatrix<C64>>),
}

impl Block {
    fn apply(&self, x: &[C64]) -> Vec<C64> {
        match self {
            Block::Zero => vec![C64::new(0.0, 0.0); x.len()],
            Block::Scalar(c) => x.iter().map(|v| c * v).collect(),
            Block::Fourier(sym) => {
                let mut buf = x.to_vec();
                unitary_fft(&mut buf, false);
                for (b, s) in buf.iter_mut().zip(sym.iter()) {
                    *b *= s;
                }
                unitary_fft(&mut buf, true);
                buf
            }
            Block::Dense(m) => {
                let v = nalgebra::DVector::from_column_slice(x);
                (m.as_ref() * v).as_slice().to_vec()
            }
        }
    }

    fn dense(&self, n: usize) -> DMatrix<C64> {
        match self {
            Block::Zero => DMatrix::zeros(n, n),
            Block::Scalar(c) => DMatrix::from_diagonal_element(n, n, *c),
            Block::Dense(m) => m.as_ref().clone(),
            Block::Fourier(_) => {
                let mut out = DMatrix::zeros(n, n);
                let mut e = vec![C64::new(0.0, 0.0); n];
                for j in 0..n {
                    e.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
                    e[j] = C64::new(1.0, 0.0);
                    let col = self.apply(&e);
                    out.column_mut(j).copy_from_slice(&col);
                }
                out
            }
        }
    }

    fn mul(&self, other: &Block, n: usize) -> Block {
        match (self, other) {
            (Block::Zero, _) | (_, Block::Zero) => Block::Zero,
            (Block::Scalar(a), Block::Scalar(b)) => Block::Scalar(a * b),
            (Block::Scalar(a), Block::Fourier(s)) | (Block::Fourier(s), Block::Scalar(a)) => {
                Block::Fourier(Arc::new(s.iter().map(|v| a * v).collect()))
            }
            (Block::Fourier(s), Block::Fourier(t)) => {
                Block::Fourier(Arc::new(s.iter().zip(t.iter()).map(|(a, b)| a * b).collect()))
            }
            (Block::Scalar(a), Block::Dense(m)) | (Block::Dense(m), Block::Scalar(a)) => {
                Block::Dense(Arc::new(m.as_ref() * *a))
            }
            (a, b) => Block::Dense(Arc::new(a.dense(n) * b.dense(n))),
        }
    }

    fn add(&self, other: &Block, n: usize) -> Block {
        match (self, other) {
            (Block::Zero, b) => b.clone(),
            (a, Block::Zero) => a.clone(),
            (Block::Scalar(a), Block::Scalar(b)) => Block::Scalar(a + b),
            (Block::Fourier(s), Block::Fourier(t)) => {
                Block::Fourier(Arc::new(s.iter().zip(t.iter()).map(|(a, b)| a + b).collect()))
            }
            (Block::Scalar(a), Block::Fourier(s)) | (Block::Fourier(s), Block::Scalar(a)) => {
                Block::Fourier(Arc::new(s.iter().map(|v| a + v).collect()))
            }
            (a, b) => Block::Dense(Arc::new(a.dense(n) + b.dense(n))),
        }
    }
}

/// A 2x2 block of spatial operators.
#[derive(Debug, Clone)]
pub struct OperatorMatrix {
    grid: SpatialGrid,
    blocks: [[Block; 2]; 2],
    /// Weight of the reference inner product; `None` means the plain one.
    weight: Option<Arc<Vec<f64>>>,
}

impl OperatorMatrix {
    pub fn new(grid: SpatialGrid, blocks: [[Block; 2]; 2]) -> Self {
        Self {
            grid,
            blocks,
            weight: None,
        }
    }

    pub fn with_weight(mut self, weight: &[f64]) -> Self {
        self.weight = Some(Arc::new(weight.to_vec()));
        self
    }

    pub fn identity(grid: SpatialGrid) -> Self {
        let one = Block::Scalar(C64::new(1.0, 0.0));
        Self::new(grid, [[one.clone(), Block::Zero], [Block::Zero, one]])
    }

    pub fn grid(&self) -> SpatialGrid {
        self.grid
    }

    pub fn block(&self, i: usize, j: usize) -> &Block {
        &self.blocks[i][j]
    }

    pub fn apply(&self, f: &TwoComponent) -> Result<TwoComponent> {
        if f.grid() != self.grid {
            return Err(KgError::SizeMismatch {
                expected: self.grid.len(),
                got: f.grid().len(),
            });
        }
        let x = [f.c0.values(), f.c1.values()];
        let mut out = [Vec::new(), Vec::new()];
        for (i, o) in out.iter_mut().enumerate() {
            let mut acc = self.blocks[i][0].apply(x[0]);
            for (a, b) in acc.iter_mut().zip(self.blocks[i][1].apply(x[1])) {
                *a += b;
            }
            *o = acc;
        }
        let [o0, o1] = out;
        TwoComponent::new(GridFunction::new(self.grid, o0)?, GridFunction::new(self.grid, o1)?)
    }

    /// `self . other`.
    pub fn compose(&self, other: &OperatorMatrix) -> OperatorMatrix {
        let n = self.grid.len();
        let b = |i: usize, j: usize| {
            self.blocks[i][0]
                .mul(&other.blocks[0][j], n)
                .add(&self.blocks[i][1].mul(&other.blocks[1][j], n), n)
        };
        OperatorMatrix {
            grid: self.grid,
            blocks: [[b(0, 0), b(0, 1)], [b(1, 0), b(1, 1)]],
            weight: self.weight.clone().or_else(|| other.weight.clone()),
        }
    }

    pub fn add(&self, other: &OperatorMatrix) -> OperatorMatrix {
        let n = self.grid.len();
        let b = |i: usize, j: usize| self.blocks[i][j].add(&other.blocks[i][j], n);
        OperatorMatrix {
            grid: self.grid,
            blocks: [[b(0, 0), b(0, 1)], [b(1, 0), b(1, 1)]],
            weight: self.weight.clone().or_else(|| other.weight.clone()),
        }
    }

    pub fn scale(&self, c: C64) -> OperatorMatrix {
        let s = OperatorMatrix::new(
            self.grid,
            [[Block::Scalar(c), Block::Zero], [Block::Zero, Block::Scalar(c)]],
        );
        s.compose(self)
    }

    /// Adjoint with respect to the reference inner product.
    pub fn adjoint(&self) -> OperatorMatrix {
        let n = self.grid.len();
        let adj = |b: &Block| -> Block {
            match (b, &self.weight) {
                (Block::Zero, _) => Block::Zero,
                (Block::Scalar(c), _) => Block::Scalar(c.conj()),
                (Block::Fourier(s), None) => Block::Fourier(Arc::new(s.iter().map(|v| v.conj()).collect())),
                (b, w) => {
                    let mut m = b.dense(n).adjoint();
                    if let Some(w) = w {
                        for i in 0..n {
                            for j in 0..n {
                                m[(i, j)] *= w[j] / w[i];
                            }
                        }
                    }
                    Block::Dense(Arc::new(m))
                }
            }
        };
        OperatorMatrix {
            grid: self.grid,
            blocks: [
                [adj(&self.blocks[0][0]), adj(&self.blocks[1][0])],
                [adj(&self.blocks[0][1]), adj(&self.blocks[1][1])],
            ],
            weight: self.weight.clone(),
        }
    }

    /// Dense `2N x 2N` matrix of the operator on stacked nodal values.
    pub fn to_dense(&self) -> DMatrix<C64> {
        let n = self.grid.len();
        let mut out = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..2 {
            for j in 0..2 {
                out.view_mut((i * n, j * n), (n, n))
                    .copy_from(&self.blocks[i][j].dense(n));
            }
        }
        out
    }
}

fn real_block(m: &DMatrix<f64>) -> Block {
    Block::Dense(Arc::new(m.map(|v| C64::new(v, 0.0))))
}

/// `a~(t)` as a block acting on reduced nodal values.
pub fn a_tilde_block(model: &ReducedModel, t: f64) -> Block {
    let s = model.a_tilde_matrix(t);
    let w = model.weight0();
    // z = w^{1/2} u, so a~ = w^{-1/2} S w^{1/2}
    let m = DMatrix::from_fn(s.nrows(), s.ncols(), |i, j| s[(i, j)] * (w[j] / w[i]).sqrt());
    real_block(&m)
}

/// `H(t) = [[0, 1], [a~(t), 0]]`.
pub fn h_of_t(model: &ReducedModel, t: f64) -> OperatorMatrix {
    OperatorMatrix::new(
        model.grid(),
        [
            [Block::Zero, Block::Scalar(C64::new(1.0, 0.0))],
            [a_tilde_block(model, t), Block::Zero],
        ],
    )
    .with_weight(model.weight0())
}

/// `pi^+ = [[1,0],[0,0]]`, `pi^- = [[0,0],[0,1]]`.
pub fn pi_pm(grid: SpatialGrid, sign: Sign) -> OperatorMatrix {
    let one = Block::Scalar(C64::new(1.0, 0.0));
    let blocks = match sign {
        Sign::Plus => [[one, Block::Zero], [Block::Zero, Block::Zero]],
        Sign::Minus => [[Block::Zero, Block::Zero], [Block::Zero, one]],
    };
    OperatorMatrix::new(grid, blocks)
}

/// `q^ad = [[1,0],[0,-1]]`.
pub fn q_ad(grid: SpatialGrid) -> OperatorMatrix {
    pi_pm(grid, Sign::Plus).add(&pi_pm(grid, Sign::Minus).scale(C64::new(-1.0, 0.0)))
}

/// Charge form `q_E = [[0,1],[1,0]]`.
pub fn q_e(grid: SpatialGrid) -> OperatorMatrix {
    let one = Block::Scalar(C64::new(1.0, 0.0));
    OperatorMatrix::new(grid, [[Block::Zero, one.clone()], [one, Block::Zero]])
}

/// Symbol of `-d_x^2 + mass^2`, consistent with the spectral derivative.
pub fn free_symbol(grid: SpatialGrid, mass: f64) -> Vec<f64> {
    grid.derivative_wavenumbers()
        .iter()
        .map(|k| k * k + mass * mass)
        .collect()
}

/// `c^{+-} = (1/2)[[1, +-a^{-1/2}], [+-a^{1/2}, 1]]` for one mode with symbol `a`.
pub fn c_mode(sign: Sign, a: f64) -> [[f64; 2]; 2] {
    let s = sign.value();
    [[0.5, 0.5 * s / a.sqrt()], [0.5 * s * a.sqrt(), 0.5]]
}

/// Spectral projections of `[[0,1],[a,0]]` for a positive Fourier multiplier `a`.
pub fn c_spectral(sign: Sign, grid: SpatialGrid, symbol: &[f64]) -> Result<OperatorMatrix> {
    if symbol.len() != grid.len() {
        return Err(KgError::SizeMismatch {
            expected: grid.len(),
            got: symbol.len(),
        });
    }
    if let Some(a) = symbol.iter().find(|a| !(**a > 0.0)) {
        return Err(KgError::NotPositive(*a));
    }
    let entry = |i: usize, j: usize| {
        Block::Fourier(Arc::new(
            symbol.iter().map(|a| C64::new(c_mode(sign, *a)[i][j], 0.0)).collect(),
        ))
    };
    Ok(OperatorMatrix::new(
        grid,
        [[entry(0, 0), entry(0, 1)], [entry(1, 0), entry(1, 1)]],
    ))
}

/// `(f|g)_0` summed over both components.
pub fn pair0(model: &ReducedModel, f: &TwoComponent, g: &TwoComponent) -> C64 {
    model.inner0(&f.c0, &g.c0) + model.inner0(&f.c1, &g.c1)
}

/// Charge pairing `(f | q_E g)_0`.
pub fn charge_form(model: &ReducedModel, f: &TwoComponent, g: &TwoComponent) -> C64 {
    model.inner0(&f.c0, &g.c1) + model.inner0(&f.c1, &g.c0)
}

/// A field together with its carried momentum `i^{-1} d_t u`.
#[derive(Debug, Clone)]
pub struct CauchyTrajectory {
    pub field: SpacetimeFunction,
    pub momentum: SpacetimeFunction,
}

/// `rho_t u = (u(t), i^{-1} d_t u(t))` at a grid time.
pub fn rho(traj: &CauchyTrajectory, t: f64) -> Result<TwoComponent> {
    let n = traj.field.time().node_index(t)?;
    TwoComponent::new(traj.field.slice(n), traj.momentum.slice(n))
}
