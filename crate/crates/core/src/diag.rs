//! Zeroth-order diagonalization of `H(t)`.
//!
//! With `eps = a~^{1/2}` and `E^{+-} = eps^{+-1/2}`,
//! `T = 2^{-1/2} [[E^-, E^-], [E^+, -E^+]]` gives `T^{-1} H T = diag(eps, -eps)`
//! exactly. The remainder `V^ad = -T^{-1} D_t T = i K` with
//! `K = T^{-1} d_t T = [[A, B], [B, A]]`, where
//! `A = (E^+ dE^- + E^- dE^+)/2` is antisymmetric and
//! `B = (E^+ dE^- - E^- dE^+)/2` is symmetric. In the eigenbasis of `a~(t)`
//! both have closed forms in terms of the eigenvalues and `Q^T (d_t a~) Q`.
//!
//! The frame is not smoothing in `x`: only the decay in `t` of the remainder
//! is used downstream.
//!
//! All matrices here act on the `z` coordinates of [`ReducedModel`].

use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{KgError, Result};
use crate::grid::C64;
use crate::linalg::{real_matvec, SymEig};
use crate::model::{DecayFit, ReducedModel};
use crate::system::{Block, OperatorMatrix};

/// Symmetric positive eigendecomposition of `a~(t)`, failing outside the
/// validated regime.
pub fn a_tilde_eig(model: &ReducedModel, t: f64) -> Result<SymEig> {
    let eig = SymEig::new(&model.a_tilde_matrix(t));
    let lo = eig.min_eigenvalue();
    if !(lo > 0.0) {
        return Err(KgError::NotPositive(lo));
    }
    Ok(eig)
}

/// `eps(t) = a~(t)^{1/2}` as a block acting on reduced nodal values.
///
/// For coefficients independent of `x` this is an exact Fourier multiplier;
/// otherwise it comes from the dense eigendecomposition.
pub fn sqrt_a(model: &ReducedModel, t: f64) -> Result<Block> {
    let grid = model.grid();
    if model.base().is_homogeneous() {
        let s = model.base().sample(t, 0.0);
        let q = model.scalar_term(t)[0];
        let sym: Vec<f64> = grid
            .derivative_wavenumbers()
            .iter()
            .map(|k| k * k / s.h + s.v + q)
            .collect();
        if let Some(a) = sym.iter().find(|a| !(**a > 0.0)) {
            return Err(KgError::NotPositive(*a));
        }
        return Ok(Block::Fourier(Arc::new(
            sym.iter().map(|a| C64::new(a.sqrt(), 0.0)).collect(),
        )));
    }
    let eig = a_tilde_eig(model, t)?;
    let m = eig.matrix_fn(f64::sqrt);
    Ok(weighted_block(model, &m))
}

/// Dense block for a `z`-coordinate matrix acting on reduced values.
fn weighted_block(model: &ReducedModel, m: &DMatrix<f64>) -> Block {
    let w = model.weight0();
    Block::Dense(Arc::new(DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| {
        C64::new(m[(i, j)] * (w[j] / w[i]).sqrt(), 0.0)
    })))
}

/// The frame at one time: eigendecomposition of `a~(t)` and the remainder.
#[derive(Debug, Clone)]
pub struct DiagFrame {
    t: f64,
    eig: SymEig,
    /// `(A, B)`; `None` for a stationary model.
    remainder: Option<(DMatrix<f64>, DMatrix<f64>)>,
}

/// Build `T(t)`, `H^d(t)` and `V^ad(t)`.
pub fn build_frame(model: &ReducedModel, t: f64) -> Result<DiagFrame> {
    let eig = a_tilde_eig(model, t)?;
    let remainder = if model.is_stationary() {
        None
    } else {
        Some(remainder_blocks(&eig, &model.a_tilde_dot(t)))
    };
    Ok(DiagFrame { t, eig, remainder })
}

/// Frame without the remainder; enough for `T`, `T^{-1}` and `H^d`.
pub fn build_frame_static(model: &ReducedModel, t: f64) -> Result<DiagFrame> {
    Ok(DiagFrame {
        t,
        eig: a_tilde_eig(model, t)?,
        remainder: None,
    })
}

fn remainder_blocks(eig: &SymEig, a_dot: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let q = &eig.vectors;
    let m = q.transpose() * a_dot * q;
    let n = eig.dim();
    let r: Vec<f64> = eig.values.iter().map(|l| l.powf(0.25)).collect();
    let a_eig = DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (r[i], r[j]);
        -0.5 * m[(i, j)] * (a - b) / (a * b * (a + b) * (a * a + b * b))
    });
    let b_eig = DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (r[i], r[j]);
        -0.5 * m[(i, j)] / (a * b * (a * a + b * b))
    });
    (q * a_eig * q.transpose(), q * b_eig * q.transpose())
}

fn split(y: &[C64]) -> (&[C64], &[C64]) {
    y.split_at(y.len() / 2)
}

fn join(a: Vec<C64>, b: Vec<C64>) -> Vec<C64> {
    let mut out = a;
    out.extend(b);
    out
}

impl DiagFrame {
    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn dim(&self) -> usize {
        self.eig.dim()
    }

    pub fn eig(&self) -> &SymEig {
        &self.eig
    }

    /// Eigenvalues of `eps(t)`.
    pub fn eps_values(&self) -> Vec<f64> {
        self.eig.values.iter().map(|l| l.sqrt()).collect()
    }

    pub fn eps_matrix(&self) -> DMatrix<f64> {
        self.eig.matrix_fn(f64::sqrt)
    }

    pub fn has_remainder(&self) -> bool {
        self.remainder.is_some()
    }

    /// `(A, B)` blocks of `K = T^{-1} d_t T`, zero for stationary models.
    pub fn remainder(&self) -> Option<&(DMatrix<f64>, DMatrix<f64>)> {
        self.remainder.as_ref()
    }

    /// `E^{s}` with `s = +1/2` or `-1/2` applied to one component.
    pub fn apply_e(&self, power: f64, x: &[C64]) -> Vec<C64> {
        let p = 0.5 * power;
        self.eig.apply_real_fn(|l| l.powf(p), x)
    }

    /// `T y` on stacked `z`-coordinate pairs.
    pub fn apply_t(&self, y: &[C64]) -> Vec<C64> {
        let (p, m) = split(y);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let sum: Vec<C64> = p.iter().zip(m).map(|(a, b)| (a + b) * s).collect();
        let diff: Vec<C64> = p.iter().zip(m).map(|(a, b)| (a - b) * s).collect();
        join(self.apply_e(-0.5, &sum), self.apply_e(0.5, &diff))
    }

    /// `T^{-1} w`.
    pub fn apply_tinv(&self, w: &[C64]) -> Vec<C64> {
        let (w0, w1) = split(w);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let a = self.apply_e(0.5, w0);
        let b = self.apply_e(-0.5, w1);
        join(
            a.iter().zip(&b).map(|(x, y)| (x + y) * s).collect(),
            a.iter().zip(&b).map(|(x, y)| (x - y) * s).collect(),
        )
    }

    /// `H^d y = (eps y^+, -eps y^-)`.
    pub fn apply_hd(&self, y: &[C64]) -> Vec<C64> {
        let (p, m) = split(y);
        let mut b = self.eig.apply_real_fn(f64::sqrt, m);
        b.iter_mut().for_each(|v| *v = -*v);
        join(self.eig.apply_real_fn(f64::sqrt, p), b)
    }

    /// `K y`; multiply by `i` for `V^ad y`.
    pub fn apply_k(&self, y: &[C64]) -> Vec<C64> {
        let Some((a, b)) = &self.remainder else {
            return vec![C64::new(0.0, 0.0); y.len()];
        };
        let (p, m) = split(y);
        let ap = real_matvec(a, p);
        let bp = real_matvec(b, p);
        let am = real_matvec(a, m);
        let bm = real_matvec(b, m);
        join(
            ap.iter().zip(&bm).map(|(x, y)| x + y).collect(),
            bp.iter().zip(&am).map(|(x, y)| x + y).collect(),
        )
    }

    /// `V^ad y = i K y`.
    pub fn apply_vad(&self, y: &[C64]) -> Vec<C64> {
        let i = C64::new(0.0, 1.0);
        self.apply_k(y).into_iter().map(|v| i * v).collect()
    }

    /// `||V^ad(t)||` as an operator on `H^0 (+) H^0`.
    pub fn remainder_norm(&self) -> f64 {
        match &self.remainder {
            None => 0.0,
            // [[A,B],[B,A]] splits into A+B and A-B on (1,1) and (1,-1)
            Some((a, b)) => {
                let s = (a + b).singular_values().max();
                let d = (a - b).singular_values().max();
                s.max(d)
            }
        }
    }

    /// `sup ||V^ad f|| / ||f||` over the given stacked probe vectors.
    pub fn remainder_norm_on(&self, probes: &[Vec<C64>]) -> f64 {
        probes
            .iter()
            .map(|p| {
                let k = self.apply_k(p);
                crate::linalg::norm_sq(&k).sqrt() / crate::linalg::norm_sq(p).sqrt()
            })
            .fold(0.0, f64::max)
    }

    fn z_block(&self, model: &ReducedModel, f: impl Fn(f64) -> f64) -> Block {
        weighted_block(model, &self.eig.matrix_fn(f))
    }

    /// `T(t)` acting on reduced pairs.
    pub fn t_operator(&self, model: &ReducedModel) -> OperatorMatrix {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let em = self.z_block(model, |l| s * l.powf(-0.25));
        let ep = self.z_block(model, |l| s * l.powf(0.25));
        let epn = self.z_block(model, |l| -s * l.powf(0.25));
        OperatorMatrix::new(model.grid(), [[em.clone(), em], [ep, epn]]).with_weight(model.weight0())
    }

    /// `T(t)^{-1}` acting on reduced pairs.
    pub fn tinv_operator(&self, model: &ReducedModel) -> OperatorMatrix {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let ep = self.z_block(model, |l| s * l.powf(0.25));
        let em = self.z_block(model, |l| s * l.powf(-0.25));
        let emn = self.z_block(model, |l| -s * l.powf(-0.25));
        OperatorMatrix::new(model.grid(), [[ep.clone(), em], [ep, emn]]).with_weight(model.weight0())
    }

    /// `H^d(t) = diag(eps, -eps)` acting on reduced pairs.
    pub fn hd_operator(&self, model: &ReducedModel) -> OperatorMatrix {
        let e = self.z_block(model, f64::sqrt);
        let en = self.z_block(model, |l| -l.sqrt());
        OperatorMatrix::new(model.grid(), [[e, Block::Zero], [Block::Zero, en]]).with_weight(model.weight0())
    }

    /// `V^ad(t)` acting on reduced pairs.
    pub fn vad_operator(&self, model: &ReducedModel) -> OperatorMatrix {
        let grid = model.grid();
        let Some((a, b)) = &self.remainder else {
            return OperatorMatrix::new(grid, [[Block::Zero, Block::Zero], [Block::Zero, Block::Zero]]);
        };
        let i = C64::new(0.0, 1.0);
        let scale = |m: &DMatrix<f64>| match weighted_block(model, m) {
            Block::Dense(d) => Block::Dense(Arc::new(d.as_ref() * i)),
            other => other,
        };
        let (ab, bb) = (scale(a), scale(b));
        OperatorMatrix::new(grid, [[ab.clone(), bb.clone()], [bb, ab]]).with_weight(model.weight0())
    }
}

/// Fit of `||V^ad(t)||` against `<t>` over the given (positive) times.
pub fn remainder_decay(model: &ReducedModel, times: &[f64]) -> Result<DecayFit> {
    if times.len() < 3 {
        return Err(KgError::DegenerateFit(format!(
            "need at least 3 times, got {}",
            times.len()
        )));
    }
    let values = times
        .iter()
        .map(|&t| build_frame(model, t).map(|f| f.remainder_norm()))
        .collect::<Result<Vec<_>>>()?;
    DecayFit::from_samples(times.to_vec(), values)
}
