//! The (t, s) strand grid, second-order s-derivatives and the RK4 driver
//! shared by all field solvers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    Periodic,
    /// Endpoint values are frozen; derivatives use one-sided stencils there.
    Fixed,
}

/// Uniform grid in s, with the time step and horizon of a run.
///
/// `n_s == 1` is the s-independent degenerate mode: every s-derivative is zero
/// and the field solvers reduce to their classical mechanical counterparts.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrandGrid {
    pub n_s: usize,
    pub s_extent: f64,
    pub bc: Boundary,
    pub dt: f64,
    pub t_end: f64,
}

pub const MIN_STRAND_POINTS: usize = 8;

impl StrandGrid {
    pub fn new(n_s: usize, s_extent: f64, bc: Boundary, dt: f64, t_end: f64) -> Result<Self> {
        let g = Self {
            n_s,
            s_extent,
            bc,
            dt,
            t_end,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn periodic(n_s: usize, s_extent: f64, dt: f64, t_end: f64) -> Result<Self> {
        Self::new(n_s, s_extent, Boundary::Periodic, dt, t_end)
    }

    /// Single s-point grid for the classical (s-independent) mode.
    pub fn single_point(dt: f64, t_end: f64) -> Result<Self> {
        Self::new(1, 1.0, Boundary::Periodic, dt, t_end)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_s != 1 && self.n_s < MIN_STRAND_POINTS {
            return Err(Error::InvalidGrid(format!(
                "n_s = {} (need 1 or at least {MIN_STRAND_POINTS})",
                self.n_s
            )));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidGrid(format!("dt = {} must be positive", self.dt)));
        }
        if !(self.s_extent > 0.0 && self.s_extent.is_finite()) {
            return Err(Error::InvalidGrid(format!("s_extent = {} must be positive", self.s_extent)));
        }
        if !(self.t_end >= 0.0 && self.t_end.is_finite()) {
            return Err(Error::InvalidGrid(format!("t_end = {} must be nonnegative", self.t_end)));
        }
        Ok(())
    }

    pub fn ds(&self) -> f64 {
        self.s_extent / self.n_s as f64
    }

    pub fn s(&self, j: usize) -> f64 {
        j as f64 * self.ds()
    }

    pub fn is_degenerate(&self) -> bool {
        self.n_s == 1
    }

    /// Number of whole steps to reach `t_end`.
    pub fn n_steps(&self) -> usize {
        (self.t_end / self.dt - 1e-9).ceil().max(0.0) as usize
    }

    /// Same extent and horizon with `dt` and `ds` divided by `2^level`.
    pub fn refined(&self, level: u32) -> Self {
        let f = 1usize << level;
        Self {
            n_s: if self.n_s == 1 { 1 } else { self.n_s * f },
            dt: self.dt / f as f64,
            ..*self
        }
    }

    pub(crate) fn check_stencil(&self) -> Result<()> {
        if self.bc == Boundary::Fixed && self.n_s < 3 {
            return Err(Error::InvalidGrid("fixed bc needs at least 3 points".into()));
        }
        Ok(())
    }

    /// Second-order derivative in s of a strided scalar component.
    ///
    /// `get(j)` returns the value at gridpoint `j`.
    #[inline]
    pub fn d_s_at(&self, j: usize, get: impl Fn(usize) -> f64) -> f64 {
        let n = self.n_s;
        if n == 1 {
            return 0.0;
        }
        let h = self.ds();
        match self.bc {
            Boundary::Periodic => {
                let jp = if j + 1 == n { 0 } else { j + 1 };
                let jm = if j == 0 { n - 1 } else { j - 1 };
                (get(jp) - get(jm)) / (2.0 * h)
            }
            Boundary::Fixed => {
                if j == 0 {
                    (-3.0 * get(0) + 4.0 * get(1) - get(2)) / (2.0 * h)
                } else if j == n - 1 {
                    (3.0 * get(n - 1) - 4.0 * get(n - 2) + get(n - 3)) / (2.0 * h)
                } else {
                    (get(j + 1) - get(j - 1)) / (2.0 * h)
                }
            }
        }
    }

    /// Componentwise s-derivative of a field stored as `n_s` blocks of `width` values.
    pub fn d_s_blocks(&self, data: &[f64], width: usize) -> Vec<f64> {
        debug_assert_eq!(data.len(), self.n_s * width);
        let mut out = vec![0.0; data.len()];
        for j in 0..self.n_s {
            for c in 0..width {
                out[j * width + c] = self.d_s_at(j, |jj| data[jj * width + c]);
            }
        }
        out
    }
}

/// One classical fourth-order Runge-Kutta step of `y' = f(y)` on a flat state.
///
/// Stages are combined in a fixed order so results are bitwise reproducible.
pub fn rk4_step<F>(y: &[f64], dt: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let n = y.len();
    let k1 = f(y)?;
    let mut tmp: Vec<f64> = (0..n).map(|i| y[i] + 0.5 * dt * k1[i]).collect();
    let k2 = f(&tmp)?;
    for i in 0..n {
        tmp[i] = y[i] + 0.5 * dt * k2[i];
    }
    let k3 = f(&tmp)?;
    for i in 0..n {
        tmp[i] = y[i] + dt * k3[i];
    }
    let k4 = f(&tmp)?;
    Ok((0..n)
        .map(|i| y[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

pub(crate) fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}
