//! Small dense linear programs: `min c·x` subject to `A·x ≤ b` and finite box
//! bounds `lb ≤ x ≤ ub`.
//!
//! A two-phase tableau simplex with Bland's rule — slow per pivot but immune
//! to cycling, which is all the separator search needs: its LPs have at most
//! seven structural variables and a few hundred rows.

use alloc::vec::Vec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LpError {
    /// Pivot count exceeded the safety cap.
    IterationLimit,
    /// Objective can decrease without bound (impossible under finite boxes
    /// unless the caller passed inconsistent data).
    Unbounded,
    /// Mismatched dimensions or non-finite input.
    BadProblem,
}

impl core::fmt::Display for LpError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            LpError::IterationLimit => write!(f, "simplex iteration limit reached"),
            LpError::Unbounded => write!(f, "objective unbounded below"),
            LpError::BadProblem => write!(f, "malformed LP"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for LpError {}

#[derive(Clone, Debug, PartialEq)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub objective: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpOutcome {
    Optimal(LpSolution),
    Infeasible,
}

const TOL: f64 = 1e-9;

struct Tableau {
    rows: usize,
    cols: usize, // structural + slack + artificial columns, plus rhs
    a: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.a[r * self.cols + c]
    }

    fn at_mut(&mut self, r: usize, c: usize) -> &mut f64 {
        &mut self.a[r * self.cols + c]
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let piv = self.at(row, col);
        let inv = 1.0 / piv;
        for c in 0..self.cols {
            *self.at_mut(row, c) *= inv;
        }
        for r in 0..self.rows {
            if r == row {
                continue;
            }
            let factor = self.at(r, col);
            if factor == 0.0 {
                continue;
            }
            for c in 0..self.cols {
                let delta = factor * self.at(row, c);
                *self.at_mut(r, c) -= delta;
            }
        }
        self.basis[row] = col;
    }

    /// Bland's rule iteration on the objective stored in the last row.
    /// `allowed` limits the entering columns (used to freeze artificials in
    /// phase 2).
    fn run(&mut self, allowed: usize, max_iter: usize) -> Result<(), LpError> {
        let obj = self.rows - 1;
        let rhs = self.cols - 1;
        for _ in 0..max_iter {
            let Some(enter) = (0..allowed).find(|&c| self.at(obj, c) < -TOL) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for r in 0..obj {
                let coef = self.at(r, enter);
                if coef > TOL {
                    let ratio = self.at(r, rhs) / coef;
                    let better = match leave {
                        None => true,
                        // smallest ratio; ties to the smallest basis index
                        Some((lr, lratio)) => {
                            ratio < lratio - TOL
                                || (ratio < lratio + TOL && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((row, _)) = leave else {
                return Err(LpError::Unbounded);
            };
            self.pivot(row, enter);
        }
        Err(LpError::IterationLimit)
    }
}

/// Minimizes `c·x` subject to `rows[i].0 · x ≤ rows[i].1` and `lb ≤ x ≤ ub`.
/// All bounds must be finite.
pub fn solve_min(
    c: &[f64],
    rows: &[(Vec<f64>, f64)],
    lb: &[f64],
    ub: &[f64],
) -> Result<LpOutcome, LpError> {
    let n = c.len();
    if lb.len() != n || ub.len() != n || rows.iter().any(|(r, _)| r.len() != n) {
        return Err(LpError::BadProblem);
    }
    let finite = |v: f64| v.is_finite();
    if !c.iter().all(|&v| finite(v))
        || !lb.iter().zip(ub).all(|(&l, &u)| finite(l) && finite(u) && l <= u)
        || !rows.iter().all(|(r, b)| r.iter().all(|&v| finite(v)) && finite(*b))
    {
        return Err(LpError::BadProblem);
    }

    // shift to y = x - lb >= 0; upper bounds become extra <= rows
    let m = rows.len() + n;
    let mut shifted: Vec<(Vec<f64>, f64)> = Vec::with_capacity(m);
    for (coeffs, rhs) in rows {
        let dot: f64 = coeffs.iter().zip(lb).map(|(a, l)| a * l).sum();
        shifted.push((coeffs.clone(), rhs - dot));
    }
    for i in 0..n {
        let mut e = alloc::vec![0.0; n];
        e[i] = 1.0;
        shifted.push((e, ub[i] - lb[i]));
    }

    // columns: n structural, m slacks, then one artificial per negative-rhs
    // row; last column is the rhs
    let n_art = shifted.iter().filter(|&&(_, rhs)| rhs < 0.0).count();
    let cols = n + m + n_art + 1;
    let mut t = Tableau {
        rows: m + 1,
        cols,
        a: alloc::vec![0.0; (m + 1) * cols],
        basis: alloc::vec![0; m],
    };

    let mut art = 0;
    for (r, (coeffs, rhs)) in shifted.iter().enumerate() {
        let sign = if *rhs < 0.0 { -1.0 } else { 1.0 };
        for (j, &v) in coeffs.iter().enumerate() {
            *t.at_mut(r, j) = sign * v;
        }
        *t.at_mut(r, n + r) = sign; // slack
        *t.at_mut(r, cols - 1) = sign * rhs;
        if *rhs < 0.0 {
            let a_col = n + m + art;
            *t.at_mut(r, a_col) = 1.0;
            t.basis[r] = a_col;
            art += 1;
        } else {
            t.basis[r] = n + r;
        }
    }

    let max_iter = 200 * (m + cols);

    if n_art > 0 {
        // phase 1: minimize the sum of artificials, expressed over non-basics
        for r in 0..m {
            if t.basis[r] >= n + m {
                for ccol in 0..cols {
                    let v = t.at(r, ccol);
                    *t.at_mut(m, ccol) -= v;
                }
            }
        }
        for a_col in (n + m)..(n + m + n_art) {
            *t.at_mut(m, a_col) += 1.0;
        }
        t.run(n + m + n_art, max_iter)?;
        if t.at(m, cols - 1) < -1e-7 {
            return Ok(LpOutcome::Infeasible);
        }
        // pivot any zero-level artificial out of the basis if possible
        for r in 0..m {
            if t.basis[r] >= n + m {
                if let Some(col) = (0..n + m).find(|&c| t.at(r, c).abs() > TOL) {
                    t.pivot(r, col);
                }
            }
        }
    }

    // phase 2: real objective over structural columns, price out the basis
    for ccol in 0..cols {
        *t.at_mut(m, ccol) = 0.0;
    }
    for (j, &cj) in c.iter().enumerate() {
        *t.at_mut(m, j) = cj;
    }
    for r in 0..m {
        let b = t.basis[r];
        let cost = if b < n { c[b] } else { 0.0 };
        if cost != 0.0 {
            for ccol in 0..cols {
                let v = t.at(r, ccol);
                *t.at_mut(m, ccol) -= cost * v;
            }
        }
    }
    t.run(n + m, max_iter)?;

    let mut y = alloc::vec![0.0; n];
    for r in 0..m {
        if t.basis[r] < n {
            y[t.basis[r]] = t.at(r, cols - 1);
        }
    }
    let x: Vec<f64> = y.iter().zip(lb).map(|(v, l)| v + l).collect();
    let objective = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    Ok(LpOutcome::Optimal(LpSolution { x, objective }))
}
