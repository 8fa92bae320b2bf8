//! Batch non-negative matrix factorization by multiplicative updates.
//!
//! Minimizes `½‖X − WH‖²_F + α‖H‖₁` over `W, H ≥ 0`. The code update carries
//! the L1 weight in its denominator; the dictionary update does not, since
//! the penalty does not depend on `W`. After every iteration the atoms are
//! rescaled to unit L2 norm and the matching code rows are scaled up by the
//! same factor, which leaves `WH` unchanged.
//!
//! With `α > 0` that rescale can raise the penalty term. When the combined
//! dictionary step and rescale would increase the loss, the iteration instead
//! takes one sweep of unit-norm block coordinate descent on the data term,
//! which cannot. The loss trace is therefore non-increasing for any `α`.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::onmf::{coordinate_descent_sweep, AtomConstraint};

/// Default denominator guard for the multiplicative updates.
pub const DEFAULT_EPSILON: f64 = 1e-12;

/// Atoms whose norm falls below this are considered dead and redrawn.
const DEAD_ATOM_NORM: f64 = 1e-12;

/// Relative slack allowed when checking that a multiplicative dictionary
/// step did not raise the loss; absorbs rounding in the rescale.
const ACCEPT_SLACK: f64 = 1e-12;

/// Tolerance used when validating unit-norm atoms from outside sources.
const UNIT_NORM_TOL: f64 = 1e-9;

/// Non-negative dictionary with unit-L2 columns (`d × k`).
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    atoms: Array2<f64>,
}

impl Dictionary {
    /// Wraps `atoms`, checking that entries are finite and non-negative and
    /// that every column has unit norm.
    pub fn from_atoms(atoms: Array2<f64>) -> Result<Self> {
        check_non_negative(atoms.view(), "dictionary")?;
        for (j, col) in atoms.axis_iter(Axis(1)).enumerate() {
            let norm = col.dot(&col).sqrt();
            if (norm - 1.0).abs() > UNIT_NORM_TOL {
                return Err(Error::InvalidConfig(format!(
                    "atom {j} has norm {norm}, expected 1"
                )));
            }
        }
        Ok(Self { atoms })
    }

    /// Scales every column of `atoms` to unit norm. Zero columns are rejected.
    pub fn normalized(mut atoms: Array2<f64>) -> Result<Self> {
        check_non_negative(atoms.view(), "dictionary")?;
        for (j, mut col) in atoms.axis_iter_mut(Axis(1)).enumerate() {
            let norm = col.dot(&col).sqrt();
            if norm < DEAD_ATOM_NORM {
                return Err(Error::InvalidConfig(format!("atom {j} is zero")));
            }
            col.mapv_inplace(|v| v / norm);
        }
        Ok(Self { atoms })
    }

    /// `d × k` dictionary of i.i.d. uniform `[0, 1)` entries, columns normalized.
    pub fn random(d: usize, k: usize, rng: &mut impl Rng) -> Self {
        let mut atoms = Array2::from_shape_simple_fn((d, k), || rng.random::<f64>());
        for mut col in atoms.axis_iter_mut(Axis(1)) {
            let norm = col.dot(&col).sqrt();
            if norm >= DEAD_ATOM_NORM {
                col.mapv_inplace(|v| v / norm);
            } else {
                let fill = 1.0 / (col.len() as f64).sqrt();
                col.fill(fill);
            }
        }
        Self { atoms }
    }

    pub fn atoms(&self) -> &Array2<f64> {
        &self.atoms
    }

    pub fn into_atoms(self) -> Array2<f64> {
        self.atoms
    }

    /// Number of rows (frequency bins).
    pub fn dim(&self) -> usize {
        self.atoms.nrows()
    }

    /// Number of atoms.
    pub fn k(&self) -> usize {
        self.atoms.ncols()
    }

    /// `[self, other]`, with this dictionary's atoms first.
    pub fn concat(&self, other: &Dictionary) -> Result<Dictionary> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(format!(
                "cannot concatenate dictionaries with {} and {} rows",
                self.dim(),
                other.dim()
            )));
        }
        let atoms = ndarray::concatenate(Axis(1), &[self.atoms.view(), other.atoms.view()])
            .expect("row counts checked above");
        Ok(Self { atoms })
    }
}

/// Non-negative code matrix (`k × n`).
#[derive(Debug, Clone, PartialEq)]
pub struct CodeMatrix {
    codes: Array2<f64>,
}

impl CodeMatrix {
    pub fn new(codes: Array2<f64>) -> Result<Self> {
        check_non_negative(codes.view(), "code matrix")?;
        Ok(Self { codes })
    }

    pub(crate) fn new_unchecked(codes: Array2<f64>) -> Self {
        debug_assert!(codes.iter().all(|&v| v >= 0.0));
        Self { codes }
    }

    pub fn codes(&self) -> &Array2<f64> {
        &self.codes
    }

    pub fn into_codes(self) -> Array2<f64> {
        self.codes
    }

    /// Fraction of entries that are exactly zero or below `threshold`.
    pub fn sparsity(&self, threshold: f64) -> f64 {
        if self.codes.is_empty() {
            return 1.0;
        }
        self.codes.iter().filter(|&&v| v <= threshold).count() as f64 / self.codes.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NmfConfig {
    pub k: usize,
    pub alpha: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
    pub epsilon: f64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        Self {
            k: 50,
            alpha: 0.0,
            max_iters: 500,
            rel_tol: 1e-4,
            seed: 0,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl NmfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "alpha {} must be ≥ 0",
                self.alpha
            )));
        }
        if !(self.rel_tol > 0.0) || !(self.epsilon > 0.0) {
            return Err(Error::InvalidConfig(
                "rel_tol and epsilon must be positive".into(),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        Ok(())
    }
}

/// Result of [`fit_nmf`]: the factors plus the loss after initialization
/// (`trace[0]`) and after each iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct NmfFit {
    pub dictionary: Dictionary,
    pub codes: CodeMatrix,
    pub trace: Vec<f64>,
    /// Iterations whose dictionary step fell back to coordinate descent.
    pub safeguarded_steps: usize,
}

impl NmfFit {
    pub fn iterations(&self) -> usize {
        self.trace.len() - 1
    }

    pub fn final_loss(&self) -> f64 {
        *self
            .trace
            .last()
            .expect("trace always holds the initial loss")
    }
}

pub(crate) fn check_non_negative(m: ArrayView2<'_, f64>, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(what.to_string()));
    }
    if m.iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidConfig(format!("{what} has negative entries")));
    }
    Ok(())
}

fn check_factor_dims(
    x: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    h: ArrayView2<'_, f64>,
) -> Result<()> {
    let (d, n) = x.dim();
    if w.nrows() != d || h.ncols() != n || w.ncols() != h.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "X is {d}×{n}, W is {}×{}, H is {}×{}",
            w.nrows(),
            w.ncols(),
            h.nrows(),
            h.ncols()
        )));
    }
    Ok(())
}

/// `½‖X − WH‖²_F + α·ΣH`.
pub fn loss(
    x: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    h: ArrayView2<'_, f64>,
    alpha: f64,
) -> Result<f64> {
    check_factor_dims(x, w, h)?;
    let wh = w.dot(&h);
    let mut sq = 0.0;
    Zip::from(&x)
        .and(&wh)
        .for_each(|&a, &b| sq += (a - b) * (a - b));
    Ok(0.5 * sq + alpha * h.sum())
}

/// `H ⊙ WᵀX ⊘ (WᵀWH + α + ε)`.
pub fn update_code(
    x: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    h: ArrayView2<'_, f64>,
    alpha: f64,
    epsilon: f64,
) -> Result<Array2<f64>> {
    check_factor_dims(x, w, h)?;
    let numer = w.t().dot(&x);
    let denom = w.t().dot(&w).dot(&h);
    let mut out = h.to_owned();
    Zip::from(&mut out)
        .and(&numer)
        .and(&denom)
        .for_each(|o, &num, &den| *o *= num / (den + alpha + epsilon));
    Ok(out)
}

/// `W ⊙ XHᵀ ⊘ (WHHᵀ + ε)`, without renormalization.
pub fn update_dictionary(
    x: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    h: ArrayView2<'_, f64>,
    epsilon: f64,
) -> Result<Array2<f64>> {
    check_factor_dims(x, w, h)?;
    let numer = x.dot(&h.t());
    let denom = w.dot(&h.dot(&h.t()));
    let mut out = w.to_owned();
    Zip::from(&mut out)
        .and(&numer)
        .and(&denom)
        .for_each(|o, &num, &den| *o *= num / (den + epsilon));
    Ok(out)
}

/// Rescales each column of `w` to unit norm and multiplies the matching row
/// of `h` by the old norm. Columns with norm below `1e-12` are redrawn from
/// `rng`; their (now negligible) code rows are kept so they can regrow.
pub fn renormalize(w: &mut Array2<f64>, h: &mut Array2<f64>, rng: &mut impl Rng) {
    debug_assert_eq!(w.ncols(), h.nrows());
    for j in 0..w.ncols() {
        let mut col = w.column_mut(j);
        let norm = col.dot(&col).sqrt();
        h.row_mut(j).mapv_inplace(|v| v * norm);
        if norm >= DEAD_ATOM_NORM {
            col.mapv_inplace(|v| v / norm);
        } else {
            col.mapv_inplace(|_| rng.random::<f64>());
            let fresh = col.dot(&col).sqrt();
            if fresh > 0.0 {
                col.mapv_inplace(|v| v / fresh);
            } else {
                let fill = 1.0 / (col.len() as f64).sqrt();
                col.fill(fill);
            }
        }
    }
}

/// Fits `X ≈ WH` with `cfg.k` atoms.
///
/// `W` and `H` start i.i.d. uniform on `[0, 1)` from `cfg.seed`.
/// Stops when `|L_k − L_{k−1}| / L_0 < rel_tol`, where `L_0` is the loss of
/// the (normalized) random initialization, or after `max_iters` iterations.
pub fn fit_nmf(x: ArrayView2<'_, f64>, cfg: &NmfConfig) -> Result<NmfFit> {
    cfg.validate()?;
    let (d, n) = x.dim();
    if d == 0 || n == 0 {
        return Err(Error::EmptyInput);
    }
    check_non_negative(x, "data matrix")?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut w = Array2::from_shape_simple_fn((d, cfg.k), || rng.random::<f64>());
    let mut h = Array2::from_shape_simple_fn((cfg.k, n), || rng.random::<f64>());
    renormalize(&mut w, &mut h, &mut rng);

    let l0 = loss(x, w.view(), h.view(), cfg.alpha)?;
    let mut trace = vec![l0];
    let mut safeguarded_steps = 0;
    if l0 > 0.0 {
        let mut prev = l0;
        for _ in 0..cfg.max_iters {
            h = update_code(x, w.view(), h.view(), cfg.alpha, cfg.epsilon)?;
            let after_code = loss(x, w.view(), h.view(), cfg.alpha)?;

            let mut w_mu = update_dictionary(x, w.view(), h.view(), cfg.epsilon)?;
            let mut h_mu = h.clone();
            renormalize(&mut w_mu, &mut h_mu, &mut rng);
            let after_mu = loss(x, w_mu.view(), h_mu.view(), cfg.alpha)?;

            let l = if after_mu <= after_code * (1.0 + ACCEPT_SLACK) {
                w = w_mu;
                h = h_mu;
                after_mu
            } else {
                // Rescaling moved mass into the penalized codes; take the
                // exact unit-norm block step on the data term instead.
                safeguarded_steps += 1;
                let a = h.dot(&h.t());
                let b = h.dot(&x.t());
                coordinate_descent_sweep(
                    &mut w,
                    a.view(),
                    b.view(),
                    cfg.epsilon,
                    AtomConstraint::UnitNorm,
                );
                loss(x, w.view(), h.view(), cfg.alpha)?
            };
            debug_assert!(w.iter().chain(h.iter()).all(|&v| v >= 0.0));
            if !l.is_finite() {
                return Err(Error::NonFinite("NMF loss".into()));
            }
            trace.push(l);
            if (l - prev).abs() / l0 < cfg.rel_tol {
                break;
            }
            prev = l;
        }
    }

    Ok(NmfFit {
        dictionary: Dictionary { atoms: w },
        codes: CodeMatrix::new_unchecked(h),
        trace,
        safeguarded_steps,
    })
}
