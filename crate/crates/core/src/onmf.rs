//! Online NMF: dictionary learning from sampled column batches.
//!
//! Each step draws a batch `X_t` of `m` spectrogram columns, sparse-codes it
//! against the current dictionary, folds `H_tH_tᵀ` and `H_tX_tᵀ` into running
//! averages `A_t` and `B_t`, and then improves the dictionary on the surrogate
//! `½Tr(WA_tWᵀ) − Tr(B_tW)` with one sweep of block coordinate descent. The
//! surrogate differs from the average batch loss only by a constant that
//! depends on the data, so past batches never need to be revisited.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut1, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::nmf::{check_non_negative, CodeMatrix, Dictionary, DEFAULT_EPSILON};

/// Read access to the columns of a `d × n` non-negative matrix.
///
/// The trainer only ever copies whole columns out of a source, which lets a
/// caller back it with a stream or instrument the access pattern.
pub trait ColumnSource {
    /// Rows per column.
    fn dim(&self) -> usize;
    /// Number of columns.
    fn len(&self) -> usize;
    fn copy_column(&self, j: usize, out: ArrayViewMut1<'_, f64>);

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ColumnSource for ArrayView2<'_, f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn len(&self) -> usize {
        self.ncols()
    }
    fn copy_column(&self, j: usize, mut out: ArrayViewMut1<'_, f64>) {
        out.assign(&self.column(j));
    }
}

impl ColumnSource for Array2<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }
    fn len(&self) -> usize {
        self.ncols()
    }
    fn copy_column(&self, j: usize, mut out: ArrayViewMut1<'_, f64>) {
        out.assign(&self.column(j));
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SamplingMode {
    /// Columns drawn i.i.d. uniformly, with replacement.
    #[default]
    UniformRandom,
    /// Contiguous, cyclically wrapping windows of columns.
    Consecutive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerConfig {
    pub mode: SamplingMode,
    pub batch_cols: usize,
    pub steps: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            mode: SamplingMode::UniformRandom,
            batch_cols: 100,
            steps: 100,
            seed: 0,
        }
    }
}

fn step_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Column indices of batch `t` (1-based) for an `n`-column source.
pub fn batch_indices(n: usize, cfg: &SamplerConfig, t: usize) -> Result<Vec<usize>> {
    let m = cfg.batch_cols;
    if m == 0 {
        return Err(Error::InvalidConfig(
            "batch must have at least one column".into(),
        ));
    }
    if m > n {
        return Err(Error::BatchTooWide { m, n });
    }
    if t == 0 {
        return Err(Error::InvalidConfig(
            "batch steps are numbered from 1".into(),
        ));
    }
    Ok(match cfg.mode {
        SamplingMode::UniformRandom => {
            let mut rng = step_rng(cfg.seed, t as u64);
            (0..m).map(|_| rng.random_range(0..n)).collect()
        }
        SamplingMode::Consecutive => {
            let start = ((t - 1) % n) * (m % n) % n;
            (0..m).map(|i| (start + i) % n).collect()
        }
    })
}

/// Copies batch `t` out of `source` as a `d × m` matrix.
pub fn sample_batch<S: ColumnSource + ?Sized>(
    source: &S,
    cfg: &SamplerConfig,
    t: usize,
) -> Result<Array2<f64>> {
    let idx = batch_indices(source.len(), cfg, t)?;
    let mut batch = Array2::zeros((source.dim(), idx.len()));
    for (c, &j) in idx.iter().enumerate() {
        source.copy_column(j, batch.column_mut(c));
    }
    Ok(batch)
}

/// Inner solver settings for [`sparse_code_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodingOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub epsilon: f64,
}

impl Default for CodingOptions {
    fn default() -> Self {
        Self {
            max_iters: 200,
            rel_tol: 1e-5,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

/// Approximately solves `min_{H ≥ 0} ½‖X − WH‖²_F + α‖H‖₁` with default
/// solver settings.
pub fn sparse_code(x: ArrayView2<'_, f64>, w: &Dictionary, alpha: f64) -> Result<CodeMatrix> {
    sparse_code_with(x, w.atoms().view(), alpha, &CodingOptions::default())
}

/// Multiplicative-update solver for the non-negative L1-regularized least
/// squares problem with `W` held fixed.
///
/// Each column of `H` starts at the constant vector that best fits its data
/// column in least squares, so all-zero columns stay zero. Iteration stops
/// once the objective changes by less than `rel_tol` of its previous value.
pub fn sparse_code_with(
    x: ArrayView2<'_, f64>,
    w: ArrayView2<'_, f64>,
    alpha: f64,
    opts: &CodingOptions,
) -> Result<CodeMatrix> {
    if x.nrows() != w.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} rows, dictionary has {}",
            x.nrows(),
            w.nrows()
        )));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidConfig(format!("alpha {alpha} must be ≥ 0")));
    }
    check_non_negative(x, "data batch")?;
    let k = w.ncols();
    let n = x.ncols();

    let wtx = w.t().dot(&x);
    let gram = w.t().dot(&w);
    let atom_sum = w.sum_axis(Axis(1));
    let atom_sum_sq = atom_sum.dot(&atom_sum);
    let mut h = Array2::<f64>::zeros((k, n));
    if atom_sum_sq > 0.0 {
        let fit = x.t().dot(&atom_sum) / atom_sum_sq;
        for (mut col, &s) in h.axis_iter_mut(Axis(1)).zip(fit.iter()) {
            col.fill(s.max(0.0));
        }
    }

    let half_x_sq = 0.5 * x.iter().map(|v| v * v).sum::<f64>();
    let objective = |h: &Array2<f64>, gh: &Array2<f64>| {
        let mut cross = 0.0;
        let mut quad = 0.0;
        Zip::from(h).and(&wtx).and(gh).for_each(|&hv, &a, &g| {
            cross += hv * a;
            quad += hv * g;
        });
        half_x_sq - cross + 0.5 * quad + alpha * h.sum()
    };

    let mut gh = gram.dot(&h);
    let l0 = objective(&h, &gh);
    let mut prev = l0;
    if l0 != 0.0 {
        for it in 0..opts.max_iters {
            Zip::from(&mut h)
                .and(&wtx)
                .and(&gh)
                .for_each(|hv, &num, &den| *hv *= num.max(0.0) / (den + alpha + opts.epsilon));
            gh = gram.dot(&h);
            let l = objective(&h, &gh);
            if !l.is_finite() {
                return Err(Error::NonFinite("sparse coding objective".into()));
            }
            if it > 0 && (l - prev).abs() <= opts.rel_tol * prev.abs() {
                break;
            }
            prev = l;
        }
    }
    Ok(CodeMatrix::new_unchecked(h))
}

/// `½Tr(WAWᵀ) − Tr(BW)` for `W` (`d × k`), `A` (`k × k`), `B` (`k × d`).
pub fn surrogate(w: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    let gram = w.t().dot(&w);
    let mut quad = 0.0;
    Zip::from(&gram).and(&a).for_each(|&g, &av| quad += g * av);
    let mut lin = 0.0;
    Zip::from(&b.t())
        .and(&w)
        .for_each(|&bv, &wv| lin += bv * wv);
    0.5 * quad - lin
}

/// Feasible set for the dictionary surrogate minimization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomConstraint {
    /// Non-negative atoms of unit L2 norm (used during training).
    UnitNorm,
    /// Non-negative atoms of any norm.
    NonNegative,
}

/// One cyclic sweep of block coordinate descent on the surrogate.
///
/// Atom `j` moves to `max(0, w_j + (b_j − W a_j) / (A_jj + ε))`; under
/// [`AtomConstraint::UnitNorm`] the result is then scaled to unit length, which
/// is the exact minimizer of the surrogate over non-negative unit vectors
/// with the other atoms held fixed. An atom with no descent direction is left
/// untouched.
pub fn coordinate_descent_sweep(
    w: &mut Array2<f64>,
    a: ArrayView2<'_, f64>,
    b: ArrayView2<'_, f64>,
    epsilon: f64,
    constraint: AtomConstraint,
) {
    let k = w.ncols();
    let mut step = Array1::<f64>::zeros(w.nrows());
    for j in 0..k {
        let wa = w.dot(&a.column(j));
        let ajj = a[[j, j]];
        Zip::from(&mut step)
            .and(&b.row(j))
            .and(&wa)
            .and(&w.column(j))
            .for_each(|s, &bv, &wav, &wv| *s = (wv + (bv - wav) / (ajj + epsilon)).max(0.0));
        match constraint {
            AtomConstraint::NonNegative => w.column_mut(j).assign(&step),
            AtomConstraint::UnitNorm => {
                // gradient direction with atom j's own contribution removed
                let has_ascent = b
                    .row(j)
                    .iter()
                    .zip(wa.iter().zip(w.column(j)))
                    .any(|(&bv, (&wav, &wv))| bv - wav + ajj * wv > 0.0);
                let norm = step.dot(&step).sqrt();
                if has_ascent && norm > 0.0 {
                    w.column_mut(j).assign(&(&step / norm));
                }
            }
        }
    }
}

/// Running state of the online trainer: the current dictionary and the
/// averaged statistics `A_t = (1/t)Σ H_sH_sᵀ`, `B_t = (1/t)Σ H_sX_sᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct OnmfState {
    dictionary: Dictionary,
    a: Array2<f64>,
    b: Array2<f64>,
    /// `(1/t)Σ ½‖X_s‖²_F`, the part of the batch objective the surrogate drops.
    c: f64,
    t: usize,
    epsilon: f64,
}

impl OnmfState {
    pub fn new(dictionary: Dictionary) -> Self {
        let (d, k) = dictionary.atoms().dim();
        Self {
            dictionary,
            a: Array2::zeros((k, k)),
            b: Array2::zeros((k, d)),
            c: 0.0,
            t: 0,
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn dictionary(&self) -> &Dictionary {
        &self.dictionary
    }

    pub fn into_dictionary(self) -> Dictionary {
        self.dictionary
    }

    pub fn a(&self) -> &Array2<f64> {
        &self.a
    }

    pub fn b(&self) -> &Array2<f64> {
        &self.b
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn is_degenerate(&self) -> bool {
        self.a.iter().all(|&v| v == 0.0)
    }

    /// Folds one coded batch into the running averages and advances `t`.
    pub fn aggregate(&mut self, h: &CodeMatrix, x: ArrayView2<'_, f64>) -> Result<()> {
        let h = h.codes();
        let k = self.dictionary.k();
        if h.nrows() != k || x.nrows() != self.dictionary.dim() || h.ncols() != x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "codes {}×{} and batch {}×{} for a {}×{} dictionary",
                h.nrows(),
                h.ncols(),
                x.nrows(),
                x.ncols(),
                self.dictionary.dim(),
                k
            )));
        }
        let t = (self.t + 1) as f64;
        let keep = (t - 1.0) / t;
        let hht = h.dot(&h.t());
        let hxt = h.dot(&x.t());
        Zip::from(&mut self.a)
            .and(&hht)
            .for_each(|a, &v| *a = keep * *a + v / t);
        Zip::from(&mut self.b)
            .and(&hxt)
            .for_each(|b, &v| *b = keep * *b + v / t);
        self.c = keep * self.c + 0.5 * x.iter().map(|v| v * v).sum::<f64>() / t;
        // HHᵀ is symmetric up to rounding in the product kernel
        for i in 0..k {
            for j in i + 1..k {
                let m = 0.5 * (self.a[[i, j]] + self.a[[j, i]]);
                self.a[[i, j]] = m;
                self.a[[j, i]] = m;
            }
        }
        self.t += 1;
        Ok(())
    }

    pub fn surrogate(&self) -> f64 {
        surrogate(self.dictionary.atoms().view(), self.a.view(), self.b.view())
    }

    pub fn data_constant(&self) -> f64 {
        self.c
    }

    /// Average of `½‖X_s − WH_s‖²_F` over all batches seen so far, with the
    /// current dictionary and the codes each batch was given.
    pub fn average_batch_loss(&self) -> f64 {
        self.surrogate() + self.c
    }

    /// One unit-norm coordinate-descent sweep on the current surrogate.
    pub fn update_dictionary(&mut self) -> Result<&Dictionary> {
        if self.t == 0 || self.is_degenerate() {
            return Err(Error::DegenerateState);
        }
        let mut w = self.dictionary.atoms().clone();
        coordinate_descent_sweep(
            &mut w,
            self.a.view(),
            self.b.view(),
            self.epsilon,
            AtomConstraint::UnitNorm,
        );
        self.dictionary = Dictionary::from_atoms(w)?;
        Ok(&self.dictionary)
    }
}

/// Average data term `(1/t)Σ_s ½‖X_s − WH_s‖²_F` over stored batches.
///
/// Only useful as a reference: the online trainer never keeps the batches.
pub fn batch_objective_oracle(
    batches: &[Array2<f64>],
    codes: &[CodeMatrix],
    w: ArrayView2<'_, f64>,
) -> Result<f64> {
    if batches.len() != codes.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} batches but {} code matrices",
            batches.len(),
            codes.len()
        )));
    }
    if batches.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut total = 0.0;
    for (x, h) in batches.iter().zip(codes) {
        total += crate::nmf::loss(x.view(), w, h.codes().view(), 0.0)?;
    }
    Ok(total / batches.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnmfConfig {
    pub k: usize,
    pub alpha: f64,
    pub sampler: SamplerConfig,
    pub coding: CodingOptions,
}

impl Default for OnmfConfig {
    fn default() -> Self {
        Self {
            k: 50,
            alpha: 0.0,
            sampler: SamplerConfig::default(),
            coding: CodingOptions::default(),
        }
    }
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepLog {
    pub step: usize,
    /// Surrogate after the dictionary update of this step.
    pub surrogate: f64,
    /// Surrogate plus the dropped data term: the average batch fit error.
    pub batch_loss: f64,
    /// Fraction of code entries below `1e-10` in this step's batch.
    pub code_sparsity: f64,
    /// Peak number of `f64` values held in working matrices during the step.
    pub aux_floats: usize,
    /// False when the batch coded to all zeros and the dictionary was kept.
    pub updated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OnmfFit {
    pub dictionary: Dictionary,
    pub log: Vec<StepLog>,
}

/// Trains a `k`-atom dictionary with the online algorithm.
///
/// `W_0` is drawn i.i.d. uniform from `sampler.seed` and normalized; batch
/// `t` is drawn from the same seed on stream `t`. With `steps = 0` the
/// initial dictionary is returned.
pub fn fit_onmf<S: ColumnSource + ?Sized>(source: &S, cfg: &OnmfConfig) -> Result<OnmfFit> {
    if cfg.k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    let d = source.dim();
    let n = source.len();
    if d == 0 || n == 0 {
        return Err(Error::EmptyInput);
    }
    if cfg.sampler.batch_cols > n {
        return Err(Error::BatchTooWide {
            m: cfg.sampler.batch_cols,
            n,
        });
    }

    let mut init_rng = step_rng(cfg.sampler.seed, 0);
    let mut state = OnmfState::new(Dictionary::random(d, cfg.k, &mut init_rng));
    let mut log = Vec::with_capacity(cfg.sampler.steps);
    let k = cfg.k;
    let m = cfg.sampler.batch_cols;

    for t in 1..=cfg.sampler.steps {
        let batch = sample_batch(source, &cfg.sampler, t)?;
        let h = sparse_code_with(
            batch.view(),
            state.dictionary().atoms().view(),
            cfg.alpha,
            &cfg.coding,
        )?;
        state.aggregate(&h, batch.view())?;
        let updated = !state.is_degenerate();
        if updated {
            state.update_dictionary()?;
        }
        let surrogate = state.surrogate();
        if !surrogate.is_finite() {
            return Err(Error::NonFinite("ONMF surrogate".into()));
        }

        // batch, W, A, B, and the coder's WᵀX, WᵀW, H and WᵀWH
        let aux_floats = batch.len()
            + state.dictionary().atoms().len()
            + state.a().len()
            + state.b().len()
            + 3 * k * m
            + k * k;
        log.push(StepLog {
            step: t,
            surrogate,
            batch_loss: state.average_batch_loss(),
            code_sparsity: h.sparsity(1e-10),
            aux_floats,
            updated,
        });
    }

    Ok(OnmfFit {
        dictionary: state.into_dictionary(),
        log,
    })
}

/// Writes one JSON object per step.
pub fn write_log_jsonl(log: &[StepLog], mut out: impl Write) -> Result<()> {
    for entry in log {
        serde_json::to_writer(&mut out, entry).map_err(std::io::Error::from)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, s};

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((rows, cols), || rng.random::<f64>())
    }

    #[test]
    fn consecutive_window_wraps() {
        let cfg = SamplerConfig {
            mode: SamplingMode::Consecutive,
            batch_cols: 4,
            steps: 10,
            seed: 0,
        };
        assert_eq!(batch_indices(10, &cfg, 3).unwrap(), vec![8, 9, 0, 1]);
        assert_eq!(batch_indices(10, &cfg, 1).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn consecutive_full_width_is_identity() {
        let x = random_matrix(3, 6, 1);
        let cfg = SamplerConfig {
            mode: SamplingMode::Consecutive,
            batch_cols: 6,
            steps: 1,
            seed: 0,
        };
        assert_eq!(sample_batch(&x, &cfg, 1).unwrap(), x);
    }

    #[test]
    fn uniform_batches_are_reproducible() {
        let x = random_matrix(3, 50, 2);
        let cfg = SamplerConfig {
            batch_cols: 20,
            seed: 9,
            ..SamplerConfig::default()
        };
        for t in 1..5 {
            assert_eq!(
                sample_batch(&x, &cfg, t).unwrap(),
                sample_batch(&x, &cfg, t).unwrap()
            );
        }
        assert_ne!(
            batch_indices(50, &cfg, 1).unwrap(),
            batch_indices(50, &cfg, 2).unwrap()
        );
    }

    #[test]
    fn batch_too_wide() {
        let cfg = SamplerConfig {
            batch_cols: 11,
            ..SamplerConfig::default()
        };
        assert!(matches!(
            batch_indices(10, &cfg, 1),
            Err(Error::BatchTooWide { m: 11, n: 10 })
        ));
    }

    /// Exhaustive non-negative least squares: solve the unconstrained problem
    /// on every support and keep the best feasible solution.
    fn nnls_exhaustive(w: &Array2<f64>, x: &Array1<f64>) -> Array1<f64> {
        let k = w.ncols();
        let mut best = Array1::zeros(k);
        let mut best_res = x.dot(x);
        for mask in 1u32..(1 << k) {
            let support: Vec<usize> = (0..k).filter(|j| mask & (1 << j) != 0).collect();
            let ws = Array2::from_shape_fn((w.nrows(), support.len()), |(i, c)| w[[i, support[c]]]);
            // normal equations via Gaussian elimination
            let mut g = ws.t().dot(&ws);
            let mut rhs = ws.t().dot(x);
            let p = support.len();
            let mut ok = true;
            for col in 0..p {
                let piv = g[[col, col]];
                if piv.abs() < 1e-14 {
                    ok = false;
                    break;
                }
                for row in 0..p {
                    if row != col {
                        let f = g[[row, col]] / piv;
                        for c in 0..p {
                            g[[row, c]] -= f * g[[col, c]];
                        }
                        rhs[row] -= f * rhs[col];
                    }
                }
            }
            if !ok {
                continue;
            }
            let coef: Vec<f64> = (0..p).map(|i| rhs[i] / g[[i, i]]).collect();
            if coef.iter().any(|&c| c < 0.0) {
                continue;
            }
            let mut h = Array1::zeros(k);
            for (c, &j) in support.iter().enumerate() {
                h[j] = coef[c];
            }
            let r = x - &w.dot(&h);
            let res = r.dot(&r);
            if res < best_res {
                best_res = res;
                best = h;
            }
        }
        best
    }

    #[test]
    fn sparse_code_recovers_scaled_atom() {
        // nearly orthogonal atoms: Gram off-diagonals below 0.005
        let w = Dictionary::normalized(array![
            [1.0, 0.002, 0.0],
            [0.002, 1.0, 0.002],
            [0.0, 0.002, 1.0],
            [0.5, 0.0, 0.0]
        ])
        .unwrap();
        for j in 0..3 {
            let x = w.atoms().column(j).mapv(|v| 3.0 * v);
            let oracle = nnls_exhaustive(w.atoms(), &x);
            let mut expected = Array1::zeros(3);
            expected[j] = 3.0;
            assert!((&oracle - &expected).iter().all(|v| v.abs() < 1e-9));

            let xm = x.clone().insert_axis(Axis(1));
            let h = sparse_code(xm.view(), &w, 0.0).unwrap();
            let code = h.codes().column(0).to_owned();
            let total: f64 = code.sum();
            let off: f64 = total - code[j];
            assert!(
                off <= 1e-4 * total,
                "atom {j}: off-support {off} of {total}"
            );
            assert!((code[j] - 3.0).abs() < 1e-3);
        }
    }

    #[test]
    fn sparse_code_matches_exhaustive_nnls_on_generic_data() {
        let w = Dictionary::normalized(random_matrix(4, 3, 17)).unwrap();
        for seed in 0..5 {
            let x = random_matrix(4, 1, 100 + seed).column(0).to_owned();
            let oracle = nnls_exhaustive(w.atoms(), &x);
            let opts = CodingOptions {
                max_iters: 20_000,
                rel_tol: 1e-14,
                ..CodingOptions::default()
            };
            let xm = x.clone().insert_axis(Axis(1));
            let h = sparse_code_with(xm.view(), w.atoms().view(), 0.0, &opts).unwrap();
            let got = h.codes().column(0);
            let r_got = &x - &w.atoms().dot(&got);
            let r_or = &x - &w.atoms().dot(&oracle);
            // objective values agree even where the argmin is poorly conditioned
            assert!(r_got.dot(&r_got) <= r_or.dot(&r_or) + 1e-8);
        }
    }

    #[test]
    fn sparse_code_huge_alpha_shrinks_to_zero() {
        let w = Dictionary::normalized(random_matrix(8, 4, 3)).unwrap();
        let x = random_matrix(8, 5, 4);
        let scale = w.atoms().t().dot(&x).iter().cloned().fold(0.0, f64::max);
        let h = sparse_code(x.view(), &w, scale * 1e3).unwrap();
        assert!(h.codes().iter().all(|&v| v <= 1e-6));
    }

    #[test]
    fn sparse_code_zero_data() {
        let w = Dictionary::normalized(random_matrix(8, 4, 5)).unwrap();
        let x = Array2::zeros((8, 3));
        let h = sparse_code(x.view(), &w, 1.0).unwrap();
        assert!(h.codes().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sparse_code_dimension_mismatch() {
        let w = Dictionary::normalized(random_matrix(8, 4, 5)).unwrap();
        let x = Array2::zeros((7, 3));
        assert!(matches!(
            sparse_code(x.view(), &w, 1.0),
            Err(Error::DimensionMismatch(_))
        ));
    }

    fn coded(x: &Array2<f64>, k: usize, seed: u64) -> CodeMatrix {
        CodeMatrix::new(random_matrix(k, x.ncols(), seed)).unwrap()
    }

    #[test]
    fn aggregate_first_step_is_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut state = OnmfState::new(Dictionary::random(5, 3, &mut rng));
        assert!(state.a().iter().all(|&v| v == 0.0) && state.b().iter().all(|&v| v == 0.0));
        let x = random_matrix(5, 4, 1);
        let h = coded(&x, 3, 2);
        state.aggregate(&h, x.view()).unwrap();
        assert_eq!(state.t(), 1);
        let hht = h.codes().dot(&h.codes().t());
        for (a, e) in state.a().iter().zip(hht.iter()) {
            assert!((a - e).abs() <= 1e-15 * e.abs().max(1.0));
        }
        assert_eq!(state.b(), &h.codes().dot(&x.t()));
    }

    #[test]
    fn aggregate_zero_codes_decays() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut state = OnmfState::new(Dictionary::random(5, 3, &mut rng));
        let x = random_matrix(5, 4, 1);
        state.aggregate(&coded(&x, 3, 2), x.view()).unwrap();
        state.aggregate(&coded(&x, 3, 3), x.view()).unwrap();
        let before = state.a().clone();
        state
            .aggregate(&CodeMatrix::new(Array2::zeros((3, 4))).unwrap(), x.view())
            .unwrap();
        for (a, b) in state.a().iter().zip(before.iter()) {
            assert!((a - b * 2.0 / 3.0).abs() <= 1e-14);
        }
    }

    #[test]
    fn aggregate_matches_running_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut state = OnmfState::new(Dictionary::random(6, 3, &mut rng));
        let mut sum_a = Array2::<f64>::zeros((3, 3));
        let mut sum_b = Array2::<f64>::zeros((3, 6));
        let steps = 25;
        for s in 0..steps {
            let x = random_matrix(6, 5, 1000 + s);
            let h = coded(&x, 3, 2000 + s);
            sum_a = sum_a + h.codes().dot(&h.codes().t());
            sum_b = sum_b + h.codes().dot(&x.t());
            state.aggregate(&h, x.view()).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    assert!((state.a()[[i, j]] - state.a()[[j, i]]).abs() <= 1e-12);
                }
            }
        }
        let t = steps as f64;
        for (a, e) in state.a().iter().zip(sum_a.iter()) {
            assert!((a - e / t).abs() <= 1e-10);
        }
        for (b, e) in state.b().iter().zip(sum_b.iter()) {
            assert!((b - e / t).abs() <= 1e-10);
        }
    }

    #[test]
    fn aggregate_dimension_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut state = OnmfState::new(Dictionary::random(5, 3, &mut rng));
        let x = random_matrix(4, 4, 1);
        assert!(state.aggregate(&coded(&x, 3, 2), x.view()).is_err());
    }

    #[test]
    fn single_atom_update_points_along_b() {
        let w0 = Dictionary::normalized(array![[1.0], [1.0], [1.0]]).unwrap();
        let mut state = OnmfState::new(w0);
        let x = array![[2.0], [0.0], [1.0]];
        let h = CodeMatrix::new(array![[1.5]]).unwrap();
        state.aggregate(&h, x.view()).unwrap();
        let w = state
            .update_dictionary()
            .unwrap()
            .atoms()
            .column(0)
            .to_owned();
        let b = state.b().row(0).to_owned();
        let dir = &b / b.dot(&b).sqrt();
        for (a, e) in w.iter().zip(dir.iter()) {
            assert!((a - e).abs() <= 1e-12);
        }
    }

    #[test]
    fn degenerate_state_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut state = OnmfState::new(Dictionary::random(4, 2, &mut rng));
        assert!(matches!(
            state.update_dictionary(),
            Err(Error::DegenerateState)
        ));
        let x = random_matrix(4, 3, 1);
        state
            .aggregate(&CodeMatrix::new(Array2::zeros((2, 3))).unwrap(), x.view())
            .unwrap();
        assert!(matches!(
            state.update_dictionary(),
            Err(Error::DegenerateState)
        ));
    }

    #[test]
    fn sweep_never_increases_surrogate() {
        for seed in 0..10 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut state = OnmfState::new(Dictionary::random(9, 4, &mut rng));
            for s in 0..3 {
                let x = random_matrix(9, 6, seed * 10 + s);
                let h = sparse_code(x.view(), state.dictionary(), 0.1).unwrap();
                state.aggregate(&h, x.view()).unwrap();
                let before = state.surrogate();
                state.update_dictionary().unwrap();
                let after = state.surrogate();
                assert!(
                    after <= before + 1e-12 * before.abs().max(1.0),
                    "seed {seed}: {before} -> {after}"
                );
            }
        }
    }

    #[test]
    fn surrogate_equals_batch_objective_up_to_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = Dictionary::random(6, 3, &mut rng);
        let mut state = OnmfState::new(w.clone());
        let mut batches = Vec::new();
        let mut codes = Vec::new();
        for s in 0..4 {
            let x = random_matrix(6, 5, 50 + s);
            let h = coded(&x, 3, 60 + s);
            state.aggregate(&h, x.view()).unwrap();
            batches.push(x);
            codes.push(h);
        }
        let constant: f64 = batches
            .iter()
            .map(|x| 0.5 * x.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            / 4.0;
        for probe in 0..5 {
            let wp = random_matrix(6, 3, 900 + probe);
            let oracle = batch_objective_oracle(&batches, &codes, wp.view()).unwrap();
            let sur = surrogate(wp.view(), state.a().view(), state.b().view());
            assert!((oracle - (sur + constant)).abs() <= 1e-9);
        }
        assert!((state.data_constant() - constant).abs() <= 1e-12 * constant);
        let at_w = batch_objective_oracle(&batches, &codes, w.atoms().view()).unwrap();
        assert!((state.average_batch_loss() - at_w).abs() <= 1e-9);
    }

    #[test]
    fn oracle_zero_for_exact_batch() {
        let w = random_matrix(5, 2, 1);
        let h = coded(&Array2::zeros((5, 3)), 2, 2);
        let x = w.dot(h.codes());
        assert!(batch_objective_oracle(&[x], &[h], w.view()).unwrap() < 1e-24);
        assert!(batch_objective_oracle(&[], &[], w.view()).is_err());
    }

    #[test]
    fn fit_with_zero_steps_returns_initial_dictionary() {
        let x = random_matrix(6, 20, 3);
        let cfg = OnmfConfig {
            k: 3,
            sampler: SamplerConfig {
                steps: 0,
                batch_cols: 5,
                seed: 11,
                ..SamplerConfig::default()
            },
            ..OnmfConfig::default()
        };
        let fit = fit_onmf(&x, &cfg).unwrap();
        let mut rng = step_rng(11, 0);
        assert_eq!(fit.dictionary, Dictionary::random(6, 3, &mut rng));
        assert!(fit.log.is_empty());
    }

    #[test]
    fn fit_is_deterministic_and_logs() {
        let x = random_matrix(10, 40, 5);
        let cfg = OnmfConfig {
            k: 4,
            alpha: 0.05,
            sampler: SamplerConfig {
                steps: 15,
                batch_cols: 8,
                seed: 2,
                ..SamplerConfig::default()
            },
            ..OnmfConfig::default()
        };
        let a = fit_onmf(&x, &cfg).unwrap();
        let b = fit_onmf(&x, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.log.len(), 15);
        assert!(Dictionary::from_atoms(a.dictionary.atoms().clone()).is_ok());
        let mut buf = Vec::new();
        write_log_jsonl(&a.log, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 15);
        let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
        assert_eq!(first["step"], 1);
        assert!(first["surrogate"].is_number());
    }

    #[test]
    fn fit_skips_update_on_silent_batches() {
        let mut x = Array2::<f64>::zeros((5, 12));
        x.slice_mut(s![.., 6..]).assign(&random_matrix(5, 6, 1));
        let cfg = OnmfConfig {
            k: 2,
            sampler: SamplerConfig {
                mode: SamplingMode::Consecutive,
                steps: 4,
                batch_cols: 6,
                seed: 0,
            },
            ..OnmfConfig::default()
        };
        let fit = fit_onmf(&x, &cfg).unwrap();
        let flags: Vec<bool> = fit.log.iter().map(|l| l.updated).collect();
        assert_eq!(flags, vec![false, true, true, true]);
    }
}
