//! The N x T two-species ensemble.
//!
//! Every cell is independently empty, positive or negative; magnitudes are
//! exponential with rates given by pairwise sums of row and column
//! multipliers. The cell partition factor is
//! `Z_it = 1 + exp(-a)/g + exp(-b)/s` with `a = alpha_i + alpha_t`,
//! `b = beta_i + beta_t`, `g = gamma_i + gamma_t`, `s = sigma_i + sigma_t`;
//! without missing data the empty state and `b` disappear.

use crate::data::{DataMatrix, MarginConstraints};
use crate::error::{Error, Result};
use crate::rng::stream_rng;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    WithMissing,
    NoMissing,
}

/// The four multiplier families, in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    /// Positive counts.
    Alpha,
    /// Negative counts.
    Beta,
    /// Positive sums (rates of the positive magnitudes).
    Gamma,
    /// Negative sums.
    Sigma,
}

pub const FAMILIES: [Family; 4] = [Family::Alpha, Family::Beta, Family::Gamma, Family::Sigma];

impl Family {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        ["alpha", "beta", "gamma", "sigma"][self as usize]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplierSet {
    pub alpha_row: Vec<f64>,
    pub beta_row: Vec<f64>,
    pub gamma_row: Vec<f64>,
    pub sigma_row: Vec<f64>,
    pub alpha_col: Vec<f64>,
    pub beta_col: Vec<f64>,
    pub gamma_col: Vec<f64>,
    pub sigma_col: Vec<f64>,
    pub variant: Variant,
}

/// Marginal law of one cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellMarginal {
    pub p_plus: f64,
    pub p_minus: f64,
    pub p_missing: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
}

impl CellMarginal {
    /// `E[W] = p+/lambda+ - p-/lambda-` (missing counts as zero).
    pub fn mean(&self) -> f64 {
        term(self.p_plus, self.lambda_plus) - term(self.p_minus, self.lambda_minus)
    }

    /// `E[W^2] - E[W]^2`.
    pub fn variance(&self) -> f64 {
        let second = 2.0 * term(self.p_plus, self.lambda_plus * self.lambda_plus)
            + 2.0 * term(self.p_minus, self.lambda_minus * self.lambda_minus);
        second - self.mean().powi(2)
    }

    /// Density of an observed value; integrates to `1 - p_missing`.
    pub fn density(&self, x: f64) -> f64 {
        if x >= 0.0 {
            if self.p_plus == 0.0 {
                return 0.0;
            }
            self.p_plus * self.lambda_plus * (-self.lambda_plus * x).exp()
        } else {
            if self.p_minus == 0.0 {
                return 0.0;
            }
            self.p_minus * self.lambda_minus * (self.lambda_minus * x).exp()
        }
    }

    /// `P(W <= x, observed)`.
    pub fn cdf(&self, x: f64) -> f64 {
        if x < 0.0 {
            if self.p_minus == 0.0 {
                0.0
            } else {
                self.p_minus * (self.lambda_minus * x).exp()
            }
        } else if self.p_plus == 0.0 {
            self.p_minus
        } else {
            self.p_minus - self.p_plus * (-self.lambda_plus * x).exp_m1()
        }
    }

    /// Quantile of the value conditional on being observed.
    pub fn quantile(&self, p: f64) -> f64 {
        let obs = self.p_plus + self.p_minus;
        let target = p.clamp(0.0, 1.0) * obs;
        if target < self.p_minus {
            (target / self.p_minus).ln() / self.lambda_minus
        } else if self.p_plus > 0.0 {
            let rest = ((target - self.p_minus) / self.p_plus).min(1.0);
            -(-rest).ln_1p() / self.lambda_plus
        } else {
            0.0
        }
    }
}

fn term(p: f64, scale: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else {
        p / scale
    }
}

/// Local temperature, energy and chemical potentials of a cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalQuantities {
    pub temperature: f64,
    pub energy: f64,
    pub mu1: f64,
    pub mu2: f64,
}

impl PhysicalQuantities {
    /// `1 + exp((mu1 - eps)/T) + exp((mu2 - eps)/T)`.
    pub fn partition(&self) -> f64 {
        1.0 + ((self.mu1 - self.energy) / self.temperature).exp()
            + ((self.mu2 - self.energy) / self.temperature).exp()
    }
}

/// Which states a cell may occupy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Allowed {
    pub empty: bool,
    pub plus: bool,
    pub minus: bool,
}

impl Allowed {
    pub const ALL: Allowed = Allowed { empty: true, plus: true, minus: true };
}

/// Pairwise sums `(a, b, g, s)` of a cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellSums {
    pub a: f64,
    pub b: f64,
    pub g: f64,
    pub s: f64,
}

/// Cell quantities needed by likelihood and calibration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CellState {
    pub sums: CellSums,
    pub ln_z: f64,
    pub marginal: CellMarginal,
}

fn logsumexp3(x: [f64; 3]) -> f64 {
    let m = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + x.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl MultiplierSet {
    pub fn zeros(n: usize, t: usize, variant: Variant) -> Self {
        Self {
            alpha_row: vec![0.0; n],
            beta_row: vec![0.0; n],
            gamma_row: vec![0.0; n],
            sigma_row: vec![0.0; n],
            alpha_col: vec![0.0; t],
            beta_col: vec![0.0; t],
            gamma_col: vec![0.0; t],
            sigma_col: vec![0.0; t],
            variant,
        }
    }

    /// Multipliers with the given rate sums split evenly between rows and
    /// columns and all count multipliers zero.
    pub fn uniform(n: usize, t: usize, variant: Variant, g: f64, s: f64) -> Self {
        let mut ms = Self::zeros(n, t, variant);
        ms.gamma_row.fill(g / 2.0);
        ms.gamma_col.fill(g / 2.0);
        ms.sigma_row.fill(s / 2.0);
        ms.sigma_col.fill(s / 2.0);
        ms
    }

    pub fn n_rows(&self) -> usize {
        self.alpha_row.len()
    }

    pub fn n_cols(&self) -> usize {
        self.alpha_col.len()
    }

    pub fn row(&self, f: Family) -> &[f64] {
        match f {
            Family::Alpha => &self.alpha_row,
            Family::Beta => &self.beta_row,
            Family::Gamma => &self.gamma_row,
            Family::Sigma => &self.sigma_row,
        }
    }

    pub fn col(&self, f: Family) -> &[f64] {
        match f {
            Family::Alpha => &self.alpha_col,
            Family::Beta => &self.beta_col,
            Family::Gamma => &self.gamma_col,
            Family::Sigma => &self.sigma_col,
        }
    }

    pub fn row_mut(&mut self, f: Family) -> &mut Vec<f64> {
        match f {
            Family::Alpha => &mut self.alpha_row,
            Family::Beta => &mut self.beta_row,
            Family::Gamma => &mut self.gamma_row,
            Family::Sigma => &mut self.sigma_row,
        }
    }

    pub fn col_mut(&mut self, f: Family) -> &mut Vec<f64> {
        match f {
            Family::Alpha => &mut self.alpha_col,
            Family::Beta => &mut self.beta_col,
            Family::Gamma => &mut self.gamma_col,
            Family::Sigma => &mut self.sigma_col,
        }
    }

    pub fn validate_shape(&self) -> Result<()> {
        let (n, t) = (self.n_rows(), self.n_cols());
        if n == 0 || t == 0 {
            return Err(Error::ShapeMismatch("empty multiplier set".into()));
        }
        for f in FAMILIES {
            if self.row(f).len() != n || self.col(f).len() != t {
                return Err(Error::ShapeMismatch(format!("{} arrays have inconsistent lengths", f.name())));
            }
        }
        Ok(())
    }

    /// Adds `c` to every row multiplier of `f` and subtracts it from every
    /// column multiplier; pairwise sums are unchanged.
    pub fn shift_gauge(&mut self, f: Family, c: f64) {
        self.row_mut(f).iter_mut().for_each(|v| *v += c);
        self.col_mut(f).iter_mut().for_each(|v| *v -= c);
    }

    /// Moves each family's gauge so that its first column multiplier is 0.
    pub fn canonicalize(&mut self) {
        for f in FAMILIES {
            let c = self.col(f)[0];
            self.shift_gauge(f, c);
        }
    }

    pub fn cell_sums(&self, i: usize, t: usize) -> CellSums {
        let b = match self.variant {
            Variant::WithMissing => self.beta_row[i] + self.beta_col[t],
            Variant::NoMissing => 0.0,
        };
        CellSums {
            a: self.alpha_row[i] + self.alpha_col[t],
            b,
            g: self.gamma_row[i] + self.gamma_col[t],
            s: self.sigma_row[i] + self.sigma_col[t],
        }
    }

    /// Cell state with some occupation states switched off.
    pub fn cell_state(&self, i: usize, t: usize, allowed: Allowed) -> Result<CellState> {
        let sums = self.cell_sums(i, t);
        let empty = allowed.empty && self.variant == Variant::WithMissing;
        let diverge = |what: &str| Error::DivergentPartition(format!("cell ({i}, {t}): {what} rate sum is not positive"));
        if allowed.plus && !(sums.g > 0.0) {
            return Err(diverge("positive"));
        }
        if allowed.minus && !(sums.s > 0.0) {
            return Err(diverge("negative"));
        }
        let ln_w = [
            if empty { 0.0 } else { f64::NEG_INFINITY },
            if allowed.plus { -sums.a - sums.g.ln() } else { f64::NEG_INFINITY },
            if allowed.minus { -sums.b - sums.s.ln() } else { f64::NEG_INFINITY },
        ];
        let ln_z = logsumexp3(ln_w);
        if !ln_z.is_finite() {
            return Err(Error::DivergentPartition(format!("cell ({i}, {t}) has no admissible state")));
        }
        let p = |l: f64| if l == f64::NEG_INFINITY { 0.0 } else { (l - ln_z).exp() };
        let marginal = CellMarginal {
            p_plus: p(ln_w[1]),
            p_minus: p(ln_w[2]),
            p_missing: p(ln_w[0]),
            lambda_plus: sums.g,
            lambda_minus: sums.s,
        };
        Ok(CellState { sums, ln_z, marginal })
    }

    /// `Z_it`.
    pub fn cell_partition(&self, i: usize, t: usize) -> Result<f64> {
        Ok(self.cell_state(i, t, Allowed::ALL)?.ln_z.exp())
    }

    pub fn marginal(&self, i: usize, t: usize) -> Result<CellMarginal> {
        Ok(self.cell_state(i, t, Allowed::ALL)?.marginal)
    }

    /// `ln Z = sum_it ln Z_it`.
    pub fn log_partition(&self) -> Result<f64> {
        let mut acc = 0.0;
        for i in 0..self.n_rows() {
            for t in 0..self.n_cols() {
                acc += self.cell_state(i, t, Allowed::ALL)?.ln_z;
            }
        }
        Ok(acc)
    }

    /// Temperature, energy and chemical potentials of cell `(i, t)`.
    pub fn physical_quantities(&self, i: usize, t: usize) -> Result<PhysicalQuantities> {
        let out = |message: String| Error::OutOfPhysicalRegion { row: i, col: t, message };
        if self.variant == Variant::NoMissing {
            return Err(out("the variant without missing data has no empty state".into()));
        }
        let c = self.cell_sums(i, t);
        if !(c.g > 0.0) || !(c.s > 0.0) {
            return Err(out(format!("rate sums must be positive (g={}, s={})", c.g, c.s)));
        }
        let denom = c.s.ln() + c.g.ln();
        if denom == 0.0 {
            return Err(out("product of rate sums equals one (infinite temperature)".into()));
        }
        let temperature = 1.0 / denom;
        let energy = 0.5 + 0.5 * temperature * (c.a + c.b);
        let mu2 = 0.5 * temperature * (c.a - c.b - (c.s / c.g).ln());
        Ok(PhysicalQuantities { temperature, energy, mu1: -mu2, mu2 })
    }
}

/// Per-cell partition factor `Z_it`.
pub fn cell_partition(ms: &MultiplierSet, i: usize, t: usize) -> Result<f64> {
    ms.cell_partition(i, t)
}

pub fn marginal(ms: &MultiplierSet, i: usize, t: usize) -> Result<CellMarginal> {
    ms.marginal(i, t)
}

pub fn physical_quantities(ms: &MultiplierSet, i: usize, t: usize) -> Result<PhysicalQuantities> {
    ms.physical_quantities(i, t)
}

/// `ln P(W) = -H(W) - ln Z` with every state allowed.
pub fn log_likelihood(data: &DataMatrix, ms: &MultiplierSet) -> Result<f64> {
    EnsembleModel::unconstrained(ms.clone())?.log_likelihood(data)
}

/// Expected margins with every state allowed.
pub fn expected_constraints(ms: &MultiplierSet) -> Result<MarginConstraints> {
    EnsembleModel::unconstrained(ms.clone())?.expected_constraints()
}

/// Margins on which the sign-count families (`alpha`, `beta`) act.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CountAxes {
    #[default]
    Both,
    Rows,
    Columns,
}

/// Which families are constrained, and whether the empty state exists.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub variant: Variant,
    pub alpha: bool,
    pub beta: bool,
    pub gamma: bool,
    pub sigma: bool,
    #[serde(default)]
    pub count_axes: CountAxes,
}

impl ConstraintSpec {
    /// All eight margin families, missing data allowed.
    pub fn full() -> Self {
        Self { variant: Variant::WithMissing, alpha: true, beta: true, gamma: true, sigma: true, count_axes: CountAxes::Both }
    }

    /// Complete data: positive counts and both sums (`beta` is redundant).
    pub fn no_missing() -> Self {
        Self { variant: Variant::NoMissing, alpha: true, beta: false, gamma: true, sigma: true, count_axes: CountAxes::Both }
    }

    /// Complete data with only the positive and negative sums.
    pub fn sums_only() -> Self {
        Self { variant: Variant::NoMissing, alpha: false, beta: false, gamma: true, sigma: true, count_axes: CountAxes::Both }
    }

    /// Complete data with both sums and the positive counts of columns.
    pub fn sums_and_column_counts() -> Self {
        Self { variant: Variant::NoMissing, alpha: true, beta: false, gamma: true, sigma: true, count_axes: CountAxes::Columns }
    }

    /// Whether family `f` constrains rows (`row == true`) or columns.
    pub fn is_active_on(&self, f: Family, row: bool) -> bool {
        let axis_ok = match f {
            Family::Alpha | Family::Beta => match self.count_axes {
                CountAxes::Both => true,
                CountAxes::Rows => row,
                CountAxes::Columns => !row,
            },
            _ => true,
        };
        axis_ok && self.is_active(f)
    }

    pub fn is_active(&self, f: Family) -> bool {
        match f {
            Family::Alpha => self.alpha,
            Family::Beta => self.beta && self.variant == Variant::WithMissing,
            Family::Gamma => self.gamma,
            Family::Sigma => self.sigma,
        }
    }

    pub fn active_families(&self) -> Vec<Family> {
        FAMILIES.into_iter().filter(|&f| self.is_active(f)).collect()
    }

    /// Number of constraints (and multipliers before gauge fixing):
    /// one per active family per row and per column.
    pub fn multiplier_count(&self, n: usize, t: usize) -> usize {
        self.active_families()
            .into_iter()
            .map(|f| usize::from(self.is_active_on(f, true)) * n + usize::from(self.is_active_on(f, false)) * t)
            .sum()
    }
}

/// Occupation states that the margins rule out, per row and column.
///
/// A species is excluded from a row (column) whose count for it is zero;
/// the empty state is excluded wherever a row or column is fully observed.
/// `forced` lists cells whose state the constrained counts pin down, e.g.
/// a row with one empty entry that meets a single column admitting one.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Blocking {
    pub plus_row: Vec<usize>,
    pub minus_row: Vec<usize>,
    pub empty_row: Vec<usize>,
    pub plus_col: Vec<usize>,
    pub minus_col: Vec<usize>,
    pub empty_col: Vec<usize>,
    #[serde(default)]
    pub forced: Vec<ForcedCell>,
}

/// Occupation of a single cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Occupancy {
    Empty,
    Plus,
    Minus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForcedCell {
    pub row: usize,
    pub col: usize,
    pub state: Occupancy,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct BlockMask {
    pub plus_row: Vec<bool>,
    pub minus_row: Vec<bool>,
    pub empty_row: Vec<bool>,
    pub plus_col: Vec<bool>,
    pub minus_col: Vec<bool>,
    pub empty_col: Vec<bool>,
    /// Row-major overrides for forced cells.
    pub cells: Vec<Option<Occupancy>>,
    pub n_cols: usize,
}

impl BlockMask {
    fn from_lists(b: &Blocking, n: usize, t: usize) -> Self {
        let mask = |list: &[usize], len: usize| {
            let mut m = vec![false; len];
            for &k in list {
                if k < len {
                    m[k] = true;
                }
            }
            m
        };
        Self {
            plus_row: mask(&b.plus_row, n),
            minus_row: mask(&b.minus_row, n),
            empty_row: mask(&b.empty_row, n),
            plus_col: mask(&b.plus_col, t),
            minus_col: mask(&b.minus_col, t),
            empty_col: mask(&b.empty_col, t),
            cells: {
                let mut cells = vec![None; n * t];
                for f in &b.forced {
                    if f.row < n && f.col < t {
                        cells[f.row * t + f.col] = Some(f.state);
                    }
                }
                cells
            },
            n_cols: t,
        }
    }

    pub fn allowed(&self, i: usize, t: usize) -> Allowed {
        if let Some(state) = self.cells.get(i * self.n_cols + t).copied().flatten() {
            return Allowed {
                empty: state == Occupancy::Empty,
                plus: state == Occupancy::Plus,
                minus: state == Occupancy::Minus,
            };
        }
        Allowed {
            empty: !(self.empty_row[i] || self.empty_col[t]),
            plus: !(self.plus_row[i] || self.plus_col[t]),
            minus: !(self.minus_row[i] || self.minus_col[t]),
        }
    }
}

impl Blocking {
    pub fn from_margins(spec: &ConstraintSpec, m: &MarginConstraints) -> Self {
        let (n, t) = (m.n_rows(), m.n_cols());
        let pick = |len: usize, f: &dyn Fn(usize) -> bool| (0..len).filter(|&k| f(k)).collect::<Vec<_>>();
        let full_row = |i: usize| m.n_obs_row[i] >= t as f64;
        let full_col = |c: usize| m.m_obs_col[c] >= n as f64;
        let empty_everywhere = spec.variant == Variant::NoMissing;
        Self {
            plus_row: pick(n, &|i| m.n_plus_row[i] == 0.0),
            minus_row: pick(n, &|i| m.n_minus_row[i] == 0.0),
            empty_row: pick(n, &|i| empty_everywhere || full_row(i)),
            plus_col: pick(t, &|c| m.m_plus_col[c] == 0.0),
            minus_col: pick(t, &|c| m.m_minus_col[c] == 0.0),
            empty_col: pick(t, &|c| empty_everywhere || full_col(c)),
            forced: Vec::new(),
        }
        .propagate(spec, m)
    }

    /// Pins cells whose state follows from the counts: when a row or
    /// column admits a species in exactly as many cells as its count, every
    /// one of those cells holds it. Repeats until nothing changes.
    fn propagate(mut self, spec: &ConstraintSpec, m: &MarginConstraints) -> Self {
        let (n, t) = (m.n_rows(), m.n_cols());
        let no_missing = spec.variant == Variant::NoMissing;
        // species whose per-line count is fixed by the active constraints
        let known = |row: bool| {
            let a = spec.is_active_on(Family::Alpha, row);
            let b = spec.is_active_on(Family::Beta, row);
            [a && b && !no_missing, a, b || (a && no_missing)]
        };
        let (known_row, known_col) = (known(true), known(false));
        if !known_row.iter().chain(&known_col).any(|&k| k) {
            return self;
        }
        let row_counts = |i: usize| [t as f64 - m.n_obs_row[i], m.n_plus_row[i], m.n_minus_row[i]];
        let col_counts = |c: usize| [n as f64 - m.m_obs_col[c], m.m_plus_col[c], m.m_minus_col[c]];
        let states = [Occupancy::Empty, Occupancy::Plus, Occupancy::Minus];
        let bits = |a: Allowed| [a.empty, a.plus, a.minus];
        let mut mask = self.mask(n, t);
        loop {
            let mut changed = false;
            let lines = (0..n)
                .map(|i| (known_row, row_counts(i), (0..t).map(|c| (i, c)).collect::<Vec<_>>()))
                .chain((0..t).map(|c| (known_col, col_counts(c), (0..n).map(|i| (i, c)).collect::<Vec<_>>())));
            let lines: Vec<_> = lines.collect();
            for (known, counts, cells) in lines {
                for k in 0..3 {
                    if !known[k] {
                        continue;
                    }
                    let open: Vec<(usize, usize)> =
                        cells.iter().copied().filter(|&(i, c)| bits(mask.allowed(i, c))[k]).collect();
                    if open.is_empty() || open.len() as f64 != counts[k] {
                        continue;
                    }
                    for (i, c) in open {
                        let a = bits(mask.allowed(i, c));
                        if a.iter().filter(|&&x| x).count() > 1 {
                            mask.cells[i * t + c] = Some(states[k]);
                            self.forced.push(ForcedCell { row: i, col: c, state: states[k] });
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                break;
            }
        }
        self.forced.sort_by_key(|f| (f.row, f.col));
        self
    }

    pub fn is_empty(&self) -> bool {
        self.plus_row.is_empty()
            && self.minus_row.is_empty()
            && self.empty_row.is_empty()
            && self.plus_col.is_empty()
            && self.minus_col.is_empty()
            && self.empty_col.is_empty()
            && self.forced.is_empty()
    }

    pub(crate) fn mask(&self, n: usize, t: usize) -> BlockMask {
        BlockMask::from_lists(self, n, t)
    }
}

/// Constraint specification, multipliers and the states excluded by the
/// source margins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub constraint_spec: ConstraintSpec,
    pub multipliers: MultiplierSet,
    pub blocking: Blocking,
    pub source_margins: Option<MarginConstraints>,
    pub dropped_constraints: Vec<String>,
    pub gauge: String,
}

impl EnsembleModel {
    /// Model over a bare multiplier set: all families active, nothing blocked.
    pub fn unconstrained(ms: MultiplierSet) -> Result<Self> {
        ms.validate_shape()?;
        let spec = ConstraintSpec {
            variant: ms.variant,
            alpha: true,
            beta: ms.variant == Variant::WithMissing,
            gamma: true,
            sigma: true,
            count_axes: CountAxes::Both,
        };
        Ok(Self {
            constraint_spec: spec,
            multipliers: ms,
            blocking: Blocking::default(),
            source_margins: None,
            dropped_constraints: Vec::new(),
            gauge: "first column multiplier of each family is zero".into(),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.multipliers.n_rows()
    }

    pub fn n_cols(&self) -> usize {
        self.multipliers.n_cols()
    }

    pub(crate) fn mask(&self) -> BlockMask {
        self.blocking.mask(self.n_rows(), self.n_cols())
    }

    pub fn cell_state(&self, i: usize, t: usize) -> Result<CellState> {
        let mask = self.mask();
        self.multipliers.cell_state(i, t, mask.allowed(i, t))
    }

    fn states(&self) -> Result<Vec<CellState>> {
        let (n, t) = (self.n_rows(), self.n_cols());
        let mask = self.mask();
        (0..n * t)
            .into_par_iter()
            .map(|k| self.multipliers.cell_state(k / t, k % t, mask.allowed(k / t, k % t)))
            .collect()
    }

    pub fn marginal(&self, i: usize, t: usize) -> Result<CellMarginal> {
        Ok(self.cell_state(i, t)?.marginal)
    }

    /// All cell marginals in row-major order.
    pub fn marginals(&self) -> Result<Vec<CellMarginal>> {
        Ok(self.states()?.into_iter().map(|s| s.marginal).collect())
    }

    pub fn log_partition(&self) -> Result<f64> {
        Ok(self.states()?.iter().map(|s| s.ln_z).sum())
    }

    /// Matrix of expected values `<W_it>`.
    pub fn mean_matrix(&self) -> Result<Vec<f64>> {
        Ok(self.marginals()?.iter().map(|m| m.mean()).collect())
    }

    pub fn expected_constraints(&self) -> Result<MarginConstraints> {
        let (n, t) = (self.n_rows(), self.n_cols());
        let states = self.states()?;
        let mut out = MarginConstraints::zeros(n, t);
        for (k, st) in states.iter().enumerate() {
            let (i, c) = (k / t, k % t);
            let m = &st.marginal;
            let sp = term(m.p_plus, m.lambda_plus);
            let sm = term(m.p_minus, m.lambda_minus);
            out.n_plus_row[i] += m.p_plus;
            out.n_minus_row[i] += m.p_minus;
            out.s_plus_row[i] += sp;
            out.s_minus_row[i] += sm;
            out.n_obs_row[i] += m.p_plus + m.p_minus;
            out.m_plus_col[c] += m.p_plus;
            out.m_minus_col[c] += m.p_minus;
            out.r_plus_col[c] += sp;
            out.r_minus_col[c] += sm;
            out.m_obs_col[c] += m.p_plus + m.p_minus;
        }
        Ok(out)
    }

    /// `ln P(data)`; `-inf` when the data occupy an excluded state.
    pub fn log_likelihood(&self, data: &DataMatrix) -> Result<f64> {
        if data.shape() != (self.n_rows(), self.n_cols()) {
            return Err(Error::ShapeMismatch(format!(
                "data is {:?}, model is {:?}",
                data.shape(),
                (self.n_rows(), self.n_cols())
            )));
        }
        let t = self.n_cols();
        let states = self.states()?;
        let mut acc = 0.0;
        for (k, st) in states.iter().enumerate() {
            let m = &st.marginal;
            let c = &st.sums;
            let e = match data.get(k / t, k % t) {
                None if m.p_missing > 0.0 => 0.0,
                Some(x) if x >= 0.0 && m.p_plus > 0.0 => c.a + c.g * x,
                Some(x) if x < 0.0 && m.p_minus > 0.0 => c.b - c.s * x,
                _ => return Ok(f64::NEG_INFINITY),
            };
            acc += -e - st.ln_z;
        }
        Ok(acc)
    }

    /// `H` evaluated on margins: `sum over families of multiplier * margin`.
    pub fn energy_of(&self, m: &MarginConstraints) -> f64 {
        let ms = &self.multipliers;
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut h = dot(&ms.alpha_row, &m.n_plus_row)
            + dot(&ms.alpha_col, &m.m_plus_col)
            + dot(&ms.gamma_row, &m.s_plus_row)
            + dot(&ms.gamma_col, &m.r_plus_col)
            + dot(&ms.sigma_row, &m.s_minus_row)
            + dot(&ms.sigma_col, &m.r_minus_col);
        if ms.variant == Variant::WithMissing {
            h += dot(&ms.beta_row, &m.n_minus_row) + dot(&ms.beta_col, &m.m_minus_col);
        }
        h
    }

    /// Gibbs entropy `ln Z + H(margins)` at the source margins.
    pub fn entropy(&self) -> Result<f64> {
        let m = self.source_margins.as_ref().ok_or(Error::NotCalibrated)?;
        Ok(self.log_partition()? + self.energy_of(m))
    }

    /// One matrix drawn cell by cell from stream `stream` of `seed`.
    pub fn sample_matrix(&self, seed: u64, stream: u64) -> Result<DataMatrix> {
        let marginals = self.marginals()?;
        Ok(self.draw_with(&marginals, seed, stream))
    }

    /// Like [`EnsembleModel::sample_matrix`] with the cell marginals
    /// precomputed, for loops over many replicates.
    pub fn draw_with(&self, marginals: &[CellMarginal], seed: u64, stream: u64) -> DataMatrix {
        let (n, t) = (self.n_rows(), self.n_cols());
        let mut rng = stream_rng(seed, stream);
        let mut values = vec![0.0; n * t];
        let mut mask = vec![true; n * t];
        for (k, m) in marginals.iter().enumerate() {
            let u: f64 = rng.gen();
            let v: f64 = rng.gen();
            if u < m.p_plus {
                values[k] = -(-v).ln_1p() / m.lambda_plus;
            } else if u < m.p_plus + m.p_minus {
                values[k] = (-v).ln_1p() / m.lambda_minus;
            } else {
                mask[k] = false;
            }
        }
        let rows: Vec<Vec<f64>> = values.chunks(t).map(|c| c.to_vec()).collect();
        let masks: Vec<Vec<bool>> = mask.chunks(t).map(|c| c.to_vec()).collect();
        DataMatrix::from_rows_masked(rows, masks).expect("shape is consistent")
    }

    /// `count` matrices; replicate `r` uses stream `r`, so the result does
    /// not depend on the number of threads.
    pub fn sample_matrices(&self, count: usize, seed: u64) -> Result<Vec<DataMatrix>> {
        let marginals = self.marginals()?;
        Ok((0..count)
            .into_par_iter()
            .map(|r| self.draw_with(&marginals, seed, r as u64))
            .collect())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s)?;
        m.multipliers.validate_shape()?;
        Ok(m)
    }
}

/// Draws one matrix from a model.
pub fn sample_matrix(model: &EnsembleModel, seed: u64) -> Result<DataMatrix> {
    model.sample_matrix(seed, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::adaptive_simpson;
    use proptest::prelude::*;

    fn symmetric(n: usize, t: usize) -> MultiplierSet {
        MultiplierSet::uniform(n, t, Variant::WithMissing, 1.0, 1.0)
    }

    #[test]
    fn trivial_partition_values() {
        let ms = symmetric(1, 1);
        assert!((ms.cell_partition(0, 0).unwrap() - 3.0).abs() < 1e-15);
        let m = ms.marginal(0, 0).unwrap();
        for p in [m.p_plus, m.p_minus, m.p_missing] {
            assert!((p - 1.0 / 3.0).abs() < 1e-15);
        }
        let nm = MultiplierSet::uniform(1, 1, Variant::NoMissing, 1.0, 1.0);
        assert!((nm.cell_partition(0, 0).unwrap() - 2.0).abs() < 1e-15);
        assert!((nm.marginal(0, 0).unwrap().p_plus - 0.5).abs() < 1e-15);
    }

    #[test]
    fn nonpositive_rate_diverges() {
        let mut ms = symmetric(1, 2);
        ms.gamma_col[1] = -0.6;
        assert!(matches!(ms.cell_partition(0, 1), Err(Error::DivergentPartition(_))));
        assert!(ms.cell_partition(0, 0).is_ok());
    }

    #[test]
    fn expected_margins_trivial() {
        let ms = symmetric(1, 3);
        let e = expected_constraints(&ms).unwrap();
        assert!((e.n_plus_row[0] - 1.0).abs() < 1e-14);
        assert!((e.s_plus_row[0] - 1.0).abs() < 1e-14);
        let rows: f64 = e.n_plus_row.iter().sum();
        let cols: f64 = e.m_plus_col.iter().sum();
        assert!((rows - cols).abs() < 1e-14);
    }

    #[test]
    fn likelihood_trivial_cases() {
        let mut ms = symmetric(1, 1);
        ms.alpha_row[0] = 0.3;
        ms.gamma_row[0] = 0.9;
        let z = ms.cell_partition(0, 0).unwrap();
        let missing = DataMatrix::from_rows(vec![vec![f64::NAN]]).unwrap();
        assert!((log_likelihood(&missing, &ms).unwrap() + z.ln()).abs() < 1e-14);
        let x = 0.7;
        let d = DataMatrix::from_rows(vec![vec![x]]).unwrap();
        let want = -0.3 - 1.4 * x - z.ln();
        assert!((log_likelihood(&d, &ms).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn temperature_example() {
        let mut ms = symmetric(1, 1);
        let e = std::f64::consts::E;
        ms.gamma_row[0] = 0.0;
        ms.gamma_col[0] = 1.0;
        ms.sigma_row[0] = e - 1.0;
        ms.sigma_col[0] = 1.0;
        let pq = ms.physical_quantities(0, 0).unwrap();
        assert!((pq.temperature - 1.0).abs() < 1e-15);
        let sym = symmetric(2, 2);
        ms = sym.clone();
        ms.gamma_row.fill(0.7);
        ms.sigma_row.fill(0.7);
        let pq = ms.physical_quantities(1, 1).unwrap();
        assert!(pq.mu1.abs() < 1e-15 && pq.mu2.abs() < 1e-15);
        // g * s = 1 has no finite temperature
        assert!(matches!(sym.physical_quantities(0, 0), Err(Error::OutOfPhysicalRegion { .. })));
    }

    #[test]
    fn marginal_normalizes_by_quadrature() {
        let m = CellMarginal { p_plus: 0.3, p_minus: 0.5, p_missing: 0.2, lambda_plus: 1.7, lambda_minus: 0.6 };
        let mass = adaptive_simpson(&|x: f64| m.density(x), -80.0, 0.0, 1e-12)
            + adaptive_simpson(&|x: f64| m.density(x), 0.0, 40.0, 1e-12);
        assert!((mass + m.p_missing - 1.0).abs() < 1e-8);
        let mean = adaptive_simpson(&|x: f64| x * m.density(x), -80.0, 0.0, 1e-12)
            + adaptive_simpson(&|x: f64| x * m.density(x), 0.0, 40.0, 1e-12);
        assert!((mean - m.mean()).abs() < 1e-8);
        for p in [0.01, 0.4, 0.7, 0.99] {
            let q = m.quantile(p);
            assert!((m.cdf(q) / 0.8 - p).abs() < 1e-12);
        }
    }

    #[test]
    fn blocked_states_have_zero_probability() {
        let data = DataMatrix::from_rows(vec![vec![1.0, 2.0], vec![-1.0, f64::NAN]]).unwrap();
        let margins = crate::data::compute_margins(&data);
        let blocking = Blocking::from_margins(&ConstraintSpec::full(), &margins);
        assert_eq!(blocking.minus_row, vec![0]);
        assert_eq!(blocking.plus_row, vec![1]);
        assert_eq!(blocking.empty_row, vec![0]);
        assert_eq!(blocking.empty_col, vec![0]);
        let mut model = EnsembleModel::unconstrained(symmetric(2, 2)).unwrap();
        model.blocking = blocking;
        let m = model.marginal(0, 0).unwrap();
        assert_eq!(m.p_minus, 0.0);
        assert_eq!(m.p_missing, 0.0);
        assert_eq!(m.p_plus, 1.0);
        let m = model.marginal(1, 1).unwrap();
        assert_eq!(m.p_plus, 0.0);
        assert!(model.log_likelihood(&data).unwrap().is_finite());
    }

    #[test]
    fn counts_pin_down_cells() {
        // row 1 has one missing entry and only column 2 admits one
        let data = DataMatrix::from_rows(vec![
            vec![1.0, -1.0, 2.0],
            vec![-1.0, 1.0, f64::NAN],
            vec![2.0, -2.0, f64::NAN],
        ])
        .unwrap();
        let margins = crate::data::compute_margins(&data);
        let blocking = Blocking::from_margins(&ConstraintSpec::full(), &margins);
        assert!(blocking.forced.contains(&ForcedCell { row: 1, col: 2, state: Occupancy::Empty }));
        assert!(blocking.forced.contains(&ForcedCell { row: 2, col: 2, state: Occupancy::Empty }));
        // without count constraints nothing is pinned
        let loose = Blocking::from_margins(&ConstraintSpec::sums_only(), &margins);
        assert!(loose.forced.is_empty());
        let mut model = EnsembleModel::unconstrained(symmetric(3, 3)).unwrap();
        model.blocking = blocking;
        assert_eq!(model.marginal(1, 2).unwrap().p_missing, 1.0);
        assert!(model.log_likelihood(&data).unwrap().is_finite());
    }

    #[test]
    fn all_missing_model_samples_all_missing() {
        let mut ms = symmetric(2, 3);
        ms.alpha_row.fill(800.0);
        ms.beta_row.fill(800.0);
        let model = EnsembleModel::unconstrained(ms).unwrap();
        let w = model.sample_matrix(5, 0).unwrap();
        assert_eq!(w.observed_count(), 0);
    }

    #[test]
    fn json_round_trip() {
        let mut model = EnsembleModel::unconstrained(symmetric(2, 3)).unwrap();
        model.multipliers.alpha_row[1] = 0.123_456_789_012_345_6;
        let back = EnsembleModel::from_json(&model.to_json().unwrap()).unwrap();
        assert_eq!(back, model);
    }

    fn random_set() -> impl Strategy<Value = MultiplierSet> {
        (
            prop::collection::vec(-1.5..1.5f64, 10),
            prop::collection::vec(0.2..2.0f64, 10),
        )
            .prop_map(|(counts, rates)| {
                let mut ms = MultiplierSet::zeros(2, 3, Variant::WithMissing);
                ms.alpha_row = counts[0..2].to_vec();
                ms.beta_row = counts[2..4].to_vec();
                ms.alpha_col = counts[4..7].to_vec();
                ms.beta_col = counts[7..10].to_vec();
                ms.gamma_row = rates[0..2].to_vec();
                ms.sigma_row = rates[2..4].to_vec();
                ms.gamma_col = rates[4..7].to_vec();
                ms.sigma_col = rates[7..10].to_vec();
                ms
            })
    }

    proptest! {
        #[test]
        fn gauge_shifts_leave_everything_unchanged(ms in random_set(), c in -3.0..3.0f64) {
            let data = DataMatrix::from_rows(vec![vec![0.5, -1.0, f64::NAN], vec![2.0, 0.1, -0.3]]).unwrap();
            let base = log_likelihood(&data, &ms).unwrap();
            for f in FAMILIES {
                let mut shifted = ms.clone();
                // rate families: keep every pairwise sum positive
                let c = if matches!(f, Family::Gamma | Family::Sigma) { c.abs().min(0.1) } else { c };
                shifted.shift_gauge(f, c);
                let l = log_likelihood(&data, &shifted).unwrap();
                prop_assert!((l - base).abs() <= 1e-12 * base.abs().max(1.0));
                for i in 0..2 {
                    for t in 0..3 {
                        let a = ms.marginal(i, t).unwrap();
                        let b = shifted.marginal(i, t).unwrap();
                        prop_assert!((a.p_plus - b.p_plus).abs() < 1e-12);
                        prop_assert!((a.p_minus - b.p_minus).abs() < 1e-12);
                        prop_assert!((a.lambda_plus - b.lambda_plus).abs() < 1e-12);
                    }
                }
            }
        }

        #[test]
        fn reconstruction_from_physical_quantities(ms in random_set()) {
            for i in 0..2 {
                for t in 0..3 {
                    if let Ok(pq) = ms.physical_quantities(i, t) {
                        let z = ms.cell_partition(i, t).unwrap();
                        prop_assert!((pq.partition() - z).abs() <= 1e-10 * z);
                        prop_assert_eq!(pq.mu1, -pq.mu2);
                    }
                }
            }
        }

        #[test]
        fn probabilities_sum_to_one(ms in random_set()) {
            let m = ms.marginal(1, 2).unwrap();
            prop_assert!((m.p_plus + m.p_minus + m.p_missing - 1.0).abs() < 1e-14);
        }

        #[test]
        fn likelihood_gradient_is_expected_minus_empirical(ms in random_set()) {
            let data = DataMatrix::from_rows(vec![vec![0.5, -1.0, f64::NAN], vec![2.0, 0.1, -0.3]]).unwrap();
            let emp = crate::data::compute_margins(&data);
            let exp = expected_constraints(&ms).unwrap();
            let h = 1e-6;
            let fd = |f: Family, row: bool, k: usize| {
                let mut up = ms.clone();
                let mut dn = ms.clone();
                if row { up.row_mut(f)[k] += h; dn.row_mut(f)[k] -= h; } else { up.col_mut(f)[k] += h; dn.col_mut(f)[k] -= h; }
                (log_likelihood(&data, &up).unwrap() - log_likelihood(&data, &dn).unwrap()) / (2.0 * h)
            };
            let check = |fd: f64, an: f64| (fd - an).abs() <= 1e-5 * an.abs().max(1.0);
            prop_assert!(check(fd(Family::Alpha, true, 1), exp.n_plus_row[1] - emp.n_plus_row[1]));
            prop_assert!(check(fd(Family::Beta, false, 2), exp.m_minus_col[2] - emp.m_minus_col[2]));
            prop_assert!(check(fd(Family::Gamma, true, 0), exp.s_plus_row[0] - emp.s_plus_row[0]));
            prop_assert!(check(fd(Family::Sigma, false, 1), exp.r_minus_col[1] - emp.r_minus_col[1]));
        }
    }
}
