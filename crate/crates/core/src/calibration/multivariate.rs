use super::solver::{maximize, Concave};
use super::univariate::solve_spd;
use super::{CalibrationOptions, CalibrationResult, Method, Residual};
use crate::data::MarginConstraints;
use crate::error::{Error, Result};
use crate::multivariate::{
    Allowed, BlockMask, Blocking, ConstraintSpec, EnsembleModel, Family, MultiplierSet, Variant, FAMILIES,
};
use crate::rng::stream_rng;
use nalgebra::{DMatrix, DVector, Matrix4, Vector4};
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

const ROW_NAMES: [&str; 4] = ["N+", "N-", "S+", "S-"];
const COL_NAMES: [&str; 4] = ["M+", "M-", "R+", "R-"];

/// Parameters are laid out block-wise: four per row, then four per column.
struct Layout {
    n: usize,
    t: usize,
}

impl Layout {
    fn row(&self, i: usize, f: usize) -> usize {
        4 * i + f
    }

    fn col(&self, c: usize, f: usize) -> usize {
        4 * (self.n + c) + f
    }

    fn len(&self) -> usize {
        4 * (self.n + self.t)
    }
}

fn to_full(ms: &MultiplierSet, lay: &Layout) -> Vec<f64> {
    let mut p = vec![0.0; lay.len()];
    for f in FAMILIES {
        for (i, v) in ms.row(f).iter().enumerate() {
            p[lay.row(i, f.index())] = *v;
        }
        for (c, v) in ms.col(f).iter().enumerate() {
            p[lay.col(c, f.index())] = *v;
        }
    }
    p
}

fn to_set(p: &[f64], lay: &Layout, variant: Variant) -> MultiplierSet {
    let mut ms = MultiplierSet::zeros(lay.n, lay.t, variant);
    for f in FAMILIES {
        for i in 0..lay.n {
            ms.row_mut(f)[i] = p[lay.row(i, f.index())];
        }
        for c in 0..lay.t {
            ms.col_mut(f)[c] = p[lay.col(c, f.index())];
        }
    }
    ms
}

fn targets(m: &MarginConstraints, lay: &Layout) -> Vec<f64> {
    let mut v = vec![0.0; lay.len()];
    let rows = [&m.n_plus_row, &m.n_minus_row, &m.s_plus_row, &m.s_minus_row];
    let cols = [&m.m_plus_col, &m.m_minus_col, &m.r_plus_col, &m.r_minus_col];
    for f in 0..4 {
        for i in 0..lay.n {
            v[lay.row(i, f)] = rows[f][i];
        }
        for c in 0..lay.t {
            v[lay.col(c, f)] = cols[f][c];
        }
    }
    v
}

/// Per-cell covariance of `(A+, A-, w+, w-)`.
fn cell_fisher(p: f64, q: f64, g: f64, s: f64) -> (Vector4<f64>, Matrix4<f64>) {
    let u = if p > 0.0 { 1.0 / g } else { 0.0 };
    let v = if q > 0.0 { 1.0 / s } else { 0.0 };
    let mean = Vector4::new(p, q, p * u, q * v);
    let mut second = Matrix4::zeros();
    second[(0, 0)] = p;
    second[(1, 1)] = q;
    second[(0, 2)] = p * u;
    second[(2, 0)] = p * u;
    second[(1, 3)] = q * v;
    second[(3, 1)] = q * v;
    second[(2, 2)] = 2.0 * p * u * u;
    second[(3, 3)] = 2.0 * q * v * v;
    (mean, second - mean * mean.transpose())
}

struct Problem {
    lay: Layout,
    variant: Variant,
    mask: BlockMask,
    target: Vec<f64>,
    /// Full parameter vector; entries that are not free keep these values.
    base: Vec<f64>,
    free: Vec<usize>,
    is_free: Vec<bool>,
    /// Ids whose constraints are checked for convergence.
    active: Vec<usize>,
    barrier: f64,
}

struct Eval {
    ln_l: f64,
    expected: Vec<f64>,
    fisher: Vec<Matrix4<f64>>,
    barrier_grad: Vec<f64>,
}

impl Problem {
    fn full(&self, x: &[f64]) -> Vec<f64> {
        let mut p = self.base.clone();
        for (&id, &v) in self.free.iter().zip(x) {
            p[id] = v;
        }
        p
    }

    fn allowed(&self, i: usize, c: usize) -> Allowed {
        self.mask.allowed(i, c)
    }

    fn evaluate(&self, x: &[f64], with_fisher: bool) -> Option<Eval> {
        let p = self.full(x);
        let ms = to_set(&p, &self.lay, self.variant);
        let (n, t) = (self.lay.n, self.lay.t);
        let mu = self.barrier;
        let cells: Option<Vec<(f64, Vector4<f64>, Matrix4<f64>, f64, f64)>> = (0..n * t)
            .into_par_iter()
            .map(|k| {
                let (i, c) = (k / t, k % t);
                let allowed = self.allowed(i, c);
                let st = ms.cell_state(i, c, allowed).ok()?;
                let m = st.marginal;
                let (mean, mut fisher) = cell_fisher(m.p_plus, m.p_minus, st.sums.g, st.sums.s);
                let mut bar = 0.0;
                let (mut bg, mut bs) = (0.0, 0.0);
                if mu > 0.0 {
                    if allowed.plus {
                        bar += mu * st.sums.g.ln();
                        bg = mu / st.sums.g;
                        fisher[(2, 2)] += mu / (st.sums.g * st.sums.g);
                    }
                    if allowed.minus {
                        bar += mu * st.sums.s.ln();
                        bs = mu / st.sums.s;
                        fisher[(3, 3)] += mu / (st.sums.s * st.sums.s);
                    }
                }
                let fisher = if with_fisher { fisher } else { Matrix4::zeros() };
                Some((st.ln_z - bar, mean, fisher, bg, bs))
            })
            .collect();
        let cells = cells?;
        let mut expected = vec![0.0; self.lay.len()];
        let mut barrier_grad = vec![0.0; self.lay.len()];
        let mut ln_z = 0.0;
        for (k, (lz, mean, _, bg, bs)) in cells.iter().enumerate() {
            let (i, c) = (k / t, k % t);
            ln_z += lz;
            for f in 0..4 {
                expected[self.lay.row(i, f)] += mean[f];
                expected[self.lay.col(c, f)] += mean[f];
            }
            for (f, b) in [(2, bg), (3, bs)] {
                barrier_grad[self.lay.row(i, f)] += b;
                barrier_grad[self.lay.col(c, f)] += b;
            }
        }
        let energy: f64 = p.iter().zip(&self.target).map(|(a, b)| a * b).sum();
        let ln_l = -energy - ln_z;
        if !ln_l.is_finite() {
            return None;
        }
        let fisher = if with_fisher { cells.into_iter().map(|c| c.2).collect() } else { Vec::new() };
        Some(Eval { ln_l, expected, fisher, barrier_grad })
    }

    fn full_gradient(&self, ev: &Eval) -> Vec<f64> {
        (0..self.lay.len())
            .map(|id| {
                if self.is_free[id] {
                    ev.expected[id] - self.target[id] + ev.barrier_grad[id]
                } else {
                    0.0
                }
            })
            .collect()
    }

    fn residual_of(&self, expected: &[f64]) -> f64 {
        self.active
            .iter()
            .map(|&id| (expected[id] - self.target[id]).abs() / self.target[id].abs().max(1.0))
            .fold(0.0, f64::max)
    }

    fn mask_vec(&self, block: usize) -> Vector4<f64> {
        Vector4::from_fn(|f, _| if self.is_free[4 * block + f] { 1.0 } else { 0.0 })
    }

    /// Solves the block system `(-H) d = g` by eliminating the larger side.
    fn block_newton(&self, ev: &Eval, grad: &[f64]) -> Option<Vec<f64>> {
        let (n, t) = (self.lay.n, self.lay.t);
        let masked = |m: &Matrix4<f64>, a: &Vector4<f64>, b: &Vector4<f64>| {
            Matrix4::from_fn(|r, c| m[(r, c)] * a[r] * b[c])
        };
        let row_masks: Vec<Vector4<f64>> = (0..n).map(|i| self.mask_vec(i)).collect();
        let col_masks: Vec<Vector4<f64>> = (0..t).map(|c| self.mask_vec(n + c)).collect();
        let mut row_blocks = vec![Matrix4::zeros(); n];
        let mut col_blocks = vec![Matrix4::zeros(); t];
        for (k, f) in ev.fisher.iter().enumerate() {
            row_blocks[k / t] += f;
            col_blocks[k % t] += f;
        }
        let finish = |b: Matrix4<f64>, m: &Vector4<f64>| {
            let mut out = masked(&b, m, m);
            for f in 0..4 {
                if m[f] == 0.0 {
                    out[(f, f)] = 1.0;
                }
            }
            out
        };
        let row_blocks: Vec<Matrix4<f64>> = row_blocks.into_iter().zip(&row_masks).map(|(b, m)| finish(b, m)).collect();
        let col_blocks: Vec<Matrix4<f64>> = col_blocks.into_iter().zip(&col_masks).map(|(b, m)| finish(b, m)).collect();
        let g_row: Vec<Vector4<f64>> = (0..n).map(|i| Vector4::from_column_slice(&grad[4 * i..4 * i + 4])).collect();
        let g_col: Vec<Vector4<f64>> =
            (0..t).map(|c| Vector4::from_column_slice(&grad[4 * (n + c)..4 * (n + c) + 4])).collect();

        // cross block between small-side block k and large-side block j
        let rows_small = n <= t;
        let cross = |k: usize, j: usize| -> Matrix4<f64> {
            if rows_small {
                masked(&ev.fisher[k * t + j], &row_masks[k], &col_masks[j])
            } else {
                masked(&ev.fisher[j * t + k], &row_masks[j], &col_masks[k]).transpose()
            }
        };
        let (small, large, g_small, g_large) = if rows_small {
            (&row_blocks, &col_blocks, &g_row, &g_col)
        } else {
            (&col_blocks, &row_blocks, &g_col, &g_row)
        };
        let ns = small.len();
        let inv_large: Vec<Matrix4<f64>> = large.iter().map(|b| invert4(b)).collect::<Option<Vec<_>>>()?;

        let schur_rows: Vec<(Vec<Matrix4<f64>>, Vector4<f64>)> = (0..ns)
            .into_par_iter()
            .map(|k1| {
                let mut row = vec![Matrix4::zeros(); ns];
                row[k1] = small[k1];
                let mut rhs = g_small[k1];
                for (j, dinv) in inv_large.iter().enumerate() {
                    let w = cross(k1, j) * dinv;
                    rhs -= w * g_large[j];
                    for (k2, slot) in row.iter_mut().enumerate() {
                        *slot -= w * cross(k2, j).transpose();
                    }
                }
                (row, rhs)
            })
            .collect();
        let dim = 4 * ns;
        let mut s = DMatrix::zeros(dim, dim);
        let mut rhs = DVector::zeros(dim);
        for (k1, (row, r)) in schur_rows.iter().enumerate() {
            for (k2, blk) in row.iter().enumerate() {
                s.fixed_view_mut::<4, 4>(4 * k1, 4 * k2).copy_from(blk);
            }
            rhs.fixed_rows_mut::<4>(4 * k1).copy_from(r);
        }
        // symmetrize against rounding
        let s = (&s + s.transpose()) * 0.5;
        let x_small = solve_spd(&s, &rhs)?;
        let xs: Vec<Vector4<f64>> = (0..ns).map(|k| x_small.fixed_rows::<4>(4 * k).into_owned()).collect();
        let x_large: Vec<Vector4<f64>> = (0..large.len())
            .into_par_iter()
            .map(|j| {
                let mut r = g_large[j];
                for (k, xk) in xs.iter().enumerate() {
                    r -= cross(k, j).transpose() * xk;
                }
                inv_large[j] * r
            })
            .collect();
        let (x_row, x_col) = if rows_small { (xs, x_large) } else { (x_large, xs) };
        let mut full = vec![0.0; self.lay.len()];
        for (i, v) in x_row.iter().enumerate() {
            full[4 * i..4 * i + 4].copy_from_slice(v.as_slice());
        }
        for (c, v) in x_col.iter().enumerate() {
            full[4 * (n + c)..4 * (n + c) + 4].copy_from_slice(v.as_slice());
        }
        Some(self.free.iter().map(|&id| full[id]).collect())
    }
}

fn invert4(m: &Matrix4<f64>) -> Option<Matrix4<f64>> {
    let scale = (0..4).map(|i| m[(i, i)].abs()).fold(0.0, f64::max).max(1e-300);
    let mut ridge = 1e-13 * scale;
    for _ in 0..10 {
        let mut a = *m;
        for i in 0..4 {
            a[(i, i)] += ridge;
        }
        if let Some(ch) = a.cholesky() {
            return Some(ch.inverse());
        }
        ridge *= 100.0;
    }
    None
}

impl Concave for Problem {
    fn value(&self, x: &[f64]) -> Option<f64> {
        self.evaluate(x, false).map(|e| e.ln_l)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let ev = self.evaluate(x, false).expect("admissible point");
        let g = self.full_gradient(&ev);
        self.free.iter().map(|&id| g[id]).collect()
    }

    fn residual(&self, x: &[f64]) -> f64 {
        match self.evaluate(x, false) {
            Some(ev) => self.residual_of(&ev.expected),
            None => f64::INFINITY,
        }
    }

    fn newton_direction(&self, x: &[f64], _g: &[f64]) -> Option<Vec<f64>> {
        let ev = self.evaluate(x, true)?;
        let g = self.full_gradient(&ev);
        self.block_newton(&ev, &g)
    }

    fn curvature(&self, x: &[f64]) -> Vec<f64> {
        let ev = self.evaluate(x, true).expect("admissible point");
        let t = self.lay.t;
        let mut diag = vec![0.0; self.lay.len()];
        for (k, f) in ev.fisher.iter().enumerate() {
            for a in 0..4 {
                diag[self.lay.row(k / t, a)] += f[(a, a)];
                diag[self.lay.col(k % t, a)] += f[(a, a)];
            }
        }
        self.free.iter().map(|&id| diag[id]).collect()
    }

    /// One block Gauss-Seidel sweep: rows solve their 4x4 systems, then
    /// columns solve theirs given the row step.
    fn fixed_point_direction(&self, x: &[f64], _g: &[f64]) -> Option<Vec<f64>> {
        let ev = self.evaluate(x, true)?;
        let g = self.full_gradient(&ev);
        let (n, t) = (self.lay.n, self.lay.t);
        let masks: Vec<Vector4<f64>> = (0..n + t).map(|b| self.mask_vec(b)).collect();
        let mut blocks = vec![Matrix4::zeros(); n + t];
        for (k, f) in ev.fisher.iter().enumerate() {
            blocks[k / t] += f;
            blocks[n + k % t] += f;
        }
        let solve = |b: usize, rhs: Vector4<f64>| -> Option<Vector4<f64>> {
            let m = &masks[b];
            let mut a = Matrix4::from_fn(|r, c| blocks[b][(r, c)] * m[r] * m[c]);
            for f in 0..4 {
                if m[f] == 0.0 {
                    a[(f, f)] = 1.0;
                }
            }
            Some((invert4(&a)? * rhs).component_mul(m))
        };
        let mut full = vec![0.0; self.lay.len()];
        let mut d_rows = Vec::with_capacity(n);
        for i in 0..n {
            let d = solve(i, Vector4::from_column_slice(&g[4 * i..4 * i + 4]))?;
            full[4 * i..4 * i + 4].copy_from_slice(d.as_slice());
            d_rows.push(d);
        }
        for c in 0..t {
            let b = n + c;
            let mut rhs = Vector4::from_column_slice(&g[4 * b..4 * b + 4]);
            for (i, d) in d_rows.iter().enumerate() {
                let cross = Matrix4::from_fn(|r, q| ev.fisher[i * t + c][(r, q)] * masks[i][r] * masks[b][q]);
                rhs -= cross.transpose() * d;
            }
            let d = solve(b, rhs)?;
            full[4 * b..4 * b + 4].copy_from_slice(d.as_slice());
        }
        Some(self.free.iter().map(|&id| full[id]).collect())
    }
}

fn check_feasible(spec: &ConstraintSpec, m: &MarginConstraints) -> Result<()> {
    let (n, t) = (m.n_rows(), m.n_cols());
    if n == 0 || t == 0 {
        return Err(Error::EmptyInput);
    }
    let scale = m.s_plus_row.iter().chain(&m.s_minus_row).sum::<f64>().max(1.0);
    if m.totals_gap() > 1e-9 * scale {
        return Err(Error::InfeasibleConstraints(format!(
            "row and column totals disagree by {:.3e}",
            m.totals_gap()
        )));
    }
    if spec.variant == Variant::NoMissing
        && (m.n_obs_row.iter().any(|&v| v < t as f64) || m.m_obs_col.iter().any(|&v| v < n as f64))
    {
        return Err(Error::InfeasibleConstraints(
            "the variant without missing data needs a fully observed matrix".into(),
        ));
    }
    let pairs: [(&str, &[f64], &[f64], bool); 4] = [
        ("row positive", &m.n_plus_row, &m.s_plus_row, spec.gamma),
        ("row negative", &m.n_minus_row, &m.s_minus_row, spec.sigma),
        ("column positive", &m.m_plus_col, &m.r_plus_col, spec.gamma),
        ("column negative", &m.m_minus_col, &m.r_minus_col, spec.sigma),
    ];
    for (what, counts, sums, active) in pairs {
        if !active {
            continue;
        }
        for (k, (&c, &s)) in counts.iter().zip(sums).enumerate() {
            if (c > 0.0) != (s > 0.0) {
                return Err(Error::InfeasibleConstraints(format!(
                    "{what} margin {k}: count {c} but sum {s}"
                )));
            }
        }
    }
    Ok(())
}

struct Freedom {
    is_free: Vec<bool>,
    dropped: Vec<String>,
    gauge: Vec<String>,
    gauge_cols: [Option<usize>; 4],
}

fn freedom(spec: &ConstraintSpec, mask: &BlockMask, lay: &Layout) -> Freedom {
    let with_missing = spec.variant == Variant::WithMissing;
    let mut is_free = vec![false; lay.len()];
    let mut dropped = Vec::new();
    let mut decide = |id: usize, plus: bool, minus: bool, empty: bool, label: String, full: bool| {
        let f = id % 4;
        let fam = FAMILIES[f];
        if !spec.is_active_on(fam, id < 4 * lay.n) {
            return;
        }
        let (free, why) = match fam {
            Family::Alpha => (plus && (empty || minus), if !plus { "no positive entries" } else { "sign fixed by the margins" }),
            Family::Beta => (minus && empty, if !minus { "no negative entries" } else if full { "fully observed" } else { "redundant" }),
            Family::Gamma => (plus, "no positive entries"),
            Family::Sigma => (minus, "no negative entries"),
        };
        if free {
            is_free[id] = true;
        } else {
            dropped.push(format!("{label} ({why})"));
        }
    };
    for i in 0..lay.n {
        let plus = !mask.plus_row[i];
        let minus = !mask.minus_row[i];
        let empty = with_missing && !mask.empty_row[i];
        for f in 0..4 {
            decide(lay.row(i, f), plus, minus, empty, format!("{}[{i}]", ROW_NAMES[f]), !mask.empty_row[i]);
        }
    }
    for c in 0..lay.t {
        let plus = !mask.plus_col[c];
        let minus = !mask.minus_col[c];
        let empty = with_missing && !mask.empty_col[c];
        for f in 0..4 {
            decide(lay.col(c, f), plus, minus, empty, format!("{}[{c}]", COL_NAMES[f]), !mask.empty_col[c]);
        }
    }
    let mut gauge = Vec::new();
    let mut gauge_cols = [None; 4];
    for f in 0..4 {
        if let Some(c) = (0..lay.t).find(|&c| is_free[lay.col(c, f)]) {
            let any_row = (0..lay.n).any(|i| is_free[lay.row(i, f)]);
            if any_row {
                is_free[lay.col(c, f)] = false;
                gauge_cols[f] = Some(c);
                gauge.push(format!("{}_col[{c}] = 0", FAMILIES[f].name()));
            }
        }
    }
    Freedom { is_free, dropped, gauge, gauge_cols }
}

/// Independent-cell starting point: rates from count/sum ratios split
/// evenly between rows and columns, count multipliers zero.
pub fn initial_multipliers(spec: &ConstraintSpec, m: &MarginConstraints) -> MultiplierSet {
    let (n, t) = (m.n_rows(), m.n_cols());
    let mut ms = MultiplierSet::zeros(n, t, spec.variant);
    let rate = |c: f64, s: f64| if c > 0.0 && s > 0.0 { 0.5 * c / s } else { 0.0 };
    for i in 0..n {
        ms.gamma_row[i] = rate(m.n_plus_row[i], m.s_plus_row[i]);
        ms.sigma_row[i] = rate(m.n_minus_row[i], m.s_minus_row[i]);
    }
    for c in 0..t {
        ms.gamma_col[c] = rate(m.m_plus_col[c], m.r_plus_col[c]);
        ms.sigma_col[c] = rate(m.m_minus_col[c], m.r_minus_col[c]);
    }
    ms
}

fn names(lay: &Layout) -> Vec<String> {
    let mut out = vec![String::new(); lay.len()];
    for f in 0..4 {
        for i in 0..lay.n {
            out[lay.row(i, f)] = format!("{}[{i}]", ROW_NAMES[f]);
        }
        for c in 0..lay.t {
            out[lay.col(c, f)] = format!("{}[{c}]", COL_NAMES[f]);
        }
    }
    out
}

/// Moves each rate family's gauge onto its fixed column using free
/// parameters only.
fn shift_onto_gauge(p: &mut [f64], lay: &Layout, is_free: &[bool], fixed_gauge_col: &[Option<usize>; 4]) {
    for f in 0..4 {
        if let Some(c0) = fixed_gauge_col[f] {
            let shift = p[lay.col(c0, f)];
            if shift == 0.0 {
                continue;
            }
            p[lay.col(c0, f)] = 0.0;
            for c in 0..lay.t {
                if is_free[lay.col(c, f)] {
                    p[lay.col(c, f)] -= shift;
                }
            }
            for i in 0..lay.n {
                if is_free[lay.row(i, f)] {
                    p[lay.row(i, f)] += shift;
                }
            }
        }
    }
}

/// Calibrates the matrix ensemble to empirical margins.
///
/// The returned result has `converged == false` when the tolerance was not
/// reached; use [`CalibrationResult::ensure_converged`] to turn that into an
/// error. `multipliers` lists the families in storage order, rows before
/// columns.
pub fn calibrate_multivariate(
    spec: &ConstraintSpec,
    margins: &MarginConstraints,
    opts: &CalibrationOptions,
) -> Result<(EnsembleModel, CalibrationResult)> {
    opts.validate()?;
    check_feasible(spec, margins)?;
    let lay = Layout { n: margins.n_rows(), t: margins.n_cols() };
    let blocking = Blocking::from_margins(spec, margins);
    let mask = blocking.mask(lay.n, lay.t);
    let fr = freedom(spec, &mask, &lay);

    let gauge_cols = fr.gauge_cols;

    let mut base = to_full(&initial_multipliers(spec, margins), &lay);
    for (id, v) in base.iter_mut().enumerate() {
        let fam = FAMILIES[id % 4];
        if !spec.is_active_on(fam, id < 4 * lay.n) || (!fr.is_free[id] && matches!(fam, Family::Alpha | Family::Beta)) {
            *v = 0.0;
        }
    }
    // a rate multiplier that is fixed but not a gauge column belongs to a
    // blocked species and is irrelevant
    for id in 0..lay.len() {
        let f = id % 4;
        if f >= 2 && !fr.is_free[id] {
            let is_gauge = id >= 4 * lay.n && gauge_cols[f] == Some(id / 4 - lay.n);
            if !is_gauge {
                base[id] = 0.0;
            }
        }
    }
    shift_onto_gauge(&mut base, &lay, &fr.is_free, &gauge_cols);

    let free: Vec<usize> = (0..lay.len()).filter(|&id| fr.is_free[id]).collect();
    let active: Vec<usize> =
        (0..lay.len()).filter(|&id| spec.is_active_on(FAMILIES[id % 4], id < 4 * lay.n)).collect();
    let target = targets(margins, &lay);
    let mut problem = Problem {
        lay,
        variant: spec.variant,
        mask,
        target,
        base: base.clone(),
        free: free.clone(),
        is_free: fr.is_free.clone(),
        active,
        barrier: 0.0,
    };
    let mut x: Vec<f64> = free.iter().map(|&id| base[id]).collect();
    if problem.value(&x).is_none() {
        return Err(Error::InfeasibleConstraints("no admissible starting point".into()));
    }
    if let Some(seed) = opts.seed {
        x = jitter(&problem, &x, seed);
    }
    let mut diagnostics = fr.gauge.iter().map(|g| format!("gauge: {g}")).collect::<Vec<_>>();
    let mut iterations = 0;
    if opts.barrier_strength > 0.0 {
        let mut mu = opts.barrier_strength;
        let stage_opts = CalibrationOptions { tol_rel: opts.tol_rel.max(1e-3), ..opts.clone() };
        while mu > 1e-9 * opts.barrier_strength {
            problem.barrier = mu;
            let out = maximize(&problem, x, &stage_opts);
            iterations += out.iterations;
            diagnostics.push(format!("barrier {mu:.1e}: {} iterations", out.iterations));
            x = out.x;
            mu *= 0.1;
        }
        problem.barrier = 0.0;
    }
    let mut out = maximize(&problem, x.clone(), opts);
    diagnostics.extend(out.notes.iter().cloned());
    if !out.converged && opts.method == Method::Newton {
        let fp_opts = CalibrationOptions { method: Method::FixedPoint, ..opts.clone() };
        let alt = maximize(&problem, out.x.clone(), &fp_opts);
        diagnostics.push(format!(
            "newton stopped at ln L = {:.12e}; fixed point reached {:.12e}",
            out.value, alt.value
        ));
        if alt.value > out.value || alt.converged {
            let mut history = out.history.clone();
            history.extend(alt.history.iter().skip(1));
            out = super::solver::Outcome { history, iterations: out.iterations + alt.iterations, ..alt };
        }
    }
    iterations += out.iterations;

    let p = problem.full(&out.x);
    let ms = to_set(&p, &problem.lay, spec.variant);
    let ev = problem.evaluate(&out.x, false).expect("admissible point");
    let labels = names(&problem.lay);
    let residuals: Vec<Residual> = problem
        .active
        .iter()
        .map(|&id| Residual::new(labels[id].clone(), problem.target[id], ev.expected[id]))
        .collect();
    let max_rel = residuals.iter().map(|r| r.rel_err).fold(0.0, f64::max);
    let mut flat = Vec::with_capacity(p.len());
    for f in FAMILIES {
        flat.extend_from_slice(ms.row(f));
        flat.extend_from_slice(ms.col(f));
    }
    let model = EnsembleModel {
        constraint_spec: *spec,
        multipliers: ms,
        blocking,
        source_margins: Some(margins.clone()),
        dropped_constraints: fr.dropped.clone(),
        gauge: if fr.gauge.is_empty() { "none".into() } else { fr.gauge.join(", ") },
    };
    let result = CalibrationResult {
        multipliers: flat,
        converged: out.converged,
        iterations,
        max_rel_constraint_err: max_rel,
        final_log_likelihood: out.value,
        dropped_constraints: fr.dropped,
        residuals,
        history: out.history,
        method: opts.method,
        diagnostics,
    };
    Ok((model, result))
}

/// Random perturbation of the start, shrunk until it is admissible.
fn jitter(problem: &Problem, x: &[f64], seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, 0);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let noise: Vec<f64> = problem
        .free
        .iter()
        .zip(x)
        .map(|(&id, v)| {
            let z = normal.sample(&mut rng);
            match id % 4 {
                0 | 1 => 0.5 * z,
                _ => 0.3 * z * v.abs().max(0.1),
            }
        })
        .collect();
    let mut scale = 1.0;
    for _ in 0..40 {
        let y: Vec<f64> = x.iter().zip(&noise).map(|(a, e)| a + scale * e).collect();
        if problem.value(&y).is_some() {
            return y;
        }
        scale *= 0.5;
    }
    x.to_vec()
}
