//! Data model shared by every ensemble: the observed matrix with its
//! missing-value mask, quantile grids and the empirical sufficient
//! statistics (row/column sign counts and signed sums).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Value stored in `values` wherever `mask` is false.
pub const MISSING_SENTINEL: f64 = 0.0;

/// An `N x T` real matrix with an explicit observation mask.
///
/// Rows are variables, columns are sampling times. Storage is row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct DataMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
    mask: Vec<bool>,
    row_ids: Vec<String>,
    col_ids: Vec<String>,
    /// Offsets removed by [`DataMatrix::center_rows`], one per row.
    row_means: Vec<f64>,
}

/// JSON dump layout: `{"row_ids":[..],"col_ids":[..],"values":[[..]],"mask":[[..]]}`.
#[derive(Serialize, Deserialize)]
struct MatrixJson {
    row_ids: Vec<String>,
    col_ids: Vec<String>,
    values: Vec<Vec<f64>>,
    mask: Vec<Vec<bool>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    row_means: Option<Vec<f64>>,
}

impl From<DataMatrix> for MatrixJson {
    fn from(m: DataMatrix) -> Self {
        let values = (0..m.n_rows).map(|i| m.row(i).to_vec()).collect();
        let mask = (0..m.n_rows).map(|i| m.row_mask(i).to_vec()).collect();
        let centered = m.row_means.iter().any(|&x| x != 0.0);
        MatrixJson {
            row_ids: m.row_ids,
            col_ids: m.col_ids,
            values,
            mask,
            row_means: centered.then_some(m.row_means),
        }
    }
}

impl TryFrom<MatrixJson> for DataMatrix {
    type Error = Error;

    fn try_from(j: MatrixJson) -> Result<Self> {
        let n = j.values.len();
        let t = j.values.first().map_or(0, Vec::len);
        if j.mask.len() != n || j.mask.iter().any(|r| r.len() != t) {
            return Err(Error::ShapeMismatch("mask shape differs from values".into()));
        }
        let mut m = DataMatrix::from_rows_masked(j.values, j.mask)?;
        if j.row_ids.len() == n {
            m.row_ids = j.row_ids;
        }
        if j.col_ids.len() == t {
            m.col_ids = j.col_ids;
        }
        if let Some(means) = j.row_means {
            if means.len() == n {
                m.row_means = means;
            }
        }
        Ok(m)
    }
}

impl DataMatrix {
    /// Builds a fully observed matrix from rows. NaN entries become missing.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mask = rows
            .iter()
            .map(|r| r.iter().map(|v| !v.is_nan()).collect())
            .collect();
        Self::from_rows_masked(rows, mask)
    }

    /// Builds a matrix from rows of values and a matching mask.
    pub fn from_rows_masked(rows: Vec<Vec<f64>>, mask: Vec<Vec<bool>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        let t = rows[0].len();
        if t == 0 {
            return Err(Error::EmptyInput);
        }
        let mut values = Vec::with_capacity(n * t);
        let mut flat_mask = Vec::with_capacity(n * t);
        for (i, (r, mr)) in rows.into_iter().zip(mask).enumerate() {
            if r.len() != t {
                return Err(Error::Parse {
                    row: i,
                    col: None,
                    message: format!("expected {t} columns, found {}", r.len()),
                });
            }
            if mr.len() != t {
                return Err(Error::ShapeMismatch(format!("mask row {i} has wrong length")));
            }
            for (v, ok) in r.into_iter().zip(mr) {
                let ok = ok && v.is_finite();
                values.push(if ok { v } else { MISSING_SENTINEL });
                flat_mask.push(ok);
            }
        }
        Ok(Self {
            n_rows: n,
            n_cols: t,
            values,
            mask: flat_mask,
            row_ids: (0..n).map(|i| format!("r{i}")).collect(),
            col_ids: (0..t).map(|c| format!("t{c}")).collect(),
            row_means: vec![0.0; n],
        })
    }

    /// Builds a matrix from a flat row-major buffer; NaN entries are missing.
    pub fn from_flat(n_rows: usize, n_cols: usize, data: Vec<f64>) -> Result<Self> {
        if n_rows == 0 || n_cols == 0 {
            return Err(Error::EmptyInput);
        }
        if data.len() != n_rows * n_cols {
            return Err(Error::ShapeMismatch(format!(
                "buffer of length {} cannot hold {n_rows}x{n_cols}",
                data.len()
            )));
        }
        let rows = data.chunks(n_cols).map(<[f64]>::to_vec).collect();
        Self::from_rows(rows)
    }

    pub fn with_labels(mut self, row_ids: Vec<String>, col_ids: Vec<String>) -> Result<Self> {
        if row_ids.len() != self.n_rows || col_ids.len() != self.n_cols {
            return Err(Error::ShapeMismatch("label count differs from matrix shape".into()));
        }
        self.row_ids = row_ids;
        self.col_ids = col_ids;
        Ok(self)
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_rows, self.n_cols)
    }

    pub fn row_ids(&self) -> &[String] {
        &self.row_ids
    }

    pub fn col_ids(&self) -> &[String] {
        &self.col_ids
    }

    /// Row means subtracted by centering (zeros for raw data).
    pub fn row_means(&self) -> &[f64] {
        &self.row_means
    }

    /// Observed value at `(i, t)`, or `None` when missing.
    #[inline]
    pub fn get(&self, i: usize, t: usize) -> Option<f64> {
        let k = i * self.n_cols + t;
        self.mask[k].then(|| self.values[k])
    }

    #[inline]
    pub fn is_observed(&self, i: usize, t: usize) -> bool {
        self.mask[i * self.n_cols + t]
    }

    /// Raw row slice; missing entries hold [`MISSING_SENTINEL`].
    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn row_mask(&self, i: usize) -> &[bool] {
        &self.mask[i * self.n_cols..(i + 1) * self.n_cols]
    }

    /// Observed values of row `i`, in time order.
    pub fn observed_row(&self, i: usize) -> Vec<f64> {
        (0..self.n_cols).filter_map(|t| self.get(i, t)).collect()
    }

    /// Observed values of column `t`, in row order.
    pub fn observed_col(&self, t: usize) -> Vec<f64> {
        (0..self.n_rows).filter_map(|i| self.get(i, t)).collect()
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn has_missing(&self) -> bool {
        self.mask.iter().any(|&m| !m)
    }

    /// Sets an entry to an observed value.
    pub fn set(&mut self, i: usize, t: usize, v: f64) {
        let k = i * self.n_cols + t;
        if v.is_finite() {
            self.values[k] = v;
            self.mask[k] = true;
        } else {
            self.values[k] = MISSING_SENTINEL;
            self.mask[k] = false;
        }
    }

    pub fn set_missing(&mut self, i: usize, t: usize) {
        let k = i * self.n_cols + t;
        self.values[k] = MISSING_SENTINEL;
        self.mask[k] = false;
    }

    /// Returns the submatrix made of the given rows and the column range.
    pub fn select(&self, rows: &[usize], cols: std::ops::Range<usize>) -> Result<Self> {
        if rows.is_empty() || cols.is_empty() || cols.end > self.n_cols {
            return Err(Error::ShapeMismatch("empty or out-of-range selection".into()));
        }
        let mut vals = Vec::with_capacity(rows.len());
        let mut mask = Vec::with_capacity(rows.len());
        for &i in rows {
            if i >= self.n_rows {
                return Err(Error::ShapeMismatch(format!("row {i} out of range")));
            }
            vals.push(self.row(i)[cols.clone()].to_vec());
            mask.push(self.row_mask(i)[cols.clone()].to_vec());
        }
        let mut m = Self::from_rows_masked(vals, mask)?;
        m.row_ids = rows.iter().map(|&i| self.row_ids[i].clone()).collect();
        m.col_ids = self.col_ids[cols].to_vec();
        Ok(m)
    }

    /// Subtracts from each row the mean of its observed entries.
    ///
    /// The subtracted offsets accumulate in [`DataMatrix::row_means`], so
    /// `row_means()[i] + value` recovers the raw scale. A second call is a
    /// no-op up to rounding.
    pub fn center_rows(&self) -> Result<Self> {
        let mut out = self.clone();
        for i in 0..self.n_rows {
            let obs = self.observed_row(i);
            if obs.is_empty() {
                return Err(Error::DegenerateRow(i));
            }
            let mean = obs.iter().sum::<f64>() / obs.len() as f64;
            let base = i * self.n_cols;
            for t in 0..self.n_cols {
                if out.mask[base + t] {
                    out.values[base + t] -= mean;
                }
            }
            // second pass removes the rounding residue of the first
            let resid = (0..self.n_cols)
                .filter(|&t| out.mask[base + t])
                .map(|t| out.values[base + t])
                .sum::<f64>()
                / obs.len() as f64;
            for t in 0..self.n_cols {
                if out.mask[base + t] {
                    out.values[base + t] -= resid;
                }
            }
            out.row_means[i] += mean + resid;
        }
        Ok(out)
    }

    /// Largest `|row mean| / (row std + 1)` over rows with observations.
    pub fn max_centering_error(&self) -> f64 {
        (0..self.n_rows)
            .filter_map(|i| {
                let obs = self.observed_row(i);
                if obs.is_empty() {
                    return None;
                }
                let n = obs.len() as f64;
                let mean = obs.iter().sum::<f64>() / n;
                let var = obs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                Some(mean.abs() / (var.sqrt() + 1.0))
            })
            .fold(0.0, f64::max)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    /// Writes the matrix as CSV with a header row of column labels and a
    /// first column of row labels. Missing cells are written as `missing`.
    pub fn to_csv_string(&self, missing: &str) -> String {
        let mut s = String::from("id");
        for c in &self.col_ids {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for i in 0..self.n_rows {
            s.push_str(&self.row_ids[i]);
            for t in 0..self.n_cols {
                s.push(',');
                match self.get(i, t) {
                    Some(v) => s.push_str(&format!("{v:e}")),
                    None => s.push_str(missing),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Whether a CSV carries a header row / a first column of labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum LabelMode {
    #[default]
    Auto,
    Present,
    Absent,
}

/// CSV parsing options for [`load_matrix`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FormatOptions {
    pub delimiter: u8,
    /// Tokens mapped to missing (compared after trimming whitespace).
    pub missing_tokens: Vec<String>,
    pub header: LabelMode,
    pub row_labels: LabelMode,
}

impl Default for FormatOptions {
    fn default() -> Self {
        Self {
            delimiter: b',',
            missing_tokens: vec!["".into(), "NaN".into(), "nan".into(), "NA".into()],
            header: LabelMode::Auto,
            row_labels: LabelMode::Auto,
        }
    }
}

impl FormatOptions {
    fn is_missing(&self, tok: &str) -> bool {
        self.missing_tokens.iter().any(|m| m == tok)
    }

    fn is_numeric_or_missing(&self, tok: &str) -> bool {
        let tok = tok.trim();
        self.is_missing(tok) || tok.parse::<f64>().is_ok()
    }
}

/// Reads a rectangular CSV table from disk.
pub fn load_matrix(path: impl AsRef<Path>, opts: &FormatOptions) -> Result<DataMatrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_matrix(&text, opts)
}

/// Parses CSV text; see [`load_matrix`].
pub fn parse_matrix(text: &str, opts: &FormatOptions) -> Result<DataMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(opts.delimiter)
        .has_headers(false)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut records: Vec<Vec<String>> = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse {
            row: k,
            col: None,
            message: e.to_string(),
        })?;
        records.push(rec.iter().map(|s| s.trim().to_string()).collect());
    }
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }

    let has_row_labels = match opts.row_labels {
        LabelMode::Present => true,
        LabelMode::Absent => false,
        LabelMode::Auto => {
            let start = usize::from(records.len() > 1);
            records[start..]
                .iter()
                .any(|r| r.first().is_some_and(|c| !opts.is_numeric_or_missing(c)))
        }
    };
    let skip = usize::from(has_row_labels);
    let has_header = match opts.header {
        LabelMode::Present => true,
        LabelMode::Absent => false,
        LabelMode::Auto => records[0]
            .iter()
            .skip(skip)
            .any(|c| !opts.is_numeric_or_missing(c)),
    };

    let (header, body) = if has_header {
        (Some(&records[0]), &records[1..])
    } else {
        (None, &records[..])
    };
    if body.is_empty() {
        return Err(Error::EmptyInput);
    }
    let width = body[0].len();
    if width <= skip {
        return Err(Error::EmptyInput);
    }
    let t = width - skip;
    let data_row0 = usize::from(has_header);

    let mut values = Vec::with_capacity(body.len());
    let mut mask = Vec::with_capacity(body.len());
    let mut row_ids = Vec::with_capacity(body.len());
    for (i, rec) in body.iter().enumerate() {
        if rec.len() != width {
            return Err(Error::Parse {
                row: data_row0 + i,
                col: None,
                message: format!("ragged row: expected {width} fields, found {}", rec.len()),
            });
        }
        row_ids.push(if has_row_labels {
            rec[0].clone()
        } else {
            format!("r{i}")
        });
        let mut vr = Vec::with_capacity(t);
        let mut mr = Vec::with_capacity(t);
        for (j, tok) in rec.iter().skip(skip).enumerate() {
            if opts.is_missing(tok) {
                vr.push(MISSING_SENTINEL);
                mr.push(false);
                continue;
            }
            match tok.parse::<f64>() {
                Ok(v) if v.is_finite() => {
                    vr.push(v);
                    mr.push(true);
                }
                Ok(_) if tok.eq_ignore_ascii_case("nan") => {
                    vr.push(MISSING_SENTINEL);
                    mr.push(false);
                }
                _ => {
                    return Err(Error::Parse {
                        row: data_row0 + i,
                        col: Some(j + skip),
                        message: format!("non-numeric cell {tok:?}"),
                    })
                }
            }
        }
        values.push(vr);
        mask.push(mr);
    }
    let col_ids = match header {
        Some(h) if h.len() == width => h[skip..].to_vec(),
        Some(h) => {
            return Err(Error::Parse {
                row: 0,
                col: None,
                message: format!("header has {} fields, body has {width}", h.len()),
            })
        }
        None => (0..t).map(|c| format!("t{c}")).collect(),
    };
    DataMatrix::from_rows_masked(values, mask)?.with_labels(row_ids, col_ids)
}

/// Probabilities `xi` and the matching quantile values `q`.
///
/// Adjacent pairs `[q[k], q[k+1])` form the bins; the last bin is closed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid {
    xi: Vec<f64>,
    #[serde(with = "crate::serde_ext::vec_f64")]
    q: Vec<f64>,
}

impl QuantileGrid {
    pub fn new(xi: Vec<f64>, q: Vec<f64>) -> Result<Self> {
        if xi.len() != q.len() {
            return Err(Error::InvalidGrid("xi and q differ in length".into()));
        }
        if q.len() < 2 {
            return Err(Error::InvalidGrid("need at least two grid points".into()));
        }
        validate_xi(&xi)?;
        if q.iter().any(|v| v.is_nan()) || q.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidGrid("q must be non-decreasing".into()));
        }
        if q[1..q.len() - 1].iter().any(|v| v.is_infinite())
            || q[0] == f64::INFINITY
            || q[q.len() - 1] == f64::NEG_INFINITY
        {
            return Err(Error::InvalidGrid("only the endpoints may be infinite".into()));
        }
        Ok(Self { xi, q })
    }

    /// Grid with explicit breakpoints; `xi` is filled with evenly spaced
    /// placeholders.
    pub fn from_breaks(q: Vec<f64>) -> Result<Self> {
        let d = q.len();
        if d < 2 {
            return Err(Error::InvalidGrid("need at least two grid points".into()));
        }
        let xi = (0..d).map(|k| k as f64 / (d - 1) as f64).collect();
        Self::new(xi, q)
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn q(&self) -> &[f64] {
        &self.q
    }

    pub fn n_bins(&self) -> usize {
        self.q.len() - 1
    }

    pub fn lower(&self) -> f64 {
        self.q[0]
    }

    pub fn upper(&self) -> f64 {
        self.q[self.q.len() - 1]
    }

    /// Bounds of bin `k`.
    pub fn bin(&self, k: usize) -> (f64, f64) {
        (self.q[k], self.q[k + 1])
    }

    /// True when some bin has zero width.
    pub fn is_degenerate(&self) -> bool {
        self.q.windows(2).any(|w| w[0] >= w[1])
    }

    /// Bin index of `x`, or `None` outside the support.
    pub fn locate(&self, x: f64) -> Option<usize> {
        if x.is_nan() || x < self.lower() || x > self.upper() {
            return None;
        }
        let nb = self.n_bins();
        // first breakpoint strictly greater than x
        let k = self.q[1..].partition_point(|&b| b <= x);
        Some(k.min(nb - 1))
    }
}

fn validate_xi(xi: &[f64]) -> Result<()> {
    if xi.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
        return Err(Error::InvalidGrid("xi must lie in [0, 1]".into()));
    }
    if xi.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidGrid("xi must be strictly increasing (duplicate or unordered entry)".into()));
    }
    Ok(())
}

/// Linear-interpolation quantile of sorted data at probability `p`, with
/// `h = (n - 1) p`.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    if lo + 1 >= n {
        return sorted[n - 1];
    }
    let frac = h - lo as f64;
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Empirical quantiles of `series` at probabilities `xi`.
///
/// With `unbounded`, entries `xi = 0` and `xi = 1` map to `-inf` / `+inf`.
pub fn empirical_quantiles(series: &[f64], xi: &[f64], unbounded: bool) -> Result<QuantileGrid> {
    if series.len() < 2 {
        return Err(Error::InsufficientSample(format!(
            "need at least 2 observations, got {}",
            series.len()
        )));
    }
    if xi.is_empty() {
        return Err(Error::InvalidGrid("empty probability vector".into()));
    }
    validate_xi(xi)?;
    let mut sorted: Vec<f64> = series.iter().copied().filter(|v| v.is_finite()).collect();
    if sorted.len() < 2 {
        return Err(Error::InsufficientSample("fewer than 2 finite values".into()));
    }
    sorted.sort_by(f64::total_cmp);
    let q: Vec<f64> = xi
        .iter()
        .map(|&p| match (unbounded, p) {
            (true, p) if p == 0.0 => f64::NEG_INFINITY,
            (true, p) if p == 1.0 => f64::INFINITY,
            _ => quantile_sorted(&sorted, p),
        })
        .collect();
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::DegenerateQuantiles { value: sorted[0], q });
    }
    if q.len() < 2 {
        // a single probability is a valid query but not a bin grid
        return Ok(QuantileGrid { xi: xi.to_vec(), q });
    }
    QuantileGrid::new(xi.to_vec(), q)
}

/// Empirical sufficient statistics of a centered matrix.
///
/// Counts are stored as reals so that the same type carries model
/// expectations. Observed zeros are classified as positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarginConstraints {
    pub n_plus_row: Vec<f64>,
    pub n_minus_row: Vec<f64>,
    pub s_plus_row: Vec<f64>,
    pub s_minus_row: Vec<f64>,
    pub m_plus_col: Vec<f64>,
    pub m_minus_col: Vec<f64>,
    pub r_plus_col: Vec<f64>,
    pub r_minus_col: Vec<f64>,
    pub n_obs_row: Vec<f64>,
    pub m_obs_col: Vec<f64>,
}

impl MarginConstraints {
    pub fn zeros(n: usize, t: usize) -> Self {
        Self {
            n_plus_row: vec![0.0; n],
            n_minus_row: vec![0.0; n],
            s_plus_row: vec![0.0; n],
            s_minus_row: vec![0.0; n],
            m_plus_col: vec![0.0; t],
            m_minus_col: vec![0.0; t],
            r_plus_col: vec![0.0; t],
            r_minus_col: vec![0.0; t],
            n_obs_row: vec![0.0; n],
            m_obs_col: vec![0.0; t],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.n_plus_row.len()
    }

    pub fn n_cols(&self) -> usize {
        self.m_plus_col.len()
    }

    /// Largest absolute disagreement between the row and column totals of
    /// each family.
    pub fn totals_gap(&self) -> f64 {
        let s = |v: &[f64]| v.iter().sum::<f64>();
        [
            (s(&self.n_plus_row), s(&self.m_plus_col)),
            (s(&self.n_minus_row), s(&self.m_minus_col)),
            (s(&self.s_plus_row), s(&self.r_plus_col)),
            (s(&self.s_minus_row), s(&self.r_minus_col)),
            (s(&self.n_obs_row), s(&self.m_obs_col)),
        ]
        .iter()
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
    }
}

/// Row and column sign counts and signed sums over observed entries.
pub fn compute_margins(m: &DataMatrix) -> MarginConstraints {
    if m.max_centering_error() > 1e-8 {
        log::debug!("compute_margins: input rows are not centered");
    }
    let (n, t) = m.shape();
    let mut c = MarginConstraints::zeros(n, t);
    let mut zeros = 0usize;
    for i in 0..n {
        for j in 0..t {
            let Some(v) = m.get(i, j) else { continue };
            c.n_obs_row[i] += 1.0;
            c.m_obs_col[j] += 1.0;
            if v >= 0.0 {
                if v == 0.0 {
                    zeros += 1;
                }
                c.n_plus_row[i] += 1.0;
                c.m_plus_col[j] += 1.0;
                c.s_plus_row[i] += v;
                c.r_plus_col[j] += v;
            } else {
                c.n_minus_row[i] += 1.0;
                c.m_minus_col[j] += 1.0;
                c.s_minus_row[i] -= v;
                c.r_minus_col[j] -= v;
            }
        }
    }
    if zeros > 0 {
        log::warn!("compute_margins: {zeros} observed values equal the row mean; counted as positive");
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn opts_empty_missing() -> FormatOptions {
        FormatOptions {
            missing_tokens: vec!["".into()],
            ..FormatOptions::default()
        }
    }

    #[test]
    fn parses_small_csv_with_gap() {
        let m = parse_matrix("1,2,3\n4,,6", &opts_empty_missing()).unwrap();
        assert_eq!(m.shape(), (2, 3));
        assert!(!m.is_observed(1, 1));
        assert_eq!(m.get(1, 1), None);
        assert_eq!(m.row(1)[1], MISSING_SENTINEL);
        assert_eq!(m.get(1, 2), Some(6.0));
    }

    #[test]
    fn all_zero_csv_is_fully_observed() {
        let m = parse_matrix("0,0,0,0\n0,0,0,0\n0,0,0,0\n", &FormatOptions::default()).unwrap();
        assert_eq!(m.shape(), (3, 4));
        assert_eq!(m.observed_count(), 12);
    }

    #[test]
    fn header_and_row_labels_are_detected() {
        let m = parse_matrix("id,a,b\nx,1,2\ny,3,NaN\n", &FormatOptions::default()).unwrap();
        assert_eq!(m.shape(), (2, 2));
        assert_eq!(m.row_ids(), ["x", "y"]);
        assert_eq!(m.col_ids(), ["a", "b"]);
        assert!(!m.is_observed(1, 1));
    }

    #[test]
    fn ragged_rows_report_row_index() {
        let err = parse_matrix("1,2,3\n4,5\n", &FormatOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 1, col: None, .. }), "{err:?}");
    }

    #[test]
    fn non_numeric_cell_reports_coordinates() {
        let opts = FormatOptions {
            header: LabelMode::Absent,
            row_labels: LabelMode::Absent,
            ..FormatOptions::default()
        };
        let err = parse_matrix("1,2,3\n4,abc,6\n", &opts).unwrap_err();
        assert!(matches!(err, Error::Parse { row: 1, col: Some(1), .. }), "{err:?}");
    }

    #[test]
    fn empty_file_is_empty_input() {
        assert_eq!(parse_matrix("", &FormatOptions::default()), Err(Error::EmptyInput));
    }

    #[test]
    fn centering_examples() {
        let m = DataMatrix::from_rows(vec![vec![1.0, 2.0, 3.0], vec![5.0, f64::NAN, 7.0]]).unwrap();
        let c = m.center_rows().unwrap();
        assert_eq!(c.observed_row(0), vec![-1.0, 0.0, 1.0]);
        assert_eq!(c.observed_row(1), vec![-1.0, 1.0]);
        assert!(!c.is_observed(1, 1));
        assert_eq!(c.row_means(), [2.0, 6.0]);
        let cc = c.center_rows().unwrap();
        for i in 0..2 {
            for (a, b) in cc.row(i).iter().zip(c.row(i)) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn centering_rejects_empty_row() {
        let m = DataMatrix::from_rows(vec![vec![1.0, 2.0], vec![f64::NAN, f64::NAN]]).unwrap();
        assert_eq!(m.center_rows(), Err(Error::DegenerateRow(1)));
    }

    #[test]
    fn median_of_four() {
        let g = empirical_quantiles(&[1.0, 2.0, 3.0, 4.0], &[0.5], false).unwrap();
        assert_eq!(g.q(), [2.5]);
    }

    #[test]
    fn unbounded_quartile_grid() {
        let data: Vec<f64> = (0..101).map(f64::from).collect();
        let g = empirical_quantiles(&data, &[0.0, 0.25, 0.5, 0.75, 1.0], true).unwrap();
        assert_eq!(g.q(), [f64::NEG_INFINITY, 25.0, 50.0, 75.0, f64::INFINITY]);
        assert_eq!(g.n_bins(), 4);
    }

    #[test]
    fn quantile_errors() {
        let e = empirical_quantiles(&[1.0, 2.0, 3.0], &[0.5, 0.5], false).unwrap_err();
        assert!(matches!(e, Error::InvalidGrid(_)));
        let e = empirical_quantiles(&[4.0; 6], &[0.0, 0.5, 1.0], false).unwrap_err();
        match e {
            Error::DegenerateQuantiles { value, q } => {
                assert_eq!(value, 4.0);
                assert!(q.iter().all(|&v| v == 4.0));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn grid_locate_uses_half_open_bins() {
        let g = QuantileGrid::from_breaks(vec![f64::NEG_INFINITY, 0.0, 1.0]).unwrap();
        assert_eq!(g.locate(-5.0), Some(0));
        assert_eq!(g.locate(0.0), Some(1));
        assert_eq!(g.locate(1.0), Some(1));
        assert_eq!(g.locate(1.5), None);
    }

    #[test]
    fn margins_hand_example() {
        let m = DataMatrix::from_rows(vec![vec![1.0, -2.0, 3.0, f64::NAN]]).unwrap();
        let c = compute_margins(&m);
        assert_eq!(c.n_plus_row, [2.0]);
        assert_eq!(c.n_minus_row, [1.0]);
        assert_eq!(c.s_plus_row, [4.0]);
        assert_eq!(c.s_minus_row, [2.0]);
        assert_eq!(c.n_obs_row, [3.0]);
    }

    #[test]
    fn margins_all_positive() {
        let m = DataMatrix::from_rows(vec![vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let c = compute_margins(&m);
        assert_eq!(c.n_minus_row, [0.0, 0.0]);
        assert_eq!(c.r_plus_col, [2.0, 2.0]);
    }

    #[test]
    fn json_dump_layout() {
        let m = DataMatrix::from_rows(vec![vec![1.0, f64::NAN]]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        assert_eq!(v["mask"], serde_json::json!([[true, false]]));
        assert_eq!(v["values"], serde_json::json!([[1.0, 0.0]]));
        let back = DataMatrix::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(back, m);
    }
}
