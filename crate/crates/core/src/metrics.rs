//! Clustering evaluation: NMI, weighted purity and threshold-sweep curves.
//!
//! Library functions return fractions in `[0, 1]`; the CLI prints them as
//! percentages.

use std::collections::HashMap;
use std::fmt::Write as _;

use crate::clusterer::{cut_threshold, ClusterAssignment, Dendrogram};
use crate::error::{Error, Result};

/// Cluster-by-class counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContingencyTable {
    /// `num_clusters x num_classes`, row-major.
    counts: Vec<usize>,
    num_classes: usize,
    row_sums: Vec<usize>,
    col_sums: Vec<usize>,
    total: usize,
}

impl ContingencyTable {
    pub fn new(pred: &ClusterAssignment, truth: &[usize]) -> Result<Self> {
        check_len(pred, truth)?;
        let classes = ClusterAssignment::from_labels(truth);
        let rows = pred.num_clusters();
        let cols = classes.num_clusters();
        let mut counts = vec![0; rows * cols];
        let mut row_sums = vec![0; rows];
        let mut col_sums = vec![0; cols];
        for (&c, &y) in pred.labels().iter().zip(classes.labels()) {
            counts[c * cols + y] += 1;
            row_sums[c] += 1;
            col_sums[y] += 1;
        }
        Ok(Self {
            counts,
            num_classes: cols,
            row_sums,
            col_sums,
            total: truth.len(),
        })
    }

    pub fn num_clusters(&self) -> usize {
        self.row_sums.len()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn count(&self, cluster: usize, class: usize) -> usize {
        self.counts[cluster * self.num_classes + class]
    }

    pub fn row_sums(&self) -> &[usize] {
        &self.row_sums
    }

    pub fn col_sums(&self) -> &[usize] {
        &self.col_sums
    }

    pub fn total(&self) -> usize {
        self.total
    }
}

fn check_len(pred: &ClusterAssignment, truth: &[usize]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: pred.len(),
        });
    }
    Ok(())
}

fn x_ln_x(x: usize) -> f64 {
    if x == 0 {
        0.0
    } else {
        let x = x as f64;
        x * x.ln()
    }
}

/// NMI from the sufficient statistics `sum n ln n` over cells, cluster sizes
/// and class sizes.
fn nmi_from_sums(n: usize, k_pred: usize, k_true: usize, cells: f64, rows: f64, cols: f64) -> f64 {
    match (k_pred, k_true) {
        (1, 1) => return 1.0,
        (1, _) | (_, 1) => return 0.0,
        _ => {}
    }
    let nf = n as f64;
    let ln_n = nf.ln();
    let h_c = ln_n - rows / nf;
    let h_y = ln_n - cols / nf;
    let denom = h_c + h_y;
    if denom <= 0.0 {
        return 1.0;
    }
    let mi = (cells - rows - cols) / nf + ln_n;
    (2.0 * mi / denom).clamp(0.0, 1.0)
}

/// Normalized mutual information `2 I(Y;C) / (H(Y) + H(C))` with natural-log
/// entropies; 1 when both partitions are trivial.
pub fn nmi(pred: &ClusterAssignment, truth: &[usize]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::invalid("nmi needs at least one sample"));
    }
    let t = ContingencyTable::new(pred, truth)?;
    let cells: f64 = t.counts.iter().map(|&c| x_ln_x(c)).sum();
    let rows: f64 = t.row_sums.iter().map(|&c| x_ln_x(c)).sum();
    let cols: f64 = t.col_sums.iter().map(|&c| x_ln_x(c)).sum();
    Ok(nmi_from_sums(
        t.total,
        t.num_clusters(),
        t.num_classes,
        cells,
        rows,
        cols,
    ))
}

/// Size-weighted purity: `(1/N) sum over clusters of the dominant class count`.
pub fn wcp(pred: &ClusterAssignment, truth: &[usize]) -> Result<f64> {
    let t = ContingencyTable::new(pred, truth)?;
    if t.total == 0 {
        return Ok(1.0);
    }
    let dominant: usize = (0..t.num_clusters())
        .map(|c| (0..t.num_classes).map(|y| t.count(c, y)).max().unwrap_or(0))
        .sum();
    Ok(dominant as f64 / t.total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub num_clusters: usize,
    pub nmi: f64,
    pub wcp: f64,
}

/// Evaluates a flat clustering.
pub fn evaluate(pred: &ClusterAssignment, truth: &[usize]) -> Result<CurvePoint> {
    Ok(CurvePoint {
        num_clusters: pred.num_clusters(),
        nmi: nmi(pred, truth)?,
        wcp: wcp(pred, truth)?,
    })
}

/// NMI and WCP at every cut `K = N, N-1, ..., 1` of the dendrogram, returned
/// in increasing `K`. With `max_points`, only about that many evenly spaced
/// values of `K` are kept, always including `K = 1` and `K = N`.
///
/// Merges are replayed once while the contingency sums are updated
/// incrementally, so the whole curve costs about as much as one cut.
pub fn sweep_curves(d: &Dendrogram, truth: &[usize], max_points: Option<usize>) -> Result<Vec<CurvePoint>> {
    let n = d.leaf_count;
    if truth.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: truth.len(),
        });
    }
    if n == 0 {
        return Ok(Vec::new());
    }
    if d.merges.len() + 1 != n {
        return Err(Error::invalid(format!(
            "dendrogram over {n} leaves has {} merges, expected {}",
            d.merges.len(),
            n - 1
        )));
    }
    let keep = |k: usize| -> bool {
        match max_points {
            Some(m) if m >= 2 && n > m => {
                let step = (n - 1) as f64 / (m - 1) as f64;
                // K is kept when it is the nearest integer to some grid point
                let j = ((k - 1) as f64 / step).round();
                (1.0 + j * step).round() as usize == k
            }
            Some(m) if m < 2 && n > m => k == 1 || k == n,
            _ => true,
        }
    };

    let classes = ClusterAssignment::from_labels(truth);
    let cols: f64 = {
        let mut sizes = vec![0usize; classes.num_clusters()];
        classes.labels().iter().for_each(|&y| sizes[y] += 1);
        sizes.iter().map(|&s| x_ln_x(s)).sum()
    };
    // per cluster id: class -> count
    let mut members: Vec<HashMap<usize, usize>> = Vec::with_capacity(2 * n - 1);
    let mut sizes = Vec::with_capacity(2 * n - 1);
    let mut dominant_of = Vec::with_capacity(2 * n - 1);
    for &y in classes.labels() {
        members.push(HashMap::from([(y, 1)]));
        sizes.push(1usize);
        dominant_of.push(1usize);
    }
    // singletons: every cell and row is 1, so sum n ln n = 0
    let mut cells = 0.0;
    let mut rows = 0.0;
    let mut dominant = n;
    let mut out = Vec::new();
    let record = |k: usize, cells: f64, rows: f64, dominant: usize, out: &mut Vec<CurvePoint>| {
        if keep(k) {
            out.push(CurvePoint {
                num_clusters: k,
                nmi: nmi_from_sums(n, k, classes.num_clusters(), cells, rows, cols),
                wcp: dominant as f64 / n as f64,
            });
        }
    };
    record(n, cells, rows, dominant, &mut out);
    for (step, m) in d.merges.iter().enumerate() {
        let (mut big, mut small) = (std::mem::take(&mut members[m.a]), std::mem::take(&mut members[m.b]));
        if big.len() < small.len() {
            std::mem::swap(&mut big, &mut small);
        }
        for (y, c) in small {
            let e = big.entry(y).or_insert(0);
            cells += x_ln_x(*e + c) - x_ln_x(*e) - x_ln_x(c);
            *e += c;
        }
        let size = sizes[m.a] + sizes[m.b];
        rows += x_ln_x(size) - x_ln_x(sizes[m.a]) - x_ln_x(sizes[m.b]);
        let dom = big.values().copied().max().unwrap_or(0);
        dominant = dominant + dom - dominant_of[m.a] - dominant_of[m.b];
        members.push(big);
        sizes.push(size);
        dominant_of.push(dom);
        record(n - step - 1, cells, rows, dominant, &mut out);
    }
    out.reverse();
    Ok(out)
}

/// The point on the curve selected by stopping threshold `tau`.
pub fn operating_point(d: &Dendrogram, truth: &[usize], tau: f64) -> Result<CurvePoint> {
    evaluate(&cut_threshold(d, tau), truth)
}

/// CSV with header `k,nmi,wcp`, metrics as percentages, then an optional
/// marker row `op=K,nmi,wcp` for the operating point.
pub fn curves_to_csv(points: &[CurvePoint], op: Option<&CurvePoint>) -> String {
    let mut s = String::from("k,nmi,wcp\n");
    for p in points {
        let _ = writeln!(s, "{},{:.4},{:.4}", p.num_clusters, 100.0 * p.nmi, 100.0 * p.wcp);
    }
    if let Some(p) = op {
        let _ = writeln!(s, "op={},{:.4},{:.4}", p.num_clusters, 100.0 * p.nmi, 100.0 * p.wcp);
    }
    s
}
