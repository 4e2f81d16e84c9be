//! Regularization graphs, their sparse Laplacians, and the batched
//! regularized-Laplacian solver used by the consensus step of the fit.
//!
//! Vertex `(a, u)` of a Cartesian product `G1 □ G2` is numbered `a·K2 + u`
//! (row-major), so stratum indices of product-stratified datasets follow the
//! same layout.

use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("a graph needs at least one vertex")]
    NoVertices,
    #[error("cycle graph needs at least 3 vertices, got {0}")]
    DegenerateCycle(usize),
    #[error("edge weight must be positive and finite, got {0}")]
    InvalidWeight(f64),
    #[error("self-loop at vertex {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("vertex {vertex} out of range for graph with {k} vertices")]
    VertexOutOfRange { vertex: usize, k: usize },
    #[error("invalid graph spec `{spec}`: {reason}")]
    Spec { spec: String, reason: String },
    #[error("graph file line {line}: {reason}")]
    File { line: usize, reason: String },
    #[error("io error reading graph: {0}")]
    Io(String),
    #[error("penalty parameter must be positive, got {0}")]
    InvalidPenalty(f64),
    #[error("right-hand side has {got} rows, Laplacian has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("CG did not converge in {max_iter} iterations (column {column}, relative residual {residual:e})")]
    MaxIterExceeded {
        column: usize,
        max_iter: usize,
        residual: f64,
        best: Box<Block>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub w: f64,
}

/// Weighted undirected graph on `k` vertices. Edges are stored with `i < j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawGraph", into = "RawGraph")]
pub struct RegGraph {
    k: usize,
    edges: Vec<Edge>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    k: usize,
    edges: Vec<(usize, usize, f64)>,
}

impl TryFrom<RawGraph> for RegGraph {
    type Error = GraphError;
    fn try_from(raw: RawGraph) -> Result<Self, GraphError> {
        RegGraph::new(raw.k, raw.edges.into_iter().map(|(i, j, w)| Edge { i, j, w }).collect())
    }
}

impl From<RegGraph> for RawGraph {
    fn from(g: RegGraph) -> Self {
        RawGraph { k: g.k, edges: g.edges.into_iter().map(|e| (e.i, e.j, e.w)).collect() }
    }
}

impl RegGraph {
    /// Validates and normalizes the edge list (each edge reoriented to `i < j`).
    pub fn new(k: usize, edges: Vec<Edge>) -> Result<Self, GraphError> {
        if k == 0 {
            return Err(GraphError::NoVertices);
        }
        let mut seen = std::collections::HashSet::with_capacity(edges.len());
        let mut out = Vec::with_capacity(edges.len());
        for e in edges {
            let (i, j) = if e.i <= e.j { (e.i, e.j) } else { (e.j, e.i) };
            if j >= k {
                return Err(GraphError::VertexOutOfRange { vertex: j, k });
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            if !(e.w > 0.0 && e.w.is_finite()) {
                return Err(GraphError::InvalidWeight(e.w));
            }
            if !seen.insert((i, j)) {
                return Err(GraphError::DuplicateEdge(i, j));
            }
            out.push(Edge { i, j, w: e.w });
        }
        Ok(Self { k, edges: out })
    }

    /// `k` isolated vertices.
    pub fn edgeless(k: usize) -> Result<Self, GraphError> {
        Self::new(k, Vec::new())
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Multiplies every edge weight by `c > 0`.
    pub fn scaled(&self, c: f64) -> Result<Self, GraphError> {
        Self::new(self.k, self.edges.iter().map(|e| Edge { w: e.w * c, ..*e }).collect())
    }

    pub fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.k];
        for e in &self.edges {
            adj[e.i].push(e.j);
            adj[e.j].push(e.i);
        }
        let mut seen = vec![false; self.k];
        let mut stack = vec![0];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &u in &adj[v] {
                if !seen[u] {
                    seen[u] = true;
                    count += 1;
                    stack.push(u);
                }
            }
        }
        count == self.k
    }

    /// Reads `i j w` lines (0-based). `#` starts a comment; a `# vertices: K`
    /// comment declares the vertex count, otherwise it is the largest index + 1.
    pub fn from_edge_list_file(path: &Path) -> Result<Self, GraphError> {
        let text = fs::read_to_string(path).map_err(|e| GraphError::Io(e.to_string()))?;
        Self::parse_edge_list(&text)
    }

    pub fn parse_edge_list(text: &str) -> Result<Self, GraphError> {
        let mut declared = None;
        let mut edges = Vec::new();
        let mut max_vertex = 0;
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if let Some(comment) = line.strip_prefix('#') {
                if let Some(k) = comment.trim().strip_prefix("vertices:") {
                    declared = Some(k.trim().parse::<usize>().map_err(|e| GraphError::File {
                        line: line_no,
                        reason: e.to_string(),
                    })?);
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(GraphError::File {
                    line: line_no,
                    reason: format!("expected `i j w`, got {} fields", fields.len()),
                });
            }
            let parse_idx = |s: &str| {
                s.parse::<usize>().map_err(|e| GraphError::File { line: line_no, reason: e.to_string() })
            };
            let i = parse_idx(fields[0])?;
            let j = parse_idx(fields[1])?;
            let w = fields[2]
                .parse::<f64>()
                .map_err(|e| GraphError::File { line: line_no, reason: e.to_string() })?;
            max_vertex = max_vertex.max(i).max(j);
            edges.push(Edge { i, j, w });
        }
        let k = declared.unwrap_or(if edges.is_empty() { 0 } else { max_vertex + 1 });
        Self::new(k, edges)
    }

    pub fn to_edge_list(&self) -> String {
        let mut s = format!("# vertices: {}\n", self.k);
        for e in &self.edges {
            s.push_str(&format!("{} {} {}\n", e.i, e.j, e.w));
        }
        s
    }
}

/// Path `0 - 1 - … - (k−1)` with uniform weight.
pub fn path_graph(k: usize, w: f64) -> Result<RegGraph, GraphError> {
    RegGraph::new(k, (1..k).map(|i| Edge { i: i - 1, j: i, w }).collect())
}

/// Cycle on `k ≥ 3` vertices with uniform weight.
pub fn cycle_graph(k: usize, w: f64) -> Result<RegGraph, GraphError> {
    if k < 3 {
        return Err(GraphError::DegenerateCycle(k));
    }
    let mut edges: Vec<Edge> = (1..k).map(|i| Edge { i: i - 1, j: i, w }).collect();
    edges.push(Edge { i: 0, j: k - 1, w });
    RegGraph::new(k, edges)
}

/// Cartesian product `g1 □ g2`; vertex `(a, u)` maps to `a · g2.k() + u`.
pub fn cartesian_product(g1: &RegGraph, g2: &RegGraph) -> RegGraph {
    let k2 = g2.k;
    let mut edges = Vec::with_capacity(g1.k * g2.edges.len() + k2 * g1.edges.len());
    for a in 0..g1.k {
        for e in &g2.edges {
            edges.push(Edge { i: a * k2 + e.i, j: a * k2 + e.j, w: e.w });
        }
    }
    for e in &g1.edges {
        for u in 0..k2 {
            edges.push(Edge { i: e.i * k2 + u, j: e.j * k2 + u, w: e.w });
        }
    }
    RegGraph { k: g1.k * k2, edges }
}

/// Textual graph constructor: `path:K:w`, `cycle:K:w`, `empty:K`,
/// `product:[spec,spec,...]`.
#[derive(Debug, Clone, PartialEq)]
pub enum GraphSpec {
    Path { k: usize, w: f64 },
    Cycle { k: usize, w: f64 },
    Empty { k: usize },
    Product(Vec<GraphSpec>),
}

impl GraphSpec {
    pub fn parse(spec: &str) -> Result<Self, GraphError> {
        let bad = |reason: &str| GraphError::Spec { spec: spec.to_string(), reason: reason.to_string() };
        let s = spec.trim();
        if let Some(rest) = s.strip_prefix("product:") {
            let inner = rest
                .trim()
                .strip_prefix('[')
                .and_then(|r| r.strip_suffix(']'))
                .ok_or_else(|| bad("product factors must be enclosed in [...]"))?;
            let parts = split_top_level(inner).ok_or_else(|| bad("unbalanced brackets"))?;
            if parts.is_empty() {
                return Err(bad("product needs at least one factor"));
            }
            return parts
                .into_iter()
                .map(GraphSpec::parse)
                .collect::<Result<Vec<_>, _>>()
                .map(GraphSpec::Product);
        }
        let fields: Vec<&str> = s.split(':').collect();
        let parse_k = |f: &str| f.trim().parse::<usize>().map_err(|_| bad("vertex count must be an integer"));
        let parse_w = |f: &str| f.trim().parse::<f64>().map_err(|_| bad("weight must be a number"));
        match fields.as_slice() {
            ["path", k, w] => Ok(GraphSpec::Path { k: parse_k(k)?, w: parse_w(w)? }),
            ["cycle", k, w] => Ok(GraphSpec::Cycle { k: parse_k(k)?, w: parse_w(w)? }),
            ["empty", k] => Ok(GraphSpec::Empty { k: parse_k(k)? }),
            _ => Err(bad("expected path:K:w, cycle:K:w, empty:K or product:[...]")),
        }
    }

    pub fn build(&self) -> Result<RegGraph, GraphError> {
        match self {
            GraphSpec::Path { k, w } => path_graph(*k, *w),
            GraphSpec::Cycle { k, w } => cycle_graph(*k, *w),
            GraphSpec::Empty { k } => RegGraph::edgeless(*k),
            GraphSpec::Product(factors) => {
                let mut it = factors.iter();
                let first = it.next().ok_or(GraphError::NoVertices)?.build()?;
                it.try_fold(first, |acc, f| Ok(cartesian_product(&acc, &f.build()?)))
            }
        }
    }

    /// Vertex count without building the graph.
    pub fn k(&self) -> usize {
        match self {
            GraphSpec::Path { k, .. } | GraphSpec::Cycle { k, .. } | GraphSpec::Empty { k } => *k,
            GraphSpec::Product(f) => f.iter().map(GraphSpec::k).product(),
        }
    }
}

impl std::fmt::Display for GraphSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GraphSpec::Path { k, w } => write!(f, "path:{k}:{w}"),
            GraphSpec::Cycle { k, w } => write!(f, "cycle:{k}:{w}"),
            GraphSpec::Empty { k } => write!(f, "empty:{k}"),
            GraphSpec::Product(parts) => {
                write!(f, "product:[")?;
                for (i, p) in parts.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{p}")?;
                }
                write!(f, "]")
            }
        }
    }
}

fn split_top_level(s: &str) -> Option<Vec<&str>> {
    let mut parts = Vec::new();
    let mut depth = 0i32;
    let mut start = 0;
    for (i, c) in s.char_indices() {
        match c {
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth < 0 {
                    return None;
                }
            }
            ',' if depth == 0 => {
                parts.push(s[start..i].trim());
                start = i + 1;
            }
            _ => {}
        }
    }
    if depth != 0 {
        return None;
    }
    let last = s[start..].trim();
    if !last.is_empty() {
        parts.push(last);
    }
    Some(parts)
}

/// Weighted Laplacian `L` in compressed sparse row form.
///
/// Every row stores its diagonal, including isolated vertices (explicit zero),
/// so `nnz = K + 2|E|`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseLaplacian {
    k: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseLaplacian {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.k)
            .map(|i| self.row(i).find(|&(j, _)| j == i).map_or(0.0, |(_, v)| v))
            .collect()
    }

    /// `out = (L + shift·I) x`.
    pub fn mul_shifted(&self, x: &[f64], shift: f64, out: &mut [f64]) {
        for i in 0..self.k {
            let mut s = shift * x[i];
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.values[p] * x[self.col_idx[p]];
            }
            out[i] = s;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        self.mul_shifted(x, 0.0, &mut out);
        out
    }

    /// `xᵀ L x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        self.mul_vec(x).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.k]; self.k];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }
}

/// Assembles the weighted Laplacian: `L_ii = Σ_j W_ij`, `L_ij = −W_ij`.
pub fn laplacian(g: &RegGraph) -> SparseLaplacian {
    let k = g.k;
    let mut nbrs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); k];
    for e in &g.edges {
        nbrs[e.i].push((e.j, e.w));
        nbrs[e.j].push((e.i, e.w));
    }
    let mut row_ptr = Vec::with_capacity(k + 1);
    let mut col_idx = Vec::with_capacity(k + 2 * g.edges.len());
    let mut values = Vec::with_capacity(k + 2 * g.edges.len());
    row_ptr.push(0);
    for (i, row) in nbrs.iter_mut().enumerate() {
        let degree: f64 = row.iter().map(|&(_, w)| w).sum();
        row.push((i, -degree));
        row.sort_by_key(|&(j, _)| j);
        for &(j, w) in row.iter() {
            col_idx.push(j);
            values.push(-w);
        }
        row_ptr.push(col_idx.len());
    }
    SparseLaplacian { k, row_ptr, col_idx, values }
}

/// `rows × cols` block stored column-major; each column is one right-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Block {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Self {
        let mut data = Vec::with_capacity(rows * columns.len());
        for c in columns {
            assert_eq!(c.len(), rows, "column length");
            data.extend_from_slice(c);
        }
        Self { rows, cols: columns.len(), data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[col * self.rows + row]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, v: f64) {
        self.data[col * self.rows + row] = v;
    }

    pub fn column(&self, col: usize) -> &[f64] {
        &self.data[col * self.rows..(col + 1) * self.rows]
    }

    pub fn column_mut(&mut self, col: usize) -> &mut [f64] {
        &mut self.data[col * self.rows..(col + 1) * self.rows]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CgOptions {
    /// Relative residual target `‖Ax − b‖ ≤ tol‖b‖`.
    pub tol: f64,
    /// Per-column iteration cap; `None` means `10·K`.
    pub max_iter: Option<usize>,
}

impl Default for CgOptions {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: None }
    }
}

#[derive(Debug, Clone)]
pub struct CgSolution {
    pub x: Block,
    /// Iterations used per column.
    pub iterations: Vec<usize>,
}

/// Solves `(L + (2/ω) I) x = b` for every column of `b` by Jacobi-preconditioned
/// conjugate gradient, warm-started column-wise from `warm` when given.
pub fn solve_regularized_laplacian(
    l: &SparseLaplacian,
    omega: f64,
    b: &Block,
    warm: Option<&Block>,
    opts: CgOptions,
) -> Result<CgSolution, GraphError> {
    if !(omega > 0.0 && omega.is_finite()) {
        return Err(GraphError::InvalidPenalty(omega));
    }
    if b.rows != l.k {
        return Err(GraphError::DimensionMismatch { expected: l.k, got: b.rows });
    }
    if let Some(w) = warm {
        if w.rows != b.rows || w.cols != b.cols {
            return Err(GraphError::DimensionMismatch { expected: b.rows * b.cols, got: w.rows * w.cols });
        }
    }
    let shift = 2.0 / omega;
    let inv_precond: Vec<f64> = l.diagonal().iter().map(|d| 1.0 / (d + shift)).collect();
    let max_iter = opts.max_iter.unwrap_or(10 * l.k).max(1);

    let mut x = match warm {
        Some(w) => w.clone(),
        None => Block::zeros(b.rows, b.cols),
    };
    let k = l.k;
    let outcomes: Vec<(usize, Option<f64>)> = x
        .data
        .par_chunks_mut(k.max(1))
        .enumerate()
        .map(|(col, xc)| {
            pcg_column(l, shift, &inv_precond, b.column(col), xc, opts.tol, max_iter)
        })
        .collect();

    let mut iterations = Vec::with_capacity(b.cols);
    let mut failure = None;
    for (col, (iters, unconverged)) in outcomes.into_iter().enumerate() {
        iterations.push(iters);
        if let Some(residual) = unconverged {
            if failure.is_none() {
                failure = Some((col, residual));
            }
        }
    }
    if let Some((column, residual)) = failure {
        return Err(GraphError::MaxIterExceeded { column, max_iter, residual, best: Box::new(x) });
    }
    Ok(CgSolution { x, iterations })
}

/// Runs PCG on one column in place. Returns iterations used and, on failure,
/// the final relative residual.
fn pcg_column(
    l: &SparseLaplacian,
    shift: f64,
    inv_precond: &[f64],
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> (usize, Option<f64>) {
    let k = b.len();
    let b_norm = norm(b);
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return (0, None);
    }
    let target = tol * b_norm;
    let mut r = vec![0.0; k];
    l.mul_shifted(x, shift, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    let mut r_norm = norm(&r);
    if r_norm <= target {
        return (0, None);
    }
    let mut z: Vec<f64> = r.iter().zip(inv_precond).map(|(a, m)| a * m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; k];
    for it in 1..=max_iter {
        l.mul_shifted(&p, shift, &mut ap);
        let alpha = rz / dot(&p, &ap);
        for i in 0..k {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        r_norm = norm(&r);
        if r_norm <= target {
            return (it, None);
        }
        for i in 0..k {
            z[i] = r[i] * inv_precond[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..k {
            p[i] = z[i] + beta * p[i];
        }
    }
    (max_iter, Some(r_norm / b_norm))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}
