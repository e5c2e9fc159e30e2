//! Dense interior-point solver for Hermitian semidefinite programs of the form
//!
//! ```text
//! maximize    Re Tr{C V}
//! subject to  Tr{A_i V} >= b_i   (lower constraints)
//!             Tr{A_j V} <= b_j   (upper constraints)
//!             V Hermitian, V >= 0
//! ```
//!
//! with a handful of trace constraints and a matrix dimension in the tens.
//!
//! # Real embedding
//!
//! A Hermitian `V = X + jY` of size `n` maps to the real symmetric
//! `[[X, -Y], [Y, X]]` of size `2n`. The map preserves positive
//! semidefiniteness, doubles every eigenvalue's multiplicity (a rank-`r`
//! `V` embeds to rank `2r`) and doubles traces, so `Tr{A V}` equals half the
//! real inner product of the two embeddings. The solver works on the
//! embedded problem and maps back by averaging the two diagonal blocks and
//! the two off-diagonal blocks.
//!
//! # Algorithm
//!
//! The dual of the problem above, `min sum_i y_i b_i` subject to
//! `sum_i y_i A_i - C >= 0`, `y >= 0`, has only one variable per trace
//! constraint. It is solved as a cone program in a homogeneous self-dual
//! embedding with Nesterov-Todd scaling and Mehrotra predictor-corrector
//! steps; the primal matrix `V` comes out as the conic dual variable.
//! Each Newton system reduces to a dense positive-definite system whose size
//! is the number of trace constraints. The embedding yields either an
//! optimal pair with a small duality gap or a Farkas certificate
//! `y >= 0, sum y_i A_i >= 0, sum y_i b_i < 0` of primal infeasibility.
//!
//! Rows and the objective are equilibrated before solving; tolerances and
//! the reported [`KktResiduals`] refer to the equilibrated problem.

use std::fmt::Write as _;

use nalgebra::{Cholesky, Complex, DMatrix, DVector};
use thiserror::Error;

use crate::linalg::{hermitian_defect, hermitian_eigen, max_abs, trace_product};
use crate::CMatrix;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdpError {
    #[error("{what} is {rows}x{cols}, expected {dim}x{dim}")]
    DimensionMismatch { what: String, rows: usize, cols: usize, dim: usize },
    #[error("{what} deviates from Hermitian by {defect:e}")]
    NotHermitian { what: String, defect: f64 },
    #[error("problem is not compact: no upper constraint has a positive definite matrix")]
    NotCompact,
    #[error("non-finite data in {0}")]
    NonFinite(String),
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// `Tr{A V}` compared against `bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceConstraint {
    pub matrix: CMatrix,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HermitianLinearSdp {
    pub dim: usize,
    /// Maximize `Re Tr{objective V}`.
    pub objective: CMatrix,
    /// `Tr{A V} >= b`.
    pub lower: Vec<TraceConstraint>,
    /// `Tr{A V} <= b`.
    pub upper: Vec<TraceConstraint>,
}

impl HermitianLinearSdp {
    pub fn new(objective: CMatrix) -> Self {
        Self { dim: objective.nrows(), objective, lower: Vec::new(), upper: Vec::new() }
    }

    pub fn with_lower(mut self, matrix: CMatrix, bound: f64) -> Self {
        self.lower.push(TraceConstraint { matrix, bound });
        self
    }

    pub fn with_upper(mut self, matrix: CMatrix, bound: f64) -> Self {
        self.upper.push(TraceConstraint { matrix, bound });
        self
    }

    fn constraints(&self) -> impl Iterator<Item = (&str, usize, &TraceConstraint)> {
        self.lower
            .iter()
            .enumerate()
            .map(|(i, c)| ("lower", i, c))
            .chain(self.upper.iter().enumerate().map(|(i, c)| ("upper", i, c)))
    }

    pub fn validate(&self) -> Result<(), SdpError> {
        let check = |what: String, m: &CMatrix| -> Result<(), SdpError> {
            if m.nrows() != self.dim || m.ncols() != self.dim {
                return Err(SdpError::DimensionMismatch { what, rows: m.nrows(), cols: m.ncols(), dim: self.dim });
            }
            if m.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
                return Err(SdpError::NonFinite(what));
            }
            let defect = hermitian_defect(m);
            if defect > 1e-12 * max_abs(m).max(1.0) {
                return Err(SdpError::NotHermitian { what, defect });
            }
            Ok(())
        };
        check("objective".into(), &self.objective)?;
        for (kind, i, c) in self.constraints() {
            check(format!("{kind} constraint {i}"), &c.matrix)?;
            if !c.bound.is_finite() {
                return Err(SdpError::NonFinite(format!("{kind} bound {i}")));
            }
        }
        let compact = self.upper.iter().any(|c| hermitian_eigen(&c.matrix).values.last().is_some_and(|&v| v > 0.0));
        if !compact {
            return Err(SdpError::NotCompact);
        }
        Ok(())
    }

    /// Plain-text dump: a header line, `dim`, then each matrix as `dim` rows
    /// of `re im` pairs, introduced by `objective`, `lower <b>` or
    /// `upper <b>`, and a closing `end`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let write_matrix = |out: &mut String, m: &CMatrix| {
            for r in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|c| format!("{} {}", m[(r, c)].re, m[(r, c)].im)).collect();
                let _ = writeln!(out, "{}", row.join(" "));
            }
        };
        let _ = writeln!(out, "hermitian-linear-sdp 1");
        let _ = writeln!(out, "dim {}", self.dim);
        let _ = writeln!(out, "objective");
        write_matrix(&mut out, &self.objective);
        for (kind, _, c) in self.constraints() {
            let _ = writeln!(out, "{kind} {}", c.bound);
            write_matrix(&mut out, &c.matrix);
        }
        let _ = writeln!(out, "end");
        out
    }

    pub fn from_text(text: &str) -> Result<Self, SdpError> {
        let lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .collect();
        let mut cursor = LineCursor { lines: &lines, pos: 0 };

        let (ln, header) = cursor.next("header")?;
        if header != "hermitian-linear-sdp 1" {
            return Err(parse_error(ln, "bad header"));
        }
        let (ln, dim_line) = cursor.next("dim")?;
        let dim: usize = dim_line
            .strip_prefix("dim ")
            .and_then(|d| d.trim().parse().ok())
            .ok_or_else(|| parse_error(ln, "expected `dim <n>`"))?;
        let (ln, obj) = cursor.next("objective")?;
        if obj != "objective" {
            return Err(parse_error(ln, "expected `objective`"));
        }
        let mut problem = HermitianLinearSdp::new(cursor.matrix(dim)?);
        loop {
            let (ln, line) = cursor.next("constraint or end")?;
            if line == "end" {
                break;
            }
            let (kind, bound) =
                line.split_once(' ').ok_or_else(|| parse_error(ln, "expected `lower <b>` or `upper <b>`"))?;
            let bound: f64 = bound.trim().parse().map_err(|_| parse_error(ln, "bad bound"))?;
            let matrix = cursor.matrix(dim)?;
            match kind {
                "lower" => problem.lower.push(TraceConstraint { matrix, bound }),
                "upper" => problem.upper.push(TraceConstraint { matrix, bound }),
                _ => return Err(parse_error(ln, "expected `lower` or `upper`")),
            }
        }
        Ok(problem)
    }
}

fn parse_error(line: usize, message: &str) -> SdpError {
    SdpError::Parse { line, message: message.to_string() }
}

struct LineCursor<'a> {
    lines: &'a [(usize, &'a str)],
    pos: usize,
}

impl<'a> LineCursor<'a> {
    fn next(&mut self, expect: &str) -> Result<(usize, &'a str), SdpError> {
        let line = self.lines.get(self.pos).copied().ok_or_else(|| {
            let last = self.lines.last().map_or(0, |l| l.0);
            parse_error(last, &format!("unexpected end of input, expected {expect}"))
        })?;
        self.pos += 1;
        Ok(line)
    }

    fn matrix(&mut self, dim: usize) -> Result<CMatrix, SdpError> {
        let mut m = CMatrix::zeros(dim, dim);
        for r in 0..dim {
            let (ln, row) = self.next("matrix row")?;
            let vals: Vec<f64> = row
                .split_whitespace()
                .map(str::parse::<f64>)
                .collect::<Result<_, _>>()
                .map_err(|_| parse_error(ln, "bad number"))?;
            if vals.len() != 2 * dim {
                return Err(parse_error(ln, "wrong number of entries in row"));
            }
            for c in 0..dim {
                m[(r, c)] = Complex::new(vals[2 * c], vals[2 * c + 1]);
            }
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    NumericalFailure,
}

/// Lagrange multipliers: one per trace constraint plus the PSD-cone
/// multiplier `Y = sum_upper y A - sum_lower y A - C`.
#[derive(Debug, Clone, PartialEq)]
pub struct SdpDuals {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub psd: CMatrix,
}

/// Residuals of the optimality conditions on the equilibrated problem.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    /// Largest trace-constraint violation or negative eigenvalue of `V`.
    pub primal: f64,
    /// Stationarity residual, negative multipliers or negative eigenvalue of `Y`.
    pub dual: f64,
    /// `Tr{Y V}` plus multiplier-weighted slacks, relative to the objective.
    pub complementarity: f64,
    /// Relative primal-dual objective gap.
    pub gap: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.primal.max(self.dual).max(self.complementarity).max(self.gap)
    }
}

/// Farkas certificate for primal infeasibility: non-negative multipliers
/// with `sum_upper y A - sum_lower y A >= 0` and
/// `sum_upper y b - sum_lower y b = -1`.
#[derive(Debug, Clone, PartialEq)]
pub struct InfeasibilityCertificate {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub v_matrix: CMatrix,
    pub duals: SdpDuals,
    pub kkt_residuals: KktResiduals,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub iterations: usize,
    pub certificate: Option<InfeasibilityCertificate>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SdpSettings {
    pub feasibility_tol: f64,
    pub absolute_gap_tol: f64,
    pub relative_gap_tol: f64,
    /// Looser tolerance accepted when the iteration stalls.
    pub fallback_tol: f64,
    pub max_iterations: usize,
}

impl Default for SdpSettings {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-9,
            absolute_gap_tol: 1e-10,
            relative_gap_tol: 1e-10,
            fallback_tol: 1e-8,
            max_iterations: 200,
        }
    }
}

/// `lambda_2 / lambda_1` of a Hermitian PSD matrix; 0 for the zero matrix.
pub fn rank_one_ratio(v: &CMatrix) -> f64 {
    let eig = hermitian_eigen(v);
    match eig.values.as_slice() {
        [] | [_] => 0.0,
        [l1, l2, ..] if *l1 > 0.0 => (l2.max(0.0)) / l1,
        _ => 0.0,
    }
}

/// Relative slack below which a constraint is held fixed by [`reduce_rank`].
const TIGHT_TOL: f64 = 1e-7;
/// Eigenvalues below this fraction of the largest count as zero in
/// [`reduce_rank`].
const RANK_TOL: f64 = 1e-10;

/// Walks an optimal `v` across the optimal face to a point of lower rank.
///
/// Interior-point iterates converge to the relative interior of the optimal
/// face, which has the largest rank in it. When the face also holds a
/// rank-one point, this finds it: with `v = X X^H` of rank `r`, a Hermitian
/// `D` in the null space of `D -> Tr{X^H A X D}` over the objective and every
/// tight constraint keeps all of them unchanged along `X (I - t D) X^H`, and
/// `t = 1 / lambda_max(D)` removes one eigenvalue. Slack constraints limit
/// the step. Returns `v` unchanged when no such move exists or the result is
/// not at least as good.
pub fn reduce_rank(problem: &HermitianLinearSdp, v: &CMatrix) -> CMatrix {
    let n = problem.dim;
    let rows: Vec<(&CMatrix, Option<(f64, f64)>)> = std::iter::once((&problem.objective, None))
        .chain(problem.lower.iter().map(|c| (&c.matrix, Some((c.bound, 1.0)))))
        .chain(problem.upper.iter().map(|c| (&c.matrix, Some((c.bound, -1.0)))))
        .collect();
    let mut current = v.clone();
    for _ in 0..4 * n + 4 {
        let eig = hermitian_eigen(&current);
        let top = eig.values[0];
        let r = eig.values.iter().take_while(|&&l| l > RANK_TOL * top).count();
        if top <= 0.0 || r <= 1 {
            break;
        }
        let x = CMatrix::from_fn(n, r, |i, k| eig.vectors[(i, k)] * eig.values[k].sqrt());
        let reduced: Vec<CMatrix> = rows.iter().map(|(a, _)| x.adjoint() * *a * &x).collect();
        let values: Vec<f64> = reduced.iter().map(|m| m.trace().re).collect();
        let tight: Vec<bool> = rows
            .iter()
            .zip(&values)
            .map(|((_, c), value)| match c {
                None => true,
                Some((bound, _)) => (value - bound).abs() <= TIGHT_TOL * bound.abs().max(1e-300),
            })
            .collect();

        let basis = hermitian_basis(r);
        let held: Vec<DVector<f64>> = reduced
            .iter()
            .zip(&tight)
            .filter(|(_, t)| **t)
            .map(|(m, _)| DVector::from_iterator(basis.len(), basis.iter().map(|b| trace_product(m, b))))
            .filter_map(|row| {
                let norm = row.norm();
                (norm > 0.0).then(|| row / norm)
            })
            .collect();
        let mut gram = DMatrix::<f64>::zeros(basis.len(), basis.len());
        for row in &held {
            gram += row * row.transpose();
        }
        let spectrum = gram.symmetric_eigen();
        let scale = spectrum.eigenvalues.iter().copied().fold(1.0, f64::max);

        let mut best: Option<(f64, CMatrix)> = None;
        for (k, &lambda) in spectrum.eigenvalues.iter().enumerate() {
            if lambda > 1e-12 * scale {
                continue;
            }
            let coeffs = spectrum.eigenvectors.column(k);
            let mut d = CMatrix::zeros(r, r);
            for (c, b) in coeffs.iter().zip(&basis) {
                d += b * Complex::new(*c, 0.0);
            }
            for sign in [1.0, -1.0] {
                let d = &d * Complex::new(sign, 0.0);
                let d_top = hermitian_eigen(&d).values[0];
                if d_top <= 0.0 {
                    continue;
                }
                let full = 1.0 / d_top;
                let mut t = full;
                for (((_, c), m), (value, held)) in rows.iter().zip(&reduced).zip(values.iter().zip(&tight)) {
                    let (Some((bound, side)), false) = (c, held) else { continue };
                    // the constraint value moves at rate -Tr{R D}
                    let rate = -trace_product(m, &d);
                    if side * rate < 0.0 {
                        t = t.min(side * (value - bound) / -(side * rate));
                    }
                }
                let fraction = t / full;
                if best.as_ref().is_none_or(|(f, _)| fraction > *f) {
                    let step = CMatrix::identity(r, r) - &d * Complex::new(t, 0.0);
                    best = Some((fraction, crate::linalg::hermitian_part(&(&x * step * x.adjoint()))));
                }
            }
        }
        match best {
            Some((fraction, next)) if fraction > 1e-9 => current = next,
            _ => break,
        }
    }
    if no_worse(problem, &current, v) {
        current
    } else {
        v.clone()
    }
}

/// Real basis of the `r x r` Hermitian matrices.
fn hermitian_basis(r: usize) -> Vec<CMatrix> {
    let mut basis = Vec::with_capacity(r * r);
    for i in 0..r {
        for j in i..r {
            let mut re = CMatrix::zeros(r, r);
            re[(i, j)] = Complex::new(1.0, 0.0);
            re[(j, i)] = Complex::new(1.0, 0.0);
            basis.push(re);
            if i != j {
                let mut im = CMatrix::zeros(r, r);
                im[(i, j)] = Complex::new(0.0, 1.0);
                im[(j, i)] = Complex::new(0.0, -1.0);
                basis.push(im);
            }
        }
    }
    basis
}

/// `candidate` keeps the objective and feasibility of `reference` up to
/// round-off.
fn no_worse(problem: &HermitianLinearSdp, candidate: &CMatrix, reference: &CMatrix) -> bool {
    let violation = |v: &CMatrix| {
        let lower = problem.lower.iter().map(|c| (c.bound - trace_product(&c.matrix, v)) / c.bound.abs().max(f64::MIN_POSITIVE));
        let upper = problem.upper.iter().map(|c| (trace_product(&c.matrix, v) - c.bound) / c.bound.abs().max(f64::MIN_POSITIVE));
        lower.chain(upper).fold(0.0, f64::max)
    };
    let before = trace_product(&problem.objective, reference);
    let after = trace_product(&problem.objective, candidate);
    let min_eig = hermitian_eigen(candidate).values.last().copied().unwrap_or(0.0);
    let top = hermitian_eigen(reference).values.first().copied().unwrap_or(0.0);
    after >= before - 1e-9 * before.abs()
        && violation(candidate) <= violation(reference).max(0.0) + 1e-9
        && min_eig >= -1e-9 * top
}

pub fn solve(problem: &HermitianLinearSdp, warm_start: Option<&CMatrix>) -> Result<SdpSolution, SdpError> {
    solve_with(problem, warm_start, &SdpSettings::default())
}

pub fn solve_with(
    problem: &HermitianLinearSdp,
    warm_start: Option<&CMatrix>,
    settings: &SdpSettings,
) -> Result<SdpSolution, SdpError> {
    problem.validate()?;
    if let Some(ws) = warm_start {
        if ws.nrows() != problem.dim || ws.ncols() != problem.dim {
            return Err(SdpError::DimensionMismatch {
                what: "warm start".into(),
                rows: ws.nrows(),
                cols: ws.ncols(),
                dim: problem.dim,
            });
        }
    }
    let scaled = ScaledProblem::new(problem);
    let outcome = Hsde::new(&scaled, warm_start, settings).run();
    let solution = scaled.recover(problem, outcome);
    if warm_start.is_none() || solution.status == SdpStatus::Optimal {
        return Ok(solution);
    }
    // a poorly centred warm start can stall the iteration; retry from the
    // default interior point
    let mut cold = scaled.recover(problem, Hsde::new(&scaled, None, settings).run());
    cold.iterations += solution.iterations;
    Ok(cold)
}

// ----------------------------------------------------------------------------
// Real embedding and equilibration

fn embed(m: &CMatrix) -> DMatrix<f64> {
    let n = m.nrows();
    DMatrix::from_fn(2 * n, 2 * n, |r, c| {
        let z = m[(r % n, c % n)];
        match (r < n, c < n) {
            (true, true) | (false, false) => z.re,
            (true, false) => -z.im,
            (false, true) => z.im,
        }
    })
}

fn unembed(x: &DMatrix<f64>) -> CMatrix {
    let n = x.nrows() / 2;
    CMatrix::from_fn(n, n, |r, c| {
        let re = 0.5 * (x[(r, c)] + x[(r + n, c + n)]);
        let im = 0.5 * (x[(r + n, c)] - x[(r, c + n)]);
        Complex::new(re, im)
    })
}

/// All constraints as real `<F_i, X> <= g_i` rows with unit Frobenius norm,
/// the objective normalized to unit norm and `X` rescaled so `max |g_i| = 1`.
struct ScaledProblem {
    rows: Vec<DMatrix<f64>>,
    rhs: DVector<f64>,
    objective: DMatrix<f64>,
    /// Original row `i` equals `rows[i] / row_scale[i]`.
    row_scale: Vec<f64>,
    objective_scale: f64,
    variable_scale: f64,
    n_lower: usize,
}

impl ScaledProblem {
    fn new(problem: &HermitianLinearSdp) -> Self {
        let mut rows = Vec::new();
        let mut rhs = Vec::new();
        let mut row_scale = Vec::new();
        for (sign, c) in
            problem.lower.iter().map(|c| (-1.0, c)).chain(problem.upper.iter().map(|c| (1.0, c)))
        {
            let f = embed(&c.matrix) * (0.5 * sign);
            let norm = f.norm();
            let scale = if norm > 0.0 { 1.0 / norm } else { 1.0 };
            rows.push(f * scale);
            rhs.push(sign * c.bound * scale);
            row_scale.push(scale);
        }
        let variable_scale = rhs.iter().fold(0.0_f64, |a, b| a.max(b.abs()));
        let variable_scale = if variable_scale > 0.0 { variable_scale } else { 1.0 };
        let rhs = DVector::from_iterator(rhs.len(), rhs.into_iter().map(|g| g / variable_scale));
        let objective = embed(&problem.objective) * 0.5;
        let onorm = objective.norm();
        let objective_scale = if onorm > 0.0 { 1.0 / onorm } else { 1.0 };
        Self {
            rows,
            rhs,
            objective: objective * objective_scale,
            row_scale,
            objective_scale,
            variable_scale,
            n_lower: problem.lower.len(),
        }
    }

    fn m(&self) -> usize {
        self.rows.len()
    }

    fn n(&self) -> usize {
        self.objective.nrows()
    }

    /// `G x = (-x, -sum_i x_i F_i)`.
    fn apply_g(&self, x: &DVector<f64>) -> ConeVec {
        let mut sdp = DMatrix::zeros(self.n(), self.n());
        for (xi, f) in x.iter().zip(&self.rows) {
            sdp -= f * *xi;
        }
        ConeVec { lp: -x, sdp }
    }

    /// `G^T v = -v_lp - (<F_i, v_sdp>)_i`.
    fn apply_gt(&self, v: &ConeVec) -> DVector<f64> {
        DVector::from_iterator(self.m(), self.rows.iter().enumerate().map(|(i, f)| -v.lp[i] - f.dot(&v.sdp)))
    }

    fn h(&self) -> ConeVec {
        ConeVec { lp: DVector::zeros(self.m()), sdp: -&self.objective }
    }

    fn recover(&self, problem: &HermitianLinearSdp, out: HsdeOutcome) -> SdpSolution {
        let n_lower = self.n_lower;
        let split = |y: &DVector<f64>, factor: f64| -> (Vec<f64>, Vec<f64>) {
            let scaled: Vec<f64> = y.iter().zip(&self.row_scale).map(|(v, r)| v * r * factor).collect();
            (scaled[..n_lower].to_vec(), scaled[n_lower..].to_vec())
        };
        match out.kind {
            OutcomeKind::Infeasible => {
                // y with sum y_i g_i = -1 on the scaled rows; rescale so the
                // original bounds give -1 as well.
                let (mut lower, mut upper) = split(&out.y, 1.0);
                let value: f64 = upper.iter().zip(&problem.upper).map(|(y, c)| y * c.bound).sum::<f64>()
                    - lower.iter().zip(&problem.lower).map(|(y, c)| y * c.bound).sum::<f64>();
                if value < 0.0 {
                    for y in lower.iter_mut().chain(upper.iter_mut()) {
                        *y /= -value;
                    }
                }
                let dim = problem.dim;
                SdpSolution {
                    status: SdpStatus::Infeasible,
                    v_matrix: CMatrix::zeros(dim, dim),
                    duals: SdpDuals { lower: vec![0.0; problem.lower.len()], upper: vec![0.0; problem.upper.len()], psd: CMatrix::zeros(dim, dim) },
                    kkt_residuals: out.residuals,
                    primal_objective: f64::NAN,
                    dual_objective: f64::NAN,
                    iterations: out.iterations,
                    certificate: Some(InfeasibilityCertificate { lower, upper }),
                }
            }
            OutcomeKind::Optimal | OutcomeKind::Failure => {
                let v = unembed(&(&out.x_mat * self.variable_scale));
                let (lower, upper) = split(&out.y, 1.0 / self.objective_scale);
                let psd = unembed(&out.s_mat) * Complex::new(2.0 / self.objective_scale, 0.0);
                let primal_objective = trace_product(&problem.objective, &v);
                let dual_objective = upper.iter().zip(&problem.upper).map(|(y, c)| y * c.bound).sum::<f64>()
                    - lower.iter().zip(&problem.lower).map(|(y, c)| y * c.bound).sum::<f64>();
                SdpSolution {
                    status: if out.kind == OutcomeKind::Optimal { SdpStatus::Optimal } else { SdpStatus::NumericalFailure },
                    v_matrix: v,
                    duals: SdpDuals { lower, upper, psd },
                    kkt_residuals: out.residuals,
                    primal_objective,
                    dual_objective,
                    iterations: out.iterations,
                    certificate: None,
                }
            }
        }
    }
}

// ----------------------------------------------------------------------------
// Cone algebra on R^m_+ x S^n_+

#[derive(Debug, Clone)]
struct ConeVec {
    lp: DVector<f64>,
    sdp: DMatrix<f64>,
}

impl ConeVec {
    fn identity(m: usize, n: usize) -> Self {
        Self { lp: DVector::from_element(m, 1.0), sdp: DMatrix::identity(n, n) }
    }

    fn dot(&self, other: &Self) -> f64 {
        self.lp.dot(&other.lp) + self.sdp.dot(&other.sdp)
    }

    fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    fn axpy(&mut self, a: f64, x: &Self) {
        self.lp.axpy(a, &x.lp, 1.0);
        self.sdp += &x.sdp * a;
    }

    fn scaled(&self, a: f64) -> Self {
        Self { lp: &self.lp * a, sdp: &self.sdp * a }
    }

    fn sub(&self, other: &Self) -> Self {
        Self { lp: &self.lp - &other.lp, sdp: &self.sdp - &other.sdp }
    }

    fn min_eigenvalue(&self) -> f64 {
        let lp_min = self.lp.iter().copied().fold(f64::INFINITY, f64::min);
        let sdp_min = symmetric(&self.sdp).symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        lp_min.min(sdp_min)
    }

    /// Shifts into the interior of the cone when not already well inside.
    fn push_interior(&mut self) {
        let depth = -self.min_eigenvalue();
        if depth >= -1e-8 * self.norm().max(1.0) {
            let e = ConeVec::identity(self.lp.len(), self.sdp.nrows());
            self.axpy(1.0 + depth, &e);
        }
    }
}

fn symmetric(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

// The cone blocks here are small (tens of rows), where a plain loop beats a
// packed GEMM.

/// `A B`.
fn mul(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k, m) = (a.nrows(), a.ncols(), b.ncols());
    debug_assert_eq!(k, b.nrows());
    let mut c = DMatrix::zeros(n, m);
    let (ad, bd) = (a.as_slice(), b.as_slice());
    for (j, col) in c.as_mut_slice().chunks_exact_mut(n).enumerate() {
        for p in 0..k {
            let scale = bd[j * k + p];
            for (ci, ai) in col.iter_mut().zip(&ad[p * n..(p + 1) * n]) {
                *ci += ai * scale;
            }
        }
    }
    c
}

/// `A^T B`.
fn mul_tn(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (k, n, m) = (a.nrows(), a.ncols(), b.ncols());
    debug_assert_eq!(k, b.nrows());
    let (ad, bd) = (a.as_slice(), b.as_slice());
    DMatrix::from_fn(n, m, |i, j| {
        ad[i * k..(i + 1) * k].iter().zip(&bd[j * k..(j + 1) * k]).map(|(x, y)| x * y).sum()
    })
}

/// Symmetrized `A X A^T`.
fn congruence(a: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    symmetric(&mul(&mul(a, x), &a.transpose()))
}

/// Symmetrized `A^T X A`.
fn congruence_t(a: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    symmetric(&mul_tn(a, &mul(x, a)))
}

/// Nesterov-Todd scaling `W` at `(s, z)`: `W z = W^{-T} s = lambda`.
struct NtScaling {
    /// LP block: `W = diag(w)`, `w = sqrt(s / z)`.
    w: DVector<f64>,
    lambda_lp: DVector<f64>,
    /// SDP block: `W(Z) = R^T Z R`, `W^T(U) = R U R^T`.
    r: DMatrix<f64>,
    lambda_sdp: DVector<f64>,
    /// `R^{-T}`.
    rti: DMatrix<f64>,
    /// `(R R^T)^{-1}`, so `(W^T W)^{-1}(U) = Q U Q`.
    q: DMatrix<f64>,
    /// `R R^T`.
    rrt: DMatrix<f64>,
}

impl NtScaling {
    fn new(s: &ConeVec, z: &ConeVec) -> Option<Self> {
        if s.lp.iter().chain(z.lp.iter()).any(|v| v.is_nan() || *v <= 0.0) {
            return None;
        }
        let w = s.lp.zip_map(&z.lp, |a, b| (a / b).sqrt());
        let lambda_lp = s.lp.zip_map(&z.lp, |a, b| (a * b).sqrt());
        let ls = Cholesky::new(symmetric(&s.sdp))?.unpack();
        let lz = Cholesky::new(symmetric(&z.sdp))?.unpack();
        let svd = mul_tn(&lz, &ls).svd(true, true);
        let u = svd.u?;
        let v = svd.v_t?.transpose();
        let sv = svd.singular_values;
        if sv.iter().any(|x| x.is_nan() || *x <= 0.0) {
            return None;
        }
        let inv_sqrt = DMatrix::from_diagonal(&sv.map(|x| 1.0 / x.sqrt()));
        let r = mul(&mul(&ls, &v), &inv_sqrt);
        let rti = mul(&mul(&lz, &u), &inv_sqrt);
        let q = mul(&rti, &rti.transpose());
        let rrt = mul(&r, &r.transpose());
        Some(Self { w, lambda_lp, r, lambda_sdp: sv, rti, q, rrt })
    }

    fn apply_w(&self, v: &ConeVec) -> ConeVec {
        ConeVec { lp: v.lp.component_mul(&self.w), sdp: congruence_t(&self.r, &v.sdp) }
    }

    fn apply_wt(&self, v: &ConeVec) -> ConeVec {
        ConeVec { lp: v.lp.component_mul(&self.w), sdp: congruence(&self.r, &v.sdp) }
    }

    /// `W^{-T} v`; on the SDP block `R^{-1} V R^{-T}`.
    fn apply_wt_inverse(&self, v: &ConeVec) -> ConeVec {
        ConeVec { lp: v.lp.component_div(&self.w), sdp: congruence_t(&self.rti, &v.sdp) }
    }

    fn apply_wtw(&self, v: &ConeVec) -> ConeVec {
        ConeVec { lp: v.lp.component_mul(&self.w.component_mul(&self.w)), sdp: congruence(&self.rrt, &v.sdp) }
    }

    /// `lambda o lambda`.
    fn lambda_squared(&self) -> ConeVec {
        ConeVec {
            lp: self.lambda_lp.map(|x| x * x),
            sdp: DMatrix::from_diagonal(&self.lambda_sdp.map(|x| x * x)),
        }
    }

    /// Solves `lambda o q = r` for `q`.
    fn lambda_inverse_product(&self, r: &ConeVec) -> ConeVec {
        let l = &self.lambda_sdp;
        ConeVec {
            lp: r.lp.component_div(&self.lambda_lp),
            sdp: DMatrix::from_fn(l.len(), l.len(), |i, j| 2.0 * r.sdp[(i, j)] / (l[i] + l[j])),
        }
    }

    /// Largest `alpha` with `lambda + alpha d` in the cone.
    fn max_step(&self, d: &ConeVec) -> f64 {
        let mut alpha = f64::INFINITY;
        for (l, di) in self.lambda_lp.iter().zip(d.lp.iter()) {
            if *di < 0.0 {
                alpha = alpha.min(-l / di);
            }
        }
        let l = &self.lambda_sdp;
        let m = DMatrix::from_fn(l.len(), l.len(), |i, j| d.sdp[(i, j)] / (l[i] * l[j]).sqrt());
        let min = symmetric(&m).symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        if min < 0.0 {
            alpha = alpha.min(-1.0 / min);
        }
        alpha
    }
}

/// Symmetrized Jordan product `(a b + b a) / 2` on each block.
fn jordan_product(a: &ConeVec, b: &ConeVec) -> ConeVec {
    let ab = mul(&a.sdp, &b.sdp);
    ConeVec { lp: a.lp.component_mul(&b.lp), sdp: symmetric(&ab) }
}

// ----------------------------------------------------------------------------
// Homogeneous self-dual interior-point iteration

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum OutcomeKind {
    Optimal,
    Infeasible,
    Failure,
}

struct HsdeOutcome {
    kind: OutcomeKind,
    /// Multipliers (the cone program's primal variable), normalized by tau;
    /// for `Infeasible` the raw certificate direction.
    y: DVector<f64>,
    /// Primal matrix in the equilibrated, embedded space.
    x_mat: DMatrix<f64>,
    /// Dual slack matrix in the equilibrated, embedded space.
    s_mat: DMatrix<f64>,
    residuals: KktResiduals,
    iterations: usize,
}

#[derive(Clone)]
struct Iterate {
    x: DVector<f64>,
    s: ConeVec,
    z: ConeVec,
    tau: f64,
    kappa: f64,
}

struct Direction {
    dx: DVector<f64>,
    ds: ConeVec,
    dz: ConeVec,
    ds_scaled: ConeVec,
    dz_scaled: ConeVec,
    dtau: f64,
    dkappa: f64,
}

struct Hsde<'a> {
    p: &'a ScaledProblem,
    settings: SdpSettings,
    state: Iterate,
    /// Iterate with the smallest optimality merit seen so far.
    best: Option<(f64, Iterate)>,
    c_norm0: f64,
    h_norm0: f64,
}

struct Metrics {
    pres: f64,
    dres: f64,
    gap: f64,
    pcost: f64,
    dcost: f64,
    dual_infeasibility: Option<f64>,
    primal_unbounded: Option<f64>,
    rx: DVector<f64>,
    rz: ConeVec,
    rt: f64,
    mu: f64,
}

impl<'a> Hsde<'a> {
    fn new(p: &'a ScaledProblem, warm_start: Option<&CMatrix>, settings: &SdpSettings) -> Self {
        let m = p.m();
        let c = &p.rhs;
        let h = p.h();
        // G^T G = I + [<F_i, F_j>]
        let gram = DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { 0.0 } + p.rows[i].dot(&p.rows[j]));
        let chol = Cholesky::new(gram).expect("G^T G is positive definite");
        let x = chol.solve(&p.apply_gt(&h).map(|v| -v));
        let mut s = h.sub(&p.apply_g(&x));
        s.push_interior();
        let mut z = match warm_start {
            Some(v) => {
                let x_mat = embed(v) / p.variable_scale;
                let slack = DVector::from_iterator(m, p.rows.iter().zip(c.iter()).map(|(f, g)| g - f.dot(&x_mat)));
                ConeVec { lp: slack, sdp: x_mat }
            }
            None => {
                let w = chol.solve(&(-c));
                p.apply_g(&w)
            }
        };
        z.push_interior();
        Self {
            p,
            settings: *settings,
            state: Iterate { x, s, z, tau: 1.0, kappa: 1.0 },
            best: None,
            c_norm0: c.norm().max(1.0),
            h_norm0: h.norm().max(1.0),
        }
    }

    fn degree(&self) -> f64 {
        (self.p.m() + self.p.n()) as f64
    }

    fn metrics(&self) -> Metrics {
        let st = &self.state;
        let p = self.p;
        let h = p.h();
        let mut rx = p.apply_gt(&st.z);
        rx.axpy(st.tau, &p.rhs, 1.0);
        let gx = p.apply_g(&st.x);
        let mut hrz = st.s.clone();
        hrz.axpy(1.0, &gx);
        let mut rz = hrz.clone();
        rz.axpy(-st.tau, &h);
        let cx = p.rhs.dot(&st.x);
        let hz = h.dot(&st.z);
        let rt = st.kappa + cx + hz;
        let sz = st.s.dot(&st.z);
        let mu = (sz + st.tau * st.kappa) / (self.degree() + 1.0);
        let pcost = cx / st.tau;
        let dcost = -hz / st.tau;
        let dual_infeasibility = (cx < 0.0).then(|| hrz.norm() / self.h_norm0 / (-cx));
        let primal_unbounded = (hz < 0.0).then(|| p.apply_gt(&st.z).norm() / self.c_norm0 / (-hz));
        Metrics {
            pres: rz.norm() / st.tau / self.h_norm0,
            dres: rx.norm() / st.tau / self.c_norm0,
            gap: sz / (st.tau * st.tau),
            pcost,
            dcost,
            dual_infeasibility,
            primal_unbounded,
            rx,
            rz,
            rt,
            mu,
        }
    }

    fn converged(&self, m: &Metrics, feas: f64, abs_gap: f64, rel_gap: f64) -> bool {
        let scale = m.pcost.abs().min(m.dcost.abs());
        m.pres <= feas && m.dres <= feas && (m.gap <= abs_gap || m.gap <= rel_gap * scale)
    }

    /// Worst of the feasibility residuals and the relative gap.
    fn merit(m: &Metrics) -> f64 {
        let scale = m.pcost.abs().min(m.dcost.abs()).max(1.0);
        m.pres.max(m.dres).max(m.gap / scale)
    }

    fn run(mut self) -> HsdeOutcome {
        let s = self.settings;
        let mut iterations = 0;
        loop {
            let m = self.metrics();
            if self.converged(&m, s.feasibility_tol, s.absolute_gap_tol, s.relative_gap_tol) {
                return self.finish(OutcomeKind::Optimal, iterations);
            }
            if m.dual_infeasibility.is_some_and(|r| r <= s.feasibility_tol) {
                return self.finish(OutcomeKind::Infeasible, iterations);
            }
            let merit = Self::merit(&m);
            match &self.best {
                Some((best, _)) if merit > 1e3 * best && *best <= s.fallback_tol => {
                    // round-off has taken over; keep what was reached
                    return self.fallback(iterations);
                }
                Some((best, _)) if merit >= *best => {}
                _ => self.best = Some((merit, self.state.clone())),
            }
            if m.primal_unbounded.is_some_and(|r| r <= s.feasibility_tol) || iterations >= s.max_iterations {
                return self.fallback(iterations);
            }
            if !self.step(&m) {
                return self.fallback(iterations);
            }
            iterations += 1;
        }
    }

    fn fallback(mut self, iterations: usize) -> HsdeOutcome {
        let s = self.settings;
        let m = self.metrics();
        if m.dual_infeasibility.is_some_and(|r| r <= s.fallback_tol) {
            return self.finish(OutcomeKind::Infeasible, iterations);
        }
        if let Some((_, best)) = self.best.take() {
            self.state = best;
        }
        let m = self.metrics();
        if self.converged(&m, s.fallback_tol, s.fallback_tol, s.fallback_tol) {
            self.finish(OutcomeKind::Optimal, iterations)
        } else {
            self.finish(OutcomeKind::Failure, iterations)
        }
    }

    /// One predictor-corrector step. Returns false when the Newton system
    /// cannot be formed or the step collapses.
    fn step(&mut self, m: &Metrics) -> bool {
        let Some(w) = NtScaling::new(&self.state.s, &self.state.z) else {
            return false;
        };
        let p = self.p;
        let nr = p.m();
        let qfq: Vec<DMatrix<f64>> = p.rows.iter().map(|f| congruence(&w.q, f)).collect();
        let wsq = w.w.component_mul(&w.w);
        let schur = DMatrix::from_fn(nr, nr, |i, j| {
            let lp = if i == j { 1.0 / wsq[i] } else { 0.0 };
            lp + p.rows[i].dot(&qfq[j])
        });
        let Some(chol) = Cholesky::new(symmetric(&schur)) else {
            return false;
        };
        // Solves G^T dz = r1, G dx - W^T W dz = r2. With t = Q r2_sdp Q,
        // the reduced right-hand side is r1_i - r2_lp,i / w_i^2 - <F_i, t>
        // and dz_sdp = -sum_i dx_i Q F_i Q - t.
        let solve_once = |r1: &DVector<f64>, r2: &ConeVec| -> (DVector<f64>, ConeVec) {
            let t = congruence(&w.q, &r2.sdp);
            let rhs = DVector::from_fn(nr, |i, _| r1[i] - r2.lp[i] / wsq[i] - p.rows[i].dot(&t));
            let dx = chol.solve(&rhs);
            let mut sdp = -t;
            for (xi, f) in dx.iter().zip(&qfq) {
                sdp -= f * *xi;
            }
            let lp = DVector::from_fn(nr, |i, _| (-dx[i] - r2.lp[i]) / wsq[i]);
            (dx, ConeVec { lp, sdp })
        };
        // Solves G^T dz = r1, G dx - W^T W dz = r2, with two rounds of
        // iterative refinement against the unreduced system.
        let kkt_solve = |r1: &DVector<f64>, r2: &ConeVec| -> (DVector<f64>, ConeVec) {
            let (mut dx, mut dz) = solve_once(r1, r2);
            for _ in 0..2 {
                let e1 = r1 - p.apply_gt(&dz);
                let e2 = r2.sub(&p.apply_g(&dx).sub(&w.apply_wtw(&dz)));
                let (cx, cz) = solve_once(&e1, &e2);
                dx += cx;
                dz.axpy(1.0, &cz);
            }
            (dx, dz)
        };
        let h = p.h();
        let (dx2, dz2) = kkt_solve(&(-&p.rhs), &h);
        let denom_base = p.rhs.dot(&dx2) + h.dot(&dz2);

        let st = &self.state;
        let lambda_sq = w.lambda_squared();
        let e = ConeVec::identity(nr, p.n());

        let direction = |sigma: f64, correction: Option<&Direction>| -> Option<Direction> {
            // complementarity target in the scaled space
            let mut rc = lambda_sq.scaled(-1.0);
            rc.axpy(sigma * m.mu, &e);
            let mut rtau = -st.tau * st.kappa + sigma * m.mu;
            if let Some(a) = correction {
                rc.axpy(-1.0, &jordan_product(&a.ds_scaled, &a.dz_scaled));
                rtau -= a.dtau * a.dkappa;
            }
            let q = w.lambda_inverse_product(&rc);
            let eta = 1.0 - sigma;
            let r1 = &m.rx * -eta;
            let mut r2 = m.rz.scaled(-eta);
            r2.axpy(-1.0, &w.apply_wt(&q));
            let (dx1, dz1) = kkt_solve(&r1, &r2);
            let denom = -st.kappa / st.tau + denom_base;
            let dtau = (-eta * m.rt - rtau / st.tau - p.rhs.dot(&dx1) - h.dot(&dz1)) / denom;
            if !dtau.is_finite() {
                return None;
            }
            let dx = dx1 + &dx2 * dtau;
            let mut dz = dz1;
            dz.axpy(dtau, &dz2);
            let dkappa = (rtau - st.kappa * dtau) / st.tau;
            // ds from the linearized primal residual keeps that equation
            // exact even when W is poorly conditioned.
            let mut ds = m.rz.scaled(-eta);
            ds.axpy(-1.0, &p.apply_g(&dx));
            ds.axpy(dtau, &h);
            let dz_scaled = w.apply_w(&dz);
            let ds_scaled = w.apply_wt_inverse(&ds);
            Some(Direction { dx, ds, dz, ds_scaled, dz_scaled, dtau, dkappa })
        };
        let max_step = |d: &Direction| -> f64 {
            let mut a = w.max_step(&d.ds_scaled).min(w.max_step(&d.dz_scaled));
            if d.dtau < 0.0 {
                a = a.min(-st.tau / d.dtau);
            }
            if d.dkappa < 0.0 {
                a = a.min(-st.kappa / d.dkappa);
            }
            a
        };

        let Some(affine) = direction(0.0, None) else {
            return false;
        };
        let alpha_aff = max_step(&affine).min(1.0);
        let sigma = (1.0 - alpha_aff).powi(3);
        let Some(combined) = direction(sigma, Some(&affine)) else {
            return false;
        };
        let alpha = (0.99 * max_step(&combined)).min(1.0);
        if alpha.is_nan() || alpha <= 1e-14 {
            return false;
        }

        let (ds, dz) = (&combined.ds, &combined.dz);
        let st = &mut self.state;
        st.x.axpy(alpha, &combined.dx, 1.0);
        st.s.axpy(alpha, ds);
        st.z.axpy(alpha, dz);
        st.s.sdp = symmetric(&st.s.sdp);
        st.z.sdp = symmetric(&st.z.sdp);
        st.tau += alpha * combined.dtau;
        st.kappa += alpha * combined.dkappa;
        true
    }

    fn finish(self, kind: OutcomeKind, iterations: usize) -> HsdeOutcome {
        let st = &self.state;
        let p = self.p;
        match kind {
            OutcomeKind::Infeasible => {
                let m = self.metrics();
                HsdeOutcome {
                    kind,
                    y: st.x.clone(),
                    x_mat: DMatrix::zeros(p.n(), p.n()),
                    s_mat: DMatrix::zeros(p.n(), p.n()),
                    residuals: KktResiduals {
                        primal: m.dual_infeasibility.unwrap_or(f64::NAN),
                        ..Default::default()
                    },
                    iterations,
                }
            }
            _ => {
                let y = &st.x / st.tau;
                let x_mat = symmetric(&(&st.z.sdp / st.tau));
                let s_mat = symmetric(&(&st.s.sdp / st.tau));
                let residuals = self.kkt(&y, &x_mat, &s_mat);
                HsdeOutcome { kind, y, x_mat, s_mat, residuals, iterations }
            }
        }
    }

    fn kkt(&self, y: &DVector<f64>, x_mat: &DMatrix<f64>, s_mat: &DMatrix<f64>) -> KktResiduals {
        let p = self.p;
        let min_eig = |m: &DMatrix<f64>| m.clone().symmetric_eigenvalues().iter().copied().fold(f64::INFINITY, f64::min);
        let mut primal = (-min_eig(x_mat)).max(0.0);
        let mut complementarity = x_mat.dot(s_mat);
        let mut stationarity = -&p.objective - s_mat;
        let mut neg_mult: f64 = 0.0;
        for ((f, g), yi) in p.rows.iter().zip(p.rhs.iter()).zip(y.iter()) {
            let slack = g - f.dot(x_mat);
            primal = primal.max(-slack);
            complementarity += yi * slack;
            stationarity += f * *yi;
            neg_mult = neg_mult.max(-yi);
        }
        let dual = stationarity.norm().max((-min_eig(s_mat)).max(0.0)).max(neg_mult);
        let pobj = p.objective.dot(x_mat);
        let dobj = p.rhs.dot(y);
        KktResiduals {
            primal,
            dual,
            complementarity: complementarity.abs() / (1.0 + pobj.abs()),
            gap: (pobj - dobj).abs() / (1.0 + pobj.abs()),
        }
    }
}
