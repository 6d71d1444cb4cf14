//! Surgical eigenstructure assignment.
//!
//! For a targeted conjugate pair `(lambda, conj(lambda))` the right
//! eigenvector is replaced by a vector from the assignable subspace
//! `N1(lambda)`, i.e. the top block of a basis of `null([A - lambda I, B])`.
//! The replacement either has zeros at selected states (participation
//! blocking) or lies in `null(C)` (observability blocking). The gain
//! `F = Z V_hat^-1` keeps every eigenvalue and every other right
//! eigenvector of `A` in place.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modal::{self, ModalDecomposition, ModePair};
use crate::model::LtiSystem;
use crate::numerics::{self, ComplexMatrix, NumericsError, RealMatrix, Tolerance};
use crate::verify::{self, Claim, Target, Tolerances, VerificationReport};

/// Which feasibility condition a request must meet before synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Feasibility {
    /// `m + 2 <= q` for participation, `rank(C) + 2 <= q` for observability.
    #[default]
    Sufficient,
    /// Only require a non-empty direction space: `m + 1 <= q`,
    /// `rank(C) + 1 <= q`. Success is not guaranteed, but every returned
    /// gain is still fully verified.
    Existence,
}

impl Feasibility {
    fn margin(self) -> usize {
        match self {
            Feasibility::Sufficient => 2,
            Feasibility::Existence => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignOptions {
    pub feasibility: Feasibility,
    /// Limit on `cond(V_hat)`.
    pub cond_limit: f64,
    /// Relative imaginary residue of `F` above which synthesis fails.
    pub realness_limit: f64,
    /// Random unit combinations tried after the basis directions.
    pub random_draws: usize,
    pub seed: u64,
    pub tolerances: Tolerances,
}

impl Default for AssignOptions {
    fn default() -> Self {
        Self {
            feasibility: Feasibility::Sufficient,
            cond_limit: numerics::DEFAULT_COND_LIMIT,
            realness_limit: 1e-6,
            random_draws: 32,
            seed: 0,
            tolerances: Tolerances::default(),
        }
    }
}

/// Parameterization `[N1; N2]` of `null([A - lambda I, B])`.
#[derive(Debug, Clone)]
pub struct AssignableSubspace {
    pub lambda: Complex64,
    /// `n x d`
    pub n1: ComplexMatrix,
    /// `q x d`
    pub n2: ComplexMatrix,
}

impl AssignableSubspace {
    pub fn dim(&self) -> usize {
        self.n1.cols()
    }
}

pub fn assignable_subspace(sys: &LtiSystem, lambda: Complex64) -> Result<AssignableSubspace> {
    let n = sys.n();
    let shifted = sys
        .a
        .to_complex()
        .sub(&ComplexMatrix::identity(n).scale(lambda))?;
    let s = shifted.hstack(&sys.b.to_complex())?;
    let basis = numerics::nullspace(&s, Tolerance::Auto)?.basis;
    if basis.cols() == 0 {
        return Err(Error::EmptySubspace {
            re: lambda.re,
            im: lambda.im,
        });
    }
    let d = basis.cols();
    Ok(AssignableSubspace {
        lambda,
        n1: basis.block(0, 0, n, d),
        n2: basis.block(n, 0, sys.q(), d),
    })
}

const DEGENERATE_NORM: f64 = 1e-10;

/// Orders the columns of `k` (coefficient vectors in the subspace basis) by
/// decreasing `||N1 h||`, lowest index first on ties, dropping those that
/// give a zero eigenvector.
fn rank_directions(
    sub: &AssignableSubspace,
    hs: Vec<Vec<Complex64>>,
) -> Result<Vec<Vec<Complex64>>> {
    let mut scored = Vec::with_capacity(hs.len());
    for (idx, h) in hs.into_iter().enumerate() {
        let h = numerics::normalize(&h);
        let norm = numerics::vec_norm(&sub.n1.matvec(&h)?);
        if norm > DEGENERATE_NORM {
            scored.push((norm, idx, h));
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(scored.into_iter().map(|(_, _, h)| h).collect())
}

fn check_states(states: &[usize], n: usize) -> Result<()> {
    for (i, &k) in states.iter().enumerate() {
        if k >= n {
            return Err(Error::Validation(format!(
                "state index {} out of range 1..={n}",
                k + 1
            )));
        }
        if states[..i].contains(&k) {
            return Err(Error::Validation(format!("state index {} repeated", k + 1)));
        }
    }
    Ok(())
}

fn participation_feasibility(m: usize, n: usize, q: usize, feasibility: Feasibility) -> Result<()> {
    if m + feasibility.margin() > q {
        return Err(Error::Infeasible {
            condition: format!("m+{} <= q", feasibility.margin()),
            detail: format!("m = {m} blocked states, q = {q} inputs"),
        });
    }
    // With fewer than two free entries v_hat and conj(v_hat) are parallel.
    if m + 2 > n {
        return Err(Error::Infeasible {
            condition: "m+2 <= n".into(),
            detail: format!("m = {m} blocked states leave fewer than two free entries of n = {n}"),
        });
    }
    Ok(())
}

fn observability_feasibility(rank: usize, q: usize, feasibility: Feasibility) -> Result<()> {
    if rank + feasibility.margin() > q {
        return Err(Error::Infeasible {
            condition: format!("rank(C)+{} <= q", feasibility.margin()),
            detail: format!("rank(C) = {rank}, q = {q} inputs"),
        });
    }
    Ok(())
}

/// Null-space basis of `N3` (rows `states` of `N1`) as coefficient vectors.
fn participation_space(sub: &AssignableSubspace, states: &[usize]) -> Result<ComplexMatrix> {
    let n3 = sub.n1.select_rows(states);
    let null = numerics::nullspace(&n3, Tolerance::Auto)?;
    if null.is_empty() {
        return Err(Error::Infeasible {
            condition: "null(N3) != {0}".into(),
            detail: format!(
                "{} blocked states leave no free direction in a {}-dimensional assignable subspace",
                states.len(),
                sub.dim()
            ),
        });
    }
    Ok(null.basis)
}

/// Coefficient vectors `h` (first `d` entries of `null([N1 M1])`), with
/// `M1` a basis of `null(C)`.
fn observability_space(sub: &AssignableSubspace, c: &RealMatrix) -> Result<ComplexMatrix> {
    let m1 = numerics::nullspace(&c.to_complex(), Tolerance::Auto)?.basis;
    let m2 = sub.n1.hstack(&m1)?;
    let m3 = numerics::nullspace(&m2, Tolerance::Auto)?;
    if m3.is_empty() {
        return Err(Error::Infeasible {
            condition: "null([N1 M1]) != {0}".into(),
            detail: "assignable subspace does not meet null(C)".into(),
        });
    }
    Ok(m3.basis.block(0, 0, sub.dim(), m3.dim()))
}

fn columns(m: &ComplexMatrix) -> Vec<Vec<Complex64>> {
    (0..m.cols()).map(|j| m.column(j)).collect()
}

/// Unit `h` with `N3 h = 0` whose eigenvector `N1 h` has the largest norm.
///
/// `states` are 0-based.
pub fn participation_blocking_direction(
    sub: &AssignableSubspace,
    states: &[usize],
    feasibility: Feasibility,
) -> Result<Vec<Complex64>> {
    check_states(states, sub.n1.rows())?;
    participation_feasibility(states.len(), sub.n1.rows(), sub.n2.rows(), feasibility)?;
    let space = participation_space(sub, states)?;
    rank_directions(sub, columns(&space))?
        .into_iter()
        .next()
        .ok_or(Error::DegenerateDirection)
}

/// Unit `h` with `C N1 h = 0` whose eigenvector `N1 h` has the largest norm.
pub fn observability_blocking_direction(
    sub: &AssignableSubspace,
    c: &RealMatrix,
    feasibility: Feasibility,
) -> Result<Vec<Complex64>> {
    let r = numerics::rank(&c.to_complex(), Tolerance::Auto)?;
    observability_feasibility(r, sub.n2.rows(), feasibility)?;
    let space = observability_space(sub, c)?;
    rank_directions(sub, columns(&space))?
        .into_iter()
        .next()
        .ok_or(Error::DegenerateDirection)
}

#[derive(Debug, Clone, PartialEq)]
pub enum BlockingKind {
    /// 0-based state indices.
    Participation { states: Vec<usize> },
    /// Blocks the pair from the system output `C`.
    Observability,
}

impl BlockingKind {
    fn claim(&self) -> Claim {
        match self {
            BlockingKind::Participation { states } => Claim::Participation(states.clone()),
            BlockingKind::Observability => Claim::Unobservable,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BlockingKind::Participation { .. } => "participation",
            BlockingKind::Observability => "observability",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockingRequest {
    pub pair: ModePair,
    pub kind: BlockingKind,
}

impl BlockingRequest {
    pub fn target(&self) -> Target {
        Target {
            eigenvalue: self.pair.eigenvalue,
            claim: self.kind.claim(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BlockingResult {
    /// Real `q x n` gain.
    pub f: RealMatrix,
    pub v_hat: Vec<Complex64>,
    pub v_hat_conj: Vec<Complex64>,
    pub z: Vec<Complex64>,
    pub z_conj: Vec<Complex64>,
    pub cond_v_hat: f64,
    /// `||Im F||_max / ||F||_max` before truncation.
    pub realness_residual: f64,
    pub request: BlockingRequest,
    pub report: Option<VerificationReport>,
}

/// Replaces columns `pair.index`, `pair.index + 1` of `V` by `v_hat`,
/// `conj(v_hat)` and solves `V_hat^T F^T = Z^T`.
pub fn synthesize_gain(
    md: &ModalDecomposition,
    pair: &ModePair,
    v_hat: &[Complex64],
    z: &[Complex64],
    opts: &AssignOptions,
) -> Result<BlockingResult> {
    let n = md.n();
    let q = z.len();
    let (i, j) = (pair.index, pair.conj_index());
    if j >= n || v_hat.len() != n {
        return Err(Error::Dimension {
            field: "v_hat".into(),
            expected: format!("{n} entries with pair inside 1..={n}"),
            found: format!("{} entries, pair ({}, {})", v_hat.len(), i + 1, j + 1),
        });
    }
    let v_hat_conj = numerics::conj_vec(v_hat);
    let z_conj = numerics::conj_vec(z);
    let mut vh = md.v.clone();
    vh.set_column(i, v_hat);
    vh.set_column(j, &v_hat_conj);
    let mut zm = ComplexMatrix::zeros(q, n);
    zm.set_column(i, z);
    zm.set_column(j, &z_conj);

    let sol = numerics::solve_with_limit(&vh.transpose(), &zm.transpose(), opts.cond_limit)
        .map_err(|e| match e {
            NumericsError::Singular { cond, limit } => Error::IllConditioned { cond, limit },
            other => other.into(),
        })?;
    let f_complex = sol.x.transpose();
    let scale = f_complex.norm_max();
    let realness_residual = if scale > 0.0 {
        f_complex.im().norm_max() / scale
    } else {
        0.0
    };
    if !(realness_residual <= opts.realness_limit) {
        return Err(Error::ConjugationInconsistent {
            residue: realness_residual,
            limit: opts.realness_limit,
        });
    }
    Ok(BlockingResult {
        f: f_complex.re(),
        v_hat: v_hat.to_vec(),
        v_hat_conj,
        z: z.to_vec(),
        z_conj,
        cond_v_hat: sol.cond,
        realness_residual,
        request: BlockingRequest {
            pair: *pair,
            kind: BlockingKind::Participation { states: Vec::new() },
        },
        report: None,
    })
}

/// Pair of `md` matching `pair.eigenvalue`.
fn locate_pair(md: &ModalDecomposition, pair: &ModePair) -> Result<ModePair> {
    let lambda = pair.eigenvalue;
    if lambda.im.abs() <= md.pairing_tol() {
        return Err(Error::RealMode {
            re: lambda.re,
            im: lambda.im,
        });
    }
    md.find_pair(lambda, 1e-6 * (1.0 + md.a_norm))?
        .ok_or_else(|| Error::NoSuchPair(format!("eigenvalue {}{:+}i", lambda.re, lambda.im)))
}

/// Context of one synthesis stage: the open-loop system, the gain already
/// applied and the targets of earlier stages that must stay satisfied.
struct Stage<'a> {
    base: &'a LtiSystem,
    f_before: &'a RealMatrix,
    earlier: &'a [Target],
}

fn search(
    stage: &Stage<'_>,
    md: &ModalDecomposition,
    pair: &ModePair,
    sub: &AssignableSubspace,
    space: &ComplexMatrix,
    request: &BlockingRequest,
    opts: &AssignOptions,
) -> Result<BlockingResult> {
    let mut candidates = rank_directions(sub, columns(space))?;
    if candidates.is_empty() && space.cols() == 0 {
        return Err(Error::DegenerateDirection);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut draws = Vec::with_capacity(opts.random_draws);
    for _ in 0..opts.random_draws {
        let coeffs: Vec<Complex64> = (0..space.cols())
            .map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect();
        draws.push(space.matvec(&coeffs)?);
    }
    // Basis directions keep their ranked order; random ones follow.
    candidates.extend(
        draws
            .into_iter()
            .map(|h| numerics::normalize(&h))
            .filter(|h| {
                numerics::vec_norm(&sub.n1.matvec(h).unwrap_or_default()) > DEGENERATE_NORM
            }),
    );
    if candidates.is_empty() {
        return Err(Error::DegenerateDirection);
    }

    let mut targets = stage.earlier.to_vec();
    targets.push(request.target());
    let mut last_err = Error::DegenerateDirection;
    for h in candidates {
        let v_hat = sub.n1.matvec(&h)?;
        let z = sub.n2.matvec(&h)?;
        let mut result = match synthesize_gain(md, pair, &v_hat, &z, opts) {
            Ok(r) => r,
            Err(e @ (Error::IllConditioned { .. } | Error::ConjugationInconsistent { .. })) => {
                last_err = e;
                continue;
            }
            Err(e) => return Err(e),
        };
        result.request = request.clone();
        let total = stage.f_before.add(&result.f)?;
        let report = match verify::verify_gain(
            stage.base,
            &total,
            &targets,
            &opts.tolerances,
            result.realness_residual,
        ) {
            Ok(r) => r,
            Err(e) => {
                last_err = Error::VerificationFailed(format!("closed loop not decomposable: {e}"));
                continue;
            }
        };
        if report.pass {
            result.report = Some(report);
            return Ok(result);
        }
        last_err =
            Error::VerificationFailed(format!("failed checks: {}", report.failures().join(", ")));
    }
    Err(last_err)
}

fn block_in_stage(
    stage: &Stage<'_>,
    current: &LtiSystem,
    request: &BlockingRequest,
    opts: &AssignOptions,
) -> Result<BlockingResult> {
    // Feasibility depends only on sizes and rank(C), so it is decided before
    // any decomposition work.
    match &request.kind {
        BlockingKind::Participation { states } => {
            check_states(states, current.n())?;
            participation_feasibility(states.len(), current.n(), current.q(), opts.feasibility)?;
        }
        BlockingKind::Observability => {
            let r = numerics::rank(&current.c.to_complex(), Tolerance::Auto)?;
            observability_feasibility(r, current.q(), opts.feasibility)?;
        }
    }
    let md = modal::modal_decomposition(current)?;
    let pair = locate_pair(&md, &request.pair)?;
    let sub = assignable_subspace(current, pair.eigenvalue)?;
    let space = match &request.kind {
        BlockingKind::Participation { states } => participation_space(&sub, states)?,
        BlockingKind::Observability => observability_space(&sub, &current.c)?,
    };
    let request = BlockingRequest {
        pair,
        kind: request.kind.clone(),
    };
    search(stage, &md, &pair, &sub, &space, &request, opts)
}

/// Zeroes the participation of `states` (0-based) in `pair`.
pub fn block_participation(
    sys: &LtiSystem,
    pair: &ModePair,
    states: &[usize],
    opts: &AssignOptions,
) -> Result<BlockingResult> {
    let zero = RealMatrix::zeros(sys.q(), sys.n());
    let stage = Stage {
        base: sys,
        f_before: &zero,
        earlier: &[],
    };
    let request = BlockingRequest {
        pair: *pair,
        kind: BlockingKind::Participation {
            states: states.to_vec(),
        },
    };
    block_in_stage(&stage, sys, &request, opts)
}

/// Makes `pair` unobservable in the system output `C`.
pub fn block_observability(
    sys: &LtiSystem,
    pair: &ModePair,
    opts: &AssignOptions,
) -> Result<BlockingResult> {
    let zero = RealMatrix::zeros(sys.q(), sys.n());
    let stage = Stage {
        base: sys,
        f_before: &zero,
        earlier: &[],
    };
    let request = BlockingRequest {
        pair: *pair,
        kind: BlockingKind::Observability,
    };
    block_in_stage(&stage, sys, &request, opts)
}

#[derive(Debug, Clone)]
pub struct SequentialResult {
    /// Accumulated gain `F_1 + ... + F_k`.
    pub f: RealMatrix,
    pub stages: Vec<BlockingResult>,
    /// Verification of the accumulated gain against every request.
    pub report: VerificationReport,
}

impl SequentialResult {
    pub fn targets(&self) -> Vec<Target> {
        self.stages.iter().map(|s| s.request.target()).collect()
    }
}

/// Applies the requests in order; stage `k` works on `A + B (F_1 + ... + F_{k-1})`
/// and must keep every earlier block intact.
pub fn sequential_block(
    sys: &LtiSystem,
    requests: &[BlockingRequest],
    opts: &AssignOptions,
) -> Result<SequentialResult> {
    let open = modal::modal_decomposition(sys)?;
    let tol = 1e-6 * (1.0 + open.a_norm);
    for (k, r) in requests.iter().enumerate() {
        if requests[..k]
            .iter()
            .any(|e| (e.pair.eigenvalue - r.pair.eigenvalue).norm() <= tol)
        {
            return Err(Error::Stage {
                stage: k + 1,
                source: Box::new(Error::OverlappingTargets {
                    re: r.pair.eigenvalue.re,
                    im: r.pair.eigenvalue.im,
                }),
            });
        }
    }

    let mut f_total = RealMatrix::zeros(sys.q(), sys.n());
    let mut stages: Vec<BlockingResult> = Vec::with_capacity(requests.len());
    let mut earlier: Vec<Target> = Vec::new();
    for (k, request) in requests.iter().enumerate() {
        let wrap = |e: Error| Error::Stage {
            stage: k + 1,
            source: Box::new(e),
        };
        let current = sys
            .with_state_matrix(sys.closed_loop(&f_total).map_err(wrap)?)
            .map_err(wrap)?;
        let stage = Stage {
            base: sys,
            f_before: &f_total,
            earlier: &earlier,
        };
        let result = block_in_stage(&stage, &current, request, opts).map_err(wrap)?;
        f_total = f_total.add(&result.f).map_err(|e| wrap(e.into()))?;
        earlier.push(result.request.target());
        stages.push(result);
    }
    let realness = stages
        .iter()
        .fold(0.0_f64, |m, s| m.max(s.realness_residual));
    let report = verify::verify_gain(sys, &f_total, &earlier, &opts.tolerances, realness)?;
    Ok(SequentialResult {
        f: f_total,
        stages,
        report,
    })
}

/// One target in a gain file. `states` are 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetRecord {
    pub kind: String,
    /// `[re, im]` of the positive-imaginary member.
    pub eigenvalue: [f64; 2],
    /// 1-based mode index of that member in the open-loop ordering.
    pub mode_index: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub states: Vec<usize>,
}

impl TargetRecord {
    pub fn from_request(r: &BlockingRequest) -> Self {
        Self {
            kind: r.kind.name().into(),
            eigenvalue: [r.pair.eigenvalue.re, r.pair.eigenvalue.im],
            mode_index: r.pair.index + 1,
            states: match &r.kind {
                BlockingKind::Participation { states } => states.iter().map(|k| k + 1).collect(),
                BlockingKind::Observability => Vec::new(),
            },
        }
    }

    pub fn to_target(&self) -> Result<Target> {
        let claim = match self.kind.as_str() {
            "participation" => {
                if self.states.contains(&0) {
                    return Err(Error::Validation(
                        "gain file state indices are 1-based".into(),
                    ));
                }
                Claim::Participation(self.states.iter().map(|k| k - 1).collect())
            }
            "observability" => Claim::Unobservable,
            other => return Err(Error::Validation(format!("unknown target kind `{other}`"))),
        };
        Ok(Target {
            eigenvalue: Complex64::new(self.eigenvalue[0], self.eigenvalue[1]),
            claim,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub target: TargetRecord,
    #[serde(rename = "F")]
    pub f: RealMatrix,
    #[serde(rename = "cond_V_hat")]
    pub cond_v_hat: f64,
    pub realness_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainDiagnostics {
    #[serde(rename = "cond_V_hat")]
    pub cond_v_hat: f64,
    pub spectrum_max_shift: f64,
}

/// JSON gain file: accumulated `F`, targets, per-stage gains, diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainFile {
    #[serde(rename = "F")]
    pub f: RealMatrix,
    pub targets: Vec<TargetRecord>,
    pub stages: Vec<StageRecord>,
    pub diagnostics: GainDiagnostics,
}

impl GainFile {
    pub fn from_sequential(res: &SequentialResult) -> Self {
        let stages: Vec<StageRecord> = res
            .stages
            .iter()
            .map(|s| StageRecord {
                target: TargetRecord::from_request(&s.request),
                f: s.f.clone(),
                cond_v_hat: s.cond_v_hat,
                realness_residual: s.realness_residual,
            })
            .collect();
        Self {
            f: res.f.clone(),
            targets: stages.iter().map(|s| s.target.clone()).collect(),
            diagnostics: GainDiagnostics {
                cond_v_hat: res
                    .stages
                    .iter()
                    .fold(0.0, |m, s| f64::max(m, s.cond_v_hat)),
                spectrum_max_shift: res.report.spectrum_max_shift,
            },
            stages,
        }
    }

    pub fn from_result(res: &BlockingResult) -> Self {
        let record = TargetRecord::from_request(&res.request);
        Self {
            f: res.f.clone(),
            targets: vec![record.clone()],
            stages: vec![StageRecord {
                target: record,
                f: res.f.clone(),
                cond_v_hat: res.cond_v_hat,
                realness_residual: res.realness_residual,
            }],
            diagnostics: GainDiagnostics {
                cond_v_hat: res.cond_v_hat,
                spectrum_max_shift: res
                    .report
                    .as_ref()
                    .map_or(f64::NAN, |r| r.spectrum_max_shift),
            },
        }
    }

    pub fn targets(&self) -> Result<Vec<Target>> {
        self.targets.iter().map(TargetRecord::to_target).collect()
    }

    pub fn realness_residual(&self) -> f64 {
        self.stages
            .iter()
            .fold(0.0, |m, s| f64::max(m, s.realness_residual))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("gain serialization is infallible")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|source| Error::Parse {
            context: "gain file".into(),
            source,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json() + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_stable_system;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn first_pair(sys: &LtiSystem) -> (ModalDecomposition, ModePair) {
        let md = modal::modal_decomposition(sys).unwrap();
        let pair = modal::conjugate_pairs(&md).unwrap()[0];
        (md, pair)
    }

    #[test]
    fn full_input_subspace() {
        let sys = LtiSystem::new(
            RealMatrix::diagonal(&[-1.0, -2.0]),
            RealMatrix::identity(2),
            RealMatrix::zeros(1, 2),
        )
        .unwrap();
        let sub = assignable_subspace(&sys, c(-3.0, 0.0)).unwrap();
        assert_eq!(sub.dim(), 2);
        let lhs = sys
            .a
            .to_complex()
            .sub(&ComplexMatrix::identity(2).scale(c(-3.0, 0.0)))
            .unwrap()
            .matmul(&sub.n1)
            .unwrap();
        let rhs = sys.b.to_complex().matmul(&sub.n2).unwrap();
        assert!(lhs.add(&rhs).unwrap().norm_max() < 1e-14);
    }

    #[test]
    fn no_input_no_subspace() {
        let a = RealMatrix::diagonal(&[-1.0, -2.0]);
        let sys = LtiSystem::new(a, RealMatrix::zeros(2, 0), RealMatrix::zeros(1, 2)).unwrap();
        let err = assignable_subspace(&sys, c(-3.0, 0.5)).unwrap_err();
        assert!(matches!(err, Error::EmptySubspace { .. }));
    }

    #[test]
    fn zero_input_gives_degenerate_direction() {
        let sys = LtiSystem::new(
            RealMatrix::diagonal(&[-1.0, -2.0]),
            RealMatrix::zeros(2, 1),
            RealMatrix::zeros(1, 2),
        )
        .unwrap();
        let sub = assignable_subspace(&sys, c(-3.0, 0.5)).unwrap();
        assert_eq!(sub.n1.norm_max(), 0.0);
        let err = participation_blocking_direction(&sub, &[], Feasibility::Existence).unwrap_err();
        assert!(matches!(err, Error::DegenerateDirection));
    }

    #[test]
    fn unconstrained_direction_is_a_subspace_column() {
        let sys = random_stable_system(6, 3, 1, 3).unwrap();
        let (_, pair) = first_pair(&sys);
        let sub = assignable_subspace(&sys, pair.eigenvalue).unwrap();
        let h = participation_blocking_direction(&sub, &[], Feasibility::Sufficient).unwrap();
        assert!((numerics::vec_norm(&h) - 1.0).abs() < 1e-14);
        let nonzero: Vec<_> = h.iter().filter(|z| z.norm() > 1e-12).collect();
        assert_eq!(nonzero.len(), 1);
    }

    #[test]
    fn already_zero_row_can_be_blocked_with_any_direction() {
        let sub = AssignableSubspace {
            lambda: c(-1.0, 1.0),
            n1: ComplexMatrix::from_fn(4, 3, |i, j| {
                if i == 2 {
                    c(0.0, 0.0)
                } else {
                    c((i + j) as f64 + 1.0, 0.5)
                }
            }),
            n2: ComplexMatrix::identity(3),
        };
        let h = participation_blocking_direction(&sub, &[2], Feasibility::Sufficient).unwrap();
        let v = sub.n1.matvec(&h).unwrap();
        assert_eq!(v[2], c(0.0, 0.0));
        assert!(numerics::vec_norm(&v) > 0.1);
    }

    #[test]
    fn participation_direction_zeroes_requested_entries() {
        let sys = random_stable_system(8, 4, 1, 12).unwrap();
        let (_, pair) = first_pair(&sys);
        let sub = assignable_subspace(&sys, pair.eigenvalue).unwrap();
        let h = participation_blocking_direction(&sub, &[0, 3], Feasibility::Sufficient).unwrap();
        let n3h = sub.n1.select_rows(&[0, 3]).matvec(&h).unwrap();
        assert!(numerics::vec_norm(&n3h) < 1e-10);
        let v = sub.n1.matvec(&h).unwrap();
        let vn = numerics::vec_norm(&v);
        assert!(vn > 0.0 && v[0].norm() <= 1e-10 * vn && v[3].norm() <= 1e-10 * vn);
    }

    #[test]
    fn participation_infeasible_beyond_sufficient_condition() {
        let sys = random_stable_system(8, 3, 1, 12).unwrap();
        let (_, pair) = first_pair(&sys);
        let sub = assignable_subspace(&sys, pair.eigenvalue).unwrap();
        let err =
            participation_blocking_direction(&sub, &[0, 1], Feasibility::Sufficient).unwrap_err();
        assert!(matches!(&err, Error::Infeasible { condition, .. } if condition == "m+2 <= q"));
        assert_eq!(err.exit_code(), 4);
        // One free direction remains under the existence rule.
        assert!(participation_blocking_direction(&sub, &[0, 1], Feasibility::Existence).is_ok());
        assert!(
            participation_blocking_direction(&sub, &[0, 1, 2], Feasibility::Existence).is_err()
        );
    }

    #[test]
    fn too_few_free_entries_infeasible() {
        let sys = random_stable_system(4, 5, 1, 3).unwrap();
        let (_, pair) = first_pair(&sys);
        let sub = assignable_subspace(&sys, pair.eigenvalue).unwrap();
        let err = participation_blocking_direction(&sub, &[0, 1, 2], Feasibility::Sufficient)
            .unwrap_err();
        assert!(matches!(&err, Error::Infeasible { condition, .. } if condition == "m+2 <= n"));
        assert!(participation_blocking_direction(&sub, &[0, 1], Feasibility::Sufficient).is_ok());
    }

    #[test]
    fn state_index_validation() {
        let sys = random_stable_system(6, 4, 1, 2).unwrap();
        let (_, pair) = first_pair(&sys);
        let sub = assignable_subspace(&sys, pair.eigenvalue).unwrap();
        assert!(matches!(
            participation_blocking_direction(&sub, &[6], Feasibility::Sufficient),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            participation_blocking_direction(&sub, &[1, 1], Feasibility::Sufficient),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn observability_direction_with_zero_output() {
        let sys = random_stable_system(6, 3, 2, 5).unwrap();
        let (_, pair) = first_pair(&sys);
        let sub = assignable_subspace(&sys, pair.eigenvalue).unwrap();
        let zero = RealMatrix::zeros(2, 6);
        let h = observability_blocking_direction(&sub, &zero, Feasibility::Sufficient).unwrap();
        let v = sub.n1.matvec(&h).unwrap();
        assert!(zero
            .to_complex()
            .matvec(&v)
            .unwrap()
            .iter()
            .all(|y| *y == c(0.0, 0.0)));
    }

    #[test]
    fn observability_full_rank_output_infeasible() {
        let sys = random_stable_system(6, 3, 2, 5).unwrap();
        let (_, pair) = first_pair(&sys);
        let sub = assignable_subspace(&sys, pair.eigenvalue).unwrap();
        let err = observability_blocking_direction(
            &sub,
            &RealMatrix::identity(6),
            Feasibility::Sufficient,
        )
        .unwrap_err();
        assert!(
            matches!(&err, Error::Infeasible { condition, .. } if condition == "rank(C)+2 <= q")
        );
    }

    #[test]
    fn observability_direction_lands_in_null_of_c() {
        let sys = random_stable_system(8, 4, 2, 9).unwrap();
        let (_, pair) = first_pair(&sys);
        let sub = assignable_subspace(&sys, pair.eigenvalue).unwrap();
        let h = observability_blocking_direction(&sub, &sys.c, Feasibility::Sufficient).unwrap();
        let v = sub.n1.matvec(&h).unwrap();
        let cv = sys.c.to_complex().matvec(&v).unwrap();
        assert!(numerics::vec_norm(&cv) <= 1e-9 * sys.c.norm_2().unwrap() * numerics::vec_norm(&v));
    }

    #[test]
    fn null_replacement_gives_zero_gain() {
        let sys = random_stable_system(6, 2, 1, 1).unwrap();
        let (md, pair) = first_pair(&sys);
        let r = synthesize_gain(
            &md,
            &pair,
            &md.right(pair.index),
            &[c(0.0, 0.0); 2],
            &AssignOptions::default(),
        )
        .unwrap();
        assert_eq!(r.f.norm_max(), 0.0);
        assert_eq!(r.realness_residual, 0.0);
    }

    #[test]
    fn synthesized_gain_is_real_and_leaves_other_modes() {
        let sys = random_stable_system(8, 4, 1, 21).unwrap();
        let (md, pair) = first_pair(&sys);
        let sub = assignable_subspace(&sys, pair.eigenvalue).unwrap();
        let h = participation_blocking_direction(&sub, &[1, 6], Feasibility::Sufficient).unwrap();
        let v_hat = sub.n1.matvec(&h).unwrap();
        let z = sub.n2.matvec(&h).unwrap();
        let r = synthesize_gain(&md, &pair, &v_hat, &z, &AssignOptions::default()).unwrap();
        assert!(r.realness_residual < 1e-9);
        let fv = r.f.to_complex().matmul(&md.v).unwrap();
        let f_norm = r.f.norm_max();
        for j in (0..8).filter(|j| !pair.contains(*j)) {
            assert!(numerics::vec_norm(&fv.column(j)) < 1e-9 * f_norm * md.v.norm_max().max(1.0));
        }
        let acl = sys.closed_loop(&r.f).unwrap().to_complex();
        let lhs = acl.matvec(&v_hat).unwrap();
        let err: Vec<_> = lhs
            .iter()
            .zip(&v_hat)
            .map(|(a, b)| a - pair.eigenvalue * b)
            .collect();
        assert!(numerics::vec_norm(&err) < 1e-8);
    }

    #[test]
    fn singular_replacement_rejected() {
        let sys = random_stable_system(6, 2, 1, 1).unwrap();
        let (md, pair) = first_pair(&sys);
        let other = md.right(pair.index + 2);
        let err = synthesize_gain(
            &md,
            &pair,
            &other,
            &[c(1.0, 0.0); 2],
            &AssignOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::IllConditioned { .. }), "{err}");
    }

    #[test]
    fn empty_state_set_is_trivially_blocked() {
        let sys = random_stable_system(6, 3, 1, 8).unwrap();
        let (_, pair) = first_pair(&sys);
        let r = block_participation(&sys, &pair, &[], &AssignOptions::default()).unwrap();
        assert!(r.report.unwrap().pass);
    }

    #[test]
    fn real_mode_request_rejected() {
        let sys = random_stable_system(6, 3, 1, 8).unwrap();
        let md = modal::modal_decomposition(&sys).unwrap();
        let real = ModePair {
            index: 0,
            eigenvalue: md.eigenvalues[0],
            frequency_hz: 0.0,
            damping_ratio: 1.0,
            class: modal::ModeClass::NonOscillatory,
        };
        let err = block_participation(&sys, &real, &[0], &AssignOptions::default()).unwrap_err();
        assert!(matches!(err, Error::RealMode { .. }));
    }

    #[test]
    fn overlapping_sequential_targets_rejected() {
        let sys = random_stable_system(8, 4, 1, 2).unwrap();
        let (_, pair) = first_pair(&sys);
        let reqs = [
            BlockingRequest {
                pair,
                kind: BlockingKind::Participation { states: vec![0] },
            },
            BlockingRequest {
                pair,
                kind: BlockingKind::Observability,
            },
        ];
        let err = sequential_block(&sys, &reqs, &AssignOptions::default()).unwrap_err();
        assert!(
            matches!(err, Error::Stage { stage: 2, ref source } if matches!(**source, Error::OverlappingTargets { .. }))
        );
    }

    #[test]
    fn gain_file_round_trip() {
        let sys = random_stable_system(6, 3, 1, 4).unwrap();
        let (_, pair) = first_pair(&sys);
        let r = block_participation(&sys, &pair, &[2], &AssignOptions::default()).unwrap();
        let file = GainFile::from_result(&r);
        let back = GainFile::from_json(&file.to_json()).unwrap();
        assert_eq!(back, file);
        assert_eq!(back.targets[0].states, vec![3]);
        assert_eq!(
            back.targets().unwrap()[0].claim,
            Claim::Participation(vec![2])
        );
        assert!(GainFile::from_json("{\"F\": 3}").is_err());
    }
}
