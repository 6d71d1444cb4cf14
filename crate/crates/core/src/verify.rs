//! Independent checks of a state-feedback gain.
//!
//! Everything here is recomputed from the raw `A`, `B`, `C` and `F`
//! matrices: closed-loop decompositions come from [`modal::decompose`] on
//! `A + B F` and nothing produced during synthesis is reused.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::modal::{self, ModalDecomposition, ModePair};
use crate::model::LtiSystem;
use crate::numerics::{self, ComplexMatrix, RealMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    /// Eigenvalue shift, relative to `1 + ||A||_2`.
    pub spectrum: f64,
    /// Blocked participation magnitude and PBH norm (relative to `1 + ||C||_2`).
    pub block: f64,
    /// `||F v_j||` on untouched modes, relative to `1 + ||F||_2`.
    pub untouched: f64,
    /// Change of `||C v_j||` on untouched modes, relative to `1 + ||C||_2`.
    pub pbh_untouched: f64,
    /// Relative imaginary part of the gain before truncation.
    pub realness: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            spectrum: 1e-7,
            block: 1e-8,
            untouched: 1e-9,
            pbh_untouched: 1e-9,
            realness: 1e-9,
        }
    }
}

/// What a gain claims to achieve for one conjugate pair.
#[derive(Debug, Clone, PartialEq)]
pub enum Claim {
    /// Zero participation of the listed (0-based) states.
    Participation(Vec<usize>),
    /// The pair is unobservable in the system output.
    Unobservable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    /// Positive-imaginary member of the targeted pair.
    pub eigenvalue: Complex64,
    pub claim: Claim,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub spectrum_max_shift: f64,
    pub spectrum_pass: bool,
    pub blocked_participation_max: f64,
    pub participation_pass: bool,
    pub pbh_norms_targeted: Vec<f64>,
    pub pbh_rank_deficient: bool,
    pub pbh_pass: bool,
    pub pbh_norms_untouched_shift: f64,
    pub pbh_untouched_pass: bool,
    pub untouched_eigvec_residual: f64,
    pub untouched_pass: bool,
    pub realness_residual: f64,
    pub realness_pass: bool,
    pub pass: bool,
}

impl VerificationReport {
    /// Names of the checks that failed.
    pub fn failures(&self) -> Vec<&'static str> {
        [
            ("spectrum", self.spectrum_pass),
            ("participation", self.participation_pass),
            ("pbh", self.pbh_pass),
            ("pbh_untouched", self.pbh_untouched_pass),
            ("untouched_eigvecs", self.untouched_pass),
            ("realness", self.realness_pass),
        ]
        .into_iter()
        .filter(|(_, ok)| !ok)
        .map(|(name, _)| name)
        .collect()
    }
}

/// Greedy nearest-neighbour matching of two spectra. Returns, for every
/// eigenvalue of `from`, the index of its partner in `to` and the distance.
pub fn match_spectra(from: &[Complex64], to: &[Complex64]) -> Vec<(usize, f64)> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::with_capacity(from.len() * to.len());
    for (i, a) in from.iter().enumerate() {
        for (j, b) in to.iter().enumerate() {
            candidates.push(((a - b).norm(), i, j));
        }
    }
    candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
    let mut out = vec![(usize::MAX, f64::INFINITY); from.len()];
    let mut taken = vec![false; to.len()];
    for (d, i, j) in candidates {
        if out[i].0 == usize::MAX && !taken[j] {
            out[i] = (j, d);
            taken[j] = true;
        }
    }
    out
}

fn closed_loop(a: &RealMatrix, b: &RealMatrix, f: &RealMatrix) -> Result<RealMatrix> {
    Ok(a.add(&b.matmul(f)?)?)
}

/// Largest matched eigenvalue shift between `A` and `A + B F`; passes when
/// it is below `tol * (1 + ||A||_2)`.
pub fn check_spectrum_preserved(
    a: &RealMatrix,
    f: &RealMatrix,
    b: &RealMatrix,
    tol: f64,
) -> Result<(bool, f64)> {
    let open = numerics::eig_real(a)?.values;
    let closed = numerics::eig_real(&closed_loop(a, b, f)?)?.values;
    let shift = match_spectra(&open, &closed)
        .iter()
        .fold(0.0_f64, |m, &(_, d)| m.max(d));
    Ok((shift < tol * (1.0 + a.norm_2()?), shift))
}

fn match_tol(md: &ModalDecomposition) -> f64 {
    1e-6 * (1.0 + md.a_norm)
}

/// Max `|p_k|` over `states` in both columns of the closed-loop pair nearest
/// to `eigenvalue`. Passes when below `tol`.
pub fn check_participation_blocked(
    a: &RealMatrix,
    b: &RealMatrix,
    f: &RealMatrix,
    eigenvalue: Complex64,
    states: &[usize],
    tol: f64,
) -> Result<(bool, f64)> {
    let md = modal::decompose(&closed_loop(a, b, f)?)?;
    participation_in(&md, eigenvalue, states, tol)
}

fn participation_in(
    md: &ModalDecomposition,
    eigenvalue: Complex64,
    states: &[usize],
    tol: f64,
) -> Result<(bool, f64)> {
    let Some((pair, matched)) = target_pair(md, eigenvalue)? else {
        return Ok((false, f64::MAX));
    };
    let p = modal::participation_matrix(md);
    let mut worst = 0.0_f64;
    for &k in states {
        for i in [pair.index, pair.conj_index()] {
            worst = worst.max(p.get(k, i).norm());
        }
    }
    Ok((matched && worst < tol, worst))
}

/// Closed-loop pair at `eigenvalue`; when the eigenvalue moved, the nearest
/// pair with `false` so the check fails but still reports finite values.
fn target_pair(md: &ModalDecomposition, eigenvalue: Complex64) -> Result<Option<(ModePair, bool)>> {
    if let Some(p) = md.find_pair(eigenvalue, match_tol(md))? {
        return Ok(Some((p, true)));
    }
    Ok(md.find_pair(eigenvalue, f64::INFINITY)?.map(|p| (p, false)))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PbhCheck {
    pub pass: bool,
    /// `||C v||` for the pair members (unit-norm closed-loop eigenvectors).
    pub norms: [f64; 2],
    /// `sigma_min([A + B F - lambda I; C])` at the targeted eigenvalue.
    pub sigma_min: f64,
    pub rank_deficient: bool,
}

/// Eigenvector-product and rank forms of the PBH unobservability test for
/// the closed-loop pair nearest to `eigenvalue`.
pub fn check_pbh_unobservable(
    c: &RealMatrix,
    a: &RealMatrix,
    b: &RealMatrix,
    f: &RealMatrix,
    eigenvalue: Complex64,
    tol: f64,
) -> Result<PbhCheck> {
    let acl = closed_loop(a, b, f)?;
    let md = modal::decompose(&acl)?;
    pbh_in(c, &acl, &md, eigenvalue, tol)
}

fn pbh_in(
    c: &RealMatrix,
    acl: &RealMatrix,
    md: &ModalDecomposition,
    eigenvalue: Complex64,
    tol: f64,
) -> Result<PbhCheck> {
    let Some((pair, matched)) = target_pair(md, eigenvalue)? else {
        return Ok(PbhCheck {
            pass: false,
            norms: [f64::MAX; 2],
            sigma_min: f64::MAX,
            rank_deficient: false,
        });
    };
    let cc = c.to_complex();
    let norm_of = |i: usize| -> Result<f64> { Ok(numerics::vec_norm(&cc.matvec(&md.right(i))?)) };
    let norms = [norm_of(pair.index)?, norm_of(pair.conj_index())?];
    let c_norm = c.norm_2()?;

    let n = acl.rows();
    let lambda = md.eigenvalues[pair.index];
    let shifted = acl
        .to_complex()
        .sub(&ComplexMatrix::identity(n).scale(lambda))?
        .vstack(&cc)?;
    let s = numerics::singular_values(&shifted)?;
    let sigma_min = s.get(n.saturating_sub(1)).copied().unwrap_or(0.0);
    let rank_deficient = sigma_min <= tol * (1.0 + s.first().copied().unwrap_or(0.0));

    let bound = tol * (1.0 + c_norm);
    Ok(PbhCheck {
        pass: matched && norms.iter().all(|&x| x < bound) && rank_deficient,
        norms,
        sigma_min,
        rank_deficient,
    })
}

/// `max_j ||F v_j||` over columns of `v` not listed in `excluded`; passes
/// when below `1e-9 * (1 + ||F||_2)`.
pub fn check_untouched_eigvecs(
    f: &RealMatrix,
    v: &ComplexMatrix,
    excluded: &[usize],
) -> Result<(bool, f64)> {
    check_untouched_eigvecs_tol(f, v, excluded, Tolerances::default().untouched)
}

pub fn check_untouched_eigvecs_tol(
    f: &RealMatrix,
    v: &ComplexMatrix,
    excluded: &[usize],
    tol: f64,
) -> Result<(bool, f64)> {
    let fv = f.to_complex().matmul(v)?;
    let residual = (0..v.cols())
        .filter(|j| !excluded.contains(j))
        .map(|j| numerics::vec_norm(&fv.column(j)))
        .fold(0.0_f64, f64::max);
    Ok((residual < tol * (1.0 + f.norm_2()?), residual))
}

fn norms_of(c: &RealMatrix, md: &ModalDecomposition) -> Result<Vec<f64>> {
    Ok(modal::observability_coefficients(c, md)?.norms)
}

/// Runs every check for `F` against the open-loop system and the claimed
/// targets. `realness_residual` is the relative imaginary residue of the
/// complex gain before truncation, when known.
pub fn verify_gain(
    sys: &LtiSystem,
    f: &RealMatrix,
    targets: &[Target],
    tol: &Tolerances,
    realness_residual: f64,
) -> Result<VerificationReport> {
    let open = modal::modal_decomposition(sys)?;
    let acl = sys.closed_loop(f)?;
    let closed = modal::decompose(&acl)?;

    let mapping = match_spectra(&open.eigenvalues, &closed.eigenvalues);
    let spectrum_max_shift = mapping.iter().fold(0.0_f64, |m, &(_, d)| m.max(d));
    let spectrum_pass = spectrum_max_shift < tol.spectrum * (1.0 + open.a_norm);

    // Open-loop modes claimed by some target (both pair members).
    let mut excluded = Vec::new();
    for t in targets {
        match open.find_pair(t.eigenvalue, match_tol(&open))? {
            Some(p) => excluded.extend([p.index, p.conj_index()]),
            None => {
                // A target that is not an open-loop pair cannot be honoured.
                excluded.clear();
                excluded.extend(0..open.n());
            }
        }
    }

    let mut blocked_participation_max = 0.0_f64;
    let mut participation_pass = true;
    let mut pbh_norms_targeted = Vec::new();
    let mut pbh_rank_deficient = true;
    let mut pbh_pass = true;
    for t in targets {
        match &t.claim {
            Claim::Participation(states) => {
                let (ok, worst) = participation_in(&closed, t.eigenvalue, states, tol.block)?;
                blocked_participation_max = blocked_participation_max.max(worst);
                participation_pass &= ok;
            }
            Claim::Unobservable => {
                let chk = pbh_in(&sys.c, &acl, &closed, t.eigenvalue, tol.block)?;
                pbh_norms_targeted.extend(chk.norms);
                pbh_rank_deficient &= chk.rank_deficient;
                pbh_pass &= chk.pass;
            }
        }
    }

    let open_norms = norms_of(&sys.c, &open)?;
    let closed_norms = norms_of(&sys.c, &closed)?;
    let pbh_norms_untouched_shift = (0..open.n())
        .filter(|j| !excluded.contains(j))
        .map(|j| (open_norms[j] - closed_norms[mapping[j].0]).abs())
        .fold(0.0_f64, f64::max);
    let pbh_untouched_pass =
        pbh_norms_untouched_shift < tol.pbh_untouched * (1.0 + sys.c.norm_2()?);

    let (untouched_pass, untouched_eigvec_residual) =
        check_untouched_eigvecs_tol(f, &open.v, &excluded, tol.untouched)?;

    let realness_pass = realness_residual < tol.realness;
    let pass = spectrum_pass
        && participation_pass
        && pbh_pass
        && pbh_untouched_pass
        && untouched_pass
        && realness_pass;
    Ok(VerificationReport {
        spectrum_max_shift,
        spectrum_pass,
        blocked_participation_max,
        participation_pass,
        pbh_norms_targeted,
        pbh_rank_deficient,
        pbh_pass,
        pbh_norms_untouched_shift,
        pbh_untouched_pass,
        untouched_eigvec_residual,
        untouched_pass,
        realness_residual,
        realness_pass,
        pass,
    })
}
