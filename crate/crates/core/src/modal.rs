//! Modal analysis of a state matrix: biorthonormal right/left eigenvectors,
//! participation factors, mode observability in an output matrix and
//! classification of oscillatory pairs into frequency bands.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LtiSystem;
use crate::numerics::{self, ComplexMatrix, RealMatrix};

/// Relative tolerance (times `||A||_2`) below which two eigenvalues count as equal.
pub const DISTINCTNESS_TOL: f64 = 1e-8;
/// Relative tolerance (times `||A||_2`) on `|Im lambda|` for a mode to be complex.
pub const PAIRING_TOL: f64 = 1e-9;

/// Eigenvalues with right eigenvectors `V` (columns) and `W^T = V^-1`
/// (rows are left eigenvectors), so that `W^T V = I` up to solve accuracy.
///
/// Ordering: ascending `|Im|`, then ascending `Re`; a conjugate pair is
/// adjacent with the positive-imaginary member first.
#[derive(Debug, Clone)]
pub struct ModalDecomposition {
    pub eigenvalues: Vec<Complex64>,
    pub v: ComplexMatrix,
    pub w_t: ComplexMatrix,
    /// `||A||_2` of the decomposed matrix, used to scale tolerances.
    pub a_norm: f64,
    /// Condition number of `V`.
    pub cond_v: f64,
}

impl ModalDecomposition {
    /// Builds the left eigenvectors for given eigenvalues and right eigenvectors.
    pub fn from_parts(eigenvalues: Vec<Complex64>, v: ComplexMatrix, a_norm: f64) -> Result<Self> {
        let sol = numerics::solve(&v, &ComplexMatrix::identity(v.rows()))?;
        Ok(Self {
            eigenvalues,
            v,
            w_t: sol.x,
            a_norm,
            cond_v: sol.cond,
        })
    }

    pub fn n(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn right(&self, i: usize) -> Vec<Complex64> {
        self.v.column(i)
    }

    /// Left eigenvector `w_i^T` as a row.
    pub fn left(&self, i: usize) -> Vec<Complex64> {
        self.w_t.row(i).to_vec()
    }

    pub fn pairing_tol(&self) -> f64 {
        PAIRING_TOL * self.a_norm.max(f64::MIN_POSITIVE)
    }

    /// Pair whose positive-imaginary member is closest to `lambda` (or its
    /// conjugate), if it lies within `tol`.
    pub fn find_pair(&self, lambda: Complex64, tol: f64) -> Result<Option<ModePair>> {
        let target = if lambda.im < 0.0 {
            lambda.conj()
        } else {
            lambda
        };
        Ok(conjugate_pairs(self)?
            .into_iter()
            .map(|p| ((p.eigenvalue - target).norm(), p))
            .filter(|(d, _)| *d <= tol)
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .map(|(_, p)| p))
    }
}

/// Decomposes the state matrix of `sys`.
pub fn modal_decomposition(sys: &LtiSystem) -> Result<ModalDecomposition> {
    decompose(&sys.a)
}

/// Decomposes a real state matrix with distinct eigenvalues.
pub fn decompose(a: &RealMatrix) -> Result<ModalDecomposition> {
    let n = a.rows();
    let e = numerics::eig_real(a)?;
    let a_norm = a.norm_2()?;
    let pair_tol = PAIRING_TOL * a_norm.max(f64::MIN_POSITIVE);

    enum Unit {
        Real(Complex64, Vec<Complex64>),
        Pair(Complex64, Vec<Complex64>),
    }
    let mut units = Vec::new();
    let mut partners: Vec<usize> = Vec::new();
    for j in 0..n {
        let lambda = e.values[j];
        if lambda.im.abs() <= pair_tol {
            let v = realify(&e.vectors.column(j));
            units.push(Unit::Real(Complex64::new(lambda.re, 0.0), v));
        } else if lambda.im > 0.0 {
            units.push(Unit::Pair(lambda, fix_phase(&e.vectors.column(j))));
        } else {
            partners.push(j);
        }
    }

    // Every negative-imaginary eigenvalue must be the conjugate of exactly one
    // representative.
    let mut unused = partners.clone();
    for u in &units {
        if let Unit::Pair(lambda, _) = u {
            let best = unused
                .iter()
                .enumerate()
                .map(|(k, &j)| (k, (e.values[j] - lambda.conj()).norm()))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match best {
                Some((k, d)) if d <= pair_tol.max(1e-12 * lambda.norm()) => {
                    unused.swap_remove(k);
                }
                _ => {
                    return Err(Error::Unpaired {
                        re: lambda.re,
                        im: lambda.im,
                        tol: pair_tol,
                    })
                }
            }
        }
    }
    if let Some(&j) = unused.first() {
        return Err(Error::Unpaired {
            re: e.values[j].re,
            im: e.values[j].im,
            tol: pair_tol,
        });
    }

    let key = |u: &Unit| match u {
        Unit::Real(l, _) | Unit::Pair(l, _) => (l.im.abs(), l.re),
    };
    units.sort_by(|x, y| {
        let (a, b) = (key(x), key(y));
        a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1))
    });

    let mut eigenvalues = Vec::with_capacity(n);
    let mut v = ComplexMatrix::zeros(n, n);
    for u in units {
        match u {
            Unit::Real(l, vec) => {
                v.set_column(eigenvalues.len(), &vec);
                eigenvalues.push(l);
            }
            Unit::Pair(l, vec) => {
                v.set_column(eigenvalues.len(), &vec);
                v.set_column(eigenvalues.len() + 1, &numerics::conj_vec(&vec));
                eigenvalues.push(l);
                eigenvalues.push(l.conj());
            }
        }
    }

    let gap = min_pairwise_gap(&eigenvalues);
    let threshold = DISTINCTNESS_TOL * a_norm;
    if n > 1 && !(gap > threshold) {
        return Err(Error::DistinctnessViolated { gap, threshold });
    }
    ModalDecomposition::from_parts(eigenvalues, v, a_norm)
}

pub(crate) fn min_pairwise_gap(values: &[Complex64]) -> f64 {
    let mut gap = f64::INFINITY;
    for (i, a) in values.iter().enumerate() {
        for b in &values[i + 1..] {
            gap = gap.min((a - b).norm());
        }
    }
    gap
}

/// Unit-norm vector rotated so its largest entry (lowest index on ties) is
/// real and positive.
pub fn fix_phase(v: &[Complex64]) -> Vec<Complex64> {
    let v = numerics::normalize(v);
    let mut best = 0;
    for (k, z) in v.iter().enumerate() {
        if z.norm() > v[best].norm() {
            best = k;
        }
    }
    if v.is_empty() || v[best].norm() == 0.0 {
        return v;
    }
    let phase = v[best].conj() / v[best].norm();
    v.iter().map(|z| z * phase).collect()
}

fn realify(v: &[Complex64]) -> Vec<Complex64> {
    let rotated = fix_phase(v);
    let real: Vec<Complex64> = rotated.iter().map(|z| Complex64::new(z.re, 0.0)).collect();
    numerics::normalize(&real)
}

/// Participation factors `p_ki = w_ik v_ki` (state `k`, mode `i`).
#[derive(Debug, Clone)]
pub struct ParticipationMatrix {
    pub p: ComplexMatrix,
}

impl ParticipationMatrix {
    pub fn get(&self, state: usize, mode: usize) -> Complex64 {
        self.p[(state, mode)]
    }

    pub fn magnitudes(&self) -> RealMatrix {
        self.p.map(|z| z.norm())
    }

    pub fn column_sums(&self) -> Vec<Complex64> {
        (0..self.p.cols())
            .map(|i| self.p.column(i).iter().sum())
            .collect()
    }
}

/// `P = V o W^T` (Hadamard product).
pub fn participation_matrix(md: &ModalDecomposition) -> ParticipationMatrix {
    let n = md.n();
    ParticipationMatrix {
        p: ComplexMatrix::from_fn(n, n, |k, i| md.v[(k, i)] * md.w_t[(i, k)]),
    }
}

/// Mode observability coefficients `o_ji = c_j^T v_i`.
#[derive(Debug, Clone)]
pub struct ModeObservability {
    pub o: ComplexMatrix,
    /// `||C v_i||_2` in mode order.
    pub norms: Vec<f64>,
}

pub fn observability_coefficients(
    c: &RealMatrix,
    md: &ModalDecomposition,
) -> Result<ModeObservability> {
    if c.cols() != md.n() {
        return Err(Error::Dimension {
            field: "C".into(),
            expected: format!("{} columns", md.n()),
            found: format!("{} columns", c.cols()),
        });
    }
    let o = c.to_complex().matmul(&md.v)?;
    let norms = (0..o.cols())
        .map(|i| numerics::vec_norm(&o.column(i)))
        .collect();
    Ok(ModeObservability { o, norms })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeClass {
    NonOscillatory,
    BelowBand,
    InterArea,
    Ambiguous,
    Local,
    AboveBand,
}

impl ModeClass {
    pub fn as_str(self) -> &'static str {
        match self {
            ModeClass::NonOscillatory => "non_oscillatory",
            ModeClass::BelowBand => "below_band",
            ModeClass::InterArea => "inter_area",
            ModeClass::Ambiguous => "ambiguous",
            ModeClass::Local => "local",
            ModeClass::AboveBand => "above_band",
        }
    }
}

/// Band of an oscillation frequency. Inter-area is 0.1-1 Hz and local
/// 0.7-2 Hz; the overlap 0.7-1.0 Hz is `Ambiguous`.
pub fn classify_frequency(hz: f64) -> ModeClass {
    if hz < 0.1 {
        ModeClass::BelowBand
    } else if hz < 0.7 {
        ModeClass::InterArea
    } else if hz <= 1.0 {
        ModeClass::Ambiguous
    } else if hz <= 2.0 {
        ModeClass::Local
    } else {
        ModeClass::AboveBand
    }
}

pub fn frequency_hz(lambda: Complex64) -> f64 {
    lambda.im.abs() / (2.0 * PI)
}

/// `-Re(lambda) / |lambda|`; 1 for the zero eigenvalue.
pub fn damping_ratio(lambda: Complex64) -> f64 {
    let mag = lambda.norm();
    if mag == 0.0 {
        1.0
    } else {
        -lambda.re / mag
    }
}

/// A complex-conjugate pair `(index, index + 1)` in decomposition order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModePair {
    /// Position of the positive-imaginary member.
    pub index: usize,
    pub eigenvalue: Complex64,
    pub frequency_hz: f64,
    pub damping_ratio: f64,
    pub class: ModeClass,
}

impl ModePair {
    pub fn conj_index(&self) -> usize {
        self.index + 1
    }

    pub fn contains(&self, mode: usize) -> bool {
        mode == self.index || mode == self.index + 1
    }
}

/// All conjugate pairs of `md`, classified. Real eigenvalues are skipped.
pub fn conjugate_pairs(md: &ModalDecomposition) -> Result<Vec<ModePair>> {
    let tol = md.pairing_tol();
    let mut pairs = Vec::new();
    let mut i = 0;
    while i < md.n() {
        let lambda = md.eigenvalues[i];
        if lambda.im.abs() <= tol {
            i += 1;
            continue;
        }
        let partner = md.eigenvalues.get(i + 1).copied();
        match partner {
            Some(mu) if lambda.im > 0.0 && (mu - lambda.conj()).norm() <= tol => {
                pairs.push(ModePair {
                    index: i,
                    eigenvalue: lambda,
                    frequency_hz: frequency_hz(lambda),
                    damping_ratio: damping_ratio(lambda),
                    class: ModeClass::NonOscillatory,
                });
                i += 2;
            }
            _ => {
                return Err(Error::Unpaired {
                    re: lambda.re,
                    im: lambda.im,
                    tol,
                })
            }
        }
    }
    Ok(classify_modes(pairs))
}

pub fn classify_modes(pairs: Vec<ModePair>) -> Vec<ModePair> {
    pairs
        .into_iter()
        .map(|p| ModePair {
            class: classify_frequency(p.frequency_hz),
            ..p
        })
        .collect()
}

/// Class of every individual mode; real eigenvalues are `NonOscillatory`.
pub fn mode_classes(md: &ModalDecomposition) -> Vec<ModeClass> {
    md.eigenvalues
        .iter()
        .map(|&l| {
            if l.im.abs() <= md.pairing_tol() {
                ModeClass::NonOscillatory
            } else {
                classify_frequency(frequency_hz(l))
            }
        })
        .collect()
}
