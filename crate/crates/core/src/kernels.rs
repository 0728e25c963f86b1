//! Sequential tile kernels used by the inversion.
//!
//! Every kernel updates its output tile in place and only reads the other
//! operands. Triangular operands are accessed through their lower triangle
//! only. Tiles are column-major, so the inner loops run down columns.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tile_matrix::Tile;

/// The kernel line-forms of the three inversion steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KernelKind {
    /// `A_jj <- chol(A_jj)`
    Potrf,
    /// `A_ij <- A_ij / A_jj^T`
    Trsm,
    /// `A_jj <- A_jj - A_jk A_jk^T`
    SyrkSub,
    /// `A_ii <- A_ii + A_ki^T A_ki`
    SyrkAddT,
    /// One of the three update shapes, selected by step.
    Gemm,
    /// `A_jj <- A_jj^-1`
    Trtri,
    /// `A_ij <- A_ii A_ij`
    TrmmLeft,
    /// `A_ij <- -A_ij A_jj`
    TrmmRightNeg,
    /// `A_ij <- A_ii^T A_ij`
    TrmmLeftT,
    /// `A_ii <- A_ii^T A_ii`
    Lauum,
}

impl KernelKind {
    pub const ALL: [KernelKind; 10] = [
        KernelKind::Potrf,
        KernelKind::Trsm,
        KernelKind::SyrkSub,
        KernelKind::SyrkAddT,
        KernelKind::Gemm,
        KernelKind::Trtri,
        KernelKind::TrmmLeft,
        KernelKind::TrmmRightNeg,
        KernelKind::TrmmLeftT,
        KernelKind::Lauum,
    ];

    /// BLAS/LAPACK routine name, used for display labels.
    pub fn routine(self) -> &'static str {
        match self {
            KernelKind::Potrf => "POTRF",
            KernelKind::Trsm => "TRSM",
            KernelKind::SyrkSub | KernelKind::SyrkAddT => "SYRK",
            KernelKind::Gemm => "GEMM",
            KernelKind::Trtri => "TRTRI",
            KernelKind::TrmmLeft | KernelKind::TrmmRightNeg | KernelKind::TrmmLeftT => "TRMM",
            KernelKind::Lauum => "LAUUM",
        }
    }

    /// Unambiguous tag, used by the text serialization of task streams.
    pub fn tag(self) -> &'static str {
        match self {
            KernelKind::Potrf => "POTRF",
            KernelKind::Trsm => "TRSM",
            KernelKind::SyrkSub => "SYRK_SUB",
            KernelKind::SyrkAddT => "SYRK_ADD_T",
            KernelKind::Gemm => "GEMM",
            KernelKind::Trtri => "TRTRI",
            KernelKind::TrmmLeft => "TRMM_LEFT",
            KernelKind::TrmmRightNeg => "TRMM_RIGHT_NEG",
            KernelKind::TrmmLeftT => "TRMM_LEFT_T",
            KernelKind::Lauum => "LAUUM",
        }
    }
}

impl fmt::Display for KernelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for KernelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KernelKind::ALL
            .into_iter()
            .find(|k| k.tag() == s)
            .ok_or_else(|| Error::Parse(format!("unknown kernel {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    fn apply(self, v: f64) -> f64 {
        match self {
            Sign::Plus => v,
            Sign::Minus => -v,
        }
    }
}

/// Lower Cholesky factor of the SPD tile, in place. The strictly-upper
/// part is zeroed on success.
pub fn potrf(a: &mut Tile) -> Result<()> {
    let n = a.order();
    let data = a.as_mut_slice();
    for j in 0..n {
        // Column j of the factor lives in rows j..n; subtract the
        // contributions of the already-finished columns.
        for p in 0..j {
            let ljp = data[j + p * n];
            if ljp == 0.0 {
                continue;
            }
            let (done, rest) = data.split_at_mut(j * n);
            let col_p = &done[p * n + j..p * n + n];
            let col_j = &mut rest[j..n];
            for (x, &l) in col_j.iter_mut().zip(col_p) {
                *x -= l * ljp;
            }
        }
        let pivot = data[j + j * n];
        if !(pivot > 0.0) {
            return Err(Error::NotPositiveDefinite { k: j });
        }
        let d = pivot.sqrt();
        data[j + j * n] = d;
        for x in &mut data[j * n + j + 1..(j + 1) * n] {
            *x /= d;
        }
    }
    zero_strict_upper(a);
    Ok(())
}

fn first_zero_diagonal(l: &Tile) -> Option<usize> {
    (0..l.order()).find(|&k| l[(k, k)] == 0.0)
}

fn zero_strict_upper(a: &mut Tile) {
    let n = a.order();
    for j in 1..n {
        for x in &mut a.col_mut(j)[..j] {
            *x = 0.0;
        }
    }
}

/// Solves `X * l^T = a` for `X`, overwriting `a`.
pub fn trsm_right_lt(a: &mut Tile, l: &Tile) -> Result<()> {
    if let Some(k) = first_zero_diagonal(l) {
        return Err(Error::SingularTile { k });
    }
    let n = a.order();
    let data = a.as_mut_slice();
    for j in 0..n {
        for p in 0..j {
            let ljp = l[(j, p)];
            if ljp == 0.0 {
                continue;
            }
            let (done, rest) = data.split_at_mut(j * n);
            let x_p = &done[p * n..(p + 1) * n];
            for (x, &v) in rest[..n].iter_mut().zip(x_p) {
                *x -= v * ljp;
            }
        }
        let d = l[(j, j)];
        for x in &mut data[j * n..(j + 1) * n] {
            *x /= d;
        }
    }
    Ok(())
}

// c[lower] += sign * a * a^T
fn syrk_lower(c: &mut Tile, a: &Tile, sign: Sign) {
    let n = c.order();
    for j in 0..n {
        let out = &mut c.col_mut(j)[j..];
        for p in 0..n {
            let s = sign.apply(a[(j, p)]);
            if s == 0.0 {
                continue;
            }
            for (x, &v) in out.iter_mut().zip(&a.col(p)[j..]) {
                *x += v * s;
            }
        }
    }
}

/// `c <- c - a * a^T` on the lower triangle of `c`.
pub fn syrk_sub(c: &mut Tile, a: &Tile) {
    syrk_lower(c, a, Sign::Minus);
}

/// `c <- c + a^T * a` on the lower triangle of `c`.
pub fn syrk_add_t(c: &mut Tile, a: &Tile) {
    syrk_lower(c, &a.transpose(), Sign::Plus);
}

/// `c <- c + sign * op(a) * op(b)` for the three shapes the inversion
/// uses: `(N, T, -)`, `(N, N, +)` and `(T, N, +)`.
pub fn gemm(c: &mut Tile, a: &Tile, b: &Tile, op_a: Trans, op_b: Trans, sign: Sign) -> Result<()> {
    match (op_a, op_b, sign) {
        (Trans::No, Trans::Yes, Sign::Minus) => {
            gemm_nn(c, a, |p, j| b[(j, p)], sign);
        }
        (Trans::No, Trans::No, Sign::Plus) => {
            gemm_nn(c, a, |p, j| b[(p, j)], sign);
        }
        (Trans::Yes, Trans::No, Sign::Plus) => {
            gemm_nn(c, &a.transpose(), |p, j| b[(p, j)], sign);
        }
        other => {
            return Err(Error::Contract(format!("gemm shape {other:?}")));
        }
    }
    Ok(())
}

// c += sign * a * B where B[p, j] = rhs(p, j)
fn gemm_nn(c: &mut Tile, a: &Tile, rhs: impl Fn(usize, usize) -> f64, sign: Sign) {
    let n = c.order();
    for j in 0..n {
        let out = c.col_mut(j);
        for p in 0..n {
            let s = sign.apply(rhs(p, j));
            if s == 0.0 {
                continue;
            }
            for (x, &v) in out.iter_mut().zip(a.col(p)) {
                *x += v * s;
            }
        }
    }
}

/// Inverse of a lower-triangular tile, in place. The strictly-upper part
/// is zeroed.
pub fn trtri(l: &mut Tile) -> Result<()> {
    if let Some(k) = first_zero_diagonal(l) {
        return Err(Error::SingularTile { k });
    }
    let n = l.order();
    let mut inv = Tile::zeros(n);
    for j in 0..n {
        // forward substitution for l * x = e_j
        let x = inv.col_mut(j);
        x[j] = 1.0;
        for p in j..n {
            let xp = x[p] / l[(p, p)];
            x[p] = xp;
            if xp == 0.0 {
                continue;
            }
            for (xi, &lip) in x[p + 1..].iter_mut().zip(&l.col(p)[p + 1..]) {
                *xi -= lip * xp;
            }
        }
    }
    *l = inv;
    Ok(())
}

/// `a <- tri * a`.
pub fn trmm_left(a: &mut Tile, tri: &Tile) {
    let n = a.order();
    let mut y = vec![0.0; n];
    for j in 0..n {
        y.fill(0.0);
        let col = a.col_mut(j);
        for p in 0..n {
            let s = col[p];
            if s == 0.0 {
                continue;
            }
            for (yi, &t) in y[p..].iter_mut().zip(&tri.col(p)[p..]) {
                *yi += t * s;
            }
        }
        col.copy_from_slice(&y);
    }
}

/// `a <- -(a * tri)`.
pub fn trmm_right_neg(a: &mut Tile, tri: &Tile) {
    let n = a.order();
    let mut out = Tile::zeros(n);
    for j in 0..n {
        let y = out.col_mut(j);
        for p in j..n {
            let s = tri[(p, j)];
            if s == 0.0 {
                continue;
            }
            for (yi, &v) in y.iter_mut().zip(a.col(p)) {
                *yi += v * s;
            }
        }
        for yi in y.iter_mut() {
            *yi = -*yi;
        }
    }
    *a = out;
}

/// `a <- tri^T * a`.
pub fn trmm_left_t(a: &mut Tile, tri: &Tile) {
    let n = a.order();
    let mut y = vec![0.0; n];
    for j in 0..n {
        let col = a.col_mut(j);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = tri.col(i)[i..]
                .iter()
                .zip(&col[i..])
                .map(|(t, v)| t * v)
                .sum();
        }
        col.copy_from_slice(&y);
    }
}

/// `l <- l^T * l`, written to the lower triangle.
pub fn lauum(l: &mut Tile) {
    let n = l.order();
    let src = l.clone();
    for j in 0..n {
        for i in j..n {
            // (l^T l)[i, j] = sum_{p >= i} l[p, i] * l[p, j]
            l[(i, j)] = src.col(i)[i..]
                .iter()
                .zip(&src.col(j)[i..])
                .map(|(a, b)| a * b)
                .sum();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lower_part_eq(a: &Tile, b: &Tile, tol: f64) -> bool {
        let n = a.order();
        (0..n).all(|j| (j..n).all(|i| (a[(i, j)] - b[(i, j)]).abs() <= tol))
    }

    #[test]
    fn potrf_scalar() {
        let mut a = Tile::from_rows(&[&[4.0]]);
        potrf(&mut a).unwrap();
        assert_eq!(a, Tile::from_rows(&[&[2.0]]));
    }

    #[test]
    fn potrf_two_by_two() {
        // upper entry is garbage and must be ignored
        let mut a = Tile::from_rows(&[&[4.0, 99.0], &[2.0, 2.0]]);
        potrf(&mut a).unwrap();
        assert_eq!(a, Tile::from_rows(&[&[2.0, 0.0], &[1.0, 1.0]]));
    }

    #[test]
    fn potrf_reports_failing_pivot() {
        let mut a = Tile::from_rows(&[&[1.0, 0.0], &[2.0, 1.0]]);
        assert!(matches!(potrf(&mut a), Err(Error::NotPositiveDefinite { k: 1 })));
        let mut a = Tile::from_rows(&[&[-1.0]]);
        assert!(matches!(potrf(&mut a), Err(Error::NotPositiveDefinite { k: 0 })));
    }

    #[test]
    fn trsm_identity_and_diagonal() {
        let orig = Tile::from_rows(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &[7.0, 8.0, 9.0]]);
        let mut a = orig.clone();
        trsm_right_lt(&mut a, &Tile::identity(3)).unwrap();
        assert_eq!(a, orig);

        let mut a = Tile::from_rows(&[&[2.0, 0.0], &[0.0, 2.0]]);
        trsm_right_lt(&mut a, &Tile::from_rows(&[&[2.0, 0.0], &[0.0, 2.0]])).unwrap();
        assert_eq!(a, Tile::identity(2));
    }

    #[test]
    fn trsm_singular() {
        let mut a = Tile::identity(2);
        let l = Tile::from_rows(&[&[1.0, 0.0], &[1.0, 0.0]]);
        assert!(matches!(trsm_right_lt(&mut a, &l), Err(Error::SingularTile { k: 1 })));
    }

    #[test]
    fn syrk_sub_examples() {
        let mut c = Tile::identity(2);
        syrk_sub(&mut c, &Tile::zeros(2));
        assert_eq!(c, Tile::identity(2));

        let mut c = Tile::from_rows(&[&[5.0, 0.0], &[2.0, 2.0]]);
        syrk_sub(&mut c, &Tile::from_rows(&[&[1.0, 0.0], &[1.0, 0.0]]));
        assert!(lower_part_eq(&c, &Tile::from_rows(&[&[4.0, 0.0], &[1.0, 1.0]]), 0.0));
    }

    #[test]
    fn syrk_add_t_examples() {
        let mut c = Tile::zeros(3);
        syrk_add_t(&mut c, &Tile::identity(3));
        assert!(lower_part_eq(&c, &Tile::identity(3), 0.0));

        let mut c = Tile::identity(1);
        syrk_add_t(&mut c, &Tile::from_rows(&[&[3.0]]));
        assert_eq!(c[(0, 0)], 10.0);
    }

    #[test]
    fn gemm_trivial_cases() {
        let m = Tile::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let mut c = Tile::zeros(2);
        gemm(&mut c, &Tile::identity(2), &m, Trans::No, Trans::No, Sign::Plus).unwrap();
        assert_eq!(c, m);

        for (ta, tb, s) in [
            (Trans::No, Trans::Yes, Sign::Minus),
            (Trans::No, Trans::No, Sign::Plus),
            (Trans::Yes, Trans::No, Sign::Plus),
        ] {
            let mut c = m.clone();
            gemm(&mut c, &Tile::zeros(2), &m, ta, tb, s).unwrap();
            assert_eq!(c, m);
        }
    }

    #[test]
    fn gemm_rejects_other_shapes() {
        let mut c = Tile::zeros(2);
        let m = Tile::identity(2);
        for (ta, tb, s) in [
            (Trans::Yes, Trans::Yes, Sign::Plus),
            (Trans::No, Trans::No, Sign::Minus),
            (Trans::No, Trans::Yes, Sign::Plus),
        ] {
            assert!(matches!(
                gemm(&mut c, &m, &m, ta, tb, s),
                Err(Error::Contract(_))
            ));
        }
    }

    #[test]
    fn trtri_examples() {
        let mut l = Tile::from_rows(&[&[2.0]]);
        trtri(&mut l).unwrap();
        assert_eq!(l, Tile::from_rows(&[&[0.5]]));

        let mut l = Tile::from_rows(&[&[2.0, 0.0], &[1.0, 1.0]]);
        trtri(&mut l).unwrap();
        assert_eq!(l, Tile::from_rows(&[&[0.5, 0.0], &[-0.5, 1.0]]));

        let mut l = Tile::identity(4);
        trtri(&mut l).unwrap();
        assert_eq!(l, Tile::identity(4));
    }

    #[test]
    fn trtri_singular_carries_index() {
        let mut l = Tile::from_rows(&[&[1.0, 0.0, 0.0], &[1.0, 1.0, 0.0], &[1.0, 1.0, 0.0]]);
        assert!(matches!(trtri(&mut l), Err(Error::SingularTile { k: 2 })));
    }

    #[test]
    fn trmm_with_identity() {
        let m = Tile::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let id = Tile::identity(2);

        let mut a = m.clone();
        trmm_left(&mut a, &id);
        assert_eq!(a, m);

        let mut a = m.clone();
        trmm_right_neg(&mut a, &id);
        assert_eq!(a, Tile::from_rows(&[&[-1.0, -2.0], &[-3.0, -4.0]]));

        let mut a = m.clone();
        trmm_left_t(&mut a, &id);
        assert_eq!(a, m);
    }

    #[test]
    fn trmm_left_diagonal() {
        let mut a = Tile::identity(2);
        trmm_left(&mut a, &Tile::from_rows(&[&[2.0, 0.0], &[0.0, 3.0]]));
        assert_eq!(a, Tile::from_rows(&[&[2.0, 0.0], &[0.0, 3.0]]));
    }

    #[test]
    fn trmm_ignores_upper_of_triangle() {
        let m = Tile::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let clean = Tile::from_rows(&[&[2.0, 0.0], &[1.0, 3.0]]);
        let dirty = Tile::from_rows(&[&[2.0, 7.0], &[1.0, 3.0]]);
        for f in [trmm_left, trmm_right_neg, trmm_left_t] {
            let mut x = m.clone();
            let mut y = m.clone();
            f(&mut x, &clean);
            f(&mut y, &dirty);
            assert_eq!(x, y);
        }
    }

    #[test]
    fn lauum_examples() {
        let mut l = Tile::identity(3);
        lauum(&mut l);
        assert_eq!(l, Tile::identity(3));

        let mut l = Tile::from_rows(&[&[2.0, 0.0], &[1.0, 1.0]]);
        lauum(&mut l);
        assert!(lower_part_eq(&l, &Tile::from_rows(&[&[5.0, 0.0], &[1.0, 1.0]]), 0.0));
    }

    #[test]
    fn scalar_inversion_chain() {
        let mut a = Tile::from_rows(&[&[4.0]]);
        potrf(&mut a).unwrap();
        lauum(&mut a);
        assert_eq!(a, Tile::from_rows(&[&[4.0]]));

        let mut a = Tile::from_rows(&[&[4.0]]);
        potrf(&mut a).unwrap();
        trtri(&mut a).unwrap();
        lauum(&mut a);
        assert_eq!(a, Tile::from_rows(&[&[0.25]]));
    }

    #[test]
    fn kind_tags_round_trip() {
        for k in KernelKind::ALL {
            assert_eq!(k.tag().parse::<KernelKind>().unwrap(), k);
        }
        assert!("NOPE".parse::<KernelKind>().is_err());
    }
}
