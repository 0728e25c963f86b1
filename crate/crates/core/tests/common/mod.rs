//! Naive reference implementations used as test oracles.
//!
//! Everything here works on row-major `Vec<Vec<f64>>` and is written as
//! plain textbook loops, independently of the column-major tile kernels.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spdinv::kernels::{self, KernelKind, Sign, Trans};
use spdinv::{DenseMatrix, Tile};

pub type Rows = Vec<Vec<f64>>;

/// Tile orders the kernel oracles cycle through.
pub const ORACLE_ORDERS: [usize; 9] = [1, 2, 3, 4, 5, 6, 7, 8, 32];
pub const ORACLE_CASES: usize = 100;
pub const ORACLE_TOLERANCE: f64 = 1e-12;

pub fn rows_of(t: &Tile) -> Rows {
    let n = t.order();
    (0..n).map(|i| (0..n).map(|j| t[(i, j)]).collect()).collect()
}

pub fn tile_of(r: &Rows) -> Tile {
    let refs: Vec<&[f64]> = r.iter().map(|row| row.as_slice()).collect();
    Tile::from_rows(&refs)
}

pub fn dense_rows(m: &DenseMatrix) -> Rows {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn zeros(n: usize) -> Rows {
    vec![vec![0.0; n]; n]
}

pub fn identity(n: usize) -> Rows {
    let mut r = zeros(n);
    for (i, row) in r.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    r
}

pub fn mul(a: &Rows, b: &Rows) -> Rows {
    let n = a.len();
    let m = b[0].len();
    let inner = b.len();
    let mut c = vec![vec![0.0; m]; n];
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for p in 0..inner {
                s += a[i][p] * b[p][j];
            }
            c[i][j] = s;
        }
    }
    c
}

pub fn transpose(a: &Rows) -> Rows {
    let n = a.len();
    let m = a[0].len();
    (0..m).map(|j| (0..n).map(|i| a[i][j]).collect()).collect()
}

pub fn add(a: &Rows, b: &Rows, scale: f64) -> Rows {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p + scale * q).collect())
        .collect()
}

pub fn neg(a: &Rows) -> Rows {
    a.iter().map(|r| r.iter().map(|x| -x).collect()).collect()
}

/// Lower triangle of `a`, upper part zeroed.
pub fn lower(a: &Rows) -> Rows {
    let mut r = a.clone();
    for (i, row) in r.iter_mut().enumerate() {
        for x in row.iter_mut().skip(i + 1) {
            *x = 0.0;
        }
    }
    r
}

/// Lower triangle of `new` over the strictly-upper triangle of `old`.
pub fn merge_lower(new: &Rows, old: &Rows) -> Rows {
    let mut r = old.clone();
    for i in 0..r.len() {
        for j in 0..=i {
            r[i][j] = new[i][j];
        }
    }
    r
}

/// Row-by-row (Cholesky–Banachiewicz) factorization.
pub fn cholesky(a: &Rows) -> Option<Rows> {
    let n = a.len();
    let mut l = zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i][j];
            for p in 0..j {
                s -= l[i][p] * l[j][p];
            }
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    Some(l)
}

/// Inverse of a lower-triangular matrix, solving `L X = I` one row of `X`
/// at a time.
pub fn lower_inverse(l: &Rows) -> Rows {
    let n = l.len();
    let mut x = zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = if i == j { 1.0 } else { 0.0 };
            for p in j..i {
                s -= l[i][p] * x[p][j];
            }
            x[i][j] = s / l[i][i];
        }
    }
    x
}

/// Gauss–Jordan inverse with partial pivoting.
pub fn gauss_jordan_inverse(a: &Rows) -> Rows {
    let n = a.len();
    let mut m = a.clone();
    let mut inv = identity(n);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| m[x][col].abs().total_cmp(&m[y][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        inv.swap(col, pivot);
        let d = m[col][col];
        assert!(d != 0.0, "singular matrix");
        for j in 0..n {
            m[col][j] /= d;
            inv[col][j] /= d;
        }
        for r in 0..n {
            if r != col {
                let f = m[r][col];
                if f != 0.0 {
                    for j in 0..n {
                        m[r][j] -= f * m[col][j];
                        inv[r][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    inv
}

pub fn max_abs(a: &Rows) -> f64 {
    a.iter().flatten().fold(0.0, |m, x| m.max(x.abs()))
}

/// `max |got - want| / max(1, max |want|)`; infinite on shape mismatch or NaN.
pub fn rel_err(got: &Rows, want: &Rows) -> f64 {
    if got.len() != want.len() {
        return f64::INFINITY;
    }
    let mut worst: f64 = 0.0;
    for (g, w) in got.iter().zip(want) {
        if g.len() != w.len() {
            return f64::INFINITY;
        }
        for (x, y) in g.iter().zip(w) {
            let d = (x - y).abs();
            if d.is_nan() {
                return f64::INFINITY;
            }
            worst = worst.max(d);
        }
    }
    worst / max_abs(want).max(1.0)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_rows(rng: &mut ChaCha8Rng, n: usize) -> Rows {
    (0..n)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect()
}

/// `M M^T + n I`, comfortably SPD.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> Rows {
    let m = random_rows(rng, n);
    let mut s = mul(&m, &transpose(&m));
    for (i, row) in s.iter_mut().enumerate() {
        row[i] += n as f64;
    }
    s
}

/// Well-conditioned lower-triangular factor (zero upper part).
pub fn random_lower(rng: &mut ChaCha8Rng, n: usize) -> Rows {
    cholesky(&random_spd(rng, n)).expect("generated matrix is SPD")
}

/// Runs one kernel on random inputs of order `n` and returns its relative
/// error against the naive reference. Parts of the output the kernel must
/// leave untouched are compared exactly.
pub fn oracle_case(kind: KernelKind, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    match kind {
        KernelKind::Potrf => {
            let a = random_spd(rng, n);
            let mut t = tile_of(&a);
            kernels::potrf(&mut t).expect("SPD input");
            rel_err(&rows_of(&t), &cholesky(&a).unwrap())
        }
        KernelKind::Trsm => {
            let x = random_rows(rng, n);
            let l = random_lower(rng, n);
            let mut t = tile_of(&x);
            kernels::trsm_right_lt(&mut t, &tile_of(&l)).expect("nonsingular");
            let want = mul(&x, &transpose(&lower_inverse(&l)));
            rel_err(&rows_of(&t), &want)
        }
        KernelKind::SyrkSub => {
            let c = random_rows(rng, n);
            let a = random_rows(rng, n);
            let mut t = tile_of(&c);
            kernels::syrk_sub(&mut t, &tile_of(&a));
            let full = add(&c, &mul(&a, &transpose(&a)), -1.0);
            rel_err(&rows_of(&t), &merge_lower(&full, &c))
        }
        KernelKind::SyrkAddT => {
            let c = random_rows(rng, n);
            let a = random_rows(rng, n);
            let mut t = tile_of(&c);
            kernels::syrk_add_t(&mut t, &tile_of(&a));
            let full = add(&c, &mul(&transpose(&a), &a), 1.0);
            rel_err(&rows_of(&t), &merge_lower(&full, &c))
        }
        KernelKind::Gemm => {
            let c = random_rows(rng, n);
            let a = random_rows(rng, n);
            let b = random_rows(rng, n);
            let shapes = [
                (Trans::No, Trans::Yes, Sign::Minus),
                (Trans::No, Trans::No, Sign::Plus),
                (Trans::Yes, Trans::No, Sign::Plus),
            ];
            let mut worst: f64 = 0.0;
            for (op_a, op_b, sign) in shapes {
                let mut t = tile_of(&c);
                kernels::gemm(&mut t, &tile_of(&a), &tile_of(&b), op_a, op_b, sign).unwrap();
                let oa = if op_a == Trans::Yes { transpose(&a) } else { a.clone() };
                let ob = if op_b == Trans::Yes { transpose(&b) } else { b.clone() };
                let s = if sign == Sign::Plus { 1.0 } else { -1.0 };
                worst = worst.max(rel_err(&rows_of(&t), &add(&c, &mul(&oa, &ob), s)));
            }
            worst
        }
        KernelKind::Trtri => {
            let l = random_lower(rng, n);
            let mut t = tile_of(&l);
            kernels::trtri(&mut t).expect("nonsingular");
            rel_err(&rows_of(&t), &lower_inverse(&l))
        }
        KernelKind::TrmmLeft => {
            let a = random_rows(rng, n);
            // a full tile: only its lower triangle may be used
            let tri = random_rows(rng, n);
            let mut t = tile_of(&a);
            kernels::trmm_left(&mut t, &tile_of(&tri));
            rel_err(&rows_of(&t), &mul(&lower(&tri), &a))
        }
        KernelKind::TrmmRightNeg => {
            let a = random_rows(rng, n);
            let tri = random_rows(rng, n);
            let mut t = tile_of(&a);
            kernels::trmm_right_neg(&mut t, &tile_of(&tri));
            rel_err(&rows_of(&t), &neg(&mul(&a, &lower(&tri))))
        }
        KernelKind::TrmmLeftT => {
            let a = random_rows(rng, n);
            let tri = random_rows(rng, n);
            let mut t = tile_of(&a);
            kernels::trmm_left_t(&mut t, &tile_of(&tri));
            rel_err(&rows_of(&t), &mul(&transpose(&lower(&tri)), &a))
        }
        KernelKind::Lauum => {
            // a full tile: the upper part must be ignored and preserved
            let l = random_rows(rng, n);
            let mut t = tile_of(&l);
            kernels::lauum(&mut t);
            let lo = lower(&l);
            let full = mul(&transpose(&lo), &lo);
            rel_err(&rows_of(&t), &merge_lower(&full, &l))
        }
    }
}

/// Worst relative error of `kind` over `cases` random inputs cycling
/// through [`ORACLE_ORDERS`].
pub fn oracle_worst(kind: KernelKind, cases: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..cases)
        .map(|c| oracle_case(kind, ORACLE_ORDERS[c % ORACLE_ORDERS.len()], &mut r))
        .fold(0.0, f64::max)
}
