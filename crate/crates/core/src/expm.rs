//! Matrix exponential by scaling and squaring with diagonal Pade
//! approximants (degrees 3, 5, 7, 9, 13), following Higham (2005).

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const MAX_SIZE: usize = 64;

const THETA: [(usize, f64); 4] =
    [(3, 1.495585217958292e-2), (5, 2.53939833006323e-1), (7, 9.504178996162932e-1), (9, 2.097847961257068e0)];
const THETA_13: f64 = 5.371920351148152e0;

const B3: [f64; 4] = [120., 60., 12., 1.];
const B5: [f64; 6] = [30240., 15120., 3360., 420., 30., 1.];
const B7: [f64; 8] = [17297280., 8648640., 1995840., 277200., 25200., 1512., 56., 1.];
const B9: [f64; 10] =
    [17643225600., 8821612800., 2075673600., 302702400., 30270240., 2162160., 110880., 3960., 90., 1.];
const B13: [f64; 14] = [
    64764752532480000.,
    32382376266240000.,
    7771770303897600.,
    1187353796428800.,
    129060195264000.,
    10559470521600.,
    670442572800.,
    33522128640.,
    1323241920.,
    40840800.,
    960960.,
    16380.,
    182.,
    1.,
];

fn one_norm(a: &DMatrix<f64>) -> f64 {
    a.column_iter().map(|c| c.iter().map(|x| x.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `U, V` for a low-degree approximant from the coefficient list.
fn low_degree(a: &DMatrix<f64>, b: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let a2 = a * a;
    let mut power = DMatrix::identity(n, n);
    let mut u = DMatrix::zeros(n, n);
    let mut v = DMatrix::zeros(n, n);
    for j in 0..b.len() / 2 {
        u += &power * b[2 * j + 1];
        v += &power * b[2 * j];
        power = &power * &a2;
    }
    (a * u, v)
}

fn degree_13(a: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let id = DMatrix::<f64>::identity(n, n);
    let a2 = a * a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;
    let b = &B13;
    let inner_u = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9]);
    let u = a * (inner_u + &a6 * b[7] + &a4 * b[5] + &a2 * b[3] + &id * b[1]);
    let inner_v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8]);
    let v = inner_v + &a6 * b[6] + &a4 * b[4] + &a2 * b[2] + &id * b[0];
    (u, v)
}

/// `e^{tA}` for a square matrix of size at most [`MAX_SIZE`].
pub fn matrix_exponential(a: &DMatrix<f64>, t: f64) -> Result<DMatrix<f64>> {
    if !a.is_square() {
        return Err(Error::InvalidParameter(format!("matrix is {}x{}, not square", a.nrows(), a.ncols())));
    }
    if a.nrows() > MAX_SIZE {
        return Err(Error::InvalidParameter(format!("matrix size {} exceeds {MAX_SIZE}", a.nrows())));
    }
    if !t.is_finite() || a.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("matrix exponential input must be finite".into()));
    }
    let n = a.nrows();
    let ta = a * t;
    let norm = one_norm(&ta);
    if norm == 0.0 {
        return Ok(DMatrix::identity(n, n));
    }
    let mut squarings = 0u32;
    let (u, v) = match THETA.iter().find(|(_, theta)| norm <= *theta) {
        Some(&(3, _)) => low_degree(&ta, &B3),
        Some(&(5, _)) => low_degree(&ta, &B5),
        Some(&(7, _)) => low_degree(&ta, &B7),
        Some(_) => low_degree(&ta, &B9),
        None => {
            let s = (norm / THETA_13).log2().ceil().max(0.0);
            if s > 1000.0 {
                return Err(Error::Overflow(norm));
            }
            squarings = s as u32;
            degree_13(&(ta / 2f64.powi(squarings as i32)))
        }
    };
    let p = &v + &u;
    let q = &v - &u;
    let mut r = q.lu().solve(&p).ok_or(Error::Overflow(norm))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::Overflow(norm));
    }
    Ok(r)
}
