//! Eigenvalues of small real matrices and real block-diagonalization.
//!
//! The general path balances the matrix, reduces it to upper Hessenberg form
//! with Householder reflections and runs Francis double-shift QR. Matrices of
//! dimension 2 use the closed-form quadratic.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Default relative tolerance, scaled by the Frobenius norm of the input.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Largest dimension accepted by [`eigenvalues`].
pub const MAX_DIM: usize = 256;

/// A real eigenvalue (`im == 0`) or the upper representative of a
/// conjugate pair (`im > 0`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexPair {
    pub re: f64,
    pub im: f64,
}

impl ComplexPair {
    pub fn real(re: f64) -> Self {
        Self { re, im: 0.0 }
    }

    #[inline]
    pub fn is_real(&self) -> bool {
        self.im == 0.0
    }

    pub fn modulus(&self) -> f64 {
        self.re.hypot(self.im)
    }

    /// Argument in `[0, π]`.
    pub fn angle(&self) -> f64 {
        self.im.atan2(self.re)
    }

    /// Number of eigenvalues this entry stands for.
    pub fn multiplicity(&self) -> usize {
        if self.is_real() {
            1
        } else {
            2
        }
    }
}

fn order_key(a: &ComplexPair, b: &ComplexPair) -> Ordering {
    b.modulus()
        .total_cmp(&a.modulus())
        .then(a.angle().total_cmp(&b.angle()))
}

fn check_square(m: &Mat) -> Result<()> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.rows(),
            cols: m.cols(),
        });
    }
    if m.rows() > MAX_DIM {
        return Err(Error::InvalidArgument(format!(
            "eigen solver supports dimension <= {MAX_DIM}, got {}",
            m.rows()
        )));
    }
    if !m.is_finite() {
        return Err(Error::InvalidArgument("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Eigenvalues of `m`, one entry per real eigenvalue and one per conjugate
/// pair, sorted by modulus descending then angle ascending. Imaginary parts
/// below `tol * ‖m‖_F` are snapped to zero, which splits the pair into two
/// real entries.
pub fn eigenvalues(m: &Mat, tol: f64) -> Result<Vec<ComplexPair>> {
    check_square(m)?;
    let n = m.rows();
    let snap = tol * m.frobenius_norm();
    let raw: Vec<(f64, f64)> = match n {
        0 => Vec::new(),
        1 => vec![(m[(0, 0)], 0.0)],
        2 => quadratic(m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]),
        _ => {
            let mut a = m.clone();
            balance(&mut a);
            hessenberg(&mut a);
            hqr(a)?
        }
    };
    let mut out = Vec::with_capacity(n);
    for (re, im) in raw {
        if im.abs() <= snap {
            out.push(ComplexPair::real(re));
        } else if im > 0.0 {
            out.push(ComplexPair { re, im });
        }
    }
    out.sort_by(order_key);
    Ok(out)
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Mat) -> Result<f64> {
    Ok(eigenvalues(m, DEFAULT_TOL)?
        .iter()
        .map(ComplexPair::modulus)
        .fold(0.0, f64::max))
}

/// Roots of the characteristic polynomial of `[[a, b], [c, d]]`, returned
/// as `(re, im)` for both eigenvalues.
fn quadratic(a: f64, b: f64, c: f64, d: f64) -> Vec<(f64, f64)> {
    let p = 0.5 * (a + d);
    let h = 0.5 * (a - d);
    let disc = h * h + b * c;
    if disc >= 0.0 {
        let s = disc.sqrt();
        let l1 = p + s.copysign(p);
        let det = a * d - b * c;
        let l2 = if l1 != 0.0 { det / l1 } else { p - s };
        if s == 0.0 {
            vec![(p, 0.0), (p, 0.0)]
        } else {
            vec![(l1, 0.0), (l2, 0.0)]
        }
    } else {
        let s = (-disc).sqrt();
        vec![(p, s), (p, -s)]
    }
}

/// Diagonal similarity by powers of two so rows and columns have comparable
/// norms. Exact in floating point.
fn balance(a: &mut Mat) {
    const RADIX: f64 = 2.0;
    let n = a.rows();
    let sqrdx = RADIX * RADIX;
    let mut done = false;
    while !done {
        done = true;
        for i in 0..n {
            let mut r = 0.0;
            let mut c = 0.0;
            for j in 0..n {
                if j != i {
                    c += a[(j, i)].abs();
                    r += a[(i, j)].abs();
                }
            }
            if c != 0.0 && r != 0.0 {
                let s = c + r;
                let mut f = 1.0;
                let mut g = r / RADIX;
                while c < g {
                    f *= RADIX;
                    c *= sqrdx;
                }
                g = r * RADIX;
                while c > g {
                    f /= RADIX;
                    c /= sqrdx;
                }
                if (c + r) / f < 0.95 * s {
                    done = false;
                    let g = 1.0 / f;
                    for j in 0..n {
                        a[(i, j)] *= g;
                    }
                    for j in 0..n {
                        a[(j, i)] *= f;
                    }
                }
            }
        }
    }
}

/// Householder reduction to upper Hessenberg form. Columns that are already
/// zero below the subdiagonal are left untouched.
fn hessenberg(a: &mut Mat) {
    let n = a.rows();
    if n < 3 {
        return;
    }
    let mut v = vec![0.0; n];
    for k in 0..n - 2 {
        let tail: f64 = (k + 2..n).map(|i| a[(i, k)].abs()).sum();
        if tail == 0.0 {
            continue;
        }
        let norm = (k + 1..n).map(|i| a[(i, k)] * a[(i, k)]).sum::<f64>().sqrt();
        let x0 = a[(k + 1, k)];
        let alpha = if x0 >= 0.0 { -norm } else { norm };
        for i in k + 1..n {
            v[i] = a[(i, k)];
        }
        v[k + 1] -= alpha;
        let vnorm2: f64 = (k + 1..n).map(|i| v[i] * v[i]).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        let beta = 2.0 / vnorm2;
        // Left: rows k+1.. of columns k..
        for j in k..n {
            let s: f64 = (k + 1..n).map(|i| v[i] * a[(i, j)]).sum::<f64>() * beta;
            for i in k + 1..n {
                a[(i, j)] -= s * v[i];
            }
        }
        // Right: columns k+1.. of every row.
        for i in 0..n {
            let s: f64 = (k + 1..n).map(|j| a[(i, j)] * v[j]).sum::<f64>() * beta;
            for j in k + 1..n {
                a[(i, j)] -= s * v[j];
            }
        }
        a[(k + 1, k)] = alpha;
        for i in k + 2..n {
            a[(i, k)] = 0.0;
        }
    }
}

/// Francis double-shift QR on an upper Hessenberg matrix. Returns all
/// eigenvalues as `(re, im)`. Uses 1-based indexing internally.
fn hqr(h: Mat) -> Result<Vec<(f64, f64)>> {
    let n = h.rows();
    let mut a = vec![vec![0.0; n + 1]; n + 1];
    for i in 0..n {
        for j in 0..n {
            a[i + 1][j + 1] = h[(i, j)];
        }
    }
    let mut wr = vec![0.0; n + 1];
    let mut wi = vec![0.0; n + 1];
    let cap = 30 * n;
    let mut total = 0usize;

    let mut anorm = 0.0;
    for i in 1..=n {
        for j in (i.max(2) - 1)..=n {
            anorm += a[i][j].abs();
        }
    }
    let mut nn = n;
    let mut t = 0.0;
    let (mut p, mut q, mut r): (f64, f64, f64);
    let (mut x, mut y, mut z, mut w);
    let mut s;
    while nn >= 1 {
        let mut its = 0usize;
        loop {
            let mut l = nn;
            while l >= 2 {
                s = a[l - 1][l - 1].abs() + a[l][l].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[l][l - 1].abs() + s == s {
                    a[l][l - 1] = 0.0;
                    break;
                }
                l -= 1;
            }
            x = a[nn][nn];
            if l == nn {
                wr[nn] = x + t;
                wi[nn] = 0.0;
                nn -= 1;
                break;
            }
            y = a[nn - 1][nn - 1];
            w = a[nn][nn - 1] * a[nn - 1][nn];
            if l == nn - 1 {
                p = 0.5 * (y - x);
                q = p * p + w;
                z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + z.copysign(p);
                    wr[nn - 1] = x + z;
                    wr[nn] = x + z;
                    if z != 0.0 {
                        wr[nn] = x - w / z;
                    }
                    wi[nn - 1] = 0.0;
                    wi[nn] = 0.0;
                } else {
                    wr[nn - 1] = x + p;
                    wr[nn] = x + p;
                    wi[nn - 1] = -z;
                    wi[nn] = z;
                }
                nn -= 2;
                break;
            }
            if total >= cap {
                return Err(Error::NoConvergence { iterations: total });
            }
            if its > 0 && its % 10 == 0 {
                // Exceptional shift.
                t += x;
                for i in 1..=nn {
                    a[i][i] -= x;
                }
                s = a[nn][nn - 1].abs() + a[nn - 1][nn - 2].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            total += 1;
            let mut m = nn - 2;
            loop {
                z = a[m][m];
                r = x - z;
                s = y - z;
                p = (r * s - w) / a[m + 1][m] + a[m][m + 1];
                q = a[m + 1][m + 1] - z - r - s;
                r = a[m + 2][m + 1];
                s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[m][m - 1].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[m - 1][m - 1].abs() + z.abs() + a[m + 1][m + 1].abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nn {
                a[i][i - 2] = 0.0;
                if i != m + 2 {
                    a[i][i - 3] = 0.0;
                }
            }
            let mut k = m;
            while k < nn {
                if k != m {
                    p = a[k][k - 1];
                    q = a[k + 1][k - 1];
                    r = 0.0;
                    if k != nn - 1 {
                        r = a[k + 2][k - 1];
                    }
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                s = (p * p + q * q + r * r).sqrt().copysign(p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[k][k - 1] = -a[k][k - 1];
                        }
                    } else {
                        a[k][k - 1] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nn {
                        p = a[k][j] + q * a[k + 1][j];
                        if k != nn - 1 {
                            p += r * a[k + 2][j];
                            a[k + 2][j] -= p * z;
                        }
                        a[k + 1][j] -= p * y;
                        a[k][j] -= p * x;
                    }
                    let mmin = nn.min(k + 3);
                    for i in l..=mmin {
                        p = x * a[i][k] + y * a[i][k + 1];
                        if k != nn - 1 {
                            p += z * a[i][k + 2];
                            a[i][k + 2] -= p * r;
                        }
                        a[i][k + 1] -= p * q;
                        a[i][k] -= p;
                    }
                }
                k += 1;
            }
        }
    }
    Ok((1..=n).map(|i| (wr[i], wi[i])).collect())
}

/// How real eigenvalues are laid out in a [`RealBlockForm`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockLayout {
    /// One 1x1 block per real eigenvalue.
    Mixed,
    /// Only 2x2 blocks: real eigenvalues sorted ascending and paired with
    /// their neighbour into diagonal blocks. Needs even dimension.
    Pairs,
}

/// `m = basis · diag(blocks) · basis⁻¹`.
#[derive(Clone, Debug)]
pub struct RealBlockForm {
    pub basis: Mat,
    pub blocks: Vec<Mat>,
}

impl RealBlockForm {
    pub fn block_diagonal(&self) -> Mat {
        Mat::direct_sum(&self.blocks)
    }

    pub fn reconstruct(&self) -> Result<Mat> {
        self.basis
            .matmul(&self.block_diagonal())?
            .matmul(&self.basis.inverse()?)
    }

    /// `‖B D B⁻¹ − m‖_F / ‖m‖_F`, absolute when `m` is zero.
    pub fn reconstruction_error(&self, m: &Mat) -> Result<f64> {
        let diff = self.reconstruct()?.sub(m)?.frobenius_norm();
        let norm = m.frobenius_norm();
        Ok(if norm > 0.0 { diff / norm } else { diff })
    }
}

/// `γ [[cos θ, sin θ], [−sin θ, cos θ]]`, eigenvalues `γ e^{±iθ}`.
pub fn rotation_block(gamma: f64, theta: f64) -> Mat {
    let (s, c) = theta.sin_cos();
    Mat::new(2, 2, vec![gamma * c, gamma * s, -gamma * s, gamma * c]).expect("2x2")
}

/// Real Jordan block `J_n(λ)`: `λ` on the diagonal, ones above it.
pub fn jordan_block(lambda: f64, n: usize) -> Mat {
    let mut m = Mat::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = lambda;
        if i + 1 < n {
            m[(i, i + 1)] = 1.0;
        }
    }
    m
}

/// Real Jordan block `C_n(γ, θ)` of size `2n`: rotation blocks on the
/// diagonal and identities on the block superdiagonal.
pub fn complex_jordan_block(gamma: f64, theta: f64, n: usize) -> Mat {
    let c = rotation_block(gamma, theta);
    let mut m = Mat::zeros(2 * n, 2 * n);
    for k in 0..n {
        for i in 0..2 {
            for j in 0..2 {
                m[(2 * k + i, 2 * k + j)] = c[(i, j)];
            }
            if k + 1 < n {
                m[(2 * k + i, 2 * k + 2 + i)] = 1.0;
            }
        }
    }
    m
}

/// Real block-diagonal form of a matrix with simple eigenvalues.
///
/// Each conjugate pair `a ± ib` gives the block `[[a, b], [−b, a]]` with
/// basis columns `(Re z, Im z)` of the eigenvector `z` for `a + ib`; each
/// real eigenvalue gives a 1x1 block (or is merged, see [`BlockLayout`]).
/// Eigenvectors come from inverse iteration at the computed eigenvalues.
pub fn real_block_diagonalize(m: &Mat, tol: f64, layout: BlockLayout) -> Result<RealBlockForm> {
    check_square(m)?;
    let n = m.rows();
    if layout == BlockLayout::Pairs && n % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "paired 2x2 layout needs even dimension, got {n}"
        )));
    }
    let norm = m.frobenius_norm();
    let eigs = eigenvalues(m, tol)?;
    check_separation(&eigs, tol * norm)?;

    let mut basis = Mat::zeros(n, n);
    let mut blocks = Vec::new();
    let mut col = 0;
    let put = |basis: &mut Mat, v: &[f64], col: usize| {
        for (i, &x) in v.iter().enumerate() {
            basis[(i, col)] = x;
        }
    };

    for e in eigs.iter().filter(|e| !e.is_real()) {
        let (x, y) = complex_eigenvector(m, e.re, e.im, norm)?;
        put(&mut basis, &x, col);
        put(&mut basis, &y, col + 1);
        col += 2;
        blocks.push(Mat::new(2, 2, vec![e.re, e.im, -e.im, e.re])?);
    }
    let mut reals: Vec<f64> = eigs.iter().filter(|e| e.is_real()).map(|e| e.re).collect();
    match layout {
        BlockLayout::Mixed => {
            for &lambda in &reals {
                put(&mut basis, &real_eigenvector(m, lambda, norm)?, col);
                col += 1;
                blocks.push(Mat::from_diag(&[lambda]));
            }
        }
        BlockLayout::Pairs => {
            reals.sort_by(f64::total_cmp);
            for pair in reals.chunks(2) {
                for &lambda in pair {
                    put(&mut basis, &real_eigenvector(m, lambda, norm)?, col);
                    col += 1;
                }
                blocks.push(Mat::from_diag(pair));
            }
        }
    }

    let form = RealBlockForm { basis, blocks };
    let err = form.reconstruction_error(m)?;
    if !(err <= 100.0 * tol) {
        return Err(Error::ReconstructionFailed { residual: err });
    }
    Ok(form)
}

fn check_separation(eigs: &[ComplexPair], sep: f64) -> Result<()> {
    // Compare every eigenvalue with every other, conjugates included.
    let mut all: Vec<(f64, f64)> = Vec::new();
    for e in eigs {
        all.push((e.re, e.im));
        if !e.is_real() {
            all.push((e.re, -e.im));
        }
    }
    for i in 0..all.len() {
        let mut cluster = vec![all[i]];
        for j in i + 1..all.len() {
            let d = (all[i].0 - all[j].0).hypot(all[i].1 - all[j].1);
            if d <= sep {
                cluster.push(all[j]);
            }
        }
        if cluster.len() > 1 {
            let names: Vec<String> = cluster
                .iter()
                .map(|&(re, im)| {
                    if im == 0.0 {
                        format!("{re:.6e}")
                    } else {
                        format!("{re:.6e}{im:+.6e}i")
                    }
                })
                .collect();
            return Err(Error::ClusteredEigenvalues {
                cluster: format!("{{{}}}", names.join(", ")),
            });
        }
    }
    Ok(())
}

/// LU solve with tiny pivots replaced by `floor`, as inverse iteration
/// deliberately factors a nearly singular matrix.
fn solve_floored(mut a: Vec<f64>, n: usize, b: &mut [f64], floor: f64) {
    let mut perm: Vec<usize> = (0..n).collect();
    for k in 0..n {
        let mut p = k;
        for i in k + 1..n {
            if a[i * n + k].abs() > a[p * n + k].abs() {
                p = i;
            }
        }
        if p != k {
            for j in 0..n {
                a.swap(k * n + j, p * n + j);
            }
            perm.swap(k, p);
        }
        if a[k * n + k].abs() < floor {
            a[k * n + k] = if a[k * n + k] < 0.0 { -floor } else { floor };
        }
        let piv = a[k * n + k];
        for i in k + 1..n {
            let f = a[i * n + k] / piv;
            a[i * n + k] = f;
            if f != 0.0 {
                for j in k + 1..n {
                    a[i * n + j] -= f * a[k * n + j];
                }
            }
        }
    }
    let rhs: Vec<f64> = perm.iter().map(|&p| b[p]).collect();
    b.copy_from_slice(&rhs);
    for i in 0..n {
        for j in 0..i {
            b[i] -= a[i * n + j] * b[j];
        }
    }
    for i in (0..n).rev() {
        for j in i + 1..n {
            b[i] -= a[i * n + j] * b[j];
        }
        b[i] /= a[i * n + i];
    }
}

const INVERSE_ITERATIONS: usize = 3;

fn start_vector(n: usize) -> Vec<f64> {
    (0..n).map(|i| 1.0 / (1.0 + i as f64).sqrt()).collect()
}

/// Index of the first entry whose magnitude is within a relative 1e-8 of
/// the largest, so near-ties resolve to the lowest index.
fn leading_index(mags: &[f64]) -> usize {
    let max = mags.iter().cloned().fold(0.0, f64::max);
    mags.iter().position(|&v| v >= max * (1.0 - 1e-8)).unwrap_or(0)
}

fn real_eigenvector(m: &Mat, lambda: f64, norm: f64) -> Result<Vec<f64>> {
    let n = m.rows();
    let mut shifted = m.data().to_vec();
    for i in 0..n {
        shifted[i * n + i] -= lambda;
    }
    let floor = f64::EPSILON * norm.max(f64::MIN_POSITIVE);
    let mut v = start_vector(n);
    for _ in 0..INVERSE_ITERATIONS {
        solve_floored(shifted.clone(), n, &mut v, floor);
        let s = v.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()));
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Singular);
        }
        v.iter_mut().for_each(|x| *x /= s);
    }
    let mags: Vec<f64> = v.iter().map(|x| x.abs()).collect();
    let lead = v[leading_index(&mags)];
    v.iter_mut().for_each(|x| *x /= lead);
    Ok(v)
}

/// Eigenvector `z = x + iy` for `a + ib`, scaled so its largest entry is 1.
fn complex_eigenvector(m: &Mat, a: f64, b: f64, norm: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = m.rows();
    let n2 = 2 * n;
    // [[m − aI, bI], [−bI, m − aI]] acting on (x, y).
    let mut big = vec![0.0; n2 * n2];
    for i in 0..n {
        for j in 0..n {
            let v = m[(i, j)] - if i == j { a } else { 0.0 };
            big[i * n2 + j] = v;
            big[(n + i) * n2 + n + j] = v;
        }
        big[i * n2 + n + i] = b;
        big[(n + i) * n2 + i] = -b;
    }
    let floor = f64::EPSILON * norm.max(f64::MIN_POSITIVE);
    let mut v: Vec<f64> = start_vector(n2);
    for _ in 0..INVERSE_ITERATIONS {
        solve_floored(big.clone(), n2, &mut v, floor);
        let s = v.iter().fold(0.0, |acc: f64, x| acc.max(x.abs()));
        if !(s.is_finite() && s > 0.0) {
            return Err(Error::Singular);
        }
        v.iter_mut().for_each(|x| *x /= s);
    }
    let (xs, ys) = v.split_at(n);
    let mags: Vec<f64> = xs.iter().zip(ys).map(|(x, y)| x.hypot(*y)).collect();
    let j = leading_index(&mags);
    // Divide by z_j = xs[j] + i ys[j].
    let (zr, zi) = (xs[j], ys[j]);
    let d = zr * zr + zi * zi;
    let mut x = vec![0.0; n];
    let mut y = vec![0.0; n];
    for k in 0..n {
        x[k] = (xs[k] * zr + ys[k] * zi) / d;
        y[k] = (ys[k] * zr - xs[k] * zi) / d;
    }
    x[j] = 1.0;
    y[j] = 0.0;
    Ok((x, y))
}
