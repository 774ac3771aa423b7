//! Small row-major f64 matrix used by the network code.
//!
//! All training arithmetic is f64 so gradient-check tolerances stay tight.

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "mat data length mismatch");
        Mat { rows, cols, data }
    }

    /// One row viewed as a 1 x n matrix.
    pub fn row_vector(data: Vec<f64>) -> Self {
        Mat {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// C = A * B.
    pub fn matmul(a: &Mat, b: &Mat) -> Mat {
        assert_eq!(a.cols, b.rows, "matmul shape mismatch");
        let mut c = Mat::zeros(a.rows, b.cols);
        gemm(
            a.rows, a.cols, b.cols, 1.0, &a.data, a.cols as isize, 1, &b.data, b.cols as isize, 1,
            0.0, &mut c.data, b.cols as isize, 1,
        );
        c
    }

    /// C = A * B^T.
    pub fn matmul_nt(a: &Mat, b: &Mat) -> Mat {
        assert_eq!(a.cols, b.cols, "matmul_nt shape mismatch");
        let mut c = Mat::zeros(a.rows, b.rows);
        gemm(
            a.rows, a.cols, b.rows, 1.0, &a.data, a.cols as isize, 1, &b.data, 1, b.cols as isize,
            0.0, &mut c.data, b.rows as isize, 1,
        );
        c
    }

    /// C = A^T * B.
    pub fn matmul_tn(a: &Mat, b: &Mat) -> Mat {
        assert_eq!(a.rows, b.rows, "matmul_tn shape mismatch");
        let mut c = Mat::zeros(a.cols, b.cols);
        gemm(
            a.cols, a.rows, b.cols, 1.0, &a.data, 1, a.cols as isize, &b.data, b.cols as isize, 1,
            0.0, &mut c.data, b.cols as isize, 1,
        );
        c
    }

    /// Adds `bias` to each row.
    pub fn add_row_bias(&mut self, bias: &[f64]) {
        assert_eq!(bias.len(), self.cols);
        for r in 0..self.rows {
            let row = self.row_mut(r);
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
    }

    /// Column sums (used for bias gradients).
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }
}

#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    alpha: f64,
    a: &[f64],
    rsa: isize,
    csa: isize,
    b: &[f64],
    rsb: isize,
    csb: isize,
    beta: f64,
    c: &mut [f64],
    rsc: isize,
    csc: isize,
) {
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            rsc,
            csc,
        );
    }
}
