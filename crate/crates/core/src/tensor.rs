//! Dense row-major `f64` tensors.
//!
//! A [`Tensor`] is a value: operations never mutate their inputs and always
//! return a fresh tensor. The only broadcasting supported is adding a rank-1
//! bias to every row of a rank-2 batch ([`Tensor::add_row`]).

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

/// Binary elementwise operations accepted by [`Tensor::elementwise`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    /// Multiply every element by a scalar operand.
    Scale,
}

/// Right-hand operand of [`Tensor::elementwise`].
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a> {
    Tensor(&'a Tensor),
    Scalar(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    /// Biased (1/m) variance.
    Var,
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        if shape.contains(&0) {
            return Err(Error::Usage(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim("Tensor::new", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    /// Rank-0 tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// Rank-2 tensor from a list of equally long rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != cols {
                return Err(Error::dim("Tensor::from_rows", &[cols], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(vec![n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        match self.data.as_slice() {
            [v] => Ok(*v),
            _ => Err(Error::Usage(format!(
                "item() on tensor of shape {:?}",
                self.shape
            ))),
        }
    }

    /// `(rows, cols)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(Error::Usage(format!(
                "expected a rank-2 tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn reshape(self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::dim("zip_map", &self.shape, &other.shape));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = self.dims2()?;
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = self.data[i * c + j];
            }
        }
        Ok(Tensor {
            shape: vec![c, r],
            data,
        })
    }

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.gemm(other, false, false, "matmul")
    }

    /// `self · otherᵀ`, without materializing the transpose.
    pub fn matmul_t(&self, other: &Tensor) -> Result<Tensor> {
        self.gemm(other, false, true, "matmul_t")
    }

    /// `selfᵀ · other`, without materializing the transpose.
    pub fn t_matmul(&self, other: &Tensor) -> Result<Tensor> {
        self.gemm(other, true, false, "t_matmul")
    }

    fn gemm(&self, other: &Tensor, ta: bool, tb: bool, op: &'static str) -> Result<Tensor> {
        let (ar, ac) = self
            .dims2()
            .map_err(|_| Error::dim(op, &self.shape, &other.shape))?;
        let (br, bc) = other
            .dims2()
            .map_err(|_| Error::dim(op, &self.shape, &other.shape))?;
        let (m, k, rsa, csa) = if ta { (ac, ar, 1, ac) } else { (ar, ac, ac, 1) };
        let (k2, n, rsb, csb) = if tb { (bc, br, 1, bc) } else { (br, bc, bc, 1) };
        if k != k2 {
            return Err(Error::dim(op, &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        // SAFETY: the pointers and strides describe the buffers exactly:
        // `self` is ar×ac, `other` is br×bc, and `out` is m×n, all row-major.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                self.data.as_ptr(),
                rsa as isize,
                csa as isize,
                other.data.as_ptr(),
                rsb as isize,
                csb as isize,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
        Ok(Tensor {
            shape: vec![m, n],
            data: out,
        })
    }

    /// Euclidean norm over every element, batch dimension included.
    pub fn l2_norm(&self) -> f64 {
        let sum_sq: f64 = self.data.iter().map(|v| v * v).sum();
        if sum_sq.is_finite() && sum_sq > f64::MIN_POSITIVE {
            return sum_sq.sqrt();
        }
        // Overflow or underflow of the plain sum: rescale by the largest magnitude.
        let max = self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if max == 0.0 || !max.is_finite() {
            return if max.is_nan() { f64::NAN } else { max };
        }
        let scaled: f64 = self.data.iter().map(|v| (v / max) * (v / max)).sum();
        max * scaled.sqrt()
    }

    /// Inner product of the flattened tensors.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::dim("dot", &self.shape, &other.shape));
        }
        Ok(self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum())
    }

    pub fn sum_all(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn elementwise(&self, op: ElementwiseOp, rhs: Operand<'_>) -> Result<Tensor> {
        match (op, rhs) {
            (ElementwiseOp::Scale, Operand::Scalar(c)) => Ok(self.scale(c)),
            (ElementwiseOp::Scale, Operand::Tensor(t)) => Err(Error::Usage(format!(
                "scale expects a scalar operand, got tensor of shape {:?}",
                t.shape
            ))),
            (op, Operand::Scalar(c)) => Ok(match op {
                ElementwiseOp::Add => self.map(|v| v + c),
                ElementwiseOp::Sub => self.map(|v| v - c),
                _ => self.map(|v| v * c),
            }),
            (op, Operand::Tensor(t)) => {
                if self.shape != t.shape && self.rank() == 2 && t.rank() == 1 {
                    return match op {
                        ElementwiseOp::Add => self.add_row(t),
                        ElementwiseOp::Sub => self.add_row(&t.scale(-1.0)),
                        _ => Err(Error::dim("elementwise", &self.shape, &t.shape)),
                    };
                }
                match op {
                    ElementwiseOp::Add => self.add(t),
                    ElementwiseOp::Sub => self.sub(t),
                    _ => self.mul(t),
                }
            }
        }
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a + b)
            .map_err(|_| Error::dim("add", &self.shape, &other.shape))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a - b)
            .map_err(|_| Error::dim("sub", &self.shape, &other.shape))
    }

    /// Hadamard product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, |a, b| a * b)
            .map_err(|_| Error::dim("mul", &self.shape, &other.shape))
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.map(|v| v * c)
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim("add_assign", &self.shape, &other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Adds a rank-1 `bias` to every row of a rank-2 tensor.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let (_, cols) = self
            .dims2()
            .map_err(|_| Error::dim("add_row", &self.shape, &bias.shape))?;
        if bias.shape != [cols] {
            return Err(Error::dim("add_row", &self.shape, &bias.shape));
        }
        let mut out = self.clone();
        for row in out.data.chunks_exact_mut(cols) {
            for (v, b) in row.iter_mut().zip(&bias.data) {
                *v += b;
            }
        }
        Ok(out)
    }

    /// Reduces along `axis`. With `keep_dim` the axis stays with extent 1.
    pub fn reduce(&self, op: Reduction, axis: usize, keep_dim: bool) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::Axis {
                axis,
                rank: self.rank(),
            });
        }
        let extent = self.shape[axis];
        let outer: usize = self.shape[..axis].iter().product();
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut sums = vec![0.0; outer * inner];
        for o in 0..outer {
            for a in 0..extent {
                let base = (o * extent + a) * inner;
                for i in 0..inner {
                    sums[o * inner + i] += self.data[base + i];
                }
            }
        }
        let m = extent as f64;
        let data = match op {
            Reduction::Sum => sums,
            Reduction::Mean => sums.into_iter().map(|s| s / m).collect(),
            Reduction::Var => {
                let means: Vec<f64> = sums.into_iter().map(|s| s / m).collect();
                let mut acc = vec![0.0; outer * inner];
                for o in 0..outer {
                    for a in 0..extent {
                        let base = (o * extent + a) * inner;
                        for i in 0..inner {
                            let d = self.data[base + i] - means[o * inner + i];
                            acc[o * inner + i] += d * d;
                        }
                    }
                }
                acc.into_iter().map(|s| s / m).collect()
            }
        };
        let mut shape = self.shape.clone();
        if keep_dim {
            shape[axis] = 1;
        } else {
            shape.remove(axis);
        }
        Ok(Tensor { shape, data })
    }

    /// Column sums of a rank-2 tensor (sum over the batch rows).
    pub fn sum_rows(&self) -> Result<Tensor> {
        self.dims2()?;
        self.reduce(Reduction::Sum, 0, false)
    }

    /// Gathers rows of a rank-2 tensor.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Tensor> {
        let (n, cols) = self.dims2()?;
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            if r >= n {
                return Err(Error::Usage(format!("row {r} out of range for {n} rows")));
            }
            data.extend_from_slice(&self.data[r * cols..(r + 1) * cols]);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn m(rows: &[&[f64]]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn matmul_examples() {
        let col = m(&[&[3.0], &[4.0]]);
        assert_eq!(Tensor::identity(2).matmul(&col).unwrap(), col);
        let a = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = m(&[&[5.0], &[6.0]]);
        assert_eq!(a.matmul(&b).unwrap(), m(&[&[17.0], &[39.0]]));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = Tensor::zeros(vec![2, 3])
            .matmul(&Tensor::zeros(vec![4, 2]))
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let a = m(&[&[1.0, -2.0, 0.5], &[3.0, 4.0, -1.0]]);
        let b = m(&[&[2.0, 1.0, 0.0], &[-1.0, 0.5, 3.0]]);
        assert_eq!(
            a.matmul_t(&b).unwrap(),
            a.matmul(&b.transpose().unwrap()).unwrap()
        );
        assert_eq!(
            a.t_matmul(&b).unwrap(),
            a.transpose().unwrap().matmul(&b).unwrap()
        );
    }

    #[test]
    fn l2_norm_examples() {
        assert_eq!(m(&[&[3.0, 4.0], &[0.0, 0.0]]).l2_norm(), 5.0);
        assert_eq!(Tensor::zeros(vec![3, 7, 2]).l2_norm(), 0.0);
        assert_eq!(m(&[&[1.0, 1.0], &[1.0, 1.0]]).l2_norm(), 2.0);
    }

    #[test]
    fn l2_norm_survives_overflow_and_underflow() {
        let big = Tensor::vector(vec![3e200, 4e200]).unwrap();
        assert!((big.l2_norm() / 5e200 - 1.0).abs() < 1e-15);
        let tiny = Tensor::vector(vec![3e-200, 4e-200]).unwrap();
        assert!((tiny.l2_norm() / 5e-200 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn elementwise_examples() {
        let a = Tensor::vector(vec![1.0, 2.0]).unwrap();
        let b = Tensor::vector(vec![3.0, 4.0]).unwrap();
        assert_eq!(
            a.elementwise(ElementwiseOp::Mul, Operand::Tensor(&b))
                .unwrap()
                .data(),
            &[3.0, 8.0]
        );
        let x = m(&[&[1.5, -2.0], &[0.25, 7.0]]);
        let z = Tensor::zeros(vec![2, 2]);
        assert_eq!(
            x.elementwise(ElementwiseOp::Add, Operand::Tensor(&z))
                .unwrap(),
            x
        );
        let s = Tensor::vector(vec![2.0, 4.0]).unwrap();
        assert_eq!(
            s.elementwise(ElementwiseOp::Scale, Operand::Scalar(0.5))
                .unwrap()
                .data(),
            &[1.0, 2.0]
        );
    }

    #[test]
    fn elementwise_bias_broadcast_is_the_only_broadcast() {
        let x = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let b = Tensor::vector(vec![10.0, 20.0]).unwrap();
        let y = x
            .elementwise(ElementwiseOp::Add, Operand::Tensor(&b))
            .unwrap();
        assert_eq!(y, m(&[&[11.0, 22.0], &[13.0, 24.0]]));
        assert!(x
            .elementwise(ElementwiseOp::Mul, Operand::Tensor(&b))
            .is_err());
        assert!(x.add(&Tensor::zeros(vec![2, 3])).is_err());
        assert!(x.add_row(&Tensor::zeros(vec![3])).is_err());
    }

    #[test]
    fn reduce_examples() {
        let mean = m(&[&[1.0, 3.0]])
            .reduce(Reduction::Mean, 1, false)
            .unwrap();
        assert_eq!(mean.data(), &[2.0]);
        let var = Tensor::vector(vec![1.0, 1.0, 1.0])
            .unwrap()
            .reduce(Reduction::Var, 0, false)
            .unwrap();
        assert_eq!(var.item().unwrap(), 0.0);
        let sum = Tensor::zeros(vec![4, 2])
            .reduce(Reduction::Sum, 0, true)
            .unwrap();
        assert_eq!(sum.shape(), &[1, 2]);
        assert_eq!(sum.data(), &[0.0, 0.0]);
    }

    #[test]
    fn reduce_var_is_biased() {
        let t = m(&[&[1.0], &[3.0]]);
        let v = t.reduce(Reduction::Var, 0, false).unwrap();
        assert_eq!(v.data(), &[1.0]);
    }

    #[test]
    fn reduce_axis_out_of_range() {
        let err = Tensor::zeros(vec![2, 2])
            .reduce(Reduction::Sum, 2, false)
            .unwrap_err();
        assert!(matches!(err, Error::Axis { axis: 2, rank: 2 }));
    }

    #[test]
    fn constructor_rejects_inconsistent_shape() {
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![0, 2], vec![]).is_err());
        assert_eq!(Tensor::scalar(2.5).item().unwrap(), 2.5);
    }

    fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
        proptest::collection::vec(-10.0..10.0f64, rows * cols)
            .prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
    }

    proptest! {
        #[test]
        fn l2_norm_is_absolutely_homogeneous(t in matrix(3, 5), c in -1e3..1e3f64) {
            let lhs = t.scale(c).l2_norm();
            let rhs = c.abs() * t.l2_norm();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(f64::MIN_POSITIVE));
        }

        #[test]
        fn matmul_is_associative(a in matrix(4, 4), b in matrix(4, 4), c in matrix(4, 4)) {
            let left = a.matmul(&b).unwrap().matmul(&c).unwrap();
            let right = a.matmul(&b.matmul(&c).unwrap()).unwrap();
            let scale = left.l2_norm().max(1e-300);
            prop_assert!(left.sub(&right).unwrap().l2_norm() <= 1e-9 * scale);
        }

        #[test]
        fn elementwise_commutes_with_transpose(a in matrix(3, 4), b in matrix(3, 4), c in -5.0..5.0f64) {
            let at = a.transpose().unwrap();
            let bt = b.transpose().unwrap();
            prop_assert_eq!(a.add(&b).unwrap().transpose().unwrap(), at.add(&bt).unwrap());
            prop_assert_eq!(a.sub(&b).unwrap().transpose().unwrap(), at.sub(&bt).unwrap());
            prop_assert_eq!(a.mul(&b).unwrap().transpose().unwrap(), at.mul(&bt).unwrap());
            prop_assert_eq!(a.scale(c).transpose().unwrap(), at.scale(c));
        }
    }
}
