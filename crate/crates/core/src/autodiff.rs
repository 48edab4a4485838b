//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Graph`] is a tape: every operation appends a node holding its value,
//! and [`Graph::backward`] walks the tape in reverse accumulating adjoints.
//! Spatial derivatives of the implicit networks are carried as explicit
//! forward tangents built from ordinary tape operations, so a single reverse
//! pass yields parameter gradients of losses that involve those derivatives.
//!
//! The tape is generic over [`Real`] so the same graph code runs in `f32` for
//! training and in `f64` for finite-difference validation.

use std::fmt::Debug;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Scalar type usable on the tape.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Send + Sync + std::iter::Sum + 'static
{
    /// `c = alpha * a * b + beta * c` with arbitrary strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m x k`, `k x n` and `m x n` views.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );

    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }
}

impl Real for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f32,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: f64,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Mat<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix data length");
        Mat { rows, cols, data }
    }

    pub fn filled(rows: usize, cols: usize, v: T) -> Self {
        Mat {
            rows,
            cols,
            data: vec![v; rows * cols],
        }
    }

    pub fn from_f32(rows: usize, cols: usize, src: &[f32]) -> Self {
        assert_eq!(rows * cols, src.len(), "matrix data length");
        Mat {
            rows,
            cols,
            data: src.iter().map(|&v| T::of(v as f64)).collect(),
        }
    }

    pub fn from_rows3(rows: &[[f64; 3]]) -> Self {
        Mat {
            rows: rows.len(),
            cols: 3,
            data: rows.iter().flatten().map(|&v| T::of(v)).collect(),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn scalar(&self) -> T {
        assert_eq!(self.data.len(), 1, "not a scalar");
        self.data[0]
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|v| v.to_f32().unwrap_or(f32::NAN)).collect()
    }

    fn map(&self, f: impl Fn(T) -> T) -> Mat<T> {
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip(&self, other: &Mat<T>, f: impl Fn(T, T) -> T) -> Mat<T> {
        debug_assert_eq!(self.shape(), other.shape());
        Mat {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    fn add_assign(&mut self, other: &Mat<T>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }
}

/// `a [n,k] * b[m,k]^T -> [n,m]`
pub fn matmul_t<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    assert_eq!(a.cols, b.cols, "matmul_t inner dimension");
    let (n, k, m) = (a.rows, a.cols, b.rows);
    let mut out = Mat::zeros(n, m);
    if n == 0 || m == 0 || k == 0 {
        return out;
    }
    unsafe {
        T::gemm(
            n,
            k,
            m,
            T::one(),
            a.data.as_ptr(),
            k as isize,
            1,
            b.data.as_ptr(),
            1,
            k as isize,
            T::zero(),
            out.data.as_mut_ptr(),
            m as isize,
            1,
        );
    }
    out
}

/// `a [n,k] * b[k,m] -> [n,m]`
pub fn matmul<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    assert_eq!(a.cols, b.rows, "matmul inner dimension");
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = Mat::zeros(n, m);
    if n == 0 || m == 0 || k == 0 {
        return out;
    }
    unsafe {
        T::gemm(
            n,
            k,
            m,
            T::one(),
            a.data.as_ptr(),
            k as isize,
            1,
            b.data.as_ptr(),
            m as isize,
            1,
            T::zero(),
            out.data.as_mut_ptr(),
            m as isize,
            1,
        );
    }
    out
}

/// `a[n,k]^T * b[n,m] -> [k,m]`
pub fn matmul_tn<T: Real>(a: &Mat<T>, b: &Mat<T>) -> Mat<T> {
    assert_eq!(a.rows, b.rows, "matmul_tn outer dimension");
    let (n, k, m) = (a.rows, a.cols, b.cols);
    let mut out = Mat::zeros(k, m);
    if n == 0 || m == 0 || k == 0 {
        return out;
    }
    unsafe {
        T::gemm(
            k,
            n,
            m,
            T::one(),
            a.data.as_ptr(),
            1,
            k as isize,
            b.data.as_ptr(),
            m as isize,
            1,
            T::zero(),
            out.data.as_mut_ptr(),
            m as isize,
            1,
        );
    }
    out
}

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMulT(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sin(Var),
    Cos(Var),
    Relu(Var),
    Abs(Var),
    Clamp(Var, f64),
    Square(Var),
    Sqrt(Var),
    Sum(Var),
    RowSum(Var),
    RowNorm(Var),
    NormalizeRows(Var),
    Reshape(Var),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    MaxRows(Var, Vec<usize>),
    GatherRows(Var, Vec<usize>),
    BroadcastRows(Var),
}

struct Node<T> {
    value: Mat<T>,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Mat<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Adjoint of `v`, or `None` when `v` does not influence the root.
    pub fn get(&self, v: Var) -> Option<&Mat<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Mat<T>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Computation tape.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat<T>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Differentiable leaf.
    pub fn variable(&mut self, value: Mat<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Mat<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Mat<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    /// `a [n,k] * b[m,k]^T`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = matmul_t(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMulT(a, b), rg)
    }

    /// Adds a `[1,c]` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let av = self.value(a);
        let rv = self.value(row);
        assert_eq!(rv.rows, 1, "add_row expects a single row");
        assert_eq!(av.cols, rv.cols, "add_row width");
        let mut out = av.clone();
        for r in out.data.chunks_mut(rv.cols) {
            for (x, &b) in r.iter_mut().zip(&rv.data) {
                *x = *x + b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(out, Op::AddRow(a, row), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add shapes");
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub shapes");
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul shapes");
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let k = T::of(c);
        let v = self.value(a).map(|x| x * k);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn sin(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.sin());
        let rg = self.rg(a);
        self.push(v, Op::Sin(a), rg)
    }

    pub fn cos(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.cos());
        let rg = self.rg(a);
        self.push(v, Op::Cos(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > T::zero() { x } else { T::zero() });
        let rg = self.rg(a);
        self.push(v, Op::Relu(a), rg)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.abs());
        let rg = self.rg(a);
        self.push(v, Op::Abs(a), rg)
    }

    /// Elementwise `min(delta, max(-delta, x))`.
    pub fn clamp(&mut self, a: Var, delta: f64) -> Var {
        let d = T::of(delta);
        let v = self.value(a).map(|x| x.max(-d).min(d));
        let rg = self.rg(a);
        self.push(v, Op::Clamp(a, delta), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(v, Op::Square(a), rg)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.sqrt());
        let rg = self.rg(a);
        self.push(v, Op::Sqrt(a), rg)
    }

    /// Sum of all entries, `[1,1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data.iter().copied().sum();
        let rg = self.rg(a);
        self.push(Mat::from_vec(1, 1, vec![s]), Op::Sum(a), rg)
    }

    /// Mean of all entries, `[1,1]`.
    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).data.len().max(1);
        let s = self.sum(a);
        self.scale(s, 1.0 / n as f64)
    }

    /// Per-row sum, `[n,1]`.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av
            .data
            .chunks(av.cols.max(1))
            .map(|r| r.iter().copied().sum())
            .collect();
        let out = Mat::from_vec(av.rows, 1, data);
        let rg = self.rg(a);
        self.push(out, Op::RowSum(a), rg)
    }

    /// Per-row Euclidean norm, `[n,1]`.
    pub fn row_norm(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let data = av
            .data
            .chunks(av.cols.max(1))
            .map(|r| r.iter().map(|&x| x * x).sum::<T>().sqrt())
            .collect();
        let out = Mat::from_vec(av.rows, 1, data);
        let rg = self.rg(a);
        self.push(out, Op::RowNorm(a), rg)
    }

    /// Each row divided by its Euclidean norm; zero rows stay zero.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = av.clone();
        for r in out.data.chunks_mut(av.cols.max(1)) {
            let n = r.iter().map(|&x| x * x).sum::<T>().sqrt();
            if n > T::zero() {
                r.iter_mut().for_each(|x| *x = *x / n);
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::NormalizeRows(a), rg)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.data.len(), rows * cols, "reshape size");
        let out = Mat::from_vec(rows, cols, av.data.clone());
        let rg = self.rg(a);
        self.push(out, Op::Reshape(a), rg)
    }

    /// Columns `start..start + width`.
    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let av = self.value(a);
        assert!(start + width <= av.cols, "slice_cols out of range");
        let mut data = Vec::with_capacity(av.rows * width);
        for r in 0..av.rows {
            data.extend_from_slice(&av.row(r)[start..start + width]);
        }
        let out = Mat::from_vec(av.rows, width, data);
        let rg = self.rg(a);
        self.push(out, Op::SliceCols(a, start), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows, rows, "concat_cols row count");
                data.extend_from_slice(pv.row(r));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Mat::from_vec(rows, cols, data),
            Op::ConcatCols(parts.to_vec()),
            rg,
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols, cols, "concat_rows column count");
            data.extend_from_slice(&pv.data);
            rows += pv.rows;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(
            Mat::from_vec(rows, cols, data),
            Op::ConcatRows(parts.to_vec()),
            rg,
        )
    }

    /// Column-wise maximum over rows, `[1,c]`. Ties resolve to the first row.
    pub fn max_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        assert!(av.rows > 0, "max over zero rows");
        let mut best = av.row(0).to_vec();
        let mut arg = vec![0usize; av.cols];
        for r in 1..av.rows {
            for (c, &x) in av.row(r).iter().enumerate() {
                if x > best[c] {
                    best[c] = x;
                    arg[c] = r;
                }
            }
        }
        let out = Mat::from_vec(1, av.cols, best);
        let rg = self.rg(a);
        self.push(out, Op::MaxRows(a, arg), rg)
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let av = self.value(a);
        let mut data = Vec::with_capacity(idx.len() * av.cols);
        for &i in idx {
            data.extend_from_slice(av.row(i));
        }
        let out = Mat::from_vec(idx.len(), av.cols, data);
        let rg = self.rg(a);
        self.push(out, Op::GatherRows(a, idx.to_vec()), rg)
    }

    /// Repeats a `[1,c]` row `n` times.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows, 1, "broadcast_rows expects a single row");
        let mut data = Vec::with_capacity(n * av.cols);
        for _ in 0..n {
            data.extend_from_slice(&av.data);
        }
        let out = Mat::from_vec(n, av.cols, data);
        let rg = self.rg(a);
        self.push(out, Op::BroadcastRows(a), rg)
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        let mut grads: Vec<Option<Mat<T>>> = (0..=root.0).map(|_| None).collect();
        let rv = self.value(root);
        assert_eq!(rv.data.len(), 1, "backward root must be scalar");
        grads[root.0] = Some(Mat::filled(1, 1, T::one()));

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node<T>, g: &Mat<T>, grads: &mut [Option<Mat<T>>]) {
        let acc = |grads: &mut [Option<Mat<T>>], v: Var, d: Mat<T>| match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&d),
            slot @ None => *slot = Some(d),
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMulT(a, b) => {
                if self.rg(*a) {
                    acc(grads, *a, matmul(g, self.value(*b)));
                }
                if self.rg(*b) {
                    acc(grads, *b, matmul_tn(g, self.value(*a)));
                }
            }
            Op::AddRow(a, row) => {
                if self.rg(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.rg(*row) {
                    let mut r = Mat::zeros(1, g.cols);
                    for chunk in g.data.chunks(g.cols) {
                        for (s, &x) in r.data.iter_mut().zip(chunk) {
                            *s = *s + x;
                        }
                    }
                    acc(grads, *row, r);
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    acc(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    acc(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(grads, *a, g.zip(self.value(*b), |x, y| x * y));
                }
                if self.rg(*b) {
                    acc(grads, *b, g.zip(self.value(*a), |x, y| x * y));
                }
            }
            Op::Scale(a, c) => {
                let k = T::of(*c);
                acc(grads, *a, g.map(|x| x * k));
            }
            Op::Sin(a) => {
                acc(grads, *a, g.zip(self.value(*a), |x, y| x * y.cos()));
            }
            Op::Cos(a) => {
                acc(grads, *a, g.zip(self.value(*a), |x, y| -x * y.sin()));
            }
            Op::Relu(a) => {
                acc(
                    grads,
                    *a,
                    g.zip(self.value(*a), |x, y| if y > T::zero() { x } else { T::zero() }),
                );
            }
            Op::Abs(a) => {
                acc(
                    grads,
                    *a,
                    g.zip(self.value(*a), |x, y| {
                        if y > T::zero() {
                            x
                        } else if y < T::zero() {
                            -x
                        } else {
                            T::zero()
                        }
                    }),
                );
            }
            Op::Clamp(a, delta) => {
                let d = T::of(*delta);
                acc(
                    grads,
                    *a,
                    g.zip(self.value(*a), |x, y| if y.abs() < d { x } else { T::zero() }),
                );
            }
            Op::Square(a) => {
                let two = T::of(2.0);
                acc(grads, *a, g.zip(self.value(*a), |x, y| two * x * y));
            }
            Op::Sqrt(a) => {
                let half = T::of(0.5);
                acc(
                    grads,
                    *a,
                    g.zip(&node.value, |x, s| if s > T::zero() { half * x / s } else { T::zero() }),
                );
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                acc(grads, *a, Mat::filled(av.rows, av.cols, g.data[0]));
            }
            Op::RowSum(a) => {
                let av = self.value(*a);
                let mut d = Mat::zeros(av.rows, av.cols);
                for (r, chunk) in d.data.chunks_mut(av.cols.max(1)).enumerate() {
                    chunk.fill(g.data[r]);
                }
                acc(grads, *a, d);
            }
            Op::RowNorm(a) => {
                let av = self.value(*a);
                let mut d = Mat::zeros(av.rows, av.cols);
                for r in 0..av.rows {
                    let n = node.value.data[r];
                    if n > T::zero() {
                        let k = g.data[r] / n;
                        for c in 0..av.cols {
                            d.data[r * av.cols + c] = k * av.at(r, c);
                        }
                    }
                }
                acc(grads, *a, d);
            }
            Op::NormalizeRows(a) => {
                // d(x/|x|) = (g - y (y . g)) / |x|
                let av = self.value(*a);
                let y = &node.value;
                let mut d = Mat::zeros(av.rows, av.cols);
                for r in 0..av.rows {
                    let n = av.row(r).iter().map(|&x| x * x).sum::<T>().sqrt();
                    if n > T::zero() {
                        let yr = y.row(r);
                        let gr = g.row(r);
                        let dot: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
                        for c in 0..av.cols {
                            d.data[r * av.cols + c] = (gr[c] - yr[c] * dot) / n;
                        }
                    }
                }
                acc(grads, *a, d);
            }
            Op::Reshape(a) => {
                let av = self.value(*a);
                acc(grads, *a, Mat::from_vec(av.rows, av.cols, g.data.clone()));
            }
            Op::SliceCols(a, start) => {
                let av = self.value(*a);
                let mut d = Mat::zeros(av.rows, av.cols);
                for r in 0..av.rows {
                    let dst = &mut d.data[r * av.cols + start..r * av.cols + start + g.cols];
                    dst.copy_from_slice(g.row(r));
                }
                acc(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    if self.rg(p) {
                        let mut d = Mat::zeros(pv.rows, pv.cols);
                        for r in 0..pv.rows {
                            d.data[r * pv.cols..(r + 1) * pv.cols]
                                .copy_from_slice(&g.row(r)[offset..offset + pv.cols]);
                        }
                        acc(grads, p, d);
                    }
                    offset += pv.cols;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = self.value(p);
                    let len = pv.data.len();
                    if self.rg(p) {
                        let d =
                            Mat::from_vec(pv.rows, pv.cols, g.data[offset..offset + len].to_vec());
                        acc(grads, p, d);
                    }
                    offset += len;
                }
            }
            Op::MaxRows(a, arg) => {
                let av = self.value(*a);
                let mut d = Mat::zeros(av.rows, av.cols);
                for (c, &r) in arg.iter().enumerate() {
                    d.data[r * av.cols + c] = g.data[c];
                }
                acc(grads, *a, d);
            }
            Op::GatherRows(a, idx) => {
                let av = self.value(*a);
                let mut d = Mat::zeros(av.rows, av.cols);
                for (k, &i) in idx.iter().enumerate() {
                    for c in 0..av.cols {
                        let slot = &mut d.data[i * av.cols + c];
                        *slot = *slot + g.data[k * av.cols + c];
                    }
                }
                acc(grads, *a, d);
            }
            Op::BroadcastRows(a) => {
                let mut d = Mat::zeros(1, g.cols);
                for chunk in g.data.chunks(g.cols) {
                    for (s, &x) in d.data.iter_mut().zip(chunk) {
                        *s = *s + x;
                    }
                }
                acc(grads, *a, d);
            }
        }
    }
}
