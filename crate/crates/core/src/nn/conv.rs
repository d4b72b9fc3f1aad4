//! Convolution kernels as candle custom ops: explicit patch matrices
//! multiplied with `ndarray`, with hand-written backward passes.

use candle_core::backend::BackendStorage;
use candle_core::{CpuStorage, CustomOp2, Layout, Shape, Tensor, WithDType};
use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2, LinalgScalar};

use crate::error::Result;

/// Geometry of a square-kernel convolution from `(c, h, w)` to `(o, ho, wo)`.
#[derive(Clone, Copy, Debug)]
struct Geom {
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn new(c: usize, h: usize, w: usize, o: usize, k: usize, stride: usize, pad: usize) -> candle_core::Result<Self> {
        if h + 2 * pad < k || w + 2 * pad < k {
            candle_core::bail!("conv: kernel {k} larger than padded input {h}x{w}");
        }
        Ok(Self {
            c,
            h,
            w,
            o,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.c * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    // Calls `f(dst, src, len)` for every run of `len` consecutive output
    // pixels of one patch-matrix row that read inside the image; `dst` indexes
    // the patch matrix and `src` the image. Runs are contiguous in the image
    // only for stride 1; otherwise `len` is 1.
    fn for_each_run(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (k, s, p) = (self.k, self.stride, self.pad);
        for ci in 0..self.c {
            for kh in 0..k {
                for kw in 0..k {
                    let row = (ci * k + kh) * k + kw;
                    // output columns whose input column lies in [0, w)
                    let ox0 = p.saturating_sub(kw).div_ceil(s);
                    let ox1 = ((self.w + p).saturating_sub(kw)).div_ceil(s).min(self.wo);
                    if ox0 >= ox1 {
                        continue;
                    }
                    for oy in 0..self.ho {
                        let iy = (oy * s + kh) as isize - p as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = row * self.cols() + oy * self.wo;
                        let src = ((ci * self.h + iy as usize) * self.w + kw).wrapping_sub(p);
                        if s == 1 {
                            f(dst + ox0, src.wrapping_add(ox0), ox1 - ox0);
                        } else {
                            for ox in ox0..ox1 {
                                f(dst + ox, src.wrapping_add(ox * s), 1);
                            }
                        }
                    }
                }
            }
        }
    }
}

fn im2col<T: LinalgScalar>(x: &[T], g: &Geom, cols: &mut [T]) {
    cols.fill(T::zero());
    g.for_each_run(|d, s, n| cols[d..d + n].copy_from_slice(&x[s..s + n]));
}

fn col2im<T: LinalgScalar>(cols: &[T], g: &Geom, x: &mut [T]) {
    g.for_each_run(|d, s, n| {
        for (xi, &c) in x[s..s + n].iter_mut().zip(&cols[d..d + n]) {
            *xi = *xi + c;
        }
    });
}

// Unrolled dot product; eight partial sums let the compiler vectorize.
fn dot<T: LinalgScalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: T = ca.remainder().iter().zip(cb.remainder()).fold(T::zero(), |s, (&x, &y)| s + x * y);
    for (x, y) in ca.zip(cb) {
        let (x, y): (&[T; 8], &[T; 8]) = (x.try_into().expect("chunk"), y.try_into().expect("chunk"));
        for i in 0..8 {
            acc[i] = acc[i] + x[i] * y[i];
        }
    }
    acc.iter().fold(tail, |s, &v| s + v)
}

fn view<T>(s: &[T], r: usize, c: usize) -> ArrayView2<'_, T> {
    ArrayView2::from_shape((r, c), s).expect("matrix shape")
}

fn view_mut<T>(s: &mut [T], r: usize, c: usize) -> ArrayViewMut2<'_, T> {
    ArrayViewMut2::from_shape((r, c), s).expect("matrix shape")
}

/// `y[n] = W · cols(x[n])`.
fn forward<T: LinalgScalar>(x: &[T], w: &[T], n: usize, g: &Geom) -> Vec<T> {
    let (rows, cols) = (g.rows(), g.cols());
    let mut buf = vec![T::zero(); rows * cols];
    let mut y = vec![T::zero(); n * g.o * cols];
    let wm = view(w, g.o, rows);
    for b in 0..n {
        im2col(&x[b * g.c * g.h * g.w..][..g.c * g.h * g.w], g, &mut buf);
        let out = &mut y[b * g.o * cols..][..g.o * cols];
        general_mat_mul(T::one(), &wm, &view(&buf, rows, cols), T::zero(), &mut view_mut(out, g.o, cols));
    }
    y
}

/// Gradient with respect to the input: `col2im(W^T · dy[n])`.
fn backward_input<T: LinalgScalar>(dy: &[T], w: &[T], n: usize, g: &Geom) -> Vec<T> {
    let (rows, cols) = (g.rows(), g.cols());
    let mut buf = vec![T::zero(); rows * cols];
    let mut dx = vec![T::zero(); n * g.c * g.h * g.w];
    let wt = view(w, g.o, rows).reversed_axes();
    for b in 0..n {
        let dyb = view(&dy[b * g.o * cols..][..g.o * cols], g.o, cols);
        general_mat_mul(T::one(), &wt, &dyb, T::zero(), &mut view_mut(&mut buf, rows, cols));
        col2im(&buf, g, &mut dx[b * g.c * g.h * g.w..][..g.c * g.h * g.w]);
    }
    dx
}

/// Gradient with respect to the weight: `sum_n dy[n] · cols(x[n])^T`.
fn backward_weight<T: LinalgScalar>(x: &[T], dy: &[T], n: usize, g: &Geom) -> Vec<T> {
    let (rows, cols) = (g.rows(), g.cols());
    let mut buf = vec![T::zero(); rows * cols];
    let mut dw = vec![T::zero(); g.o * rows];
    for b in 0..n {
        im2col(&x[b * g.c * g.h * g.w..][..g.c * g.h * g.w], g, &mut buf);
        let dyb = &dy[b * g.o * cols..][..g.o * cols];
        for (r, cr) in buf.chunks_exact(cols).enumerate() {
            for (o, dyo) in dyb.chunks_exact(cols).enumerate() {
                let d = &mut dw[o * rows + r];
                *d = *d + dot(dyo, cr);
            }
        }
    }
    dw
}

fn slice<'a, T: WithDType>(s: &'a CpuStorage, l: &Layout) -> candle_core::Result<&'a [T]> {
    let (start, end) = l
        .contiguous_offsets()
        .ok_or_else(|| candle_core::Error::Msg("conv: operand is not contiguous".into()))?;
    Ok(&s.as_slice::<T>()?[start..end])
}

fn to_vec<T: WithDType>(t: &Tensor) -> candle_core::Result<Vec<T>> {
    t.flatten_all()?.to_vec1::<T>()
}

// Applies `f` at the tensors' float type.
macro_rules! dispatch {
    ($dtype:expr, $f:ident ( $($arg:expr),* )) => {
        match $dtype {
            candle_core::DType::F32 => $f::<f32>($($arg),*),
            candle_core::DType::F64 => $f::<f64>($($arg),*),
            d => candle_core::bail!("conv: unsupported dtype {d:?}"),
        }
    };
}

struct Conv {
    stride: usize,
    pad: usize,
}

fn conv_geom(xd: &[usize], wd: &[usize], stride: usize, pad: usize) -> candle_core::Result<(usize, Geom)> {
    if xd.len() != 4 || wd.len() != 4 || xd[1] != wd[1] || wd[2] != wd[3] {
        candle_core::bail!("conv: incompatible shapes {xd:?} and {wd:?}");
    }
    Ok((xd[0], Geom::new(xd[1], xd[2], xd[3], wd[0], wd[2], stride, pad)?))
}

impl CustomOp2 for Conv {
    fn name(&self) -> &'static str {
        "patch-conv2d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (n, g) = conv_geom(l1.dims(), l2.dims(), self.stride, self.pad)?;
        let shape = Shape::from((n, g.o, g.ho, g.wo));
        fn run<T: WithDType + LinalgScalar>(
            s1: &CpuStorage,
            l1: &Layout,
            s2: &CpuStorage,
            l2: &Layout,
            n: usize,
            g: &Geom,
        ) -> candle_core::Result<CpuStorage> {
            Ok(T::to_cpu_storage_owned(forward(slice::<T>(s1, l1)?, slice::<T>(s2, l2)?, n, g)))
        }
        Ok((dispatch!(s1.dtype(), run(s1, l1, s2, l2, n, &g))?, shape))
    }

    fn bwd(&self, x: &Tensor, w: &Tensor, _y: &Tensor, dy: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let (n, g) = conv_geom(x.dims(), w.dims(), self.stride, self.pad)?;
        fn run<T: WithDType + LinalgScalar>(x: &Tensor, w: &Tensor, dy: &Tensor, n: usize, g: &Geom) -> candle_core::Result<(Tensor, Tensor)> {
            let (xv, wv, dyv) = (to_vec::<T>(x)?, to_vec::<T>(w)?, to_vec::<T>(dy)?);
            let dx = Tensor::from_vec(backward_input(&dyv, &wv, n, g), x.shape(), x.device())?;
            let dw = Tensor::from_vec(backward_weight(&xv, &dyv, n, g), w.shape(), w.device())?;
            Ok((dx, dw))
        }
        let (dx, dw) = dispatch!(x.dtype(), run(x, w, dy, n, &g))?;
        Ok((Some(dx), Some(dw)))
    }
}

/// Transposed 3x3 convolution, stride 2, padding 1, output padding 1: the
/// input-gradient of the stride-2 convolution from the doubled size.
struct ConvT;

fn convt_geom(xd: &[usize], wd: &[usize]) -> candle_core::Result<(usize, Geom)> {
    if xd.len() != 4 || wd.len() != 4 || xd[1] != wd[0] || wd[2] != 3 || wd[3] != 3 {
        candle_core::bail!("conv-transpose: incompatible shapes {xd:?} and {wd:?}");
    }
    let g = Geom::new(wd[1], 2 * xd[2], 2 * xd[3], wd[0], 3, 2, 1)?;
    debug_assert_eq!((g.ho, g.wo), (xd[2], xd[3]));
    Ok((xd[0], g))
}

impl CustomOp2 for ConvT {
    fn name(&self) -> &'static str {
        "patch-conv-transpose2d"
    }

    fn cpu_fwd(&self, s1: &CpuStorage, l1: &Layout, s2: &CpuStorage, l2: &Layout) -> candle_core::Result<(CpuStorage, Shape)> {
        let (n, g) = convt_geom(l1.dims(), l2.dims())?;
        let shape = Shape::from((n, g.c, g.h, g.w));
        fn run<T: WithDType + LinalgScalar>(
            s1: &CpuStorage,
            l1: &Layout,
            s2: &CpuStorage,
            l2: &Layout,
            n: usize,
            g: &Geom,
        ) -> candle_core::Result<CpuStorage> {
            Ok(T::to_cpu_storage_owned(backward_input(slice::<T>(s1, l1)?, slice::<T>(s2, l2)?, n, g)))
        }
        Ok((dispatch!(s1.dtype(), run(s1, l1, s2, l2, n, &g))?, shape))
    }

    fn bwd(&self, x: &Tensor, w: &Tensor, _y: &Tensor, dy: &Tensor) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let (n, g) = convt_geom(x.dims(), w.dims())?;
        fn run<T: WithDType + LinalgScalar>(x: &Tensor, w: &Tensor, dy: &Tensor, n: usize, g: &Geom) -> candle_core::Result<(Tensor, Tensor)> {
            let (xv, wv, dyv) = (to_vec::<T>(x)?, to_vec::<T>(w)?, to_vec::<T>(dy)?);
            let dx = Tensor::from_vec(forward(&dyv, &wv, n, g), x.shape(), x.device())?;
            let dw = Tensor::from_vec(backward_weight(&dyv, &xv, n, g), w.shape(), w.device())?;
            Ok((dx, dw))
        }
        let (dx, dw) = dispatch!(x.dtype(), run(x, w, dy, n, &g))?;
        Ok((Some(dx), Some(dw)))
    }
}

/// 2-D convolution of `x (N, C, H, W)` with `w (O, C, K, K)`, no bias.
pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op2(&w.contiguous()?, Conv { stride, pad })?)
}

/// Transposed 3x3 convolution with stride 2, padding 1 and output padding 1
/// (`w` is `(in, out, 3, 3)`); exactly doubles the spatial size.
pub fn conv_transpose2d_x2(x: &Tensor, w: &Tensor) -> Result<Tensor> {
    Ok(x.contiguous()?.apply_op2(&w.contiguous()?, ConvT)?)
}

