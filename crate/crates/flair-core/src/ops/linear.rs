//! Linear measurement operators with exact adjoints.
//!
//! Three operator families plus the identity:
//! - `Downsample`: non-overlapping block average by an integer factor; the
//!   adjoint replicates each measurement scaled by 1/factor (1/factor^2 on
//!   rasters).
//! - `Blur`: circular convolution with an odd-length kernel; the adjoint
//!   convolves with the reversed kernel. On rasters the kernel is applied
//!   separably along rows and columns.
//! - `Mask`: gathers a fixed set of kept indices; the adjoint scatters with
//!   zeros elsewhere.
//!
//! 2D signals are stored row-major with a recorded (height, width).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, CoreError, Result};

/// Geometry of a signal vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignalShape {
    Flat(usize),
    Raster { height: usize, width: usize },
}

impl SignalShape {
    pub fn len(&self) -> usize {
        match *self {
            SignalShape::Flat(n) => n,
            SignalShape::Raster { height, width } => height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The supported measurement families.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorKind {
    Identity,
    Downsample { factor: usize },
    Blur { kernel: Vec<f64> },
    Mask { keep: Vec<usize> },
}

/// A linear measurement map with an exact adjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOperator {
    kind: OperatorKind,
    shape: SignalShape,
}

impl LinearOperator {
    pub fn identity(shape: SignalShape) -> Result<Self> {
        Self::new(OperatorKind::Identity, shape)
    }

    pub fn downsample(shape: SignalShape, factor: usize) -> Result<Self> {
        Self::new(OperatorKind::Downsample { factor }, shape)
    }

    pub fn blur(shape: SignalShape, kernel: Vec<f64>) -> Result<Self> {
        Self::new(OperatorKind::Blur { kernel }, shape)
    }

    pub fn mask(shape: SignalShape, keep: Vec<usize>) -> Result<Self> {
        Self::new(OperatorKind::Mask { keep }, shape)
    }

    pub fn new(kind: OperatorKind, shape: SignalShape) -> Result<Self> {
        if shape.is_empty() {
            return Err(CoreError::invalid("shape", "signal must be nonempty"));
        }
        match &kind {
            OperatorKind::Identity => {}
            OperatorKind::Downsample { factor } => {
                if *factor == 0 {
                    return Err(CoreError::invalid("factor", "must be >= 1"));
                }
                match shape {
                    SignalShape::Flat(n) => {
                        if n % factor != 0 {
                            return Err(CoreError::invalid(
                                "factor",
                                format!("must divide signal length {n}"),
                            ));
                        }
                    }
                    SignalShape::Raster { height, width } => {
                        if height % factor != 0 || width % factor != 0 {
                            return Err(CoreError::invalid(
                                "factor",
                                format!("must divide both raster sides {height}x{width}"),
                            ));
                        }
                    }
                }
            }
            OperatorKind::Blur { kernel } => {
                if kernel.is_empty() || kernel.len() % 2 == 0 {
                    return Err(CoreError::invalid("kernel", "length must be odd"));
                }
                if kernel.len() > shape.min_side() {
                    return Err(CoreError::invalid(
                        "kernel",
                        "longer than the signal it convolves",
                    ));
                }
                if kernel.iter().any(|k| !k.is_finite()) {
                    return Err(CoreError::NonFinite { context: "blur kernel" });
                }
            }
            OperatorKind::Mask { keep } => {
                let n = shape.len();
                if keep.iter().any(|&i| i >= n) {
                    return Err(CoreError::invalid("keep", "index out of range"));
                }
                if !keep.windows(2).all(|w| w[0] < w[1]) {
                    return Err(CoreError::invalid(
                        "keep",
                        "indices must be strictly increasing",
                    ));
                }
            }
        }
        Ok(Self { kind, shape })
    }

    pub fn kind(&self) -> &OperatorKind {
        &self.kind
    }

    pub fn shape(&self) -> SignalShape {
        self.shape
    }

    /// Dimension of the signal space (n).
    pub fn input_dim(&self) -> usize {
        self.shape.len()
    }

    /// Dimension of the measurement space (m).
    pub fn output_dim(&self) -> usize {
        match &self.kind {
            OperatorKind::Identity | OperatorKind::Blur { .. } => self.shape.len(),
            OperatorKind::Downsample { factor } => match self.shape {
                SignalShape::Flat(n) => n / factor,
                SignalShape::Raster { height, width } => (height / factor) * (width / factor),
            },
            OperatorKind::Mask { keep } => keep.len(),
        }
    }

    /// Applies the forward map.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(x, self.input_dim())?;
        Ok(match &self.kind {
            OperatorKind::Identity => x.to_vec(),
            OperatorKind::Downsample { factor } => match self.shape {
                SignalShape::Flat(_) => downsample_1d(x, *factor),
                SignalShape::Raster { height, width } => {
                    downsample_2d(x, height, width, *factor)
                }
            },
            OperatorKind::Blur { kernel } => match self.shape {
                SignalShape::Flat(_) => convolve_circular(x, kernel),
                SignalShape::Raster { height, width } => {
                    convolve_separable(x, height, width, kernel)
                }
            },
            OperatorKind::Mask { keep } => keep.iter().map(|&i| x[i]).collect(),
        })
    }

    /// Applies the exact adjoint of [`LinearOperator::apply`].
    pub fn adjoint(&self, y: &[f64]) -> Result<Vec<f64>> {
        check_dim(y, self.output_dim())?;
        Ok(match &self.kind {
            OperatorKind::Identity => y.to_vec(),
            OperatorKind::Downsample { factor } => match self.shape {
                SignalShape::Flat(n) => upsample_adjoint_1d(y, n, *factor),
                SignalShape::Raster { height, width } => {
                    upsample_adjoint_2d(y, height, width, *factor)
                }
            },
            OperatorKind::Blur { kernel } => {
                let reversed: Vec<f64> = kernel.iter().rev().cloned().collect();
                match self.shape {
                    SignalShape::Flat(_) => convolve_circular(y, &reversed),
                    SignalShape::Raster { height, width } => {
                        convolve_separable(y, height, width, &reversed)
                    }
                }
            }
            OperatorKind::Mask { keep } => {
                let mut out = vec![0.0; self.shape.len()];
                for (&i, &v) in keep.iter().zip(y) {
                    out[i] = v;
                }
                out
            }
        })
    }
}

impl SignalShape {
    /// Shortest axis a separable kernel must fit along.
    fn min_side(&self) -> usize {
        match *self {
            SignalShape::Flat(n) => n,
            SignalShape::Raster { height, width } => height.min(width),
        }
    }
}

fn downsample_1d(x: &[f64], factor: usize) -> Vec<f64> {
    x.chunks_exact(factor)
        .map(|c| c.iter().sum::<f64>() / factor as f64)
        .collect()
}

fn upsample_adjoint_1d(y: &[f64], n: usize, factor: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (j, &v) in y.iter().enumerate() {
        let scaled = v / factor as f64;
        for o in &mut out[j * factor..(j + 1) * factor] {
            *o = scaled;
        }
    }
    out
}

fn downsample_2d(x: &[f64], height: usize, width: usize, factor: usize) -> Vec<f64> {
    let (oh, ow) = (height / factor, width / factor);
    let norm = (factor * factor) as f64;
    let mut out = vec![0.0; oh * ow];
    for bi in 0..oh {
        for bj in 0..ow {
            let mut acc = 0.0;
            for di in 0..factor {
                let row = (bi * factor + di) * width + bj * factor;
                acc += x[row..row + factor].iter().sum::<f64>();
            }
            out[bi * ow + bj] = acc / norm;
        }
    }
    out
}

fn upsample_adjoint_2d(y: &[f64], height: usize, width: usize, factor: usize) -> Vec<f64> {
    let ow = width / factor;
    let norm = (factor * factor) as f64;
    let mut out = vec![0.0; height * width];
    for (idx, &v) in y.iter().enumerate() {
        let (bi, bj) = (idx / ow, idx % ow);
        let scaled = v / norm;
        for di in 0..factor {
            let row = (bi * factor + di) * width + bj * factor;
            for o in &mut out[row..row + factor] {
                *o = scaled;
            }
        }
    }
    out
}

/// Circular correlation-style convolution: `y_i = sum_j k_j x_{(i+j-c) mod n}`
/// with `c` the kernel center.
fn convolve_circular(x: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = x.len();
    let c = kernel.len() / 2;
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, &k) in kernel.iter().enumerate() {
            acc += k * x[(i + j + n - c) % n];
        }
        *o = acc;
    }
    out
}

/// Separable raster convolution: rows first, then columns.
fn convolve_separable(x: &[f64], height: usize, width: usize, kernel: &[f64]) -> Vec<f64> {
    let mut rows = vec![0.0; x.len()];
    for r in 0..height {
        let seg = convolve_circular(&x[r * width..(r + 1) * width], kernel);
        rows[r * width..(r + 1) * width].copy_from_slice(&seg);
    }
    let mut out = vec![0.0; x.len()];
    let mut col = vec![0.0; height];
    for ccol in 0..width {
        for r in 0..height {
            col[r] = rows[r * width + ccol];
        }
        let seg = convolve_circular(&col, kernel);
        for r in 0..height {
            out[r * width + ccol] = seg[r];
        }
    }
    out
}

/// A measurement: `y = A x_true + sigma_nu * N(0, I)`, with the operator and
/// the seed that produced the noise.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: Vec<f64>,
    pub sigma_nu: f64,
    pub op: LinearOperator,
    pub seed: u64,
}

/// Applies the operator and adds seeded Gaussian noise.
pub fn observe(
    op: &LinearOperator,
    x_true: &[f64],
    sigma_nu: f64,
    seed: u64,
) -> Result<Observation> {
    if sigma_nu < 0.0 || !sigma_nu.is_finite() {
        return Err(CoreError::invalid("sigma_nu", "must be finite and >= 0"));
    }
    let mut y = op.apply(x_true)?;
    if sigma_nu > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for v in &mut y {
            *v += sigma_nu * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(Observation {
        y,
        sigma_nu,
        op: op.clone(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
    }

    fn pairing_error(op: &LinearOperator, rng: &mut ChaCha8Rng) -> f64 {
        let x = random_vec(rng, op.input_dim());
        let y = random_vec(rng, op.output_dim());
        let ax = op.apply(&x).unwrap();
        let aty = op.adjoint(&y).unwrap();
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
        (lhs - rhs).abs()
    }

    #[test]
    fn downsample_block_average() {
        let op = LinearOperator::downsample(SignalShape::Flat(4), 2).unwrap();
        assert_eq!(op.apply(&[1.0, 3.0, 5.0, 7.0]).unwrap(), vec![2.0, 6.0]);
        assert!(op.adjoint(&[2.0]).is_err());
        let op1 = LinearOperator::downsample(SignalShape::Flat(2), 2).unwrap();
        assert_eq!(op1.adjoint(&[2.0]).unwrap(), vec![1.0, 1.0]);
    }

    #[test]
    fn blur_impulse_response() {
        let op = LinearOperator::blur(SignalShape::Flat(3), vec![0.25, 0.5, 0.25]).unwrap();
        let y = op.apply(&[0.0, 1.0, 0.0]).unwrap();
        assert_abs_diff_eq!(y[0], 0.25);
        assert_abs_diff_eq!(y[1], 0.5);
        assert_abs_diff_eq!(y[2], 0.25);
    }

    #[test]
    fn blur_rejects_even_kernel() {
        assert!(LinearOperator::blur(SignalShape::Flat(8), vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn mask_gather_scatter() {
        let op = LinearOperator::mask(SignalShape::Flat(3), vec![0, 2]).unwrap();
        assert_eq!(op.apply(&[7.0, 8.0, 9.0]).unwrap(), vec![7.0, 9.0]);
        assert_eq!(op.adjoint(&[7.0, 9.0]).unwrap(), vec![7.0, 0.0, 9.0]);
        // mask . adjoint(mask) is identity on kept coordinates
        let round = op.apply(&op.adjoint(&[7.0, 9.0]).unwrap()).unwrap();
        assert_eq!(round, vec![7.0, 9.0]);
    }

    #[test]
    fn adjoint_pairing_all_kinds() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ops = vec![
            LinearOperator::identity(SignalShape::Flat(16)).unwrap(),
            LinearOperator::downsample(SignalShape::Flat(16), 4).unwrap(),
            LinearOperator::blur(SignalShape::Flat(16), vec![0.2, 0.5, 0.1, 0.15, 0.05]).unwrap(),
            LinearOperator::mask(SignalShape::Flat(16), vec![1, 3, 8, 15]).unwrap(),
            LinearOperator::downsample(SignalShape::Raster { height: 8, width: 12 }, 2).unwrap(),
            LinearOperator::blur(
                SignalShape::Raster { height: 8, width: 12 },
                vec![0.3, 0.4, 0.3],
            )
            .unwrap(),
            LinearOperator::mask(
                SignalShape::Raster { height: 4, width: 4 },
                vec![0, 5, 10, 15],
            )
            .unwrap(),
        ];
        for op in &ops {
            for _ in 0..100 {
                assert!(
                    pairing_error(op, &mut rng) < 1e-10,
                    "pairing failed for {:?}",
                    op.kind()
                );
            }
        }
    }

    #[test]
    fn blur_preserves_mean_for_unit_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let op = LinearOperator::blur(SignalShape::Flat(31), vec![0.1, 0.2, 0.4, 0.2, 0.1])
            .unwrap();
        let x = random_vec(&mut rng, 31);
        let y = op.apply(&x).unwrap();
        let mx: f64 = x.iter().sum::<f64>() / 31.0;
        let my: f64 = y.iter().sum::<f64>() / 31.0;
        assert_abs_diff_eq!(mx, my, epsilon = 1e-10);
    }

    #[test]
    fn raster_downsample_averages_blocks() {
        let op = LinearOperator::downsample(SignalShape::Raster { height: 2, width: 4 }, 2)
            .unwrap();
        // blocks: [1,2;5,6] -> 3.5, [3,4;7,8] -> 5.5
        let x = vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        assert_eq!(op.apply(&x).unwrap(), vec![3.5, 5.5]);
        let back = op.adjoint(&[4.0, 8.0]).unwrap();
        assert_eq!(back, vec![1.0, 1.0, 2.0, 2.0, 1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn observe_noise_statistics() {
        let op = LinearOperator::identity(SignalShape::Flat(1)).unwrap();
        let x = vec![0.0];
        // sigma 0: exact
        let obs = observe(&op, &x, 0.0, 1).unwrap();
        assert_eq!(obs.y, vec![0.0]);
        // fixed seed reproduces
        let a = observe(&op, &x, 0.3, 42).unwrap();
        let b = observe(&op, &x, 0.3, 42).unwrap();
        assert_eq!(a.y, b.y);
        // empirical std over 1e5 draws within 2%
        let sigma = 0.7;
        let n = 100_000;
        let mut acc = 0.0;
        for seed in 0..n {
            let o = observe(&op, &x, sigma, seed).unwrap();
            acc += o.y[0] * o.y[0];
        }
        let emp = (acc / n as f64).sqrt();
        assert!((emp - sigma).abs() / sigma < 0.02, "empirical std {emp}");
    }
}
