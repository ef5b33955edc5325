//! Covariance kernels `G₀(x, y)` on `[0, 1]`.

use crate::error::{arg, Result, SmallBallError};
use crate::spectral::Grid;
use nalgebra::DMatrix;

/// Node-matching tolerance for sampled kernels.
const NODE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum KernelKind {
    /// `min(s, t)`
    Wiener,
    /// `min(s, t) - s t`
    Bridge,
    /// `exp(-rate·|s - t|)`, unit variance.
    OrnsteinUhlenbeck { rate: f64 },
    /// Symmetric matrix sampled on ascending nodes.
    Sampled {
        nodes: Vec<f64>,
        matrix: DMatrix<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Declared order `l` of the differential operator whose Green function
    /// this kernel is (`2l` derivatives). Metadata only.
    pub green_order: Option<u32>,
}

impl KernelSpec {
    pub fn wiener() -> Self {
        Self {
            kind: KernelKind::Wiener,
            green_order: Some(1),
        }
    }

    pub fn bridge() -> Self {
        Self {
            kind: KernelKind::Bridge,
            green_order: Some(1),
        }
    }

    pub fn ornstein_uhlenbeck(rate: f64) -> Result<Self> {
        if !(rate > 0.0 && rate.is_finite()) {
            return arg(format!(
                "Ornstein-Uhlenbeck rate must be positive, got {rate}"
            ));
        }
        Ok(Self {
            kind: KernelKind::OrnsteinUhlenbeck { rate },
            green_order: Some(1),
        })
    }

    /// A kernel given by its values on `nodes`. The matrix is symmetrized.
    pub fn sampled(nodes: Vec<f64>, matrix: DMatrix<f64>) -> Result<Self> {
        let n = nodes.len();
        if matrix.nrows() != n || matrix.ncols() != n {
            return arg(format!(
                "sampled kernel matrix is {}x{} but the grid has {n} nodes",
                matrix.nrows(),
                matrix.ncols()
            ));
        }
        if nodes.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return arg("sampled kernel nodes must lie in [0, 1]");
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return arg("sampled kernel nodes must be strictly increasing");
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(SmallBallError::Data(
                "sampled kernel has non-finite entries".into(),
            ));
        }
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        Ok(Self {
            kind: KernelKind::Sampled { nodes, matrix },
            green_order: None,
        })
    }

    pub fn with_green_order(mut self, order: Option<u32>) -> Self {
        self.green_order = order;
        self
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            KernelKind::Wiener => "wiener",
            KernelKind::Bridge => "bridge",
            KernelKind::OrnsteinUhlenbeck { .. } => "ornstein_uhlenbeck",
            KernelKind::Sampled { .. } => "sampled",
        }
    }

    /// `G₀(x, y)`.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) || !(0.0..=1.0).contains(&y) {
            return Err(SmallBallError::Domain(format!(
                "kernel arguments ({x}, {y}) outside [0, 1]"
            )));
        }
        match &self.kind {
            KernelKind::Sampled { nodes, matrix } => {
                let i = node_index(nodes, x)?;
                let j = node_index(nodes, y)?;
                Ok(matrix[(i, j)])
            }
            _ => Ok(self.eval_catalog(x, y)),
        }
    }

    fn eval_catalog(&self, x: f64, y: f64) -> f64 {
        match self.kind {
            KernelKind::Wiener => x.min(y),
            KernelKind::Bridge => x.min(y) - x * y,
            KernelKind::OrnsteinUhlenbeck { rate } => (-rate * (x - y).abs()).exp(),
            KernelKind::Sampled { .. } => unreachable!("sampled kernels are looked up"),
        }
    }

    /// Factors `(p, q)` with `G₀(t, s) = p(min(t, s))·q(max(t, s))`, available
    /// for every catalog kernel.
    pub fn semiseparable(&self) -> Option<SemiSeparable> {
        match self.kind {
            KernelKind::Wiener => Some(SemiSeparable::Wiener),
            KernelKind::Bridge => Some(SemiSeparable::Bridge),
            KernelKind::OrnsteinUhlenbeck { rate } => Some(SemiSeparable::Exponential(rate)),
            KernelKind::Sampled { .. } => None,
        }
    }

    /// `∫₀¹ G₀(t, t) dt` in closed form for catalog kernels.
    pub fn exact_trace(&self) -> Option<f64> {
        match self.kind {
            KernelKind::Wiener => Some(0.5),
            KernelKind::Bridge => Some(1.0 / 6.0),
            KernelKind::OrnsteinUhlenbeck { .. } => Some(1.0),
            KernelKind::Sampled { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SemiSeparable {
    Wiener,
    Bridge,
    Exponential(f64),
}

impl SemiSeparable {
    /// Left factor, evaluated at the smaller argument.
    pub fn p(&self, x: f64) -> f64 {
        match *self {
            SemiSeparable::Wiener | SemiSeparable::Bridge => x,
            SemiSeparable::Exponential(rate) => (rate * x).exp(),
        }
    }

    /// Right factor, evaluated at the larger argument.
    pub fn q(&self, y: f64) -> f64 {
        match *self {
            SemiSeparable::Wiener => 1.0,
            SemiSeparable::Bridge => 1.0 - y,
            SemiSeparable::Exponential(rate) => (-rate * y).exp(),
        }
    }
}

fn node_index(nodes: &[f64], x: f64) -> Result<usize> {
    let i = nodes.partition_point(|&v| v < x - NODE_TOL);
    if i < nodes.len() && (nodes[i] - x).abs() <= NODE_TOL {
        Ok(i)
    } else {
        Err(SmallBallError::Domain(format!(
            "{x} is not a node of the sampled kernel grid"
        )))
    }
}

/// `M[i][j] = G₀(nodes[i], nodes[j])`, symmetrized.
pub fn kernel_matrix(spec: &KernelSpec, grid: &Grid) -> Result<DMatrix<f64>> {
    let nodes = grid.nodes();
    let n = nodes.len();
    let mut m = DMatrix::zeros(n, n);
    match &spec.kind {
        KernelKind::Sampled { .. } => {
            for i in 0..n {
                for j in 0..n {
                    m[(i, j)] = spec.eval(nodes[i], nodes[j])?;
                }
            }
        }
        _ => {
            for j in 0..n {
                for i in 0..n {
                    m[(i, j)] = spec.eval_catalog(nodes[i], nodes[j]);
                }
            }
        }
    }
    Ok((&m + m.transpose()) * 0.5)
}

/// `Σ_i w_i M[i][i]`, the quadrature of `∫₀¹ G₀(t, t) dt`.
pub fn weighted_trace(matrix: &DMatrix<f64>, grid: &Grid) -> f64 {
    grid.weights()
        .iter()
        .enumerate()
        .map(|(i, w)| w * matrix[(i, i)])
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::gauss_legendre_grid;

    #[test]
    fn catalog_values() {
        assert_eq!(KernelSpec::bridge().eval(0.5, 0.5).unwrap(), 0.25);
        assert_eq!(KernelSpec::wiener().eval(0.3, 0.7).unwrap(), 0.3);
        let ou = KernelSpec::ornstein_uhlenbeck(1.0).unwrap();
        assert!((ou.eval(0.0, 1.0).unwrap() - (-1.0f64).exp()).abs() < 1e-15);
        assert!(KernelSpec::ornstein_uhlenbeck(0.0).is_err());
    }

    #[test]
    fn out_of_range_is_domain_error() {
        let e = KernelSpec::bridge().eval(1.5, 0.2).unwrap_err();
        assert!(matches!(e, SmallBallError::Domain(_)));
    }

    #[test]
    fn bridge_on_two_nodes() {
        let grid = Grid::new(vec![1.0 / 3.0, 2.0 / 3.0], vec![0.5, 0.5]).unwrap();
        let m = kernel_matrix(&KernelSpec::bridge(), &grid).unwrap();
        let expect = [[2.0 / 9.0, 1.0 / 9.0], [1.0 / 9.0, 2.0 / 9.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((m[(i, j)] - expect[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn empty_grid_gives_empty_matrix() {
        let m = kernel_matrix(&KernelSpec::wiener(), &Grid::empty()).unwrap();
        assert_eq!(m.shape(), (0, 0));
    }

    #[test]
    fn sampled_lookup_and_off_grid() {
        let nodes = vec![0.25, 0.75];
        let mat = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 2.0]);
        let k = KernelSpec::sampled(nodes, mat).unwrap();
        assert_eq!(k.eval(0.75, 0.25).unwrap(), 0.5);
        assert!(matches!(k.eval(0.5, 0.25), Err(SmallBallError::Domain(_))));
        let bad = KernelSpec::sampled(vec![0.1], DMatrix::zeros(2, 2));
        assert!(bad.is_err());
    }

    #[test]
    fn weighted_traces_converge() {
        let grid = gauss_legendre_grid(500).unwrap();
        for spec in [KernelSpec::bridge(), KernelSpec::wiener()] {
            let m = kernel_matrix(&spec, &grid).unwrap();
            let exact = spec.exact_trace().unwrap();
            assert!(((weighted_trace(&m, &grid) - exact) / exact).abs() < 1e-6);
        }
        let grid = gauss_legendre_grid(200).unwrap();
        let m = kernel_matrix(&KernelSpec::wiener(), &grid).unwrap();
        assert!((weighted_trace(&m, &grid) - 0.5).abs() < 1e-8);
    }

    #[test]
    fn semiseparable_factors_reproduce_kernel() {
        for spec in [
            KernelSpec::wiener(),
            KernelSpec::bridge(),
            KernelSpec::ornstein_uhlenbeck(2.5).unwrap(),
        ] {
            let f = spec.semiseparable().unwrap();
            for &(x, y) in &[(0.1, 0.9), (0.7, 0.2), (0.4, 0.4)] {
                let (lo, hi) = if x < y { (x, y) } else { (y, x) };
                let g = spec.eval(x, y).unwrap();
                assert!((f.p(lo) * f.q(hi) - g).abs() < 1e-14);
            }
        }
    }
}
