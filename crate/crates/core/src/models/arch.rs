//! The three built-in architectures. All act on `D = 3N` flattened atom
//! coordinates and return one 3-vector per atom.

use super::mlp::Mlp;
use super::params::LayoutBuilder;

/// Gaussian radial basis on pairwise distance.
pub const RBF_CENTERS: usize = 8;
pub const RBF_MAX: f64 = 4.0;
pub const RBF_WIDTH: f64 = 0.5;

pub fn radial_basis(r: f64) -> [f64; RBF_CENTERS] {
    std::array::from_fn(|k| {
        let c = RBF_MAX * k as f64 / (RBF_CENTERS - 1) as f64;
        let z = (r - c) / RBF_WIDTH;
        (-0.5 * z * z).exp()
    })
}

fn edge(x: &[f64], i: usize, j: usize) -> [f64; 3] {
    [x[3 * j] - x[3 * i], x[3 * j + 1] - x[3 * i + 1], x[3 * j + 2] - x[3 * i + 2]]
}

fn length(e: &[f64; 3]) -> f64 {
    (e[0] * e[0] + e[1] * e[1] + e[2] * e[2]).sqrt()
}

/// Unordered atom pairs `(i, j)` with `i < j`.
fn pairs(atoms: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..atoms).flat_map(move |i| ((i + 1)..atoms).map(move |j| (i, j)))
}

/// MLP on centred, flattened coordinates. Not equivariant.
#[derive(Debug, Clone)]
pub(crate) struct CoordMlp {
    pub atoms: usize,
    pub net: Mlp,
}

impl CoordMlp {
    pub fn register(layout: &mut LayoutBuilder, atoms: usize, hidden: &[usize]) -> Self {
        let d = 3 * atoms;
        let mut sizes = vec![d];
        sizes.extend_from_slice(hidden);
        sizes.push(d);
        Self { atoms, net: Mlp::register(layout, "", &sizes, false) }
    }

    pub fn forward(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        self.net.forward(theta, &center(x, self.atoms)).acts.pop().expect("output")
    }

    pub fn backward(&self, theta: &[f64], x: &[f64], upstream: &[f64], grad: &mut [f64]) {
        let trace = self.net.forward(theta, &center(x, self.atoms));
        self.net.backward(theta, &trace, upstream, grad);
    }
}

pub(crate) fn center(x: &[f64], atoms: usize) -> Vec<f64> {
    let mut c = [0.0; 3];
    for block in x.chunks_exact(3) {
        for k in 0..3 {
            c[k] += block[k];
        }
    }
    let n = atoms as f64;
    x.chunks_exact(3).flat_map(|b| [b[0] - c[0] / n, b[1] - c[1] / n, b[2] - c[2] / n]).collect()
}

/// Invariant edge features feeding a per-axis linear force head:
/// `o_i[k] = Σ_j e_ij[k] · w_kᵀ h(‖e_ij‖)`.
///
/// `h` is the edge MLP output rescaled to unit RMS and multiplied by a fixed
/// Gaussian envelope of the distance. Without the rescaling the network can
/// hide a fixed head deviation by shrinking `h` and growing `w̄`; without the
/// envelope distant pairs feed forces that grow linearly with distance.
#[derive(Debug, Clone)]
pub(crate) struct GraphHead {
    pub atoms: usize,
    pub features: Mlp,
    /// Offset of the 3 x H head matrix with rows `w_x, w_y, w_z`.
    pub head: usize,
}

impl GraphHead {
    pub fn register(layout: &mut LayoutBuilder, atoms: usize, hidden: &[usize]) -> Self {
        let mut sizes = vec![RBF_CENTERS];
        sizes.extend_from_slice(hidden);
        let features = Mlp::register(layout, "edge.", &sizes, true);
        let head = layout.add("head.w", &[3, features.output_size()]);
        Self { atoms, features, head }
    }

    pub fn width(&self) -> usize {
        self.features.output_size()
    }

    /// Hidden representation `h` of the edge between two atoms at distance `r`.
    pub fn edge_features(&self, theta: &[f64], r: f64) -> Vec<f64> {
        let (h, _) = rms_normalized(self.features.forward(theta, &radial_basis(r)).output());
        let c = envelope(r);
        h.into_iter().map(|v| c * v).collect()
    }

    /// Every ordered edge `(i, j, e_ij, h_ij)` of the complete graph.
    pub fn edges(&self, theta: &[f64], x: &[f64]) -> Vec<(usize, usize, [f64; 3], Vec<f64>)> {
        let mut out = Vec::with_capacity(self.atoms * (self.atoms - 1));
        for (i, j) in pairs(self.atoms) {
            let e = edge(x, i, j);
            let h = self.edge_features(theta, length(&e));
            out.push((j, i, e.map(|v| -v), h.clone()));
            out.push((i, j, e, h));
        }
        out
    }

    pub fn forward(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let h_dim = self.width();
        let w = &theta[self.head..self.head + 3 * h_dim];
        let mut out = vec![0.0; 3 * self.atoms];
        for (i, j) in pairs(self.atoms) {
            let e = edge(x, i, j);
            let h = self.edge_features(theta, length(&e));
            for k in 0..3 {
                let s: f64 = w[k * h_dim..(k + 1) * h_dim].iter().zip(&h).map(|(a, b)| a * b).sum();
                out[3 * i + k] += e[k] * s;
                out[3 * j + k] -= e[k] * s;
            }
        }
        out
    }

    pub fn backward(&self, theta: &[f64], x: &[f64], upstream: &[f64], grad: &mut [f64]) {
        let h_dim = self.width();
        let w = theta[self.head..self.head + 3 * h_dim].to_vec();
        for (i, j) in pairs(self.atoms) {
            let e = edge(x, i, j);
            let r = length(&e);
            let trace = self.features.forward(theta, &radial_basis(r));
            let (unit, rms) = rms_normalized(trace.output());
            let c = envelope(r);
            let h: Vec<f64> = unit.iter().map(|v| c * v).collect();
            let mut dh = vec![0.0; h_dim];
            for k in 0..3 {
                let ds = e[k] * (upstream[3 * i + k] - upstream[3 * j + k]);
                if ds == 0.0 {
                    continue;
                }
                let gw = &mut grad[self.head + k * h_dim..self.head + (k + 1) * h_dim];
                for (g, hv) in gw.iter_mut().zip(&h) {
                    *g += ds * hv;
                }
                for (d, wv) in dh.iter_mut().zip(&w[k * h_dim..(k + 1) * h_dim]) {
                    *d += ds * wv;
                }
            }
            // h = c · u / rms(u)  ⇒  ∂/∂u = c (dh − (dh·n) n / H) / rms with n = u / rms(u)
            let proj = dh.iter().zip(&unit).map(|(a, b)| a * b).sum::<f64>() / h_dim as f64;
            let du: Vec<f64> = dh.iter().zip(&unit).map(|(d, n)| c * (d - proj * n) / rms).collect();
            self.features.backward(theta, &trace, &du, grad);
        }
    }
}

const RMS_EPS: f64 = 1e-12;

/// Fixed envelope `exp(−(r / RBF_MAX)²)` on edge features.
pub fn envelope(r: f64) -> f64 {
    let z = r / RBF_MAX;
    (-z * z).exp()
}

/// `(u / rms(u), rms(u))` with `rms(u) = sqrt(mean(u²) + ε)`.
pub(crate) fn rms_normalized(u: &[f64]) -> (Vec<f64>, f64) {
    let rms = (u.iter().map(|v| v * v).sum::<f64>() / u.len() as f64 + RMS_EPS).sqrt();
    (u.iter().map(|v| v / rms).collect(), rms)
}

/// `o_i = Σ_j s(‖x_j − x_i‖) (x_j − x_i)` with a learned scalar radial
/// function `s`. Exactly equivariant for every parameter value.
#[derive(Debug, Clone)]
pub(crate) struct EquivariantBaseline {
    pub atoms: usize,
    pub radial: Mlp,
}

impl EquivariantBaseline {
    pub fn register(layout: &mut LayoutBuilder, atoms: usize, hidden: &[usize]) -> Self {
        let mut sizes = vec![RBF_CENTERS];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        Self { atoms, radial: Mlp::register(layout, "radial.", &sizes, false) }
    }

    pub fn forward(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; 3 * self.atoms];
        for (i, j) in pairs(self.atoms) {
            let e = edge(x, i, j);
            let s = self.radial.forward(theta, &radial_basis(length(&e))).output()[0];
            for k in 0..3 {
                out[3 * i + k] += s * e[k];
                out[3 * j + k] -= s * e[k];
            }
        }
        out
    }

    pub fn backward(&self, theta: &[f64], x: &[f64], upstream: &[f64], grad: &mut [f64]) {
        for (i, j) in pairs(self.atoms) {
            let e = edge(x, i, j);
            let ds: f64 = (0..3).map(|k| e[k] * (upstream[3 * i + k] - upstream[3 * j + k])).sum();
            if ds == 0.0 {
                continue;
            }
            let trace = self.radial.forward(theta, &radial_basis(length(&e)));
            self.radial.backward(theta, &trace, &[ds], grad);
        }
    }
}
