//! Built-in differentiable models.
//!
//! * `coord-mlp`: a tanh MLP on centred coordinates; no symmetry built in.
//! * `invariant-graph-head`: distance-only edge features followed by a linear
//!   per-axis force head. Equivariant exactly when the three head rows agree.
//! * `equivariant-baseline`: a learned radial function times edge vectors;
//!   equivariant for every parameter value.
//!
//! Gradients are hand-written reverse mode for each architecture.

mod arch;
mod mlp;
pub mod params;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use arch::{radial_basis, RBF_CENTERS, RBF_MAX, RBF_WIDTH};
pub use params::{ParameterVector, Segment};

use crate::error::{check_len, Error, Result};
use crate::rng::{self, streams};
use arch::{CoordMlp, EquivariantBaseline, GraphHead};
use params::{sidecar_path, LayoutBuilder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    CoordMlp,
    InvariantGraphHead,
    EquivariantBaseline,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::CoordMlp => "coord-mlp",
            ModelKind::InvariantGraphHead => "invariant-graph-head",
            ModelKind::EquivariantBaseline => "equivariant-baseline",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "coord-mlp" => Ok(ModelKind::CoordMlp),
            "invariant-graph-head" => Ok(ModelKind::InvariantGraphHead),
            "equivariant-baseline" => Ok(ModelKind::EquivariantBaseline),
            other => Err(Error::Config(format!("unknown model kind '{other}'"))),
        }
    }
}

/// Architecture description: everything except the parameter values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub atoms: usize,
    pub hidden: Vec<usize>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, atoms: usize, hidden: Vec<usize>) -> Self {
        Self { kind, atoms, hidden }
    }

    pub fn dimension(&self) -> usize {
        3 * self.atoms
    }

    /// Hidden widths used when none are configured. The graph head ends in a width-2 feature layer: with wider features the
    /// edge network can move `h` into the null space of the head deviation.
    pub fn default_hidden(kind: ModelKind) -> Vec<usize> {
        match kind {
            ModelKind::CoordMlp => vec![24, 24],
            ModelKind::InvariantGraphHead => vec![16, 2],
            ModelKind::EquivariantBaseline => vec![16],
        }
    }

    fn validate(&self) -> Result<()> {
        if self.atoms == 0 {
            return Err(Error::Config("model needs at least one atom".into()));
        }
        if self.kind != ModelKind::CoordMlp && self.atoms < 2 {
            return Err(Error::Config(format!("{} needs at least two atoms", self.kind.as_str())));
        }
        if self.kind == ModelKind::InvariantGraphHead && self.hidden.is_empty() {
            return Err(Error::Config("invariant-graph-head needs at least one hidden layer".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }

    fn build(&self) -> Result<(Architecture, Vec<Segment>)> {
        self.validate()?;
        let mut layout = LayoutBuilder::default();
        let arch = match self.kind {
            ModelKind::CoordMlp => Architecture::CoordMlp(CoordMlp::register(&mut layout, self.atoms, &self.hidden)),
            ModelKind::InvariantGraphHead => {
                Architecture::GraphHead(GraphHead::register(&mut layout, self.atoms, &self.hidden))
            }
            ModelKind::EquivariantBaseline => {
                Architecture::Baseline(EquivariantBaseline::register(&mut layout, self.atoms, &self.hidden))
            }
        };
        debug_assert_eq!(layout.total(), layout.segments.iter().map(|s| s.len).sum::<usize>());
        Ok((arch, layout.segments))
    }
}

#[derive(Debug, Clone)]
enum Architecture {
    CoordMlp(CoordMlp),
    GraphHead(GraphHead),
    Baseline(EquivariantBaseline),
}

/// A model: architecture, parameters and the seed they were initialised from.
#[derive(Debug, Clone)]
pub struct ModelHandle {
    spec: ModelSpec,
    arch: Architecture,
    pub params: ParameterVector,
    seed: u64,
}

/// Deterministic initialisation: uniform in ±1/√fan-in per dense layer, with
/// the three force-head rows drawn independently.
pub fn init_parameters(spec: &ModelSpec, seed: u64) -> Result<ModelHandle> {
    let (arch, layout) = spec.build()?;
    let total = layout.iter().map(|s| s.len).sum();
    let mut values = vec![0.0; total];
    let mut rng = rng::stream(seed, streams::INIT);
    match &arch {
        Architecture::CoordMlp(m) => m.net.init(&mut values, &mut rng),
        Architecture::GraphHead(m) => {
            m.features.init(&mut values, &mut rng);
            let h = m.width();
            let bound = 1.0 / (h as f64).sqrt();
            for v in &mut values[m.head..m.head + 3 * h] {
                *v = rand::Rng::random_range(&mut rng, -bound..bound);
            }
        }
        Architecture::Baseline(m) => m.radial.init(&mut values, &mut rng),
    }
    let params = ParameterVector { values, layout };
    params.validate()?;
    Ok(ModelHandle { spec: spec.clone(), arch, params, seed })
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    kind: ModelKind,
    atoms: usize,
    hidden: Vec<usize>,
    dimension: usize,
    seed: u64,
    parameter_count: usize,
    segments: Vec<Segment>,
}

impl ModelHandle {
    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn dimension(&self) -> usize {
        self.spec.dimension()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn parameter_count(&self) -> usize {
        self.params.len()
    }

    /// Same architecture with different parameter values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<ModelHandle> {
        check_len("parameter vector", values.len(), self.params.len())?;
        let mut m = self.clone();
        m.params.values = values;
        Ok(m)
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_with(&self.params.values, x)
    }

    pub fn forward_with(&self, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
        check_len("model input", x.len(), self.dimension())?;
        check_len("parameter vector", theta.len(), self.params.len())?;
        Ok(match &self.arch {
            Architecture::CoordMlp(m) => m.forward(theta, x),
            Architecture::GraphHead(m) => m.forward(theta, x),
            Architecture::Baseline(m) => m.forward(theta, x),
        })
    }

    /// Accumulates `∂⟨upstream, f(x; θ)⟩/∂θ` into `grad`.
    pub fn backward_with(&self, theta: &[f64], x: &[f64], upstream: &[f64], grad: &mut [f64]) -> Result<()> {
        check_len("model input", x.len(), self.dimension())?;
        check_len("upstream gradient", upstream.len(), self.dimension())?;
        check_len("gradient buffer", grad.len(), self.params.len())?;
        match &self.arch {
            Architecture::CoordMlp(m) => m.backward(theta, x, upstream, grad),
            Architecture::GraphHead(m) => m.backward(theta, x, upstream, grad),
            Architecture::Baseline(m) => m.backward(theta, x, upstream, grad),
        }
        Ok(())
    }

    /// Hidden edge features `h` for an edge of length `r` (graph head only).
    pub fn edge_features(&self, r: f64) -> Result<Vec<f64>> {
        match &self.arch {
            Architecture::GraphHead(m) => Ok(m.edge_features(&self.params.values, r)),
            _ => Err(Error::Argument(format!("{} has no edge features", self.kind().as_str()))),
        }
    }

    /// Ordered edges `(i, j, x_j − x_i, h_ij)` (graph head only).
    pub fn edges(&self, x: &[f64]) -> Result<Vec<(usize, usize, [f64; 3], Vec<f64>)>> {
        check_len("model input", x.len(), self.dimension())?;
        match &self.arch {
            Architecture::GraphHead(m) => Ok(m.edges(&self.params.values, x)),
            _ => Err(Error::Argument(format!("{} has no edge features", self.kind().as_str()))),
        }
    }

    /// The dense layers in forward order as `(weight segment, bias segment)`.
    pub fn dense_layers(&self) -> Vec<(String, String)> {
        self.params
            .layout
            .iter()
            .filter_map(|s| s.name.strip_suffix(".weight").map(|p| (s.name.clone(), format!("{p}.bias"))))
            .collect()
    }

    /// Writes the flat little-endian f64 parameter file and its JSON sidecar.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.params.to_le_bytes())?;
        let sidecar = Sidecar {
            kind: self.spec.kind,
            atoms: self.spec.atoms,
            hidden: self.spec.hidden.clone(),
            dimension: self.dimension(),
            seed: self.seed,
            parameter_count: self.params.len(),
            segments: self.params.layout.clone(),
        };
        std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&sidecar)? + "\n")?;
        Ok(())
    }

    /// Loads a parameter file and checks its layout against the sidecar.
    pub fn load(path: &Path) -> Result<ModelHandle> {
        let sidecar: Sidecar = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
        let spec = ModelSpec::new(sidecar.kind, sidecar.atoms, sidecar.hidden.clone());
        let mut model = init_parameters(&spec, sidecar.seed)?;
        if model.params.layout != sidecar.segments {
            return Err(Error::Config("parameter layout in sidecar does not match the architecture".into()));
        }
        let values = ParameterVector::values_from_le_bytes(&std::fs::read(path)?)?;
        if values.len() != sidecar.parameter_count || values.len() != model.params.len() {
            return Err(Error::Config(format!(
                "parameter file holds {} values, layout needs {}",
                values.len(),
                model.params.len()
            )));
        }
        model.params.values = values;
        Ok(model)
    }
}
