//! Rotation groups and their block action on flattened point clouds.
//!
//! Two kinds of group are supported: the full rotation group SO(3), which can
//! only be sampled, and finite rotation subgroups, which can also be
//! enumerated so that group expectations become exact averages.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::linalg::{mat3_apply, mat3_det, mat3_max_diff, mat3_mul, mat3_transpose, Mat3, IDENTITY3};
use crate::rng::Stream;

/// Tolerance used when validating matrices built in code.
pub const ORTHO_TOL: f64 = 1e-12;
/// Tolerance used for closure checks and for matrices read from files.
pub const CLOSURE_TOL: f64 = 1e-10;

/// A proper rotation of 3-space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupElement {
    matrix: Mat3,
    label: Option<String>,
}

impl GroupElement {
    /// Builds an element, checking orthogonality and unit determinant to `tol`.
    pub fn try_new(matrix: Mat3, label: Option<String>, tol: f64) -> Result<Self> {
        let gram = mat3_mul(&mat3_transpose(&matrix), &matrix);
        if mat3_max_diff(&gram, &IDENTITY3) > tol {
            return Err(Error::Argument(format!("matrix {matrix:?} is not orthogonal")));
        }
        if (mat3_det(&matrix) - 1.0).abs() > tol {
            return Err(Error::Argument(format!("matrix {matrix:?} is not a proper rotation (det != +1)")));
        }
        Ok(Self { matrix, label })
    }

    pub fn identity() -> Self {
        Self { matrix: IDENTITY3, label: Some("I".into()) }
    }

    /// Rotation by `quarter_turns * 90°` about `axis`; entries are exact.
    pub fn quarter_turn(axis: Axis, quarter_turns: i32) -> Self {
        let k = quarter_turns.rem_euclid(4);
        let (c, s) = [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][k as usize];
        Self {
            matrix: axis_matrix(axis, c, s),
            label: Some(format!("R{}({})", axis.letter(), 90 * k)),
        }
    }

    /// Rotation by `angle` radians about `axis`.
    pub fn axis_angle(axis: Axis, angle: f64) -> Self {
        Self { matrix: axis_matrix(axis, angle.cos(), angle.sin()), label: None }
    }

    /// Rotation matrix of the unit quaternion `(w, x, y, z)` (normalised here).
    pub fn from_quaternion(q: [f64; 4]) -> Self {
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        let [w, x, y, z] = q.map(|c| c / n);
        let matrix = [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ];
        Self { matrix, label: None }
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.matrix
    }

    pub fn label(&self) -> Option<&str> {
        self.label.as_deref()
    }

    pub fn inverse(&self) -> Self {
        Self { matrix: mat3_transpose(&self.matrix), label: self.label.as_ref().map(|l| format!("{l}^-1")) }
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &GroupElement) -> Self {
        Self { matrix: mat3_mul(&self.matrix, &other.matrix), label: None }
    }

    pub fn approx_eq(&self, other: &GroupElement, tol: f64) -> bool {
        mat3_max_diff(&self.matrix, &other.matrix) <= tol
    }

    pub fn rotate(&self, v: [f64; 3]) -> [f64; 3] {
        mat3_apply(&self.matrix, v)
    }

    /// True when every entry is 0 or ±1, i.e. the element permutes the
    /// coordinate axes up to sign.
    pub fn is_signed_permutation(&self) -> bool {
        self.matrix.iter().flatten().all(|v| *v == 0.0 || v.abs() == 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    fn letter(self) -> char {
        match self {
            Axis::X => 'x',
            Axis::Y => 'y',
            Axis::Z => 'z',
        }
    }
}

fn axis_matrix(axis: Axis, c: f64, s: f64) -> Mat3 {
    match axis {
        Axis::X => [[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]],
        Axis::Y => [[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]],
        Axis::Z => [[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]],
    }
}

/// A finite rotation group, validated for identity, closure and inverses.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FiniteGroup {
    name: String,
    elements: Vec<GroupElement>,
}

impl FiniteGroup {
    pub fn new(name: impl Into<String>, elements: Vec<GroupElement>) -> Result<Self> {
        let name = name.into();
        if elements.is_empty() {
            return Err(Error::Config(format!("finite group '{name}' has no elements")));
        }
        let contains = |m: &GroupElement| elements.iter().any(|e| e.approx_eq(m, CLOSURE_TOL));
        if !contains(&GroupElement::identity()) {
            return Err(Error::Config(format!("finite group '{name}' does not contain the identity")));
        }
        for (i, a) in elements.iter().enumerate() {
            if elements[..i].iter().any(|e| e.approx_eq(a, CLOSURE_TOL)) {
                return Err(Error::Config(format!("finite group '{name}' lists element {i} twice")));
            }
            if !contains(&a.inverse()) {
                return Err(Error::Config(format!("finite group '{name}' is not closed under inverse (element {i})")));
            }
            for (j, b) in elements.iter().enumerate() {
                if !contains(&a.compose(b)) {
                    return Err(Error::Config(format!(
                        "finite group '{name}' is not closed under composition ({i} * {j})"
                    )));
                }
            }
        }
        Ok(Self { name, elements })
    }

    pub fn trivial() -> Self {
        Self { name: "identity".into(), elements: vec![GroupElement::identity()] }
    }

    /// Cyclic group of `order` rotations about `axis`. Orders 1, 2 and 4 have
    /// exact entries.
    pub fn cyclic(axis: Axis, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::Config("cyclic group order must be positive".into()));
        }
        let elements = (0..order)
            .map(|k| {
                if 4 % order == 0 {
                    GroupElement::quarter_turn(axis, (k * 4 / order) as i32)
                } else {
                    let mut e = GroupElement::axis_angle(axis, std::f64::consts::TAU * k as f64 / order as f64);
                    e.label = Some(format!("R{}({}/{})", axis.letter(), k, order));
                    e
                }
            })
            .collect();
        Ok(Self { name: format!("C{order}{}", axis.letter()), elements })
    }

    /// The 24 proper rotations of the cube: signed permutation matrices with
    /// determinant +1.
    pub fn octahedral() -> Self {
        const PERMS: [[usize; 3]; 6] = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let mut elements = Vec::with_capacity(24);
        for perm in PERMS {
            for signs in 0..8u32 {
                let mut m = [[0.0; 3]; 3];
                for (row, &col) in perm.iter().enumerate() {
                    m[row][col] = if signs >> row & 1 == 1 { -1.0 } else { 1.0 };
                }
                if mat3_det(&m) > 0.0 {
                    let label = Some(format!("O{}", elements.len()));
                    elements.push(GroupElement { matrix: m, label });
                }
            }
        }
        Self { name: "octahedral".into(), elements }
    }

    /// Builder lookup by name: `identity`, `c2x`..`c4z`, `octahedral`.
    pub fn builder(name: &str) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        match lower.as_str() {
            "identity" | "trivial" => Ok(Self::trivial()),
            "octahedral" | "o" => Ok(Self::octahedral()),
            _ => {
                let bytes = lower.as_bytes();
                if bytes.len() == 3 && bytes[0] == b'c' {
                    let order = match bytes[1] {
                        b'2' => 2,
                        b'4' => 4,
                        _ => return Err(Error::Config(format!("unknown group builder '{name}'"))),
                    };
                    let axis = match bytes[2] {
                        b'x' => Axis::X,
                        b'y' => Axis::Y,
                        b'z' => Axis::Z,
                        _ => return Err(Error::Config(format!("unknown group builder '{name}'"))),
                    };
                    Self::cyclic(axis, order)
                } else {
                    Err(Error::Config(format!("unknown group builder '{name}'")))
                }
            }
        }
    }

    /// Parses a JSON array of row-major 3x3 matrices.
    pub fn from_json(name: impl Into<String>, text: &str) -> Result<Self> {
        let raw: Vec<Mat3> = serde_json::from_str(text)?;
        let elements = raw
            .into_iter()
            .enumerate()
            .map(|(i, m)| {
                GroupElement::try_new(m, Some(format!("g{i}")), CLOSURE_TOL)
                    .map_err(|e| Error::Config(format!("element {i}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(name, elements)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Self::from_json(name, &text)
    }

    pub fn to_json(&self) -> String {
        let raw: Vec<&Mat3> = self.elements.iter().map(|e| &e.matrix).collect();
        serde_json::to_string(&raw).expect("matrices serialise")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn elements(&self) -> &[GroupElement] {
        &self.elements
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn is_signed_permutation_group(&self) -> bool {
        self.elements.iter().all(GroupElement::is_signed_permutation)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum GroupSpec {
    /// All proper rotations, Haar measure.
    So3,
    Finite(FiniteGroup),
}

impl GroupSpec {
    pub fn finite(&self) -> Option<&FiniteGroup> {
        match self {
            GroupSpec::So3 => None,
            GroupSpec::Finite(g) => Some(g),
        }
    }

    pub fn name(&self) -> &str {
        match self {
            GroupSpec::So3 => "so3",
            GroupSpec::Finite(g) => g.name(),
        }
    }
}

/// Draws one element uniformly from the group.
///
/// SO(3) uses a normalised 4-vector of independent standard normals as a unit
/// quaternion, which is exactly Haar distributed.
pub fn sample_uniform(spec: &GroupSpec, rng: &mut Stream) -> Result<GroupElement> {
    match spec {
        GroupSpec::So3 => {
            let q: [f64; 4] = std::array::from_fn(|_| rng.sample(StandardNormal));
            Ok(GroupElement::from_quaternion(q))
        }
        GroupSpec::Finite(g) => {
            if g.elements.is_empty() {
                return Err(Error::Config(format!("finite group '{}' has no elements", g.name)));
            }
            let k = rng.random_range(0..g.elements.len());
            Ok(g.elements[k].clone())
        }
    }
}

pub fn sample_many(spec: &GroupSpec, count: usize, rng: &mut Stream) -> Result<Vec<GroupElement>> {
    (0..count).map(|_| sample_uniform(spec, rng)).collect()
}

pub fn enumerate(spec: &GroupSpec) -> Result<Vec<GroupElement>> {
    match spec {
        GroupSpec::So3 => Err(Error::Unsupported("SO(3) is continuous and cannot be enumerated".into())),
        GroupSpec::Finite(g) => Ok(g.elements.clone()),
    }
}

pub fn inverse(g: &GroupElement) -> GroupElement {
    g.inverse()
}

/// Block-diagonal action of a rotation on `block_count` stacked 3-vectors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockAction {
    pub group: GroupSpec,
    block_count: usize,
}

impl BlockAction {
    pub fn new(group: GroupSpec, block_count: usize) -> Result<Self> {
        if block_count == 0 {
            return Err(Error::Config("block action needs at least one 3-vector".into()));
        }
        Ok(Self { group, block_count })
    }

    pub fn block_count(&self) -> usize {
        self.block_count
    }

    pub fn dimension(&self) -> usize {
        3 * self.block_count
    }

    pub fn apply(&self, g: &GroupElement, v: &[f64]) -> Result<Vec<f64>> {
        check_len("block action input", v.len(), self.dimension())?;
        Ok(apply_blocks(g.matrix(), v))
    }

    /// `apply(g⁻¹, v)` without materialising the inverse.
    pub fn apply_inverse(&self, g: &GroupElement, v: &[f64]) -> Result<Vec<f64>> {
        check_len("block action input", v.len(), self.dimension())?;
        Ok(apply_blocks(&mat3_transpose(g.matrix()), v))
    }
}

pub(crate) fn apply_blocks(m: &Mat3, v: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len());
    for block in v.chunks_exact(3) {
        out.extend_from_slice(&mat3_apply(m, [block[0], block[1], block[2]]));
    }
    out
}

pub(crate) fn apply_blocks_transposed(m: &Mat3, v: &[f64]) -> Vec<f64> {
    apply_blocks(&mat3_transpose(m), v)
}
