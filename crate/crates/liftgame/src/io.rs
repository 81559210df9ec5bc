//! File formats: generator checkpoints, bimatrix game files, solution dumps.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use liftgame_core::bimatrix::CostMatrixPair;
use liftgame_core::generator::{Activation, GeneratorParams, GeneratorShape, Layer};
use liftgame_core::lifted_game::{LiftedSolution, Player};
use liftgame_core::tag_env::{positions, TagEnvSpec};
use liftgame_core::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub const CHECKPOINT_FORMAT: &str = "liftgame-generator";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Generator checkpoint: shape header, then each layer's row-major weights
/// and bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub shape: GeneratorShape,
    pub activation: Activation,
    /// Training iteration the parameters were saved after.
    pub iteration: usize,
    pub layers: Vec<CheckpointLayer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Checkpoint {
    pub fn from_params(theta: &GeneratorParams, iteration: usize) -> Self {
        let layers = theta
            .layers
            .iter()
            .map(|l| CheckpointLayer {
                rows: l.weights.nrows(),
                cols: l.weights.ncols(),
                weights: (0..l.weights.nrows()).flat_map(|r| l.weights.row(r).iter().copied().collect::<Vec<_>>()).collect(),
                bias: l.bias.iter().copied().collect(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            shape: theta.shape.clone(),
            activation: theta.activation,
            iteration,
            layers,
        }
    }

    pub fn to_params(&self) -> Result<GeneratorParams> {
        if self.format != CHECKPOINT_FORMAT || self.version != CHECKPOINT_VERSION {
            bail!("unsupported checkpoint format {} v{}", self.format, self.version);
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                bail!("checkpoint layer {i} has inconsistent sizes");
            }
            layers.push(Layer {
                weights: DMatrix::from_row_slice(l.rows, l.cols, &l.weights),
                bias: DVector::from_column_slice(&l.bias),
            });
        }
        let theta = GeneratorParams { shape: self.shape.clone(), activation: self.activation, layers };
        theta.validate().context("checkpoint parameters")?;
        Ok(theta)
    }
}

pub fn save_checkpoint(path: &Path, theta: &GeneratorParams, iteration: usize) -> Result<()> {
    write_json(path, &Checkpoint::from_params(theta, iteration))
}

pub fn load_checkpoint(path: &Path) -> Result<(GeneratorParams, usize)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let ck: Checkpoint = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok((ck.to_params()?, ck.iteration))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n")?;
    Ok(())
}

/// Parses a bimatrix game file.
///
/// ```text
/// # comment
/// 3 3          rows and columns
/// 0 1 -1       n₁ rows of A (player 1's costs)
/// -1 0 1
/// 1 -1 0
/// ...          n₁ rows of B, or nothing for the zero-sum game B = −A
/// ```
pub fn parse_bimatrix(text: &str) -> Result<CostMatrixPair> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let (ln, header) = lines.next().context("empty bimatrix file")?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().with_context(|| format!("line {ln}: bad dimension {t:?}")))
        .collect::<Result<_>>()?;
    let [n1, n2] = dims[..] else {
        bail!("line {ln}: header must be `rows cols`");
    };
    if n1 == 0 || n2 == 0 {
        bail!("line {ln}: dimensions must be positive");
    }
    let mut rows = Vec::new();
    for (ln, line) in lines {
        let row: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().with_context(|| format!("line {ln}: bad number {t:?}")))
            .collect::<Result<_>>()?;
        if row.len() != n2 {
            bail!("line {ln}: expected {n2} entries, found {}", row.len());
        }
        if row.iter().any(|v| !v.is_finite()) {
            bail!("line {ln}: non-finite entry");
        }
        rows.push(row);
    }
    let matrix = |rows: &[Vec<f64>]| DMatrix::from_fn(n1, n2, |i, j| rows[i][j]);
    let pair = match rows.len() {
        n if n == n1 => CostMatrixPair::zero_sum(matrix(&rows))?,
        n if n == 2 * n1 => CostMatrixPair::new(matrix(&rows[..n1]), matrix(&rows[n1..]))?,
        n => bail!("expected {n1} or {} matrix rows, found {n}", 2 * n1),
    };
    Ok(pair)
}

/// JSON shape of a lifted solution for plotting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionDump {
    pub pursuer: PlayerDump,
    pub evader: PlayerDump,
    /// Player 1's cost matrix, row-major by pursuer candidate.
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub losses: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlayerDump {
    pub weights: Vec<f64>,
    /// Flat trajectories `[x₁ … x_T, u₁ … u_T]`.
    pub trajectories: Vec<Vec<f64>>,
    /// Position sequences, when the game is tag.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub positions: Vec<Vec<[f64; 2]>>,
}

impl SolutionDump {
    pub fn new(sol: &LiftedSolution, env: Option<&TagEnvSpec>) -> Self {
        let player = |p: Player| PlayerDump {
            weights: sol.strategy(p).iter().copied().collect(),
            trajectories: sol.trajectories(p).map(|t| t.iter().copied().collect()).collect(),
            positions: env
                .map(|e| sol.trajectories(p).map(|t| positions(t.as_slice(), e)).collect())
                .unwrap_or_default(),
        };
        let rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect();
        Self {
            pursuer: player(Player::Pursuer),
            evader: player(Player::Evader),
            a: rows(&sol.costs.a),
            b: rows(&sol.costs.b),
            losses: [sol.losses.0, sol.losses.1],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_zero_sum_and_general() {
        let rps = "# rock paper scissors\n3 3\n0 1 -1\n-1 0 1\n1 -1 0\n";
        let pair = parse_bimatrix(rps).unwrap();
        assert_eq!(pair.b, -&pair.a);
        let general = "2 1\n1\n2\n\n3\n4\n";
        let pair = parse_bimatrix(general).unwrap();
        assert_eq!(pair.b[(1, 0)], 4.0);
    }

    #[test]
    fn malformed_files() {
        for bad in ["", "2\n1 2\n", "2 2\n1 2\n3\n", "1 1\nx\n", "1 1\n1\n2\n3\n", "0 1\n"] {
            assert!(parse_bimatrix(bad).is_err(), "{bad:?} accepted");
        }
    }
}
