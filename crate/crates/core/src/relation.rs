//! Pairwise relation measures between node embeddings and the heads that turn
//! them into similarity scores in `(0, 1)`.
//!
//! * Absolute difference: `R_ij = |V_i - V_j|` (elementwise), scored by
//!   `σ(ω·R_ij + b)`.
//! * Task-level relation: `e_ij = V_i·V_j / sqrt(C)`, `a = softmax_rows(e)`,
//!   `R_ij = a_ij · V_j`, scored by a two-layer relu MLP with sigmoid output.
//!   Because every `a_ij` is normalised over the whole row, the relation of a
//!   pair depends on every other node in the task.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::embedding::{BoundLinear, Linear};
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RelationKind {
    AbsDiff,
    TaskLevel,
}

impl RelationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::AbsDiff => "abs_diff",
            RelationKind::TaskLevel => "tlrm",
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "abs_diff" | "absdiff" => Ok(RelationKind::AbsDiff),
            "tlrm" | "task_level" => Ok(RelationKind::TaskLevel),
            other => Err(Error::Parameter(format!(
                "unknown relation kind {other:?} (expected abs_diff or tlrm)"
            ))),
        }
    }
}

/// `n × n × C` relation features recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct Relation {
    pub values: Var,
    pub kind: RelationKind,
}

pub fn abs_diff_relation(tape: &mut Tape, v: Var) -> Result<Relation> {
    let diff = tape.pairwise_diff(v)?;
    Ok(Relation {
        values: tape.abs(diff),
        kind: RelationKind::AbsDiff,
    })
}

/// `e_ij = V_i · V_j / sqrt(C)`.
pub fn matching_degree(tape: &mut Tape, v: Var) -> Result<Var> {
    let c = tape.value(v).cols();
    let vt = tape.transpose(v)?;
    let dots = tape.matmul(v, vt)?;
    Ok(tape.scalar_mul(dots, 1.0 / (c as f64).sqrt()))
}

/// Row-stochastic attention over all nodes, self included.
pub fn attention(tape: &mut Tape, v: Var) -> Result<Var> {
    let e = matching_degree(tape, v)?;
    tape.softmax_rows(e)
}

pub fn tlrm_relation(tape: &mut Tape, v: Var) -> Result<Relation> {
    let a = attention(tape, v)?;
    Ok(Relation {
        values: tape.scale_rows(a, v)?,
        kind: RelationKind::TaskLevel,
    })
}

pub fn relation(tape: &mut Tape, v: Var, kind: RelationKind) -> Result<Relation> {
    match kind {
        RelationKind::AbsDiff => abs_diff_relation(tape, v),
        RelationKind::TaskLevel => tlrm_relation(tape, v),
    }
}

/// Attention matrix evaluated outside of training.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMatrix(Tensor);

impl AttentionMatrix {
    pub fn of(v: &Tensor) -> Result<Self> {
        let mut tape = Tape::new();
        let x = tape.constant(v.clone());
        let a = attention(&mut tape, x)?;
        Ok(AttentionMatrix(tape.value(a).clone()))
    }

    pub fn values(&self) -> &Tensor {
        &self.0
    }
}

/// Relation features evaluated outside of training.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationTensor {
    pub values: Tensor,
    pub kind: RelationKind,
}

impl RelationTensor {
    pub fn of(v: &Tensor, kind: RelationKind) -> Result<Self> {
        let mut tape = Tape::new();
        let x = tape.constant(v.clone());
        let r = relation(&mut tape, x, kind)?;
        Ok(RelationTensor {
            values: tape.value(r.values).clone(),
            kind,
        })
    }

    /// The `C`-vector for pair `(i, j)`.
    pub fn pair(&self, i: usize, j: usize) -> &[f64] {
        let n = self.values.shape()[1];
        let c = self.values.shape()[2];
        &self.values.data()[(i * n + j) * c..(i * n + j + 1) * c]
    }
}

/// Maps one relation vector to a similarity score.
#[derive(Clone, Debug, PartialEq)]
pub enum ScoreHead {
    /// `σ(ω·r + b)`.
    AbsDiff { linear: Linear },
    /// `σ(W₂·relu(W₁·r + b₁) + b₂)`.
    TaskLevel { hidden: Linear, output: Linear },
}

#[derive(Clone, Copy, Debug)]
pub enum BoundScoreHead {
    AbsDiff {
        linear: BoundLinear,
    },
    TaskLevel {
        hidden: BoundLinear,
        output: BoundLinear,
    },
}

impl ScoreHead {
    pub fn init<R: Rng + ?Sized>(
        kind: RelationKind,
        width: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        match kind {
            RelationKind::AbsDiff => ScoreHead::AbsDiff {
                linear: Linear::init(width, 1, rng),
            },
            RelationKind::TaskLevel => ScoreHead::TaskLevel {
                hidden: Linear::init(width, hidden, rng),
                output: Linear::init(hidden, 1, rng),
            },
        }
    }

    pub fn kind(&self) -> RelationKind {
        match self {
            ScoreHead::AbsDiff { .. } => RelationKind::AbsDiff,
            ScoreHead::TaskLevel { .. } => RelationKind::TaskLevel,
        }
    }

    pub fn params(&self) -> Vec<&Tensor> {
        match self {
            ScoreHead::AbsDiff { linear } => linear.params().to_vec(),
            ScoreHead::TaskLevel { hidden, output } => {
                hidden.params().into_iter().chain(output.params()).collect()
            }
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            ScoreHead::AbsDiff { linear } => linear.params_mut().into_iter().collect(),
            ScoreHead::TaskLevel { hidden, output } => hidden
                .params_mut()
                .into_iter()
                .chain(output.params_mut())
                .collect(),
        }
    }

    /// Consumes vars in [`ScoreHead::params`] order.
    pub fn bind(&self, vars: &mut impl Iterator<Item = Var>) -> BoundScoreHead {
        match self {
            ScoreHead::AbsDiff { .. } => BoundScoreHead::AbsDiff {
                linear: Linear::bind(vars),
            },
            ScoreHead::TaskLevel { .. } => BoundScoreHead::TaskLevel {
                hidden: Linear::bind(vars),
                output: Linear::bind(vars),
            },
        }
    }
}

impl BoundScoreHead {
    pub fn kind(&self) -> RelationKind {
        match self {
            BoundScoreHead::AbsDiff { .. } => RelationKind::AbsDiff,
            BoundScoreHead::TaskLevel { .. } => RelationKind::TaskLevel,
        }
    }
}

/// Scores every pair of a relation tensor, giving an `n × n` matrix in `(0, 1)`.
pub fn score(tape: &mut Tape, relation: Relation, head: &BoundScoreHead) -> Result<Var> {
    let logits = score_logits(tape, relation, head)?;
    Ok(tape.sigmoid(logits))
}

/// The `n × n` pre-sigmoid scores behind [`score`].
pub fn score_logits(tape: &mut Tape, relation: Relation, head: &BoundScoreHead) -> Result<Var> {
    if relation.kind != head.kind() {
        return Err(Error::Contract(format!(
            "{} relation cannot be scored by a {} head",
            relation.kind,
            head.kind()
        )));
    }
    let shape = tape.value(relation.values).shape().to_vec();
    let [n, n2, c] = shape[..] else {
        return Err(Error::dim("score", &shape, &[]));
    };
    let flat = tape.reshape(relation.values, &[n * n2, c])?;
    let logits = match head {
        BoundScoreHead::AbsDiff { linear } => linear.forward(tape, flat)?,
        BoundScoreHead::TaskLevel { hidden, output } => {
            let h = hidden.forward(tape, flat)?;
            let h = tape.relu(h);
            output.forward(tape, h)?
        }
    };
    tape.reshape(logits, &[n, n2])
}
