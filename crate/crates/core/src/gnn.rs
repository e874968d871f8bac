//! The L-layer graph network over an episode.
//!
//! Per layer: `V^ℓ = relu((s^{ℓ-1} V^{ℓ-1}) W + b)`, then the layer's relation
//! and score head give `s^ℓ`. Query predictions average last-layer similarity
//! over the visible support nodes of each class and normalise across classes.

use crate::embedding::{init_encoder_with, BoundEncoder, BoundLinear, Encoder, Linear};
use crate::episode::{episode_graphs, stream_rng, Episode, Layout};
use crate::error::{Error, Result};
use crate::relation::{relation, score_logits, BoundScoreHead, RelationKind, ScoreHead};
use crate::tensor::{Tape, Tensor, Var};

/// Layer-0 similarity between visible supports of different classes.
pub const EDGE_EPSILON: f64 = 0.01;

/// Layer-0 similarity for any pair involving a node without a visible label.
pub const EDGE_UNKNOWN: f64 = 0.5;

/// RNG stream of a seed reserved for parameter initialisation; training
/// episodes use streams counted up from zero.
pub const INIT_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_dim: usize,
    /// Hidden widths of the encoder between `input_dim` and `embed_dim`.
    pub encoder_hidden: Vec<usize>,
    pub embed_dim: usize,
    /// Relation kind of each graph layer; its length is the layer count.
    pub relations: Vec<RelationKind>,
    /// Hidden width of task-level score heads; defaults to `embed_dim`.
    pub head_hidden: Option<usize>,
    pub aggregation: Aggregation,
}

/// How node features are combined with layer similarities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Aggregation {
    /// `Σ_j s_ij V_j`.
    #[default]
    Sum,
    /// `Σ_j s_ij V_j / Σ_j s_ij`.
    Mean,
    /// `[V_i ‖ Σ_j s_ij V_j / Σ_j s_ij]`; `f_v` then maps `2C → C`.
    SelfMean,
}

impl Aggregation {
    pub fn as_str(self) -> &'static str {
        match self {
            Aggregation::Sum => "sum",
            Aggregation::Mean => "mean",
            Aggregation::SelfMean => "self_mean",
        }
    }

    /// Input width of `f_v` for embedding width `c`.
    pub fn transform_input(self, c: usize) -> usize {
        match self {
            Aggregation::Sum | Aggregation::Mean => c,
            Aggregation::SelfMean => 2 * c,
        }
    }
}

impl std::fmt::Display for Aggregation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sum" => Ok(Aggregation::Sum),
            "mean" => Ok(Aggregation::Mean),
            "self_mean" => Ok(Aggregation::SelfMean),
            other => Err(Error::Parameter(format!(
                "unknown aggregation {other:?} (expected sum, mean or self_mean)"
            ))),
        }
    }
}

impl ModelConfig {
    pub fn uniform(input_dim: usize, embed_dim: usize, layers: usize, kind: RelationKind) -> Self {
        ModelConfig {
            input_dim,
            encoder_hidden: Vec::new(),
            embed_dim,
            relations: vec![kind; layers],
            head_hidden: None,
            aggregation: Aggregation::Sum,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.relations.is_empty() {
            return Err(Error::Parameter(
                "model needs at least one graph layer".into(),
            ));
        }
        if self.input_dim == 0 || self.embed_dim == 0 || self.encoder_hidden.contains(&0) {
            return Err(Error::Parameter("model widths must be positive".into()));
        }
        if self.head_hidden == Some(0) {
            return Err(Error::Parameter("head_hidden must be positive".into()));
        }
        Ok(())
    }

    pub fn encoder_widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.encoder_hidden);
        w.push(self.embed_dim);
        w
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnnLayer {
    /// Node transform `f_v`.
    pub transform: Linear,
    pub head: ScoreHead,
}

impl GnnLayer {
    pub fn relation(&self) -> RelationKind {
        self.head.kind()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GnnModel {
    pub encoder: Encoder,
    pub layers: Vec<GnnLayer>,
    pub aggregation: Aggregation,
}

#[derive(Clone, Debug)]
struct BoundLayer {
    transform: BoundLinear,
    head: BoundScoreHead,
}

/// Model parameters placed on a tape.
#[derive(Clone, Debug)]
pub struct BoundModel {
    encoder: BoundEncoder,
    layers: Vec<BoundLayer>,
    aggregation: Aggregation,
    vars: Vec<Var>,
}

impl BoundModel {
    /// Parameter vars in [`GnnModel::params`] order.
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

impl GnnModel {
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = stream_rng(seed, INIT_STREAM);
        let encoder = init_encoder_with(&config.encoder_widths(), &mut rng)?;
        let c = config.embed_dim;
        let hidden = config.head_hidden.unwrap_or(c);
        let layers = config
            .relations
            .iter()
            .map(|&kind| GnnLayer {
                transform: Linear::init(config.aggregation.transform_input(c), c, &mut rng),
                head: ScoreHead::init(kind, c, hidden, &mut rng),
            })
            .collect();
        Ok(GnnModel {
            encoder,
            layers,
            aggregation: config.aggregation,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.encoder.output_dim()
    }

    pub fn relation_kinds(&self) -> Vec<RelationKind> {
        self.layers.iter().map(GnnLayer::relation).collect()
    }

    pub fn params(&self) -> Vec<&Tensor> {
        let mut out = self.encoder.params();
        for layer in &self.layers {
            out.extend(layer.transform.params());
            out.extend(layer.head.params());
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = self.encoder.params_mut();
        for layer in &mut self.layers {
            out.extend(layer.transform.params_mut());
            out.extend(layer.head.params_mut());
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    /// Records every parameter on `tape`, as trainable leaves or constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        let vars: Vec<Var> = self
            .params()
            .into_iter()
            .map(|p| {
                if trainable {
                    tape.param(p.clone())
                } else {
                    tape.constant(p.clone())
                }
            })
            .collect();
        self.bind_vars(&vars)
    }

    /// Builds the bound structure from vars already on a tape, which must
    /// follow [`GnnModel::params`] order.
    pub fn bind_vars(&self, vars: &[Var]) -> BoundModel {
        let mut it = vars.iter().copied();
        let encoder = self.encoder.bind(&mut it);
        let layers = self
            .layers
            .iter()
            .map(|layer| BoundLayer {
                transform: Linear::bind(&mut it),
                head: layer.head.bind(&mut it),
            })
            .collect();
        debug_assert!(it.next().is_none());
        BoundModel {
            encoder,
            layers,
            aggregation: self.aggregation,
            vars: vars.to_vec(),
        }
    }
}

/// Similarity scores of one layer over one layout.
#[derive(Clone, Debug, PartialEq)]
pub struct SimilarityMatrix {
    pub values: Tensor,
    pub layer: usize,
}

/// `T × N` query class probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub probs: Tensor,
}

impl Prediction {
    /// Most probable class of query `t`; ties go to the lowest index.
    pub fn argmax(&self, t: usize) -> usize {
        let row = self.probs.row(t);
        let mut best = 0;
        for (c, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = c;
            }
        }
        best
    }

    pub fn accuracy(&self, labels: &[usize]) -> f64 {
        let correct = labels
            .iter()
            .enumerate()
            .filter(|&(t, &y)| self.argmax(t) == y)
            .count();
        correct as f64 / labels.len() as f64
    }
}

/// True labels of the nodes of `layout`, in node order.
pub fn layout_labels(episode: &Episode, layout: &Layout) -> Vec<usize> {
    episode
        .support_labels
        .iter()
        .copied()
        .chain(layout.queries.iter().map(|&q| episode.query_labels[q]))
        .collect()
}

/// Whether each node of `layout` carries a visible label.
pub fn layout_visible(episode: &Episode, layout: &Layout) -> Vec<bool> {
    episode
        .label_mask
        .iter()
        .copied()
        .chain(layout.queries.iter().map(|_| false))
        .collect()
}

/// Layer-0 similarities from the visible labels.
///
/// Visible same-class pairs get 1, visible cross-class pairs [`EDGE_EPSILON`],
/// and any pair touching a query or a masked support node [`EDGE_UNKNOWN`].
pub fn init_edges(episode: &Episode, layout: &Layout) -> SimilarityMatrix {
    let labels = layout_labels(episode, layout);
    let visible = layout_visible(episode, layout);
    let n = layout.len();
    let mut values = Tensor::zeros(&[n, n]);
    let data = values.data_mut();
    for i in 0..n {
        for j in 0..n {
            data[i * n + j] = if i == j {
                1.0
            } else if visible[i] && visible[j] {
                if labels[i] == labels[j] {
                    1.0
                } else {
                    EDGE_EPSILON
                }
            } else {
                EDGE_UNKNOWN
            };
        }
    }
    SimilarityMatrix { values, layer: 0 }
}

/// `V_i = f_v(Σ_j s_ij V_j)` for every node, self-term included.
pub fn node_update(
    tape: &mut Tape,
    v_prev: Var,
    s_prev: Var,
    transform: &BoundLinear,
) -> Result<Var> {
    node_update_with(tape, v_prev, s_prev, transform, Aggregation::Sum)
}

pub fn node_update_with(
    tape: &mut Tape,
    v_prev: Var,
    s_prev: Var,
    transform: &BoundLinear,
    aggregation: Aggregation,
) -> Result<Var> {
    let (vs, ss) = (
        tape.value(v_prev).shape().to_vec(),
        tape.value(s_prev).shape().to_vec(),
    );
    if ss.len() != 2 || vs.len() != 2 || ss[0] != ss[1] || ss[1] != vs[0] {
        return Err(Error::dim("node_update", &vs, &ss));
    }
    let h = match aggregation {
        Aggregation::Sum => {
            let aggregated = tape.matmul(s_prev, v_prev)?;
            transform.forward(tape, aggregated)?
        }
        Aggregation::Mean => {
            let weights = tape.normalize_rows(s_prev)?;
            let aggregated = tape.matmul(weights, v_prev)?;
            transform.forward(tape, aggregated)?
        }
        Aggregation::SelfMean => {
            let c = vs[1];
            let w_shape = tape.value(transform.weight).shape().to_vec();
            if w_shape[0] != 2 * c {
                return Err(Error::dim("node_update", &w_shape, &[2 * c, c]));
            }
            let top: Vec<usize> = (0..c).collect();
            let bottom: Vec<usize> = (c..2 * c).collect();
            let w_self = tape.select_rows(transform.weight, &top)?;
            let w_agg = tape.select_rows(transform.weight, &bottom)?;
            let weights = tape.normalize_rows(s_prev)?;
            let aggregated = tape.matmul(weights, v_prev)?;
            let a = tape.matmul(v_prev, w_self)?;
            let b = tape.matmul(aggregated, w_agg)?;
            let sum = tape.add(a, b)?;
            tape.add_row(sum, transform.bias)?
        }
    };
    Ok(tape.relu(h))
}

/// Class-averaging matrix `n × N`: column `c` holds `1/count_c` on the
/// visible support nodes of class `c`.
fn class_average_matrix(episode: &Episode, layout: &Layout) -> Result<Tensor> {
    let n_way = episode.n_way;
    let mut counts = vec![0usize; n_way];
    for (&label, &vis) in episode.support_labels.iter().zip(&episode.label_mask) {
        if vis {
            counts[label] += 1;
        }
    }
    if let Some(c) = counts.iter().position(|&k| k == 0) {
        return Err(Error::Contract(format!(
            "class {c} has no visible support node"
        )));
    }
    let mut m = Tensor::zeros(&[layout.len(), n_way]);
    for (j, (&label, &vis)) in episode
        .support_labels
        .iter()
        .zip(&episode.label_mask)
        .enumerate()
    {
        if vis {
            m.data_mut()[j * n_way + label] = 1.0 / counts[label] as f64;
        }
    }
    Ok(m)
}

/// Query class probabilities for the queries of `layout`.
pub fn predict(tape: &mut Tape, s_last: Var, episode: &Episode, layout: &Layout) -> Result<Var> {
    let shape = tape.value(s_last).shape();
    if shape != [layout.len(), layout.len()] {
        return Err(Error::dim("predict", shape, &[layout.len(), layout.len()]));
    }
    let avg = tape.constant(class_average_matrix(episode, layout)?);
    let rows: Vec<usize> = layout.query_positions().collect();
    let query_rows = tape.select_rows(s_last, &rows)?;
    let per_class = tape.matmul(query_rows, avg)?;
    tape.normalize_rows(per_class)
}

/// [`predict`] on plain values.
pub fn predict_values(
    s_last: &SimilarityMatrix,
    episode: &Episode,
    layout: &Layout,
) -> Result<Prediction> {
    let mut tape = Tape::new();
    let s = tape.constant(s_last.values.clone());
    let p = predict(&mut tape, s, episode, layout)?;
    Ok(Prediction {
        probs: tape.value(p).clone(),
    })
}

/// Graph outputs for one layout.
#[derive(Clone, Debug)]
pub struct LayoutPass {
    pub layout: Layout,
    /// `s^1 … s^L`.
    pub similarities: Vec<Var>,
    /// Pre-sigmoid values of `similarities`.
    pub logits: Vec<Var>,
}

#[derive(Clone, Debug)]
pub struct Forward {
    pub passes: Vec<LayoutPass>,
    /// `T × N`, rows in episode query order.
    pub prediction: Var,
}

pub fn forward(tape: &mut Tape, model: &BoundModel, episode: &Episode) -> Result<Forward> {
    let features = tape.constant(episode.all_features());
    let embedded = model.encoder.encode(tape, features)?;
    let layouts = episode_graphs(episode);
    let total = episode.support_len() + episode.query_len();

    let mut passes = Vec::with_capacity(layouts.len());
    let mut predictions = Vec::with_capacity(layouts.len());
    for layout in layouts {
        let mut v = if layout.len() == total {
            embedded
        } else {
            tape.select_rows(embedded, &layout.feature_rows())?
        };
        let mut s = tape.constant(init_edges(episode, &layout).values);
        let mut similarities = Vec::with_capacity(model.layers.len());
        let mut logits = Vec::with_capacity(model.layers.len());
        for layer in &model.layers {
            v = node_update_with(tape, v, s, &layer.transform, model.aggregation)?;
            let r = relation(tape, v, layer.head.kind())?;
            let z = score_logits(tape, r, &layer.head)?;
            s = tape.sigmoid(z);
            logits.push(z);
            similarities.push(s);
        }
        predictions.push(predict(tape, s, episode, &layout)?);
        passes.push(LayoutPass {
            layout,
            similarities,
            logits,
        });
    }
    let prediction = if predictions.len() == 1 {
        predictions[0]
    } else {
        tape.concat_rows(&predictions)?
    };
    Ok(Forward { passes, prediction })
}

/// Anything that yields last-layer similarities for an episode.
pub trait EpisodeModel: Sync {
    /// One `n × n` matrix per layout of [`episode_graphs`].
    fn final_similarities(&self, episode: &Episode) -> Result<Vec<SimilarityMatrix>>;

    fn predict(&self, episode: &Episode) -> Result<Prediction> {
        let layouts = episode_graphs(episode);
        let sims = self.final_similarities(episode)?;
        let mut data = Vec::with_capacity(episode.query_len() * episode.n_way);
        for (layout, s) in layouts.iter().zip(&sims) {
            data.extend(predict_values(s, episode, layout)?.probs.into_data());
        }
        Ok(Prediction {
            probs: Tensor::new(vec![episode.query_len(), episode.n_way], data)?,
        })
    }
}

impl EpisodeModel for GnnModel {
    fn final_similarities(&self, episode: &Episode) -> Result<Vec<SimilarityMatrix>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let out = forward(&mut tape, &bound, episode)?;
        let layer = self.layers.len();
        Ok(out
            .passes
            .iter()
            .map(|p| SimilarityMatrix {
                values: tape
                    .value(*p.similarities.last().expect("at least one layer"))
                    .clone(),
                layer,
            })
            .collect())
    }

    fn predict(&self, episode: &Episode) -> Result<Prediction> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let out = forward(&mut tape, &bound, episode)?;
        Ok(Prediction {
            probs: tape.value(out.prediction).clone(),
        })
    }
}

/// Reference model whose similarity is the ground-truth same-class indicator,
/// mapped to `{EDGE_EPSILON, 1}`.
#[derive(Clone, Copy, Debug, Default)]
pub struct OracleSimilarity;

impl EpisodeModel for OracleSimilarity {
    fn final_similarities(&self, episode: &Episode) -> Result<Vec<SimilarityMatrix>> {
        Ok(episode_graphs(episode)
            .iter()
            .map(|layout| {
                let labels = layout_labels(episode, layout);
                let n = labels.len();
                let data = (0..n * n)
                    .map(|k| {
                        if labels[k / n] == labels[k % n] {
                            1.0
                        } else {
                            EDGE_EPSILON
                        }
                    })
                    .collect();
                SimilarityMatrix {
                    values: Tensor::new(vec![n, n], data).expect("square"),
                    layer: 0,
                }
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::episode::{make_synthetic_dataset, sample_episode, EpisodeSpec};

    const E: f64 = EDGE_EPSILON;

    fn tiny_episode(
        labels: Vec<usize>,
        mask: Vec<bool>,
        queries: Vec<usize>,
        n_way: usize,
    ) -> Episode {
        let d = 2;
        let s = labels.len();
        let q = queries.len();
        Episode {
            n_way,
            support_features: Tensor::new(vec![s, d], (0..s * d).map(|x| x as f64).collect())
                .unwrap(),
            support_labels: labels,
            label_mask: mask,
            query_features: Tensor::new(vec![q, d], (0..q * d).map(|x| -(x as f64)).collect())
                .unwrap(),
            query_labels: queries,
            transductive: true,
            provenance: Vec::new(),
        }
    }

    #[test]
    fn init_edges_two_way_one_shot() {
        let ep = tiny_episode(vec![0, 1], vec![true, true], vec![0], 2);
        let layout = &episode_graphs(&ep)[0];
        let s = init_edges(&ep, layout);
        let want = [1.0, E, 0.5, E, 1.0, 0.5, 0.5, 0.5, 1.0];
        assert_eq!(s.values.data(), &want);
    }

    #[test]
    fn init_edges_masked_support_acts_like_query() {
        // 2-way 2-shot, second shot of class 0 is unlabeled.
        let ep = tiny_episode(vec![0, 0, 1, 1], vec![true, false, true, true], vec![1], 2);
        let layout = &episode_graphs(&ep)[0];
        let s = init_edges(&ep, layout).values;
        for j in 0..5 {
            let want = if j == 1 { 1.0 } else { 0.5 };
            assert_eq!(s.at(1, j), want);
            assert_eq!(s.at(j, 1), want);
        }
        assert_eq!(s.at(2, 3), 1.0);
        assert_eq!(s.at(0, 2), E);
    }

    fn bound_linear(tape: &mut Tape, lin: &Linear) -> BoundLinear {
        BoundLinear {
            weight: tape.constant(lin.weight.clone()),
            bias: tape.constant(lin.bias.clone()),
        }
    }

    #[test]
    fn node_update_examples() {
        let v = Tensor::from_rows(&[[1.0, 2.0], [3.0, -4.0]]).unwrap();
        let mut tape = Tape::new();
        let id = bound_linear(&mut tape, &Linear::identity(2));
        let vv = tape.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        let eye = tape.constant(Tensor::eye(2));
        let out = node_update(&mut tape, vv, eye, &id).unwrap();
        assert_eq!(tape.value(out), tape.value(vv));

        let vv = tape.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        let ones = tape.constant(Tensor::filled(&[2, 2], 1.0));
        let out = node_update(&mut tape, vv, ones, &id).unwrap();
        assert_eq!(tape.value(out).data(), &[4.0, 6.0, 4.0, 6.0]);

        // Zero similarity row gives f_v(0) = relu(b).
        let mut lin = Linear::identity(2);
        lin.bias = Tensor::vector(vec![0.3, -0.2]);
        let f = bound_linear(&mut tape, &lin);
        let vv = tape.constant(v);
        let s = tape.constant(Tensor::from_rows(&[[0.0, 0.0], [1.0, 0.0]]).unwrap());
        let out = node_update(&mut tape, vv, s, &f).unwrap();
        assert_eq!(tape.value(out).row(0), &[0.3, 0.0]);

        let bad = tape.constant(Tensor::eye(3));
        assert!(matches!(
            node_update(&mut tape, vv, bad, &f),
            Err(Error::Dimension { .. })
        ));
    }

    /// `f_v(Σ_j w_ij x_j)` by explicit loops, `x_j` being `V_j` or `[V_i ‖ V_j]`.
    fn naive_update(v: &Tensor, s: &Tensor, lin: &Linear, agg: Aggregation) -> Tensor {
        let (n, c) = (v.rows(), v.cols());
        let out_w = lin.weight.cols();
        let mut out = Tensor::zeros(&[n, out_w]);
        for i in 0..n {
            let norm = match agg {
                Aggregation::Sum => 1.0,
                _ => (0..n).map(|j| s.at(i, j)).sum::<f64>(),
            };
            let mut input = Vec::new();
            if agg == Aggregation::SelfMean {
                input.extend_from_slice(v.row(i));
            }
            for k in 0..c {
                input.push((0..n).map(|j| s.at(i, j) * v.at(j, k)).sum::<f64>() / norm);
            }
            for o in 0..out_w {
                let mut acc = lin.bias.data()[o];
                for (r, x) in input.iter().enumerate() {
                    acc += x * lin.weight.at(r, o);
                }
                out.data_mut()[i * out_w + o] = acc.max(0.0);
            }
        }
        out
    }

    #[test]
    fn node_update_matches_loops_in_every_mode() {
        let mut rng = stream_rng(8, 0);
        for agg in [Aggregation::Sum, Aggregation::Mean, Aggregation::SelfMean] {
            for n in 1..5 {
                let c = 3;
                let v = Tensor::new(
                    vec![n, c],
                    (0..n * c).map(|_| rng.random_range(-2.0..2.0)).collect(),
                )
                .unwrap();
                let s = Tensor::new(
                    vec![n, n],
                    (0..n * n).map(|_| rng.random_range(0.01..1.0)).collect(),
                )
                .unwrap();
                let lin = Linear::init(agg.transform_input(c), c, &mut rng);
                let mut tape = Tape::new();
                let f = bound_linear(&mut tape, &lin);
                let (vv, sv) = (tape.constant(v.clone()), tape.constant(s.clone()));
                let out = node_update_with(&mut tape, vv, sv, &f, agg).unwrap();
                assert!(
                    tape.value(out)
                        .max_abs_diff(&naive_update(&v, &s, &lin, agg))
                        < 1e-12
                );
            }
        }
    }

    #[test]
    fn mean_aggregation_averages_and_self_mean_checks_width() {
        let mut tape = Tape::new();
        let id = bound_linear(&mut tape, &Linear::identity(2));
        let vv = tape.constant(Tensor::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap());
        let ones = tape.constant(Tensor::filled(&[2, 2], 1.0));
        let out = node_update_with(&mut tape, vv, ones, &id, Aggregation::Mean).unwrap();
        assert_eq!(tape.value(out).data(), &[2.0, 3.0, 2.0, 3.0]);
        assert!(matches!(
            node_update_with(&mut tape, vv, ones, &id, Aggregation::SelfMean),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn aggregation_names_round_trip() {
        for agg in [Aggregation::Sum, Aggregation::Mean, Aggregation::SelfMean] {
            assert_eq!(agg.to_string().parse::<Aggregation>().unwrap(), agg);
        }
        assert!("max".parse::<Aggregation>().is_err());
        assert_eq!(Aggregation::default(), Aggregation::Sum);
    }

    #[test]
    fn predict_examples() {
        let ep = tiny_episode(vec![0, 1], vec![true, true], vec![0], 2);
        let layout = &episode_graphs(&ep)[0];
        let s = Tensor::from_rows(&[[1.0, E, 0.5], [E, 1.0, 0.5], [0.8, 0.2, 1.0]]).unwrap();
        let p = predict_values(
            &SimilarityMatrix {
                values: s,
                layer: 1,
            },
            &ep,
            layout,
        )
        .unwrap();
        assert!((p.probs.at(0, 0) - 0.8).abs() < 1e-15);
        assert!((p.probs.at(0, 1) - 0.2).abs() < 1e-15);

        let n = 5;
        let ep = tiny_episode((0..5).collect(), vec![true; 5], vec![3], n);
        let layout = &episode_graphs(&ep)[0];
        let mut s = Tensor::filled(&[6, 6], E);
        s.data_mut()[5 * 6 + 3] = 1.0;
        let p = predict_values(
            &SimilarityMatrix {
                values: s,
                layer: 1,
            },
            &ep,
            layout,
        )
        .unwrap();
        assert_eq!(p.argmax(0), 3);
        assert!(p.probs.at(0, 3) > 1.0 / n as f64);

        let s = Tensor::filled(&[6, 6], 0.37);
        let p = predict_values(
            &SimilarityMatrix {
                values: s,
                layer: 1,
            },
            &ep,
            layout,
        )
        .unwrap();
        assert!(p.probs.row(0).iter().all(|&x| (x - 0.2).abs() < 1e-15));
        assert_eq!(p.argmax(0), 0);
    }

    #[test]
    fn predict_requires_visible_support_per_class() {
        let ep = tiny_episode(vec![0, 1], vec![true, false], vec![0], 2);
        let layout = &episode_graphs(&ep)[0];
        let s = SimilarityMatrix {
            values: Tensor::filled(&[3, 3], 0.5),
            layer: 1,
        };
        assert!(matches!(
            predict_values(&s, &ep, layout),
            Err(Error::Contract(_))
        ));
    }

    fn dataset() -> crate::episode::Dataset {
        make_synthetic_dataset(10, 12, 6, 2.0, 0.8, 5).unwrap()
    }

    #[test]
    fn oracle_similarity_recovers_labels() {
        let ds = dataset();
        for transductive in [true, false] {
            let mut spec = EpisodeSpec::new(5, 3, 2);
            spec.labeled_fraction = 0.4;
            spec.transductive = transductive;
            for i in 0..20 {
                let ep = sample_episode(&ds, &spec, &mut stream_rng(1, i)).unwrap();
                let p = OracleSimilarity.predict(&ep).unwrap();
                assert_eq!(p.accuracy(&ep.query_labels), 1.0);
            }
        }
    }

    #[test]
    fn forward_structure_and_prediction_rows() {
        let ds = dataset();
        for (layers, transductive) in [(1, true), (3, true), (2, false)] {
            let cfg = ModelConfig::uniform(6, 8, layers, RelationKind::TaskLevel);
            let model = GnnModel::init(&cfg, 4).unwrap();
            let mut spec = EpisodeSpec::new(5, 2, 3);
            spec.transductive = transductive;
            let ep = sample_episode(&ds, &spec, &mut stream_rng(0, 0)).unwrap();
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape, false);
            let out = forward(&mut tape, &bound, &ep).unwrap();
            assert_eq!(out.passes.len(), if transductive { 1 } else { 15 });
            for pass in &out.passes {
                assert_eq!(pass.similarities.len(), layers);
                for &s in &pass.similarities {
                    assert!(tape.value(s).data().iter().all(|&x| x > 0.0 && x < 1.0));
                }
            }
            let p = tape.value(out.prediction);
            assert_eq!(p.shape(), &[15, 5]);
            for t in 0..15 {
                assert!((p.row(t).iter().sum::<f64>() - 1.0).abs() < 1e-9);
                assert!(p.row(t).iter().all(|&x| x >= 0.0));
            }
            assert_eq!(&model.predict(&ep).unwrap().probs, p);
        }
    }

    #[test]
    fn relabelling_classes_permutes_prediction_columns() {
        let ds = dataset();
        let cfg = ModelConfig::uniform(6, 8, 2, RelationKind::AbsDiff);
        let model = GnnModel::init(&cfg, 9).unwrap();
        let perm = [2, 0, 3, 1];
        for transductive in [true, false] {
            let mut spec = EpisodeSpec::new(4, 2, 2);
            spec.transductive = transductive;
            let ep = sample_episode(&ds, &spec, &mut stream_rng(3, 1)).unwrap();
            let mut relabelled = ep.clone();
            for l in relabelled
                .support_labels
                .iter_mut()
                .chain(relabelled.query_labels.iter_mut())
            {
                *l = perm[*l];
            }
            let p = model.predict(&ep).unwrap().probs;
            let q = model.predict(&relabelled).unwrap().probs;
            for t in 0..ep.query_len() {
                for (c, &pc) in perm.iter().enumerate() {
                    assert!((p.at(t, c) - q.at(t, pc)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn non_transductive_queries_are_independent() {
        let ds = dataset();
        let cfg = ModelConfig::uniform(6, 8, 2, RelationKind::TaskLevel);
        let model = GnnModel::init(&cfg, 2).unwrap();
        let mut spec = EpisodeSpec::new(3, 2, 2);
        spec.transductive = false;
        let ep = sample_episode(&ds, &spec, &mut stream_rng(5, 5)).unwrap();
        let mut other = ep.clone();
        for t in 1..other.query_len() {
            for x in other.query_features.data_mut()[t * 6..(t + 1) * 6].iter_mut() {
                *x += 3.0;
            }
        }
        let p = model.predict(&ep).unwrap().probs;
        let q = model.predict(&other).unwrap().probs;
        assert_eq!(p.row(0), q.row(0));
        assert_ne!(p.row(1), q.row(1));
    }

    #[test]
    fn transductive_tlrm_queries_interact() {
        let ds = dataset();
        let cfg = ModelConfig::uniform(6, 8, 2, RelationKind::TaskLevel);
        let model = GnnModel::init(&cfg, 2).unwrap();
        let spec = EpisodeSpec::new(3, 2, 2);
        let ep = sample_episode(&ds, &spec, &mut stream_rng(5, 5)).unwrap();
        let mut other = ep.clone();
        for x in other.query_features.data_mut()[6..12].iter_mut() {
            *x += 0.5;
        }
        let p = model.predict(&ep).unwrap().probs;
        let q = model.predict(&other).unwrap().probs;
        assert!((p.at(0, 0) - q.at(0, 0)).abs() > 0.0);
    }

    #[test]
    fn params_and_binding_agree() {
        let cfg = ModelConfig {
            input_dim: 5,
            encoder_hidden: vec![7],
            embed_dim: 4,
            relations: vec![
                RelationKind::AbsDiff,
                RelationKind::TaskLevel,
                RelationKind::AbsDiff,
            ],
            head_hidden: Some(3),
            aggregation: Aggregation::Mean,
        };
        let mut model = GnnModel::init(&cfg, 1).unwrap();
        assert_eq!(model.relation_kinds(), cfg.relations);
        let shapes: Vec<Vec<usize>> = model.params().iter().map(|p| p.shape().to_vec()).collect();
        let shapes_mut: Vec<Vec<usize>> = model
            .params_mut()
            .iter()
            .map(|p| p.shape().to_vec())
            .collect();
        assert_eq!(shapes, shapes_mut);
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        for (&v, s) in bound.vars().iter().zip(&shapes) {
            assert_eq!(tape.value(v).shape(), &s[..]);
        }
        assert_eq!(model, GnnModel::init(&cfg, 1).unwrap());
        assert!(GnnModel::init(&ModelConfig::uniform(5, 4, 0, RelationKind::AbsDiff), 0).is_err());
    }
}
