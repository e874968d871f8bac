//! The five experiment pipelines behind the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use taskrel_core::episode::{Dataset, EpisodeSpec};
use taskrel_core::gnn::{EpisodeModel, GnnModel};
use taskrel_core::relation::RelationKind;
use taskrel_core::tensor::Tensor;
use taskrel_core::trainer::{
    evaluate, mean_and_ci95, train, write_loss_csv, EvalReport, LossRecord,
};

use crate::config::{RunConfig, CONFIG_FILE};
use crate::error::{io_at, CliError, Result};
use crate::heatmap;
use crate::params::{self, PARAMS_FILE};

pub const LOSS_FILE: &str = "loss.csv";
pub const EVAL_FILE: &str = "eval.csv";
pub const ABLATION_FILE: &str = "ablation.csv";
pub const COMPARE_FILE: &str = "compare.csv";
pub const HEATMAP_CSV: &str = "heatmap.csv";
pub const HEATMAP_PGM: &str = "heatmap.pgm";
pub const DEFAULT_EVAL_EPISODES: usize = 10_000;

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_at(dir))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(io_at(path))
}

/// Initialises a model for `config` and trains it on the training dataset.
pub fn train_model(config: &RunConfig, dataset: &Dataset) -> Result<(GnnModel, Vec<LossRecord>)> {
    let model_config = config.model.model_config(dataset.feature_dim());
    let mut model = GnnModel::init(&model_config, config.seed)?;
    let curve = train(&mut model, dataset, &config.episode, &config.train)?;
    Ok((model, curve))
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub model: GnnModel,
    pub curve: Vec<LossRecord>,
}

/// Writes `config.txt`, `loss.csv` and `params.txt` into `output.dir`.
pub fn cmd_train(config_path: &Path) -> Result<TrainOutcome> {
    let config = RunConfig::load(config_path)?;
    let run_dir = config.output_dir.clone();
    create_dir(&run_dir)?;
    config.write(&run_dir)?;
    let dataset = config.train_dataset()?;
    let (model, curve) = train_model(&config, &dataset)?;
    let loss_path = run_dir.join(LOSS_FILE);
    write_loss_csv(&loss_path, &curve)?;
    params::save(&model, &run_dir.join(PARAMS_FILE))?;
    Ok(TrainOutcome {
        run_dir,
        model,
        curve,
    })
}

/// The resolved config and trained model stored in a run directory.
pub fn load_run(run_dir: &Path) -> Result<(RunConfig, GnnModel)> {
    let params_path = run_dir.join(PARAMS_FILE);
    if !params_path.is_file() {
        return Err(CliError::Io {
            path: params_path,
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no trained parameters"),
        });
    }
    let config = RunConfig::load(run_dir.join(CONFIG_FILE))?;
    let model = params::load(&params_path)?;
    Ok((config, model))
}

/// The run's episode spec with its label fraction replaced.
pub fn eval_spec(config: &RunConfig, labeled_fraction: f64) -> EpisodeSpec {
    EpisodeSpec {
        labeled_fraction,
        ..config.episode.clone()
    }
}

#[derive(Clone, Debug)]
pub struct FractionReport {
    pub labeled_fraction: f64,
    pub report: EvalReport,
}

/// Evaluates a trained run once per label fraction and writes `eval.csv`.
///
/// An empty `fractions` uses the run's own `episode.labeled_fraction`. Every
/// fraction sees episodes from the same `eval.seed` streams.
pub fn cmd_eval(run_dir: &Path, episodes: usize, fractions: &[f64]) -> Result<Vec<FractionReport>> {
    let (config, model) = load_run(run_dir)?;
    let dataset = config.eval_dataset()?;
    let fractions = if fractions.is_empty() {
        vec![config.episode.labeled_fraction]
    } else {
        fractions.to_vec()
    };
    let mut out = Vec::with_capacity(fractions.len());
    for f in fractions {
        let spec = eval_spec(&config, f);
        let report = evaluate(&model, &dataset, &spec, episodes, config.eval_seed)?;
        out.push(FractionReport {
            labeled_fraction: f,
            report,
        });
    }
    let mut text = String::from("labeled_fraction,mean,ci95,episodes,checksum\n");
    for r in &out {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.labeled_fraction,
            r.report.mean_accuracy,
            r.report.ci95,
            r.report.episode_count,
            r.report.stream_checksum
        ));
    }
    write_text(&run_dir.join(EVAL_FILE), &text)?;
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct VariantReport {
    pub name: String,
    pub relations: Vec<RelationKind>,
    pub report: EvalReport,
}

/// Baseline, task-level relation at each single layer, then at every layer.
pub fn ablation_variants(layers: usize) -> Vec<(String, Vec<RelationKind>)> {
    let mut out = vec![("baseline".to_string(), vec![RelationKind::AbsDiff; layers])];
    for l in 0..layers {
        let mut kinds = vec![RelationKind::AbsDiff; layers];
        kinds[l] = RelationKind::TaskLevel;
        out.push((format!("tlrm_layer{}", l + 1), kinds));
    }
    out.push((
        "tlrm_all".to_string(),
        vec![RelationKind::TaskLevel; layers],
    ));
    out
}

/// Trains each variant from the same seed and evaluates all of them on one
/// episode stream.
fn train_and_compare(
    config: &RunConfig,
    variants: Vec<(String, Vec<RelationKind>)>,
) -> Result<Vec<VariantReport>> {
    let train_set = config.train_dataset()?;
    let eval_set = config.eval_dataset()?;
    let reports: Vec<VariantReport> = variants
        .into_par_iter()
        .map(|(name, relations)| {
            let variant = config.with_relations(relations.clone());
            let (model, _) = train_model(&variant, &train_set)?;
            let report = evaluate(
                &model,
                &eval_set,
                &config.episode,
                config.train.eval_episodes,
                config.eval_seed,
            )?;
            Ok(VariantReport {
                name,
                relations,
                report,
            })
        })
        .collect::<Result<_>>()?;
    if let Some(r) = reports
        .iter()
        .find(|r| r.report.stream_checksum != reports[0].report.stream_checksum)
    {
        return Err(CliError::Core(taskrel_core::Error::Contract(format!(
            "variant {} was evaluated on a different episode stream",
            r.name
        ))));
    }
    Ok(reports)
}

fn report_csv(rows: &[(&str, String, &EvalReport)]) -> String {
    let mut text = String::from("variant,relations,mean,ci95,episodes,checksum\n");
    for (name, relations, r) in rows {
        text.push_str(&format!(
            "{name},{relations},{},{},{},{}\n",
            r.mean_accuracy, r.ci95, r.episode_count, r.stream_checksum
        ));
    }
    text
}

fn relation_names(kinds: &[RelationKind]) -> String {
    kinds
        .iter()
        .map(|k| k.as_str())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Layer ablation over a three-layer model; writes `ablation.csv`.
pub fn cmd_ablate(config_path: &Path) -> Result<Vec<VariantReport>> {
    let config = RunConfig::load(config_path)?;
    let layers = config.model.relations.len();
    if layers != 3 {
        return Err(CliError::InvalidValue {
            key: "model.layers".into(),
            value: layers.to_string(),
            reason: "ablation needs a three-layer model".into(),
        });
    }
    create_dir(&config.output_dir)?;
    config.write(&config.output_dir)?;
    let reports = train_and_compare(&config, ablation_variants(layers))?;
    let rows: Vec<_> = reports
        .iter()
        .map(|r| (r.name.as_str(), relation_names(&r.relations), &r.report))
        .collect();
    write_text(&config.output_dir.join(ABLATION_FILE), &report_csv(&rows))?;
    Ok(reports)
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub abs_diff: EvalReport,
    pub tlrm: EvalReport,
    /// Mean of per-episode `tlrm − abs_diff` accuracy differences.
    pub delta: f64,
    /// Paired 95% half-width of `delta`.
    pub delta_ci95: f64,
}

/// Absolute-difference versus task-level relations at every layer; writes
/// `compare.csv` with both models and their paired difference.
pub fn cmd_compare(config_path: &Path) -> Result<Comparison> {
    let config = RunConfig::load(config_path)?;
    create_dir(&config.output_dir)?;
    config.write(&config.output_dir)?;
    let layers = config.model.relations.len();
    let mut reports = train_and_compare(
        &config,
        vec![
            ("abs_diff".into(), vec![RelationKind::AbsDiff; layers]),
            ("tlrm".into(), vec![RelationKind::TaskLevel; layers]),
        ],
    )?
    .into_iter();
    let (a, t) = match (reports.next(), reports.next()) {
        (Some(a), Some(t)) => (a.report, t.report),
        _ => unreachable!("two variants were trained"),
    };
    let diffs: Vec<f64> = t
        .accuracies
        .iter()
        .zip(&a.accuracies)
        .map(|(t, a)| t - a)
        .collect();
    let (delta, delta_ci95) = mean_and_ci95(&diffs);
    let delta_report = EvalReport {
        mean_accuracy: delta,
        ci95: delta_ci95,
        episode_count: diffs.len(),
        accuracies: diffs,
        stream_checksum: a.stream_checksum.clone(),
    };
    let kinds = |k| relation_names(&vec![k; layers]);
    let text = report_csv(&[
        ("abs_diff", kinds(RelationKind::AbsDiff), &a),
        ("tlrm", kinds(RelationKind::TaskLevel), &t),
        ("delta", "tlrm minus abs_diff".into(), &delta_report),
    ]);
    write_text(&config.output_dir.join(COMPARE_FILE), &text)?;
    Ok(Comparison {
        abs_diff: a,
        tlrm: t,
        delta,
        delta_ci95,
    })
}

/// Averages support × query similarity of `model` and writes the CSV and PGM
/// into `dir`.
pub fn export_heatmap<M: EpisodeModel + ?Sized>(
    model: &M,
    dataset: &Dataset,
    spec: &EpisodeSpec,
    episodes: usize,
    seed: u64,
    dir: &Path,
) -> Result<Tensor> {
    let matrix = heatmap::support_query_average(model, dataset, spec, episodes, seed)?;
    create_dir(dir)?;
    heatmap::write_csv(&matrix, &dir.join(HEATMAP_CSV))?;
    heatmap::write_pgm(&matrix, &dir.join(HEATMAP_PGM))?;
    Ok(matrix)
}

/// Overrides of the run's episode shape for [`cmd_heatmap`].
#[derive(Clone, Debug, Default)]
pub struct HeatmapShape {
    pub n_way: Option<usize>,
    pub k_shot: Option<usize>,
    pub queries: Option<usize>,
}

/// Heatmap of a trained run on fully labelled evaluation episodes.
pub fn cmd_heatmap(run_dir: &Path, episodes: usize, shape: &HeatmapShape) -> Result<Tensor> {
    let (config, model) = load_run(run_dir)?;
    let base = &config.episode;
    let spec = EpisodeSpec {
        n_way: shape.n_way.unwrap_or(base.n_way),
        k_shot: shape.k_shot.unwrap_or(base.k_shot),
        queries_per_class: shape.queries.unwrap_or(base.queries_per_class),
        labeled_fraction: 1.0,
        transductive: base.transductive,
    };
    let dataset = config.eval_dataset()?;
    export_heatmap(&model, &dataset, &spec, episodes, config.eval_seed, run_dir)
}
