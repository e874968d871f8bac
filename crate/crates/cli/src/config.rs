//! Flat `key = value` run configuration.
//!
//! Lines are `section.key = value`; blank lines and `#` comments are ignored.
//! Relative paths are resolved against the directory of the config file.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use taskrel_core::episode::{load_csv_dataset, make_synthetic_dataset, Dataset, EpisodeSpec};
use taskrel_core::gnn::{Aggregation, ModelConfig};
use taskrel_core::relation::RelationKind;
use taskrel_core::trainer::TrainConfig;

use crate::error::{io_at, CliError, Result};

pub const CONFIG_FILE: &str = "config.txt";

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub samples_per_class: usize,
    pub dim: usize,
    pub separation: f64,
    pub noise: f64,
    pub seed: u64,
    /// Evaluation draws fresh classes from the same generator settings.
    pub eval_classes: usize,
    pub eval_seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    /// Directories of per-class CSV files; evaluation reuses `path` when
    /// `eval_path` is absent.
    Csv {
        path: PathBuf,
        eval_path: Option<PathBuf>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelShape {
    pub embed_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub relations: Vec<RelationKind>,
    pub head_hidden: Option<usize>,
    pub aggregation: Aggregation,
}

impl ModelShape {
    pub fn model_config(&self, input_dim: usize) -> ModelConfig {
        ModelConfig {
            input_dim,
            encoder_hidden: self.encoder_hidden.clone(),
            embed_dim: self.embed_dim,
            relations: self.relations.clone(),
            head_hidden: self.head_hidden,
            aggregation: self.aggregation,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub dataset: DatasetSource,
    pub episode: EpisodeSpec,
    pub model: ModelShape,
    /// `train.seed` is always `seed`.
    pub train: TrainConfig,
    pub eval_seed: u64,
}

const KEYS: &[&str] = &[
    "seed",
    "output.dir",
    "dataset.source",
    "dataset.path",
    "dataset.eval_path",
    "dataset.classes",
    "dataset.samples_per_class",
    "dataset.dim",
    "dataset.separation",
    "dataset.noise",
    "dataset.seed",
    "dataset.eval_classes",
    "dataset.eval_seed",
    "episode.n_way",
    "episode.k_shot",
    "episode.queries",
    "episode.labeled_fraction",
    "episode.transductive",
    "model.embed_dim",
    "model.encoder_hidden",
    "model.layers",
    "model.relation",
    "model.relations",
    "model.head_hidden",
    "model.aggregation",
    "train.episodes",
    "train.lr",
    "train.lr_decay",
    "train.lr_decay_every",
    "train.weight_decay",
    "train.adam_beta1",
    "train.adam_beta2",
    "train.adam_eps",
    "train.edge_loss_weight",
    "eval.episodes",
    "eval.seed",
];

struct Entry {
    value: String,
    line: usize,
}

struct Fields {
    file: PathBuf,
    base: PathBuf,
    entries: BTreeMap<String, Entry>,
}

fn invalid(key: &str, value: &str, reason: impl ToString) -> CliError {
    CliError::InvalidValue {
        key: key.to_string(),
        value: value.to_string(),
        reason: reason.to_string(),
    }
}

impl Fields {
    fn parse(text: &str, file: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let Some((key, value)) = content.split_once('=') else {
                return Err(CliError::Syntax {
                    file: file.to_path_buf(),
                    line,
                    text: raw.to_string(),
                });
            };
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(CliError::UnknownField {
                    file: file.to_path_buf(),
                    line,
                    key: key.to_string(),
                });
            }
            let entry = Entry {
                value: value.trim().to_string(),
                line,
            };
            if entries.insert(key.to_string(), entry).is_some() {
                return Err(CliError::DuplicateField {
                    file: file.to_path_buf(),
                    line,
                    key: key.to_string(),
                });
            }
        }
        let base = file.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Fields {
            file: file.to_path_buf(),
            base,
            entries,
        })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(|e| e.value.as_str())
    }

    fn invalid(&self, key: &str, reason: impl ToString) -> CliError {
        let (value, at) = match self.entries.get(key) {
            Some(e) => (
                e.value.as_str(),
                format!(" ({}:{})", self.file.display(), e.line),
            ),
            None => ("", String::new()),
        };
        invalid(key, value, format!("{}{at}", reason.to_string()))
    }

    fn get<T>(&self, key: &str) -> Result<Option<T>>
    where
        T: FromStr,
        T::Err: ToString,
    {
        self.raw(key)
            .map(|v| v.parse().map_err(|e: T::Err| self.invalid(key, e)))
            .transpose()
    }

    fn or<T>(&self, key: &str, default: T) -> Result<T>
    where
        T: FromStr,
        T::Err: ToString,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn require<T>(&self, key: &'static str) -> Result<T>
    where
        T: FromStr,
        T::Err: ToString,
    {
        self.get(key)?.ok_or(CliError::MissingField(key))
    }

    fn list<T>(&self, key: &str) -> Result<Option<Vec<T>>>
    where
        T: FromStr,
        T::Err: ToString,
    {
        let Some(v) = self.raw(key) else {
            return Ok(None);
        };
        if v.is_empty() {
            return Ok(Some(Vec::new()));
        }
        v.split(',')
            .map(|item| {
                item.trim()
                    .parse()
                    .map_err(|e: T::Err| self.invalid(key, e))
            })
            .collect::<Result<Vec<T>>>()
            .map(Some)
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.raw(key).map(|v| resolve(&self.base, v))
    }
}

fn resolve(base: &Path, value: &str) -> PathBuf {
    let joined = base.join(value);
    std::path::absolute(&joined).unwrap_or(joined)
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_at(path))?;
        Self::parse(&text, path)
    }

    /// `file` names the source in errors and anchors relative paths.
    pub fn parse(text: &str, file: &Path) -> Result<Self> {
        let f = Fields::parse(text, file)?;
        let seed: u64 = f.require("seed")?;
        let output_dir = f
            .path("output.dir")
            .ok_or(CliError::MissingField("output.dir"))?;

        let source: String = f.require("dataset.source")?;
        let dataset = match source.as_str() {
            "synthetic" => {
                let classes = f.or("dataset.classes", 64)?;
                let data_seed = f.or("dataset.seed", seed.wrapping_add(1))?;
                DatasetSource::Synthetic(SyntheticSpec {
                    classes,
                    samples_per_class: f.or("dataset.samples_per_class", 30)?,
                    dim: f.or("dataset.dim", 16)?,
                    separation: f.or("dataset.separation", 5.0)?,
                    noise: f.or("dataset.noise", 0.25)?,
                    seed: data_seed,
                    eval_classes: f.or("dataset.eval_classes", classes)?,
                    eval_seed: f.or("dataset.eval_seed", data_seed.wrapping_add(1))?,
                })
            }
            "csv" => DatasetSource::Csv {
                path: f
                    .path("dataset.path")
                    .ok_or(CliError::MissingField("dataset.path"))?,
                eval_path: f.path("dataset.eval_path"),
            },
            _ => return Err(f.invalid("dataset.source", "expected synthetic or csv")),
        };

        let episode = EpisodeSpec {
            n_way: f.require("episode.n_way")?,
            k_shot: f.require("episode.k_shot")?,
            queries_per_class: f.or("episode.queries", 1)?,
            labeled_fraction: f.or("episode.labeled_fraction", 1.0)?,
            transductive: f.or("episode.transductive", true)?,
        };

        let layers: Option<usize> = f.get("model.layers")?;
        let relations = match f.list::<RelationKind>("model.relations")? {
            Some(list) => {
                if f.raw("model.relation").is_some() {
                    return Err(f.invalid(
                        "model.relation",
                        "give either model.relation or model.relations",
                    ));
                }
                if layers.is_some_and(|l| l != list.len()) {
                    return Err(f.invalid(
                        "model.layers",
                        format!("model.relations lists {} layers", list.len()),
                    ));
                }
                list
            }
            None => vec![f.or("model.relation", RelationKind::AbsDiff)?; layers.unwrap_or(3)],
        };
        let model = ModelShape {
            embed_dim: f.or("model.embed_dim", 16)?,
            encoder_hidden: f.list("model.encoder_hidden")?.unwrap_or_default(),
            relations,
            head_hidden: f.get("model.head_hidden")?,
            aggregation: f.or("model.aggregation", Aggregation::Sum)?,
        };

        let defaults = TrainConfig::default();
        let train = TrainConfig {
            initial_lr: f.or("train.lr", defaults.initial_lr)?,
            lr_decay_factor: f.or("train.lr_decay", defaults.lr_decay_factor)?,
            lr_decay_every: f.or("train.lr_decay_every", defaults.lr_decay_every)?,
            weight_decay: f.or("train.weight_decay", defaults.weight_decay)?,
            adam_beta1: f.or("train.adam_beta1", defaults.adam_beta1)?,
            adam_beta2: f.or("train.adam_beta2", defaults.adam_beta2)?,
            adam_eps: f.or("train.adam_eps", defaults.adam_eps)?,
            total_episodes: f.require("train.episodes")?,
            eval_episodes: f.or("eval.episodes", defaults.eval_episodes)?,
            edge_loss_weight: f.or("train.edge_loss_weight", defaults.edge_loss_weight)?,
            seed,
        };

        let config = RunConfig {
            seed,
            output_dir,
            dataset,
            episode,
            model,
            train,
            eval_seed: f.or("eval.seed", seed.wrapping_add(3))?,
        };
        config.validate().map_err(|e| match e {
            CliError::Core(inner) => invalid_from_core(&f, inner),
            other => other,
        })?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.episode.validate()?;
        self.train.validate()?;
        self.model.model_config(1).validate()?;
        if self.train.eval_episodes == 0 {
            return Err(invalid("eval.episodes", "0", "must be positive"));
        }
        Ok(())
    }

    /// Every field, defaults included, in a form [`RunConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |key: &str, value: &dyn std::fmt::Display| {
            writeln!(out, "{key} = {value}").expect("writing to a String");
        };
        put("seed", &self.seed);
        put("output.dir", &self.output_dir.display());
        match &self.dataset {
            DatasetSource::Synthetic(s) => {
                put("dataset.source", &"synthetic");
                put("dataset.classes", &s.classes);
                put("dataset.samples_per_class", &s.samples_per_class);
                put("dataset.dim", &s.dim);
                put("dataset.separation", &s.separation);
                put("dataset.noise", &s.noise);
                put("dataset.seed", &s.seed);
                put("dataset.eval_classes", &s.eval_classes);
                put("dataset.eval_seed", &s.eval_seed);
            }
            DatasetSource::Csv { path, eval_path } => {
                put("dataset.source", &"csv");
                put("dataset.path", &path.display());
                if let Some(p) = eval_path {
                    put("dataset.eval_path", &p.display());
                }
            }
        }
        let e = &self.episode;
        put("episode.n_way", &e.n_way);
        put("episode.k_shot", &e.k_shot);
        put("episode.queries", &e.queries_per_class);
        put("episode.labeled_fraction", &e.labeled_fraction);
        put("episode.transductive", &e.transductive);
        let m = &self.model;
        put("model.embed_dim", &m.embed_dim);
        put("model.encoder_hidden", &join(&m.encoder_hidden));
        put("model.relations", &join(&m.relations));
        if let Some(h) = m.head_hidden {
            put("model.head_hidden", &h);
        }
        put("model.aggregation", &m.aggregation);
        let t = &self.train;
        put("train.episodes", &t.total_episodes);
        put("train.lr", &t.initial_lr);
        put("train.lr_decay", &t.lr_decay_factor);
        put("train.lr_decay_every", &t.lr_decay_every);
        put("train.weight_decay", &t.weight_decay);
        put("train.adam_beta1", &t.adam_beta1);
        put("train.adam_beta2", &t.adam_beta2);
        put("train.adam_eps", &t.adam_eps);
        put("train.edge_loss_weight", &t.edge_loss_weight);
        put("eval.episodes", &t.eval_episodes);
        put("eval.seed", &self.eval_seed);
        out
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join(CONFIG_FILE);
        fs::write(&path, self.to_text()).map_err(io_at(&path))?;
        Ok(path)
    }

    pub fn train_dataset(&self) -> Result<Dataset> {
        Ok(match &self.dataset {
            DatasetSource::Synthetic(s) => make_synthetic_dataset(
                s.classes,
                s.samples_per_class,
                s.dim,
                s.separation,
                s.noise,
                s.seed,
            )?,
            DatasetSource::Csv { path, .. } => load_csv_dataset(path)?,
        })
    }

    pub fn eval_dataset(&self) -> Result<Dataset> {
        Ok(match &self.dataset {
            DatasetSource::Synthetic(s) => make_synthetic_dataset(
                s.eval_classes,
                s.samples_per_class,
                s.dim,
                s.separation,
                s.noise,
                s.eval_seed,
            )?,
            DatasetSource::Csv { path, eval_path } => {
                load_csv_dataset(eval_path.as_ref().unwrap_or(path))?
            }
        })
    }

    pub fn with_relations(&self, relations: Vec<RelationKind>) -> Self {
        let mut c = self.clone();
        c.model.relations = relations;
        c
    }
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Core validation errors only name the parameter, so the message is
/// rewrapped as a field error when the field can be found.
fn invalid_from_core(f: &Fields, e: taskrel_core::Error) -> CliError {
    let message = e.to_string();
    let field = [
        ("n_way", "episode.n_way"),
        ("labeled_fraction", "episode.labeled_fraction"),
        ("lr_decay_factor", "train.lr_decay"),
        ("initial_lr", "train.lr"),
        ("lr_decay_every", "train.lr_decay_every"),
        ("weight_decay", "train.weight_decay"),
        ("adam_beta1", "train.adam_beta1"),
        ("adam_beta2", "train.adam_beta2"),
        ("adam_eps", "train.adam_eps"),
        ("edge_loss_weight", "train.edge_loss_weight"),
        ("head_hidden", "model.head_hidden"),
        ("graph layer", "model.layers"),
        ("widths", "model.embed_dim"),
    ]
    .into_iter()
    .find(|(needle, _)| message.contains(needle));
    match field {
        Some((_, key)) => f.invalid(key, message),
        None => CliError::Core(e),
    }
}
