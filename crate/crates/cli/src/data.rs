use tritrain::datagen::{
    generate, load_sparse_bow, read_labeled_csv, split, DomainDataset, HiddenLabels, LabeledSet, ShiftSpec,
    Standardizer, UnlabeledSet,
};
use tritrain::nnlib::Matrix;
use tritrain::trainer::Evaluator;

use crate::config::{Config, DataKind};
use crate::error::{CliError, Result};

pub struct Loaded {
    pub dataset: DomainDataset,
    pub test: Option<LabeledSet>,
}

impl Loaded {
    /// Test file if given, otherwise the target pool with its withheld labels.
    pub fn evaluator(&self) -> Result<Evaluator> {
        let set = match (&self.test, self.dataset.target_eval_set()) {
            (Some(t), _) => t.clone(),
            (None, Some(pool)) => pool,
            (None, None) => {
                return Err(CliError::Config(
                    "no labeled target data to evaluate on; set data.test_path or give target labels".into(),
                ))
            }
        };
        Ok(Evaluator::new(set, self.dataset.target_labels.clone())?)
    }
}

pub fn shift_spec(cfg: &Config) -> ShiftSpec {
    let d = &cfg.data;
    ShiftSpec {
        generator: d.generator,
        n_source: d.n_source,
        n_target: d.n_target,
        num_classes: cfg.model.num_classes,
        rotation_deg: d.rotation_deg,
        translation: d.translation.clone(),
        noise_sigma: d.noise_sigma,
        seed: cfg.seed,
    }
}

fn read_set(cfg: &Config, path: &std::path::Path) -> Result<LabeledSet> {
    Ok(match cfg.data.kind {
        DataKind::Sparse => load_sparse_bow(path, cfg.data.dim.expect("validated"))?,
        _ => read_labeled_csv(path)?,
    })
}

pub fn load(cfg: &Config) -> Result<Loaded> {
    let d = &cfg.data;
    let mut dataset = match d.kind {
        DataKind::Synthetic => generate(&shift_spec(cfg))?,
        DataKind::Csv | DataKind::Sparse => {
            let source = read_set(cfg, d.source_path.as_deref().expect("validated"))?;
            let target = read_set(cfg, d.target_path.as_deref().expect("validated"))?;
            let dim = source.dim();
            DomainDataset {
                source,
                target: UnlabeledSet { x: target.x },
                target_labels: Some(HiddenLabels::new(target.y)),
                val: LabeledSet {
                    x: Matrix::zeros((0, dim)),
                    y: vec![],
                },
                num_classes: cfg.model.num_classes,
            }
        }
    };
    dataset.validate()?;
    dataset = split(&dataset, d.val_count, cfg.seed)?;
    let mut test = d.test_path.as_deref().map(|p| read_set(cfg, p)).transpose()?;
    if d.standardize {
        let s = Standardizer::fit(&dataset.source.x)?;
        dataset = s.apply_dataset(&dataset);
        if let Some(t) = test.as_mut() {
            t.x = s.apply(&t.x);
        }
    }
    if dataset.source.dim() != cfg.model.input_dim {
        return Err(CliError::Config(format!(
            "model.input_dim is {} but the data has {} features",
            cfg.model.input_dim,
            dataset.source.dim()
        )));
    }
    if let Some(t) = &test {
        if t.dim() != dataset.source.dim() || t.y.iter().any(|&y| y >= cfg.model.num_classes) {
            return Err(CliError::Config("test set does not match the source features or classes".into()));
        }
    }
    Ok(Loaded { dataset, test })
}
