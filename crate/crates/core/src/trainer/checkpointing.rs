use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::record::RunRecord;
use crate::error::{Error, Result};
use crate::models::{
    Checkpoint, Classifier, ClassifierMeta, Discriminator, DiscriminatorArch, FrozenGenerator, GanState, Generator,
    GeneratorArch, MatchingMode,
};

const RUN_FORMAT: &str = "genifer-run";
const EXTENSION: &str = "ckpt";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    ClassifierInit,
    GanInit,
    Classifier,
    Gan,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::ClassifierInit => "classifier_init",
            Phase::GanInit => "gan_init",
            Phase::Classifier => "classifier",
            Phase::Gan => "gan",
        }
    }

    pub(crate) fn stream(self) -> u64 {
        match self {
            Phase::ClassifierInit => 0,
            Phase::GanInit => 1,
            Phase::Classifier => 2,
            Phase::Gan => 3,
        }
    }
}

/// State at the end of one phase.
#[derive(Clone, Debug)]
pub struct RunCheckpoint {
    pub config_hash: String,
    pub task: usize,
    pub phase: Phase,
    pub classifier: Classifier,
    pub gan: Option<GanState>,
    pub lambda_od: f64,
    /// Serialized state of the phase's random stream after it finished.
    pub rng_state: Option<serde_json::Value>,
    pub record: RunRecord,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GanMeta {
    mode: MatchingMode,
    generator: GeneratorArch,
    discriminator: DiscriminatorArch,
    trained_classes: Vec<usize>,
    ada_p: f64,
    previous_classes: Option<Vec<usize>>,
}

pub fn checkpoint_file_name(task: usize, phase: Phase) -> String {
    format!("task{task:03}-{}.{EXTENSION}", phase.name())
}

fn json<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::Format(e.to_string()))
}

pub fn to_checkpoint(ck: &RunCheckpoint) -> Result<Checkpoint> {
    let gan_meta = ck
        .gan
        .as_ref()
        .map(|g| GanMeta {
            mode: g.mode(),
            generator: g.generator().arch().clone(),
            discriminator: g.discriminator().arch().clone(),
            trained_classes: g.trained_classes().to_vec(),
            ada_p: g.ada_probability(),
            previous_classes: g.previous().map(|p| p.classes.clone()),
        });
    let meta = serde_json::json!({
        "format": RUN_FORMAT,
        "config_hash": ck.config_hash,
        "task": ck.task,
        "phase": ck.phase,
        "classifier": json(&ck.classifier.meta())?,
        "gan": json(&gan_meta)?,
        "lambda_od": ck.lambda_od,
        "rng": ck.rng_state,
        "record": json(&ck.record)?,
    });
    let mut c = Checkpoint::new(meta);
    c.push("classifier", ck.classifier.params().clone());
    if let Some(g) = &ck.gan {
        c.push("generator", g.generator().params().clone());
        c.push("generator_ema", g.ema().clone());
        c.push("discriminator", g.discriminator().params().clone());
        if let Some(p) = g.previous() {
            c.push("previous_generator", p.params.clone());
            c.push("previous_generator_ema", p.ema.clone());
        }
    }
    Ok(c)
}

pub fn from_checkpoint(c: &Checkpoint) -> Result<RunCheckpoint> {
    let format: String = c.meta_field("format")?;
    if format != RUN_FORMAT {
        return Err(Error::Format(format!("checkpoint format `{format}` is not `{RUN_FORMAT}`")));
    }
    let meta: ClassifierMeta = c.meta_field("classifier")?;
    let classifier = Classifier::from_parts(meta, c.set("classifier")?.clone())?;
    let gan_meta: Option<GanMeta> = c.meta_field("gan")?;
    let gan = match gan_meta {
        None => None,
        Some(m) => {
            let generator = Generator::from_parts(m.generator.clone(), c.set("generator")?.clone())?;
            let discriminator = Discriminator::from_parts(m.discriminator, c.set("discriminator")?.clone())?;
            let previous = match m.previous_classes {
                Some(classes) => Some(FrozenGenerator {
                    params: c.set("previous_generator")?.clone(),
                    ema: c.set("previous_generator_ema")?.clone(),
                    classes,
                }),
                None => None,
            };
            Some(GanState::from_parts(
                m.mode,
                generator,
                c.set("generator_ema")?.clone(),
                discriminator,
                previous,
                m.trained_classes,
                m.ada_p,
            )?)
        }
    };
    Ok(RunCheckpoint {
        config_hash: c.meta_field("config_hash")?,
        task: c.meta_field("task")?,
        phase: c.meta_field("phase")?,
        classifier,
        gan,
        lambda_od: c.meta_field("lambda_od")?,
        rng_state: c.meta_field("rng")?,
        record: c.meta_field("record")?,
    })
}

pub fn save_run_checkpoint(dir: &Path, ck: &RunCheckpoint) -> Result<PathBuf> {
    let path = dir.join(checkpoint_file_name(ck.task, ck.phase));
    to_checkpoint(ck)?.save(&path)?;
    Ok(path)
}

pub fn load_run_checkpoint(path: &Path) -> Result<RunCheckpoint> {
    from_checkpoint(&Checkpoint::load(path)?)
}

fn parse_name(name: &str) -> Option<(usize, Phase)> {
    let stem = name.strip_suffix(&format!(".{EXTENSION}"))?;
    let (task, phase) = stem.strip_prefix("task")?.split_once('-')?;
    let phase = match phase {
        "classifier" => Phase::Classifier,
        "gan" => Phase::Gan,
        _ => return None,
    };
    Some((task.parse().ok()?, phase))
}

/// The checkpoint of the latest completed phase in `dir`, if any.
pub fn find_latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>> {
    if !dir.exists() {
        return Ok(None);
    }
    let mut best: Option<((usize, Phase), PathBuf)> = None;
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        if let Some(key) = name.to_str().and_then(parse_name) {
            if best.as_ref().is_none_or(|(k, _)| key > *k) {
                best = Some((key, entry.path()));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip_and_order() {
        assert_eq!(parse_name(&checkpoint_file_name(3, Phase::Gan)), Some((3, Phase::Gan)));
        assert_eq!(parse_name("task002-classifier.ckpt"), Some((2, Phase::Classifier)));
        assert!(parse_name("task002-init.ckpt").is_none());
        assert!((1, Phase::Gan) > (1, Phase::Classifier));
        assert!((2, Phase::Classifier) > (1, Phase::Gan));
    }
}
