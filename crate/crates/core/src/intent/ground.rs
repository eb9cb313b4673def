use std::collections::BTreeMap;

use super::{EntityRef, ExecRef, IntentClass, IntentError, IntentRepresentation, ParamValue};
use crate::adapters::{AssetLibrary, AssetOrigin, TaskSpec, MOCK_SIM_BACKEND};
use crate::state::OperationalContext;

/// How a mention with no scene match may still resolve.
#[derive(Clone, Copy, PartialEq)]
enum Mode {
    /// Must name an existing entity.
    Existing,
    /// May name something to be created from the asset library.
    Creation,
}

struct Grounder<'a> {
    ctx: &'a OperationalContext,
    assets: &'a AssetLibrary,
    refs: BTreeMap<String, ExecRef>,
}

impl<'a> Grounder<'a> {
    fn record(&mut self, mention: &str, r: ExecRef) {
        self.refs.insert(mention.to_string(), r);
    }

    fn entity(&mut self, mention: &EntityRef, mode: Mode) -> Result<EntityRef, IntentError> {
        let scene = &self.ctx.scene;
        let name = mention.id.as_deref().unwrap_or(&mention.category).to_string();
        if let Some(e) = scene.entity(&name) {
            self.record(&name, ExecRef::Entity(e.id.clone()));
            return Ok(EntityRef::id(e.category.clone(), e.id.clone()));
        }
        let matches: Vec<&str> = scene.entities_of(&name).map(|e| e.id.as_str()).collect();
        match matches.len() {
            1 => {
                let id = matches[0].to_string();
                self.record(&name, ExecRef::Entity(id.clone()));
                Ok(EntityRef::id(name, id))
            }
            0 if mode == Mode::Creation => {
                let r = self.asset_for(&name)?;
                self.record(&name, r);
                Ok(EntityRef::category(name))
            }
            0 => Err(IntentError::UnknownReference {
                mention: name,
                reason: "no entity with this id or category in the scene".into(),
            }),
            _ => {
                let mut candidates: Vec<String> = matches.into_iter().map(str::to_string).collect();
                candidates.sort();
                Err(IntentError::AmbiguousReference { mention: name, candidates })
            }
        }
    }

    /// Resolves a category to a spawnable asset, or to a catalog entry that
    /// must be ingested first.
    fn asset_for(&self, category: &str) -> Result<ExecRef, IntentError> {
        let registered = &self.ctx.scene.registered_assets;
        let available = self.assets.by_category(category).find(|r| {
            r.registered_on(MOCK_SIM_BACKEND)
                && (r.source == AssetOrigin::Builtin || registered.iter().any(|a| a.asset_id == r.id))
        });
        if let Some(rec) = available {
            return Ok(ExecRef::Asset(rec.id.clone()));
        }
        if self.assets.catalog_categories().contains(category) || self.assets.by_category(category).next().is_some() {
            return Ok(ExecRef::CatalogAsset(category.to_string()));
        }
        Err(IntentError::UnknownReference {
            mention: category.to_string(),
            reason: "no scene entity, library asset or catalog entry for this category".into(),
        })
    }

    fn value(&mut self, v: &ParamValue, mode: Mode) -> Result<ParamValue, IntentError> {
        Ok(match v {
            ParamValue::Entity(e) => ParamValue::Entity(self.entity(e, mode)?),
            ParamValue::List(items) => {
                ParamValue::List(items.iter().map(|i| self.value(i, mode)).collect::<Result<_, _>>()?)
            }
            other => other.clone(),
        })
    }

    fn str_param<'p>(&self, intent: &'p IntentRepresentation, key: &str) -> Result<&'p str, IntentError> {
        intent.param(key).and_then(ParamValue::as_str).ok_or_else(|| IntentError::UnparsableIntent {
            message: format!("missing parameter {key}"),
            hint: super::GRAMMAR_HINT.into(),
        })
    }

    fn dataset(&mut self, task: &str) -> Result<(), IntentError> {
        if self.ctx.data.episodes_of(task).any(|e| e.success) {
            self.record(task, ExecRef::Dataset(task.to_string()));
            Ok(())
        } else {
            Err(IntentError::UnknownReference {
                mention: task.to_string(),
                reason: "no successful episodes for this dataset".into(),
            })
        }
    }

    /// Models are pretrained stubs, models with edited code, or models
    /// with a checkpoint; checkpoints take precedence.
    fn model(&mut self, model: &str) -> Result<(), IntentError> {
        if let Some(ck) = self.ctx.model.latest_checkpoint(model) {
            self.record(model, ExecRef::Checkpoint(ck.id.clone()));
            return Ok(());
        }
        if self.assets.is_stub_model(model) || self.ctx.model.code_assets.iter().any(|c| c.model == model) {
            self.record(model, ExecRef::Model(model.to_string()));
            return Ok(());
        }
        Err(IntentError::UnknownReference { mention: model.to_string(), reason: "unknown model".into() })
    }
}

/// Replaces every mention in the intent with an executable reference.
pub fn ground_references(
    mut intent: IntentRepresentation,
    ctx: &OperationalContext,
    assets: &AssetLibrary,
) -> Result<IntentRepresentation, IntentError> {
    let mut g = Grounder { ctx, assets, refs: intent.grounded_refs.clone() };
    match intent.intent_class {
        IntentClass::CreateScene | IntentClass::EditScene => {
            for key in ["entities", "relations", "forbidden_relations"] {
                if let Some(v) = intent.parameters.get(key).cloned() {
                    let grounded = g.value(&v, Mode::Creation)?;
                    intent.parameters.insert(key.into(), grounded);
                }
            }
            for key in ["remove_entities", "preserve"] {
                if let Some(v) = intent.parameters.get(key).cloned() {
                    let grounded = g.value(&v, Mode::Existing)?;
                    intent.parameters.insert(key.into(), grounded);
                }
            }
            if let Some(model) = intent.param("robot").and_then(ParamValue::as_str).map(str::to_string) {
                if !assets.is_robot(&model) {
                    return Err(IntentError::UnknownReference { mention: model, reason: "unknown robot model".into() });
                }
                g.record(&model, ExecRef::Robot(model.clone()));
            }
            let cams: Vec<String> = intent
                .param("remove_cameras")
                .and_then(ParamValue::as_list)
                .unwrap_or_default()
                .iter()
                .filter_map(|c| c.as_str().map(str::to_string))
                .collect();
            for cam in cams {
                if ctx.scene.camera(&cam).is_none() {
                    return Err(IntentError::UnknownReference { mention: cam, reason: "no camera with this id".into() });
                }
                g.record(&cam, ExecRef::Camera(cam.clone()));
            }
            if let Some(items) = intent.param("preserve").and_then(ParamValue::as_list) {
                for item in items {
                    if let Some(cam) = item.as_str().and_then(|s| s.strip_prefix("camera:")) {
                        if ctx.scene.camera(cam).is_none() {
                            return Err(IntentError::UnknownReference {
                                mention: cam.to_string(),
                                reason: "no camera with this id".into(),
                            });
                        }
                    }
                }
            }
        }
        IntentClass::IngestAsset => {
            let category = g.str_param(&intent, "category")?.to_string();
            let r = g.asset_for(&category)?;
            g.record(&category, r);
        }
        IntentClass::CollectTrajectories => {
            let task = g.str_param(&intent, "task")?.to_string();
            let spec = TaskSpec::parse(&task).ok_or_else(|| IntentError::UnknownReference {
                mention: task.clone(),
                reason: "task ids are pick_<category>, push_<category> or place_<category>_on_<category>".into(),
            })?;
            let missing = spec.missing_in(&ctx.scene);
            if !missing.is_empty() {
                return Err(IntentError::UnknownReference {
                    mention: task,
                    reason: format!("task requires a scene containing {}", missing.join(", ")),
                });
            }
            g.record(&task, ExecRef::Task(task.clone()));
        }
        IntentClass::TransformData => {
            let dataset = g.str_param(&intent, "dataset")?.to_string();
            g.dataset(&dataset)?;
        }
        IntentClass::TrainModel => {
            let model = g.str_param(&intent, "model")?.to_string();
            let dataset = g.str_param(&intent, "dataset")?.to_string();
            if !assets.is_stub_model(&model) && !ctx.model.code_assets.iter().any(|c| c.model == model) {
                return Err(IntentError::UnknownReference { mention: model, reason: "unknown model".into() });
            }
            g.record(&model, ExecRef::Model(model.clone()));
            g.dataset(&dataset)?;
        }
        IntentClass::EvaluateModel => {
            let bench = g.str_param(&intent, "benchmark")?.to_string();
            if !assets.is_benchmark(&bench) {
                return Err(IntentError::UnknownReference { mention: bench, reason: "unknown benchmark".into() });
            }
            g.record(&bench, ExecRef::Benchmark(bench.clone()));
            let models: Vec<String> = intent
                .param("models")
                .and_then(ParamValue::as_list)
                .unwrap_or_default()
                .iter()
                .filter_map(|m| m.as_str().map(str::to_string))
                .collect();
            for m in models {
                g.model(&m)?;
            }
        }
        IntentClass::EditModelCode => {
            let model = g.str_param(&intent, "model")?.to_string();
            g.model(&model)?;
        }
    }
    intent.grounded_refs = g.refs;
    Ok(intent)
}
