use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::adapters::AssetLibrary;
use crate::data::FormatId;
use crate::intent::EntityRef;
use crate::state::{OperationalContext, SpatialPredicate};

/// Fixed-point scale for real-valued descriptors, so states compare and
/// hash exactly.
pub const MICRO: f64 = 1e6;

pub fn micro(v: f64) -> i64 {
    (v * MICRO).round() as i64
}

/// Facts that no skill changes: what the catalog can supply and which
/// robots, benchmarks and pretrained models exist.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StaticEnv {
    /// Categories obtainable by ingestion.
    pub catalog: BTreeSet<String>,
    pub robots: BTreeSet<String>,
    pub benchmarks: BTreeSet<String>,
    pub models: BTreeSet<String>,
}

impl StaticEnv {
    pub fn from_library(assets: &AssetLibrary) -> Self {
        let mut catalog = assets.catalog_categories();
        catalog.extend(
            assets.records().filter(|r| r.source == crate::adapters::AssetOrigin::Ingested).map(|r| r.category.clone()),
        );
        StaticEnv {
            catalog,
            robots: assets.robots().map(str::to_string).collect(),
            benchmarks: assets.benchmarks().clone(),
            models: assets.stub_models().map(str::to_string).collect(),
        }
    }
}

/// Length statistics of a task's episodes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EpisodeStats {
    pub successes: u64,
    pub count: u64,
    pub length_sum: u64,
    pub length_sq_sum: u64,
}

impl EpisodeStats {
    pub fn add(&mut self, length: u64, success: bool, n: u64) {
        self.count += n;
        self.successes += if success { n } else { 0 };
        self.length_sum += length * n;
        self.length_sq_sum += length * length * n;
    }

    /// Coefficient of variation of episode lengths (population standard
    /// deviation over mean); 0 with at most one episode.
    pub fn length_cv(&self) -> f64 {
        if self.count <= 1 || self.length_sum == 0 {
            return 0.0;
        }
        let n = self.count as f64;
        let mean = self.length_sum as f64 / n;
        let var = (self.length_sq_sum as f64 / n - mean * mean).max(0.0);
        var.sqrt() / mean
    }
}

/// Finite summary of an operational context used as the planner's forward
/// model. Real-valued fields are fixed-point micro-units.
///
/// Entities created during planning get placeholder ids `+<category>#<k>`.
/// `touched` records baseline field paths written since abstraction, which
/// predicts preservation deviation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AbstractState {
    pub entities: BTreeMap<String, String>,
    pub relations: BTreeSet<(String, SpatialPredicate, String)>,
    pub robot: Option<String>,
    pub lighting: i64,
    pub color_temperature: i64,
    pub cameras: BTreeMap<String, i64>,
    pub asset_categories: BTreeSet<String>,
    pub touched: BTreeSet<String>,
    pub episodes: BTreeMap<String, EpisodeStats>,
    /// Format -> (task, successful episodes covered).
    pub exports: BTreeMap<FormatId, (String, u64)>,
    /// Code asset id -> valid.
    pub code: BTreeMap<String, bool>,
    /// Model -> (dataset, training metric in micro-units) of its latest checkpoint.
    pub trained: BTreeMap<String, (String, i64)>,
    pub reports: BTreeSet<(String, String)>,
    pub resources: i64,
    #[serde(skip)]
    pub env: Arc<StaticEnv>,
}

impl AbstractState {
    /// An empty context's abstraction over the given environment.
    pub fn empty(env: Arc<StaticEnv>, asset_categories: BTreeSet<String>) -> Self {
        let l = crate::state::Lighting::default();
        AbstractState {
            entities: BTreeMap::new(),
            relations: BTreeSet::new(),
            robot: None,
            lighting: micro(l.intensity),
            color_temperature: micro(l.color_temperature),
            cameras: BTreeMap::new(),
            asset_categories,
            touched: BTreeSet::new(),
            episodes: BTreeMap::new(),
            exports: BTreeMap::new(),
            code: BTreeMap::new(),
            trained: BTreeMap::new(),
            reports: BTreeSet::new(),
            resources: 0,
            env,
        }
    }

    pub fn from_context(ctx: &OperationalContext, assets: &AssetLibrary) -> Self {
        Self::with_env(ctx, assets, Arc::new(StaticEnv::from_library(assets)))
    }

    pub fn with_env(ctx: &OperationalContext, assets: &AssetLibrary, env: Arc<StaticEnv>) -> Self {
        let scene = &ctx.scene;
        let mut asset_categories: BTreeSet<String> = assets
            .records()
            .filter(|r| r.source == crate::adapters::AssetOrigin::Builtin)
            .map(|r| r.category.clone())
            .collect();
        asset_categories.extend(scene.registered_assets.iter().map(|a| a.category.clone()));
        let mut s = AbstractState::empty(env, asset_categories);
        s.entities = scene.entities.iter().map(|e| (e.id.clone(), e.category.clone())).collect();
        s.relations = scene.relations.iter().map(|r| (r.subject.clone(), r.predicate, r.object.clone())).collect();
        s.robot = scene.robot.as_ref().map(|r| r.model.clone());
        s.lighting = micro(scene.lighting.intensity);
        s.color_temperature = micro(scene.lighting.color_temperature);
        s.cameras = scene.cameras.iter().map(|c| (c.id.clone(), micro(c.fov_deg))).collect();
        for e in &ctx.data.episodes {
            s.episodes.entry(e.task_id.clone()).or_default().add(e.length, e.success, 1);
        }
        for (fmt, m) in &ctx.data.exports {
            let task = m
                .episode_ids
                .first()
                .and_then(|id| ctx.data.episodes.iter().find(|e| &e.id == id))
                .map(|e| e.task_id.clone())
                .unwrap_or_default();
            s.exports.insert(*fmt, (task, m.episode_ids.len() as u64));
        }
        s.code = ctx.model.code_assets.iter().map(|c| (c.id.clone(), c.status == crate::state::ValidationStatus::Valid)).collect();
        let models: BTreeSet<&str> = ctx.model.checkpoints.iter().map(|c| c.model.as_str()).collect();
        for m in models {
            if let Some(ck) = ctx.model.latest_checkpoint(m) {
                let loss = ck.metrics.get("loss").copied().unwrap_or(f64::INFINITY);
                let loss = if loss.is_finite() { micro(loss) } else { i64::MAX };
                s.trained.insert(m.to_string(), (ck.parent_dataset.clone(), loss));
            }
        }
        s.reports = ctx.model.eval_reports.iter().filter(|r| r.episode_count > 0).map(|r| (r.model.clone(), r.benchmark.clone())).collect();
        s.resources = micro(ctx.model.resource_units());
        s
    }

    pub fn matches(&self, id: &str, r: &EntityRef) -> bool {
        match &r.id {
            Some(rid) => rid == id,
            None => self.entities.get(id).is_some_and(|c| c == &r.category),
        }
    }

    pub fn matching<'a>(&'a self, r: &'a EntityRef) -> impl Iterator<Item = &'a String> + 'a {
        self.entities.keys().filter(move |id| self.matches(id, r))
    }

    pub fn count_of(&self, category: &str) -> usize {
        self.entities.values().filter(|c| *c == category).count()
    }

    pub fn successes(&self, task: &str) -> u64 {
        self.episodes.get(task).map(|s| s.successes).unwrap_or(0)
    }

    pub fn model_known(&self, model: &str) -> bool {
        self.model_trainable(model) || self.trained.contains_key(model)
    }

    pub fn model_trainable(&self, model: &str) -> bool {
        self.env.models.contains(model) || self.code.keys().any(|k| k.split('/').next() == Some(model))
    }

    /// Reference a planned call should carry for entity `id`: placeholders
    /// are referenced by category.
    pub fn entity_ref(&self, id: &str) -> EntityRef {
        let category = self.entities.get(id).cloned().unwrap_or_default();
        if is_placeholder(id) {
            EntityRef::category(category)
        } else {
            EntityRef::id(category, id)
        }
    }

    pub fn next_placeholder(&self, category: &str) -> String {
        (1..)
            .map(|k| format!("+{category}#{k}"))
            .find(|id| !self.entities.contains_key(id))
            .expect("unbounded range")
    }

    /// Descriptor groups by object class, for frame checks.
    pub fn scene_part(&self) -> impl PartialEq + std::fmt::Debug + '_ {
        (
            &self.entities,
            &self.relations,
            &self.robot,
            (self.lighting, self.color_temperature),
            &self.cameras,
            &self.asset_categories,
            &self.touched,
        )
    }

    pub fn data_part(&self) -> impl PartialEq + std::fmt::Debug + '_ {
        (&self.episodes, &self.exports)
    }

    pub fn model_part(&self) -> impl PartialEq + std::fmt::Debug + '_ {
        (&self.code, &self.trained, &self.reports, self.resources)
    }
}

pub fn is_placeholder(id: &str) -> bool {
    id.starts_with('+')
}
