use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use frustum_forge::io::{write_json, PipelineConfig};
use serde::Serialize;
use serde_json::Value;

/// Summary of one invocation. Paths are left out so that two runs with the
/// same inputs produce the same bytes.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub subcommand: String,
    pub config: Value,
    pub seed: Option<u64>,
    pub counts: BTreeMap<String, usize>,
    pub metrics: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timings_ms: Option<BTreeMap<String, f64>>,
}

impl RunReport {
    pub fn new(subcommand: &str, config: &impl Serialize, seed: Option<u64>) -> Self {
        RunReport {
            subcommand: subcommand.to_string(),
            config: serde_json::to_value(config).unwrap_or(Value::Null),
            seed,
            counts: BTreeMap::new(),
            metrics: Value::Object(Default::default()),
            timings_ms: None,
        }
    }

    pub fn for_pipeline(subcommand: &str, config: &PipelineConfig) -> Self {
        Self::new(subcommand, config, Some(config.seed))
    }

    pub fn count(&mut self, key: &str, n: usize) {
        *self.counts.entry(key.to_string()).or_insert(0) += n;
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) {
        if let Value::Object(map) = &mut self.metrics {
            map.insert(key.to_string(), serde_json::to_value(value).unwrap_or(Value::Null));
        }
    }

    pub fn finish(mut self, clock: Stopwatch, path: Option<&Path>) -> frustum_forge::Result<()> {
        if clock.enabled {
            self.timings_ms = Some(clock.stages);
        }
        match path {
            Some(p) => write_json(p, &self),
            None => Ok(()),
        }
    }
}

pub struct Stopwatch {
    enabled: bool,
    stages: BTreeMap<String, f64>,
}

impl Stopwatch {
    pub fn new(enabled: bool) -> Self {
        Stopwatch {
            enabled,
            stages: BTreeMap::new(),
        }
    }

    pub fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        *self.stages.entry(stage.to_string()).or_insert(0.0) += start.elapsed().as_secs_f64() * 1e3;
        out
    }
}
