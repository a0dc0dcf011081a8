//! Builds the three backends a run uses from its configuration.

use std::path::Path;

use stereo_core::backend::{ChatProvider, Classifier, ImageBackend};
use stereo_core::synth::{synthetic_world, NoisyClassifier, SimulatedChat, WORLD_BIAS};

use crate::config::{RoleSelection, RunConfig};
use crate::http::{HttpChat, HttpClassifier, HttpGenerator};

pub struct Backends {
    pub chat: Box<dyn ChatProvider>,
    pub images: Box<dyn ImageBackend>,
    pub classifier: Box<dyn Classifier>,
}

impl Backends {
    /// Live generators write images under `artifact_dir`.
    pub fn from_config(config: &RunConfig, artifact_dir: &Path) -> Self {
        let token = config.token.as_deref();
        let chat: Box<dyn ChatProvider> = match config.chat.endpoint(token) {
            Some(e) => Box::new(HttpChat::new(e)),
            None => Box::new(SimulatedChat::default()),
        };
        let images: Box<dyn ImageBackend> = match config.generate.endpoint(token) {
            Some(e) => Box::new(HttpGenerator::new(e, artifact_dir)),
            None => Box::new(synthetic_world(WORLD_BIAS, config.seed)),
        };
        let classifier: Box<dyn Classifier> = match &config.classify {
            RoleSelection::Synthetic => Box::new(NoisyClassifier::uniform(
                config.synthetic.classifier_accuracy,
                config.seed,
            )),
            live => Box::new(HttpClassifier::new(live.endpoint(token).expect("live role has an endpoint"))),
        };
        Self {
            chat,
            images,
            classifier,
        }
    }
}
