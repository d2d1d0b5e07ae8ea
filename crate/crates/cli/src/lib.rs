//! Service binding for the ino repository: REST and OAI-PMH over HTTP, an
//! OAI-PMH harvester, and the benchmark harness.

pub mod bench;
pub mod config;
pub mod harvest;
pub mod service;

use std::sync::Arc;

use ino_core::dissemination::CrosswalkRegistry;
use ino_core::object_store::StoreOptions;
use ino_core::oai_provider::OaiProvider;
use ino_core::{Clock, Ontology, Repository};

pub use bench::{bench_all, BenchOptions, BenchOutcome, BenchReport};
pub use config::{Config, ConfigError};
pub use harvest::{harvest, HarvestError, HarvestOptions, HarvestReport, HttpSource, LocalSource, OaiSource};
pub use service::{serve, ServeError, ServiceHandle};

/// Opens the repository and OAI provider a config describes.
pub fn open_repository(
    config: &Config,
    options: StoreOptions,
    clock: Arc<dyn Clock>,
) -> Result<(Arc<Repository>, Arc<OaiProvider>), ServeError> {
    let ontology = match &config.ontology_path {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
                path: path.clone(),
                source,
            })?;
            Ontology::load(&text).map_err(|e| ConfigError::Syntax {
                line: 0,
                message: format!("{}: {e}", path.display()),
            })?
        }
        None => Ontology::default(),
    };
    let repo = Arc::new(Repository::open(
        &config.data_dir,
        options,
        ontology,
        CrosswalkRegistry::with_builtin(),
        clock.clone(),
    )?);
    let oai = Arc::new(OaiProvider::open(repo.clone(), clock)?);
    oai.set_page_size(config.page_size);
    Ok((repo, oai))
}
