use std::path::Path;
use std::sync::Arc;

use arcmem_core::gateway::{
    ChatProvider, EmbeddingProvider, FixtureStore, Gateway, GatewayMode, HashedNgramEmbedder,
    HttpChatProvider, PromptCatalog,
};
use arcmem_core::memory::MemoryStore;
use arcmem_core::pipeline::Pipeline;
use arcmem_core::preprocess::{CapitalizationNer, LlmNer, NerProvider};

use crate::config::{AppConfig, NerKind};
use crate::error::CliError;

/// Everything a verb or a request handler needs, opened once.
pub struct Services {
    pub config: AppConfig,
    pub memory: MemoryStore,
    pub gateway: Gateway,
    pub embedder: Box<dyn EmbeddingProvider>,
    catalog: Arc<PromptCatalog>,
    provider: Option<Arc<dyn ChatProvider>>,
}

impl Services {
    /// Opens the stores under the configured workspace. In live and record
    /// mode `provider` is used when given, else the HTTP provider from the
    /// environment; replay mode never gets a provider.
    pub fn open(config: AppConfig, provider: Option<Arc<dyn ChatProvider>>) -> Result<Self, CliError> {
        config.validate()?;
        std::fs::create_dir_all(&config.workspace).map_err(CliError::io(&config.workspace))?;
        let memory = MemoryStore::open(&config.memory_paths(), config.embedding_dimension)?;
        Self::assemble(config, memory, provider)
    }

    /// Like [`open`](Self::open) but with both stores in memory. Staged
    /// documents and checkpoints still go to the workspace.
    pub fn open_in_memory(config: AppConfig, provider: Option<Arc<dyn ChatProvider>>) -> Result<Self, CliError> {
        config.validate()?;
        std::fs::create_dir_all(&config.workspace).map_err(CliError::io(&config.workspace))?;
        let memory = MemoryStore::in_memory(config.embedding_dimension)?;
        Self::assemble(config, memory, provider)
    }

    fn assemble(
        config: AppConfig,
        memory: MemoryStore,
        provider: Option<Arc<dyn ChatProvider>>,
    ) -> Result<Self, CliError> {
        let memory = memory.with_utterance_embeddings(config.embed_utterances);
        let provider = provider.or_else(|| {
            HttpChatProvider::from_env().map(|p| Arc::new(p) as Arc<dyn ChatProvider>)
        });
        let catalog = Arc::new(PromptCatalog::shipped());
        let embedder = Box::new(HashedNgramEmbedder::new(config.embedding_dimension));
        let mut svc = Self {
            gateway: Gateway::replay(&config.fixtures_dir),
            config,
            memory,
            embedder,
            catalog,
            provider,
        };
        svc.gateway = svc.gateway_for(svc.config.mode);
        Ok(svc)
    }

    /// A gateway over the same catalog and fixtures in another mode.
    pub fn gateway_for(&self, mode: GatewayMode) -> Gateway {
        let provider = match mode {
            GatewayMode::Replay => None,
            GatewayMode::Live | GatewayMode::Record => self.provider.clone(),
        };
        Gateway::new(
            mode,
            self.catalog.clone(),
            provider,
            FixtureStore::new(&self.config.fixtures_dir),
        )
    }

    pub fn workspace(&self) -> &Path {
        &self.config.workspace
    }

    pub fn ner(&self) -> Box<dyn NerProvider> {
        match self.config.ner {
            NerKind::Capitalization => Box::new(CapitalizationNer),
            NerKind::Llm => Box::new(LlmNer),
        }
    }

    pub fn pipeline<'a>(&'a self, gateway: &'a Gateway) -> Pipeline<'a> {
        Pipeline {
            memory: &self.memory,
            gateway,
            embedder: self.embedder.as_ref(),
            config: self.config.pipeline.clone(),
            workspace: &self.config.workspace,
        }
    }
}
