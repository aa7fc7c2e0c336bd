//! Probe accuracy of pretrained embeddings against two baselines on a
//! generated block-model graph: the raw features and an untrained encoder.

use gssl::config::RunConfig;
use gssl::eval::EmbeddingTable;
use gssl::graph::{gen_sbm, Dataset, SbmParams};
use gssl::methods::{Level, MethodState};
use gssl::pipeline::{embed, evaluate, Task};
use gssl::trainer::pretrain;
use gssl::{seed, Result};

#[derive(Clone, Debug, Default)]
pub struct Separation {
    pub pretrained: f64,
    pub raw: f64,
    pub untrained: f64,
    pub nmi: f64,
}

impl Separation {
    pub fn margin(&self) -> f64 {
        self.pretrained - self.raw.max(self.untrained)
    }
}

pub fn one_seed(cfg: &RunConfig, params: &SbmParams) -> Result<Separation> {
    let graph = gen_sbm(params, seed::derive(cfg.seed, 3))?;
    let features = graph.features().clone();
    let data = Dataset::Nodes { graph, split: None };
    let tc = cfg.train_config(Level::Node, None);
    let (state, _) = pretrain((&data).into(), cfg.method.clone(), cfg.model, &tc)?;
    let emb = embed(&state, &data)?;
    let fresh = MethodState::new(cfg.method.clone(), cfg.model, Level::Node, data.n_features(), seed::derive(cfg.seed, 0))?;
    Ok(Separation {
        pretrained: evaluate(cfg, &data, &emb, Task::NodeClf)?.mean,
        raw: evaluate(cfg, &data, &EmbeddingTable::from_matrix(features)?, Task::NodeClf)?.mean,
        untrained: evaluate(cfg, &data, &embed(&fresh, &data)?, Task::NodeClf)?.mean,
        nmi: evaluate(cfg, &data, &emb, Task::Cluster)?.mean,
    })
}

/// Averages [`one_seed`] over `seeds`, each replacing the config's seed.
pub fn averaged(cfg: &RunConfig, params: &SbmParams, seeds: &[u64]) -> Result<Separation> {
    let mut acc = Separation::default();
    for &s in seeds {
        let mut c = cfg.clone();
        c.seed = s;
        let r = one_seed(&c, params)?;
        acc.pretrained += r.pretrained;
        acc.raw += r.raw;
        acc.untrained += r.untrained;
        acc.nmi += r.nmi;
    }
    let k = seeds.len() as f64;
    Ok(Separation { pretrained: acc.pretrained / k, raw: acc.raw / k, untrained: acc.untrained / k, nmi: acc.nmi / k })
}
