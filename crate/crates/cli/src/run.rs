// SPDX-License-Identifier: MIT OR Apache-2.0

//! Output tree of one invocation and the shared loading context.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use sentlens::datasets::{
    filler, gen_toy_mood_story, load_corpus, load_negation_fixture, load_sst_pairs, toy_movie_review_pairs_with_filler,
    PromptPair, Split,
};
use sentlens::directions::Direction;
use sentlens::interventions::SiteMeans;
use sentlens::{Error, ModelBundle, Result, TokenId, Tokenizer};

use crate::config::{resolve, DatasetConfig, DatasetKind, ExperimentConfig};

pub const SUBDIRS: [&str; 4] = ["configs", "directions", "logs", "reports"];

/// `out_dir/<run id>/{configs,directions,logs,reports}`.
pub struct RunDir {
    pub id: String,
    pub root: PathBuf,
}

impl RunDir {
    /// The run id is the command name and a digest of the effective
    /// configuration without the output root and thread count, which do not
    /// change results.
    pub fn create(command: &str, cfg: &ExperimentConfig) -> Result<Self> {
        let text = cfg.to_toml()?;
        let keyed = ExperimentConfig {
            out_dir: PathBuf::new(),
            threads: 1,
            ..cfg.clone()
        };
        let digest = Sha256::digest(format!("{command}\n{}", keyed.to_toml()?).as_bytes());
        let mut hex = String::new();
        for b in &digest[..6] {
            let _ = write!(hex, "{b:02x}");
        }
        let id = format!("{command}-{hex}");
        let root = cfg.out_dir.join(&id);
        for d in SUBDIRS {
            std::fs::create_dir_all(root.join(d))?;
        }
        std::fs::write(root.join("configs").join("config.toml"), text)?;
        Ok(Self { id, root })
    }

    pub fn path(&self, sub: &str, name: &str) -> PathBuf {
        self.root.join(sub).join(name)
    }
}

pub struct Context {
    pub cfg: ExperimentConfig,
    pub data_dir: Option<PathBuf>,
    pub tok: Tokenizer,
}

impl Context {
    pub fn new(cfg: ExperimentConfig, data_dir: Option<PathBuf>) -> Result<Self> {
        let tok = match (&cfg.vocab, &cfg.merges) {
            (Some(v), Some(m)) => Tokenizer::load(resolve(v, data_dir.as_deref()), resolve(m, data_dir.as_deref()))?,
            (None, None) => Tokenizer::gpt2()?,
            _ => return Err(Error::Config("vocab and merges must be set together".into())),
        };
        Ok(Self { cfg, data_dir, tok })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        resolve(p, self.data_dir.as_deref())
    }

    pub fn bundle(&self) -> Result<ModelBundle> {
        let p = self.resolve(&self.cfg.bundle);
        ModelBundle::read(&p).map_err(|e| Error::Bundle(format!("{}: {e}", p.display())))
    }

    pub fn direction(&self, p: &Option<PathBuf>, what: &str) -> Result<Direction> {
        let p = p
            .as_ref()
            .ok_or_else(|| Error::Config(format!("{what} needs a direction file")))?;
        Direction::read(self.resolve(p))
    }

    pub fn means(&self, p: &Option<PathBuf>) -> Result<Option<SiteMeans>> {
        p.as_ref().map(|p| SiteMeans::read(self.resolve(p))).transpose()
    }

    fn dataset_path(&self, ds: &DatasetConfig) -> Result<PathBuf> {
        ds.path
            .as_ref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::Config(format!("dataset {:?} needs a path", ds.kind)))
    }

    pub fn pairs(&self, ds: &DatasetConfig) -> Result<Vec<PromptPair>> {
        let mut pairs = match ds.kind {
            DatasetKind::ToyMovie => {
                let split: Split = ds.split.parse()?;
                let f = if ds.filler == 0 { "" } else { filler(ds.filler)? };
                toy_movie_review_pairs_with_filler(split, &self.tok, f)?
            }
            DatasetKind::ToyMood => gen_toy_mood_story(&self.tok)?,
            DatasetKind::Sst => load_sst_pairs(self.dataset_path(ds)?, &self.tok, ds.scaffold.parse()?)?.pairs,
            DatasetKind::Negation | DatasetKind::Corpus => {
                return Err(Error::Config(format!("dataset {:?} has no prompt pairs", ds.kind)))
            }
        };
        if ds.limit > 0 {
            pairs.truncate(ds.limit);
        }
        Ok(pairs)
    }

    /// Token sequences for averaging and sampling.
    pub fn docs(&self, ds: &DatasetConfig, n_ctx: usize) -> Result<Vec<Vec<TokenId>>> {
        let mut docs: Vec<Vec<TokenId>> = match ds.kind {
            DatasetKind::Corpus => load_corpus(self.dataset_path(ds)?, &self.tok, ds.max_tokens, n_ctx, self.cfg.seed)?,
            DatasetKind::Negation => load_negation_fixture(&self.tok)?
                .into_iter()
                .map(|p| p.tokens)
                .collect(),
            _ => self
                .pairs(ds)?
                .into_iter()
                .flat_map(|p| [p.clean.tokens, p.corrupted.tokens])
                .collect(),
        };
        if ds.limit > 0 {
            docs.truncate(ds.limit);
        }
        Ok(docs)
    }
}
