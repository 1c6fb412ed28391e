#![allow(dead_code)]

use std::path::{Path, PathBuf};

use nerlab::data::{parse_conll, ConllOptions};
use nerlab::embeddings::write_embeddings;
use nerlab::synth::{synth_embeddings, SynthEmbeddingConfig};

pub fn workspace_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn config_path(name: &str) -> PathBuf {
    workspace_root().join("configs").join(name)
}

/// Fixed random-word embeddings (16 dims, 3 layers, seed 0) for a corpus.
pub fn embeddings_for(corpus: &Path, out: &Path) -> PathBuf {
    let ds = parse_conll(corpus, &ConllOptions::default()).unwrap();
    let (h, seqs) = synth_embeddings(&ds, &SynthEmbeddingConfig::default()).unwrap();
    let path = out.join("embeddings.seqemb");
    write_embeddings(&path, h, &seqs).unwrap();
    path
}

pub struct Run {
    pub code: i32,
    pub stdout: String,
    pub stderr: String,
}

pub fn nerlab<S: AsRef<str>>(args: &[S]) -> Run {
    let mut argv = vec!["nerlab".to_string()];
    argv.extend(args.iter().map(|a| a.as_ref().to_string()));
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let code = nerlab_cli::run(argv, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

pub fn p(path: &Path) -> String {
    path.to_string_lossy().into_owned()
}
