//! Editing sentences through the latent variable that best tracks a role.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Matrix;
use crate::corpus::{TokenizedSentence, Vocab};
use crate::eval::{delta_gamma, redraw, InfluenceKind, InfluenceMatrix};
use crate::model::Model;
use crate::{Error, Result};

/// Hex SHA-256 of a checkpoint file.
pub fn checkpoint_id(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect())
}

/// Role to most influential variable, derived from a measured matrix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoleVariableMap {
    pub source: InfluenceKind,
    pub checkpoint: String,
    pub entries: Vec<(String, usize)>,
}

impl RoleVariableMap {
    pub fn from_matrix(m: &InfluenceMatrix, checkpoint: impl Into<String>) -> Result<Self> {
        let entries = delta_gamma(m)?.into_iter().map(|d| (d.role, d.m1)).collect();
        Ok(RoleVariableMap {
            source: m.kind,
            checkpoint: checkpoint.into(),
            entries,
        })
    }

    pub fn variable(&self, role: &str) -> Result<usize> {
        self.entries
            .iter()
            .find(|(r, _)| r == role)
            .map(|&(_, v)| v)
            .ok_or_else(|| Error::UnknownRole {
                role: role.to_string(),
                available: self.roles().join(", "),
            })
    }

    pub fn roles(&self) -> Vec<String> {
        self.entries.iter().map(|(r, _)| r.clone()).collect()
    }

    /// Roles that share a variable with an earlier role.
    pub fn shared(&self) -> Vec<(String, String, usize)> {
        let mut out = Vec::new();
        for (k, (a, va)) in self.entries.iter().enumerate() {
            for (b, vb) in &self.entries[k + 1..] {
                if va == vb {
                    out.push((a.clone(), b.clone(), *va));
                }
            }
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer_pretty(BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_reader(BufReader::new(f))?)
    }
}

/// A sentence's posterior-mean latent before and after an edit.
#[derive(Debug, Clone, PartialEq)]
pub struct Edit {
    pub original: Matrix,
    pub edited: Matrix,
    pub text: String,
}

/// Posterior means of every level for one sentence.
fn encode_means(model: &Model, vocab: &Vocab, sentence: &str) -> Result<Vec<Matrix>> {
    let s = TokenizedSentence::from_text(sentence);
    if s.is_empty() {
        return Err(Error::EmptySentence);
    }
    let ids = s.ids(vocab);
    let post = model.posterior(&[&ids])?.pop().expect("one posterior");
    Ok(post.levels.into_iter().map(|l| l.mu).collect())
}

fn decode(model: &Model, vocab: &Vocab, z: &Matrix) -> String {
    let ids = model.greedy_decode(&[z], model.config().max_len).pop().unwrap();
    vocab.decode(&ids).join(" ")
}

/// Replaces the role's variable with a fresh prior draw and decodes.
pub fn resample_role(
    model: &Model,
    vocab: &Vocab,
    sentence: &str,
    role: &str,
    map: &RoleVariableMap,
    seed: u64,
) -> Result<Edit> {
    let var = map.variable(role)?;
    let levels = encode_means(model, vocab, sentence)?;
    let original = levels.last().unwrap().clone();
    let edited = redraw(model, &levels, var, &mut ChaCha8Rng::seed_from_u64(seed))?;
    let text = decode(model, vocab, &edited);
    Ok(Edit { original, edited, text })
}

/// Exchanges the role's variable between two sentences and decodes both.
pub fn swap_role(
    model: &Model,
    vocab: &Vocab,
    first: &str,
    second: &str,
    role: &str,
    map: &RoleVariableMap,
) -> Result<(Edit, Edit)> {
    let var = map.variable(role)?;
    let a = encode_means(model, vocab, first)?.pop().unwrap();
    let b = encode_means(model, vocab, second)?.pop().unwrap();
    let (ea, eb) = swap_rows(&a, &b, var);
    let ta = decode(model, vocab, &ea);
    let tb = decode(model, vocab, &eb);
    Ok((
        Edit {
            original: a,
            edited: ea,
            text: ta,
        },
        Edit {
            original: b,
            edited: eb,
            text: tb,
        },
    ))
}

/// Copies of `a` and `b` with row `var` exchanged.
pub fn swap_rows(a: &Matrix, b: &Matrix, var: usize) -> (Matrix, Matrix) {
    let (mut x, mut y) = (a.clone(), b.clone());
    x.row_mut(var).assign(&b.row(var));
    y.row_mut(var).assign(&a.row(var));
    (x, y)
}

/// Original text of a sentence reconstructed from its posterior mean.
pub fn reconstruct(model: &Model, vocab: &Vocab, sentence: &str) -> Result<String> {
    let z = encode_means(model, vocab, sentence)?.pop().unwrap();
    Ok(decode(model, vocab, &z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SPECIALS;
    use crate::model::{ModelConfig, Variant};

    fn setup(variant: Variant) -> (Model, Vocab) {
        let mut t: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        t.extend("the a man dog holds sits ball .".split(' ').map(String::from));
        let vocab = Vocab::from_tokens(t).unwrap();
        let cfg = ModelConfig {
            variant,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            n_z: 3,
            d_z: 4,
            dropout: 0.0,
            vocab_size: vocab.len(),
            max_len: 10,
            ..ModelConfig::default()
        };
        (Model::new(cfg, 2).unwrap(), vocab)
    }

    fn map() -> RoleVariableMap {
        let mut m = InfluenceMatrix::zeros(InfluenceKind::Enc, vec!["subj".into(), "dobj".into(), "pobj".into()], vec!["z0".into(), "z1".into(), "z2".into()]);
        m.counts = vec![vec![10; 3]; 3];
        m.hits = vec![vec![1, 8, 2], vec![0, 1, 9], vec![1, 0, 7]];
        RoleVariableMap::from_matrix(&m, "abc").unwrap()
    }

    #[test]
    fn map_from_matrix() {
        let m = map();
        assert_eq!(m.variable("subj").unwrap(), 1);
        assert_eq!(m.variable("dobj").unwrap(), 2);
        assert_eq!(m.shared(), vec![("dobj".into(), "pobj".into(), 2)]);
        match m.variable("verb") {
            Err(Error::UnknownRole { available, .. }) => assert_eq!(available, "subj, dobj, pobj"),
            other => panic!("{other:?}"),
        }
        assert_eq!(RoleVariableMap::from_matrix(&{
            let mut x = InfluenceMatrix::zeros(InfluenceKind::Enc, vec!["subj".into()], vec!["z0".into(), "z1".into()]);
            x.counts = vec![vec![4, 4]];
            x.hits = vec![vec![1, 3]];
            x
        }, "abc").unwrap().entries, vec![("subj".to_string(), 1)]);
    }

    #[test]
    fn resample_touches_one_variable() {
        for v in [Variant::Advae, Variant::AdvaeHier] {
            let (model, vocab) = setup(v);
            let e = resample_role(&model, &vocab, "the man holds the ball .", "subj", &map(), 3).unwrap();
            for i in 0..3 {
                assert_eq!(e.original.row(i) == e.edited.row(i), i != 1);
            }
            let again = resample_role(&model, &vocab, "the man holds the ball .", "subj", &map(), 3).unwrap();
            assert_eq!(e, again);
        }
    }

    #[test]
    fn swap_is_an_involution() {
        let (model, vocab) = setup(Variant::Advae);
        let (a, b) = swap_role(&model, &vocab, "the man holds the ball .", "a dog sits .", "subj", &map()).unwrap();
        let (x, y) = swap_rows(&a.edited, &b.edited, 1);
        assert_eq!(x, a.original);
        assert_eq!(y, b.original);
        for i in [0, 2] {
            assert_eq!(a.edited.row(i), a.original.row(i));
        }
    }

    #[test]
    fn self_swap_is_identity() {
        let (model, vocab) = setup(Variant::Advae);
        let s = "the man holds the ball .";
        let (a, b) = swap_role(&model, &vocab, s, s, "subj", &map()).unwrap();
        let plain = reconstruct(&model, &vocab, s).unwrap();
        assert_eq!(a.edited, a.original);
        assert_eq!((a.text.as_str(), b.text.as_str()), (plain.as_str(), plain.as_str()));
        assert!(swap_role(&model, &vocab, s, "", "subj", &map()).is_err());
    }

    #[test]
    fn checkpoint_id_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.bin");
        std::fs::write(&p, b"abc").unwrap();
        assert_eq!(
            checkpoint_id(&p).unwrap(),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }
}
