//! Subcommand bodies. Every artifact lives under the run directory; seed
//! runs get their own `seed_<n>` subdirectory.

use std::fs::File;
use std::io::{BufRead, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use advae::corpus::synthetic::SyntheticGrammar;
use advae::corpus::{build_vocab, load_corpus, Corpus, Vocab};
use advae::eval::{
    annotate_records, assemble_pairs, collect_traces, dec_influence, emit_heatmap, enc_influence,
    generate_perturbation_pairs, position_baseline, ppl_upper_bound, read_pairs, spans_by_pair_id, struct_influence,
    totals_and_counts, write_pairs, DisentanglementReport, InfluenceMatrix,
};
use advae::manipulate::{checkpoint_id, resample_role, swap_role, RoleVariableMap};
use advae::model::Model;
use advae::roles::{load_conllu, read_conllu, write_conllu, ConlluSentence, ParsedSentence};
use advae::training::{train, Checkpoint, RunDir, Trainer};

use crate::config::{RunConfig, CONFIG_FILE};

/// A resolved run directory and its validated config.
#[derive(Debug, Clone)]
pub struct Run {
    pub dir: PathBuf,
    pub cfg: RunConfig,
}

impl Run {
    /// Loads `config` (default `<dir>/config.toml`). A missing default file
    /// means all-default settings.
    pub fn open(dir: PathBuf, config: Option<&Path>) -> Result<Self> {
        let cfg = match config {
            Some(p) => RunConfig::load(p)?,
            None => {
                let p = dir.join(CONFIG_FILE);
                if p.exists() {
                    RunConfig::load(&p)?
                } else {
                    log::warn!("{} not found; using default settings", p.display());
                    RunConfig::default()
                }
            }
        };
        Ok(Run { dir, cfg })
    }

    pub fn path(&self, rel: &Path) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.dir.join(format!("seed_{seed}"))
    }

    /// The requested seed, or every configured one.
    pub fn seeds(&self, seed: Option<u64>) -> Vec<u64> {
        seed.map_or_else(|| self.cfg.seeds.clone(), |s| vec![s])
    }

    fn checkpoint_path(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("model.ckpt")
    }

    fn load_checkpoint(&self, seed: u64) -> Result<Checkpoint> {
        let p = self.checkpoint_path(seed);
        Checkpoint::load(&p).with_context(|| format!("loading {} (run `train` first)", p.display()))
    }

    fn corpus(&self, rel: &Path) -> Result<Corpus> {
        let p = self.path(rel);
        load_corpus(&p, self.cfg.corpus.max_len).with_context(|| format!("reading corpus {}", p.display()))
    }

    fn grammar(&self) -> Result<SyntheticGrammar> {
        Ok(SyntheticGrammar::new(self.cfg.corpus.grammar.clone())?)
    }
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(d) = path.parent() {
        std::fs::create_dir_all(d).with_context(|| format!("creating {}", d.display()))?;
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

fn save_conllu(path: &Path, sentences: &[ConlluSentence]) -> Result<()> {
    create_parent(path)?;
    let f = File::create(path).with_context(|| format!("writing {}", path.display()))?;
    let mut w = BufWriter::new(f);
    write_conllu(&mut w, sentences)?;
    w.flush()?;
    Ok(())
}

fn encode(corpus: &Corpus, vocab: &Vocab) -> Vec<Vec<usize>> {
    corpus.sentences.iter().map(|s| s.ids(vocab)).collect()
}

/// Writes train/test text and their oracle parses from the synthetic grammar.
pub fn gen_corpus(run: &Run) -> Result<()> {
    let c = &run.cfg.corpus;
    let grammar = run.grammar()?;
    let all = grammar.generate(c.n_train + c.n_test);
    if let Some(s) = all.iter().find(|e| e.sentence.len() > c.max_len) {
        bail!("grammar produces `{}`, longer than corpus.max_len", s.sentence.text());
    }
    let (train, test) = all.split_at(c.n_train);
    let p = &run.cfg.paths;
    for (examples, text_path, parse_path) in [(train, &p.train_corpus, &p.train_parses), (test, &p.test_corpus, &p.test_parses)] {
        let text: String = examples.iter().map(|e| e.sentence.text() + "\n").collect();
        write_text(&run.path(text_path), &text)?;
        let parses: Vec<ConlluSentence> = examples
            .iter()
            .map(|e| ConlluSentence {
                meta: vec![("text".into(), e.sentence.text())],
                parse: e.parse.clone(),
            })
            .collect();
        save_conllu(&run.path(parse_path), &parses)?;
    }
    log::info!("wrote {} train and {} test sentences", train.len(), test.len());
    Ok(())
}

/// Summary written next to each trained checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunInfo {
    pub label: String,
    pub beta_final: f64,
    pub seed: u64,
    pub steps: usize,
    pub recon_steps: usize,
    pub anneal_steps: usize,
    pub final_recon: f64,
    pub final_kl: f64,
}

pub fn model_label(run: &Run) -> String {
    format!("{}-{}", run.cfg.model.variant, run.cfg.model.n_z)
}

/// Trains one seed from scratch. Earlier artifacts of that seed are removed
/// first; a failed run leaves a `FAILED` marker.
pub fn train_seed(run: &Run, seed: u64) -> Result<RunInfo> {
    let corpus = run.corpus(&run.cfg.paths.train_corpus)?;
    let vocab = build_vocab(&corpus.sentences, run.cfg.corpus.min_freq)?;
    let data = encode(&corpus, &vocab);
    let dir = run.seed_dir(seed);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    let rd = RunDir::new(&dir)?;
    let mut mcfg = run.cfg.model.clone();
    mcfg.vocab_size = vocab.len();
    let tcfg = run.cfg.train_for(seed, data.len());
    log::info!(
        "seed {seed}: {} sentences, vocab {}, recon {} + anneal {} steps",
        data.len(),
        vocab.len(),
        tcfg.recon_steps,
        tcfg.anneal_steps
    );
    let result = (|| {
        let mut trainer = Trainer::new(Model::new(mcfg, seed)?, tcfg.clone())?;
        let history = train(&mut trainer, &data, &vocab, Some(&rd))?;
        let last = history.last().context("no training steps were run")?;
        Ok::<_, anyhow::Error>(RunInfo {
            label: model_label(run),
            beta_final: tcfg.beta_final,
            seed,
            steps: trainer.step,
            recon_steps: tcfg.recon_steps,
            anneal_steps: tcfg.anneal_steps,
            final_recon: last.recon,
            final_kl: last.kl,
        })
    })();
    match result {
        Ok(info) => {
            write_json(&dir.join("run_info.json"), &info)?;
            Ok(info)
        }
        Err(e) => {
            let _ = std::fs::write(dir.join("FAILED"), format!("{e:#}\n"));
            Err(e)
        }
    }
}

fn pairs_path(run: &Run, seed: u64) -> PathBuf {
    run.seed_dir(seed).join("pairs.jsonl")
}

fn pair_parses_path(run: &Run, seed: u64) -> PathBuf {
    run.seed_dir(seed).join("pairs.conllu")
}

pub fn perturb(run: &Run, seed: u64) -> Result<usize> {
    let ckpt = run.load_checkpoint(seed)?;
    let records = generate_perturbation_pairs(&ckpt.model, &ckpt.vocab, run.cfg.eval.t_dec, run.cfg.eval.seed)?;
    write_pairs(pairs_path(run, seed), &records)?;
    Ok(records.len())
}

/// Labels generated pairs with the synthetic grammar's rule-based parser,
/// standing in for an external dependency parser.
pub fn annotate(run: &Run, seed: u64) -> Result<usize> {
    let grammar = run.grammar()?;
    let records = read_pairs(pairs_path(run, seed))?;
    let parsed = annotate_records(&records, |t| grammar.annotate(t));
    save_conllu(&pair_parses_path(run, seed), &parsed)?;
    Ok(parsed.len())
}

fn save_matrix(dir: &Path, name: &str, m: &InfluenceMatrix) -> Result<()> {
    m.save_json(dir.join(format!("{name}.json")))?;
    emit_heatmap(m, dir.join(format!("{name}.csv")))?;
    Ok(())
}

fn pair_matrices(run: &Run, seed: u64) -> Result<(Vec<advae::eval::ParsedPair>, usize)> {
    let ckpt_cfg = run.load_checkpoint(seed)?.model.config().clone();
    let roles = run.cfg.role_set()?;
    let records = read_pairs(pairs_path(run, seed))?;
    let parsed = read_conllu(pair_parses_path(run, seed))?;
    let spans = spans_by_pair_id(&parsed, &roles)?;
    Ok((assemble_pairs(&records, &spans)?, ckpt_cfg.n_vars()))
}

pub fn eval_dec(run: &Run, seed: u64) -> Result<DisentanglementReport> {
    let (pairs, n_vars) = pair_matrices(run, seed)?;
    let m = dec_influence(&pairs, &run.cfg.role_set()?, n_vars)?;
    save_matrix(&run.seed_dir(seed), "dec", &m)?;
    Ok(totals_and_counts(&m)?)
}

pub fn eval_struct(run: &Run, seed: u64) -> Result<InfluenceMatrix> {
    let (pairs, n_vars) = pair_matrices(run, seed)?;
    let m = struct_influence(&pairs, &run.cfg.role_set()?, n_vars)?;
    save_matrix(&run.seed_dir(seed), "struct", &m)?;
    Ok(m)
}

fn test_parses(run: &Run) -> Result<Vec<ParsedSentence>> {
    let p = run.path(&run.cfg.paths.test_parses);
    let mut parses = load_conllu(&p).with_context(|| format!("reading {}", p.display()))?;
    if run.cfg.eval.t_enc > 0 {
        parses.truncate(run.cfg.eval.t_enc);
    }
    Ok(parses)
}

pub fn eval_enc(run: &Run, seed: u64) -> Result<DisentanglementReport> {
    let ckpt = run.load_checkpoint(seed)?;
    let parses = test_parses(run)?;
    let traces = collect_traces(&ckpt.model, &ckpt.vocab, &parses)?;
    let items: Vec<_> = parses.iter().zip(&traces).collect();
    let m = enc_influence(&items, &run.cfg.role_set()?, run.cfg.layer_mode()?)?;
    save_matrix(&run.seed_dir(seed), "enc", &m)?;
    Ok(totals_and_counts(&m)?)
}

/// Position baseline over the training parses; run-level, not per seed.
pub fn pb(run: &Run) -> Result<DisentanglementReport> {
    let p = run.path(&run.cfg.paths.train_parses);
    let parses = load_conllu(&p).with_context(|| format!("reading {}", p.display()))?;
    let m = position_baseline(&parses, &run.cfg.role_set()?, run.cfg.corpus.max_len);
    save_matrix(&run.dir, "pb", &m)?;
    Ok(totals_and_counts(&m)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplSummary {
    pub k: usize,
    pub sentences: usize,
    pub tokens: usize,
    pub mean_nll: f64,
    pub ppl: f64,
}

pub fn ppl(run: &Run, seed: u64) -> Result<PplSummary> {
    let ckpt = run.load_checkpoint(seed)?;
    let corpus = run.corpus(&run.cfg.paths.test_corpus)?;
    let data = encode(&corpus, &ckpt.vocab);
    let rows: Vec<&[usize]> = data.iter().map(Vec::as_slice).collect();
    let b = ppl_upper_bound(&ckpt.model, &rows, run.cfg.eval.ppl_samples, run.cfg.eval.seed)?;
    let s = PplSummary {
        k: b.k,
        sentences: b.nll.len(),
        tokens: b.tokens,
        mean_nll: b.mean_nll(),
        ppl: b.ppl,
    };
    write_json(&run.seed_dir(seed).join("ppl.json"), &s)?;
    Ok(s)
}

/// Role-to-variable map from the configured source matrix of one seed.
pub fn role_map(run: &Run, seed: u64) -> Result<RoleVariableMap> {
    let dir = run.seed_dir(seed);
    let src = dir.join(format!("{}.json", run.cfg.eval.map_source));
    let m = InfluenceMatrix::load_json(&src)
        .with_context(|| format!("loading {} (run eval-{} first)", src.display(), run.cfg.eval.map_source))?;
    let map = RoleVariableMap::from_matrix(&m, checkpoint_id(run.checkpoint_path(seed))?)?;
    map.save(dir.join("role_map.json"))?;
    for (a, b, v) in map.shared() {
        log::info!("roles {a} and {b} share variable z{v}");
    }
    Ok(map)
}

/// A loaded checkpoint plus its role map, for manipulation commands.
pub struct Editor {
    pub ckpt: Checkpoint,
    pub map: RoleVariableMap,
}

impl Editor {
    pub fn open(run: &Run, seed: u64) -> Result<Self> {
        Ok(Editor {
            ckpt: run.load_checkpoint(seed)?,
            map: role_map(run, seed)?,
        })
    }

    pub fn resample(&self, sentence: &str, role: &str, draw: u64) -> Result<String> {
        Ok(resample_role(&self.ckpt.model, &self.ckpt.vocab, sentence, role, &self.map, draw)?.text)
    }

    pub fn swap(&self, first: &str, second: &str, role: &str) -> Result<(String, String)> {
        let (a, b) = swap_role(&self.ckpt.model, &self.ckpt.vocab, first, second, role, &self.map)?;
        Ok((a.text, b.text))
    }

    fn describe(&self) -> String {
        let roles: Vec<String> = self.map.entries.iter().map(|(r, v)| format!("{r}=z{v}")).collect();
        format!("roles (from {}): {}", self.map.source, roles.join(" "))
    }
}

const REPL_HELP: &str = "commands:
  resample <role> <sentence>
  swap <role> <sentence 1> | <sentence 2>
  roles
  help
  quit";

/// Reads commands line by line; each resample uses the next draw seed.
pub fn repl(editor: &Editor, input: impl BufRead, mut out: impl Write, first_draw: u64) -> Result<()> {
    let mut draw = first_draw;
    writeln!(out, "{}", editor.describe())?;
    for line in input.lines() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let (cmd, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let reply: Result<String> = match cmd {
            "quit" | "exit" => break,
            "help" => Ok(REPL_HELP.into()),
            "roles" => Ok(editor.describe()),
            "resample" => match rest.trim().split_once(char::is_whitespace) {
                Some((role, s)) => {
                    draw += 1;
                    editor.resample(s, role, draw - 1)
                }
                None => Err(anyhow::anyhow!("usage: resample <role> <sentence>")),
            },
            "swap" => {
                let parsed = rest
                    .trim()
                    .split_once(char::is_whitespace)
                    .and_then(|(role, s)| s.split_once('|').map(|(a, b)| (role, a.trim(), b.trim())));
                match parsed {
                    Some((role, a, b)) => editor.swap(a, b, role).map(|(x, y)| format!("{x}\n{y}")),
                    None => Err(anyhow::anyhow!("usage: swap <role> <sentence 1> | <sentence 2>")),
                }
            }
            other => Err(anyhow::anyhow!("unknown command `{other}`; try `help`")),
        };
        match reply {
            Ok(text) => writeln!(out, "{text}")?,
            Err(e) => writeln!(out, "error: {e:#}")?,
        }
        out.flush()?;
    }
    Ok(())
}
