//! Minimal CoNLL-U reader/writer. Only ID, FORM, UPOS, HEAD and DEPREL are
//! consumed; multiword ranges (`1-2`) and empty nodes (`1.1`) are skipped.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use super::ParsedSentence;
use crate::{Error, Result};

/// A parse plus its `# key = value` comment lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConlluSentence {
    pub meta: Vec<(String, String)>,
    pub parse: ParsedSentence,
}

impl ConlluSentence {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn load_conllu(path: impl AsRef<Path>) -> Result<Vec<ParsedSentence>> {
    Ok(read_conllu(path)?.into_iter().map(|s| s.parse).collect())
}

/// Reads every sentence. Sentences whose heads do not form a tree are
/// dropped with a warning; malformed lines are hard errors.
pub fn read_conllu(path: impl AsRef<Path>) -> Result<Vec<ConlluSentence>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_conllu(BufReader::new(file), path)
}

#[derive(Default)]
struct Pending {
    meta: Vec<(String, String)>,
    tokens: Vec<String>,
    upos: Vec<String>,
    head: Vec<Option<usize>>,
    deprel: Vec<String>,
    first_line: usize,
}

impl Pending {
    fn is_empty(&self) -> bool {
        self.tokens.is_empty() && self.meta.is_empty()
    }

    fn finish(self, path: &Path, out: &mut Vec<ConlluSentence>) {
        if self.tokens.is_empty() {
            return;
        }
        let parse = ParsedSentence {
            tokens: self.tokens,
            upos: self.upos,
            head: self.head,
            deprel: self.deprel,
        };
        match parse.validate() {
            Ok(()) => out.push(ConlluSentence {
                meta: self.meta,
                parse,
            }),
            Err(e) => log::warn!(
                "{}:{}: skipping sentence: {e}",
                path.display(),
                self.first_line
            ),
        }
    }
}

pub(crate) fn parse_conllu(reader: impl BufRead, path: &Path) -> Result<Vec<ConlluSentence>> {
    let mut out = Vec::new();
    let mut cur = Pending::default();
    let err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };

    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            std::mem::take(&mut cur).finish(path, &mut out);
            continue;
        }
        if cur.is_empty() {
            cur.first_line = lineno;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                cur.meta.push((k.trim().to_string(), v.trim().to_string()));
            }
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(err(lineno, format!("expected 10 columns, found {}", cols.len())));
        }
        let id = cols[0];
        if id.contains('-') || id.contains('.') {
            continue;
        }
        let id: usize = id
            .parse()
            .map_err(|_| err(lineno, format!("bad token id `{id}`")))?;
        if id != cur.tokens.len() + 1 {
            return Err(err(
                lineno,
                format!("token id {id} out of sequence (expected {})", cur.tokens.len() + 1),
            ));
        }
        let head: usize = cols[6]
            .parse()
            .map_err(|_| err(lineno, format!("bad head `{}`", cols[6])))?;
        cur.tokens.push(cols[1].to_string());
        cur.upos.push(cols[3].to_string());
        cur.head.push(head.checked_sub(1));
        cur.deprel.push(cols[7].to_string());
    }
    cur.finish(path, &mut out);
    Ok(out)
}

pub fn write_conllu<W: Write>(mut w: W, sentences: &[ConlluSentence]) -> std::io::Result<()> {
    for s in sentences {
        for (k, v) in &s.meta {
            writeln!(w, "# {k} = {v}")?;
        }
        let p = &s.parse;
        for i in 0..p.len() {
            let head = p.head[i].map_or(0, |h| h + 1);
            writeln!(
                w,
                "{}\t{}\t_\t{}\t_\t_\t{}\t{}\t_\t_",
                i + 1,
                p.tokens[i],
                p.upos[i],
                head,
                p.deprel[i]
            )?;
        }
        writeln!(w)?;
    }
    Ok(())
}
