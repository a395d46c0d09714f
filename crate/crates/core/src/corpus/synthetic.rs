//! Template-grammar corpus with exact role annotations.
//!
//! Templates are whitespace-separated patterns. Single uppercase letters are
//! slots (`S` subject noun, `V` transitive verb, `I` intransitive verb, `O`
//! object noun, `P` preposition, `A` adjective); anything else is copied
//! verbatim. Oracle roles come from slot positions. A separate rule-based
//! annotator parses arbitrary token sequences over the same lexicon, so
//! generated text (e.g. decoder samples) can be labelled too.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TokenizedSentence;
use crate::roles::{ParsedSentence, RoleSet, RoleSpans, Span};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub subject_nouns: Vec<String>,
    pub verbs_transitive: Vec<String>,
    pub verbs_intransitive: Vec<String>,
    pub object_nouns: Vec<String>,
    pub prepositions: Vec<String>,
    pub adjectives: Vec<String>,
    /// Closed-class words allowed as template literals before nouns.
    pub determiners: Vec<String>,
    pub templates: Vec<String>,
    pub seed: u64,
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            subject_nouns: words("man woman boy girl dog cat child chef player farmer teacher baby"),
            verbs_transitive: words("holds watches carries pushes paints cleans kicks finds"),
            verbs_intransitive: words("sits runs sleeps waits stands jumps"),
            object_nouns: words(
                "guitar ball car box bench table hat book bike chair door boat cup kite",
            ),
            prepositions: words("on near under behind beside"),
            adjectives: words("red small old happy big green tall blue"),
            determiners: words("the a"),
            templates: vec![
                "the S V the O .".into(),
                "a S V a O .".into(),
                "the A S V the O .".into(),
                "the S V the A O .".into(),
                "the S I .".into(),
                "the S I P the O .".into(),
                "a A S I P a O .".into(),
                "the S V the O P the O .".into(),
            ],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Cat {
    Det,
    Adj,
    Noun,
    Verb,
    Adp,
    Punct,
    Other,
}

impl Cat {
    fn upos(self) -> &'static str {
        match self {
            Cat::Det => "DET",
            Cat::Adj => "ADJ",
            Cat::Noun => "NOUN",
            Cat::Verb => "VERB",
            Cat::Adp => "ADP",
            Cat::Punct => "PUNCT",
            Cat::Other => "X",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Elem {
    Slot(char),
    Literal(String),
}

const SLOTS: [char; 6] = ['S', 'V', 'I', 'O', 'P', 'A'];

fn slot_cat(slot: char) -> Cat {
    match slot {
        'S' | 'O' => Cat::Noun,
        'V' | 'I' => Cat::Verb,
        'P' => Cat::Adp,
        'A' => Cat::Adj,
        _ => unreachable!("validated slot"),
    }
}

/// One generated sentence with its gold parse and oracle roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticExample {
    pub sentence: TokenizedSentence,
    pub parse: ParsedSentence,
    pub roles: RoleSpans,
}

/// Validated grammar: parsed templates plus the word-category lexicon.
#[derive(Debug, Clone)]
pub struct SyntheticGrammar {
    spec: SyntheticSpec,
    templates: Vec<Vec<Elem>>,
    lexicon: HashMap<String, Cat>,
}

impl SyntheticGrammar {
    pub fn new(spec: SyntheticSpec) -> Result<Self> {
        let mut lexicon: HashMap<String, Cat> = HashMap::new();
        let lists: [(&str, &[String], Cat); 7] = [
            ("subject_nouns", &spec.subject_nouns, Cat::Noun),
            ("object_nouns", &spec.object_nouns, Cat::Noun),
            ("verbs_transitive", &spec.verbs_transitive, Cat::Verb),
            ("verbs_intransitive", &spec.verbs_intransitive, Cat::Verb),
            ("prepositions", &spec.prepositions, Cat::Adp),
            ("adjectives", &spec.adjectives, Cat::Adj),
            ("determiners", &spec.determiners, Cat::Det),
        ];
        for (name, list, cat) in lists {
            for w in list {
                if w.split_whitespace().count() != 1 || w.to_lowercase() != *w {
                    return Err(Error::Config(format!(
                        "{name}: `{w}` must be a single lowercase token"
                    )));
                }
                if let Some(prev) = lexicon.insert(w.clone(), cat) {
                    if prev != cat {
                        return Err(Error::Config(format!(
                            "`{w}` appears in word lists of different categories"
                        )));
                    }
                }
            }
        }
        if spec.templates.is_empty() {
            return Err(Error::Config("no templates".into()));
        }
        let mut templates = Vec::with_capacity(spec.templates.len());
        for t in &spec.templates {
            let mut elems = Vec::new();
            for tok in t.split_whitespace() {
                if tok.chars().all(|c| c.is_ascii_uppercase()) {
                    let c = tok.chars().next().unwrap();
                    if tok.len() != 1 || !SLOTS.contains(&c) {
                        return Err(Error::Config(format!("template `{t}`: unknown slot `{tok}`")));
                    }
                    if Self::list_for(&spec, c).is_empty() {
                        return Err(Error::Config(format!(
                            "template `{t}`: slot `{c}` has an empty word list"
                        )));
                    }
                    elems.push(Elem::Slot(c));
                } else {
                    if tok.chars().all(|c| c.is_ascii_punctuation()) {
                        lexicon.entry(tok.to_string()).or_insert(Cat::Punct);
                    }
                    elems.push(Elem::Literal(tok.to_string()));
                }
            }
            if elems.is_empty() {
                return Err(Error::Config("empty template".into()));
            }
            templates.push(elems);
        }
        let grammar = SyntheticGrammar {
            spec,
            templates,
            lexicon,
        };
        // the annotator must reproduce the slot oracle on every template
        let roles = RoleSet::core();
        for (k, t) in grammar.templates.iter().enumerate() {
            let tokens = grammar.fill(t, |list| list[0].clone());
            let oracle = grammar.oracle(t, &tokens);
            let parsed = crate::roles::extract_roles(&grammar.annotate(&tokens), &roles);
            if oracle != parsed {
                return Err(Error::Config(format!(
                    "template `{}`: slot roles ({oracle}) disagree with its parse ({parsed})",
                    grammar.spec.templates[k]
                )));
            }
        }
        Ok(grammar)
    }

    pub fn spec(&self) -> &SyntheticSpec {
        &self.spec
    }

    fn list_for(spec: &SyntheticSpec, slot: char) -> &[String] {
        match slot {
            'S' => &spec.subject_nouns,
            'V' => &spec.verbs_transitive,
            'I' => &spec.verbs_intransitive,
            'O' => &spec.object_nouns,
            'P' => &spec.prepositions,
            'A' => &spec.adjectives,
            _ => unreachable!("validated slot"),
        }
    }

    fn fill(&self, template: &[Elem], mut pick: impl FnMut(&[String]) -> String) -> Vec<String> {
        template
            .iter()
            .map(|e| match e {
                Elem::Slot(c) => pick(Self::list_for(&self.spec, *c)),
                Elem::Literal(w) => w.clone(),
            })
            .collect()
    }

    fn cat(&self, token: &str) -> Cat {
        self.lexicon.get(token).copied().unwrap_or(Cat::Other)
    }

    /// Start of the noun phrase headed at `noun`: the run of determiners and
    /// adjectives directly before it.
    fn np_start(cats: &[Cat], noun: usize) -> usize {
        let mut s = noun;
        while s > 0 && matches!(cats[s - 1], Cat::Det | Cat::Adj) {
            s -= 1;
        }
        s
    }

    fn oracle(&self, template: &[Elem], tokens: &[String]) -> RoleSpans {
        let cats: Vec<Cat> = template
            .iter()
            .map(|e| match e {
                Elem::Slot(c) => slot_cat(*c),
                Elem::Literal(w) => self.cat(w),
            })
            .collect();
        let slot_at = |c: char| template.iter().position(|e| *e == Elem::Slot(c));
        let span = |noun: usize| {
            let indices: Vec<usize> = (Self::np_start(&cats, noun)..=noun).collect();
            Span {
                tokens: indices.iter().map(|&i| tokens[i].clone()).collect(),
                indices,
            }
        };
        let verb = template
            .iter()
            .position(|e| matches!(e, Elem::Slot('V') | Elem::Slot('I')));
        let objects: Vec<usize> = template
            .iter()
            .enumerate()
            .filter(|(_, e)| **e == Elem::Slot('O'))
            .map(|(i, _)| i)
            .collect();
        let dobj = verb.and_then(|v| {
            objects
                .iter()
                .copied()
                .find(|&o| Self::np_start(&cats, o) == v + 1)
        });
        let pobj = objects.iter().copied().find(|&o| {
            let s = Self::np_start(&cats, o);
            s > 0 && cats[s - 1] == Cat::Adp
        });
        RoleSpans {
            entries: vec![
                (
                    "verb".into(),
                    verb.map(|v| Span {
                        indices: vec![v],
                        tokens: vec![tokens[v].clone()],
                    }),
                ),
                ("subj".into(), slot_at('S').map(span)),
                ("dobj".into(), dobj.map(span)),
                ("pobj".into(), pobj.map(span)),
            ],
        }
    }

    /// Rule-based dependency parse of any token sequence over the lexicon.
    /// Unknown words become `X` dependents of the root.
    pub fn annotate<S: AsRef<str>>(&self, tokens: &[S]) -> ParsedSentence {
        let n = tokens.len();
        assert!(n > 0, "cannot annotate an empty sentence");
        let cats: Vec<Cat> = tokens.iter().map(|t| self.cat(t.as_ref())).collect();
        let root = cats
            .iter()
            .position(|&c| c == Cat::Verb)
            .or_else(|| cats.iter().position(|&c| c == Cat::Noun))
            .unwrap_or(0);
        let root_is_verb = cats[root] == Cat::Verb;

        let mut head: Vec<Option<usize>> = vec![Some(root); n];
        let mut deprel: Vec<String> = vec!["dep".into(); n];
        head[root] = None;
        deprel[root] = "root".into();

        for i in 0..n {
            if cats[i] == Cat::Noun {
                for k in Self::np_start(&cats, i)..i {
                    head[k] = Some(i);
                    deprel[k] = if cats[k] == Cat::Det { "det" } else { "amod" }.into();
                }
            }
            if i == root {
                continue;
            }
            match cats[i] {
                Cat::Noun => {
                    let start = Self::np_start(&cats, i);
                    if start > 0 && cats[start - 1] == Cat::Adp {
                        head[i] = Some(start - 1);
                        deprel[i] = "pobj".into();
                    } else if root_is_verb && i + 1 == root {
                        deprel[i] = "nsubj".into();
                    } else if root_is_verb && start == root + 1 {
                        deprel[i] = "dobj".into();
                    }
                }
                Cat::Adp => deprel[i] = "prep".into(),
                Cat::Punct => deprel[i] = "punct".into(),
                _ => {}
            }
        }
        ParsedSentence {
            tokens: tokens.iter().map(|t| t.as_ref().to_string()).collect(),
            upos: cats.iter().map(|c| c.upos().to_string()).collect(),
            head,
            deprel,
        }
    }

    pub fn generate(&self, n: usize) -> Vec<SyntheticExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        (0..n)
            .map(|_| {
                let t = &self.templates[rng.random_range(0..self.templates.len())];
                let tokens = self.fill(t, |list| list[rng.random_range(0..list.len())].clone());
                let roles = self.oracle(t, &tokens);
                let parse = self.annotate(&tokens);
                SyntheticExample {
                    sentence: TokenizedSentence { tokens },
                    parse,
                    roles,
                }
            })
            .collect()
    }
}

pub fn gen_synthetic(spec: &SyntheticSpec, n: usize) -> Result<Vec<SyntheticExample>> {
    if n == 0 {
        return Err(Error::Config("synthetic corpus size must be at least 1".into()));
    }
    Ok(SyntheticGrammar::new(spec.clone())?.generate(n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roles::extract_roles;
    use proptest::prelude::*;

    fn spec_with(templates: &[&str]) -> SyntheticSpec {
        SyntheticSpec {
            subject_nouns: vec!["man".into()],
            verbs_transitive: vec!["holds".into()],
            object_nouns: vec!["guitar".into()],
            templates: templates.iter().map(|s| s.to_string()).collect(),
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn transitive_template_roles() {
        let ex = gen_synthetic(&spec_with(&["the S V the O"]), 1).unwrap();
        let r = &ex[0].roles;
        assert_eq!(ex[0].sentence.text(), "the man holds the guitar");
        assert_eq!(r.text("subj").as_deref(), Some("the man"));
        assert_eq!(r.text("verb").as_deref(), Some("holds"));
        assert_eq!(r.text("dobj").as_deref(), Some("the guitar"));
        assert_eq!(r.get("pobj"), None);
    }

    #[test]
    fn prepositional_template_roles() {
        let ex = gen_synthetic(&spec_with(&["the S V on the O"]), 1).unwrap();
        let r = &ex[0].roles;
        assert_eq!(r.text("pobj").as_deref(), Some("the guitar"));
        assert_eq!(r.get("dobj"), None);
    }

    #[test]
    fn missing_or_unknown_slots_are_config_errors() {
        let mut spec = spec_with(&["the S V the A O"]);
        spec.adjectives.clear();
        assert!(matches!(gen_synthetic(&spec, 3), Err(Error::Config(_))));
        assert!(matches!(gen_synthetic(&spec_with(&["the S X the O"]), 3), Err(Error::Config(_))));
    }

    #[test]
    fn same_seed_same_corpus() {
        let spec = SyntheticSpec::default();
        let a = gen_synthetic(&spec, 300).unwrap();
        let b = gen_synthetic(&spec, 300).unwrap();
        assert_eq!(a, b);
        let other = gen_synthetic(&SyntheticSpec { seed: 9, ..spec }, 300).unwrap();
        assert_ne!(a, other);
    }

    #[test]
    fn default_vocab_is_about_sixty() {
        let ex = gen_synthetic(&SyntheticSpec::default(), 2000).unwrap();
        let sents: Vec<_> = ex.into_iter().map(|e| e.sentence).collect();
        let vocab = super::super::build_vocab(&sents, 1).unwrap();
        let distinct: std::collections::BTreeSet<&str> = sents
            .iter()
            .flat_map(|s| s.tokens.iter().map(String::as_str))
            .collect();
        assert_eq!(vocab.len(), distinct.len() + 4);
        assert!((50..=70).contains(&vocab.len()), "{}", vocab.len());
    }

    #[test]
    fn annotator_handles_foreign_tokens() {
        let g = SyntheticGrammar::new(SyntheticSpec::default()).unwrap();
        let p = g.annotate(&["<unk>", "the", "dog", "dog", "on", "."]);
        assert!(p.validate().is_ok());
        let p = g.annotate(&["the", "the"]);
        assert!(p.validate().is_ok());
    }

    proptest! {
        #[test]
        fn oracle_agrees_with_parse(seed in any::<u64>()) {
            let spec = SyntheticSpec { seed, ..SyntheticSpec::default() };
            for ex in gen_synthetic(&spec, 20).unwrap() {
                prop_assert!(ex.parse.validate().is_ok());
                prop_assert_eq!(&extract_roles(&ex.parse, &RoleSet::core()), &ex.roles);
            }
        }

        #[test]
        fn annotator_always_yields_a_tree(
            picks in proptest::collection::vec(0usize..64, 1..15)
        ) {
            let g = SyntheticGrammar::new(SyntheticSpec::default()).unwrap();
            let mut lex: Vec<&String> = g.lexicon.keys().collect();
            lex.sort();
            let toks: Vec<String> = picks.iter().map(|&i| {
                lex.get(i).map_or_else(|| "zzz".to_string(), |s| s.to_string())
            }).collect();
            let p = g.annotate(&toks);
            prop_assert!(p.validate().is_ok());
        }
    }
}
