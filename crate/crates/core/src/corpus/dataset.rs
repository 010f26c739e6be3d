use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::container;
use crate::error::{Error, Result};

use super::noise::{CorruptionSpec, Corrupter};
use super::render::{duration_rule, render_utterance};
use super::Token;

/// One transcript/frames pair. Frames always come from `reference`;
/// `training` is the (possibly corrupted) transcript a model is fit on.
#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub speaker: u32,
    pub reference: Vec<Token>,
    pub training: Vec<Token>,
    pub frames: Tensor,
}

impl Utterance {
    /// Durations for the training transcript, aligned against the reference
    /// frames. See [`aligned_durations`].
    pub fn training_durations(&self) -> Vec<usize> {
        aligned_durations(&self.reference, &self.training, self.speaker)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocab_size: usize,
    pub acoustic_dim: usize,
    pub speakers: BTreeSet<u32>,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn size_of(&self, speaker: u32) -> usize {
        self.utterances.iter().filter(|u| u.speaker == speaker).count()
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    /// Copy whose training transcripts are corrupted by one stream.
    pub fn corrupted(&self, spec: &CorruptionSpec) -> Result<Corpus> {
        let mut c = Corrupter::new(spec.clone(), self.vocab_size)?;
        let mut out = self.clone();
        for u in &mut out.utterances {
            u.training = c.corrupt(&u.reference);
        }
        Ok(out)
    }

    /// Keeps the first `n` utterances of every speaker.
    pub fn truncated(&self, n: usize) -> Corpus {
        let mut seen = std::collections::BTreeMap::new();
        let mut out = self.clone();
        out.utterances.retain(|u| {
            let c = seen.entry(u.speaker).or_insert(0usize);
            *c += 1;
            *c <= n
        });
        out
    }

    /// Concatenates corpora sharing vocabulary and acoustic dimension.
    pub fn merged(parts: &[&Corpus]) -> Result<Corpus> {
        let first = parts
            .first()
            .ok_or_else(|| Error::contract("merging zero corpora"))?;
        let mut out = Corpus {
            vocab_size: first.vocab_size,
            acoustic_dim: first.acoustic_dim,
            speakers: BTreeSet::new(),
            utterances: Vec::new(),
        };
        for p in parts {
            if p.vocab_size != out.vocab_size || p.acoustic_dim != out.acoustic_dim {
                return Err(Error::Config("corpora disagree on vocabulary or acoustic dim".into()));
            }
            out.speakers.extend(&p.speakers);
            out.utterances.extend(p.utterances.iter().cloned());
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub utts_per_speaker: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub speakers: Vec<u32>,
    pub vocab_size: usize,
    pub acoustic_dim: usize,
    pub seed: u64,
}

/// Uniform random transcripts per speaker with frames rendered from them.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    if spec.min_len < 1 || spec.max_len > 200 || spec.min_len > spec.max_len {
        return Err(Error::Config(format!(
            "length range {}..={} must lie within 1..=200",
            spec.min_len, spec.max_len
        )));
    }
    if spec.vocab_size < 2 {
        return Err(Error::Config("vocabulary needs at least two tokens".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut utterances = Vec::with_capacity(spec.utts_per_speaker * spec.speakers.len());
    for &speaker in &spec.speakers {
        for _ in 0..spec.utts_per_speaker {
            let len = rng.gen_range(spec.min_len..=spec.max_len);
            let reference: Vec<Token> = (0..len)
                .map(|_| rng.gen_range(0..spec.vocab_size as Token))
                .collect();
            let frames = render_utterance(&reference, speaker, spec.acoustic_dim)?;
            utterances.push(Utterance {
                speaker,
                training: reference.clone(),
                reference,
                frames,
            });
        }
    }
    Ok(Corpus {
        vocab_size: spec.vocab_size,
        acoustic_dim: spec.acoustic_dim,
        speakers: spec.speakers.iter().copied().collect(),
        utterances,
    })
}

/// Durations for `training` that tile exactly the frames rendered from
/// `reference`, the way a forced aligner would segment recorded audio
/// against an imperfect transcript.
///
/// The two transcripts are aligned by minimum edit distance. Matched
/// characters keep their true duration. Between consecutive matches, the
/// frames of the unmatched reference characters are shared as evenly as
/// possible among the unmatched training characters (earlier characters get
/// the remainder); if there are none, the frames go to the preceding matched
/// character, or the following one at the start of the utterance.
pub fn aligned_durations(reference: &[Token], training: &[Token], speaker: u32) -> Vec<usize> {
    let (n, m) = (reference.len(), training.len());
    if m == 0 {
        return Vec::new();
    }
    let w = m + 1;
    let mut dp = vec![0usize; (n + 1) * w];
    for j in 0..=m {
        dp[j] = j;
    }
    for i in 1..=n {
        dp[i * w] = i;
        for j in 1..=m {
            let sub = dp[(i - 1) * w + j - 1] + usize::from(reference[i - 1] != training[j - 1]);
            dp[i * w + j] = sub.min(dp[(i - 1) * w + j] + 1).min(dp[i * w + j - 1] + 1);
        }
    }
    let mut anchors = Vec::new();
    let (mut i, mut j) = (n, m);
    while i > 0 && j > 0 {
        let here = dp[i * w + j];
        let diag = dp[(i - 1) * w + j - 1];
        if reference[i - 1] == training[j - 1] && here == diag {
            anchors.push((i - 1, j - 1));
            i -= 1;
            j -= 1;
        } else if here == diag + 1 {
            i -= 1;
            j -= 1;
        } else if here == dp[(i - 1) * w + j] + 1 {
            i -= 1;
        } else {
            j -= 1;
        }
    }
    anchors.reverse();

    let mut durations = vec![0usize; m];
    let mut orphan_frames = 0usize;
    let (mut ri, mut tj) = (0, 0);
    let mut last_anchor: Option<usize> = None;
    let ends = anchors.iter().copied().chain(std::iter::once((n, m)));
    for (ai, aj) in ends {
        let frames: usize = reference[ri..ai].iter().map(|&k| duration_rule(speaker, k)).sum();
        let count = aj - tj;
        if count > 0 {
            let (q, r) = (frames / count, frames % count);
            for (x, d) in durations[tj..aj].iter_mut().enumerate() {
                *d = q + usize::from(x < r);
            }
        } else if frames > 0 {
            match last_anchor {
                Some(prev) => durations[prev] += frames,
                None => orphan_frames += frames,
            }
        }
        if ai < n {
            durations[aj] = duration_rule(speaker, reference[ai]) + orphan_frames;
            orphan_frames = 0;
            last_anchor = Some(aj);
        }
        ri = ai + 1;
        tj = aj + 1;
    }
    durations
}

fn format_tokens(tokens: &[Token]) -> String {
    let mut s = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            s.push(' ');
        }
        write!(s, "{t}").expect("string write");
    }
    s
}

pub fn parse_tokens(s: &str) -> Result<Vec<Token>> {
    s.split_whitespace()
        .map(|t| {
            t.parse::<Token>()
                .map_err(|_| Error::Format(format!("bad token {t:?}")))
        })
        .collect()
}

pub fn manifest_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.tsv"))
}

pub fn frames_path(dir: &Path, stem: &str) -> PathBuf {
    dir.join(format!("{stem}.frames"))
}

const MANIFEST_HEADER: &str = "mhtts-corpus v1";

/// Writes `<stem>.tsv` (one record per utterance: speaker, reference tokens,
/// training tokens, frame reference) and `<stem>.frames` (tensor container).
pub fn write_corpus(dir: &Path, stem: &str, corpus: &Corpus) -> Result<()> {
    let frames_name = format!("{stem}.frames");
    let mut text = format!(
        "# {MANIFEST_HEADER} vocab={} acoustic_dim={} speakers={}\n",
        corpus.vocab_size,
        corpus.acoustic_dim,
        corpus
            .speakers
            .iter()
            .map(u32::to_string)
            .collect::<Vec<_>>()
            .join(",")
    );
    text.push_str("# speaker\treference\ttraining\tframes\n");
    let mut tensors = Vec::with_capacity(corpus.len());
    for (i, u) in corpus.utterances.iter().enumerate() {
        let name = format!("u{i}");
        writeln!(
            text,
            "{}\t{}\t{}\t{frames_name}#{name}",
            u.speaker,
            format_tokens(&u.reference),
            format_tokens(&u.training),
        )
        .expect("string write");
        tensors.push((name, &u.frames));
    }
    let meta = serde_json::json!({
        "kind": "frames",
        "acoustic_dim": corpus.acoustic_dim,
        "utterances": corpus.len(),
    });
    container::write(&frames_path(dir, stem), &meta, &tensors)?;
    container::write_atomic(&manifest_path(dir, stem), text.as_bytes())
}

pub fn read_corpus(dir: &Path, stem: &str) -> Result<Corpus> {
    let mpath = manifest_path(dir, stem);
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{} is empty", mpath.display())))?;
    let fields = header
        .strip_prefix("# ")
        .and_then(|h| h.strip_prefix(MANIFEST_HEADER))
        .ok_or_else(|| Error::Format(format!("{} lacks a corpus header", mpath.display())))?;
    let mut vocab_size = None;
    let mut acoustic_dim = None;
    let mut speakers = BTreeSet::new();
    for kv in fields.split_whitespace() {
        match kv.split_once('=') {
            Some(("vocab", v)) => vocab_size = v.parse().ok(),
            Some(("acoustic_dim", v)) => acoustic_dim = v.parse().ok(),
            Some(("speakers", v)) => {
                for s in v.split(',').filter(|s| !s.is_empty()) {
                    speakers.insert(
                        s.parse()
                            .map_err(|_| Error::Format(format!("bad speaker id {s:?}")))?,
                    );
                }
            }
            _ => {}
        }
    }
    let (Some(vocab_size), Some(acoustic_dim)) = (vocab_size, acoustic_dim) else {
        return Err(Error::Format("corpus header missing vocab or acoustic_dim".into()));
    };
    let frames = container::read(&frames_path(dir, stem))?;
    let mut utterances = Vec::new();
    for line in lines.filter(|l| !l.starts_with('#') && !l.trim().is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::Format(format!("manifest record has {} fields", cols.len())));
        }
        let speaker: u32 = cols[0]
            .parse()
            .map_err(|_| Error::Format(format!("bad speaker {:?}", cols[0])))?;
        if !speakers.contains(&speaker) {
            return Err(Error::Format(format!("speaker {speaker} not declared in header")));
        }
        let name = cols[3]
            .split_once('#')
            .map(|(_, n)| n)
            .ok_or_else(|| Error::Format(format!("bad frame reference {:?}", cols[3])))?;
        let f = frames
            .get(name)
            .ok_or_else(|| Error::Corruption(format!("frames for {name} missing")))?;
        utterances.push(Utterance {
            speaker,
            reference: parse_tokens(cols[1])?,
            training: parse_tokens(cols[2])?,
            frames: f.clone(),
        });
    }
    Ok(Corpus {
        vocab_size,
        acoustic_dim,
        speakers,
        utterances,
    })
}
