//! Syllable-level speech recognition simulator for spoken Japanese digits.
//!
//! An utterance is the canonical syllable sequence of a digit passed through
//! a noisy channel (substitution within a confusion neighborhood, echo-vowel
//! insertion, deletion). The decoder knows the channel and searches for the
//! word hypotheses that best explain an utterance under a syllable bigram
//! language model, which can be re-estimated from selected words.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModuleError, Result};

/// The syllable inventory, in a fixed order.
pub const SYLLABLES: [&str; 17] = [
    "ze", "ro", "i", "chi", "ni", "sa", "n", "yo", "go", "ku", "na", "ha", "kyu", "u", "o", "a", "e",
];

/// Canonical pronunciation of each digit.
pub const PRONUNCIATIONS: [&[&str]; 10] = [
    &["ze", "ro"],
    &["i", "chi"],
    &["ni"],
    &["sa", "n"],
    &["yo", "n"],
    &["go"],
    &["ro", "ku"],
    &["na", "na"],
    &["ha", "chi"],
    &["kyu", "u"],
];

/// Acoustically similar syllables each syllable may be misheard as.
const NEIGHBORHOODS: [(&str, &[&str]); 17] = [
    ("ze", &["sa", "e"]),
    ("ro", &["o"]),
    ("i", &["chi", "ni"]),
    ("chi", &["i"]),
    ("ni", &["n", "i"]),
    ("sa", &["ze", "ha"]),
    ("n", &["na", "ni"]),
    ("yo", &["o", "ro"]),
    ("go", &["o", "ku"]),
    ("ku", &["kyu", "u"]),
    ("na", &["n", "a"]),
    ("ha", &["a", "sa"]),
    ("kyu", &["ku", "u"]),
    ("u", &["ku", "o"]),
    ("o", &["go", "yo"]),
    ("a", &["na", "ha"]),
    ("e", &["ze"]),
];

/// Canonical pronunciation of a digit as a space-separated word.
pub fn pronunciation(digit: u8) -> Option<String> {
    PRONUNCIATIONS.get(digit as usize).map(|p| p.join(" "))
}

/// Noise probabilities of the channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseLevels {
    pub p_sub: f64,
    pub p_ins: f64,
    pub p_del: f64,
}

impl Default for NoiseLevels {
    fn default() -> Self {
        Self {
            p_sub: 0.10,
            p_ins: 0.03,
            p_del: 0.03,
        }
    }
}

impl NoiseLevels {
    pub const NOISELESS: NoiseLevels = NoiseLevels {
        p_sub: 0.0,
        p_ins: 0.0,
        p_del: 0.0,
    };
}

/// A noisy channel over a syllable inventory.
#[derive(Clone, Debug, PartialEq)]
pub struct Channel {
    pub noise: NoiseLevels,
    inventory: Vec<String>,
    /// Neighbor ids per syllable id.
    neighbors: Vec<Vec<usize>>,
    /// Id of the echo syllable inserted after each syllable.
    echo: Vec<usize>,
}

fn echo_of(syllable: &str) -> &str {
    match syllable.char_indices().last() {
        Some((i, c)) if "aiueo".contains(c) => &syllable[i..],
        _ => syllable,
    }
}

impl Channel {
    /// Builds a channel from an inventory and neighbor lists. A syllable's
    /// echo is its final vowel, or the syllable itself when it has none.
    pub fn new(noise: NoiseLevels, inventory: &[&str], neighborhoods: &[(&str, &[&str])]) -> Result<Self> {
        for (name, p) in [("p_sub", noise.p_sub), ("p_ins", noise.p_ins), ("p_del", noise.p_del)] {
            if !(0.0..1.0).contains(&p) {
                return Err(ModuleError::Input(format!("{name} = {p} outside [0, 1)")));
            }
        }
        let inventory: Vec<String> = inventory.iter().map(|s| s.to_string()).collect();
        let id = |s: &str| {
            inventory
                .iter()
                .position(|x| x == s)
                .ok_or_else(|| ModuleError::Input(format!("syllable `{s}` is not in the inventory")))
        };
        let mut neighbors = vec![Vec::new(); inventory.len()];
        for (s, ns) in neighborhoods {
            let i = id(s)?;
            neighbors[i] = ns.iter().map(|n| id(n)).collect::<Result<_>>()?;
            if neighbors[i].contains(&i) {
                return Err(ModuleError::Input(format!("`{s}` lists itself as a neighbor")));
            }
        }
        if noise.p_sub > 0.0 {
            if let Some(i) = neighbors.iter().position(Vec::is_empty) {
                return Err(ModuleError::Input(format!(
                    "`{}` has no confusion neighbors but p_sub > 0",
                    inventory[i]
                )));
            }
        }
        let echo = inventory.iter().map(|s| id(echo_of(s))).collect::<Result<_>>()?;
        Ok(Self {
            noise,
            inventory,
            neighbors,
            echo,
        })
    }

    /// The digit channel over [`SYLLABLES`].
    pub fn digits(noise: NoiseLevels) -> Self {
        Self::new(noise, &SYLLABLES, &NEIGHBORHOODS).expect("built-in tables are consistent")
    }

    pub fn inventory(&self) -> &[String] {
        &self.inventory
    }

    pub fn id(&self, syllable: &str) -> Option<usize> {
        self.inventory.iter().position(|s| s == syllable)
    }

    pub fn ids(&self, syllables: &[String]) -> Result<Vec<usize>> {
        syllables
            .iter()
            .map(|s| {
                self.id(s)
                    .ok_or_else(|| ModuleError::Input(format!("unknown syllable `{s}`")))
            })
            .collect()
    }

    pub fn neighbors(&self, id: usize) -> &[usize] {
        &self.neighbors[id]
    }

    pub fn echo(&self, id: usize) -> usize {
        self.echo[id]
    }

    /// Probability that intended syllable `h` is emitted as `o`, given it is
    /// not deleted.
    pub fn emit_prob(&self, h: usize, o: usize) -> f64 {
        if h == o {
            1.0 - self.noise.p_sub
        } else if self.neighbors[h].contains(&o) {
            self.noise.p_sub / self.neighbors[h].len() as f64
        } else {
            0.0
        }
    }

    /// Passes a syllable sequence through the channel. The result is never
    /// empty: deleting the last syllable when nothing has been emitted yet is
    /// suppressed.
    pub fn synthesize<R: Rng + ?Sized>(&self, syllables: &[&str], rng: &mut R) -> Result<Vec<String>> {
        if syllables.is_empty() {
            return Err(ModuleError::Input("cannot synthesize an empty word".into()));
        }
        let ids: Vec<usize> = syllables
            .iter()
            .map(|s| self.id(s).ok_or_else(|| ModuleError::Input(format!("unknown syllable `{s}`"))))
            .collect::<Result<_>>()?;
        let mut out = Vec::new();
        let last = ids.len() - 1;
        for (i, &h) in ids.iter().enumerate() {
            let must_emit = i == last && out.is_empty();
            if !must_emit && rng.gen::<f64>() < self.noise.p_del {
                continue;
            }
            let o = if rng.gen::<f64>() < self.noise.p_sub {
                let ns = &self.neighbors[h];
                ns[rng.gen_range(0..ns.len())]
            } else {
                h
            };
            out.push(o);
            if rng.gen::<f64>() < self.noise.p_ins {
                out.push(self.echo[o]);
            }
        }
        Ok(out.into_iter().map(|i| self.inventory[i].clone()).collect())
    }
}

/// Add-δ smoothed syllable bigram with word-boundary symbols.
///
/// Contexts are the word start plus every syllable; outcomes are every
/// syllable plus the word end.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BigramLm {
    pub inventory: Vec<String>,
    pub delta: f64,
    /// `counts[context][outcome]`, context 0 = word start, outcome `V` = word end.
    pub counts: Vec<Vec<f64>>,
}

impl BigramLm {
    /// A model with no observations, which is uniform in every context.
    pub fn uniform(inventory: &[String], delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(ModuleError::Input(format!("smoothing δ must be positive, got {delta}")));
        }
        let v = inventory.len();
        Ok(Self {
            inventory: inventory.to_vec(),
            delta,
            counts: vec![vec![0.0; v + 1]; v + 1],
        })
    }

    pub fn end(&self) -> usize {
        self.inventory.len()
    }

    /// `P(next | prev)` with `prev = None` for the word start and
    /// `next = self.end()` for the word end.
    pub fn prob(&self, prev: Option<usize>, next: usize) -> f64 {
        let row = &self.counts[prev.map_or(0, |p| p + 1)];
        let total: f64 = row.iter().sum();
        (row[next] + self.delta) / (total + self.delta * row.len() as f64)
    }

    /// Probability of a whole word, boundaries included.
    pub fn word_prob(&self, word: &[usize]) -> f64 {
        let mut p = 1.0;
        let mut prev = None;
        for &s in word {
            p *= self.prob(prev, s);
            prev = Some(s);
        }
        p * self.prob(prev, self.end())
    }

    /// Replaces all counts with those of `words` (space-separated syllables).
    pub fn rebuild<S: AsRef<str>>(&mut self, words: &[S]) -> Result<()> {
        let v = self.inventory.len();
        let mut counts = vec![vec![0.0; v + 1]; v + 1];
        for word in words {
            let mut ctx = 0;
            for syl in word.as_ref().split_whitespace() {
                let id = self
                    .inventory
                    .iter()
                    .position(|s| s == syl)
                    .ok_or_else(|| ModuleError::Input(format!("unknown syllable `{syl}`")))?;
                counts[ctx][id] += 1.0;
                ctx = id + 1;
            }
            if ctx == 0 {
                return Err(ModuleError::Input("empty word".into()));
            }
            counts[ctx][v] += 1.0;
        }
        self.counts = counts;
        Ok(())
    }
}

/// Decoder search settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    /// Partial hypotheses kept per hypothesis length.
    pub beam: usize,
    /// Intended syllables a hypothesis may leave unobserved.
    pub max_deletions: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            beam: 256,
            max_deletions: 1,
        }
    }
}

/// A word (space-separated syllables) with its score.
pub type Hypothesis = (String, f64);

/// Returns the top `l` distinct hypotheses for `observed` with scores
/// normalized over the returned list, sorted by descending score and then
/// lexicographically.
///
/// A word's score is the channel probability of the utterance summed over
/// every alignment, times the word's LM probability. The decoder's channel
/// ignores the final-deletion suppression of [`Channel::synthesize`], so
/// deletion is always possible at rate `p_del`.
pub fn recognize(
    channel: &Channel,
    lm: &BigramLm,
    decoder: &DecoderConfig,
    observed: &[String],
    l: usize,
) -> Result<Vec<Hypothesis>> {
    if observed.is_empty() {
        return Err(ModuleError::Input("empty utterance".into()));
    }
    if l == 0 {
        return Err(ModuleError::Input("list size must be at least 1".into()));
    }
    if lm.inventory != channel.inventory {
        return Err(ModuleError::Input("language model and channel disagree on the inventory".into()));
    }
    let obs = channel.ids(observed)?;
    let n = obs.len();
    let NoiseLevels { p_ins, p_del, .. } = channel.noise;
    let v = channel.inventory.len();

    // candidates[j]: intended syllables that can surface as obs[j]
    let candidates: Vec<Vec<(usize, f64)>> = obs
        .iter()
        .map(|&o| {
            (0..v)
                .filter_map(|h| {
                    let p = channel.emit_prob(h, o);
                    (p > 0.0).then_some((h, p * (1.0 - p_del)))
                })
                .collect()
        })
        .collect();

    type Key = (Vec<usize>, usize, usize);
    let mut level: Vec<(Key, f64)> = vec![((Vec::new(), 0, 0), 1.0)];
    let mut finished: BTreeMap<Vec<usize>, f64> = BTreeMap::new();

    for _ in 0..n + decoder.max_deletions {
        let mut next: BTreeMap<Key, f64> = BTreeMap::new();
        for ((prefix, j, dels), score) in &level {
            let prev = prefix.last().copied();
            if *j < n {
                for &(h, p_emit) in &candidates[*j] {
                    let base = score * lm.prob(prev, h) * p_emit;
                    let mut word = prefix.clone();
                    word.push(h);
                    if *j + 1 < n && obs[*j + 1] == channel.echo(obs[*j]) {
                        *next.entry((word.clone(), *j + 2, *dels)).or_default() += base * p_ins;
                    }
                    *next.entry((word, *j + 1, *dels)).or_default() += base * (1.0 - p_ins);
                }
            }
            if *dels < decoder.max_deletions {
                for h in 0..v {
                    let mut word = prefix.clone();
                    word.push(h);
                    *next.entry((word, *j, dels + 1)).or_default() += score * lm.prob(prev, h) * p_del;
                }
            }
        }
        let mut states: Vec<(Key, f64)> = next.into_iter().filter(|(_, s)| *s > 0.0).collect();
        // stable sort keeps key order among equal scores
        states.sort_by(|a, b| b.1.total_cmp(&a.1));
        states.truncate(decoder.beam);
        for ((prefix, j, _), score) in &states {
            if *j == n {
                *finished.entry(prefix.clone()).or_default() += score * lm.prob(prefix.last().copied(), lm.end());
            }
        }
        level = states;
    }

    Ok(top_l(
        finished
            .into_iter()
            .map(|(w, s)| (w.iter().map(|i| channel.inventory[*i].as_str()).collect::<Vec<_>>().join(" "), s)),
        l,
    ))
}

/// Sorts by descending score then by string, keeps `l`, normalizes.
pub fn top_l<I: IntoIterator<Item = Hypothesis>>(hyps: I, l: usize) -> Vec<Hypothesis> {
    let mut all: Vec<Hypothesis> = hyps.into_iter().filter(|(_, s)| *s > 0.0).collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(l);
    let total: f64 = all.iter().map(|(_, s)| s).sum();
    for (_, s) in &mut all {
        *s /= total;
    }
    all
}

/// Recognizer settings as they appear in a pipeline configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AsrConfig {
    pub p_sub: f64,
    pub p_ins: f64,
    pub p_del: f64,
    /// Add-δ smoothing of the bigram model.
    pub lm_delta: f64,
    pub beam: usize,
    pub max_deletions: usize,
}

impl Default for AsrConfig {
    fn default() -> Self {
        let noise = NoiseLevels::default();
        Self {
            p_sub: noise.p_sub,
            p_ins: noise.p_ins,
            p_del: noise.p_del,
            lm_delta: 0.5,
            beam: DecoderConfig::default().beam,
            max_deletions: DecoderConfig::default().max_deletions,
        }
    }
}

/// Channel, decoder and current language model.
#[derive(Clone, Debug, PartialEq)]
pub struct AsrState {
    pub channel: Channel,
    pub decoder: DecoderConfig,
    pub lm: BigramLm,
}

impl AsrConfig {
    pub fn noise(&self) -> NoiseLevels {
        NoiseLevels {
            p_sub: self.p_sub,
            p_ins: self.p_ins,
            p_del: self.p_del,
        }
    }

    pub fn with_noise(self, noise: NoiseLevels) -> Self {
        Self {
            p_sub: noise.p_sub,
            p_ins: noise.p_ins,
            p_del: noise.p_del,
            ..self
        }
    }
}

impl AsrState {
    pub fn new(config: &AsrConfig) -> Result<Self> {
        let channel = Channel::new(config.noise(), &SYLLABLES, &NEIGHBORHOODS)?;
        let lm = BigramLm::uniform(channel.inventory(), config.lm_delta)?;
        Ok(Self {
            channel,
            decoder: DecoderConfig {
                beam: config.beam,
                max_deletions: config.max_deletions,
            },
            lm,
        })
    }

    pub fn recognize(&self, observed: &[String], l: usize) -> Result<Vec<Hypothesis>> {
        recognize(&self.channel, &self.lm, &self.decoder, observed, l)
    }

    /// Rebuilds the language model from scratch out of `words`.
    pub fn update_lm<S: AsRef<str>>(&mut self, words: &[S]) -> Result<()> {
        if words.is_empty() {
            return Err(ModuleError::Input("no words to learn from".into()));
        }
        self.lm.rebuild(words)
    }

    /// Returns the language model to its uniform initial state.
    pub fn reset_lm(&mut self) {
        self.lm.counts.iter_mut().flatten().for_each(|c| *c = 0.0);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_owned).collect()
    }

    #[test]
    fn echoes() {
        assert_eq!(echo_of("chi"), "i");
        assert_eq!(echo_of("n"), "n");
        assert_eq!(echo_of("kyu"), "u");
        assert_eq!(echo_of("o"), "o");
    }

    #[test]
    fn noiseless_channel_is_identity() {
        let ch = Channel::digits(NoiseLevels::NOISELESS);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for p in PRONUNCIATIONS {
            let out = ch.synthesize(p, &mut rng).unwrap();
            assert_eq!(out, p.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn noisy_channel_never_empties() {
        let ch = Channel::digits(NoiseLevels {
            p_sub: 0.5,
            p_ins: 0.5,
            p_del: 0.9,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for i in 0..2000 {
            let out = ch.synthesize(PRONUNCIATIONS[i % 10], &mut rng).unwrap();
            assert!(!out.is_empty());
            assert!(out.iter().all(|s| ch.id(s).is_some()));
        }
    }

    #[test]
    fn one_can_gain_an_echo() {
        let ch = Channel::digits(NoiseLevels {
            p_sub: 0.0,
            p_ins: 0.5,
            p_del: 0.0,
        });
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let seen = (0..200).any(|_| ch.synthesize(&["i", "chi"], &mut rng).unwrap() == words("i chi i"));
        assert!(seen);
    }

    #[test]
    fn confusion_rows_sum_to_one() {
        let ch = Channel::digits(NoiseLevels::default());
        for h in 0..SYLLABLES.len() {
            let total: f64 = (0..SYLLABLES.len()).map(|o| ch.emit_prob(h, o)).sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn channel_validation() {
        assert!(Channel::new(NoiseLevels { p_sub: 1.0, ..Default::default() }, &SYLLABLES, &NEIGHBORHOODS).is_err());
        assert!(Channel::new(NoiseLevels::default(), &["ka"], &[]).is_err());
        assert!(Channel::new(NoiseLevels::NOISELESS, &["ka"], &[]).is_err(), "echo `a` missing");
        assert!(Channel::new(NoiseLevels::NOISELESS, &["ka", "a"], &[("ka", &["zz"])]).is_err());
    }

    #[test]
    fn empty_lm_is_uniform() {
        let inv: Vec<String> = SYLLABLES.iter().map(|s| s.to_string()).collect();
        let lm = BigramLm::uniform(&inv, 0.5).unwrap();
        for prev in [None, Some(0), Some(16)] {
            for next in 0..=17 {
                assert!((lm.prob(prev, next) - 1.0 / 18.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn add_delta_estimate() {
        let inv: Vec<String> = (0..14).map(|i| format!("s{i}")).collect();
        let mut inv = inv;
        inv[0] = "ze".into();
        inv[1] = "ro".into();
        inv[2] = "o".into();
        let mut lm = BigramLm::uniform(&inv, 1.0).unwrap();
        lm.rebuild(&["ze ro", "ze ro", "ze ro", "ze o"]).unwrap();
        // 14 syllables plus the word end give 15 outcome types
        assert!((lm.prob(Some(0), 1) - 4.0 / 19.0).abs() < 1e-15);
        let total: f64 = (0..=14).map(|o| lm.prob(Some(0), o)).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tiny_delta_learns_single_bigram() {
        let inv: Vec<String> = SYLLABLES.iter().map(|s| s.to_string()).collect();
        let mut lm = BigramLm::uniform(&inv, 1e-9).unwrap();
        lm.rebuild(&vec!["ze ro"; 50]).unwrap();
        assert!(lm.prob(Some(0), 1) > 1.0 - 1e-6);
        assert!(lm.rebuild(&["ze xx"]).is_err());
    }

    #[test]
    fn noiseless_uniform_recognizes_truth() {
        let asr = AsrState::new(&AsrConfig::default().with_noise(NoiseLevels::NOISELESS)).unwrap();
        for d in 0..10u8 {
            let truth = pronunciation(d).unwrap();
            let hyps = asr.recognize(&words(&truth), 10).unwrap();
            assert_eq!(hyps[0].0, truth);
            let one = asr.recognize(&words(&truth), 1).unwrap();
            assert_eq!(one, vec![(truth, 1.0)]);
        }
    }

    #[test]
    fn scores_sorted_and_normalized() {
        let asr = AsrState::new(&AsrConfig::default()).unwrap();
        let hyps = asr.recognize(&words("i chi i"), 10).unwrap();
        assert_eq!(hyps.len(), 10);
        assert!(hyps.windows(2).all(|w| w[0].1 >= w[1].1));
        let total: f64 = hyps.iter().map(|h| h.1).sum();
        assert!((total - 1.0).abs() < 1e-9);
        assert!(asr.recognize(&[], 10).is_err());
        assert!(asr.recognize(&words("ze"), 0).is_err());
    }

    #[test]
    fn peaked_lm_wins() {
        let mut asr = AsrState::new(&AsrConfig {
            lm_delta: 1e-6,
            ..Default::default()
        })
        .unwrap();
        asr.update_lm(&vec!["go"; 100]).unwrap();
        // "o" can be a misheard "go"
        assert_eq!(asr.recognize(&words("o"), 5).unwrap()[0].0, "go");
        assert!(asr.update_lm::<&str>(&[]).is_err());
    }
}
